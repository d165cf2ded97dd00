use super::ast::{BinOp, Expr, Func};
use super::scalar::Scalar;
use super::EvalError;

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Load(usize),
    Neg,
    Add,
    Sub,
    Mul,
    Square,
    Div(usize),
    Pow(usize),
    Call(Func, usize),
}

/// An expression compiled against a fixed slot layout into postfix form.
///
/// Evaluation is iterative, allocation-free given a scratch stack, and generic
/// over [`Scalar`], so the same program runs on `f64` and on dual numbers.
#[derive(Debug, Clone)]
pub struct Program {
    ops: Vec<Op>,
    // rendered subexpressions for ops that can raise a domain error
    sites: Vec<String>,
    max_stack: usize,
}

impl Program {
    /// Compile `expr`; every variable must appear in `layout`.
    pub fn compile<S: AsRef<str>>(expr: &Expr, layout: &[S]) -> Result<Program, EvalError> {
        let mut p = Program { ops: Vec::new(), sites: Vec::new(), max_stack: 0 };
        let mut depth = 0usize;
        p.emit(expr, layout, &mut depth)?;
        Ok(p)
    }

    fn push(&mut self, op: Op, depth: &mut usize, delta: isize) {
        self.ops.push(op);
        *depth = (*depth as isize + delta) as usize;
        self.max_stack = self.max_stack.max(*depth);
    }

    fn site(&mut self, e: &Expr) -> usize {
        self.sites.push(e.to_string());
        self.sites.len() - 1
    }

    fn emit<S: AsRef<str>>(&mut self, e: &Expr, layout: &[S], depth: &mut usize) -> Result<(), EvalError> {
        match e {
            Expr::Num(v) => self.push(Op::Const(*v), depth, 1),
            Expr::Var(name) => {
                let slot = layout
                    .iter()
                    .position(|s| s.as_ref() == name)
                    .ok_or_else(|| EvalError::UnboundVariable(name.clone()))?;
                self.push(Op::Load(slot), depth, 1);
            }
            Expr::Neg(inner) => {
                self.emit(inner, layout, depth)?;
                self.push(Op::Neg, depth, 0);
            }
            Expr::Call(func, arg) => {
                self.emit(arg, layout, depth)?;
                let site = self.site(e);
                self.push(Op::Call(*func, site), depth, 0);
            }
            Expr::Binary(BinOp::Pow, base, exponent) if **exponent == Expr::Num(2.0) => {
                self.emit(base, layout, depth)?;
                self.push(Op::Square, depth, 0);
            }
            Expr::Binary(op, l, r) => {
                self.emit(l, layout, depth)?;
                self.emit(r, layout, depth)?;
                let op = match op {
                    BinOp::Add => Op::Add,
                    BinOp::Sub => Op::Sub,
                    BinOp::Mul => Op::Mul,
                    BinOp::Div => Op::Div(self.site(e)),
                    BinOp::Pow => Op::Pow(self.site(e)),
                };
                self.push(op, depth, -1);
            }
        }
        Ok(())
    }

    /// True when the program is a single constant.
    pub fn as_constant(&self) -> Option<f64> {
        match self.ops.as_slice() {
            [Op::Const(v)] => Some(*v),
            _ => None,
        }
    }

    pub fn eval<T: Scalar>(&self, slots: &[T]) -> Result<T, EvalError> {
        let mut stack = Vec::with_capacity(self.max_stack);
        self.eval_with(slots, &mut stack)
    }

    pub fn eval_with<T: Scalar>(&self, slots: &[T], stack: &mut Vec<T>) -> Result<T, EvalError> {
        stack.clear();
        for op in &self.ops {
            match *op {
                Op::Const(v) => stack.push(T::constant(v)),
                Op::Load(i) => stack.push(slots[i]),
                Op::Neg => {
                    let a = stack.pop().expect("stack");
                    stack.push(-a);
                }
                Op::Square => {
                    let a = stack.pop().expect("stack");
                    stack.push(a * a);
                }
                Op::Call(func, site) => {
                    let a = stack.pop().expect("stack");
                    stack.push(self.call(func, a, site)?);
                }
                Op::Add | Op::Sub | Op::Mul | Op::Div(_) | Op::Pow(_) => {
                    let b = stack.pop().expect("stack");
                    let a = stack.pop().expect("stack");
                    let v = match *op {
                        Op::Add => a + b,
                        Op::Sub => a - b,
                        Op::Mul => a * b,
                        Op::Div(site) => {
                            if b.re() == 0.0 {
                                return Err(self.domain(site, "division by zero"));
                            }
                            a / b
                        }
                        Op::Pow(site) => {
                            let (x, y) = (a.re(), b.re());
                            if x < 0.0 && y.fract() != 0.0 {
                                return Err(self.domain(site, "negative base with non-integer exponent"));
                            }
                            if x == 0.0 && y < 0.0 {
                                return Err(self.domain(site, "division by zero"));
                            }
                            a.pow(b)
                        }
                        _ => unreachable!(),
                    };
                    stack.push(v);
                }
            }
        }
        Ok(stack.pop().expect("program leaves one value"))
    }

    fn call<T: Scalar>(&self, func: Func, a: T, site: usize) -> Result<T, EvalError> {
        Ok(match func {
            Func::Exp => a.exp(),
            Func::Log => {
                if a.re() <= 0.0 {
                    return Err(self.domain(site, "logarithm of a non-positive value"));
                }
                a.ln()
            }
            Func::Sqrt => {
                if a.re() < 0.0 {
                    return Err(self.domain(site, "square root of a negative value"));
                }
                a.sqrt()
            }
            Func::Sin => a.sin(),
            Func::Cos => a.cos(),
            Func::Tanh => a.tanh(),
        })
    }

    fn domain(&self, site: usize, reason: &'static str) -> EvalError {
        EvalError::Domain { expr: self.sites[site].clone(), reason }
    }
}
