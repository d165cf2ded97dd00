use super::problem::ProblemDef;
use crate::exprdsl::{EvalError, Program, Scalar};

/// `f0`, `f` and `g0` compiled against the fixed slot layout.
#[derive(Debug, Clone)]
pub struct Dynamics {
    pub n: usize,
    pub m: usize,
    f0: Program,
    f: Vec<Program>,
    g0: Program,
}

/// Argument buffer `[t, x.., xd.., u.., ud..]` for [`Dynamics`].
#[derive(Debug, Clone)]
pub struct Slots<T> {
    n: usize,
    m: usize,
    pub buf: Vec<T>,
}

impl<T: Scalar> Slots<T> {
    pub fn set_t(&mut self, t: f64) {
        self.buf[0] = T::constant(t);
    }
    pub fn x_mut(&mut self) -> &mut [T] {
        &mut self.buf[1..1 + self.n]
    }
    pub fn xd_mut(&mut self) -> &mut [T] {
        &mut self.buf[1 + self.n..1 + 2 * self.n]
    }
    pub fn u_mut(&mut self) -> &mut [T] {
        let o = 1 + 2 * self.n;
        &mut self.buf[o..o + self.m]
    }
    pub fn ud_mut(&mut self) -> &mut [T] {
        let o = 1 + 2 * self.n + self.m;
        &mut self.buf[o..o + self.m]
    }
    pub fn x(&self) -> &[T] {
        &self.buf[1..1 + self.n]
    }
    pub fn u(&self) -> &[T] {
        let o = 1 + 2 * self.n;
        &self.buf[o..o + self.m]
    }
    /// Copy the current state into the delayed-state slots (`r = 0`).
    pub fn xd_from_x(&mut self) {
        let n = self.n;
        self.buf.copy_within(1..1 + n, 1 + n);
    }
    /// Copy the current control into the delayed-control slots (`s = 0`).
    pub fn ud_from_u(&mut self) {
        let o = 1 + 2 * self.n;
        self.buf.copy_within(o..o + self.m, o + self.m);
    }
}

impl Dynamics {
    pub fn new(p: &ProblemDef) -> Result<Self, EvalError> {
        let layout = p.dynamics_layout();
        Ok(Dynamics {
            n: p.n,
            m: p.m,
            f0: Program::compile(&p.f0, &layout)?,
            f: p.f.iter().map(|e| Program::compile(e, &layout)).collect::<Result<_, _>>()?,
            g0: Program::compile(&p.g0, &p.state_layout())?,
        })
    }

    pub fn slots<T: Scalar>(&self) -> Slots<T> {
        Slots { n: self.n, m: self.m, buf: vec![T::zero(); 1 + 2 * self.n + 2 * self.m] }
    }

    pub fn rhs<T: Scalar>(&self, slots: &Slots<T>, out: &mut [T], stack: &mut Vec<T>) -> Result<(), EvalError> {
        for (o, p) in out.iter_mut().zip(&self.f) {
            *o = p.eval_with(&slots.buf, stack)?;
        }
        Ok(())
    }

    pub fn running_cost<T: Scalar>(&self, slots: &Slots<T>, stack: &mut Vec<T>) -> Result<T, EvalError> {
        self.f0.eval_with(&slots.buf, stack)
    }

    pub fn terminal_cost<T: Scalar>(&self, x: &[T]) -> Result<T, EvalError> {
        self.g0.eval(x)
    }
}
