//! Scalar expression language used for every piece of problem data.
//!
//! Variables follow one naming convention across the crate: `t` for time,
//! `x0..` for the current state, `xd0..` for the state delayed by `r`, `u0..`
//! for the current control, `ud0..` for the control delayed by `s`, and
//! `eta0..` for costate arguments of a feedback law.

mod ast;
mod parser;
mod program;
mod scalar;

use std::collections::BTreeMap;

use thiserror::Error;

pub use ast::{BinOp, Expr, Func};
pub use parser::MAX_DEPTH;
pub use program::Program;
pub use scalar::{Dual, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: expected {expected}, found {found}")]
    Syntax { offset: usize, expected: String, found: String },
    #[error("unknown function `{name}` at offset {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("expression nested deeper than {limit} levels at offset {offset}")]
    TooDeep { offset: usize, limit: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownFunction { offset, .. }
            | ParseError::TooDeep { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("non-finite value bound to `{0}`")]
    NonFiniteBinding(String),
    #[error("domain error in `{expr}`: {reason}")]
    Domain { expr: String, reason: &'static str },
}

/// Parse an expression.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    parser::Parser::new(text)?.parse_complete()
}

/// Variable bindings for evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Env {
    values: BTreeMap<String, f64>,
}

impl Env {
    pub fn new() -> Self {
        Env::default()
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.set(name, value);
        self
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.values.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.values.iter().map(|(k, v)| (k.as_str(), *v))
    }

    fn layout(&self) -> Result<(Vec<&str>, Vec<f64>), EvalError> {
        let mut names = Vec::with_capacity(self.values.len());
        let mut vals = Vec::with_capacity(self.values.len());
        for (k, v) in &self.values {
            if !v.is_finite() {
                return Err(EvalError::NonFiniteBinding(k.clone()));
            }
            names.push(k.as_str());
            vals.push(*v);
        }
        Ok((names, vals))
    }
}

impl<'a> FromIterator<(&'a str, f64)> for Env {
    fn from_iter<I: IntoIterator<Item = (&'a str, f64)>>(iter: I) -> Self {
        let mut env = Env::new();
        for (k, v) in iter {
            env.set(k, v);
        }
        env
    }
}

/// Evaluate `e` under `env`.
pub fn eval(e: &Expr, env: &Env) -> Result<f64, EvalError> {
    let (names, vals) = env.layout()?;
    Program::compile(e, &names)?.eval(&vals)
}

const SEED_WIDTH: usize = 8;

/// Value and exact first derivatives of `e` with respect to each of `wrt`.
pub fn eval_grad(e: &Expr, env: &Env, wrt: &[&str]) -> Result<(f64, Vec<f64>), EvalError> {
    let (names, vals) = env.layout()?;
    let program = Program::compile(e, &names)?;
    let mut seed_slots = Vec::with_capacity(wrt.len());
    for w in wrt {
        let slot = names
            .iter()
            .position(|n| n == w)
            .ok_or_else(|| EvalError::UnboundVariable(w.to_string()))?;
        seed_slots.push(slot);
    }
    if wrt.is_empty() {
        return Ok((program.eval(&vals)?, Vec::new()));
    }
    let mut grad = Vec::with_capacity(wrt.len());
    let mut value = 0.0;
    let mut slots: Vec<Dual<SEED_WIDTH>> = vals.iter().map(|v| Dual::constant(*v)).collect();
    for chunk in seed_slots.chunks(SEED_WIDTH) {
        for (s, v) in slots.iter_mut().zip(&vals) {
            *s = Dual::constant(*v);
        }
        for (dir, &slot) in chunk.iter().enumerate() {
            // a variable listed twice gets both seeds
            slots[slot].eps[dir] += 1.0;
        }
        let out = program.eval(&slots)?;
        value = out.re;
        grad.extend_from_slice(&out.eps[..chunk.len()]);
    }
    Ok((value, grad))
}

/// Does `name` match `[a-z]+[0-9]*`?
pub fn is_valid_variable_name(name: &str) -> bool {
    let letters = name.bytes().take_while(|b| b.is_ascii_lowercase()).count();
    letters > 0 && name.bytes().skip(letters).all(|b| b.is_ascii_digit())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, f64)]) -> Env {
        pairs.iter().copied().collect()
    }

    #[test]
    fn parses_running_cost() {
        let e = parse("x0^2 + u0^2").unwrap();
        let expected = Expr::add(
            Expr::pow(Expr::var("x0"), Expr::num(2.0)),
            Expr::pow(Expr::var("u0"), Expr::num(2.0)),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn parses_delayed_bilinear_dynamics() {
        assert_eq!(parse("xd0 * ud0").unwrap(), Expr::mul(Expr::var("xd0"), Expr::var("ud0")));
    }

    #[test]
    fn truncated_input_reports_offset() {
        let err = parse("x0 +").unwrap_err();
        assert_eq!(err.offset(), 4);
        assert!(matches!(err, ParseError::Syntax { .. }));
    }

    #[test]
    fn unknown_function() {
        let err = parse("1 + cosh(x0)").unwrap_err();
        assert_eq!(err, ParseError::UnknownFunction { name: "cosh".into(), offset: 4 });
    }

    #[test]
    fn precedence_and_associativity() {
        let v = |s: &str| eval(&parse(s).unwrap(), &Env::new()).unwrap();
        assert_eq!(v("-2^2"), -4.0);
        assert_eq!(v("2^3^2"), 512.0);
        assert_eq!(v("2^-1"), 0.5);
        assert_eq!(v("1 - 2 - 3"), -4.0);
        assert_eq!(v("8 / 4 / 2"), 1.0);
        assert_eq!(v("1 + 2 * 3"), 7.0);
        assert_eq!(v("1.5e-3 * 2"), 3e-3);
        assert_eq!(v("-(1 + 2) * 3"), -9.0);
    }

    #[test]
    fn rejects_bad_identifiers_and_literals() {
        assert!(parse("X0").is_err());
        assert!(parse("x0a").is_err());
        assert!(parse("x_0").is_err());
        assert!(parse("1.2.3").is_err());
        assert!(parse("1e").is_err());
        assert!(parse("exp").is_err());
        assert!(parse("()").is_err());
        assert!(parse("").is_err());
        assert!(parse("1e999").is_err());
    }

    #[test]
    fn eval_examples() {
        let e = parse("x0^2+u0^2").unwrap();
        assert_eq!(eval(&e, &env(&[("x0", 1.0), ("u0", 0.0)])).unwrap(), 1.0);
        let e = parse("xd0*ud0").unwrap();
        assert_eq!(eval(&e, &env(&[("xd0", 1.0), ("ud0", -0.5)])).unwrap(), -0.5);
    }

    #[test]
    fn eval_candidate_control_at_zero() {
        // tanh(-1) = (1 - e^2)/(e^2 + 1); value frozen from a 30-digit evaluation
        let e = parse("(exp(t)-exp(2-t))/(exp(2)+1)").unwrap();
        let v = eval(&e, &env(&[("t", 0.0)])).unwrap();
        assert!((v - (-0.761_594_155_955_764_9)).abs() < 1e-15);
    }

    #[test]
    fn unbound_variable() {
        let e = parse("x0 + y1").unwrap();
        assert_eq!(eval(&e, &env(&[("x0", 1.0)])), Err(EvalError::UnboundVariable("y1".into())));
    }

    #[test]
    fn domain_errors_name_the_subexpression() {
        let t0 = env(&[("t", -1.0)]);
        match eval(&parse("1 + log(t)").unwrap(), &t0) {
            Err(EvalError::Domain { expr, .. }) => assert_eq!(expr, "log(t)"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(eval(&parse("sqrt(t)").unwrap(), &t0), Err(EvalError::Domain { .. })));
        assert!(matches!(eval(&parse("1/(t+1)").unwrap(), &t0), Err(EvalError::Domain { .. })));
        assert!(matches!(eval(&parse("t^0.5").unwrap(), &t0), Err(EvalError::Domain { .. })));
        assert_eq!(eval(&parse("t^3").unwrap(), &t0), Ok(-1.0));
        assert!(matches!(eval(&parse("log(0)").unwrap(), &Env::new()), Err(EvalError::Domain { .. })));
    }

    #[test]
    fn non_finite_binding_rejected() {
        let e = parse("x0").unwrap();
        assert_eq!(eval(&e, &env(&[("x0", f64::NAN)])), Err(EvalError::NonFiniteBinding("x0".into())));
    }

    #[test]
    fn grad_examples() {
        let (v, g) = eval_grad(&parse("u0^2").unwrap(), &env(&[("u0", 3.0)]), &["u0"]).unwrap();
        assert_eq!((v, g), (9.0, vec![6.0]));
        let (v, g) =
            eval_grad(&parse("xd0*ud0").unwrap(), &env(&[("xd0", 2.0), ("ud0", 5.0)]), &["xd0", "ud0"]).unwrap();
        assert_eq!((v, g), (10.0, vec![5.0, 2.0]));
    }

    #[test]
    fn grad_with_many_variables_spans_seed_chunks() {
        let names: Vec<String> = (0..19).map(|i| format!("x{i}")).collect();
        let text = names.iter().enumerate().map(|(i, n)| format!("{}*{n}^2", i + 1)).collect::<Vec<_>>().join(" + ");
        let e = parse(&text).unwrap();
        let env: Env = names.iter().map(|n| (n.as_str(), 1.0)).collect();
        let wrt: Vec<&str> = names.iter().map(String::as_str).collect();
        let (_, g) = eval_grad(&e, &env, &wrt).unwrap();
        for (i, gi) in g.iter().enumerate() {
            assert_eq!(*gi, 2.0 * (i + 1) as f64);
        }
    }

    #[test]
    fn display_round_trip_simple() {
        for s in ["-x0^2", "(-x0)^2", "a - (b - c)", "a / (b * c)", "2^-x", "-(a + b)", "exp(-t) * -3"] {
            let e = parse(s).unwrap();
            assert_eq!(parse(&e.to_string()).unwrap(), e, "{s} -> {e}");
        }
    }

    #[test]
    fn time_shift_substitutes_t() {
        let e = parse("t^2 + x0").unwrap().shift_time(0.5);
        let v = eval(&e, &env(&[("t", 1.0), ("x0", 0.0)])).unwrap();
        assert_eq!(v, 2.25);
    }

    #[test]
    fn variable_names() {
        assert!(is_valid_variable_name("x0"));
        assert!(is_valid_variable_name("eta12"));
        assert!(!is_valid_variable_name("0x"));
        assert!(!is_valid_variable_name("x0a"));
        assert!(!is_valid_variable_name(""));
    }

    #[test]
    fn deep_nesting_is_rejected_not_crashing() {
        let deep = "(".repeat(40_000) + "1" + &")".repeat(40_000);
        assert!(matches!(parse(&deep), Err(ParseError::TooDeep { .. })));
        let long_sum = vec!["1"; 30_000].join("+");
        assert!(matches!(parse(&long_sum), Err(ParseError::TooDeep { .. })));
        let negs = "-".repeat(60_000) + "x";
        assert!(matches!(parse(&negs), Err(ParseError::TooDeep { .. })));
        let pows = vec!["x"; 20_000].join("^");
        assert!(matches!(parse(&pows), Err(ParseError::TooDeep { .. })));
    }
}
