use std::fmt;

use num_traits::Zero;

use super::rational::{to_f64, Rational};
use crate::exprdsl::{eval, Env, Expr};

/// Closed interval bound for one control or terminal-state component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    Free,
    Interval { lo: f64, hi: f64 },
}

impl Bound {
    pub fn contains(&self, v: f64) -> bool {
        match *self {
            Bound::Free => true,
            Bound::Interval { lo, hi } => v >= lo && v <= hi,
        }
    }

    pub fn project(&self, v: f64) -> f64 {
        match *self {
            Bound::Free => v,
            Bound::Interval { lo, hi } => v.clamp(lo, hi),
        }
    }

    /// Distance from `v` to the interval.
    pub fn distance(&self, v: f64) -> f64 {
        match *self {
            Bound::Free => 0.0,
            Bound::Interval { lo, hi } => {
                if v < lo {
                    lo - v
                } else if v > hi {
                    v - hi
                } else {
                    0.0
                }
            }
        }
    }
}

/// A delayed optimal control problem.
///
/// Minimise `g0(x(b)) + ∫_a^b f0(t, x(t), x(t-r), u(t), u(t-s)) dt` subject to
/// `x'(t) = f(t, x(t), x(t-r), u(t), u(t-s))`, `x = phi` on `[a-r-s, a]`,
/// `u = psi` on `[a-s, a)`, `u(t) ∈ omega`, `x(b) ∈ terminal`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemDef {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub a: Rational,
    pub b: Rational,
    pub r: Rational,
    pub s: Rational,
    pub f0: Expr,
    pub f: Vec<Expr>,
    pub g0: Expr,
    pub phi: Vec<Expr>,
    pub psi: Vec<Expr>,
    pub omega: Vec<Bound>,
    pub terminal: Vec<Bound>,
    /// Allows `r = s = 0`, turning the problem into an ordinary one.
    pub degenerate: bool,
}

impl ProblemDef {
    pub fn a_f64(&self) -> f64 {
        to_f64(self.a)
    }

    pub fn b_f64(&self) -> f64 {
        to_f64(self.b)
    }

    /// Slot layout for `f0` and `f`: `t, x.., xd.., u.., ud..`.
    pub fn dynamics_layout(&self) -> Vec<String> {
        let mut out = vec!["t".to_string()];
        out.extend((0..self.n).map(|i| format!("x{i}")));
        out.extend((0..self.n).map(|i| format!("xd{i}")));
        out.extend((0..self.m).map(|j| format!("u{j}")));
        out.extend((0..self.m).map(|j| format!("ud{j}")));
        out
    }

    /// Slot layout for `g0` and value functions: `x0..` (with `t` prepended for S).
    pub fn state_layout(&self) -> Vec<String> {
        (0..self.n).map(|i| format!("x{i}")).collect()
    }

    /// Initial state `x_a = phi(a)`.
    pub fn initial_state(&self) -> Result<Vec<f64>, crate::exprdsl::EvalError> {
        let env = Env::new().with("t", self.a_f64());
        self.phi.iter().map(|e| eval(e, &env)).collect()
    }
}

/// A human-readable validation finding tied to a problem field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Clone, Copy)]
enum Scope {
    Dynamics,
    Terminal,
    History,
}

fn permitted(name: &str, scope: Scope, n: usize, m: usize) -> bool {
    let indexed = |prefix: &str, bound: usize| {
        name.strip_prefix(prefix)
            .filter(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|rest| rest.parse::<usize>().ok())
            .is_some_and(|i| i < bound)
    };
    match scope {
        Scope::Dynamics => {
            name == "t" || indexed("x", n) || indexed("xd", n) || indexed("u", m) || indexed("ud", m)
        }
        Scope::Terminal => indexed("x", n),
        Scope::History => name == "t",
    }
}

fn check_vars(out: &mut Vec<Diagnostic>, field: &str, e: &Expr, scope: Scope, n: usize, m: usize) {
    for v in e.variables() {
        if !permitted(&v, scope, n, m) {
            out.push(Diagnostic::new(field, format!("variable {v} not permitted")));
        }
    }
}

fn check_bound(out: &mut Vec<Diagnostic>, field: String, b: &Bound) {
    if let Bound::Interval { lo, hi } = *b {
        if !(lo.is_finite() && hi.is_finite()) {
            out.push(Diagnostic::new(field, "bounds must be finite"));
        } else if lo > hi {
            out.push(Diagnostic::new(field, format!("empty interval [{lo}, {hi}]")));
        }
    }
}

/// Check every structural invariant of `p`; an empty list means admissible.
///
/// Field names in diagnostics follow the problem-file keys (`f1` is the first
/// dynamics component).
pub fn validate_problem(p: &ProblemDef) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if p.n == 0 {
        out.push(Diagnostic::new("n", "state dimension must be positive"));
    }
    if p.m == 0 {
        out.push(Diagnostic::new("m", "control dimension must be positive"));
    }
    if p.b <= p.a {
        out.push(Diagnostic::new("b", format!("horizon end {} must exceed start {}", p.b, p.a)));
    }
    if p.r < Rational::zero() {
        out.push(Diagnostic::new("r", "state delay must be nonnegative"));
    }
    if p.s < Rational::zero() {
        out.push(Diagnostic::new("s", "control delay must be nonnegative"));
    }
    let both_zero = p.r.is_zero() && p.s.is_zero();
    if both_zero && !p.degenerate {
        out.push(Diagnostic::new(
            "r, s",
            "commensurability assumption requires (r, s) != (0, 0); enable degenerate mode for a problem without delays",
        ));
    }
    if p.degenerate && !both_zero {
        out.push(Diagnostic::new("degenerate", "degenerate mode requires r = s = 0"));
    }
    let dims = [("f", p.f.len(), p.n), ("phi", p.phi.len(), p.n), ("psi", p.psi.len(), p.m)];
    for (field, got, want) in dims {
        if got != want {
            out.push(Diagnostic::new(field, format!("expected {want} components, found {got}")));
        }
    }
    if p.omega.len() != p.m {
        out.push(Diagnostic::new("omega", format!("expected {} bounds, found {}", p.m, p.omega.len())));
    }
    if p.terminal.len() != p.n {
        out.push(Diagnostic::new("terminal", format!("expected {} bounds, found {}", p.n, p.terminal.len())));
    }

    check_vars(&mut out, "f0", &p.f0, Scope::Dynamics, p.n, p.m);
    for (i, e) in p.f.iter().enumerate() {
        check_vars(&mut out, &format!("f{}", i + 1), e, Scope::Dynamics, p.n, p.m);
    }
    check_vars(&mut out, "g0", &p.g0, Scope::Terminal, p.n, p.m);
    for (i, e) in p.phi.iter().enumerate() {
        check_vars(&mut out, &format!("phi{}", i + 1), e, Scope::History, p.n, p.m);
    }
    for (j, e) in p.psi.iter().enumerate() {
        check_vars(&mut out, &format!("psi{}", j + 1), e, Scope::History, p.n, p.m);
    }
    for (j, b) in p.omega.iter().enumerate() {
        check_bound(&mut out, format!("omega.u{}", j + 1), b);
    }
    for (i, b) in p.terminal.iter().enumerate() {
        check_bound(&mut out, format!("terminal.x{}", i + 1), b);
    }

    let env = Env::new().with("t", p.a_f64());
    for (i, e) in p.phi.iter().enumerate() {
        if e.variables().iter().any(|v| v != "t") {
            continue;
        }
        match eval(e, &env) {
            Ok(v) if v.is_finite() => {}
            Ok(v) => out.push(Diagnostic::new(format!("phi{}", i + 1), format!("initial state {v} is not finite"))),
            Err(err) => out.push(Diagnostic::new(format!("phi{}", i + 1), format!("initial state: {err}"))),
        }
    }
    out
}
