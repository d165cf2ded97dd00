//! Checks of the delayed Hamilton–Jacobi sufficient condition for a
//! candidate pair `(x*, u*)` with value function `S`.
//!
//! With `H(t, x, y, u, v, η) = −f0 + η·f`, the checks are
//!
//! * the HJ residual `∂t S − f0 + ∂x S · f` along the candidate,
//! * the boundary match `S(b, x(b)) = −g0(x(b))` with `x(b) ∈ G`,
//! * two-term maximality: `u*(t)` maximises
//!   `H(t, ·, u, u*(t−s), σ∂x S(t)) + χ[a, b−s](t) H(t+s, ·, u*(t+s), u, σ∂x S(t+s))`,
//! * the cost identity `C[u*] = −S(a, x_a)`.
//!
//! `σ = ±1` is the costate sign convention; `Auto` tries both.

use std::fmt;

use thiserror::Error;

use crate::exprdsl::{Dual, EvalError, Expr, Program, Scalar};
use crate::model::{
    build_lattice, to_f64, Bound, ControlSignal, DelayLattice, Dynamics, History, ModelError, Piecewise, ProblemDef,
    Trajectory, TIME_EPS,
};
use crate::simsteps::{cost_delayed, integrate_dde, IntegratorConfig, SimError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("invalid candidate: {0}")]
    Candidate(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("evaluation failed at t = {time}: {source}")]
    Eval { time: f64, source: EvalError },
    #[error("control component {component} is unbounded; a search box is required")]
    NeedsBox { component: usize },
    #[error("maximised Hamiltonian keeps growing past the search box at t = {time}")]
    Unbounded { time: f64 },
}

fn eval_err(time: f64) -> impl FnOnce(EvalError) -> VerifyError {
    move |source| VerifyError::Eval { time, source }
}

/// Costate sign: `η = +∂x S` or `η = −∂x S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convention {
    Plus,
    Minus,
    Auto,
}

impl Convention {
    fn sign(self) -> f64 {
        match self {
            Convention::Minus => -1.0,
            _ => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Convention::Plus => "plus",
            Convention::Minus => "minus",
            Convention::Auto => "auto",
        }
    }
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Convention {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "plus" => Ok(Convention::Plus),
            "minus" => Ok(Convention::Minus),
            "auto" => Ok(Convention::Auto),
            other => Err(format!("unknown convention `{other}` (plus, minus, auto)")),
        }
    }
}

/// Candidate pair and value function.
#[derive(Debug, Clone)]
pub struct CandidateSolution {
    /// Closed-form state in `t`; simulated from `u_star` when absent.
    pub x_star: Option<Piecewise>,
    /// Open-loop control in `t` on `[a, b]`.
    pub u_star: Piecewise,
    /// `S` in `(t, x0, ..)`.
    pub value: Piecewise,
    /// Optional closed-form `∂t S`, same layout as `value`.
    pub value_dt: Option<Piecewise>,
    /// Optional closed-form `∂x S` (n components), same layout as `value`.
    pub value_dx: Option<Piecewise>,
    /// Optional feedback law in `(t, x.., xd.., eta..)`.
    pub feedback: Option<Vec<Expr>>,
    /// Default maximisation box for unbounded control components.
    pub search_box: Option<(f64, f64)>,
}

/// Value-function layout `t, x0, ..`.
pub fn value_layout(n: usize) -> Vec<String> {
    let mut out = vec!["t".to_string()];
    out.extend((0..n).map(|i| format!("x{i}")));
    out
}

/// Feedback layout `t, x.., xd.., eta..`.
pub fn feedback_layout(n: usize) -> Vec<String> {
    let mut out = vec!["t".to_string()];
    for prefix in ["x", "xd", "eta"] {
        out.extend((0..n).map(|i| format!("{prefix}{i}")));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub tol_hj: f64,
    pub tol_boundary: f64,
    pub tol_max: f64,
    pub tol_cost: f64,
    /// Largest tolerated jump of `S` across its breakpoints along the candidate.
    pub tol_continuity: f64,
    pub tol_feedback: f64,
    /// Sample points per lattice interval.
    pub density: usize,
    pub convention: Convention,
    pub search_box: Option<(f64, f64)>,
    pub substeps: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            tol_hj: 1e-6,
            tol_boundary: 1e-9,
            tol_max: 1e-6,
            tol_cost: 1e-3,
            tol_continuity: 1e-9,
            tol_feedback: 1e-6,
            density: 32,
            convention: Convention::Auto,
            search_box: None,
            substeps: 128,
        }
    }
}

/// Points of the maximisation search per control component.
pub const SEARCH_GRID: usize = 64;
const GOLDEN_ITERS: usize = 80;

#[derive(Debug, Clone, PartialEq)]
pub struct HjResidual {
    pub max: f64,
    pub worst_time: f64,
    pub nodes: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCheck {
    pub gap: f64,
    pub in_terminal_set: bool,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaximalityPoint {
    pub time: f64,
    pub gap: f64,
    pub argmax: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaximalitySweep {
    pub convention: Convention,
    pub worst_gap: f64,
    pub worst_time: f64,
    pub points: Vec<MaximalityPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostIdentity {
    pub cost: f64,
    pub minus_value: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub hj_max_residual: f64,
    pub hj_worst_time: f64,
    pub continuity_gap: f64,
    pub boundary_gap: f64,
    pub in_terminal_set: bool,
    pub maximality_worst_gap: f64,
    pub maximality_worst_time: f64,
    pub maximality_convention_used: Convention,
    /// Worst gap of the convention not chosen, when `Auto` ran both.
    pub maximality_other_gap: Option<f64>,
    pub control_violation: f64,
    pub cost: f64,
    pub minus_value: f64,
    pub cost_identity_gap: f64,
    pub feedback_gap: Option<f64>,
    pub pass_hj: bool,
    pub pass_boundary: bool,
    pub pass_maximality: bool,
    pub pass_cost: bool,
    pub pass_admissible: bool,
    pub pass_feedback: bool,
    pub pass: bool,
    pub options: VerifyOptions,
}

impl VerificationReport {
    /// `key=value` lines in a fixed order.
    pub fn key_values(&self) -> Vec<(String, String)> {
        let o = &self.options;
        let mut kv: Vec<(String, String)> = vec![
            ("hj_max_residual".into(), format!("{:.6e}", self.hj_max_residual)),
            ("hj_worst_time".into(), format!("{:.6}", self.hj_worst_time)),
            ("continuity_gap".into(), format!("{:.6e}", self.continuity_gap)),
            ("boundary_gap".into(), format!("{:.6e}", self.boundary_gap)),
            ("in_terminal_set".into(), self.in_terminal_set.to_string()),
            ("maximality_worst_gap".into(), format!("{:.6e}", self.maximality_worst_gap)),
            ("maximality_worst_time".into(), format!("{:.6}", self.maximality_worst_time)),
            ("maximality_convention_used".into(), self.maximality_convention_used.to_string()),
        ];
        if let Some(g) = self.maximality_other_gap {
            kv.push(("maximality_other_gap".into(), format!("{g:.6e}")));
        }
        kv.extend([
            ("control_violation".into(), format!("{:.6e}", self.control_violation)),
            ("cost".into(), format!("{:.12}", self.cost)),
            ("minus_value_at_start".into(), format!("{:.12}", self.minus_value)),
            ("cost_identity_gap".into(), format!("{:.6e}", self.cost_identity_gap)),
        ]);
        if let Some(g) = self.feedback_gap {
            kv.push(("feedback_gap".into(), format!("{g:.6e}")));
        }
        kv.extend([
            ("tol_hj".into(), format!("{:e}", o.tol_hj)),
            ("tol_boundary".into(), format!("{:e}", o.tol_boundary)),
            ("tol_max".into(), format!("{:e}", o.tol_max)),
            ("tol_cost".into(), format!("{:e}", o.tol_cost)),
            ("pass_hj".into(), self.pass_hj.to_string()),
            ("pass_boundary".into(), self.pass_boundary.to_string()),
            ("pass_maximality".into(), self.pass_maximality.to_string()),
            ("pass_cost".into(), self.pass_cost.to_string()),
            ("pass_admissible".into(), self.pass_admissible.to_string()),
            ("pass_feedback".into(), self.pass_feedback.to_string()),
            ("pass".into(), self.pass.to_string()),
        ]);
        kv
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
        let o = &self.options;
        writeln!(
            f,
            "{:<22} {:>14}  {:>10}  {}",
            "check", "value", "tolerance", "result"
        )?;
        writeln!(
            f,
            "{:<22} {:>14.6e}  {:>10.1e}  {}  (worst at t = {:.6})",
            "hj residual",
            self.hj_max_residual,
            o.tol_hj,
            verdict(self.pass_hj),
            self.hj_worst_time
        )?;
        writeln!(f, "{:<22} {:>14.6e}  {:>10.1e}", "S continuity", self.continuity_gap, o.tol_continuity)?;
        writeln!(
            f,
            "{:<22} {:>14.6e}  {:>10.1e}  {}  (x(b) in G: {})",
            "boundary",
            self.boundary_gap,
            o.tol_boundary,
            verdict(self.pass_boundary),
            if self.in_terminal_set { "yes" } else { "no" }
        )?;
        writeln!(
            f,
            "{:<22} {:>14.6e}  {:>10.1e}  {}  (convention {}, worst at t = {:.6})",
            "maximality",
            self.maximality_worst_gap,
            o.tol_max,
            verdict(self.pass_maximality),
            self.maximality_convention_used,
            self.maximality_worst_time
        )?;
        writeln!(f, "{:<22} {:>14.6e}  {:>10}  {}", "control bounds", self.control_violation, "0", verdict(self.pass_admissible))?;
        writeln!(
            f,
            "{:<22} {:>14.6e}  {:>10.1e}  {}  (C = {:.9}, -S(a, x_a) = {:.9})",
            "cost identity",
            self.cost_identity_gap,
            o.tol_cost,
            verdict(self.pass_cost),
            self.cost,
            self.minus_value
        )?;
        if let Some(g) = self.feedback_gap {
            writeln!(f, "{:<22} {:>14.6e}  {:>10.1e}  {}", "feedback", g, o.tol_feedback, verdict(self.pass_feedback))?;
        }
        write!(f, "overall: {}", verdict(self.pass))
    }
}

enum StateSource {
    Closed(Piecewise),
    Simulated(Trajectory),
}

/// Everything the checks evaluate, prepared once per candidate.
pub struct Verifier<'a> {
    problem: &'a ProblemDef,
    cand: &'a CandidateSolution,
    lattice: DelayLattice,
    dynamics: Dynamics,
    phi: History,
    control: ControlSignal,
    state: StateSource,
    feedback: Option<Vec<Program>>,
    a: f64,
    b: f64,
    r: f64,
    s: f64,
}

fn check_layout(name: &str, p: &Piecewise, layout: &[String], dim: usize) -> Result<(), VerifyError> {
    if p.layout() != layout {
        return Err(VerifyError::Candidate(format!("{name} must use variables {}", layout.join(", "))));
    }
    if p.dim() != dim {
        return Err(VerifyError::Candidate(format!("{name} has {} components, expected {dim}", p.dim())));
    }
    Ok(())
}

impl<'a> Verifier<'a> {
    pub fn new(problem: &'a ProblemDef, cand: &'a CandidateSolution) -> Result<Self, VerifyError> {
        let lattice = build_lattice(problem)?;
        let (n, m) = (problem.n, problem.m);
        let (a, b) = (problem.a, problem.b);
        let vl = value_layout(n);
        check_layout("S", &cand.value, &vl, 1)?;
        if let Some(p) = &cand.value_dt {
            check_layout("dSdt", p, &vl, 1)?;
        }
        if let Some(p) = &cand.value_dx {
            check_layout("dSdx", p, &vl, n)?;
        }
        check_layout("ustar", &cand.u_star, &["t".to_string()], m)?;
        if let Some(x) = &cand.x_star {
            check_layout("xstar", x, &["t".to_string()], n)?;
            if x.start() > a || x.end() < b {
                return Err(VerifyError::Candidate(format!("xstar must cover [{a}, {b}]")));
            }
        }
        if cand.value.start() > a || cand.value.end() < b {
            return Err(VerifyError::Candidate(format!("S pieces must cover [{a}, {b}]")));
        }
        if cand.u_star.start() > a || cand.u_star.end() < b {
            return Err(VerifyError::Candidate(format!("ustar pieces must cover [{a}, {b}]")));
        }
        let feedback = match &cand.feedback {
            None => None,
            Some(exprs) => {
                if exprs.len() != m {
                    return Err(VerifyError::Candidate(format!("feedback has {} components, expected {m}", exprs.len())));
                }
                let layout = feedback_layout(n);
                Some(
                    exprs
                        .iter()
                        .map(|e| Program::compile(e, &layout))
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|e| VerifyError::Candidate(format!("feedback: {e}")))?,
                )
            }
        };
        let dynamics = Dynamics::new(problem).map_err(eval_err(to_f64(a)))?;
        let phi = History::new(&problem.phi)?;
        let body = cand.u_star.extend_to(lattice.b_tilde)?;
        let control = ControlSignal::from_pieces(&problem.psi, to_f64(a), to_f64(problem.s), body)?;
        let state = match &cand.x_star {
            Some(x) => StateSource::Closed(x.clone()),
            None => {
                let cfg = IntegratorConfig::new(128)?;
                StateSource::Simulated(integrate_dde(problem, &lattice, &control, &cfg)?)
            }
        };
        Ok(Verifier {
            problem,
            cand,
            lattice,
            dynamics,
            phi,
            control,
            state,
            feedback,
            a: to_f64(a),
            b: to_f64(b),
            r: to_f64(problem.r),
            s: to_f64(problem.s),
        })
    }

    pub fn lattice(&self) -> &DelayLattice {
        &self.lattice
    }

    /// Candidate state: history before `a`, closed form or simulation after.
    pub fn state_at(&self, t: f64) -> Result<Vec<f64>, VerifyError> {
        if t < self.a - TIME_EPS {
            return self.phi.eval(t).map_err(eval_err(t));
        }
        match &self.state {
            StateSource::Closed(x) => Ok(x.eval(t, &[])?),
            StateSource::Simulated(tr) => Ok(tr.hermite_at(t)?),
        }
    }

    pub fn control_at(&self, t: f64) -> Result<Vec<f64>, VerifyError> {
        Ok(self.control.signal_at(t)?)
    }

    /// `(S, ∂t S, ∂x S)` at `(t, x)` using the piece that owns `t`.
    pub fn value_derivatives(&self, t: f64, x: &[f64]) -> Result<(f64, f64, Vec<f64>), VerifyError> {
        let s = &self.cand.value;
        let idx = s.locate(t).ok_or(ModelError::OutOfDomain { t, lo: to_f64(s.start()), hi: to_f64(s.end()) })?;
        let n = x.len();
        let mut args: Vec<f64> = Vec::with_capacity(n + 1);
        args.push(t);
        args.extend_from_slice(x);
        let mut grad = vec![0.0; n + 1];
        let mut value = 0.0;
        const W: usize = 8;
        let mut duals: Vec<Dual<W>> = args.iter().map(|v| Dual::constant(*v)).collect();
        for start in (0..=n).step_by(W) {
            for (k, d) in duals.iter_mut().enumerate() {
                let rel = k.wrapping_sub(start);
                *d = if rel < W { Dual::variable(args[k], rel) } else { Dual::constant(args[k]) };
            }
            let mut out = [Dual::<W>::zero()];
            s.eval_piece(idx, &duals, &mut out).map_err(eval_err(t))?;
            value = out[0].re;
            for k in start..(start + W).min(n + 1) {
                grad[k] = out[0].eps[k - start];
            }
        }
        let mut dt = grad[0];
        let mut dx = grad.split_off(1);
        if let Some(p) = &self.cand.value_dt {
            dt = p.eval(t, x)?[0];
        }
        if let Some(p) = &self.cand.value_dx {
            dx = p.eval(t, x)?;
        }
        Ok((value, dt, dx))
    }

    /// `f0` and `f` at the given arguments.
    fn evaluate(&self, t: f64, x: &[f64], xd: &[f64], u: &[f64], ud: &[f64]) -> Result<(f64, Vec<f64>), VerifyError> {
        let mut slots = self.dynamics.slots::<f64>();
        slots.set_t(t);
        slots.x_mut().copy_from_slice(x);
        slots.xd_mut().copy_from_slice(xd);
        slots.u_mut().copy_from_slice(u);
        slots.ud_mut().copy_from_slice(ud);
        let mut stack = Vec::new();
        let f0 = self.dynamics.running_cost(&slots, &mut stack).map_err(eval_err(t))?;
        let mut f = vec![0.0; self.problem.n];
        self.dynamics.rhs(&slots, &mut f, &mut stack).map_err(eval_err(t))?;
        Ok((f0, f))
    }

    fn hamiltonian(&self, t: f64, x: &[f64], xd: &[f64], u: &[f64], ud: &[f64], eta: &[f64]) -> Result<f64, VerifyError> {
        let (f0, f) = self.evaluate(t, x, xd, u, ud)?;
        Ok(-f0 + eta.iter().zip(&f).map(|(e, v)| e * v).sum::<f64>())
    }

    fn near_value_breakpoint(&self, t: f64) -> bool {
        self.cand.value.breakpoints().iter().any(|bp| (to_f64(*bp) - t).abs() <= TIME_EPS)
    }

    /// Midpoints of `density` sub-cells of every lattice interval inside `[a, b]`.
    pub fn residual_nodes(&self, density: usize) -> Vec<f64> {
        let h = self.lattice.h_f64();
        let mut out = Vec::new();
        for i in 0..self.lattice.n_blocks {
            for j in 0..density {
                let t = self.a + h * (i as f64 + (j as f64 + 0.5) / density as f64);
                if t <= self.b && !self.near_value_breakpoint(t) {
                    out.push(t);
                }
            }
        }
        out
    }

    /// HJ residual at `t` along the candidate.
    pub fn residual_at(&self, t: f64) -> Result<f64, VerifyError> {
        let x = self.state_at(t)?;
        let xd = self.state_at(t - self.r)?;
        let u = self.control_at(t)?;
        let ud = self.control_at(t - self.s)?;
        let (f0, f) = self.evaluate(t, &x, &xd, &u, &ud)?;
        let (_, st, sx) = self.value_derivatives(t, &x)?;
        Ok(st - f0 + sx.iter().zip(&f).map(|(p, q)| p * q).sum::<f64>())
    }

    pub fn hj_residual(&self, density: usize) -> Result<HjResidual, VerifyError> {
        let mut nodes = Vec::new();
        let (mut max, mut worst_time) = (0.0f64, self.a);
        for t in self.residual_nodes(density) {
            let res = self.residual_at(t)?;
            if !(res.abs() <= max) {
                max = if res.is_nan() { f64::INFINITY } else { res.abs() };
                worst_time = t;
            }
            nodes.push((t, res));
        }
        Ok(HjResidual { max, worst_time, nodes })
    }

    /// Largest jump of `S` across its breakpoints inside `[a, b]`, along the candidate.
    pub fn continuity_gap(&self) -> Result<f64, VerifyError> {
        let s = &self.cand.value;
        let mut worst = 0.0f64;
        for (k, bp) in s.breakpoints().into_iter().enumerate() {
            let t = to_f64(bp);
            if t <= self.a || t >= self.b {
                continue;
            }
            let x = self.state_at(t)?;
            let mut args = vec![t];
            args.extend_from_slice(&x);
            let mut left = [0.0];
            let mut right = [0.0];
            s.eval_piece(k, &args, &mut left).map_err(eval_err(t))?;
            s.eval_piece(k + 1, &args, &mut right).map_err(eval_err(t))?;
            worst = worst.max((left[0] - right[0]).abs());
        }
        Ok(worst)
    }

    pub fn boundary_gap(&self) -> Result<BoundaryCheck, VerifyError> {
        let xb = self.state_at(self.b)?;
        let (sb, _, _) = self.value_derivatives(self.b, &xb)?;
        let g0 = self.dynamics.terminal_cost(&xb).map_err(eval_err(self.b))?;
        let in_terminal_set = xb.iter().zip(&self.problem.terminal).all(|(v, g)| g.contains(*v));
        Ok(BoundaryCheck { gap: (sb + g0).abs(), in_terminal_set, state: xb })
    }

    fn search_bounds(&self, search_box: Option<(f64, f64)>) -> Result<Vec<(f64, f64, bool)>, VerifyError> {
        let default_box = search_box.or(self.cand.search_box);
        self.problem
            .omega
            .iter()
            .enumerate()
            .map(|(j, b)| match *b {
                Bound::Interval { lo, hi } => Ok((lo, hi, false)),
                Bound::Free => match default_box {
                    Some((lo, hi)) if lo < hi => Ok((lo, hi, true)),
                    Some(_) => Err(VerifyError::Candidate("empty search box".into())),
                    None => Err(VerifyError::NeedsBox { component: j }),
                },
            })
            .collect()
    }

    /// Maximality gap at `t` for sign `sigma`; returns the gap and argmax.
    pub fn maximality_at(&self, t: f64, convention: Convention, search_box: Option<(f64, f64)>) -> Result<MaximalityPoint, VerifyError> {
        let sigma = convention.sign();
        let bounds = self.search_bounds(search_box)?;
        let x = self.state_at(t)?;
        let xd = self.state_at(t - self.r)?;
        let u_star = self.control_at(t)?;
        let ud_star = self.control_at(t - self.s)?;
        let (_, _, sx) = self.value_derivatives(t, &x)?;
        let eta: Vec<f64> = sx.iter().map(|v| sigma * v).collect();
        let zero_s = self.s == 0.0;
        let future = if !zero_s && t <= self.b - self.s + TIME_EPS {
            let ts = t + self.s;
            let xs = self.state_at(ts)?;
            let xsd = self.state_at(ts - self.r)?;
            let us = self.control_at(ts)?;
            let (_, _, sxs) = self.value_derivatives(ts, &xs)?;
            Some((ts, xs, xsd, us, sxs.iter().map(|v| sigma * v).collect::<Vec<f64>>()))
        } else {
            None
        };
        let objective = |u: &[f64]| -> Result<f64, VerifyError> {
            let ud: &[f64] = if zero_s { u } else { &ud_star };
            let mut m = self.hamiltonian(t, &x, &xd, u, ud, &eta)?;
            if let Some((ts, xs, xsd, us, etas)) = &future {
                m += self.hamiltonian(*ts, xs, xsd, us, u, etas)?;
            }
            Ok(m)
        };
        let at_star = objective(&u_star)?;
        let mut best: Vec<f64> = u_star.iter().zip(&bounds).map(|(v, (lo, hi, _))| v.clamp(*lo, *hi)).collect();
        let mut best_val = objective(&best)?;
        let sweeps = if bounds.len() == 1 { 1 } else { 4 };
        let mut trial = best.clone();
        for _ in 0..sweeps {
            for (d, &(lo, hi, _)) in bounds.iter().enumerate() {
                trial.copy_from_slice(&best);
                let spacing = (hi - lo) / (SEARCH_GRID - 1) as f64;
                let mut grid_best = (best[d], best_val);
                for g in 0..SEARCH_GRID {
                    trial[d] = lo + spacing * g as f64;
                    let v = objective(&trial)?;
                    if v > grid_best.1 {
                        grid_best = (trial[d], v);
                    }
                }
                let (mut left, mut right) = ((grid_best.0 - spacing).max(lo), (grid_best.0 + spacing).min(hi));
                let ratio = (5f64.sqrt() - 1.0) / 2.0;
                let mut c = right - ratio * (right - left);
                let mut e = left + ratio * (right - left);
                trial[d] = c;
                let mut fc = objective(&trial)?;
                trial[d] = e;
                let mut fe = objective(&trial)?;
                for _ in 0..GOLDEN_ITERS {
                    if fc >= fe {
                        right = e;
                        e = c;
                        fe = fc;
                        c = right - ratio * (right - left);
                        trial[d] = c;
                        fc = objective(&trial)?;
                    } else {
                        left = c;
                        c = e;
                        fc = fe;
                        e = left + ratio * (right - left);
                        trial[d] = e;
                        fe = objective(&trial)?;
                    }
                }
                for (cand_u, cand_v) in [(c, fc), (e, fe), grid_best] {
                    if cand_v > best_val {
                        best[d] = cand_u;
                        best_val = cand_v;
                    }
                }
            }
        }
        // growth past the user box means the box is hiding a larger maximum
        for (d, &(lo, hi, free)) in bounds.iter().enumerate() {
            if !free {
                continue;
            }
            let width = hi - lo;
            let spacing = width / (SEARCH_GRID - 1) as f64;
            for (edge, beyond) in [(lo, lo - width), (hi, hi + width)] {
                if (best[d] - edge).abs() <= spacing {
                    trial.copy_from_slice(&best);
                    trial[d] = beyond;
                    let v = objective(&trial)?;
                    if v > best_val + 1e-9 * (1.0 + best_val.abs()) {
                        return Err(VerifyError::Unbounded { time: t });
                    }
                }
            }
        }
        if at_star >= best_val {
            return Ok(MaximalityPoint { time: t, gap: 0.0, argmax: u_star });
        }
        Ok(MaximalityPoint { time: t, gap: best_val - at_star, argmax: best })
    }

    /// Sample times for maximality: `density + 1` points per lattice interval,
    /// plus `a` and `b − s`; interior breakpoints of `S` are skipped except
    /// for those two.
    pub fn maximality_times(&self, density: usize) -> Vec<f64> {
        let h = self.lattice.h_f64();
        let mut ts = vec![self.a];
        if self.s > 0.0 && self.b - self.s >= self.a {
            ts.push(self.b - self.s);
        }
        for i in 0..self.lattice.n_blocks {
            for j in 0..=density {
                let t = self.a + h * (i as f64 + j as f64 / density as f64);
                if t <= self.b + TIME_EPS && !self.near_value_breakpoint(t) {
                    ts.push(t.min(self.b));
                }
            }
        }
        ts.sort_by(|p, q| p.total_cmp(q));
        ts.dedup_by(|p, q| (*p - *q).abs() <= TIME_EPS);
        ts
    }

    pub fn maximality_sweep(&self, convention: Convention, density: usize, search_box: Option<(f64, f64)>) -> Result<MaximalitySweep, VerifyError> {
        let mut points = Vec::new();
        let (mut worst_gap, mut worst_time) = (0.0f64, self.a);
        for t in self.maximality_times(density) {
            let pt = self.maximality_at(t, convention, search_box)?;
            if pt.gap > worst_gap {
                worst_gap = pt.gap;
                worst_time = t;
            }
            points.push(pt);
        }
        Ok(MaximalitySweep { convention, worst_gap, worst_time, points })
    }

    pub fn cost_identity_gap(&self, substeps: usize) -> Result<CostIdentity, VerifyError> {
        let cfg = IntegratorConfig::new(substeps)?;
        let traj = integrate_dde(self.problem, &self.lattice, &self.control, &cfg)?;
        let cost = cost_delayed(self.problem, &self.lattice, &traj, &self.control, &cfg)?;
        let xa = self.problem.initial_state().map_err(eval_err(self.a))?;
        let (sa, _, _) = self.value_derivatives(self.a, &xa)?;
        Ok(CostIdentity { cost, minus_value: -sa, gap: (cost + sa).abs() })
    }

    /// Largest `|u_feedback(t, x, xd, σ∂x S) − u*(t)|` over the residual nodes.
    pub fn feedback_gap(&self, convention: Convention, density: usize) -> Result<Option<f64>, VerifyError> {
        let Some(programs) = &self.feedback else { return Ok(None) };
        let sigma = convention.sign();
        let mut worst = 0.0f64;
        for t in self.residual_nodes(density) {
            let x = self.state_at(t)?;
            let xd = self.state_at(t - self.r)?;
            let (_, _, sx) = self.value_derivatives(t, &x)?;
            let mut args = vec![t];
            args.extend_from_slice(&x);
            args.extend_from_slice(&xd);
            args.extend(sx.iter().map(|v| sigma * v));
            let u = self.control_at(t)?;
            for (p, us) in programs.iter().zip(&u) {
                let v = p.eval(&args).map_err(eval_err(t))?;
                worst = worst.max((v - us).abs());
            }
        }
        Ok(Some(worst))
    }

    /// Largest violation of the control bounds by `u*` on the maximality grid.
    pub fn control_violation(&self, density: usize) -> Result<f64, VerifyError> {
        Ok(self.control.bound_violation(&self.problem.omega, &self.maximality_times(density))?)
    }

    pub fn verify_all(&self, opts: &VerifyOptions) -> Result<VerificationReport, VerifyError> {
        let hj = self.hj_residual(opts.density)?;
        let continuity_gap = self.continuity_gap()?;
        let boundary = self.boundary_gap()?;
        let (sweep, other) = match opts.convention {
            Convention::Auto => {
                let minus = self.maximality_sweep(Convention::Minus, opts.density, opts.search_box)?;
                let plus = self.maximality_sweep(Convention::Plus, opts.density, opts.search_box)?;
                if plus.worst_gap < minus.worst_gap {
                    let g = minus.worst_gap;
                    (plus, Some(g))
                } else {
                    let g = plus.worst_gap;
                    (minus, Some(g))
                }
            }
            c => (self.maximality_sweep(c, opts.density, opts.search_box)?, None),
        };
        let cost = self.cost_identity_gap(opts.substeps)?;
        let feedback_gap = self.feedback_gap(sweep.convention, opts.density)?;
        let control_violation = self.control_violation(opts.density)?;
        let pass_hj = hj.max <= opts.tol_hj && continuity_gap <= opts.tol_continuity;
        let pass_boundary = boundary.gap <= opts.tol_boundary && boundary.in_terminal_set;
        let pass_maximality = sweep.worst_gap <= opts.tol_max;
        let pass_cost = cost.gap <= opts.tol_cost;
        let pass_admissible = control_violation == 0.0;
        let pass_feedback = feedback_gap.is_none_or(|g| g <= opts.tol_feedback);
        Ok(VerificationReport {
            hj_max_residual: hj.max,
            hj_worst_time: hj.worst_time,
            continuity_gap,
            boundary_gap: boundary.gap,
            in_terminal_set: boundary.in_terminal_set,
            maximality_worst_gap: sweep.worst_gap,
            maximality_worst_time: sweep.worst_time,
            maximality_convention_used: sweep.convention,
            maximality_other_gap: other,
            control_violation,
            cost: cost.cost,
            minus_value: cost.minus_value,
            cost_identity_gap: cost.gap,
            feedback_gap,
            pass_hj,
            pass_boundary,
            pass_maximality,
            pass_cost,
            pass_admissible,
            pass_feedback,
            pass: pass_hj && pass_boundary && pass_maximality && pass_cost && pass_admissible && pass_feedback,
            options: *opts,
        })
    }
}

/// HJ residual of `cand` for `problem`.
pub fn hj_residual(problem: &ProblemDef, cand: &CandidateSolution, density: usize) -> Result<HjResidual, VerifyError> {
    Verifier::new(problem, cand)?.hj_residual(density)
}

pub fn boundary_gap(problem: &ProblemDef, cand: &CandidateSolution) -> Result<BoundaryCheck, VerifyError> {
    Verifier::new(problem, cand)?.boundary_gap()
}

pub fn maximality_gap(
    problem: &ProblemDef,
    cand: &CandidateSolution,
    t: f64,
    convention: Convention,
    search_box: Option<(f64, f64)>,
) -> Result<MaximalityPoint, VerifyError> {
    let conv = if convention == Convention::Auto { Convention::Minus } else { convention };
    Verifier::new(problem, cand)?.maximality_at(t, conv, search_box)
}

pub fn cost_identity_gap(problem: &ProblemDef, cand: &CandidateSolution, substeps: usize) -> Result<CostIdentity, VerifyError> {
    Verifier::new(problem, cand)?.cost_identity_gap(substeps)
}

pub fn verify_all(problem: &ProblemDef, cand: &CandidateSolution, opts: &VerifyOptions) -> Result<VerificationReport, VerifyError> {
    Verifier::new(problem, cand)?.verify_all(opts)
}
