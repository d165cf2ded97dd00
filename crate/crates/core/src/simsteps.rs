//! Fixed-step integration of the delayed system (method of steps) and of the
//! stacked system (block by block), with the matching cost functionals.
//!
//! Both integrators use classical RK4 with step `h / substeps_per_h`. Delayed
//! states inside a step come from the cubic Hermite reconstruction of an
//! already completed step, so the lag never reads the step being built.
//! Costs use composite Simpson on the same grid, stopping at `b`.

use std::borrow::Cow;

use num_traits::Zero;
use thiserror::Error;

use crate::exprdsl::{EvalError, Scalar};
use crate::lift::{LiftError, LiftedProblem, Source, StackedControl, StackedPath};
use crate::model::{
    to_f64, ControlBody, ControlSignal, DelayLattice, Dynamics, History, ModelError, Path, ProblemDef, Rational,
    Slots, Trajectory,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid integrator configuration: {0}")]
    Config(String),
    #[error("state is not finite at t = {time}")]
    BlowUp { time: f64 },
    #[error("evaluation failed at t = {time}: {source}")]
    Eval { time: f64, source: EvalError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lift(#[from] LiftError),
}

/// RK4 steps per lattice interval; even, so Simpson pairs tile each interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntegratorConfig {
    pub substeps_per_h: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { substeps_per_h: 128 }
    }
}

impl IntegratorConfig {
    pub fn new(substeps_per_h: usize) -> Result<Self, SimError> {
        let cfg = IntegratorConfig { substeps_per_h };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.substeps_per_h < 2 || self.substeps_per_h % 2 != 0 {
            return Err(SimError::Config(format!(
                "substeps_per_h must be even and at least 2, got {}",
                self.substeps_per_h
            )));
        }
        Ok(())
    }
}

fn eval_err(time: f64) -> impl FnOnce(EvalError) -> SimError {
    move |source| SimError::Eval { time, source }
}

/// Scratch vectors for one RK4 step.
struct Rk4<T> {
    k: [Vec<T>; 4],
    stage: Vec<T>,
    next: Vec<T>,
    end_slope: Vec<T>,
}

impl<T: Scalar> Rk4<T> {
    fn new(n: usize) -> Self {
        let z = vec![T::zero(); n];
        Rk4 { k: [z.clone(), z.clone(), z.clone(), z.clone()], stage: z.clone(), next: z.clone(), end_slope: z }
    }

    /// Advance `x` by `dt`; `f(theta, state, out)` is the right-hand side at
    /// step fraction `theta`. Leaves the new state in `next`, the start slope
    /// in `k[0]` and the slope at the new state in `end_slope`.
    fn step(
        &mut self,
        x: &[T],
        dt: f64,
        mut f: impl FnMut(f64, &[T], &mut [T]) -> Result<(), SimError>,
    ) -> Result<(), SimError> {
        let Rk4 { k, stage, next, end_slope } = self;
        f(0.0, x, &mut k[0])?;
        for (s, (xi, ki)) in stage.iter_mut().zip(x.iter().zip(&k[0])) {
            *s = *xi + ki.scale(0.5 * dt);
        }
        f(0.5, stage, &mut k[1])?;
        for (s, (xi, ki)) in stage.iter_mut().zip(x.iter().zip(&k[1])) {
            *s = *xi + ki.scale(0.5 * dt);
        }
        f(0.5, stage, &mut k[2])?;
        for (s, (xi, ki)) in stage.iter_mut().zip(x.iter().zip(&k[2])) {
            *s = *xi + ki.scale(dt);
        }
        f(1.0, stage, &mut k[3])?;
        for i in 0..x.len() {
            let incr = k[0][i] + k[1][i].scale(2.0) + k[2][i].scale(2.0) + k[3][i];
            next[i] = x[i] + incr.scale(dt / 6.0);
        }
        f(1.0, next, end_slope)
    }
}

/// Quadrature node: step index, fraction inside the step, weight in units of
/// the step length. A node on a step boundary is attributed to the step on
/// the side of the sub-interval being integrated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub step: usize,
    pub theta: f64,
    pub weight: f64,
}

/// Composite Simpson nodes for `∫_0^span` where `span` is measured in steps.
///
/// Whole step pairs come first; a leftover shorter than two steps gets its
/// own Simpson panel with interior points read through the reconstruction.
pub fn simpson_nodes(span: Rational) -> Vec<Node> {
    let whole = span.floor().to_integer() as usize;
    let pairs = whole / 2;
    let mut out = Vec::with_capacity(3 * pairs + 3);
    for p in 0..pairs {
        let s = 2 * p;
        out.push(Node { step: s, theta: 0.0, weight: 1.0 / 3.0 });
        out.push(Node { step: s + 1, theta: 0.0, weight: 4.0 / 3.0 });
        out.push(Node { step: s + 1, theta: 1.0, weight: 1.0 / 3.0 });
    }
    let tail = span - Rational::from_integer(2 * pairs as i64);
    if tail > Rational::zero() {
        let start = 2 * pairs;
        let len = to_f64(tail);
        out.push(Node { step: start, theta: 0.0, weight: len / 6.0 });
        let (ms, mt) = left_side(tail / Rational::from_integer(2));
        out.push(Node { step: start + ms, theta: mt, weight: 4.0 * len / 6.0 });
        let (es, et) = left_side(tail);
        out.push(Node { step: start + es, theta: et, weight: len / 6.0 });
    }
    out
}

/// Step and fraction of position `pos > 0`, taking the left step at boundaries.
fn left_side(pos: Rational) -> (usize, f64) {
    let fl = pos.floor();
    if fl == pos {
        (pos.to_integer() as usize - 1, 1.0)
    } else {
        (fl.to_integer() as usize, to_f64(pos - fl))
    }
}

/// Step and fraction of the point `span` steps after the start.
pub fn end_position(span: Rational) -> (usize, f64) {
    left_side(span)
}

fn piece_body_to<'a>(u: &'a ControlSignal, lattice: &DelayLattice) -> Result<Cow<'a, ControlSignal>, SimError> {
    match &u.body {
        ControlBody::Pieces(p) if p.end() < lattice.b_tilde => {
            let mut ext = u.clone();
            let body = p.extend_to(lattice.b_tilde)?;
            ext.end = to_f64(body.end());
            ext.body = ControlBody::Pieces(body);
            Ok(Cow::Owned(ext))
        }
        _ => Ok(Cow::Borrowed(u)),
    }
}

/// Evaluation context for the delayed system on the global grid.
struct DelayedFrame<'a> {
    dynamics: &'a Dynamics,
    phi: &'a History,
    u: &'a ControlSignal,
    a: f64,
    h: f64,
    r: f64,
    s: f64,
    sub: usize,
    lag_x: Option<usize>,
    lag_u: bool,
}

impl DelayedFrame<'_> {
    fn time(&self, g: usize, theta: f64) -> f64 {
        self.a + self.h * ((g as f64 + theta) / self.sub as f64)
    }

    fn mid(&self, g: usize) -> f64 {
        self.time(g, 0.5)
    }

    /// Fill every slot except `x` for step `g` at fraction `theta`.
    fn fill(&self, path: &Path<f64>, g: usize, theta: f64, slots: &mut Slots<f64>) -> Result<f64, SimError> {
        let t = self.time(g, theta);
        let mid = self.mid(g);
        slots.set_t(t);
        let dt = self.h / self.sub as f64;
        match self.lag_x {
            None => slots.xd_from_x(),
            Some(lag) if g >= lag => path.hermite(g - lag, theta, dt, slots.xd_mut()),
            Some(_) => self.phi.eval_into(t - self.r, slots.xd_mut()).map_err(eval_err(t))?,
        }
        self.u.value_in_step(t, mid, slots.u_mut())?;
        if self.lag_u {
            self.u.value_in_step(t - self.s, mid - self.s, slots.ud_mut())?;
        } else {
            slots.ud_from_u();
        }
        Ok(t)
    }
}

fn frame<'a>(
    p: &ProblemDef,
    lattice: &DelayLattice,
    dynamics: &'a Dynamics,
    phi: &'a History,
    u: &'a ControlSignal,
    sub: usize,
) -> DelayedFrame<'a> {
    DelayedFrame {
        dynamics,
        phi,
        u,
        a: lattice.a_f64(),
        h: lattice.h_f64(),
        r: to_f64(p.r),
        s: to_f64(p.s),
        sub,
        lag_x: (lattice.k > 0).then_some(lattice.k * sub),
        lag_u: lattice.l > 0,
    }
}

/// Integrate the delayed system over `[a, b̃]` under control `u`.
pub fn integrate_dde(
    p: &ProblemDef,
    lattice: &DelayLattice,
    u: &ControlSignal,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    let sub = cfg.substeps_per_h;
    let dynamics = Dynamics::new(p).map_err(eval_err(lattice.a_f64()))?;
    let phi = History::new(&p.phi)?;
    let u = piece_body_to(u, lattice)?;
    let fr = frame(p, lattice, &dynamics, &phi, &u, sub);
    let dt = fr.h / sub as f64;
    let x0 = p.initial_state().map_err(eval_err(fr.a))?;
    let mut path = Path::new(&x0);
    let mut rk = Rk4::new(p.n);
    let mut slots = dynamics.slots::<f64>();
    let mut stack = Vec::new();
    let mut x = x0;
    for g in 0..lattice.n_blocks * sub {
        rk.step(&x, dt, |theta, state, out| {
            slots.x_mut().copy_from_slice(state);
            let t = fr.fill(&path, g, theta, &mut slots)?;
            fr.dynamics.rhs(&slots, out, &mut stack).map_err(eval_err(t))
        })?;
        if rk.next.iter().any(|v| !v.is_finite()) {
            return Err(SimError::BlowUp { time: fr.time(g + 1, 0.0) });
        }
        path.push_step(&rk.k[0], &rk.end_slope, &rk.next);
        x.copy_from_slice(&rk.next);
    }
    Ok(Trajectory {
        a: fr.a,
        h: fr.h,
        substeps: sub,
        domain_start: to_f64(lattice.a - p.r - p.s),
        path,
        history: phi,
    })
}

/// `g0(x(b)) + ∫_a^b f0` along a trajectory from [`integrate_dde`].
pub fn cost_delayed(
    p: &ProblemDef,
    lattice: &DelayLattice,
    traj: &Trajectory,
    u: &ControlSignal,
    cfg: &IntegratorConfig,
) -> Result<f64, SimError> {
    cfg.validate()?;
    let sub = cfg.substeps_per_h;
    if traj.substeps != sub || traj.path.steps() != lattice.n_blocks * sub {
        return Err(SimError::Config("trajectory grid does not match the configuration".into()));
    }
    let dynamics = Dynamics::new(p).map_err(eval_err(lattice.a_f64()))?;
    let u = piece_body_to(u, lattice)?;
    let fr = frame(p, lattice, &dynamics, &traj.history, &u, sub);
    let dt = fr.h / sub as f64;
    let span = (lattice.b - lattice.a) / lattice.h * Rational::from_integer(sub as i64);
    let mut slots = dynamics.slots::<f64>();
    let mut stack = Vec::new();
    let mut total = 0.0;
    for node in simpson_nodes(span) {
        traj.path.hermite(node.step, node.theta, dt, slots.x_mut());
        let t = fr.fill(&traj.path, node.step, node.theta, &mut slots)?;
        total += node.weight * dt * dynamics.running_cost(&slots, &mut stack).map_err(eval_err(t))?;
    }
    let (es, et) = end_position(span);
    let mut xb = vec![0.0; p.n];
    traj.path.hermite(es, et, dt, &mut xb);
    Ok(total + dynamics.terminal_cost(&xb).map_err(eval_err(lattice.b_f64()))?)
}

/// Control values of the stacked blocks, in whatever scalar type the caller
/// differentiates with.
pub trait BlockControls<T> {
    /// Control of `block` during `step` of `substeps` at fraction `theta`.
    fn control(&self, lattice: &DelayLattice, block: usize, step: usize, substeps: usize, theta: f64, out: &mut [T]) -> Result<(), SimError>;
}

impl BlockControls<f64> for StackedControl {
    fn control(&self, lattice: &DelayLattice, block: usize, step: usize, substeps: usize, theta: f64, out: &mut [f64]) -> Result<(), SimError> {
        Ok(self.eval_in_step(lattice, block, step, substeps, theta, out)?)
    }
}

/// Fill every slot except `x` for `block` during `step`; returns absolute time.
#[allow(clippy::too_many_arguments)]
fn fill_block<T: Scalar, C: BlockControls<T>>(
    lp: &LiftedProblem,
    controls: &C,
    done: &[Path<T>],
    block: usize,
    step: usize,
    theta: f64,
    sub: usize,
    slots: &mut Slots<T>,
) -> Result<f64, SimError> {
    let lat = &lp.lattice;
    let w = &lp.wiring[block];
    let (a, h) = (lat.a_f64(), lat.h_f64());
    let local = a + h * ((step as f64 + theta) / sub as f64);
    let t = local + to_f64(w.time_shift);
    slots.set_t(t);
    match w.delayed_state {
        Source::Current => slots.xd_from_x(),
        Source::Block(j) => done[j].hermite(step, theta, h / sub as f64, slots.xd_mut()),
        Source::History(j) => {
            let hb = lp.state_history_block(j).expect("checked wiring");
            hb.history.eval_into(local, slots.xd_mut()).map_err(eval_err(t))?
        }
    }
    controls.control(lat, block, step, sub, theta, slots.u_mut())?;
    match w.delayed_control {
        Source::Current => slots.ud_from_u(),
        Source::Block(j) => controls.control(lat, j, step, sub, theta, slots.ud_mut())?,
        Source::History(j) => {
            let hb = lp.control_history_block(j).expect("checked wiring");
            hb.history.eval_into(local, slots.ud_mut()).map_err(eval_err(t))?
        }
    }
    Ok(t)
}

/// Integrate the stacked blocks in increasing order, starting each block
/// from the end of the previous one.
pub fn integrate_blocks<T: Scalar, C: BlockControls<T>>(
    lp: &LiftedProblem,
    controls: &C,
    substeps: usize,
) -> Result<StackedPath<T>, SimError> {
    let n = lp.base.n;
    let h = lp.lattice.h_f64();
    let dt = h / substeps as f64;
    let mut slots = lp.dynamics.slots::<T>();
    let mut stack = Vec::new();
    let mut rk = Rk4::new(n);
    let mut blocks: Vec<Path<T>> = Vec::with_capacity(lp.n_blocks());
    let mut x: Vec<T> = lp.initial_state.iter().map(|v| T::constant(*v)).collect();
    for i in 0..lp.n_blocks() {
        let mut path = Path::new(&x);
        for j in 0..substeps {
            rk.step(&x, dt, |theta, state, out| {
                slots.x_mut().copy_from_slice(state);
                let t = fill_block(lp, controls, &blocks, i, j, theta, substeps, &mut slots)?;
                lp.dynamics.rhs(&slots, out, &mut stack).map_err(eval_err(t))
            })?;
            if rk.next.iter().any(|v| !v.re().is_finite()) {
                let t = lp.lattice.a_f64() + to_f64(lp.wiring[i].time_shift) + dt * (j + 1) as f64;
                return Err(SimError::BlowUp { time: t });
            }
            path.push_step(&rk.k[0], &rk.end_slope, &rk.next);
            x.copy_from_slice(&rk.next);
        }
        blocks.push(path);
    }
    Ok(StackedPath { substeps, blocks })
}

/// Stacked cost: Simpson over each block's share of `[a, b]` plus `g0` at `x(b)`.
pub fn cost_blocks<T: Scalar, C: BlockControls<T>>(
    lp: &LiftedProblem,
    path: &StackedPath<T>,
    controls: &C,
) -> Result<T, SimError> {
    let sub = path.substeps;
    let h = lp.lattice.h_f64();
    let dt = h / sub as f64;
    let scale = Rational::from_integer(sub as i64) / lp.lattice.h;
    let mut slots = lp.dynamics.slots::<T>();
    let mut stack = Vec::new();
    let mut total = T::zero();
    let mut terminal = T::zero();
    for w in &lp.wiring {
        let i = w.block;
        let span = w.cost_span * scale;
        for node in simpson_nodes(span) {
            path.blocks[i].hermite(node.step, node.theta, dt, slots.x_mut());
            let t = fill_block(lp, controls, &path.blocks, i, node.step, node.theta, sub, &mut slots)?;
            let f0 = lp.dynamics.running_cost(&slots, &mut stack).map_err(eval_err(t))?;
            total = total + f0.scale(node.weight * dt);
        }
        if w.holds_terminal {
            let (es, et) = end_position(span);
            let mut xb = vec![T::zero(); lp.base.n];
            path.blocks[i].hermite(es, et, dt, &mut xb);
            terminal = lp.dynamics.terminal_cost(&xb).map_err(eval_err(lp.lattice.b_f64()))?;
        }
    }
    Ok(total + terminal)
}

/// [`integrate_blocks`] for an expression or sampled stacked control.
pub fn integrate_lifted(lp: &LiftedProblem, theta: &StackedControl, cfg: &IntegratorConfig) -> Result<StackedPath<f64>, SimError> {
    cfg.validate()?;
    integrate_blocks(lp, theta, cfg.substeps_per_h)
}

/// [`cost_blocks`] for an expression or sampled stacked control.
pub fn cost_lifted(lp: &LiftedProblem, path: &StackedPath<f64>, theta: &StackedControl, cfg: &IntegratorConfig) -> Result<f64, SimError> {
    cfg.validate()?;
    if path.substeps != cfg.substeps_per_h {
        return Err(SimError::Config("stacked path grid does not match the configuration".into()));
    }
    cost_blocks(lp, path, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprdsl::{parse, Expr};
    use crate::lift::{lift_problem, stack_control, unstack_state};
    use crate::model::{build_lattice, rational, Bound, Piecewise, Sampled};

    fn gollmann() -> ProblemDef {
        ProblemDef {
            name: "gollmann".into(),
            n: 1,
            m: 1,
            a: rational(0, 1),
            b: rational(3, 1),
            r: rational(1, 1),
            s: rational(2, 1),
            f0: parse("x0^2 + u0^2").unwrap(),
            f: vec![parse("xd0 * ud0").unwrap()],
            g0: Expr::num(0.0),
            phi: vec![Expr::num(1.0)],
            psi: vec![Expr::num(0.0)],
            omega: vec![Bound::Free],
            terminal: vec![Bound::Free],
            degenerate: false,
        }
    }

    fn candidate(p: &ProblemDef) -> ControlSignal {
        let body = Piecewise::new(
            &["t"],
            vec![
                (rational(0, 1), rational(1, 1), vec![parse("(exp(t) - exp(2 - t)) / (exp(2) + 1)").unwrap()]),
                (rational(1, 1), rational(3, 1), vec![Expr::num(0.0)]),
            ],
        )
        .unwrap();
        ControlSignal::from_pieces(&p.psi, 0.0, 2.0, body).unwrap()
    }

    fn x_star(t: f64) -> f64 {
        let e2 = 2f64.exp();
        if t <= 2.0 {
            1.0
        } else {
            ((t - 2.0).exp() + (4.0 - t).exp()) / (e2 + 1.0)
        }
    }

    fn sup_error(traj: &Trajectory) -> f64 {
        traj.grid().iter().enumerate().map(|(j, t)| (traj.node(j)[0] - x_star(*t)).abs()).fold(0.0, f64::max)
    }

    fn zero_control(p: &ProblemDef) -> ControlSignal {
        let body = Piecewise::single(&["t"], p.a, p.b, vec![Expr::num(0.0)]).unwrap();
        ControlSignal::from_pieces(&p.psi, to_f64(p.a), to_f64(p.s), body).unwrap()
    }

    #[test]
    fn config_rejects_odd_substeps() {
        assert!(IntegratorConfig::new(3).is_err());
        assert!(IntegratorConfig::new(0).is_err());
        assert!(IntegratorConfig::new(2).is_ok());
    }

    #[test]
    fn simpson_nodes_integrate_cubics() {
        // ∫_0^span s^3 ds with nodes placed at step + theta
        for span in [rational(8, 1), rational(7, 1), rational(51, 5), rational(1, 3)] {
            let nodes = simpson_nodes(span);
            let got: f64 = nodes.iter().map(|nd| nd.weight * (nd.step as f64 + nd.theta).powi(3)).sum();
            let want = to_f64(span).powi(4) / 4.0;
            assert!((got - want).abs() < 1e-9 * want.max(1.0), "{span}: {got} vs {want}");
        }
        assert_eq!(end_position(rational(4, 1)), (3, 1.0));
        assert_eq!(end_position(rational(9, 2)), (4, 0.5));
    }

    #[test]
    fn zero_control_keeps_state_constant() {
        let p = gollmann();
        let lat = build_lattice(&p).unwrap();
        let cfg = IntegratorConfig::new(16).unwrap();
        let u = zero_control(&p);
        let traj = integrate_dde(&p, &lat, &u, &cfg).unwrap();
        assert!(traj.path.values.iter().all(|v| *v == 1.0));
        assert_eq!(traj.end(), 3.0);
        let c = cost_delayed(&p, &lat, &traj, &u, &cfg).unwrap();
        assert!((c - 3.0).abs() < 1e-12);
    }

    #[test]
    fn candidate_matches_closed_form() {
        let p = gollmann();
        let lat = build_lattice(&p).unwrap();
        let u = candidate(&p);
        let traj = integrate_dde(&p, &lat, &u, &IntegratorConfig::new(128).unwrap()).unwrap();
        assert!(sup_error(&traj) <= 1e-5);
        let fine = integrate_dde(&p, &lat, &u, &IntegratorConfig::new(512).unwrap()).unwrap();
        let xb = fine.path.last()[0];
        let e = 1f64.exp();
        assert!((xb - 2.0 * e / (e * e + 1.0)).abs() <= 1e-6);
        assert!((xb - 0.648054).abs() < 1e-6);
    }

    #[test]
    fn rk4_order() {
        let p = gollmann();
        let lat = build_lattice(&p).unwrap();
        let u = candidate(&p);
        let errs: Vec<f64> = [4, 8, 16, 32]
            .iter()
            .map(|&s| sup_error(&integrate_dde(&p, &lat, &u, &IntegratorConfig::new(s).unwrap()).unwrap()))
            .collect();
        for w in errs.windows(2) {
            assert!(w[0] / w[1] >= 12.0, "{errs:?}");
        }
    }

    #[test]
    fn candidate_cost() {
        let p = gollmann();
        let lat = build_lattice(&p).unwrap();
        let u = candidate(&p);
        let cfg = IntegratorConfig::new(128).unwrap();
        let traj = integrate_dde(&p, &lat, &u, &cfg).unwrap();
        let c = cost_delayed(&p, &lat, &traj, &u, &cfg).unwrap();
        assert!((c - 2.7615941559557649).abs() < 1e-6, "{c}");
        // refinement shrinks the change in cost
        let diffs: Vec<f64> = [8, 16, 32, 64]
            .windows(2)
            .map(|w| {
                let cost = |s: usize| {
                    let cfg = IntegratorConfig::new(s).unwrap();
                    let tr = integrate_dde(&p, &lat, &u, &cfg).unwrap();
                    cost_delayed(&p, &lat, &tr, &u, &cfg).unwrap()
                };
                (cost(w[0]) - cost(w[1])).abs()
            })
            .collect();
        assert!(diffs[1] < diffs[0] && diffs[2] < diffs[1], "{diffs:?}");
    }

    #[test]
    fn terminal_only_cost_reads_final_state() {
        let mut p = gollmann();
        p.f0 = Expr::num(0.0);
        p.g0 = parse("x0").unwrap();
        let lat = build_lattice(&p).unwrap();
        let u = candidate(&p);
        let cfg = IntegratorConfig::new(64).unwrap();
        let traj = integrate_dde(&p, &lat, &u, &cfg).unwrap();
        let c = cost_delayed(&p, &lat, &traj, &u, &cfg).unwrap();
        assert_eq!(c, traj.path.last()[0]);
    }

    #[test]
    fn lifted_matches_delayed() {
        let p = gollmann();
        let lat = build_lattice(&p).unwrap();
        let lp = lift_problem(&p, &lat).unwrap();
        let cfg = IntegratorConfig::new(32).unwrap();
        let u = candidate(&p);
        let direct = integrate_dde(&p, &lat, &u, &cfg).unwrap();
        let theta = stack_control(&u, &lat).unwrap();
        let sp = integrate_lifted(&lp, &theta, &cfg).unwrap();
        let back = unstack_state(&sp, &lp).unwrap();
        let gap = back.path.values.iter().zip(&direct.path.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap <= 1e-12, "{gap}");
        let c1 = cost_delayed(&p, &lat, &direct, &u, &cfg).unwrap();
        let c2 = cost_lifted(&lp, &sp, &theta, &cfg).unwrap();
        assert!((c1 - c2).abs() <= 1e-12);
    }

    #[test]
    fn lifted_zero_control_blocks_are_constant() {
        let p = gollmann();
        let lat = build_lattice(&p).unwrap();
        let lp = lift_problem(&p, &lat).unwrap();
        let cfg = IntegratorConfig::new(8).unwrap();
        let theta = stack_control(&zero_control(&p), &lat).unwrap();
        let sp = integrate_lifted(&lp, &theta, &cfg).unwrap();
        assert!(sp.blocks.iter().all(|b| b.values.iter().all(|v| *v == 1.0)));
        assert!((cost_lifted(&lp, &sp, &theta, &cfg).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn extended_horizon_costs_agree() {
        let mut p = gollmann();
        p.b = rational(27, 10);
        p.g0 = parse("x0^2").unwrap();
        let lat = build_lattice(&p).unwrap();
        assert!(lat.is_extended());
        let lp = lift_problem(&p, &lat).unwrap();
        let cfg = IntegratorConfig::new(16).unwrap();
        let body = Piecewise::single(&["t"], p.a, p.b, vec![parse("sin(3 * t)").unwrap()]).unwrap();
        let u = ControlSignal::from_pieces(&p.psi, 0.0, 2.0, body).unwrap();
        let direct = integrate_dde(&p, &lat, &u, &cfg).unwrap();
        assert_eq!(direct.end(), 3.0);
        let theta = stack_control(&u, &lat).unwrap();
        let sp = integrate_lifted(&lp, &theta, &cfg).unwrap();
        let c1 = cost_delayed(&p, &lat, &direct, &u, &cfg).unwrap();
        let c2 = cost_lifted(&lp, &sp, &theta, &cfg).unwrap();
        assert!((c1 - c2).abs() <= 1e-12, "{c1} {c2}");
        // the cost stops at b: a finer grid agrees to quadrature accuracy
        let fine = IntegratorConfig::new(256).unwrap();
        let tr = integrate_dde(&p, &lat, &u, &fine).unwrap();
        assert!((cost_delayed(&p, &lat, &tr, &u, &fine).unwrap() - c1).abs() < 1e-4);
    }

    #[test]
    fn degenerate_problem_is_plain_rk4() {
        // x' = u with u = 1 - t, x(0) = 1: x(1) = 1.5, cost ∫ x dt
        let p = ProblemDef {
            name: "ode".into(),
            n: 1,
            m: 1,
            a: rational(0, 1),
            b: rational(1, 1),
            r: rational(0, 1),
            s: rational(0, 1),
            f0: parse("x0").unwrap(),
            f: vec![parse("u0 + 0 * xd0 * ud0").unwrap()],
            g0: Expr::num(0.0),
            phi: vec![Expr::num(1.0)],
            psi: vec![Expr::num(0.0)],
            omega: vec![Bound::Free],
            terminal: vec![Bound::Free],
            degenerate: true,
        };
        let lat = build_lattice(&p).unwrap();
        let lp = lift_problem(&p, &lat).unwrap();
        let cfg = IntegratorConfig::new(4).unwrap();
        let body = Piecewise::single(&["t"], p.a, p.b, vec![parse("1 - t").unwrap()]).unwrap();
        let u = ControlSignal::from_pieces(&p.psi, 0.0, 0.0, body).unwrap();
        let theta = stack_control(&u, &lat).unwrap();
        let sp = integrate_lifted(&lp, &theta, &cfg).unwrap();
        assert!((sp.blocks[0].last()[0] - 1.5).abs() < 1e-14);
        let c = cost_lifted(&lp, &sp, &theta, &cfg).unwrap();
        // ∫_0^1 1 + t - t^2/2 dt = 1 + 1/2 - 1/6
        assert!((c - (1.0 + 0.5 - 1.0 / 6.0)).abs() < 1e-14);
    }

    #[test]
    fn sampled_controls_agree_between_forms() {
        let p = gollmann();
        let lat = build_lattice(&p).unwrap();
        let lp = lift_problem(&p, &lat).unwrap();
        let cfg = IntegratorConfig::new(16).unwrap();
        let values: Vec<f64> = (0..24).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.6).collect();
        let u = ControlSignal::from_samples(&p.psi, 0.0, 2.0, Sampled { start: 0.0, dt: 0.125, values }).unwrap();
        let direct = integrate_dde(&p, &lat, &u, &cfg).unwrap();
        let theta = stack_control(&u, &lat).unwrap();
        let sp = integrate_lifted(&lp, &theta, &cfg).unwrap();
        let back = unstack_state(&sp, &lp).unwrap();
        assert_eq!(back.path.values, direct.path.values);
        let c1 = cost_delayed(&p, &lat, &direct, &u, &cfg).unwrap();
        let c2 = cost_lifted(&lp, &sp, &theta, &cfg).unwrap();
        assert!((c1 - c2).abs() <= 1e-12);
    }

    #[test]
    fn blow_up_reports_time() {
        let mut p = gollmann();
        p.f = vec![parse("x0^2 + 0 * xd0 * ud0").unwrap()];
        p.phi = vec![Expr::num(10.0)];
        let lat = build_lattice(&p).unwrap();
        let err = integrate_dde(&p, &lat, &zero_control(&p), &IntegratorConfig::new(64).unwrap()).unwrap_err();
        assert!(matches!(err, SimError::BlowUp { time } if time > 0.09 && time < 0.2), "{err:?}");
    }
}
