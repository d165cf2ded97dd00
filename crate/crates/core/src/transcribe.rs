//! Single-shooting transcription of the stacked problem.
//!
//! The decision vector holds `q` piecewise-constant samples per block and
//! control component, laid out as `z[(i·q + j)·m + c]` for block `i`, sample
//! `j`, component `c`. Objective and gradient run the block-sequential RK4
//! recursion, the gradient in forward mode with eight tangents per sweep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::exprdsl::{Dual, Scalar};
use crate::lift::{lift_problem, sample_index, LiftError, LiftedProblem};
use crate::model::{
    build_lattice, rational, to_f64, Bound, ControlSignal, DelayLattice, ModelError, Piecewise, ProblemDef,
    Rational, Sampled, Trajectory,
};
use crate::simsteps::{cost_blocks, end_position, integrate_blocks, integrate_dde, BlockControls, IntegratorConfig, SimError};

const TANGENTS: usize = 8;
const ARMIJO_C: f64 = 1e-4;
const SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lift(#[from] LiftError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid solver options: {0}")]
    Options(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    /// Backtracking from a unit trial step.
    Armijo,
    /// Backtracking from a Barzilai–Borwein trial step.
    ArmijoBb,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Zero,
    Random(u64),
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Samples per block and control component.
    pub q: usize,
    pub max_iter: usize,
    /// Stop when the projected-gradient step `‖P(z − ∇J) − z‖∞` falls below this.
    pub tolerance: f64,
    pub step_rule: StepRule,
    pub init: Init,
    /// RK4 steps per block; `None` picks a multiple of `2q` of at least 64.
    pub substeps: Option<usize>,
    /// Weight of the squared distance of `x(b)` to the terminal box.
    pub rho: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            q: 16,
            max_iter: 2000,
            tolerance: 1e-6,
            step_rule: StepRule::ArmijoBb,
            init: Init::Zero,
            substeps: None,
            rho: 100.0,
        }
    }
}

impl SolveOptions {
    pub fn substeps(&self) -> usize {
        self.substeps.unwrap_or_else(|| {
            let unit = 2 * self.q.max(1);
            unit * 64usize.div_ceil(unit)
        })
    }

    fn validate(&self) -> Result<(), SolveError> {
        let sub = self.substeps();
        if self.q == 0 {
            return Err(SolveError::Options("q must be positive".into()));
        }
        if sub % (2 * self.q) != 0 {
            return Err(SolveError::Options(format!("substeps {sub} must be a multiple of 2q = {}", 2 * self.q)));
        }
        if !(self.rho >= 0.0) || !(self.tolerance >= 0.0) {
            return Err(SolveError::Options("rho and tolerance must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Stacked control read from a decision vector.
pub struct DecisionStack<'a, T> {
    pub q: usize,
    pub m: usize,
    pub values: &'a [T],
}

impl<T: Scalar> BlockControls<T> for DecisionStack<'_, T> {
    fn control(&self, _: &DelayLattice, block: usize, step: usize, substeps: usize, _: f64, out: &mut [T]) -> Result<(), SimError> {
        let j = sample_index(step, substeps, self.q);
        let base = (block * self.q + j) * self.m;
        out.copy_from_slice(&self.values[base..base + self.m]);
        Ok(())
    }
}

/// Stacked problem plus the discretisation it is solved on.
#[derive(Debug, Clone)]
pub struct Transcription {
    pub lifted: LiftedProblem,
    pub q: usize,
    pub substeps: usize,
    pub rho: f64,
}

impl Transcription {
    pub fn new(problem: &ProblemDef, q: usize, substeps: usize, rho: f64) -> Result<Self, SolveError> {
        if q == 0 || substeps % (2 * q) != 0 {
            return Err(SolveError::Options(format!("substeps {substeps} must be a positive multiple of 2q")));
        }
        IntegratorConfig::new(substeps)?;
        let lattice = build_lattice(problem)?;
        let lifted = lift_problem(problem, &lattice)?;
        Ok(Transcription { lifted, q, substeps, rho })
    }

    pub fn dim(&self) -> usize {
        self.lifted.base.m * self.lifted.n_blocks() * self.q
    }

    fn lattice(&self) -> &DelayLattice {
        &self.lifted.lattice
    }

    /// Absolute start time of sample `j` of block `i`.
    pub fn sample_start(&self, block: usize, j: usize) -> Rational {
        let lat = self.lattice();
        lat.a + lat.h * (Rational::from_integer(block as i64) + rational(j as i64, self.q as i64))
    }

    /// Coordinates that cannot affect the objective: samples starting at or after `b`.
    pub fn dead_coordinates(&self) -> Vec<usize> {
        let (m, q) = (self.lifted.base.m, self.q);
        let b = self.lattice().b;
        let mut out = Vec::new();
        for i in 0..self.lifted.n_blocks() {
            for j in 0..q {
                if self.sample_start(i, j) >= b {
                    out.extend((0..m).map(|c| (i * q + j) * m + c));
                }
            }
        }
        out
    }

    fn evaluate<T: Scalar>(&self, z: &[T]) -> Result<(T, Vec<T>), SimError> {
        let controls = DecisionStack { q: self.q, m: self.lifted.base.m, values: z };
        let path = integrate_blocks(&self.lifted, &controls, self.substeps)?;
        let cost = cost_blocks(&self.lifted, &path, &controls)?;
        let last = self.lifted.wiring.iter().find(|w| w.holds_terminal).expect("terminal block");
        let span = last.cost_span * Rational::from_integer(self.substeps as i64) / self.lattice().h;
        let (es, et) = end_position(span);
        let mut xb = vec![T::zero(); self.lifted.base.n];
        path.blocks[last.block].hermite(es, et, self.lattice().h_f64() / self.substeps as f64, &mut xb);
        Ok((cost, xb))
    }

    fn penalty<T: Scalar>(&self, xb: &[T]) -> T {
        let mut total = T::zero();
        for (x, g) in xb.iter().zip(&self.lifted.base.terminal) {
            if let Bound::Interval { lo, hi } = *g {
                let d = if x.re() < lo {
                    T::constant(lo) - *x
                } else if x.re() > hi {
                    *x - T::constant(hi)
                } else {
                    continue;
                };
                total = total + (d * d).scale(self.rho);
            }
        }
        total
    }

    fn check_len(&self, z: &[f64]) -> Result<(), SolveError> {
        if z.len() != self.dim() {
            return Err(SolveError::Options(format!("decision vector has length {}, expected {}", z.len(), self.dim())));
        }
        Ok(())
    }

    /// Lifted cost plus terminal penalty; `+∞` when the state blows up.
    pub fn objective(&self, z: &[f64]) -> Result<f64, SolveError> {
        self.check_len(z)?;
        match self.evaluate(z) {
            Ok((cost, xb)) => Ok(cost + self.penalty(&xb)),
            Err(SimError::BlowUp { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e.into()),
        }
    }

    /// Cost without penalty and the terminal distance `dist(x(b), G)`.
    pub fn cost_and_residual(&self, z: &[f64]) -> Result<(f64, f64), SolveError> {
        self.check_len(z)?;
        let (cost, xb) = self.evaluate(z)?;
        let resid = xb
            .iter()
            .zip(&self.lifted.base.terminal)
            .map(|(x, g)| g.distance(*x).powi(2))
            .sum::<f64>()
            .sqrt();
        Ok((cost, resid))
    }

    /// Exact gradient of [`Transcription::objective`] by forward-mode sweeps.
    pub fn objective_grad(&self, z: &[f64]) -> Result<Vec<f64>, SolveError> {
        self.check_len(z)?;
        let dead = self.dead_coordinates();
        let live: Vec<usize> = (0..z.len()).filter(|i| dead.binary_search(i).is_err()).collect();
        let mut grad = vec![0.0; z.len()];
        let mut duals: Vec<Dual<TANGENTS>> = z.iter().map(|v| Dual::constant(*v)).collect();
        for chunk in live.chunks(TANGENTS) {
            for (d, v) in duals.iter_mut().zip(z) {
                *d = Dual::constant(*v);
            }
            for (dir, &i) in chunk.iter().enumerate() {
                duals[i] = Dual::variable(z[i], dir);
            }
            let (cost, xb) = self.evaluate(&duals)?;
            let total = cost + self.penalty(&xb);
            for (dir, &i) in chunk.iter().enumerate() {
                grad[i] = total.eps[dir];
            }
        }
        Ok(grad)
    }

    pub fn project(&self, z: &mut [f64]) {
        let m = self.lifted.base.m;
        for (k, v) in z.iter_mut().enumerate() {
            *v = self.lifted.base.omega[k % m].project(*v);
        }
    }

    /// Piecewise-constant control on `[a, b̃]` for the decision vector.
    pub fn control_signal(&self, z: &[f64]) -> Result<ControlSignal, SolveError> {
        let p = &self.lifted.base;
        let lat = self.lattice();
        let samples = Sampled { start: lat.a_f64(), dt: lat.h_f64() / self.q as f64, values: z.to_vec() };
        Ok(ControlSignal::from_samples(&p.psi, lat.a_f64(), to_f64(p.s), samples)?)
    }

    /// The same control as constant expression pieces with exact endpoints.
    pub fn control_pieces(&self, z: &[f64]) -> Result<Piecewise, SolveError> {
        let m = self.lifted.base.m;
        let mut pieces = Vec::new();
        for i in 0..self.lifted.n_blocks() {
            for j in 0..self.q {
                let start = self.sample_start(i, j);
                let end = start + self.lattice().h * rational(1, self.q as i64);
                let base = (i * self.q + j) * m;
                let exprs = z[base..base + m].iter().map(|v| crate::exprdsl::Expr::num(*v)).collect();
                pieces.push((start, end, exprs));
            }
        }
        Ok(Piecewise::new(&["t"], pieces)?)
    }

    fn initial(&self, init: &Init) -> Result<Vec<f64>, SolveError> {
        let dim = self.dim();
        let mut z = match init {
            Init::Zero => vec![0.0; dim],
            Init::Given(v) => {
                self.check_len(v)?;
                v.clone()
            }
            Init::Random(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let m = self.lifted.base.m;
                (0..dim)
                    .map(|k| match self.lifted.base.omega[k % m] {
                        Bound::Interval { lo, hi } => rng.gen_range(lo..=hi),
                        Bound::Free => rng.gen_range(-1.0..=1.0),
                    })
                    .collect()
            }
        };
        self.project(&mut z);
        Ok(z)
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub z: Vec<f64>,
    pub control: ControlSignal,
    pub trajectory: Trajectory,
    /// Cost without the terminal penalty.
    pub cost: f64,
    /// Objective (cost plus penalty) after every accepted iteration, starting with the initial point.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Final projected-gradient step size.
    pub stationarity: f64,
    /// `dist(x(b), G)`.
    pub terminal_residual: f64,
    pub q: usize,
    pub substeps: usize,
}

fn stationarity(tr: &Transcription, z: &[f64], g: &[f64]) -> f64 {
    let mut probe: Vec<f64> = z.iter().zip(g).map(|(v, d)| v - d).collect();
    tr.project(&mut probe);
    probe.iter().zip(z).map(|(p, v)| (p - v).abs()).fold(0.0, f64::max)
}

/// Projected gradient descent with Armijo backtracking.
pub fn solve(problem: &ProblemDef, opts: &SolveOptions) -> Result<SolveResult, SolveError> {
    opts.validate()?;
    let tr = Transcription::new(problem, opts.q, opts.substeps(), opts.rho)?;
    let mut z = tr.initial(&opts.init)?;
    let mut f = tr.objective(&z)?;
    if !f.is_finite() {
        return Err(SolveError::Options("objective is not finite at the initial point".into()));
    }
    let mut g = tr.objective_grad(&z)?;
    let mut history = vec![f];
    let mut converged = false;
    let mut iterations = 0;
    let mut trial_step = 1.0;
    let mut station = stationarity(&tr, &z, &g);
    let mut candidate = vec![0.0; z.len()];
    while iterations < opts.max_iter {
        if station <= opts.tolerance {
            converged = true;
            break;
        }
        let mut alpha = trial_step;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            for ((c, v), d) in candidate.iter_mut().zip(&z).zip(&g) {
                *c = v - alpha * d;
            }
            tr.project(&mut candidate);
            let decrease: f64 = g.iter().zip(candidate.iter().zip(&z)).map(|(d, (c, v))| d * (c - v)).sum();
            let fc = tr.objective(&candidate)?;
            if fc <= f + ARMIJO_C * decrease {
                accepted = Some(fc);
                break;
            }
            alpha *= SHRINK;
        }
        let Some(f_new) = accepted else { break };
        let g_new = tr.objective_grad(&candidate)?;
        trial_step = match opts.step_rule {
            StepRule::Armijo => 1.0,
            StepRule::ArmijoBb => {
                let (mut ss, mut sy) = (0.0, 0.0);
                for i in 0..z.len() {
                    let s = candidate[i] - z[i];
                    let y = g_new[i] - g[i];
                    ss += s * s;
                    sy += s * y;
                }
                if sy > 0.0 && ss > 0.0 {
                    (ss / sy).clamp(1e-10, 1e10)
                } else {
                    (2.0 * alpha).min(1e10)
                }
            }
        };
        z.copy_from_slice(&candidate);
        f = f_new;
        g = g_new;
        history.push(f);
        iterations += 1;
        station = stationarity(&tr, &z, &g);
    }
    if !converged && station <= opts.tolerance {
        converged = true;
    }
    let (cost, terminal_residual) = tr.cost_and_residual(&z)?;
    let control = tr.control_signal(&z)?;
    let lattice = tr.lifted.lattice;
    let trajectory = integrate_dde(problem, &lattice, &control, &IntegratorConfig::new(tr.substeps)?)?;
    Ok(SolveResult {
        z,
        control,
        trajectory,
        cost,
        history,
        iterations,
        converged,
        stationarity: station,
        terminal_residual,
        q: tr.q,
        substeps: tr.substeps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::exprdsl::parse;
    use crate::simsteps::cost_delayed;

    #[test]
    fn zero_decisions_give_constant_state_cost() {
        let tr = Transcription::new(&corpus::gollmann().problem, 16, 64, 100.0).unwrap();
        assert_eq!(tr.dim(), 96);
        let j = tr.objective(&vec![0.0; 96]).unwrap();
        assert!((j - 3.0).abs() < 1e-12);
    }

    #[test]
    fn sampled_candidate_cost() {
        let entry = corpus::gollmann();
        let tr = Transcription::new(&entry.problem, 32, 128, 100.0).unwrap();
        let u = entry.candidate.unwrap().u_star;
        let z: Vec<f64> = (0..tr.dim())
            .map(|k| {
                let (i, j) = (k / 32, k % 32);
                let mid = to_f64(tr.sample_start(i, j)) + 0.5 / 64.0;
                u.eval(mid, &[]).unwrap()[0]
            })
            .collect();
        let j = tr.objective(&z).unwrap();
        assert!((j - 2.7616).abs() < 2e-3, "{j}");
    }

    #[test]
    fn penalty_is_positive_outside_terminal_box() {
        let mut p = corpus::gollmann().problem;
        p.terminal = vec![Bound::Interval { lo: 2.0, hi: 3.0 }];
        let tr = Transcription::new(&p, 4, 8, 100.0).unwrap();
        let z = vec![0.0; tr.dim()];
        // x(b) = 1 sits at distance 1 from [2, 3]
        assert!((tr.objective(&z).unwrap() - (3.0 + 100.0)).abs() < 1e-9);
        let (cost, resid) = tr.cost_and_residual(&z).unwrap();
        assert!((cost - 3.0).abs() < 1e-12);
        assert_eq!(resid, 1.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let tr = Transcription::new(&corpus::gollmann().problem, 4, 16, 100.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z: Vec<f64> = (0..tr.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = tr.objective_grad(&z).unwrap();
        let eps = 1e-6;
        for i in 0..z.len() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += eps;
            zm[i] -= eps;
            let fd = (tr.objective(&zp).unwrap() - tr.objective(&zm).unwrap()) / (2.0 * eps);
            assert!((g[i] - fd).abs() <= 1e-5 * fd.abs().max(1e-2), "{i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn dead_coordinates_have_zero_gradient() {
        let mut p = corpus::gollmann().problem;
        p.b = rational(27, 10);
        let tr = Transcription::new(&p, 5, 10, 100.0).unwrap();
        // block 5 covers [2.5, 3]; samples from 2.7 on are dead
        assert_eq!(tr.dead_coordinates(), vec![27, 28, 29]);
        let z = vec![0.3; tr.dim()];
        let g = tr.objective_grad(&z).unwrap();
        let mut zp = z.clone();
        zp[28] += 0.5;
        assert_eq!(tr.objective(&zp).unwrap(), tr.objective(&z).unwrap());
        assert!(g[27..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lq_gradient_at_zero_is_analytic() {
        // q = 2 on [0, 1], x' = u, cost ∫ x^2 + u^2: with z = 0, x ≡ 1 and
        // ∂J/∂z_j = ∫ 2x ∂x/∂z_j dt = 2 ∫ (t - t_j)^+ clipped to the sample
        let entry = corpus::lq_riccati();
        let tr = Transcription::new(&entry.problem, 2, 4, 100.0).unwrap();
        let g = tr.objective_grad(&[0.0, 0.0]).unwrap();
        assert!((g[0] - 0.75).abs() < 1e-12, "{g:?}");
        assert!((g[1] - 0.25).abs() < 1e-12, "{g:?}");
    }

    #[test]
    fn lq_solve_reaches_riccati_cost() {
        let entry = corpus::lq_riccati();
        let res = solve(&entry.problem, &SolveOptions { q: 16, ..SolveOptions::default() }).unwrap();
        assert!((res.cost - 1f64.tanh()).abs() < 1e-2, "{}", res.cost);
        assert!(res.history.windows(2).all(|w| w[1] <= w[0]));
        // reported cost equals the delayed cost of the unstacked pair
        let lat = build_lattice(&entry.problem).unwrap();
        let cfg = IntegratorConfig::new(res.substeps).unwrap();
        let c = cost_delayed(&entry.problem, &lat, &res.trajectory, &res.control, &cfg).unwrap();
        assert!((c - res.cost).abs() < 1e-9);
    }

    #[test]
    fn pure_control_penalty_converges_to_zero() {
        let mut p = corpus::gollmann().problem;
        p.f0 = parse("u0^2").unwrap();
        p.f = vec![parse("0 * xd0 * ud0").unwrap()];
        p.g0 = parse("x0").unwrap();
        let res = solve(&p, &SolveOptions { q: 2, init: Init::Random(3), ..SolveOptions::default() }).unwrap();
        assert!(res.converged);
        assert!(res.z.iter().all(|v| v.abs() < 1e-6));
        assert!((res.cost - 1.0).abs() < 1e-10);
    }

    #[test]
    fn solve_is_deterministic_and_respects_bounds() {
        let mut p = corpus::gollmann().problem;
        p.omega = vec![Bound::Interval { lo: -0.3, hi: 0.3 }];
        let opts = SolveOptions { q: 4, max_iter: 50, ..SolveOptions::default() };
        let r1 = solve(&p, &opts).unwrap();
        let r2 = solve(&p, &opts).unwrap();
        assert_eq!(r1.z, r2.z);
        assert_eq!(r1.history, r2.history);
        assert!(r1.z.iter().all(|v| (-0.3..=0.3).contains(v)));
        assert!(r1.cost < 3.0);
    }

    #[test]
    fn options_are_checked() {
        let p = corpus::gollmann().problem;
        let bad = SolveOptions { q: 3, substeps: Some(8), ..SolveOptions::default() };
        assert!(matches!(solve(&p, &bad), Err(SolveError::Options(_))));
        assert_eq!(SolveOptions { q: 16, ..SolveOptions::default() }.substeps(), 64);
        assert_eq!(SolveOptions { q: 48, ..SolveOptions::default() }.substeps(), 96);
    }
}
