//! Stacking a delayed problem into an equivalent non-delayed one on a single
//! lattice interval.
//!
//! Block `i` of the stacked state carries `x(t + h·i)` for `t ∈ [a, a + h]`,
//! and block `i` of the stacked control carries `u(t + h·i)`. Delayed
//! arguments of block `i` become plain arguments read from block `i − k`
//! (state) and `i − l` (control), or from a shifted copy of the history when
//! that index is negative.

use std::fmt::Write as _;

use num_traits::Zero;
use thiserror::Error;

use crate::exprdsl::{EvalError, Expr};
use crate::model::{
    to_f64, Bound, ControlBody, ControlSignal, DelayLattice, Dynamics, History, ModelError, Path, Piecewise,
    ProblemDef, Rational, Sampled, Trajectory,
};

/// Largest mismatch tolerated between `ξ_i(a + h)` and `ξ_{i+1}(a)`.
pub const LINK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LiftError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("linking condition violated between blocks {block} and {next}: gap {gap:e}", next = block + 1)]
    Linking { block: usize, gap: f64 },
    #[error("wiring of block {block}: {reason}")]
    Wiring { block: usize, reason: String },
    #[error("{0}")]
    Shape(String),
}

/// Where one argument slot of a block's dynamics reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// The block's own current value (zero delay).
    Current,
    /// An earlier stacked block.
    Block(usize),
    /// A history component with this (negative) block index.
    History(i64),
}

impl Source {
    fn label(self, prefix: &str) -> String {
        match self {
            Source::Current => "current".to_string(),
            Source::Block(j) => format!("{prefix}[{j}]"),
            Source::History(j) => format!("hist[{j}]"),
        }
    }
}

/// A history segment moved onto `[a, a + h]`: `phi(t + h·index)` or `psi(t + h·index)`.
#[derive(Debug, Clone)]
pub struct HistoryBlock {
    pub index: i64,
    pub exprs: Vec<Expr>,
    pub history: History,
}

/// Resolved arguments of one stacked block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWiring {
    pub block: usize,
    /// Absolute time minus local time.
    pub time_shift: Rational,
    pub delayed_state: Source,
    pub delayed_control: Source,
    /// Length of the part of `[a, a + h]` whose absolute time lies in `[a, b]`.
    pub cost_span: Rational,
    /// Whether `x(b)` is read from this block (at local offset `cost_span`).
    pub holds_terminal: bool,
}

/// The stacked problem together with its wiring table.
#[derive(Debug, Clone)]
pub struct LiftedProblem {
    pub base: ProblemDef,
    pub lattice: DelayLattice,
    pub dynamics: Dynamics,
    /// `n·N`.
    pub state_dim: usize,
    /// `m·N`.
    pub control_dim: usize,
    /// Blocks `−k−l..−1`, in increasing index order.
    pub state_history: Vec<HistoryBlock>,
    /// Blocks `−l..−1`, in increasing index order.
    pub control_history: Vec<HistoryBlock>,
    pub wiring: Vec<BlockWiring>,
    /// `x_a = phi(a)`; the remaining block initial values follow from linking.
    pub initial_state: Vec<f64>,
    pub stacked_omega: Vec<Bound>,
    pub stacked_terminal: Vec<Bound>,
}

fn history_blocks(exprs: &[Expr], h: Rational, count: usize) -> Result<Vec<HistoryBlock>, LiftError> {
    let count = count as i64;
    (-count..0)
        .map(|index| {
            let shift = to_f64(h * Rational::from_integer(index));
            let shifted: Vec<Expr> = exprs.iter().map(|e| e.shift_time(shift)).collect();
            let history = History::new(&shifted)?;
            Ok(HistoryBlock { index, exprs: shifted, history })
        })
        .collect()
}

fn source(block: usize, lag: usize) -> Source {
    if lag == 0 {
        Source::Current
    } else if block >= lag {
        Source::Block(block - lag)
    } else {
        Source::History(block as i64 - lag as i64)
    }
}

/// Build the stacked problem for `p` on `lattice`.
pub fn lift_problem(p: &ProblemDef, lattice: &DelayLattice) -> Result<LiftedProblem, LiftError> {
    let (k, l, nb) = (lattice.k, lattice.l, lattice.n_blocks);
    let h = lattice.h;
    let state_history = history_blocks(&p.phi, h, k + l)?;
    let control_history = history_blocks(&p.psi, h, l)?;
    let span_total = lattice.b - lattice.a;
    let wiring = (0..nb)
        .map(|i| {
            let start = h * Rational::from_integer(i as i64);
            let remaining = span_total - start;
            BlockWiring {
                block: i,
                time_shift: start,
                delayed_state: source(i, k),
                delayed_control: source(i, l),
                cost_span: if remaining < h { remaining } else { h },
                holds_terminal: i + 1 == nb,
            }
        })
        .collect();
    let mut stacked_terminal = vec![Bound::Free; p.n * (nb - 1)];
    stacked_terminal.extend_from_slice(&p.terminal);
    let lp = LiftedProblem {
        base: p.clone(),
        lattice: *lattice,
        dynamics: Dynamics::new(p)?,
        state_dim: p.n * nb,
        control_dim: p.m * nb,
        state_history,
        control_history,
        wiring,
        initial_state: p.initial_state()?,
        stacked_omega: p.omega.iter().copied().cycle().take(p.m * nb).collect(),
        stacked_terminal,
    };
    lp.check_wiring()?;
    Ok(lp)
}

impl LiftedProblem {
    pub fn n_blocks(&self) -> usize {
        self.lattice.n_blocks
    }

    pub fn state_history_block(&self, index: i64) -> Option<&HistoryBlock> {
        self.state_history.iter().find(|b| b.index == index)
    }

    pub fn control_history_block(&self, index: i64) -> Option<&HistoryBlock> {
        self.control_history.iter().find(|b| b.index == index)
    }

    /// Every argument slot resolves to exactly one earlier block or history block.
    pub fn check_wiring(&self) -> Result<(), LiftError> {
        if self.wiring.len() != self.n_blocks() {
            return Err(LiftError::Wiring {
                block: self.wiring.len(),
                reason: format!("table has {} rows for {} blocks", self.wiring.len(), self.n_blocks()),
            });
        }
        for w in &self.wiring {
            let bad = |reason: String| Err(LiftError::Wiring { block: w.block, reason });
            for (src, is_state) in [(w.delayed_state, true), (w.delayed_control, false)] {
                match src {
                    Source::Current => {
                        let lag = if is_state { self.lattice.k } else { self.lattice.l };
                        if lag != 0 {
                            return bad("current-value source with a nonzero delay".into());
                        }
                    }
                    Source::Block(j) if j >= w.block => return bad(format!("reads later block {j}")),
                    Source::Block(_) => {}
                    Source::History(j) => {
                        let found = if is_state {
                            self.state_history_block(j).is_some()
                        } else {
                            self.control_history_block(j).is_some()
                        };
                        if !found {
                            return bad(format!("history block {j} does not exist"));
                        }
                    }
                }
            }
            if w.cost_span <= Rational::zero() || w.cost_span > self.lattice.h {
                return bad(format!("cost span {} outside (0, h]", w.cost_span));
            }
        }
        Ok(())
    }

    fn delayed_state_into(&self, src: Source, t: f64, xi: &[f64], own: &[f64], out: &mut [f64]) -> Result<(), LiftError> {
        let n = self.base.n;
        match src {
            Source::Current => out.copy_from_slice(own),
            Source::Block(j) => out.copy_from_slice(&xi[j * n..(j + 1) * n]),
            Source::History(j) => self.state_history_block(j).expect("checked wiring").history.eval_into(t, out)?,
        }
        Ok(())
    }

    fn delayed_control_into(&self, src: Source, t: f64, th: &[f64], own: &[f64], out: &mut [f64]) -> Result<(), LiftError> {
        let m = self.base.m;
        match src {
            Source::Current => out.copy_from_slice(own),
            Source::Block(j) => out.copy_from_slice(&th[j * m..(j + 1) * m]),
            Source::History(j) => self.control_history_block(j).expect("checked wiring").history.eval_into(t, out)?,
        }
        Ok(())
    }

    fn check_stacked(&self, xi: &[f64], theta: &[f64]) -> Result<(), LiftError> {
        if xi.len() != self.state_dim || theta.len() != self.control_dim {
            return Err(LiftError::Shape(format!(
                "stacked arguments have lengths {} and {}, expected {} and {}",
                xi.len(),
                theta.len(),
                self.state_dim,
                self.control_dim
            )));
        }
        Ok(())
    }

    /// Per-block `f0` values at local time `t` (before truncation at `b`).
    fn block_terms(&self, t: f64, xi: &[f64], theta: &[f64], mut each: impl FnMut(usize, &crate::model::Slots<f64>) -> Result<(), LiftError>) -> Result<(), LiftError> {
        self.check_stacked(xi, theta)?;
        let (n, m) = (self.base.n, self.base.m);
        let mut slots = self.dynamics.slots::<f64>();
        for w in &self.wiring {
            let i = w.block;
            let own_x = &xi[i * n..(i + 1) * n];
            let own_u = &theta[i * m..(i + 1) * m];
            slots.set_t(t + to_f64(w.time_shift));
            slots.x_mut().copy_from_slice(own_x);
            slots.u_mut().copy_from_slice(own_u);
            self.delayed_state_into(w.delayed_state, t, xi, own_x, slots.xd_mut())?;
            self.delayed_control_into(w.delayed_control, t, theta, own_u, slots.ud_mut())?;
            each(i, &slots)?;
        }
        Ok(())
    }

    /// Stacked right-hand side `F(t, ξ, θ)`.
    pub fn stacked_dynamics(&self, t: f64, xi: &[f64], theta: &[f64]) -> Result<Vec<f64>, LiftError> {
        let n = self.base.n;
        let mut out = vec![0.0; self.state_dim];
        let mut stack = Vec::new();
        self.block_terms(t, xi, theta, |i, slots| {
            self.dynamics.rhs(slots, &mut out[i * n..(i + 1) * n], &mut stack)?;
            Ok(())
        })?;
        Ok(out)
    }

    /// Stacked running cost `F⁰(t, ξ, θ) = Σ_i f⁰(t + h·i, ...)`.
    pub fn stacked_running_cost(&self, t: f64, xi: &[f64], theta: &[f64]) -> Result<f64, LiftError> {
        let mut total = 0.0;
        let mut stack = Vec::new();
        self.block_terms(t, xi, theta, |_, slots| {
            total += self.dynamics.running_cost(slots, &mut stack)?;
            Ok(())
        })?;
        Ok(total)
    }

    /// Stacked terminal cost: `g0` of the last block.
    pub fn stacked_terminal_cost(&self, xi: &[f64]) -> Result<f64, LiftError> {
        let n = self.base.n;
        if xi.len() != self.state_dim {
            return Err(LiftError::Shape(format!("stacked state has length {}, expected {}", xi.len(), self.state_dim)));
        }
        Ok(self.dynamics.terminal_cost(&xi[self.state_dim - n..])?)
    }

    /// Plain-text dump of the wiring table.
    pub fn wiring_report(&self) -> String {
        let mut s = String::new();
        let lat = &self.lattice;
        let _ = writeln!(s, "lattice: {lat}");
        let _ = writeln!(
            s,
            "stacked state dim {}, stacked control dim {}, blocks {}",
            self.state_dim, self.control_dim, lat.n_blocks
        );
        let _ = writeln!(s, "{:>5}  {:>8}  {:>10}  {:>10}  {:>8}  terminal", "block", "shift", "x(t-r)", "u(t-s)", "cost");
        for w in &self.wiring {
            let _ = writeln!(
                s,
                "{:>5}  {:>8}  {:>10}  {:>10}  {:>8}  {}",
                w.block,
                w.time_shift.to_string(),
                w.delayed_state.label("xi"),
                w.delayed_control.label("theta"),
                w.cost_span.to_string(),
                if w.holds_terminal { "yes" } else { "no" }
            );
        }
        for hb in &self.state_history {
            let exprs: Vec<String> = hb.exprs.iter().map(|e| e.to_string()).collect();
            let _ = writeln!(s, "state history [{}] = {}", hb.index, exprs.join("; "));
        }
        for hb in &self.control_history {
            let exprs: Vec<String> = hb.exprs.iter().map(|e| e.to_string()).collect();
            let _ = writeln!(s, "control history [{}] = {}", hb.index, exprs.join("; "));
        }
        s
    }
}

/// Control of one stacked block on `[a, a + h]`.
#[derive(Debug, Clone)]
pub enum BlockControl {
    /// Expressions in local time.
    Pieces(Piecewise),
    /// `q` equal samples across the block, `q × m` values.
    Samples { q: usize, values: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct StackedControl {
    pub m: usize,
    pub blocks: Vec<BlockControl>,
}

impl StackedControl {
    /// Control of `block` during step `step` of `substeps` at local fraction `theta`.
    pub fn eval_in_step(&self, lattice: &DelayLattice, block: usize, step: usize, substeps: usize, theta: f64, out: &mut [f64]) -> Result<(), ModelError> {
        match &self.blocks[block] {
            BlockControl::Pieces(p) => {
                let (a, h) = (lattice.a_f64(), lattice.h_f64());
                let t = a + h * ((step as f64 + theta) / substeps as f64);
                let mid = a + h * ((step as f64 + 0.5) / substeps as f64);
                let idx = p.locate_right(mid).ok_or(ModelError::OutOfDomain { t: mid, lo: a, hi: a + h })?;
                p.eval_piece(idx, &[t], out)?;
            }
            BlockControl::Samples { q, values } => {
                let idx = sample_index(step, substeps, *q);
                out.copy_from_slice(&values[idx * self.m..(idx + 1) * self.m]);
            }
        }
        Ok(())
    }
}

/// Sample owning integration step `step` when a block has `q` samples.
pub fn sample_index(step: usize, substeps: usize, q: usize) -> usize {
    (((step as f64 + 0.5) * q as f64 / substeps as f64).floor() as usize).min(q - 1)
}

/// `θ_i(t) = u(t + h·i)` for every block.
///
/// A piecewise body ending at `b < b̃` is continued to `b̃` with its last
/// piece. A sampled body needs a whole number of samples per block.
pub fn stack_control(u: &ControlSignal, lattice: &DelayLattice) -> Result<StackedControl, LiftError> {
    let nb = lattice.n_blocks;
    let h = lattice.h;
    let blocks = match &u.body {
        ControlBody::Pieces(body) => {
            let body = body.extend_to(lattice.b_tilde)?;
            if body.start() > lattice.a || body.end() < lattice.b_tilde {
                return Err(LiftError::Shape(format!(
                    "control body covers [{}, {}], needs [{}, {}]",
                    body.start(),
                    body.end(),
                    lattice.a,
                    lattice.b_tilde
                )));
            }
            (0..nb)
                .map(|i| {
                    let shift = h * Rational::from_integer(i as i64);
                    let (lo, hi) = (lattice.a + shift, lattice.a + shift + h);
                    let mut pieces = Vec::new();
                    for p in body.pieces() {
                        let start = if p.start > lo { p.start } else { lo };
                        let end = if p.end < hi { p.end } else { hi };
                        if start < end {
                            let shift_f = to_f64(shift);
                            let exprs = p.exprs.iter().map(|e| e.shift_time(shift_f)).collect();
                            pieces.push((start - shift, end - shift, exprs));
                        }
                    }
                    Ok(BlockControl::Pieces(Piecewise::new(body.layout(), pieces)?))
                })
                .collect::<Result<Vec<_>, LiftError>>()?
        }
        ControlBody::Sampled(sm) => {
            let m = u.m;
            let per = lattice.h_f64() / sm.dt;
            let q = per.round() as usize;
            if q == 0 || (per - q as f64).abs() > 1e-9 * per.max(1.0) || (sm.start - lattice.a_f64()).abs() > 1e-12 {
                return Err(LiftError::Shape("sample spacing must divide the lattice step".into()));
            }
            let count = sm.count(m);
            (0..nb)
                .map(|i| {
                    let values = (0..q)
                        .flat_map(|j| {
                            let idx = (i * q + j).min(count - 1);
                            sm.values[idx * m..(idx + 1) * m].iter().copied()
                        })
                        .collect();
                    BlockControl::Samples { q, values }
                })
                .collect()
        }
    };
    Ok(StackedControl { m: u.m, blocks })
}

/// Inverse of [`stack_control`]: a control on `[a − s, b̃]` with history `psi`.
pub fn unstack_control(theta: &StackedControl, lp: &LiftedProblem) -> Result<ControlSignal, LiftError> {
    let lat = &lp.lattice;
    let (a, s) = (lat.a_f64(), to_f64(lp.base.s));
    let first = theta.blocks.first().ok_or_else(|| LiftError::Shape("no blocks".into()))?;
    match first {
        BlockControl::Pieces(p0) => {
            let mut pieces = Vec::new();
            for (i, b) in theta.blocks.iter().enumerate() {
                let BlockControl::Pieces(p) = b else {
                    return Err(LiftError::Shape("mixed block control kinds".into()));
                };
                let shift = lat.h * Rational::from_integer(i as i64);
                let shift_f = to_f64(shift);
                for piece in p.pieces() {
                    let exprs = piece.exprs.iter().map(|e| e.shift_time(-shift_f)).collect();
                    pieces.push((piece.start + shift, piece.end + shift, exprs));
                }
            }
            let body = Piecewise::new(p0.layout(), pieces)?;
            Ok(ControlSignal::from_pieces(&lp.base.psi, a, s, body)?)
        }
        BlockControl::Samples { q, .. } => {
            let q = *q;
            let mut values = Vec::with_capacity(q * theta.m * theta.blocks.len());
            for b in &theta.blocks {
                match b {
                    BlockControl::Samples { q: qb, values: v } if *qb == q => values.extend_from_slice(v),
                    _ => return Err(LiftError::Shape("blocks disagree on sampling".into())),
                }
            }
            let samples = Sampled { start: a, dt: lat.h_f64() / q as f64, values };
            Ok(ControlSignal::from_samples(&lp.base.psi, a, s, samples)?)
        }
    }
}

/// Per-block paths of the stacked state on the local grid `a + j·h/sub`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedPath<T> {
    pub substeps: usize,
    pub blocks: Vec<Path<T>>,
}

impl StackedPath<f64> {
    /// `ξ(t)` at local grid node `j` as one stacked vector.
    pub fn stacked_node(&self, j: usize) -> Vec<f64> {
        self.blocks.iter().flat_map(|p| p.node(j).iter().copied()).collect()
    }

    /// Largest `|ξ_i(a + h) − ξ_{i+1}(a)|`.
    pub fn link_gap(&self) -> f64 {
        self.blocks
            .windows(2)
            .flat_map(|w| w[0].last().iter().zip(w[1].node(0)).map(|(p, q)| (p - q).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }
}

/// Cut a trajectory on `[a, b̃]` into blocks.
pub fn stack_state(traj: &Trajectory, lattice: &DelayLattice) -> Result<StackedPath<f64>, LiftError> {
    let sub = traj.substeps;
    let nb = lattice.n_blocks;
    if traj.path.steps() != sub * nb {
        return Err(LiftError::Shape(format!(
            "trajectory has {} steps, lattice needs {}",
            traj.path.steps(),
            sub * nb
        )));
    }
    let n = traj.n();
    let p = &traj.path;
    let blocks = (0..nb)
        .map(|i| {
            let (s0, s1) = (i * sub, (i + 1) * sub);
            Path {
                n,
                values: p.values[s0 * n..(s1 + 1) * n].to_vec(),
                slope_start: p.slope_start[s0 * n..s1 * n].to_vec(),
                slope_end: p.slope_end[s0 * n..s1 * n].to_vec(),
            }
        })
        .collect();
    Ok(StackedPath { substeps: sub, blocks })
}

/// Glue the blocks back into one trajectory on `[a, b̃]`.
///
/// Shared endpoints take the later block's left value after checking the
/// linking condition.
pub fn unstack_state(path: &StackedPath<f64>, lp: &LiftedProblem) -> Result<Trajectory, LiftError> {
    let n = lp.base.n;
    if path.blocks.len() != lp.n_blocks() {
        return Err(LiftError::Shape(format!("{} blocks, expected {}", path.blocks.len(), lp.n_blocks())));
    }
    for (i, w) in path.blocks.windows(2).enumerate() {
        let gap = w[0].last().iter().zip(w[1].node(0)).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        if !(gap <= LINK_TOL) {
            return Err(LiftError::Linking { block: i, gap });
        }
    }
    let mut values = Vec::with_capacity((lp.n_blocks() * path.substeps + 1) * n);
    let mut slope_start = Vec::new();
    let mut slope_end = Vec::new();
    for (i, b) in path.blocks.iter().enumerate() {
        let last = i + 1 == path.blocks.len();
        let take = if last { b.values.len() } else { b.values.len() - n };
        values.extend_from_slice(&b.values[..take]);
        slope_start.extend_from_slice(&b.slope_start);
        slope_end.extend_from_slice(&b.slope_end);
    }
    Ok(Trajectory {
        a: lp.lattice.a_f64(),
        h: lp.lattice.h_f64(),
        substeps: path.substeps,
        domain_start: to_f64(lp.lattice.a - lp.base.r - lp.base.s),
        path: Path { n, values, slope_start, slope_end },
        history: History::new(&lp.base.phi)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprdsl::parse;
    use crate::model::{build_lattice, rational};

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

    fn lifted() -> LiftedProblem {
        let p = gollmann();
        let lat = build_lattice(&p).unwrap();
        lift_problem(&p, &lat).unwrap()
    }

    #[test]
    fn gollmann_wiring() {
        let lp = lifted();
        assert_eq!(lp.state_dim, 6);
        assert_eq!(lp.control_dim, 6);
        let idx: Vec<i64> = lp.state_history.iter().map(|b| b.index).collect();
        assert_eq!(idx, vec![-6, -5, -4, -3, -2, -1]);
        let idx: Vec<i64> = lp.control_history.iter().map(|b| b.index).collect();
        assert_eq!(idx, vec![-4, -3, -2, -1]);
        for hb in &lp.state_history {
            assert_eq!(hb.history.eval(0.2).unwrap(), vec![1.0]);
        }
        for hb in &lp.control_history {
            assert_eq!(hb.history.eval(0.2).unwrap(), vec![0.0]);
        }
        assert_eq!(lp.wiring[0].delayed_state, Source::History(-2));
        assert_eq!(lp.wiring[0].delayed_control, Source::History(-4));
        assert_eq!(lp.wiring[5].delayed_state, Source::Block(3));
        assert_eq!(lp.wiring[5].delayed_control, Source::Block(1));
        assert!(lp.wiring[5].holds_terminal && !lp.wiring[4].holds_terminal);
    }

    #[test]
    fn block_zero_dynamics_reads_history() {
        let lp = lifted();
        let xi = [2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let theta = [0.5, 1.5, 2.5, 3.5, 4.5, 5.5];
        let f = lp.stacked_dynamics(0.25, &xi, &theta).unwrap();
        // block 0: hist * hist = 1 * 0; block 4: xi_2 * theta_0; block 5: xi_3 * theta_1
        assert_eq!(f[0], 0.0);
        assert_eq!(f[4], 4.0 * 0.5);
        assert_eq!(f[5], 5.0 * 1.5);
        assert_eq!(lp.stacked_terminal_cost(&xi).unwrap(), 0.0);
        let c = lp.stacked_running_cost(0.25, &xi, &theta).unwrap();
        let want: f64 = xi.iter().zip(&theta).map(|(x, u)| x * x + u * u).sum();
        assert!((c - want).abs() < 1e-12);
    }

    #[test]
    fn extended_horizon_truncates_cost_span() {
        let mut p = gollmann();
        p.b = rational(27, 10);
        let lat = build_lattice(&p).unwrap();
        let lp = lift_problem(&p, &lat).unwrap();
        assert_eq!(lp.wiring[5].cost_span, rational(1, 5));
        assert_eq!(lp.wiring[4].cost_span, rational(1, 2));
        assert_eq!(lp.stacked_terminal.len(), 6);
    }

    #[test]
    fn zero_delay_wires_current_values() {
        let mut p = gollmann();
        p.s = rational(0, 1);
        p.b = rational(4, 1);
        let lat = build_lattice(&p).unwrap();
        let lp = lift_problem(&p, &lat).unwrap();
        assert!(lp.control_history.is_empty());
        assert!(lp.wiring.iter().all(|w| w.delayed_control == Source::Current));
    }

    #[test]
    fn zero_control_stacks_to_zero_blocks() {
        let lp = lifted();
        let body = Piecewise::single(&["t"], rational(0, 1), rational(3, 1), vec![Expr::num(0.0)]).unwrap();
        let u = ControlSignal::from_pieces(&lp.base.psi, 0.0, 2.0, body).unwrap();
        let st = stack_control(&u, &lp.lattice).unwrap();
        assert_eq!(st.blocks.len(), 6);
        let mut out = [1.0];
        for b in 0..6 {
            st.eval_in_step(&lp.lattice, b, 3, 8, 0.5, &mut out).unwrap();
            assert_eq!(out, [0.0]);
        }
    }

    #[test]
    fn stack_shifts_time() {
        let lp = lifted();
        let body = Piecewise::single(&["t"], rational(0, 1), rational(3, 1), vec![parse("t^2").unwrap()]).unwrap();
        let u = ControlSignal::from_pieces(&lp.base.psi, 0.0, 2.0, body).unwrap();
        let st = stack_control(&u, &lp.lattice).unwrap();
        let mut out = [0.0];
        // block 3, step 2 of 4 at theta 0: local 0.25, absolute 1.75
        st.eval_in_step(&lp.lattice, 3, 2, 4, 0.0, &mut out).unwrap();
        assert!((out[0] - 1.75f64.powi(2)).abs() < 1e-14);
        let back = unstack_control(&st, &lp).unwrap();
        for t in [0.0, 0.3, 1.25, 2.9, 3.0] {
            assert!((back.signal_at(t).unwrap()[0] - t * t).abs() < 1e-12);
        }
        assert_eq!(back.signal_at(-1.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn sampled_roundtrip_is_exact() {
        let lp = lifted();
        let values: Vec<f64> = (0..24).map(|i| i as f64 * 0.1).collect();
        let u = ControlSignal::from_samples(&lp.base.psi, 0.0, 2.0, Sampled { start: 0.0, dt: 0.125, values: values.clone() })
            .unwrap();
        let st = stack_control(&u, &lp.lattice).unwrap();
        let back = unstack_control(&st, &lp).unwrap();
        match back.body {
            ControlBody::Sampled(sm) => assert_eq!(sm.values, values),
            _ => panic!("expected samples"),
        }
        let bad = ControlSignal::from_samples(&lp.base.psi, 0.0, 2.0, Sampled { start: 0.0, dt: 0.3, values: vec![0.0; 10] })
            .unwrap();
        assert!(matches!(stack_control(&bad, &lp.lattice), Err(LiftError::Shape(_))));
    }

    fn constant_path(lp: &LiftedProblem, sub: usize, c: f64) -> StackedPath<f64> {
        let blocks = (0..lp.n_blocks())
            .map(|_| Path { n: 1, values: vec![c; sub + 1], slope_start: vec![0.0; sub], slope_end: vec![0.0; sub] })
            .collect();
        StackedPath { substeps: sub, blocks }
    }

    #[test]
    fn constant_blocks_unstack_to_constant() {
        let lp = lifted();
        let sp = constant_path(&lp, 4, 2.5);
        let traj = unstack_state(&sp, &lp).unwrap();
        assert_eq!(traj.len(), 25);
        assert!(traj.path.values.iter().all(|v| *v == 2.5));
        assert_eq!(stack_state(&traj, &lp.lattice).unwrap(), sp);
    }

    #[test]
    fn linking_violation_is_reported() {
        let lp = lifted();
        let mut sp = constant_path(&lp, 4, 1.0);
        sp.blocks[3].values[0] = 1.1;
        match unstack_state(&sp, &lp) {
            Err(LiftError::Linking { block, gap }) => {
                assert_eq!(block, 2);
                assert!((gap - 0.1).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wiring_report_lists_blocks() {
        let report = lifted().wiring_report();
        assert!(report.contains("h = 1/2, k = 2, l = 4, N = 6, b~ = 3"));
        assert!(report.contains("hist[-2]"));
        assert!(report.contains("xi[3]"));
        assert_eq!(report.lines().filter(|l| l.starts_with("state history")).count(), 6);
    }
}
