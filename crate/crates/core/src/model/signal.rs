use super::rational::{to_f64, Rational};
use super::ModelError;
use crate::exprdsl::{EvalError, Expr, Program, Scalar};

/// Slack used when deciding whether a float time lies inside a closed interval.
pub const TIME_EPS: f64 = 1e-9;

/// One closed interval `[start, end]` carrying one expression per component.
#[derive(Debug, Clone)]
pub struct Piece {
    pub start: Rational,
    pub end: Rational,
    pub exprs: Vec<Expr>,
    programs: Vec<Program>,
}

/// Vector-valued function defined by contiguous pieces of expressions.
///
/// The first layout variable is always `t`; extra variables (for instance
/// `x0..` for a value function) follow it.
#[derive(Debug, Clone)]
pub struct Piecewise {
    layout: Vec<String>,
    pieces: Vec<Piece>,
}

impl Piecewise {
    pub fn new<S: AsRef<str>>(layout: &[S], pieces: Vec<(Rational, Rational, Vec<Expr>)>) -> Result<Self, ModelError> {
        let layout: Vec<String> = layout.iter().map(|s| s.as_ref().to_string()).collect();
        if pieces.is_empty() {
            return Err(ModelError::Pieces("no pieces given".into()));
        }
        let dim = pieces[0].2.len();
        let mut out: Vec<Piece> = Vec::with_capacity(pieces.len());
        for (start, end, exprs) in pieces {
            if start >= end {
                return Err(ModelError::Pieces(format!("empty piece [{start}, {end}]")));
            }
            if exprs.len() != dim {
                return Err(ModelError::Pieces(format!(
                    "piece [{start}, {end}] has {} components, expected {dim}",
                    exprs.len()
                )));
            }
            if let Some(prev) = out.last() {
                if prev.end != start {
                    return Err(ModelError::Pieces(format!(
                        "pieces must be contiguous: [{}, {}] followed by [{start}, {end}]",
                        prev.start, prev.end
                    )));
                }
            }
            let programs =
                exprs.iter().map(|e| Program::compile(e, &layout)).collect::<Result<Vec<_>, EvalError>>()?;
            out.push(Piece { start, end, exprs, programs });
        }
        Ok(Piecewise { layout, pieces: out })
    }

    /// Single piece on `[start, end]`.
    pub fn single<S: AsRef<str>>(layout: &[S], start: Rational, end: Rational, exprs: Vec<Expr>) -> Result<Self, ModelError> {
        Piecewise::new(layout, vec![(start, end, exprs)])
    }

    pub fn layout(&self) -> &[String] {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.pieces[0].exprs.len()
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn start(&self) -> Rational {
        self.pieces[0].start
    }

    pub fn end(&self) -> Rational {
        self.pieces[self.pieces.len() - 1].end
    }

    /// Interior breakpoints.
    pub fn breakpoints(&self) -> Vec<Rational> {
        self.pieces.iter().skip(1).map(|p| p.start).collect()
    }

    /// First piece whose closed interval contains `t` (so a shared breakpoint
    /// belongs to the left piece).
    pub fn locate(&self, t: f64) -> Option<usize> {
        let first = to_f64(self.start());
        let last = to_f64(self.end());
        if t < first - TIME_EPS || t > last + TIME_EPS {
            return None;
        }
        Some(self.pieces.iter().position(|p| t <= to_f64(p.end)).unwrap_or(self.pieces.len() - 1))
    }

    /// Piece containing `t` in its half-open interval `[start, end)`; the last
    /// piece also owns the right end.
    pub fn locate_right(&self, t: f64) -> Option<usize> {
        let first = to_f64(self.start());
        let last = to_f64(self.end());
        if t < first - TIME_EPS || t > last + TIME_EPS {
            return None;
        }
        Some(self.pieces.iter().position(|p| t < to_f64(p.end)).unwrap_or(self.pieces.len() - 1))
    }

    /// Evaluate piece `idx` with slot values `args` (`t` first).
    pub fn eval_piece<T: Scalar>(&self, idx: usize, args: &[T], out: &mut [T]) -> Result<(), EvalError> {
        for (o, p) in out.iter_mut().zip(&self.pieces[idx].programs) {
            *o = p.eval(args)?;
        }
        Ok(())
    }

    /// Evaluate at time `t` (left piece at breakpoints); `extra` fills the
    /// layout slots after `t`.
    pub fn eval(&self, t: f64, extra: &[f64]) -> Result<Vec<f64>, ModelError> {
        let idx = self.locate(t).ok_or_else(|| self.out_of_domain(t))?;
        let mut args = Vec::with_capacity(1 + extra.len());
        args.push(t);
        args.extend_from_slice(extra);
        let mut out = vec![0.0; self.dim()];
        self.eval_piece(idx, &args, &mut out)?;
        Ok(out)
    }

    fn out_of_domain(&self, t: f64) -> ModelError {
        ModelError::OutOfDomain { t, lo: to_f64(self.start()), hi: to_f64(self.end()) }
    }

    /// Copy with the last piece stretched to `end` when the pieces stop short.
    pub fn extend_to(&self, end: Rational) -> Result<Piecewise, ModelError> {
        let mut pieces: Vec<_> = self.pieces.iter().map(|p| (p.start, p.end, p.exprs.clone())).collect();
        if let Some(last) = pieces.last_mut() {
            if last.1 < end {
                last.1 = end;
            }
        }
        Piecewise::new(&self.layout, pieces)
    }

    /// Map every piece through `f`, keeping intervals.
    pub fn map_exprs(&self, f: impl Fn(&Expr) -> Expr) -> Result<Piecewise, ModelError> {
        let pieces = self.pieces.iter().map(|p| (p.start, p.end, p.exprs.iter().map(&f).collect())).collect();
        Piecewise::new(&self.layout, pieces)
    }
}

/// Compiled history functions (`phi` or `psi`), all expressions in `t`.
#[derive(Debug, Clone)]
pub struct History {
    pub exprs: Vec<Expr>,
    programs: Vec<Program>,
}

impl History {
    pub fn new(exprs: &[Expr]) -> Result<Self, ModelError> {
        let programs = exprs.iter().map(|e| Program::compile(e, &["t"])).collect::<Result<Vec<_>, _>>()?;
        Ok(History { exprs: exprs.to_vec(), programs })
    }

    pub fn eval_into<T: Scalar>(&self, t: f64, out: &mut [T]) -> Result<(), EvalError> {
        let arg = [t];
        for (o, p) in out.iter_mut().zip(&self.programs) {
            *o = T::constant(p.eval(&arg)?);
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.programs.len()];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }
}

/// Uniformly sampled piecewise-constant control body.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub start: f64,
    pub dt: f64,
    /// `count × m` values, row-major by sample.
    pub values: Vec<f64>,
}

impl Sampled {
    pub fn count(&self, m: usize) -> usize {
        self.values.len() / m
    }
}

#[derive(Debug, Clone)]
pub enum ControlBody {
    Pieces(Piecewise),
    Sampled(Sampled),
}

/// Control `u` on `[a - s, b̃]`: history `psi` before `a`, then the body.
#[derive(Debug, Clone)]
pub struct ControlSignal {
    pub m: usize,
    pub a: f64,
    pub domain_start: f64,
    pub end: f64,
    pub history: History,
    pub body: ControlBody,
}

impl ControlSignal {
    pub fn from_pieces(psi: &[Expr], a: f64, s: f64, body: Piecewise) -> Result<Self, ModelError> {
        let history = History::new(psi)?;
        if body.dim() != psi.len() {
            return Err(ModelError::Pieces(format!(
                "control body has {} components, history has {}",
                body.dim(),
                psi.len()
            )));
        }
        Ok(ControlSignal {
            m: psi.len(),
            a,
            domain_start: a - s,
            end: to_f64(body.end()),
            history,
            body: ControlBody::Pieces(body),
        })
    }

    pub fn from_samples(psi: &[Expr], a: f64, s: f64, samples: Sampled) -> Result<Self, ModelError> {
        let history = History::new(psi)?;
        let m = psi.len();
        if m == 0 || samples.values.len() % m != 0 || samples.values.is_empty() {
            return Err(ModelError::Pieces("sample count does not match control dimension".into()));
        }
        let end = samples.start + samples.dt * samples.count(m) as f64;
        Ok(ControlSignal { m, a, domain_start: a - s, end, history, body: ControlBody::Sampled(samples) })
    }

    /// Value at `t`: history before `a`, left-continuous in the body.
    pub fn signal_at(&self, t: f64) -> Result<Vec<f64>, ModelError> {
        if t < self.domain_start - TIME_EPS || t > self.end + TIME_EPS {
            return Err(ModelError::OutOfDomain { t, lo: self.domain_start, hi: self.end });
        }
        if t < self.a {
            return Ok(self.history.eval(t)?);
        }
        match &self.body {
            ControlBody::Pieces(p) => p.eval(t, &[]),
            ControlBody::Sampled(sm) => {
                let pos = ((t - sm.start) / sm.dt).ceil() as i64 - 1;
                let idx = pos.clamp(0, sm.count(self.m) as i64 - 1) as usize;
                Ok(sm.values[idx * self.m..(idx + 1) * self.m].to_vec())
            }
        }
    }

    /// Value at `time` for an integration step whose interior contains `mid`.
    ///
    /// The piece (or sample) is chosen by `mid`, so a step never straddles a
    /// jump: stage evaluations at the step's end use the step's own piece.
    pub fn value_in_step<T: Scalar>(&self, time: f64, mid: f64, out: &mut [T]) -> Result<(), ModelError> {
        if mid < self.a {
            return Ok(self.history.eval_into(time, out)?);
        }
        match &self.body {
            ControlBody::Pieces(p) => {
                let idx = p.locate_right(mid).ok_or(ModelError::OutOfDomain { t: mid, lo: self.a, hi: self.end })?;
                let arg = [T::constant(time)];
                p.eval_piece(idx, &arg, out)?;
            }
            ControlBody::Sampled(sm) => {
                let idx = (((mid - sm.start) / sm.dt).floor() as i64).clamp(0, sm.count(self.m) as i64 - 1) as usize;
                for (o, v) in out.iter_mut().zip(&sm.values[idx * self.m..(idx + 1) * self.m]) {
                    *o = T::constant(*v);
                }
            }
        }
        Ok(())
    }

    /// Largest violation of `omega` over the body sampled at `times`.
    pub fn bound_violation(&self, omega: &[super::Bound], times: &[f64]) -> Result<f64, ModelError> {
        let mut worst: f64 = 0.0;
        for &t in times {
            let u = self.signal_at(t)?;
            for (v, b) in u.iter().zip(omega) {
                worst = worst.max(b.distance(*v));
            }
        }
        Ok(worst)
    }
}

/// Node values plus per-step endpoint slopes of an RK integration, enough for
/// cubic Hermite reconstruction inside every step.
#[derive(Debug, Clone, PartialEq)]
pub struct Path<T> {
    pub n: usize,
    pub values: Vec<T>,
    pub slope_start: Vec<T>,
    pub slope_end: Vec<T>,
}

impl<T: Scalar> Path<T> {
    pub fn new(x0: &[T]) -> Self {
        Path { n: x0.len(), values: x0.to_vec(), slope_start: Vec::new(), slope_end: Vec::new() }
    }

    pub fn steps(&self) -> usize {
        if self.n == 0 {
            0
        } else {
            self.slope_start.len() / self.n
        }
    }

    pub fn node(&self, j: usize) -> &[T] {
        &self.values[j * self.n..(j + 1) * self.n]
    }

    pub fn last(&self) -> &[T] {
        let len = self.values.len();
        &self.values[len - self.n..]
    }

    pub fn push_step(&mut self, start_slope: &[T], end_slope: &[T], next: &[T]) {
        self.slope_start.extend_from_slice(start_slope);
        self.slope_end.extend_from_slice(end_slope);
        self.values.extend_from_slice(next);
    }

    /// State inside step `step` at fraction `theta ∈ [0, 1]`.
    pub fn hermite(&self, step: usize, theta: f64, dt: f64, out: &mut [T]) {
        let n = self.n;
        if theta == 0.0 {
            out.copy_from_slice(self.node(step));
            return;
        }
        if theta == 1.0 {
            out.copy_from_slice(self.node(step + 1));
            return;
        }
        let (t2, t3) = (theta * theta, theta * theta * theta);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = (t3 - 2.0 * t2 + theta) * dt;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = (t3 - t2) * dt;
        let y0 = self.node(step);
        let y1 = self.node(step + 1);
        let d0 = &self.slope_start[step * n..(step + 1) * n];
        let d1 = &self.slope_end[step * n..(step + 1) * n];
        for i in 0..n {
            out[i] = y0[i].scale(h00) + d0[i].scale(h10) + y1[i].scale(h01) + d1[i].scale(h11);
        }
    }
}

/// Simulated state on the grid `a + j·h/substeps`, with the history `phi`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub a: f64,
    pub h: f64,
    pub substeps: usize,
    pub domain_start: f64,
    pub path: Path<f64>,
    pub history: History,
}

impl Trajectory {
    pub fn n(&self) -> usize {
        self.path.n
    }

    pub fn dt(&self) -> f64 {
        self.h / self.substeps as f64
    }

    pub fn len(&self) -> usize {
        self.path.steps() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node_time(&self, j: usize) -> f64 {
        self.a + self.h * (j as f64 / self.substeps as f64)
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.node_time(j)).collect()
    }

    pub fn end(&self) -> f64 {
        self.node_time(self.len() - 1)
    }

    pub fn node(&self, j: usize) -> &[f64] {
        self.path.node(j)
    }

    /// State at `t`: history on `[a-r-s, a]`, exact at grid nodes, linear
    /// interpolation between them.
    pub fn signal_at(&self, t: f64) -> Result<Vec<f64>, ModelError> {
        let end = self.end();
        if t < self.domain_start - TIME_EPS || t > end + TIME_EPS {
            return Err(ModelError::OutOfDomain { t, lo: self.domain_start, hi: end });
        }
        if t < self.a {
            return Ok(self.history.eval(t)?);
        }
        let pos = (t - self.a) / self.dt();
        let near = pos.round();
        if (pos - near).abs() <= 1e-9 * pos.abs().max(1.0) {
            let j = (near as usize).min(self.len() - 1);
            return Ok(self.node(j).to_vec());
        }
        let j = (pos.floor() as usize).min(self.len() - 2);
        let w = pos - j as f64;
        let (y0, y1) = (self.node(j), self.node(j + 1));
        Ok(y0.iter().zip(y1).map(|(p, q)| p + w * (q - p)).collect())
    }

    /// State at `t ≥ a` from the cubic Hermite reconstruction.
    pub fn hermite_at(&self, t: f64) -> Result<Vec<f64>, ModelError> {
        let end = self.end();
        if t < self.a - TIME_EPS || t > end + TIME_EPS {
            return Err(ModelError::OutOfDomain { t, lo: self.a, hi: end });
        }
        let pos = ((t - self.a) / self.dt()).max(0.0);
        let steps = self.path.steps();
        let j = (pos.floor() as usize).min(steps - 1);
        let theta = (pos - j as f64).clamp(0.0, 1.0);
        let mut out = vec![0.0; self.n()];
        self.path.hermite(j, theta, self.dt(), &mut out);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprdsl::parse;
    use crate::model::rational::rational;

    fn pw(pieces: &[(i64, i64, &str)]) -> Piecewise {
        Piecewise::new(
            &["t"],
            pieces.iter().map(|(a, b, e)| (rational(*a, 1), rational(*b, 1), vec![parse(e).unwrap()])).collect(),
        )
        .unwrap()
    }

    #[test]
    fn piecewise_rejects_gaps() {
        let err = Piecewise::new(
            &["t"],
            vec![(rational(0, 1), rational(1, 1), vec![Expr::num(0.0)]), (rational(2, 1), rational(3, 1), vec![Expr::num(0.0)])],
        );
        assert!(matches!(err, Err(ModelError::Pieces(_))));
    }

    #[test]
    fn breakpoint_belongs_to_left_piece() {
        let p = pw(&[(0, 1, "1"), (1, 2, "2")]);
        assert_eq!(p.eval(1.0, &[]).unwrap(), vec![1.0]);
        assert_eq!(p.locate_right(1.0), Some(1));
        assert_eq!(p.eval(2.0, &[]).unwrap(), vec![2.0]);
        assert!(p.eval(2.5, &[]).is_err());
    }

    #[test]
    fn control_history_and_body() {
        let u = ControlSignal::from_pieces(&[Expr::num(0.0)], 0.0, 2.0, pw(&[(0, 3, "t + 1")])).unwrap();
        assert_eq!(u.signal_at(-1.0).unwrap(), vec![0.0]);
        assert_eq!(u.signal_at(0.0).unwrap(), vec![1.0]);
        assert!(u.signal_at(-2.5).is_err());
        assert!(u.signal_at(3.5).is_err());
    }

    #[test]
    fn sampled_control_is_left_continuous() {
        let samples = Sampled { start: 0.0, dt: 0.5, values: vec![1.0, 2.0, 3.0] };
        let u = ControlSignal::from_samples(&[Expr::num(0.0)], 0.0, 1.0, samples).unwrap();
        assert_eq!(u.signal_at(0.0).unwrap(), vec![1.0]);
        assert_eq!(u.signal_at(0.5).unwrap(), vec![1.0]);
        assert_eq!(u.signal_at(0.50001).unwrap(), vec![2.0]);
        assert_eq!(u.signal_at(1.5).unwrap(), vec![3.0]);
        let mut v = [0.0];
        u.value_in_step(0.5, 0.75, &mut v).unwrap();
        assert_eq!(v, [2.0]);
    }

    #[test]
    fn hermite_reproduces_cubic() {
        // y = t^3 on [0, 1] with exact end slopes
        let mut p = Path::new(&[0.0]);
        p.push_step(&[0.0], &[3.0], &[1.0]);
        let mut out = [0.0];
        for theta in [0.1, 0.5, 0.9] {
            p.hermite(0, theta, 1.0, &mut out);
            assert!((out[0] - theta * theta * theta).abs() < 1e-15);
        }
    }
}
