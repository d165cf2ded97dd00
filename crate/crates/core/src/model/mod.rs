//! Problem definition, commensurability lattice, and time signals.

mod compiled;
mod lattice;
mod problem;
mod rational;
mod signal;

use thiserror::Error;

use crate::exprdsl::EvalError;

pub use compiled::{Dynamics, Slots};
pub use lattice::{build_lattice, DelayLattice, REFINEMENT_CAP};
pub use problem::{validate_problem, Bound, Diagnostic, ProblemDef};
pub use rational::{ceil_int, gcd_rational, parse_rational, rational, to_f64, Rational};
pub use signal::{ControlBody, ControlSignal, History, Path, Piece, Piecewise, Sampled, Trajectory, TIME_EPS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid rational `{0}` (expected p/q or a finite decimal)")]
    InvalidRational(String),
    #[error("delays r and s are both zero")]
    BothDelaysZero,
    #[error("delays must be nonnegative")]
    NegativeDelay,
    #[error("horizon end {b} must exceed start {a}")]
    InvalidHorizon { a: Rational, b: Rational },
    #[error("no lattice with N > 2k + 1 found with step refinement up to {cap}")]
    RefinementCap { cap: i64 },
    #[error("time {t} outside signal domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },
    #[error("invalid piecewise definition: {0}")]
    Pieces(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[cfg(test)]
mod tests {
    use num_traits::Zero;

    use super::*;
    use crate::exprdsl::{parse, Expr};

    fn problem(a: Rational, b: Rational, r: Rational, s: Rational) -> ProblemDef {
        ProblemDef {
            name: "test".into(),
            n: 1,
            m: 1,
            a,
            b,
            r,
            s,
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

    fn q(n: i64, d: i64) -> Rational {
        rational(n, d)
    }

    #[test]
    fn lattice_for_gollmann_needs_one_halving() {
        let lat = build_lattice(&problem(q(0, 1), q(3, 1), q(1, 1), q(2, 1))).unwrap();
        assert_eq!((lat.h, lat.k, lat.l, lat.n_blocks, lat.b_tilde), (q(1, 2), 2, 4, 6, q(3, 1)));
        assert_eq!(lat.refinement, 2);
        assert_eq!(lat.to_string(), "h = 1/2, k = 2, l = 4, N = 6, b~ = 3");
    }

    #[test]
    fn lattice_refinement_matches_exhaustive_divisor_search() {
        // brute force over d = 1..4 for the gollmann example data
        let p = problem(q(0, 1), q(3, 1), q(1, 1), q(2, 1));
        let first_ok = (1..=4)
            .find(|&d| {
                let h = q(1, d);
                let k = (p.r / h).to_integer();
                let n = ceil_int((p.b - p.a) / h);
                n > 2 * k + 1
            })
            .unwrap();
        assert_eq!(build_lattice(&p).unwrap().refinement, first_ok);
    }

    #[test]
    fn lattice_extends_horizon() {
        let lat = build_lattice(&problem(q(0, 1), q(27, 10), q(1, 1), q(2, 1))).unwrap();
        assert_eq!((lat.h, lat.n_blocks, lat.b_tilde), (q(1, 2), 6, q(3, 1)));
        assert!(lat.is_extended());
        assert!(lat.b_tilde >= q(27, 10));
    }

    #[test]
    fn lattice_equal_delays() {
        let lat = build_lattice(&problem(q(0, 1), q(10, 1), q(1, 1), q(1, 1))).unwrap();
        assert_eq!((lat.h, lat.k, lat.l, lat.n_blocks), (q(1, 1), 1, 1, 10));
    }

    #[test]
    fn lattice_refinement_cap() {
        // b - a = 2r can never satisfy N > 2k + 1
        let err = build_lattice(&problem(q(0, 1), q(2, 1), q(1, 1), q(0, 1))).unwrap_err();
        assert_eq!(err, ModelError::RefinementCap { cap: REFINEMENT_CAP });
    }

    #[test]
    fn degenerate_lattice_is_one_block() {
        let mut p = problem(q(0, 1), q(1, 1), q(0, 1), q(0, 1));
        assert_eq!(build_lattice(&p), Err(ModelError::BothDelaysZero));
        p.degenerate = true;
        let lat = build_lattice(&p).unwrap();
        assert_eq!((lat.h, lat.k, lat.l, lat.n_blocks), (q(1, 1), 0, 0, 1));
    }

    #[test]
    fn validation() {
        let p = problem(q(0, 1), q(3, 1), q(1, 1), q(2, 1));
        assert!(validate_problem(&p).is_empty());

        let mut bad = p.clone();
        bad.f0 = parse("x0^2 + eta0").unwrap();
        let d = validate_problem(&bad);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].to_string(), "f0: variable eta0 not permitted");

        let mut bad = p.clone();
        bad.r = Rational::zero();
        bad.s = Rational::zero();
        let d = validate_problem(&bad);
        assert_eq!(d.len(), 1);
        assert!(d[0].message.contains("(r, s) != (0, 0)"));

        let mut bad = p.clone();
        bad.g0 = parse("u0 + x1").unwrap();
        assert_eq!(validate_problem(&bad).len(), 2);

        let mut bad = p.clone();
        bad.b = bad.a;
        assert!(validate_problem(&bad).iter().any(|d| d.field == "b"));

        let mut bad = p;
        bad.omega = vec![Bound::Interval { lo: 1.0, hi: -1.0 }];
        bad.phi = vec![parse("log(t)").unwrap()];
        let d = validate_problem(&bad);
        assert_eq!(d.len(), 2, "{d:?}");
    }

    #[test]
    fn validation_is_idempotent() {
        let mut p = problem(q(0, 1), q(3, 1), q(0, 1), q(0, 1));
        p.f0 = parse("eta0").unwrap();
        assert_eq!(validate_problem(&p), validate_problem(&p));
    }
}
