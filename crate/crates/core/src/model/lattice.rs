use std::fmt;

use num_traits::Zero;

use super::problem::ProblemDef;
use super::rational::{ceil_int, gcd_rational, to_f64, Rational};
use super::ModelError;

/// Largest divisor tried when refining the natural step.
pub const REFINEMENT_CAP: i64 = 1024;

/// Commensurability lattice: `r = h·k`, `s = h·l`, `b̃ = a + N·h ≥ b`, `N > 2k + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelayLattice {
    pub a: Rational,
    pub b: Rational,
    pub h: Rational,
    pub k: usize,
    pub l: usize,
    pub n_blocks: usize,
    pub b_tilde: Rational,
    /// Divisor applied to the natural step `gcd(r, s)`.
    pub refinement: i64,
}

impl DelayLattice {
    pub fn h_f64(&self) -> f64 {
        to_f64(self.h)
    }

    pub fn a_f64(&self) -> f64 {
        to_f64(self.a)
    }

    pub fn b_f64(&self) -> f64 {
        to_f64(self.b)
    }

    pub fn b_tilde_f64(&self) -> f64 {
        to_f64(self.b_tilde)
    }

    /// Left end of lattice interval `i` (may be negative for history intervals).
    pub fn node(&self, i: i64) -> Rational {
        self.a + self.h * Rational::from_integer(i)
    }

    /// Whether the horizon was extended past `b`.
    pub fn is_extended(&self) -> bool {
        self.b_tilde > self.b
    }
}

impl fmt::Display for DelayLattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h = {}, k = {}, l = {}, N = {}, b~ = {}", self.h, self.k, self.l, self.n_blocks, self.b_tilde)
    }
}

/// Build the lattice for `p`.
///
/// Starts from `h₀ = gcd(r, s)` and divides it by the smallest `d` for which
/// `N = ⌈(b−a)/h⌉` satisfies `N > 2k + 1`. In degenerate mode (`r = s = 0`) the
/// lattice is a single block of length `b − a`.
pub fn build_lattice(p: &ProblemDef) -> Result<DelayLattice, ModelError> {
    if p.b <= p.a {
        return Err(ModelError::InvalidHorizon { a: p.a, b: p.b });
    }
    let span = p.b - p.a;
    if p.r.is_zero() && p.s.is_zero() {
        if !p.degenerate {
            return Err(ModelError::BothDelaysZero);
        }
        return Ok(DelayLattice {
            a: p.a,
            b: p.b,
            h: span,
            k: 0,
            l: 0,
            n_blocks: 1,
            b_tilde: p.b,
            refinement: 1,
        });
    }
    let h0 = gcd_rational(p.r, p.s)?;
    for d in 1..=REFINEMENT_CAP {
        let h = h0 / Rational::from_integer(d);
        let k = (p.r / h).to_integer();
        let l = (p.s / h).to_integer();
        let n = ceil_int(span / h);
        if n > 2 * k + 1 {
            return Ok(DelayLattice {
                a: p.a,
                b: p.b,
                h,
                k: k as usize,
                l: l as usize,
                n_blocks: n as usize,
                b_tilde: p.a + h * Rational::from_integer(n),
                refinement: d,
            });
        }
    }
    Err(ModelError::RefinementCap { cap: REFINEMENT_CAP })
}
