use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};

use super::ModelError;

/// Exact rational number in lowest terms with a positive denominator.
pub type Rational = Ratio<i64>;

pub fn rational(numer: i64, denom: i64) -> Rational {
    Ratio::new(numer, denom)
}

pub fn to_f64(q: Rational) -> f64 {
    q.to_f64().unwrap_or_else(|| *q.numer() as f64 / *q.denom() as f64)
}

/// Parse `p/q`, an integer, or a finite decimal such as `-2.75`.
///
/// Decimals are converted exactly (power-of-ten denominators).
pub fn parse_rational(text: &str) -> Result<Rational, ModelError> {
    let s = text.trim();
    let bad = || ModelError::InvalidRational(text.to_string());
    if let Some((p, q)) = s.split_once('/') {
        let p: i64 = p.trim().parse().map_err(|_| bad())?;
        let q: i64 = q.trim().parse().map_err(|_| bad())?;
        if q == 0 {
            return Err(bad());
        }
        return Ok(Ratio::new(p, q));
    }
    let (negative, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let mut numer: i64 = 0;
    let mut denom: i64 = 1;
    for b in int_part.bytes() {
        numer = numer.checked_mul(10).and_then(|v| v.checked_add((b - b'0') as i64)).ok_or_else(bad)?;
    }
    for b in frac_part.bytes() {
        numer = numer.checked_mul(10).and_then(|v| v.checked_add((b - b'0') as i64)).ok_or_else(bad)?;
        denom = denom.checked_mul(10).ok_or_else(bad)?;
    }
    if negative {
        numer = -numer;
    }
    Ok(Ratio::new(numer, denom))
}

/// Largest rational `g` such that `p/g` and `q/g` are both integers.
///
/// A zero argument is ignored; both zero is an error.
pub fn gcd_rational(p: Rational, q: Rational) -> Result<Rational, ModelError> {
    if p < Rational::zero() || q < Rational::zero() {
        return Err(ModelError::NegativeDelay);
    }
    if p.is_zero() && q.is_zero() {
        return Err(ModelError::BothDelaysZero);
    }
    // for reduced a/b and c/d: gcd = gcd(a, c) / lcm(b, d)
    let num = p.numer().gcd(q.numer());
    let den = p.denom().lcm(q.denom());
    Ok(Ratio::new(num, den))
}

/// Smallest integer `n` with `n ≥ q`.
pub fn ceil_int(q: Rational) -> i64 {
    q.ceil().to_integer()
}
