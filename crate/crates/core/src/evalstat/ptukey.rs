//! Studentized range distribution.
//!
//! With `W` the range of `k` standard normals and `S² ~ chi²(df) / df`
//! independent of it, `Q = W / S`. For infinite df,
//!
//! `P(W <= q) = k ∫ φ(z) [Φ(z) - Φ(z - q)]^(k-1) dz`
//!
//! and for finite df that probability is averaged over the density of `S`.

use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use super::quadrature::integrate;
use super::StatsError;

const TRUNCATE: f64 = 12.0;
const TOL: f64 = 1e-10;
const INNER_TOL: f64 = 1e-12;

fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn lower(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn upper(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// `P(Z in [z - q, z])`, computed from whichever tail keeps precision.
fn band(z: f64, q: f64) -> f64 {
    if z - 0.5 * q > 0.0 {
        upper(z - q) - upper(z)
    } else {
        lower(z) - lower(z - q)
    }
}

fn range_cdf(q: f64, k: usize) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    let km1 = (k - 1) as i32;
    let p = k as f64 * integrate(|z| phi(z) * band(z, q).powi(km1), -TRUNCATE, TRUNCATE, INNER_TOL);
    p.clamp(0.0, 1.0)
}

fn check(k: usize, df: f64) -> Result<(), StatsError> {
    if k < 2 {
        return Err(StatsError::Parameter(format!(
            "studentized range needs k >= 2, got {k}"
        )));
    }
    if df.is_nan() || df < 1.0 {
        return Err(StatsError::Parameter(format!(
            "studentized range needs df >= 1, got {df}"
        )));
    }
    Ok(())
}

/// `P(Q <= q)` for `k` groups and `df` error degrees of freedom
/// (`f64::INFINITY` for the known-variance case).
pub fn ptukey(q: f64, k: usize, df: f64) -> Result<f64, StatsError> {
    check(k, df)?;
    if q.is_nan() {
        return Err(StatsError::Parameter("q is NaN".into()));
    }
    if q <= 0.0 {
        return Ok(0.0);
    }
    if q.is_infinite() {
        return Ok(1.0);
    }
    if df.is_infinite() {
        return Ok(range_cdf(q, k));
    }
    // density of S = sqrt(chi²(df) / df), in logs
    let ln_c = 0.5 * df * df.ln() - ln_gamma(0.5 * df) - (0.5 * df - 1.0) * std::f64::consts::LN_2;
    let density = |s: f64| {
        if s <= 0.0 {
            return 0.0;
        }
        (ln_c + (df - 1.0) * s.ln() - 0.5 * df * s * s).exp()
    };
    let mode = ((df - 1.0) / df).sqrt();
    let sigma = 1.0 / (2.0 * df).sqrt();
    let lo = (mode - TRUNCATE * sigma).max(0.0);
    let hi = mode + TRUNCATE * sigma;
    let p = integrate(|s| density(s) * range_cdf(q * s, k), lo, hi, TOL);
    Ok(p.clamp(0.0, 1.0))
}

/// `P(Q > q)`.
pub fn ptukey_sf(q: f64, k: usize, df: f64) -> Result<f64, StatsError> {
    Ok((1.0 - ptukey(q, k, df)?).clamp(0.0, 1.0))
}

/// The `q` with `P(Q > q) = alpha`, by bisection to 1e-8.
pub fn qtukey(alpha: f64, k: usize, df: f64) -> Result<f64, StatsError> {
    check(k, df)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::Parameter(format!("alpha {alpha} outside (0, 1)")));
    }
    let target = 1.0 - alpha;
    let mut lo = 0.0;
    let mut hi = 1.0;
    while ptukey(hi, k, df)? < target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(StatsError::Parameter(format!("no quantile found for alpha {alpha}")));
        }
    }
    while hi - lo > 1e-8 {
        let mid = 0.5 * (lo + hi);
        if ptukey(mid, k, df)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
