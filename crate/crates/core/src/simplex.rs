//! Gaussian-Softmax distribution on the probability simplex.
//!
//! If `x ~ N(mu, sigma^2 I)` then `softmax(x)` follows the Gaussian-Softmax
//! distribution `GS(mu, sigma^2 I)`. Softmax is invariant to shifts along the
//! all-ones direction, so every quantity here is expressed through logits
//! centered on their last coordinate and through the seminorm that projects
//! the all-ones direction away.

use std::f64::consts::PI;

use crate::error::{check_len, Error, Result};

/// Tolerance on `sum(values) == 1` accepted by [`SimplexPoint::new`].
pub const SUM_TOLERANCE: f64 = 1e-9;

/// A probability vector on the simplex `Δ^{D-1}`.
///
/// Points built with [`SimplexPoint::new`] are strictly interior. Points
/// produced by [`softmax`] may contain exact zeros when extreme logits
/// underflow; operations that take a logarithm reject those with
/// [`Error::Domain`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint(Vec<f64>);

impl SimplexPoint {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "simplex points need at least 2 coordinates, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v <= 0.0) {
            return Err(Error::Domain(format!(
                "simplex entries must be finite and strictly positive, found {v}"
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Domain(format!("simplex entries sum to {sum}, not 1")));
        }
        Ok(Self(values))
    }

    /// The barycenter `[1/D, ..., 1/D]`.
    pub fn uniform(dim: usize) -> Self {
        Self(vec![1.0 / dim as f64; dim])
    }

    #[cfg(test)]
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_interior(&self) -> bool {
        self.0.iter().all(|v| *v > 0.0)
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Elementwise natural log. Fails on boundary points.
    pub fn ln(&self) -> Result<Vec<f64>> {
        if !self.is_interior() {
            return Err(Error::Domain(
                "logarithm of a simplex point with a zero entry; label-smooth first".into(),
            ));
        }
        Ok(self.0.iter().map(|v| v.ln()).collect())
    }
}

impl AsRef<[f64]> for SimplexPoint {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Index of the maximum; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Parameters of an isotropic Gaussian-Softmax distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GsParams {
    mu: Vec<f64>,
    sigma: f64,
}

impl GsParams {
    pub fn new(mu: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidInput("mu must be finite".into()));
        }
        if mu.len() < 2 {
            return Err(Error::InvalidInput("mu needs at least 2 entries".into()));
        }
        Ok(Self { mu, sigma })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Numerically stable softmax (max-subtracted before exponentiation).
pub fn softmax(logits: &[f64]) -> Result<SimplexPoint> {
    if logits.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "softmax needs at least 2 logits, got {}",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("softmax of non-finite logits".into()));
    }
    Ok(SimplexPoint(softmax_unchecked(logits)))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// `log y - (log y_D) 1`: the logits of `y` pinned so the last entry is 0.
pub fn center_logits(y: &SimplexPoint) -> Result<Vec<f64>> {
    let logs = y.ln()?;
    Ok(center(&logs))
}

/// Shift a vector so its last entry is zero.
pub fn center(v: &[f64]) -> Vec<f64> {
    let last = *v.last().expect("non-empty vector");
    v.iter().map(|x| x - last).collect()
}

/// `||u||^2 - (1^T u)^2 / D`, the squared norm of `u` with its all-ones
/// component removed.
pub fn perp_sq_norm(u: &[f64]) -> f64 {
    let d = u.len() as f64;
    let sq: f64 = u.iter().map(|x| x * x).sum();
    let s: f64 = u.iter().sum();
    (sq - s * s / d).max(0.0)
}

/// Log of the Gaussian-Softmax density at an interior point.
pub fn gs_log_density(y: &SimplexPoint, p: &GsParams) -> Result<f64> {
    check_len(p.dim(), y.dim())?;
    let logs = y.ln()?;
    let d = y.dim() as f64;
    let y_tilde = center(&logs);
    let mu_prime = center(&p.mu);
    let diff: Vec<f64> = y_tilde.iter().zip(&mu_prime).map(|(a, b)| a - b).collect();
    let var = p.sigma * p.sigma;
    let log_jacobian: f64 = -logs.iter().sum::<f64>();
    let log_z = 0.5 * d.ln() + 0.5 * (d - 1.0) * (2.0 * PI * var).ln();
    Ok(log_jacobian - log_z - perp_sq_norm(&diff) / (2.0 * var))
}

/// Gaussian-Softmax density, with respect to Lebesgue measure on the first
/// `D - 1` coordinates.
pub fn gs_density(y: &SimplexPoint, p: &GsParams) -> Result<f64> {
    gs_log_density(y, p).map(f64::exp)
}

/// Draw from `GS(mu, sigma^2 I)` given explicit standard-normal noise.
pub fn gs_sample(p: &GsParams, noise: &[f64]) -> Result<SimplexPoint> {
    check_len(p.dim(), noise.len())?;
    let logits: Vec<f64> = p
        .mu
        .iter()
        .zip(noise)
        .map(|(m, e)| m + p.sigma * e)
        .collect();
    softmax(&logits)
}

/// KL divergence between two Gaussian-Softmax distributions sharing `sigma`.
///
/// Softmax restricted to centered logits is a bijection onto the simplex
/// interior and KL is invariant under bijections, so this is the Gaussian KL
/// of the means with the all-ones component projected out.
pub fn gs_kl(mu_q: &[f64], mu_p: &[f64], sigma: f64) -> Result<f64> {
    check_len(mu_q.len(), mu_p.len())?;
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    let diff: Vec<f64> = mu_q.iter().zip(mu_p).map(|(a, b)| a - b).collect();
    Ok(perp_sq_norm(&diff) / (2.0 * sigma * sigma))
}
