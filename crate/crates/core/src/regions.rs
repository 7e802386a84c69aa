//! Confidence sets built from a bootstrap ensemble.
//!
//! Quantiles use the order-statistic convention: the `p` quantile of `B`
//! replicates is the `(B+1)p`-th smallest value (1-based), and `(B+1)p` must be
//! an integer. No interpolation is ever performed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bootstrap::BootstrapEnsemble;
use crate::covariance::{Covariance, CovarianceError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegionError {
    #[error("order statistic (B+1)p = {index} is not an integer (B={replicates}, p={p})")]
    NonIntegerIndex { replicates: usize, p: f64, index: f64 },
    #[error("order statistic {index} is outside [1, {replicates}] (p={p})")]
    IndexOutOfRange { replicates: usize, p: f64, index: f64 },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("ensemble has no q* values; rerun the bootstrap with the inner resampling enabled")]
    MissingQStar,
    #[error("covariance of the replicate optima: {0}")]
    Covariance(#[from] CovarianceError),
    #[error("degenerate region: {0}")]
    Degenerate(String),
    #[error("non-finite bootstrap value")]
    NonFinite,
}

/// 1-based index `(B+1)p`, required to be an integer in `[1, B]`.
pub fn order_statistic_index(replicates: usize, p: f64) -> Result<usize, RegionError> {
    let index = (replicates + 1) as f64 * p;
    let rounded = index.round();
    if (index - rounded).abs() > 1e-9 * index.abs().max(1.0) {
        return Err(RegionError::NonIntegerIndex { replicates, p, index });
    }
    if rounded < 1.0 || rounded > replicates as f64 {
        return Err(RegionError::IndexOutOfRange { replicates, p, index });
    }
    Ok(rounded as usize)
}

fn sorted(values: &[f64]) -> Result<Vec<f64>, RegionError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(RegionError::NonFinite);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    BasicBootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub method: IntervalMethod,
}

impl Interval {
    /// Closed-interval membership.
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// Equi-tailed basic bootstrap interval at level `1 - alpha`:
/// `(2t - t*[(B+1)(1-alpha/2)], 2t - t*[(B+1)alpha/2])`.
pub fn basic_interval(t: f64, t_stars: &[f64], alpha: f64) -> Result<Interval, RegionError> {
    let b = t_stars.len();
    let lo = order_statistic_index(b, alpha / 2.0)?;
    let hi = order_statistic_index(b, 1.0 - alpha / 2.0)?;
    let s = sorted(t_stars)?;
    Ok(Interval {
        lower: 2.0 * t - s[hi - 1],
        upper: 2.0 * t - s[lo - 1],
        level: 1.0 - alpha,
        method: IntervalMethod::BasicBootstrap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectangularRegion {
    pub axes: Vec<Interval>,
    /// Guaranteed joint coverage `1 - sum(alpha_i)`.
    pub joint_level: f64,
}

impl RectangularRegion {
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// All coordinates inside their (closed) axis intervals.
    ///
    /// # Panics
    /// If `theta` has the wrong dimension.
    pub fn contains(&self, theta: &[f64]) -> bool {
        assert_eq!(theta.len(), self.dim(), "dimension mismatch");
        self.axes.iter().zip(theta).all(|(i, v)| i.contains(*v))
    }
}

/// Bonferroni rectangle: each of the `k` axes gets a basic interval at
/// `alpha / k`.
pub fn bonferroni_region(
    t: &[f64],
    ensemble: &BootstrapEnsemble,
    alpha: f64,
) -> Result<RectangularRegion, RegionError> {
    let k = ensemble.k();
    if t.len() != k {
        return Err(RegionError::Dimension {
            expected: k,
            found: t.len(),
        });
    }
    let alpha_axis = alpha / k as f64;
    let axes = (0..k)
        .map(|j| basic_interval(t[j], &ensemble.coordinate(j), alpha_axis))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RectangularRegion {
        axes,
        joint_level: 1.0 - alpha_axis * k as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticalRegion {
    pub center: Vec<f64>,
    /// Covariance of the replicate optima.
    pub sigma: Covariance,
    /// Inverse of `sigma` (after the ridge rule).
    pub shape: Covariance,
    /// Bootstrap quantile `q*[(B+1)(1-alpha)]`.
    pub radius_sq: f64,
    pub level: f64,
    pub ridge_applied: bool,
}

impl EllipticalRegion {
    pub fn quadratic_form(&self, theta: &[f64]) -> f64 {
        let k = self.center.len();
        let d: Vec<f64> = self.center.iter().zip(theta).map(|(c, v)| c - v).collect();
        let mut q = 0.0;
        for i in 0..k {
            for j in 0..k {
                q += d[i] * self.shape.get(i, j) * d[j];
            }
        }
        q
    }

    /// Strict membership `(t - theta)' S^-1 (t - theta) < radius_sq`.
    ///
    /// # Panics
    /// If `theta` has the wrong dimension.
    pub fn contains(&self, theta: &[f64]) -> bool {
        assert_eq!(theta.len(), self.center.len(), "dimension mismatch");
        self.quadratic_form(theta) < self.radius_sq
    }
}

pub fn ellipse_region(ensemble: &BootstrapEnsemble, alpha: f64) -> Result<EllipticalRegion, RegionError> {
    let q = ensemble.q_stars().ok_or(RegionError::MissingQStar)?;
    if q.is_empty() {
        return Err(RegionError::MissingQStar);
    }
    let idx = order_statistic_index(q.len(), 1.0 - alpha)?;
    let radius_sq = sorted(&q)?[idx - 1];
    if radius_sq <= 0.0 {
        return Err(RegionError::Degenerate(format!(
            "q* quantile {radius_sq} is not positive"
        )));
    }
    let sigma = ensemble.outer_covariance.clone();
    let shape = sigma.inverse()?;
    Ok(EllipticalRegion {
        center: ensemble.point_estimate.clone(),
        ridge_applied: sigma.needs_ridge(),
        sigma,
        shape,
        radius_sq,
        level: 1.0 - alpha,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfidenceRegion {
    Rectangle(RectangularRegion),
    Ellipse(EllipticalRegion),
}

/// Rectangle: closed. Ellipse: open.
pub fn region_membership(region: &ConfidenceRegion, theta: &[f64]) -> bool {
    match region {
        ConfidenceRegion::Rectangle(r) => r.contains(theta),
        ConfidenceRegion::Ellipse(e) => e.contains(theta),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub coordinates: Vec<f64>,
    pub mean_response: f64,
}

pub fn bias_report(ensemble: &BootstrapEnsemble, m_hat_at_optimum: f64) -> BiasReport {
    let b = ensemble.replicates.len() as f64;
    let coordinates = (0..ensemble.k())
        .map(|j| ensemble.coordinate(j).iter().sum::<f64>() / b - ensemble.point_estimate[j])
        .collect();
    BiasReport {
        coordinates,
        mean_response: ensemble.mean_stars().iter().sum::<f64>() / b - m_hat_at_optimum,
    }
}
