//! Box-constrained search for optimum operating conditions.
//!
//! Two models are supported. The squared-loss model minimizes
//! `(M(x) - T0)^2 + exp(Vlog(x))`; the dual-response model minimizes the
//! predicted variance subject to `|M(x) - T0| <= tol`.
//!
//! Both use the same global scheme: a dense lattice over the box (101 points
//! per axis by default) seeds projected-gradient descents from the best few
//! lattice points, and the best polished point wins. Ties within `1e-12` go to
//! the lexicographically smallest coordinate vector.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::design::FactorBox;
use crate::surface::{monomials_into, term_count, QuadraticSurface};

/// Largest log-variance the objective will exponentiate.
pub const MAX_LOG_VARIANCE: f64 = 700.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("pathological surface at {x:?}: {reason}")]
    Pathological { x: Vec<f64>, reason: String },
    #[error(
        "no point in the box satisfies |M(x) - T0| <= {tolerance} (closest bias {closest_bias:.6}); \
         widen the box or use the squared-loss mode"
    )]
    Infeasible { tolerance: f64, closest_bias: f64 },
    #[error("lattice of {points_per_axis}^{k} points is too large")]
    GridTooLarge { points_per_axis: usize, k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimumMode {
    SquaredLoss,
    DualResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumResult {
    pub x_oc: Vec<f64>,
    /// Squared loss for `SquaredLoss`; predicted variance for `DualResponse`.
    pub objective: f64,
    pub predicted_mean: f64,
    pub predicted_variance: f64,
    pub mode: OptimumMode,
    /// Set when any local descent stopped at the iteration cap.
    pub iteration_cap_hit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSettings {
    pub points_per_axis: usize,
    pub starts: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub max_iterations: usize,
    pub tie_tolerance: f64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            points_per_axis: 101,
            starts: 5,
            gradient_tolerance: 1e-9,
            step_tolerance: 1e-12,
            max_iterations: 10_000,
            tie_tolerance: 1e-12,
        }
    }
}

/// How the variance surface of the dual-response model is interpreted.
#[derive(Debug, Clone, Copy)]
pub enum VarianceSurface<'a> {
    /// Predicted variance is `exp(surface(x))`.
    Log(&'a QuadraticSurface),
    /// Predicted variance is `surface(x)` directly.
    Linear(&'a QuadraticSurface),
}

impl VarianceSurface<'_> {
    fn surface(&self) -> &QuadraticSurface {
        match self {
            VarianceSurface::Log(s) | VarianceSurface::Linear(s) => s,
        }
    }

    fn value(&self, x: &[f64]) -> Result<f64, OptimizeError> {
        match self {
            VarianceSurface::Log(s) => guarded_exp(s.value_at(x), x),
            VarianceSurface::Linear(s) => Ok(s.value_at(x)),
        }
    }

    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, OptimizeError> {
        let s = self.surface();
        s.gradient_into(x, grad);
        match self {
            VarianceSurface::Log(_) => {
                let v = guarded_exp(s.value_at(x), x)?;
                grad.iter_mut().for_each(|g| *g *= v);
                Ok(v)
            }
            VarianceSurface::Linear(_) => Ok(s.value_at(x)),
        }
    }
}

fn guarded_exp(log_v: f64, x: &[f64]) -> Result<f64, OptimizeError> {
    if !log_v.is_finite() || log_v > MAX_LOG_VARIANCE {
        return Err(OptimizeError::Pathological {
            x: x.to_vec(),
            reason: format!("log-variance {log_v} exceeds {MAX_LOG_VARIANCE}"),
        });
    }
    Ok(log_v.exp())
}

fn non_finite(x: &[f64], what: &str) -> OptimizeError {
    OptimizeError::Pathological {
        x: x.to_vec(),
        reason: format!("{what} is not finite"),
    }
}

/// `(M(x) - T0)^2 + exp(Vlog(x))`.
pub fn squared_loss_objective(
    mean_surface: &QuadraticSurface,
    logvar_surface: &QuadraticSurface,
    target: f64,
    x: &[f64],
) -> Result<f64, OptimizeError> {
    for s in [mean_surface, logvar_surface] {
        if s.k() != x.len() {
            return Err(OptimizeError::Dimension {
                expected: s.k(),
                found: x.len(),
            });
        }
    }
    let m = mean_surface.value_at(x);
    if !m.is_finite() {
        return Err(non_finite(x, "predicted mean"));
    }
    Ok((m - target) * (m - target) + guarded_exp(logvar_surface.value_at(x), x)?)
}

/// Precomputed lattice over a box; shared by every optimization over that box.
#[derive(Debug, Clone)]
pub struct Minimizer {
    region: FactorBox,
    settings: SearchSettings,
    /// Lattice points, row-major, `k` values each, in lexicographic order.
    points: Vec<f64>,
    /// Canonical monomials per lattice point, `term_count(k)` values each.
    monomials: Vec<f64>,
}

impl Minimizer {
    pub fn new(region: FactorBox, settings: SearchSettings) -> Result<Self, OptimizeError> {
        let k = region.dim();
        let n = settings.points_per_axis.max(2);
        let total = n
            .checked_pow(k as u32)
            .filter(|t| *t <= 20_000_000)
            .ok_or(OptimizeError::GridTooLarge { points_per_axis: n, k })?;
        let axes: Vec<Vec<f64>> = (0..k)
            .map(|j| {
                let (lo, hi) = (region.lower()[j], region.upper()[j]);
                (0..n)
                    .map(|i| {
                        if i == n - 1 {
                            hi
                        } else {
                            lo + (hi - lo) * i as f64 / (n - 1) as f64
                        }
                    })
                    .collect()
            })
            .collect();
        let p = term_count(k);
        let mut points = Vec::with_capacity(total * k);
        let mut monomials = vec![0.0; total * p];
        let mut x = vec![0.0; k];
        for idx in 0..total {
            let mut rem = idx;
            for j in (0..k).rev() {
                x[j] = axes[j][rem % n];
                rem /= n;
            }
            points.extend_from_slice(&x);
            monomials_into(&x, &mut monomials[idx * p..(idx + 1) * p]);
        }
        Ok(Self {
            region,
            settings: SearchSettings {
                points_per_axis: n,
                ..settings
            },
            points,
            monomials,
        })
    }

    pub fn region(&self) -> &FactorBox {
        &self.region
    }

    pub fn settings(&self) -> &SearchSettings {
        &self.settings
    }

    fn k(&self) -> usize {
        self.region.dim()
    }

    fn lattice_len(&self) -> usize {
        self.points.len() / self.k()
    }

    fn lattice_point(&self, idx: usize) -> &[f64] {
        let k = self.k();
        &self.points[idx * k..(idx + 1) * k]
    }

    fn check_surfaces(&self, surfaces: &[&QuadraticSurface]) -> Result<(), OptimizeError> {
        for s in surfaces {
            if s.k() != self.k() {
                return Err(OptimizeError::Dimension {
                    expected: self.k(),
                    found: s.k(),
                });
            }
        }
        Ok(())
    }

    /// Global minimizer of the squared-loss objective over the box.
    pub fn minimize_squared_loss(
        &self,
        mean: &QuadraticSurface,
        logvar: &QuadraticSurface,
        target: f64,
    ) -> Result<OptimumResult, OptimizeError> {
        self.check_surfaces(&[mean, logvar])?;
        let p = term_count(self.k());
        let mut best = TopK::new(self.settings.starts);
        for idx in 0..self.lattice_len() {
            let row = &self.monomials[idx * p..(idx + 1) * p];
            let m = mean.value_from_monomials(row);
            let lv = logvar.value_from_monomials(row);
            if !m.is_finite() {
                return Err(non_finite(self.lattice_point(idx), "predicted mean"));
            }
            if !lv.is_finite() || lv > MAX_LOG_VARIANCE {
                guarded_exp(lv, self.lattice_point(idx))?;
            }
            let bias_sq = (m - target) * (m - target);
            // exp(lv) > 0, so a point whose bias alone cannot enter is skipped
            if best.rejects(bias_sq) {
                continue;
            }
            best.offer(bias_sq + lv.exp(), idx);
        }

        let objective = |x: &[f64], grad: &mut [f64]| -> Result<f64, OptimizeError> {
            let m = mean.value_at(x);
            if !m.is_finite() {
                return Err(non_finite(x, "predicted mean"));
            }
            let v = guarded_exp(logvar.value_at(x), x)?;
            let k = x.len();
            let mut stack = [0.0f64; 16];
            let mut heap;
            let (gm, gv) = if 2 * k <= stack.len() {
                stack[..2 * k].split_at_mut(k)
            } else {
                heap = vec![0.0; 2 * k];
                heap.split_at_mut(k)
            };
            mean.gradient_into(x, gm);
            logvar.gradient_into(x, gv);
            for i in 0..k {
                grad[i] = 2.0 * (m - target) * gm[i] + v * gv[i];
            }
            Ok((m - target) * (m - target) + v)
        };

        let mut candidates = Vec::with_capacity(best.len());
        let mut capped = false;
        for &(_, idx) in best.entries() {
            let start = self.lattice_point(idx).to_vec();
            let polished = self.descend(&objective, start)?;
            capped |= polished.capped;
            candidates.push((polished.value, polished.x));
        }
        let (_, x) = select_best(candidates, self.settings.tie_tolerance);
        let m = mean.value_at(&x);
        let v = guarded_exp(logvar.value_at(&x), &x)?;
        Ok(OptimumResult {
            objective: (m - target) * (m - target) + v,
            predicted_mean: m,
            predicted_variance: v,
            x_oc: x,
            mode: OptimumMode::SquaredLoss,
            iteration_cap_hit: capped,
        })
    }

    /// Minimum predicted variance subject to `|M(x) - T0| <= tolerance`,
    /// solved by quadratic-penalty continuation followed by a projection
    /// back onto the level set `M(x) = T0`.
    pub fn minimize_dual_response(
        &self,
        mean: &QuadraticSurface,
        variance: VarianceSurface<'_>,
        target: f64,
        tolerance: f64,
    ) -> Result<OptimumResult, OptimizeError> {
        self.check_surfaces(&[mean, variance.surface()])?;
        let k = self.k();

        let mut seeds = TopK::new(self.settings.starts);
        let mut closest_bias = f64::INFINITY;
        const SEED_PENALTY: f64 = 1e4;
        for idx in 0..self.lattice_len() {
            let x = self.lattice_point(idx);
            let m = mean.value_at(x);
            if !m.is_finite() {
                return Err(non_finite(x, "predicted mean"));
            }
            let v = variance.value(x)?;
            closest_bias = closest_bias.min((m - target).abs());
            seeds.offer(v + SEED_PENALTY * (m - target) * (m - target), idx);
        }

        let mut candidates = Vec::new();
        let mut capped = false;
        for &(_, idx) in seeds.entries() {
            let mut x = self.lattice_point(idx).to_vec();
            let mut mu = 1.0;
            while mu <= 1e10 {
                let penalized = |x: &[f64], grad: &mut [f64]| -> Result<f64, OptimizeError> {
                    let v = variance.value_and_gradient(x, grad)?;
                    let m = mean.value_at(x);
                    let mut gm = vec![0.0; k];
                    mean.gradient_into(x, &mut gm);
                    for i in 0..k {
                        grad[i] += 2.0 * mu * (m - target) * gm[i];
                    }
                    Ok(v + mu * (m - target) * (m - target))
                };
                let out = self.descend(&penalized, x)?;
                capped |= out.capped;
                x = out.x;
                mu *= 10.0;
            }
            self.restore_feasibility(mean, target, &mut x);
            let bias = (mean.value_at(&x) - target).abs();
            closest_bias = closest_bias.min(bias);
            if bias <= tolerance {
                candidates.push((variance.value(&x)?, x));
            }
        }
        if candidates.is_empty() {
            return Err(OptimizeError::Infeasible {
                tolerance,
                closest_bias,
            });
        }
        let (v, x) = select_best(candidates, self.settings.tie_tolerance);
        Ok(OptimumResult {
            predicted_mean: mean.value_at(&x),
            objective: v,
            predicted_variance: v,
            x_oc: x,
            mode: OptimumMode::DualResponse,
            iteration_cap_hit: capped,
        })
    }

    /// Gauss-Newton steps toward `M(x) = T0`, kept inside the box.
    fn restore_feasibility(&self, mean: &QuadraticSurface, target: f64, x: &mut Vec<f64>) {
        let k = x.len();
        let mut g = vec![0.0; k];
        for _ in 0..50 {
            let r = mean.value_at(x) - target;
            if r.abs() < 1e-13 {
                return;
            }
            mean.gradient_into(x, &mut g);
            let gg: f64 = g.iter().map(|v| v * v).sum();
            if gg == 0.0 {
                return;
            }
            let mut trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - r * gi / gg).collect();
            self.region.project(&mut trial);
            if (mean.value_at(&trial) - target).abs() >= r.abs() {
                return;
            }
            *x = trial;
        }
    }

    /// Projected gradient descent with Barzilai-Borwein trial steps and an
    /// Armijo backtracking line search along the projection arc.
    fn descend<F>(&self, f: &F, mut x: Vec<f64>) -> Result<Descent, OptimizeError>
    where
        F: Fn(&[f64], &mut [f64]) -> Result<f64, OptimizeError>,
    {
        let k = x.len();
        let s = &self.settings;
        let mut g = vec![0.0; k];
        let mut fx = f(&x, &mut g)?;
        let mut trial = vec![0.0; k];
        let mut g_new = vec![0.0; k];
        let mut step = 1.0 / norm(&g).max(1.0);
        for _ in 0..s.max_iterations {
            for i in 0..k {
                trial[i] = x[i] - g[i];
            }
            self.region.project(&mut trial);
            let pg: f64 = trial
                .iter()
                .zip(&x)
                .map(|(t, xi)| (t - xi) * (t - xi))
                .sum::<f64>()
                .sqrt();
            if pg < s.gradient_tolerance {
                return Ok(Descent {
                    x,
                    value: fx,
                    capped: false,
                });
            }
            let mut accepted = None;
            loop {
                for i in 0..k {
                    trial[i] = x[i] - step * g[i];
                }
                self.region.project(&mut trial);
                let moved: f64 = trial
                    .iter()
                    .zip(&x)
                    .map(|(t, xi)| (t - xi) * (t - xi))
                    .sum::<f64>()
                    .sqrt();
                if moved < s.step_tolerance {
                    break;
                }
                let f_trial = f(&trial, &mut g_new)?;
                let decrease: f64 = g
                    .iter()
                    .zip(trial.iter().zip(&x))
                    .map(|(gi, (t, xi))| gi * (t - xi))
                    .sum();
                if f_trial <= fx + 1e-4 * decrease {
                    accepted = Some(f_trial);
                    break;
                }
                step *= 0.5;
            }
            let Some(f_trial) = accepted else {
                return Ok(Descent {
                    x,
                    value: fx,
                    capped: false,
                });
            };
            let mut ss = 0.0;
            let mut sy = 0.0;
            for i in 0..k {
                let si = trial[i] - x[i];
                ss += si * si;
                sy += si * (g_new[i] - g[i]);
            }
            step = if sy > 0.0 {
                (ss / sy).clamp(1e-12, 1e12)
            } else {
                (step * 2.0).min(1e12)
            };
            std::mem::swap(&mut x, &mut trial);
            std::mem::swap(&mut g, &mut g_new);
            fx = f_trial;
        }
        Ok(Descent {
            x,
            value: fx,
            capped: true,
        })
    }
}

struct Descent {
    x: Vec<f64>,
    value: f64,
    capped: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Smallest value, breaking near-ties by lexicographic order of the points.
fn select_best(candidates: Vec<(f64, Vec<f64>)>, tie: f64) -> (f64, Vec<f64>) {
    let min = candidates.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    candidates
        .into_iter()
        .filter(|c| c.0 - min < tie)
        .min_by(|a, b| lexicographic(&a.1, &b.1))
        .expect("at least one candidate")
}

/// The `capacity` smallest `(value, lattice index)` pairs, ordered.
struct TopK {
    capacity: usize,
    entries: Vec<(f64, usize)>,
}

impl TopK {
    fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            entries: Vec::with_capacity(capacity.max(1) + 1),
        }
    }

    fn len(&self) -> usize {
        self.entries.len()
    }

    fn entries(&self) -> &[(f64, usize)] {
        &self.entries
    }

    /// True when no value `>= lower_bound` can enter (indices only grow).
    fn rejects(&self, lower_bound: f64) -> bool {
        self.entries.len() == self.capacity && lower_bound >= self.entries[self.capacity - 1].0
    }

    fn offer(&mut self, value: f64, idx: usize) {
        if self.entries.len() == self.capacity && value >= self.entries[self.capacity - 1].0 {
            return;
        }
        let pos = self.entries.partition_point(|&(v, _)| v <= value);
        self.entries.insert(pos, (value, idx));
        self.entries.truncate(self.capacity);
    }
}

/// Convenience wrapper building a one-off [`Minimizer`] with default settings.
pub fn minimize_squared_loss(
    mean_surface: &QuadraticSurface,
    logvar_surface: &QuadraticSurface,
    target: f64,
    region: &FactorBox,
) -> Result<OptimumResult, OptimizeError> {
    Minimizer::new(region.clone(), SearchSettings::default())?.minimize_squared_loss(
        mean_surface,
        logvar_surface,
        target,
    )
}

/// Convenience wrapper with the default equality tolerance of `1e-3`.
pub fn minimize_dual_response(
    mean_surface: &QuadraticSurface,
    variance: VarianceSurface<'_>,
    target: f64,
    region: &FactorBox,
) -> Result<OptimumResult, OptimizeError> {
    Minimizer::new(region.clone(), SearchSettings::default())?.minimize_dual_response(
        mean_surface,
        variance,
        target,
        DEFAULT_EQUALITY_TOLERANCE,
    )
}

pub const DEFAULT_EQUALITY_TOLERANCE: f64 = 1e-3;
