//! Nonparametric bootstrap of the optimum operating conditions.
//!
//! Each outer replicate resamples every design cell with replacement, refits
//! both surfaces and re-optimizes the squared loss. With `run_inner` set, each
//! outer dataset is itself resampled `I` times to estimate the covariance of
//! its optimum, from which the studentized statistic `q*` is formed.
//!
//! Randomness follows a fixed hierarchy of sub-streams: replicate `b`, attempt
//! `a` draws from `(seed, b, a)` and its inner replicate `i`, attempt `c` from
//! `(seed, b, a, i, c)`. Outer replicates are independent and run on the
//! current rayon pool; output does not depend on the worker count.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covariance::{q_statistic, Covariance};
use crate::design::{summarize, DesignTable, FactorBox};
use crate::optimize::{Minimizer, OptimumResult, SearchSettings};
use crate::regions::order_statistic_index;
use crate::rng::SubStream;
use crate::surface::{LeastSquares, QuadraticSurface};

/// Fresh sub-streams tried after a failed replicate before the run aborts.
pub const MAX_RETRIES: u32 = 10;

/// Recommended range for the number of inner replicates.
pub const INNER_RANGE: (usize, usize) = (50, 200);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BootstrapError {
    #[error("invalid bootstrap configuration: {0}")]
    Config(String),
    #[error("analysis of the original sample failed: {0}")]
    Original(String),
    #[error("bootstrap replicate b={b} failed on {attempts} sub-streams; last error: {last}")]
    ReplicateFailed { b: usize, attempts: u32, last: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Outer replicate count `B`.
    pub replicates: usize,
    /// Inner replicate count `I` per outer dataset.
    pub inner_replicates: usize,
    pub seed: u64,
    pub alpha: f64,
    pub run_inner: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 999,
            inner_replicates: 100,
            seed: 0,
            alpha: 0.10,
            run_inner: true,
        }
    }
}

impl BootstrapConfig {
    /// Checks the order-statistic rule: every quantile the analysis takes,
    /// `(B+1)p`, must be an integer in `[1, B]`. For `k` factors these are
    /// `p = alpha/(2k), 1 - alpha/(2k)` (Bonferroni axes), `alpha/2, 1 - alpha/2`
    /// (mean-response interval) and `1 - alpha` (ellipse, with `run_inner`).
    pub fn validate(&self, k: usize) -> Result<(), BootstrapError> {
        self.check_basic()?;
        if k == 0 {
            return Err(BootstrapError::Config("factor count must be positive".into()));
        }
        let a = self.alpha;
        let mut probabilities = vec![a / (2.0 * k as f64), 1.0 - a / (2.0 * k as f64), a / 2.0, 1.0 - a / 2.0];
        if self.run_inner {
            probabilities.push(1.0 - a);
        }
        for p in probabilities {
            order_statistic_index(self.replicates, p).map_err(|e| BootstrapError::Config(e.to_string()))?;
        }
        Ok(())
    }

    fn check_basic(&self) -> Result<(), BootstrapError> {
        if self.replicates < 2 {
            return Err(BootstrapError::Config("B must be at least 2".into()));
        }
        if self.run_inner && self.inner_replicates < 2 {
            return Err(BootstrapError::Config("I must be at least 2".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(BootstrapError::Config(format!("alpha {} is not in (0, 1)", self.alpha)));
        }
        Ok(())
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        let (lo, hi) = INNER_RANGE;
        if self.run_inner && !(lo..=hi).contains(&self.inner_replicates) {
            w.push(format!(
                "inner replicate count I={} is outside the usual range [{lo}, {hi}]",
                self.inner_replicates
            ));
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReplicate {
    /// 1-based replicate index `b`.
    pub index: usize,
    pub x_oc_star: Vec<f64>,
    /// Replicate mean surface evaluated at the replicate optimum.
    pub mean_at_optimum: f64,
    pub inner_covariance: Option<Covariance>,
    pub q_star: Option<f64>,
    /// Set when the inner covariance needed the ridge before inversion.
    pub ridge_applied: bool,
    /// Failed attempts before this replicate succeeded.
    pub retries: u32,
    pub iteration_cap_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEnsemble {
    pub config: BootstrapConfig,
    /// Original-sample optimum `t`.
    pub point_estimate: Vec<f64>,
    /// Original mean surface at `t`.
    pub mean_estimate: f64,
    pub replicates: Vec<BootstrapReplicate>,
    /// Sample covariance of the `B` replicate optima.
    pub outer_covariance: Covariance,
    /// `mean_b(x*_b) - t`, per coordinate.
    pub biases: Vec<f64>,
}

impl BootstrapEnsemble {
    pub fn k(&self) -> usize {
        self.point_estimate.len()
    }

    /// Replicate values of coordinate `axis` in replicate order.
    pub fn coordinate(&self, axis: usize) -> Vec<f64> {
        self.replicates.iter().map(|r| r.x_oc_star[axis]).collect()
    }

    pub fn mean_stars(&self) -> Vec<f64> {
        self.replicates.iter().map(|r| r.mean_at_optimum).collect()
    }

    /// All `q*` values, or `None` if any replicate lacks one.
    pub fn q_stars(&self) -> Option<Vec<f64>> {
        self.replicates.iter().map(|r| r.q_star).collect()
    }

    pub fn optima(&self) -> Vec<Vec<f64>> {
        self.replicates.iter().map(|r| r.x_oc_star.clone()).collect()
    }
}

/// Draws each cell's replicates uniformly with replacement from that cell.
pub fn resample_table<R: Rng + ?Sized>(table: &DesignTable, rng: &mut R) -> DesignTable {
    let replicates = table
        .cells()
        .iter()
        .map(|cell| {
            let n = cell.replicates.len();
            (0..n).map(|_| cell.replicates[rng.random_range(0..n)]).collect()
        })
        .collect();
    table.with_replicates(replicates)
}

/// Shared refit-and-optimize machinery for one design and box.
struct Analyzer {
    fitter: LeastSquares,
    minimizer: Minimizer,
    target: f64,
    k: usize,
}

impl Analyzer {
    fn new(table: &DesignTable, region: &FactorBox) -> Result<Self, String> {
        if region.dim() != table.factor_count() {
            return Err(format!(
                "box has {} factor(s), table has {}",
                region.dim(),
                table.factor_count()
            ));
        }
        Ok(Self {
            fitter: LeastSquares::new(&table.points()).map_err(|e| e.to_string())?,
            minimizer: Minimizer::new(region.clone(), SearchSettings::default()).map_err(|e| e.to_string())?,
            target: table.target(),
            k: table.factor_count(),
        })
    }

    fn optimum(&self, table: &DesignTable) -> Result<OptimumResult, String> {
        let summaries = summarize(table);
        let means: Vec<f64> = summaries.iter().map(|s| s.mean).collect();
        let logs: Vec<f64> = summaries.iter().map(|s| s.log_variance).collect();
        let mean = QuadraticSurface::new(self.k, self.fitter.solve(&means)).map_err(|e| e.to_string())?;
        let logvar = QuadraticSurface::new(self.k, self.fitter.solve(&logs)).map_err(|e| e.to_string())?;
        self.minimizer
            .minimize_squared_loss(&mean, &logvar, self.target)
            .map_err(|e| e.to_string())
    }

    fn inner_covariance(
        &self,
        boot_table: &DesignTable,
        inner: usize,
        stream: &SubStream,
    ) -> Result<Covariance, String> {
        let mut optima = Vec::with_capacity(inner);
        for i in 0..inner {
            let unit = stream.child(i as u64);
            let mut last = String::new();
            let mut found = None;
            for attempt in 0..=MAX_RETRIES {
                let mut rng = unit.child(attempt as u64).rng();
                match self.optimum(&resample_table(boot_table, &mut rng)) {
                    Ok(r) => {
                        found = Some(r.x_oc);
                        break;
                    }
                    Err(e) => last = e,
                }
            }
            optima.push(found.ok_or_else(|| {
                format!(
                    "inner replicate i={} failed on {} sub-streams: {last}",
                    i + 1,
                    MAX_RETRIES + 1
                )
            })?);
        }
        Ok(Covariance::sample(&optima))
    }

    fn replicate(
        &self,
        table: &DesignTable,
        t: &[f64],
        b: usize,
        config: &BootstrapConfig,
        root: &SubStream,
    ) -> Result<BootstrapReplicate, BootstrapError> {
        let mut last = String::new();
        for attempt in 0..=MAX_RETRIES {
            let stream = root.child(b as u64).child(attempt as u64);
            match self.attempt(table, t, b, config, &stream) {
                Ok(mut r) => {
                    r.retries = attempt;
                    return Ok(r);
                }
                Err(e) => last = e,
            }
        }
        Err(BootstrapError::ReplicateFailed {
            b,
            attempts: MAX_RETRIES + 1,
            last,
        })
    }

    fn attempt(
        &self,
        table: &DesignTable,
        t: &[f64],
        b: usize,
        config: &BootstrapConfig,
        stream: &SubStream,
    ) -> Result<BootstrapReplicate, String> {
        let boot = resample_table(table, &mut stream.rng());
        let opt = self.optimum(&boot)?;
        let (inner_covariance, q_star, ridge_applied) = if config.run_inner {
            let cov = self.inner_covariance(&boot, config.inner_replicates, stream)?;
            let q = q_statistic(t, &opt.x_oc, &cov).map_err(|e| format!("q*: {e}"))?;
            let ridge = cov.needs_ridge();
            (Some(cov), Some(q), ridge)
        } else {
            (None, None, false)
        };
        Ok(BootstrapReplicate {
            index: b,
            x_oc_star: opt.x_oc,
            mean_at_optimum: opt.predicted_mean,
            inner_covariance,
            q_star,
            ridge_applied,
            retries: 0,
            iteration_cap_hit: opt.iteration_cap_hit,
        })
    }
}

/// Covariance of the optimum under resampling of `boot_table`, from `inner`
/// second-level datasets drawn on sub-streams of `stream`.
pub fn double_bootstrap_covariance(
    boot_table: &DesignTable,
    region: &FactorBox,
    inner: usize,
    stream: &SubStream,
) -> Result<Covariance, BootstrapError> {
    if inner < 2 {
        return Err(BootstrapError::Config("I must be at least 2".into()));
    }
    let analyzer = Analyzer::new(boot_table, region).map_err(BootstrapError::Original)?;
    analyzer
        .inner_covariance(boot_table, inner, stream)
        .map_err(|last| BootstrapError::ReplicateFailed {
            b: 0,
            attempts: MAX_RETRIES + 1,
            last,
        })
}

/// Runs the full resampling scheme on the current rayon pool. The quantile
/// index rule is not checked here; see [`BootstrapConfig::validate`].
pub fn run_bootstrap(
    table: &DesignTable,
    region: &FactorBox,
    config: &BootstrapConfig,
) -> Result<BootstrapEnsemble, BootstrapError> {
    config.check_basic()?;
    let analyzer = Analyzer::new(table, region).map_err(BootstrapError::Original)?;
    let original = analyzer.optimum(table).map_err(BootstrapError::Original)?;
    let t = original.x_oc.clone();
    let root = SubStream::root(config.seed);

    let results: Vec<Result<BootstrapReplicate, BootstrapError>> = (1..=config.replicates)
        .into_par_iter()
        .map(|b| analyzer.replicate(table, &t, b, config, &root))
        .collect();
    let replicates = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let optima: Vec<Vec<f64>> = replicates.iter().map(|r| r.x_oc_star.clone()).collect();
    let outer_covariance = Covariance::sample(&optima);
    let biases = (0..t.len())
        .map(|j| optima.iter().map(|x| x[j]).sum::<f64>() / optima.len() as f64 - t[j])
        .collect();
    Ok(BootstrapEnsemble {
        config: config.clone(),
        point_estimate: t,
        mean_estimate: original.predicted_mean,
        replicates,
        outer_covariance,
        biases,
    })
}

/// Writes the replicate table as CSV: `b, x1_star..xk_star, m_star, qstar`.
/// `qstar` is left empty when the inner bootstrap was not run.
pub fn write_replicates_csv<W: Write>(ensemble: &BootstrapEnsemble, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["b".to_string()];
    header.extend((1..=ensemble.k()).map(|j| format!("x{j}_star")));
    header.push("m_star".into());
    header.push("qstar".into());
    w.write_record(&header)?;
    for r in &ensemble.replicates {
        let mut row = vec![r.index.to_string()];
        row.extend(r.x_oc_star.iter().map(|v| v.to_string()));
        row.push(r.mean_at_optimum.to_string());
        row.push(r.q_star.map(|q| q.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()
}
