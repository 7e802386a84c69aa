//! Dual response surface analysis with bootstrap confidence regions for the
//! optimum operating conditions of a replicated designed experiment.
//!
//! The pipeline is:
//!
//! 1. [`design`]: parse and summarize replicated observations per design point.
//! 2. [`surface`]: fit second-order surfaces to the cell means and log variances.
//! 3. [`optimize`]: minimize `(M(x) - T0)^2 + exp(Vlog(x))` over a factor box.
//! 4. [`bootstrap`]: resample within cells, refit and re-optimize `B` times,
//!    optionally with an inner resampling level for studentization.
//! 5. [`regions`]: Bonferroni rectangle, bootstrap-calibrated ellipse and basic
//!    bootstrap intervals.
//! 6. [`report`] and [`plot`]: JSON report, replicate CSV and SVG figures.

pub mod bootstrap;
pub mod covariance;
pub mod design;
pub mod optimize;
pub mod plot;
pub mod regions;
pub mod report;
pub mod rng;
pub mod surface;

pub use bootstrap::{run_bootstrap, BootstrapConfig, BootstrapEnsemble, BootstrapError, BootstrapReplicate};
pub use design::{parse_design_table, summarize, CellSummary, DesignTable, FactorBox};
pub use optimize::{minimize_squared_loss, OptimumMode, OptimumResult};
pub use regions::{basic_interval, bonferroni_region, ellipse_region, EllipticalRegion, Interval, RectangularRegion};
pub use report::{
    run_pipeline, run_stages, write_artifacts, Depth, PipelineError, PipelineOutput, Report, RunConfig, Stage,
};
pub use surface::{fit_ols, QuadraticSurface};
