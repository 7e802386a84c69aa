//! End-to-end pipeline and its JSON report.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bootstrap::{run_bootstrap, write_replicates_csv, BootstrapConfig, BootstrapEnsemble};
use crate::covariance::Covariance;
use crate::design::{parse_design_table_with, summarize, CellSummary, CodingSpec, FactorBox, ParseOptions};
use crate::optimize::{
    Minimizer, OptimizeError, OptimumMode, OptimumResult, SearchSettings, VarianceSurface, DEFAULT_EQUALITY_TOLERANCE,
};
use crate::plot::emit_plots;
use crate::regions::{
    basic_interval, bias_report, bonferroni_region, ellipse_region, order_statistic_index, BiasReport,
    EllipticalRegion, Interval, RectangularRegion,
};
use crate::surface::{FitDiagnostics, LeastSquares, QuadraticSurface};

pub const REPORT_FILE: &str = "report.json";
pub const REPLICATES_FILE: &str = "replicates.csv";

/// Pipeline stage, used to label failures and pick the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Data,
    Fit,
    Optimize,
    Bootstrap,
    Regions,
    Output,
    Plot,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Data => 3,
            Stage::Fit => 4,
            Stage::Optimize => 5,
            Stage::Bootstrap => 6,
            Stage::Regions => 7,
            Stage::Output => 8,
            Stage::Plot => 9,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Data => "data",
            Stage::Fit => "fit",
            Stage::Optimize => "optimize",
            Stage::Bootstrap => "bootstrap",
            Stage::Regions => "regions",
            Stage::Output => "output",
            Stage::Plot => "plot",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{stage} stage failed: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl fmt::Display) -> Self {
        Self {
            stage,
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.stage.exit_code()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Emit {
    pub report: bool,
    pub replicates: bool,
    pub plots: bool,
}

impl Default for Emit {
    fn default() -> Self {
        Self {
            report: true,
            replicates: true,
            plots: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_path: PathBuf,
    pub target: f64,
    /// Coded factor box; `None` means `[-1, 1]^k`.
    pub region: Option<FactorBox>,
    pub alpha: f64,
    pub replicates: usize,
    pub inner_replicates: usize,
    pub seed: u64,
    pub run_inner: bool,
    pub modes: Vec<OptimumMode>,
    pub dual_tolerance: f64,
    pub emit: Emit,
    pub out_dir: PathBuf,
    /// Worker threads for the bootstrap; 0 picks the rayon default.
    pub threads: usize,
    /// When set, the data file is in natural units.
    pub coding: Option<CodingSpec>,
}

impl RunConfig {
    pub fn new(data_path: impl Into<PathBuf>, target: f64) -> Self {
        let b = BootstrapConfig::default();
        Self {
            data_path: data_path.into(),
            target,
            region: None,
            alpha: b.alpha,
            replicates: b.replicates,
            inner_replicates: b.inner_replicates,
            seed: b.seed,
            run_inner: b.run_inner,
            modes: vec![OptimumMode::SquaredLoss],
            dual_tolerance: DEFAULT_EQUALITY_TOLERANCE,
            emit: Emit::default(),
            out_dir: PathBuf::from("."),
            threads: 0,
            coding: None,
        }
    }

    pub fn bootstrap_config(&self) -> BootstrapConfig {
        BootstrapConfig {
            replicates: self.replicates,
            inner_replicates: self.inner_replicates,
            seed: self.seed,
            alpha: self.alpha,
            run_inner: self.run_inner,
        }
    }
}

/// The configuration values that affect the numbers in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub data_path: String,
    pub target: f64,
    pub region: FactorBox,
    pub alpha: f64,
    pub replicates: usize,
    pub inner_replicates: usize,
    pub seed: u64,
    pub run_inner: bool,
    pub modes: Vec<OptimumMode>,
    pub dual_tolerance: f64,
    pub coding: Option<CodingSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub replicates: usize,
    pub point_estimate: Vec<f64>,
    pub mean_estimate: f64,
    pub outer_covariance: Covariance,
    pub biases: BiasReport,
    pub ridge_applied: usize,
    pub retries: u32,
    pub iteration_caps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub config: ConfigEcho,
    pub cells: Vec<CellSummary>,
    pub mean_surface: QuadraticSurface,
    pub log_variance_surface: QuadraticSurface,
    pub mean_fit: FitDiagnostics,
    pub log_variance_fit: FitDiagnostics,
    pub optimum: Option<OptimumResult>,
    pub dual_optimum: Option<OptimumResult>,
    pub bootstrap: Option<EnsembleSummary>,
    pub rectangle: Option<RectangularRegion>,
    pub ellipse: Option<EllipticalRegion>,
    pub mean_interval: Option<Interval>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report values are finite");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// How far [`run_stages`] goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Depth {
    Fit,
    Optimize,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub report: Report,
    pub ensemble: Option<BootstrapEnsemble>,
}

/// parse, summarize, fit, optimize, bootstrap, regions.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutput, PipelineError> {
    run_stages(config, Depth::Full)
}

pub fn run_stages(config: &RunConfig, depth: Depth) -> Result<PipelineOutput, PipelineError> {
    let boot_cfg = config.bootstrap_config();
    let cfg_err = |m: String| PipelineError::new(Stage::Config, m);
    if !config.target.is_finite() {
        return Err(cfg_err("target must be finite".into()));
    }
    if !config.dual_tolerance.is_finite() || config.dual_tolerance <= 0.0 {
        return Err(cfg_err("dual-response tolerance must be positive".into()));
    }
    if config.modes.is_empty() {
        return Err(cfg_err("at least one optimization mode is required".into()));
    }
    if depth == Depth::Full {
        // k-independent quantiles can be checked before touching the data
        let mut ps = vec![config.alpha / 2.0, 1.0 - config.alpha / 2.0];
        if config.run_inner {
            ps.push(1.0 - config.alpha);
        }
        if !(config.alpha > 0.0 && config.alpha < 1.0) {
            return Err(cfg_err(format!("alpha {} is not in (0, 1)", config.alpha)));
        }
        for p in ps {
            order_statistic_index(config.replicates, p).map_err(|e| cfg_err(e.to_string()))?;
        }
        if let Some(r) = &config.region {
            boot_cfg.validate(r.dim()).map_err(|e| cfg_err(e.to_string()))?;
        }
    }

    let bytes = fs::read(&config.data_path)
        .map_err(|e| PipelineError::new(Stage::Data, format!("{}: {e}", config.data_path.display())))?;
    let options = ParseOptions {
        region: config.region.clone(),
        coding: config.coding.clone(),
    };
    let table = parse_design_table_with(bytes.as_slice(), config.target, &options)
        .map_err(|e| PipelineError::new(Stage::Data, e))?;
    let k = table.factor_count();
    let region = config.region.clone().unwrap_or_else(|| FactorBox::unit(k));
    if depth == Depth::Full {
        boot_cfg.validate(k).map_err(|e| cfg_err(e.to_string()))?;
    }

    let mut warnings = Vec::new();
    let cells = summarize(&table);
    for c in cells.iter().filter(|c| c.variance_floored) {
        warnings.push(format!(
            "variance at design point {:?} was floored before the log",
            c.point
        ));
    }

    let fit_err = |e: crate::surface::FitError| PipelineError::new(Stage::Fit, e);
    let fitter = LeastSquares::new(&table.points()).map_err(fit_err)?;
    let means: Vec<f64> = cells.iter().map(|c| c.mean).collect();
    let logs: Vec<f64> = cells.iter().map(|c| c.log_variance).collect();
    let (mean_surface, mean_fit) = fitter.fit(&means).map_err(fit_err)?;
    let (log_variance_surface, log_variance_fit) = fitter.fit(&logs).map_err(fit_err)?;

    let echo = ConfigEcho {
        data_path: config.data_path.display().to_string(),
        target: config.target,
        region: region.clone(),
        alpha: config.alpha,
        replicates: config.replicates,
        inner_replicates: config.inner_replicates,
        seed: config.seed,
        run_inner: config.run_inner,
        modes: config.modes.clone(),
        dual_tolerance: config.dual_tolerance,
        coding: config.coding.clone(),
    };
    let mut report = Report {
        tool: "rsboot".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: echo,
        cells,
        mean_surface,
        log_variance_surface,
        mean_fit,
        log_variance_fit,
        optimum: None,
        dual_optimum: None,
        bootstrap: None,
        rectangle: None,
        ellipse: None,
        mean_interval: None,
        warnings,
    };
    if depth == Depth::Fit {
        return Ok(PipelineOutput { report, ensemble: None });
    }

    let opt_err = |e: OptimizeError| PipelineError::new(Stage::Optimize, e);
    let minimizer = Minimizer::new(region.clone(), SearchSettings::default()).map_err(opt_err)?;
    let optimum = minimizer
        .minimize_squared_loss(&report.mean_surface, &report.log_variance_surface, config.target)
        .map_err(opt_err)?;
    if optimum.iteration_cap_hit {
        report
            .warnings
            .push("local descent hit the iteration cap at the original optimum".into());
    }
    if config.modes.contains(&OptimumMode::DualResponse) {
        match minimizer.minimize_dual_response(
            &report.mean_surface,
            VarianceSurface::Log(&report.log_variance_surface),
            config.target,
            config.dual_tolerance,
        ) {
            Ok(d) => report.dual_optimum = Some(d),
            Err(e @ OptimizeError::Infeasible { .. }) => report.warnings.push(format!("dual-response mode: {e}")),
            Err(e) => return Err(opt_err(e)),
        }
    }
    report.optimum = Some(optimum);
    if depth == Depth::Optimize {
        return Ok(PipelineOutput { report, ensemble: None });
    }

    report.warnings.extend(boot_cfg.warnings());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| PipelineError::new(Stage::Bootstrap, e))?;
    let ensemble = pool
        .install(|| run_bootstrap(&table, &region, &boot_cfg))
        .map_err(|e| PipelineError::new(Stage::Bootstrap, e))?;

    let reg_err = |e: crate::regions::RegionError| PipelineError::new(Stage::Regions, e);
    let t = ensemble.point_estimate.clone();
    let rectangle = bonferroni_region(&t, &ensemble, config.alpha).map_err(reg_err)?;
    let ellipse = if config.run_inner {
        let e = ellipse_region(&ensemble, config.alpha).map_err(reg_err)?;
        if e.ridge_applied {
            report
                .warnings
                .push("ridge added to the replicate covariance before inversion".into());
        }
        Some(e)
    } else {
        None
    };
    let mean_interval =
        basic_interval(ensemble.mean_estimate, &ensemble.mean_stars(), config.alpha).map_err(reg_err)?;
    let biases = bias_report(&ensemble, ensemble.mean_estimate);

    let ridge_applied = ensemble.replicates.iter().filter(|r| r.ridge_applied).count();
    let retries = ensemble.replicates.iter().map(|r| r.retries).sum();
    let iteration_caps = ensemble.replicates.iter().filter(|r| r.iteration_cap_hit).count();
    if ridge_applied > 0 {
        report.warnings.push(format!(
            "{ridge_applied} inner covariance(s) needed the ridge before inversion"
        ));
    }
    if retries > 0 {
        report
            .warnings
            .push(format!("{retries} bootstrap replicate attempt(s) were retried"));
    }
    if iteration_caps > 0 {
        report.warnings.push(format!(
            "{iteration_caps} replicate optimization(s) hit the iteration cap"
        ));
    }
    report.bootstrap = Some(EnsembleSummary {
        replicates: ensemble.replicates.len(),
        point_estimate: t,
        mean_estimate: ensemble.mean_estimate,
        outer_covariance: ensemble.outer_covariance.clone(),
        biases,
        ridge_applied,
        retries,
        iteration_caps,
    });
    report.rectangle = Some(rectangle);
    report.ellipse = ellipse;
    report.mean_interval = Some(mean_interval);
    Ok(PipelineOutput {
        report,
        ensemble: Some(ensemble),
    })
}

/// Writes every requested artifact under `out_dir`. Report and replicate
/// table are written before plots, so a plotting failure leaves them intact.
pub fn write_artifacts(output: &PipelineOutput, emit: Emit, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let io_err = |e: std::io::Error| PipelineError::new(Stage::Output, e);
    fs::create_dir_all(out_dir)
        .map_err(|e| PipelineError::new(Stage::Output, format!("{}: {e}", out_dir.display())))?;
    let mut written = Vec::new();
    if emit.report {
        let path = out_dir.join(REPORT_FILE);
        fs::write(&path, output.report.to_json()).map_err(io_err)?;
        written.push(path);
    }
    if let Some(ensemble) = &output.ensemble {
        if emit.replicates {
            let path = out_dir.join(REPLICATES_FILE);
            let file = fs::File::create(&path).map_err(io_err)?;
            write_replicates_csv(ensemble, std::io::BufWriter::new(file)).map_err(io_err)?;
            written.push(path);
        }
        if emit.plots {
            let plots =
                emit_plots(&output.report, ensemble, out_dir).map_err(|e| PipelineError::new(Stage::Plot, e))?;
            written.extend(plots);
        }
    }
    Ok(written)
}
