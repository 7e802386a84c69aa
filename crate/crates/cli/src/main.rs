use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use rsboot::design::CodingSpec;
use rsboot::report::{run_stages, write_artifacts, Depth, Emit, PipelineError, PipelineOutput, RunConfig, Stage};
use rsboot::{FactorBox, OptimumMode};

const THREADS_VAR: &str = "RSBOOT_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "rsboot",
    version,
    about = "Dual response surface optimization with bootstrap confidence regions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit, optimize, bootstrap and build confidence regions.
    Analyze(RunArgs),
    /// Fit the mean and log-variance surfaces only.
    Fit(RunArgs),
    /// Fit and optimize without resampling.
    Optimize(RunArgs),
}

#[derive(clap::Args, Debug, Default)]
struct RunArgs {
    /// Design CSV with header x1,...,xk,y.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Target value T0 for the mean response.
    #[arg(long, allow_negative_numbers = true)]
    target: Option<f64>,
    /// Joint error rate of the confidence regions.
    #[arg(long)]
    alpha: Option<f64>,
    /// Outer bootstrap replicates.
    #[arg(long = "B", value_name = "B")]
    replicates: Option<usize>,
    /// Inner bootstrap replicates per outer replicate.
    #[arg(long = "I", value_name = "I")]
    inner_replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Coded factor box, e.g. `-1:1,-1:1`.
    #[arg(long = "box", value_name = "LO:HI,...", allow_hyphen_values = true)]
    region: Option<String>,
    /// Optimization modes; squared-loss is always computed.
    #[arg(long, value_enum, value_delimiter = ',')]
    mode: Vec<ModeArg>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML or JSON file with the same settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Artifacts to write.
    #[arg(long, value_enum, value_delimiter = ',')]
    emit: Vec<EmitArg>,
    /// Skip the inner resampling level (no ellipse).
    #[arg(long)]
    no_inner: bool,
    /// Equality tolerance for the dual-response mode.
    #[arg(long)]
    dual_tolerance: Option<f64>,
}

#[derive(ValueEnum, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum ModeArg {
    #[value(alias = "squared_loss")]
    #[serde(alias = "squared_loss")]
    SquaredLoss,
    #[value(alias = "dual_response")]
    #[serde(alias = "dual_response")]
    DualResponse,
}

impl From<ModeArg> for OptimumMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::SquaredLoss => OptimumMode::SquaredLoss,
            ModeArg::DualResponse => OptimumMode::DualResponse,
        }
    }
}

#[derive(ValueEnum, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum EmitArg {
    Report,
    Replicates,
    Plots,
}

/// Settings file. Keys mirror the long flags.
#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    data: Option<PathBuf>,
    target: Option<f64>,
    alpha: Option<f64>,
    #[serde(alias = "B")]
    replicates: Option<usize>,
    #[serde(alias = "I")]
    inner_replicates: Option<usize>,
    seed: Option<u64>,
    #[serde(rename = "box")]
    region: Option<Vec<[f64; 2]>>,
    mode: Option<Vec<ModeArg>>,
    out: Option<PathBuf>,
    emit: Option<Vec<EmitArg>>,
    inner: Option<bool>,
    dual_tolerance: Option<f64>,
    coding: Option<CodingSpec>,
}

fn load_file_config(path: &Path) -> anyhow::Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg: FileConfig = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    // paths in a settings file are relative to that file
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [&mut cfg.data, &mut cfg.out].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

fn parse_box(spec: &str) -> anyhow::Result<Vec<[f64; 2]>> {
    spec.split(',')
        .map(|axis| {
            let (lo, hi) = axis
                .split_once(':')
                .with_context(|| format!("box axis `{axis}` is not LO:HI"))?;
            let lo: f64 = lo
                .trim()
                .parse()
                .with_context(|| format!("bad lower bound in `{axis}`"))?;
            let hi: f64 = hi
                .trim()
                .parse()
                .with_context(|| format!("bad upper bound in `{axis}`"))?;
            Ok([lo, hi])
        })
        .collect()
}

fn threads_from_env() -> anyhow::Result<usize> {
    match std::env::var(THREADS_VAR) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .with_context(|| format!("{THREADS_VAR}={v} is not a non-negative integer")),
        _ => Ok(0),
    }
}

fn build_config(args: RunArgs, depth: Depth) -> anyhow::Result<RunConfig> {
    let file = match &args.config {
        Some(p) => load_file_config(p)?,
        None => FileConfig::default(),
    };
    let Some(data) = args.data.or(file.data) else {
        bail!("no data file given (--data)");
    };
    let Some(target) = args.target.or(file.target) else {
        bail!("no target given (--target)");
    };
    let mut cfg = RunConfig::new(data, target);
    if let Some(v) = args.alpha.or(file.alpha) {
        cfg.alpha = v;
    }
    if let Some(v) = args.replicates.or(file.replicates) {
        cfg.replicates = v;
    }
    if let Some(v) = args.inner_replicates.or(file.inner_replicates) {
        cfg.inner_replicates = v;
    }
    if let Some(v) = args.seed.or(file.seed) {
        cfg.seed = v;
    }
    let bounds = match &args.region {
        Some(s) => Some(parse_box(s)?),
        None => file.region,
    };
    if let Some(b) = bounds {
        let pairs: Vec<(f64, f64)> = b.iter().map(|[l, h]| (*l, *h)).collect();
        cfg.region = Some(FactorBox::new(&pairs)?);
    }
    let modes = if args.mode.is_empty() {
        file.mode.unwrap_or_default()
    } else {
        args.mode
    };
    if !modes.is_empty() {
        let mut m: Vec<OptimumMode> = vec![OptimumMode::SquaredLoss];
        for x in modes.into_iter().map(OptimumMode::from) {
            if !m.contains(&x) {
                m.push(x);
            }
        }
        cfg.modes = m;
    }
    if let Some(v) = args.out.or(file.out) {
        cfg.out_dir = v;
    }
    if args.no_inner {
        cfg.run_inner = false;
    } else if let Some(v) = file.inner {
        cfg.run_inner = v;
    }
    if let Some(v) = args.dual_tolerance.or(file.dual_tolerance) {
        cfg.dual_tolerance = v;
    }
    cfg.coding = file.coding;
    cfg.threads = threads_from_env()?;

    let emit = if args.emit.is_empty() {
        file.emit
    } else {
        Some(args.emit)
    };
    cfg.emit = match emit {
        Some(list) => Emit {
            report: list.contains(&EmitArg::Report),
            replicates: list.contains(&EmitArg::Replicates),
            plots: list.contains(&EmitArg::Plots),
        },
        None if depth == Depth::Full => Emit::default(),
        None => Emit {
            report: true,
            replicates: false,
            plots: false,
        },
    };
    if depth != Depth::Full && (cfg.emit.replicates || cfg.emit.plots) {
        bail!("replicates and plots need the bootstrap; use `analyze`");
    }
    Ok(cfg)
}

fn print_summary(output: &PipelineOutput, written: &[PathBuf]) {
    let r = &output.report;
    println!("mean surface:         {}", fmt_coefs(r.mean_surface.coefficients()));
    println!(
        "log-variance surface: {}",
        fmt_coefs(r.log_variance_surface.coefficients())
    );
    if let Some(o) = &r.optimum {
        println!(
            "optimum x_oc = {}  predicted mean {:.4}  predicted variance {:.4}",
            fmt_coefs(&o.x_oc),
            o.predicted_mean,
            o.predicted_variance
        );
    }
    if let Some(d) = &r.dual_optimum {
        println!(
            "dual-response optimum = {}  predicted variance {:.4}",
            fmt_coefs(&d.x_oc),
            d.predicted_variance
        );
    }
    if let Some(b) = &r.bootstrap {
        println!("coordinate bias:      {}", fmt_coefs(&b.biases.coordinates));
        println!("mean-response bias:   {:.4}", b.biases.mean_response);
    }
    if let Some(rect) = &r.rectangle {
        for (j, a) in rect.axes.iter().enumerate() {
            println!("x{} interval:          [{:.4}, {:.4}]", j + 1, a.lower, a.upper);
        }
    }
    if let Some(e) = &r.ellipse {
        println!("ellipse radius^2:     {:.4}", e.radius_sq);
    }
    if let Some(i) = &r.mean_interval {
        println!("mean interval:        [{:.4}, {:.4}]", i.lower, i.upper);
    }
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    for p in written {
        println!("wrote {}", p.display());
    }
}

fn fmt_coefs(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|c| format!("{c:.4}")).collect();
    format!("({})", parts.join(", "))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let (args, depth) = match cli.command {
        Command::Analyze(a) => (a, Depth::Full),
        Command::Fit(a) => (a, Depth::Fit),
        Command::Optimize(a) => (a, Depth::Optimize),
    };
    let config = build_config(args, depth).map_err(|e| PipelineError::new(Stage::Config, format!("{e:#}")))?;
    let output = run_stages(&config, depth)?;
    let written = write_artifacts(&output, config.emit, &config.out_dir)?;
    print_summary(&output, &written);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rsboot: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
