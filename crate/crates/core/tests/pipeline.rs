mod common;

use std::fs;
use std::path::Path;

use regex::Regex;
use rsboot::plot::{scatter_svg, Frame, MEAN_HIST_FILE, SCATTER_FILE};
use rsboot::report::{Emit, REPLICATES_FILE, REPORT_FILE};
use rsboot::{run_pipeline, run_stages, write_artifacts, Depth, Report, RunConfig, Stage};

fn small_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::new(common::table1_path(), 50.0);
    cfg.replicates = 39;
    cfg.inner_replicates = 20;
    cfg.seed = 17;
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn run_to_dir(cfg: &RunConfig) -> Vec<(String, Vec<u8>)> {
    let out = run_pipeline(cfg).unwrap();
    let files = write_artifacts(&out, cfg.emit, &cfg.out_dir).unwrap();
    assert_eq!(files.len(), 5);
    files
        .iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn artifacts_are_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut reference = None;
    for threads in [1, 2, 8] {
        let mut cfg = small_config(&dir.path().join(format!("w{threads}")));
        cfg.threads = threads;
        let files = run_to_dir(&cfg);
        match &reference {
            None => reference = Some(files),
            Some(r) => assert_eq!(&files, r, "{threads} workers"),
        }
    }
    // and across repeated runs into the same directory
    let cfg = small_config(&dir.path().join("w1"));
    assert_eq!(Some(run_to_dir(&cfg)), reference);
}

#[test]
fn report_round_trips_and_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_pipeline(&small_config(dir.path())).unwrap();
    let r = &out.report;
    let json = r.to_json();
    assert_eq!(Report::from_json(&json).unwrap(), *r);
    assert_eq!(Report::from_json(&json).unwrap().to_json(), json);

    let opt = r.optimum.as_ref().unwrap();
    let boot = r.bootstrap.as_ref().unwrap();
    assert_eq!(boot.point_estimate, opt.x_oc);
    assert_eq!(r.ellipse.as_ref().unwrap().center, opt.x_oc);
    assert_eq!(boot.mean_estimate, opt.predicted_mean);
    assert!(r.rectangle.as_ref().unwrap().contains(&opt.x_oc));
    assert_eq!(r.cells.len(), 9);
    assert_eq!(r.config.region.dim(), 2);

    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["mean_surface"]["terms"][3]["name"], "x1^2");
    assert!(v["rectangle"]["axes"][0]["lower"].is_f64());
    assert_eq!(v["ellipse"]["sigma"].as_array().unwrap().len(), 4);
    assert!(v["ellipse"]["radius_sq"].is_f64());
}

#[test]
fn index_rule_fails_before_reading_data() {
    let mut cfg = RunConfig::new("/nonexistent/data.csv", 50.0);
    cfg.replicates = 1000;
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.stage, Stage::Config);
    assert_eq!(err.exit_code(), 2);
    assert!(err.message.contains("1000"), "{err}");
}

#[test]
fn stage_exit_codes_are_distinct() {
    let stages = [
        Stage::Config,
        Stage::Data,
        Stage::Fit,
        Stage::Optimize,
        Stage::Bootstrap,
        Stage::Regions,
        Stage::Output,
        Stage::Plot,
    ];
    let mut codes: Vec<i32> = stages.iter().map(|s| s.exit_code()).collect();
    assert!(codes.iter().all(|c| *c > 1));
    codes.sort_unstable();
    codes.dedup();
    assert_eq!(codes.len(), stages.len());
}

#[test]
fn failures_name_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let missing = RunConfig::new(dir.path().join("nope.csv"), 50.0);
    assert_eq!(run_pipeline(&missing).unwrap_err().stage, Stage::Data);

    // five design points cannot identify six coefficients
    let thin = dir.path().join("thin.csv");
    fs::write(
        &thin,
        "x1,x2,y\n-1,-1,1\n-1,-1,2\n1,-1,3\n1,-1,4\n-1,1,5\n-1,1,6\n1,1,7\n1,1,8\n0,0,9\n0,0,10\n",
    )
    .unwrap();
    let err = run_pipeline(&RunConfig::new(&thin, 5.0)).unwrap_err();
    assert_eq!(err.stage, Stage::Fit, "{err}");

    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let mut cfg = small_config(&blocker);
    cfg.emit = Emit::default();
    let out = run_pipeline(&cfg).unwrap();
    assert_eq!(
        write_artifacts(&out, cfg.emit, &blocker).unwrap_err().stage,
        Stage::Output
    );
}

#[test]
fn partial_depths_stop_early() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let fit = run_stages(&cfg, Depth::Fit).unwrap();
    assert!(fit.report.optimum.is_none() && fit.ensemble.is_none());
    let opt = run_stages(&cfg, Depth::Optimize).unwrap();
    assert!(opt.report.optimum.is_some() && opt.report.bootstrap.is_none());
    // partial depths do not need a valid bootstrap configuration
    let mut odd = cfg.clone();
    odd.replicates = 1000;
    assert!(run_stages(&odd, Depth::Optimize).is_ok());
}

#[test]
fn dual_mode_is_reported_alongside() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.modes = vec![rsboot::OptimumMode::SquaredLoss, rsboot::OptimumMode::DualResponse];
    let at50 = run_stages(&cfg, Depth::Optimize).unwrap().report;
    assert!(at50.dual_optimum.is_none());
    assert!(at50.warnings.iter().any(|w| w.contains("dual-response")));
    cfg.target = 55.0;
    let at55 = run_stages(&cfg, Depth::Optimize).unwrap().report;
    let d = at55.dual_optimum.unwrap();
    assert!(at55.optimum.unwrap().objective <= (d.predicted_mean - 55.0).powi(2) + d.predicted_variance);
}

#[test]
fn three_factor_plots_are_rejected_after_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("k3.csv");
    let mut csv = String::from("x1,x2,x3,y\n");
    let mut v = 0.0f64;
    for a in [-1, 0, 1] {
        for b in [-1, 0, 1] {
            for c in [-1, 0, 1] {
                for r in 0..3 {
                    v += 1.0;
                    let y = 10.0 + a as f64 + 2.0 * (b * c) as f64 + ((v * 0.7).sin() + r as f64) * 0.5;
                    csv.push_str(&format!("{a},{b},{c},{y}\n"));
                }
            }
        }
    }
    fs::write(&data, csv).unwrap();
    let mut cfg = RunConfig::new(&data, 10.0);
    cfg.replicates = 59;
    cfg.inner_replicates = 3;
    cfg.out_dir = dir.path().join("out");
    let out = run_pipeline(&cfg).unwrap();
    let err = write_artifacts(&out, cfg.emit, &cfg.out_dir).unwrap_err();
    assert_eq!(err.stage, Stage::Plot);
    let written = fs::read_to_string(cfg.out_dir.join(REPORT_FILE)).unwrap();
    assert_eq!(Report::from_json(&written).unwrap(), out.report);
    assert!(cfg.out_dir.join(REPLICATES_FILE).exists());
}

fn attr(tag: &str, name: &str) -> f64 {
    let re = Regex::new(&format!(r#"\b{name}="([^"]+)""#)).unwrap();
    re.captures(tag).unwrap()[1].parse().unwrap()
}

fn element<'a>(svg: &'a str, id: &str) -> &'a str {
    let start = svg
        .find(&format!(r#"id="{id}""#))
        .unwrap_or_else(|| panic!("no element {id}"));
    let open = svg[..start].rfind('<').unwrap();
    let end = start + svg[start..].find('>').unwrap();
    &svg[open..=end]
}

fn frame_of(svg: &str, id: &str) -> Frame {
    let tag = element(svg, id);
    let re = Regex::new(r#"data-frame="([^"]+)""#).unwrap();
    Frame::parse(&re.captures(tag).unwrap()[1]).unwrap()
}

#[test]
fn drawn_regions_match_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = run_pipeline(&cfg).unwrap();
    write_artifacts(&out, cfg.emit, dir.path()).unwrap();
    let svg = fs::read_to_string(dir.path().join(SCATTER_FILE)).unwrap();
    let f = frame_of(&svg, "scatter");
    let (sx, sy) = (0.005 * (f.x1 - f.x0), 0.005 * (f.y1 - f.y0));

    let rect = out.report.rectangle.as_ref().unwrap();
    let tag = element(&svg, "bonferroni-rect");
    let (x, y, w, h) = (attr(tag, "x"), attr(tag, "y"), attr(tag, "width"), attr(tag, "height"));
    assert!((f.data_x(x) - rect.axes[0].lower).abs() <= sx);
    assert!((f.data_x(x + w) - rect.axes[0].upper).abs() <= sx);
    assert!((f.data_y(y + h) - rect.axes[1].lower).abs() <= sy);
    assert!((f.data_y(y) - rect.axes[1].upper).abs() <= sy);

    let ell = out.report.ellipse.as_ref().unwrap();
    let path = element(&svg, "ellipse");
    let re = Regex::new(r"[ML](-?[0-9.]+),(-?[0-9.]+)").unwrap();
    let pts: Vec<[f64; 2]> = re
        .captures_iter(path)
        .map(|c| [f.data_x(c[1].parse().unwrap()), f.data_y(c[2].parse().unwrap())])
        .collect();
    assert!(pts.len() >= 100);
    for p in &pts {
        // nearest boundary point along the ray from the center
        let s = (ell.quadratic_form(p) / ell.radius_sq).sqrt();
        let on = [
            ell.center[0] + (p[0] - ell.center[0]) / s,
            ell.center[1] + (p[1] - ell.center[1]) / s,
        ];
        assert!(
            (p[0] - on[0]).abs() <= sx && (p[1] - on[1]).abs() <= sy,
            "{p:?} vs {on:?}"
        );
    }
    for (j, tol) in [(0, sx), (1, sy)] {
        let half = (ell.radius_sq * ell.sigma.get(j, j)).sqrt();
        let max = pts.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max);
        let min = pts.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
        assert!((max - (ell.center[j] + half)).abs() <= tol);
        assert!((min - (ell.center[j] - half)).abs() <= tol);
    }

    let t = &out.report.optimum.as_ref().unwrap().x_oc;
    let cross = &svg[svg.find(r#"id="estimate""#).unwrap()..];
    let lines: Vec<&str> = cross.split("<line").skip(1).take(2).collect();
    assert!((f.data_x(attr(lines[0], "x1")) - t[0]).abs() <= sx);
    assert!((f.data_y(attr(lines[1], "y1")) - t[1]).abs() <= sy);
    assert!(lines.iter().all(|l| l.contains("stroke-dasharray")));

    let hist = fs::read_to_string(dir.path().join(MEAN_HIST_FILE)).unwrap();
    let hf = frame_of(&hist, "mean-hist");
    let est = element(&hist, "mean-estimate");
    let m = out.report.optimum.as_ref().unwrap().predicted_mean;
    assert!((hf.data_x(attr(est, "x1")) - m).abs() <= 0.005 * (hf.x1 - hf.x0));
    let iv = out.report.mean_interval.as_ref().unwrap();
    let seg = &hist[hist.find(r#"id="mean-interval""#).unwrap()..];
    let ends: Vec<f64> = seg
        .split("<line")
        .skip(1)
        .take(2)
        .map(|l| hf.data_x(attr(l, "x1")))
        .collect();
    assert!((ends[0] - iv.lower).abs() <= 0.005 * (hf.x1 - hf.x0));
    assert!((ends[1] - iv.upper).abs() <= 0.005 * (hf.x1 - hf.x0));
}

#[test]
fn degenerate_ensemble_draws_a_point_and_a_cross() {
    let t = vec![0.2, -0.1];
    let e = common::ensemble_from(t.clone(), vec![t.clone(); 39], None);
    let rect = rsboot::bonferroni_region(&t, &e, 0.1).unwrap();
    assert_eq!(rect.axes[0].lower, rect.axes[0].upper);
    let svg = scatter_svg(&e.optima(), &t, Some(&rect), None).unwrap();
    assert!(svg.contains(r#"id="bonferroni-rect" data-degenerate="true""#));
    let f = frame_of(&svg, "scatter");
    assert!(f.x1 > f.x0 && f.y1 > f.y0);
    assert_eq!(svg.matches("<circle").count(), 39);
}

#[test]
fn emit_flags_select_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.emit = Emit {
        report: true,
        replicates: false,
        plots: false,
    };
    let out = run_pipeline(&cfg).unwrap();
    let files = write_artifacts(&out, cfg.emit, dir.path()).unwrap();
    assert_eq!(files, vec![dir.path().join(REPORT_FILE)]);
}
