//! Hand-written SVG figures for two-factor analyses.
//!
//! Every figure carries a `data-frame` attribute on each data panel with
//! `x0 x1 y0 y1 left top width height`, so drawn geometry can be mapped back
//! to coded units.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bootstrap::BootstrapEnsemble;
use crate::regions::{EllipticalRegion, Interval, RectangularRegion};
use crate::report::Report;

pub const SCATTER_FILE: &str = "scatter.svg";
pub const MARGINS_FILE: &str = "scatter_margins.svg";
pub const MEAN_HIST_FILE: &str = "mean_hist.svg";

/// Vertices used to draw the ellipse boundary.
pub const ELLIPSE_VERTICES: usize = 360;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("plots are only drawn for two factors, got {0}")]
    Unsupported(usize),
    #[error("nothing to plot: {0}")]
    Empty(&'static str),
    #[error("ellipse covariance is not positive definite")]
    Ellipse,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Linear map from a data rectangle onto a pixel rectangle, y pointing up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl Frame {
    pub fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x0) / (self.x1 - self.x0) * self.width
    }

    pub fn py(&self, y: f64) -> f64 {
        self.top + (self.y1 - y) / (self.y1 - self.y0) * self.height
    }

    pub fn data_x(&self, px: f64) -> f64 {
        self.x0 + (px - self.left) / self.width * (self.x1 - self.x0)
    }

    pub fn data_y(&self, py: f64) -> f64 {
        self.y1 - (py - self.top) / self.height * (self.y1 - self.y0)
    }

    /// Parses the `data-frame` attribute value.
    pub fn parse(attr: &str) -> Option<Frame> {
        let v: Vec<f64> = attr.split_whitespace().map(str::parse).collect::<Result<_, _>>().ok()?;
        if v.len() != 8 {
            return None;
        }
        Some(Frame {
            x0: v[0],
            x1: v[1],
            y0: v[2],
            y1: v[3],
            left: v[4],
            top: v[5],
            width: v[6],
            height: v[7],
        })
    }

    fn attr(&self) -> String {
        format!(
            "{:e} {:e} {:e} {:e} {} {} {} {}",
            self.x0, self.x1, self.y0, self.y1, self.left, self.top, self.width, self.height
        )
    }
}

/// Histogram bins: left edge of the first bin, common width and counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub start: f64,
    pub width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn end(&self) -> f64 {
        self.start + self.width * self.counts.len() as f64
    }

    pub fn density(&self, i: usize, total: usize) -> f64 {
        self.counts[i] as f64 / (total as f64 * self.width)
    }
}

const MAX_BINS: usize = 200;

/// Linear-interpolation sample quantile of sorted data.
fn quantile_sorted(s: &[f64], p: f64) -> f64 {
    let h = (s.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Freedman-Diaconis binning, with Sturges' rule when the IQR vanishes.
pub fn freedman_diaconis(values: &[f64]) -> Histogram {
    assert!(!values.is_empty());
    let s = sorted(values);
    let (lo, hi) = (s[0], s[s.len() - 1]);
    let n = s.len() as f64;
    let range = hi - lo;
    if range <= 0.0 {
        let width = 1e-3 * lo.abs().max(1.0);
        return Histogram {
            start: lo - width / 2.0,
            width,
            counts: vec![s.len()],
        };
    }
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let mut bins = if iqr > 0.0 {
        (range / (2.0 * iqr / n.cbrt())).ceil() as usize
    } else {
        (n.log2().ceil() as usize) + 1
    };
    bins = bins.clamp(1, MAX_BINS);
    let width = range / bins as f64;
    let mut counts = vec![0; bins];
    for v in &s {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Histogram {
        start: lo,
        width,
        counts,
    }
}

/// Silverman's rule-of-thumb bandwidth.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let s = sorted(values);
    let mean = s.iter().sum::<f64>() / n;
    let sd = if s.len() > 1 {
        (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    if h > 0.0 {
        h
    } else {
        1e-3 * mean.abs().max(1.0)
    }
}

/// Gaussian kernel density estimate evaluated on `grid`.
pub fn gaussian_kde(values: &[f64], bandwidth: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (values.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|g| {
            values
                .iter()
                .map(|v| {
                    let z = (g - v) / bandwidth;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect()
}

/// Boundary of `{theta : (theta - c)' S^-1 (theta - c) = r^2}` as a polygon.
pub fn ellipse_polygon(ellipse: &EllipticalRegion, vertices: usize) -> Result<Vec<[f64; 2]>, PlotError> {
    let (sigma, _) = ellipse.sigma.regularized();
    let chol = sigma.to_matrix().cholesky().ok_or(PlotError::Ellipse)?;
    let l = chol.l();
    let r = ellipse.radius_sq.sqrt();
    let (cx, cy) = (ellipse.center[0], ellipse.center[1]);
    Ok((0..vertices)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / vertices as f64;
            let (u, v) = (r * a.cos(), r * a.sin());
            [cx + l[(0, 0)] * u, cy + l[(1, 0)] * u + l[(1, 1)] * v]
        })
        .collect())
}

/// Data range padded by `pad` of its width; degenerate ranges get a small
/// symmetric window.
fn padded(lo: f64, hi: f64, pad: f64) -> (f64, f64) {
    let w = hi - lo;
    if w > 0.0 {
        (lo - pad * w, hi + pad * w)
    } else {
        let h = 0.05 * lo.abs().max(1.0);
        (lo - h, hi + h)
    }
}

fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let raw = (hi - lo) / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

struct Svg {
    out: String,
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
        Self { out }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, style: &str) {
        let _ = writeln!(
            self.out,
            r#"<line x1="{x1:.3}" y1="{y1:.3}" x2="{x2:.3}" y2="{y2:.3}" {style}/>"#
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, body: &str) {
        let _ = writeln!(
            self.out,
            r#"<text x="{x:.3}" y="{y:.3}" text-anchor="{anchor}">{body}</text>"#
        );
    }

    fn raw(&mut self, s: &str) {
        self.out.push_str(s);
        self.out.push('\n');
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }

    /// Panel border, ticks and optional axis labels.
    fn axes(&mut self, f: &Frame, xlabel: Option<&str>, ylabel: Option<&str>, xticks: bool, yticks: bool) {
        let _ = writeln!(
            self.out,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            f.left, f.top, f.width, f.height
        );
        let bottom = f.top + f.height;
        if xticks {
            for t in nice_ticks(f.x0, f.x1, 5) {
                let x = f.px(t);
                self.line(x, bottom, x, bottom + 5.0, r#"stroke="black""#);
                self.text(x, bottom + 17.0, "middle", &fmt_tick(t));
            }
        }
        if yticks {
            for t in nice_ticks(f.y0, f.y1, 5) {
                let y = f.py(t);
                self.line(f.left - 5.0, y, f.left, y, r#"stroke="black""#);
                self.text(f.left - 8.0, y + 4.0, "end", &fmt_tick(t));
            }
        }
        if let Some(l) = xlabel {
            self.text(f.left + f.width / 2.0, bottom + 38.0, "middle", l);
        }
        if let Some(l) = ylabel {
            let (x, y) = (f.left - 50.0, f.top + f.height / 2.0);
            let _ = writeln!(
                self.out,
                r#"<text x="{x:.3}" y="{y:.3}" text-anchor="middle" transform="rotate(-90 {x:.3} {y:.3})">{l}</text>"#
            );
        }
    }

    fn open_panel(&mut self, id: &str, f: &Frame) {
        let _ = writeln!(
            self.out,
            r#"<clipPath id="{id}-clip"><rect x="{}" y="{}" width="{}" height="{}"/></clipPath>"#,
            f.left, f.top, f.width, f.height
        );
        let _ = writeln!(
            self.out,
            r#"<g id="{id}" data-frame="{}" clip-path="url(#{id}-clip)">"#,
            f.attr()
        );
    }

    fn close_panel(&mut self) {
        self.raw("</g>");
    }

    fn points(&mut self, f: &Frame, optima: &[Vec<f64>]) {
        self.raw(r#"<g id="replicates" fill="steelblue" fill-opacity="0.45">"#);
        for p in optima {
            let _ = writeln!(
                self.out,
                r#"<circle cx="{:.3}" cy="{:.3}" r="1.6"/>"#,
                f.px(p[0]),
                f.py(p[1])
            );
        }
        self.raw("</g>");
    }

    /// Rectangle, or a cross of its extents when either side has zero width.
    fn rectangle(&mut self, f: &Frame, rect: &RectangularRegion) {
        let (a, b) = (&rect.axes[0], &rect.axes[1]);
        let style = r#"fill="none" stroke="firebrick" stroke-width="1.5""#;
        if a.upper > a.lower && b.upper > b.lower {
            let _ = writeln!(
                self.out,
                r#"<rect id="bonferroni-rect" x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" {style}/>"#,
                f.px(a.lower),
                f.py(b.upper),
                f.px(a.upper) - f.px(a.lower),
                f.py(b.lower) - f.py(b.upper)
            );
        } else {
            let (cx, cy) = ((a.lower + a.upper) / 2.0, (b.lower + b.upper) / 2.0);
            self.raw(r#"<g id="bonferroni-rect" data-degenerate="true">"#);
            self.line(f.px(a.lower), f.py(cy), f.px(a.upper), f.py(cy), style);
            self.line(f.px(cx), f.py(b.lower), f.px(cx), f.py(b.upper), style);
            self.raw("</g>");
        }
    }

    fn ellipse(&mut self, f: &Frame, poly: &[[f64; 2]]) {
        let mut d = String::new();
        for (i, p) in poly.iter().enumerate() {
            let _ = write!(
                d,
                "{}{:.3},{:.3} ",
                if i == 0 { "M" } else { "L" },
                f.px(p[0]),
                f.py(p[1])
            );
        }
        d.push('Z');
        let _ = writeln!(
            self.out,
            r#"<path id="ellipse" d="{d}" fill="none" stroke="darkgreen" stroke-width="1.5"/>"#
        );
    }

    fn crosshair(&mut self, f: &Frame, t: &[f64]) {
        let style = r#"stroke="black" stroke-dasharray="2,3""#;
        self.raw(r#"<g id="estimate">"#);
        self.line(f.px(t[0]), f.top, f.px(t[0]), f.top + f.height, style);
        self.line(f.left, f.py(t[1]), f.left + f.width, f.py(t[1]), style);
        self.raw("</g>");
    }
}

/// Bounding box of everything drawn in the region panels.
fn region_extent(rect: Option<&RectangularRegion>, poly: Option<&[[f64; 2]]>, t: &[f64]) -> ([f64; 2], [f64; 2]) {
    let mut xs = vec![t[0]];
    let mut ys = vec![t[1]];
    if let Some(r) = rect {
        xs.extend([r.axes[0].lower, r.axes[0].upper]);
        ys.extend([r.axes[1].lower, r.axes[1].upper]);
    }
    if let Some(p) = poly {
        xs.extend(p.iter().map(|v| v[0]));
        ys.extend(p.iter().map(|v| v[1]));
    }
    let mm = |v: &[f64]| {
        [
            v.iter().copied().fold(f64::INFINITY, f64::min),
            v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ]
    };
    (mm(&xs), mm(&ys))
}

/// Scatter of the replicate optima with both regions and the estimate.
pub fn scatter_svg(
    optima: &[Vec<f64>],
    t: &[f64],
    rect: Option<&RectangularRegion>,
    ellipse: Option<&EllipticalRegion>,
) -> Result<String, PlotError> {
    if t.len() != 2 {
        return Err(PlotError::Unsupported(t.len()));
    }
    let poly = ellipse.map(|e| ellipse_polygon(e, ELLIPSE_VERTICES)).transpose()?;
    let (mut xr, mut yr) = region_extent(rect, poly.as_deref(), t);
    for p in optima {
        xr = [xr[0].min(p[0]), xr[1].max(p[0])];
        yr = [yr[0].min(p[1]), yr[1].max(p[1])];
    }
    let (x0, x1) = padded(xr[0], xr[1], 0.05);
    let (y0, y1) = padded(yr[0], yr[1], 0.05);
    let f = Frame {
        x0,
        x1,
        y0,
        y1,
        left: 80.0,
        top: 30.0,
        width: 500.0,
        height: 500.0,
    };
    let mut svg = Svg::new(600.0, 600.0);
    svg.open_panel("scatter", &f);
    svg.points(&f, optima);
    if let Some(r) = rect {
        svg.rectangle(&f, r);
    }
    if let Some(p) = &poly {
        svg.ellipse(&f, p);
    }
    svg.crosshair(&f, t);
    svg.close_panel();
    svg.axes(&f, Some("x1"), Some("x2"), true, true);
    Ok(svg.finish())
}

fn hist_bars(svg: &mut Svg, h: &Histogram, total: usize, vertical: bool, f: &Frame) {
    svg.raw(r#"<g class="bars" fill="lightsteelblue" stroke="white" stroke-width="0.5">"#);
    for i in 0..h.counts.len() {
        let a = h.start + i as f64 * h.width;
        let b = a + h.width;
        let d = h.density(i, total);
        let s = if vertical {
            format!(
                r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}"/>"#,
                f.px(a),
                f.py(d),
                f.px(b) - f.px(a),
                f.py(0.0) - f.py(d)
            )
        } else {
            format!(
                r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}"/>"#,
                f.px(0.0),
                f.py(b),
                f.px(d) - f.px(0.0),
                f.py(a) - f.py(b)
            )
        };
        svg.raw(&s);
    }
    svg.raw("</g>");
}

fn kde_path(svg: &mut Svg, grid: &[f64], dens: &[f64], vertical: bool, f: &Frame) {
    let mut d = String::new();
    for (i, (g, v)) in grid.iter().zip(dens).enumerate() {
        let (x, y) = if vertical {
            (f.px(*g), f.py(*v))
        } else {
            (f.px(*v), f.py(*g))
        };
        let _ = write!(d, "{}{x:.3},{y:.3} ", if i == 0 { "M" } else { "L" });
    }
    let _ = writeln!(
        svg.out,
        r#"<path class="kde" d="{}" fill="none" stroke="navy" stroke-width="1.2"/>"#,
        d.trim_end()
    );
}

/// Zoom on the regions with marginal histograms and kernel densities.
pub fn scatter_margins_svg(
    optima: &[Vec<f64>],
    t: &[f64],
    rect: Option<&RectangularRegion>,
    ellipse: Option<&EllipticalRegion>,
) -> Result<String, PlotError> {
    if t.len() != 2 {
        return Err(PlotError::Unsupported(t.len()));
    }
    if optima.is_empty() {
        return Err(PlotError::Empty("no replicate optima"));
    }
    let poly = ellipse.map(|e| ellipse_polygon(e, ELLIPSE_VERTICES)).transpose()?;
    let (xr, yr) = region_extent(rect, poly.as_deref(), t);
    let (x0, x1) = padded(xr[0], xr[1], 0.1);
    let (y0, y1) = padded(yr[0], yr[1], 0.1);
    let main = Frame {
        x0,
        x1,
        y0,
        y1,
        left: 80.0,
        top: 170.0,
        width: 460.0,
        height: 460.0,
    };
    let mut svg = Svg::new(720.0, 700.0);
    svg.open_panel("scatter", &main);
    svg.points(&main, optima);
    if let Some(r) = rect {
        svg.rectangle(&main, r);
    }
    if let Some(p) = &poly {
        svg.ellipse(&main, p);
    }
    svg.crosshair(&main, t);
    svg.close_panel();
    svg.axes(&main, Some("x1"), Some("x2"), true, true);

    for axis in 0..2 {
        let values: Vec<f64> = optima.iter().map(|p| p[axis]).collect();
        let h = freedman_diaconis(&values);
        let bw = silverman_bandwidth(&values);
        let (lo, hi) = if axis == 0 { (x0, x1) } else { (y0, y1) };
        let grid: Vec<f64> = (0..=200).map(|i| lo + (hi - lo) * i as f64 / 200.0).collect();
        let dens = gaussian_kde(&values, bw, &grid);
        let peak = (0..h.counts.len())
            .map(|i| h.density(i, values.len()))
            .chain(dens.iter().copied())
            .fold(0.0, f64::max);
        let top = if peak > 0.0 { 1.05 * peak } else { 1.0 };
        let (id, f) = if axis == 0 {
            (
                "margin-x1",
                Frame {
                    x0,
                    x1,
                    y0: 0.0,
                    y1: top,
                    left: main.left,
                    top: 30.0,
                    width: main.width,
                    height: 120.0,
                },
            )
        } else {
            (
                "margin-x2",
                Frame {
                    x0: 0.0,
                    x1: top,
                    y0,
                    y1,
                    left: 560.0,
                    top: main.top,
                    width: 140.0,
                    height: main.height,
                },
            )
        };
        svg.open_panel(id, &f);
        hist_bars(&mut svg, &h, values.len(), axis == 0, &f);
        kde_path(&mut svg, &grid, &dens, axis == 0, &f);
        svg.close_panel();
        svg.axes(&f, None, None, false, false);
    }
    Ok(svg.finish())
}

/// Histogram of the replicate mean responses with interval and estimate.
pub fn mean_hist_svg(mean_stars: &[f64], estimate: f64, interval: Option<&Interval>) -> Result<String, PlotError> {
    if mean_stars.is_empty() {
        return Err(PlotError::Empty("no replicate mean responses"));
    }
    let h = freedman_diaconis(mean_stars);
    let mut xs = vec![h.start, h.end(), estimate];
    if let Some(i) = interval {
        xs.extend([i.lower, i.upper]);
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (x0, x1) = padded(lo, hi, 0.05);
    let peak = (0..h.counts.len())
        .map(|i| h.density(i, mean_stars.len()))
        .fold(0.0, f64::max);
    let f = Frame {
        x0,
        x1,
        y0: 0.0,
        y1: 1.05 * peak,
        left: 80.0,
        top: 30.0,
        width: 500.0,
        height: 340.0,
    };
    let mut svg = Svg::new(600.0, 430.0);
    svg.open_panel("mean-hist", &f);
    hist_bars(&mut svg, &h, mean_stars.len(), true, &f);
    if let Some(i) = interval {
        svg.raw(r#"<g id="mean-interval">"#);
        for v in [i.lower, i.upper] {
            svg.line(
                f.px(v),
                f.top,
                f.px(v),
                f.top + f.height,
                r#"stroke="firebrick" stroke-dasharray="2,3""#,
            );
        }
        svg.raw("</g>");
    }
    let x = f.px(estimate);
    let _ = writeln!(
        svg.out,
        r#"<line id="mean-estimate" x1="{x:.3}" y1="{}" x2="{x:.3}" y2="{}" stroke="black" stroke-dasharray="6,4"/>"#,
        f.top,
        f.top + f.height
    );
    svg.close_panel();
    svg.axes(
        &f,
        Some("mean response at replicate optimum"),
        Some("density"),
        true,
        true,
    );
    Ok(svg.finish())
}

/// Writes the three figures into `out_dir` and returns their paths.
pub fn emit_plots(report: &Report, ensemble: &BootstrapEnsemble, out_dir: &Path) -> Result<Vec<PathBuf>, PlotError> {
    let k = ensemble.k();
    if k != 2 {
        return Err(PlotError::Unsupported(k));
    }
    let optima = ensemble.optima();
    let t = &ensemble.point_estimate;
    let rect = report.rectangle.as_ref();
    let ellipse = report.ellipse.as_ref();
    let figures = [
        (SCATTER_FILE, scatter_svg(&optima, t, rect, ellipse)?),
        (MARGINS_FILE, scatter_margins_svg(&optima, t, rect, ellipse)?),
        (
            MEAN_HIST_FILE,
            mean_hist_svg(
                &ensemble.mean_stars(),
                ensemble.mean_estimate,
                report.mean_interval.as_ref(),
            )?,
        ),
    ];
    let mut paths = Vec::new();
    for (name, body) in figures {
        let path = out_dir.join(name);
        fs::write(&path, body)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::Covariance;

    #[test]
    fn frame_round_trip() {
        let f = Frame {
            x0: -0.3,
            x1: 0.1,
            y0: -1.0,
            y1: 2.0,
            left: 80.0,
            top: 30.0,
            width: 500.0,
            height: 400.0,
        };
        assert!((f.data_x(f.px(0.05)) - 0.05).abs() < 1e-12);
        assert!((f.data_y(f.py(1.5)) - 1.5).abs() < 1e-12);
        assert_eq!(f.py(2.0), 30.0);
        assert_eq!(Frame::parse(&f.attr()), Some(f));
    }

    #[test]
    fn fd_bins_cover_data() {
        let v: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let h = freedman_diaconis(&v);
        assert_eq!(h.counts.iter().sum::<usize>(), 100);
        let integral: f64 = (0..h.counts.len()).map(|i| h.density(i, 100) * h.width).sum();
        assert!((integral - 1.0).abs() < 1e-12);
        let flat = freedman_diaconis(&[3.0; 10]);
        assert_eq!(flat.counts, vec![10]);
    }

    #[test]
    fn kde_integrates_to_one() {
        let v = [0.0, 0.5, 1.0, 3.0];
        let bw = silverman_bandwidth(&v);
        let grid: Vec<f64> = (0..=4000).map(|i| -10.0 + i as f64 * 0.005).collect();
        let area: f64 = gaussian_kde(&v, bw, &grid).iter().sum::<f64>() * 0.005;
        assert!((area - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ellipse_vertices_are_on_the_boundary() {
        let sigma = Covariance::from_row_major(2, vec![0.02, 0.006, 0.006, 0.01]).unwrap();
        let e = EllipticalRegion {
            center: vec![0.1, -0.2],
            shape: sigma.inverse().unwrap(),
            sigma,
            radius_sq: 4.6,
            level: 0.9,
            ridge_applied: false,
        };
        for p in ellipse_polygon(&e, 64).unwrap() {
            assert!((e.quadratic_form(&p) - 4.6).abs() < 1e-9);
        }
    }

    #[test]
    fn non_planar_rejected() {
        assert!(matches!(
            scatter_svg(&[vec![0.0; 3]], &[0.0; 3], None, None),
            Err(PlotError::Unsupported(3))
        ));
    }
}
