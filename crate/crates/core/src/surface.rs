//! Second-order response surfaces and their least-squares fit.
//!
//! Coefficients are stored in canonical order: intercept, linear terms
//! `x_i`, pure quadratics `x_i^2`, then cross products `x_i x_j` for `i < j`
//! in lexicographic order. For `k = 2` that is `b0, x1, x2, x1^2, x2^2, x1*x2`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative norm below which an orthogonalized column counts as dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("{points} design point(s) cannot identify {terms} model terms")]
    Rank { points: usize, terms: usize },
    #[error("singular fit: column {column} is linearly dependent on the preceding terms")]
    Singular { column: String },
    #[error("{count} coefficients given; a {k}-factor quadratic needs {expected}")]
    CoefficientCount { k: usize, count: usize, expected: usize },
    #[error("unexpected term {found:?} at position {position}; expected {expected:?}")]
    TermName {
        position: usize,
        expected: String,
        found: String,
    },
    #[error("non-finite value in fit input")]
    NonFinite,
}

/// Number of model terms of a full quadratic in `k` factors.
pub fn term_count(k: usize) -> usize {
    1 + 2 * k + k * (k.saturating_sub(1)) / 2
}

/// Canonical term names for `k` factors.
pub fn term_names(k: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(term_count(k));
    names.push("b0".to_string());
    names.extend((1..=k).map(|i| format!("x{i}")));
    names.extend((1..=k).map(|i| format!("x{i}^2")));
    for i in 1..=k {
        for j in i + 1..=k {
            names.push(format!("x{i}*x{j}"));
        }
    }
    names
}

/// Fills `out` with the canonical monomials evaluated at `x`.
pub(crate) fn monomials_into(x: &[f64], out: &mut [f64]) {
    let k = x.len();
    out[0] = 1.0;
    out[1..=k].copy_from_slice(x);
    for (o, v) in out[k + 1..=2 * k].iter_mut().zip(x) {
        *o = v * v;
    }
    let mut idx = 2 * k + 1;
    for i in 0..k {
        for j in i + 1..k {
            out[idx] = x[i] * x[j];
            idx += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SurfaceRepr", into = "SurfaceRepr")]
pub struct QuadraticSurface {
    k: usize,
    coefficients: Vec<f64>,
}

impl QuadraticSurface {
    pub fn new(k: usize, coefficients: Vec<f64>) -> Result<Self, FitError> {
        let expected = term_count(k);
        if k == 0 || coefficients.len() != expected {
            return Err(FitError::CoefficientCount {
                k,
                count: coefficients.len(),
                expected,
            });
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(FitError::NonFinite);
        }
        Ok(Self { k, coefficients })
    }

    /// The surface that is `c` everywhere.
    pub fn constant(k: usize, c: f64) -> Self {
        let mut coefficients = vec![0.0; term_count(k)];
        coefficients[0] = c;
        Self { k, coefficients }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn linear(&self) -> &[f64] {
        &self.coefficients[1..=self.k]
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64, FitError> {
        self.check_dim(x)?;
        Ok(self.value_at(x))
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, FitError> {
        self.check_dim(x)?;
        let mut g = vec![0.0; self.k];
        self.gradient_into(x, &mut g);
        Ok(g)
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), FitError> {
        if x.len() != self.k {
            return Err(FitError::Dimension {
                expected: self.k,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Unchecked evaluation for hot loops; `x.len()` must equal `k`.
    pub(crate) fn value_at(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.k);
        let k = self.k;
        let c = &self.coefficients;
        let mut v = c[0];
        for i in 0..k {
            v += x[i] * (c[1 + i] + c[1 + k + i] * x[i]);
        }
        let mut idx = 2 * k + 1;
        for i in 0..k {
            for j in i + 1..k {
                v += c[idx] * x[i] * x[j];
                idx += 1;
            }
        }
        v
    }

    /// Dot product with a precomputed monomial row.
    pub(crate) fn value_from_monomials(&self, row: &[f64]) -> f64 {
        self.coefficients.iter().zip(row).map(|(c, m)| c * m).sum()
    }

    pub(crate) fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let k = self.k;
        let c = &self.coefficients;
        for i in 0..k {
            out[i] = c[1 + i] + 2.0 * c[1 + k + i] * x[i];
        }
        let mut idx = 2 * k + 1;
        for i in 0..k {
            for j in i + 1..k {
                out[i] += c[idx] * x[j];
                out[j] += c[idx] * x[i];
                idx += 1;
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SurfaceRepr {
    k: usize,
    terms: Vec<Term>,
}

#[derive(Serialize, Deserialize)]
struct Term {
    name: String,
    value: f64,
}

impl From<QuadraticSurface> for SurfaceRepr {
    fn from(s: QuadraticSurface) -> Self {
        let terms = term_names(s.k)
            .into_iter()
            .zip(s.coefficients)
            .map(|(name, value)| Term { name, value })
            .collect();
        SurfaceRepr { k: s.k, terms }
    }
}

impl TryFrom<SurfaceRepr> for QuadraticSurface {
    type Error = FitError;

    fn try_from(r: SurfaceRepr) -> Result<Self, Self::Error> {
        let names = term_names(r.k);
        if names.len() != r.terms.len() {
            return Err(FitError::CoefficientCount {
                k: r.k,
                count: r.terms.len(),
                expected: names.len(),
            });
        }
        for (position, (expected, term)) in names.iter().zip(&r.terms).enumerate() {
            if *expected != term.name {
                return Err(FitError::TermName {
                    position,
                    expected: expected.clone(),
                    found: term.name.clone(),
                });
            }
        }
        QuadraticSurface::new(r.k, r.terms.into_iter().map(|t| t.value).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub residuals: Vec<f64>,
    pub residual_sum_of_squares: f64,
    /// Ratio of the largest to smallest diagonal magnitude of `R`.
    pub condition_estimate: f64,
}

/// Second-order model matrix, one row per point.
pub fn build_design_matrix(points: &[Vec<f64>]) -> Result<DMatrix<f64>, FitError> {
    let k = points.first().map_or(0, Vec::len);
    if k == 0 {
        return Err(FitError::Rank {
            points: points.len(),
            terms: term_count(k.max(1)),
        });
    }
    let p = term_count(k);
    if points.len() < p {
        return Err(FitError::Rank {
            points: points.len(),
            terms: p,
        });
    }
    let mut row = vec![0.0; p];
    let mut m = DMatrix::zeros(points.len(), p);
    for (r, x) in points.iter().enumerate() {
        if x.len() != k {
            return Err(FitError::Dimension {
                expected: k,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(FitError::NonFinite);
        }
        monomials_into(x, &mut row);
        for (c, v) in row.iter().enumerate() {
            m[(r, c)] = *v;
        }
    }
    Ok(m)
}

/// Householder QR factorization of a fixed design, reusable across many
/// response vectors (the bootstrap refits the same design thousands of times).
#[derive(Debug, Clone)]
pub struct LeastSquares {
    k: usize,
    design: DMatrix<f64>,
    /// Householder vectors below the diagonal, `R` on and above it.
    qr: DMatrix<f64>,
    /// Leading entry of each Householder vector (the rest live in `qr`).
    v_head: Vec<f64>,
    /// `2 / (v'v)` for each reflection; zero means identity.
    beta: Vec<f64>,
    r_diag: Vec<f64>,
}

impl LeastSquares {
    pub fn new(points: &[Vec<f64>]) -> Result<Self, FitError> {
        let design = build_design_matrix(points)?;
        let k = points[0].len();
        let (m, p) = design.shape();
        let names = term_names(k);
        let mut qr = design.clone();
        let mut v_head = vec![0.0; p];
        let mut beta = vec![0.0; p];
        let mut r_diag = vec![0.0; p];

        for j in 0..p {
            let original = design.column(j).norm();
            let norm = qr.view((j, j), (m - j, 1)).norm();
            if original == 0.0 || norm < RANK_TOLERANCE * original {
                return Err(FitError::Singular {
                    column: names[j].clone(),
                });
            }
            let x0 = qr[(j, j)];
            let alpha = if x0 >= 0.0 { -norm } else { norm };
            let head = x0 - alpha;
            // v = (head, qr[j+1.., j]); v'v = head^2 + tail^2
            let tail_sq: f64 = (j + 1..m).map(|i| qr[(i, j)] * qr[(i, j)]).sum();
            let vtv = head * head + tail_sq;
            let b = if vtv == 0.0 { 0.0 } else { 2.0 / vtv };
            for c in j + 1..p {
                let mut s = head * qr[(j, c)];
                for i in j + 1..m {
                    s += qr[(i, j)] * qr[(i, c)];
                }
                s *= b;
                qr[(j, c)] -= s * head;
                for i in j + 1..m {
                    let vij = qr[(i, j)];
                    qr[(i, c)] -= s * vij;
                }
            }
            qr[(j, j)] = alpha;
            v_head[j] = head;
            beta[j] = b;
            r_diag[j] = alpha;
        }
        Ok(Self {
            k,
            design,
            qr,
            v_head,
            beta,
            r_diag,
        })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn fit(&self, responses: &[f64]) -> Result<(QuadraticSurface, FitDiagnostics), FitError> {
        let (m, p) = self.design.shape();
        if responses.len() != m {
            return Err(FitError::Dimension {
                expected: m,
                found: responses.len(),
            });
        }
        if responses.iter().any(|v| !v.is_finite()) {
            return Err(FitError::NonFinite);
        }
        let coefficients = self.solve(responses);
        let mut residuals = Vec::with_capacity(m);
        for (r, y) in responses.iter().enumerate() {
            let fitted: f64 = (0..p).map(|c| self.design[(r, c)] * coefficients[c]).sum();
            residuals.push(y - fitted);
        }
        let rss = residuals.iter().map(|e| e * e).sum();
        let (lo, hi) = self.r_diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), d| {
            (lo.min(d.abs()), hi.max(d.abs()))
        });
        let diagnostics = FitDiagnostics {
            residuals,
            residual_sum_of_squares: rss,
            condition_estimate: (hi / lo).max(1.0),
        };
        Ok((QuadraticSurface::new(self.k, coefficients)?, diagnostics))
    }

    /// Coefficients only; skips the diagnostics.
    pub(crate) fn solve(&self, responses: &[f64]) -> Vec<f64> {
        let (m, p) = self.design.shape();
        let mut y = responses.to_vec();
        for j in 0..p {
            let mut s = self.v_head[j] * y[j];
            for i in j + 1..m {
                s += self.qr[(i, j)] * y[i];
            }
            s *= self.beta[j];
            y[j] -= s * self.v_head[j];
            for i in j + 1..m {
                y[i] -= s * self.qr[(i, j)];
            }
        }
        let mut c = vec![0.0; p];
        for j in (0..p).rev() {
            let mut s = y[j];
            for l in j + 1..p {
                s -= self.qr[(j, l)] * c[l];
            }
            c[j] = s / self.qr[(j, j)];
        }
        c
    }
}

/// One-shot least-squares fit of a full quadratic.
pub fn fit_ols(points: &[Vec<f64>], responses: &[f64]) -> Result<(QuadraticSurface, FitDiagnostics), FitError> {
    if !points.is_empty() && responses.len() != points.len() {
        return Err(FitError::Dimension {
            expected: points.len(),
            found: responses.len(),
        });
    }
    LeastSquares::new(points)?.fit(responses)
}
