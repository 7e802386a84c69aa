//! Replicated design tables: parsing, validation and per-cell summaries.
//!
//! A design table holds `n >= 2` replicate observations at each of a set of
//! distinct coded design points. The CSV layout is one row per observation:
//!
//! ```text
//! x1,x2,y
//! -1,-1,73.94
//! -1,-1,76.09
//! ...
//! ```
//!
//! Consecutive rows sharing the same coordinates form one cell. A point that
//! reappears after a different point is rejected as a duplicate design point.

use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sample variances below this value are clamped before taking the log.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("line {line}, column {column}: cannot parse {value:?} as a finite number")]
    Parse { line: u64, column: String, value: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCount { line: u64, expected: usize, found: usize },
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("header must read x1,...,xk,y (got {0:?})")]
    Header(String),
    #[error("input is not valid UTF-8 text")]
    Encoding,
    #[error("duplicate design point {0:?}")]
    DuplicatePoint(Vec<f64>),
    #[error("design point {point:?} has {count} replicate(s); at least 2 are required")]
    TooFewReplicates { point: Vec<f64>, count: usize },
    #[error("dimension mismatch: expected {expected} factor(s), got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("design point {0:?} lies outside the declared factor box")]
    OutsideBox(Vec<f64>),
    #[error("non-finite value in design point {0:?}")]
    NonFinite(Vec<f64>),
    #[error("design table has no cells")]
    Empty,
    #[error("invalid factor box: {0}")]
    InvalidBox(String),
    #[error("invalid coding for factor {factor}: half range must be positive and finite")]
    InvalidCoding { factor: usize },
}

/// Axis-aligned box `[L_j, U_j]` over the coded factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct FactorBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl FactorBox {
    pub fn new(bounds: &[(f64, f64)]) -> Result<Self, DesignError> {
        if bounds.is_empty() {
            return Err(DesignError::InvalidBox("at least one factor is required".into()));
        }
        for (j, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(DesignError::InvalidBox(format!(
                    "factor {} has bounds [{lo}, {hi}]; need finite L < U",
                    j + 1
                )));
            }
        }
        Ok(Self {
            lower: bounds.iter().map(|b| b.0).collect(),
            upper: bounds.iter().map(|b| b.1).collect(),
        })
    }

    /// The coded cube `[-1, 1]^k`.
    pub fn unit(k: usize) -> Self {
        Self {
            lower: vec![-1.0; k],
            upper: vec![1.0; k],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    /// Clamps `x` onto the box in place.
    pub fn project(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

impl TryFrom<Vec<[f64; 2]>> for FactorBox {
    type Error = DesignError;

    fn try_from(value: Vec<[f64; 2]>) -> Result<Self, Self::Error> {
        let pairs: Vec<(f64, f64)> = value.into_iter().map(|[l, u]| (l, u)).collect();
        Self::new(&pairs)
    }
}

impl From<FactorBox> for Vec<[f64; 2]> {
    fn from(b: FactorBox) -> Self {
        b.lower.into_iter().zip(b.upper).map(|(l, u)| [l, u]).collect()
    }
}

/// Affine coding of one factor: `coded = (natural - center) / half_range`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorCoding {
    pub center: f64,
    pub half_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FactorCoding>", into = "Vec<FactorCoding>")]
pub struct CodingSpec {
    factors: Vec<FactorCoding>,
}

impl CodingSpec {
    pub fn new(factors: Vec<FactorCoding>) -> Result<Self, DesignError> {
        for (j, f) in factors.iter().enumerate() {
            if !(f.half_range.is_finite() && f.half_range > 0.0 && f.center.is_finite()) {
                return Err(DesignError::InvalidCoding { factor: j + 1 });
            }
        }
        Ok(Self { factors })
    }

    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[FactorCoding] {
        &self.factors
    }
}

impl TryFrom<Vec<FactorCoding>> for CodingSpec {
    type Error = DesignError;

    fn try_from(value: Vec<FactorCoding>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<CodingSpec> for Vec<FactorCoding> {
    fn from(c: CodingSpec) -> Self {
        c.factors
    }
}

/// Maps a point in natural units onto the coded scale.
pub fn code_variables(natural_point: &[f64], spec: &CodingSpec) -> Result<Vec<f64>, DesignError> {
    if natural_point.len() != spec.dim() {
        return Err(DesignError::Dimension {
            expected: spec.dim(),
            found: natural_point.len(),
        });
    }
    Ok(natural_point
        .iter()
        .zip(&spec.factors)
        .map(|(x, f)| (x - f.center) / f.half_range)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignCell {
    pub point: Vec<f64>,
    pub replicates: Vec<f64>,
}

/// A validated replicated design in coded units, together with the target `T0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignTable {
    cells: Vec<DesignCell>,
    factor_count: usize,
    target: f64,
}

impl DesignTable {
    /// Validates `cells` against the invariants of a replicated design whose
    /// points lie in `region`.
    pub fn new(cells: Vec<DesignCell>, target: f64, region: &FactorBox) -> Result<Self, DesignError> {
        let first = cells.first().ok_or(DesignError::Empty)?;
        let k = first.point.len();
        if k == 0 {
            return Err(DesignError::Dimension { expected: 1, found: 0 });
        }
        if region.dim() != k {
            return Err(DesignError::Dimension {
                expected: region.dim(),
                found: k,
            });
        }
        for (i, cell) in cells.iter().enumerate() {
            if cell.point.len() != k {
                return Err(DesignError::Dimension {
                    expected: k,
                    found: cell.point.len(),
                });
            }
            if cell.point.iter().any(|v| !v.is_finite()) || cell.replicates.iter().any(|v| !v.is_finite()) {
                return Err(DesignError::NonFinite(cell.point.clone()));
            }
            if cell.replicates.len() < 2 {
                return Err(DesignError::TooFewReplicates {
                    point: cell.point.clone(),
                    count: cell.replicates.len(),
                });
            }
            if !region.contains(&cell.point) {
                return Err(DesignError::OutsideBox(cell.point.clone()));
            }
            if cells[..i].iter().any(|c| c.point == cell.point) {
                return Err(DesignError::DuplicatePoint(cell.point.clone()));
            }
        }
        Ok(Self {
            cells,
            factor_count: k,
            target,
        })
    }

    pub fn cells(&self) -> &[DesignCell] {
        &self.cells
    }

    pub fn factor_count(&self) -> usize {
        self.factor_count
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.cells.iter().map(|c| c.point.clone()).collect()
    }

    /// Same design points, new replicate values. Used by resampling, where the
    /// structural invariants are already known to hold.
    pub(crate) fn with_replicates(&self, replicates: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(replicates.len(), self.cells.len());
        let cells = self
            .cells
            .iter()
            .zip(replicates)
            .map(|(c, r)| DesignCell {
                point: c.point.clone(),
                replicates: r,
            })
            .collect();
        Self {
            cells,
            factor_count: self.factor_count,
            target: self.target,
        }
    }
}

/// Options for [`parse_design_table_with`].
#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    /// Declared coded box; defaults to `[-1, 1]^k`.
    pub region: Option<FactorBox>,
    /// When present, input coordinates are natural units and are coded first.
    pub coding: Option<CodingSpec>,
}

/// Parses the `x1,...,xk,y` CSV layout, with coded inputs and the unit box.
pub fn parse_design_table<R: Read>(source: R, target: f64) -> Result<DesignTable, DesignError> {
    parse_design_table_with(source, target, &ParseOptions::default())
}

pub fn parse_design_table_with<R: Read>(
    mut source: R,
    target: f64,
    options: &ParseOptions,
) -> Result<DesignTable, DesignError> {
    let mut bytes = Vec::new();
    source
        .read_to_end(&mut bytes)
        .map_err(|e| DesignError::Csv(e.to_string()))?;
    let text = String::from_utf8(bytes).map_err(|_| DesignError::Encoding)?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| DesignError::Csv(e.to_string()))?.clone();
    let names: Vec<&str> = header.iter().collect();
    let k = check_header(&names)?;

    let mut cells: Vec<DesignCell> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { pos, expected_len, len } => DesignError::FieldCount {
                line: pos.as_ref().map_or(0, |p| p.line()),
                expected: *expected_len as usize,
                found: *len as usize,
            },
            _ => DesignError::Csv(e.to_string()),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let mut values = Vec::with_capacity(k + 1);
        for (field, column) in record.iter().zip(&names) {
            let value: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| DesignError::Parse {
                    line,
                    column: column.to_string(),
                    value: field.to_string(),
                })?;
            values.push(value);
        }
        let y = values.pop().expect("header guarantees a response column");
        let point = match &options.coding {
            Some(spec) => code_variables(&values, spec)?,
            None => values,
        };
        match cells.last_mut() {
            Some(cell) if cell.point == point => cell.replicates.push(y),
            _ => {
                if cells.iter().any(|c| c.point == point) {
                    return Err(DesignError::DuplicatePoint(point));
                }
                cells.push(DesignCell {
                    point,
                    replicates: vec![y],
                });
            }
        }
    }

    let region = options.region.clone().unwrap_or_else(|| FactorBox::unit(k));
    DesignTable::new(cells, target, &region)
}

fn check_header(names: &[&str]) -> Result<usize, DesignError> {
    let joined = names.join(",");
    let Some((last, factors)) = names.split_last() else {
        return Err(DesignError::Header(joined));
    };
    if factors.is_empty() || !last.eq_ignore_ascii_case("y") {
        return Err(DesignError::Header(joined));
    }
    for (j, name) in factors.iter().enumerate() {
        if !name.eq_ignore_ascii_case(&format!("x{}", j + 1)) {
            return Err(DesignError::Header(joined));
        }
    }
    Ok(factors.len())
}

/// Sample moments of one design cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub point: Vec<f64>,
    pub mean: f64,
    /// Sample variance with the `n - 1` divisor (unclamped).
    pub variance: f64,
    /// `ln(max(variance, VARIANCE_FLOOR))`.
    pub log_variance: f64,
    /// Set when the variance floor was applied.
    pub variance_floored: bool,
}

pub fn summarize(table: &DesignTable) -> Vec<CellSummary> {
    table
        .cells
        .iter()
        .map(|cell| {
            let (mean, variance) = sample_moments(&cell.replicates);
            let floored = variance < VARIANCE_FLOOR;
            CellSummary {
                point: cell.point.clone(),
                mean,
                variance,
                log_variance: variance.max(VARIANCE_FLOOR).ln(),
                variance_floored: floored,
            }
        })
        .collect()
}

/// Mean and unbiased variance. The mean is accumulated as an offset from the
/// first value so that constant samples reproduce their value exactly.
pub(crate) fn sample_moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let anchor = values[0];
    let offset: f64 = values.iter().map(|v| v - anchor).sum::<f64>() / n;
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let mean = (anchor + offset).clamp(lo, hi);
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (n - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table1() -> DesignTable {
        let csv = include_str!("../tests/data/table1.csv");
        parse_design_table(csv.as_bytes(), 50.0).unwrap()
    }

    #[test]
    fn parses_table1() {
        let t = table1();
        assert_eq!(t.factor_count(), 2);
        assert_eq!(t.cells().len(), 9);
        assert_eq!(t.target(), 50.0);
        assert!(t.cells().iter().all(|c| c.replicates.len() == 10));
        assert_eq!(t.cells()[0].point, vec![-1.0, -1.0]);
        assert_eq!(t.cells()[0].replicates[..3], [73.94, 76.09, 73.39]);
        assert_eq!(t.cells()[8].point, vec![1.0, 1.0]);
    }

    #[test]
    fn minimal_table() {
        let t = parse_design_table("x1,x2,y\n0,0,1.0\n0,0,1.0\n".as_bytes(), 0.0).unwrap();
        assert_eq!(t.factor_count(), 2);
        assert_eq!(t.cells().len(), 1);
        assert_eq!(t.cells()[0].replicates.len(), 2);
    }

    #[test]
    fn duplicate_point_rejected() {
        let src = "x1,x2,y\n-1,-1,1\n-1,-1,2\n0,0,1\n0,0,2\n-1,-1,3\n-1,-1,4\n";
        let err = parse_design_table(src.as_bytes(), 0.0).unwrap_err();
        assert_eq!(err, DesignError::DuplicatePoint(vec![-1.0, -1.0]));
        assert!(err.to_string().contains("duplicate design point"));
    }

    #[test]
    fn single_replicate_rejected() {
        let src = "x1,y\n0,1\n0,2\n1,5\n";
        let err = parse_design_table(src.as_bytes(), 0.0).unwrap_err();
        assert!(matches!(err, DesignError::TooFewReplicates { count: 1, .. }));
    }

    #[test]
    fn malformed_number_names_line_and_column() {
        let src = "x1,x2,y\n0,0,1\n0,abc,2\n";
        match parse_design_table(src.as_bytes(), 0.0).unwrap_err() {
            DesignError::Parse { line, column, value } => {
                assert_eq!(line, 3);
                assert_eq!(column, "x2");
                assert_eq!(value, "abc");
            }
            other => panic!("unexpected {other:?}"),
        }
        // thousands separators are not numbers
        let src = "x1,y\n0,\"1,000\"\n0,2\n";
        assert!(matches!(
            parse_design_table(src.as_bytes(), 0.0),
            Err(DesignError::Parse { .. })
        ));
    }

    #[test]
    fn header_is_checked() {
        assert!(matches!(
            parse_design_table("a,b,y\n0,0,1\n".as_bytes(), 0.0),
            Err(DesignError::Header(_))
        ));
        assert!(matches!(
            parse_design_table("y\n1\n".as_bytes(), 0.0),
            Err(DesignError::Header(_))
        ));
        assert!(matches!(
            parse_design_table(&b"x1,y\n0,\xff\n"[..], 0.0),
            Err(DesignError::Encoding)
        ));
    }

    #[test]
    fn ragged_row_rejected() {
        let err = parse_design_table("x1,x2,y\n0,0,1\n0,0\n".as_bytes(), 0.0).unwrap_err();
        assert!(matches!(
            err,
            DesignError::FieldCount {
                expected: 3,
                found: 2,
                ..
            }
        ));
    }

    #[test]
    fn points_outside_box_rejected() {
        let err = parse_design_table("x1,y\n2,1\n2,2\n".as_bytes(), 0.0).unwrap_err();
        assert!(matches!(err, DesignError::OutsideBox(_)));
    }

    #[test]
    fn coding_examples() {
        let spec = CodingSpec::new(vec![
            FactorCoding {
                center: 250.0,
                half_range: 50.0,
            },
            FactorCoding {
                center: 30.0,
                half_range: 10.0,
            },
        ])
        .unwrap();
        assert_eq!(code_variables(&[250.0, 30.0], &spec).unwrap(), vec![0.0, 0.0]);
        assert_eq!(code_variables(&[300.0, 20.0], &spec).unwrap(), vec![1.0, -1.0]);
        assert_eq!(code_variables(&[275.0, 35.0], &spec).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(
            code_variables(&[1.0], &spec),
            Err(DesignError::Dimension { expected: 2, found: 1 })
        ));
        assert!(CodingSpec::new(vec![FactorCoding {
            center: 0.0,
            half_range: 0.0
        }])
        .is_err());
    }

    #[test]
    fn natural_units_are_coded_on_parse() {
        let spec = CodingSpec::new(vec![FactorCoding {
            center: 250.0,
            half_range: 50.0,
        }])
        .unwrap();
        let opts = ParseOptions {
            region: None,
            coding: Some(spec),
        };
        let t = parse_design_table_with("x1,y\n200,1\n200,2\n300,3\n300,4\n".as_bytes(), 0.0, &opts).unwrap();
        assert_eq!(t.cells()[0].point, vec![-1.0]);
        assert_eq!(t.cells()[1].point, vec![1.0]);
    }

    #[test]
    fn table1_summaries_match_reference_columns() {
        let expected = [
            (75.949, 4.263),
            (64.209, 6.853),
            (91.247, 6.390),
            (63.895, 3.922),
            (51.900, 1.775),
            (79.952, 6.181),
            (92.793, 11.631),
            (78.992, 2.377),
            (107.938, 4.495),
        ];
        for (s, (m, v)) in summarize(&table1()).iter().zip(expected) {
            assert!((s.mean - m).abs() <= 1e-3, "{} vs {m}", s.mean);
            assert!((s.variance - v).abs() <= 1e-3, "{} vs {v}", s.variance);
            assert!((s.log_variance - s.variance.ln()).abs() < 1e-15);
            assert!(!s.variance_floored);
        }
    }

    #[test]
    fn constant_cell_is_floored() {
        let region = FactorBox::unit(1);
        for c in [0.1, -3.7, 1e6] {
            let t = DesignTable::new(
                vec![DesignCell {
                    point: vec![0.0],
                    replicates: vec![c, c, c],
                }],
                0.0,
                &region,
            )
            .unwrap();
            let s = &summarize(&t)[0];
            assert_eq!(s.mean, c);
            assert_eq!(s.variance, 0.0);
            assert_eq!(s.log_variance, VARIANCE_FLOOR.ln());
            assert!(s.variance_floored);
        }
    }

    #[test]
    fn factor_box_serde_and_projection() {
        let b = FactorBox::new(&[(-1.0, 1.0), (0.0, 2.0)]).unwrap();
        let json = serde_json::to_string(&b).unwrap();
        assert_eq!(json, "[[-1.0,1.0],[0.0,2.0]]");
        assert_eq!(serde_json::from_str::<FactorBox>(&json).unwrap(), b);
        let mut x = [3.0, -1.0];
        b.project(&mut x);
        assert_eq!(x, [1.0, 0.0]);
        assert!(FactorBox::new(&[(1.0, 1.0)]).is_err());
        assert!(serde_json::from_str::<FactorBox>("[[2.0,1.0]]").is_err());
    }
}
