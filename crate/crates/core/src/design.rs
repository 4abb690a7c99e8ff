//! Lagged level/slope/acceleration features and their spline expansion.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{SourceFamily, WeeklyPanel};
use crate::error::{Error, Result};
use crate::spline::SplineSpec;

/// A nonempty set of source families used as predictors.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Variant {
    sources: BTreeSet<SourceFamily>,
}

impl Variant {
    pub fn new(sources: impl IntoIterator<Item = SourceFamily>) -> Result<Self> {
        let sources: BTreeSet<_> = sources.into_iter().collect();
        if sources.is_empty() {
            return Err(Error::Config("a variant needs at least one source family".into()));
        }
        Ok(Self { sources })
    }

    pub fn sources(&self) -> &BTreeSet<SourceFamily> {
        &self.sources
    }

    /// Canonical name, e.g. `ili+ed+trend`.
    pub fn name(&self) -> String {
        self.sources
            .iter()
            .map(|f| f.as_str().to_ascii_lowercase())
            .collect::<Vec<_>>()
            .join("+")
    }

    /// The seven source combinations in reporting order.
    pub fn all() -> Vec<Variant> {
        use SourceFamily::*;
        [
            vec![Ili],
            vec![Ed],
            vec![Trend],
            vec![Ili, Ed],
            vec![Ili, Trend],
            vec![Ed, Trend],
            vec![Ili, Ed, Trend],
        ]
        .into_iter()
        .map(|v| Variant::new(v).unwrap())
        .collect()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut sources = BTreeSet::new();
        for part in s.split('+') {
            let fam: SourceFamily = part.parse().map_err(Error::Config)?;
            if !sources.insert(fam) {
                return Err(Error::Config(format!("variant `{s}` repeats {fam}")));
            }
        }
        Variant::new(sources)
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Level,
    Slope,
    Accel,
}

impl Feature {
    pub const ALL: [Feature; 3] = [Feature::Level, Feature::Slope, Feature::Accel];

    pub fn as_str(self) -> &'static str {
        match self {
            Feature::Level => "level",
            Feature::Slope => "slope",
            Feature::Accel => "accel",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub source_id: String,
    pub family: SourceFamily,
    pub feature: Feature,
}

/// Trailing level, first difference and second difference of `series` as
/// known `horizon` weeks before target position `t`.
pub fn lag_features(series: &[f64], t: usize, horizon: usize) -> Result<(f64, f64, f64)> {
    if t < horizon + 2 || t - horizon >= series.len() {
        return Err(Error::InsufficientHistory(format!(
            "target position {t} with horizon {horizon} needs positions {}..={}, series has {}",
            t as i64 - horizon as i64 - 2,
            t as i64 - horizon as i64,
            series.len()
        )));
    }
    let a = series[t - horizon];
    let b = series[t - horizon - 1];
    let c = series[t - horizon - 2];
    Ok((a, a - b, (a - b) - (b - c)))
}

/// Raw predictor matrix: one row per predictable target week.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub values: DMatrix<f64>,
    pub column_meta: Vec<ColumnMeta>,
    pub horizon: usize,
    /// Panel position (0-based) of each row's target week.
    pub row_positions: Vec<usize>,
    /// Week index of each row's target week.
    pub row_weeks: Vec<usize>,
}

impl DesignMatrix {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    /// SHA-256 over the ordered column descriptions.
    pub fn column_digest(&self) -> String {
        column_digest(&self.column_meta)
    }
}

pub fn column_digest(meta: &[ColumnMeta]) -> String {
    let mut h = Sha256::new();
    for c in meta {
        h.update(format!("{}|{}|{}\n", c.family, c.source_id, c.feature.as_str()).as_bytes());
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn build_matrix(panel: &WeeklyPanel, variant: &Variant, horizon: usize) -> Result<DesignMatrix> {
    if !(1..=2).contains(&horizon) {
        return Err(Error::Config(format!("horizon must be 1 or 2, got {horizon}")));
    }
    let n_weeks = panel.n_weeks();
    if n_weeks < horizon + 3 {
        return Err(Error::InsufficientHistory(format!(
            "{n_weeks} weeks; horizon {horizon} needs at least {}",
            horizon + 3
        )));
    }
    let mut series: Vec<_> = panel
        .series()
        .iter()
        .filter(|s| variant.sources().contains(&s.family))
        .collect();
    for fam in variant.sources() {
        if !series.iter().any(|s| s.family == *fam) {
            return Err(Error::Config(format!("variant `{variant}` needs {fam} series but the panel has none")));
        }
    }
    series.sort_by(|a, b| a.family.cmp(&b.family).then_with(|| a.source_id.cmp(&b.source_id)));

    let row_positions: Vec<usize> = (horizon + 2..n_weeks).collect();
    let n_rows = row_positions.len();
    let mut column_meta = Vec::with_capacity(3 * series.len());
    let mut values = DMatrix::zeros(n_rows, 3 * series.len());
    for (s_idx, s) in series.iter().enumerate() {
        for f in Feature::ALL {
            column_meta.push(ColumnMeta {
                source_id: s.source_id.clone(),
                family: s.family,
                feature: f,
            });
        }
        for (r, &t) in row_positions.iter().enumerate() {
            let (level, slope, accel) = lag_features(&s.values, t, horizon)?;
            values[(r, 3 * s_idx)] = level;
            values[(r, 3 * s_idx + 1)] = slope;
            values[(r, 3 * s_idx + 2)] = accel;
        }
    }
    let first = panel.first_week();
    Ok(DesignMatrix {
        values,
        column_meta,
        horizon,
        row_weeks: row_positions.iter().map(|p| p + first).collect(),
        row_positions,
    })
}

/// How one raw column is expanded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnBasis {
    Spline(SplineSpec),
    /// Fallback for columns with too few distinct training values: one
    /// centered linear column followed by zero columns.
    Linear { center: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedMatrix {
    pub values: DMatrix<f64>,
    pub bases: Vec<ColumnBasis>,
    pub block_index: Vec<Range<usize>>,
    pub df: usize,
}

impl ExpandedMatrix {
    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    /// Expand one raw predictor row with the frozen bases.
    pub fn expand_row(&self, raw: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.bases.len() * self.df];
        for (j, (basis, x)) in self.bases.iter().zip(raw).enumerate() {
            write_block(basis, *x, &mut out[j * self.df..(j + 1) * self.df]);
        }
        out
    }
}

fn write_block(basis: &ColumnBasis, x: f64, out: &mut [f64]) {
    match basis {
        ColumnBasis::Spline(spec) => spec.evaluate_into(x, out),
        ColumnBasis::Linear { center } => {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[0] = x - center;
        }
    }
}

/// Fit a basis per raw column on `train_rows` and expand every row.
pub fn expand(design: &DesignMatrix, train_rows: &[usize], df: usize, degree: usize) -> Result<ExpandedMatrix> {
    if train_rows.is_empty() {
        return Err(Error::Config("expansion needs at least one training row".into()));
    }
    if df <= degree {
        return Err(Error::Config(format!("df ({df}) must exceed degree ({degree})")));
    }
    let n = design.rows();
    let d = design.cols();
    let mut bases = Vec::with_capacity(d);
    for j in 0..d {
        let col = design.values.column(j);
        let train: Vec<f64> = train_rows.iter().map(|&r| col[r]).collect();
        let basis = match SplineSpec::from_values(&train, df, degree) {
            Ok(spec) => ColumnBasis::Spline(spec),
            Err(Error::DegenerateInput(msg)) => {
                let meta = &design.column_meta[j];
                log::warn!(
                    "column {}:{} has {msg}; using a centered linear column",
                    meta.source_id,
                    meta.feature.as_str()
                );
                ColumnBasis::Linear {
                    center: train.iter().sum::<f64>() / train.len() as f64,
                }
            }
            Err(e) => return Err(e),
        };
        bases.push(basis);
    }
    let mut values = DMatrix::zeros(n, d * df);
    let mut buf = vec![0.0; df];
    for (j, basis) in bases.iter().enumerate() {
        for r in 0..n {
            write_block(basis, design.values[(r, j)], &mut buf);
            for (k, v) in buf.iter().enumerate() {
                values[(r, j * df + k)] = *v;
            }
        }
    }
    Ok(ExpandedMatrix {
        values,
        bases,
        block_index: (0..d).map(|j| j * df..(j + 1) * df).collect(),
        df,
    })
}
