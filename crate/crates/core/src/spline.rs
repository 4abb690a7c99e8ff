//! Clamped B-spline basis with quantile-placed interior knots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DEGREE: usize = 3;
pub const DEFAULT_DF: usize = 6;

/// Basis definition for one scalar predictor.
///
/// The padded knot vector repeats each boundary `degree + 1` times, so
/// `df = interior_knots.len() + degree + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec {
    pub degree: usize,
    pub df: usize,
    pub interior_knots: Vec<f64>,
    pub boundary: (f64, f64),
}

impl SplineSpec {
    /// Fit a spec to observed values: boundary at the range of the data,
    /// `df - degree - 1` interior knots at equally spaced quantiles of the
    /// distinct values.
    pub fn from_values(x_values: &[f64], df: usize, degree: usize) -> Result<Self> {
        if df <= degree {
            return Err(Error::Config(format!("df ({df}) must exceed degree ({degree})")));
        }
        let mut distinct: Vec<f64> = x_values.iter().copied().filter(|v| v.is_finite()).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < df.max(2) {
            return Err(Error::DegenerateInput(format!(
                "{} distinct values, need at least {df}",
                distinct.len()
            )));
        }
        let n_interior = df - degree - 1;
        let interior_knots = (1..=n_interior)
            .map(|k| quantile_sorted(&distinct, k as f64 / (n_interior + 1) as f64))
            .collect();
        Ok(Self {
            degree,
            df,
            interior_knots,
            boundary: (distinct[0], distinct[distinct.len() - 1]),
        })
    }

    /// Padded knot vector of length `df + degree + 1`.
    pub fn knots(&self) -> Vec<f64> {
        let (lo, hi) = self.boundary;
        let mut t = Vec::with_capacity(self.df + self.degree + 1);
        t.extend(std::iter::repeat(lo).take(self.degree + 1));
        t.extend_from_slice(&self.interior_knots);
        t.extend(std::iter::repeat(hi).take(self.degree + 1));
        t
    }

    /// Basis values at `x` (clamped to the boundary), length `df`.
    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.df];
        self.evaluate_into(x, &mut out);
        out
    }

    /// Write the basis values at `x` into `out[..df]`.
    pub fn evaluate_into(&self, x: f64, out: &mut [f64]) {
        let p = self.degree;
        let (lo, hi) = self.boundary;
        let x = x.clamp(lo, hi);
        let t = self.knots();
        // Span k with t[k] <= x < t[k+1], k in [p, df-1]; x == hi uses the last span.
        let k = if x >= hi {
            self.df - 1
        } else {
            let mut k = p;
            while k + 1 < self.df && t[k + 1] <= x {
                k += 1;
            }
            k
        };

        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[k + 1 - j];
            right[j] = t[k + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        out[..self.df].iter_mut().for_each(|v| *v = 0.0);
        for (r, v) in n.into_iter().enumerate() {
            out[k - p + r] = v;
        }
    }
}

/// Linear-interpolation quantile of sorted data (the usual "type 7").
fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn make_spec(x_values: &[f64], df: usize, degree: usize) -> Result<SplineSpec> {
    SplineSpec::from_values(x_values, df, degree)
}

pub fn evaluate_basis(spec: &SplineSpec, x: f64) -> Vec<f64> {
    spec.evaluate(x)
}
