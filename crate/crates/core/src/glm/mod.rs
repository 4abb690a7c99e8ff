//! Lasso-penalized Poisson and Gaussian regression.
//!
//! The smooth part of the objective is the summed negative log-likelihood
//! `l(β)` (Poisson: `Σ exp(η) − y·η`, the `log y!` constant dropped;
//! Gaussian: `½ Σ (y − η)²`), and the full objective is
//! `f(β) = l(β) + λ·Σ|β_j|` with the intercept unpenalized.

mod cv;
mod solver;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cv::{cross_validate, fit_path, fold_assignment, lambda_grid, CvOutcome, CvPlan};
pub use solver::{fit, lambda_max, null_intercept, FitOptions, Standardizer};


#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Log link; responses must be nonnegative integers.
    Poisson,
    /// Identity link.
    Gaussian,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Poisson => "poisson",
            Family::Gaussian => "gaussian",
        }
    }

    /// Mean of the response given the linear predictor.
    pub fn inverse_link(self, eta: f64) -> f64 {
        match self {
            Family::Poisson => eta.exp(),
            Family::Gaussian => eta,
        }
    }

    pub fn check_response(self, y: &[f64]) -> Result<()> {
        if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidResponse(format!("y[{i}] = {v} is not finite")));
        }
        if self == Family::Poisson {
            if let Some((i, v)) = y.iter().enumerate().find(|(_, &v)| v < 0.0 || v.fract() != 0.0) {
                return Err(Error::InvalidResponse(format!(
                    "poisson response must be a nonnegative integer, y[{i}] = {v}"
                )));
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "poisson" => Ok(Family::Poisson),
            "gaussian" => Ok(Family::Gaussian),
            other => Err(Error::Config(format!("unknown family `{other}`"))),
        }
    }
}

/// Per-observation contribution to the negative log-likelihood.
#[inline]
pub(crate) fn nll_term(family: Family, y: f64, eta: f64) -> f64 {
    match family {
        Family::Poisson => eta.exp() - y * eta,
        Family::Gaussian => 0.5 * (y - eta) * (y - eta),
    }
}

/// Summed negative log-likelihood of `y` at linear predictor `eta`.
pub fn neg_log_likelihood(family: Family, y: &[f64], eta: &[f64]) -> Result<f64> {
    if y.len() != eta.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            got: eta.len(),
        });
    }
    if let Some(i) = eta.iter().position(|e| !e.is_finite()) {
        return Err(Error::NonFiniteEta(i));
    }
    family.check_response(y)?;
    Ok(y.iter().zip(eta).map(|(&y, &e)| nll_term(family, y, e)).sum())
}

/// Linear predictor `intercept + X·coef` for every row of `x`.
pub fn linear_predictor(x: &DMatrix<f64>, intercept: f64, coef: &[f64]) -> Vec<f64> {
    let mut eta = vec![intercept; x.nrows()];
    for (j, &b) in coef.iter().enumerate() {
        if b != 0.0 {
            for (e, &v) in eta.iter_mut().zip(x.column(j).iter()) {
                *e += b * v;
            }
        }
    }
    eta
}

/// Gradient of the smooth part `l` with respect to (intercept, coef).
pub fn gradient(family: Family, x: &DMatrix<f64>, y: &[f64], intercept: f64, coef: &[f64]) -> (f64, Vec<f64>) {
    let eta = linear_predictor(x, intercept, coef);
    let resid: Vec<f64> = eta
        .iter()
        .zip(y)
        .map(|(&e, &y)| family.inverse_link(e) - y)
        .collect();
    let g0 = resid.iter().sum();
    let g = (0..x.ncols())
        .map(|j| x.column(j).iter().zip(&resid).map(|(a, b)| a * b).sum())
        .collect();
    (g0, g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub rows: usize,
    pub cols: usize,
    /// Penalized objective at the returned coefficients.
    pub objective: f64,
    pub passes: usize,
    pub converged: bool,
    /// The Poisson linear predictor hit the clipping bound during iteration.
    pub eta_clipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub penalty: f64,
    pub family: Family,
    pub train_meta: TrainMeta,
    /// Objective after each accepted outer step.
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

impl ModelFit {
    pub fn linear_predictor(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.coef.len() {
            return Err(Error::LengthMismatch {
                expected: self.coef.len(),
                got: row.len(),
            });
        }
        Ok(self.intercept + row.iter().zip(&self.coef).map(|(x, b)| x * b).sum::<f64>())
    }

    /// Expected response for one expanded row.
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        Ok(self.family.inverse_link(self.linear_predictor(row)?))
    }

    pub fn l1_norm(&self) -> f64 {
        self.coef.iter().map(|b| b.abs()).sum()
    }

    pub fn to_document(&self, column_digest: &str) -> ModelDocument {
        ModelDocument {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            family: self.family,
            intercept: self.intercept,
            coef: self.coef.clone(),
            penalty: self.penalty,
            column_digest: column_digest.to_string(),
            train_meta: self.train_meta.clone(),
        }
    }
}

pub fn predict(fit: &ModelFit, x_row: &[f64]) -> Result<f64> {
    fit.predict(x_row)
}

pub const MODEL_FORMAT: &str = "flugap-model";
pub const MODEL_VERSION: u32 = 1;

/// Versioned JSON form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub family: Family,
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub penalty: f64,
    pub column_digest: String,
    pub train_meta: TrainMeta,
}

impl ModelDocument {
    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(s)?;
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(Error::Config(format!(
                "unsupported model document {} v{}",
                doc.format, doc.version
            )));
        }
        Ok(doc)
    }

    pub fn into_fit(self) -> ModelFit {
        ModelFit {
            intercept: self.intercept,
            coef: self.coef,
            penalty: self.penalty,
            family: self.family,
            train_meta: self.train_meta,
            objective_trace: vec![],
        }
    }
}
