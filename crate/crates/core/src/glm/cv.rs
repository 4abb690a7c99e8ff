//! Penalty selection by K-fold cross-validation along a descending grid.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::solver::{fit, lambda_max, FitOptions};
use super::{linear_predictor, neg_log_likelihood, Family, ModelFit};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvPlan {
    pub fold_count: usize,
    pub lambda_count: usize,
    pub lambda_min_ratio: f64,
    /// Explicit descending grid; overrides `lambda_count`/`lambda_min_ratio`.
    pub lambda_grid: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for CvPlan {
    fn default() -> Self {
        CvPlan {
            fold_count: 10,
            lambda_count: 50,
            lambda_min_ratio: 1e-4,
            lambda_grid: None,
            seed: 0,
        }
    }
}

impl CvPlan {
    pub fn validate(&self, rows: usize) -> Result<()> {
        if self.fold_count < 2 {
            return Err(Error::Config("fold_count must be at least 2".into()));
        }
        if rows < 2 * self.fold_count {
            return Err(Error::InsufficientHistory(format!(
                "{rows} rows cannot support {}-fold cross-validation",
                self.fold_count
            )));
        }
        match &self.lambda_grid {
            Some(g) => {
                if g.is_empty() || g.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(Error::Config("lambda grid must hold positive finite values".into()));
                }
                if g.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(Error::Config("lambda grid must be strictly descending".into()));
                }
            }
            None => {
                if self.lambda_count < 1 {
                    return Err(Error::Config("lambda_count must be positive".into()));
                }
                if !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0) {
                    return Err(Error::Config("lambda_min_ratio must lie in (0, 1)".into()));
                }
            }
        }
        Ok(())
    }

    fn grid(&self, lmax: f64) -> Vec<f64> {
        match &self.lambda_grid {
            Some(g) => g.clone(),
            None => lambda_grid(lmax, self.lambda_count, self.lambda_min_ratio),
        }
    }
}

/// `count` log-spaced values from `lmax` down to `ratio·lmax`.
pub fn lambda_grid(lmax: f64, count: usize, ratio: f64) -> Vec<f64> {
    if count == 1 {
        return vec![lmax];
    }
    let step = ratio.ln() / (count - 1) as f64;
    (0..count).map(|k| lmax * (step * k as f64).exp()).collect()
}

/// Fold of every row: rows are ordered by key, shuffled with the seed, then
/// dealt round-robin.
pub fn fold_assignment(keys: &[u64], folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by_key(|&i| (keys[i], i));
    order.shuffle(&mut crate::seed::rng(seed));
    let mut out = vec![0; keys.len()];
    for (pos, &row) in order.iter().enumerate() {
        out[row] = pos % folds;
    }
    out
}

/// Warm-started fits down a descending grid.
pub fn fit_path(
    x: &DMatrix<f64>,
    y: &[f64],
    family: Family,
    grid: &[f64],
    opts: &FitOptions,
) -> Result<Vec<ModelFit>> {
    let mut out: Vec<ModelFit> = Vec::with_capacity(grid.len());
    for &lam in grid {
        let f = fit(x, y, family, lam, out.last(), opts)?;
        out.push(f);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub lambda_star: f64,
    pub best_index: Option<usize>,
    pub lambda_max: f64,
    pub grid: Vec<f64>,
    /// Mean held-out negative log-likelihood per row; `None` marks a grid
    /// point where some fold fit failed.
    pub cv_curve: Vec<Option<f64>>,
    /// All coefficients are zero at every penalty; no search was run.
    pub degenerate: bool,
}

/// Chooses the penalty minimizing mean held-out negative log-likelihood.
/// `row_keys` order rows before the seeded shuffle (typically target week
/// indices) so the folds do not depend on how rows happen to be stored.
pub fn cross_validate(
    x: &DMatrix<f64>,
    y: &[f64],
    family: Family,
    plan: &CvPlan,
    row_keys: &[u64],
    opts: &FitOptions,
) -> Result<CvOutcome> {
    let n = x.nrows();
    if y.len() != n || row_keys.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: if y.len() != n { y.len() } else { row_keys.len() },
        });
    }
    plan.validate(n)?;
    family.check_response(y)?;
    let lmax = lambda_max(x, y, family);
    let all_zero = family == Family::Poisson && y.iter().all(|&v| v == 0.0);
    if !(lmax > 0.0) || all_zero {
        return Ok(CvOutcome {
            lambda_star: lmax.max(0.0),
            best_index: None,
            lambda_max: lmax,
            grid: vec![],
            cv_curve: vec![],
            degenerate: true,
        });
    }
    let grid = plan.grid(lmax);
    let folds = fold_assignment(row_keys, plan.fold_count, plan.seed);

    let per_fold: Vec<Vec<Option<f64>>> = par::map_range(plan.fold_count, |k| {
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != k).collect();
        let test: Vec<usize> = (0..n).filter(|&i| folds[i] == k).collect();
        let xt = x.select_rows(&train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let xh = x.select_rows(&test);
        let yh: Vec<f64> = test.iter().map(|&i| y[i]).collect();
        let scale = train.len() as f64 / n as f64;
        let mut warm: Option<ModelFit> = None;
        grid.iter()
            .map(|&lam| match fit(&xt, &yt, family, lam * scale, warm.as_ref(), opts) {
                Ok(f) => {
                    let eta = linear_predictor(&xh, f.intercept, &f.coef);
                    let score = neg_log_likelihood(family, &yh, &eta)
                        .ok()
                        .map(|v| v / yh.len() as f64)
                        .filter(|v| v.is_finite());
                    warm = Some(f);
                    score
                }
                Err(e) => {
                    log::warn!("fold {k} fit failed at penalty {lam}: {e}");
                    None
                }
            })
            .collect()
    });

    let cv_curve: Vec<Option<f64>> = (0..grid.len())
        .map(|g| {
            let mut sum = 0.0;
            for fold in &per_fold {
                sum += fold[g]?;
            }
            Some(sum / plan.fold_count as f64)
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (g, v) in cv_curve.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((g, v));
            }
        }
    }
    let Some((best_index, _)) = best else {
        return Err(Error::DegenerateInput("every cross-validation grid point failed".into()));
    };
    Ok(CvOutcome {
        lambda_star: grid[best_index],
        best_index: Some(best_index),
        lambda_max: lmax,
        grid,
        cv_curve,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape() {
        let g = lambda_grid(2.0, 50, 1e-4);
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 2.0);
        assert!((g[49] - 2e-4).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn folds_balanced_and_seeded() {
        let keys: Vec<u64> = (0..103).collect();
        let a = fold_assignment(&keys, 10, 7);
        assert_eq!(a, fold_assignment(&keys, 10, 7));
        assert_ne!(a, fold_assignment(&keys, 10, 8));
        for k in 0..10 {
            let c = a.iter().filter(|&&f| f == k).count();
            assert!(c == 10 || c == 11);
        }
        // Row storage order does not matter, only keys.
        let rev: Vec<u64> = keys.iter().rev().copied().collect();
        let b = fold_assignment(&rev, 10, 7);
        for i in 0..103 {
            assert_eq!(a[i], b[102 - i]);
        }
    }

    #[test]
    fn plan_validation() {
        let p = CvPlan::default();
        assert!(p.validate(19).is_err());
        assert!(p.validate(20).is_ok());
        let bad = CvPlan { lambda_grid: Some(vec![1.0, 1.0]), ..CvPlan::default() };
        assert!(bad.validate(100).is_err());
    }

    #[test]
    fn constant_response_is_degenerate() {
        let x = DMatrix::from_fn(30, 2, |i, j| ((i * 7 + j * 3) % 11) as f64);
        let y = vec![4.0; 30];
        let keys: Vec<u64> = (0..30).collect();
        let out = cross_validate(&x, &y, Family::Poisson, &CvPlan::default(), &keys, &FitOptions::default()).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.lambda_star, 0.0);
    }
}
