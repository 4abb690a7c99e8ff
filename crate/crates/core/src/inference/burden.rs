use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::synchrony::pearson;
use crate::data::ZipRecord;
use crate::error::{Error, Result};

pub const BURDEN_LABELS: [&str; 4] = ["Intercept", "over65", "poverty", "interaction"];

/// Magnitude reported for t statistics of an exact fit.
pub const T_CAP: f64 = 1e12;

/// Hospitalizations per 1,000 residents over the whole panel.
pub fn burden_rate(z: &ZipRecord) -> f64 {
    1000.0 * z.total_hosp() as f64 / z.population as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefRow {
    pub label: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurdenRegression {
    pub coefficients: Vec<CoefRow>,
    pub n: usize,
    pub df_residual: usize,
    pub residual_std_error: f64,
    pub r_squared: f64,
    /// Residuals vanished; t values are capped at [`T_CAP`].
    pub exact_fit: bool,
}

fn two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() || t.abs() >= T_CAP {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Least squares of the per-1,000 rate on over-65 share, poverty share and
/// their product, solved by QR.
pub fn burden_regression(zips: &[ZipRecord]) -> Result<BurdenRegression> {
    let n = zips.len();
    let k = BURDEN_LABELS.len();
    if n <= k {
        return Err(Error::DegenerateInput(format!("burden regression needs more than {k} zips, got {n}")));
    }
    let x = DMatrix::from_fn(n, k, |i, j| {
        let z = &zips[i];
        match j {
            0 => 1.0,
            1 => z.over65_pct,
            2 => z.poverty_pct,
            _ => z.over65_pct * z.poverty_pct,
        }
    });
    let y = DVector::from_iterator(n, zips.iter().map(burden_rate));
    let qr = x.clone().qr();
    let r = qr.r();
    let rmax = (0..k).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if (0..k).any(|j| r[(j, j)].abs() <= 1e-10 * rmax) {
        return Err(Error::RankDeficient);
    }
    let qty = qr.q().transpose() * &y;
    let beta = r.solve_upper_triangular(&qty).ok_or(Error::RankDeficient)?;
    let resid = &y - &x * &beta;
    let rss = resid.norm_squared();
    let ybar = y.mean();
    let tss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let df = n - k;
    let s2 = rss / df as f64;
    let rinv = r.try_inverse().ok_or(Error::RankDeficient)?;
    let cov_unscaled = &rinv * rinv.transpose();
    let exact_fit = rss <= 1e-20 * tss.max(y.norm_squared()).max(f64::MIN_POSITIVE);

    let coefficients = (0..k)
        .map(|j| {
            let est = beta[j];
            let se = (s2 * cov_unscaled[(j, j)]).sqrt();
            let t = if exact_fit || se == 0.0 {
                if est == 0.0 {
                    0.0
                } else {
                    est.signum() * T_CAP
                }
            } else {
                (est / se).clamp(-T_CAP, T_CAP)
            };
            let p = if t == 0.0 && (exact_fit || se == 0.0) { 1.0 } else { two_sided_p(t, df as f64) };
            CoefRow {
                label: BURDEN_LABELS[j].to_string(),
                estimate: est,
                std_error: se,
                t_value: t,
                p_value: p,
            }
        })
        .collect();
    Ok(BurdenRegression {
        coefficients,
        n,
        df_residual: df,
        residual_std_error: s2.sqrt(),
        r_squared: if tss > 0.0 { 1.0 - rss / tss } else { 1.0 },
        exact_fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub n: usize,
    pub r: f64,
    /// Two-sided p of the usual t test for zero correlation.
    pub p_value: f64,
}

impl Correlation {
    fn of(a: &[f64], b: &[f64]) -> Option<Self> {
        let r = pearson(a, b)?;
        let n = a.len();
        let p_value = if n < 3 {
            1.0
        } else if r.abs() >= 1.0 {
            0.0
        } else {
            let t = r * ((n as f64 - 2.0) / (1.0 - r * r)).sqrt();
            two_sided_p(t, n as f64 - 2.0)
        };
        Some(Correlation { n, r, p_value })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedCorrelations {
    /// Rate among residents under 65 against poverty.
    pub under65_poverty: Option<Correlation>,
    /// Rate among residents 65 and over against poverty.
    pub over65_poverty: Option<Correlation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurdenCorrelations {
    pub poverty: Option<Correlation>,
    pub over65: Option<Correlation>,
    /// Present only when every zip carries age-split counts.
    pub stratified: Option<StratifiedCorrelations>,
}

/// Correlations of the per-1,000 rate with poverty (and over-65 share),
/// overall and, given age-split counts, within the two age strata.
pub fn burden_correlations(zips: &[ZipRecord]) -> BurdenCorrelations {
    let rate: Vec<f64> = zips.iter().map(burden_rate).collect();
    let pov: Vec<f64> = zips.iter().map(|z| z.poverty_pct).collect();
    let old: Vec<f64> = zips.iter().map(|z| z.over65_pct).collect();
    let stratified = if !zips.is_empty() && zips.iter().all(|z| z.age_split.is_some()) {
        let stratum = |over: bool| {
            let (mut r, mut p) = (vec![], vec![]);
            for z in zips {
                let split = z.age_split.as_ref().expect("checked above");
                let share = if over { z.over65_pct } else { 100.0 - z.over65_pct } / 100.0;
                let residents = z.population as f64 * share;
                if residents <= 0.0 {
                    continue;
                }
                let counts = if over { &split.over65 } else { &split.under65 };
                r.push(1000.0 * counts.iter().sum::<u64>() as f64 / residents);
                p.push(z.poverty_pct);
            }
            Correlation::of(&r, &p)
        };
        Some(StratifiedCorrelations {
            under65_poverty: stratum(false),
            over65_poverty: stratum(true),
        })
    } else {
        None
    };
    BurdenCorrelations {
        poverty: Correlation::of(&rate, &pov),
        over65: Correlation::of(&rate, &old),
        stratified,
    }
}
