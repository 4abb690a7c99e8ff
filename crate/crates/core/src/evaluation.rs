//! Forecast scoring: population-normalized out-of-sample RMSE under
//! leave-one-out and chronological holdout, held-out likelihood, and a
//! sign-flip test for residual bias.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{group_response, QuartileGrouping, WeeklyPanel, GROUPS};
use crate::design::{build_matrix, expand, DesignMatrix, Variant};
use crate::error::{Error, Result};
use crate::glm::{cross_validate, fit, lambda_grid, lambda_max, nll_term, CvPlan, Family, FitOptions, ModelFit, Standardizer};
use crate::{par, seed};

/// How rows are split into training and test sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitScheme {
    /// Refit once per row, leaving that row out.
    Loo,
    /// Train on the earliest `⌈train_fraction·N⌉` rows, test on the rest.
    Holdout { train_fraction: f64 },
}

impl SplitScheme {
    pub fn holdout(train_fraction: f64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::Config(format!("train fraction must lie in (0, 1), got {train_fraction}")));
        }
        Ok(SplitScheme::Holdout { train_fraction })
    }

    /// Number of training rows for a holdout split of `n` rows.
    pub fn train_count(train_fraction: f64, n: usize) -> usize {
        // Guard against products like 0.6·10 = 6.000000000000001.
        ((train_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
    }

    /// Short name safe for file names, e.g. `loo` or `holdout60`.
    pub fn tag(&self) -> String {
        match self {
            SplitScheme::Loo => "loo".into(),
            SplitScheme::Holdout { train_fraction } => {
                format!("holdout{}", format_fraction(train_fraction * 100.0).replace('.', "_"))
            }
        }
    }
}

fn format_fraction(v: f64) -> String {
    let s = format!("{v:.6}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

impl fmt::Display for SplitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitScheme::Loo => f.write_str("loo"),
            SplitScheme::Holdout { train_fraction } => write!(f, "holdout:{}", format_fraction(*train_fraction)),
        }
    }
}

impl FromStr for SplitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "loo" {
            return Ok(SplitScheme::Loo);
        }
        if let Some(rest) = s.strip_prefix("holdout") {
            let rest = rest.trim_start_matches([':', '=', '-']);
            let frac: f64 = rest
                .parse()
                .map_err(|_| Error::Config(format!("bad holdout fraction in `{s}`")))?;
            return SplitScheme::holdout(if frac >= 1.0 { frac / 100.0 } else { frac });
        }
        Err(Error::Config(format!("unknown split scheme `{s}` (use loo or holdout:<fraction>)")))
    }
}

impl Serialize for SplitScheme {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SplitScheme {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which rows a report covers: one poverty quartile or all four pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupLabel {
    Quartile(usize),
    Combined,
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupLabel::Quartile(g) => write!(f, "{g}"),
            GroupLabel::Combined => f.write_str("combined"),
        }
    }
}

impl FromStr for GroupLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "combined" => Ok(GroupLabel::Combined),
            other => match other.parse::<usize>() {
                Ok(g) if (1..=GROUPS).contains(&g) => Ok(GroupLabel::Quartile(g)),
                _ => Err(Error::Config(format!("unknown group `{s}`"))),
            },
        }
    }
}

impl Serialize for GroupLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GroupLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub group: GroupLabel,
    pub variant: String,
    pub horizon: usize,
    pub scheme: SplitScheme,
    pub family: Family,
    pub ormse_per_million: f64,
    /// Mean per-week held-out negative log-likelihood.
    pub oos_neg_log_lik: f64,
    /// Population used to normalize the RMSE.
    pub population: f64,
    pub n_test: usize,
    pub test_weeks: Vec<usize>,
    pub observed: Vec<f64>,
    pub predicted: Vec<f64>,
    /// `observed − predicted`, one per test week.
    pub errors: Vec<f64>,
    /// Penalty chosen for each refit.
    pub penalties: Vec<f64>,
    pub refits: usize,
    pub nonconverged: usize,
    /// How the report was aggregated, for pooled reports.
    pub note: Option<String>,
}

pub const PER_MILLION: f64 = 1e6;

/// `scale·sqrt(Σe²/N)/population`.
pub fn ormse(errors: &[f64], group_population: u64, scale: f64) -> Result<f64> {
    if group_population == 0 {
        return Err(Error::DegenerateInput("group population must be positive".into()));
    }
    ormse_f(errors, group_population as f64, scale)
}

fn ormse_f(errors: &[f64], population: f64, scale: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::EmptyErrors);
    }
    let mse = errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64;
    Ok(scale * mse.sqrt() / population)
}

pub const COMBINED_NOTE: &str = "pooled errors of all quartiles; normalized by mean quartile population";

/// Pools the errors of several group reports. The pooled RMSE is divided by
/// the mean population of the pooled groups, so equal-population groups give
/// a value between the per-group extremes.
pub fn combine(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports.first().ok_or(Error::EmptyErrors)?;
    let mut out = EvalReport {
        group: GroupLabel::Combined,
        variant: first.variant.clone(),
        horizon: first.horizon,
        scheme: first.scheme,
        family: first.family,
        ormse_per_million: 0.0,
        oos_neg_log_lik: 0.0,
        population: 0.0,
        n_test: 0,
        test_weeks: vec![],
        observed: vec![],
        predicted: vec![],
        errors: vec![],
        penalties: vec![],
        refits: 0,
        nonconverged: 0,
        note: Some(COMBINED_NOTE.into()),
    };
    let mut nll_sum = 0.0;
    for r in reports {
        out.population += r.population;
        out.n_test += r.n_test;
        out.test_weeks.extend(&r.test_weeks);
        out.observed.extend(&r.observed);
        out.predicted.extend(&r.predicted);
        out.errors.extend(&r.errors);
        out.penalties.extend(&r.penalties);
        out.refits += r.refits;
        out.nonconverged += r.nonconverged;
        nll_sum += r.oos_neg_log_lik * r.n_test as f64;
    }
    let mean_pop = out.population / reports.len() as f64;
    out.ormse_per_million = ormse_f(&out.errors, mean_pop, PER_MILLION)?;
    out.oos_neg_log_lik = nll_sum / out.n_test as f64;
    Ok(out)
}

/// Two-sided sign-flip test of a zero mean residual. The statistic is
/// `|mean(e)|`; each null draw flips every residual's sign independently and
/// `p` is the share of null statistics at least as large as observed.
pub fn residual_bias_test(errors: &[f64], resamples: usize, seed: u64) -> Result<f64> {
    if errors.len() < 5 {
        return Err(Error::TooFewResiduals { needed: 5, got: errors.len() });
    }
    if resamples == 0 {
        return Err(Error::Config("resamples must be positive".into()));
    }
    let n = errors.len() as f64;
    let observed = (errors.iter().sum::<f64>() / n).abs();
    let threshold = observed - 1e-12 * observed.max(f64::MIN_POSITIVE);
    let mut rng = seed::rng(seed);
    let mut hits = 0usize;
    for _ in 0..resamples {
        let s: f64 = errors.iter().map(|&e| if rng.random::<bool>() { e } else { -e }).sum();
        if (s / n).abs() >= threshold {
            hits += 1;
        }
    }
    Ok(hits as f64 / resamples as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub family: Family,
    pub cv: CvPlan,
    pub df: usize,
    pub degree: usize,
    /// Select the penalty once on all rows and reuse it in every
    /// leave-one-out refit instead of cross-validating each refit.
    pub loo_reuse_lambda: bool,
    #[serde(skip)]
    pub fit: FitOptions,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            family: Family::Poisson,
            cv: CvPlan::default(),
            df: crate::spline::DEFAULT_DF,
            degree: crate::spline::DEFAULT_DEGREE,
            loo_reuse_lambda: false,
            fit: FitOptions::default(),
        }
    }
}

/// Expanded and standardized matrices for one train/test split.
struct Split {
    train: Vec<usize>,
    test: Vec<usize>,
    x_train: DMatrix<f64>,
    x_test: DMatrix<f64>,
}

impl Split {
    fn new(design: &DesignMatrix, train: Vec<usize>, test: Vec<usize>, settings: &EvalSettings) -> Result<Self> {
        let ex = expand(design, &train, settings.df, settings.degree)?;
        let std = Standardizer::from_rows(&ex.values, &train);
        let x_train = std.transform(&ex.values, &train);
        let x_test = std.transform(&ex.values, &test);
        Ok(Split { train, test, x_train, x_test })
    }
}

struct SplitFit {
    eta: Vec<f64>,
    penalty: f64,
    converged: bool,
}

/// Selects the penalty (unless fixed), fits down the path to it, and
/// returns linear predictors for the test rows.
fn fit_split(
    split: &Split,
    y: &[f64],
    keys: &[u64],
    settings: &EvalSettings,
    cv_seed: u64,
    fixed_penalty: Option<f64>,
) -> Result<SplitFit> {
    let family = settings.family;
    let yt: Vec<f64> = split.train.iter().map(|&i| y[i]).collect();
    let lmax = lambda_max(&split.x_train, &yt, family);
    let path: Vec<f64> = match fixed_penalty {
        Some(lam) => {
            let mut g: Vec<f64> = lambda_grid(lmax, settings.cv.lambda_count, settings.cv.lambda_min_ratio)
                .into_iter()
                .filter(|&v| v > lam)
                .collect();
            g.push(lam);
            g
        }
        None => {
            let kt: Vec<u64> = split.train.iter().map(|&i| keys[i]).collect();
            let plan = CvPlan { seed: cv_seed, ..settings.cv.clone() };
            let cv = cross_validate(&split.x_train, &yt, family, &plan, &kt, &settings.fit)?;
            match cv.best_index {
                Some(b) => cv.grid[..=b].to_vec(),
                None => vec![cv.lambda_star],
            }
        }
    };
    let mut current: Option<ModelFit> = None;
    for &lam in &path {
        current = Some(fit(&split.x_train, &yt, family, lam, current.as_ref(), &settings.fit)?);
    }
    let model = current.expect("path is nonempty");
    let eta = (0..split.x_test.nrows())
        .map(|r| {
            let row: Vec<f64> = split.x_test.row(r).iter().copied().collect();
            model.linear_predictor(&row)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(SplitFit {
        eta,
        penalty: model.penalty,
        converged: model.train_meta.converged,
    })
}

/// Scores one (variant, horizon, scheme) against any number of responses.
/// Holdout expansions are computed once and shared by every response.
pub struct Evaluator {
    design: DesignMatrix,
    variant: String,
    scheme: SplitScheme,
    settings: EvalSettings,
    /// Row indices sorted by target week.
    chrono: Vec<usize>,
    holdout: Option<Split>,
}

impl Evaluator {
    pub fn new(
        panel: &WeeklyPanel,
        variant: &Variant,
        horizon: usize,
        scheme: SplitScheme,
        settings: &EvalSettings,
    ) -> Result<Self> {
        Self::from_design(build_matrix(panel, variant, horizon)?, variant.name(), scheme, settings)
    }

    pub fn from_design(design: DesignMatrix, variant: String, scheme: SplitScheme, settings: &EvalSettings) -> Result<Self> {
        let n = design.rows();
        let mut chrono: Vec<usize> = (0..n).collect();
        chrono.sort_by_key(|&i| design.row_weeks[i]);
        let holdout = match scheme {
            SplitScheme::Holdout { train_fraction } => {
                let k = SplitScheme::train_count(train_fraction, n);
                if k < 2 * settings.cv.fold_count || k >= n {
                    return Err(Error::InsufficientHistory(format!(
                        "holdout {train_fraction} of {n} rows leaves {k} training and {} test rows",
                        n.saturating_sub(k)
                    )));
                }
                Some(Split::new(&design, chrono[..k].to_vec(), chrono[k..].to_vec(), settings)?)
            }
            SplitScheme::Loo => {
                if n < 2 * settings.cv.fold_count + 1 {
                    return Err(Error::InsufficientHistory(format!("{n} rows are too few for leave-one-out")));
                }
                None
            }
        };
        Ok(Evaluator {
            design,
            variant,
            scheme,
            settings: settings.clone(),
            chrono,
            holdout,
        })
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn scheme(&self) -> SplitScheme {
        self.scheme
    }

    /// Response aligned with design rows, taken from a full-length weekly
    /// count series of the panel.
    pub fn response_from_counts(&self, counts: &[u64]) -> Vec<f64> {
        self.design.row_positions.iter().map(|&p| counts[p] as f64).collect()
    }

    /// Evaluates a weekly count series given over the panel's weeks.
    pub fn evaluate_counts(&self, counts: &[u64], population: u64, group: GroupLabel) -> Result<EvalReport> {
        let y = self.response_from_counts(counts);
        self.evaluate_rows(&y, population, group)
    }

    /// Evaluates a response aligned with the design rows.
    pub fn evaluate_rows(&self, y: &[f64], population: u64, group: GroupLabel) -> Result<EvalReport> {
        let n = self.design.rows();
        if y.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: y.len() });
        }
        if population == 0 {
            return Err(Error::DegenerateInput("group population must be positive".into()));
        }
        self.settings.family.check_response(y)?;
        let keys: Vec<u64> = self.design.row_weeks.iter().map(|&w| w as u64).collect();
        let s = &self.settings;

        // (row, eta, penalty, converged) for every test row, in week order.
        let mut scored: Vec<(usize, f64, f64, bool)> = Vec::new();
        let refits;
        match &self.holdout {
            Some(split) => {
                let f = fit_split(split, y, &keys, s, s.cv.seed, None)?;
                refits = 1;
                for (&r, &e) in split.test.iter().zip(&f.eta) {
                    scored.push((r, e, f.penalty, f.converged));
                }
            }
            None => {
                let fixed = if s.loo_reuse_lambda {
                    let full = Split::new(&self.design, self.chrono.clone(), vec![], s)?;
                    let yt: Vec<f64> = self.chrono.iter().map(|&i| y[i]).collect();
                    let kt: Vec<u64> = self.chrono.iter().map(|&i| keys[i]).collect();
                    let plan = CvPlan { seed: s.cv.seed, ..s.cv.clone() };
                    Some(cross_validate(&full.x_train, &yt, s.family, &plan, &kt, &s.fit)?.lambda_star)
                } else {
                    None
                };
                let results = par::map_range(n, |k| -> Result<(usize, f64, f64, bool)> {
                    let r = self.chrono[k];
                    let train: Vec<usize> = self.chrono.iter().copied().filter(|&i| i != r).collect();
                    let split = Split::new(&self.design, train, vec![r], s)?;
                    let cv_seed = seed::derive_seed(s.cv.seed, keys[r]);
                    let f = fit_split(&split, y, &keys, s, cv_seed, fixed)?;
                    Ok((r, f.eta[0], f.penalty, f.converged))
                });
                refits = n;
                for res in results {
                    scored.push(res?);
                }
            }
        }

        let family = s.family;
        let mut report = EvalReport {
            group,
            variant: self.variant.clone(),
            horizon: self.design.horizon,
            scheme: self.scheme,
            family,
            ormse_per_million: 0.0,
            oos_neg_log_lik: 0.0,
            population: population as f64,
            n_test: scored.len(),
            test_weeks: vec![],
            observed: vec![],
            predicted: vec![],
            errors: vec![],
            penalties: vec![],
            refits,
            nonconverged: 0,
            note: None,
        };
        let mut nll = 0.0;
        let mut seen_penalty = None;
        for &(r, eta, penalty, converged) in &scored {
            let pred = family.inverse_link(eta);
            report.test_weeks.push(self.design.row_weeks[r]);
            report.observed.push(y[r]);
            report.predicted.push(pred);
            report.errors.push(y[r] - pred);
            nll += nll_term(family, y[r], eta);
            if !converged {
                report.nonconverged += 1;
            }
            if refits > 1 || seen_penalty.is_none() {
                report.penalties.push(penalty);
                seen_penalty = Some(penalty);
            }
        }
        if report.nonconverged > 0 {
            log::warn!(
                "{} of {} fits for group {group}, variant {} did not converge",
                report.nonconverged,
                report.n_test,
                self.variant
            );
        }
        report.oos_neg_log_lik = nll / report.n_test as f64;
        report.ormse_per_million = ormse(&report.errors, population, PER_MILLION)?;
        Ok(report)
    }
}

/// Scores one poverty quartile (1-based) of the panel.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    panel: &WeeklyPanel,
    grouping: &QuartileGrouping,
    group: usize,
    variant: &Variant,
    horizon: usize,
    scheme: SplitScheme,
    settings: &EvalSettings,
) -> Result<EvalReport> {
    let resp = group_response(panel, grouping, group)?;
    Evaluator::new(panel, variant, horizon, scheme, settings)?.evaluate_counts(
        &resp.counts,
        resp.population,
        GroupLabel::Quartile(group),
    )
}

/// Scores all four quartiles and their pooled combination.
pub fn evaluate_all_groups(
    panel: &WeeklyPanel,
    grouping: &QuartileGrouping,
    variant: &Variant,
    horizon: usize,
    scheme: SplitScheme,
    settings: &EvalSettings,
) -> Result<Vec<EvalReport>> {
    let ev = Evaluator::new(panel, variant, horizon, scheme, settings)?;
    let mut reports = Vec::with_capacity(GROUPS + 1);
    for g in 1..=GROUPS {
        let resp = group_response(panel, grouping, g)?;
        reports.push(ev.evaluate_counts(&resp.counts, resp.population, GroupLabel::Quartile(g))?);
    }
    reports.push(combine(&reports)?);
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(errors: Vec<f64>, population: f64) -> EvalReport {
        EvalReport {
            group: GroupLabel::Quartile(1),
            variant: "ili".into(),
            horizon: 1,
            scheme: SplitScheme::Loo,
            family: Family::Poisson,
            ormse_per_million: ormse_f(&errors, population, PER_MILLION).unwrap(),
            oos_neg_log_lik: 1.0,
            population,
            n_test: errors.len(),
            test_weeks: vec![0; errors.len()],
            observed: vec![0.0; errors.len()],
            predicted: vec![0.0; errors.len()],
            errors,
            penalties: vec![],
            refits: 1,
            nonconverged: 0,
            note: None,
        }
    }

    #[test]
    fn ormse_examples() {
        assert_eq!(ormse(&[0.0, 0.0], 10, PER_MILLION).unwrap(), 0.0);
        let v = ormse(&[3.0, 4.0], 1_000_000, PER_MILLION).unwrap();
        assert!((v - 12.5f64.sqrt()).abs() < 1e-12);
        let a = ormse(&[1.0, -2.0, 5.0], 1000, 1.0).unwrap();
        let b = ormse(&[1.0, -2.0, 5.0], 4000, 1.0).unwrap();
        assert!((a / b - 4.0).abs() < 1e-12);
        assert!(matches!(ormse(&[], 10, 1.0), Err(Error::EmptyErrors)));
    }

    #[test]
    fn combined_pooling_formula() {
        let a = report(vec![1.0, 2.0], 1000.0);
        let b = report(vec![3.0, -4.0, 0.0], 3000.0);
        let c = combine(&[a.clone(), b.clone()]).unwrap();
        let hand = 1e6 * ((1.0 + 4.0 + 9.0 + 16.0 + 0.0) / 5.0f64).sqrt() / 2000.0;
        assert!((c.ormse_per_million - hand).abs() < 1e-9);
        assert_eq!(c.n_test, 5);
        assert_eq!(c.group, GroupLabel::Combined);

        let equal: Vec<EvalReport> = [vec![1.0, 1.0], vec![2.0, -3.0], vec![0.5, 0.0]]
            .into_iter()
            .map(|e| report(e, 500.0))
            .collect();
        let c = combine(&equal).unwrap();
        let lo = equal.iter().map(|r| r.ormse_per_million).fold(f64::INFINITY, f64::min);
        let hi = equal.iter().map(|r| r.ormse_per_million).fold(0.0, f64::max);
        assert!(lo <= c.ormse_per_million && c.ormse_per_million <= hi);
    }

    #[test]
    fn scheme_parsing_and_counts() {
        assert_eq!("loo".parse::<SplitScheme>().unwrap(), SplitScheme::Loo);
        assert_eq!("holdout:0.6".parse::<SplitScheme>().unwrap(), SplitScheme::Holdout { train_fraction: 0.6 });
        assert_eq!("HOLDOUT-80".parse::<SplitScheme>().unwrap(), SplitScheme::Holdout { train_fraction: 0.8 });
        assert!("holdout:0".parse::<SplitScheme>().is_err());
        assert!("kfold".parse::<SplitScheme>().is_err());
        assert_eq!(SplitScheme::Holdout { train_fraction: 0.6 }.to_string(), "holdout:0.6");
        assert_eq!(SplitScheme::Holdout { train_fraction: 0.6 }.tag(), "holdout60");
        assert_eq!(SplitScheme::train_count(0.6, 10), 6);
        assert_eq!(SplitScheme::train_count(0.6, 11), 7);
        assert_eq!(SplitScheme::train_count(0.8, 185), 148);
        for n in 10..300 {
            assert!(SplitScheme::train_count(0.8, n) >= SplitScheme::train_count(0.6, n));
        }
    }

    #[test]
    fn group_label_round_trip() {
        for g in [GroupLabel::Quartile(3), GroupLabel::Combined] {
            let s = serde_json::to_string(&g).unwrap();
            assert_eq!(serde_json::from_str::<GroupLabel>(&s).unwrap(), g);
        }
        assert!("5".parse::<GroupLabel>().is_err());
    }

    /// Exact p-value of the sign-flip test by enumerating all 2^n patterns.
    fn exact_sign_flip_p(errors: &[f64]) -> f64 {
        let n = errors.len();
        let obs = (errors.iter().sum::<f64>() / n as f64).abs();
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let s: f64 = (0..n)
                .map(|i| if mask >> i & 1 == 1 { errors[i] } else { -errors[i] })
                .sum();
            if (s / n as f64).abs() >= obs - 1e-12 {
                hits += 1;
            }
        }
        hits as f64 / (1u64 << n) as f64
    }

    #[test]
    fn residual_bias_examples() {
        let sym = [1.0, -1.0, 2.5, -2.5, 0.3, -0.3];
        assert_eq!(residual_bias_test(&sym, 500, 1).unwrap(), 1.0);

        for n in [9usize, 10, 12] {
            let ones = vec![1.0; n];
            let exact = exact_sign_flip_p(&ones);
            assert!((exact - 2f64.powi(1 - n as i32)).abs() < 1e-15);
            let p = residual_bias_test(&ones, 200_000, 3).unwrap();
            assert!(p < 0.01);
            assert!((p - exact).abs() < 5.0 * (exact / 200_000.0).sqrt() + 1e-5);
        }

        let e = [0.4, 1.1, -0.2, 0.9, 0.3, -0.5, 0.8, 1.2];
        let exact = exact_sign_flip_p(&e);
        let p = residual_bias_test(&e, 100_000, 11).unwrap();
        assert!((p - exact).abs() < 5.0 * (exact * (1.0 - exact) / 100_000.0).sqrt());
        assert_eq!(p, residual_bias_test(&e, 100_000, 11).unwrap());
        assert!(matches!(residual_bias_test(&e[..4], 10, 0), Err(Error::TooFewResiduals { .. })));
    }
}
