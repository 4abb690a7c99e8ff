//! Seeded synthetic panels with known latent rates.
//!
//! Every zip has a weekly latent hospitalization rate per 1,000 residents
//!
//! ```text
//! r_z(t) = baseline · (1 + amplitude · wave(t) · exp(m_z(t)))
//! m_z(t) = C(t) + √ρ · S_g(t) + √(1−ρ) · (f_z + E_z(t))
//! ```
//!
//! where `wave` is a sharpened annual cosine with a jittered peak, `C` a
//! season-level intensity, `S_g` AR(1) shocks shared by the zip's poverty
//! quartile `g`, `f_z` a zip frailty and `E_z` idiosyncratic AR(1) shocks.
//! Counts in week `t` are Poisson with mean `pop_z/1000 · r_z(t−1)`.
//!
//! Counties are formed from bands of the poverty ranking, with a share of
//! zips reassigned at random. Each surveillance series observes one county:
//! its signal is `Σ c_z·pop_z·r_z(t) / Σ pop_z` over the county, with zip
//! coverage `c_z = exp(−b · poverty_z/100)`, plus Gaussian noise of standard
//! deviation `σ` times the county's mean uncovered rate, then an affine map to
//! the source's units. A positive bias slope `b` thus shrinks the signal of
//! poorer counties against fixed noise.

use std::path::Path;

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::load::write_panel;
use crate::data::{
    assign_quartiles, AgeSplit, SourceFamily, SurveillanceSeries, WeekIndex, WeeklyPanel, ZipRecord, GROUPS,
};
use crate::error::{Error, Result};
use crate::inference::pearson;
use crate::seed::{derive_seed, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub weeks: usize,
    pub zips: usize,
    pub ili_series: usize,
    pub ed_series: usize,
    pub trend_series: usize,
    /// Number of catchment counties; series are assigned to them in turn.
    pub counties: usize,
    /// Share of zips placed in a random county instead of their poverty band.
    pub county_mixing: f64,
    /// Off-season weekly hospitalizations per 1,000 residents.
    pub baseline_per_1000: f64,
    /// Peak seasonal excess as a multiple of the baseline.
    pub seasonal_amplitude: f64,
    /// Exponent applied to the annual cosine; larger values give shorter,
    /// steeper seasons.
    pub season_sharpness: f64,
    /// Share of shock variance common to a poverty quartile.
    pub rho: f64,
    /// Noise of every surveillance series relative to its mean signal.
    pub sigma: f64,
    /// Coverage decline per unit poverty share.
    pub bias_slope: f64,
    pub shock_sd: f64,
    pub shock_ar: f64,
    pub frailty_sd: f64,
    pub min_population: u64,
    pub max_population: u64,
    /// Emit under/over-65 splits of every count.
    pub age_split: bool,
    pub start_date: Option<NaiveDate>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            weeks: 188,
            zips: 305,
            ili_series: 5,
            ed_series: 6,
            trend_series: 6,
            counties: 8,
            county_mixing: 0.1,
            baseline_per_1000: 0.005,
            seasonal_amplitude: 20.0,
            season_sharpness: 4.0,
            rho: 0.5,
            sigma: 0.1,
            bias_slope: 0.0,
            shock_sd: 0.1,
            shock_ar: 0.7,
            frailty_sd: 0.3,
            min_population: 2_000,
            max_population: 40_000,
            age_split: true,
            start_date: NaiveDate::from_ymd_opt(2008, 9, 29),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic config: {m}")));
        if self.weeks < 8 {
            return bad("at least 8 weeks are required");
        }
        if self.zips < GROUPS {
            return bad("at least 4 zips are required");
        }
        if self.ili_series + self.ed_series + self.trend_series == 0 {
            return bad("at least one surveillance series is required");
        }
        if self.counties == 0 {
            return bad("at least one county is required");
        }
        if !(self.baseline_per_1000 > 0.0 && self.baseline_per_1000.is_finite()) {
            return bad("baseline rate must be positive");
        }
        if !(self.seasonal_amplitude >= 0.0 && self.seasonal_amplitude.is_finite()) {
            return bad("amplitude must be nonnegative");
        }
        if !(self.season_sharpness >= 1.0 && self.season_sharpness.is_finite()) {
            return bad("season_sharpness must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.county_mixing) {
            return bad("county_mixing must lie in [0, 1]");
        }
        for (name, v) in [
            ("sigma", self.sigma),
            ("bias_slope", self.bias_slope),
            ("shock_sd", self.shock_sd),
            ("frailty_sd", self.frailty_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be finite and nonnegative"));
            }
        }
        if !(self.shock_ar.abs() < 1.0) {
            return bad("shock_ar must lie in (-1, 1)");
        }
        if self.min_population == 0 || self.min_population > self.max_population {
            return bad("population bounds must satisfy 0 < min <= max");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Latent weekly rate per 1,000, indexed `[zip][week]`.
    pub latent_rate: Vec<Vec<f64>>,
    /// Poverty quartile (1-based) of each zip.
    pub quartile: Vec<usize>,
    pub county: Vec<usize>,
    /// Weight of each zip in the series covering its county.
    pub coverage: Vec<f64>,
    /// Squared correlation between a zip's latent rate and the mean of the
    /// standardized series covering its county.
    pub zip_snr: Vec<f64>,
    /// Noise-free catchment signal of each series, indexed `[series][week]`.
    pub series_signal: Vec<Vec<f64>>,
    pub series_county: Vec<usize>,
}

fn ar1<R: Rng>(n: usize, sd: f64, phi: f64, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let innov = sd * (1.0 - phi * phi).sqrt();
    let mut out = Vec::with_capacity(n);
    let mut x = sd * normal.sample(rng);
    for _ in 0..n {
        out.push(x);
        x = phi * x + innov * normal.sample(rng);
    }
    out
}

fn standardize(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
    v.iter().map(|x| if sd > 0.0 { (x - m) / sd } else { 0.0 }).collect()
}

/// Draws a panel and its latent ground truth.
pub fn generate(config: &SynthConfig) -> Result<(WeeklyPanel, GroundTruth)> {
    config.validate()?;
    let c = config;
    let n = c.weeks;
    let stream = |k: u64| rng(derive_seed(c.seed, k));

    // Zip demographics.
    let mut demo = stream(1);
    let poverty_dist: Beta<f64> = Beta::new(1.6, 4.0).expect("valid beta");
    let mut zips_meta: Vec<(String, u64, f64, f64, usize)> = (0..c.zips)
        .map(|i| {
            let pop = demo.random_range(c.min_population..=c.max_population);
            let pov = (50.0 * poverty_dist.sample(&mut demo) * 100.0).round() / 100.0;
            let old = (demo.random_range(5.0..25.0f64) * 100.0).round() / 100.0;
            (format!("{}", 75001 + i), pop, pov, old, 0)
        })
        .collect();

    // Quartiles by the same rule the analysis uses.
    let placeholder: Vec<ZipRecord> = zips_meta
        .iter()
        .map(|(z, pop, pov, old, _)| ZipRecord {
            zip: z.clone(),
            population: *pop,
            poverty_pct: *pov,
            over65_pct: *old,
            weekly_hosp: vec![0; n],
            age_split: None,
        })
        .collect();
    let weeks: Vec<WeekIndex> = (0..n)
        .map(|t| WeekIndex {
            index: t,
            label: c.start_date.map(|d| d + chrono::Days::new(7 * t as u64)),
        })
        .collect();
    let skeleton = WeeklyPanel::new(weeks.clone(), vec![], placeholder)?;
    let grouping = assign_quartiles(&skeleton)?;
    let quartile: Vec<usize> = zips_meta.iter().map(|m| grouping.assignment[&m.0]).collect();

    let mut ranked: Vec<usize> = (0..c.zips).collect();
    ranked.sort_by(|&a, &b| zips_meta[a].2.total_cmp(&zips_meta[b].2).then(a.cmp(&b)));
    let mut geo = stream(7);
    for (rank, &z) in ranked.iter().enumerate() {
        let band = rank * c.counties / c.zips;
        zips_meta[z].4 = if geo.random::<f64>() < c.county_mixing {
            geo.random_range(0..c.counties)
        } else {
            band
        };
    }

    // Season timing and intensity.
    let mut season = stream(2);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let seasons = n / 52 + 2;
    let peaks: Vec<f64> = (0..seasons).map(|s| 52.0 * s as f64 + 16.0 + season.random_range(-4.0..4.0)).collect();
    let intensity: Vec<f64> = (0..seasons).map(|_| 0.1 * normal.sample(&mut season)).collect();
    let wave = |t: usize| -> (f64, f64) {
        let s = (t as f64 / 52.0).floor() as usize;
        let mut best = (0.0, intensity[s.min(seasons - 1)]);
        for k in s.saturating_sub(1)..=(s + 1).min(seasons - 1) {
            let d = t as f64 - peaks[k];
            if d.abs() <= 26.0 {
                let w = ((1.0 + (2.0 * std::f64::consts::PI * d / 52.0).cos()) / 2.0).powf(c.season_sharpness);
                if w > best.0 {
                    best = (w, intensity[k]);
                }
            }
        }
        best
    };

    // Group-shared and zip-level shocks.
    let mut shocks = stream(3);
    let group_shock: Vec<Vec<f64>> = (0..GROUPS).map(|_| ar1(n, c.shock_sd, c.shock_ar, &mut shocks)).collect();
    let (sr, si) = (c.rho.sqrt(), (1.0 - c.rho).sqrt());
    let latent_rate: Vec<Vec<f64>> = (0..c.zips)
        .map(|z| {
            let mut zr = rng(derive_seed2(c.seed, 4, z as u64));
            let frailty = c.frailty_sd * normal.sample(&mut zr);
            let own = ar1(n, c.shock_sd, c.shock_ar, &mut zr);
            let g = quartile[z] - 1;
            (0..n)
                .map(|t| {
                    let (w, ci) = wave(t);
                    let m = ci + sr * group_shock[g][t] + si * (frailty + own[t]);
                    c.baseline_per_1000 * (1.0 + c.seasonal_amplitude * w * m.exp())
                })
                .collect()
        })
        .collect();

    // Counts lag the latent rate by one week.
    let zips: Vec<ZipRecord> = zips_meta
        .iter()
        .enumerate()
        .map(|(z, (id, pop, pov, old, _))| {
            let mut cr = rng(derive_seed2(c.seed, 5, z as u64));
            let mut counts = Vec::with_capacity(n);
            let mut under = Vec::with_capacity(n);
            let mut over = Vec::with_capacity(n);
            // Older residents are hospitalized at a higher per-capita rate.
            let p_old = 3.0 * old / (3.0 * old + (100.0 - old));
            for t in 0..n {
                let r = latent_rate[z][t.saturating_sub(1)];
                let mean = *pop as f64 / 1000.0 * r;
                let k = Poisson::new(mean).map(|d| d.sample(&mut cr) as u64).unwrap_or(0);
                counts.push(k);
                if c.age_split {
                    let o = Binomial::new(k, p_old).expect("valid binomial").sample(&mut cr);
                    over.push(o);
                    under.push(k - o);
                }
            }
            ZipRecord {
                zip: id.clone(),
                population: *pop,
                poverty_pct: *pov,
                over65_pct: *old,
                weekly_hosp: counts,
                age_split: c.age_split.then_some(AgeSplit { under65: under, over65: over }),
            }
        })
        .collect();

    // Surveillance series over county catchments.
    let coverage: Vec<f64> = zips_meta.iter().map(|m| (-c.bias_slope * m.2 / 100.0).exp()).collect();
    let mut county_signal = Vec::with_capacity(c.counties);
    let mut county_level = Vec::with_capacity(c.counties);
    for k in 0..c.counties {
        let members: Vec<usize> = (0..c.zips).filter(|&z| zips_meta[z].4 == k).collect();
        let members = if members.is_empty() { (0..c.zips).collect() } else { members };
        let pop: f64 = members.iter().map(|&z| zips_meta[z].1 as f64).sum();
        let mut full = 0.0;
        let signal: Vec<f64> = (0..n)
            .map(|t| {
                let mut s = 0.0;
                for &z in &members {
                    let w = zips_meta[z].1 as f64 * latent_rate[z][t];
                    s += coverage[z] * w;
                    full += w;
                }
                s / pop
            })
            .collect();
        county_signal.push(signal);
        county_level.push(full / pop / n as f64);
    }
    let mut src = stream(6);
    let mut series = Vec::new();
    let mut series_signal = Vec::new();
    let mut series_county = Vec::new();
    let plan = [
        (SourceFamily::Ili, c.ili_series, "ili"),
        (SourceFamily::Ed, c.ed_series, "ed"),
        (SourceFamily::Trend, c.trend_series, "trend"),
    ];
    let mut slot = 0;
    for (family, count, prefix) in plan {
        for k in 0..count {
            let county = slot % c.counties;
            slot += 1;
            let (offset, gain) = match family {
                SourceFamily::Ili => (src.random_range(0.5..1.5), src.random_range(20.0..40.0)),
                SourceFamily::Ed => (src.random_range(20.0..60.0), src.random_range(500.0..1500.0)),
                SourceFamily::Trend => (src.random_range(2.0..10.0), src.random_range(100.0..300.0)),
            };
            let signal = &county_signal[county];
            let noise_sd = c.sigma * county_level[county];
            let values: Vec<f64> = signal
                .iter()
                .map(|&s| {
                    let v = offset + gain * (s + noise_sd * normal.sample(&mut src));
                    let v = if family.requires_nonnegative() { v.max(0.0) } else { v };
                    (v * 1e6).round() / 1e6
                })
                .collect();
            series.push(SurveillanceSeries {
                source_id: format!("{prefix}:county_{}_{}", county, k),
                family,
                values,
            });
            series_signal.push(signal.clone());
            series_county.push(county);
        }
    }

    // Loaders order series by id; generate in that order too.
    let mut order: Vec<usize> = (0..series.len()).collect();
    order.sort_by(|&a, &b| series[a].source_id.cmp(&series[b].source_id));
    let series: Vec<SurveillanceSeries> = order.iter().map(|&i| series[i].clone()).collect();
    let series_signal: Vec<Vec<f64>> = order.iter().map(|&i| series_signal[i].clone()).collect();
    let series_county: Vec<usize> = order.iter().map(|&i| series_county[i]).collect();

    // Realized signal-to-noise: how well the series of a zip's county track
    // that zip's own latent rate.
    let std_series: Vec<Vec<f64>> = series.iter().map(|s| standardize(&s.values)).collect();
    let zip_snr: Vec<f64> = (0..c.zips)
        .map(|z| {
            let idx: Vec<usize> = (0..series.len()).filter(|&s| series_county[s] == zips_meta[z].4).collect();
            if idx.is_empty() {
                return 0.0;
            }
            let avg: Vec<f64> = (0..n)
                .map(|t| idx.iter().map(|&s| std_series[s][t]).sum::<f64>() / idx.len() as f64)
                .collect();
            pearson(&latent_rate[z], &avg).map_or(0.0, |r| r * r)
        })
        .collect();

    let panel = WeeklyPanel::new(weeks, series, zips)?;
    Ok((
        panel,
        GroundTruth {
            latent_rate,
            quartile,
            county: zips_meta.iter().map(|m| m.4).collect(),
            coverage,
            zip_snr,
            series_signal,
            series_county,
        },
    ))
}

fn derive_seed2(master: u64, a: u64, b: u64) -> u64 {
    crate::seed::derive_seed2(master, a, b)
}

/// Writes the three input tables so a synthetic panel loads like real data.
pub fn write_synthetic(panel: &WeeklyPanel, dir: &Path) -> Result<[std::path::PathBuf; 3]> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [dir.join("series.csv"), dir.join("hosp.csv"), dir.join("meta.csv")];
    write_panel(panel, &files[0], &files[1], &files[2])?;
    Ok(files)
}

/// Last value carried forward: `ŷ_t = y_{t−horizon}`, `None` for the first
/// `horizon` weeks.
pub fn naive_baseline(y: &[f64], horizon: usize) -> Result<Vec<Option<f64>>> {
    if !(1..=2).contains(&horizon) {
        return Err(Error::Config(format!("horizon must be 1 or 2, got {horizon}")));
    }
    if y.len() <= horizon {
        return Err(Error::InsufficientHistory(format!(
            "{} weeks cannot support horizon {horizon}",
            y.len()
        )));
    }
    Ok((0..y.len()).map(|t| t.checked_sub(horizon).map(|s| y[s])).collect())
}
