use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design::{hex, Variant};
use crate::error::{Error, Result};
use crate::evaluation::SplitScheme;
use crate::glm::{CvPlan, Family};
use crate::inference::ObservedStat;
use crate::synthetic::SynthConfig;

/// Paths of the three input tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub series: PathBuf,
    pub hosp: PathBuf,
    pub meta: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub fold_count: usize,
    pub lambda_count: usize,
    pub lambda_min_ratio: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        let p = CvPlan::default();
        CvConfig {
            fold_count: p.fold_count,
            lambda_count: p.lambda_count,
            lambda_min_ratio: p.lambda_min_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PermutationConfig {
    pub enabled: bool,
    pub repeats: usize,
    pub scheme: SplitScheme,
    /// Defaults to the variant using every source family.
    pub variant: Option<Variant>,
    pub horizon: usize,
    pub observed: ObservedStat,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        PermutationConfig {
            enabled: true,
            repeats: 500,
            scheme: SplitScheme::Holdout { train_fraction: 0.6 },
            variant: None,
            horizon: 1,
            observed: ObservedStat::Literal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynchronyConfig {
    pub enabled: bool,
    pub repeats: usize,
}

impl Default for SynchronyConfig {
    fn default() -> Self {
        SynchronyConfig {
            enabled: true,
            repeats: 5000,
        }
    }
}

/// Everything a run needs. `output_dir` and `jobs` do not affect results
/// and are left out of the configuration hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<DataPaths>,
    pub synth: Option<SynthConfig>,
    pub variants: Vec<Variant>,
    pub horizons: Vec<usize>,
    pub family: Family,
    pub schemes: Vec<SplitScheme>,
    pub cv: CvConfig,
    pub df: usize,
    pub degree: usize,
    pub loo_reuse_lambda: bool,
    pub residual_resamples: usize,
    pub permutation: PermutationConfig,
    pub synchrony: SynchronyConfig,
    pub burden: bool,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            synth: None,
            variants: Variant::all(),
            horizons: vec![1],
            family: Family::Poisson,
            schemes: vec![
                SplitScheme::Holdout { train_fraction: 0.6 },
                SplitScheme::Holdout { train_fraction: 0.8 },
            ],
            cv: CvConfig::default(),
            df: crate::spline::DEFAULT_DF,
            degree: crate::spline::DEFAULT_DEGREE,
            loo_reuse_lambda: false,
            residual_resamples: 10_000,
            permutation: PermutationConfig::default(),
            synchrony: SynchronyConfig::default(),
            burden: true,
            seed: None,
            output_dir: None,
            jobs: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed.is_none() {
            return Err(Error::Config("a master seed is required".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("at least one variant is required".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("at least one split scheme is required".into()));
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|h| !(1..=2).contains(h)) {
            return Err(Error::Config("horizons must be a nonempty list of 1 and/or 2".into()));
        }
        if self.data.is_some() && self.synth.is_some() {
            return Err(Error::Config("give either data paths or a synth section, not both".into()));
        }
        if self.df <= self.degree {
            return Err(Error::Config(format!("df ({}) must exceed degree ({})", self.df, self.degree)));
        }
        if self.residual_resamples == 0 {
            return Err(Error::Config("residual_resamples must be positive".into()));
        }
        if self.permutation.enabled && self.permutation.repeats == 0 {
            return Err(Error::Config("permutation repeats must be positive".into()));
        }
        if self.synchrony.enabled && self.synchrony.repeats == 0 {
            return Err(Error::Config("synchrony repeats must be positive".into()));
        }
        if !(1..=2).contains(&self.permutation.horizon) {
            return Err(Error::Config("permutation horizon must be 1 or 2".into()));
        }
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        CvPlan {
            fold_count: self.cv.fold_count,
            lambda_count: self.cv.lambda_count,
            lambda_min_ratio: self.cv.lambda_min_ratio,
            lambda_grid: None,
            seed: 0,
        }
        .validate(usize::MAX / 4)?;
        Ok(())
    }

    pub fn master_seed(&self) -> u64 {
        self.seed.unwrap_or_default()
    }

    /// SHA-256 of the canonical JSON form, ignoring output location and
    /// parallelism.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        c.jobs = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}
