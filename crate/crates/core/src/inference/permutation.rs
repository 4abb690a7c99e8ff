use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{block_sizes, sum_counts, QuartileGrouping, WeeklyPanel, GROUPS};
use crate::design::Variant;
use crate::error::{Error, Result};
use crate::evaluation::{EvalSettings, Evaluator, GroupLabel, SplitScheme};
use crate::{par, seed};

/// Statistic computed on the true grouping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservedStat {
    /// ORMSE of the highest-poverty quartile minus the lowest.
    #[default]
    Literal,
    /// Largest minus smallest quartile ORMSE, matching the null statistic.
    Spread,
}

impl std::str::FromStr for ObservedStat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "literal" => Ok(ObservedStat::Literal),
            "spread" => Ok(ObservedStat::Spread),
            other => Err(Error::Config(format!("unknown observed statistic `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub variant: String,
    pub horizon: usize,
    pub scheme: SplitScheme,
    pub observed_stat: ObservedStat,
    pub observed_diff: f64,
    /// ORMSE per million of quartiles 1..4 under the true grouping.
    pub group_ormse: Vec<f64>,
    /// Best-vs-worst ORMSE spread of each successful random regrouping.
    pub null_diffs: Vec<f64>,
    /// Share of null spreads strictly below the observed statistic.
    pub p_value: f64,
    /// Share of null spreads at or above the observed statistic.
    pub p_upper: f64,
    pub repeats: usize,
    pub failed_repeats: usize,
    pub seed: u64,
}

/// Uniformly random assignment of `n` items to four groups with the given
/// sizes.
pub fn random_partition<R: Rng + ?Sized>(n: usize, sizes: [usize; GROUPS], rng: &mut R) -> [Vec<usize>; GROUPS] {
    debug_assert_eq!(sizes.iter().sum::<usize>(), n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out: [Vec<usize>; GROUPS] = Default::default();
    let mut start = 0;
    for (g, &size) in sizes.iter().enumerate() {
        out[g] = order[start..start + size].to_vec();
        out[g].sort_unstable();
        start += size;
    }
    out
}

fn spread(v: &[f64]) -> f64 {
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

/// Compares the quartile ORMSE gap against random equal-size regroupings of
/// the zips, each refit with the full procedure including penalty selection.
#[allow(clippy::too_many_arguments)]
pub fn permutation_test(
    panel: &WeeklyPanel,
    grouping: &QuartileGrouping,
    variant: &Variant,
    horizon: usize,
    scheme: SplitScheme,
    settings: &EvalSettings,
    repeats: usize,
    seed: u64,
    observed_stat: ObservedStat,
) -> Result<PermutationResult> {
    if repeats == 0 {
        return Err(Error::Config("permutation repeats must be at least 1".into()));
    }
    let ev = Evaluator::new(panel, variant, horizon, scheme, settings)?;
    let zips = panel.zips();
    let score = |members: &[Vec<usize>; GROUPS]| -> Result<Vec<f64>> {
        (0..GROUPS)
            .map(|g| {
                let counts = sum_counts(panel, &members[g]);
                let pop: u64 = members[g].iter().map(|&i| zips[i].population).sum();
                Ok(ev.evaluate_counts(&counts, pop, GroupLabel::Quartile(g + 1))?.ormse_per_million)
            })
            .collect()
    };

    let group_ormse = score(grouping.all_members())?;
    let observed_diff = match observed_stat {
        ObservedStat::Literal => group_ormse[GROUPS - 1] - group_ormse[0],
        ObservedStat::Spread => spread(&group_ormse),
    };

    let sizes = block_sizes(zips.len());
    let draws = par::map_range(repeats, |r| {
        let mut rng = seed::rng(seed::derive_seed(seed, r as u64));
        let members = random_partition(zips.len(), sizes, &mut rng);
        score(&members).map(|v| spread(&v))
    });
    let mut null_diffs = Vec::with_capacity(repeats);
    let mut failed = 0;
    for (r, d) in draws.into_iter().enumerate() {
        match d {
            Ok(v) if v.is_finite() => null_diffs.push(v),
            Ok(v) => {
                log::warn!("permutation repeat {r} gave non-finite spread {v}");
                failed += 1;
            }
            Err(e) => {
                log::warn!("permutation repeat {r} failed: {e}");
                failed += 1;
            }
        }
    }
    if null_diffs.is_empty() {
        return Err(Error::DegenerateInput("every permutation repeat failed".into()));
    }
    let (p_value, p_upper) = p_values(&null_diffs, observed_diff);
    Ok(PermutationResult {
        variant: variant.name(),
        horizon,
        scheme,
        observed_stat,
        observed_diff,
        group_ormse,
        null_diffs,
        p_value,
        p_upper,
        repeats,
        failed_repeats: failed,
        seed,
    })
}

pub(crate) fn p_values(null: &[f64], observed: f64) -> (f64, f64) {
    let below = null.iter().filter(|&&v| v < observed).count();
    let n = null.len() as f64;
    (below as f64 / n, (null.len() - below) as f64 / n)
}
