use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::permutation::random_partition;
use crate::data::{block_sizes, QuartileGrouping, WeeklyPanel, GROUPS};
use crate::error::{Error, Result};
use crate::{par, seed};

/// Pearson correlation; `None` when either series is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelation {
    pub group: usize,
    pub zip_a: String,
    pub zip_b: String,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCorrelations {
    pub group: usize,
    pub pairs: Vec<PairCorrelation>,
    pub mean: f64,
    pub median: f64,
    /// Zips with constant counts, left out of every pair.
    pub excluded: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynchronyResult {
    pub per_group_correlations: Vec<GroupCorrelations>,
    pub randomization: Option<RandomizationResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationResult {
    pub group: usize,
    pub observed_mean: f64,
    pub observed_median: f64,
    pub p_mean: f64,
    pub p_median: f64,
    pub null_means: Vec<f64>,
    pub null_medians: Vec<f64>,
    pub repeats: usize,
    /// Regroupings whose target group had no correlated pair.
    pub skipped: usize,
    pub seed: u64,
}

fn mean_median(values: &mut [f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    values.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    };
    (mean, median)
}

fn series(panel: &WeeklyPanel) -> Vec<Vec<f64>> {
    panel
        .zips()
        .iter()
        .map(|z| z.weekly_hosp.iter().map(|&c| c as f64).collect())
        .collect()
}

fn is_constant(s: &[f64]) -> bool {
    s.iter().all(|&v| v == s[0])
}

/// Pearson correlation for every unordered zip pair inside each group.
pub fn pairwise_synchrony(panel: &WeeklyPanel, grouping: &QuartileGrouping) -> Result<SynchronyResult> {
    let s = series(panel);
    let zips = panel.zips();
    let mut out = Vec::with_capacity(GROUPS);
    for g in 1..=GROUPS {
        let members = grouping.members(g);
        let (kept, dropped): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&i| !is_constant(&s[i]));
        if kept.len() < 2 {
            return Err(Error::GroupTooSmall { group: g });
        }
        if !dropped.is_empty() {
            log::info!("group {g}: {} constant zips excluded from correlations", dropped.len());
        }
        let mut pairs = Vec::with_capacity(kept.len() * (kept.len() - 1) / 2);
        for (k, &a) in kept.iter().enumerate() {
            for &b in &kept[k + 1..] {
                let r = pearson(&s[a], &s[b]).expect("nonconstant series");
                pairs.push(PairCorrelation {
                    group: g,
                    zip_a: zips[a].zip.clone(),
                    zip_b: zips[b].zip.clone(),
                    r,
                });
            }
        }
        let mut rs: Vec<f64> = pairs.iter().map(|p| p.r).collect();
        let (mean, median) = mean_median(&mut rs);
        out.push(GroupCorrelations {
            group: g,
            pairs,
            mean,
            median,
            excluded: dropped.iter().map(|&i| zips[i].zip.clone()).collect(),
        });
    }
    Ok(SynchronyResult {
        per_group_correlations: out,
        randomization: None,
    })
}

fn group_stat(corr: &[Vec<Option<f64>>], members: &[usize]) -> Option<(f64, f64)> {
    let mut rs = Vec::new();
    for (k, &a) in members.iter().enumerate() {
        for &b in &members[k + 1..] {
            if let Some(r) = corr[a][b] {
                rs.push(r);
            }
        }
    }
    if rs.is_empty() {
        None
    } else {
        Some(mean_median(&mut rs))
    }
}

/// Mean and median within-group correlation of the highest-poverty group,
/// compared with the same statistics for that group's size under random
/// equal-size regroupings. Each p is the share of null draws at or above the
/// observed value.
pub fn synchrony_randomization(
    panel: &WeeklyPanel,
    grouping: &QuartileGrouping,
    repeats: usize,
    seed: u64,
) -> Result<RandomizationResult> {
    if repeats == 0 {
        return Err(Error::Config("randomization repeats must be at least 1".into()));
    }
    let s = series(panel);
    let n = s.len();
    let rows: Vec<Vec<Option<f64>>> = par::map_range(n, |a| (0..n).map(|b| pearson(&s[a], &s[b])).collect());
    let target = GROUPS;
    let (observed_mean, observed_median) =
        group_stat(&rows, grouping.members(target)).ok_or(Error::GroupTooSmall { group: target })?;

    let sizes = block_sizes(n);
    let draws = par::map_range(repeats, |r| {
        let mut rng = seed::rng(seed::derive_seed(seed, r as u64));
        let members = random_partition(n, sizes, &mut rng);
        group_stat(&rows, &members[target - 1])
    });
    let mut null_means = Vec::with_capacity(repeats);
    let mut null_medians = Vec::with_capacity(repeats);
    for (m, med) in draws.into_iter().flatten() {
        null_means.push(m);
        null_medians.push(med);
    }
    let skipped = repeats - null_means.len();
    if null_means.is_empty() {
        return Err(Error::DegenerateInput("no randomization draw had a correlated pair".into()));
    }
    let share = |null: &[f64], obs: f64| null.iter().filter(|&&v| v >= obs).count() as f64 / null.len() as f64;
    Ok(RandomizationResult {
        group: target,
        observed_mean,
        observed_median,
        p_mean: share(&null_means, observed_mean),
        p_median: share(&null_medians, observed_median),
        null_means,
        null_medians,
        repeats,
        skipped,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    /// One column per component, one row per input column (zip).
    pub component_loadings: DMatrix<f64>,
    /// Share of total variance per component, descending.
    pub variance_explained: Vec<f64>,
    pub singular_values: Vec<f64>,
    /// Component scores per row (week).
    pub scores: DMatrix<f64>,
    pub column_means: Vec<f64>,
}

impl PcaResult {
    /// Centered matrix rebuilt from all components.
    pub fn reconstruct_centered(&self) -> DMatrix<f64> {
        &self.scores * self.component_loadings.transpose()
    }
}

/// Principal components of a rows × columns matrix after column centering.
/// Each component's sign is fixed so its largest-magnitude loading is positive.
pub fn pca(matrix: &DMatrix<f64>) -> Result<PcaResult> {
    let (n, p) = matrix.shape();
    if n < 2 || p < 2 {
        return Err(Error::DegenerateMatrix);
    }
    let column_means: Vec<f64> = (0..p).map(|j| matrix.column(j).mean()).collect();
    let centered = DMatrix::from_fn(n, p, |i, j| matrix[(i, j)] - column_means[j]);
    let total: f64 = centered.iter().map(|v| v * v).sum();
    let svd = centered.clone().svd(true, true);
    let u = svd.u.ok_or(Error::DegenerateMatrix)?;
    let vt = svd.v_t.ok_or(Error::DegenerateMatrix)?;
    let sv = svd.singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if total == 0.0 || smax <= 1e-12 * centered.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateMatrix);
    }
    let k = sv.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let mut loadings = DMatrix::zeros(p, k);
    let mut scores = DMatrix::zeros(n, k);
    let mut singular_values = Vec::with_capacity(k);
    for (c, &src) in order.iter().enumerate() {
        let v = vt.row(src);
        let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for j in 0..p {
            loadings[(j, c)] = sign * v[j];
        }
        for i in 0..n {
            scores[(i, c)] = sign * u[(i, src)] * sv[src];
        }
        singular_values.push(sv[src]);
    }
    let ss: f64 = singular_values.iter().map(|s| s * s).sum();
    let variance_explained = singular_values.iter().map(|s| s * s / ss).collect();
    Ok(PcaResult {
        component_loadings: loadings,
        variance_explained,
        singular_values,
        scores,
        column_means,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPca {
    pub group: usize,
    pub zips: usize,
    pub variance_explained: Vec<f64>,
}

/// PCA of each group's weeks × zips count matrix.
pub fn pca_by_group(panel: &WeeklyPanel, grouping: &QuartileGrouping) -> Result<Vec<GroupPca>> {
    let s = series(panel);
    (1..=GROUPS)
        .map(|g| {
            let m = grouping.members(g);
            let mat = DMatrix::from_fn(panel.n_weeks(), m.len(), |t, j| s[m[j]][t]);
            let res = pca(&mat)?;
            Ok(GroupPca {
                group: g,
                zips: m.len(),
                variance_explained: res.variance_explained,
            })
        })
        .collect()
}
