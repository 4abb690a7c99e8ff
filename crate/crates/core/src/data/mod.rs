//! Weekly surveillance panels, zip-level hospitalization counts and poverty
//! quartiles.

pub mod load;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use load::{load_panel, write_panel, SERIES_HEADER, HOSP_HEADER, HOSP_HEADER_AGE, META_HEADER};

/// Number of poverty groups.
pub const GROUPS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeekIndex {
    pub index: usize,
    /// ISO date of the week start, when the input provides one.
    pub label: Option<NaiveDate>,
}

/// Source family of a surveillance series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SourceFamily {
    /// Outpatient influenza-like-illness reports.
    Ili,
    /// Emergency-department chief-complaint rates.
    Ed,
    /// Internet search trend index.
    Trend,
}

impl SourceFamily {
    pub const ALL: [SourceFamily; 3] = [SourceFamily::Ili, SourceFamily::Ed, SourceFamily::Trend];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceFamily::Ili => "ILI",
            SourceFamily::Ed => "ED",
            SourceFamily::Trend => "TREND",
        }
    }

    /// ED and TREND values are rates or indices and may not be negative.
    pub fn requires_nonnegative(self) -> bool {
        matches!(self, SourceFamily::Ed | SourceFamily::Trend)
    }
}

impl fmt::Display for SourceFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ILI" => Ok(SourceFamily::Ili),
            "ED" => Ok(SourceFamily::Ed),
            "TREND" => Ok(SourceFamily::Trend),
            other => Err(format!("unknown source family `{other}` (expected ILI, ED or TREND)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveillanceSeries {
    pub source_id: String,
    pub family: SourceFamily,
    pub values: Vec<f64>,
}

/// Optional age-stratified split of a zip's weekly counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeSplit {
    pub under65: Vec<u64>,
    pub over65: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipRecord {
    pub zip: String,
    pub population: u64,
    pub poverty_pct: f64,
    pub over65_pct: f64,
    pub weekly_hosp: Vec<u64>,
    pub age_split: Option<AgeSplit>,
}

impl ZipRecord {
    pub fn total_hosp(&self) -> u64 {
        self.weekly_hosp.iter().sum()
    }
}

/// Week-aligned surveillance series and zip-level hospitalization counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyPanel {
    weeks: Vec<WeekIndex>,
    series: Vec<SurveillanceSeries>,
    zips: Vec<ZipRecord>,
}

impl WeeklyPanel {
    /// Validate and assemble a panel.
    pub fn new(
        weeks: Vec<WeekIndex>,
        series: Vec<SurveillanceSeries>,
        zips: Vec<ZipRecord>,
    ) -> Result<Self> {
        let n = weeks.len();
        if n == 0 {
            return Err(Error::InvalidPanel("panel has no weeks".into()));
        }
        for pair in weeks.windows(2) {
            if pair[1].index != pair[0].index + 1 {
                return Err(Error::InvalidPanel(format!(
                    "week indices not contiguous at {} -> {}",
                    pair[0].index, pair[1].index
                )));
            }
            if let (Some(a), Some(b)) = (pair[0].label, pair[1].label) {
                if (b - a).num_days() != 7 {
                    return Err(Error::InvalidPanel(format!(
                        "week labels {a} and {b} are not 7 days apart"
                    )));
                }
            }
        }
        // Labels further apart than one week must still sit on the 7-day grid.
        let labelled: Vec<&WeekIndex> = weeks.iter().filter(|w| w.label.is_some()).collect();
        for pair in labelled.windows(2) {
            let days = (pair[1].label.unwrap() - pair[0].label.unwrap()).num_days();
            if days != 7 * (pair[1].index - pair[0].index) as i64 {
                return Err(Error::InvalidPanel(format!(
                    "week labels for weeks {} and {} are not on a 7-day grid",
                    pair[0].index, pair[1].index
                )));
            }
        }
        if zips.len() < GROUPS {
            return Err(Error::TooFewZips(zips.len()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for s in &series {
            if !ids.insert(s.source_id.as_str()) {
                return Err(Error::InvalidPanel(format!("duplicate series `{}`", s.source_id)));
            }
            if s.values.len() != n {
                return Err(Error::InvalidPanel(format!(
                    "series `{}` has {} weeks, panel has {n}",
                    s.source_id,
                    s.values.len()
                )));
            }
            if let Some(v) = s.values.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidPanel(format!("series `{}` has non-finite value {v}", s.source_id)));
            }
            if s.family.requires_nonnegative() && s.values.iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidPanel(format!(
                    "{} series `{}` has negative values",
                    s.family, s.source_id
                )));
            }
        }
        let mut zip_ids = std::collections::BTreeSet::new();
        for z in &zips {
            if !zip_ids.insert(z.zip.as_str()) {
                return Err(Error::InvalidPanel(format!("duplicate zip `{}`", z.zip)));
            }
            if z.population == 0 {
                return Err(Error::InvalidPanel(format!("zip `{}` has zero population", z.zip)));
            }
            for (name, pct) in [("poverty_pct", z.poverty_pct), ("over65_pct", z.over65_pct)] {
                if !(0.0..=100.0).contains(&pct) {
                    return Err(Error::InvalidPanel(format!("zip `{}` has {name} {pct} outside [0,100]", z.zip)));
                }
            }
            if z.weekly_hosp.len() != n {
                return Err(Error::InvalidPanel(format!(
                    "zip `{}` has {} weeks of counts, panel has {n}",
                    z.zip,
                    z.weekly_hosp.len()
                )));
            }
            if let Some(split) = &z.age_split {
                if split.under65.len() != n || split.over65.len() != n {
                    return Err(Error::InvalidPanel(format!("zip `{}` age split length mismatch", z.zip)));
                }
            }
        }
        Ok(Self { weeks, series, zips })
    }

    pub fn weeks(&self) -> &[WeekIndex] {
        &self.weeks
    }

    pub fn series(&self) -> &[SurveillanceSeries] {
        &self.series
    }

    pub fn zips(&self) -> &[ZipRecord] {
        &self.zips
    }

    pub fn n_weeks(&self) -> usize {
        self.weeks.len()
    }

    pub fn first_week(&self) -> usize {
        self.weeks[0].index
    }

    pub fn series_count(&self, family: SourceFamily) -> usize {
        self.series.iter().filter(|s| s.family == family).count()
    }

    pub fn total_population(&self) -> u64 {
        self.zips.iter().map(|z| z.population).sum()
    }

    /// Week-by-week total hospitalizations over all zips.
    pub fn total_hosp(&self) -> Vec<u64> {
        let all: Vec<usize> = (0..self.zips.len()).collect();
        sum_counts(self, &all)
    }

    /// Copy of the panel with series values replaced, used by tests that
    /// perturb inputs.
    pub fn with_series(&self, series: Vec<SurveillanceSeries>) -> Result<Self> {
        Self::new(self.weeks.clone(), series, self.zips.clone())
    }

    /// Copy of the panel with zip records replaced.
    pub fn with_zips(&self, zips: Vec<ZipRecord>) -> Result<Self> {
        Self::new(self.weeks.clone(), self.series.clone(), zips)
    }
}

/// Partition of the panel's zip codes into four poverty groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileGrouping {
    /// Zip → group in 1..=4 (1 = lowest poverty).
    pub assignment: BTreeMap<String, usize>,
    pub group_population: [u64; GROUPS],
    /// Zip indices into the panel for each group, in rank order.
    members: [Vec<usize>; GROUPS],
}

impl QuartileGrouping {
    /// Build a grouping from explicit member lists (indices into the panel's
    /// zips). Used for randomized regroupings.
    pub fn from_members(panel: &WeeklyPanel, members: [Vec<usize>; GROUPS]) -> Self {
        let mut assignment = BTreeMap::new();
        let mut group_population = [0u64; GROUPS];
        for (g, idx) in members.iter().enumerate() {
            for &i in idx {
                let z = &panel.zips[i];
                assignment.insert(z.zip.clone(), g + 1);
                group_population[g] += z.population;
            }
        }
        Self {
            assignment,
            group_population,
            members,
        }
    }

    /// Panel zip indices of `group` (1-based).
    pub fn members(&self, group: usize) -> &[usize] {
        &self.members[group - 1]
    }

    pub fn all_members(&self) -> &[Vec<usize>; GROUPS] {
        &self.members
    }

    pub fn sizes(&self) -> [usize; GROUPS] {
        [0, 1, 2, 3].map(|g| self.members[g].len())
    }
}

/// Sizes of the four consecutive blocks for `n` items: the remainder goes to
/// the lowest-numbered groups.
pub fn block_sizes(n: usize) -> [usize; GROUPS] {
    let base = n / GROUPS;
    let rem = n % GROUPS;
    [0, 1, 2, 3].map(|g| base + usize::from(g < rem))
}

/// Split an ordered list of zip indices into the four groups.
pub fn split_blocks(order: &[usize]) -> [Vec<usize>; GROUPS] {
    let sizes = block_sizes(order.len());
    let mut out: [Vec<usize>; GROUPS] = Default::default();
    let mut start = 0;
    for (g, &size) in sizes.iter().enumerate() {
        out[g] = order[start..start + size].to_vec();
        start += size;
    }
    out
}

/// Rank zips by poverty (ties by zip string) and cut into four equal-count
/// groups.
pub fn assign_quartiles(panel: &WeeklyPanel) -> Result<QuartileGrouping> {
    let zips = panel.zips();
    if zips.len() < GROUPS {
        return Err(Error::TooFewZips(zips.len()));
    }
    let mut order: Vec<usize> = (0..zips.len()).collect();
    order.sort_by(|&a, &b| {
        zips[a]
            .poverty_pct
            .total_cmp(&zips[b].poverty_pct)
            .then_with(|| zips[a].zip.cmp(&zips[b].zip))
    });
    Ok(QuartileGrouping::from_members(panel, split_blocks(&order)))
}

/// Hospitalization response of one group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupResponse {
    pub counts: Vec<u64>,
    pub population: u64,
}

/// Week-by-week sum of counts over the given zip indices.
pub fn sum_counts(panel: &WeeklyPanel, members: &[usize]) -> Vec<u64> {
    let mut out = vec![0u64; panel.n_weeks()];
    for &i in members {
        for (acc, &c) in out.iter_mut().zip(&panel.zips[i].weekly_hosp) {
            *acc += c;
        }
    }
    out
}

pub fn group_response(panel: &WeeklyPanel, grouping: &QuartileGrouping, group: usize) -> Result<GroupResponse> {
    if !(1..=GROUPS).contains(&group) {
        return Err(Error::Config(format!("group must be in 1..=4, got {group}")));
    }
    Ok(GroupResponse {
        counts: sum_counts(panel, grouping.members(group)),
        population: grouping.group_population[group - 1],
    })
}
