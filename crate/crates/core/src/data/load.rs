//! CSV ingestion and emission for panels.
//!
//! * series: `week_index,week_start,source_id,family,value`
//! * hosp: `week_index,zip,count` with optional `count_under65,count_over65`
//! * metadata: `zip,population,poverty_pct,over65_pct`

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use super::{AgeSplit, SourceFamily, SurveillanceSeries, WeekIndex, WeeklyPanel, ZipRecord};
use crate::error::{CellRef, Error, Result};

pub const SERIES_HEADER: [&str; 5] = ["week_index", "week_start", "source_id", "family", "value"];
pub const HOSP_HEADER: [&str; 3] = ["week_index", "zip", "count"];
pub const HOSP_HEADER_AGE: [&str; 5] = ["week_index", "zip", "count", "count_under65", "count_over65"];
pub const META_HEADER: [&str; 4] = ["zip", "population", "poverty_pct", "over65_pct"];

struct Table {
    path: PathBuf,
    reader: csv::Reader<File>,
    header: Vec<String>,
}

impl Table {
    fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(file);
        let header = reader
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        Ok(Self {
            path: path.to_path_buf(),
            reader,
            header,
        })
    }

    fn expect_header(&self, options: &[&[&str]]) -> Result<usize> {
        for (i, expected) in options.iter().enumerate() {
            if self.header.len() == expected.len() && self.header.iter().zip(expected.iter()).all(|(a, b)| a == b) {
                return Ok(i);
            }
        }
        Err(Error::Schema {
            at: CellRef {
                file: self.path.clone(),
                row: 1,
                column: self.header.join(","),
            },
            message: format!("expected header `{}`", options[0].join(",")),
        })
    }

    fn rows(&mut self) -> impl Iterator<Item = Result<Row<'_>>> + '_ {
        let path = self.path.clone();
        let header = &self.header;
        self.reader.records().map(move |rec| {
            let rec = rec.map_err(|e| csv_error(&path, e))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != header.len() {
                return Err(Error::Schema {
                    at: CellRef {
                        file: path.clone(),
                        row: line,
                        column: String::new(),
                    },
                    message: format!("expected {} fields, found {}", header.len(), rec.len()),
                });
            }
            Ok(Row {
                path: path.clone(),
                header,
                line,
                rec,
            })
        })
    }
}

struct Row<'a> {
    path: PathBuf,
    header: &'a [String],
    line: u64,
    rec: csv::StringRecord,
}

impl Row<'_> {
    fn err(&self, col: usize, message: impl Into<String>) -> Error {
        Error::Schema {
            at: CellRef {
                file: self.path.clone(),
                row: self.line,
                column: self.header[col].clone(),
            },
            message: message.into(),
        }
    }

    fn str(&self, col: usize) -> &str {
        &self.rec[col]
    }

    fn nonempty(&self, col: usize) -> Result<&str> {
        let s = self.str(col);
        if s.is_empty() {
            Err(self.err(col, "empty field"))
        } else {
            Ok(s)
        }
    }

    fn uint(&self, col: usize) -> Result<u64> {
        let s = self.nonempty(col)?;
        s.parse::<u64>()
            .map_err(|_| self.err(col, format!("`{s}` is not a nonnegative integer")))
    }

    fn real(&self, col: usize) -> Result<f64> {
        let s = self.nonempty(col)?;
        let v = s
            .parse::<f64>()
            .map_err(|_| self.err(col, format!("`{s}` is not a decimal number")))?;
        if !v.is_finite() {
            return Err(self.err(col, format!("`{s}` is not finite")));
        }
        Ok(v)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Schema {
        at: CellRef {
            file: path.to_path_buf(),
            row,
            column: String::new(),
        },
        message: e.to_string(),
    }
}

/// Weekly observations keyed by week index.
struct Track<T> {
    by_week: BTreeMap<usize, T>,
}

impl<T: Clone> Track<T> {
    fn new() -> Self {
        Self { by_week: BTreeMap::new() }
    }

    fn range(&self) -> (usize, usize) {
        (
            *self.by_week.keys().next().unwrap(),
            *self.by_week.keys().next_back().unwrap(),
        )
    }

    fn first_gap(&self) -> Option<usize> {
        let (lo, hi) = self.range();
        (lo..=hi).find(|w| !self.by_week.contains_key(w))
    }

    fn slice(&self, lo: usize, hi: usize) -> Vec<T> {
        (lo..=hi).map(|w| self.by_week[&w].clone()).collect()
    }
}

struct SeriesTrack {
    family: SourceFamily,
    values: Track<f64>,
}

/// Load and validate a panel from the three CSV files.
///
/// Weeks are aligned to the intersection of the week ranges of every series
/// and every zip; a hole inside any one range is an error.
pub fn load_panel(series_file: &Path, hosp_file: &Path, meta_file: &Path) -> Result<WeeklyPanel> {
    let (series, labels) = read_series(series_file)?;
    let meta = read_meta(meta_file)?;
    let hosp = read_hosp(hosp_file, &meta)?;

    let mut lo = 0usize;
    let mut hi = usize::MAX;
    for (id, s) in &series {
        if let Some(week) = s.values.first_gap() {
            return Err(Error::MissingWeek {
                what: format!("series `{id}`"),
                week,
            });
        }
        let (a, b) = s.values.range();
        lo = lo.max(a);
        hi = hi.min(b);
    }
    for (zip, t) in &hosp {
        if let Some(week) = t.first_gap() {
            return Err(Error::MissingWeek {
                what: format!("zip `{zip}`"),
                week,
            });
        }
        let (a, b) = t.range();
        lo = lo.max(a);
        hi = hi.min(b);
    }
    if hosp.is_empty() {
        return Err(Error::InvalidPanel("hospitalization file has no rows".into()));
    }
    if lo > hi {
        return Err(Error::InvalidPanel("input files share no common weeks".into()));
    }

    let weeks = (lo..=hi)
        .map(|index| WeekIndex {
            index,
            label: labels.get(&index).copied(),
        })
        .collect();

    let series = series
        .into_iter()
        .map(|(source_id, s)| SurveillanceSeries {
            source_id,
            family: s.family,
            values: s.values.slice(lo, hi),
        })
        .collect();

    let mut zips = Vec::with_capacity(meta.len());
    for (zip, m) in meta {
        let Some(t) = hosp.get(&zip) else {
            return Err(Error::InvalidPanel(format!("zip `{zip}` has metadata but no counts")));
        };
        let rows = t.slice(lo, hi);
        let has_split = rows.iter().all(|r| r.1.is_some());
        let age_split = has_split.then(|| AgeSplit {
            under65: rows.iter().map(|r| r.1.unwrap().0).collect(),
            over65: rows.iter().map(|r| r.1.unwrap().1).collect(),
        });
        zips.push(ZipRecord {
            zip,
            population: m.population,
            poverty_pct: m.poverty_pct,
            over65_pct: m.over65_pct,
            weekly_hosp: rows.iter().map(|r| r.0).collect(),
            age_split,
        });
    }
    WeeklyPanel::new(weeks, series, zips)
}

type Labels = BTreeMap<usize, NaiveDate>;

fn read_series(path: &Path) -> Result<(BTreeMap<String, SeriesTrack>, Labels)> {
    let mut table = Table::open(path)?;
    table.expect_header(&[&SERIES_HEADER])?;
    let mut out: BTreeMap<String, SeriesTrack> = BTreeMap::new();
    let mut labels = Labels::new();
    for row in table.rows() {
        let row = row?;
        let week = row.uint(0)? as usize;
        let label = match row.str(1) {
            "" => None,
            s => Some(
                NaiveDate::parse_from_str(s, "%Y-%m-%d")
                    .map_err(|_| row.err(1, format!("`{s}` is not an ISO date")))?,
            ),
        };
        let source = row.nonempty(2)?.to_string();
        let family: SourceFamily = row.str(3).parse().map_err(|m: String| row.err(3, m))?;
        let value = row.real(4)?;
        if family.requires_nonnegative() && value < 0.0 {
            return Err(row.err(4, format!("{family} values must be nonnegative, got {value}")));
        }
        if let Some(d) = label {
            match labels.get(&week) {
                Some(prev) if *prev != d => {
                    return Err(row.err(1, format!("week {week} already labelled {prev}")));
                }
                _ => {
                    labels.insert(week, d);
                }
            }
        }
        let track = out.entry(source.clone()).or_insert_with(|| SeriesTrack {
            family,
            values: Track::new(),
        });
        if track.family != family {
            return Err(row.err(3, format!("series `{source}` already has family {}", track.family)));
        }
        if track.values.by_week.insert(week, value).is_some() {
            return Err(row.err(0, format!("duplicate week {week} for series `{source}`")));
        }
    }
    Ok((out, labels))
}

struct Meta {
    population: u64,
    poverty_pct: f64,
    over65_pct: f64,
}

fn read_meta(path: &Path) -> Result<BTreeMap<String, Meta>> {
    let mut table = Table::open(path)?;
    table.expect_header(&[&META_HEADER])?;
    let mut out = BTreeMap::new();
    for row in table.rows() {
        let row = row?;
        let zip = row.nonempty(0)?.to_string();
        let population = row.uint(1)?;
        if population == 0 {
            return Err(row.err(1, "population must be positive"));
        }
        let poverty_pct = row.real(2)?;
        let over65_pct = row.real(3)?;
        for (col, v) in [(2, poverty_pct), (3, over65_pct)] {
            if !(0.0..=100.0).contains(&v) {
                return Err(row.err(col, format!("{v} is outside [0,100]")));
            }
        }
        let m = Meta {
            population,
            poverty_pct,
            over65_pct,
        };
        if out.insert(zip.clone(), m).is_some() {
            return Err(row.err(0, format!("duplicate zip `{zip}`")));
        }
    }
    Ok(out)
}

type HospRow = (u64, Option<(u64, u64)>);

fn read_hosp(path: &Path, meta: &BTreeMap<String, Meta>) -> Result<HashMap<String, Track<HospRow>>> {
    let mut table = Table::open(path)?;
    let with_age = table.expect_header(&[&HOSP_HEADER, &HOSP_HEADER_AGE])? == 1;
    let mut out: HashMap<String, Track<HospRow>> = HashMap::new();
    for row in table.rows() {
        let row = row?;
        let week = row.uint(0)? as usize;
        let zip = row.nonempty(1)?.to_string();
        let count = row.uint(2)?;
        let split = if with_age {
            let (u, o) = (row.uint(3)?, row.uint(4)?);
            if u + o != count {
                return Err(row.err(2, format!("count {count} != count_under65 + count_over65 ({u} + {o})")));
            }
            Some((u, o))
        } else {
            None
        };
        if !meta.contains_key(&zip) {
            return Err(Error::UnknownZip { zip });
        }
        let track = out.entry(zip.clone()).or_insert_with(Track::new);
        if track.by_week.insert(week, (count, split)).is_some() {
            return Err(row.err(0, format!("duplicate week {week} for zip `{zip}`")));
        }
    }
    Ok(out)
}

/// Write a panel as the three CSV files accepted by [`load_panel`].
pub fn write_panel(panel: &WeeklyPanel, series_file: &Path, hosp_file: &Path, meta_file: &Path) -> Result<()> {
    let weeks = panel.weeks();
    let mut out = String::new();
    out.push_str(&SERIES_HEADER.join(","));
    out.push('\n');
    for s in panel.series() {
        for (w, v) in weeks.iter().zip(&s.values) {
            let label = w.label.map(|d| d.format("%Y-%m-%d").to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{}\n", w.index, label, s.source_id, s.family, v));
        }
    }
    write_file(series_file, &out)?;

    let with_age = panel.zips().iter().all(|z| z.age_split.is_some());
    let mut out = String::new();
    out.push_str(&if with_age { HOSP_HEADER_AGE.join(",") } else { HOSP_HEADER.join(",") });
    out.push('\n');
    for z in panel.zips() {
        for (t, w) in weeks.iter().enumerate() {
            match (&z.age_split, with_age) {
                (Some(split), true) => out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    w.index, z.zip, z.weekly_hosp[t], split.under65[t], split.over65[t]
                )),
                _ => out.push_str(&format!("{},{},{}\n", w.index, z.zip, z.weekly_hosp[t])),
            }
        }
    }
    write_file(hosp_file, &out)?;

    let mut out = String::new();
    out.push_str(&META_HEADER.join(","));
    out.push('\n');
    for z in panel.zips() {
        out.push_str(&format!("{},{},{},{}\n", z.zip, z.population, z.poverty_pct, z.over65_pct));
    }
    write_file(meta_file, &out)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}
