use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::output::{num, sha256_file, OutputDir};
use super::tables::{emit_plot_tables, table2_rows, TABLE2_HEADER};
use crate::data::{assign_quartiles, group_response, load_panel, QuartileGrouping, SourceFamily, WeeklyPanel, GROUPS};
use crate::design::{build_matrix, expand, Variant};
use crate::error::{Error, Result};
use crate::evaluation::{combine, residual_bias_test, EvalReport, EvalSettings, Evaluator, GroupLabel, COMBINED_NOTE};
use crate::glm::{cross_validate, fit, CvPlan, FitOptions, ModelDocument, ModelFit, Standardizer};
use crate::inference::{
    burden_correlations, burden_regression, pairwise_synchrony, pca_by_group, permutation_test, synchrony_randomization,
    BURDEN_LABELS,
};
use crate::seed::derive_seed;
use crate::synthetic::{generate, write_synthetic, SynthConfig};
use crate::{par, Result as CrateResult};

pub const MANIFEST_FILE: &str = "manifest.json";
const ERROR_FILE: &str = "error.json";

/// Seed streams derived from the master seed.
const SEED_SYNTH: u64 = 1;
const SEED_CV: u64 = 2;
const SEED_PERMUTATION: u64 = 3;
const SEED_SYNCHRONY: u64 = 4;
const SEED_RESIDUALS: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Validate,
    Synth,
    Fit,
    Evaluate,
    Permute,
    Synchrony,
    Burden,
    Report,
    All,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::Synth => "synth",
            Stage::Fit => "fit",
            Stage::Evaluate => "evaluate",
            Stage::Permute => "permute",
            Stage::Synchrony => "synchrony",
            Stage::Burden => "burden",
            Stage::Report => "report",
            Stage::All => "run-all",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> CrateResult<Self> {
        Ok(match s {
            "validate" => Stage::Validate,
            "synth" => Stage::Synth,
            "fit" => Stage::Fit,
            "evaluate" => Stage::Evaluate,
            "permute" => Stage::Permute,
            "synchrony" => Stage::Synchrony,
            "burden" => Stage::Burden,
            "report" => Stage::Report,
            "run-all" | "all" => Stage::All,
            other => return Err(Error::Config(format!("unknown stage `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub stage: String,
    /// `complete`, or `partial` when a stage failed after writing files.
    pub status: String,
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<String>,
    pub files: Vec<FileEntry>,
}

/// Machine-readable description of a failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
    pub stage: Option<String>,
    pub file: Option<String>,
    pub row: Option<u64>,
    pub column: Option<String>,
}

pub fn error_record(e: &Error, stage: Option<&str>) -> ErrorRecord {
    let (file, row, column) = match e {
        Error::Schema { at, .. } => (Some(at.file.display().to_string()), Some(at.row), Some(at.column.clone())),
        Error::Io { path, .. } => (Some(path.display().to_string()), None, None),
        _ => (None, None, None),
    };
    ErrorRecord {
        kind: e.kind().to_string(),
        message: e.to_string(),
        stage: stage.map(str::to_string),
        file,
        row,
        column,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
}

#[derive(Debug, Serialize)]
struct ValidationReport {
    status: &'static str,
    weeks: usize,
    first_week: usize,
    zips: usize,
    series_ili: usize,
    series_ed: usize,
    series_trend: usize,
    quartile_sizes: [usize; GROUPS],
    quartile_population: [u64; GROUPS],
}

#[derive(Debug, Serialize)]
struct EvalDetail<'a> {
    #[serde(flatten)]
    report: &'a EvalReport,
    residual_bias_p: Option<f64>,
}

#[derive(Debug, Serialize)]
struct EvalDetails<'a> {
    combined_rule: &'static str,
    residual_test: &'static str,
    residual_resamples: usize,
    reports: Vec<EvalDetail<'a>>,
}

#[derive(Debug, Serialize)]
struct FittedModel {
    group: usize,
    variant: String,
    horizon: usize,
    lambda_max: f64,
    cv_grid: Vec<f64>,
    cv_curve: Vec<Option<f64>>,
    model: ModelDocument,
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    out: OutputDir,
    stages: Vec<String>,
    panel: Option<(WeeklyPanel, QuartileGrouping)>,
}

/// Runs one stage (or all of them) and writes the manifest. On failure an
/// error record and a partial manifest are written before the error is
/// returned.
pub fn run(cfg: &RunConfig, stage: Stage) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("flugap-out"));
    let mut runner = Runner {
        cfg,
        out: OutputDir::create(&dir)?,
        stages: vec![],
        panel: None,
    };
    let _ = std::fs::remove_file(runner.out.path(ERROR_FILE));
    let result = par::with_jobs(cfg.jobs.unwrap_or_else(par::current_jobs), || runner.stage(stage));
    match result {
        Ok(()) => {
            let manifest = runner.manifest(stage, "complete")?;
            Ok(RunSummary {
                output_dir: dir,
                manifest,
            })
        }
        Err((failed, e)) => {
            log::error!("stage {failed} failed: {e}");
            let rec = error_record(&e, Some(failed));
            runner.out.write_json(ERROR_FILE, &rec)?;
            runner.manifest(stage, "partial")?;
            Err(e)
        }
    }
}

type StageResult = std::result::Result<(), (&'static str, Error)>;

fn at<T>(stage: &'static str, r: Result<T>) -> std::result::Result<T, (&'static str, Error)> {
    r.map_err(|e| (stage, e))
}

impl Runner<'_> {
    fn stage(&mut self, stage: Stage) -> StageResult {
        match stage {
            Stage::All => {
                let synchrony;
                at("validate", self.validate())?;
                let reports = at("evaluate", self.evaluate())?;
                if self.cfg.permutation.enabled {
                    at("permute", self.permute())?;
                }
                synchrony = if self.cfg.synchrony.enabled {
                    Some(at("synchrony", self.synchrony())?)
                } else {
                    None
                };
                at("evaluate", emit_plot_tables(&mut self.out, &reports, synchrony.as_ref()))?;
                if self.cfg.burden {
                    at("burden", self.burden())?;
                }
                at("report", self.report())?;
            }
            Stage::Validate => at("validate", self.validate())?,
            Stage::Synth => at("synth", self.synth().map(|_| ()))?,
            Stage::Fit => at("fit", self.fit_models())?,
            Stage::Evaluate => {
                let reports = at("evaluate", self.evaluate())?;
                at("evaluate", emit_plot_tables(&mut self.out, &reports, None))?;
            }
            Stage::Permute => at("permute", self.permute())?,
            Stage::Synchrony => {
                let s = at("synchrony", self.synchrony())?;
                at("synchrony", emit_plot_tables(&mut self.out, &[], Some(&s)))?;
            }
            Stage::Burden => at("burden", self.burden())?,
            Stage::Report => at("report", self.report())?,
        }
        Ok(())
    }

    fn settings(&self) -> EvalSettings {
        EvalSettings {
            family: self.cfg.family,
            cv: self.cv_plan(),
            df: self.cfg.df,
            degree: self.cfg.degree,
            loo_reuse_lambda: self.cfg.loo_reuse_lambda,
            fit: FitOptions::default(),
        }
    }

    fn cv_plan(&self) -> CvPlan {
        CvPlan {
            fold_count: self.cfg.cv.fold_count,
            lambda_count: self.cfg.cv.lambda_count,
            lambda_min_ratio: self.cfg.cv.lambda_min_ratio,
            lambda_grid: None,
            seed: derive_seed(self.cfg.master_seed(), SEED_CV),
        }
    }

    fn synth_config(&self) -> SynthConfig {
        let base = self.cfg.synth.clone().unwrap_or_default();
        SynthConfig {
            seed: derive_seed(self.cfg.master_seed(), SEED_SYNTH),
            ..base
        }
    }

    /// Generates the synthetic panel and writes its input tables.
    fn synth(&mut self) -> Result<[PathBuf; 3]> {
        let cfg = self.synth_config();
        let (panel, truth) = generate(&cfg)?;
        let files = write_synthetic(&panel, &self.out.path("data"))?;
        for f in ["data/series.csv", "data/hosp.csv", "data/meta.csv"] {
            self.out.record(f);
        }
        self.out.write_json("data/ground_truth.json", &truth)?;
        self.stages.push("synth".into());
        Ok(files)
    }

    fn load(&mut self) -> Result<(WeeklyPanel, QuartileGrouping)> {
        if let Some(p) = &self.panel {
            return Ok(p.clone());
        }
        let panel = match &self.cfg.data {
            Some(d) => load_panel(&d.series, &d.hosp, &d.meta)?,
            None => {
                // Synthetic data takes the same path as real files.
                let [s, h, m] = self.synth()?;
                load_panel(&s, &h, &m)?
            }
        };
        let grouping = assign_quartiles(&panel)?;
        self.panel = Some((panel.clone(), grouping.clone()));
        Ok((panel, grouping))
    }

    fn validate(&mut self) -> Result<()> {
        let (panel, grouping) = self.load()?;
        let report = ValidationReport {
            status: "ok",
            weeks: panel.n_weeks(),
            first_week: panel.first_week(),
            zips: panel.zips().len(),
            series_ili: panel.series_count(SourceFamily::Ili),
            series_ed: panel.series_count(SourceFamily::Ed),
            series_trend: panel.series_count(SourceFamily::Trend),
            quartile_sizes: grouping.sizes(),
            quartile_population: grouping.group_population,
        };
        self.out.write_json("validation.json", &report)?;
        self.stages.push("validate".into());
        Ok(())
    }

    /// Variants that the panel can support; others are skipped with a
    /// warning so a panel lacking one family still yields the rest.
    fn usable_variants(&self, panel: &WeeklyPanel) -> Result<Vec<Variant>> {
        let v: Vec<Variant> = self
            .cfg
            .variants
            .iter()
            .filter(|v| {
                let ok = v.sources().iter().all(|f| panel.series_count(*f) > 0);
                if !ok {
                    log::warn!("skipping variant {}: panel lacks one of its source families", v.name());
                }
                ok
            })
            .cloned()
            .collect();
        if v.is_empty() {
            return Err(Error::Config("no configured variant is supported by the panel".into()));
        }
        Ok(v)
    }

    fn fit_models(&mut self) -> Result<()> {
        let (panel, grouping) = self.load()?;
        let settings = self.settings();
        let mut models = vec![];
        for variant in self.usable_variants(&panel)? {
            for &h in &self.cfg.horizons {
                let design = build_matrix(&panel, &variant, h)?;
                let rows: Vec<usize> = (0..design.rows()).collect();
                let ex = expand(&design, &rows, settings.df, settings.degree)?;
                let std = Standardizer::from_rows(&ex.values, &rows);
                let x = std.transform(&ex.values, &rows);
                let keys: Vec<u64> = design.row_weeks.iter().map(|&w| w as u64).collect();
                let digest = design.column_digest();
                let fitted = par::map_range(GROUPS, |g| -> Result<FittedModel> {
                    let resp = group_response(&panel, &grouping, g + 1)?;
                    let y: Vec<f64> = design.row_positions.iter().map(|&p| resp.counts[p] as f64).collect();
                    let cv = cross_validate(&x, &y, settings.family, &settings.cv, &keys, &settings.fit)?;
                    let path: Vec<f64> = match cv.best_index {
                        Some(b) => cv.grid[..=b].to_vec(),
                        None => vec![cv.lambda_star],
                    };
                    let mut model: Option<ModelFit> = None;
                    for lam in path {
                        model = Some(fit(&x, &y, settings.family, lam, model.as_ref(), &settings.fit)?);
                    }
                    let model = std.unscale(&model.expect("nonempty path"));
                    Ok(FittedModel {
                        group: g + 1,
                        variant: variant.name(),
                        horizon: h,
                        lambda_max: cv.lambda_max,
                        cv_grid: cv.grid,
                        cv_curve: cv.cv_curve,
                        model: model.to_document(&digest),
                    })
                });
                for f in fitted {
                    models.push(f?);
                }
            }
        }
        self.out.write_json("models.json", &models)?;
        self.stages.push("fit".into());
        Ok(())
    }

    fn evaluate(&mut self) -> Result<Vec<EvalReport>> {
        let (panel, grouping) = self.load()?;
        let settings = self.settings();
        let variants = self.usable_variants(&panel)?;
        let mut reports: Vec<EvalReport> = vec![];
        for &h in &self.cfg.horizons {
            for &scheme in &self.cfg.schemes {
                for variant in &variants {
                    let ev = Evaluator::new(&panel, variant, h, scheme, &settings)?;
                    let groups = par::map_range(GROUPS, |g| {
                        let resp = group_response(&panel, &grouping, g + 1)?;
                        ev.evaluate_counts(&resp.counts, resp.population, GroupLabel::Quartile(g + 1))
                    });
                    let groups = groups.into_iter().collect::<Result<Vec<_>>>()?;
                    let pooled = combine(&groups)?;
                    reports.extend(groups);
                    reports.push(pooled);
                }
            }
        }

        let seed = derive_seed(self.cfg.master_seed(), SEED_RESIDUALS);
        let resamples = self.cfg.residual_resamples;
        let bias_p: Vec<Option<f64>> = par::map_range(reports.len(), |i| {
            residual_bias_test(&reports[i].errors, resamples, derive_seed(seed, i as u64)).ok()
        });

        let header = [
            "group",
            "variant",
            "horizon",
            "scheme",
            "family",
            "ormse_per_million",
            "oos_neg_log_lik",
            "population",
            "n_test",
            "refits",
            "nonconverged",
            "residual_bias_p",
        ];
        let rows: Vec<Vec<String>> = reports
            .iter()
            .zip(&bias_p)
            .map(|(r, p)| {
                vec![
                    r.group.to_string(),
                    r.variant.clone(),
                    r.horizon.to_string(),
                    r.scheme.to_string(),
                    r.family.as_str().to_string(),
                    num(r.ormse_per_million),
                    num(r.oos_neg_log_lik),
                    num(r.population),
                    r.n_test.to_string(),
                    r.refits.to_string(),
                    r.nonconverged.to_string(),
                    p.map(num).unwrap_or_default(),
                ]
            })
            .collect();
        self.out.write_csv("eval_reports.csv", &header, &rows)?;

        for &h in &self.cfg.horizons {
            for &scheme in &self.cfg.schemes {
                let sel: Vec<&EvalReport> = reports.iter().filter(|r| r.horizon == h && r.scheme == scheme).collect();
                let name = format!("table2_h{h}_{}.csv", scheme.tag());
                self.out.write_csv(&name, &TABLE2_HEADER, &table2_rows(&sel))?;
            }
        }
        let details = EvalDetails {
            combined_rule: COMBINED_NOTE,
            residual_test: "sign-flip resampling of the mean residual, two-sided",
            residual_resamples: resamples,
            reports: reports
                .iter()
                .zip(&bias_p)
                .map(|(r, p)| EvalDetail {
                    report: r,
                    residual_bias_p: *p,
                })
                .collect(),
        };
        self.out.write_json("eval_details.json", &details)?;
        self.stages.push("evaluate".into());
        Ok(reports)
    }

    fn permute(&mut self) -> Result<()> {
        let (panel, grouping) = self.load()?;
        let pc = &self.cfg.permutation;
        let variant = match &pc.variant {
            Some(v) => v.clone(),
            None => Variant::new(SourceFamily::ALL.into_iter().filter(|f| panel.series_count(*f) > 0))?,
        };
        let res = permutation_test(
            &panel,
            &grouping,
            &variant,
            pc.horizon,
            pc.scheme,
            &self.settings(),
            pc.repeats,
            derive_seed(self.cfg.master_seed(), SEED_PERMUTATION),
            pc.observed,
        )?;
        self.out.write_json("permutation.json", &res)?;
        let rows: Vec<Vec<String>> = res
            .null_diffs
            .iter()
            .enumerate()
            .map(|(i, d)| vec![i.to_string(), num(*d)])
            .collect();
        self.out.write_csv("permutation_null.csv", &["draw", "null_diff"], &rows)?;
        self.stages.push("permute".into());
        Ok(())
    }

    fn synchrony(&mut self) -> Result<crate::inference::SynchronyResult> {
        let (panel, grouping) = self.load()?;
        let mut res = pairwise_synchrony(&panel, &grouping)?;
        let rand = synchrony_randomization(
            &panel,
            &grouping,
            self.cfg.synchrony.repeats,
            derive_seed(self.cfg.master_seed(), SEED_SYNCHRONY),
        )?;
        let pca = pca_by_group(&panel, &grouping)?;
        let null_rows: Vec<Vec<String>> = rand
            .null_means
            .iter()
            .zip(&rand.null_medians)
            .enumerate()
            .map(|(i, (m, d))| vec![i.to_string(), num(*m), num(*d)])
            .collect();
        self.out.write_csv("synchrony_null.csv", &["draw", "null_mean", "null_median"], &null_rows)?;
        let pca_rows: Vec<Vec<String>> = pca
            .iter()
            .flat_map(|g| {
                g.variance_explained
                    .iter()
                    .enumerate()
                    .map(move |(k, v)| vec![g.group.to_string(), (k + 1).to_string(), num(*v)])
            })
            .collect();
        self.out.write_csv("pca.csv", &["group", "component", "variance_explained"], &pca_rows)?;
        res.randomization = Some(rand);

        #[derive(Serialize)]
        struct GroupSummary {
            group: usize,
            pairs: usize,
            mean_r: f64,
            median_r: f64,
            excluded_zips: Vec<String>,
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            groups: Vec<GroupSummary>,
            randomization: &'a Option<crate::inference::RandomizationResult>,
            pca: &'a [crate::inference::GroupPca],
        }
        let doc = Doc {
            groups: res
                .per_group_correlations
                .iter()
                .map(|g| GroupSummary {
                    group: g.group,
                    pairs: g.pairs.len(),
                    mean_r: g.mean,
                    median_r: g.median,
                    excluded_zips: g.excluded.clone(),
                })
                .collect(),
            randomization: &res.randomization,
            pca: &pca,
        };
        self.out.write_json("synchrony.json", &doc)?;
        self.stages.push("synchrony".into());
        Ok(res)
    }

    fn burden(&mut self) -> Result<()> {
        let (panel, _) = self.load()?;
        let reg = burden_regression(panel.zips())?;
        let cor = burden_correlations(panel.zips());
        let rows: Vec<Vec<String>> = reg
            .coefficients
            .iter()
            .map(|c| vec![c.label.clone(), num(c.estimate), num(c.std_error), num(c.t_value), num(c.p_value)])
            .collect();
        debug_assert_eq!(rows.len(), BURDEN_LABELS.len());
        self.out
            .write_csv("burden.csv", &["term", "estimate", "std_error", "t_value", "p_value"], &rows)?;
        #[derive(Serialize)]
        struct Doc<'a> {
            response: &'static str,
            regression: &'a crate::inference::BurdenRegression,
            correlations: &'a crate::inference::BurdenCorrelations,
        }
        self.out.write_json(
            "burden.json",
            &Doc {
                response: "hospitalizations per 1,000 residents over the panel",
                regression: &reg,
                correlations: &cor,
            },
        )?;
        self.stages.push("burden".into());
        Ok(())
    }

    /// Collects headline numbers from whichever result files exist.
    fn report(&mut self) -> Result<()> {
        let read = |name: &str| -> Result<Option<serde_json::Value>> {
            let p = self.out.path(name);
            if !p.exists() {
                return Ok(None);
            }
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            Ok(Some(serde_json::from_str(&text)?))
        };
        let mut summary = serde_json::Map::new();
        if let Some(v) = read("eval_details.json")? {
            let rows: Vec<serde_json::Value> = v["reports"]
                .as_array()
                .map(|a| {
                    a.iter()
                        .map(|r| {
                            serde_json::json!({
                                "group": r["group"],
                                "variant": r["variant"],
                                "horizon": r["horizon"],
                                "scheme": r["scheme"],
                                "ormse_per_million": r["ormse_per_million"],
                                "oos_neg_log_lik": r["oos_neg_log_lik"],
                                "residual_bias_p": r["residual_bias_p"],
                            })
                        })
                        .collect()
                })
                .unwrap_or_default();
            summary.insert("evaluation".into(), rows.into());
        }
        if let Some(v) = read("permutation.json")? {
            summary.insert(
                "permutation".into(),
                serde_json::json!({
                    "observed_stat": v["observed_stat"],
                    "observed_diff": v["observed_diff"],
                    "group_ormse": v["group_ormse"],
                    "p_value": v["p_value"],
                    "p_upper": v["p_upper"],
                    "repeats": v["repeats"],
                    "failed_repeats": v["failed_repeats"],
                }),
            );
        }
        if let Some(v) = read("synchrony.json")? {
            summary.insert(
                "synchrony".into(),
                serde_json::json!({
                    "groups": v["groups"].as_array().map(|g| g.iter().map(|x| serde_json::json!({
                        "group": x["group"], "mean_r": x["mean_r"], "median_r": x["median_r"]
                    })).collect::<Vec<_>>()),
                    "p_mean": v["randomization"]["p_mean"],
                    "p_median": v["randomization"]["p_median"],
                }),
            );
        }
        if let Some(v) = read("burden.json")? {
            summary.insert("burden".into(), v["regression"]["coefficients"].clone());
        }
        self.out.write_json("summary.json", &summary)?;
        self.stages.push("report".into());
        Ok(())
    }

    fn manifest(&mut self, stage: Stage, status: &str) -> Result<Manifest> {
        let mut names: Vec<String> = self
            .out
            .written()
            .iter()
            .map(|p| p.to_string_lossy().replace('\\', "/"))
            .filter(|p| p != MANIFEST_FILE)
            .collect();
        let mut stages = self.stages.clone();
        // Single stages add to what earlier invocations left in the directory.
        if stage != Stage::All {
            if let Ok(prev) = read_manifest(self.out.root()) {
                names.extend(prev.files.into_iter().map(|f| f.path).filter(|p| self.out.path(p).exists()));
                let mut all = prev.stages;
                for s in stages {
                    if !all.contains(&s) {
                        all.push(s);
                    }
                }
                stages = all;
            }
        }
        names.sort();
        names.dedup();
        let files = names
            .into_iter()
            .map(|name| {
                let path = self.out.path(&name);
                let bytes = std::fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
                Ok(FileEntry {
                    sha256: sha256_file(&path)?,
                    path: name,
                    bytes,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = Manifest {
            tool: "flugap".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            stage: stage.as_str().into(),
            status: status.into(),
            config_hash: self.cfg.hash(),
            seed: self.cfg.master_seed(),
            stages,
            files,
        };
        self.out.write_json(MANIFEST_FILE, &manifest)?;
        Ok(manifest)
    }
}

/// Reads a manifest back from an output directory.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let p = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_str(&text)?)
}
