use super::output::{num, OutputDir};
use crate::error::Result;
use crate::evaluation::{EvalReport, GroupLabel};
use crate::inference::SynchronyResult;

pub const TABLE2_HEADER: [&str; 6] = ["variant", "q1", "q2", "q3", "q4", "combined"];
pub const PREDICTION_HEADER: [&str; 8] = ["group", "variant", "horizon", "scheme", "week", "observed", "predicted", "split"];
pub const RESIDUAL_HEADER: [&str; 6] = ["group", "variant", "horizon", "scheme", "week", "residual"];
pub const CORRELATION_HEADER: [&str; 4] = ["group", "zip_a", "zip_b", "r"];

/// One row per variant with quartile and pooled ORMSE per million, in the
/// order the variants first appear.
pub fn table2_rows(reports: &[&EvalReport]) -> Vec<Vec<String>> {
    let mut variants: Vec<&str> = vec![];
    for r in reports {
        if !variants.contains(&r.variant.as_str()) {
            variants.push(&r.variant);
        }
    }
    variants
        .iter()
        .map(|v| {
            let cell = |g: GroupLabel| {
                reports
                    .iter()
                    .find(|r| r.variant == *v && r.group == g)
                    .map_or_else(String::new, |r| num(r.ormse_per_million))
            };
            vec![
                v.to_string(),
                cell(GroupLabel::Quartile(1)),
                cell(GroupLabel::Quartile(2)),
                cell(GroupLabel::Quartile(3)),
                cell(GroupLabel::Quartile(4)),
                cell(GroupLabel::Combined),
            ]
        })
        .collect()
}

/// Long-format tables for external plotting: observed against predicted per
/// test week, residuals, and within-group pairwise correlations. Pooled
/// reports are skipped since their rows repeat the quartile rows.
pub fn emit_plot_tables(out: &mut OutputDir, reports: &[EvalReport], synchrony: Option<&SynchronyResult>) -> Result<()> {
    let mut pred = vec![];
    let mut resid = vec![];
    for r in reports.iter().filter(|r| r.group != GroupLabel::Combined) {
        for i in 0..r.n_test {
            let key = [
                r.group.to_string(),
                r.variant.clone(),
                r.horizon.to_string(),
                r.scheme.to_string(),
                r.test_weeks[i].to_string(),
            ];
            let mut p = key.to_vec();
            p.extend([num(r.observed[i]), num(r.predicted[i]), "test".to_string()]);
            pred.push(p);
            let mut e = key.to_vec();
            e.push(num(r.errors[i]));
            resid.push(e);
        }
    }
    if !reports.is_empty() {
        out.write_csv("predictions.csv", &PREDICTION_HEADER, &pred)?;
        out.write_csv("residuals.csv", &RESIDUAL_HEADER, &resid)?;
    }
    if let Some(s) = synchrony {
        let rows: Vec<Vec<String>> = s
            .per_group_correlations
            .iter()
            .flat_map(|g| g.pairs.iter())
            .map(|p| vec![p.group.to_string(), p.zip_a.clone(), p.zip_b.clone(), num(p.r)])
            .collect();
        out.write_csv("correlations.csv", &CORRELATION_HEADER, &rows)?;
    }
    Ok(())
}
