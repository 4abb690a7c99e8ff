use flugap::data::{assign_quartiles, WeekIndex, WeeklyPanel, ZipRecord};
use flugap::design::Variant;
use flugap::evaluation::{EvalSettings, SplitScheme};
use flugap::glm::CvPlan;
use flugap::inference::{
    burden_correlations, pairwise_synchrony, permutation_test, synchrony_randomization, ObservedStat,
};
use flugap::seed::rng;
use flugap::synthetic::{generate, SynthConfig};
use rand::Rng;
use rand_distr::{Distribution, Poisson};

fn weeks(n: usize) -> Vec<WeekIndex> {
    (0..n).map(|index| WeekIndex { index, label: None }).collect()
}

fn zip(i: usize, poverty: f64, counts: Vec<u64>) -> ZipRecord {
    ZipRecord {
        zip: format!("{}", 75001 + i),
        population: 10_000,
        poverty_pct: poverty,
        over65_pct: 12.0,
        weekly_hosp: counts,
        age_split: None,
    }
}

fn noise(n: usize, mean: f64, seed: u64) -> Vec<u64> {
    let mut r = rng(seed);
    let d = Poisson::new(mean).unwrap();
    (0..n).map(|_| d.sample(&mut r) as u64).collect()
}

#[test]
fn copied_series_in_top_group_beat_every_regrouping() {
    let n = 40;
    let shared = noise(n, 20.0, 99);
    let zips: Vec<ZipRecord> = (0..16)
        .map(|i| {
            let counts = if i >= 12 { shared.clone() } else { noise(n, 20.0, i as u64) };
            zip(i, i as f64 + 1.0, counts)
        })
        .collect();
    let panel = WeeklyPanel::new(weeks(n), vec![], zips).unwrap();
    let g = assign_quartiles(&panel).unwrap();
    let r = 200;
    let res = synchrony_randomization(&panel, &g, r, 5).unwrap();
    assert!((res.observed_mean - 1.0).abs() < 1e-12);
    assert!(res.p_mean <= 1.0 / r as f64, "p_mean = {}", res.p_mean);

    let one = synchrony_randomization(&panel, &g, 1, 6).unwrap();
    assert!(one.p_mean == 0.0 || one.p_mean == 1.0);
}

#[test]
fn correlation_table_counts_pairs_minus_constant_zips() {
    let n = 30;
    let zips: Vec<ZipRecord> = (0..13)
        .map(|i| {
            let counts = if i == 2 || i == 11 { vec![3; n] } else { noise(n, 10.0, i as u64) };
            zip(i, i as f64, counts)
        })
        .collect();
    let panel = WeeklyPanel::new(weeks(n), vec![], zips).unwrap();
    let g = assign_quartiles(&panel).unwrap();
    let s = pairwise_synchrony(&panel, &g).unwrap();
    let sizes = g.sizes();
    assert_eq!(sizes, [4, 3, 3, 3]);
    // Zip 2 sits in group 1, zip 11 in group 4.
    let usable = [3usize, 3, 3, 2];
    for (k, gc) in s.per_group_correlations.iter().enumerate() {
        assert_eq!(gc.pairs.len(), usable[k] * (usable[k] - 1) / 2, "group {}", k + 1);
    }
    assert_eq!(s.per_group_correlations[0].excluded, vec!["75003".to_string()]);
}

fn quick() -> EvalSettings {
    EvalSettings {
        cv: CvPlan {
            fold_count: 4,
            lambda_count: 8,
            lambda_min_ratio: 1e-2,
            ..CvPlan::default()
        },
        ..EvalSettings::default()
    }
}

#[test]
fn identical_zips_give_zero_difference() {
    let cfg = SynthConfig {
        weeks: 40,
        zips: 8,
        seed: 1,
        ..SynthConfig::default()
    };
    let (base, _) = generate(&cfg).unwrap();
    let counts = base.zips()[0].weekly_hosp.clone();
    let zips: Vec<ZipRecord> = (0..8).map(|i| zip(i, i as f64, counts.clone())).collect();
    let panel = base.with_zips(zips).unwrap();
    let g = assign_quartiles(&panel).unwrap();
    let v: Variant = "ili".parse().unwrap();
    let scheme = SplitScheme::holdout(0.6).unwrap();
    let res = permutation_test(&panel, &g, &v, 1, scheme, &quick(), 6, 3, ObservedStat::Literal).unwrap();
    assert!(res.observed_diff.abs() < 1e-9);
    assert!(res.p_value <= 1.0 / 6.0);
    assert_eq!(res.failed_repeats, 0);
}

#[test]
fn permutation_null_is_reproducible() {
    let cfg = SynthConfig {
        weeks: 40,
        zips: 12,
        seed: 2,
        ..SynthConfig::default()
    };
    let (panel, _) = generate(&cfg).unwrap();
    let g = assign_quartiles(&panel).unwrap();
    let v: Variant = "ed".parse().unwrap();
    let scheme = SplitScheme::holdout(0.6).unwrap();
    let a = permutation_test(&panel, &g, &v, 1, scheme, &quick(), 5, 17, ObservedStat::Spread).unwrap();
    let b = permutation_test(&panel, &g, &v, 1, scheme, &quick(), 5, 17, ObservedStat::Spread).unwrap();
    assert_eq!(a.null_diffs, b.null_diffs);
    assert_eq!(a.null_diffs.len(), 5);
    assert!(a.null_diffs.iter().all(|d| *d >= 0.0));
    assert!((a.p_value + a.p_upper - 1.0).abs() < 1e-12);
}

#[test]
fn burden_correlation_is_near_zero_under_independence() {
    let mut small = 0;
    for seed in 0..100u64 {
        let mut r = rng(seed);
        let zips: Vec<ZipRecord> = (0..300)
            .map(|i| {
                let mut z = zip(i, r.random_range(0.0..50.0), vec![r.random_range(0..100)]);
                z.over65_pct = r.random_range(5.0..25.0);
                z
            })
            .collect();
        let c = burden_correlations(&zips);
        if c.poverty.unwrap().r.abs() < 0.2 {
            small += 1;
        }
    }
    assert!(small >= 95, "{small}/100");
}

#[test]
fn burden_correlation_matches_hand_formula() {
    let data = [(2.0, 10), (4.0, 30), (6.0, 20), (8.0, 50), (10.0, 40)];
    let zips: Vec<ZipRecord> = data.iter().enumerate().map(|(i, &(p, c))| zip(i, p, vec![c])).collect();
    // Rates per 1,000 are counts / 10.
    let x: Vec<f64> = data.iter().map(|d| d.0).collect();
    let y: Vec<f64> = data.iter().map(|d| d.1 as f64 / 10.0).collect();
    let (mx, my) = (6.0, 3.0);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let expect = sxy / (sxx * syy).sqrt();
    let c = burden_correlations(&zips);
    assert!((c.poverty.unwrap().r - expect).abs() < 1e-12);
    assert!((expect - 0.8).abs() < 1e-12);
}
