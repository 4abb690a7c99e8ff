//! Acceptance suite: one PASS/FAIL line per criterion on stderr, then a
//! single assertion that every criterion passed.
//!
//! Oracles live here, written independently of the library code.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use flugap::data::{assign_quartiles, group_response, WeekIndex, WeeklyPanel, ZipRecord};
use flugap::design::{build_matrix, Variant};
use flugap::evaluation::{ormse, EvalSettings, Evaluator, GroupLabel, SplitScheme, PER_MILLION};
use flugap::glm::{
    fit, fit_path, gradient, lambda_grid, lambda_max, neg_log_likelihood, CvPlan, Family, FitOptions,
};
use flugap::inference::{
    burden_regression, pairwise_synchrony, pca, permutation_test, synchrony_randomization, ObservedStat,
    BURDEN_LABELS,
};
use flugap::pipeline::{run, sha256_file, RunConfig, Stage};
use flugap::seed::{derive_seed, rng};
use flugap::spline::SplineSpec;
use flugap::synthetic::{generate, naive_baseline, SynthConfig};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- oracles

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

fn poisson_objective(rows: &[Vec<f64>], y: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let mut total = 0.0;
    for (r, &yi) in rows.iter().zip(y) {
        let eta = beta[0] + r.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
        total += eta.exp() - yi * eta;
    }
    total + lambda * beta[1..].iter().map(|b| b.abs()).sum::<f64>()
}

/// Exhaustive grid over (intercept, coefficients), refined by repeated
/// zooming around the incumbent.
fn grid_oracle(rows: &[Vec<f64>], y: &[f64], lambda: f64) -> f64 {
    let d = rows[0].len() + 1;
    let points = if d <= 3 { 41 } else { 25 };
    let mut center = vec![0.0; d];
    let mut half = vec![4.0; d];
    let mut best = f64::INFINITY;
    for _ in 0..8 {
        let mut idx = vec![0usize; d];
        let mut incumbent = center.clone();
        loop {
            let beta: Vec<f64> = (0..d)
                .map(|k| center[k] - half[k] + 2.0 * half[k] * idx[k] as f64 / (points - 1) as f64)
                .collect();
            let v = poisson_objective(rows, y, &beta, lambda);
            if v < best {
                best = v;
                incumbent = beta;
            }
            let mut k = 0;
            while k < d {
                idx[k] += 1;
                if idx[k] < points {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == d {
                break;
            }
        }
        center = incumbent;
        half.iter_mut().for_each(|h| *h *= 0.3);
    }
    best
}

/// Unpenalized Poisson regression by Newton–Raphson (IRLS).
fn irls(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let d = rows[0].len() + 1;
    let mut beta = vec![0.0; d];
    beta[0] = (y.iter().sum::<f64>() / y.len() as f64).ln();
    for _ in 0..100 {
        let mut h = vec![vec![0.0; d]; d];
        let mut g = vec![0.0; d];
        for (r, &yi) in rows.iter().zip(y) {
            let z: Vec<f64> = std::iter::once(1.0).chain(r.iter().copied()).collect();
            let mu = z.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>().exp();
            for i in 0..d {
                g[i] += z[i] * (yi - mu);
                for j in 0..d {
                    h[i][j] += mu * z[i] * z[j];
                }
            }
        }
        let step = solve(h, g);
        beta.iter_mut().zip(&step).for_each(|(b, s)| *b += s);
        if step.iter().all(|s| s.abs() < 1e-14) {
            break;
        }
    }
    beta
}

/// Textbook Cox–de Boor recursion on a clamped knot vector.
fn cox_de_boor(t: &[f64], i: usize, p: usize, x: f64) -> f64 {
    if p == 0 {
        let hi = *t.last().unwrap();
        let last = (0..t.len() - 1).rev().find(|&j| t[j] < t[j + 1]).unwrap();
        return if (t[i] <= x && x < t[i + 1]) || (x == hi && i == last) { 1.0 } else { 0.0 };
    }
    let a = if t[i + p] > t[i] { (x - t[i]) / (t[i + p] - t[i]) * cox_de_boor(t, i, p - 1, x) } else { 0.0 };
    let b = if t[i + p + 1] > t[i + 1] {
        (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * cox_de_boor(t, i + 1, p - 1, x)
    } else {
        0.0
    };
    a + b
}

fn pearson_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn weeks(n: usize) -> Vec<WeekIndex> {
    (0..n).map(|index| WeekIndex { index, label: None }).collect()
}

fn zip(i: usize, population: u64, poverty: f64, over65: f64, counts: Vec<u64>) -> ZipRecord {
    ZipRecord {
        zip: format!("{}", 75001 + i),
        population,
        poverty_pct: poverty,
        over65_pct: over65,
        weekly_hosp: counts,
        age_split: None,
    }
}

fn random_poisson_instance<R: Rng>(r: &mut R, n: usize, p: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let b0 = r.random_range(0.5..2.0);
    let beta: Vec<f64> = (0..p).map(|_| r.random_range(-1.0..1.0)).collect();
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let y = rows
        .iter()
        .map(|x| {
            let eta: f64 = b0 + x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
            Poisson::new(eta.exp()).unwrap().sample(r)
        })
        .collect();
    (rows, y)
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

// ---------------------------------------------------------------- criteria

fn solver_vs_oracles() -> Outcome {
    let mut r = rng(101);
    let opts = FitOptions::default();
    let (mut worst_gap, mut worst_coef) = (f64::NEG_INFINITY, 0.0f64);
    for _ in 0..50 {
        let n = r.random_range(8..=20);
        let p = r.random_range(1..=3);
        let (rows, y) = random_poisson_instance(&mut r, n, p);
        let x = to_matrix(&rows);

        let lam = r.random_range(0.05..0.8) * lambda_max(&x, &y, Family::Poisson);
        let f = fit(&x, &y, Family::Poisson, lam, None, &opts).map_err(|e| e.to_string())?;
        let beta: Vec<f64> = std::iter::once(f.intercept).chain(f.coef.iter().copied()).collect();
        let gap = poisson_objective(&rows, &y, &beta, lam) - grid_oracle(&rows, &y, lam);
        worst_gap = worst_gap.max(gap);

        let f0 = fit(&x, &y, Family::Poisson, 0.0, None, &opts).map_err(|e| e.to_string())?;
        let oracle = irls(&rows, &y);
        let got: Vec<f64> = std::iter::once(f0.intercept).chain(f0.coef.iter().copied()).collect();
        for (a, b) in got.iter().zip(&oracle) {
            worst_coef = worst_coef.max((a - b).abs());
        }
    }
    check(
        worst_gap <= 1e-6 && worst_coef <= 1e-6,
        format!("max(objective - grid optimum) = {worst_gap:.2e}, max |coef - IRLS| = {worst_coef:.2e}"),
    )
}

fn gradient_check() -> Outcome {
    let mut r = rng(202);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let family = if k % 2 == 0 { Family::Poisson } else { Family::Gaussian };
        let n = r.random_range(5..30);
        let p = r.random_range(1..6);
        let x = DMatrix::from_fn(n, p, |_, _| r.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..n)
            .map(|_| match family {
                Family::Poisson => r.random_range(0..10) as f64,
                Family::Gaussian => r.random_range(-3.0..3.0),
            })
            .collect();
        let b0 = r.random_range(-0.5..1.5);
        let coef: Vec<f64> = (0..p).map(|_| r.random_range(-1.0..1.0)).collect();
        let (g0, g) = gradient(family, &x, &y, b0, &coef);
        let nll = |b0: f64, c: &[f64]| {
            let eta: Vec<f64> = (0..n).map(|i| b0 + (0..p).map(|j| x[(i, j)] * c[j]).sum::<f64>()).collect();
            neg_log_likelihood(family, &y, &eta).unwrap()
        };
        let h = 1e-6;
        let mut fd = vec![(nll(b0 + h, &coef) - nll(b0 - h, &coef)) / (2.0 * h)];
        for j in 0..p {
            let (mut up, mut dn) = (coef.clone(), coef.clone());
            up[j] += h;
            dn[j] -= h;
            fd.push((nll(b0, &up) - nll(b0, &dn)) / (2.0 * h));
        }
        let analytic: Vec<f64> = std::iter::once(g0).chain(g).collect();
        for (a, f) in analytic.iter().zip(&fd) {
            worst = worst.max((a - f).abs() / a.abs().max(1.0));
        }
    }
    check(worst <= 1e-5, format!("max relative error {worst:.2e} over 100 instances"))
}

fn spline_properties() -> Outcome {
    let mut r = rng(303);
    let mut worst_sum = 0.0f64;
    let mut worst_oracle = 0.0f64;
    let mut problems = Vec::new();
    let mut evaluated = 0;
    for _ in 0..10 {
        let degree = 3;
        let df = r.random_range(4..10);
        let values: Vec<f64> = (0..60).map(|_| r.random_range(-5.0..20.0)).collect();
        let spec = SplineSpec::from_values(&values, df, degree).map_err(|e| e.to_string())?;
        let t = spec.knots();
        let (lo, hi) = spec.boundary;
        for k in 0..100 {
            let x = if k == 0 { hi } else if k == 1 { lo } else { r.random_range(lo..hi) };
            let b = spec.evaluate(x);
            evaluated += 1;
            worst_sum = worst_sum.max((b.iter().sum::<f64>() - 1.0).abs());
            if b.iter().any(|v| *v < 0.0) {
                problems.push(format!("negative basis value at {x}"));
            }
            let nz = b.iter().filter(|v| **v != 0.0).count();
            if nz > degree + 1 {
                problems.push(format!("{nz} nonzero values at {x}"));
            }
            for (i, v) in b.iter().enumerate() {
                worst_oracle = worst_oracle.max((v - cox_de_boor(&t, i, degree, x)).abs());
            }
        }
    }
    check(
        worst_sum <= 1e-12 && worst_oracle <= 1e-12 && problems.is_empty() && evaluated == 1000,
        format!(
            "{evaluated} points: |sum - 1| <= {worst_sum:.1e}, |basis - recursion| <= {worst_oracle:.1e}{}",
            problems.first().map(|p| format!(", {p}")).unwrap_or_default()
        ),
    )
}

fn shrinkage_and_paths() -> Outcome {
    let mut r = rng(404);
    let opts = FitOptions::default();
    let mut worst_rise = 0.0f64;
    let mut nonzero_at_max = 0;
    for k in 0..20 {
        let family = if k % 2 == 0 { Family::Poisson } else { Family::Gaussian };
        let n = r.random_range(30..60);
        let p = r.random_range(3..12);
        let (rows, mut y) = random_poisson_instance(&mut r, n, p);
        if family == Family::Gaussian {
            let noise = Normal::new(0.0, 1.0).unwrap();
            y.iter_mut().for_each(|v| *v += noise.sample(&mut r));
        }
        let x = to_matrix(&rows);
        let lmax = lambda_max(&x, &y, family);
        for lam in [lmax, 1.5 * lmax, 10.0 * lmax] {
            let f = fit(&x, &y, family, lam, None, &opts).map_err(|e| e.to_string())?;
            nonzero_at_max += f.coef.iter().filter(|b| **b != 0.0).count();
        }
        let grid = lambda_grid(lmax, 40, 1e-3);
        let path = fit_path(&x, &y, family, &grid, &opts).map_err(|e| e.to_string())?;
        for w in path.windows(2) {
            // Grid descends, so the L1 norm may only grow along it.
            worst_rise = worst_rise.max(w[0].l1_norm() - w[1].l1_norm());
        }
    }
    check(
        nonzero_at_max == 0 && worst_rise <= 1e-8,
        format!("{nonzero_at_max} nonzero coefficients at lambda >= lambda_max; max L1 increase with lambda {worst_rise:.1e}"),
    )
}

fn predictor_counts() -> Outcome {
    let cfg = SynthConfig { weeks: 20, zips: 8, ..SynthConfig::default() };
    let (panel, _) = generate(&cfg).map_err(|e| e.to_string())?;
    let want = [("ili", 15), ("ed", 18), ("trend", 18), ("ili+ed", 33), ("ili+ed+trend", 51)];
    let mut got = Vec::new();
    for (name, _) in want {
        let v: Variant = name.parse().map_err(|e: flugap::Error| e.to_string())?;
        got.push(build_matrix(&panel, &v, 1).map_err(|e| e.to_string())?.cols());
    }
    let ok = want.iter().zip(&got).all(|((_, w), g)| w == g);
    check(ok, format!("columns {:?} for ili, ed, trend, ili+ed, ili+ed+trend", got))
}

fn leakage() -> Outcome {
    let cfg = SynthConfig { weeks: 30, zips: 8, seed: 6, ..SynthConfig::default() };
    let (panel, _) = generate(&cfg).map_err(|e| e.to_string())?;
    let v = Variant::all().last().unwrap().clone();
    let mut leaks = 0;
    let mut later_rows_changed = 0;
    let mut cases = 0;
    for h in [1usize, 2] {
        let base = build_matrix(&panel, &v, h).map_err(|e| e.to_string())?;
        for s in 0..panel.series().len() {
            for t in 0..panel.n_weeks() {
                let mut series = panel.series().to_vec();
                series[s].values[t] += 1000.0;
                let moved = build_matrix(&panel.with_series(series).map_err(|e| e.to_string())?, &v, h)
                    .map_err(|e| e.to_string())?;
                cases += 1;
                for (row, &target) in base.row_positions.iter().enumerate() {
                    let same = base.values.row(row) == moved.values.row(row);
                    if target <= t + h - 1 && !same {
                        leaks += 1;
                    }
                    if target == t + h && !same {
                        later_rows_changed += 1;
                    }
                }
            }
        }
    }
    check(
        leaks == 0 && later_rows_changed > 0,
        format!("{cases} perturbations, {leaks} leaking rows, {later_rows_changed} first-eligible rows responded"),
    )
}

fn ormse_arithmetic() -> Outcome {
    let a = ormse(&[3.0, 4.0], 1_000_000, PER_MILLION).map_err(|e| e.to_string())?;
    let b = ormse(&[0.0, 0.0, 0.0], 5_000, PER_MILLION).map_err(|e| e.to_string())?;
    let c = ormse(&[1.0, -2.0, 2.0], 250_000, PER_MILLION).map_err(|e| e.to_string())?;
    let c_hand = 1e6 * (9.0f64 / 3.0).sqrt() / 250_000.0;
    check(
        (a - 12.5f64.sqrt()).abs() <= 1e-12 && b == 0.0 && (c - c_hand).abs() <= 1e-12,
        format!("[3,4] -> {a}, zeros -> {b}, [1,-2,2]/250k -> {c}"),
    )
}

fn quick_settings(folds: usize, lambdas: usize) -> EvalSettings {
    EvalSettings {
        cv: CvPlan {
            fold_count: folds,
            lambda_count: lambdas,
            lambda_min_ratio: 1e-2,
            ..CvPlan::default()
        },
        ..EvalSettings::default()
    }
}

fn permutation_calibration() -> Outcome {
    let start = Instant::now();
    let settings = quick_settings(3, 5);
    let v: Variant = "ili".parse().unwrap();
    let scheme = SplitScheme::holdout(0.6).unwrap();
    let mut hits = 0;
    let runs = 100u64;
    for master in 0..runs {
        let cfg = SynthConfig {
            weeks: 80,
            zips: 32,
            ili_series: 3,
            rho: 0.0,
            county_mixing: 1.0,
            bias_slope: 0.0,
            baseline_per_1000: 0.05,
            seed: derive_seed(master, 1),
            ..SynthConfig::default()
        };
        let (panel, _) = generate(&cfg).map_err(|e| e.to_string())?;
        let g = assign_quartiles(&panel).map_err(|e| e.to_string())?;
        let res = permutation_test(&panel, &g, &v, 1, scheme, &settings, 200, derive_seed(master, 3), ObservedStat::Spread)
            .map_err(|e| e.to_string())?;
        if res.p_value < 0.05 {
            hits += 1;
        }
    }
    let frac = hits as f64 / runs as f64;
    let took = start.elapsed();
    check(
        (0.01..=0.12).contains(&frac) && took < Duration::from_secs(30 * 60),
        format!("fraction p < 0.05 = {frac:.2} over {runs} exchangeable panels, R = 200, {took:.0?}"),
    )
}

fn synthetic_skill() -> Outcome {
    let start = Instant::now();
    let settings = EvalSettings::default();
    let v = Variant::all().last().unwrap().clone();
    let scheme = SplitScheme::holdout(0.8).unwrap();
    let (mut wins, mut cells) = (0, 0);
    for seed in 0..20u64 {
        let (panel, _) = generate(&SynthConfig { seed, ..SynthConfig::default() }).map_err(|e| e.to_string())?;
        let g = assign_quartiles(&panel).map_err(|e| e.to_string())?;
        let ev = Evaluator::new(&panel, &v, 1, scheme, &settings).map_err(|e| e.to_string())?;
        for q in 1..=4 {
            let resp = group_response(&panel, &g, q).map_err(|e| e.to_string())?;
            let rep = ev
                .evaluate_counts(&resp.counts, resp.population, GroupLabel::Quartile(q))
                .map_err(|e| e.to_string())?;
            let y: Vec<f64> = resp.counts.iter().map(|&c| c as f64).collect();
            let naive = naive_baseline(&y, 1).map_err(|e| e.to_string())?;
            let first = panel.first_week();
            let e: Vec<f64> = rep.test_weeks.iter().map(|&w| y[w - first] - naive[w - first].unwrap()).collect();
            let lvcf = ormse(&e, resp.population, PER_MILLION).map_err(|e| e.to_string())?;
            cells += 1;
            if rep.ormse_per_million < lvcf {
                wins += 1;
            }
        }
    }
    let took = start.elapsed();
    check(
        wins as f64 >= 0.9 * cells as f64 && took < Duration::from_secs(15 * 60),
        format!("model beats last value carried forward in {wins}/{cells} cells (holdout 0.8), {took:.0?}"),
    )
}

fn bias_reproduction() -> Outcome {
    let start = Instant::now();
    let settings = quick_settings(4, 8);
    let v: Variant = "ili".parse().unwrap();
    let scheme = SplitScheme::holdout(0.8).unwrap();
    let base = SynthConfig {
        weeks: 156,
        zips: 160,
        counties: 4,
        county_mixing: 0.0,
        rho: 1.0,
        shock_sd: 0.5,
        shock_ar: 0.3,
        sigma: 0.05,
        baseline_per_1000: 0.05,
        min_population: 20_000,
        max_population: 60_000,
        ..SynthConfig::default()
    };
    let mut summary = Vec::new();
    let mut rates = Vec::new();
    for b in [10.0, 0.0] {
        let (mut higher, mut flagged) = (0, 0);
        for seed in 0..20u64 {
            let cfg = SynthConfig { bias_slope: b, seed, ..base.clone() };
            let (panel, _) = generate(&cfg).map_err(|e| e.to_string())?;
            let g = assign_quartiles(&panel).map_err(|e| e.to_string())?;
            let res = permutation_test(&panel, &g, &v, 1, scheme, &settings, 500, derive_seed(seed, 3), ObservedStat::Literal)
                .map_err(|e| e.to_string())?;
            if res.group_ormse[3] > res.group_ormse[0] {
                higher += 1;
            }
            if res.p_value >= 0.95 {
                flagged += 1;
            }
        }
        summary.push(format!("b={b}: Q4 > Q1 in {higher}/20, flagged in {flagged}/20"));
        rates.push((higher, flagged));
    }
    let took = start.elapsed();
    let ok = rates[0].0 >= 18 && rates[0].1 >= 16 && rates[1].1 <= 4 && took < Duration::from_secs(45 * 60);
    check(ok, format!("{}; R = 500, {took:.0?}", summary.join("; ")))
}

fn synchrony_machinery() -> Outcome {
    // Correlations against the direct formula.
    let cfg = SynthConfig { weeks: 52, zips: 20, seed: 8, ..SynthConfig::default() };
    let (panel, _) = generate(&cfg).map_err(|e| e.to_string())?;
    let g = assign_quartiles(&panel).map_err(|e| e.to_string())?;
    let s = pairwise_synchrony(&panel, &g).map_err(|e| e.to_string())?;
    let series = |z: &str| -> Vec<f64> {
        let rec = panel.zips().iter().find(|r| r.zip == z).unwrap();
        rec.weekly_hosp.iter().map(|&c| c as f64).collect()
    };
    let mut worst_r = 0.0f64;
    let mut pairs = 0;
    for gc in &s.per_group_correlations {
        for pc in &gc.pairs {
            worst_r = worst_r.max((pc.r - pearson_oracle(&series(&pc.zip_a), &series(&pc.zip_b))).abs());
            pairs += 1;
        }
    }

    // PCA reconstruction.
    let mut r = rng(909);
    let m = DMatrix::from_fn(40, 9, |_, j| r.random_range(0.0..10.0) * (j + 1) as f64);
    let res = pca(&m).map_err(|e| e.to_string())?;
    let centered = DMatrix::from_fn(40, 9, |i, j| m[(i, j)] - m.column(j).mean());
    let recon = (res.reconstruct_centered() - centered).abs().max();

    // Randomization under exchangeable zips.
    let runs = 100u64;
    let mut hits = 0;
    for k in 0..runs {
        let mut r = rng(derive_seed(k, 4));
        let zips: Vec<ZipRecord> = (0..24)
            .map(|i| {
                let mean = r.random_range(5.0..30.0);
                let d = Poisson::new(mean).unwrap();
                let counts = (0..52).map(|_| d.sample(&mut r) as u64).collect();
                zip(i, 10_000, r.random_range(0.0..40.0), 12.0, counts)
            })
            .collect();
        let panel = WeeklyPanel::new(weeks(52), vec![], zips).map_err(|e| e.to_string())?;
        let g = assign_quartiles(&panel).map_err(|e| e.to_string())?;
        let rr = synchrony_randomization(&panel, &g, 200, derive_seed(k, 5)).map_err(|e| e.to_string())?;
        if rr.p_mean < 0.05 {
            hits += 1;
        }
    }
    let frac = hits as f64 / runs as f64;
    check(
        worst_r <= 1e-12 && recon <= 1e-8 && (0.01..=0.12).contains(&frac),
        format!("{pairs} pairs within {worst_r:.1e}, PCA reconstruction error {recon:.1e}, fraction p < 0.05 = {frac:.2}"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let base = RunConfig::from_json(
        r#"{
            "seed": 77,
            "synth": {"weeks": 60, "zips": 16},
            "variants": ["ili", "ili+ed+trend"],
            "schemes": ["holdout:0.6"],
            "cv": {"fold_count": 4, "lambda_count": 8, "lambda_min_ratio": 0.01},
            "permutation": {"repeats": 6},
            "synchrony": {"repeats": 100},
            "residual_resamples": 500
        }"#,
    )
    .map_err(|e| e.to_string())?;
    let mut manifests = Vec::new();
    for (jobs, name) in [(1, "a"), (8, "b")] {
        let mut cfg = base.clone();
        cfg.jobs = Some(jobs);
        cfg.output_dir = Some(dir.path().join(name));
        manifests.push(run(&cfg, Stage::All).map_err(|e| e.to_string())?.manifest);
    }
    let (a, b) = (&manifests[0], &manifests[1]);
    let mut mismatched = Vec::new();
    for (fa, fb) in a.files.iter().zip(&b.files) {
        let ha = sha256_file(&dir.path().join("a").join(&fa.path)).map_err(|e| e.to_string())?;
        let hb = sha256_file(&dir.path().join("b").join(&fb.path)).map_err(|e| e.to_string())?;
        if fa.path != fb.path || ha != hb || ha != fa.sha256 {
            mismatched.push(fa.path.clone());
        }
    }
    let ma = std::fs::read(dir.path().join("a/manifest.json")).map_err(|e| e.to_string())?;
    let mb = std::fs::read(dir.path().join("b/manifest.json")).map_err(|e| e.to_string())?;
    check(
        a.files.len() == b.files.len() && mismatched.is_empty() && ma == mb,
        format!("{} files, {} mismatched, manifests equal: {}", a.files.len(), mismatched.len(), ma == mb),
    )
}

fn burden_oracle() -> Outcome {
    let mut r = rng(1313);
    let mut worst = 0.0f64;
    let mut labels_ok = true;
    for _ in 0..10 {
        let n = r.random_range(12..80);
        let zips: Vec<ZipRecord> = (0..n)
            .map(|i| {
                let pov: f64 = r.random_range(2.0..45.0);
                let old: f64 = r.random_range(5.0..25.0);
                let rate = 3.0 + 0.2 * old + 0.1 * pov + 0.01 * old * pov + r.random_range(-2.0..2.0);
                let pop = r.random_range(5_000..50_000u64);
                let count = (rate.max(0.0) * pop as f64 / 1000.0).round() as u64;
                zip(i, pop, pov, old, vec![count])
            })
            .collect();
        let reg = burden_regression(&zips).map_err(|e| e.to_string())?;
        let x: Vec<[f64; 4]> = zips.iter().map(|z| [1.0, z.over65_pct, z.poverty_pct, z.over65_pct * z.poverty_pct]).collect();
        let y: Vec<f64> = zips.iter().map(|z| 1000.0 * z.weekly_hosp[0] as f64 / z.population as f64).collect();
        let mut xtx = vec![vec![0.0; 4]; 4];
        let mut xty = vec![0.0; 4];
        for (row, &yi) in x.iter().zip(&y) {
            for i in 0..4 {
                xty[i] += row[i] * yi;
                for j in 0..4 {
                    xtx[i][j] += row[i] * row[j];
                }
            }
        }
        let oracle = solve(xtx, xty);
        for (c, o) in reg.coefficients.iter().zip(&oracle) {
            worst = worst.max((c.estimate - o).abs() / o.abs().max(1.0));
        }
        labels_ok &= reg.coefficients.iter().map(|c| c.label.as_str()).eq(BURDEN_LABELS);
    }
    check(
        worst <= 1e-10 && labels_ok,
        format!("max coefficient difference {worst:.1e}; rows {:?}", BURDEN_LABELS),
    )
}

/// Writes to the stderr handle directly so the lines survive test output capture.
fn report(line: std::fmt::Arguments) {
    use std::io::Write;
    let _ = writeln!(std::io::stderr(), "{line}");
}

#[test]
fn acceptance_criteria() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("solver matches grid and IRLS oracles", solver_vs_oracles),
        ("likelihood gradients match finite differences", gradient_check),
        ("spline basis properties and recursion oracle", spline_properties),
        ("full shrinkage and monotone L1 paths", shrinkage_and_paths),
        ("predictor counts 15/18/33/51", predictor_counts),
        ("no look-ahead in design rows", leakage),
        ("ORMSE arithmetic", ormse_arithmetic),
        ("permutation test calibration", permutation_calibration),
        ("synthetic skill over last value carried forward", synthetic_skill),
        ("poverty bias reproduction", bias_reproduction),
        ("synchrony machinery", synchrony_machinery),
        ("determinism across job counts", determinism),
        ("burden regression", burden_oracle),
    ];
    // FLUGAP_ACCEPT=1,4,9 runs a subset.
    let only: Option<Vec<usize>> = std::env::var("FLUGAP_ACCEPT")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            report(format_args!("SKIP {:>2} {name}", i + 1));
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        report(format_args!("{tag} {:>2} {name}: {detail} [{:.1?}]", i + 1, t.elapsed()));
        if outcome.is_err() {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
