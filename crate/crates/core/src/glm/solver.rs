//! Proximal-Newton solver: an outer reweighting loop around coordinate
//! descent on the penalized quadratic model, with a backtracking step on
//! the true objective.

use nalgebra::DMatrix;

use super::{linear_predictor, nll_term, Family, ModelFit, TrainMeta};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Converged when no coefficient moves more than this in one step.
    pub tol: f64,
    /// Cap on coordinate sweeps, summed over all outer iterations.
    pub max_passes: usize,
    /// Poisson linear predictor bound used while reweighting.
    pub eta_clip: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: 1e-7,
            max_passes: 10_000,
            eta_clip: 30.0,
        }
    }
}

/// Intercept of the coefficient-free model.
pub fn null_intercept(family: Family, y: &[f64], eta_clip: f64) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len().max(1) as f64;
    match family {
        Family::Gaussian => mean,
        Family::Poisson if mean > 0.0 => mean.ln(),
        Family::Poisson => -eta_clip,
    }
}

/// Smallest penalty at which every coefficient is zero:
/// `max_j |Σ_i x_ij (y_i − μ0)|` with `μ0` the mean response.
pub fn lambda_max(x: &DMatrix<f64>, y: &[f64], family: Family) -> f64 {
    let _ = family;
    if y.is_empty() {
        return 0.0;
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let r: Vec<f64> = y.iter().map(|v| v - mean).collect();
    (0..x.ncols())
        .map(|j| x.column(j).iter().zip(&r).map(|(a, b)| a * b).sum::<f64>().abs())
        .fold(0.0, f64::max)
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

struct Problem<'a> {
    y: &'a [f64],
    family: Family,
    lambda: f64,
}

impl Problem<'_> {
    fn objective(&self, eta: &[f64], coef: &[f64]) -> f64 {
        let l: f64 = self.y.iter().zip(eta).map(|(&y, &e)| nll_term(self.family, y, e)).sum();
        l + self.lambda * coef.iter().map(|b| b.abs()).sum::<f64>()
    }
}

/// Penalized weighted least-squares model around the current iterate.
/// `r` holds `w·(z − η)` for the working response `z`.
struct Quadratic<'a> {
    x: &'a DMatrix<f64>,
    lambda: f64,
    w: Vec<f64>,
    r: Vec<f64>,
    v: Vec<f64>,
    sw: f64,
}

impl Quadratic<'_> {
    fn column(&self, j: usize) -> &[f64] {
        let n = self.x.nrows();
        &self.x.as_slice()[j * n..(j + 1) * n]
    }

    fn refresh(&mut self) {
        self.sw = self.w.iter().sum();
        for j in 0..self.v.len() {
            let v = self.column(j).iter().zip(&self.w).map(|(x, w)| w * x * x).sum();
            self.v[j] = v;
        }
    }

    /// One coordinate-descent sweep followed by an intercept update; returns
    /// the largest coefficient change.
    fn sweep(&mut self, only_active: bool, b: &mut [f64], a: &mut f64) -> f64 {
        let n = self.x.nrows();
        let data = self.x.as_slice();
        let mut max_change = 0.0f64;
        for j in 0..b.len() {
            let vj = self.v[j];
            if vj <= 0.0 || (only_active && b[j] == 0.0) {
                continue;
            }
            let col = &data[j * n..(j + 1) * n];
            let old = b[j];
            let g: f64 = col.iter().zip(&self.r).map(|(x, r)| x * r).sum::<f64>() + vj * old;
            let new = soft_threshold(g, self.lambda) / vj;
            if new != old {
                let d = new - old;
                for ((ri, wi), xi) in self.r.iter_mut().zip(&self.w).zip(col) {
                    *ri -= wi * xi * d;
                }
                b[j] = new;
                max_change = max_change.max(d.abs());
            }
        }
        if self.sw > 0.0 {
            let d = self.r.iter().sum::<f64>() / self.sw;
            if d != 0.0 {
                for (ri, wi) in self.r.iter_mut().zip(&self.w) {
                    *ri -= wi * d;
                }
                *a += d;
                max_change = max_change.max(d.abs());
            }
        }
        max_change
    }

    /// Minimizes the model over the intercept and the current nonzero
    /// coefficients with their signs held fixed. The step stops where the
    /// first coefficient reaches zero and is skipped unless it lowers the
    /// model objective.
    fn newton(&mut self, b: &mut [f64], a: &mut f64) {
        let active: Vec<usize> = (0..b.len()).filter(|&j| b[j] != 0.0).collect();
        let k = active.len() + 1;
        let n = self.x.nrows();
        if active.is_empty() || self.sw <= 0.0 {
            return;
        }
        let cols: Vec<&[f64]> = active.iter().map(|&j| self.column(j)).collect();
        let mut h = DMatrix::<f64>::zeros(k, k);
        let mut g = nalgebra::DVector::<f64>::zeros(k);
        h[(0, 0)] = self.sw;
        g[0] = self.r.iter().sum();
        for (p, cp) in cols.iter().enumerate() {
            let mut s0 = 0.0;
            let mut gp = 0.0;
            for i in 0..n {
                s0 += self.w[i] * cp[i];
                gp += cp[i] * self.r[i];
            }
            h[(0, p + 1)] = s0;
            h[(p + 1, 0)] = s0;
            g[p + 1] = gp - self.lambda * b[active[p]].signum();
            for (q, cq) in cols.iter().enumerate().skip(p) {
                let mut s = 0.0;
                for i in 0..n {
                    s += self.w[i] * cp[i] * cq[i];
                }
                h[(p + 1, q + 1)] = s;
                h[(q + 1, p + 1)] = s;
            }
        }
        let ridge = 1e-10 * (0..k).map(|i| h[(i, i)]).sum::<f64>() / k as f64;
        for i in 0..k {
            h[(i, i)] += ridge;
        }
        let Some(chol) = h.cholesky() else {
            return;
        };
        let d = chol.solve(&g);
        if d.iter().any(|v| !v.is_finite()) {
            return;
        }
        let mut t = 1.0f64;
        let mut hit = None;
        for (p, &j) in active.iter().enumerate() {
            let nb = b[j] + d[p + 1];
            if nb.signum() != b[j].signum() || nb == 0.0 {
                let tj = -b[j] / d[p + 1];
                if tj < t {
                    t = tj;
                    hit = Some(j);
                }
            }
        }
        if t <= 0.0 {
            return;
        }
        // u_i = δa + x_i·δb, the change of the linear predictor per unit step.
        let mut u = vec![d[0]; n];
        for (p, c) in cols.iter().enumerate() {
            let dp = d[p + 1];
            for (ui, xi) in u.iter_mut().zip(c.iter()) {
                *ui += dp * xi;
            }
        }
        let ru: f64 = self.r.iter().zip(&u).map(|(r, u)| r * u).sum();
        let wuu: f64 = self.w.iter().zip(&u).map(|(w, u)| w * u * u).sum();
        let mut l1_change = 0.0;
        for (p, &j) in active.iter().enumerate() {
            let nb = if Some(j) == hit { 0.0 } else { b[j] + t * d[p + 1] };
            l1_change += nb.abs() - b[j].abs();
        }
        let delta = -t * ru + 0.5 * t * t * wuu + self.lambda * l1_change;
        if !(delta < 0.0) {
            return;
        }
        *a += t * d[0];
        for (p, &j) in active.iter().enumerate() {
            b[j] = if Some(j) == hit { 0.0 } else { b[j] + t * d[p + 1] };
        }
        for ((ri, wi), ui) in self.r.iter_mut().zip(&self.w).zip(&u) {
            *ri -= t * wi * ui;
        }
    }
}

/// Minimizes `l(β) + λ·Σ|β_j|` over (intercept, coef) on the columns of
/// `x` as given. Use [`Standardizer`] to fit on standardized columns.
pub fn fit(
    x: &DMatrix<f64>,
    y: &[f64],
    family: Family,
    lambda_pen: f64,
    warm_start: Option<&ModelFit>,
    opts: &FitOptions,
) -> Result<ModelFit> {
    let (n, p) = x.shape();
    if n != y.len() {
        return Err(Error::LengthMismatch { expected: n, got: y.len() });
    }
    if n == 0 {
        return Err(Error::DegenerateInput("no training rows".into()));
    }
    if !(lambda_pen >= 0.0 && lambda_pen.is_finite()) {
        return Err(Error::Config(format!("penalty must be finite and >= 0, got {lambda_pen}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("design matrix has non-finite entries".into()));
    }
    family.check_response(y)?;
    let prob = Problem { y, family, lambda: lambda_pen };

    let null = null_intercept(family, y, opts.eta_clip);
    let all_zero_counts = family == Family::Poisson && y.iter().all(|&v| v == 0.0);
    if lambda_pen >= lambda_max(x, y, family) || all_zero_counts {
        if all_zero_counts {
            log::warn!("all-zero poisson response; intercept clipped to {null}");
        }
        let coef = vec![0.0; p];
        let eta = vec![null; n];
        let objective = prob.objective(&eta, &coef);
        return Ok(ModelFit {
            intercept: null,
            coef,
            penalty: lambda_pen,
            family,
            train_meta: TrainMeta {
                rows: n,
                cols: p,
                objective,
                passes: 0,
                converged: true,
                eta_clipped: all_zero_counts,
            },
            objective_trace: vec![objective],
        });
    }

    let (mut a, mut b) = match warm_start {
        Some(w) if w.coef.len() == p && w.intercept.is_finite() => (w.intercept, w.coef.clone()),
        _ => (null, vec![0.0; p]),
    };
    let mut eta = linear_predictor(x, a, &b);
    let mut f = prob.objective(&eta, &b);
    if !f.is_finite() {
        a = null;
        b = vec![0.0; p];
        eta = vec![null; n];
        f = prob.objective(&eta, &b);
    }
    let mut trace = vec![f];
    let mut passes = 0usize;
    let mut converged = false;
    let mut clipped = false;

    let mut quad = Quadratic {
        x,
        lambda: lambda_pen,
        w: vec![0.0; n],
        r: vec![0.0; n],
        v: vec![0.0; p],
        sw: 0.0,
    };
    while passes < opts.max_passes {
        // Quadratic model at the current point: weights and working residuals.
        for i in 0..n {
            match family {
                Family::Poisson => {
                    let e = eta[i].clamp(-opts.eta_clip, opts.eta_clip);
                    if e != eta[i] {
                        clipped = true;
                    }
                    let mu = e.exp();
                    quad.w[i] = mu;
                    quad.r[i] = y[i] - mu;
                }
                Family::Gaussian => {
                    quad.w[i] = 1.0;
                    quad.r[i] = y[i] - eta[i];
                }
            }
        }
        quad.refresh();

        let mut a2 = a;
        let mut b2 = b.clone();
        'inner: loop {
            let change = quad.sweep(false, &mut b2, &mut a2);
            passes += 1;
            if change < opts.tol || passes >= opts.max_passes {
                break;
            }
            loop {
                quad.newton(&mut b2, &mut a2);
                let change = quad.sweep(true, &mut b2, &mut a2);
                passes += 1;
                if passes >= opts.max_passes {
                    break 'inner;
                }
                if change < opts.tol {
                    break;
                }
            }
        }

        // Backtrack along the proposed direction until the objective does not rise.
        let da = a2 - a;
        let db: Vec<f64> = b2.iter().zip(&b).map(|(n, o)| n - o).collect();
        let step_size = db.iter().fold(da.abs(), |m, d| m.max(d.abs()));
        if step_size < opts.tol {
            converged = true;
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        while t * step_size >= opts.tol * 1e-3 {
            let at = a + t * da;
            let bt: Vec<f64> = b.iter().zip(&db).map(|(o, d)| o + t * d).collect();
            let et = linear_predictor(x, at, &bt);
            let ft = prob.objective(&et, &bt);
            if ft.is_finite() && ft <= f {
                accepted = Some((at, bt, et, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((at, bt, et, ft)) = accepted else {
            // No decrease available along the step: stationary up to rounding.
            converged = true;
            break;
        };
        a = at;
        b = bt;
        eta = et;
        f = ft;
        trace.push(f);
        if t * step_size < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("lasso fit stopped after {passes} passes without converging (penalty {lambda_pen})");
    }
    if clipped {
        log::debug!("poisson linear predictor clipped to +/-{} during fit", opts.eta_clip);
    }

    Ok(ModelFit {
        intercept: a,
        coef: b,
        penalty: lambda_pen,
        family,
        train_meta: TrainMeta {
            rows: n,
            cols: p,
            objective: f,
            passes,
            converged,
            eta_clipped: clipped,
        },
        objective_trace: trace,
    })
}

/// Column centering and scaling estimated on a subset of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Sample standard deviation; zero marks a constant column.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn from_rows(x: &DMatrix<f64>, rows: &[usize]) -> Self {
        let m = rows.len() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for j in 0..x.ncols() {
            let mu = rows.iter().map(|&i| x[(i, j)]).sum::<f64>() / m;
            let ss = rows.iter().map(|&i| (x[(i, j)] - mu).powi(2)).sum::<f64>();
            let sd = if rows.len() > 1 { (ss / (m - 1.0)).sqrt() } else { 0.0 };
            mean.push(mu);
            scale.push(if sd > 1e-12 * (1.0 + mu.abs()) { sd } else { 0.0 });
        }
        Standardizer { mean, scale }
    }

    /// Standardized copy of the given rows; constant columns become zero.
    pub fn transform(&self, x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), x.ncols(), |r, j| {
            if self.scale[j] > 0.0 {
                (x[(rows[r], j)] - self.mean[j]) / self.scale[j]
            } else {
                0.0
            }
        })
    }

    /// Maps a fit on standardized columns back to the original columns.
    pub fn unscale(&self, fit: &ModelFit) -> ModelFit {
        let coef: Vec<f64> = fit
            .coef
            .iter()
            .zip(&self.scale)
            .map(|(b, s)| if *s > 0.0 { b / s } else { 0.0 })
            .collect();
        let shift: f64 = coef.iter().zip(&self.mean).map(|(b, m)| b * m).sum();
        ModelFit {
            intercept: fit.intercept - shift,
            coef,
            ..fit.clone()
        }
    }
}
