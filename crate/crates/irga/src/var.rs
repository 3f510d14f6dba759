//! Equation-by-equation TVP-VAR estimation, recursive forecasting and
//! impulse responses under a recursive (triangularized) ordering.
//!
//! Equation j regresses variable j on an intercept, P lags of every variable
//! and the contemporaneous values of the variables ordered before it; the
//! contemporaneous coefficients approximate the error covariance, so the
//! fitted system maps directly onto a lower-triangular structural form.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::{standardize_with, Dataset, Period, StandardizedRegression};
use crate::error::{Error, Result};
use crate::fit::{fit_standardized, FitConfig, RegressionFit};
use crate::parallel::{self, derive_seed, map_indexed};
use crate::rotation::{ColumnRole, PartitionMode};

/// Specification of the VAR: variable ordering (which doubles as the
/// triangularization order), lag length and partition mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarSpec {
    /// Variables in triangular order; the shock-identification order.
    pub ordering: Vec<String>,
    pub lags: usize,
    pub mode: PartitionMode,
    /// Variables reported by the evaluation (empty = all).
    pub focus_names: Vec<String>,
}

impl VarSpec {
    pub fn new(ordering: Vec<String>, lags: usize) -> Self {
        VarSpec { ordering, lags, mode: PartitionMode::TvpsOnly, focus_names: Vec::new() }
    }

    pub fn n_vars(&self) -> usize {
        self.ordering.len()
    }

    fn validate(&self, ds: &Dataset) -> Result<Vec<usize>> {
        if self.lags == 0 {
            return Err(Error::Config("lag order must be at least 1".into()));
        }
        if self.ordering.is_empty() {
            return Err(Error::Config("empty variable list".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &self.ordering {
            if !seen.insert(n) {
                return Err(Error::Config(format!("duplicate variable {n}")));
            }
        }
        self.ordering.iter().map(|n| ds.column_index(n)).collect()
    }
}

/// What a design column refers to, in terms of ordering positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColRef {
    Intercept,
    Lag { var: usize, lag: usize },
    Contemp { var: usize },
}

/// Fit of a single VAR equation plus the scale information needed to map
/// coefficients back to data units.
#[derive(Debug, Clone)]
pub struct EquationResult {
    /// Position in the ordering.
    pub equation: usize,
    pub name: String,
    pub fit: RegressionFit,
    pub scale_y: f64,
    pub scale_x: Vec<f64>,
    pub col_ref: Vec<ColRef>,
    /// Per-period total residual variance in standardized units (constant
    /// without SV).
    pub total_var_std: DVector<f64>,
}

impl EquationResult {
    pub fn k_j(&self) -> usize {
        self.col_ref.len()
    }

    /// Constant-coefficient values of one retained draw in data units,
    /// arranged for the forecast recursion. Demoted constants enter at their
    /// posterior-approximation means. `var_std` is the residual variance (in
    /// standardized units) backing the shock scale.
    pub fn draw_coefs(&self, draw: usize, n: usize, p: usize, var_std: f64) -> DrawCoefs {
        let mut out = DrawCoefs {
            intercept: 0.0,
            lags: vec![vec![0.0; n]; p],
            contemp: vec![0.0; n],
            sd: var_std.sqrt() * self.scale_y,
        };
        for (fi, &col) in self.fit.partition.focus.iter().enumerate() {
            let raw = self.fit.draws.beta[(draw, fi)] * self.scale_y / self.scale_x[col];
            out.assign(self.col_ref[col], raw);
        }
        for (ni, &col) in self.fit.partition.nuisance.iter().enumerate() {
            let raw = self.fit.ga.mu[ni] * self.scale_y / self.scale_x[col];
            out.assign(self.col_ref[col], raw);
        }
        out
    }

    /// End-of-sample total variance (standardized units).
    pub fn end_var_std(&self) -> f64 {
        self.total_var_std[self.total_var_std.len() - 1]
    }

    /// Sample-average total variance (standardized units).
    pub fn mean_var_std(&self) -> f64 {
        self.total_var_std.sum() / self.total_var_std.len() as f64
    }
}

/// Per-draw constant coefficients of one equation in data units.
#[derive(Debug, Clone)]
pub struct DrawCoefs {
    pub intercept: f64,
    /// `lags[l-1][i]`: coefficient on variable i at lag l.
    pub lags: Vec<Vec<f64>>,
    /// `contemp[i]`: coefficient on the contemporaneous value of variable i.
    pub contemp: Vec<f64>,
    /// Shock standard deviation in data units.
    pub sd: f64,
}

impl DrawCoefs {
    fn assign(&mut self, r: ColRef, value: f64) {
        match r {
            ColRef::Intercept => self.intercept = value,
            ColRef::Lag { var, lag } => self.lags[lag - 1][var] = value,
            ColRef::Contemp { var } => self.contemp[var] = value,
        }
    }
}

/// Full VAR fit.
#[derive(Debug, Clone)]
pub struct VarFit {
    pub spec: VarSpec,
    pub equations: Vec<EquationResult>,
    /// Rows used after losing `lags` rows to the lag construction.
    pub t_used: usize,
}

impl VarFit {
    pub fn n_vars(&self) -> usize {
        self.spec.n_vars()
    }
}

/// Build equation j's response, design, partition layout and column
/// references. Lag blocks iterate variables in dataset order, so equations
/// are invariant to permutations of later-ordered variables.
fn build_equation_design(
    ds: &Dataset,
    data_cols: &[usize],
    spec: &VarSpec,
    j: usize,
) -> Result<(DVector<f64>, DMatrix<f64>, Vec<ColumnRole>, Vec<ColRef>)> {
    let p = spec.lags;
    let t_total = ds.n_periods();
    if t_total <= p + 1 {
        return Err(Error::Data(format!("need more than {} rows for {} lags", p + 1, p)));
    }
    let rows = t_total - p;
    let n = spec.n_vars();

    // ordering positions sorted by dataset column, for a stable lag layout
    let mut by_data_col: Vec<usize> = (0..n).collect();
    by_data_col.sort_by_key(|&i| data_cols[i]);

    let own_col = data_cols[j];
    let k_j = 1 + n * p + j;
    let mut x = DMatrix::zeros(rows, k_j);
    let mut layout = Vec::with_capacity(k_j);
    let mut col_ref = Vec::with_capacity(k_j);

    for r in 0..rows {
        x[(r, 0)] = 1.0;
    }
    layout.push(ColumnRole::Intercept);
    col_ref.push(ColRef::Intercept);

    let mut c = 1;
    for lag in 1..=p {
        for &i in &by_data_col {
            let col = data_cols[i];
            for r in 0..rows {
                x[(r, c)] = ds.values[(r + p - lag, col)];
            }
            layout.push(if col == own_col {
                ColumnRole::OwnLag { lag }
            } else {
                ColumnRole::CrossLag { var: i, lag }
            });
            col_ref.push(ColRef::Lag { var: i, lag });
            c += 1;
        }
    }
    for i in 0..j {
        let col = data_cols[i];
        for r in 0..rows {
            x[(r, c)] = ds.values[(r + p, col)];
        }
        layout.push(ColumnRole::Contemporaneous { var: i });
        col_ref.push(ColRef::Contemp { var: i });
        c += 1;
    }
    debug_assert_eq!(c, k_j);

    let y = DVector::from_fn(rows, |r, _| ds.values[(r + p, own_col)]);
    Ok((y, x, layout, col_ref))
}

fn fit_equation(
    ds: &Dataset,
    data_cols: &[usize],
    spec: &VarSpec,
    cfg: &FitConfig,
    j: usize,
    seed: u64,
) -> Result<EquationResult> {
    let (y, x, layout, col_ref) = build_equation_design(ds, data_cols, spec, j)?;
    let sr: StandardizedRegression = standardize_with(&y, &x, &[0])?;
    let eq_seed = derive_seed(seed, parallel::stream::EQUATION, data_cols[j] as u64);
    let cfg = FitConfig { mode: spec.mode, ..cfg.clone() };
    let fit = fit_standardized(&sr, &layout, &cfg, eq_seed)?;
    let rows = sr.t_len();
    let total_var_std = match &fit.ga.total_var {
        Some(tv) => tv.clone(),
        None => DVector::from_element(rows, fit.ga.sigma_eps_sq),
    };
    Ok(EquationResult {
        equation: j,
        name: spec.ordering[j].clone(),
        fit,
        scale_y: sr.scale_y,
        scale_x: sr.scale_x,
        col_ref,
        total_var_std,
    })
}

/// Estimate the VAR equation by equation. Equations run on the worker pool
/// with seeds derived from each equation's variable, so results are
/// identical under any scheduling.
pub fn estimate_var(ds: &Dataset, spec: &VarSpec, cfg: &FitConfig, seed: u64) -> Result<VarFit> {
    let data_cols = spec.validate(ds)?;
    let n = spec.n_vars();
    let fits: Vec<Result<EquationResult>> =
        map_indexed(n, |j| fit_equation(ds, &data_cols, spec, cfg, j, seed));
    let equations: Vec<EquationResult> = fits.into_iter().collect::<Result<_>>()?;
    Ok(VarFit { spec: spec.clone(), equations, t_used: ds.n_periods() - spec.lags })
}

/// Sequential reference path for [`estimate_var`].
pub fn estimate_var_seq(ds: &Dataset, spec: &VarSpec, cfg: &FitConfig, seed: u64) -> Result<VarFit> {
    let data_cols = spec.validate(ds)?;
    let equations: Vec<EquationResult> = (0..spec.n_vars())
        .map(|j| fit_equation(ds, &data_cols, spec, cfg, j, seed))
        .collect::<Result<_>>()?;
    Ok(VarFit { spec: spec.clone(), equations, t_used: ds.n_periods() - spec.lags })
}

/// One predictive record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub origin: Period,
    pub horizon: usize,
    pub variable: String,
    pub mean: f64,
    pub variance: f64,
    pub realized: Option<f64>,
}

/// Estimation window per forecast origin.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum Window {
    Expanding,
    Rolling(usize),
}

/// Forecast settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastConfig {
    /// Row indices (into the transformed dataset) of the last training
    /// observation per origin.
    pub origins: Vec<usize>,
    pub horizons: Vec<usize>,
    /// Number of retained draws used as simulation paths.
    pub draws_per_forecast: usize,
    pub window: Window,
    pub seed: u64,
}

/// Map a period range to origin row indices, leaving at least one
/// observation realized after the last origin when possible.
pub fn origins_in_range(ds: &Dataset, range: &crate::data::PeriodRange) -> Vec<usize> {
    (0..ds.n_periods().saturating_sub(1))
        .filter(|&t| range.contains(ds.time_index[t]))
        .collect()
}

fn even_indices(total: usize, wanted: usize) -> Vec<usize> {
    if total == 0 || wanted == 0 {
        return Vec::new();
    }
    if wanted >= total {
        return (0..total).collect();
    }
    (0..wanted).map(|i| i * total / wanted).collect()
}

/// Simulate predictive paths from a fitted VAR, starting after the last
/// training row. Returns (horizon, variable) means and variances over the
/// simulated ensemble, in data units.
pub fn simulate_predictive(
    vf: &VarFit,
    ds_train: &Dataset,
    max_horizon: usize,
    draws_per_forecast: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = vf.n_vars();
    let p = vf.spec.lags;
    let t_train = ds_train.n_periods();
    if t_train < p {
        return Err(Error::Data("training window shorter than the lag order".into()));
    }
    let data_cols = vf.spec.validate(ds_train)?;
    let retained = vf.equations[0].fit.draws.n_draws();
    let picks = even_indices(retained, draws_per_forecast);
    if picks.is_empty() {
        return Err(Error::Config("no retained draws to forecast from".into()));
    }

    let mut mean = DMatrix::<f64>::zeros(max_horizon, n);
    let mut m2 = DMatrix::<f64>::zeros(max_horizon, n);
    for (pi, &d) in picks.iter().enumerate() {
        let coefs: Vec<DrawCoefs> =
            vf.equations.iter().map(|eq| eq.draw_coefs(d, n, p, eq.end_var_std())).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(
            seed,
            parallel::stream::FORECAST,
            ((pi as u64) << 24) ^ d as u64,
        ));
        // history rows: oldest first, data units, ordering-indexed
        let mut hist: Vec<Vec<f64>> = (t_train - p..t_train)
            .map(|t| (0..n).map(|i| ds_train.values[(t, data_cols[i])]).collect())
            .collect();
        for h in 0..max_horizon {
            let mut current = vec![0.0; n];
            for j in 0..n {
                let c = &coefs[j];
                let mut acc = c.intercept;
                for lag in 1..=p {
                    let row = &hist[hist.len() - lag];
                    for i in 0..n {
                        acc += c.lags[lag - 1][i] * row[i];
                    }
                }
                for i in 0..j {
                    acc += c.contemp[i] * current[i];
                }
                acc += c.sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
                current[j] = acc;
            }
            for i in 0..n {
                mean[(h, i)] += current[i];
                m2[(h, i)] += current[i] * current[i];
            }
            hist.push(current);
        }
    }
    let np = picks.len() as f64;
    let mut var = DMatrix::<f64>::zeros(max_horizon, n);
    for h in 0..max_horizon {
        for i in 0..n {
            mean[(h, i)] /= np;
            var[(h, i)] = (m2[(h, i)] / np - mean[(h, i)] * mean[(h, i)]).max(0.0);
        }
    }
    Ok((mean, var))
}

/// Recursive out-of-sample forecast: re-estimate at every origin, simulate
/// the predictive density and record realized values where available.
pub fn forecast(
    ds: &Dataset,
    spec: &VarSpec,
    fit_cfg: &FitConfig,
    cfg: &ForecastConfig,
) -> Result<Vec<ForecastRecord>> {
    if cfg.horizons.is_empty() {
        return Err(Error::Config("no forecast horizons".into()));
    }
    let max_h = *cfg.horizons.iter().max().unwrap();
    let t_total = ds.n_periods();
    for &o in &cfg.origins {
        if o + 1 < spec.lags + 2 || o >= t_total {
            return Err(Error::Config(format!("origin row {o} outside the usable sample")));
        }
    }
    let data_cols = spec.validate(ds)?;

    let per_origin: Vec<Result<Vec<ForecastRecord>>> = map_indexed(cfg.origins.len(), |oi| {
        let t0 = cfg.origins[oi];
        let start = match cfg.window {
            Window::Expanding => 0,
            Window::Rolling(w) => (t0 + 1).saturating_sub(w),
        };
        let train = ds.slice_rows(start, t0 + 1);
        let origin_seed = derive_seed(cfg.seed, parallel::stream::ORIGIN, t0 as u64);
        let vf = estimate_var_seq(&train, spec, fit_cfg, origin_seed)?;
        let (mean, var) =
            simulate_predictive(&vf, &train, max_h, cfg.draws_per_forecast, origin_seed)?;
        let mut recs = Vec::new();
        for &h in &cfg.horizons {
            for i in 0..spec.n_vars() {
                let realized = (t0 + h < t_total).then(|| ds.values[(t0 + h, data_cols[i])]);
                recs.push(ForecastRecord {
                    origin: ds.time_index[t0],
                    horizon: h,
                    variable: spec.ordering[i].clone(),
                    mean: mean[(h - 1, i)],
                    variance: var[(h - 1, i)],
                    realized,
                });
            }
        }
        Ok(recs)
    });
    let mut out = Vec::new();
    for r in per_origin {
        out.extend(r?);
    }
    Ok(out)
}

/// Gaussian log predictive score.
pub fn gaussian_lps(mean: f64, variance: f64, realized: f64) -> f64 {
    let v = variance.max(1e-12);
    -0.5 * (2.0 * std::f64::consts::PI * v).ln() - (realized - mean).powi(2) / (2.0 * v)
}

/// Per-variable, per-horizon forecast metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub variable: String,
    pub horizon: usize,
    pub n: usize,
    pub rmse: f64,
    pub avg_lps: f64,
    /// RMSE ratio against a baseline run (this / baseline).
    pub rmse_ratio: Option<f64>,
    /// Average LPS difference against a baseline run (this - baseline).
    pub lps_diff: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
}

/// Aggregate forecast records into RMSE and average LPS per variable and
/// horizon, optionally against a baseline on the same records.
pub fn evaluate(
    records: &[ForecastRecord],
    baseline: Option<&[ForecastRecord]>,
) -> Result<MetricsReport> {
    let realized: Vec<&ForecastRecord> =
        records.iter().filter(|r| r.realized.is_some()).collect();
    if realized.is_empty() {
        return Err(Error::Data("no realized values to evaluate against".into()));
    }
    let mut keys: Vec<(String, usize)> = realized
        .iter()
        .map(|r| (r.variable.clone(), r.horizon))
        .collect();
    keys.sort();
    keys.dedup();

    let summarize = |recs: &[&ForecastRecord], key: &(String, usize)| -> Option<(usize, f64, f64)> {
        let sel: Vec<&&ForecastRecord> = recs
            .iter()
            .filter(|r| r.variable == key.0 && r.horizon == key.1)
            .collect();
        if sel.is_empty() {
            return None;
        }
        let n = sel.len();
        let mse = sel
            .iter()
            .map(|r| (r.mean - r.realized.unwrap()).powi(2))
            .sum::<f64>()
            / n as f64;
        let lps = sel
            .iter()
            .map(|r| gaussian_lps(r.mean, r.variance, r.realized.unwrap()))
            .sum::<f64>()
            / n as f64;
        Some((n, mse.sqrt(), lps))
    };

    let base_realized: Option<Vec<&ForecastRecord>> =
        baseline.map(|b| b.iter().filter(|r| r.realized.is_some()).collect());

    let mut rows = Vec::new();
    for key in &keys {
        let (n, rmse, avg_lps) = summarize(&realized, key).unwrap();
        let (rmse_ratio, lps_diff) = match &base_realized {
            Some(b) => match summarize(b, key) {
                Some((_, brmse, blps)) => {
                    (if brmse > 0.0 { Some(rmse / brmse) } else { None }, Some(avg_lps - blps))
                }
                None => (None, None),
            },
            None => (None, None),
        };
        rows.push(MetricRow {
            variable: key.0.clone(),
            horizon: key.1,
            n,
            rmse,
            avg_lps,
            rmse_ratio,
            lps_diff,
        });
    }
    Ok(MetricsReport { rows })
}

/// Pointwise impulse-response summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IrfPoint {
    pub horizon: usize,
    pub variable: String,
    pub median: f64,
    pub q16: f64,
    pub q84: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IrfResult {
    pub shock: String,
    pub points: Vec<IrfPoint>,
    pub draws_used: usize,
    /// Draws whose companion matrix has spectral radius above one; they are
    /// flagged but retained in the quantiles.
    pub explosive_draws: usize,
}

/// Response paths of all variables to a one-standard-deviation shock,
/// propagated through the constant coefficients of one draw.
/// Returns an (horizons+1) x N matrix with horizon 0 in the first row.
pub fn irf_single(coefs: &[DrawCoefs], shock: usize, horizons: usize) -> Result<DMatrix<f64>> {
    let n = coefs.len();
    let p = coefs[0].lags.len();
    // structural contemporaneous matrix and impact column
    let mut i_minus_c = DMatrix::identity(n, n);
    for (j, c) in coefs.iter().enumerate() {
        for i in 0..j {
            i_minus_c[(j, i)] = -c.contemp[i];
        }
    }
    let mut impact = DVector::zeros(n);
    impact[shock] = coefs[shock].sd;
    let impact = solve_lower_tri(&i_minus_c, &impact);

    // reduced-form lag matrices A_l = (I - C)^{-1} B_l
    let mut a_mats = Vec::with_capacity(p);
    for l in 1..=p {
        let mut b = DMatrix::zeros(n, n);
        for (j, c) in coefs.iter().enumerate() {
            for i in 0..n {
                b[(j, i)] = c.lags[l - 1][i];
            }
        }
        let mut a = DMatrix::zeros(n, n);
        for col in 0..n {
            let s = solve_lower_tri(&i_minus_c, &b.column(col).into_owned());
            a.set_column(col, &s);
        }
        a_mats.push(a);
    }

    let mut resp = DMatrix::zeros(horizons + 1, n);
    resp.row_mut(0).copy_from(&impact.transpose());
    let mut history: Vec<DVector<f64>> = vec![impact];
    for h in 1..=horizons {
        let mut r = DVector::zeros(n);
        for l in 1..=p.min(h) {
            r += &a_mats[l - 1] * &history[h - l];
        }
        resp.row_mut(h).copy_from(&r.transpose());
        history.push(r);
    }
    Ok(resp)
}

fn solve_lower_tri(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let mut acc = x[i];
        for j in 0..i {
            acc -= l[(i, j)] * x[j];
        }
        x[i] = acc / l[(i, i)];
    }
    x
}

fn companion_radius(coefs: &[DrawCoefs]) -> f64 {
    let n = coefs.len();
    let p = coefs[0].lags.len();
    let mut i_minus_c = DMatrix::identity(n, n);
    for (j, c) in coefs.iter().enumerate() {
        for i in 0..j {
            i_minus_c[(j, i)] = -c.contemp[i];
        }
    }
    let mut comp = DMatrix::zeros(n * p, n * p);
    for l in 1..=p {
        let mut b = DMatrix::zeros(n, n);
        for (j, c) in coefs.iter().enumerate() {
            for i in 0..n {
                b[(j, i)] = c.lags[l - 1][i];
            }
        }
        for col in 0..n {
            let s = solve_lower_tri(&i_minus_c, &b.column(col).into_owned());
            for row in 0..n {
                comp[(row, (l - 1) * n + col)] = s[row];
            }
        }
    }
    for i in 0..n * (p - 1) {
        comp[(n + i, i)] = 1.0;
    }
    comp.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max)
}

/// Posterior impulse responses to a one-standard-deviation shock in the
/// named variable, using constant coefficients only. Residual scales come
/// from the sample-average total variance of each equation.
pub fn impulse_response(
    vf: &VarFit,
    shock: &str,
    horizons: usize,
    max_draws: usize,
) -> Result<IrfResult> {
    let n = vf.n_vars();
    let p = vf.spec.lags;
    let shock_idx = vf
        .spec
        .ordering
        .iter()
        .position(|v| v == shock)
        .ok_or_else(|| Error::Config(format!("shock variable {shock:?} not in the system")))?;
    let retained = vf.equations[0].fit.draws.n_draws();
    let picks = even_indices(retained, max_draws.max(1));
    if picks.is_empty() {
        return Err(Error::Config("no retained draws".into()));
    }

    let mut explosive = 0usize;
    // responses[(h, var)] across draws
    let mut samples = vec![vec![Vec::with_capacity(picks.len()); n]; horizons + 1];
    for &d in &picks {
        let coefs: Vec<DrawCoefs> =
            vf.equations.iter().map(|eq| eq.draw_coefs(d, n, p, eq.mean_var_std())).collect();
        if companion_radius(&coefs) > 1.0 + 1e-8 {
            explosive += 1;
        }
        let resp = irf_single(&coefs, shock_idx, horizons)?;
        for h in 0..=horizons {
            for i in 0..n {
                samples[h][i].push(resp[(h, i)]);
            }
        }
    }

    let mut points = Vec::new();
    for (h, by_var) in samples.iter_mut().enumerate() {
        for (i, vals) in by_var.iter_mut().enumerate() {
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            points.push(IrfPoint {
                horizon: h,
                variable: vf.spec.ordering[i].clone(),
                median: quantile(vals, 0.5),
                q16: quantile(vals, 0.16),
                q84: quantile(vals, 0.84),
            });
        }
    }
    Ok(IrfResult { shock: shock.to_string(), points, draws_used: picks.len(), explosive_draws: explosive })
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::PosteriorDraws;
    use crate::rotation::Partition;
    use crate::vamp::GaussianApprox;
    use approx::assert_relative_eq;

    /// Equation with fixed constant coefficients (one retained draw), unit
    /// scales and no nuisance block.
    fn fixed_equation(
        j: usize,
        name: &str,
        n: usize,
        p: usize,
        coefs: &[(ColRef, f64)],
        sigma_sq: f64,
        t_len: usize,
    ) -> EquationResult {
        let k_j = 1 + n * p + j;
        let mut col_ref = vec![ColRef::Intercept];
        for lag in 1..=p {
            for var in 0..n {
                col_ref.push(ColRef::Lag { var, lag });
            }
        }
        for var in 0..j {
            col_ref.push(ColRef::Contemp { var });
        }
        assert_eq!(col_ref.len(), k_j);
        let mut beta = nalgebra::DMatrix::zeros(1, k_j);
        for (r, v) in coefs {
            let pos = col_ref.iter().position(|c| c == r).expect("column present");
            beta[(0, pos)] = *v;
        }
        EquationResult {
            equation: j,
            name: name.to_string(),
            fit: crate::fit::RegressionFit {
                ga: GaussianApprox::known(DVector::zeros(0), sigma_sq),
                draws: PosteriorDraws {
                    beta,
                    tau_sq: nalgebra::DMatrix::from_element(1, k_j, 1.0),
                    lambda: DVector::from_element(1, 1.0),
                    seed: 0,
                    burn_in: 0,
                },
                partition: Partition {
                    focus: (0..k_j).collect(),
                    nuisance: vec![],
                    mode: PartitionMode::TvpsOnly,
                },
                tvp_cols: (1..k_j).collect(),
            },
            scale_y: 1.0,
            scale_x: vec![1.0; k_j],
            col_ref,
            total_var_std: DVector::from_element(t_len, sigma_sq),
        }
    }

    fn fixed_var(n: usize, p: usize, eqs: Vec<EquationResult>, names: Vec<String>) -> VarFit {
        VarFit {
            spec: VarSpec { ordering: names, lags: p, mode: PartitionMode::TvpsOnly, focus_names: vec![] },
            equations: eqs,
            t_used: 10,
        }
    }

    #[test]
    fn irf_zero_coefficients_is_pure_impact() {
        let n = 2;
        let eq0 = fixed_equation(0, "a", n, 1, &[], 1.0, 10);
        let eq1 = fixed_equation(1, "b", n, 1, &[], 1.0, 10);
        let vf = fixed_var(n, 1, vec![eq0, eq1], vec!["a".into(), "b".into()]);
        let irf = impulse_response(&vf, "a", 4, 10).unwrap();
        for pt in &irf.points {
            let expect = if pt.horizon == 0 && pt.variable == "a" { 1.0 } else { 0.0 };
            assert_eq!(pt.median, expect, "h={} var={}", pt.horizon, pt.variable);
        }
        assert_eq!(irf.explosive_draws, 0);
    }

    #[test]
    fn irf_matches_hand_derived_bivariate_recursion() {
        // y1_t = 0.5 y1_{t-1} + e1; y2_t = 0.3 y1_t + 0.2 y2_{t-1} + e2
        let n = 2;
        let eq0 = fixed_equation(0, "a", n, 1, &[(ColRef::Lag { var: 0, lag: 1 }, 0.5)], 1.0, 10);
        let eq1 = fixed_equation(
            1,
            "b",
            n,
            1,
            &[(ColRef::Lag { var: 1, lag: 1 }, 0.2), (ColRef::Contemp { var: 0 }, 0.3)],
            1.0,
            10,
        );
        let coefs: Vec<DrawCoefs> = vec![
            eq0.draw_coefs(0, n, 1, 1.0),
            eq1.draw_coefs(0, n, 1, 1.0),
        ];
        let resp = irf_single(&coefs, 0, 3).unwrap();
        // impact: (1, 0.3); then propagate through A1 = [[0.5, 0], [0.15, 0.2]]
        let expected = [
            [1.0, 0.3],
            [0.5, 0.15 + 0.2 * 0.3],
            [0.25, 0.15 * 0.5 + 0.2 * 0.21],
            [0.125, 0.15 * 0.25 + 0.2 * 0.117],
        ];
        for h in 0..=3 {
            for v in 0..2 {
                assert_relative_eq!(resp[(h, v)], expected[h][v], epsilon = 1e-8);
            }
        }
        // h=0 equals the impact column of the reconstructed factor
        let vf = fixed_var(n, 1, vec![eq0, eq1], vec!["a".into(), "b".into()]);
        let irf = impulse_response(&vf, "a", 3, 10).unwrap();
        let at = |h: usize, name: &str| {
            irf.points
                .iter()
                .find(|p| p.horizon == h && p.variable == name)
                .map(|p| p.median)
                .unwrap()
        };
        assert_relative_eq!(at(0, "a"), 1.0, epsilon = 1e-12);
        assert_relative_eq!(at(0, "b"), 0.3, epsilon = 1e-12);
        assert_relative_eq!(at(2, "b"), 0.117, epsilon = 1e-10);
    }

    #[test]
    fn deterministic_ar1_forecast_decays_geometrically() {
        let n = 1;
        let eq = fixed_equation(0, "a", n, 1, &[(ColRef::Lag { var: 0, lag: 1 }, 0.5)], 0.0, 10);
        let vf = fixed_var(n, 1, vec![eq], vec!["a".into()]);
        let ds = Dataset {
            names: vec!["a".into()],
            values: nalgebra::DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]),
            time_index: (1..=3).map(|m| Period::new(2000, m).unwrap()).collect(),
            transform_codes: vec![1],
        };
        let (mean, var) = simulate_predictive(&vf, &ds, 4, 5, 7).unwrap();
        for h in 0..4 {
            assert_relative_eq!(mean[(h, 0)], 0.5f64.powi(h as i32 + 1), epsilon = 1e-12);
            assert!(var[(h, 0)] < 1e-20);
        }
    }

    #[test]
    fn zero_coefficient_forecast_has_unit_variance_paths() {
        let n = 1;
        let eq = fixed_equation(0, "a", n, 1, &[], 1.0, 10);
        let vf = fixed_var(n, 1, vec![eq], vec!["a".into()]);
        let ds = Dataset {
            names: vec!["a".into()],
            values: nalgebra::DMatrix::from_column_slice(2, 1, &[0.3, -0.1]),
            time_index: (1..=2).map(|m| Period::new(2000, m).unwrap()).collect(),
            transform_codes: vec![1],
        };
        // a single draw cannot carry ensemble variance, so replicate it
        let mut eqs = vf;
        let retained = 4000;
        let eq = &mut eqs.equations[0];
        let k = eq.fit.draws.k();
        eq.fit.draws.beta = nalgebra::DMatrix::zeros(retained, k);
        eq.fit.draws.tau_sq = nalgebra::DMatrix::from_element(retained, k, 1.0);
        eq.fit.draws.lambda = DVector::from_element(retained, 1.0);
        let (mean, var) = simulate_predictive(&eqs, &ds, 3, retained, 11).unwrap();
        for h in 0..3 {
            assert!(mean[(h, 0)].abs() < 0.06, "mean {}", mean[(h, 0)]);
            assert!((var[(h, 0)] - 1.0).abs() < 0.1, "variance {}", var[(h, 0)]);
        }
    }

    #[test]
    fn evaluate_trivial_cases() {
        let p = Period::new(2005, 1).unwrap();
        let rec = |mean: f64, var: f64, realized: f64| ForecastRecord {
            origin: p,
            horizon: 1,
            variable: "a".into(),
            mean,
            variance: var,
            realized: Some(realized),
        };
        // perfect forecasts
        let recs = vec![rec(1.0, 0.5, 1.0), rec(-2.0, 0.5, -2.0)];
        let m = evaluate(&recs, None).unwrap();
        assert_eq!(m.rows[0].rmse, 0.0);
        // standard normal predictive at zero
        let recs = vec![rec(0.0, 1.0, 0.0)];
        let m = evaluate(&recs, None).unwrap();
        assert_relative_eq!(m.rows[0].avg_lps, -0.9189385332046727, epsilon = 1e-10);
        // identical runs: unit ratio and zero difference
        let recs = vec![rec(0.3, 0.8, 0.5), rec(0.1, 0.9, -0.2)];
        let m = evaluate(&recs, Some(&recs)).unwrap();
        assert_relative_eq!(m.rows[0].rmse_ratio.unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(m.rows[0].lps_diff.unwrap(), 0.0, epsilon = 1e-12);
        // empty record set is an error
        assert!(evaluate(&[], None).is_err());
    }

    #[test]
    fn equation_design_counts() {
        let t_len = 30;
        let names = ["a", "b", "c"];
        let values = nalgebra::DMatrix::from_fn(t_len, 3, |r, c| ((r * 3 + c) as f64 * 0.7).sin());
        let ds = Dataset {
            names: names.iter().map(|s| s.to_string()).collect(),
            values,
            time_index: (0..t_len)
                .map(|i| Period::new(2000 + (i / 12) as i32, 1 + (i % 12) as u32).unwrap())
                .collect(),
            transform_codes: vec![1; 3],
        };
        let spec = VarSpec::new(vec!["a".into(), "b".into(), "c".into()], 2);
        let cols = spec.validate(&ds).unwrap();
        for j in 0..3 {
            let (y, x, layout, col_ref) = build_equation_design(&ds, &cols, &spec, j).unwrap();
            assert_eq!(x.ncols(), 1 + 3 * 2 + j);
            assert_eq!(y.len(), t_len - 2);
            assert_eq!(layout.len(), x.ncols());
            // the last j columns are the contemporaneous ones
            for i in 0..j {
                assert!(matches!(col_ref[x.ncols() - j + i], ColRef::Contemp { .. }));
            }
            let own = layout.iter().filter(|r| matches!(r, ColumnRole::OwnLag { .. })).count();
            assert_eq!(own, 2);
        }
    }
}
