//! Benchmark TVP regression with random-walk states, estimated by
//! forward-filter backward-sampling inside a Gibbs loop. The Kalman
//! smoother doubles as the correctness oracle for the sampler.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma};

use crate::data::StandardizedRegression;
use crate::error::{Error, Result};
use crate::gibbs::{McmcConfig, PosteriorDraws};

/// Random-walk coefficient state-space model with scalar observations:
/// `y_t = x_t' theta_t + eps`, `theta_t = theta_{t-1} + w_t`,
/// `theta_1 ~ N(0, kappa I)`.
#[derive(Debug, Clone)]
pub struct StateSpaceModel {
    /// T x K observation rows.
    pub x: DMatrix<f64>,
    /// Diagonal state innovation variances, length K.
    pub w: DVector<f64>,
    /// Observation variance.
    pub sigma_sq: f64,
    /// Initial state variance scale (kappa).
    pub kappa: f64,
}

impl StateSpaceModel {
    pub fn new(x: DMatrix<f64>, w: DVector<f64>, sigma_sq: f64, kappa: f64) -> Result<Self> {
        if w.len() != x.ncols() {
            return Err(Error::Dim("state dimension mismatch".into()));
        }
        if w.iter().any(|&v| v < 0.0) || sigma_sq <= 0.0 || kappa <= 0.0 {
            return Err(Error::Numerical("variances must be positive".into()));
        }
        Ok(StateSpaceModel { x, w, sigma_sq, kappa })
    }

    pub fn t_len(&self) -> usize {
        self.x.nrows()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }
}

struct Filtered {
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
}

fn forward_filter(m: &StateSpaceModel, y: &DVector<f64>) -> Result<Filtered> {
    let t_len = m.t_len();
    let k = m.k();
    if y.len() != t_len {
        return Err(Error::Dim("response length mismatch".into()));
    }
    let mut means = Vec::with_capacity(t_len);
    let mut covs = Vec::with_capacity(t_len);
    let mut mean = DVector::zeros(k);
    let mut cov = DMatrix::from_diagonal(&DVector::from_element(k, m.kappa));
    for t in 0..t_len {
        if t > 0 {
            for j in 0..k {
                cov[(j, j)] += m.w[j];
            }
        }
        let xt = m.x.row(t).transpose();
        let px = &cov * &xt;
        let s = (xt.dot(&px) + m.sigma_sq).max(1e-300);
        let innov = y[t] - xt.dot(&mean);
        mean += &px * (innov / s);
        // rank-1 downdate keeps the covariance symmetric
        cov.ger(-1.0 / s, &px, &px, 1.0);
        means.push(mean.clone());
        covs.push(cov.clone());
    }
    Ok(Filtered { means, covs })
}

/// Exact marginal smoothed moments per period (RTS recursion).
pub fn kalman_smoother(
    m: &StateSpaceModel,
    y: &DVector<f64>,
) -> Result<(Vec<DVector<f64>>, Vec<DMatrix<f64>>)> {
    let filt = forward_filter(m, y)?;
    let t_len = m.t_len();
    let k = m.k();
    let mut means = filt.means.clone();
    let mut covs = filt.covs.clone();
    for t in (0..t_len - 1).rev() {
        // predictive cov at t+1 given t
        let mut pred = filt.covs[t].clone();
        for j in 0..k {
            pred[(j, j)] += m.w[j];
        }
        let chol = psd_cholesky(&pred)?;
        // J = P_t pred^{-1}
        let j_t = chol.solve(&filt.covs[t].transpose()).transpose();
        let mean_diff = &means[t + 1] - &filt.means[t];
        means[t] = &filt.means[t] + &j_t * mean_diff;
        let cov_diff = &covs[t + 1] - &pred;
        covs[t] = &filt.covs[t] + &j_t * cov_diff * j_t.transpose();
    }
    Ok((means, covs))
}

fn psd_cholesky(a: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let sym = (a + a.transpose()) * 0.5;
    if let Some(c) = Cholesky::new(sym.clone()) {
        return Ok(c);
    }
    let n = a.nrows();
    let jitter = 1e-12 * sym.trace().abs().max(1e-30) / n as f64;
    let mut bumped = sym;
    for i in 0..n {
        bumped[(i, i)] += jitter;
    }
    Cholesky::new(bumped)
        .ok_or_else(|| Error::Numerical("state covariance is not positive definite".into()))
}

fn draw_gaussian<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    if let Ok(chol) = psd_cholesky(cov) {
        return Ok(mean + chol.l() * z);
    }
    // semidefinite covariance (e.g. zero state innovation): factor by
    // eigendecomposition with clamped eigenvalues
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut scaled = eig.eigenvectors.clone();
    for j in 0..scaled.ncols() {
        let s = eig.eigenvalues[j].max(0.0).sqrt();
        scaled.column_mut(j).scale_mut(s);
    }
    Ok(mean + scaled * z)
}

/// Joint draw of the state path from its smoothing distribution.
pub fn ffbs_draw<R: Rng + ?Sized>(
    m: &StateSpaceModel,
    y: &DVector<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let filt = forward_filter(m, y)?;
    let t_len = m.t_len();
    let k = m.k();
    let mut path = DMatrix::zeros(t_len, k);
    let mut state = draw_gaussian(&filt.means[t_len - 1], &filt.covs[t_len - 1], rng)?;
    path.row_mut(t_len - 1).copy_from(&state.transpose());
    for t in (0..t_len - 1).rev() {
        let mut pred = filt.covs[t].clone();
        for j in 0..k {
            pred[(j, j)] += m.w[j];
        }
        let chol = psd_cholesky(&pred)?;
        let j_t = chol.solve(&filt.covs[t].transpose()).transpose();
        let mean = &filt.means[t] + &j_t * (&state - &filt.means[t]);
        let cov = &filt.covs[t] - &j_t * &filt.covs[t];
        state = draw_gaussian(&mean, &cov, rng)?;
        path.row_mut(t).copy_from(&state.transpose());
    }
    Ok(path)
}

fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate).expect("valid gamma").sample(rng);
    (1.0 / g).clamp(1e-12, 1e12)
}

/// Gibbs sampler for the benchmark TVP regression: FFBS for the states,
/// inverse-Gamma steps for the innovation variances and the observation
/// variance (shape = rate = 0.01).
///
/// The returned draws reuse [`PosteriorDraws`]: `beta` holds the
/// time-averaged state path per draw (the constant-coefficient estimate used
/// for comparisons), `tau_sq` the innovation variances and `lambda` the
/// observation variance.
pub fn benchmark_estimate(
    sr: &StandardizedRegression,
    cfg: &McmcConfig,
    seed: u64,
) -> Result<PosteriorDraws> {
    let t_len = sr.t_len();
    let k = sr.k();
    if t_len <= k {
        return Err(Error::Config(format!("need T > K for the benchmark, got T={t_len}, K={k}")));
    }
    if cfg.burn_in > cfg.total {
        return Err(Error::Config("burn-in exceeds total draws".into()));
    }
    let retained = cfg.total - cfg.burn_in;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let mut w = DVector::from_element(k, 0.01);
    let mut sigma_sq = 0.5;
    let (a0, b0) = (0.01, 0.01);

    let mut beta_out = DMatrix::zeros(retained, k);
    let mut w_out = DMatrix::zeros(retained, k);
    let mut sigma_out = DVector::zeros(retained);

    for it in 0..cfg.total {
        let model = StateSpaceModel::new(sr.x.clone(), w.clone(), sigma_sq, 10.0)?;
        let path = ffbs_draw(&model, &sr.y, &mut rng)?;

        for j in 0..k {
            let mut ss = 0.0;
            for t in 1..t_len {
                let d = path[(t, j)] - path[(t - 1, j)];
                ss += d * d;
            }
            w[j] = sample_inv_gamma(a0 + (t_len - 1) as f64 / 2.0, b0 + 0.5 * ss, &mut rng);
        }
        let mut rss = 0.0;
        for t in 0..t_len {
            let fitted: f64 = (0..k).map(|j| sr.x[(t, j)] * path[(t, j)]).sum();
            let r = sr.y[t] - fitted;
            rss += r * r;
        }
        sigma_sq = sample_inv_gamma(a0 + t_len as f64 / 2.0, b0 + 0.5 * rss, &mut rng);

        if it >= cfg.burn_in {
            let d = it - cfg.burn_in;
            for j in 0..k {
                beta_out[(d, j)] = path.column(j).sum() / t_len as f64;
                w_out[(d, j)] = w[j];
            }
            sigma_out[d] = sigma_sq;
        }
    }
    Ok(PosteriorDraws {
        beta: beta_out,
        tau_sq: w_out,
        lambda: sigma_out,
        seed,
        burn_in: cfg.burn_in,
    })
}
