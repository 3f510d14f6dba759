//! MCMC for the constant-coefficient block, conditional on the Gaussian
//! approximation of the nuisance posterior.
//!
//! The first rotated system has error covariance
//! `Omega = Sigma_eps + (Q1'W) V (Q1'W)'` once the nuisance block is
//! integrated out at its approximation; whitening by the inverse Cholesky
//! factor reduces the draw of the constant coefficients to a textbook
//! conjugate Gaussian step. Local and global shrinkage scales of the
//! Normal-Gamma prior are then refreshed from their closed-form
//! conditionals.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priors::{sample_lambda, sample_tau_sq, NormalGammaPrior};
use crate::rotation::RotatedSystem;
use crate::vamp::GaussianApprox;

/// Whitened focus-block regression.
#[derive(Debug, Clone)]
pub struct ProjectedSystem {
    /// `sigma_eps^2 I + (Q1'W) V (Q1'W)'` (time-varying variances projected
    /// in place of the homoskedastic block when SV is on).
    pub omega_q1: DMatrix<f64>,
    /// Lower Cholesky factor of `omega_q1`.
    pub p_q1: DMatrix<f64>,
    /// Whitened response `P^{-1}(Q1'y - Q1'W mu)`.
    pub y_tilde: DVector<f64>,
    /// Whitened design `P^{-1} Q1'X_f`.
    pub x_tilde: DMatrix<f64>,
}

impl ProjectedSystem {
    pub fn k(&self) -> usize {
        self.x_tilde.ncols()
    }
}

/// Build the whitened system from the rotation and the nuisance
/// approximation. Adds a single jitter of `1e-10 * trace/K` if the first
/// Cholesky attempt fails.
pub fn build_projected_system(rs: &RotatedSystem, ga: &GaussianApprox) -> Result<ProjectedSystem> {
    let k = rs.k_focus();
    let (b1, b2) = rs.proj_mats();
    let mut omega = ga.cov.project(&b1, &b2);
    match &ga.total_var {
        Some(tv) => omega += rs.q1_diag_q1(tv),
        None => {
            for i in 0..k {
                omega[(i, i)] += ga.sigma_eps_sq;
            }
        }
    }
    // enforce symmetry before factorizing
    let omega = (&omega + omega.transpose()) * 0.5;

    let chol = match Cholesky::new(omega.clone()) {
        Some(c) => c,
        None => {
            let jitter = 1e-10 * omega.trace() / k as f64;
            let mut bumped = omega.clone();
            for i in 0..k {
                bumped[(i, i)] += jitter;
            }
            Cholesky::new(bumped).ok_or_else(|| {
                Error::Numerical("projected covariance is indefinite even after jitter".into())
            })?
        }
    };
    let p_q1 = chol.l();

    let resid = &rs.y1 - rs.w1_mul(&ga.mu);
    let y_tilde = solve_lower(&p_q1, &resid);
    let mut x_tilde = DMatrix::zeros(k, k);
    for j in 0..k {
        let col = solve_lower(&p_q1, &rs.a1.column(j).into_owned());
        x_tilde.set_column(j, &col);
    }
    Ok(ProjectedSystem { omega_q1: omega, p_q1, y_tilde, x_tilde })
}

fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    let n = l.nrows();
    for i in 0..n {
        let mut acc = x[i];
        for j in 0..i {
            acc -= l[(i, j)] * x[j];
        }
        x[i] = acc / l[(i, i)];
    }
    x
}

/// Posterior moments of the constant coefficients for a diagonal prior
/// variance `Lambda`: `V = (X'X + Lambda^{-1})^{-1}`, `mu = V X'y` on the
/// whitened system.
pub fn posterior_moments(
    ps: &ProjectedSystem,
    lambda_diag: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let k = ps.k();
    let mut prec = ps.x_tilde.tr_mul(&ps.x_tilde);
    for j in 0..k {
        prec[(j, j)] += 1.0 / lambda_diag[j];
    }
    let chol = Cholesky::new(prec)
        .ok_or_else(|| Error::Numerical("coefficient precision not positive definite".into()))?;
    let rhs = ps.x_tilde.tr_mul(&ps.y_tilde);
    let mean = chol.solve(&rhs);
    let cov = chol.inverse();
    Ok((mean, cov))
}

/// Exact Gaussian draw of the constant coefficients given prior variances.
pub fn draw_beta<R: Rng + ?Sized>(
    ps: &ProjectedSystem,
    lambda_diag: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let k = ps.k();
    let mut prec = ps.x_tilde.tr_mul(&ps.x_tilde);
    for j in 0..k {
        prec[(j, j)] += 1.0 / lambda_diag[j];
    }
    let chol = Cholesky::new(prec)
        .ok_or_else(|| Error::Numerical("coefficient precision not positive definite".into()))?;
    let rhs = ps.x_tilde.tr_mul(&ps.y_tilde);
    let mean = chol.solve(&rhs);
    // beta = mean + L^{-T} z gives covariance (L L')^{-1}
    let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let l = chol.l();
    let mut x = z;
    for i in (0..k).rev() {
        let mut acc = x[i];
        for j in i + 1..k {
            acc -= l[(j, i)] * x[j];
        }
        x[i] = acc / l[(i, i)];
    }
    Ok(mean + x)
}

/// MCMC schedule.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McmcConfig {
    pub total: usize,
    pub burn_in: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig { total: 15_000, burn_in: 10_000 }
    }
}

/// Retained draws of the constant coefficients and shrinkage hyperparameters.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    /// draws x K matrix of coefficient draws.
    pub beta: DMatrix<f64>,
    /// draws x K matrix of local variance draws.
    pub tau_sq: DMatrix<f64>,
    /// Global shrinkage draws.
    pub lambda: DVector<f64>,
    pub seed: u64,
    pub burn_in: usize,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.beta.nrows()
    }

    pub fn k(&self) -> usize {
        self.beta.ncols()
    }

    pub fn beta_mean(&self) -> DVector<f64> {
        let n = self.n_draws() as f64;
        DVector::from_fn(self.k(), |j, _| self.beta.column(j).sum() / n)
    }

    /// CSV export: one row per draw, beta columns then tau columns then lambda.
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.k()).map(|j| format!("beta_{j}")).collect();
        header.extend((0..self.k()).map(|j| format!("tau_sq_{j}")));
        header.push("lambda".into());
        w.write_record(&header)?;
        for d in 0..self.n_draws() {
            let mut rec: Vec<String> = (0..self.k()).map(|j| self.beta[(d, j)].to_string()).collect();
            rec.extend((0..self.k()).map(|j| self.tau_sq[(d, j)].to_string()));
            rec.push(self.lambda[d].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Compact binary export. Layout: magic `IRGADRW1`, then u64 little-endian
    /// draw count, coefficient count, seed and burn-in, then row-major f64
    /// little-endian blocks for beta (draws x K), tau_sq (draws x K) and
    /// lambda (draws).
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(b"IRGADRW1")?;
        for v in [self.n_draws() as u64, self.k() as u64, self.seed, self.burn_in as u64] {
            f.write_all(&v.to_le_bytes())?;
        }
        let mut dump = |m: &[f64]| -> Result<()> {
            for v in m {
                f.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        };
        for d in 0..self.n_draws() {
            for j in 0..self.k() {
                dump(&[self.beta[(d, j)]])?;
            }
        }
        for d in 0..self.n_draws() {
            for j in 0..self.k() {
                dump(&[self.tau_sq[(d, j)]])?;
            }
        }
        for d in 0..self.n_draws() {
            dump(&[self.lambda[d]])?;
        }
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != b"IRGADRW1" {
            return Err(Error::Data("bad draws-file magic".into()));
        }
        let mut u64buf = [0u8; 8];
        let mut read_u64 = |f: &mut dyn Read| -> Result<u64> {
            f.read_exact(&mut u64buf)?;
            Ok(u64::from_le_bytes(u64buf))
        };
        let draws = read_u64(&mut f)? as usize;
        let k = read_u64(&mut f)? as usize;
        let seed = read_u64(&mut f)?;
        let burn_in = read_u64(&mut f)? as usize;
        let read_block = |f: &mut dyn Read, n: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(n);
            let mut buf = [0u8; 8];
            for _ in 0..n {
                f.read_exact(&mut buf)?;
                out.push(f64::from_le_bytes(buf));
            }
            Ok(out)
        };
        let beta = DMatrix::from_row_slice(draws, k, &read_block(&mut f, draws * k)?);
        let tau_sq = DMatrix::from_row_slice(draws, k, &read_block(&mut f, draws * k)?);
        let lambda = DVector::from_vec(read_block(&mut f, draws)?);
        Ok(PosteriorDraws { beta, tau_sq, lambda, seed, burn_in })
    }
}

/// Run the conditional sampler: the nuisance approximation is held fixed
/// while the constant coefficients, local variances and the global scale are
/// drawn in turn.
pub fn run_sampler(
    rs: &RotatedSystem,
    ga: &GaussianApprox,
    prior: &NormalGammaPrior,
    cfg: &McmcConfig,
    seed: u64,
) -> Result<PosteriorDraws> {
    if cfg.total > 0 && cfg.burn_in >= cfg.total {
        return Err(Error::Config(format!(
            "burn-in {} must be below the total draw count {}",
            cfg.burn_in, cfg.total
        )));
    }
    let ps = build_projected_system(rs, ga)?;
    let k = ps.k();
    let retained = cfg.total - cfg.burn_in;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let mut lambda = 1.0;
    let mut tau = DVector::from_element(k, 1.0);
    let mut beta_out = DMatrix::zeros(retained, k);
    let mut tau_out = DMatrix::zeros(retained, k);
    let mut lambda_out = DVector::zeros(retained);

    for it in 0..cfg.total {
        let beta = draw_beta(&ps, &tau, &mut rng)?;
        for j in 0..k {
            tau[j] = sample_tau_sq(beta[j], lambda, prior, &mut rng);
        }
        lambda = sample_lambda(tau.as_slice(), prior, &mut rng);
        if it >= cfg.burn_in {
            let d = it - cfg.burn_in;
            beta_out.row_mut(d).copy_from(&beta.transpose());
            tau_out.row_mut(d).copy_from(&tau.transpose());
            lambda_out[d] = lambda;
        }
    }
    Ok(PosteriorDraws { beta: beta_out, tau_sq: tau_out, lambda: lambda_out, seed, burn_in: cfg.burn_in })
}
