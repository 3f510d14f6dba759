//! Shrinkage priors and their scalar denoisers.
//!
//! The constant-coefficient block carries a Normal-Gamma prior whose local
//! variances and global scale have closed-form conditionals (generalized
//! inverse Gaussian and Gamma). The nuisance block carries either a
//! spike-and-slab or a sparse-Bayesian-learning prior; both enter the
//! message-passing stage only through their componentwise posterior maps
//! (denoisers) under a Gaussian pseudo-observation.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gig::Gig;

/// Normal-Gamma shrinkage prior on the constant coefficients:
/// `beta_j ~ N(0, tau_j^2)`, `tau_j^2 ~ G(vartheta, vartheta*lambda/2)`,
/// `lambda ~ G(d0, d1)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NormalGammaPrior {
    /// Kurtosis hyperparameter of the marginal prior.
    pub vartheta: f64,
    pub d0: f64,
    pub d1: f64,
}

impl Default for NormalGammaPrior {
    fn default() -> Self {
        NormalGammaPrior { vartheta: 0.1, d0: 0.01, d1: 0.01 }
    }
}

/// Spike-and-slab prior: point mass at zero with probability `1 - q`,
/// `N(0, psi)` slab with probability `q`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpikeSlabPrior {
    pub q: f64,
    pub psi: f64,
}

impl Default for SpikeSlabPrior {
    fn default() -> Self {
        SpikeSlabPrior { q: 0.5, psi: 1e-3 }
    }
}

impl SpikeSlabPrior {
    /// Candidate slab variances to sweep in sensitivity runs.
    pub fn psi_grid(k: usize) -> Vec<f64> {
        vec![1e-6, 1e-4, 1e-3, 1e-2, 1.0 / k.max(1) as f64]
    }
}

/// Sparse-Bayesian-learning prior: `N(0, psi_j)` per coefficient with a
/// Gamma hyperprior on the precision `1/psi_j`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SblPrior {
    pub a_psi: f64,
    pub b_psi: f64,
}

impl Default for SblPrior {
    fn default() -> Self {
        SblPrior { a_psi: 1.0, b_psi: 1e-6 }
    }
}

/// Weakly informative inverse-Gamma prior on the measurement variance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SigmaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for SigmaPrior {
    fn default() -> Self {
        SigmaPrior { shape: 0.01, rate: 0.01 }
    }
}

/// Prior choice for the nuisance block.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum NuisancePrior {
    SpikeSlab(SpikeSlabPrior),
    Sbl(SblPrior),
}

/// Output of a scalar denoiser: posterior mean, posterior variance and (for
/// the spike-and-slab prior) the posterior inclusion probability.
#[derive(Debug, Clone, Copy)]
pub struct Denoised {
    pub mean: f64,
    pub var: f64,
    pub incl: f64,
}

/// Posterior map under the spike-and-slab prior given the pseudo-observation
/// `r ~ N(theta, s)`.
///
/// The mixture weight is computed in the log domain so that large `|r|` does
/// not underflow.
pub fn ss_denoise(r: f64, s: f64, prior: &SpikeSlabPrior) -> Result<Denoised> {
    if !r.is_finite() {
        return Err(Error::Numerical(format!("non-finite pseudo-observation {r}")));
    }
    if s <= 0.0 {
        return Err(Error::Numerical(format!("pseudo-variance must be positive, got {s}")));
    }
    let (q, psi) = (prior.q, prior.psi);
    let w = if q <= 0.0 {
        0.0
    } else if q >= 1.0 {
        1.0
    } else {
        let sp = psi + s;
        let log_slab = -0.5 * (r * r / sp + (2.0 * std::f64::consts::PI * sp).ln());
        let log_spike = -0.5 * (r * r / s + (2.0 * std::f64::consts::PI * s).ln());
        let logit = (q / (1.0 - q)).ln() + log_slab - log_spike;
        if logit >= 0.0 {
            1.0 / (1.0 + (-logit).exp())
        } else {
            let e = logit.exp();
            e / (1.0 + e)
        }
    };
    let shrink = psi / (psi + s);
    let m1 = shrink * r;
    let v1 = shrink * s;
    let mean = w * m1;
    // var = w*v1 + w(1-w)*m1^2, written without the cancelling subtraction
    let var = w * v1 + w * (1.0 - w) * m1 * m1;
    Ok(Denoised { mean, var, incl: w })
}

/// Gaussian-Gaussian shrinkage under the SBL prior.
pub fn sbl_denoise(r: f64, s: f64, psi_j: f64) -> Denoised {
    debug_assert!(s > 0.0 && psi_j > 0.0);
    let shrink = psi_j / (psi_j + s);
    Denoised { mean: shrink * r, var: shrink * s, incl: 1.0 }
}

/// SBL variance update from the current coefficient estimate. The update
/// rule targets the precision, `1/psi_j = (2 a_psi - 1) / (gamma_hat^2 +
/// 2 b_psi)`; the returned value is the implied variance.
pub fn sbl_update_psi(gamma_hat_j: f64, prior: &SblPrior) -> f64 {
    (gamma_hat_j * gamma_hat_j + 2.0 * prior.b_psi) / (2.0 * prior.a_psi - 1.0)
}

/// Draw a local variance from its GIG conditional,
/// `tau_j^2 | beta_j, lambda ~ GIG(vartheta - 1/2, beta_j^2, lambda*vartheta)`.
pub fn sample_tau_sq<R: Rng + ?Sized>(
    beta_j: f64,
    lambda: f64,
    prior: &NormalGammaPrior,
    rng: &mut R,
) -> f64 {
    // guard against an exactly-zero coefficient, which would make the
    // conditional improper for vartheta < 1/2
    let chi = (beta_j * beta_j).max(1e-300);
    let gig = Gig::new(prior.vartheta - 0.5, chi, lambda * prior.vartheta)
        .expect("valid GIG conditional");
    gig.sample(rng).clamp(1e-12, 1e12)
}

/// Draw the global shrinkage scale from its Gamma conditional,
/// `lambda | tau ~ G(d0 + K*vartheta, d1 + vartheta * sum(tau^2) / 2)`.
pub fn sample_lambda<R: Rng + ?Sized>(
    tau_sq: &[f64],
    prior: &NormalGammaPrior,
    rng: &mut R,
) -> f64 {
    let k = tau_sq.len() as f64;
    let shape = prior.d0 + k * prior.vartheta;
    let rate = prior.d1 + prior.vartheta * tau_sq.iter().sum::<f64>() / 2.0;
    Gamma::new(shape, 1.0 / rate).expect("valid gamma").sample(rng).max(1e-300)
}
