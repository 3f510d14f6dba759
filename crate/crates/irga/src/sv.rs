//! Stochastic-volatility point estimation from the time-varying intercept.
//!
//! Squaring and logging the SV intercept `eta_t = exp(h_t/2) e_t` gives
//! `log eta_t^2 = h_t + v_t` with `v_t ~ log chi^2_1`. Approximating `v_t`
//! by a seven-component Gaussian mixture yields the plug-in estimator
//! `h_hat_t = sum_i pi_i (log eta_t^2 - mu_i)`, which only uses the mixture
//! through its mean.

use nalgebra::DVector;

/// Floor added to `eta^2` when an estimate is exactly zero.
pub const ETA_SQ_FLOOR: f64 = 1e-8;

/// Seven-component Gaussian mixture approximation to the log chi^2_1
/// distribution. Constants transcribed from Kim, Shephard & Chib (1998),
/// Table 4; their tabulated means are offset by 1.2704, which is undone here
/// so that `sum_i pi_i * mu_i` equals the log chi^2_1 mean (~ -1.2704).
#[derive(Debug, Clone)]
pub struct KscMixture {
    pub pi: [f64; 7],
    pub mu_v: [f64; 7],
    pub sigma_v_sq: [f64; 7],
}

const KSC_WEIGHTS: [f64; 7] = [0.00730, 0.10556, 0.00002, 0.04395, 0.34001, 0.24566, 0.25750];
const KSC_MEANS_OFFSET: [f64; 7] =
    [-10.12999, -3.97281, -8.56686, 2.77786, 0.61942, 1.79518, -1.08819];
const KSC_VARS: [f64; 7] = [5.79596, 2.61369, 5.17950, 0.16735, 0.64009, 0.34023, 1.26261];

impl Default for KscMixture {
    fn default() -> Self {
        let mut mu_v = [0.0; 7];
        for i in 0..7 {
            mu_v[i] = KSC_MEANS_OFFSET[i] - 1.2704;
        }
        KscMixture { pi: KSC_WEIGHTS, mu_v, sigma_v_sq: KSC_VARS }
    }
}

impl KscMixture {
    /// `sum_i pi_i * mu_i`, the only functional of the mixture the point
    /// estimator uses.
    pub fn mean_offset(&self) -> f64 {
        self.pi.iter().zip(&self.mu_v).map(|(p, m)| p * m).sum()
    }

    pub fn weight_sum(&self) -> f64 {
        self.pi.iter().sum()
    }
}

/// Log-volatility path estimate together with the implied total variance.
#[derive(Debug, Clone)]
pub struct VolatilityPath {
    pub h_hat: DVector<f64>,
    /// `exp(h_t) + sigma_eps^2` per period.
    pub total_var: DVector<f64>,
    /// Number of periods where the zero floor kicked in.
    pub floored: usize,
}

/// Point estimate of the log-volatility path from the intercept estimates.
pub fn estimate_h(eta_hat: &DVector<f64>, mix: &KscMixture) -> (DVector<f64>, usize) {
    let offset = mix.mean_offset();
    let mut floored = 0;
    let h = DVector::from_iterator(
        eta_hat.len(),
        eta_hat.iter().map(|&e| {
            let e2 = e * e;
            let log_e2 = if e2 > 0.0 {
                e2.ln()
            } else {
                floored += 1;
                (e2 + ETA_SQ_FLOOR).ln()
            };
            log_e2 - offset
        }),
    );
    (h, floored)
}

/// Optional centered moving-average smoothing of the volatility path.
pub fn smooth_h(h: &DVector<f64>, window: usize) -> DVector<f64> {
    if window <= 1 {
        return h.clone();
    }
    let half = window / 2;
    let n = h.len();
    DVector::from_fn(n, |t, _| {
        let lo = t.saturating_sub(half);
        let hi = (t + half).min(n - 1);
        h.rows(lo, hi - lo + 1).sum() / (hi - lo + 1) as f64
    })
}

/// Elementwise `exp(h_t) + sigma_eps^2`, with the exponent capped to avoid
/// overflow.
pub fn total_variance(h_hat: &DVector<f64>, sigma_eps_sq: f64) -> DVector<f64> {
    assert!(sigma_eps_sq > 0.0, "sigma_eps^2 must be positive");
    DVector::from_iterator(h_hat.len(), h_hat.iter().map(|&h| h.min(700.0).exp() + sigma_eps_sq))
}
