//! Single-equation estimation pipeline: partition, rotate, approximate the
//! nuisance block, then sample the focus block.

use serde::{Deserialize, Serialize};

use crate::data::StandardizedRegression;
use crate::error::Result;
use crate::gibbs::{run_sampler, McmcConfig, PosteriorDraws};
use crate::priors::{NormalGammaPrior, NuisancePrior, SpikeSlabPrior};
use crate::rotation::{make_partition, rotate_system, ColumnRole, Partition, PartitionMode};
use crate::vamp::{run_rotated, GaussianApprox, VampConfig};

/// Everything needed to estimate one equation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub prior: NuisancePrior,
    pub ng: NormalGammaPrior,
    pub mode: PartitionMode,
    /// Add the per-period intercept block and estimate a volatility path.
    pub sv: bool,
    pub vamp: VampConfig,
    pub mcmc: McmcConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            prior: NuisancePrior::SpikeSlab(SpikeSlabPrior::default()),
            ng: NormalGammaPrior::default(),
            mode: PartitionMode::TvpsOnly,
            sv: false,
            vamp: VampConfig::default(),
            mcmc: McmcConfig::default(),
        }
    }
}

/// Result of a single-equation fit.
#[derive(Debug, Clone)]
pub struct RegressionFit {
    pub ga: GaussianApprox,
    pub draws: PosteriorDraws,
    pub partition: Partition,
    /// Design columns covered by the TVP blocks (everything but the
    /// intercept, whose time variation is the eta block).
    pub tvp_cols: Vec<usize>,
}

impl RegressionFit {
    /// Point estimates of the demoted constant coefficients, aligned with
    /// `partition.nuisance`.
    pub fn demoted_means(&self) -> Vec<f64> {
        (0..self.partition.nuisance.len()).map(|j| self.ga.mu[j]).collect()
    }
}

/// Fit one standardized regression end to end.
pub fn fit_standardized(
    sr: &StandardizedRegression,
    layout: &[ColumnRole],
    cfg: &FitConfig,
    seed: u64,
) -> Result<RegressionFit> {
    let part = make_partition(layout, sr.t_len(), cfg.mode)?;
    let tvp_cols: Vec<usize> = (0..sr.k())
        .filter(|&j| !matches!(layout[j], ColumnRole::Intercept))
        .collect();
    let x_tvp = nalgebra::DMatrix::from_fn(sr.t_len(), tvp_cols.len(), |r, c| {
        sr.x[(r, tvp_cols[c])]
    });
    let td = crate::data::build_tvp_design(&x_tvp, cfg.sv);
    let rs = rotate_system(sr, &td, &part)?;
    let ga = run_rotated(&rs, &cfg.prior, &cfg.vamp)?;
    let draws = run_sampler(&rs, &ga, &cfg.ng, &cfg.mcmc, seed)?;
    Ok(RegressionFit { ga, draws, partition: part, tvp_cols })
}
