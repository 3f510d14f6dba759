//! Synthetic-data experiments: coefficient-recovery comparison against the
//! FFBS benchmark and the runtime-scaling measurement.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::standardize;
use crate::error::Result;
use crate::fit::{fit_standardized, FitConfig};
use crate::gibbs::McmcConfig;
use crate::parallel::{self, derive_seed, map_indexed, map_indexed_seq};
use crate::rotation::ColumnRole;

/// Data-generating process: `y_t = x_t'(beta + gamma_t) + eps_t` with
/// `beta ~ N(0, I)`, `gamma_it ~ N(0, s_t * tvp_sd^2)` where `s_t` switches
/// parameter change on with probability `p_bar` per period.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpConfig {
    pub k: usize,
    pub p_bar: f64,
    pub t_len: usize,
    pub sigma_eps: f64,
    pub tvp_sd: f64,
    /// Share one change indicator per period across coefficients (the DGP
    /// indexes it by t only); a per-coefficient variant for sensitivity runs.
    pub shared_switch: bool,
}

impl DgpConfig {
    pub fn new(k: usize, p_bar: f64) -> Self {
        DgpConfig { k, p_bar, t_len: 500, sigma_eps: 0.1, tvp_sd: 0.5, shared_switch: true }
    }
}

/// One realization of the DGP.
#[derive(Debug, Clone)]
pub struct DgpDraw {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub beta: DVector<f64>,
    /// T x K matrix of per-period deviations.
    pub gamma: DMatrix<f64>,
}

/// Draw one dataset from the DGP.
pub fn generate<R: Rng + ?Sized>(cfg: &DgpConfig, rng: &mut R) -> DgpDraw {
    let (t_len, k) = (cfg.t_len, cfg.k);
    let beta = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let x = DMatrix::from_fn(t_len, k, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let mut gamma = DMatrix::zeros(t_len, k);
    for t in 0..t_len {
        let shared_on = rng.random::<f64>() < cfg.p_bar;
        for j in 0..k {
            let on = if cfg.shared_switch { shared_on } else { rng.random::<f64>() < cfg.p_bar };
            if on {
                gamma[(t, j)] =
                    rng.sample::<f64, _>(rand_distr::StandardNormal) * cfg.tvp_sd;
            }
        }
    }
    let y = DVector::from_fn(t_len, |t, _| {
        let mut acc = 0.0;
        for j in 0..k {
            acc += x[(t, j)] * (beta[j] + gamma[(t, j)]);
        }
        acc + rng.sample::<f64, _>(rand_distr::StandardNormal) * cfg.sigma_eps
    });
    DgpDraw { y, x, beta, gamma }
}

/// Settings of the comparison experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaeExperimentConfig {
    pub k_grid: Vec<usize>,
    pub p_grid: Vec<f64>,
    pub replications: usize,
    pub t_len: usize,
    pub fit: FitConfig,
    /// Draws for the FFBS benchmark arm.
    pub bench_mcmc: McmcConfig,
    pub seed: u64,
}

/// One cell of the comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaeCell {
    pub k: usize,
    pub p_bar: f64,
    /// Mean over replications of MAE(rotated-approx estimate) /
    /// MAE(benchmark estimate).
    pub ratio: f64,
    pub ratio_se: f64,
    pub replications: usize,
}

fn mae(est: &DVector<f64>, truth: &DVector<f64>) -> f64 {
    (est - truth).abs().sum() / truth.len() as f64
}

/// Estimate one replication with both methods and return the MAE ratio.
pub fn replication_ratio(
    cfg: &DgpConfig,
    fit_cfg: &FitConfig,
    bench_mcmc: &McmcConfig,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let draw = generate(cfg, &mut rng);
    let sr = standardize(&draw.y, &draw.x)?;

    let layout = vec![ColumnRole::Generic; cfg.k];
    let fit = fit_standardized(&sr, &layout, fit_cfg, derive_seed(seed, parallel::stream::EQUATION, 0))?;
    let beta_std = fit.draws.beta_mean();
    let beta_irga = DVector::from_fn(cfg.k, |j, _| sr.unscale_coef(j, beta_std[j]));

    let bench = crate::ffbs::benchmark_estimate(
        &sr,
        bench_mcmc,
        derive_seed(seed, parallel::stream::BENCH, 0),
    )?;
    let bench_std = bench.beta_mean();
    let beta_bench = DVector::from_fn(cfg.k, |j, _| sr.unscale_coef(j, bench_std[j]));

    Ok(mae(&beta_irga, &draw.beta) / mae(&beta_bench, &draw.beta))
}

fn run_experiment(cfg: &MaeExperimentConfig, sequential: bool) -> Result<Vec<MaeCell>> {
    let mut cells = Vec::new();
    for &k in &cfg.k_grid {
        for &p_bar in &cfg.p_grid {
            let dgp = DgpConfig { t_len: cfg.t_len, ..DgpConfig::new(k, p_bar) };
            let cell_tag = ((k as u64) << 32) | (p_bar * 1000.0) as u64;
            let task = |r: usize| {
                let seed = derive_seed(
                    cfg.seed,
                    parallel::stream::REPLICATION,
                    cell_tag ^ ((r as u64) << 8),
                );
                replication_ratio(&dgp, &cfg.fit, &cfg.bench_mcmc, seed)
            };
            let ratios: Vec<Result<f64>> = if sequential {
                map_indexed_seq(cfg.replications, task)
            } else {
                map_indexed(cfg.replications, task)
            };
            let ratios: Vec<f64> = ratios.into_iter().collect::<Result<_>>()?;
            let n = ratios.len() as f64;
            let mean = ratios.iter().sum::<f64>() / n;
            let var =
                ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0).max(1.0);
            cells.push(MaeCell {
                k,
                p_bar,
                ratio: mean,
                ratio_se: (var / n).sqrt(),
                replications: cfg.replications,
            });
        }
    }
    Ok(cells)
}

/// Run the full comparison grid. Replications are distributed over the
/// worker pool; per-replication seeds are derived from the base seed, so the
/// result does not depend on scheduling.
pub fn mae_experiment(cfg: &MaeExperimentConfig) -> Result<Vec<MaeCell>> {
    run_experiment(cfg, false)
}

/// Sequential variant of [`mae_experiment`] used for equivalence checks and
/// benchmarks.
pub fn mae_experiment_seq(cfg: &MaeExperimentConfig) -> Result<Vec<MaeCell>> {
    run_experiment(cfg, true)
}

/// Wall-clock measurement for one coefficient count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingRow {
    pub k: usize,
    pub irga_secs: f64,
    pub ffbs_secs: f64,
}

/// Measure wall-clock time for producing `draws` posterior draws with both
/// methods across a coefficient grid. Runs single-worker by construction:
/// each estimation is sequential and the grid is iterated in order.
pub fn timing_experiment(
    k_grid: &[usize],
    draws: usize,
    t_len: usize,
    fit_cfg: &FitConfig,
    seed: u64,
) -> Result<Vec<TimingRow>> {
    let mut rows = Vec::new();
    for &k in k_grid {
        let dgp = DgpConfig { t_len, ..DgpConfig::new(k, 0.5) };
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, parallel::stream::BENCH, k as u64));
        let draw = generate(&dgp, &mut rng);
        let sr = standardize(&draw.y, &draw.x)?;
        let layout = vec![ColumnRole::Generic; k];

        let mcmc = McmcConfig { total: draws, burn_in: draws / 3 };
        let fit_cfg = FitConfig { mcmc, ..fit_cfg.clone() };

        let start = Instant::now();
        let _ = fit_standardized(&sr, &layout, &fit_cfg, seed)?;
        let irga_secs = start.elapsed().as_secs_f64();

        let start = Instant::now();
        let _ = crate::ffbs::benchmark_estimate(&sr, &mcmc, seed)?;
        let ffbs_secs = start.elapsed().as_secs_f64();

        rows.push(TimingRow { k, irga_secs, ffbs_secs });
    }
    Ok(rows)
}
