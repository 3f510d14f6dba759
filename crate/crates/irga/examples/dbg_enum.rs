use irga::linop::DenseOp;
use irga::priors::{NuisancePrior, SpikeSlabPrior};
use irga::vamp::{run, VampConfig};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

fn enumerate(a: &DMatrix<f64>, y: &DVector<f64>, q: f64, psi: f64, sigma_sq: f64) -> DVector<f64> {
    let m = a.ncols();
    let n = a.nrows() as f64;
    let ata = a.tr_mul(a);
    let aty = a.tr_mul(y);
    let yty = y.norm_squared();
    let mut logw = Vec::with_capacity(1 << m);
    for mask in 0u32..(1 << m) {
        let idx: Vec<usize> = (0..m).filter(|j| mask >> j & 1 == 1).collect();
        let s = idx.len();
        let mut lw = (s as f64) * q.ln() + ((m - s) as f64) * (1.0 - q).ln()
            - 0.5 * n * (2.0 * std::f64::consts::PI * sigma_sq).ln()
            - 0.5 * yty / sigma_sq;
        if s > 0 {
            let mut prec = DMatrix::zeros(s, s);
            for (ii, &i) in idx.iter().enumerate() {
                for (jj, &j) in idx.iter().enumerate() {
                    prec[(ii, jj)] = ata[(i, j)] / sigma_sq;
                }
                prec[(ii, ii)] += 1.0 / psi;
            }
            let rhs = DVector::from_fn(s, |ii, _| aty[idx[ii]] / sigma_sq);
            let chol = prec.clone().cholesky().unwrap();
            let mu_s = chol.solve(&rhs);
            let ldet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
            lw += -0.5 * (s as f64) * psi.ln() - 0.5 * ldet + 0.5 * rhs.dot(&mu_s);
        }
        logw.push(lw);
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ws: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let tot: f64 = ws.iter().sum();
    let mut incl = DVector::zeros(m);
    for (mask, w) in ws.iter().enumerate() {
        for j in 0..m {
            if mask >> j & 1 == 1 {
                incl[j] += w / tot;
            }
        }
    }
    incl
}

fn main() {
    let mut worst_overall = 0.0f64;
    let mut worst_seed = 0u64;
    for seed in 0..30u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let (rows, m) = (40, 12);
        let a = DMatrix::from_fn(rows, m, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
            / (rows as f64).sqrt();
        let mut theta = DVector::zeros(m);
        theta[2] = 2.0; theta[7] = -1.5; theta[9] = 1.0;
        let sigma = 0.002f64;
        let y = &a * &theta + DVector::from_fn(rows, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal)) * sigma;
        let (q, psi) = (0.1, 4.0);
        let incl_ex = enumerate(&a, &y, q, psi, sigma * sigma);
        let prior = NuisancePrior::SpikeSlab(SpikeSlabPrior { q, psi });
        let cfg = VampConfig { sigma_init: Some(sigma * sigma), learn_noise: false, tol: 1e-10, ..Default::default() };
        let out = run(&y, &DenseOp(a), &prior, &cfg).unwrap();
        let incl_v = out.incl.unwrap();
        let maxdiff = (0..m).map(|j| (incl_v[j] - incl_ex[j]).abs()).fold(0.0, f64::max);
        if maxdiff > worst_overall { worst_overall = maxdiff; worst_seed = seed; }
        println!("seed {seed}: max |incl diff| = {maxdiff:.5}");
    }
    println!("worst over 30 seeds: {worst_overall:.5} at seed {worst_seed}");
    detail(worst_seed);
}

#[allow(dead_code)]
fn detail(seed: u64) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let (rows, m) = (40, 12);
    let a = DMatrix::from_fn(rows, m, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
        / (rows as f64).sqrt();
    let mut theta = DVector::zeros(m);
    theta[2] = 2.0; theta[7] = -1.5; theta[9] = 1.0;
    let sigma = 0.002f64;
    let y = &a * &theta + DVector::from_fn(rows, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal)) * sigma;
    let (q, psi) = (0.1, 4.0);
    let incl_ex = enumerate(&a, &y, q, psi, sigma * sigma);
    let prior = NuisancePrior::SpikeSlab(SpikeSlabPrior { q, psi });
    let cfg = VampConfig { sigma_init: Some(sigma * sigma), learn_noise: false, tol: 1e-10, ..Default::default() };
    let out = run(&y, &DenseOp(a.clone()), &prior, &cfg).unwrap();
    let incl_v = out.incl.unwrap();
    println!("seed {seed} iters={} conv={}", out.iterations, out.converged);
    for j in 0..m {
        println!("  j={j:2} theta={:+.2} exact={:.4} vamp={:.4} mu={:+.4}", theta[j], incl_ex[j], incl_v[j], out.mu[j]);
    }
    // column correlations with the active set
    for &s in &[2usize, 7, 9] {
        for j in 0..m {
            if j != s {
                let c = a.column(s).dot(&a.column(j)) / (a.column(s).norm() * a.column(j).norm());
                if c.abs() > 0.4 { println!("  corr(col{s}, col{j}) = {c:+.3}"); }
            }
        }
    }
}
