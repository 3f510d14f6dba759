//! QR rotation of the likelihood.
//!
//! A full Householder QR of the focus design `X_f` yields `Q = [Q1 Q2]` with
//! `Q2' X_f = 0`. Rotating the regression by `Q'` therefore splits it into a
//! low-dimensional system in the constant coefficients (through `Q1`) and a
//! high-dimensional system that involves only the nuisance block (through
//! `Q2`): the constant coefficients drop out of the second system entirely.

use nalgebra::{DMatrix, DVector};

use crate::data::{StandardizedRegression, TvpDesign};
use crate::error::{Error, Result};
use crate::linop::LinOp;

/// How constant coefficients are split between the exactly-sampled focus
/// block and the approximated nuisance block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PartitionMode {
    /// All constant coefficients in focus; only TVPs (and eta) are nuisance.
    TvpsOnly,
    /// Cross-variable lags of order > 1 are demoted to the nuisance block
    /// alongside the TVPs.
    TvpsAndLag,
}

/// Role of a design column, used to decide focus membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnRole {
    Intercept,
    /// Lag of the equation's own variable.
    OwnLag { lag: usize },
    /// Lag of another variable.
    CrossLag { var: usize, lag: usize },
    /// Contemporaneous value of an earlier-ordered variable.
    Contemporaneous { var: usize },
    /// Plain regressor without lag structure.
    Generic,
}

/// Index split of the design columns into focus and nuisance sets.
#[derive(Debug, Clone)]
pub struct Partition {
    pub focus: Vec<usize>,
    pub nuisance: Vec<usize>,
    pub mode: PartitionMode,
}

impl Partition {
    pub fn k_focus(&self) -> usize {
        self.focus.len()
    }
}

/// Split design columns between focus and nuisance.
///
/// Under `TvpsOnly` every constant coefficient stays in focus. Under
/// `TvpsAndLag` the focus keeps the intercept, all own lags, first-order
/// cross lags and contemporaneous terms; cross lags of order > 1 move to the
/// nuisance block. Fails if the focus dimension exceeds `t_len`.
pub fn make_partition(
    layout: &[ColumnRole],
    t_len: usize,
    mode: PartitionMode,
) -> Result<Partition> {
    let keep = |role: &ColumnRole| match mode {
        PartitionMode::TvpsOnly => true,
        PartitionMode::TvpsAndLag => !matches!(role, ColumnRole::CrossLag { lag, .. } if *lag > 1),
    };
    let mut focus = Vec::new();
    let mut nuisance = Vec::new();
    for (j, role) in layout.iter().enumerate() {
        if keep(role) {
            focus.push(j);
        } else {
            nuisance.push(j);
        }
    }
    if focus.len() > t_len {
        return Err(Error::Config(format!(
            "focus block has {} columns but only {} observations; \
             reduce the lag order or the number of variables (or use the \
             lag-demoting partition mode)",
            focus.len(),
            t_len
        )));
    }
    Ok(Partition { focus, nuisance, mode })
}

/// Full Householder QR of a T x K matrix (T >= K): returns `(Q1, Q2, R)`
/// where `Q1` is T x K, `Q2` is T x (T-K), `R` is K x K upper triangular
/// with nonnegative diagonal, and `X = Q1 R`.
pub fn qr_partition(x_f: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let t = x_f.nrows();
    let k = x_f.ncols();
    if t < k {
        return Err(Error::Config(format!("need T >= K for the rotation, got T={t}, K={k}")));
    }
    let tol = 1e-10 * x_f.norm().max(1e-300);

    let mut r = x_f.clone();
    // Householder vectors, one per column; v[j] acts on rows j..t.
    let mut vs: Vec<DVector<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let mut v = DVector::from_iterator(t - j, (j..t).map(|i| r[(i, j)]));
        let norm = v.norm();
        if norm <= tol {
            return Err(Error::RankDeficient(format!(
                "column {j} is linearly dependent on the preceding columns (pivot {norm:.3e} <= {tol:.3e})"
            )));
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 > 0.0 {
            // apply H = I - 2 v v'/v'v to the trailing block of R
            for c in j..k {
                let mut dot = 0.0;
                for i in 0..t - j {
                    dot += v[i] * r[(j + i, c)];
                }
                let s = 2.0 * dot / vnorm2;
                for i in 0..t - j {
                    r[(j + i, c)] -= s * v[i];
                }
            }
        }
        r[(j, j)] = alpha;
        for i in j + 1..t {
            r[(i, j)] = 0.0;
        }
        vs.push(v);
        if r[(j, j)].abs() <= tol {
            return Err(Error::RankDeficient(format!(
                "column {j} is linearly dependent on the preceding columns (pivot {:.3e} <= {tol:.3e})",
                r[(j, j)].abs()
            )));
        }
    }

    // accumulate Q = H_0 H_1 ... H_{k-1} by applying reflectors to I in reverse
    let mut q = DMatrix::<f64>::identity(t, t);
    for j in (0..k).rev() {
        let v = &vs[j];
        let vnorm2 = v.norm_squared();
        if vnorm2 == 0.0 {
            continue;
        }
        for c in 0..t {
            let mut dot = 0.0;
            for i in 0..t - j {
                dot += v[i] * q[(j + i, c)];
            }
            let s = 2.0 * dot / vnorm2;
            for i in 0..t - j {
                q[(j + i, c)] -= s * v[i];
            }
        }
    }

    // normalize the factor so R has a nonnegative diagonal
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            for c in j..k {
                r[(j, c)] = -r[(j, c)];
            }
            for i in 0..t {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }

    let q1 = q.columns(0, k).into_owned();
    let q2 = q.columns(k, t - k).into_owned();
    let r_small = r.rows(0, k).into_owned();
    Ok((q1, q2, r_small))
}

/// The nuisance design `W = [X_d | Z | I_eta]`: demoted constant-coefficient
/// columns, the block-diagonal TVP design and the optional per-period
/// intercept block. Never materialized densely.
#[derive(Debug, Clone)]
pub struct NuisanceDesign {
    /// T x M_d demoted raw columns (empty under `TvpsOnly`).
    pub demoted: DMatrix<f64>,
    pub tvp: TvpDesign,
}

impl NuisanceDesign {
    pub fn t_len(&self) -> usize {
        self.tvp.t_len()
    }

    pub fn m(&self) -> usize {
        self.demoted.ncols() + self.tvp.m()
    }

    pub fn has_eta(&self) -> bool {
        self.tvp.with_eta
    }

    /// Index of the first eta column within the stacked coefficient vector.
    pub fn eta_offset(&self) -> Option<usize> {
        self.has_eta()
            .then(|| self.demoted.ncols() + self.tvp.t_len() * self.tvp.k())
    }

    /// `W theta` for a stacked (demoted, gamma, eta) vector.
    pub fn mul(&self, theta: &DVector<f64>) -> DVector<f64> {
        let md = self.demoted.ncols();
        let mut out = self.tvp.mul(&theta.rows(md, self.tvp.m()).into_owned());
        if md > 0 {
            out += &self.demoted * theta.rows(0, md);
        }
        out
    }

    /// `W' v` stacked as (demoted, gamma, eta).
    pub fn tr_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        let md = self.demoted.ncols();
        let mut out = DVector::zeros(self.m());
        if md > 0 {
            out.rows_mut(0, md).copy_from(&self.demoted.tr_mul(v));
        }
        out.rows_mut(md, self.tvp.m()).copy_from(&self.tvp.tr_mul(v));
        out
    }

    /// `W W' = X_d X_d' + diag(||x_t||^2) + [eta] I`, a T x T matrix.
    pub fn ww_t(&self) -> DMatrix<f64> {
        let t = self.t_len();
        let mut out = if self.demoted.ncols() > 0 {
            &self.demoted * self.demoted.transpose()
        } else {
            DMatrix::zeros(t, t)
        };
        let eta = if self.has_eta() { 1.0 } else { 0.0 };
        for i in 0..t {
            out[(i, i)] += self.tvp.x.row(i).norm_squared() + eta;
        }
        out
    }

    /// Dense realization for tests and tiny systems.
    pub fn dense(&self) -> DMatrix<f64> {
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(self.m());
        for j in 0..self.demoted.ncols() {
            cols.push(self.demoted.column(j).into_owned());
        }
        let z = self.tvp.dense();
        for j in 0..z.ncols() {
            cols.push(z.column(j).into_owned());
        }
        DMatrix::from_columns(&cols)
    }
}

/// The rotated likelihood systems.
///
/// `y1 = Q1'y` carries the focus coefficients (design `A1 = Q1'X_f`) plus a
/// projected nuisance contribution; `y2 = Q2'y` depends on the nuisance
/// block alone. `W1`/`W2` (the rotated nuisance designs) are exposed as
/// operator products rather than stored matrices.
#[derive(Debug, Clone)]
pub struct RotatedSystem {
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,
    /// Upper-triangular factor of the focus design.
    pub r: DMatrix<f64>,
    pub y1: DVector<f64>,
    pub y2: DVector<f64>,
    /// `Q1' X_f`, equal to `R`.
    pub a1: DMatrix<f64>,
    pub w: NuisanceDesign,
    pub partition: Partition,
}

impl RotatedSystem {
    pub fn t_len(&self) -> usize {
        self.q1.nrows()
    }

    pub fn k_focus(&self) -> usize {
        self.q1.ncols()
    }

    pub fn rows2(&self) -> usize {
        self.q2.ncols()
    }

    /// `Q1' W theta`.
    pub fn w1_mul(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.q1.tr_mul(&self.w.mul(theta))
    }

    /// `Q2' W theta`.
    pub fn w2_mul(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.q2.tr_mul(&self.w.mul(theta))
    }

    /// Projection matrices `B1 = Q1'(WW')Q1` and `B2 = Q2'(WW')Q1` needed to
    /// form the focus-block covariance of the nuisance approximation.
    pub fn proj_mats(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let ww = self.w.ww_t();
        let wq1 = &ww * &self.q1;
        (self.q1.tr_mul(&wq1), self.q2.tr_mul(&wq1))
    }

    /// `Q1' D Q1` for a diagonal matrix with entries `d` (used for the
    /// time-varying variance projection).
    pub fn q1_diag_q1(&self, d: &DVector<f64>) -> DMatrix<f64> {
        let mut scaled = self.q1.clone();
        for i in 0..scaled.nrows() {
            let di = d[i];
            scaled.row_mut(i).scale_mut(di);
        }
        self.q1.tr_mul(&scaled)
    }

    /// View of the second-stage rotated design `W2 = Q2'W` as an operator.
    pub fn w2_op(&self) -> W2Op<'_> {
        W2Op { rs: self }
    }

    /// Dense `Q2' W` for small tests.
    pub fn w2_dense(&self) -> DMatrix<f64> {
        self.q2.tr_mul(&self.w.dense())
    }

    /// Dense `Q1' W` for small tests.
    pub fn w1_dense(&self) -> DMatrix<f64> {
        self.q1.tr_mul(&self.w.dense())
    }
}

/// Operator view of `W2 = Q2' W`.
pub struct W2Op<'a> {
    rs: &'a RotatedSystem,
}

impl LinOp for W2Op<'_> {
    fn rows(&self) -> usize {
        self.rs.rows2()
    }

    fn cols(&self) -> usize {
        self.rs.w.m()
    }

    fn mul(&self, v: &DVector<f64>) -> DVector<f64> {
        self.rs.w2_mul(v)
    }

    fn tr_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        self.rs.w.tr_mul(&(&self.rs.q2 * v))
    }

    fn gram(&self) -> DMatrix<f64> {
        let ww = self.rs.w.ww_t();
        self.rs.q2.tr_mul(&(&ww * &self.rs.q2))
    }

    fn quad_norms(&self, b: &DMatrix<f64>) -> DVector<f64> {
        // s = B Q2' (p x T); column t gives B (Q2' e_t)
        let s = b * self.rs.q2.transpose();
        let col_sq: Vec<f64> = (0..s.ncols()).map(|t| s.column(t).norm_squared()).collect();
        let w = &self.rs.w;
        let md = w.demoted.ncols();
        let (t_len, k) = (w.tvp.t_len(), w.tvp.k());
        let mut out = DVector::zeros(self.cols());
        for j in 0..md {
            out[j] = (&s * w.demoted.column(j)).norm_squared();
        }
        for t in 0..t_len {
            for j in 0..k {
                let x = w.tvp.x[(t, j)];
                out[md + t * k + j] = x * x * col_sq[t];
            }
        }
        if w.has_eta() {
            let off = w.eta_offset().unwrap();
            for t in 0..t_len {
                out[off + t] = col_sq[t];
            }
        }
        out
    }
}

/// Rotate a standardized regression into the two likelihood systems.
///
/// `td` is the TVP design over the regressor columns (normally excluding an
/// intercept column, whose time variation is carried by the eta block).
pub fn rotate_system(
    sr: &StandardizedRegression,
    td: &TvpDesign,
    part: &Partition,
) -> Result<RotatedSystem> {
    let t = sr.t_len();
    if td.t_len() != t {
        return Err(Error::Dim("TVP design and regression disagree on T".into()));
    }
    let x_f = select_columns(&sr.x, &part.focus);
    let (q1, q2, r) = qr_partition(&x_f)?;
    let demoted = select_columns(&sr.x, &part.nuisance);
    let w = NuisanceDesign { demoted, tvp: td.clone() };
    let y1 = q1.tr_mul(&sr.y);
    let y2 = q2.tr_mul(&sr.y);
    let a1 = r.clone();
    Ok(RotatedSystem { q1, q2, r, y1, y2, a1, w, partition: part.clone() })
}

fn select_columns(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), idx.len(), |r, c| x[(r, idx[c])])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_tvp_design, standardize};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn randn_mat(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
    }

    fn randn_vec(rng: &mut impl Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
    }

    #[test]
    fn qr_of_identity_columns() {
        let t = 6;
        let k = 3;
        let x = DMatrix::from_fn(t, k, |i, j| if i == j { 1.0 } else { 0.0 });
        let (q1, q2, r) = qr_partition(&x).unwrap();
        assert_relative_eq!(q1, x, epsilon = 1e-14);
        assert_relative_eq!(r, DMatrix::identity(k, k), epsilon = 1e-14);
        assert_relative_eq!(q2.tr_mul(&x), DMatrix::zeros(t - k, k), epsilon = 1e-14);
    }

    #[test]
    fn qr_annihilates_focus_design() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let x = randn_mat(&mut rng, 50, 5);
        let (q1, q2, r) = qr_partition(&x).unwrap();
        assert!((q2.tr_mul(&x)).amax() < 1e-8);
        assert_relative_eq!(&q1 * &r, x, epsilon = 1e-10);
        // orthonormality of the full Q
        let mut q = DMatrix::zeros(50, 50);
        q.columns_mut(0, 5).copy_from(&q1);
        q.columns_mut(5, 45).copy_from(&q2);
        assert!((q.tr_mul(&q) - DMatrix::identity(50, 50)).amax() < 1e-10);
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut x = randn_mat(&mut rng, 20, 3);
        let col0 = x.column(0).into_owned();
        x.set_column(2, &col0);
        let err = qr_partition(&x).unwrap_err();
        assert!(matches!(err, Error::RankDeficient(_)), "{err}");
        assert!(err.to_string().contains("column 2"), "{err}");
    }

    #[test]
    fn partition_modes() {
        // N=3, P=2, equation index 2 (third equation): intercept + 6 lags + 2 contemporaneous
        let own = 1usize;
        let mut layout = vec![ColumnRole::Intercept];
        for lag in 1..=2 {
            for var in 0..3 {
                layout.push(if var == own {
                    ColumnRole::OwnLag { lag }
                } else {
                    ColumnRole::CrossLag { var, lag }
                });
            }
        }
        layout.push(ColumnRole::Contemporaneous { var: 0 });
        layout.push(ColumnRole::Contemporaneous { var: 2 });

        let p = make_partition(&layout, 200, PartitionMode::TvpsOnly).unwrap();
        assert_eq!(p.k_focus(), 3 * 2 + 2 + 1);
        assert!(p.nuisance.is_empty());

        let p = make_partition(&layout, 200, PartitionMode::TvpsAndLag).unwrap();
        // loses the two lag-2 cross columns
        assert_eq!(p.k_focus(), 9 - 2);
        assert_eq!(p.nuisance.len(), 2);

        // infeasible focus block
        let wide: Vec<ColumnRole> = (0..157).map(|_| ColumnRole::Generic).collect();
        let err = make_partition(&wide, 100, PartitionMode::TvpsOnly).unwrap_err();
        assert!(err.to_string().contains("157"), "{err}");
    }

    #[test]
    fn large_var_partition_counts() {
        // 78 variables, 2 lags, first equation: focus = intercept + 2 own lags
        // + 77 first-order cross lags = 80; 77 second-order cross lags demoted.
        let own = 0usize;
        let mut layout = vec![ColumnRole::Intercept];
        for lag in 1..=2 {
            for var in 0..78 {
                layout.push(if var == own {
                    ColumnRole::OwnLag { lag }
                } else {
                    ColumnRole::CrossLag { var, lag }
                });
            }
        }
        let p = make_partition(&layout, 200, PartitionMode::TvpsAndLag).unwrap();
        assert_eq!(p.k_focus(), 80);
        assert_eq!(p.nuisance.len(), 77);
    }

    fn toy_system(
        seed: u64,
        t: usize,
        k_f: usize,
        with_eta: bool,
    ) -> (StandardizedRegression, TvpDesign, Partition) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let x = randn_mat(&mut rng, t, k_f);
        let y = randn_vec(&mut rng, t);
        let sr = standardize(&y, &x).unwrap();
        let td = build_tvp_design(&sr.x, with_eta);
        let layout = vec![ColumnRole::Generic; k_f];
        let part = make_partition(&layout, t, PartitionMode::TvpsOnly).unwrap();
        (sr, td, part)
    }

    #[test]
    fn rotation_reconstructs_and_separates() {
        let (sr, td, part) = toy_system(7, 30, 3, false);
        let rs = rotate_system(&sr, &td, &part).unwrap();
        // Q1 y1 + Q2 y2 = y
        let back = &rs.q1 * &rs.y1 + &rs.q2 * &rs.y2;
        assert!((back - &sr.y).norm() < 1e-10);
        // energy preserved
        assert_relative_eq!(
            rs.y1.norm_squared() + rs.y2.norm_squared(),
            sr.y.norm_squared(),
            epsilon = 1e-8
        );
    }

    #[test]
    fn noiseless_known_nuisance_satisfies_second_system() {
        let t = 12;
        let k = 2;
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let x = randn_mat(&mut rng, t, k);
        let gamma_eta = randn_vec(&mut rng, t * k + t);
        let td = build_tvp_design(&x, true);
        // y = Z gamma + eta exactly (beta = 0, eps = 0)
        let y = td.mul(&gamma_eta);
        let sr = StandardizedRegression { y, x: x.clone(), scale_y: 1.0, scale_x: vec![1.0; k] };
        let part = make_partition(&[ColumnRole::Generic; 2], t, PartitionMode::TvpsOnly).unwrap();
        let rs = rotate_system(&sr, &td, &part).unwrap();
        let w2_theta = rs.w2_mul(&gamma_eta);
        assert!((&rs.y2 - w2_theta).norm() < 1e-10);

        // gamma = 0, eta = 0, eps = 0 -> y2 = 0 and y1 = A1 beta
        let beta = randn_vec(&mut rng, k);
        let y = &x * &beta;
        let sr = StandardizedRegression { y, x: x.clone(), scale_y: 1.0, scale_x: vec![1.0; k] };
        let rs = rotate_system(&sr, &td, &part).unwrap();
        assert!(rs.y2.norm() < 1e-10);
        assert!((&rs.y1 - &rs.a1 * &beta).norm() < 1e-10);
    }

    #[test]
    fn operator_matches_dense_realization() {
        let t = 14;
        let k = 3;
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let x = randn_mat(&mut rng, t, k + 2);
        let y = randn_vec(&mut rng, t);
        let sr = standardize(&y, &x).unwrap();
        let td = build_tvp_design(&sr.x, true);
        // demote the last two columns
        let part = Partition {
            focus: (0..k).collect(),
            nuisance: vec![k, k + 1],
            mode: PartitionMode::TvpsAndLag,
        };
        let rs = rotate_system(&sr, &td, &part).unwrap();
        let op = rs.w2_op();
        let dense = rs.w2_dense();
        assert_eq!(op.cols(), dense.ncols());

        let v = randn_vec(&mut rng, op.cols());
        assert!((op.mul(&v) - &dense * &v).norm() < 1e-10);
        let u = randn_vec(&mut rng, op.rows());
        assert!((op.tr_mul(&u) - dense.tr_mul(&u)).norm() < 1e-10);
        assert!((op.gram() - &dense * dense.transpose()).amax() < 1e-10);

        let b = randn_mat(&mut rng, 5, op.rows());
        let qn = op.quad_norms(&b);
        let s = &b * &dense;
        for j in 0..op.cols() {
            assert_relative_eq!(qn[j], s.column(j).norm_squared(), epsilon = 1e-10, max_relative = 1e-8);
        }

        // W1 products agree with the dense realization too
        let w1 = rs.w1_dense();
        assert!((rs.w1_mul(&v) - &w1 * &v).norm() < 1e-10);
        let (b1, b2) = rs.proj_mats();
        assert!((&b1 - &w1 * w1.transpose()).amax() < 1e-9);
        assert!((&b2 - &dense * w1.transpose()).amax() < 1e-9);
    }

    #[test]
    fn partition_is_a_pure_permutation() {
        // permuting the layout permutes the index sets identically
        let layout = vec![
            ColumnRole::Intercept,
            ColumnRole::CrossLag { var: 1, lag: 2 },
            ColumnRole::OwnLag { lag: 1 },
            ColumnRole::CrossLag { var: 2, lag: 1 },
        ];
        let perm = [2usize, 0, 3, 1];
        let permuted: Vec<ColumnRole> = perm.iter().map(|&i| layout[i]).collect();
        let p0 = make_partition(&layout, 100, PartitionMode::TvpsAndLag).unwrap();
        let p1 = make_partition(&permuted, 100, PartitionMode::TvpsAndLag).unwrap();
        let mapped: Vec<usize> = p1.focus.iter().map(|&i| perm[i]).collect();
        let mut sorted = mapped.clone();
        sorted.sort_unstable();
        let mut f0 = p0.focus.clone();
        f0.sort_unstable();
        assert_eq!(sorted, f0);
    }
}
