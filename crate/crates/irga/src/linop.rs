//! Minimal linear-operator abstraction for the nuisance regression stage.
//!
//! The nuisance design has far more columns than rows (T*K + T columns for T
//! rows), but every quantity the approximation needs can be expressed through
//! products with the operator and its T x T Gram matrix. Implementations
//! therefore never materialize the full matrix.

use nalgebra::{DMatrix, DVector};

/// A real linear map `A` of shape rows x cols exposing the products the
/// message-passing stage needs.
pub trait LinOp {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;

    /// `A v` for a cols-vector.
    fn mul(&self, v: &DVector<f64>) -> DVector<f64>;

    /// `A' v` for a rows-vector.
    fn tr_mul(&self, v: &DVector<f64>) -> DVector<f64>;

    /// The rows x rows Gram matrix `A A'`.
    fn gram(&self) -> DMatrix<f64>;

    /// Per-column quadratic forms `||B a_j||^2` for a p x rows matrix `B`,
    /// where `a_j` is the j-th column of `A`. Used for posterior-variance
    /// diagonals without touching all columns individually.
    fn quad_norms(&self, b: &DMatrix<f64>) -> DVector<f64>;
}

/// Dense operator for small systems and test oracles.
#[derive(Debug, Clone)]
pub struct DenseOp(pub DMatrix<f64>);

impl LinOp for DenseOp {
    fn rows(&self) -> usize {
        self.0.nrows()
    }

    fn cols(&self) -> usize {
        self.0.ncols()
    }

    fn mul(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.0 * v
    }

    fn tr_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        self.0.tr_mul(v)
    }

    fn gram(&self) -> DMatrix<f64> {
        &self.0 * self.0.transpose()
    }

    fn quad_norms(&self, b: &DMatrix<f64>) -> DVector<f64> {
        let s = b * &self.0;
        DVector::from_iterator(self.cols(), s.column_iter().map(|c| c.norm_squared()))
    }
}
