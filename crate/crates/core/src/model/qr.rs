//! Scaled thin QR used to decorrelate the design before sampling.

use nalgebra::{DMatrix, DVector};

use crate::linalg::thin_qr;
use crate::Result;

/// `X = Q* R*` with `Q* = Q √(N-1)` (unit sample variance columns for a
/// centered design) and `R* = R / √(N-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QrDecorrelation {
    pub q_star: DMatrix<f64>,
    pub r_star: DMatrix<f64>,
    pub r_star_inv: DMatrix<f64>,
}

impl QrDecorrelation {
    pub fn new(x: &DMatrix<f64>, names: Option<&[String]>) -> Result<Self> {
        let n = x.nrows();
        let p = x.ncols();
        if p == 0 {
            return Ok(QrDecorrelation {
                q_star: DMatrix::zeros(n, 0),
                r_star: DMatrix::zeros(0, 0),
                r_star_inv: DMatrix::zeros(0, 0),
            });
        }
        let (q, r) = thin_qr(x, names)?;
        let s = ((n.max(2) - 1) as f64).sqrt();
        let r_star = r / s;
        let r_star_inv = r_star
            .clone()
            .solve_upper_triangular(&DMatrix::identity(p, p))
            .expect("full-rank factor");
        Ok(QrDecorrelation { q_star: q * s, r_star, r_star_inv })
    }

    /// `β = R*⁻¹ β̃`.
    pub fn to_beta(&self, beta_tilde: &DVector<f64>) -> DVector<f64> {
        &self.r_star_inv * beta_tilde
    }

    /// `β̃ = R* β`.
    pub fn to_tilde(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.r_star * beta
    }
}
