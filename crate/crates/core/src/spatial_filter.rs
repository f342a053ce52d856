//! Moran eigenvector basis `E` drawn from `MCM`.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::connectivity::ConnectivityMatrix;
use crate::linalg::{symmetric_eigen_desc, thin_qr};
use crate::{Error, Result};

pub const DEFAULT_EIGEN_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenBasis {
    /// N×L, columns orthonormal.
    pub e: DMatrix<f64>,
    /// Retained eigenvalues, descending.
    pub lambdas: Vec<f64>,
    pub lambda_max: f64,
    pub threshold: f64,
}

impl EigenBasis {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn n(&self) -> usize {
        self.e.nrows()
    }

    /// Writes `eigenvalues.csv` and `eigenvectors.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("eigenvalues.csv"))?);
        writeln!(f, "index,lambda,ratio")?;
        for (l, lam) in self.lambdas.iter().enumerate() {
            writeln!(f, "{l},{lam},{}", lam / self.lambda_max)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("eigenvectors.csv"))?);
        let header: Vec<String> = (0..self.len()).map(|l| format!("e{l}")).collect();
        writeln!(f, "{}", header.join(","))?;
        for i in 0..self.n() {
            let row: Vec<String> = self.e.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(f, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Orthogonal projector onto the complement of `col(X)`, prepending an
/// intercept column to `x`: `M = I - Q Qᵀ` from a thin QR of `[1, X]`.
pub fn residual_projector(x: &DMatrix<f64>, names: Option<&[String]>) -> Result<DMatrix<f64>> {
    let q = design_basis(x, names)?;
    let n = x.nrows();
    Ok(DMatrix::identity(n, n) - &q * q.transpose())
}

fn design_basis(x: &DMatrix<f64>, names: Option<&[String]>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let p = x.ncols();
    if n <= p + 1 {
        return Err(Error::Dimension(format!("{n} units for {} design columns", p + 1)));
    }
    let mut design = DMatrix::from_element(n, p + 1, 1.0);
    design.view_mut((0, 1), (n, p)).copy_from(x);
    let labels: Option<Vec<String>> = names.map(|ns| {
        std::iter::once("intercept".to_string()).chain(ns.iter().cloned()).collect()
    });
    let (q, _) = thin_qr(&design, labels.as_deref())?;
    Ok(q)
}

/// Eigen-decomposes `MCM` and keeps vectors with `λ > 0` and
/// `λ / λ_max >= threshold`.
pub fn moran_eigenbasis(m: &DMatrix<f64>, c: &DMatrix<f64>, threshold: f64) -> Result<EigenBasis> {
    let mcm = m * c * m;
    select_basis(&mcm, threshold)
}

/// Same as [`moran_eigenbasis`] with `M` built from the design `x` without
/// materializing the projector twice.
pub fn eigenbasis_for_design(
    x: &DMatrix<f64>,
    names: Option<&[String]>,
    c: &ConnectivityMatrix,
    threshold: f64,
) -> Result<EigenBasis> {
    let q = design_basis(x, names)?;
    // MCM = (I - QQᵀ) C (I - QQᵀ)
    let c = &c.matrix;
    let a = c - &q * (q.transpose() * c);
    let mcm = &a - (&a * &q) * q.transpose();
    select_basis(&mcm, threshold)
}

fn select_basis(mcm: &DMatrix<f64>, threshold: f64) -> Result<EigenBasis> {
    let (values, vectors) = symmetric_eigen_desc(mcm);
    let lambda_max = values.first().copied().unwrap_or(0.0);
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    if !(lambda_max > 1e-10 * scale) || lambda_max <= 0.0 {
        return Err(Error::NoPositiveBasis);
    }
    let keep = select_indices(&values, threshold);
    let e = vectors.select_columns(&keep);
    Ok(EigenBasis {
        e,
        lambdas: keep.iter().map(|&i| values[i]).collect(),
        lambda_max,
        threshold,
    })
}

/// Indices of eigenvalues (sorted descending) passing the selection rule.
pub fn select_indices(values: &[f64], threshold: f64) -> Vec<usize> {
    let Some(&lambda_max) = values.first() else {
        return Vec::new();
    };
    if lambda_max <= 0.0 {
        return Vec::new();
    }
    let tiny = 1e-10 * lambda_max;
    values
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > tiny && l / lambda_max >= threshold)
        .map(|(i, _)| i)
        .collect()
}
