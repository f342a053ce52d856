//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Relative tolerance on `|R_jj| / max |R_ii|` below which a column is
/// treated as linearly dependent on the preceding ones.
pub const RANK_TOL: f64 = 1e-10;

/// Thin Householder QR, `x = q r` with `q` N×P orthonormal and `r` P×P upper
/// triangular. Fails when `x` is rank deficient, naming dependent columns.
pub fn thin_qr(x: &DMatrix<f64>, names: Option<&[String]>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, p) = x.shape();
    if n < p {
        return Err(Error::Dimension(format!("{n} rows for {p} columns")));
    }
    let qr = x.clone().qr();
    let q = qr.q();
    let mut r = qr.r();
    // fix signs so that diag(r) > 0: unique factorization
    let mut q = q;
    for j in 0..p {
        if r[(j, j)] < 0.0 {
            r.row_mut(j).neg_mut();
            q.column_mut(j).neg_mut();
        }
    }
    let scale = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    let dependent: Vec<String> = (0..p)
        .filter(|&j| !(r[(j, j)].abs() > RANK_TOL * scale.max(f64::MIN_POSITIVE)))
        .map(|j| names.and_then(|n| n.get(j).cloned()).unwrap_or_else(|| format!("column {j}")))
        .collect();
    if !dependent.is_empty() || p == 0 && n == 0 {
        return Err(Error::RankDeficient { columns: dependent });
    }
    Ok((q, r))
}

/// Solves `r x = b` for upper-triangular `r`.
pub fn solve_upper(r: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    r.solve_upper_triangular(b).expect("non-singular triangular factor")
}

/// Symmetric eigendecomposition with eigenvalues sorted descending and each
/// eigenvector's first entry with `|v| > 1e-12` made positive.
pub fn symmetric_eigen_desc(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        orient(&mut v);
        vectors.set_column(k, &v);
    }
    (values, vectors)
}

/// Makes the first entry with `|v| > 1e-12` positive.
pub fn orient(v: &mut DVector<f64>) {
    if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            v.neg_mut();
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

pub fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.into_iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qr_reconstructs_and_flags_dependence() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0, 2.0, 2.0]);
        let (q, r) = thin_qr(&x, None).unwrap();
        assert!(max_abs(&(&q * &r - &x)) < 1e-12);
        assert!(max_abs(&(q.transpose() * &q - DMatrix::identity(2, 2))) < 1e-12);

        let dep = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 1.0, 3.0, 6.0, 0.0]);
        let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        match thin_qr(&dep, Some(&names)) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec!["b".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn eigen_sorted_and_oriented() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (vals, vecs) = symmetric_eigen_desc(&a);
        assert!((vals[0] - 3.0).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
        assert!(vecs[(0, 0)] > 0.0 && vecs[(0, 1)] > 0.0);
    }
}
