//! Social-disorganization measures: ethnic diversity and PCA composites.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::linalg::{mean, sample_variance};
use crate::{Error, Result};

/// Hirschman-Herfindahl diversity `1 - Σ s_i²` after renormalizing shares.
pub fn hhi_diversity(shares: &[f64]) -> Result<f64> {
    let total: f64 = shares.iter().sum();
    if !(total > 0.0) || shares.iter().any(|&s| s < 0.0) {
        return Err(Error::NoPopulation);
    }
    Ok(1.0 - shares.iter().map(|s| (s / total) * (s / total)).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdComposites {
    pub disadvantage: Vec<f64>,
    pub instability: Vec<f64>,
    /// Rows: unemployment, poverty, residential mobility. Columns:
    /// disadvantage, instability.
    pub loadings: DMatrix<f64>,
    /// All three eigenvalues of the correlation matrix, descending.
    pub eigenvalues: [f64; 3],
    /// Full 3×3 loading matrix (columns are components).
    pub components: Matrix3<f64>,
}

pub const SD_RATE_NAMES: [&str; 3] = ["unemployment_rate", "poverty_rate", "residential_mobility_rate"];

/// Principal components of the correlation matrix of the three rates.
/// Component 1 is oriented to load positively on poverty, component 2 on
/// residential mobility.
pub fn sd_composites(unemployment: &[f64], poverty: &[f64], mobility: &[f64]) -> Result<SdComposites> {
    let n = unemployment.len();
    if n < 3 || poverty.len() != n || mobility.len() != n {
        return Err(Error::Dimension(format!("need three equal columns of length >= 3, got {n}")));
    }
    let cols = [unemployment, poverty, mobility];
    let mut z = DMatrix::zeros(n, 3);
    for (j, c) in cols.iter().enumerate() {
        let sd = sample_variance(c).sqrt();
        if !(sd > 1e-12 * (1.0 + mean(c).abs())) {
            return Err(Error::ConstantColumn { variable: SD_RATE_NAMES[j].to_string() });
        }
        let m = mean(c);
        for i in 0..n {
            z[(i, j)] = (c[i] - m) / sd;
        }
    }
    let corr = (z.transpose() * &z) / (n as f64 - 1.0);
    let corr3 = Matrix3::from_iterator(corr.iter().copied());
    let sym = (corr3 + corr3.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut comps = Matrix3::zeros();
    for (k, &i) in order.iter().enumerate() {
        let mut v: Vector3<f64> = eig.eigenvectors.column(i).into_owned();
        let anchor = match k {
            0 => 1,
            1 => 2,
            _ => 0,
        };
        if v[anchor] < 0.0 || (v[anchor] == 0.0 && v.iter().find(|x| x.abs() > 1e-12).is_some_and(|&x| x < 0.0)) {
            v = -v;
        }
        comps.set_column(k, &v);
    }
    let scores = &z * DMatrix::from_iterator(3, 3, comps.iter().copied());
    let loadings = DMatrix::from_iterator(3, 2, comps.columns(0, 2).iter().copied());
    Ok(SdComposites {
        disadvantage: scores.column(0).iter().copied().collect(),
        instability: scores.column(1).iter().copied().collect(),
        loadings,
        eigenvalues: [
            eig.eigenvalues[order[0]],
            eig.eigenvalues[order[1]],
            eig.eigenvalues[order[2]],
        ],
        components: comps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn hhi_examples() {
        assert_eq!(hhi_diversity(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((hhi_diversity(&[1.0 / 6.0; 6]).unwrap() - 5.0 / 6.0).abs() < 1e-12);
        assert!((hhi_diversity(&[0.5, 0.5, 0.0, 0.0, 0.0, 0.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(hhi_diversity(&[0.0; 6]), Err(Error::NoPopulation)));
    }

    // Oracle for the collinear case: the correlation matrix is
    // [[1,1,0],[1,1,0],[0,0,1]] with eigenpairs 2:(1,1,0)/√2, 1:(0,0,1), 0.
    #[test]
    fn collinear_poverty_and_unemployment() {
        let pov = [0.1, 0.3, 0.1, 0.3];
        let mob = [0.2, 0.2, 0.4, 0.4];
        let sd = sd_composites(&pov, &pov, &mob).unwrap();
        let h = 1.0 / 2f64.sqrt();
        let expect = [h, h, 0.0, 0.0, 0.0, 1.0];
        for (a, b) in sd.loadings.iter().zip(expect) {
            assert!((a - b).abs() < 1e-10, "{:?}", sd.loadings);
        }
        assert!((sd.eigenvalues[0] - 2.0).abs() < 1e-10);
        assert!((sd.eigenvalues[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn flipping_mobility_flips_only_instability_scores() {
        let u = [0.1, 0.2, 0.15, 0.4, 0.3, 0.05];
        let p = [0.12, 0.25, 0.1, 0.35, 0.33, 0.07];
        let m = [0.3, 0.1, 0.2, 0.25, 0.05, 0.4];
        let neg: Vec<f64> = m.iter().map(|x| -x).collect();
        let a = sd_composites(&u, &p, &m).unwrap();
        let b = sd_composites(&u, &p, &neg).unwrap();
        for i in 0..6 {
            assert!((a.disadvantage[i] - b.disadvantage[i]).abs() < 1e-10);
        }
        for i in 0..6 {
            assert!((a.instability[i] + b.instability[i]).abs() < 1e-10);
        }
        assert!((a.loadings[(0, 0)] - b.loadings[(0, 0)]).abs() < 1e-10);
    }

    #[test]
    fn loadings_orthonormal_and_reconstruct_correlation() {
        let u = [0.1, 0.2, 0.15, 0.4, 0.3, 0.05, 0.22];
        let p = [0.12, 0.25, 0.1, 0.35, 0.33, 0.07, 0.2];
        let m = [0.3, 0.1, 0.2, 0.25, 0.05, 0.4, 0.31];
        let sd = sd_composites(&u, &p, &m).unwrap();
        let v = sd.components;
        assert!(((v.transpose() * v) - Matrix3::identity()).abs().max() < 1e-10);
        let lam = Matrix3::from_diagonal(&Vector3::from(sd.eigenvalues));
        let recon = v * lam * v.transpose();
        let cols = [&u[..], &p[..], &m[..]];
        for a in 0..3 {
            for b in 0..3 {
                let r = crate::linalg::pearson(cols[a], cols[b]);
                assert!((recon[(a, b)] - r).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn independent_columns_give_unit_spectrum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 20_000;
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..n).map(|_| StandardNormal.sample(rng)).collect()
        };
        let (a, b, c) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let sd = sd_composites(&a, &b, &c).unwrap();
        // the correlation matrix tends to the identity, whose spectrum is
        // degenerate: only the eigenvalues are pinned down
        for l in sd.eigenvalues {
            assert!((l - 1.0).abs() < 0.1, "{:?}", sd.eigenvalues);
        }
    }

    #[test]
    fn constant_column_is_named() {
        match sd_composites(&[0.1, 0.2, 0.3], &[0.2, 0.2, 0.2], &[0.1, 0.5, 0.3]) {
            Err(Error::ConstantColumn { variable }) => assert_eq!(variable, "poverty_rate"),
            other => panic!("{other:?}"),
        }
    }
}
