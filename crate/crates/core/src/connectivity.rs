//! Spatial relation matrices between corehoods and their Laplacian.
//!
//! The same object plays the role of both `C` (in `MCM`) and `W` (in Moran's
//! I and the Laplacian `Q = D - W`).

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use geo::Point;
use nalgebra::DMatrix;
use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::geo_core::{locate_point, unit_rects, Corehood, SpatialUnit, Trip};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectivityKind {
    Contiguity,
    Distance,
    Mobility,
}

impl ConnectivityKind {
    pub const ALL: [ConnectivityKind; 3] = [
        ConnectivityKind::Contiguity,
        ConnectivityKind::Distance,
        ConnectivityKind::Mobility,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConnectivityKind::Contiguity => "contiguity",
            ConnectivityKind::Distance => "distance",
            ConnectivityKind::Mobility => "mobility",
        }
    }
}

impl fmt::Display for ConnectivityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConnectivityKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "contiguity" | "binary" => Ok(ConnectivityKind::Contiguity),
            "distance" => Ok(ConnectivityKind::Distance),
            "mobility" => Ok(ConnectivityKind::Mobility),
            other => Err(Error::config(
                "connectivity",
                format!("unknown connectivity kind `{other}` (expected contiguity, distance or mobility)"),
            )),
        }
    }
}

/// Symmetric, nonnegative, zero-diagonal N×N relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityMatrix {
    pub kind: ConnectivityKind,
    pub matrix: DMatrix<f64>,
    /// MST threshold `t` in meters for the distance kind.
    pub threshold_m: Option<f64>,
}

impl ConnectivityMatrix {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn total_weight(&self) -> f64 {
        self.matrix.sum()
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.iter().all(|&v| v == 0.0)
    }

    /// Symmetry, zero diagonal and nonnegativity, exactly.
    pub fn check(&self) -> Result<()> {
        let m = &self.matrix;
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::Dimension("connectivity matrix is not square".into()));
        }
        for i in 0..n {
            if m[(i, i)] != 0.0 {
                return Err(Error::Domain(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                if m[(i, j)] != m[(j, i)] || m[(i, j)] < 0.0 || !m[(i, j)].is_finite() {
                    return Err(Error::Domain(format!("invalid entry at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }

    /// Writes a dense CSV (one row per unit) or, above 2000 units, an
    /// `i,j,value` coordinate list of the nonzero entries.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let n = self.n();
        if n > 2000 {
            writeln!(f, "i,j,value")?;
            for i in 0..n {
                for j in 0..n {
                    let v = self.matrix[(i, j)];
                    if v != 0.0 {
                        writeln!(f, "{i},{j},{v}")?;
                    }
                }
            }
        } else {
            for i in 0..n {
                let row: Vec<String> = (0..n).map(|j| self.matrix[(i, j)].to_string()).collect();
                writeln!(f, "{}", row.join(","))?;
            }
        }
        Ok(())
    }
}

/// `c_ij = 1` iff `i != j` and the member sets of corehoods `i` and `j` share
/// at least one unit.
pub fn contiguity_matrix(corehoods: &[Corehood]) -> ConnectivityMatrix {
    let n = corehoods.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if sorted_intersect(&corehoods[i].members, &corehoods[j].members) {
                m[(i, j)] = 1.0;
                m[(j, i)] = 1.0;
            }
        }
    }
    ConnectivityMatrix {
        kind: ConnectivityKind::Contiguity,
        matrix: m,
        threshold_m: None,
    }
}

fn sorted_intersect(a: &[usize], b: &[usize]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Equal => return true,
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    false
}

/// Longest edge of the Euclidean minimum spanning tree (Kruskal, ties broken
/// by `(i, j)` order).
pub fn mst_threshold(points: &[Point<f64>]) -> f64 {
    let n = points.len();
    let mut edges = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = points[i].x() - points[j].x();
            let dy = points[i].y() - points[j].y();
            edges.push(((dx * dx + dy * dy).sqrt(), i, j));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut uf = UnionFind::<usize>::new(n);
    let mut used = 0;
    let mut t: f64 = 0.0;
    for (d, i, j) in edges {
        if uf.union(i, j) {
            t = t.max(d);
            used += 1;
            if used + 1 == n {
                break;
            }
        }
    }
    t
}

/// Distance-decay relation: `c_ij = 1 - (d_ij / 4t)^2` for `0 < d_ij <= t`,
/// where `t` is the longest MST edge; zero beyond `t` and on the diagonal.
/// Coincident centroids get the maximum weight 1.
pub fn distance_matrix(centroids: &[Point<f64>]) -> Result<ConnectivityMatrix> {
    let n = centroids.len();
    if n < 2 {
        return Err(Error::Dimension("distance matrix needs at least 2 centroids".into()));
    }
    let t = mst_threshold(centroids);
    if !(t > 0.0) {
        return Err(Error::Domain("all centroids coincide".into()));
    }
    let mut m = DMatrix::zeros(n, n);
    let mut duplicates = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = centroids[i].x() - centroids[j].x();
            let dy = centroids[i].y() - centroids[j].y();
            let d = (dx * dx + dy * dy).sqrt();
            if d == 0.0 {
                duplicates += 1;
            }
            if d <= t {
                let r = d / (4.0 * t);
                let c = 1.0 - r * r;
                m[(i, j)] = c;
                m[(j, i)] = c;
            }
        }
    }
    if duplicates > 0 {
        log::warn!("{duplicates} pairs of coincident centroids; assigned weight 1");
    }
    Ok(ConnectivityMatrix {
        kind: ConnectivityKind::Distance,
        matrix: m,
        threshold_m: Some(t),
    })
}

/// Average daily trips between corehoods, symmetrized `(T + Tᵀ)/2` with the
/// diagonal zeroed. Trip endpoints are resolved to the unit containing them,
/// i.e. to the corehood of that core.
pub fn mobility_matrix(trips: &[Trip], units: &[SpatialUnit]) -> ConnectivityMatrix {
    let n = units.len();
    let rects = unit_rects(units);
    let mut t = DMatrix::<f64>::zeros(n, n);
    let mut days = std::collections::BTreeSet::new();
    for trip in trips {
        days.insert(trip.day);
        let (Some(o), Some(d)) = (
            locate_point(units, &rects, trip.origin),
            locate_point(units, &rects, trip.destination),
        ) else {
            continue;
        };
        t[(o, d)] += 1.0;
    }
    let n_days = days.len().max(1) as f64;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (t[(i, j)] + t[(j, i)]) / (2.0 * n_days);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    ConnectivityMatrix {
        kind: ConnectivityKind::Mobility,
        matrix: m,
        threshold_m: None,
    }
}

/// Builds the requested kind from a dataset's pieces.
pub fn build_connectivity(
    kind: ConnectivityKind,
    units: &[SpatialUnit],
    corehoods: &[Corehood],
    trips: &[Trip],
) -> Result<ConnectivityMatrix> {
    match kind {
        ConnectivityKind::Contiguity => Ok(contiguity_matrix(corehoods)),
        ConnectivityKind::Distance => {
            let c: Vec<Point<f64>> = units.iter().map(|u| u.centroid).collect();
            distance_matrix(&c)
        }
        ConnectivityKind::Mobility => Ok(mobility_matrix(trips, units)),
    }
}

/// Graph Laplacian `Q = D - C`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianMatrix {
    pub matrix: DMatrix<f64>,
    pub derived_from: ConnectivityKind,
}

pub fn laplacian(c: &ConnectivityMatrix) -> LaplacianMatrix {
    let n = c.n();
    let mut q = -c.matrix.clone();
    for i in 0..n {
        q[(i, i)] = c.matrix.row(i).sum();
    }
    LaplacianMatrix {
        matrix: q,
        derived_from: c.kind,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo_core::{build_corehoods, TripType};
    use geo::polygon;
    use rand::{Rng, SeedableRng};

    fn grid_units(rows: usize, cols: usize, side: f64) -> Vec<SpatialUnit> {
        let mut out = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let (x0, y0) = (c as f64 * side, r as f64 * side);
                out.push(SpatialUnit::new(
                    format!("u{r}_{c}"),
                    polygon![(x: x0, y: y0), (x: x0 + side, y: y0), (x: x0 + side, y: y0 + side), (x: x0, y: y0 + side), (x: x0, y: y0)],
                ));
            }
        }
        out
    }

    fn corehood(members: Vec<usize>) -> Corehood {
        Corehood {
            core_id: String::new(),
            core_index: members[0],
            member_ids: vec![],
            members,
            radius_m: 1.0,
        }
    }

    #[test]
    fn contiguity_basics() {
        let shared = contiguity_matrix(&[corehood(vec![0, 1]), corehood(vec![1, 2])]);
        assert_eq!(shared.matrix[(0, 1)], 1.0);
        assert_eq!(shared.matrix[(1, 0)], 1.0);
        let disjoint = contiguity_matrix(&[corehood(vec![0]), corehood(vec![1])]);
        assert!(disjoint.is_zero());
    }

    #[test]
    fn contiguity_grid_matches_set_oracle() {
        let units = grid_units(3, 3, 300.0);
        let ch = build_corehoods(&units, 804.67).unwrap();
        let c = contiguity_matrix(&ch);
        c.check().unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let a: std::collections::HashSet<_> = ch[i].members.iter().collect();
                let overlap = ch[j].members.iter().any(|m| a.contains(m));
                let expected = if i != j && overlap { 1.0 } else { 0.0 };
                assert_eq!(c.matrix[(i, j)], expected);
            }
        }
    }

    #[test]
    fn distance_matrix_values() {
        // collinear 0, 1, 2 km: MST edges 1 km each
        let pts = vec![Point::new(0.0, 0.0), Point::new(1000.0, 0.0), Point::new(2000.0, 0.0)];
        let c = distance_matrix(&pts).unwrap();
        assert_eq!(c.threshold_m, Some(1000.0));
        assert_eq!(c.matrix[(0, 2)], 0.0);
        assert!((c.matrix[(0, 1)] - 0.9375).abs() < 1e-15);
        assert_eq!(c.matrix[(1, 1)], 0.0);
        c.check().unwrap();
    }

    #[test]
    fn distance_graph_is_connected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let pts: Vec<Point<f64>> = (0..30)
                .map(|_| Point::new(rng.random_range(0.0..5000.0), rng.random_range(0.0..5000.0)))
                .collect();
            let c = distance_matrix(&pts).unwrap();
            let mut uf = UnionFind::<usize>::new(30);
            for i in 0..30 {
                for j in 0..30 {
                    if c.matrix[(i, j)] > 0.0 {
                        uf.union(i, j);
                    }
                }
            }
            let root = uf.find(0);
            assert!((0..30).all(|i| uf.find(i) == root));
        }
    }

    #[test]
    fn mobility_symmetrizes_and_zeroes_diagonal() {
        let units = grid_units(1, 2, 100.0);
        let trip = |o: (f64, f64), d: (f64, f64)| Trip {
            person_id: "p".into(),
            day: 0,
            origin: Point::new(o.0, o.1),
            destination: Point::new(d.0, d.1),
            kind: TripType::Nhb,
        };
        let mut trips = Vec::new();
        for _ in 0..4 {
            trips.push(trip((50.0, 50.0), (150.0, 50.0)));
        }
        for _ in 0..2 {
            trips.push(trip((150.0, 50.0), (50.0, 50.0)));
        }
        trips.push(trip((10.0, 50.0), (60.0, 50.0)));
        let c = mobility_matrix(&trips, &units);
        assert_eq!(c.matrix[(0, 1)], 3.0);
        assert_eq!(c.matrix[(1, 0)], 3.0);
        assert_eq!(c.matrix[(0, 0)], 0.0);
        assert!(mobility_matrix(&[], &units).is_zero());
    }

    #[test]
    fn laplacian_properties() {
        let c = ConnectivityMatrix {
            kind: ConnectivityKind::Contiguity,
            matrix: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            threshold_m: None,
        };
        let q = laplacian(&c);
        assert_eq!(q.matrix, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut m = DMatrix::zeros(10, 10);
        for i in 0..10 {
            for j in (i + 1)..10 {
                let v: f64 = if rng.random_bool(0.4) { rng.random_range(0.0..3.0) } else { 0.0 };
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let q = laplacian(&ConnectivityMatrix {
            kind: ConnectivityKind::Distance,
            matrix: m,
            threshold_m: None,
        });
        for i in 0..10 {
            assert!(q.matrix.row(i).sum().abs() < 1e-9);
        }
        let eig = q.matrix.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-9));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("Contiguity".parse::<ConnectivityKind>().unwrap(), ConnectivityKind::Contiguity);
        match "radial".parse::<ConnectivityKind>() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "connectivity"),
            other => panic!("{other:?}"),
        }
    }
}
