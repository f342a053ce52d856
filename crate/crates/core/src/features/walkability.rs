//! Network walkability: weighted, distance-decayed access to the nearest
//! amenities of each category along the street graph.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use geo::Point;
use rstar::primitives::GeomWithData;
use rstar::RTree;
use serde::{Deserialize, Serialize};

use crate::geo_core::{Block, Poi, PoiCategory, StreetGraph};
use crate::{Error, Result};

pub const DEFAULT_SNAP_RADIUS_M: f64 = 200.0;

/// Piecewise decay: flat to `d_full`, quadratic down to `knee_value` at
/// `d_knee`, then linear to zero at `d_zero`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub d_full: f64,
    pub d_knee: f64,
    pub d_zero: f64,
    pub knee_value: f64,
}

impl Default for DecayCurve {
    fn default() -> Self {
        DecayCurve { d_full: 500.0, d_knee: 1500.0, d_zero: 2400.0, knee_value: 0.1 }
    }
}

impl DecayCurve {
    pub fn eval(&self, d: f64) -> f64 {
        if d <= self.d_full {
            1.0
        } else if d <= self.d_knee {
            let r = (d - self.d_full) / (self.d_knee - self.d_full);
            1.0 - (1.0 - self.knee_value) * r * r
        } else if d <= self.d_zero {
            self.knee_value * (self.d_zero - d) / (self.d_zero - self.d_knee)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkCategory {
    pub category: PoiCategory,
    /// Weight of the i-th closest POI; its length is `n_c`.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkabilityConfig {
    pub categories: Vec<WalkCategory>,
    pub decay: DecayCurve,
    pub snap_radius_m: f64,
}

impl Default for WalkabilityConfig {
    fn default() -> Self {
        use PoiCategory::*;
        let cat = |category, weights: &[f64]| WalkCategory { category, weights: weights.to_vec() };
        WalkabilityConfig {
            categories: vec![
                cat(Grocery, &[3.0]),
                cat(Food, &[0.75, 0.45, 0.25, 0.25, 0.225, 0.225, 0.225, 0.225, 0.2, 0.2]),
                cat(Shops, &[0.5, 0.45, 0.4, 0.35, 0.3]),
                cat(Schools, &[1.0]),
                cat(Entertainment, &[1.0]),
                cat(Parks, &[1.0]),
                cat(Coffee, &[1.25, 0.75]),
                cat(Banks, &[1.0]),
                cat(Books, &[1.0]),
            ],
            decay: DecayCurve::default(),
            snap_radius_m: DEFAULT_SNAP_RADIUS_M,
        }
    }
}

impl WalkabilityConfig {
    /// Upper bound of a block score: the sum of all weights.
    pub fn max_score(&self) -> f64 {
        self.categories.iter().flat_map(|c| c.weights.iter()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.decay;
        if !(0.0 <= d.d_full && d.d_full < d.d_knee && d.d_knee < d.d_zero) {
            return Err(Error::config("walkability.decay", "breakpoints must satisfy 0 <= full < knee < zero"));
        }
        if !(0.0..=1.0).contains(&d.knee_value) {
            return Err(Error::config("walkability.decay.knee_value", "must lie in [0, 1]"));
        }
        if self.categories.iter().any(|c| c.weights.iter().any(|&w| !(w >= 0.0))) {
            return Err(Error::config("walkability.categories", "weights must be nonnegative"));
        }
        if !(self.snap_radius_m >= 0.0) {
            return Err(Error::config("walkability.snap_radius_m", "must be nonnegative"));
        }
        Ok(())
    }
}

type NodeEntry = GeomWithData<[f64; 2], usize>;

/// Street graph prepared for snapping and bounded shortest paths, with POIs
/// attached to their nearest node.
pub struct StreetIndex {
    adjacency: Vec<Vec<(usize, f64)>>,
    tree: RTree<NodeEntry>,
    /// Per node: (category slot in config, snap offset).
    pois_at: Vec<Vec<(usize, f64)>>,
    snap_radius: f64,
}

impl StreetIndex {
    pub fn new(graph: &StreetGraph, pois: &[Poi], cfg: &WalkabilityConfig) -> Self {
        let n = graph.nodes.len();
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b, w) in &graph.edges {
            adjacency[a].push((b, w));
            adjacency[b].push((a, w));
        }
        let tree = RTree::bulk_load(
            graph.nodes.iter().enumerate().map(|(i, p)| NodeEntry::new([p.x(), p.y()], i)).collect(),
        );
        let mut index = StreetIndex { adjacency, tree, pois_at: vec![Vec::new(); n], snap_radius: cfg.snap_radius_m };
        for poi in pois {
            let Some(slot) = cfg.categories.iter().position(|c| c.category == poi.category) else {
                continue;
            };
            if let Some((node, off)) = index.snap(poi.location) {
                index.pois_at[node].push((slot, off));
            }
        }
        index
    }

    /// Nearest node within the snap radius and the distance to it.
    pub fn snap(&self, p: Point<f64>) -> Option<(usize, f64)> {
        let nearest = self.tree.nearest_neighbor(&[p.x(), p.y()])?;
        let [x, y] = *nearest.geom();
        let d = ((x - p.x()).powi(2) + (y - p.y()).powi(2)).sqrt();
        (d <= self.snap_radius).then_some((nearest.data, d))
    }

    /// Network distances from `source` (starting at `start`) to every node
    /// reached within `cutoff`, as `(node, distance)` in settling order.
    pub fn bounded_dijkstra(&self, source: usize, start: f64, cutoff: f64) -> Vec<(usize, f64)> {
        #[derive(PartialEq)]
        struct Item(f64, usize);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Item {
            fn cmp(&self, other: &Self) -> Ordering {
                other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
            }
        }
        let mut best: std::collections::HashMap<usize, f64> = std::collections::HashMap::new();
        let mut settled = Vec::new();
        let mut heap = BinaryHeap::new();
        if start <= cutoff {
            best.insert(source, start);
            heap.push(Item(start, source));
        }
        let mut done = std::collections::HashSet::new();
        while let Some(Item(d, u)) = heap.pop() {
            if !done.insert(u) {
                continue;
            }
            settled.push((u, d));
            for &(v, w) in &self.adjacency[u] {
                let nd = d + w;
                if nd <= cutoff && best.get(&v).is_none_or(|&b| nd < b) {
                    best.insert(v, nd);
                    heap.push(Item(nd, v));
                }
            }
        }
        settled
    }

    /// Score of one location; `(0, true)` when it cannot be snapped.
    pub fn score(&self, at: Point<f64>, cfg: &WalkabilityConfig) -> (f64, bool) {
        let Some((src, off)) = self.snap(at) else {
            return (0.0, true);
        };
        let cutoff = cfg.decay.d_zero;
        let mut dists: Vec<Vec<f64>> = vec![Vec::new(); cfg.categories.len()];
        for (node, d) in self.bounded_dijkstra(src, off, cutoff) {
            for &(slot, poi_off) in &self.pois_at[node] {
                let total = d + poi_off;
                if total <= cutoff {
                    dists[slot].push(total);
                }
            }
        }
        let mut score = 0.0;
        for (cat, ds) in cfg.categories.iter().zip(dists.iter_mut()) {
            ds.sort_by(f64::total_cmp);
            for (w, d) in cat.weights.iter().zip(ds.iter()) {
                score += w * cfg.decay.eval(*d);
            }
        }
        (score, false)
    }
}

/// Per-block walkability at block centroids, with `unreachable` flags.
pub fn block_walkability(
    blocks: &[Block],
    graph: &StreetGraph,
    pois: &[Poi],
    cfg: &WalkabilityConfig,
) -> Vec<(f64, bool)> {
    let index = StreetIndex::new(graph, pois, cfg);
    let centroids: Vec<Point<f64>> = blocks.iter().map(|b| b.centroid()).collect();
    crate::par::map_indexed(blocks.len(), |i| index.score(centroids[i], cfg))
}

/// Mean over a set of block scores; `(0, true)` when empty.
pub fn corehood_walkability(scores: &[f64]) -> (f64, bool) {
    if scores.is_empty() {
        (0.0, true)
    } else {
        (scores.iter().sum::<f64>() / scores.len() as f64, false)
    }
}
