use geo::{BoundingRect, Distance, Euclidean, Rect};
use serde::{Deserialize, Serialize};

use super::types::{validate_polygon, SpatialUnit};
use crate::{par, Error, Result};

/// A core unit and every unit whose geometry intersects the core buffered by
/// `radius_m`. The core itself is always a member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corehood {
    pub core_id: String,
    pub core_index: usize,
    /// Member unit indices, ascending.
    pub members: Vec<usize>,
    pub member_ids: Vec<String>,
    pub radius_m: f64,
}

impl Corehood {
    pub fn contains(&self, unit_index: usize) -> bool {
        self.members.binary_search(&unit_index).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Corehoods with fewer than three members sit on the city edge or are
    /// isolated; their contextual features rest on very few units.
    pub fn is_boundary_affected(&self) -> bool {
        self.members.len() < 3
    }
}

fn expanded(r: Rect<f64>, by: f64) -> Rect<f64> {
    Rect::new(
        (r.min().x - by, r.min().y - by),
        (r.max().x + by, r.max().y + by),
    )
}

fn rects_overlap(a: &Rect<f64>, b: &Rect<f64>) -> bool {
    a.min().x <= b.max().x && b.min().x <= a.max().x && a.min().y <= b.max().y && b.min().y <= a.max().y
}

/// Builds one corehood per unit, in unit order.
///
/// Membership: `v ∈ corehood(u)` iff the planar distance between the two
/// polygons is at most `radius_m`, i.e. `v` intersects `buffer(u, radius_m)`.
pub fn build_corehoods(units: &[SpatialUnit], radius_m: f64) -> Result<Vec<Corehood>> {
    if units.is_empty() {
        return Err(Error::NoUnits);
    }
    if !(radius_m > 0.0) {
        return Err(Error::config("radius_m", format!("must be > 0, got {radius_m}")));
    }
    for u in units {
        validate_polygon(&u.id, &u.geometry)?;
    }
    let rects: Vec<Rect<f64>> = units
        .iter()
        .map(|u| u.geometry.bounding_rect().expect("validated polygon"))
        .collect();

    let corehoods = par::map_indexed(units.len(), |i| {
        let search = expanded(rects[i], radius_m);
        let members: Vec<usize> = (0..units.len())
            .filter(|&j| {
                i == j
                    || (rects_overlap(&search, &rects[j])
                        && Euclidean.distance(&units[i].geometry, &units[j].geometry) <= radius_m)
            })
            .collect();
        Corehood {
            core_id: units[i].id.clone(),
            core_index: i,
            member_ids: members.iter().map(|&j| units[j].id.clone()).collect(),
            members,
            radius_m,
        }
    });

    let sparse = corehoods.iter().filter(|c| c.is_boundary_affected()).count();
    if sparse > 0 {
        log::warn!("{sparse} corehoods have fewer than 3 members (boundary effect) at radius {radius_m} m");
    }
    Ok(corehoods)
}

/// Index of the unit containing `p`, preferring the lowest index for points
/// on shared boundaries.
pub fn locate_point(units: &[SpatialUnit], rects: &[Rect<f64>], p: geo::Point<f64>) -> Option<usize> {
    use geo::Intersects;
    (0..units.len()).find(|&i| {
        let r = &rects[i];
        p.x() >= r.min().x
            && p.x() <= r.max().x
            && p.y() >= r.min().y
            && p.y() <= r.max().y
            && units[i].geometry.intersects(&p)
    })
}

/// Bounding rectangles of all units, for use with [`locate_point`].
pub fn unit_rects(units: &[SpatialUnit]) -> Vec<Rect<f64>> {
    units
        .iter()
        .map(|u| u.geometry.bounding_rect().expect("non-empty polygon"))
        .collect()
}
