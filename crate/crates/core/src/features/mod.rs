//! Per-core covariates in four groups and the standardized feature matrix.
//!
//! Core features describe the core unit itself. Social-disorganization (SD),
//! built-environment (BE) and mobility (M) features describe the corehood:
//! counts are summed over member units, rates are population-weighted,
//! diversity indices use the pooled corehood composition and block measures
//! are taken over all blocks of all members.

mod landuse;
mod mobility;
mod social;
mod structure;
mod walkability;

pub use landuse::{land_use_mix, unit_landuse_areas};
pub use mobility::{ambient_population, attractiveness, MIN_STAY_HOURS};
pub use social::{hhi_diversity, sd_composites, SdComposites, SD_RATE_NAMES};
pub use structure::{avg_block_area, building_age_diversity, population_density};
pub use walkability::{
    block_walkability, corehood_walkability, DecayCurve, StreetIndex, WalkCategory, WalkabilityConfig,
    DEFAULT_SNAP_RADIUS_M,
};

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::geo_core::{locate_point, unit_rects, CityDataset, Corehood, PoiCategory};
use crate::linalg::{mean, sample_variance};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureGroup {
    Core,
    #[serde(rename = "SD")]
    Sd,
    #[serde(rename = "BE")]
    Be,
    M,
}

impl FeatureGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureGroup::Core => "Core",
            FeatureGroup::Sd => "SD",
            FeatureGroup::Be => "BE",
            FeatureGroup::M => "M",
        }
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// All features in canonical column order, with their group.
pub const FEATURES: [(&str, FeatureGroup); 14] = [
    ("residential_population", FeatureGroup::Core),
    ("nightlife_pois", FeatureGroup::Core),
    ("shops_pois", FeatureGroup::Core),
    ("food_pois", FeatureGroup::Core),
    ("ambient_population", FeatureGroup::Core),
    ("disadvantage", FeatureGroup::Sd),
    ("instability", FeatureGroup::Sd),
    ("ethnic_diversity", FeatureGroup::Sd),
    ("land_use_mix", FeatureGroup::Be),
    ("avg_block_area", FeatureGroup::Be),
    ("building_age_diversity", FeatureGroup::Be),
    ("dwelling_density", FeatureGroup::Be),
    ("walkability", FeatureGroup::Be),
    ("attractiveness", FeatureGroup::M),
];

/// One feature per role: the reduced set used for the minimal models.
pub const MINIMAL_FEATURES: [&str; 8] = [
    "residential_population",
    "shops_pois",
    "food_pois",
    "ambient_population",
    "disadvantage",
    "ethnic_diversity",
    "avg_block_area",
    "attractiveness",
];

/// Which columns enter the model. Core is always part of a group selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeatureSelection {
    Groups(BTreeSet<FeatureGroup>),
    Minimal,
    /// Explicit column list, in the given order.
    Columns(Vec<String>),
}

impl FeatureSelection {
    pub fn all() -> Self {
        FeatureSelection::Groups(
            [FeatureGroup::Core, FeatureGroup::Sd, FeatureGroup::Be, FeatureGroup::M].into(),
        )
    }

    pub fn groups(groups: &[FeatureGroup]) -> Self {
        let mut set: BTreeSet<FeatureGroup> = groups.iter().copied().collect();
        set.insert(FeatureGroup::Core);
        FeatureSelection::Groups(set)
    }

    /// Column names selected, in order.
    pub fn columns(&self) -> Vec<String> {
        match self {
            FeatureSelection::Groups(gs) => FEATURES
                .iter()
                .filter(|(_, g)| *g == FeatureGroup::Core || gs.contains(g))
                .map(|(n, _)| n.to_string())
                .collect(),
            FeatureSelection::Minimal => MINIMAL_FEATURES.iter().map(|s| s.to_string()).collect(),
            FeatureSelection::Columns(cs) => cs.clone(),
        }
    }
}

impl fmt::Display for FeatureSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureSelection::Groups(gs) => {
                let names: Vec<&str> = gs.iter().map(|g| g.as_str()).collect();
                f.write_str(&names.join("+"))
            }
            FeatureSelection::Minimal => f.write_str("Minimal"),
            FeatureSelection::Columns(cs) => write!(f, "columns:{}", cs.join(",")),
        }
    }
}

impl FromStr for FeatureSelection {
    type Err = Error;

    /// Accepts `Minimal`, `all`, a `+`-joined group list such as `SD+BE+M`,
    /// or `columns:a,b,c`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("columns:") {
            let cols: Vec<String> = rest.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect();
            for c in &cols {
                if !FEATURES.iter().any(|(n, _)| n == c) {
                    return Err(Error::config("features", format!("unknown feature `{c}`")));
                }
            }
            if cols.is_empty() {
                return Err(Error::config("features", "empty column list"));
            }
            return Ok(FeatureSelection::Columns(cols));
        }
        match s.to_ascii_lowercase().as_str() {
            "minimal" => return Ok(FeatureSelection::Minimal),
            "all" => return Ok(FeatureSelection::all()),
            _ => {}
        }
        let mut groups = Vec::new();
        for part in s.split('+') {
            groups.push(match part.trim().to_ascii_lowercase().as_str() {
                "core" => FeatureGroup::Core,
                "sd" => FeatureGroup::Sd,
                "be" => FeatureGroup::Be,
                "m" => FeatureGroup::M,
                other => {
                    return Err(Error::config(
                        "features",
                        format!("unknown feature group `{other}` (expected Core, SD, BE, M, Minimal, all or columns:...)"),
                    ))
                }
            });
        }
        Ok(FeatureSelection::groups(&groups))
    }
}

impl Serialize for FeatureSelection {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FeatureSelection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A value that fell back to a default because its inputs were missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFlag {
    pub core_id: String,
    pub feature: String,
    pub flag: String,
}

/// Unstandardized feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFeatures {
    pub core_ids: Vec<String>,
    pub names: Vec<String>,
    pub groups: Vec<FeatureGroup>,
    pub columns: Vec<Vec<f64>>,
    pub flags: Vec<FeatureFlag>,
    /// Loadings of the SD composites (rows: the three rates).
    pub sd_loadings: Option<DMatrix<f64>>,
}

impl RawFeatures {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|j| self.columns[j].as_slice())
    }

    /// Keeps the selected columns, in selection order.
    pub fn select(&self, selection: &FeatureSelection) -> Result<RawFeatures> {
        let mut out = RawFeatures { columns: vec![], names: vec![], groups: vec![], ..self.clone() };
        for name in selection.columns() {
            let j = self
                .names
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| Error::config("features", format!("unknown feature `{name}`")))?;
            out.names.push(name);
            out.groups.push(self.groups[j]);
            out.columns.push(self.columns[j].clone());
        }
        out.flags.retain(|f| out.names.contains(&f.feature));
        Ok(out)
    }

    /// Z-scores each column with its sample mean and sd. Constant columns are
    /// dropped with a warning.
    pub fn standardize(&self) -> FeatureMatrix {
        let mut keep = Vec::new();
        let mut stats = Vec::new();
        for (j, col) in self.columns.iter().enumerate() {
            let m = mean(col);
            let sd = sample_variance(col).sqrt();
            if !(sd > 1e-12 * (1.0 + m.abs())) {
                log::warn!("feature `{}` is constant; dropped", self.names[j]);
                continue;
            }
            keep.push(j);
            stats.push(Standardization { mean: m, sd });
        }
        self.build(&keep, stats)
    }

    /// Standardizes with given statistics, matching names and order.
    pub fn standardize_with(&self, names: &[String], stats: &[Standardization]) -> Result<FeatureMatrix> {
        let mut keep = Vec::new();
        for name in names {
            let j = self
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::FeatureMismatch(format!("feature `{name}` missing from new data")))?;
            keep.push(j);
        }
        Ok(self.build(&keep, stats.to_vec()))
    }

    fn build(&self, keep: &[usize], stats: Vec<Standardization>) -> FeatureMatrix {
        let n = self.core_ids.len();
        let x = DMatrix::from_fn(n, keep.len(), |i, k| {
            let s = &stats[k];
            (self.columns[keep[k]][i] - s.mean) / s.sd
        });
        FeatureMatrix {
            core_ids: self.core_ids.clone(),
            x,
            names: keep.iter().map(|&j| self.names[j].clone()).collect(),
            groups: keep.iter().map(|&j| self.groups[j]).collect(),
            standardization: stats,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_table(path, &self.core_ids, &self.names, |i, j| self.columns[j][i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

/// Standardized N×P covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub core_ids: Vec<String>,
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    pub groups: Vec<FeatureGroup>,
    pub standardization: Vec<Standardization>,
}

impl FeatureMatrix {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_table(path, &self.core_ids, &self.names, |i, j| self.x[(i, j)])
    }
}

fn write_table(path: &Path, ids: &[String], names: &[String], value: impl Fn(usize, usize) -> f64) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(std::fs::File::create(path)?));
    let mut header = vec!["core_id".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend((0..names.len()).map(|j| value(i, j).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `# key: value` comment lines followed by the file at `path`.
pub(crate) fn prepend_comments(path: &Path, comments: &[(String, String)]) -> Result<()> {
    let body = std::fs::read(path)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (k, v) in comments {
        writeln!(f, "# {k}: {v}")?;
    }
    f.write_all(&body)?;
    Ok(())
}

/// Computes every feature for every core.
pub fn compute_raw_features(
    dataset: &CityDataset,
    corehoods: &[Corehood],
    walk: &WalkabilityConfig,
) -> Result<RawFeatures> {
    let units = &dataset.units;
    let n = units.len();
    if corehoods.len() != n {
        return Err(Error::Dimension(format!("{} corehoods for {n} units", corehoods.len())));
    }
    let mut flags = Vec::new();
    let mut flag = |i: usize, feature: &str, what: &str| {
        flags.push(FeatureFlag { core_id: units[i].id.clone(), feature: feature.into(), flag: what.into() });
    };
    let rects = unit_rects(units);

    // core unit measures
    let mut poi_counts: HashMap<PoiCategory, Vec<f64>> = HashMap::new();
    for c in [PoiCategory::Nightlife, PoiCategory::Shops, PoiCategory::Food] {
        poi_counts.insert(c, vec![0.0; n]);
    }
    for p in &dataset.pois {
        if let Some(v) = poi_counts.get_mut(&p.category) {
            if let Some(u) = locate_point(units, &rects, p.location) {
                v[u] += 1.0;
            }
        }
    }
    let residential: Vec<f64> = units.iter().map(|u| u.residential_population).collect();
    let ambient = ambient_population(&dataset.stays, units, MIN_STAY_HOURS);

    // SD
    let pops = &residential;
    let mut rates = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut diversity = vec![0.0; n];
    for (i, ch) in corehoods.iter().enumerate() {
        let total_pop: f64 = ch.members.iter().map(|&m| pops[m]).sum();
        let weight = |m: usize| if total_pop > 0.0 { pops[m] / total_pop } else { 1.0 / ch.members.len() as f64 };
        if !(total_pop > 0.0) {
            flag(i, "disadvantage", "no_population");
        }
        let mut shares = [0.0; 6];
        for &m in &ch.members {
            let c = &dataset.census[m];
            let w = weight(m);
            rates[0][i] += w * c.unemployment_rate;
            rates[1][i] += w * c.poverty_rate;
            rates[2][i] += w * c.residential_mobility_rate;
            for k in 0..6 {
                shares[k] += w * c.ethnic_shares[k];
            }
        }
        diversity[i] = hhi_diversity(&shares)?;
    }
    let sd = sd_composites(&rates[0], &rates[1], &rates[2])?;

    // BE
    let unit_idx = dataset.unit_index();
    let mut blocks_of: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (b, block) in dataset.blocks.iter().enumerate() {
        if let Some(&u) = unit_idx.get(block.unit_id.as_str()) {
            blocks_of[u].push(b);
        }
    }
    let walk_scores = block_walkability(&dataset.blocks, &dataset.street_graph, &dataset.pois, walk);
    let unreachable = walk_scores.iter().filter(|s| s.1).count();
    if unreachable > 0 {
        log::warn!("{unreachable} blocks could not be snapped to the street graph; walkability 0");
    }
    let landuse = unit_landuse_areas(&dataset.parcels, units);
    let mut lum = vec![0.0; n];
    let mut block_area = vec![0.0; n];
    let mut age_div = vec![0.0; n];
    let mut density = vec![0.0; n];
    let mut walkability = vec![0.0; n];
    for (i, ch) in corehoods.iter().enumerate() {
        let mut areas = [0.0; 3];
        let mut dwellings = 0.0;
        let mut area = 0.0;
        let mut member_blocks = Vec::new();
        for &m in &ch.members {
            for k in 0..3 {
                areas[k] += landuse[m][k];
            }
            dwellings += units[m].dwelling_units;
            area += units[m].area_m2();
            member_blocks.extend(blocks_of[m].iter().copied());
        }
        let (v, f) = land_use_mix(&areas);
        lum[i] = v;
        if f {
            flag(i, "land_use_mix", "no_landuse");
        }
        let bl = member_blocks.iter().map(|&b| &dataset.blocks[b]);
        let (v, f) = avg_block_area(bl.clone());
        block_area[i] = v;
        if f {
            flag(i, "avg_block_area", "no_blocks");
        }
        let (v, f) = building_age_diversity(bl);
        age_div[i] = v;
        if f {
            flag(i, "building_age_diversity", "no_buildings");
        }
        let (v, f) = population_density(dwellings, area);
        density[i] = v;
        if f {
            flag(i, "dwelling_density", "zero_area");
        }
        let scores: Vec<f64> = member_blocks.iter().map(|&b| walk_scores[b].0).collect();
        let (v, f) = corehood_walkability(&scores);
        walkability[i] = v;
        if f {
            flag(i, "walkability", "no_blocks");
        }
        if member_blocks.iter().any(|&b| walk_scores[b].1) {
            flag(i, "walkability", "unreachable");
        }
    }

    // M
    let attract = attractiveness(&dataset.trips, units, corehoods);

    let columns = vec![
        residential,
        poi_counts.remove(&PoiCategory::Nightlife).unwrap(),
        poi_counts.remove(&PoiCategory::Shops).unwrap(),
        poi_counts.remove(&PoiCategory::Food).unwrap(),
        ambient,
        sd.disadvantage.clone(),
        sd.instability.clone(),
        diversity,
        lum,
        block_area,
        age_div,
        density,
        walkability,
        attract,
    ];
    Ok(RawFeatures {
        core_ids: units.iter().map(|u| u.id.clone()).collect(),
        names: FEATURES.iter().map(|(n, _)| n.to_string()).collect(),
        groups: FEATURES.iter().map(|(_, g)| *g).collect(),
        columns,
        flags,
        sd_loadings: Some(sd.loadings),
    })
}

/// Computes, selects and standardizes features.
pub fn assemble_features(
    dataset: &CityDataset,
    corehoods: &[Corehood],
    selection: &FeatureSelection,
    walk: &WalkabilityConfig,
) -> Result<FeatureMatrix> {
    Ok(compute_raw_features(dataset, corehoods, walk)?.select(selection)?.standardize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_parsing_and_columns() {
        let core: FeatureSelection = "Core".parse().unwrap();
        assert_eq!(
            core.columns(),
            vec!["residential_population", "nightlife_pois", "shops_pois", "food_pois", "ambient_population"]
        );
        let all: FeatureSelection = "SD+BE+M".parse().unwrap();
        assert_eq!(all, FeatureSelection::all());
        assert_eq!(all.columns().len(), 14);
        assert_eq!(all.to_string(), "Core+SD+BE+M");
        assert_eq!("minimal".parse::<FeatureSelection>().unwrap(), FeatureSelection::Minimal);
        let cols: FeatureSelection = "columns:walkability,disadvantage".parse().unwrap();
        assert_eq!(cols.columns(), vec!["walkability", "disadvantage"]);
        assert!(matches!("SD+XX".parse::<FeatureSelection>(), Err(Error::Config { .. })));
        assert!(matches!("columns:nope".parse::<FeatureSelection>(), Err(Error::Config { .. })));
    }

    #[test]
    fn standardize_drops_constants_and_zscores() {
        let raw = RawFeatures {
            core_ids: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            names: vec!["x".into(), "k".into()],
            groups: vec![FeatureGroup::Core, FeatureGroup::Be],
            columns: vec![vec![1.0, 2.0, 3.0, 10.0], vec![5.0; 4]],
            flags: vec![],
            sd_loadings: None,
        };
        let fm = raw.standardize();
        assert_eq!(fm.names, vec!["x"]);
        let col: Vec<f64> = fm.x.column(0).iter().copied().collect();
        assert!(mean(&col).abs() < 1e-12);
        assert!((sample_variance(&col) - 1.0).abs() < 1e-12);
        let again = raw.standardize_with(&fm.names, &fm.standardization).unwrap();
        assert_eq!(again, fm);
        assert!(matches!(
            raw.standardize_with(&["zz".to_string()], &fm.standardization),
            Err(Error::FeatureMismatch(_))
        ));
    }
}
