use crate::connectivity::{build_connectivity, laplacian, ConnectivityKind, ConnectivityMatrix};
use crate::features::{compute_raw_features, FeatureMatrix, FeatureSelection, RawFeatures, WalkabilityConfig};
use crate::geo_core::{assign_crimes, build_corehoods, CityDataset, Corehood, DEFAULT_CRIME_BUFFER_M};
use crate::model::{fit_model, fit_model_unchecked, ModelData, ModelFit, ModelSpec};
use crate::spatial_filter::eigenbasis_for_design;
use crate::{Error, Result};

/// A city with corehoods, raw features and counts computed at one radius.
/// Everything a model spec needs beyond this is cheap to derive.
#[derive(Debug, Clone)]
pub struct PreparedCity {
    pub dataset: CityDataset,
    pub radius_m: f64,
    pub corehoods: Vec<Corehood>,
    pub raw: RawFeatures,
    pub y: Vec<u64>,
}

/// Inputs of one fit.
#[derive(Debug, Clone)]
pub struct ModelInputs {
    pub data: ModelData,
    pub features: FeatureMatrix,
    pub connectivity: Option<ConnectivityMatrix>,
}

impl PreparedCity {
    pub fn new(dataset: CityDataset, radius_m: f64, walk: &WalkabilityConfig) -> Result<Self> {
        let corehoods = build_corehoods(&dataset.units, radius_m)?;
        let raw = compute_raw_features(&dataset, &corehoods, walk)?;
        let counts = assign_crimes(&dataset.crimes, &dataset.units, DEFAULT_CRIME_BUFFER_M, Some(dataset.crime_window));
        Ok(PreparedCity { y: counts.rounded_totals(), dataset, radius_m, corehoods, raw })
    }

    /// Reassembles a prepared city from stored corehoods and features.
    pub fn from_parts(dataset: CityDataset, radius_m: f64, corehoods: Vec<Corehood>, raw: RawFeatures) -> Result<Self> {
        if corehoods.len() != dataset.units.len() || raw.core_ids.len() != dataset.units.len() {
            return Err(Error::Dimension("stored features do not match the city".into()));
        }
        if raw.core_ids.iter().zip(&dataset.units).any(|(a, u)| *a != u.id) {
            return Err(Error::FeatureMismatch("stored features are for different units".into()));
        }
        let counts = assign_crimes(&dataset.crimes, &dataset.units, DEFAULT_CRIME_BUFFER_M, Some(dataset.crime_window));
        Ok(PreparedCity { y: counts.rounded_totals(), dataset, radius_m, corehoods, raw })
    }

    /// Same dataset, different corehood radius.
    pub fn with_radius(&self, radius_m: f64, walk: &WalkabilityConfig) -> Result<Self> {
        PreparedCity::new(self.dataset.clone(), radius_m, walk)
    }

    pub fn core_ids(&self) -> &[String] {
        &self.raw.core_ids
    }

    pub fn connectivity(&self, kind: ConnectivityKind) -> Result<ConnectivityMatrix> {
        let c = build_connectivity(kind, &self.dataset.units, &self.corehoods, &self.dataset.trips)?;
        c.check()?;
        Ok(c)
    }

    pub fn design(&self, selection: &FeatureSelection) -> Result<FeatureMatrix> {
        Ok(self.raw.select(selection)?.standardize())
    }

    pub fn model_inputs(&self, spec: &ModelSpec) -> Result<ModelInputs> {
        if (spec.corehood_radius_m - self.radius_m).abs() > 1e-9 {
            return Err(Error::config(
                "corehood_radius_m",
                format!("spec radius {} differs from prepared radius {}", spec.corehood_radius_m, self.radius_m),
            ));
        }
        let features = self.design(&spec.features)?;
        let mut data = ModelData {
            y: self.y.clone(),
            x: features.x.clone(),
            names: features.names.clone(),
            basis: None,
            laplacian: None,
        };
        let mut connectivity = None;
        if spec.variant.is_spatial() {
            let c = self.connectivity(spec.connectivity)?;
            if c.is_zero() {
                return Err(Error::NoPositiveBasis);
            }
            data.basis = Some(eigenbasis_for_design(&features.x, Some(&features.names), &c, spec.eigen_threshold)?);
            data.laplacian = Some(laplacian(&c).matrix);
            connectivity = Some(c);
        }
        Ok(ModelInputs { data, features, connectivity })
    }

    /// Fits `spec`, enforcing the convergence contract when `checked`.
    pub fn fit(&self, spec: &ModelSpec, checked: bool) -> Result<(ModelFit, ModelInputs)> {
        let inputs = self.model_inputs(spec)?;
        let std = &inputs.features.standardization;
        let fit = if checked {
            fit_model(&inputs.data, spec, self.core_ids(), std)?
        } else {
            fit_model_unchecked(&inputs.data, spec, self.core_ids(), std)?
        };
        Ok((fit, inputs))
    }
}
