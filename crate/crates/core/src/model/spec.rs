use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::connectivity::ConnectivityKind;
use crate::features::FeatureSelection;
use crate::geo_core::HALF_MILE_M;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "NB_RIDGE")]
    NbRidge,
    #[serde(rename = "BSF")]
    Bsf,
    #[serde(rename = "ESF")]
    Esf,
    #[serde(rename = "RE_ESF")]
    ReEsf,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::NbRidge, Variant::Bsf, Variant::Esf, Variant::ReEsf];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::NbRidge => "NB_RIDGE",
            Variant::Bsf => "BSF",
            Variant::Esf => "ESF",
            Variant::ReEsf => "RE_ESF",
        }
    }

    pub fn is_spatial(self) -> bool {
        self != Variant::NbRidge
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "NB_RIDGE" | "NB" => Ok(Variant::NbRidge),
            "BSF" => Ok(Variant::Bsf),
            "ESF" => Ok(Variant::Esf),
            "RE_ESF" => Ok(Variant::ReEsf),
            other => Err(Error::config(
                "variant",
                format!("unknown model variant `{other}` (expected NB_RIDGE, BSF, ESF or RE_ESF)"),
            )),
        }
    }
}

/// How the second argument of the BSF precision prior `Γ(0.5, 2000)` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoPriorParam {
    Rate,
    Scale,
}

impl FromStr for RhoPriorParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rate" => Ok(RhoPriorParam::Rate),
            "scale" => Ok(RhoPriorParam::Scale),
            other => Err(Error::config("rho_prior", format!("expected `rate` or `scale`, got `{other}`"))),
        }
    }
}

/// Named sampler budgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 15000 warmup / 5000 sampling iterations.
    Paper,
    /// 1000 / 1000.
    Desk,
}

impl FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::config("profile", format!("expected `paper` or `desk`, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSettings {
    pub chains: usize,
    pub warmup: usize,
    pub iterations: usize,
    pub seed: u64,
    pub max_depth: usize,
    pub target_accept: f64,
    /// Largest tolerated split R-hat.
    pub rhat_threshold: f64,
    /// Largest tolerated fraction of divergent post-warmup transitions.
    pub max_divergent_fraction: f64,
}

impl SamplerSettings {
    pub fn profile(profile: Profile, seed: u64) -> Self {
        let (warmup, iterations) = match profile {
            Profile::Paper => (15_000, 5_000),
            Profile::Desk => (1_000, 1_000),
        };
        SamplerSettings {
            chains: 4,
            warmup,
            iterations,
            seed,
            max_depth: 10,
            target_accept: 0.8,
            rhat_threshold: 1.05,
            max_divergent_fraction: 0.001,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains < 2 {
            return Err(Error::config("sampler.chains", "at least 2 chains are required"));
        }
        if self.warmup == 0 || self.iterations == 0 {
            return Err(Error::config("sampler", "warmup and iterations must be positive"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::config("sampler.target_accept", "must lie in (0, 1)"));
        }
        if self.max_depth == 0 {
            return Err(Error::config("sampler.max_depth", "must be positive"));
        }
        Ok(())
    }
}

impl Default for SamplerSettings {
    fn default() -> Self {
        SamplerSettings::profile(Profile::Paper, 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub features: FeatureSelection,
    pub connectivity: ConnectivityKind,
    pub corehood_radius_m: f64,
    pub eigen_threshold: f64,
    pub rho_prior: RhoPriorParam,
    pub sampler: SamplerSettings,
}

impl ModelSpec {
    pub fn new(variant: Variant, features: FeatureSelection, sampler: SamplerSettings) -> Self {
        ModelSpec {
            variant,
            features,
            connectivity: ConnectivityKind::Contiguity,
            corehood_radius_m: HALF_MILE_M,
            eigen_threshold: crate::spatial_filter::DEFAULT_EIGEN_THRESHOLD,
            rho_prior: RhoPriorParam::Rate,
            sampler,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.corehood_radius_m > 0.0) {
            return Err(Error::config("corehood_radius_m", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.eigen_threshold) {
            return Err(Error::config("eigen_threshold", "must lie in [0, 1]"));
        }
        self.sampler.validate()
    }

    /// Short label such as `BSF/SD+BE/contiguity`.
    pub fn label(&self) -> String {
        format!("{}/{}/{}", self.variant, self.features, self.connectivity)
    }
}
