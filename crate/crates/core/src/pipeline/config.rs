use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::connectivity::ConnectivityKind;
use crate::features::FeatureSelection;
use crate::geo_core::HALF_MILE_M;
use crate::model::{ModelSpec, Profile, RhoPriorParam, SamplerSettings, Variant};
use crate::spatial_filter::DEFAULT_EIGEN_THRESHOLD;
use crate::synthgen::SynthConfig;
use crate::{Error, Result};

/// Default permutations for the residual Moran reference interval.
pub const DEFAULT_PERMUTATIONS: usize = 199;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunConfig {
    seed: Option<u64>,
    out: Option<PathBuf>,
    profile: Option<String>,
    jobs: Option<usize>,
    data: Option<RawData>,
    synth: Option<toml::Table>,
    #[serde(default)]
    model: RawModel,
    compare: Option<RawCompare>,
    sweep: Option<RawSweep>,
    evaluation: Option<RawEvaluation>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    source: Option<String>,
    ingest: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    variant: Option<String>,
    features: Option<String>,
    connectivity: Option<String>,
    corehood_radius_m: Option<f64>,
    eigen_threshold: Option<f64>,
    rho_prior: Option<String>,
    chains: Option<usize>,
    warmup: Option<usize>,
    iterations: Option<usize>,
    max_depth: Option<usize>,
    target_accept: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCompare {
    models: Vec<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    radii: Vec<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvaluation {
    permutations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synth(SynthConfig),
    /// Path to an ingest TOML file.
    Ingest { path: PathBuf },
}

/// Validated run configuration. All enumerations are resolved here, before
/// any computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub profile: Profile,
    pub jobs: usize,
    pub data: DataSource,
    pub spec: ModelSpec,
    /// Specs for `compare`, sharing the run's radius and sampler.
    pub compare: Vec<ModelSpec>,
    pub radii: Vec<f64>,
    pub permutations: usize,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub profile: Option<String>,
    pub jobs: Option<usize>,
}

fn field<T>(prefix: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config { field, message } => Error::Config { field: format!("{prefix}.{field}"), message },
        e => e,
    })
}

fn toml_error(e: toml::de::Error) -> Error {
    let name = crate::geo_core::toml_field(&e);
    Error::Config { field: name, message: e.message().to_string() }
}

/// `FEATURES[/VARIANT[/CONNECTIVITY]]`, defaults from `base`.
pub fn parse_model_entry(entry: &str, base: &ModelSpec) -> Result<ModelSpec> {
    let mut parts = entry.split('/');
    let mut spec = base.clone();
    let features = parts.next().unwrap_or_default().trim();
    spec.features = field("compare", features.parse::<FeatureSelection>())?;
    if let Some(v) = parts.next() {
        spec.variant = field("compare", v.parse::<Variant>())?;
    }
    if let Some(c) = parts.next() {
        spec.connectivity = field("compare", c.parse::<ConnectivityKind>())?;
    }
    if parts.next().is_some() {
        return Err(Error::Config { field: "compare.models".into(), message: format!("too many parts in `{entry}`") });
    }
    Ok(spec)
}

/// The eight selections of the feature-group table.
pub const TABLE_SELECTIONS: [&str; 8] = ["Core", "SD", "BE", "M", "SD+BE", "SD+M", "BE+M", "SD+BE+M"];

impl RunConfig {
    pub fn from_file(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base, overrides)
    }

    /// Parses and validates. Relative paths resolve against `base`.
    pub fn from_toml_str(text: &str, base: &Path, overrides: &Overrides) -> Result<Self> {
        let raw: RawRunConfig = toml::from_str(text).map_err(toml_error)?;
        let seed = overrides.seed.or(raw.seed).unwrap_or(1);
        let profile = overrides.profile.clone().or(raw.profile).unwrap_or_else(|| "desk".into());
        let profile: Profile = profile.parse()?;
        let jobs = overrides.jobs.or(raw.jobs).unwrap_or(0);
        let out = overrides.out.clone().or(raw.out.map(|p| base.join(p))).unwrap_or_else(|| PathBuf::from("run"));

        let data = raw.data.unwrap_or_default();
        let source = data.source.unwrap_or_else(|| if data.ingest.is_some() { "ingest".into() } else { "synth".into() });
        let data = match source.to_ascii_lowercase().as_str() {
            "synth" => {
                let table = raw.synth.unwrap_or_default();
                let has_seed = table.contains_key("seed");
                let mut sc: SynthConfig = table
                    .try_into()
                    .map_err(|e: toml::de::Error| Error::Config { field: format!("synth.{}", crate::geo_core::toml_field(&e)), message: e.message().to_string() })?;
                if !has_seed {
                    sc.seed = seed;
                }
                field("synth", sc.validate())?;
                DataSource::Synth(sc)
            }
            "ingest" => {
                let p = data.ingest.ok_or_else(|| Error::Config {
                    field: "data.ingest".into(),
                    message: "required when data.source = \"ingest\"".into(),
                })?;
                DataSource::Ingest { path: base.join(p) }
            }
            other => {
                return Err(Error::Config {
                    field: "data.source".into(),
                    message: format!("expected `synth` or `ingest`, got `{other}`"),
                })
            }
        };

        let m = raw.model;
        let mut sampler = SamplerSettings::profile(profile, seed);
        if let Some(c) = m.chains {
            sampler.chains = c;
        }
        if let Some(w) = m.warmup {
            sampler.warmup = w;
        }
        if let Some(i) = m.iterations {
            sampler.iterations = i;
        }
        if let Some(d) = m.max_depth {
            sampler.max_depth = d;
        }
        if let Some(t) = m.target_accept {
            sampler.target_accept = t;
        }
        let spec = ModelSpec {
            variant: field("model", m.variant.as_deref().unwrap_or("BSF").parse())?,
            features: field("model", m.features.as_deref().unwrap_or("SD+BE+M").parse())?,
            connectivity: field("model", m.connectivity.as_deref().unwrap_or("contiguity").parse())?,
            corehood_radius_m: m.corehood_radius_m.unwrap_or(HALF_MILE_M),
            eigen_threshold: m.eigen_threshold.unwrap_or(DEFAULT_EIGEN_THRESHOLD),
            rho_prior: field("model", m.rho_prior.as_deref().unwrap_or("rate").parse::<RhoPriorParam>())?,
            sampler,
        };
        field("model", spec.validate())?;

        let compare = match raw.compare {
            Some(c) => c.models.iter().map(|e| parse_model_entry(e, &spec)).collect::<Result<Vec<_>>>()?,
            None => TABLE_SELECTIONS.iter().map(|e| parse_model_entry(e, &spec)).collect::<Result<Vec<_>>>()?,
        };
        let radii = match raw.sweep {
            Some(s) => s.radii,
            None => vec![HALF_MILE_M, 2.0 * HALF_MILE_M],
        };
        check_radii(&radii)?;
        let permutations = raw.evaluation.and_then(|e| e.permutations).unwrap_or(DEFAULT_PERMUTATIONS);
        Ok(RunConfig { seed, out, profile, jobs, data, spec, compare, radii, permutations })
    }

    /// Short hash of the resolved configuration.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        // the output directory and thread count do not affect results
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.jobs = 0;
        h.update(serde_json::to_vec(&c).expect("config serializes"));
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// `(config_hash, seed)` stamp for artifacts.
    pub fn stamp(&self) -> Vec<(String, String)> {
        vec![("config_hash".into(), self.hash()), ("seed".into(), self.seed.to_string())]
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("# could not serialize: {e}\n"))
    }
}

pub fn check_radii(radii: &[f64]) -> Result<()> {
    if radii.is_empty() {
        return Err(Error::Config { field: "sweep.radii".into(), message: "need at least one radius".into() });
    }
    if let Some(r) = radii.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
        return Err(Error::Config { field: "sweep.radii".into(), message: format!("invalid radius {r}") });
    }
    Ok(())
}
