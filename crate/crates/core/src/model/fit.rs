use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::nuts::ChainStats;
use super::posterior::{ModelData, Posterior};
use super::sample::{sample_unchecked, PosteriorSamples};
use super::spec::{ModelSpec, Variant};
use crate::features::Standardization;
use crate::spatial_filter::EigenBasis;
use crate::{Error, Result};

/// Hash of the modeled outcome and unit order. Fits compared against each
/// other must share it.
pub fn data_fingerprint(core_ids: &[String], y: &[u64]) -> String {
    let mut h = Sha256::new();
    for id in core_ids {
        h.update(id.as_bytes());
        h.update([0u8]);
    }
    for v in y {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// A sampled model together with everything needed to evaluate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub spec: ModelSpec,
    #[serde(skip)]
    pub samples: PosteriorSamples,
    pub fingerprint: String,
    pub core_ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub standardization: Vec<Standardization>,
    pub y: Vec<u64>,
    /// Standardized training design.
    pub x: DMatrix<f64>,
    pub basis: Option<EigenBasis>,
    pub runtime_s: f64,
}

impl Default for PosteriorSamples {
    fn default() -> Self {
        PosteriorSamples {
            names: vec![],
            draws: DMatrix::zeros(0, 0),
            loglik: DMatrix::zeros(0, 0),
            chain: vec![],
            seed: 0,
            rhat: vec![],
            chain_stats: vec![],
        }
    }
}

/// Samples the posterior and enforces the convergence contract.
pub fn fit_model(
    data: &ModelData,
    spec: &ModelSpec,
    core_ids: &[String],
    standardization: &[Standardization],
) -> Result<ModelFit> {
    let fit = fit_model_unchecked(data, spec, core_ids, standardization)?;
    fit.samples.check(&spec.sampler)?;
    Ok(fit)
}

/// Samples the posterior without failing on R-hat or divergences.
pub fn fit_model_unchecked(
    data: &ModelData,
    spec: &ModelSpec,
    core_ids: &[String],
    standardization: &[Standardization],
) -> Result<ModelFit> {
    spec.validate()?;
    if core_ids.len() != data.n() {
        return Err(Error::Dimension(format!("{} ids for {} counts", core_ids.len(), data.n())));
    }
    let start = Instant::now();
    let post = Posterior::new(data, spec.variant, spec.rho_prior)?;
    let names = post.layout.column_names(&data.names);
    let samples = sample_unchecked(&post, data.y_mean(), &spec.sampler, names)?;
    Ok(ModelFit {
        spec: spec.clone(),
        samples,
        fingerprint: data_fingerprint(core_ids, &data.y),
        core_ids: core_ids.to_vec(),
        feature_names: data.names.clone(),
        standardization: standardization.to_vec(),
        y: data.y.clone(),
        x: data.x.clone(),
        basis: if spec.variant.is_spatial() { data.basis.clone() } else { None },
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

impl ModelFit {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.feature_names.len()
    }

    pub fn l(&self) -> usize {
        self.basis.as_ref().map_or(0, |b| b.len())
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn beta0(&self) -> Vec<f64> {
        self.samples.draws.column(0).iter().copied().collect()
    }

    /// S × P coefficient draws on the standardized scale.
    pub fn beta(&self) -> DMatrix<f64> {
        self.samples.draws.columns(1, self.p()).into_owned()
    }

    /// S × L spatial coefficient draws.
    pub fn gamma(&self) -> DMatrix<f64> {
        self.samples.draws.columns(1 + self.p(), self.l()).into_owned()
    }

    pub fn phi(&self) -> Vec<f64> {
        self.samples.column("phi").unwrap_or_default()
    }

    /// S × N fixed linear predictor `β₀ + Xβ`.
    pub fn fixed_eta(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let b0 = self.beta0();
        let mut eta = self.beta() * x.transpose();
        for (s, mut row) in eta.row_iter_mut().enumerate() {
            row.add_scalar_mut(b0[s]);
        }
        eta
    }

    /// S × N spatial part `Eγ` (zeros without a basis).
    pub fn spatial_eta(&self) -> DMatrix<f64> {
        match &self.basis {
            Some(b) => self.gamma() * b.e.transpose(),
            None => DMatrix::zeros(self.samples.n_draws(), self.n()),
        }
    }

    /// Writes the fit archive: `fit.json` (spec, data, basis, summary),
    /// `draws.csv` and `loglik.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = FitMeta {
            fit: self.clone(),
            names: self.samples.names.clone(),
            seed: self.samples.seed,
            rhat: self.samples.rhat.clone(),
            chain_stats: self.samples.chain_stats.clone(),
        };
        std::fs::write(dir.join("fit.json"), serde_json::to_string(&meta)?)?;
        let mut header = vec!["chain".to_string()];
        header.extend(self.samples.names.iter().cloned());
        write_matrix(&dir.join("draws.csv"), &header, &self.samples.draws, Some(&self.samples.chain))?;
        let header: Vec<String> = std::iter::once("chain".to_string()).chain(self.core_ids.iter().cloned()).collect();
        write_matrix(&dir.join("loglik.csv"), &header, &self.samples.loglik, Some(&self.samples.chain))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<ModelFit> {
        let path = dir.join("fit.json");
        let text = std::fs::read_to_string(&path).map_err(|_| Error::MissingArtifact(path.clone()))?;
        let meta: FitMeta = serde_json::from_str(&text)?;
        let (chain, draws) = read_matrix(&dir.join("draws.csv"))?;
        let (_, loglik) = read_matrix(&dir.join("loglik.csv"))?;
        let mut fit = meta.fit;
        fit.samples = PosteriorSamples {
            names: meta.names,
            draws,
            loglik,
            chain,
            seed: meta.seed,
            rhat: meta.rhat,
            chain_stats: meta.chain_stats,
        };
        Ok(fit)
    }
}

#[derive(Serialize, Deserialize)]
struct FitMeta {
    fit: ModelFit,
    names: Vec<String>,
    seed: u64,
    rhat: Vec<f64>,
    chain_stats: Vec<ChainStats>,
}

fn write_matrix(path: &Path, header: &[String], m: &DMatrix<f64>, chain: Option<&[usize]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(std::fs::File::create(path)?));
    w.write_record(header)?;
    let mut rec = Vec::with_capacity(header.len());
    for i in 0..m.nrows() {
        rec.clear();
        if let Some(c) = chain {
            rec.push(c[i].to_string());
        }
        rec.extend(m.row(i).iter().map(|v| format!("{v:e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn read_matrix(path: &Path) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let file = std::fs::File::open(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(std::io::BufReader::new(file));
    let cols = r.headers()?.len() - 1;
    let mut chain = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = chain.len() + 2;
        let parse = |s: &str, field: &str| {
            s.parse::<f64>().map_err(|e| Error::schema(path.display().to_string(), format!("line {line}"), field, e.to_string()))
        };
        chain.push(parse(&rec[0], "chain")? as usize);
        for j in 0..cols {
            values.push(parse(&rec[j + 1], "value")?);
        }
    }
    let rows = chain.len();
    Ok((chain, DMatrix::from_row_slice(rows, cols, &values)))
}
