use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use super::config::{DataSource, RunConfig};
use super::prepare::PreparedCity;
use crate::connectivity::ConnectivityKind;
use crate::diagnostics::{
    gelman_rubin, lagrange_multiplier, morans_i, poisson_fit, potthoff_whittinghill, TestResult,
};
use crate::evaluation::{
    compare_models, evaluate, radius_sweep, transfer_evaluate, write_sweep_csv, ComparisonTable, EvaluationReport,
    SweepRow, TransferReport,
};
use crate::features::{prepend_comments, RawFeatures, WalkabilityConfig};
use crate::geo_core::{ingest_city, write_city, CityDataset, Corehood, IngestConfig, ValidationReport};
use crate::model::ModelFit;
use crate::synthgen::{generate_city, write_synth};
use crate::{Error, Result};

pub const FAILED_MARKER: &str = "FAILED";

/// Fixed layout of a run directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }
    pub fn city(&self) -> PathBuf {
        self.root.join("city")
    }
    pub fn city_config(&self) -> PathBuf {
        self.city().join("ingest.toml")
    }
    pub fn features(&self) -> PathBuf {
        self.root.join("features")
    }
    pub fn fit(&self) -> PathBuf {
        self.root.join("fit")
    }
    pub fn evaluation(&self) -> PathBuf {
        self.root.join("evaluation")
    }
    pub fn diagnostics(&self) -> PathBuf {
        self.root.join("diagnostics")
    }
    pub fn eigenbasis(&self) -> PathBuf {
        self.root.join("eigenbasis")
    }
    pub fn compare(&self) -> PathBuf {
        self.root.join("compare")
    }
    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep")
    }
    pub fn transfer(&self) -> PathBuf {
        self.root.join("transfer")
    }
    pub fn failed(&self) -> PathBuf {
        self.root.join(FAILED_MARKER)
    }
}

/// Inserts a `_stamp` object into a JSON file's top-level object.
pub fn stamp_json(path: &Path, stamp: &[(String, String)]) -> Result<()> {
    let text = std::fs::read_to_string(path)?;
    let mut v: serde_json::Value = serde_json::from_str(&text)?;
    if let Some(obj) = v.as_object_mut() {
        let s: serde_json::Map<String, serde_json::Value> =
            stamp.iter().map(|(k, v)| (k.clone(), serde_json::Value::from(v.clone()))).collect();
        obj.insert("_stamp".into(), serde_json::Value::Object(s));
    }
    std::fs::write(path, serde_json::to_string(&v)?)?;
    Ok(())
}

fn write_text(path: &Path, stamp: &[(String, String)], body: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for (k, v) in stamp {
        writeln!(f, "# {k}: {v}")?;
    }
    f.write_all(body.as_bytes())?;
    Ok(())
}

fn write_validation(report: &ValidationReport, path: &Path, stamp: &[(String, String)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["file", "record", "action", "message"])?;
    for e in &report.entries {
        w.write_record([&e.file, &e.record, &format!("{:?}", e.action).to_ascii_lowercase(), &e.message])?;
    }
    w.flush()?;
    prepend_comments(path, stamp)
}

/// Loads the run's normalized city.
pub fn load_city(layout: &RunLayout) -> Result<CityDataset> {
    let path = layout.city_config();
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let (ic, base) = IngestConfig::from_toml_file(&path)?;
    Ok(ingest_city(&ic, &base)?.0)
}

/// Writes the city into the run directory in ingest format (with the truth
/// for synthetic data) and reads it back, recording the validation report.
pub fn stage_data(cfg: &RunConfig) -> Result<(CityDataset, ValidationReport)> {
    let layout = RunLayout::new(&cfg.out);
    let stamp = cfg.stamp();
    let city_dir = layout.city();
    let report = match &cfg.data {
        DataSource::Synth(sc) => {
            let (ds, truth) = generate_city(sc)?;
            write_synth(&ds, &truth, &city_dir)?;
            let (ic, base) = IngestConfig::from_toml_file(&layout.city_config())?;
            ingest_city(&ic, &base)?.1
        }
        DataSource::Ingest { path } => {
            let (ic, base) = IngestConfig::from_toml_file(path)?;
            let (ds, report) = ingest_city(&ic, &base)?;
            write_city(&ds, &city_dir)?;
            report
        }
    };
    write_validation(&report, &layout.root.join("validation_report.csv"), &stamp)?;
    Ok((load_city(&layout)?, report))
}

/// Computes corehoods and raw features and writes them.
pub fn stage_features(cfg: &RunConfig, dataset: CityDataset) -> Result<PreparedCity> {
    let layout = RunLayout::new(&cfg.out);
    let stamp = cfg.stamp();
    let city = PreparedCity::new(dataset, cfg.spec.corehood_radius_m, &WalkabilityConfig::default())?;
    let dir = layout.features();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("raw.json"), serde_json::to_string(&city.raw)?)?;
    stamp_json(&dir.join("raw.json"), &stamp)?;
    std::fs::write(dir.join("corehoods.json"), serde_json::to_string(&city.corehoods)?)?;
    stamp_json(&dir.join("corehoods.json"), &stamp)?;
    city.raw.write_csv(&dir.join("raw.csv"))?;
    prepend_comments(&dir.join("raw.csv"), &stamp)?;
    let fm = city.design(&cfg.spec.features)?;
    fm.write_csv(&dir.join("features.csv"))?;
    prepend_comments(&dir.join("features.csv"), &stamp)?;
    let mut w = csv::Writer::from_path(dir.join("flags.csv"))?;
    w.write_record(["core_id", "feature", "flag"])?;
    for f in &city.raw.flags {
        w.write_record([&f.core_id, &f.feature, &f.flag])?;
    }
    w.flush()?;
    prepend_comments(&dir.join("flags.csv"), &stamp)?;
    if let Some(l) = &city.raw.sd_loadings {
        let mut w = csv::Writer::from_path(dir.join("sd_loadings.csv"))?;
        w.write_record(["rate", "disadvantage", "instability"])?;
        for (i, name) in crate::features::SD_RATE_NAMES.iter().enumerate() {
            w.write_record([name.to_string(), l[(i, 0)].to_string(), l[(i, 1)].to_string()])?;
        }
        w.flush()?;
        prepend_comments(&dir.join("sd_loadings.csv"), &stamp)?;
    }
    Ok(city)
}

/// Rebuilds the prepared city from the stage artifacts on disk.
pub fn load_prepared(cfg: &RunConfig) -> Result<PreparedCity> {
    let layout = RunLayout::new(&cfg.out);
    let dataset = load_city(&layout)?;
    let read = |name: &str| -> Result<String> {
        let p = layout.features().join(name);
        std::fs::read_to_string(&p).map_err(|_| Error::MissingArtifact(p))
    };
    let raw: RawFeatures = serde_json::from_str(&read("raw.json")?)?;
    let corehoods: Vec<Corehood> = serde_json::from_str(&read("corehoods.json")?)?;
    let radius_m = corehoods.first().map_or(cfg.spec.corehood_radius_m, |c| c.radius_m);
    PreparedCity::from_parts(dataset, radius_m, corehoods, raw)
}

/// Connectivity, eigenbasis and the fit archive. The archive is written
/// before the convergence check so a failed fit can still be inspected.
pub fn stage_fit(cfg: &RunConfig, city: &PreparedCity) -> Result<ModelFit> {
    let layout = RunLayout::new(&cfg.out);
    let stamp = cfg.stamp();
    let (fit, inputs) = crate::par::with_jobs(cfg.jobs, || city.fit(&cfg.spec, false))?;
    if let Some(c) = &inputs.connectivity {
        c.write_csv(&layout.root.join("connectivity.csv"))?;
        prepend_comments(&layout.root.join("connectivity.csv"), &stamp)?;
    }
    if let Some(b) = &inputs.data.basis {
        let dir = layout.eigenbasis();
        b.write_csv(&dir)?;
        prepend_comments(&dir.join("eigenvalues.csv"), &stamp)?;
        prepend_comments(&dir.join("eigenvectors.csv"), &stamp)?;
        let body = format!(
            "eigenvectors kept: {}\nlambda_max: {}\nthreshold: {}\nsmallest kept eigenvalue: {}\n",
            b.len(),
            b.lambda_max,
            b.threshold,
            b.lambdas.last().copied().unwrap_or(f64::NAN)
        );
        write_text(&dir.join("summary.txt"), &stamp, &body)?;
    }
    fit.save(&layout.fit())?;
    stamp_json(&layout.fit().join("fit.json"), &stamp)?;
    prepend_comments(&layout.fit().join("draws.csv"), &stamp)?;
    prepend_comments(&layout.fit().join("loglik.csv"), &stamp)?;
    let mut w = csv::Writer::from_path(layout.fit().join("rhat.csv"))?;
    w.write_record(["parameter", "rhat"])?;
    for (n, r) in fit.samples.names.iter().zip(&fit.samples.rhat) {
        w.write_record([n.clone(), r.to_string()])?;
    }
    w.flush()?;
    prepend_comments(&layout.fit().join("rhat.csv"), &stamp)?;
    fit.samples.check(&cfg.spec.sampler)?;
    Ok(fit)
}

pub fn load_fit(cfg: &RunConfig) -> Result<ModelFit> {
    ModelFit::load(&RunLayout::new(&cfg.out).fit())
}

/// Raw-count tests (MC(y), Potthoff-Whittinghill, Lagrange multiplier) and,
/// given a fit, residual `I_p` and R-hat.
pub fn stage_diagnose(cfg: &RunConfig, city: &PreparedCity, fit: Option<&ModelFit>) -> Result<Vec<TestResult>> {
    let layout = RunLayout::new(&cfg.out);
    let stamp = cfg.stamp();
    let y: Vec<f64> = city.y.iter().map(|&v| v as f64).collect();
    let w = city.connectivity(ConnectivityKind::Contiguity)?.matrix;
    let mut tests = Vec::new();
    let mc = morans_i(&y, &w)?;
    tests.push(TestResult {
        name: "morans_i_counts".into(),
        statistic: mc,
        reference_distribution: format!("expectation under no autocorrelation {:.4}", -1.0 / (y.len() as f64 - 1.0)),
        p_value: None,
        verdict: if mc > 0.0 { "positive autocorrelation".into() } else { "no positive autocorrelation".into() },
    });
    tests.push(potthoff_whittinghill(&y)?);
    let x = match fit {
        Some(f) => f.x.clone(),
        None => city.design(&cfg.spec.features).map(|fm| fm.x).unwrap_or_else(|_| DMatrix::zeros(y.len(), 0)),
    };
    let mu = poisson_fit(&x, &y).or_else(|_| poisson_fit(&DMatrix::zeros(y.len(), 0), &y))?;
    tests.push(lagrange_multiplier(&y, &mu)?);
    if let Some(f) = fit {
        let rep = crate::evaluation::decompose(f)?;
        let ip = crate::diagnostics::morans_i_residuals(&rep.residual, &w)?;
        let iv = crate::diagnostics::residual_moran_permutation(&rep.residual, &w, cfg.permutations.max(1), 0.95, cfg.seed)?;
        tests.push(TestResult {
            name: "residual_moran_ip".into(),
            statistic: ip,
            reference_distribution: format!(
                "permutation 95% reference [{:.4}, {:.4}] ({} shuffles; extension)",
                iv.lower, iv.upper, iv.permutations
            ),
            p_value: None,
            verdict: if ip > iv.upper { "residual autocorrelation remains".into() } else { "within permutation reference".into() },
        });
        let chains = split_chains(f);
        let rhat = gelman_rubin(&chains)?;
        let (k, worst) = rhat
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, &r)| if r > acc.1 { (k, r) } else { acc });
        tests.push(TestResult {
            name: format!("split_rhat_max[{}]", f.samples.names.get(k).cloned().unwrap_or_default()),
            statistic: worst,
            reference_distribution: format!("threshold {}", cfg.spec.sampler.rhat_threshold),
            p_value: None,
            verdict: if worst <= cfg.spec.sampler.rhat_threshold { "converged".into() } else { "not converged".into() },
        });
    }
    let dir = layout.diagnostics();
    std::fs::create_dir_all(&dir)?;
    let mut w = csv::Writer::from_path(dir.join("diagnostics.csv"))?;
    w.write_record(["test", "statistic", "p_value", "reference", "verdict"])?;
    let mut body = String::new();
    for t in &tests {
        let p = t.p_value.map(|p| p.to_string()).unwrap_or_default();
        w.write_record([&t.name, &t.statistic.to_string(), &p, &t.reference_distribution, &t.verdict])?;
        body += &format!("{}: {:.4}", t.name, t.statistic);
        if let Some(p) = t.p_value {
            body += &format!(" (p = {p:.4})");
        }
        body += &format!(" [{}] {}\n", t.reference_distribution, t.verdict);
    }
    w.flush()?;
    prepend_comments(&dir.join("diagnostics.csv"), &stamp)?;
    write_text(&dir.join("summary.txt"), &stamp, &body)?;
    Ok(tests)
}

fn split_chains(fit: &ModelFit) -> Vec<DMatrix<f64>> {
    let s = &fit.samples;
    (0..s.n_chains())
        .map(|c| {
            let rows: Vec<usize> = (0..s.n_draws()).filter(|&i| s.chain[i] == c).collect();
            DMatrix::from_fn(rows.len(), s.draws.ncols(), |i, j| s.draws[(rows[i], j)])
        })
        .collect()
}

/// Scores the fit and writes the evaluation report and decomposition map.
pub fn stage_evaluate(cfg: &RunConfig, city: &PreparedCity, fit: &ModelFit) -> Result<EvaluationReport> {
    if fit.core_ids.as_slice() != city.core_ids() || fit.y != city.y {
        return Err(Error::Fingerprint("fit was not produced from this run's data".into()));
    }
    let layout = RunLayout::new(&cfg.out);
    let stamp = cfg.stamp();
    let w = city.connectivity(ConnectivityKind::Contiguity)?.matrix;
    let rep = evaluate(fit, &w, cfg.permutations)?;
    rep.write(&layout.evaluation(), &stamp)?;
    stamp_json(&layout.evaluation().join("evaluation.json"), &stamp)?;
    let elpd = rep.loo.pointwise.as_slice();
    let k = rep.loo.pareto_k.as_slice();
    let y: Vec<f64> = fit.y.iter().map(|&v| v as f64).collect();
    let path = layout.root.join("decomposition.geojson");
    rep.decomposition
        .write_geojson(&path, &city.dataset.units, &[("y", &y), ("elpd_loo", elpd), ("pareto_k", k)])?;
    stamp_json(&path, &stamp)?;
    Ok(rep)
}

pub fn stage_compare(cfg: &RunConfig, city: &PreparedCity) -> Result<ComparisonTable> {
    let layout = RunLayout::new(&cfg.out);
    let stamp = cfg.stamp();
    let (table, _) = compare_models(city, &cfg.compare, cfg.jobs, false)?;
    let dir = layout.compare();
    std::fs::create_dir_all(&dir)?;
    table.write_csv(&dir.join("comparison.csv"), &stamp)?;
    write_text(&dir.join("table.txt"), &stamp, &table.render())?;
    Ok(table)
}

pub fn stage_sweep(cfg: &RunConfig, city: &PreparedCity, radii: &[f64]) -> Result<Vec<SweepRow>> {
    super::config::check_radii(radii)?;
    let layout = RunLayout::new(&cfg.out);
    let rows = radius_sweep(city, radii, &cfg.spec, &WalkabilityConfig::default(), cfg.jobs, false)?;
    let dir = layout.sweep();
    std::fs::create_dir_all(&dir)?;
    write_sweep_csv(&rows, &dir.join("radius_sweep.csv"), &cfg.stamp())?;
    Ok(rows)
}

/// Applies the run's fit to another city (given by its ingest config).
pub fn stage_transfer(cfg: &RunConfig, fit: &ModelFit, target_ingest: &Path) -> Result<TransferReport> {
    let layout = RunLayout::new(&cfg.out);
    let (ic, base) = IngestConfig::from_toml_file(target_ingest)?;
    let (target, _) = ingest_city(&ic, &base)?;
    let prepared = PreparedCity::new(target, fit.spec.corehood_radius_m, &WalkabilityConfig::default())?;
    let rep = transfer_evaluate(fit, &prepared.raw, &prepared.y)?;
    let dir = layout.transfer();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("transfer.json"), serde_json::to_string_pretty(&rep)?)?;
    stamp_json(&dir.join("transfer.json"), &cfg.stamp())?;
    let body = format!(
        "target: {}\nunits: {}\nR2 score (1 - SSE/SST): {:.4}\nsquared correlation: {:.4}\nlog score: {:.2} (mean {:.4})\n",
        target_ingest.display(),
        rep.n,
        rep.r2_score,
        rep.pseudo_r2,
        rep.log_score,
        rep.mean_log_score
    );
    write_text(&dir.join("summary.txt"), &cfg.stamp(), &body)?;
    Ok(rep)
}

/// Full pipeline: data, features, fit, diagnostics, evaluation. On failure
/// the partial outputs stay and a `FAILED` marker names the stage.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PathBuf> {
    let layout = RunLayout::new(&cfg.out);
    std::fs::create_dir_all(&layout.root)?;
    let _ = std::fs::remove_file(layout.failed());
    write_text(&layout.root.join("config.toml"), &cfg.stamp(), &cfg.to_toml())?;
    let result = (|| -> Result<()> {
        let (dataset, _) = stage_data(cfg).map_err(|e| e.in_stage("data"))?;
        let city = stage_features(cfg, dataset).map_err(|e| e.in_stage("features"))?;
        let fit = stage_fit(cfg, &city).map_err(|e| e.in_stage("fit"))?;
        stage_diagnose(cfg, &city, Some(&fit)).map_err(|e| e.in_stage("diagnose"))?;
        stage_evaluate(cfg, &city, &fit).map_err(|e| e.in_stage("evaluate"))?;
        Ok(())
    })();
    if let Err(e) = &result {
        mark_failed(&layout, e);
    }
    result.map(|_| layout.root.clone())
}

/// Writes the `FAILED` marker with the error.
pub fn mark_failed(layout: &RunLayout, e: &Error) {
    let stage = match e {
        Error::Stage { stage, .. } => stage.as_str(),
        _ => "unknown",
    };
    let _ = std::fs::create_dir_all(&layout.root);
    let _ = std::fs::write(layout.failed(), format!("stage: {stage}\nerror: {e}\n"));
}
