use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use corehood::pipeline::{self, DataSource, Overrides, RunConfig, RunLayout};
use corehood::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "corehood", version, about = "Corehood crime models: features, spatial filtering, NB regression")]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Sampler budget: `paper` (15000/5000) or `desk` (1000/1000).
    #[arg(long, global = true)]
    profile: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate and normalize a real city into the run directory.
    Ingest {
        /// Ingest TOML; overrides `data.ingest` from the config.
        input: Option<PathBuf>,
    },
    /// Generate a synthetic city (with its truth) into the run directory.
    Synth,
    /// Corehoods and raw/standardized features.
    Features,
    /// Connectivity, eigenbasis and posterior sampling.
    Fit,
    /// R², PSIS-LOO, residual Moran's I and the fixed/spatial decomposition.
    Evaluate,
    /// Fit and score a list of model specs on the same city.
    Compare {
        /// `FEATURES[/VARIANT[/CONNECTIVITY]]`, e.g. `SD+BE/BSF/distance`.
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
    },
    /// Score the fitted model on another city without refitting.
    Transfer {
        /// Ingest TOML of the target city.
        target: PathBuf,
    },
    /// Refit at several corehood radii (meters).
    SweepRadius {
        #[arg(value_delimiter = ',')]
        radii: Vec<f64>,
    },
    /// Moran's I of the counts, overdispersion tests, and residual checks
    /// when a fit exists.
    Diagnose,
    /// All stages: data, features, fit, diagnose, evaluate.
    Run,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let o = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        profile: cli.profile.clone(),
        jobs: cli.jobs,
    };
    match &cli.config {
        Some(p) => RunConfig::from_file(p, &o),
        None => RunConfig::from_toml_str("", std::path::Path::new("."), &o),
    }
}

fn execute(cli: &Cli, mut cfg: RunConfig) -> Result<()> {
    let layout = RunLayout::new(&cfg.out);
    match &cli.command {
        Command::Ingest { input } => {
            if let Some(p) = input {
                cfg.data = DataSource::Ingest { path: p.clone() };
            }
            if !matches!(cfg.data, DataSource::Ingest { .. }) {
                return Err(Error::Config {
                    field: "data.ingest".into(),
                    message: "no ingest config given (pass a path or set data.source = \"ingest\")".into(),
                });
            }
            let (ds, report) = pipeline::stage_data(&cfg)?;
            println!("{} units, {} crimes; {} validation entries", ds.units.len(), ds.crimes.len(), report.entries.len());
        }
        Command::Synth => {
            if !matches!(cfg.data, DataSource::Synth(_)) {
                return Err(Error::Config { field: "data.source".into(), message: "`synth` needs a synthetic data source".into() });
            }
            let (ds, _) = pipeline::stage_data(&cfg)?;
            println!("{} units, {} crimes -> {}", ds.units.len(), ds.crimes.len(), layout.city().display());
        }
        Command::Features => {
            let ds = pipeline::load_city(&layout)?;
            let city = pipeline::stage_features(&cfg, ds)?;
            println!("{} cores, {} raw features -> {}", city.y.len(), city.raw.names.len(), layout.features().display());
        }
        Command::Fit => {
            let city = pipeline::load_prepared(&cfg)?;
            let fit = pipeline::stage_fit(&cfg, &city)?;
            println!(
                "{}: {} draws, max R-hat {:.4}, {:.1} s",
                fit.spec.label(),
                fit.samples.n_draws(),
                fit.samples.rhat.iter().cloned().fold(f64::NAN, f64::max),
                fit.runtime_s
            );
        }
        Command::Evaluate => {
            let city = pipeline::load_prepared(&cfg)?;
            let fit = pipeline::load_fit(&cfg)?;
            let rep = pipeline::stage_evaluate(&cfg, &city, &fit)?;
            print!("{}", rep.summary());
        }
        Command::Compare { models } => {
            if !models.is_empty() {
                cfg.compare = models
                    .iter()
                    .map(|m| pipeline::parse_model_entry(m, &cfg.spec))
                    .collect::<Result<Vec<_>>>()?;
            }
            let city = pipeline::load_prepared(&cfg)?;
            let table = pipeline::stage_compare(&cfg, &city)?;
            print!("{}", table.render());
        }
        Command::Transfer { target } => {
            let fit = pipeline::load_fit(&cfg)?;
            let rep = pipeline::stage_transfer(&cfg, &fit, target)?;
            println!("R2 {:.4}, squared correlation {:.4}, log score {:.2}", rep.r2_score, rep.pseudo_r2, rep.log_score);
        }
        Command::SweepRadius { radii } => {
            let radii = if radii.is_empty() { cfg.radii.clone() } else { radii.clone() };
            pipeline::check_radii(&radii)?;
            let city = pipeline::load_prepared(&cfg)?;
            let rows = pipeline::stage_sweep(&cfg, &city, &radii)?;
            let f = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |v| format!("{v:.prec$}"));
            println!("{:>10} {:>10} {:>8} {:>8} {:>12}", "radius_m", "mean_size", "R2_m", "R2_c", "elpd_loo");
            for r in rows {
                println!(
                    "{:>10.2} {:>10.2} {:>8} {:>8} {:>12}",
                    r.radius_m,
                    r.mean_corehood_size,
                    f(r.r2_marginal, 4),
                    f(r.r2_conditional, 4),
                    f(r.loo_elpd, 2)
                );
                if let Some(w) = r.warning {
                    println!("  warning: {w}");
                }
            }
        }
        Command::Diagnose => {
            let city = pipeline::load_prepared(&cfg)?;
            let fit = pipeline::load_fit(&cfg).ok();
            for t in pipeline::stage_diagnose(&cfg, &city, fit.as_ref())? {
                match t.p_value {
                    Some(p) => println!("{}: {:.4} (p = {:.4}) {}", t.name, t.statistic, p, t.verdict),
                    None => println!("{}: {:.4} {}", t.name, t.statistic, t.verdict),
                }
            }
        }
        Command::Run => {
            let dir = pipeline::run_pipeline(&cfg)?;
            println!("run complete: {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = load_config(&cli).and_then(|cfg| execute(&cli, cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
