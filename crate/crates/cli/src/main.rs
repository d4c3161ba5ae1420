use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};

use clinpred::runner::{self, Context, PipelineConfig};
use clinpred::service::{self, LoadedModel, ServiceState};
use clinpred::{synthetic, ModelArtifact};

#[derive(Parser)]
#[command(
    name = "clinpred",
    version,
    about = "COVID-19 triage risk models: train, evaluate, explain, serve"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by the pipeline stages. Flags override `CLINPRED_*`
/// environment variables, which override the config file.
#[derive(Args, Clone, Default)]
struct PipelineArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    cohort: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Search runs per family.
    #[arg(long)]
    n_runs: Option<usize>,
    #[arg(long)]
    bootstrap_n: Option<usize>,
    /// Comma-separated tasks or `all`.
    #[arg(long)]
    task: Option<String>,
    /// Comma-separated families or `all`.
    #[arg(long)]
    family: Option<String>,
}

impl PipelineArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut o: Vec<(&str, String)> = Vec::new();
        let mut push = |k, v: Option<String>| {
            if let Some(v) = v {
                o.push((k, v));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        push("cohort", path(&self.cohort));
        push("schema", path(&self.schema));
        push("out", path(&self.out));
        push("seed", self.seed.map(|v| v.to_string()));
        push("workers", self.workers.map(|v| v.to_string()));
        push("n_runs", self.n_runs.map(|v| v.to_string()));
        push("bootstrap_n", self.bootstrap_n.map(|v| v.to_string()));
        push("tasks", self.task.clone());
        push("families", self.family.clone());
        Ok(PipelineConfig::resolve(
            self.config.as_deref(),
            |k| std::env::var(k).ok(),
            &o,
        )?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Stratified train/validation/test split.
    Split(PipelineArgs),
    /// Fit the preprocessor on each task's training fold.
    Preprocess(PipelineArgs),
    /// Random hyperparameter search per task and family.
    Search(PipelineArgs),
    /// Score selected models on the test fold with bootstrap intervals.
    Evaluate(PipelineArgs),
    /// Masked-feature importance of each task's headline model.
    Explain(PipelineArgs),
    /// Result tables, curve files and the run manifest.
    Report(PipelineArgs),
    /// All stages in order.
    Run(PipelineArgs),
    /// Score one JSON record the way `POST /score` does.
    Score {
        /// Run manifest; its headline models are used.
        #[arg(
            long,
            conflicts_with = "artifact",
            required_unless_present = "artifact"
        )]
        manifest: Option<PathBuf>,
        /// A single model artifact instead of a manifest.
        #[arg(long)]
        artifact: Option<PathBuf>,
        /// Request body file; `-` reads stdin.
        #[arg(long, default_value = "-")]
        record: PathBuf,
    },
    /// Serve the headline models over HTTP.
    Serve {
        #[arg(long, default_value = "out/manifest.json")]
        manifest: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// Write a synthetic cohort in the Kaggle column layout.
    Synth {
        #[arg(long, default_value_t = 5644)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        output: PathBuf,
    },
}

fn stage<T>(
    args: &PipelineArgs,
    f: impl FnOnce(&mut Context) -> Result<T, runner::RunError>,
) -> Result<T> {
    let cfg = args.resolve()?;
    rayon_threads(cfg.workers);
    let mut ctx = Context::new(cfg);
    Ok(f(&mut ctx)?)
}

fn rayon_threads(n: usize) {
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
    {
        log::warn!("worker pool already initialised: {e}");
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        std::io::Read::read_to_end(&mut std::io::stdin(), &mut buf)?;
        Ok(buf)
    } else {
        std::fs::read(path).with_context(|| format!("reading {}", path.display()))
    }
}

fn single_artifact_state(path: &Path) -> Result<ServiceState> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let artifact = ModelArtifact::from_json(&String::from_utf8_lossy(&bytes))?;
    let task = artifact.task;
    let sha256 = runner::manifest::sha256_hex(&bytes);
    let models = BTreeMap::from([(
        task,
        LoadedModel {
            artifact,
            sha256,
            path: path.to_path_buf(),
        },
    )]);
    Ok(ServiceState::new(models)?)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Split(a) => stage(&a, |c| runner::stage_split(c).map(drop)),
        Command::Preprocess(a) => stage(&a, runner::stage_preprocess),
        Command::Search(a) => stage(&a, runner::stage_search),
        Command::Evaluate(a) => stage(&a, |c| runner::stage_evaluate(c).map(drop)),
        Command::Explain(a) => stage(&a, |c| runner::stage_explain(c).map(drop)),
        Command::Report(a) => {
            let m = stage(&a, runner::stage_report)?;
            let problems = m.audit_problems();
            if !problems.is_empty() {
                bail!("test-fold audit failed: {}", problems.join("; "));
            }
            Ok(())
        }
        Command::Run(a) => {
            let cfg = a.resolve()?;
            rayon_threads(cfg.workers);
            let m = runner::run_pipeline(cfg)?;
            for (task, h) in &m.headline {
                println!("{task}\t{}\ttest AUC {:.3}", h.family.label(), h.test_auc);
            }
            Ok(())
        }
        Command::Score {
            manifest,
            artifact,
            record,
        } => {
            let state = match (manifest, artifact) {
                (Some(m), _) => ServiceState::from_manifest(&m)?,
                (None, Some(a)) => single_artifact_state(&a)?,
                (None, None) => unreachable!("clap requires one"),
            };
            let body = read_input(&record)?;
            match service::score_body(&state, &body) {
                Ok(r) => println!("{}", serde_json::to_string_pretty(&r)?),
                Err(e) => {
                    println!("{}", serde_json::to_string_pretty(&e)?);
                    bail!("{}", e.error);
                }
            }
            Ok(())
        }
        Command::Serve { manifest, bind } => {
            let state = ServiceState::from_manifest(&manifest)
                .with_context(|| format!("refusing to start from {}", manifest.display()))?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(service::serve(Arc::new(state), bind))?;
            Ok(())
        }
        Command::Synth { n, seed, output } => {
            std::fs::write(&output, synthetic::generate_csv(n, seed))
                .with_context(|| format!("writing {}", output.display()))?;
            Ok(())
        }
    }
}
