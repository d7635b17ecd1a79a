use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ubdd_core::config::PipelineConfig;
use ubdd_core::dataset::{load_manifest, NamingConvention, SyntheticSceneSpec};
use ubdd_core::inference::remote::BACKEND_URL_ENV;
use ubdd_core::inference::Backends;
use ubdd_core::runner::{self, BackendSpec};
use ubdd_core::{Error, Result};

#[derive(Parser)]
#[command(name = "ubdd", version, about = "Zero-shot building damage detection on pre/post disaster image pairs")]
struct Cli {
    /// Worker threads; defaults to available parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct InferenceArgs {
    /// Run config (JSON). Missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root, or a manifest JSON file.
    #[arg(long)]
    data: PathBuf,
    /// `mock` or `remote:URL`.
    #[arg(long, default_value = "mock")]
    backend: String,
}

#[derive(Subcommand)]
enum Command {
    /// Building boxes and masks from the pre-event image.
    Localize {
        #[command(flatten)]
        inf: InferenceArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Undamaged/damaged masks for each image pair.
    Assess {
        #[command(flatten)]
        inf: InferenceArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filtered multiscale building proposals as a COCO file.
    PseudoLabel {
        #[command(flatten)]
        inf: InferenceArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep the most confident fraction of each class.
    SelectConfident {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pixel-level (and optionally object-level) scores.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        object_level: Option<PathBuf>,
        #[arg(long)]
        per_scene_csv: Option<PathBuf>,
    },
    /// Generate a synthetic dataset and its mock world.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the mock backend over HTTP.
    ServeMock {
        /// Directory holding mock_world.json.
        #[arg(long)]
        world: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Overlay a label mask on the post-event image.
    Render {
        #[arg(long)]
        pair: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scene: Option<String>,
    },
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::from_path(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn prepare(inf: &InferenceArgs) -> Result<(PipelineConfig, ubdd_core::dataset::DatasetManifest, Backends)> {
    let config = load_config(inf.config.as_deref())?;
    let spec: BackendSpec = inf.backend.parse()?;
    let manifest = load_manifest(&inf.data, &NamingConvention::default())?;
    for ex in &manifest.excluded {
        log::warn!("skipping scene {}: {}", ex.scene_id, ex.reason);
    }
    let backends = runner::build_backends(&spec, &config, Some(&inf.data))?;
    Ok((config, manifest, backends))
}

fn run(cli: Cli) -> Result<()> {
    let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;

    match cli.command {
        Command::Localize { inf, out } => {
            let (config, manifest, backends) = prepare(&inf)?;
            runner::run_localize(&manifest, &out, &config, &backends)
        }
        Command::Assess { inf, out } => {
            let (config, manifest, backends) = prepare(&inf)?;
            runner::run_assess(&manifest, &out, &config, &backends)
        }
        Command::PseudoLabel { inf, out } => {
            let (config, manifest, backends) = prepare(&inf)?;
            runner::run_pseudo_label(&manifest, &out, &config, &backends)
        }
        Command::SelectConfident { input, fraction, out } => runner::run_select_confident(&input, fraction, &out),
        Command::Eval { pred, gt, report, object_level, per_scene_csv } => {
            runner::run_eval(&pred, &gt, &report, object_level.as_deref(), per_scene_csv.as_deref())
        }
        Command::Synth { spec, count, out } => {
            let bytes = std::fs::read(&spec).map_err(|e| Error::io(&spec, e))?;
            let spec = SyntheticSceneSpec::from_json_bytes(&bytes)?;
            runner::run_synth(&spec, count, &out)
        }
        Command::ServeMock { world, port, host } => {
            let mock = runner::mock_from_world_dir(&world)?;
            let handle = ubdd_core::inference::server::serve(&format!("{host}:{port}"), Backends::uniform(mock), jobs)?;
            println!("{}", handle.base_url());
            log::info!("serving mock backend; point {BACKEND_URL_ENV} at {}", handle.base_url());
            handle.join();
            Ok(())
        }
        Command::Render { pair, mask, out, scene } => runner::run_render(&pair, scene.as_deref(), &mask, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({
                "error": { "kind": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() }
            });
            eprintln!("{report}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
