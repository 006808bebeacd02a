use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use satsynth::ingest::SourceTag;
use satsynth::pipelines::{BasemapMode, ManipulationClass};
use satsynth_cli::config::parse_override;
use satsynth_cli::generate::{InpaintArgs, SampleArgs};
use satsynth_cli::{dataset, evaluate, generate, serve, train, CliError, RunConfig};
use toml::Value;

#[derive(Parser)]
#[command(name = "satsynth", version, about = "Synthetic satellite imagery and forensic benchmarking")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoints: Option<PathBuf>,
    /// Model preset: micro, toy or full.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Diffusion steps.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Compute threads (0 = one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override any config key, e.g. `--set train.batch_size=8`. Repeatable;
    /// applied after every other flag.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train or resume a diffusion model.
    Train(TrainArgs),
    /// Generate fully synthetic images.
    Sample(SampleCmd),
    /// Regenerate the masked region of an image.
    Inpaint(InpaintCmd),
    /// Build a dataset split from stored tiles and trained models.
    BuildDataset(BuildArgs),
    /// Score adapters on a dataset split.
    Evaluate(EvalArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// image, basemap or disaster.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    source: Option<String>,
    /// Target iteration count (absolute, also when resuming).
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Start from scratch even if a checkpoint exists.
    #[arg(long)]
    fresh: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Truth,
    Generated,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassArg {
    BuildingsRoads,
    GreenspaceWater,
}

#[derive(Args)]
struct SampleCmd {
    #[arg(long)]
    city: String,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Basemap source; defaults to generated when a basemap model exists.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, default_value = "samples")]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    cfg_scale: f64,
    /// Model source tag; defaults to `train.source`.
    #[arg(long)]
    source: Option<SourceTag>,
}

#[derive(Args)]
struct InpaintCmd {
    #[arg(long)]
    image: PathBuf,
    /// Binary mask PNG; white pixels are regenerated.
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    basemap: Option<PathBuf>,
    #[arg(long)]
    city: String,
    #[arg(long)]
    out: PathBuf,
    /// Edit the basemap first with this class (two-stage).
    #[arg(long, value_enum)]
    manip_class: Option<ClassArg>,
    #[arg(long, default_value_t = 1.0)]
    cfg_scale: f64,
    #[arg(long)]
    source: Option<SourceTag>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p_pristine: Option<f64>,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    report: Option<PathBuf>,
    /// per-image or pooled.
    #[arg(long)]
    aggregation: Option<String>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    addr: Option<String>,
    /// Concurrent jobs.
    #[arg(long)]
    workers: Option<usize>,
}

fn path_value(p: &std::path::Path) -> Value {
    Value::String(p.to_string_lossy().into_owned())
}

fn overrides(cli: &Cli) -> Result<Vec<(String, Value)>, CliError> {
    let mut o: Vec<(String, Value)> = Vec::new();
    let mut put = |k: &str, v: Option<Value>| {
        if let Some(v) = v {
            o.push((k.to_string(), v));
        }
    };
    let int = |v: u64| Value::Integer(v as i64);
    put("seed", cli.seed.map(int));
    put("paths.data_root", cli.data_root.as_deref().map(path_value));
    put("paths.checkpoints", cli.checkpoints.as_deref().map(path_value));
    put("model.preset", cli.preset.clone().map(Value::String));
    put("model.steps", cli.steps.map(|v| int(v as u64)));
    put("workers.threads", cli.threads.map(|v| int(v as u64)));
    match &cli.command {
        Cmd::Train(a) => {
            put("train.kind", a.kind.clone().map(Value::String));
            put("train.source", a.source.clone().map(Value::String));
            put("train.iterations", a.iterations.map(int));
            put("train.batch_size", a.batch_size.map(|v| int(v as u64)));
            put("train.learning_rate", a.lr.map(Value::Float));
            put("train.checkpoint_every", a.checkpoint_every.map(int));
        }
        Cmd::BuildDataset(a) => {
            put("dataset.split", a.split.clone().map(Value::String));
            put("dataset.n", a.n.map(|v| int(v as u64)));
            put("dataset.p_pristine", a.p_pristine.map(Value::Float));
            put("dataset.overwrite", a.overwrite.then_some(Value::Boolean(true)));
        }
        Cmd::Evaluate(a) => {
            put("evaluate.split", a.split.clone().map(Value::String));
            put("evaluate.report", a.report.as_deref().map(path_value));
            put("evaluate.aggregation", a.aggregation.clone().map(Value::String));
        }
        Cmd::Serve(a) => {
            put("serve.addr", a.addr.clone().map(Value::String));
            put("workers.service", a.workers.map(|v| int(v as u64)));
        }
        Cmd::Sample(_) | Cmd::Inpaint(_) => {}
    }
    for s in &cli.sets {
        o.push(parse_override(s)?);
    }
    Ok(o)
}

fn fmt_loss(l: Option<f64>) -> String {
    l.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides(cli)?)?;
    println!("config-digest {}", cfg.digest());
    if cfg.workers.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers.threads)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match &cli.command {
        Cmd::Train(a) => {
            let stop = Arc::new(AtomicBool::new(false));
            let flag = stop.clone();
            if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
                log::warn!("no interrupt handler: {e}");
            }
            let s = train::run(&cfg, a.fresh, &stop)?;
            println!("examples {}", s.examples);
            println!("iteration {} (from {})", s.iteration, s.start_iteration);
            println!("loss_first{} {}", train::LOSS_WINDOW, fmt_loss(s.first_loss));
            println!("loss_last{} {}", train::LOSS_WINDOW, fmt_loss(s.last_loss));
            println!("checkpoint {}", cfg.checkpoint_path(cfg.train.kind, cfg.train.source).display());
            println!("param_digest {}", s.param_digest);
            if s.interrupted {
                println!("interrupted");
            }
        }
        Cmd::Sample(a) => {
            let args = SampleArgs {
                city: a.city.clone(),
                count: a.count,
                mode: a.mode.map(|m| match m {
                    ModeArg::Truth => BasemapMode::Truth,
                    ModeArg::Generated => BasemapMode::Generated,
                    ModeArg::None => BasemapMode::None,
                }),
                out: a.out.clone(),
                cfg_scale: a.cfg_scale,
                source: a.source.unwrap_or(cfg.train.source),
            };
            for w in generate::sample(&cfg, &args)? {
                println!("{} {}", w.digest, w.path.display());
            }
        }
        Cmd::Inpaint(a) => {
            let args = InpaintArgs {
                image: a.image.clone(),
                mask: a.mask.clone(),
                basemap: a.basemap.clone(),
                city: a.city.clone(),
                out: a.out.clone(),
                manip_class: a.manip_class.map(|c| match c {
                    ClassArg::BuildingsRoads => ManipulationClass::BuildingsRoads,
                    ClassArg::GreenspaceWater => ManipulationClass::GreenspaceWater,
                }),
                cfg_scale: a.cfg_scale,
                source: a.source.unwrap_or(cfg.train.source),
            };
            for w in generate::inpaint_file(&cfg, &args)? {
                println!("{} {}", w.digest, w.path.display());
            }
        }
        Cmd::BuildDataset(_) => {
            let out = dataset::build(&cfg)?;
            let c = &out.manifest.header.counts;
            println!("manifest {}", out.manifest_path.display());
            println!("manifest-digest {}", out.manifest.digest());
            println!(
                "records {} pristine {} fully {} partially {}",
                out.manifest.records.len(),
                c.pristine,
                c.fully_synthetic,
                c.partially_manipulated
            );
            println!("validation {}", out.report_path.display());
        }
        Cmd::Evaluate(_) => {
            let out = evaluate::run(&cfg)?;
            print!("{}", out.report.render_text());
            println!("report {}", out.path.display());
            println!("report-digest {}", out.report.digest());
            if !out.report.errors.is_empty() {
                let first = &out.report.errors[0];
                return Err(CliError::Adapter(format!(
                    "{} adapter failures (first: {} {}: {})",
                    out.report.errors.len(),
                    first.adapter,
                    first.item.as_deref().unwrap_or("-"),
                    first.detail
                )));
            }
        }
        Cmd::Serve(_) => serve::run(&cfg)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("satsynth: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
