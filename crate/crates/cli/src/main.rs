//! `npr`: corpus generation, NPR extraction, training, evaluation and the
//! reproduction experiment.
//!
//! Exit codes: 0 success, 2 invalid configuration or input data, 3 I/O or
//! decode failure, 4 non-finite values during training.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use npr_core::config::DEFAULT_SEED;
use npr_core::data::{Representation, DEFAULT_CROP};
use npr_core::experiment::{self, EvalRun, ReproConfig, TrainRun, CONFIG_FILE};
use npr_core::nn::{TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_LEARNING_RATE};
use npr_core::npr::{write_npr_file, DEFAULT_GRID_SIDE};
use npr_core::seed;
use npr_core::synthgen::{self, CorpusConfig, DecoderSpec, RealSource, SourceConfig, UpsampleKind};
use npr_core::{extract_npr, npr_difference, npr_heatmap, Error, GridSpec, ImageTensor, Pivot, Result};

#[derive(Parser)]
#[command(name = "npr", version, about = "Neighboring pixel relationship forensics")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "NPR_JOBS")]
    jobs: Option<usize>,
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic real/fake corpus.
    Gen(GenArgs),
    /// Extract the NPR map of an image, optionally as heatmaps.
    Extract(ExtractArgs),
    /// Train a detector on a corpus.
    Train(TrainArgs),
    /// Evaluate a checkpoint on every source of a corpus.
    Eval(EvalArgs),
    /// Run the desk-scale cross-generator experiment end to end.
    Repro(ReproArgs),
}

#[derive(Args, Clone)]
struct GridArgs {
    /// Grid side length.
    #[arg(long = "l", default_value_t = DEFAULT_GRID_SIDE)]
    side: usize,
    /// Pivot: index:J (1-based, row-major), avg or max.
    #[arg(long, default_value = "index:1")]
    pivot: Pivot,
}

impl GridArgs {
    fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.side, self.pivot)
    }
}

#[derive(Args)]
struct GenArgs {
    /// Corpus root to write.
    #[arg(long, required_unless_present = "config")]
    out: Option<PathBuf>,
    /// Comma-separated sources, each `kind[:seed=N][:depth=D][:hidden=H][:name=S]`
    /// with kind `nearest` or `bilinear`.
    #[arg(long, default_value = "nearest,bilinear")]
    sources: String,
    /// Images per class and source.
    #[arg(long, default_value_t = 200)]
    count: usize,
    /// Side length of the square images.
    #[arg(long, default_value_t = DEFAULT_CROP)]
    size: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Default number of upsampling stages.
    #[arg(long, default_value_t = 1)]
    depth: usize,
    /// Default hidden channel count.
    #[arg(long, default_value_t = 8)]
    hidden: usize,
    /// Take reals from this directory instead of procedural textures.
    #[arg(long)]
    real_dir: Option<PathBuf>,
    /// Rerun from a `config.json` written by a previous run.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    /// Input image (PNG or JPEG).
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    /// Also write one grayscale heatmap PNG per channel.
    #[arg(long)]
    heatmap: bool,
    /// Write differential heatmaps of the input's NPR minus this image's.
    #[arg(long)]
    diff: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, required_unless_present = "config")]
    corpus: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    out: Option<PathBuf>,
    /// Detector input: `npr` or `pixels`.
    #[arg(long, default_value = "npr")]
    input: String,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = DEFAULT_CROP)]
    crop: usize,
    /// Random instead of center crops for training images.
    #[arg(long)]
    random_crop: bool,
    /// Enlarge images smaller than the crop (nearest neighbor).
    #[arg(long)]
    allow_upscale: bool,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    lr: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    /// Write `last.nprm` every this many epochs.
    #[arg(long, default_value_t = 1)]
    checkpoint_every: usize,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "config")]
    checkpoint: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    corpus: Option<PathBuf>,
    /// Directory for report.csv, report.json and report.txt.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CROP)]
    crop: usize,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ReproArgs {
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Parent directory; the run is written to `<out>/seed-<seed>`.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    /// Training-source images per class (split into train and validation).
    #[arg(long)]
    train_count: Option<usize>,
    /// Test images per class and source.
    #[arg(long)]
    test_count: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_source(spec: &str, base_seed: u64, depth: usize, hidden: usize) -> Result<SourceConfig> {
    let mut parts = spec.split(':');
    let kind: UpsampleKind = parts.next().unwrap_or_default().trim().parse()?;
    let mut name = kind.to_string();
    let mut decoder = DecoderSpec {
        seed: seed::derive(base_seed, &[seed::hash_str("decoder"), seed::hash_str(&name)]),
        upsample_kind: kind,
        depth,
        channels_hidden: hidden,
    };
    for part in parts {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value in source '{spec}', got '{part}'")))?;
        let number = || {
            value
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("'{value}' is not a number in source '{spec}'")))
        };
        match key {
            "seed" => decoder.seed = number()?,
            "depth" => decoder.depth = number()? as usize,
            "hidden" => decoder.channels_hidden = number()? as usize,
            "name" => name = value.to_string(),
            _ => return Err(Error::Config(format!("unknown key '{key}' in source '{spec}'"))),
        }
    }
    Ok(SourceConfig { name, decoder })
}

fn write_config<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable config") + "\n";
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let config = match &args.config {
        Some(path) => experiment::read_config::<CorpusConfig>(path)?,
        None => {
            let sources = args
                .sources
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| parse_source(s.trim(), args.seed, args.depth, args.hidden))
                .collect::<Result<Vec<_>>>()?;
            CorpusConfig {
                root: args.out.clone().expect("required by clap"),
                sources,
                count: args.count,
                image_size: args.size,
                seed: args.seed,
                real_source: args.real_dir.clone().map_or(RealSource::Procedural, RealSource::Directory),
            }
        }
    };
    let manifests = synthgen::build_corpus(&config)?;
    write_config(&config.root.join(CONFIG_FILE), &config)?;
    for m in &manifests {
        println!(
            "{}: {} real + {} fake ({} upsampling, depth {}, decoder seed {})",
            m.source_name, m.count, m.count, m.decoder.upsample_kind, m.decoder.depth, m.decoder.seed
        );
    }
    println!("corpus written to {}", config.root.display());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ExtractConfig {
    input: PathBuf,
    out: PathBuf,
    grid: GridSpec,
    heatmap: bool,
    diff: Option<PathBuf>,
}

fn channel_names(channels: usize) -> Vec<String> {
    if channels == 3 {
        ["r", "g", "b"].map(String::from).to_vec()
    } else {
        (0..channels).map(|c| format!("c{c}")).collect()
    }
}

fn cmd_extract(args: ExtractArgs) -> Result<()> {
    let grid = args.grid.grid()?;
    let image = ImageTensor::load(&args.input)?;
    let npr = extract_npr(&image, grid)?;
    let other = match &args.diff {
        Some(path) => {
            let other = extract_npr(&ImageTensor::load(path)?, grid)?;
            Some(npr_difference(&npr, &other)?)
        }
        None => None,
    };
    let stem = args
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let names = channel_names(npr.channels());
    let npr_path = args.out.join(format!("{stem}.npr"));
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(format!("creating {}", args.out.display()), e))?;
    write_npr_file(&npr, &npr_path)?;
    println!("{}", npr_path.display());
    if args.heatmap {
        for (c, name) in names.iter().enumerate() {
            let path = args.out.join(format!("{stem}_heatmap_{name}.png"));
            npr_heatmap(&npr, c)?.save_png(&path)?;
            println!("{}", path.display());
        }
    }
    if let Some(diff) = &other {
        for (c, name) in names.iter().enumerate() {
            let path = args.out.join(format!("{stem}_diff_{name}.png"));
            npr_heatmap(diff, c)?.save_png(&path)?;
            println!("{}", path.display());
        }
    }
    write_config(
        &args.out.join(format!("{stem}.config.json")),
        &ExtractConfig {
            input: args.input.clone(),
            out: args.out.clone(),
            grid,
            heatmap: args.heatmap,
            diff: args.diff.clone(),
        },
    )
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let run = match &args.config {
        Some(path) => experiment::read_config::<TrainRun>(path)?,
        None => {
            let input = match args.input.as_str() {
                "npr" => Representation::Npr(args.grid.grid()?),
                "pixels" => Representation::Pixels,
                other => return Err(Error::Config(format!("unknown input '{other}', expected npr or pixels"))),
            };
            TrainRun {
                corpus: args.corpus.clone().expect("required by clap"),
                out: args.out.clone().expect("required by clap"),
                input,
                crop: args.crop,
                random_crop: args.random_crop,
                allow_upscale: args.allow_upscale,
                train: TrainConfig {
                    batch_size: args.batch_size,
                    epochs: args.epochs,
                    seed: args.seed,
                    lr: args.lr,
                    checkpoint_every: args.checkpoint_every,
                    val_fraction: args.val_fraction,
                },
            }
        }
    };
    println!(
        "input={} lr={} batch={} epochs={} seed={} crop={}",
        run.input, run.train.lr, run.train.batch_size, run.train.epochs, run.train.seed, run.crop
    );
    let summary = experiment::run_train(&run)?;
    for r in &summary.history {
        println!(
            "epoch {:>3}  train_loss {:.5}  val_acc {:6.2}  val_ap {:6.2}",
            r.epoch, r.train_loss, r.val_acc, r.val_ap
        );
    }
    let best = summary.best();
    println!(
        "best epoch {} (val_acc {:.2}, val_ap {:.2}) on {} train / {} val samples; checkpoint {}",
        best.epoch,
        best.val_acc,
        best.val_ap,
        summary.train_samples,
        summary.val_samples,
        run.out.join(experiment::MODEL_FILE).display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let run = match &args.config {
        Some(path) => experiment::read_config::<EvalRun>(path)?,
        None => EvalRun {
            checkpoint: args.checkpoint.clone().expect("required by clap"),
            corpus: args.corpus.clone().expect("required by clap"),
            out: args.out.clone(),
            crop: args.crop,
            batch_size: args.batch_size,
        },
    };
    let report = experiment::run_eval(&run)?;
    print!("{}", report.to_table());
    for row in report.rows.iter().filter_map(|r| r.invalid.as_ref().map(|m| (&r.source, m))) {
        eprintln!("warning: {} excluded from the mean: {}", row.0, row.1);
    }
    Ok(())
}

fn cmd_repro(args: ReproArgs) -> Result<()> {
    let config = match &args.config {
        Some(path) => experiment::read_config::<ReproConfig>(path)?,
        None => {
            let d = ReproConfig::default();
            ReproConfig {
                seed: args.seed,
                out: args.out.clone(),
                epochs: args.epochs.unwrap_or(d.epochs),
                image_size: args.image_size.unwrap_or(d.image_size),
                train_count: args.train_count.unwrap_or(d.train_count),
                test_count: args.test_count.unwrap_or(d.test_count),
                ..d
            }
        }
    };
    let report = experiment::run_repro(&config)?;
    print!("{}", report.to_table());
    println!("artifacts in {}", config.run_dir().display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Repro(a) => cmd_repro(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
