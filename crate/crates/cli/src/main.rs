use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use snakepoly::dataset::{build_dataset, load_dataset, save_dataset, BatchPolicy, DatasetSpec, Validation};
use snakepoly::diffusion::{binarize, sample, NoiseSchedule, SamplingPlan};
use snakepoly::enumerate::{
    construct_serpentine, enumerate_maximal_snakes, max_snake_length, SearchLimits, SearchOptions,
};
use snakepoly::eval::{evaluate_model, report, EvalConfig, PaddedPredictor, ReportFormat};
use snakepoly::grid::{parse_grids, render_pbm, serialize_grid, serialize_grids};
use snakepoly::nn::{fit, load_checkpoint, save_checkpoint, Checkpoint, Denoiser, LrSchedule, Trainer, TrainingConfig};

#[derive(Parser)]
#[command(name = "snakepoly", version, about = "Maximal snake polyominoes: enumeration and diffusion sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Longest snake length for a size, with witnesses.
    Enumerate {
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        /// Number of witnesses to print (with --all-maximal: cap on the list).
        #[arg(long, default_value_t = 1)]
        witnesses: usize,
        /// Print every maximal snake (up to --witnesses) instead of a sample of witnesses.
        #[arg(long)]
        all_maximal: bool,
        /// Count maximal snakes up to symmetry.
        #[arg(long)]
        symmetry: bool,
    },
    /// Structural report, one line per grid of a grid text file.
    Classify {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Writes each grid of a grid text file as an image.
    Render {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ImageFormat::Pbm)]
        format: ImageFormat,
    },
    /// Serpentine lower-bound snake.
    Construct {
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
    },
    /// Build or inspect training datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a denoiser on a dataset.
    Train(TrainArgs),
    /// Draw grids from a trained denoiser.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Strided inference steps (default: every training timestep).
        #[arg(long)]
        steps: Option<usize>,
        /// Write every intermediate image (PBM plus real-valued text) per sample.
        #[arg(long)]
        dump_trajectory: Option<PathBuf>,
    },
    /// Sample at several sizes and report aggregate statistics.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Comma-separated sizes, e.g. `3x3,4x6`.
        #[arg(long)]
        sizes: String,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
        format: OutputFormat,
        /// Directory for PBM renders of the best snake per size.
        #[arg(long)]
        render_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Enumerate maximal snakes per a JSON dataset spec.
    Build {
        /// JSON `DatasetSpec`; the desk-scale default spec when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the version, record count and per-size histogram of a dataset file.
    Inspect {
        #[arg(long = "in")]
        input: PathBuf,
        /// Skip per-record validation.
        #[arg(long)]
        no_validate: bool,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON `TrainingConfig` (network, schedule, optimizer, fit); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    timesteps: Option<usize>,
    #[arg(long)]
    masked_loss: bool,
    #[arg(long, value_enum)]
    policy: Option<Policy>,
    #[arg(long, value_enum)]
    lr_schedule: Option<LrKind>,
    /// Print the mean loss every this many steps.
    #[arg(long, default_value_t = 100)]
    log_every: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ImageFormat {
    Pbm,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Text,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Stratified,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum LrKind {
    Constant,
    Cosine,
}

/// A failure reported as one `error code=<code> message=<text>` line.
struct CliError {
    code: &'static str,
    message: String,
}

impl CliError {
    fn new(code: &'static str, err: impl Display) -> Self {
        Self { code, message: err.to_string() }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::new("io", format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(io(path))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))
}

fn parse_sizes(text: &str) -> CliResult<Vec<(usize, usize)>> {
    text.split(',')
        .map(|item| {
            let (h, w) = item.trim().split_once(['x', 'X']).ok_or_else(|| {
                CliError::new("usage", format!("size {item:?} is not of the form HxW"))
            })?;
            match (h.parse(), w.parse()) {
                (Ok(h), Ok(w)) if h > 0 && w > 0 => Ok((h, w)),
                _ => Err(CliError::new("usage", format!("size {item:?} is not of the form HxW"))),
            }
        })
        .collect()
}

fn load(ckpt: &Path) -> CliResult<(Checkpoint, NoiseSchedule)> {
    let ck = load_checkpoint(ckpt, None).map_err(|e| CliError::new("checkpoint", format!("{}: {e}", ckpt.display())))?;
    let schedule = ck.schedule.build().map_err(|e| CliError::new("checkpoint", e))?;
    Ok((ck, schedule))
}

fn plan_for(schedule: &NoiseSchedule, steps: Option<usize>) -> CliResult<SamplingPlan> {
    match steps {
        Some(s) => schedule.respaced(s).map_err(|e| CliError::new("usage", e)),
        None => Ok(schedule.full_plan()),
    }
}

fn run(cli: Cli) -> CliResult {
    let limits = SearchLimits::from_env();
    match cli.command {
        Command::Enumerate { height, width, witnesses, all_maximal, symmetry } => {
            if all_maximal {
                let found = enumerate_maximal_snakes(height, width, witnesses, &limits)
                    .map_err(|e| CliError::new("enumeration", e))?;
                println!(
                    "height={height} width={width} max_length={} listed={} truncated={}",
                    found.max_length,
                    found.grids.len(),
                    found.truncated
                );
                print_grids(&found.grids);
            } else {
                let opts = SearchOptions { cap_witnesses: witnesses, use_symmetry: symmetry, limits };
                let res = max_snake_length(height, width, &opts).map_err(|e| CliError::new("enumeration", e))?;
                println!("{}", res.summary_line());
                print_grids(&res.witnesses);
            }
        }
        Command::Classify { input } => {
            let grids = parse_grids(&read_text(&input)?).map_err(|e| CliError::new("parse", e))?;
            for g in grids {
                println!("{}", g.classify());
            }
        }
        Command::Render { input, out, format: ImageFormat::Pbm } => {
            let grids = parse_grids(&read_text(&input)?).map_err(|e| CliError::new("parse", e))?;
            fs::create_dir_all(&out).map_err(io(&out))?;
            for (i, g) in grids.iter().enumerate() {
                let path = out.join(format!("grid_{i:04}.pbm"));
                fs::write(&path, render_pbm(g)).map_err(io(&path))?;
            }
            println!("rendered={} dir={}", grids.len(), out.display());
        }
        Command::Construct { height, width } => {
            let g = construct_serpentine(height, width).map_err(|e| CliError::new("usage", e))?;
            println!("{}", serialize_grid(&g));
        }
        Command::Dataset(DatasetCommand::Build { config, out }) => {
            let spec = match config {
                Some(p) => read_json::<DatasetSpec>(&p)?,
                None => DatasetSpec::default(),
            };
            let data = build_dataset(&spec, &limits).map_err(|e| CliError::new("dataset", e))?;
            save_dataset(&data, &out).map_err(|e| CliError::new("dataset", e))?;
            println!("records={} sizes={} out={}", data.records.len(), data.size_histogram().len(), out.display());
        }
        Command::Dataset(DatasetCommand::Inspect { input, no_validate }) => {
            let validation = if no_validate { Validation::None } else { Validation::Full { limits } };
            let data = load_dataset(&input, validation)
                .map_err(|e| CliError::new("dataset", format!("{}: {e}", input.display())))?;
            println!("version={} records={}", data.version, data.records.len());
            for ((h, w), n) in data.size_histogram() {
                let length = data.records.iter().find(|g| g.dims() == (h, w)).map_or(0, |g| g.living_count());
                println!("size={h}x{w} records={n} length={length}");
            }
        }
        Command::Train(args) => train(args)?,
        Command::Sample { ckpt, height, width, count, seed, steps, dump_trajectory } => {
            let (ck, schedule) = load(&ckpt)?;
            let plan = plan_for(&schedule, steps)?;
            for i in 0..count {
                let sample_seed = snakepoly::diffusion::mix_seed(seed, i as u64);
                let predictor = PaddedPredictor { model: &ck.model, schedule: &schedule, seed: sample_seed };
                let out = sample(&predictor, height, width, &plan, sample_seed, dump_trajectory.is_some())
                    .map_err(|e| CliError::new("sampling", e))?;
                if let (Some(dir), Some(frames)) = (&dump_trajectory, &out.trajectory) {
                    let dir = dir.join(format!("sample_{i:04}"));
                    fs::create_dir_all(&dir).map_err(io(&dir))?;
                    for (k, frame) in frames.iter().enumerate() {
                        let pbm = dir.join(format!("frame_{k:05}.pbm"));
                        fs::write(&pbm, render_pbm(&binarize(frame))).map_err(io(&pbm))?;
                        let txt = dir.join(format!("frame_{k:05}.txt"));
                        fs::write(&txt, frame.to_text()).map_err(io(&txt))?;
                    }
                }
                if i > 0 {
                    println!();
                }
                println!("# sample={i} {}", out.grid.classify());
                println!("{}", serialize_grid(&out.grid));
            }
        }
        Command::Eval { ckpt, sizes, samples, seed, steps, format, render_dir } => {
            let (ck, schedule) = load(&ckpt)?;
            let config = EvalConfig { sizes: parse_sizes(&sizes)?, samples_per_size: samples, seed, limits, render_dir };
            let records =
                evaluate_model(&ck.model, &schedule, steps, &config).map_err(|e| CliError::new("eval", e))?;
            let format = match format {
                OutputFormat::Text => ReportFormat::Text,
                OutputFormat::Csv => ReportFormat::Csv,
            };
            print!("{}", report(&records, format));
        }
    }
    Ok(())
}

fn print_grids(grids: &[snakepoly::grid::Grid]) {
    if !grids.is_empty() {
        println!();
        println!("{}", serialize_grids(grids));
    }
}

fn train(args: TrainArgs) -> CliResult {
    let mut cfg = match &args.config {
        Some(p) => read_json::<TrainingConfig>(p)?,
        None => TrainingConfig::default(),
    };
    if let Some(v) = args.steps {
        cfg.fit.steps = v;
    }
    if let Some(v) = args.batch {
        cfg.fit.batch = v;
    }
    if let Some(v) = args.seed {
        cfg.fit.seed = v;
    }
    if let Some(v) = args.lr {
        cfg.optimizer.learning_rate = v;
    }
    if let Some(v) = args.timesteps {
        cfg.schedule.timesteps = v;
    }
    if args.masked_loss {
        cfg.fit.masked_loss = true;
    }
    if let Some(p) = args.policy {
        cfg.fit.policy = match p {
            Policy::Stratified => BatchPolicy::Stratified,
            Policy::Uniform => BatchPolicy::Uniform,
        };
    }
    if let Some(k) = args.lr_schedule {
        cfg.fit.lr_schedule = match k {
            LrKind::Constant => LrSchedule::Constant,
            LrKind::Cosine => LrSchedule::Cosine,
        };
    }
    let schedule = cfg.schedule.build().map_err(|e| CliError::new("config", e))?;
    let data = load_dataset(&args.dataset, Validation::None)
        .map_err(|e| CliError::new("dataset", format!("{}: {e}", args.dataset.display())))?;
    let model = Denoiser::new(cfg.network.clone(), cfg.schedule.timesteps, cfg.fit.seed)
        .map_err(|e| CliError::new("config", e))?;
    let mut trainer = Trainer::new(model, cfg.optimizer);
    let log_every = args.log_every.max(1);
    let mut window = 0.0;
    let history = fit(&mut trainer, &data, &schedule, &cfg.fit, |step, loss| {
        window += loss;
        if (step + 1) % log_every == 0 {
            println!("step={} loss={:.6}", step + 1, window / log_every as f64);
            window = 0.0;
        }
    })
    .map_err(|e| CliError::new("training", e))?;
    save_checkpoint(&args.out, &trainer.model, &cfg.schedule).map_err(|e| CliError::new("checkpoint", e))?;
    println!(
        "trained steps={} first_loss={:.6} last_loss={:.6} out={}",
        history.len(),
        history.first().copied().unwrap_or(f64::NAN),
        history.last().copied().unwrap_or(f64::NAN),
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.message.replace('\n', " ");
            eprintln!("error code={} message={message}", e.code);
            ExitCode::from(1)
        }
    }
}
