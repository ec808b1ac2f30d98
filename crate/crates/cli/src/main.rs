//! `lrsflow`: train, score, sample and inspect spline flows from the shell.

mod data_spec;
mod manifest;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lrs_flow::bench::{run_comparison, time_forward_inverse, ComparisonMatrix};
use lrs_flow::checkpoint::Checkpoint;
use lrs_flow::eval::{density_grid, nll_summary};
use lrs_flow::flow::{FlowModel, TransformKind};
use lrs_flow::spline::{ElementSpline, KnotSpec};
use lrs_flow::train::{fit, TrainConfig};
use serde::Deserialize;

use data_spec::DataSpec;
use manifest::Manifest;

pub const CHECKPOINT_FILE: &str = "checkpoint.lrsf";
pub const HISTORY_FILE: &str = "loss.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Parser)]
#[command(name = "lrsflow", version, about = "Normalizing flows with linear rational splines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, loss history and run manifest.
    Train(TrainArgs),
    /// Print mean test NLL in nats with its standard error.
    Eval(EvalArgs),
    /// Write generated rows as CSV.
    Sample(SampleArgs),
    /// Evaluate the density of a 2-D model on a square grid.
    DensityGrid(GridArgs),
    /// Write dense curves of one spline at one or more lambda values.
    SplinePlot(PlotArgs),
    /// Compare spline and affine couplings over depths and seeds.
    Bench(BenchArgs),
    /// Median wall-clock of the generation and normalizing passes.
    Time(TimeArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON training configuration.
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Re-run exactly what a previous manifest describes.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// CSV path, `generator:<rings|checkerboard|moons|normal>` or `image:<file.pgm>`.
    #[arg(long)]
    data: Option<String>,
    /// Points drawn from a generator or image.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Seed for generated data (defaults to the training seed).
    #[arg(long)]
    data_seed: Option<u64>,
    /// The CSV has no header line.
    #[arg(long)]
    no_header: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitChoice {
    Train,
    Val,
    Test,
    /// Every row of the source, standardized with the checkpoint's statistics.
    All,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitChoice,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Lower and upper bound of both coordinates.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    range: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// `.pgm` writes a heat map, anything else CSV of (x, y, density).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// JSON with `xs`, `ys` and `ds` arrays (knot positions and derivatives).
    #[arg(long)]
    knots: PathBuf,
    /// Intermediate-point fraction in (0, 1); repeat for several curves.
    #[arg(long = "lambda", required = true)]
    lambdas: Vec<f64>,
    /// Evenly spaced evaluation points per curve (knots are always included).
    #[arg(long, default_value_t = 201)]
    points: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "lrs,affine")]
    transforms: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "2,4")]
    depths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// Per-cell report CSV.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-(transform, depth) mean/std CSV.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct TimeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 1024)]
    batch: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for a diverged training run, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<lrs_flow::Error>() {
        Some(lrs_flow::Error::NonFiniteLoss { .. }) => 2,
        _ => 1,
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sample(a) => sample(a),
        Command::DensityGrid(a) => grid(a),
        Command::SplinePlot(a) => spline_plot(a),
        Command::Bench(a) => bench(a),
        Command::Time(a) => time(a),
    }
}

fn read_config(path: &Path) -> anyhow::Result<TrainConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = TrainConfig::from_json(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn data_spec(args: &DataArgs, seed: u64) -> anyhow::Result<DataSpec> {
    let Some(source) = args.data.clone() else {
        bail!("--data is required");
    };
    Ok(DataSpec {
        source,
        samples: args.samples,
        seed: args.data_seed.unwrap_or(seed),
        has_header: !args.no_header,
    })
}

fn train(args: TrainArgs) -> anyhow::Result<()> {
    let (config, spec, expected) = match &args.manifest {
        Some(path) => {
            let m = Manifest::read(path)?;
            (m.config, m.data, Some(m.data_hash))
        }
        None => {
            let config = read_config(args.config.as_deref().expect("clap enforces --config"))?;
            let spec = data_spec(&args.data, config.seed)?;
            (config, spec, None)
        }
    };
    let splits = spec.load(&config)?;
    let hashes = manifest::DataHash::of(&splits);
    if let Some(expected) = expected {
        if expected != hashes {
            bail!("data differs from the manifest (hash mismatch)");
        }
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let mut model = FlowModel::new(config.model_config(splits.train.dim()), config.seed)?;
    log::info!(
        "training on {} rows of dimension {} ({} parameters)",
        splits.train.rows(),
        splits.train.dim(),
        model.params().num_scalars()
    );
    let val = (splits.val.rows() > 0).then(|| splits.val.data());
    let report = fit(&mut model, splits.train.data(), val, &config)?;

    let mut history = BufWriter::new(File::create(args.out.join(HISTORY_FILE))?);
    report.write_history_csv(&mut history)?;
    history.flush()?;

    let checkpoint = Checkpoint {
        train_config: Some(config.clone()),
        optimizer: Some(report.optimizer.clone()),
        rng: Some(report.rng.clone()),
        best_val_nll: report.best_val_nll,
        standardization: splits.train.standardization().cloned(),
        data_source: Some(spec.source.clone()),
        ..Checkpoint::new(model)
    };
    checkpoint.save(&args.out.join(CHECKPOINT_FILE))?;
    Manifest::new(config, spec, hashes).write(&args.out.join(MANIFEST_FILE))?;

    if let Some(last) = report.history.last() {
        println!("final_train_nll={}", last.train_nll);
    }
    if let Some(best) = report.best_val_nll {
        println!("best_val_nll={best}");
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let config = ck.train_config.clone().unwrap_or_else(|| TrainConfig::new(1e-3, 1, 0, 1, 1, 1.0));
    let spec = data_spec(&args.data, config.seed)?;
    let data = match args.split {
        SplitChoice::All => spec.load_all(ck.standardization.as_ref())?,
        split => {
            let s = spec.load(&config)?;
            match split {
                SplitChoice::Train => s.train,
                SplitChoice::Val => s.val,
                _ => s.test,
            }
        }
    };
    if data.dim() != ck.model.dim() {
        bail!("data has {} columns but the model expects {}", data.dim(), ck.model.dim());
    }
    let s = nll_summary(&ck.model, data.data())?;
    println!("nll_nats={} stderr={}", s.mean, s.stderr);
    Ok(())
}

fn sample(args: SampleArgs) -> anyhow::Result<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let x = ck.model.sample(args.n, args.seed)?;
    let mut out = BufWriter::new(File::create(&args.out)?);
    let header: Vec<String> = (0..ck.model.dim()).map(|j| format!("x{j}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for r in 0..args.n {
        let row: Vec<String> = x.row(r).iter().map(f64::to_string).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn grid(args: GridArgs) -> anyhow::Result<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let g = density_grid(&ck.model, args.range[0], args.range[1], args.steps)?;
    let is_pgm = args.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        fs::write(&args.out, g.to_pgm())?;
    } else {
        let mut out = BufWriter::new(File::create(&args.out)?);
        writeln!(out, "x,y,density")?;
        for (p, d) in g.points.iter().zip(&g.density) {
            writeln!(out, "{},{},{}", p[0], p[1], d)?;
        }
        out.flush()?;
    }
    println!("integral={}", g.integral());
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KnotFile {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
}

fn spline_plot(args: PlotArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&args.knots).with_context(|| format!("reading {}", args.knots.display()))?;
    let knots: KnotFile = serde_json::from_str(&text).context("parsing knot file")?;
    if let Some(l) = args.lambdas.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        bail!("lambda {l} is outside (0, 1)");
    }
    if knots.xs.len() < 2 {
        bail!("at least two knots are required");
    }
    let k = knots.xs.len() - 1;
    let (lo, hi) = (knots.xs[0], knots.xs[k]);
    let mut xs: Vec<f64> = (0..args.points.max(2))
        .map(|i| lo + (hi - lo) * i as f64 / (args.points.max(2) - 1) as f64)
        .chain(knots.xs.iter().copied())
        .collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();

    let mut out = BufWriter::new(File::create(&args.out)?);
    writeln!(out, "lambda,x,y")?;
    for &lambda in &args.lambdas {
        let spec = KnotSpec::new(knots.xs.clone(), knots.ys.clone(), knots.ds.clone(), vec![lambda; k])?;
        let spline = ElementSpline::new(spec)?;
        for &x in &xs {
            writeln!(out, "{lambda},{x},{}", spline.forward(x).value)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn parse_transform(name: &str) -> anyhow::Result<TransformKind> {
    match name.trim() {
        "lrs" => Ok(TransformKind::Lrs),
        "affine" => Ok(TransformKind::Affine),
        other => bail!("unknown transform {other:?} (expected lrs or affine)"),
    }
}

fn bench(args: BenchArgs) -> anyhow::Result<()> {
    let config = read_config(&args.config)?;
    let spec = data_spec(&args.data, config.seed)?;
    let splits = spec.load(&config)?;
    let matrix = ComparisonMatrix {
        transforms: args.transforms.iter().map(|t| parse_transform(t)).collect::<anyhow::Result<_>>()?,
        depths: args.depths,
        seeds: args.seeds,
    };
    let report = run_comparison(&config, &matrix, &splits);
    report.write_csv(BufWriter::new(File::create(&args.out)?))?;
    if let Some(path) = &args.summary {
        report.write_summary_csv(BufWriter::new(File::create(path)?))?;
    }
    for s in report.summary() {
        let name = match s.transform {
            TransformKind::Lrs => "lrs",
            TransformKind::Affine => "affine",
        };
        println!(
            "transform={name} depth={} mean_test_nll={} std={} completed={}",
            s.depth, s.mean, s.std, s.completed
        );
    }
    Ok(())
}

fn time(args: TimeArgs) -> anyhow::Result<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let t = time_forward_inverse(&ck.model, args.batch, args.repeats, args.seed)?;
    println!(
        "forward_seconds={} inverse_seconds={} ratio={}",
        t.forward_seconds,
        t.inverse_seconds,
        t.ratio()
    );
    Ok(())
}
