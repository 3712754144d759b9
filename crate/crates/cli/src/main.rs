use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sanitrack::background::BackgroundModel;
use sanitrack::config::PipelineConfig;
use sanitrack::density::heatmap;
use sanitrack::evaluation::{bench_report, bench_scenario, evaluate_log, prescan_model, run_suite, SuiteSettings};
use sanitrack::frames::{read_sequence, write_sequence, SequenceHeader};
use sanitrack::pipeline::{hand_flags_from_intervals, parse_events, parse_hand_flags, run_sequence, Pipeline};
use sanitrack::scenegen::{
    clumped_pair, generate_sequence, place_knives, GroundTruth, HandInterval, Placement, ScenarioSpec,
};
use sanitrack::{CameraIntrinsics, Error, PointCloudFrame};

#[derive(Parser)]
#[command(name = "sanitrack", version, about = "Depth-only knife counting, tracking and sanitization compliance")]
struct Cli {
    /// Pipeline configuration (flat JSON, `module.key` names).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Primary output file; stdout where a subcommand allows it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sequence and its ground-truth JSON.
    Gen(GenArgs),
    /// Build a background model from an empty-bath sequence.
    Prescan(PrescanArgs),
    /// Run the full pipeline and write the ND-JSON event log.
    Run(RunArgs),
    /// Score an event log against ground truth, or run the synthetic suite.
    Eval(EvalArgs),
    /// Write the density heatmap of one frame as a PGM image.
    ExportHeatmap(HeatmapArgs),
    /// Per-stage latency statistics as JSON.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 3)]
    knives: usize,
    #[arg(long, default_value_t = 150)]
    frames: usize,
    /// Two knives 1 cm apart instead of a random placement.
    #[arg(long)]
    clumped: bool,
    /// Hand-presence interval `START:END` in seconds; repeatable.
    #[arg(long = "hand", value_parser = parse_interval)]
    hands: Vec<HandInterval>,
    /// Ground-truth path (default: `<out>.truth.json`).
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct PrescanArgs {
    /// Empty-bath sequence.
    #[arg(long)]
    sequence: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct Inputs {
    #[arg(long)]
    sequence: Option<PathBuf>,
    /// Background model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Empty-bath sequence to build the model from instead.
    #[arg(long)]
    prescan: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Ground truth whose hand intervals gate the run.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// One 0/1 hand flag per frame; takes precedence over `--truth`.
    #[arg(long)]
    hands: Option<PathBuf>,
    /// Final JSON audit report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Frames skipped before scoring.
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    /// Run the 1-5 knife synthetic suite with this many instances each.
    #[arg(long)]
    suite: Option<usize>,
}

#[derive(Args)]
struct HeatmapArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Frame index (default: last frame).
    #[arg(long)]
    frame: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Frames of the built-in dense scenario when no sequence is given.
    #[arg(long, default_value_t = 300)]
    frames: usize,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
}

fn parse_interval(s: &str) -> Result<HandInterval, String> {
    let (a, b) = s.split_once(':').ok_or("expected START:END")?;
    let start: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let end: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if !(end > start) {
        return Err("END must exceed START".into());
    }
    Ok(HandInterval { start, end })
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            PipelineConfig::from_json(&text)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn output(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn config_error(msg: &str) -> anyhow::Error {
    Error::Config(msg.to_string()).into()
}

fn read_truth(path: &Path) -> Result<GroundTruth> {
    serde_json::from_reader(open(path)?).with_context(|| format!("parsing ground truth {}", path.display()))
}

fn read_frames(path: &Path) -> Result<(SequenceHeader, Vec<PointCloudFrame>)> {
    read_sequence(open(path)?).with_context(|| format!("reading sequence {}", path.display()))
}

/// Resolves sequence and background model from flags, then config.
fn load_inputs(
    inputs: &Inputs,
    cfg: &PipelineConfig,
) -> Result<(CameraIntrinsics, Vec<PointCloudFrame>, BackgroundModel)> {
    let seq = inputs
        .sequence
        .as_ref()
        .or(cfg.sequence.as_ref())
        .ok_or_else(|| config_error("no sequence given (--sequence or io.sequence)"))?;
    let model_path = inputs.model.as_ref().or(cfg.background_model.as_ref());
    let prescan_path = inputs.prescan.as_ref().or(cfg.prescan.as_ref());
    let model = match (model_path, prescan_path) {
        (Some(path), _) => {
            BackgroundModel::read(open(path)?).with_context(|| format!("reading model {}", path.display()))?
        }
        (None, Some(path)) => BackgroundModel::build(&read_frames(path)?.1, cfg.voxel_size, cfg.fine_radius)?,
        (None, None) => {
            return Err(config_error(
                "no background model or prescan given (--model/--prescan or io.background_model/io.prescan)",
            ))
        }
    };
    let (header, frames) = read_frames(seq)?;
    Ok((header.intrinsics, frames, model))
}

fn cmd_gen(args: &GenArgs, cfg: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let out = out.ok_or_else(|| config_error("gen needs --out"))?;
    let template = ScenarioSpec {
        frame_count: args.frames,
        seed: cfg.seed,
        hand_intervals: args.hands.clone(),
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let knives = if args.clumped {
        clumped_pair(&template.bath, &template.knife_model, 0.01, &Placement::default(), &mut rng)?
    } else {
        place_knives(&template.bath, &template.knife_model, args.knives, &Placement::default(), &mut rng)?
    };
    let spec = ScenarioSpec { knives, ..template };
    let (frames, truth) = generate_sequence(&spec)?;
    let header = SequenceHeader::new(frames.len() as u32, CameraIntrinsics::default());
    let mut w = create(out)?;
    write_sequence(&frames, &header, &mut w)?;
    w.flush()?;
    let truth_path = args.truth.clone().unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".truth.json");
        PathBuf::from(s)
    });
    let mut t = create(&truth_path)?;
    serde_json::to_writer_pretty(&mut t, &truth)?;
    writeln!(t)?;
    log::info!("wrote {} frames to {} and ground truth to {}", frames.len(), out.display(), truth_path.display());
    Ok(())
}

fn cmd_prescan(args: &PrescanArgs, cfg: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let seq = args
        .sequence
        .as_ref()
        .or(cfg.prescan.as_ref())
        .ok_or_else(|| config_error("prescan needs --sequence or io.prescan"))?;
    let out = out
        .or(cfg.background_model.as_deref())
        .ok_or_else(|| config_error("prescan needs --out or io.background_model"))?;
    let model = BackgroundModel::build(&read_frames(seq)?.1, cfg.voxel_size, cfg.fine_radius)?;
    let mut w = create(out)?;
    model.write(&mut w)?;
    w.flush()?;
    log::info!("{} model points, {} occupied voxels", model.points().len(), model.occupied().len());
    Ok(())
}

fn cmd_run(args: &RunArgs, cfg: &PipelineConfig, out: Option<&Path>) -> Result<bool> {
    let (k, frames, model) = load_inputs(&args.inputs, cfg)?;
    let hands = if let Some(path) = args.hands.as_ref().or(cfg.hands.as_ref()) {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let flags = parse_hand_flags(&text)?;
        if flags.len() != frames.len() {
            bail!(Error::LengthMismatch { left: frames.len(), right: flags.len() });
        }
        flags
    } else if let Some(path) = args.truth.as_ref().or(cfg.ground_truth.as_ref()) {
        hand_flags_from_intervals(&frames, &read_truth(path)?.hand_intervals())
    } else {
        vec![false; frames.len()]
    };
    let mut pipeline = Pipeline::new(cfg.clone(), model, k)?;
    let mut events = output(out.or(cfg.events.as_deref()))?;
    let outcome = run_sequence(&mut pipeline, &frames, &hands, &mut events)?;
    events.flush()?;
    if let Some(path) = args.report.as_ref().or(cfg.report.as_ref()) {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, &outcome.report)?;
        writeln!(w)?;
    }
    if outcome.report.errors > 0 {
        log::error!("{} frame(s) failed", outcome.report.errors);
    }
    Ok(outcome.report.errors == 0)
}

fn cmd_eval(args: &EvalArgs, cfg: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let mut w = output(out)?;
    if let Some(instances) = args.suite {
        let settings = SuiteSettings { instances, seed: cfg.seed, ..Default::default() };
        let result = run_suite(cfg, &settings)?;
        eprint!("{}", result.table);
        serde_json::to_writer_pretty(&mut w, &result)?;
    } else {
        let events = args
            .events
            .as_ref()
            .or(cfg.events.as_ref())
            .ok_or_else(|| config_error("eval needs --events or io.events"))?;
        let truth = args
            .truth
            .as_ref()
            .or(cfg.ground_truth.as_ref())
            .ok_or_else(|| config_error("eval needs --truth or io.ground_truth"))?;
        let text = std::fs::read_to_string(events).with_context(|| format!("reading {}", events.display()))?;
        let result =
            evaluate_log(&parse_events(&text)?, &read_truth(truth)?, &CameraIntrinsics::default(), args.warmup)?;
        serde_json::to_writer_pretty(&mut w, &result)?;
    }
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn cmd_heatmap(args: &HeatmapArgs, cfg: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let out = out.ok_or_else(|| config_error("export-heatmap needs --out"))?;
    let (k, frames, model) = load_inputs(&args.inputs, cfg)?;
    let last = args.frame.unwrap_or(frames.len().saturating_sub(1));
    if last >= frames.len() {
        bail!(config_error(&format!("frame {last} out of range (sequence has {})", frames.len())));
    }
    let mut pipeline = Pipeline::new(cfg.clone(), model, k)?;
    for f in &frames[..=last] {
        pipeline.process_frame(f, false)?;
    }
    let density = pipeline.last_density().ok_or_else(|| anyhow::anyhow!("frame {last} produced no density"))?;
    let map = heatmap(density, &k, k.width, k.height)?;
    let mut w = create(out)?;
    map.write_pgm(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_bench(args: &BenchArgs, cfg: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let given = args.inputs.sequence.is_some() || cfg.sequence.is_some();
    let (k, frames, model) = if given {
        load_inputs(&args.inputs, cfg)?
    } else {
        let spec = bench_scenario(args.frames, cfg.seed);
        let model = prescan_model(&spec, 10, cfg.seed ^ 0xB47, cfg)?;
        (CameraIntrinsics::default(), generate_sequence(&spec)?.0, model)
    };
    let mut pipeline = Pipeline::new(cfg.clone(), model, k)?;
    let (mut timings, mut points) = (Vec::with_capacity(frames.len()), Vec::with_capacity(frames.len()));
    for f in &frames {
        let o = pipeline.process_frame(f, false)?;
        points.push(o.record.points);
        timings.push(o.timings);
    }
    let report = bench_report(&timings, &points, args.warmup)?;
    let mut w = output(out)?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn execute(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    if cli.print_config {
        writeln!(io::stdout(), "{}", cfg.to_json_pretty())?;
        return Ok(true);
    }
    let out = cli.out.as_deref();
    match &cli.command {
        None => bail!(config_error("no subcommand given (see --help)")),
        Some(Command::Gen(a)) => cmd_gen(a, &cfg, out).map(|_| true),
        Some(Command::Prescan(a)) => cmd_prescan(a, &cfg, out).map(|_| true),
        Some(Command::Run(a)) => cmd_run(a, &cfg, out),
        Some(Command::Eval(a)) => cmd_eval(a, &cfg, out).map(|_| true),
        Some(Command::ExportHeatmap(a)) => cmd_heatmap(a, &cfg, out).map(|_| true),
        Some(Command::Bench(a)) => cmd_bench(a, &cfg, out).map(|_| true),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.downcast_ref::<Error>().is_some_and(|e| matches!(e, Error::Config(_))) { 2 } else { 1 })
        }
    }
}
