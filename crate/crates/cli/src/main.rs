//! `trajcast` — generate scenes, train forecasting models, evaluate
//! checkpoints, export predictions, and run the ablation/horizon studies.
//!
//! Every command reads an optional JSON config (`--config`), applies
//! command-line overrides, echoes the effective config into the output
//! directory, and is deterministic given (seed, config, inputs).
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use trajcast::decoder::LossHead;
use trajcast::model::{FusionKind, Model};
use trajcast::plot;
use trajcast::scene::{PredictionInstance, Scene};
use trajcast::scene_io::{export_scenes, import_scenes};
use trajcast::synth::{generate_scene, Density, SynthConfig};
use trajcast::train::{
    ablation_matrix, evaluate, extract_corpus, horizon_sweep, learning_curve_csv, split_scenes,
    train, PredictionRecord, TrainConfig, ABLATION_ROWS,
};
use trajcast::ParamStore32;

/// Usage-level failure: wrong or missing arguments rather than a failed run.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

#[derive(Parser)]
#[command(
    name = "trajcast",
    version,
    about = "Multi-agent trajectory forecasting toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes and write them as a JSONL scene file.
    Gen(GenArgs),
    /// Train a model and keep the best-validation checkpoint.
    Train(RunArgs),
    /// Evaluate a checkpoint: metrics JSON, optionally figures.
    Eval(EvalArgs),
    /// Export per-instance predictions from a checkpoint as JSONL.
    Predict(EvalArgs),
    /// Run the five-row ablation matrix plus the {5,7,9} horizon sweep.
    Ablate(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadArg {
    L2,
    Gauss,
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    Scnn,
    Sp,
    Con,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderArg {
    /// Variable-length track encoding.
    Vlstm,
    /// Fixed-window encoding (zero-prefixed histories).
    Lstm,
}

#[derive(Clone, Copy, ValueEnum)]
enum DensityArg {
    Low,
    Medium,
    High,
}

/// Overrides shared by the model-running commands.
#[derive(Args)]
struct CommonArgs {
    /// JSON config file; command-line flags override its fields.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Scene file (JSONL) to read.
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output head: point regression or bivariate Gaussian.
    #[arg(long, value_enum)]
    head: Option<HeadArg>,
    /// Neighbor fusion path.
    #[arg(long, value_enum)]
    fusion: Option<FusionArg>,
    /// Track encoder windowing.
    #[arg(long, value_enum)]
    encoder: Option<EncoderArg>,
    /// Replace the learned attention mask with the uniform 1/k² mask.
    #[arg(long)]
    uniform_mask: bool,
    /// Observed history length (frames).
    #[arg(long = "t-hist", value_name = "INT")]
    t_hist: Option<usize>,
    /// Predicted future length (frames).
    #[arg(long = "t-fut", value_name = "INT")]
    t_fut: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint to load.
    #[arg(long, value_name = "PATH")]
    ckpt: Option<PathBuf>,
    /// Also write trajectory overlays and the attention-mask heat map
    /// (SVG + CSV).
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of scenes to generate.
    #[arg(long, value_name = "INT")]
    scenes: Option<usize>,
    /// Frames per scene.
    #[arg(long, value_name = "INT")]
    frames: Option<usize>,
    #[arg(long, value_enum)]
    density: Option<DensityArg>,
    /// Disable pairwise repulsion between agents.
    #[arg(long)]
    no_interactions: bool,
}

/// The full experiment description. Serialized to
/// `<out>/config.json` so a run can be reproduced from its output alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    train: TrainConfig,
    /// Scene file consumed by train/eval/predict/ablate.
    data: Option<PathBuf>,
    /// Checkpoint consumed by eval/predict.
    ckpt: Option<PathBuf>,
    out: PathBuf,
    /// Fraction of scenes held out for validation/testing.
    val_fraction: f64,
    gen: GenConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct GenConfig {
    scenes: usize,
    synth: SynthConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            scenes: 40,
            synth: SynthConfig::default(),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            data: None,
            ckpt: None,
            out: PathBuf::from("out"),
            val_fraction: 0.2,
            gen: GenConfig::default(),
        }
    }
}

impl RunConfig {
    fn load(path: Option<&Path>) -> anyhow::Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    fn apply(&mut self, a: &CommonArgs) {
        if let Some(p) = &a.data {
            self.data = Some(p.clone());
        }
        if let Some(p) = &a.out {
            self.out = p.clone();
        }
        if let Some(s) = a.seed {
            self.train.seed = s;
            self.gen.synth.seed = s;
        }
        if let Some(h) = a.head {
            self.train.model.head = match h {
                HeadArg::L2 => LossHead::L2,
                HeadArg::Gauss => LossHead::Gaussian,
            };
        }
        if let Some(f) = a.fusion {
            self.train.model.fusion = match f {
                FusionArg::Scnn => FusionKind::Scnn,
                FusionArg::Sp => FusionKind::Sp,
                FusionArg::Con => FusionKind::Con,
            };
        }
        if let Some(e) = a.encoder {
            self.train.model.variable_length = matches!(e, EncoderArg::Vlstm);
        }
        if a.uniform_mask {
            self.train.model.attention = false;
        }
        if let Some(t) = a.t_hist {
            self.train.model.t_h = t;
        }
        if let Some(t) = a.t_fut {
            self.train.model.t_f = t;
        }
    }

    /// Creates the output directory and records the effective config.
    fn echo(&self, out: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(out)
            .with_context(|| format!("creating output dir {}", out.display()))?;
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(out.join("config.json"), text + "\n")?;
        Ok(())
    }

    fn data_path(&self) -> anyhow::Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| usage("no scene file given: pass --data PATH or set \"data\" in the config"))
    }
}

fn load_scenes(cfg: &RunConfig) -> anyhow::Result<Vec<Scene>> {
    let path = cfg.data_path()?;
    let scenes = import_scenes(path)
        .with_context(|| format!("reading scenes from {}", path.display()))?;
    if scenes.is_empty() {
        anyhow::bail!("scene file {} holds no scenes", path.display());
    }
    Ok(scenes)
}

fn cmd_gen(args: &GenArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    cfg.apply(&args.common);
    if let Some(n) = args.scenes {
        cfg.gen.scenes = n;
    }
    if let Some(f) = args.frames {
        cfg.gen.synth.n_frames = f;
    }
    if let Some(d) = args.density {
        cfg.gen.synth.density = match d {
            DensityArg::Low => Density::Low,
            DensityArg::Medium => Density::Medium,
            DensityArg::High => Density::High,
        };
    }
    if args.no_interactions {
        cfg.gen.synth.interactions = false;
    }
    if cfg.gen.scenes == 0 {
        return Err(usage("--scenes must be at least 1"));
    }
    cfg.echo(&cfg.out)?;

    let scenes: Vec<Scene> = (0..cfg.gen.scenes)
        .map(|i| generate_scene(&cfg.gen.synth, i as u64))
        .collect::<Result<_, _>>()?;
    let path = cfg.out.join("scenes.jsonl");
    export_scenes(&path, &scenes)?;

    // Per-class counts over distinct agents (per scene), plus occupancy.
    let mut counts = [0usize; 3];
    let mut states = 0usize;
    let mut frames = 0usize;
    for scene in &scenes {
        let mut seen = std::collections::BTreeSet::new();
        for frame in &scene.frames {
            frames += 1;
            states += frame.agents.len();
            for agent in &frame.agents {
                if seen.insert(agent.id) {
                    counts[agent.class.one_hot_index()] += 1;
                }
            }
        }
    }
    println!(
        "wrote {} scenes ({} frames) to {}",
        scenes.len(),
        frames,
        path.display()
    );
    println!(
        "density {:?}: pedestrians {}, vehicles {}, riders {}, mean agents/frame {:.2}",
        cfg.gen.synth.density,
        counts[0],
        counts[1],
        counts[2],
        states as f64 / frames.max(1) as f64
    );
    Ok(())
}

fn cmd_train(args: &RunArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    cfg.apply(&args.common);
    let scenes = load_scenes(&cfg)?;
    cfg.echo(&cfg.out)?;

    let (train_scenes, val_scenes) = split_scenes(&scenes, cfg.val_fraction, cfg.train.seed);
    let ec = cfg.train.extract_config();
    let (train_insts, train_report) = extract_corpus(&train_scenes, &ec)?;
    let (val_insts, _) = extract_corpus(&val_scenes, &ec)?;
    println!(
        "extracted {} training / {} validation instances ({} targets skipped)",
        train_insts.len(),
        val_insts.len(),
        train_report.skipped_targets
    );

    let outcome = train::<f32>(&cfg.train, &train_insts, &val_insts)?;
    let model = Model::new(cfg.train.model)?;
    let ckpt = cfg.out.join("model.ckpt");
    model.save(&ckpt, &outcome.store)?;
    std::fs::write(
        cfg.out.join("curve.csv"),
        learning_curve_csv(&outcome.curve),
    )?;
    println!(
        "trained {} epochs{}; best validation ADE {:.4} at epoch {}; checkpoint {}",
        outcome.curve.len(),
        if outcome.stopped_early { " (stopped early)" } else { "" },
        outcome.best_val_ade,
        outcome.best_epoch,
        ckpt.display()
    );
    Ok(())
}

fn load_checkpoint(
    cfg: &RunConfig,
    args: &EvalArgs,
) -> anyhow::Result<(Model, ParamStore32, PathBuf)> {
    let path = args
        .ckpt
        .clone()
        .or_else(|| cfg.ckpt.clone())
        .ok_or_else(|| usage("no checkpoint given: pass --ckpt PATH or set \"ckpt\" in the config"))?;
    let (model, store) = Model::load::<f32>(&path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok((model, store, path))
}

fn cmd_eval(args: &EvalArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    cfg.apply(&args.common);
    let (model, store, ckpt_path) = load_checkpoint(&cfg, args)?;
    let scenes = load_scenes(&cfg)?;
    cfg.ckpt = Some(ckpt_path);
    cfg.echo(&cfg.out)?;

    // Evaluation windows come from the checkpoint itself, so any scene
    // file with long-enough tracks is usable as-is.
    let ec = trajcast::scene::ExtractConfig {
        t_h: model.cfg.t_h,
        t_f: model.cfg.t_f,
        m: model.cfg.m,
        k: model.cfg.k,
    };
    let (instances, _) = extract_corpus(&scenes, &ec)?;
    if instances.is_empty() {
        anyhow::bail!("no prediction instances could be extracted from the scene file");
    }
    let report = evaluate(&model, &store, &instances, Some(1000))?;
    let metrics_path = cfg.out.join("metrics.json");
    std::fs::write(
        &metrics_path,
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    println!(
        "evaluated {} instances: ADE {:.4}, MDE {:.4}, FDE {:.4}, throughput {:.0} calls/s",
        report.instances,
        report.all.ade,
        report.all.mde,
        report.all.fde,
        report.throughput.unwrap_or(0.0)
    );
    println!("metrics written to {}", metrics_path.display());

    if args.plot {
        write_plots(&cfg.out, &model, &store, &instances)?;
    }
    Ok(())
}

/// Figures for the first few instances plus the mask heat map.
fn write_plots(
    out: &Path,
    model: &Model,
    store: &ParamStore32,
    instances: &[PredictionInstance],
) -> anyhow::Result<()> {
    let dir = out.join("plots");
    std::fs::create_dir_all(&dir)?;
    let shown = instances.len().min(8);
    let batch = trajcast::scene::build_batch::<f32>(&instances[..shown], model.cfg.k)?;
    let preds = model.predict(store, &batch)?;
    for (i, (inst, pred)) in instances[..shown].iter().zip(&preds).enumerate() {
        let points: Vec<[f64; 3]> = pred
            .point_estimate()
            .iter()
            .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
            .collect();
        let tp = plot::TrajectoryPlot {
            history: &inst.target_history,
            truth: &inst.ground_truth,
            prediction: &points,
        };
        std::fs::write(dir.join(format!("trajectory_{i}.svg")), plot::trajectory_svg(&tp)?)?;
        std::fs::write(dir.join(format!("trajectory_{i}.csv")), plot::trajectory_csv(&tp)?)?;
    }
    match model.mask_for(store, &batch, 0) {
        Ok(mask) => {
            let mask: Vec<f64> = mask.iter().map(|&v| v as f64).collect();
            std::fs::write(dir.join("mask.svg"), plot::mask_svg(&mask, model.cfg.k)?)?;
            std::fs::write(dir.join("mask.csv"), plot::mask_csv(&mask, model.cfg.k)?)?;
        }
        // Fusion paths without a grid have no mask to draw.
        Err(_) => {}
    }
    println!("figures written to {}", dir.display());
    Ok(())
}

fn cmd_predict(args: &EvalArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    cfg.apply(&args.common);
    let (model, store, ckpt_path) = load_checkpoint(&cfg, args)?;
    let scenes = load_scenes(&cfg)?;
    cfg.ckpt = Some(ckpt_path);
    cfg.echo(&cfg.out)?;

    let ec = trajcast::scene::ExtractConfig {
        t_h: model.cfg.t_h,
        t_f: model.cfg.t_f,
        m: model.cfg.m,
        k: model.cfg.k,
    };
    let (instances, _) = extract_corpus(&scenes, &ec)?;
    if instances.is_empty() {
        anyhow::bail!("no prediction instances could be extracted from the scene file");
    }
    let path = cfg.out.join("predictions.jsonl");
    let mut lines = String::new();
    for chunk in instances.chunks(256) {
        let batch = trajcast::scene::build_batch::<f32>(chunk, model.cfg.k)?;
        let preds = model.predict(&store, &batch)?;
        for (inst, pred) in chunk.iter().zip(&preds) {
            let record = PredictionRecord::new(inst, pred, model.cfg.head);
            lines.push_str(&serde_json::to_string(&record)?);
            lines.push('\n');
        }
    }
    std::fs::write(&path, lines)?;
    println!("wrote {} predictions to {}", instances.len(), path.display());
    Ok(())
}

fn cmd_ablate(args: &RunArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    cfg.apply(&args.common);
    let scenes = load_scenes(&cfg)?;
    cfg.echo(&cfg.out)?;

    let (train_scenes, val_scenes) = split_scenes(&scenes, cfg.val_fraction, cfg.train.seed);
    let ec = cfg.train.extract_config();
    let (train_insts, _) = extract_corpus(&train_scenes, &ec)?;
    let (val_insts, _) = extract_corpus(&val_scenes, &ec)?;

    println!("running {} ablation rows...", ABLATION_ROWS.len());
    let matrix = ablation_matrix::<f32>(&cfg.train, &train_insts, &val_insts, &val_insts)?;
    println!("running horizon sweep t_f in {{5, 7, 9}}...");
    let sweep = horizon_sweep::<f32>(&cfg.train, &scenes, &[5, 7, 9], cfg.val_fraction)?;

    let mut csv = String::from("section,label,ADE,MDE,FDE\n");
    for (name, report) in &matrix {
        csv.push_str(&format!(
            "ablation,{name},{},{},{}\n",
            report.all.ade, report.all.mde, report.all.fde
        ));
    }
    for (t_f, report) in &sweep {
        csv.push_str(&format!(
            "horizon,t_f={t_f},{},{},{}\n",
            report.all.ade, report.all.mde, report.all.fde
        ));
    }
    let path = cfg.out.join("ablation.csv");
    std::fs::write(&path, &csv)?;
    print!("{csv}");
    println!("table written to {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Ablate(args) => cmd_ablate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<Usage>().is_some() => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
