//! `reseg` command-line front end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::container::{self, TensorMap};
use crate::encoder::{Activation, Checkpoint, Encoder, EncoderConfig, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{self, ConfusionMatrix, THETA_GRID};
use crate::exec::{with_threads, Execution};
use crate::merge::{self, PvsmReport};
use crate::numerics::Tensor;
use crate::raster;
use crate::regions::RegionLabelImage;
use crate::segment::{select_levels, RasterMasks, ScoreAveraging, Segmentation, Segmenter, SlidingWindowConfig};
use crate::synth;
use crate::text::{self, PrecomputedEmbeddings, PromptGrammar, TextEncoder, ToyEncoder};

/// Exit status for every failure.
pub const FAILURE: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "reseg",
    version,
    about = "Training-free open-vocabulary semantic segmentation"
)]
pub struct Cli {
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, env = "RESEG_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Weighted average of same-architecture checkpoints.
    Merge(MergeArgs),
    /// Prompt-variant separation margins and merge weights per model.
    PvsmReport(PvsmArgs),
    /// Segment one image.
    Segment(SegmentArgs),
    /// Confusion matrix, per-class IoU and mIoU.
    Eval(EvalArgs),
    /// Segment and evaluate for several masked-layer counts.
    SweepTheta(SweepArgs),
    /// Seeded Voronoi region rasters, coarse to fine.
    GenMasks(GenMasksArgs),
    /// Seeded toy image with ground truth.
    GenScene(GenSceneArgs),
    /// Seeded random ViT checkpoint.
    GenCheckpoint(GenCheckpointArgs),
    /// Toy-encoder prompt-variant embeddings for a grammar.
    GenEmbeddings(GenEmbeddingsArgs),
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// One weight per checkpoint, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        required_unless_present = "pvsm_report",
        conflicts_with = "pvsm_report"
    )]
    pub weights: Vec<f64>,
    /// Take weights from a `pvsm-report` JSON (models in checkpoint order).
    #[arg(long)]
    pub pvsm_report: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PvsmArgs {
    /// Prompt grammar (needed for toy models).
    #[arg(long)]
    pub grammar: Option<PathBuf>,
    /// Add a toy-encoder model with this seed.
    #[arg(long = "toy-seed")]
    pub toy_seeds: Vec<u64>,
    #[arg(long, default_value_t = 64)]
    pub toy_dim: usize,
    /// Add every model stored in this embedding container.
    #[arg(long = "embeddings")]
    pub embeddings: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TextArgs {
    /// Embedding container with `text/<model>/<class>` tensors.
    #[arg(long, conflicts_with_all = ["grammar", "toy_encoder"])]
    pub text_embeddings: Option<PathBuf>,
    /// Model inside the container; optional when it holds one.
    #[arg(long, requires = "text_embeddings")]
    pub model: Option<String>,
    /// Grammar whose base prompts name the classes.
    #[arg(long, requires = "toy_encoder")]
    pub grammar: Option<PathBuf>,
    /// Toy text encoder seed.
    #[arg(long, requires = "grammar")]
    pub toy_encoder: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Averaging {
    Similarity,
    Probability,
}

#[derive(Debug, Args)]
pub struct WindowArgs {
    #[arg(long, default_value_t = 224)]
    pub tile: usize,
    #[arg(long, default_value_t = 50)]
    pub stride: usize,
    /// What overlapping tiles average.
    #[arg(long, value_enum, default_value_t = Averaging::Similarity)]
    pub averaging: Averaging,
    /// Softmax temperature for `--averaging probability`.
    #[arg(long, default_value_t = 100.0)]
    pub logit_scale: f32,
    /// Reject images smaller than a tile instead of reflect-padding.
    #[arg(long)]
    pub no_pad: bool,
}

impl WindowArgs {
    fn config(&self) -> SlidingWindowConfig {
        SlidingWindowConfig {
            tile: self.tile,
            stride: self.stride,
            pad: !self.no_pad,
            averaging: match self.averaging {
                Averaging::Similarity => ScoreAveraging::Similarity,
                Averaging::Probability => ScoreAveraging::Probability {
                    logit_scale: self.logit_scale,
                },
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// PNG or PPM.
    #[arg(long)]
    pub image: PathBuf,
    /// Region rasters (.rgl or single-channel PNG), coarse to fine.
    #[arg(long, num_args = 1..)]
    pub masks: Vec<PathBuf>,
    #[command(flatten)]
    pub text: TextArgs,
    #[command(flatten)]
    pub window: WindowArgs,
    /// Number of final encoder layers with region-constrained attention.
    #[arg(long, default_value_t = 6)]
    pub theta: usize,
    /// 16-bit PNG of class indices.
    #[arg(long)]
    pub out_labels: PathBuf,
    /// Optional H×W×C score tensor container.
    #[arg(long)]
    pub out_scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth rasters, paired in order with `--pred`.
    #[arg(long, required = true, num_args = 1..)]
    pub gt: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    pub pred: Vec<PathBuf>,
    #[arg(long)]
    pub classes: usize,
    #[arg(long)]
    pub ignore_label: Option<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Region rasters, coarse to fine; reused across layers when the
    /// sweep asks for more layers than rasters.
    #[arg(long, num_args = 1..)]
    pub masks: Vec<PathBuf>,
    #[command(flatten)]
    pub text: TextArgs,
    #[command(flatten)]
    pub window: WindowArgs,
    #[arg(long, value_delimiter = ',', default_values_t = THETA_GRID)]
    pub grid: Vec<usize>,
    #[arg(long)]
    pub ignore_label: Option<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RasterFormat {
    Rgl,
    Png,
}

#[derive(Debug, Args)]
pub struct GenMasksArgs {
    #[arg(long)]
    pub height: usize,
    #[arg(long)]
    pub width: usize,
    #[arg(long, default_value_t = 6)]
    pub levels: usize,
    /// Regions per level (strictly increasing); defaults to 2, 4, 8, …
    #[arg(long, value_delimiter = ',')]
    pub counts: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = RasterFormat::Rgl)]
    pub format: RasterFormat,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenSceneArgs {
    #[arg(long)]
    pub height: usize,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub classes: usize,
    #[arg(long, default_value_t = 12)]
    pub cells: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    Gelu,
    QuickGelu,
}

#[derive(Debug, Args)]
pub struct GenCheckpointArgs {
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 6)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 4)]
    pub patch: usize,
    /// Patches per side of the input.
    #[arg(long, default_value_t = 8)]
    pub grid: usize,
    #[arg(long, default_value_t = 2)]
    pub mlp_ratio: usize,
    #[arg(long)]
    pub proj_dim: Option<usize>,
    #[arg(long, value_enum, default_value_t = ActivationArg::Gelu)]
    pub activation: ActivationArg,
    #[arg(long)]
    pub model_id: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenEmbeddingsArgs {
    #[arg(long)]
    pub grammar: PathBuf,
    #[arg(long = "toy-seed", required = true)]
    pub toy_seeds: Vec<u64>,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parse the process arguments, run, and map the outcome to an exit code.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(FAILURE)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let exec = Execution::Parallel;
    match cli.threads {
        Some(n) => with_threads(n, || dispatch(cli.command, exec))?,
        None => dispatch(cli.command, exec),
    }
}

fn dispatch(cmd: Command, exec: Execution) -> Result<()> {
    match cmd {
        Command::Merge(a) => cmd_merge(&a, exec),
        Command::PvsmReport(a) => cmd_pvsm_report(&a),
        Command::Segment(a) => cmd_segment(&a, exec),
        Command::Eval(a) => cmd_eval(&a, exec),
        Command::SweepTheta(a) => cmd_sweep_theta(&a, exec),
        Command::GenMasks(a) => cmd_gen_masks(&a),
        Command::GenScene(a) => cmd_gen_scene(&a),
        Command::GenCheckpoint(a) => cmd_gen_checkpoint(&a),
        Command::GenEmbeddings(a) => cmd_gen_embeddings(&a),
    }
}

/// SHA-256 over the canonical flag JSON and the bytes of every input file.
/// Paths themselves are not hashed, so relocated inputs hash the same.
pub fn config_hash(flags: &Value, inputs: &[&Path]) -> Result<String> {
    let mut h = Sha256::new();
    let flags = serde_json::to_vec(flags)?;
    h.update((flags.len() as u64).to_le_bytes());
    h.update(&flags);
    for p in inputs {
        let bytes = fs::read(p).map_err(|e| Error::from(e).in_file(*p))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

fn write_json(path: Option<&Path>, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::from(e).in_file(p)),
        None => Ok(std::io::stdout().write_all(text.as_bytes())?),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    serde_json::from_str(&text).map_err(|e| Error::from(e).in_file(path))
}

fn cmd_merge(a: &MergeArgs, exec: Execution) -> Result<()> {
    let ckpts = a
        .checkpoints
        .iter()
        .map(|p| Checkpoint::load(p))
        .collect::<Result<Vec<_>>>()?;
    let weights = match &a.pvsm_report {
        Some(p) => {
            let report: PvsmReport = read_json(p)?;
            if report.models.len() != ckpts.len() {
                return Err(Error::Config(format!(
                    "{}: {} models for {} checkpoints",
                    p.display(),
                    report.models.len(),
                    ckpts.len()
                )));
            }
            report.weights().map_err(|e| e.in_file(p))?
        }
        None => a.weights.clone(),
    };
    let mut fused = merge::merge_checkpoints(&ckpts, &weights, exec)?;
    let mut inputs: Vec<&Path> = a.checkpoints.iter().map(PathBuf::as_path).collect();
    inputs.extend(a.pvsm_report.as_deref());
    let hash = config_hash(&json!({"command": "merge", "weights": weights}), &inputs)?;
    fused.meta.extra.insert("config_hash".into(), hash.into());
    fused.save(&a.out)?;
    for (c, w) in ckpts.iter().zip(&weights) {
        println!("{}\t{w}", c.meta.model_id);
    }
    Ok(())
}

fn cmd_pvsm_report(a: &PvsmArgs) -> Result<()> {
    let mut models = Vec::new();
    if !a.toy_seeds.is_empty() {
        let gpath = a
            .grammar
            .as_deref()
            .ok_or_else(|| Error::Config("--toy-seed needs --grammar".into()))?;
        let grammar = PromptGrammar::load(gpath)?;
        for &seed in &a.toy_seeds {
            let sets = text::grammar_embeddings(&grammar, &ToyEncoder::new(a.toy_dim, seed))?;
            models.push(merge::pvsm(&sets)?);
        }
    }
    for p in &a.embeddings {
        let emb = PrecomputedEmbeddings::load(p)?;
        for m in emb.models() {
            models.push(merge::pvsm(emb.class_sets(m)?).map_err(|e| e.in_file(p))?);
        }
    }
    if models.is_empty() {
        return Err(Error::Config("no models: pass --toy-seed or --embeddings".into()));
    }
    let report = PvsmReport::new(models);
    write_json(a.out.as_deref(), &serde_json::to_value(&report)?)?;
    report.weights().map(|_| ())
}

/// Class embeddings (`C×D`) plus a description for hashing.
fn class_text(a: &TextArgs, dim: usize) -> Result<(Tensor, Value)> {
    if let Some(p) = &a.text_embeddings {
        let emb = PrecomputedEmbeddings::load(p)?;
        let model = match &a.model {
            Some(m) => m.clone(),
            None => {
                let all: Vec<&str> = emb.models().collect();
                match all.as_slice() {
                    [one] => one.to_string(),
                    _ => {
                        return Err(Error::Config(format!(
                            "{} holds models {all:?}; pick one with --model",
                            p.display()
                        )))
                    }
                }
            }
        };
        let t = emb.class_embeddings(&model).map_err(|e| e.in_file(p))?;
        return Ok((t, json!({"model": model})));
    }
    match (&a.grammar, a.toy_encoder) {
        (Some(g), Some(seed)) => {
            let grammar = PromptGrammar::load(g)?;
            let enc = ToyEncoder::new(dim, seed);
            let t = text::class_embeddings(&grammar.base_prompts, &enc)?;
            Ok((t, json!({"model": enc.id()})))
        }
        _ => Err(Error::Config(
            "class text needs --text-embeddings or --grammar with --toy-encoder".into(),
        )),
    }
}

fn text_inputs(a: &TextArgs) -> Vec<&Path> {
    a.text_embeddings
        .iter()
        .chain(&a.grammar)
        .map(PathBuf::as_path)
        .collect()
}

fn load_rasters(paths: &[PathBuf], height: usize, width: usize) -> Result<Vec<RegionLabelImage>> {
    paths
        .iter()
        .map(|p| {
            let r = raster::load_regions(p)?;
            if (r.height, r.width) != (height, width) {
                return Err(Error::dim(format!(
                    "{}: raster is {}x{}, image is {height}x{width}",
                    p.display(),
                    r.height,
                    r.width
                )));
            }
            Ok(r)
        })
        .collect()
}

/// Segment with `theta` masked layers drawn from `rasters` (coarse → fine).
pub fn run_pipeline(
    ckpt: &Checkpoint,
    image: &Tensor,
    rasters: &[RegionLabelImage],
    text: &Tensor,
    theta: usize,
    window: SlidingWindowConfig,
    exec: Execution,
) -> Result<Segmentation> {
    let encoder = Encoder::new(ckpt, EncoderConfig::from_meta(&ckpt.meta, theta)?)?;
    let seg = Segmenter::new(encoder, window, text, exec)?;
    let levels = select_levels(rasters.len(), theta)?
        .into_iter()
        .map(|i| rasters[i].clone())
        .collect();
    seg.segment(image, &RasterMasks::new(levels, ckpt.meta.patch)?)
}

struct Prepared {
    ckpt: Checkpoint,
    image: Tensor,
    rasters: Vec<RegionLabelImage>,
    text: Tensor,
    text_desc: Value,
}

fn prepare(checkpoint: &Path, image: &Path, masks: &[PathBuf], text: &TextArgs) -> Result<Prepared> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let rgb = raster::load_rgb(image)?;
    let tensor = raster::preprocess(&rgb, ckpt.meta.image_mean, ckpt.meta.image_std)?;
    let rasters = load_rasters(masks, rgb.height() as usize, rgb.width() as usize)?;
    let (text, text_desc) = class_text(text, ckpt.feature_dim())?;
    Ok(Prepared {
        ckpt,
        image: tensor,
        rasters,
        text,
        text_desc,
    })
}

fn cmd_segment(a: &SegmentArgs, exec: Execution) -> Result<()> {
    if a.theta > 0 && a.masks.len() < a.theta {
        return Err(Error::Config(format!(
            "--theta {} needs {} mask levels, got {}",
            a.theta,
            a.theta,
            a.masks.len()
        )));
    }
    let p = prepare(&a.checkpoint, &a.image, &a.masks, &a.text)?;
    let window = a.window.config();
    let seg = run_pipeline(&p.ckpt, &p.image, &p.rasters, &p.text, a.theta, window, exec)?;

    let used = select_levels(a.masks.len(), a.theta)?;
    let config = json!({
        "command": "segment",
        "theta": a.theta,
        "mask_levels_used": used,
        "window": window,
        "text": p.text_desc,
        "classes": seg.scores.classes,
        "height": seg.labels.height,
        "width": seg.labels.width,
    });
    let mut inputs = vec![a.checkpoint.as_path(), a.image.as_path()];
    inputs.extend(a.masks.iter().map(PathBuf::as_path));
    inputs.extend(text_inputs(&a.text));
    let hash = config_hash(&config, &inputs)?;

    raster::save_label_map(&a.out_labels, &seg.labels)?;
    if let Some(out) = &a.out_scores {
        let mut tensors = TensorMap::new();
        tensors.insert("scores".into(), seg.scores.to_tensor()?);
        container::save(out, &tensors, &json!({"kind": "scores", "config_hash": hash}))?;
    }
    let mut sidecar = a.out_labels.clone().into_os_string();
    sidecar.push(".json");
    write_json(
        Some(Path::new(&sidecar)),
        &json!({"config_hash": hash, "config": config}),
    )
}

fn cmd_eval(a: &EvalArgs, exec: Execution) -> Result<()> {
    if a.gt.len() != a.pred.len() {
        return Err(Error::Config(format!(
            "{} ground-truth files but {} predictions",
            a.gt.len(),
            a.pred.len()
        )));
    }
    let pairs =
        a.gt.iter()
            .zip(&a.pred)
            .map(|(g, p)| Ok((raster::load_label_map(g)?, raster::load_label_map(p)?)))
            .collect::<Result<Vec<_>>>()?;
    // name the failing pair rather than just the first error
    for (i, (g, p)) in pairs.iter().enumerate() {
        let mut cm = ConfusionMatrix::new(a.classes, a.ignore_label)?;
        cm.accumulate(g, p)
            .map_err(|e| e.in_file(format!("{} vs {}", a.gt[i].display(), a.pred[i].display())))?;
    }
    let cm = eval::evaluate(&pairs, a.classes, a.ignore_label, exec)?;
    let report = cm.iou()?;
    let flags = json!({"command": "eval", "classes": a.classes, "ignore_label": a.ignore_label});
    let inputs: Vec<&Path> = a.gt.iter().chain(&a.pred).map(PathBuf::as_path).collect();
    let hash = config_hash(&flags, &inputs)?;
    write_json(
        a.out.as_deref(),
        &json!({
            "config_hash": hash,
            "classes": a.classes,
            "ignore_label": a.ignore_label,
            "per_class_iou": report.per_class,
            "miou": report.miou,
            "gt_pixels": report.gt_pixels,
            "total_pixels": report.total_pixels,
            "confusion": cm.counts,
        }),
    )
}

fn cmd_sweep_theta(a: &SweepArgs, exec: Execution) -> Result<()> {
    let p = prepare(&a.checkpoint, &a.image, &a.masks, &a.text)?;
    let gt = raster::load_label_map(&a.gt)?;
    let window = a.window.config();
    let classes = p.text.shape()[0];
    let report = eval::sweep(&a.grid, |theta| {
        let seg = run_pipeline(&p.ckpt, &p.image, &p.rasters, &p.text, theta, window, exec)
            .map_err(|e| Error::Config(format!("theta {theta}: {e}")))?;
        let mut cm = ConfusionMatrix::new(classes, a.ignore_label)?;
        cm.accumulate(&gt, &seg.labels).map_err(|e| e.in_file(&a.gt))?;
        cm.iou()
    })?;
    let flags = json!({
        "command": "sweep-theta",
        "grid": a.grid,
        "window": window,
        "text": p.text_desc,
        "ignore_label": a.ignore_label,
    });
    let mut inputs = vec![a.checkpoint.as_path(), a.image.as_path(), a.gt.as_path()];
    inputs.extend(a.masks.iter().map(PathBuf::as_path));
    inputs.extend(text_inputs(&a.text));
    let hash = config_hash(&flags, &inputs)?;
    let mut out = serde_json::to_value(&report)?;
    out["config_hash"] = hash.into();
    write_json(a.out.as_deref(), &out)
}

fn cmd_gen_masks(a: &GenMasksArgs) -> Result<()> {
    let counts = if a.counts.is_empty() {
        synth::default_counts(a.levels, a.height * a.width)?
    } else {
        a.counts.clone()
    };
    let levels = synth::mask_levels(a.height, a.width, &counts, a.seed)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::from(e).in_file(&a.out_dir))?;
    for (r, level) in levels.iter().enumerate() {
        let path = match a.format {
            RasterFormat::Rgl => a.out_dir.join(format!("level_{r:02}.rgl")),
            RasterFormat::Png => a.out_dir.join(format!("level_{r:02}.png")),
        };
        match a.format {
            RasterFormat::Rgl => level.save_rgl(&path)?,
            RasterFormat::Png => raster::save_labels_png(&path, level.height, level.width, &level.labels)?,
        }
        println!("{}\t{}", path.display(), counts[r]);
    }
    Ok(())
}

fn cmd_gen_scene(a: &GenSceneArgs) -> Result<()> {
    let (img, gt) = synth::scene(a.height, a.width, a.classes, a.cells, a.seed)?;
    raster::save_rgb(&a.image, &img)?;
    raster::save_label_map(&a.gt, &gt)
}

fn cmd_gen_checkpoint(a: &GenCheckpointArgs) -> Result<()> {
    let mut spec = SyntheticSpec::new(a.dim, a.layers, a.heads, a.patch, a.grid, a.seed);
    spec.mlp_ratio = a.mlp_ratio;
    spec.proj_dim = a.proj_dim;
    spec.activation = match a.activation {
        ActivationArg::Gelu => Activation::Gelu,
        ActivationArg::QuickGelu => Activation::QuickGelu,
    };
    if let Some(id) = &a.model_id {
        spec.model_id = id.clone();
    }
    Checkpoint::synthetic(&spec)?.save(&a.out)
}

fn cmd_gen_embeddings(a: &GenEmbeddingsArgs) -> Result<()> {
    let grammar = PromptGrammar::load(&a.grammar)?;
    let mut sets = Vec::new();
    for &seed in &a.toy_seeds {
        sets.extend(text::grammar_embeddings(&grammar, &ToyEncoder::new(a.dim, seed))?);
    }
    PrecomputedEmbeddings::from_sets(sets)?.save(&a.out)
}
