//! Subcommand implementations. Every run directory receives the fully
//! resolved config plus a report that embeds it, so any result can be
//! reproduced from its own artifacts.

use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use scribal::aggregate_eval::{evaluate_pipeline, DistanceMetric, RetrievalReport};
use scribal::binarize::BinarizerSpec;
use scribal::embed::{embed_document, export_features, import_features, init_extractor,
    EmbeddingMatrix, MlpExtractor};
use scribal::imaging::{io, resize, BinaryMask, GrayImage, ResizeFactor};
use scribal::sampling::{load_manifest, Manifest, ManifestPatchSource, Split};
use scribal::sift::{detect, export_keypoints_csv};
use scribal::synth::{derive_seed, gen_dataset, DatasetParams};
use scribal::text_aoi::select_aoi;
use scribal::train::{write_loss_trace, Trainer, TrainStage};
use scribal::{Error, Result};

use crate::config::{load_config, PipelineConfig};

/// Seed stream tag for per-document patch extraction.
const TAG_PATCH: u64 = 0x5041_5443;
/// Seed stream tag for fresh extractor initialization.
const TAG_INIT: u64 = 0x494e_4954;

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-writer dataset.
    Synth(SynthArgs),
    /// Binarize one image to an ink mask.
    Binarize(BinarizeArgs),
    /// Select text areas of interest and write the crops.
    Aoi(AoiArgs),
    /// Detect keypoints and export descriptors as CSV.
    Sift(SiftArgs),
    /// Train the patch embedding network.
    Train(TrainArgs),
    /// Embed documents and export per-document feature files.
    Embed(EmbedArgs),
    /// Leave-one-out writer retrieval over a document split.
    Eval(EvalArgs),
    /// Evaluate a cross-product of post-processing settings.
    Sweep(SweepArgs),
}

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(args) => run_synth(args),
        Command::Binarize(args) => run_binarize(args),
        Command::Aoi(args) => run_aoi(args),
        Command::Sift(args) => run_sift(args),
        Command::Train(args) => run_train(args),
        Command::Embed(args) => run_embed(args),
        Command::Eval(args) => run_eval(args),
        Command::Sweep(args) => run_sweep(args),
    }
}

// ---------------------------------------------------------------------
// shared plumbing

fn parse_metric(s: &str) -> std::result::Result<DistanceMetric, String> {
    match s {
        "euclidean" => Ok(DistanceMetric::Euclidean),
        "cosine" => Ok(DistanceMetric::Cosine),
        other => Err(format!("unknown metric '{other}' (euclidean|cosine)")),
    }
}

fn parse_stage(s: &str) -> std::result::Result<TrainStage, String> {
    match s {
        "triplet" => Ok(TrainStage::Triplet),
        "arcface" => Ok(TrainStage::Arcface),
        other => Err(format!("unknown stage '{other}' (triplet|arcface)")),
    }
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split '{other}' (train|val|test)")),
    }
}

/// A PCA setting on the command line: `none` or a dimension count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcaChoice {
    Original,
    Dims(usize),
}

impl PcaChoice {
    fn dims(self) -> Option<usize> {
        match self {
            PcaChoice::Original => None,
            PcaChoice::Dims(n) => Some(n),
        }
    }

    fn name(self) -> String {
        match self {
            PcaChoice::Original => "original".to_string(),
            PcaChoice::Dims(n) => format!("pca-{n}"),
        }
    }
}

fn parse_pca(s: &str) -> std::result::Result<PcaChoice, String> {
    if s == "none" {
        return Ok(PcaChoice::Original);
    }
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(PcaChoice::Dims(n)),
        _ => Err(format!("pca must be 'none' or a positive integer, got '{s}'")),
    }
}

fn parse_dilation(s: &str) -> std::result::Result<(usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("dilation must be 'H,W', got '{s}'"));
    }
    let h = parts[0].trim().parse::<usize>().map_err(|e| e.to_string())?;
    let w = parts[1].trim().parse::<usize>().map_err(|e| e.to_string())?;
    Ok((h, w))
}

/// Options shared by every pipeline command: the config file plus the
/// overrides that win over it.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Pipeline config JSON (a report.json from a previous run works too)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset directory (with manifest.csv) or manifest path
    #[arg(long)]
    data: Option<PathBuf>,
    /// Worker thread bound for per-image stages (results are identical
    /// for any value)
    #[arg(long)]
    jobs: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = load_config(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(data) = &self.data {
            cfg.inputs.data = Some(data.clone());
        }
        Ok(cfg)
    }
}

fn require_data(cfg: &PipelineConfig) -> Result<PathBuf> {
    cfg.inputs.data.clone().ok_or_else(|| {
        Error::InvalidParam("missing config key: inputs.data (or pass --data)".into())
    })
}

fn require_checkpoint(cfg: &PipelineConfig) -> Result<PathBuf> {
    cfg.extractor.checkpoint.clone().ok_or_else(|| {
        Error::InvalidParam(
            "missing config key: extractor.checkpoint (or pass --checkpoint)".into(),
        )
    })
}

fn manifest_file(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.csv")
    } else {
        data.to_path_buf()
    }
}

fn doc_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned())
}

fn read_input(path: &Path) -> Result<GrayImage> {
    io::load_gray(path)
}

/// Run `f` under a bounded rayon pool, or the global one when no bound
/// is requested.
fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidParam(format!("jobs: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn load_extractor(path: &Path) -> Result<MlpExtractor> {
    Ok(Trainer::load(path)?.extractor().clone())
}

/// Embed every document of `split`, in manifest order, patching each
/// with a seed derived from its index.
fn embed_split(
    cfg: &PipelineConfig,
    manifest: &Manifest,
    split: Split,
    extractor: &MlpExtractor,
    jobs: Option<usize>,
) -> Result<Vec<EmbeddingMatrix>> {
    let patcher = cfg.to_patcher()?;
    let entries = manifest.split_entries(split);
    if entries.is_empty() {
        return Err(Error::Manifest(format!("no {split} documents in manifest")));
    }
    let seed = cfg.seed;
    with_pool(jobs, || {
        entries
            .par_iter()
            .enumerate()
            .map(|(i, entry)| {
                let img = io::load_gray(&entry.image_path)?;
                let doc = patcher.prepare(&img, &entry.image_path)?;
                let patches = patcher.patches_from_prepared(
                    &doc,
                    &entry.image_path,
                    derive_seed(seed, TAG_PATCH, i as u64),
                )?;
                embed_document(extractor, &doc_stem(&entry.image_path), &patches)
            })
            .collect::<Result<Vec<_>>>()
    })?
}

/// Load exported feature files for every document of `split`.
fn import_split_features(
    manifest: &Manifest,
    split: Split,
    dir: &Path,
) -> Result<Vec<EmbeddingMatrix>> {
    let entries = manifest.split_entries(split);
    if entries.is_empty() {
        return Err(Error::Manifest(format!("no {split} documents in manifest")));
    }
    entries
        .iter()
        .map(|entry| {
            let path = dir.join(format!("{}.wifv", doc_stem(&entry.image_path)));
            if !path.is_file() {
                return Err(Error::Manifest(format!(
                    "missing feature file {} for {}",
                    path.display(),
                    entry.image_path.display()
                )));
            }
            import_features(&path)
        })
        .collect()
}

fn split_writers(manifest: &Manifest, split: Split) -> Vec<String> {
    manifest
        .split_entries(split)
        .iter()
        .map(|e| e.writer_id.clone())
        .collect()
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    bytes.push(b'\n');
    std::fs::write(path, &bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(bytes)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn make_run_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

/// One summary line per evaluated variant; `config` is the FNV-1a hash
/// of the run's resolved config.json bytes.
fn summary_csv(rows: &[(String, String, &RetrievalReport)]) -> String {
    let mut out = String::from("variant,config,top1,top5,p_at_2,map\n");
    for (variant, hash, report) in rows {
        out.push_str(&format!(
            "{variant},{hash},{},{},{},{}\n",
            report.top1, report.top5, report.precision_at_2, report.mean_average_precision
        ));
    }
    out
}

// ---------------------------------------------------------------------
// synth

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    writers: usize,
    #[arg(long, default_value_t = 6)]
    docs: usize,
    #[arg(long, default_value_t = 360)]
    page_width: usize,
    #[arg(long, default_value_t = 480)]
    page_height: usize,
    /// Background degradation level in [0, 1]
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Split by writer (disjoint train/test writers) instead of by
    /// document
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    zero_shot: bool,
    #[arg(long, default_value_t = 0.5)]
    train_fraction: f64,
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let params = DatasetParams {
        n_writers: args.writers,
        docs_per_writer: args.docs,
        page_width: args.page_width,
        page_height: args.page_height,
        noise: args.noise,
        seed: args.seed,
        zero_shot: args.zero_shot,
        train_fraction: args.train_fraction,
    };
    let out = gen_dataset(&params, &args.out)?;
    println!(
        "wrote {} pages, {} and {}",
        out.image_count,
        out.manifest_path.display(),
        out.truth_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// binarize

#[derive(Debug, Args)]
pub struct BinarizeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Output mask PNG (ink black on white)
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    common: ConfigArgs,
    /// Binarizer override: otsu | sauvola
    #[arg(long)]
    method: Option<String>,
    /// Sauvola window (with --method sauvola)
    #[arg(long)]
    window: Option<usize>,
    /// Sauvola k (with --method sauvola)
    #[arg(long)]
    k: Option<f64>,
    /// Downscale factor override in (0, 1]
    #[arg(long)]
    resize: Option<f64>,
}

fn resolve_binarizer(
    cfg: &PipelineConfig,
    method: Option<&str>,
    window: Option<usize>,
    k: Option<f64>,
) -> Result<BinarizerSpec> {
    let spec = match method {
        None => cfg.preprocessing.binarizer.clone(),
        Some("otsu") => BinarizerSpec::Otsu,
        Some("sauvola") => {
            // Flag overrides reach inside a configured sauvola spec.
            let (dw, dk) = match &cfg.preprocessing.binarizer {
                BinarizerSpec::Sauvola { window, k } => (*window, *k),
                _ => (31, 0.2),
            };
            BinarizerSpec::Sauvola {
                window: window.unwrap_or(dw),
                k: k.unwrap_or(dk),
            }
        }
        Some(other) => {
            return Err(Error::InvalidParam(format!(
                "unknown binarizer '{other}' (otsu|sauvola)"
            )))
        }
    };
    spec.validate()?;
    Ok(spec)
}

fn mask_to_image(mask: &BinaryMask) -> GrayImage {
    let pixels: Vec<f64> = mask.bits().iter().map(|b| if *b { 0.0 } else { 1.0 }).collect();
    GrayImage::new(mask.width(), mask.height(), pixels).expect("mask dims are valid")
}

fn run_binarize(args: BinarizeArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    if let Some(r) = args.resize {
        cfg.preprocessing.resize = Some(r);
    }
    let spec = resolve_binarizer(&cfg, args.method.as_deref(), args.window, args.k)?;
    let mut img = read_input(&args.input)?;
    if let Some(r) = cfg.preprocessing.resize {
        img = resize(&img, ResizeFactor::new(r)?);
    }
    let mask = spec.run(&img, &doc_stem(&args.input))?;
    io::save_gray_png(&mask_to_image(&mask), &args.output)?;
    println!(
        "ink fraction {:.4} -> {}",
        mask.ink_count() as f64 / (mask.width() * mask.height()) as f64,
        args.output.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// aoi

#[derive(Debug, Args)]
pub struct AoiArgs {
    #[arg(long)]
    input: PathBuf,
    /// Directory for crops and the JSON sidecar
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    common: ConfigArgs,
    /// Dilation element override as 'H,W'
    #[arg(long, value_parser = parse_dilation)]
    dilation: Option<(usize, usize)>,
    /// Number of regions to keep
    #[arg(long)]
    top_k: Option<usize>,
}

#[derive(Debug, Serialize)]
struct AoiBoxRecord {
    index: usize,
    crop: String,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    pixel_count: usize,
}

#[derive(Debug, Serialize)]
struct AoiSidecar<'a> {
    source: String,
    binarizer: &'a BinarizerSpec,
    dilation: (usize, usize),
    top_k: usize,
    boxes: Vec<AoiBoxRecord>,
}

fn run_aoi(args: AoiArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let mut params = cfg.preprocessing.aoi.clone().unwrap_or_default();
    if let Some(d) = args.dilation {
        params.dilation = d;
    }
    if let Some(k) = args.top_k {
        params.top_k = k;
    }
    let mut img = read_input(&args.input)?;
    if let Some(r) = cfg.preprocessing.resize {
        img = resize(&img, ResizeFactor::new(r)?);
    }
    let source = args.input.to_string_lossy().into_owned();
    let crops = select_aoi(&img, &source, &cfg.preprocessing.binarizer, &params)?;

    make_run_dir(&args.out_dir)?;
    let stem = doc_stem(&args.input);
    let mut boxes = Vec::new();
    for (i, crop) in crops.iter().enumerate() {
        let name = format!("{stem}_aoi{i}.png");
        io::save_gray_png(&crop.image, &args.out_dir.join(&name))?;
        boxes.push(AoiBoxRecord {
            index: i,
            crop: name,
            x0: crop.source_box.x0,
            y0: crop.source_box.y0,
            x1: crop.source_box.x1,
            y1: crop.source_box.y1,
            pixel_count: crop.source_box.pixel_count,
        });
    }
    let sidecar = AoiSidecar {
        source,
        binarizer: &cfg.preprocessing.binarizer,
        dilation: params.dilation,
        top_k: params.top_k,
        boxes,
    };
    write_json(&args.out_dir.join(format!("{stem}_aoi.json")), &sidecar)?;
    println!("{} text regions -> {}", crops.len(), args.out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------
// sift

#[derive(Debug, Args)]
pub struct SiftArgs {
    #[arg(long)]
    input: PathBuf,
    /// Output CSV (default: <stem>_keypoints.csv beside the input)
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    common: ConfigArgs,
}

fn run_sift(args: SiftArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let mut img = read_input(&args.input)?;
    if let Some(r) = cfg.preprocessing.resize {
        img = resize(&img, ResizeFactor::new(r)?);
    }
    let items = detect(&img, &cfg.preprocessing.sift)?;
    let output = args.output.unwrap_or_else(|| {
        args.input
            .with_file_name(format!("{}_keypoints.csv", doc_stem(&args.input)))
    });
    export_keypoints_csv(&output, &items)?;
    println!("{} keypoints -> {}", items.len(), output.display());
    Ok(())
}

// ---------------------------------------------------------------------
// train

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run directory for config.json, report.json, loss_trace.csv and
    /// checkpoint.bin
    #[arg(long)]
    run_dir: PathBuf,
    #[command(flatten)]
    common: ConfigArgs,
    /// Stage override: triplet | arcface
    #[arg(long, value_parser = parse_stage)]
    stage: Option<TrainStage>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Learning rate override
    #[arg(long)]
    lr: Option<f64>,
    /// Starting extractor checkpoint (arcface fine-tuning)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Resume this run from an interrupted checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,
}

/// Training summary written to report.json; embeds the resolved config.
#[derive(Debug, Serialize, Deserialize)]
struct TrainReport {
    config: PipelineConfig,
    stage: TrainStage,
    steps_done: usize,
    converged: bool,
    final_train_loss: Option<f64>,
    /// Writer classes behind the arcface head, when that stage ran.
    head_classes: Option<usize>,
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    if let Some(stage) = args.stage {
        cfg.loss.stage = stage;
    }
    if let Some(steps) = args.steps {
        cfg.training.steps = steps;
    }
    if let Some(batch) = args.batch_size {
        cfg.training.batch_size = batch;
    }
    if let Some(lr) = args.lr {
        cfg.optimizer.learning_rate = lr;
    }
    if let Some(ck) = &args.checkpoint {
        cfg.extractor.checkpoint = Some(ck.clone());
    }
    cfg.validate()?;

    let data = require_data(&cfg)?;
    let manifest = load_manifest(&manifest_file(&data))?;
    let train_cfg = cfg.to_train_config();

    let mut trainer = match &args.resume {
        Some(path) => {
            let mut trainer = Trainer::load(path)?;
            // The checkpoint's config is authoritative for a resume;
            // only the step budget may move. Anything else differing is
            // a silent behavior change, so reject it.
            let mut expected = trainer.config().clone();
            expected.steps = train_cfg.steps;
            if expected != train_cfg {
                return Err(Error::InvalidParam(format!(
                    "resume config differs from checkpoint {} (only training.steps may \
                     change on resume)",
                    path.display()
                )));
            }
            trainer.set_steps(train_cfg.steps)?;
            trainer
        }
        None => match cfg.loss.stage {
            TrainStage::Triplet => {
                let extractor = match &cfg.extractor.checkpoint {
                    Some(path) => load_extractor(path)?,
                    None => init_extractor(
                        &cfg.layer_dims(),
                        derive_seed(cfg.seed, TAG_INIT, 0),
                    )?,
                };
                Trainer::new_triplet(extractor, &train_cfg)?
            }
            TrainStage::Arcface => {
                let extractor = match &cfg.extractor.checkpoint {
                    Some(path) => load_extractor(path)?,
                    None => init_extractor(
                        &cfg.layer_dims(),
                        derive_seed(cfg.seed, TAG_INIT, 0),
                    )?,
                };
                Trainer::new_arcface(extractor, &manifest, &train_cfg)?
            }
        },
    };

    let mut source = ManifestPatchSource::new(cfg.to_patcher()?);
    let rows = trainer.run(&manifest, &mut source, usize::MAX)?;

    make_run_dir(&args.run_dir)?;
    write_loss_trace(&args.run_dir.join("loss_trace.csv"), &rows)?;
    trainer.save(&args.run_dir.join("checkpoint.bin"))?;
    write_json(&args.run_dir.join("config.json"), &cfg)?;
    let report = TrainReport {
        stage: cfg.loss.stage,
        steps_done: trainer.steps_done(),
        converged: trainer.converged(),
        final_train_loss: rows.last().map(|r| r.train_loss),
        head_classes: trainer.head().map(|h| h.classes()),
        config: cfg,
    };
    write_json(&args.run_dir.join("report.json"), &report)?;
    println!(
        "trained {} steps (converged: {}) -> {}",
        report.steps_done,
        report.converged,
        args.run_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// embed

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Directory for one feature file per document
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    common: ConfigArgs,
    /// Trained extractor checkpoint
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Which split to embed
    #[arg(long, value_parser = parse_split, default_value = "test")]
    split: Split,
}

fn run_embed(args: EmbedArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    if let Some(ck) = &args.checkpoint {
        cfg.extractor.checkpoint = Some(ck.clone());
    }
    cfg.validate()?;
    let data = require_data(&cfg)?;
    let checkpoint = require_checkpoint(&cfg)?;

    let manifest = load_manifest(&manifest_file(&data))?;
    let extractor = load_extractor(&checkpoint)?;
    let docs = embed_split(&cfg, &manifest, args.split, &extractor, args.common.jobs)?;

    make_run_dir(&args.out_dir)?;
    for doc in &docs {
        export_features(&args.out_dir.join(format!("{}.wifv", doc.doc_id)), doc)?;
    }
    println!(
        "embedded {} documents ({} dims) -> {}",
        docs.len(),
        extractor.output_dim(),
        args.out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// eval

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory for config.json, report.json and summary.csv
    #[arg(long)]
    run_dir: PathBuf,
    #[command(flatten)]
    common: ConfigArgs,
    /// Trained extractor checkpoint (alternative: --features)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory of exported feature files (alternative: --checkpoint)
    #[arg(long)]
    features: Option<PathBuf>,
    /// PCA override: none | <dims>
    #[arg(long, value_parser = parse_pca)]
    pca: Option<PcaChoice>,
    /// Distance metric override: euclidean | cosine
    #[arg(long, value_parser = parse_metric)]
    metric: Option<DistanceMetric>,
    /// Which split to evaluate
    #[arg(long, value_parser = parse_split, default_value = "test")]
    split: Split,
}

/// Retrieval report embedding the resolved config that produced it.
#[derive(Debug, Serialize, Deserialize)]
struct EvalReport {
    config: PipelineConfig,
    retrieval: RetrievalReport,
}

/// Collect the split's documents either by embedding from a checkpoint
/// or by importing previously exported features.
fn gather_documents(
    cfg: &PipelineConfig,
    manifest: &Manifest,
    split: Split,
    jobs: Option<usize>,
) -> Result<Vec<EmbeddingMatrix>> {
    match &cfg.inputs.features {
        Some(dir) => import_split_features(manifest, split, dir),
        None => {
            let checkpoint = require_checkpoint(cfg)?;
            let extractor = load_extractor(&checkpoint)?;
            embed_split(cfg, manifest, split, &extractor, jobs)
        }
    }
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    if let Some(ck) = &args.checkpoint {
        cfg.extractor.checkpoint = Some(ck.clone());
    }
    if let Some(dir) = &args.features {
        cfg.inputs.features = Some(dir.clone());
    }
    if let Some(pca) = args.pca {
        cfg.postproc.pca_dims = pca.dims();
    }
    if let Some(metric) = args.metric {
        cfg.postproc.metric = metric;
    }
    cfg.validate()?;
    let data = require_data(&cfg)?;

    let manifest = load_manifest(&manifest_file(&data))?;
    let docs = gather_documents(&cfg, &manifest, args.split, args.common.jobs)?;
    let writers = split_writers(&manifest, args.split);
    let retrieval = evaluate_pipeline(&docs, &writers, &cfg.postproc_config())?;

    make_run_dir(&args.run_dir)?;
    let config_bytes = write_json(&args.run_dir.join("config.json"), &cfg)?;
    let hash = format!("{:016x}", fnv1a64(&config_bytes));
    let variant = match cfg.postproc.pca_dims {
        None => PcaChoice::Original,
        Some(n) => PcaChoice::Dims(n),
    };
    let report = EvalReport {
        config: cfg,
        retrieval,
    };
    write_json(&args.run_dir.join("report.json"), &report)?;
    let csv = summary_csv(&[(variant.name(), hash, &report.retrieval)]);
    write_bytes(&args.run_dir.join("summary.csv"), csv.as_bytes())?;
    println!(
        "top1 {:.4}  top5 {:.4}  p@2 {:.4}  map {:.4}  ({} queries, {} excluded) -> {}",
        report.retrieval.top1,
        report.retrieval.top5,
        report.retrieval.precision_at_2,
        report.retrieval.mean_average_precision,
        report.retrieval.evaluated_queries,
        report.retrieval.excluded_queries,
        args.run_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// sweep

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Run directory for config.json, per-variant reports and summary.csv
    #[arg(long)]
    run_dir: PathBuf,
    #[command(flatten)]
    common: ConfigArgs,
    /// Trained extractor checkpoint (alternative: --features)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory of exported feature files (alternative: --checkpoint)
    #[arg(long)]
    features: Option<PathBuf>,
    /// PCA settings to compare
    #[arg(long, value_parser = parse_pca, value_delimiter = ',',
          default_value = "none,128,64,32")]
    pca: Vec<PcaChoice>,
    /// Distance metric override: euclidean | cosine
    #[arg(long, value_parser = parse_metric)]
    metric: Option<DistanceMetric>,
    /// Which split to evaluate
    #[arg(long, value_parser = parse_split, default_value = "test")]
    split: Split,
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    if let Some(ck) = &args.checkpoint {
        cfg.extractor.checkpoint = Some(ck.clone());
    }
    if let Some(dir) = &args.features {
        cfg.inputs.features = Some(dir.clone());
    }
    if let Some(metric) = args.metric {
        cfg.postproc.metric = metric;
    }
    cfg.validate()?;
    if args.pca.is_empty() {
        return Err(Error::InvalidParam("sweep needs at least one pca setting".into()));
    }
    let data = require_data(&cfg)?;

    let manifest = load_manifest(&manifest_file(&data))?;
    // Embed once; the sweep only varies post-processing.
    let docs = gather_documents(&cfg, &manifest, args.split, args.common.jobs)?;
    let writers = split_writers(&manifest, args.split);

    make_run_dir(&args.run_dir)?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for choice in &args.pca {
        let mut variant_cfg = cfg.clone();
        variant_cfg.postproc.pca_dims = choice.dims();
        let retrieval =
            evaluate_pipeline(&docs, &writers, &variant_cfg.postproc_config())?;
        let report = EvalReport {
            config: variant_cfg,
            retrieval,
        };
        let name = choice.name();
        let bytes = write_json(&args.run_dir.join(format!("report_{name}.json")), &report)?;
        rows.push((name, format!("{:016x}", fnv1a64(&bytes))));
        reports.push(report);
    }
    write_json(&args.run_dir.join("config.json"), &cfg)?;
    let csv_rows: Vec<(String, String, &RetrievalReport)> = rows
        .into_iter()
        .zip(&reports)
        .map(|((name, hash), report)| (name, hash, &report.retrieval))
        .collect();
    let csv = summary_csv(&csv_rows);
    write_bytes(&args.run_dir.join("summary.csv"), csv.as_bytes())?;

    println!("{:<12} {:>8} {:>8} {:>8} {:>8}", "variant", "top1", "top5", "p@2", "map");
    for (name, _, retrieval) in &csv_rows {
        println!(
            "{name:<12} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            retrieval.top1,
            retrieval.top5,
            retrieval.precision_at_2,
            retrieval.mean_average_precision
        );
    }
    println!("-> {}", args.run_dir.display());
    Ok(())
}
