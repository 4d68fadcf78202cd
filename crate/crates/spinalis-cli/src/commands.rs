//! Subcommand definitions and their implementations.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use spinalis::augment::{augment_dataset, AugmentConfig, AugmentInput};
use spinalis::cnn::{self, CnnArchitecture};
use spinalis::forest::ForestConfig;
use spinalis::io;
use spinalis::label;
use spinalis::localize::{fuse_tumor_with_labels, label_vertebrae, render_overlay};
use spinalis::metrics::{self, Level};
use spinalis::phantom::{generate_phantom, inject_tumor, PhantomConfig, TumorSpec};
use spinalis::segment::{segment_volume, train_segmenter, SegmenterModel, TrainSettings};
use spinalis::volume::{MaskVolume, TumorType, Volume};

use crate::config::PipelineConfig;
use crate::corpus::{self, split_corpus, tumor_crops, CorpusEntry, PhantomSidecar};

#[derive(Parser)]
#[command(name = "spinalis", version, about = "Lumbar-spine tumor pipeline")]
pub struct Cli {
    /// Worker threads (falls back to SPINALIS_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Pipeline configuration JSON; explicit flags override its sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Synthetic phantom corpora.
    Phantom {
        #[command(subcommand)]
        command: PhantomCommand,
    },
    /// CSF-glide augmentation over a phantom corpus.
    Augment(AugmentArgs),
    /// Train the FCM + random forest segmenter.
    TrainSeg(TrainSegArgs),
    /// Train the CNN tumor-type classifier.
    TrainCls(TrainClsArgs),
    /// Segment a volume with a trained model.
    Segment(SegmentArgs),
    /// Classify a tumor ROI crop.
    Classify(ClassifyArgs),
    /// Label vertebrae and localize a tumor mask.
    Localize(LocalizeArgs),
    /// Score a predicted mask against truth.
    Eval(EvalArgs),
    /// The FCM+RF vs RF-only comparison on one corpus.
    Ablation(AblationArgs),
    /// Aggregate per-volume eval reports.
    Report(ReportArgs),
}

#[derive(Subcommand)]
pub enum PhantomCommand {
    /// Generate a seeded phantom corpus with injected tumors.
    Gen(PhantomGenArgs),
}

#[derive(Args)]
pub struct PhantomGenArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 192)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    #[arg(long, default_value_t = 24)]
    pub depth: usize,
    #[arg(long, default_value_t = 0.03)]
    pub noise_sigma: f32,
    /// Every k-th phantom is generated tumor-free (0 = none are).
    #[arg(long, default_value_t = 0)]
    pub tumor_free_every: usize,
    #[arg(long, default_value_t = 0.95)]
    pub tumor_intensity: f32,
}

#[derive(Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub step_px: Option<usize>,
    #[arg(long)]
    pub min_scale: Option<f64>,
}

#[derive(Args)]
pub struct TrainSegArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub fcm_clusters: Option<usize>,
    /// Drop the FCM memberships and hardened-region features (the RF-only
    /// configuration of the ablation).
    #[arg(long)]
    pub no_fcm_features: bool,
}

#[derive(Args)]
pub struct TrainClsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional held-out corpus for the validation loss curve.
    #[arg(long)]
    pub val_corpus: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, value_enum, default_value_t = WidthPreset::Full)]
    pub widths: WidthPreset,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum WidthPreset {
    /// The 16/16/32/32/64/64 production net.
    Full,
    /// A narrow 6/6/12/12/24/24 net for desk-scale budgets.
    Slim,
}

impl WidthPreset {
    pub fn architecture(self) -> CnnArchitecture {
        match self {
            WidthPreset::Full => CnnArchitecture::classifier_default(),
            WidthPreset::Slim => {
                CnnArchitecture::classifier_with_widths(128, &[6, 6, 12, 12, 24, 24], 48)
            }
        }
    }
}

#[derive(Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub volume: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// When given, print a pixel-level eval report for the prediction.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args)]
pub struct ClassifyArgs {
    /// ROI crop: single-slice .svol or binary .pgm.
    #[arg(long)]
    pub roi: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Args)]
pub struct LocalizeArgs {
    /// Tumor mask volume (predicted or truth).
    #[arg(long)]
    pub tumor: PathBuf,
    /// Labeled mask volume carrying vertebra labels (named or generic).
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    pub adjacency_mm: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write per-slice PGM overlays of tumor boundary + vertebra codes.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
    /// Intensity volume used as the overlay backdrop.
    #[arg(long)]
    pub volume: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalLevel::Pixel)]
    pub level: EvalLevel,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum EvalLevel {
    Pixel,
    Image,
}

#[derive(Args)]
pub struct AblationArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Per-volume eval report JSON files.
    #[arg(long, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn dispatch(cli: Cli, config: &PipelineConfig) -> Result<()> {
    match cli.command {
        Command::Phantom { command: PhantomCommand::Gen(args) } => phantom_gen(args, config),
        Command::Augment(args) => augment(args, config),
        Command::TrainSeg(args) => train_seg(args, config),
        Command::TrainCls(args) => train_cls(args, config),
        Command::Segment(args) => segment(args),
        Command::Classify(args) => classify(args),
        Command::Localize(args) => localize(args),
        Command::Eval(args) => eval(args),
        Command::Ablation(args) => ablation(args, config),
        Command::Report(args) => report(args),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Deterministic tumor plan for phantom i: cycle the three types; the
/// intramedullary type stays at T12 where the cord is present, the others
/// rotate through L2..L4.
pub fn tumor_plan(index: usize) -> (TumorType, u8) {
    let tumor_type = TumorType::ALL[index % 3];
    let level = match tumor_type {
        TumorType::Intramedullary => label::T12,
        _ => [label::L2, label::L3, label::L4][(index / 3) % 3],
    };
    (tumor_type, level)
}

fn phantom_gen(args: PhantomGenArgs, config: &PipelineConfig) -> Result<()> {
    let seed = args.seed.or(config.seed).unwrap_or(0);
    if args.count == 0 {
        bail!("--count must be positive");
    }
    std::fs::create_dir_all(&args.out)?;
    for i in 0..args.count {
        let id = format!("p{i:04}");
        let cfg = PhantomConfig {
            width: args.width,
            height: args.height,
            depth: args.depth,
            noise_sigma: args.noise_sigma,
            seed: splitmix64(seed ^ i as u64),
            ..Default::default()
        };
        let (volume, mask) = generate_phantom(&cfg)?;
        let tumor_free = args.tumor_free_every > 0 && (i + 1) % args.tumor_free_every == 0;
        let (volume, mask, truth, sidecar) = if tumor_free {
            let truth =
                MaskVolume::zeros(volume.width(), volume.height(), volume.depth(), volume.spacing())?;
            (volume, mask, truth, PhantomSidecar { id: id.clone(), config: cfg, tumor: None, truth_voxels: 0 })
        } else {
            let (tumor_type, level) = tumor_plan(i);
            let mut spec = TumorSpec::for_type(tumor_type, level, splitmix64(seed ^ ((i as u64) << 17)));
            spec.intensity_mean = args.tumor_intensity;
            let (v, m, outcome) = inject_tumor(&volume, &mask, &spec)?;
            let sidecar = PhantomSidecar {
                id: id.clone(),
                config: cfg,
                tumor: Some(spec),
                truth_voxels: outcome.truth_voxels,
            };
            (v, m, outcome.truth, sidecar)
        };
        io::save_volume(&volume, corpus::volume_path(&args.out, &id))?;
        io::save_mask(&mask, corpus::mask_path(&args.out, &id))?;
        io::save_mask(&truth, corpus::truth_path(&args.out, &id))?;
        write_json(&corpus::sidecar_path(&args.out, &id), &sidecar)?;
    }
    println!("wrote {} phantoms to {}", args.count, args.out.display());
    Ok(())
}

fn augment(args: AugmentArgs, config: &PipelineConfig) -> Result<()> {
    let entries = corpus::load_corpus(&args.corpus)?;
    std::fs::create_dir_all(&args.out)?;
    let inputs: Vec<AugmentInput> = entries
        .iter()
        .filter_map(|e| {
            e.sidecar.tumor.map(|spec| AugmentInput {
                id: e.id.clone(),
                volume: e.volume.clone(),
                mask: e.mask.clone(),
                tumor_type: spec.tumor_type,
            })
        })
        .collect();
    if inputs.is_empty() {
        bail!("corpus has no tumor-bearing phantoms to augment");
    }
    let mut glide = config.glide.unwrap_or_default();
    if let Some(step) = args.step_px {
        glide.step_px = step;
    }
    let cfg = AugmentConfig {
        glide,
        min_scale: args.min_scale.or(config.min_scale).unwrap_or(0.4),
        seed: args.seed.or(config.seed).unwrap_or(0),
    };
    let samples = augment_dataset(&inputs, &cfg)?;

    let manifest_path = args.out.join("manifest.jsonl");
    let mut manifest = String::new();
    for sample in &samples {
        let image = slice_to_volume(&sample.image, 1.0 / 3.0);
        io::save_volume(&image, args.out.join(&sample.record.output_path))?;
        let truth = mask2d_to_volume(&sample.truth, 1.0 / 3.0);
        io::save_mask(&truth, args.out.join(&sample.record.truth_path))?;
        manifest.push_str(&serde_json::to_string(&sample.record)?);
        manifest.push('\n');
    }
    std::fs::write(&manifest_path, manifest)?;
    println!("wrote {} augmented samples to {}", samples.len(), args.out.display());
    Ok(())
}

fn slice_to_volume(s: &spinalis::Slice, spacing: f64) -> Volume {
    Volume::new(s.width(), s.height(), 1, [spacing, spacing, spacing], s.data().to_vec())
        .expect("slice geometry is valid")
}

fn mask2d_to_volume(m: &spinalis::Mask2d, spacing: f64) -> MaskVolume {
    MaskVolume::new(
        m.width(),
        m.height(),
        1,
        [spacing, spacing, spacing],
        m.data().iter().map(|b| if *b { label::TUMOR } else { 0 }).collect(),
    )
    .expect("mask geometry is valid")
}

pub fn train_settings(args: &TrainSegArgs, config: &PipelineConfig) -> TrainSettings {
    let mut fcm = config.fcm.unwrap_or_default();
    if let Some(c) = args.fcm_clusters {
        fcm.c = c;
    }
    let mut forest = config.forest.unwrap_or_default();
    if let Some(trees) = args.trees {
        forest.n_trees = trees;
    }
    if let Some(depth) = args.max_depth {
        forest.max_depth = depth;
    }
    let mut features = config.features.unwrap_or_default();
    if args.no_fcm_features {
        features.use_fcm = false;
    }
    TrainSettings {
        fcm,
        forest,
        features,
        preprocess: config.preprocess.unwrap_or_default(),
        relevance: config.relevance.clone().unwrap_or_default(),
        seed: args.seed.or(config.seed).unwrap_or(0),
        ..Default::default()
    }
}

fn train_seg(args: TrainSegArgs, config: &PipelineConfig) -> Result<()> {
    let entries = corpus::load_corpus(&args.corpus)?;
    let pairs: Vec<(Volume, MaskVolume)> =
        entries.into_iter().map(|e| (e.volume, e.truth)).collect();
    let settings = train_settings(&args, config);
    let model = train_segmenter(&pairs, &settings)?;
    std::fs::write(&args.out, model.to_json()?)?;
    println!("segmenter written to {}", args.out.display());
    Ok(())
}

/// Build (image, class) pairs for the classifier from a phantom corpus.
pub fn classification_set(
    dir: &Path,
    arch: &CnnArchitecture,
) -> Result<Vec<(Vec<f64>, usize, String)>> {
    let entries = corpus::load_corpus(dir)?;
    let mut set = Vec::new();
    for entry in &entries {
        for crop in tumor_crops(entry, 1.0, 12)? {
            set.push((
                cnn::roi_to_input(&crop.crop, arch)?,
                crop.tumor_type.class_index(),
                crop.source_id.clone(),
            ));
        }
    }
    if set.is_empty() {
        bail!("no tumor crops found in {}", dir.display());
    }
    Ok(set)
}

fn train_cls(args: TrainClsArgs, config: &PipelineConfig) -> Result<()> {
    let arch = args.widths.architecture();
    arch.validate_classifier_structure()?;
    let train_set: Vec<(Vec<f64>, usize)> = classification_set(&args.corpus, &arch)?
        .into_iter()
        .map(|(img, class, _)| (img, class))
        .collect();
    let val_set: Option<Vec<(Vec<f64>, usize)>> = match &args.val_corpus {
        Some(dir) => Some(
            classification_set(dir, &arch)?
                .into_iter()
                .map(|(img, class, _)| (img, class))
                .collect(),
        ),
        None => None,
    };
    let seed = args.seed.or(config.seed).unwrap_or(0);
    let mut model = cnn::CnnModel::new(arch, seed)?;
    let mut cfg = config.cnn_train.unwrap_or_default();
    cfg.seed = seed;
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    if let Some(lr) = args.learning_rate {
        cfg.learning_rate = lr;
    }
    let history = cnn::train(&mut model, &train_set, val_set.as_deref(), &cfg)?;
    cnn::save_model(&model, &args.out)?;
    let history_path = args.out.with_extension("history.json");
    write_json(&history_path, &history)?;
    println!(
        "classifier written to {} ({} crops, {} epochs, final train loss {:.4})",
        args.out.display(),
        train_set.len(),
        history.len(),
        history.last().map(|e| e.train_loss).unwrap_or(f64::NAN)
    );
    Ok(())
}

fn segment(args: SegmentArgs) -> Result<()> {
    let volume = io::load_volume(&args.volume)?;
    let model = SegmenterModel::from_json(&std::fs::read_to_string(&args.model)?)?;
    let result = segment_volume(&volume, &model)?;
    std::fs::create_dir_all(&args.out)?;
    io::save_mask(&result.mask, args.out.join("mask.svol"))?;
    io::save_volume(&result.probability, args.out.join("probability.svol"))?;
    write_json(&args.out.join("relevance.json"), &result.relevance)?;
    if let Some(truth_path) = &args.truth {
        let truth = io::load_mask(truth_path)?;
        let report = metrics::evaluate_volume(
            args.volume.file_stem().and_then(|s| s.to_str()).unwrap_or("volume"),
            &result.mask,
            &truth,
        )?;
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("segmentation written to {}", args.out.display());
    }
    Ok(())
}

fn classify(args: ClassifyArgs) -> Result<()> {
    let roi = match args.roi.extension().and_then(|e| e.to_str()) {
        Some("pgm") => io::load_pgm(&args.roi)?,
        _ => {
            let v = io::load_volume(&args.roi)?;
            v.extract_slice(0)?
        }
    };
    let model = cnn::load_model(&args.model)?;
    let (tumor_type, probs) = cnn::classify_tumor(&model, &roi)?;
    #[derive(Serialize)]
    struct Classification {
        tumor_type: TumorType,
        probabilities: Vec<f64>,
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&Classification { tumor_type, probabilities: probs })?
    );
    Ok(())
}

fn localize(args: LocalizeArgs) -> Result<()> {
    let tumor = io::load_mask(&args.tumor)?;
    let mask = io::load_mask(&args.mask)?;
    let labeling = label_vertebrae(&mask)?;
    let report = fuse_tumor_with_labels(&tumor, &labeling, args.adjacency_mm)?;
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => std::fs::write(path, &json)?,
        None => println!("{json}"),
    }
    if let Some(overlay_dir) = &args.overlay {
        let volume = match &args.volume {
            Some(p) => io::load_volume(p)?,
            None => bail!("--overlay needs --volume for the backdrop"),
        };
        std::fs::create_dir_all(overlay_dir)?;
        for z in 0..tumor.depth() {
            let has_tumor =
                tumor.extract_slice(z)?.labels().iter().any(|l| *l != 0);
            if !has_tumor {
                continue;
            }
            let slice = render_overlay(&volume, &tumor, &labeling, z)?;
            io::save_pgm(&slice, overlay_dir.join(format!("overlay_z{z:03}.pgm")))?;
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct EvalReport {
    level: String,
    counts: metrics::ConfusionCounts,
    iou: Option<f64>,
    dice: Option<f64>,
    class_accuracy: f64,
}

fn eval(args: EvalArgs) -> Result<()> {
    let pred = io::load_mask(&args.pred)?;
    let truth = io::load_mask(&args.truth)?;
    let (level, name) = match args.level {
        EvalLevel::Pixel => (Level::Pixel, "pixel"),
        EvalLevel::Image => (Level::Image, "image"),
    };
    let counts = metrics::confusion_counts(&pred, &truth, level)?;
    let report = EvalReport {
        level: name.to_string(),
        iou: metrics::iou(&counts),
        dice: match level {
            Level::Pixel => metrics::dice(&pred, &truth)?,
            Level::Image => None,
        },
        class_accuracy: metrics::class_accuracy(&counts)?,
        counts,
    };
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => std::fs::write(path, &json)?,
        None => println!("{json}"),
    }
    Ok(())
}

/// Result block emitted by the ablation experiment.
#[derive(Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub dice_fcm_rf: f64,
    pub dice_rf_only: f64,
    /// Whether clustering before the forest scored at least as well.
    pub fcm_integration_better: bool,
}

/// Train both feature configurations on the same split and compare mean
/// test Dice.
pub fn run_ablation(
    entries: &[CorpusEntry],
    seed: u64,
    ratio: f64,
    trees: usize,
) -> Result<AblationReport> {
    let ids: Vec<String> = entries.iter().map(|e| e.id.clone()).collect();
    let (train_ids, test_ids) = split_corpus(&ids, ratio, seed)?;
    let train: Vec<(Volume, MaskVolume)> = entries
        .iter()
        .filter(|e| train_ids.contains(&e.id))
        .map(|e| (e.volume.clone(), e.truth.clone()))
        .collect();
    let test: Vec<&CorpusEntry> =
        entries.iter().filter(|e| test_ids.contains(&e.id)).collect();
    if train.is_empty() || test.is_empty() {
        bail!("split produced an empty side");
    }

    let mean_dice = |use_fcm: bool| -> Result<f64> {
        let settings = TrainSettings {
            forest: ForestConfig { n_trees: trees, ..Default::default() },
            features: spinalis::features::FeatureConfig { use_fcm, ..Default::default() },
            seed,
            ..Default::default()
        };
        let model = train_segmenter(&train, &settings)?;
        let mut sum = 0.0;
        let mut n = 0usize;
        for entry in &test {
            if entry.sidecar.tumor.is_none() {
                continue;
            }
            let result = segment_volume(&entry.volume, &model)?;
            if let Some(d) = metrics::dice(&result.mask, &entry.truth)? {
                sum += d;
                n += 1;
            } else {
                // empty prediction against a present truth scores 0
                sum += 0.0;
                n += 1;
            }
        }
        if n == 0 {
            bail!("test split has no tumor volumes");
        }
        Ok(sum / n as f64)
    };

    let dice_fcm_rf = mean_dice(true)?;
    let dice_rf_only = mean_dice(false)?;
    Ok(AblationReport {
        seed,
        n_train: train.len(),
        n_test: test.len(),
        dice_fcm_rf,
        dice_rf_only,
        fcm_integration_better: dice_fcm_rf >= dice_rf_only,
    })
}

fn ablation(args: AblationArgs, config: &PipelineConfig) -> Result<()> {
    let seed = args.seed.or(config.seed).unwrap_or(0);
    let ratio = args.ratio.or(config.split_ratio).unwrap_or(0.8);
    let trees = args.trees.or_else(|| config.forest.map(|f| f.n_trees)).unwrap_or(30);
    let entries = corpus::load_corpus(&args.corpus)?;
    let report = run_ablation(&entries, seed, ratio, trees)?;
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => std::fs::write(path, &json)?,
        None => {}
    }
    println!("{json}");
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    if args.inputs.is_empty() {
        bail!("--inputs needs at least one eval report");
    }
    let mut volumes = Vec::new();
    for path in &args.inputs {
        let report: metrics::VolumeReport =
            serde_json::from_str(&std::fs::read_to_string(path)?)
                .with_context(|| format!("parsing {}", path.display()))?;
        volumes.push(report);
    }
    let aggregate = metrics::aggregate(volumes)?;
    let json = serde_json::to_string_pretty(&aggregate)?;
    match &args.out {
        Some(path) => std::fs::write(path, &json)?,
        None => println!("{json}"),
    }
    Ok(())
}
