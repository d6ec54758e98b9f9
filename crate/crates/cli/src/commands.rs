use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use malvis::corpus;
use malvis::metrics::{self, EvalScope};
use malvis::models::{self, build_custom, VggVariant};
use malvis::strategy::{self, ArchConfig, StrategyConfig};
use malvis::train::{self, TrainConfig, TrainOptions};
use malvis::visualize;

#[derive(Parser)]
#[command(
    name = "malvis",
    version,
    about = "Malware visualization classification pipeline"
)]
pub struct Cli {
    /// Seed for every random choice made by the subcommand.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert raw binaries under a directory into grayscale PNGs.
    Convert(ConvertArgs),
    /// Build a manifest from a directory tree of labeled images.
    Ingest(IngestArgs),
    /// Undersample every family down to a cap.
    Balance(BalanceArgs),
    /// Assign a stratified train/test split.
    Split(SplitArgs),
    /// Fine-tune a model on a split manifest.
    Train(TrainArgs),
    /// Evaluate saved weights against a manifest.
    Eval(EvalArgs),
    /// Run the two-stage model selection and write a report.
    Select(SelectArgs),
    /// Show benchmark catalog rows or the literature comparison.
    Catalog(CatalogArgs),
}

#[derive(Args)]
struct ConvertArgs {
    /// Directory of raw binary files (searched recursively).
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory; the input tree layout is mirrored.
    #[arg(long)]
    out: PathBuf,
    /// Fixed raster width; omitted means the size-based width table.
    #[arg(long)]
    width: Option<usize>,
}

#[derive(Args)]
struct IngestArgs {
    /// Root directory laid out as `root/<family>/<image>.png`.
    #[arg(long = "in")]
    input: PathBuf,
    /// Manifest file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BalanceArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Per-family sample ceiling.
    #[arg(long)]
    cap: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long = "train-fraction", default_value_t = 0.9)]
    train_fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct NetArgs {
    /// Model to build: vgg16 or vgg19.
    #[arg(long)]
    model: String,
    /// Fraction of convolutional layers to freeze, counted from the input.
    #[arg(long, default_value_t = 0.8)]
    freeze: f64,
    /// Square input side fed to the network.
    #[arg(long, default_value_t = models::DEFAULT_INPUT_SIDE)]
    side: usize,
    /// Input channels (grayscale data is replicated).
    #[arg(long, default_value_t = models::DEFAULT_INPUT_CHANNELS)]
    channels: usize,
    /// Hidden units of the classification head.
    #[arg(long = "head-units", default_value_t = models::DEFAULT_HEAD_UNITS)]
    head_units: usize,
}

impl NetArgs {
    fn build(&self, class_count: usize, init_seed: u64) -> Result<models::Model> {
        let variant = VggVariant::parse(&self.model)
            .with_context(|| format!("{} is not buildable in-core (use vgg16 or vgg19)", self.model))?;
        Ok(build_custom(
            variant.display_name(),
            &variant.blocks(),
            self.head_units,
            class_count,
            self.freeze,
            self.side,
            self.channels,
            init_seed,
        )?)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    net: NetArgs,
    /// Pretrained backbone in MVW1 format, loaded with a fresh head.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f32,
    #[arg(long, default_value_t = 0.9)]
    momentum: f32,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Write `<model>.epoch<N>.mvw` checkpoints every N epochs (0 = off).
    #[arg(long = "checkpoint-every", default_value_t = 0)]
    checkpoint_every: usize,
    /// Output directory for curve.csv and weights.mvw.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    net: NetArgs,
    /// Weights to evaluate (MVW1).
    #[arg(long)]
    weights: PathBuf,
    /// `all` scores every record; `test` scores the held-out split.
    #[arg(long, default_value = "all")]
    scope: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    /// Base manifest (uncapped, unsplit) produced by `ingest`.
    #[arg(long)]
    manifest: PathBuf,
    /// Stage-1 candidate names, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "NasNet,DenseNet201,Xception,ResNet50,VGG19,VGG16"
    )]
    candidates: Vec<String>,
    /// Directory of `<candidate>.csv` curves for models not buildable in-core.
    #[arg(long = "curves-dir")]
    curves_dir: Option<PathBuf>,
    #[arg(long = "stage1-cap", default_value_t = 80)]
    stage1_cap: u32,
    #[arg(long = "stage1-freeze", default_value_t = 0.8)]
    stage1_freeze: f64,
    /// Stage-2 undersampling caps, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "240,320")]
    caps: Vec<u32>,
    /// Stage-2 freeze fractions, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8")]
    freezes: Vec<f64>,
    #[arg(long, default_value_t = 2)]
    shortlist: usize,
    #[arg(long = "train-fraction", default_value_t = 0.9)]
    train_fraction: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f32,
    #[arg(long, default_value_t = 0.9)]
    momentum: f32,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = models::DEFAULT_INPUT_SIDE)]
    side: usize,
    #[arg(long, default_value_t = models::DEFAULT_INPUT_CHANNELS)]
    channels: usize,
    #[arg(long = "head-units", default_value_t = models::DEFAULT_HEAD_UNITS)]
    head_units: usize,
    /// Grid evaluation scope: `all` or `test`.
    #[arg(long, default_value = "all")]
    scope: String,
    #[arg(long = "report-dir")]
    report_dir: PathBuf,
}

#[derive(Args)]
struct CatalogArgs {
    /// Print a single catalog row.
    #[arg(long)]
    model: Option<String>,
    /// Print the literature accuracy comparison instead of the catalog.
    #[arg(long)]
    comparison: bool,
}

impl Cli {
    /// Directory that receives this invocation's `run.meta`.
    pub fn meta_dir(&self) -> PathBuf {
        let parent_of = |p: &Path| p.parent().map(Path::to_path_buf).unwrap_or_default();
        match &self.command {
            Command::Convert(a) => a.out.clone(),
            Command::Ingest(a) => parent_of(&a.out),
            Command::Balance(a) => parent_of(&a.out),
            Command::Split(a) => parent_of(&a.out),
            Command::Train(a) => a.out.clone(),
            Command::Eval(a) => a.out.clone(),
            Command::Select(a) => a.report_dir.clone(),
            Command::Catalog(_) => PathBuf::from("."),
        }
    }

    pub fn execute(self) -> Result<()> {
        let seed = self.seed;
        match self.command {
            Command::Convert(a) => convert(a),
            Command::Ingest(a) => ingest(a),
            Command::Balance(a) => balance(a, seed),
            Command::Split(a) => split(a, seed),
            Command::Train(a) => train(a, seed),
            Command::Eval(a) => eval(a, seed),
            Command::Select(a) => select(a, seed),
            Command::Catalog(a) => catalog(a),
        }
    }
}

fn walk_files(root: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)
            .with_context(|| format!("reading {}", dir.display()))?
        {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.is_file() {
                files.push(path);
            }
        }
    }
    files.sort();
    Ok(files)
}

fn convert(a: ConvertArgs) -> Result<()> {
    let files = walk_files(&a.input)?;
    if files.is_empty() {
        bail!("no files under {}", a.input.display());
    }
    let mut converted = 0usize;
    for file in &files {
        let rel = file.strip_prefix(&a.input).unwrap_or(file);
        let mut target = a.out.join(rel);
        let name = format!(
            "{}.png",
            target.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
        );
        target.set_file_name(name);
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
        let bin = visualize::RawBinary::from_file(file)?;
        let img = visualize::bytes_to_image(&bin, a.width)?;
        visualize::write_image_png(&img, &target)?;
        converted += 1;
    }
    println!("converted {converted} file(s) into {}", a.out.display());
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<()> {
    let manifest = corpus::ingest(&a.input)?;
    corpus::save_manifest(&manifest, &a.out)?;
    println!(
        "ingested {} record(s) across {} families into {}",
        manifest.records().len(),
        manifest.family_count(),
        a.out.display()
    );
    Ok(())
}

fn balance(a: BalanceArgs, seed: u64) -> Result<()> {
    let manifest = corpus::load_manifest(&a.manifest)?;
    let capped = corpus::undersample(&manifest, a.cap, seed)?;
    corpus::save_manifest(&capped, &a.out)?;
    println!(
        "kept {} of {} record(s) at cap {} into {}",
        capped.records().len(),
        manifest.records().len(),
        a.cap,
        a.out.display()
    );
    Ok(())
}

fn split(a: SplitArgs, seed: u64) -> Result<()> {
    let manifest = corpus::load_manifest(&a.manifest)?;
    let split = corpus::split(&manifest, a.train_fraction, seed)?;
    corpus::save_manifest(&split, &a.out)?;
    let train = split.split_records(corpus::Split::Train).len();
    let test = split.split_records(corpus::Split::Test).len();
    println!("assigned {train} train / {test} test into {}", a.out.display());
    for w in &split.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn train(a: TrainArgs, seed: u64) -> Result<()> {
    let manifest = corpus::load_manifest(&a.manifest)?;
    let mut model = a.net.build(manifest.family_count(), seed)?;
    if let Some(weights) = &a.weights {
        models::load_weights(&mut model, weights, true)?;
        println!("loaded backbone weights from {}", weights.display());
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        momentum: a.momentum,
        batch_size: a.batch,
        epochs: a.epochs,
        seed,
        shuffle_each_epoch: true,
    };
    let opts = TrainOptions {
        checkpoint_dir: Some(a.out.clone()),
        run_id: model.name.clone(),
        checkpoint_every: a.checkpoint_every,
    };
    let curve = train::train_model_with(&mut model, &manifest, &cfg, &opts)?;
    train::emit_curve_csv(&curve, &a.out.join("curve.csv"))?;
    models::save_weights(&model, &a.out.join("weights.mvw"))?;
    if let Some(e) = curve.epochs.last() {
        println!(
            "epoch {}: train acc {:.4}, loss {:.4}, val acc {:?}, val loss {:?}",
            e.epoch, e.train_acc, e.train_loss, e.val_acc, e.val_loss
        );
    }
    println!("wrote {} and {}", a.out.join("curve.csv").display(), a.out.join("weights.mvw").display());
    Ok(())
}

fn eval(a: EvalArgs, seed: u64) -> Result<()> {
    let manifest = corpus::load_manifest(&a.manifest)?;
    let scope = EvalScope::parse(&a.scope)
        .with_context(|| format!("bad --scope {} (use all or test)", a.scope))?;
    let mut model = a.net.build(manifest.family_count(), seed)?;
    models::load_weights(&mut model, &a.weights, false)?;
    let report = metrics::evaluate(&model, &manifest, scope)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    std::fs::write(a.out.join("metrics.csv"), metrics::report_to_csv(&report))?;
    let labels: Vec<String> = report.per_class.iter().map(|c| c.label.clone()).collect();
    std::fs::write(
        a.out.join("confusion.csv"),
        metrics::confusion_to_csv(&report.matrix, &labels),
    )?;
    let text = metrics::report_to_text(&report);
    std::fs::write(a.out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn select(a: SelectArgs, seed: u64) -> Result<()> {
    let base = corpus::load_manifest(&a.manifest)?;
    let scope = EvalScope::parse(&a.scope)
        .with_context(|| format!("bad --scope {} (use all or test)", a.scope))?;

    let mut imported = BTreeMap::new();
    if let Some(dir) = &a.curves_dir {
        for name in &a.candidates {
            let path = dir.join(format!("{name}.csv"));
            if path.exists() {
                imported.insert(name.clone(), train::load_curve_csv(&path)?);
            }
        }
    }

    let cfg = StrategyConfig {
        stage1_candidates: a.candidates.clone(),
        stage1_cap: a.stage1_cap,
        stage1_freeze: a.stage1_freeze,
        stage2_caps: a.caps.clone(),
        stage2_freezes: a.freezes.clone(),
        shortlist_size: a.shortlist,
        train_fraction: a.train_fraction,
        train_cfg: TrainConfig {
            learning_rate: a.lr,
            momentum: a.momentum,
            batch_size: a.batch,
            epochs: a.epochs,
            seed,
            shuffle_each_epoch: true,
        },
        eval_scope: scope,
        arch: ArchConfig {
            input_side: a.side,
            input_channels: a.channels,
            head_units: a.head_units,
            block_overrides: BTreeMap::new(),
        },
    };

    let report = strategy::run_strategy(&cfg, &base, &imported, Some(&a.report_dir))?;
    println!("report written to {}", a.report_dir.display());
    println!("shortlist: {}", report.shortlist.join(", "));
    if let Some(best) = report.best_cell() {
        println!(
            "best: {} Frozen{}% trained by Max{} -> accuracy {:.2}%",
            best.model,
            best.freeze_pct(),
            best.cap,
            best.report.accuracy * 100.0
        );
    }
    Ok(())
}

/// Literature accuracy figures on the same 25-family image corpus,
/// carried as static reference data.
const COMPARISON_ROWS: &[(&str, f64)] = &[
    ("CNN", 94.50),
    ("GIST + K-nearest neighbors", 97.18),
    ("M-CNN (VGG16)", 98.52),
    ("ResNet50", 98.62),
    ("Xception", 99.03),
    ("VGG19 (ours)", 99.72),
];

pub fn comparison_table() -> String {
    use std::fmt::Write as _;
    let mut out = String::from("reported accuracy on the 25-family Malimg corpus (literature values)\n");
    for (method, acc) in COMPARISON_ROWS {
        let _ = writeln!(out, "{method:<30} {acc:.2}%");
    }
    out
}

fn catalog(a: CatalogArgs) -> Result<()> {
    if a.comparison {
        print!("{}", comparison_table());
        return Ok(());
    }
    match &a.model {
        Some(name) => {
            let e = models::catalog_lookup(name)?;
            println!(
                "{} ({}): flops {:.2} M, params {:.2} M, top-1 {:.2}%, top-5 {:.2}%",
                e.name, e.year, e.flops_m, e.params_m, e.top1, e.top5
            );
        }
        None => {
            println!(
                "{:<18} {:>6} {:>10} {:>9} {:>7} {:>7}",
                "model", "year", "flops(M)", "params(M)", "top-1", "top-5"
            );
            for e in models::catalog() {
                println!(
                    "{:<18} {:>6} {:>10.2} {:>9.2} {:>7.2} {:>7.2}",
                    e.name, e.year, e.flops_m, e.params_m, e.top1, e.top5
                );
            }
        }
    }
    Ok(())
}
