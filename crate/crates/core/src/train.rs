//! Mini-batch fine-tuning loop: deterministic per-epoch shuffling,
//! per-epoch validation on the held-out split, curve logging and MVW1
//! checkpointing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::corpus::{CorpusManifest, Split};
use crate::models::{save_weights, Model};
use crate::nn::{SgdMomentum, Tensor};
use crate::rng::{mix, Rng, Stream};
use crate::visualize::{image_to_input, read_image_png, NetworkInput};
use crate::{par, Error, Result};

/// Training hyperparameters. The defaults are the fine-tuning settings
/// used throughout: SGD with momentum 0.9 at learning rate 1e-4, batch
/// size 32, categorical cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            momentum: 0.9,
            batch_size: 32,
            epochs: 50,
            seed: 42,
            shuffle_each_epoch: true,
        }
    }
}

/// One epoch of curve data. Validation fields are absent when the
/// corpus has no test split.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_acc: f32,
    pub train_loss: f32,
    pub val_acc: Option<f32>,
    pub val_loss: Option<f32>,
}

/// Per-epoch training/validation trajectory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainCurve {
    pub epochs: Vec<EpochRecord>,
}

impl TrainCurve {
    pub fn final_val_acc(&self) -> Option<f32> {
        self.epochs.last().and_then(|e| e.val_acc)
    }

    pub fn final_val_loss(&self) -> Option<f32> {
        self.epochs.last().and_then(|e| e.val_loss)
    }
}

/// Side effects of a training run beyond the model itself.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Directory for per-epoch checkpoints, named `<run_id>.epoch<N>.mvw`.
    pub checkpoint_dir: Option<PathBuf>,
    pub run_id: String,
    /// Checkpoint every N epochs; 0 disables.
    pub checkpoint_every: usize,
}

/// Decoded samples held in memory: one resized luminance plane per
/// record, replicated across channels on demand.
pub struct Dataset {
    side: usize,
    channels: usize,
    planes: Vec<Vec<f32>>,
    labels: Vec<usize>,
}

impl Dataset {
    /// Decode and resize every record of the given split (or all
    /// records when `split` is `None`). Image decoding fans out per file.
    pub fn load(
        corpus: &CorpusManifest,
        split: Option<Split>,
        side: usize,
        channels: usize,
    ) -> Result<Dataset> {
        let records: Vec<_> = match split {
            Some(s) => corpus.split_records(s),
            None => corpus.records().iter().collect(),
        };
        let planes = par::map_indexed(&records, |_, rec| -> Result<Vec<f32>> {
            let img = read_image_png(Path::new(&rec.image_path))?;
            Ok(crate::visualize::resize_plane(&img, side))
        });
        let mut out_planes = Vec::with_capacity(records.len());
        for p in planes {
            out_planes.push(p?);
        }
        Ok(Dataset {
            side,
            channels,
            planes: out_planes,
            labels: records.iter().map(|r| r.family_index).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Materialize sample `i` as a `[C, side, side]` tensor.
    pub fn tensor(&self, i: usize) -> Tensor {
        let plane = &self.planes[i];
        let mut values = Vec::with_capacity(self.channels * plane.len());
        for _ in 0..self.channels {
            values.extend_from_slice(plane);
        }
        Tensor::new(&[self.channels, self.side, self.side], values).expect("dataset dims")
    }
}

/// Batch index order for one epoch: a shuffle keyed by `(seed, epoch)`,
/// chunked into `batch_size` groups with the final partial batch kept.
pub fn epoch_batches(
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    shuffle: bool,
) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = Rng::from_stream(seed, Stream::BatchShuffle, epoch as u64);
        rng.shuffle(&mut order);
    }
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Materialized batches of `(input, class index)` for one epoch of the
/// given split, shuffled by `(seed, epoch)`.
pub fn batch_iterator(
    corpus: &CorpusManifest,
    split: Split,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    side: usize,
    channels: usize,
) -> Result<Vec<Vec<(NetworkInput, usize)>>> {
    let records = corpus.split_records(split);
    if records.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    let batches = epoch_batches(records.len(), batch_size, seed, epoch, true);
    let mut out = Vec::with_capacity(batches.len());
    for batch in batches {
        let mut items = Vec::with_capacity(batch.len());
        for idx in batch {
            let rec = records[idx];
            let img = read_image_png(Path::new(&rec.image_path))?;
            items.push((image_to_input(&img, side, channels)?, rec.family_index));
        }
        out.push(items);
    }
    Ok(out)
}

/// Fine-tune `model` on the train split, validating on the test split
/// after every epoch. The final partial batch is used, loss is averaged
/// per sample, and frozen layers never move.
pub fn train_model(
    model: &mut Model,
    corpus: &CorpusManifest,
    cfg: &TrainConfig,
) -> Result<TrainCurve> {
    train_model_with(model, corpus, cfg, &TrainOptions::default())
}

pub fn train_model_with(
    model: &mut Model,
    corpus: &CorpusManifest,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainCurve> {
    if model.class_count != corpus.family_count() {
        return Err(Error::ClassCountMismatch {
            model: model.class_count,
            corpus: corpus.family_count(),
        });
    }
    if !corpus.is_split() {
        return Err(Error::NotSplit);
    }
    let train = Dataset::load(corpus, Some(Split::Train), model.input_side, model.input_channels)?;
    if train.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    let val = Dataset::load(corpus, Some(Split::Test), model.input_side, model.input_channels)?;

    let mut opt = SgdMomentum::new(cfg.learning_rate, cfg.momentum);
    let mut curve = TrainCurve::default();
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for batch in epoch_batches(train.len(), cfg.batch_size, cfg.seed, epoch, cfg.shuffle_each_epoch)
        {
            let inputs: Vec<Tensor> = batch.iter().map(|&i| train.tensor(i)).collect();
            let targets: Vec<usize> = batch.iter().map(|&i| train.label(i)).collect();
            let seeds: Vec<u64> = batch
                .iter()
                .map(|&i| mix(cfg.seed, Stream::Dropout, ((epoch as u64) << 32) | i as u64))
                .collect();
            let (stats, grads) = model.net.batch_grads(&inputs, &targets, &seeds, true)?;
            loss_sum += stats.mean_loss as f64 * stats.total as f64;
            correct += stats.correct;
            model.net.apply_step(&grads, &mut opt)?;
        }
        let (val_acc, val_loss) = if val.is_empty() {
            (None, None)
        } else {
            let inputs: Vec<Tensor> = (0..val.len()).map(|i| val.tensor(i)).collect();
            let targets: Vec<usize> = (0..val.len()).map(|i| val.label(i)).collect();
            let stats = model.net.batch_eval(&inputs, &targets)?;
            (
                Some(stats.correct as f32 / stats.total as f32),
                Some(stats.mean_loss),
            )
        };
        curve.epochs.push(EpochRecord {
            epoch,
            train_acc: correct as f32 / train.len() as f32,
            train_loss: (loss_sum / train.len() as f64) as f32,
            val_acc,
            val_loss,
        });
        if opts.checkpoint_every > 0 && epoch % opts.checkpoint_every == 0 {
            if let Some(dir) = &opts.checkpoint_dir {
                save_weights(model, &dir.join(format!("{}.epoch{epoch}.mvw", opts.run_id)))?;
            }
        }
    }
    Ok(curve)
}

fn fmt_opt(v: Option<f32>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Render the curve as CSV: `epoch,acc,loss,val_acc,val_loss`, one row
/// per epoch, shortest-roundtrip decimal, empty validation fields when
/// there was no validation split.
pub fn curve_to_csv(curve: &TrainCurve) -> String {
    let mut out = String::from("epoch,acc,loss,val_acc,val_loss\n");
    for e in &curve.epochs {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            e.epoch,
            e.train_acc,
            e.train_loss,
            fmt_opt(e.val_acc),
            fmt_opt(e.val_loss)
        );
    }
    out
}

pub fn emit_curve_csv(curve: &TrainCurve, path: &Path) -> Result<()> {
    std::fs::write(path, curve_to_csv(curve))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Parse a curve CSV produced by [`emit_curve_csv`] (or any external
/// tool emitting the same header).
pub fn parse_curve_csv(text: &str) -> Result<TrainCurve> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or_default();
    if header.trim() != "epoch,acc,loss,val_acc,val_loss" {
        return Err(Error::ManifestParse {
            line: 1,
            reason: format!("bad curve header {header:?}"),
        });
    }
    let mut curve = TrainCurve::default();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let bad = |reason: &str| Error::ManifestParse {
            line: lineno + 1,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad("expected 5 comma-separated fields"));
        }
        let opt = |s: &str| -> Result<Option<f32>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad("bad float"))
            }
        };
        curve.epochs.push(EpochRecord {
            epoch: fields[0].parse().map_err(|_| bad("bad epoch"))?,
            train_acc: fields[1].parse().map_err(|_| bad("bad acc"))?,
            train_loss: fields[2].parse().map_err(|_| bad("bad loss"))?,
            val_acc: opt(fields[3])?,
            val_loss: opt(fields[4])?,
        });
    }
    Ok(curve)
}

pub fn load_curve_csv(path: &Path) -> Result<TrainCurve> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_curve_csv(&text)
}
