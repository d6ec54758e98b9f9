//! Two-stage model selection: screen candidates at a fixed freeze
//! fraction on the heavily-capped corpus, then grid-search freeze
//! fraction against undersampling cap on the shortlist and rank the
//! cells.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::CorpusManifest;
use crate::metrics::{confusion_to_csv, evaluate, report_to_csv, EvalReport, EvalScope};
use crate::models::{build_custom, save_weights, ConvBlock, VggVariant, DEFAULT_HEAD_UNITS,
    DEFAULT_INPUT_CHANNELS, DEFAULT_INPUT_SIDE};
use crate::rng::mix;
use crate::train::{curve_to_csv, train_model, TrainConfig, TrainCurve};
use crate::{Error, Result};

/// Network geometry knobs for the candidates built in-core. Block
/// overrides swap in reduced conv stacks for desk-scale runs; absent an
/// override, candidate names resolve to the standard VGG layouts.
#[derive(Debug, Clone)]
pub struct ArchConfig {
    pub input_side: usize,
    pub input_channels: usize,
    pub head_units: usize,
    /// Lowercased candidate name -> conv blocks.
    pub block_overrides: BTreeMap<String, Vec<ConvBlock>>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            input_side: DEFAULT_INPUT_SIDE,
            input_channels: DEFAULT_INPUT_CHANNELS,
            head_units: DEFAULT_HEAD_UNITS,
            block_overrides: BTreeMap::new(),
        }
    }
}

impl ArchConfig {
    /// Conv blocks for a buildable candidate, `None` for catalog-only names.
    pub fn blocks_for(&self, name: &str) -> Option<Vec<ConvBlock>> {
        if let Some(blocks) = self.block_overrides.get(&name.to_ascii_lowercase()) {
            return Some(blocks.clone());
        }
        VggVariant::parse(name).map(|v| v.blocks())
    }
}

/// Configuration of the full two-stage procedure. The defaults encode
/// the screening stage (cap 80, freeze 0.8) and the grid stage
/// (caps {240, 320} x freezes {0.2, 0.4, 0.6, 0.8}) exactly.
#[derive(Debug, Clone)]
pub struct StrategyConfig {
    pub stage1_candidates: Vec<String>,
    pub stage1_cap: u32,
    pub stage1_freeze: f64,
    pub stage2_caps: Vec<u32>,
    pub stage2_freezes: Vec<f64>,
    pub shortlist_size: usize,
    pub train_fraction: f64,
    pub train_cfg: TrainConfig,
    pub eval_scope: EvalScope,
    pub arch: ArchConfig,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            stage1_candidates: ["NasNet", "DenseNet201", "Xception", "ResNet50", "VGG19", "VGG16"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            stage1_cap: 80,
            stage1_freeze: 0.8,
            stage2_caps: vec![240, 320],
            stage2_freezes: vec![0.2, 0.4, 0.6, 0.8],
            shortlist_size: 2,
            train_fraction: 0.9,
            train_cfg: TrainConfig::default(),
            eval_scope: EvalScope::All,
            arch: ArchConfig::default(),
        }
    }
}

/// One screened candidate with its training curve.
#[derive(Debug, Clone)]
pub struct Stage1Entry {
    pub name: String,
    pub curve: TrainCurve,
    pub final_val_acc: f32,
    pub final_val_loss: f32,
    /// True when the curve came from an external CSV rather than an
    /// in-core training run.
    pub imported: bool,
}

/// One grid cell: a model trained at (cap, freeze) and its evaluation.
#[derive(Debug, Clone)]
pub struct Stage2Cell {
    pub model: String,
    pub cap: u32,
    pub freeze: f64,
    pub curve: TrainCurve,
    pub report: EvalReport,
}

impl Stage2Cell {
    pub fn freeze_pct(&self) -> u32 {
        (self.freeze * 100.0).round() as u32
    }

    /// Directory-safe cell identifier, `<model>_max<cap>_fz<pct>`.
    pub fn cell_name(&self) -> String {
        format!(
            "{}_max{}_fz{}",
            sanitize(&self.model),
            self.cap,
            self.freeze_pct()
        )
    }
}

/// Outcome of the full procedure.
#[derive(Debug, Clone)]
pub struct StrategyReport {
    /// Ranked best-first.
    pub stage1: Vec<Stage1Entry>,
    /// Candidates that were neither buildable nor imported.
    pub skipped: Vec<String>,
    pub shortlist: Vec<String>,
    /// Grid order: shortlist x caps x freezes.
    pub stage2: Vec<Stage2Cell>,
    /// Index of the winning cell in `stage2`.
    pub best: Option<usize>,
}

impl StrategyReport {
    pub fn best_cell(&self) -> Option<&Stage2Cell> {
        self.best.map(|i| &self.stage2[i])
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect()
}

fn name_key(name: &str) -> u64 {
    // FNV-1a, keyed per candidate so init streams differ by name.
    let mut h = 0xcbf29ce484222325u64;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn build_candidate(
    cfg: &StrategyConfig,
    name: &str,
    blocks: &[ConvBlock],
    class_count: usize,
    freeze: f64,
    seed_key: u64,
) -> Result<crate::models::Model> {
    build_custom(
        name,
        blocks,
        cfg.arch.head_units,
        class_count,
        freeze,
        cfg.arch.input_side,
        cfg.arch.input_channels,
        mix(cfg.train_cfg.seed, crate::rng::Stream::WeightInit, seed_key),
    )
}

/// Screen the configured candidates on the stage-1 corpus. Buildable
/// candidates are trained; any candidate with an imported curve uses
/// that instead; names that are neither are skipped. Candidates are
/// ranked by final validation accuracy (descending), then validation
/// loss, then name.
pub fn stage1_screen(
    cfg: &StrategyConfig,
    corpus_stage1: &CorpusManifest,
    imported_curves: &BTreeMap<String, TrainCurve>,
) -> Result<(Vec<Stage1Entry>, Vec<String>, Vec<String>)> {
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for name in &cfg.stage1_candidates {
        let (curve, imported) = if let Some(curve) = imported_curves.get(name) {
            (curve.clone(), true)
        } else if let Some(blocks) = cfg.arch.blocks_for(name) {
            let mut model = build_candidate(
                cfg,
                name,
                &blocks,
                corpus_stage1.family_count(),
                cfg.stage1_freeze,
                name_key(name),
            )?;
            (train_model(&mut model, corpus_stage1, &cfg.train_cfg)?, false)
        } else {
            skipped.push(name.clone());
            continue;
        };
        let final_val_acc = curve.final_val_acc().unwrap_or(f32::NEG_INFINITY);
        let final_val_loss = curve.final_val_loss().unwrap_or(f32::INFINITY);
        entries.push(Stage1Entry {
            name: name.clone(),
            curve,
            final_val_acc,
            final_val_loss,
            imported,
        });
    }
    if entries.is_empty() {
        return Err(Error::NoCandidates);
    }
    entries.sort_by(|a, b| {
        b.final_val_acc
            .partial_cmp(&a.final_val_acc)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                a.final_val_loss
                    .partial_cmp(&b.final_val_loss)
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then_with(|| a.name.cmp(&b.name))
    });
    let shortlist: Vec<String> = entries
        .iter()
        .take(cfg.shortlist_size)
        .map(|e| e.name.clone())
        .collect();
    Ok((entries, skipped, shortlist))
}

fn better_cell(a: &Stage2Cell, b: &Stage2Cell) -> bool {
    // accuracy, then macro recall, then macro precision, then name.
    if a.report.accuracy != b.report.accuracy {
        return a.report.accuracy > b.report.accuracy;
    }
    if a.report.recall_macro != b.report.recall_macro {
        return a.report.recall_macro > b.report.recall_macro;
    }
    if a.report.precision_macro != b.report.precision_macro {
        return a.report.precision_macro > b.report.precision_macro;
    }
    a.cell_name() < b.cell_name()
}

/// Train and evaluate every (model, cap, freeze) cell of the grid.
/// `corpora` maps each cap to its split training corpus; `eval_corpus`
/// is the corpus scored when the scope is `All` (typically the full
/// uncapped manifest). Weights land under
/// `<out_dir>/stage2/<cell>/weights.mvw` when an output directory is given.
pub fn stage2_grid(
    cfg: &StrategyConfig,
    shortlist: &[String],
    corpora: &BTreeMap<u32, CorpusManifest>,
    eval_corpus: &CorpusManifest,
    out_dir: Option<&Path>,
) -> Result<(Vec<Stage2Cell>, Option<usize>)> {
    for cap in &cfg.stage2_caps {
        if !corpora.contains_key(cap) {
            return Err(Error::MissingCorpus(*cap));
        }
    }
    let mut cells = Vec::new();
    for name in shortlist {
        let blocks = cfg
            .arch
            .blocks_for(name)
            .ok_or_else(|| Error::UnknownModel(name.clone()))?;
        for &cap in &cfg.stage2_caps {
            let corpus = &corpora[&cap];
            for &freeze in &cfg.stage2_freezes {
                let cell_tag = format!("{name}/max{cap}/fz{freeze}");
                let mut model = build_candidate(
                    cfg,
                    name,
                    &blocks,
                    corpus.family_count(),
                    freeze,
                    name_key(&cell_tag),
                )?;
                let curve = train_model(&mut model, corpus, &cfg.train_cfg)?;
                let report = match cfg.eval_scope {
                    EvalScope::All => evaluate(&model, eval_corpus, EvalScope::All)?,
                    EvalScope::TestSplit => evaluate(&model, corpus, EvalScope::TestSplit)?,
                };
                let cell = Stage2Cell {
                    model: name.clone(),
                    cap,
                    freeze,
                    curve,
                    report,
                };
                if let Some(dir) = out_dir {
                    let cell_dir = dir.join("stage2").join(cell.cell_name());
                    std::fs::create_dir_all(&cell_dir)
                        .map_err(|e| Error::io(format!("creating {}", cell_dir.display()), e))?;
                    save_weights(&model, &cell_dir.join("weights.mvw"))?;
                }
                cells.push(cell);
            }
        }
    }
    let mut best: Option<usize> = None;
    for (i, cell) in cells.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) if better_cell(cell, &cells[b]) => best = Some(i),
            _ => {}
        }
    }
    Ok((cells, best))
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

/// Render `summary.txt`, per-candidate stage-1 curves and per-cell
/// metric/confusion/curve CSVs under `dir`. Pure function of the
/// report: re-rendering produces byte-identical files.
pub fn render_report(report: &StrategyReport, dir: &Path) -> Result<()> {
    let mkdir = |p: &Path| {
        std::fs::create_dir_all(p).map_err(|e| Error::io(format!("creating {}", p.display()), e))
    };
    mkdir(dir)?;

    let mut summary = String::new();
    let _ = writeln!(summary, "== stage 1: candidate screening ==");
    let _ = writeln!(
        summary,
        "{:<20} {:>10} {:>10}  source",
        "model", "val_acc", "val_loss"
    );
    for e in &report.stage1 {
        let _ = writeln!(
            summary,
            "{:<20} {:>9.2}% {:>10.4}  {}",
            e.name,
            e.final_val_acc * 100.0,
            e.final_val_loss,
            if e.imported { "imported" } else { "trained" }
        );
    }
    for name in &report.skipped {
        let _ = writeln!(summary, "{name:<20} (skipped: not buildable, no imported curve)");
    }
    let _ = writeln!(summary, "shortlist: {}", report.shortlist.join(", "));
    let _ = writeln!(summary);
    let _ = writeln!(summary, "== stage 2: freeze x cap grid ==");
    let _ = writeln!(
        summary,
        "{:<40} {:>8} {:>16} {:>16} {:>13} {:>13}",
        "model", "Accuracy", "Precision(micro)", "Precision(macro)", "Recall(micro)", "Recall(macro)"
    );
    for (i, cell) in report.stage2.iter().enumerate() {
        let marker = if report.best == Some(i) { " <- best" } else { "" };
        let _ = writeln!(
            summary,
            "{:<40} {:>8} {:>16} {:>16} {:>13} {:>13}{}",
            format!("{} Frozen{}% trained by Max{}", cell.model, cell.freeze_pct(), cell.cap),
            pct(cell.report.accuracy),
            pct(cell.report.precision_micro),
            pct(cell.report.precision_macro),
            pct(cell.report.recall_micro),
            pct(cell.report.recall_macro),
            marker
        );
    }
    std::fs::write(dir.join("summary.txt"), summary)
        .map_err(|e| Error::io(format!("writing {}", dir.join("summary.txt").display()), e))?;

    let stage1_dir = dir.join("stage1");
    mkdir(&stage1_dir)?;
    for e in &report.stage1 {
        let path = stage1_dir.join(format!("{}.csv", sanitize(&e.name)));
        std::fs::write(&path, curve_to_csv(&e.curve))
            .map_err(|err| Error::io(format!("writing {}", path.display()), err))?;
    }

    for cell in &report.stage2 {
        let cell_dir = dir.join("stage2").join(cell.cell_name());
        mkdir(&cell_dir)?;
        let labels: Vec<String> = cell.report.per_class.iter().map(|c| c.label.clone()).collect();
        let writes = [
            ("metrics.csv", report_to_csv(&cell.report)),
            ("confusion.csv", confusion_to_csv(&cell.report.matrix, &labels)),
            ("curve.csv", curve_to_csv(&cell.curve)),
        ];
        for (file, content) in writes {
            std::fs::write(cell_dir.join(file), content)
                .map_err(|e| Error::io(format!("writing {}", cell_dir.join(file).display()), e))?;
        }
    }
    Ok(())
}

/// The full procedure: derive the stage-1 and stage-2 corpora from the
/// base manifest, screen, grid-search, rank and render.
pub fn run_strategy(
    cfg: &StrategyConfig,
    base: &CorpusManifest,
    imported_curves: &BTreeMap<String, TrainCurve>,
    out_dir: Option<&Path>,
) -> Result<StrategyReport> {
    let seed = cfg.train_cfg.seed;
    let stage1_corpus = crate::corpus::split(
        &crate::corpus::undersample(base, cfg.stage1_cap, seed)?,
        cfg.train_fraction,
        seed,
    )?;
    let (stage1, skipped, shortlist) = stage1_screen(cfg, &stage1_corpus, imported_curves)?;

    let mut corpora = BTreeMap::new();
    for &cap in &cfg.stage2_caps {
        let capped = crate::corpus::split(
            &crate::corpus::undersample(base, cap, seed)?,
            cfg.train_fraction,
            seed,
        )?;
        corpora.insert(cap, capped);
    }
    let (stage2, best) = stage2_grid(cfg, &shortlist, &corpora, base, out_dir)?;
    let report = StrategyReport {
        stage1,
        skipped,
        shortlist,
        stage2,
        best,
    };
    if let Some(dir) = out_dir {
        render_report(&report, dir)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{EpochRecord, TrainCurve};

    fn flat_curve(val_acc: f32, val_loss: f32) -> TrainCurve {
        TrainCurve {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_acc: val_acc,
                train_loss: val_loss,
                val_acc: Some(val_acc),
                val_loss: Some(val_loss),
            }],
        }
    }

    #[test]
    fn defaults_encode_the_procedure() {
        let cfg = StrategyConfig::default();
        assert_eq!(cfg.stage1_cap, 80);
        assert_eq!(cfg.stage1_freeze, 0.8);
        assert_eq!(cfg.stage2_caps, vec![240, 320]);
        assert_eq!(cfg.stage2_freezes, vec![0.2, 0.4, 0.6, 0.8]);
        assert_eq!(cfg.shortlist_size, 2);
        assert_eq!(cfg.train_fraction, 0.9);
        assert_eq!(cfg.stage1_candidates.len(), 6);
    }

    #[test]
    fn screening_ranks_by_dominance() {
        let cfg = StrategyConfig {
            stage1_candidates: vec!["weak".into(), "strong".into()],
            shortlist_size: 1,
            ..StrategyConfig::default()
        };
        let corpus = crate::corpus::manifest_from_counts(&[("f", 4)]).unwrap();
        let mut curves = BTreeMap::new();
        curves.insert("weak".to_string(), flat_curve(0.15, 2.5));
        curves.insert("strong".to_string(), flat_curve(0.9, 0.3));
        let (entries, skipped, shortlist) = stage1_screen(&cfg, &corpus, &curves).unwrap();
        assert_eq!(entries[0].name, "strong");
        assert_eq!(shortlist, vec!["strong".to_string()]);
        assert!(skipped.is_empty());
    }

    #[test]
    fn screening_mirrors_the_published_selection_pattern() {
        // Curves shaped like the published screening outcome: only the
        // two VGG variants improve on the capped corpus.
        let cfg = StrategyConfig::default();
        let corpus = crate::corpus::manifest_from_counts(&[("f", 4)]).unwrap();
        let mut curves = BTreeMap::new();
        curves.insert("NasNet".to_string(), flat_curve(0.12, 3.1));
        curves.insert("DenseNet201".to_string(), flat_curve(0.18, 2.9));
        curves.insert("Xception".to_string(), flat_curve(0.22, 2.8));
        curves.insert("ResNet50".to_string(), flat_curve(0.31, 2.2));
        curves.insert("VGG19".to_string(), flat_curve(0.93, 0.25));
        curves.insert("VGG16".to_string(), flat_curve(0.94, 0.22));
        let (entries, _, shortlist) = stage1_screen(&cfg, &corpus, &curves).unwrap();
        let mut sorted = shortlist.clone();
        sorted.sort();
        assert_eq!(sorted, vec!["VGG16".to_string(), "VGG19".to_string()]);
        assert_eq!(entries[0].name, "VGG16");
        assert_eq!(entries[1].name, "VGG19");
    }

    #[test]
    fn screening_is_input_order_invariant() {
        let corpus = crate::corpus::manifest_from_counts(&[("f", 4)]).unwrap();
        let mut curves = BTreeMap::new();
        curves.insert("a".to_string(), flat_curve(0.5, 1.0));
        curves.insert("b".to_string(), flat_curve(0.5, 1.0));
        curves.insert("c".to_string(), flat_curve(0.7, 0.5));
        let forward = StrategyConfig {
            stage1_candidates: vec!["a".into(), "b".into(), "c".into()],
            ..StrategyConfig::default()
        };
        let reverse = StrategyConfig {
            stage1_candidates: vec!["c".into(), "b".into(), "a".into()],
            ..StrategyConfig::default()
        };
        let (e1, _, s1) = stage1_screen(&forward, &corpus, &curves).unwrap();
        let (e2, _, s2) = stage1_screen(&reverse, &corpus, &curves).unwrap();
        let names1: Vec<_> = e1.iter().map(|e| e.name.clone()).collect();
        let names2: Vec<_> = e2.iter().map(|e| e.name.clone()).collect();
        assert_eq!(names1, names2);
        assert_eq!(s1, s2);
        assert_eq!(names1, vec!["c".to_string(), "a".to_string(), "b".to_string()]);
    }

    #[test]
    fn no_resolvable_candidate_is_an_error() {
        let cfg = StrategyConfig {
            stage1_candidates: vec!["ResNet50".into(), "Xception".into()],
            ..StrategyConfig::default()
        };
        let corpus = crate::corpus::manifest_from_counts(&[("f", 4)]).unwrap();
        let out = stage1_screen(&cfg, &corpus, &BTreeMap::new());
        assert!(matches!(out, Err(Error::NoCandidates)));
    }

    fn cell(model: &str, cap: u32, freeze: f64, acc: f64, rec_macro: f64, prec_macro: f64) -> Stage2Cell {
        let matrix = crate::metrics::confusion(&[0, 1], &[0, 1], 2).unwrap();
        let mut report = crate::metrics::metrics(&matrix).unwrap();
        report.accuracy = acc;
        report.recall_macro = rec_macro;
        report.precision_macro = prec_macro;
        Stage2Cell {
            model: model.to_string(),
            cap,
            freeze,
            curve: flat_curve(0.5, 0.5),
            report,
        }
    }

    #[test]
    fn macro_recall_breaks_accuracy_ties() {
        let a = cell("VGG19", 320, 0.6, 0.9972, 0.9976, 0.9947);
        let b = cell("VGG16", 320, 0.4, 0.9972, 0.9974, 0.9944);
        assert!(better_cell(&a, &b));
        assert!(!better_cell(&b, &a));
    }

    #[test]
    fn name_breaks_full_ties_deterministically() {
        let a = cell("VGG16", 240, 0.2, 0.9, 0.9, 0.9);
        let b = cell("VGG19", 240, 0.2, 0.9, 0.9, 0.9);
        assert!(better_cell(&a, &b));
    }

    #[test]
    fn singleton_grid_best_is_its_only_cell() {
        use crate::visualize::{bytes_to_image, write_image_png, RawBinary};
        let dir = tempfile::tempdir().unwrap();
        for (fam, fill) in [("a", 30u8), ("b", 200u8)] {
            let fam_dir = dir.path().join(fam);
            std::fs::create_dir_all(&fam_dir).unwrap();
            for i in 0..6u8 {
                let img = bytes_to_image(
                    &RawBinary::new(vec![fill.wrapping_add(i); 64], "t"),
                    Some(8),
                )
                .unwrap();
                write_image_png(&img, &fam_dir.join(format!("{i}.png"))).unwrap();
            }
        }
        let base = crate::corpus::ingest(dir.path()).unwrap();

        let mut arch = ArchConfig {
            input_side: 8,
            input_channels: 1,
            head_units: 4,
            block_overrides: BTreeMap::new(),
        };
        arch.block_overrides.insert("vgg16".into(), vec![]);
        let cfg = StrategyConfig {
            stage2_caps: vec![6],
            stage2_freezes: vec![0.5],
            train_cfg: crate::train::TrainConfig {
                epochs: 1,
                batch_size: 8,
                seed: 3,
                ..Default::default()
            },
            arch,
            ..StrategyConfig::default()
        };
        let capped = crate::corpus::undersample(&base, 6, 3).unwrap();
        let split = crate::corpus::split(&capped, 0.75, 3).unwrap();
        let mut corpora = BTreeMap::new();
        corpora.insert(6u32, split);
        let (cells, best) =
            stage2_grid(&cfg, &["vgg16".to_string()], &corpora, &base, None).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(best, Some(0));
    }

    #[test]
    fn missing_corpus_for_cap_errors() {
        let cfg = StrategyConfig::default();
        let base = crate::corpus::manifest_from_counts(&[("f", 4)]).unwrap();
        let out = stage2_grid(
            &cfg,
            &["VGG16".to_string()],
            &BTreeMap::new(),
            &base,
            None,
        );
        assert!(matches!(out, Err(Error::MissingCorpus(240))));
    }
}
