//! Confusion matrices and the evaluation metrics: accuracy, precision
//! and recall under micro and macro averaging.
//!
//! All metrics are computed from integer counts, each converted to f64
//! by a single division, so the single-label identity
//! `precision_micro == recall_micro == accuracy` holds exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::{CorpusManifest, Split};
use crate::models::Model;
use crate::nn::Tensor;
use crate::visualize::{image_to_input, read_image_png};
use crate::{par, Error, Result};

/// Exact non-negative rational used for metric values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Self {
        Ratio { num, den }
    }

    /// `0/0` cases are defined as zero by the callers before reaching here.
    pub fn as_f64(self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }

    /// Exact equality by cross-multiplication.
    pub fn eq_exact(self, other: Ratio) -> bool {
        (self.num as u128) * (other.den as u128) == (other.num as u128) * (self.den as u128)
    }
}

/// `k x k` count table; rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn cell(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.cell(i, i)).sum()
    }

    pub fn row_sum(&self, true_class: usize) -> u64 {
        self.counts[true_class * self.k..(true_class + 1) * self.k]
            .iter()
            .sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.k).map(|t| self.cell(t, predicted)).sum()
    }

    fn add(&mut self, true_class: usize, predicted: usize) {
        self.counts[true_class * self.k + predicted] += 1;
    }
}

/// Count (true, predicted) pairs into a `k x k` matrix.
pub fn confusion(true_labels: &[usize], predicted: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if true_labels.len() != predicted.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} true labels against {} predictions",
            true_labels.len(),
            predicted.len()
        )));
    }
    let mut m = ConfusionMatrix::new(k);
    for (i, (&t, &p)) in true_labels.iter().zip(predicted).enumerate() {
        if t >= k {
            return Err(Error::LabelOutOfRange { class: t, count: k, sample: i });
        }
        if p >= k {
            return Err(Error::LabelOutOfRange { class: p, count: k, sample: i });
        }
        m.add(t, p);
    }
    Ok(m)
}

/// Per-class one-vs-rest outcome counts and derived metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub label: String,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    /// True when TP+FP or TP+FN was zero and the metric was pinned to 0.
    pub degenerate: bool,
}

/// Full evaluation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub precision_micro: f64,
    pub precision_macro: f64,
    pub recall_micro: f64,
    pub recall_macro: f64,
    pub per_class: Vec<ClassMetrics>,
    pub matrix: ConfusionMatrix,
}

fn ratio_or_zero(num: u64, den: u64) -> (Ratio, bool) {
    if den == 0 {
        (Ratio::new(0, 1), true)
    } else {
        (Ratio::new(num, den), false)
    }
}

/// Compute all metrics from a confusion matrix. Class labels are taken
/// from `labels` when provided, else rendered as the class index.
pub fn metrics_with_labels(
    matrix: &ConfusionMatrix,
    labels: Option<&[String]>,
) -> Result<EvalReport> {
    let total = matrix.total();
    if matrix.k() == 0 || total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let k = matrix.k();
    let mut per_class = Vec::with_capacity(k);
    let mut tp_sum = 0u64;
    let mut fp_sum = 0u64;
    let mut fn_sum = 0u64;
    let mut precision_macro_sum = 0.0f64;
    let mut recall_macro_sum = 0.0f64;
    for c in 0..k {
        let tp = matrix.cell(c, c);
        let fp = matrix.col_sum(c) - tp;
        let fn_ = matrix.row_sum(c) - tp;
        tp_sum += tp;
        fp_sum += fp;
        fn_sum += fn_;
        let (precision, p_degen) = ratio_or_zero(tp, tp + fp);
        let (recall, r_degen) = ratio_or_zero(tp, tp + fn_);
        let precision = precision.as_f64();
        let recall = recall.as_f64();
        precision_macro_sum += precision;
        recall_macro_sum += recall;
        per_class.push(ClassMetrics {
            label: labels
                .map(|l| l[c].clone())
                .unwrap_or_else(|| c.to_string()),
            tp,
            fp,
            fn_,
            support: matrix.row_sum(c),
            precision,
            recall,
            degenerate: p_degen || r_degen,
        });
    }
    let accuracy = Ratio::new(matrix.trace(), total);
    let precision_micro = Ratio::new(tp_sum, tp_sum + fp_sum);
    let recall_micro = Ratio::new(tp_sum, tp_sum + fn_sum);
    Ok(EvalReport {
        accuracy: accuracy.as_f64(),
        precision_micro: precision_micro.as_f64(),
        precision_macro: precision_macro_sum / k as f64,
        recall_micro: recall_micro.as_f64(),
        recall_macro: recall_macro_sum / k as f64,
        per_class,
        matrix: matrix.clone(),
    })
}

pub fn metrics(matrix: &ConfusionMatrix) -> Result<EvalReport> {
    metrics_with_labels(matrix, None)
}

/// Which records an evaluation covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalScope {
    /// Only the held-out test split (methodologically clean).
    TestSplit,
    /// Every record regardless of split (comparable to evaluations
    /// that score the full corpus, training data included).
    All,
}

impl EvalScope {
    pub fn parse(s: &str) -> Option<EvalScope> {
        match s {
            "test" | "test_split" => Some(EvalScope::TestSplit),
            "all" => Some(EvalScope::All),
            _ => None,
        }
    }
}

/// Run inference over the selected records and score the predictions.
/// Per-sample inference fans out in parallel; predictions are gathered
/// in record order.
pub fn evaluate(model: &Model, corpus: &CorpusManifest, scope: EvalScope) -> Result<EvalReport> {
    if model.class_count != corpus.family_count() {
        return Err(Error::ClassCountMismatch {
            model: model.class_count,
            corpus: corpus.family_count(),
        });
    }
    let records: Vec<_> = match scope {
        EvalScope::All => corpus.records().iter().collect(),
        EvalScope::TestSplit => corpus.split_records(Split::Test),
    };
    if records.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let outcomes = par::map_indexed(&records, |_, rec| -> Result<(usize, usize)> {
        let img = read_image_png(Path::new(&rec.image_path))?;
        let input = image_to_input(&img, model.input_side, model.input_channels)?;
        let tensor = Tensor::new(
            &[input.channels, input.side, input.side],
            input.values,
        )?;
        Ok((rec.family_index, model.predict(&tensor)?))
    });
    let mut truths = Vec::with_capacity(records.len());
    let mut preds = Vec::with_capacity(records.len());
    for outcome in outcomes {
        let (t, p) = outcome?;
        truths.push(t);
        preds.push(p);
    }
    let matrix = confusion(&truths, &preds, corpus.family_count())?;
    let labels: Vec<String> = corpus
        .family_table()
        .iter()
        .map(|f| f.name.clone())
        .collect();
    metrics_with_labels(&matrix, Some(&labels))
}

/// Render the per-class CSV (`class,precision,recall,support`) with a
/// `# key=value` summary header block.
pub fn report_to_csv(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# accuracy={}", report.accuracy);
    let _ = writeln!(out, "# precision_micro={}", report.precision_micro);
    let _ = writeln!(out, "# precision_macro={}", report.precision_macro);
    let _ = writeln!(out, "# recall_micro={}", report.recall_micro);
    let _ = writeln!(out, "# recall_macro={}", report.recall_macro);
    let _ = writeln!(out, "# total={}", report.matrix.total());
    let _ = writeln!(out, "class,precision,recall,support");
    for c in &report.per_class {
        let _ = writeln!(out, "{},{},{},{}", c.label, c.precision, c.recall, c.support);
    }
    out
}

/// Render the confusion matrix as a CSV grid, rows true classes.
pub fn confusion_to_csv(matrix: &ConfusionMatrix, labels: &[String]) -> String {
    let mut out = String::from("true\\pred");
    for l in labels {
        let _ = write!(out, ",{l}");
    }
    out.push('\n');
    for (t, label) in labels.iter().enumerate().take(matrix.k()) {
        let _ = write!(out, "{label}");
        for p in 0..matrix.k() {
            let _ = write!(out, ",{}", matrix.cell(t, p));
        }
        out.push('\n');
    }
    out
}

/// Human-readable text report.
pub fn report_to_text(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "samples: {}", report.matrix.total());
    let _ = writeln!(out, "accuracy:          {:.2}%", report.accuracy * 100.0);
    let _ = writeln!(out, "precision (micro): {:.2}%", report.precision_micro * 100.0);
    let _ = writeln!(out, "precision (macro): {:.2}%", report.precision_macro * 100.0);
    let _ = writeln!(out, "recall (micro):    {:.2}%", report.recall_micro * 100.0);
    let _ = writeln!(out, "recall (macro):    {:.2}%", report.recall_macro * 100.0);
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<24} {:>10} {:>10} {:>8}", "class", "precision", "recall", "support");
    for c in &report.per_class {
        let flag = if c.degenerate { " *" } else { "" };
        let _ = writeln!(
            out,
            "{:<24} {:>9.2}% {:>9.2}% {:>8}{}",
            c.label,
            c.precision * 100.0,
            c.recall * 100.0,
            c.support,
            flag
        );
    }
    if report.per_class.iter().any(|c| c.degenerate) {
        let _ = writeln!(out, "* metric pinned to 0 because no samples reached its denominator");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let truths = [0usize, 1, 2, 1, 0];
        let m = confusion(&truths, &truths, 3).unwrap();
        assert_eq!(m.trace(), 5);
        assert_eq!(m.total(), 5);
        let r = metrics(&m).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.precision_macro, 1.0);
        assert_eq!(r.recall_macro, 1.0);
    }

    #[test]
    fn hand_counted_two_class_matrix() {
        let m = confusion(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(m.cell(0, 0), 1);
        assert_eq!(m.cell(0, 1), 1);
        assert_eq!(m.cell(1, 0), 0);
        assert_eq!(m.cell(1, 1), 2);

        let r = metrics(&m).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.per_class[0].precision, 1.0);
        assert_eq!(r.per_class[0].recall, 0.5);
        assert_eq!(r.per_class[1].precision, 2.0 / 3.0);
        assert_eq!(r.per_class[1].recall, 1.0);
        assert_eq!(r.precision_macro, (1.0 + 2.0 / 3.0) / 2.0);
        assert_eq!(r.recall_macro, 0.75);
        assert_eq!(r.precision_micro, 0.75);
        assert_eq!(r.recall_micro, 0.75);
    }

    #[test]
    fn label_out_of_range_reports_sample() {
        match confusion(&[0, 5], &[0, 0], 3) {
            Err(Error::LabelOutOfRange { sample, class, .. }) => {
                assert_eq!(sample, 1);
                assert_eq!(class, 5);
            }
            other => panic!("expected label error, got {other:?}"),
        }
    }

    #[test]
    fn empty_matrix_rejected() {
        let m = ConfusionMatrix::new(3);
        assert!(matches!(metrics(&m), Err(Error::EmptyMatrix)));
    }

    #[test]
    fn zero_prediction_class_pinned_to_zero() {
        // class 2 never predicted and never true
        let m = confusion(&[0, 1], &[0, 1], 3).unwrap();
        let r = metrics(&m).unwrap();
        assert_eq!(r.per_class[2].precision, 0.0);
        assert_eq!(r.per_class[2].recall, 0.0);
        assert!(r.per_class[2].degenerate);
        assert!(!r.per_class[0].degenerate);
    }

    #[test]
    fn constant_predictor_scores_one_over_k() {
        use crate::models::build_custom;
        use crate::visualize::{bytes_to_image, write_image_png, RawBinary};

        let dir = tempfile::tempdir().unwrap();
        for fam in ["a", "b", "c"] {
            let fam_dir = dir.path().join(fam);
            std::fs::create_dir_all(&fam_dir).unwrap();
            for i in 0..2u8 {
                let img = bytes_to_image(
                    &RawBinary::new(vec![fam.as_bytes()[0].wrapping_mul(i + 1); 64], "t"),
                    Some(8),
                )
                .unwrap();
                write_image_png(&img, &fam_dir.join(format!("{i}.png"))).unwrap();
            }
        }
        let corpus = crate::corpus::ingest(dir.path()).unwrap();

        // zeroed head -> all logits equal -> argmax always class 0
        let mut model = build_custom("const", &[], 4, 3, 0.0, 8, 1, 5).unwrap();
        for layer in &mut model.net.layers {
            if let Some((w, b)) = layer.params_mut() {
                w.data_mut().fill(0.0);
                b.data_mut().fill(0.0);
            }
        }
        let report = evaluate(&model, &corpus, EvalScope::All).unwrap();
        assert_eq!(report.matrix.total(), 6);
        assert!((report.accuracy - 1.0 / 3.0).abs() < 1e-12);
        for t in 0..3 {
            assert_eq!(report.matrix.cell(t, 0), 2, "every sample lands on class 0");
        }
    }

    #[test]
    fn random_confusion_matches_counting_oracle() {
        let mut rng = Rng::new(77);
        let k = 25;
        let n = 1500;
        let truths: Vec<usize> = (0..n).map(|_| rng.next_below(k as u64) as usize).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.next_below(k as u64) as usize).collect();
        let m = confusion(&truths, &preds, k).unwrap();
        for t in 0..k {
            for p in 0..k {
                let count = truths
                    .iter()
                    .zip(&preds)
                    .filter(|(tt, pp)| **tt == t && **pp == p)
                    .count() as u64;
                assert_eq!(m.cell(t, p), count);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn micro_identity_exact(
            labels in proptest::collection::vec((0usize..6, 0usize..6), 1..200),
        ) {
            let truths: Vec<usize> = labels.iter().map(|(t, _)| *t).collect();
            let preds: Vec<usize> = labels.iter().map(|(_, p)| *p).collect();
            let m = confusion(&truths, &preds, 6).unwrap();
            let r = metrics(&m).unwrap();
            prop_assert_eq!(r.precision_micro, r.accuracy);
            prop_assert_eq!(r.recall_micro, r.accuracy);
        }

        #[test]
        fn metrics_stay_in_bounds(
            labels in proptest::collection::vec((0usize..4, 0usize..4), 1..120),
        ) {
            let truths: Vec<usize> = labels.iter().map(|(t, _)| *t).collect();
            let preds: Vec<usize> = labels.iter().map(|(_, p)| *p).collect();
            let r = metrics(&confusion(&truths, &preds, 4).unwrap()).unwrap();
            for v in [r.accuracy, r.precision_micro, r.precision_macro, r.recall_micro, r.recall_macro] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let macro_from_classes: f64 =
                r.per_class.iter().map(|c| c.precision).sum::<f64>() / 4.0;
            prop_assert_eq!(macro_from_classes, r.precision_macro);
        }

        #[test]
        fn permutation_equivariance(
            labels in proptest::collection::vec((0usize..5, 0usize..5), 1..120),
            swap_a in 0usize..5,
            swap_b in 0usize..5,
        ) {
            let perm: Vec<usize> = {
                let mut p: Vec<usize> = (0..5).collect();
                p.swap(swap_a, swap_b);
                p
            };
            let truths: Vec<usize> = labels.iter().map(|(t, _)| *t).collect();
            let preds: Vec<usize> = labels.iter().map(|(_, p)| *p).collect();
            let r1 = metrics(&confusion(&truths, &preds, 5).unwrap()).unwrap();

            let truths_p: Vec<usize> = truths.iter().map(|&t| perm[t]).collect();
            let preds_p: Vec<usize> = preds.iter().map(|&p| perm[p]).collect();
            let r2 = metrics(&confusion(&truths_p, &preds_p, 5).unwrap()).unwrap();

            prop_assert_eq!(r1.accuracy, r2.accuracy);
            prop_assert_eq!(r1.precision_micro, r2.precision_micro);
            // macro sums reorder, so compare with a small tolerance
            prop_assert!((r1.precision_macro - r2.precision_macro).abs() < 1e-12);
            prop_assert!((r1.recall_macro - r2.recall_macro).abs() < 1e-12);
            for (c, &pc) in perm.iter().enumerate() {
                prop_assert_eq!(r1.per_class[c].precision, r2.per_class[pc].precision);
                prop_assert_eq!(r1.per_class[c].recall, r2.per_class[pc].recall);
            }
        }
    }
}
