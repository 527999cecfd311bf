//! Confusion matrices and per-class / macro-averaged classification scores.
//!
//! Matches the report layout used throughout the result tables: per-class
//! precision, recall, F1, a macro-average row, and overall accuracy. Any
//! 0/0 ratio is defined as 0.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("label sequences differ in length: {truth} vs {pred}")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("label {value} out of range for {k} classes")]
    LabelOutOfRange { value: usize, k: usize },
    #[error("confusion matrix has no samples")]
    EmptyMatrix,
    #[error("class count must be positive")]
    ZeroClasses,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Row-index = true class, column-index = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub k: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(MetricsError::ZeroClasses);
        }
        Ok(ConfusionMatrix {
            k,
            counts: vec![vec![0; k]; k],
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.counts[i][i]).sum()
    }

    /// Row sum: how many samples truly belong to `class`.
    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }
}

/// Count (true, predicted) pairs into a k x k matrix.
pub fn confusion(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch {
            truth: y_true.len(),
            pred: y_pred.len(),
        });
    }
    let mut cm = ConfusionMatrix::new(k)?;
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= k {
            return Err(MetricsError::LabelOutOfRange { value: t, k });
        }
        if p >= k {
            return Err(MetricsError::LabelOutOfRange { value: p, k });
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Identifies what an [`EvalReport`] was computed from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub task: String,
    pub config_id: String,
    pub split_seed: u64,
}

/// Per-class and macro-averaged scores plus the underlying matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub per_class: Vec<ClassScores>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Derive all scores from a confusion matrix.
///
/// precision_c = TP/(TP+FP), recall_c = TP/(TP+FN), F1 = harmonic mean,
/// macro = unweighted class mean, accuracy = trace/total; 0/0 ratios are 0.
pub fn scores(cm: &ConfusionMatrix, meta: ReportMeta) -> Result<EvalReport> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let mut per_class = Vec::with_capacity(cm.k);
    for c in 0..cm.k {
        let tp = cm.counts[c][c];
        let fp: u64 = (0..cm.k).filter(|&r| r != c).map(|r| cm.counts[r][c]).sum();
        let fn_: u64 = (0..cm.k).filter(|&p| p != c).map(|p| cm.counts[c][p]).sum();
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassScores {
            precision,
            recall,
            f1,
            support: cm.support(c),
        });
    }
    let kf = cm.k as f64;
    Ok(EvalReport {
        meta,
        macro_precision: per_class.iter().map(|c| c.precision).sum::<f64>() / kf,
        macro_recall: per_class.iter().map(|c| c.recall).sum::<f64>() / kf,
        macro_f1: per_class.iter().map(|c| c.f1).sum::<f64>() / kf,
        accuracy: ratio(cm.trace(), total),
        per_class,
        confusion: cm.clone(),
    })
}

/// Round to 2 decimals for presentation; internal values stay full precision.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Write the report as CSV: one row per class plus a macro row.
pub fn write_report_csv(
    report: &EvalReport,
    class_names: &[&str],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("class,precision,recall,f1,support\n");
    for (c, s) in report.per_class.iter().enumerate() {
        let name = class_names.get(c).copied().unwrap_or("?");
        out.push_str(&format!(
            "{name},{:.6},{:.6},{:.6},{}\n",
            s.precision, s.recall, s.f1, s.support
        ));
    }
    out.push_str(&format!(
        "macro,{:.6},{:.6},{:.6},{}\n",
        report.macro_precision,
        report.macro_recall,
        report.macro_f1,
        report.confusion.total()
    ));
    out.push_str(&format!("accuracy,{:.6},,,\n", report.accuracy));
    std::fs::write(path, out).map_err(|e| MetricsError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Write the full report as JSON.
pub fn write_report_json(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, json).map_err(|e| MetricsError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

/// Render the matrix as a heatmap PNG with count annotations.
pub fn render_confusion_png(cm: &ConfusionMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let cell = 64u32;
    let size = cell * cm.k as u32;
    let max = cm.counts.iter().flatten().copied().max().unwrap_or(1).max(1) as f64;
    let mut img = image::RgbImage::new(size, size);
    for r in 0..cm.k {
        for c in 0..cm.k {
            let v = cm.counts[r][c] as f64 / max;
            // dark blue (low) to warm yellow (high)
            let rgb = [
                (40.0 + 215.0 * v) as u8,
                (44.0 + 180.0 * v) as u8,
                (90.0 + 40.0 * (1.0 - v)) as u8,
            ];
            for y in 0..cell {
                for x in 0..cell {
                    let edge = x == 0 || y == 0 || x == cell - 1 || y == cell - 1;
                    let px = if edge { [255, 255, 255] } else { rgb };
                    img.put_pixel(c as u32 * cell + x, r as u32 * cell + y, image::Rgb(px));
                }
            }
            draw_count(&mut img, cm.counts[r][c], c as u32 * cell, r as u32 * cell, cell);
        }
    }
    img.save(path).map_err(|e| MetricsError::Io {
        path: path.display().to_string(),
        source: std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
    })
}

fn draw_count(img: &mut image::RgbImage, value: u64, x0: u32, y0: u32, cell: u32) {
    let text = value.to_string();
    let scale = 3u32;
    let glyph_w = 4 * scale; // 3 px + 1 gap
    let total_w = glyph_w * text.len() as u32;
    let start_x = x0 + cell.saturating_sub(total_w) / 2;
    let start_y = y0 + cell.saturating_sub(5 * scale) / 2;
    for (i, ch) in text.chars().enumerate() {
        let d = ch.to_digit(10).unwrap_or(0) as usize;
        for (row, bits) in DIGITS[d].iter().enumerate() {
            for col in 0..3 {
                if bits & (1 << (2 - col)) != 0 {
                    for dy in 0..scale {
                        for dx in 0..scale {
                            let px = start_x + i as u32 * glyph_w + col * scale + dx;
                            let py = start_y + row as u32 * scale + dy;
                            if px < img.width() && py < img.height() {
                                img.put_pixel(px, py, image::Rgb([255, 255, 255]));
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent brute-force oracle: recount with nested loops and apply
    /// the scoring formulas directly.
    fn oracle_scores(y_true: &[usize], y_pred: &[usize], k: usize) -> (Vec<Vec<u64>>, Vec<[f64; 3]>, f64) {
        let mut counts = vec![vec![0u64; k]; k];
        for i in 0..k {
            for j in 0..k {
                let mut n = 0;
                for s in 0..y_true.len() {
                    if y_true[s] == i && y_pred[s] == j {
                        n += 1;
                    }
                }
                counts[i][j] = n;
            }
        }
        let mut per = Vec::new();
        for c in 0..k {
            let tp = counts[c][c] as f64;
            let mut fp = 0.0;
            let mut fn_ = 0.0;
            for o in 0..k {
                if o != c {
                    fp += counts[o][c] as f64;
                    fn_ += counts[c][o] as f64;
                }
            }
            let p = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
            let r = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            per.push([p, r, f]);
        }
        let correct = y_true
            .iter()
            .zip(y_pred)
            .filter(|(t, p)| t == p)
            .count() as f64;
        (counts, per, correct / y_true.len() as f64)
    }

    #[test]
    fn perfect_prediction_is_identity_diagonal() {
        let cm = confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        let rep = scores(&cm, ReportMeta::default()).unwrap();
        assert_eq!(rep.accuracy, 1.0);
        assert_eq!(rep.macro_f1, 1.0);
        assert!(rep.per_class.iter().all(|c| c.precision == 1.0));
    }

    #[test]
    fn hand_enumerated_two_class_matrix() {
        let cm = confusion(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 1]]);
    }

    #[test]
    fn errors_on_mismatch_and_out_of_range() {
        assert!(matches!(
            confusion(&[0, 1], &[0], 2),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(matches!(
            confusion(&[0, 2], &[0, 1], 2),
            Err(MetricsError::LabelOutOfRange { value: 2, k: 2 })
        ));
        let empty = ConfusionMatrix::new(2).unwrap();
        assert!(matches!(
            scores(&empty, ReportMeta::default()),
            Err(MetricsError::EmptyMatrix)
        ));
    }

    #[test]
    fn random_instances_match_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let k = rng.gen_range(2..=5);
            let n = rng.gen_range(1..=60);
            let y_true: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let y_pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let cm = confusion(&y_true, &y_pred, k).unwrap();
            let rep = scores(&cm, ReportMeta::default()).unwrap();
            let (counts, per, acc) = oracle_scores(&y_true, &y_pred, k);
            assert_eq!(cm.counts, counts);
            assert_eq!(rep.accuracy, acc);
            for (c, exp) in per.iter().enumerate() {
                assert_eq!(rep.per_class[c].precision, exp[0]);
                assert_eq!(rep.per_class[c].recall, exp[1]);
                assert_eq!(rep.per_class[c].f1, exp[2]);
            }
            let macro_f1: f64 = per.iter().map(|p| p[2]).sum::<f64>() / k as f64;
            assert!((rep.macro_f1 - macro_f1).abs() < 1e-15);
        }
    }

    #[test]
    fn grade_test_matrix_rounds_to_published_scores() {
        // 122-sample test set: 3 LGG -> HGG and 1 HGG -> LGG errors.
        let cm = ConfusionMatrix {
            k: 2,
            counts: vec![vec![58, 3], vec![1, 60]],
        };
        assert_eq!(cm.total(), 122);
        let rep = scores(&cm, ReportMeta::default()).unwrap();
        assert_eq!(round2(rep.accuracy), 0.97);
        assert_eq!(round2(rep.macro_f1), 0.97);
        assert_eq!(round2(rep.per_class[0].precision), 0.98);
        assert_eq!(round2(rep.per_class[0].recall), 0.95);
    }

    #[test]
    fn joint_permutation_leaves_matrix_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 50;
        let y_true: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let y_pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let cm = confusion(&y_true, &y_pred, 3).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let pt: Vec<usize> = order.iter().map(|&i| y_true[i]).collect();
        let pp: Vec<usize> = order.iter().map(|&i| y_pred[i]).collect();
        assert_eq!(confusion(&pt, &pp, 3).unwrap(), cm);
    }

    #[test]
    fn macro_f1_invariant_under_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let n = 80;
        let y_true: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let y_pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let rep = scores(&confusion(&y_true, &y_pred, 3).unwrap(), ReportMeta::default()).unwrap();
        let perm = [2usize, 0, 1];
        let rt: Vec<usize> = y_true.iter().map(|&c| perm[c]).collect();
        let rp: Vec<usize> = y_pred.iter().map(|&c| perm[c]).collect();
        let rep2 = scores(&confusion(&rt, &rp, 3).unwrap(), ReportMeta::default()).unwrap();
        assert!((rep.macro_f1 - rep2.macro_f1).abs() < 1e-15);
        assert!((rep.accuracy - rep2.accuracy).abs() < 1e-15);
    }

    #[test]
    fn absent_class_contributes_zero() {
        // class 2 never appears in truth or prediction
        let rep = scores(&confusion(&[0, 1], &[0, 1], 3).unwrap(), ReportMeta::default()).unwrap();
        assert_eq!(rep.per_class[2].precision, 0.0);
        assert_eq!(rep.per_class[2].recall, 0.0);
        assert_eq!(rep.per_class[2].f1, 0.0);
    }

    #[test]
    fn accuracy_is_trace_over_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let k = rng.gen_range(2..=4);
            let n = rng.gen_range(1..=40);
            let y_true: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let y_pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let cm = confusion(&y_true, &y_pred, k).unwrap();
            let rep = scores(&cm, ReportMeta::default()).unwrap();
            assert_eq!(rep.accuracy, cm.trace() as f64 / cm.total() as f64);
        }
    }

    #[test]
    fn report_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cm = confusion(&[0, 1, 1, 0], &[0, 1, 0, 0], 2).unwrap();
        let rep = scores(
            &cm,
            ReportMeta {
                task: "grade".into(),
                config_id: "default".into(),
                split_seed: 7,
            },
        )
        .unwrap();
        let csv_path = dir.path().join("report.csv");
        let json_path = dir.path().join("report.json");
        let png_path = dir.path().join("confusion.png");
        write_report_csv(&rep, &["LGG", "HGG"], &csv_path).unwrap();
        write_report_json(&rep, &json_path).unwrap();
        render_confusion_png(&cm, &png_path).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert!(text.starts_with("class,precision,recall,f1,support"));
        assert!(text.contains("LGG"));
        let parsed: EvalReport =
            serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        assert_eq!(parsed.confusion, rep.confusion);
        assert!(png_path.metadata().unwrap().len() > 0);
    }
}
