//! Confusion matrices, precision/recall/F1, fold aggregation and report files.

use std::fmt;
use std::path::{Path, PathBuf};

use image::{ImageEncoder, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn add(&self, other: &ConfusionMatrix) -> ConfusionMatrix {
        let counts = self
            .counts
            .iter()
            .zip(&other.counts)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        ConfusionMatrix { counts }
    }

    /// Each row scaled to percentages of that row's total (0 for empty rows).
    pub fn row_percentages(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let n: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 })
                    .collect()
            })
            .collect()
    }
}

pub fn confusion(truth: &[usize], predicted: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(classes);
    for (&t, &p) in truth.iter().zip(predicted) {
        if let Some(&bad) = [t, p].iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfVocabulary { label: bad, classes });
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<u64>,
    pub precision_macro: f64,
    pub precision_weighted: f64,
    pub recall_macro: f64,
    pub recall_weighted: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest precision, recall and F1 per class. Empty denominators give 0
/// and such classes still count in the macro means.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let k = cm.classes();
    let mut precision = Vec::with_capacity(k);
    let mut recall = Vec::with_capacity(k);
    let mut f1 = Vec::with_capacity(k);
    let mut support = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.counts[c][c];
        let predicted: u64 = (0..k).map(|r| cm.counts[r][c]).sum();
        let actual: u64 = cm.counts[c].iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        precision.push(p);
        recall.push(r);
        f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
        support.push(actual);
    }
    let macro_mean = |v: &[f64]| v.iter().sum::<f64>() / k as f64;
    let weighted = |v: &[f64]| v.iter().zip(&support).map(|(x, &s)| x * s as f64).sum::<f64>() / total as f64;
    Ok(MetricReport {
        accuracy: ratio(cm.trace(), total),
        precision_macro: macro_mean(&precision),
        precision_weighted: weighted(&precision),
        recall_macro: macro_mean(&recall),
        recall_weighted: weighted(&recall),
        f1_macro: macro_mean(&f1),
        f1_weighted: weighted(&f1),
        precision,
        recall,
        f1,
        support,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

pub const METRIC_NAMES: [&str; 7] = [
    "accuracy",
    "precision_macro",
    "precision_weighted",
    "recall_macro",
    "recall_weighted",
    "f1_macro",
    "f1_weighted",
];

impl MetricReport {
    /// Summary metrics in [`METRIC_NAMES`] order.
    pub fn summary(&self) -> [f64; 7] {
        [
            self.accuracy,
            self.precision_macro,
            self.precision_weighted,
            self.recall_macro,
            self.recall_weighted,
            self.f1_macro,
            self.f1_weighted,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub folds: usize,
    pub accuracy: MeanStd,
    pub precision_macro: MeanStd,
    pub precision_weighted: MeanStd,
    pub recall_macro: MeanStd,
    pub recall_weighted: MeanStd,
    pub f1_macro: MeanStd,
    pub f1_weighted: MeanStd,
}

impl AggregateReport {
    pub fn summary(&self) -> [MeanStd; 7] {
        [
            self.accuracy,
            self.precision_macro,
            self.precision_weighted,
            self.recall_macro,
            self.recall_weighted,
            self.f1_macro,
            self.f1_weighted,
        ]
    }
}

pub fn aggregate(reports: &[MetricReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::Validation("cannot aggregate zero reports".into()));
    }
    let column = |i: usize| MeanStd::of(&reports.iter().map(|r| r.summary()[i]).collect::<Vec<_>>());
    Ok(AggregateReport {
        folds: reports.len(),
        accuracy: column(0),
        precision_macro: column(1),
        precision_weighted: column(2),
        recall_macro: column(3),
        recall_weighted: column(4),
        f1_macro: column(5),
        f1_weighted: column(6),
    })
}

pub const CSV_HEADER: &str =
    "descriptors,accuracy,precision_macro,precision_weighted,recall_macro,recall_weighted,f1_macro,f1_weighted";

/// Header plus one row of `mean ± std` cells.
pub fn metrics_csv(descriptors: &str, agg: &AggregateReport) -> String {
    let cells: Vec<String> = agg.summary().iter().map(|m| m.to_string()).collect();
    format!("{CSV_HEADER}\n{},{}\n", descriptors.replace(',', ";"), cells.join(","))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRecord {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub row_percent: Vec<Vec<f64>>,
}

/// 3×5 glyphs for the characters the heatmap prints.
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        _ => [0; 5],
    }
}

const CELL: u32 = 56;
const SCALE: u32 = 2;

fn draw_text(img: &mut RgbImage, text: &str, cx: u32, cy: u32, color: Rgb<u8>) {
    let advance = 4 * SCALE;
    let width = text.len() as u32 * advance - SCALE;
    let x0 = cx - width / 2;
    let y0 = cy - 5 * SCALE / 2;
    for (i, ch) in text.chars().enumerate() {
        for (row, bits) in glyph(ch).iter().enumerate() {
            for col in 0..3u32 {
                if bits & (0b100 >> col) == 0 {
                    continue;
                }
                for dy in 0..SCALE {
                    for dx in 0..SCALE {
                        let x = x0 + i as u32 * advance + col * SCALE + dx;
                        let y = y0 + row as u32 * SCALE + dy;
                        img.put_pixel(x, y, color);
                    }
                }
            }
        }
    }
}

/// Row-normalised heatmap with each cell's percentage printed in it.
pub fn heatmap_png(cm: &ConfusionMatrix) -> Result<Vec<u8>> {
    let k = cm.classes() as u32;
    let pct = cm.row_percentages();
    let mut img = RgbImage::new(k * CELL, k * CELL);
    for r in 0..k {
        for c in 0..k {
            let v = pct[r as usize][c as usize];
            let t = v / 100.0;
            let shade = |lo: f64, hi: f64| (lo + (hi - lo) * t).round() as u8;
            let fill = Rgb([shade(247.0, 8.0), shade(251.0, 48.0), shade(255.0, 107.0)]);
            for y in 0..CELL {
                for x in 0..CELL {
                    let edge = x == 0 || y == 0;
                    img.put_pixel(c * CELL + x, r * CELL + y, if edge { Rgb([200, 200, 200]) } else { fill });
                }
            }
            let ink = if t > 0.5 { Rgb([255, 255, 255]) } else { Rgb([0, 0, 0]) };
            draw_text(&mut img, &format!("{v:.1}"), c * CELL + CELL / 2, r * CELL + CELL / 2, ink);
        }
    }
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::Validation(format!("png encoding failed: {e}")))?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub metrics_csv: PathBuf,
    pub heatmap: PathBuf,
    pub counts: PathBuf,
}

/// Writes `metrics.csv`, `confusion.png` and `confusion.json` to `out_dir`,
/// each by atomic rename.
pub fn emit_report(
    reports: &[MetricReport],
    cm: &ConfusionMatrix,
    classes: &[String],
    descriptors: &str,
    out_dir: &Path,
) -> Result<ReportFiles> {
    store::ensure_dir(out_dir)?;
    let files = ReportFiles {
        metrics_csv: out_dir.join("metrics.csv"),
        heatmap: out_dir.join("confusion.png"),
        counts: out_dir.join("confusion.json"),
    };
    let agg = aggregate(reports)?;
    store::atomic_write(&files.metrics_csv, metrics_csv(descriptors, &agg).as_bytes())?;
    store::atomic_write(&files.heatmap, &heatmap_png(cm)?)?;
    store::write_json(
        &files.counts,
        &ConfusionRecord {
            classes: classes.to_vec(),
            counts: cm.counts.clone(),
            row_percent: cm.row_percentages(),
        },
    )?;
    Ok(files)
}
