use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};

use super::{confusion_top_pairs, EvaluationReport};
use crate::error::{Error, Result};

/// Confusion matrix as CSV: one row per true label, one column per
/// predicted label.
pub fn confusion_csv(report: &EvaluationReport) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["true\\predicted".to_owned()];
    header.extend(report.labels.iter().cloned());
    writer.write_record(&header)?;
    for (label, row) in report.labels.iter().zip(&report.confusion) {
        let mut record = vec![label.clone()];
        record.extend(row.iter().map(u64::to_string));
        writer.write_record(&record)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::validation(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Row-normalized heatmap, `cell` pixels per matrix cell. Diagonal cells are
/// drawn in blue and errors in red, darker for larger shares of the row.
pub fn heatmap_image(report: &EvaluationReport, cell: u32) -> RgbImage {
    let n = report.labels.len() as u32;
    let cell = cell.max(1);
    let mut img = RgbImage::from_pixel(n * cell, n * cell, Rgb([255, 255, 255]));
    for (i, row) in report.confusion.iter().enumerate() {
        let total: u64 = row.iter().sum();
        if total == 0 {
            continue;
        }
        for (j, &count) in row.iter().enumerate() {
            let share = count as f64 / total as f64;
            let fade = (255.0 * (1.0 - share)).round() as u8;
            let color = if i == j {
                Rgb([fade, fade, 255])
            } else {
                Rgb([255, fade, fade])
            };
            for y in 0..cell {
                for x in 0..cell {
                    img.put_pixel(j as u32 * cell + x, i as u32 * cell + y, color);
                }
            }
        }
    }
    img
}

pub fn write_heatmap_png(report: &EvaluationReport, path: &Path, cell: u32) -> Result<()> {
    heatmap_image(report, cell).save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Human-readable summary: scalar metrics, per-label F1 and the most
/// frequent confusions.
pub fn text_table(report: &EvaluationReport) -> String {
    let mut out = String::new();
    let k = report.k;
    let rows = [
        ("examples", report.n_examples.to_string()),
        ("accuracy", format!("{:.4}", report.accuracy)),
        ("micro F1", format!("{:.4}", report.micro_f1)),
        (
            "macro F1",
            format!("{:.4} (over {} labels)", report.macro_f1, report.macro_over),
        ),
        ("top-k accuracy", format!("{:.4} (k = {k})", report.topk_accuracy)),
        ("top-k F1", format!("{:.4}", report.topk_f1)),
    ];
    for (name, value) in rows {
        let _ = writeln!(out, "{name:<16} {value}");
    }
    let width = report.labels.iter().map(|l| l.chars().count()).max().unwrap_or(5).max(5);
    let _ = writeln!(out, "\n{:<width$}  F1", "label");
    for (label, f1) in &report.per_label_f1 {
        let _ = writeln!(out, "{label:<width$}  {f1:.4}");
    }
    let pairs = confusion_top_pairs(report, 5);
    if !pairs.is_empty() {
        let _ = writeln!(out, "\nmost frequent confusions");
        for (t, p, c) in pairs {
            let _ = writeln!(out, "  {t} -> {p}: {c}");
        }
    }
    out
}
