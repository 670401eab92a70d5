//! Text-space bias: cosine drift between a neutral concept embedding and
//! what remains after removing a sensitive direction.
//!
//! tsb(h_n, h_s) = 1 - cos(h_n, h_n - h_s). Zero means the sensitive
//! embedding contributed nothing the neutral one already carried; larger
//! values mean the concept's representation leans on the sensitive term.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{ModelHandle, Pooling};
use crate::prompts::AttributeSchema;

/// Text-space bias score for one (concept, group) pair of embeddings.
///
/// Both vectors must share a dimension; a zero-norm input or a sensitive
/// embedding equal to the neutral one (which collapses the residual
/// direction) is an error rather than a silent NaN.
pub fn tsb(h_n: &[f64], h_s: &[f64]) -> Result<f64> {
    if h_n.is_empty() || h_s.is_empty() {
        return Err(Error::EmptyInput("embedding".into()));
    }
    if h_n.len() != h_s.len() {
        return Err(Error::ShapeMismatch(format!(
            "embedding dims differ: {} vs {}",
            h_n.len(),
            h_s.len()
        )));
    }
    for v in h_n.iter().chain(h_s) {
        if !v.is_finite() {
            return Err(Error::ShapeMismatch("non-finite embedding value".into()));
        }
    }
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let n_sq = sq(h_n);
    if n_sq == 0.0 {
        return Err(Error::ZeroNormEmbedding);
    }
    let diff: Vec<f64> = h_n.iter().zip(h_s).map(|(a, b)| a - b).collect();
    // h_s all zero leaves the direction equal to h_n; cos is 1 by
    // definition, so short-circuit before sqrt rounding can perturb it.
    if diff == h_n {
        return Ok(0.0);
    }
    let d_sq = sq(&diff);
    if d_sq == 0.0 {
        return Err(Error::DegenerateDirection);
    }
    let dot: f64 = h_n.iter().zip(&diff).map(|(a, b)| a * b).sum();
    Ok(1.0 - dot / (n_sq * d_sq).sqrt())
}

/// A table cell: either a score or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TsbCell {
    Value(f64),
    Error { error: String },
}

impl TsbCell {
    pub fn value(&self) -> Option<f64> {
        match self {
            TsbCell::Value(v) => Some(*v),
            TsbCell::Error { .. } => None,
        }
    }
}

/// One group's cell within a concept row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsbEntry {
    pub group: String,
    pub cell: TsbCell,
}

/// One concept's row: a cell per schema group, in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsbRecord {
    pub concept: String,
    pub attribute: String,
    pub groups: Vec<TsbEntry>,
    pub layer: usize,
    pub pooling: Pooling,
}

/// Score every (concept, group) pair at one embedding layer.
///
/// Concepts are deduplicated and sorted; an empty list yields an empty
/// table. Per-cell failures (missing vocabulary, zero norms, degenerate
/// directions) land in the cell, not the result: one bad pair must not
/// sink the rest of the table. A concept whose own neutral embedding fails
/// gets that error in every cell of its row.
pub fn tsb_table(
    handle: &ModelHandle,
    concepts: &[String],
    schema: &AttributeSchema,
    layer: usize,
) -> Result<Vec<TsbRecord>> {
    let mut names: Vec<String> = concepts.to_vec();
    names.sort();
    names.dedup();

    let mut group_embeddings = Vec::new();
    for group in schema.groups() {
        group_embeddings.push((group.clone(), handle.embed_text(group, layer)));
    }

    let mut records = Vec::new();
    for concept in names {
        let neutral = handle.embed_text(&concept, layer);
        let mut groups = Vec::new();
        let mut pooling = None;
        for (group, sensitive) in &group_embeddings {
            let cell = match (&neutral, sensitive) {
                (Ok(h_n), Ok(h_s)) => {
                    pooling = Some(h_n.pooling);
                    match tsb(h_n.values(), h_s.values()) {
                        Ok(v) => TsbCell::Value(v),
                        Err(e) => TsbCell::Error { error: e.to_string() },
                    }
                }
                (Err(e), _) => TsbCell::Error { error: e.to_string() },
                (_, Err(e)) => TsbCell::Error { error: e.to_string() },
            };
            groups.push(TsbEntry { group: group.clone(), cell });
        }
        records.push(TsbRecord {
            concept,
            attribute: schema.attribute().to_string(),
            groups,
            layer,
            pooling: pooling.unwrap_or(Pooling::Mean),
        });
    }
    Ok(records)
}

/// Render the table as CSV: one row per concept, one column per group.
/// Failed cells print as "error"; scores print with full float precision.
pub fn render_csv(records: &[TsbRecord]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["concept".to_string(), "attribute".to_string()];
    if let Some(first) = records.first() {
        for entry in &first.groups {
            header.push(format!("tsb_{}", entry.group));
        }
        header.push("layer".into());
        header.push("pooling".into());
    }
    writer.write_record(&header)?;
    for record in records {
        let mut row = vec![record.concept.clone(), record.attribute.clone()];
        for entry in &record.groups {
            row.push(match &entry.cell {
                TsbCell::Value(v) => format!("{v}"),
                TsbCell::Error { .. } => "error".to_string(),
            });
        }
        row.push(record.layer.to_string());
        row.push(record.pooling.to_string());
        writer.write_record(&row)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

const CHART_GROUP_COLORS: [[u8; 3]; 6] = [
    [66, 133, 244],
    [219, 68, 55],
    [244, 180, 0],
    [15, 157, 88],
    [171, 71, 188],
    [0, 172, 193],
];

/// Render the table as a grouped bar chart. Bars grow upward from a
/// baseline; negative scores (possible when the residual flips direction)
/// grow downward. Failed cells leave a gap.
pub fn render_chart(records: &[TsbRecord]) -> Result<RgbImage> {
    if records.is_empty() {
        return Err(Error::EmptyInput("tsb records".into()));
    }
    let group_count = records[0].groups.len().max(1);
    let bar_w: u32 = 14;
    let gap: u32 = 10;
    let cluster_w = bar_w * group_count as u32 + gap;
    let margin: u32 = 20;
    let width = margin * 2 + cluster_w * records.len() as u32;
    let height: u32 = 220;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));

    let max_abs = records
        .iter()
        .flat_map(|r| r.groups.iter())
        .filter_map(|e| e.cell.value())
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1e-9);
    let half = (height / 2 - margin) as f64;
    let baseline = height / 2;

    for x in margin..width - margin {
        img.put_pixel(x, baseline, Rgb([0, 0, 0]));
    }
    for (ri, record) in records.iter().enumerate() {
        for (gi, entry) in record.groups.iter().enumerate() {
            let Some(value) = entry.cell.value() else { continue };
            let color = Rgb(CHART_GROUP_COLORS[gi % CHART_GROUP_COLORS.len()]);
            let x0 = margin + cluster_w * ri as u32 + bar_w * gi as u32;
            let extent = ((value / max_abs) * half).round() as i64;
            let (y0, y1) = if extent >= 0 {
                (baseline as i64 - extent, baseline as i64 - 1)
            } else {
                (baseline as i64 + 1, baseline as i64 - extent)
            };
            for y in y0.max(0)..=y1.min(height as i64 - 1) {
                for x in x0..x0 + bar_w - 2 {
                    img.put_pixel(x, y as u32, color);
                }
            }
        }
    }
    Ok(img)
}
