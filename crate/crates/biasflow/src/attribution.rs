//! Multi-layer gradient-weighted token attribution and key-token selection.
//!
//! For each configured layer, channel weights are the global average pool of
//! the answer-logit gradients over sequence positions; the layer attribution
//! is the ReLU of the weight-summed feature maps. Layer attributions are
//! averaged, min-max normalized over the image-token span, and thresholded
//! (strictly) to pick the key-token set.

use image::{GrayImage, RgbImage};
use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::gateway::{TraceBundle, VisualSpan};

/// Attribution settings: which layers to average and how to threshold.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttributionConfig {
    /// Layer indices to aggregate, in request order.
    pub layers: Vec<usize>,
    /// Key-token threshold, strict. In [0, 1] when `normalize` is set.
    pub tau: f64,
    /// Min-max normalize averaged scores over the span before thresholding.
    pub normalize: bool,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self::for_7b_class()
    }
}

impl AttributionConfig {
    /// Intermediate layers 10-12, the usual pick for 7B-class models.
    pub fn for_7b_class() -> Self {
        Self { layers: vec![10, 11, 12], tau: 0.5, normalize: true }
    }

    /// Intermediate layers 10-14, the usual pick for 13B-class models.
    pub fn for_13b_class() -> Self {
        Self { layers: vec![10, 11, 12, 13, 14], tau: 0.5, normalize: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidAttributionConfig("empty layer list".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &layer in &self.layers {
            if !seen.insert(layer) {
                return Err(Error::InvalidAttributionConfig(format!(
                    "duplicate layer {layer}"
                )));
            }
        }
        if !self.tau.is_finite() {
            return Err(Error::InvalidAttributionConfig("tau is not finite".into()));
        }
        if self.normalize && !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidAttributionConfig(format!(
                "tau {} outside [0, 1] in normalized mode",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Output of [`attribute`]: scores per layer and averaged, the selected key
/// tokens (sequence positions), and the degenerate-span flag.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionResult {
    /// Per-layer scores over the span, one vector per configured layer.
    pub per_layer: Vec<Vec<f64>>,
    /// Arithmetic mean of the per-layer vectors.
    pub averaged: Vec<f64>,
    /// Min-max scaled `averaged`, present in normalized mode.
    pub normalized: Option<Vec<f64>>,
    /// Selected key tokens as sequence positions, ascending.
    pub key_set: Vec<usize>,
    /// True when every averaged score ties, forcing the full-span fallback.
    pub degenerate: bool,
}

/// Channel weights: the mean of each channel's gradients over positions.
pub fn channel_weights(gradients: &Array2<f64>) -> Result<Vec<f64>> {
    if gradients.ncols() == 0 {
        return Err(Error::EmptyInput("gradient positions".into()));
    }
    Ok(gradients
        .mean_axis(Axis(1))
        .expect("non-empty positions axis")
        .to_vec())
}

/// Per-position attribution: ReLU of the weight-summed feature channels.
pub fn layer_attribution(features: &Array2<f64>, weights: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != features.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} channels",
            weights.len(),
            features.nrows()
        )));
    }
    Ok((0..features.ncols())
        .map(|position| {
            let weighted: f64 = weights
                .iter()
                .zip(features.column(position))
                .map(|(alpha, value)| alpha * value)
                .sum();
            weighted.max(0.0)
        })
        .collect())
}

/// Elementwise arithmetic mean across layers.
pub fn aggregate_layers(per_layer: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = per_layer
        .first()
        .ok_or_else(|| Error::EmptyInput("layer attribution list".into()))?;
    let len = first.len();
    for (index, layer) in per_layer.iter().enumerate() {
        if layer.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "layer vector {index} has length {} but the first has {len}",
                layer.len()
            )));
        }
    }
    let count = per_layer.len() as f64;
    Ok((0..len)
        .map(|i| per_layer.iter().map(|layer| layer[i]).sum::<f64>() / count)
        .collect())
}

/// Key-token selection result; positions are sequence indices.
#[derive(Debug, Clone, PartialEq)]
pub struct KeySelection {
    pub key_set: Vec<usize>,
    pub normalized: Option<Vec<f64>>,
    pub degenerate: bool,
}

/// Threshold averaged scores over the span.
///
/// Normalized mode min-max scales first; selection is strict (`> tau`), so an
/// extreme threshold can select nothing. When every score ties the span has
/// no usable ordering: the full span is selected and flagged degenerate,
/// which lets the pruned round degrade to the full round instead of running
/// on an empty visual input.
pub fn select_key_tokens(
    averaged: &[f64],
    span: &VisualSpan,
    config: &AttributionConfig,
) -> Result<KeySelection> {
    config.validate()?;
    if averaged.len() != span.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores for a span of {} tokens",
            averaged.len(),
            span.len()
        )));
    }
    let min = averaged.iter().copied().fold(f64::INFINITY, f64::min);
    let max = averaged.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        let normalized = config.normalize.then(|| vec![0.0; averaged.len()]);
        return Ok(KeySelection {
            key_set: span.indices().to_vec(),
            normalized,
            degenerate: true,
        });
    }
    let scores: Vec<f64> = if config.normalize {
        averaged.iter().map(|v| (v - min) / (max - min)).collect()
    } else {
        averaged.to_vec()
    };
    let key_set = span
        .indices()
        .iter()
        .zip(&scores)
        .filter(|(_, &score)| score > config.tau)
        .map(|(&index, _)| index)
        .collect();
    Ok(KeySelection {
        key_set,
        normalized: config.normalize.then_some(scores),
        degenerate: false,
    })
}

/// Full pipeline over a captured trace: weights, per-layer scores restricted
/// to the image-token span, layer average, and key-token selection.
pub fn attribute(bundle: &TraceBundle, config: &AttributionConfig) -> Result<AttributionResult> {
    config.validate()?;
    let span = bundle.span();
    let mut per_layer = Vec::with_capacity(config.layers.len());
    for &layer in &config.layers {
        let trace = bundle
            .layer(layer)
            .ok_or(Error::MissingLayerTrace(layer))?;
        let weights = channel_weights(trace.gradients())?;
        let full = layer_attribution(trace.features(), &weights)?;
        per_layer.push(span.indices().iter().map(|&i| full[i]).collect());
    }
    let averaged = aggregate_layers(&per_layer)?;
    let selection = select_key_tokens(&averaged, span, config)?;
    Ok(AttributionResult {
        per_layer,
        averaged,
        normalized: selection.normalized,
        key_set: selection.key_set,
        degenerate: selection.degenerate,
    })
}

/// Row-major 2-D attribution map with rendering helpers.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    rows: usize,
    cols: usize,
    /// Raw scores, row-major.
    values: Vec<f64>,
}

impl Heatmap {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    /// Min-max scaled copy for rendering; all-equal maps scale to zero.
    pub fn normalized(&self) -> Vec<f64> {
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == min {
            return vec![0.0; self.values.len()];
        }
        self.values.iter().map(|v| (v - min) / (max - min)).collect()
    }

    /// 8-bit grayscale raster, each cell `cell_px` pixels square.
    pub fn to_gray_image(&self, cell_px: u32) -> GrayImage {
        let norm = self.normalized();
        let cell = cell_px.max(1);
        GrayImage::from_fn(
            self.cols as u32 * cell,
            self.rows as u32 * cell,
            |x, y| {
                let col = (x / cell) as usize;
                let row = (y / cell) as usize;
                image::Luma([(norm[row * self.cols + col] * 255.0).round() as u8])
            },
        )
    }

    /// Colormapped raster (blue-to-red), each cell `cell_px` pixels square.
    pub fn to_color_image(&self, cell_px: u32) -> RgbImage {
        let norm = self.normalized();
        let cell = cell_px.max(1);
        RgbImage::from_fn(
            self.cols as u32 * cell,
            self.rows as u32 * cell,
            |x, y| {
                let col = (x / cell) as usize;
                let row = (y / cell) as usize;
                image::Rgb(heat_color(norm[row * self.cols + col]))
            },
        )
    }
}

/// Blue (cold) through green to red (hot).
fn heat_color(value: f64) -> [u8; 3] {
    let v = value.clamp(0.0, 1.0);
    let r = (v * 2.0 - 1.0).clamp(0.0, 1.0);
    let b = (1.0 - v * 2.0).clamp(0.0, 1.0);
    let g = 1.0 - r - b;
    [
        (r * 255.0).round() as u8,
        (g * 255.0).round() as u8,
        (b * 255.0).round() as u8,
    ]
}

/// Reshape averaged scores into a 2-D map. Without an adapter grid the count
/// must be a perfect square.
pub fn attribution_heatmap(averaged: &[f64], grid: Option<(usize, usize)>) -> Result<Heatmap> {
    if averaged.is_empty() {
        return Err(Error::EmptyInput("heatmap scores".into()));
    }
    let (rows, cols) = match grid {
        Some((rows, cols)) => {
            if rows * cols != averaged.len() {
                return Err(Error::Heatmap(format!(
                    "grid {rows}x{cols} cannot hold {} scores",
                    averaged.len()
                )));
            }
            (rows, cols)
        }
        None => {
            let side = (averaged.len() as f64).sqrt().round() as usize;
            if side * side != averaged.len() {
                return Err(Error::Heatmap(format!(
                    "grid required: {} scores are not a perfect square",
                    averaged.len()
                )));
            }
            (side, side)
        }
    };
    Ok(Heatmap { rows, cols, values: averaged.to_vec() })
}
