//! Value types shared by every model adapter.
//!
//! These types define the data contract between instrumented models and the
//! analysis pipeline: where the image tokens sit in the input sequence, what a
//! masked query looks like, and what a traced forward/backward pass returns.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel-space rectangle, `(x, y)` top-left corner plus width and height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// Reference to an input image: a stable id, a path the adapter can resolve,
/// and an optional person box the adapter should crop to before encoding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub path: String,
    pub bbox: Option<PixelBox>,
}

impl ImageRef {
    pub fn new(id: impl Into<String>, path: impl Into<String>) -> Self {
        Self { id: id.into(), path: path.into(), bbox: None }
    }

    pub fn with_bbox(mut self, bbox: PixelBox) -> Self {
        self.bbox = Some(bbox);
        self
    }
}

/// Position indices of the image tokens inside the model input sequence.
///
/// Indices are strictly increasing and the span is never empty; both
/// invariants are enforced at construction so downstream code can index
/// trace arrays without re-checking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct VisualSpan {
    indices: Vec<usize>,
}

impl VisualSpan {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyInput("visual span".into()));
        }
        if !indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidMask(
                "span indices must be strictly increasing".into(),
            ));
        }
        Ok(Self { indices })
    }

    /// Span covering `start..start + len`.
    pub fn contiguous(start: usize, len: usize) -> Result<Self> {
        Self::new((start..start + len).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction forbids empty spans
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    /// One past the largest sequence position in the span.
    pub fn end(&self) -> usize {
        self.indices.last().copied().unwrap_or(0) + 1
    }

    /// Mask that keeps every token in the span.
    pub fn full_mask(&self) -> KeepMask {
        KeepMask { kept: self.indices.clone() }
    }
}

impl TryFrom<Vec<usize>> for VisualSpan {
    type Error = Error;

    fn try_from(indices: Vec<usize>) -> Result<Self> {
        Self::new(indices)
    }
}

impl From<VisualSpan> for Vec<usize> {
    fn from(span: VisualSpan) -> Self {
        span.indices
    }
}

/// Subset of image-token positions to keep during a pruned query.
///
/// The kept set is sorted, deduplicated, and checked against the span it was
/// built for. An empty mask is valid and means "drop every image token".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeepMask {
    kept: Vec<usize>,
}

impl KeepMask {
    pub fn new(mut kept: Vec<usize>, span: &VisualSpan) -> Result<Self> {
        kept.sort_unstable();
        kept.dedup();
        for &index in &kept {
            if !span.contains(index) {
                return Err(Error::InvalidMask(format!(
                    "position {index} is outside the visual span"
                )));
            }
        }
        Ok(Self { kept })
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    /// True when the mask keeps the whole span.
    pub fn is_full(&self, span: &VisualSpan) -> bool {
        self.kept == span.indices()
    }

    /// Re-check membership against a (possibly different) span.
    pub fn validate_against(&self, span: &VisualSpan) -> Result<()> {
        for &index in &self.kept {
            if !span.contains(index) {
                return Err(Error::InvalidMask(format!(
                    "position {index} is outside the visual span"
                )));
            }
        }
        Ok(())
    }
}

/// How an adapter realizes token pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruningSemantics {
    /// Dropped tokens are removed from the input sequence.
    Removed,
    /// Dropped tokens stay in place but are attention-masked out.
    AttentionMasked,
}

/// Decode settings the adapter used for a query, echoed back for transcripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeMeta {
    pub greedy: bool,
    pub temperature: f64,
    pub pruning: PruningSemantics,
}

impl Default for DecodeMeta {
    fn default() -> Self {
        Self { greedy: true, temperature: 0.0, pruning: PruningSemantics::Removed }
    }
}

/// One model reply: decoded text plus the answer-step logits for the words
/// the polarity lexicon cares about.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub text: String,
    /// Logit per lexicon word at the first answer step, keyed by word.
    pub answer_logits: BTreeMap<String, f64>,
    pub meta: DecodeMeta,
}

impl Response {
    pub fn logit(&self, word: &str) -> Result<f64> {
        self.answer_logits
            .get(word)
            .copied()
            .ok_or_else(|| Error::MissingLogit(word.to_string()))
    }
}

/// Captured features and gradients for one decoder layer.
///
/// Both arrays are `[channels, positions]` over the full input sequence and
/// must agree in shape.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    layer: usize,
    features: Array2<f64>,
    gradients: Array2<f64>,
}

impl LayerTrace {
    pub fn new(layer: usize, features: Array2<f64>, gradients: Array2<f64>) -> Result<Self> {
        if features.dim() != gradients.dim() {
            return Err(Error::ShapeMismatch(format!(
                "layer {layer}: features {:?} vs gradients {:?}",
                features.dim(),
                gradients.dim()
            )));
        }
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::EmptyInput(format!("layer {layer} trace")));
        }
        Ok(Self { layer, features, gradients })
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn gradients(&self) -> &Array2<f64> {
        &self.gradients
    }

    pub fn channels(&self) -> usize {
        self.features.nrows()
    }

    pub fn positions(&self) -> usize {
        self.features.ncols()
    }
}

/// Free-form description of what a trace captures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceMeta {
    /// What the feature maps are (e.g. "hidden_state").
    pub feature_kind: String,
    /// Image-token grid `(rows, cols)` when the encoder is grid-shaped.
    pub grid: Option<(usize, usize)>,
}

/// Everything captured from one traced query: the reply, the scalar answer
/// logit the gradients were taken against, and per-layer feature/gradient maps.
#[derive(Debug, Clone)]
pub struct TraceBundle {
    pub response: Response,
    /// The answer logit z used as the backward target.
    pub answer_logit: f64,
    layers: Vec<LayerTrace>,
    span: VisualSpan,
    pub meta: TraceMeta,
}

impl TraceBundle {
    pub fn new(
        response: Response,
        answer_logit: f64,
        layers: Vec<LayerTrace>,
        span: VisualSpan,
        meta: TraceMeta,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyInput("trace bundle layers".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for trace in &layers {
            if !seen.insert(trace.layer()) {
                return Err(Error::ShapeMismatch(format!(
                    "duplicate trace for layer {}",
                    trace.layer()
                )));
            }
            if trace.positions() < span.end() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {} covers {} positions but the span ends at {}",
                    trace.layer(),
                    trace.positions(),
                    span.end()
                )));
            }
        }
        Ok(Self { response, answer_logit, layers, span, meta })
    }

    pub fn layers(&self) -> &[LayerTrace] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> Option<&LayerTrace> {
        self.layers.iter().find(|t| t.layer() == index)
    }

    pub fn span(&self) -> &VisualSpan {
        &self.span
    }
}

/// Sequence pooling used to collapse token embeddings into one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    Last,
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Pooling::Mean => write!(f, "mean"),
            Pooling::Last => write!(f, "last"),
        }
    }
}

/// Pooled hidden-state embedding of a text string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    pub layer: usize,
    pub pooling: Pooling,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, layer: usize, pooling: Pooling) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("embedding vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMetricInput(
                "embedding contains a non-finite value".into(),
            ));
        }
        Ok(Self { values, layer, pooling })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Feature switches an adapter advertises. Pipeline stages check these up
/// front; a missing capability is a configuration error, never a silent skip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub trace_capture: bool,
    pub token_pruning: bool,
    pub text_embedding: bool,
}

impl Capabilities {
    pub fn all() -> Self {
        Self { trace_capture: true, token_pruning: true, text_embedding: true }
    }

    pub fn supports(&self, capability: Capability) -> bool {
        match capability {
            Capability::TraceCapture => self.trace_capture,
            Capability::TokenPruning => self.token_pruning,
            Capability::TextEmbedding => self.text_embedding,
        }
    }
}

/// Named capability, used in error messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capability {
    TraceCapture,
    TokenPruning,
    TextEmbedding,
}

impl std::fmt::Display for Capability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Capability::TraceCapture => "trace capture",
            Capability::TokenPruning => "token pruning",
            Capability::TextEmbedding => "text embedding",
        };
        write!(f, "{name}")
    }
}
