//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Variants are grouped by the
//! stage that raises them; messages carry enough context to be recorded
//! per-sample in audit output without extra formatting.

use thiserror::Error;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // --- gateway ---
    /// No adapter factory registered under the requested id.
    #[error("unknown model adapter {0:?}")]
    UnknownAdapter(String),

    /// An operation needs a capability the open model does not advertise.
    #[error("model {model:?} does not support {capability}")]
    MissingCapability { model: String, capability: String },

    /// A keep-mask referenced positions outside the image-token span.
    #[error("invalid keep mask: {0}")]
    InvalidMask(String),

    /// A requested layer index falls outside the model's depth.
    #[error("layer {layer} out of range for a {depth}-layer model")]
    LayerOutOfRange { layer: usize, depth: usize },

    /// Scenario document violates the mock schema or misses a scripted key.
    #[error("mock scenario: {0}")]
    Scenario(String),

    /// `embed_text` was handed an empty or whitespace-only string.
    #[error("cannot embed empty text")]
    EmptyText,

    // --- attribution ---
    /// Feature/gradient arrays disagree in shape, or a vector has the wrong length.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An aggregate was asked for over zero elements.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// The requested layer set includes a layer without a captured trace.
    #[error("no trace captured for layer {0}")]
    MissingLayerTrace(usize),

    /// Bad attribution settings (empty layer list, out-of-range threshold).
    #[error("invalid attribution config: {0}")]
    InvalidAttributionConfig(String),

    /// Heatmap rendering needs a token grid but none was available.
    #[error("heatmap: {0}")]
    Heatmap(String),

    // --- prompts ---
    /// Template text must contain exactly one placeholder slot.
    #[error("template {0:?} must contain exactly one <slot> placeholder")]
    BadTemplate(String),

    /// A bank id or attribute had no registered template bank.
    #[error("no template bank registered for {0:?}")]
    UnknownBank(String),

    /// Concept not present in the loaded catalog.
    #[error("unknown concept {0:?}")]
    UnknownConcept(String),

    /// Group label not part of the attribute schema.
    #[error("group {group:?} is not in the {attribute:?} schema")]
    GroupNotInSchema { group: String, attribute: String },

    /// Counterfactual rewrite could not find the original group term.
    #[error("group term {0:?} not found in prompt")]
    GroupTermNotFound(String),

    /// Attribute schema failed validation (too few groups, duplicates).
    #[error("invalid attribute schema: {0}")]
    InvalidSchema(String),

    // --- dialogue ---
    /// Lexicon construction failed (empty side, overlapping words).
    #[error("invalid polarity lexicon: {0}")]
    InvalidLexicon(String),

    /// Confidence needs logits for every lexicon word on both sides.
    #[error("missing logit for lexicon word {0:?}")]
    MissingLogit(String),

    /// Confidence is undefined for an unparseable polarity.
    #[error("confidence undefined for unparseable polarity")]
    UnparseablePolarity,

    /// Round list handed to scoring violates the protocol invariants.
    #[error("inconsistent rounds: {0}")]
    InconsistentRounds(String),

    // --- metrics ---
    /// A group had zero samples, so its accuracy is undefined.
    #[error("group {0:?} has no samples")]
    EmptyGroup(String),

    /// Signed mode was requested for a schema it does not apply to.
    #[error("metric mode mismatch: {0}")]
    ModeMismatch(String),

    /// Metric input was malformed (unknown group, length mismatch).
    #[error("invalid metric input: {0}")]
    InvalidMetricInput(String),

    // --- text-bias probe ---
    /// The neutral embedding has zero norm, so the cosine is undefined.
    #[error("neutral embedding has zero norm")]
    ZeroNormEmbedding,

    /// Sensitive and neutral embeddings coincide; the bias direction vanishes.
    #[error("degenerate bias direction: sensitive embedding equals neutral embedding")]
    DegenerateDirection,

    // --- corpus ---
    /// Annotation source unreadable or produced zero valid rows.
    #[error("annotations: {0}")]
    Annotation(String),

    /// Crop box escapes the image bounds.
    #[error("crop box {x},{y} {w}x{h} exceeds image bounds {width}x{height}")]
    CropOutOfBounds { x: u32, y: u32, w: u32, h: u32, width: u32, height: u32 },

    // --- audit ---
    /// Audit configuration failed validation.
    #[error("config: {0}")]
    Config(String),

    /// Report manifest verification found a missing or altered artifact.
    #[error("manifest: {0}")]
    Manifest(String),

    // --- wrapped externals ---
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}
