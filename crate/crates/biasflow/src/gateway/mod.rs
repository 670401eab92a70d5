//! Uniform contract for querying instrumented vision-language models.
//!
//! An adapter exposes five operations: visual-span lookup, plain or pruned
//! generation, traced generation (features plus answer-logit gradients), and
//! text embedding. [`ModelHandle`] wraps an adapter with capability checks and
//! call serialization; [`AdapterRegistry`] maps string ids to adapter
//! factories so configs can name their backend.

pub mod mock;
pub mod types;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use types::{
    Capabilities, Capability, DecodeMeta, EmbeddingVector, ImageRef, KeepMask, LayerTrace,
    PixelBox, Pooling, PruningSemantics, Response, TraceBundle, TraceMeta, VisualSpan,
};

/// Adapter contract: everything a backend must implement.
///
/// Implementations should be deterministic given their configuration seed;
/// the pipeline relies on replaying queries to reproduce transcripts.
pub trait ModelAdapter: Send + Sync {
    fn model_id(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    /// Whether concurrent calls are permitted. Non-reentrant adapters are
    /// serialized by the handle.
    fn reentrant(&self) -> bool {
        false
    }

    /// Positions of the image tokens for this image in the input sequence.
    fn visual_span(&self, image: &ImageRef) -> Result<VisualSpan>;

    /// Image-token grid shape, when the visual encoder is grid-shaped.
    fn token_grid(&self, image: &ImageRef) -> Option<(usize, usize)>;

    /// Generate a reply, optionally pruning image tokens to `mask`.
    fn query(&self, image: &ImageRef, prompt: &str, mask: Option<&KeepMask>) -> Result<Response>;

    /// Generate and capture features plus answer-logit gradients for `layers`.
    fn query_with_trace(
        &self,
        image: &ImageRef,
        prompt: &str,
        layers: &[usize],
    ) -> Result<TraceBundle>;

    /// Pooled hidden-state embedding of `text` at `layer`.
    fn embed_text(&self, text: &str, layer: usize) -> Result<EmbeddingVector>;
}

/// Configuration naming an adapter and how to initialize it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Registry id of the adapter ("mock" is built in).
    pub adapter: String,
    /// Scenario document path, for scripted adapters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<PathBuf>,
    /// Seed override; defaults to the seed embedded in the scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Free-form adapter options.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub options: BTreeMap<String, String>,
}

impl ModelConfig {
    pub fn mock(scenario: impl Into<PathBuf>) -> Self {
        Self {
            adapter: "mock".into(),
            scenario: Some(scenario.into()),
            seed: None,
            options: BTreeMap::new(),
        }
    }
}

/// Opened model: an adapter plus the serialization gate and capability checks
/// every pipeline stage goes through.
pub struct ModelHandle {
    adapter: Arc<dyn ModelAdapter>,
    // present iff the adapter is not reentrant
    gate: Option<Mutex<()>>,
}

impl ModelHandle {
    pub fn new(adapter: Arc<dyn ModelAdapter>) -> Self {
        let gate = if adapter.reentrant() { None } else { Some(Mutex::new(())) };
        Self { adapter, gate }
    }

    pub fn model_id(&self) -> String {
        self.adapter.model_id().to_string()
    }

    pub fn capabilities(&self) -> Capabilities {
        self.adapter.capabilities()
    }

    pub fn reentrant(&self) -> bool {
        self.adapter.reentrant()
    }

    /// Error unless the adapter advertises `capability`.
    pub fn require(&self, capability: Capability) -> Result<()> {
        if self.capabilities().supports(capability) {
            Ok(())
        } else {
            Err(Error::MissingCapability {
                model: self.model_id(),
                capability: capability.to_string(),
            })
        }
    }

    fn serialized<T>(&self, op: impl FnOnce(&dyn ModelAdapter) -> Result<T>) -> Result<T> {
        let _guard = self.gate.as_ref().map(|m| m.lock().expect("gateway gate poisoned"));
        op(&*self.adapter)
    }

    pub fn visual_span(&self, image: &ImageRef) -> Result<VisualSpan> {
        self.serialized(|a| a.visual_span(image))
    }

    pub fn token_grid(&self, image: &ImageRef) -> Option<(usize, usize)> {
        self.adapter.token_grid(image)
    }

    /// Plain or pruned generation. A mask demands the token-pruning
    /// capability and must validate against the image's span.
    pub fn query(
        &self,
        image: &ImageRef,
        prompt: &str,
        mask: Option<&KeepMask>,
    ) -> Result<Response> {
        if let Some(mask) = mask {
            self.require(Capability::TokenPruning)?;
            let span = self.visual_span(image)?;
            mask.validate_against(&span)?;
        }
        self.serialized(|a| a.query(image, prompt, mask))
    }

    /// Traced generation over a non-empty, duplicate-free layer set.
    pub fn query_with_trace(
        &self,
        image: &ImageRef,
        prompt: &str,
        layers: &[usize],
    ) -> Result<TraceBundle> {
        self.require(Capability::TraceCapture)?;
        if layers.is_empty() {
            return Err(Error::EmptyInput("trace layer set".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &layer in layers {
            if !seen.insert(layer) {
                return Err(Error::InvalidAttributionConfig(format!(
                    "duplicate layer {layer} in trace request"
                )));
            }
        }
        self.serialized(|a| a.query_with_trace(image, prompt, layers))
    }

    pub fn embed_text(&self, text: &str, layer: usize) -> Result<EmbeddingVector> {
        self.require(Capability::TextEmbedding)?;
        if text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        self.serialized(|a| a.embed_text(text, layer))
    }
}

type AdapterFactory = Box<dyn Fn(&ModelConfig) -> Result<Arc<dyn ModelAdapter>> + Send + Sync>;

/// String-keyed adapter factories. `with_builtin` registers the scripted mock.
pub struct AdapterRegistry {
    factories: BTreeMap<String, AdapterFactory>,
}

impl AdapterRegistry {
    pub fn new() -> Self {
        Self { factories: BTreeMap::new() }
    }

    pub fn with_builtin() -> Self {
        let mut registry = Self::new();
        registry.register("mock", |config: &ModelConfig| {
            let path = config.scenario.as_ref().ok_or_else(|| {
                Error::Config("mock adapter needs a scenario path".into())
            })?;
            let mut scenario = mock::Scenario::from_path(path)?;
            if let Some(seed) = config.seed {
                scenario.seed = seed;
            }
            Ok(Arc::new(mock::MockAdapter::new(scenario)?) as Arc<dyn ModelAdapter>)
        });
        registry
    }

    pub fn register(
        &mut self,
        id: impl Into<String>,
        factory: impl Fn(&ModelConfig) -> Result<Arc<dyn ModelAdapter>> + Send + Sync + 'static,
    ) {
        self.factories.insert(id.into(), Box::new(factory));
    }

    pub fn open(&self, config: &ModelConfig) -> Result<ModelHandle> {
        let factory = self
            .factories
            .get(&config.adapter)
            .ok_or_else(|| Error::UnknownAdapter(config.adapter.clone()))?;
        Ok(ModelHandle::new(factory(config)?))
    }
}

impl Default for AdapterRegistry {
    fn default() -> Self {
        Self::with_builtin()
    }
}

/// Open a model through the built-in registry.
pub fn open_model(config: &ModelConfig) -> Result<ModelHandle> {
    AdapterRegistry::with_builtin().open(config)
}
