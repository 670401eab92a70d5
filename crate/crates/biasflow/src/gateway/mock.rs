//! Scripted mock adapter: the deterministic oracle behind desk-scale tests.
//!
//! A scenario document (version 1) scripts every behavior: responses keyed by
//! (prompt pattern, mask class, image pattern), per-layer feature/gradient
//! arrays, and a word-keyed embedding table. Group-conditioned answer
//! accuracies are realized as Bernoulli flips whose draw is a stateless hash
//! of (seed, image id, prompt, mask class), so behavior is a pure function of
//! the query — independent of call order and thread interleaving.
//!
//! Scenarios are plain JSON and double as regression fixtures; [`Scenario`]
//! round-trips losslessly through [`Scenario::to_json_string`].

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{hash64, unit};
use crate::textutil::first_alpha_word;

use super::types::{
    Capabilities, DecodeMeta, EmbeddingVector, ImageRef, KeepMask, LayerTrace, Pooling,
    PruningSemantics, Response, TraceBundle, TraceMeta, VisualSpan,
};
use super::ModelAdapter;

/// Schema version this build reads and writes.
pub const SCENARIO_VERSION: u32 = 1;

fn default_true() -> bool {
    true
}

fn default_feature_kind() -> String {
    "hidden_state".into()
}

/// Image-token layout: a contiguous span starting at `span_start`, shaped as
/// a `rows x cols` grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisualConfig {
    #[serde(default)]
    pub span_start: usize,
    /// (rows, cols); serialized as a two-element array.
    pub grid: (usize, usize),
}

impl VisualConfig {
    pub fn token_count(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn span_end(&self) -> usize {
        self.span_start + self.token_count()
    }
}

/// Answer words the scenario's scripted logits must cover.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconWords {
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

impl Default for LexiconWords {
    fn default() -> Self {
        Self { positive: vec!["yes".into()], negative: vec!["no".into()] }
    }
}

impl LexiconWords {
    fn all(&self) -> impl Iterator<Item = &String> {
        self.positive.iter().chain(self.negative.iter())
    }
}

/// Mask classes a response rule can require.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSel {
    Full,
    Pruned,
    #[default]
    Any,
}

/// Runtime mask classification of a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum QueryMask {
    Full,
    Pruned,
}

impl QueryMask {
    fn label(self) -> &'static str {
        match self {
            QueryMask::Full => "full",
            QueryMask::Pruned => "pruned",
        }
    }
}

/// Match conditions for a scripted rule. Empty conditions match everything;
/// among matching rules the most specific wins (exact beats contains, longer
/// contains patterns beat shorter ones), with file order breaking ties.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchKey {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_contains: Option<String>,
    /// Exact match on the image id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    /// Substring match on the image path or id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_contains: Option<String>,
    #[serde(default, skip_serializing_if = "is_any")]
    pub mask: MaskSel,
}

fn is_any(mask: &MaskSel) -> bool {
    *mask == MaskSel::Any
}

impl MatchKey {
    pub fn prompt(mut self, prompt: impl Into<String>) -> Self {
        self.prompt = Some(prompt.into());
        self
    }

    pub fn prompt_contains(mut self, pattern: impl Into<String>) -> Self {
        self.prompt_contains = Some(pattern.into());
        self
    }

    pub fn image(mut self, id: impl Into<String>) -> Self {
        self.image = Some(id.into());
        self
    }

    pub fn image_contains(mut self, pattern: impl Into<String>) -> Self {
        self.image_contains = Some(pattern.into());
        self
    }

    pub fn mask(mut self, mask: MaskSel) -> Self {
        self.mask = mask;
        self
    }

    fn matches(&self, prompt: &str, image: &ImageRef, mask: QueryMask) -> bool {
        if let Some(exact) = &self.prompt {
            if exact != prompt {
                return false;
            }
        }
        if let Some(pattern) = &self.prompt_contains {
            if !prompt.contains(pattern.as_str()) {
                return false;
            }
        }
        if let Some(exact) = &self.image {
            if *exact != image.id {
                return false;
            }
        }
        if let Some(pattern) = &self.image_contains {
            if !image.path.contains(pattern.as_str()) && !image.id.contains(pattern.as_str()) {
                return false;
            }
        }
        match self.mask {
            MaskSel::Any => true,
            MaskSel::Full => mask == QueryMask::Full,
            MaskSel::Pruned => mask == QueryMask::Pruned,
        }
    }

    fn specificity(&self) -> usize {
        let mut score = 0;
        score += match (&self.prompt, &self.prompt_contains) {
            (Some(_), _) => 1_000_000,
            (None, Some(p)) => p.len(),
            (None, None) => 0,
        };
        score += match (&self.image, &self.image_contains) {
            (Some(_), _) => 500_000,
            (None, Some(p)) => p.len(),
            (None, None) => 0,
        };
        if self.mask != MaskSel::Any {
            score += 1;
        }
        score
    }
}

/// Reply text plus answer-step logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Payload {
    pub text: String,
    pub logits: BTreeMap<String, f64>,
}

/// One scripted response. With `accuracy` set, the primary payload is
/// returned with that probability and `flip` otherwise, via a seeded draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseRule {
    #[serde(default)]
    pub when: MatchKey,
    pub text: String,
    pub logits: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip: Option<Payload>,
}

/// Scripted feature/gradient arrays for one layer, `[channels][positions]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedLayer {
    pub layer: usize,
    pub features: Vec<Vec<f64>>,
    pub gradients: Vec<Vec<f64>>,
}

/// Scripted trace, matched like a response rule (mask class always full).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRule {
    #[serde(default)]
    pub when: MatchKey,
    /// Overrides the answer logit when the reply's first word has no scripted
    /// logit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_logit: Option<f64>,
    pub layers: Vec<ScriptedLayer>,
}

/// A complete scripted model. See the module docs for the format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub model_id: String,
    pub seed: u64,
    pub layer_count: usize,
    #[serde(default = "default_true")]
    pub reentrant: bool,
    #[serde(default = "Capabilities::all")]
    pub capabilities: Capabilities,
    #[serde(default = "default_feature_kind")]
    pub feature_kind: String,
    pub visual: VisualConfig,
    #[serde(default)]
    pub lexicon: LexiconWords,
    #[serde(default)]
    pub responses: Vec<ResponseRule>,
    #[serde(default)]
    pub traces: Vec<TraceRule>,
    #[serde(default)]
    pub embeddings: BTreeMap<String, Vec<f64>>,
}

impl Scenario {
    pub fn from_json(json: &str) -> Result<Self> {
        let scenario: Scenario =
            serde_json::from_str(json).map_err(|e| Error::Scenario(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|e| {
            Error::Scenario(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json(&json)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Check every schema invariant; errors name the offending entry.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Scenario(msg));
        if self.version != SCENARIO_VERSION {
            return fail(format!(
                "unsupported version {} (this build reads {SCENARIO_VERSION})",
                self.version
            ));
        }
        if self.model_id.is_empty() {
            return fail("model_id is empty".into());
        }
        if self.layer_count == 0 {
            return fail("layer_count must be at least 1".into());
        }
        if self.visual.grid.0 == 0 || self.visual.grid.1 == 0 {
            return fail("visual grid dimensions must be positive".into());
        }
        if self.lexicon.positive.is_empty() || self.lexicon.negative.is_empty() {
            return fail("lexicon sides must be non-empty".into());
        }
        for word in self.lexicon.all() {
            if word.chars().any(|c| c.is_uppercase()) {
                return fail(format!("lexicon word {word:?} must be lowercase"));
            }
            if self.lexicon.positive.contains(word) && self.lexicon.negative.contains(word) {
                return fail(format!("lexicon word {word:?} appears on both sides"));
            }
        }
        for (index, rule) in self.responses.iter().enumerate() {
            let whereat = format!("responses[{index}]");
            self.check_logits(&rule.logits, &whereat)?;
            if let Some(p) = rule.accuracy {
                if !(0.0..=1.0).contains(&p) {
                    return fail(format!("{whereat}: accuracy {p} outside [0, 1]"));
                }
                if p < 1.0 && rule.flip.is_none() {
                    return fail(format!("{whereat}: accuracy {p} < 1 needs a flip payload"));
                }
            } else if rule.flip.is_some() {
                return fail(format!("{whereat}: flip payload without an accuracy"));
            }
            if let Some(flip) = &rule.flip {
                self.check_logits(&flip.logits, &format!("{whereat}.flip"))?;
            }
        }
        for (index, rule) in self.traces.iter().enumerate() {
            let whereat = format!("traces[{index}]");
            if rule.layers.is_empty() {
                return fail(format!("{whereat}: no layers scripted"));
            }
            let mut seen = std::collections::BTreeSet::new();
            for scripted in &rule.layers {
                if scripted.layer == 0 || scripted.layer > self.layer_count {
                    return fail(format!(
                        "{whereat}: layer {} outside 1..={}",
                        scripted.layer, self.layer_count
                    ));
                }
                if !seen.insert(scripted.layer) {
                    return fail(format!("{whereat}: duplicate layer {}", scripted.layer));
                }
                check_matrix(&scripted.features, self.visual.span_end(), &format!(
                    "{whereat} layer {} features", scripted.layer
                ))?;
                check_matrix(&scripted.gradients, self.visual.span_end(), &format!(
                    "{whereat} layer {} gradients", scripted.layer
                ))?;
                if scripted.features.len() != scripted.gradients.len()
                    || scripted.features[0].len() != scripted.gradients[0].len()
                {
                    return fail(format!(
                        "{whereat}: layer {} features and gradients differ in shape",
                        scripted.layer
                    ));
                }
            }
        }
        let mut dim = None;
        for (word, vector) in &self.embeddings {
            if vector.is_empty() {
                return fail(format!("embedding {word:?} is empty"));
            }
            if vector.iter().any(|v| !v.is_finite()) {
                return fail(format!("embedding {word:?} has a non-finite entry"));
            }
            match dim {
                None => dim = Some(vector.len()),
                Some(d) if d != vector.len() => {
                    return fail(format!(
                        "embedding {word:?} has dimension {} but the table uses {d}",
                        vector.len()
                    ));
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn check_logits(&self, logits: &BTreeMap<String, f64>, whereat: &str) -> Result<()> {
        for word in self.lexicon.all() {
            if !logits.contains_key(word) {
                return Err(Error::Scenario(format!(
                    "{whereat}: logits missing lexicon word {word:?}"
                )));
            }
        }
        for (word, value) in logits {
            if !value.is_finite() {
                return Err(Error::Scenario(format!(
                    "{whereat}: logit for {word:?} is not finite"
                )));
            }
        }
        Ok(())
    }
}

fn check_matrix(rows: &[Vec<f64>], min_cols: usize, whereat: &str) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Scenario(format!("{whereat}: no channels")));
    }
    let cols = rows[0].len();
    if cols < min_cols {
        return Err(Error::Scenario(format!(
            "{whereat}: {cols} positions but the visual span ends at {min_cols}"
        )));
    }
    for row in rows {
        if row.len() != cols {
            return Err(Error::Scenario(format!("{whereat}: ragged rows")));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Scenario(format!("{whereat}: non-finite entry")));
        }
    }
    Ok(())
}

fn to_array(rows: &[Vec<f64>]) -> Array2<f64> {
    let shape = (rows.len(), rows[0].len());
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec(shape, flat).expect("validated rectangular matrix")
}

/// The mock itself. Construction validates the scenario; queries resolve the
/// most specific matching rule and fail loudly on unscripted keys.
pub struct MockAdapter {
    scenario: Scenario,
    span: VisualSpan,
}

impl MockAdapter {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let span =
            VisualSpan::contiguous(scenario.visual.span_start, scenario.visual.token_count())?;
        Ok(Self { scenario, span })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    fn classify(&self, mask: Option<&KeepMask>) -> Result<QueryMask> {
        match mask {
            None => Ok(QueryMask::Full),
            Some(mask) => {
                mask.validate_against(&self.span)?;
                if mask.is_full(&self.span) {
                    Ok(QueryMask::Full)
                } else {
                    Ok(QueryMask::Pruned)
                }
            }
        }
    }

    fn best_response(
        &self,
        prompt: &str,
        image: &ImageRef,
        mask: QueryMask,
    ) -> Result<&ResponseRule> {
        best_rule(self.scenario.responses.iter(), |rule| {
            rule.when.matches(prompt, image, mask).then(|| rule.when.specificity())
        })
        .ok_or_else(|| {
            Error::Scenario(format!(
                "no scripted response for prompt {prompt:?}, image {:?}, mask {}",
                image.id,
                mask.label()
            ))
        })
    }

    fn best_trace(&self, prompt: &str, image: &ImageRef) -> Result<&TraceRule> {
        best_rule(self.scenario.traces.iter(), |rule| {
            rule.when
                .matches(prompt, image, QueryMask::Full)
                .then(|| rule.when.specificity())
        })
        .ok_or_else(|| {
            Error::Scenario(format!(
                "no scripted trace for prompt {prompt:?}, image {:?}",
                image.id
            ))
        })
    }
}

/// Highest specificity wins; earlier rules win ties.
fn best_rule<'a, R>(
    rules: impl Iterator<Item = &'a R>,
    score: impl Fn(&'a R) -> Option<usize>,
) -> Option<&'a R> {
    let mut best: Option<(usize, &R)> = None;
    for rule in rules {
        if let Some(s) = score(rule) {
            if best.is_none_or(|(b, _)| s > b) {
                best = Some((s, rule));
            }
        }
    }
    best.map(|(_, rule)| rule)
}

impl ModelAdapter for MockAdapter {
    fn model_id(&self) -> &str {
        &self.scenario.model_id
    }

    fn capabilities(&self) -> Capabilities {
        self.scenario.capabilities
    }

    fn reentrant(&self) -> bool {
        self.scenario.reentrant
    }

    fn visual_span(&self, _image: &ImageRef) -> Result<VisualSpan> {
        Ok(self.span.clone())
    }

    fn token_grid(&self, _image: &ImageRef) -> Option<(usize, usize)> {
        Some(self.scenario.visual.grid)
    }

    fn query(&self, image: &ImageRef, prompt: &str, mask: Option<&KeepMask>) -> Result<Response> {
        let mask = self.classify(mask)?;
        let rule = self.best_response(prompt, image, mask)?;
        let (text, logits) = match rule.accuracy {
            Some(p) => {
                let draw = unit(hash64(&[
                    b"answer",
                    &self.scenario.seed.to_be_bytes(),
                    image.id.as_bytes(),
                    prompt.as_bytes(),
                    mask.label().as_bytes(),
                ]));
                if draw < p {
                    (&rule.text, &rule.logits)
                } else {
                    let flip = rule.flip.as_ref().expect("validated: accuracy < 1 has flip");
                    (&flip.text, &flip.logits)
                }
            }
            None => (&rule.text, &rule.logits),
        };
        Ok(Response {
            text: text.clone(),
            answer_logits: logits.clone(),
            meta: DecodeMeta {
                greedy: true,
                temperature: 0.0,
                pruning: PruningSemantics::Removed,
            },
        })
    }

    fn query_with_trace(
        &self,
        image: &ImageRef,
        prompt: &str,
        layers: &[usize],
    ) -> Result<TraceBundle> {
        for &layer in layers {
            if layer == 0 || layer > self.scenario.layer_count {
                return Err(Error::LayerOutOfRange {
                    layer,
                    depth: self.scenario.layer_count,
                });
            }
        }
        let response = self.query(image, prompt, None)?;
        let rule = self.best_trace(prompt, image)?;
        let mut traces = Vec::with_capacity(layers.len());
        for &layer in layers {
            let scripted = rule.layers.iter().find(|s| s.layer == layer).ok_or_else(|| {
                Error::Scenario(format!(
                    "no scripted trace for layer {layer} (prompt {prompt:?}, image {:?})",
                    image.id
                ))
            })?;
            traces.push(LayerTrace::new(
                layer,
                to_array(&scripted.features),
                to_array(&scripted.gradients),
            )?);
        }
        let answer_logit = first_alpha_word(&response.text)
            .and_then(|word| response.answer_logits.get(&word).copied())
            .or(rule.answer_logit)
            .ok_or_else(|| {
                Error::Scenario(format!(
                    "cannot derive an answer logit for reply {:?}: first word has no \
                     scripted logit and the trace rule sets no answer_logit",
                    response.text
                ))
            })?;
        TraceBundle::new(
            response,
            answer_logit,
            traces,
            self.span.clone(),
            TraceMeta {
                feature_kind: self.scenario.feature_kind.clone(),
                grid: Some(self.scenario.visual.grid),
            },
        )
    }

    fn embed_text(&self, text: &str, layer: usize) -> Result<EmbeddingVector> {
        if layer == 0 || layer > self.scenario.layer_count {
            return Err(Error::LayerOutOfRange { layer, depth: self.scenario.layer_count });
        }
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::EmptyText);
        }
        if let Some(vector) = self.scenario.embeddings.get(text) {
            return EmbeddingVector::new(vector.clone(), layer, Pooling::Mean);
        }
        let words: Vec<&str> = text.split_whitespace().collect();
        let mut sum: Option<Vec<f64>> = None;
        for word in &words {
            let vector = self.scenario.embeddings.get(*word).ok_or_else(|| {
                Error::Scenario(format!("no embedding scripted for {word:?}"))
            })?;
            match &mut sum {
                None => sum = Some(vector.clone()),
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(vector) {
                        *a += v;
                    }
                }
            }
        }
        let mut mean = sum.expect("text has at least one word");
        for value in &mut mean {
            *value /= words.len() as f64;
        }
        EmbeddingVector::new(mean, layer, Pooling::Mean)
    }
}

/// Fluent scenario construction for tests and generators. `build` validates.
#[derive(Debug, Clone)]
pub struct ScenarioBuilder {
    scenario: Scenario,
}

impl ScenarioBuilder {
    pub fn new(model_id: impl Into<String>, layer_count: usize, grid: (usize, usize)) -> Self {
        Self {
            scenario: Scenario {
                version: SCENARIO_VERSION,
                model_id: model_id.into(),
                seed: 0,
                layer_count,
                reentrant: true,
                capabilities: Capabilities::all(),
                feature_kind: default_feature_kind(),
                visual: VisualConfig { span_start: 0, grid },
                lexicon: LexiconWords::default(),
                responses: Vec::new(),
                traces: Vec::new(),
                embeddings: BTreeMap::new(),
            },
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.scenario.seed = seed;
        self
    }

    pub fn span_start(mut self, start: usize) -> Self {
        self.scenario.visual.span_start = start;
        self
    }

    pub fn reentrant(mut self, reentrant: bool) -> Self {
        self.scenario.reentrant = reentrant;
        self
    }

    pub fn capabilities(mut self, capabilities: Capabilities) -> Self {
        self.scenario.capabilities = capabilities;
        self
    }

    pub fn lexicon(mut self, positive: &[&str], negative: &[&str]) -> Self {
        self.scenario.lexicon = LexiconWords {
            positive: positive.iter().map(|s| s.to_string()).collect(),
            negative: negative.iter().map(|s| s.to_string()).collect(),
        };
        self
    }

    pub fn respond(
        mut self,
        when: MatchKey,
        text: impl Into<String>,
        logits: &[(&str, f64)],
    ) -> Self {
        self.scenario.responses.push(ResponseRule {
            when,
            text: text.into(),
            logits: to_logits(logits),
            accuracy: None,
            flip: None,
        });
        self
    }

    pub fn respond_with_accuracy(
        mut self,
        when: MatchKey,
        text: impl Into<String>,
        logits: &[(&str, f64)],
        accuracy: f64,
        flip_text: impl Into<String>,
        flip_logits: &[(&str, f64)],
    ) -> Self {
        self.scenario.responses.push(ResponseRule {
            when,
            text: text.into(),
            logits: to_logits(logits),
            accuracy: Some(accuracy),
            flip: Some(Payload { text: flip_text.into(), logits: to_logits(flip_logits) }),
        });
        self
    }

    pub fn trace(mut self, when: MatchKey, layers: Vec<ScriptedLayer>) -> Self {
        self.scenario.traces.push(TraceRule { when, answer_logit: None, layers });
        self
    }

    pub fn trace_with_logit(
        mut self,
        when: MatchKey,
        answer_logit: f64,
        layers: Vec<ScriptedLayer>,
    ) -> Self {
        self.scenario.traces.push(TraceRule {
            when,
            answer_logit: Some(answer_logit),
            layers,
        });
        self
    }

    pub fn embedding(mut self, word: impl Into<String>, vector: Vec<f64>) -> Self {
        self.scenario.embeddings.insert(word.into(), vector);
        self
    }

    pub fn build(self) -> Result<Scenario> {
        self.scenario.validate()?;
        Ok(self.scenario)
    }
}

fn to_logits(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(word, value)| (word.to_string(), *value)).collect()
}

/// Convenience: validate a scenario and wrap it in a handle.
pub fn make_mock(scenario: Scenario) -> Result<super::ModelHandle> {
    Ok(super::ModelHandle::new(std::sync::Arc::new(MockAdapter::new(scenario)?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ScenarioBuilder {
        ScenarioBuilder::new("tiny", 12, (2, 2))
            .seed(7)
            .respond(
                MatchKey::default().prompt_contains("nurse"),
                "Yes",
                &[("yes", 3.0), ("no", -2.0)],
            )
            .trace(
                MatchKey::default().prompt_contains("nurse"),
                vec![ScriptedLayer {
                    layer: 10,
                    features: vec![vec![0.5, 0.5, 5.0, 0.5]],
                    gradients: vec![vec![1.0, 1.0, 1.0, 1.0]],
                }],
            )
    }

    fn img(id: &str) -> ImageRef {
        ImageRef::new(id, format!("images/{id}.jpg"))
    }

    #[test]
    fn rejects_bad_schema() {
        assert!(Scenario::from_json("{\"version\": 9}").is_err());
        let mut scenario = tiny().build().unwrap();
        scenario.responses[0].logits.remove("no");
        assert!(scenario.validate().is_err());
    }

    #[test]
    fn unscripted_query_names_the_key() {
        let handle = make_mock(tiny().build().unwrap()).unwrap();
        let err = handle.query(&img("x"), "Is there a doctor here?", None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("doctor") && msg.contains("full"), "{msg}");
    }

    #[test]
    fn specificity_prefers_longer_patterns() {
        let scenario = ScenarioBuilder::new("overlap", 4, (1, 1))
            .respond(MatchKey::default().prompt_contains("male"), "A", &[("yes", 1.0), ("no", 0.0)])
            .respond(
                MatchKey::default().prompt_contains("female"),
                "B",
                &[("yes", 1.0), ("no", 0.0)],
            )
            .build()
            .unwrap();
        let handle = make_mock(scenario).unwrap();
        let male = handle.query(&img("i"), "Is there a male in this image?", None).unwrap();
        let female = handle.query(&img("i"), "Is there a female in this image?", None).unwrap();
        assert_eq!(male.text, "A");
        assert_eq!(female.text, "B");
    }

    #[test]
    fn full_mask_is_identity() {
        let handle = make_mock(tiny().build().unwrap()).unwrap();
        let image = img("n1");
        let prompt = "Is there a nurse in the image?";
        let span = handle.visual_span(&image).unwrap();
        let full = span.full_mask();
        let bare = handle.query(&image, prompt, None).unwrap();
        let masked = handle.query(&image, prompt, Some(&full)).unwrap();
        assert_eq!(bare, masked);
    }

    #[test]
    fn trace_echoes_scripted_arrays_and_answer_logit() {
        let handle = make_mock(tiny().build().unwrap()).unwrap();
        let bundle = handle
            .query_with_trace(&img("n1"), "Is there a nurse in the image?", &[10])
            .unwrap();
        assert_eq!(bundle.answer_logit, 3.0);
        assert_eq!(bundle.layers().len(), 1);
        assert_eq!(bundle.layers()[0].features().row(0).to_vec(), vec![0.5, 0.5, 5.0, 0.5]);
        assert_eq!(bundle.meta.grid, Some((2, 2)));
        let err = handle
            .query_with_trace(&img("n1"), "Is there a nurse in the image?", &[40])
            .unwrap_err();
        assert!(matches!(err, Error::LayerOutOfRange { layer: 40, depth: 12 }));
    }

    #[test]
    fn embedding_mean_pools_multiword_text() {
        let scenario = tiny()
            .embedding("disk", vec![0.0, 2.0])
            .embedding("jockey", vec![2.0, 0.0])
            .build()
            .unwrap();
        let handle = make_mock(scenario).unwrap();
        let vector = handle.embed_text("disk jockey", 10).unwrap();
        assert_eq!(vector.values(), &[1.0, 1.0]);
        assert_eq!(vector.pooling, Pooling::Mean);
        assert!(handle.embed_text("banjo", 10).is_err());
        assert!(matches!(handle.embed_text("  ", 10), Err(Error::EmptyText)));
    }

    #[test]
    fn accuracy_flip_is_a_pure_function_of_the_query() {
        let scenario = ScenarioBuilder::new("acc", 4, (1, 1))
            .seed(11)
            .respond_with_accuracy(
                MatchKey::default(),
                "Yes",
                &[("yes", 2.0), ("no", -2.0)],
                0.5,
                "No",
                &[("yes", -2.0), ("no", 2.0)],
            )
            .build()
            .unwrap();
        let handle = make_mock(scenario.clone()).unwrap();
        let other = make_mock(scenario).unwrap();
        let mut texts = Vec::new();
        for i in 0..32 {
            let image = img(&format!("s{i}"));
            let a = handle.query(&image, "p", None).unwrap();
            let b = other.query(&image, "p", None).unwrap();
            assert_eq!(a, b);
            texts.push(a.text);
        }
        // both branches are exercised at p = 0.5 over 32 distinct images
        assert!(texts.iter().any(|t| t == "Yes"));
        assert!(texts.iter().any(|t| t == "No"));
    }
}
