//! End-to-end audit orchestration: config, per-sample pipeline, checkpointing,
//! and aggregation into a self-describing run record.

pub mod report;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{attribute, AttributionConfig};
use crate::corpus::{load_samples, ConceptCatalog, Sample};
use crate::dialogue::{
    classify_polarity, fairness_score, ConfidenceMode, DialogueEvaluator, ExcludedSample,
    FairnessRecord, Polarity, PolarityLexicon, RoundsOutcome,
};
use crate::error::{Error, Result};
use crate::gateway::{open_model, Capability, ImageRef, KeepMask, ModelConfig, ModelHandle};
use crate::metrics::{
    build_group_report, sign_agreement, top_k_reports, ConceptOutcome, DiffMode, GroupReport,
    SignAgreement,
};
use crate::prompts::{AttributeSchema, CfPolicy, PromptForge};
use crate::seeding::sample_seed;
use crate::tsb::{tsb_table, TsbRecord};

use report::ReportFormat;

/// Environment variable consulted for the image root when the config omits
/// it; failing both, the annotation file's directory is used.
pub const IMAGE_ROOT_ENV: &str = "BIASFLOW_IMAGE_ROOT";

/// Dialogue-stage settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DialogueConfig {
    pub confidence: ConfidenceMode,
    pub cf_policy: CfPolicy,
    pub lexicon: PolarityLexicon,
}

/// Text-bias probe settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsbConfig {
    pub enabled: bool,
    /// Probe layer; defaults to the midpoint of the attribution layers.
    pub layer: Option<usize>,
}

impl Default for TsbConfig {
    fn default() -> Self {
        Self { enabled: true, layer: None }
    }
}

fn default_top_k() -> usize {
    12
}

fn default_formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Jsonl, ReportFormat::Csv]
}

/// Declarative audit description, loadable from TOML. CLI flags override
/// individual keys; the effective config is snapshotted into the run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    /// Schema name: gender, age, or skin_tone.
    pub attribute: String,
    #[serde(default)]
    pub seed: u64,
    /// Annotation table (CSV, JSON, or JSONL).
    pub annotations: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_root: Option<PathBuf>,
    /// Output directory for checkpoints, reports, and run metadata.
    pub output: PathBuf,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Audit only these occupations; None audits everything in the table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concepts: Option<Vec<String>>,
    #[serde(default)]
    pub resume: bool,
    #[serde(default = "default_formats")]
    pub formats: Vec<ReportFormat>,
    pub model: ModelConfig,
    #[serde(default)]
    pub attribution: AttributionConfig,
    #[serde(default)]
    pub dialogue: DialogueConfig,
    #[serde(default)]
    pub tsb: TsbConfig,
}

impl AuditConfig {
    /// Load from TOML. Relative paths inside the file are resolved against
    /// the file's own directory, so a config works from any working
    /// directory; CLI flag overrides are taken as given.
    pub fn from_toml_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: AuditConfig = toml::from_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if !base.as_os_str().is_empty() {
            config.rebase(base);
        }
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        fix(&mut self.annotations);
        if let Some(root) = &mut self.image_root {
            fix(root);
        }
        fix(&mut self.output);
        if let Some(scenario) = &mut self.model.scenario {
            fix(scenario);
        }
    }

    /// Validate everything checkable without touching the model or the
    /// filesystem. Runs before any model call.
    pub fn validate(&self) -> Result<()> {
        AttributeSchema::by_name(&self.attribute)?;
        self.attribution.validate()?;
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if self.annotations.as_os_str().is_empty() {
            return Err(Error::Config("annotations path is empty".into()));
        }
        if self.output.as_os_str().is_empty() {
            return Err(Error::Config("output path is empty".into()));
        }
        if let Some(layer) = self.tsb.layer {
            if self.tsb.enabled && layer == 0 {
                return Err(Error::Config("tsb layer must be at least 1".into()));
            }
        }
        Ok(())
    }

    /// Effective text-probe layer.
    pub fn tsb_layer(&self) -> usize {
        self.tsb
            .layer
            .unwrap_or_else(|| self.attribution.layers[self.attribution.layers.len() / 2])
    }

    /// Image root: explicit config, then the environment, then the directory
    /// holding the annotation table.
    pub fn resolve_image_root(&self) -> PathBuf {
        if let Some(root) = &self.image_root {
            return root.clone();
        }
        if let Ok(root) = std::env::var(IMAGE_ROOT_ENV) {
            if !root.is_empty() {
                return PathBuf::from(root);
            }
        }
        self.annotations
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

/// Neutral-question stage of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeutralOutcome {
    pub prompt: String,
    pub bank: String,
    pub template_index: usize,
    pub text: String,
    pub polarity: Polarity,
    /// The catalog ground truth is that the person holds the occupation, so
    /// a positive answer is correct. None when the polarity is unparseable.
    pub correct: Option<bool>,
}

/// Attribution stage of one sample, trimmed to what reports need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionSummary {
    pub layers: Vec<usize>,
    pub averaged: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized: Option<Vec<f64>>,
    pub key_set: Vec<usize>,
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<(usize, usize)>,
    pub span: Vec<usize>,
}

/// Everything recorded for one sample. Stages that did not run stay None;
/// `error` holds the first module failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub concept: String,
    pub attribute: String,
    pub group: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neutral: Option<NeutralOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribution: Option<AttributionSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fairness: Option<FairnessRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded: Option<ExcludedSample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Run-level tallies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditTotals {
    pub samples: usize,
    /// Samples with a fairness score.
    pub completed: usize,
    /// Samples excluded by an unparseable round.
    pub excluded: usize,
    /// Samples that hit a module error.
    pub errored: usize,
    /// Samples restored from the checkpoint instead of re-queried.
    pub resumed: usize,
    /// Annotation rows rejected at ingest.
    pub rejected_rows: usize,
}

/// Complete audit output. Everything here is deterministic for a fixed
/// config, seed, and scenario; wall-clock metadata lives in `meta.json`
/// next to the checkpoint instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRunRecord {
    pub tool_version: String,
    /// Effective config snapshot. None only for records rebuilt from a bare
    /// JSONL file by the report re-renderer.
    pub config: Option<AuditConfig>,
    pub samples: Vec<SampleRecord>,
    pub reports: Vec<GroupReport>,
    pub top: Vec<GroupReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign: Option<SignAgreement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tsb: Option<Vec<TsbRecord>>,
    pub issues: Vec<String>,
    pub totals: AuditTotals,
}

/// Aggregate per-sample records into per-concept reports, the top-k slice by
/// absolute accuracy gap, the sign-agreement summary, and any per-concept
/// aggregation failures (returned as issues, not errors: one concept with a
/// starved group must not sink the rest of the run).
pub fn aggregate_records(
    samples: &[SampleRecord],
    schema: &AttributeSchema,
    top_k: usize,
) -> (Vec<GroupReport>, Vec<GroupReport>, Option<SignAgreement>, Vec<String>) {
    let mode = if schema.attribute() == "gender" {
        DiffMode::GenderSigned
    } else {
        DiffMode::Unsigned
    };
    let mut by_concept: BTreeMap<&str, Vec<ConceptOutcome>> = BTreeMap::new();
    for record in samples {
        by_concept.entry(&record.concept).or_default().push(ConceptOutcome {
            group: record.group.clone(),
            correct: record.neutral.as_ref().and_then(|n| n.correct),
            fairness: record.fairness.as_ref().map(|f| f.score),
        });
    }
    let mut reports = Vec::new();
    let mut issues = Vec::new();
    for (concept, outcomes) in &by_concept {
        match build_group_report(concept, schema, mode, outcomes) {
            Ok(report) => reports.push(report),
            Err(e) => issues.push(format!("concept {concept}: {e}")),
        }
    }
    let pairs: Vec<(f64, f64)> = reports.iter().map(|r| (r.acc_diff, r.fsd)).collect();
    let sign = if pairs.is_empty() {
        None
    } else {
        match sign_agreement(&pairs) {
            Ok(s) => Some(s),
            Err(e) => {
                issues.push(format!("sign agreement: {e}"));
                None
            }
        }
    };
    let top = top_k_reports(&reports, top_k);
    (reports, top, sign, issues)
}

/// Run the full pipeline for one sample. Module failures land in the
/// record's `error` field; only the stages that completed are filled in.
fn process_sample(
    handle: &ModelHandle,
    forge: &PromptForge,
    evaluator: &DialogueEvaluator<'_>,
    schema: &AttributeSchema,
    config: &AuditConfig,
    image_root: &Path,
    sample: &Sample,
) -> SampleRecord {
    let mut record = SampleRecord {
        sample_id: sample.id.clone(),
        concept: sample.occupation.clone(),
        attribute: schema.attribute().to_string(),
        group: String::new(),
        neutral: None,
        attribution: None,
        fairness: None,
        excluded: None,
        error: None,
    };
    let group = match sample.group_for(schema) {
        Ok(group) => group.to_string(),
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    record.group = group;
    let image_path = image_root.join(&sample.image);
    let image = ImageRef::new(&sample.id, image_path.to_string_lossy()).with_bbox(sample.bbox);
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(config.seed, &sample.id));
    if let Err(e) =
        drive_sample(handle, forge, evaluator, schema, config, &image, sample, &mut rng, &mut record)
    {
        record.error = Some(e.to_string());
    }
    record
}

#[allow(clippy::too_many_arguments)]
fn drive_sample(
    handle: &ModelHandle,
    forge: &PromptForge,
    evaluator: &DialogueEvaluator<'_>,
    schema: &AttributeSchema,
    config: &AuditConfig,
    image: &ImageRef,
    sample: &Sample,
    rng: &mut ChaCha8Rng,
    record: &mut SampleRecord,
) -> Result<()> {
    // Stage 1: neutral question with trace capture (full image).
    let draw = forge.neutral_prompt(&sample.occupation, rng)?;
    let bundle = handle.query_with_trace(image, &draw.text, &config.attribution.layers)?;
    let polarity = classify_polarity(&bundle.response.text, &config.dialogue.lexicon);
    let correct = match polarity {
        Polarity::Positive => Some(true),
        Polarity::Negative => Some(false),
        Polarity::Unparseable => None,
    };
    record.neutral = Some(NeutralOutcome {
        prompt: draw.text,
        bank: draw.bank,
        template_index: draw.template_index,
        text: bundle.response.text.clone(),
        polarity,
        correct,
    });

    // Stage 2: token attribution over the configured layers.
    let result = attribute(&bundle, &config.attribution)?;
    record.attribution = Some(AttributionSummary {
        layers: config.attribution.layers.clone(),
        averaged: result.averaged.clone(),
        normalized: result.normalized.clone(),
        key_set: result.key_set.clone(),
        degenerate: result.degenerate,
        grid: bundle.meta.grid,
        span: bundle.span().indices().to_vec(),
    });

    // Stage 3: pruned sensitive rounds and the score sheet.
    let key = KeepMask::new(result.key_set.clone(), bundle.span())?;
    match evaluator.run_rounds(handle, image, &key, schema, &record.group, rng)? {
        RoundsOutcome::Completed(rounds) => {
            record.fairness = Some(fairness_score(&sample.id, rounds, result.degenerate)?);
        }
        RoundsOutcome::Excluded(excluded) => record.excluded = Some(excluded),
    }
    Ok(())
}

fn read_checkpoint(path: &Path) -> (BTreeMap<String, SampleRecord>, usize) {
    let mut records = BTreeMap::new();
    let mut bad_lines = 0usize;
    let Ok(text) = std::fs::read_to_string(path) else {
        return (records, 0);
    };
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<SampleRecord>(line) {
            Ok(record) => {
                records.insert(record.sample_id.clone(), record);
            }
            // a killed run can leave one truncated line; count, don't fail
            Err(_) => bad_lines += 1,
        }
    }
    (records, bad_lines)
}

/// Wall-clock and volume metadata for one invocation, segregated from the
/// deterministic artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub tool_version: String,
    pub model_id: String,
    pub started_unix_ms: u128,
    pub wall_ms: u128,
    pub samples_total: usize,
    pub samples_queried: usize,
    pub samples_resumed: usize,
}

/// Execute an audit end to end.
///
/// Aborts only on config validation, ingest, or model-open failure; module
/// errors during sample processing are recorded per sample. Completed
/// samples are appended to `checkpoint.jsonl` as they finish, so a killed
/// run can resume without re-querying them.
pub fn run_audit(config: &AuditConfig) -> Result<AuditRunRecord> {
    let started = Instant::now();
    let started_unix_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    config.validate()?;
    let schema = AttributeSchema::by_name(&config.attribute)?;
    let handle = open_model(&config.model)?;
    handle.require(Capability::TraceCapture)?;
    handle.require(Capability::TokenPruning)?;

    let mut issues = Vec::new();
    let mut tsb_enabled = config.tsb.enabled;
    if tsb_enabled && handle.require(Capability::TextEmbedding).is_err() {
        issues.push(format!(
            "tsb disabled: model {} lacks text embedding",
            handle.model_id()
        ));
        tsb_enabled = false;
    }

    let catalog = ConceptCatalog::facet();
    let load = load_samples(&config.annotations, &catalog)?;
    for reject in &load.rejects {
        issues.push(format!("ingest reject row {}: {}", reject.row, reject.reason));
    }
    let mut samples = load.samples;
    if let Some(wanted) = &config.concepts {
        samples.retain(|s| wanted.contains(&s.occupation));
    }

    std::fs::create_dir_all(&config.output)?;
    let checkpoint_path = config.output.join("checkpoint.jsonl");
    let (mut restored, bad_lines) = if config.resume {
        read_checkpoint(&checkpoint_path)
    } else {
        (BTreeMap::new(), 0)
    };
    if bad_lines > 0 {
        issues.push(format!("checkpoint: skipped {bad_lines} unreadable line(s)"));
    }
    restored.retain(|id, _| samples.iter().any(|s| &s.id == id));
    let resumed = restored.len();
    let pending: Vec<&Sample> =
        samples.iter().filter(|s| !restored.contains_key(&s.id)).collect();
    let queried = pending.len();

    // Resumed runs append below the restored records; fresh runs start the
    // checkpoint over so stale lines from an earlier run cannot linger.
    let mut checkpoint_options = std::fs::OpenOptions::new();
    checkpoint_options.create(true);
    if config.resume {
        checkpoint_options.append(true);
    } else {
        checkpoint_options.write(true).truncate(true);
    }
    let checkpoint = Mutex::new(checkpoint_options.open(&checkpoint_path)?);

    let image_root = config.resolve_image_root();
    let forge = PromptForge::frozen();
    let evaluator = DialogueEvaluator::new(
        &forge,
        &config.dialogue.lexicon,
        config.dialogue.confidence,
        config.dialogue.cf_policy,
    );

    let work = |sample: &&Sample| -> Result<SampleRecord> {
        let record =
            process_sample(&handle, &forge, &evaluator, &schema, config, &image_root, sample);
        let line = serde_json::to_string(&record)?;
        {
            let mut file = checkpoint.lock().expect("checkpoint lock poisoned");
            writeln!(file, "{line}")?;
            file.flush()?;
        }
        Ok(record)
    };
    let fresh: Vec<SampleRecord> = if handle.reentrant() {
        pending.par_iter().map(work).collect::<Result<_>>()?
    } else {
        pending.iter().map(work).collect::<Result<_>>()?
    };

    let mut records: Vec<SampleRecord> = restored.into_values().chain(fresh).collect();
    records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));

    let totals = AuditTotals {
        samples: records.len(),
        completed: records.iter().filter(|r| r.fairness.is_some()).count(),
        excluded: records.iter().filter(|r| r.excluded.is_some()).count(),
        errored: records.iter().filter(|r| r.error.is_some()).count(),
        resumed,
        rejected_rows: load.rejects.len(),
    };

    let (reports, top, sign, mut aggregate_issues) =
        aggregate_records(&records, &schema, config.top_k);
    issues.append(&mut aggregate_issues);

    let tsb = if tsb_enabled {
        let mut concepts: Vec<String> = records.iter().map(|r| r.concept.clone()).collect();
        concepts.sort();
        concepts.dedup();
        match tsb_table(&handle, &concepts, &schema, config.tsb_layer()) {
            Ok(table) => Some(table),
            Err(e) => {
                issues.push(format!("tsb table: {e}"));
                None
            }
        }
    } else {
        None
    };

    let record = AuditRunRecord {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: Some(config.clone()),
        samples: records,
        reports,
        top,
        sign,
        tsb,
        issues,
        totals,
    };

    let meta = RunMeta {
        tool_version: record.tool_version.clone(),
        model_id: handle.model_id(),
        started_unix_ms,
        wall_ms: started.elapsed().as_millis(),
        samples_total: record.totals.samples,
        samples_queried: queried,
        samples_resumed: resumed,
    };
    std::fs::write(
        config.output.join("meta.json"),
        serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )?;

    Ok(record)
}
