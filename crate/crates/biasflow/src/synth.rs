//! Synthetic audit fixtures: scripted scenarios with a planted accuracy gap
//! and planted sensitive-information-bearing key tokens.
//!
//! The generator builds a scenario whose outcome under the full pipeline is
//! known by construction: each group answers the neutral question with its
//! configured accuracy, and groups flagged as carrying sensitive information
//! keep answering the sensitive question confidently after pruning (score
//! sheet case 2, slightly negative) while the others flip to a negative
//! answer (case 3, +1). The planted accuracy ranking therefore fixes the
//! signs of both the accuracy gap and the fairness score difference.

use serde::{Deserialize, Serialize};

use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::gateway::mock::{MaskSel, MatchKey, Scenario, ScenarioBuilder, ScriptedLayer};
use crate::gateway::PixelBox;
use crate::prompts::AttributeSchema;

/// One group's planted behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGroup {
    pub name: String,
    /// Probability the neutral question is answered correctly.
    pub accuracy: f64,
    /// Whether this group's key tokens keep the sensitive answer positive
    /// after pruning.
    pub keys_carry_sensitive: bool,
}

/// Recipe for one synthetic scenario plus its annotation rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub model_id: String,
    pub concept: String,
    /// Schema name: gender, age, or skin_tone.
    pub attribute: String,
    /// Must cover the schema's groups exactly.
    pub groups: Vec<SynthGroup>,
    pub samples_per_group: usize,
    pub seed: u64,
    /// Attribution layers the traces script.
    pub layers: Vec<usize>,
    pub layer_count: usize,
    pub grid: (usize, usize),
}

impl SynthSpec {
    /// A two-group gender recipe: `dominant` answers at 0.9, the other at
    /// `disadvantaged_accuracy`, and the disadvantaged group's key tokens
    /// carry the sensitive information.
    pub fn gender_gap(
        concept: &str,
        dominant: &str,
        disadvantaged_accuracy: f64,
        samples_per_group: usize,
        seed: u64,
    ) -> Result<Self> {
        let schema = AttributeSchema::gender();
        if !schema.contains(dominant) {
            return Err(Error::GroupNotInSchema {
                group: dominant.to_string(),
                attribute: "gender".to_string(),
            });
        }
        let groups = schema
            .groups()
            .iter()
            .map(|g| SynthGroup {
                name: g.clone(),
                accuracy: if g == dominant { 0.9 } else { disadvantaged_accuracy },
                keys_carry_sensitive: g != dominant,
            })
            .collect();
        Ok(Self {
            model_id: format!("synth-{concept}-{seed}"),
            concept: concept.to_string(),
            attribute: "gender".to_string(),
            groups,
            samples_per_group,
            seed,
            layers: vec![10, 11, 12],
            layer_count: 12,
            grid: (2, 2),
        })
    }
}

/// A generated scenario and the matching annotation rows. The scenario never
/// reads pixels, so the image paths do not need to exist on disk.
#[derive(Debug, Clone)]
pub struct SynthFixture {
    pub scenario: Scenario,
    pub samples: Vec<Sample>,
}

/// Build the scripted scenario and annotation rows for a spec.
pub fn synthesize(spec: &SynthSpec) -> Result<SynthFixture> {
    let schema = AttributeSchema::by_name(&spec.attribute)?;
    let mut names: Vec<&str> = spec.groups.iter().map(|g| g.name.as_str()).collect();
    names.sort_unstable();
    let mut expected: Vec<&str> = schema.groups().iter().map(String::as_str).collect();
    expected.sort_unstable();
    if names != expected {
        return Err(Error::InvalidSchema(format!(
            "synthetic groups {names:?} must cover the {} schema exactly",
            spec.attribute
        )));
    }
    if spec.samples_per_group == 0 {
        return Err(Error::EmptyInput("samples_per_group".into()));
    }
    for group in &spec.groups {
        if !(0.0..=1.0).contains(&group.accuracy) {
            return Err(Error::Config(format!(
                "accuracy {} for group {} outside [0, 1]",
                group.accuracy, group.name
            )));
        }
    }

    let tokens = spec.grid.0 * spec.grid.1;
    let mut builder = ScenarioBuilder::new(&spec.model_id, spec.layer_count, spec.grid)
        .seed(spec.seed)
        .embedding(&spec.concept, vec![1.0, 0.0]);

    // Neutral rules first so that a tie on specificity (possible when the
    // concept's name is as short as a group term it happens to contain)
    // resolves toward the neutral answer.
    for group in &spec.groups {
        let in_group = format!("/{}/", group.name);
        builder = builder.respond_with_accuracy(
            MatchKey::default()
                .prompt_contains(&spec.concept)
                .image_contains(&in_group),
            "Yes.",
            &[("yes", 3.0), ("no", -2.0)],
            group.accuracy,
            "No.",
            &[("yes", -2.0), ("no", 3.0)],
        );
    }
    for (gi, group) in spec.groups.iter().enumerate() {
        let in_group = format!("/{}/", group.name);
        // R1: sensitive question over the full image is confidently positive.
        builder = builder.respond(
            MatchKey::default()
                .prompt_contains(&group.name)
                .image_contains(&in_group)
                .mask(MaskSel::Full),
            "Yes.",
            &[("yes", 2.0), ("no", 0.0)],
        );
        // R2: pruned view either still carries the sensitive signal or loses it.
        if group.keys_carry_sensitive {
            builder = builder.respond(
                MatchKey::default()
                    .prompt_contains(&group.name)
                    .image_contains(&in_group)
                    .mask(MaskSel::Pruned),
                "Yes.",
                &[("yes", 5.0), ("no", 0.0)],
            );
        } else {
            builder = builder.respond(
                MatchKey::default()
                    .prompt_contains(&group.name)
                    .image_contains(&in_group)
                    .mask(MaskSel::Pruned),
                "No.",
                &[("yes", -1.0), ("no", 3.0)],
            );
        }
        // CF: asking about any other group over the pruned view is negative.
        // These patterns are longer in total than the own-term rule above, so
        // they win when both match (e.g. "female" containing "male").
        for other in &spec.groups {
            if other.name == group.name {
                continue;
            }
            builder = builder.respond(
                MatchKey::default()
                    .prompt_contains(&other.name)
                    .image_contains(&in_group)
                    .mask(MaskSel::Pruned),
                "No.",
                &[("yes", -3.0), ("no", 3.0)],
            );
        }

        // One hot token per group; features make the key set unambiguous.
        let hot = gi % tokens;
        let mut features = vec![0.5; tokens];
        features[hot] = 5.0;
        let layers = spec
            .layers
            .iter()
            .map(|&layer| ScriptedLayer {
                layer,
                features: vec![features.clone()],
                gradients: vec![vec![1.0; tokens]],
            })
            .collect();
        builder = builder.trace(MatchKey::default().image_contains(&in_group), layers);

        builder = builder.embedding(&group.name, vec![0.0, (gi + 1) as f64]);
    }

    let scenario = builder.build()?;
    let mut samples = Vec::new();
    for group in &spec.groups {
        for i in 0..spec.samples_per_group {
            let id = format!("{}-{}-{i:03}", spec.concept, group.name);
            let image = format!("images/{}/{id}.png", group.name);
            let labels = attribute_labels(&spec.attribute, &group.name)?;
            samples.push(Sample {
                id,
                image,
                bbox: PixelBox { x: 0, y: 0, w: 64, h: 64 },
                occupation: spec.concept.clone(),
                gender: labels.0,
                age: labels.1,
                skin_tone: labels.2,
            });
        }
    }
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(SynthFixture { scenario, samples })
}

/// (gender, age, skin_tone) labels: the audited attribute takes the group
/// name, the others take their schema's first group.
fn attribute_labels(attribute: &str, group: &str) -> Result<(String, String, String)> {
    let defaults = ("male", "young", "light");
    Ok(match attribute {
        "gender" => (group.to_string(), defaults.1.into(), defaults.2.into()),
        "age" => (defaults.0.into(), group.to_string(), defaults.2.into()),
        "skin_tone" => (defaults.0.into(), defaults.1.into(), group.to_string()),
        other => return Err(Error::InvalidSchema(format!("unknown attribute {other:?}"))),
    })
}

/// Render annotation rows as the CSV the ingest path reads.
pub fn annotations_csv(samples: &[Sample]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for sample in samples {
        writer.serialize(sample)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{
        fairness_score, ConfidenceMode, DialogueEvaluator, PolarityLexicon, RoundsOutcome,
    };
    use crate::gateway::mock::make_mock;
    use crate::gateway::{ImageRef, KeepMask, VisualSpan};
    use crate::prompts::{CfPolicy, PromptForge};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> SynthFixture {
        let spec = SynthSpec::gender_gap("nurse", "male", 0.55, 3, 7).unwrap();
        synthesize(&spec).unwrap()
    }

    #[test]
    fn scenario_validates_and_samples_cover_groups() {
        let fixture = fixture();
        assert_eq!(fixture.samples.len(), 6);
        let males = fixture.samples.iter().filter(|s| s.gender == "male").count();
        assert_eq!(males, 3);
        // ids sorted and unique
        let ids: Vec<&str> = fixture.samples.iter().map(|s| s.id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn annotations_round_trip_through_ingest() {
        let fixture = fixture();
        let csv = annotations_csv(&fixture.samples).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("annotations.csv");
        std::fs::write(&path, csv).unwrap();
        let catalog = crate::corpus::ConceptCatalog::facet();
        let report = crate::corpus::load_samples(&path, &catalog).unwrap();
        assert!(report.rejects.is_empty());
        assert_eq!(report.samples, fixture.samples);
    }

    #[test]
    fn planted_rounds_score_as_designed() {
        let fixture = fixture();
        let handle = make_mock(fixture.scenario.clone()).unwrap();
        let forge = PromptForge::frozen();
        let lexicon = PolarityLexicon::default();
        let evaluator = DialogueEvaluator::new(
            &forge,
            &lexicon,
            ConfidenceMode::Normalized,
            CfPolicy::SeededUniform,
        );
        let schema = AttributeSchema::gender();
        let span = VisualSpan::contiguous(0, 4).unwrap();
        let key = KeepMask::new(vec![1], &span).unwrap();

        let run = |sample: &Sample| {
            let image = ImageRef::new(&sample.id, &sample.image);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            match evaluator
                .run_rounds(&handle, &image, &key, &schema, &sample.gender, &mut rng)
                .unwrap()
            {
                RoundsOutcome::Completed(rounds) => {
                    fairness_score(&sample.id, rounds, false).unwrap()
                }
                RoundsOutcome::Excluded(e) => panic!("unexpected exclusion: {e:?}"),
            }
        };

        let male = fixture.samples.iter().find(|s| s.gender == "male").unwrap();
        let record = run(male);
        assert_eq!(record.case_id, 3);
        assert_eq!(record.score, 1.0);

        let female = fixture.samples.iter().find(|s| s.gender == "female").unwrap();
        let record = run(female);
        assert_eq!(record.case_id, 2);
        // conf1 = sigmoid(2), conf2 = sigmoid(5); the difference is negative
        let expected = 1.0 / (1.0 + (-2.0f64).exp()) - 1.0 / (1.0 + (-5.0f64).exp());
        assert!((record.score - expected).abs() < 1e-12);
        assert!(record.score < 0.0);
    }

    #[test]
    fn group_coverage_is_enforced() {
        let mut spec = SynthSpec::gender_gap("nurse", "male", 0.5, 2, 1).unwrap();
        spec.groups.pop();
        assert!(matches!(synthesize(&spec), Err(Error::InvalidSchema(_))));
        let mut bad = SynthSpec::gender_gap("nurse", "male", 0.5, 2, 1).unwrap();
        bad.groups[0].accuracy = 1.5;
        assert!(synthesize(&bad).is_err());
    }
}
