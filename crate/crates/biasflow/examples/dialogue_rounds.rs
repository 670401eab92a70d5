//! The multi-round dialogue protocol on one sample: sensitive question over
//! the full image, again over the key tokens only, the gated counterfactual
//! round, and the score-sheet case the transcript lands on.

use biasflow::attribution::{attribute, AttributionConfig};
use biasflow::dialogue::{
    fairness_score, ConfidenceMode, DialogueEvaluator, PolarityLexicon, RoundsOutcome,
};
use biasflow::gateway::mock::{make_mock, Scenario};
use biasflow::gateway::{ImageRef, KeepMask};
use biasflow::prompts::{AttributeSchema, CfPolicy, PromptForge};
use biasflow::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let scenario_path = format!(
        "{}/fixtures/scenarios/biased_nurse.json",
        env!("CARGO_MANIFEST_DIR")
    );
    let handle = make_mock(Scenario::from_path(scenario_path)?)?;
    let forge = PromptForge::frozen();
    let lexicon = PolarityLexicon::default();
    let evaluator = DialogueEvaluator::new(
        &forge,
        &lexicon,
        ConfidenceMode::Normalized,
        CfPolicy::SeededUniform,
    );
    let schema = AttributeSchema::gender();

    // key tokens come from attributing the neutral question first
    let image = ImageRef::new("nurse-female-000", "images/female/nurse-female-000.png");
    let config = AttributionConfig::for_7b_class();
    let bundle = handle.query_with_trace(&image, "Is there a nurse in the image?", &config.layers)?;
    let result = attribute(&bundle, &config)?;
    let key = KeepMask::new(result.key_set.clone(), bundle.span())?;
    println!("key tokens for {}: {:?}", image.id, key.kept());

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    match evaluator.run_rounds(&handle, &image, &key, &schema, "female", &mut rng)? {
        RoundsOutcome::Completed(rounds) => {
            for round in &rounds {
                println!(
                    "{:>2?} [{:?}] {:?} -> {:?} ({:?}, conf {:.4})",
                    round.tag, round.mask, round.prompt, round.text, round.polarity,
                    round.confidence
                );
            }
            let record = fairness_score(&image.id, rounds, result.degenerate)?;
            println!(
                "score sheet case {} -> fairness score {:+.4}",
                record.case_id, record.score
            );
        }
        RoundsOutcome::Excluded(excluded) => {
            println!(
                "sample excluded at {:?}: {} ({:?})",
                excluded.stage, excluded.reason, excluded.response_text
            );
        }
    }
    Ok(())
}
