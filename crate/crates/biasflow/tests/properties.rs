//! Property tests for the small pure kernels: polarity parsing, confidence
//! bounds, score clamping, span/mask validation, counterfactual rewriting,
//! and the text-bias range.

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use biasflow::dialogue::{
    classify_polarity, confidence, fairness_score, ConfidenceMode, MaskClass, Polarity,
    PolarityLexicon, RoundResult, RoundTag,
};
use biasflow::gateway::{KeepMask, VisualSpan};
use biasflow::prompts::{AttributeSchema, CfPolicy, PromptForge};
use biasflow::tsb::tsb;

fn lexicon() -> PolarityLexicon {
    PolarityLexicon::default()
}

proptest! {
    /// The first alphabetic word decides the polarity no matter what
    /// punctuation precedes it or what trailing words follow.
    #[test]
    fn first_word_wins(
        lead in "[ \t.,!?;:]{0,4}",
        positive in proptest::bool::ANY,
        tail in "[a-z ]{0,30}",
    ) {
        let word = if positive { "yes" } else { "no" };
        let text = format!("{lead}{word} {tail}");
        let expected = if positive { Polarity::Positive } else { Polarity::Negative };
        prop_assert_eq!(classify_polarity(&text, &lexicon()), expected);
    }

    /// Normalized confidence is a sigmoid: within (0, 1] for finite logits
    /// (large margins saturate to 1.0 at float precision), 0.5 exactly when
    /// the sides tie, and above 0.5 exactly when the matched side leads.
    #[test]
    fn confidence_stays_bounded(yes in -50.0f64..50.0, no in -50.0f64..50.0) {
        let logits = BTreeMap::from([("yes".to_string(), yes), ("no".to_string(), no)]);
        let conf = confidence(&logits, Polarity::Positive, &lexicon(), ConfidenceMode::Normalized)
            .unwrap();
        prop_assert!(conf.value > 0.0 && conf.value <= 1.0);
        prop_assert_eq!(conf.matched_mean, yes);
        prop_assert_eq!(conf.opposing_mean, no);
        if yes == no {
            prop_assert_eq!(conf.value, 0.5);
        }
        if yes > no {
            prop_assert!(conf.value > 0.5);
        }
    }

    /// Whatever the confidences, a completed transcript scores within
    /// [-1, 1]; the difference cases saturate instead of overflowing.
    #[test]
    fn scores_always_clamp(
        c1 in -3.0f64..3.0,
        c2 in -3.0f64..3.0,
        r1_positive in proptest::bool::ANY,
    ) {
        let polarity1 = if r1_positive { Polarity::Positive } else { Polarity::Negative };
        let rounds = vec![
            RoundResult {
                tag: RoundTag::R1,
                prompt: "p".into(),
                bank: None,
                template_index: None,
                counterpart: None,
                mask: MaskClass::Full,
                text: "t".into(),
                polarity: polarity1,
                confidence: c1,
                raw_mean_logit: c1,
            },
            RoundResult {
                tag: RoundTag::R2,
                prompt: "p".into(),
                bank: None,
                template_index: None,
                counterpart: None,
                mask: MaskClass::KeyOnly,
                text: "t".into(),
                polarity: Polarity::Negative,
                confidence: c2,
                raw_mean_logit: c2,
            },
        ];
        let record = fairness_score("s", rounds, false).unwrap();
        prop_assert!((-1.0..=1.0).contains(&record.score));
    }

    /// Any subset of a span is a valid keep mask; any index outside it is
    /// rejected.
    #[test]
    fn masks_validate_against_their_span(
        start in 0usize..8,
        len in 1usize..12,
        picks in proptest::collection::vec(proptest::bool::ANY, 12),
        outside in 0usize..100,
    ) {
        let span = VisualSpan::contiguous(start, len).unwrap();
        let kept: Vec<usize> = span
            .indices()
            .iter()
            .zip(&picks)
            .filter(|(_, keep)| **keep)
            .map(|(&i, _)| i)
            .collect();
        // An empty mask is legal: an extreme threshold may select nothing.
        let mask = KeepMask::new(kept, &span).unwrap();
        prop_assert!(mask.validate_against(&span).is_ok());
        prop_assume!(!span.contains(outside));
        prop_assert!(KeepMask::new(vec![outside], &span).is_err());
    }

    /// Swapping the group term twice restores the original prompt, for every
    /// schema, group, and drawn template.
    #[test]
    fn counterfactual_swap_round_trips(
        attribute in prop_oneof!["gender", "age", "skin_tone"],
        group_pick in 0usize..3,
        seed in proptest::num::u64::ANY,
    ) {
        let forge = PromptForge::frozen();
        let schema = AttributeSchema::by_name(&attribute).unwrap();
        let group = &schema.groups()[group_pick % schema.groups().len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let draw = forge.sensitive_prompt(&schema, group, &mut rng).unwrap();
        let cf = forge
            .counterfactual_prompt(&draw.text, &schema, group, CfPolicy::FirstOther, &mut rng)
            .unwrap();
        prop_assert_ne!(&cf.counterpart, group);
        prop_assert_ne!(&cf.text, &draw.text);

        // The counterpart never collides with the original term mid-word, so
        // when the reverse rewrite picks the original group it lands on the
        // exact original text. For two-group schemas that is always.
        let back = forge
            .counterfactual_prompt(&cf.text, &schema, &cf.counterpart, CfPolicy::FirstOther, &mut rng)
            .unwrap();
        if &back.counterpart == group {
            prop_assert_eq!(back.text, draw.text);
        }
        if schema.groups().len() == 2 {
            prop_assert_eq!(&back.counterpart, group);
        }
    }

    /// The text-bias score lives in [0, 2] whenever it is defined.
    #[test]
    fn tsb_range_holds(
        h_n in proptest::collection::vec(-5.0f64..5.0, 2..6),
        h_s in proptest::collection::vec(-5.0f64..5.0, 2..6),
    ) {
        prop_assume!(h_n.len() == h_s.len());
        if let Ok(value) = tsb(&h_n, &h_s) {
            prop_assert!((0.0..=2.0).contains(&value));
        }
    }
}
