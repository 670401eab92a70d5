//! Behavioral contract of the scripted mock adapter: seeded accuracy draws
//! hit their long-run frequency, transcripts are identical across handles of
//! the same scenario, and draw outcomes never depend on query order.

use biasflow::gateway::mock::{make_mock, MatchKey, Scenario, ScenarioBuilder};
use biasflow::gateway::{Capability, ImageRef};

fn accuracy_scenario(accuracy: f64) -> Scenario {
    ScenarioBuilder::new("freq-mock", 12, (2, 2))
        .seed(77)
        .lexicon(&["yes"], &["no"])
        .respond_with_accuracy(
            MatchKey::default(),
            "Yes.",
            &[("yes", 3.0), ("no", -2.0)],
            accuracy,
            "No.",
            &[("yes", -2.0), ("no", 3.0)],
        )
        .build()
        .unwrap()
}

#[test]
fn seeded_accuracy_matches_long_run_frequency() {
    let handle = make_mock(accuracy_scenario(0.7)).unwrap();
    let total = 2000usize;
    let mut hits = 0usize;
    for i in 0..total {
        let image = ImageRef::new(format!("img-{i:04}"), format!("images/img-{i:04}.png"));
        let response = handle.query(&image, "Is there a nurse in the image?", None).unwrap();
        if response.text == "Yes." {
            hits += 1;
        }
    }
    let frequency = hits as f64 / total as f64;
    assert!(
        (frequency - 0.7).abs() <= 0.02,
        "observed frequency {frequency} strays from scripted accuracy 0.7"
    );
}

#[test]
fn two_handles_of_one_scenario_agree_verbatim() {
    let a = make_mock(accuracy_scenario(0.6)).unwrap();
    let b = make_mock(accuracy_scenario(0.6)).unwrap();
    for i in 0..200 {
        let image = ImageRef::new(format!("img-{i:03}"), format!("images/img-{i:03}.png"));
        let prompt = format!("Is there a nurse in image {i}?");
        let ra = a.query(&image, &prompt, None).unwrap();
        let rb = b.query(&image, &prompt, None).unwrap();
        assert_eq!(ra, rb, "handles diverged on image {i}");
    }
}

#[test]
fn draw_outcomes_are_independent_of_query_order() {
    let handle = make_mock(accuracy_scenario(0.5)).unwrap();
    let prompt = "Is there a nurse in the image?";
    let image = |i: usize| ImageRef::new(format!("img-{i:03}"), format!("images/img-{i:03}.png"));

    let forward: Vec<String> =
        (0..100).map(|i| handle.query(&image(i), prompt, None).unwrap().text).collect();
    let mut backward: Vec<String> = (0..100).rev().map(|i| {
        handle.query(&image(i), prompt, None).unwrap().text
    }).collect();
    backward.reverse();
    assert_eq!(forward, backward, "query order changed a draw outcome");
}

#[test]
fn mask_label_feeds_the_draw_but_stays_deterministic() {
    // Same image, same prompt, different mask class: the draw may differ
    // between mask classes but must be stable within one.
    let scenario = ScenarioBuilder::new("mask-mock", 12, (2, 2))
        .seed(3)
        .lexicon(&["yes"], &["no"])
        .respond_with_accuracy(
            MatchKey::default(),
            "Yes.",
            &[("yes", 3.0), ("no", -2.0)],
            0.5,
            "No.",
            &[("yes", -2.0), ("no", 3.0)],
        )
        .build()
        .unwrap();
    let handle = make_mock(scenario).unwrap();
    assert!(handle.capabilities().supports(Capability::TokenPruning));

    let image = ImageRef::new("img-000", "images/img-000.png");
    let span = handle.visual_span(&image).unwrap();
    let mask = span.full_mask();
    let prompt = "Is there a nurse in the image?";

    let full_1 = handle.query(&image, prompt, None).unwrap();
    let full_2 = handle.query(&image, prompt, None).unwrap();
    assert_eq!(full_1, full_2);

    let masked_1 = handle.query(&image, prompt, Some(&mask)).unwrap();
    let masked_2 = handle.query(&image, prompt, Some(&mask)).unwrap();
    assert_eq!(masked_1, masked_2);
}
