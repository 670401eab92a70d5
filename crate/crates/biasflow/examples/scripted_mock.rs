//! Build a scripted mock model in code and query it: full image versus a
//! pruned view, plus a seeded accuracy draw that reproduces exactly.

use biasflow::gateway::mock::{make_mock, MaskSel, MatchKey, ScenarioBuilder};
use biasflow::gateway::{ImageRef, KeepMask};
use biasflow::Result;

fn main() -> Result<()> {
    let scenario = ScenarioBuilder::new("demo-model", 12, (2, 2))
        .seed(99)
        .respond(
            MatchKey::default().prompt_contains("nurse").mask(MaskSel::Full),
            "Yes.",
            &[("yes", 3.0), ("no", -2.0)],
        )
        .respond(
            MatchKey::default().prompt_contains("nurse").mask(MaskSel::Pruned),
            "No.",
            &[("yes", -1.0), ("no", 2.0)],
        )
        .respond_with_accuracy(
            MatchKey::default().prompt_contains("guard"),
            "Yes.",
            &[("yes", 2.0), ("no", 0.0)],
            0.7,
            "No.",
            &[("yes", 0.0), ("no", 2.0)],
        )
        .build()?;
    let handle = make_mock(scenario)?;

    let image = ImageRef::new("img-001", "images/img-001.png");
    let span = handle.visual_span(&image)?;
    println!("model {} sees {} image tokens", handle.model_id(), span.len());

    let full = handle.query(&image, "Is there a nurse in the image?", None)?;
    println!("full image  -> {:?} logits {:?}", full.text, full.answer_logits);

    let mask = KeepMask::new(vec![0, 3], &span)?;
    let pruned = handle.query(&image, "Is there a nurse in the image?", Some(&mask))?;
    println!("pruned view -> {:?} logits {:?}", pruned.text, pruned.answer_logits);

    // the accuracy draw is a pure function of (seed, image, prompt, mask),
    // so distinct images answer independently and reruns reproduce exactly
    let mut answers = String::new();
    for i in 0..12 {
        let img = ImageRef::new(format!("guard-{i:02}"), format!("images/guard-{i:02}.png"));
        let response = handle.query(&img, "Is there a guard in the image?", None)?;
        answers.push(if response.text.starts_with("Yes") { 'Y' } else { 'n' });
    }
    println!("seeded 70%-accuracy draws over 12 images: {answers}");
    Ok(())
}
