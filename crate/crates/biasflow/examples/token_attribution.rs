//! Gradient-weighted token attribution on a scripted trace: channel weights,
//! per-layer scores, layer averaging, key-token selection, and the heatmap.

use biasflow::attribution::{attribute, attribution_heatmap, AttributionConfig};
use biasflow::gateway::mock::{make_mock, Scenario};
use biasflow::gateway::ImageRef;
use biasflow::Result;

fn main() -> Result<()> {
    let scenario_path = format!(
        "{}/fixtures/scenarios/biased_nurse.json",
        env!("CARGO_MANIFEST_DIR")
    );
    let handle = make_mock(Scenario::from_path(scenario_path)?)?;

    let image = ImageRef::new("nurse-female-000", "images/female/nurse-female-000.png");
    let config = AttributionConfig::for_7b_class();
    let bundle = handle.query_with_trace(
        &image,
        "Is there a nurse in the image?",
        &config.layers,
    )?;
    println!(
        "traced layers {:?}; answer {:?} with answer-step logit {}",
        config.layers, bundle.response.text, bundle.answer_logit
    );

    let result = attribute(&bundle, &config)?;
    println!("averaged attribution over the span: {:?}", result.averaged);
    println!("normalized:                         {:?}", result.normalized.as_deref());
    println!(
        "key tokens at tau {} (strict): {:?} (degenerate: {})",
        config.tau, result.key_set, result.degenerate
    );

    let heatmap = attribution_heatmap(&result.averaged, bundle.meta.grid)?;
    println!("heatmap {}x{}:", heatmap.rows(), heatmap.cols());
    for row in 0..heatmap.rows() {
        let cells: Vec<String> = (0..heatmap.cols())
            .map(|col| format!("{:5.2}", heatmap.value(row, col)))
            .collect();
        println!("  [{}]", cells.join(", "));
    }
    Ok(())
}
