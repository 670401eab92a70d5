//! Textual sensitivity bias: score concept embeddings against sensitive
//! directions, directly and as a per-concept table.

use biasflow::gateway::mock::{make_mock, Scenario};
use biasflow::prompts::AttributeSchema;
use biasflow::tsb::{render_csv, tsb, tsb_table};
use biasflow::Result;

fn main() -> Result<()> {
    // hand-held: orthogonal embeddings give 1 - cos 45 deg
    let value = tsb(&[1.0, 0.0], &[0.0, 1.0])?;
    println!("tsb((1,0), (0,1)) = {value:.6}");
    // a zero sensitive embedding leaves the direction untouched
    println!("tsb((3,4), 0)     = {:.6}", tsb(&[3.0, 4.0], &[0.0, 0.0])?);

    let scenario_path = format!(
        "{}/fixtures/scenarios/biased_nurse.json",
        env!("CARGO_MANIFEST_DIR")
    );
    let handle = make_mock(Scenario::from_path(scenario_path)?)?;
    let schema = AttributeSchema::gender();
    let table = tsb_table(&handle, &["nurse".to_string()], &schema, 11)?;
    for record in &table {
        for entry in &record.groups {
            match entry.cell.value() {
                Some(v) => println!("{} vs {}: {v:.6}", record.concept, entry.group),
                None => println!("{} vs {}: not computable (degenerate)", record.concept, entry.group),
            }
        }
    }
    println!("\nCSV rendering:\n{}", render_csv(&table)?);
    Ok(())
}
