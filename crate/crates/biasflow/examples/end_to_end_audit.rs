//! The whole pipeline in one call: load a config, run the audit against the
//! scripted scenario, and emit every artifact into a temporary directory.

use biasflow::audit::report::{emit_report, ReportFormat};
use biasflow::audit::{run_audit, AuditConfig};
use biasflow::Result;

fn main() -> Result<()> {
    let config_path = format!(
        "{}/fixtures/configs/biased_nurse.toml",
        env!("CARGO_MANIFEST_DIR")
    );
    let mut config = AuditConfig::from_toml_path(config_path)?;
    config.output = std::env::temp_dir().join("biasflow-example-audit");

    let record = run_audit(&config)?;
    let totals = &record.totals;
    println!(
        "audited {} samples: {} scored, {} excluded, {} errored",
        totals.samples, totals.completed, totals.excluded, totals.errored
    );
    for report in &record.reports {
        println!(
            "{}: acc_diff {:+.4} fsd {:+.4} ({} dominant, {} disadvantaged)",
            report.concept, report.acc_diff, report.fsd, report.dominant, report.disadvantaged
        );
    }
    if let Some(sign) = &record.sign {
        println!("acc_diff/fsd sign agreement: {:.2} over {} concept(s)", sign.rate, sign.n);
    }
    if let Some(table) = &record.tsb {
        for row in table {
            let cells: Vec<String> = row
                .groups
                .iter()
                .map(|e| match e.cell.value() {
                    Some(v) => format!("{}={v:.4}", e.group),
                    None => format!("{}=err", e.group),
                })
                .collect();
            println!("tsb[{}]: {}", row.concept, cells.join(" "));
        }
    }

    let manifest = emit_report(&config.output, &record, &ReportFormat::ALL)?;
    println!("\nartifacts under {}:", config.output.display());
    for entry in &manifest.entries {
        println!("  {}  sha256:{}...", entry.path, &entry.sha256[..12]);
    }
    manifest.verify(&config.output)?;
    println!("manifest verified");
    Ok(())
}
