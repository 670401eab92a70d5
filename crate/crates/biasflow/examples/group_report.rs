//! Group-level aggregation from per-sample outcomes: accuracies, the
//! accuracy gap, dominant/disadvantaged ranking, fairness score difference,
//! and cross-concept sign agreement.

use biasflow::metrics::{
    build_group_report, sign_agreement, top_k_reports, ConceptOutcome, DiffMode,
};
use biasflow::prompts::AttributeSchema;
use biasflow::Result;

fn outcomes(group: &str, pattern: &[(bool, f64)]) -> Vec<ConceptOutcome> {
    pattern
        .iter()
        .map(|&(correct, fairness)| ConceptOutcome {
            group: group.to_string(),
            correct: Some(correct),
            fairness: Some(fairness),
        })
        .collect()
}

fn main() -> Result<()> {
    let schema = AttributeSchema::gender();

    // a concept where male samples answer better and female key tokens carry
    // the sensitive signal (slightly negative per-sample fairness scores)
    let mut nurse = outcomes("male", &[(true, 1.0), (true, 1.0), (true, 1.0), (false, 1.0)]);
    nurse.extend(outcomes("female", &[(true, -0.1), (false, -0.1), (false, -0.1), (true, -0.1)]));
    let nurse = build_group_report("nurse", &schema, DiffMode::GenderSigned, &nurse)?;

    // and one leaning the other way
    let mut guard = outcomes("male", &[(true, -0.2), (false, -0.2), (false, -0.2)]);
    guard.extend(outcomes("female", &[(true, 1.0), (true, 1.0), (false, 1.0)]));
    let guard = build_group_report("guard", &schema, DiffMode::GenderSigned, &guard)?;

    for report in [&nurse, &guard] {
        println!(
            "{:<6} acc_diff {:+.4} fsd {:+.4} dominant {:<7} disadvantaged {:<7}",
            report.concept, report.acc_diff, report.fsd, report.dominant, report.disadvantaged
        );
        for group in &report.groups {
            println!(
                "   {:<7} accuracy {:.3} ({} of {} scored) mean fairness {:+.3}",
                group.group, group.accuracy, group.correct, group.n, group.mean_fairness
            );
        }
    }

    let pairs: Vec<(f64, f64)> = [&nurse, &guard].iter().map(|r| (r.acc_diff, r.fsd)).collect();
    let agreement = sign_agreement(&pairs)?;
    println!(
        "sign agreement over {} concepts: rate {:.2}, spearman {:?}",
        agreement.n, agreement.rate, agreement.spearman
    );

    let top = top_k_reports(&[nurse, guard], 1);
    println!("largest |acc_diff|: {}", top[0].concept);
    Ok(())
}
