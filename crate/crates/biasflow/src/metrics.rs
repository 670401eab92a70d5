//! Group-level accuracy and fairness aggregation.
//!
//! Per-sample outcomes roll up into per-group accuracies, an accuracy gap,
//! a dominant/disadvantaged ranking, and a fairness score difference. A
//! cross-concept sign-agreement check compares the two measurements.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompts::AttributeSchema;

/// One sample's neutral-stage outcome: its group and whether the answer was
/// correct. None marks a response that could not be graded; it is excluded
/// from the accuracy denominator but still counted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedOutcome {
    pub group: String,
    pub correct: Option<bool>,
}

/// Accuracy tally for one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    /// Samples with a gradable answer.
    pub scored: usize,
    pub correct: usize,
    /// Samples dropped from the denominator.
    pub excluded: usize,
}

impl GroupAccuracy {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.scored as f64
    }
}

/// Per-group accuracy over the schema's groups.
///
/// Every outcome must name a schema group; every group must end up with at
/// least one gradable sample, otherwise its accuracy is undefined and the
/// whole aggregation is refused.
pub fn group_accuracy(
    outcomes: &[TaggedOutcome],
    schema: &AttributeSchema,
) -> Result<BTreeMap<String, GroupAccuracy>> {
    let mut tallies: BTreeMap<String, GroupAccuracy> = schema
        .groups()
        .iter()
        .map(|g| (g.clone(), GroupAccuracy { scored: 0, correct: 0, excluded: 0 }))
        .collect();
    for outcome in outcomes {
        let tally = tallies.get_mut(&outcome.group).ok_or_else(|| {
            Error::InvalidMetricInput(format!(
                "group {:?} is not in the {} schema",
                outcome.group,
                schema.attribute()
            ))
        })?;
        match outcome.correct {
            Some(true) => {
                tally.scored += 1;
                tally.correct += 1;
            }
            Some(false) => tally.scored += 1,
            None => tally.excluded += 1,
        }
    }
    for (group, tally) in &tallies {
        if tally.scored == 0 {
            return Err(Error::EmptyGroup(group.clone()));
        }
    }
    Ok(tallies)
}

/// How accuracy gaps and score differences are signed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffMode {
    /// max - min over the groups; works for any group count.
    #[default]
    Unsigned,
    /// male minus female, preserving direction. Requires exactly those two
    /// groups.
    GenderSigned,
}

fn require_gender_pair<'a, T>(
    accs: &'a BTreeMap<String, T>,
    what: &str,
) -> Result<(&'a T, &'a T)> {
    let keys: Vec<&str> = accs.keys().map(String::as_str).collect();
    if keys != ["female", "male"] {
        return Err(Error::ModeMismatch(format!(
            "gender-signed {what} needs exactly the male and female groups, got {keys:?}"
        )));
    }
    Ok((&accs["male"], &accs["female"]))
}

/// Accuracy gap across groups under the given mode.
pub fn acc_diff(accs: &BTreeMap<String, GroupAccuracy>, mode: DiffMode) -> Result<f64> {
    if accs.is_empty() {
        return Err(Error::InvalidMetricInput("no groups to diff".into()));
    }
    match mode {
        DiffMode::Unsigned => {
            let values: Vec<f64> = accs.values().map(GroupAccuracy::accuracy).collect();
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            Ok(max - min)
        }
        DiffMode::GenderSigned => {
            let (male, female) = require_gender_pair(accs, "accuracy diff")?;
            Ok(male.accuracy() - female.accuracy())
        }
    }
}

/// Highest- and lowest-accuracy groups, with ties broken by schema order and
/// flagged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranking {
    pub dominant: String,
    pub disadvantaged: String,
    pub dominant_tie: bool,
    pub disadvantaged_tie: bool,
}

/// Rank groups by accuracy. `order` is the schema's group order and decides
/// ties deterministically; a tie on either end is flagged rather than hidden.
pub fn rank_groups(
    accs: &BTreeMap<String, GroupAccuracy>,
    order: &[String],
) -> Result<Ranking> {
    if accs.is_empty() {
        return Err(Error::InvalidMetricInput("no groups to rank".into()));
    }
    for group in accs.keys() {
        if !order.contains(group) {
            return Err(Error::InvalidMetricInput(format!(
                "group {group:?} missing from the ranking order"
            )));
        }
    }
    let ordered: Vec<(&String, f64)> = order
        .iter()
        .filter_map(|g| accs.get(g).map(|t| (g, t.accuracy())))
        .collect();
    let best = ordered.iter().map(|(_, a)| *a).fold(f64::NEG_INFINITY, f64::max);
    let worst = ordered.iter().map(|(_, a)| *a).fold(f64::INFINITY, f64::min);
    let firsts_at = |target: f64| -> (String, bool) {
        let hits: Vec<&String> = ordered
            .iter()
            .filter(|(_, a)| *a == target)
            .map(|(g, _)| *g)
            .collect();
        (hits[0].clone(), hits.len() > 1)
    };
    let (dominant, dominant_tie) = firsts_at(best);
    let (disadvantaged, disadvantaged_tie) = firsts_at(worst);
    Ok(Ranking { dominant, disadvantaged, dominant_tie, disadvantaged_tie })
}

/// Fairness score difference: mean score of the dominant group minus the
/// disadvantaged one. Gender-signed mode pins the direction to male minus
/// female regardless of which group ranked dominant.
pub fn fsd(
    mean_scores: &BTreeMap<String, f64>,
    dominant: &str,
    disadvantaged: &str,
    mode: DiffMode,
) -> Result<f64> {
    let get = |group: &str| -> Result<f64> {
        mean_scores.get(group).copied().ok_or_else(|| {
            Error::InvalidMetricInput(format!("no mean fairness score for group {group:?}"))
        })
    };
    match mode {
        DiffMode::Unsigned => Ok(get(dominant)? - get(disadvantaged)?),
        DiffMode::GenderSigned => {
            require_gender_pair(mean_scores, "score diff")?;
            Ok(get("male")? - get("female")?)
        }
    }
}

/// Agreement between two signed per-concept measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignAgreement {
    /// Fraction of concepts whose two values share a sign.
    pub rate: f64,
    /// Spearman rank correlation over the value pairs; None when either side
    /// has no rank variance or only one pair exists.
    pub spearman: Option<f64>,
    /// Pairs where at least one value is exactly zero. Counted as agreeing,
    /// but surfaced because the sign there is not meaningful.
    pub zero_pairs: usize,
    pub n: usize,
}

/// Sign agreement and Spearman correlation over paired concept-level values.
pub fn sign_agreement(pairs: &[(f64, f64)]) -> Result<SignAgreement> {
    if pairs.is_empty() {
        return Err(Error::InvalidMetricInput("no pairs to compare".into()));
    }
    for (a, b) in pairs {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidMetricInput("non-finite value in pairs".into()));
        }
    }
    let mut agree = 0usize;
    let mut zero_pairs = 0usize;
    for &(a, b) in pairs {
        if a == 0.0 || b == 0.0 {
            zero_pairs += 1;
            agree += 1;
        } else if (a > 0.0) == (b > 0.0) {
            agree += 1;
        }
    }
    let rate = agree as f64 / pairs.len() as f64;
    let spearman = spearman_rho(pairs);
    Ok(SignAgreement { rate, spearman, zero_pairs, n: pairs.len() })
}

/// Spearman's rho with average ranks for ties, via Pearson on the ranks.
fn spearman_rho(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = pairs.iter().map(|(a, _)| *a).collect();
    let ys: Vec<f64> = pairs.iter().map(|(_, b)| *b).collect();
    let rx = average_ranks(&xs);
    let ry = average_ranks(&ys);
    let n = pairs.len() as f64;
    let mean_x = rx.iter().sum::<f64>() / n;
    let mean_y = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for i in 0..pairs.len() {
        let dx = rx[i] - mean_x;
        let dy = ry[i] - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return None;
    }
    Some(cov / (var_x * var_y).sqrt())
}

/// 1-based ranks; tied values share the mean of the ranks they span.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j hold equal values; assign the mean rank
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &index in &order[i..=j] {
            ranks[index] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// One sample's contribution to a concept report: accuracy from the neutral
/// stage, fairness from the dialogue rounds. Either side may be missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptOutcome {
    pub group: String,
    pub correct: Option<bool>,
    pub fairness: Option<f64>,
}

/// Aggregates for one group within a concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group: String,
    /// Samples seen for the group, gradable or not.
    pub n: usize,
    pub accuracy: f64,
    pub correct: usize,
    pub mean_fairness: f64,
    /// Samples contributing to the fairness mean.
    pub fairness_n: usize,
    /// Samples missing an accuracy or fairness outcome.
    pub excluded: usize,
}

/// Full per-concept report across the schema's groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub concept: String,
    pub attribute: String,
    pub mode: DiffMode,
    /// Schema order, not accuracy order.
    pub groups: Vec<GroupStats>,
    pub acc_diff: f64,
    pub dominant: String,
    pub disadvantaged: String,
    pub dominant_tie: bool,
    pub disadvantaged_tie: bool,
    pub fsd: f64,
}

/// Build the per-concept report. Every schema group needs at least one
/// gradable accuracy sample and one fairness-scored sample; a group with
/// neither signal has undefined statistics and fails the build.
pub fn build_group_report(
    concept: &str,
    schema: &AttributeSchema,
    mode: DiffMode,
    outcomes: &[ConceptOutcome],
) -> Result<GroupReport> {
    if let DiffMode::GenderSigned = mode {
        if schema.groups() != ["female".to_string(), "male".to_string()]
            && schema.groups() != ["male".to_string(), "female".to_string()]
        {
            return Err(Error::ModeMismatch(format!(
                "gender-signed mode needs the male/female schema, got {:?}",
                schema.groups()
            )));
        }
    }
    let tagged: Vec<TaggedOutcome> = outcomes
        .iter()
        .map(|o| TaggedOutcome { group: o.group.clone(), correct: o.correct })
        .collect();
    let accs = group_accuracy(&tagged, schema)?;

    let mut fairness_sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    let mut excluded: BTreeMap<&str, usize> = BTreeMap::new();
    let mut totals: BTreeMap<&str, usize> = BTreeMap::new();
    for outcome in outcomes {
        *totals.entry(outcome.group.as_str()).or_default() += 1;
        if let Some(score) = outcome.fairness {
            if !score.is_finite() {
                return Err(Error::InvalidMetricInput(format!(
                    "non-finite fairness score in group {:?}",
                    outcome.group
                )));
            }
            let slot = fairness_sums.entry(outcome.group.as_str()).or_default();
            slot.0 += score;
            slot.1 += 1;
        }
        if outcome.correct.is_none() || outcome.fairness.is_none() {
            *excluded.entry(outcome.group.as_str()).or_default() += 1;
        }
    }

    let mut groups = Vec::new();
    let mut mean_scores: BTreeMap<String, f64> = BTreeMap::new();
    for group in schema.groups() {
        let tally = &accs[group];
        let (sum, count) = fairness_sums.get(group.as_str()).copied().unwrap_or((0.0, 0));
        if count == 0 {
            return Err(Error::EmptyGroup(format!("{group} (no fairness-scored samples)")));
        }
        let mean_fairness = sum / count as f64;
        mean_scores.insert(group.clone(), mean_fairness);
        groups.push(GroupStats {
            group: group.clone(),
            n: totals.get(group.as_str()).copied().unwrap_or(0),
            accuracy: tally.accuracy(),
            correct: tally.correct,
            mean_fairness,
            fairness_n: count,
            excluded: excluded.get(group.as_str()).copied().unwrap_or(0),
        });
    }

    let diff = acc_diff(&accs, mode)?;
    let ranking = rank_groups(&accs, schema.groups())?;
    let fsd = fsd(&mean_scores, &ranking.dominant, &ranking.disadvantaged, mode)?;
    Ok(GroupReport {
        concept: concept.to_string(),
        attribute: schema.attribute().to_string(),
        mode,
        groups,
        acc_diff: diff,
        dominant: ranking.dominant,
        disadvantaged: ranking.disadvantaged,
        dominant_tie: ranking.dominant_tie,
        disadvantaged_tie: ranking.disadvantaged_tie,
        fsd,
    })
}

/// Concepts with the largest absolute accuracy gap, ties broken by concept
/// name. Returns clones so the full report list stays intact.
pub fn top_k_reports(reports: &[GroupReport], k: usize) -> Vec<GroupReport> {
    let mut sorted: Vec<&GroupReport> = reports.iter().collect();
    sorted.sort_by(|a, b| {
        b.acc_diff
            .abs()
            .partial_cmp(&a.acc_diff.abs())
            .expect("finite acc_diff")
            .then_with(|| a.concept.cmp(&b.concept))
    });
    sorted.into_iter().take(k).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema3() -> AttributeSchema {
        AttributeSchema::new(
            "skin_tone",
            vec!["light".into(), "medium".into(), "dark".into()],
        )
        .unwrap()
    }

    fn acc(scored: usize, correct: usize) -> GroupAccuracy {
        GroupAccuracy { scored, correct, excluded: 0 }
    }

    #[test]
    fn accuracy_counts_and_exclusions() {
        let outcomes = vec![
            TaggedOutcome { group: "male".into(), correct: Some(true) },
            TaggedOutcome { group: "male".into(), correct: Some(false) },
            TaggedOutcome { group: "male".into(), correct: None },
            TaggedOutcome { group: "female".into(), correct: Some(true) },
        ];
        let accs = group_accuracy(&outcomes, &AttributeSchema::gender()).unwrap();
        assert_eq!(accs["male"].scored, 2);
        assert_eq!(accs["male"].correct, 1);
        assert_eq!(accs["male"].excluded, 1);
        assert_eq!(accs["female"].accuracy(), 1.0);

        let only_male = vec![TaggedOutcome { group: "male".into(), correct: Some(true) }];
        assert!(matches!(
            group_accuracy(&only_male, &AttributeSchema::gender()),
            Err(Error::EmptyGroup(g)) if g == "female"
        ));
        let stray = vec![TaggedOutcome { group: "robot".into(), correct: Some(true) }];
        assert!(group_accuracy(&stray, &AttributeSchema::gender()).is_err());
    }

    #[test]
    fn diff_modes() {
        let accs = BTreeMap::from([
            ("male".to_string(), acc(10, 9)),
            ("female".to_string(), acc(10, 6)),
        ]);
        assert!((acc_diff(&accs, DiffMode::Unsigned).unwrap() - 0.3).abs() < 1e-12);
        assert!((acc_diff(&accs, DiffMode::GenderSigned).unwrap() - 0.3).abs() < 1e-12);

        let reversed = BTreeMap::from([
            ("male".to_string(), acc(10, 6)),
            ("female".to_string(), acc(10, 9)),
        ]);
        assert!((acc_diff(&reversed, DiffMode::GenderSigned).unwrap() + 0.3).abs() < 1e-12);

        let triple = BTreeMap::from([
            ("light".to_string(), acc(10, 9)),
            ("medium".to_string(), acc(10, 8)),
            ("dark".to_string(), acc(10, 5)),
        ]);
        assert!((acc_diff(&triple, DiffMode::Unsigned).unwrap() - 0.4).abs() < 1e-12);
        assert!(acc_diff(&triple, DiffMode::GenderSigned).is_err());
    }

    #[test]
    fn ranking_ties_break_by_order_and_are_flagged() {
        // A 0.7, B 0.7, C 0.2 with order A, B, C
        let accs = BTreeMap::from([
            ("A".to_string(), acc(10, 7)),
            ("B".to_string(), acc(10, 7)),
            ("C".to_string(), acc(10, 2)),
        ]);
        let order = vec!["A".to_string(), "B".to_string(), "C".to_string()];
        let ranking = rank_groups(&accs, &order).unwrap();
        assert_eq!(ranking.dominant, "A");
        assert_eq!(ranking.disadvantaged, "C");
        assert!(ranking.dominant_tie);
        assert!(!ranking.disadvantaged_tie);
    }

    #[test]
    fn fsd_directions() {
        let means = BTreeMap::from([
            ("male".to_string(), 0.4),
            ("female".to_string(), 0.9),
        ]);
        // unsigned: dominant minus disadvantaged as ranked
        let unsigned = fsd(&means, "female", "male", DiffMode::Unsigned).unwrap();
        assert!((unsigned - 0.5).abs() < 1e-12);
        // gender-signed: always male minus female
        let signed = fsd(&means, "female", "male", DiffMode::GenderSigned).unwrap();
        assert!((signed + 0.5).abs() < 1e-12);
    }

    #[test]
    fn sign_agreement_and_spearman() {
        // perfectly anti-ordered pair from the contract
        let result = sign_agreement(&[(0.1, 0.2), (0.3, 0.1)]).unwrap();
        assert_eq!(result.spearman, Some(-1.0));
        assert_eq!(result.rate, 1.0);

        let mixed = sign_agreement(&[(0.2, 0.1), (-0.3, 0.4), (0.0, -0.2)]).unwrap();
        assert!((mixed.rate - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(mixed.zero_pairs, 1);

        // single pair: agreement defined, correlation not
        let single = sign_agreement(&[(0.5, 0.25)]).unwrap();
        assert_eq!(single.spearman, None);
        assert_eq!(single.rate, 1.0);

        // zero variance on one side
        let flat = sign_agreement(&[(0.1, 0.5), (0.2, 0.5), (0.3, 0.5)]).unwrap();
        assert_eq!(flat.spearman, None);

        assert!(sign_agreement(&[]).is_err());
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[0.3, 0.1, 0.3]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn group_report_aggregates_in_schema_order() {
        let mut outcomes = Vec::new();
        for (group, correct, fairness) in [
            ("light", Some(true), Some(1.0)),
            ("light", Some(true), Some(0.5)),
            ("medium", Some(true), Some(0.0)),
            ("medium", Some(false), None),
            ("dark", Some(false), Some(-1.0)),
            ("dark", Some(false), Some(0.0)),
            ("dark", None, Some(0.5)),
        ] {
            outcomes.push(ConceptOutcome {
                group: group.into(),
                correct,
                fairness,
            });
        }
        let report =
            build_group_report("nurse", &schema3(), DiffMode::Unsigned, &outcomes).unwrap();
        assert_eq!(report.concept, "nurse");
        let names: Vec<&str> = report.groups.iter().map(|g| g.group.as_str()).collect();
        assert_eq!(names, ["light", "medium", "dark"]);
        assert_eq!(report.groups[0].accuracy, 1.0);
        assert_eq!(report.groups[1].excluded, 1);
        assert_eq!(report.groups[2].fairness_n, 3);
        assert_eq!(report.dominant, "light");
        assert_eq!(report.disadvantaged, "dark");
        assert!((report.acc_diff - 1.0).abs() < 1e-12);
        // fsd = mean(light) - mean(dark) = 0.75 - (-1/6)
        assert!((report.fsd - (0.75 + 1.0 / 6.0)).abs() < 1e-12);

        // a group with accuracy samples but no fairness scores fails
        let mut missing = outcomes.clone();
        for o in &mut missing {
            if o.group == "medium" {
                o.fairness = None;
            }
        }
        assert!(build_group_report("nurse", &schema3(), DiffMode::Unsigned, &missing).is_err());
    }

    #[test]
    fn top_k_orders_by_absolute_gap_then_name() {
        let make = |concept: &str, gap: f64| GroupReport {
            concept: concept.into(),
            attribute: "gender".into(),
            mode: DiffMode::GenderSigned,
            groups: vec![],
            acc_diff: gap,
            dominant: "male".into(),
            disadvantaged: "female".into(),
            dominant_tie: false,
            disadvantaged_tie: false,
            fsd: 0.0,
        };
        let reports = vec![make("b", -0.4), make("a", 0.4), make("c", 0.9)];
        let top = top_k_reports(&reports, 2);
        let names: Vec<&str> = top.iter().map(|r| r.concept.as_str()).collect();
        assert_eq!(names, ["c", "a"]);
    }
}
