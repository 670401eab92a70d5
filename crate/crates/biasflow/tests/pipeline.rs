//! End-to-end walk of the bundled biased-nurse fixture: every number here is
//! derivable by hand from the scenario script, so regressions surface as
//! changed arithmetic rather than changed snapshots.

use std::path::{Path, PathBuf};

use biasflow::audit::report::{emit_report, Manifest, ReportFormat};
use biasflow::audit::{run_audit, AuditConfig, RunMeta};
use biasflow::metrics::DiffMode;
use biasflow::tsb::TsbCell;

fn fixture_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/configs/biased_nurse.toml")
}

fn load(output: &Path) -> AuditConfig {
    let mut config = AuditConfig::from_toml_path(fixture_config()).unwrap();
    config.output = output.to_path_buf();
    config
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[test]
fn biased_nurse_numbers_match_hand_walk() {
    let out = tempfile::tempdir().unwrap();
    let config = load(out.path());
    let record = run_audit(&config).unwrap();

    assert_eq!(record.totals.samples, 20);
    assert_eq!(record.totals.completed, 20);
    assert_eq!(record.totals.excluded, 0);
    assert_eq!(record.totals.errored, 0);
    assert_eq!(record.totals.rejected_rows, 0);

    // The scenario plants distinct hot tokens per group: token 0 for male
    // images, token 3 for female ones.
    for sample in &record.samples {
        let attribution = sample.attribution.as_ref().unwrap();
        let expected_key = if sample.group == "male" { vec![0] } else { vec![3] };
        assert_eq!(attribution.key_set, expected_key, "{}", sample.sample_id);
        assert!(!attribution.degenerate);
        assert_eq!(attribution.grid, Some((2, 2)));
    }

    // Male: full and pruned rounds both answer yes, the counterfactual
    // flips to no; case 3 (+1) for every sample. Female: the pruned round
    // stays yes and the counterfactual stays yes too, so the sample lands
    // on case 2 with score sigmoid(2) - sigmoid(5).
    let female_score = sigmoid(2.0) - sigmoid(5.0);
    for sample in &record.samples {
        let fairness = sample.fairness.as_ref().unwrap();
        match sample.group.as_str() {
            "male" => {
                assert_eq!(fairness.case_id, 3, "{}", sample.sample_id);
                assert_eq!(fairness.score, 1.0);
            }
            "female" => {
                assert_eq!(fairness.case_id, 2, "{}", sample.sample_id);
                assert_eq!(fairness.score, female_score, "{}", sample.sample_id);
            }
            other => panic!("unexpected group {other}"),
        }
    }

    assert_eq!(record.reports.len(), 1);
    let report = &record.reports[0];
    assert_eq!(report.concept, "nurse");
    assert_eq!(report.mode, DiffMode::GenderSigned);

    // Neutral accuracy: males 10/10, females 6/10 under the scripted 0.6
    // accuracy with the fixture seeds.
    let male = report.groups.iter().find(|g| g.group == "male").unwrap();
    let female = report.groups.iter().find(|g| g.group == "female").unwrap();
    assert_eq!((male.correct, male.n), (10, 10));
    assert_eq!((female.correct, female.n), (6, 10));
    assert_eq!(male.accuracy, 1.0);
    assert_eq!(female.accuracy, 0.6);
    assert!((report.acc_diff - 0.4).abs() < 1e-15);

    assert_eq!(report.dominant, "male");
    assert_eq!(report.disadvantaged, "female");
    assert!(!report.dominant_tie && !report.disadvantaged_tie);

    // fsd = mean male score - mean female score = 1 - (sig(2) - sig(5)).
    assert_eq!(male.mean_fairness, 1.0);
    assert!((female.mean_fairness - female_score).abs() < 1e-14);
    assert!((report.fsd - (1.0 - female_score)).abs() < 1e-13);
    assert!((report.fsd - 1.1125100710978328).abs() < 1e-12);

    // acc_diff and fsd point the same way: the accuracy gap and the
    // fairness gap both disadvantage the female group.
    let sign = record.sign.unwrap();
    assert_eq!(sign.n, 1);
    assert_eq!(sign.rate, 1.0);

    // Text-side probe: the scripted embeddings put "male" orthogonal to
    // "nurse" and "female" collinear with it.
    let tsb = record.tsb.unwrap();
    assert_eq!(tsb.len(), 1);
    let row = &tsb[0];
    assert_eq!(row.concept, "nurse");
    assert_eq!(row.layer, 11);
    let cell = |group: &str| {
        &row.groups.iter().find(|e| e.group == group).unwrap().cell
    };
    let male_tsb = cell("male").value().unwrap();
    assert!((male_tsb - (1.0 - 0.5f64.sqrt())).abs() < 1e-12);
    assert!(matches!(cell("female"), TsbCell::Error { .. }));
}

#[test]
fn resume_restores_checkpointed_samples_without_requerying() {
    let root = tempfile::tempdir().unwrap();

    let full_out = root.path().join("full");
    let full = run_audit(&load(&full_out)).unwrap();
    assert_eq!(full.totals.samples, 20);

    // Keep the first half of the checkpoint, as if the run died mid-flight.
    let checkpoint = std::fs::read_to_string(full_out.join("checkpoint.jsonl")).unwrap();
    let half: Vec<&str> = checkpoint.lines().take(10).collect();
    let resumed_out = root.path().join("resumed");
    std::fs::create_dir_all(&resumed_out).unwrap();
    std::fs::write(resumed_out.join("checkpoint.jsonl"), format!("{}\n", half.join("\n")))
        .unwrap();

    let mut config = load(&resumed_out);
    config.resume = true;
    let resumed = run_audit(&config).unwrap();

    assert_eq!(resumed.totals.samples, 20);
    assert_eq!(resumed.totals.resumed, 10);
    assert_eq!(resumed.samples, full.samples, "resume changed a record");

    let meta: RunMeta =
        serde_json::from_str(&std::fs::read_to_string(resumed_out.join("meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta.samples_total, 20);
    assert_eq!(meta.samples_resumed, 10);
    assert_eq!(meta.samples_queried, 10);

    // The appended checkpoint now covers every sample exactly once.
    let lines = std::fs::read_to_string(resumed_out.join("checkpoint.jsonl")).unwrap();
    let mut ids: Vec<String> = lines
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["sample_id"]
            .as_str()
            .unwrap()
            .to_string())
        .collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 20);
}

#[test]
fn fresh_run_truncates_a_stale_checkpoint() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("out");
    let config = load(&out);

    run_audit(&config).unwrap();
    let first = std::fs::read_to_string(out.join("checkpoint.jsonl")).unwrap();
    run_audit(&config).unwrap();
    let second = std::fs::read_to_string(out.join("checkpoint.jsonl")).unwrap();
    assert_eq!(first.lines().count(), 20);
    assert_eq!(second.lines().count(), 20, "stale checkpoint lines survived a fresh run");
}

#[test]
fn manifest_verifies_and_detects_tampering() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("out");
    let config = load(&out);
    let record = run_audit(&config).unwrap();
    emit_report(&out, &record, &ReportFormat::ALL).unwrap();

    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    assert!(manifest.entry("records.jsonl").is_some());
    assert!(manifest.entry("report.csv").is_some());
    assert!(manifest.entry("report.json").is_some());
    assert!(manifest.entry("tsb.csv").is_some());
    manifest.verify(&out).unwrap();

    // Flip one byte; verification must name the damaged artifact.
    let target = out.join("report.csv");
    let mut bytes = std::fs::read(&target).unwrap();
    bytes.push(b'x');
    std::fs::write(&target, bytes).unwrap();
    let err = manifest.verify(&out).unwrap_err();
    assert!(err.to_string().contains("report.csv"), "unexpected error: {err}");
}

#[test]
fn empty_format_list_emits_nothing() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("out");
    let config = load(&out);
    let record = run_audit(&config).unwrap();

    let report_dir = root.path().join("report");
    std::fs::create_dir_all(&report_dir).unwrap();
    emit_report(&report_dir, &record, &[]).unwrap();
    let written: Vec<_> = std::fs::read_dir(&report_dir).unwrap().collect();
    assert!(written.is_empty(), "empty format list still wrote artifacts");
}

#[test]
fn heatmap_artifacts_match_the_token_grid() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("out");
    let config = load(&out);
    let record = run_audit(&config).unwrap();
    emit_report(&out, &record, &[ReportFormat::Heatmaps]).unwrap();

    for sample in &record.samples {
        let path = out.join("heatmaps").join(format!("{}.png", sample.sample_id));
        let (w, h) = image::image_dimensions(&path).unwrap();
        // 2x2 grid rendered at 32 pixels per token.
        assert_eq!((w, h), (64, 64), "{}", sample.sample_id);
    }
}
