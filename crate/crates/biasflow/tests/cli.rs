//! Black-box checks of the `biasflow` binary: exit codes, flag overrides,
//! artifact layout, and the image-root environment fallback.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use biasflow::audit::IMAGE_ROOT_ENV;
use biasflow::gateway::mock::{MatchKey, ScenarioBuilder, ScriptedLayer};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_biasflow"))
}

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("process killed by signal")
}

#[test]
fn help_and_bad_usage_exit_codes() {
    let help = bin().arg("--help").output().unwrap();
    assert_eq!(code(&help), 0);
    assert!(stdout(&help).contains("audit"));

    let bogus = bin().arg("frobnicate").output().unwrap();
    assert_eq!(code(&bogus), 1);

    let missing = bin().args(["audit", "--config", "/nonexistent/audit.toml"]).output().unwrap();
    assert_eq!(code(&missing), 1);
    assert!(stderr(&missing).contains("error:"));
}

#[test]
fn ingest_reports_rejects_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let clean = fixture("annotations/biased_nurse.csv");
    let ok = bin().args(["ingest", "--annotations"]).arg(&clean).output().unwrap();
    assert_eq!(code(&ok), 0);
    assert!(stdout(&ok).contains("accepted 20 of 20 rows (0 rejected)"));

    // A row with an off-schema age label must be rejected, not dropped
    // silently and not fatal.
    let dirty = dir.path().join("dirty.csv");
    std::fs::write(
        &dirty,
        "id,image,x,y,w,h,occupation,gender,age,skin_tone\n\
         a-000,images/a-000.png,0,0,64,64,nurse,female,young,light\n\
         a-001,images/a-001.png,0,0,64,64,nurse,male,teen,light\n",
    )
    .unwrap();
    let rejects_path = dir.path().join("rejects.jsonl");
    let partial = bin()
        .args(["ingest", "--annotations"])
        .arg(&dirty)
        .arg("--rejects")
        .arg(&rejects_path)
        .output()
        .unwrap();
    assert_eq!(code(&partial), 2);
    assert!(stdout(&partial).contains("accepted 1 of 2 rows (1 rejected)"));
    assert!(stderr(&partial).contains("teen"));
    let rejects = std::fs::read_to_string(&rejects_path).unwrap();
    assert_eq!(rejects.lines().count(), 1);
    assert!(rejects.contains("a-001"));
}

#[test]
fn audit_runs_the_fixture_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("audit");
    let run = bin()
        .args(["audit", "--config"])
        .arg(fixture("configs/biased_nurse.toml"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&run), 0, "stderr: {}", stderr(&run));
    let text = stdout(&run);
    assert!(text.contains("audited 20 samples: 20 scored, 0 excluded, 0 errored, 0 resumed"));
    assert!(text.contains("nurse: acc_diff +0.4000 fsd +1.1125 dominant male disadvantaged female"));

    for artifact in ["records.jsonl", "report.csv", "report.json", "tsb.csv", "manifest.json"] {
        assert!(out.join(artifact).is_file(), "missing {artifact}");
    }
    assert_eq!(std::fs::read_dir(out.join("heatmaps")).unwrap().count(), 20);
}

#[test]
fn audit_format_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture("configs/biased_nurse.toml");

    let out_a = dir.path().join("a");
    let jsonl_only = bin()
        .args(["audit", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_a)
        .args(["--formats", "jsonl"])
        .output()
        .unwrap();
    assert_eq!(code(&jsonl_only), 0);
    assert!(out_a.join("records.jsonl").is_file());
    assert!(!out_a.join("report.csv").exists(), "format override ignored");
    assert!(!out_a.join("heatmaps").exists());

    let out_b = dir.path().join("b");
    let reseeded = bin()
        .args(["audit", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_b)
        .args(["--formats", "jsonl", "--seed", "8"])
        .output()
        .unwrap();
    assert_eq!(code(&reseeded), 0);
    let a = std::fs::read(out_a.join("records.jsonl")).unwrap();
    let b = std::fs::read(out_b.join("records.jsonl")).unwrap();
    assert_ne!(a, b, "seed override had no effect");
}

#[test]
fn audit_rejects_bad_tau_before_touching_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let run = bin()
        .args(["audit", "--config"])
        .arg(fixture("configs/biased_nurse.toml"))
        .arg("--out")
        .arg(dir.path().join("never"))
        .args(["--tau", "1.5"])
        .output()
        .unwrap();
    assert_eq!(code(&run), 1);
    assert!(stderr(&run).contains("tau"), "stderr: {}", stderr(&run));
    // Validation fired before the run could create its output directory.
    assert!(!dir.path().join("never").exists());
}

#[test]
fn report_and_heatmap_rerender_from_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("audit");
    let run = bin()
        .args(["audit", "--config"])
        .arg(fixture("configs/biased_nurse.toml"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&run), 0);
    let records = out.join("records.jsonl");

    let report_dir = dir.path().join("rerender");
    let rerender = bin()
        .args(["report", "--records"])
        .arg(&records)
        .arg("--out")
        .arg(&report_dir)
        .args(["--formats", "csv"])
        .output()
        .unwrap();
    assert_eq!(code(&rerender), 0, "stderr: {}", stderr(&rerender));
    let original = std::fs::read(out.join("report.csv")).unwrap();
    let rebuilt = std::fs::read(report_dir.join("report.csv")).unwrap();
    assert_eq!(original, rebuilt, "re-rendered CSV drifted from the audit's");

    let heat_dir = dir.path().join("heat");
    let heatmaps = bin()
        .args(["heatmap", "--records"])
        .arg(&records)
        .arg("--out")
        .arg(&heat_dir)
        .args(["--cell", "8"])
        .output()
        .unwrap();
    assert_eq!(code(&heatmaps), 0);
    assert!(stdout(&heatmaps).contains("wrote 20 heatmap(s)"));
    let one = heat_dir.join("nurse-female-000.png");
    assert_eq!(image::image_dimensions(&one).unwrap(), (16, 16));
}

#[test]
fn tsb_subcommand_writes_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tsb");
    let run = bin()
        .args(["tsb", "--config"])
        .arg(fixture("configs/biased_nurse.toml"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&run), 0, "stderr: {}", stderr(&run));
    let csv = std::fs::read_to_string(out.join("tsb.csv")).unwrap();
    assert!(csv.contains("nurse"));
    assert!(csv.contains("error"), "degenerate female cell should render as error");
    assert!(out.join("tsb.json").is_file());
    assert!(out.join("tsb.png").is_file());
}

/// With no image root in the config, the environment variable decides how
/// relative annotation paths resolve; the scenario branches on a marker
/// directory that only the environment root contains.
#[test]
fn image_root_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();

    let layers: Vec<ScriptedLayer> = [10, 11, 12]
        .into_iter()
        .map(|layer| ScriptedLayer {
            layer,
            features: vec![vec![1.0, 2.0, 3.0, 4.0]],
            gradients: vec![vec![1.0; 4]],
        })
        .collect();
    let scenario = ScenarioBuilder::new("rooted-mock", 12, (2, 2))
        .seed(5)
        .lexicon(&["yes"], &["no"])
        .respond(
            MatchKey::default().image_contains("zq-root-marker"),
            "No.",
            &[("yes", -2.0), ("no", 3.0)],
        )
        .respond(MatchKey::default(), "Yes.", &[("yes", 3.0), ("no", -2.0)])
        .trace(MatchKey::default(), layers)
        .build()
        .unwrap();
    std::fs::write(base.join("scenario.json"), scenario.to_json_string()).unwrap();
    std::fs::write(
        base.join("annotations.csv"),
        "id,image,x,y,w,h,occupation,gender,age,skin_tone\n\
         r-000,images/r-000.png,0,0,64,64,nurse,female,young,light\n\
         r-001,images/r-001.png,0,0,64,64,nurse,male,young,light\n",
    )
    .unwrap();
    std::fs::write(
        base.join("audit.toml"),
        "attribute = \"gender\"\n\
         seed = 3\n\
         annotations = \"annotations.csv\"\n\
         output = \"out\"\n\
         formats = [\"jsonl\"]\n\n\
         [model]\n\
         adapter = \"mock\"\n\
         scenario = \"scenario.json\"\n\n\
         [tsb]\n\
         enabled = false\n",
    )
    .unwrap();

    let neutral_texts = |out_name: &str, env_root: Option<&Path>| -> Vec<String> {
        let mut cmd = bin();
        cmd.args(["audit", "--config"])
            .arg(base.join("audit.toml"))
            .arg("--out")
            .arg(base.join(out_name))
            .env_remove(IMAGE_ROOT_ENV);
        if let Some(root) = env_root {
            cmd.env(IMAGE_ROOT_ENV, root);
        }
        let run = cmd.output().unwrap();
        assert_eq!(code(&run), 0, "stderr: {}", stderr(&run));
        std::fs::read_to_string(base.join(out_name).join("records.jsonl"))
            .unwrap()
            .lines()
            .map(|line| {
                serde_json::from_str::<serde_json::Value>(line).unwrap()["neutral"]["text"]
                    .as_str()
                    .unwrap()
                    .to_string()
            })
            .collect()
    };

    // Default root (the annotation table's directory) misses the marker.
    let plain = neutral_texts("out-plain", None);
    assert_eq!(plain, vec!["Yes.".to_string(), "Yes.".to_string()]);

    // The environment root injects the marker into every image path.
    let rooted = neutral_texts("out-rooted", Some(&base.join("zq-root-marker")));
    assert_eq!(rooted, vec!["No.".to_string(), "No.".to_string()]);
}
