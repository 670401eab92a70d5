//! Report emission: render an audit run into files and a hashed manifest.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::attribution_heatmap;
use crate::error::{Error, Result};
use crate::tsb::{render_chart, render_csv};

use super::AuditRunRecord;

/// Output artifact classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    /// Per-sample records, one JSON object per line, sorted by sample id.
    Jsonl,
    /// Per-concept summary table plus the full run summary as JSON.
    Csv,
    /// One attribution raster per audited sample.
    Heatmaps,
    /// Text bias table as CSV, JSON, and a bar chart.
    TsbTable,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 4] = [
        ReportFormat::Jsonl,
        ReportFormat::Csv,
        ReportFormat::Heatmaps,
        ReportFormat::TsbTable,
    ];
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ReportFormat::Jsonl => "jsonl",
            ReportFormat::Csv => "csv",
            ReportFormat::Heatmaps => "heatmaps",
            ReportFormat::TsbTable => "tsb-table",
        };
        f.write_str(name)
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "jsonl" => Ok(ReportFormat::Jsonl),
            "csv" => Ok(ReportFormat::Csv),
            "heatmaps" => Ok(ReportFormat::Heatmaps),
            "tsb-table" => Ok(ReportFormat::TsbTable),
            other => Err(Error::Config(format!(
                "unknown report format {other:?} (expected jsonl, csv, heatmaps, or tsb-table)"
            ))),
        }
    }
}

/// One emitted artifact: path relative to the output directory plus the
/// SHA-256 of its bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

/// Everything one emission wrote, hashed. Entries are sorted by path.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn entry(&self, path: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.path == path)
    }

    /// Re-hash every listed artifact under `dir` and fail on any mismatch.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for entry in &self.entries {
            let bytes = std::fs::read(dir.join(&entry.path)).map_err(|e| {
                Error::Manifest(format!("cannot read {}: {e}", entry.path))
            })?;
            let actual = sha256_hex(&bytes);
            if actual != entry.sha256 {
                return Err(Error::Manifest(format!(
                    "hash mismatch for {}: manifest {} vs file {}",
                    entry.path, entry.sha256, actual
                )));
            }
        }
        Ok(())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write `bytes` to `dir/rel` atomically: a temp file in the same directory
/// is renamed over the target so readers never see a partial artifact.
fn write_atomic(dir: &Path, rel: &str, bytes: &[u8]) -> Result<()> {
    let target = dir.join(rel);
    if let Some(parent) = target.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = target.with_extension("tmp-write");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, &target)?;
    Ok(())
}

/// The run summary serialized alongside the CSV: everything except the
/// per-sample records, which live in the JSONL artifact.
#[derive(Serialize)]
struct RunSummary<'a> {
    tool_version: &'a str,
    config: &'a Option<super::AuditConfig>,
    reports: &'a [crate::metrics::GroupReport],
    top: &'a [crate::metrics::GroupReport],
    sign: &'a Option<crate::metrics::SignAgreement>,
    issues: &'a [String],
    totals: &'a super::AuditTotals,
}

/// Render the requested formats under `dir` and return the manifest.
///
/// Files are written atomically; an empty format set writes nothing at all
/// (not even a manifest file). With at least one format, `manifest.json` is
/// written last and lists every other artifact.
pub fn emit_report(
    dir: impl Into<PathBuf>,
    record: &AuditRunRecord,
    formats: &[ReportFormat],
) -> Result<Manifest> {
    let dir = dir.into();
    let mut requested: Vec<ReportFormat> = formats.to_vec();
    requested.sort_unstable();
    requested.dedup();
    let mut manifest = Manifest::default();
    if requested.is_empty() {
        return Ok(manifest);
    }
    std::fs::create_dir_all(&dir)?;

    let mut add = |rel: String, bytes: &[u8]| -> Result<()> {
        write_atomic(&dir, &rel, bytes)?;
        manifest.entries.push(ManifestEntry { path: rel, sha256: sha256_hex(bytes) });
        Ok(())
    };

    for format in &requested {
        match format {
            ReportFormat::Jsonl => {
                let mut out = String::new();
                for sample in &record.samples {
                    out.push_str(&serde_json::to_string(sample)?);
                    out.push('\n');
                }
                add("records.jsonl".into(), out.as_bytes())?;
            }
            ReportFormat::Csv => {
                add("report.csv".into(), concept_csv(record)?.as_bytes())?;
                let summary = RunSummary {
                    tool_version: &record.tool_version,
                    config: &record.config,
                    reports: &record.reports,
                    top: &record.top,
                    sign: &record.sign,
                    issues: &record.issues,
                    totals: &record.totals,
                };
                let json = serde_json::to_string_pretty(&summary)?;
                add("report.json".into(), json.as_bytes())?;
            }
            ReportFormat::Heatmaps => {
                for sample in &record.samples {
                    let Some(attr) = &sample.attribution else { continue };
                    let heatmap = attribution_heatmap(&attr.averaged, attr.grid)?;
                    let image = heatmap.to_color_image(32);
                    let mut bytes = Vec::new();
                    image.write_to(
                        &mut std::io::Cursor::new(&mut bytes),
                        image::ImageFormat::Png,
                    )?;
                    add(format!("heatmaps/{}.png", sample.sample_id), &bytes)?;
                }
            }
            ReportFormat::TsbTable => {
                let Some(records) = &record.tsb else {
                    return Err(Error::Config(
                        "tsb-table format requested but the run carries no tsb data".into(),
                    ));
                };
                add("tsb.csv".into(), render_csv(records)?.as_bytes())?;
                add("tsb.json".into(), serde_json::to_string_pretty(records)?.as_bytes())?;
                let chart = render_chart(records)?;
                let mut bytes = Vec::new();
                chart.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
                add("tsb.png".into(), &bytes)?;
            }
        }
    }

    manifest.entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest_json = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&dir, "manifest.json", manifest_json.as_bytes())?;
    Ok(manifest)
}

/// Per-concept summary table: one row per concept, per-group accuracy and
/// mean fairness columns in schema order, then the gap statistics.
fn concept_csv(record: &AuditRunRecord) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let groups: Vec<String> = record
        .reports
        .first()
        .map(|r| r.groups.iter().map(|g| g.group.clone()).collect())
        .unwrap_or_default();
    let mut header = vec!["concept".to_string(), "attribute".to_string()];
    for group in &groups {
        header.push(format!("acc_{group}"));
    }
    for group in &groups {
        header.push(format!("fairness_{group}"));
    }
    header.extend(
        ["acc_diff", "fsd", "dominant", "disadvantaged", "dominant_tie", "disadvantaged_tie", "n"]
            .map(String::from),
    );
    writer.write_record(&header)?;
    for report in &record.reports {
        let mut row = vec![report.concept.clone(), report.attribute.clone()];
        for stats in &report.groups {
            row.push(format!("{}", stats.accuracy));
        }
        for stats in &report.groups {
            row.push(format!("{}", stats.mean_fairness));
        }
        let n: usize = report.groups.iter().map(|g| g.n).sum();
        row.push(format!("{}", report.acc_diff));
        row.push(format!("{}", report.fsd));
        row.push(report.dominant.clone());
        row.push(report.disadvantaged.clone());
        row.push(report.dominant_tie.to_string());
        row.push(report.disadvantaged_tie.to_string());
        row.push(n.to_string());
        writer.write_record(&row)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
