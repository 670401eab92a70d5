//! Thin CLI over the biasflow library: validate annotations, run audits,
//! probe text bias, and re-render artifacts from per-sample records.
//!
//! Exit codes: 0 success, 1 config or usage error, 2 completed with partial
//! failures (ingest rejects or per-sample errors).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use biasflow::audit::report::{emit_report, ReportFormat};
use biasflow::audit::{
    aggregate_records, run_audit, AuditConfig, AuditRunRecord, AuditTotals, SampleRecord,
};
use biasflow::attribution::attribution_heatmap;
use biasflow::corpus::{load_samples, ConceptCatalog};
use biasflow::gateway::{open_model, Capability};
use biasflow::prompts::AttributeSchema;
use biasflow::tsb::{render_chart, render_csv, tsb_table};
use biasflow::{Error, Result};

#[derive(Parser)]
#[command(
    name = "biasflow",
    version,
    about = "Explainable demographic-bias audits for vision-language models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an annotation table and report rejected rows.
    Ingest {
        /// Annotation table (CSV, JSON, or JSONL).
        #[arg(long)]
        annotations: PathBuf,
        /// Write the rejects report as JSONL here.
        #[arg(long)]
        rejects: Option<PathBuf>,
    },
    /// Run the full audit pipeline described by a config file.
    Audit {
        /// TOML config; flags below override individual keys.
        #[arg(long)]
        config: PathBuf,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Key-token threshold override.
        #[arg(long)]
        tau: Option<f64>,
        /// Attribute schema override (gender, age, skin_tone).
        #[arg(long)]
        attribute: Option<String>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Mock scenario path override.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Resume from the output directory's checkpoint.
        #[arg(long)]
        resume: bool,
        /// Comma-separated artifact formats (jsonl, csv, heatmaps, tsb-table).
        #[arg(long, value_delimiter = ',')]
        formats: Option<Vec<String>>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Probe text embeddings only and emit the TSB table.
    Tsb {
        #[arg(long)]
        config: PathBuf,
        /// Embedding layer override.
        #[arg(long)]
        layer: Option<usize>,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render reports from an existing per-sample records file.
    Report {
        /// records.jsonl from a previous run.
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated artifact formats.
        #[arg(long, value_delimiter = ',')]
        formats: Option<Vec<String>>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Re-render attribution heatmaps from a records file.
    Heatmap {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Render in color instead of grayscale.
        #[arg(long)]
        color: bool,
        /// Pixels per token cell.
        #[arg(long, default_value_t = 32)]
        cell: u32,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Ingest { annotations, rejects } => cmd_ingest(&annotations, rejects.as_deref()),
        Command::Audit {
            config,
            out,
            seed,
            tau,
            attribute,
            annotations,
            scenario,
            resume,
            formats,
            top_k,
        } => {
            let mut cfg = AuditConfig::from_toml_path(&config)?;
            if let Some(out) = out {
                cfg.output = out;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(tau) = tau {
                cfg.attribution.tau = tau;
            }
            if let Some(attribute) = attribute {
                cfg.attribute = attribute;
            }
            if let Some(annotations) = annotations {
                cfg.annotations = annotations;
            }
            if let Some(scenario) = scenario {
                cfg.model.scenario = Some(scenario);
            }
            if resume {
                cfg.resume = true;
            }
            if let Some(formats) = formats {
                cfg.formats = parse_formats(&formats)?;
            }
            if let Some(top_k) = top_k {
                cfg.top_k = top_k;
            }
            cmd_audit(&cfg)
        }
        Command::Tsb { config, layer, out } => {
            let mut cfg = AuditConfig::from_toml_path(&config)?;
            if let Some(layer) = layer {
                cfg.tsb.layer = Some(layer);
            }
            if let Some(out) = out {
                cfg.output = out;
            }
            cmd_tsb(&cfg)
        }
        Command::Report { records, out, formats, top_k } => {
            let formats = match formats {
                Some(raw) => parse_formats(&raw)?,
                None => vec![ReportFormat::Jsonl, ReportFormat::Csv],
            };
            cmd_report(&records, &out, &formats, top_k.unwrap_or(12))
        }
        Command::Heatmap { records, out, color, cell } => {
            cmd_heatmap(&records, &out, color, cell)
        }
    }
}

fn parse_formats(raw: &[String]) -> Result<Vec<ReportFormat>> {
    raw.iter().map(|s| s.parse()).collect()
}

fn cmd_ingest(annotations: &Path, rejects_out: Option<&Path>) -> Result<ExitCode> {
    let catalog = ConceptCatalog::facet();
    let report = load_samples(annotations, &catalog)?;
    println!(
        "accepted {} of {} rows ({} rejected)",
        report.samples.len(),
        report.total_rows,
        report.rejects.len()
    );
    for reject in &report.rejects {
        eprintln!("reject row {}: {}", reject.row, reject.reason);
    }
    if let Some(path) = rejects_out {
        let mut out = String::new();
        for reject in &report.rejects {
            out.push_str(&serde_json::to_string(reject)?);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        println!("rejects report written to {}", path.display());
    }
    Ok(if report.rejects.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_audit(config: &AuditConfig) -> Result<ExitCode> {
    let record = run_audit(config)?;
    let manifest = emit_report(&config.output, &record, &config.formats)?;
    let t = &record.totals;
    println!(
        "audited {} samples: {} scored, {} excluded, {} errored, {} resumed",
        t.samples, t.completed, t.excluded, t.errored, t.resumed
    );
    println!(
        "{} concept report(s); wrote {} artifact(s) to {}",
        record.reports.len(),
        manifest.entries.len(),
        config.output.display()
    );
    for report in &record.top {
        println!(
            "  {}: acc_diff {:+.4} fsd {:+.4} dominant {} disadvantaged {}",
            report.concept, report.acc_diff, report.fsd, report.dominant, report.disadvantaged
        );
    }
    for issue in &record.issues {
        eprintln!("issue: {issue}");
    }
    let partial = t.errored > 0 || t.rejected_rows > 0;
    Ok(if partial { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn cmd_tsb(config: &AuditConfig) -> Result<ExitCode> {
    config.validate()?;
    let schema = AttributeSchema::by_name(&config.attribute)?;
    let handle = open_model(&config.model)?;
    handle.require(Capability::TextEmbedding)?;
    let concepts = match &config.concepts {
        Some(list) => list.clone(),
        None => {
            let catalog = ConceptCatalog::facet();
            let report = load_samples(&config.annotations, &catalog)?;
            let mut names: Vec<String> =
                report.samples.iter().map(|s| s.occupation.clone()).collect();
            names.sort();
            names.dedup();
            names
        }
    };
    let table = tsb_table(&handle, &concepts, &schema, config.tsb_layer())?;
    std::fs::create_dir_all(&config.output)?;
    std::fs::write(config.output.join("tsb.csv"), render_csv(&table)?)?;
    std::fs::write(config.output.join("tsb.json"), serde_json::to_string_pretty(&table)?)?;
    if table.is_empty() {
        println!("0 concepts probed; wrote empty table to {}", config.output.display());
    } else {
        let chart = render_chart(&table)?;
        chart
            .save_with_format(config.output.join("tsb.png"), image::ImageFormat::Png)
            .map_err(Error::from)?;
        println!(
            "probed {} concept(s) x {} group(s) at layer {}; wrote tsb.csv, tsb.json, tsb.png to {}",
            table.len(),
            schema.groups().len(),
            config.tsb_layer(),
            config.output.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn read_records(path: &Path) -> Result<Vec<SampleRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(line).map_err(|e| {
            Error::Config(format!("{} line {}: {e}", path.display(), index + 1))
        })?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::Config(format!("{} holds no records", path.display())));
    }
    Ok(records)
}

fn cmd_report(
    records_path: &Path,
    out: &Path,
    formats: &[ReportFormat],
    top_k: usize,
) -> Result<ExitCode> {
    let mut samples = read_records(records_path)?;
    samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let attribute = samples[0].attribute.clone();
    if let Some(stray) = samples.iter().find(|s| s.attribute != attribute) {
        return Err(Error::Config(format!(
            "records mix attributes {attribute:?} and {:?}",
            stray.attribute
        )));
    }
    let schema = AttributeSchema::by_name(&attribute)?;
    let (reports, top, sign, issues) = aggregate_records(&samples, &schema, top_k);
    let totals = AuditTotals {
        samples: samples.len(),
        completed: samples.iter().filter(|r| r.fairness.is_some()).count(),
        excluded: samples.iter().filter(|r| r.excluded.is_some()).count(),
        errored: samples.iter().filter(|r| r.error.is_some()).count(),
        resumed: 0,
        rejected_rows: 0,
    };
    let record = AuditRunRecord {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: None,
        samples,
        reports,
        top,
        sign,
        tsb: None,
        issues,
        totals,
    };
    let manifest = emit_report(out, &record, formats)?;
    println!(
        "re-rendered {} record(s) into {} artifact(s) at {}",
        record.samples.len(),
        manifest.entries.len(),
        out.display()
    );
    for issue in &record.issues {
        eprintln!("issue: {issue}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_heatmap(records_path: &Path, out: &Path, color: bool, cell: u32) -> Result<ExitCode> {
    if cell == 0 {
        return Err(Error::Config("cell size must be at least 1".into()));
    }
    let samples = read_records(records_path)?;
    std::fs::create_dir_all(out)?;
    let mut written = 0usize;
    for sample in &samples {
        let Some(attr) = &sample.attribution else { continue };
        let heatmap = attribution_heatmap(&attr.averaged, attr.grid)?;
        let path = out.join(format!("{}.png", sample.sample_id));
        if color {
            heatmap
                .to_color_image(cell)
                .save_with_format(&path, image::ImageFormat::Png)
                .map_err(Error::from)?;
        } else {
            heatmap
                .to_gray_image(cell)
                .save_with_format(&path, image::ImageFormat::Png)
                .map_err(Error::from)?;
        }
        written += 1;
    }
    println!("wrote {written} heatmap(s) to {}", out.display());
    Ok(ExitCode::SUCCESS)
}
