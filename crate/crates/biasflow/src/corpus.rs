//! Annotation loading, validation, and person crops.
//!
//! The annotation schema is a minimal projection of a person-centric
//! benchmark: one row per person with an image path, a pixel bounding box,
//! an occupation, and the three demographic labels. Rows arrive as CSV
//! (header `id,image,x,y,w,h,occupation,gender,age,skin_tone`), a JSON array
//! of objects with those fields, or JSONL. Invalid rows are collected into a
//! rejects report, never silently dropped.

use std::path::Path;

use image::DynamicImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::PixelBox;
use crate::prompts::AttributeSchema;

/// Ordered list of neutral concepts (occupations). Entries are unique and
/// non-empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptCatalog {
    concepts: Vec<String>,
}

impl ConceptCatalog {
    pub fn new(concepts: Vec<String>) -> Result<Self> {
        if concepts.is_empty() {
            return Err(Error::EmptyInput("concept catalog".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for concept in &concepts {
            if concept.is_empty() {
                return Err(Error::UnknownConcept("(empty)".into()));
            }
            if !seen.insert(concept.as_str()) {
                return Err(Error::Annotation(format!(
                    "duplicate catalog concept {concept:?}"
                )));
            }
        }
        Ok(Self { concepts })
    }

    /// The bundled 51-occupation catalog.
    pub fn facet() -> Self {
        Self::new(
            include_str!("../data/occupations.txt")
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
        .expect("bundled catalog is valid")
    }

    pub fn contains(&self, concept: &str) -> bool {
        self.concepts.iter().any(|c| c == concept)
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty catalogs
    }
}

/// One annotated person: image path (relative to the configured image root),
/// pixel box, occupation, and demographic labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRow", into = "RawRow")]
pub struct Sample {
    pub id: String,
    pub image: String,
    pub bbox: PixelBox,
    pub occupation: String,
    pub gender: String,
    pub age: String,
    pub skin_tone: String,
}

/// Flat row shape shared by the CSV and JSON annotation formats.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawRow {
    id: String,
    image: String,
    x: u32,
    y: u32,
    w: u32,
    h: u32,
    occupation: String,
    gender: String,
    age: String,
    skin_tone: String,
}

impl TryFrom<RawRow> for Sample {
    type Error = Error;

    fn try_from(row: RawRow) -> Result<Self> {
        if row.id.is_empty() {
            return Err(Error::Annotation("empty id".into()));
        }
        if row.image.is_empty() {
            return Err(Error::Annotation("empty image path".into()));
        }
        if row.w == 0 || row.h == 0 {
            return Err(Error::Annotation(format!(
                "degenerate box {}x{}",
                row.w, row.h
            )));
        }
        Ok(Sample {
            id: row.id,
            image: row.image,
            bbox: PixelBox { x: row.x, y: row.y, w: row.w, h: row.h },
            occupation: row.occupation,
            gender: row.gender,
            age: row.age,
            skin_tone: row.skin_tone,
        })
    }
}

impl From<Sample> for RawRow {
    fn from(sample: Sample) -> Self {
        Self {
            id: sample.id,
            image: sample.image,
            x: sample.bbox.x,
            y: sample.bbox.y,
            w: sample.bbox.w,
            h: sample.bbox.h,
            occupation: sample.occupation,
            gender: sample.gender,
            age: sample.age,
            skin_tone: sample.skin_tone,
        }
    }
}

impl Sample {
    /// The label this sample carries for a schema's attribute.
    pub fn group_for(&self, schema: &AttributeSchema) -> Result<&str> {
        let label = match schema.attribute() {
            "gender" => self.gender.as_str(),
            "age" => self.age.as_str(),
            "skin_tone" => self.skin_tone.as_str(),
            other => {
                return Err(Error::InvalidSchema(format!(
                    "samples carry no label for attribute {other:?}"
                )))
            }
        };
        if !schema.contains(label) {
            return Err(Error::GroupNotInSchema {
                group: label.to_string(),
                attribute: schema.attribute().to_string(),
            });
        }
        Ok(label)
    }
}

/// A row that failed validation, with its 1-based data row index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub row: usize,
    pub id: Option<String>,
    pub reason: String,
}

/// Load outcome: accepted samples (sorted by id) plus the rejects report.
#[derive(Debug, Clone)]
pub struct LoadReport {
    pub samples: Vec<Sample>,
    pub rejects: Vec<RejectedRow>,
    pub total_rows: usize,
}

/// Load and validate an annotation file (.csv, .json array, or .jsonl).
///
/// Every row is checked against the catalog and the three built-in attribute
/// schemas; duplicated ids reject the later row. Zero valid rows is an error
/// summarizing the first reject reasons.
pub fn load_samples(path: impl AsRef<Path>, catalog: &ConceptCatalog) -> Result<LoadReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Annotation(format!("cannot read {}: {e}", path.display())))?;
    let extension = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let rows: Vec<(usize, std::result::Result<Sample, String>)> = match extension {
        "csv" => parse_csv_rows(&text),
        "json" => parse_json_array(&text)?,
        "jsonl" => parse_jsonl(&text),
        other => {
            return Err(Error::Annotation(format!(
                "unsupported annotation format {other:?} (expected csv, json, or jsonl)"
            )))
        }
    };
    finish_load(rows, catalog)
}

fn parse_csv_rows(text: &str) -> Vec<(usize, std::result::Result<Sample, String>)> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .deserialize::<Sample>()
        .enumerate()
        .map(|(index, parsed)| (index + 1, parsed.map_err(|e| strip_location(&e.to_string()))))
        .collect()
}

fn parse_json_array(text: &str) -> Result<Vec<(usize, std::result::Result<Sample, String>)>> {
    let values: Vec<serde_json::Value> =
        serde_json::from_str(text).map_err(|e| Error::Annotation(format!("bad JSON: {e}")))?;
    Ok(values
        .into_iter()
        .enumerate()
        .map(|(index, value)| {
            let parsed = serde_json::from_value::<Sample>(value).map_err(|e| e.to_string());
            (index + 1, parsed)
        })
        .collect())
}

fn parse_jsonl(text: &str) -> Vec<(usize, std::result::Result<Sample, String>)> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(index, line)| {
            let parsed = serde_json::from_str::<Sample>(line).map_err(|e| e.to_string());
            (index + 1, parsed)
        })
        .collect()
}

/// csv errors embed byte offsets that vary with formatting; keep the message
/// stable for golden tests.
fn strip_location(message: &str) -> String {
    match message.split_once(": ") {
        Some((_, rest)) => rest.to_string(),
        None => message.to_string(),
    }
}

fn finish_load(
    rows: Vec<(usize, std::result::Result<Sample, String>)>,
    catalog: &ConceptCatalog,
) -> Result<LoadReport> {
    let total_rows = rows.len();
    let schemas =
        [AttributeSchema::gender(), AttributeSchema::age(), AttributeSchema::skin_tone()];
    let mut samples: Vec<Sample> = Vec::new();
    let mut rejects = Vec::new();
    let mut ids = std::collections::BTreeSet::new();
    for (row, parsed) in rows {
        let sample = match parsed {
            Ok(sample) => sample,
            Err(reason) => {
                rejects.push(RejectedRow { row, id: None, reason });
                continue;
            }
        };
        let reject = |id: &str, reason: String, rejects: &mut Vec<RejectedRow>| {
            rejects.push(RejectedRow { row, id: Some(id.to_string()), reason });
        };
        if !ids.insert(sample.id.clone()) {
            reject(&sample.id, format!("duplicate id {:?}", sample.id), &mut rejects);
            continue;
        }
        if !catalog.contains(&sample.occupation) {
            reject(
                &sample.id,
                format!("occupation {:?} not in catalog", sample.occupation),
                &mut rejects,
            );
            continue;
        }
        if let Some(reason) = schemas.iter().find_map(|schema| {
            sample.group_for(schema).err().map(|e| e.to_string())
        }) {
            reject(&sample.id, reason, &mut rejects);
            continue;
        }
        samples.push(sample);
    }
    if samples.is_empty() {
        let preview: Vec<&str> =
            rejects.iter().take(3).map(|r| r.reason.as_str()).collect();
        return Err(Error::Annotation(format!(
            "no valid rows ({} rejected; first reasons: {})",
            rejects.len(),
            if preview.is_empty() { "none".to_string() } else { preview.join("; ") }
        )));
    }
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(LoadReport { samples, rejects, total_rows })
}

/// Copy the boxed pixels out of an image, without resampling.
pub fn crop_person(image: &DynamicImage, bbox: PixelBox) -> Result<DynamicImage> {
    let (width, height) = (image.width(), image.height());
    let fits = bbox.w > 0
        && bbox.h > 0
        && (bbox.x as u64 + bbox.w as u64) <= width as u64
        && (bbox.y as u64 + bbox.h as u64) <= height as u64;
    if !fits {
        return Err(Error::CropOutOfBounds {
            x: bbox.x,
            y: bbox.y,
            w: bbox.w,
            h: bbox.h,
            width,
            height,
        });
    }
    Ok(image.crop_imm(bbox.x, bbox.y, bbox.w, bbox.h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgba, RgbaImage};

    const HEADER: &str = "id,image,x,y,w,h,occupation,gender,age,skin_tone";

    fn row(id: &str, occupation: &str, age: &str) -> String {
        format!("{id},images/{id}.jpg,0,0,10,10,{occupation},male,{age},light")
    }

    fn write_csv(rows: &[String]) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut file = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        writeln!(file, "{HEADER}").unwrap();
        for line in rows {
            writeln!(file, "{line}").unwrap();
        }
        file
    }

    #[test]
    fn catalog_has_51_unique_occupations() {
        let catalog = ConceptCatalog::facet();
        assert_eq!(catalog.len(), 51);
        assert!(catalog.contains("nurse"));
        assert!(catalog.contains("disk jockey"));
    }

    #[test]
    fn invalid_age_is_rejected_not_dropped() {
        let file = write_csv(&[
            row("a1", "nurse", "young"),
            row("a2", "nurse", "teen"),
            row("a3", "doctor", "older"),
        ]);
        let report = load_samples(file.path(), &ConceptCatalog::facet()).unwrap();
        assert_eq!(report.total_rows, 3);
        assert_eq!(report.samples.len(), 2);
        assert_eq!(report.rejects.len(), 1);
        assert_eq!(report.rejects[0].row, 2);
        assert!(report.rejects[0].reason.contains("teen"));
    }

    #[test]
    fn rows_sort_by_id_and_duplicates_reject() {
        let file = write_csv(&[
            row("b2", "nurse", "young"),
            row("b1", "nurse", "young"),
            row("b1", "doctor", "older"),
        ]);
        let report = load_samples(file.path(), &ConceptCatalog::facet()).unwrap();
        let ids: Vec<&str> = report.samples.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, vec!["b1", "b2"]);
        assert_eq!(report.rejects.len(), 1);
        assert!(report.rejects[0].reason.contains("duplicate"));
    }

    #[test]
    fn empty_file_is_an_error() {
        let file = write_csv(&[]);
        let err = load_samples(file.path(), &ConceptCatalog::facet()).unwrap_err();
        assert!(err.to_string().contains("no valid rows"));
    }

    #[test]
    fn json_and_jsonl_parse_the_same_rows() {
        use std::io::Write;
        let sample = Sample {
            id: "j1".into(),
            image: "images/j1.jpg".into(),
            bbox: PixelBox { x: 1, y: 2, w: 3, h: 4 },
            occupation: "nurse".into(),
            gender: "female".into(),
            age: "middle".into(),
            skin_tone: "dark".into(),
        };
        let mut jsonl = tempfile::Builder::new().suffix(".jsonl").tempfile().unwrap();
        writeln!(jsonl, "{}", serde_json::to_string(&sample).unwrap()).unwrap();
        let report = load_samples(jsonl.path(), &ConceptCatalog::facet()).unwrap();
        assert_eq!(report.samples, vec![sample.clone()]);

        let mut json = tempfile::Builder::new().suffix(".json").tempfile().unwrap();
        write!(json, "[{}]", serde_json::to_string(&sample).unwrap()).unwrap();
        let report = load_samples(json.path(), &ConceptCatalog::facet()).unwrap();
        assert_eq!(report.samples, vec![sample]);
    }

    #[test]
    fn crop_copies_offset_pixels() {
        let mut img = RgbaImage::from_pixel(100, 100, Rgba([0, 0, 0, 255]));
        img.put_pixel(10, 20, Rgba([9, 9, 9, 255]));
        let dynamic = DynamicImage::ImageRgba8(img);

        let identity = crop_person(&dynamic, PixelBox { x: 0, y: 0, w: 100, h: 100 }).unwrap();
        assert_eq!(identity.to_rgba8(), dynamic.to_rgba8());

        let crop = crop_person(&dynamic, PixelBox { x: 10, y: 20, w: 30, h: 40 }).unwrap();
        assert_eq!((crop.width(), crop.height()), (30, 40));
        assert_eq!(crop.to_rgba8().get_pixel(0, 0), &Rgba([9, 9, 9, 255]));

        assert!(crop_person(&dynamic, PixelBox { x: 90, y: 90, w: 20, h: 20 }).is_err());
    }
}
