//! Prompt construction from frozen template banks.
//!
//! Neutral prompts ask about an occupation; sensitive prompts ask about a
//! demographic group; counterfactual prompts rewrite a sensitive prompt with
//! a counterpart group term. Template choice is a seeded uniform draw and the
//! bank id plus draw index are returned so transcripts can be replayed.
//!
//! The default banks are loaded from versioned data files (one template per
//! line, placeholder written as `<slot>`) and are frozen: edits belong in a
//! new bank id, not in place.

use std::collections::BTreeMap;

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::corpus::ConceptCatalog;
use crate::error::{Error, Result};

/// Placeholder token used in template bank files.
pub const SLOT: &str = "<slot>";

/// What a template asks about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Neutral,
    SensitiveGender,
    SensitiveAge,
    SensitiveSkin,
}

/// One template with exactly one placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
    kind: TemplateKind,
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>, kind: TemplateKind) -> Result<Self> {
        let text = text.into();
        if text.matches(SLOT).count() != 1 {
            return Err(Error::BadTemplate(text));
        }
        Ok(Self { text, kind })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    /// Substitute the placeholder.
    pub fn fill(&self, value: &str) -> String {
        self.text.replace(SLOT, value)
    }
}

/// An ordered, versioned set of templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateBank {
    id: String,
    kind: TemplateKind,
    templates: Vec<PromptTemplate>,
}

impl TemplateBank {
    /// Parse the bank file format: one template per line, blank lines skipped.
    pub fn parse(id: impl Into<String>, kind: TemplateKind, source: &str) -> Result<Self> {
        let id = id.into();
        let templates: Vec<PromptTemplate> = source
            .lines()
            .map(str::trim)
            .filter(|line| !line.is_empty())
            .map(|line| PromptTemplate::new(line, kind))
            .collect::<Result<_>>()?;
        if templates.is_empty() {
            return Err(Error::EmptyInput(format!("template bank {id:?}")));
        }
        Ok(Self { id, kind, templates })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        false // parse rejects empty banks
    }

    pub fn get(&self, index: usize) -> Option<&PromptTemplate> {
        self.templates.get(index)
    }
}

/// A sensitive attribute and its ordered group labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaSpec", into = "SchemaSpec")]
pub struct AttributeSchema {
    attribute: String,
    groups: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SchemaSpec {
    attribute: String,
    groups: Vec<String>,
}

impl TryFrom<SchemaSpec> for AttributeSchema {
    type Error = Error;

    fn try_from(spec: SchemaSpec) -> Result<Self> {
        AttributeSchema::new(spec.attribute, spec.groups)
    }
}

impl From<AttributeSchema> for SchemaSpec {
    fn from(schema: AttributeSchema) -> Self {
        Self { attribute: schema.attribute, groups: schema.groups }
    }
}

impl AttributeSchema {
    pub fn new(attribute: impl Into<String>, groups: Vec<String>) -> Result<Self> {
        let attribute = attribute.into();
        if attribute.is_empty() {
            return Err(Error::InvalidSchema("empty attribute name".into()));
        }
        if groups.len() < 2 {
            return Err(Error::InvalidSchema(format!(
                "attribute {attribute:?} needs at least 2 groups"
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for group in &groups {
            if group.is_empty() {
                return Err(Error::InvalidSchema(format!(
                    "attribute {attribute:?} has an empty group label"
                )));
            }
            if !seen.insert(group.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate group {group:?} in attribute {attribute:?}"
                )));
            }
        }
        Ok(Self { attribute, groups })
    }

    pub fn gender() -> Self {
        Self::new("gender", vec!["male".into(), "female".into()]).expect("static schema")
    }

    pub fn age() -> Self {
        Self::new("age", vec!["young".into(), "middle".into(), "older".into()])
            .expect("static schema")
    }

    pub fn skin_tone() -> Self {
        Self::new("skin_tone", vec!["light".into(), "medium".into(), "dark".into()])
            .expect("static schema")
    }

    /// Built-in schema by name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "gender" => Ok(Self::gender()),
            "age" => Ok(Self::age()),
            "skin_tone" => Ok(Self::skin_tone()),
            other => Err(Error::InvalidSchema(format!("unknown attribute {other:?}"))),
        }
    }

    pub fn attribute(&self) -> &str {
        &self.attribute
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn contains(&self, group: &str) -> bool {
        self.groups.iter().any(|g| g == group)
    }
}

/// All registered banks plus the attribute-to-bank routing table.
#[derive(Debug, Clone)]
pub struct TemplateLibrary {
    banks: BTreeMap<String, TemplateBank>,
    neutral_bank: String,
    attribute_banks: BTreeMap<String, String>,
}

impl TemplateLibrary {
    /// The frozen default banks shipped with the crate.
    pub fn frozen() -> Self {
        let neutral = TemplateBank::parse(
            "neutral-v1",
            TemplateKind::Neutral,
            include_str!("../data/templates/neutral-v1.txt"),
        )
        .expect("bundled bank parses");
        let gender = TemplateBank::parse(
            "gender-v1",
            TemplateKind::SensitiveGender,
            include_str!("../data/templates/gender-v1.txt"),
        )
        .expect("bundled bank parses");
        let age = TemplateBank::parse(
            "age-v1",
            TemplateKind::SensitiveAge,
            include_str!("../data/templates/age-v1.txt"),
        )
        .expect("bundled bank parses");
        let skin = TemplateBank::parse(
            "skin-tone-v1",
            TemplateKind::SensitiveSkin,
            include_str!("../data/templates/skin-tone-v1.txt"),
        )
        .expect("bundled bank parses");

        let mut banks = BTreeMap::new();
        let mut attribute_banks = BTreeMap::new();
        attribute_banks.insert("gender".to_string(), gender.id().to_string());
        attribute_banks.insert("age".to_string(), age.id().to_string());
        attribute_banks.insert("skin_tone".to_string(), skin.id().to_string());
        let neutral_bank = neutral.id().to_string();
        for bank in [neutral, gender, age, skin] {
            banks.insert(bank.id().to_string(), bank);
        }
        Self { banks, neutral_bank, attribute_banks }
    }

    pub fn register(&mut self, bank: TemplateBank) {
        self.banks.insert(bank.id().to_string(), bank);
    }

    /// Route an attribute to a registered bank.
    pub fn route_attribute(&mut self, attribute: impl Into<String>, bank_id: &str) -> Result<()> {
        if !self.banks.contains_key(bank_id) {
            return Err(Error::UnknownBank(bank_id.to_string()));
        }
        self.attribute_banks.insert(attribute.into(), bank_id.to_string());
        Ok(())
    }

    pub fn bank(&self, id: &str) -> Option<&TemplateBank> {
        self.banks.get(id)
    }

    pub fn neutral_bank(&self) -> &TemplateBank {
        &self.banks[&self.neutral_bank]
    }

    pub fn bank_for_attribute(&self, attribute: &str) -> Result<&TemplateBank> {
        let id = self
            .attribute_banks
            .get(attribute)
            .ok_or_else(|| Error::UnknownBank(attribute.to_string()))?;
        Ok(&self.banks[id])
    }
}

impl Default for TemplateLibrary {
    fn default() -> Self {
        Self::frozen()
    }
}

/// A drawn prompt with its provenance, enough to replay the draw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptDraw {
    pub text: String,
    pub bank: String,
    pub template_index: usize,
}

/// How to pick a counterpart group when a schema has three or more groups.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfPolicy {
    /// Seeded uniform draw among the other groups.
    #[default]
    SeededUniform,
    /// Always the first other group in schema order.
    FirstOther,
}

/// A counterfactual rewrite: the new prompt and the counterpart that was
/// substituted in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CfDraw {
    pub text: String,
    pub counterpart: String,
}

/// Prompt builder over a template library and a concept catalog.
#[derive(Debug, Clone)]
pub struct PromptForge {
    library: TemplateLibrary,
    catalog: ConceptCatalog,
}

impl PromptForge {
    pub fn new(library: TemplateLibrary, catalog: ConceptCatalog) -> Self {
        Self { library, catalog }
    }

    /// Frozen banks plus the bundled occupation catalog.
    pub fn frozen() -> Self {
        Self::new(TemplateLibrary::frozen(), ConceptCatalog::facet())
    }

    pub fn catalog(&self) -> &ConceptCatalog {
        &self.catalog
    }

    pub fn library(&self) -> &TemplateLibrary {
        &self.library
    }

    /// Neutral question about a catalogued concept.
    pub fn neutral_prompt<R: RngExt + ?Sized>(
        &self,
        concept: &str,
        rng: &mut R,
    ) -> Result<PromptDraw> {
        if !self.catalog.contains(concept) {
            return Err(Error::UnknownConcept(concept.to_string()));
        }
        Ok(draw(self.library.neutral_bank(), concept, rng))
    }

    /// Sensitive question about a schema group.
    pub fn sensitive_prompt<R: RngExt + ?Sized>(
        &self,
        schema: &AttributeSchema,
        group: &str,
        rng: &mut R,
    ) -> Result<PromptDraw> {
        if !schema.contains(group) {
            return Err(Error::GroupNotInSchema {
                group: group.to_string(),
                attribute: schema.attribute().to_string(),
            });
        }
        let bank = self.library.bank_for_attribute(schema.attribute())?;
        Ok(draw(bank, group, rng))
    }

    /// Rewrite a sensitive prompt with a counterpart group term.
    ///
    /// Two-group schemas have a unique counterpart; larger schemas follow
    /// `policy`. The first occurrence of `group` starting at a word boundary
    /// is replaced, so a term that is a suffix of another ("male" inside
    /// "female") can never match the wrong span.
    pub fn counterfactual_prompt<R: RngExt + ?Sized>(
        &self,
        original: &str,
        schema: &AttributeSchema,
        group: &str,
        policy: CfPolicy,
        rng: &mut R,
    ) -> Result<CfDraw> {
        if !schema.contains(group) {
            return Err(Error::GroupNotInSchema {
                group: group.to_string(),
                attribute: schema.attribute().to_string(),
            });
        }
        let others: Vec<&String> =
            schema.groups().iter().filter(|g| g.as_str() != group).collect();
        let counterpart = match (others.len(), policy) {
            (1, _) => others[0].clone(),
            (n, CfPolicy::SeededUniform) => others[rng.random_range(0..n)].clone(),
            (_, CfPolicy::FirstOther) => others[0].clone(),
        };
        let start = find_word_start(original, group)
            .ok_or_else(|| Error::GroupTermNotFound(group.to_string()))?;
        let mut text = String::with_capacity(original.len());
        text.push_str(&original[..start]);
        text.push_str(&counterpart);
        text.push_str(&original[start + group.len()..]);
        Ok(CfDraw { text, counterpart })
    }
}

fn draw<R: RngExt + ?Sized>(bank: &TemplateBank, value: &str, rng: &mut R) -> PromptDraw {
    let template_index = rng.random_range(0..bank.len());
    let template = bank.get(template_index).expect("index drawn in range");
    PromptDraw {
        text: template.fill(value),
        bank: bank.id().to_string(),
        template_index,
    }
}

/// First occurrence of `needle` whose preceding character is not alphabetic.
/// Only the start is anchored: templates may pluralize the slot ("<slot>s").
fn find_word_start(haystack: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    for (index, _) in haystack.match_indices(needle) {
        let boundary = haystack[..index]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphabetic());
        if boundary {
            return Some(index);
        }
    }
    None
}
