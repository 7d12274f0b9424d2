//! Study definition model.
//!
//! A study document is a single JSON object keyed by the study name. The
//! study object carries one full/spot assessment pair (or an `assessments`
//! array of pairs) and the `activities` item pool. Unknown keys are kept in
//! per-object `extra` maps so they survive a parse/serialize cycle.

mod canonical;
mod parse;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use canonical::{canonical_serialize, study_to_value};
pub use parse::{parse_study_definition, ParseError};
pub use validate::{validate_study, AssetManifest, Diagnostic, Severity, ValidationReport};

/// Unknown keys found on an object, keyed by field name.
pub type Extensions = BTreeMap<String, Value>;

#[derive(Debug, Clone)]
pub struct StudyDefinition {
    pub study_id: String,
    pub schema_version: i64,
    pub assessments: Vec<AssessmentPair>,
    pub items: Vec<ItemDef>,
    pub extra: Extensions,
    /// Facts about the source document that are not part of the model.
    pub(crate) source: SourceNotes,
}

/// Equality ignores how the document was written (e.g. an implicit schema
/// version), only the materialized model counts.
impl PartialEq for StudyDefinition {
    fn eq(&self, other: &Self) -> bool {
        self.study_id == other.study_id
            && self.schema_version == other.schema_version
            && self.assessments == other.assessments
            && self.items == other.items
            && self.extra == other.extra
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct SourceNotes {
    pub schema_version_defaulted: bool,
    /// Whether the pair(s) were written under an `assessments` array.
    pub pairs_in_array: bool,
}

impl StudyDefinition {
    pub fn item(&self, identifier: &str) -> Option<&ItemDef> {
        self.items.iter().find(|i| i.identifier == identifier)
    }

    /// Finds the pair whose full or spot assessment has `identifier`.
    pub fn pair(&self, identifier: &str) -> Option<&AssessmentPair> {
        self.assessments
            .iter()
            .find(|p| p.full.identifier == identifier || p.spot.identifier == identifier)
    }

    pub fn schema_version_defaulted(&self) -> bool {
        self.source.schema_version_defaulted
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssessmentPair {
    pub full: FullAssessmentDef,
    pub spot: SpotAssessmentDef,
    pub activation: ActivationRule,
    /// Whether `activation` was authored; the default rule is not written back.
    pub activation_explicit: bool,
    /// Unknown keys of a pair written inside an `assessments` array. For the
    /// single-pair layout they live on the study object instead.
    pub extra: Extensions,
}

/// Choice values of the full assessment that put an item into the spot set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationRule {
    pub values: Vec<String>,
    #[serde(flatten)]
    pub extra: Extensions,
}

impl ActivationRule {
    /// Every choice value except the first, which is the no-difficulty baseline.
    pub fn default_for(choices: &[ChoiceDef]) -> Self {
        ActivationRule::new(choices.iter().skip(1).map(|c| c.value.clone()).collect())
    }

    pub fn new(values: Vec<String>) -> Self {
        ActivationRule {
            values,
            extra: Extensions::new(),
        }
    }

    pub fn activates(&self, value: &str) -> bool {
        self.values.iter().any(|v| v == value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FullAssessmentDef {
    pub identifier: String,
    pub prompt: String,
    pub summary: SummaryDef,
    pub choices: Vec<ChoiceDef>,
    #[serde(flatten)]
    pub extra: Extensions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SpotAssessmentDef {
    pub identifier: String,
    pub prompt: String,
    pub summary: SummaryDef,
    pub no_items_summary: SummaryDef,
    pub options: SpotOptionsDef,
    #[serde(flatten)]
    pub extra: Extensions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryDef {
    pub identifier: String,
    pub title: String,
    pub text: String,
    #[serde(flatten)]
    pub extra: Extensions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChoiceDef {
    pub text: String,
    pub value: String,
    pub color: ColorValue,
    #[serde(flatten)]
    pub extra: Extensions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ItemDef {
    pub image_title: String,
    pub description: String,
    pub identifier: String,
    #[serde(flatten)]
    pub extra: Extensions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SpotOptionsDef {
    pub something_selected_button_color: ColorValue,
    pub nothing_selected_button_color: ColorValue,
    pub item_cell_selected_color: ColorValue,
    pub item_cell_selected_overlay_image_title: String,
    pub item_collection_view_background_color: ColorValue,
    pub items_per_row: i64,
    pub item_min_spacing: f64,
    #[serde(flatten)]
    pub extra: Extensions,
}

/// A `#RRGGBB` color. Hex digits are upper-cased on construction; strings
/// that do not match the grammar are kept verbatim so validation can report
/// them.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct ColorValue(String);

impl ColorValue {
    pub fn new(raw: &str) -> Self {
        let upper = raw.to_ascii_uppercase();
        if is_rgb_hex(&upper) {
            ColorValue(upper)
        } else {
            ColorValue(raw.to_string())
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_well_formed(&self) -> bool {
        is_rgb_hex(&self.0)
    }
}

fn is_rgb_hex(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 7
        && b[0] == b'#'
        && b[1..]
            .iter()
            .all(|c| c.is_ascii_digit() || (b'A'..=b'F').contains(c))
}

impl fmt::Display for ColorValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A location inside a study document.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct DocPath(Vec<PathSeg>);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PathSeg {
    Key(String),
    Index(usize),
}

impl DocPath {
    pub fn root() -> Self {
        DocPath(Vec::new())
    }

    pub fn key(&self, k: &str) -> Self {
        let mut segs = self.0.clone();
        segs.push(PathSeg::Key(k.to_string()));
        DocPath(segs)
    }

    pub fn index(&self, i: usize) -> Self {
        let mut segs = self.0.clone();
        segs.push(PathSeg::Index(i));
        DocPath(segs)
    }

    pub fn segments(&self) -> &[PathSeg] {
        &self.0
    }

    /// Looks the path up in a JSON document.
    pub fn resolve<'a>(&self, doc: &'a Value) -> Option<&'a Value> {
        self.0.iter().try_fold(doc, |v, seg| match seg {
            PathSeg::Key(k) => v.as_object()?.get(k),
            PathSeg::Index(i) => v.as_array()?.get(*i),
        })
    }
}

impl fmt::Display for DocPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("$");
        }
        for (n, seg) in self.0.iter().enumerate() {
            match seg {
                PathSeg::Key(k) if n == 0 => write!(f, "{k}")?,
                PathSeg::Key(k) => write!(f, ".{k}")?,
                PathSeg::Index(i) => write!(f, "[{i}]")?,
            }
        }
        Ok(())
    }
}

impl Serialize for DocPath {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}
