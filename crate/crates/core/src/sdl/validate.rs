use std::collections::{BTreeSet, HashMap};
use std::io;
use std::path::Path;

use serde::Serialize;

use super::{AssessmentPair, ColorValue, DocPath, Extensions, StudyDefinition};

/// Item identifiers that would collide with the generated step ids.
pub(crate) const RESERVED_ITEM_IDS: [&str; 2] = ["summary", "grid"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub code: &'static str,
    pub severity: Severity,
    pub path: DocPath,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ValidationReport {
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.error_count() == 0
    }

    pub fn error_count(&self) -> usize {
        self.diagnostics
            .iter()
            .filter(|d| d.severity == Severity::Error)
            .count()
    }

    pub fn warning_count(&self) -> usize {
        self.diagnostics.len() - self.error_count()
    }

    pub fn codes(&self) -> Vec<&'static str> {
        self.diagnostics.iter().map(|d| d.code).collect()
    }
}

/// Media asset keys available to a study.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssetManifest {
    keys: BTreeSet<String>,
}

impl AssetManifest {
    pub fn from_keys<I, S>(keys: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        AssetManifest {
            keys: keys.into_iter().map(Into::into).collect(),
        }
    }

    /// Every regular file in `dir` contributes its file stem as a key, so
    /// `Bathing.png` resolves `"imageTitle": "Bathing"`.
    pub fn from_dir(dir: &Path) -> io::Result<Self> {
        let mut keys = BTreeSet::new();
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            if entry.file_type()?.is_file() {
                if let Some(stem) = entry.path().file_stem().and_then(|s| s.to_str()) {
                    keys.insert(stem.to_string());
                }
            }
        }
        Ok(AssetManifest { keys })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.keys.contains(key)
    }
}

/// Checks a parsed study. Problems are reported as diagnostics sorted by
/// document path, then code.
pub fn validate_study(def: &StudyDefinition, assets: Option<&AssetManifest>) -> ValidationReport {
    let mut v = Validator::default();
    let study = DocPath::root().key(&def.study_id);

    if def.source.schema_version_defaulted {
        v.warn(
            "MISSING_SCHEMA_VERSION",
            study.clone(),
            "no schemaVersion given, assuming 1".into(),
        );
    } else if def.schema_version < 1 {
        v.error(
            "BAD_SCHEMA_VERSION",
            study.key("schemaVersion"),
            format!("schemaVersion must be at least 1, got {}", def.schema_version),
        );
    }
    v.extra(&study, &def.extra);

    v.identifier(&def.study_id, study.clone());

    let in_array = def.source.pairs_in_array
        || def.assessments.len() != 1
        || !def.assessments[0].extra.is_empty();
    for (i, pair) in def.assessments.iter().enumerate() {
        let base = if in_array {
            let p = study.key("assessments").index(i);
            v.extra(&p, &pair.extra);
            p
        } else {
            study.clone()
        };
        v.pair(pair, &base, assets);
    }

    let acts = study.key("activities");
    if def.items.is_empty() && !def.assessments.is_empty() {
        v.error("EMPTY_ITEMS", acts.clone(), "study has no activities".into());
    }
    for (i, item) in def.items.iter().enumerate() {
        let p = acts.index(i);
        v.identifier(&item.identifier, p.key("identifier"));
        if RESERVED_ITEM_IDS.contains(&item.identifier.as_str()) {
            v.error(
                "RESERVED_IDENTIFIER",
                p.key("identifier"),
                format!("item identifier {:?} is reserved", item.identifier),
            );
        }
        if let Some(assets) = assets {
            if !assets.contains(&item.image_title) {
                v.error(
                    "UNRESOLVED_ASSET",
                    p.key("imageTitle"),
                    format!("no asset named {:?}", item.image_title),
                );
            }
        }
        v.extra(&p, &item.extra);
    }

    let mut diagnostics = v.out;
    diagnostics.sort_by(|a, b| a.path.cmp(&b.path).then(a.code.cmp(b.code)));
    ValidationReport { diagnostics }
}

#[derive(Default)]
struct Validator {
    out: Vec<Diagnostic>,
    seen_ids: HashMap<String, DocPath>,
}

impl Validator {
    fn error(&mut self, code: &'static str, path: DocPath, message: String) {
        self.out.push(Diagnostic {
            code,
            severity: Severity::Error,
            path,
            message,
        });
    }

    fn warn(&mut self, code: &'static str, path: DocPath, message: String) {
        self.out.push(Diagnostic {
            code,
            severity: Severity::Warning,
            path,
            message,
        });
    }

    fn identifier(&mut self, id: &str, path: DocPath) {
        if id.is_empty() {
            self.error("EMPTY_IDENTIFIER", path, "identifier is empty".into());
            return;
        }
        if let Some(first) = self.seen_ids.get(id) {
            let message = format!("identifier {id:?} already used at {first}");
            self.error("DUP_IDENTIFIER", path, message);
        } else {
            self.seen_ids.insert(id.to_string(), path);
        }
    }

    fn color(&mut self, c: &ColorValue, path: DocPath) {
        if !c.is_well_formed() {
            self.error(
                "BAD_COLOR",
                path,
                format!("{:?} is not a #RRGGBB color", c.as_str()),
            );
        }
    }

    fn extra(&mut self, path: &DocPath, extra: &Extensions) {
        for key in extra.keys() {
            self.warn(
                "UNKNOWN_FIELD",
                path.key(key),
                format!("unknown field {key:?} kept as an extension"),
            );
        }
    }

    fn summary(&mut self, s: &super::SummaryDef, path: DocPath) {
        self.identifier(&s.identifier, path.key("identifier"));
        self.extra(&path, &s.extra);
    }

    fn pair(&mut self, pair: &AssessmentPair, base: &DocPath, assets: Option<&AssetManifest>) {
        let full = base.key("full");
        self.identifier(&pair.full.identifier, full.key("identifier"));
        self.summary(&pair.full.summary, full.key("summary"));
        self.extra(&full, &pair.full.extra);

        let choices = full.key("choices");
        match pair.full.choices.len() {
            0 => self.error("EMPTY_CHOICES", choices.clone(), "no choices".into()),
            1 => self.error(
                "TOO_FEW_CHOICES",
                choices.clone(),
                "at least two choices are required".into(),
            ),
            _ => {}
        }
        let mut values: HashMap<&str, usize> = HashMap::new();
        for (i, c) in pair.full.choices.iter().enumerate() {
            let p = choices.index(i);
            if let Some(first) = values.get(c.value.as_str()) {
                self.error(
                    "DUP_CHOICE_VALUE",
                    p.key("value"),
                    format!("choice value {:?} already used by choices[{first}]", c.value),
                );
            } else {
                values.insert(&c.value, i);
            }
            self.color(&c.color, p.key("color"));
            self.extra(&p, &c.extra);
        }

        let spot = base.key("spot");
        self.identifier(&pair.spot.identifier, spot.key("identifier"));
        self.summary(&pair.spot.summary, spot.key("summary"));
        self.summary(&pair.spot.no_items_summary, spot.key("noItemsSummary"));
        self.extra(&spot, &pair.spot.extra);

        let o = &pair.spot.options;
        let op = spot.key("options");
        self.color(&o.something_selected_button_color, op.key("somethingSelectedButtonColor"));
        self.color(&o.nothing_selected_button_color, op.key("nothingSelectedButtonColor"));
        self.color(&o.item_cell_selected_color, op.key("itemCellSelectedColor"));
        self.color(
            &o.item_collection_view_background_color,
            op.key("itemCollectionViewBackgroundColor"),
        );
        if o.items_per_row < 1 {
            self.error(
                "BAD_ITEMS_PER_ROW",
                op.key("itemsPerRow"),
                format!("itemsPerRow must be at least 1, got {}", o.items_per_row),
            );
        }
        if !(o.item_min_spacing.is_finite() && o.item_min_spacing >= 0.0) {
            self.error(
                "BAD_ITEM_SPACING",
                op.key("itemMinSpacing"),
                format!("itemMinSpacing must be non-negative, got {}", o.item_min_spacing),
            );
        }
        if let Some(assets) = assets {
            if !assets.contains(&o.item_cell_selected_overlay_image_title) {
                self.error(
                    "UNRESOLVED_ASSET",
                    op.key("itemCellSelectedOverlayImageTitle"),
                    format!("no asset named {:?}", o.item_cell_selected_overlay_image_title),
                );
            }
        }
        self.extra(&op, &o.extra);

        if pair.activation_explicit {
            let ap = base.key("activation");
            for (i, value) in pair.activation.values.iter().enumerate() {
                if !pair.full.choices.iter().any(|c| &c.value == value) {
                    self.error(
                        "UNKNOWN_ACTIVATION_VALUE",
                        ap.key("values").index(i),
                        format!("{value:?} is not a choice value of {}", pair.full.identifier),
                    );
                }
            }
            self.extra(&ap, &pair.activation.extra);
        }
    }
}
