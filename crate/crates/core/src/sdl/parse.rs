use serde_json::{Map, Value};
use thiserror::Error;

use super::{
    ActivationRule, AssessmentPair, ChoiceDef, ColorValue, DocPath, Extensions, FullAssessmentDef,
    ItemDef, SourceNotes, SpotAssessmentDef, SpotOptionsDef, StudyDefinition, SummaryDef,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("document has no study object")]
    MissingStudy,
    #[error("document has more than one study object: {}", keys.join(", "))]
    MultipleStudies { keys: Vec<String> },
    #[error("missing required field `{path}`")]
    MissingField { path: DocPath },
    #[error("wrong type at `{path}`: expected {expected}, found {found}")]
    WrongType {
        path: DocPath,
        expected: &'static str,
        found: &'static str,
    },
    #[error("`{path}` cannot be combined with top-level full/spot objects")]
    ConflictingFields { path: DocPath },
}

impl ParseError {
    /// Stable machine code for the failure.
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::Syntax { .. } => "SYNTAX",
            ParseError::MissingStudy => "MISSING_STUDY",
            ParseError::MultipleStudies { .. } => "MULTIPLE_STUDIES",
            ParseError::MissingField { .. } => "MISSING_FIELD",
            ParseError::WrongType { .. } => "WRONG_TYPE",
            ParseError::ConflictingFields { .. } => "CONFLICTING_FIELDS",
        }
    }

    pub fn path(&self) -> Option<&DocPath> {
        match self {
            ParseError::MissingField { path }
            | ParseError::WrongType { path, .. }
            | ParseError::ConflictingFields { path } => Some(path),
            _ => None,
        }
    }
}

type Result<T> = std::result::Result<T, ParseError>;

/// Parses a complete study document.
pub fn parse_study_definition(bytes: &[u8]) -> Result<StudyDefinition> {
    let doc: Value = serde_json::from_slice(bytes).map_err(|e| ParseError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let root = DocPath::root();
    let top = expect_object(&doc, &root)?;
    let (study_id, study_value) = match top.len() {
        0 => return Err(ParseError::MissingStudy),
        1 => top.iter().next().expect("one entry"),
        _ => {
            return Err(ParseError::MultipleStudies {
                keys: top.keys().cloned().collect(),
            })
        }
    };
    let path = root.key(study_id);
    let mut study = Fields::new(study_value, path.clone())?;

    let mut source = SourceNotes::default();
    let schema_version = match study.opt_i64("schemaVersion")? {
        Some(v) => v,
        None => {
            source.schema_version_defaulted = true;
            1
        }
    };

    let assessments = if study.has("assessments") {
        if study.has("full") || study.has("spot") || study.has("activation") {
            return Err(ParseError::ConflictingFields {
                path: path.key("assessments"),
            });
        }
        source.pairs_in_array = true;
        let (arr, arr_path) = study.req_array("assessments")?;
        arr.iter()
            .enumerate()
            .map(|(i, v)| {
                let mut fields = Fields::new(v, arr_path.index(i))?;
                let mut pair = parse_pair(&mut fields)?;
                pair.extra = fields.finish();
                Ok(pair)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![parse_pair(&mut study)?]
    };

    let (activities, acts_path) = study.req_array("activities")?;
    let items = activities
        .iter()
        .enumerate()
        .map(|(i, v)| parse_item(v, acts_path.index(i)))
        .collect::<Result<Vec<_>>>()?;

    Ok(StudyDefinition {
        study_id: study_id.clone(),
        schema_version,
        assessments,
        items,
        extra: study.finish(),
        source,
    })
}

fn parse_pair(obj: &mut Fields<'_>) -> Result<AssessmentPair> {
    let full = parse_full(obj.req_object("full")?)?;
    let spot = parse_spot(obj.req_object("spot")?)?;
    let (activation, activation_explicit) = match obj.opt_object("activation")? {
        Some(mut act) => {
            let (values, vpath) = act.req_array("values")?;
            let values = values
                .iter()
                .enumerate()
                .map(|(i, v)| as_string(v, &vpath.index(i)))
                .collect::<Result<Vec<_>>>()?;
            let extra = act.finish();
            (ActivationRule { values, extra }, true)
        }
        None => (ActivationRule::default_for(&full.choices), false),
    };
    Ok(AssessmentPair {
        full,
        spot,
        activation,
        activation_explicit,
        extra: Extensions::new(),
    })
}

fn parse_full(mut obj: Fields<'_>) -> Result<FullAssessmentDef> {
    let identifier = obj.req_string("identifier")?;
    let prompt = obj.req_string("prompt")?;
    let summary = parse_summary(obj.req_object("summary")?)?;
    let (choices, cpath) = obj.req_array("choices")?;
    let choices = choices
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut c = Fields::new(v, cpath.index(i))?;
            Ok(ChoiceDef {
                text: c.req_string("text")?,
                value: c.req_string("value")?,
                color: c.req_color("color")?,
                extra: c.finish(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FullAssessmentDef {
        identifier,
        prompt,
        summary,
        choices,
        extra: obj.finish(),
    })
}

fn parse_spot(mut obj: Fields<'_>) -> Result<SpotAssessmentDef> {
    let identifier = obj.req_string("identifier")?;
    let prompt = obj.req_string("prompt")?;
    let summary = parse_summary(obj.req_object("summary")?)?;
    let no_items_summary = parse_summary(obj.req_object("noItemsSummary")?)?;
    let mut o = obj.req_object("options")?;
    let options = SpotOptionsDef {
        something_selected_button_color: o.req_color("somethingSelectedButtonColor")?,
        nothing_selected_button_color: o.req_color("nothingSelectedButtonColor")?,
        item_cell_selected_color: o.req_color("itemCellSelectedColor")?,
        item_cell_selected_overlay_image_title: o.req_string("itemCellSelectedOverlayImageTitle")?,
        item_collection_view_background_color: o.req_color("itemCollectionViewBackgroundColor")?,
        items_per_row: o.req_i64("itemsPerRow")?,
        item_min_spacing: o.req_f64("itemMinSpacing")?,
        extra: o.finish(),
    };
    Ok(SpotAssessmentDef {
        identifier,
        prompt,
        summary,
        no_items_summary,
        options,
        extra: obj.finish(),
    })
}

fn parse_summary(mut obj: Fields<'_>) -> Result<SummaryDef> {
    Ok(SummaryDef {
        identifier: obj.req_string("identifier")?,
        title: obj.req_string("title")?,
        text: obj.req_string("text")?,
        extra: obj.finish(),
    })
}

fn parse_item(v: &Value, path: DocPath) -> Result<ItemDef> {
    let mut obj = Fields::new(v, path)?;
    Ok(ItemDef {
        image_title: obj.req_string("imageTitle")?,
        description: obj.req_string("description")?,
        identifier: obj.req_string("identifier")?,
        extra: obj.finish(),
    })
}

/// Reads fields off a JSON object, tracking which keys were consumed so the
/// rest can be kept as extensions.
struct Fields<'a> {
    map: &'a Map<String, Value>,
    path: DocPath,
    consumed: Vec<&'static str>,
}

impl<'a> Fields<'a> {
    fn new(v: &'a Value, path: DocPath) -> Result<Self> {
        Ok(Fields {
            map: expect_object(v, &path)?,
            path,
            consumed: Vec::new(),
        })
    }

    fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    fn take(&mut self, key: &'static str) -> Option<&'a Value> {
        self.consumed.push(key);
        self.map.get(key)
    }

    fn req(&mut self, key: &'static str) -> Result<(&'a Value, DocPath)> {
        let path = self.path.key(key);
        match self.take(key) {
            Some(v) => Ok((v, path)),
            None => Err(ParseError::MissingField { path }),
        }
    }

    fn req_string(&mut self, key: &'static str) -> Result<String> {
        let (v, path) = self.req(key)?;
        as_string(v, &path)
    }

    fn req_color(&mut self, key: &'static str) -> Result<ColorValue> {
        Ok(ColorValue::new(&self.req_string(key)?))
    }

    fn req_i64(&mut self, key: &'static str) -> Result<i64> {
        let (v, path) = self.req(key)?;
        as_i64(v, &path)
    }

    fn opt_i64(&mut self, key: &'static str) -> Result<Option<i64>> {
        let path = self.path.key(key);
        self.take(key).map(|v| as_i64(v, &path)).transpose()
    }

    fn req_f64(&mut self, key: &'static str) -> Result<f64> {
        let (v, path) = self.req(key)?;
        v.as_f64().ok_or_else(|| wrong_type(&path, "number", v))
    }

    fn req_array(&mut self, key: &'static str) -> Result<(&'a Vec<Value>, DocPath)> {
        let (v, path) = self.req(key)?;
        match v.as_array() {
            Some(a) => Ok((a, path)),
            None => Err(wrong_type(&path, "array", v)),
        }
    }

    fn req_object(&mut self, key: &'static str) -> Result<Fields<'a>> {
        let (v, path) = self.req(key)?;
        Fields::new(v, path)
    }

    fn opt_object(&mut self, key: &'static str) -> Result<Option<Fields<'a>>> {
        let path = self.path.key(key);
        self.take(key).map(|v| Fields::new(v, path)).transpose()
    }

    fn finish(self) -> Extensions {
        self.map
            .iter()
            .filter(|(k, _)| !self.consumed.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

fn expect_object<'a>(v: &'a Value, path: &DocPath) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| wrong_type(path, "object", v))
}

fn as_string(v: &Value, path: &DocPath) -> Result<String> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| wrong_type(path, "string", v))
}

fn as_i64(v: &Value, path: &DocPath) -> Result<i64> {
    v.as_i64().ok_or_else(|| wrong_type(path, "integer", v))
}

fn wrong_type(path: &DocPath, expected: &'static str, found: &Value) -> ParseError {
    ParseError::WrongType {
        path: path.clone(),
        expected,
        found: type_name(found),
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) if n.is_f64() => "number",
        Value::Number(_) => "integer",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}
