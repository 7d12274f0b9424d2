//! Canonical JSON form of a study document.
//!
//! Key order follows the authored layout of the reference YADL document:
//! study object `schemaVersion, full, spot, activation, activities` (or
//! `schemaVersion, assessments, activities`), then each nested object's
//! known keys in declaration order. Unknown keys follow the known keys of
//! the object they were found on, sorted by name. Output is indented with
//! two spaces and ends with a newline.

use serde_json::{Map, Value};

use super::{AssessmentPair, Extensions, StudyDefinition};

pub fn canonical_serialize(def: &StudyDefinition) -> Vec<u8> {
    let mut out =
        serde_json::to_vec_pretty(&study_to_value(def)).expect("study model always serializes");
    out.push(b'\n');
    out
}

/// The canonical document as a JSON value (wrapped in the study-name key).
pub fn study_to_value(def: &StudyDefinition) -> Value {
    let mut study = Map::new();
    study.insert("schemaVersion".into(), def.schema_version.into());
    let single = def.assessments.len() == 1
        && !def.source.pairs_in_array
        && def.assessments[0].extra.is_empty();
    if single {
        write_pair(&mut study, &def.assessments[0]);
    } else {
        let pairs = def
            .assessments
            .iter()
            .map(|p| {
                let mut m = Map::new();
                write_pair(&mut m, p);
                append_extra(&mut m, &p.extra);
                Value::Object(m)
            })
            .collect();
        study.insert("assessments".into(), Value::Array(pairs));
    }
    study.insert("activities".into(), to_value(&def.items));
    append_extra(&mut study, &def.extra);

    let mut top = Map::new();
    top.insert(def.study_id.clone(), Value::Object(study));
    Value::Object(top)
}

fn write_pair(m: &mut Map<String, Value>, pair: &AssessmentPair) {
    m.insert("full".into(), to_value(&pair.full));
    m.insert("spot".into(), to_value(&pair.spot));
    if pair.activation_explicit {
        m.insert("activation".into(), to_value(&pair.activation));
    }
}

fn append_extra(m: &mut Map<String, Value>, extra: &Extensions) {
    for (k, v) in extra {
        m.insert(k.clone(), v.clone());
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("model types serialize to JSON")
}
