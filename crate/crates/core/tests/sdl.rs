mod common;

use common::{fixture_bytes, yadl};
use proptest::prelude::*;
use serde_json::{json, Value};
use visurvey_core::sdl::{
    canonical_serialize, parse_study_definition, validate_study, AssetManifest, DocPath,
    ParseError, Severity,
};

fn yadl_value() -> Value {
    serde_json::from_slice(&fixture_bytes("yadl.json")).unwrap()
}

fn parse_value(v: &Value) -> Result<visurvey_core::StudyDefinition, ParseError> {
    parse_study_definition(serde_json::to_string(v).unwrap().as_bytes())
}

#[test]
fn parses_reference_document() {
    let study = yadl();
    assert_eq!(study.study_id, "YADL");
    assert_eq!(study.schema_version, 1);
    assert!(study.schema_version_defaulted());
    assert_eq!(study.assessments.len(), 1);
    let pair = &study.assessments[0];
    let values: Vec<_> = pair.full.choices.iter().map(|c| c.value.as_str()).collect();
    assert_eq!(values, ["easy", "moderate", "hard"]);
    assert_eq!(
        pair.full.prompt,
        "How hard is this activity for you on a difficult day?"
    );
    assert_eq!(pair.spot.no_items_summary.text, "You have no activities to measure");
    assert_eq!(pair.spot.options.items_per_row, 3);
    assert_eq!(pair.spot.options.item_min_spacing, 10.0);
    assert_eq!(pair.spot.options.something_selected_button_color.as_str(), "#0080FF");
    let ids: Vec<_> = study.items.iter().map(|i| i.identifier.as_str()).collect();
    assert_eq!(ids, ["Bathing", "BedToChair", "Toilet", "WalkingUpStairs"]);
    assert_eq!(study.item("Toilet").unwrap().description, "Using the toilet");
    assert_eq!(pair.activation.values, ["moderate", "hard"]);
    assert!(!pair.activation_explicit);
}

#[test]
fn empty_document_has_no_study() {
    assert_eq!(parse_study_definition(b"{}"), Err(ParseError::MissingStudy));
}

#[test]
fn string_items_per_row_is_a_type_error() {
    let mut doc = yadl_value();
    doc["YADL"]["spot"]["options"]["itemsPerRow"] = json!("3");
    let err = parse_value(&doc).unwrap_err();
    assert_eq!(err.code(), "WRONG_TYPE");
    assert_eq!(
        err.path().unwrap().to_string(),
        "YADL.spot.options.itemsPerRow"
    );
}

#[test]
fn syntax_errors_carry_location() {
    let err = parse_study_definition(b"{\n  \"YADL\": {\n    \"full\": ,\n").unwrap_err();
    match err {
        ParseError::Syntax { line, column, .. } => {
            assert_eq!(line, 3);
            assert!(column > 0);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn missing_field_reports_path() {
    let mut doc = yadl_value();
    doc["YADL"]["full"].as_object_mut().unwrap().remove("prompt");
    let err = parse_value(&doc).unwrap_err();
    assert_eq!(err, ParseError::MissingField {
        path: DocPath::root().key("YADL").key("full").key("prompt")
    });
}

#[test]
fn two_study_objects_are_rejected() {
    let err = parse_study_definition(br#"{"A": {}, "B": {}}"#).unwrap_err();
    assert_eq!(err.code(), "MULTIPLE_STUDIES");
}

#[test]
fn reference_document_validates_without_errors() {
    let report = validate_study(&yadl(), None);
    assert!(report.is_valid(), "{report:?}");
    // The document has no schemaVersion, which is only a warning.
    assert_eq!(report.codes(), ["MISSING_SCHEMA_VERSION"]);
    assert_eq!(report.diagnostics[0].severity, Severity::Warning);
}

#[test]
fn duplicate_item_identifier() {
    let mut doc = yadl_value();
    doc["YADL"]["activities"][1]["identifier"] = json!("Bathing");
    let report = validate_study(&parse_value(&doc).unwrap(), None);
    let dup: Vec<_> = report
        .diagnostics
        .iter()
        .filter(|d| d.code == "DUP_IDENTIFIER")
        .collect();
    assert_eq!(dup.len(), 1);
    assert_eq!(dup[0].path.to_string(), "YADL.activities[1].identifier");
    assert!(!report.is_valid());
}

#[test]
fn bad_color() {
    let mut doc = yadl_value();
    doc["YADL"]["full"]["choices"][0]["color"] = json!("#GGGGGG");
    let report = validate_study(&parse_value(&doc).unwrap(), None);
    assert!(report.codes().contains(&"BAD_COLOR"));
    let d = report.diagnostics.iter().find(|d| d.code == "BAD_COLOR").unwrap();
    assert_eq!(d.path.to_string(), "YADL.full.choices[0].color");
}

#[test]
fn each_problem_has_its_own_code() {
    let mut doc = yadl_value();
    doc["YADL"]["schemaVersion"] = json!(1);
    doc["YADL"]["full"]["choices"][2]["value"] = json!("easy");
    doc["YADL"]["spot"]["options"]["itemsPerRow"] = json!(0);
    doc["YADL"]["spot"]["options"]["itemMinSpacing"] = json!(-1.0);
    doc["YADL"]["activities"][0]["identifier"] = json!("summary");
    doc["YADL"]["activation"] = json!({"values": ["severe"]});
    let report = validate_study(&parse_value(&doc).unwrap(), None);
    assert_eq!(
        report.codes(),
        [
            "UNKNOWN_ACTIVATION_VALUE",
            "RESERVED_IDENTIFIER",
            "DUP_CHOICE_VALUE",
            "BAD_ITEM_SPACING",
            "BAD_ITEMS_PER_ROW",
        ]
    );

    let mut doc = yadl_value();
    doc["YADL"]["full"]["choices"] = json!([]);
    doc["YADL"]["activities"] = json!([]);
    let report = validate_study(&parse_value(&doc).unwrap(), None);
    assert!(report.codes().contains(&"EMPTY_CHOICES"));
    assert!(report.codes().contains(&"EMPTY_ITEMS"));

    let mut doc = yadl_value();
    doc["YADL"]["full"]["choices"].as_array_mut().unwrap().truncate(1);
    let report = validate_study(&parse_value(&doc).unwrap(), None);
    assert!(report.codes().contains(&"TOO_FEW_CHOICES"));
}

#[test]
fn asset_manifest_resolution() {
    let study = yadl();
    let all = AssetManifest::from_keys(["Bathing", "BedToChair", "Toilet", "WalkingUpStairs", "first_tab"]);
    assert!(validate_study(&study, Some(&all)).is_valid());

    let partial = AssetManifest::from_keys(["Bathing", "first_tab"]);
    let report = validate_study(&study, Some(&partial));
    let paths: Vec<_> = report
        .diagnostics
        .iter()
        .filter(|d| d.code == "UNRESOLVED_ASSET")
        .map(|d| d.path.to_string())
        .collect();
    assert_eq!(
        paths,
        [
            "YADL.activities[1].imageTitle",
            "YADL.activities[2].imageTitle",
            "YADL.activities[3].imageTitle"
        ]
    );

    let dir = tempfile::tempdir().unwrap();
    for name in ["Bathing.png", "BedToChair.png", "Toilet.jpg", "WalkingUpStairs.png", "first_tab.png"] {
        std::fs::write(dir.path().join(name), b"").unwrap();
    }
    let from_dir = AssetManifest::from_dir(dir.path()).unwrap();
    assert_eq!(from_dir, all);
}

#[test]
fn unknown_fields_are_kept_and_warned() {
    let mut doc = yadl_value();
    doc["YADL"]["locale"] = json!("en-US");
    doc["YADL"]["activities"][2]["difficultyHint"] = json!({"max": 3});
    let study = parse_value(&doc).unwrap();
    assert_eq!(study.extra["locale"], json!("en-US"));
    assert_eq!(study.items[2].extra["difficultyHint"], json!({"max": 3}));

    let report = validate_study(&study, None);
    let unknown: Vec<_> = report
        .diagnostics
        .iter()
        .filter(|d| d.code == "UNKNOWN_FIELD")
        .map(|d| (d.severity, d.path.to_string()))
        .collect();
    assert_eq!(
        unknown,
        [
            (Severity::Warning, "YADL.activities[2].difficultyHint".to_string()),
            (Severity::Warning, "YADL.locale".to_string()),
        ]
    );

    let again = parse_study_definition(&canonical_serialize(&study)).unwrap();
    assert_eq!(again, study);
}

#[test]
fn every_diagnostic_path_exists_in_the_input() {
    let mut doc = yadl_value();
    doc["YADL"]["x"] = json!(1);
    doc["YADL"]["full"]["choices"][1]["value"] = json!("easy");
    doc["YADL"]["full"]["choices"][1]["color"] = json!("red");
    doc["YADL"]["activities"][3]["identifier"] = json!("Toilet");
    doc["YADL"]["spot"]["summary"]["identifier"] = json!("YADL Full Identifier");
    let report = validate_study(&parse_value(&doc).unwrap(), None);
    assert!(report.diagnostics.len() >= 5);
    for d in &report.diagnostics {
        assert!(d.path.resolve(&doc).is_some(), "{} not in document", d.path);
    }
}

#[test]
fn canonical_form_matches_golden_file() {
    let bytes = canonical_serialize(&yadl());
    let golden = fixture_bytes("yadl.canonical.json");
    assert_eq!(String::from_utf8(bytes).unwrap(), String::from_utf8(golden).unwrap());
}

#[test]
fn canonical_roundtrip_and_idempotence() {
    let study = yadl();
    let first = canonical_serialize(&study);
    let reparsed = parse_study_definition(&first).unwrap();
    assert_eq!(reparsed, study);
    assert_eq!(canonical_serialize(&reparsed), first);
    assert_eq!(canonical_serialize(&study), first);
}

#[test]
fn lowercase_colors_are_upper_cased() {
    let mut doc = yadl_value();
    doc["YADL"]["full"]["choices"][0]["color"] = json!("#69d2e7");
    let out = String::from_utf8(canonical_serialize(&parse_value(&doc).unwrap())).unwrap();
    assert!(out.contains("\"#69D2E7\""));
    assert!(!out.contains("#69d2e7"));
}

#[test]
fn explicit_activation_and_multiple_pairs_roundtrip() {
    let base = yadl_value();
    let pair = json!({
        "full": base["YADL"]["full"],
        "spot": base["YADL"]["spot"],
        "activation": {"values": ["hard"]}
    });
    let mut second = pair.clone();
    second["full"]["identifier"] = json!("Second Full");
    second["full"]["summary"]["identifier"] = json!("Second Full Summary");
    second["spot"]["identifier"] = json!("Second Spot");
    second["spot"]["summary"]["identifier"] = json!("Second Spot Summary");
    second["spot"]["noItemsSummary"]["identifier"] = json!("Second Spot None");
    second["note"] = json!("kept");
    let doc = json!({"YADL": {
        "schemaVersion": 1,
        "assessments": [pair, second],
        "activities": base["YADL"]["activities"],
    }});
    let study = parse_value(&doc).unwrap();
    assert_eq!(study.assessments.len(), 2);
    assert_eq!(study.assessments[0].activation.values, ["hard"]);
    assert!(study.pair("Second Spot").is_some());
    let report = validate_study(&study, None);
    assert_eq!(report.codes(), ["UNKNOWN_FIELD"]);

    let bytes = canonical_serialize(&study);
    let again = parse_study_definition(&bytes).unwrap();
    assert_eq!(again, study);
    assert_eq!(canonical_serialize(&again), bytes);

    let mut conflicting = doc.clone();
    conflicting["YADL"]["full"] = base["YADL"]["full"].clone();
    assert_eq!(parse_value(&conflicting).unwrap_err().code(), "CONFLICTING_FIELDS");
}

#[test]
fn validation_is_deterministic() {
    let mut doc = yadl_value();
    doc["YADL"]["b"] = json!(1);
    doc["YADL"]["a"] = json!(1);
    doc["YADL"]["full"]["choices"][1]["color"] = json!("nope");
    let study = parse_value(&doc).unwrap();
    let first = validate_study(&study, None);
    for _ in 0..5 {
        assert_eq!(validate_study(&study, None), first);
    }
    let mut sorted = first.diagnostics.clone();
    sorted.sort_by(|a, b| a.path.cmp(&b.path).then(a.code.cmp(b.code)));
    assert_eq!(sorted, first.diagnostics);
}

fn ident() -> impl Strategy<Value = String> {
    "[A-Za-z][A-Za-z0-9 ]{0,12}"
}

fn color() -> impl Strategy<Value = String> {
    "#[0-9a-fA-F]{6}"
}

prop_compose! {
    fn study_doc()(
        study in "[A-Z]{2,6}",
        prompt in ".{0,40}",
        choices in prop::collection::btree_set("[a-z]{1,8}", 2..5),
        colors in prop::collection::vec(color(), 9),
        n_items in 1usize..8,
        per_row in 1i64..6,
        spacing in 0u32..400,
        version in prop::option::of(1i64..4),
        extra in prop::option::of(("[a-z]{3,6}", any::<i32>())),
    ) -> Value {
        let choices: Vec<Value> = choices
            .iter()
            .enumerate()
            .map(|(i, v)| json!({"text": v.to_uppercase(), "value": v, "color": colors[i % 9]}))
            .collect();
        let items: Vec<Value> = (0..n_items)
            .map(|i| json!({"imageTitle": format!("img{i}"), "description": format!("Item {i}"), "identifier": format!("item{i}")}))
            .collect();
        let mut body = json!({
            "full": {
                "identifier": "F", "prompt": prompt,
                "summary": {"identifier": "FS", "title": "T", "text": "x"},
                "choices": choices
            },
            "spot": {
                "identifier": "S", "prompt": "p",
                "summary": {"identifier": "SS", "title": "T", "text": "y"},
                "noItemsSummary": {"identifier": "SN", "title": "T", "text": "z"},
                "options": {
                    "somethingSelectedButtonColor": colors[4],
                    "nothingSelectedButtonColor": colors[5],
                    "itemCellSelectedColor": colors[6],
                    "itemCellSelectedOverlayImageTitle": "overlay",
                    "itemCollectionViewBackgroundColor": colors[7],
                    "itemsPerRow": per_row,
                    "itemMinSpacing": f64::from(spacing) / 4.0
                }
            },
            "activities": items
        });
        if let Some(v) = version {
            body["schemaVersion"] = json!(v);
        }
        if let Some((k, v)) = extra {
            body[format!("x-{k}")] = json!(v);
        }
        json!({ study: body })
    }
}

proptest! {
    #[test]
    fn roundtrip_is_model_identity(doc in study_doc()) {
        let study = parse_value(&doc).unwrap();
        prop_assert!(validate_study(&study, None).is_valid());
        let bytes = canonical_serialize(&study);
        let again = parse_study_definition(&bytes).unwrap();
        prop_assert_eq!(&again, &study);
        prop_assert_eq!(canonical_serialize(&again), bytes);
    }

    #[test]
    fn identifiers_survive_any_text(id in ident()) {
        let mut doc = yadl_value();
        doc["YADL"]["activities"][0]["identifier"] = json!(id.clone());
        let study = parse_value(&doc).unwrap();
        prop_assert_eq!(&study.items[0].identifier, &id);
    }
}
