//! Prints the canonical form of a study document.
//!
//! cargo run -p visurvey-core --example canonicalize -- fixtures/yadl.json

use std::io::Write;

fn main() {
    let path = std::env::args().nth(1).expect("usage: canonicalize <study.json>");
    let bytes = std::fs::read(&path).expect("readable study document");
    let study = visurvey_core::parse_study_definition(&bytes).unwrap_or_else(|e| {
        eprintln!("{path}: {e}");
        std::process::exit(1);
    });
    std::io::stdout()
        .write_all(&visurvey_core::canonical_serialize(&study))
        .unwrap();
}
