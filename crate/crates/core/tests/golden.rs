mod common;

use std::path::PathBuf;

use nl2sql::schema::render;
use nl2sql::{SchemaSubset, SerializationKind};

fn golden_path(kind: SerializationKind) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("school.{}.txt", kind.as_str()))
}

// Set NL2SQL_BLESS=1 to rewrite the golden files after an intended change.
#[test]
fn serializations_match_goldens() {
    let (_dir, demo) = common::demo();
    let catalog = demo.store().get("school").unwrap();
    let bless = std::env::var_os("NL2SQL_BLESS").is_some();
    for kind in SerializationKind::ALL {
        let text = render(&SchemaSubset::full(&catalog), kind);
        let path = golden_path(kind);
        if bless {
            std::fs::write(&path, &text).unwrap();
            continue;
        }
        let want = std::fs::read_to_string(&path)
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(text, want, "{kind} drifted from {}", path.display());
    }
}

#[test]
fn rendering_is_stable_across_fresh_introspections() {
    let mut seen: Vec<Vec<String>> = Vec::new();
    for _ in 0..10 {
        let (_dir, demo) = common::demo();
        let catalog = demo.store().get("retail").unwrap();
        seen.push(
            SerializationKind::ALL
                .iter()
                .map(|k| render(&SchemaSubset::full(&catalog), *k))
                .collect(),
        );
    }
    assert!(seen.windows(2).all(|w| w[0] == w[1]));
}
