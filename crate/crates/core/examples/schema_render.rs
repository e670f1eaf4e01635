//! Introspect a database and print it in every prompt serialization.
//!
//! cargo run --example schema_render

use nl2sql::demo::Demo;
use nl2sql::schema::render;
use nl2sql::{SchemaSubset, SerializationKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let demo = Demo::create(dir.path())?;
    let catalog = demo.store().get("school")?;

    for kind in SerializationKind::ALL {
        println!("==== {kind} ====");
        println!("{}", render(&SchemaSubset::full(&catalog), kind));
    }

    // Subsets keep catalog order no matter how the names are listed.
    let subset = SchemaSubset::new(&catalog, ["scores", "students"])?;
    println!("==== m-schema, two tables ====");
    println!("{}", render(&subset, SerializationKind::MSchema));
    Ok(())
}
