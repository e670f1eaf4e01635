//! Score table-linking predictions: exact accuracy, superset recall and
//! averaged per-example precision, recall and F1.
//!
//! cargo run --example linking_metrics

use nl2sql::bench::{evaluate_linking, linking_metrics_sets, linking_table};
use nl2sql::demo::Demo;
use nl2sql::llm::stub::OracleBackend;
use nl2sql::pipeline::Pipeline;
use nl2sql::trainprep::gold_tables;
use nl2sql::{Gateway, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let preds = vec![vec!["A", "B", "C"], vec!["A"], vec!["b"]];
    let golds = vec![vec!["A", "B"], vec!["A"], vec!["A", "B"]];
    let hand = linking_metrics_sets(&preds, &golds)?;

    // Linker that returns exactly the gold tables, and one that always falls
    // back to the whole schema.
    let dir = tempfile::tempdir()?;
    let demo = Demo::create(dir.path())?;
    let store = demo.store();
    let mut exact = OracleBackend::new(demo.tasks.iter().map(|t| (t.question.clone(), t.gold_sql.clone().unwrap())));
    for t in &demo.tasks {
        let catalog = store.get(&t.db_id)?;
        let tables = gold_tables(t, &catalog)?;
        exact = exact.with_linking_tables(&t.question, tables);
    }
    let run = |backend: OracleBackend| -> Result<_, Box<dyn std::error::Error>> {
        let gateway = Gateway::new(backend);
        let pipeline = Pipeline::new(&gateway, PipelineConfig::default())?;
        Ok(evaluate_linking(&demo.tasks, &store, &pipeline, 1).metrics)
    };
    let exact = run(exact)?;
    let full = run(demo.oracle())?;

    println!("{}", linking_table(&[("hand-made", &hand), ("gold linker", &exact), ("full schema", &full)]));
    Ok(())
}
