//! Drive the first two stages by hand: table linking, then generation over
//! the linked tables only.
//!
//! cargo run --example link_and_generate

use nl2sql::demo::Demo;
use nl2sql::llm::stub::OracleBackend;
use nl2sql::pipeline::Pipeline;
use nl2sql::{Gateway, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let demo = Demo::create(dir.path())?;
    let task = demo.tasks[3].clone();
    let catalog = demo.store().get(&task.db_id)?;

    let backend = OracleBackend::new([(task.question.clone(), task.gold_sql.clone().unwrap())])
        .with_linking_tables(&task.question, ["students".into(), "schools".into()]);
    let gateway = Gateway::new(backend);
    let pipeline = Pipeline::new(&gateway, PipelineConfig::default())?;
    let mut session = pipeline.session(&task, &catalog)?;

    let linked = session.link_schema()?;
    println!("question : {}", task.question);
    println!("linked   : {:?} (fallback: {})", linked.predicted_tables, linked.fallback_used);

    let id = session.generate_candidate(&linked)?;
    let cand = session.candidate(id);
    println!("sql      : {}", cand.sql);
    let exec = cand.exec.as_ref().unwrap();
    println!("exec     : {:?}, {} rows", exec.status, exec.rows.len());

    let trace = session.into_trace();
    println!("\n---- generation prompt ----\n{}", trace.calls[1].prompt);
    Ok(())
}
