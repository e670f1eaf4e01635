//! Candidates that return the same rows are merged without a model call;
//! candidates that differ go to the merge stage.
//!
//! cargo run --example merge_short_circuit

use nl2sql::demo::Demo;
use nl2sql::llm::stub::FnBackend;
use nl2sql::llm::ChatRequest;
use nl2sql::pipeline::Pipeline;
use nl2sql::{Gateway, PipelineConfig, StageTag};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let demo = Demo::create(dir.path())?;
    let task = demo.tasks[0].clone();
    let catalog = demo.store().get(&task.db_id)?;

    let cases = [
        ("equivalent", "SELECT name FROM schools ORDER BY name", "SELECT DISTINCT name FROM schools"),
        ("different", "SELECT name FROM schools", "SELECT city FROM schools"),
    ];
    for (what, plain, sampled) in cases {
        let gateway = Gateway::new(FnBackend::new(move |req: &ChatRequest| {
            Ok(match req.stage_tag {
                StageTag::Linking => "{}".to_string(),
                StageTag::Revision if req.prompt_text().contains("sample rows") => sampled.to_string(),
                StageTag::Revision | StageTag::Merge => plain.to_string(),
                StageTag::Generation => "SELECT name FROM schools".to_string(),
            })
        }));
        let pipeline = Pipeline::new(&gateway, PipelineConfig::default())?;
        let run = pipeline.run(&task, &catalog).map_err(|f| f.error)?;
        println!("{what}: SQL2 = {plain}; SQL3 = {sampled}");
        for m in &run.trace.merges {
            println!("  {}: short-circuited = {}", m.label, m.short_circuited);
        }
        println!("  merge calls = {}\n", gateway.call_count(Some(StageTag::Merge)));
    }
    Ok(())
}
