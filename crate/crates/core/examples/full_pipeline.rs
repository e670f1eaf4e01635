//! One question through every stage, with a scripted model whose revisions
//! disagree so the merge DAG actually calls the model.
//!
//! cargo run --example full_pipeline

use nl2sql::demo::Demo;
use nl2sql::llm::stub::FnBackend;
use nl2sql::llm::ChatRequest;
use nl2sql::pipeline::Pipeline;
use nl2sql::{Gateway, PipelineConfig, StageTag};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let demo = Demo::create(dir.path())?;
    let task = demo.tasks[2].clone();
    let catalog = demo.store().get(&task.db_id)?;
    let gold = task.gold_sql.clone().unwrap();

    let backend = FnBackend::new(move |req: &ChatRequest| {
        Ok(match req.stage_tag {
            StageTag::Linking => r#"{"tables": ["students"]}"#.to_string(),
            StageTag::Generation => "SELECT MAX(gpaa) FROM students".to_string(),
            StageTag::Revision if req.prompt_text().contains("sample rows") => gold.clone(),
            StageTag::Revision => "SELECT MIN(gpa) FROM students".to_string(),
            StageTag::Merge => format!("```sql\n{gold}\n```"),
        })
    });
    let gateway = Gateway::new(backend);
    let pipeline = Pipeline::new(&gateway, PipelineConfig::default())?;
    let run = pipeline.run(&task, &catalog).map_err(|f| f.error)?;
    let trace = &run.trace;

    println!("{}\n", task.question);
    for (label, id) in &trace.labels {
        let c = trace.candidate(*id);
        let status = c.exec.as_ref().map(|e| format!("{:?}", e.status)).unwrap_or_default();
        println!("{label:<5} {status:<6} {}", c.sql);
    }
    println!();
    for m in &trace.merges {
        println!("{}: short-circuited = {}", m.label, m.short_circuited);
    }
    println!("\nfinal ({}): {}", trace.final_label.as_deref().unwrap_or("-"), run.final_candidate.sql);
    println!("model calls: {}", trace.call_count());
    Ok(())
}
