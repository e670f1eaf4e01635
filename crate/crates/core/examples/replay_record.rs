//! Record every model exchange to a JSONL file, then evaluate again from the
//! recording alone and check the reports agree.
//!
//! cargo run --example replay_record

use nl2sql::bench::{evaluate, EvalOptions};
use nl2sql::demo::Demo;
use nl2sql::llm::{ReplayBackend, ReplayStore, ReplayWriter};
use nl2sql::pipeline::Pipeline;
use nl2sql::{Gateway, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let demo = Demo::create(dir.path())?;
    let store = demo.store();
    let log = dir.path().join("calls.jsonl");

    let recorded = {
        let gateway = Gateway::new(demo.oracle()).with_recorder(ReplayWriter::create(&log)?);
        let pipeline = Pipeline::new(&gateway, PipelineConfig::default())?;
        evaluate(&demo.tasks, &store, &pipeline, &EvalOptions::default()).report
    };
    let replay = ReplayStore::load(&log)?;
    println!("recorded {} exchanges to {}", replay.len(), log.display());

    let gateway = Gateway::new(ReplayBackend::new(replay));
    let pipeline = Pipeline::new(&gateway, PipelineConfig::default())?;
    let replayed = evaluate(&demo.tasks, &store, &pipeline, &EvalOptions::default()).report;

    println!("recorded EX {:.3}  hash {}", recorded.aggregate_ex, recorded.content_hash());
    println!("replayed EX {:.3}  hash {}", replayed.aggregate_ex, replayed.content_hash());
    assert_eq!(recorded.content_hash(), replayed.content_hash());
    Ok(())
}
