//! Run the bundled benchmark against a real OpenAI-compatible server.
//!
//! NL2SQL_ENDPOINT=http://localhost:8000 cargo run --example live_endpoint
//!
//! Model names come from the default config; set BASE_SQL_API_KEY if the
//! server needs a bearer token. Add NL2SQL_RECORD=calls.jsonl to keep the
//! exchanges for offline replay.

use std::path::Path;

use nl2sql::bench::{evaluate, report_text, EvalOptions};
use nl2sql::demo::Demo;
use nl2sql::llm::{Endpoint, OpenAiBackend, ReplayWriter, API_KEY_ENV};
use nl2sql::pipeline::Pipeline;
use nl2sql::{Gateway, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let Ok(url) = std::env::var("NL2SQL_ENDPOINT") else {
        eprintln!("set NL2SQL_ENDPOINT to an OpenAI-compatible base URL");
        return Ok(());
    };
    let dir = tempfile::tempdir()?;
    let demo = Demo::create(dir.path())?;

    let backend = OpenAiBackend::new(Endpoint::new(url))?.with_api_key(std::env::var(API_KEY_ENV).ok());
    let mut gateway = Gateway::new(backend).with_parallelism(4);
    if let Ok(path) = std::env::var("NL2SQL_RECORD") {
        gateway = gateway.with_recorder(ReplayWriter::create(Path::new(&path))?);
    }
    let pipeline = Pipeline::new(&gateway, PipelineConfig::default())?;
    let opts = EvalOptions { jobs: 4, ..Default::default() };
    let eval = evaluate(&demo.tasks, &demo.store(), &pipeline, &opts);
    print!("{}", report_text(&eval.report));
    Ok(())
}
