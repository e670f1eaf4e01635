//! Evaluate every preset on the bundled 20-question benchmark and print an
//! ablation table. The scripted model misses a few questions on purpose.
//!
//! cargo run --example evaluate_toy_benchmark

use nl2sql::bench::{ablation_table, evaluate, report_text, EvalOptions};
use nl2sql::demo::Demo;
use nl2sql::pipeline::{Pipeline, Preset};
use nl2sql::Gateway;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let demo = Demo::create(dir.path())?;
    let store = demo.store();
    let opts = EvalOptions { jobs: 4, ..Default::default() };

    let mut reports = Vec::new();
    for preset in Preset::ALL {
        let backend = demo.tasks.iter().step_by(7).fold(demo.oracle(), |b, t| b.wrong_on(t.question.clone()));
        let gateway = Gateway::new(backend);
        let pipeline = Pipeline::new(&gateway, preset.config())?;
        reports.push((preset.label(), evaluate(&demo.tasks, &store, &pipeline, &opts).report));
    }
    let rows: Vec<_> = reports.iter().map(|(n, r)| (*n, r)).collect();
    println!("{}", ablation_table(&rows));
    println!("{}", report_text(&reports.last().unwrap().1));
    Ok(())
}
