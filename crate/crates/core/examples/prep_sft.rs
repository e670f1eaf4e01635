//! Build the linking and generation fine-tuning corpora from a benchmark
//! with gold SQL, with distractor tables mixed into some generation samples.
//!
//! cargo run --example prep_sft

use nl2sql::demo::Demo;
use nl2sql::trainprep::{build_generation_samples, build_linking_samples, write_corpus_dir, PrepOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let demo = Demo::create(dir.path())?;
    let store = demo.store();
    let opts = PrepOptions { noise_rate: 0.3, seed: 11, ..Default::default() };

    let linking = build_linking_samples(&demo.tasks, &store, &opts);
    let generation = build_generation_samples(&demo.tasks, &store, &opts);
    println!("linking samples    : {}", linking.samples.len());
    println!("generation samples : {} ({:.0}% with noise)", generation.samples.len(), generation.noise_fraction() * 100.0);
    for s in generation.samples.iter().filter(|s| s.noise_applied).take(3) {
        println!("  {} tables {:?}, noise {:?}", s.question_id, s.tables, s.noise_tables);
    }

    let out = dir.path().join("sft");
    write_corpus_dir(&out, &linking, &generation, &opts)?;
    for entry in std::fs::read_dir(&out)? {
        let entry = entry?;
        println!("wrote {} ({} bytes)", entry.file_name().to_string_lossy(), entry.metadata()?.len());
    }
    println!("\n---- first linking completion ----\n{}", linking.samples[0].completion);
    Ok(())
}
