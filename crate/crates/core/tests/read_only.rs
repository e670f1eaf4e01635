mod common;

use std::path::Path;

use nl2sql::bench::{evaluate, EvalOptions};
use nl2sql::exec::{execute, ExecStatus};
use nl2sql::llm::stub::FnBackend;
use nl2sql::llm::ChatRequest;
use nl2sql::pipeline::Pipeline;
use nl2sql::{Gateway, PipelineConfig, StageTag};

use common::{hash_tree, MALICIOUS};

#[test]
fn every_write_is_refused() {
    let (_d, demo) = common::demo();
    for db_id in nl2sql::demo::DB_IDS {
        let db = demo.db_path(db_id);
        for sql in MALICIOUS {
            let res = execute(&db, sql, 1_000, 100).unwrap();
            assert_eq!(res.status, ExecStatus::Error, "{db_id}: {sql} was not refused");
        }
    }
    assert!(!Path::new("evil.sqlite").exists());
}

#[test]
fn evaluation_with_hostile_model_leaves_files_untouched() {
    let (dir, demo) = common::demo();
    let before = hash_tree(dir.path());
    let backend = FnBackend::new(|req: &ChatRequest| {
        let n = req.prompt_text().len();
        Ok(match req.stage_tag {
            StageTag::Linking => "{\"tables\": []}".to_string(),
            _ => MALICIOUS[n % MALICIOUS.len()].to_string(),
        })
    });
    let gw = Gateway::new(backend);
    let p = Pipeline::new(&gw, PipelineConfig::default()).unwrap();
    let eval = evaluate(&demo.tasks, &demo.store(), &p, &EvalOptions::default());
    assert_eq!(eval.report.aggregate_ex, 0.0);
    for t in &eval.traces {
        for c in &t.candidates {
            let exec = c.exec.as_ref().unwrap();
            assert!(
                !exec.is_ok() || c.sql.starts_with("SELECT 1;"),
                "{} ran: {:?}",
                c.sql,
                exec.status
            );
        }
    }
    assert_eq!(hash_tree(dir.path()), before);
}
