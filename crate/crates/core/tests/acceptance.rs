//! End-to-end acceptance checks. Runs without the libtest harness so every
//! check prints exactly one PASS/FAIL line, in order, even when it passes.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nl2sql::bench::{evaluate, evaluate_linking, example_scores, linking_metrics_sets, EvalOptions};
use nl2sql::demo::{oracle_for, Demo};
use nl2sql::exec::{execute, results_match, ExecResult, ExecStatus};
use nl2sql::llm::stub::{question_of, FnBackend, OracleBackend};
use nl2sql::llm::{ChatRequest, ReplayBackend, ReplayStore, ReplayWriter};
use nl2sql::pipeline::Pipeline;
use nl2sql::schema::{render, rendered_table_headers};
use nl2sql::trainprep::{build_generation_samples, PrepOptions};
use nl2sql::{
    CatalogStore, ColumnInfo, DatabaseCatalog, Gateway, PipelineConfig, SchemaSubset,
    SerializationKind, StageTag, TableInfo, Task,
};
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

// Pinned tolerances.
const ORACLE_RUNTIME_LIMIT: Duration = Duration::from_secs(10);
const METRIC_TOL: f64 = 1e-12;
const FIXTURE_TOL: f64 = 1e-9;
const NOISE_BAND: (f64, f64) = (0.09, 0.11);

type Check = Result<String, String>;
type Checks<'a> = Vec<(&'static str, Box<dyn Fn() -> Check + 'a>)>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config::with_cases(cases),
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

/// Draw `n` values from `strategy` with a fixed seed.
fn draws<S: Strategy>(strategy: S, n: u32) -> Vec<S::Value> {
    let mut r = runner(n);
    (0..n)
        .map(|_| strategy.new_tree(&mut r).unwrap().current())
        .collect()
}

fn fresh_demo() -> (tempfile::TempDir, Demo) {
    common::demo()
}

fn oracle_ex(demo: &Demo) -> Check {
    let started = Instant::now();
    let gw = Gateway::new(demo.oracle());
    let p = Pipeline::new(&gw, PipelineConfig::default()).map_err(|e| e.to_string())?;
    let report = evaluate(&demo.tasks, &demo.store(), &p, &EvalOptions::default()).report;
    let elapsed = started.elapsed();
    ensure(report.per_question.len() == 20, || "benchmark is not 20 questions".into())?;
    ensure(report.aggregate_ex == 1.0, || format!("aggregate_ex {}", report.aggregate_ex))?;
    ensure(elapsed < ORACLE_RUNTIME_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!("aggregate_ex = {:.3} over 20 questions in {:?}", report.aggregate_ex, elapsed))
}

fn controlled_misses(demo: &Demo) -> Check {
    let mut seen = Vec::new();
    for (n, k) in [(20usize, 5usize), (10, 10), (7, 0)] {
        let tasks = &demo.tasks[..n];
        let backend = tasks[..k]
            .iter()
            .fold(oracle_for(tasks), |b, t| b.wrong_on(t.question.clone()));
        let gw = Gateway::new(backend);
        let p = Pipeline::new(&gw, PipelineConfig::default()).map_err(|e| e.to_string())?;
        let ex = evaluate(tasks, &demo.store(), &p, &EvalOptions::default()).report.aggregate_ex;
        let want = (n - k) as f64 / n as f64;
        ensure(ex == want, || format!("(n={n}, k={k}): got {ex}, want {want}"))?;
        seen.push(format!("({n},{k})->{ex}"));
    }
    Ok(seen.join(" "))
}

/// Generation and plain revision return gold; the sampled revision is wrong
/// on every third question, which forces two merge calls there.
fn mixed_backend(tasks: &[Task]) -> impl nl2sql::llm::ChatBackend {
    let gold = common::gold_by_question(tasks);
    let wrong: BTreeSet<String> = tasks
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 3 == 0)
        .map(|(_, t)| t.question.clone())
        .collect();
    FnBackend::new(move |req: &ChatRequest| {
        let prompt = req.prompt_text();
        let q = question_of(&prompt).unwrap_or_default().to_string();
        Ok(match req.stage_tag {
            StageTag::Linking => "{\"tables\": []}".into(),
            StageTag::Revision if prompt.contains("sample rows") && wrong.contains(&q) => {
                "SELECT 'off by one'".into()
            }
            _ => gold[&q].clone(),
        })
    })
}

fn call_counts(demo: &Demo, dir: &Path) -> Check {
    let store = demo.store();
    let counts = |backend: Box<dyn nl2sql::llm::ChatBackend>, log: Option<&Path>| -> Result<Vec<usize>, String> {
        let mut gw = Gateway::new(backend);
        if let Some(path) = log {
            gw = gw.with_recorder(ReplayWriter::create(path).map_err(|e| e.to_string())?);
        }
        let p = Pipeline::new(&gw, PipelineConfig::default()).map_err(|e| e.to_string())?;
        let report = evaluate(&demo.tasks, &store, &p, &EvalOptions::default()).report;
        Ok(report.per_question.iter().map(|q| q.call_count).collect())
    };
    let all_short = counts(Box::new(demo.oracle()), None)?;
    ensure(all_short.iter().all(|&c| c == 4), || format!("short-circuit fixture: {all_short:?}"))?;
    let none_short = counts(Box::new(common::disagreeing_backend(&demo.tasks)), None)?;
    ensure(none_short.iter().all(|&c| c == 7), || format!("no-short-circuit fixture: {none_short:?}"))?;

    let log = dir.join("mixed.jsonl");
    counts(Box::new(mixed_backend(&demo.tasks)), Some(&log))?;
    let store_file = ReplayStore::load(&log).map_err(|e| e.to_string())?;
    let replayed = counts(Box::new(ReplayBackend::new(store_file)), None)?;
    ensure(replayed.iter().all(|c| (4..=7).contains(c)), || format!("replayed: {replayed:?}"))?;
    let mean = replayed.iter().sum::<usize>() as f64 / replayed.len() as f64;
    Ok(format!("all-agree 4, all-disagree 7, replayed mixed run in [4,7] (mean {mean:.2})"))
}

fn merge_short_circuit(demo: &Demo) -> Check {
    let cat = demo.store().get("school").map_err(|e| e.to_string())?;
    let tables = draws(
        proptest::collection::vec(proptest::collection::vec(-9i64..9, 2), 1..6),
        200,
    );
    let values = |rows: &[Vec<i64>]| {
        let body: Vec<String> = rows.iter().map(|r| format!("({}, {})", r[0], r[1])).collect();
        format!("SELECT * FROM (VALUES {})", body.join(", "))
    };
    for (i, rows) in tables.iter().enumerate() {
        let left = values(rows);
        let mut other = rows.clone();
        other.reverse();
        other.push(rows[0].clone());
        let right = values(&other);
        let (l, r) = (left.clone(), right.clone());
        let gw = Gateway::new(FnBackend::new(move |req: &ChatRequest| {
            Ok(match req.stage_tag {
                StageTag::Linking => "{}".to_string(),
                StageTag::Generation => l.clone(),
                _ => r.clone(),
            })
        }));
        let p = Pipeline::new(&gw, PipelineConfig::default()).map_err(|e| e.to_string())?;
        let run = p
            .run(&Task::new(i.to_string(), "school", "pair"), &cat)
            .map_err(|e| e.to_string())?;
        ensure(gw.call_count(Some(StageTag::Merge)) == 0, || format!("pair {i}: merge call made"))?;
        let sql6 = run.trace.labelled("SQL6").ok_or("no SQL6")?;
        ensure(sql6.sql.as_bytes() == left.as_bytes(), || format!("pair {i}: output differs from left"))?;
        ensure(run.trace.merges.iter().all(|m| m.short_circuited && m.output == m.left), || {
            format!("pair {i}: a merge was not short-circuited")
        })?;
    }
    Ok("200 agreeing pairs, output == left byte-for-byte, 0 merge calls".into())
}

fn linking_metrics_oracle(demo: &Demo) -> Check {
    let pairs = draws(proptest::collection::vec(common::table_sets(), 1..8), 1000);
    let mut worst = 0.0f64;
    for batch in &pairs {
        let (preds, golds): (Vec<_>, Vec<_>) = batch.iter().cloned().unzip();
        let m = linking_metrics_sets(&preds, &golds).map_err(|e| e.to_string())?;
        let want = common::brute_linking(&preds, &golds);
        let got = [m.accuracy, m.recall, m.avg_precision, m.avg_recall, m.avg_f1];
        for (g, w) in got.iter().zip(want) {
            worst = worst.max((g - w).abs());
        }
        ensure(m.accuracy <= m.recall, || "accuracy > recall".into())?;
    }
    ensure(worst <= METRIC_TOL, || format!("max deviation {worst:e}"))?;

    let set = |s: &[&str]| s.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>();
    let s = example_scores(&set(&["A", "B", "C"]), &set(&["A", "B"]));
    ensure((s.precision - 0.6667).abs() <= 1e-4 && (s.precision - 2.0 / 3.0).abs() <= FIXTURE_TOL, || format!("p={}", s.precision))?;
    ensure(s.recall == 1.0, || format!("r={}", s.recall))?;
    ensure((s.f1 - 0.8).abs() <= FIXTURE_TOL, || format!("f1={}", s.f1))?;

    // Full-schema predictor: the oracle answers linking with SQL, so every
    // question falls back to all tables.
    let gw = Gateway::new(demo.oracle());
    let p = Pipeline::new(&gw, PipelineConfig::default()).map_err(|e| e.to_string())?;
    let full = evaluate_linking(&demo.tasks, &demo.store(), &p, 1);
    ensure(full.metrics.recall == 1.0, || format!("full-schema recall {}", full.metrics.recall))?;
    Ok(format!(
        "1000 batches max dev {worst:e}; fixture p={:.4} r={} f1={:.4}; full-schema recall {} (accuracy {:.2})",
        s.precision, s.recall, s.f1, full.metrics.recall, full.metrics.accuracy
    ))
}

fn comparator_oracle() -> Check {
    let pairs = draws(
        (1usize..=3).prop_flat_map(|n| (common::rows(n), common::rows(n))),
        1000,
    );
    let mut agree_true = 0;
    for (i, (a, b)) in pairs.iter().enumerate() {
        let got = results_match(&ExecResult::ok(vec![], a.clone()), &ExecResult::ok(vec![], b.clone()))
            .map_err(|e| format!("{e:?}"))?;
        ensure(got == common::oracle_match(a, b), || format!("pair {i} disagrees"))?;
        agree_true += got as usize;
    }
    // Shuffled copies give the oracle positive cases too.
    let mut positives = 0;
    for (i, (a, _)) in pairs.iter().enumerate().take(300) {
        let mut b = a.clone();
        b.reverse();
        b.extend(a.iter().take(2).cloned());
        let got = results_match(&ExecResult::ok(vec![], a.clone()), &ExecResult::ok(vec![], b.clone())).unwrap();
        ensure(got && common::oracle_match(a, &b), || format!("shuffled {i}"))?;
        positives += 1;
    }
    let triples = draws((common::rows(1), common::rows(1), common::rows(1)), 500);
    let m = |a: &Vec<Vec<nl2sql::Scalar>>, b: &Vec<Vec<nl2sql::Scalar>>| {
        results_match(&ExecResult::ok(vec![], a.clone()), &ExecResult::ok(vec![], b.clone())).unwrap()
    };
    for (i, (a, b, c)) in triples.iter().enumerate() {
        ensure(m(a, a), || format!("reflexivity {i}"))?;
        ensure(m(a, b) == m(b, a), || format!("symmetry {i}"))?;
        ensure(!(m(a, b) && m(b, c)) || m(a, c), || format!("transitivity {i}"))?;
    }
    Ok(format!(
        "1000 random pairs agree with sort/dedup ({agree_true} equal), {positives} shuffled positives, 500 triples"
    ))
}

fn serialization_goldens(demo: &Demo) -> Check {
    let cat = demo.store().get("school").map_err(|e| e.to_string())?;
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for kind in SerializationKind::ALL {
        let want = std::fs::read_to_string(dir.join(format!("school.{}.txt", kind.as_str())))
            .map_err(|e| format!("{kind}: {e}"))?;
        let first = render(&SchemaSubset::full(&cat), kind);
        ensure(first == want, || format!("{kind} differs from golden"))?;
        for _ in 0..10 {
            ensure(render(&SchemaSubset::full(&cat), kind) == first, || format!("{kind} not deterministic"))?;
        }
    }
    Ok("4 kinds byte-identical to goldens, 10 repeated renders each".into())
}

fn noise_statistics() -> Check {
    let table = |name: String| TableInfo {
        name,
        columns: vec![ColumnInfo {
            name: "id".into(),
            data_type: "INTEGER".into(),
            description: None,
            is_primary_key: true,
            sample_values: vec![],
        }],
        foreign_keys: vec![],
        sample_rows: vec![],
    };
    let store = CatalogStore::from_catalogs((0..4).map(|d| DatabaseCatalog {
        db_id: format!("db{d}"),
        tables: (0..3 + d).map(|t| table(format!("t{t}"))).collect(),
        source_path: Default::default(),
    }));
    let tasks: Vec<Task> = (0..10_000)
        .map(|i| Task {
            gold_sql: Some(if i % 3 == 0 {
                "SELECT t0.id FROM t0 JOIN t1 ON t0.id = t1.id".to_string()
            } else {
                format!("SELECT id FROM t{}", i % 2)
            }),
            ..Task::new(i.to_string(), format!("db{}", i % 4), format!("q{i}"))
        })
        .collect();
    let opts = PrepOptions::default();
    let corpus = build_generation_samples(&tasks, &store, &opts);
    let frac = corpus.noise_fraction();
    ensure((NOISE_BAND.0..=NOISE_BAND.1).contains(&frac), || format!("fraction {frac}"))?;
    let mut ks: BTreeMap<usize, usize> = BTreeMap::new();
    for s in corpus.samples.iter().filter(|s| s.noise_applied) {
        let k = s.noise_tables.len();
        ensure((1..=2).contains(&k), || format!("{}: k = {k}", s.question_id))?;
        let gold = &s.tables[..s.tables.len() - k];
        ensure(s.noise_tables.iter().all(|t| !gold.contains(t)), || format!("{}: noise hits gold", s.question_id))?;
        *ks.entry(k).or_default() += 1;
    }
    let hash = corpus.content_hash();
    ensure(build_generation_samples(&tasks, &store, &opts).content_hash() == hash, || "hash unstable".into())?;
    Ok(format!("fraction {frac:.4}, k counts {ks:?}, corpus hash {}", &hash[..12]))
}

fn prompt_fidelity(demo: &Demo) -> Check {
    let task = demo.tasks[3].clone();
    let cat = demo.store().get(&task.db_id).map_err(|e| e.to_string())?;
    let all: Vec<String> = cat.tables.iter().map(|t| t.name.clone()).collect();
    let linked = vec!["schools".to_string(), "students".to_string()];

    // Linking returns two tables, generation gold, revisions disagree so
    // both merge prompts are exercised.
    let gold = task.gold_sql.clone().unwrap();
    let backend = FnBackend::new(move |req: &ChatRequest| {
        Ok(match req.stage_tag {
            StageTag::Linking => "{\"tables\": [\"students\", \"schools\"]}".to_string(),
            StageTag::Generation => gold.clone(),
            StageTag::Revision if req.prompt_text().contains("sample rows") => "SELECT 2".into(),
            StageTag::Revision => "SELECT 1".into(),
            StageTag::Merge => gold.clone(),
        })
    });
    let spy = Arc::new(common::Spy::new(backend));
    let gw = Gateway::new(Arc::clone(&spy));
    let p = Pipeline::new(&gw, PipelineConfig::default()).map_err(|e| e.to_string())?;
    p.run(&task, &cat).map_err(|e| e.to_string())?;

    let anchors: [(StageTag, &[&str]); 4] = [
        (StageTag::Linking, &["Remember not to generate SQL"]),
        (StageTag::Generation, &["Please output only the final SQL query"]),
        (StageTag::Revision, &["revise the SQL query", "Please output only the final revised SQL query"]),
        (StageTag::Merge, &["Here are some corresponding draft SQL", "Please output only the final SQL query"]),
    ];
    let seen = spy.seen.lock().unwrap();
    let mut per_stage: BTreeMap<String, usize> = BTreeMap::new();
    for (stage, prompt) in seen.iter() {
        *per_stage.entry(stage.to_string()).or_default() += 1;
        let (_, phrases) = anchors.iter().find(|(s, _)| s == stage).unwrap();
        for a in *phrases {
            ensure(prompt.contains(a), || format!("{stage} prompt lacks `{a}`"))?;
        }
        let headers = rendered_table_headers(prompt.split("\n\n-- ").next().unwrap());
        match stage {
            StageTag::Revision | StageTag::Linking => {
                ensure(headers == all, || format!("{stage} headers {headers:?}"))?
            }
            StageTag::Generation => ensure(headers == linked, || format!("generation headers {headers:?}"))?,
            StageTag::Merge => {}
        }
    }
    for s in StageTag::ALL {
        ensure(per_stage.contains_key(&s.to_string()), || format!("no {s} prompt recorded"))?;
    }
    Ok(format!("anchors present in {per_stage:?}; revision = full schema, generation = linked tables"))
}

fn read_only_safety() -> Check {
    let (dir, demo) = fresh_demo();
    let before = common::hash_tree(dir.path());
    for sql in common::MALICIOUS {
        let res = execute(&demo.db_path("retail"), sql, 2_000, 100).map_err(|e| e.to_string())?;
        ensure(res.status == ExecStatus::Error, || format!("`{sql}` returned {:?}", res.status))?;
    }
    let hostile = FnBackend::new(|req: &ChatRequest| {
        let n = req.prompt_text().len();
        Ok(common::MALICIOUS[n % common::MALICIOUS.len()].to_string())
    });
    let gw = Gateway::new(hostile);
    let p = Pipeline::new(&gw, PipelineConfig::default()).map_err(|e| e.to_string())?;
    evaluate(&demo.tasks, &demo.store(), &p, &EvalOptions::default());
    // The gold-SQL oracle run exercises the evaluation read path too.
    let gw = Gateway::new(OracleBackend::new(
        demo.tasks.iter().map(|t| (t.question.clone(), t.gold_sql.clone().unwrap())),
    ));
    let p = Pipeline::new(&gw, PipelineConfig::default()).map_err(|e| e.to_string())?;
    evaluate(&demo.tasks, &demo.store(), &p, &EvalOptions::default());
    let after = common::hash_tree(dir.path());
    ensure(before == after, || "database files changed".into())?;
    Ok(format!("{} write statements refused, {} files unchanged", common::MALICIOUS.len(), after.len()))
}

fn main() {
    let (dir, demo) = fresh_demo();
    let checks: Checks = vec![
        ("oracle execution accuracy", Box::new(|| oracle_ex(&demo))),
        ("controlled-miss arithmetic", Box::new(|| controlled_misses(&demo))),
        ("call-count bounds", Box::new(|| call_counts(&demo, dir.path()))),
        ("merge short-circuit", Box::new(|| merge_short_circuit(&demo))),
        ("linking metrics vs brute force", Box::new(|| linking_metrics_oracle(&demo))),
        ("result comparator vs oracle", Box::new(comparator_oracle)),
        ("serialization goldens", Box::new(|| serialization_goldens(&demo))),
        ("noise-injection statistics", Box::new(noise_statistics)),
        ("prompt fidelity", Box::new(|| prompt_fidelity(&demo))),
        ("read-only safety", Box::new(read_only_safety)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        match check() {
            Ok(detail) => println!("[{:02}] PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("[{:02}] FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
