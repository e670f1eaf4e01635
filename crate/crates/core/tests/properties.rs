mod common;

use nl2sql::bench::linking_metrics_sets;
use nl2sql::exec::{results_match, ExecResult};
use nl2sql::llm::stub::FnBackend;
use nl2sql::llm::ChatRequest;
use nl2sql::pipeline::Pipeline;
use nl2sql::{Gateway, PipelineConfig, StageTag, Task};
use proptest::prelude::*;

use common::{brute_linking, oracle_match, rows, table_sets};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn linking_metrics_match_brute_force(pairs in prop::collection::vec(table_sets(), 1..8)) {
        let (preds, golds): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let m = linking_metrics_sets(&preds, &golds).unwrap();
        let want = brute_linking(&preds, &golds);
        let got = [m.accuracy, m.recall, m.avg_precision, m.avg_recall, m.avg_f1];
        for (g, w) in got.iter().zip(want) {
            prop_assert!((g - w).abs() <= 1e-12, "{got:?} vs {want:?}");
        }
        prop_assert!(m.accuracy <= m.recall);
    }

    #[test]
    fn results_match_agrees_with_sort_dedup((arity, a, b) in (1usize..=3).prop_flat_map(|n| (Just(n), rows(n), rows(n)))) {
        let (x, y) = (ExecResult::ok(vec![], a.clone()), ExecResult::ok(vec![], b.clone()));
        prop_assert_eq!(results_match(&x, &y).unwrap(), oracle_match(&a, &b), "arity {}", arity);
    }

    #[test]
    fn shuffled_duplicated_rows_still_match(a in rows(2), seed in any::<u64>()) {
        let mut b = a.clone();
        if let Some(first) = a.first() {
            b.push(first.clone());
        }
        let len = b.len().max(1);
        b.rotate_left((seed as usize) % len);
        let (x, y) = (ExecResult::ok(vec![], a), ExecResult::ok(vec![], b));
        prop_assert!(results_match(&x, &y).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn results_match_is_an_equivalence(a in rows(1), b in rows(1), c in rows(1)) {
        let [x, y, z] = [a, b, c].map(|r| ExecResult::ok(vec![], r));
        let m = |p: &ExecResult, q: &ExecResult| results_match(p, q).unwrap();
        prop_assert!(m(&x, &x));
        prop_assert_eq!(m(&x, &y), m(&y, &x));
        if m(&x, &y) && m(&y, &z) {
            prop_assert!(m(&x, &z));
        }
    }
}

fn literal(v: &Lit) -> String {
    match v {
        Lit::Int(i) => i.to_string(),
        Lit::Real(f) => format!("{f:?}"),
        Lit::Text(t) => format!("'{t}'"),
    }
}

#[derive(Debug, Clone)]
enum Lit {
    Int(i64),
    Real(f64),
    Text(String),
}

fn lit() -> impl Strategy<Value = Lit> {
    prop_oneof![
        (-5i64..5).prop_map(Lit::Int),
        prop::sample::select(vec![0.5, 2.0, -1.25]).prop_map(Lit::Real),
        "[a-z]{0,3}".prop_map(Lit::Text),
    ]
}

fn values_sql(rows: &[Vec<Lit>]) -> String {
    let body: Vec<String> = rows
        .iter()
        .map(|r| format!("({})", r.iter().map(literal).collect::<Vec<_>>().join(", ")))
        .collect();
    format!("SELECT * FROM (VALUES {})", body.join(", "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Generation and revision disagree textually but agree on the result
    /// set, so every merge must hand back its left input untouched.
    #[test]
    fn merge_short_circuit_returns_left(
        table in prop::collection::vec(prop::collection::vec(lit(), 2), 1..6),
        rot in any::<usize>(),
    ) {
        let left = values_sql(&table);
        let mut shuffled = table.clone();
        shuffled.rotate_left(rot % table.len());
        shuffled.push(table[0].clone());
        let right = format!("{}\nUNION ALL SELECT * FROM (VALUES (0, 0)) WHERE 0", values_sql(&shuffled));

        let (l, r) = (left.clone(), right.clone());
        let backend = FnBackend::new(move |req: &ChatRequest| Ok(match req.stage_tag {
            StageTag::Linking => "{\"tables\": [\"schools\"]}".to_string(),
            StageTag::Generation => l.clone(),
            _ => r.clone(),
        }));
        let gw = Gateway::new(backend);
        let p = Pipeline::new(&gw, PipelineConfig::default()).unwrap();
        let run = p.run(&Task::new("p", "school", "q"), &DEMO.store().get("school").unwrap()).unwrap();

        prop_assert_eq!(gw.call_count(Some(StageTag::Merge)), 0);
        for m in &run.trace.merges {
            prop_assert!(m.short_circuited);
            prop_assert_eq!(m.output, m.left);
        }
        let sql6 = run.trace.labelled("SQL6").unwrap();
        prop_assert_eq!(sql6.sql.as_bytes(), left.as_bytes());
        prop_assert_eq!(&run.final_candidate.sql, &right);
    }
}

static DEMO: std::sync::LazyLock<nl2sql::demo::Demo> = std::sync::LazyLock::new(|| {
    let root = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("properties-demo");
    nl2sql::demo::Demo::create(&root).unwrap()
});
