use std::fmt::Write as _;
use std::io;
use std::path::Path;

use super::eval::{EvalReport, Evaluation};
use super::LinkingMetrics;

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

/// Aligned-text rendering of one evaluation.
pub fn report_text(report: &EvalReport) -> String {
    let mut out = String::new();
    let id_w = report
        .per_question
        .iter()
        .map(|q| q.question_id.len())
        .max()
        .unwrap_or(0)
        .max("question".len());
    writeln!(out, "{:<id_w$}  {:<5}  {:>5}  final_sql", "question", "ex", "calls").unwrap();
    for q in &report.per_question {
        let sql = match (&q.final_sql, &q.error) {
            (_, Some(e)) => format!("[error] {e}"),
            (Some(s), None) => s.split_whitespace().collect::<Vec<_>>().join(" "),
            (None, None) => String::new(),
        };
        writeln!(
            out,
            "{:<id_w$}  {:<5}  {:>5}  {sql}",
            q.question_id,
            if q.ex_match { "yes" } else { "no" },
            q.call_count
        )
        .unwrap();
    }
    writeln!(out).unwrap();
    let n = report.per_question.len();
    writeln!(out, "EX        {} ({}/{n})", pct(report.aggregate_ex), report.correct()).unwrap();
    let split_w = report.splits.keys().map(String::len).max().unwrap_or(0);
    for (name, s) in &report.splits {
        writeln!(out, "  {name:<split_w$}  {} ({}/{})", pct(s.ex), s.correct, s.n).unwrap();
    }
    writeln!(
        out,
        "calls     mean {:.2}, min {}, max {}",
        report.mean_calls, report.min_calls, report.max_calls
    )
    .unwrap();
    writeln!(out, "failures  {}", report.failures).unwrap();
    writeln!(out, "config    {}", report.config_fingerprint).unwrap();
    out
}

/// One row per configuration, with split columns when any report has them.
pub fn ablation_table(rows: &[(&str, &EvalReport)]) -> String {
    let mut splits: Vec<&String> = rows.iter().flat_map(|(_, r)| r.splits.keys()).collect();
    splits.sort();
    splits.dedup();
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("Method".len());
    let mut out = String::new();
    write!(out, "{:<name_w$}", "Method").unwrap();
    for s in &splits {
        write!(out, "  {s:>10}").unwrap();
    }
    writeln!(out, "  {:>8}  {:>6}", "EX", "calls").unwrap();
    for (name, r) in rows {
        write!(out, "{name:<name_w$}").unwrap();
        for s in &splits {
            let cell = r.splits.get(*s).map(|v| pct(v.ex)).unwrap_or_else(|| "-".into());
            write!(out, "  {cell:>10}").unwrap();
        }
        writeln!(out, "  {:>8}  {:>6.2}", pct(r.aggregate_ex), r.mean_calls).unwrap();
    }
    out
}

pub fn linking_table(rows: &[(&str, &LinkingMetrics)]) -> String {
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("Method".len());
    let mut out = String::new();
    writeln!(
        out,
        "{:<name_w$}  {:>8}  {:>8}  {:>6}  {:>6}  {:>6}",
        "Method", "Accuracy", "Recall", "Avg-P", "Avg-R", "Avg-F1"
    )
    .unwrap();
    for (name, m) in rows {
        writeln!(
            out,
            "{name:<name_w$}  {:>8}  {:>8}  {:>6}  {:>6}  {:>6}",
            pct(m.accuracy),
            pct(m.recall),
            pct(m.avg_precision),
            pct(m.avg_recall),
            pct(m.avg_f1)
        )
        .unwrap();
    }
    out
}

fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Write `report.json`, `report.txt` and `traces/<question_id>.json`.
pub fn write_report_files(dir: &Path, eval: &Evaluation) -> io::Result<()> {
    std::fs::create_dir_all(dir.join("traces"))?;
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&eval.report)? + "\n",
    )?;
    std::fs::write(dir.join("report.txt"), report_text(&eval.report))?;
    for t in &eval.traces {
        let path = dir.join("traces").join(format!("{}.json", file_safe(&t.question_id)));
        std::fs::write(path, serde_json::to_string_pretty(t)? + "\n")?;
    }
    Ok(())
}
