use std::fmt::Write;

use super::{BinaryTask, EvalReport, LocalizationResult, Outcome};
use crate::maskgen::SizeClass;

fn table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let line: Vec<String> = r.iter().enumerate().map(|(c, s)| format!("{s:<w$}", w = widths[c])).collect();
        out.push_str(line.join(" | ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            out.push_str(&rule.join("-+-"));
            out.push('\n');
        }
    }
    out
}

fn cell<T>(o: &Outcome<T>, f: impl Fn(&T) -> String) -> String {
    match o {
        Outcome::Evaluated { result } => f(result),
        Outcome::Skipped { .. } => "skipped".into(),
        Outcome::Failed { .. } => "error".into(),
    }
}

fn mcc_row(name: String, r: &LocalizationResult) -> Vec<String> {
    let mut row = vec![name];
    for sc in SizeClass::ALL {
        let b = r.scores.rows.iter().find(|b| b.size_class == sc);
        row.push(b.and_then(|b| b.mcc).map_or("-".into(), |m| format!("{m:.3}")));
    }
    row.push(format!("{:.3}", r.scores.overall));
    row.push(format!("{:.2}{}", r.threshold, if r.inverted { " (inv)" } else { "" }));
    row
}

pub(super) fn render(report: &EvalReport) -> String {
    let mut s = String::new();
    let m = &report.meta;
    let _ = writeln!(
        s,
        "split {}  images {} (pristine {}, fully {}, partially {})  accuracy {}  manifest {}",
        m.split,
        m.counts.total,
        m.counts.pristine,
        m.counts.fully_synthetic,
        m.counts.partially_manipulated,
        m.accuracy_averaging,
        &m.manifest_digest[..12.min(m.manifest_digest.len())]
    );

    let mut adapters: Vec<&str> = Vec::new();
    for e in &report.binary {
        if !adapters.contains(&e.adapter.as_str()) {
            adapters.push(&e.adapter);
        }
    }
    s.push_str("\nBinary tasks (AUC / Acc / Acc calibrated)\n");
    let mut rows = vec![std::iter::once("Task".to_string()).chain(adapters.iter().map(|a| a.to_string())).collect()];
    for task in BinaryTask::ALL {
        let mut row = vec![task.title().to_string()];
        for a in &adapters {
            row.push(report.binary.iter().find(|e| e.adapter == *a && e.task == task).map_or("-".into(), |e| {
                cell(&e.outcome, |r| format!("{:.2} / {:.2} / {:.2}", r.auc, r.acc_original, r.acc_calibrated))
            }));
        }
        rows.push(row);
    }
    s.push_str(&table(&rows));

    if !report.three_way.is_empty() {
        s.push_str("\nThree-way classification (mean per-class accuracy)\n");
        let mut rows = vec![vec!["Strategy".into(), "Detector".into(), "Splicer".into(), "Mean acc".into(), "Confusion".into()]];
        for e in &report.three_way {
            rows.push(vec![
                format!("{:?}", e.strategy),
                e.detector.clone(),
                e.splicer.clone(),
                cell(&e.outcome, |r| format!("{:.3}", r.mean_accuracy)),
                cell(&e.outcome, |r| format!("{:?}", r.confusion)),
            ]);
        }
        s.push_str(&table(&rows));
    }

    s.push_str("\nLocalization (MCC by region size)\n");
    match &report.localization.skipped {
        Some(reason) => {
            let _ = writeln!(s, "skipped: {reason}");
        }
        None => {
            let mut rows = vec![std::iter::once("Localizer".to_string())
                .chain(SizeClass::ALL.iter().map(|c| c.name().to_string()))
                .chain(["Overall".to_string(), "Threshold".to_string()])
                .collect()];
            for e in &report.localization.entries {
                for (tag, o) in [("calibrated", &e.calibrated), ("fixed", &e.fixed)] {
                    let name = format!("{} ({tag})", e.localizer);
                    match o {
                        Outcome::Evaluated { result } => rows.push(mcc_row(name, result)),
                        other => rows.push(vec![name, cell(other, |_: &LocalizationResult| String::new())]),
                    }
                }
            }
            s.push_str(&table(&rows));
        }
    }

    if !report.errors.is_empty() {
        let _ = writeln!(s, "\n{} adapter errors", report.errors.len());
        for e in &report.errors {
            let _ = writeln!(s, "  {} {}: {}", e.adapter, e.item.as_deref().unwrap_or("-"), e.detail);
        }
    }
    s
}
