use std::fmt::Write;

use crate::babi::BabiReport;
use crate::tasks::graph::PathReport;
use crate::tasks::pai::PaiReport;

use super::data::EvalReport;

/// Human-readable table for an evaluation report.
pub fn format_report(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "split: {}  loss: {:.4}  mean hops: {:.2}", r.split.name(), r.loss, r.mean_hops);
    if let Ok(p) = serde_json::from_value::<PaiReport>(r.detail.clone()) {
        let _ = writeln!(s, "{:<10} {:>7} {:>10} {:>14} {:>6}", "type", "count", "accuracy", "match>lure", "hops");
        for t in p.by_type.iter().chain([&p.direct, &p.indirect, &p.overall]) {
            let _ = writeln!(
                s,
                "{:<10} {:>7} {:>9.2}% {:>13.2}% {:>6.2}",
                t.label,
                t.count,
                100.0 * t.accuracy,
                100.0 * t.match_vs_lure,
                t.mean_hops
            );
        }
    } else if let Ok(reports) = serde_json::from_value::<Vec<PathReport>>(r.detail.clone()) {
        for p in reports {
            let _ = writeln!(s, "feed: {:?}  ({} graphs)", p.feed.unwrap_or(crate::tasks::Feed::Predicted), p.count);
            let _ = writeln!(s, "{:<6} {:>10} {:>14} {:>6}", "node", "exact", "any shortest", "hops");
            for k in 0..p.node_accuracy.len() {
                let _ = writeln!(
                    s,
                    "{:<6} {:>9.2}% {:>13.2}% {:>6.2}",
                    k + 1,
                    100.0 * p.node_accuracy[k],
                    100.0 * p.any_valid_accuracy[k],
                    p.mean_hops[k]
                );
            }
        }
    } else if let Ok(b) = serde_json::from_value::<BabiReport>(r.detail.clone()) {
        let _ = writeln!(s, "{:<6} {:>7} {:>10}", "task", "count", "error");
        for (t, acc, n) in b.per_task.iter().filter(|t| t.2 > 0) {
            let _ = writeln!(s, "{:<6} {:>7} {:>9.2}%", t, n, 100.0 * (1.0 - acc));
        }
        let _ = writeln!(s, "mean error {:.2}%  solved (>95%) {}", 100.0 * (1.0 - b.mean_accuracy), b.solved);
    } else {
        for (k, v) in &r.accuracy {
            let _ = writeln!(s, "{k:<24} {v:.4}");
        }
    }
    s
}
