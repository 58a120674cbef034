//! Tab-separated metrics and trace reports.
//!
//! Both are pure functions of the simulation state, so two runs with the
//! same seed and inputs produce identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::Serialize;

use super::Appliance;
use crate::fabric::{Outcome, Priority};
use crate::query::Flavor;

/// Nearest-rank percentile of sorted values; 0 for an empty slice.
pub fn percentile(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LatencySummary {
    pub count: usize,
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
    pub max: u64,
}

impl LatencySummary {
    pub fn of(mut values: Vec<u64>) -> LatencySummary {
        values.sort_unstable();
        LatencySummary {
            count: values.len(),
            p50: percentile(&values, 50.0),
            p90: percentile(&values, 90.0),
            p99: percentile(&values, 99.0),
            max: values.last().copied().unwrap_or(0),
        }
    }
}

fn ratio(num: u64, den: u64) -> String {
    if den == 0 {
        "0.000000".into()
    } else {
        format!("{:.6}", num as f64 / den as f64)
    }
}

impl Appliance {
    /// End-to-end latency of every query whose tasks all finished.
    pub fn query_latencies(&self) -> LatencySummary {
        let mut end: BTreeMap<u64, (u64, bool)> = BTreeMap::new();
        for r in self.sim.trace() {
            if let Some(q) = r.query {
                let entry = end.entry(q).or_insert((0, true));
                entry.0 = entry.0.max(r.end);
                entry.1 &= r.outcome == Outcome::Done;
            }
        }
        let values = self
            .queries
            .iter()
            .filter_map(|q| end.get(&q.id).filter(|(_, ok)| *ok).map(|(e, _)| e - q.submitted))
            .collect();
        LatencySummary::of(values)
    }

    /// Dispatch wait of background tasks, measured from admission.
    pub fn background_waits(&self) -> LatencySummary {
        let values = self
            .sim
            .trace()
            .iter()
            .filter(|r| r.priority == Priority::Background && r.outcome == Outcome::Done)
            .map(|r| r.start - r.admitted)
            .collect();
        LatencySummary::of(values)
    }

    pub fn metrics_report(&self) -> String {
        let now = self.sim.now();
        let trace = self.sim.trace();
        let mut out = String::new();
        let count = |o: Outcome| trace.iter().filter(|r| r.outcome == o).count();
        out.push_str("[summary]\n");
        let _ = writeln!(out, "ticks\t{now}");
        let _ = writeln!(out, "tasks\t{}", trace.len());
        let _ = writeln!(out, "aborted\t{}", count(Outcome::Aborted));
        let _ = writeln!(out, "cancelled\t{}", count(Outcome::Cancelled));
        let _ = writeln!(out, "documents\t{}", self.store.document_count());
        let _ = writeln!(out, "join_entries\t{}", self.joins.len());
        let _ = writeln!(out, "rejected\t{}", self.rejected);

        out.push_str("\n[nodes]\nnode\tflavor\tstate\tcapacity\ttasks\twork\tbusy\tscan_work\tbytes_in\tbytes_out\tutilization\n");
        let mut flavors: BTreeMap<Flavor, [u64; 6]> = BTreeMap::new();
        for (id, flavor, c) in self.sim.counters() {
            let (state, capacity) = match self.topology.node(id) {
                Some(d) => (d.state.name(), d.compute_capacity),
                None => ("unknown", 0),
            };
            let _ = writeln!(
                out,
                "{id}\t{}\t{state}\t{capacity}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                flavor.name(),
                c.tasks,
                c.work,
                c.busy,
                c.scan_work,
                c.bytes_in,
                c.bytes_out,
                ratio(c.busy, now)
            );
            let f = flavors.entry(flavor).or_default();
            for (slot, v) in f.iter_mut().zip([1, c.tasks, c.work, c.busy, c.scan_work, c.bytes_in]) {
                *slot += v;
            }
        }

        out.push_str("\n[flavors]\nflavor\tnodes\ttasks\twork\tbusy\tscan_work\tbytes_in\n");
        for (flavor, [nodes, tasks, work, busy, scan, bytes]) in flavors {
            let _ = writeln!(out, "{}\t{nodes}\t{tasks}\t{work}\t{busy}\t{scan}\t{bytes}", flavor.name());
        }

        out.push_str("\n[latency]\nmetric\tcount\tp50\tp90\tp99\tmax\n");
        for (name, s) in [("query_latency", self.query_latencies()), ("background_wait", self.background_waits())] {
            let _ = writeln!(out, "{name}\t{}\t{}\t{}\t{}\t{}", s.count, s.p50, s.p90, s.p99, s.max);
        }

        out.push_str("\n[broker]\ntick\tnode\tfrom\tto\n");
        for t in self.stewardship.log() {
            let _ = writeln!(out, "{t}");
        }
        out
    }

    pub fn trace_report(&self) -> String {
        let mut out = String::from(
            "task\tkind\tdetail\tquery\tpriority\tnode\tflavor\tfallback\tsubmitted\tadmitted\tstart\tend\twork\tbytes_in\tqueued_interactive\tqueued_aged\toutcome\n",
        );
        for r in self.sim.trace() {
            let query = r.query.map_or_else(|| "-".to_string(), |q| q.to_string());
            let outcome = match r.outcome {
                Outcome::Done => "done",
                Outcome::Aborted => "aborted",
                Outcome::Cancelled => "cancelled",
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{query}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{outcome}",
                r.task,
                r.kind,
                r.detail,
                r.priority.name(),
                r.node,
                r.flavor.name(),
                u8::from(r.fallback),
                r.submitted,
                r.admitted,
                r.start,
                r.end,
                r.work,
                r.bytes_in,
                r.queued_interactive,
                r.queued_aged,
            );
        }
        out.push_str("\n[membership]\ntick\tevent\tnode\tdetail\n");
        for e in &self.membership {
            let node = e.node.map_or_else(|| "-".to_string(), |n| n.to_string());
            let _ = writeln!(out, "{}\t{}\t{node}\t{}", e.tick, e.event, e.detail);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<u64> = (1..=10).collect();
        assert_eq!(percentile(&v, 50.0), 5);
        assert_eq!(percentile(&v, 90.0), 9);
        assert_eq!(percentile(&v, 99.0), 10);
        assert_eq!(percentile(&v, 0.0), 1);
        assert_eq!(percentile(&[], 50.0), 0);
    }

    #[test]
    fn summary_of_empty_is_zero() {
        assert_eq!(LatencySummary::of(vec![]), LatencySummary::default());
        let s = LatencySummary::of(vec![7, 3, 5]);
        assert_eq!((s.count, s.p50, s.max), (3, 5, 7));
    }
}
