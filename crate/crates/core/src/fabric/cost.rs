//! Linear cost model: work = ceil(α·in + β·out), transfer = ceil(γ·bytes).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::query::OpKind;

/// Cost names for work that is not a query operator.
pub const TASK_COSTS: [&str; 9] =
    ["commit", "index", "run_intra", "run_inter", "persist_annotation", "persist_joins", "copy", "rebuild", "analyze"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Ticks per byte moved between distinct nodes.
    pub gamma: f64,
    pub ops: BTreeMap<String, Coefficients>,
}

impl Default for CostModel {
    fn default() -> Self {
        let mut ops = BTreeMap::new();
        for kind in OpKind::ALL {
            let c = match kind {
                OpKind::IndexScan | OpKind::Fetch => Coefficients { alpha: 1.0, beta: 0.5 },
                OpKind::Filter | OpKind::PartialTopK => Coefficients { alpha: 0.5, beta: 0.5 },
                OpKind::IndexedNLJoin => Coefficients { alpha: 2.0, beta: 1.0 },
                _ => Coefficients { alpha: 0.5, beta: 1.0 },
            };
            ops.insert(kind.name().to_string(), c);
        }
        for name in TASK_COSTS {
            let c = match name {
                "run_intra" | "run_inter" => Coefficients { alpha: 2.0, beta: 1.0 },
                "copy" | "rebuild" => Coefficients { alpha: 0.01, beta: 1.0 },
                "analyze" => Coefficients { alpha: 1.0, beta: 1.0 },
                _ => Coefficients { alpha: 0.5, beta: 0.5 },
            };
            ops.insert(name.to_string(), c);
        }
        CostModel { gamma: 0.001, ops }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err("cost_model.gamma must be a positive number".into());
        }
        for (name, c) in &self.ops {
            if !(c.alpha > 0.0 && c.beta > 0.0 && c.alpha.is_finite() && c.beta.is_finite()) {
                return Err(format!("cost_model.{name}: alpha and beta must be positive"));
            }
        }
        for name in OpKind::ALL.iter().map(|k| k.name()).chain(TASK_COSTS) {
            if !self.ops.contains_key(name) {
                return Err(format!("cost_model is missing coefficients for {name}"));
            }
        }
        Ok(())
    }

    /// Work units for one task; never below 1.
    pub fn work(&self, name: &str, tuples_in: usize, tuples_out: usize) -> u64 {
        let c = self.ops.get(name).copied().unwrap_or(Coefficients { alpha: 1.0, beta: 1.0 });
        let w = (c.alpha * tuples_in as f64 + c.beta * tuples_out as f64).ceil();
        (w as u64).max(1)
    }

    /// Ticks to move `bytes` between two distinct nodes.
    pub fn transfer(&self, bytes: usize) -> u64 {
        if bytes == 0 {
            return 0;
        }
        (self.gamma * bytes as f64).ceil() as u64
    }
}

/// Ticks a task of `work` units occupies a node of `capacity` units/tick.
pub fn duration(work: u64, capacity: u64) -> u64 {
    work.div_ceil(capacity.max(1)).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn work_and_duration_round_up() {
        let model = CostModel::default();
        assert!(model.validate().is_ok());
        assert_eq!(model.work("index_scan", 3, 1), 4); // 3 + 0.5 -> 4
        assert_eq!(model.work("index_scan", 0, 0), 1);
        assert_eq!(duration(10, 4), 3);
        assert_eq!(duration(1, 100), 1);
        assert_eq!(model.transfer(0), 0);
        assert_eq!(model.transfer(1), 1);
        assert_eq!(model.transfer(2500), 3);
    }
}
