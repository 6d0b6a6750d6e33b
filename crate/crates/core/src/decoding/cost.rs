use serde::{Deserialize, Serialize};

use super::trace::GenerationTrace;

/// Inference cost of one generation in units of one token forward pass.
///
/// The pretrained model pays `context_charge` once for reading its prompt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub aligned_cost: u64,
    pub classifier_cost: u64,
    pub pretrained_cost: u64,
    pub total: u64,
    /// Share of steps routed as critical; 0 for an empty trace.
    pub critical_fraction: f64,
}

pub fn cost_report(trace: &GenerationTrace, context_charge: u64) -> CostReport {
    let c = &trace.counters;
    let aligned_cost = c.aligned_calls as u64;
    let classifier_cost = c.classifier_calls as u64;
    let pretrained_cost = c.pretrained_calls as u64 + context_charge;
    let n = trace.steps.len();
    CostReport {
        aligned_cost,
        classifier_cost,
        pretrained_cost,
        total: aligned_cost + classifier_cost + pretrained_cost,
        critical_fraction: if n == 0 { 0.0 } else { trace.critical_steps() as f64 / n as f64 },
    }
}
