use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityPlan {
    /// Machines served concurrently by one processor.
    pub machines_per_unit: usize,
    pub latency_ms: f64,
    pub units: usize,
}

/// Per-machine latency `T_single / N` with `N = min(machines, n_max, cores)`
/// machines sharing one processor, and `⌈machines / n_max⌉` processors.
pub fn capacity_plan(t_single_ms: f64, machines: usize, cores: usize, n_max: usize) -> Result<CapacityPlan> {
    if n_max == 0 {
        return Err(Error::validation("n_max must be >= 1"));
    }
    if machines == 0 || cores == 0 {
        return Err(Error::validation("machines and cores must be >= 1"));
    }
    if !(t_single_ms > 0.0) || !t_single_ms.is_finite() {
        return Err(Error::validation(format!("single-machine time {t_single_ms} must be positive")));
    }
    let n = machines.min(n_max).min(cores);
    Ok(CapacityPlan {
        machines_per_unit: n,
        latency_ms: t_single_ms / n as f64,
        units: machines.div_ceil(n_max),
    })
}
