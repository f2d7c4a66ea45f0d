use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::AccessInstance;

use super::{solve, PenaltyConfig, SolveConfig, SolveStatus};

/// `{1, 5, 10, ..., 100}`
pub fn default_group_grid() -> Vec<usize> {
    std::iter::once(1).chain((5..=100).step_by(5)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub num_groups: usize,
    pub status: SolveStatus,
    pub objective: Option<f64>,
    pub dormant_remaining: Option<i64>,
    pub remaining_percent: Option<f64>,
    pub baseline_dormant: usize,
    pub proven_optimal: bool,
    pub wall_time_secs: f64,
}

/// Solves once per group budget. Each point is warm-started from the last
/// feasible memberships; `base.time_limit` applies per point.
pub fn sweep_groups(
    inst: &AccessInstance,
    grid: &[usize],
    base: &SolveConfig,
    pcfg: &PenaltyConfig,
) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::with_capacity(grid.len());
    let mut warm = base.warm_start.clone();
    for &g in grid {
        let mut cfg = base.clone();
        cfg.num_groups = g;
        cfg.warm_start = warm.clone();
        let res = solve(inst, &cfg, pcfg)?;
        log::info!("groups={g} status={:?} objective={:?}", res.status, res.objective());
        if let Some(sol) = &res.solution {
            warm = Some(sol.policy.ug.clone());
        }
        points.push(SweepPoint {
            num_groups: g,
            status: res.status,
            objective: res.objective(),
            dormant_remaining: res.solution.as_ref().map(|s| s.dormant_remaining),
            remaining_percent: res.solution.as_ref().map(|s| s.remaining_percent()),
            baseline_dormant: inst.baseline_dormant(),
            proven_optimal: res.proven_optimal,
            wall_time_secs: res.wall_time_secs,
        });
    }
    Ok(points)
}
