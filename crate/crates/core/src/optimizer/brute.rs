use std::time::Instant;

use crate::bits::BitMatrix;
use crate::error::{Error, Result};
use crate::model::{AccessInstance, GeneratedPolicy};

use super::{objective, IncumbentEvent, PenaltyConfig, Solution, SolveConfig, SolveResult, SolveStatus};

/// Largest `(|U| + |D|) * G` accepted by [`brute_force_solve`].
pub const BRUTE_FORCE_BIT_LIMIT: usize = 24;

/// Enumerates every membership and grant matrix and returns the best
/// feasible policy. Only `num_groups` and `pair_exclusions` are read from
/// the solve configuration.
pub fn brute_force_solve(inst: &AccessInstance, scfg: &SolveConfig, pcfg: &PenaltyConfig) -> Result<SolveResult> {
    pcfg.validate()?;
    let start = Instant::now();
    let (nu, nd, ng) = (inst.n_users(), inst.n_datastores(), scfg.num_groups);
    if ng == 0 {
        return Err(Error::InvalidConfig("number of generated groups must be positive".into()));
    }
    let bits = (nu + nd) * ng;
    if bits > BRUTE_FORCE_BIT_LIMIT {
        return Err(Error::InstanceTooLarge { bits, limit: BRUTE_FORCE_BIT_LIMIT });
    }

    let ud: Vec<u32> = (0..nu).map(|u| row_mask(inst.ud(), u)).collect();
    let udhat: Vec<u32> = (0..nu).map(|u| row_mask(inst.ud_hat(), u)).collect();
    let types: Vec<Vec<usize>> = (0..nd).map(|d| inst.dt().row(d).iter().collect()).collect();
    let n_types = inst.data_types().len();
    let type_set = |row: u32| -> Vec<bool> {
        let mut seen = vec![false; n_types];
        for d in 0..nd {
            if row >> d & 1 == 1 {
                for &t in &types[d] {
                    seen[t] = true;
                }
            }
        }
        seen
    };
    let hist_types: Vec<Vec<bool>> = ud.iter().map(|&r| type_set(r)).collect();
    let udhat_total: usize = udhat.iter().map(|r| r.count_ones() as usize).sum();

    let mut best: Option<(f64, u64, u64)> = None;
    let mut evaluated = 0usize;
    for ug_mask in 0u64..(1u64 << (nu * ng)) {
        let in_group = |u: usize, g: usize| ug_mask >> (u * ng + g) & 1 == 1;
        let excluded = scfg
            .pair_exclusions
            .iter()
            .any(|&(a, b)| (0..ng).any(|g| in_group(a, g) && in_group(b, g)));
        if excluded {
            continue;
        }
        'dad: for dad_mask in 0u64..(1u64 << (ng * nd)) {
            evaluated += 1;
            let grant = |g: usize| ((dad_mask >> (g * nd)) as u32) & ((1u32 << nd) - 1);
            let mut eff_total = 0usize;
            let mut cost = 0.0;
            for u in 0..nu {
                let mut reach = 0u32;
                for g in 0..ng {
                    if in_group(u, g) {
                        reach |= grant(g);
                    }
                }
                let eff = reach & udhat[u];
                if eff & ud[u] != ud[u] {
                    continue 'dad;
                }
                let t = type_set(eff);
                if t.iter().zip(&hist_types[u]).any(|(&now, &before)| now && !before) {
                    continue 'dad;
                }
                let x = eff.count_ones() as usize;
                eff_total += x;
                cost += pcfg.slack_and_penalty(x, ud[u].count_ones() as usize).1;
            }
            let value = (udhat_total - eff_total) as f64 - cost;
            if best.is_none_or(|(b, _, _)| value > b + 1e-12) {
                best = Some((value, ug_mask, dad_mask));
            }
        }
    }

    let mut result = SolveResult {
        status: SolveStatus::Infeasible,
        solution: None,
        wall_time_secs: 0.0,
        iterations: evaluated,
        restarts_completed: 1,
        timed_out: false,
        proven_optimal: true,
        infeasibility_reason: None,
        incumbent_trace: Vec::new(),
    };
    match best {
        None => {
            result.infeasibility_reason = Some("no policy satisfies the hard constraints".into());
        }
        Some((_, ug_mask, dad_mask)) => {
            let pol = GeneratedPolicy {
                ug: BitMatrix::from_fn(nu, ng, |u, g| ug_mask >> (u * ng + g) & 1 == 1),
                dad: BitMatrix::from_fn(ng, nd, |g, d| dad_mask >> (g * nd + d) & 1 == 1),
            };
            let value = objective(inst, &pol, pcfg)?.total;
            let sol = Solution::evaluate(inst, pol, pcfg)?;
            result.incumbent_trace.push(IncumbentEvent {
                elapsed_secs: start.elapsed().as_secs_f64(),
                restart: 0,
                objective: value,
            });
            result.status = SolveStatus::Feasible;
            result.solution = Some(sol);
        }
    }
    result.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(result)
}

fn row_mask(m: &BitMatrix, r: usize) -> u32 {
    m.row(r).iter().fold(0u32, |acc, c| acc | 1 << c)
}
