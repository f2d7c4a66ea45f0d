use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::model::{AccessInstance, GeneratedPolicy};

use super::problem::Problem;
use super::seed::{access_seed, cluster_seed};
use super::state::State;
use super::{check_feasible, IncumbentEvent, PenaltyConfig, Solution, SolveConfig, SolveResult, SolveStatus};

const TOL: f64 = 1e-9;
/// Membership spaces this small are always enumerated.
const ALWAYS_ENUMERATE_BITS: usize = 12;
/// Upper bound for enumeration when enough restarts were requested.
const MAX_ENUMERATE_BITS: usize = 20;
/// Merge moves are only scanned for budgets up to this many groups.
const MERGE_GROUP_LIMIT: usize = 16;

#[derive(Clone, Copy, PartialEq, PartialOrd)]
struct Key {
    uncovered: usize,
    cost: f64,
}

impl Key {
    fn of(s: &State) -> Self {
        Self { uncovered: s.uncovered, cost: s.cost }
    }

    fn better_than(&self, other: &Key) -> bool {
        self.uncovered < other.uncovered || (self.uncovered == other.uncovered && self.cost < other.cost - TOL)
    }
}

struct RunOutcome {
    restart: usize,
    key: Key,
    assignment: Vec<Vec<usize>>,
    moves: usize,
    finished_at: f64,
}

struct Ctx<'p, 'a> {
    p: &'p Problem<'a>,
    start: Instant,
    deadline: Instant,
    stop: AtomicBool,
    lower: f64,
}

impl Ctx<'_, '_> {
    fn expired(&self) -> bool {
        self.stop.load(Ordering::Relaxed) || Instant::now() >= self.deadline
    }
}

/// Anytime solver: independent seeded local-search restarts over group
/// memberships, grants decoded per datastore.
pub fn solve(inst: &AccessInstance, scfg: &SolveConfig, pcfg: &PenaltyConfig) -> Result<SolveResult> {
    pcfg.validate()?;
    scfg.validate(inst)?;
    let start = Instant::now();
    let p = Problem::new(inst, scfg, *pcfg);
    let udhat_total = inst.ud_hat().count_ones() as f64;

    let mut result = SolveResult {
        status: SolveStatus::NoSolutionFound,
        solution: None,
        wall_time_secs: 0.0,
        iterations: 0,
        restarts_completed: 0,
        timed_out: false,
        proven_optimal: false,
        infeasibility_reason: None,
        incumbent_trace: Vec::new(),
    };

    if p.active.is_empty() {
        let pol = GeneratedPolicy::empty(p.n_users, p.n_groups, p.n_stores);
        let sol = Solution::evaluate(inst, pol, pcfg)?;
        result.incumbent_trace.push(IncumbentEvent { elapsed_secs: 0.0, restart: 0, objective: sol.objective });
        result.status = SolveStatus::Feasible;
        result.solution = Some(sol);
        result.proven_optimal = true;
        result.wall_time_secs = start.elapsed().as_secs_f64();
        return Ok(result);
    }

    let clique = p.conflict_clique();
    if clique.len() > p.n_groups {
        let names: Vec<&str> = clique.iter().map(|&u| inst.users()[u].as_str()).collect();
        result.status = SolveStatus::Infeasible;
        result.proven_optimal = true;
        result.infeasibility_reason = Some(format!(
            "{} users pairwise cannot share a covering group but only {} groups are available: {}",
            clique.len(),
            p.n_groups,
            names.join(", ")
        ));
        result.wall_time_secs = start.elapsed().as_secs_f64();
        return Ok(result);
    }

    let ctx = Ctx {
        p: &p,
        start,
        deadline: start + scfg.time_limit,
        stop: AtomicBool::new(false),
        lower: p.cost_lower_bound(),
    };

    let bits = p.active.len() * p.n_groups;
    let enumerate = bits <= ALWAYS_ENUMERATE_BITS
        || (bits <= MAX_ENUMERATE_BITS && scfg.restarts >= 1usize << bits);

    let best = if enumerate {
        exhaustive(&ctx, &mut result)
    } else {
        restarts(&ctx, scfg, &mut result)
    };

    result.timed_out = Instant::now() >= ctx.deadline && !result.proven_optimal;
    if let Some((key, assignment)) = best {
        if key.uncovered == 0 {
            let mut state = State::from_groups(&p, &assignment);
            state.polish(&p);
            let pol = state.to_policy(&p);
            if check_feasible(inst, &pol, &scfg.pair_exclusions)?.is_feasible() {
                let sol = Solution::evaluate(inst, pol, pcfg)?;
                debug_assert!((sol.objective - (udhat_total - state.cost)).abs() < 1e-6);
                if sol.objective >= udhat_total - ctx.lower - TOL {
                    result.proven_optimal = true;
                }
                match result.incumbent_trace.last_mut() {
                    Some(e) if (e.objective - sol.objective).abs() <= 1e-6 => e.objective = sol.objective,
                    last => {
                        let restart = last.map_or(0, |e| e.restart);
                        result.incumbent_trace.push(IncumbentEvent {
                            elapsed_secs: start.elapsed().as_secs_f64(),
                            restart,
                            objective: sol.objective,
                        });
                    }
                }
                result.status = SolveStatus::Feasible;
                result.solution = Some(sol);
            } else {
                log::error!("search produced a policy that fails verification");
                result.proven_optimal = false;
            }
        }
    }
    if result.solution.is_none() && result.status != SolveStatus::Infeasible {
        result.proven_optimal = false;
    }
    result.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Evaluates every membership matrix of the active users. Proves
/// infeasibility when nothing covers the historical accesses and
/// optimality when every grant decode was exact.
fn exhaustive(ctx: &Ctx, result: &mut SolveResult) -> Option<(Key, Vec<Vec<usize>>)> {
    let p = ctx.p;
    let udhat_total = p.inst.ud_hat().count_ones() as f64;
    let g = p.n_groups;
    let bits = p.active.len() * g;
    let mut best: Option<(Key, Vec<Vec<usize>>)> = None;
    let mut all_exact = true;
    let mut complete = true;
    for mask in 0u64..(1u64 << bits) {
        if ctx.expired() {
            complete = false;
            break;
        }
        let mut groups = vec![Vec::new(); p.n_users];
        for (i, &u) in p.active.iter().enumerate() {
            for k in 0..g {
                if mask >> (i * g + k) & 1 == 1 {
                    groups[u].push(k);
                }
            }
        }
        let mut state = State::from_groups(p, &groups);
        if state.uncovered > 0 {
            result.restarts_completed += 1;
            continue;
        }
        all_exact &= state.polish(p);
        let key = Key::of(&state);
        if best.as_ref().is_none_or(|(b, _)| key.better_than(b)) {
            result.incumbent_trace.push(IncumbentEvent {
                elapsed_secs: ctx.start.elapsed().as_secs_f64(),
                restart: mask as usize,
                objective: udhat_total - key.cost,
            });
            best = Some((key, state.assignment()));
        }
        result.restarts_completed += 1;
    }
    if complete {
        match &best {
            None => {
                result.status = SolveStatus::Infeasible;
                result.proven_optimal = true;
                result.infeasibility_reason =
                    Some(format!("no membership over {} groups preserves every historical access", g));
            }
            Some(_) => result.proven_optimal = all_exact,
        }
    }
    best
}

fn restarts(ctx: &Ctx, scfg: &SolveConfig, result: &mut SolveResult) -> Option<(Key, Vec<Vec<usize>>)> {
    let p = ctx.p;
    let udhat_total = p.inst.ud_hat().count_ones() as f64;
    let base = access_seed(p);
    let clusters = scfg.seed_clusters.as_ref().map(|l| cluster_seed(p, l));
    let warm = scfg.warm_start.as_ref().map(|ws| State::from_membership(p, ws).assignment());

    let run = |r: usize| -> Option<RunOutcome> {
        if ctx.expired() {
            return None;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(scfg.seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        let assignment = match r {
            0 => warm.clone().unwrap_or_else(|| base.clone()),
            1 if clusters.is_some() => clusters.clone().unwrap(),
            1 if warm.is_some() => base.clone(),
            _ => perturb(p, &base, r, &mut rng),
        };
        let mut state = State::from_groups(p, &assignment);
        let moves = improve(ctx, &mut state);
        let key = Key::of(&state);
        if key.uncovered == 0 && key.cost <= ctx.lower + TOL {
            ctx.stop.store(true, Ordering::Relaxed);
        }
        Some(RunOutcome {
            restart: r,
            key,
            assignment: state.assignment(),
            moves,
            finished_at: ctx.start.elapsed().as_secs_f64(),
        })
    };

    let outcomes: Vec<RunOutcome> = if scfg.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(scfg.threads)
            .build()
            .expect("thread pool");
        pool.install(|| (0..scfg.restarts).into_par_iter().filter_map(run).collect())
    } else {
        let mut out = Vec::new();
        for r in 0..scfg.restarts {
            match run(r) {
                Some(o) => out.push(o),
                None => break,
            }
        }
        out
    };

    let mut best: Option<(Key, usize)> = None;
    let mut order: Vec<usize> = (0..outcomes.len()).collect();
    order.sort_by(|&a, &b| outcomes[a].finished_at.total_cmp(&outcomes[b].finished_at).then(outcomes[a].restart.cmp(&outcomes[b].restart)));
    let mut trace_best: Option<Key> = None;
    for &i in &order {
        let o = &outcomes[i];
        if o.key.uncovered == 0 && trace_best.as_ref().is_none_or(|b| o.key.better_than(b)) {
            trace_best = Some(o.key);
            result.incumbent_trace.push(IncumbentEvent {
                elapsed_secs: o.finished_at,
                restart: o.restart,
                objective: udhat_total - o.key.cost,
            });
        }
    }
    for (i, o) in outcomes.iter().enumerate() {
        result.iterations += o.moves;
        let better = match &best {
            None => true,
            Some((b, bi)) => {
                o.key.better_than(b) || (!b.better_than(&o.key) && o.restart < outcomes[*bi].restart)
            }
        };
        if better {
            best = Some((o.key, i));
        }
    }
    result.restarts_completed = outcomes.len();
    best.map(|(k, i)| (k, outcomes.into_iter().nth(i).unwrap().assignment))
}

fn perturb(p: &Problem, base: &[Vec<usize>], r: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let g = p.n_groups;
    let mut out = base.to_vec();
    match r % 4 {
        0 | 1 => {
            let frac = if r % 4 == 0 { 0.15 } else { 0.30 };
            for &u in &p.active {
                if rng.random_bool(frac) {
                    out[u] = vec![rng.random_range(0..g)];
                }
            }
        }
        2 => {
            for &u in &p.active {
                out[u] = vec![rng.random_range(0..g)];
            }
        }
        _ => {
            let q = (1.5 / g as f64).min(0.5);
            for &u in &p.active {
                let mut gs: Vec<usize> = (0..g).filter(|_| rng.random_bool(q)).collect();
                if gs.is_empty() {
                    gs.push(rng.random_range(0..g));
                }
                out[u] = gs;
            }
        }
    }
    out
}

/// Local search followed by grant polishing, repeated while polishing helps.
fn improve(ctx: &Ctx, state: &mut State) -> usize {
    let p = ctx.p;
    let mut moves = 0;
    loop {
        moves += local_search(ctx, state);
        let before = Key::of(state);
        state.polish(p);
        if !Key::of(state).better_than(&before) || ctx.expired() {
            return moves;
        }
    }
}

/// Per-user best-improvement descent over toggle and reassign moves, plus
/// group merges for small budgets. Returns accepted moves.
fn local_search(ctx: &Ctx, state: &mut State) -> usize {
    let p = ctx.p;
    let mut accepted = 0;
    let mut changes: Vec<(usize, usize, bool)> = Vec::new();
    loop {
        let mut improved = false;
        for &u in &p.active {
            if ctx.expired() {
                return accepted;
            }
            let current = Key::of(state);
            let empty = state.first_empty_group();
            let mut best: Option<(Key, Vec<(usize, usize, bool)>)> = None;
            let mut consider = |state: &mut State, changes: &[(usize, usize, bool)]| {
                let undo = state.apply(p, changes);
                let key = Key::of(state);
                state.revert(undo);
                let target = best.as_ref().map_or(current, |(k, _)| *k);
                if key.better_than(&target) {
                    best = Some((key, changes.to_vec()));
                }
            };
            let mine: Vec<usize> = state.groups_of[u].iter().collect();
            for g in 0..p.n_groups {
                let member = state.groups_of[u].contains(g);
                let is_empty = state.members[g].is_empty();
                if !member && is_empty && Some(g) != empty {
                    continue;
                }
                if !member && !state.can_join(p, u, g) {
                    continue;
                }
                changes.clear();
                changes.push((u, g, !member));
                consider(state, &changes);
                if !member && !mine.is_empty() {
                    changes.clear();
                    changes.extend(mine.iter().map(|&h| (u, h, false)));
                    changes.push((u, g, true));
                    consider(state, &changes);
                }
            }
            if let Some((_, ch)) = best {
                let _ = state.apply(p, &ch);
                state.recompute_cost(p);
                accepted += 1;
                improved = true;
            }
        }
        if p.n_groups <= MERGE_GROUP_LIMIT && !ctx.expired() {
            accepted += merge_pass(p, state, &mut improved);
        }
        if !improved || ctx.expired() {
            return accepted;
        }
    }
}

fn merge_pass(p: &Problem, state: &mut State, improved: &mut bool) -> usize {
    let mut accepted = 0;
    let mut changes = Vec::new();
    loop {
        let current = Key::of(state);
        let mut best: Option<(Key, Vec<(usize, usize, bool)>)> = None;
        for from in 0..p.n_groups {
            if state.members[from].is_empty() {
                continue;
            }
            for to in 0..p.n_groups {
                if to == from || state.members[to].is_empty() {
                    continue;
                }
                let movers: Vec<usize> = state.members[from].iter().collect();
                if movers.iter().any(|&u| !state.members[to].contains(u) && !state.can_join(p, u, to)) {
                    continue;
                }
                changes.clear();
                for &u in &movers {
                    changes.push((u, from, false));
                    changes.push((u, to, true));
                }
                let undo = state.apply(p, &changes);
                let key = Key::of(state);
                state.revert(undo);
                let target = best.as_ref().map_or(current, |(k, _)| *k);
                if key.better_than(&target) {
                    best = Some((key, changes.clone()));
                }
            }
        }
        match best {
            Some((_, ch)) => {
                let _ = state.apply(p, &ch);
                state.recompute_cost(p);
                accepted += 1;
                *improved = true;
            }
            None => return accepted,
        }
    }
}
