//! Behavioural homogeneity of generated groups: dissimilar users found in a
//! shared group are separated by pair-exclusion cuts, re-solving until no
//! group mixes users farther apart than the diversity threshold.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::bits::BitMatrix;
use crate::embedding::{cosine_distance, EmbeddingTable};
use crate::error::{Error, Result};
use crate::model::{AccessInstance, GeneratedPolicy};
use crate::optimizer::{solve, PenaltyConfig, SolveConfig, SolveResult, SolveStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityModel {
    /// Unit vectors indexed like the instance users.
    pub vectors: Vec<Vec<f64>>,
    /// Diversity threshold.
    pub alpha: f64,
    /// Cluster label per user.
    pub cluster_of: Vec<usize>,
}

impl SimilarityModel {
    pub fn new(vectors: Vec<Vec<f64>>, alpha: f64, cluster_of: Vec<usize>) -> Result<Self> {
        if !(alpha >= 0.0) {
            return Err(Error::InvalidConfig(format!("alpha must be >= 0, got {alpha}")));
        }
        if vectors.len() != cluster_of.len() {
            return Err(Error::DimensionMismatch("one cluster label per vector".into()));
        }
        for v in &vectors {
            let n = crate::embedding::norm(v);
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidConfig(format!("embedding is not unit norm (|v| = {n})")));
            }
        }
        Ok(Self { vectors, alpha, cluster_of })
    }

    /// Looks up (and normalises) every instance user's vector. Users without
    /// a cluster label get their own label.
    pub fn from_table(
        inst: &AccessInstance,
        table: &EmbeddingTable,
        alpha: f64,
        clusters: &BTreeMap<String, usize>,
    ) -> Result<Self> {
        let vectors = inst.users().iter().map(|u| table.unit(u)).collect::<Result<Vec<_>>>()?;
        let mut next = clusters.values().max().map_or(0, |m| m + 1);
        let cluster_of = inst
            .users()
            .iter()
            .map(|u| {
                clusters.get(u).copied().unwrap_or_else(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        Self::new(vectors, alpha, cluster_of)
    }

    pub fn n_users(&self) -> usize {
        self.vectors.len()
    }

    /// Cosine distance between two users.
    pub fn alpha_user(&self, a: usize, b: usize) -> Result<f64> {
        if a >= self.n_users() || b >= self.n_users() {
            return Err(Error::UnknownUser(format!("user index {}", a.max(b))));
        }
        Ok(cosine_distance(&self.vectors[a], &self.vectors[b]).clamp(0.0, 2.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolatedPair {
    pub user_a: usize,
    pub user_b: usize,
    /// Lowest shared group, for diagnostics.
    pub group: usize,
    pub distance: f64,
}

/// Pairs sharing a group whose distance exceeds alpha, most dissimilar
/// first. Each pair is reported once.
pub fn separate(pol: &GeneratedPolicy, sm: &SimilarityModel) -> Result<Vec<ViolatedPair>> {
    if pol.ug.n_rows() != sm.n_users() {
        return Err(Error::DimensionMismatch(format!(
            "policy has {} users, similarity model {}",
            pol.ug.n_rows(),
            sm.n_users()
        )));
    }
    let mut out = Vec::new();
    for a in 0..sm.n_users() {
        for b in a + 1..sm.n_users() {
            let shared = pol.ug.row(a).intersection(pol.ug.row(b));
            let Some(group) = shared.first() else { continue };
            let distance = sm.alpha_user(a, b)?;
            if distance > sm.alpha {
                out.push(ViolatedPair { user_a: a, user_b: b, group, distance });
            }
        }
    }
    out.sort_by(|x, y| {
        y.distance
            .total_cmp(&x.distance)
            .then(x.user_a.cmp(&y.user_a))
            .then(x.user_b.cmp(&y.user_b))
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntropy {
    /// `(group, entropy)` for every non-empty group.
    pub per_group: Vec<(usize, f64)>,
    /// Mean weighted by group size.
    pub weighted_mean: f64,
}

/// Shannon entropy (natural log) of cluster labels inside each group.
pub fn group_entropy(pol: &GeneratedPolicy, sm: &SimilarityModel) -> GroupEntropy {
    let mut per_group = Vec::new();
    let mut weighted = 0.0;
    let mut total = 0usize;
    for g in 0..pol.num_groups() {
        let members = pol.members(g);
        let n = members.count();
        if n == 0 {
            continue;
        }
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for u in members.iter() {
            *counts.entry(sm.cluster_of[u]).or_default() += 1;
        }
        let h: f64 = counts
            .values()
            .map(|&c| {
                let p = c as f64 / n as f64;
                -p * p.ln()
            })
            .sum();
        per_group.push((g, h));
        weighted += h * n as f64;
        total += n;
    }
    GroupEntropy {
        per_group,
        weighted_mean: if total == 0 { 0.0 } else { weighted / total as f64 },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    /// Most-violated pairs cut per iteration.
    pub batch_size: usize,
    pub max_iterations: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self { batch_size: 50, max_iterations: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub iteration: usize,
    pub cuts_added: usize,
    /// Share of the first iteration's violated pairs not violated now.
    pub satisfied_fraction: f64,
    pub objective: Option<f64>,
    pub feasible: bool,
    pub entropy: Option<f64>,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    /// Last feasible solve.
    pub result: SolveResult,
    pub trace: Vec<GenerationRecord>,
    pub cuts: Vec<(usize, usize)>,
    /// Violations left in the returned solution.
    pub remaining_violations: Vec<ViolatedPair>,
}

/// Solve, separate, cut the top violated pairs, repeat. Stops when nothing
/// is violated, the cut problem becomes infeasible or the iteration budget
/// runs out; returns the last feasible solution.
pub fn generate(
    inst: &AccessInstance,
    scfg: &SolveConfig,
    pcfg: &PenaltyConfig,
    sm: &SimilarityModel,
    gcfg: &GenerationConfig,
) -> Result<GenerationOutcome> {
    if gcfg.batch_size == 0 || gcfg.max_iterations == 0 {
        return Err(Error::InvalidConfig("batch size and iteration budget must be positive".into()));
    }
    if sm.n_users() != inst.n_users() {
        return Err(Error::DimensionMismatch("similarity model does not cover the instance users".into()));
    }
    let mut cfg = scfg.clone();
    let first = solve(inst, &cfg, pcfg)?;
    let Some(policy) = first.policy().cloned() else {
        return Err(match first.status {
            SolveStatus::Infeasible => Error::Infeasible(
                first.infeasibility_reason.clone().unwrap_or_else(|| "initial solve is infeasible".into()),
            ),
            _ => Error::NoSolution("initial solve found no feasible policy".into()),
        });
    };
    let mut violations = separate(&policy, sm)?;
    let initial: BTreeSet<(usize, usize)> = violations.iter().map(|v| (v.user_a, v.user_b)).collect();
    let fraction = |now: &[ViolatedPair]| {
        if initial.is_empty() {
            return 1.0;
        }
        let still = now.iter().filter(|v| initial.contains(&(v.user_a, v.user_b))).count();
        (initial.len() - still) as f64 / initial.len() as f64
    };

    let mut trace = vec![GenerationRecord {
        iteration: 1,
        cuts_added: 0,
        satisfied_fraction: fraction(&violations),
        objective: first.objective(),
        feasible: true,
        entropy: Some(group_entropy(&policy, sm).weighted_mean),
        violations: violations.len(),
    }];
    let mut best = first;
    let mut cut_set: BTreeSet<(usize, usize)> = cfg.pair_exclusions.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    let mut cuts = Vec::new();

    for iteration in 2..=gcfg.max_iterations {
        if violations.is_empty() {
            break;
        }
        let batch: Vec<(usize, usize)> = violations
            .iter()
            .map(|v| (v.user_a, v.user_b))
            .filter(|p| !cut_set.contains(p))
            .take(gcfg.batch_size)
            .collect();
        if batch.is_empty() {
            break;
        }
        let mut warm = best.policy().expect("incumbent is feasible").ug.clone();
        for &(a, b) in &batch {
            cut_set.insert((a, b));
            cuts.push((a, b));
            cfg.pair_exclusions.push((a, b));
            clear_violation(&mut warm, sm, a, b);
        }
        cfg.warm_start = Some(warm);
        let res = solve(inst, &cfg, pcfg)?;
        match res.policy().cloned() {
            Some(pol) => {
                violations = separate(&pol, sm)?;
                trace.push(GenerationRecord {
                    iteration,
                    cuts_added: batch.len(),
                    satisfied_fraction: fraction(&violations),
                    objective: res.objective(),
                    feasible: true,
                    entropy: Some(group_entropy(&pol, sm).weighted_mean),
                    violations: violations.len(),
                });
                best = res;
            }
            None => {
                log::info!("cut problem has no feasible policy at iteration {iteration}");
                trace.push(GenerationRecord {
                    iteration,
                    cuts_added: batch.len(),
                    satisfied_fraction: trace.last().map_or(0.0, |r| r.satisfied_fraction),
                    objective: None,
                    feasible: false,
                    entropy: None,
                    violations: 0,
                });
                break;
            }
        }
    }
    let remaining_violations = separate(best.policy().expect("feasible"), sm)?;
    Ok(GenerationOutcome { result: best, trace, cuts, remaining_violations })
}

/// Drops one of `a`, `b` from every group they share: the one farther on
/// average from the rest of that group.
fn clear_violation(ug: &mut BitMatrix, sm: &SimilarityModel, a: usize, b: usize) {
    for g in 0..ug.n_cols() {
        if !(ug.get(a, g) && ug.get(b, g)) {
            continue;
        }
        let others: Vec<usize> = (0..ug.n_rows()).filter(|&u| u != a && u != b && ug.get(u, g)).collect();
        let mean = |x: usize| {
            if others.is_empty() {
                0.0
            } else {
                others.iter().map(|&o| cosine_distance(&sm.vectors[x], &sm.vectors[o])).sum::<f64>() / others.len() as f64
            }
        };
        let drop = if mean(a) > mean(b) { a } else { b };
        ug.set(drop, g, false);
    }
}

/// `iteration,cuts_added,satisfied_fraction,objective,entropy`
pub fn trace_to_csv(trace: &[GenerationRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "cuts_added", "satisfied_fraction", "objective", "entropy"])?;
    for r in trace {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            r.iteration.to_string(),
            r.cuts_added.to_string(),
            r.satisfied_fraction.to_string(),
            opt(r.objective),
            opt(r.entropy),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf8"))
}
