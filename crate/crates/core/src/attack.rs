//! Credential-compromise simulation. The impact of compromising a set of
//! users is the number of datastores at least one of them can reach; it is
//! monotone and submodular, so greedy selection is a (1 - 1/e)
//! approximation of the worst case.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::{BitMatrix, BitSet};
use crate::error::{Error, Result};
use crate::model::{effective_access, AccessInstance, GeneratedPolicy};

pub const DEFAULT_SAMPLES: usize = 10_000;
pub const EXACT_ENUMERATION_LIMIT: u128 = 100_000;
pub const DEFAULT_FILTER_FRACTION: f64 = 0.3;
const CHUNK: usize = 1000;

/// Datastores reachable by at least one user of `users`.
pub fn impact(access: &BitMatrix, users: &[usize]) -> Result<usize> {
    let mut reach = BitSet::new(access.n_cols());
    for &u in users {
        if u >= access.n_rows() {
            return Err(Error::UnknownUser(format!("user index {u}")));
        }
        reach.union_with(access.row(u));
    }
    Ok(reach.count())
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomAttack {
    pub k: usize,
    pub mean: f64,
    /// Standard error of the mean; zero when enumerated.
    pub stderr: f64,
    /// Subsets evaluated.
    pub samples: usize,
    pub exact: bool,
}

/// Expected impact of compromising a uniformly random `k`-subset: exact by
/// enumeration when there are at most 10^5 subsets, Monte Carlo otherwise.
pub fn random_attack(access: &BitMatrix, k: usize, samples: usize, seed: u64) -> Result<RandomAttack> {
    let n = access.n_rows();
    if k > n {
        return Err(Error::InvalidConfig(format!("k = {k} exceeds {n} users")));
    }
    if samples == 0 {
        return Err(Error::InvalidConfig("samples must be positive".into()));
    }
    let count = binomial(n, k);
    if count <= EXACT_ENUMERATION_LIMIT {
        let mut total: u64 = 0;
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            total += impact(access, &idx)? as u64;
            // next combination in lexicographic order
            let mut i = k;
            loop {
                if i == 0 {
                    return Ok(RandomAttack {
                        k,
                        mean: total as f64 / count as f64,
                        stderr: 0.0,
                        samples: count as usize,
                        exact: true,
                    });
                }
                i -= 1;
                if idx[i] < n - k + i {
                    break;
                }
            }
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }

    let chunks = samples.div_ceil(CHUNK);
    let (sum, sum_sq) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add((c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
            let len = CHUNK.min(samples - c * CHUNK);
            let mut s = 0u64;
            let mut sq = 0u64;
            for _ in 0..len {
                let subset = rand::seq::index::sample(&mut rng, n, k).into_vec();
                let f = impact(access, &subset).expect("indices in range") as u64;
                s += f;
                sq += f * f;
            }
            (s, sq)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let m = samples as f64;
    let mean = sum as f64 / m;
    let var = if samples > 1 { (sum_sq as f64 - m * mean * mean).max(0.0) / (m - 1.0) } else { 0.0 };
    Ok(RandomAttack { k, mean, stderr: (var / m).sqrt(), samples, exact: false })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackResult {
    /// Users in selection order.
    pub chosen: Vec<usize>,
    pub impact: usize,
}

/// Greedy maximum coverage with lazy marginal-gain evaluation; ties go to
/// the lowest user index.
pub fn greedy_attack(access: &BitMatrix, k: usize) -> Result<AttackResult> {
    let n = access.n_rows();
    if k > n {
        return Err(Error::InvalidConfig(format!("k = {k} exceeds {n} users")));
    }
    let mut covered = BitSet::new(access.n_cols());
    let mut heap: BinaryHeap<(usize, Reverse<usize>, usize)> =
        (0..n).map(|u| (access.row(u).count(), Reverse(u), 0)).collect();
    let mut chosen = Vec::with_capacity(k);
    while chosen.len() < k {
        let (_, Reverse(u), round) = heap.pop().expect("k <= n");
        if round == chosen.len() {
            chosen.push(u);
            covered.union_with(access.row(u));
        } else {
            let fresh = access.row(u).difference(&covered).count();
            heap.push((fresh, Reverse(u), chosen.len()));
        }
    }
    Ok(AttackResult { impact: covered.count(), chosen })
}

/// Drops the `ceil(fraction * |U|)` users with the most permissions (ties to
/// the lowest index). Returns the survivors' matrix, removed users and
/// surviving users (original indices).
pub fn filter_high_degree(access: &BitMatrix, fraction: f64) -> Result<(BitMatrix, Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!("filter fraction must lie in [0, 1), got {fraction}")));
    }
    let n = access.n_rows();
    let remove = (fraction * n as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&u| (Reverse(access.row(u).count()), u));
    let mut removed: Vec<usize> = order[..remove].to_vec();
    removed.sort_unstable();
    let survivors: Vec<usize> = (0..n).filter(|u| removed.binary_search(u).is_err()).collect();
    Ok((select_rows(access, &survivors), removed, survivors))
}

fn select_rows(m: &BitMatrix, rows: &[usize]) -> BitMatrix {
    BitMatrix::from_fn(rows.len(), m.n_cols(), |r, c| m.get(rows[r], c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    /// Uniformly random compromise on unfiltered matrices.
    Random,
    /// Greedy worst case after removing high-degree users.
    Worst,
}

impl fmt::Display for AttackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackMode::Random => "random",
            AttackMode::Worst => "worst",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub samples: usize,
    pub seed: u64,
    pub filter_fraction: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { samples: DEFAULT_SAMPLES, seed: 0, filter_fraction: DEFAULT_FILTER_FRACTION }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardeningRow {
    pub k: usize,
    pub mode: AttackMode,
    pub baseline_impact: f64,
    pub hardened_impact: f64,
    /// `None` when the baseline impact is zero.
    pub ratio: Option<f64>,
}

/// Compares attack impact on the current permissions (UDhat) with the
/// effective permissions of the hardened policy.
pub fn evaluate_hardening(
    inst: &AccessInstance,
    pol: &GeneratedPolicy,
    k_list: &[usize],
    modes: &[AttackMode],
    cfg: &AttackConfig,
) -> Result<Vec<HardeningRow>> {
    let hardened = effective_access(inst, pol)?;
    compare_matrices(inst.ud_hat(), &hardened, k_list, modes, cfg)
}

/// [`evaluate_hardening`] on explicit baseline and hardened matrices.
pub fn compare_matrices(
    baseline: &BitMatrix,
    hardened: &BitMatrix,
    k_list: &[usize],
    modes: &[AttackMode],
    cfg: &AttackConfig,
) -> Result<Vec<HardeningRow>> {
    if !baseline.same_shape(hardened) {
        return Err(Error::DimensionMismatch("baseline and hardened matrices differ in shape".into()));
    }
    let mut rows = Vec::new();
    for &mode in modes {
        let (base, hard) = match mode {
            AttackMode::Random => (baseline.clone(), hardened.clone()),
            AttackMode::Worst => {
                let (base, _, survivors) = filter_high_degree(baseline, cfg.filter_fraction)?;
                (base, select_rows(hardened, &survivors))
            }
        };
        for &k in k_list {
            if k == 0 || k > base.n_rows() {
                return Err(Error::InvalidConfig(format!(
                    "k = {k} must lie in [1, {}] for {mode} mode",
                    base.n_rows()
                )));
            }
            let (b, h) = match mode {
                AttackMode::Random => (
                    random_attack(&base, k, cfg.samples, cfg.seed)?.mean,
                    random_attack(&hard, k, cfg.samples, cfg.seed)?.mean,
                ),
                AttackMode::Worst => (
                    greedy_attack(&base, k)?.impact as f64,
                    greedy_attack(&hard, k)?.impact as f64,
                ),
            };
            rows.push(HardeningRow {
                k,
                mode,
                baseline_impact: b,
                hardened_impact: h,
                ratio: (b > 0.0).then(|| h / b),
            });
        }
    }
    Ok(rows)
}

/// `k,mode,baseline_impact,hardened_impact,ratio`; an undefined ratio is
/// written as `NA`.
pub fn hardening_to_csv(rows: &[HardeningRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "mode", "baseline_impact", "hardened_impact", "ratio"])?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.mode.to_string(),
            r.baseline_impact.to_string(),
            r.hardened_impact.to_string(),
            r.ratio.map_or_else(|| "NA".to_string(), |x| x.to_string()),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf8"))
}
