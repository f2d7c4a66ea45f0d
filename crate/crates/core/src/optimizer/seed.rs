//! Initial memberships: one group per distinct access row, merged
//! agglomeratively down to the group budget.

use crate::bits::BitSet;

use super::problem::Problem;

const CONFLICT_COST: f64 = 1e6;
const EXCLUSION_COST: f64 = 1e9;

struct Cluster {
    users: Vec<usize>,
    must: BitSet,
    cost: f64,
}

fn cluster_cost(p: &Problem, users: &[usize], must: &BitSet) -> f64 {
    let mut cost = 0.0;
    for (i, &u) in users.iter().enumerate() {
        cost += p.allowed_row[u].intersection_count(must) as f64;
        if p.forbidden_row[u].intersects(must) {
            cost += CONFLICT_COST;
        }
        if users[i + 1..].iter().any(|&v| p.excluded[u].contains(v)) {
            cost += EXCLUSION_COST;
        }
    }
    cost
}

fn merged(p: &Problem, a: &Cluster, b: &Cluster) -> Cluster {
    let mut users = a.users.clone();
    users.extend_from_slice(&b.users);
    let must = a.must.union(&b.must);
    let cost = cluster_cost(p, &users, &must);
    Cluster { users, must, cost }
}

/// Merges the labelled clusters of active users down to at most
/// `n_groups`, returning per-user group lists.
fn agglomerate(p: &Problem, labels: impl Fn(usize) -> usize) -> Vec<Vec<usize>> {
    let mut by_label: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for &u in &p.active {
        by_label.entry(labels(u)).or_default().push(u);
    }
    let mut clusters: Vec<Option<Cluster>> = by_label
        .into_values()
        .map(|users| {
            let mut must = BitSet::new(p.n_stores);
            for &u in &users {
                must.union_with(&p.must_row[u]);
            }
            let cost = cluster_cost(p, &users, &must);
            Some(Cluster { users, must, cost })
        })
        .collect();

    let mut live = clusters.len();
    if live > p.n_groups {
        let n = clusters.len();
        let delta = |cl: &[Option<Cluster>], i: usize, j: usize| {
            let (a, b) = (cl[i].as_ref().unwrap(), cl[j].as_ref().unwrap());
            merged(p, a, b).cost - a.cost - b.cost
        };
        let mut table = vec![vec![f64::INFINITY; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                table[i][j] = delta(&clusters, i, j);
            }
        }
        while live > p.n_groups {
            let mut best = (f64::INFINITY, 0, 0);
            for i in 0..n {
                if clusters[i].is_none() {
                    continue;
                }
                for j in i + 1..n {
                    if clusters[j].is_some() && table[i][j] < best.0 {
                        best = (table[i][j], i, j);
                    }
                }
            }
            let (_, i, j) = best;
            let b = clusters[j].take().unwrap();
            let m = merged(p, clusters[i].as_ref().unwrap(), &b);
            clusters[i] = Some(m);
            live -= 1;
            for k in 0..n {
                if k == i || clusters[k].is_none() {
                    continue;
                }
                let (lo, hi) = if k < i { (k, i) } else { (i, k) };
                table[lo][hi] = delta(&clusters, lo, hi);
            }
        }
    }

    let mut groups = vec![Vec::new(); p.n_users];
    for (g, c) in clusters.into_iter().flatten().enumerate() {
        for u in c.users {
            groups[u].push(g);
        }
    }
    groups
}

/// Users with identical historical access rows share a group.
pub(crate) fn access_seed(p: &Problem) -> Vec<Vec<usize>> {
    let mut rows: Vec<&BitSet> = p.active.iter().map(|&u| &p.must_row[u]).collect();
    rows.sort_by(|a, b| a.words().cmp(b.words()));
    rows.dedup();
    let label = |u: usize| {
        rows.binary_search_by(|r| r.words().cmp(p.must_row[u].words()))
            .expect("row present")
    };
    agglomerate(p, label)
}

/// Users sharing a cluster label share a group.
pub(crate) fn cluster_seed(p: &Problem, labels: &[usize]) -> Vec<Vec<usize>> {
    agglomerate(p, |u| labels[u])
}
