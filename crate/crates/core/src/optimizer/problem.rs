//! Per-solve precomputation.
//!
//! The data-type rule decomposes per (user, datastore): granting `d` to `u`
//! is allowed iff every type of `d` is already in `u`'s historical type
//! profile. Every UDhat cell therefore falls in exactly one of three classes:
//! must (historically accessed), allowed (dormant but type-compatible) and
//! forbidden (would introduce a new type).

use crate::bits::BitSet;
use crate::model::AccessInstance;

use super::{PenaltyConfig, SolveConfig};

pub(crate) struct Problem<'a> {
    pub inst: &'a AccessInstance,
    pub n_users: usize,
    pub n_stores: usize,
    pub n_groups: usize,
    /// Per datastore: users that must keep access.
    pub must: Vec<BitSet>,
    /// Per datastore: users that may receive it as a dormant grant.
    pub allowed: Vec<BitSet>,
    /// Per datastore: users that must never receive it.
    pub forbidden: Vec<BitSet>,
    /// Per user, over datastores.
    pub must_row: Vec<BitSet>,
    pub allowed_row: Vec<BitSet>,
    pub forbidden_row: Vec<BitSet>,
    /// Per user: datastores in its UDhat row. Only these decode differently
    /// when the user's memberships change.
    pub relevant: Vec<Vec<usize>>,
    pub must_count: Vec<usize>,
    /// Users with at least one historical access.
    pub active: Vec<usize>,
    pub is_active: BitSet,
    /// Per user: excluded partners.
    pub excluded: Vec<BitSet>,
    pub penalty: PenaltyConfig,
}

impl<'a> Problem<'a> {
    pub fn new(inst: &'a AccessInstance, scfg: &SolveConfig, penalty: PenaltyConfig) -> Self {
        let n_users = inst.n_users();
        let n_stores = inst.n_datastores();
        let profiles: Vec<BitSet> = (0..n_users).map(|u| inst.type_profile(u)).collect();

        let mut must = vec![BitSet::new(n_users); n_stores];
        let mut allowed = vec![BitSet::new(n_users); n_stores];
        let mut forbidden = vec![BitSet::new(n_users); n_stores];
        let mut must_row = vec![BitSet::new(n_stores); n_users];
        let mut allowed_row = vec![BitSet::new(n_stores); n_users];
        let mut forbidden_row = vec![BitSet::new(n_stores); n_users];
        let mut relevant = vec![Vec::new(); n_users];

        for (u, d) in inst.ud_hat().ones() {
            relevant[u].push(d);
            if inst.ud().get(u, d) {
                must[d].insert(u);
                must_row[u].insert(d);
            } else if inst.dt().row(d).is_subset(&profiles[u]) {
                allowed[d].insert(u);
                allowed_row[u].insert(d);
            } else {
                forbidden[d].insert(u);
                forbidden_row[u].insert(d);
            }
        }

        let must_count: Vec<usize> = must_row.iter().map(BitSet::count).collect();
        let active: Vec<usize> = (0..n_users).filter(|&u| must_count[u] > 0).collect();
        let is_active = BitSet::from_indices(n_users, active.iter().copied());

        let mut excluded = vec![BitSet::new(n_users); n_users];
        for &(a, b) in &scfg.pair_exclusions {
            excluded[a].insert(b);
            excluded[b].insert(a);
        }

        Self {
            inst,
            n_users,
            n_stores,
            n_groups: scfg.num_groups,
            must,
            allowed,
            forbidden,
            must_row,
            allowed_row,
            forbidden_row,
            relevant,
            must_count,
            active,
            is_active,
            excluded,
            penalty,
        }
    }

    #[inline]
    pub fn cost(&self, u: usize, effective: usize) -> f64 {
        self.penalty.user_cost(effective, self.must_count[u])
    }

    /// Cost of one more effective permission for `u`.
    #[inline]
    pub fn marginal(&self, u: usize, effective: usize) -> f64 {
        self.cost(u, effective + 1) - self.cost(u, effective)
    }

    /// Sum of per-user costs when everybody keeps exactly its historical
    /// accesses; no feasible policy does better.
    pub fn cost_lower_bound(&self) -> f64 {
        (0..self.n_users).map(|u| self.cost(u, self.must_count[u])).sum()
    }

    /// Two active users that can never share a group that covers one of
    /// their historical accesses: they are excluded, or each one is
    /// type-forbidden on every datastore the other must keep.
    pub fn strongly_conflict(&self, a: usize, b: usize) -> bool {
        self.excluded[a].contains(b)
            || (self.must_row[a].is_subset(&self.forbidden_row[b])
                && self.must_row[b].is_subset(&self.forbidden_row[a]))
    }

    /// Greedy clique in the strong-conflict graph. Each member of the clique
    /// needs its own covering group, so a clique larger than the number of
    /// generated groups proves infeasibility.
    pub fn conflict_clique(&self) -> Vec<usize> {
        let n = self.active.len();
        if n == 0 {
            return Vec::new();
        }
        let adj: Vec<BitSet> = self
            .active
            .iter()
            .map(|&a| {
                BitSet::from_indices(
                    n,
                    (0..n).filter(|&j| self.active[j] != a && self.strongly_conflict(a, self.active[j])),
                )
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (std::cmp::Reverse(adj[i].count()), i));

        let mut best: Vec<usize> = Vec::new();
        for &start in &order {
            if adj[start].count() + 1 <= best.len() {
                continue;
            }
            let mut clique = vec![start];
            let mut cand = adj[start].clone();
            for &i in &order {
                if cand.contains(i) {
                    clique.push(i);
                    cand.intersect_with(&adj[i]);
                }
            }
            if clique.len() > best.len() {
                best = clique;
            }
        }
        let mut users: Vec<usize> = best.into_iter().map(|i| self.active[i]).collect();
        users.sort_unstable();
        users
    }
}
