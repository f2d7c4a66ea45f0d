//! Search state over memberships with grants decoded per datastore.
//!
//! For a fixed membership matrix the datastores decouple except through the
//! per-user penalty: datastore `d` must be granted to a set of groups that
//! covers every user who historically accessed `d`, none of the chosen
//! groups may contain a user for whom `d` is type-forbidden, and every
//! other member holding `d` in UDhat receives it as a dormant grant. The
//! decoder picks a cover with cheapest dormant grants; grants are never
//! searched over directly.

use crate::bits::{BitMatrix, BitSet};
use crate::model::GeneratedPolicy;

use super::problem::Problem;

/// Optional covering groups beyond which the decoder falls back to greedy.
const EXACT_OPTIONAL: usize = 10;
/// Largest product of per-datastore option counts enumerated jointly.
const JOINT_LIMIT: usize = 4096;

#[derive(Debug, Clone)]
pub(crate) struct StoreDecode {
    /// Groups granting the datastore.
    pub granted: BitSet,
    /// Users receiving it as a dormant grant.
    pub extras: BitSet,
    /// Historical users that keep access.
    pub covered: BitSet,
}

impl StoreDecode {
    fn empty(n_users: usize, n_groups: usize) -> Self {
        Self {
            granted: BitSet::new(n_groups),
            extras: BitSet::new(n_users),
            covered: BitSet::new(n_users),
        }
    }
}

/// Covering structure of one datastore under the current memberships.
struct Cover {
    coverable: BitSet,
    chosen: BitSet,
    base_extras: BitSet,
    remaining: BitSet,
    optional: Vec<usize>,
}

pub(crate) struct Undo {
    membership: Vec<(usize, usize, bool)>,
    stores: Vec<(usize, StoreDecode)>,
    x_saved: Vec<(usize, usize)>,
    uncovered_before: usize,
    cost_before: f64,
}

#[derive(Clone)]
pub(crate) struct State {
    pub members: Vec<BitSet>,
    pub groups_of: Vec<BitSet>,
    pub decode: Vec<StoreDecode>,
    /// Effective permission count per user.
    pub x: Vec<usize>,
    /// Historical (user, datastore) pairs that lost access.
    pub uncovered: usize,
    /// Sum of per-user costs.
    pub cost: f64,
    user_stamp: Vec<u32>,
    store_stamp: Vec<u32>,
    epoch: u32,
}

impl State {
    /// Builds a state from per-user group lists. Inactive users are dropped
    /// and, inside each group, a user whose excluded partner joined earlier
    /// is dropped too.
    pub fn from_groups(p: &Problem, groups: &[Vec<usize>]) -> Self {
        let mut members = vec![BitSet::new(p.n_users); p.n_groups];
        let mut groups_of = vec![BitSet::new(p.n_groups); p.n_users];
        for (u, gs) in groups.iter().enumerate() {
            if !p.is_active.contains(u) {
                continue;
            }
            for &g in gs {
                if g >= p.n_groups || members[g].intersects(&p.excluded[u]) {
                    continue;
                }
                members[g].insert(u);
                groups_of[u].insert(g);
            }
        }
        let mut s = Self {
            members,
            groups_of,
            decode: vec![StoreDecode::empty(p.n_users, p.n_groups); p.n_stores],
            x: vec![0; p.n_users],
            uncovered: 0,
            cost: 0.0,
            user_stamp: vec![0; p.n_users],
            store_stamp: vec![0; p.n_stores],
            epoch: 0,
        };
        for d in 0..p.n_stores {
            s.uncovered += p.must[d].count();
        }
        for d in 0..p.n_stores {
            let (dec, _) = s.decode_store(p, d);
            s.add_contribution(p, d, dec);
        }
        s.recompute_cost(p);
        s
    }

    pub fn from_membership(p: &Problem, ug: &BitMatrix) -> Self {
        let groups: Vec<Vec<usize>> = (0..p.n_users)
            .map(|u| ug.row(u).iter().filter(|&g| g < p.n_groups).collect())
            .collect();
        Self::from_groups(p, &groups)
    }

    pub fn recompute_cost(&mut self, p: &Problem) {
        self.cost = (0..p.n_users).map(|u| p.cost(u, self.x[u])).sum();
    }

    pub fn to_policy(&self, p: &Problem) -> GeneratedPolicy {
        let mut pol = GeneratedPolicy::empty(p.n_users, p.n_groups, p.n_stores);
        for (g, m) in self.members.iter().enumerate() {
            for u in m.iter() {
                pol.ug.set(u, g, true);
            }
        }
        for (d, dec) in self.decode.iter().enumerate() {
            for g in dec.granted.iter() {
                pol.dad.set(g, d, true);
            }
        }
        pol
    }

    /// Groups per user, for cloning into a fresh state.
    pub fn assignment(&self) -> Vec<Vec<usize>> {
        self.groups_of.iter().map(|gs| gs.iter().collect()).collect()
    }

    pub fn first_empty_group(&self) -> Option<usize> {
        self.members.iter().position(BitSet::is_empty)
    }

    /// Whether `u` may join `g` without breaching an exclusion.
    #[inline]
    pub fn can_join(&self, p: &Problem, u: usize, g: usize) -> bool {
        !self.members[g].intersects(&p.excluded[u])
    }

    fn cover(&self, p: &Problem, d: usize) -> Option<Cover> {
        let must = &p.must[d];
        if must.is_empty() {
            return None;
        }
        let forbidden = &p.forbidden[d];
        let mut cands = Vec::new();
        let mut once = BitSet::new(p.n_users);
        let mut twice = BitSet::new(p.n_users);
        for (g, m) in self.members.iter().enumerate() {
            if !m.intersects(must) || m.intersects(forbidden) {
                continue;
            }
            let mg = m.intersection(must);
            twice.union_with(&once.intersection(&mg));
            once.union_with(&mg);
            cands.push(g);
        }
        let forced_users = once.difference(&twice);
        let mut chosen = BitSet::new(p.n_groups);
        let mut covered = BitSet::new(p.n_users);
        let mut base_extras = BitSet::new(p.n_users);
        for &g in &cands {
            if self.members[g].intersects(&forced_users) {
                chosen.insert(g);
                covered.union_with(&self.members[g]);
                base_extras.union_with(&self.members[g]);
            }
        }
        covered.intersect_with(must);
        base_extras.intersect_with(&p.allowed[d]);
        let remaining = once.difference(&covered);
        let optional = cands
            .into_iter()
            .filter(|&g| !chosen.contains(g) && self.members[g].intersects(&remaining))
            .collect();
        Some(Cover {
            coverable: once,
            chosen,
            base_extras,
            remaining,
            optional,
        })
    }

    /// Candidate grant sets for `d`: all covers with inclusion-minimal
    /// dormant grants when the optional groups are few (exact), otherwise a
    /// single greedy cover weighted by the current marginal costs.
    fn store_options(&self, p: &Problem, d: usize) -> (Vec<StoreDecode>, bool) {
        let Some(cover) = self.cover(p, d) else {
            return (vec![StoreDecode::empty(p.n_users, p.n_groups)], true);
        };
        let make = |granted: BitSet, extras: BitSet| StoreDecode {
            granted,
            extras,
            covered: cover.coverable.clone(),
        };
        if cover.remaining.is_empty() {
            return (vec![make(cover.chosen.clone(), cover.base_extras.clone())], true);
        }

        let must = &p.must[d];
        let allowed = &p.allowed[d];
        let opt_cover: Vec<BitSet> = cover.optional.iter().map(|&g| self.members[g].intersection(must)).collect();
        let opt_extras: Vec<BitSet> = cover.optional.iter().map(|&g| self.members[g].intersection(allowed)).collect();

        if cover.optional.len() > EXACT_OPTIONAL {
            let mut granted = cover.chosen.clone();
            let mut extras = cover.base_extras.clone();
            let mut remaining = cover.remaining.clone();
            let mut used = vec![false; cover.optional.len()];
            while !remaining.is_empty() {
                let mut best: Option<(usize, f64, usize)> = None;
                for i in 0..cover.optional.len() {
                    if used[i] {
                        continue;
                    }
                    let gain = opt_cover[i].intersection_count(&remaining);
                    if gain == 0 {
                        continue;
                    }
                    let added: f64 = opt_extras[i]
                        .difference(&extras)
                        .iter()
                        .map(|u| p.marginal(u, self.x[u]))
                        .sum();
                    let ratio = added / gain as f64;
                    let better = match best {
                        None => true,
                        Some((_, r, g)) => ratio < r - 1e-12 || (ratio <= r + 1e-12 && gain > g),
                    };
                    if better {
                        best = Some((i, ratio, gain));
                    }
                }
                let (i, _, _) = best.expect("remaining users are coverable");
                used[i] = true;
                granted.insert(cover.optional[i]);
                extras.union_with(&opt_extras[i]);
                remaining.difference_with(&opt_cover[i]);
            }
            return (vec![make(granted, extras)], false);
        }

        let k = cover.optional.len();
        let mut found: Vec<(usize, BitSet, BitSet)> = Vec::new();
        for mask in 1u32..(1u32 << k) {
            let mut cov = BitSet::new(p.n_users);
            for (i, c) in opt_cover.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    cov.union_with(c);
                }
            }
            if !cover.remaining.is_subset(&cov) {
                continue;
            }
            let mut granted = cover.chosen.clone();
            let mut extras = cover.base_extras.clone();
            for (i, e) in opt_extras.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    granted.insert(cover.optional[i]);
                    extras.union_with(e);
                }
            }
            found.push((extras.count(), granted, extras));
        }
        found.sort_by_key(|(count, _, _)| *count);
        let mut kept: Vec<StoreDecode> = Vec::new();
        for (_, granted, extras) in found {
            if kept.iter().any(|o| o.extras.is_subset(&extras)) {
                continue;
            }
            kept.push(make(granted, extras));
        }
        (kept, true)
    }

    /// Cheapest option for `d` given the current counts (which must not
    /// include `d`'s own contribution).
    fn decode_store(&self, p: &Problem, d: usize) -> (StoreDecode, bool) {
        let (mut options, exact) = self.store_options(p, d);
        if options.len() == 1 {
            return (options.pop().unwrap(), exact);
        }
        let mut best = 0;
        let mut best_cost = f64::INFINITY;
        for (i, o) in options.iter().enumerate() {
            let c: f64 = o.extras.iter().map(|u| p.marginal(u, self.x[u])).sum();
            if c < best_cost - 1e-12 {
                best = i;
                best_cost = c;
            }
        }
        (options.swap_remove(best), exact)
    }

    fn next_epoch(&mut self) -> u32 {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.user_stamp.iter_mut().for_each(|s| *s = 0);
            self.store_stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
        self.epoch
    }

    fn remove_contribution(&mut self, p: &Problem, d: usize, saved: &mut Vec<(usize, usize)>) -> StoreDecode {
        let old = std::mem::replace(&mut self.decode[d], StoreDecode::empty(0, 0));
        for u in old.extras.iter().chain(old.covered.iter()) {
            if self.user_stamp[u] != self.epoch {
                self.user_stamp[u] = self.epoch;
                saved.push((u, self.x[u]));
            }
            self.x[u] -= 1;
        }
        self.uncovered += old.covered.count();
        let _ = p;
        old
    }

    fn add_contribution(&mut self, p: &Problem, d: usize, dec: StoreDecode) {
        for u in dec.extras.iter().chain(dec.covered.iter()) {
            self.x[u] += 1;
        }
        self.uncovered -= dec.covered.count();
        let _ = p;
        self.decode[d] = dec;
    }

    fn add_tracked(&mut self, p: &Problem, d: usize, dec: StoreDecode, saved: &mut Vec<(usize, usize)>) {
        for u in dec.extras.iter().chain(dec.covered.iter()) {
            if self.user_stamp[u] != self.epoch {
                self.user_stamp[u] = self.epoch;
                saved.push((u, self.x[u]));
            }
        }
        self.add_contribution(p, d, dec);
    }

    /// Applies membership changes `(user, group, member?)` and re-decodes the
    /// datastores they can affect.
    pub fn apply(&mut self, p: &Problem, changes: &[(usize, usize, bool)]) -> Undo {
        let epoch = self.next_epoch();
        let uncovered_before = self.uncovered;
        let cost_before = self.cost;
        let mut membership = Vec::with_capacity(changes.len());
        let mut stores = Vec::new();
        for &(u, g, add) in changes {
            let was = self.members[g].contains(u);
            if was == add {
                continue;
            }
            membership.push((u, g, was));
            self.members[g].set(u, add);
            self.groups_of[u].set(g, add);
            for &d in &p.relevant[u] {
                if self.store_stamp[d] != epoch {
                    self.store_stamp[d] = epoch;
                    stores.push(d);
                }
            }
        }
        let mut saved = Vec::new();
        let mut old_decodes = Vec::with_capacity(stores.len());
        for &d in &stores {
            let old = self.remove_contribution(p, d, &mut saved);
            let (dec, _) = self.decode_store(p, d);
            self.add_tracked(p, d, dec, &mut saved);
            old_decodes.push((d, old));
        }
        let delta_cost: f64 = saved.iter().map(|&(u, old)| p.cost(u, self.x[u]) - p.cost(u, old)).sum();
        self.cost += delta_cost;
        Undo {
            membership,
            stores: old_decodes,
            x_saved: saved,
            uncovered_before,
            cost_before,
        }
    }

    pub fn revert(&mut self, undo: Undo) {
        for (u, g, was) in undo.membership.into_iter().rev() {
            self.members[g].set(u, was);
            self.groups_of[u].set(g, was);
        }
        for (d, old) in undo.stores {
            self.decode[d] = old;
        }
        for (u, old) in undo.x_saved {
            self.x[u] = old;
        }
        self.uncovered = undo.uncovered_before;
        self.cost = undo.cost_before;
    }

    /// Re-optimises every grant for the current memberships. Returns whether
    /// the result is provably the best grant matrix for these memberships.
    pub fn polish(&mut self, p: &Problem) -> bool {
        let mut all_exact = true;
        let mut multi: Vec<(usize, Vec<StoreDecode>)> = Vec::new();
        for d in 0..p.n_stores {
            let (options, exact) = self.store_options(p, d);
            all_exact &= exact;
            if options.len() > 1 {
                multi.push((d, options));
            } else if exact {
                let mut options = options;
                let mut saved = Vec::new();
                self.next_epoch();
                self.remove_contribution(p, d, &mut saved);
                self.add_contribution(p, d, options.pop().unwrap());
            }
        }

        let product = multi
            .iter()
            .try_fold(1usize, |acc, (_, o)| acc.checked_mul(o.len()).filter(|&v| v <= JOINT_LIMIT));
        match product {
            Some(_) if !multi.is_empty() => {
                let mut saved = Vec::new();
                self.next_epoch();
                for (d, _) in &multi {
                    self.remove_contribution(p, *d, &mut saved);
                }
                // Users whose count depends on the joint choice.
                let mut affected = BitSet::new(p.n_users);
                for (_, options) in &multi {
                    for o in options {
                        affected.union_with(&o.extras);
                        affected.union_with(&o.covered);
                    }
                }
                let affected: Vec<usize> = affected.iter().collect();
                let mut counts = vec![0usize; p.n_users];
                let mut choice = vec![0usize; multi.len()];
                let mut best_choice = choice.clone();
                let mut best_cost = f64::INFINITY;
                loop {
                    for &u in &affected {
                        counts[u] = self.x[u];
                    }
                    for (i, (_, options)) in multi.iter().enumerate() {
                        let o = &options[choice[i]];
                        for u in o.extras.iter().chain(o.covered.iter()) {
                            counts[u] += 1;
                        }
                    }
                    let c: f64 = affected.iter().map(|&u| p.cost(u, counts[u])).sum();
                    if c < best_cost - 1e-12 {
                        best_cost = c;
                        best_choice.clone_from(&choice);
                    }
                    // mixed-radix increment
                    let mut i = 0;
                    while i < multi.len() {
                        choice[i] += 1;
                        if choice[i] < multi[i].1.len() {
                            break;
                        }
                        choice[i] = 0;
                        i += 1;
                    }
                    if i == multi.len() {
                        break;
                    }
                }
                for ((d, mut options), c) in multi.into_iter().zip(best_choice) {
                    let dec = options.swap_remove(c);
                    self.add_contribution(p, d, dec);
                }
            }
            Some(_) => {}
            None => {
                all_exact = false;
                for _ in 0..8 {
                    let mut changed = false;
                    for (d, _) in &multi {
                        let d = *d;
                        let before = self.decode[d].granted.clone();
                        let mut saved = Vec::new();
                        self.next_epoch();
                        self.remove_contribution(p, d, &mut saved);
                        let (dec, _) = self.decode_store(p, d);
                        changed |= dec.granted != before;
                        self.add_contribution(p, d, dec);
                    }
                    if !changed {
                        break;
                    }
                }
            }
        }
        self.recompute_cost(p);
        all_exact
    }
}
