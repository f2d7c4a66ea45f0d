#![allow(dead_code)]

use iamax_core::model::{AccessInstance, DatastoreEntry, GroupEntry, InstanceFile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random instance with up to `max_users` users and `max_stores` datastores.
/// Some permissions arrive through an existing group, some datastores carry
/// data types and some accesses are taken from the permitted cells.
pub fn random_tiny(seed: u64, max_users: usize, max_stores: usize) -> AccessInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nu = rng.random_range(1..=max_users);
    let nd = rng.random_range(1..=max_stores);
    let users: Vec<String> = (0..nu).map(|i| format!("u{i}")).collect();
    let stores: Vec<String> = (0..nd).map(|i| format!("d{i}")).collect();
    let type_pool = ["pii", "logs", "billing"];
    let datastores = stores
        .iter()
        .map(|id| DatastoreEntry {
            id: id.clone(),
            data_types: type_pool
                .iter()
                .filter(|_| rng.random_bool(0.3))
                .map(|t| t.to_string())
                .collect(),
        })
        .collect();

    let mut permitted = vec![vec![false; nd]; nu];
    let mut direct = Vec::new();
    for u in 0..nu {
        for d in 0..nd {
            if rng.random_bool(0.5) {
                permitted[u][d] = true;
                direct.push((users[u].clone(), stores[d].clone()));
            }
        }
    }
    let mut groups = Vec::new();
    if rng.random_bool(0.4) {
        let members: Vec<usize> = (0..nu).filter(|_| rng.random_bool(0.5)).collect();
        let gds: Vec<usize> = (0..nd).filter(|_| rng.random_bool(0.4)).collect();
        for &u in &members {
            for &d in &gds {
                permitted[u][d] = true;
            }
        }
        groups.push(GroupEntry {
            id: "team".into(),
            members: members.iter().map(|&u| users[u].clone()).collect(),
            datastores: gds.iter().map(|&d| stores[d].clone()).collect(),
        });
    }
    let mut accesses = Vec::new();
    for u in 0..nu {
        for d in 0..nd {
            if permitted[u][d] && rng.random_bool(0.5) {
                accesses.push((users[u].clone(), stores[d].clone(), rng.random_range(1..20)));
            }
        }
    }
    AccessInstance::from_file(InstanceFile { users, datastores, groups, direct_permissions: direct, accesses })
        .expect("generated instance is valid")
}

/// Counts hard-constraint violations of a policy, recomputing everything
/// from the instance file form with plain nested loops.
pub fn independent_violations(
    inst: &AccessInstance,
    pol: &iamax_core::model::GeneratedPolicy,
    exclusions: &[(usize, usize)],
) -> usize {
    use std::collections::{HashMap, HashSet};
    let file = inst.to_file();
    let users = &file.users;
    let stores: Vec<&str> = file.datastores.iter().map(|d| d.id.as_str()).collect();
    let types: HashMap<&str, HashSet<&str>> = file
        .datastores
        .iter()
        .map(|d| (d.id.as_str(), d.data_types.iter().map(String::as_str).collect()))
        .collect();
    let mut permitted: HashSet<(&str, &str)> = file
        .direct_permissions
        .iter()
        .map(|(u, d)| (u.as_str(), d.as_str()))
        .collect();
    for g in &file.groups {
        for m in &g.members {
            for d in &g.datastores {
                permitted.insert((m.as_str(), d.as_str()));
            }
        }
    }
    let accessed: HashSet<(&str, &str)> = file.accesses.iter().map(|(u, d, _)| (u.as_str(), d.as_str())).collect();

    let n_groups = pol.ug.n_cols();
    let mut violations = 0;
    for (ui, u) in users.iter().enumerate() {
        let mut hist_types: HashSet<&str> = HashSet::new();
        for d in &stores {
            if accessed.contains(&(u.as_str(), *d)) {
                hist_types.extend(types[d].iter().copied());
            }
        }
        for (di, d) in stores.iter().enumerate() {
            let mut granted = false;
            for g in 0..n_groups {
                if pol.ug.get(ui, g) && pol.dad.get(g, di) {
                    granted = true;
                }
            }
            let effective = granted && permitted.contains(&(u.as_str(), *d));
            if accessed.contains(&(u.as_str(), *d)) && !effective {
                violations += 1;
            }
            if effective && types[d].iter().any(|t| !hist_types.contains(t)) {
                violations += 1;
            }
        }
    }
    for &(a, b) in exclusions {
        for g in 0..n_groups {
            if pol.ug.get(a, g) && pol.ug.get(b, g) {
                violations += 1;
            }
        }
    }
    violations
}
