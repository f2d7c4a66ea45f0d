mod common;

use std::collections::BTreeSet;
use std::time::Duration;

use iamax_core::bits::BitMatrix;
use iamax_core::embedding::{compute_alpha, kmeans, EmbeddingTable, NodeKind};
use iamax_core::homogeneity::{generate, separate, GenerationConfig, SimilarityModel};
use iamax_core::model::{AccessInstance, DatastoreEntry, InstanceFile};
use iamax_core::optimizer::{solve, PenaltyConfig, SolveConfig, SolveStatus};
use iamax_core::synth::{planted, PlantedConfig};

fn scfg(groups: usize, seed: u64) -> SolveConfig {
    let mut c = SolveConfig::new(groups);
    c.time_limit = Duration::from_secs(20);
    c.seed = seed;
    c
}

fn cross_cluster_pairs(labels: &[usize]) -> Vec<(usize, usize)> {
    let n = labels.len();
    (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).filter(|&(a, b)| labels[a] != labels[b]).collect()
}

#[test]
fn maximal_alpha_needs_one_solve() {
    let (inst, emb, _) = planted(&PlantedConfig { num_roles: 3, projects: Some(2), seed: 1, ..Default::default() }).unwrap();
    let c = kmeans(&emb, 3, 0).unwrap();
    let sm = SimilarityModel::from_table(&inst, &emb, 2.0, &c.cluster_of()).unwrap();
    let out = generate(&inst, &scfg(6, 0), &PenaltyConfig::default(), &sm, &GenerationConfig::default()).unwrap();
    assert_eq!(out.trace.len(), 1);
    assert!(out.cuts.is_empty() && out.remaining_violations.is_empty());
    assert_eq!(out.trace[0].satisfied_fraction, 1.0);
}

#[test]
fn mixed_seed_group_becomes_cluster_pure() {
    let cfg = PlantedConfig {
        num_roles: 2,
        users_per_role: 4,
        stores_per_role: 2,
        projects: Some(2),
        seed: 5,
        ..Default::default()
    };
    let (inst, emb, truth) = planted(&cfg).unwrap();
    let pcfg = PenaltyConfig::default();
    let groups = 4;

    // a cluster-pure feasible policy exists
    let mut pure = scfg(groups, 0);
    pure.pair_exclusions = cross_cluster_pairs(&truth.role_of_user);
    let witness = solve(&inst, &pure, &pcfg).unwrap();
    assert_eq!(witness.status, SolveStatus::Feasible);
    assert_eq!(common::independent_violations(&inst, witness.policy().unwrap(), &pure.pair_exclusions), 0);

    let c = kmeans(&emb, 2, 0).unwrap();
    let alpha = compute_alpha(&emb, &c).unwrap();
    let sm = SimilarityModel::from_table(&inst, &emb, alpha, &c.cluster_of()).unwrap();
    let mut start = scfg(groups, 0);
    start.restarts = 1;
    start.warm_start = Some(BitMatrix::from_fn(inst.n_users(), groups, |_, g| g == 0));
    let out = generate(&inst, &start, &pcfg, &sm, &GenerationConfig::default()).unwrap();
    assert!(out.trace.len() <= 3, "{} iterations", out.trace.len());
    assert!(out.remaining_violations.is_empty());
    let pol = out.result.policy().unwrap();
    for g in 0..groups {
        let roles: BTreeSet<usize> = pol.members(g).iter().map(|u| truth.role_of_user[u]).collect();
        assert!(roles.len() <= 1, "group {g} mixes roles {roles:?}");
    }
}

#[test]
fn zero_alpha_ends_with_last_feasible_solution() {
    let inst = AccessInstance::from_file(InstanceFile {
        users: vec!["a".into(), "b".into()],
        datastores: vec![DatastoreEntry { id: "d".into(), data_types: vec![] }],
        groups: vec![],
        direct_permissions: vec![("a".into(), "d".into()), ("b".into(), "d".into())],
        accesses: vec![("a".into(), "d".into(), 1), ("b".into(), "d".into(), 1)],
    })
    .unwrap();
    let mut emb = EmbeddingTable::new(2);
    emb.insert("a", NodeKind::User, vec![1.0, 0.0]);
    emb.insert("b", NodeKind::User, vec![0.6, 0.8]);
    let sm = SimilarityModel::from_table(&inst, &emb, 0.0, &Default::default()).unwrap();
    let out = generate(&inst, &scfg(1, 0), &PenaltyConfig::default(), &sm, &GenerationConfig::default()).unwrap();
    assert_eq!(out.trace.len(), 2);
    assert!(out.trace[0].feasible && !out.trace[1].feasible);
    assert_eq!(out.cuts, vec![(0, 1)]);
    assert_eq!(out.remaining_violations.len(), 1);
    assert!((out.remaining_violations[0].distance - 0.4).abs() < 1e-12);
    assert_eq!(separate(out.result.policy().unwrap(), &sm).unwrap(), out.remaining_violations);
}

#[test]
fn cut_sets_grow_without_repeats() {
    for seed in 0..6 {
        let cfg = PlantedConfig {
            num_roles: 3,
            users_per_role: 5,
            stores_per_role: 3,
            projects: Some(2),
            seed: 40 + seed,
            ..Default::default()
        };
        let (inst, emb, _) = planted(&cfg).unwrap();
        let c = kmeans(&emb, 3, seed).unwrap();
        let alpha = compute_alpha(&emb, &c).unwrap();
        let sm = SimilarityModel::from_table(&inst, &emb, alpha, &c.cluster_of()).unwrap();
        let gcfg = GenerationConfig { batch_size: 4, max_iterations: 40 };
        let out = generate(&inst, &scfg(6, seed), &PenaltyConfig::default(), &sm, &gcfg).unwrap();

        let distinct: BTreeSet<(usize, usize)> = out.cuts.iter().copied().collect();
        assert_eq!(distinct.len(), out.cuts.len(), "seed {seed}: repeated cut");
        assert_eq!(out.trace.iter().map(|r| r.cuts_added).sum::<usize>(), out.cuts.len());
        assert!(out.trace[1..].iter().all(|r| (1..=4).contains(&r.cuts_added)));
        let fractions: Vec<f64> = out.trace.iter().map(|r| r.satisfied_fraction).collect();
        assert!(fractions.windows(2).all(|w| w[1] >= w[0]), "seed {seed}: {fractions:?}");
        assert_eq!(common::independent_violations(&inst, out.result.policy().unwrap(), &out.cuts), 0);
        if out.trace.last().unwrap().violations == 0 && out.trace.last().unwrap().feasible {
            assert!(out.remaining_violations.is_empty());
        }
    }
}
