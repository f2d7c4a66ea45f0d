use iamax_core::synth::{generate_batch, planted, random_embeddings, upsample, EdgeWeight, PlantedConfig, UpsampleConfig};
use iamax_core::ubg::{build_ubg, events_from_accesses, BehavioralGraph, Relation};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn upsampled_access_is_always_permitted(seed in any::<u64>(), similarity in any::<bool>()) {
        let (base, emb, _) = planted(&PlantedConfig { num_roles: 3, overlap: 1, seed, ..Default::default() }).unwrap();
        let cfg = UpsampleConfig {
            user_range: (10, 40),
            store_range: (10, 40),
            weight: if similarity { EdgeWeight::Similarity } else { EdgeWeight::Distance },
            seed,
            ..Default::default()
        };
        let (inst, table) = upsample(&base, &emb, &cfg).unwrap();
        prop_assert!(inst.ud().is_subset(inst.ud_hat()));
        prop_assert!((10..=40).contains(&inst.n_users()) && (10..=40).contains(&inst.n_datastores()));
        let rel = (inst.permission_density() - base.permission_density()).abs() / base.permission_density();
        prop_assert!(rel <= 0.10, "density off by {}", rel);
        table.validate().unwrap();
        let (again, _) = upsample(&base, &emb, &cfg).unwrap();
        prop_assert_eq!(again.to_json(), inst.to_json());
    }
}

#[test]
fn batch_is_order_independent_of_threads() {
    let bases: Vec<_> = (0..2)
        .map(|s| {
            let (i, e, _) = planted(&PlantedConfig { seed: s, ..Default::default() }).unwrap();
            (i, e)
        })
        .collect();
    let cfg = UpsampleConfig { user_range: (10, 20), store_range: (10, 20), seed: 9, ..Default::default() };
    let a = generate_batch(&bases, 4, &cfg).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| generate_batch(&bases, 4, &cfg).unwrap());
    assert_eq!(a.len(), 8);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.name, y.name);
        assert_eq!(x.instance.to_json(), y.instance.to_json());
        assert_eq!(x.embeddings, y.embeddings);
    }
}

#[test]
fn planted_roles_removable_with_one_group_per_role() {
    use iamax_core::optimizer::{brute_force_solve, PenaltyConfig, SolveConfig};
    for seed in 0..4 {
        let cfg = PlantedConfig { num_roles: 2, users_per_role: 2, stores_per_role: 1, dormancy_factor: 2.0, seed, ..Default::default() };
        let (inst, ..) = planted(&cfg).unwrap();
        assert_eq!(inst.baseline_dormant(), inst.ud().count_ones());
        let res = brute_force_solve(&inst, &SolveConfig::new(2), &PenaltyConfig::default()).unwrap();
        assert_eq!(res.solution.unwrap().dormant_remaining, 0);
    }
}

#[test]
fn ubg_is_canonical_and_normalised() {
    let (inst, ..) = planted(&PlantedConfig { overlap: 1, seed: 2, ..Default::default() }).unwrap();
    let events = events_from_accesses(&inst);
    let g = build_ubg(&inst, &events, &Default::default()).unwrap();
    let mut reversed = events.clone();
    reversed.reverse();
    assert_eq!(build_ubg(&inst, &reversed, &Default::default()).unwrap().to_json(), g.to_json());
    assert_eq!(BehavioralGraph::from_json(&g.to_json()).unwrap(), g);
    for u in inst.users() {
        let total: f64 = g.edges.iter().filter(|e| &e.a == u && e.rel == Relation::DataFlow).map(|e| e.w).sum();
        assert!((total - 1.0).abs() < 1e-12, "{u}: {total}");
    }
    assert!(g.edges.iter().all(|e| e.w > 0.0));
    assert_eq!(g.component_count(), 1);
    let emb = random_embeddings(&inst, 8, 0);
    assert!(emb.nodes.values().all(|n| (iamax_core::embedding::norm(&n.vec) - 1.0).abs() < 1e-12));
}
