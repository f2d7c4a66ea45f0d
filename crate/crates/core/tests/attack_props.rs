use iamax_core::attack::{
    compare_matrices, filter_high_degree, greedy_attack, impact, random_attack, AttackConfig, AttackMode,
};
use iamax_core::bits::BitMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matrix(seed: u64, users: usize, stores: usize, p: f64) -> BitMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BitMatrix::from_fn(users, stores, |_, _| rng.random_bool(p))
}

/// Union size from the raw rows.
fn union_size(m: &BitMatrix, users: &[usize]) -> usize {
    (0..m.n_cols()).filter(|&d| users.iter().any(|&u| m.get(u, d))).count()
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if n < k {
        return vec![];
    }
    let mut out = subsets(n - 1, k);
    for mut s in subsets(n - 1, k - 1) {
        s.push(n - 1);
        out.push(s);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn impact_is_the_union_size(seed in any::<u64>(), mask in any::<u16>()) {
        let m = matrix(seed, 10, 12, 0.3);
        let users: Vec<usize> = (0..10).filter(|u| mask >> u & 1 == 1).collect();
        prop_assert_eq!(impact(&m, &users).unwrap(), union_size(&m, &users));
    }

    #[test]
    fn exact_mode_equals_enumeration(seed in any::<u64>(), n in 1usize..9, k in 1usize..5) {
        let k = k.min(n);
        let m = matrix(seed, n, 8, 0.35);
        let all = subsets(n, k);
        let expected = all.iter().map(|s| union_size(&m, s) as f64).sum::<f64>() / all.len() as f64;
        let r = random_attack(&m, k, 10, seed).unwrap();
        prop_assert!(r.exact);
        prop_assert!((r.mean - expected).abs() < 1e-12);
        prop_assert_eq!(r.stderr, 0.0);
    }

    #[test]
    fn greedy_first_pick_is_max_row(seed in any::<u64>()) {
        let m = matrix(seed, 9, 10, 0.4);
        let best = m.row_counts().into_iter().max().unwrap();
        prop_assert_eq!(greedy_attack(&m, 1).unwrap().impact, best);
    }
}

#[test]
fn three_user_example() {
    // rows {d1,d2}, {d2}, {d3}: the pairs cover 2, 3 and 2 stores
    let m = BitMatrix::from_01(&[&[1, 1, 0], &[0, 1, 0], &[0, 0, 1]]);
    let expected = (union_size(&m, &[0, 1]) + union_size(&m, &[0, 2]) + union_size(&m, &[1, 2])) as f64 / 3.0;
    assert_eq!(expected, 7.0 / 3.0);
    assert!((random_attack(&m, 2, 100, 0).unwrap().mean - expected).abs() < 1e-12);
}

#[test]
fn monte_carlo_converges_at_root_n() {
    // C(40, 5) is far above the enumeration limit
    let m = matrix(7, 40, 30, 0.08);
    let all = subsets(40, 5);
    let truth = all.iter().map(|s| union_size(&m, s) as f64).sum::<f64>() / all.len() as f64;
    let small = random_attack(&m, 5, 4_000, 1).unwrap();
    let double = random_attack(&m, 5, 8_000, 1).unwrap();
    let large = random_attack(&m, 5, 16_000, 1).unwrap();
    assert!(!small.exact && small.samples == 4_000);
    let halving = small.stderr / large.stderr;
    assert!((1.8..=2.2).contains(&halving), "4x samples changed stderr by {halving}");
    let doubling = small.stderr / double.stderr;
    assert!((1.25..=1.6).contains(&doubling), "2x samples changed stderr by {doubling}");
    for r in [&small, &double, &large] {
        assert!((r.mean - truth).abs() < 4.0 * r.stderr, "mean {} vs {truth}", r.mean);
    }
    assert_eq!(random_attack(&m, 5, 4_000, 1).unwrap(), small);
}

#[test]
fn dormancy_only_reach_lowers_worst_case() {
    // every user loses one store reachable only through a dormant permission
    let baseline = BitMatrix::from_01(&[&[1, 0, 0, 1, 0, 0], &[0, 1, 0, 0, 1, 0], &[0, 0, 1, 0, 0, 1]]);
    let hardened = BitMatrix::from_01(&[&[1, 0, 0, 0, 0, 0], &[0, 1, 0, 0, 0, 0], &[0, 0, 1, 0, 0, 0]]);
    let cfg = AttackConfig { filter_fraction: 0.0, ..Default::default() };
    let rows = compare_matrices(&baseline, &hardened, &[1], &[AttackMode::Worst], &cfg).unwrap();
    assert_eq!(rows[0].ratio, Some(0.5));
}

#[test]
fn surviving_hub_masks_hardening() {
    // two hubs are filtered; the third survivor dominates coverage in both matrices
    let mut base = vec![vec![0u8; 20]; 6];
    let mut hard = base.clone();
    for d in 0..20 {
        base[0][d] = 1;
        base[1][d] = 1;
        hard[0][d] = 1;
        hard[1][d] = 1;
    }
    for d in 0..15 {
        base[2][d] = 1;
        hard[2][d] = 1;
    }
    for u in 3..6 {
        base[u][u + 14] = 1;
        base[u][u] = 1;
        hard[u][u] = 1;
    }
    let rows = |m: &Vec<Vec<u8>>| BitMatrix::from_01(&m.iter().map(Vec::as_slice).collect::<Vec<_>>());
    let (b, h) = (rows(&base), rows(&hard));
    let (_, removed, _) = filter_high_degree(&b, 0.3).unwrap();
    assert_eq!(removed, vec![0, 1]);
    let cfg = AttackConfig::default();
    let out = compare_matrices(&b, &h, &[1, 2], &[AttackMode::Worst], &cfg).unwrap();
    assert_eq!(out[0].ratio, Some(1.0));
    assert!(out[1].ratio.unwrap() > 0.9);
    let undefined = compare_matrices(&BitMatrix::new(3, 2), &BitMatrix::new(3, 2), &[1], &[AttackMode::Random], &cfg).unwrap();
    assert_eq!(undefined[0].ratio, None);
}
