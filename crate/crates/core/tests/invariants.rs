use d2d_core::{
    allocation_homophily, gen_dataset, load_dataset, max_power, pair_rates, save_dataset, weighted_sum_rate, wmmse,
    ChannelInstance, DatasetSpec, Matrix, WmmseOptions,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn channel(n: usize, seed: u64, sigma2: f64) -> ChannelInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = Matrix::from_fn(n, n, |i, j| if i == j { rng.gen_range(0.01..1.0) } else { rng.gen_range(0.0..0.3) });
    let w = (0..n).map(|_| rng.gen_range(0.2..1.5)).collect();
    ChannelInstance::new(h, sigma2, w, 1.0).unwrap()
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    perm
}

proptest! {
    #[test]
    fn wmmse_never_decreases(n in 1usize..12, seed in any::<u64>(), log_s in -6.0f64..0.0) {
        let inst = channel(n, seed, 10f64.powf(log_s));
        let out = wmmse(&inst, WmmseOptions::iterations(40)).unwrap();
        for pair in out.history.windows(2) {
            prop_assert!(pair[1] >= pair[0] - 1e-9, "{:?}", out.history);
        }
        let mp = weighted_sum_rate(&inst, &max_power(&inst).p).unwrap();
        prop_assert!(out.allocation.weighted_sum_rate(&inst).unwrap() >= mp - 1e-9);
        prop_assert!(out.allocation.p.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn wmmse_is_permutation_equivariant(n in 2usize..10, seed in any::<u64>()) {
        let inst = channel(n, seed, 1e-3);
        let perm = permutation(n, seed ^ 1);
        let base = wmmse(&inst, WmmseOptions::iterations(30)).unwrap().allocation.p;
        let moved = wmmse(&inst.permuted(&perm).unwrap(), WmmseOptions::iterations(30)).unwrap().allocation.p;
        for (a, &src) in perm.iter().enumerate() {
            prop_assert!((moved[a] - base[src]).abs() < 1e-9);
        }
    }

    #[test]
    fn sum_rate_is_permutation_invariant(n in 1usize..10, seed in any::<u64>()) {
        let inst = channel(n, seed, 2.6e-5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let perm = permutation(n, seed ^ 3);
        let moved_p: Vec<f64> = perm.iter().map(|&k| p[k]).collect();
        let a = weighted_sum_rate(&inst, &p).unwrap();
        let b = weighted_sum_rate(&inst.permuted(&perm).unwrap(), &moved_p).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn rates_are_joint_scale_invariant(n in 1usize..8, seed in any::<u64>(), c in 0.01f64..100.0) {
        let inst = channel(n, seed, 1e-3);
        let scaled = ChannelInstance::new(
            inst.h().map(|v| v * c),
            inst.sigma2() * c * c,
            inst.weights().to_vec(),
            1.0,
        ).unwrap();
        let p = vec![0.5; n];
        let a = pair_rates(&inst, &p).unwrap();
        let b = pair_rates(&scaled, &p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(*x >= 0.0);
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn own_power_raises_own_rate(n in 1usize..8, seed in any::<u64>(), i in 0usize..8) {
        let inst = channel(n, seed, 1e-3);
        let i = i % n;
        let mut p = vec![0.4; n];
        let lo = pair_rates(&inst, &p).unwrap()[i];
        p[i] = 0.9;
        prop_assert!(pair_rates(&inst, &p).unwrap()[i] > lo);
    }

    #[test]
    fn allocation_homophily_in_unit_interval(n in 2usize..10, seed in any::<u64>()) {
        let inst = channel(n, seed, 1e-4);
        let p = wmmse(&inst, WmmseOptions::iterations(20)).unwrap().allocation.p;
        let h = allocation_homophily(&inst, &p).unwrap().h;
        prop_assert!((0.0..=1.0).contains(&h));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dataset_file_round_trip(n in 1usize..6, topologies in 1usize..4, fades in 1usize..4, seed in any::<u64>()) {
        let ds = gen_dataset(&DatasetSpec::single(n, topologies, fades, seed)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        prop_assert_eq!(back.content_hash(), ds.content_hash());
        prop_assert_eq!(back.instances, ds.instances);
    }
}
