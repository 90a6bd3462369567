use d2d_autodiff::{Tape, Tensor};
use d2d_core::{gen_dataset, weighted_sum_rate, DatasetSpec};
use d2d_train::sum_rate_loss;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// The loss is the negative batch mean of the weighted sum-rate.
    #[test]
    fn loss_is_negative_mean_sum_rate(
        n in 1usize..7,
        batch in 1usize..5,
        seed in any::<u64>(),
        powers in proptest::collection::vec(0.0f64..=1.0, 24..=24),
    ) {
        let ds = gen_dataset(&DatasetSpec::single(n, batch, 1, seed)).unwrap();
        let insts: Vec<_> = ds.instances.iter().collect();
        let p: Vec<f64> = (0..batch * n).map(|k| powers[k % powers.len()]).collect();

        let mut tape = Tape::new();
        let pv = tape.param(Tensor::new(vec![batch, n], p.clone()).unwrap());
        let loss = sum_rate_loss(&mut tape, pv, &insts).unwrap();
        let value = tape.value(loss).data()[0];

        let expected = -insts
            .iter()
            .enumerate()
            .map(|(b, inst)| weighted_sum_rate(inst, &p[b * n..(b + 1) * n]).unwrap())
            .sum::<f64>()
            / batch as f64;
        prop_assert!((value - expected).abs() <= 1e-10 * expected.abs().max(1.0), "{value} vs {expected}");
    }
}
