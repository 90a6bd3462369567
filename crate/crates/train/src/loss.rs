use d2d_autodiff::{Tape, Tensor, Var};
use d2d_core::ChannelInstance;

use crate::error::Result;

/// Negative mean weighted sum-rate of the `[batch, n]` powers `power` over
/// `batch`, evaluated on the true (unnormalized) channels.
pub fn sum_rate_loss(tape: &mut Tape, power: Var, batch: &[&ChannelInstance]) -> Result<Var> {
    let b = batch.len();
    let n = batch.first().map_or(0, |inst| inst.n());
    let mut direct = Vec::with_capacity(b * n);
    let mut cross = Vec::with_capacity(b * n * n);
    let mut noise = Vec::with_capacity(b * n);
    let mut weights = Vec::with_capacity(b * n);
    for inst in batch {
        for i in 0..n {
            direct.push(inst.power_gain(i, i));
            noise.push(inst.sigma2());
            weights.push(inst.weights()[i] / std::f64::consts::LN_2);
            for j in 0..n {
                cross.push(if i == j { 0.0 } else { inst.power_gain(i, j) });
            }
        }
    }
    let direct = tape.constant(Tensor::new(vec![b, n], direct)?);
    let cross = tape.constant(Tensor::new(vec![b, n, n], cross)?);
    let noise = tape.constant(Tensor::new(vec![b, n], noise)?);
    let weights = tape.constant(Tensor::new(vec![b, n], weights)?);

    let signal = tape.mul(direct, power)?;
    let interference = tape.batched_matvec(cross, power)?;
    let denom = tape.add(interference, noise)?;
    let sinr = tape.div(signal, denom)?;
    let rate = tape.log1p(sinr);
    let weighted = tape.mul(rate, weights)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, -1.0 / b as f64))
}
