//! Classical power-control strategies.
//!
//! [`wmmse`] is the scalar (SISO) WMMSE block-coordinate iteration with
//! amplitude variables `v = sqrt(p)`. With `g_ij = |h_ij|^2` one sweep is
//!
//! ```text
//! u_i <- sqrt(g_ii) v_i / (sigma^2 + sum_j g_ij v_j^2)
//! m_i <- 1 / (1 - u_i sqrt(g_ii) v_i)
//! v_i <- clamp(w_i m_i u_i sqrt(g_ii) / sum_j w_j m_j u_j^2 g_ji, 0, sqrt(pmax))
//! ```
//!
//! Starting from full power, the weighted sum-rate never decreases across
//! sweeps. Each sweep costs `O(n^2)`.

use crate::netgen::ChannelInstance;
use crate::objective::{weighted_sum_rate, PowerAllocation};
use crate::{Error, Result};

/// Every transmitter at `pmax`.
pub fn max_power(instance: &ChannelInstance) -> PowerAllocation {
    PowerAllocation {
        p: vec![instance.pmax(); instance.n()],
        rates: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WmmseOptions {
    pub iterations: usize,
    /// Stop early once a sweep improves the weighted sum-rate by less than
    /// this amount. `None` runs every iteration.
    pub tolerance: Option<f64>,
}

impl Default for WmmseOptions {
    fn default() -> Self {
        Self {
            iterations: 100,
            tolerance: None,
        }
    }
}

impl WmmseOptions {
    pub fn iterations(iterations: usize) -> Self {
        Self {
            iterations,
            ..Self::default()
        }
    }
}

/// Floor for `1 - u_i sqrt(g_ii) v_i` before inversion.
const MSE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct WmmseState {
    /// Amplitudes `sqrt(p_i)`.
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub mse_w: Vec<f64>,
    pub iter: usize,
    sqrt_g: Vec<f64>,
}

impl WmmseState {
    /// Full-power initialization `v = sqrt(pmax)`.
    pub fn new(instance: &ChannelInstance) -> Self {
        let n = instance.n();
        Self {
            v: vec![instance.pmax().sqrt(); n],
            u: vec![0.0; n],
            mse_w: vec![1.0; n],
            iter: 0,
            sqrt_g: instance.h().diagonal(),
        }
    }

    pub fn powers(&self) -> Vec<f64> {
        self.v.iter().map(|v| v * v).collect()
    }

    /// One block-coordinate sweep over `u`, `mse_w`, then `v`.
    pub fn sweep(&mut self, instance: &ChannelInstance) -> Result<()> {
        let n = instance.n();
        let h = instance.h();
        let sigma2 = instance.sigma2();
        let w = instance.weights();
        let vmax = instance.pmax().sqrt();
        let iteration = self.iter;

        for i in 0..n {
            let row = h.row(i);
            let mut received = sigma2;
            for j in 0..n {
                received += row[j] * row[j] * self.v[j] * self.v[j];
            }
            self.u[i] = self.sqrt_g[i] * self.v[i] / received;
        }
        for i in 0..n {
            let e = (1.0 - self.u[i] * self.sqrt_g[i] * self.v[i]).max(MSE_FLOOR);
            self.mse_w[i] = 1.0 / e;
        }
        let factor: Vec<f64> = (0..n).map(|j| w[j] * self.mse_w[j] * self.u[j] * self.u[j]).collect();
        for i in 0..n {
            let mut denom = 0.0;
            for (j, f) in factor.iter().enumerate() {
                let g = h[(j, i)];
                denom += f * g * g;
            }
            let num = w[i] * self.mse_w[i] * self.u[i] * self.sqrt_g[i];
            let v = if denom > 0.0 { num / denom } else { vmax };
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    stage: "wmmse amplitude update",
                    iteration,
                    pair: i,
                });
            }
            self.v[i] = v.clamp(0.0, vmax);
        }
        self.iter += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WmmseOutcome {
    pub allocation: PowerAllocation,
    pub state: WmmseState,
    /// Weighted sum-rate before the first sweep and after each sweep.
    pub history: Vec<f64>,
}

pub fn wmmse(instance: &ChannelInstance, options: WmmseOptions) -> Result<WmmseOutcome> {
    if options.iterations == 0 {
        return Err(Error::InvalidParameter("wmmse needs at least one iteration".into()));
    }
    let mut state = WmmseState::new(instance);
    let mut history = Vec::with_capacity(options.iterations + 1);
    history.push(weighted_sum_rate(instance, &state.powers())?);
    for _ in 0..options.iterations {
        state.sweep(instance)?;
        let value = weighted_sum_rate(instance, &state.powers())?;
        let gain = value - history.last().copied().unwrap_or(f64::NEG_INFINITY);
        history.push(value);
        if options.tolerance.is_some_and(|tol| gain.abs() < tol) {
            break;
        }
    }
    let allocation = PowerAllocation::new(state.powers(), instance.pmax())?;
    Ok(WmmseOutcome {
        allocation,
        state,
        history,
    })
}

/// Exhaustive search over `levels` evenly spaced powers in `[0, pmax]` per
/// pair. Cost is `levels^n`, so `n` is capped at 4.
pub fn grid_oracle(instance: &ChannelInstance, levels: usize) -> Result<PowerAllocation> {
    let n = instance.n();
    if n > 4 {
        return Err(Error::OracleTooLarge(n));
    }
    if levels < 2 {
        return Err(Error::InvalidParameter("grid oracle needs at least 2 levels".into()));
    }
    let grid: Vec<f64> = (0..levels)
        .map(|k| instance.pmax() * k as f64 / (levels - 1) as f64)
        .collect();
    let mut idx = vec![0usize; n];
    let mut p = vec![0.0; n];
    let mut best = (f64::NEG_INFINITY, p.clone());
    loop {
        for (pk, &k) in p.iter_mut().zip(&idx) {
            *pk = grid[k];
        }
        let value = weighted_sum_rate(instance, &p)?;
        if value > best.0 {
            best = (value, p.clone());
        }
        // odometer increment
        let mut d = 0;
        while d < n {
            idx[d] += 1;
            if idx[d] < levels {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == n {
            break;
        }
    }
    PowerAllocation::new(best.1, instance.pmax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Matrix;

    fn two_pair(direct: f64, cross: f64, sigma2: f64) -> ChannelInstance {
        ChannelInstance::new(
            Matrix::from_vec(2, 2, vec![direct, cross, cross, direct]).unwrap(),
            sigma2,
            vec![1.0; 2],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn max_power_is_pmax() {
        let inst = ChannelInstance::new(Matrix::filled(3, 3, 0.2), 1e-3, vec![1.0; 3], 2.5).unwrap();
        assert_eq!(max_power(&inst).p, vec![2.5; 3]);
    }

    #[test]
    fn single_pair_goes_full_power_in_one_sweep() {
        let inst = ChannelInstance::new(Matrix::filled(1, 1, 0.01), 2.6e-5, vec![1.0], 1.0).unwrap();
        let out = wmmse(&inst, WmmseOptions::iterations(1)).unwrap();
        assert_eq!(out.allocation.p, vec![1.0]);
    }

    #[test]
    fn symmetric_strong_interference_matches_grid() {
        // Exact symmetry is a fixed point of the iteration; break it slightly.
        let inst = ChannelInstance::new(
            Matrix::from_vec(2, 2, vec![1.0, 1.0, 1.0, 0.99]).unwrap(),
            2.6e-5,
            vec![1.0; 2],
            1.0,
        )
        .unwrap();
        let ours = wmmse(&inst, WmmseOptions::default()).unwrap().allocation;
        let oracle = grid_oracle(&inst, 101).unwrap();
        let a = weighted_sum_rate(&inst, &ours.p).unwrap();
        let b = weighted_sum_rate(&inst, &oracle.p).unwrap();
        assert!(a >= 0.99 * b, "wmmse {a} vs grid {b}");
        let (hi, lo) = if ours.p[0] > ours.p[1] { (ours.p[0], ours.p[1]) } else { (ours.p[1], ours.p[0]) };
        assert!(hi > 0.99 && lo < 0.01, "{:?}", ours.p);
    }

    #[test]
    fn decoupled_pairs_both_full() {
        let inst = two_pair(1.0, 1e-9, 1e-3);
        assert_eq!(grid_oracle(&inst, 11).unwrap().p, vec![1.0, 1.0]);
        let single = ChannelInstance::new(Matrix::filled(1, 1, 0.5), 1e-3, vec![1.0], 1.0).unwrap();
        assert_eq!(grid_oracle(&single, 101).unwrap().p, vec![1.0]);
    }

    #[test]
    fn grid_oracle_refuses_large_networks() {
        let inst = ChannelInstance::new(Matrix::filled(5, 5, 0.1), 1e-3, vec![1.0; 5], 1.0).unwrap();
        assert!(matches!(grid_oracle(&inst, 3), Err(Error::OracleTooLarge(5))));
    }

    #[test]
    fn zero_iterations_rejected() {
        let inst = two_pair(1.0, 0.1, 1e-3);
        assert!(wmmse(&inst, WmmseOptions::iterations(0)).is_err());
    }

    #[test]
    fn tolerance_exit_stops_early() {
        let inst = two_pair(1.0, 0.01, 1e-3);
        let out = wmmse(
            &inst,
            WmmseOptions {
                iterations: 100,
                tolerance: Some(1e-8),
            },
        )
        .unwrap();
        assert!(out.state.iter < 100);
    }

    #[test]
    fn mse_weights_stay_at_least_one() {
        let inst = two_pair(0.8, 0.5, 1e-4);
        let mut st = WmmseState::new(&inst);
        for _ in 0..20 {
            st.sweep(&inst).unwrap();
            assert!(st.mse_w.iter().all(|&m| m >= 1.0));
            assert!(st.v.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
