//! Rates, weighted sum-rate and graph homophily.

use serde::{Deserialize, Serialize};

use crate::netgen::ChannelInstance;
use crate::{Error, Matrix, Result};

/// A feasible power vector, optionally with its per-pair rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub p: Vec<f64>,
    pub rates: Option<Vec<f64>>,
}

impl PowerAllocation {
    /// Checks `0 <= p_i <= pmax` for every entry.
    pub fn new(p: Vec<f64>, pmax: f64) -> Result<Self> {
        if let Some((index, &value)) = p
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && **v <= pmax))
        {
            return Err(Error::Infeasible { index, value, pmax });
        }
        Ok(Self { p, rates: None })
    }

    /// Fills in the cached rates for `instance`.
    pub fn with_rates(mut self, instance: &ChannelInstance) -> Result<Self> {
        self.rates = Some(pair_rates(instance, &self.p)?);
        Ok(self)
    }

    pub fn weighted_sum_rate(&self, instance: &ChannelInstance) -> Result<f64> {
        match &self.rates {
            Some(r) if r.len() == instance.n() => Ok(dot(instance.weights(), r)),
            _ => weighted_sum_rate(instance, &self.p),
        }
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            p: perm.iter().map(|&k| self.p[k]).collect(),
            rates: self.rates.as_ref().map(|r| perm.iter().map(|&k| r[k]).collect()),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_len(instance: &ChannelInstance, p: &[f64]) -> Result<()> {
    if p.len() != instance.n() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} powers", instance.n()),
            got: p.len().to_string(),
        });
    }
    Ok(())
}

/// `c_i = log2(1 + |h_ii|^2 p_i / (sigma^2 + sum_{j != i} |h_ij|^2 p_j))`.
pub fn pair_rates(instance: &ChannelInstance, p: &[f64]) -> Result<Vec<f64>> {
    check_len(instance, p)?;
    let n = instance.n();
    let sigma2 = instance.sigma2();
    let h = instance.h();
    Ok((0..n)
        .map(|i| {
            let row = h.row(i);
            let mut interference = 0.0;
            for j in 0..n {
                if j != i {
                    interference += row[j] * row[j] * p[j];
                }
            }
            let signal = row[i] * row[i] * p[i];
            (signal / (sigma2 + interference)).ln_1p() / std::f64::consts::LN_2
        })
        .collect())
}

/// `sum_i w_i c_i`.
pub fn weighted_sum_rate(instance: &ChannelInstance, p: &[f64]) -> Result<f64> {
    Ok(dot(instance.weights(), &pair_rates(instance, p)?))
}

/// Edge-weighted homophily and the per-node terms it averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomophilyReport {
    pub h: f64,
    /// Node-level homophily; `None` for nodes without positive edge weight.
    pub per_node: Vec<Option<f64>>,
    pub excluded: Vec<usize>,
    /// Noise power the labels were computed at, when known.
    pub noise_level: Option<f64>,
}

/// Node-averaged fraction of neighbors with the same label. `adjacency`
/// entries `> 0` are edges; the diagonal is ignored and isolated nodes are
/// left out of the average.
pub fn homophily_discrete<L: PartialEq>(adjacency: &Matrix, labels: &[L]) -> Result<f64> {
    let n = labels.len();
    if adjacency.rows() != n || adjacency.cols() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n}x{n} adjacency"),
            got: format!("{}x{}", adjacency.rows(), adjacency.cols()),
        });
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for i in 0..n {
        let (mut same, mut degree) = (0usize, 0usize);
        for j in (0..n).filter(|&j| j != i && adjacency[(i, j)] > 0.0) {
            degree += 1;
            if labels[i] == labels[j] {
                same += 1;
            }
        }
        if degree > 0 {
            total += same as f64 / degree as f64;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::EmptyGraph("no node has a neighbor".into()));
    }
    Ok(total / counted as f64)
}

/// Edge-weighted homophily for labels in `[0, 1]`:
/// `h = mean_i [ sum_j e_ij (1 - |x_i - x_j|) / sum_j e_ij ]`, `j != i`.
pub fn homophily_weighted(edge_weights: &Matrix, labels: &[f64]) -> Result<HomophilyReport> {
    let n = labels.len();
    if edge_weights.rows() != n || edge_weights.cols() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n}x{n} edge weights"),
            got: format!("{}x{}", edge_weights.rows(), edge_weights.cols()),
        });
    }
    if let Some(x) = labels.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::InvalidParameter(format!("label {x} outside [0, 1]")));
    }
    if let Some(e) = edge_weights.as_slice().iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(Error::InvalidParameter(format!("edge weight {e} is not >= 0")));
    }

    let mut per_node = Vec::with_capacity(n);
    let mut excluded = Vec::new();
    for i in 0..n {
        let (mut num, mut den) = (0.0, 0.0);
        for j in (0..n).filter(|&j| j != i) {
            let e = edge_weights[(i, j)];
            num += e * (1.0 - (labels[i] - labels[j]).abs());
            den += e;
        }
        if den > 0.0 {
            per_node.push(Some(num / den));
        } else {
            per_node.push(None);
            excluded.push(i);
        }
    }
    let counted: Vec<f64> = per_node.iter().flatten().copied().collect();
    if counted.is_empty() {
        return Err(Error::EmptyGraph("every node has zero total edge weight".into()));
    }
    Ok(HomophilyReport {
        h: counted.iter().sum::<f64>() / counted.len() as f64,
        per_node,
        excluded,
        noise_level: None,
    })
}

/// Homophily of a power allocation on its own channel graph: edge weights
/// are the off-diagonal amplitude gains scaled to a maximum of 1, labels
/// are `p_i / pmax`.
pub fn allocation_homophily(instance: &ChannelInstance, p: &[f64]) -> Result<HomophilyReport> {
    check_len(instance, p)?;
    let n = instance.n();
    let h = instance.h();
    let max_off = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| h[(i, j)])
        .fold(0.0, f64::max);
    let scale = if max_off > 0.0 { 1.0 / max_off } else { 1.0 };
    let edges = Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { h[(i, j)] * scale });
    let labels: Vec<f64> = p
        .iter()
        .map(|&v| (v / instance.pmax()).clamp(0.0, 1.0))
        .collect();
    let mut report = homophily_weighted(&edges, &labels)?;
    report.noise_level = Some(instance.sigma2());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(h: Vec<f64>, n: usize, sigma2: f64, w: Vec<f64>) -> ChannelInstance {
        ChannelInstance::new(Matrix::from_vec(n, n, h).unwrap(), sigma2, w, 1.0).unwrap()
    }

    /// Scalar-loop evaluation written independently of `pair_rates`.
    fn reference_wsr(h: &[f64], n: usize, sigma2: f64, w: &[f64], p: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..n {
            let mut denom = sigma2;
            for j in 0..n {
                if i != j {
                    denom += h[i * n + j].powi(2) * p[j];
                }
            }
            total += w[i] * (1.0 + h[i * n + i].powi(2) * p[i] / denom).log2();
        }
        total
    }

    #[test]
    fn unit_snr_gives_one_bit() {
        let i = inst(vec![1.0], 1, 1.0, vec![1.0]);
        assert_eq!(pair_rates(&i, &[1.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn zero_power_zero_rate() {
        let i = inst(vec![1.0, 0.3, 0.2, 1.0], 2, 1e-3, vec![1.0; 2]);
        assert_eq!(pair_rates(&i, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn symmetric_pair_low_noise() {
        let sigma2 = 1e-12;
        let i = inst(vec![1.0; 4], 2, sigma2, vec![1.0; 2]);
        let r = pair_rates(&i, &[1.0, 1.0]).unwrap();
        let expected = (1.0 + 1.0 / (sigma2 + 1.0)).log2();
        for c in r {
            assert!((c - expected).abs() < 1e-15);
            assert!((c - 1.0).abs() < 1e-11);
        }
    }

    #[test]
    fn weighting() {
        // Rates (1, 5): pair 0 at unit SNR, pair 1 at SNR 31, no coupling.
        let i = inst(vec![1.0, 0.0, 0.0, 31f64.sqrt()], 2, 1.0, vec![2.0, 0.0]);
        let r = pair_rates(&i, &[1.0, 1.0]).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-15 && (r[1] - 5.0).abs() < 1e-14);
        assert!((weighted_sum_rate(&i, &[1.0, 1.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn wsr_matches_scalar_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for n in 1..8 {
            let h: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.01..2.0)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
            let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let i = inst(h.clone(), n, 0.05, w.clone());
            let ours = weighted_sum_rate(&i, &p).unwrap();
            let reference = reference_wsr(&h, n, 0.05, &w, &p);
            assert!((ours - reference).abs() <= 1e-12 * reference.abs().max(1.0));
        }
    }

    #[test]
    fn allocation_box_checked() {
        assert!(PowerAllocation::new(vec![0.0, 1.0], 1.0).is_ok());
        assert!(matches!(
            PowerAllocation::new(vec![0.5, 1.5], 1.0),
            Err(Error::Infeasible { index: 1, .. })
        ));
        assert!(PowerAllocation::new(vec![-0.1], 1.0).is_err());
        assert!(PowerAllocation::new(vec![f64::NAN], 1.0).is_err());
    }

    #[test]
    fn discrete_homophily_hand_cases() {
        let pair = Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(homophily_discrete(&pair, &['a', 'a']).unwrap(), 1.0);
        assert_eq!(homophily_discrete(&pair, &['a', 'b']).unwrap(), 0.0);

        // Star: center 0 labelled A, leaves A, A, B.
        let star = Matrix::from_fn(4, 4, |i, j| ((i == 0) ^ (j == 0)) as u8 as f64);
        let h = homophily_discrete(&star, &['A', 'A', 'A', 'B']).unwrap();
        let expected = (2.0 / 3.0 + 1.0 + 1.0 + 0.0) / 4.0;
        assert!((h - expected).abs() < 1e-15);

        assert!(homophily_discrete(&Matrix::zeros(3, 3), &[1, 2, 3]).is_err());
    }

    #[test]
    fn weighted_homophily_hand_cases() {
        let e = Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(homophily_weighted(&e, &[0.3, 0.3]).unwrap().h, 1.0);
        assert_eq!(homophily_weighted(&e, &[0.0, 1.0]).unwrap().h, 0.0);

        let e = Matrix::from_fn(3, 3, |i, j| if i == j { 5.0 } else { 0.7 });
        assert_eq!(homophily_weighted(&e, &[0.2; 3]).unwrap().h, 1.0);
    }

    #[test]
    fn weighted_homophily_reports_isolated_nodes() {
        let mut e = Matrix::zeros(3, 3);
        e[(0, 1)] = 1.0;
        e[(1, 0)] = 1.0;
        let r = homophily_weighted(&e, &[1.0, 1.0, 0.0]).unwrap();
        assert_eq!(r.excluded, vec![2]);
        assert_eq!(r.per_node[2], None);
        assert_eq!(r.h, 1.0);
        assert!(homophily_weighted(&Matrix::zeros(2, 2), &[0.0, 1.0]).is_err());
        assert!(homophily_weighted(&e, &[0.0, 1.5, 0.0]).is_err());
    }

    #[test]
    fn weighted_reduces_to_discrete_for_binary_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let n = rng.gen_range(2..9);
            let adj = Matrix::from_fn(n, n, |_, _| rng.gen_bool(0.5) as u8 as f64);
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            let x: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
            match (homophily_discrete(&adj, &labels), homophily_weighted(&adj, &x)) {
                (Ok(a), Ok(b)) => assert!((a - b.h).abs() < 1e-15),
                (Err(_), Err(_)) => {}
                other => panic!("disagreement {other:?}"),
            }
        }
    }
}
