//! Random network topologies, path loss, Rayleigh fading and datasets.
//!
//! Transmitters are dropped uniformly on `[-L, L]^2` and each receiver is
//! placed at a random bearing around its transmitter with a distance in
//! `[rx_min, rx_max]`. The amplitude gain from transmitter `j` to receiver
//! `i` is `||t_j - r_i||^-2.2` times an independent Rayleigh draw.
//!
//! Every topology of a dataset owns its own ChaCha stream (`seed`, stream
//! = topology index), so generation is identical regardless of how many
//! threads build it.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Matrix, Result, DEFAULT_SIGMA2, PATHLOSS_EXPONENT};

/// Distances below this are treated as colliding devices.
pub const MIN_DISTANCE: f64 = 1e-9;

/// How the receiver distance is drawn inside `[rx_min, rx_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReceiverPlacement {
    /// Distance uniform on `[rx_min, rx_max]`.
    #[default]
    UniformRadius,
    /// Uniform over the annulus area: `r = sqrt(U (r2^2 - r1^2) + r1^2)`.
    UniformArea,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyParams {
    pub n: usize,
    pub half_width: f64,
    pub rx_min: f64,
    pub rx_max: f64,
    pub placement: ReceiverPlacement,
}

impl TopologyParams {
    /// Field `[-n, n]^2`, receivers within `[1, n/4]`.
    pub fn standard(n: usize) -> Self {
        Self {
            n,
            half_width: n as f64,
            rx_min: 1.0,
            rx_max: n as f64 / 4.0,
            placement: ReceiverPlacement::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("topology needs n >= 1".into()));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "half_width must be positive, got {}",
                self.half_width
            )));
        }
        if !(self.rx_min > 0.0 && self.rx_min <= self.rx_max && self.rx_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "receiver radii must satisfy 0 < rx_min <= rx_max, got [{}, {}]",
                self.rx_min, self.rx_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub tx: Vec<[f64; 2]>,
    pub rx: Vec<[f64; 2]>,
    pub half_width: f64,
}

impl Topology {
    pub fn n(&self) -> usize {
        self.tx.len()
    }

    /// Distance between transmitter `tx` and receiver `rx`.
    pub fn distance(&self, tx: usize, rx: usize) -> f64 {
        dist(self.tx[tx], self.rx[rx])
    }
}

#[inline]
fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn sample_topology<R: Rng + ?Sized>(params: &TopologyParams, rng: &mut R) -> Result<Topology> {
    params.validate()?;
    let l = params.half_width;
    let (r1, r2) = (params.rx_min, params.rx_max);
    let mut tx = Vec::with_capacity(params.n);
    let mut rx = Vec::with_capacity(params.n);
    for _ in 0..params.n {
        let t = [rng.gen_range(-l..=l), rng.gen_range(-l..=l)];
        let u: f64 = rng.gen();
        let radius = match params.placement {
            ReceiverPlacement::UniformRadius => r1 + u * (r2 - r1),
            ReceiverPlacement::UniformArea => (u * (r2 * r2 - r1 * r1) + r1 * r1).sqrt(),
        };
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let r = place_receiver(t, radius, theta, r1, r2);
        tx.push(t);
        rx.push(r);
    }
    Ok(Topology {
        tx,
        rx,
        half_width: l,
    })
}

/// Places a receiver at `radius` along `theta` from `t`, nudging the offset
/// so that the distance recomputed from stored coordinates stays inside
/// `[r1, r2]` despite rounding in `t + offset`.
fn place_receiver(t: [f64; 2], radius: f64, theta: f64, r1: f64, r2: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    let mut radius = radius.clamp(r1, r2);
    let mut r = [t[0] + radius * c, t[1] + radius * s];
    for _ in 0..64 {
        let d = dist(t, r);
        if d < r1 {
            radius += (r1 - d).max(r1 * f64::EPSILON);
        } else if d > r2 {
            radius -= (d - r2).max(r2 * f64::EPSILON);
        } else {
            break;
        }
        r = [t[0] + radius * c, t[1] + radius * s];
    }
    r
}

/// Path-loss matrix with `out[(i, j)] = ||t_j - r_i||^-2.2`.
pub fn pathloss_matrix(topology: &Topology) -> Result<Matrix> {
    let n = topology.n();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let d = topology.distance(j, i);
            if !(d >= MIN_DISTANCE) {
                return Err(Error::DegenerateGeometry {
                    tx: j,
                    rx: i,
                    distance: d,
                });
            }
            out[(i, j)] = d.powf(-PATHLOSS_EXPONENT);
        }
    }
    Ok(out)
}

/// `n x n` i.i.d. Rayleigh(`scale`) amplitudes, `scale * sqrt(-2 ln U)`.
pub fn sample_fading<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> Result<Matrix> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "fading scale must be positive, got {scale}"
        )));
    }
    let data = (0..n * n).map(|_| scale * rayleigh_unit(rng)).collect();
    Ok(Matrix::from_vec(n, n, data).expect("n*n buffer"))
}

#[inline]
fn rayleigh_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // gen() is in [0, 1); flip to (0, 1] so ln never sees zero.
    let u = 1.0 - rng.gen::<f64>();
    (-2.0 * u.ln()).sqrt()
}

/// One realization of the interference channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelInstance {
    h: Matrix,
    sigma2: f64,
    weights: Vec<f64>,
    pmax: f64,
}

impl ChannelInstance {
    pub fn new(h: Matrix, sigma2: f64, weights: Vec<f64>, pmax: f64) -> Result<Self> {
        if !h.is_square() {
            return Err(Error::ShapeMismatch {
                expected: "square gain matrix".into(),
                got: format!("{}x{}", h.rows(), h.cols()),
            });
        }
        let n = h.rows();
        if weights.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n} weights"),
                got: weights.len().to_string(),
            });
        }
        if let Some(v) = h.as_slice().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidInstance(format!(
                "gain entries must be finite and >= 0, found {v}"
            )));
        }
        if let Some(i) = (0..n).find(|&i| h[(i, i)] <= 0.0) {
            return Err(Error::InvalidInstance(format!(
                "direct gain h[{i}][{i}] must be positive"
            )));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidInstance(format!("sigma2 must be positive, got {sigma2}")));
        }
        if !(pmax > 0.0 && pmax.is_finite()) {
            return Err(Error::InvalidInstance(format!("pmax must be positive, got {pmax}")));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInstance("weights must be finite and >= 0".into()));
        }
        Ok(Self {
            h,
            sigma2,
            weights,
            pmax,
        })
    }

    pub fn n(&self) -> usize {
        self.h.rows()
    }

    /// Amplitude gain matrix (row = receiver, column = transmitter).
    pub fn h(&self) -> &Matrix {
        &self.h
    }

    /// Power gain `|h_ij|^2`.
    #[inline]
    pub fn power_gain(&self, i: usize, j: usize) -> f64 {
        let h = self.h[(i, j)];
        h * h
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn pmax(&self) -> f64 {
        self.pmax
    }

    pub fn with_sigma2(&self, sigma2: f64) -> Result<Self> {
        Self::new(self.h.clone(), sigma2, self.weights.clone(), self.pmax)
    }

    /// Relabels pairs: pair `a` of the result is pair `perm[a]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n())?;
        Self::new(
            self.h.permute_symmetric(perm),
            self.sigma2,
            perm.iter().map(|&k| self.weights[k]).collect(),
            self.pmax,
        )
    }

    /// Multiplies every gain by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.h.map(|x| x * factor), self.sigma2, self.weights.clone(), self.pmax)
    }

    /// SHA-256 of the gain matrix bytes, used to detect overlap between datasets.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update((self.n() as u64).to_le_bytes());
        for v in self.h.as_slice() {
            hasher.update(v.to_le_bytes());
        }
        hasher.finalize().into()
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n || perm.iter().any(|&k| k >= n || std::mem::replace(&mut seen[k], true)) {
        return Err(Error::InvalidParameter(format!(
            "{perm:?} is not a permutation of 0..{n}"
        )));
    }
    Ok(())
}

/// `H = pathloss(topology) ⊙ fading`.
pub fn build_channel(
    topology: &Topology,
    fading: &Matrix,
    sigma2: f64,
    weights: Vec<f64>,
    pmax: f64,
) -> Result<ChannelInstance> {
    let pl = pathloss_matrix(topology)?;
    let h = pl.hadamard(fading).ok_or_else(|| Error::ShapeMismatch {
        expected: format!("{0}x{0} fading", topology.n()),
        got: format!("{}x{}", fading.rows(), fading.cols()),
    })?;
    ChannelInstance::new(h, sigma2, weights, pmax)
}

/// Channel-generation parameters shared by all topologies of a dataset.
///
/// `half_width` and `rx_max` default to `n` and `n / 4` when unset, so one
/// parameter set serves datasets that mix network sizes. The default
/// `rx_max` never drops below `rx_min` (relevant for `n < 4`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub half_width: Option<f64>,
    pub rx_min: f64,
    pub rx_max: Option<f64>,
    pub placement: ReceiverPlacement,
    pub fading_scale: f64,
    pub sigma2: f64,
    pub pmax: f64,
    pub weight: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            half_width: None,
            rx_min: 1.0,
            rx_max: None,
            placement: ReceiverPlacement::default(),
            fading_scale: 1.0,
            sigma2: DEFAULT_SIGMA2,
            pmax: 1.0,
            weight: 1.0,
        }
    }
}

impl ChannelParams {
    pub fn topology_params(&self, n: usize) -> TopologyParams {
        TopologyParams {
            n,
            half_width: self.half_width.unwrap_or(n as f64),
            rx_min: self.rx_min,
            rx_max: self.rx_max.unwrap_or((n as f64 / 4.0).max(self.rx_min)),
            placement: self.placement,
        }
    }

    pub fn instance<R: Rng + ?Sized>(&self, topology: &Topology, rng: &mut R) -> Result<ChannelInstance> {
        let n = topology.n();
        let fading = sample_fading(n, self.fading_scale, rng)?;
        build_channel(topology, &fading, self.sigma2, vec![self.weight; n], self.pmax)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_list: Vec<usize>,
    pub topologies: usize,
    pub fades_per_topology: usize,
    #[serde(default)]
    pub channel: ChannelParams,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn single(n: usize, topologies: usize, fades_per_topology: usize, seed: u64) -> Self {
        Self {
            n_list: vec![n],
            topologies,
            fades_per_topology,
            channel: ChannelParams::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<ChannelInstance>,
    pub topology_ids: Vec<u32>,
    pub seed: u64,
}

impl Dataset {
    pub fn empty(seed: u64) -> Self {
        Self {
            instances: Vec::new(),
            topology_ids: Vec::new(),
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ChannelInstance> {
        self.instances.iter()
    }

    /// Number of distinct topology ids.
    pub fn topology_count(&self) -> usize {
        let mut ids = self.topology_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Splits off the last `fraction` of topologies (at least one when the
    /// dataset has two or more) as a held-out set.
    pub fn split_topologies(&self, fraction: f64) -> (Dataset, Dataset) {
        let mut ids = self.topology_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        let held = if ids.len() < 2 || fraction <= 0.0 {
            0
        } else {
            ((ids.len() as f64 * fraction).ceil() as usize).clamp(1, ids.len() - 1)
        };
        let cut = ids.len() - held;
        let held_ids = &ids[cut..];
        let mut keep = Dataset::empty(self.seed);
        let mut out = Dataset::empty(self.seed);
        for (inst, &id) in self.instances.iter().zip(&self.topology_ids) {
            let target = if held_ids.binary_search(&id).is_ok() {
                &mut out
            } else {
                &mut keep
            };
            target.instances.push(inst.clone());
            target.topology_ids.push(id);
        }
        (keep, out)
    }

    /// Hex SHA-256 over every instance fingerprint, in order.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        for (inst, id) in self.instances.iter().zip(&self.topology_ids) {
            hasher.update(id.to_le_bytes());
            hasher.update(inst.fingerprint());
            hasher.update(inst.sigma2.to_le_bytes());
            hasher.update(inst.pmax.to_le_bytes());
            for w in &inst.weights {
                hasher.update(w.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    /// True when no gain matrix of `self` also appears in `other`.
    pub fn is_disjoint_from(&self, other: &Dataset) -> bool {
        let mine: std::collections::HashSet<[u8; 32]> =
            self.instances.iter().map(ChannelInstance::fingerprint).collect();
        other.instances.iter().all(|inst| !mine.contains(&inst.fingerprint()))
    }
}

/// Independent RNG stream for topology `index` under `seed`.
pub fn topology_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Generates `topologies * fades_per_topology` instances. Network sizes are
/// assigned round-robin from `n_list`; instances are grouped by topology.
pub fn gen_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    if spec.n_list.is_empty() || spec.n_list.contains(&0) {
        return Err(Error::InvalidParameter("n_list must hold sizes >= 1".into()));
    }
    if spec.topologies == 0 || spec.fades_per_topology == 0 {
        return Err(Error::InvalidParameter(
            "topologies and fades_per_topology must be >= 1".into(),
        ));
    }
    let groups: Vec<Vec<ChannelInstance>> = (0..spec.topologies)
        .into_par_iter()
        .map(|k| {
            let n = spec.n_list[k % spec.n_list.len()];
            let mut rng = topology_rng(spec.seed, k as u64);
            let topo = sample_topology(&spec.channel.topology_params(n), &mut rng)?;
            (0..spec.fades_per_topology)
                .map(|_| spec.channel.instance(&topo, &mut rng))
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut ds = Dataset::empty(spec.seed);
    for (k, group) in groups.into_iter().enumerate() {
        ds.topology_ids.extend(std::iter::repeat(k as u32).take(group.len()));
        ds.instances.extend(group);
    }
    Ok(ds)
}

/// Draws `fades` channel realizations on one fixed topology. The topology
/// comes from stream 0 of `seed`, fades from stream 1.
pub fn gen_fixed_topology(n: usize, fades: usize, channel: &ChannelParams, seed: u64) -> Result<Dataset> {
    let mut topo_rng = topology_rng(seed, 0);
    let topo = sample_topology(&channel.topology_params(n), &mut topo_rng)?;
    let mut rng = topology_rng(seed, 1);
    let instances = (0..fades)
        .map(|_| channel.instance(&topo, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        topology_ids: vec![0; instances.len()],
        instances,
        seed,
    })
}
