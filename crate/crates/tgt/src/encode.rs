use d2d_core::ChannelInstance;

use crate::config::FeatureTransform;
use crate::error::{Error, Result};

/// Model inputs for one channel instance on the complete graph with self
/// loops.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEncoding {
    pub n: usize,
    /// `[n, 2]`: `[h'_ii, w_i]`.
    pub node_feats: Vec<f64>,
    /// `[n, n, 2]`: `[h'_ij, h'_ji]`.
    pub edge_feats: Vec<f64>,
    /// The `max(h)` that `h` was divided by.
    pub norm_scale: f64,
}

/// Fails when `h` has no positive entry.
pub fn encode_graph(instance: &ChannelInstance, features: FeatureTransform) -> Result<GraphEncoding> {
    let n = instance.n();
    let h = instance.h();
    let scale = h.max();
    if !(scale > 0.0) {
        return Err(Error::ZeroChannel);
    }
    let norm = |i: usize, j: usize| features.apply(h[(i, j)] / scale);
    let mut node_feats = Vec::with_capacity(2 * n);
    for (i, &w) in instance.weights().iter().enumerate() {
        node_feats.push(norm(i, i));
        node_feats.push(w);
    }
    let mut edge_feats = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            edge_feats.push(norm(i, j));
            edge_feats.push(norm(j, i));
        }
    }
    Ok(GraphEncoding {
        n,
        node_feats,
        edge_feats,
        norm_scale: scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use d2d_core::Matrix;

    fn inst(values: Vec<f64>, n: usize) -> ChannelInstance {
        ChannelInstance::new(Matrix::from_vec(n, n, values).unwrap(), 1e-3, vec![1.0; n], 1.0).unwrap()
    }

    #[test]
    fn two_node_by_hand() {
        let enc = encode_graph(&inst(vec![4.0, 1.0, 2.0, 5.0], 2), FeatureTransform::Linear).unwrap();
        assert_eq!(enc.norm_scale, 5.0);
        assert_eq!(enc.node_feats, vec![0.8, 1.0, 1.0, 1.0]);
        assert_eq!(enc.edge_feats, vec![0.8, 0.8, 0.2, 0.4, 0.4, 0.2, 1.0, 1.0]);
    }

    #[test]
    fn max_entry_maps_to_one() {
        let enc = encode_graph(&inst(vec![0.3, 5.0, 1.0, 2.0], 2), FeatureTransform::Linear).unwrap();
        let max = enc.edge_feats.iter().copied().fold(0.0, f64::max);
        assert_eq!(max, 1.0);
        assert!(enc.edge_feats.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn symmetric_channel_gives_mirrored_edges() {
        let enc = encode_graph(&inst(vec![1.0, 0.3, 0.3, 0.7], 2), FeatureTransform::Linear).unwrap();
        // e_01 and e_10
        assert_eq!(enc.edge_feats[2], enc.edge_feats[5]);
        assert_eq!(enc.edge_feats[3], enc.edge_feats[4]);
    }

    #[test]
    fn empty_channel_rejected() {
        let empty = ChannelInstance::new(Matrix::zeros(0, 0), 1e-3, vec![], 1.0).unwrap();
        assert!(matches!(
            encode_graph(&empty, FeatureTransform::Linear),
            Err(Error::ZeroChannel)
        ));
    }
}
