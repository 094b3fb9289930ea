//! Explicit interaction stage: synchronous message passing over the fully
//! connected graph of detected actors.
//!
//! Node attributes start from the per-actor feature vectors, messages
//! concatenate receiver attributes, receiver-frame relative geometry, sender
//! attributes and sender-frame relative geometry through a two-layer MLP,
//! incoming messages max-pool elementwise, and a GRU updates each node. All
//! V² messages within an iteration are independent; iterations are barriers.

use crate::geom::{into_frame, Pose2};
use crate::icm::{Forecast, PredictHead};
use crate::tensorad::nn::{BnMode, GruCell, Mlp2, ParamSet};
use crate::tensorad::Tensor;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GnnAblation {
    None,
    /// Messages carry only node attributes.
    OnlyAttributes,
    /// Messages carry only relative geometry.
    OnlyRelative,
    /// No edges at all: nodes never exchange messages.
    EdgesOff,
}

impl std::str::FromStr for GnnAblation {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> crate::error::Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "only_attributes" => Ok(Self::OnlyAttributes),
            "only_relative" => Ok(Self::OnlyRelative),
            "edges_off" => Ok(Self::EdgesOff),
            other => Err(crate::error::Error::Config(format!(
                "unknown gnn ablation '{other}'"
            ))),
        }
    }
}

/// Relative geometry of `b` seen from `a`: position and heading of the other
/// actor in the observer's frame.
pub fn relative_geometry(a: &Pose2, b: &Pose2) -> [f64; 4] {
    let (x, y) = into_frame((b.x, b.y), a);
    let rel_cos = a.cos_h * b.cos_h + a.sin_h * b.sin_h;
    let rel_sin = a.cos_h * b.sin_h - a.sin_h * b.cos_h;
    [x, y, rel_cos, rel_sin]
}

pub struct GnnStage {
    init: Mlp2,
    rel: Mlp2,
    edge: Mlp2,
    gru: GruCell,
    pub head: PredictHead,
    pub iterations: usize,
    pub ablation: GnnAblation,
    pub dim: usize,
}

impl GnnStage {
    pub fn new(
        rng: &mut ChaCha8Rng,
        feature_dim: usize,
        dim: usize,
        iterations: usize,
        ablation: GnnAblation,
    ) -> Self {
        assert!(
            (1..=2).contains(&iterations),
            "gnn iterations must be 1 or 2, got {iterations}"
        );
        let edge_in = match ablation {
            GnnAblation::None | GnnAblation::EdgesOff => 2 * dim + 2 * dim,
            GnnAblation::OnlyAttributes => 2 * dim,
            GnnAblation::OnlyRelative => 2 * dim,
        };
        Self {
            init: Mlp2::new(rng, feature_dim, dim, dim),
            rel: Mlp2::new(rng, 4, dim, dim),
            edge: Mlp2::new(rng, edge_in, edge_in, dim),
            gru: GruCell::new(rng, dim, dim),
            head: PredictHead::new(rng, dim),
            iterations,
            ablation,
            dim,
        }
    }

    /// Initialize node attributes from per-actor feature vectors.
    pub fn init_nodes(&self, features: &[Tensor]) -> Vec<Tensor> {
        features.iter().map(|f| self.init.forward(f)).collect()
    }

    /// One directed message along the edge j→i: the ordered concatenation
    /// [n_i, rel_{j→i}, n_j, rel_{i→j}] through the edge MLP.
    pub fn message(
        &self,
        n_i: &Tensor,
        n_j: &Tensor,
        pose_i: &Pose2,
        pose_j: &Pose2,
    ) -> Tensor {
        let input = match self.ablation {
            GnnAblation::None | GnnAblation::EdgesOff => {
                let rel_ji = self.embed_rel(pose_i, pose_j);
                let rel_ij = self.embed_rel(pose_j, pose_i);
                Tensor::concat(&[n_i, &rel_ji, n_j, &rel_ij])
            }
            GnnAblation::OnlyAttributes => Tensor::concat(&[n_i, n_j]),
            GnnAblation::OnlyRelative => {
                let rel_ji = self.embed_rel(pose_i, pose_j);
                let rel_ij = self.embed_rel(pose_j, pose_i);
                Tensor::concat(&[&rel_ji, &rel_ij])
            }
        };
        self.edge.forward(&input)
    }

    fn embed_rel(&self, observer: &Pose2, other: &Pose2) -> Tensor {
        let geom = relative_geometry(observer, other);
        self.rel.forward(&Tensor::from_vec(&[4], geom.to_vec()))
    }

    /// Max-pool incoming messages and update every node with the GRU,
    /// synchronously. A single node pools the zero vector.
    pub fn aggregate_and_update(&self, nodes: &[Tensor], poses: &[Pose2]) -> Vec<Tensor> {
        let v = nodes.len();
        (0..v)
            .map(|i| {
                let pooled = if v == 1 {
                    Tensor::zeros(&[self.dim])
                } else {
                    let messages: Vec<Tensor> = (0..v)
                        .filter(|&j| j != i)
                        .map(|j| self.message(&nodes[i], &nodes[j], &poses[i], &poses[j]))
                        .collect();
                    Tensor::max_over_set(&messages)
                };
                self.gru.forward(&nodes[i], &pooled)
            })
            .collect()
    }

    /// Full stage: init, K message rounds (skipped entirely with edges cut),
    /// prediction heads. The `_mode` argument keeps the call-shape uniform
    /// with the convolutional stage; the graph has no batchnorm.
    pub fn run(&self, features: &[Tensor], poses: &[Pose2], _mode: BnMode) -> Vec<Forecast> {
        if features.is_empty() {
            return Vec::new();
        }
        let mut nodes = self.init_nodes(features);
        if self.ablation != GnnAblation::EdgesOff {
            for _ in 0..self.iterations {
                nodes = self.aggregate_and_update(&nodes, poses);
            }
        }
        nodes.iter().map(|n| self.head.forward(n)).collect()
    }

    pub fn register(&self, set: &mut ParamSet) {
        self.init.register("gnn.init", set);
        self.rel.register("gnn.rel", set);
        self.edge.register("gnn.edge", set);
        self.gru.register("gnn.gru", set);
        self.head.register("gnn.head", set);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn stage(dim: usize, ablation: GnnAblation, seed: u64) -> GnnStage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GnnStage::new(&mut rng, dim, dim, 1, ablation)
    }

    fn rand_features(n: usize, dim: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Tensor::from_vec(&[dim], (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            })
            .collect()
    }

    fn rand_poses(n: usize, seed: u64) -> Vec<Pose2> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Pose2::new(
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(0.0..6.28),
                )
            })
            .collect()
    }

    #[test]
    fn init_identical_inputs_identical_nodes() {
        let s = stage(6, GnnAblation::None, 1);
        let f = Tensor::full(&[6], 0.37);
        let nodes = s.init_nodes(&[f.clone(), f.clone(), f]);
        let a = nodes[0].to_vec();
        for n in &nodes {
            assert_eq!(n.to_vec(), a);
            assert_eq!(n.shape(), &[6]);
        }
    }

    #[test]
    fn empty_graph_no_ops() {
        let s = stage(4, GnnAblation::None, 2);
        let out = s.run(&[], &[], BnMode::Eval);
        assert!(out.is_empty());
    }

    #[test]
    fn single_node_updates_on_zero_input() {
        let s = stage(4, GnnAblation::None, 3);
        let f = rand_features(1, 4, 10);
        let poses = rand_poses(1, 11);
        let nodes = s.init_nodes(&f);
        let updated = s.aggregate_and_update(&nodes, &poses);
        // Equals a GRU step with explicitly zero input.
        let want = s.gru.forward(&nodes[0], &Tensor::zeros(&[4]));
        assert_eq!(updated[0].to_vec(), want.to_vec());
    }

    #[test]
    fn coincident_poses_relative_identity() {
        let p = Pose2::new(3.0, -2.0, 1.1);
        let rel = relative_geometry(&p, &p);
        assert!((rel[0]).abs() < 1e-12);
        assert!((rel[1]).abs() < 1e-12);
        assert!((rel[2] - 1.0).abs() < 1e-12);
        assert!((rel[3]).abs() < 1e-12);
    }

    #[test]
    fn message_is_direction_sensitive() {
        let s = stage(5, GnnAblation::None, 4);
        let f = rand_features(2, 5, 20);
        let nodes = s.init_nodes(&f);
        let poses = rand_poses(2, 21);
        let ij = s.message(&nodes[0], &nodes[1], &poses[0], &poses[1]).to_vec();
        let ji = s.message(&nodes[1], &nodes[0], &poses[1], &poses[0]).to_vec();
        let diff: f64 = ij.iter().zip(&ji).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-6, "swapping sender and receiver must change the message");
    }

    #[test]
    fn message_matches_hand_unrolled_mlp() {
        let s = stage(3, GnnAblation::None, 5);
        let f = rand_features(2, 3, 30);
        let nodes = s.init_nodes(&f);
        let poses = rand_poses(2, 31);
        let got = s.message(&nodes[0], &nodes[1], &poses[0], &poses[1]).to_vec();

        // Independent evaluation with plain arithmetic.
        let mlp = |w1: &[f64], b1: &[f64], w2: &[f64], b2: &[f64], x: &[f64]| -> Vec<f64> {
            let h: Vec<f64> = (0..b1.len())
                .map(|i| {
                    let s: f64 = (0..x.len()).map(|j| w1[i * x.len() + j] * x[j]).sum();
                    (s + b1[i]).max(0.0)
                })
                .collect();
            (0..b2.len())
                .map(|i| {
                    let s: f64 = (0..h.len()).map(|j| w2[i * h.len() + j] * h[j]).sum();
                    s + b2[i]
                })
                .collect()
        };
        let rel_f = |obs: &Pose2, oth: &Pose2| -> Vec<f64> {
            mlp(
                &s.rel.l1.weight.to_vec(),
                &s.rel.l1.bias.to_vec(),
                &s.rel.l2.weight.to_vec(),
                &s.rel.l2.bias.to_vec(),
                &relative_geometry(obs, oth),
            )
        };
        let mut input = nodes[0].to_vec();
        input.extend(rel_f(&poses[0], &poses[1]));
        input.extend(nodes[1].to_vec());
        input.extend(rel_f(&poses[1], &poses[0]));
        let want = mlp(
            &s.edge.l1.weight.to_vec(),
            &s.edge.l1.bias.to_vec(),
            &s.edge.l2.weight.to_vec(),
            &s.edge.l2.bias.to_vec(),
            &input,
        );
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn pooling_elementwise_max() {
        let a = Tensor::from_vec(&[2], vec![1.0, 2.0]);
        let b = Tensor::from_vec(&[2], vec![3.0, 0.0]);
        let m = Tensor::max_over_set(&[a, b]);
        assert_eq!(m.to_vec(), vec![3.0, 2.0]);
    }

    #[test]
    fn permutation_equivariance_exact() {
        let s = stage(6, GnnAblation::None, 6);
        let f = rand_features(4, 6, 40);
        let poses = rand_poses(4, 41);
        let out = s.run(&f, &poses, BnMode::Eval);
        let perm = [2usize, 0, 3, 1];
        let f_p: Vec<Tensor> = perm.iter().map(|&i| f[i].clone()).collect();
        let poses_p: Vec<Pose2> = perm.iter().map(|&i| poses[i]).collect();
        let out_p = s.run(&f_p, &poses_p, BnMode::Eval);
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(
                out[i].waypoints.to_vec(),
                out_p[k].waypoints.to_vec(),
                "relabeling actors must permute outputs exactly"
            );
            assert_eq!(out[i].mode_probs.to_vec(), out_p[k].mode_probs.to_vec());
        }
    }

    #[test]
    fn translation_invariance() {
        let s = stage(5, GnnAblation::None, 7);
        let f = rand_features(3, 5, 50);
        let poses = rand_poses(3, 51);
        let out = s.run(&f, &poses, BnMode::Eval);
        let shifted: Vec<Pose2> = poses
            .iter()
            .map(|p| Pose2 {
                x: p.x + 102.5,
                y: p.y - 48.75,
                ..*p
            })
            .collect();
        let out_s = s.run(&f, &shifted, BnMode::Eval);
        for (a, b) in out.iter().zip(&out_s) {
            for (x, y) in a.waypoints.to_vec().iter().zip(b.waypoints.to_vec()) {
                assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn zero_edge_weights_reduce_to_gru_on_zero() {
        let s = stage(4, GnnAblation::None, 8);
        for w in [&s.edge.l1.weight, &s.edge.l1.bias, &s.edge.l2.weight, &s.edge.l2.bias] {
            w.set_data(&vec![0.0; w.numel()]);
        }
        let f = rand_features(3, 4, 60);
        let poses = rand_poses(3, 61);
        let nodes = s.init_nodes(&f);
        let updated = s.aggregate_and_update(&nodes, &poses);
        for (n, u) in nodes.iter().zip(&updated) {
            let want = s.gru.forward(n, &Tensor::zeros(&[4]));
            for (a, b) in u.to_vec().iter().zip(want.to_vec()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn edges_off_equals_init_plus_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = GnnStage::new(&mut rng, 4, 4, 1, GnnAblation::EdgesOff);
        let f = rand_features(3, 4, 70);
        let poses = rand_poses(3, 71);
        let out = s.run(&f, &poses, BnMode::Eval);
        for (feat, o) in f.iter().zip(&out) {
            let want = s.head.forward(&s.init.forward(feat));
            assert_eq!(o.waypoints.to_vec(), want.waypoints.to_vec());
        }
    }
}
