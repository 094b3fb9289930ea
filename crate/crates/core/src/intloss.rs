//! Interaction loss: hinge penalty on predicted trajectories penetrating
//! static obstacles.
//!
//! Each supervised actor is approximated at every horizon by three costing
//! circles inscribed along its ground-truth box (radius min(w,l)/2, centers
//! offset along the predicted heading). For every circle, horizon and
//! obstacle the loss adds max(0, R − d) where d is the signed distance from
//! the circle center to the obstacle box (negative inside), normalized by
//! 1/(3·V·H). Only the predicted centroid and heading receive gradients:
//! radii, ground-truth sizes and obstacle boxes are constants, and the
//! winner-take-all slice keeps other modes and the mode logits out of the
//! graph entirely.

use crate::geom::{OrientedBox, Pose2};
use crate::scenegen::{ActorClass, Scene};
use crate::tensorad::Tensor;

/// Ground-truth static obstacles (speed below 0.2 m/s at every tick).
#[derive(Debug, Clone, Default)]
pub struct StaticObstacleSet {
    pub boxes: Vec<OrientedBox>,
    pub classes: Vec<ActorClass>,
    /// Originating track ids, for self-exclusion of supervised actors that
    /// are themselves static.
    pub ids: Vec<u32>,
}

impl StaticObstacleSet {
    pub fn from_scene(scene: &Scene) -> Self {
        let mut boxes = Vec::new();
        let mut classes = Vec::new();
        let mut ids = Vec::new();
        for a in scene.static_obstacles() {
            boxes.push(a.box_at(crate::scenegen::T0));
            classes.push(a.class);
            ids.push(a.id);
        }
        Self {
            boxes,
            classes,
            ids,
        }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// One supervised actor: the winner-take-all waypoint slice (flat [h·4],
/// actor frame), its reference pose and its ground-truth box size. A static
/// actor excludes its own obstacle entry by track id.
pub struct ActorPenalty {
    pub waypoints: Tensor,
    pub reference: Pose2,
    pub gt_width: f64,
    pub gt_length: f64,
    pub exclude_obstacle_id: Option<u32>,
}

/// Split a flat waypoint tensor into per-horizon component vectors and
/// decode them to world frame through the (constant) reference pose.
/// Returns (x, y, cos, sin) world tensors of length h.
fn decode_world_components(entry: &ActorPenalty) -> (Tensor, Tensor, Tensor, Tensor, usize) {
    let len = entry.waypoints.numel();
    assert_eq!(len % 4, 0, "waypoint slice must be h×4 long");
    let h = len / 4;
    let gather = |k: usize| {
        let idx: Vec<usize> = (0..h).map(|t| t * 4 + k).collect();
        entry.waypoints.gather(&idx)
    };
    let cx = gather(0);
    let cy = gather(1);
    let hc = gather(2);
    let hs = gather(3);
    // Normalize the heading pair on decode.
    let norm_inv = hc
        .mul(&hc)
        .add(&hs.mul(&hs))
        .add_scalar(1e-12)
        .sqrt()
        .powf(-1.0);
    let hc = hc.mul(&norm_inv);
    let hs = hs.mul(&norm_inv);
    let r = entry.reference;
    let wx = cx.scale(r.cos_h).add(&cy.scale(-r.sin_h)).add_scalar(r.x);
    let wy = cx.scale(r.sin_h).add(&cy.scale(r.cos_h)).add_scalar(r.y);
    let wc = hc.scale(r.cos_h).add(&hs.scale(-r.sin_h));
    let ws = hc.scale(r.sin_h).add(&hs.scale(r.cos_h));
    (wx, wy, wc, ws, h)
}

/// Signed distance from per-horizon points to a constant box: Euclidean
/// outside, negative depth inside, matching the plain geometry routine.
fn signed_distance_to_box(px: &Tensor, py: &Tensor, b: &OrientedBox) -> Tensor {
    let h = px.numel();
    let pose = b.pose;
    let dx0 = px.add_scalar(-pose.x);
    let dy0 = py.add_scalar(-pose.y);
    let lx = dx0.scale(pose.cos_h).add(&dy0.scale(pose.sin_h));
    let ly = dx0.scale(-pose.sin_h).add(&dy0.scale(pose.cos_h));
    let dx = lx.abs().add_scalar(-b.length * 0.5);
    let dy = ly.abs().add_scalar(-b.width * 0.5);
    let ox = dx.relu();
    let oy = dy.relu();
    let outside = ox.mul(&ox).add(&oy.mul(&oy)).sqrt();
    let inside = dx.max2(&dy).min2(&Tensor::zeros(&[h]));
    outside.add(&inside)
}

/// Eq-8 style penetration loss. Zero when there are no actors or obstacles.
/// The optional obstacle normalization divides by N as well (off by
/// default: the loss grows with obstacle count).
pub fn interaction_loss(
    entries: &[ActorPenalty],
    obstacles: &StaticObstacleSet,
    normalize_by_obstacles: bool,
) -> Tensor {
    if entries.is_empty() || obstacles.is_empty() {
        return Tensor::scalar(0.0);
    }
    let v = entries.len();
    let mut total = Tensor::scalar(0.0);
    let mut horizon = None;
    for entry in entries {
        let (wx, wy, wc, ws, h) = decode_world_components(entry);
        match horizon {
            None => horizon = Some(h),
            Some(prev) => assert_eq!(prev, h, "entries must share one horizon"),
        }
        let radius = entry.gt_width.min(entry.gt_length) * 0.5;
        let span = (entry.gt_length.max(entry.gt_width) - 2.0 * radius) * 0.5;
        // Circles run along the box's long axis: the predicted heading when
        // length dominates, its left-perpendicular otherwise.
        let along_length = entry.gt_length >= entry.gt_width;
        for offset in [-span, 0.0, span] {
            let (cx, cy) = if along_length {
                (wx.add(&wc.scale(offset)), wy.add(&ws.scale(offset)))
            } else {
                (wx.add(&ws.scale(-offset)), wy.add(&wc.scale(offset)))
            };
            for (oi, bbox) in obstacles.boxes.iter().enumerate() {
                if entry.exclude_obstacle_id.is_some()
                    && obstacles.ids.get(oi).copied() == entry.exclude_obstacle_id
                {
                    continue;
                }
                let d = signed_distance_to_box(&cx, &cy, bbox);
                let hinge = d.neg().add_scalar(radius).relu();
                total = total.add(&hinge.sum());
            }
        }
    }
    let h = horizon.unwrap() as f64;
    let mut scale = 1.0 / (3.0 * v as f64 * h);
    if normalize_by_obstacles {
        scale /= obstacles.len() as f64;
    }
    total.scale(scale)
}

/// Diagnostic for the gradient-flow contract: gradients reach only the
/// selected mode's centroid and heading, match finite differences there,
/// and vanish entirely without overlap.
#[derive(Debug, Clone)]
pub struct GradRestrictionReport {
    pub loss: f64,
    pub max_rel_err: f64,
    pub selected_grad_norm: f64,
    pub nonselected_grad_norm: f64,
    pub logit_grad_norm: f64,
    /// With penetration present, moving the actor along the negative
    /// gradient must reduce the loss (descent points away from obstacles).
    pub descent_reduces_loss: bool,
}

/// Run the restriction check on one mode of a full multimodal waypoint
/// vector laid out like a forecast ([M·h·4], mode-major).
pub fn grad_restriction_check(
    full_waypoints: &[f64],
    modes: usize,
    selected: usize,
    reference: &Pose2,
    gt_size: (f64, f64),
    obstacles: &StaticObstacleSet,
) -> GradRestrictionReport {
    let per_mode = full_waypoints.len() / modes;
    let wp = Tensor::from_vec(&[full_waypoints.len()], full_waypoints.to_vec()).requires_grad();
    let logits = Tensor::from_vec(&[modes], vec![0.0; modes]).requires_grad();
    let build = |wp: &Tensor| {
        let entry = ActorPenalty {
            waypoints: wp.slice(selected * per_mode, per_mode),
            reference: *reference,
            gt_width: gt_size.0,
            gt_length: gt_size.1,
            exclude_obstacle_id: None,
        };
        interaction_loss(&[entry], obstacles, false)
    };
    let loss_t = build(&wp);
    let loss = loss_t.item();
    loss_t.backward();
    let _ = logits.softmax(0); // logits never enter the loss graph
    let g = wp.grad().unwrap_or_else(|| vec![0.0; wp.numel()]);
    let logit_grad_norm = logits
        .grad()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
        .unwrap_or(0.0);
    let mut selected_sq = 0.0;
    let mut nonselected_sq = 0.0;
    for (i, gv) in g.iter().enumerate() {
        if i / per_mode == selected {
            selected_sq += gv * gv;
        } else {
            nonselected_sq += gv * gv;
        }
    }

    // Central finite differences over the selected slice.
    let eps = 1e-6;
    let mut max_rel_err: f64 = 0.0;
    for i in selected * per_mode..(selected + 1) * per_mode {
        let orig = wp.value_at(i);
        wp.with_data_mut(|d| d[i] = orig + eps);
        let fp = crate::tensorad::no_grad(|| build(&wp)).item();
        wp.with_data_mut(|d| d[i] = orig - eps);
        let fm = crate::tensorad::no_grad(|| build(&wp)).item();
        wp.with_data_mut(|d| d[i] = orig);
        let fd = (fp - fm) / (2.0 * eps);
        let rel = (fd - g[i]).abs() / g[i].abs().max(fd.abs()).max(1e-2);
        max_rel_err = max_rel_err.max(rel);
    }

    // Descent step along −grad on the selected slice.
    let descent_reduces_loss = if loss > 0.0 && selected_sq > 0.0 {
        let step = 1e-3 / selected_sq.sqrt();
        let snapshot: Vec<f64> = (0..wp.numel()).map(|i| wp.value_at(i)).collect();
        wp.with_data_mut(|d| {
            for (i, v) in d.iter_mut().enumerate() {
                *v -= step * g[i];
            }
        });
        let after = crate::tensorad::no_grad(|| build(&wp)).item();
        wp.set_data(&snapshot);
        after < loss
    } else {
        true
    };

    GradRestrictionReport {
        loss,
        max_rel_err,
        selected_grad_norm: selected_sq.sqrt(),
        nonselected_grad_norm: nonselected_sq.sqrt(),
        logit_grad_norm,
        descent_reduces_loss,
    }
}
