//! Interaction convolutional module: actor-centric interaction region,
//! rotated-RoI bilinear crop, ICNN aggregation to a per-actor vector, and
//! the multimodal prediction head with its loss.
//!
//! The interaction region is a square of side `size_m` around the actor,
//! split front/back by the configured ratio (5:1 by default: most of the
//! region lies ahead). With `in_actor_frame` the crop lattice rotates with
//! the actor, removing the rotational variance of the grid; otherwise it
//! stays axis-aligned with the ADV frame. A zero-size region degenerates to
//! the single bilinear sample at the actor centroid.

use crate::backbone::FeatureMap;
use crate::error::{Error, Result};
use crate::geom::{into_frame, Pose2};
use crate::scenegen::FUTURE_TICKS;
use crate::tensorad::nn::{BnMode, ConvB, Linear, ParamSet, ResB};
use crate::tensorad::Tensor;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Forecast modes per actor.
pub const MODES: usize = 3;
/// Forecast horizons (0.1 s ticks to 4.0 s).
pub const HORIZON: usize = FUTURE_TICKS;
/// Values per waypoint: (c_x, c_y, cos θ, sin θ).
pub const WAYPOINT_DIMS: usize = 4;

/// Interaction-region geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrSpec {
    /// Square side length in meters. Zero collapses to a point sample.
    pub size_m: f64,
    /// Fraction of the square ahead of the actor (r:1 ratio ⇒ r/(r+1)).
    pub front_fraction: f64,
    /// Rotate the crop lattice into the actor frame.
    pub in_actor_frame: bool,
    /// Lattice cells per side.
    pub crop_grid: usize,
}

impl IrSpec {
    /// Default grid mapping: 0.8 cells per meter of region side, the same
    /// ratio as the reference sizes (80 m → 64, 40 m → 32, 5 m → 4).
    pub fn new(size_m: f64, front_fraction: f64, in_actor_frame: bool) -> Self {
        let crop_grid = if size_m <= 0.0 {
            1
        } else {
            ((0.8 * size_m).round() as usize).max(1)
        };
        Self {
            size_m,
            front_fraction,
            in_actor_frame,
            crop_grid,
        }
    }

    /// Parse a "front:back" ratio such as "5:1".
    pub fn parse_ratio(s: &str) -> Result<f64> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 2 {
            return Err(Error::Config(format!("bad front-to-back ratio '{s}'")));
        }
        let f: f64 = parts[0]
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad ratio component in '{s}'")))?;
        let b: f64 = parts[1]
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad ratio component in '{s}'")))?;
        if f < 0.0 || b < 0.0 || f + b <= 0.0 {
            return Err(Error::Config(format!("ratio '{s}' must be non-negative")));
        }
        Ok(f / (f + b))
    }
}

/// Sample a G×G lattice over the interaction region of `actor_pose` from the
/// feature map. Rows run across the region (lateral), columns along it
/// (longitudinal). The pose is treated as a constant: no gradient flows into
/// the crop coordinates.
pub fn crop_rroi(fm: &FeatureMap, actor_pose: &Pose2, spec: &IrSpec) -> Tensor {
    let g = spec.crop_grid;
    assert!(g >= 1, "crop grid must be positive when the region has area");
    let c = fm.tensor.shape()[0];
    let size = spec.size_m;
    let back = -size * (1.0 - spec.front_fraction);
    let mut pts = Vec::with_capacity(g * g * 2);
    for gi in 0..g {
        // Lateral offset, centered.
        let v = if size == 0.0 {
            0.0
        } else {
            -size * 0.5 + (gi as f64 + 0.5) * size / g as f64
        };
        for gj in 0..g {
            let u = if size == 0.0 {
                0.0
            } else {
                back + (gj as f64 + 0.5) * size / g as f64
            };
            let world = if spec.in_actor_frame {
                actor_pose.from_frame((u, v))
            } else {
                (actor_pose.x + u, actor_pose.y + v)
            };
            let (row, col) = fm.geom.world_to_cell(world);
            pts.push(row);
            pts.push(col);
        }
    }
    let points = Tensor::from_vec(&[g * g, 2], pts);
    fm.tensor.bilinear_sample(&points).reshape(&[c, g, g])
}

/// ICNN stride schedule: the trailing ⌈log₂ G⌉ of the six ConvBs run at
/// stride 2 so the crop reduces to 1×1.
pub fn stride_schedule(crop_grid: usize) -> [usize; 6] {
    let n_strided = if crop_grid <= 1 {
        0
    } else {
        (crop_grid as f64).log2().ceil() as usize
    };
    assert!(
        n_strided <= 6,
        "crop grid {crop_grid} needs more than six stride-2 blocks"
    );
    let mut s = [1usize; 6];
    for v in s.iter_mut().skip(6 - n_strided) {
        *v = 2;
    }
    s
}

/// Spatial extent after the schedule (1 for every supported grid).
pub fn reduced_extent(crop_grid: usize) -> usize {
    let mut n = crop_grid;
    for s in stride_schedule(crop_grid) {
        if s == 2 {
            n = n.div_ceil(2);
        }
    }
    n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IcnnDesign {
    A,
    B,
    C,
}

impl std::str::FromStr for IcnnDesign {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(Self::A),
            "b" => Ok(Self::B),
            "c" => Ok(Self::C),
            other => Err(Error::Config(format!("unknown icnn design '{other}'"))),
        }
    }
}

/// Six ConvBs and one ResB reducing a crop to a per-actor feature vector.
/// The designs differ only in where the residual block sits: (a) after the
/// ConvB stack, (b) between the third and fourth ConvB, (c) before it.
pub struct Icnn {
    convs: Vec<ConvB>,
    res: ResB,
    design: IcnnDesign,
    pub crop_grid: usize,
    pub channels: usize,
}

impl Icnn {
    pub fn new(
        rng: &mut ChaCha8Rng,
        channels: usize,
        crop_grid: usize,
        design: IcnnDesign,
    ) -> Self {
        let convs = stride_schedule(crop_grid)
            .iter()
            .map(|&s| ConvB::new(rng, channels, channels, 3, s))
            .collect();
        Self {
            convs,
            res: ResB::new(rng, channels),
            design,
            crop_grid,
            channels,
        }
    }

    pub fn forward(&self, crop: &Tensor, mode: BnMode) -> Tensor {
        assert_eq!(
            crop.shape(),
            &[self.channels, self.crop_grid, self.crop_grid],
            "icnn expects [C,G,G] crops"
        );
        let mut x = crop.clone();
        let res_at = match self.design {
            IcnnDesign::A => 6,
            IcnnDesign::B => 3,
            IcnnDesign::C => 0,
        };
        for (i, conv) in self.convs.iter().enumerate() {
            if i == res_at {
                x = self.res.forward(&x, mode);
            }
            x = conv.forward(&x, mode);
        }
        if res_at == 6 {
            x = self.res.forward(&x, mode);
        }
        let c = self.channels;
        debug_assert_eq!(x.shape()[1], 1, "icnn must reduce to 1x1");
        x.reshape(&[c])
    }

    pub fn register(&self, prefix: &str, set: &mut ParamSet) {
        for (i, conv) in self.convs.iter().enumerate() {
            conv.register(&format!("{prefix}.conv{i}"), set);
        }
        self.res.register(&format!("{prefix}.res"), set);
    }
}

/// Multimodal forecast in the actor frame: mode probabilities plus
/// M × H × (c_x, c_y, cos θ, sin θ) waypoints.
pub struct Forecast {
    pub mode_logits: Tensor,
    pub mode_probs: Tensor,
    /// Flat [M·H·4], mode-major.
    pub waypoints: Tensor,
}

impl Forecast {
    pub fn waypoint_slice(&self, mode: usize) -> Tensor {
        self.waypoints.slice(mode * HORIZON * WAYPOINT_DIMS, HORIZON * WAYPOINT_DIMS)
    }

    /// Plain-value waypoints of one mode: H × (cx, cy, cos, sin),
    /// with the heading pair normalized.
    pub fn decode_mode(&self, mode: usize) -> Vec<[f64; 4]> {
        let v = self.waypoints.to_vec();
        (0..HORIZON)
            .map(|t| {
                let base = (mode * HORIZON + t) * WAYPOINT_DIMS;
                let mut p = Pose2::from_parts(v[base], v[base + 1], v[base + 2], v[base + 3]);
                p.normalize();
                [p.x, p.y, p.cos_h, p.sin_h]
            })
            .collect()
    }

    pub fn most_probable_mode(&self) -> usize {
        let p = self.mode_probs.to_vec();
        let mut best = 0;
        for m in 1..MODES {
            if p[m] > p[best] {
                best = m;
            }
        }
        best
    }
}

/// Raw waypoint-head outputs are scaled by this factor: trajectory extents
/// reach tens of meters, and the gain keeps Adam's per-step motion from
/// dwarfing the regression range at desk-scale iteration counts.
pub const WAYPOINT_OUTPUT_SCALE: f64 = 10.0;

/// Per-task single linear heads over the actor feature vector.
pub struct PredictHead {
    modes: Linear,
    waypoints: Linear,
}

impl PredictHead {
    pub fn new(rng: &mut ChaCha8Rng, in_dim: usize) -> Self {
        Self {
            modes: Linear::new(rng, in_dim, MODES),
            waypoints: Linear::new(rng, in_dim, MODES * HORIZON * WAYPOINT_DIMS),
        }
    }

    pub fn forward(&self, feature: &Tensor) -> Forecast {
        let logits = self.modes.forward(feature);
        Forecast {
            mode_probs: logits.softmax(0),
            mode_logits: logits,
            waypoints: self
                .waypoints
                .forward(feature)
                .scale(WAYPOINT_OUTPUT_SCALE),
        }
    }

    pub fn register(&self, prefix: &str, set: &mut ParamSet) {
        self.modes.register(&format!("{prefix}.modes"), set);
        self.waypoints.register(&format!("{prefix}.waypoints"), set);
    }
}

/// Supervised target for one actor: actor-frame waypoints over the horizon.
#[derive(Debug, Clone)]
pub struct ActorTarget {
    pub waypoints: Vec<[f64; 4]>,
}

impl ActorTarget {
    /// Build from a world-frame track, expressed in the reference pose frame.
    pub fn from_track(
        poses: &[Pose2],
        t0: usize,
        reference: &Pose2,
    ) -> ActorTarget {
        let waypoints = (1..=HORIZON)
            .map(|h| {
                let p = &poses[t0 + h];
                let (x, y) = into_frame((p.x, p.y), reference);
                let rel_cos = reference.cos_h * p.cos_h + reference.sin_h * p.sin_h;
                let rel_sin = reference.cos_h * p.sin_h - reference.sin_h * p.cos_h;
                [x, y, rel_cos, rel_sin]
            })
            .collect();
        ActorTarget { waypoints }
    }
}

/// Winner-take-all mode choice: minimal average centroid displacement to the
/// target, ties to the lower index.
pub fn select_mode(forecast: &Forecast, target: &ActorTarget) -> usize {
    let w = forecast.waypoints.to_vec();
    let mut best = 0usize;
    let mut best_ade = f64::INFINITY;
    for m in 0..MODES {
        let mut acc = 0.0;
        for t in 0..HORIZON {
            let base = (m * HORIZON + t) * WAYPOINT_DIMS;
            let dx = w[base] - target.waypoints[t][0];
            let dy = w[base + 1] - target.waypoints[t][1];
            acc += (dx * dx + dy * dy).sqrt();
        }
        let ade = acc / HORIZON as f64;
        if ade < best_ade - 1e-15 {
            best_ade = ade;
            best = m;
        }
    }
    best
}

/// Prediction loss over supervised actors: focal on the mode probabilities
/// (target 1 at the closest mode) plus smooth-L1 on that mode's trajectory,
/// averaged over the horizon. Actors without a target are skipped.
pub fn prediction_loss(
    forecasts: &[&Forecast],
    targets: &[Option<ActorTarget>],
    selected: &[Option<usize>],
) -> Tensor {
    use crate::backbone::{FOCAL_ALPHA, FOCAL_GAMMA, SMOOTH_L1_BETA};
    assert_eq!(forecasts.len(), targets.len());
    let mut loss = Tensor::scalar(0.0);
    for ((f, tgt), sel) in forecasts.iter().zip(targets).zip(selected) {
        let (Some(tgt), Some(m_hat)) = (tgt, sel) else {
            continue;
        };
        // Mode focal: positive at m̂, negative elsewhere. A 3-way softmax
        // keeps Σp = 1, so the negative-class complement is 1 − p_m.
        let p = &f.mode_probs;
        let one_minus_p = p.neg().add_scalar(1.0);
        let mut pos_mask = vec![0.0; MODES];
        pos_mask[*m_hat] = 1.0;
        let neg_mask: Vec<f64> = pos_mask.iter().map(|&v| 1.0 - v).collect();
        let pos = one_minus_p
            .powf(FOCAL_GAMMA)
            .mul(&p.ln())
            .mul(&Tensor::from_vec(&[MODES], pos_mask))
            .sum()
            .scale(-FOCAL_ALPHA);
        let neg = p
            .powf(FOCAL_GAMMA)
            .mul(&one_minus_p.ln())
            .mul(&Tensor::from_vec(&[MODES], neg_mask))
            .sum()
            .scale(-(1.0 - FOCAL_ALPHA));
        loss = loss.add(&pos).add(&neg);

        // Winner-take-all regression on the m̂ trajectory only.
        let flat: Vec<f64> = tgt.waypoints.iter().flatten().copied().collect();
        let target_t = Tensor::from_vec(&[HORIZON * WAYPOINT_DIMS], flat);
        let reg = f
            .waypoint_slice(*m_hat)
            .sub(&target_t)
            .huber(SMOOTH_L1_BETA)
            .sum()
            .scale(1.0 / HORIZON as f64);
        loss = loss.add(&reg);
    }
    loss
}

/// Decode one mode of a forecast to world-frame poses via the reference pose.
pub fn decode_to_world(reference: &Pose2, waypoints: &[[f64; 4]]) -> Vec<Pose2> {
    waypoints
        .iter()
        .map(|wp| {
            let (x, y) = reference.from_frame((wp[0], wp[1]));
            let cos_h = reference.cos_h * wp[2] - reference.sin_h * wp[3];
            let sin_h = reference.sin_h * wp[2] + reference.cos_h * wp[3];
            Pose2 { x, y, cos_h, sin_h }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::FmGeom;
    use crate::raster::GridSpec;
    use rand::Rng;
    use rand::SeedableRng;

    fn fm_square(c: usize, n: usize, res: f64, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..c * n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        FeatureMap {
            tensor: Tensor::from_vec(&[c, n, n], data),
            geom: FmGeom {
                spec: GridSpec {
                    extent_x: n as f64 * res,
                    extent_y: n as f64 * res,
                    extent_z: 2.0,
                    res_xy: res / 4.0,
                    res_z: 2.0,
                    past_sweeps: 1,
                },
                adv_pose: Pose2::identity(),
                downsample: 4.0,
            },
        }
    }

    #[test]
    fn ratio_parsing() {
        assert!((IrSpec::parse_ratio("5:1").unwrap() - 5.0 / 6.0).abs() < 1e-12);
        assert!((IrSpec::parse_ratio("1:1").unwrap() - 0.5).abs() < 1e-12);
        assert!(IrSpec::parse_ratio("nope").is_err());
    }

    #[test]
    fn crop_grid_mapping() {
        for (size, grid) in [(80.0, 64), (60.0, 48), (40.0, 32), (20.0, 16), (5.0, 4)] {
            assert_eq!(IrSpec::new(size, 5.0 / 6.0, true).crop_grid, grid);
        }
        assert_eq!(IrSpec::new(0.0, 0.5, true).crop_grid, 1);
    }

    #[test]
    fn stride_schedule_reference_cases() {
        // 32 → exactly the last five blocks strided.
        assert_eq!(stride_schedule(32), [1, 2, 2, 2, 2, 2]);
        assert_eq!(stride_schedule(1), [1; 6]);
        for g in [1usize, 4, 8, 16, 24, 32, 48, 64] {
            assert_eq!(reduced_extent(g), 1, "grid {g} must reduce to 1x1");
        }
    }

    #[test]
    fn zero_size_crop_is_centroid_sample() {
        let fm = fm_square(3, 8, 2.0, 1);
        let pose = Pose2::new(1.3, -2.1, 0.8);
        let spec = IrSpec::new(0.0, 5.0 / 6.0, true);
        let crop = crop_rroi(&fm, &pose, &spec);
        assert_eq!(crop.shape(), &[3, 1, 1]);
        let (row, col) = fm.geom.world_to_cell((pose.x, pose.y));
        let pts = Tensor::from_vec(&[1, 2], vec![row, col]);
        let want = fm.tensor.bilinear_sample(&pts).to_vec();
        assert_eq!(crop.to_vec(), want);
    }

    #[test]
    fn aligned_crop_equals_subgrid_slice() {
        // Identity pose, centered front split, and a region whose lattice
        // lands exactly on feature-cell centers.
        let n = 8;
        let res = 2.0;
        let fm = fm_square(2, n, res, 2);
        // 4×4 lattice over an 8 m square centered at the origin: offsets
        // ±1, ±3 m = exactly cell centers around the grid middle.
        let spec = IrSpec {
            size_m: 8.0,
            front_fraction: 0.5,
            in_actor_frame: true,
            crop_grid: 4,
        };
        let crop = crop_rroi(&fm, &Pose2::identity(), &spec);
        let data = fm.tensor.to_vec();
        let v = crop.to_vec();
        for c in 0..2 {
            for gi in 0..4 {
                for gj in 0..4 {
                    let want = data[(c * n + (2 + gi)) * n + (2 + gj)];
                    let got = v[(c * 4 + gi) * 4 + gj];
                    assert!(
                        (want - got).abs() < 1e-12,
                        "({c},{gi},{gj}): {want} vs {got}"
                    );
                }
            }
        }
    }

    #[test]
    fn rotation_equivariance_90_degrees() {
        let n = 10;
        let c = 2;
        let fm = fm_square(c, n, 2.0, 3);
        let spec = IrSpec::new(6.0, 5.0 / 6.0, true);
        let pose = Pose2::new(2.0, 1.0, 0.37);
        let crop_a = crop_rroi(&fm, &pose, &spec).to_vec();

        // Rotate content 90° CCW about the grid center and the pose with it.
        let data = fm.tensor.to_vec();
        let mut rot = vec![0.0; data.len()];
        for ch in 0..c {
            for r in 0..n {
                for cc in 0..n {
                    rot[(ch * n + cc) * n + (n - 1 - r)] = data[(ch * n + r) * n + cc];
                }
            }
        }
        let fm_rot = FeatureMap {
            tensor: Tensor::from_vec(&[c, n, n], rot),
            geom: fm.geom,
        };
        let quarter = Pose2::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let pose_rot = quarter.compose(&pose);
        let crop_b = crop_rroi(&fm_rot, &pose_rot, &spec).to_vec();
        for (a, b) in crop_a.iter().zip(&crop_b) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn adv_frame_crop_is_not_equivariant() {
        let n = 10;
        let fm = fm_square(1, n, 2.0, 4);
        let spec = IrSpec::new(6.0, 5.0 / 6.0, false);
        let pose = Pose2::new(2.0, 1.0, 0.0);
        let crop_a = crop_rroi(&fm, &pose, &spec).to_vec();
        let data = fm.tensor.to_vec();
        let mut rot = vec![0.0; data.len()];
        for r in 0..n {
            for cc in 0..n {
                rot[cc * n + (n - 1 - r)] = data[r * n + cc];
            }
        }
        let fm_rot = FeatureMap {
            tensor: Tensor::from_vec(&[1, n, n], rot),
            geom: fm.geom,
        };
        let quarter = Pose2::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let pose_rot = quarter.compose(&pose);
        let crop_b = crop_rroi(&fm_rot, &pose_rot, &spec).to_vec();
        let diff: f64 = crop_a
            .iter()
            .zip(&crop_b)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff > 1e-3, "ADV-frame crops should rotate with content");
    }

    #[test]
    fn icnn_reduces_every_supported_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for g in [1usize, 4, 8, 16] {
            let icnn = Icnn::new(&mut rng, 4, g, IcnnDesign::A);
            let crop = Tensor::full(&[4, g, g], 0.3);
            let out = icnn.forward(&crop, BnMode::Train { update_running: false });
            assert_eq!(out.shape(), &[4], "grid {g}");
            assert!(out.to_vec().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn head_output_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let head = PredictHead::new(&mut rng, 8);
        let f = head.forward(&Tensor::full(&[8], 0.1));
        assert_eq!(f.mode_probs.numel(), MODES);
        assert_eq!(f.waypoints.numel(), MODES * HORIZON * WAYPOINT_DIMS);
        let sum: f64 = f.mode_probs.to_vec().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        // Deterministic across calls.
        let g = head.forward(&Tensor::full(&[8], 0.1));
        assert_eq!(f.waypoints.to_vec(), g.waypoints.to_vec());
    }

    fn constant_target(x_step: f64) -> ActorTarget {
        ActorTarget {
            waypoints: (1..=HORIZON)
                .map(|t| [x_step * t as f64, 0.0, 1.0, 0.0])
                .collect(),
        }
    }

    fn forecast_from_values(wp: Vec<f64>, logits: Vec<f64>) -> Forecast {
        let l = Tensor::from_vec(&[MODES], logits);
        Forecast {
            mode_probs: l.softmax(0),
            mode_logits: l,
            waypoints: Tensor::from_vec(&[MODES * HORIZON * WAYPOINT_DIMS], wp),
        }
    }

    #[test]
    fn perfect_forecast_near_zero_loss() {
        let tgt = constant_target(0.5);
        let mut wp = vec![0.0; MODES * HORIZON * WAYPOINT_DIMS];
        for (t, w) in tgt.waypoints.iter().enumerate() {
            for k in 0..4 {
                wp[t * 4 + k] = w[k]; // mode 0 matches exactly
            }
        }
        let f = forecast_from_values(wp, vec![60.0, -60.0, -60.0]);
        let sel = vec![Some(select_mode(&f, &tgt))];
        assert_eq!(sel[0], Some(0));
        let loss = prediction_loss(&[&f], &[Some(tgt)], &sel).item();
        assert!(loss < 1e-6, "optimum loss should vanish, got {loss}");
    }

    #[test]
    fn equidistant_modes_tie_to_lower_index() {
        let tgt = constant_target(0.0);
        // Modes 0 and 1 offset symmetrically, mode 2 far away.
        let mut wp = vec![0.0; MODES * HORIZON * WAYPOINT_DIMS];
        for t in 0..HORIZON {
            wp[t * 4 + 1] = 1.0; // mode 0: +1 lateral
            wp[(HORIZON + t) * 4 + 1] = -1.0; // mode 1: −1 lateral
            wp[(2 * HORIZON + t) * 4] = 50.0;
        }
        let f = forecast_from_values(wp, vec![0.0, 0.0, 0.0]);
        assert_eq!(select_mode(&f, &tgt), 0);
        let loss = prediction_loss(&[&f], &[Some(tgt)], &[Some(0)]).item();
        assert!(loss.is_finite());
    }

    #[test]
    fn winner_take_all_gradient_isolation() {
        let tgt = constant_target(0.2);
        let wp_leaf =
            Tensor::from_vec(&[MODES * HORIZON * WAYPOINT_DIMS], vec![0.1; MODES * HORIZON * 4])
                .requires_grad();
        let logits = Tensor::from_vec(&[MODES], vec![0.3, 0.2, 0.1]).requires_grad();
        let f = Forecast {
            mode_probs: logits.softmax(0),
            mode_logits: logits.clone(),
            waypoints: wp_leaf.clone(),
        };
        let sel = select_mode(&f, &tgt);
        let loss = prediction_loss(&[&f], &[Some(tgt)], &[Some(sel)]);
        loss.backward();
        let g = wp_leaf.grad().unwrap();
        for m in 0..MODES {
            let gm: f64 = g[m * HORIZON * 4..(m + 1) * HORIZON * 4]
                .iter()
                .map(|v| v.abs())
                .sum();
            if m == sel {
                assert!(gm > 0.0, "selected mode must receive gradient");
            } else {
                assert_eq!(gm, 0.0, "non-selected mode {m} must get exactly zero");
            }
        }
    }

    #[test]
    fn world_decode_covariant() {
        let wps = vec![[1.0, 0.5, 1.0, 0.0]; 3];
        let ref_a = Pose2::new(0.0, 0.0, 0.0);
        let ref_b = Pose2::new(3.0, -1.0, 1.2);
        let a = decode_to_world(&ref_a, &wps);
        let b = decode_to_world(&ref_b, &wps);
        // b = ref_b ∘ a since a used the identity reference.
        for (pa, pb) in a.iter().zip(&b) {
            let want = ref_b.compose(pa);
            assert!((pb.x - want.x).abs() < 1e-12);
            assert!((pb.y - want.y).abs() < 1e-12);
            assert!((pb.cos_h - want.cos_h).abs() < 1e-12);
        }
    }
}
