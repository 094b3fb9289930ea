//! Perimeter-sampled point sweeps standing in for real LiDAR.
//!
//! Points are sampled along each actor's box perimeter (~1 point / 0.2 m at
//! the default density) with Gaussian position noise, plus sparse ground
//! clutter, expressed in the ADV frame at the key frame.

use super::{Scene, ScenarioParams, T0};
use crate::geom::into_frame;
use crate::raster::Sweep;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// One sweep per input tick (0..=T0), oldest first.
pub fn simulate_sweeps(scene: &Scene, params: &ScenarioParams, seed: u64) -> Vec<Sweep> {
    let noise = Normal::new(0.0, 0.03).unwrap();
    let mut out = Vec::with_capacity(T0 + 1);
    for tick in 0..=T0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0xABCD_0000 + tick as u64));
        let mut points: Vec<(f64, f64, f64)> = Vec::new();
        for actor in &scene.actors {
            let b = actor.box_at(tick);
            let perimeter = 2.0 * (b.width + b.length);
            let n = (perimeter * params.point_density).round().max(1.0) as usize;
            let phase: f64 = rng.gen_range(0.0..1.0);
            let (hl, hw) = (b.length * 0.5, b.width * 0.5);
            for i in 0..n {
                let s = ((i as f64 + phase) / n as f64) * perimeter;
                // Walk the rectangle: front, left, rear, right edges.
                let (lx, ly, nx, ny) = if s < b.width {
                    (hl, s - hw, 1.0, 0.0)
                } else if s < b.width + b.length {
                    (hl - (s - b.width), hw, 0.0, 1.0)
                } else if s < 2.0 * b.width + b.length {
                    (-hl, hw - (s - b.width - b.length), -1.0, 0.0)
                } else {
                    (-hl + (s - 2.0 * b.width - b.length), -hw, 0.0, -1.0)
                };
                if params.occlusion {
                    // Drop points on faces turned away from the sensor.
                    let (wx, wy) = b.pose.from_frame((lx, ly));
                    let (wnx, wny) = (
                        b.pose.cos_h * nx - b.pose.sin_h * ny,
                        b.pose.sin_h * nx + b.pose.cos_h * ny,
                    );
                    let vx = wx - scene.adv_pose.x;
                    let vy = wy - scene.adv_pose.y;
                    if wnx * vx + wny * vy > 0.0 {
                        continue;
                    }
                }
                let (wx, wy) = b.pose.from_frame((lx, ly));
                let x = wx + noise.sample(&mut rng);
                let y = wy + noise.sample(&mut rng);
                let z = rng.gen_range(0.2..1.6);
                let (ax, ay) = into_frame((x, y), &scene.adv_pose);
                points.push((ax, ay, z));
            }
        }
        // Sparse ground returns over the whole extent.
        let area = params.extent_x * params.extent_y;
        let n_ground = (area * params.ground_density).round() as usize;
        for _ in 0..n_ground {
            let x = rng.gen_range(-params.extent_x * 0.5..params.extent_x * 0.5);
            let y = rng.gen_range(-params.extent_y * 0.5..params.extent_y * 0.5);
            let z = rng.gen_range(0.0..0.15);
            points.push((x, y, z));
        }
        out.push(Sweep { points });
    }
    out
}
