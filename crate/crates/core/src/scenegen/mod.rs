//! Synthetic traffic scenes with scripted interactions.
//!
//! Each scene covers [−0.9 s, +4.0 s] at 0.1 s ticks around one key frame at
//! t = 0: ten input sweeps (past + current) and 41 supervised timestamps.
//! Three scripted maneuvers generate the interaction structure the models
//! are supposed to learn:
//!
//! * `acc_queue` — a cruiser approaches a stopped queue and brakes to a halt
//!   behind it; braking starts at or after the key frame so the past motion
//!   alone cannot reveal it.
//! * `turn`     — the straight-through lane is blocked by queued vehicles
//!   past an intersection; the actor turns onto the cross street instead.
//! * `nudge`    — a parked vehicle (or a non-vehicle fence) juts into the
//!   lane; the actor swerves around it and returns.
//!
//! Free cruisers on parallel lanes share the same key-frame appearance as
//! the interacting actors, so context — not history — decides the future.
//! Ground-truth tracks are collision-free by construction and re-sampled on
//! any residual overlap.

pub mod dataset;
pub mod sweeps;

use crate::error::{Error, Result};
use crate::geom::{iop, into_frame, ConvexPolygon, OrientedBox, Pose2};
use crate::raster::{MapLayer, MapPolygon, Sweep};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Tick length in seconds.
pub const TICK: f64 = 0.1;
/// Number of past ticks before the key frame.
pub const PAST_TICKS: usize = 9;
/// Number of supervised future ticks (the forecast horizon H).
pub const FUTURE_TICKS: usize = 40;
/// Poses per track: past + key frame + future.
pub const TOTAL_TICKS: usize = PAST_TICKS + 1 + FUTURE_TICKS;
/// Index of the key frame within a track.
pub const T0: usize = PAST_TICKS;
/// Static objects are defined by a speed below this bound at every tick.
pub const STATIC_SPEED: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActorClass {
    Vehicle,
    StaticNonVehicle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorTrack {
    pub id: u32,
    pub class: ActorClass,
    pub width: f64,
    pub length: f64,
    /// Pose per tick over [−0.9 s, +4.0 s].
    pub poses: Vec<Pose2>,
}

impl ActorTrack {
    pub fn pose(&self, tick: usize) -> &Pose2 {
        &self.poses[tick]
    }

    pub fn box_at(&self, tick: usize) -> OrientedBox {
        OrientedBox::new(self.poses[tick], self.width, self.length)
    }

    pub fn speed_at(&self, tick: usize) -> f64 {
        if tick == 0 {
            return self.speed_at(1);
        }
        let a = &self.poses[tick - 1];
        let b = &self.poses[tick];
        ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt() / TICK
    }

    pub fn max_speed(&self) -> f64 {
        (1..self.poses.len())
            .map(|t| self.speed_at(t))
            .fold(0.0, f64::max)
    }

    pub fn is_static(&self) -> bool {
        self.max_speed() < STATIC_SPEED
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub actors: Vec<ActorTrack>,
    pub map_polygons: Vec<MapPolygon>,
    pub adv_pose: Pose2,
    pub rng_seed: u64,
    /// Simulated sweeps for ticks 0..=T0, already in the ADV frame.
    pub sweeps: Vec<Sweep>,
}

impl Scene {
    pub fn vehicles(&self) -> impl Iterator<Item = &ActorTrack> {
        self.actors
            .iter()
            .filter(|a| a.class == ActorClass::Vehicle)
    }

    /// Ground-truth static obstacles: anything slower than the static bound
    /// at every tick, regardless of class.
    pub fn static_obstacles(&self) -> Vec<&ActorTrack> {
        self.actors.iter().filter(|a| a.is_static()).collect()
    }
}

/// A set of scenes sharing one key-frame decimation policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSet {
    pub scenes: Vec<Scene>,
    /// Key-frame spacing in seconds the set was decimated at
    /// (0.2 for training splits, 2.0 for validation splits).
    pub key_frame_spacing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioKind {
    AccQueue,
    Turn,
    Nudge,
    Mixed,
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "acc_queue" => Ok(Self::AccQueue),
            "turn" => Ok(Self::Turn),
            "nudge" => Ok(Self::Nudge),
            "mixed" => Ok(Self::Mixed),
            other => Err(Error::Config(format!("unknown scenario kind '{other}'"))),
        }
    }
}

/// Generation knobs. Documented ranges: speeds 0–15 m/s, 1–12 actors,
/// 0–6 static obstacles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub n_actors: usize,
    pub n_static: usize,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Coarse translation of the whole layout; train and validation splits
    /// use different shifts so static geometry cannot be memorized.
    pub map_shift: (f64, f64),
    /// Keep key-frame actor positions inside ±(extent−margin)/2.
    pub extent_x: f64,
    pub extent_y: f64,
    /// Perimeter sampling density for the simulated sweeps, points per meter.
    pub point_density: f64,
    /// Ground clutter density, points per square meter.
    pub ground_density: f64,
    /// Drop perimeter points on faces turned away from the ADV.
    pub occlusion: bool,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            n_actors: 5,
            n_static: 3,
            speed_min: 3.0,
            speed_max: 9.0,
            map_shift: (0.0, 0.0),
            extent_x: 48.0,
            extent_y: 32.0,
            point_density: 5.0,
            ground_density: 0.03,
            occlusion: false,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=15.0).contains(&self.speed_min)
            || !(0.0..=15.0).contains(&self.speed_max)
            || self.speed_min > self.speed_max
        {
            return Err(Error::Config(format!(
                "speeds must lie in 0..=15 m/s, got {}..{}",
                self.speed_min, self.speed_max
            )));
        }
        if !(1..=12).contains(&self.n_actors) {
            return Err(Error::Config(format!(
                "actor count must lie in 1..=12, got {}",
                self.n_actors
            )));
        }
        if self.n_static > 6 {
            return Err(Error::Config(format!(
                "static obstacle count must lie in 0..=6, got {}",
                self.n_static
            )));
        }
        if self.extent_x < 20.0 || self.extent_y < 12.0 {
            return Err(Error::Infeasible(format!(
                "extent {}x{} too small for a queue scenario",
                self.extent_x, self.extent_y
            )));
        }
        Ok(())
    }
}

/// Deterministic scenario generation: the same (kind, params, seed) always
/// yields a bit-identical scene.
pub fn generate_scenario(kind: ScenarioKind, params: &ScenarioParams, seed: u64) -> Result<Scene> {
    params.validate()?;
    // Rejection loop: residual ground-truth overlaps re-roll with a derived
    // seed. Margins make rejections rare.
    for attempt in 0..32u64 {
        let scene_seed = seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
        let kind_here = match kind {
            ScenarioKind::Mixed => {
                let roll: f64 = rng.gen();
                if roll < 0.40 {
                    ScenarioKind::AccQueue
                } else if roll < 0.65 {
                    ScenarioKind::Turn
                } else {
                    ScenarioKind::Nudge
                }
            }
            k => k,
        };
        let mut scene = match kind_here {
            ScenarioKind::AccQueue => build_acc_queue(params, &mut rng, seed)?,
            ScenarioKind::Turn => build_turn(params, &mut rng, seed)?,
            ScenarioKind::Nudge => build_nudge(params, &mut rng, seed)?,
            ScenarioKind::Mixed => unreachable!(),
        };
        if has_gt_overlap(&scene) {
            continue;
        }
        scene.sweeps = sweeps::simulate_sweeps(&scene, params, scene_seed);
        return Ok(scene);
    }
    Err(Error::Infeasible(format!(
        "could not build an overlap-free {kind:?} scene from seed {seed}"
    )))
}

/// Any pair of ground-truth boxes with IoP above the overlap threshold at
/// any tick disqualifies a scene.
fn has_gt_overlap(scene: &Scene) -> bool {
    let n = scene.actors.len();
    for t in 0..TOTAL_TICKS {
        for i in 0..n {
            let bi = scene.actors[i].box_at(t);
            for j in i + 1..n {
                let bj = scene.actors[j].box_at(t);
                if iop(&bi, &bj) > 0.05 || iop(&bj, &bi) > 0.05 {
                    return true;
                }
            }
        }
    }
    false
}

// ---------------------------------------------------------------------------
// Track construction helpers
// ---------------------------------------------------------------------------

/// Longitudinal distance travelled from the key frame for a cruise phase at
/// v0 followed by constant deceleration `a` starting at `t_brake`, stopping
/// when the speed hits zero.
fn braked_arc_length(v0: f64, t_brake: f64, a: f64, t: f64) -> f64 {
    if t <= t_brake || a <= 0.0 {
        return v0 * t.max(0.0);
    }
    let tb = t - t_brake;
    let t_stop = v0 / a;
    let tb = tb.min(t_stop);
    v0 * t_brake + v0 * tb - 0.5 * a * tb * tb
}

/// Straight-lane track along the heading of `start`, with optional braking.
fn straight_track(start: Pose2, v0: f64, t_brake: f64, decel: f64) -> Vec<Pose2> {
    (0..TOTAL_TICKS)
        .map(|tick| {
            let t = (tick as f64 - T0 as f64) * TICK;
            let s = if t <= 0.0 {
                v0 * t
            } else {
                braked_arc_length(v0, t_brake, decel, t)
            };
            Pose2 {
                x: start.x + start.cos_h * s,
                y: start.y + start.sin_h * s,
                cos_h: start.cos_h,
                sin_h: start.sin_h,
            }
        })
        .collect()
}

fn stationary_track(pose: Pose2) -> Vec<Pose2> {
    vec![pose; TOTAL_TICKS]
}

/// Arc-length parametrized path: straight approach, quarter-circle turn,
/// straight exit. `left` selects the turn direction.
struct TurnPath {
    entry: Pose2,
    approach_len: f64,
    radius: f64,
    left: bool,
}

impl TurnPath {
    fn pose_at(&self, s: f64) -> Pose2 {
        let quarter = std::f64::consts::FRAC_PI_2 * self.radius;
        if s <= self.approach_len {
            let d = s; // may be negative (before the window start)
            return Pose2 {
                x: self.entry.x + self.entry.cos_h * (d - self.approach_len),
                y: self.entry.y + self.entry.sin_h * (d - self.approach_len),
                cos_h: self.entry.cos_h,
                sin_h: self.entry.sin_h,
            };
        }
        let sign = if self.left { 1.0 } else { -1.0 };
        // Center of the turning circle, perpendicular to the heading.
        let cx = self.entry.x - self.entry.sin_h * sign * self.radius;
        let cy = self.entry.y + self.entry.cos_h * sign * self.radius;
        let phi0 = (self.entry.y - cy).atan2(self.entry.x - cx);
        if s <= self.approach_len + quarter {
            let phi = phi0 + sign * (s - self.approach_len) / self.radius;
            Pose2 {
                x: cx + self.radius * phi.cos(),
                y: cy + self.radius * phi.sin(),
                cos_h: -phi.sin() * sign,
                sin_h: phi.cos() * sign,
            }
        } else {
            let phi = phi0 + sign * std::f64::consts::FRAC_PI_2;
            let hx = -phi.sin() * sign;
            let hy = phi.cos() * sign;
            let ex = cx + self.radius * phi.cos();
            let ey = cy + self.radius * phi.sin();
            let d = s - self.approach_len - quarter;
            Pose2 {
                x: ex + hx * d,
                y: ey + hy * d,
                cos_h: hx,
                sin_h: hy,
            }
        }
    }
}

/// Speed profile that decelerates from v0 to v1 at fixed rate, starting at
/// time t_slow, then holds v1. Returns arc length at time t past key frame.
fn slow_then_hold_arc(v0: f64, v1: f64, t_slow: f64, a: f64, t: f64) -> f64 {
    if t <= t_slow {
        return v0 * t;
    }
    let t_ramp = ((v0 - v1) / a).max(0.0);
    let tr = (t - t_slow).min(t_ramp);
    let mut s = v0 * t_slow + v0 * tr - 0.5 * a * tr * tr;
    if t - t_slow > t_ramp {
        s += v1 * (t - t_slow - t_ramp);
    }
    s
}

// ---------------------------------------------------------------------------
// Scenario builders
// ---------------------------------------------------------------------------

struct LayoutCtx {
    lane_y: f64,
    shift: (f64, f64),
}

impl LayoutCtx {
    fn place(&self, x: f64, y: f64, heading: f64) -> Pose2 {
        Pose2::new(x + self.shift.0, y + self.shift.1, heading)
    }
}

fn vehicle_size(rng: &mut ChaCha8Rng) -> (f64, f64) {
    (rng.gen_range(1.7..2.1), rng.gen_range(4.0..4.8))
}

fn lane_polygons(ctx: &LayoutCtx, params: &ScenarioParams, cross_x: Option<f64>) -> Vec<MapPolygon> {
    let hx = params.extent_x * 0.5 + 6.0;
    let lane_w = 3.5;
    let mut out = Vec::new();
    let rect = |x0: f64, y0: f64, x1: f64, y1: f64| {
        ConvexPolygon::new(vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
    };
    let (sx, sy) = ctx.shift;
    // Drivable band covering the main lanes.
    out.push(MapPolygon {
        layer: MapLayer::DrivableArea,
        polygon: rect(
            -hx + sx,
            ctx.lane_y - 2.0 * lane_w + sy,
            hx + sx,
            ctx.lane_y + 2.0 * lane_w + sy,
        ),
    });
    // Lane-center corridors: main lane and its neighbors.
    for dy in [-lane_w, 0.0, lane_w] {
        out.push(MapPolygon {
            layer: MapLayer::LaneCorridor,
            polygon: rect(
                -hx + sx,
                ctx.lane_y + dy - 0.9 + sy,
                hx + sx,
                ctx.lane_y + dy + 0.9 + sy,
            ),
        });
    }
    if let Some(cx) = cross_x {
        out.push(MapPolygon {
            layer: MapLayer::DrivableArea,
            polygon: rect(
                cx - lane_w + sx,
                -params.extent_y * 0.5 - 6.0 + sy,
                cx + lane_w + sx,
                params.extent_y * 0.5 + 6.0 + sy,
            ),
        });
    }
    // Static zone strip along the right lane edge (parking band).
    out.push(MapPolygon {
        layer: MapLayer::StaticZone,
        polygon: rect(
            -hx + sx,
            ctx.lane_y - lane_w - 1.2 + sy,
            hx + sx,
            ctx.lane_y - lane_w + 0.6 + sy,
        ),
    });
    out
}

/// Free cruisers on parallel lanes, spaced so they never interact.
fn add_free_cruisers(
    actors: &mut Vec<ActorTrack>,
    rng: &mut ChaCha8Rng,
    ctx: &LayoutCtx,
    params: &ScenarioParams,
    count: usize,
) {
    let lanes = [3.5, -3.5, 7.0];
    for k in 0..count {
        let lane = lanes[k % lanes.len()];
        let dir = if lane > 0.0 { -1.0 } else { 1.0 }; // oncoming on the left lane
        let heading = if dir > 0.0 { 0.0 } else { std::f64::consts::PI };
        let x = rng.gen_range(-16.0..4.0) - 14.0 * (k / lanes.len()) as f64;
        let v = rng.gen_range(params.speed_min..params.speed_max);
        let (w, l) = vehicle_size(rng);
        let start = ctx.place(dir * x.abs().min(18.0), ctx.lane_y + lane, heading);
        actors.push(ActorTrack {
            id: actors.len() as u32,
            class: ActorClass::Vehicle,
            width: w,
            length: l,
            poses: straight_track(start, v, f64::INFINITY, 0.0),
        });
    }
}

fn build_acc_queue(params: &ScenarioParams, rng: &mut ChaCha8Rng, seed: u64) -> Result<Scene> {
    let ctx = LayoutCtx {
        lane_y: rng.gen_range(-2.0..2.0),
        shift: params.map_shift,
    };
    let mut actors: Vec<ActorTrack> = Vec::new();

    let n_queue = if params.n_static == 0 || params.n_actors == 1 {
        0
    } else {
        rng.gen_range(1..=params.n_static.min(3))
    };
    let (fw, fl) = vehicle_size(rng);
    let v0 = rng.gen_range(params.speed_min..params.speed_max);
    let follower_x = rng.gen_range(-18.0..-6.0);

    if n_queue == 0 {
        // Degenerate: a single cruiser with nothing ahead.
        let start = ctx.place(follower_x, ctx.lane_y, 0.0);
        actors.push(ActorTrack {
            id: 0,
            class: ActorClass::Vehicle,
            width: fw,
            length: fl,
            poses: straight_track(start, v0, f64::INFINITY, 0.0),
        });
    } else {
        // Brake timing: start at or after the key frame so the past stays
        // uninformative, stop a sampled margin behind the queue rear. If the
        // sampled profile would push the queue off the grid, brake earlier
        // and harder (and slower if it still does not fit).
        let m_stop = rng.gen_range(1.8..3.0);
        let max_rear = params.extent_x * 0.5 - 6.0;
        let d_avail = max_rear - follower_x - fl * 0.5 - m_stop;
        let mut v = v0;
        let mut t_brake = rng.gen_range(0.1..1.2);
        let mut decel = rng.gen_range(1.5..3.5);
        let stop_needed = |v: f64, tb: f64, a: f64| v * tb + v * v / (2.0 * a);
        if stop_needed(v, t_brake, decel) > d_avail {
            t_brake = 0.1;
            let need = v * v / (2.0 * (d_avail - v * t_brake).max(0.5));
            if need <= 3.5 {
                decel = decel.max(need);
            } else {
                decel = 3.5;
                // Largest speed whose stop distance fits: v·t_b + v²/(2a) = d.
                let a = decel;
                v = (-t_brake * a + (t_brake * t_brake * a * a + 2.0 * a * d_avail).sqrt())
                    .max(1.0);
            }
        }
        let gap = stop_needed(v, t_brake, decel) + m_stop;
        let mut queue_x = follower_x + fl * 0.5 + gap;
        let max_x = params.extent_x * 0.5 - 3.0;
        let mut queue_boxes = Vec::new();
        for _ in 0..n_queue {
            let (qw, ql) = vehicle_size(rng);
            queue_x += ql * 0.5;
            if queue_x > max_x {
                break;
            }
            queue_boxes.push((queue_x, qw, ql));
            queue_x += ql * 0.5 + rng.gen_range(1.5..2.5);
        }
        if queue_boxes.is_empty() {
            return Err(Error::Infeasible(format!(
                "queue does not fit the extent for seed {seed}"
            )));
        }
        let v0 = v;
        let follower_start = ctx.place(follower_x, ctx.lane_y, 0.0);
        actors.push(ActorTrack {
            id: 0,
            class: ActorClass::Vehicle,
            width: fw,
            length: fl,
            poses: straight_track(follower_start, v0, t_brake, decel),
        });
        for (qx, qw, ql) in queue_boxes {
            let pose = ctx.place(qx, ctx.lane_y + rng.gen_range(-0.15..0.15), 0.0);
            actors.push(ActorTrack {
                id: actors.len() as u32,
                class: ActorClass::Vehicle,
                width: qw,
                length: ql,
                poses: stationary_track(pose),
            });
        }
    }

    let free = params.n_actors.saturating_sub(actors.len());
    add_free_cruisers(&mut actors, rng, &ctx, params, free);
    Ok(Scene {
        actors,
        map_polygons: lane_polygons(&ctx, params, None),
        adv_pose: Pose2::identity(),
        rng_seed: seed,
        sweeps: Vec::new(),
    })
}

fn build_turn(params: &ScenarioParams, rng: &mut ChaCha8Rng, seed: u64) -> Result<Scene> {
    let ctx = LayoutCtx {
        lane_y: rng.gen_range(-2.0..2.0),
        shift: params.map_shift,
    };
    let mut actors: Vec<ActorTrack> = Vec::new();

    let (fw, fl) = vehicle_size(rng);
    let v0 = rng.gen_range(params.speed_min..params.speed_max.min(8.0));
    let v_turn = v0.min(rng.gen_range(3.0..4.5));
    let radius = rng.gen_range(6.0..9.0);
    let left = rng.gen_bool(0.5);
    let actor_x = rng.gen_range(-18.0..-8.0);
    // Arc entry placed so the actor reaches it 1–2.5 s after the key frame.
    let t_entry = rng.gen_range(1.0..2.5);
    let slow_a = 2.5;
    let t_slow = (t_entry - (v0 - v_turn) / slow_a).max(0.05);
    let approach = slow_then_hold_arc(v0, v_turn, t_slow, slow_a, t_entry);
    let entry = ctx.place(actor_x + approach, ctx.lane_y, 0.0);

    let path = TurnPath {
        entry,
        approach_len: approach,
        radius,
        left,
    };
    let poses: Vec<Pose2> = (0..TOTAL_TICKS)
        .map(|tick| {
            let t = (tick as f64 - T0 as f64) * TICK;
            let s = if t <= 0.0 {
                v0 * t
            } else {
                slow_then_hold_arc(v0, v_turn, t_slow, slow_a, t)
            };
            path.pose_at(s)
        })
        .collect();
    actors.push(ActorTrack {
        id: 0,
        class: ActorClass::Vehicle,
        width: fw,
        length: fl,
        poses,
    });

    // Queue blocking the straight-through lane beyond the intersection.
    let n_queue = params.n_static.clamp(1, 2);
    let mut qx = entry.x - params.map_shift.0 + radius + rng.gen_range(3.0..5.0);
    let max_x = params.extent_x * 0.5 - 3.0;
    for _ in 0..n_queue {
        let (qw, ql) = vehicle_size(rng);
        qx += ql * 0.5;
        if qx > max_x {
            break;
        }
        let pose = ctx.place(qx, ctx.lane_y + rng.gen_range(-0.15..0.15), 0.0);
        actors.push(ActorTrack {
            id: actors.len() as u32,
            class: ActorClass::Vehicle,
            width: qw,
            length: ql,
            poses: stationary_track(pose),
        });
        qx += ql * 0.5 + rng.gen_range(1.5..2.5);
    }

    let cross_x = entry.x - params.map_shift.0 + radius;
    let free = params.n_actors.saturating_sub(actors.len());
    add_free_cruisers(&mut actors, rng, &ctx, params, free);
    Ok(Scene {
        actors,
        map_polygons: lane_polygons(&ctx, params, Some(cross_x)),
        adv_pose: Pose2::identity(),
        rng_seed: seed,
        sweeps: Vec::new(),
    })
}

fn build_nudge(params: &ScenarioParams, rng: &mut ChaCha8Rng, seed: u64) -> Result<Scene> {
    let ctx = LayoutCtx {
        lane_y: rng.gen_range(-2.0..2.0),
        shift: params.map_shift,
    };
    let mut actors: Vec<ActorTrack> = Vec::new();

    let (aw, al) = vehicle_size(rng);
    let v0 = rng.gen_range(params.speed_min..params.speed_max.min(8.0));
    let actor_x = rng.gen_range(-18.0..-6.0);

    // Obstacle jutting into the lane from the right parking band: mostly a
    // parked vehicle, sometimes a non-vehicle fence.
    let non_vehicle = rng.gen_bool(0.3);
    let (ow, ol, oclass) = if non_vehicle {
        (
            rng.gen_range(0.5..1.0),
            rng.gen_range(2.0..5.0),
            ActorClass::StaticNonVehicle,
        )
    } else {
        let (w, l) = vehicle_size(rng);
        (w, l, ActorClass::Vehicle)
    };
    let intrusion = rng.gen_range(0.5..1.1); // how far its near edge crosses into the lane
    let obstacle_y = ctx.lane_y - aw * 0.5 - ow * 0.5 + intrusion;
    // Pass distance ahead of the actor at the key frame, in travel time.
    let t_reach = rng.gen_range(1.0..3.0);
    let obstacle_x = actor_x + al * 0.5 + v0 * t_reach + ol * 0.5;
    if obstacle_x > params.extent_x * 0.5 - 3.0 {
        return Err(Error::Infeasible(format!(
            "nudge obstacle out of extent for seed {seed}"
        )));
    }
    let obstacle_pose = ctx.place(obstacle_x, obstacle_y, 0.0);
    let obstacle = OrientedBox::new(obstacle_pose, ow, ol);

    // Lateral swerve: shift far enough for clearance, hold while passing,
    // then return. Longitudinal positions are distance-based so the track
    // stays smooth at any speed.
    let clearance = rng.gen_range(0.45..0.7);
    let dy = (obstacle_y + ow * 0.5 + aw * 0.5 + clearance) - ctx.lane_y;
    let ramp = (v0 * 1.1).max(5.0);
    let x_clear0 = obstacle_x - ol * 0.5 - al * 0.5 - 1.0;
    let x_clear1 = obstacle_x + ol * 0.5 + al * 0.5 + 1.0;
    let smooth = |u: f64| {
        let u = u.clamp(0.0, 1.0);
        u * u * (3.0 - 2.0 * u)
    };
    let offset_at = |x: f64| -> f64 {
        if x < x_clear0 {
            dy * smooth((x - (x_clear0 - ramp)) / ramp)
        } else if x <= x_clear1 {
            dy
        } else {
            dy * (1.0 - smooth((x - x_clear1) / (ramp * 1.4)))
        }
    };
    let poses: Vec<Pose2> = (0..TOTAL_TICKS)
        .map(|tick| {
            let t = (tick as f64 - T0 as f64) * TICK;
            let x = actor_x + v0 * t;
            let y = ctx.lane_y + offset_at(x);
            // Heading follows the path tangent.
            let dx = 0.05;
            let slope = (offset_at(x + dx) - offset_at(x - dx)) / (2.0 * dx);
            let mut p = ctx.place(x, y, slope.atan());
            p.normalize();
            p
        })
        .collect();
    actors.push(ActorTrack {
        id: 0,
        class: ActorClass::Vehicle,
        width: aw,
        length: al,
        poses,
    });
    actors.push(ActorTrack {
        id: 1,
        class: oclass,
        width: obstacle.width,
        length: obstacle.length,
        poses: stationary_track(obstacle_pose),
    });

    // Extra parked clutter in the static zone, far from the path.
    let extra = params.n_static.saturating_sub(1).min(2);
    for _ in 0..extra {
        let (w, l) = if rng.gen_bool(0.5) {
            vehicle_size(rng)
        } else {
            (rng.gen_range(0.5..1.0), rng.gen_range(2.0..4.0))
        };
        let class = if rng.gen_bool(0.5) {
            ActorClass::Vehicle
        } else {
            ActorClass::StaticNonVehicle
        };
        let x = rng.gen_range(-params.extent_x * 0.4..params.extent_x * 0.4);
        let pose = ctx.place(x, ctx.lane_y - 3.5 - 1.0, 0.0);
        actors.push(ActorTrack {
            id: actors.len() as u32,
            class,
            width: w,
            length: l,
            poses: stationary_track(pose),
        });
    }

    let free = params.n_actors.saturating_sub(actors.len());
    add_free_cruisers(&mut actors, rng, &ctx, params, free);
    Ok(Scene {
        actors,
        map_polygons: lane_polygons(&ctx, params, None),
        adv_pose: Pose2::identity(),
        rng_seed: seed,
        sweeps: Vec::new(),
    })
}

/// Per-tick displacement bound from the track-continuity invariant.
pub fn tracks_continuous(scene: &Scene) -> bool {
    scene.actors.iter().all(|a| {
        (1..a.poses.len()).all(|t| {
            let p = &a.poses[t - 1];
            let q = &a.poses[t];
            ((q.x - p.x).powi(2) + (q.y - p.y).powi(2)).sqrt() < 5.0
        })
    })
}

/// World-frame pose of `track` actor at tick expressed in another frame.
pub fn pose_in_frame(track: &ActorTrack, tick: usize, frame: &Pose2) -> (f64, f64, f64, f64) {
    let p = track.pose(tick);
    let (x, y) = into_frame((p.x, p.y), frame);
    let rel_cos = frame.cos_h * p.cos_h + frame.sin_h * p.sin_h;
    let rel_sin = frame.cos_h * p.sin_h - frame.sin_h * p.cos_h;
    (x, y, rel_cos, rel_sin)
}
