//! Browser bindings for three interactive views: synthetic scene generation,
//! oriented-box overlap geometry, and the costing-circle penetration loss
//! with its gradient field.
//!
//! Everything here is a thin serialization layer; the math comes from the
//! core crate (including the autodiff gradient in the penetration view).

use icmf::geom::{costing_circles, iop, iou, polygon_intersection_area, OrientedBox, Pose2};
use icmf::intloss::{interaction_loss, ActorPenalty, StaticObstacleSet};
use icmf::scenegen::{generate_scenario, ActorClass, ScenarioKind, ScenarioParams, TOTAL_TICKS};
use icmf::tensorad::Tensor;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct ActorOut {
    id: u32,
    class: &'static str,
    width: f64,
    length: f64,
    /// Per-tick (x, y, cos, sin).
    track: Vec<[f64; 4]>,
    is_static: bool,
}

#[derive(Serialize)]
struct PolygonOut {
    layer: &'static str,
    vertices: Vec<[f64; 2]>,
}

#[derive(Serialize)]
struct SceneOut {
    actors: Vec<ActorOut>,
    map: Vec<PolygonOut>,
    /// Current-frame sweep points (x, y).
    points: Vec<[f64; 2]>,
    extent: [f64; 2],
    ticks: usize,
    key_frame: usize,
}

/// Generate a deterministic synthetic scene for the viewer.
#[wasm_bindgen]
pub fn scene_preview(
    kind: &str,
    seed: u64,
    n_actors: usize,
    n_static: usize,
) -> Result<JsValue, JsValue> {
    let kind: ScenarioKind = kind.parse().map_err(err_str)?;
    let params = ScenarioParams {
        n_actors: n_actors.clamp(1, 12),
        n_static: n_static.min(6),
        ..Default::default()
    };
    let scene = generate_scenario(kind, &params, seed).map_err(err_str)?;
    let actors = scene
        .actors
        .iter()
        .map(|a| ActorOut {
            id: a.id,
            class: match a.class {
                ActorClass::Vehicle => "vehicle",
                ActorClass::StaticNonVehicle => "static",
            },
            width: a.width,
            length: a.length,
            track: a
                .poses
                .iter()
                .map(|p| [p.x, p.y, p.cos_h, p.sin_h])
                .collect(),
            is_static: a.is_static(),
        })
        .collect();
    let map = scene
        .map_polygons
        .iter()
        .map(|mp| PolygonOut {
            layer: match mp.layer {
                icmf::raster::MapLayer::DrivableArea => "drivable",
                icmf::raster::MapLayer::LaneCorridor => "lane",
                icmf::raster::MapLayer::StaticZone => "static_zone",
            },
            vertices: mp.polygon.vertices().iter().map(|&(x, y)| [x, y]).collect(),
        })
        .collect();
    let points = scene
        .sweeps
        .last()
        .map(|s| s.points.iter().map(|&(x, y, _)| [x, y]).collect())
        .unwrap_or_default();
    let out = SceneOut {
        actors,
        map,
        points,
        extent: [params.extent_x, params.extent_y],
        ticks: TOTAL_TICKS,
        key_frame: icmf::scenegen::T0,
    };
    serde_wasm_bindgen::to_value(&out).map_err(err_js)
}

#[derive(Serialize)]
struct OverlapOut {
    iou: f64,
    iop_a_over_b: f64,
    iop_b_over_a: f64,
    intersection_area: f64,
    corners_a: Vec<[f64; 2]>,
    corners_b: Vec<[f64; 2]>,
}

/// Overlap geometry of two oriented boxes (pose as x, y, heading radians).
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn box_overlap(
    ax: f64,
    ay: f64,
    ah: f64,
    aw: f64,
    al: f64,
    bx: f64,
    by: f64,
    bh: f64,
    bw: f64,
    bl: f64,
) -> Result<JsValue, JsValue> {
    let a = OrientedBox::new(Pose2::new(ax, ay, ah), aw.max(0.1), al.max(0.1));
    let b = OrientedBox::new(Pose2::new(bx, by, bh), bw.max(0.1), bl.max(0.1));
    let out = OverlapOut {
        iou: iou(&a, &b),
        iop_a_over_b: iop(&a, &b),
        iop_b_over_a: iop(&b, &a),
        intersection_area: polygon_intersection_area(&a.corners(), &b.corners()),
        corners_a: a.corners().vertices().iter().map(|&(x, y)| [x, y]).collect(),
        corners_b: b.corners().vertices().iter().map(|&(x, y)| [x, y]).collect(),
    };
    serde_wasm_bindgen::to_value(&out).map_err(err_js)
}

#[derive(Serialize)]
struct CircleOut {
    x: f64,
    y: f64,
    r: f64,
    distance: f64,
    hinge: f64,
}

#[derive(Serialize)]
struct PenetrationOut {
    circles: Vec<CircleOut>,
    loss: f64,
    /// d loss / d (x, y, heading): the descent direction is its negative.
    grad: [f64; 3],
    obstacle_corners: Vec<[f64; 2]>,
}

/// Single-horizon penetration loss of an actor box against one static
/// obstacle, with the autodiff gradient through centroid and heading.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn penetration(
    ax: f64,
    ay: f64,
    ah: f64,
    aw: f64,
    al: f64,
    ox: f64,
    oy: f64,
    oh: f64,
    ow: f64,
    ol: f64,
) -> Result<JsValue, JsValue> {
    let actor = OrientedBox::new(Pose2::new(ax, ay, ah), aw.max(0.2), al.max(0.2));
    let obstacle = OrientedBox::new(Pose2::new(ox, oy, oh), ow.max(0.2), ol.max(0.2));
    let obstacles = StaticObstacleSet {
        boxes: vec![obstacle],
        classes: vec![ActorClass::Vehicle],
        ids: vec![1],
    };

    // One waypoint in the world frame (identity reference).
    let wp = Tensor::from_vec(&[4], vec![ax, ay, ah.cos(), ah.sin()]).requires_grad();
    let entry = ActorPenalty {
        waypoints: wp.clone(),
        reference: Pose2::identity(),
        gt_width: actor.width,
        gt_length: actor.length,
        exclude_obstacle_id: None,
    };
    let loss_t = interaction_loss(&[entry], &obstacles, false);
    let loss = loss_t.item();
    loss_t.backward();
    let g = wp.grad().unwrap_or_else(|| vec![0.0; 4]);
    // Chain rule onto the heading angle: θ enters through (cos θ, sin θ).
    let dtheta = -g[2] * ah.sin() + g[3] * ah.cos();

    let circles = costing_circles(&actor);
    let circle_out = circles
        .centers
        .iter()
        .map(|&(cx, cy)| {
            let d = icmf::geom::signed_min_distance((cx, cy), &obstacles.boxes[0]);
            CircleOut {
                x: cx,
                y: cy,
                r: circles.radius,
                distance: d,
                hinge: (circles.radius - d).max(0.0),
            }
        })
        .collect();
    let out = PenetrationOut {
        circles: circle_out,
        loss,
        grad: [g[0], g[1], dtheta],
        obstacle_corners: obstacles.boxes[0]
            .corners()
            .vertices()
            .iter()
            .map(|&(x, y)| [x, y])
            .collect(),
    };
    serde_wasm_bindgen::to_value(&out).map_err(err_js)
}

fn err_str(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn err_js(e: serde_wasm_bindgen::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penetration_math_consistent() {
        // Overlapping setup: loss positive, gradient pushes the actor away.
        let actor = OrientedBox::new(Pose2::new(0.0, 0.0, 0.0), 2.0, 4.5);
        let obstacle = OrientedBox::new(Pose2::new(3.0, 0.2, 0.0), 2.0, 4.0);
        let obstacles = StaticObstacleSet {
            boxes: vec![obstacle],
            classes: vec![ActorClass::Vehicle],
            ids: vec![1],
        };
        let wp = Tensor::from_vec(&[4], vec![0.0, 0.0, 1.0, 0.0]).requires_grad();
        let entry = ActorPenalty {
            waypoints: wp.clone(),
            reference: Pose2::identity(),
            gt_width: actor.width,
            gt_length: actor.length,
            exclude_obstacle_id: None,
        };
        let loss = interaction_loss(&[entry], &obstacles, false);
        assert!(loss.item() > 0.0);
        loss.backward();
        let g = wp.grad().unwrap();
        // Obstacle is ahead (+x): descent (−grad) must point backwards.
        assert!(g[0] > 0.0, "gradient must oppose retreat, got {:?}", g);
    }
}
