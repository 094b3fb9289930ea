//! Evaluation: detection matching, average precision, the fixed-recall
//! operating point, displacement error and forecast-overlap rates.
//!
//! All metrics run at a single operating point: the largest score threshold
//! whose pooled recall reaches the target (0.8 by default), so that model
//! variants are compared over equal numbers of trajectories.

pub mod bench;

use crate::backbone::Detection;
use crate::geom::{iop, iou, OrientedBox, Pose2};
use crate::intloss::StaticObstacleSet;
use crate::scenegen::ActorClass;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub nms_iou: f64,
    pub score_floor: f64,
    pub match_iou: f64,
    pub recall_target: f64,
    pub iop_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            nms_iou: 0.1,
            score_floor: 0.05,
            match_iou: 0.5,
            recall_target: 0.8,
            iop_threshold: 0.05,
        }
    }
}

/// Everything the metrics need from one evaluated scene.
pub struct EvalScene {
    /// Ground-truth vehicle boxes at the key frame.
    pub labels: Vec<OrientedBox>,
    /// Track ids aligned with `labels`.
    pub label_ids: Vec<u32>,
    /// Ground-truth world poses per horizon (1..=H), aligned with `labels`.
    pub label_future: Vec<Vec<Pose2>>,
    /// Post-NMS detections.
    pub dets: Vec<Detection>,
    /// Greedy matching at the configured IoU, aligned with `dets`.
    pub det_label: Vec<Option<usize>>,
    /// Most-probable-mode world poses per horizon, aligned with `dets`.
    pub det_forecast: Vec<Vec<Pose2>>,
    /// Static ground-truth obstacles with their classes and track ids.
    pub obstacles: StaticObstacleSet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ap_at_iou50: f64,
    pub de_4s: f64,
    pub actor_actor_overlap: f64,
    pub actor_static_overlap: f64,
    pub actor_static_nonvehicle_overlap: f64,
    pub n_trajectories: usize,
    pub threshold_used: f64,
    pub recall_achieved: f64,
    pub recall_attained: bool,
    pub n_labels: usize,
}

impl MetricsReport {
    /// Two-column CSV rows, stable order, used for byte-exact comparisons.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let mut row = |k: &str, v: String| {
            s.push_str(k);
            s.push(',');
            s.push_str(&v);
            s.push('\n');
        };
        row("ap_at_iou50", format!("{:.6}", self.ap_at_iou50));
        row("de_4s", format!("{:.6}", self.de_4s));
        row("actor_actor_overlap", format!("{:.6}", self.actor_actor_overlap));
        row("actor_static_overlap", format!("{:.6}", self.actor_static_overlap));
        row(
            "actor_static_nonvehicle_overlap",
            format!("{:.6}", self.actor_static_nonvehicle_overlap),
        );
        row("n_trajectories", self.n_trajectories.to_string());
        row("threshold_used", format!("{:.9}", self.threshold_used));
        row("recall_achieved", format!("{:.6}", self.recall_achieved));
        row("recall_attained", self.recall_attained.to_string());
        row("n_labels", self.n_labels.to_string());
        s
    }
}

/// Greedy score-descending one-to-one matching of detections to labels.
pub fn match_detections(
    dets: &[Detection],
    labels: &[OrientedBox],
    iou_thresh: f64,
) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap()
            .then_with(|| {
                (dets[a].bbox.pose.x, dets[a].bbox.pose.y)
                    .partial_cmp(&(dets[b].bbox.pose.x, dets[b].bbox.pose.y))
                    .unwrap()
            })
    });
    let mut taken = vec![false; labels.len()];
    let mut out = vec![None; dets.len()];
    for &di in &order {
        let mut best: Option<(usize, f64)> = None;
        for (li, l) in labels.iter().enumerate() {
            if taken[li] {
                continue;
            }
            let v = iou(&dets[di].bbox, l);
            if v >= iou_thresh && best.map_or(true, |(_, bv)| v > bv) {
                best = Some((li, v));
            }
        }
        if let Some((li, _)) = best {
            taken[li] = true;
            out[di] = Some(li);
        }
    }
    out
}

/// 101-point interpolated average precision from pooled (score, is_tp)
/// pairs and the total label count.
pub fn average_precision(scored: &[(f64, bool)], n_labels: usize) -> f64 {
    if n_labels == 0 {
        return 0.0;
    }
    let mut rows = scored.to_vec();
    rows.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut pr: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
    for (_, is_tp) in rows {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        pr.push((
            tp as f64 / n_labels as f64,
            tp as f64 / (tp + fp) as f64,
        ));
    }
    let mut ap = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let p = pr
            .iter()
            .filter(|(rec, _)| *rec >= r)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        ap += p;
    }
    ap / 101.0
}

/// Largest score threshold whose recall meets the target, from pooled
/// (score, is_tp) pairs. Returns (threshold, recall at it, attained flag).
/// A zero target admits the empty set via the +∞ sentinel; an unattainable
/// target falls back to the best achievable recall and flags it.
pub fn threshold_at_recall(
    scored: &[(f64, bool)],
    n_labels: usize,
    target: f64,
) -> (f64, f64, bool) {
    if target <= 0.0 {
        return (f64::INFINITY, 0.0, true);
    }
    if n_labels == 0 {
        return (f64::INFINITY, 0.0, false);
    }
    let mut rows = scored.to_vec();
    rows.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut tp = 0usize;
    let mut best: Option<(f64, f64)> = None;
    let mut max_recall = 0.0;
    let mut min_score = f64::INFINITY;
    for &(score, is_tp) in &rows {
        if is_tp {
            tp += 1;
        }
        let recall = tp as f64 / n_labels as f64;
        min_score = score;
        if recall > max_recall {
            max_recall = recall;
        }
        if recall >= target && best.is_none() {
            best = Some((score, recall));
        }
    }
    match best {
        Some((thr, rec)) => (thr, rec, true),
        None => (min_score, max_recall, false),
    }
}

/// Mean Euclidean centroid error at the final (4 s) horizon over matched
/// detections above the operating threshold.
fn displacement_error(scenes: &[EvalScene], threshold: f64) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for s in scenes {
        for (di, det) in s.dets.iter().enumerate() {
            if det.score < threshold {
                continue;
            }
            let Some(li) = s.det_label[di] else { continue };
            let pred = s.det_forecast[di].last().expect("empty forecast");
            let gt = s.label_future[li].last().expect("empty label future");
            acc += ((pred.x - gt.x).powi(2) + (pred.y - gt.y).powi(2)).sqrt();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        acc / n as f64
    }
}

struct OverlapCounts {
    actor_actor: usize,
    actor_static: usize,
    actor_static_nonvehicle: usize,
    total: usize,
}

/// Overlap events over the forecast horizon. An actor counts once per rate:
/// against static obstacles if any horizon's swept box exceeds the IoP
/// threshold over any obstacle polygon, and against other actors if the
/// boxes of two forecasts intersect at the same horizon. Obstacles already
/// overlapped by the detection at the key frame (the actor itself) are
/// excluded.
fn overlap_counts(scenes: &[EvalScene], threshold: f64, iop_thresh: f64) -> OverlapCounts {
    let mut counts = OverlapCounts {
        actor_actor: 0,
        actor_static: 0,
        actor_static_nonvehicle: 0,
        total: 0,
    };
    for s in scenes {
        let active: Vec<usize> = (0..s.dets.len())
            .filter(|&i| s.dets[i].score >= threshold)
            .collect();
        counts.total += active.len();
        // Swept boxes per active det per horizon.
        let swept: Vec<Vec<OrientedBox>> = active
            .iter()
            .map(|&i| {
                let d = &s.dets[i];
                s.det_forecast[i]
                    .iter()
                    .map(|p| OrientedBox::new(*p, d.bbox.width, d.bbox.length))
                    .collect()
            })
            .collect();
        for (ai, &di) in active.iter().enumerate() {
            let det = &s.dets[di];
            let own_label_id = s.det_label[di].map(|li| s.label_ids[li]);
            let mut hit_static = false;
            let mut hit_nonveh = false;
            for (oi, obox) in s.obstacles.boxes.iter().enumerate() {
                // Self-suppression: matched identity or key-frame overlap.
                if own_label_id == Some(s.obstacles.ids[oi]) {
                    continue;
                }
                if iop(&det.bbox, obox) > iop_thresh {
                    continue;
                }
                let hit = swept[ai].iter().any(|b| iop(b, obox) > iop_thresh);
                if hit {
                    hit_static = true;
                    if s.obstacles.classes[oi] == ActorClass::StaticNonVehicle {
                        hit_nonveh = true;
                    }
                }
            }
            if hit_static {
                counts.actor_static += 1;
            }
            if hit_nonveh {
                counts.actor_static_nonvehicle += 1;
            }
            // Time-aligned actor-actor overlap.
            let mut hit_actor = false;
            'outer: for (bi, _) in active.iter().enumerate() {
                if bi == ai {
                    continue;
                }
                for t in 0..swept[ai].len().min(swept[bi].len()) {
                    if iop(&swept[ai][t], &swept[bi][t]) > iop_thresh {
                        hit_actor = true;
                        break 'outer;
                    }
                }
            }
            if hit_actor {
                counts.actor_actor += 1;
            }
        }
    }
    counts
}

/// Full report over a set of evaluated scenes.
pub fn evaluate(scenes: &[EvalScene], cfg: &EvalConfig) -> MetricsReport {
    let mut scored: Vec<(f64, bool)> = Vec::new();
    let mut n_labels = 0usize;
    for s in scenes {
        n_labels += s.labels.len();
        for (di, det) in s.dets.iter().enumerate() {
            scored.push((det.score, s.det_label[di].is_some()));
        }
    }
    let ap = average_precision(&scored, n_labels);
    let (threshold, recall, attained) =
        threshold_at_recall(&scored, n_labels, cfg.recall_target);
    let de = displacement_error(scenes, threshold);
    let counts = overlap_counts(scenes, threshold, cfg.iop_threshold);
    let pct = |n: usize| {
        if counts.total == 0 {
            0.0
        } else {
            100.0 * n as f64 / counts.total as f64
        }
    };
    MetricsReport {
        ap_at_iou50: ap,
        de_4s: de,
        actor_actor_overlap: pct(counts.actor_actor),
        actor_static_overlap: pct(counts.actor_static),
        actor_static_nonvehicle_overlap: pct(counts.actor_static_nonvehicle),
        n_trajectories: counts.total,
        threshold_used: threshold,
        recall_achieved: recall,
        recall_attained: attained,
        n_labels,
    }
}

/// Evaluate ground-truth tracks as if they were forecasts: every label
/// becomes a perfect detection carrying its own future. Cross-checks the
/// no-overlap invariant of generated scenes.
pub fn ground_truth_eval_scene(scene: &crate::scenegen::Scene) -> EvalScene {
    use crate::scenegen::{FUTURE_TICKS, T0};
    let mut labels = Vec::new();
    let mut label_ids = Vec::new();
    let mut label_future = Vec::new();
    let mut dets = Vec::new();
    let mut det_forecast = Vec::new();
    for a in scene.vehicles() {
        let bbox = a.box_at(T0);
        labels.push(bbox);
        label_ids.push(a.id);
        let future: Vec<Pose2> = (1..=FUTURE_TICKS).map(|h| *a.pose(T0 + h)).collect();
        label_future.push(future.clone());
        dets.push(Detection {
            bbox,
            score: 1.0,
            cell: (0, 0),
        });
        det_forecast.push(future);
    }
    let det_label = (0..dets.len()).map(Some).collect();
    let obstacles = StaticObstacleSet::from_scene(scene);
    EvalScene {
        labels,
        label_ids,
        label_future,
        dets,
        det_label,
        det_forecast,
        obstacles,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_scenario, ScenarioKind, ScenarioParams};

    fn det(x: f64, y: f64, score: f64) -> Detection {
        Detection {
            bbox: OrientedBox::new(Pose2::new(x, y, 0.0), 2.0, 4.0),
            score,
            cell: (0, 0),
        }
    }

    fn label(x: f64, y: f64) -> OrientedBox {
        OrientedBox::new(Pose2::new(x, y, 0.0), 2.0, 4.0)
    }

    #[test]
    fn matching_perfect_and_empty() {
        let labels = vec![label(0.0, 0.0), label(10.0, 0.0)];
        let dets = vec![det(0.0, 0.0, 0.9), det(10.0, 0.0, 0.8)];
        let m = match_detections(&dets, &labels, 0.5);
        assert_eq!(m, vec![Some(0), Some(1)]);
        let empty = match_detections(&[], &labels, 0.5);
        assert!(empty.is_empty());
    }

    #[test]
    fn matching_one_to_one_rule() {
        let labels = vec![label(0.0, 0.0)];
        let dets = vec![det(0.1, 0.0, 0.7), det(0.0, 0.0, 0.9)];
        let m = match_detections(&dets, &labels, 0.5);
        // Higher score wins the label; the other becomes a false positive.
        assert_eq!(m[1], Some(0));
        assert_eq!(m[0], None);
    }

    #[test]
    fn ap_perfect_and_degenerate() {
        let scored = vec![(0.9, true), (0.8, true)];
        assert!((average_precision(&scored, 2) - 1.0).abs() < 1e-12);
        assert_eq!(average_precision(&[], 2), 0.0);
        // A false positive above the true positives caps precision.
        let noisy = vec![(0.95, false), (0.9, true), (0.8, true)];
        let ap = average_precision(&noisy, 2);
        assert!(ap < 1.0 && ap > 0.4);
    }

    #[test]
    fn threshold_basic_contracts() {
        // All scores 1.0 on perfect detections → threshold 1.0, recall 1.
        let scored = vec![(1.0, true), (1.0, true)];
        let (thr, rec, ok) = threshold_at_recall(&scored, 2, 0.8);
        assert_eq!(thr, 1.0);
        assert_eq!(rec, 1.0);
        assert!(ok);
        // Zero target → +∞ sentinel (admits the empty set).
        let (thr, _, ok) = threshold_at_recall(&scored, 2, 0.0);
        assert!(thr.is_infinite() && ok);
        // Unattainable target flags and falls back to best recall.
        let (thr, rec, ok) = threshold_at_recall(&[(0.9, true)], 4, 0.8);
        assert!(!ok);
        assert!((rec - 0.25).abs() < 1e-12);
        assert_eq!(thr, 0.9);
    }

    #[test]
    fn threshold_matches_exhaustive_sweep() {
        let scored = vec![
            (0.95, true),
            (0.9, false),
            (0.85, true),
            (0.7, true),
            (0.6, false),
            (0.5, true),
        ];
        let n = 5;
        let target = 0.6;
        let (thr, _, ok) = threshold_at_recall(&scored, n, target);
        assert!(ok);
        // Exhaustive oracle: try every candidate threshold (descending),
        // keep the largest whose recall clears the target.
        let mut best = None;
        let mut cands: Vec<f64> = scored.iter().map(|s| s.0).collect();
        cands.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for c in cands {
            let tp = scored.iter().filter(|(s, t)| *s >= c && *t).count();
            if tp as f64 / n as f64 >= target {
                best = Some(c);
                break;
            }
        }
        assert_eq!(thr, best.unwrap());
    }

    fn straight_future(x0: f64, y0: f64, v: f64) -> Vec<Pose2> {
        (1..=crate::scenegen::FUTURE_TICKS)
            .map(|t| Pose2::new(x0 + v * 0.1 * t as f64, y0, 0.0))
            .collect()
    }

    fn scene_with(
        dets: Vec<Detection>,
        labels: Vec<OrientedBox>,
        det_forecast: Vec<Vec<Pose2>>,
        label_future: Vec<Vec<Pose2>>,
        obstacles: StaticObstacleSet,
    ) -> EvalScene {
        let det_label = match_detections(&dets, &labels, 0.5);
        let label_ids = (0..labels.len() as u32).collect();
        EvalScene {
            labels,
            label_ids,
            label_future,
            dets,
            det_label,
            det_forecast,
            obstacles,
        }
    }

    #[test]
    fn de_simple_arithmetic() {
        // Two matched actors with 1 m and 3 m terminal errors → DE 2.0.
        let labels = vec![label(0.0, 0.0), label(0.0, 10.0)];
        let dets = vec![det(0.0, 0.0, 0.9), det(0.0, 10.0, 0.9)];
        let label_future = vec![straight_future(0.0, 0.0, 5.0), straight_future(0.0, 10.0, 5.0)];
        let mut det_forecast = label_future.clone();
        det_forecast[0].last_mut().unwrap().x += 1.0;
        det_forecast[1].last_mut().unwrap().x += 3.0;
        let s = scene_with(
            dets,
            labels,
            det_forecast,
            label_future,
            StaticObstacleSet::default(),
        );
        let report = evaluate(&[s], &EvalConfig::default());
        assert!((report.de_4s - 2.0).abs() < 1e-12);
        assert_eq!(report.n_trajectories, 2);
        assert!((report.ap_at_iou50 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_disjoint_no_overlaps() {
        let labels = vec![label(0.0, 0.0), label(0.0, 10.0)];
        let dets = vec![det(0.0, 0.0, 0.9), det(0.0, 10.0, 0.9)];
        let futures = vec![straight_future(0.0, 0.0, 0.0), straight_future(0.0, 10.0, 0.0)];
        let s = scene_with(
            dets,
            labels,
            futures.clone(),
            futures,
            StaticObstacleSet::default(),
        );
        let r = evaluate(&[s], &EvalConfig::default());
        assert_eq!(r.actor_actor_overlap, 0.0);
        assert_eq!(r.actor_static_overlap, 0.0);
    }

    #[test]
    fn one_of_three_static_overlap() {
        // Three forecasts; one drives straight through a parked car.
        let labels = vec![label(0.0, 0.0), label(0.0, 8.0), label(0.0, 16.0)];
        let dets = vec![det(0.0, 0.0, 0.9), det(0.0, 8.0, 0.9), det(0.0, 16.0, 0.9)];
        let futures = vec![
            straight_future(0.0, 0.0, 5.0), // hits the obstacle at x≈10
            straight_future(0.0, 8.0, 0.0),
            straight_future(0.0, 16.0, 0.0),
        ];
        let obstacles = StaticObstacleSet {
            boxes: vec![OrientedBox::new(Pose2::new(10.0, 0.0, 0.0), 2.0, 4.0)],
            classes: vec![ActorClass::Vehicle],
            ids: vec![9000],
        };
        let s = scene_with(dets, labels, futures.clone(), futures, obstacles);
        let r = evaluate(&[s], &EvalConfig::default());
        assert!((r.actor_static_overlap - 100.0 / 3.0).abs() < 0.01);
        assert_eq!(r.actor_static_nonvehicle_overlap, 0.0);
    }

    #[test]
    fn crossing_at_different_times_not_actor_actor() {
        // Two trajectories cross the same point at different horizons.
        let labels = vec![label(-10.0, 0.0), label(0.0, -14.0)];
        let dets = vec![det(-10.0, 0.0, 0.9), det(0.0, -14.0, 0.9)];
        // Actor A reaches (0,0) at t=2 s; actor B reaches it at t≈3.7 s.
        let fa: Vec<Pose2> = (1..=40)
            .map(|t| Pose2::new(-10.0 + 5.0 * 0.1 * t as f64, 0.0, 0.0))
            .collect();
        let fb: Vec<Pose2> = (1..=40)
            .map(|t| Pose2::new(0.0, -14.0 + 3.8 * 0.1 * t as f64, 1.5707963))
            .collect();
        let s = scene_with(
            dets,
            labels,
            vec![fa.clone(), fb.clone()],
            vec![fa, fb],
            StaticObstacleSet::default(),
        );
        let r = evaluate(&[s], &EvalConfig::default());
        assert_eq!(
            r.actor_actor_overlap, 0.0,
            "time-aligned definition must ignore asynchronous crossings"
        );
    }

    #[test]
    fn gt_tracks_give_exact_zeros() {
        let params = ScenarioParams::default();
        let mut scenes = Vec::new();
        for seed in 0..25 {
            let scene = generate_scenario(ScenarioKind::Mixed, &params, seed).unwrap();
            scenes.push(ground_truth_eval_scene(&scene));
        }
        let r = evaluate(&scenes, &EvalConfig::default());
        assert_eq!(r.actor_actor_overlap, 0.0);
        assert_eq!(r.actor_static_overlap, 0.0);
        assert_eq!(r.actor_static_nonvehicle_overlap, 0.0);
        assert!((r.ap_at_iou50 - 1.0).abs() < 1e-12);
        assert!(r.de_4s.abs() < 1e-12);
    }

    #[test]
    fn metrics_invariant_under_actor_reordering() {
        let params = ScenarioParams::default();
        let scene = generate_scenario(ScenarioKind::Mixed, &params, 3).unwrap();
        let a = evaluate(&[ground_truth_eval_scene(&scene)], &EvalConfig::default());
        let mut rev = scene.clone();
        rev.actors.reverse();
        let b = evaluate(&[ground_truth_eval_scene(&rev)], &EvalConfig::default());
        assert_eq!(a.ap_at_iou50, b.ap_at_iou50);
        assert_eq!(a.actor_static_overlap, b.actor_static_overlap);
        assert_eq!(a.de_4s, b.de_4s);
    }
}
