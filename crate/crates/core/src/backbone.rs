//! First-stage feature extractor and per-cell detection.
//!
//! Multi-scale extractor: stem at full resolution, strided descent to /8
//! with residual blocks, then three rounds of cross-scale fusion between /4
//! and /8 (bilinear upsample, 1×1 projection, add, refine). Output is a /4
//! feature map. Two 1×1 heads produce per-cell class probabilities and box
//! regression; the detection loss is focal over all cells plus smooth-L1
//! over the six box components on foreground cells.

use crate::geom::{iou, OrientedBox, Pose2};
use crate::raster::{BevRaster, GridSpec};
use crate::tensorad::nn::{BnMode, ConvB, ParamSet, ResB};
use crate::tensorad::{nn::kaiming_uniform, Tensor};
use rand_chacha::ChaCha8Rng;

/// Focal loss parameters (the cited detection work's defaults).
pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;
/// Smooth-L1 transition for all regression terms.
pub const SMOOTH_L1_BETA: f64 = 0.1;
/// Box decode clamps extents to keep early-training NMS sane.
pub const MIN_EXTENT: f64 = 0.3;
pub const MAX_EXTENT: f64 = 15.0;

/// Feature-map geometry: converts between world positions and continuous
/// feature-cell coordinates.
#[derive(Debug, Clone, Copy)]
pub struct FmGeom {
    pub spec: GridSpec,
    pub adv_pose: Pose2,
    pub downsample: f64,
}

impl FmGeom {
    pub fn res(&self) -> f64 {
        self.spec.res_xy * self.downsample
    }

    pub fn height(&self) -> usize {
        self.spec.height() / self.downsample as usize
    }

    pub fn width(&self) -> usize {
        self.spec.width() / self.downsample as usize
    }

    /// Continuous (row, col) of a world point; integers on cell centers.
    pub fn world_to_cell(&self, world: (f64, f64)) -> (f64, f64) {
        let (lx, ly) = crate::geom::into_frame(world, &self.adv_pose);
        self.spec.world_to_cell_continuous(lx, ly, self.downsample)
    }

    /// World position of a feature cell center.
    pub fn cell_to_world(&self, row: usize, col: usize) -> (f64, f64) {
        let res = self.res();
        let lx = (col as f64 + 0.5) * res - self.spec.extent_x * 0.5;
        let ly = (row as f64 + 0.5) * res - self.spec.extent_y * 0.5;
        self.adv_pose.from_frame((lx, ly))
    }
}

pub struct FeatureMap {
    pub tensor: Tensor,
    pub geom: FmGeom,
}

struct CrossScale {
    proj: ConvB,
    refine4: ConvB,
    refine8: ConvB,
}

pub struct Backbone {
    stem: ConvB,
    down1: ConvB,
    res1: ResB,
    down2: ConvB,
    res2: ResB,
    down3: ConvB,
    res3: ResB,
    cross: Vec<CrossScale>,
    pub in_channels: usize,
    pub channels: usize,
}

impl Backbone {
    pub fn new(rng: &mut ChaCha8Rng, in_channels: usize, channels: usize) -> Self {
        let c = channels;
        Self {
            stem: ConvB::new(rng, in_channels, c, 3, 1),
            down1: ConvB::new(rng, c, c, 3, 2),
            res1: ResB::new(rng, c),
            down2: ConvB::new(rng, c, c, 3, 2),
            res2: ResB::new(rng, c),
            down3: ConvB::new(rng, c, c, 3, 2),
            res3: ResB::new(rng, c),
            cross: (0..3)
                .map(|_| CrossScale {
                    proj: ConvB::new(rng, c, c, 1, 1),
                    refine4: ConvB::new(rng, c, c, 3, 1),
                    refine8: ConvB::new(rng, c, c, 3, 1),
                })
                .collect(),
            in_channels,
            channels,
        }
    }

    pub fn forward(&self, raster: &BevRaster, mode: BnMode) -> FeatureMap {
        let (h, w) = (raster.spec.height(), raster.spec.width());
        assert!(
            h % 8 == 0 && w % 8 == 0,
            "grid extents must be divisible by 8 cells, got {h}x{w}"
        );
        let f1 = self.stem.forward(&raster.channels, mode);
        let f2 = self.res1.forward(&self.down1.forward(&f1, mode), mode);
        let mut f4 = self.res2.forward(&self.down2.forward(&f2, mode), mode);
        let mut f8 = self.res3.forward(&self.down3.forward(&f4, mode), mode);
        for cs in &self.cross {
            let up = cs.proj.forward(&f8.upsample2x(), mode);
            f4 = cs.refine4.forward(&f4.add(&up), mode);
            f8 = cs.refine8.forward(&f8, mode);
        }
        FeatureMap {
            tensor: f4,
            geom: FmGeom {
                spec: raster.spec,
                adv_pose: Pose2::identity(),
                downsample: 4.0,
            },
        }
    }

    /// Analytic receptive field (in input cells) along the deepest path,
    /// computed from the layer topology.
    pub fn receptive_field_cells(&self) -> usize {
        // (kernel, stride) along stem → /8, then the cross-scale tail.
        let seq: &[(usize, usize)] = &[
            (3, 1), // stem
            (3, 2), // down1
            (3, 1),
            (3, 1), // res1
            (3, 2), // down2
            (3, 1),
            (3, 1), // res2
            (3, 2), // down3
            (3, 1),
            (3, 1), // res3
        ];
        let mut rf = 1usize;
        let mut jump = 1usize;
        for &(k, s) in seq {
            rf += (k - 1) * jump;
            jump *= s;
        }
        // Two /8 refinements feed the last fusion, then a 3×3 at /4.
        rf += 2 * 2 * jump; // refine8 × 2 at jump 8
        rf += 2 * (jump / 2); // refine4 at jump 4
        rf
    }

    pub fn register(&self, set: &mut ParamSet) {
        self.stem.register("backbone.stem", set);
        self.down1.register("backbone.down1", set);
        self.res1.register("backbone.res1", set);
        self.down2.register("backbone.down2", set);
        self.res2.register("backbone.res2", set);
        self.down3.register("backbone.down3", set);
        self.res3.register("backbone.res3", set);
        for (i, cs) in self.cross.iter().enumerate() {
            cs.proj.register(&format!("backbone.cross{i}.proj"), set);
            cs.refine4
                .register(&format!("backbone.cross{i}.refine4"), set);
            cs.refine8
                .register(&format!("backbone.cross{i}.refine8"), set);
        }
    }
}

/// Per-cell classification and box regression over a feature map.
pub struct DetectHead {
    cls_w: Tensor,
    cls_b: Tensor,
    reg_w: Tensor,
    reg_b: Tensor,
}

impl DetectHead {
    /// Foreground prior for the classification bias init: starting at
    /// p_fg ≈ π keeps the background focal term from swamping the
    /// foreground signal on imbalanced grids.
    pub const FG_PRIOR: f64 = 0.01;

    pub fn new(rng: &mut ChaCha8Rng, channels: usize) -> Self {
        let b = ((1.0 - Self::FG_PRIOR) / Self::FG_PRIOR).ln() * 0.5;
        Self {
            cls_w: kaiming_uniform(rng, &[2, channels, 1, 1], channels),
            cls_b: Tensor::from_vec(&[2], vec![b, -b]).requires_grad(),
            reg_w: kaiming_uniform(rng, &[6, channels, 1, 1], channels),
            reg_b: Tensor::zeros(&[6]).requires_grad(),
        }
    }

    pub fn forward(&self, fm: &FeatureMap) -> DetectionGrid {
        let cls = fm.tensor.conv2d(&self.cls_w, Some(&self.cls_b), 1, 0);
        let probs = cls.softmax(0);
        let boxes = fm.tensor.conv2d(&self.reg_w, Some(&self.reg_b), 1, 0);
        let (h, w) = match probs.shape() {
            [2, h, w] => (*h, *w),
            s => panic!("unexpected cls head shape {s:?}"),
        };
        DetectionGrid {
            cls_probs: probs,
            box_params: boxes,
            h,
            w,
            geom: fm.geom,
        }
    }

    pub fn register(&self, set: &mut ParamSet) {
        set.push("detect.cls.weight", &self.cls_w);
        set.push("detect.cls.bias", &self.cls_b);
        set.push("detect.reg.weight", &self.reg_w);
        set.push("detect.reg.bias", &self.reg_b);
    }
}

/// Grid of per-cell outputs: `cls_probs[2,h,w]` softmaxed over
/// {background, vehicle}; `box_params[6,h,w]` = (δcx, δcy, cosθ, sinθ, w, l)
/// with centroids relative to the cell center and headings relative to the
/// ADV heading.
pub struct DetectionGrid {
    pub cls_probs: Tensor,
    pub box_params: Tensor,
    pub h: usize,
    pub w: usize,
    pub geom: FmGeom,
}

/// Foreground assignment: the cell containing a ground-truth centroid.
#[derive(Debug, Clone)]
pub struct CellLabel {
    pub cell: usize, // r·w + c
    /// (δcx, δcy, cos, sin, w, l) targets.
    pub targets: [f64; 6],
}

/// Assign each ground-truth box to the feature cell holding its centroid.
/// Boxes whose centroid falls outside the grid are dropped; if two share a
/// cell the one nearer the cell center wins.
pub fn assign_labels(boxes: &[OrientedBox], geom: &FmGeom) -> Vec<CellLabel> {
    let (h, w) = (geom.height(), geom.width());
    let mut by_cell: std::collections::BTreeMap<usize, (f64, CellLabel)> =
        std::collections::BTreeMap::new();
    for b in boxes {
        let (row_f, col_f) = geom.world_to_cell((b.pose.x, b.pose.y));
        let row = (row_f + 0.5).floor() as isize;
        let col = (col_f + 0.5).floor() as isize;
        if row < 0 || col < 0 || row >= h as isize || col >= w as isize {
            continue;
        }
        let (row, col) = (row as usize, col as usize);
        let (cx, cy) = geom.cell_to_world(row, col);
        let dx = b.pose.x - cx;
        let dy = b.pose.y - cy;
        // Heading relative to the ADV frame.
        let adv = geom.adv_pose;
        let rel_cos = adv.cos_h * b.pose.cos_h + adv.sin_h * b.pose.sin_h;
        let rel_sin = adv.cos_h * b.pose.sin_h - adv.sin_h * b.pose.cos_h;
        let d2 = dx * dx + dy * dy;
        let label = CellLabel {
            cell: row * w + col,
            targets: [dx, dy, rel_cos, rel_sin, b.width, b.length],
        };
        match by_cell.get(&label.cell) {
            Some((best, _)) if *best <= d2 => {}
            _ => {
                by_cell.insert(label.cell, (d2, label));
            }
        }
    }
    by_cell.into_values().map(|(_, l)| l).collect()
}

/// First-stage detection loss: focal over every cell plus smooth-L1 over the
/// six regression targets on foreground cells. With no labels only the focal
/// term remains.
pub fn detection_loss(grid: &DetectionGrid, labels: &[CellLabel]) -> Tensor {
    let n = grid.h * grid.w;
    let p_bg = grid.cls_probs.gather(&(0..n).collect::<Vec<_>>());
    let p_fg = grid.cls_probs.gather(&(n..2 * n).collect::<Vec<_>>());

    let mut fg_mask = vec![0.0; n];
    for l in labels {
        fg_mask[l.cell] = 1.0;
    }
    let bg_mask: Vec<f64> = fg_mask.iter().map(|&v| 1.0 - v).collect();
    let fg_mask_t = Tensor::from_vec(&[n], fg_mask);
    let bg_mask_t = Tensor::from_vec(&[n], bg_mask);

    // Focal: −α·(1−p)^γ·ln p on foreground, −(1−α)·p^γ·ln(1−p) on background.
    // With a two-way softmax 1−p_fg is exactly p_bg.
    let fg_term = p_bg
        .powf(FOCAL_GAMMA)
        .mul(&p_fg.ln())
        .mul(&fg_mask_t)
        .sum()
        .scale(-FOCAL_ALPHA);
    let bg_term = p_fg
        .powf(FOCAL_GAMMA)
        .mul(&p_bg.ln())
        .mul(&bg_mask_t)
        .sum()
        .scale(-(1.0 - FOCAL_ALPHA));
    let mut loss = fg_term.add(&bg_term);

    if !labels.is_empty() {
        let mut idx = Vec::with_capacity(labels.len() * 6);
        let mut tgt = Vec::with_capacity(labels.len() * 6);
        for l in labels {
            for k in 0..6 {
                idx.push(k * n + l.cell);
                tgt.push(l.targets[k]);
            }
        }
        let pred = grid.box_params.gather(&idx);
        let target = Tensor::from_vec(&[tgt.len()], tgt);
        let reg = pred.sub(&target).huber(SMOOTH_L1_BETA).sum();
        loss = loss.add(&reg);
    }
    loss
}

/// One decoded detection.
#[derive(Debug, Clone)]
pub struct Detection {
    pub bbox: OrientedBox,
    pub score: f64,
    pub cell: (usize, usize),
}

/// Decode every cell above `score_floor` into a world-frame box.
pub fn decode_detections(grid: &DetectionGrid, score_floor: f64) -> Vec<Detection> {
    let n = grid.h * grid.w;
    let probs = grid.cls_probs.to_vec();
    let boxes = grid.box_params.to_vec();
    let adv = grid.geom.adv_pose;
    let mut out = Vec::new();
    for r in 0..grid.h {
        for c in 0..grid.w {
            let cell = r * grid.w + c;
            let score = probs[n + cell];
            if score < score_floor {
                continue;
            }
            let (cx, cy) = grid.geom.cell_to_world(r, c);
            let x = cx + boxes[cell];
            let y = cy + boxes[n + cell];
            // Normalize the (cos, sin) pair before decoding, then rotate out
            // of the ADV frame.
            let mut rel = Pose2::from_parts(0.0, 0.0, boxes[2 * n + cell], boxes[3 * n + cell]);
            rel.normalize();
            let cos_h = adv.cos_h * rel.cos_h - adv.sin_h * rel.sin_h;
            let sin_h = adv.sin_h * rel.cos_h + adv.cos_h * rel.sin_h;
            let width = boxes[4 * n + cell].clamp(MIN_EXTENT, MAX_EXTENT);
            let length = boxes[5 * n + cell].clamp(MIN_EXTENT, MAX_EXTENT);
            out.push(Detection {
                bbox: OrientedBox {
                    pose: Pose2 { x, y, cos_h, sin_h },
                    width,
                    length,
                },
                score,
                cell: (r, c),
            });
        }
    }
    out
}

/// Candidates entering NMS, by descending score. Scenes carry at most a
/// dozen actors; the cap only trims early-training noise.
pub const PRE_NMS_TOP_K: usize = 128;

/// Greedy non-maximum suppression. Candidates are visited by descending
/// score with centroid-lexicographic tie-breaking, and a candidate is
/// dropped if it overlaps an already-kept box above the threshold.
pub fn nms(mut dets: Vec<Detection>, iou_thresh: f64) -> Vec<Detection> {
    dets.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then_with(|| {
                (a.bbox.pose.x, a.bbox.pose.y)
                    .partial_cmp(&(b.bbox.pose.x, b.bbox.pose.y))
                    .unwrap()
            })
    });
    dets.truncate(PRE_NMS_TOP_K);
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        if kept.iter().all(|k| iou(&k.bbox, &d.bbox) <= iou_thresh) {
            kept.push(d);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{build_raster, GridSpec, Sweep};
    use crate::tensorad::nn::BnMode;
    use rand::SeedableRng;

    fn tiny_spec() -> GridSpec {
        GridSpec {
            extent_x: 12.8,
            extent_y: 9.6,
            extent_z: 2.0,
            res_xy: 0.4,
            res_z: 2.0,
            past_sweeps: 1,
        }
    }

    fn make_backbone(c: usize, spec: &GridSpec) -> Backbone {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Backbone::new(&mut rng, spec.total_channels(), c)
    }

    #[test]
    fn output_shape_is_quarter_and_finite_on_zeros() {
        let spec = tiny_spec();
        let raster = build_raster(&[Sweep::default(), Sweep::default()], &[], &spec);
        let bb = make_backbone(8, &spec);
        let fm = bb.forward(&raster, BnMode::Train { update_running: false });
        assert_eq!(
            fm.tensor.shape(),
            &[8, spec.height() / 4, spec.width() / 4]
        );
        assert!(fm.tensor.to_vec().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn receptive_field_exceeds_32_cells() {
        let spec = tiny_spec();
        let bb = make_backbone(8, &spec);
        assert!(
            bb.receptive_field_cells() >= 32,
            "receptive field {} too small",
            bb.receptive_field_cells()
        );
    }

    #[test]
    fn detect_head_prob_rows_sum_to_one() {
        let spec = tiny_spec();
        let raster = build_raster(&[Sweep::default(), Sweep::default()], &[], &spec);
        let bb = make_backbone(8, &spec);
        let fm = bb.forward(&raster, BnMode::Eval);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = DetectHead::new(&mut rng, 8);
        let grid = head.forward(&fm);
        let n = grid.h * grid.w;
        let p = grid.cls_probs.to_vec();
        for i in 0..n {
            assert!((p[i] + p[n + i] - 1.0).abs() < 1e-9);
        }
    }

    fn synthetic_grid(h: usize, w: usize, geom: FmGeom) -> DetectionGrid {
        DetectionGrid {
            cls_probs: Tensor::full(&[2, h, w], 0.5),
            box_params: Tensor::zeros(&[6, h, w]),
            h,
            w,
            geom,
        }
    }

    fn flat_geom(spec: GridSpec) -> FmGeom {
        FmGeom {
            spec,
            adv_pose: Pose2::identity(),
            downsample: 4.0,
        }
    }

    #[test]
    fn empty_scene_focal_closed_form() {
        let spec = tiny_spec();
        let geom = flat_geom(spec);
        let (h, w) = (geom.height(), geom.width());
        let grid = synthetic_grid(h, w, geom);
        let loss = detection_loss(&grid, &[]).item();
        // Uniform p=0.5 on all-background cells:
        // per cell −(1−α)·0.5²·ln 0.5 with α=0.25.
        let per_cell = 0.75 * 0.25 * (2.0f64).ln();
        let want = per_cell * (h * w) as f64;
        assert!((loss - want).abs() < 1e-9, "{loss} vs {want}");
    }

    #[test]
    fn perfect_predictions_near_zero_loss() {
        let spec = tiny_spec();
        let geom = flat_geom(spec);
        let (h, w) = (geom.height(), geom.width());
        let gt = OrientedBox::new(Pose2::new(1.0, 0.5, 0.3), 1.8, 4.2);
        let labels = assign_labels(&[gt], &geom);
        assert_eq!(labels.len(), 1);
        // Saturated logits → probabilities ≈ 1 at the right class.
        let n = h * w;
        let mut cls = vec![0.0; 2 * n];
        for i in 0..n {
            cls[i] = 40.0; // background logit
            cls[n + i] = -40.0;
        }
        let fg = labels[0].cell;
        cls[fg] = -40.0;
        cls[n + fg] = 40.0;
        let mut boxes = vec![0.0; 6 * n];
        for (k, t) in labels[0].targets.iter().enumerate() {
            boxes[k * n + fg] = *t;
        }
        let grid = DetectionGrid {
            cls_probs: Tensor::from_vec(&[2, h, w], cls).softmax(0),
            box_params: Tensor::from_vec(&[6, h, w], boxes),
            h,
            w,
            geom,
        };
        let loss = detection_loss(&grid, &labels).item();
        assert!(loss < 1e-6, "optimum loss should vanish, got {loss}");
    }

    #[test]
    fn label_assignment_centroid_cell() {
        let spec = tiny_spec();
        let geom = flat_geom(spec);
        let gt = OrientedBox::new(Pose2::new(0.0, 0.0, 0.0), 1.8, 4.2);
        let labels = assign_labels(&[gt], &geom);
        assert_eq!(labels.len(), 1);
        let (r, c) = (labels[0].cell / geom.width(), labels[0].cell % geom.width());
        let (cx, cy) = geom.cell_to_world(r, c);
        // Offsets are the centroid (origin) relative to the chosen cell
        // center, bounded by half a cell.
        assert!((labels[0].targets[0] + cx).abs() < 1e-9);
        assert!((labels[0].targets[1] + cy).abs() < 1e-9);
        assert!(labels[0].targets[0].abs() <= geom.res() * 0.5 + 1e-9);
        assert!(labels[0].targets[1].abs() <= geom.res() * 0.5 + 1e-9);
        assert_eq!(labels[0].targets[4], 1.8);
        assert_eq!(labels[0].targets[5], 4.2);
    }

    fn det(x: f64, y: f64, score: f64) -> Detection {
        Detection {
            bbox: OrientedBox::new(Pose2::new(x, y, 0.0), 2.0, 4.0),
            score,
            cell: (0, 0),
        }
    }

    #[test]
    fn nms_keeps_best_of_identical() {
        let kept = nms(vec![det(0.0, 0.0, 0.9), det(0.0, 0.0, 0.8)], 0.1);
        assert_eq!(kept.len(), 1);
        assert!((kept[0].score - 0.9).abs() < 1e-12);
    }

    #[test]
    fn nms_keeps_disjoint() {
        let kept = nms(vec![det(0.0, 0.0, 0.9), det(20.0, 0.0, 0.2)], 0.1);
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn nms_matches_bruteforce_on_chain() {
        // Chain of three overlapping boxes: middle overlaps both ends.
        let dets = vec![det(0.0, 0.0, 0.9), det(2.2, 0.0, 0.8), det(4.4, 0.0, 0.7)];
        let kept = nms(dets.clone(), 0.1);

        // Brute force: a det survives iff no higher-scored survivor
        // overlaps it, computed by explicit enumeration.
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap());
        let mut survives = vec![false; dets.len()];
        for &i in &order {
            let mut ok = true;
            for &j in &order {
                if survives[j] && iou(&dets[j].bbox, &dets[i].bbox) > 0.1 {
                    ok = false;
                    break;
                }
            }
            survives[i] = ok;
        }
        let want: Vec<usize> = (0..dets.len()).filter(|&i| survives[i]).collect();
        assert_eq!(kept.len(), want.len());
        for k in &kept {
            assert!(want.iter().any(|&i| (dets[i].score - k.score).abs() < 1e-12));
        }
        // Survivors are pairwise below the threshold.
        for a in &kept {
            for b in &kept {
                if a.score != b.score {
                    assert!(iou(&a.bbox, &b.bbox) <= 0.1);
                }
            }
        }
    }

    #[test]
    fn nms_order_independent() {
        let mut dets = vec![det(0.0, 0.0, 0.5), det(2.2, 0.0, 0.5), det(10.0, 0.0, 0.4)];
        let a = nms(dets.clone(), 0.1);
        dets.reverse();
        let b = nms(dets, 0.1);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert!((x.bbox.pose.x - y.bbox.pose.x).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_round_trips_targets() {
        let spec = tiny_spec();
        let geom = flat_geom(spec);
        let (h, w) = (geom.height(), geom.width());
        let gt = OrientedBox::new(Pose2::new(2.0, -1.0, 0.7), 1.9, 4.4);
        let labels = assign_labels(&[gt], &geom);
        let n = h * w;
        let mut cls = vec![8.0; 2 * n];
        for i in 0..n {
            cls[n + i] = -8.0;
        }
        cls[labels[0].cell] = -8.0;
        cls[n + labels[0].cell] = 8.0;
        let mut boxes = vec![0.0; 6 * n];
        for (k, t) in labels[0].targets.iter().enumerate() {
            boxes[k * n + labels[0].cell] = *t;
        }
        let grid = DetectionGrid {
            cls_probs: Tensor::from_vec(&[2, h, w], cls).softmax(0),
            box_params: Tensor::from_vec(&[6, h, w], boxes),
            h,
            w,
            geom,
        };
        let dets = nms(decode_detections(&grid, 0.5), 0.1);
        assert_eq!(dets.len(), 1);
        let d = &dets[0];
        assert!((d.bbox.pose.x - 2.0).abs() < 1e-9);
        assert!((d.bbox.pose.y + 1.0).abs() < 1e-9);
        assert!((d.bbox.pose.heading() - 0.7).abs() < 1e-9);
        assert!((d.bbox.width - 1.9).abs() < 1e-12);
        assert!(iou(&d.bbox, &gt) > 0.99);
    }

    #[test]
    fn translation_covariance_interior() {
        // 192-cell square grid: big enough that interior /4 cells have their
        // full receptive field inside. Shift by 8 input cells = 2 fm cells.
        let spec = GridSpec {
            extent_x: 38.4,
            extent_y: 38.4,
            extent_z: 2.0,
            res_xy: 0.2,
            res_z: 2.0,
            past_sweeps: 1,
        };
        let bb = make_backbone(6, &spec);
        let (h, w) = (spec.height(), spec.width());
        let cin = spec.total_channels();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        let mut base = vec![0.0; cin * h * w];
        // Sparse random blobs in the central region.
        for _ in 0..200 {
            let ch = rng.gen_range(0..cin);
            let r = rng.gen_range(40..h - 40);
            let c = rng.gen_range(40..w - 40);
            base[(ch * h + r) * w + c] = 1.0;
        }
        let shifted: Vec<f64> = {
            let mut s = vec![0.0; cin * h * w];
            for ch in 0..cin {
                for r in 0..h {
                    for c in 0..w - 8 {
                        s[(ch * h + r) * w + c + 8] = base[(ch * h + r) * w + c];
                    }
                }
            }
            s
        };
        let fm_a = bb
            .forward(
                &crate::raster::BevRaster {
                    channels: Tensor::from_vec(&[cin, h, w], base),
                    spec,
                },
                BnMode::Eval,
            )
            .tensor
            .to_vec();
        let fm_b = bb
            .forward(
                &crate::raster::BevRaster {
                    channels: Tensor::from_vec(&[cin, h, w], shifted),
                    spec,
                },
                BnMode::Eval,
            )
            .tensor
            .to_vec();
        let (fh, fw) = (h / 4, w / 4);
        let margin = bb.receptive_field_cells() / 8 + 3;
        let mut checked = 0;
        for ch in 0..6 {
            for r in margin..fh - margin {
                for c in margin..fw - margin - 2 {
                    let a = fm_a[(ch * fh + r) * fw + c];
                    let b = fm_b[(ch * fh + r) * fw + c + 2];
                    assert!(
                        (a - b).abs() < 1e-6,
                        "covariance broken at ({ch},{r},{c}): {a} vs {b}"
                    );
                    checked += 1;
                }
            }
        }
        assert!(checked > 0, "margin {margin} left no interior cells");
    }
}
