//! Experiment harness: model assembly, the training loop with the step
//! decay schedule, the evaluation pipeline and run records.

pub mod config;
pub mod plot;
pub mod sweep;

pub use config::{ExperimentConfig, Stage2Source};

use crate::backbone::{
    assign_labels, decode_detections, detection_loss, nms, Backbone, DetectHead, FeatureMap,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, match_detections, EvalScene, MetricsReport};
use crate::geom::{iou, OrientedBox, Pose2};
use crate::gnn::GnnStage;
use crate::icm::{
    crop_rroi, decode_to_world, select_mode, ActorTarget, Forecast, Icnn, IrSpec, PredictHead,
};
use crate::intloss::{interaction_loss, ActorPenalty, StaticObstacleSet};
use crate::raster::{build_raster, BevRaster};
use crate::scenegen::{
    dataset, generate_scenario, Scene, SceneSet, FUTURE_TICKS, T0,
};
use crate::tensorad::nn::{BnMode, ParamSet, Parameter};
use crate::tensorad::optim::Adam;
use crate::tensorad::{checkpoint, no_grad, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// The joint two-stage model: shared extractor and detection head, plus the
/// configured second stage (convolutional module, optionally with the graph
/// stage on top).
pub struct JointModel {
    pub backbone: Backbone,
    pub det_head: DetectHead,
    pub icnn: Icnn,
    pub icm_head: PredictHead,
    pub gnn: Option<GnnStage>,
    pub ir: IrSpec,
    pub cfg: ExperimentConfig,
}

impl JointModel {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed.wrapping_add(0x5EED));
        let c = cfg.model.channels;
        let front = IrSpec::parse_ratio(&cfg.model.ir_front_to_back)?;
        let ir = IrSpec::new(cfg.model.ir_size_m, front, cfg.model.ir_in_actor_frame);
        let backbone = Backbone::new(&mut rng, cfg.grid.total_channels(), c);
        let det_head = DetectHead::new(&mut rng, c);
        let icnn = Icnn::new(&mut rng, c, ir.crop_grid, cfg.model.icnn_design);
        let icm_head = PredictHead::new(&mut rng, c);
        let gnn = if cfg.model.gnn_enabled {
            Some(GnnStage::new(
                &mut rng,
                c,
                c,
                cfg.model.gnn_iterations,
                cfg.model.gnn_ablation,
            ))
        } else {
            None
        };
        Ok(Self {
            backbone,
            det_head,
            icnn,
            icm_head,
            gnn,
            ir,
            cfg: cfg.clone(),
        })
    }

    pub fn params(&self) -> ParamSet {
        let mut set = ParamSet::default();
        self.backbone.register(&mut set);
        self.det_head.register(&mut set);
        self.icnn.register("icm.icnn", &mut set);
        self.icm_head.register("icm.head", &mut set);
        if let Some(g) = &self.gnn {
            g.register(&mut set);
        }
        set
    }

    /// Second stage for a set of reference poses: per-actor crops and
    /// features, then forecasts from the graph stage when present, the
    /// convolutional head otherwise.
    pub fn stage2(&self, fm: &FeatureMap, poses: &[Pose2], mode: BnMode) -> Vec<Forecast> {
        let features: Vec<Tensor> = poses
            .iter()
            .map(|p| {
                let crop = crop_rroi(fm, p, &self.ir);
                self.icnn.forward(&crop, mode)
            })
            .collect();
        match &self.gnn {
            Some(g) => g.run(&features, poses, mode),
            None => features.iter().map(|f| self.icm_head.forward(f)).collect(),
        }
    }

    pub fn raster_for(&self, scene: &Scene) -> BevRaster {
        build_raster(&scene.sweeps, &scene.map_polygons, &self.cfg.grid)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossRow {
    pub iteration: usize,
    pub lr: f64,
    pub det: f64,
    pub pred: f64,
    pub col: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_text: String,
    pub seed: u64,
    pub losses: Vec<LossRow>,
    pub final_metrics: Option<MetricsReport>,
    pub wall_ms: u128,
}

impl RunRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("run record serialization: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }
}

/// Reference pose/size for one supervised actor in stage two.
struct Stage2Actor {
    reference: Pose2,
    gt_index: usize,
}

/// Pick stage-two references for the ground-truth vehicles of a scene.
fn stage2_references(
    model: &JointModel,
    grid_out: &crate::backbone::DetectionGrid,
    gt_boxes: &[OrientedBox],
    source: Stage2Source,
    score_floor: f64,
    nms_iou: f64,
    match_iou: f64,
) -> Vec<Stage2Actor> {
    let mut out = Vec::new();
    match source {
        Stage2Source::Gt => {
            for (gi, b) in gt_boxes.iter().enumerate() {
                out.push(Stage2Actor {
                    reference: b.pose,
                    gt_index: gi,
                });
            }
        }
        Stage2Source::GtMatched | Stage2Source::Detections => {
            let dets = nms(decode_detections(grid_out, score_floor), nms_iou);
            for (gi, b) in gt_boxes.iter().enumerate() {
                let best = dets
                    .iter()
                    .map(|d| (iou(&d.bbox, b), d))
                    .filter(|(v, _)| *v >= match_iou)
                    .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                match (best, source) {
                    (Some((_, d)), _) => out.push(Stage2Actor {
                        reference: d.bbox.pose,
                        gt_index: gi,
                    }),
                    (None, Stage2Source::GtMatched) => out.push(Stage2Actor {
                        reference: b.pose,
                        gt_index: gi,
                    }),
                    (None, Stage2Source::Detections) => {}
                    _ => unreachable!(),
                }
            }
        }
    }
    let _ = model;
    out
}

/// One optimization step over a scene. Returns the loss components.
fn train_step(
    model: &JointModel,
    scene: &Scene,
    adam: &mut Adam,
    params: &[Parameter],
    lr: f64,
) -> Result<(f64, f64, f64, f64)> {
    let cfg = &model.cfg;
    let raster = model.raster_for(scene);
    let mode = BnMode::Train {
        update_running: true,
    };
    let fm = model.backbone.forward(&raster, mode);
    let grid_out = model.det_head.forward(&fm);

    let gt: Vec<&crate::scenegen::ActorTrack> = scene.vehicles().collect();
    let gt_boxes: Vec<OrientedBox> = gt.iter().map(|a| a.box_at(T0)).collect();
    let labels = assign_labels(&gt_boxes, &grid_out.geom);
    let l_det = detection_loss(&grid_out, &labels);

    let refs = no_grad(|| {
        stage2_references(
            model,
            &grid_out,
            &gt_boxes,
            cfg.model.stage2_source,
            cfg.train.stage2_score_floor,
            cfg.eval.nms_iou,
            cfg.eval.match_iou,
        )
    });
    let poses: Vec<Pose2> = refs.iter().map(|r| r.reference).collect();
    let forecasts = model.stage2(&fm, &poses, mode);
    let targets: Vec<Option<ActorTarget>> = refs
        .iter()
        .map(|r| {
            Some(ActorTarget::from_track(
                &gt[r.gt_index].poses,
                T0,
                &r.reference,
            ))
        })
        .collect();
    let selected: Vec<Option<usize>> = forecasts
        .iter()
        .zip(&targets)
        .map(|(f, t)| t.as_ref().map(|t| select_mode(f, t)))
        .collect();
    let fc_refs: Vec<&Forecast> = forecasts.iter().collect();
    let l_pred = crate::icm::prediction_loss(&fc_refs, &targets, &selected);

    let (l_col, col_value) = if cfg.model.interaction_loss_enabled {
        let obstacles = StaticObstacleSet::from_scene(scene);
        let entries: Vec<ActorPenalty> = refs
            .iter()
            .zip(&forecasts)
            .zip(&selected)
            .filter_map(|((r, f), sel)| {
                let m_hat = (*sel)?;
                let track = gt[r.gt_index];
                Some(ActorPenalty {
                    waypoints: f.waypoint_slice(m_hat),
                    reference: r.reference,
                    gt_width: track.width,
                    gt_length: track.length,
                    exclude_obstacle_id: Some(track.id),
                })
            })
            .collect();
        let l = interaction_loss(&entries, &obstacles, cfg.model.normalize_by_obstacles)
            .scale(cfg.model.interaction_loss_weight);
        let v = l.item();
        (Some(l), v)
    } else {
        (None, 0.0)
    };

    let mut total = l_det.add(&l_pred);
    if let Some(l) = &l_col {
        total = total.add(l);
    }
    let parts = (l_det.item(), l_pred.item(), col_value, total.item());
    if !parts.3.is_finite() {
        return Err(Error::Diverged(format!(
            "non-finite loss (det={} pred={} col={})",
            parts.0, parts.1, parts.2
        )));
    }
    total.backward();
    adam.step(params, lr);
    adam.zero_grads(params);
    Ok(parts)
}

/// Train a model over the scene set, deterministic in the config seed.
pub fn train(model: &JointModel, scenes: &SceneSet, out_dir: Option<&Path>) -> Result<RunRecord> {
    let cfg = &model.cfg;
    if scenes.scenes.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let start = std::time::Instant::now();
    let set = model.params();
    let mut adam = Adam::new(&set.params);
    let mut losses = Vec::with_capacity(cfg.train.iterations);
    let n = scenes.scenes.len();
    let mut order: Vec<usize> = Vec::new();
    for i in 0..cfg.train.iterations {
        if i % n == 0 {
            order = (0..n).collect();
            let mut rng =
                ChaCha8Rng::seed_from_u64(cfg.train.seed.wrapping_add(1 + (i / n) as u64));
            order.shuffle(&mut rng);
        }
        let scene = &scenes.scenes[order[i % n]];
        let lr = cfg.lr_at(i);
        let (det, pred, col, total) = train_step(model, scene, &mut adam, &set.params, lr)
            .map_err(|e| match e {
                Error::Diverged(m) => Error::Diverged(format!("iteration {i}: {m}")),
                other => other,
            })?;
        losses.push(LossRow {
            iteration: i,
            lr,
            det,
            pred,
            col,
            total,
        });
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        save_checkpoint(model, &adam, &dir.join("checkpoint.icmf"))?;
    }
    Ok(RunRecord {
        config_text: cfg.to_text(),
        seed: cfg.train.seed,
        losses,
        final_metrics: None,
        wall_ms: start.elapsed().as_millis(),
    })
}

/// Full checkpoint: parameters, batchnorm running stats, optimizer moments
/// and the step counter, so resuming reproduces training bit-identically.
pub fn save_checkpoint(model: &JointModel, adam: &Adam, path: &Path) -> Result<()> {
    let set = model.params();
    let mut records = Vec::new();
    records.extend(set.params.iter().cloned());
    records.extend(set.state.iter().cloned());
    records.extend(adam.state_tensors(&set.params));
    checkpoint::save(path, &records)
}

pub fn load_checkpoint(model: &JointModel, adam: &mut Adam, path: &Path) -> Result<()> {
    let records = checkpoint::load(path)?;
    let set = model.params();
    checkpoint::restore(&records, &set.params)?;
    // Restore running statistics; tolerate missing entries for forward
    // compatibility of pure-parameter checkpoints.
    for s in &set.state {
        if let Some(rec) = records.iter().find(|r| r.name == s.name) {
            s.tensor.set_data(&rec.tensor.to_vec());
        }
    }
    adam.load_state(&set.params, |name| {
        records
            .iter()
            .find(|r| r.name == name)
            .map(|r| r.tensor.to_vec())
    });
    Ok(())
}

/// Inference over one scene: detections at the evaluation floor, matching,
/// and most-probable-mode forecasts from the detection poses.
pub fn eval_scene(model: &JointModel, scene: &Scene) -> EvalScene {
    let cfg = &model.cfg;
    no_grad(|| {
        let raster = model.raster_for(scene);
        let fm = model.backbone.forward(&raster, BnMode::Eval);
        let grid_out = model.det_head.forward(&fm);
        let dets = nms(
            decode_detections(&grid_out, cfg.eval.score_floor),
            cfg.eval.nms_iou,
        );
        let gt: Vec<&crate::scenegen::ActorTrack> = scene.vehicles().collect();
        let labels: Vec<OrientedBox> = gt.iter().map(|a| a.box_at(T0)).collect();
        let label_ids: Vec<u32> = gt.iter().map(|a| a.id).collect();
        let label_future: Vec<Vec<Pose2>> = gt
            .iter()
            .map(|a| (1..=FUTURE_TICKS).map(|h| *a.pose(T0 + h)).collect())
            .collect();
        let det_label = match_detections(&dets, &labels, cfg.eval.match_iou);
        let poses: Vec<Pose2> = dets.iter().map(|d| d.bbox.pose).collect();
        let forecasts = model.stage2(&fm, &poses, BnMode::Eval);
        let det_forecast: Vec<Vec<Pose2>> = forecasts
            .iter()
            .zip(&poses)
            .map(|(f, pose)| {
                let mode = f.most_probable_mode();
                decode_to_world(pose, &f.decode_mode(mode))
            })
            .collect();
        EvalScene {
            labels,
            label_ids,
            label_future,
            dets,
            det_label,
            det_forecast,
            obstacles: StaticObstacleSet::from_scene(scene),
        }
    })
}

/// Evaluate a model over a scene set.
pub fn run_eval(model: &JointModel, scenes: &SceneSet) -> MetricsReport {
    let evaluated: Vec<EvalScene> = scenes.scenes.iter().map(|s| eval_scene(model, s)).collect();
    evaluate(&evaluated, &model.cfg.eval)
}

/// Generate the train/validation scene sets for a config. The validation
/// split uses a disjoint seed range and a translated map layout.
pub fn generate_datasets(cfg: &ExperimentConfig) -> Result<(SceneSet, SceneSet)> {
    let train_params = cfg.scenario_params((0.0, 0.0));
    let val_params = cfg.scenario_params((0.0, cfg.data.val_map_shift_y));
    let mut train = Vec::with_capacity(cfg.data.train_scenes);
    for i in 0..cfg.data.train_scenes {
        train.push(generate_scenario(
            cfg.data.scenario,
            &train_params,
            cfg.data.train_seed.wrapping_add(i as u64),
        )?);
    }
    let mut val = Vec::with_capacity(cfg.data.val_scenes);
    for i in 0..cfg.data.val_scenes {
        val.push(generate_scenario(
            cfg.data.scenario,
            &val_params,
            cfg.data.val_seed.wrapping_add(i as u64),
        )?);
    }
    Ok((
        SceneSet {
            scenes: train,
            key_frame_spacing: 0.2,
        },
        SceneSet {
            scenes: val,
            key_frame_spacing: 2.0,
        },
    ))
}

/// Write both splits under a directory as train.icms / val.icms.
pub fn write_datasets(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (train, val) = generate_datasets(cfg)?;
    dataset::write_dataset(&train, &dir.join("train.icms"))?;
    dataset::write_dataset(&val, &dir.join("val.icms"))?;
    Ok(())
}

pub fn load_datasets(dir: &Path) -> Result<(SceneSet, SceneSet)> {
    Ok((
        dataset::read_dataset(&dir.join("train.icms"))?,
        dataset::read_dataset(&dir.join("val.icms"))?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::ScenarioKind;

    fn micro_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::trend_preset();
        cfg.grid.extent_x = 32.0;
        cfg.grid.extent_y = 16.0;
        cfg.grid.res_xy = 1.0;
        cfg.grid.res_z = 3.2;
        cfg.model.channels = 8;
        cfg.model.ir_size_m = 8.0;
        cfg.data.scenario = ScenarioKind::AccQueue;
        cfg.data.train_scenes = 3;
        cfg.data.val_scenes = 2;
        cfg.data.n_actors = 3;
        cfg.train.iterations = 6;
        cfg
    }

    #[test]
    fn smoke_train_eval_pipeline() {
        let cfg = micro_config();
        let (train_set, val_set) = generate_datasets(&cfg).unwrap();
        let model = JointModel::new(&cfg).unwrap();
        let record = train(&model, &train_set, None).unwrap();
        assert_eq!(record.losses.len(), 6);
        assert!(record.losses.iter().all(|l| l.total.is_finite()));
        let report = run_eval(&model, &val_set);
        assert!(report.ap_at_iou50.is_finite());
    }

    #[test]
    fn loss_decomposition_identity() {
        let mut cfg = micro_config();
        cfg.model.interaction_loss_enabled = true;
        cfg.model.interaction_loss_weight = 0.7;
        let (train_set, _) = generate_datasets(&cfg).unwrap();
        let model = JointModel::new(&cfg).unwrap();
        let record = train(&model, &train_set, None).unwrap();
        for row in &record.losses {
            let sum = row.det + row.pred + row.col;
            assert!(
                (row.total - sum).abs() <= 1e-9,
                "total {} vs parts {}",
                row.total,
                sum
            );
        }
    }

    #[test]
    fn deterministic_training_identical_losses() {
        let cfg = micro_config();
        let (train_set, _) = generate_datasets(&cfg).unwrap();
        let run = || {
            let model = JointModel::new(&cfg).unwrap();
            train(&model, &train_set, None).unwrap()
        };
        let a = run();
        let b = run();
        for (x, y) in a.losses.iter().zip(&b.losses) {
            assert_eq!(x.total, y.total, "training must be bit-deterministic");
        }
    }

    #[test]
    fn checkpoint_resume_bit_identical() {
        // All runs share one schedule (iterations = 6); the checkpoint cut
        // happens after step 4 and a fresh model resumes from the file.
        let cfg = micro_config();
        let (train_set, _) = generate_datasets(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ck = dir.path().join("checkpoint.icmf");

        let drive = |model: &JointModel, adam: &mut Adam, range: std::ops::Range<usize>| {
            let set = model.params();
            let mut out = Vec::new();
            for i in range {
                let scene = pick_scene(&cfg, &train_set, i);
                let lr = cfg.lr_at(i);
                out.push(train_step(model, scene, adam, &set.params, lr).unwrap());
            }
            out
        };

        let model_a = JointModel::new(&cfg).unwrap();
        let set_a = model_a.params();
        let mut adam_a = Adam::new(&set_a.params);
        drive(&model_a, &mut adam_a, 0..4);
        save_checkpoint(&model_a, &adam_a, &ck).unwrap();

        // Fresh model resumes from the file.
        let model_c = JointModel::new(&cfg).unwrap();
        let set_c = model_c.params();
        let mut adam_c = Adam::new(&set_c.params);
        load_checkpoint(&model_c, &mut adam_c, &ck).unwrap();
        let resumed = drive(&model_c, &mut adam_c, 4..6);

        // Reference: six uninterrupted steps.
        let model_b = JointModel::new(&cfg).unwrap();
        let set_b = model_b.params();
        let mut adam_b = Adam::new(&set_b.params);
        let straight = drive(&model_b, &mut adam_b, 0..6);
        for (got, want) in resumed.iter().zip(straight[4..].iter()) {
            assert_eq!(got.3, want.3, "resumed steps must match bit-exactly");
        }
    }

    fn pick_scene<'a>(
        cfg: &ExperimentConfig,
        set: &'a SceneSet,
        iteration: usize,
    ) -> &'a Scene {
        let n = set.scenes.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.train.seed.wrapping_add(1 + (iteration / n) as u64),
        );
        order.shuffle(&mut rng);
        &set.scenes[order[iteration % n]]
    }

    #[test]
    fn divergence_is_reported() {
        let mut cfg = micro_config();
        cfg.train.lr = 1e10; // blow up on purpose
        cfg.train.iterations = 30;
        let (train_set, _) = generate_datasets(&cfg).unwrap();
        let model = JointModel::new(&cfg).unwrap();
        match train(&model, &train_set, None) {
            Err(Error::Diverged(m)) => assert!(m.contains("iteration")),
            Ok(_) => {} // extremely unlikely but not wrong
            Err(e) => panic!("expected divergence, got {e:?}"),
        }
    }
}
