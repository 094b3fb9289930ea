//! Experiment configuration: a flat sectioned key=value text file with a
//! canonical writer, so configs round-trip exactly. See docs/config.md.

use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::gnn::GnnAblation;
use crate::icm::IcnnDesign;
use crate::raster::GridSpec;
use crate::scenegen::{ScenarioKind, ScenarioParams};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage2Source {
    /// Matched detection when one exists, ground truth otherwise (default).
    GtMatched,
    /// Always the ground-truth pose.
    Gt,
    /// Matched detections only; unmatched actors are skipped.
    Detections,
}

impl std::str::FromStr for Stage2Source {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt_matched" => Ok(Self::GtMatched),
            "gt" => Ok(Self::Gt),
            "detections" => Ok(Self::Detections),
            other => Err(Error::Config(format!("unknown stage2_source '{other}'"))),
        }
    }
}

impl Stage2Source {
    fn as_str(&self) -> &'static str {
        match self {
            Self::GtMatched => "gt_matched",
            Self::Gt => "gt",
            Self::Detections => "detections",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub scenario: ScenarioKind,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub train_seed: u64,
    pub val_seed: u64,
    /// Coarse layout translation applied to the validation split only.
    pub val_map_shift_y: f64,
    pub n_actors: usize,
    pub n_static: usize,
    pub speed_min: f64,
    pub speed_max: f64,
    pub point_density: f64,
    pub ground_density: f64,
    pub occlusion: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub channels: usize,
    pub ir_size_m: f64,
    pub ir_front_to_back: String,
    pub ir_in_actor_frame: bool,
    pub icnn_design: IcnnDesign,
    pub gnn_enabled: bool,
    pub gnn_iterations: usize,
    pub gnn_ablation: GnnAblation,
    pub interaction_loss_enabled: bool,
    pub interaction_loss_weight: f64,
    pub normalize_by_obstacles: bool,
    pub stage2_source: Stage2Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: f64,
    /// Learning-rate schedule: multiply by `factor` once the iteration
    /// fraction passes each milestone.
    pub decay1_at: f64,
    pub decay1_factor: f64,
    pub decay2_at: f64,
    pub decay2_factor: f64,
    pub seed: u64,
    /// Training-time score floor for matching detections into stage two.
    pub stage2_score_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchParams {
    pub repeats: usize,
    pub actors: usize,
    pub ir_size_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub bench: BenchParams,
}

impl Default for ExperimentConfig {
    /// Desk-scale defaults: 240×160×8 grid over 60×40×3.2 m, 64 channels.
    fn default() -> Self {
        Self {
            grid: GridSpec::desk_default(),
            data: DataConfig {
                scenario: ScenarioKind::Mixed,
                train_scenes: 200,
                val_scenes: 80,
                train_seed: 1,
                val_seed: 900_001,
                val_map_shift_y: 6.0,
                n_actors: 5,
                n_static: 3,
                speed_min: 3.0,
                speed_max: 9.0,
                point_density: 5.0,
                ground_density: 0.03,
                occlusion: false,
            },
            model: ModelConfig {
                channels: 64,
                ir_size_m: 30.0,
                ir_front_to_back: "5:1".into(),
                ir_in_actor_frame: true,
                icnn_design: IcnnDesign::A,
                gnn_enabled: false,
                gnn_iterations: 1,
                gnn_ablation: GnnAblation::None,
                interaction_loss_enabled: false,
                interaction_loss_weight: 1.0,
                normalize_by_obstacles: false,
                stage2_source: Stage2Source::GtMatched,
            },
            train: TrainConfig {
                iterations: 2000,
                lr: 2e-4,
                decay1_at: 0.75,
                decay1_factor: 0.1,
                decay2_at: 0.95,
                decay2_factor: 0.01,
                seed: 0,
                stage2_score_floor: 0.3,
            },
            eval: EvalConfig::default(),
            bench: BenchParams {
                repeats: 30,
                actors: 16,
                ir_size_max: 30.0,
            },
        }
    }
}

impl ExperimentConfig {
    /// Smaller grid and width for the trend experiments: keeps a full
    /// training run in the minutes range on one core.
    pub fn trend_preset() -> Self {
        let mut cfg = Self::default();
        cfg.grid = GridSpec {
            extent_x: 48.0,
            extent_y: 32.0,
            extent_z: 3.2,
            res_xy: 0.5,
            res_z: 1.6,
            past_sweeps: 9,
        };
        cfg.model.channels = 32;
        cfg.train.iterations = 600;
        cfg
    }

    pub fn scenario_params(&self, map_shift: (f64, f64)) -> ScenarioParams {
        ScenarioParams {
            n_actors: self.data.n_actors,
            n_static: self.data.n_static,
            speed_min: self.data.speed_min,
            speed_max: self.data.speed_max,
            map_shift,
            extent_x: self.grid.extent_x,
            extent_y: self.grid.extent_y,
            point_density: self.data.point_density,
            ground_density: self.data.ground_density,
            occlusion: self.data.occlusion,
        }
    }

    pub fn lr_at(&self, iteration: usize) -> f64 {
        let frac = iteration as f64 / self.train.iterations.max(1) as f64;
        if frac >= self.train.decay2_at {
            self.train.lr * self.train.decay2_factor
        } else if frac >= self.train.decay1_at {
            self.train.lr * self.train.decay1_factor
        } else {
            self.train.lr
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.grid.height() % 8 != 0 || self.grid.width() % 8 != 0 {
            return Err(Error::Config(
                "grid cell counts must be divisible by 8 for the extractor".into(),
            ));
        }
        crate::icm::IrSpec::parse_ratio(&self.model.ir_front_to_back)?;
        if !(1..=2).contains(&self.model.gnn_iterations) {
            return Err(Error::Config("gnn_iterations must be 1 or 2".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("# experiment configuration (key = value, sections in brackets)\n");
        s.push_str("[grid]\n");
        s.push_str(&format!("extent_x = {}\n", self.grid.extent_x));
        s.push_str(&format!("extent_y = {}\n", self.grid.extent_y));
        s.push_str(&format!("extent_z = {}\n", self.grid.extent_z));
        s.push_str(&format!("res_xy = {}\n", self.grid.res_xy));
        s.push_str(&format!("res_z = {}\n", self.grid.res_z));
        s.push_str(&format!("past_sweeps = {}\n", self.grid.past_sweeps));
        s.push_str("\n[data]\n");
        s.push_str(&format!(
            "scenario = {}\n",
            match self.data.scenario {
                ScenarioKind::AccQueue => "acc_queue",
                ScenarioKind::Turn => "turn",
                ScenarioKind::Nudge => "nudge",
                ScenarioKind::Mixed => "mixed",
            }
        ));
        s.push_str(&format!("train_scenes = {}\n", self.data.train_scenes));
        s.push_str(&format!("val_scenes = {}\n", self.data.val_scenes));
        s.push_str(&format!("train_seed = {}\n", self.data.train_seed));
        s.push_str(&format!("val_seed = {}\n", self.data.val_seed));
        s.push_str(&format!("val_map_shift_y = {}\n", self.data.val_map_shift_y));
        s.push_str(&format!("n_actors = {}\n", self.data.n_actors));
        s.push_str(&format!("n_static = {}\n", self.data.n_static));
        s.push_str(&format!("speed_min = {}\n", self.data.speed_min));
        s.push_str(&format!("speed_max = {}\n", self.data.speed_max));
        s.push_str(&format!("point_density = {}\n", self.data.point_density));
        s.push_str(&format!("ground_density = {}\n", self.data.ground_density));
        s.push_str(&format!("occlusion = {}\n", self.data.occlusion));
        s.push_str("\n[model]\n");
        s.push_str(&format!("channels = {}\n", self.model.channels));
        s.push_str(&format!("ir_size_m = {}\n", self.model.ir_size_m));
        s.push_str(&format!("ir_front_to_back = {}\n", self.model.ir_front_to_back));
        s.push_str(&format!("ir_in_actor_frame = {}\n", self.model.ir_in_actor_frame));
        s.push_str(&format!(
            "icnn_design = {}\n",
            match self.model.icnn_design {
                IcnnDesign::A => "a",
                IcnnDesign::B => "b",
                IcnnDesign::C => "c",
            }
        ));
        s.push_str(&format!("gnn_enabled = {}\n", self.model.gnn_enabled));
        s.push_str(&format!("gnn_iterations = {}\n", self.model.gnn_iterations));
        s.push_str(&format!(
            "gnn_ablation = {}\n",
            match self.model.gnn_ablation {
                GnnAblation::None => "none",
                GnnAblation::OnlyAttributes => "only_attributes",
                GnnAblation::OnlyRelative => "only_relative",
                GnnAblation::EdgesOff => "edges_off",
            }
        ));
        s.push_str(&format!(
            "interaction_loss_enabled = {}\n",
            self.model.interaction_loss_enabled
        ));
        s.push_str(&format!(
            "interaction_loss_weight = {}\n",
            self.model.interaction_loss_weight
        ));
        s.push_str(&format!(
            "normalize_by_obstacles = {}\n",
            self.model.normalize_by_obstacles
        ));
        s.push_str(&format!(
            "stage2_source = {}\n",
            self.model.stage2_source.as_str()
        ));
        s.push_str("\n[train]\n");
        s.push_str(&format!("iterations = {}\n", self.train.iterations));
        s.push_str(&format!("lr = {}\n", self.train.lr));
        s.push_str(&format!("decay1_at = {}\n", self.train.decay1_at));
        s.push_str(&format!("decay1_factor = {}\n", self.train.decay1_factor));
        s.push_str(&format!("decay2_at = {}\n", self.train.decay2_at));
        s.push_str(&format!("decay2_factor = {}\n", self.train.decay2_factor));
        s.push_str(&format!("seed = {}\n", self.train.seed));
        s.push_str(&format!(
            "stage2_score_floor = {}\n",
            self.train.stage2_score_floor
        ));
        s.push_str("\n[eval]\n");
        s.push_str(&format!("nms_iou = {}\n", self.eval.nms_iou));
        s.push_str(&format!("score_floor = {}\n", self.eval.score_floor));
        s.push_str(&format!("match_iou = {}\n", self.eval.match_iou));
        s.push_str(&format!("recall_target = {}\n", self.eval.recall_target));
        s.push_str(&format!("iop_threshold = {}\n", self.eval.iop_threshold));
        s.push_str("\n[bench]\n");
        s.push_str(&format!("repeats = {}\n", self.bench.repeats));
        s.push_str(&format!("actors = {}\n", self.bench.actors));
        s.push_str(&format!("ir_size_max = {}\n", self.bench.ir_size_max));
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                current = line[1..line.len() - 1].trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected 'key = value', got '{raw}'",
                    ln + 1
                )));
            };
            if current.is_empty() {
                return Err(Error::Config(format!(
                    "line {}: key outside any [section]",
                    ln + 1
                )));
            }
            sections
                .get_mut(&current)
                .unwrap()
                .insert(k.trim().to_string(), v.trim().to_string());
        }

        let mut cfg = Self::default();
        let get = |sections: &BTreeMap<String, BTreeMap<String, String>>,
                   sec: &str,
                   key: &str|
         -> Option<String> { sections.get(sec).and_then(|m| m.get(key).cloned()) };
        macro_rules! set {
            ($sec:literal, $key:literal, $slot:expr, $ty:ty) => {
                if let Some(v) = get(&sections, $sec, $key) {
                    $slot = v.parse::<$ty>().map_err(|_| {
                        Error::Config(format!("bad value for {}.{}: '{v}'", $sec, $key))
                    })?;
                }
            };
        }
        set!("grid", "extent_x", cfg.grid.extent_x, f64);
        set!("grid", "extent_y", cfg.grid.extent_y, f64);
        set!("grid", "extent_z", cfg.grid.extent_z, f64);
        set!("grid", "res_xy", cfg.grid.res_xy, f64);
        set!("grid", "res_z", cfg.grid.res_z, f64);
        set!("grid", "past_sweeps", cfg.grid.past_sweeps, usize);
        if let Some(v) = get(&sections, "data", "scenario") {
            cfg.data.scenario = v.parse()?;
        }
        set!("data", "train_scenes", cfg.data.train_scenes, usize);
        set!("data", "val_scenes", cfg.data.val_scenes, usize);
        set!("data", "train_seed", cfg.data.train_seed, u64);
        set!("data", "val_seed", cfg.data.val_seed, u64);
        set!("data", "val_map_shift_y", cfg.data.val_map_shift_y, f64);
        set!("data", "n_actors", cfg.data.n_actors, usize);
        set!("data", "n_static", cfg.data.n_static, usize);
        set!("data", "speed_min", cfg.data.speed_min, f64);
        set!("data", "speed_max", cfg.data.speed_max, f64);
        set!("data", "point_density", cfg.data.point_density, f64);
        set!("data", "ground_density", cfg.data.ground_density, f64);
        set!("data", "occlusion", cfg.data.occlusion, bool);
        set!("model", "channels", cfg.model.channels, usize);
        set!("model", "ir_size_m", cfg.model.ir_size_m, f64);
        if let Some(v) = get(&sections, "model", "ir_front_to_back") {
            crate::icm::IrSpec::parse_ratio(&v)?;
            cfg.model.ir_front_to_back = v;
        }
        set!("model", "ir_in_actor_frame", cfg.model.ir_in_actor_frame, bool);
        if let Some(v) = get(&sections, "model", "icnn_design") {
            cfg.model.icnn_design = v.parse()?;
        }
        set!("model", "gnn_enabled", cfg.model.gnn_enabled, bool);
        set!("model", "gnn_iterations", cfg.model.gnn_iterations, usize);
        if let Some(v) = get(&sections, "model", "gnn_ablation") {
            cfg.model.gnn_ablation = v.parse()?;
        }
        set!(
            "model",
            "interaction_loss_enabled",
            cfg.model.interaction_loss_enabled,
            bool
        );
        set!(
            "model",
            "interaction_loss_weight",
            cfg.model.interaction_loss_weight,
            f64
        );
        set!(
            "model",
            "normalize_by_obstacles",
            cfg.model.normalize_by_obstacles,
            bool
        );
        if let Some(v) = get(&sections, "model", "stage2_source") {
            cfg.model.stage2_source = v.parse()?;
        }
        set!("train", "iterations", cfg.train.iterations, usize);
        set!("train", "lr", cfg.train.lr, f64);
        set!("train", "decay1_at", cfg.train.decay1_at, f64);
        set!("train", "decay1_factor", cfg.train.decay1_factor, f64);
        set!("train", "decay2_at", cfg.train.decay2_at, f64);
        set!("train", "decay2_factor", cfg.train.decay2_factor, f64);
        set!("train", "seed", cfg.train.seed, u64);
        set!(
            "train",
            "stage2_score_floor",
            cfg.train.stage2_score_floor,
            f64
        );
        set!("eval", "nms_iou", cfg.eval.nms_iou, f64);
        set!("eval", "score_floor", cfg.eval.score_floor, f64);
        set!("eval", "match_iou", cfg.eval.match_iou, f64);
        set!("eval", "recall_target", cfg.eval.recall_target, f64);
        set!("eval", "iop_threshold", cfg.eval.iop_threshold, f64);
        set!("bench", "repeats", cfg.bench.repeats, usize);
        set!("bench", "actors", cfg.bench.actors, usize);
        set!("bench", "ir_size_max", cfg.bench.ir_size_max, f64);

        // Reject unknown keys so typos fail loudly.
        let known = Self::default().to_text();
        for (sec, kv) in &sections {
            for key in kv.keys() {
                let needle = format!("{key} = ");
                let sec_hdr = format!("[{sec}]");
                let in_known = known
                    .split(&sec_hdr)
                    .nth(1)
                    .map(|rest| {
                        rest.split('[')
                            .next()
                            .map(|body| body.contains(&needle))
                            .unwrap_or(false)
                    })
                    .unwrap_or(false);
                if !in_known {
                    return Err(Error::Config(format!("unknown config key {sec}.{key}")));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_identity() {
        let mut cfg = ExperimentConfig::trend_preset();
        cfg.model.ir_size_m = 12.5;
        cfg.model.gnn_enabled = true;
        cfg.model.gnn_ablation = GnnAblation::OnlyRelative;
        cfg.train.lr = 3.25e-4;
        let text = cfg.to_text();
        let parsed = ExperimentConfig::from_text(&text).unwrap();
        assert_eq!(parsed, cfg);
        // Writer is canonical: writing the parsed config reproduces bytes.
        assert_eq!(parsed.to_text(), text);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut text = ExperimentConfig::default().to_text();
        text.push_str("\n[model]\nwarp_drive = true\n");
        match ExperimentConfig::from_text(&text) {
            Err(Error::Config(m)) => assert!(m.contains("warp_drive")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let text = "# top comment\n[train]\nseed = 42 # inline\n\n";
        let cfg = ExperimentConfig::from_text(text).unwrap();
        assert_eq!(cfg.train.seed, 42);
    }

    #[test]
    fn lr_schedule_milestones() {
        let close = |a: f64, b: f64| (a - b).abs() < 1e-16 + 1e-12 * b.abs();
        let mut cfg = ExperimentConfig::default();
        cfg.train.iterations = 1000;
        assert!(close(cfg.lr_at(0), 2e-4));
        assert!(close(cfg.lr_at(749), 2e-4));
        assert!(close(cfg.lr_at(750), 2e-5));
        assert!(close(cfg.lr_at(760), 2e-5), "lr at 76% of training is 2e-5");
        assert!(close(cfg.lr_at(949), 2e-5));
        assert!(close(cfg.lr_at(950), 2e-6));
    }

    #[test]
    fn bad_values_rejected() {
        assert!(ExperimentConfig::from_text("[train]\niterations = minus").is_err());
        assert!(ExperimentConfig::from_text("[model]\ngnn_iterations = 7").is_err());
        assert!(ExperimentConfig::from_text("seed = 3").is_err());
    }
}
