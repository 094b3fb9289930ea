//! Experiment sweeps along one configuration axis, with per-seed datasets
//! and paired seeds across axis values.
//!
//! Every (value, seed) pair trains a fresh model on that seed's dataset and
//! evaluates on its validation split, so comparisons across values are
//! paired by seed. Runs are independent and execute in parallel; results
//! are collected in deterministic order.

use super::{generate_datasets, run_eval, train, ExperimentConfig, JointModel, RunRecord};
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::scenegen::SceneSet;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    IrSize,
    FrontToBack,
    GnnOnOff,
    InteractionLoss,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ir_size" => Ok(Self::IrSize),
            "front_to_back" => Ok(Self::FrontToBack),
            "gnn_on_off" => Ok(Self::GnnOnOff),
            "interaction_loss" => Ok(Self::InteractionLoss),
            other => Err(Error::Config(format!("unknown sweep axis '{other}'"))),
        }
    }
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::IrSize => "ir_size",
            Self::FrontToBack => "front_to_back",
            Self::GnnOnOff => "gnn_on_off",
            Self::InteractionLoss => "interaction_loss",
        }
    }

    /// Apply an axis value to a config.
    pub fn apply(&self, cfg: &mut ExperimentConfig, value: f64) {
        match self {
            Self::IrSize => cfg.model.ir_size_m = value,
            Self::FrontToBack => {
                cfg.model.ir_front_to_back = format!("{value}:1");
            }
            Self::GnnOnOff => cfg.model.gnn_enabled = value != 0.0,
            Self::InteractionLoss => cfg.model.interaction_loss_enabled = value != 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRun {
    pub axis_value: f64,
    pub seed: u64,
    pub metrics: MetricsReport,
    pub wall_ms: u128,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: String,
    pub runs: Vec<SweepRun>,
}

/// Derive the per-seed data configuration: disjoint seed ranges per sweep
/// seed, shared across axis values so comparisons stay paired.
pub fn seeded_config(base: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.train.seed = seed;
    cfg.data.train_seed = base.data.train_seed.wrapping_add(seed.wrapping_mul(1_000_000));
    cfg.data.val_seed = base.data.val_seed.wrapping_add(seed.wrapping_mul(1_000_000));
    cfg
}

/// Train and evaluate one (value, seed) cell on a prebuilt dataset.
fn run_cell(
    base: &ExperimentConfig,
    axis: SweepAxis,
    value: f64,
    seed: u64,
    train_set: &SceneSet,
    val_set: &SceneSet,
    out_dir: Option<&Path>,
) -> Result<SweepRun> {
    let mut cfg = seeded_config(base, seed);
    axis.apply(&mut cfg, value);
    let model = JointModel::new(&cfg)?;
    let run_dir = out_dir.map(|d| d.join(format!("{}_{}_s{}", axis.as_str(), value, seed)));
    let record: RunRecord = train(&model, train_set, run_dir.as_deref())?;
    let metrics = run_eval(&model, val_set);
    if let Some(dir) = &run_dir {
        std::fs::write(dir.join("metrics.csv"), metrics.to_csv())?;
        let mut rec = record;
        rec.final_metrics = Some(metrics.clone());
        rec.save(&dir.join("run_record.json"))?;
    }
    Ok(SweepRun {
        axis_value: value,
        seed,
        metrics,
        wall_ms: 0,
    })
}

/// Full sweep: |values| × |seeds| runs. Datasets are generated once per seed
/// and shared across values.
pub fn sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    seeds: &[u64],
    out_dir: Option<&Path>,
) -> Result<SweepResult> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    // Per-seed datasets, generated up front (cheap next to training).
    let mut datasets = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = seeded_config(base, seed);
        datasets.push(generate_datasets(&cfg)?);
    }
    let cells: Vec<(usize, f64, u64)> = values
        .iter()
        .flat_map(|&v| seeds.iter().enumerate().map(move |(si, &s)| (si, v, s)))
        .collect();
    let runs: Vec<Result<SweepRun>> = cells
        .par_iter()
        .map(|&(si, value, seed)| {
            let (train_set, val_set) = &datasets[si];
            run_cell(base, axis, value, seed, train_set, val_set, out_dir)
        })
        .collect();
    let mut ok = Vec::with_capacity(runs.len());
    for r in runs {
        ok.push(r?);
    }
    // Deterministic result order regardless of scheduling.
    ok.sort_by(|a, b| {
        a.axis_value
            .partial_cmp(&b.axis_value)
            .unwrap()
            .then(a.seed.cmp(&b.seed))
    });
    let result = SweepResult {
        axis: axis.as_str().to_string(),
        runs: ok,
    };
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("runs.csv"), runs_csv(&result))?;
        std::fs::write(dir.join("summary.csv"), summary_csv(&result))?;
    }
    Ok(result)
}

const METRICS: [&str; 5] = [
    "ap_at_iou50",
    "de_4s",
    "actor_actor_overlap",
    "actor_static_overlap",
    "actor_static_nonvehicle_overlap",
];

fn metric_value(m: &MetricsReport, name: &str) -> f64 {
    match name {
        "ap_at_iou50" => m.ap_at_iou50,
        "de_4s" => m.de_4s,
        "actor_actor_overlap" => m.actor_actor_overlap,
        "actor_static_overlap" => m.actor_static_overlap,
        "actor_static_nonvehicle_overlap" => m.actor_static_nonvehicle_overlap,
        _ => f64::NAN,
    }
}

/// Per-run rows: axis, value, seed, metric, metric value.
pub fn runs_csv(result: &SweepResult) -> String {
    let mut s = String::from("axis,axis_value,seed,metric,value\n");
    for run in &result.runs {
        for m in METRICS {
            s.push_str(&format!(
                "{},{},{},{},{:.6}\n",
                result.axis,
                run.axis_value,
                run.seed,
                m,
                metric_value(&run.metrics, m)
            ));
        }
    }
    s
}

/// Aggregated rows: one per (axis value, metric) with mean and the standard
/// deviation over seeds.
pub fn summary_csv(result: &SweepResult) -> String {
    let mut values: Vec<f64> = result.runs.iter().map(|r| r.axis_value).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    let mut s = String::from("axis,axis_value,metric,mean,std_over_seeds,n_seeds\n");
    for v in values {
        let group: Vec<&SweepRun> = result
            .runs
            .iter()
            .filter(|r| r.axis_value == v)
            .collect();
        for m in METRICS {
            let xs: Vec<f64> = group.iter().map(|r| metric_value(&r.metrics, m)).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n.max(1.0);
            s.push_str(&format!(
                "{},{},{},{:.6},{:.6},{}\n",
                result.axis,
                v,
                m,
                mean,
                var.sqrt(),
                xs.len()
            ));
        }
    }
    s
}

/// Emit SVG plots (one per metric) from a sweep summary.
pub fn plot_summary(result: &SweepResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut values: Vec<f64> = result.runs.iter().map(|r| r.axis_value).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    for m in METRICS {
        let points: Vec<(f64, f64)> = values
            .iter()
            .map(|&v| {
                let xs: Vec<f64> = result
                    .runs
                    .iter()
                    .filter(|r| r.axis_value == v)
                    .map(|r| metric_value(&r.metrics, m))
                    .collect();
                (v, xs.iter().sum::<f64>() / xs.len().max(1) as f64)
            })
            .collect();
        let svg = super::plot::line_plot(
            &format!("{m} vs {}", result.axis),
            &result.axis,
            m,
            &[super::plot::Series {
                name: "mean over seeds".into(),
                points,
            }],
        );
        std::fs::write(dir.join(format!("{m}.svg")), svg)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::ScenarioKind;

    #[test]
    fn sweep_row_counts_and_order() {
        let mut cfg = ExperimentConfig::trend_preset();
        cfg.grid.extent_x = 32.0;
        cfg.grid.extent_y = 16.0;
        cfg.grid.res_xy = 1.0;
        cfg.grid.res_z = 3.2;
        cfg.model.channels = 6;
        cfg.data.scenario = ScenarioKind::AccQueue;
        cfg.data.train_scenes = 2;
        cfg.data.val_scenes = 1;
        cfg.data.n_actors = 2;
        cfg.train.iterations = 2;
        let result = sweep(&cfg, SweepAxis::IrSize, &[0.0, 8.0], &[0, 1], None).unwrap();
        assert_eq!(result.runs.len(), 4, "|axis| × |seeds| runs");
        let csv = runs_csv(&result);
        assert_eq!(csv.lines().count(), 1 + 4 * 5);
        let summary = summary_csv(&result);
        assert_eq!(summary.lines().count(), 1 + 2 * 5);
        // Paired by seed: both values share the same seeds.
        for v in [0.0, 8.0] {
            let seeds: Vec<u64> = result
                .runs
                .iter()
                .filter(|r| r.axis_value == v)
                .map(|r| r.seed)
                .collect();
            assert_eq!(seeds, vec![0, 1]);
        }
    }
}
