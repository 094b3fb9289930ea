//! Per-module inference latency: the convolutional second stage at zero and
//! maximum interaction-region size, and the graph stage, on identical scenes
//! with a fixed actor count, plus scaling fits over an actor sweep.
//!
//! Timings are medians of wall-clock repeats after warmup, in inference mode
//! (no gradient recording), with the shared first stage excluded.

use crate::backbone::{Backbone, FeatureMap};
use crate::geom::Pose2;
use crate::gnn::{GnnAblation, GnnStage};
use crate::icm::{crop_rroi, Icnn, IcnnDesign, IrSpec, PredictHead};
use crate::raster::{build_raster, GridSpec};
use crate::scenegen::{generate_scenario, ScenarioKind, ScenarioParams};
use crate::tensorad::nn::BnMode;
use crate::tensorad::{no_grad, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub channels: usize,
    pub grid: GridSpec,
    pub ir_size_max: f64,
    pub front_fraction: f64,
    pub gnn_iterations: usize,
    pub repeats: usize,
    pub actors: usize,
    pub v_sweep: Vec<usize>,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            grid: GridSpec {
                extent_x: 48.0,
                extent_y: 32.0,
                extent_z: 3.2,
                res_xy: 0.5,
                res_z: 1.6,
                past_sweeps: 9,
            },
            ir_size_max: 30.0,
            front_fraction: 5.0 / 6.0,
            gnn_iterations: 1,
            repeats: 30,
            actors: 16,
            v_sweep: vec![4, 8, 16, 32],
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub module: String,
    pub ir_size_m: f64,
    pub actors: usize,
    pub median_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub icm0_ms: f64,
    pub icm_max_ms: f64,
    pub gnn_ms: f64,
    /// ICM(max) time vs V, linear model.
    pub icm_fit: LinearFit,
    /// GNN time vs V on log-log axes: slope is the growth exponent.
    pub gnn_loglog: LinearFit,
    pub hardware: String,
    pub actors: usize,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("module,ir_size_m,actors,median_ms\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{:.4}\n",
                r.module, r.ir_size_m, r.actors, r.median_ms
            ));
        }
        s
    }
}

fn median_ms(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

fn time_median(repeats: usize, mut f: impl FnMut()) -> f64 {
    f();
    f(); // warmup
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        f();
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    median_ms(&mut samples)
}

fn least_squares(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx.max(1e-30);
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let p = slope * x + intercept;
            (y - p) * (y - p)
        })
        .sum();
    LinearFit {
        slope,
        intercept,
        r2: 1.0 - ss_res / ss_tot.max(1e-30),
    }
}

fn hardware_string() -> String {
    std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .map(|l| l.split(':').nth(1).unwrap_or("?").trim().to_string())
        })
        .unwrap_or_else(|| "unknown".to_string())
}

/// Evenly spread actor poses for a given V, independent of scene content.
fn bench_poses(v: usize, grid: &GridSpec) -> Vec<Pose2> {
    let cols = (v as f64).sqrt().ceil() as usize;
    (0..v)
        .map(|i| {
            let r = i / cols;
            let c = i % cols;
            Pose2::new(
                -grid.extent_x * 0.3 + c as f64 * 6.0,
                -grid.extent_y * 0.3 + r as f64 * 5.0,
                0.3 * (i % 5) as f64,
            )
        })
        .collect()
}

struct BenchModel {
    icnn0: Icnn,
    icnn_max: Icnn,
    head: PredictHead,
    gnn: GnnStage,
    ir0: IrSpec,
    ir_max: IrSpec,
}

impl BenchModel {
    fn new(cfg: &BenchConfig) -> (Backbone, Self) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let in_ch = cfg.grid.total_channels();
        let backbone = Backbone::new(&mut rng, in_ch, cfg.channels);
        let ir0 = IrSpec::new(0.0, cfg.front_fraction, true);
        let ir_max = IrSpec::new(cfg.ir_size_max, cfg.front_fraction, true);
        let icnn0 = Icnn::new(&mut rng, cfg.channels, ir0.crop_grid, IcnnDesign::A);
        let icnn_max = Icnn::new(&mut rng, cfg.channels, ir_max.crop_grid, IcnnDesign::A);
        let head = PredictHead::new(&mut rng, cfg.channels);
        let gnn = GnnStage::new(
            &mut rng,
            cfg.channels,
            cfg.channels,
            cfg.gnn_iterations,
            GnnAblation::None,
        );
        (
            backbone,
            Self {
                icnn0,
                icnn_max,
                head,
                gnn,
                ir0,
                ir_max,
            },
        )
    }

    fn icm_pass(&self, fm: &FeatureMap, poses: &[Pose2], max_ir: bool) {
        let (icnn, ir) = if max_ir {
            (&self.icnn_max, &self.ir_max)
        } else {
            (&self.icnn0, &self.ir0)
        };
        for p in poses {
            let crop = crop_rroi(fm, p, ir);
            let feat = icnn.forward(&crop, BnMode::Eval);
            let _ = self.head.forward(&feat);
        }
    }

    fn actor_features(&self, fm: &FeatureMap, poses: &[Pose2]) -> Vec<Tensor> {
        poses
            .iter()
            .map(|p| {
                let crop = crop_rroi(fm, p, &self.ir0);
                self.icnn0.forward(&crop, BnMode::Eval)
            })
            .collect()
    }
}

/// Run the full benchmark: headline numbers at `cfg.actors`, then the actor
/// sweep for scaling fits.
pub fn run_bench(cfg: &BenchConfig) -> BenchReport {
    let (backbone, model) = BenchModel::new(cfg);

    // Fixed-seed input scene; the first stage runs once, untimed.
    let params = ScenarioParams {
        extent_x: cfg.grid.extent_x,
        extent_y: cfg.grid.extent_y,
        ..Default::default()
    };
    let scene = generate_scenario(ScenarioKind::Mixed, &params, cfg.seed)
        .expect("bench scene generation");
    let raster = build_raster(&scene.sweeps, &scene.map_polygons, &cfg.grid);
    let fm = no_grad(|| backbone.forward(&raster, BnMode::Eval));

    let mut rows = Vec::new();
    let mut headline = (0.0, 0.0, 0.0);
    let mut icm_xs = Vec::new();
    let mut icm_ys = Vec::new();
    let mut gnn_xs = Vec::new();
    let mut gnn_ys = Vec::new();

    let mut v_list = cfg.v_sweep.clone();
    if !v_list.contains(&cfg.actors) {
        v_list.push(cfg.actors);
        v_list.sort_unstable();
    }
    for &v in &v_list {
        let poses = bench_poses(v, &cfg.grid);
        let icm0 = time_median(cfg.repeats, || {
            no_grad(|| model.icm_pass(&fm, &poses, false))
        });
        let icm_max = time_median(cfg.repeats, || {
            no_grad(|| model.icm_pass(&fm, &poses, true))
        });
        let features = no_grad(|| model.actor_features(&fm, &poses));
        let gnn = time_median(cfg.repeats, || {
            no_grad(|| {
                let _ = model.gnn.run(&features, &poses, BnMode::Eval);
            })
        });
        rows.push(BenchRow {
            module: "icm".into(),
            ir_size_m: 0.0,
            actors: v,
            median_ms: icm0,
        });
        rows.push(BenchRow {
            module: "icm".into(),
            ir_size_m: cfg.ir_size_max,
            actors: v,
            median_ms: icm_max,
        });
        rows.push(BenchRow {
            module: "gnn".into(),
            ir_size_m: 0.0,
            actors: v,
            median_ms: gnn,
        });
        if v == cfg.actors {
            headline = (icm0, icm_max, gnn);
        }
        if cfg.v_sweep.contains(&v) {
            icm_xs.push(v as f64);
            icm_ys.push(icm_max);
            gnn_xs.push((v as f64).ln());
            gnn_ys.push(gnn.max(1e-6).ln());
        }
    }

    BenchReport {
        rows,
        icm0_ms: headline.0,
        icm_max_ms: headline.1,
        gnn_ms: headline.2,
        icm_fit: least_squares(&icm_xs, &icm_ys),
        gnn_loglog: least_squares(&gnn_xs, &gnn_ys),
        hardware: hardware_string(),
        actors: cfg.actors,
    }
}
