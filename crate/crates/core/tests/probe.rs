// Temporary diagnostic (deleted before release).
use icmf::backbone::decode_detections;
use icmf::harness::{generate_datasets, run_eval, train, ExperimentConfig, JointModel};
use icmf::scenegen::T0;
use icmf::tensorad::nn::BnMode;
use icmf::tensorad::no_grad;

#[test]
#[ignore]
fn probe_detection() {
    let mut cfg = ExperimentConfig::trend_preset();
    cfg.data.train_scenes = 60;
    cfg.data.val_scenes = 20;
    cfg.train.iterations = 1500;
    cfg.model.ir_size_m = 0.0;
    let (train_set, val_set) = generate_datasets(&cfg).unwrap();
    let model = JointModel::new(&cfg).unwrap();
    let rec = train(&model, &train_set, None).unwrap();
    println!(
        "losses: first {:.2} mid {:.2} last {:.2}",
        rec.losses[0].det,
        rec.losses[150].det,
        rec.losses[299].det
    );

    for (name, scenes) in [("TRAIN", &train_set), ("VAL", &val_set)] {
        for mode in [BnMode::Eval, BnMode::Train { update_running: false }] {
            let mut fg_probs = Vec::new();
            let mut max_bg = Vec::new();
            for scene in scenes.scenes.iter().take(8) {
                no_grad(|| {
                    let raster = model.raster_for(scene);
                    let fm = model.backbone.forward(&raster, mode);
                    let grid = model.det_head.forward(&fm);
                    let gt: Vec<_> = scene.vehicles().map(|a| a.box_at(T0)).collect();
                    let labels = icmf::backbone::assign_labels(&gt, &grid.geom);
                    let n = grid.h * grid.w;
                    let p = grid.cls_probs.to_vec();
                    let fg_cells: std::collections::HashSet<usize> =
                        labels.iter().map(|l| l.cell).collect();
                    for l in &labels {
                        fg_probs.push(p[n + l.cell]);
                    }
                    let bg_max = (0..n)
                        .filter(|c| !fg_cells.contains(c))
                        .map(|c| p[n + c])
                        .fold(0.0f64, f64::max);
                    max_bg.push(bg_max);
                    let dets = decode_detections(&grid, 0.3);
                    let _ = dets;
                });
            }
            let mean_fg = fg_probs.iter().sum::<f64>() / fg_probs.len() as f64;
            let mean_bgmax = max_bg.iter().sum::<f64>() / max_bg.len() as f64;
            println!(
                "{name} mode={mode:?}: mean p_fg@GT {:.4}  (min {:.4})  mean max p_fg@bg {:.4}",
                mean_fg,
                fg_probs.iter().cloned().fold(1.0, f64::min),
                mean_bgmax
            );
        }
    }
    // Where do the top false-positive cells sit relative to GT cells?
    let scene = &val_set.scenes[0];
    no_grad(|| {
        let raster = model.raster_for(scene);
        let fm = model.backbone.forward(&raster, BnMode::Eval);
        let grid = model.det_head.forward(&fm);
        let gt: Vec<_> = scene.vehicles().map(|a| a.box_at(T0)).collect();
        let labels = icmf::backbone::assign_labels(&gt, &grid.geom);
        let n = grid.h * grid.w;
        let p = grid.cls_probs.to_vec();
        let fg: std::collections::HashSet<usize> = labels.iter().map(|l| l.cell).collect();
        let mut cells: Vec<(f64, usize)> = (0..n).map(|c| (p[n + c], c)).collect();
        cells.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        for (score, c) in cells.iter().take(12) {
            let (r, cc) = (c / grid.w, c % grid.w);
            let dmin = fg
                .iter()
                .map(|f| {
                    let (fr, fc) = (f / grid.w, f % grid.w);
                    ((r as f64 - fr as f64).powi(2) + (cc as f64 - fc as f64).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            println!(
                "cell ({r:2},{cc:2}) p={score:.3} {} dist-to-GT {dmin:.1}",
                if fg.contains(c) { "FG" } else { "bg" }
            );
        }
        let dets = icmf::backbone::nms(decode_detections(&grid, 0.05), 0.1);
        println!("post-NMS dets: {}", dets.len());
        for d in dets.iter().take(8) {
            println!(
                "  det ({:5.1},{:5.1}) {:4.1}x{:4.1} score {:.3}",
                d.bbox.pose.x, d.bbox.pose.y, d.bbox.width, d.bbox.length, d.score
            );
        }
        for b in &gt {
            println!("  gt  ({:5.1},{:5.1}) {:4.1}x{:4.1}", b.pose.x, b.pose.y, b.width, b.length);
        }
    });
    let report = run_eval(&model, &val_set);
    println!(
        "VAL eval-mode: AP {:.3} DE {:.2} thr {:.3} recall_ok {}",
        report.ap_at_iou50, report.de_4s, report.threshold_used, report.recall_attained
    );
    let report_t = run_eval(&model, &train_set);
    println!("TRAIN eval-mode: AP {:.3} DE {:.2}", report_t.ap_at_iou50, report_t.de_4s);
}
