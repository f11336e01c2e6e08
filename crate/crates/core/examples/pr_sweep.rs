//! Precision and recall over the plane-overlap threshold, from stored
//! per-candidate overlaps (no re-verification needed).
//!
//! `cargo run --release --example pr_sweep`

use stable_triangle::config::Config;
use stable_triangle::eval::{default_sigma_grid, pr_sweep, Replay};
use stable_triangle::synthetic::{planted_replay, ReplayPlan};
use stable_triangle::verify::SelectionMode;

fn main() {
    let replay = planted_replay(&ReplayPlan::default());
    let mut cfg = Config::default();
    cfg.pipeline.skip_recent = 0;
    cfg.pipeline.verify.sigma_pc = 0.1;
    let mut driver = Replay::new(cfg).unwrap();
    for kf in &replay.keyframes {
        driver.push_keyframe(kf).unwrap();
    }
    let out = driver.finish().unwrap();
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
    for mode in [SelectionMode::FirstPass, SelectionMode::BestOverlap] {
        println!("{mode:?}");
        println!("  sigma_pc  detections  tp  fp  fn  precision  recall");
        for row in pr_sweep(&out.records, &out.ground_truth, &default_sigma_grid(), mode).unwrap() {
            println!(
                "  {:>8.1}  {:>10}  {:>2}  {:>2}  {:>2}  {:>9}  {:>6}",
                row.sigma_pc,
                row.detections,
                row.tp,
                row.fp,
                row.fn_,
                fmt(row.precision),
                fmt(row.recall)
            );
        }
    }
}
