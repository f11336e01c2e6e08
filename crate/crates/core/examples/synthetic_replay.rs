//! Replay outbound frames, decoys from another scene, and a reversed return
//! pass; report which planted revisits are found.
//!
//! `cargo run --release --example synthetic_replay`

use std::collections::HashMap;

use stable_triangle::config::Config;
use stable_triangle::eval::Replay;
use stable_triangle::synthetic::{planted_replay, ReplayPlan};

fn main() {
    let replay = planted_replay(&ReplayPlan::default());
    let planted: HashMap<_, _> = replay.planted.iter().copied().collect();
    let mut cfg = Config::default();
    cfg.pipeline.skip_recent = 0;
    let mut driver = Replay::new(cfg).unwrap();
    for kf in &replay.keyframes {
        let r = driver.push_keyframe(kf).unwrap();
        let verdict = match (r.detected, planted.get(&r.query)) {
            (Some(d), Some(&want)) if d == want => "planted revisit found",
            (Some(_), _) => "false match",
            (None, Some(_)) => "planted revisit missed",
            (None, None) => "",
        };
        println!(
            "keyframe {:>2}: detected {:>4}  overlap {:>5}  {:>7.1} ms  {verdict}",
            r.query,
            r.detected.map_or("-".into(), |d| d.to_string()),
            r.overlap.map_or("-".into(), |o| format!("{o:.2}")),
            r.timings.total_ms()
        );
    }
    let out = driver.finish().unwrap();
    println!("{} detections, mean pose error {:?} deg / {:?} m", out.summary.detections, out.summary.mean_rotation_error_deg, out.summary.mean_translation_error_m);
}
