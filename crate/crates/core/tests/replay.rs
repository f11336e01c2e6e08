//! Whole-sequence replays through `run_sequence` on synthetic scans written to disk.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stable_triangle::config::Config;
use stable_triangle::eval::{run_sequence, write_outputs};
use stable_triangle::geometry::RigidTransform;
use stable_triangle::ingest::{write_kitti_bin, write_poses};
use stable_triangle::synthetic::{out_and_back, sensor_pose, Scene, SceneParams};

fn write_sequence(dir: &Path, scene_seed: u64, poses: &[RigidTransform]) {
    let scene = Scene::generate(scene_seed, SceneParams::default());
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed + 1);
    let scans = dir.join("velodyne");
    fs::create_dir_all(&scans).unwrap();
    for (i, pose) in poses.iter().enumerate() {
        let scan = scene.scan(i, pose, 25.0, &mut rng);
        write_kitti_bin(scans.join(format!("{i:06}.bin")), &scan.points).unwrap();
    }
    write_poses(dir.join("poses.txt"), poses).unwrap();
}

fn single_scan_config() -> Config {
    let mut cfg = Config::default();
    cfg.n_accumulate = 1;
    cfg.pipeline.skip_recent = 3;
    cfg
}

#[test]
fn loop_trajectory_is_closed_accurately() {
    let dir = tempfile::tempdir().unwrap();
    let poses = out_and_back(20.0, 90.0, 5.0, 1.0, 1.8);
    assert_eq!(poses.len(), 30);
    write_sequence(dir.path(), 7, &poses);
    let out = run_sequence(&single_scan_config(), &dir.path().join("velodyne"), &dir.path().join("poses.txt")).unwrap();
    assert_eq!(out.records.len(), 30);

    // detections made on the way back, against frames from the way out
    let closures: Vec<_> = out
        .records
        .iter()
        .filter(|r| r.query >= 15 && r.detected.is_some_and(|d| d < 15))
        .collect();
    assert!(!closures.is_empty(), "no loop closure detected");
    let accurate = closures
        .iter()
        .filter(|r| r.error.is_some_and(|(deg, m)| deg < 0.5 && m < 0.1))
        .count();
    assert!(accurate >= 1, "no closure within 0.1 m / 0.5 deg: {:?}", closures.iter().map(|r| r.error).collect::<Vec<_>>());
}

#[test]
fn sequence_without_revisits_has_no_detections() {
    let dir = tempfile::tempdir().unwrap();
    // one pass, 40 m between scans: no two scans see the same stretch
    let poses: Vec<_> = (0..5).map(|i| sensor_pose(20.0 + 40.0 * i as f64, 0.0, 1.8, 0.0)).collect();
    write_sequence(dir.path(), 9, &poses);
    let out = run_sequence(&single_scan_config(), &dir.path().join("velodyne"), &dir.path().join("poses.txt")).unwrap();
    assert_eq!(out.summary.detections, 0);
    assert!(out.records.iter().all(|r| r.detected.is_none()));
}

#[test]
fn replays_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let poses = out_and_back(20.0, 50.0, 5.0, 1.0, 1.8);
    write_sequence(dir.path(), 3, &poses);
    let mut cfg = single_scan_config();
    cfg.pipeline.verify.seed = 17;
    let outs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = run_sequence(&cfg, &dir.path().join("velodyne"), &dir.path().join("poses.txt")).unwrap();
            let target = dir.path().join(name);
            write_outputs(&target, &out).unwrap();
            target
        })
        .collect();
    for file in ["records.csv", "gt.csv", "pr.csv", "keyframes.csv", "config.txt"] {
        let a = fs::read(outs[0].join(file)).unwrap();
        let b = fs::read(outs[1].join(file)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{file} differs between runs");
    }
}

#[test]
fn summary_latency_matches_records() {
    let dir = tempfile::tempdir().unwrap();
    let poses = out_and_back(20.0, 40.0, 10.0, 1.0, 1.8);
    write_sequence(dir.path(), 5, &poses);
    let out = run_sequence(&single_scan_config(), &dir.path().join("velodyne"), &dir.path().join("poses.txt")).unwrap();
    let sum: f64 = out.records.iter().map(|r| r.timings.total_ms()).sum();
    assert!((out.summary.latency.total.sum_ms - sum).abs() < 1.0);
    assert!(out.records.iter().all(|r| r.timings.extract_ms >= 0.0 && r.timings.query_ms >= 0.0 && r.timings.verify_ms >= 0.0));
    assert_eq!(out.summary.scans, poses.len());
}
