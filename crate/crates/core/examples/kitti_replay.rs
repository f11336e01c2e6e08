//! Replay a sequence in KITTI layout and write the evaluation outputs.
//!
//! `cargo run --release --example kitti_replay -- <sequence dir> <out dir> [max scans]`
//!
//! The sequence directory holds `velodyne/*.bin`, `poses.txt` (camera-frame
//! poses) and `calib.txt` (its `Tr:` line maps LiDAR into the camera frame).
//! Without arguments a small synthetic sequence in the same layout is
//! generated and replayed.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stable_triangle::config::Config;
use stable_triangle::eval::{write_outputs, Replay};
use stable_triangle::geometry::RigidTransform;
use stable_triangle::ingest::{list_scan_files, read_poses, read_scan_file, write_kitti_bin, write_poses, KeyframeAccumulator, Scan};
use stable_triangle::synthetic::{out_and_back, Scene, SceneParams};

fn calib_tr(path: &Path) -> Option<RigidTransform> {
    let text = fs::read_to_string(path).ok()?;
    let vals: Vec<f64> = text.lines().find_map(|l| l.strip_prefix("Tr:"))?.split_whitespace().filter_map(|v| v.parse().ok()).collect();
    Some(RigidTransform::from_row_major_3x4(&vals.try_into().ok()?).orthonormalized())
}

fn synthetic_sequence(dir: &Path) {
    let scene = Scene::generate(7, SceneParams::default());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let poses = out_and_back(20.0, 90.0, 1.0, 1.0, 1.8);
    fs::create_dir_all(dir.join("velodyne")).unwrap();
    for (i, pose) in poses.iter().enumerate() {
        let scan = scene.scan(i, pose, 25.0, &mut rng);
        write_kitti_bin(dir.join(format!("velodyne/{i:06}.bin")), &scan.points).unwrap();
    }
    write_poses(dir.join("poses.txt"), &poses).unwrap();
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (seq, out, max) = match args.as_slice() {
        [seq, out, rest @ ..] => (PathBuf::from(seq), PathBuf::from(out), rest.first().and_then(|m| m.parse().ok())),
        _ => {
            let dir = std::env::temp_dir().join("std-kitti-demo");
            println!("no sequence given; writing a synthetic one to {}", dir.display());
            synthetic_sequence(&dir);
            (dir.clone(), dir.join("out"), None)
        }
    };
    let mut cfg = Config::default();
    cfg.pipeline.skip_recent = 10;
    let extrinsic = calib_tr(&seq.join("calib.txt"));
    let files = list_scan_files(seq.join("velodyne")).expect("velodyne directory");
    let poses = read_poses(seq.join("poses.txt")).expect("poses.txt");
    let n = files.len().min(poses.len()).min(max.unwrap_or(usize::MAX));

    let mut replay = Replay::new(cfg.clone()).unwrap();
    let mut acc = KeyframeAccumulator::new(cfg.n_accumulate);
    let push = |replay: &mut Replay, kf| {
        let r = replay.push_keyframe(&kf).unwrap();
        if let Some(d) = r.detected {
            println!("keyframe {} closes a loop with {d} (overlap {:.2})", r.query, r.overlap.unwrap_or(0.0));
        }
    };
    for (index, file) in files[..n].iter().enumerate() {
        let pose = extrinsic.map_or(poses[index], |tr| poses[index].compose(&tr));
        let scan = Scan {
            index,
            points: read_scan_file(file).unwrap(),
            pose,
        };
        if let Some(kf) = acc.push(scan).unwrap() {
            push(&mut replay, kf);
        }
    }
    if let Some(kf) = acc.flush().unwrap() {
        push(&mut replay, kf);
    }
    let result = replay.finish().unwrap();
    write_outputs(&out, &result).unwrap();
    let s = &result.summary;
    println!(
        "{} scans, {} keyframes, {} detections ({} true, {} false); outputs in {}",
        s.scans,
        s.keyframes,
        s.detections,
        s.true_positives,
        s.false_positives,
        out.display()
    );
}
