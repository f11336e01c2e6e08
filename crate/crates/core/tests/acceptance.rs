//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line.
//!
//! Run with `cargo test --test acceptance -- --nocapture --test-threads 1` to
//! see the lines in order.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use nalgebra::{Matrix3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use stable_triangle::config::Config;
use stable_triangle::database::{make_key, DescriptorDatabase};
use stable_triangle::descriptor::{descriptor_signature, DescriptorParams, TriangleDescriptor};
use stable_triangle::eval::{default_sigma_grid, pose_error, Replay};
use stable_triangle::geometry::{solve_rigid_svd, Correspondences3, Point3, RigidTransform, Vector3};
use stable_triangle::ingest::{list_scan_files, read_poses, read_scan_file, KeyframeAccumulator, Scan};
use stable_triangle::pipeline::{extract_features, PipelineParams};
use stable_triangle::plane::Plane;
use stable_triangle::synthetic::{planted_replay, sensor_pose, ReplayPlan, Scene, SceneParams};
use stable_triangle::verify::{plane_overlap, std_icp, verify_loop, IcpParams, PlaneStore, SelectionMode};
use stable_triangle::FrameId;

/// Timed criteria would disturb each other on a shared core, so tests run one at a time.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: u32, name: &str, pass: bool, detail: String) {
    println!(
        "criterion {criterion} [{}] {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} ({name}) failed: {detail}");
}

fn random_unit(rng: &mut impl Rng) -> Vector3 {
    loop {
        let v = Vector3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

fn random_transform(rng: &mut impl Rng, reach: f64) -> RigidTransform {
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    ));
    let t = Vector3::new(
        rng.random_range(-reach..reach),
        rng.random_range(-reach..reach),
        rng.random_range(-reach..reach),
    );
    RigidTransform::new(q.to_rotation_matrix().into_inner(), t).unwrap()
}

fn random_descriptor(
    rng: &mut ChaCha8Rng,
    frame_id: FrameId,
    extent: f64,
    normal: impl Fn(&mut ChaCha8Rng) -> Vector3,
) -> TriangleDescriptor {
    loop {
        let corners = [0, 1, 2].map(|_| {
            let p = Point3::new(
                rng.random_range(0.0..extent),
                rng.random_range(0.0..extent),
                rng.random_range(0.0..extent),
            );
            (p, normal(rng))
        });
        if let Some(d) = TriangleDescriptor::from_corners(corners, frame_id, &DescriptorParams::default()) {
            return d;
        }
    }
}

/// Distance of the nearest signature component to a quantization boundary,
/// measured in cells.
fn boundary_margin(sig: &[f64; 6], delta_l: f64, delta_n: f64) -> f64 {
    sig.iter()
        .enumerate()
        .map(|(k, v)| {
            let x = v / if k < 3 { delta_l } else { delta_n };
            let f = x - x.floor();
            f.min(1.0 - f)
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn criterion_1_rigid_invariance() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (dl, dn) = (0.2, 0.1);
    let mut worst = 0.0f64;
    let mut key_mismatch = 0;
    let mut near_boundary = 0;
    for i in 0..1000 {
        let d = random_descriptor(&mut rng, i, 40.0, random_unit);
        let sig = descriptor_signature(&d);
        let key = make_key(&sig, dl, dn);
        for _ in 0..10 {
            let t = random_transform(&mut rng, 100.0);
            let moved = d.transformed(&t);
            // recompute the sides from the moved vertices so nothing is carried over
            let corners = [0, 1, 2].map(|k| (moved.vertices[k], moved.normals[k]));
            let rebuilt = TriangleDescriptor::from_corners(corners, i, &DescriptorParams::default()).unwrap();
            let s2 = descriptor_signature(&rebuilt);
            worst = sig.iter().zip(&s2).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
            let k2 = make_key(&s2, dl, dn);
            let inside = boundary_margin(&sig, dl, dn) * dn > 1e-9;
            if !inside {
                near_boundary += 1;
            } else if k2 != key {
                key_mismatch += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "rigid invariance",
        worst < 1e-9 && key_mismatch == 0 && secs < 5.0,
        format!(
            "max signature deviation {worst:.2e}, {key_mismatch} key mismatches ({near_boundary} boundary-straddling cases exempt), {secs:.2} s"
        ),
    );
}

#[test]
fn criterion_2_voting_oracle() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(201);
    let axes = [Vector3::x(), Vector3::y(), Vector3::z()];
    // a small extent and axis-aligned normals give plenty of shared cells
    let axis_normal = |r: &mut ChaCha8Rng| axes[r.random_range(0..3)];
    let (dl, dn) = (0.2, 0.1);
    let mut db = DescriptorDatabase::new(dl, dn).unwrap();
    let mut stored: Vec<(FrameId, Vec<[i64; 6]>)> = Vec::new();
    for f in 0..50u64 {
        let descs: Vec<_> = (0..200)
            .map(|_| random_descriptor(&mut rng, f, 4.0, axis_normal))
            .collect();
        db.insert_frame(f, &descs).unwrap();
        stored.push((f, descs.iter().map(|d| make_key(&descriptor_signature(d), dl, dn).cells).collect()));
    }
    let mut mismatches = 0;
    let mut total_votes = 0;
    for q in 0..20u64 {
        let queries: Vec<_> = (0..200)
            .map(|_| random_descriptor(&mut rng, 1000 + q, 4.0, axis_normal))
            .collect();
        for skip in [0usize, 7] {
            let got: HashMap<FrameId, usize> = db
                .query_top(&queries, skip, usize::MAX)
                .iter()
                .map(|c| (c.frame_id, c.votes))
                .collect();
            let mut want = HashMap::new();
            for d in &queries {
                let cells = make_key(&descriptor_signature(d), dl, dn).cells;
                for (f, keys) in &stored[..stored.len() - skip] {
                    if keys.contains(&cells) {
                        *want.entry(*f).or_insert(0usize) += 1;
                    }
                }
            }
            total_votes += want.values().sum::<usize>();
            if got != want {
                mismatches += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        2,
        "voting oracle",
        mismatches == 0 && total_votes > 0 && secs < 30.0,
        format!("40 queries, {total_votes} brute-force votes, {mismatches} mismatching vote tables, {secs:.2} s"),
    );
}

#[test]
fn criterion_3_kabsch_exactness() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    let (mut worst_rot, mut worst_trans) = (0.0f64, 0.0f64);
    let mut bad_det = 0;
    let mut solved = 0;
    while solved < 10_000 {
        let src: Vec<Point3> = (0..3)
            .map(|_| {
                Point3::new(
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                )
            })
            .collect();
        let area = (src[1] - src[0]).cross(&(src[2] - src[0])).norm();
        if area < 1.0 {
            continue;
        }
        let truth = random_transform(&mut rng, 100.0);
        let dst: Vec<Point3> = src.iter().map(|p| truth.apply(p)).collect();
        let est = solve_rigid_svd(&Correspondences3::new(src, dst).unwrap()).unwrap();
        // ‖R̂ − R‖_F = 2√2 sin(θ/2), accurate for tiny angles unlike acos of the trace
        let diff: Matrix3<f64> = est.rotation - truth.rotation;
        let angle = 2.0 * (diff.norm() / (2.0 * 2f64.sqrt())).asin();
        worst_rot = worst_rot.max(angle);
        worst_trans = worst_trans.max((est.translation - truth.translation).norm());
        if (est.rotation.determinant() - 1.0).abs() > 1e-9 {
            bad_det += 1;
        }
        solved += 1;
    }
    report(
        3,
        "Kabsch exactness",
        worst_rot < 1e-9 && worst_trans < 1e-9 && bad_det == 0,
        format!("10000 problems, max rotation error {worst_rot:.2e} rad, max translation error {worst_trans:.2e} m, {bad_det} bad determinants"),
    );
}

#[test]
fn criterion_4_planted_loop() {
    let _guard = serial();
    let start = Instant::now();
    let scene = Scene::generate(41, SceneParams::default());
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let first = sensor_pose(60.0, -0.5, 1.8, 0.0);
    let second = sensor_pose(60.0, 0.5, 1.8, std::f64::consts::PI);
    let params = PipelineParams::default();
    let a = extract_features(0, &scene.scan(0, &first, 25.0, &mut rng).points, &params);
    let b = extract_features(1, &scene.scan(1, &second, 25.0, &mut rng).points, &params);

    let mut db = DescriptorDatabase::new(params.delta_l, params.delta_n).unwrap();
    db.insert_frame(0, &a.descriptors).unwrap();
    let mut store = PlaneStore::new();
    store.insert(0, a.planes.clone());
    let candidates = db.query_top(&b.descriptors, 0, params.top_k);
    let result = verify_loop(1, &b.planes, &candidates, &store, &params.verify);
    let secs = start.elapsed().as_secs_f64();

    let truth = first.inverse().compose(&second);
    let Some(found) = result else {
        report(4, "planted loop", false, format!("revisit not detected ({secs:.2} s)"));
        return;
    };
    let (rot, trans) = pose_error(&found.transform, &truth);
    let (rrot, rtrans) = found.refined.as_ref().map_or((f64::NAN, f64::NAN), |r| pose_error(r, &truth));
    let refine_ok = rrot.to_radians() <= rot.to_radians() + 1e-6 && rtrans <= trans + 1e-6;
    report(
        4,
        "planted loop",
        found.matched_frame == 0 && rot <= 0.5 && trans <= 0.1 && refine_ok && secs < 10.0,
        format!(
            "overlap {:.2}, RANSAC error {rot:.3} deg / {trans:.3} m, refined {rrot:.3} deg / {rtrans:.3} m, {secs:.2} s",
            found.overlap
        ),
    );
}

#[test]
fn criterion_5_sigma_monotonicity() {
    let _guard = serial();
    let plan = ReplayPlan::default();
    let replay = planted_replay(&plan);
    let mut cfg = Config::default();
    cfg.pipeline.skip_recent = 0;
    let mut driver = Replay::new(cfg).unwrap();
    for kf in &replay.keyframes {
        driver.push_keyframe(kf).unwrap();
    }
    let out = driver.finish().unwrap();
    let counts: Vec<usize> = default_sigma_grid()
        .iter()
        .map(|&s| {
            out.records
                .iter()
                .filter(|r| r.rescore(s, SelectionMode::FirstPass).is_some())
                .count()
        })
        .collect();
    let monotone = counts.windows(2).all(|w| w[1] <= w[0]);
    let planted: HashMap<FrameId, FrameId> = replay.planted.iter().copied().collect();
    let mut false_pos = 0;
    let mut found = 0;
    for r in &out.records {
        if let Some(d) = r.rescore(0.5, SelectionMode::FirstPass) {
            if planted.get(&r.query) == Some(&d) {
                found += 1;
            } else {
                false_pos += 1;
            }
        }
    }
    report(
        5,
        "sigma_pc trade-off",
        monotone && false_pos == 0 && found == planted.len(),
        format!(
            "detections over 0.1..0.9 {counts:?}; at 0.5: {found}/{} planted loops, {false_pos} false positives",
            planted.len()
        ),
    );
}

fn scaling_frame(rng: &mut ChaCha8Rng, id: FrameId, count: usize) -> Vec<TriangleDescriptor> {
    (0..count)
        .map(|_| random_descriptor(rng, id, 60.0, random_unit))
        .collect()
}

/// Median latency of 300 queries, each half a re-observed stored frame and
/// half unseen triangles. With `evict`, a 16 MiB buffer is rewritten before
/// every query, standing in for the feature extraction that precedes each
/// query in the pipeline and leaves the database cold in cache.
fn median_query_ms(db: &DescriptorDatabase, frames: &[Vec<TriangleDescriptor>], rng: &mut ChaCha8Rng, evict: &mut [u64]) -> f64 {
    let visible = frames.len() - 50;
    let mut samples: Vec<f64> = (0..300)
        .map(|i| {
            let target = &frames[rng.random_range(0..visible)];
            let t = random_transform(rng, 50.0);
            let mut q: Vec<_> = target[..50].iter().map(|d| d.transformed(&t)).collect();
            q.extend(scaling_frame(rng, 1_000_000 + i, 50));
            for (k, v) in evict.iter_mut().enumerate() {
                *v = v.wrapping_add(k as u64);
            }
            std::hint::black_box(&evict);
            let start = Instant::now();
            let c = db.query_candidates(&q, 50);
            let ms = start.elapsed().as_secs_f64() * 1e3;
            assert!(!c.is_empty());
            ms
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    samples[samples.len() / 2]
}

#[test]
fn criterion_6_database_scaling() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(601);
    let mut db = DescriptorDatabase::new(0.2, 0.1).unwrap();
    let mut frames = Vec::new();
    let mut evict = vec![0u64; 2 << 20];
    let (mut small, mut small_hot) = (0.0, 0.0);
    for id in 0..10_000u64 {
        let f = scaling_frame(&mut rng, id, 100);
        db.insert_frame(id, &f).unwrap();
        frames.push(f);
        if id == 99 {
            small = median_query_ms(&db, &frames, &mut rng, &mut evict);
            small_hot = median_query_ms(&db, &frames, &mut rng, &mut []);
        }
    }
    let large = median_query_ms(&db, &frames, &mut rng, &mut evict);
    let large_hot = median_query_ms(&db, &frames, &mut rng, &mut []);
    report(
        6,
        "database scaling",
        large <= 2.0 * small,
        format!(
            "median query {small:.4} ms at 100 frames, {large:.4} ms at 10000 frames ({} descriptors), ratio {:.2}; \
             back-to-back queries with a warm cache (not gated): ratio {:.2}",
            db.descriptors_indexed(),
            large / small,
            large_hot / small_hot
        ),
    );
}

fn random_planes(rng: &mut impl Rng, n: usize, extent: f64) -> Vec<Plane> {
    (0..n)
        .map(|i| {
            let c = Point3::new(
                rng.random_range(-extent..extent),
                rng.random_range(-extent..extent),
                rng.random_range(-extent / 10.0..extent / 10.0),
            );
            Plane::from_center_normal(i, c, random_unit(rng))
        })
        .collect()
}

#[test]
fn criterion_7_verification_speed() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(701);
    let candidate = random_planes(&mut rng, 1000, 100.0);
    let truth = RigidTransform::from_yaw(0.7, Vector3::new(3.0, -2.0, 0.1));
    let to_query = truth.inverse();
    let current: Vec<Plane> = candidate
        .iter()
        .map(|p| Plane::from_center_normal(p.id, to_query.apply(&p.center), to_query.apply_vector(&p.normal)))
        .collect();
    // an error typical of a RANSAC estimate
    let initial = RigidTransform::from_rotation_vector(Vector3::new(0.0, 0.0, 0.002), Vector3::new(0.05, -0.03, 0.0))
        .compose(&truth);
    let start = Instant::now();
    let overlap = plane_overlap(&current, &candidate, &initial, 0.2, 0.3).unwrap();
    let icp = std_icp(&current, &candidate, &initial, 0.2, 0.3, &IcpParams::default()).unwrap();
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let (rot, trans) = pose_error(&icp.transform, &truth);
    report(
        7,
        "verification speed",
        ms < 50.0 && overlap > 0.5 && trans < 1e-6,
        format!("1000 vs 1000 planes: overlap {overlap:.3}, ICP {} iterations to {rot:.1e} deg / {trans:.1e} m, {ms:.1} ms", icp.iterations),
    );
}

fn kitti_tr(calib: &Path) -> Option<RigidTransform> {
    let text = std::fs::read_to_string(calib).ok()?;
    let line = text.lines().find(|l| l.starts_with("Tr:"))?;
    let vals: Vec<f64> = line[3..].split_whitespace().filter_map(|v| v.parse().ok()).collect();
    let arr: [f64; 12] = vals.try_into().ok()?;
    Some(RigidTransform::from_row_major_3x4(&arr).orthonormalized())
}

/// Expects `$KITTI_SEQ00_DIR/velodyne/*.bin`, `calib.txt`, and `poses.txt` (or `00.txt`).
#[test]
fn criterion_8_kitti_00() {
    let _guard = serial();
    let Some(dir) = std::env::var_os("KITTI_SEQ00_DIR").map(PathBuf::from) else {
        println!("criterion 8 [SKIP] KITTI sequence 00: set KITTI_SEQ00_DIR to a directory holding velodyne/, calib.txt and poses.txt");
        return;
    };
    let poses_path = ["poses.txt", "00.txt"].iter().map(|f| dir.join(f)).find(|p| p.exists());
    let (Some(poses_path), Some(tr)) = (poses_path, kitti_tr(&dir.join("calib.txt"))) else {
        report(8, "KITTI sequence 00", false, format!("missing poses or calib.txt under {}", dir.display()));
        return;
    };
    let files = list_scan_files(dir.join("velodyne")).unwrap();
    let poses = read_poses(&poses_path).unwrap();
    let n = 1500.min(files.len()).min(poses.len());
    let mut cfg = Config::default();
    cfg.pipeline.verify.sigma_pc = 0.6;
    let mut replay = Replay::new(cfg.clone()).unwrap();
    let mut acc = KeyframeAccumulator::new(cfg.n_accumulate);
    let mut odd_sizes = 0;
    for (index, file) in files[..n].iter().enumerate() {
        let points = read_scan_file(file).unwrap();
        if !(100_000..=130_000).contains(&points.len()) {
            odd_sizes += 1;
        }
        let scan = Scan {
            index,
            points,
            pose: poses[index].compose(&tr),
        };
        if let Some(kf) = acc.push(scan).unwrap() {
            replay.push_keyframe(&kf).unwrap();
        }
    }
    if let Some(kf) = acc.flush().unwrap() {
        replay.push_keyframe(&kf).unwrap();
    }
    let out = replay.finish().unwrap();
    let s = &out.summary;
    report(
        8,
        "KITTI sequence 00",
        n == 1500 && odd_sizes == 0 && s.false_positives == 0,
        format!(
            "{n} scans ({odd_sizes} outside 100k-130k points), {} keyframes, {} detections, {} true, {} false, precision {:?}",
            s.keyframes, s.detections, s.true_positives, s.false_positives, s.precision
        ),
    );
}
