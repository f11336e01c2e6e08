//! Verify a revisit seen from the opposite direction and refine the pose.
//!
//! `cargo run --release --example loop_verification`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stable_triangle::database::DescriptorDatabase;
use stable_triangle::eval::pose_error;
use stable_triangle::pipeline::{extract_features, PipelineParams};
use stable_triangle::synthetic::{sensor_pose, Scene, SceneParams};
use stable_triangle::verify::{score_candidates, std_icp, verify_loop, PlaneStore};

fn main() {
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
    let candidates = db.query_candidates(&b.descriptors, 0);

    for s in score_candidates(1, &b.planes, &candidates, &store, &params.verify) {
        println!("candidate {}: {} votes, {} RANSAC inliers, plane overlap {:?}", s.frame_id, s.votes, s.inliers, s.overlap);
    }
    let Some(found) = verify_loop(1, &b.planes, &candidates, &store, &params.verify) else {
        println!("no loop accepted");
        return;
    };
    let truth = first.inverse().compose(&second);
    let (deg, m) = pose_error(&found.transform, &truth);
    println!("accepted frame {} with overlap {:.2}: error {deg:.3} deg, {m:.3} m", found.matched_frame, found.overlap);

    let v = &params.verify;
    let icp = std_icp(&b.planes, &a.planes, &found.transform, v.sigma_n, v.sigma_d, &v.icp).unwrap();
    let (deg, m) = pose_error(&icp.transform, &truth);
    println!(
        "plane ICP: cost {:.2} -> {:.2} in {} iterations, error {deg:.3} deg, {m:.3} m",
        icp.initial_cost, icp.final_cost, icp.iterations
    );
}
