//! Boundary key points and the triangle descriptors built on them.
//!
//! `cargo run --release --example keypoints_and_descriptors`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stable_triangle::descriptor::descriptor_signature;
use stable_triangle::geometry::{RigidTransform, Vector3};
use stable_triangle::pipeline::{extract_features, PipelineParams};
use stable_triangle::synthetic::{sensor_pose, Scene, SceneParams};

fn main() {
    let scene = Scene::generate(1, SceneParams::default());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scan = scene.scan(0, &sensor_pose(60.0, 0.0, 1.8, 0.0), 25.0, &mut rng);
    let params = PipelineParams::default();
    let f = extract_features(0, &scan.points, &params);
    println!("{} planes, {} key points, {} descriptors", f.planes.len(), f.keypoints.len(), f.descriptors.len());

    let mut by_value = f.keypoints.clone();
    by_value.sort_by(|a, b| b.value.total_cmp(&a.value));
    println!("strongest key points (distance above their plane):");
    for k in by_value.iter().take(5) {
        let p = k.position;
        println!("  plane {:>3}  value {:.2} m  at ({:.2} {:.2} {:.2})", k.plane_id, k.value, p.x, p.y, p.z);
    }

    let d = &f.descriptors[f.descriptors.len() / 2];
    let sig = descriptor_signature(d);
    println!("a descriptor: sides {:.3?}, normal products {:.3?}", &sig[..3], &sig[3..]);

    // the signature does not change when the whole frame moves
    let t = RigidTransform::from_axis_angle(Vector3::new(0.3, -1.0, 0.2), 2.5, Vector3::new(10.0, -4.0, 1.0));
    let moved = descriptor_signature(&d.transformed(&t));
    let diff = sig.iter().zip(&moved).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("after an arbitrary rigid motion the signature differs by {diff:.1e}");
}
