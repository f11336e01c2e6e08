//! Index frames in the hash table and retrieve candidates by voting.
//!
//! `cargo run --release --example descriptor_database`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stable_triangle::database::DescriptorDatabase;
use stable_triangle::pipeline::{extract_features, PipelineParams};
use stable_triangle::synthetic::{sensor_pose, Scene, SceneParams};

fn main() {
    let scene = Scene::generate(3, SceneParams::default());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = PipelineParams::default();
    let mut db = DescriptorDatabase::new(params.delta_l, params.delta_n).unwrap();

    for (id, x) in [20.0, 50.0, 80.0, 110.0, 140.0].into_iter().enumerate() {
        let scan = scene.scan(id, &sensor_pose(x, 0.0, 1.8, 0.0), 25.0, &mut rng);
        let f = extract_features(id as u64, &scan.points, &params);
        let stats = db.insert_frame(id as u64, &f.descriptors).unwrap();
        println!("frame {id} at x = {x:>5}: {:>6} descriptors, {:>7} indexed in total", f.descriptors.len(), stats.descriptors_indexed);
    }
    println!("{} buckets", db.bucket_count());

    // revisit x = 80 from the opposite direction
    let scan = scene.scan(9, &sensor_pose(80.0, 1.0, 1.8, std::f64::consts::PI), 25.0, &mut rng);
    let query = extract_features(9, &scan.points, &params);
    let candidates = db.query_candidates(&query.descriptors, 0);
    println!("candidates for a reverse pass at x = 80:");
    for c in candidates.iter() {
        println!("  frame {}  {} votes", c.frame_id, c.votes);
    }

    let mut bytes = Vec::new();
    db.save(&mut bytes).unwrap();
    let back = DescriptorDatabase::load(&mut bytes.as_slice()).unwrap();
    println!("snapshot of {} bytes reloads to {} frames", bytes.len(), back.frames_indexed());
}
