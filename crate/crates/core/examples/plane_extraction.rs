//! Voxelize a synthetic street scan and grow planes.
//!
//! `cargo run --release --example plane_extraction`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stable_triangle::ingest::voxel_downsample;
use stable_triangle::plane::{extract_planes, PlaneParams};
use stable_triangle::synthetic::{sensor_pose, Scene, SceneParams};

fn main() {
    let scene = Scene::generate(1, SceneParams::default());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scan = scene.scan(0, &sensor_pose(60.0, 0.0, 1.8, 0.0), 25.0, &mut rng);
    let cloud = voxel_downsample(&scan.points, 0.25).unwrap();
    println!("{} points, {} after 0.25 m downsampling", scan.points.len(), cloud.len());

    let params = PlaneParams::default();
    let (map, mut planes) = extract_planes(&cloud, &params).unwrap();
    println!(
        "{} occupied voxels of {} m, {} pass the plane test, {} planes",
        map.len(),
        params.voxel_size,
        map.plane_voxel_count(),
        planes.len()
    );
    planes.sort_by_key(|p| std::cmp::Reverse(p.members.len()));
    println!("largest planes:");
    for p in planes.iter().take(8) {
        let n = p.normal;
        println!(
            "  #{:<3} {:>4} voxels {:>4} boundary  normal ({:+.2} {:+.2} {:+.2})  center ({:.1} {:.1} {:.1})",
            p.id,
            p.members.len(),
            p.boundary.len(),
            n.x,
            n.y,
            n.z,
            p.center.x,
            p.center.y,
            p.center.z
        );
    }
}
