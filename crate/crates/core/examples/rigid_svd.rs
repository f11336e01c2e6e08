//! Recover a rigid transform from three point correspondences.
//!
//! `cargo run --example rigid_svd`

use stable_triangle::geometry::{solve_rigid_svd, Correspondences3, Point3, RigidTransform, Vector3};

fn main() {
    let truth = RigidTransform::from_axis_angle(Vector3::new(1.0, 2.0, 3.0), 0.8, Vector3::new(4.0, -1.0, 0.5));
    let source = vec![
        Point3::new(0.0, 0.0, 0.0),
        Point3::new(3.0, 0.0, 0.0),
        Point3::new(0.0, 4.0, 1.0),
    ];
    let target: Vec<Point3> = source.iter().map(|p| truth.apply(p)).collect();
    let pairs = Correspondences3::new(source, target).expect("equal lengths");
    let est = solve_rigid_svd(&pairs).expect("non-collinear");

    println!("rotation angle  true {:.12}  estimated {:.12}", truth.rotation_angle(), est.rotation_angle());
    println!("translation     true {:?}", truth.translation.as_slice());
    println!("                est  {:?}", est.translation.as_slice());
    println!("residual {:.3e}, det(R) {:.15}", pairs.residual(&est), est.rotation.determinant());

    let line = Correspondences3::new(
        vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)],
        vec![Point3::origin(), Point3::new(0.0, 1.0, 0.0), Point3::new(0.0, 2.0, 0.0)],
    )
    .unwrap();
    println!("collinear input: {}", solve_rigid_svd(&line).unwrap_err());
}
