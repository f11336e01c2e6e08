//! Procedural street scenes (ground, rotated boxes, poles) and a simple
//! range-limited sampler standing in for a LiDAR.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{Point3, RigidTransform, Vector3};
use crate::ingest::{Keyframe, Scan};
use crate::FrameId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    /// Upright box standing on the ground.
    Box {
        center: [f64; 2],
        yaw: f64,
        half_extent: [f64; 2],
        height: f64,
    },
    /// Vertical cylinder standing on the ground.
    Pole { center: [f64; 2], radius: f64, height: f64 },
}

impl Primitive {
    /// Whether the footprint contains `q` (horizontal test).
    fn covers(&self, q: &Point3) -> bool {
        match *self {
            Primitive::Box {
                center: c,
                yaw,
                half_extent: h,
                ..
            } => {
                let (s, co) = yaw.sin_cos();
                let (dx, dy) = (q.x - c[0], q.y - c[1]);
                (co * dx + s * dy).abs() < h[0] && (-s * dx + co * dy).abs() < h[1]
            }
            Primitive::Pole { center: c, radius, .. } => (q.x - c[0]).hypot(q.y - c[1]) < radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    /// Street runs along x over this range.
    pub length: f64,
    /// Boxes are placed with `|y|` in this range.
    pub box_band: (f64, f64),
    /// Poles are placed with `|y|` in this range.
    pub pole_band: (f64, f64),
    pub box_spacing: f64,
    pub pole_spacing: f64,
    /// Surface sampling density (points per square meter).
    pub density: f64,
    /// Points per meter of pole height.
    pub pole_density: f64,
    pub noise_sigma: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            length: 200.0,
            box_band: (7.0, 16.0),
            pole_band: (3.5, 6.0),
            box_spacing: 9.0,
            pole_spacing: 3.0,
            density: 100.0,
            pole_density: 150.0,
            noise_sigma: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub params: SceneParams,
    pub primitives: Vec<Primitive>,
}

impl Scene {
    /// Lays out boxes and poles on both sides of a street along x.
    pub fn generate(seed: u64, params: SceneParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut primitives = Vec::new();
        for side in [-1.0, 1.0] {
            let mut x = -20.0 + rng.random_range(0.0..params.box_spacing);
            while x < params.length + 20.0 {
                let half = [rng.random_range(1.0..3.0), rng.random_range(1.0..2.5)];
                let y = side * rng.random_range(params.box_band.0 + 2.5..params.box_band.1);
                primitives.push(Primitive::Box {
                    center: [x, y],
                    yaw: rng.random_range(-0.6..0.6),
                    half_extent: half,
                    height: rng.random_range(2.0..6.0),
                });
                x += params.box_spacing * rng.random_range(0.8..1.3);
            }
            let mut x = -20.0 + rng.random_range(0.0..params.pole_spacing);
            while x < params.length + 20.0 {
                let y = side * rng.random_range(params.pole_band.0..params.pole_band.1);
                // a mix of low bollards and tall posts
                let height = if rng.random_bool(0.5) {
                    rng.random_range(0.4..1.1)
                } else {
                    rng.random_range(2.5..4.5)
                };
                primitives.push(Primitive::Pole {
                    center: [x, y],
                    radius: rng.random_range(0.05..0.12),
                    height,
                });
                x += params.pole_spacing * rng.random_range(0.7..1.4);
            }
        }
        Self { params, primitives }
    }

    /// World-frame points within `range` (horizontal) of `center`, without
    /// occlusion. Ground is the plane `z = 0`.
    pub fn sample_world(&self, center: &Point3, range: f64, rng: &mut impl Rng) -> Vec<Point3> {
        let p = &self.params;
        let mut out = Vec::new();
        let in_range = |q: &Point3| (q.x - center.x).hypot(q.y - center.y) <= range;

        let nearby: Vec<&Primitive> = self
            .primitives
            .iter()
            .filter(|prim| {
                let (c, reach) = match prim {
                    Primitive::Box { center, half_extent, .. } => (center, half_extent[0] + half_extent[1]),
                    Primitive::Pole { center, radius, .. } => (center, *radius),
                };
                (c[0] - center.x).hypot(c[1] - center.y) <= range + reach
            })
            .collect();
        let ground = (p.density * std::f64::consts::PI * range * range).round() as usize;
        for _ in 0..ground {
            let r = range * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let q = Point3::new(center.x + r * a.cos(), center.y + r * a.sin(), 0.0);
            if !nearby.iter().any(|prim| prim.covers(&q)) {
                out.push(q);
            }
        }

        for prim in nearby {
            match *prim {
                Primitive::Box {
                    center: c,
                    yaw,
                    half_extent: h,
                    height,
                } => {
                    if (c[0] - center.x).hypot(c[1] - center.y) > range + h[0] + h[1] {
                        continue;
                    }
                    let (s, co) = yaw.sin_cos();
                    let ax = Vector3::new(co, s, 0.0);
                    let ay = Vector3::new(-s, co, 0.0);
                    let base = Point3::new(c[0], c[1], 0.0);
                    // four walls then the roof
                    let faces = [
                        (base + ax * h[0], ay * h[1], 2.0 * h[1], height),
                        (base - ax * h[0], ay * h[1], 2.0 * h[1], height),
                        (base + ay * h[1], ax * h[0], 2.0 * h[0], height),
                        (base - ay * h[1], ax * h[0], 2.0 * h[0], height),
                    ];
                    for (mid, half_dir, width, tall) in faces {
                        let n = (p.density * width * tall).round() as usize;
                        for _ in 0..n {
                            let q = mid + half_dir * rng.random_range(-1.0..1.0) + Vector3::z() * rng.random_range(0.0..tall);
                            if in_range(&q) {
                                out.push(q);
                            }
                        }
                    }
                    let n = (p.density * 4.0 * h[0] * h[1]).round() as usize;
                    for _ in 0..n {
                        let q = base
                            + ax * rng.random_range(-h[0]..h[0])
                            + ay * rng.random_range(-h[1]..h[1])
                            + Vector3::z() * height;
                        if in_range(&q) {
                            out.push(q);
                        }
                    }
                }
                Primitive::Pole {
                    center: c,
                    radius,
                    height,
                } => {
                    if (c[0] - center.x).hypot(c[1] - center.y) > range {
                        continue;
                    }
                    let n = (p.pole_density * height).round() as usize;
                    for _ in 0..n {
                        let a = rng.random_range(0.0..std::f64::consts::TAU);
                        out.push(Point3::new(
                            c[0] + radius * a.cos(),
                            c[1] + radius * a.sin(),
                            rng.random_range(0.0..height),
                        ));
                    }
                }
            }
        }
        out
    }

    /// One scan in the sensor frame of `pose` (sensor-to-world), with
    /// isotropic Gaussian noise.
    pub fn scan(&self, index: usize, pose: &RigidTransform, range: f64, rng: &mut impl Rng) -> Scan {
        let center = Point3::from(pose.translation);
        let world = self.sample_world(&center, range, rng);
        let inv = pose.inverse();
        let noise = Normal::new(0.0, self.params.noise_sigma.max(0.0)).expect("finite sigma");
        let points = world
            .iter()
            .map(|p| {
                let q = inv.apply(p);
                q + Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
            })
            .collect();
        Scan {
            index,
            points,
            pose: *pose,
        }
    }
}

/// Sensor pose at `(x, y)` with heading `yaw`, mounted `height` above ground.
pub fn sensor_pose(x: f64, y: f64, height: f64, yaw: f64) -> RigidTransform {
    RigidTransform::from_yaw(yaw, Vector3::new(x, y, height))
}

/// Drive along the street to `turn_x`, turn around, and come back on the
/// other lane. Returns one pose per scan.
pub fn out_and_back(start_x: f64, turn_x: f64, step: f64, lane_offset: f64, height: f64) -> Vec<RigidTransform> {
    let mut poses = Vec::new();
    let mut x = start_x;
    while x <= turn_x + 1e-9 {
        poses.push(sensor_pose(x, -lane_offset / 2.0, height, 0.0));
        x += step;
    }
    let mut x = turn_x;
    while x >= start_x - 1e-9 {
        poses.push(sensor_pose(x, lane_offset / 2.0, height, std::f64::consts::PI));
        x -= step;
    }
    poses
}

/// Layout of a replay with planted revisits.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayPlan {
    pub scene_seed: u64,
    pub decoy_seed: u64,
    pub sample_seed: u64,
    pub scene: SceneParams,
    /// Along-street positions of the outbound keyframes.
    pub stations: Vec<f64>,
    pub decoys: usize,
    pub range: f64,
    /// Lateral distance between the outbound and return lanes.
    pub lane_offset: f64,
    pub sensor_height: f64,
}

impl Default for ReplayPlan {
    fn default() -> Self {
        Self {
            scene_seed: 11,
            decoy_seed: 12,
            sample_seed: 13,
            scene: SceneParams {
                length: 300.0,
                ..SceneParams::default()
            },
            stations: (0..6).map(|i| 20.0 + 50.0 * i as f64).collect(),
            decoys: 8,
            range: 25.0,
            lane_offset: 1.0,
            sensor_height: 1.8,
        }
    }
}

/// Decoy poses are reported this far away so they never count as revisits.
pub const DECOY_POSE_OFFSET: f64 = 10_000.0;

#[derive(Debug, Clone)]
pub struct PlantedReplay {
    /// Outbound frames, then decoys, then the return pass in reverse order.
    pub keyframes: Vec<Keyframe>,
    /// `(query, revisited)` pairs.
    pub planted: Vec<(FrameId, FrameId)>,
}

fn single_scan_keyframe(id: FrameId, scan: Scan) -> Keyframe {
    Keyframe {
        id,
        scan_range: (scan.index, scan.index),
        anchor_pose: scan.pose,
        cloud: scan.points,
    }
}

/// Outbound keyframes along one lane, keyframes from an unrelated scene, and
/// a return pass on the other lane facing the opposite way. One scan per
/// keyframe.
pub fn planted_replay(plan: &ReplayPlan) -> PlantedReplay {
    let scene = Scene::generate(plan.scene_seed, plan.scene);
    let decoy_scene = Scene::generate(plan.decoy_seed, plan.scene);
    let mut rng = ChaCha8Rng::seed_from_u64(plan.sample_seed);
    let half = plan.lane_offset / 2.0;
    let mut keyframes = Vec::new();
    let next = |kfs: &mut Vec<Keyframe>, scene: &Scene, pose: RigidTransform, label: RigidTransform, rng: &mut ChaCha8Rng| {
        let id = kfs.len() as FrameId;
        let mut scan = scene.scan(id as usize, &pose, plan.range, rng);
        scan.pose = label;
        kfs.push(single_scan_keyframe(id, scan));
        id
    };
    let mut outbound = Vec::new();
    for &x in &plan.stations {
        let pose = sensor_pose(x, -half, plan.sensor_height, 0.0);
        outbound.push(next(&mut keyframes, &scene, pose, pose, &mut rng));
    }
    for i in 0..plan.decoys {
        let x = plan.stations.first().copied().unwrap_or(0.0) + plan.scene.length * (i as f64 + 0.5) / plan.decoys.max(1) as f64;
        let pose = sensor_pose(x.round(), -half, plan.sensor_height, 0.0);
        let label = sensor_pose(x.round(), DECOY_POSE_OFFSET, plan.sensor_height, 0.0);
        next(&mut keyframes, &decoy_scene, pose, label, &mut rng);
    }
    let mut planted = Vec::new();
    for (k, &x) in plan.stations.iter().enumerate().rev() {
        let pose = sensor_pose(x, half, plan.sensor_height, std::f64::consts::PI);
        let id = next(&mut keyframes, &scene, pose, pose, &mut rng);
        planted.push((id, outbound[k]));
    }
    PlantedReplay { keyframes, planted }
}
