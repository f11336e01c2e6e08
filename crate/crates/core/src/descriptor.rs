//! Canonical triangle descriptors built from key-point neighborhoods.

use std::cmp::Ordering;
use std::collections::HashSet;

use thiserror::Error;

use crate::geometry::{Point3, RigidTransform, Vector3};
use crate::keypoints::{lex, KeyPoint};
use crate::spatial::KdTree;
use crate::FrameId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescriptorParams {
    pub k_neighbors: usize,
    /// Shortest admissible side (m).
    pub min_side: f64,
    /// Minimum triangle-inequality slack `l12 + l23 − l13` (m).
    pub degenerate_eps: f64,
    /// Side-triple resolution for dropping duplicates (m).
    pub dedup_resolution: f64,
}

impl Default for DescriptorParams {
    fn default() -> Self {
        Self {
            k_neighbors: 20,
            min_side: 0.5,
            degenerate_eps: 0.1,
            dedup_resolution: 0.01,
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum DescriptorError {
    #[error("need at least 3 key points, got {0}")]
    TooFewKeyPoints(usize),
}

/// A triangle of key points with vertices ordered so that `l12 ≤ l23 ≤ l13`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleDescriptor {
    pub vertices: [Point3; 3],
    pub normals: [Vector3; 3],
    /// `[l12, l23, l13]`.
    pub sides: [f64; 3],
    pub centroid: Point3,
    pub frame_id: FrameId,
}

/// The six rigid-invariant attributes: three sides, then `|n1·n2|, |n2·n3|, |n1·n3|`.
pub type Signature = [f64; 6];

impl TriangleDescriptor {
    /// Orders the vertices canonically. Returns `None` if the triangle has a
    /// side shorter than `min_side` or slack below `degenerate_eps`.
    pub fn from_corners(corners: [(Point3, Vector3); 3], frame_id: FrameId, params: &DescriptorParams) -> Option<Self> {
        let d = |i: usize, j: usize| (corners[i].0 - corners[j].0).norm();
        // side opposite each corner
        let opposite = [d(1, 2), d(0, 2), d(0, 1)];
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            opposite[a]
                .total_cmp(&opposite[b])
                .then_with(|| lex(&corners[a].0, &corners[b].0))
        });
        // p3 faces the shortest side, p1 the middle one, p2 the longest
        let (i1, i2, i3) = (order[1], order[2], order[0]);
        let vertices = [corners[i1].0, corners[i2].0, corners[i3].0];
        let normals = [corners[i1].1, corners[i2].1, corners[i3].1];
        let sides = [opposite[i3], opposite[i1], opposite[i2]];
        if sides[0] < params.min_side || sides[0] + sides[1] - sides[2] < params.degenerate_eps {
            return None;
        }
        let centroid = Point3::from((vertices[0].coords + vertices[1].coords + vertices[2].coords) / 3.0);
        Some(Self {
            vertices,
            normals,
            sides,
            centroid,
            frame_id,
        })
    }

    pub fn signature(&self) -> Signature {
        descriptor_signature(self)
    }

    /// Applies `t` to vertices, normals and centroid.
    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            vertices: self.vertices.map(|p| t.apply(&p)),
            normals: self.normals.map(|n| t.apply_vector(&n)),
            sides: self.sides,
            centroid: t.apply(&self.centroid),
            frame_id: self.frame_id,
        }
    }

    fn quantized_sides(&self, resolution: f64) -> [i64; 3] {
        self.sides.map(|s| (s / resolution).floor() as i64)
    }
}

pub fn descriptor_signature(d: &TriangleDescriptor) -> Signature {
    let [n1, n2, n3] = d.normals;
    [
        d.sides[0],
        d.sides[1],
        d.sides[2],
        n1.dot(&n2).abs(),
        n2.dot(&n3).abs(),
        n1.dot(&n3).abs(),
    ]
}

fn canonical_cmp(a: &TriangleDescriptor, b: &TriangleDescriptor) -> Ordering {
    a.sides
        .iter()
        .zip(&b.sides)
        .map(|(x, y)| x.total_cmp(y))
        .chain(a.vertices.iter().zip(&b.vertices).map(|(x, y)| lex(x, y)))
        .chain(a.normals.iter().zip(&b.normals).map(|(x, y)| lex(&(*x).into(), &(*y).into())))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Triangles from each key point and every pair of its `k_neighbors` nearest
/// key points, canonicalized, filtered, and deduplicated by quantized side
/// triple. Output is sorted by side triple and independent of input order.
pub fn build_descriptors(
    keypoints: &[KeyPoint],
    frame_id: FrameId,
    params: &DescriptorParams,
) -> Result<Vec<TriangleDescriptor>, DescriptorError> {
    if keypoints.len() < 3 {
        return Err(DescriptorError::TooFewKeyPoints(keypoints.len()));
    }
    let positions: Vec<Point3> = keypoints.iter().map(|k| k.position).collect();
    let tree = KdTree::new(&positions);
    let mut seen_triples: HashSet<[usize; 3]> = HashSet::new();
    let mut candidates = Vec::new();
    for (anchor, kp) in keypoints.iter().enumerate() {
        let neighbors: Vec<usize> = tree
            .nearest(&kp.position, params.k_neighbors + 1)
            .into_iter()
            .map(|(i, _)| i)
            .filter(|&i| i != anchor)
            .take(params.k_neighbors)
            .collect();
        for (a, &j) in neighbors.iter().enumerate() {
            for &m in &neighbors[a + 1..] {
                let mut triple = [anchor, j, m];
                triple.sort_unstable();
                if !seen_triples.insert(triple) {
                    continue;
                }
                let corner = |i: usize| (keypoints[i].position, keypoints[i].normal);
                if let Some(d) = TriangleDescriptor::from_corners([corner(triple[0]), corner(triple[1]), corner(triple[2])], frame_id, params) {
                    candidates.push(d);
                }
            }
        }
    }
    candidates.sort_by(canonical_cmp);
    let mut kept_sides = HashSet::new();
    candidates.retain(|d| kept_sides.insert(d.quantized_sides(params.dedup_resolution)));
    Ok(candidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kp(x: f64, y: f64, z: f64, n: Vector3) -> KeyPoint {
        KeyPoint {
            position: Point3::new(x, y, z),
            normal: n,
            plane_id: 0,
            frame_id: 0,
            value: 1.0,
            pixel: [0, 0],
        }
    }

    fn random_unit(rng: &mut impl Rng) -> Vector3 {
        Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize()
    }

    #[test]
    fn right_triangle() {
        let z = Vector3::z();
        let kps = [kp(0.0, 0.0, 0.0, z), kp(3.0, 0.0, 0.0, z), kp(0.0, 4.0, 0.0, z)];
        let ds = build_descriptors(&kps, 1, &DescriptorParams::default()).unwrap();
        assert_eq!(ds.len(), 1);
        let d = &ds[0];
        assert!((d.sides[0] - 3.0).abs() < 1e-12 && (d.sides[1] - 4.0).abs() < 1e-12 && (d.sides[2] - 5.0).abs() < 1e-12);
        assert!(((d.vertices[0] - d.vertices[1]).norm() - d.sides[0]).abs() < 1e-9);
        assert!(((d.vertices[1] - d.vertices[2]).norm() - d.sides[1]).abs() < 1e-9);
        assert!(((d.vertices[0] - d.vertices[2]).norm() - d.sides[2]).abs() < 1e-9);
        assert_eq!(d.frame_id, 1);
        assert_eq!(d.centroid, Point3::new(1.0, 4.0 / 3.0, 0.0));
    }

    #[test]
    fn square_corners_collapse_to_one() {
        let z = Vector3::z();
        let kps = [kp(0.0, 0.0, 0.0, z), kp(1.0, 0.0, 0.0, z), kp(1.0, 1.0, 0.0, z), kp(0.0, 1.0, 0.0, z)];
        let ds = build_descriptors(&kps, 0, &DescriptorParams::default()).unwrap();
        assert_eq!(ds.len(), 1);
        assert!((ds[0].sides[2] - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn too_few_and_degenerate() {
        let z = Vector3::z();
        assert_eq!(
            build_descriptors(&[kp(0.0, 0.0, 0.0, z)], 0, &DescriptorParams::default()),
            Err(DescriptorError::TooFewKeyPoints(1))
        );
        // short side
        let kps = [kp(0.0, 0.0, 0.0, z), kp(0.3, 0.0, 0.0, z), kp(0.0, 4.0, 0.0, z)];
        assert!(build_descriptors(&kps, 0, &DescriptorParams::default()).unwrap().is_empty());
        // nearly collinear
        let kps = [kp(0.0, 0.0, 0.0, z), kp(2.0, 0.01, 0.0, z), kp(4.0, 0.0, 0.0, z)];
        assert!(build_descriptors(&kps, 0, &DescriptorParams::default()).unwrap().is_empty());
    }

    #[test]
    fn signature_examples() {
        let z = Vector3::z();
        let h = 3f64.sqrt() / 2.0 * 2.0;
        let kps = [kp(0.0, 0.0, 0.0, z), kp(2.0, 0.0, 0.0, z), kp(1.0, h, 0.0, z)];
        let d = build_descriptors(&kps, 0, &DescriptorParams::default()).unwrap()[0];
        let s = descriptor_signature(&d);
        for k in 0..3 {
            assert!((s[k] - 2.0).abs() < 1e-12);
            assert_eq!(s[3 + k], 1.0);
        }
        let kps = [kp(0.0, 0.0, 0.0, Vector3::x()), kp(3.0, 0.0, 0.0, Vector3::y()), kp(0.0, 4.0, 0.0, Vector3::y())];
        let d = build_descriptors(&kps, 0, &DescriptorParams::default()).unwrap()[0];
        // p1 = (3,0,0) joins the shortest and longest sides, p2 = origin, p3 = (0,4,0)
        assert_eq!(d.vertices, [Point3::new(3.0, 0.0, 0.0), Point3::origin(), Point3::new(0.0, 4.0, 0.0)]);
        let s = d.signature();
        assert_eq!(s[3], 0.0);
        assert_eq!(s[4], 0.0);
        assert_eq!(s[5], 1.0);
    }

    #[test]
    fn signature_is_rigid_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let corners = [0, 1, 2].map(|_| {
                (
                    Point3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-3.0..3.0)),
                    random_unit(&mut rng),
                )
            });
            let Some(d) = TriangleDescriptor::from_corners(corners, 0, &DescriptorParams::default()) else {
                continue;
            };
            let t = RigidTransform::from_axis_angle(random_unit(&mut rng), rng.random_range(-3.1..3.1), random_unit(&mut rng) * 30.0);
            let moved = corners.map(|(p, n)| (t.apply(&p), t.apply_vector(&n)));
            let d2 = TriangleDescriptor::from_corners(moved, 0, &DescriptorParams::default()).unwrap();
            for (a, b) in d.signature().iter().zip(d2.signature()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    fn canonical_sides(a: Point3, b: Point3, c: Point3) -> [f64; 3] {
        let mut s = [(a - b).norm(), (b - c).norm(), (a - c).norm()];
        s.sort_by(f64::total_cmp);
        s
    }

    #[test]
    fn matches_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = DescriptorParams::default();
        for _ in 0..5 {
            let kps: Vec<KeyPoint> = (0..30)
                .map(|_| kp(rng.random_range(0.0..30.0), rng.random_range(0.0..30.0), rng.random_range(0.0..3.0), random_unit(&mut rng)))
                .collect();
            // neighbor sets by sorting all distances
            let knn: Vec<HashSet<usize>> = (0..kps.len())
                .map(|i| {
                    let mut d: Vec<(f64, usize)> = (0..kps.len())
                        .filter(|&j| j != i)
                        .map(|j| ((kps[i].position - kps[j].position).norm(), j))
                        .collect();
                    d.sort_by(|a, b| a.0.total_cmp(&b.0));
                    d.iter().take(20).map(|x| x.1).collect()
                })
                .collect();
            let mut oracle: Vec<[f64; 3]> = Vec::new();
            for a in 0..30 {
                for b in a + 1..30 {
                    for c in b + 1..30 {
                        let formed = (knn[a].contains(&b) && knn[a].contains(&c))
                            || (knn[b].contains(&a) && knn[b].contains(&c))
                            || (knn[c].contains(&a) && knn[c].contains(&b));
                        if !formed {
                            continue;
                        }
                        let s = canonical_sides(kps[a].position, kps[b].position, kps[c].position);
                        if s[0] < 0.5 || s[0] + s[1] - s[2] < 0.1 {
                            continue;
                        }
                        oracle.push(s);
                    }
                }
            }
            oracle.sort_by(|x, y| x.iter().zip(y).map(|(a, b)| a.total_cmp(b)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal));
            let mut seen = HashSet::new();
            oracle.retain(|s| seen.insert(s.map(|v| (v / 0.01).floor() as i64)));

            let got: Vec<[f64; 3]> = build_descriptors(&kps, 0, &params).unwrap().iter().map(|d| d.sides).collect();
            assert_eq!(got.len(), oracle.len());
            for (g, o) in got.iter().zip(&oracle) {
                for k in 0..3 {
                    assert!((g[k] - o[k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn order_independent_and_canonical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut kps: Vec<KeyPoint> = (0..60)
            .map(|_| kp(rng.random_range(0.0..40.0), rng.random_range(0.0..40.0), rng.random_range(0.0..4.0), random_unit(&mut rng)))
            .collect();
        let a = build_descriptors(&kps, 0, &DescriptorParams::default()).unwrap();
        kps.shuffle(&mut rng);
        let b = build_descriptors(&kps, 0, &DescriptorParams::default()).unwrap();
        assert_eq!(a, b);
        let mut triples = HashSet::new();
        for d in &a {
            assert!(d.sides[0] <= d.sides[1] && d.sides[1] <= d.sides[2]);
            assert!(d.sides[0] + d.sides[1] > d.sides[2] + 0.1);
            assert!(triples.insert(d.sides.map(|s| (s / 0.01).floor() as i64)));
            let q = (d.vertices[0].coords + d.vertices[1].coords + d.vertices[2].coords) / 3.0;
            assert!((q - d.centroid.coords).norm() < 1e-12);
        }
    }
}
