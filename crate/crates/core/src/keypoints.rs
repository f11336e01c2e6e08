//! Boundary projection, per-plane distance images and key-point selection.

use thiserror::Error;

use crate::geometry::{Point3, RigidTransform, Vector3};
use crate::plane::{Plane, VoxelMap};
use crate::FrameId;

/// Half-width of the suppression window (5x5).
pub const NMS_RADIUS: i64 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointParams {
    pub pixel_size: f64,
    pub min_dist: f64,
    /// Per-keyframe cap; the largest pixel values are kept.
    pub max_keypoints: usize,
}

impl Default for KeypointParams {
    fn default() -> Self {
        Self {
            pixel_size: 0.5,
            min_dist: 0.2,
            max_keypoints: 200,
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum KeypointError {
    #[error("plane {0} has no boundary voxels")]
    NoBoundary(usize),
}

/// An orthonormal frame attached to a plane: origin on the plane, normal and
/// two in-plane axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFrame {
    pub origin: Point3,
    pub normal: Vector3,
    pub e1: Vector3,
    pub e2: Vector3,
}

impl PlaneFrame {
    /// `e1` is the global axis least aligned with `normal`, projected into the
    /// plane; `e2 = normal × e1`.
    pub fn new(origin: Point3, normal: Vector3) -> Self {
        let normal = normal.normalize();
        let axis = normal.iamin();
        let mut g = Vector3::zeros();
        g[axis] = 1.0;
        let e1 = (g - normal * normal.dot(&g)).normalize();
        let e2 = normal.cross(&e1);
        Self { origin, normal, e1, e2 }
    }

    pub fn of_plane(plane: &Plane) -> Self {
        Self::new(plane.center, plane.normal)
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            origin: t.apply(&self.origin),
            normal: t.apply_vector(&self.normal),
            e1: t.apply_vector(&self.e1),
            e2: t.apply_vector(&self.e2),
        }
    }

    pub fn project(&self, p: &Point3) -> Projection {
        let d = p - self.origin;
        Projection {
            point: *p,
            distance: self.normal.dot(&d).abs(),
            uv: [d.dot(&self.e1), d.dot(&self.e2)],
        }
    }
}

/// A boundary point with its distance to the plane and in-plane coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub point: Point3,
    pub distance: f64,
    pub uv: [f64; 2],
}

/// Projects the points of all boundary voxels of `plane` onto it.
pub fn project_boundary(plane: &Plane, map: &VoxelMap) -> Result<Vec<Projection>, KeypointError> {
    if plane.boundary.is_empty() {
        return Err(KeypointError::NoBoundary(plane.id));
    }
    let frame = PlaneFrame::of_plane(plane);
    Ok(project_points(
        &frame,
        plane
            .boundary
            .iter()
            .filter_map(|c| map.get(c))
            .flat_map(|v| v.points.iter()),
    ))
}

pub fn project_points<'a>(frame: &PlaneFrame, points: impl IntoIterator<Item = &'a Point3>) -> Vec<Projection> {
    points.into_iter().map(|p| frame.project(p)).collect()
}

/// Max-distance raster over a plane. Empty pixels hold `-∞`.
#[derive(Debug, Clone)]
pub struct PlaneImage {
    pub plane_id: usize,
    pub frame: PlaneFrame,
    pub pixel_size: f64,
    /// Pixel index of column 0 / row 0.
    pub min_pixel: [i64; 2],
    pub width: usize,
    pub height: usize,
    values: Vec<f64>,
    sources: Vec<Option<usize>>,
    projections: Vec<Projection>,
}

impl PlaneImage {
    pub fn value(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Index into the projections of the point realizing the pixel maximum.
    pub fn source(&self, col: usize, row: usize) -> Option<usize> {
        self.sources[row * self.width + col]
    }

    pub fn projections(&self) -> &[Projection] {
        &self.projections
    }

    pub fn occupied(&self) -> usize {
        self.sources.iter().filter(|s| s.is_some()).count()
    }
}

fn pixel_of(uv: &[f64; 2], pixel_size: f64) -> [i64; 2] {
    [(uv[0] / pixel_size).floor() as i64, (uv[1] / pixel_size).floor() as i64]
}

/// Rasterizes projections; each pixel keeps its maximum distance and the first
/// point that attained it.
pub fn rasterize(plane_id: usize, frame: PlaneFrame, projections: Vec<Projection>, pixel_size: f64) -> PlaneImage {
    assert!(pixel_size > 0.0, "pixel size must be positive");
    let pixels: Vec<[i64; 2]> = projections.iter().map(|p| pixel_of(&p.uv, pixel_size)).collect();
    let (mut lo, mut hi) = ([i64::MAX; 2], [i64::MIN; 2]);
    for px in &pixels {
        for a in 0..2 {
            lo[a] = lo[a].min(px[a]);
            hi[a] = hi[a].max(px[a]);
        }
    }
    let (width, height) = if pixels.is_empty() {
        lo = [0, 0];
        (0, 0)
    } else {
        ((hi[0] - lo[0] + 1) as usize, (hi[1] - lo[1] + 1) as usize)
    };
    let mut values = vec![f64::NEG_INFINITY; width * height];
    let mut sources = vec![None; width * height];
    for (i, (px, proj)) in pixels.iter().zip(&projections).enumerate() {
        let idx = (px[1] - lo[1]) as usize * width + (px[0] - lo[0]) as usize;
        if sources[idx].is_none() || proj.distance > values[idx] {
            values[idx] = proj.distance;
            sources[idx] = Some(i);
        }
    }
    PlaneImage {
        plane_id,
        frame,
        pixel_size,
        min_pixel: lo,
        width,
        height,
        values,
        sources,
        projections,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyPoint {
    /// A point of the input cloud.
    pub position: Point3,
    /// Normal of the plane the point was extracted from.
    pub normal: Vector3,
    pub plane_id: usize,
    pub frame_id: FrameId,
    /// Pixel value (distance to the plane).
    pub value: f64,
    /// Image column and row of the winning pixel.
    pub pixel: [usize; 2],
}

/// Pixels with value ≥ `min_dist` that beat every other occupied pixel of
/// their 5x5 window; equal values go to the lower row-major index.
pub fn extract_keypoints(img: &PlaneImage, min_dist: f64, frame_id: FrameId) -> Vec<KeyPoint> {
    let mut out = Vec::new();
    for row in 0..img.height {
        for col in 0..img.width {
            let idx = row * img.width + col;
            let Some(src) = img.sources[idx] else {
                continue;
            };
            let v = img.values[idx];
            if v < min_dist {
                continue;
            }
            if is_window_max(img, col, row) {
                out.push(KeyPoint {
                    position: img.projections[src].point,
                    normal: img.frame.normal,
                    plane_id: img.plane_id,
                    frame_id,
                    value: v,
                    pixel: [col, row],
                });
            }
        }
    }
    out
}

fn is_window_max(img: &PlaneImage, col: usize, row: usize) -> bool {
    let idx = row * img.width + col;
    let v = img.values[idx];
    let (c, r) = (col as i64, row as i64);
    for rr in (r - NMS_RADIUS).max(0)..=(r + NMS_RADIUS).min(img.height as i64 - 1) {
        for cc in (c - NMS_RADIUS).max(0)..=(c + NMS_RADIUS).min(img.width as i64 - 1) {
            let j = rr as usize * img.width + cc as usize;
            if j == idx || img.sources[j].is_none() {
                continue;
            }
            let w = img.values[j];
            if w > v || (w == v && j < idx) {
                return false;
            }
        }
    }
    true
}

/// Key points of every plane with a boundary, capped at `max_keypoints`
/// (largest values first).
pub fn extract_frame_keypoints(map: &VoxelMap, planes: &[Plane], params: &KeypointParams, frame_id: FrameId) -> Vec<KeyPoint> {
    let mut all = Vec::new();
    for plane in planes {
        let Ok(projections) = project_boundary(plane, map) else {
            continue;
        };
        let img = rasterize(plane.id, PlaneFrame::of_plane(plane), projections, params.pixel_size);
        all.extend(extract_keypoints(&img, params.min_dist, frame_id));
    }
    all.sort_by(|a, b| {
        b.value
            .total_cmp(&a.value)
            .then_with(|| lex(&a.position, &b.position))
            .then(a.plane_id.cmp(&b.plane_id))
    });
    all.truncate(params.max_keypoints);
    all
}

pub(crate) fn lex(a: &Point3, b: &Point3) -> std::cmp::Ordering {
    a.x.total_cmp(&b.x)
        .then(a.y.total_cmp(&b.y))
        .then(a.z.total_cmp(&b.z))
}
