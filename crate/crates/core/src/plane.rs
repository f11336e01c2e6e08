//! Voxelization, eigenvalue plane test, and region growing of planes.

use std::collections::{HashMap, HashSet, VecDeque};

use nalgebra::{Matrix3, SymmetricEigen};

use crate::geometry::{Point3, Vector3};
use crate::ingest::{cell_of, CellIndex};

/// Voxels with fewer points are never tested for planarity.
pub const MIN_VOXEL_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    /// Face neighbors.
    #[default]
    Six,
    /// Face, edge and corner neighbors.
    TwentySix,
}

impl Connectivity {
    fn offsets(self) -> Vec<[i64; 3]> {
        match self {
            Connectivity::Six => vec![
                [-1, 0, 0],
                [1, 0, 0],
                [0, -1, 0],
                [0, 1, 0],
                [0, 0, -1],
                [0, 0, 1],
            ],
            Connectivity::TwentySix => {
                let mut v = Vec::with_capacity(26);
                for dx in -1..=1 {
                    for dy in -1..=1 {
                        for dz in -1..=1 {
                            if (dx, dy, dz) != (0, 0, 0) {
                                v.push([dx, dy, dz]);
                            }
                        }
                    }
                }
                v
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneParams {
    pub voxel_size: f64,
    /// Upper bound on the smallest eigenvalue (m²).
    pub sigma1: f64,
    /// Lower bound on the middle eigenvalue (m²).
    pub sigma2: f64,
    pub normal_merge_tol: f64,
    pub dist_merge_tol: f64,
    pub connectivity: Connectivity,
}

impl Default for PlaneParams {
    fn default() -> Self {
        Self {
            voxel_size: 1.0,
            sigma1: 0.01,
            sigma2: 0.05,
            normal_merge_tol: 0.02,
            dist_merge_tol: 0.2,
            connectivity: Connectivity::Six,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Voxel {
    pub cell: CellIndex,
    pub points: Vec<Point3>,
    pub mean: Point3,
    pub covariance: Matrix3<f64>,
    /// Descending: `λ1 ≥ λ2 ≥ λ3`. Zero when the voxel has too few points.
    pub eigenvalues: [f64; 3],
    /// Eigenvector of `λ3`, sign-canonicalized. Zero when not computed.
    pub normal: Vector3,
    pub is_plane: bool,
}

impl Voxel {
    fn from_points(cell: CellIndex, points: Vec<Point3>) -> Self {
        let n = points.len() as f64;
        let mean = Point3::from(points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n);
        let mut covariance = Matrix3::zeros();
        for p in &points {
            let d = p - mean;
            covariance += d * d.transpose();
        }
        covariance /= n;
        let (eigenvalues, normal) = if points.len() >= MIN_VOXEL_POINTS {
            sorted_eigen(&covariance)
        } else {
            ([0.0; 3], Vector3::zeros())
        };
        Self {
            cell,
            points,
            mean,
            covariance,
            eigenvalues,
            normal,
            is_plane: false,
        }
    }

    pub fn has_eigen(&self) -> bool {
        self.points.len() >= MIN_VOXEL_POINTS
    }
}

/// Eigenvalues in descending order and the canonical eigenvector of the smallest.
pub fn sorted_eigen(m: &Matrix3<f64>) -> ([f64; 3], Vector3) {
    let eig = SymmetricEigen::new(*m);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = [
        eig.eigenvalues[idx[0]],
        eig.eigenvalues[idx[1]],
        eig.eigenvalues[idx[2]],
    ];
    let normal = canonical_normal(eig.eigenvectors.column(idx[2]).normalize());
    (values, normal)
}

/// Flips `n` so that its largest-magnitude component is positive.
pub fn canonical_normal(n: Vector3) -> Vector3 {
    let i = n.iamax();
    if n[i] < 0.0 {
        -n
    } else {
        n
    }
}

/// `λ3 < σ1` and `λ2 > σ2`.
pub fn is_plane_voxel(v: &Voxel, sigma1: f64, sigma2: f64) -> bool {
    v.has_eigen() && eigen_plane_test(&v.eigenvalues, sigma1, sigma2)
}

pub fn eigen_plane_test(eigenvalues: &[f64; 3], sigma1: f64, sigma2: f64) -> bool {
    eigenvalues[2] < sigma1 && eigenvalues[1] > sigma2
}

#[derive(Debug, Clone)]
pub struct VoxelMap {
    voxel_size: f64,
    voxels: HashMap<CellIndex, Voxel>,
}

impl VoxelMap {
    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn get(&self, cell: &CellIndex) -> Option<&Voxel> {
        self.voxels.get(cell)
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CellIndex, &Voxel)> {
        self.voxels.iter()
    }

    /// Occupied cells in ascending order.
    pub fn sorted_cells(&self) -> Vec<CellIndex> {
        let mut cells: Vec<_> = self.voxels.keys().copied().collect();
        cells.sort_unstable();
        cells
    }

    /// Sets `is_plane` on every voxel.
    pub fn classify(&mut self, sigma1: f64, sigma2: f64) {
        for v in self.voxels.values_mut() {
            v.is_plane = is_plane_voxel(v, sigma1, sigma2);
        }
    }

    pub fn plane_voxel_count(&self) -> usize {
        self.voxels.values().filter(|v| v.is_plane).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum PlaneError {
    #[error("empty point cloud")]
    EmptyInput,
    #[error("voxel size must be positive")]
    NonPositiveVoxelSize,
}

/// Bins `cloud` into cubic voxels and computes per-voxel statistics.
/// Voxels come back unclassified; see [`VoxelMap::classify`].
pub fn build_voxel_map(cloud: &[Point3], voxel_size: f64) -> Result<VoxelMap, PlaneError> {
    if !(voxel_size > 0.0) {
        return Err(PlaneError::NonPositiveVoxelSize);
    }
    if cloud.is_empty() {
        return Err(PlaneError::EmptyInput);
    }
    let mut bins: HashMap<CellIndex, Vec<Point3>> = HashMap::new();
    for p in cloud {
        bins.entry(cell_of(p, voxel_size)).or_default().push(*p);
    }
    let voxels = bins
        .into_iter()
        .map(|(cell, pts)| (cell, Voxel::from_points(cell, pts)))
        .collect();
    Ok(VoxelMap { voxel_size, voxels })
}

#[derive(Debug, Clone)]
pub struct Plane {
    pub id: usize,
    /// Mean of all member points.
    pub center: Point3,
    pub normal: Vector3,
    pub members: Vec<CellIndex>,
    /// Occupied neighbors that did not join the plane, ascending.
    pub boundary: Vec<CellIndex>,
    pub point_count: usize,
}

impl Plane {
    /// A plane with only geometry (no voxel bookkeeping).
    pub fn from_center_normal(id: usize, center: Point3, normal: Vector3) -> Self {
        Self {
            id,
            center,
            normal: normal.normalize(),
            members: Vec::new(),
            boundary: Vec::new(),
            point_count: 0,
        }
    }
}

fn offset(cell: &CellIndex, d: &[i64; 3]) -> CellIndex {
    [cell[0] + d[0], cell[1] + d[1], cell[2] + d[2]]
}

/// Region-grows classified plane voxels into planes.
///
/// A neighbor joins when it is a free plane voxel with
/// `|u_seed · u| > 1 − normal_merge_tol` and its mean lies within
/// `dist_merge_tol` of the seed plane; any other occupied neighbor is
/// recorded as a boundary voxel.
pub fn grow_planes(map: &VoxelMap, params: &PlaneParams) -> Vec<Plane> {
    let offsets = params.connectivity.offsets();
    let mut owner: HashMap<CellIndex, usize> = HashMap::new();
    let mut planes = Vec::new();

    for seed_cell in map.sorted_cells() {
        let seed = &map.voxels[&seed_cell];
        if !seed.is_plane || owner.contains_key(&seed_cell) {
            continue;
        }
        let id = planes.len();
        owner.insert(seed_cell, id);
        let mut members = vec![seed_cell];
        let mut boundary: HashSet<CellIndex> = HashSet::new();
        let mut frontier = VecDeque::from([seed_cell]);

        while let Some(cell) = frontier.pop_front() {
            for d in &offsets {
                let nb_cell = offset(&cell, d);
                let Some(nb) = map.voxels.get(&nb_cell) else {
                    continue;
                };
                match owner.get(&nb_cell) {
                    Some(&o) if o == id => continue,
                    Some(_) => {
                        boundary.insert(nb_cell);
                        continue;
                    }
                    None => {}
                }
                let joins = nb.is_plane
                    && seed.normal.dot(&nb.normal).abs() > 1.0 - params.normal_merge_tol
                    && seed.normal.dot(&(nb.mean - seed.mean)).abs() < params.dist_merge_tol;
                if joins {
                    owner.insert(nb_cell, id);
                    members.push(nb_cell);
                    frontier.push_back(nb_cell);
                } else {
                    boundary.insert(nb_cell);
                }
            }
        }

        members.sort_unstable();
        let mut boundary: Vec<_> = boundary.into_iter().collect();
        boundary.sort_unstable();
        let (center, normal, point_count) = fit_plane(map, &members, seed.normal, params.normal_merge_tol);
        planes.push(Plane {
            id,
            center,
            normal,
            members,
            boundary,
            point_count,
        });
    }
    // Boundary cells may have been claimed by a later plane; they stay boundary
    // for the earlier one, which matches the "not on the same plane" rule.
    planes
}

/// Pooled center and normal of `members`. Falls back to the seed normal if the
/// pooled one would disagree with any member beyond the merge tolerance.
fn fit_plane(map: &VoxelMap, members: &[CellIndex], seed_normal: Vector3, tol: f64) -> (Point3, Vector3, usize) {
    let total: usize = members.iter().map(|c| map.voxels[c].points.len()).sum();
    let n = total as f64;
    let center = Point3::from(
        members
            .iter()
            .map(|c| {
                let v = &map.voxels[c];
                v.mean.coords * v.points.len() as f64
            })
            .fold(Vector3::zeros(), |a, b| a + b)
            / n,
    );
    let mut scatter = Matrix3::zeros();
    for c in members {
        let v = &map.voxels[c];
        let d = v.mean - center;
        scatter += (v.covariance + d * d.transpose()) * v.points.len() as f64;
    }
    let (_, pooled) = sorted_eigen(&(scatter / n));
    let consistent = members
        .iter()
        .all(|c| map.voxels[c].normal.dot(&pooled).abs() > 1.0 - tol);
    let normal = if consistent { pooled } else { seed_normal };
    (center, normal, total)
}

/// Builds, classifies and grows planes in one call.
pub fn extract_planes(cloud: &[Point3], params: &PlaneParams) -> Result<(VoxelMap, Vec<Plane>), PlaneError> {
    let mut map = build_voxel_map(cloud, params.voxel_size)?;
    map.classify(params.sigma1, params.sigma2);
    let planes = grow_planes(&map, params);
    Ok((map, planes))
}
