//! Scan and pose loading, keyframe accumulation and voxel-grid downsampling.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion};
use thiserror::Error;

use crate::geometry::{Point3, RigidTransform, Vector3};
use crate::FrameId;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("KITTI record stream has {len} bytes, not a multiple of 16")]
    MalformedRecord { len: usize },
    #[error("unsupported point cloud format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed PCD file: {0}")]
    MalformedPcd(String),
    #[error("pose file line {line}: {msg}")]
    MalformedPose { line: usize, msg: String },
    #[error("empty input")]
    EmptyInput,
    #[error("voxel leaf must be positive, got {0}")]
    NonPositiveLeaf(f64),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One sensor sweep with its sensor-to-world pose.
#[derive(Debug, Clone)]
pub struct Scan {
    pub index: usize,
    pub points: Vec<Point3>,
    pub pose: RigidTransform,
}

/// Several consecutive scans merged into the frame of the first one.
#[derive(Debug, Clone)]
pub struct Keyframe {
    pub id: FrameId,
    pub cloud: Vec<Point3>,
    pub anchor_pose: RigidTransform,
    pub scan_range: (usize, usize),
}

/// Parses little-endian `(x, y, z, intensity)` float32 records; intensity is dropped.
pub fn parse_kitti_records(bytes: &[u8]) -> Result<Vec<Point3>, IngestError> {
    if bytes.len() % 16 != 0 {
        return Err(IngestError::MalformedRecord { len: bytes.len() });
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|rec| {
            let f = |o: usize| f32::from_le_bytes([rec[o], rec[o + 1], rec[o + 2], rec[o + 3]]) as f64;
            Point3::new(f(0), f(4), f(8))
        })
        .collect())
}

pub fn read_kitti_bin(path: impl AsRef<Path>) -> Result<Vec<Point3>, IngestError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_kitti_records(&bytes)
}

/// Writes points as KITTI records with zero intensity.
pub fn write_kitti_bin(path: impl AsRef<Path>, points: &[Point3]) -> Result<(), IngestError> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(points.len() * 16);
    for p in points {
        for v in [p.x as f32, p.y as f32, p.z as f32, 0.0f32] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(io_err(path))
}

/// Reads an ASCII PCD (v0.7) file, keeping x/y/z and skipping rows with NaNs.
pub fn read_pcd_ascii(path: impl AsRef<Path>) -> Result<Vec<Point3>, IngestError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();

    let mut fields: Vec<String> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    loop {
        let Some(line) = lines.next() else {
            return Err(IngestError::MalformedPcd("missing DATA line".into()));
        };
        let line = line.map_err(io_err(path))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let key = tokens.next().unwrap_or_default().to_ascii_uppercase();
        match key.as_str() {
            "FIELDS" => fields = tokens.map(str::to_owned).collect(),
            "COUNT" => {
                counts = tokens
                    .map(|t| t.parse().map_err(|_| IngestError::MalformedPcd(format!("bad COUNT `{t}`"))))
                    .collect::<Result<_, _>>()?
            }
            "DATA" => {
                let kind = tokens.next().unwrap_or_default();
                if kind != "ascii" {
                    return Err(IngestError::UnsupportedFormat(format!("PCD DATA {kind}")));
                }
                break;
            }
            _ => {}
        }
    }
    if counts.is_empty() {
        counts = vec![1; fields.len()];
    }
    if counts.len() != fields.len() {
        return Err(IngestError::MalformedPcd("FIELDS and COUNT lengths differ".into()));
    }
    let column = |name: &str| -> Result<usize, IngestError> {
        let pos = fields
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| IngestError::MalformedPcd(format!("missing field `{name}`")))?;
        Ok(counts[..pos].iter().sum())
    };
    let (cx, cy, cz) = (column("x")?, column("y")?, column("z")?);

    let mut points = Vec::new();
    for line in lines {
        let line = line.map_err(io_err(path))?;
        let values: Vec<&str> = line.split_whitespace().collect();
        if values.is_empty() {
            continue;
        }
        let get = |c: usize| -> Result<f64, IngestError> {
            values
                .get(c)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| IngestError::MalformedPcd(format!("bad data row `{line}`")))
        };
        let p = Point3::new(get(cx)?, get(cy)?, get(cz)?);
        if p.iter().all(|v| v.is_finite()) {
            points.push(p);
        }
    }
    Ok(points)
}

pub fn write_pcd_ascii(path: impl AsRef<Path>, points: &[Point3]) -> Result<(), IngestError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let n = points.len();
    write!(
        w,
        "# .PCD v0.7 - Point Cloud Data file format\nVERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\n\
         COUNT 1 1 1\nWIDTH {n}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {n}\nDATA ascii\n"
    )
    .map_err(io_err(path))?;
    for p in points {
        writeln!(w, "{:.7} {:.7} {:.7}", p.x, p.y, p.z).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a cloud by extension: `.bin` (KITTI) or `.pcd` (ASCII PCD).
pub fn read_scan_file(path: impl AsRef<Path>) -> Result<Vec<Point3>, IngestError> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => read_kitti_bin(path),
        Some("pcd") => read_pcd_ascii(path),
        other => Err(IngestError::UnsupportedFormat(format!("extension {other:?}"))),
    }
}

/// Lists `.bin` and `.pcd` files in `dir`, sorted by file name.
pub fn list_scan_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, IngestError> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("bin" | "pcd")))
        .collect();
    files.sort();
    Ok(files)
}

/// Parses one pose per line: either 12 floats (row-major 3x4, KITTI) or
/// `timestamp tx ty tz qx qy qz qw`.
pub fn parse_poses(text: &str) -> Result<Vec<RigidTransform>, IngestError> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| IngestError::MalformedPose {
                line: i + 1,
                msg: e.to_string(),
            })?;
        let pose = match values.len() {
            12 => {
                let mut arr = [0.0; 12];
                arr.copy_from_slice(&values);
                RigidTransform::from_row_major_3x4(&arr).orthonormalized()
            }
            8 => {
                let q = Quaternion::new(values[7], values[4], values[5], values[6]);
                if q.norm() < 1e-12 {
                    return Err(IngestError::MalformedPose {
                        line: i + 1,
                        msg: "zero quaternion".into(),
                    });
                }
                let rot = UnitQuaternion::from_quaternion(q);
                RigidTransform {
                    rotation: *rot.to_rotation_matrix().matrix(),
                    translation: Vector3::new(values[1], values[2], values[3]),
                }
            }
            n => {
                return Err(IngestError::MalformedPose {
                    line: i + 1,
                    msg: format!("expected 12 or 8 values, found {n}"),
                })
            }
        };
        if !pose.translation.iter().chain(pose.rotation.iter()).all(|v| v.is_finite()) {
            return Err(IngestError::MalformedPose {
                line: i + 1,
                msg: "non-finite value".into(),
            });
        }
        poses.push(pose);
    }
    Ok(poses)
}

pub fn read_poses(path: impl AsRef<Path>) -> Result<Vec<RigidTransform>, IngestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_poses(&text)
}

/// Writes poses in the 12-value KITTI layout.
pub fn write_poses(path: impl AsRef<Path>, poses: &[RigidTransform]) -> Result<(), IngestError> {
    let path = path.as_ref();
    let mut out = String::new();
    for pose in poses {
        let row: Vec<String> = pose.to_row_major_3x4().iter().map(|v| format!("{v:.12e}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Merges `scans` into the sensor frame of the first scan.
pub fn accumulate_keyframe(id: FrameId, scans: &[Scan]) -> Result<Keyframe, IngestError> {
    let first = scans.first().ok_or(IngestError::EmptyInput)?;
    let anchor_inv = first.pose.inverse();
    let total = scans.iter().map(|s| s.points.len()).sum();
    let mut cloud = Vec::with_capacity(total);
    for scan in scans {
        let to_anchor = anchor_inv.compose(&scan.pose);
        cloud.extend(scan.points.iter().map(|p| to_anchor.apply(p)));
    }
    if cloud.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    Ok(Keyframe {
        id,
        cloud,
        anchor_pose: first.pose,
        scan_range: (first.index, scans.last().map_or(first.index, |s| s.index)),
    })
}

/// Groups a scan stream into keyframes of `n_accumulate` scans each.
#[derive(Debug)]
pub struct KeyframeAccumulator {
    n_accumulate: usize,
    pending: Vec<Scan>,
    next_id: FrameId,
}

impl KeyframeAccumulator {
    pub fn new(n_accumulate: usize) -> Self {
        Self {
            n_accumulate: n_accumulate.max(1),
            pending: Vec::new(),
            next_id: 0,
        }
    }

    /// Adds a scan; returns a keyframe once `n_accumulate` scans are pending.
    pub fn push(&mut self, scan: Scan) -> Result<Option<Keyframe>, IngestError> {
        self.pending.push(scan);
        if self.pending.len() < self.n_accumulate {
            return Ok(None);
        }
        self.flush()
    }

    /// Emits whatever is pending as a (possibly short) keyframe.
    pub fn flush(&mut self) -> Result<Option<Keyframe>, IngestError> {
        if self.pending.is_empty() {
            return Ok(None);
        }
        let scans = std::mem::take(&mut self.pending);
        let kf = accumulate_keyframe(self.next_id, &scans)?;
        self.next_id += 1;
        Ok(Some(kf))
    }
}

pub type CellIndex = [i64; 3];

pub fn cell_of(p: &Point3, leaf: f64) -> CellIndex {
    [
        (p.x / leaf).floor() as i64,
        (p.y / leaf).floor() as i64,
        (p.z / leaf).floor() as i64,
    ]
}

/// Replaces the points of every occupied `leaf`-sized cell by their centroid.
/// Output is ordered by ascending cell index.
pub fn voxel_downsample(cloud: &[Point3], leaf: f64) -> Result<Vec<Point3>, IngestError> {
    if !(leaf > 0.0) {
        return Err(IngestError::NonPositiveLeaf(leaf));
    }
    let mut cells: HashMap<CellIndex, (Vector3, usize)> = HashMap::new();
    for p in cloud {
        let e = cells.entry(cell_of(p, leaf)).or_insert((Vector3::zeros(), 0));
        e.0 += p.coords;
        e.1 += 1;
    }
    let mut cells: Vec<_> = cells.into_iter().collect();
    cells.sort_unstable_by_key(|(k, _)| *k);
    Ok(cells
        .into_iter()
        .map(|(_, (sum, n))| Point3::from(sum / n as f64))
        .collect())
}
