//! Sequence replay, ground-truth loop labels, precision/recall sweeps and
//! the CSV/JSON outputs of an evaluation run.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::database::DbError;
use crate::geometry::{Point3, RigidTransform};
use crate::ingest::{list_scan_files, read_poses, read_scan_file, IngestError, Keyframe, KeyframeAccumulator, Scan};
use crate::pipeline::{FrameOutcome, LoopDetector, StageTimings};
use crate::verify::SelectionMode;
use crate::FrameId;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Db(#[from] DbError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {msg}")]
    BadRecord { path: PathBuf, msg: String },
    #[error("{scans} scans but only {poses} poses")]
    PoseCountMismatch { scans: usize, poses: usize },
    #[error("no scan files in {0}")]
    NoScans(PathBuf),
    #[error("ground truth is empty")]
    NoGroundTruth,
}

impl EvalError {
    /// Process exit code: 2 for configuration problems, 3 for everything
    /// touching input or output data.
    pub fn exit_code(&self) -> i32 {
        match self {
            EvalError::Config(ConfigError::Io { .. }) => 3,
            EvalError::Config(_) => 2,
            _ => 3,
        }
    }
}

/// Stored keyframes within the radius of a query, after the temporal exclusion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthLoop {
    pub query: FrameId,
    /// Ascending.
    pub matches: Vec<FrameId>,
}

/// Labels every keyframe against the frames inserted before it, skipping the
/// `skip_recent` most recent ones (the same window the detector skips).
pub fn ground_truth_loops(positions: &[(FrameId, Point3)], radius: f64, skip_recent: usize) -> Vec<GroundTruthLoop> {
    positions
        .iter()
        .enumerate()
        .map(|(i, (query, p))| {
            let eligible = i.saturating_sub(skip_recent);
            let mut matches: Vec<FrameId> = positions[..eligible]
                .iter()
                .filter(|(_, q)| (q - p).norm() <= radius)
                .map(|(id, _)| *id)
                .collect();
            matches.sort_unstable();
            GroundTruthLoop { query: *query, matches }
        })
        .collect()
}

/// Rotation error (degrees) and translation error (m) of `detected` against `truth`.
pub fn pose_error(detected: &RigidTransform, truth: &RigidTransform) -> (f64, f64) {
    let rot = truth.inverse().compose(detected).rotation_angle().to_degrees();
    (rot, (detected.translation - truth.translation).norm())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRecord {
    pub frame_id: FrameId,
    pub votes: usize,
    pub overlap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub query: FrameId,
    pub detected: Option<FrameId>,
    pub overlap: Option<f64>,
    pub votes: Option<usize>,
    pub inliers: Option<usize>,
    /// Verification of every candidate, in vote order, for re-scoring.
    pub candidates: Vec<CandidateRecord>,
    /// Error of the detected transform (degrees, m), when a detection and its
    /// ground truth exist.
    pub error: Option<(f64, f64)>,
    pub refined_error: Option<(f64, f64)>,
    pub timings: StageTimings,
}

impl EvalRecord {
    fn from_outcome(out: &FrameOutcome, poses: &HashMap<FrameId, RigidTransform>) -> Self {
        let det = out.detection.as_ref();
        let truth = det.and_then(|d| {
            let q = poses.get(&d.query_frame)?;
            let m = poses.get(&d.matched_frame)?;
            Some(m.inverse().compose(q))
        });
        Self {
            query: out.frame_id,
            detected: det.map(|d| d.matched_frame),
            overlap: det.map(|d| d.overlap),
            votes: det.map(|d| d.votes),
            inliers: det.map(|d| d.inliers),
            candidates: out
                .scores
                .iter()
                .map(|s| CandidateRecord {
                    frame_id: s.frame_id,
                    votes: s.votes,
                    overlap: s.overlap,
                })
                .collect(),
            error: det.zip(truth.as_ref()).map(|(d, t)| pose_error(&d.transform, t)),
            refined_error: det
                .and_then(|d| d.refined.as_ref())
                .zip(truth.as_ref())
                .map(|(r, t)| pose_error(r, t)),
            timings: out.timings,
        }
    }

    /// The candidate a threshold of `sigma_pc` would accept.
    pub fn rescore(&self, sigma_pc: f64, mode: SelectionMode) -> Option<FrameId> {
        let mut passing = self.candidates.iter().filter(|c| c.overlap.is_some_and(|o| o >= sigma_pc));
        let chosen = match mode {
            SelectionMode::FirstPass => passing.next(),
            SelectionMode::BestOverlap => passing.fold(None, |best: Option<&CandidateRecord>, c| match best {
                Some(b) if b.overlap >= c.overlap => Some(b),
                _ => Some(c),
            }),
        };
        chosen.map(|c| c.frame_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrRow {
    pub sigma_pc: f64,
    pub detections: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// `None` when nothing was detected.
    pub precision: Option<f64>,
    /// `None` when there are no ground-truth loops.
    pub recall: Option<f64>,
}

/// Thresholds 0.1, 0.2, …, 0.9.
pub fn default_sigma_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// Re-scores the stored candidates at each threshold. A detection is a true
/// positive iff the detected frame is a ground-truth match of its query; a
/// query with ground-truth matches and no true positive is a false negative.
pub fn pr_sweep(
    records: &[EvalRecord],
    gt: &[GroundTruthLoop],
    grid: &[f64],
    mode: SelectionMode,
) -> Result<Vec<PrRow>, EvalError> {
    if gt.is_empty() {
        return Err(EvalError::NoGroundTruth);
    }
    let truth: HashMap<FrameId, &[FrameId]> = gt.iter().map(|g| (g.query, g.matches.as_slice())).collect();
    let positives = gt.iter().filter(|g| !g.matches.is_empty()).count();
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    Ok(grid
        .into_iter()
        .map(|sigma| {
            let (mut tp, mut fp) = (0, 0);
            for r in records {
                let Some(d) = r.rescore(sigma, mode) else { continue };
                if truth.get(&r.query).is_some_and(|m| m.binary_search(&d).is_ok()) {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
            PrRow {
                sigma_pc: sigma,
                detections: tp + fp,
                tp,
                fp,
                fn_: positives - tp,
                precision: (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64),
                recall: (positives > 0).then(|| tp as f64 / positives as f64),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeInfo {
    pub id: FrameId,
    pub scan_range: (usize, usize),
    pub pose: RigidTransform,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LatencyStats {
    pub sum_ms: f64,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        let pct = |q: f64| v[((q * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)];
        let sum: f64 = v.iter().sum();
        Self {
            sum_ms: sum,
            mean_ms: sum / v.len() as f64,
            p50_ms: pct(0.5),
            p90_ms: pct(0.9),
            p99_ms: pct(0.99),
            max_ms: v[v.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Latency {
    pub extract: LatencyStats,
    pub query: LatencyStats,
    pub verify: LatencyStats,
    pub total: LatencyStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scans: usize,
    pub keyframes: usize,
    pub sigma_pc: f64,
    pub gt_radius: f64,
    pub seed: u64,
    pub detections: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub ground_truth_loops: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub mean_rotation_error_deg: Option<f64>,
    pub mean_translation_error_m: Option<f64>,
    pub latency: Latency,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: Config,
    pub records: Vec<EvalRecord>,
    pub keyframes: Vec<KeyframeInfo>,
    pub ground_truth: Vec<GroundTruthLoop>,
    pub pr: Vec<PrRow>,
    pub summary: Summary,
}

/// Feeds keyframes through a fresh detector in order and evaluates the result.
#[derive(Debug)]
pub struct Replay {
    config: Config,
    detector: LoopDetector,
    records: Vec<EvalRecord>,
    keyframes: Vec<KeyframeInfo>,
    poses: HashMap<FrameId, RigidTransform>,
    scans: usize,
    started: Instant,
}

impl Replay {
    pub fn new(config: Config) -> Result<Self, EvalError> {
        Ok(Self {
            detector: LoopDetector::new(config.pipeline)?,
            config,
            records: Vec::new(),
            keyframes: Vec::new(),
            poses: HashMap::new(),
            scans: 0,
            started: Instant::now(),
        })
    }

    pub fn detector(&self) -> &LoopDetector {
        &self.detector
    }

    pub fn push_keyframe(&mut self, kf: &Keyframe) -> Result<&EvalRecord, EvalError> {
        self.poses.insert(kf.id, kf.anchor_pose);
        self.scans += kf.scan_range.1 - kf.scan_range.0 + 1;
        let out = self.detector.process(kf.id, &kf.cloud)?;
        self.keyframes.push(KeyframeInfo {
            id: kf.id,
            scan_range: kf.scan_range,
            pose: kf.anchor_pose,
        });
        self.records.push(EvalRecord::from_outcome(&out, &self.poses));
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn finish(self) -> Result<RunOutput, EvalError> {
        let cfg = &self.config;
        let positions: Vec<(FrameId, Point3)> = self
            .keyframes
            .iter()
            .map(|k| (k.id, Point3::from(k.pose.translation)))
            .collect();
        let ground_truth = ground_truth_loops(&positions, cfg.gt_radius, cfg.pipeline.skip_recent);
        let mode = cfg.pipeline.verify.mode;
        let pr = if ground_truth.is_empty() {
            Vec::new()
        } else {
            pr_sweep(&self.records, &ground_truth, &default_sigma_grid(), mode)?
        };
        let at_threshold = if ground_truth.is_empty() {
            None
        } else {
            pr_sweep(&self.records, &ground_truth, &[cfg.pipeline.verify.sigma_pc], mode)?
                .first()
                .copied()
        };
        let stage = |f: fn(&StageTimings) -> f64| {
            LatencyStats::from_samples(&self.records.iter().map(|r| f(&r.timings)).collect::<Vec<_>>())
        };
        let errors: Vec<(f64, f64)> = self.records.iter().filter_map(|r| r.error).collect();
        let mean = |f: fn(&(f64, f64)) -> f64| {
            (!errors.is_empty()).then(|| errors.iter().map(f).sum::<f64>() / errors.len() as f64)
        };
        let summary = Summary {
            scans: self.scans,
            keyframes: self.keyframes.len(),
            sigma_pc: cfg.pipeline.verify.sigma_pc,
            gt_radius: cfg.gt_radius,
            seed: cfg.pipeline.verify.seed,
            detections: self.records.iter().filter(|r| r.detected.is_some()).count(),
            true_positives: at_threshold.map_or(0, |r| r.tp),
            false_positives: at_threshold.map_or(0, |r| r.fp),
            ground_truth_loops: ground_truth.iter().filter(|g| !g.matches.is_empty()).count(),
            precision: at_threshold.and_then(|r| r.precision),
            recall: at_threshold.and_then(|r| r.recall),
            mean_rotation_error_deg: mean(|e| e.0),
            mean_translation_error_m: mean(|e| e.1),
            latency: Latency {
                extract: stage(|t| t.extract_ms),
                query: stage(|t| t.query_ms),
                verify: stage(|t| t.verify_ms),
                total: stage(StageTimings::total_ms),
            },
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        Ok(RunOutput {
            config: self.config,
            records: self.records,
            keyframes: self.keyframes,
            ground_truth,
            pr,
            summary,
        })
    }
}

/// Replays a directory of scans (sorted by file name) with one pose per scan.
pub fn run_sequence(config: &Config, scans_dir: &Path, poses_path: &Path) -> Result<RunOutput, EvalError> {
    let files = list_scan_files(scans_dir)?;
    if files.is_empty() {
        return Err(EvalError::NoScans(scans_dir.to_path_buf()));
    }
    let poses = read_poses(poses_path)?;
    if poses.len() < files.len() {
        return Err(EvalError::PoseCountMismatch {
            scans: files.len(),
            poses: poses.len(),
        });
    }
    let mut replay = Replay::new(config.clone())?;
    let mut acc = KeyframeAccumulator::new(config.n_accumulate);
    for (index, file) in files.iter().enumerate() {
        let pose = match &config.sensor_to_body {
            Some(extrinsic) => poses[index].compose(extrinsic),
            None => poses[index],
        };
        let scan = Scan {
            index,
            points: read_scan_file(file)?,
            pose,
        };
        if let Some(kf) = acc.push(scan)? {
            replay.push_keyframe(&kf)?;
        }
    }
    if let Some(kf) = acc.flush()? {
        replay.push_keyframe(&kf)?;
    }
    replay.finish()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, EvalError> {
    csv::Writer::from_path(path).map_err(|source| EvalError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), EvalError> {
    let mut w = csv_writer(path)?;
    let wrap = |source| EvalError::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

const RECORD_HEADER: [&str; 10] = [
    "query",
    "detected",
    "overlap",
    "votes",
    "inliers",
    "rot_err_deg",
    "trans_err_m",
    "refined_rot_err_deg",
    "refined_trans_err_m",
    "candidates",
];

fn format_candidates(cands: &[CandidateRecord]) -> String {
    cands
        .iter()
        .map(|c| format!("{}:{}:{}", c.frame_id, c.votes, opt(c.overlap)))
        .collect::<Vec<_>>()
        .join(";")
}

/// Deterministic per-keyframe records (no timings).
pub fn write_records(path: &Path, records: &[EvalRecord]) -> Result<(), EvalError> {
    write_rows(
        path,
        &RECORD_HEADER,
        records.iter().map(|r| {
            vec![
                r.query.to_string(),
                opt(r.detected),
                opt(r.overlap),
                opt(r.votes),
                opt(r.inliers),
                opt(r.error.map(|e| e.0)),
                opt(r.error.map(|e| e.1)),
                opt(r.refined_error.map(|e| e.0)),
                opt(r.refined_error.map(|e| e.1)),
                format_candidates(&r.candidates),
            ]
        }),
    )
}

pub fn write_timings(path: &Path, records: &[EvalRecord]) -> Result<(), EvalError> {
    write_rows(
        path,
        &["query", "extract_ms", "query_ms", "verify_ms", "total_ms"],
        records.iter().map(|r| {
            let t = r.timings;
            vec![
                r.query.to_string(),
                format!("{:.3}", t.extract_ms),
                format!("{:.3}", t.query_ms),
                format!("{:.3}", t.verify_ms),
                format!("{:.3}", t.total_ms()),
            ]
        }),
    )
}

pub fn write_ground_truth(path: &Path, gt: &[GroundTruthLoop]) -> Result<(), EvalError> {
    write_rows(
        path,
        &["query", "matches"],
        gt.iter().map(|g| {
            vec![
                g.query.to_string(),
                g.matches.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(";"),
            ]
        }),
    )
}

pub fn write_pr(path: &Path, rows: &[PrRow]) -> Result<(), EvalError> {
    write_rows(
        path,
        &["sigma_pc", "detections", "tp", "fp", "fn", "precision", "recall"],
        rows.iter().map(|r| {
            vec![
                r.sigma_pc.to_string(),
                r.detections.to_string(),
                r.tp.to_string(),
                r.fp.to_string(),
                r.fn_.to_string(),
                opt(r.precision),
                opt(r.recall),
            ]
        }),
    )
}

fn write_keyframes(path: &Path, keyframes: &[KeyframeInfo]) -> Result<(), EvalError> {
    write_rows(
        path,
        &["id", "first_scan", "last_scan", "x", "y", "z"],
        keyframes.iter().map(|k| {
            let t = k.pose.translation;
            vec![
                k.id.to_string(),
                k.scan_range.0.to_string(),
                k.scan_range.1.to_string(),
                t.x.to_string(),
                t.y.to_string(),
                t.z.to_string(),
            ]
        }),
    )
}

/// Writes records, timings, ground truth, keyframes, PR table, summary and
/// the effective configuration into `dir`.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<(), EvalError> {
    fs::create_dir_all(dir).map_err(|source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_records(&dir.join("records.csv"), &out.records)?;
    write_timings(&dir.join("timings.csv"), &out.records)?;
    write_ground_truth(&dir.join("gt.csv"), &out.ground_truth)?;
    write_keyframes(&dir.join("keyframes.csv"), &out.keyframes)?;
    write_pr(&dir.join("pr.csv"), &out.pr)?;
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|source| EvalError::Io { path, source })
    };
    write(
        "summary.json",
        serde_json::to_string_pretty(&out.summary).expect("summary serializes") + "\n",
    )?;
    write("config.txt", out.config.to_text())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>, EvalError> {
    csv::Reader::from_path(path).map_err(|source| EvalError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn field<T: std::str::FromStr>(path: &Path, s: &str, name: &str) -> Result<Option<T>, EvalError> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| EvalError::BadRecord {
        path: path.to_path_buf(),
        msg: format!("bad {name} `{s}`"),
    })
}

/// Reads a records file written by [`write_records`]; timings come back zero.
pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>, EvalError> {
    let mut out = Vec::new();
    let bad = |msg: String| EvalError::BadRecord {
        path: path.to_path_buf(),
        msg,
    };
    for row in csv_reader(path)?.records() {
        let row = row.map_err(|source| EvalError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        if row.len() != RECORD_HEADER.len() {
            return Err(bad(format!("expected {} fields, got {}", RECORD_HEADER.len(), row.len())));
        }
        let pair = |a: usize, b: usize| -> Result<Option<(f64, f64)>, EvalError> {
            Ok(field::<f64>(path, &row[a], RECORD_HEADER[a])?.zip(field::<f64>(path, &row[b], RECORD_HEADER[b])?))
        };
        let mut candidates = Vec::new();
        for c in row[9].split(';').filter(|c| !c.is_empty()) {
            let parts: Vec<&str> = c.split(':').collect();
            if parts.len() != 3 {
                return Err(bad(format!("bad candidate `{c}`")));
            }
            candidates.push(CandidateRecord {
                frame_id: field(path, parts[0], "candidate id")?.ok_or_else(|| bad(format!("bad candidate `{c}`")))?,
                votes: field(path, parts[1], "candidate votes")?.ok_or_else(|| bad(format!("bad candidate `{c}`")))?,
                overlap: field(path, parts[2], "candidate overlap")?,
            });
        }
        out.push(EvalRecord {
            query: field(path, &row[0], "query")?.ok_or_else(|| bad("missing query".into()))?,
            detected: field(path, &row[1], "detected")?,
            overlap: field(path, &row[2], "overlap")?,
            votes: field(path, &row[3], "votes")?,
            inliers: field(path, &row[4], "inliers")?,
            candidates,
            error: pair(5, 6)?,
            refined_error: pair(7, 8)?,
            timings: StageTimings::default(),
        });
    }
    Ok(out)
}

/// Reads a ground-truth file written by [`write_ground_truth`].
pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthLoop>, EvalError> {
    let mut out = Vec::new();
    for row in csv_reader(path)?.records() {
        let row = row.map_err(|source| EvalError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let bad = || EvalError::BadRecord {
            path: path.to_path_buf(),
            msg: format!("bad ground-truth row `{}`", row.iter().collect::<Vec<_>>().join(",")),
        };
        if row.len() != 2 {
            return Err(bad());
        }
        let query = row[0].parse().map_err(|_| bad())?;
        let mut matches = row[1]
            .split(';')
            .filter(|m| !m.is_empty())
            .map(|m| m.parse().map_err(|_| bad()))
            .collect::<Result<Vec<FrameId>, _>>()?;
        matches.sort_unstable();
        out.push(GroundTruthLoop { query, matches });
    }
    Ok(out)
}
