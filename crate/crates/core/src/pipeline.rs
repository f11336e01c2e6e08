//! Per-keyframe feature extraction and the sequential detect-then-insert loop.

use std::time::Instant;

use crate::database::{CandidateSet, DbError, DescriptorDatabase};
use crate::descriptor::{build_descriptors, DescriptorParams, TriangleDescriptor};
use crate::geometry::Point3;
use crate::ingest::voxel_downsample;
use crate::keypoints::{extract_frame_keypoints, KeyPoint, KeypointParams};
use crate::plane::{extract_planes, Plane, PlaneParams};
use crate::verify::{finish_loop, score_candidates, select_candidate, CandidateScore, LoopResult, PlaneStore, VerifyParams};
use crate::FrameId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineParams {
    /// Leaf of the pre-extraction downsampling grid; `0` disables it.
    pub downsample_leaf: f64,
    pub plane: PlaneParams,
    pub keypoint: KeypointParams,
    pub descriptor: DescriptorParams,
    pub delta_l: f64,
    pub delta_n: f64,
    /// Most recently inserted frames excluded from voting.
    pub skip_recent: usize,
    pub top_k: usize,
    pub verify: VerifyParams,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            downsample_leaf: 0.25,
            plane: PlaneParams::default(),
            keypoint: KeypointParams::default(),
            descriptor: DescriptorParams::default(),
            delta_l: 0.2,
            delta_n: 0.1,
            skip_recent: 50,
            top_k: crate::database::TOP_CANDIDATES,
            verify: VerifyParams::default(),
        }
    }
}

/// Everything extracted from one keyframe.
#[derive(Debug, Clone)]
pub struct FrameFeatures {
    pub frame_id: FrameId,
    pub planes: Vec<Plane>,
    pub keypoints: Vec<KeyPoint>,
    pub descriptors: Vec<TriangleDescriptor>,
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Downsample, planes, key points, descriptors. Clouds too small or too flat
/// to yield features produce empty lists rather than errors.
pub fn extract_features(frame_id: FrameId, cloud: &[Point3], params: &PipelineParams) -> FrameFeatures {
    let downsampled;
    let cloud = if params.downsample_leaf > 0.0 {
        downsampled = voxel_downsample(cloud, params.downsample_leaf).unwrap_or_default();
        &downsampled[..]
    } else {
        cloud
    };
    let Ok((map, planes)) = extract_planes(cloud, &params.plane) else {
        return FrameFeatures {
            frame_id,
            planes: Vec::new(),
            keypoints: Vec::new(),
            descriptors: Vec::new(),
        };
    };
    let keypoints = extract_frame_keypoints(&map, &planes, &params.keypoint, frame_id);
    let descriptors = build_descriptors(&keypoints, frame_id, &params.descriptor).unwrap_or_default();
    FrameFeatures {
        frame_id,
        planes,
        keypoints,
        descriptors,
    }
}

/// Wall-clock milliseconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub extract_ms: f64,
    pub query_ms: f64,
    pub verify_ms: f64,
}

impl StageTimings {
    pub fn total_ms(&self) -> f64 {
        self.extract_ms + self.query_ms + self.verify_ms
    }
}

#[derive(Debug, Clone)]
pub struct FrameOutcome {
    pub frame_id: FrameId,
    pub plane_count: usize,
    pub keypoint_count: usize,
    pub descriptor_count: usize,
    /// Every candidate's verification, in vote order.
    pub scores: Vec<CandidateScore>,
    pub detection: Option<LoopResult>,
    pub timings: StageTimings,
}

/// Owns the descriptor database and plane store; frames must be fed in order.
#[derive(Debug)]
pub struct LoopDetector {
    params: PipelineParams,
    db: DescriptorDatabase,
    planes: PlaneStore,
}

impl LoopDetector {
    pub fn new(params: PipelineParams) -> Result<Self, DbError> {
        Ok(Self {
            db: DescriptorDatabase::new(params.delta_l, params.delta_n)?,
            params,
            planes: PlaneStore::new(),
        })
    }

    pub fn params(&self) -> &PipelineParams {
        &self.params
    }

    pub fn database(&self) -> &DescriptorDatabase {
        &self.db
    }

    pub fn plane_store(&self) -> &PlaneStore {
        &self.planes
    }

    /// Candidates for already extracted features, without touching the database.
    pub fn query(&self, features: &FrameFeatures) -> CandidateSet {
        self.db
            .query_top(&features.descriptors, self.params.skip_recent, self.params.top_k)
    }

    /// Query, verify, then insert the frame.
    pub fn process_features(&mut self, features: FrameFeatures, extract_ms: f64) -> Result<FrameOutcome, DbError> {
        let frame_id = features.frame_id;
        let t = Instant::now();
        let candidates = self.query(&features);
        let query_ms = elapsed_ms(t);

        let t = Instant::now();
        let vp = &self.params.verify;
        let scores = score_candidates(frame_id, &features.planes, &candidates, &self.planes, vp);
        let detection = select_candidate(&scores, vp.sigma_pc, vp.mode)
            .and_then(|s| finish_loop(frame_id, &features.planes, s, &self.planes, vp));
        let verify_ms = elapsed_ms(t);

        self.db.insert_frame(frame_id, &features.descriptors)?;
        let outcome = FrameOutcome {
            frame_id,
            plane_count: features.planes.len(),
            keypoint_count: features.keypoints.len(),
            descriptor_count: features.descriptors.len(),
            scores,
            detection,
            timings: StageTimings {
                extract_ms,
                query_ms,
                verify_ms,
            },
        };
        // Only plane geometry is needed for later verification.
        let stored = features
            .planes
            .into_iter()
            .map(|p| Plane::from_center_normal(p.id, p.center, p.normal))
            .collect();
        self.planes.insert(frame_id, stored);
        Ok(outcome)
    }

    pub fn process(&mut self, frame_id: FrameId, cloud: &[Point3]) -> Result<FrameOutcome, DbError> {
        let t = Instant::now();
        let features = extract_features(frame_id, cloud, &self.params);
        let extract_ms = elapsed_ms(t);
        self.process_features(features, extract_ms)
    }
}
