//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are rejected so a
//! typo never silently falls back to a default.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::geometry::RigidTransform;
use crate::pipeline::PipelineParams;
use crate::plane::Connectivity;
use crate::verify::SelectionMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value `{value}` for `{key}`")]
    BadValue { line: usize, key: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub pipeline: PipelineParams,
    pub n_accumulate: usize,
    /// Ground-truth loop radius (m).
    pub gt_radius: f64,
    /// Sensor-to-pose-frame extrinsic applied to every pose (e.g. KITTI `Tr`).
    pub sensor_to_body: Option<RigidTransform>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            pipeline: PipelineParams::default(),
            n_accumulate: 10,
            gt_radius: 20.0,
            sensor_to_body: None,
        }
    }
}

fn parse_num<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        value: value.to_string(),
    })
}

impl Config {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            cfg.set(line, key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        let p = &mut self.pipeline;
        let bad = || ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
        };
        macro_rules! num {
            () => {
                parse_num(line, key, value)?
            };
        }
        match key {
            "voxel_size" => p.plane.voxel_size = num!(),
            "sigma1" => p.plane.sigma1 = num!(),
            "sigma2" => p.plane.sigma2 = num!(),
            "normal_merge_tol" => p.plane.normal_merge_tol = num!(),
            "dist_merge_tol" => p.plane.dist_merge_tol = num!(),
            "connectivity" => {
                p.plane.connectivity = match value {
                    "6" => Connectivity::Six,
                    "26" => Connectivity::TwentySix,
                    _ => return Err(bad()),
                }
            }
            "downsample_leaf" => p.downsample_leaf = num!(),
            "pixel_size" => p.keypoint.pixel_size = num!(),
            "min_dist" => p.keypoint.min_dist = num!(),
            "max_keypoints" => p.keypoint.max_keypoints = num!(),
            "k_neighbors" => p.descriptor.k_neighbors = num!(),
            "min_side" => p.descriptor.min_side = num!(),
            "degenerate_eps" => p.descriptor.degenerate_eps = num!(),
            "delta_l" => p.delta_l = num!(),
            "delta_n" => p.delta_n = num!(),
            "skip_recent" => p.skip_recent = num!(),
            "top_k" => p.top_k = num!(),
            "iterations" => p.verify.ransac_iterations = num!(),
            "inlier_tol" => p.verify.inlier_tol = num!(),
            "min_votes" => p.verify.min_votes = num!(),
            "sigma_n" => p.verify.sigma_n = num!(),
            "sigma_d" => p.verify.sigma_d = num!(),
            "sigma_pc" => p.verify.sigma_pc = num!(),
            "seed" => p.verify.seed = num!(),
            "selection" => {
                p.verify.mode = match value {
                    "first" => SelectionMode::FirstPass,
                    "best" => SelectionMode::BestOverlap,
                    _ => return Err(bad()),
                }
            }
            "refine" => p.verify.refine = num!(),
            "icp_iterations" => p.verify.icp.max_iterations = num!(),
            "n_accumulate" => self.n_accumulate = num!(),
            "gt_radius" => self.gt_radius = num!(),
            "sensor_to_body" => {
                let vals: Vec<f64> = value
                    .split_whitespace()
                    .map(|v| v.parse().map_err(|_| bad()))
                    .collect::<Result<_, _>>()?;
                let arr: [f64; 12] = vals.try_into().map_err(|_| bad())?;
                self.sensor_to_body = Some(RigidTransform::from_row_major_3x4(&arr).orthonormalized());
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.pipeline;
        let positive = [
            ("voxel_size", p.plane.voxel_size),
            ("pixel_size", p.keypoint.pixel_size),
            ("delta_l", p.delta_l),
            ("delta_n", p.delta_n),
            ("sigma_n", p.verify.sigma_n),
            ("sigma_d", p.verify.sigma_d),
            ("inlier_tol", p.verify.inlier_tol),
            ("gt_radius", self.gt_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(p.downsample_leaf >= 0.0) {
            return Err(ConfigError::Invalid("downsample_leaf must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&p.verify.sigma_pc) {
            return Err(ConfigError::Invalid("sigma_pc must lie in [0, 1]".into()));
        }
        if self.n_accumulate == 0 || p.descriptor.k_neighbors < 2 || p.top_k == 0 {
            return Err(ConfigError::Invalid(
                "n_accumulate and top_k must be positive, k_neighbors at least 2".into(),
            ));
        }
        Ok(())
    }

    /// Every key with its effective value, in a form [`Config::parse`] accepts.
    pub fn to_text(&self) -> String {
        let p = &self.pipeline;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("voxel_size", p.plane.voxel_size.to_string());
        kv("sigma1", p.plane.sigma1.to_string());
        kv("sigma2", p.plane.sigma2.to_string());
        kv("normal_merge_tol", p.plane.normal_merge_tol.to_string());
        kv("dist_merge_tol", p.plane.dist_merge_tol.to_string());
        kv(
            "connectivity",
            match p.plane.connectivity {
                Connectivity::Six => "6",
                Connectivity::TwentySix => "26",
            }
            .into(),
        );
        kv("downsample_leaf", p.downsample_leaf.to_string());
        kv("pixel_size", p.keypoint.pixel_size.to_string());
        kv("min_dist", p.keypoint.min_dist.to_string());
        kv("max_keypoints", p.keypoint.max_keypoints.to_string());
        kv("k_neighbors", p.descriptor.k_neighbors.to_string());
        kv("min_side", p.descriptor.min_side.to_string());
        kv("degenerate_eps", p.descriptor.degenerate_eps.to_string());
        kv("delta_l", p.delta_l.to_string());
        kv("delta_n", p.delta_n.to_string());
        kv("skip_recent", p.skip_recent.to_string());
        kv("top_k", p.top_k.to_string());
        kv("iterations", p.verify.ransac_iterations.to_string());
        kv("inlier_tol", p.verify.inlier_tol.to_string());
        kv("min_votes", p.verify.min_votes.to_string());
        kv("sigma_n", p.verify.sigma_n.to_string());
        kv("sigma_d", p.verify.sigma_d.to_string());
        kv("sigma_pc", p.verify.sigma_pc.to_string());
        kv("seed", p.verify.seed.to_string());
        kv(
            "selection",
            match p.verify.mode {
                SelectionMode::FirstPass => "first",
                SelectionMode::BestOverlap => "best",
            }
            .into(),
        );
        kv("refine", p.verify.refine.to_string());
        kv("icp_iterations", p.verify.icp.max_iterations.to_string());
        kv("n_accumulate", self.n_accumulate.to_string());
        kv("gt_radius", self.gt_radius.to_string());
        if let Some(t) = &self.sensor_to_body {
            let vals: Vec<String> = t.to_row_major_3x4().iter().map(|v| format!("{v:e}")).collect();
            kv("sensor_to_body", vals.join(" "));
        }
        s
    }
}
