//! Geometric verification of loop candidates: RANSAC over matched triangles,
//! plane-overlap scoring, and plane-to-plane refinement.

use std::collections::HashMap;

use nalgebra::{Matrix6, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::database::{Candidate, CandidateSet, MatchedPair};
use crate::geometry::{solve_rigid_svd, Correspondences3, Point3, RigidTransform, Vector3};
use crate::plane::Plane;
use crate::spatial::KdTree;
use crate::FrameId;

/// Planes kept per stored keyframe for verification.
pub type PlaneStore = HashMap<FrameId, Vec<Plane>>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("no transform with at least {required} inlier pairs (best {best})")]
    NoValidTransform { best: usize, required: usize },
    #[error("plane list is empty")]
    EmptyPlaneList,
    #[error("only {found} coinciding plane pairs, need {required}")]
    InsufficientOverlap { found: usize, required: usize },
}

/// Which passing candidate is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionMode {
    /// First candidate in vote order whose overlap reaches the threshold.
    #[default]
    FirstPass,
    /// Highest overlap among all candidates reaching the threshold.
    BestOverlap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyParams {
    pub ransac_iterations: usize,
    /// Per-vertex distance for a pair to count as inlier (m).
    pub inlier_tol: f64,
    pub min_inliers: usize,
    pub sigma_n: f64,
    pub sigma_d: f64,
    pub sigma_pc: f64,
    pub min_votes: usize,
    pub mode: SelectionMode,
    pub refine: bool,
    pub icp: IcpParams,
    pub seed: u64,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            ransac_iterations: 100,
            inlier_tol: 0.5,
            min_inliers: 4,
            sigma_n: 0.2,
            sigma_d: 0.3,
            sigma_pc: 0.5,
            min_votes: 5,
            mode: SelectionMode::FirstPass,
            refine: true,
            icp: IcpParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RansacOutcome {
    pub transform: RigidTransform,
    /// Indices into the input pairs.
    pub inliers: Vec<usize>,
}

const REFIT_ROUNDS: usize = 10;

fn vertex_correspondences<'a>(pairs: impl IntoIterator<Item = &'a MatchedPair>) -> Vec<(Point3, Point3)> {
    pairs
        .into_iter()
        .flat_map(|p| (0..3).map(move |k| (p.query.vertices[k], p.stored.vertices[k])))
        .collect()
}

fn is_inlier(t: &RigidTransform, pair: &MatchedPair, tol2: f64) -> bool {
    (0..3).all(|k| (t.apply(&pair.query.vertices[k]) - pair.stored.vertices[k]).norm_squared() <= tol2)
}

/// Estimates the transform taking query vertices onto stored vertices.
/// Each iteration solves on one randomly drawn pair; the best consensus set is
/// re-solved jointly.
pub fn ransac_transform(
    pairs: &[MatchedPair],
    iterations: usize,
    inlier_tol: f64,
    min_inliers: usize,
    rng: &mut impl Rng,
) -> Result<RansacOutcome, VerifyError> {
    let tol2 = inlier_tol * inlier_tol;
    let mut best: Option<(RigidTransform, Vec<usize>)> = None;
    if !pairs.is_empty() {
        for _ in 0..iterations.max(1) {
            let pair = &pairs[rng.random_range(0..pairs.len())];
            let Ok(c) = Correspondences3::from_pairs(vertex_correspondences([pair])) else {
                continue;
            };
            let Ok(t) = solve_rigid_svd(&c) else {
                continue;
            };
            let inliers: Vec<usize> = (0..pairs.len()).filter(|&i| is_inlier(&t, &pairs[i], tol2)).collect();
            if best.as_ref().is_none_or(|b| inliers.len() > b.1.len()) {
                best = Some((t, inliers));
            }
        }
    }
    let found = best.as_ref().map_or(0, |b| b.1.len());
    match best {
        Some((t, inliers)) if inliers.len() >= min_inliers => {
            let (transform, inliers) = refit(pairs, t, inliers, tol2, min_inliers);
            Ok(RansacOutcome { transform, inliers })
        }
        _ => Err(VerifyError::NoValidTransform {
            best: found,
            required: min_inliers,
        }),
    }
}

fn solve_on(pairs: &[MatchedPair], subset: &[usize]) -> Option<RigidTransform> {
    let c = Correspondences3::from_pairs(vertex_correspondences(subset.iter().map(|&i| &pairs[i]))).ok()?;
    solve_rigid_svd(&c).ok()
}

/// Re-solves on the consensus set, then alternates re-counting inliers under
/// the new transform and re-solving until the set stops changing.
fn refit(
    pairs: &[MatchedPair],
    seed: RigidTransform,
    seed_inliers: Vec<usize>,
    tol2: f64,
    min_inliers: usize,
) -> (RigidTransform, Vec<usize>) {
    let mut inliers = seed_inliers;
    let mut t = solve_on(pairs, &inliers).unwrap_or(seed);
    for _ in 0..REFIT_ROUNDS {
        let next: Vec<usize> = (0..pairs.len()).filter(|&i| is_inlier(&t, &pairs[i], tol2)).collect();
        if next == inliers || next.len() < min_inliers {
            break;
        }
        let Some(nt) = solve_on(pairs, &next) else { break };
        t = nt;
        inliers = next;
    }
    (t, inliers)
}

/// Normal difference robust to the sign of either normal.
fn normal_residual(rotated: &Vector3, target: &Vector3) -> Vector3 {
    if rotated.dot(target) >= 0.0 {
        rotated - target
    } else {
        rotated + target
    }
}

/// For each current plane, the nearest candidate plane (by center, after
/// `t`) if the pair passes the normal and point-to-plane tests.
pub fn associate_planes(
    current: &[Plane],
    candidate_tree: &KdTree,
    candidate: &[Plane],
    t: &RigidTransform,
    sigma_n: f64,
    sigma_d: f64,
) -> Vec<Option<usize>> {
    current
        .iter()
        .map(|b| {
            let g = t.apply(&b.center);
            let (j, _) = candidate_tree.nearest_one(&g)?;
            let c = &candidate[j];
            let n_res = normal_residual(&t.apply_vector(&b.normal), &c.normal).norm();
            let d_res = c.normal.dot(&(g - c.center)).abs();
            (n_res < sigma_n && d_res < sigma_d).then_some(j)
        })
        .collect()
}

/// Fraction of current planes that coincide with a candidate plane under `t`.
pub fn plane_overlap(
    current: &[Plane],
    candidate: &[Plane],
    t: &RigidTransform,
    sigma_n: f64,
    sigma_d: f64,
) -> Result<f64, VerifyError> {
    if current.is_empty() || candidate.is_empty() {
        return Err(VerifyError::EmptyPlaneList);
    }
    let centers: Vec<Point3> = candidate.iter().map(|p| p.center).collect();
    let tree = KdTree::new(&centers);
    let hits = associate_planes(current, &tree, candidate, t, sigma_n, sigma_d)
        .iter()
        .filter(|m| m.is_some())
        .count();
    Ok(hits as f64 / current.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Stop once the update norm falls below this.
    pub step_tol: f64,
    pub min_pairs: usize,
    pub w_normal: f64,
    pub w_distance: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            step_tol: 1e-6,
            min_pairs: 10,
            w_normal: 1.0,
            w_distance: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpOutcome {
    pub transform: RigidTransform,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

struct PlaneProblem<'a> {
    current: &'a [Plane],
    candidate: &'a [Plane],
    tree: KdTree,
    sigma_n: f64,
    sigma_d: f64,
    params: IcpParams,
}

impl PlaneProblem<'_> {
    /// Cost of a non-coinciding plane; a coinciding one costs strictly less.
    fn outlier_cost(&self) -> f64 {
        self.params.w_normal + self.params.w_distance
    }

    fn associate(&self, t: &RigidTransform) -> Vec<Option<usize>> {
        associate_planes(self.current, &self.tree, self.candidate, t, self.sigma_n, self.sigma_d)
    }

    fn pair_cost(&self, t: &RigidTransform, i: usize, j: usize) -> f64 {
        let (b, c) = (&self.current[i], &self.candidate[j]);
        let rn = normal_residual(&t.apply_vector(&b.normal), &c.normal) / self.sigma_n;
        let rd = c.normal.dot(&(t.apply(&b.center) - c.center)) / self.sigma_d;
        self.params.w_normal * rn.norm_squared() + self.params.w_distance * rd * rd
    }

    /// Truncated objective: coinciding pairs contribute their weighted
    /// residuals, all other current planes a constant.
    fn cost(&self, t: &RigidTransform) -> (f64, Vec<Option<usize>>) {
        let assoc = self.associate(t);
        let cost = assoc
            .iter()
            .enumerate()
            .map(|(i, m)| m.map_or(self.outlier_cost(), |j| self.pair_cost(t, i, j)))
            .sum();
        (cost, assoc)
    }

    /// Gauss-Newton system for the perturbation `(ω, v)`:
    /// `R ← exp(ω) R`, `t ← t + v`.
    fn normal_equations(&self, t: &RigidTransform, assoc: &[Option<usize>]) -> (Matrix6<f64>, Vector6<f64>) {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        let (wn, wd) = (self.params.w_normal, self.params.w_distance);
        for (i, m) in assoc.iter().enumerate() {
            let Some(j) = *m else { continue };
            let (b, c) = (&self.current[i], &self.candidate[j]);
            let ru = t.apply_vector(&b.normal);
            let rn = normal_residual(&ru, &c.normal) / self.sigma_n;
            // d(ω × ru)/dω = -[ru]×
            let skew = ru.cross_matrix() * (-1.0 / self.sigma_n);
            for k in 0..3 {
                let mut row = Vector6::zeros();
                row.fixed_rows_mut::<3>(0).copy_from(&skew.row(k).transpose());
                h += row * row.transpose() * wn;
                g += row * rn[k] * wn;
            }
            let a = t.rotation * b.center.coords;
            let rd = c.normal.dot(&(a + t.translation - c.center.coords)) / self.sigma_d;
            let mut row = Vector6::zeros();
            row.fixed_rows_mut::<3>(0).copy_from(&(a.cross(&c.normal) / self.sigma_d));
            row.fixed_rows_mut::<3>(3).copy_from(&(c.normal / self.sigma_d));
            h += row * row.transpose() * wd;
            g += row * rd * wd;
        }
        (h, g)
    }
}

fn apply_step(t: &RigidTransform, step: &Vector6<f64>) -> RigidTransform {
    let omega = Vector3::new(step[0], step[1], step[2]);
    let v = Vector3::new(step[3], step[4], step[5]);
    let rot = RigidTransform::from_rotation_vector(omega, Vector3::zeros());
    RigidTransform {
        rotation: rot.rotation * t.rotation,
        translation: t.translation + v,
    }
}

/// Refines `initial` by damped Gauss-Newton on the normal and point-to-plane
/// residuals of coinciding plane pairs, re-associating pairs every iteration.
/// Only steps that lower the objective are taken.
pub fn std_icp(
    current: &[Plane],
    candidate: &[Plane],
    initial: &RigidTransform,
    sigma_n: f64,
    sigma_d: f64,
    params: &IcpParams,
) -> Result<IcpOutcome, VerifyError> {
    if current.is_empty() || candidate.is_empty() {
        return Err(VerifyError::EmptyPlaneList);
    }
    let centers: Vec<Point3> = candidate.iter().map(|p| p.center).collect();
    let problem = PlaneProblem {
        current,
        candidate,
        tree: KdTree::new(&centers),
        sigma_n,
        sigma_d,
        params: *params,
    };
    let (mut cost, mut assoc) = problem.cost(initial);
    let found = assoc.iter().filter(|m| m.is_some()).count();
    if found < params.min_pairs {
        return Err(VerifyError::InsufficientOverlap {
            found,
            required: params.min_pairs,
        });
    }
    let initial_cost = cost;
    let mut history = vec![cost];
    let mut t = *initial;
    let mut damping = 1e-4;
    let mut iterations = 0;
    while iterations < params.max_iterations {
        iterations += 1;
        let (h, g) = problem.normal_equations(&t, &assoc);
        let mut accepted = false;
        let mut converged = false;
        for _ in 0..10 {
            let mut damped = h;
            for k in 0..6 {
                damped[(k, k)] += damping * h[(k, k)].max(1e-9);
            }
            let Some(step) = damped.cholesky().map(|c| -c.solve(&g)) else {
                damping *= 10.0;
                continue;
            };
            if step.norm() < params.step_tol {
                converged = true;
                break;
            }
            let trial = apply_step(&t, &step);
            let (trial_cost, trial_assoc) = problem.cost(&trial);
            if trial_cost < cost {
                t = trial;
                cost = trial_cost;
                assoc = trial_assoc;
                history.push(cost);
                damping = (damping * 0.1).max(1e-12);
                accepted = true;
                break;
            }
            damping *= 10.0;
        }
        if converged || !accepted {
            break;
        }
    }
    Ok(IcpOutcome {
        transform: t,
        initial_cost,
        final_cost: cost,
        iterations,
        cost_history: history,
    })
}

/// Verification outcome for one candidate frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub frame_id: FrameId,
    pub votes: usize,
    pub inliers: usize,
    pub transform: Option<RigidTransform>,
    /// Plane coincidence ratio; `None` when RANSAC failed or votes were too few.
    pub overlap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopResult {
    pub query_frame: FrameId,
    pub matched_frame: FrameId,
    /// Maps query-frame coordinates into the matched frame.
    pub transform: RigidTransform,
    pub overlap: f64,
    pub inliers: usize,
    pub votes: usize,
    pub refined: Option<RigidTransform>,
}

fn candidate_rng(seed: u64, query: FrameId, candidate: FrameId) -> ChaCha8Rng {
    let mut h = seed ^ 0x243f_6a88_85a3_08d3;
    for v in [query, candidate] {
        h = (h ^ v).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        h ^= h >> 31;
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// RANSAC + plane overlap for a single candidate. The random stream depends
/// only on the seed and the two frame ids.
pub fn score_candidate(
    query_frame: FrameId,
    query_planes: &[Plane],
    candidate: &Candidate,
    plane_store: &PlaneStore,
    params: &VerifyParams,
) -> CandidateScore {
    let mut score = CandidateScore {
        frame_id: candidate.frame_id,
        votes: candidate.votes,
        inliers: 0,
        transform: None,
        overlap: None,
    };
    if candidate.votes < params.min_votes {
        return score;
    }
    let mut rng = candidate_rng(params.seed, query_frame, candidate.frame_id);
    let Ok(ransac) = ransac_transform(
        &candidate.pairs,
        params.ransac_iterations,
        params.inlier_tol,
        params.min_inliers,
        &mut rng,
    ) else {
        return score;
    };
    score.inliers = ransac.inliers.len();
    score.transform = Some(ransac.transform);
    let stored = plane_store.get(&candidate.frame_id).map(Vec::as_slice).unwrap_or(&[]);
    score.overlap = plane_overlap(query_planes, stored, &ransac.transform, params.sigma_n, params.sigma_d).ok();
    score
}

/// Scores every candidate (vote order preserved).
pub fn score_candidates(
    query_frame: FrameId,
    query_planes: &[Plane],
    candidates: &CandidateSet,
    plane_store: &PlaneStore,
    params: &VerifyParams,
) -> Vec<CandidateScore> {
    candidates
        .iter()
        .map(|c| score_candidate(query_frame, query_planes, c, plane_store, params))
        .collect()
}

/// Applies the acceptance rule to already computed scores.
pub fn select_candidate(scores: &[CandidateScore], sigma_pc: f64, mode: SelectionMode) -> Option<&CandidateScore> {
    let mut passing = scores.iter().filter(|s| s.overlap.is_some_and(|o| o >= sigma_pc));
    match mode {
        SelectionMode::FirstPass => passing.next(),
        SelectionMode::BestOverlap => passing.fold(None, |best: Option<&CandidateScore>, s| match best {
            Some(b) if b.overlap >= s.overlap => Some(b),
            _ => Some(s),
        }),
    }
}

fn to_result(
    query_frame: FrameId,
    query_planes: &[Plane],
    s: &CandidateScore,
    plane_store: &PlaneStore,
    params: &VerifyParams,
) -> Option<LoopResult> {
    let transform = s.transform?;
    let refined = if params.refine {
        let stored = plane_store.get(&s.frame_id).map(Vec::as_slice).unwrap_or(&[]);
        std_icp(query_planes, stored, &transform, params.sigma_n, params.sigma_d, &params.icp)
            .ok()
            .map(|o| o.transform)
    } else {
        None
    };
    Some(LoopResult {
        query_frame,
        matched_frame: s.frame_id,
        transform,
        overlap: s.overlap?,
        inliers: s.inliers,
        votes: s.votes,
        refined,
    })
}

/// Accepts the first candidate (or the best, per `params.mode`) whose plane
/// overlap reaches `params.sigma_pc`.
pub fn verify_loop(
    query_frame: FrameId,
    query_planes: &[Plane],
    candidates: &CandidateSet,
    plane_store: &PlaneStore,
    params: &VerifyParams,
) -> Option<LoopResult> {
    match params.mode {
        SelectionMode::FirstPass => candidates.iter().find_map(|c| {
            let s = score_candidate(query_frame, query_planes, c, plane_store, params);
            s.overlap
                .is_some_and(|o| o >= params.sigma_pc)
                .then(|| to_result(query_frame, query_planes, &s, plane_store, params))
                .flatten()
        }),
        SelectionMode::BestOverlap => {
            let scores = score_candidates(query_frame, query_planes, candidates, plane_store, params);
            let s = select_candidate(&scores, params.sigma_pc, params.mode)?;
            to_result(query_frame, query_planes, s, plane_store, params)
        }
    }
}

/// Builds the result for an already selected score (used by the replay driver).
pub fn finish_loop(
    query_frame: FrameId,
    query_planes: &[Plane],
    score: &CandidateScore,
    plane_store: &PlaneStore,
    params: &VerifyParams,
) -> Option<LoopResult> {
    to_result(query_frame, query_planes, score, plane_store, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::{DescriptorParams, TriangleDescriptor};
    use rand::Rng;

    fn random_unit(rng: &mut impl Rng) -> Vector3 {
        Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize()
    }

    fn random_transform(rng: &mut impl Rng) -> RigidTransform {
        RigidTransform::from_axis_angle(
            random_unit(rng),
            rng.random_range(-3.1..3.1),
            Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-2.0..2.0)),
        )
    }

    fn random_triangle(rng: &mut impl Rng) -> TriangleDescriptor {
        loop {
            let corners = [0, 1, 2].map(|_| {
                (
                    Point3::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), rng.random_range(-3.0..3.0)),
                    random_unit(rng),
                )
            });
            if let Some(d) = TriangleDescriptor::from_corners(corners, 0, &DescriptorParams::default()) {
                return d;
            }
        }
    }

    fn consistent_pair(rng: &mut impl Rng, t: &RigidTransform) -> MatchedPair {
        let q = random_triangle(rng);
        MatchedPair {
            query: q,
            stored: q.transformed(t),
        }
    }

    fn scrambled_pair(rng: &mut impl Rng) -> MatchedPair {
        MatchedPair {
            query: random_triangle(rng),
            stored: random_triangle(rng),
        }
    }

    fn rot_err_deg(a: &RigidTransform, b: &RigidTransform) -> f64 {
        a.inverse().compose(b).rotation_angle().to_degrees()
    }

    #[test]
    fn consistent_pairs_recover_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = random_transform(&mut rng);
        let pairs: Vec<_> = (0..12).map(|_| consistent_pair(&mut rng, &truth)).collect();
        let out = ransac_transform(&pairs, 100, 0.5, 4, &mut rng).unwrap();
        assert_eq!(out.inliers.len(), 12);
        assert!((out.transform.rotation - truth.rotation).norm() < 1e-6);
        assert!((out.transform.translation - truth.translation).norm() < 1e-6);
    }

    #[test]
    fn planted_inliers_among_scrambled() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = random_transform(&mut rng);
        let mut pairs: Vec<_> = (0..10).map(|_| consistent_pair(&mut rng, &truth)).collect();
        pairs.extend((0..10).map(|_| scrambled_pair(&mut rng)));
        let out = ransac_transform(&pairs, 100, 0.5, 4, &mut rng).unwrap();
        assert_eq!(out.inliers, (0..10).collect::<Vec<_>>());
        assert!((out.transform.translation - truth.translation).norm() < 1e-3);
        assert!(rot_err_deg(&out.transform, &truth) < 0.01);
    }

    #[test]
    fn single_pair_is_not_enough() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pairs = vec![consistent_pair(&mut rng, &RigidTransform::identity())];
        assert_eq!(
            ransac_transform(&pairs, 100, 0.5, 4, &mut rng).unwrap_err(),
            VerifyError::NoValidTransform { best: 1, required: 4 }
        );
    }

    #[test]
    fn sixty_percent_inliers_succeed_reliably() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut successes = 0;
        for _ in 0..100 {
            let truth = random_transform(&mut rng);
            let mut pairs: Vec<_> = (0..12).map(|_| consistent_pair(&mut rng, &truth)).collect();
            pairs.extend((0..8).map(|_| scrambled_pair(&mut rng)));
            if let Ok(out) = ransac_transform(&pairs, 100, 0.5, 4, &mut rng) {
                if (out.transform.translation - truth.translation).norm() < 0.5 && rot_err_deg(&out.transform, &truth) < 1.0 {
                    successes += 1;
                }
            }
        }
        assert!(successes >= 99, "{successes}/100");
    }

    pub(crate) fn random_planes(rng: &mut impl Rng, n: usize, extent: f64) -> Vec<Plane> {
        (0..n)
            .map(|i| {
                let c = Point3::new(
                    rng.random_range(-extent..extent),
                    rng.random_range(-extent..extent),
                    rng.random_range(-extent..extent),
                );
                Plane::from_center_normal(i, c, random_unit(rng))
            })
            .collect()
    }

    fn transformed_planes(planes: &[Plane], t: &RigidTransform) -> Vec<Plane> {
        planes
            .iter()
            .map(|p| Plane::from_center_normal(p.id, t.apply(&p.center), t.apply_vector(&p.normal)))
            .collect()
    }

    #[test]
    fn overlap_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let planes = random_planes(&mut rng, 50, 20.0);
        let id = RigidTransform::identity();
        assert_eq!(plane_overlap(&planes, &planes, &id, 0.2, 0.3).unwrap(), 1.0);

        let far: Vec<_> = planes
            .iter()
            .map(|p| Plane::from_center_normal(p.id, p.center + Vector3::new(100.0, 0.0, 0.0), Vector3::x()))
            .collect();
        let near_x: Vec<_> = planes.iter().map(|p| Plane::from_center_normal(p.id, p.center, Vector3::x())).collect();
        assert_eq!(plane_overlap(&near_x, &far, &id, 0.2, 0.3).unwrap(), 0.0);
        assert_eq!(plane_overlap(&[], &planes, &id, 0.2, 0.3), Err(VerifyError::EmptyPlaneList));

        // flipped normals still coincide
        let flipped: Vec<_> = planes.iter().map(|p| Plane::from_center_normal(p.id, p.center, -p.normal)).collect();
        assert_eq!(plane_overlap(&planes, &flipped, &id, 0.2, 0.3).unwrap(), 1.0);
    }

    #[test]
    fn overlap_with_deleted_planes_matches_surviving_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // well separated centers on a grid so nearest-center association is unambiguous
        let mut current = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                let c = Point3::new(i as f64 * 10.0, j as f64 * 10.0, rng.random_range(-1.0..1.0));
                current.push(Plane::from_center_normal(current.len(), c, random_unit(&mut rng)));
            }
        }
        let t = random_transform(&mut rng);
        let mut candidate = transformed_planes(&current, &t);
        let mut keep: Vec<bool> = (0..100).map(|i| i % 10 >= 3).collect();
        keep.rotate_left(rng.random_range(0..100));
        candidate = candidate.into_iter().zip(&keep).filter(|(_, k)| **k).map(|(p, _)| p).collect();
        let surviving = candidate.len() as f64 / current.len() as f64;
        let nc = plane_overlap(&current, &candidate, &t, 0.2, 0.3).unwrap();
        assert!((nc - surviving).abs() <= 1.0 / current.len() as f64, "{nc} vs {surviving}");
    }

    #[test]
    fn icp_fixed_point_and_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let current = random_planes(&mut rng, 200, 15.0);
        let truth = random_transform(&mut rng);
        let candidate = transformed_planes(&current, &truth);
        let params = IcpParams::default();

        let same = std_icp(&current, &candidate, &truth, 0.2, 0.3, &params).unwrap();
        assert!((same.transform.rotation - truth.rotation).norm() < 1e-9);
        assert!((same.transform.translation - truth.translation).norm() < 1e-9);

        let nudge = RigidTransform::from_axis_angle(random_unit(&mut rng), 2f64.to_radians(), random_unit(&mut rng) * 0.2);
        let start = nudge.compose(&truth);
        let out = std_icp(&current, &candidate, &start, 0.2, 0.3, &params).unwrap();
        assert!((out.transform.translation - truth.translation).norm() < 1e-4);
        assert!(rot_err_deg(&out.transform, &truth) < 1e-3);
        assert!(out.final_cost <= out.initial_cost);
        assert!(out.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn icp_needs_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let current = random_planes(&mut rng, 5, 15.0);
        let out = std_icp(&current, &current, &RigidTransform::identity(), 0.2, 0.3, &IcpParams::default());
        assert_eq!(out.unwrap_err(), VerifyError::InsufficientOverlap { found: 5, required: 10 });
    }

    #[test]
    fn selection_rules() {
        let s = |id: FrameId, o: Option<f64>| CandidateScore {
            frame_id: id,
            votes: 10,
            inliers: 5,
            transform: Some(RigidTransform::identity()),
            overlap: o,
        };
        let scores = vec![s(1, Some(0.4)), s(2, None), s(3, Some(0.6)), s(4, Some(0.9))];
        assert_eq!(select_candidate(&scores, 0.5, SelectionMode::FirstPass).unwrap().frame_id, 3);
        assert_eq!(select_candidate(&scores, 0.5, SelectionMode::BestOverlap).unwrap().frame_id, 4);
        assert_eq!(select_candidate(&scores, 0.3, SelectionMode::FirstPass).unwrap().frame_id, 1);
        assert!(select_candidate(&scores, 0.95, SelectionMode::FirstPass).is_none());
    }
}
