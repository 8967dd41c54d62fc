//! Keypoint-matching inverse kinematics between skeletons.
//!
//! A target pose is found by minimizing the summed squared distance between
//! the source skeleton's keypoints and the keypoints of the target skeleton
//! after its bones have been rescaled to the source's lengths. The solver is
//! Levenberg-Marquardt on the stacked keypoint residual with the analytic
//! Jacobian from [`fk_positions_with_jacobian`].

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    fk_keypoints, fk_positions_with_jacobian, fk_transforms, rescale_bones, Pose, Skeleton, Vec3,
};
use crate::motion::Motion;
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetargetConfig {
    pub max_iterations: usize,
    /// Initial Levenberg-Marquardt damping.
    pub damping: f64,
    /// Objective value (sum of squared distances) counted as converged.
    pub residual_tol: f64,
    /// Relative step size below which the solve is considered stationary.
    pub step_tol: f64,
    pub init_from_previous: bool,
    /// Per-keypoint residual weights by name; missing names weigh 1.
    pub keypoint_weights: BTreeMap<String, f64>,
}

impl Default for RetargetConfig {
    fn default() -> Self {
        RetargetConfig {
            max_iterations: 50,
            damping: 1e-3,
            residual_tol: 1e-10,
            step_tol: 1e-8,
            init_from_previous: true,
            keypoint_weights: BTreeMap::new(),
        }
    }
}

impl RetargetConfig {
    pub fn check(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.damping >= 0.0) {
            return Err(Error::Config("damping must be nonnegative".into()));
        }
        if !(self.residual_tol > 0.0) || !(self.step_tol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.keypoint_weights.values().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("keypoint weights must be nonnegative".into()));
        }
        Ok(())
    }

    fn weight(&self, name: &str) -> f64 {
        self.keypoint_weights.get(name).copied().unwrap_or(1.0)
    }
}

/// Which pose parameters the solver may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreeParams {
    pub root_translation: bool,
    pub root_rotation: bool,
}

impl FreeParams {
    pub const ALL: FreeParams = FreeParams {
        root_translation: true,
        root_rotation: true,
    };
    pub const ROOT_LOCKED: FreeParams = FreeParams {
        root_translation: false,
        root_rotation: false,
    };

    fn columns(&self, n_params: usize) -> Vec<usize> {
        (0..n_params)
            .filter(|&c| match c {
                0..=2 => self.root_translation,
                3..=5 => self.root_rotation,
                _ => true,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Objective reached `residual_tol`.
    Converged,
    /// Steps became negligible or no damping produced a decrease.
    Stationary,
    MaxIterations,
}

/// One positional goal: joint `joint` of the solved skeleton should reach `target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkTarget {
    pub joint: usize,
    pub target: Vec3,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub pose: Pose,
    /// Weighted sum of squared keypoint distances at `pose`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// Objective after each accepted step, starting with the initial value.
    pub cost_history: Vec<f64>,
}

fn objective(skel: &Skeleton, pose: &Pose, targets: &[IkTarget]) -> Result<f64> {
    let transforms = fk_transforms(skel, pose)?;
    Ok(targets
        .iter()
        .map(|t| t.weight * (transforms[t.joint].translation.vector - t.target).norm_squared())
        .sum())
}

/// Stacked weighted residual `sqrt(w_k) * (J_k(pose) - target_k)` and its Jacobian.
pub fn residual_and_jacobian(
    skel: &Skeleton,
    pose: &Pose,
    targets: &[IkTarget],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let joints: Vec<usize> = targets.iter().map(|t| t.joint).collect();
    let (positions, mut jac) = fk_positions_with_jacobian(skel, pose, &joints)?;
    let mut r = DVector::zeros(3 * targets.len());
    for (k, (t, p)) in targets.iter().zip(&positions).enumerate() {
        let sw = t.weight.sqrt();
        r.fixed_rows_mut::<3>(3 * k).copy_from(&((p - t.target) * sw));
        if sw != 1.0 {
            jac.rows_mut(3 * k, 3).scale_mut(sw);
        }
    }
    Ok((r, jac))
}

/// Damped least-squares solve of `min_P sum_k w_k |J_k(skel, P) - target_k|^2`
/// starting from `init`.
pub fn solve_ik(
    skel: &Skeleton,
    targets: &[IkTarget],
    init: &Pose,
    cfg: &RetargetConfig,
    free: FreeParams,
) -> Result<IkSolution> {
    cfg.check()?;
    init.check(skel)?;
    if targets.is_empty() {
        return Err(Error::EmptyInput("no IK targets".into()));
    }
    if let Some(t) = targets.iter().find(|t| t.joint >= skel.joint_count()) {
        return Err(Error::SkeletonCorrespondence(format!("target joint {} out of range", t.joint)));
    }
    if targets.iter().any(|t| !t.target.iter().all(|c| c.is_finite()) || !t.weight.is_finite()) {
        return Err(Error::NonFinite("IK targets".into()));
    }

    let mut x = init.to_params();
    let cols = free.columns(x.len());
    let mut pose = init.clone();
    let mut cost = objective(skel, &pose, targets)?;
    let mut history = vec![cost];
    let mut lambda = cfg.damping;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    while iterations < cfg.max_iterations {
        if cost <= cfg.residual_tol {
            termination = Termination::Converged;
            break;
        }
        iterations += 1;
        let (r, jac_full) = residual_and_jacobian(skel, &pose, targets)?;
        let jac = jac_full.select_columns(&cols);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;

        let mut accepted = None;
        for _ in 0..16 {
            let mut lhs = jtj.clone();
            for d in 0..lhs.nrows() {
                lhs[(d, d)] += lambda;
            }
            let step = match lhs.cholesky() {
                Some(ch) => -ch.solve(&grad),
                None => {
                    lambda = (lambda * 10.0).max(1e-9);
                    continue;
                }
            };
            let mut trial = x.clone();
            for (s, &c) in step.iter().zip(&cols) {
                trial[c] += s;
            }
            let trial_pose = Pose::from_params(&trial)?;
            let trial_cost = objective(skel, &trial_pose, targets)?;
            if trial_cost < cost {
                accepted = Some((trial, trial_pose, trial_cost, step.norm()));
                lambda = if lambda > 0.0 { (lambda / 10.0).max(1e-12) } else { 0.0 };
                break;
            }
            lambda = (lambda * 10.0).max(1e-9);
        }

        match accepted {
            Some((trial, trial_pose, trial_cost, step_norm)) => {
                let x_norm = trial.iter().map(|v| v * v).sum::<f64>().sqrt();
                x = trial;
                pose = trial_pose;
                cost = trial_cost;
                history.push(cost);
                if cost <= cfg.residual_tol {
                    termination = Termination::Converged;
                    break;
                }
                if step_norm <= cfg.step_tol * (x_norm + cfg.step_tol) {
                    termination = Termination::Stationary;
                    break;
                }
            }
            None => {
                termination = Termination::Stationary;
                break;
            }
        }
    }
    if cost <= cfg.residual_tol {
        termination = Termination::Converged;
    }

    Ok(IkSolution {
        pose,
        residual: cost,
        iterations,
        converged: termination == Termination::Converged,
        termination,
        cost_history: history,
    })
}

/// Copies rotations of same-named joints from `src_pose`; unmatched target
/// joints stay at rest. Rotations are bone-length independent, so this is
/// the natural cold-start for the keypoint solve.
pub fn transfer_pose(src_skel: &Skeleton, src_pose: &Pose, trgt_skel: &Skeleton) -> Pose {
    let mut pose = Pose::rest(trgt_skel);
    pose.root_translation = src_pose.root_translation;
    for (j, joint) in trgt_skel.joints().iter().enumerate() {
        if let Some(s) = src_skel.joint_index(&joint.name) {
            pose.set_rotation(j, src_pose.rotation(s));
        }
    }
    pose
}

/// Precomputed rescaled skeleton and keypoint correspondence for repeated
/// solves between one source and one target skeleton.
#[derive(Debug, Clone)]
pub struct Retargeter {
    src: Skeleton,
    trgt: Skeleton,
    rescaled: Skeleton,
    /// For every target keypoint: (source keypoint slot, target joint, weight).
    pairs: Vec<(usize, usize, f64)>,
    cfg: RetargetConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetargetResult {
    pub pose: Pose,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl Retargeter {
    pub fn new(src: &Skeleton, trgt: &Skeleton, cfg: &RetargetConfig) -> Result<Self> {
        cfg.check()?;
        let rescaled = rescale_bones(trgt, src)?;
        let pairs = trgt
            .keypoint_names()
            .iter()
            .zip(trgt.keypoint_indices())
            .map(|(name, &tj)| {
                src.keypoint_names()
                    .iter()
                    .position(|n| n == name)
                    .map(|slot| (slot, tj, cfg.weight(name)))
                    .ok_or_else(|| {
                        Error::SkeletonCorrespondence(format!(
                            "target keypoint `{name}` is not a source keypoint"
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Retargeter {
            src: src.clone(),
            trgt: trgt.clone(),
            rescaled,
            pairs,
            cfg: cfg.clone(),
        })
    }

    /// Target skeleton after bone rescaling; the objective is evaluated on it.
    pub fn rescaled(&self) -> &Skeleton {
        &self.rescaled
    }

    fn targets(&self, src_pose: &Pose) -> Result<Vec<IkTarget>> {
        let kp = fk_keypoints(&self.src, src_pose)?;
        Ok(self
            .pairs
            .iter()
            .map(|&(slot, joint, weight)| IkTarget {
                joint,
                target: kp[slot],
                weight,
            })
            .collect())
    }

    /// Solves one frame. Candidate initializers are tried in order and the
    /// one with the lowest objective starts the solve (earlier wins ties).
    pub fn solve_frame(&self, src_pose: &Pose, previous: Option<&Pose>) -> Result<RetargetResult> {
        let targets = self.targets(src_pose)?;
        let transferred = transfer_pose(&self.src, src_pose, &self.trgt);
        let mut init = transferred;
        if let Some(prev) = previous {
            prev.check(&self.trgt)?;
            let c_prev = objective(&self.rescaled, prev, &targets)?;
            let c_transfer = objective(&self.rescaled, &init, &targets)?;
            if c_prev <= c_transfer {
                init = prev.clone();
            }
        }
        let sol = solve_ik(&self.rescaled, &targets, &init, &self.cfg, FreeParams::ALL)?;
        Ok(RetargetResult {
            pose: sol.pose,
            residual: sol.residual,
            iterations: sol.iterations,
            converged: sol.converged,
        })
    }

    /// Keypoints of a solved pose on the rescaled target skeleton.
    pub fn solved_keypoints(&self, pose: &Pose) -> Result<Vec<Vec3>> {
        fk_keypoints(&self.rescaled, pose)
    }
}

/// Retargets a single pose. With `init = None` the solve starts from the
/// source rotations transferred by joint name.
pub fn retarget_pose(
    src_skel: &Skeleton,
    src_pose: &Pose,
    trgt_skel: &Skeleton,
    init: Option<&Pose>,
    cfg: &RetargetConfig,
) -> Result<RetargetResult> {
    let rt = Retargeter::new(src_skel, trgt_skel, cfg)?;
    src_pose.check(src_skel)?;
    match init {
        None => rt.solve_frame(src_pose, None),
        Some(init) => {
            init.check(trgt_skel)?;
            let targets = rt.targets(src_pose)?;
            let sol = solve_ik(&rt.rescaled, &targets, init, cfg, FreeParams::ALL)?;
            Ok(RetargetResult {
                pose: sol.pose,
                residual: sol.residual,
                iterations: sol.iterations,
                converged: sol.converged,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetargetReport {
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
}

impl RetargetReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// Retargets every frame in order, warm-starting from the previous solution
/// when `cfg.init_from_previous` is set.
pub fn retarget_sequence(
    src_skel: &Skeleton,
    src_motion: &Motion,
    trgt_skel: &Skeleton,
    cfg: &RetargetConfig,
) -> Result<(Motion, RetargetReport)> {
    if src_motion.is_empty() {
        return Err(Error::EmptyInput("source motion has no frames".into()));
    }
    src_motion.check(src_skel)?;
    let rt = Retargeter::new(src_skel, trgt_skel, cfg)?;
    let mut frames: Vec<Pose> = Vec::with_capacity(src_motion.len());
    let mut report = RetargetReport {
        residuals: Vec::with_capacity(src_motion.len()),
        iterations: Vec::with_capacity(src_motion.len()),
        converged: Vec::with_capacity(src_motion.len()),
    };
    for pose in &src_motion.frames {
        let prev = if cfg.init_from_previous { frames.last() } else { None };
        let res = rt.solve_frame(pose, prev)?;
        report.residuals.push(res.residual);
        report.iterations.push(res.iterations);
        report.converged.push(res.converged);
        frames.push(res.pose);
    }
    Ok((
        Motion {
            fps: src_motion.fps,
            frames,
        },
        report,
    ))
}

/// Retargets independent sequences concurrently (each one stays sequential).
pub fn retarget_batch(
    src_skel: &Skeleton,
    motions: &[Motion],
    trgt_skel: &Skeleton,
    cfg: &RetargetConfig,
    exec: Exec,
) -> Result<Vec<(Motion, RetargetReport)>> {
    exec.try_map_range(motions.len(), |i| {
        retarget_sequence(src_skel, &motions[i], trgt_skel, cfg)
    })
}

fn mean(points: &[Vec3]) -> Vec3 {
    points.iter().sum::<Vec3>() / points.len() as f64
}

/// Shifts every root by `mean(train_roots) - mean(test_roots)`.
pub fn apply_root_offset(motion: &Motion, train_roots: &[Vec3], test_roots: &[Vec3]) -> Result<Motion> {
    if train_roots.is_empty() || test_roots.is_empty() {
        return Err(Error::EmptyInput("root position lists must be nonempty".into()));
    }
    let delta = mean(train_roots) - mean(test_roots);
    let mut out = motion.clone();
    for f in &mut out.frames {
        f.root_translation += delta;
    }
    Ok(out)
}

/// Normalized discrete Gaussian taps for offsets `-radius..=radius`, with
/// `radius = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Temporal Gaussian smoothing of per-frame point sets. Taps falling outside
/// the sequence are dropped and the remaining weights renormalized.
pub fn smooth_trajectories(frames: &[Vec<Vec3>], sigma_frames: f64) -> Result<Vec<Vec<Vec3>>> {
    smooth_trajectories_with(frames, sigma_frames, Exec::default())
}

pub fn smooth_trajectories_with(
    frames: &[Vec<Vec3>],
    sigma_frames: f64,
    exec: Exec,
) -> Result<Vec<Vec<Vec3>>> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("no frames to smooth".into()));
    }
    if !(sigma_frames > 0.0) || !sigma_frames.is_finite() {
        return Err(Error::Config(format!("sigma must be positive, got {sigma_frames}")));
    }
    let points = frames[0].len();
    if let Some(t) = frames.iter().position(|f| f.len() != points) {
        return Err(Error::Shape(format!(
            "frame {t} has {} points, frame 0 has {points}",
            frames[t].len()
        )));
    }
    let kernel = gaussian_kernel(sigma_frames);
    let radius = (kernel.len() / 2) as i64;
    let n = frames.len() as i64;
    Ok(exec.map_range(frames.len(), |t| {
        let t = t as i64;
        let lo = (t - radius).max(0);
        let hi = (t + radius).min(n - 1);
        let norm: f64 = (lo..=hi).map(|s| kernel[(s - t + radius) as usize]).sum();
        (0..points)
            .map(|i| {
                let mut acc = Vec3::zeros();
                for s in lo..=hi {
                    acc += frames[s as usize][i] * kernel[(s - t + radius) as usize];
                }
                acc / norm
            })
            .collect()
    }))
}
