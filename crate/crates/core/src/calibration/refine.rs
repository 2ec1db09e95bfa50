//! Joint reprojection refinement of the three-camera rig.
//!
//! Parameter vector (local increments):
//!
//! | block                    | size | content                               |
//! |--------------------------|------|---------------------------------------|
//! | intrinsics × 3 cameras   | 5    | `fx, fy, cx, cy, k1`                  |
//! | rig × (right, thermal)   | 6    | rotation increment, translation       |
//! | board pose × views       | 6    | rotation increment, translation       |
//!
//! Rotations are updated as `R <- exp(δ) R`. Residuals are ordered
//! view-major, then camera, then corner, as `(u, v)` pairs.

use std::collections::BTreeMap;

use nalgebra::{Matrix2x3, Matrix3};

use super::{
    index_corner_sets, BoardSpec, CalibrationError, CalibrationResult,
    CameraId, CornerSet, PerCamera,
};
use crate::geometry::{rotation_from_vector, skew, CameraIntrinsics, Pixel, RigidTransform, Vec3};
use crate::lm::{self, LeastSquaresProblem, LmOptions, LmReport, SparseJacobian};

const INTRINSIC_BLOCK: usize = 5;
const POSE_BLOCK: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationState {
    pub intrinsics: PerCamera<CameraIntrinsics>,
    pub right_from_left: RigidTransform,
    pub thermal_from_left: RigidTransform,
    /// Board-to-left poses in ascending view order.
    pub board_poses: Vec<RigidTransform>,
}

struct Observation {
    view: usize,
    camera: CameraId,
    point: Vec3,
    pixel: Pixel,
}

pub struct CalibrationProblem {
    view_ids: Vec<u32>,
    observations: Vec<Observation>,
}

#[derive(Debug, Clone)]
pub struct Refined {
    pub result: CalibrationResult,
    pub report: LmReport,
}

impl CalibrationProblem {
    pub fn new(board: &BoardSpec, sets: &[CornerSet]) -> Result<Self, CalibrationError> {
        let by_camera = index_corner_sets(board, sets)?;
        let mut view_ids: Vec<u32> = sets.iter().map(|s| s.view_id).collect();
        view_ids.sort_unstable();
        view_ids.dedup();
        let points = board.points();
        let mut observations = Vec::new();
        for (view, id) in view_ids.iter().enumerate() {
            for camera in CameraId::ALL {
                if let Some(set) = by_camera.get(camera).get(id) {
                    for (point, pixel) in points.iter().zip(&set.corners) {
                        observations.push(Observation {
                            view,
                            camera,
                            point: *point,
                            pixel: *pixel,
                        });
                    }
                }
            }
        }
        Ok(Self {
            view_ids,
            observations,
        })
    }

    pub fn view_ids(&self) -> &[u32] {
        &self.view_ids
    }

    pub fn residual_count(&self) -> usize {
        2 * self.observations.len()
    }

    pub fn state_from_result(
        &self,
        result: &CalibrationResult,
    ) -> Result<CalibrationState, CalibrationError> {
        let board_poses = self
            .view_ids
            .iter()
            .map(|id| {
                result
                    .board_poses
                    .get(id)
                    .copied()
                    .ok_or(CalibrationError::Numerical("initial result lacks a board pose"))
            })
            .collect::<Result<_, _>>()?;
        Ok(CalibrationState {
            intrinsics: result.intrinsics,
            right_from_left: result.right_from_left,
            thermal_from_left: result.thermal_from_left,
            board_poses,
        })
    }

    pub fn result_from_state(&self, state: &CalibrationState) -> CalibrationResult {
        CalibrationResult {
            intrinsics: state.intrinsics,
            board_poses: self
                .view_ids
                .iter()
                .copied()
                .zip(state.board_poses.iter().copied())
                .collect::<BTreeMap<_, _>>(),
            right_from_left: state.right_from_left,
            thermal_from_left: state.thermal_from_left,
            rms_reprojection: self.rms(state),
        }
    }

    /// Per-camera RMS of residual components, accumulated in residual order.
    pub fn rms(&self, state: &CalibrationState) -> PerCamera<f64> {
        let r = self.residuals(state);
        let mut sums = PerCamera::<(f64, usize)>::default();
        for (obs, pair) in self.observations.iter().zip(r.chunks_exact(2)) {
            let acc = sums.get_mut(obs.camera);
            acc.0 += pair[0] * pair[0] + pair[1] * pair[1];
            acc.1 += 2;
        }
        PerCamera::from_fn(|c| {
            let (s, n) = *sums.get(c);
            if n == 0 {
                0.0
            } else {
                (s / n as f64).sqrt()
            }
        })
    }

    fn intrinsic_offset(camera: CameraId) -> usize {
        camera.index() * INTRINSIC_BLOCK
    }

    fn rig_offset(camera: CameraId) -> Option<usize> {
        match camera {
            CameraId::Left => None,
            CameraId::Right => Some(3 * INTRINSIC_BLOCK),
            CameraId::Thermal => Some(3 * INTRINSIC_BLOCK + POSE_BLOCK),
        }
    }

    fn view_offset(view: usize) -> usize {
        3 * INTRINSIC_BLOCK + 2 * POSE_BLOCK + view * POSE_BLOCK
    }

    fn rig<'a>(state: &'a CalibrationState, camera: CameraId) -> Option<&'a RigidTransform> {
        match camera {
            CameraId::Left => None,
            CameraId::Right => Some(&state.right_from_left),
            CameraId::Thermal => Some(&state.thermal_from_left),
        }
    }

    /// Camera-frame point and, for rigged cameras, the left-frame point.
    fn camera_point(state: &CalibrationState, obs: &Observation) -> (Vec3, Vec3) {
        let left = state.board_poses[obs.view].transform_point(&obs.point);
        let cam = match Self::rig(state, obs.camera) {
            Some(rig) => rig.transform_point(&left),
            None => left,
        };
        (cam, left)
    }

    /// Projection without the depth guard, so residuals stay defined while
    /// the optimizer explores.
    fn project(intr: &CameraIntrinsics, pc: &Vec3) -> Pixel {
        let m = (pc.x / pc.z, pc.y / pc.z);
        intr.to_pixel(intr.distort(m))
    }

    /// Pixel derivative with respect to the camera-frame point, and with
    /// respect to `(fx, fy, cx, cy, k1)`.
    fn projection_jacobians(intr: &CameraIntrinsics, pc: &Vec3) -> (Matrix2x3<f64>, [[f64; 5]; 2]) {
        let (x, y, z) = (pc.x, pc.y, pc.z);
        let (mx, my) = (x / z, y / z);
        let r2 = mx * mx + my * my;
        let d = 1.0 + intr.k1 * r2;
        let (mdx, mdy) = (mx * d, my * d);
        let k2 = 2.0 * intr.k1;
        let dmd_dm = nalgebra::Matrix2::new(
            d + k2 * mx * mx,
            k2 * mx * my,
            k2 * mx * my,
            d + k2 * my * my,
        );
        let dpix_dmd = nalgebra::Matrix2::new(intr.fx, intr.skew, 0.0, intr.fy);
        let dm_dx = Matrix2x3::new(1.0 / z, 0.0, -x / (z * z), 0.0, 1.0 / z, -y / (z * z));
        let d_point = dpix_dmd * dmd_dm * dm_dx;
        let d_intr = [
            [mdx, 0.0, 1.0, 0.0, (intr.fx * mx + intr.skew * my) * r2],
            [0.0, mdy, 0.0, 1.0, intr.fy * my * r2],
        ];
        (d_point, d_intr)
    }
}

fn retract_pose(pose: &RigidTransform, delta: &[f64]) -> RigidTransform {
    let mut rotation = rotation_from_vector(Vec3::new(delta[0], delta[1], delta[2])) * pose.rotation;
    rotation.renormalize();
    RigidTransform::new(
        rotation,
        pose.translation + Vec3::new(delta[3], delta[4], delta[5]),
    )
}

fn retract_intrinsics(intr: &CameraIntrinsics, delta: &[f64]) -> CameraIntrinsics {
    CameraIntrinsics {
        fx: intr.fx + delta[0],
        fy: intr.fy + delta[1],
        cx: intr.cx + delta[2],
        cy: intr.cy + delta[3],
        skew: intr.skew,
        k1: intr.k1 + delta[4],
    }
}

impl LeastSquaresProblem for CalibrationProblem {
    type State = CalibrationState;

    fn parameter_count(&self) -> usize {
        Self::view_offset(self.view_ids.len())
    }

    fn residuals(&self, state: &CalibrationState) -> Vec<f64> {
        let mut r = Vec::with_capacity(self.residual_count());
        for obs in &self.observations {
            let (pc, _) = Self::camera_point(state, obs);
            let px = Self::project(state.intrinsics.get(obs.camera), &pc);
            r.push(px.u - obs.pixel.u);
            r.push(px.v - obs.pixel.v);
        }
        r
    }

    fn jacobian(&self, state: &CalibrationState) -> SparseJacobian {
        let mut jac = SparseJacobian::new(self.parameter_count());
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(17);
        for obs in &self.observations {
            let (pc, left) = Self::camera_point(state, obs);
            let intr = state.intrinsics.get(obs.camera);
            let (d_point, d_intr) = Self::projection_jacobians(intr, &pc);

            let rig_rot: Matrix3<f64> = Self::rig(state, obs.camera)
                .map(|r| r.rotation_matrix())
                .unwrap_or_else(Matrix3::identity);
            let pose = &state.board_poses[obs.view];
            // d(left point) / d(view rotation increment) = -[R P]×
            let d_view_rot = rig_rot * -skew(&(pose.rotation * obs.point));
            let d_view_trans = rig_rot;
            let rig_blocks = Self::rig(state, obs.camera).map(|rig| {
                let d_rot = -skew(&(rig.rotation * left));
                (d_rot, Matrix3::<f64>::identity())
            });

            for axis in 0..2 {
                row.clear();
                let io = Self::intrinsic_offset(obs.camera);
                row.extend((0..5).map(|k| (io + k, d_intr[axis][k])));
                if let (Some(ro), Some((d_rot, d_trans))) = (Self::rig_offset(obs.camera), &rig_blocks) {
                    let a = d_point.row(axis) * d_rot;
                    let b = d_point.row(axis) * d_trans;
                    row.extend((0..3).map(|k| (ro + k, a[k])));
                    row.extend((0..3).map(|k| (ro + 3 + k, b[k])));
                }
                let vo = Self::view_offset(obs.view);
                let a = d_point.row(axis) * d_view_rot;
                let b = d_point.row(axis) * d_view_trans;
                row.extend((0..3).map(|k| (vo + k, a[k])));
                row.extend((0..3).map(|k| (vo + 3 + k, b[k])));
                jac.push_row(row.iter().copied());
            }
        }
        jac
    }

    fn retract(&self, state: &CalibrationState, delta: &[f64]) -> CalibrationState {
        let intrinsics = PerCamera::from_fn(|c| {
            let o = Self::intrinsic_offset(c);
            retract_intrinsics(state.intrinsics.get(c), &delta[o..o + INTRINSIC_BLOCK])
        });
        let rig = |c: CameraId, pose: &RigidTransform| {
            let o = Self::rig_offset(c).unwrap();
            retract_pose(pose, &delta[o..o + POSE_BLOCK])
        };
        CalibrationState {
            intrinsics,
            right_from_left: rig(CameraId::Right, &state.right_from_left),
            thermal_from_left: rig(CameraId::Thermal, &state.thermal_from_left),
            board_poses: state
                .board_poses
                .iter()
                .enumerate()
                .map(|(v, p)| {
                    let o = Self::view_offset(v);
                    retract_pose(p, &delta[o..o + POSE_BLOCK])
                })
                .collect(),
        }
    }
}

/// Levenberg–Marquardt refinement of intrinsics (including `k1`), board
/// poses and rig transforms against all corner observations.
pub fn refine_reprojection(
    board: &BoardSpec,
    sets: &[CornerSet],
    initial: &CalibrationResult,
    options: &LmOptions,
) -> Result<Refined, CalibrationError> {
    let problem = CalibrationProblem::new(board, sets)?;
    let state = problem.state_from_result(initial)?;
    if !initial.rms_reprojection.left.is_finite()
        || !initial.rms_reprojection.right.is_finite()
        || !initial.rms_reprojection.thermal.is_finite()
    {
        return Err(CalibrationError::Numerical("initial rms is not finite"));
    }
    let outcome = lm::minimize(&problem, state, options)
        .map_err(|e| CalibrationError::NoDecrease { cost: e.cost })?;
    Ok(Refined {
        result: problem.result_from_state(&outcome.state),
        report: outcome.report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{CalibrationScene, SplitMix64};

    fn scene(noise: f64, seed: u64) -> CalibrationScene {
        CalibrationScene::generate(&crate::synth::RigSpec::default(), 10, noise, seed)
    }

    #[test]
    fn optimum_is_a_fixed_point() {
        let s = scene(0.0, 1);
        let truth = s.ground_truth_result();
        let out = refine_reprojection(&s.board, &s.corner_sets, &truth, &LmOptions::default()).unwrap();
        for c in CameraId::ALL {
            assert!(*out.result.rms_reprojection.get(c) < 1e-8);
            let (a, b) = (out.result.intrinsics.get(c), truth.intrinsics.get(c));
            assert!((a.fx - b.fx).abs() < 1e-8 && (a.cx - b.cx).abs() < 1e-8 && (a.k1 - b.k1).abs() < 1e-8);
        }
        let (angle, dist) = out.result.right_from_left.distance_to(&truth.right_from_left);
        assert!(angle < 1e-8 && dist < 1e-8);
    }

    #[test]
    fn recovers_from_perturbed_intrinsics() {
        let s = scene(0.0, 2);
        let truth = s.ground_truth_result();
        let mut start = truth.clone();
        for c in CameraId::ALL {
            let i = start.intrinsics.get_mut(c);
            i.fx *= 1.05;
            i.fy *= 0.95;
            i.cx *= 1.05;
            i.cy *= 0.95;
            i.k1 = 0.0;
        }
        start.rms_reprojection = super::super::reprojection_rms(&s.board, &s.corner_sets, &start).unwrap();
        let out = refine_reprojection(&s.board, &s.corner_sets, &start, &LmOptions::default()).unwrap();
        for c in CameraId::ALL {
            let (a, b) = (out.result.intrinsics.get(c), truth.intrinsics.get(c));
            for (x, y) in [(a.fx, b.fx), (a.fy, b.fy), (a.cx, b.cx), (a.cy, b.cy)] {
                assert!(((x - y) / y).abs() < 1e-6, "{c}: {x} vs {y}");
            }
            assert!((a.k1 - b.k1).abs() < 1e-6 * b.k1.abs().max(1.0));
        }
        for w in out.report.cost_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let s = scene(0.5, 3);
        let problem = CalibrationProblem::new(&s.board, &s.corner_sets).unwrap();
        let mut rng = SplitMix64::new(99);
        let base = problem.state_from_result(&s.ground_truth_result()).unwrap();
        let n = problem.parameter_count();
        // Perturb the state to a random nearby point.
        let jitter: Vec<f64> = (0..n)
            .map(|k| {
                let scale = parameter_scale(k);
                rng.uniform(-0.01, 0.01) * scale
            })
            .collect();
        let state = problem.retract(&base, &jitter);
        let analytic = problem.jacobian(&state).to_dense();
        for k in 0..n {
            let h = 1e-6 * parameter_scale(k);
            let mut d = vec![0.0; n];
            d[k] = h;
            let plus = problem.residuals(&problem.retract(&state, &d));
            d[k] = -h;
            let minus = problem.residuals(&problem.retract(&state, &d));
            let fd: Vec<f64> = plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let col = analytic.column(k);
            let diff: f64 = col.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(diff <= 1e-4 * norm.max(1e-12), "column {k}: {diff:e} vs {norm:e}");
        }
    }

    fn parameter_scale(k: usize) -> f64 {
        if k < 15 {
            match k % 5 {
                4 => 1.0,
                _ => 500.0,
            }
        } else {
            1.0
        }
    }
}
