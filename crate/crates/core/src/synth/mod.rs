//! Seeded synthetic rigs, scenes and fixtures with known ground truth.
//!
//! Generation is deterministic given the seed and single-threaded. The
//! random source is [`SplitMix64`], so fixtures can be reproduced by any
//! implementation of that generator.

mod export;
mod scene;

pub use export::{export_fixtures, FixtureFiles, GroundTruthManifest, ManifestTransform};
pub use scene::{
    generate_scene, look_at, linear_field_oracle, Quad, SceneBundle, SceneSpec, SparseTruth,
    ThermalField, TruthPoint,
};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::calibration::{reprojection_rms, BoardSpec, CalibrationResult, CameraId, CornerSet, PerCamera};
use crate::geometry::{
    project_unfolded, CameraIntrinsics, CameraView, Pixel, RigidTransform, UnitQuaternion, Vec3,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("sampling gave up: {0}")]
    SamplingFailed(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// SplitMix64: state advances by `0x9E3779B97F4A7C15`; output mixes with
/// `0xBF58476D1CE4E5B9` and `0x94D049BB133111EB` (shifts 30, 27, 31).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal by Box-Muller, one output per two uniforms.
    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub intrinsics: CameraIntrinsics,
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    pub fn view(&self, world_to_camera: RigidTransform) -> CameraView {
        CameraView::new(self.intrinsics, world_to_camera, self.width, self.height)
    }
}

/// Ground-truth rig: two RGB cameras and a thermal camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigSpec {
    pub cameras: PerCamera<CameraModel>,
    pub right_from_left: RigidTransform,
    pub thermal_from_left: RigidTransform,
}

/// Rig transform placing the other camera's center at `center` in left
/// coordinates.
fn from_left(rotation: UnitQuaternion, center: Vec3) -> RigidTransform {
    RigidTransform::new(rotation, -(rotation * center))
}

impl Default for RigSpec {
    /// 640×480 RGB pair with a 0.12 m baseline, 320×240 thermal imager
    /// mounted between and above them.
    fn default() -> Self {
        Self {
            cameras: PerCamera {
                left: CameraModel {
                    intrinsics: CameraIntrinsics::new(600.0, 602.0, 320.0, 240.0).with_k1(-0.05),
                    width: 640,
                    height: 480,
                },
                right: CameraModel {
                    intrinsics: CameraIntrinsics::new(595.0, 597.5, 316.0, 243.0).with_k1(-0.04),
                    width: 640,
                    height: 480,
                },
                thermal: CameraModel {
                    intrinsics: CameraIntrinsics::new(380.0, 381.5, 161.0, 119.0).with_k1(0.02),
                    width: 320,
                    height: 240,
                },
            },
            right_from_left: from_left(
                UnitQuaternion::from_euler_angles(0.002, -0.01, 0.003),
                Vec3::new(0.12, 0.0005, -0.001),
            ),
            thermal_from_left: from_left(
                UnitQuaternion::from_euler_angles(-0.01, 0.015, 0.005),
                Vec3::new(0.06, -0.05, 0.01),
            ),
        }
    }
}

impl RigSpec {
    /// Distance between the RGB camera centers.
    pub fn baseline(&self) -> f64 {
        crate::geometry::camera_center_of(&self.right_from_left).norm()
    }

    /// Same rig with the right camera moved along its current direction so
    /// the baseline is `baseline`.
    pub fn with_baseline(mut self, baseline: f64) -> Self {
        let center = crate::geometry::camera_center_of(&self.right_from_left);
        let center = center * (baseline / center.norm());
        self.right_from_left = from_left(self.right_from_left.rotation, center);
        self
    }

    pub fn camera_from_left(&self, camera: CameraId) -> RigidTransform {
        match camera {
            CameraId::Left => RigidTransform::identity(),
            CameraId::Right => self.right_from_left,
            CameraId::Thermal => self.thermal_from_left,
        }
    }

    /// View of `camera` when the left camera has pose `world_to_left`.
    pub fn view(&self, camera: CameraId, world_to_left: &RigidTransform) -> CameraView {
        self.cameras
            .get(camera)
            .view(self.camera_from_left(camera).compose(world_to_left))
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for c in CameraId::ALL {
            let m = self.cameras.get(c);
            if !m.intrinsics.is_valid() || m.width == 0 || m.height == 0 {
                return Err(SynthError::InvalidSpec(format!("{c} camera model is invalid")));
            }
        }
        if !(self.baseline() > 0.0) {
            return Err(SynthError::InvalidSpec("baseline must be positive".into()));
        }
        Ok(())
    }
}

/// Board observations of a rig with exact ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationScene {
    pub rig: RigSpec,
    pub board: BoardSpec,
    /// Board-to-left pose per view.
    pub board_poses: BTreeMap<u32, RigidTransform>,
    /// View-major, then left, right, thermal.
    pub corner_sets: Vec<CornerSet>,
}

/// Pixels kept clear at the image border.
const CORNER_MARGIN: f64 = 10.0;

impl CalibrationScene {
    /// Panics when no valid board pose can be found; see [`Self::try_generate`].
    pub fn generate(rig: &RigSpec, n_views: usize, noise_px: f64, seed: u64) -> Self {
        Self::try_generate(rig, n_views, noise_px, seed).expect("calibration scene")
    }

    /// A 6×8 board of 40 mm squares in `n_views` random poses, each fully
    /// visible to all three cameras with a margin. Corners carry independent
    /// Gaussian noise of `noise_px` per coordinate.
    pub fn try_generate(rig: &RigSpec, n_views: usize, noise_px: f64, seed: u64) -> Result<Self, SynthError> {
        rig.validate()?;
        if !(noise_px >= 0.0 && noise_px.is_finite()) {
            return Err(SynthError::InvalidSpec(format!("noise must be non-negative, got {noise_px}")));
        }
        let board = BoardSpec::new(6, 8, 0.04);
        let points = board.points();
        let middle = Vec3::new(
            0.5 * (board.cols - 1) as f64 * board.square_size,
            0.5 * (board.rows - 1) as f64 * board.square_size,
            0.0,
        );
        let mut rng = SplitMix64::new(seed);
        let mut board_poses = BTreeMap::new();
        let mut corner_sets = Vec::new();
        let mut attempts = 0;
        while board_poses.len() < n_views {
            attempts += 1;
            if attempts > 10_000 * n_views.max(1) {
                return Err(SynthError::SamplingFailed(
                    "no board pose visible to every camera".into(),
                ));
            }
            let rotation = UnitQuaternion::from_euler_angles(
                rng.uniform(-0.6, 0.6),
                rng.uniform(-0.6, 0.6),
                rng.uniform(-0.4, 0.4),
            );
            let target = Vec3::new(
                0.5 * rig.baseline() + rng.uniform(-0.15, 0.15),
                rng.uniform(-0.1, 0.1),
                rng.uniform(0.7, 1.3),
            );
            let pose = RigidTransform::new(rotation, target - rotation * middle);

            let mut sets = Vec::with_capacity(3);
            let view_id = board_poses.len() as u32;
            let ok = CameraId::ALL.iter().all(|&camera| {
                let view = rig.view(camera, &pose);
                let mut corners = Vec::with_capacity(points.len());
                for p in &points {
                    let Some(proj) = project_unfolded(&view, p) else {
                        return false;
                    };
                    let px = proj.pixel;
                    let inside = px.u >= CORNER_MARGIN
                        && px.v >= CORNER_MARGIN
                        && px.u <= view.image_width as f64 - 1.0 - CORNER_MARGIN
                        && px.v <= view.image_height as f64 - 1.0 - CORNER_MARGIN;
                    if !inside || proj.depth < 0.1 {
                        return false;
                    }
                    corners.push(px);
                }
                sets.push(CornerSet {
                    view_id,
                    camera_id: camera,
                    corners,
                });
                true
            });
            if !ok {
                continue;
            }
            if noise_px > 0.0 {
                for set in &mut sets {
                    for c in &mut set.corners {
                        *c = Pixel::new(
                            c.u + noise_px * rng.gaussian(),
                            c.v + noise_px * rng.gaussian(),
                        );
                    }
                }
            }
            board_poses.insert(view_id, pose);
            corner_sets.extend(sets);
        }
        Ok(Self {
            rig: *rig,
            board,
            board_poses,
            corner_sets,
        })
    }

    /// The generating parameters as a calibration result, with the RMS of
    /// the stored (possibly noisy) corners against them.
    pub fn ground_truth_result(&self) -> CalibrationResult {
        let mut result = CalibrationResult {
            intrinsics: PerCamera::from_fn(|c| self.rig.cameras.get(c).intrinsics),
            board_poses: self.board_poses.clone(),
            right_from_left: self.rig.right_from_left,
            thermal_from_left: self.rig.thermal_from_left,
            rms_reprojection: PerCamera::default(),
        };
        if let Ok(rms) = reprojection_rms(&self.board, &self.corner_sets, &result) {
            result.rms_reprojection = rms;
        }
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // First outputs for seed 0, from the reference C implementation.
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(rng.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn uniform_and_gaussian_moments() {
        let mut rng = SplitMix64::new(42);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let g = rng.gaussian();
            s += g;
            s2 += g * g;
        }
        let mean = s / n as f64;
        assert!(mean.abs() < 0.01);
        assert!((s2 / n as f64 - 1.0).abs() < 0.02);
        for _ in 0..1000 {
            let u = rng.uniform(2.0, 3.0);
            assert!((2.0..3.0).contains(&u));
        }
    }

    #[test]
    fn baseline_override() {
        let rig = RigSpec::default().with_baseline(0.2);
        assert!((rig.baseline() - 0.2).abs() < 1e-15);
        assert!((RigSpec::default().baseline() - (0.12f64.powi(2) + 0.0005f64.powi(2) + 0.001f64.powi(2)).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn calibration_scene_is_deterministic_and_in_bounds() {
        let rig = RigSpec::default();
        let a = CalibrationScene::generate(&rig, 5, 0.5, 11);
        let b = CalibrationScene::generate(&rig, 5, 0.5, 11);
        assert_eq!(a, b);
        assert_eq!(a.corner_sets.len(), 15);
        for set in &a.corner_sets {
            let m = rig.cameras.get(set.camera_id);
            for c in &set.corners {
                assert!(c.u > 0.0 && c.v > 0.0 && c.u < m.width as f64 && c.v < m.height as f64);
            }
        }
    }

    #[test]
    fn noiseless_truth_has_zero_rms() {
        let s = CalibrationScene::generate(&RigSpec::default(), 4, 0.0, 3);
        let truth = s.ground_truth_result();
        for c in CameraId::ALL {
            assert!(*truth.rms_reprojection.get(c) < 1e-12);
        }
    }
}
