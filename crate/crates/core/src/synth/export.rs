//! Fixture directories and the ground-truth manifest.
//!
//! ```text
//! <dir>/scene.nvm           NVM_V3, in the scene's similarity gauge
//! <dir>/dense.ply           binary little-endian, double xyz, float normals
//! <dir>/dense.patch         PMVS patches, same order as dense.ply
//! <dir>/corners.csv         board corners of all three cameras
//! <dir>/thermal/T_000.pgm   16-bit thermal frames, one per stereo frame
//! <dir>/ground_truth.toml   generating parameters
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{SceneBundle, SynthError, ThermalField};
use crate::calibration::{write_corner_csv, BoardSpec, CameraId, PerCamera};
use crate::fusion::encode_pgm;
use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::sfm_io::{write_dense_ply, write_nvm, write_patch, PlyMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifestTransform {
    pub rotation_wxyz: [f64; 4],
    pub translation: [f64; 3],
}

impl From<&RigidTransform> for ManifestTransform {
    fn from(t: &RigidTransform) -> Self {
        let q = t.rotation.quaternion();
        Self {
            rotation_wxyz: [q.w, q.i, q.j, q.k],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

/// Written as `ground_truth.toml`; paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthManifest {
    pub seed: u64,
    pub n_frames: usize,
    pub n_points: usize,
    pub n_sparse: usize,
    pub noise_px: f64,
    /// Meters.
    pub baseline: f64,
    /// Model units per meter.
    pub model_scale: f64,
    /// Meters per model unit, the value scale recovery should find.
    pub expected_scale: f64,
    pub model_rotation_wxyz: [f64; 4],
    pub model_translation: [f64; 3],
    pub thermal_field: ThermalField,
    pub board: BoardSpec,
    pub intrinsics: PerCamera<CameraIntrinsics>,
    pub image_sizes: PerCamera<[u32; 2]>,
    pub right_from_left: ManifestTransform,
    pub thermal_from_left: ManifestTransform,
    pub files: FixtureFiles,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureFiles {
    pub nvm: PathBuf,
    pub dense_ply: PathBuf,
    pub patch: PathBuf,
    pub corners: PathBuf,
    pub thermal_dir: PathBuf,
    pub left_pattern: String,
    pub right_pattern: String,
    pub thermal_pattern: String,
}

impl Default for FixtureFiles {
    fn default() -> Self {
        Self {
            nvm: "scene.nvm".into(),
            dense_ply: "dense.ply".into(),
            patch: "dense.patch".into(),
            corners: "corners.csv".into(),
            thermal_dir: "thermal".into(),
            left_pattern: "L_*.jpg".into(),
            right_pattern: "R_*.jpg".into(),
            thermal_pattern: "T_*.pgm".into(),
        }
    }
}

impl GroundTruthManifest {
    pub fn from_bundle(bundle: &SceneBundle) -> Self {
        let spec = &bundle.spec;
        let q = spec.model_rotation.quaternion();
        Self {
            seed: spec.seed,
            n_frames: spec.n_frames,
            n_points: spec.n_points,
            n_sparse: spec.n_sparse,
            noise_px: spec.noise_px,
            baseline: bundle.rig.baseline(),
            model_scale: spec.model_scale,
            expected_scale: 1.0 / spec.model_scale,
            model_rotation_wxyz: [q.w, q.i, q.j, q.k],
            model_translation: spec.model_translation.into(),
            thermal_field: spec.thermal_field,
            board: bundle.calibration.board,
            intrinsics: PerCamera::from_fn(|c| bundle.rig.cameras.get(c).intrinsics),
            image_sizes: PerCamera::from_fn(|c| {
                let m = bundle.rig.cameras.get(c);
                [m.width, m.height]
            }),
            right_from_left: (&bundle.rig.camera_from_left(CameraId::Right)).into(),
            thermal_from_left: (&bundle.rig.camera_from_left(CameraId::Thermal)).into(),
            files: FixtureFiles::default(),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), SynthError> {
    std::fs::write(path, bytes).map_err(|source| SynthError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes every fixture of `bundle` into `dir`, creating it if needed.
/// Output is byte-identical for identical bundles.
pub fn export_fixtures(bundle: &SceneBundle, dir: &Path) -> Result<GroundTruthManifest, SynthError> {
    let manifest = GroundTruthManifest::from_bundle(bundle);
    let files = &manifest.files;
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| SynthError::Io { path, source }
    };
    let thermal_dir = dir.join(&files.thermal_dir);
    std::fs::create_dir_all(&thermal_dir).map_err(io(&thermal_dir))?;

    write(&dir.join(&files.nvm), write_nvm(&bundle.nvm_model()).as_bytes())?;
    let normals = bundle.dense_normals();
    write(
        &dir.join(&files.dense_ply),
        &write_dense_ply(&bundle.dense_cloud(), Some(&normals), PlyMode::Binary),
    )?;
    write(&dir.join(&files.patch), write_patch(&bundle.patches()).as_bytes())?;

    let mut csv = Vec::new();
    write_corner_csv(&mut csv, &bundle.calibration.corner_sets).map_err(|e| SynthError::Io {
        path: dir.join(&files.corners).display().to_string(),
        source: std::io::Error::other(e.to_string()),
    })?;
    write(&dir.join(&files.corners), &csv)?;

    for (f, image) in bundle.thermal_images.iter().enumerate() {
        write(&thermal_dir.join(SceneBundle::thermal_name(f)), &encode_pgm(image))?;
    }
    write(&dir.join("ground_truth.toml"), manifest.to_toml_string().as_bytes())?;
    Ok(manifest)
}
