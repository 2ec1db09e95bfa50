//! End-to-end fusion of one capture: stereo pairing, scale recovery,
//! visibility selection and thermal averaging.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{CalibrationResult, CameraId};
use crate::fusion::{
    frame_views, fuse, map_visibility_to_frames, transfer_sparse_visibility, zbuffer_visibility,
    FuseOptions, FusionError, Interpolation, ThermalFrame, ThermalImage, ThermalRigMap,
    ZBufferOptions,
};
use crate::geometry::CameraView;
use crate::scale::{
    apply_scale, estimate_scale, pair_frames, verify_scaled_baseline, BaselineCheck,
    FramePattern, ScaleError, ScaleEstimate, StereoPairing,
};
use crate::sfm_io::{DenseCloud, FusedPoint, NvmModel};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("no thermal frame matches a left camera of the reconstruction")]
    NoThermalFrames,
}

/// A thermal image with the file name it was loaded from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedThermalImage {
    pub name: String,
    pub image: ThermalImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub left_pattern: String,
    pub right_pattern: String,
    pub thermal_pattern: String,
    /// Meters.
    pub known_baseline: f64,
    pub interpolation: Interpolation,
    /// Occlusion test in the thermal views; `None` disables it.
    pub zbuffer: Option<ZBufferOptions>,
}

/// Where the per-point frame lists came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisibilitySource {
    /// Lists attached to the dense cloud, usually from a patch file.
    Listed,
    /// Listed frames that also pass the thermal z-buffer.
    ListedZBuffer,
    /// Every thermal frame whose z-buffer keeps the point.
    ZBuffer,
    /// Lists of the nearest sparse point.
    SparseTransfer,
}

impl VisibilitySource {
    pub fn as_str(&self) -> &'static str {
        match self {
            VisibilitySource::Listed => "listed",
            VisibilitySource::ListedZBuffer => "listed_zbuffer",
            VisibilitySource::ZBuffer => "zbuffer",
            VisibilitySource::SparseTransfer => "sparse_transfer",
        }
    }

    /// Whether the source is a fallback for missing dense visibility.
    pub fn is_fallback(&self) -> bool {
        matches!(self, VisibilitySource::ZBuffer | VisibilitySource::SparseTransfer)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionRun {
    /// Metric positions.
    pub points: Vec<FusedPoint>,
    pub pairing: StereoPairing,
    pub scale: ScaleEstimate,
    pub baseline_check: BaselineCheck,
    pub source: VisibilitySource,
    /// Thermal frames keyed to a left camera.
    pub frames_used: usize,
    /// Thermal images whose token matched no left camera.
    pub frames_unmatched: usize,
}

impl FusionRun {
    pub fn valid_count(&self) -> usize {
        self.points.iter().filter(|p| p.thermal_valid).count()
    }
}

/// Keys each thermal image to the left camera sharing its frame token.
/// Returns the keyed frames and the number left unmatched.
pub fn associate_thermal_frames(
    model: &NvmModel,
    left_pattern: &str,
    thermal_pattern: &str,
    images: &[NamedThermalImage],
) -> Result<(Vec<ThermalFrame>, usize), ScaleError> {
    let left = FramePattern::new(left_pattern)?;
    let thermal = FramePattern::new(thermal_pattern)?;
    let mut frames = Vec::new();
    let mut unmatched = 0;
    for named in images {
        let camera = thermal.capture(&named.name).and_then(|token| {
            model
                .cameras
                .iter()
                .position(|c| left.capture(&c.image_name) == Some(token))
        });
        match camera {
            Some(frame_id) => frames.push(ThermalFrame {
                frame_id,
                image: named.image.clone(),
            }),
            None => unmatched += 1,
        }
    }
    frames.sort_by_key(|f| f.frame_id);
    Ok((frames, unmatched))
}

/// Metric left-camera views of a scaled model. The image size is nominal,
/// twice the principal point, since only thermal views are rasterized.
pub fn left_views(scaled: &NvmModel, calibration: &CalibrationResult) -> Vec<CameraView> {
    let intr = *calibration.intrinsics.get(CameraId::Left);
    let (w, h) = ((2.0 * intr.cx).round().max(1.0), (2.0 * intr.cy).round().max(1.0));
    scaled
        .cameras
        .iter()
        .map(|c| CameraView::new(intr, c.world_to_camera(), w as u32, h as u32))
        .collect()
}

pub fn thermal_rig(calibration: &CalibrationResult, frames: &[ThermalFrame]) -> ThermalRigMap {
    let (w, h) = frames
        .first()
        .map_or((1, 1), |f| (f.image.width(), f.image.height()));
    ThermalRigMap {
        thermal_intrinsics: *calibration.intrinsics.get(CameraId::Thermal),
        thermal_from_left: calibration.thermal_from_left,
        image_width: w,
        image_height: h,
    }
}

/// Per-point frame lists from the z-buffer of every thermal frame.
fn zbuffer_lists(
    cloud: &DenseCloud,
    frames: &[ThermalFrame],
    views: &[CameraView],
    rig: &ThermalRigMap,
    options: &ZBufferOptions,
) -> Result<Vec<Vec<usize>>, FusionError> {
    let thermal = frame_views(frames, views, rig)?;
    let mut lists = vec![Vec::new(); cloud.points.len()];
    for (camera, entry) in thermal.iter().enumerate() {
        let Some((view, _)) = entry else { continue };
        for (list, seen) in lists.iter_mut().zip(zbuffer_visibility(cloud, view, options)) {
            if seen {
                list.push(camera);
            }
        }
    }
    Ok(lists)
}

/// Runs pair, scale, visibility selection and fusion. Dense visibility
/// attached to `cloud` takes precedence; without it the z-buffer is used
/// when enabled and sparse transfer otherwise.
pub fn run_fusion(
    model: &NvmModel,
    cloud: &DenseCloud,
    images: &[NamedThermalImage],
    calibration: &CalibrationResult,
    options: &PipelineOptions,
) -> Result<FusionRun, PipelineError> {
    let pairing = pair_frames(model, &options.left_pattern, &options.right_pattern)?;
    let scale = estimate_scale(model, &pairing, options.known_baseline)?;
    let (scaled_model, scaled_cloud) = apply_scale(model, cloud, scale.scale);
    let baseline_check = verify_scaled_baseline(&scaled_model, &pairing, &scale, options.known_baseline);

    let (frames, frames_unmatched) =
        associate_thermal_frames(model, &options.left_pattern, &options.thermal_pattern, images)?;
    if frames.is_empty() {
        return Err(PipelineError::NoThermalFrames);
    }
    let views = left_views(&scaled_model, calibration);
    let rig = thermal_rig(calibration, &frames);

    if let Some(listed) = &cloud.visibility {
        if listed.len() != cloud.points.len() {
            return Err(FusionError::VisibilityLength {
                got: listed.len(),
                expected: cloud.points.len(),
            }
            .into());
        }
    }

    let (lists, source) = match (&cloud.visibility, &options.zbuffer) {
        (Some(listed), None) => (map_visibility_to_frames(listed, &pairing), VisibilitySource::Listed),
        (Some(listed), Some(z)) => {
            let listed = map_visibility_to_frames(listed, &pairing);
            let kept = zbuffer_lists(&scaled_cloud, &frames, &views, &rig, z)?;
            let lists = listed
                .iter()
                .zip(&kept)
                .map(|(l, k)| l.iter().copied().filter(|c| k.binary_search(c).is_ok()).collect())
                .collect();
            (lists, VisibilitySource::ListedZBuffer)
        }
        (None, Some(z)) => (
            zbuffer_lists(&scaled_cloud, &frames, &views, &rig, z)?,
            VisibilitySource::ZBuffer,
        ),
        (None, None) => (
            map_visibility_to_frames(&transfer_sparse_visibility(cloud, model), &pairing),
            VisibilitySource::SparseTransfer,
        ),
    };

    let points = fuse(
        &scaled_cloud,
        &lists,
        &frames,
        &views,
        &rig,
        &FuseOptions {
            interpolation: options.interpolation,
        },
    )?;
    Ok(FusionRun {
        points,
        pairing,
        scale,
        baseline_check,
        source,
        frames_used: frames.len(),
        frames_unmatched,
    })
}
