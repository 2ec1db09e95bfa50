//! Projection of dense points into thermal frames and per-point averaging.
//!
//! Thermal frames are keyed by the NVM index of the left RGB camera they
//! were captured with. The thermal pose of a frame is the calibrated
//! `thermal_from_left` applied after the metric left-camera pose.

mod image;
mod nearest;
mod zbuffer;

pub use self::image::{
    decode_pgm, decode_png, decode_thermal_image, encode_pgm, load_thermal_image, BitDepth,
    ImageError, ThermalImage,
};
pub use nearest::{transfer_sparse_visibility, KdTree};
pub use zbuffer::{zbuffer_visibility, zbuffer_visibility_points, ZBufferOptions};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project_unfolded, CameraIntrinsics, CameraView, Pixel, RigidTransform};
use crate::scale::StereoPairing;
use crate::sfm_io::{DenseCloud, FusedPoint};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FusionError {
    #[error("thermal frame {frame_id} has no camera view (model has {cameras} cameras)")]
    FrameOutOfRange { frame_id: usize, cameras: usize },
    #[error("two thermal frames are keyed to camera {0}")]
    DuplicateFrame(usize),
    #[error("visibility list count {got} does not match {expected} points")]
    VisibilityLength { got: usize, expected: usize },
    #[error("point {point} lists camera {camera}, model has {cameras} cameras")]
    VisibilityIndex {
        point: usize,
        camera: usize,
        cameras: usize,
    },
    #[error("thermal intrinsics are invalid")]
    InvalidIntrinsics,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThermalFrame {
    /// NVM index of the left RGB camera captured together with this frame.
    pub frame_id: usize,
    pub image: ThermalImage,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalRigMap {
    pub thermal_intrinsics: CameraIntrinsics,
    pub thermal_from_left: RigidTransform,
    /// Thermal sensor size in pixels.
    pub image_width: u32,
    pub image_height: u32,
}

/// The thermal camera view rigidly attached to `left_view`.
pub fn thermal_view(left_view: &CameraView, rig: &ThermalRigMap) -> CameraView {
    CameraView::new(
        rig.thermal_intrinsics,
        rig.thermal_from_left.compose(&left_view.world_to_camera),
        rig.image_width,
        rig.image_height,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

impl std::str::FromStr for Interpolation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bilinear" => Ok(Interpolation::Bilinear),
            "nearest" => Ok(Interpolation::Nearest),
            other => Err(format!("unknown interpolation `{other}`")),
        }
    }
}

fn in_domain(image: &ThermalImage, pixel: &Pixel) -> bool {
    pixel.u >= 0.0
        && pixel.v >= 0.0
        && pixel.u <= (image.width() - 1) as f64
        && pixel.v <= (image.height() - 1) as f64
}

/// Bilinear interpolation between the four surrounding pixel centers.
/// `None` outside `[0, w-1] × [0, h-1]`.
pub fn sample_bilinear(image: &ThermalImage, pixel: Pixel) -> Option<f64> {
    if !in_domain(image, &pixel) {
        return None;
    }
    let (w, h) = (image.width(), image.height());
    let u0 = (pixel.u.floor() as u32).min(w.saturating_sub(2));
    let v0 = (pixel.v.floor() as u32).min(h.saturating_sub(2));
    let u1 = (u0 + 1).min(w - 1);
    let v1 = (v0 + 1).min(h - 1);
    let fu = pixel.u - u0 as f64;
    let fv = pixel.v - v0 as f64;
    let p = |u, v| image.get(u, v) as f64;
    let top = p(u0, v0) + fu * (p(u1, v0) - p(u0, v0));
    let bottom = p(u0, v1) + fu * (p(u1, v1) - p(u0, v1));
    Some(top + fv * (bottom - top))
}

/// Value of the pixel whose center is nearest, ties rounding up.
pub fn sample_nearest(image: &ThermalImage, pixel: Pixel) -> Option<f64> {
    if !in_domain(image, &pixel) {
        return None;
    }
    let u = ((pixel.u + 0.5).floor() as u32).min(image.width() - 1);
    let v = ((pixel.v + 0.5).floor() as u32).min(image.height() - 1);
    Some(image.get(u, v) as f64)
}

pub fn sample(image: &ThermalImage, pixel: Pixel, interpolation: Interpolation) -> Option<f64> {
    match interpolation {
        Interpolation::Bilinear => sample_bilinear(image, pixel),
        Interpolation::Nearest => sample_nearest(image, pixel),
    }
}

/// Replaces right-camera indices by their paired left camera, then sorts and
/// deduplicates each list. Unpaired indices are kept as they are.
pub fn map_visibility_to_frames(visibility: &[Vec<usize>], pairing: &StereoPairing) -> Vec<Vec<usize>> {
    let left_of: BTreeMap<usize, usize> = pairing
        .pairs
        .iter()
        .flat_map(|&(l, r)| [(l, l), (r, l)])
        .collect();
    visibility
        .iter()
        .map(|list| {
            let mut mapped: Vec<usize> = list
                .iter()
                .map(|i| left_of.get(i).copied().unwrap_or(*i))
                .collect();
            mapped.sort_unstable();
            mapped.dedup();
            mapped
        })
        .collect()
}

/// Precomputed thermal views, indexed by camera index.
pub(crate) fn frame_views<'a>(
    frames: &'a [ThermalFrame],
    left_views: &[CameraView],
    rig: &ThermalRigMap,
) -> Result<Vec<Option<(CameraView, &'a ThermalImage)>>, FusionError> {
    if !rig.thermal_intrinsics.is_valid() {
        return Err(FusionError::InvalidIntrinsics);
    }
    let mut views = vec![None; left_views.len()];
    for frame in frames {
        let slot = views.get_mut(frame.frame_id).ok_or(FusionError::FrameOutOfRange {
            frame_id: frame.frame_id,
            cameras: left_views.len(),
        })?;
        if slot.is_some() {
            return Err(FusionError::DuplicateFrame(frame.frame_id));
        }
        let rig = ThermalRigMap {
            image_width: frame.image.width(),
            image_height: frame.image.height(),
            ..*rig
        };
        *slot = Some((thermal_view(&left_views[frame.frame_id], &rig), &frame.image));
    }
    Ok(views)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FuseOptions {
    pub interpolation: Interpolation,
}

/// Averages the thermal samples of every point over the frames listed in
/// `visibility`, visited in ascending camera index. Indices without a
/// thermal frame are ignored. `left_views[i]` is the metric view of camera
/// `i`; only views keyed by a frame are used.
pub fn fuse(
    cloud: &DenseCloud,
    visibility: &[Vec<usize>],
    frames: &[ThermalFrame],
    left_views: &[CameraView],
    rig: &ThermalRigMap,
    options: &FuseOptions,
) -> Result<Vec<FusedPoint>, FusionError> {
    if visibility.len() != cloud.points.len() {
        return Err(FusionError::VisibilityLength {
            got: visibility.len(),
            expected: cloud.points.len(),
        });
    }
    for (point, list) in visibility.iter().enumerate() {
        if let Some(&camera) = list.iter().find(|&&c| c >= left_views.len()) {
            return Err(FusionError::VisibilityIndex {
                point,
                camera,
                cameras: left_views.len(),
            });
        }
    }
    let views = frame_views(frames, left_views, rig)?;

    Ok(cloud
        .points
        .par_iter()
        .zip(visibility.par_iter())
        .map(|(point, list)| {
            let mut sorted = list.clone();
            sorted.sort_unstable();
            sorted.dedup();
            let mut sum = 0.0;
            let mut count = 0u32;
            for camera in sorted {
                let Some((view, image)) = &views[camera] else {
                    continue;
                };
                let Some(proj) = project_unfolded(view, &point.position) else {
                    continue;
                };
                if let Some(value) = sample(image, proj.pixel, options.interpolation) {
                    sum += value;
                    count += 1;
                }
            }
            let valid = count >= 1;
            FusedPoint {
                position: point.position,
                color: point.color,
                thermal: if valid { sum / count as f64 } else { 0.0 },
                thermal_valid: valid,
                sample_count: count,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{camera_center, UnitQuaternion, Vec3};
    use crate::sfm_io::DensePoint;
    use proptest::prelude::*;

    fn ramp(w: u32, h: u32) -> ThermalImage {
        ThermalImage::from_fn(w, h, |u, v| (2 * u + 3 * v + 100) as u16).unwrap()
    }

    fn rig() -> ThermalRigMap {
        ThermalRigMap {
            thermal_intrinsics: CameraIntrinsics::new(100.0, 100.0, 10.0, 8.0),
            thermal_from_left: RigidTransform::identity(),
            image_width: 21,
            image_height: 17,
        }
    }

    fn left_view(pose: RigidTransform) -> CameraView {
        CameraView::new(CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0), pose, 640, 480)
    }

    #[test]
    fn identity_rig_keeps_pose() {
        let pose = RigidTransform::new(
            UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3),
            Vec3::new(1.0, 2.0, 3.0),
        );
        let t = thermal_view(&left_view(pose), &rig());
        let (angle, dist) = t.world_to_camera.distance_to(&pose);
        assert!(angle < 1e-15 && dist < 1e-15);
        assert_eq!(t.intrinsics, rig().thermal_intrinsics);
        assert_eq!((t.image_width, t.image_height), (21, 17));
    }

    #[test]
    fn translated_rig_center() {
        let pose = RigidTransform::new(
            UnitQuaternion::from_euler_angles(0.4, 0.1, -0.7),
            Vec3::new(-1.0, 0.5, 2.0),
        );
        let mut r = rig();
        r.thermal_from_left = RigidTransform::from_translation(Vec3::new(0.05, 0.0, 0.0));
        let t = thermal_view(&left_view(pose), &r);
        let expected = camera_center(&left_view(pose))
            - (pose.rotation.inverse() * Vec3::new(0.05, 0.0, 0.0));
        assert!((camera_center(&t) - expected).norm() < 1e-12);

        let back = r.thermal_from_left.inverse().compose(&t.world_to_camera);
        let (angle, dist) = back.distance_to(&pose);
        assert!(angle < 1e-12 && dist < 1e-12);
    }

    #[test]
    fn bilinear_examples() {
        let img = ramp(10, 10);
        assert_eq!(sample_bilinear(&img, Pixel::new(3.0, 4.0)), Some(118.0));
        let two = ThermalImage::from_fn(2, 1, |u, _| if u == 0 { 100 } else { 110 }).unwrap();
        assert_eq!(sample_bilinear(&two, Pixel::new(0.5, 0.0)), Some(105.0));
        assert_eq!(sample_bilinear(&img, Pixel::new(-0.1, 5.0)), None);
        assert_eq!(sample_bilinear(&img, Pixel::new(9.0, 9.0)), Some(145.0));
        assert_eq!(sample_bilinear(&img, Pixel::new(9.0001, 1.0)), None);
        assert_eq!(sample_bilinear(&img, Pixel::new(f64::NAN, 1.0)), None);
        let single = ThermalImage::from_fn(1, 1, |_, _| 42).unwrap();
        assert_eq!(sample_bilinear(&single, Pixel::new(0.0, 0.0)), Some(42.0));
    }

    #[test]
    fn nearest_examples() {
        let img = ramp(10, 10);
        assert_eq!(sample_nearest(&img, Pixel::new(3.4, 4.6)), Some(121.0));
        assert_eq!(sample_nearest(&img, Pixel::new(-0.01, 0.0)), None);
    }

    fn one_point_scene(values: &[u16]) -> (DenseCloud, Vec<ThermalFrame>, Vec<CameraView>) {
        let cloud = DenseCloud {
            points: vec![DensePoint {
                position: Vec3::new(0.0, 0.0, 5.0),
                color: [1, 2, 3],
            }],
            visibility: None,
        };
        let frames = values
            .iter()
            .enumerate()
            .map(|(i, &v)| ThermalFrame {
                frame_id: 2 * i,
                image: ThermalImage::from_fn(21, 17, |_, _| v).unwrap(),
            })
            .collect();
        let views = (0..2 * values.len())
            .map(|_| left_view(RigidTransform::identity()))
            .collect();
        (cloud, frames, views)
    }

    #[test]
    fn mean_of_two_frames() {
        let (cloud, frames, views) = one_point_scene(&[100, 110]);
        let fused = fuse(&cloud, &[vec![0, 1, 2, 3]], &frames, &views, &rig(), &FuseOptions::default()).unwrap();
        assert_eq!(fused[0].thermal, 105.0);
        assert_eq!(fused[0].sample_count, 2);
        assert!(fused[0].thermal_valid);
        assert_eq!(fused[0].color, [1, 2, 3]);
    }

    #[test]
    fn outside_every_frame_is_invalid() {
        let (mut cloud, frames, views) = one_point_scene(&[100, 110]);
        cloud.points[0].position = Vec3::new(50.0, 0.0, 5.0);
        let fused = fuse(&cloud, &[vec![0, 2]], &frames, &views, &rig(), &FuseOptions::default()).unwrap();
        assert!(!fused[0].thermal_valid);
        assert_eq!(fused[0].sample_count, 0);
        assert_eq!(fused[0].thermal, 0.0);
        cloud.points[0].position = Vec3::new(0.0, 0.0, -5.0);
        let fused = fuse(&cloud, &[vec![0, 2]], &frames, &views, &rig(), &FuseOptions::default()).unwrap();
        assert!(!fused[0].thermal_valid);
    }

    #[test]
    fn input_validation() {
        let (cloud, frames, views) = one_point_scene(&[100]);
        let opts = FuseOptions::default();
        assert!(matches!(
            fuse(&cloud, &[], &frames, &views, &rig(), &opts),
            Err(FusionError::VisibilityLength { .. })
        ));
        assert!(matches!(
            fuse(&cloud, &[vec![7]], &frames, &views, &rig(), &opts),
            Err(FusionError::VisibilityIndex { camera: 7, .. })
        ));
        let mut dup = frames.clone();
        dup.push(frames[0].clone());
        assert!(matches!(
            fuse(&cloud, &[vec![0]], &dup, &views, &rig(), &opts),
            Err(FusionError::DuplicateFrame(0))
        ));
    }

    #[test]
    fn right_indices_map_to_left() {
        let pairing = StereoPairing { pairs: vec![(0, 1), (2, 3)] };
        let mapped = map_visibility_to_frames(&[vec![3, 1, 0], vec![5, 2]], &pairing);
        assert_eq!(mapped, vec![vec![0, 2], vec![2, 5]]);
    }

    fn random_scene(
        seed: u64,
        n: usize,
    ) -> (DenseCloud, Vec<Vec<usize>>, Vec<ThermalFrame>, Vec<CameraView>) {
        let mut rng = crate::synth::SplitMix64::new(seed);
        let points = (0..n)
            .map(|_| DensePoint {
                position: Vec3::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(3.0, 6.0)),
                color: [0, 0, 0],
            })
            .collect();
        let views: Vec<CameraView> = (0..4)
            .map(|i| {
                left_view(RigidTransform::new(
                    UnitQuaternion::from_euler_angles(0.0, 0.05 * i as f64, 0.0),
                    Vec3::new(0.1 * i as f64, 0.0, 0.0),
                ))
            })
            .collect();
        let frames = (0..4)
            .map(|i| ThermalFrame {
                frame_id: i,
                image: ThermalImage::from_fn(21, 17, |_, _| rng.uniform(0.0, 60000.0) as u16).unwrap(),
            })
            .collect();
        let vis = (0..n).map(|i| vec![(i * 7) % 4, 3, i % 3]).collect();
        (DenseCloud { points, visibility: None }, vis, frames, views)
    }

    proptest! {
        #[test]
        fn mean_within_sample_range_and_order_free(seed in any::<u64>(), shift in 1usize..50) {
            let (cloud, vis, frames, views) = random_scene(seed, 60);
            let mut r = rig();
            r.thermal_intrinsics = CameraIntrinsics::new(10.0, 10.0, 10.0, 8.0);
            let opts = FuseOptions::default();
            let fused = fuse(&cloud, &vis, &frames, &views, &r, &opts).unwrap();
            let fviews = frame_views(&frames, &views, &r).unwrap();
            for (i, f) in fused.iter().enumerate() {
                let samples: Vec<f64> = vis[i]
                    .iter()
                    .filter_map(|&c| {
                        let (view, image) = fviews[c].as_ref()?;
                        sample_bilinear(image, view.project(&cloud.points[i].position).ok()?.pixel)
                    })
                    .collect();
                prop_assert_eq!(f.sample_count as usize, {
                    let mut l = vis[i].clone();
                    l.sort_unstable();
                    l.dedup();
                    l.iter().filter(|&&c| {
                        let (view, image) = fviews[c].as_ref().unwrap();
                        view.project(&cloud.points[i].position).ok()
                            .and_then(|p| sample_bilinear(image, p.pixel)).is_some()
                    }).count()
                });
                if f.thermal_valid {
                    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(f.thermal >= lo - 1e-9 && f.thermal <= hi + 1e-9);
                } else {
                    prop_assert_eq!(f.sample_count, 0);
                }
            }

            // Rotating the point order permutes the output and nothing else.
            let n = cloud.points.len();
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let cloud2 = DenseCloud { points: perm.iter().map(|&i| cloud.points[i]).collect(), visibility: None };
            let vis2: Vec<Vec<usize>> = perm.iter().map(|&i| { let mut l = vis[i].clone(); l.reverse(); l }).collect();
            let fused2 = fuse(&cloud2, &vis2, &frames, &views, &r, &opts).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(fused2[k].thermal.to_bits(), fused[i].thermal.to_bits());
            }
        }

        #[test]
        fn single_frame_equals_direct_sampling(seed in any::<u64>()) {
            let (cloud, _, frames, views) = random_scene(seed, 40);
            let mut r = rig();
            r.thermal_intrinsics = CameraIntrinsics::new(10.0, 10.0, 10.0, 8.0);
            let vis = vec![vec![2]; cloud.points.len()];
            let fused = fuse(&cloud, &vis, &frames[2..3], &views, &r, &FuseOptions::default()).unwrap();
            let view = thermal_view(&views[2], &r);
            for (p, f) in cloud.points.iter().zip(&fused) {
                let direct = view.project(&p.position).ok().and_then(|q| sample_bilinear(&frames[2].image, q.pixel));
                prop_assert_eq!(direct, f.thermal_valid.then_some(f.thermal));
            }
        }
    }
}
