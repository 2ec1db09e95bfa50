//! Rigid and similarity transforms, and the pinhole camera with one radial
//! distortion coefficient.
//!
//! Conventions used throughout the crate:
//!
//! * Poses are stored world-to-camera: `X_cam = R * X_world + t`.
//!   Camera centers are derived (`C = -Rᵀ t`), never stored.
//! * Pixel coordinates have `u` to the right and `v` down, with the origin at
//!   the center of the top-left pixel.
//! * Distortion is applied to normalized coordinates:
//!   `m_d = m * (1 + k1 * |m|²)`.

use nalgebra::{Matrix3, Quaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type UnitQuaternion = nalgebra::UnitQuaternion<f64>;

/// Points with camera-frame depth at or below this value cannot be projected.
pub const EPS_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("point is at or behind the camera principal plane")]
    BehindCamera,
    #[error("undistortion did not converge (residual {residual:e})")]
    NoConvergence { residual: f64 },
}

/// Builds a unit quaternion from `(w, x, y, z)` components, normalizing.
///
/// Returns `None` for a zero or non-finite quaternion.
pub fn quaternion_from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Option<UnitQuaternion> {
    let q = Quaternion::new(w, x, y, z);
    let n = q.norm();
    if !n.is_finite() || n == 0.0 {
        return None;
    }
    Some(UnitQuaternion::new_unchecked(q / n))
}

/// Rotation from an axis-angle (Rodrigues) vector.
pub fn rotation_from_vector(v: Vec3) -> UnitQuaternion {
    UnitQuaternion::from_scaled_axis(v)
}

/// Skew-symmetric cross-product matrix `[v]×`.
pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// A proper rigid motion `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: UnitQuaternion,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: UnitQuaternion, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(UnitQuaternion::identity(), t)
    }

    pub fn from_rotation(r: UnitQuaternion) -> Self {
        Self::new(r, Vec3::zeros())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let mut rotation = self.rotation * other.rotation;
        rotation.renormalize();
        RigidTransform {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rotation = self.rotation.inverse();
        RigidTransform {
            rotation,
            translation: -(rotation * self.translation),
        }
    }

    /// Rotation angle and translation distance separating two transforms.
    pub fn distance_to(&self, other: &RigidTransform) -> (f64, f64) {
        (
            self.rotation.angle_to(&other.rotation),
            (self.translation - other.translation).norm(),
        )
    }
}

/// `a ∘ b`, i.e. `p -> a(b(p))`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

/// `p -> scale * R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: UnitQuaternion,
    pub translation: Vec3,
}

impl SimilarityTransform {
    /// Returns `None` unless `scale` is positive and finite.
    pub fn new(scale: f64, rotation: UnitQuaternion, translation: Vec3) -> Option<Self> {
        (scale.is_finite() && scale > 0.0).then_some(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_scale(scale: f64) -> Option<Self> {
        Self::new(scale, UnitQuaternion::identity(), Vec3::zeros())
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation * p) + self.translation
    }

    /// Re-expresses a world-to-camera pose in the frame produced by `self`.
    ///
    /// If `pose` maps `X` to camera coordinates `Xc`, the returned pose maps
    /// `self.apply(X)` to `scale * Xc`. Pixels are unchanged because the
    /// projection is invariant to a uniform scaling of camera coordinates.
    pub fn transform_pose(&self, pose: &RigidTransform) -> RigidTransform {
        let mut rotation = pose.rotation * self.rotation.inverse();
        rotation.renormalize();
        RigidTransform {
            rotation,
            translation: self.scale * pose.translation - rotation * self.translation,
        }
    }
}

pub fn apply_similarity(s: &SimilarityTransform, p: &Vec3) -> Vec3 {
    s.apply(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub skew: f64,
    #[serde(default)]
    pub k1: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            skew: 0.0,
            k1: 0.0,
        }
    }

    pub fn with_k1(mut self, k1: f64) -> Self {
        self.k1 = k1;
        self
    }

    pub fn is_valid(&self) -> bool {
        [self.fx, self.fy, self.cx, self.cy, self.skew, self.k1]
            .iter()
            .all(|v| v.is_finite())
            && self.fx > 0.0
            && self.fy > 0.0
    }

    /// The calibration matrix `K` (distortion excluded).
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0,
        )
    }

    pub fn distort(&self, m: (f64, f64)) -> (f64, f64) {
        let factor = 1.0 + self.k1 * (m.0 * m.0 + m.1 * m.1);
        (m.0 * factor, m.1 * factor)
    }

    /// True where the radial map `r -> r(1 + k1 r²)` is still increasing, so
    /// the distorted position is not folded back toward the center.
    pub fn distortion_is_monotonic(&self, m: (f64, f64)) -> bool {
        1.0 + 3.0 * self.k1 * (m.0 * m.0 + m.1 * m.1) > 0.0
    }

    /// Distorted normalized coordinates to pixels.
    pub fn to_pixel(&self, md: (f64, f64)) -> Pixel {
        Pixel {
            u: self.fx * md.0 + self.skew * md.1 + self.cx,
            v: self.fy * md.1 + self.cy,
        }
    }

    /// Pixels to distorted normalized coordinates.
    pub fn from_pixel(&self, px: Pixel) -> (f64, f64) {
        let y = (px.v - self.cy) / self.fy;
        let x = (px.u - self.cx - self.skew * y) / self.fx;
        (x, y)
    }

    /// Inverts the radial distortion by fixed-point iteration.
    pub fn undistort(&self, md: (f64, f64)) -> Result<(f64, f64), GeometryError> {
        let mut m = md;
        for iter in 0..100 {
            let factor = 1.0 + self.k1 * (m.0 * m.0 + m.1 * m.1);
            let next = (md.0 / factor, md.1 / factor);
            let change = (next.0 - m.0).hypot(next.1 - m.1);
            m = next;
            if iter + 1 >= 20 && change < 1e-12 {
                break;
            }
        }
        let back = self.distort(m);
        let residual = (back.0 - md.0).hypot(back.1 - md.1);
        if !residual.is_finite() || residual > 1e-6 {
            return Err(GeometryError::NoConvergence { residual });
        }
        Ok(m)
    }
}

pub fn undistort(
    intr: &CameraIntrinsics,
    distorted_normalized: (f64, f64),
) -> Result<(f64, f64), GeometryError> {
    intr.undistort(distorted_normalized)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Pixel,
    /// Camera-frame Z in meters.
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraView {
    pub intrinsics: CameraIntrinsics,
    pub world_to_camera: RigidTransform,
    pub image_width: u32,
    pub image_height: u32,
}

impl CameraView {
    pub fn new(
        intrinsics: CameraIntrinsics,
        world_to_camera: RigidTransform,
        image_width: u32,
        image_height: u32,
    ) -> Self {
        Self {
            intrinsics,
            world_to_camera,
            image_width,
            image_height,
        }
    }

    pub fn center(&self) -> Vec3 {
        camera_center_of(&self.world_to_camera)
    }

    pub fn project(&self, p_world: &Vec3) -> Result<Projection, GeometryError> {
        let pc = self.world_to_camera.transform_point(p_world);
        project_camera_point(&self.intrinsics, &pc)
    }

    /// True when `pixel` lies within `[0, w-1] × [0, h-1]`.
    pub fn contains(&self, pixel: &Pixel) -> bool {
        pixel.u >= 0.0
            && pixel.v >= 0.0
            && pixel.u <= (self.image_width as f64 - 1.0)
            && pixel.v <= (self.image_height as f64 - 1.0)
    }
}

/// Center of a camera whose world-to-camera pose is `pose`.
pub fn camera_center_of(pose: &RigidTransform) -> Vec3 {
    -(pose.rotation.inverse() * pose.translation)
}

pub fn camera_center(view: &CameraView) -> Vec3 {
    view.center()
}

/// Projects a point already expressed in the camera frame.
pub fn project_camera_point(
    intr: &CameraIntrinsics,
    pc: &Vec3,
) -> Result<Projection, GeometryError> {
    if !(pc.z > EPS_DEPTH) {
        return Err(GeometryError::BehindCamera);
    }
    let m = (pc.x / pc.z, pc.y / pc.z);
    Ok(Projection {
        pixel: intr.to_pixel(intr.distort(m)),
        depth: pc.z,
    })
}

/// Like [`CameraView::project`], but also rejects points beyond the fold of
/// the radial distortion, which would otherwise land inside the image.
pub fn project_unfolded(view: &CameraView, p_world: &Vec3) -> Option<Projection> {
    let pc = view.world_to_camera.transform_point(p_world);
    let proj = project_camera_point(&view.intrinsics, &pc).ok()?;
    view.intrinsics
        .distortion_is_monotonic((pc.x / pc.z, pc.y / pc.z))
        .then_some(proj)
}

pub fn project(view: &CameraView, p_world: &Vec3) -> Result<Projection, GeometryError> {
    view.project(p_world)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0)
    }

    fn view(intr: CameraIntrinsics, pose: RigidTransform) -> CameraView {
        CameraView::new(intr, pose, 640, 480)
    }

    fn rot_z(angle: f64) -> UnitQuaternion {
        UnitQuaternion::from_axis_angle(&Vec3::z_axis(), angle)
    }

    fn arb_vec(range: f64) -> impl Strategy<Value = Vec3> {
        (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    fn arb_rotation() -> impl Strategy<Value = UnitQuaternion> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter_map("near-zero quaternion", |(w, x, y, z)| {
                let n = (w * w + x * x + y * y + z * z).sqrt();
                (n > 0.1).then(|| quaternion_from_wxyz(w, x, y, z).unwrap())
            })
    }

    fn arb_rigid() -> impl Strategy<Value = RigidTransform> {
        (arb_rotation(), arb_vec(10.0)).prop_map(|(r, t)| RigidTransform::new(r, t))
    }

    fn assert_close(a: &RigidTransform, b: &RigidTransform, tol: f64) {
        let (angle, dist) = a.distance_to(b);
        assert!(angle < tol && dist < tol, "angle {angle:e} dist {dist:e}");
    }

    #[test]
    fn compose_with_identity() {
        let t = RigidTransform::new(rot_z(0.3), Vec3::new(1.0, -2.0, 0.5));
        assert_close(&compose(&RigidTransform::identity(), &t), &t, 1e-15);
        assert_close(&compose(&t, &invert(&t)), &RigidTransform::identity(), 1e-9);
    }

    #[test]
    fn two_quarter_turns() {
        let r = RigidTransform::from_rotation(rot_z(FRAC_PI_2));
        let p = compose(&r, &r).transform_point(&Vec3::x());
        assert!((p - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn invert_examples() {
        assert_eq!(invert(&RigidTransform::identity()), RigidTransform::identity());
        let t = invert(&RigidTransform::from_translation(Vec3::new(1.0, 2.0, 3.0)));
        assert_eq!(t.translation, Vec3::new(-1.0, -2.0, -3.0));
    }

    #[test]
    fn similarity_examples() {
        let s = SimilarityTransform::from_scale(2.0).unwrap();
        assert_eq!(apply_similarity(&s, &Vec3::new(1.0, 1.0, 1.0)), Vec3::new(2.0, 2.0, 2.0));
        let s = SimilarityTransform::new(1.0, UnitQuaternion::identity(), Vec3::x()).unwrap();
        assert_eq!(apply_similarity(&s, &Vec3::zeros()), Vec3::x());
        assert!(SimilarityTransform::from_scale(0.0).is_none());
        assert!(SimilarityTransform::from_scale(f64::NAN).is_none());
    }

    #[test]
    fn camera_center_examples() {
        let v = view(cam(), RigidTransform::identity());
        assert_eq!(camera_center(&v), Vec3::zeros());
        let v = view(cam(), RigidTransform::from_translation(Vec3::new(0.0, 0.0, -5.0)));
        assert_eq!(camera_center(&v), Vec3::new(0.0, 0.0, 5.0));
    }

    #[test]
    fn project_examples() {
        let v = view(cam(), RigidTransform::identity());
        let p = project(&v, &Vec3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!((p.pixel.u, p.pixel.v, p.depth), (320.0, 240.0, 2.0));
        let p = project(&v, &Vec3::new(1.0, 0.0, 2.0)).unwrap();
        assert_eq!((p.pixel.u, p.pixel.v, p.depth), (570.0, 240.0, 2.0));

        // m = (0.5, 0), factor 1 + 0.1 * 0.25 = 1.025, u = 500 * 0.5125 + 320.
        let v = view(cam().with_k1(0.1), RigidTransform::identity());
        let p = project(&v, &Vec3::new(1.0, 0.0, 2.0)).unwrap();
        assert!((p.pixel.u - 576.25).abs() < 1e-12);
        assert_eq!(p.pixel.v, 240.0);
    }

    #[test]
    fn project_behind_camera() {
        let v = view(cam(), RigidTransform::identity());
        for p in [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, EPS_DEPTH),
            Vec3::new(1.0, 0.0, -3.0),
        ] {
            assert_eq!(project(&v, &p), Err(GeometryError::BehindCamera));
        }
    }

    #[test]
    fn undistort_examples() {
        let m = undistort(&cam(), (0.3, -0.2)).unwrap();
        assert_eq!(m, (0.3, -0.2));
        let m = undistort(&cam().with_k1(0.1), (0.5125, 0.0)).unwrap();
        assert!((m.0 - 0.5).abs() < 1e-9 && m.1.abs() < 1e-15);
    }

    #[test]
    fn undistort_divergence_is_reported() {
        // Beyond the fold of strong barrel distortion there is no inverse.
        let intr = cam().with_k1(-1.0);
        assert!(matches!(
            undistort(&intr, (2.0, 0.0)),
            Err(GeometryError::NoConvergence { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn double_inverse_is_identity(t in arb_rigid()) {
            let back = invert(&invert(&t));
            let (angle, dist) = back.distance_to(&t);
            prop_assert!(angle < 1e-12 && dist < 1e-12);
        }

        #[test]
        fn inverse_undoes_transform(t in arb_rigid(), p in arb_vec(100.0)) {
            let q = invert(&t).transform_point(&t.transform_point(&p));
            prop_assert!((q - p).norm() < 1e-9);
        }

        #[test]
        fn compose_is_associative(a in arb_rigid(), b in arb_rigid(), c in arb_rigid()) {
            let l = compose(&compose(&a, &b), &c);
            let r = compose(&a, &compose(&b, &c));
            let (angle, dist) = l.distance_to(&r);
            prop_assert!(angle < 1e-12 && dist < 1e-12);
            prop_assert!((l.rotation.into_inner().norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn similarity_scales_distances(
            s in 0.01..100.0f64, r in arb_rotation(), t in arb_vec(10.0),
            p in arb_vec(10.0), q in arb_vec(10.0),
        ) {
            let sim = SimilarityTransform::new(s, r, t).unwrap();
            let d = (sim.apply(&p) - sim.apply(&q)).norm();
            let expected = s * (p - q).norm();
            prop_assert!((d - expected).abs() <= 1e-12 * expected.max(1.0));
        }

        #[test]
        fn center_maps_to_camera_origin(t in arb_rigid()) {
            let c = camera_center_of(&t);
            prop_assert!(t.transform_point(&c).norm() < 1e-9);
        }

        #[test]
        fn depth_is_camera_z(t in arb_rigid(), p in arb_vec(20.0)) {
            let v = view(cam(), t);
            if let Ok(proj) = v.project(&p) {
                // Distance times cosine to the optical axis.
                let axis = t.rotation.inverse() * Vec3::z();
                let expected = (p - v.center()).dot(&axis);
                prop_assert!((proj.depth - expected).abs() < 1e-9);
            }
        }

        #[test]
        fn undistort_round_trip(
            k1 in -0.3..0.3f64, r in 0.0..0.99f64, angle in 0.0..std::f64::consts::TAU,
        ) {
            let intr = cam().with_k1(k1);
            let m = (r * angle.cos(), r * angle.sin());
            let md = intr.distort(m);
            let back = intr.distort(intr.undistort(md).unwrap());
            prop_assert!((back.0 - md.0).abs() < 1e-9 && (back.1 - md.1).abs() < 1e-9);
        }

        #[test]
        fn projection_is_gauge_invariant(
            pose in arb_rigid(), s in 0.05..20.0f64, gr in arb_rotation(),
            gt in arb_vec(10.0), p in arb_vec(5.0), k1 in -0.2..0.2f64,
        ) {
            let g = SimilarityTransform::new(s, gr, gt).unwrap();
            let v = view(cam().with_k1(k1), pose);
            let vg = view(cam().with_k1(k1), g.transform_pose(&pose));
            prop_assert!((vg.center() - g.apply(&v.center())).norm() < 1e-9 * (1.0 + s * 20.0));
            let z = pose.transform_point(&p).z;
            if z > 0.1 {
                let a = v.project(&p).unwrap();
                let b = vg.project(&g.apply(&p)).unwrap();
                if a.pixel.u.abs() < 1e4 && a.pixel.v.abs() < 1e4 {
                    prop_assert!(a.pixel.distance(&b.pixel) < 1e-9);
                }
                prop_assert!((b.depth - s * a.depth).abs() < 1e-9 * s * a.depth);
            } else if z <= 0.0 {
                prop_assert!(vg.project(&g.apply(&p)).is_err());
            }
        }
    }
}
