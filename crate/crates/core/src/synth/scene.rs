//! Synthetic capture: planar surfaces, a stereo trajectory, dense and sparse
//! points with exact visibility, and rendered thermal frames.

use serde::{Deserialize, Serialize};

use super::{CalibrationScene, RigSpec, SplitMix64, SynthError};
use crate::calibration::CameraId;
use crate::fusion::{ThermalFrame, ThermalImage};
use crate::geometry::{
    project_unfolded, CameraView, Pixel, RigidTransform, SimilarityTransform, UnitQuaternion, Vec3,
};
use crate::sfm_io::{
    DenseCloud, DensePoint, Measurement, NvmCamera, NvmModel, NvmPoint, PatchRecord,
};

/// Rectangle `origin + s·edge_u + t·edge_v`, `s, t ∈ [0, 1]`, with
/// perpendicular edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub origin: Vec3,
    pub edge_u: Vec3,
    pub edge_v: Vec3,
    pub color: [u8; 3],
}

impl Quad {
    pub fn point(&self, s: f64, t: f64) -> Vec3 {
        self.origin + self.edge_u * s + self.edge_v * t
    }

    pub fn area(&self) -> f64 {
        self.edge_u.cross(&self.edge_v).norm()
    }

    pub fn unit_normal(&self) -> Vec3 {
        self.edge_u.cross(&self.edge_v).normalize()
    }

    fn is_valid(&self) -> bool {
        let (lu, lv) = (self.edge_u.norm(), self.edge_v.norm());
        lu > 0.0
            && lv > 0.0
            && lu.is_finite()
            && lv.is_finite()
            && self.origin.iter().all(|v| v.is_finite())
            && self.edge_u.dot(&self.edge_v).abs() <= 1e-12 * lu * lv
    }

    /// Ray parameter `λ` where `origin + λ·dir` meets the rectangle.
    pub fn intersect(&self, ray_origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let n = self.edge_u.cross(&self.edge_v);
        let denom = n.dot(dir);
        if denom.abs() < 1e-15 * n.norm() * dir.norm() {
            return None;
        }
        let lambda = n.dot(&(self.origin - ray_origin)) / denom;
        let q = ray_origin + dir * lambda - self.origin;
        let s = q.dot(&self.edge_u) / self.edge_u.norm_squared();
        let t = q.dot(&self.edge_v) / self.edge_v.norm_squared();
        ((0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&t)).then_some(lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ThermalField {
    /// `a·u + b·v + c` at pixel `(u, v)` of every thermal frame. Integer
    /// coefficients make the 16-bit rendering exact.
    Linear { a: f64, b: f64, c: f64 },
    /// `background + amplitude·exp(-|X - center|² / 2σ²)` at the surface
    /// point seen by each pixel; `background` where no surface is hit.
    Gaussian {
        center: [f64; 3],
        sigma: f64,
        amplitude: f64,
        background: f64,
    },
}

impl ThermalField {
    pub fn at_pixel(&self, u: f64, v: f64) -> Option<f64> {
        match *self {
            ThermalField::Linear { a, b, c } => Some(a * u + b * v + c),
            ThermalField::Gaussian { .. } => None,
        }
    }

    pub fn at_world(&self, x: &Vec3) -> Option<f64> {
        match *self {
            ThermalField::Gaussian {
                center,
                sigma,
                amplitude,
                background,
            } => {
                let d2 = (x - Vec3::from(center)).norm_squared();
                Some(background + amplitude * (-d2 / (2.0 * sigma * sigma)).exp())
            }
            ThermalField::Linear { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_frames: usize,
    /// Dense points.
    pub n_points: usize,
    /// Sparse SfM points.
    pub n_sparse: usize,
    pub rig: RigSpec,
    /// Stereo baseline in meters; overrides the rig's.
    pub baseline: f64,
    /// Model units per meter in the exported reconstruction.
    pub model_scale: f64,
    pub model_rotation: UnitQuaternion,
    pub model_translation: Vec3,
    pub thermal_field: ThermalField,
    /// Corner and sparse-measurement noise sigma, pixels.
    pub noise_px: f64,
    pub calibration_views: usize,
    pub surfaces: Vec<Quad>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            n_frames: 20,
            n_points: 5000,
            n_sparse: 400,
            rig: RigSpec::default(),
            baseline: 0.12,
            model_scale: 0.37,
            model_rotation: UnitQuaternion::from_euler_angles(0.3, -0.2, 0.5),
            model_translation: Vec3::new(1.5, -0.7, 2.0),
            thermal_field: ThermalField::Linear {
                a: 2.0,
                b: 3.0,
                c: 1000.0,
            },
            noise_px: 0.0,
            calibration_views: 10,
            surfaces: SceneSpec::two_planes(),
        }
    }
}

impl SceneSpec {
    /// A 5×3 m back wall 4 m out and a 1×1.2 m panel 1.2 m in front of it.
    pub fn two_planes() -> Vec<Quad> {
        vec![
            Quad {
                origin: Vec3::new(-2.5, -1.5, 4.0),
                edge_u: Vec3::new(5.0, 0.0, 0.0),
                edge_v: Vec3::new(0.0, 3.0, 0.0),
                color: [150, 150, 140],
            },
            Quad {
                origin: Vec3::new(-0.5, -0.6, 2.8),
                edge_u: Vec3::new(1.0, 0.0, 0.0),
                edge_v: Vec3::new(0.0, 1.2, 0.0),
                color: [180, 60, 50],
            },
        ]
    }

    /// Gaussian hot spot centered on the front panel of [`Self::two_planes`].
    pub fn hot_spot() -> ThermalField {
        ThermalField::Gaussian {
            center: [0.0, 0.0, 2.8],
            sigma: 0.2,
            amplitude: 9000.0,
            background: 3000.0,
        }
    }

    pub fn gauge(&self) -> SimilarityTransform {
        SimilarityTransform::new(self.model_scale, self.model_rotation, self.model_translation)
            .expect("validated model scale")
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_frames == 0 {
            return bad("n_frames must be at least 1".into());
        }
        if self.n_points == 0 {
            return bad("n_points must be at least 1".into());
        }
        if !(self.baseline > 0.0 && self.baseline.is_finite()) {
            return bad(format!("baseline must be positive, got {}", self.baseline));
        }
        if !(self.model_scale > 0.0 && self.model_scale.is_finite()) {
            return bad(format!("model_scale must be positive, got {}", self.model_scale));
        }
        if !self.model_translation.iter().all(|v| v.is_finite()) {
            return bad("model translation must be finite".into());
        }
        if !(self.noise_px >= 0.0 && self.noise_px.is_finite()) {
            return bad(format!("noise must be non-negative, got {}", self.noise_px));
        }
        if self.calibration_views < 3 {
            return bad("at least 3 calibration views are needed".into());
        }
        if self.surfaces.is_empty() || !self.surfaces.iter().all(Quad::is_valid) {
            return bad("surfaces must be non-degenerate rectangles".into());
        }
        self.rig.validate()?;
        let thermal = self.rig.cameras.thermal;
        match self.thermal_field {
            ThermalField::Linear { a, b, c } => {
                if ![a, b, c].iter().all(|v| v.fract() == 0.0 && v.is_finite()) {
                    return bad("linear field coefficients must be integers".into());
                }
                let (w, h) = ((thermal.width - 1) as f64, (thermal.height - 1) as f64);
                let corners = [c, a * w + c, b * h + c, a * w + b * h + c];
                if corners.iter().any(|v| !(0.0..=65535.0).contains(v)) {
                    return bad("linear field leaves the 16-bit range".into());
                }
            }
            ThermalField::Gaussian {
                center,
                sigma,
                amplitude,
                background,
            } => {
                if !(sigma > 0.0)
                    || !center.iter().all(|v| v.is_finite())
                    || !(0.0..=65535.0).contains(&background)
                    || !(0.0..=65535.0 - background).contains(&amplitude)
                {
                    return bad("gaussian field parameters out of range".into());
                }
            }
        }
        Ok(())
    }
}

/// World-to-camera pose at `center` looking at `target`, image `y` toward
/// world `+y`.
pub fn look_at(center: Vec3, target: Vec3) -> RigidTransform {
    let z = (target - center).normalize();
    let x = Vec3::y().cross(&z).normalize();
    let y = z.cross(&x);
    let r = nalgebra::Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let rotation = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(r));
    RigidTransform::new(rotation, -(rotation * center))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthPoint {
    /// Meters, true world frame.
    pub position: Vec3,
    pub color: [u8; 3],
    pub normal: Vec3,
    /// NVM camera indices with an unoccluded in-image view.
    pub visible: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseTruth {
    pub position: Vec3,
    pub color: [u8; 3],
    /// Pixel offsets from the principal point, per visible camera.
    pub measurements: Vec<Measurement>,
}

/// Everything generated for one scene. Camera index `2f` is the left camera
/// of frame `f` and `2f + 1` the right one.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub spec: SceneSpec,
    /// Rig with the scene's baseline applied.
    pub rig: RigSpec,
    pub left_poses: Vec<RigidTransform>,
    pub dense: Vec<TruthPoint>,
    pub sparse: Vec<SparseTruth>,
    pub thermal_images: Vec<ThermalImage>,
    pub calibration: CalibrationScene,
}

fn occluded(surfaces: &[Quad], own: Option<usize>, from: &Vec3, to: &Vec3) -> bool {
    let dir = to - from;
    surfaces.iter().enumerate().any(|(k, q)| {
        Some(k) != own
            && q
                .intersect(from, &dir)
                .is_some_and(|lambda| lambda > 1e-9 && lambda < 1.0 - 1e-9)
    })
}

impl SceneBundle {
    pub fn n_cameras(&self) -> usize {
        2 * self.left_poses.len()
    }

    /// Metric views of every NVM camera in the true world frame.
    pub fn camera_views(&self) -> Vec<CameraView> {
        self.left_poses
            .iter()
            .flat_map(|pose| {
                [
                    self.rig.view(CameraId::Left, pose),
                    self.rig.view(CameraId::Right, pose),
                ]
            })
            .collect()
    }

    pub fn thermal_views(&self) -> Vec<CameraView> {
        self.left_poses
            .iter()
            .map(|pose| self.rig.view(CameraId::Thermal, pose))
            .collect()
    }

    pub fn image_name(camera_index: usize) -> String {
        let side = if camera_index % 2 == 0 { 'L' } else { 'R' };
        format!("{side}_{:03}.jpg", camera_index / 2)
    }

    pub fn thermal_name(frame: usize) -> String {
        format!("T_{frame:03}.pgm")
    }

    /// The reconstruction as the SfM tool would report it, in the scene's
    /// similarity gauge.
    pub fn nvm_model(&self) -> NvmModel {
        let gauge = self.spec.gauge();
        let cameras = self
            .camera_views()
            .iter()
            .enumerate()
            .map(|(i, view)| {
                let pose = gauge.transform_pose(&view.world_to_camera);
                NvmCamera {
                    image_name: Self::image_name(i),
                    focal: view.intrinsics.fx,
                    rotation: pose.rotation,
                    center: gauge.apply(&view.center()),
                    radial: view.intrinsics.k1,
                }
            })
            .collect();
        let points = self
            .sparse
            .iter()
            .map(|p| NvmPoint {
                position: gauge.apply(&p.position),
                color: p.color,
                measurements: p.measurements.clone(),
            })
            .collect();
        NvmModel { cameras, points }
    }

    /// Dense cloud in the gauge, with ground-truth visibility attached.
    pub fn dense_cloud(&self) -> DenseCloud {
        let gauge = self.spec.gauge();
        DenseCloud {
            points: self
                .dense
                .iter()
                .map(|p| DensePoint {
                    position: gauge.apply(&p.position),
                    color: p.color,
                })
                .collect(),
            visibility: Some(self.dense.iter().map(|p| p.visible.clone()).collect()),
        }
    }

    pub fn dense_normals(&self) -> Vec<Vec3> {
        self.dense.iter().map(|p| self.spec.model_rotation * p.normal).collect()
    }

    pub fn patches(&self) -> Vec<PatchRecord> {
        let gauge = self.spec.gauge();
        self.dense
            .iter()
            .map(|p| PatchRecord {
                position: gauge.apply(&p.position),
                normal: self.spec.model_rotation * p.normal,
                scores: [1.0, 0.0, 0.0],
                visible: p.visible.clone(),
                maybe: Vec::new(),
            })
            .collect()
    }

    /// Frames keyed by their left camera index.
    pub fn thermal_frames(&self) -> Vec<ThermalFrame> {
        self.thermal_images
            .iter()
            .enumerate()
            .map(|(f, image)| ThermalFrame {
                frame_id: 2 * f,
                image: image.clone(),
            })
            .collect()
    }

    /// Whether `point` on surface `own` is seen unoccluded inside `view`.
    fn sees(&self, view: &CameraView, point: &Vec3, own: usize) -> bool {
        project_unfolded(view, point).is_some_and(|p| view.contains(&p.pixel))
            && !occluded(&self.spec.surfaces, Some(own), &view.center(), point)
    }

    /// Nearest surface hit along the ray through thermal pixel `(u, v)`.
    fn surface_point(&self, view: &CameraView, u: f64, v: f64) -> Option<Vec3> {
        let m = view
            .intrinsics
            .undistort(view.intrinsics.from_pixel(Pixel::new(u, v)))
            .ok()?;
        let inv = view.world_to_camera.inverse();
        let origin = view.center();
        let dir = inv.rotation * Vec3::new(m.0, m.1, 1.0);
        self.spec
            .surfaces
            .iter()
            .filter_map(|q| q.intersect(&origin, &dir))
            .filter(|&l| l > 0.0)
            .min_by(f64::total_cmp)
            .map(|l| origin + dir * l)
    }
}

fn render_thermal(bundle: &SceneBundle, view: &CameraView) -> ThermalImage {
    let field = bundle.spec.thermal_field;
    ThermalImage::from_fn(view.image_width, view.image_height, |u, v| {
        let value = match field {
            ThermalField::Linear { .. } => field.at_pixel(u as f64, v as f64),
            ThermalField::Gaussian { background, .. } => Some(
                bundle
                    .surface_point(view, u as f64, v as f64)
                    .and_then(|x| field.at_world(&x))
                    .unwrap_or(background),
            ),
        }
        .expect("field defined");
        value.round().clamp(0.0, 65535.0) as u16
    })
    .expect("thermal camera has positive size")
}

fn jitter_color(rng: &mut SplitMix64, base: [u8; 3]) -> [u8; 3] {
    base.map(|c| (c as f64 + rng.uniform(-20.0, 20.0)).round().clamp(0.0, 255.0) as u8)
}

/// Samples a surface point uniformly by area.
fn sample_surface(rng: &mut SplitMix64, surfaces: &[Quad], total_area: f64) -> (usize, Vec3) {
    let mut pick = rng.uniform(0.0, total_area);
    let mut k = surfaces.len() - 1;
    for (i, q) in surfaces.iter().enumerate() {
        if pick < q.area() {
            k = i;
            break;
        }
        pick -= q.area();
    }
    let (s, t) = (rng.next_f64(), rng.next_f64());
    (k, surfaces[k].point(s, t))
}

/// Builds the ground-truth bundle. Frames orbit the scene center on a
/// horizontal arc facing it; every dense and sparse point is seen by at
/// least one RGB camera.
pub fn generate_scene(spec: &SceneSpec) -> Result<SceneBundle, SynthError> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let rig = spec.rig.with_baseline(spec.baseline);

    let target = Vec3::new(0.0, 0.0, 3.6);
    let radius = 3.4;
    let left_poses: Vec<RigidTransform> = (0..spec.n_frames)
        .map(|f| {
            let theta = if spec.n_frames == 1 {
                0.0
            } else {
                0.35 * (2.0 * f as f64 / (spec.n_frames - 1) as f64 - 1.0)
            };
            let center = target
                + Vec3::new(radius * theta.sin(), 0.1 * (f as f64).sin(), -radius * theta.cos())
                + Vec3::new(rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02));
            let aim = target + Vec3::new(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), 0.0);
            // Left camera sits half a baseline left of the rig center.
            let pose = look_at(center, aim);
            let offset = pose.rotation.inverse() * Vec3::new(-0.5 * rig.baseline(), 0.0, 0.0);
            RigidTransform::new(pose.rotation, -(pose.rotation * (center + offset)))
        })
        .collect();

    let mut bundle = SceneBundle {
        spec: spec.clone(),
        rig,
        left_poses,
        dense: Vec::new(),
        sparse: Vec::new(),
        thermal_images: Vec::new(),
        calibration: CalibrationScene::try_generate(
            &rig,
            spec.calibration_views,
            spec.noise_px,
            spec.seed ^ 0xCA11_B0A2_D000_0000,
        )?,
    };
    let views = bundle.camera_views();
    let total_area: f64 = spec.surfaces.iter().map(Quad::area).sum();

    let visible_from = |bundle: &SceneBundle, p: &Vec3, own: usize| -> Vec<usize> {
        views
            .iter()
            .enumerate()
            .filter(|(_, v)| bundle.sees(v, p, own))
            .map(|(i, _)| i)
            .collect()
    };

    let mut attempts = 0usize;
    while bundle.dense.len() < spec.n_points {
        attempts += 1;
        if attempts > 200 * spec.n_points + 10_000 {
            return Err(SynthError::SamplingFailed("too few dense points are visible".into()));
        }
        let (k, position) = sample_surface(&mut rng, &spec.surfaces, total_area);
        let color = jitter_color(&mut rng, spec.surfaces[k].color);
        let visible = visible_from(&bundle, &position, k);
        if visible.is_empty() {
            continue;
        }
        let mut normal = spec.surfaces[k].unit_normal();
        if normal.dot(&(views[visible[0]].center() - position)) < 0.0 {
            normal = -normal;
        }
        bundle.dense.push(TruthPoint {
            position,
            color,
            normal,
            visible,
        });
    }

    let mut feature_counters = vec![0u64; views.len()];
    attempts = 0;
    while bundle.sparse.len() < spec.n_sparse {
        attempts += 1;
        if attempts > 200 * spec.n_sparse + 10_000 {
            return Err(SynthError::SamplingFailed("too few sparse points are visible".into()));
        }
        let (k, position) = sample_surface(&mut rng, &spec.surfaces, total_area);
        let color = jitter_color(&mut rng, spec.surfaces[k].color);
        let visible = visible_from(&bundle, &position, k);
        if visible.is_empty() {
            continue;
        }
        let measurements = visible
            .iter()
            .map(|&i| {
                let view = &views[i];
                let px = view.project(&position).expect("visible").pixel;
                let (nu, nv) = if spec.noise_px > 0.0 {
                    (spec.noise_px * rng.gaussian(), spec.noise_px * rng.gaussian())
                } else {
                    (0.0, 0.0)
                };
                let feature_index = feature_counters[i];
                feature_counters[i] += 1;
                Measurement {
                    camera_index: i,
                    feature_index,
                    x: px.u + nu - view.intrinsics.cx,
                    y: px.v + nv - view.intrinsics.cy,
                }
            })
            .collect();
        bundle.sparse.push(SparseTruth {
            position,
            color,
            measurements,
        });
    }

    bundle.thermal_images = bundle
        .thermal_views()
        .iter()
        .map(|view| render_thermal(&bundle, view))
        .collect();
    Ok(bundle)
}

/// Closed-form fused value of dense point `index` under a linear field: the
/// mean of `a·u + b·v + c` over its true thermal projections, one per frame
/// whose left or right camera sees it. `None` when no projection lands in a
/// thermal image or the field is not linear.
pub fn linear_field_oracle(bundle: &SceneBundle, index: usize) -> Option<(f64, u32)> {
    let field = bundle.spec.thermal_field;
    let point = &bundle.dense[index];
    let mut frames: Vec<usize> = point.visible.iter().map(|c| c / 2).collect();
    frames.dedup();
    let thermal = bundle.rig.cameras.thermal;
    let (w, h) = ((thermal.width - 1) as f64, (thermal.height - 1) as f64);
    let mut sum = 0.0;
    let mut count = 0;
    for f in frames {
        let view = bundle.rig.view(CameraId::Thermal, &bundle.left_poses[f]);
        let pc = view.world_to_camera.transform_point(&point.position);
        if pc.z <= crate::geometry::EPS_DEPTH {
            continue;
        }
        let m = (pc.x / pc.z, pc.y / pc.z);
        if !view.intrinsics.distortion_is_monotonic(m) {
            continue;
        }
        let k = view.intrinsics;
        let radial = 1.0 + k.k1 * (m.0 * m.0 + m.1 * m.1);
        let u = k.fx * m.0 * radial + k.skew * m.1 * radial + k.cx;
        let v = k.fy * m.1 * radial + k.cy;
        if (0.0..=w).contains(&u) && (0.0..=h).contains(&v) {
            sum += field.at_pixel(u, v)?;
            count += 1;
        }
    }
    (count > 0).then(|| (sum / count as f64, count))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SceneSpec {
        SceneSpec {
            n_frames: 4,
            n_points: 300,
            n_sparse: 50,
            calibration_views: 3,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn same_seed_same_bundle() {
        let a = generate_scene(&small_spec()).unwrap();
        let b = generate_scene(&small_spec()).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&SceneSpec { seed: 2, ..small_spec() }).unwrap();
        assert_ne!(a.dense, c.dense);
    }

    #[test]
    fn look_at_target_hits_principal_point() {
        let rig = RigSpec::default();
        let center = Vec3::new(0.3, -0.2, -1.0);
        let target = Vec3::new(0.0, 0.1, 3.0);
        let view = rig.cameras.left.view(look_at(center, target));
        let p = view.project(&target).unwrap().pixel;
        assert!((p.u - view.intrinsics.cx).abs() < 1e-9 && (p.v - view.intrinsics.cy).abs() < 1e-9);
        let spec = SceneSpec { n_frames: 1, n_points: 1, n_sparse: 1, calibration_views: 3, ..SceneSpec::default() };
        let bundle = generate_scene(&spec).unwrap();
        let view = bundle.camera_views()[0];
        let on_axis = view.center() + view.world_to_camera.rotation.inverse() * Vec3::new(0.0, 0.0, 2.0);
        let p = view.project(&on_axis).unwrap().pixel;
        assert!((p.u - view.intrinsics.cx).abs() < 1e-9 && (p.v - view.intrinsics.cy).abs() < 1e-9);
    }

    #[test]
    fn noiseless_measurements_reproject_exactly() {
        let bundle = generate_scene(&small_spec()).unwrap();
        let views = bundle.camera_views();
        for p in &bundle.sparse {
            assert!(!p.measurements.is_empty());
            for m in &p.measurements {
                let view = &views[m.camera_index];
                let px = view.project(&p.position).unwrap().pixel;
                assert!((px.u - view.intrinsics.cx - m.x).abs() < 1e-9);
                assert!((px.v - view.intrinsics.cy - m.y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn every_point_is_seen_and_baseline_applied() {
        let spec = SceneSpec { baseline: 0.2, ..small_spec() };
        let bundle = generate_scene(&spec).unwrap();
        assert!(bundle.dense.iter().all(|p| !p.visible.is_empty()));
        let views = bundle.camera_views();
        for f in 0..spec.n_frames {
            let b = (views[2 * f].center() - views[2 * f + 1].center()).norm();
            assert!((b - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn front_panel_occludes_wall() {
        let bundle = generate_scene(&small_spec()).unwrap();
        let views = bundle.camera_views();
        // A wall point straight behind the panel center, seen from frame 0.
        let c = views[0].center();
        let panel_center = Vec3::new(0.0, 0.0, 2.8);
        let dir = panel_center - c;
        let behind = c + dir * ((4.0 - c.z) / dir.z);
        assert!(!bundle.sees(&views[0], &behind, 0));
        assert!(bundle.sees(&views[0], &panel_center, 1));
    }

    #[test]
    fn exported_nvm_is_the_gauge_image() {
        let bundle = generate_scene(&small_spec()).unwrap();
        let model = bundle.nvm_model();
        let gauge = bundle.spec.gauge();
        let views = bundle.camera_views();
        for (cam, view) in model.cameras.iter().zip(&views) {
            let expected = gauge.transform_pose(&view.world_to_camera);
            let (angle, dist) = cam.world_to_camera().distance_to(&expected);
            assert!(angle < 1e-12 && dist < 1e-9);
        }
        let text = crate::sfm_io::write_nvm(&model);
        let back = crate::sfm_io::parse_nvm(&text).unwrap();
        for (a, b) in back.cameras.iter().zip(&model.cameras) {
            assert!((a.center - b.center).norm() < 1e-9);
            assert!(a.rotation.angle_to(&b.rotation) < 1e-9);
        }
        for (a, b) in back.points.iter().zip(&model.points) {
            assert!((a.position - b.position).norm() < 1e-9);
        }
    }

    #[test]
    fn validation() {
        for spec in [
            SceneSpec { n_frames: 0, ..small_spec() },
            SceneSpec { n_points: 0, ..small_spec() },
            SceneSpec { baseline: 0.0, ..small_spec() },
            SceneSpec { model_scale: -1.0, ..small_spec() },
            SceneSpec { thermal_field: ThermalField::Linear { a: 0.5, b: 0.0, c: 0.0 }, ..small_spec() },
            SceneSpec { thermal_field: ThermalField::Linear { a: 300.0, b: 0.0, c: 0.0 }, ..small_spec() },
        ] {
            assert!(matches!(generate_scene(&spec), Err(SynthError::InvalidSpec(_))));
        }
    }

    #[test]
    fn linear_rendering_is_exact() {
        let bundle = generate_scene(&small_spec()).unwrap();
        let img = &bundle.thermal_images[0];
        assert_eq!(img.get(0, 0), 1000);
        assert_eq!(img.get(319, 239), 2 * 319 + 3 * 239 + 1000);
    }

    #[test]
    fn gaussian_rendering_peaks_on_the_panel() {
        let spec = SceneSpec { thermal_field: SceneSpec::hot_spot(), n_frames: 3, ..small_spec() };
        let bundle = generate_scene(&spec).unwrap();
        let view = bundle.thermal_views()[1];
        let p = view.project(&Vec3::new(0.0, 0.0, 2.8)).unwrap().pixel;
        let img = &bundle.thermal_images[1];
        assert!(img.get(p.u.round() as u32, p.v.round() as u32) > 11_000);
        assert_eq!(img.get(0, 0), 3000);
    }
}
