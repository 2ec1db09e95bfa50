//! Planar-target calibration of the two RGB cameras and the thermal camera.
//!
//! The closed-form stage estimates one homography per (view, camera), the
//! distortion-free intrinsics of each camera from its homographies, and the
//! board pose of every view. Rig transforms are averaged from per-view
//! relative poses. [`refine_reprojection`] then minimizes the pixel residuals
//! of all corners jointly.
//!
//! The left RGB camera is the reference: every rig transform maps
//! left-camera coordinates into another camera's frame, and board poses are
//! stored board-to-left.

mod io;
mod refine;

pub use io::{read_corner_csv, write_corner_csv, CalibrationDocument, CornerCsvError, DocumentError};
pub use refine::{refine_reprojection, CalibrationProblem, CalibrationState, Refined};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix3, Matrix4, Rotation3, SymmetricEigen, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    CameraIntrinsics, GeometryError, Pixel, RigidTransform, UnitQuaternion, Vec3,
};
use crate::lm::LmOptions;

pub type Homography = Matrix3<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("invalid board: {0}")]
    InvalidBoard(String),
    #[error("corner set for view {view_id} ({camera}) has {got} corners, board needs {expected}")]
    CornerCount {
        view_id: u32,
        camera: CameraId,
        got: usize,
        expected: usize,
    },
    #[error("degenerate configuration: corner positions do not determine a homography")]
    DegenerateConfiguration,
    #[error("{camera} needs at least {needed} board views, got {got}")]
    InsufficientViews {
        camera: CameraId,
        got: usize,
        needed: usize,
    },
    #[error("ill-conditioned intrinsics estimate: {0}")]
    IllConditioned(&'static str),
    #[error("numerical failure: {0}")]
    Numerical(&'static str),
    #[error("no views observed by both cameras")]
    NoCommonViews,
    #[error("optimizer could not decrease the initial cost {cost:e}")]
    NoDecrease { cost: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraId {
    Left,
    Right,
    Thermal,
}

impl CameraId {
    pub const ALL: [CameraId; 3] = [CameraId::Left, CameraId::Right, CameraId::Thermal];

    pub fn as_str(&self) -> &'static str {
        match self {
            CameraId::Left => "left",
            CameraId::Right => "right",
            CameraId::Thermal => "thermal",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for CameraId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CameraId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "left" => Ok(CameraId::Left),
            "right" => Ok(CameraId::Right),
            "thermal" => Ok(CameraId::Thermal),
            other => Err(format!("unknown camera id `{other}`")),
        }
    }
}

/// One value for each camera of the rig.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerCamera<T> {
    pub left: T,
    pub right: T,
    pub thermal: T,
}

impl<T> PerCamera<T> {
    pub fn get(&self, id: CameraId) -> &T {
        match id {
            CameraId::Left => &self.left,
            CameraId::Right => &self.right,
            CameraId::Thermal => &self.thermal,
        }
    }

    pub fn get_mut(&mut self, id: CameraId) -> &mut T {
        match id {
            CameraId::Left => &mut self.left,
            CameraId::Right => &mut self.right,
            CameraId::Thermal => &mut self.thermal,
        }
    }

    pub fn from_fn<F: FnMut(CameraId) -> T>(mut f: F) -> Self {
        Self {
            left: f(CameraId::Left),
            right: f(CameraId::Right),
            thermal: f(CameraId::Thermal),
        }
    }
}

/// Checkerboard with `rows × cols` interior corners spaced `square_size`
/// meters apart. Corner `i * cols + j` sits at `(j·s + ox, i·s + oy, 0)` in
/// the board frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardSpec {
    pub rows: usize,
    pub cols: usize,
    pub square_size: f64,
    /// Board-frame position of corner 0; zero unless a target defines its
    /// origin elsewhere.
    #[serde(default)]
    pub origin: [f64; 2],
}

impl BoardSpec {
    pub fn new(rows: usize, cols: usize, square_size: f64) -> Self {
        Self {
            rows,
            cols,
            square_size,
            origin: [0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if self.rows < 3 || self.cols < 3 {
            return Err(CalibrationError::InvalidBoard(format!(
                "need at least 3x3 interior corners, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.square_size.is_finite() && self.square_size > 0.0) {
            return Err(CalibrationError::InvalidBoard(format!(
                "square size must be positive, got {}",
                self.square_size
            )));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(CalibrationError::InvalidBoard("non-finite origin".into()));
        }
        Ok(())
    }

    pub fn corner_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn point(&self, index: usize) -> Vec3 {
        let (i, j) = (index / self.cols, index % self.cols);
        Vec3::new(
            j as f64 * self.square_size + self.origin[0],
            i as f64 * self.square_size + self.origin[1],
            0.0,
        )
    }

    pub fn points(&self) -> Vec<Vec3> {
        (0..self.corner_count()).map(|k| self.point(k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CornerSet {
    pub view_id: u32,
    pub camera_id: CameraId,
    /// Row-major board order.
    pub corners: Vec<Pixel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub intrinsics: PerCamera<CameraIntrinsics>,
    /// Board-to-left-camera pose of every view.
    pub board_poses: BTreeMap<u32, RigidTransform>,
    pub right_from_left: RigidTransform,
    pub thermal_from_left: RigidTransform,
    /// Root-mean-square of the individual `u` and `v` residual components.
    pub rms_reprojection: PerCamera<f64>,
}

impl CalibrationResult {
    /// Maps left-camera coordinates into `camera` coordinates.
    pub fn camera_from_left(&self, camera: CameraId) -> RigidTransform {
        match camera {
            CameraId::Left => RigidTransform::identity(),
            CameraId::Right => self.right_from_left,
            CameraId::Thermal => self.thermal_from_left,
        }
    }

    /// Board-to-camera pose of `view_id` as seen by `camera`.
    pub fn board_pose(&self, view_id: u32, camera: CameraId) -> Option<RigidTransform> {
        self.board_poses
            .get(&view_id)
            .map(|left| self.camera_from_left(camera).compose(left))
    }

    pub fn baseline(&self) -> f64 {
        crate::geometry::camera_center_of(&self.right_from_left).norm()
    }
}

fn validate_corner_set(board: &BoardSpec, set: &CornerSet) -> Result<(), CalibrationError> {
    if set.corners.len() != board.corner_count() {
        return Err(CalibrationError::CornerCount {
            view_id: set.view_id,
            camera: set.camera_id,
            got: set.corners.len(),
            expected: board.corner_count(),
        });
    }
    if set.corners.iter().any(|p| !p.u.is_finite() || !p.v.is_finite()) {
        return Err(CalibrationError::InvalidBoard(format!(
            "non-finite corner in view {} ({})",
            set.view_id, set.camera_id
        )));
    }
    Ok(())
}

/// Similarity that moves the centroid to the origin and scales the mean
/// distance from it to √2.
fn hartley_normalization(points: &[(f64, f64)]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |acc, p| (acc.0 + p.0 / n, acc.1 + p.1 / n));
    let mean_dist = points
        .iter()
        .map(|p| (p.0 - mx).hypot(p.1 - my))
        .sum::<f64>()
        / n;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

fn apply_h(h: &Matrix3<f64>, p: (f64, f64)) -> (f64, f64) {
    let v = h * Vector3::new(p.0, p.1, 1.0);
    (v.x / v.z, v.y / v.z)
}

/// Singular values of `m` in descending order and the right singular vector
/// of the smallest one. Rows are zero-padded so the full right basis exists.
fn null_vector(m: &DMatrix<f64>) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = m.ncols();
    let padded = if m.nrows() < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let last = *order.last()?;
    let vec = v_t.row(last).iter().copied().collect();
    Some((sv, vec))
}

/// Normalizes to unit Frobenius norm with a positive `h33` (or, when `h33`
/// vanishes, a positive largest-magnitude entry).
pub fn normalize_homography(h: &Homography) -> Homography {
    let mut h = h / h.norm();
    let pivot = if h[(2, 2)].abs() > 1e-12 {
        h[(2, 2)]
    } else {
        *h.iter().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap()
    };
    if pivot < 0.0 {
        h = -h;
    }
    h
}

/// Normalized DLT homography mapping `src` plane points onto `dst` pixels.
pub fn homography_dlt(src: &[(f64, f64)], dst: &[Pixel]) -> Result<Homography, CalibrationError> {
    if src.len() != dst.len() || src.len() < 4 {
        return Err(CalibrationError::DegenerateConfiguration);
    }
    let dst: Vec<(f64, f64)> = dst.iter().map(|p| (p.u, p.v)).collect();
    let ts = hartley_normalization(src);
    let td = hartley_normalization(&dst);
    let mut a = DMatrix::zeros(2 * src.len(), 9);
    for (k, (s, d)) in src.iter().zip(&dst).enumerate() {
        let (x, y) = apply_h(&ts, *s);
        let (u, v) = apply_h(&td, *d);
        let r = 2 * k;
        a.row_mut(r)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let (sv, h) = null_vector(&a).ok_or(CalibrationError::Numerical("homography SVD"))?;
    // A one-dimensional null space needs the second-smallest singular value
    // to stay clear of zero.
    if !(sv[7] > 1e-10 * sv[0]) {
        return Err(CalibrationError::DegenerateConfiguration);
    }
    let hn = Matrix3::from_row_slice(&h);
    // A rank-deficient solution maps the whole board onto a line.
    let hsv = hn.singular_values();
    if !(hsv.min() > 1e-8 * hsv.max()) {
        return Err(CalibrationError::DegenerateConfiguration);
    }
    let td_inv = td
        .try_inverse()
        .ok_or(CalibrationError::Numerical("normalization inverse"))?;
    Ok(normalize_homography(&(td_inv * hn * ts)))
}

pub fn estimate_homography(
    board: &BoardSpec,
    corners: &CornerSet,
) -> Result<Homography, CalibrationError> {
    board.validate()?;
    validate_corner_set(board, corners)?;
    let src: Vec<(f64, f64)> = board.points().iter().map(|p| (p.x, p.y)).collect();
    homography_dlt(&src, &corners.corners)
}

/// Zero-skew constraint row `v_ij` over `(B11, B22, B13, B23, B33)`.
fn conic_row(h: &Homography, i: usize, j: usize) -> [f64; 5] {
    let a = h.column(i);
    let b = h.column(j);
    [
        a[0] * b[0],
        a[1] * b[1],
        a[0] * b[2] + a[2] * b[0],
        a[1] * b[2] + a[2] * b[1],
        a[2] * b[2],
    ]
}

/// Closed-form zero-skew intrinsics from plane homographies via the image of
/// the absolute conic. Distortion is left at zero.
pub fn intrinsics_from_homographies(
    hs: &[Homography],
) -> Result<CameraIntrinsics, CalibrationError> {
    intrinsics_for(CameraId::Left, hs)
}

fn intrinsics_for(camera: CameraId, hs: &[Homography]) -> Result<CameraIntrinsics, CalibrationError> {
    if hs.len() < 2 {
        return Err(CalibrationError::InsufficientViews {
            camera,
            got: hs.len(),
            needed: 2,
        });
    }
    let mut v = DMatrix::zeros(2 * hs.len(), 5);
    for (k, h) in hs.iter().enumerate() {
        let h = normalize_homography(h);
        let v12 = conic_row(&h, 0, 1);
        let v11 = conic_row(&h, 0, 0);
        let v22 = conic_row(&h, 1, 1);
        for c in 0..5 {
            v[(2 * k, c)] = v12[c];
            v[(2 * k + 1, c)] = v11[c] - v22[c];
        }
    }
    // Column equilibration: pixel-scale entries otherwise swamp the rest.
    // The floor keeps columns that are zero up to rounding from being
    // inflated into spurious constraints.
    let norms: Vec<f64> = (0..5).map(|c| v.column(c).norm()).collect();
    let floor = 1e-10 * norms.iter().copied().fold(0.0, f64::max);
    let scales: Vec<f64> = norms
        .iter()
        .map(|&n| if n > floor { 1.0 / n } else { 1.0 / floor.max(f64::MIN_POSITIVE) })
        .collect();
    for (c, s) in scales.iter().enumerate() {
        v.column_mut(c).scale_mut(*s);
    }
    let (sv, b) = null_vector(&v).ok_or(CalibrationError::Numerical("conic SVD"))?;
    if !(sv[3] > 1e-10 * sv[0]) {
        return Err(CalibrationError::IllConditioned(
            "board orientations do not constrain the conic",
        ));
    }
    let mut b: Vec<f64> = b.iter().zip(&scales).map(|(x, s)| x * s).collect();
    if b[0] < 0.0 {
        b.iter_mut().for_each(|x| *x = -*x);
    }
    let [b11, b22, b13, b23, b33] = [b[0], b[1], b[2], b[3], b[4]];
    if !(b11 > 0.0 && b22 > 0.0) {
        return Err(CalibrationError::IllConditioned("conic is not positive definite"));
    }
    let cx = -b13 / b11;
    let cy = -b23 / b22;
    let mu = b33 - b13 * b13 / b11 - b23 * b23 / b22;
    if !(mu > 0.0) {
        return Err(CalibrationError::IllConditioned("conic is not positive definite"));
    }
    let intr = CameraIntrinsics::new((mu / b11).sqrt(), (mu / b22).sqrt(), cx, cy);
    if !intr.is_valid() {
        return Err(CalibrationError::Numerical("non-finite intrinsics"));
    }
    Ok(intr)
}

/// Nearest rotation (Frobenius sense) to an arbitrary 3×3 matrix.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Option<UnitQuaternion> {
    let svd = m.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        // Flip the direction of the smallest singular value.
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))?;
        u.column_mut(imin).neg_mut();
        r = u * v_t;
    }
    Some(UnitQuaternion::from_rotation_matrix(
        &Rotation3::from_matrix_unchecked(r),
    ))
}

/// Board-to-camera pose from a calibrated plane homography.
pub fn extrinsics_from_homography(
    intr: &CameraIntrinsics,
    h: &Homography,
) -> Result<RigidTransform, CalibrationError> {
    let k_inv = intr
        .matrix()
        .try_inverse()
        .ok_or(CalibrationError::Numerical("singular calibration matrix"))?;
    let a1 = k_inv * h.column(0);
    let a2 = k_inv * h.column(1);
    let a3 = k_inv * h.column(2);
    let mut lambda = 1.0 / a1.norm();
    if !lambda.is_finite() {
        return Err(CalibrationError::Numerical("zero homography column"));
    }
    if (lambda * a3).z < 0.0 {
        lambda = -lambda;
    }
    let r1 = lambda * a1;
    let r2 = lambda * a2;
    let r3 = r1.cross(&r2);
    let t = lambda * a3;
    let rotation = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r3]))
        .ok_or(CalibrationError::Numerical("rotation projection"))?;
    if !t.iter().all(|v| v.is_finite()) {
        return Err(CalibrationError::Numerical("non-finite translation"));
    }
    Ok(RigidTransform::new(rotation, t))
}

/// Average of unit quaternions: dominant eigenvector of `Σ q qᵀ`, with the
/// sign aligned to the first sample.
pub fn average_rotations(qs: &[UnitQuaternion]) -> Option<UnitQuaternion> {
    let first = qs.first()?;
    let mut m = Matrix4::zeros();
    for q in qs {
        let v = q.coords;
        m += v * v.transpose();
    }
    let eig = SymmetricEigen::new(m);
    let (imax, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    let mut v: Vector4<f64> = eig.eigenvectors.column(imax).into();
    if v.dot(&first.coords) < 0.0 {
        v = -v;
    }
    // coords are stored (x, y, z, w).
    crate::geometry::quaternion_from_wxyz(v[3], v[0], v[1], v[2])
}

/// Other-from-left rig transform from board poses seen by both cameras.
pub fn rig_from_view_poses(
    left_poses: &BTreeMap<u32, RigidTransform>,
    other_poses: &BTreeMap<u32, RigidTransform>,
) -> Result<RigidTransform, CalibrationError> {
    let per_view: Vec<RigidTransform> = left_poses
        .iter()
        .filter_map(|(view, left)| other_poses.get(view).map(|o| o.compose(&left.inverse())))
        .collect();
    if per_view.is_empty() {
        return Err(CalibrationError::NoCommonViews);
    }
    if per_view.len() == 1 {
        return Ok(per_view[0]);
    }
    let rotations: Vec<UnitQuaternion> = per_view.iter().map(|t| t.rotation).collect();
    let rotation =
        average_rotations(&rotations).ok_or(CalibrationError::Numerical("rotation average"))?;
    let n = per_view.len() as f64;
    let translation = per_view
        .iter()
        .fold(Vector3::zeros(), |acc, t| acc + t.translation / n);
    Ok(RigidTransform::new(rotation, translation))
}

/// Groups corner sets by camera and view, validating each against the board.
fn index_corner_sets<'a>(
    board: &BoardSpec,
    sets: &'a [CornerSet],
) -> Result<PerCamera<BTreeMap<u32, &'a CornerSet>>, CalibrationError> {
    board.validate()?;
    let mut by_camera: PerCamera<BTreeMap<u32, &CornerSet>> = PerCamera::default();
    for set in sets {
        validate_corner_set(board, set)?;
        by_camera.get_mut(set.camera_id).insert(set.view_id, set);
    }
    Ok(by_camera)
}

/// Per-camera RMS of residual components, computed by projecting every
/// board corner through the result's cameras.
pub fn reprojection_rms(
    board: &BoardSpec,
    sets: &[CornerSet],
    result: &CalibrationResult,
) -> Result<PerCamera<f64>, GeometryError> {
    let points = board.points();
    let mut sums = PerCamera::<(f64, usize)>::default();
    for set in sets {
        let Some(pose) = result.board_pose(set.view_id, set.camera_id) else {
            continue;
        };
        let intr = result.intrinsics.get(set.camera_id);
        let acc = sums.get_mut(set.camera_id);
        for (p, obs) in points.iter().zip(&set.corners) {
            let proj = crate::geometry::project_camera_point(intr, &pose.transform_point(p))?;
            let du = proj.pixel.u - obs.u;
            let dv = proj.pixel.v - obs.v;
            acc.0 += du * du + dv * dv;
            acc.1 += 2;
        }
    }
    Ok(PerCamera::from_fn(|c| {
        let (s, n) = *sums.get(c);
        if n == 0 {
            0.0
        } else {
            (s / n as f64).sqrt()
        }
    }))
}

/// Closed-form initialization: homographies, intrinsics, board poses and
/// averaged rig transforms. Distortion starts at zero.
pub fn initial_calibration(
    board: &BoardSpec,
    sets: &[CornerSet],
) -> Result<CalibrationResult, CalibrationError> {
    let by_camera = index_corner_sets(board, sets)?;
    let mut estimated = PerCamera::<Option<CameraIntrinsics>>::default();
    let mut poses: PerCamera<BTreeMap<u32, RigidTransform>> = PerCamera::default();
    for camera in CameraId::ALL {
        let views = by_camera.get(camera);
        let hs = views
            .values()
            .map(|set| estimate_homography(board, set))
            .collect::<Result<Vec<_>, _>>()?;
        let intr = intrinsics_for(camera, &hs)?;
        for (view, h) in views.keys().zip(&hs) {
            poses
                .get_mut(camera)
                .insert(*view, extrinsics_from_homography(&intr, h)?);
        }
        *estimated.get_mut(camera) = Some(intr);
    }
    let intrinsics = PerCamera::from_fn(|c| estimated.get(c).expect("every camera estimated"));
    let right_from_left = rig_from_view_poses(&poses.left, &poses.right)?;
    let thermal_from_left = rig_from_view_poses(&poses.left, &poses.thermal)?;

    // Views the left camera missed take their pose from another camera.
    let mut board_poses = poses.left.clone();
    for (camera, rig) in [
        (CameraId::Right, right_from_left),
        (CameraId::Thermal, thermal_from_left),
    ] {
        for (view, pose) in poses.get(camera) {
            board_poses
                .entry(*view)
                .or_insert_with(|| rig.inverse().compose(pose));
        }
    }

    let mut result = CalibrationResult {
        intrinsics,
        board_poses,
        right_from_left,
        thermal_from_left,
        rms_reprojection: PerCamera::default(),
    };
    result.rms_reprojection = reprojection_rms(board, sets, &result)
        .map_err(|_| CalibrationError::Numerical("board behind camera after initialization"))?;
    Ok(result)
}

/// Closed-form initialization followed by joint refinement.
pub fn calibrate(
    board: &BoardSpec,
    sets: &[CornerSet],
    options: &LmOptions,
) -> Result<Refined, CalibrationError> {
    let initial = initial_calibration(board, sets)?;
    refine_reprojection(board, sets, &initial, options)
}
