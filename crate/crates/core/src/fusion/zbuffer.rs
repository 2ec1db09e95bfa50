//! Point-splat depth buffer for occlusion testing.

use crate::geometry::{project_unfolded, CameraView, Vec3};
use crate::sfm_io::DenseCloud;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZBufferOptions {
    /// Splat radius in pixels.
    pub splat_radius: f64,
    /// Relative depth slack.
    pub depth_tol: f64,
}

impl Default for ZBufferOptions {
    fn default() -> Self {
        Self {
            splat_radius: 2.0,
            depth_tol: 0.01,
        }
    }
}

pub fn zbuffer_visibility(cloud: &DenseCloud, view: &CameraView, options: &ZBufferOptions) -> Vec<bool> {
    let points: Vec<Vec3> = cloud.points.iter().map(|p| p.position).collect();
    zbuffer_visibility_points(&points, view, options)
}

/// Splats every point as a disc of its depth, keeping the minimum per pixel.
/// A point is visible when it projects inside the image, in front of the
/// camera, with depth at most `(1 + depth_tol)` times the buffer depth at
/// its nearest pixel.
pub fn zbuffer_visibility_points(points: &[Vec3], view: &CameraView, options: &ZBufferOptions) -> Vec<bool> {
    let (w, h) = (view.image_width as usize, view.image_height as usize);
    let mut buffer = vec![f64::INFINITY; w * h];
    let r = options.splat_radius.max(0.0);
    let projections: Vec<Option<(f64, f64, f64)>> = points
        .iter()
        .map(|p| {
            let proj = project_unfolded(view, p)?;
            Some((proj.pixel.u, proj.pixel.v, proj.depth))
        })
        .collect();

    for &(u, v, depth) in projections.iter().flatten() {
        let u_lo = (u - r).ceil().max(0.0);
        let u_hi = (u + r).floor().min(w as f64 - 1.0);
        let v_lo = (v - r).ceil().max(0.0);
        let v_hi = (v + r).floor().min(h as f64 - 1.0);
        if u_lo > u_hi || v_lo > v_hi {
            continue;
        }
        for j in v_lo as usize..=v_hi as usize {
            for i in u_lo as usize..=u_hi as usize {
                let (du, dv) = (i as f64 - u, j as f64 - v);
                if du * du + dv * dv <= r * r {
                    let cell = &mut buffer[j * w + i];
                    if depth < *cell {
                        *cell = depth;
                    }
                }
            }
        }
    }

    projections
        .iter()
        .map(|proj| {
            let Some((u, v, depth)) = *proj else {
                return false;
            };
            if !view.contains(&crate::geometry::Pixel::new(u, v)) {
                return false;
            }
            let i = ((u + 0.5).floor() as usize).min(w - 1);
            let j = ((v + 0.5).floor() as usize).min(h - 1);
            let reference = buffer[j * w + i];
            // Splats smaller than a pixel may miss their own nearest pixel.
            !reference.is_finite() || depth <= (1.0 + options.depth_tol) * reference
        })
        .collect()
}
