//! NVM_V3 sparse models.
//!
//! ```text
//! NVM_V3
//! <n_cameras>
//! <name> <focal> <qw> <qx> <qy> <qz> <cx> <cy> <cz> <radial> 0     × n_cameras
//! <n_points>
//! <x> <y> <z> <r> <g> <b> <m> {<img> <feat> <x> <y>}×m            × n_points
//! ```
//!
//! Tokens are separated by any run of whitespace, and everything after the
//! point block is ignored. Optional calibration tags on the header line
//! (`NVM_V3_R9T` and the like) are not supported.

use std::fmt::Write as _;
use std::io::Read;

use thiserror::Error;

use super::{bounded_capacity, fmt17, Measurement, NvmCamera, NvmModel, NvmPoint, TokenError, Tokens};
use crate::geometry::{quaternion_from_wxyz, Vec3};

#[derive(Debug, Error)]
pub enum NvmError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an NVM_V3 file (header `{0}`)")]
    BadHeader(String),
    #[error("file ends inside {0}")]
    TruncatedFile(&'static str),
    #[error("malformed number in {0}")]
    MalformedNumber(&'static str),
    #[error("point {point} references camera {camera}, model has {cameras}")]
    IndexOutOfRange {
        point: usize,
        camera: usize,
        cameras: usize,
    },
    #[error("invalid value: {0}")]
    InvalidValue(String),
}

fn lift(context: &'static str) -> impl Fn(TokenError) -> NvmError {
    move |e| match e {
        TokenError::End => NvmError::TruncatedFile(context),
        TokenError::Malformed => NvmError::MalformedNumber(context),
    }
}

pub fn read_nvm<R: Read>(mut reader: R) -> Result<NvmModel, NvmError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| NvmError::InvalidValue(format!("not UTF-8 text: {e}")))?;
    parse_nvm(text)
}

pub fn parse_nvm(text: &str) -> Result<NvmModel, NvmError> {
    let mut tok = Tokens::new(text);
    match tok.next_token() {
        Ok("NVM_V3") => {}
        Ok(other) => return Err(NvmError::BadHeader(other.chars().take(32).collect())),
        Err(_) => return Err(NvmError::BadHeader(text.trim().chars().take(32).collect())),
    }

    let n_cameras: usize = tok.parse().map_err(lift("camera count"))?;
    let remaining = text.len() - tok.position();
    let mut cameras = Vec::with_capacity(bounded_capacity(n_cameras, remaining, 22));
    for _ in 0..n_cameras {
        cameras.push(parse_camera(&mut tok)?);
    }

    let n_points: usize = tok.parse().map_err(lift("point count"))?;
    let remaining = text.len() - tok.position();
    let mut points = Vec::with_capacity(bounded_capacity(n_points, remaining, 22));
    for p in 0..n_points {
        points.push(parse_point(&mut tok, p, cameras.len())?);
    }
    Ok(NvmModel { cameras, points })
}

fn parse_camera(tok: &mut Tokens<'_>) -> Result<NvmCamera, NvmError> {
    const CTX: &str = "camera record";
    let image_name = tok.next_token().map_err(lift(CTX))?.to_string();
    let focal = tok.finite().map_err(lift(CTX))?;
    let mut q = [0.0; 4];
    for v in &mut q {
        *v = tok.finite().map_err(lift(CTX))?;
    }
    let mut c = [0.0; 3];
    for v in &mut c {
        *v = tok.finite().map_err(lift(CTX))?;
    }
    let radial = tok.finite().map_err(lift(CTX))?;
    let _terminator: f64 = tok.finite().map_err(lift(CTX))?;
    if focal <= 0.0 {
        return Err(NvmError::InvalidValue(format!(
            "camera `{image_name}` has focal {focal}"
        )));
    }
    let rotation = quaternion_from_wxyz(q[0], q[1], q[2], q[3]).ok_or_else(|| {
        NvmError::InvalidValue(format!("camera `{image_name}` has a zero quaternion"))
    })?;
    Ok(NvmCamera {
        image_name,
        focal,
        rotation,
        center: Vec3::new(c[0], c[1], c[2]),
        radial,
    })
}

fn parse_point(tok: &mut Tokens<'_>, index: usize, n_cameras: usize) -> Result<NvmPoint, NvmError> {
    const CTX: &str = "point record";
    let mut p = [0.0; 3];
    for v in &mut p {
        *v = tok.finite().map_err(lift(CTX))?;
    }
    let mut color = [0u8; 3];
    for v in &mut color {
        *v = tok.parse().map_err(lift(CTX))?;
    }
    let m: usize = tok.parse().map_err(lift(CTX))?;
    if m == 0 {
        return Err(NvmError::InvalidValue(format!("point {index} has no measurements")));
    }
    let mut measurements = Vec::with_capacity(m.min(n_cameras.max(1)));
    for _ in 0..m {
        let camera_index: usize = tok.parse().map_err(lift(CTX))?;
        let feature_index: u64 = tok.parse().map_err(lift(CTX))?;
        let x = tok.finite().map_err(lift(CTX))?;
        let y = tok.finite().map_err(lift(CTX))?;
        if camera_index >= n_cameras {
            return Err(NvmError::IndexOutOfRange {
                point: index,
                camera: camera_index,
                cameras: n_cameras,
            });
        }
        measurements.push(Measurement {
            camera_index,
            feature_index,
            x,
            y,
        });
    }
    Ok(NvmPoint {
        position: Vec3::new(p[0], p[1], p[2]),
        color,
        measurements,
    })
}

/// Serializes `model`. Image names must not contain whitespace.
pub fn write_nvm(model: &NvmModel) -> String {
    let mut out = String::new();
    out.push_str("NVM_V3\n\n");
    let _ = writeln!(out, "{}", model.cameras.len());
    for cam in &model.cameras {
        let q = cam.rotation.quaternion();
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {} {} {} 0",
            cam.image_name,
            fmt17(cam.focal),
            fmt17(q.w),
            fmt17(q.i),
            fmt17(q.j),
            fmt17(q.k),
            fmt17(cam.center.x),
            fmt17(cam.center.y),
            fmt17(cam.center.z),
            fmt17(cam.radial),
        );
    }
    let _ = writeln!(out, "\n{}", model.points.len());
    for p in &model.points {
        let _ = write!(
            out,
            "{} {} {} {} {} {} {}",
            fmt17(p.position.x),
            fmt17(p.position.y),
            fmt17(p.position.z),
            p.color[0],
            p.color[1],
            p.color[2],
            p.measurements.len()
        );
        for m in &p.measurements {
            let _ = write!(
                out,
                " {} {} {} {}",
                m.camera_index,
                m.feature_index,
                fmt17(m.x),
                fmt17(m.y)
            );
        }
        out.push('\n');
    }
    out.push_str("\n0\n");
    out
}
