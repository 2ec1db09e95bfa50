//! Readers and writers for the structure-from-motion tool chain: NVM sparse
//! models, PLY dense clouds, PMVS patch visibility, and the fused thermal PLY.
//!
//! All parsers are bounded by the counts the file declares, never allocate
//! more than the input can back, and report truncation as a typed error.

mod nvm;
mod patch;
mod ply;

pub use nvm::{parse_nvm, read_nvm, write_nvm, NvmError};
pub use patch::{parse_patch, read_patch, write_patch, PatchError, PatchRecord};
pub use ply::{
    parse_fused_ply, parse_ply, write_dense_ply, write_fused_ply, FusedVertex, PlyError, PlyMode,
};

use crate::geometry::{RigidTransform, UnitQuaternion, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct NvmCamera {
    pub image_name: String,
    /// Pixels.
    pub focal: f64,
    /// World-to-camera rotation.
    pub rotation: UnitQuaternion,
    /// Camera center in model units.
    pub center: Vec3,
    /// Radial coefficient as stored in the file; not applied anywhere.
    pub radial: f64,
}

impl NvmCamera {
    /// World-to-camera pose, with translation `-R C`.
    pub fn world_to_camera(&self) -> RigidTransform {
        RigidTransform::new(self.rotation, -(self.rotation * self.center))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub camera_index: usize,
    pub feature_index: u64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NvmPoint {
    pub position: Vec3,
    pub color: [u8; 3],
    pub measurements: Vec<Measurement>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NvmModel {
    pub cameras: Vec<NvmCamera>,
    pub points: Vec<NvmPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensePoint {
    pub position: Vec3,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DenseCloud {
    pub points: Vec<DensePoint>,
    /// Per-point visible camera indices, when known.
    pub visibility: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedPoint {
    /// Meters.
    pub position: Vec3,
    pub color: [u8; 3],
    /// Mean sensor intensity; 0 when invalid.
    pub thermal: f64,
    pub thermal_valid: bool,
    pub sample_count: u32,
}

/// Whitespace tokenizer over text. A token touching the end of the input
/// without trailing whitespace may have been cut short, so requesting it
/// reports truncation.
pub(crate) struct Tokens<'a> {
    text: &'a str,
    pos: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TokenError {
    End,
    Malformed,
}

impl<'a> Tokens<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        Self { text, pos: 0 }
    }

    /// Byte offset just past the last consumed token.
    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    /// True when only whitespace remains.
    pub(crate) fn is_exhausted(&self) -> bool {
        self.text.as_bytes()[self.pos..]
            .iter()
            .all(|b| b.is_ascii_whitespace())
    }

    pub(crate) fn next_token(&mut self) -> Result<&'a str, TokenError> {
        let bytes = self.text.as_bytes();
        let mut start = self.pos;
        while start < bytes.len() && bytes[start].is_ascii_whitespace() {
            start += 1;
        }
        let mut end = start;
        while end < bytes.len() && !bytes[end].is_ascii_whitespace() {
            end += 1;
        }
        if start == end || end == bytes.len() {
            // Nothing left, or an unterminated final token.
            self.pos = bytes.len();
            return Err(TokenError::End);
        }
        self.pos = end;
        Ok(&self.text[start..end])
    }

    pub(crate) fn parse<T: std::str::FromStr>(&mut self) -> Result<T, TokenError> {
        self.next_token()?.parse().map_err(|_| TokenError::Malformed)
    }

    pub(crate) fn finite(&mut self) -> Result<f64, TokenError> {
        let v: f64 = self.parse()?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(TokenError::Malformed)
        }
    }
}

/// Initial capacity for a declared element count, bounded by what the
/// remaining input could possibly hold.
pub(crate) fn bounded_capacity(declared: usize, remaining_bytes: usize, min_bytes_each: usize) -> usize {
    declared.min(remaining_bytes / min_bytes_each.max(1) + 1)
}

/// Formats a float with 17 significant digits.
pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}
