//! Corner CSV files and the calibration document.
//!
//! Corner files are UTF-8 CSV with the header `view_id,camera_id,corner_index,u,v`,
//! `camera_id` one of `left`, `right`, `thermal`, and `corner_index` in
//! row-major board order. Every (view, camera) group must list each corner
//! exactly once.
//!
//! The calibration document is TOML:
//!
//! ```toml
//! format = "thermocloud-calibration"
//! version = 1
//!
//! [board]                  # optional
//! rows = 6
//! cols = 8
//! square_size = 0.03
//!
//! [cameras.left]           # also [cameras.right], [cameras.thermal]
//! fx = 600.0
//! fy = 590.0
//! cx = 320.0
//! cy = 240.0
//! skew = 0.0
//! k1 = -0.05
//! rms = 0.12               # pixels, RMS over u and v residual components
//!
//! [rig.right_from_left]    # also [rig.thermal_from_left]
//! rotation_wxyz = [1.0, 0.0, 0.0, 0.0]
//! translation = [-0.12, 0.0, 0.0]
//!
//! [[board_poses]]          # board-to-left-camera, one per view
//! view_id = 0
//! rotation_wxyz = [1.0, 0.0, 0.0, 0.0]
//! translation = [0.0, 0.0, 0.6]
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BoardSpec, CalibrationResult, CameraId, CornerSet, PerCamera};
use crate::geometry::{quaternion_from_wxyz, CameraIntrinsics, Pixel, RigidTransform, Vec3};

#[derive(Debug, Error)]
pub enum CornerCsvError {
    #[error("corner CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("corner CSV line {line}: unknown camera id `{value}`")]
    BadCamera { line: u64, value: String },
    #[error("corner CSV line {line}: corner index {index} outside board of {count} corners")]
    IndexOutOfRange { line: u64, index: usize, count: usize },
    #[error("corner CSV line {line}: non-finite pixel coordinate")]
    NonFinite { line: u64 },
    #[error("corner CSV: view {view_id} ({camera}) lists corner {index} twice")]
    DuplicateCorner {
        view_id: u32,
        camera: CameraId,
        index: usize,
    },
    #[error("corner CSV: view {view_id} ({camera}) has {got} of {expected} corners")]
    Incomplete {
        view_id: u32,
        camera: CameraId,
        got: usize,
        expected: usize,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct CornerRow {
    view_id: u32,
    camera_id: String,
    corner_index: usize,
    u: f64,
    v: f64,
}

/// Reads corner sets grouped by (view, camera), ordered by view then camera.
pub fn read_corner_csv<R: Read>(
    reader: R,
    board: &BoardSpec,
) -> Result<Vec<CornerSet>, CornerCsvError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let count = board.corner_count();
    let mut groups: BTreeMap<(u32, CameraId), Vec<Option<Pixel>>> = BTreeMap::new();
    let headers = csv.headers()?.clone();
    for record in csv.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row: CornerRow = record.deserialize(Some(&headers))?;
        let camera: CameraId = row.camera_id.parse().map_err(|_| CornerCsvError::BadCamera {
            line,
            value: row.camera_id.clone(),
        })?;
        if row.corner_index >= count {
            return Err(CornerCsvError::IndexOutOfRange {
                line,
                index: row.corner_index,
                count,
            });
        }
        if !row.u.is_finite() || !row.v.is_finite() {
            return Err(CornerCsvError::NonFinite { line });
        }
        let slots = groups
            .entry((row.view_id, camera))
            .or_insert_with(|| vec![None; count]);
        let slot = &mut slots[row.corner_index];
        if slot.is_some() {
            return Err(CornerCsvError::DuplicateCorner {
                view_id: row.view_id,
                camera,
                index: row.corner_index,
            });
        }
        *slot = Some(Pixel::new(row.u, row.v));
    }
    groups
        .into_iter()
        .map(|((view_id, camera_id), slots)| {
            let got = slots.iter().flatten().count();
            if got != count {
                return Err(CornerCsvError::Incomplete {
                    view_id,
                    camera: camera_id,
                    got,
                    expected: count,
                });
            }
            Ok(CornerSet {
                view_id,
                camera_id,
                corners: slots.into_iter().flatten().collect(),
            })
        })
        .collect()
}

pub fn write_corner_csv<W: Write>(writer: W, sets: &[CornerSet]) -> Result<(), csv::Error> {
    let mut csv = csv::Writer::from_writer(writer);
    for set in sets {
        for (k, p) in set.corners.iter().enumerate() {
            csv.serialize(CornerRow {
                view_id: set.view_id,
                camera_id: set.camera_id.to_string(),
                corner_index: k,
                u: p.u,
                v: p.v,
            })?;
        }
    }
    csv.flush()?;
    Ok(())
}

#[derive(Debug, Error)]
pub enum DocumentError {
    #[error("calibration document: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("calibration document: unsupported format `{0}`")]
    Format(String),
    #[error("calibration document: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraEntry {
    #[serde(flatten)]
    intrinsics: CameraIntrinsics,
    rms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoseEntry {
    rotation_wxyz: [f64; 4],
    translation: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ViewPoseEntry {
    view_id: u32,
    #[serde(flatten)]
    pose: PoseEntry,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RigEntry {
    right_from_left: PoseEntry,
    thermal_from_left: PoseEntry,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DocumentFile {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    board: Option<BoardSpec>,
    cameras: PerCamera<CameraEntry>,
    rig: RigEntry,
    #[serde(default)]
    board_poses: Vec<ViewPoseEntry>,
}

const FORMAT: &str = "thermocloud-calibration";

impl From<&RigidTransform> for PoseEntry {
    fn from(t: &RigidTransform) -> Self {
        let q = t.rotation;
        PoseEntry {
            rotation_wxyz: [q.w, q.i, q.j, q.k],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl PoseEntry {
    fn to_transform(&self, what: &str) -> Result<RigidTransform, DocumentError> {
        let [w, x, y, z] = self.rotation_wxyz;
        let rotation = quaternion_from_wxyz(w, x, y, z)
            .ok_or_else(|| DocumentError::Invalid(format!("{what}: zero rotation quaternion")))?;
        let [tx, ty, tz] = self.translation;
        if ![tx, ty, tz].iter().all(|v| v.is_finite()) {
            return Err(DocumentError::Invalid(format!("{what}: non-finite translation")));
        }
        Ok(RigidTransform::new(rotation, Vec3::new(tx, ty, tz)))
    }
}

/// A calibration result together with the board it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationDocument {
    pub board: Option<BoardSpec>,
    pub result: CalibrationResult,
}

impl CalibrationDocument {
    pub fn to_toml_string(&self) -> String {
        let r = &self.result;
        let file = DocumentFile {
            format: FORMAT.to_string(),
            version: 1,
            board: self.board,
            cameras: PerCamera::from_fn(|c| CameraEntry {
                intrinsics: *r.intrinsics.get(c),
                rms: *r.rms_reprojection.get(c),
            }),
            rig: RigEntry {
                right_from_left: (&r.right_from_left).into(),
                thermal_from_left: (&r.thermal_from_left).into(),
            },
            board_poses: r
                .board_poses
                .iter()
                .map(|(view_id, pose)| ViewPoseEntry {
                    view_id: *view_id,
                    pose: pose.into(),
                })
                .collect(),
        };
        toml::to_string(&file).expect("calibration document serializes")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, DocumentError> {
        let file: DocumentFile = toml::from_str(text)?;
        if file.format != FORMAT || file.version != 1 {
            return Err(DocumentError::Format(format!("{} v{}", file.format, file.version)));
        }
        for c in CameraId::ALL {
            let e = file.cameras.get(c);
            if !e.intrinsics.is_valid() {
                return Err(DocumentError::Invalid(format!("{c} intrinsics are invalid")));
            }
            if !(e.rms >= 0.0) {
                return Err(DocumentError::Invalid(format!("{c} rms must be non-negative")));
            }
        }
        let mut board_poses = BTreeMap::new();
        for entry in &file.board_poses {
            let pose = entry.pose.to_transform(&format!("board pose {}", entry.view_id))?;
            if board_poses.insert(entry.view_id, pose).is_some() {
                return Err(DocumentError::Invalid(format!(
                    "duplicate board pose for view {}",
                    entry.view_id
                )));
            }
        }
        let result = CalibrationResult {
            intrinsics: PerCamera::from_fn(|c| file.cameras.get(c).intrinsics),
            board_poses,
            right_from_left: file.rig.right_from_left.to_transform("right_from_left")?,
            thermal_from_left: file.rig.thermal_from_left.to_transform("thermal_from_left")?,
            rms_reprojection: PerCamera::from_fn(|c| file.cameras.get(c).rms),
        };
        if !(result.baseline() > 0.0) {
            return Err(DocumentError::Invalid("right_from_left has zero baseline".into()));
        }
        Ok(CalibrationDocument {
            board: file.board,
            result,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_from_vector;

    fn sample_result() -> CalibrationResult {
        let pose = RigidTransform::new(
            rotation_from_vector(Vec3::new(0.1, -0.2, 0.3)),
            Vec3::new(0.01, 0.02, 0.7),
        );
        CalibrationResult {
            intrinsics: PerCamera {
                left: CameraIntrinsics::new(600.0, 590.0, 320.5, 239.25).with_k1(-0.031),
                right: CameraIntrinsics::new(605.0, 596.0, 318.0, 242.0),
                thermal: CameraIntrinsics::new(400.0, 401.0, 160.0, 120.0).with_k1(0.1 / 3.0),
            },
            board_poses: [(0, pose), (4, pose.inverse())].into_iter().collect(),
            right_from_left: RigidTransform::from_translation(Vec3::new(-0.12, 0.0, 1e-3)),
            thermal_from_left: RigidTransform::new(
                rotation_from_vector(Vec3::new(0.01, 0.02, -0.03)),
                Vec3::new(-0.06, 0.04, 0.0),
            ),
            rms_reprojection: PerCamera {
                left: 0.1,
                right: 0.2,
                thermal: 1.0 / 7.0,
            },
        }
    }

    #[test]
    fn document_round_trip_is_exact() {
        let doc = CalibrationDocument {
            board: Some(BoardSpec::new(6, 8, 0.03)),
            result: sample_result(),
        };
        let text = doc.to_toml_string();
        let back = CalibrationDocument::from_toml_str(&text).unwrap();
        assert_eq!(back.board, doc.board);
        let (a, b) = (&back.result, &doc.result);
        assert_eq!(a.intrinsics, b.intrinsics);
        assert_eq!(a.rms_reprojection, b.rms_reprojection);
        assert_eq!(a.board_poses.keys().collect::<Vec<_>>(), vec![&0, &4]);
        for (x, y) in [
            (a.right_from_left, b.right_from_left),
            (a.thermal_from_left, b.thermal_from_left),
            (a.board_poses[&4], b.board_poses[&4]),
        ] {
            let (angle, dist) = x.distance_to(&y);
            assert!(angle < 1e-15 && dist == 0.0);
        }
    }

    #[test]
    fn document_rejects_foreign_format() {
        let text = sample_doc_text().replace(FORMAT, "something-else");
        assert!(matches!(
            CalibrationDocument::from_toml_str(&text),
            Err(DocumentError::Format(_))
        ));
        assert!(matches!(
            CalibrationDocument::from_toml_str("format = 3"),
            Err(DocumentError::Toml(_))
        ));
    }

    fn sample_doc_text() -> String {
        CalibrationDocument {
            board: None,
            result: sample_result(),
        }
        .to_toml_string()
    }

    #[test]
    fn corner_csv_round_trip() {
        let board = BoardSpec::new(3, 3, 0.1);
        let sets: Vec<CornerSet> = [(0, CameraId::Left), (0, CameraId::Thermal), (2, CameraId::Right)]
            .iter()
            .map(|&(view_id, camera_id)| CornerSet {
                view_id,
                camera_id,
                corners: (0..9)
                    .map(|k| Pixel::new(10.0 * k as f64 + 0.125, 1.0 / (k as f64 + 3.0)))
                    .collect(),
            })
            .collect();
        let mut buf = Vec::new();
        write_corner_csv(&mut buf, &sets).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("view_id,camera_id,corner_index,u,v\n"));
        let back = read_corner_csv(buf.as_slice(), &board).unwrap();
        assert_eq!(back, sets);
    }

    #[test]
    fn corner_csv_errors() {
        let board = BoardSpec::new(3, 3, 0.1);
        let header = "view_id,camera_id,corner_index,u,v\n";
        let bad_cam = format!("{header}0,infrared,0,1,2\n");
        assert!(matches!(
            read_corner_csv(bad_cam.as_bytes(), &board),
            Err(CornerCsvError::BadCamera { .. })
        ));
        let out_of_range = format!("{header}0,left,9,1,2\n");
        assert!(matches!(
            read_corner_csv(out_of_range.as_bytes(), &board),
            Err(CornerCsvError::IndexOutOfRange { index: 9, .. })
        ));
        let dup = format!("{header}0,left,1,1,2\n0,left,1,1,2\n");
        assert!(matches!(
            read_corner_csv(dup.as_bytes(), &board),
            Err(CornerCsvError::DuplicateCorner { index: 1, .. })
        ));
        let short = format!("{header}0,left,1,1,2\n");
        assert!(matches!(
            read_corner_csv(short.as_bytes(), &board),
            Err(CornerCsvError::Incomplete { got: 1, expected: 9, .. })
        ));
        let malformed = format!("{header}0,left,one,1,2\n");
        assert!(matches!(
            read_corner_csv(malformed.as_bytes(), &board),
            Err(CornerCsvError::Csv(_))
        ));
    }
}
