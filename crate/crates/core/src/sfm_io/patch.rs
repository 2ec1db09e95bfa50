//! PMVS `.patch` visibility files.
//!
//! ```text
//! PATCHES
//! <n_patches>
//! PATCHS                                   × n_patches
//! <x> <y> <z> <w>
//! <nx> <ny> <nz> <0>
//! <score> <debug1> <debug2>
//! <n_visible>
//! <img>×n_visible
//! <n_maybe>
//! <img>×n_maybe
//! ```
//!
//! Record order matches the vertex order of the companion PLY.

use std::fmt::Write as _;
use std::io::Read;

use thiserror::Error;

use super::{bounded_capacity, fmt17, TokenError, Tokens};
use crate::geometry::Vec3;

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a patch file (header `{0}`)")]
    BadHeader(String),
    #[error("header declares {declared} patches, file holds {found}")]
    CountMismatch { declared: usize, found: usize },
    #[error("file ends inside patch {0}")]
    TruncatedFile(usize),
    #[error("malformed value in patch {0}")]
    MalformedNumber(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecord {
    pub position: Vec3,
    pub normal: Vec3,
    /// Photometric score followed by the two debug values PMVS writes.
    pub scores: [f64; 3],
    /// Images the patch is visible in.
    pub visible: Vec<usize>,
    /// Images the patch may be visible in; not used for fusion.
    pub maybe: Vec<usize>,
}

impl PatchRecord {
    pub fn new(position: Vec3, visible: Vec<usize>) -> Self {
        Self {
            position,
            normal: Vec3::zeros(),
            scores: [0.0; 3],
            visible,
            maybe: Vec::new(),
        }
    }
}

pub fn read_patch<R: Read>(mut reader: R) -> Result<Vec<PatchRecord>, PatchError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| PatchError::BadHeader("<binary data>".into()))?;
    parse_patch(text)
}

pub fn parse_patch(text: &str) -> Result<Vec<PatchRecord>, PatchError> {
    let mut tok = Tokens::new(text);
    match tok.next_token() {
        Ok("PATCHES") => {}
        Ok(other) => return Err(PatchError::BadHeader(other.chars().take(32).collect())),
        Err(_) => return Err(PatchError::BadHeader(text.trim().chars().take(32).collect())),
    }
    let declared: usize = tok.parse().map_err(|e| match e {
        TokenError::End => PatchError::TruncatedFile(0),
        TokenError::Malformed => PatchError::BadHeader("patch count".into()),
    })?;
    let remaining = text.len() - tok.position();
    let mut records = Vec::with_capacity(bounded_capacity(declared, remaining, 40));
    loop {
        if tok.is_exhausted() {
            break;
        }
        let index = records.len();
        match tok.next_token() {
            Ok("PATCHS") => {}
            Ok(_) => return Err(PatchError::MalformedNumber(index)),
            Err(_) => return Err(PatchError::TruncatedFile(index)),
        }
        if index == declared {
            return Err(PatchError::CountMismatch {
                declared,
                found: index + 1,
            });
        }
        records.push(parse_record(&mut tok, index)?);
    }
    if records.len() != declared {
        return Err(PatchError::CountMismatch {
            declared,
            found: records.len(),
        });
    }
    Ok(records)
}

fn parse_record(tok: &mut Tokens<'_>, index: usize) -> Result<PatchRecord, PatchError> {
    let lift = |e| match e {
        TokenError::End => PatchError::TruncatedFile(index),
        TokenError::Malformed => PatchError::MalformedNumber(index),
    };
    let mut h = [0.0; 4];
    for v in &mut h {
        *v = tok.finite().map_err(lift)?;
    }
    if h[3] == 0.0 {
        return Err(PatchError::MalformedNumber(index));
    }
    let mut n = [0.0; 4];
    for v in &mut n {
        *v = tok.finite().map_err(lift)?;
    }
    let mut scores = [0.0; 3];
    for v in &mut scores {
        *v = tok.finite().map_err(lift)?;
    }
    let mut lists = [Vec::new(), Vec::new()];
    for list in &mut lists {
        let count: usize = tok.parse().map_err(lift)?;
        list.reserve(count.min(64));
        for _ in 0..count {
            list.push(tok.parse().map_err(lift)?);
        }
    }
    let [visible, maybe] = lists;
    Ok(PatchRecord {
        position: Vec3::new(h[0], h[1], h[2]) / h[3],
        normal: Vec3::new(n[0], n[1], n[2]),
        scores,
        visible,
        maybe,
    })
}

pub fn write_patch(records: &[PatchRecord]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "PATCHES\n{}", records.len());
    let join = |list: &[usize]| {
        list.iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    for r in records {
        let _ = writeln!(out, "PATCHS");
        let p = r.position;
        let n = r.normal;
        let _ = writeln!(out, "{} {} {} 1", fmt17(p.x), fmt17(p.y), fmt17(p.z));
        let _ = writeln!(out, "{} {} {} 0", fmt17(n.x), fmt17(n.y), fmt17(n.z));
        let s = r.scores;
        let _ = writeln!(out, "{} {} {}", fmt17(s[0]), fmt17(s[1]), fmt17(s[2]));
        let _ = writeln!(out, "{}\n{}", r.visible.len(), join(&r.visible));
        let _ = writeln!(out, "{}\n{}", r.maybe.len(), join(&r.maybe));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_patch() {
        let text = "PATCHES\n1\nPATCHS\n1 2 3 1\n0 0 1 0\n0.9 0 0\n2\n0 2\n0\n\n";
        let r = parse_patch(text).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].visible, vec![0, 2]);
        assert_eq!(r[0].position, Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn count_mismatch() {
        let rec = PatchRecord::new(Vec3::new(1.0, 2.0, 3.0), vec![0]);
        let text = write_patch(&vec![rec; 4]).replacen("\n4\n", "\n5\n", 1);
        assert!(matches!(
            parse_patch(&text),
            Err(PatchError::CountMismatch { declared: 5, found: 4 })
        ));
        let text = write_patch(&vec![PatchRecord::new(Vec3::zeros(), vec![1]); 4])
            .replacen("\n4\n", "\n3\n", 1);
        assert!(matches!(
            parse_patch(&text),
            Err(PatchError::CountMismatch { declared: 3, .. })
        ));
    }

    #[test]
    fn bad_header() {
        assert!(matches!(parse_patch("PATCH\n0\n"), Err(PatchError::BadHeader(_))));
    }

    #[test]
    fn homogeneous_position() {
        let text = "PATCHES\n1\nPATCHS\n2 4 6 2\n0 0 1 0\n0 0 0\n1\n3\n0\n\n";
        assert_eq!(parse_patch(text).unwrap()[0].position, Vec3::new(1.0, 2.0, 3.0));
    }

    fn arb_records() -> impl Strategy<Value = Vec<PatchRecord>> {
        let record = (
            prop::array::uniform3(-1e4f64..1e4),
            prop::array::uniform3(-1.0f64..1.0),
            prop::array::uniform3(-1.0f64..1.0),
            prop::collection::vec(0usize..100, 0..6),
            prop::collection::vec(0usize..100, 0..3),
        )
            .prop_map(|(p, n, s, visible, maybe)| PatchRecord {
                position: Vec3::from(p),
                normal: Vec3::from(n),
                scores: s,
                visible,
                maybe,
            });
        prop::collection::vec(record, 0..10)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn random_round_trip(records in arb_records()) {
            prop_assert_eq!(parse_patch(&write_patch(&records)).unwrap(), records);
        }

        #[test]
        fn truncation_never_misparses(records in arb_records(), frac in 0.0f64..1.0) {
            let text = write_patch(&records);
            let cut = ((text.len() as f64) * frac) as usize;
            match parse_patch(&text[..cut]) {
                Ok(back) => prop_assert_eq!(back, records),
                Err(PatchError::TruncatedFile(_)) => {}
                // A cut exactly between two records looks like a short file.
                Err(PatchError::CountMismatch { declared, found }) => {
                    prop_assert_eq!(declared, records.len());
                    prop_assert!(found < declared);
                }
                Err(PatchError::BadHeader(_)) => prop_assert!(cut < 8),
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
