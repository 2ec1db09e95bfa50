//! Single-channel thermal rasters: binary PGM (P5, 8 or 16 bit big-endian)
//! and 8/16-bit grayscale PNG.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad PGM: {0}")]
    Pgm(String),
    #[error("bad PNG: {0}")]
    Png(String),
    #[error("unsupported image: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

/// Row-major intensities; pixel `(u, v)` is column `u`, row `v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThermalImage {
    width: u32,
    height: u32,
    depth: BitDepth,
    pixels: Vec<u16>,
}

impl ThermalImage {
    /// `None` unless both sides are positive, the buffer matches them, and
    /// every value fits the bit depth.
    pub fn new(width: u32, height: u32, depth: BitDepth, pixels: Vec<u16>) -> Option<Self> {
        let fits = match depth {
            BitDepth::Eight => pixels.iter().all(|&p| p <= 255),
            BitDepth::Sixteen => true,
        };
        (width >= 1 && height >= 1 && pixels.len() == width as usize * height as usize && fits)
            .then_some(Self {
                width,
                height,
                depth,
                pixels,
            })
    }

    pub fn from_fn<F: FnMut(u32, u32) -> u16>(width: u32, height: u32, mut f: F) -> Option<Self> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for v in 0..height {
            for u in 0..width {
                pixels.push(f(u, v));
            }
        }
        Self::new(width, height, BitDepth::Sixteen, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn depth(&self) -> BitDepth {
        self.depth
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn get(&self, u: u32, v: u32) -> u16 {
        self.pixels[v as usize * self.width as usize + u as usize]
    }
}

/// Encodes as binary PGM. Sixteen-bit images use maxval 65535.
pub fn encode_pgm(image: &ThermalImage) -> Vec<u8> {
    let maxval = match image.depth {
        BitDepth::Eight => 255,
        BitDepth::Sixteen => 65535,
    };
    let mut out = format!("P5\n{} {}\n{}\n", image.width, image.height, maxval).into_bytes();
    match image.depth {
        BitDepth::Eight => out.extend(image.pixels.iter().map(|&p| p as u8)),
        BitDepth::Sixteen => {
            for p in &image.pixels {
                out.extend_from_slice(&p.to_be_bytes());
            }
        }
    }
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<ThermalImage, ImageError> {
    let bad = |m: &str| ImageError::Pgm(m.to_string());
    let mut pos = 0;
    let mut fields = [0u64; 3];
    if bytes.get(..2) != Some(b"P5") {
        return Err(bad("missing P5 magic"));
    }
    pos += 2;
    for field in &mut fields {
        // Whitespace and comments, then a decimal number.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("header ends early")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("malformed header number"))?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing separator after maxval"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || width > u32::MAX as u64 || height > u32::MAX as u64 {
        return Err(bad("image size out of range"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval out of range"));
    }
    let n = (width as usize)
        .checked_mul(height as usize)
        .ok_or_else(|| bad("image too large"))?;
    let body = &bytes[pos..];
    let (depth, pixels) = if maxval < 256 {
        let data = body.get(..n).ok_or_else(|| bad("raster truncated"))?;
        (BitDepth::Eight, data.iter().map(|&b| b as u16).collect())
    } else {
        let data = body
            .get(..n.checked_mul(2).ok_or_else(|| bad("image too large"))?)
            .ok_or_else(|| bad("raster truncated"))?;
        let pixels = data
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        (BitDepth::Sixteen, pixels)
    };
    ThermalImage::new(width as u32, height as u32, depth, pixels)
        .ok_or_else(|| bad("pixel value exceeds bit depth"))
}

pub fn decode_png(bytes: &[u8]) -> Result<ThermalImage, ImageError> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| ImageError::Png(e.to_string()))?;
    let (w, h) = (img.width(), img.height());
    match img {
        image::DynamicImage::ImageLuma8(buf) => {
            ThermalImage::new(w, h, BitDepth::Eight, buf.into_raw().into_iter().map(u16::from).collect())
        }
        image::DynamicImage::ImageLuma16(buf) => {
            ThermalImage::new(w, h, BitDepth::Sixteen, buf.into_raw())
        }
        other => {
            return Err(ImageError::Unsupported(format!(
                "PNG color type {:?}, expected 8 or 16-bit grayscale",
                other.color()
            )))
        }
    }
    .ok_or_else(|| ImageError::Png("empty image".into()))
}

/// Decodes by magic bytes.
pub fn decode_thermal_image(bytes: &[u8]) -> Result<ThermalImage, ImageError> {
    if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)
    } else {
        Err(ImageError::Unsupported("neither binary PGM nor PNG".into()))
    }
}

pub fn load_thermal_image(path: &Path) -> Result<ThermalImage, ImageError> {
    let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_thermal_image(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_both_depths() {
        let img16 = ThermalImage::from_fn(5, 3, |u, v| (u * 1000 + v * 7 + 60000.min(u * 20000)) as u16).unwrap();
        assert_eq!(decode_pgm(&encode_pgm(&img16)).unwrap(), img16);
        let img8 = ThermalImage::new(2, 2, BitDepth::Eight, vec![0, 10, 200, 255]).unwrap();
        let bytes = encode_pgm(&img8);
        assert_eq!(bytes.len(), b"P5\n2 2\n255\n".len() + 4);
        assert_eq!(decode_pgm(&bytes).unwrap(), img8);
    }

    #[test]
    fn pgm_sixteen_bit_is_big_endian() {
        let img = ThermalImage::new(1, 1, BitDepth::Sixteen, vec![0x0102]).unwrap();
        assert!(encode_pgm(&img).ends_with(&[0x01, 0x02]));
    }

    #[test]
    fn pgm_comments_and_errors() {
        let bytes = b"P5 # c\n2 # w\n1\n255\n\x07\x08";
        let img = decode_pgm(bytes).unwrap();
        assert_eq!(img.get(1, 0), 8);
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n0 2\n255\n").is_err());
        assert!(decode_pgm(b"P5\n99999999 99999999\n65535\n").is_err());
    }

    #[test]
    fn png_grayscale() {
        let mut bytes = Vec::new();
        let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(3, 2, vec![1u16, 2, 3, 400, 500, 65535]).unwrap();
        image::DynamicImage::ImageLuma16(buf)
            .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
            .unwrap();
        let img = decode_thermal_image(&bytes).unwrap();
        assert_eq!(img.depth(), BitDepth::Sixteen);
        assert_eq!(img.get(2, 1), 65535);
        assert_eq!(img.get(0, 1), 400);
    }
}
