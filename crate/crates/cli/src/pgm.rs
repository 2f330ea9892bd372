//! Binary PGM (`P5`) images, with binary PPM (`P6`) accepted on input and
//! converted to gray by averaging the channels.

use far_core::shapewarp::Texture;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PgmError {
    #[error("unsupported image magic {0:?}, expected \"P5\" or \"P6\"")]
    Magic(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("pixel data truncated: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|b| *b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, PgmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PgmError::Header(format!("missing or invalid {what}")))
    }
}

/// Decode to intensities in `[0, 1]` (value divided by maxval).
pub fn decode(bytes: &[u8]) -> Result<Texture, PgmError> {
    let magic = bytes.get(..2).unwrap_or(bytes);
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(PgmError::Magic(String::from_utf8_lossy(magic).into_owned())),
    };
    let mut c = Cursor { bytes, pos: 2 };
    let width = c.number("width")?;
    let height = c.number("height")?;
    let maxval = c.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PgmError::Header(format!("empty image {width}x{height}")));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(PgmError::Header(format!(
            "maxval {maxval} outside 1..=65535"
        )));
    }
    if !bytes.get(c.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(PgmError::Header("no whitespace after maxval".into()));
    }
    let data = &bytes[c.pos + 1..];
    let depth = if maxval < 256 { 1 } else { 2 };
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels * depth))
        .ok_or_else(|| PgmError::Header("image dimensions overflow".into()))?;
    if data.len() < expected {
        return Err(PgmError::Truncated {
            expected,
            actual: data.len(),
        });
    }
    let sample = |i: usize| -> f64 {
        let v = if depth == 1 {
            data[i] as u32
        } else {
            u32::from(data[2 * i]) << 8 | u32::from(data[2 * i + 1])
        };
        v.min(maxval as u32) as f64
    };
    let scale = 1.0 / (maxval as f64 * channels as f64);
    Ok(Texture::from_fn(height, width, |y, x| {
        let base = (y * width + x) * channels;
        (0..channels).map(|k| sample(base + k)).sum::<f64>() * scale
    }))
}

/// Encode as 8-bit `P5`, rounding after clamping to `[0, 1]`.
pub fn encode(image: &Texture) -> Vec<u8> {
    let (h, w) = image.shape();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h);
    for y in 0..h {
        for x in 0..w {
            let v = image[(y, x)];
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            out.push((v * 255.0).round() as u8);
        }
    }
    out
}

pub fn read_image(path: &std::path::Path) -> anyhow::Result<Texture> {
    let bytes = std::fs::read(path)?;
    Ok(decode(&bytes)?)
}

pub fn write_image(image: &Texture, path: &std::path::Path) -> anyhow::Result<()> {
    far_core::subspace::write_atomic(path, &encode(image))?;
    Ok(())
}
