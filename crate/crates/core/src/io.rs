//! On-disk formats: `I2RT` tensor files and 8-bit binary PGM/PPM images.
//!
//! Tensor file layout (all little-endian):
//!
//! ```text
//! "I2RT" | rank: u8 (= 3) | h: u32 | w: u32 | c: u32 | h·w·c × f32
//! ```
//!
//! Images map pixel `v ∈ [0, 255]` to `v / 127.5 − 1 ∈ [−1, 1]`; writing clamps
//! to `[−1, 1]` and inverts the map with round-half-up.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

pub const TENSOR_MAGIC: &[u8; 4] = b"I2RT";
const HEADER_LEN: usize = 4 + 1 + 3 * 4;

pub fn encode_tensor(t: &Tensor3) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(3);
    for d in [t.height(), t.width(), t.channels()] {
        let d = u32::try_from(d).map_err(|_| Error::format("dims", format!("{d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for (index, &v) in t.as_slice().iter().enumerate() {
        let narrow = v as f32;
        if !narrow.is_finite() {
            return Err(Error::NonFinite { index });
        }
        out.extend_from_slice(&narrow.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor3> {
    if bytes.len() < 4 || &bytes[..4] != TENSOR_MAGIC {
        return Err(Error::format("magic", "expected \"I2RT\""));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::format("header", format!("{} bytes, need {HEADER_LEN}", bytes.len())));
    }
    if bytes[4] != 3 {
        return Err(Error::format("rank", format!("expected 3, got {}", bytes[4])));
    }
    let dim = |i: usize| {
        let at = 5 + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize
    };
    let (h, w, c) = (dim(0), dim(1), dim(2));
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::format("dims", format!("zero dimension in ({h}, {w}, {c})")));
    }
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::format("dims", "element count overflows"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 4 * n {
        let reason = format!("expected {} bytes for {n} floats, got {}", 4 * n, payload.len());
        return Err(Error::format("payload", reason));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Tensor3::from_vec((h, w, c), data)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor3> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

pub fn write_tensor(t: &Tensor3, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_tensor(t)?;
    write_bytes(path.as_ref(), &bytes)
}

pub fn pixel_to_unit(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

pub fn unit_to_pixel(x: f64) -> u8 {
    let x = x.clamp(-1.0, 1.0);
    ((x + 1.0) * 127.5 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn encode_image(t: &Tensor3) -> Result<Vec<u8>> {
    let magic = match t.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::format("channels", format!("images need 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", t.width(), t.height()).into_bytes();
    out.extend(t.as_slice().iter().map(|&x| unit_to_pixel(x)));
    Ok(out)
}

pub fn decode_image(bytes: &[u8]) -> Result<Tensor3> {
    let mut cursor = HeaderCursor { bytes, pos: 0 };
    let magic = cursor.token()?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::format("magic", format!("unsupported netpbm magic {other:?}"))),
    };
    let width = cursor.number("width")?;
    let height = cursor.number("height")?;
    let maxval = cursor.number("maxval")?;
    if maxval != 255 {
        return Err(Error::format("maxval", format!("only 255 supported, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format("dims", format!("zero dimension {width}×{height}")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = cursor.pos + 1;
    let n = width * height * channels;
    let raster = bytes.get(start..start + n).ok_or_else(|| {
        Error::format("payload", format!("expected {n} raster bytes, got {}", bytes.len().saturating_sub(start)))
    })?;
    let data = raster.iter().map(|&v| pixel_to_unit(v)).collect();
    Tensor3::from_vec((height, width, channels), data)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor3> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

pub fn write_image(t: &Tensor3, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_image(t)?;
    write_bytes(path.as_ref(), &bytes)
}

/// Reads a tensor or an image, chosen by file extension (`.pgm`/`.ppm` are images).
pub fn read_any(path: impl AsRef<Path>) -> Result<Tensor3> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm" | "ppm" | "pnm") => read_image(path),
        _ => read_tensor(path),
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn token(&mut self) -> Result<String> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                        self.pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(_) => break,
                None => return Err(Error::format("header", "unexpected end of header")),
            }
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self, field: &'static str) -> Result<usize> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| Error::format(field, format!("not a number: {tok:?}")))
    }
}
