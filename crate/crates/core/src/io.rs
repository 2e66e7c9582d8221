//! Netpbm-family image files and pose lists.
//!
//! * `P6`: 8-bit RGB, values scaled by 255 and clamped;
//! * `PF` / `Pf`: 32-bit float RGB / gray, little-endian, rows stored bottom
//!   to top;
//! * `P5`: 8-bit masks with values `{0, 255}`;
//! * poses: a JSON array of `{"rotation": [9 numbers], "hfov_deg", "vfov_deg"}`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::CameraPose;
use crate::raster::{Image, Mask};

struct Header<'a> {
    magic: &'a [u8],
    fields: Vec<&'a [u8]>,
    body: &'a [u8],
}

/// Splits a netpbm header into its magic, `n` following tokens and the body.
fn parse_header(bytes: &[u8], n: usize) -> Result<Header<'_>> {
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(n + 1);
    while tokens.len() < n + 1 {
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated image header".into()));
        }
        tokens.push(&bytes[start..pos]);
    }
    // Exactly one whitespace byte separates the header from the body.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Format("missing separator after image header".into()));
    }
    Ok(Header {
        magic: tokens[0],
        fields: tokens[1..].to_vec(),
        body: &bytes[pos + 1..],
    })
}

fn field<T: std::str::FromStr>(tok: &[u8], what: &str) -> Result<T> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad {what} in image header")))
}

fn dims(h: &Header<'_>) -> Result<(usize, usize)> {
    let w: usize = field(h.fields[0], "width")?;
    let ht: usize = field(h.fields[1], "height")?;
    if w == 0 || ht == 0 {
        return Err(Error::Format("image dimensions must be positive".into()));
    }
    Ok((w, ht))
}

pub fn encode_ppm(img: &Image) -> Result<Vec<u8>> {
    if img.channels() != 3 {
        return Err(Error::arg("P6 output needs a 3-channel image"));
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let h = parse_header(bytes, 3)?;
    if h.magic != b"P6" {
        return Err(Error::Format("not a P6 file".into()));
    }
    let (w, ht) = dims(&h)?;
    let max: u32 = field(h.fields[2], "maxval")?;
    if max != 255 {
        return Err(Error::Format(format!(
            "only maxval 255 is supported, got {max}"
        )));
    }
    let n = w * ht * 3;
    if h.body.len() < n {
        return Err(Error::Format("P6 body is truncated".into()));
    }
    let data = h.body[..n].iter().map(|&b| b as f32 / 255.0).collect();
    Image::from_vec(w, ht, 3, data)
}

pub fn encode_pfm(img: &Image) -> Result<Vec<u8>> {
    let magic = match img.channels() {
        3 => "PF",
        1 => "Pf",
        c => {
            return Err(Error::arg(format!(
                "PF output needs 1 or 3 channels, got {c}"
            )))
        }
    };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", img.width(), img.height()).into_bytes();
    let row_len = img.width() * img.channels();
    for row in img.data().chunks_exact(row_len).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Image> {
    let h = parse_header(bytes, 3)?;
    let channels = match h.magic {
        b"PF" => 3,
        b"Pf" => 1,
        _ => return Err(Error::Format("not a PF/Pf file".into())),
    };
    let (w, ht) = dims(&h)?;
    let scale: f32 = field(h.fields[2], "scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Format("PF scale must be a nonzero number".into()));
    }
    let little = scale < 0.0;
    let row_len = w * channels;
    if h.body.len() < row_len * ht * 4 {
        return Err(Error::Format("PF body is truncated".into()));
    }
    let mut data = Vec::with_capacity(row_len * ht);
    for r in (0..ht).rev() {
        let row = &h.body[r * row_len * 4..(r + 1) * row_len * 4];
        for b in row.chunks_exact(4) {
            let b = [b[0], b[1], b[2], b[3]];
            data.push(if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            });
        }
    }
    Image::from_vec(w, ht, channels, data)
}

pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.data().iter().map(|&m| if m != 0 { 255u8 } else { 0 }));
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    let h = parse_header(bytes, 3)?;
    if h.magic != b"P5" {
        return Err(Error::Format("not a P5 file".into()));
    }
    let (w, ht) = dims(&h)?;
    let max: u32 = field(h.fields[2], "maxval")?;
    if max != 255 {
        return Err(Error::Format(format!("mask maxval must be 255, got {max}")));
    }
    if h.body.len() < w * ht {
        return Err(Error::Format("P5 body is truncated".into()));
    }
    let data = h.body[..w * ht]
        .iter()
        .map(|&b| match b {
            0 => Ok(0),
            255 => Ok(1),
            v => Err(Error::Format(format!(
                "mask value {v} is neither 0 nor 255"
            ))),
        })
        .collect::<Result<Vec<u8>>>()?;
    Mask::from_vec(w, ht, data)
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    Ok(fs::write(path, encode_ppm(img)?)?)
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    decode_ppm(&fs::read(path)?)
}

pub fn write_pfm(path: &Path, img: &Image) -> Result<()> {
    Ok(fs::write(path, encode_pfm(img)?)?)
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    decode_pfm(&fs::read(path)?)
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    Ok(fs::write(path, encode_mask(mask))?)
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    decode_mask(&fs::read(path)?)
}

/// Reads a perspective frame, choosing the decoder by extension.
pub fn read_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => read_pfm(path),
        Some("ppm") => read_ppm(path),
        _ => Err(Error::arg(format!(
            "unsupported image file {}",
            path.display()
        ))),
    }
}

pub fn read_poses(path: &Path) -> Result<Vec<CameraPose>> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn write_poses(path: &Path, poses: &[CameraPose]) -> Result<()> {
    Ok(fs::write(path, serde_json::to_vec_pretty(poses)?)?)
}
