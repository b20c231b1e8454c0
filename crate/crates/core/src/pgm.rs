//! Binary PGM (`P5`) encoding for images, label maps and masks.
//!
//! Images are written 16-bit (`maxval 65535`, big-endian samples) with
//! `value = round(v * 65535)`. Label maps are 8-bit with the class id as the
//! sample. Masks and preview images are 8-bit scaled to `0..=255`.

use std::fs;
use std::path::Path;

use crate::displacement::Mask;
use crate::error::{Error, Result};
use crate::grid::{Grid2D, LabelMap};

fn header(width: usize, height: usize, maxval: u32) -> Vec<u8> {
    format!("P5\n{width} {height}\n{maxval}\n").into_bytes()
}

/// 16-bit encoding of a `[0, 1]` image.
pub fn encode_image(img: &Grid2D) -> Result<Vec<u8>> {
    if !img.is_normalized() {
        return Err(Error::param("image", "16-bit PGM needs values in [0, 1]"));
    }
    let mut out = header(img.width(), img.height(), 65535);
    for &v in img.values() {
        out.extend_from_slice(&((v * 65535.0).round() as u16).to_be_bytes());
    }
    Ok(out)
}

pub fn encode_labels(y: &LabelMap) -> Vec<u8> {
    let mut out = header(y.width(), y.height(), 255);
    out.extend_from_slice(y.labels());
    out
}

pub fn encode_mask(m: &Mask) -> Vec<u8> {
    let mut out = header(m.width(), m.height(), 255);
    out.extend(m.bits().iter().map(|&b| b * 255));
    out
}

/// 8-bit preview: values clamped to `[0, 1]` and scaled to `0..=255`.
pub fn encode_preview(img: &Grid2D) -> Vec<u8> {
    let mut out = header(img.width(), img.height(), 255);
    out.extend(img.values().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

struct Raster<'a> {
    width: usize,
    height: usize,
    maxval: u32,
    data: &'a [u8],
    data_offset: usize,
}

fn parse(bytes: &[u8]) -> Result<Raster<'_>> {
    let err = |offset: usize, reason: &str| Error::Parse {
        offset,
        reason: reason.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(err(0, "missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for (n, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(err(pos, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(err(pos, "expected a decimal header field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are ascii");
        *field = text.parse().map_err(|_| err(start, "header field out of range"))?;
        if n == 2 && !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(err(pos, "missing whitespace after maxval"));
        }
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(err(3, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(err(pos - 1, "maxval must be in 1..=65535"));
    }
    let sample = if maxval > 255 { 2 } else { 1 };
    let need = width as usize * height as usize * sample;
    let data = &bytes[pos..];
    if data.len() < need {
        return Err(err(bytes.len(), &format!("truncated raster: need {need} bytes, have {}", data.len())));
    }
    if data.len() > need {
        return Err(err(pos + need, "trailing bytes after raster"));
    }
    Ok(Raster {
        width: width as usize,
        height: height as usize,
        maxval,
        data,
        data_offset: pos,
    })
}

impl Raster<'_> {
    fn samples(&self) -> Vec<u32> {
        if self.maxval > 255 {
            self.data
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
                .collect()
        } else {
            self.data.iter().map(|&b| b as u32).collect()
        }
    }
}

/// Decodes to `[0, 1]` by dividing samples by maxval.
pub fn decode_image(bytes: &[u8]) -> Result<Grid2D> {
    let r = parse(bytes)?;
    let maxval = r.maxval as f64;
    let samples = r.samples();
    if let Some(i) = samples.iter().position(|&s| s > r.maxval) {
        let width = if r.maxval > 255 { 2 } else { 1 };
        return Err(Error::Parse {
            offset: r.data_offset + i * width,
            reason: "sample exceeds maxval".into(),
        });
    }
    Grid2D::new(r.height, r.width, samples.into_iter().map(|s| s as f64 / maxval).collect())
}

pub fn decode_labels(bytes: &[u8], num_classes: usize) -> Result<LabelMap> {
    let r = parse(bytes)?;
    if r.maxval > 255 {
        return Err(Error::Parse {
            offset: 0,
            reason: "label maps must be 8-bit".into(),
        });
    }
    if let Some(i) = r.data.iter().position(|&b| b as usize >= num_classes) {
        return Err(Error::Parse {
            offset: r.data_offset + i,
            reason: format!("label {} out of range for {num_classes} classes", r.data[i]),
        });
    }
    LabelMap::new(r.height, r.width, num_classes, r.data.to_vec())
}

pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    let r = parse(bytes)?;
    let bits = r.samples().into_iter().map(|s| (s > 0) as u8).collect();
    Mask::new(r.height, r.width, bits)
}

pub fn save_image(path: impl AsRef<Path>, img: &Grid2D) -> Result<()> {
    fs::write(path, encode_image(img)?)?;
    Ok(())
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Grid2D> {
    decode_image(&fs::read(path)?)
}

pub fn save_labels(path: impl AsRef<Path>, y: &LabelMap) -> Result<()> {
    fs::write(path, encode_labels(y))?;
    Ok(())
}

pub fn load_labels(path: impl AsRef<Path>, num_classes: usize) -> Result<LabelMap> {
    decode_labels(&fs::read(path)?, num_classes)
}
