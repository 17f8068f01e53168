//! Binary netpbm IO: P6 (RGB) and P5 (grayscale), maxval 255, with `#`
//! comments allowed in the header.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decoded 8-bit raster, rows interleaved (RGB for 3 channels).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

pub fn read_image(path: &Path) -> Result<Raster> {
    parse_pnm(&fs::read(path)?)
}

pub fn parse_pnm(bytes: &[u8]) -> Result<Raster> {
    if bytes.len() < 2 {
        return Err(Error::Parse {
            offset: 0,
            msg: "missing magic".into(),
        });
    }
    let channels = match &bytes[..2] {
        b"P6" => 3,
        b"P5" => 1,
        magic => {
            return Err(Error::Parse {
                offset: 0,
                msg: format!(
                    "unsupported magic {:?}",
                    String::from_utf8_lossy(magic)
                ),
            })
        }
    };
    let mut pos = 2;
    let width = read_header_int(bytes, &mut pos)?;
    let height = read_header_int(bytes, &mut pos)?;
    let maxval_at = pos;
    let maxval = read_header_int(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(Error::Parse {
            offset: maxval_at,
            msg: format!("unsupported maxval {maxval} (only 255)"),
        });
    }
    if width == 0 || height == 0 {
        return Err(Error::Parse {
            offset: 2,
            msg: format!("degenerate dimensions {width}x{height}"),
        });
    }
    // Exactly one whitespace byte separates the header from the payload.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(Error::Parse {
                offset: pos,
                msg: "expected single whitespace byte before payload".into(),
            })
        }
    }
    let expected = width * height * channels;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::Parse {
            offset: bytes.len(),
            msg: format!(
                "truncated payload: expected {expected} bytes, got {}",
                payload.len()
            ),
        });
    }
    Ok(Raster {
        channels,
        height,
        width,
        data: payload[..expected].to_vec(),
    })
}

fn read_header_int(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while matches!(bytes.get(*pos), Some(b) if b.is_ascii_digit()) {
        *pos += 1;
    }
    if *pos == start {
        return Err(Error::Parse {
            offset: start,
            msg: "expected integer in header".into(),
        });
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or(Error::Parse {
            offset: start,
            msg: "integer out of range".into(),
        })
}

fn quantize(v: f32) -> u8 {
    // Round half up; inputs are validated to [0,1].
    (v * 255.0 + 0.5).floor() as u8
}

fn check_unit_range(data: &[f32]) -> Result<()> {
    for &v in data {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Contract(format!(
                "pixel value {v} outside [0,1]"
            )));
        }
    }
    Ok(())
}

/// Write a `[1,H,W]` or `[H,W]` map in `[0,1]` as binary PGM.
pub fn write_pgm(path: &Path, map: &Tensor<f32>) -> Result<()> {
    let (h, w) = map_dims(map.shape())?;
    let data = map.data();
    check_unit_range(&data)?;
    let mut out = Vec::with_capacity(data.len() + 32);
    write!(out, "P5\n{} {}\n255\n", w, h)?;
    out.extend(data.iter().map(|&v| quantize(v)));
    fs::write(path, out)?;
    Ok(())
}

/// Write a `[3,H,W]` image in `[0,1]` as binary PPM.
pub fn write_ppm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Shape(format!(
            "write_ppm expects [3,H,W], got {:?}",
            s
        )));
    }
    let (h, w) = (s[1], s[2]);
    let data = image.data();
    check_unit_range(&data)?;
    let plane = h * w;
    let mut out = Vec::with_capacity(3 * plane + 32);
    write!(out, "P6\n{} {}\n255\n", w, h)?;
    for p in 0..plane {
        out.push(quantize(data[p]));
        out.push(quantize(data[plane + p]));
        out.push(quantize(data[2 * plane + p]));
    }
    fs::write(path, out)?;
    Ok(())
}

fn map_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [1, h, w] => Ok((*h, *w)),
        [h, w] => Ok((*h, *w)),
        other => Err(Error::Shape(format!(
            "expected a single-channel map, got {:?}",
            other
        ))),
    }
}
