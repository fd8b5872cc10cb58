//! 8-bit binary PGM (P5) encoding for grayscale images.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Quantizes a `[0, 1]` intensity to the 8-bit grid.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn dequantize(b: u8) -> f32 {
    b as f32 / 255.0
}

/// Encodes an `H×W×1` tensor with values in `[0, 1]`.
pub fn encode(image: &Tensor) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.len() != 3 || s[2] != 1 {
        return Err(Error::shape(format!("PGM needs an H×W×1 image, got {s:?}")));
    }
    let mut out = format!("P5\n{} {}\n255\n", s[1], s[0]).into_bytes();
    out.extend(image.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

/// Decodes a P5 file with maxval ≤ 255 into an `H×W×1` tensor in `[0, 1]`.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let mut fields = [0usize; 3];
    let magic =
        next_token(bytes, &mut pos).ok_or_else(|| Error::Format("PGM: empty file".into()))?;
    if magic != b"P5" {
        return Err(Error::Format(format!(
            "PGM: expected magic P5, got {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    for (slot, name) in fields.iter_mut().zip(["width", "height", "maxval"]) {
        let tok = next_token(bytes, &mut pos)
            .ok_or_else(|| Error::Format(format!("PGM: missing {name}")))?;
        *slot = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("PGM: bad {name}")))?;
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(Error::Format("PGM: zero extent".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!(
            "PGM: only 8-bit maxval is supported, got {maxval}"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let raster = bytes
        .get(pos..pos + w * h)
        .ok_or_else(|| Error::Format(format!("PGM: raster truncated, need {} bytes", w * h)))?;
    let data = if maxval == 255 {
        raster.iter().map(|&b| dequantize(b)).collect()
    } else {
        raster
            .iter()
            .map(|&b| (b as f32 / maxval as f32).min(1.0))
            .collect()
    };
    Tensor::new(vec![h, w, 1], data)
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

/// Nearest-neighbour resize of an `H×W×C` image.
pub fn resize_nearest(image: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    image.expect_rank(3, "resize input")?;
    let (h, w, c) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    if height == 0 || width == 0 {
        return Err(Error::shape("resize target must be positive"));
    }
    let src = image.data();
    let mut out = Vec::with_capacity(height * width * c);
    for y in 0..height {
        let sy = y * h / height;
        for x in 0..width {
            let sx = x * w / width;
            out.extend_from_slice(&src[(sy * w + sx) * c..][..c]);
        }
    }
    Tensor::new(vec![height, width, c], out)
}
