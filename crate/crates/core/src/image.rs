//! Grayscale raster and PGM (P5) I/O.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major luma raster. Samples are nominally in `[0, 255]` but may leave
/// that range between processing steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} samples for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Clamp to `[0, 255]`, returning the clamped image and the number of
    /// samples that were out of range.
    pub fn clamped(&self) -> (Image, usize) {
        let mut hits = 0;
        let data = self
            .data
            .iter()
            .map(|&v| {
                if !(0.0..=255.0).contains(&v) {
                    hits += 1;
                }
                v.clamp(0.0, 255.0)
            })
            .collect();
        (Image { width: self.width, height: self.height, data }, hits)
    }

    /// Round and clamp to 8-bit levels, as stored on disk.
    pub fn quantized(&self) -> Image {
        let data = self.data.iter().map(|&v| v.round().clamp(0.0, 255.0)).collect();
        Image { width: self.width, height: self.height, data }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::from_vec(width, height, bytes.iter().map(|&b| b as f64).collect())
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        decode_pgm(&bytes)
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = encode_pgm(self);
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| Error::io(path, e))
    }
}

/// Encode as binary PGM with maxval 255.
pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_u8());
    out
}

/// Decode a binary PGM. 16-bit files are scaled down to 8-bit range.
pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos)?;
    if magic != "P5" {
        return Err(Error::Format(format!("expected P5 magic, found {magic:?}")));
    }
    let width = header_number(bytes, &mut pos)?;
    let height = header_number(bytes, &mut pos)?;
    let maxval = header_number(bytes, &mut pos)?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("bad PGM header {width}x{height} maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height;
    let raster = &bytes[pos.min(bytes.len())..];
    let data: Vec<f64> = if maxval < 256 {
        if raster.len() < n {
            return Err(Error::Format("truncated PGM raster".into()));
        }
        let scale = 255.0 / maxval as f64;
        raster[..n]
            .iter()
            .map(|&b| if maxval == 255 { b as f64 } else { (b as f64 * scale).round() })
            .collect()
    } else {
        if raster.len() < 2 * n {
            return Err(Error::Format("truncated PGM raster".into()));
        }
        let scale = 255.0 / maxval as f64;
        raster[..2 * n]
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 * scale).round())
            .collect()
    };
    Image::from_vec(width, height, data)
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
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
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PGM header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn header_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    tok.parse().map_err(|_| Error::Format(format!("bad PGM header field {tok:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_is_byte_exact() {
        let img = Image::from_fn(7, 5, |x, y| ((x * 37 + y * 11) % 256) as f64);
        let bytes = encode_pgm(&img);
        let back = decode_pgm(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(encode_pgm(&back), bytes);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n2 1\n# another\n255\n".to_vec();
        bytes.extend([3u8, 250]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.data, vec![3.0, 250.0]);
    }

    #[test]
    fn rejects_ascii_pgm() {
        assert!(decode_pgm(b"P2\n1 1\n255\n0\n").is_err());
    }

    #[test]
    fn truncated_raster_is_an_error() {
        assert!(decode_pgm(b"P5\n4 4\n255\n\x01\x02").is_err());
    }

    #[test]
    fn sixteen_bit_is_rescaled() {
        let mut bytes = b"P5 2 1 65535\n".to_vec();
        bytes.extend([0xff, 0xff, 0x00, 0x00]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.data, vec![255.0, 0.0]);
    }

    #[test]
    fn clamp_counts_out_of_range() {
        let img = Image::from_vec(3, 1, vec![-1.0, 100.0, 256.0]).unwrap();
        let (c, hits) = img.clamped();
        assert_eq!(hits, 2);
        assert_eq!(c.data, vec![0.0, 100.0, 255.0]);
    }
}
