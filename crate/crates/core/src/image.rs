//! Grayscale images, pixel lookup under discrete transforms, and binary PGM I/O.
//!
//! Intensities live in `[0, 1]`. PGM files store them as bytes (`maxval`
//! 255); loading divides by 255 exactly and saving quantizes with
//! `round(v * 255)`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, PgmError, Result};
use crate::transform::Transform;

/// Integer pixel coordinate, `x` is the column and `y` the row (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PixelCoord {
    pub x: i64,
    pub y: i64,
}

impl PixelCoord {
    pub const fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }
}

/// Row-major grayscale image with real intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    /// Builds an image, checking the buffer length and the intensity range.
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::contract("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::contract(format!(
                "pixel buffer has {} entries, expected {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image from a per-pixel function, clamping into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Intensity at an in-bounds `(x, y)`. Panics when out of bounds.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn contains(&self, q: PixelCoord) -> bool {
        q.x >= 0 && q.y >= 0 && (q.x as u64) < self.width as u64 && (q.y as u64) < self.height as u64
    }

    /// Intensity at `q`, or `None` outside the image domain.
    #[inline]
    pub fn sample(&self, q: PixelCoord) -> Option<f64> {
        if self.contains(q) {
            Some(self.pixels[q.y as usize * self.width + q.x as usize])
        } else {
            None
        }
    }

    /// Sets a pixel, clamping the value into `[0, 1]`.
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.pixels[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    /// Copies the `w x h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<GrayImage> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::contract(format!(
                "crop {w}x{h} at ({x0},{y0}) exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            pixels.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(GrayImage {
            width: w,
            height: h,
            pixels,
        })
    }

    /// Mean and population standard deviation of all intensities.
    pub fn mean_std(&self) -> (f64, f64) {
        mean_std(&self.pixels)
    }

    /// Every pixel rounded onto the 1/255 grid, i.e. what a PGM round trip yields.
    pub fn quantized(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .map(|&v| f64::from(quantize(v)) / 255.0)
                .collect(),
        }
    }

    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|&v| quantize(v)));
        out
    }

    pub fn from_pgm_bytes(data: &[u8]) -> std::result::Result<GrayImage, PgmError> {
        decode_pgm(data)
    }
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[inline]
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn decode_pgm(data: &[u8]) -> std::result::Result<GrayImage, PgmError> {
    if data.len() < 2 || &data[..2] != b"P5" {
        return Err(PgmError::BadMagic);
    }
    let mut pos = 2;
    let width = read_header_field(data, &mut pos, "width")?;
    let height = read_header_field(data, &mut pos, "height")?;
    let maxval = read_header_field(data, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(PgmError::MalformedHeader("zero dimension".into()));
    }
    if maxval != 255 {
        return Err(PgmError::UnsupportedMaxval(maxval));
    }
    // exactly one whitespace byte separates the header from the raster
    match data.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(PgmError::MalformedHeader(
                "missing whitespace after maxval".into(),
            ))
        }
    }
    let expected = width as usize * height as usize;
    let payload = &data[pos..];
    if payload.len() < expected {
        return Err(PgmError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let pixels = payload[..expected]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    Ok(GrayImage {
        width: width as usize,
        height: height as usize,
        pixels,
    })
}

fn read_header_field(
    data: &[u8],
    pos: &mut usize,
    name: &str,
) -> std::result::Result<u32, PgmError> {
    // skip whitespace and comment lines
    loop {
        match data.get(*pos) {
            Some(b'#') => {
                while let Some(&b) = data.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(PgmError::MalformedHeader(format!("missing {name}"))),
        }
    }
    let start = *pos;
    while data.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(PgmError::MalformedHeader(format!("{name} is not a number")));
    }
    std::str::from_utf8(&data[start..*pos])
        .ok()
        .and_then(|s| s.parse::<u32>().ok())
        .ok_or_else(|| PgmError::MalformedHeader(format!("{name} out of range")))
}

/// Reads a binary (P5) PGM with maxval 255.
pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_pgm(&data).map_err(|source| Error::Pgm {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a binary (P5) PGM, quantizing with `round(v * 255)`.
pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, img.to_pgm_bytes()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Photometric residual `|T(p) - I(f(p))|`; `+inf` when `f(p)` leaves the image.
pub fn residual(
    template: &GrayImage,
    image: &GrayImage,
    f: &Transform,
    p: PixelCoord,
) -> Result<f64> {
    let tv = template.sample(p).ok_or_else(|| {
        Error::contract(format!("pixel ({}, {}) outside template domain", p.x, p.y))
    })?;
    Ok(match image.sample(f.apply(p)) {
        Some(iv) => (tv - iv).abs(),
        None => f64::INFINITY,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_by_two() -> GrayImage {
        GrayImage::from_pgm_bytes(b"P5\n2 2\n255\n\x00\xff\x80\x40").unwrap()
    }

    #[test]
    fn decodes_reference_bytes() {
        let img = two_by_two();
        assert_eq!(img.width(), 2);
        assert_eq!(img.height(), 2);
        assert_eq!(img.pixels(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn truncated_payload_is_reported() {
        let mut data = b"P5\n4 4\n255\n".to_vec();
        data.extend_from_slice(&[7u8; 8]);
        assert_eq!(
            GrayImage::from_pgm_bytes(&data),
            Err(PgmError::TruncatedPayload {
                expected: 16,
                found: 8
            })
        );
    }

    #[test]
    fn sixteen_bit_maxval_is_rejected() {
        let mut data = b"P5\n1 1\n65535\n".to_vec();
        data.extend_from_slice(&[0, 0]);
        assert_eq!(
            GrayImage::from_pgm_bytes(&data),
            Err(PgmError::UnsupportedMaxval(65535))
        );
    }

    #[test]
    fn header_errors_are_distinct() {
        assert_eq!(GrayImage::from_pgm_bytes(b"P2\n1 1\n255\n0"), Err(PgmError::BadMagic));
        assert!(matches!(
            GrayImage::from_pgm_bytes(b"P5\nx 1\n255\n\0"),
            Err(PgmError::MalformedHeader(_))
        ));
        assert!(matches!(
            GrayImage::from_pgm_bytes(b"P5\n1 1\n255"),
            Err(PgmError::MalformedHeader(_))
        ));
        // comments are legal in headers
        let img = GrayImage::from_pgm_bytes(b"P5\n# note\n1 1\n255\n\x05").unwrap();
        assert_eq!(img.pixels(), &[5.0 / 255.0]);
    }

    #[test]
    fn quantization_rule() {
        let half = GrayImage::new(1, 1, vec![0.5]).unwrap();
        assert_eq!(half.to_pgm_bytes().last(), Some(&128));
        let zero = GrayImage::new(1, 1, vec![0.0]).unwrap();
        assert_eq!(zero.to_pgm_bytes().last(), Some(&0));
        assert_eq!(half.to_pgm_bytes()[..11], *b"P5\n1 1\n255\n");
    }

    #[test]
    fn file_round_trip_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let img = two_by_two();
        save_pgm(&img, &path).unwrap();
        assert_eq!(load_pgm(&path).unwrap(), img);
        let err = load_pgm(dir.path().join("missing.pgm")).unwrap_err();
        assert!(err.is_io());
    }

    #[test]
    fn sample_corners_and_outside() {
        let img = two_by_two();
        assert_eq!(img.sample(PixelCoord::new(0, 0)), Some(0.0));
        assert_eq!(img.sample(PixelCoord::new(1, 1)), Some(64.0 / 255.0));
        assert_eq!(img.sample(PixelCoord::new(2, 0)), None);
        assert_eq!(img.sample(PixelCoord::new(-1, 0)), None);
        assert_eq!(img.sample(PixelCoord::new(i64::MIN, i64::MAX)), None);
    }

    #[test]
    fn rejects_out_of_range_intensities() {
        assert!(GrayImage::new(1, 1, vec![1.5]).is_err());
        assert!(GrayImage::new(2, 1, vec![0.5]).is_err());
    }

    #[test]
    fn residual_rules() {
        let t = GrayImage::new(1, 1, vec![0.3]).unwrap();
        let i = GrayImage::new(2, 1, vec![0.5, 0.3]).unwrap();
        let p = PixelCoord::new(0, 0);
        let r = residual(&t, &i, &Transform::translation(0, 0), p).unwrap();
        assert!((r - 0.2).abs() < 1e-12);
        assert_eq!(residual(&t, &i, &Transform::translation(1, 0), p).unwrap(), 0.0);
        assert_eq!(
            residual(&t, &i, &Transform::translation(5, 0), p).unwrap(),
            f64::INFINITY
        );
        assert!(residual(&t, &i, &Transform::translation(0, 0), PixelCoord::new(1, 0)).is_err());
    }

    proptest! {
        #[test]
        fn save_then_load_equals_quantize(
            w in 1usize..9, h in 1usize..9, seed in any::<u64>()
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img = GrayImage::from_fn(w, h, |_, _| rng.random::<f64>());
            let back = GrayImage::from_pgm_bytes(&img.to_pgm_bytes()).unwrap();
            prop_assert_eq!(&back, &img.quantized());
            for (a, b) in back.pixels().iter().zip(img.pixels()) {
                prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
            }
            // on-grid images survive exactly
            let again = GrayImage::from_pgm_bytes(&back.to_pgm_bytes()).unwrap();
            prop_assert_eq!(again, back);
        }

        #[test]
        fn sample_is_total(x in any::<i64>(), y in any::<i64>()) {
            let img = GrayImage::new(3, 2, vec![0.0; 6]).unwrap();
            let inside = (0..3).contains(&x) && (0..2).contains(&y);
            prop_assert_eq!(img.sample(PixelCoord::new(x, y)).is_some(), inside);
        }
    }
}
