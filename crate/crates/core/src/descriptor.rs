//! Region covariance descriptors from grayscale images.
//!
//! Each pixel is lifted to a small feature vector — intensity plus absolute
//! first and second derivatives in both directions — and a rectangular region
//! is summarized by the covariance matrix of those vectors. Covariances of
//! nearby texture patches differ smoothly, are modestly sized (`5 x 5` here),
//! and land exactly on the SPD cone after a tiny ridge, which makes them the
//! standard test bed for SPD-aware coding.
//!
//! Images come in through a deliberately small PGM (P2/P5) reader so the
//! pipeline has no decoding dependencies.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::spd::SpdMatrix;

/// Feature channels per pixel: intensity, |dI/dx|, |dI/dy|, |d2I/dx2|,
/// |d2I/dy2|.
pub const FEATURE_CHANNELS: usize = 5;

/// Ridge scale added to every region covariance: `eps * max(trace(C), 1) * I`.
pub const REGULARIZER_EPS: f64 = 1e-6;

/// A grayscale image with intensities normalized to `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(
                "image dimensions must be positive".into(),
            ));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                got: pixels.len(),
            });
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
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

    pub fn pixel(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Pixel with indices clamped to the image (replicated borders).
    fn pixel_clamped(&self, x: isize, y: isize) -> f64 {
        let xi = x.clamp(0, self.width as isize - 1) as usize;
        let yi = y.clamp(0, self.height as isize - 1) as usize;
        self.pixels[yi * self.width + xi]
    }
}

/// Whitespace/comment-aware tokenizer over a PGM header (and P2 raster).
struct PgmTokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PgmTokens<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        PgmTokens { bytes, pos: 0 }
    }

    fn skip_filler(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8]> {
        self.skip_filler();
        let start = self.pos;
        while self.pos < self.bytes.len()
            && !self.bytes[self.pos].is_ascii_whitespace()
            && self.bytes[self.pos] != b'#'
        {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::InvalidParameter(
                "unexpected end of PGM header".into(),
            ));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<u32> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "malformed number {:?} in PGM data",
                    String::from_utf8_lossy(tok)
                ))
            })
    }
}

/// Parses a PGM (P2 ASCII or P5 binary) byte stream. Sample values are
/// normalized by the declared maximum; 16-bit P5 samples are big-endian.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut toks = PgmTokens::new(bytes);
    let magic = toks.token()?;
    let binary = match magic {
        b"P2" => false,
        b"P5" => true,
        other => {
            return Err(Error::InvalidParameter(format!(
                "unsupported PGM magic {:?} (want P2 or P5)",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = toks.number()? as usize;
    let height = toks.number()? as usize;
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter(
            "image dimensions must be positive".into(),
        ));
    }
    let maxval = toks.number()?;
    if maxval == 0 || maxval > 65_535 {
        return Err(Error::InvalidParameter(format!(
            "PGM maxval {maxval} outside 1..=65535"
        )));
    }
    let count = width * height;
    let scale = f64::from(maxval);
    let mut pixels = Vec::with_capacity(count);
    if binary {
        // Exactly one whitespace byte separates the header from the raster.
        if toks.pos >= bytes.len() || !bytes[toks.pos].is_ascii_whitespace() {
            return Err(Error::InvalidParameter(
                "P5 header must end with a whitespace byte".into(),
            ));
        }
        let raster = &bytes[toks.pos + 1..];
        let wide = maxval > 255;
        let needed = count * if wide { 2 } else { 1 };
        if raster.len() < needed {
            return Err(Error::InvalidParameter(format!(
                "P5 raster truncated: need {needed} bytes, have {}",
                raster.len()
            )));
        }
        for i in 0..count {
            let raw = if wide {
                u32::from(u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]))
            } else {
                u32::from(raster[i])
            };
            if raw > maxval {
                return Err(Error::InvalidParameter(format!(
                    "P5 sample {raw} exceeds maxval {maxval}"
                )));
            }
            pixels.push(f64::from(raw) / scale);
        }
    } else {
        for _ in 0..count {
            let raw = toks.number()?;
            if raw > maxval {
                return Err(Error::InvalidParameter(format!(
                    "P2 sample {raw} exceeds maxval {maxval}"
                )));
            }
            pixels.push(f64::from(raw) / scale);
        }
    }
    GrayImage::new(width, height, pixels)
}

/// Reads and parses a PGM file.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)
        .map_err(|e| Error::InvalidParameter(format!("cannot read {}: {e}", path.display())))?;
    parse_pgm(&bytes)
}

/// Per-pixel feature channels of one image, each stored row-major.
#[derive(Debug, Clone)]
pub struct FeatureStack {
    width: usize,
    height: usize,
    channels: [Vec<f64>; FEATURE_CHANNELS],
}

impl FeatureStack {
    /// Builds a stack from raw channel planes (each `width * height` long).
    /// Mostly useful for constructing exact test fixtures.
    pub fn from_channels(
        width: usize,
        height: usize,
        channels: [Vec<f64>; FEATURE_CHANNELS],
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(
                "feature stack dimensions must be positive".into(),
            ));
        }
        for c in &channels {
            if c.len() != width * height {
                return Err(Error::DimensionMismatch {
                    expected: width * height,
                    got: c.len(),
                });
            }
        }
        Ok(FeatureStack {
            width,
            height,
            channels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn value(&self, c: usize, x: usize, y: usize) -> f64 {
        self.channels[c][y * self.width + x]
    }
}

/// Computes the five feature channels. Derivatives are central differences
/// with replicated borders, taken in absolute value.
pub fn compute_features(image: &GrayImage) -> FeatureStack {
    let w = image.width();
    let h = image.height();
    let n = w * h;
    let mut channels: [Vec<f64>; FEATURE_CHANNELS] = std::array::from_fn(|_| vec![0.0; n]);
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let (xi, yi) = (x as isize, y as isize);
            let center = image.pixel(x, y);
            let left = image.pixel_clamped(xi - 1, yi);
            let right = image.pixel_clamped(xi + 1, yi);
            let up = image.pixel_clamped(xi, yi - 1);
            let down = image.pixel_clamped(xi, yi + 1);
            channels[0][idx] = center;
            channels[1][idx] = ((right - left) / 2.0).abs();
            channels[2][idx] = ((down - up) / 2.0).abs();
            channels[3][idx] = (right - 2.0 * center + left).abs();
            channels[4][idx] = (down - 2.0 * center + up).abs();
        }
    }
    FeatureStack {
        width: w,
        height: h,
        channels,
    }
}

/// Covariance of the feature vectors over the rectangle with corner
/// `(x0, y0)` and size `w x h` (at least two pixels), computed in two passes
/// (means, then centered outer products, normalized by `n - 1`) and
/// regularized with `eps * max(trace(C), 1) * I`.
pub fn region_covariance(
    stack: &FeatureStack,
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    eps: f64,
) -> Result<SpdMatrix> {
    if w == 0 || h == 0 || w * h < 2 {
        return Err(Error::InvalidParameter(
            "covariance region must contain at least two pixels".into(),
        ));
    }
    if x0 + w > stack.width() || y0 + h > stack.height() {
        return Err(Error::InvalidParameter(format!(
            "region {w}x{h}+{x0}+{y0} exceeds the {}x{} stack",
            stack.width(),
            stack.height()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "covariance ridge must be positive, got {eps}"
        )));
    }
    let n = (w * h) as f64;
    let k = FEATURE_CHANNELS;
    let mut mean = [0.0f64; FEATURE_CHANNELS];
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            for (c, m) in mean.iter_mut().enumerate() {
                *m += stack.value(c, x, y);
            }
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = DMatrix::zeros(k, k);
    let mut dev = [0.0f64; FEATURE_CHANNELS];
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            for (c, d) in dev.iter_mut().enumerate() {
                *d = stack.value(c, x, y) - mean[c];
            }
            for i in 0..k {
                for j in i..k {
                    cov[(i, j)] += dev[i] * dev[j];
                }
            }
        }
    }
    cov /= n - 1.0;
    for i in 0..k {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    let ridge = eps * cov.trace().max(1.0);
    for i in 0..k {
        cov[(i, i)] += ridge;
    }
    SpdMatrix::from_computed(cov)
}

/// Splits the stack into non-overlapping `block x block` tiles (the stack
/// must tile exactly) and returns one descriptor per tile, row-major.
pub fn extract_grid(stack: &FeatureStack, block: usize, eps: f64) -> Result<Vec<SpdMatrix>> {
    if block < 2 {
        return Err(Error::InvalidParameter(
            "grid block side must be at least 2".into(),
        ));
    }
    if stack.width() % block != 0 || stack.height() % block != 0 {
        return Err(Error::InvalidParameter(format!(
            "{}x{} stack does not tile into {block}x{block} blocks",
            stack.width(),
            stack.height()
        )));
    }
    let nx = stack.width() / block;
    let ny = stack.height() / block;
    let tiles: Vec<(usize, usize)> = (0..ny)
        .flat_map(|by| (0..nx).map(move |bx| (bx, by)))
        .collect();
    tiles
        .into_par_iter()
        .map(|(bx, by)| region_covariance(stack, bx * block, by * block, block, block, eps))
        .collect()
}

/// One-call pipeline: feature channels, then a grid of descriptors with the
/// default ridge.
pub fn image_grid_descriptors(image: &GrayImage, block: usize) -> Result<Vec<SpdMatrix>> {
    extract_grid(&compute_features(image), block, REGULARIZER_EPS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ramp_image(w: usize, h: usize) -> GrayImage {
        let pixels: Vec<f64> = (0..h)
            .flat_map(|_| (0..w).map(move |x| x as f64 / w as f64))
            .collect();
        GrayImage::new(w, h, pixels).unwrap()
    }

    fn noise_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut state = seed.wrapping_mul(2_862_933_555_777_941_757).wrapping_add(1);
        let pixels: Vec<f64> = (0..w * h)
            .map(|_| {
                state = state
                    .wrapping_mul(6_364_136_223_846_793_005)
                    .wrapping_add(1_442_695_040_888_963_407);
                (state >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        GrayImage::new(w, h, pixels).unwrap()
    }

    #[test]
    fn image_rejects_wrong_pixel_count() {
        assert!(GrayImage::new(3, 2, vec![0.0; 5]).is_err());
        assert!(GrayImage::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn parses_ascii_pgm_with_comments() {
        let data = b"P2 # comment right here\n# full comment line\n2 2\n15\n0 5\n10 15\n";
        let img = parse_pgm(data).unwrap();
        assert_eq!((img.width(), img.height()), (2, 2));
        assert_relative_eq!(img.pixel(0, 0), 0.0);
        assert_relative_eq!(img.pixel(1, 0), 5.0 / 15.0);
        assert_relative_eq!(img.pixel(0, 1), 10.0 / 15.0);
        assert_relative_eq!(img.pixel(1, 1), 1.0);
    }

    #[test]
    fn parses_binary_pgm_eight_bit() {
        let mut data = b"P5\n3 1\n255\n".to_vec();
        data.extend_from_slice(&[0u8, 128, 255]);
        let img = parse_pgm(&data).unwrap();
        assert_relative_eq!(img.pixel(0, 0), 0.0);
        assert_relative_eq!(img.pixel(1, 0), 128.0 / 255.0);
        assert_relative_eq!(img.pixel(2, 0), 1.0);
    }

    #[test]
    fn parses_binary_pgm_sixteen_bit_big_endian() {
        let mut data = b"P5 2 1 65535\n".to_vec();
        data.extend_from_slice(&[0x01, 0x00, 0xff, 0xff]);
        let img = parse_pgm(&data).unwrap();
        assert_relative_eq!(img.pixel(0, 0), 256.0 / 65535.0);
        assert_relative_eq!(img.pixel(1, 0), 1.0);
    }

    #[test]
    fn rejects_malformed_pgm() {
        assert!(parse_pgm(b"P3 2 2 255 0 0 0 0").is_err(), "wrong magic");
        assert!(parse_pgm(b"P2 0 2 255").is_err(), "zero width");
        assert!(parse_pgm(b"P2 2 2 0 0 0 0 0").is_err(), "zero maxval");
        assert!(parse_pgm(b"P2 2 2 70000 0 0 0 0").is_err(), "maxval too big");
        assert!(parse_pgm(b"P2 2 2 255 0 0 0").is_err(), "short raster");
        assert!(parse_pgm(b"P2 2 2 255 0 0 0 x").is_err(), "non-numeric");
        assert!(parse_pgm(b"P2 2 2 15 0 0 0 16").is_err(), "sample over maxval");
        let mut bin = b"P5 2 2 255\n".to_vec();
        bin.extend_from_slice(&[1, 2, 3]);
        assert!(parse_pgm(&bin).is_err(), "truncated binary raster");
    }

    #[test]
    fn read_pgm_round_trips_through_a_file() {
        let path = std::env::temp_dir().join(format!("stein-sparse-test-{}.pgm", std::process::id()));
        let mut data = b"P5\n2 2\n255\n".to_vec();
        data.extend_from_slice(&[10, 20, 30, 40]);
        std::fs::write(&path, &data).unwrap();
        let img = read_pgm(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_relative_eq!(img.pixel(1, 1), 40.0 / 255.0);
        assert!(read_pgm("/definitely/not/a/real/path.pgm").is_err());
    }

    #[test]
    fn constant_image_has_zero_derivatives() {
        let img = GrayImage::new(4, 3, vec![0.25; 12]).unwrap();
        let stack = compute_features(&img);
        for c in 1..FEATURE_CHANNELS {
            assert!(stack.channel(c).iter().all(|&v| v == 0.0), "channel {c}");
        }
        assert!(stack.channel(0).iter().all(|&v| v == 0.25));
    }

    #[test]
    fn ramp_image_derivative_channels() {
        let w = 8;
        let img = ramp_image(w, 4);
        let stack = compute_features(&img);
        let step = 1.0 / w as f64;
        for y in 0..4 {
            for x in 1..w - 1 {
                assert_relative_eq!(stack.value(1, x, y), step, epsilon = 1e-12);
                assert_relative_eq!(stack.value(3, x, y), 0.0, epsilon = 1e-12);
            }
            // Replicated borders halve the one-sided first difference.
            assert_relative_eq!(stack.value(1, 0, y), step / 2.0, epsilon = 1e-12);
            assert_relative_eq!(stack.value(1, w - 1, y), step / 2.0, epsilon = 1e-12);
            // Vertical structure is absent entirely.
            for x in 0..w {
                assert_eq!(stack.value(2, x, y), 0.0);
                assert_eq!(stack.value(4, x, y), 0.0);
            }
        }
    }

    #[test]
    fn from_channels_validates_plane_sizes() {
        let ok = FeatureStack::from_channels(2, 1, std::array::from_fn(|_| vec![0.0; 2]));
        assert!(ok.is_ok());
        let mut planes: [Vec<f64>; FEATURE_CHANNELS] = std::array::from_fn(|_| vec![0.0; 2]);
        planes[3] = vec![0.0; 3];
        assert!(FeatureStack::from_channels(2, 1, planes).is_err());
    }

    #[test]
    fn two_pixel_covariance_closed_form() {
        // Two pixels whose five channels are all 0 and all 1: the covariance
        // is the all-ones matrix halved, plus the trace-scaled ridge.
        let planes: [Vec<f64>; FEATURE_CHANNELS] = std::array::from_fn(|_| vec![0.0, 1.0]);
        let stack = FeatureStack::from_channels(2, 1, planes).unwrap();
        let cov = region_covariance(&stack, 0, 0, 2, 1, REGULARIZER_EPS).unwrap();
        let ridge = REGULARIZER_EPS * 2.5; // trace of 0.5 * ones(5) is 2.5
        for i in 0..FEATURE_CHANNELS {
            for j in 0..FEATURE_CHANNELS {
                let expected = 0.5 + if i == j { ridge } else { 0.0 };
                assert_relative_eq!(cov.matrix()[(i, j)], expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn constant_region_covariance_is_the_ridge() {
        let img = GrayImage::new(4, 4, vec![0.5; 16]).unwrap();
        let stack = compute_features(&img);
        let cov = region_covariance(&stack, 0, 0, 4, 4, 1e-6).unwrap();
        let expected = DMatrix::identity(5, 5) * 1e-6;
        assert!((cov.matrix() - expected).norm() <= 1e-15);
    }

    #[test]
    fn covariance_matches_naive_reference() {
        let img = noise_image(6, 6, 99);
        let stack = compute_features(&img);
        let eps = 1e-6;
        let cov = region_covariance(&stack, 1, 2, 4, 3, eps).unwrap();

        // Naive reference: collect vectors, average outer products directly.
        let mut vectors = Vec::new();
        for y in 2..5 {
            for x in 1..5 {
                let v: Vec<f64> = (0..FEATURE_CHANNELS).map(|c| stack.value(c, x, y)).collect();
                vectors.push(v);
            }
        }
        let n = vectors.len() as f64;
        let mut mean = vec![0.0; FEATURE_CHANNELS];
        for v in &vectors {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x / n;
            }
        }
        let mut reference = DMatrix::<f64>::zeros(FEATURE_CHANNELS, FEATURE_CHANNELS);
        for v in &vectors {
            for i in 0..FEATURE_CHANNELS {
                for j in 0..FEATURE_CHANNELS {
                    reference[(i, j)] += (v[i] - mean[i]) * (v[j] - mean[j]) / (n - 1.0);
                }
            }
        }
        let ridge = eps * reference.trace().max(1.0);
        for i in 0..FEATURE_CHANNELS {
            reference[(i, i)] += ridge;
        }
        assert!((cov.matrix() - reference).norm() <= 1e-12);
    }

    #[test]
    fn region_bounds_and_size_are_validated() {
        let stack = compute_features(&noise_image(4, 4, 7));
        assert!(region_covariance(&stack, 0, 0, 1, 1, 1e-6).is_err(), "single pixel");
        assert!(region_covariance(&stack, 3, 0, 2, 2, 1e-6).is_err(), "out of bounds");
        assert!(region_covariance(&stack, 0, 0, 2, 2, 0.0).is_err(), "zero ridge");
    }

    #[test]
    fn grid_extraction_counts_and_order() {
        let img = noise_image(8, 8, 31);
        let stack = compute_features(&img);
        let grid = extract_grid(&stack, 4, 1e-6).unwrap();
        assert_eq!(grid.len(), 4);
        for (b, expected_corner) in [(0, (0, 0)), (1, (4, 0)), (2, (0, 4)), (3, (4, 4))] {
            let direct =
                region_covariance(&stack, expected_corner.0, expected_corner.1, 4, 4, 1e-6)
                    .unwrap();
            assert_eq!(grid[b], direct, "block {b} out of order");
        }
    }

    #[test]
    fn grid_requires_exact_tiling() {
        let stack = compute_features(&noise_image(6, 4, 3));
        assert!(extract_grid(&stack, 4, 1e-6).is_err());
        assert!(extract_grid(&stack, 1, 1e-6).is_err());
        assert_eq!(extract_grid(&stack, 2, 1e-6).unwrap().len(), 6);
    }
}
