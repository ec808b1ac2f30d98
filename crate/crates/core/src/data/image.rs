use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Largest accepted side length of an input image.
pub const MAX_IMAGE_SIDE: usize = 4096;

/// 8-bit grayscale raster, row-major from the top row.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Data(format!("PGM: invalid {what} at byte {start}")))
    }
}

/// Parses a binary (`P5`) or ASCII (`P2`) PGM with `maxval <= 255`.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let binary = match bytes.get(..2) {
        Some(b"P5") => true,
        Some(b"P2") => false,
        _ => return Err(Error::Data("PGM: missing P2/P5 magic".into())),
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Data("PGM: empty image".into()));
    }
    if width > MAX_IMAGE_SIDE || height > MAX_IMAGE_SIDE {
        return Err(Error::Data(format!(
            "PGM: {width}x{height} exceeds the {MAX_IMAGE_SIDE}x{MAX_IMAGE_SIDE} limit"
        )));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Data(format!("PGM: maxval {maxval} is not an 8-bit depth")));
    }
    let n = width * height;
    let pixels: Vec<u16> = if binary {
        // Exactly one whitespace byte separates the header from the raster.
        let start = h.pos + 1;
        let raster = bytes
            .get(start..start + n)
            .ok_or_else(|| Error::Data(format!("PGM: expected {n} raster bytes")))?;
        raster.iter().map(|&b| b as u16).collect()
    } else {
        (0..n).map(|_| h.number("pixel").map(|v| v as u16)).collect::<Result<_>>()?
    };
    if let Some(p) = pixels.iter().find(|&&p| p as usize > maxval) {
        return Err(Error::Data(format!("PGM: pixel {p} above maxval {maxval}")));
    }
    Ok(GrayImage {
        width,
        height,
        maxval: maxval as u16,
        pixels,
    })
}

/// Draws `n` points on `[0, 1]^2` with density proportional to the inverted
/// intensity (`maxval - pixel`), so dark pixels carry the mass. The top image
/// row maps to the top of the square.
pub fn sample_image(img: &GrayImage, n: usize, seed: u64) -> Result<Dataset> {
    let weights: Vec<f64> = img.pixels.iter().map(|&p| f64::from(img.maxval - p)).collect();
    let index = WeightedIndex::new(&weights)
        .map_err(|_| Error::Data("image has no dark pixels to sample from".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, hgt) = (img.width as f64, img.height as f64);
    let mut pts = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let i = index.sample(&mut rng);
        let (row, col) = (i / img.width, i % img.width);
        let jx: f64 = rng.random();
        let jy: f64 = rng.random();
        pts.push((col as f64 + jx) / w);
        pts.push((img.height - 1 - row) as f64 / hgt + jy / hgt);
    }
    Dataset::new(Tensor::matrix(n, 2, pts)?, format!("image:{n}:{seed}"))
}

pub fn image_density(path: &Path, n: usize, seed: u64) -> Result<Dataset> {
    let meta = std::fs::metadata(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    // Header plus the largest raster an ASCII file could spell out.
    let limit = 64 + (MAX_IMAGE_SIDE * MAX_IMAGE_SIDE * 4) as u64;
    if meta.len() > limit {
        return Err(Error::Data(format!("{}: file of {} bytes is too large", path.display(), meta.len())));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let img = parse_pgm(&bytes)?;
    let ds = sample_image(&img, n, seed)?;
    Ok(Dataset {
        source: format!("image:{}:{n}:{seed}", path.display()),
        ..ds
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p5(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
        let mut out = format!("P5\n# test\n{width} {height}\n255\n").into_bytes();
        out.extend_from_slice(pixels);
        out
    }

    #[test]
    fn ascii_and_binary_agree() {
        let ascii = b"P2\n3 2\n255\n0 10 20\n# c\n30 40 255\n";
        let bin = p5(3, 2, &[0, 10, 20, 30, 40, 255]);
        assert_eq!(parse_pgm(ascii).unwrap(), parse_pgm(&bin).unwrap());
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(parse_pgm(b"P6\n1 1\n255\n\0").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\0").is_err());
        assert!(parse_pgm(b"P2\n1 1\n65535\n0").is_err());
        assert!(parse_pgm(format!("P2\n{} 1\n255\n", MAX_IMAGE_SIDE + 1).as_bytes()).is_err());
        assert!(parse_pgm(b"P2\n1 1\n100\n200").is_err());
    }

    #[test]
    fn white_pixels_carry_no_mass() {
        // Top-left pixel black, everything else white.
        let mut px = vec![255u8; 16];
        px[0] = 0;
        let img = parse_pgm(&p5(4, 4, &px)).unwrap();
        let ds = sample_image(&img, 500, 1).unwrap();
        for r in 0..ds.rows() {
            let p = ds.data().row(r);
            assert!(p[0] < 0.25 && p[1] >= 0.75, "{p:?}");
        }
        assert!(sample_image(&parse_pgm(&p5(2, 1, &[255, 255])).unwrap(), 1, 0).is_err());
    }

    #[test]
    fn black_image_is_uniform() {
        let img = parse_pgm(&p5(7, 5, &[0; 35])).unwrap();
        let n = 20_000;
        let ds = sample_image(&img, n, 3).unwrap();
        let mut counts = [0usize; 100];
        for r in 0..n {
            let p = ds.data().row(r);
            assert!((0.0..1.0).contains(&p[0]) && (0.0..1.0).contains(&p[1]));
            counts[(p[0] * 10.0) as usize + 10 * (p[1] * 10.0) as usize] += 1;
        }
        let e = n as f64 / 100.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // Upper 1% point of chi-square with 99 degrees of freedom.
        assert!(chi2 < 134.642, "chi2 = {chi2}");
        assert_eq!(ds, sample_image(&img, n, 3).unwrap());
    }
}
