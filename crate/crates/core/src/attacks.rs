//! Deterministic attack simulators. Every output is quantized to 8-bit levels.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotate, scale_by, Border};
use crate::image::Image;
use crate::prng::KeyedStream;

/// One parameterized attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackSpec {
    GaussianNoise { sigma: f64, seed: u64 },
    SaltPepper { density: f64, seed: u64 },
    Jpeg { quality: u32 },
    Lowpass { radius: f64 },
    HistEq,
    Scale { factor: f64 },
    Rotate { degrees: f64 },
}

impl AttackSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            AttackSpec::GaussianNoise { .. } => "gaussian_noise",
            AttackSpec::SaltPepper { .. } => "salt_pepper",
            AttackSpec::Jpeg { .. } => "jpeg",
            AttackSpec::Lowpass { .. } => "lowpass",
            AttackSpec::HistEq => "hist_eq",
            AttackSpec::Scale { .. } => "scale",
            AttackSpec::Rotate { .. } => "rotate",
        }
    }

    /// The swept parameter, if any.
    pub fn parameter(&self) -> Option<f64> {
        match *self {
            AttackSpec::GaussianNoise { sigma, .. } => Some(sigma),
            AttackSpec::SaltPepper { density, .. } => Some(density),
            AttackSpec::Jpeg { quality } => Some(quality as f64),
            AttackSpec::Lowpass { radius } => Some(radius),
            AttackSpec::HistEq => None,
            AttackSpec::Scale { factor } => Some(factor),
            AttackSpec::Rotate { degrees } => Some(degrees),
        }
    }

    /// Stable human-readable label, also used to order report records.
    pub fn label(&self) -> String {
        match self.parameter() {
            Some(p) => format!("{}:{}", self.kind(), p),
            None => self.kind().to_string(),
        }
    }

    pub fn is_geometric(&self) -> bool {
        matches!(self, AttackSpec::Scale { .. } | AttackSpec::Rotate { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadSpec(m));
        match *self {
            AttackSpec::GaussianNoise { sigma, .. } if !(sigma >= 0.0 && sigma.is_finite()) => {
                bad(format!("sigma {sigma} must be >= 0"))
            }
            AttackSpec::SaltPepper { density, .. } if !(0.0..=1.0).contains(&density) => {
                bad(format!("density {density} outside [0, 1]"))
            }
            AttackSpec::Jpeg { quality } if !(1..=100).contains(&quality) => {
                bad(format!("quality {quality} outside 1..=100"))
            }
            AttackSpec::Lowpass { radius } if !(radius >= 0.0 && radius.is_finite()) => {
                bad(format!("radius {radius} must be >= 0"))
            }
            AttackSpec::Scale { factor } if !(factor > 0.0 && factor.is_finite()) => {
                bad(format!("factor {factor} must be > 0"))
            }
            AttackSpec::Rotate { degrees } if !degrees.is_finite() => {
                bad(format!("degrees {degrees} must be finite"))
            }
            _ => Ok(()),
        }
    }
}

/// Apply one attack.
pub fn apply(image: &Image, spec: &AttackSpec) -> Result<Image> {
    spec.validate()?;
    let out = match *spec {
        AttackSpec::GaussianNoise { sigma, seed } => gaussian_noise(image, sigma, seed),
        AttackSpec::SaltPepper { density, seed } => salt_pepper(image, density, seed),
        AttackSpec::Jpeg { quality } => jpeg(image, quality),
        AttackSpec::Lowpass { radius } => gaussian_blur(image, radius / 2.0),
        AttackSpec::HistEq => hist_eq(image),
        AttackSpec::Scale { factor } => scale_by(image, factor),
        AttackSpec::Rotate { degrees } => rotate(image, degrees, true, Border::Edge),
    };
    Ok(out.quantized())
}

pub fn gaussian_noise(image: &Image, sigma: f64, seed: u64) -> Image {
    let mut s = KeyedStream::from_u64("curvemark-attack-noise", seed);
    let data = image.data.iter().map(|&v| v + sigma * s.normal()).collect();
    Image { width: image.width, height: image.height, data }
}

/// Exactly `round(density * L)` distinct pixels become 0 or 255.
pub fn salt_pepper(image: &Image, density: f64, seed: u64) -> Image {
    let mut s = KeyedStream::from_u64("curvemark-attack-salt-pepper", seed);
    let n = image.len();
    let k = ((density * n as f64).round() as usize).min(n);
    let picks = sample(s.rng(), n, k);
    let mut out = image.clone();
    for i in picks.iter() {
        out.data[i] = if s.next_u64() & 1 == 0 { 0.0 } else { 255.0 };
    }
    out
}

pub const JPEG_LUMA_TABLE: [[f64; 8]; 8] = [
    [16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0],
    [12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0],
    [14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0],
    [14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0],
    [18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0],
    [24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0],
    [49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0],
    [72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0],
];

/// Quantizer table for a quality factor (linear scaling convention).
pub fn jpeg_table(quality: u32) -> [[f64; 8]; 8] {
    let q = quality.clamp(1, 100) as f64;
    let scale = if q < 50.0 { 5000.0 / q } else { 200.0 - 2.0 * q };
    let mut t = [[0.0; 8]; 8];
    for (r, row) in JPEG_LUMA_TABLE.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            t[r][c] = ((v * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0);
        }
    }
    t
}

fn dct_matrix() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (k, row) in m.iter_mut().enumerate() {
        let a = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (n, v) in row.iter_mut().enumerate() {
            *v = a * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / 16.0).cos();
        }
    }
    m
}

/// Baseline JPEG loss: level shift, 8x8 orthonormal DCT, quantize with the
/// scaled luminance table, reconstruct. No entropy coding.
pub fn jpeg(image: &Image, quality: u32) -> Image {
    let t = jpeg_table(quality);
    let d = dct_matrix();
    let (w, h) = image.dims();
    let src = image.quantized();
    let mut out = Image::new(w, h);
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            let mut block = [[0.0; 8]; 8];
            for (i, row) in block.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    // partial blocks replicate the edge
                    let x = (bx + j).min(w - 1);
                    let y = (by + i).min(h - 1);
                    *v = src.get(x, y) - 128.0;
                }
            }
            let coef = mat_mul(&mat_mul(&d, &block), &transpose(&d));
            let mut q = [[0.0; 8]; 8];
            for r in 0..8 {
                for c in 0..8 {
                    q[r][c] = (coef[r][c] / t[r][c]).round() * t[r][c];
                }
            }
            let rec = mat_mul(&mat_mul(&transpose(&d), &q), &d);
            for (i, row) in rec.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    if by + i < h && bx + j < w {
                        out.set(bx + j, by + i, v + 128.0);
                    }
                }
            }
        }
    }
    out.quantized()
}

fn mat_mul(a: &[[f64; 8]; 8], b: &[[f64; 8]; 8]) -> [[f64; 8]; 8] {
    let mut o = [[0.0; 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            o[i][j] = (0..8).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    o
}

fn transpose(a: &[[f64; 8]; 8]) -> [[f64; 8]; 8] {
    let mut o = [[0.0; 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            o[i][j] = a[j][i];
        }
    }
    o
}

/// Separable Gaussian blur, kernel truncated at 3 sigma, edges replicated.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return image.clone();
    }
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let (w, h) = (image.width as i64, image.height as i64);
    let mut tmp = Image::new(image.width, image.height);
    for y in 0..h {
        for x in 0..w {
            let v: f64 = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * image.data[(y * w + (x + i as i64 - r).clamp(0, w - 1)) as usize])
                .sum();
            tmp.data[(y * w + x) as usize] = v;
        }
    }
    let mut out = Image::new(image.width, image.height);
    for y in 0..h {
        for x in 0..w {
            let v: f64 = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp.data[((y + i as i64 - r).clamp(0, h - 1) * w + x) as usize])
                .sum();
            out.data[(y * w + x) as usize] = v;
        }
    }
    out
}

/// Cumulative-histogram equalization on 256 bins.
pub fn hist_eq(image: &Image) -> Image {
    let levels: Vec<usize> =
        image.data.iter().map(|&v| v.round().clamp(0.0, 255.0) as usize).collect();
    let mut hist = [0usize; 256];
    for &l in &levels {
        hist[l] += 1;
    }
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc;
    }
    let n = levels.len();
    let cmin = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    let lut: Vec<f64> = cdf
        .iter()
        .map(|&c| {
            if n == cmin {
                0.0
            } else {
                ((c.saturating_sub(cmin)) as f64 / (n - cmin) as f64 * 255.0).round()
            }
        })
        .collect();
    Image {
        width: image.width,
        height: image.height,
        data: levels.iter().map(|&l| lut[l]).collect(),
    }
}

/// Expand a grid deterministically: specs are kept in the given order.
pub fn attack_matrix(specs: &[AttackSpec]) -> impl Iterator<Item = (AttackSpec, String)> + '_ {
    specs.iter().map(|s| (s.clone(), s.label()))
}

/// Benchmark grid covering every attack kind at four or more levels.
pub fn default_grid(seed: u64) -> Vec<AttackSpec> {
    let mut g = Vec::new();
    for q in (30..=90).step_by(10) {
        g.push(AttackSpec::Jpeg { quality: q });
    }
    for s in 1..=10 {
        g.push(AttackSpec::GaussianNoise { sigma: s as f64, seed });
    }
    for d in [0.001, 0.005, 0.01, 0.02] {
        g.push(AttackSpec::SaltPepper { density: d, seed });
    }
    for r in [0.5, 1.0, 1.5, 2.0] {
        g.push(AttackSpec::Lowpass { radius: r });
    }
    g.push(AttackSpec::HistEq);
    for f in [0.5, 0.75, 1.25, 1.5] {
        g.push(AttackSpec::Scale { factor: f });
    }
    for d in [5.625, 11.25, 22.5, 45.0, 90.0] {
        g.push(AttackSpec::Rotate { degrees: d });
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn natural(w: usize, h: usize) -> Image {
        let mut s = KeyedStream::from_u64("attack-test", 1);
        Image::from_fn(w, h, |x, y| {
            (120.0 + 50.0 * ((x as f64) * 0.07).sin() + 30.0 * ((y as f64) * 0.05).cos()
                + 8.0 * s.normal())
            .round()
            .clamp(0.0, 255.0)
        })
    }

    #[test]
    fn identity_parameters() {
        let img = natural(64, 48);
        for spec in [
            AttackSpec::GaussianNoise { sigma: 0.0, seed: 3 },
            AttackSpec::SaltPepper { density: 0.0, seed: 3 },
            AttackSpec::Jpeg { quality: 100 },
            AttackSpec::Lowpass { radius: 0.0 },
            AttackSpec::Scale { factor: 1.0 },
            AttackSpec::Rotate { degrees: 0.0 },
        ] {
            let out = apply(&img, &spec).unwrap();
            assert!(out.max_abs_diff(&img) <= 1.0, "{}", spec.label());
        }
    }

    #[test]
    fn salt_pepper_count_is_exact() {
        let img = Image::filled(1000, 1000, 128.0);
        let out = apply(&img, &AttackSpec::SaltPepper { density: 0.01, seed: 9 }).unwrap();
        let hit = out.data.iter().filter(|&&v| v != 128.0).count();
        assert_eq!(hit, 10_000);
        assert!(out.data.iter().all(|&v| v == 0.0 || v == 255.0 || v == 128.0));
    }

    #[test]
    fn stochastic_attacks_are_seeded() {
        let img = natural(40, 40);
        let a = AttackSpec::GaussianNoise { sigma: 3.0, seed: 1 };
        assert_eq!(apply(&img, &a).unwrap(), apply(&img, &a).unwrap());
        let b = AttackSpec::GaussianNoise { sigma: 3.0, seed: 2 };
        assert_ne!(apply(&img, &a).unwrap(), apply(&img, &b).unwrap());
    }

    #[test]
    fn quality_table_convention() {
        assert_eq!(jpeg_table(50), JPEG_LUMA_TABLE);
        assert!(jpeg_table(100).iter().flatten().all(|&v| v == 1.0));
        // quality 10 scales by 5000/10 = 500
        assert_eq!(jpeg_table(10)[0][0], ((16.0 * 500.0 + 50.0) / 100.0f64).floor());
    }

    #[test]
    fn jpeg_requantization_is_nearly_idempotent() {
        let img = natural(64, 64);
        let once = jpeg(&img, 50);
        let twice = jpeg(&once, 50);
        let close = once.data.iter().zip(&twice.data).filter(|(a, b)| (*a - *b).abs() <= 1.0);
        assert!(close.count() as f64 >= 0.99 * img.len() as f64);
    }

    #[test]
    fn hist_eq_fixed_point_on_uniform_histogram() {
        let img = Image::from_fn(256, 4, |x, _| x as f64);
        let out = hist_eq(&img);
        assert!(out.max_abs_diff(&img) <= 1.0);
    }

    #[test]
    fn blur_preserves_constant() {
        let img = Image::filled(20, 20, 77.0);
        let out = gaussian_blur(&img, 1.3);
        assert!(out.max_abs_diff(&img) < 1e-9);
    }

    #[test]
    fn scale_round_trip_is_sane() {
        let img = natural(96, 80);
        for f in [0.5, 0.8, 1.5, 2.0] {
            let there = apply(&img, &AttackSpec::Scale { factor: f }).unwrap();
            let back = crate::geometry::resize(&there, img.width, img.height);
            let err: f64 = img.data.iter().zip(&back.data).map(|(a, b)| (a - b).powi(2)).sum();
            assert!((err / img.energy()).sqrt() < 0.1, "factor {f}");
        }
    }

    #[test]
    fn rotation_expands_canvas() {
        let img = natural(64, 48);
        let out = apply(&img, &AttackSpec::Rotate { degrees: 11.25 }).unwrap();
        assert!(out.width > 64 && out.height > 48);
    }

    #[test]
    fn invalid_specs() {
        let img = natural(16, 16);
        for s in [
            AttackSpec::GaussianNoise { sigma: -1.0, seed: 0 },
            AttackSpec::SaltPepper { density: 1.5, seed: 0 },
            AttackSpec::Jpeg { quality: 0 },
            AttackSpec::Lowpass { radius: f64::NAN },
            AttackSpec::Scale { factor: 0.0 },
        ] {
            assert!(matches!(apply(&img, &s), Err(Error::BadSpec(_))));
        }
    }

    #[test]
    fn grid_serialization_round_trips() {
        let g = default_grid(5);
        let s = serde_json::to_string(&g).unwrap();
        let back: Vec<AttackSpec> = serde_json::from_str(&s).unwrap();
        assert_eq!(g, back);
        assert_eq!(attack_matrix(&[]).count(), 0);
        let kinds: std::collections::BTreeMap<&str, usize> =
            g.iter().fold(Default::default(), |mut m, s| {
                *m.entry(s.kind()).or_default() += 1;
                m
            });
        assert_eq!(kinds.len(), 7);
        assert!(kinds.iter().filter(|(k, _)| **k != "hist_eq").all(|(_, &n)| n >= 4));
    }
}
