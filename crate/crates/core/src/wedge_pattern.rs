//! Keyed watermark patterns confined to a curvelet wedge.

use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fdct::FdctPlan;
use crate::geometry::{rotate, Border};
use crate::prng::{derive_seed, KeyedStream};

/// Default support threshold, relative to a wedge's peak window value.
pub const MASK_EPSILON: f64 = 1e-6;

/// 256-bit secret.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Seed(pub [u8; 32]);

impl Seed {
    pub fn random() -> Self {
        let mut b = [0u8; 32];
        rand::fill(&mut b);
        Seed(b)
    }

    /// Deterministic fake key number `index` under a seed base.
    pub fn fake(base: u64, index: u64) -> Self {
        Seed(derive_seed("curvemark-fake-key", &base.to_le_bytes(), &[index]))
    }
}

impl fmt::Display for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Seed({self})")
    }
}

impl FromStr for Seed {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bytes = hex::decode(s.trim()).map_err(|e| Error::BadKey(format!("seed: {e}")))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|b: Vec<u8>| Error::BadKey(format!("seed has {} bytes, need 32", b.len())))?;
        Ok(Seed(arr))
    }
}

/// Everything needed to regenerate the embedded patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkKey {
    pub seed: Seed,
    pub embed_scale: usize,
    pub message_directions: Vec<usize>,
    pub template_direction: usize,
    pub template_offset: usize,
    pub alpha: f64,
}

pub const MULTIBIT_DIRECTIONS: [usize; 6] = [1, 2, 3, 6, 7, 8];

impl WatermarkKey {
    pub fn zero_bit(seed: Seed, alpha: f64) -> Self {
        Self {
            seed,
            embed_scale: 3,
            message_directions: vec![1],
            template_direction: 9,
            template_offset: 8,
            alpha,
        }
    }

    pub fn multibit(seed: Seed, alpha: f64) -> Self {
        Self { message_directions: MULTIBIT_DIRECTIONS.to_vec(), ..Self::zero_bit(seed, alpha) }
    }

    pub fn is_multibit(&self) -> bool {
        self.message_directions.len() > 1
    }

    /// Same layout under another secret.
    pub fn with_seed(&self, seed: Seed) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Check the key's internal invariants and its fit to a plan.
    pub fn validate(&self, plan: &FdctPlan) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::BadKey(format!("alpha {} must be finite and >= 0", self.alpha)));
        }
        if self.message_directions.is_empty() {
            return Err(Error::BadKey("no message directions".into()));
        }
        if self.message_directions.contains(&self.template_direction) {
            return Err(Error::BadKey("template direction is also a message direction".into()));
        }
        if self.embed_scale < 2 {
            return Err(Error::BadKey("the coarsest scale cannot carry a pattern".into()));
        }
        let n = plan
            .directions(self.embed_scale)
            .map_err(|e| Error::BadKey(format!("embed scale: {e}")))?;
        let mut used = self.message_directions.clone();
        used.push(self.template_direction);
        for &d in &used {
            if d == 0 || d > n {
                return Err(Error::BadKey(format!("direction {d} not in 1..={n}")));
            }
        }
        // a wedge and its partner carry the same (conjugated) content
        for (i, &a) in used.iter().enumerate() {
            for &b in &used[i + 1..] {
                if a == b || (a + n / 2 - 1) % n + 1 == b {
                    return Err(Error::BadKey(format!("directions {a} and {b} share a wedge pair")));
                }
            }
        }
        Ok(())
    }

    /// Rotation (degrees, counter-clockwise) mapping the base direction onto
    /// the template direction.
    pub fn template_angle(&self, plan: &FdctPlan) -> Result<f64> {
        let n = plan.directions(self.embed_scale)?;
        Ok(self.template_offset as f64 * 360.0 / n as f64)
    }

    pub fn fingerprint(&self, scale: usize, direction: usize) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"curvemark-pattern-id");
        h.update(self.seed.0);
        h.update((scale as u64).to_le_bytes());
        h.update((direction as u64).to_le_bytes());
        h.finalize().into()
    }
}

/// Unit-variance, zero-mean complex array shaped like one subband.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub values: Vec<Complex64>,
    pub rows: usize,
    pub cols: usize,
    pub scale: usize,
    pub direction: usize,
    pub key_fingerprint: [u8; 32],
}

impl Pattern {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn negated(&self) -> Pattern {
        Pattern { values: self.values.iter().map(|v| -v).collect(), ..self.clone() }
    }
}

/// Remove the mean and scale to unit variance. Returns the variance before
/// scaling.
pub fn normalize(values: &mut [Complex64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<Complex64>() / n;
    let var = values.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / n;
    let s = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    for v in values.iter_mut() {
        *v = (*v - mean) * s;
    }
    var
}

/// Keyed pattern whose spectrum lives on the wedge mask of
/// `(key.embed_scale, direction)`.
pub fn generate_pattern(key: &WatermarkKey, plan: &FdctPlan, direction: usize) -> Result<Pattern> {
    generate_pattern_at(key, plan, key.embed_scale, direction, MASK_EPSILON)
}

/// Pattern for an explicit wedge and mask threshold.
///
/// A keyed stream emits one complex standard normal per mask coordinate,
/// visited row-major by `(u, v)`; the box grid is inverse transformed and
/// normalized.
pub fn generate_pattern_at(
    key: &WatermarkKey,
    plan: &FdctPlan,
    scale: usize,
    direction: usize,
    epsilon: f64,
) -> Result<Pattern> {
    let mask = plan.wedge_mask(scale, direction, epsilon)?;
    let mut stream =
        KeyedStream::new("curvemark-pattern", &key.seed.0, &[scale as u64, direction as u64]);
    let mut grid = vec![Complex64::new(0.0, 0.0); mask.rows * mask.cols];
    for &(u, v) in &mask.support {
        grid[u * mask.cols + v] = stream.complex_normal();
    }
    plan.fft().fft2(&mut grid, mask.rows, mask.cols, true);
    normalize(&mut grid);
    Ok(Pattern {
        values: grid,
        rows: mask.rows,
        cols: mask.cols,
        scale,
        direction,
        key_fingerprint: key.fingerprint(scale, direction),
    })
}

/// Broadband baseline: i.i.d. complex normals over the whole subband grid.
pub fn white_pattern(key: &WatermarkKey, plan: &FdctPlan, direction: usize) -> Result<Pattern> {
    let w = plan.wedge(key.embed_scale, direction)?;
    let mut stream = KeyedStream::new(
        "curvemark-white",
        &key.seed.0,
        &[key.embed_scale as u64, direction as u64],
    );
    let mut values: Vec<Complex64> = (0..w.len()).map(|_| stream.complex_normal()).collect();
    normalize(&mut values);
    Ok(Pattern {
        values,
        rows: w.rows,
        cols: w.cols,
        scale: key.embed_scale,
        direction,
        key_fingerprint: key.fingerprint(key.embed_scale, direction),
    })
}

/// Normalized real inner product `Re<a, b> / (|a| |b|)`; zero if either is zero.
pub fn normalized_inner(a: &[Complex64], b: &[Complex64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| (x * y.conj()).re).sum();
    let na: f64 = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Fraction of a pattern that survives synthesis followed by analysis:
/// the pattern is placed in its wedge (conjugate into the partner), the
/// pyramid is inverted to a real image, and the wedge is read back.
pub fn filter_survival(pattern: &Pattern, plan: &FdctPlan) -> Result<f64> {
    let idx = plan.wedge_index(pattern.scale, pattern.direction)?;
    let partner = plan.partner(idx);
    let conj: Vec<Complex64> = pattern.values.iter().map(|v| v.conj()).collect();
    let spec = plan.synthesize(&[(idx, &pattern.values), (partner, &conj)]);
    let (img, _) = plan.image_from_spectrum(spec);
    let back = plan.analyze(&plan.spectrum(&img)?, idx);
    Ok(normalized_inner(&pattern.values, &back))
}

/// Spatial rendering of a pattern placed in its wedge and partner.
pub fn render(pattern: &Pattern, plan: &FdctPlan) -> Result<crate::image::Image> {
    let idx = plan.wedge_index(pattern.scale, pattern.direction)?;
    let conj: Vec<Complex64> = pattern.values.iter().map(|v| v.conj()).collect();
    let spec = plan.synthesize(&[(idx, &pattern.values), (plan.partner(idx), &conj)]);
    Ok(plan.image_from_spectrum(spec).0)
}

/// Rotation template: the base pattern of the first message direction is
/// rendered, rotated by the template offset, analyzed in the template wedge,
/// projected onto that wedge's mask and renormalized.
pub fn make_template(key: &WatermarkKey, plan: &FdctPlan) -> Result<Pattern> {
    let base_dir = key.message_directions[0];
    let base = generate_pattern(key, plan, base_dir)?;
    let image = render(&base, plan)?;
    let rotated = rotate(&image, key.template_angle(plan)?, false, Border::Zero);
    let idx = plan.wedge_index(key.embed_scale, key.template_direction)?;
    let mut values = plan.analyze(&plan.spectrum(&rotated)?, idx);
    let mask = plan.wedge_mask(key.embed_scale, key.template_direction, MASK_EPSILON)?;
    let w = &plan.wedges()[idx];
    plan.fft().fft2(&mut values, w.rows, w.cols, false);
    let keep = mask.indicator();
    for (v, &k) in values.iter_mut().zip(&keep) {
        if !k {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    plan.fft().fft2(&mut values, w.rows, w.cols, true);
    let base_energy: f64 = base.values.iter().map(|v| v.norm_sqr()).sum();
    let energy: f64 = values.iter().map(|v| v.norm_sqr()).sum();
    let rel = energy / base_energy;
    if rel < 1e-6 {
        return Err(Error::DegenerateTemplate(rel));
    }
    normalize(&mut values);
    Ok(Pattern {
        values,
        rows: w.rows,
        cols: w.cols,
        scale: key.embed_scale,
        direction: key.template_direction,
        key_fingerprint: key.fingerprint(key.embed_scale, key.template_direction),
    })
}
