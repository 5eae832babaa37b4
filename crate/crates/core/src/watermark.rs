//! Embedding and blind detection.
//!
//! A message wedge carries `C' = C + alpha |C| s W` (its partner gets the
//! conjugate so the image stays real). The template wedge carries the same
//! rule with the rotation template. Detection correlates the test image's
//! subband with the key pattern, either directly or on magnitudes.

use std::collections::HashMap;
use std::f64::consts::TAU;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdct::FdctPlan;
use crate::geometry::{fit, resize, rotate, scale_by, Border};
use crate::image::Image;
use crate::metrics::psnr;
use crate::wedge_pattern::{
    generate_pattern, generate_pattern_at, make_template, Seed, WatermarkKey, MASK_EPSILON,
};

/// Fake-key seed base used when none is given.
pub const DEFAULT_FAKE_BASE: u64 = 0x6375_7276;

/// Largest fraction of pixels that may be clipped by embedding.
pub const CLAMP_LIMIT: f64 = 0.01;

const SHIFTS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

#[derive(Debug, Clone)]
pub struct EmbedResult {
    /// Watermarked image clamped to [0, 255] (not quantized).
    pub image: Image,
    /// PSNR of the unclamped result against the original.
    pub psnr_vs_original: f64,
    /// PSNR after clamping.
    pub psnr_clamped: f64,
    pub clamped_fraction: f64,
    pub wedges_touched: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Present,
    Absent,
}

impl Decision {
    pub fn from_bool(present: bool) -> Self {
        if present {
            Decision::Present
        } else {
            Decision::Absent
        }
    }

    pub fn is_present(self) -> bool {
        self == Decision::Present
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Direct,
    Magnitude,
    Geometric,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Mode::Direct),
            "magnitude" => Ok(Mode::Magnitude),
            "geometric" => Ok(Mode::Geometric),
            _ => Err(Error::InvalidArgument(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitReading {
    pub direction: usize,
    pub bit: bool,
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub raw_correlation: f64,
    pub normalized_correlation: f64,
    pub threshold: f64,
    pub decision: Decision,
    pub bits: Option<Vec<BitReading>>,
    pub rotation_index: Option<usize>,
    pub mode: Mode,
    /// Subband scale that produced the statistic.
    pub scale: usize,
    /// Geometric mode only: whether the rotation template was found.
    pub template_found: Option<bool>,
    /// Geometric mode only: total correction applied, degrees.
    pub rotation_degrees: Option<f64>,
}

impl DetectionReport {
    pub fn decoded_bits(&self) -> Option<Vec<bool>> {
        self.bits.as_ref().map(|b| b.iter().map(|r| r.bit).collect())
    }
}

/// Per-coefficient magnitude perturbation estimate for each message wedge.
#[derive(Debug, Clone)]
pub struct MagnitudeEstimate {
    pub values: Vec<Vec<f64>>,
    pub source_subbands: Vec<(usize, usize)>,
}

/// `C + alpha |C| s W`, coefficient by coefficient.
pub fn marked_coefficients(c: &[Complex64], w: &[Complex64], alpha: f64, sign: f64) -> Vec<Complex64> {
    c.iter().zip(w).map(|(c, w)| c + w * (alpha * sign * c.norm())).collect()
}

fn sign_of(bit: bool) -> f64 {
    if bit {
        1.0
    } else {
        -1.0
    }
}

fn check_plan(image: &Image, plan: &FdctPlan) -> Result<()> {
    if image.dims() != (plan.width, plan.height) {
        return Err(Error::Dimension(format!(
            "image {}x{} vs plan {}x{}",
            image.width, image.height, plan.width, plan.height
        )));
    }
    Ok(())
}

fn embed_with_signs(image: &Image, key: &WatermarkKey, plan: &FdctPlan, signs: &[f64]) -> Result<EmbedResult> {
    check_plan(image, plan)?;
    key.validate(plan)?;
    let spec = plan.spectrum(image)?;
    let mut deltas: Vec<(usize, Vec<Complex64>)> = Vec::new();
    let mut touched = Vec::new();
    let push = |idx: usize, values: &[Complex64], sign: f64, deltas: &mut Vec<(usize, Vec<Complex64>)>| {
        let c = plan.analyze(&spec, idx);
        let d: Vec<Complex64> =
            c.iter().zip(values).map(|(c, w)| w * (key.alpha * sign * c.norm())).collect();
        let conj = d.iter().map(|v| v.conj()).collect();
        deltas.push((idx, d));
        deltas.push((plan.partner(idx), conj));
    };
    for (&dir, &sign) in key.message_directions.iter().zip(signs) {
        let w = generate_pattern(key, plan, dir)?;
        push(plan.wedge_index(key.embed_scale, dir)?, &w.values, sign, &mut deltas);
        touched.push((key.embed_scale, dir));
    }
    let t = make_template(key, plan)?;
    push(plan.wedge_index(key.embed_scale, key.template_direction)?, &t.values, 1.0, &mut deltas);
    touched.push((key.embed_scale, key.template_direction));

    let parts: Vec<(usize, &[Complex64])> = deltas.iter().map(|(i, d)| (*i, d.as_slice())).collect();
    let (delta, _) = plan.image_from_spectrum(plan.synthesize(&parts));
    let raw = Image {
        width: image.width,
        height: image.height,
        data: image.data.iter().zip(&delta.data).map(|(a, b)| a + b).collect(),
    };
    let (clamped, hits) = raw.clamped();
    let fraction = hits as f64 / image.len() as f64;
    if fraction > CLAMP_LIMIT {
        return Err(Error::Invisibility { fraction });
    }
    Ok(EmbedResult {
        psnr_vs_original: psnr(image, &raw)?,
        psnr_clamped: psnr(image, &clamped)?,
        image: clamped,
        clamped_fraction: fraction,
        wedges_touched: touched,
    })
}

/// Zero-bit embedding plus the rotation template.
pub fn embed_zero_bit(image: &Image, key: &WatermarkKey, plan: &FdctPlan) -> Result<EmbedResult> {
    if key.message_directions.len() != 1 {
        return Err(Error::BadKey(format!(
            "zero-bit embedding needs one message direction, key has {}",
            key.message_directions.len()
        )));
    }
    embed_with_signs(image, key, plan, &[1.0])
}

/// Direct message coding: bit `b` on direction `d` embeds `(2b - 1) W_d`.
pub fn embed_multibit(image: &Image, key: &WatermarkKey, bits: &[bool], plan: &FdctPlan) -> Result<EmbedResult> {
    if bits.len() != key.message_directions.len() || bits.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} bits for {} message directions",
            bits.len(),
            key.message_directions.len()
        )));
    }
    let signs: Vec<f64> = bits.iter().map(|&b| sign_of(b)).collect();
    embed_with_signs(image, key, plan, &signs)
}

fn complex_std(c: &[Complex64]) -> f64 {
    let n = c.len() as f64;
    let mean = c.iter().sum::<Complex64>() / n;
    (c.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / n).sqrt()
}

/// `(raw, normalized)` correlation of a subband with a pattern. The raw value
/// is `(1/L) sum Re(C conj W)`; the normalized one divides by the complex
/// standard deviations of both, which bounds it to [-1, 1] for a zero-mean W.
pub fn direct_statistic(c: &[Complex64], w: &[Complex64]) -> (f64, f64) {
    let l = c.len() as f64;
    let raw = c.iter().zip(w).map(|(c, w)| (c * w.conj()).re).sum::<f64>() / l;
    let d = complex_std(c) * complex_std(w);
    (raw, if d > 0.0 { raw / d } else { 0.0 })
}

/// Literal magnitude perturbation estimate `|C + alpha |C| W| - |C|`.
pub fn wabs_literal(c: &[Complex64], w: &[Complex64], alpha: f64) -> Vec<f64> {
    c.iter().zip(w).map(|(c, w)| (c + w * (alpha * c.norm())).norm() - c.norm()).collect()
}

/// Odd part of the estimate in `W`: `(est(W) - est(-W)) / 2`. The even part
/// is a positive multiple of `|C|` whatever the key, which would correlate
/// with `|C|` under the null.
pub fn wabs_odd(c: &[Complex64], w: &[Complex64], alpha: f64) -> Vec<f64> {
    c.iter()
        .zip(w)
        .map(|(c, w)| {
            let m = c.norm();
            let d = w * (alpha * m);
            ((c + d).norm() - (c - d).norm()) / 2.0
        })
        .collect()
}

/// Correlation of the coefficient magnitudes with the odd magnitude estimate,
/// both taken relative to `|C|`: `log |C|` against `est / |C|`. Without the
/// division a handful of large edge coefficients dominate the sums and the
/// null spread becomes huge. Returns `(raw covariance, normalized)`.
pub fn magnitude_statistic(c: &[Complex64], w: &[Complex64], alpha: f64) -> (f64, f64) {
    let peak = c.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let floor = peak * 1e-12;
    let e = wabs_odd(c, w, alpha);
    let mut xs = Vec::with_capacity(c.len());
    let mut ys = Vec::with_capacity(c.len());
    for (v, e) in c.iter().zip(&e) {
        let m = v.norm();
        if m > floor {
            xs.push(m.ln());
            ys.push(e / m);
        }
    }
    if xs.len() < 2 {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (a, b) in xs.iter().zip(&ys) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    let d = (vx * vy).sqrt();
    (cov / n, if d > 0.0 { cov / d } else { 0.0 })
}

/// Literal magnitude estimate for every message wedge of `key`.
pub fn estimate_wabs(test_image: &Image, key: &WatermarkKey, plan: &FdctPlan) -> Result<MagnitudeEstimate> {
    let spec = plan.spectrum(test_image)?;
    let mut values = Vec::new();
    let mut source = Vec::new();
    for &d in &key.message_directions {
        let c = plan.analyze(&spec, plan.wedge_index(key.embed_scale, d)?);
        let w = generate_pattern(key, plan, d)?;
        values.push(wabs_literal(&c, &w.values, key.alpha));
        source.push((key.embed_scale, d));
    }
    Ok(MagnitudeEstimate { values, source_subbands: source })
}

/// Subbands of one image, analyzed on demand and cached.
struct Analyzed<'a> {
    plan: &'a FdctPlan,
    spectrum: Vec<Complex64>,
    bands: HashMap<usize, Vec<Complex64>>,
}

impl<'a> Analyzed<'a> {
    fn new(image: &Image, plan: &'a FdctPlan) -> Result<Self> {
        Ok(Self { plan, spectrum: plan.spectrum(image)?, bands: HashMap::new() })
    }

    fn load(&mut self, idx: usize) {
        if !self.bands.contains_key(&idx) {
            let c = self.plan.analyze(&self.spectrum, idx);
            self.bands.insert(idx, c);
        }
    }

    fn band(&self, idx: usize) -> &[Complex64] {
        &self.bands[&idx]
    }
}

/// Direction at scale `to` whose center angle is nearest to `(from, dir)`.
fn matched_direction(plan: &FdctPlan, from: usize, dir: usize, to: usize) -> Result<usize> {
    let angle = plan.wedge(from, dir)?.center_angle;
    let n = plan.directions(to)?;
    let step = TAU / n as f64;
    Ok(((angle / step).round() as i64).rem_euclid(n as i64) as usize + 1)
}

/// `(scale, [(wedge index, direction at that scale)])`.
type ScaleLayout = (usize, Vec<(usize, usize)>);

/// Wedges probed for the magnitude statistic, for each candidate scale
/// present in the plan.
fn magnitude_layout(key: &WatermarkKey, plan: &FdctPlan) -> Result<Vec<ScaleLayout>> {
    let s = key.embed_scale;
    let mut out = Vec::new();
    for cand in [s - 1, s, s + 1] {
        if cand < 2 || cand > plan.n_scales {
            continue;
        }
        let mut ws = Vec::new();
        for &d in &key.message_directions {
            let dd = if cand == s { d } else { matched_direction(plan, s, d, cand)? };
            ws.push((plan.wedge_index(cand, dd)?, dd));
        }
        out.push((cand, ws));
    }
    Ok(out)
}

struct Stat {
    raw: f64,
    normalized: f64,
    scale: usize,
    bits: Option<Vec<BitReading>>,
}

/// Combine per-wedge readings: one wedge gives its signed statistic, several
/// give the mean absolute statistic plus decoded bits.
fn combine(readings: Vec<(usize, f64, f64)>, scale: usize) -> Stat {
    if readings.len() == 1 {
        let (_, raw, norm) = readings[0];
        return Stat { raw, normalized: norm, scale, bits: None };
    }
    let n = readings.len() as f64;
    let raw = readings.iter().map(|r| r.1.abs()).sum::<f64>() / n;
    let normalized = readings.iter().map(|r| r.2.abs()).sum::<f64>() / n;
    let bits = readings
        .iter()
        .map(|&(direction, _, c)| BitReading { direction, bit: c > 0.0, correlation: c })
        .collect();
    Stat { raw, normalized, scale, bits: Some(bits) }
}

fn direct_stat(key: &WatermarkKey, plan: &FdctPlan, a: &Analyzed) -> Result<Stat> {
    let mut readings = Vec::new();
    for &d in &key.message_directions {
        let w = generate_pattern(key, plan, d)?;
        let (raw, norm) = direct_statistic(a.band(plan.wedge_index(key.embed_scale, d)?), &w.values);
        readings.push((d, raw, norm));
    }
    Ok(combine(readings, key.embed_scale))
}

fn magnitude_stat(key: &WatermarkKey, plan: &FdctPlan, a: &Analyzed) -> Result<Stat> {
    let mut best: Option<Stat> = None;
    for (scale, ws) in magnitude_layout(key, plan)? {
        let mut readings = Vec::new();
        for &(idx, d) in &ws {
            let w = generate_pattern_at(key, plan, scale, d, MASK_EPSILON)?;
            let (raw, norm) = magnitude_statistic(a.band(idx), &w.values, key.alpha);
            readings.push((d, raw, norm));
        }
        let s = combine(readings, scale);
        if best.as_ref().is_none_or(|b| s.normalized > b.normalized) {
            best = Some(s);
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("no candidate scale in plan".into()))
}

fn prepare<'a>(image: &Image, key: &WatermarkKey, plan: &'a FdctPlan, mode: Mode) -> Result<Analyzed<'a>> {
    check_plan(image, plan)?;
    key.validate(plan)?;
    let mut a = Analyzed::new(image, plan)?;
    match mode {
        Mode::Direct => {
            for &d in &key.message_directions {
                a.load(plan.wedge_index(key.embed_scale, d)?);
            }
        }
        Mode::Magnitude | Mode::Geometric => {
            for (_, ws) in magnitude_layout(key, plan)? {
                for (idx, _) in ws {
                    a.load(idx);
                }
            }
        }
    }
    Ok(a)
}

fn statistic(key: &WatermarkKey, plan: &FdctPlan, a: &Analyzed, mode: Mode) -> Result<Stat> {
    match mode {
        Mode::Direct => direct_stat(key, plan, a),
        Mode::Magnitude | Mode::Geometric => magnitude_stat(key, plan, a),
    }
}

fn report(stat: Stat, threshold: f64, mode: Mode) -> DetectionReport {
    DetectionReport {
        raw_correlation: stat.raw,
        normalized_correlation: stat.normalized,
        threshold,
        decision: Decision::from_bool(stat.normalized > threshold),
        bits: stat.bits,
        rotation_index: None,
        mode,
        scale: stat.scale,
        template_found: None,
        rotation_degrees: None,
    }
}

/// Direct-mode detection; multibit keys also get their bits decoded.
pub fn detect(image: &Image, key: &WatermarkKey, plan: &FdctPlan, threshold: f64) -> Result<DetectionReport> {
    let a = prepare(image, key, plan, Mode::Direct)?;
    Ok(report(direct_stat(key, plan, &a)?, threshold, Mode::Direct))
}

pub fn detect_zero_bit(image: &Image, key: &WatermarkKey, plan: &FdctPlan, threshold: f64) -> Result<DetectionReport> {
    if key.is_multibit() {
        return Err(Error::BadKey("zero-bit detection needs a single message direction".into()));
    }
    detect(image, key, plan, threshold)
}

/// Bits are the signs of the per-wedge correlations; the presence statistic
/// is their mean absolute value.
pub fn detect_multibit(image: &Image, key: &WatermarkKey, plan: &FdctPlan, threshold: f64) -> Result<DetectionReport> {
    if !key.is_multibit() {
        return Err(Error::BadKey("multibit detection needs several message directions".into()));
    }
    detect(image, key, plan, threshold)
}

/// Magnitude-mode detection: maximum over the embed scale and its neighbors.
pub fn detect_magnitude(image: &Image, key: &WatermarkKey, plan: &FdctPlan, threshold: f64) -> Result<DetectionReport> {
    let a = prepare(image, key, plan, Mode::Magnitude)?;
    Ok(report(magnitude_stat(key, plan, &a)?, threshold, Mode::Magnitude))
}

/// Fake-key statistics for one image, in fake-index order.
pub fn fake_statistics(
    image: &Image,
    key: &WatermarkKey,
    plan: &FdctPlan,
    mode: Mode,
    population: usize,
    fake_base: u64,
) -> Result<Vec<f64>> {
    let a = prepare(image, key, plan, mode)?;
    (0..population as u64)
        .into_par_iter()
        .map(|i| {
            let fake = key.with_seed(Seed::fake(fake_base, i));
            statistic(&fake, plan, &a, mode).map(|s| s.normalized)
        })
        .collect()
}

/// `max(fake statistics) * (1 + margin)`.
pub fn calibrate_threshold(
    image: &Image,
    key: &WatermarkKey,
    plan: &FdctPlan,
    mode: Mode,
    population: usize,
    margin: f64,
    fake_base: u64,
) -> Result<f64> {
    if population == 0 {
        return Err(Error::InvalidArgument("fake-key population must be positive".into()));
    }
    let stats = fake_statistics(image, key, plan, mode, population, fake_base)?;
    Ok(threshold_from(&stats, margin))
}

pub fn threshold_from(fake_stats: &[f64], margin: f64) -> f64 {
    fake_stats.iter().cloned().fold(f64::NEG_INFINITY, f64::max) * (1.0 + margin)
}

/// Rotation estimate in units of the embed scale's angular resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationEstimate {
    /// Nearest whole step, in `0..n`.
    pub index: usize,
    /// Refined estimate in steps, in `[0, n)`.
    pub steps: f64,
    /// Keyed template correlation at `steps`.
    pub score: f64,
    /// Level below which the template counts as absent.
    pub floor: f64,
    /// Pair correlation per direction offset `0..n/2`.
    pub pair_scores: Vec<f64>,
}

fn disk(plan: &FdctPlan, idx: usize, fraction: f64) -> Vec<bool> {
    let w = &plan.wedges()[idx];
    let (cy, cx) = ((plan.height as f64 - 1.0) / 2.0, (plan.width as f64 - 1.0) / 2.0);
    let r = fraction * plan.width.min(plan.height) as f64 / 2.0;
    let mut out = Vec::with_capacity(w.len());
    for m in 0..w.rows {
        for n in 0..w.cols {
            let (y, x) = plan.coefficient_position(idx, m, n);
            out.push((y - cy).powi(2) + (x - cx).powi(2) < r * r);
        }
    }
    out
}

fn masked(c: &[Complex64], mask: &[bool]) -> Vec<Complex64> {
    c.iter().zip(mask).map(|(&v, &k)| if k { v } else { Complex64::new(0.0, 0.0) }).collect()
}

/// Normalized correlation `Re<a, b> / (|a| |b|)` of two subbands of one
/// wedge, maximized over small spatial shifts applied as phase ramps.
fn shift_searched(plan: &FdctPlan, idx: usize, a: &[Complex64], b: &[Complex64]) -> f64 {
    let w = &plan.wedges()[idx];
    let na = a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let mut fa = a.to_vec();
    let mut fb = b.to_vec();
    plan.fft().fft2(&mut fa, w.rows, w.cols, false);
    plan.fft().fft2(&mut fb, w.rows, w.cols, false);
    let p: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    let (fy, fx) = plan.box_frequencies(idx);
    let mut best = f64::NEG_INFINITY;
    for &sx in &SHIFTS {
        let px: Vec<Complex64> = fx.iter().map(|f| Complex64::from_polar(1.0, TAU * f * sx)).collect();
        let rows: Vec<Complex64> =
            p.chunks(w.cols).map(|row| row.iter().zip(&px).map(|(a, b)| a * b).sum()).collect();
        for &sy in &SHIFTS {
            let v: f64 = rows
                .iter()
                .zip(&fy)
                .map(|(r, f)| (r * Complex64::from_polar(1.0, TAU * f * sy)).re)
                .sum::<f64>();
            best = best.max(v / (na * nb));
        }
    }
    best
}

/// Rotate by `degrees` counter-clockwise, edge-filled, back on the plan's canvas.
fn rotate_to_plan(image: &Image, plan: &FdctPlan, degrees: f64) -> Image {
    if degrees.rem_euclid(360.0) == 0.0 {
        return fit(image, plan.width, plan.height);
    }
    fit(&rotate(image, degrees, true, Border::Edge), plan.width, plan.height)
}

/// Unit-modulus coefficients. Large edge coefficients otherwise dominate
/// every correlation while the pattern is spread evenly.
fn phase_only(c: &[Complex64]) -> Vec<Complex64> {
    let peak = c.iter().map(|v| v.norm()).fold(0.0, f64::max);
    c.iter()
        .map(|v| {
            let m = v.norm();
            if m > peak * 1e-12 {
                v / m
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect()
}

struct TemplateProbe<'a> {
    plan: &'a FdctPlan,
    idx: usize,
    mask: Vec<bool>,
    template: Vec<Complex64>,
}

impl TemplateProbe<'_> {
    /// Template correlation after turning the image back by `degrees`.
    fn score(&self, image: &Image, degrees: f64) -> Result<f64> {
        let z = rotate_to_plan(image, self.plan, -degrees);
        let c = phase_only(&self.plan.analyze(&self.plan.spectrum(&z)?, self.idx));
        Ok(shift_searched(self.plan, self.idx, &masked(&c, &self.mask), &self.template))
    }
}

/// Key-free pair scores: the image is turned back by the template offset and
/// each direction `base + k`, `k < n/2`, is compared with the same direction
/// of the unturned image. The base pattern and the template coincide there.
fn pair_scores(z: &Image, key: &WatermarkKey, plan: &FdctPlan) -> Result<Vec<f64>> {
    let s = key.embed_scale;
    let n = plan.directions(s)?;
    let step = 360.0 / n as f64;
    let zr = rotate_to_plan(z, plan, -(key.template_offset as f64) * step);
    let (sz, szr) = (plan.spectrum(z)?, plan.spectrum(&zr)?);
    let base = key.message_directions[0];
    (0..n / 2)
        .into_par_iter()
        .map(|k| {
            let idx = plan.wedge_index(s, (base - 1 + k) % n + 1)?;
            let m = disk(plan, idx, 0.95);
            let a = masked(&phase_only(&plan.analyze(&sz, idx)), &m);
            let b = masked(&phase_only(&plan.analyze(&szr, idx)), &m);
            // the base pattern carries the sign of the first bit
            let pos = shift_searched(plan, idx, &a, &b);
            let neg: Vec<Complex64> = b.iter().map(|v| -v).collect();
            Ok(pos.max(shift_searched(plan, idx, &a, &neg)))
        })
        .collect()
}

/// Estimate how far the image was rotated.
///
/// Pair scores locate the base pattern up to a half turn and give a
/// fractional step from the two best neighbors. A keyed check of the template
/// on the image turned back by each candidate picks the answer; if no
/// candidate clears the noise floor every whole step is checked.
pub fn estimate_rotation(test_image: &Image, key: &WatermarkKey, plan: &FdctPlan) -> Result<RotationEstimate> {
    key.validate(plan)?;
    let s = key.embed_scale;
    let n = plan.directions(s)?;
    let half = n / 2;
    let step = 360.0 / n as f64;
    let z = fit(test_image, plan.width, plan.height);
    let idx = plan.wedge_index(s, key.template_direction)?;
    // a small disk tolerates a larger angular error in the candidates
    let mask = disk(plan, idx, 0.5);
    let t = make_template(key, plan)?;
    let probe = TemplateProbe { plan, idx, template: masked(&t.values, &mask), mask };
    let support = plan.wedge_mask(s, key.template_direction, MASK_EPSILON)?.len() as f64;
    let disk_fraction = probe.mask.iter().filter(|&&k| k).count() as f64 / probe.mask.len() as f64;
    let floor = 5.0 / (2.0 * support * disk_fraction).sqrt();

    let pairs = pair_scores(&z, key, plan)?;
    let mut sorted = pairs.clone();
    sorted.sort_by(f64::total_cmp);
    let baseline = sorted[half / 2];
    let k0 = (0..half).max_by(|&a, &b| pairs[a].total_cmp(&pairs[b])).unwrap_or(0);
    let up = pairs[(k0 + 1) % half];
    let down = pairs[(k0 + half - 1) % half];
    let sg = if up >= down { 1.0 } else { -1.0 };
    let s0 = (pairs[k0] - baseline).max(0.0);
    let s1 = (up.max(down) - baseline).max(0.0);
    let frac = if s0 + s1 > 0.0 { s1 / (s0 + s1) } else { 0.0 };

    let mut candidates: Vec<f64> = Vec::new();
    for turn in [0.0, half as f64] {
        for off in [0.0, frac * sg, 0.5 * sg, -0.5 * sg] {
            let h = (k0 as f64 + off + turn).rem_euclid(n as f64);
            if !candidates.iter().any(|c| (c - h).abs() < 1e-9) {
                candidates.push(h);
            }
        }
    }
    let mut scores: Vec<f64> =
        candidates.par_iter().map(|&h| probe.score(&z, h * step)).collect::<Result<_>>()?;
    // fallbacks: a fine scan around the pair peak, then every whole step
    let fine: Vec<f64> = [0.0, half as f64]
        .iter()
        .flat_map(|turn| (-15..=15).map(move |i| k0 as f64 + turn + i as f64 * 0.08))
        .map(|h| h.rem_euclid(n as f64))
        .collect();
    let whole: Vec<f64> = (0..n).map(|k| k as f64).collect();
    for extra in [fine, whole] {
        if scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max) >= floor {
            break;
        }
        let rest: Vec<f64> = extra
            .into_iter()
            .filter(|h| !candidates.iter().any(|c| (c - h).abs() < 1e-9))
            .collect();
        let more: Vec<f64> =
            rest.par_iter().map(|&h| probe.score(&z, h * step)).collect::<Result<_>>()?;
        candidates.extend(rest);
        scores.extend(more);
    }
    let best = (0..candidates.len()).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap_or(0);
    let (steps, score) = (candidates[best], scores[best]);
    if score < floor {
        return Err(Error::NoTemplate);
    }
    Ok(RotationEstimate { index: (steps.round() as usize) % n, steps, score, floor, pair_scores: pairs })
}

/// Bring an attacked image back to the nominal canvas: a same-aspect image is
/// resampled (scaling), anything else is cropped or padded about the center
/// (expanded rotation canvas).
pub fn restore_canvas(image: &Image, width: usize, height: usize) -> Image {
    let aspect = image.width as f64 / image.height as f64;
    let nominal = width as f64 / height as f64;
    if (aspect / nominal - 1.0).abs() < 0.01 {
        resize(image, width, height)
    } else {
        fit(image, width, height)
    }
}

fn residual_grid(first: f64) -> Vec<(f64, f64)> {
    let mut g = vec![(first, 1.0)];
    let mut rs: Vec<f64> = (-5..=5).map(|r| r as f64).collect();
    rs.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
    for r in rs {
        for f in [1.0, 0.95, 1.05] {
            if (r - first).abs() > 1e-9 || f != 1.0 {
                g.push((r, f));
            }
        }
    }
    g
}

fn derotated(image: &Image, plan: &FdctPlan, degrees: f64, factor: f64) -> Image {
    let r = rotate_to_plan(image, plan, -degrees);
    if factor == 1.0 {
        r
    } else {
        fit(&scale_by(&r, factor), plan.width, plan.height)
    }
}

/// Full geometric pipeline: canvas restore, rotation estimate, derotation and
/// a residual search over small angles and scales with magnitude detection.
/// The search stops at the first candidate that clears the threshold.
pub fn detect_geometric(
    test_image: &Image,
    key: &WatermarkKey,
    plan: &FdctPlan,
    threshold: f64,
) -> Result<DetectionReport> {
    let z = restore_canvas(test_image, plan.width, plan.height);
    let est = match estimate_rotation(&z, key, plan) {
        Ok(e) => e,
        Err(Error::NoTemplate) => {
            let mut r = detect_magnitude(&z, key, plan, threshold)?;
            if !r.decision.is_present() {
                return Err(Error::NoTemplate);
            }
            r.mode = Mode::Geometric;
            r.rotation_index = Some(0);
            r.rotation_degrees = Some(0.0);
            r.template_found = Some(false);
            return Ok(r);
        }
        Err(e) => return Err(e),
    };
    let step = 360.0 / plan.directions(key.embed_scale)? as f64;
    let coarse = est.index as f64 * step;
    let mut residual = est.steps * step - coarse;
    if residual > 180.0 {
        residual -= 360.0;
    }
    let mut best: Option<DetectionReport> = None;
    for (r, f) in residual_grid(residual) {
        let total = coarse + r;
        let img = derotated(&z, plan, total, f);
        let mut rep = detect_magnitude(&img, key, plan, threshold)?;
        rep.mode = Mode::Geometric;
        rep.rotation_index = Some(est.index);
        rep.rotation_degrees = Some(total);
        rep.template_found = Some(true);
        let present = rep.decision.is_present();
        if best.as_ref().is_none_or(|b| rep.normalized_correlation > b.normalized_correlation) {
            best = Some(rep);
        }
        if present {
            break;
        }
    }
    Ok(best.expect("grid is nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::KeyedStream;
    use approx::assert_relative_eq;

    fn plan() -> FdctPlan {
        FdctPlan::new(256, 256, 4, 32).unwrap()
    }

    fn textured(seed: u64) -> Image {
        let mut s = KeyedStream::from_u64("watermark-test", seed);
        let mut img = Image::from_fn(256, 256, |x, y| {
            let (x, y) = (x as f64, y as f64);
            120.0 + 40.0 * (x * 0.11 + y * 0.03).sin() + 25.0 * (y * 0.21).cos() + 12.0 * s.normal()
        });
        img = img.clamped().0;
        img
    }

    fn key(alpha: f64) -> WatermarkKey {
        WatermarkKey::zero_bit(Seed([3; 32]), alpha)
    }

    #[test]
    fn zero_strength_is_identity() {
        let p = plan();
        let img = textured(1).quantized();
        let r = embed_zero_bit(&img, &key(0.0), &p).unwrap();
        assert!(r.image.max_abs_diff(&img) < 1e-9);
        assert!(r.psnr_vs_original > 250.0 || r.psnr_vs_original.is_infinite());
    }

    #[test]
    fn coefficient_identity() {
        let c: Vec<Complex64> = (0..50).map(|i| Complex64::new(i as f64 - 20.0, 3.0 - i as f64 * 0.1)).collect();
        let w: Vec<Complex64> = (0..50).map(|i| Complex64::from_polar(1.0, i as f64)).collect();
        let m = marked_coefficients(&c, &w, 0.3, -1.0);
        for ((m, c), w) in m.iter().zip(&c).zip(&w) {
            assert!((m - c + w * (0.3 * c.norm())).norm() < 1e-12);
        }
    }

    #[test]
    fn raw_statistic_matches_plugged_in_value() {
        let p = plan();
        let k = key(0.4);
        let img = textured(2);
        let idx = p.wedge_index(3, 1).unwrap();
        let c = p.analyze(&p.spectrum(&img).unwrap(), idx);
        let w = generate_pattern(&k, &p, 1).unwrap();
        let marked = marked_coefficients(&c, &w.values, k.alpha, 1.0);
        let (raw, norm) = direct_statistic(&marked, &w.values);
        let (raw0, _) = direct_statistic(&c, &w.values);
        let expect = k.alpha * c.iter().zip(&w.values).map(|(c, w)| c.norm() * w.norm_sqr()).sum::<f64>()
            / c.len() as f64;
        assert_relative_eq!(raw - raw0, expect, max_relative = 1e-12);
        let mean_abs = c.iter().map(|v| v.norm()).sum::<f64>() / c.len() as f64;
        assert!((raw - k.alpha * mean_abs).abs() < 0.3 * k.alpha * mean_abs);
        assert!(norm.abs() <= 1.0);
    }

    #[test]
    fn embed_then_detect() {
        let p = plan();
        let k = key(0.5);
        let img = textured(3);
        let r = embed_zero_bit(&img, &k, &p).unwrap();
        let marked = r.image.quantized();
        let fakes = fake_statistics(&marked, &k, &p, Mode::Direct, 100, DEFAULT_FAKE_BASE).unwrap();
        let t = threshold_from(&fakes, 0.5);
        assert!(detect_zero_bit(&marked, &k, &p, t).unwrap().decision.is_present());
        assert!(!detect_zero_bit(&img.quantized(), &k, &p, t).unwrap().decision.is_present());
        let m = detect_magnitude(&marked, &k, &p, 0.0).unwrap();
        assert!(m.normalized_correlation > 0.0);
    }

    #[test]
    fn multibit_round_trip_and_sign_flip() {
        let p = plan();
        let k = WatermarkKey::multibit(Seed([5; 32]), 0.5);
        let img = textured(4);
        let bits = [true, false, true, true, false, false];
        let r = embed_multibit(&img, &k, &bits, &p).unwrap();
        let d = detect_multibit(&r.image.quantized(), &k, &p, 0.0).unwrap();
        assert_eq!(d.decoded_bits().unwrap(), bits);
        let mut flipped = bits;
        flipped[2] = !flipped[2];
        let r2 = embed_multibit(&img, &k, &flipped, &p).unwrap();
        assert_eq!(detect_multibit(&r2.image.quantized(), &k, &p, 0.0).unwrap().decoded_bits().unwrap(), flipped);
        assert!(embed_multibit(&img, &k, &bits[..5], &p).is_err());
    }

    #[test]
    fn wabs_bounds() {
        let mut s = KeyedStream::from_u64("wabs", 1);
        let c: Vec<Complex64> = (0..500).map(|_| s.complex_normal() * 3.0).collect();
        let w: Vec<Complex64> = (0..500).map(|_| s.complex_normal()).collect();
        let est = wabs_literal(&c, &w, 0.2);
        for ((e, c), w) in est.iter().zip(&c).zip(&w) {
            assert!(*e <= 0.2 * c.norm() * w.norm() + 1e-12);
        }
        // colinear: exact
        let wl: Vec<Complex64> = c.iter().map(|c| c / c.norm() * 0.7).collect();
        for (e, c) in wabs_literal(&c, &wl, 0.2).iter().zip(&c) {
            assert_relative_eq!(*e, 0.2 * c.norm() * 0.7, max_relative = 1e-12);
        }
        assert!(wabs_literal(&[Complex64::new(0.0, 0.0); 4], &w[..4], 0.2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn odd_estimate_removes_null_bias() {
        let mut s = KeyedStream::from_u64("wabs-null", 2);
        let c: Vec<Complex64> = (0..20000).map(|_| s.complex_normal() * (1.0 + s.uniform() * 4.0)).collect();
        let w: Vec<Complex64> = (0..20000).map(|_| s.complex_normal()).collect();
        let (_, odd) = magnitude_statistic(&c, &w, 0.5);
        assert!(odd.abs() < 4.0 / (20000f64).sqrt());
        let lit = wabs_literal(&c, &w, 0.5);
        let m: Vec<f64> = c.iter().map(|v| v.norm()).collect();
        let mm = m.iter().sum::<f64>() / m.len() as f64;
        let ml = lit.iter().sum::<f64>() / lit.len() as f64;
        let cov: f64 = m.iter().zip(&lit).map(|(a, b)| (a - mm) * (b - ml)).sum();
        assert!(cov > 0.0);
    }

    #[test]
    fn calibration_arithmetic() {
        assert_eq!(threshold_from(&[0.2], 0.5), 0.2 * 1.5);
        let a = threshold_from(&[0.1, 0.3], 0.5) - 0.3;
        let b = threshold_from(&[0.1, 0.3], 1.0) - 0.3;
        assert_relative_eq!(b, 2.0 * a, max_relative = 1e-12);
    }

    #[test]
    fn rotation_estimate_on_quarter_turn() {
        let p = plan();
        let k = key(0.8);
        let img = textured(6);
        let marked = embed_zero_bit(&img, &k, &p).unwrap().image.quantized();
        assert_eq!(estimate_rotation(&marked, &k, &p).unwrap().index, 0);
        let turned = rotate(&marked, 90.0, true, Border::Edge).quantized();
        assert_eq!(estimate_rotation(&turned, &k, &p).unwrap().index, 8);
    }
}
