//! Wrapping-style fast discrete curvelet transform.
//!
//! The frequency plane is split by a radial Meyer-type partition into scales
//! and, at every scale but the coarsest, into equal angular sectors. Each
//! wedge window `U = W_radial * V` satisfies `sum U^2 = 1` at every DFT
//! sample, so analysis followed by synthesis is the identity and energy is
//! preserved.
//!
//! A wedge's spectrum is wrapped into the bounding box of its support: the
//! sample at centered frequency `r` lands in slot `r mod M`, which keeps the
//! coefficient grid aligned with pixel positions (`m * H / M1`, `n * W / M2`)
//! and makes the partner wedge of a real image hold exactly the complex
//! conjugate coefficients.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fourier::{next_smooth, FftCache};
use crate::image::Image;

/// Window shape parameters shared by every plan built from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    /// Outer edge (cycles/pixel) of the second-finest scale; inner scales halve it.
    pub b_fine: f64,
    /// Half-width of the radial transitions relative to the boundary radius.
    pub tau_radial: f64,
    /// Half-width of the angular transitions relative to half a sector.
    pub tau_angular: f64,
    /// Round wedge boxes up to 5-smooth sizes for faster FFTs.
    pub smooth_boxes: bool,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self { b_fine: 0.3, tau_radial: 5e-4, tau_angular: 5e-4, smooth_boxes: true }
    }
}

/// Scale count used when none is requested.
pub fn default_n_scales(width: usize, height: usize) -> usize {
    let m = width.min(height).max(1) as f64;
    (m.log2().ceil() as usize).saturating_sub(4).max(3)
}

/// Direction counts per scale (index 0 is the coarsest, which has one).
pub fn angle_schedule(n_scales: usize, angles_at_scale3: usize) -> Vec<usize> {
    let a = angles_at_scale3;
    let n2 = if (a / 2).is_multiple_of(4) { a / 2 } else { a };
    (1..=n_scales)
        .map(|j| match j {
            1 => 1,
            2 => n2,
            _ => a << ((j - 3) / 2),
        })
        .collect()
}

fn meyer(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x.powi(4) * (35.0 - 84.0 * x + 70.0 * x * x - 20.0 * x.powi(3))
}

/// Smooth step from 1 (t <= 1 - tau) to 0 (t >= 1 + tau).
fn lowpass(t: f64, tau: f64) -> f64 {
    if t <= 1.0 - tau {
        1.0
    } else if t >= 1.0 + tau {
        0.0
    } else {
        (FRAC_PI_2 * meyer((t - (1.0 - tau)) / (2.0 * tau))).cos()
    }
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// One analysis tile of the frequency plane.
#[derive(Debug, Clone)]
pub struct Wedge {
    pub scale: usize,
    pub direction: usize,
    /// Center of the angular sector, radians counter-clockwise from +x.
    pub center_angle: f64,
    /// Index of the wedge holding the conjugate-symmetric frequencies.
    pub partner: usize,
    pub rows: usize,
    pub cols: usize,
    /// Smallest centered frequency index covered by the box, per axis.
    pub row_origin: i64,
    pub col_origin: i64,
    bins: Vec<u32>,
    slots: Vec<u32>,
    weights: Vec<f64>,
}

impl Wedge {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Number of DFT samples with a nonzero window.
    pub fn support_size(&self) -> usize {
        self.bins.len()
    }

    /// Window weight at every box slot (zero outside the support).
    pub fn weight_grid(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.len()];
        for (&s, &w) in self.slots.iter().zip(&self.weights) {
            g[s as usize] = w;
        }
        g
    }

    pub fn peak_weight(&self) -> f64 {
        self.weights.iter().cloned().fold(0.0, f64::max)
    }

    /// Centered frequency index represented by box row `u`.
    pub fn row_frequency_index(&self, u: usize) -> i64 {
        self.row_origin + (u as i64 - self.row_origin).rem_euclid(self.rows as i64)
    }

    pub fn col_frequency_index(&self, v: usize) -> i64 {
        self.col_origin + (v as i64 - self.col_origin).rem_euclid(self.cols as i64)
    }
}

/// Support of one wedge inside its box grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WedgeMask {
    pub scale: usize,
    pub direction: usize,
    pub rows: usize,
    pub cols: usize,
    /// `(u, v)` box coordinates in row-major order.
    pub support: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
    pub epsilon: f64,
}

impl WedgeMask {
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn indicator(&self) -> Vec<bool> {
        let mut m = vec![false; self.rows * self.cols];
        for &(u, v) in &self.support {
            m[u * self.cols + v] = true;
        }
        m
    }
}

/// One subband of coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Subband {
    pub scale: usize,
    pub direction: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

/// All subbands of one image, in plan order.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveletPyramid {
    pub plan_id: u64,
    pub subbands: Vec<Subband>,
}

impl CurveletPyramid {
    pub fn get(&self, plan: &FdctPlan, scale: usize, direction: usize) -> Result<&Subband> {
        Ok(&self.subbands[plan.wedge_index(scale, direction)?])
    }

    pub fn get_mut(
        &mut self,
        plan: &FdctPlan,
        scale: usize,
        direction: usize,
    ) -> Result<&mut Subband> {
        Ok(&mut self.subbands[plan.wedge_index(scale, direction)?])
    }

    pub fn energy(&self) -> f64 {
        self.subbands.iter().flat_map(|s| s.data.iter()).map(|c| c.norm_sqr()).sum()
    }
}

/// Precomputed transform geometry for one image size. Immutable and `Sync`.
#[derive(Debug, Clone)]
pub struct FdctPlan {
    pub width: usize,
    pub height: usize,
    pub n_scales: usize,
    pub angles: Vec<usize>,
    pub config: PlanConfig,
    pub id: u64,
    wedges: Vec<Wedge>,
    offsets: Vec<usize>,
    fft: FftCache,
}

struct Entry {
    wedge: u32,
    bin: u32,
    ry: i32,
    rx: i32,
    weight: f64,
}

impl FdctPlan {
    /// Plan with the default window configuration; `angles` is the direction
    /// count at scale 3.
    pub fn new(width: usize, height: usize, n_scales: usize, angles: usize) -> Result<Self> {
        Self::with_config(width, height, n_scales, angles, PlanConfig::default())
    }

    pub fn with_config(
        width: usize,
        height: usize,
        n_scales: usize,
        angles: usize,
        config: PlanConfig,
    ) -> Result<Self> {
        if width < 64 || height < 64 {
            return Err(Error::InvalidPlan(format!("{width}x{height} is below 64x64")));
        }
        if angles == 0 || !angles.is_multiple_of(4) {
            return Err(Error::InvalidPlan(format!("{angles} directions is not a multiple of 4")));
        }
        if n_scales < 3 {
            return Err(Error::InvalidPlan(format!("{n_scales} scales (need at least 3)")));
        }
        let tr = config.tau_radial;
        if !(tr > 0.0 && tr < 1.0 / 3.0 && config.tau_angular > 0.0 && config.tau_angular <= 1.0)
        {
            return Err(Error::InvalidPlan("transition widths out of range".into()));
        }
        if !(config.b_fine > 0.0 && config.b_fine * (1.0 + tr) < 0.5) {
            return Err(Error::InvalidPlan(format!("b_fine {} out of range", config.b_fine)));
        }
        let angle_counts = angle_schedule(n_scales, angles);
        let mut offsets = Vec::with_capacity(n_scales + 1);
        let mut total = 0;
        for &n in &angle_counts {
            offsets.push(total);
            total += n;
        }
        offsets.push(total);

        let geometry = Geometry::new(width, height, n_scales, &angle_counts, config);
        let entries = geometry.scan(&offsets);
        let mut wedges = build_wedges(&geometry, &angle_counts, &offsets, entries, config);
        for w in &mut wedges {
            w.center_angle = if w.scale == 1 {
                0.0
            } else {
                let n = angle_counts[w.scale - 1] as f64;
                (w.direction as f64 - 1.0) * TAU / n
            };
        }
        let mut sizes = vec![width, height];
        for w in &wedges {
            sizes.push(w.rows);
            sizes.push(w.cols);
        }
        sizes.sort_unstable();
        sizes.dedup();
        let fft = FftCache::with_sizes(sizes);

        let mut h = Sha256::new();
        h.update(format!(
            "{width}x{height}/{n_scales}/{angles}/{:?}",
            (config.b_fine, config.tau_radial, config.tau_angular, config.smooth_boxes)
        ));
        let digest = h.finalize();
        let id = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));

        Ok(Self {
            width,
            height,
            n_scales,
            angles: angle_counts,
            config,
            id,
            wedges,
            offsets,
            fft,
        })
    }

    /// Plan using the default scale count for the image size.
    pub fn for_image(width: usize, height: usize, angles: usize) -> Result<Self> {
        Self::new(width, height, default_n_scales(width, height), angles)
    }

    pub fn fft(&self) -> &FftCache {
        &self.fft
    }

    pub fn wedges(&self) -> &[Wedge] {
        &self.wedges
    }

    pub fn n_wedges(&self) -> usize {
        self.wedges.len()
    }

    pub fn directions(&self, scale: usize) -> Result<usize> {
        if scale == 0 || scale > self.n_scales {
            return Err(Error::InvalidIndex(format!("scale {scale} of {}", self.n_scales)));
        }
        Ok(self.angles[scale - 1])
    }

    pub fn wedge_index(&self, scale: usize, direction: usize) -> Result<usize> {
        let n = self.directions(scale)?;
        if direction == 0 || direction > n {
            return Err(Error::InvalidIndex(format!(
                "direction {direction} at scale {scale} ({n} directions)"
            )));
        }
        Ok(self.offsets[scale - 1] + direction - 1)
    }

    pub fn wedge(&self, scale: usize, direction: usize) -> Result<&Wedge> {
        Ok(&self.wedges[self.wedge_index(scale, direction)?])
    }

    /// Direction of the conjugate partner wedge.
    pub fn partner_direction(&self, scale: usize, direction: usize) -> Result<usize> {
        let idx = self.partner(self.wedge_index(scale, direction)?);
        Ok(self.wedges[idx].direction)
    }

    pub fn partner(&self, index: usize) -> usize {
        self.wedges[index].partner
    }

    /// Sum of coefficient counts over all wedges divided by the pixel count.
    pub fn redundancy(&self) -> f64 {
        self.wedges.iter().map(|w| w.len()).sum::<usize>() as f64
            / (self.width * self.height) as f64
    }

    /// Squared-window sum at an arbitrary continuous frequency (cycles/pixel,
    /// y axis pointing up). Equals 1 everywhere for a valid plan.
    pub fn window_energy_at(&self, nu_x: f64, nu_y: f64) -> f64 {
        let g = Geometry::new(self.width, self.height, self.n_scales, &self.angles, self.config);
        g.responses(nu_x, nu_y, &self.offsets).iter().map(|(_, u)| u * u).sum()
    }

    /// Unitary spectrum of an image.
    pub fn spectrum(&self, image: &Image) -> Result<Vec<Complex64>> {
        self.check_dims(image)?;
        Ok(self.fft.forward_real(&image.data, self.height, self.width))
    }

    fn check_dims(&self, image: &Image) -> Result<()> {
        if image.width != self.width || image.height != self.height {
            return Err(Error::Dimension(format!(
                "image {}x{} vs plan {}x{}",
                image.width, image.height, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Coefficients of one wedge from a precomputed spectrum.
    pub fn analyze(&self, spectrum: &[Complex64], index: usize) -> Vec<Complex64> {
        let w = &self.wedges[index];
        let mut buf = vec![Complex64::new(0.0, 0.0); w.len()];
        for ((&b, &s), &u) in w.bins.iter().zip(&w.slots).zip(&w.weights) {
            buf[s as usize] = spectrum[b as usize] * u;
        }
        self.fft.fft2(&mut buf, w.rows, w.cols, true);
        buf
    }

    /// Add the spectral contribution of one subband into `spectrum`.
    pub fn accumulate(&self, spectrum: &mut [Complex64], index: usize, coeffs: &[Complex64]) {
        let w = &self.wedges[index];
        let b = self.wedge_spectrum(index, coeffs);
        for ((&bin, &s), &u) in w.bins.iter().zip(&w.slots).zip(&w.weights) {
            spectrum[bin as usize] += b[s as usize] * u;
        }
    }

    fn wedge_spectrum(&self, index: usize, coeffs: &[Complex64]) -> Vec<Complex64> {
        let w = &self.wedges[index];
        assert_eq!(coeffs.len(), w.len(), "subband shape does not match wedge");
        let mut b = coeffs.to_vec();
        self.fft.fft2(&mut b, w.rows, w.cols, false);
        b
    }

    /// Real image from a spectrum, plus the imaginary/real energy ratio.
    pub fn image_from_spectrum(&self, mut spectrum: Vec<Complex64>) -> (Image, f64) {
        self.fft.fft2(&mut spectrum, self.height, self.width, true);
        let mut re = 0.0;
        let mut im = 0.0;
        let data = spectrum
            .iter()
            .map(|c| {
                re += c.re * c.re;
                im += c.im * c.im;
                c.re
            })
            .collect();
        let ratio = if re > 0.0 { im / re } else if im > 0.0 { f64::INFINITY } else { 0.0 };
        (Image { width: self.width, height: self.height, data }, ratio)
    }

    pub fn forward(&self, image: &Image) -> Result<CurveletPyramid> {
        let spec = self.spectrum(image)?;
        Ok(self.forward_spectrum(&spec))
    }

    pub fn forward_spectrum(&self, spectrum: &[Complex64]) -> CurveletPyramid {
        let subbands = (0..self.wedges.len())
            .into_par_iter()
            .map(|i| {
                let w = &self.wedges[i];
                Subband {
                    scale: w.scale,
                    direction: w.direction,
                    rows: w.rows,
                    cols: w.cols,
                    data: self.analyze(spectrum, i),
                }
            })
            .collect();
        CurveletPyramid { plan_id: self.id, subbands }
    }

    /// Synthesis. Returns the real part; see [`FdctPlan::inverse_flagged`] to
    /// learn whether the pyramid was conjugate-consistent.
    pub fn inverse(&self, pyramid: &CurveletPyramid) -> Result<Image> {
        Ok(self.inverse_flagged(pyramid)?.0)
    }

    /// Synthesis plus a flag raised when the imaginary residue exceeds 1e-12
    /// of the real energy, which means conjugate pairing was broken.
    pub fn inverse_flagged(&self, pyramid: &CurveletPyramid) -> Result<(Image, bool)> {
        self.check_pyramid(pyramid)?;
        let parts: Vec<(usize, &[Complex64])> =
            pyramid.subbands.iter().enumerate().map(|(i, s)| (i, s.data.as_slice())).collect();
        let spec = self.synthesize(&parts);
        let (img, ratio) = self.image_from_spectrum(spec);
        Ok((img, ratio > 1e-12))
    }

    /// Spectrum of the sum of the given subbands (all others zero).
    pub fn synthesize(&self, parts: &[(usize, &[Complex64])]) -> Vec<Complex64> {
        let spectra: Vec<Vec<Complex64>> =
            parts.par_iter().map(|&(i, c)| self.wedge_spectrum(i, c)).collect();
        let mut spec = vec![Complex64::new(0.0, 0.0); self.width * self.height];
        for (&(i, _), b) in parts.iter().zip(&spectra) {
            let w = &self.wedges[i];
            for ((&bin, &s), &u) in w.bins.iter().zip(&w.slots).zip(&w.weights) {
                spec[bin as usize] += b[s as usize] * u;
            }
        }
        spec
    }

    fn check_pyramid(&self, pyramid: &CurveletPyramid) -> Result<()> {
        if pyramid.subbands.len() != self.wedges.len() {
            return Err(Error::Dimension(format!(
                "{} subbands for a plan with {} wedges",
                pyramid.subbands.len(),
                self.wedges.len()
            )));
        }
        for (s, w) in pyramid.subbands.iter().zip(&self.wedges) {
            if s.rows != w.rows || s.cols != w.cols || s.data.len() != w.len() {
                return Err(Error::Dimension(format!(
                    "subband ({}, {}) is {}x{}, expected {}x{}",
                    w.scale, w.direction, s.rows, s.cols, w.rows, w.cols
                )));
            }
        }
        Ok(())
    }

    /// All-zero pyramid shaped for this plan.
    pub fn zero_pyramid(&self) -> CurveletPyramid {
        let subbands = self
            .wedges
            .iter()
            .map(|w| Subband {
                scale: w.scale,
                direction: w.direction,
                rows: w.rows,
                cols: w.cols,
                data: vec![Complex64::new(0.0, 0.0); w.len()],
            })
            .collect();
        CurveletPyramid { plan_id: self.id, subbands }
    }

    /// DFT-domain support of a wedge inside its box: samples whose window
    /// exceeds `epsilon` times the wedge's peak window value.
    pub fn wedge_mask(&self, scale: usize, direction: usize, epsilon: f64) -> Result<WedgeMask> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside (0, 1)")));
        }
        let w = self.wedge(scale, direction)?;
        let cut = epsilon * w.peak_weight();
        let grid = w.weight_grid();
        let mut support = Vec::new();
        let mut weights = Vec::new();
        for (i, &g) in grid.iter().enumerate() {
            if g > cut {
                support.push((i / w.cols, i % w.cols));
                weights.push(g);
            }
        }
        if support.is_empty() {
            return Err(Error::EmptyMask { scale, direction });
        }
        Ok(WedgeMask { scale, direction, rows: w.rows, cols: w.cols, support, weights, epsilon })
    }

    /// Absolute frequencies (cycles/pixel) of each box row and column.
    pub fn box_frequencies(&self, index: usize) -> (Vec<f64>, Vec<f64>) {
        let w = &self.wedges[index];
        let fy = (0..w.rows).map(|u| w.row_frequency_index(u) as f64 / self.height as f64);
        let fx = (0..w.cols).map(|v| w.col_frequency_index(v) as f64 / self.width as f64);
        (fy.collect(), fx.collect())
    }

    /// Pixel position `(y, x)` of coefficient `(m, n)` of a wedge.
    pub fn coefficient_position(&self, index: usize, m: usize, n: usize) -> (f64, f64) {
        let w = &self.wedges[index];
        (
            m as f64 * self.height as f64 / w.rows as f64,
            n as f64 * self.width as f64 / w.cols as f64,
        )
    }
}

/// Continuous window definitions for a given size and scale layout.
struct Geometry {
    width: usize,
    height: usize,
    n_scales: usize,
    angles: Vec<usize>,
    bounds: Vec<f64>,
    config: PlanConfig,
}

impl Geometry {
    fn new(
        width: usize,
        height: usize,
        n_scales: usize,
        angles: &[usize],
        config: PlanConfig,
    ) -> Self {
        // bounds[j-1] is the outer edge of low-pass j, for j = 1..n_scales-1
        let bounds = (1..n_scales)
            .map(|j| config.b_fine / f64::powi(2.0, (n_scales - 1 - j) as i32))
            .collect();
        Self { width, height, n_scales, angles: angles.to_vec(), bounds, config }
    }

    /// Nested low-pass values Phi_1..Phi_{J-1}; Phi_1 is separable (square).
    fn lowpasses(&self, nu_x: f64, nu_y: f64) -> Vec<f64> {
        let tau = self.config.tau_radial;
        let r = nu_x.hypot(nu_y);
        let mut phi = Vec::with_capacity(self.n_scales);
        for (j, &b) in self.bounds.iter().enumerate() {
            phi.push(if j == 0 {
                lowpass(nu_x.abs() / b, tau) * lowpass(nu_y.abs() / b, tau)
            } else {
                lowpass(r / b, tau)
            });
        }
        phi
    }

    fn angular(&self, theta: f64, l: usize, n: usize) -> f64 {
        let sector = TAU / n as f64;
        let delta = self.config.tau_angular * sector / 2.0;
        let a1 = wrap_angle(theta - (l as f64 - 1.5) * sector);
        let a2 = wrap_angle(theta - (l as f64 - 0.5) * sector);
        if a1.abs() < delta {
            (FRAC_PI_2 * meyer((a1 + delta) / (2.0 * delta))).sin()
        } else if a2.abs() < delta {
            (FRAC_PI_2 * meyer((a2 + delta) / (2.0 * delta))).cos()
        } else if a1 > 0.0 && a2 < 0.0 {
            1.0
        } else {
            0.0
        }
    }

    /// Nonzero `(wedge index, window)` pairs at a continuous frequency.
    fn responses(&self, nu_x: f64, nu_y: f64, offsets: &[usize]) -> Vec<(usize, f64)> {
        let phi = self.lowpasses(nu_x, nu_y);
        let mut out = Vec::with_capacity(6);
        if phi[0] > 0.0 {
            out.push((0, phi[0]));
        }
        let theta = nu_y.atan2(nu_x).rem_euclid(TAU);
        for j in 2..=self.n_scales {
            let outer = if j == self.n_scales { 1.0 } else { phi[j - 1] };
            let inner = phi[j - 2];
            let radial = (outer * outer - inner * inner).max(0.0).sqrt();
            if radial <= 0.0 {
                continue;
            }
            let n = self.angles[j - 1];
            let sector = TAU / n as f64;
            let main = (((theta / sector + 0.5).floor() as usize) % n) + 1;
            let prev = if main == 1 { n } else { main - 1 };
            let next = if main == n { 1 } else { main + 1 };
            for l in [prev, main, next] {
                let v = self.angular(theta, l, n);
                if v > 0.0 {
                    out.push((offsets[j - 1] + l - 1, radial * v));
                }
            }
        }
        out
    }

    /// Alias representatives of a DFT bin: Nyquist rows/columns of even
    /// sizes stand for both +N/2 and -N/2.
    fn representatives(idx: usize, n: usize) -> ([i64; 2], usize) {
        let half = n / 2;
        let c = if idx <= (n - 1) / 2 { idx as i64 } else { idx as i64 - n as i64 };
        if n.is_multiple_of(2) && idx == half {
            ([half as i64, -(half as i64)], 2)
        } else {
            ([c, 0], 1)
        }
    }

    /// Window entries of every wedge in the first half of its scale (plus
    /// the coarsest wedge), in bin order. Nyquist aliases share the squared
    /// window evenly; the coordinate kept is the alias with the largest window.
    fn scan(&self, offsets: &[usize]) -> Vec<Entry> {
        let (h, w) = (self.height, self.width);
        let keep = |wedge: usize| -> bool {
            if wedge == 0 {
                return true;
            }
            let j = offsets.partition_point(|&o| o <= wedge);
            let l = wedge - offsets[j - 1] + 1;
            l <= self.angles[j - 1] / 2
        };
        let rows: Vec<Vec<Entry>> = (0..h)
            .into_par_iter()
            .map(|ky| {
                let (ry_reps, ny) = Self::representatives(ky, h);
                let mut out = Vec::new();
                let mut acc: Vec<(usize, f64, f64, i64, i64)> = Vec::with_capacity(8);
                for kx in 0..w {
                    let (rx_reps, nx) = Self::representatives(kx, w);
                    acc.clear();
                    for &ry in &ry_reps[..ny] {
                        for &rx in &rx_reps[..nx] {
                            let nu_x = rx as f64 / w as f64;
                            let nu_y = -(ry as f64) / h as f64;
                            for (wi, u) in self.responses(nu_x, nu_y, offsets) {
                                if !keep(wi) {
                                    continue;
                                }
                                match acc.iter_mut().find(|a| a.0 == wi) {
                                    Some(a) => {
                                        a.1 += u * u;
                                        if u > a.2 {
                                            a.2 = u;
                                            a.3 = ry;
                                            a.4 = rx;
                                        }
                                    }
                                    None => acc.push((wi, u * u, u, ry, rx)),
                                }
                            }
                        }
                    }
                    let reps = (ny * nx) as f64;
                    for &(wi, e, _, ry, rx) in &acc {
                        out.push(Entry {
                            wedge: wi as u32,
                            bin: (ky * w + kx) as u32,
                            ry: ry as i32,
                            rx: rx as i32,
                            weight: (e / reps).sqrt(),
                        });
                    }
                }
                out
            })
            .collect();
        rows.into_iter().flatten().collect()
    }
}

fn build_wedges(
    g: &Geometry,
    angles: &[usize],
    offsets: &[usize],
    entries: Vec<Entry>,
    config: PlanConfig,
) -> Vec<Wedge> {
    let (h, w) = (g.height as i64, g.width as i64);
    let total = *offsets.last().expect("offsets");
    let mut per: Vec<Vec<(u32, i32, i32, f64)>> = vec![Vec::new(); total];
    for e in entries {
        per[e.wedge as usize].push((e.bin, e.ry, e.rx, e.weight));
    }
    // partners are the explicit negation of the first half
    for j in 2..=g.n_scales {
        let n = angles[j - 1];
        for l in 1..=n / 2 {
            let src = offsets[j - 1] + l - 1;
            let dst = src + n / 2;
            per[dst] = per[src]
                .iter()
                .map(|&(_, ry, rx, u)| {
                    let ky = (-(ry as i64)).rem_euclid(h);
                    let kx = (-(rx as i64)).rem_euclid(w);
                    ((ky * w + kx) as u32, -ry, -rx, u)
                })
                .collect();
            per[dst].sort_unstable_by_key(|e| e.0);
        }
    }
    let mut wedges = Vec::with_capacity(total);
    for j in 1..=g.n_scales {
        let n = angles[j - 1];
        for l in 1..=n {
            let idx = offsets[j - 1] + l - 1;
            let list = &per[idx];
            let (mut r0, mut r1, mut c0, mut c1) = (i64::MAX, i64::MIN, i64::MAX, i64::MIN);
            for &(_, ry, rx, _) in list {
                r0 = r0.min(ry as i64);
                r1 = r1.max(ry as i64);
                c0 = c0.min(rx as i64);
                c1 = c1.max(rx as i64);
            }
            if list.is_empty() {
                (r0, r1, c0, c1) = (0, 0, 0, 0);
            }
            let mut rows = (r1 - r0 + 1) as usize;
            let mut cols = (c1 - c0 + 1) as usize;
            if config.smooth_boxes && j > 1 {
                rows = next_smooth(rows);
                cols = next_smooth(cols);
            }
            let mut bins = Vec::with_capacity(list.len());
            let mut slots = Vec::with_capacity(list.len());
            let mut weights = Vec::with_capacity(list.len());
            for &(bin, ry, rx, u) in list {
                let su = (ry as i64).rem_euclid(rows as i64) as usize;
                let sv = (rx as i64).rem_euclid(cols as i64) as usize;
                bins.push(bin);
                slots.push((su * cols + sv) as u32);
                weights.push(u);
            }
            let partner = if j == 1 { idx } else { offsets[j - 1] + (l - 1 + n / 2) % n };
            wedges.push(Wedge {
                scale: j,
                direction: l,
                center_angle: 0.0,
                partner,
                rows,
                cols,
                row_origin: r0,
                col_origin: c0,
                bins,
                slots,
                weights,
            });
        }
    }
    wedges
}
