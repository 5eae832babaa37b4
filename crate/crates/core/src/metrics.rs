//! Fidelity and robustness metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

fn same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Dimension(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b)?;
    let s: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.len() as f64)
}

/// Peak signal-to-noise ratio for 8-bit range; `+inf` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / m).log10())
}

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;

fn ssim_kernel() -> [f64; 2 * SSIM_RADIUS + 1] {
    let mut k = [0.0; 2 * SSIM_RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - SSIM_RADIUS as f64;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "valid" filtering with the SSIM window.
fn filter_valid(data: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                s += kv * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    (out, ow, oh)
}

/// Mean structural similarity: 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, dynamic range 255, valid window positions only.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b)?;
    let n = 2 * SSIM_RADIUS + 1;
    if a.width < n || a.height < n {
        return Err(Error::Dimension(format!(
            "SSIM needs at least {n}x{n}, got {}x{}",
            a.width, a.height
        )));
    }
    let k = ssim_kernel();
    let (w, h) = a.dims();
    let aa: Vec<f64> = a.data.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.data.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    let (mu_a, _, _) = filter_valid(&a.data, w, h, &k);
    let (mu_b, _, _) = filter_valid(&b.data, w, h, &k);
    let (s_aa, _, _) = filter_valid(&aa, w, h, &k);
    let (s_bb, _, _) = filter_valid(&bb, w, h, &k);
    let (s_ab, ow, oh) = filter_valid(&ab, w, h, &k);
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut total = 0.0;
    for i in 0..ow * oh {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = s_aa[i] - ma * ma;
        let vb = s_bb[i] - mb * mb;
        let cov = s_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / (ow * oh) as f64)
}

/// Bit error counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BitErrorStats {
    pub b_e: usize,
    pub b_c: usize,
    pub b_t: usize,
    pub ber: f64,
}

impl BitErrorStats {
    /// Pool counts from several decodes.
    pub fn merge(parts: &[BitErrorStats]) -> Option<BitErrorStats> {
        let b_e: usize = parts.iter().map(|p| p.b_e).sum();
        let b_c: usize = parts.iter().map(|p| p.b_c).sum();
        let b_t = b_e + b_c;
        (b_t > 0).then(|| BitErrorStats { b_e, b_c, b_t, ber: b_e as f64 / b_t as f64 })
    }
}

/// Bit error rate `b_e / b_t`.
pub fn ber(sent: &[bool], received: &[bool]) -> Result<BitErrorStats> {
    if sent.len() != received.len() {
        return Err(Error::InvalidArgument(format!(
            "{} bits sent, {} received",
            sent.len(),
            received.len()
        )));
    }
    if sent.is_empty() {
        return Err(Error::InvalidArgument("no bits to compare".into()));
    }
    let b_e = sent.iter().zip(received).filter(|(a, b)| a != b).count();
    let b_t = sent.len();
    Ok(BitErrorStats { b_e, b_c: b_t - b_e, b_t, ber: b_e as f64 / b_t as f64 })
}

/// True-versus-fake statistic summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub min_true: f64,
    pub max_fake: f64,
    /// `min_true / max_fake`; infinite when no fake is positive.
    pub ratio: f64,
    /// True values at or below the largest fake plus fakes at or above the
    /// smallest true value.
    pub overlap: usize,
}

pub fn separation(true_stats: &[f64], fake_stats: &[f64]) -> Result<Separation> {
    if true_stats.is_empty() || fake_stats.is_empty() {
        return Err(Error::InvalidArgument("separation needs nonempty lists".into()));
    }
    let min_true = true_stats.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_fake = fake_stats.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ratio = if max_fake > 0.0 { min_true / max_fake } else { f64::INFINITY };
    let overlap = true_stats.iter().filter(|&&t| t <= max_fake).count()
        + fake_stats.iter().filter(|&&f| f >= min_true).count();
    Ok(Separation { min_true, max_fake, ratio, overlap })
}
