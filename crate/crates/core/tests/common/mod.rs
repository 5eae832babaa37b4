//! Procedural grayscale corpus: a 1/f random field with overlaid flat-shaded
//! ellipses, a mild optical blur and sensor noise, quantized to 8 bits.

#![allow(dead_code)]

use curvemark::attacks::gaussian_blur;
use curvemark::fourier::FftCache;
use curvemark::prng::KeyedStream;
use curvemark::Image;
use rustfft::num_complex::Complex64;

pub const WIDTH: usize = 1024;
pub const HEIGHT: usize = 768;

pub fn natural_image(width: usize, height: usize, seed: u64) -> Image {
    let mut s = KeyedStream::from_u64("corpus", seed);
    let fft = FftCache::with_sizes([width, height]);
    let mut field: Vec<Complex64> =
        (0..width * height).map(|_| Complex64::new(s.normal(), 0.0)).collect();
    fft.fft2(&mut field, height, width, false);
    for r in 0..height {
        let fy = if r <= height / 2 { r as f64 } else { r as f64 - height as f64 } / height as f64;
        for c in 0..width {
            let fx = if c <= width / 2 { c as f64 } else { c as f64 - width as f64 } / width as f64;
            let f = fy.hypot(fx);
            field[r * width + c] = if f == 0.0 { Complex64::new(0.0, 0.0) } else { field[r * width + c] / f };
        }
    }
    fft.fft2(&mut field, height, width, true);
    let re: Vec<f64> = field.iter().map(|c| c.re).collect();
    let n = re.len() as f64;
    let mean = re.iter().sum::<f64>() / n;
    let sd = (re.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut img = Image::from_vec(width, height, re.iter().map(|v| (v - mean) / sd * 25.0 + 120.0).collect())
        .expect("sized");
    let (w, h) = (width as f64, height as f64);
    for _ in 0..30 {
        let cy = s.uniform() * h;
        let cx = s.uniform() * w;
        let ay = 20.0 + s.uniform() * (h / 4.0 - 20.0);
        let ax = 20.0 + s.uniform() * (w / 4.0 - 20.0);
        let th = s.uniform() * std::f64::consts::PI;
        let level = 30.0 + s.uniform() * 190.0;
        let (c, sn) = (th.cos(), th.sin());
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let u = (dx * c + dy * sn) / ax;
                let v = (-dx * sn + dy * c) / ay;
                if u * u + v * v < 1.0 {
                    let i = y * width + x;
                    img.data[i] = 0.6 * level + 0.4 * img.data[i];
                }
            }
        }
    }
    let mut img = gaussian_blur(&img, 0.9);
    for v in img.data.iter_mut() {
        *v += 0.7 * s.normal();
    }
    img.quantized()
}

/// The ten-image evaluation corpus.
pub fn corpus() -> Vec<Image> {
    (0..10).map(|i| natural_image(WIDTH, HEIGHT, i)).collect()
}
