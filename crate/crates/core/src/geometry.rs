//! Bilinear resampling: resize, rotation about the center, and canvas fitting.

use rayon::prelude::*;

use crate::image::Image;

/// What bilinear sampling reads outside the source raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Border {
    /// Replicate the nearest edge sample.
    Edge,
    /// Treat the outside as zero.
    Zero,
}

fn sample(img: &Image, x: f64, y: f64, border: Border) -> f64 {
    let (w, h) = (img.width as i64, img.height as i64);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let at = |xi: i64, yi: i64| -> f64 {
        match border {
            Border::Edge => {
                img.data[(yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)) as usize]
            }
            Border::Zero => {
                if xi < 0 || yi < 0 || xi >= w || yi >= h {
                    0.0
                } else {
                    img.data[(yi * w + xi) as usize]
                }
            }
        }
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
    let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resample to `width x height` with pixel-center alignment.
pub fn resize(img: &Image, width: usize, height: usize) -> Image {
    if width == img.width && height == img.height {
        return img.clone();
    }
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    let mut data = vec![0.0; width * height];
    data.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        for (x, v) in row.iter_mut().enumerate() {
            *v = sample(img, (x as f64 + 0.5) * sx - 0.5, src_y, Border::Edge);
        }
    });
    Image { width, height, data }
}

/// Resize by a factor, rounding the new dimensions.
pub fn scale_by(img: &Image, factor: f64) -> Image {
    let w = ((img.width as f64 * factor).round() as usize).max(1);
    let h = ((img.height as f64 * factor).round() as usize).max(1);
    resize(img, w, h)
}

fn cos_sin_degrees(deg: f64) -> (f64, f64) {
    let r = deg.rem_euclid(360.0);
    // exact values at quarter turns keep canvas sizes and sample grids exact
    match r {
        0.0 => (1.0, 0.0),
        90.0 => (0.0, 1.0),
        180.0 => (-1.0, 0.0),
        270.0 => (0.0, -1.0),
        _ => {
            let t = r.to_radians();
            (t.cos(), t.sin())
        }
    }
}

/// Canvas size that holds the whole image after rotation.
pub fn rotated_dims(width: usize, height: usize, degrees: f64) -> (usize, usize) {
    let (c, s) = cos_sin_degrees(degrees);
    let (w, h) = (width as f64, height as f64);
    let nw = ((w * c.abs() + h * s.abs()) - 1e-9).ceil() as usize;
    let nh = ((h * c.abs() + w * s.abs()) - 1e-9).ceil() as usize;
    (nw.max(1), nh.max(1))
}

/// Rotate counter-clockwise (as displayed) about the image center.
/// With `expand` the canvas grows to hold every source pixel.
pub fn rotate(img: &Image, degrees: f64, expand: bool, border: Border) -> Image {
    let (c, s) = cos_sin_degrees(degrees);
    let (width, height) =
        if expand { rotated_dims(img.width, img.height, degrees) } else { (img.width, img.height) };
    let cx_out = (width as f64 - 1.0) / 2.0;
    let cy_out = (height as f64 - 1.0) / 2.0;
    let cx_in = (img.width as f64 - 1.0) / 2.0;
    let cy_in = (img.height as f64 - 1.0) / 2.0;
    let mut data = vec![0.0; width * height];
    data.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        let dy = y as f64 - cy_out;
        for (x, v) in row.iter_mut().enumerate() {
            let dx = x as f64 - cx_out;
            let sx = c * dx - s * dy + cx_in;
            let sy = s * dx + c * dy + cy_in;
            *v = sample(img, sx, sy, border);
        }
    });
    Image { width, height, data }
}

/// Edge-pad and/or center-crop to exactly `width x height`.
pub fn fit(img: &Image, width: usize, height: usize) -> Image {
    if img.width == width && img.height == height {
        return img.clone();
    }
    // offset of the output origin inside the (virtually padded) input
    let off = |have: usize, want: usize| -> i64 {
        if have >= want {
            ((have - want) / 2) as i64
        } else {
            -(((want - have) / 2) as i64)
        }
    };
    let ox = off(img.width, width);
    let oy = off(img.height, height);
    let (iw, ih) = (img.width as i64, img.height as i64);
    Image::from_fn(width, height, |x, y| {
        let sx = (x as i64 + ox).clamp(0, iw - 1);
        let sy = (y as i64 + oy).clamp(0, ih - 1);
        img.data[(sy * iw + sx) as usize]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| (x * 3 + y * 5) as f64)
    }

    #[test]
    fn quarter_turn_is_exact_permutation() {
        let img = ramp(5, 3);
        let r = rotate(&img, 90.0, true, Border::Edge);
        assert_eq!((r.width, r.height), (3, 5));
        // counter-clockwise: the top-right corner moves to the top-left
        assert_eq!(r.get(0, 0), img.get(4, 0));
        assert_eq!(r.get(0, 4), img.get(0, 0));
        let back = rotate(&r, -90.0, true, Border::Edge);
        assert_eq!(back, img);
    }

    #[test]
    fn zero_rotation_is_identity() {
        let img = ramp(9, 7);
        assert_eq!(rotate(&img, 0.0, true, Border::Edge), img);
        assert_eq!(rotate(&img, 360.0, false, Border::Zero), img);
    }

    #[test]
    fn expanded_canvas_size() {
        assert_eq!(rotated_dims(100, 50, 90.0), (50, 100));
        assert_eq!(rotated_dims(100, 100, 45.0), (142, 142));
    }

    #[test]
    fn zero_border_fills_outside() {
        let img = Image::filled(10, 10, 7.0);
        let r = rotate(&img, 45.0, true, Border::Zero);
        assert_eq!(r.get(0, 0), 0.0);
        assert_eq!(r.get(r.width / 2, r.height / 2), 7.0);
    }

    #[test]
    fn resize_preserves_constant_and_identity() {
        let img = Image::filled(8, 6, 42.0);
        let r = resize(&img, 13, 5);
        assert!(r.data.iter().all(|&v| (v - 42.0).abs() < 1e-12));
        let ramp = ramp(8, 6);
        assert_eq!(resize(&ramp, 8, 6), ramp);
    }

    #[test]
    fn upsample_by_two_interpolates_linear_ramp() {
        let img = Image::from_fn(8, 1, |x, _| x as f64);
        let r = resize(&img, 16, 1);
        // interior samples of a linear ramp stay linear
        for x in 1..15 {
            let expect = (x as f64 + 0.5) / 2.0 - 0.5;
            assert!((r.get(x, 0) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_pads_and_crops_centered() {
        let img = ramp(4, 4);
        let big = fit(&img, 6, 6);
        assert_eq!(big.get(1, 1), img.get(0, 0));
        assert_eq!(big.get(0, 0), img.get(0, 0));
        let back = fit(&big, 4, 4);
        assert_eq!(back, img);
    }
}
