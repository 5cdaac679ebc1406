//! Procedural grayscale test images: stripes, disks, ramps, checkerboards.
//!
//! Small, deterministic and rich in oriented edges, so training runs and
//! examples work without any image files on disk.

use std::f64::consts::PI;

use crate::raster::Image;

/// Sinusoidal stripes of `period` pixels whose normal points along `angle`.
pub fn stripes(height: usize, width: usize, period: f64, angle: f64) -> Image {
    let (c, s) = (angle.cos(), angle.sin());
    Image::from_fn(height, width, |y, x| {
        let t = (x as f64 * c + y as f64 * s) * 2.0 * PI / period;
        0.5 + 0.35 * t.sin()
    })
}

/// Anti-aliased disk of `radius` centred in the frame.
pub fn disk(height: usize, width: usize, radius: f64) -> Image {
    let (cy, cx) = (height as f64 / 2.0, width as f64 / 2.0);
    Image::from_fn(height, width, |y, x| {
        let d = ((y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2)).sqrt();
        let inside = (radius - d + 0.5).clamp(0.0, 1.0);
        0.2 + 0.6 * inside
    })
}

/// Linear ramp from 0.1 to 0.9 along `angle`.
pub fn ramp(height: usize, width: usize, angle: f64) -> Image {
    let (c, s) = (angle.cos(), angle.sin());
    let span = (width as f64 * c.abs() + height as f64 * s.abs()).max(1.0);
    let offset = (width as f64 * c.min(0.0)) + (height as f64 * s.min(0.0));
    Image::from_fn(height, width, |y, x| {
        let t = (x as f64 * c + y as f64 * s - offset) / span;
        0.1 + 0.8 * t.clamp(0.0, 1.0)
    })
}

pub fn checkerboard(height: usize, width: usize, cell: usize) -> Image {
    Image::from_fn(height, width, |y, x| if (y / cell + x / cell).is_multiple_of(2) { 0.25 } else { 0.75 })
}

/// Five `size x size` images covering several orientations and textures.
pub fn toy_corpus(size: usize) -> Vec<Image> {
    vec![
        stripes(size, size, 12.0, 0.0),
        stripes(size, size, 9.0, PI / 3.0),
        disk(size, size, size as f64 / 3.0),
        checkerboard(size, size, 12),
        stripes(size, size, 16.0, 3.0 * PI / 4.0),
    ]
}
