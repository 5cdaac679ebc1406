//! Single-channel images as row-major `f64` planes.

use crate::error::{shape_err, Result};
use crate::tensor::{Shape, Tensor};

/// A grayscale image, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return shape_err(format!("{height}x{width} image given {} values", data.len()));
        }
        Ok(Image { height, width, data })
    }

    pub fn filled(height: usize, width: usize, v: f64) -> Self {
        Image {
            height,
            width,
            data: vec![v; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Image { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Value at `(y, x)` with coordinates clamped into the image.
    pub fn get_clamped(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.get(y, x)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clipped(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn transpose(&self) -> Image {
        Image::from_fn(self.width, self.height, |y, x| self.get(x, y))
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return shape_err(format!(
                "crop {height}x{width} at ({top}, {left}) exceeds {}x{}",
                self.height, self.width
            ));
        }
        Ok(Image::from_fn(height, width, |y, x| self.get(top + y, left + x)))
    }

    /// Mirror-pads the bottom and right edges (edge pixel not repeated) up to
    /// `height x width`.
    pub fn reflect_pad(&self, height: usize, width: usize) -> Result<Image> {
        if height < self.height || width < self.width {
            return shape_err("reflect_pad target smaller than image");
        }
        if (height > self.height && height - self.height >= self.height)
            || (width > self.width && width - self.width >= self.width)
        {
            return shape_err(format!(
                "cannot reflect {}x{} out to {height}x{width}",
                self.height, self.width
            ));
        }
        let reflect = |i: usize, n: usize| if i < n { i } else { 2 * n - 2 - i };
        Ok(Image::from_fn(height, width, |y, x| {
            self.get(reflect(y, self.height), reflect(x, self.width))
        }))
    }

    /// `(1, 1, H, W)` tensor view of the image.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, self.height, self.width), self.data.clone()).expect("image shape")
    }

    /// Channel `c` of batch item `n`.
    pub fn from_tensor(t: &Tensor, n: usize, c: usize) -> Image {
        let s = t.shape();
        let base = s.index(n, c, 0, 0);
        Image {
            height: s.h(),
            width: s.w(),
            data: t.values()[base..base + s.plane()].to_vec(),
        }
    }

    /// Stacks equally sized images into an `(N, 1, H, W)` tensor.
    pub fn stack(images: &[Image]) -> Result<Tensor> {
        let Some(first) = images.first() else {
            return shape_err("cannot stack zero images");
        };
        let mut data = Vec::with_capacity(images.len() * first.len());
        for im in images {
            if im.height != first.height || im.width != first.width {
                return shape_err("stacked images differ in size");
            }
            data.extend_from_slice(&im.data);
        }
        Tensor::from_vec(Shape::new(images.len(), 1, first.height, first.width), data)
    }
}
