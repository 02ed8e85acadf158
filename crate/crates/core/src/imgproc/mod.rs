//! Grayscale float images: bilinear sampling, gradients, box-filter pyramids.

pub mod io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImgError {
    #[error("coordinate ({u}, {v}) outside sampling bounds of {width}x{height} image")]
    OutOfBounds {
        u: f64,
        v: f64,
        width: usize,
        height: usize,
    },
    #[error("{levels} pyramid levels would shrink a {width}x{height} image below 32 px")]
    TooManyLevels {
        levels: usize,
        width: usize,
        height: usize,
    },
    #[error("image dimensions {0}x{1} do not match data length {2}")]
    DimensionMismatch(usize, usize, usize),
    #[error("bad image file: {0}")]
    BadFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major single-channel image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImgError> {
        if data.len() != width * height {
            return Err(ImgError::DimensionMismatch(width, height, data.len()));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Build from a per-pixel function of `(u, v)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        GrayImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> f64 {
        debug_assert!(u < self.width && v < self.height);
        self.data[v * self.width + u]
    }

    pub fn get(&self, u: i64, v: i64) -> Option<f64> {
        if u < 0 || v < 0 || u as usize >= self.width || v as usize >= self.height {
            None
        } else {
            Some(self.at(u as usize, v as usize))
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Bilinear sample at subpixel coordinates; exact at integer coordinates.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> Result<f64, ImgError> {
        let max_u = (self.width - 1) as f64;
        let max_v = (self.height - 1) as f64;
        if !(0.0..=max_u).contains(&u) || !(0.0..=max_v).contains(&v) {
            return Err(ImgError::OutOfBounds {
                u,
                v,
                width: self.width,
                height: self.height,
            });
        }
        // Clamp the cell origin so u0 + 1 stays in range when u == W - 1.
        let u0 = (u.floor() as usize).min(self.width.saturating_sub(2));
        let v0 = (v.floor() as usize).min(self.height.saturating_sub(2));
        let u1 = (u0 + 1).min(self.width - 1);
        let v1 = (v0 + 1).min(self.height - 1);
        let fu = u - u0 as f64;
        let fv = v - v0 as f64;
        let i00 = self.at(u0, v0);
        let i10 = self.at(u1, v0);
        let i01 = self.at(u0, v1);
        let i11 = self.at(u1, v1);
        Ok(i00 * (1.0 - fu) * (1.0 - fv)
            + i10 * fu * (1.0 - fv)
            + i01 * (1.0 - fu) * fv
            + i11 * fu * fv)
    }

    /// Central difference of bilinear samples one pixel apart.
    pub fn gradient(&self, u: f64, v: f64) -> Result<(f64, f64), ImgError> {
        let max_u = (self.width - 2) as f64;
        let max_v = (self.height - 2) as f64;
        if !(1.0..=max_u).contains(&u) || !(1.0..=max_v).contains(&v) {
            return Err(ImgError::OutOfBounds {
                u,
                v,
                width: self.width,
                height: self.height,
            });
        }
        let du = (self.sample_bilinear(u + 1.0, v)? - self.sample_bilinear(u - 1.0, v)?) / 2.0;
        let dv = (self.sample_bilinear(u, v + 1.0)? - self.sample_bilinear(u, v - 1.0)?) / 2.0;
        Ok((du, dv))
    }

    /// Bilinear sample plus the exact derivative of the interpolant at `(u, v)`.
    ///
    /// The gradient here is the in-cell slope of the bilinear surface, which is
    /// what photometric Jacobians need to agree with finite differences of
    /// `sample_bilinear` at sub-cell step sizes.
    pub fn sample_with_gradient(&self, u: f64, v: f64) -> Result<(f64, f64, f64), ImgError> {
        let max_u = (self.width - 1) as f64;
        let max_v = (self.height - 1) as f64;
        if !(0.0..=max_u).contains(&u) || !(0.0..=max_v).contains(&v) {
            return Err(ImgError::OutOfBounds {
                u,
                v,
                width: self.width,
                height: self.height,
            });
        }
        let u0 = (u.floor() as usize).min(self.width.saturating_sub(2));
        let v0 = (v.floor() as usize).min(self.height.saturating_sub(2));
        let u1 = (u0 + 1).min(self.width - 1);
        let v1 = (v0 + 1).min(self.height - 1);
        let fu = u - u0 as f64;
        let fv = v - v0 as f64;
        let i00 = self.at(u0, v0);
        let i10 = self.at(u1, v0);
        let i01 = self.at(u0, v1);
        let i11 = self.at(u1, v1);
        let value = i00 * (1.0 - fu) * (1.0 - fv)
            + i10 * fu * (1.0 - fv)
            + i01 * (1.0 - fu) * fv
            + i11 * fu * fv;
        let du = (i10 - i00) * (1.0 - fv) + (i11 - i01) * fv;
        let dv = (i01 - i00) * (1.0 - fu) + (i11 - i10) * fu;
        Ok((value, du, dv))
    }

    /// Mean magnitude of the per-pixel central-difference gradient.
    pub fn mean_gradient_magnitude(&self) -> f64 {
        if self.width < 3 || self.height < 3 {
            return 0.0;
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for v in 1..self.height - 1 {
            for u in 1..self.width - 1 {
                let du = (self.at(u + 1, v) - self.at(u - 1, v)) / 2.0;
                let dv = (self.at(u, v + 1) - self.at(u, v - 1)) / 2.0;
                sum += (du * du + dv * dv).sqrt();
                count += 1;
            }
        }
        sum / count as f64
    }

    /// 2x2 box-filter downsample, floor division on odd dimensions.
    pub fn downsample_2x2(&self) -> GrayImage {
        let w = self.width / 2;
        let h = self.height / 2;
        let mut data = Vec::with_capacity(w * h);
        for v in 0..h {
            for u in 0..w {
                let s = self.at(2 * u, 2 * v)
                    + self.at(2 * u + 1, 2 * v)
                    + self.at(2 * u, 2 * v + 1)
                    + self.at(2 * u + 1, 2 * v + 1);
                data.push(s * 0.25);
            }
        }
        GrayImage {
            width: w,
            height: h,
            data,
        }
    }
}

/// Coarse-to-fine pyramid; level 0 is full resolution.
#[derive(Debug, Clone)]
pub struct ImagePyramid {
    levels: Vec<GrayImage>,
}

impl ImagePyramid {
    pub fn build(img: &GrayImage, n_levels: usize) -> Result<Self, ImgError> {
        if n_levels < 1 || img.width >> (n_levels - 1) < 32 || img.height >> (n_levels - 1) < 32 {
            return Err(ImgError::TooManyLevels {
                levels: n_levels,
                width: img.width,
                height: img.height,
            });
        }
        let mut levels = Vec::with_capacity(n_levels);
        levels.push(img.clone());
        for _ in 1..n_levels {
            let next = levels.last().unwrap().downsample_2x2();
            levels.push(next);
        }
        Ok(ImagePyramid { levels })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, l: usize) -> &GrayImage {
        &self.levels[l]
    }

    pub fn finest(&self) -> &GrayImage {
        &self.levels[0]
    }
}
