//! Image planes and frames, plus the finite-difference stencils shared by the
//! flow and feature modules.

use crate::error::{Error, Result};

/// A single-channel grid of `f64` values stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Grayscale frame. Intensities are in `[0, 1]` when produced from 8-bit input.
pub type GrayFrame = Plane;

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dims(
                format!("{} values for {}x{}", width * height, width, height),
                data.len(),
            ));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Plane {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
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

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn same_shape(&self, other: &Plane) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_shape(&self, other: &Plane) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise `self - other`.
    pub fn sub(&self, other: &Plane) -> Result<Plane> {
        self.check_shape(other)?;
        Ok(Plane {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// First derivative along x: central differences in the interior,
    /// one-sided differences on the left and right borders.
    pub fn diff_x(&self) -> Plane {
        let (w, h) = (self.width, self.height);
        let mut out = Plane::zeros(w, h);
        if w < 2 {
            return out;
        }
        for y in 0..h {
            let row = &self.data[y * w..(y + 1) * w];
            let dst = &mut out.data[y * w..(y + 1) * w];
            dst[0] = row[1] - row[0];
            for x in 1..w - 1 {
                dst[x] = 0.5 * (row[x + 1] - row[x - 1]);
            }
            dst[w - 1] = row[w - 1] - row[w - 2];
        }
        out
    }

    /// First derivative along y, same stencils as [`Plane::diff_x`].
    pub fn diff_y(&self) -> Plane {
        let (w, h) = (self.width, self.height);
        let mut out = Plane::zeros(w, h);
        if h < 2 {
            return out;
        }
        for x in 0..w {
            out.data[x] = self.data[w + x] - self.data[x];
            out.data[(h - 1) * w + x] = self.data[(h - 1) * w + x] - self.data[(h - 2) * w + x];
        }
        for y in 1..h - 1 {
            for x in 0..w {
                out.data[y * w + x] = 0.5 * (self.data[(y + 1) * w + x] - self.data[(y - 1) * w + x]);
            }
        }
        out
    }

    /// Second derivative along x with the `[1, -2, 1]` stencil. Border columns
    /// reuse the stencil centred on their inner neighbour.
    pub fn diff2_x(&self) -> Plane {
        let (w, h) = (self.width, self.height);
        let mut out = Plane::zeros(w, h);
        if w < 3 {
            return out;
        }
        for y in 0..h {
            let row = &self.data[y * w..(y + 1) * w];
            let dst = &mut out.data[y * w..(y + 1) * w];
            for x in 0..w {
                let c = x.clamp(1, w - 2);
                dst[x] = row[c - 1] - 2.0 * row[c] + row[c + 1];
            }
        }
        out
    }

    /// Second derivative along y, same stencils as [`Plane::diff2_x`].
    pub fn diff2_y(&self) -> Plane {
        let (w, h) = (self.width, self.height);
        let mut out = Plane::zeros(w, h);
        if h < 3 {
            return out;
        }
        for y in 0..h {
            let c = y.clamp(1, h - 2);
            for x in 0..w {
                out.data[y * w + x] = self.data[(c - 1) * w + x] - 2.0 * self.data[c * w + x]
                    + self.data[(c + 1) * w + x];
            }
        }
        out
    }
}

/// A frame with one (gray) or three (RGB) channels, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Frame {
    /// Builds a frame from interleaved channel data.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::dims("1 or 3 channels", channels));
        }
        if data.len() != width * height * channels {
            return Err(Error::dims(width * height * channels, data.len()));
        }
        Ok(Frame {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_gray(plane: Plane) -> Self {
        Frame {
            width: plane.width,
            height: plane.height,
            channels: 1,
            data: plane.data,
        }
    }

    pub fn from_rgb_planes(r: &Plane, g: &Plane, b: &Plane) -> Result<Self> {
        r.check_shape(g)?;
        r.check_shape(b)?;
        let data = r
            .data
            .iter()
            .zip(&g.data)
            .zip(&b.data)
            .flat_map(|((&r, &g), &b)| [r, g, b])
            .collect();
        Ok(Frame {
            width: r.width,
            height: r.height,
            channels: 3,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_color(&self) -> bool {
        self.channels == 3
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> Plane {
        assert!(c < self.channels, "channel {c} out of range");
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    /// Luma (ITU-R BT.601 weights) for RGB frames, the channel itself otherwise.
    pub fn gray(&self) -> GrayFrame {
        if self.channels == 1 {
            return Plane {
                width: self.width,
                height: self.height,
                data: self.data.clone(),
            };
        }
        Plane {
            width: self.width,
            height: self.height,
            data: self
                .data
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect(),
        }
    }
}
