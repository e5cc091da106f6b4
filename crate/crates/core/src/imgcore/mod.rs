//! Grayscale frames, displacement fields, and backward warping.
//!
//! Coordinates follow the pixel-center convention: pixel `(row r, col c)`
//! sits at continuous position `(x = c, y = r)`. A [`DisplacementField`]
//! stores, for every reference pixel, the source coordinate it samples from,
//! so warping is always backward (`out(x) = in(field(x))`).

mod io;

pub use io::{
    frame_file_name, list_sequence_files, load_frame, read_sequence, save_frame, write_sequence,
    FrameFormat,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper end of the intensity range. Lower end is zero.
pub const MAX_INTENSITY: f64 = 255.0;

#[derive(Error, Debug)]
pub enum ImageError {
    #[error("dimension mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("pixel buffer has {got} values, expected {expected} for {width}x{height}")]
    BufferLength {
        width: usize,
        height: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite {what} at pixel ({x}, {y})")]
    NonFinite { what: &'static str, x: usize, y: usize },
    #[error("invalid dimensions {width}x{height}: both sides must be at least 1")]
    ZeroDimension { width: usize, height: usize },
    #[error("frame indices must increase strictly from 0; frame at position {position} has index {index}")]
    FrameIndex { position: usize, index: usize },
    #[error("empty frame sequence")]
    EmptySequence,
    #[error("crop {x0},{y0} {width}x{height} does not fit inside {frame_w}x{frame_h}")]
    Crop {
        x0: usize,
        y0: usize,
        width: usize,
        height: usize,
        frame_w: usize,
        frame_h: usize,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec error on {path}: {source}")]
    Codec {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("no frame files found in {0}")]
    NoFrames(String),
}

/// Single-channel raster, row-major, intensities on the `[0, 255]` scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    frame_index: usize,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension { width, height });
        }
        if pixels.len() != width * height {
            return Err(ImageError::BufferLength {
                width,
                height,
                expected: width * height,
                got: pixels.len(),
            });
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(ImageError::NonFinite {
                what: "intensity",
                x: i % width,
                y: i / width,
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
            frame_index: 0,
        })
    }

    /// Builds a frame by evaluating `f(x, y)` at every pixel center.
    pub fn from_fn(
        width: usize,
        height: usize,
        f: impl Fn(usize, usize) -> f64,
    ) -> Result<Self, ImageError> {
        let pixels = (0..width * height).map(|i| f(i % width, i / width)).collect();
        Self::new(width, height, pixels)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn with_index(mut self, frame_index: usize) -> Self {
        self.frame_index = frame_index;
        self
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    #[inline]
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn same_dims(&self, other: &Frame) -> Result<(), ImageError> {
        check_dims(self.width, self.height, other.width, other.height)
    }

    /// Copy of this frame with every intensity clamped to `[0, 255]`.
    pub fn clamped(&self) -> Frame {
        Frame {
            pixels: self
                .pixels
                .iter()
                .map(|v| v.clamp(0.0, MAX_INTENSITY))
                .collect(),
            ..self.clone()
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Frame, ImageError> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(ImageError::Crop {
                x0,
                y0,
                width,
                height,
                frame_w: self.width,
                frame_h: self.height,
            });
        }
        let mut pixels = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            let row = y * self.width;
            pixels.extend_from_slice(&self.pixels[row + x0..row + x0 + width]);
        }
        Ok(Frame {
            width,
            height,
            pixels,
            frame_index: self.frame_index,
        })
    }

    /// Centered crop keeping `keep` of each side (e.g. 0.8 drops 10% per border).
    pub fn central_region(&self, keep: f64) -> Result<Frame, ImageError> {
        let keep = keep.clamp(0.0, 1.0);
        let w = ((self.width as f64 * keep).round() as usize).max(1);
        let h = ((self.height as f64 * keep).round() as usize).max(1);
        self.crop((self.width - w) / 2, (self.height - h) / 2, w, h)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.pixels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Bilinear / nearest sample at a continuous coordinate.
    pub fn sample(&self, x: f64, y: f64, boundary: BoundaryPolicy, interp: InterpKernel) -> f64 {
        match interp {
            InterpKernel::Nearest => {
                let xi = x.round();
                let yi = y.round();
                self.texel(xi as i64, yi as i64, boundary)
            }
            InterpKernel::Bilinear => {
                let x0 = x.floor();
                let y0 = y.floor();
                let fx = x - x0;
                let fy = y - y0;
                let (xi, yi) = (x0 as i64, y0 as i64);
                let p00 = self.texel(xi, yi, boundary);
                let p10 = self.texel(xi + 1, yi, boundary);
                let p01 = self.texel(xi, yi + 1, boundary);
                let p11 = self.texel(xi + 1, yi + 1, boundary);
                let top = p00 + fx * (p10 - p00);
                let bottom = p01 + fx * (p11 - p01);
                top + fy * (bottom - top)
            }
        }
    }

    /// Derivative of the clamp-to-edge bilinear interpolant at `(x, y)`.
    ///
    /// At integer coordinates the interpolant has a kink; there the mean of
    /// the left and right one-sided slopes is returned, which is also the
    /// limit of a symmetric finite difference.
    pub fn bilinear_gradient(&self, x: f64, y: f64) -> (f64, f64) {
        let b = BoundaryPolicy::ClampToEdge;
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as i64, y0 as i64);

        // row blend at fractional y, evaluated at integer column c
        let row = |c: i64| (1.0 - fy) * self.texel(c, yi, b) + fy * self.texel(c, yi + 1, b);
        let gx = if fx == 0.0 {
            0.5 * (row(xi + 1) - row(xi - 1))
        } else {
            row(xi + 1) - row(xi)
        };

        let col = |r: i64| (1.0 - fx) * self.texel(xi, r, b) + fx * self.texel(xi + 1, r, b);
        let gy = if fy == 0.0 {
            0.5 * (col(yi + 1) - col(yi - 1))
        } else {
            col(yi + 1) - col(yi)
        };
        (gx, gy)
    }

    #[inline]
    fn texel(&self, x: i64, y: i64, boundary: BoundaryPolicy) -> f64 {
        let (w, h) = (self.width as i64, self.height as i64);
        if x >= 0 && x < w && y >= 0 && y < h {
            return self.pixels[(y * w + x) as usize];
        }
        match boundary {
            BoundaryPolicy::ClampToEdge => {
                let cx = x.clamp(0, w - 1);
                let cy = y.clamp(0, h - 1);
                self.pixels[(cy * w + cx) as usize]
            }
            BoundaryPolicy::Constant(c) => c,
        }
    }
}

/// Ordered frames sharing one size.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    fps: f64,
}

impl FrameSequence {
    /// Validates shared dimensions and strictly increasing indices from 0.
    pub fn new(frames: Vec<Frame>, fps: f64) -> Result<Self, ImageError> {
        let first = frames.first().ok_or(ImageError::EmptySequence)?;
        if first.frame_index != 0 {
            return Err(ImageError::FrameIndex {
                position: 0,
                index: first.frame_index,
            });
        }
        for (pos, pair) in frames.windows(2).enumerate() {
            pair[0].same_dims(&pair[1])?;
            if pair[1].frame_index <= pair[0].frame_index {
                return Err(ImageError::FrameIndex {
                    position: pos + 1,
                    index: pair[1].frame_index,
                });
            }
        }
        Ok(Self { frames, fps })
    }

    /// Takes frames in order and renumbers them `0..n`.
    pub fn from_frames(frames: Vec<Frame>, fps: f64) -> Result<Self, ImageError> {
        let frames = frames
            .into_iter()
            .enumerate()
            .map(|(i, f)| f.with_index(i))
            .collect();
        Self::new(frames, fps)
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }
}

/// What a sample outside the pixel lattice reads.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BoundaryPolicy {
    #[default]
    ClampToEdge,
    Constant(f64),
}

impl std::str::FromStr for BoundaryPolicy {
    type Err = String;

    /// Parses `clamp` or `constant:<value>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clamp" => Ok(Self::ClampToEdge),
            _ => match s.strip_prefix("constant:") {
                Some(v) => v
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(Self::Constant)
                    .ok_or_else(|| format!("invalid constant boundary value '{v}'")),
                None => Err(format!(
                    "unknown boundary '{s}', expected 'clamp' or 'constant:<v>'"
                )),
            },
        }
    }
}

impl TryFrom<String> for BoundaryPolicy {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BoundaryPolicy> for String {
    fn from(b: BoundaryPolicy) -> String {
        b.to_string()
    }
}

impl std::fmt::Display for BoundaryPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::ClampToEdge => write!(f, "clamp"),
            Self::Constant(c) => write!(f, "constant:{c}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterpKernel {
    Nearest,
    #[default]
    Bilinear,
}

/// Dense per-pixel source coordinates: `field(x) = (map_x, map_y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    width: usize,
    height: usize,
    map_x: Vec<f64>,
    map_y: Vec<f64>,
}

impl DisplacementField {
    pub fn new(
        width: usize,
        height: usize,
        map_x: Vec<f64>,
        map_y: Vec<f64>,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension { width, height });
        }
        for map in [&map_x, &map_y] {
            if map.len() != width * height {
                return Err(ImageError::BufferLength {
                    width,
                    height,
                    expected: width * height,
                    got: map.len(),
                });
            }
        }
        let field = Self {
            width,
            height,
            map_x,
            map_y,
        };
        field.check_finite()?;
        Ok(field)
    }

    /// Constructs without the finiteness scan. Callers guarantee lengths.
    pub(crate) fn from_parts_unchecked(
        width: usize,
        height: usize,
        map_x: Vec<f64>,
        map_y: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(map_x.len(), width * height);
        debug_assert_eq!(map_y.len(), width * height);
        Self {
            width,
            height,
            map_x,
            map_y,
        }
    }

    pub fn identity(width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |x, y| (x, y))
    }

    pub fn translation(width: usize, height: usize, dx: f64, dy: f64) -> Self {
        Self::from_fn(width, height, |x, y| (x + dx, y + dy))
    }

    /// Evaluates `f(x, y) -> (source_x, source_y)` at every pixel center.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let n = width * height;
        let mut map_x = Vec::with_capacity(n);
        let mut map_y = Vec::with_capacity(n);
        for y in 0..height {
            for x in 0..width {
                let (sx, sy) = f(x as f64, y as f64);
                map_x.push(sx);
                map_y.push(sy);
            }
        }
        Self {
            width,
            height,
            map_x,
            map_y,
        }
    }

    /// Identity plus a per-pixel displacement.
    pub fn from_displacement(
        width: usize,
        height: usize,
        ux: &[f64],
        uy: &[f64],
    ) -> Result<Self, ImageError> {
        let map_x = ux
            .iter()
            .enumerate()
            .map(|(i, u)| (i % width) as f64 + u)
            .collect();
        let map_y = uy
            .iter()
            .enumerate()
            .map(|(i, u)| (i / width) as f64 + u)
            .collect();
        Self::new(width, height, map_x, map_y)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn map_x(&self) -> &[f64] {
        &self.map_x
    }

    pub fn map_y(&self) -> &[f64] {
        &self.map_y
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.map_x[i], self.map_y[i])
    }

    /// `(field(x) - x)` split into x and y component buffers.
    pub fn displacement(&self) -> (Vec<f64>, Vec<f64>) {
        let w = self.width;
        let ux = self
            .map_x
            .iter()
            .enumerate()
            .map(|(i, m)| m - (i % w) as f64)
            .collect();
        let uy = self
            .map_y
            .iter()
            .enumerate()
            .map(|(i, m)| m - (i / w) as f64)
            .collect();
        (ux, uy)
    }

    /// Largest displacement magnitude over all pixels.
    pub fn max_displacement(&self) -> f64 {
        let (ux, uy) = self.displacement();
        ux.iter()
            .zip(&uy)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    pub fn check_finite(&self) -> Result<(), ImageError> {
        for (what, map) in [("map_x", &self.map_x), ("map_y", &self.map_y)] {
            if let Some(i) = map.iter().position(|v| !v.is_finite()) {
                return Err(ImageError::NonFinite {
                    what,
                    x: i % self.width,
                    y: i / self.width,
                });
            }
        }
        Ok(())
    }

    pub fn same_dims(&self, other: &DisplacementField) -> Result<(), ImageError> {
        check_dims(self.width, self.height, other.width, other.height)
    }
}

pub(crate) fn check_dims(w: usize, h: usize, gw: usize, gh: usize) -> Result<(), ImageError> {
    if w != gw || h != gh {
        return Err(ImageError::DimensionMismatch {
            expected_w: w,
            expected_h: h,
            got_w: gw,
            got_h: gh,
        });
    }
    Ok(())
}

/// Backward warp: `out(x) = frame(field(x))`, clamped to `[0, 255]`.
pub fn warp(
    frame: &Frame,
    field: &DisplacementField,
    boundary: BoundaryPolicy,
    interp: InterpKernel,
) -> Result<Frame, ImageError> {
    check_dims(frame.width, frame.height, field.width, field.height)?;
    field.check_finite()?;
    let pixels: Vec<f64> = field
        .map_x
        .par_iter()
        .zip(field.map_y.par_iter())
        .map(|(&sx, &sy)| {
            frame
                .sample(sx, sy, boundary, interp)
                .clamp(0.0, MAX_INTENSITY)
        })
        .collect();
    Ok(Frame {
        width: frame.width,
        height: frame.height,
        pixels,
        frame_index: frame.frame_index,
    })
}

/// Center-aligned bilinear resize. Source coordinate of output column `c`
/// is `(c + 0.5) * in_w / out_w - 0.5`, clamped at the edges. No padding.
pub fn resize_to(frame: &Frame, width: usize, height: usize) -> Result<Frame, ImageError> {
    if width == 0 || height == 0 {
        return Err(ImageError::ZeroDimension { width, height });
    }
    let sx = frame.width as f64 / width as f64;
    let sy = frame.height as f64 / height as f64;
    let pixels = (0..width * height)
        .into_par_iter()
        .map(|i| {
            let (c, r) = (i % width, i / width);
            let x = (c as f64 + 0.5) * sx - 0.5;
            let y = (r as f64 + 0.5) * sy - 0.5;
            frame.sample(
                x,
                y,
                BoundaryPolicy::ClampToEdge,
                InterpKernel::Bilinear,
            )
        })
        .collect();
    Ok(Frame {
        width,
        height,
        pixels,
        frame_index: frame.frame_index,
    })
}
