//! Dense motion fields: reconstruction from sparse tracks, explicit Euler
//! integration of velocity fields, composition, and Jacobian determinants.

mod dump;
mod recon;

pub use dump::{decode_field, encode_field, read_field_dump, write_field_dump, FIELD_MAGIC};
pub use recon::{
    tracks_to_displacement, tracks_to_displacement_between, Extrapolation, FieldRecon,
    ReconMethod,
};

use rayon::prelude::*;
use thiserror::Error;

use crate::imgcore::{check_dims, DisplacementField, ImageError, InterpKernel};

#[derive(Error, Debug)]
pub enum FieldError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Track(#[from] crate::tracks::TrackError),
    #[error("frame {frame}: {got} visible points, at least {needed} required")]
    TooFewVisible {
        frame: usize,
        got: usize,
        needed: usize,
    },
    #[error("grid-bilinear reconstruction requires queries on a uniform corner-inclusive grid")]
    NotAGrid,
    #[error("velocity sequence is empty")]
    EmptyVelocities,
    #[error("non-finite {what} at pixel ({x}, {y})")]
    NonFinite { what: &'static str, x: usize, y: usize },
    #[error("timestep must be finite and positive, got {0}")]
    Timestep(f64),
    #[error("field must be at least 3x3 for a Jacobian, got {width}x{height}")]
    TooSmall { width: usize, height: usize },
    #[error("invalid reconstruction parameters: {0}")]
    Recon(String),
    #[error("field dump {path}: {reason}")]
    Dump { path: String, reason: String },
}

/// Per-pixel instantaneous motion in pixels per timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    width: usize,
    height: usize,
    vx: Vec<f64>,
    vy: Vec<f64>,
    timestep: f64,
}

impl VelocityField {
    pub fn new(
        width: usize,
        height: usize,
        vx: Vec<f64>,
        vy: Vec<f64>,
        timestep: f64,
    ) -> Result<Self, FieldError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension { width, height }.into());
        }
        for v in [&vx, &vy] {
            if v.len() != width * height {
                return Err(ImageError::BufferLength {
                    width,
                    height,
                    expected: width * height,
                    got: v.len(),
                }
                .into());
            }
        }
        if !(timestep.is_finite() && timestep > 0.0) {
            return Err(FieldError::Timestep(timestep));
        }
        for (what, v) in [("vx", &vx), ("vy", &vy)] {
            if let Some(i) = v.iter().position(|a| !a.is_finite()) {
                return Err(FieldError::NonFinite {
                    what,
                    x: i % width,
                    y: i / width,
                });
            }
        }
        Ok(Self {
            width,
            height,
            vx,
            vy,
            timestep,
        })
    }

    /// Samples `f(x, y) -> (vx, vy)` at pixel centers with unit timestep.
    pub fn from_fn(
        width: usize,
        height: usize,
        f: impl Fn(f64, f64) -> (f64, f64),
    ) -> Result<Self, FieldError> {
        let (vx, vy) = (0..width * height)
            .map(|i| f((i % width) as f64, (i / width) as f64))
            .unzip();
        Self::new(width, height, vx, vy, 1.0)
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self, FieldError> {
        Self::new(
            width,
            height,
            vec![0.0; width * height],
            vec![0.0; width * height],
            1.0,
        )
    }

    pub fn with_timestep(self, timestep: f64) -> Result<Self, FieldError> {
        Self::new(self.width, self.height, self.vx, self.vy, timestep)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn vx(&self) -> &[f64] {
        &self.vx
    }

    pub fn vy(&self) -> &[f64] {
        &self.vy
    }

    pub fn timestep(&self) -> f64 {
        self.timestep
    }
}

/// Bilinear sample of a row-major buffer with clamp-to-edge.
#[inline]
pub(crate) fn bilinear_clamped(buf: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (wm, hm) = (w as i64 - 1, h as i64 - 1);
    let xa = (x0 as i64).clamp(0, wm) as usize;
    let xb = (x0 as i64 + 1).clamp(0, wm) as usize;
    let ya = (y0 as i64).clamp(0, hm) as usize;
    let yb = (y0 as i64 + 1).clamp(0, hm) as usize;
    let (r0, r1) = (ya * w, yb * w);
    let top = buf[r0 + xa] + fx * (buf[r0 + xb] - buf[r0 + xa]);
    let bottom = buf[r1 + xa] + fx * (buf[r1 + xb] - buf[r1 + xa]);
    top + fy * (bottom - top)
}

#[inline]
fn nearest_clamped(buf: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let xi = (x.round() as i64).clamp(0, w as i64 - 1) as usize;
    let yi = (y.round() as i64).clamp(0, h as i64 - 1) as usize;
    buf[yi * w + xi]
}

#[inline]
fn sample_with(kernel: InterpKernel, buf: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    match kernel {
        InterpKernel::Bilinear => bilinear_clamped(buf, w, h, x, y),
        InterpKernel::Nearest => nearest_clamped(buf, w, h, x, y),
    }
}

/// Explicit Euler flow: `φ₀(x) = x`, `φ_{t+1}(x) = φ_t(x) + Δt·v_t(φ_t(x))`.
///
/// Each velocity is sampled at the current warped position with clamp-to-edge.
pub fn integrate_euler(
    velocities: &[VelocityField],
    kernel: InterpKernel,
) -> Result<DisplacementField, FieldError> {
    let first = velocities.first().ok_or(FieldError::EmptyVelocities)?;
    let (w, h) = (first.width, first.height);
    for v in velocities {
        check_dims(w, h, v.width, v.height)?;
    }
    let phi = DisplacementField::identity(w, h);
    let mut map_x = phi.map_x().to_vec();
    let mut map_y = phi.map_y().to_vec();
    for v in velocities {
        let dt = v.timestep;
        map_x
            .par_iter_mut()
            .zip(map_y.par_iter_mut())
            .for_each(|(px, py)| {
                let vx = sample_with(kernel, &v.vx, w, h, *px, *py);
                let vy = sample_with(kernel, &v.vy, w, h, *px, *py);
                *px += dt * vx;
                *py += dt * vy;
            });
    }
    Ok(DisplacementField::new(w, h, map_x, map_y)?)
}

/// `result(x) = outer(inner(x))`.
///
/// Outer's displacement `outer(p) - p` is bilinearly sampled at `inner(x)`
/// with clamp-to-edge, so translations extrapolate exactly past the border.
pub fn compose(
    outer: &DisplacementField,
    inner: &DisplacementField,
) -> Result<DisplacementField, FieldError> {
    outer.same_dims(inner)?;
    let (w, h) = (outer.width(), outer.height());
    let (ux, uy) = outer.displacement();
    let (map_x, map_y): (Vec<f64>, Vec<f64>) = inner
        .map_x()
        .par_iter()
        .zip(inner.map_y().par_iter())
        .map(|(&px, &py)| {
            (
                px + bilinear_clamped(&ux, w, h, px, py),
                py + bilinear_clamped(&uy, w, h, px, py),
            )
        })
        .unzip();
    Ok(DisplacementField::new(w, h, map_x, map_y)?)
}

/// Finite-difference derivative along x of a row-major buffer: central in
/// the interior, one-sided on the first and last column.
pub(crate) fn diff_x(buf: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let row = &buf[y * w..(y + 1) * w];
        let o = &mut out[y * w..(y + 1) * w];
        for x in 0..w {
            o[x] = if x == 0 {
                row[1] - row[0]
            } else if x == w - 1 {
                row[w - 1] - row[w - 2]
            } else {
                0.5 * (row[x + 1] - row[x - 1])
            };
        }
    }
    out
}

pub(crate) fn diff_y(buf: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let at = |r: usize| buf[r * w + x];
            out[y * w + x] = if y == 0 {
                at(1) - at(0)
            } else if y == h - 1 {
                at(h - 1) - at(h - 2)
            } else {
                0.5 * (at(y + 1) - at(y - 1))
            };
        }
    }
    out
}

/// Per-pixel `det(Dφ)` using central differences, one-sided at the border.
pub fn jacobian_determinant(field: &DisplacementField) -> Result<Vec<f64>, FieldError> {
    let (w, h) = (field.width(), field.height());
    if w < 3 || h < 3 {
        return Err(FieldError::TooSmall {
            width: w,
            height: h,
        });
    }
    let mxx = diff_x(field.map_x(), w, h);
    let mxy = diff_y(field.map_x(), w, h);
    let myx = diff_x(field.map_y(), w, h);
    let myy = diff_y(field.map_y(), w, h);
    Ok((0..w * h)
        .map(|i| mxx[i] * myy[i] - mxy[i] * myx[i])
        .collect())
}
