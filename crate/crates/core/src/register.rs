//! Intensity-based diffeomorphic registration with a stationary velocity field.
//!
//! The transform is `φ = exp(v)`, computed by scaling and squaring. The
//! optimizer runs gradient descent on `v` against
//! `E(φ) = D(moving ∘ φ, fixed) + λ·R(φ)`, where `R` is the mean squared
//! spatial gradient of the displacement `φ(x) − x`. Updates are smoothed with
//! a Gaussian before being applied, and a step is only taken when it lowers
//! the energy (halving the step otherwise).

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{compose, diff_x, diff_y, FieldError};
use crate::imgcore::{
    check_dims, warp, BoundaryPolicy, DisplacementField, Frame, ImageError, InterpKernel,
};

#[derive(Error, Debug)]
pub enum RegisterError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("invalid registration config: {0}")]
    Config(String),
    #[error("normalized cross-correlation is undefined for a constant {which} image")]
    NccConstant { which: &'static str },
    #[error("frames must be at least 2x2, got {width}x{height}")]
    TooSmall { width: usize, height: usize },
    #[error("diverged at iteration {iteration}: energy {energy} exceeds 10x initial {initial}")]
    Diverged {
        iteration: usize,
        energy: f64,
        initial: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Similarity {
    /// Mean squared difference.
    #[default]
    Ssd,
    /// One minus the Pearson correlation.
    Ncc,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub similarity: Similarity,
    /// Weight of the gradient penalty; intensities are on the 0-255 scale.
    pub lambda: f64,
    pub smoothing_sigma: f64,
    /// Largest per-pixel velocity change of one iteration, in pixels.
    pub step_size: f64,
    pub max_iters: usize,
    pub squaring_steps: u32,
    pub tol: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            similarity: Similarity::Ssd,
            lambda: 20.0,
            smoothing_sigma: 2.0,
            step_size: 0.5,
            max_iters: 200,
            squaring_steps: 6,
            tol: 1e-5,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<(), RegisterError> {
        let bad = |m: String| Err(RegisterError::Config(m));
        if self.max_iters < 1 {
            return bad("max_iters must be at least 1".into());
        }
        if self.squaring_steps < 1 {
            return bad("squaring_steps must be at least 1".into());
        }
        if !(self.smoothing_sigma > 0.0 && self.smoothing_sigma.is_finite()) {
            return bad(format!("smoothing_sigma must be positive, got {}", self.smoothing_sigma));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!("step_size must be positive, got {}", self.step_size));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return bad(format!("tol must be non-negative, got {}", self.tol));
        }
        Ok(())
    }
}

/// Stationary velocity, per-pixel components.
#[derive(Clone, Debug, PartialEq)]
pub struct StationaryVelocity {
    width: usize,
    height: usize,
    vx: Vec<f64>,
    vy: Vec<f64>,
}

impl StationaryVelocity {
    pub fn new(width: usize, height: usize, vx: Vec<f64>, vy: Vec<f64>) -> Result<Self, RegisterError> {
        if vx.len() != width * height || vy.len() != width * height {
            return Err(ImageError::BufferLength {
                width,
                height,
                expected: width * height,
                got: vx.len().min(vy.len()),
            }
            .into());
        }
        for (what, v) in [("vx", &vx), ("vy", &vy)] {
            if let Some(i) = v.iter().position(|a| !a.is_finite()) {
                return Err(ImageError::NonFinite {
                    what,
                    x: i % width,
                    y: i / width,
                }
                .into());
            }
        }
        Ok(Self {
            width,
            height,
            vx,
            vy,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            vx: vec![0.0; width * height],
            vy: vec![0.0; width * height],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        f: impl Fn(f64, f64) -> (f64, f64),
    ) -> Result<Self, RegisterError> {
        let (vx, vy) = (0..width * height)
            .map(|i| f((i % width) as f64, (i / width) as f64))
            .unzip();
        Self::new(width, height, vx, vy)
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

    pub fn max_magnitude(&self) -> f64 {
        self.vx
            .iter()
            .zip(&self.vy)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }
}

/// Scaling and squaring: start from `x + v(x)/2^K`, then self-compose `K` times.
pub fn exp_map(v: &StationaryVelocity, squaring_steps: u32) -> Result<DisplacementField, RegisterError> {
    if squaring_steps < 1 {
        return Err(RegisterError::Config("squaring_steps must be at least 1".into()));
    }
    let scale = 0.5f64.powi(squaring_steps as i32);
    let ux: Vec<f64> = v.vx.iter().map(|a| a * scale).collect();
    let uy: Vec<f64> = v.vy.iter().map(|a| a * scale).collect();
    let mut phi = DisplacementField::from_displacement(v.width, v.height, &ux, &uy)?;
    for _ in 0..squaring_steps {
        phi = compose(&phi, &phi)?;
    }
    Ok(phi)
}

fn ensure_min_size(w: usize, h: usize) -> Result<(), RegisterError> {
    if w < 2 || h < 2 {
        return Err(RegisterError::TooSmall {
            width: w,
            height: h,
        });
    }
    Ok(())
}

fn warp_moving(moving: &Frame, field: &DisplacementField) -> Result<Frame, RegisterError> {
    Ok(warp(
        moving,
        field,
        BoundaryPolicy::ClampToEdge,
        InterpKernel::Bilinear,
    )?)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn dissimilarity(warped: &Frame, fixed: &Frame, sim: Similarity) -> Result<f64, RegisterError> {
    let (a, b) = (warped.pixels(), fixed.pixels());
    let n = a.len() as f64;
    match sim {
        Similarity::Ssd => Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n),
        Similarity::Ncc => {
            let (ma, sa) = mean_std(a);
            let (mb, sb) = mean_std(b);
            if sa == 0.0 {
                return Err(RegisterError::NccConstant { which: "warped" });
            }
            if sb == 0.0 {
                return Err(RegisterError::NccConstant { which: "fixed" });
            }
            let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
            Ok(1.0 - cov / (sa * sb))
        }
    }
}

/// Mean squared spatial gradient of the displacement `φ(x) − x`.
pub fn regularizer(field: &DisplacementField) -> f64 {
    let (w, h) = (field.width(), field.height());
    if w < 2 || h < 2 {
        return 0.0;
    }
    let (ux, uy) = field.displacement();
    let n = (w * h) as f64;
    [&ux, &uy]
        .into_iter()
        .map(|u| {
            let gx = diff_x(u, w, h);
            let gy = diff_y(u, w, h);
            gx.iter().chain(&gy).map(|g| g * g).sum::<f64>()
        })
        .sum::<f64>()
        / n
}

/// Transpose of `diff_x`.
fn diff_x_adjoint(r: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let o = y * w;
        for x in 0..w {
            let v = r[o + x];
            if x == 0 {
                out[o + 1] += v;
                out[o] -= v;
            } else if x == w - 1 {
                out[o + w - 1] += v;
                out[o + w - 2] -= v;
            } else {
                out[o + x + 1] += 0.5 * v;
                out[o + x - 1] -= 0.5 * v;
            }
        }
    }
    out
}

/// Transpose of `diff_y`.
fn diff_y_adjoint(r: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let v = r[y * w + x];
            let at = |row: usize| row * w + x;
            if y == 0 {
                out[at(1)] += v;
                out[at(0)] -= v;
            } else if y == h - 1 {
                out[at(h - 1)] += v;
                out[at(h - 2)] -= v;
            } else {
                out[at(y + 1)] += 0.5 * v;
                out[at(y - 1)] -= 0.5 * v;
            }
        }
    }
    out
}

/// Gradient of [`regularizer`] with respect to each displacement component.
pub fn regularizer_gradient(field: &DisplacementField) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (field.width(), field.height());
    let (ux, uy) = field.displacement();
    let scale = 2.0 / (w * h) as f64;
    let grad = |u: &[f64]| -> Vec<f64> {
        let ax = diff_x_adjoint(&diff_x(u, w, h), w, h);
        let ay = diff_y_adjoint(&diff_y(u, w, h), w, h);
        ax.iter().zip(&ay).map(|(a, b)| scale * (a + b)).collect()
    };
    (grad(&ux), grad(&uy))
}

/// `D(moving ∘ field, fixed) + λ·R(field)`.
pub fn energy(
    moving: &Frame,
    fixed: &Frame,
    field: &DisplacementField,
    cfg: &RegistrationConfig,
) -> Result<f64, RegisterError> {
    moving.same_dims(fixed)?;
    check_dims(moving.width(), moving.height(), field.width(), field.height())?;
    ensure_min_size(moving.width(), moving.height())?;
    let warped = warp_moving(moving, field)?;
    let d = dissimilarity(&warped, fixed, cfg.similarity)?;
    let r = if cfg.lambda > 0.0 { regularizer(field) } else { 0.0 };
    Ok(d + cfg.lambda * r)
}

/// Gradient of the similarity term with respect to the displacement at every
/// pixel. Uses the derivative of the bilinear interpolant of `moving` at
/// `field(x)`.
pub fn similarity_force(
    moving: &Frame,
    fixed: &Frame,
    field: &DisplacementField,
    similarity: Similarity,
) -> Result<(Vec<f64>, Vec<f64>), RegisterError> {
    moving.same_dims(fixed)?;
    check_dims(moving.width(), moving.height(), field.width(), field.height())?;
    let warped = warp_moving(moving, field)?;
    let (a, b) = (warped.pixels(), fixed.pixels());
    let n = a.len() as f64;
    // dD/dW per pixel
    let dd: Vec<f64> = match similarity {
        Similarity::Ssd => a.iter().zip(b).map(|(w, f)| 2.0 * (w - f) / n).collect(),
        Similarity::Ncc => {
            let (ma, sa) = mean_std(a);
            let (mb, sb) = mean_std(b);
            if sa == 0.0 {
                return Err(RegisterError::NccConstant { which: "warped" });
            }
            if sb == 0.0 {
                return Err(RegisterError::NccConstant { which: "fixed" });
            }
            let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
            let rho = cov / (sa * sb);
            a.iter()
                .zip(b)
                .map(|(w, f)| -((f - mb) / (sa * sb) - rho * (w - ma) / (sa * sa)) / n)
                .collect()
        }
    };
    let (fx, fy): (Vec<f64>, Vec<f64>) = field
        .map_x()
        .par_iter()
        .zip(field.map_y().par_iter())
        .zip(dd.par_iter())
        .map(|((&sx, &sy), &d)| {
            let (gx, gy) = moving.bilinear_gradient(sx, sy);
            (d * gx, d * gy)
        })
        .unzip();
    Ok((fx, fy))
}

/// Separable Gaussian blur with clamp-to-edge borders, radius `ceil(3σ)`.
pub fn gaussian_smooth(buf: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.into_iter().map(|t| t / s).collect();
    let (wi, hi) = (w as i64, h as i64);

    let mut tmp = vec![0.0; w * h];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            *out = taps
                .iter()
                .enumerate()
                .map(|(k, t)| {
                    let xx = (x as i64 + k as i64 - r).clamp(0, wi - 1) as usize;
                    t * buf[y * w + xx]
                })
                .sum();
        }
    });
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            *o = taps
                .iter()
                .enumerate()
                .map(|(k, t)| {
                    let yy = (y as i64 + k as i64 - r).clamp(0, hi - 1) as usize;
                    t * tmp[yy * w + x]
                })
                .sum();
        }
    });
    out
}

#[derive(Clone, Debug)]
pub struct Registration {
    pub field: DisplacementField,
    pub velocity: StationaryVelocity,
    /// Energy before the first step, then after every accepted step.
    pub energy_trace: Vec<f64>,
}

const MAX_BACKTRACKS: usize = 12;
const DIVERGENCE_FACTOR: f64 = 10.0;
/// Step multiplier after an accepted step, capped at `step_size`.
const STEP_GROWTH: f64 = 2.0;

/// Registers `moving` onto `fixed`; the returned field satisfies
/// `moving ∘ field ≈ fixed`.
pub fn register_diffeo(
    moving: &Frame,
    fixed: &Frame,
    cfg: &RegistrationConfig,
) -> Result<Registration, RegisterError> {
    cfg.validate()?;
    moving.same_dims(fixed)?;
    let (w, h) = (moving.width(), moving.height());
    ensure_min_size(w, h)?;
    if cfg.similarity == Similarity::Ncc {
        for (which, f) in [("moving", moving), ("fixed", fixed)] {
            let (lo, hi) = f.min_max();
            if lo == hi {
                return Err(RegisterError::NccConstant { which });
            }
        }
    }

    let mut velocity = StationaryVelocity::zeros(w, h);
    let mut field = DisplacementField::identity(w, h);
    let initial = energy(moving, fixed, &field, cfg)?;
    let mut trace = vec![initial];
    let mut current = initial;
    let mut step = cfg.step_size;

    for iteration in 1..=cfg.max_iters {
        if current <= 0.0 {
            break;
        }
        let (mut gx, mut gy) = similarity_force(moving, fixed, &field, cfg.similarity)?;
        if cfg.lambda > 0.0 {
            let (rx, ry) = regularizer_gradient(&field);
            for i in 0..gx.len() {
                gx[i] += cfg.lambda * rx[i];
                gy[i] += cfg.lambda * ry[i];
            }
        }
        let gmax = gx
            .iter()
            .zip(&gy)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max);
        if gmax == 0.0 || !gmax.is_finite() {
            break;
        }
        let dir_x = gaussian_smooth(
            &gx.iter().map(|g| -g / gmax).collect::<Vec<_>>(),
            w,
            h,
            cfg.smoothing_sigma,
        );
        let dir_y = gaussian_smooth(
            &gy.iter().map(|g| -g / gmax).collect::<Vec<_>>(),
            w,
            h,
            cfg.smoothing_sigma,
        );

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let vx: Vec<f64> = velocity.vx.iter().zip(&dir_x).map(|(v, d)| v + step * d).collect();
            let vy: Vec<f64> = velocity.vy.iter().zip(&dir_y).map(|(v, d)| v + step * d).collect();
            let candidate_v = StationaryVelocity::new(w, h, vx, vy)?;
            let candidate = exp_map(&candidate_v, cfg.squaring_steps)?;
            let e = energy(moving, fixed, &candidate, cfg)?;
            if !e.is_finite() || e > DIVERGENCE_FACTOR * initial {
                return Err(RegisterError::Diverged {
                    iteration,
                    energy: e,
                    initial,
                });
            }
            if e <= current {
                accepted = Some((candidate_v, candidate, e));
                break;
            }
            step *= 0.5;
        }
        let Some((v_new, field_new, e_new)) = accepted else {
            break;
        };
        let rel = (current - e_new) / current;
        step = (step * STEP_GROWTH).min(cfg.step_size);
        velocity = v_new;
        field = field_new;
        current = e_new;
        trace.push(e_new);
        if rel < cfg.tol {
            break;
        }
    }

    Ok(Registration {
        field,
        velocity,
        energy_trace: trace,
    })
}

/// `iteration,energy` rows, header included.
pub fn energy_trace_csv(trace: &[f64]) -> String {
    let mut s = String::from("iteration,energy\n");
    for (i, e) in trace.iter().enumerate() {
        let _ = writeln!(s, "{i},{e}");
    }
    s
}
