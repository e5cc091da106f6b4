//! Synthetic sequences with known motion.
//!
//! A motion is a family of forward maps `φ_t`: the material point at `p` in
//! the base image sits at `φ_t(p)` in frame `t`. Frames are rendered by
//! backward warping, `frame_t(y) = base(φ_t⁻¹(y))`, so exact tracks are
//! `φ_t(φ_0⁻¹(q))` for a frame-0 query `q`.

use std::f64::consts::PI;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgcore::{
    BoundaryPolicy, DisplacementField, Frame, FrameSequence, ImageError, InterpKernel,
    MAX_INTENSITY,
};
use crate::metrics::{LandmarkKind, LandmarkSet, MetricsError};
use crate::tracks::{Point2, TrackError, TrackSet};

#[derive(Error, Debug)]
pub enum SynthError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("{what} trajectory has {got} entries, expected {expected}")]
    TrajectoryLength {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("rotation center ({x}, {y}) lies outside the {width}x{height} image")]
    CenterOutside {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("affine matrix at frame {frame} has determinant {det}; must be positive")]
    AffineDeterminant { frame: usize, det: f64 },
    #[error(
        "deformation at frame {frame} violates the invertibility bound a*2*pi*f/min(W,H) < 1 \
         (a = {amplitude}, f = {frequency}, value {value:.4})"
    )]
    InvertibilityBound {
        frame: usize,
        amplitude: f64,
        frequency: f64,
        value: f64,
    },
    #[error("composite motion needs at least one part")]
    EmptyComposite,
    #[error("non-finite motion parameter in {0}")]
    NonFinite(&'static str),
    #[error("query {index} at ({x}, {y}) lies outside the image")]
    QueryOutside { index: usize, x: f64, y: f64 },
    #[error("invalid perturbation: {0}")]
    Perturbation(String),
}

/// Parametric motion with one parameter set per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Motion {
    Translation {
        shifts: Vec<[f64; 2]>,
    },
    /// Counter-clockwise in image coordinates (y down), degrees.
    Rotation {
        center: [f64; 2],
        angles_deg: Vec<f64>,
    },
    /// `p ↦ A·(p − c) + c + t`, per frame `[a11, a12, a21, a22, tx, ty]`.
    Affine {
        center: [f64; 2],
        params: Vec<[f64; 6]>,
    },
    /// `u_x = a_t·sin(2πf·y/H + φx)`, `u_y = a_t·sin(2πf·x/W + φy)`.
    SmoothDeformation {
        amplitudes: Vec<f64>,
        frequency: f64,
        #[serde(default)]
        phase: [f64; 2],
    },
    /// Parts applied in order: the first part acts first.
    Composite {
        parts: Vec<Motion>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    #[serde(flatten)]
    pub motion: Motion,
    #[serde(default)]
    pub seed: u64,
}

impl MotionSpec {
    pub fn new(motion: Motion, seed: u64) -> Self {
        Self { motion, seed }
    }

    pub fn still(num_frames: usize) -> Self {
        Self::new(
            Motion::Translation {
                shifts: vec![[0.0, 0.0]; num_frames],
            },
            0,
        )
    }

    /// Rotation about `center` followed by translation, drawn uniformly per
    /// frame from `±max_shift` px and `±max_angle_deg`; frame 0 is fixed.
    pub fn random_rigid(
        num_frames: usize,
        max_shift: f64,
        max_angle_deg: f64,
        center: [f64; 2],
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shifts = vec![[0.0, 0.0]];
        let mut angles = vec![0.0];
        for _ in 1..num_frames {
            shifts.push([
                rng.random_range(-max_shift..=max_shift),
                rng.random_range(-max_shift..=max_shift),
            ]);
            angles.push(rng.random_range(-max_angle_deg..=max_angle_deg));
        }
        Self::new(
            Motion::Composite {
                parts: vec![
                    Motion::Rotation {
                        center,
                        angles_deg: angles,
                    },
                    Motion::Translation { shifts },
                ],
            },
            seed,
        )
    }

    pub fn validate(&self, num_frames: usize, width: usize, height: usize) -> Result<(), SynthError> {
        if num_frames < 2 {
            return Err(SynthError::TooFewFrames(num_frames));
        }
        validate_motion(&self.motion, num_frames, width, height)
    }

    /// Whether every `φ_t` is an isometry.
    pub fn is_rigid(&self) -> bool {
        fn rigid(m: &Motion) -> bool {
            match m {
                Motion::Translation { .. } | Motion::Rotation { .. } => true,
                Motion::Composite { parts } => parts.iter().all(rigid),
                _ => false,
            }
        }
        rigid(&self.motion)
    }

    /// `φ_t(p)`.
    pub fn forward(&self, t: usize, p: Point2, width: usize, height: usize) -> Point2 {
        forward(&self.motion, t, p, width, height)
    }

    /// `φ_t⁻¹(p)`.
    pub fn inverse(&self, t: usize, p: Point2, width: usize, height: usize) -> Point2 {
        inverse(&self.motion, t, p, width, height)
    }

    /// Dense `φ_t` sampled at every pixel center.
    pub fn forward_field(&self, t: usize, width: usize, height: usize) -> DisplacementField {
        DisplacementField::from_fn(width, height, |x, y| {
            let q = self.forward(t, Point2::new(x, y), width, height);
            (q.x, q.y)
        })
    }
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<(), SynthError> {
    if got != expected {
        return Err(SynthError::TrajectoryLength {
            what,
            got,
            expected,
        });
    }
    Ok(())
}

fn check_finite<'a>(what: &'static str, vals: impl IntoIterator<Item = &'a f64>) -> Result<(), SynthError> {
    if vals.into_iter().any(|v| !v.is_finite()) {
        return Err(SynthError::NonFinite(what));
    }
    Ok(())
}

fn check_center(c: [f64; 2], width: usize, height: usize) -> Result<(), SynthError> {
    let inside = (0.0..=(width as f64 - 1.0)).contains(&c[0]) && (0.0..=(height as f64 - 1.0)).contains(&c[1]);
    if !inside {
        return Err(SynthError::CenterOutside {
            x: c[0],
            y: c[1],
            width,
            height,
        });
    }
    Ok(())
}

fn validate_motion(m: &Motion, t: usize, width: usize, height: usize) -> Result<(), SynthError> {
    match m {
        Motion::Translation { shifts } => {
            check_len("shift", shifts.len(), t)?;
            check_finite("shifts", shifts.iter().flatten())
        }
        Motion::Rotation { center, angles_deg } => {
            check_len("angle", angles_deg.len(), t)?;
            check_finite("angles", angles_deg.iter().chain(center))?;
            check_center(*center, width, height)
        }
        Motion::Affine { center, params } => {
            check_len("affine", params.len(), t)?;
            check_finite("affine parameters", params.iter().flatten().chain(center))?;
            check_center(*center, width, height)?;
            for (frame, p) in params.iter().enumerate() {
                let det = p[0] * p[3] - p[1] * p[2];
                if det <= 0.0 {
                    return Err(SynthError::AffineDeterminant { frame, det });
                }
            }
            Ok(())
        }
        Motion::SmoothDeformation {
            amplitudes,
            frequency,
            phase,
        } => {
            check_len("amplitude", amplitudes.len(), t)?;
            check_finite(
                "deformation parameters",
                amplitudes.iter().chain(phase).chain([frequency]),
            )?;
            let side = width.min(height) as f64;
            for (frame, &a) in amplitudes.iter().enumerate() {
                let value = a.abs() * 2.0 * PI * frequency.abs() / side;
                if value >= 1.0 {
                    return Err(SynthError::InvertibilityBound {
                        frame,
                        amplitude: a,
                        frequency: *frequency,
                        value,
                    });
                }
            }
            Ok(())
        }
        Motion::Composite { parts } => {
            if parts.is_empty() {
                return Err(SynthError::EmptyComposite);
            }
            parts.iter().try_for_each(|p| validate_motion(p, t, width, height))
        }
    }
}

fn rotate(p: Point2, c: [f64; 2], deg: f64) -> Point2 {
    let (s, co) = deg.to_radians().sin_cos();
    let (dx, dy) = (p.x - c[0], p.y - c[1]);
    Point2::new(c[0] + co * dx - s * dy, c[1] + s * dx + co * dy)
}

fn deformation(a: f64, f: f64, phase: [f64; 2], p: Point2, width: usize, height: usize) -> (f64, f64) {
    let kx = 2.0 * PI * f / width as f64;
    let ky = 2.0 * PI * f / height as f64;
    (a * (ky * p.y + phase[0]).sin(), a * (kx * p.x + phase[1]).sin())
}

fn forward(m: &Motion, t: usize, p: Point2, width: usize, height: usize) -> Point2 {
    match m {
        Motion::Translation { shifts } => Point2::new(p.x + shifts[t][0], p.y + shifts[t][1]),
        Motion::Rotation { center, angles_deg } => rotate(p, *center, angles_deg[t]),
        Motion::Affine { center, params } => {
            let a = params[t];
            let (dx, dy) = (p.x - center[0], p.y - center[1]);
            Point2::new(
                a[0] * dx + a[1] * dy + center[0] + a[4],
                a[2] * dx + a[3] * dy + center[1] + a[5],
            )
        }
        Motion::SmoothDeformation {
            amplitudes,
            frequency,
            phase,
        } => {
            let (ux, uy) = deformation(amplitudes[t], *frequency, *phase, p, width, height);
            Point2::new(p.x + ux, p.y + uy)
        }
        Motion::Composite { parts } => parts
            .iter()
            .fold(p, |q, part| forward(part, t, q, width, height)),
    }
}

const INVERSE_ITERS: usize = 200;

fn inverse(m: &Motion, t: usize, p: Point2, width: usize, height: usize) -> Point2 {
    match m {
        Motion::Translation { shifts } => Point2::new(p.x - shifts[t][0], p.y - shifts[t][1]),
        Motion::Rotation { center, angles_deg } => rotate(p, *center, -angles_deg[t]),
        Motion::Affine { center, params } => {
            let a = params[t];
            let det = a[0] * a[3] - a[1] * a[2];
            let (dx, dy) = (p.x - center[0] - a[4], p.y - center[1] - a[5]);
            Point2::new(
                (a[3] * dx - a[1] * dy) / det + center[0],
                (-a[2] * dx + a[0] * dy) / det + center[1],
            )
        }
        Motion::SmoothDeformation {
            amplitudes,
            frequency,
            phase,
        } => {
            // contraction with constant a·2πf/side < 1
            let mut q = p;
            for _ in 0..INVERSE_ITERS {
                let (ux, uy) = deformation(amplitudes[t], *frequency, *phase, q, width, height);
                let next = Point2::new(p.x - ux, p.y - uy);
                let done = next.distance(q) < 1e-13;
                q = next;
                if done {
                    break;
                }
            }
            q
        }
        Motion::Composite { parts } => parts
            .iter()
            .rev()
            .fold(p, |q, part| inverse(part, t, q, width, height)),
    }
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub frames: FrameSequence,
    /// Forward map `φ_t` per frame, sampled at pixel centers.
    pub forward: Vec<DisplacementField>,
}

/// Renders `frame_t(y) = base(φ_t⁻¹(y))` with bilinear, clamp-to-edge sampling.
pub fn generate(base: &Frame, spec: &MotionSpec, num_frames: usize) -> Result<Generated, SynthError> {
    let (w, h) = (base.width(), base.height());
    spec.validate(num_frames, w, h)?;
    let frames: Vec<Frame> = (0..num_frames)
        .into_par_iter()
        .map(|t| {
            Frame::from_fn(w, h, |x, y| {
                let src = spec.inverse(t, Point2::new(x as f64, y as f64), w, h);
                base.sample(src.x, src.y, BoundaryPolicy::ClampToEdge, InterpKernel::Bilinear)
            })
            .map(|f| f.with_index(t))
        })
        .collect::<Result<_, _>>()?;
    let forward = (0..num_frames)
        .into_par_iter()
        .map(|t| spec.forward_field(t, w, h))
        .collect();
    Ok(Generated {
        frames: FrameSequence::new(frames, 30.0)?,
        forward,
    })
}

fn in_bounds(p: Point2, width: usize, height: usize) -> bool {
    p.x >= 0.0 && p.y >= 0.0 && p.x <= width as f64 - 1.0 && p.y <= height as f64 - 1.0
}

fn trajectories(
    spec: &MotionSpec,
    queries: &[Point2],
    num_frames: usize,
    width: usize,
    height: usize,
) -> Result<Vec<Point2>, SynthError> {
    spec.validate(num_frames, width, height)?;
    if let Some((index, q)) = queries
        .iter()
        .enumerate()
        .find(|(_, q)| !in_bounds(**q, width, height))
    {
        return Err(SynthError::QueryOutside { index, x: q.x, y: q.y });
    }
    let material: Vec<Point2> = queries
        .iter()
        .map(|&q| spec.inverse(0, q, width, height))
        .collect();
    let mut out = Vec::with_capacity(num_frames * queries.len());
    out.extend_from_slice(queries);
    for t in 1..num_frames {
        out.extend(material.iter().map(|&p| spec.forward(t, p, width, height)));
    }
    Ok(out)
}

/// Exact tracks of frame-0 `queries`; visible while inside the image.
pub fn exact_tracks(
    spec: &MotionSpec,
    queries: &[Point2],
    num_frames: usize,
    width: usize,
    height: usize,
) -> Result<TrackSet, SynthError> {
    let positions = trajectories(spec, queries, num_frames, width, height)?;
    let visibility = positions.iter().map(|&p| in_bounds(p, width, height)).collect();
    Ok(TrackSet::new(
        "synth:exact",
        width,
        height,
        num_frames,
        queries.len(),
        positions,
        visibility,
    )?)
}

/// Exact landmark trajectories; the `Reference` set for MAPE scoring.
pub fn exact_landmarks(
    spec: &MotionSpec,
    names: &[String],
    points: &[Point2],
    num_frames: usize,
    width: usize,
    height: usize,
) -> Result<LandmarkSet, SynthError> {
    let positions = trajectories(spec, points, num_frames, width, height)?;
    Ok(LandmarkSet::new(
        names.to_vec(),
        num_frames,
        positions,
        LandmarkKind::Reference,
    )?)
}

/// Smallest and largest drift applied to an outlier track by its last frame, px.
pub const OUTLIER_DRIFT_RANGE: (f64, f64) = (10.0, 30.0);

/// Adds `N(0, σ²)` jitter to visible positions after frame 0 and turns
/// `round(rate·N)` seeded tracks into outliers drifting linearly away to
/// [`OUTLIER_DRIFT_RANGE`] px by the last frame.
pub fn perturb_tracks(
    tracks: &TrackSet,
    noise_sigma: f64,
    outlier_rate: f64,
    seed: u64,
) -> Result<TrackSet, SynthError> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(SynthError::Perturbation(format!(
            "noise_sigma must be non-negative, got {noise_sigma}"
        )));
    }
    if !(0.0..1.0).contains(&outlier_rate) {
        return Err(SynthError::Perturbation(format!(
            "outlier_rate must lie in [0, 1), got {outlier_rate}"
        )));
    }
    let (t_len, n) = (tracks.num_frames(), tracks.num_points());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = (outlier_rate * n as f64).round() as usize;
    let mut chosen = index::sample(&mut rng, n, count).into_vec();
    chosen.sort_unstable();
    let drifts: Vec<(f64, f64)> = chosen
        .iter()
        .map(|_| {
            let angle = rng.random_range(0.0..2.0 * PI);
            let mag = rng.random_range(OUTLIER_DRIFT_RANGE.0..=OUTLIER_DRIFT_RANGE.1);
            (mag * angle.cos(), mag * angle.sin())
        })
        .collect();

    let mut positions = tracks.positions().to_vec();
    let vis = tracks.visibility();
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("sigma checked");
        for (i, p) in positions.iter_mut().enumerate().skip(n) {
            if vis[i] {
                p.x += normal.sample(&mut rng);
                p.y += normal.sample(&mut rng);
            }
        }
    }
    if t_len > 1 {
        for (&i, &(dx, dy)) in chosen.iter().zip(&drifts) {
            for t in 1..t_len {
                let s = t as f64 / (t_len - 1) as f64;
                let p = &mut positions[t * n + i];
                p.x += s * dx;
                p.y += s * dy;
            }
        }
    }

    let mut out = TrackSet::new(
        tracks.source_tag.clone(),
        tracks.width,
        tracks.height,
        t_len,
        n,
        positions,
        vis.to_vec(),
    )?;
    out.outliers = tracks.outliers.clone();
    if !chosen.is_empty() {
        let mut all = tracks.outliers.clone().unwrap_or_default();
        all.extend(&chosen);
        all.sort_unstable();
        all.dedup();
        out = out.with_outliers(all)?;
    }
    Ok(out)
}

/// Soft-edged ellipses over a smooth background gradient, values in `[0, 255]`.
pub fn phantom(width: usize, height: usize, seed: u64) -> Result<Frame, SynthError> {
    struct Ellipse {
        cx: f64,
        cy: f64,
        ax: f64,
        ay: f64,
        cos: f64,
        sin: f64,
        level: f64,
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = width.min(height) as f64;
    let (w, h) = (width as f64, height as f64);
    let count = rng.random_range(6..=10);
    let shapes: Vec<Ellipse> = (0..count)
        .map(|_| {
            let angle: f64 = rng.random_range(0.0..PI);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            Ellipse {
                cx: rng.random_range(0.15..0.85) * w,
                cy: rng.random_range(0.15..0.85) * h,
                ax: rng.random_range(0.06..0.22) * side,
                ay: rng.random_range(0.06..0.22) * side,
                cos: angle.cos(),
                sin: angle.sin(),
                level: sign * rng.random_range(35.0..80.0),
            }
        })
        .collect();
    let g0 = rng.random_range(70.0..110.0);
    let (gx, gy) = (rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0));
    const EDGE_PX: f64 = 1.5;
    Ok(Frame::from_fn(width, height, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let mut v = g0 + gx * xf / w + gy * yf / h;
        for e in &shapes {
            let (dx, dy) = (xf - e.cx, yf - e.cy);
            let u = (e.cos * dx + e.sin * dy) / e.ax;
            let s = (-e.sin * dx + e.cos * dy) / e.ay;
            let r = (u * u + s * s).sqrt();
            // signed distance to the rim, approximately in pixels
            let d = (r - 1.0) * e.ax.min(e.ay);
            v += e.level / (1.0 + (d / EDGE_PX).exp());
        }
        v.clamp(0.0, MAX_INTENSITY)
    })?)
}

/// Isotropic Gaussian bump over a constant background.
pub fn gaussian_blob(
    width: usize,
    height: usize,
    center: (f64, f64),
    sigma: f64,
    amplitude: f64,
    background: f64,
) -> Result<Frame, SynthError> {
    Ok(Frame::from_fn(width, height, |x, y| {
        let (dx, dy) = (x as f64 - center.0, y as f64 - center.1);
        background + amplitude * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
    })?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracks::sample_uniform_grid;

    fn translation(shifts: Vec<[f64; 2]>) -> MotionSpec {
        MotionSpec::new(Motion::Translation { shifts }, 1)
    }

    #[test]
    fn zero_shift_frames_equal_base() {
        let base = phantom(40, 30, 3).unwrap();
        let g = generate(&base, &MotionSpec::still(4), 4).unwrap();
        for f in g.frames.frames() {
            assert_eq!(f.pixels(), base.pixels());
        }
    }

    #[test]
    fn integer_translation_shifts_content() {
        let base = phantom(48, 48, 5).unwrap();
        let spec = translation((0..4).map(|t| [t as f64, 0.0]).collect());
        let g = generate(&base, &spec, 4).unwrap();
        for (t, f) in g.frames.frames().iter().enumerate() {
            for y in 0..48 {
                for x in t..48 {
                    assert_eq!(f.get(x, y), base.get(x - t, y));
                }
            }
        }
    }

    #[test]
    fn rotation_field_is_analytic() {
        let angles: Vec<f64> = (0..31).map(|t| 3.0 * t as f64 / 30.0).collect();
        let spec = MotionSpec::new(
            Motion::Rotation {
                center: [31.5, 31.5],
                angles_deg: angles,
            },
            0,
        );
        let phi = spec.forward_field(30, 64, 64);
        let (s, c) = 3f64.to_radians().sin_cos();
        let (mx, my) = phi.get(10, 50);
        let (dx, dy) = (10.0 - 31.5, 50.0 - 31.5);
        assert_eq!(mx, 31.5 + c * dx - s * dy);
        assert_eq!(my, 31.5 + s * dx + c * dy);
    }

    #[test]
    fn forward_inverse_round_trip() {
        let t = 3;
        let specs = [
            MotionSpec::random_rigid(t, 5.0, 3.0, [20.0, 15.0], 9),
            MotionSpec::new(
                Motion::Affine {
                    center: [20.0, 15.0],
                    params: vec![[1.0, 0.0, 0.0, 1.0, 0.0, 0.0], [1.05, 0.1, -0.05, 0.95, 2.0, -1.0], [0.9, 0.0, 0.2, 1.1, 0.0, 3.0]],
                },
                0,
            ),
            MotionSpec::new(
                Motion::SmoothDeformation {
                    amplitudes: vec![0.0, 1.0, 2.5],
                    frequency: 1.5,
                    phase: [0.3, 1.1],
                },
                0,
            ),
        ];
        for spec in &specs {
            spec.validate(t, 40, 30).unwrap();
            for &(x, y) in &[(0.0, 0.0), (13.2, 7.7), (39.0, 29.0)] {
                let p = Point2::new(x, y);
                let back = spec.inverse(2, spec.forward(2, p, 40, 30), 40, 30);
                assert!(back.distance(p) < 1e-9, "{spec:?}");
            }
        }
    }

    #[test]
    fn validation_errors() {
        let bound = MotionSpec::new(
            Motion::SmoothDeformation {
                amplitudes: vec![0.0, 20.0],
                frequency: 2.0,
                phase: [0.0, 0.0],
            },
            0,
        );
        let err = bound.validate(2, 64, 64).unwrap_err();
        assert!(matches!(err, SynthError::InvertibilityBound { frame: 1, .. }));
        assert!(err.to_string().contains("a*2*pi*f/min(W,H) < 1"));
        assert!(matches!(
            translation(vec![[0.0, 0.0]; 3]).validate(2, 8, 8),
            Err(SynthError::TrajectoryLength { .. })
        ));
        assert!(matches!(
            translation(vec![[0.0, 0.0]]).validate(1, 8, 8),
            Err(SynthError::TooFewFrames(1))
        ));
        let off = MotionSpec::new(
            Motion::Rotation {
                center: [100.0, 2.0],
                angles_deg: vec![0.0, 1.0],
            },
            0,
        );
        assert!(matches!(off.validate(2, 8, 8), Err(SynthError::CenterOutside { .. })));
        let flip = MotionSpec::new(
            Motion::Affine {
                center: [1.0, 1.0],
                params: vec![[1.0, 0.0, 0.0, 1.0, 0.0, 0.0], [-1.0, 0.0, 0.0, 1.0, 0.0, 0.0]],
            },
            0,
        );
        assert!(matches!(flip.validate(2, 8, 8), Err(SynthError::AffineDeterminant { frame: 1, .. })));
        let empty = MotionSpec::new(Motion::Composite { parts: vec![] }, 0);
        assert!(matches!(empty.validate(2, 8, 8), Err(SynthError::EmptyComposite)));
    }

    #[test]
    fn exact_tracks_of_translation_and_stillness() {
        let q = sample_uniform_grid(32, 32, 4).unwrap();
        let still = exact_tracks(&MotionSpec::still(5), &q, 5, 32, 32).unwrap();
        for t in 0..5 {
            assert_eq!(still.frame(t), &q[..]);
        }
        let spec = translation((0..3).map(|t| [t as f64, -0.5 * t as f64]).collect());
        let tr = exact_tracks(&spec, &q, 3, 32, 32).unwrap();
        for (i, p) in q.iter().enumerate() {
            assert_eq!(tr.position(2, i), Point2::new(p.x + 2.0, p.y - 1.0));
        }
        // the corner at (31, 0) leaves the image
        assert!(!tr.is_visible(1, 3));
        assert!(tr.is_visible(1, 4) && tr.is_visible(0, 3));
        assert!(matches!(
            exact_tracks(&spec, &[Point2::new(-1.0, 0.0)], 3, 32, 32),
            Err(SynthError::QueryOutside { index: 0, .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let spec = MotionSpec::random_rigid(4, 3.0, 1.0, [10.0, 10.0], 42);
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"kind\":\"composite\""));
        assert_eq!(serde_json::from_str::<MotionSpec>(&text).unwrap(), spec);
        let parsed: MotionSpec = serde_json::from_str(
            r#"{"kind":"smooth-deformation","amplitudes":[0,1],"frequency":1.0}"#,
        )
        .unwrap();
        assert_eq!(parsed.seed, 0);
    }

    #[test]
    fn perturb_identity_and_count() {
        let q = sample_uniform_grid(64, 64, 20).unwrap();
        let tr = exact_tracks(&MotionSpec::random_rigid(6, 2.0, 1.0, [32.0, 32.0], 1), &q, 6, 64, 64).unwrap();
        assert_eq!(perturb_tracks(&tr, 0.0, 0.0, 7).unwrap(), tr);
        let p = perturb_tracks(&tr, 0.5, 0.05, 7).unwrap();
        let outliers = p.outliers.clone().unwrap();
        assert_eq!(outliers.len(), 20);
        assert_eq!(p.frame(0), tr.frame(0));
        assert_eq!(perturb_tracks(&tr, 0.5, 0.05, 7).unwrap(), p);
        assert_ne!(perturb_tracks(&tr, 0.5, 0.05, 8).unwrap(), p);
        let last = tr.num_frames() - 1;
        for &i in &outliers {
            let d = p.position(last, i).distance(tr.position(last, i));
            assert!(d > OUTLIER_DRIFT_RANGE.0 - 3.0 && d < OUTLIER_DRIFT_RANGE.1 + 3.0);
        }
        assert!(perturb_tracks(&tr, -1.0, 0.0, 0).is_err());
        assert!(perturb_tracks(&tr, 0.0, 1.0, 0).is_err());
    }

    #[test]
    fn phantom_is_deterministic_and_in_range() {
        let a = phantom(64, 48, 11).unwrap();
        assert_eq!(a, phantom(64, 48, 11).unwrap());
        assert_ne!(a, phantom(64, 48, 12).unwrap());
        let (lo, hi) = a.min_max();
        assert!(lo >= 0.0 && hi <= 255.0 && hi - lo > 30.0);
    }

    #[test]
    fn blob_peak() {
        let b = gaussian_blob(32, 32, (16.0, 16.0), 4.0, 100.0, 20.0).unwrap();
        assert_eq!(b.get(16, 16), 120.0);
        assert!(b.get(0, 0) < 20.01);
    }
}
