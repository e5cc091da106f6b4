//! Query-point samplers: uniform grid, seeded random, and Shi–Tomasi corners.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Point2, TrackError};
use crate::imgcore::Frame;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingStrategy {
    #[default]
    #[serde(alias = "uniform")]
    UniformGrid,
    Random,
    Gftt,
}

impl std::str::FromStr for SamplingStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" | "uniform-grid" => Ok(Self::UniformGrid),
            "random" => Ok(Self::Random),
            "gftt" => Ok(Self::Gftt),
            _ => Err(format!("unknown strategy '{s}', expected uniform, random or gftt")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingSpec {
    pub strategy: SamplingStrategy,
    pub grid_size: usize,
    pub count: usize,
    pub seed: u64,
    pub gftt_quality: f64,
    pub gftt_min_distance: f64,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self {
            strategy: SamplingStrategy::UniformGrid,
            grid_size: 16,
            count: 256,
            seed: 0,
            gftt_quality: 0.01,
            gftt_min_distance: 8.0,
        }
    }
}

/// Dispatches on `spec.strategy`. `frame` supplies dimensions and, for gftt, content.
pub fn sample(spec: &SamplingSpec, frame: &Frame) -> Result<Vec<Point2>, TrackError> {
    match spec.strategy {
        SamplingStrategy::UniformGrid => {
            sample_uniform_grid(frame.width(), frame.height(), spec.grid_size)
        }
        SamplingStrategy::Random => {
            sample_random(frame.width(), frame.height(), spec.count, spec.seed)
        }
        SamplingStrategy::Gftt => sample_gftt(
            frame,
            spec.count,
            spec.gftt_quality,
            spec.gftt_min_distance,
        ),
    }
}

#[inline]
fn grid_coord(k: usize, side: usize, g: usize) -> f64 {
    k as f64 * (side - 1) as f64 / (g - 1) as f64
}

/// `g × g` corner-inclusive grid, row-major (y outer, x inner).
pub fn sample_uniform_grid(width: usize, height: usize, g: usize) -> Result<Vec<Point2>, TrackError> {
    if g < 2 {
        return Err(TrackError::GridTooSmall(g));
    }
    let side = width.min(height);
    if g > side {
        return Err(TrackError::GridTooLarge { g, side });
    }
    Ok((0..g)
        .flat_map(|i| {
            (0..g).map(move |j| Point2::new(grid_coord(j, width, g), grid_coord(i, height, g)))
        })
        .collect())
}

/// Returns `g` if `points` is exactly the output of `sample_uniform_grid(width, height, g)`
/// up to `1e-6` px.
pub fn detect_uniform_grid(points: &[Point2], width: usize, height: usize) -> Option<usize> {
    let g = (points.len() as f64).sqrt().round() as usize;
    if g < 2 || g * g != points.len() || g > width.min(height) {
        return None;
    }
    let matches = points.iter().enumerate().all(|(k, p)| {
        let (i, j) = (k / g, k % g);
        (p.x - grid_coord(j, width, g)).abs() <= 1e-6
            && (p.y - grid_coord(i, height, g)).abs() <= 1e-6
    });
    matches.then_some(g)
}

/// `n` lattice points drawn uniformly with a seeded ChaCha8 stream.
pub fn sample_random(
    width: usize,
    height: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<Point2>, TrackError> {
    if n == 0 {
        return Err(TrackError::ZeroCount);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let x = rng.random_range(0..width);
            let y = rng.random_range(0..height);
            Point2::new(x as f64, y as f64)
        })
        .collect())
}

/// A scored corner candidate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corner {
    pub point: Point2,
    pub score: f64,
}

/// Minimum eigenvalue of the 3×3-summed structure tensor built from Sobel
/// gradients, per pixel. Borders replicate the edge pixel.
pub fn shi_tomasi_scores(frame: &Frame) -> Vec<f64> {
    let (w, h) = (frame.width() as i64, frame.height() as i64);
    let px = |x: i64, y: i64| frame.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize);

    let n = (w * h) as usize;
    let mut ixx = vec![0.0; n];
    let mut iyy = vec![0.0; n];
    let mut ixy = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
            let gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
            let i = (y * w + x) as usize;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }

    (0..n)
        .into_par_iter()
        .map(|i| {
            let (x, y) = ((i as i64) % w, (i as i64) / w);
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let j = ((y + dy).clamp(0, h - 1) * w + (x + dx).clamp(0, w - 1)) as usize;
                    a += ixx[j];
                    b += ixy[j];
                    c += iyy[j];
                }
            }
            let half_trace = 0.5 * (a + c);
            let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            // clip rounding noise on flat regions
            (half_trace - disc).max(0.0)
        })
        .collect()
}

/// Shi–Tomasi corners with scores, best first.
///
/// Candidates scoring at least `quality × max_score` are visited in
/// descending score (row-major order on ties) and accepted greedily when
/// no accepted corner is closer than `min_distance`.
pub fn gftt_corners(
    frame: &Frame,
    n: usize,
    quality: f64,
    min_distance: f64,
) -> Result<Vec<Corner>, TrackError> {
    if n == 0 {
        return Err(TrackError::ZeroCount);
    }
    if !(quality > 0.0 && quality <= 1.0) {
        return Err(TrackError::Quality(quality));
    }
    if !(min_distance.is_finite() && min_distance >= 0.0) {
        return Err(TrackError::MinDistance(min_distance));
    }
    let scores = shi_tomasi_scores(frame);
    let max_score = scores.iter().copied().fold(0.0, f64::max);
    if max_score <= 0.0 {
        return Ok(Vec::new());
    }
    let threshold = quality * max_score;
    let mut candidates: Vec<usize> = (0..scores.len())
        .filter(|&i| scores[i] >= threshold)
        .collect();
    // stable: equal scores keep row-major order
    candidates.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let w = frame.width();
    let mut accepted: Vec<Corner> = Vec::with_capacity(n);
    for i in candidates {
        let p = Point2::new((i % w) as f64, (i / w) as f64);
        if accepted.iter().all(|c| c.point.distance(p) >= min_distance) {
            accepted.push(Corner {
                point: p,
                score: scores[i],
            });
            if accepted.len() == n {
                break;
            }
        }
    }
    Ok(accepted)
}

pub fn sample_gftt(
    frame: &Frame,
    n: usize,
    quality: f64,
    min_distance: f64,
) -> Result<Vec<Point2>, TrackError> {
    Ok(gftt_corners(frame, n, quality, min_distance)?
        .into_iter()
        .map(|c| c.point)
        .collect())
}
