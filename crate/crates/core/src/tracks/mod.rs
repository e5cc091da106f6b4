//! Point tracks over a frame sequence and query-point sampling.

mod io;
mod sampling;

pub use io::{load_tracks, save_tracks, tracks_from_json, tracks_to_json, TRACK_SCHEMA_VERSION};
pub use sampling::{
    detect_uniform_grid, gftt_corners, sample, sample_gftt, sample_random, sample_uniform_grid,
    shi_tomasi_scores, Corner, SamplingSpec, SamplingStrategy,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum TrackError {
    #[error("grid size must be at least 2, got {0}")]
    GridTooSmall(usize),
    #[error("grid size {g} exceeds image side {side}")]
    GridTooLarge { g: usize, side: usize },
    #[error("point count must be at least 1")]
    ZeroCount,
    #[error("gftt quality must lie in (0, 1], got {0}")]
    Quality(f64),
    #[error("gftt min_distance must be finite and non-negative, got {0}")]
    MinDistance(f64),
    #[error("unsupported schema_version {0}, expected 1")]
    SchemaVersion(u32),
    #[error("positions: expected T×N×2 = {t}×{n}×2 values; {detail}")]
    PositionsShape { t: usize, n: usize, detail: String },
    #[error("visibility: expected T×N = {t}×{n} flags; {detail}")]
    VisibilityShape { t: usize, n: usize, detail: String },
    #[error("non-finite position marked visible at frame {frame}, point {point}")]
    NonFiniteVisible { frame: usize, point: usize },
    #[error("frame-0 position of point {point} is not finite; tracks must start at their queries")]
    NonFiniteQuery { point: usize },
    #[error("track set needs at least one frame and one point (T={t}, N={n})")]
    Empty { t: usize, n: usize },
    #[error("frame {frame} out of range for {num_frames} frames")]
    FrameOutOfRange { frame: usize, num_frames: usize },
    #[error("outlier index {index} out of range for {num_points} points")]
    OutlierIndex { index: usize, num_points: usize },
    #[error("malformed track file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Continuous pixel-center coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Positions of `N` query points over `T` frames, frame-major.
///
/// Frame 0 holds the queries themselves. Invisible entries may be NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackSet {
    pub source_tag: String,
    pub width: usize,
    pub height: usize,
    num_points: usize,
    num_frames: usize,
    positions: Vec<Point2>,
    visibility: Vec<bool>,
    /// Indices of tracks deliberately corrupted by a perturbation step.
    pub outliers: Option<Vec<usize>>,
}

impl TrackSet {
    pub fn new(
        source_tag: impl Into<String>,
        width: usize,
        height: usize,
        num_frames: usize,
        num_points: usize,
        positions: Vec<Point2>,
        visibility: Vec<bool>,
    ) -> Result<Self, TrackError> {
        let (t, n) = (num_frames, num_points);
        if t == 0 || n == 0 {
            return Err(TrackError::Empty { t, n });
        }
        if positions.len() != t * n {
            return Err(TrackError::PositionsShape {
                t,
                n,
                detail: format!("got {} points in total", positions.len()),
            });
        }
        if visibility.len() != t * n {
            return Err(TrackError::VisibilityShape {
                t,
                n,
                detail: format!("got {} flags in total", visibility.len()),
            });
        }
        for (i, (p, &vis)) in positions.iter().zip(&visibility).enumerate() {
            if i < n && !p.is_finite() {
                return Err(TrackError::NonFiniteQuery { point: i });
            }
            if vis && !p.is_finite() {
                return Err(TrackError::NonFiniteVisible {
                    frame: i / n,
                    point: i % n,
                });
            }
        }
        Ok(Self {
            source_tag: source_tag.into(),
            width,
            height,
            num_points,
            num_frames,
            positions,
            visibility,
            outliers: None,
        })
    }

    /// Tracks that never move and are always visible.
    pub fn stationary(
        source_tag: impl Into<String>,
        width: usize,
        height: usize,
        queries: &[Point2],
        num_frames: usize,
    ) -> Result<Self, TrackError> {
        let positions = queries
            .iter()
            .copied()
            .cycle()
            .take(queries.len() * num_frames)
            .collect();
        let n = queries.len();
        Self::new(
            source_tag,
            width,
            height,
            num_frames,
            n,
            positions,
            vec![true; n * num_frames],
        )
    }

    pub fn with_outliers(mut self, outliers: Vec<usize>) -> Result<Self, TrackError> {
        if let Some(&index) = outliers.iter().find(|&&i| i >= self.num_points) {
            return Err(TrackError::OutlierIndex {
                index,
                num_points: self.num_points,
            });
        }
        self.outliers = Some(outliers);
        Ok(self)
    }

    #[inline]
    pub fn num_points(&self) -> usize {
        self.num_points
    }

    #[inline]
    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn positions(&self) -> &[Point2] {
        &self.positions
    }

    pub fn visibility(&self) -> &[bool] {
        &self.visibility
    }

    /// Positions of every point at frame `t`.
    pub fn frame(&self, t: usize) -> &[Point2] {
        &self.positions[t * self.num_points..(t + 1) * self.num_points]
    }

    pub fn frame_visibility(&self, t: usize) -> &[bool] {
        &self.visibility[t * self.num_points..(t + 1) * self.num_points]
    }

    pub fn queries(&self) -> &[Point2] {
        self.frame(0)
    }

    #[inline]
    pub fn position(&self, t: usize, i: usize) -> Point2 {
        self.positions[t * self.num_points + i]
    }

    #[inline]
    pub fn is_visible(&self, t: usize, i: usize) -> bool {
        self.visibility[t * self.num_points + i]
    }

    pub fn check_frame(&self, t: usize) -> Result<(), TrackError> {
        if t >= self.num_frames {
            return Err(TrackError::FrameOutOfRange {
                frame: t,
                num_frames: self.num_frames,
            });
        }
        Ok(())
    }

    /// Keeps the listed tracks, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<TrackSet, TrackError> {
        let n = indices.len();
        let mut positions = Vec::with_capacity(n * self.num_frames);
        let mut visibility = Vec::with_capacity(n * self.num_frames);
        for t in 0..self.num_frames {
            for &i in indices {
                if i >= self.num_points {
                    return Err(TrackError::OutlierIndex {
                        index: i,
                        num_points: self.num_points,
                    });
                }
                positions.push(self.position(t, i));
                visibility.push(self.is_visible(t, i));
            }
        }
        TrackSet::new(
            self.source_tag.clone(),
            self.width,
            self.height,
            self.num_frames,
            n,
            positions,
            visibility,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_validates_shapes() {
        let q = [Point2::new(1.0, 2.0), Point2::new(3.0, 4.0)];
        assert!(matches!(
            TrackSet::new("t", 8, 8, 2, 2, q.to_vec(), vec![true; 4]),
            Err(TrackError::PositionsShape { t: 2, n: 2, .. })
        ));
        let mut pos = [q, q].concat();
        pos[3] = Point2::new(f64::NAN, 0.0);
        assert!(matches!(
            TrackSet::new("t", 8, 8, 2, 2, pos.clone(), vec![true; 4]),
            Err(TrackError::NonFiniteVisible { frame: 1, point: 1 })
        ));
        let ok = TrackSet::new("t", 8, 8, 2, 2, pos, vec![true, true, true, false]).unwrap();
        assert_eq!(ok.queries(), &q);
    }

    #[test]
    fn select_reorders_tracks() {
        let q = [Point2::new(0.0, 0.0), Point2::new(5.0, 5.0), Point2::new(7.0, 1.0)];
        let ts = TrackSet::stationary("s", 8, 8, &q, 3).unwrap();
        let sub = ts.select(&[2, 0]).unwrap();
        assert_eq!(sub.num_points(), 2);
        assert_eq!(sub.position(2, 0), q[2]);
        assert!(ts.clone().with_outliers(vec![3]).is_err());
    }
}
