//! JSON track file (schema version 1).
//!
//! ```json
//! { "schema_version": 1, "source_tag": "...", "width": 256, "height": 256,
//!   "num_points": N, "num_frames": T,
//!   "positions": [T][N][2],   // (x, y); null for an unknown coordinate
//!   "visibility": [T][N] }
//! ```
//!
//! An optional `"outliers": [indices]` array is written when present.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Point2, TrackError, TrackSet};

pub const TRACK_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackFile {
    schema_version: u32,
    source_tag: String,
    width: usize,
    height: usize,
    num_points: usize,
    num_frames: usize,
    positions: Vec<Vec<[Option<f64>; 2]>>,
    visibility: Vec<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    outliers: Option<Vec<usize>>,
}

fn encode(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn decode(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

pub fn tracks_to_json(tracks: &TrackSet) -> Result<String, TrackError> {
    let n = tracks.num_points();
    let file = TrackFile {
        schema_version: TRACK_SCHEMA_VERSION,
        source_tag: tracks.source_tag.clone(),
        width: tracks.width,
        height: tracks.height,
        num_points: n,
        num_frames: tracks.num_frames(),
        positions: tracks
            .positions()
            .chunks(n)
            .map(|row| row.iter().map(|p| [encode(p.x), encode(p.y)]).collect())
            .collect(),
        visibility: tracks.visibility().chunks(n).map(<[bool]>::to_vec).collect(),
        outliers: tracks.outliers.clone(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn tracks_from_json(text: &str) -> Result<TrackSet, TrackError> {
    let file: TrackFile = serde_json::from_str(text)?;
    if file.schema_version != TRACK_SCHEMA_VERSION {
        return Err(TrackError::SchemaVersion(file.schema_version));
    }
    let (t, n) = (file.num_frames, file.num_points);
    if file.positions.len() != t {
        return Err(TrackError::PositionsShape {
            t,
            n,
            detail: format!("file has {} frames", file.positions.len()),
        });
    }
    if let Some((frame, row)) = file.positions.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(TrackError::PositionsShape {
            t,
            n,
            detail: format!("frame {frame} has {} points", row.len()),
        });
    }
    if file.visibility.len() != t {
        return Err(TrackError::VisibilityShape {
            t,
            n,
            detail: format!("file has {} frames", file.visibility.len()),
        });
    }
    if let Some((frame, row)) = file.visibility.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(TrackError::VisibilityShape {
            t,
            n,
            detail: format!("frame {frame} has {} flags", row.len()),
        });
    }
    let positions = file
        .positions
        .into_iter()
        .flatten()
        .map(|[x, y]| Point2::new(decode(x), decode(y)))
        .collect();
    let visibility = file.visibility.into_iter().flatten().collect();
    let tracks = TrackSet::new(
        file.source_tag,
        file.width,
        file.height,
        t,
        n,
        positions,
        visibility,
    )?;
    match file.outliers {
        Some(o) => tracks.with_outliers(o),
        None => Ok(tracks),
    }
}

pub fn load_tracks(path: &Path) -> Result<TrackSet, TrackError> {
    let text = fs::read_to_string(path).map_err(|source| TrackError::Io {
        path: path.display().to_string(),
        source,
    })?;
    tracks_from_json(&text)
}

pub fn save_tracks(tracks: &TrackSet, path: &Path) -> Result<(), TrackError> {
    fs::write(path, tracks_to_json(tracks)?).map_err(|source| TrackError::Io {
        path: path.display().to_string(),
        source,
    })
}
