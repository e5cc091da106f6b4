//! Dense displacement fields from sparse point tracks.
//!
//! The field maps reference-frame coordinates to frame-`t` coordinates, so a
//! track starting at query `q` and sitting at `p` in frame `t` contributes the
//! sample `φ(q) = p`. Warping frame `t` with that field pulls it back onto the
//! reference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::FieldError;
use crate::imgcore::DisplacementField;
use crate::tracks::{detect_uniform_grid, Point2, TrackSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReconMethod {
    /// Grid-bilinear when the sites form a uniform grid, IDW otherwise.
    #[default]
    Auto,
    GridBilinear,
    Idw,
}

/// Behavior outside the region covered by the sites.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Extrapolation {
    /// Evaluate at the nearest point of the sites' bounding box.
    #[default]
    ClampToHull,
    /// Copy the displacement of the nearest site.
    NearestPoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldRecon {
    pub method: ReconMethod,
    pub idw_power: f64,
    pub idw_k: usize,
    pub extrapolation: Extrapolation,
}

impl Default for FieldRecon {
    fn default() -> Self {
        Self {
            method: ReconMethod::Auto,
            idw_power: 2.0,
            idw_k: 8,
            extrapolation: Extrapolation::ClampToHull,
        }
    }
}

impl FieldRecon {
    pub fn idw() -> Self {
        Self {
            method: ReconMethod::Idw,
            ..Self::default()
        }
    }

    pub fn grid_bilinear() -> Self {
        Self {
            method: ReconMethod::GridBilinear,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if !(self.idw_power.is_finite() && self.idw_power > 0.0) {
            return Err(FieldError::Recon(format!(
                "idw_power must be positive, got {}",
                self.idw_power
            )));
        }
        if self.idw_k == 0 {
            return Err(FieldError::Recon("idw_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Field for frame `t` relative to the query frame (frame 0).
pub fn tracks_to_displacement(
    tracks: &TrackSet,
    t: usize,
    recon: &FieldRecon,
    width: usize,
    height: usize,
) -> Result<DisplacementField, FieldError> {
    tracks_to_displacement_between(tracks, 0, t, recon, width, height)
}

/// Field mapping frame-`from` coordinates to frame-`to` coordinates, using
/// track positions at `from` as interpolation sites.
pub fn tracks_to_displacement_between(
    tracks: &TrackSet,
    from: usize,
    to: usize,
    recon: &FieldRecon,
    width: usize,
    height: usize,
) -> Result<DisplacementField, FieldError> {
    recon.validate()?;
    tracks.check_frame(from)?;
    tracks.check_frame(to)?;
    let sites = tracks.frame(from);
    let targets = tracks.frame(to);
    // frame-0 positions are the queries themselves and always usable as sites
    let visible: Vec<bool> = (0..tracks.num_points())
        .map(|i| tracks.is_visible(to, i) && (from == 0 || tracks.is_visible(from, i)))
        .collect();

    let grid = detect_uniform_grid(sites, tracks.width, tracks.height);
    let use_grid = match (recon.method, grid) {
        (ReconMethod::GridBilinear, None) => return Err(FieldError::NotAGrid),
        (ReconMethod::GridBilinear, Some(_)) | (ReconMethod::Auto, Some(_)) => true,
        _ => false,
    };

    if use_grid {
        let g = grid.expect("grid detected");
        let nodes = GridNodes::new(tracks, g, sites, targets, &visible, to)?;
        Ok(nodes.render(width, height))
    } else {
        let (pts, disp): (Vec<Point2>, Vec<(f64, f64)>) = sites
            .iter()
            .zip(targets)
            .zip(&visible)
            .filter(|(_, &v)| v)
            .map(|((s, p), _)| (*s, (p.x - s.x, p.y - s.y)))
            .unzip();
        if pts.len() < 3 {
            return Err(FieldError::TooFewVisible {
                frame: to,
                got: pts.len(),
                needed: 3,
            });
        }
        Ok(render_idw(&pts, &disp, recon, width, height))
    }
}

/// Displacements at the nodes of a `g × g` corner-inclusive grid.
struct GridNodes {
    g: usize,
    spacing_x: f64,
    spacing_y: f64,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl GridNodes {
    fn new(
        tracks: &TrackSet,
        g: usize,
        sites: &[Point2],
        targets: &[Point2],
        visible: &[bool],
        frame: usize,
    ) -> Result<Self, FieldError> {
        let spacing_x = (tracks.width - 1) as f64 / (g - 1) as f64;
        let spacing_y = (tracks.height - 1) as f64 / (g - 1) as f64;
        let n = g * g;
        let got = visible.iter().filter(|&&v| v).count();
        if got == 0 {
            return Err(FieldError::TooFewVisible {
                frame,
                got,
                needed: 1,
            });
        }
        let mut dx = vec![0.0; n];
        let mut dy = vec![0.0; n];
        for k in 0..n {
            if visible[k] {
                dx[k] = targets[k].x - sites[k].x;
                dy[k] = targets[k].y - sites[k].y;
            }
        }
        for k in (0..n).filter(|&k| !visible[k]) {
            let (i, j) = ((k / g) as i64, (k % g) as i64);
            let neighbours = [(0, -1), (0, 1), (-1, 0), (1, 0)]
                .into_iter()
                .filter_map(|(di, dj)| {
                    let (ni, nj) = (i + di, j + dj);
                    let inside = ni >= 0 && nj >= 0 && ni < g as i64 && nj < g as i64;
                    let m = (ni * g as i64 + nj) as usize;
                    (inside && visible[m]).then_some(m)
                });
            let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
            let mut any = false;
            for m in neighbours {
                let d = sites[k].distance(sites[m]);
                let w = 1.0 / (d * d);
                sw += w;
                sx += w * (targets[m].x - sites[m].x);
                sy += w * (targets[m].y - sites[m].y);
                any = true;
            }
            if !any {
                for m in (0..n).filter(|&m| visible[m]) {
                    let d = sites[k].distance(sites[m]);
                    let w = 1.0 / (d * d);
                    sw += w;
                    sx += w * (targets[m].x - sites[m].x);
                    sy += w * (targets[m].y - sites[m].y);
                }
            }
            dx[k] = sx / sw;
            dy[k] = sy / sw;
        }
        Ok(Self {
            g,
            spacing_x,
            spacing_y,
            dx,
            dy,
        })
    }

    /// Bilinear blend of the four surrounding nodes; outside the grid the
    /// lookup coordinate is clamped onto it.
    fn eval(&self, x: f64, y: f64) -> (f64, f64) {
        let g = self.g;
        let last = (g - 1) as f64;
        let gx = (x / self.spacing_x).clamp(0.0, last);
        let gy = (y / self.spacing_y).clamp(0.0, last);
        let j0 = (gx.floor() as usize).min(g - 2);
        let i0 = (gy.floor() as usize).min(g - 2);
        let fx = gx - j0 as f64;
        let fy = gy - i0 as f64;
        let k00 = i0 * g + j0;
        let (k10, k01, k11) = (k00 + 1, k00 + g, k00 + g + 1);
        let blend = |v: &[f64]| {
            (1.0 - fy) * ((1.0 - fx) * v[k00] + fx * v[k10]) + fy * ((1.0 - fx) * v[k01] + fx * v[k11])
        };
        (blend(&self.dx), blend(&self.dy))
    }

    fn render(&self, width: usize, height: usize) -> DisplacementField {
        let (map_x, map_y) = (0..width * height)
            .into_par_iter()
            .map(|i| {
                let (x, y) = ((i % width) as f64, (i / width) as f64);
                let (dx, dy) = self.eval(x, y);
                (x + dx, y + dy)
            })
            .unzip();
        DisplacementField::from_parts_unchecked(width, height, map_x, map_y)
    }
}

/// Uniform bucket grid over scattered sites for k-nearest queries.
struct SiteIndex<'a> {
    sites: &'a [Point2],
    min_x: f64,
    min_y: f64,
    cell: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<usize>>,
}

impl<'a> SiteIndex<'a> {
    fn new(sites: &'a [Point2]) -> Self {
        let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
        let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in sites {
            min_x = min_x.min(p.x);
            min_y = min_y.min(p.y);
            max_x = max_x.max(p.x);
            max_y = max_y.max(p.y);
        }
        let (ext_x, ext_y) = (max_x - min_x, max_y - min_y);
        let area = ext_x * ext_y;
        // roughly two sites per bucket
        let cell = if area > 0.0 {
            (2.0 * area / sites.len() as f64).sqrt()
        } else {
            ext_x.max(ext_y) / sites.len() as f64
        }
        .max(1e-6);
        let cols = ((ext_x / cell).floor() as usize + 1).max(1);
        let rows = ((ext_y / cell).floor() as usize + 1).max(1);
        let mut buckets = vec![Vec::new(); cols * rows];
        for (i, p) in sites.iter().enumerate() {
            let (c, r) = (
                (((p.x - min_x) / cell) as usize).min(cols - 1),
                (((p.y - min_y) / cell) as usize).min(rows - 1),
            );
            buckets[r * cols + c].push(i);
        }
        Self {
            sites,
            min_x,
            min_y,
            cell,
            cols,
            rows,
            buckets,
        }
    }

    /// Fills `out` with the `k` nearest `(distance², index)` pairs, ascending,
    /// ties broken by index.
    fn knn(&self, p: Point2, k: usize, out: &mut Vec<(f64, usize)>) {
        out.clear();
        let k = k.min(self.sites.len());
        let cx = ((p.x - self.min_x) / self.cell).floor().clamp(0.0, (self.cols - 1) as f64) as i64;
        let cy = ((p.y - self.min_y) / self.cell).floor().clamp(0.0, (self.rows - 1) as f64) as i64;
        let max_ring = self.cols.max(self.rows) as i64;
        for ring in 0..=max_ring {
            for r in (cy - ring)..=(cy + ring) {
                if r < 0 || r >= self.rows as i64 {
                    continue;
                }
                let on_edge_row = r == cy - ring || r == cy + ring;
                let step = if on_edge_row { 1 } else { (2 * ring).max(1) as usize };
                let mut c = cx - ring;
                while c <= cx + ring {
                    if c >= 0 && c < self.cols as i64 {
                        for &i in &self.buckets[r as usize * self.cols + c as usize] {
                            let s = self.sites[i];
                            let d2 = (s.x - p.x).powi(2) + (s.y - p.y).powi(2);
                            out.push((d2, i));
                        }
                    }
                    c += step as i64;
                }
            }
            if out.len() >= k {
                out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                // anything in later rings is at least `ring * cell` away
                let bound = ring as f64 * self.cell;
                if out[k - 1].0 <= bound * bound {
                    break;
                }
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.truncate(k);
    }
}

fn render_idw(
    sites: &[Point2],
    disp: &[(f64, f64)],
    recon: &FieldRecon,
    width: usize,
    height: usize,
) -> DisplacementField {
    let index = SiteIndex::new(sites);
    let (min_x, max_x) = sites
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.x), b.max(p.x)));
    let (min_y, max_y) = sites
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.y), b.max(p.y)));
    let half_power = 0.5 * recon.idw_power;

    let (map_x, map_y) = (0..width * height)
        .into_par_iter()
        .map_init(Vec::new, |scratch, i| {
            let (x, y) = ((i % width) as f64, (i / width) as f64);
            let inside = x >= min_x && x <= max_x && y >= min_y && y <= max_y;
            let (dx, dy) = if !inside && recon.extrapolation == Extrapolation::NearestPoint {
                index.knn(Point2::new(x, y), 1, scratch);
                disp[scratch[0].1]
            } else {
                let q = Point2::new(x.clamp(min_x, max_x), y.clamp(min_y, max_y));
                index.knn(q, recon.idw_k, scratch);
                idw_blend(scratch, disp, half_power)
            };
            (x + dx, y + dy)
        })
        .unzip();
    DisplacementField::from_parts_unchecked(width, height, map_x, map_y)
}

fn idw_blend(neigh: &[(f64, usize)], disp: &[(f64, f64)], half_power: f64) -> (f64, f64) {
    let (d2, nearest) = neigh[0];
    if d2 <= 1e-24 {
        return disp[nearest];
    }
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for &(d2, i) in neigh {
        let w = d2.powf(-half_power);
        sw += w;
        sx += w * disp[i].0;
        sy += w * disp[i].1;
    }
    (sx / sw, sy / sw)
}
