//! Image similarity (MSE, SSIM), landmark error (MAPE), and per-video reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgcore::{Frame, FrameSequence, ImageError};
use crate::tracks::Point2;

#[derive(Error, Debug)]
pub enum MetricsError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("image {width}x{height} is smaller than the {window}x{window} SSIM window")]
    TooSmall {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("invalid SSIM parameters: {0}")]
    Params(String),
    #[error("reference index {index} out of range for {len} frames")]
    ReferenceIndex { index: usize, len: usize },
    #[error("landmark mismatch: {0}")]
    Landmarks(String),
    #[error("normalization length must be positive, got {0}")]
    Norm(f64),
    #[error("malformed landmark file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Mean squared intensity difference.
pub fn mse(a: &Frame, b: &Frame) -> Result<f64, MetricsError> {
    a.same_dims(b)?;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.pixels().len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    pub sigma: f64,
    pub window: usize,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
            sigma: 1.5,
            window: 11,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let taps: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / s).collect()
    }

    fn validate(&self) -> Result<(), MetricsError> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(MetricsError::Params(format!(
                "window must be odd and positive, got {}",
                self.window
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(MetricsError::Params(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Separable valid-mode filtering of a row-major buffer.
fn filter_valid(buf: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &buf[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k
                .iter()
                .enumerate()
                .map(|(i, a)| a * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Per-window SSIM map over every position where the window fits.
pub fn ssim_map(a: &Frame, b: &Frame, params: &SsimParams) -> Result<Vec<f64>, MetricsError> {
    a.same_dims(b)?;
    params.validate()?;
    let (w, h) = (a.width(), a.height());
    if w < params.window || h < params.window {
        return Err(MetricsError::TooSmall {
            width: w,
            height: h,
            window: params.window,
        });
    }
    let k = params.kernel();
    let pa = a.pixels();
    let pb = b.pixels();
    let aa: Vec<f64> = pa.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = pb.iter().map(|x| x * x).collect();
    let ab: Vec<f64> = pa.iter().zip(pb).map(|(x, y)| x * y).collect();

    let mu_a = filter_valid(pa, w, h, &k);
    let mu_b = filter_valid(pb, w, h, &k);
    let e_aa = filter_valid(&aa, w, h, &k);
    let e_bb = filter_valid(&bb, w, h, &k);
    let e_ab = filter_valid(&ab, w, h, &k);

    let (c1, c2) = (params.c1(), params.c2());
    Ok((0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2))
        })
        .collect())
}

/// Mean SSIM over all valid window positions.
pub fn ssim(a: &Frame, b: &Frame, params: &SsimParams) -> Result<f64, MetricsError> {
    let map = ssim_map(a, b, params)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LandmarkKind {
    #[default]
    Reference,
    Predicted,
}

/// Named landmark trajectories, frame-major `T × L`.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    names: Vec<String>,
    num_frames: usize,
    positions: Vec<Point2>,
    pub kind: LandmarkKind,
}

#[derive(Serialize, Deserialize)]
struct LandmarkFile {
    kind: LandmarkKind,
    names: Vec<String>,
    positions: Vec<Vec<[f64; 2]>>,
}

impl LandmarkSet {
    pub fn new(
        names: Vec<String>,
        num_frames: usize,
        positions: Vec<Point2>,
        kind: LandmarkKind,
    ) -> Result<Self, MetricsError> {
        if names.is_empty() {
            return Err(MetricsError::Landmarks("at least one landmark required".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(MetricsError::Landmarks(format!("duplicate name '{n}'")));
            }
        }
        if positions.len() != num_frames * names.len() {
            return Err(MetricsError::Landmarks(format!(
                "expected {}×{} positions, got {}",
                num_frames,
                names.len(),
                positions.len()
            )));
        }
        if let Some(i) = positions.iter().position(|p| !p.is_finite()) {
            return Err(MetricsError::Landmarks(format!(
                "non-finite position for '{}' at frame {}",
                names[i % names.len()],
                i / names.len()
            )));
        }
        Ok(Self {
            names,
            num_frames,
            positions,
            kind,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn position(&self, t: usize, l: usize) -> Point2 {
        self.positions[t * self.names.len() + l]
    }

    pub fn to_json(&self) -> Result<String, MetricsError> {
        let l = self.names.len();
        let file = LandmarkFile {
            kind: self.kind,
            names: self.names.clone(),
            positions: self
                .positions
                .chunks(l)
                .map(|row| row.iter().map(|p| [p.x, p.y]).collect())
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, MetricsError> {
        let file: LandmarkFile = serde_json::from_str(text)?;
        let l = file.names.len();
        if let Some(t) = file.positions.iter().position(|r| r.len() != l) {
            return Err(MetricsError::Landmarks(format!(
                "frame {t} has {} positions, expected {l}",
                file.positions[t].len()
            )));
        }
        let t = file.positions.len();
        let positions = file
            .positions
            .into_iter()
            .flatten()
            .map(|[x, y]| Point2::new(x, y))
            .collect();
        Self::new(file.names, t, positions, file.kind)
    }

    pub fn save(&self, path: &Path) -> Result<(), MetricsError> {
        fs::write(path, self.to_json()?).map_err(|source| MetricsError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        let text = fs::read_to_string(path).map_err(|source| MetricsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// Per landmark: mean Euclidean error over frames, divided by `norm`, in percent.
pub fn mape(
    predicted: &LandmarkSet,
    reference: &LandmarkSet,
    norm: f64,
) -> Result<Vec<(String, f64)>, MetricsError> {
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(MetricsError::Norm(norm));
    }
    if predicted.names != reference.names {
        return Err(MetricsError::Landmarks(format!(
            "names differ: {:?} vs {:?}",
            predicted.names, reference.names
        )));
    }
    if predicted.num_frames != reference.num_frames {
        return Err(MetricsError::Landmarks(format!(
            "frame counts differ: {} vs {}",
            predicted.num_frames, reference.num_frames
        )));
    }
    let t = predicted.num_frames.max(1) as f64;
    Ok(predicted
        .names
        .iter()
        .enumerate()
        .map(|(l, name)| {
            let total: f64 = (0..predicted.num_frames)
                .map(|f| predicted.position(f, l).distance(reference.position(f, l)))
                .sum();
            (name.clone(), 100.0 * total / t / norm)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame_index: usize,
    pub mse: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub per_frame: Vec<FrameMetrics>,
    pub mse_mean: f64,
    pub mse_sd: f64,
    pub ssim_mean: f64,
    pub ssim_sd: f64,
    pub mape: Option<Vec<(String, f64)>>,
}

#[derive(Serialize)]
struct ReportSummary<'a> {
    mse_mean: f64,
    mse_sd: f64,
    ssim_mean: f64,
    ssim_sd: f64,
    mape: serde_json::Map<String, serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
}

impl MetricsReport {
    pub fn from_frames(per_frame: Vec<FrameMetrics>) -> Self {
        let (mse_mean, mse_sd) = mean_sd(per_frame.iter().map(|m| m.mse));
        let (ssim_mean, ssim_sd) = mean_sd(per_frame.iter().map(|m| m.ssim));
        Self {
            per_frame,
            mse_mean,
            mse_sd,
            ssim_mean,
            ssim_sd,
            mape: None,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame_index,mse,ssim\n");
        for m in &self.per_frame {
            let _ = writeln!(s, "{},{},{}", m.frame_index, m.mse, m.ssim);
        }
        s
    }

    pub fn summary_json(&self, label: Option<&str>) -> String {
        let mape = self
            .mape
            .iter()
            .flatten()
            .map(|(k, v)| (k.clone(), serde_json::json!(v)))
            .collect();
        let summary = ReportSummary {
            mse_mean: self.mse_mean,
            mse_sd: self.mse_sd,
            ssim_mean: self.ssim_mean,
            ssim_sd: self.ssim_sd,
            mape,
            label,
        };
        serde_json::to_string_pretty(&summary).expect("summary is always serializable")
    }
}

/// Population mean and standard deviation.
pub fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsOptions {
    pub reference_index: usize,
    /// Fraction of each side kept around the center before scoring (1.0 = whole frame).
    pub region_keep: f64,
    pub ssim: SsimParams,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self {
            reference_index: 0,
            region_keep: 1.0,
            ssim: SsimParams::default(),
        }
    }
}

/// Every frame scored against `reference_index` over the whole frame.
pub fn evaluate_sequence(
    seq: &FrameSequence,
    reference_index: usize,
) -> Result<MetricsReport, MetricsError> {
    evaluate_sequence_with(
        seq,
        &MetricsOptions {
            reference_index,
            ..MetricsOptions::default()
        },
    )
}

pub fn evaluate_sequence_with(
    seq: &FrameSequence,
    opts: &MetricsOptions,
) -> Result<MetricsReport, MetricsError> {
    let frames = seq.frames();
    let reference = frames
        .get(opts.reference_index)
        .ok_or(MetricsError::ReferenceIndex {
            index: opts.reference_index,
            len: frames.len(),
        })?;
    let region = |f: &Frame| -> Result<Frame, MetricsError> {
        if opts.region_keep >= 1.0 {
            Ok(f.clone())
        } else {
            Ok(f.central_region(opts.region_keep)?)
        }
    };
    let reference = region(reference)?;
    let per_frame = frames
        .par_iter()
        .map(|f| {
            let f_region = region(f)?;
            Ok(FrameMetrics {
                frame_index: f.frame_index(),
                mse: mse(&f_region, &reference)?,
                ssim: ssim(&f_region, &reference, &opts.ssim)?,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok(MetricsReport::from_frames(per_frame))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn noise(w: usize, h: usize, seed: u64) -> Frame {
        // 64-bit LCG, high bits
        let mut s = seed;
        let px = (0..w * h)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) % 256) as f64
            })
            .collect();
        Frame::new(w, h, px).unwrap()
    }

    #[test]
    fn mse_basics() {
        let a = Frame::constant(5, 4, 20.0).unwrap();
        let b = Frame::constant(5, 4, 30.0).unwrap();
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &b).unwrap(), 100.0);
        assert!(mse(&a, &Frame::constant(4, 4, 0.0).unwrap()).is_err());
    }

    #[test]
    fn ssim_identity_is_exactly_one() {
        for seed in 0..5 {
            let a = noise(24, 19, seed);
            assert_eq!(ssim(&a, &a, &SsimParams::default()).unwrap(), 1.0);
        }
    }

    #[test]
    fn ssim_constant_pair_closed_form() {
        let a = Frame::constant(16, 16, 100.0).unwrap();
        let b = Frame::constant(16, 16, 110.0).unwrap();
        let p = SsimParams::default();
        let c1 = p.c1();
        let expect = (2.0 * 100.0 * 110.0 + c1) / (100.0f64.powi(2) + 110.0f64.powi(2) + c1);
        let got = ssim(&a, &b, &p).unwrap();
        assert!((got - expect).abs() < 1e-12);
        assert!((got - 0.99548).abs() < 5e-5, "{got}");
    }

    #[test]
    fn ssim_too_small() {
        let a = Frame::constant(10, 30, 1.0).unwrap();
        assert!(matches!(
            ssim(&a, &a, &SsimParams::default()),
            Err(MetricsError::TooSmall { window: 11, .. })
        ));
        let bad = SsimParams {
            window: 4,
            ..SsimParams::default()
        };
        assert!(matches!(ssim(&a, &a, &bad), Err(MetricsError::Params(_))));
    }

    #[test]
    fn kernel_is_normalized() {
        let k = SsimParams::default().kernel();
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k[0], k[10]);
    }

    fn lm(names: &[&str], pos: Vec<Point2>, t: usize) -> LandmarkSet {
        LandmarkSet::new(
            names.iter().map(|s| s.to_string()).collect(),
            t,
            pos,
            LandmarkKind::Reference,
        )
        .unwrap()
    }

    #[test]
    fn mape_basics() {
        let r = lm(
            &["vertebra-right", "mandible-left"],
            [Point2::new(10.0, 10.0), Point2::new(50.0, 60.0)].repeat(3),
            3,
        );
        let zero = mape(&r, &r, 256.0).unwrap();
        assert!(zero.iter().all(|(_, v)| *v == 0.0));

        let shifted = lm(
            &["vertebra-right", "mandible-left"],
            [Point2::new(12.56, 10.0), Point2::new(50.0, 62.56)].repeat(3),
            3,
        );
        for (_, v) in mape(&shifted, &r, 256.0).unwrap() {
            assert!((v - 1.0).abs() < 1e-9);
        }
        for (_, v) in mape(&shifted, &r, 512.0).unwrap() {
            assert!((v - 0.5).abs() < 1e-9);
        }
        assert!(matches!(mape(&shifted, &r, 0.0), Err(MetricsError::Norm(_))));
        let other = lm(&["a", "b"], vec![Point2::default(); 6], 3);
        assert!(mape(&other, &r, 256.0).is_err());
        let short = lm(&["vertebra-right", "mandible-left"], vec![Point2::default(); 4], 2);
        assert!(mape(&short, &r, 256.0).is_err());
    }

    #[test]
    fn landmark_validation_and_json() {
        assert!(LandmarkSet::new(vec![], 1, vec![], LandmarkKind::Reference).is_err());
        assert!(LandmarkSet::new(
            vec!["a".into(), "a".into()],
            1,
            vec![Point2::default(); 2],
            LandmarkKind::Reference
        )
        .is_err());
        let s = lm(&["a", "b"], vec![Point2::new(1.5, 2.0), Point2::new(3.0, 4.25)], 1);
        assert_eq!(LandmarkSet::from_json(&s.to_json().unwrap()).unwrap(), s);
    }

    #[test]
    fn sequence_report() {
        let a = Frame::constant(16, 16, 50.0).unwrap();
        let same = FrameSequence::from_frames(vec![a.clone(); 4], 30.0).unwrap();
        let r = evaluate_sequence(&same, 0).unwrap();
        assert_eq!((r.ssim_mean, r.ssim_sd, r.mse_mean, r.mse_sd), (1.0, 0.0, 0.0, 0.0));

        let b = Frame::constant(16, 16, 60.0).unwrap();
        let two = FrameSequence::from_frames(vec![a, b], 30.0).unwrap();
        let r = evaluate_sequence(&two, 0).unwrap();
        assert_eq!(r.mse_mean, 50.0);
        assert_eq!(r.mse_sd, 50.0);
        assert!(evaluate_sequence(&two, 2).is_err());
        let csv = r.to_csv();
        assert!(csv.starts_with("frame_index,mse,ssim\n0,0,1\n1,100,"));
        let json: serde_json::Value = serde_json::from_str(&r.summary_json(None)).unwrap();
        assert_eq!(json["mse_mean"], 50.0);
        assert!(json["mape"].as_object().unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric(seed_a in any::<u64>(), seed_b in any::<u64>()) {
            let a = noise(20, 17, seed_a);
            let b = noise(20, 17, seed_b);
            let p = SsimParams::default();
            prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
            let (s1, s2) = (ssim(&a, &b, &p).unwrap(), ssim(&b, &a, &p).unwrap());
            prop_assert!((s1 - s2).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s1));
        }

        #[test]
        fn mse_invariant_under_shared_permutation(seed in any::<u64>(), shift in 1usize..200) {
            let a = noise(16, 16, seed);
            let b = noise(16, 16, seed ^ 0xdead_beef);
            let perm = |f: &Frame| {
                let n = f.pixels().len();
                let px = (0..n).map(|i| f.pixels()[(i * 7 + shift) % n]).collect();
                Frame::new(16, 16, px).unwrap()
            };
            let d = (mse(&a, &b).unwrap() - mse(&perm(&a), &perm(&b)).unwrap()).abs();
            prop_assert!(d < 1e-9);
        }
    }
}
