//! Commands behind the `mocorr` binary. Each command reads a
//! [`PipelineConfig`], writes into its output directory and returns a summary;
//! failures carry a stable process exit code.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{
    tracks_to_displacement_between, write_field_dump, FieldError, FieldRecon,
};
use crate::imgcore::{
    frame_file_name, read_sequence, warp, write_sequence, BoundaryPolicy, DisplacementField,
    Frame, FrameFormat, FrameSequence, ImageError, InterpKernel,
};
use crate::metrics::{
    evaluate_sequence_with, mape, LandmarkSet, MetricsError, MetricsOptions, MetricsReport,
};
use crate::register::{energy_trace_csv, register_diffeo, RegisterError, RegistrationConfig};
use crate::synth::{
    exact_landmarks, exact_tracks, generate, perturb_tracks, phantom, MotionSpec, SynthError,
};
use crate::tracks::{
    detect_uniform_grid, load_tracks, sample, sample_uniform_grid, save_tracks, Point2,
    SamplingSpec, TrackError, TrackSet,
};

/// Process exit code for bad input or a violated contract.
pub const EXIT_INPUT: i32 = 2;
/// Process exit code for a numeric failure.
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Error, Debug)]
pub enum PipelineError {
    #[error("{0}")]
    Contract(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Register(#[from] RegisterError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("registration failed on {} frame(s): {}", .0.len(), format_failures(.0))]
    RegistrationFailed(Vec<FrameFailure>),
}

fn format_failures(f: &[FrameFailure]) -> String {
    f.iter()
        .map(|x| format!("frame {}: {}", x.frame, x.message))
        .collect::<Vec<_>>()
        .join("; ")
}

fn image_exit_code(e: &ImageError) -> i32 {
    match e {
        ImageError::NonFinite { .. } => EXIT_NUMERIC,
        _ => EXIT_INPUT,
    }
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Image(e) => image_exit_code(e),
            Self::Field(e) => match e {
                FieldError::Image(i) => image_exit_code(i),
                FieldError::TooFewVisible { .. } | FieldError::NonFinite { .. } => EXIT_NUMERIC,
                _ => EXIT_INPUT,
            },
            Self::Register(e) => match e {
                RegisterError::Config(_) | RegisterError::TooSmall { .. } => EXIT_INPUT,
                RegisterError::Image(i) => image_exit_code(i),
                _ => EXIT_NUMERIC,
            },
            Self::RegistrationFailed(_) => EXIT_NUMERIC,
            _ => EXIT_INPUT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameFailure {
    pub frame: usize,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct WarpOptions {
    pub boundary: BoundaryPolicy,
    pub interp: InterpKernel,
}

/// Everything a command needs. Unset paths are supplied on the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub frames: Option<PathBuf>,
    pub tracks: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Motion spec used by `gridsweep` to re-derive exact tracks per grid size.
    pub motion: Option<PathBuf>,
    pub reference: usize,
    pub fps: f64,
    pub sampling: SamplingSpec,
    pub recon: FieldRecon,
    pub warp: WarpOptions,
    pub registration: RegistrationConfig,
    pub metrics: MetricsOptions,
    pub emit_fields: bool,
    pub output_format: FrameFormat,
    pub grid_sizes: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frames: None,
            tracks: None,
            out: None,
            motion: None,
            reference: 0,
            fps: 30.0,
            sampling: SamplingSpec::default(),
            recon: FieldRecon::default(),
            warp: WarpOptions::default(),
            registration: RegistrationConfig::default(),
            metrics: MetricsOptions::default(),
            emit_fields: false,
            output_format: FrameFormat::Png,
            grid_sizes: vec![4, 8, 16, 32, 64],
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = read_text(path)?;
        serde_json::from_str(&text).map_err(|source| PipelineError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    fn metrics_options(&self) -> MetricsOptions {
        MetricsOptions {
            reference_index: self.reference,
            ..self.metrics
        }
    }

    fn require<'a>(&self, p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, PipelineError> {
        p.as_deref()
            .ok_or_else(|| PipelineError::Contract(format!("missing {flag}")))
    }

    /// Output must not coincide with any input.
    fn check_distinct(&self) -> Result<(), PipelineError> {
        let Some(out) = &self.out else { return Ok(()) };
        for input in [&self.frames, &self.tracks, &self.motion].into_iter().flatten() {
            if same_path(out, input) {
                return Err(PipelineError::Contract(format!(
                    "output path {} coincides with input {}",
                    out.display(),
                    input.display()
                )));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.check_distinct()?;
        self.recon.validate()?;
        self.registration.validate()?;
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(PipelineError::Contract(format!("fps must be positive, got {}", self.fps)));
        }
        if !(self.metrics.region_keep > 0.0 && self.metrics.region_keep <= 1.0) {
            return Err(PipelineError::Contract(format!(
                "metrics.region_keep must lie in (0, 1], got {}",
                self.metrics.region_keep
            )));
        }
        Ok(())
    }
}

fn same_path(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes")
}

/// Checks that tracks describe this sequence.
pub fn check_tracks_match(seq: &FrameSequence, tracks: &TrackSet) -> Result<(), PipelineError> {
    if tracks.num_frames() != seq.len() {
        return Err(PipelineError::Contract(format!(
            "track/frame count mismatch: track file has {} frames, frame directory has {}",
            tracks.num_frames(),
            seq.len()
        )));
    }
    if (tracks.width, tracks.height) != (seq.width(), seq.height()) {
        return Err(PipelineError::Contract(format!(
            "track/frame dimension mismatch: track file is {}x{}, frames are {}x{}",
            tracks.width,
            tracks.height,
            seq.width(),
            seq.height()
        )));
    }
    Ok(())
}

fn check_reference(reference: usize, len: usize) -> Result<(), PipelineError> {
    if reference >= len {
        return Err(PipelineError::Contract(format!(
            "reference frame {reference} out of range for {len} frames"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Stabilized {
    pub frames: FrameSequence,
    /// Per frame, reference coordinates to frame coordinates.
    pub fields: Vec<DisplacementField>,
}

/// Warps every frame onto the reference frame using fields built from tracks.
pub fn stabilize_sequence(
    seq: &FrameSequence,
    tracks: &TrackSet,
    reference: usize,
    recon: &FieldRecon,
    warp_opts: &WarpOptions,
) -> Result<Stabilized, PipelineError> {
    check_tracks_match(seq, tracks)?;
    check_reference(reference, seq.len())?;
    let (w, h) = (seq.width(), seq.height());
    let results: Vec<(Frame, DisplacementField)> = seq
        .frames()
        .par_iter()
        .enumerate()
        .map(|(t, frame)| {
            let field = tracks_to_displacement_between(tracks, reference, t, recon, w, h)?;
            let out = warp(frame, &field, warp_opts.boundary, warp_opts.interp)?.with_index(t);
            Ok((out, field))
        })
        .collect::<Result<_, PipelineError>>()?;
    let (frames, fields): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(Stabilized {
        frames: FrameSequence::new(frames, seq.fps())?,
        fields,
    })
}

/// Rounds to the 8-bit values a frame file would hold.
pub fn quantize(seq: &FrameSequence) -> Result<FrameSequence, PipelineError> {
    let frames = seq
        .frames()
        .iter()
        .map(|f| {
            let px = f.pixels().iter().map(|v| v.clamp(0.0, 255.0).round()).collect();
            Frame::new(f.width(), f.height(), px).map(|g| g.with_index(f.frame_index()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FrameSequence::new(frames, seq.fps())?)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a PipelineConfig,
    num_frames: usize,
    width: usize,
    height: usize,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    extra: BTreeMap<&'a str, serde_json::Value>,
}

fn write_manifest(
    out: &Path,
    command: &str,
    cfg: &PipelineConfig,
    seq: &FrameSequence,
    extra: BTreeMap<&str, serde_json::Value>,
) -> Result<(), PipelineError> {
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        num_frames: seq.len(),
        width: seq.width(),
        height: seq.height(),
        extra,
    };
    write_text(&out.join("manifest.json"), &to_json(&m))
}

fn write_report(out: &Path, name: &str, report: &MetricsReport) -> Result<(), PipelineError> {
    write_text(&out.join(format!("{name}.csv")), &report.to_csv())?;
    write_text(&out.join(format!("{name}.json")), &report.summary_json(Some(name)))
}

#[derive(Clone, Debug)]
pub struct StabilizeSummary {
    pub before: MetricsReport,
    pub after: MetricsReport,
}

/// Writes `frames/`, optional `fields/`, `metrics_before.*`, `metrics_after.*`
/// and `manifest.json` under the output directory.
pub fn cmd_stabilize(cfg: &PipelineConfig) -> Result<StabilizeSummary, PipelineError> {
    cfg.validate()?;
    let frames_dir = cfg.require(&cfg.frames, "--frames")?;
    let tracks_path = cfg.require(&cfg.tracks, "--tracks")?;
    let out = cfg.require(&cfg.out, "--out")?;
    let seq = read_sequence(frames_dir, cfg.fps)?;
    let tracks = load_tracks(tracks_path)?;
    let stab = stabilize_sequence(&seq, &tracks, cfg.reference, &cfg.recon, &cfg.warp)?;
    let written = quantize(&stab.frames)?;

    create_dir(out)?;
    write_sequence(&written, &out.join("frames"), cfg.output_format)?;
    if cfg.emit_fields {
        let dir = out.join("fields");
        create_dir(&dir)?;
        for (t, f) in stab.fields.iter().enumerate() {
            write_field_dump(f, &dir.join(format!("field_{t:06}.dfld")))?;
        }
    }
    let opts = cfg.metrics_options();
    let before = evaluate_sequence_with(&seq, &opts)?;
    let after = evaluate_sequence_with(&written, &opts)?;
    write_report(out, "metrics_before", &before)?;
    write_report(out, "metrics_after", &after)?;
    let mut extra = BTreeMap::new();
    extra.insert("track_source", serde_json::json!(tracks.source_tag));
    extra.insert("num_tracks", serde_json::json!(tracks.num_points()));
    write_manifest(out, "stabilize", cfg, &seq, extra)?;
    Ok(StabilizeSummary { before, after })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridSweepRow {
    pub grid_size: usize,
    pub mse_mean: f64,
    pub ssim_mean: f64,
}

/// Where per-size tracks come from.
pub enum TrackSource<'a> {
    /// Every k-th node of a dense uniform-grid track set.
    Subsample(&'a TrackSet),
    /// Exact tracks of a known motion.
    Exact(&'a MotionSpec),
}

/// Ascending, duplicates removed; every size at least 2.
pub fn normalize_sizes(sizes: &[usize]) -> Result<Vec<usize>, PipelineError> {
    if sizes.is_empty() {
        return Err(PipelineError::Contract("no grid sizes given".into()));
    }
    if let Some(g) = sizes.iter().find(|&&g| g < 2) {
        return Err(PipelineError::Contract(format!("grid size {g} is below 2")));
    }
    let mut s = sizes.to_vec();
    s.sort_unstable();
    s.dedup();
    Ok(s)
}

/// Indices of a `g × g` grid inside a dense `dense × dense` grid.
pub fn subsample_grid_indices(dense: usize, g: usize) -> Result<Vec<usize>, PipelineError> {
    if g > dense || !(dense - 1).is_multiple_of(g - 1) {
        return Err(PipelineError::Contract(format!(
            "cannot subsample a {dense}x{dense} track grid to {g}x{g}: {} is not divisible by {}",
            dense - 1,
            g - 1
        )));
    }
    let k = (dense - 1) / (g - 1);
    Ok((0..g)
        .flat_map(|r| (0..g).map(move |c| r * k * dense + c * k))
        .collect())
}

pub fn grid_sweep(
    seq: &FrameSequence,
    source: TrackSource<'_>,
    sizes: &[usize],
    cfg: &PipelineConfig,
) -> Result<Vec<GridSweepRow>, PipelineError> {
    let sizes = normalize_sizes(sizes)?;
    let (w, h) = (seq.width(), seq.height());
    let dense = match &source {
        TrackSource::Subsample(t) => Some(detect_uniform_grid(t.queries(), w, h).ok_or_else(|| {
            PipelineError::Contract(
                "track queries do not form a uniform grid; grid sweep needs one or a motion spec".into(),
            )
        })?),
        TrackSource::Exact(_) => None,
    };
    let opts = cfg.metrics_options();
    sizes
        .iter()
        .map(|&g| {
            let tracks = match (&source, dense) {
                (TrackSource::Subsample(t), Some(d)) => t.select(&subsample_grid_indices(d, g)?)?,
                (TrackSource::Exact(spec), _) => {
                    exact_tracks(spec, &sample_uniform_grid(w, h, g)?, seq.len(), w, h)?
                }
                _ => unreachable!("dense grid is detected for subsampling"),
            };
            let stab = stabilize_sequence(seq, &tracks, cfg.reference, &cfg.recon, &cfg.warp)?;
            let report = evaluate_sequence_with(&stab.frames, &opts)?;
            Ok(GridSweepRow {
                grid_size: g,
                mse_mean: report.mse_mean,
                ssim_mean: report.ssim_mean,
            })
        })
        .collect()
}

pub fn gridsweep_csv(rows: &[GridSweepRow]) -> String {
    let mut s = String::from("grid_size,mse_mean,ssim_mean\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.grid_size, r.mse_mean, r.ssim_mean));
    }
    s
}

/// Writes `gridsweep.csv` and `manifest.json`. Uses the motion spec when one
/// is configured, else subsamples the track grid.
pub fn cmd_gridsweep(cfg: &PipelineConfig) -> Result<Vec<GridSweepRow>, PipelineError> {
    cfg.validate()?;
    let frames_dir = cfg.require(&cfg.frames, "--frames")?;
    let out = cfg.require(&cfg.out, "--out")?;
    let seq = read_sequence(frames_dir, cfg.fps)?;
    check_reference(cfg.reference, seq.len())?;
    let rows = match (&cfg.motion, &cfg.tracks) {
        (Some(path), _) => {
            let spec = load_motion(path)?;
            spec.validate(seq.len(), seq.width(), seq.height())?;
            grid_sweep(&seq, TrackSource::Exact(&spec), &cfg.grid_sizes, cfg)?
        }
        (None, Some(path)) => {
            let tracks = load_tracks(path)?;
            check_tracks_match(&seq, &tracks)?;
            grid_sweep(&seq, TrackSource::Subsample(&tracks), &cfg.grid_sizes, cfg)?
        }
        (None, None) => {
            return Err(PipelineError::Contract(
                "gridsweep needs --tracks or a motion spec in the config".into(),
            ))
        }
    };
    create_dir(out)?;
    write_text(&out.join("gridsweep.csv"), &gridsweep_csv(&rows))?;
    write_manifest(out, "gridsweep", cfg, &seq, BTreeMap::new())?;
    Ok(rows)
}

fn load_motion(path: &Path) -> Result<MotionSpec, PipelineError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|source| PipelineError::Json {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Clone, Debug)]
pub struct BaselineSummary {
    pub before: MetricsReport,
    pub after: MetricsReport,
    pub traces: Vec<Option<Vec<f64>>>,
    pub failures: Vec<FrameFailure>,
}

/// Registers every frame onto the reference. Frames that fail keep their
/// original content in the output; the failures are listed in the manifest
/// and returned as an error after all outputs are written.
pub fn cmd_register_baseline(cfg: &PipelineConfig) -> Result<BaselineSummary, PipelineError> {
    cfg.validate()?;
    let frames_dir = cfg.require(&cfg.frames, "--frames")?;
    let out = cfg.require(&cfg.out, "--out")?;
    let seq = read_sequence(frames_dir, cfg.fps)?;
    check_reference(cfg.reference, seq.len())?;
    let fixed = &seq.frames()[cfg.reference];

    let results: Vec<Result<(Frame, Vec<f64>), String>> = seq
        .frames()
        .par_iter()
        .enumerate()
        .map(|(t, moving)| {
            let reg = register_diffeo(moving, fixed, &cfg.registration).map_err(|e| e.to_string())?;
            let warped = warp(moving, &reg.field, cfg.warp.boundary, cfg.warp.interp)
                .map_err(|e| e.to_string())?;
            Ok((warped.with_index(t), reg.energy_trace))
        })
        .collect();

    let mut frames = Vec::with_capacity(seq.len());
    let mut traces = Vec::with_capacity(seq.len());
    let mut failures = Vec::new();
    for (t, r) in results.into_iter().enumerate() {
        match r {
            Ok((f, trace)) => {
                frames.push(f);
                traces.push(Some(trace));
            }
            Err(message) => {
                frames.push(seq.frames()[t].clone());
                traces.push(None);
                failures.push(FrameFailure { frame: t, message });
            }
        }
    }
    let written = quantize(&FrameSequence::new(frames, seq.fps())?)?;

    create_dir(out)?;
    write_sequence(&written, &out.join("frames"), cfg.output_format)?;
    let energy_dir = out.join("energy");
    create_dir(&energy_dir)?;
    for (t, trace) in traces.iter().enumerate() {
        if let Some(trace) = trace {
            write_text(&energy_dir.join(format!("energy_{t:06}.csv")), &energy_trace_csv(trace))?;
        }
    }
    let opts = cfg.metrics_options();
    let before = evaluate_sequence_with(&seq, &opts)?;
    let after = evaluate_sequence_with(&written, &opts)?;
    write_report(out, "metrics_before", &before)?;
    write_report(out, "metrics_after", &after)?;
    let mut extra = BTreeMap::new();
    extra.insert("failures", serde_json::json!(failures));
    write_manifest(out, "register-baseline", cfg, &seq, extra)?;

    if !failures.is_empty() {
        return Err(PipelineError::RegistrationFailed(failures));
    }
    Ok(BaselineSummary {
        before,
        after,
        traces,
        failures,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedPoint {
    pub name: String,
    pub x: f64,
    pub y: f64,
}

/// Input of `cmd_synth`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub num_frames: usize,
    /// Seeds the phantom and the track perturbation.
    #[serde(default)]
    pub seed: u64,
    pub motion: MotionSpec,
    #[serde(default = "default_synth_grid")]
    pub grid_size: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub outlier_rate: f64,
    #[serde(default)]
    pub landmarks: Option<Vec<NamedPoint>>,
    #[serde(default)]
    pub format: FrameFormat,
}

fn default_synth_grid() -> usize {
    16
}

impl SynthConfig {
    /// Five landmarks: the center and the four quarter points.
    pub fn default_landmarks(&self) -> Vec<NamedPoint> {
        let (w, h) = (self.width as f64 - 1.0, self.height as f64 - 1.0);
        [
            ("center", 0.5, 0.5),
            ("upper-left", 0.25, 0.25),
            ("upper-right", 0.75, 0.25),
            ("lower-left", 0.25, 0.75),
            ("lower-right", 0.75, 0.75),
        ]
        .into_iter()
        .map(|(n, fx, fy)| NamedPoint {
            name: n.into(),
            x: fx * w,
            y: fy * h,
        })
        .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub frames: FrameSequence,
    pub tracks: TrackSet,
    pub landmarks: LandmarkSet,
}

/// Builds the phantom sequence, its (optionally perturbed) grid tracks and
/// exact landmark trajectories.
pub fn synthesize(sc: &SynthConfig) -> Result<SynthOutput, PipelineError> {
    if sc.width < 2 || sc.height < 2 {
        return Err(PipelineError::Contract(format!(
            "synthetic frames must be at least 2x2, got {}x{}",
            sc.width, sc.height
        )));
    }
    sc.motion.validate(sc.num_frames, sc.width, sc.height)?;
    let base = phantom(sc.width, sc.height, sc.seed)?;
    let gen = generate(&base, &sc.motion, sc.num_frames)?;
    let queries = sample_uniform_grid(sc.width, sc.height, sc.grid_size)?;
    let mut tracks = exact_tracks(&sc.motion, &queries, sc.num_frames, sc.width, sc.height)?;
    if sc.noise_sigma != 0.0 || sc.outlier_rate != 0.0 {
        tracks = perturb_tracks(&tracks, sc.noise_sigma, sc.outlier_rate, sc.seed)?;
        tracks.source_tag = "synth:perturbed".into();
    }
    let marks = sc.landmarks.clone().unwrap_or_else(|| sc.default_landmarks());
    let names: Vec<String> = marks.iter().map(|m| m.name.clone()).collect();
    let points: Vec<Point2> = marks.iter().map(|m| Point2::new(m.x, m.y)).collect();
    let landmarks = exact_landmarks(&sc.motion, &names, &points, sc.num_frames, sc.width, sc.height)?;
    Ok(SynthOutput {
        frames: quantize(&gen.frames)?,
        tracks,
        landmarks,
    })
}

/// Writes `frames/`, `tracks.json`, `landmarks.json`, `motion.json` and
/// `manifest.json`.
pub fn cmd_synth(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<SynthOutput, PipelineError> {
    let text = read_text(spec_path)?;
    let mut sc: SynthConfig = serde_json::from_str(&text).map_err(|source| PipelineError::Json {
        path: spec_path.display().to_string(),
        source,
    })?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    if same_path(out, spec_path) {
        return Err(PipelineError::Contract("output path coincides with the spec file".into()));
    }
    let result = synthesize(&sc)?;
    create_dir(out)?;
    write_sequence(&result.frames, &out.join("frames"), sc.format)?;
    save_tracks(&result.tracks, &out.join("tracks.json"))?;
    result.landmarks.save(&out.join("landmarks.json"))?;
    write_text(&out.join("motion.json"), &to_json(&sc.motion))?;
    let manifest = serde_json::json!({
        "command": "synth",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": sc.seed,
        "spec": sc,
    });
    write_text(&out.join("manifest.json"), &to_json(&manifest))?;
    Ok(result)
}

/// Scores a frame directory against its reference frame, plus landmark MAPE
/// when both landmark files are given. Writes `metrics.csv` and `metrics.json`.
pub fn cmd_metrics(
    cfg: &PipelineConfig,
    landmarks: Option<(&Path, &Path)>,
) -> Result<MetricsReport, PipelineError> {
    cfg.validate()?;
    let frames_dir = cfg.require(&cfg.frames, "--frames")?;
    let out = cfg.require(&cfg.out, "--out")?;
    let seq = read_sequence(frames_dir, cfg.fps)?;
    check_reference(cfg.reference, seq.len())?;
    let mut report = evaluate_sequence_with(&seq, &cfg.metrics_options())?;
    if let Some((pred, reference)) = landmarks {
        let p = LandmarkSet::load(pred)?;
        let r = LandmarkSet::load(reference)?;
        report.mape = Some(mape(&p, &r, seq.width().max(seq.height()) as f64)?);
    }
    create_dir(out)?;
    write_report(out, "metrics", &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryFile {
    pub width: usize,
    pub height: usize,
    pub frame: usize,
    pub sampling: SamplingSpec,
    pub points: Vec<[f64; 2]>,
}

/// Samples query points on the reference frame and writes `queries.json`.
pub fn cmd_sample(cfg: &PipelineConfig) -> Result<QueryFile, PipelineError> {
    cfg.validate()?;
    let frames_dir = cfg.require(&cfg.frames, "--frames")?;
    let out = cfg.require(&cfg.out, "--out")?;
    let seq = read_sequence(frames_dir, cfg.fps)?;
    check_reference(cfg.reference, seq.len())?;
    let points = sample(&cfg.sampling, &seq.frames()[cfg.reference])?;
    let q = QueryFile {
        width: seq.width(),
        height: seq.height(),
        frame: cfg.reference,
        sampling: cfg.sampling.clone(),
        points: points.iter().map(|p| [p.x, p.y]).collect(),
    };
    create_dir(out)?;
    write_text(&out.join("queries.json"), &to_json(&q))?;
    Ok(q)
}

/// File name of frame `t` in an output `frames/` directory.
pub fn output_frame_path(out: &Path, t: usize, format: FrameFormat) -> PathBuf {
    out.join("frames").join(frame_file_name(t, format))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsample_indices() {
        assert_eq!(subsample_grid_indices(5, 3).unwrap(), vec![0, 2, 4, 10, 12, 14, 20, 22, 24]);
        assert_eq!(subsample_grid_indices(4, 4).unwrap().len(), 16);
        assert_eq!(subsample_grid_indices(16, 4).unwrap()[1], 5);
        let err = subsample_grid_indices(16, 5).unwrap_err();
        assert!(err.to_string().contains("not divisible"));
        assert!(subsample_grid_indices(4, 8).is_err());
    }

    #[test]
    fn sizes_are_sorted_and_deduplicated() {
        assert_eq!(normalize_sizes(&[8, 4, 8, 2]).unwrap(), vec![2, 4, 8]);
        assert!(normalize_sizes(&[1]).is_err());
        assert!(normalize_sizes(&[]).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Contract("x".into()).exit_code(), EXIT_INPUT);
        assert_eq!(
            PipelineError::Field(FieldError::TooFewVisible { frame: 1, got: 0, needed: 3 }).exit_code(),
            EXIT_NUMERIC
        );
        assert_eq!(
            PipelineError::Register(RegisterError::Diverged { iteration: 1, energy: 1.0, initial: 0.0 })
                .exit_code(),
            EXIT_NUMERIC
        );
        assert_eq!(PipelineError::RegistrationFailed(vec![]).exit_code(), EXIT_NUMERIC);
        assert_eq!(PipelineError::Synth(SynthError::TooFewFrames(1)).exit_code(), EXIT_INPUT);
    }

    #[test]
    fn config_round_trip_and_unknown_keys() {
        let cfg = PipelineConfig {
            reference: 3,
            emit_fields: true,
            ..PipelineConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&text).unwrap(), cfg);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"refrence": 1}"#).is_err());
        let partial: PipelineConfig =
            serde_json::from_str(r#"{"warp": {"boundary": "constant:7"}}"#).unwrap();
        assert_eq!(partial.warp.boundary, BoundaryPolicy::Constant(7.0));
        assert_eq!(partial.fps, 30.0);
    }

    #[test]
    fn output_must_differ_from_inputs() {
        let cfg = PipelineConfig {
            frames: Some("a".into()),
            out: Some("a".into()),
            ..PipelineConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(PipelineError::Contract(_))));
    }
}
