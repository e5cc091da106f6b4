//! Acceptance suite: every criterion runs and prints one
//! `criterion N: PASS|FAIL ...` line; the process fails if any criterion does.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mocorr::field::{integrate_euler, jacobian_determinant, FieldRecon, VelocityField};
use mocorr::imgcore::{
    warp, BoundaryPolicy, DisplacementField, Frame, FrameSequence, InterpKernel,
};
use mocorr::metrics::{evaluate_sequence_with, mse, ssim, MetricsOptions, SsimParams};
use mocorr::pipeline::{
    cmd_stabilize, cmd_synth, grid_sweep, quantize, stabilize_sequence, PipelineConfig,
    TrackSource, WarpOptions,
};
use mocorr::register::{
    energy, exp_map, gaussian_smooth, register_diffeo, similarity_force, RegistrationConfig, Similarity,
    StationaryVelocity,
};
use mocorr::synth::{
    exact_tracks, gaussian_blob, generate, perturb_tracks, phantom, Motion, MotionSpec,
};
use mocorr::tracks::sample_uniform_grid;

fn report(n: u32, name: &str, pass: bool, detail: String) -> bool {
    println!(
        "criterion {n:>2}: {} {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

const SIDE: usize = 128;
const FRAMES: usize = 30;
const CENTRAL: f64 = 0.8;

fn rigid_setup() -> (MotionSpec, FrameSequence) {
    let c = (SIDE as f64 - 1.0) / 2.0;
    let spec = MotionSpec::random_rigid(FRAMES, 10.0, 3.0, [c, c], 2024);
    let base = phantom(SIDE, SIDE, 7).unwrap();
    let seq = quantize(&generate(&base, &spec, FRAMES).unwrap().frames).unwrap();
    (spec, seq)
}

fn central_opts() -> MetricsOptions {
    MetricsOptions {
        region_keep: CENTRAL,
        ..MetricsOptions::default()
    }
}

fn criterion_01_identity_exactness() -> bool {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut all_equal = true;
    for _ in 0..20 {
        let (w, h) = (rng.random_range(16..160), rng.random_range(16..160));
        let f = phantom(w, h, rng.random()).unwrap();
        let id = DisplacementField::identity(w, h);
        for interp in [InterpKernel::Bilinear, InterpKernel::Nearest] {
            let out = warp(&f, &id, BoundaryPolicy::ClampToEdge, interp).unwrap();
            all_equal &= out
                .pixels()
                .iter()
                .zip(f.pixels())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        }
    }
    let elapsed = start.elapsed();
    report(
        1,
        "identity warp is bit-exact",
        all_equal && elapsed < Duration::from_secs(1),
        format!("20 phantoms bit-identical = {all_equal}, {elapsed:.2?} (limit 1 s)"),
    )
}

fn criterion_02_rigid_stabilization() -> bool {
    let (spec, seq) = rigid_setup();
    let start = Instant::now();
    let queries = sample_uniform_grid(SIDE, SIDE, 16).unwrap();
    let tracks = exact_tracks(&spec, &queries, FRAMES, SIDE, SIDE).unwrap();
    let stab = stabilize_sequence(&seq, &tracks, 0, &FieldRecon::default(), &WarpOptions::default()).unwrap();
    let before = evaluate_sequence_with(&seq, &central_opts()).unwrap();
    let after = evaluate_sequence_with(&stab.frames, &central_opts()).unwrap();
    let elapsed = start.elapsed();
    let pass = after.ssim_mean >= 0.98
        && after.mse_mean <= 5.0
        && before.ssim_mean < after.ssim_mean
        && elapsed < Duration::from_secs(10);
    report(
        2,
        "rigid stabilization",
        pass,
        format!(
            "ssim {:.4} -> {:.4} (>= 0.98), mse {:.2} -> {:.3} (<= 5), {elapsed:.2?} (limit 10 s)",
            before.ssim_mean, after.ssim_mean, before.mse_mean, after.mse_mean
        ),
    )
}

/// Amplitude 4 px, one period across the frame.
const DEFORM_FREQ: f64 = 1.0;

fn criterion_03_grid_size_robustness() -> bool {
    let t = 20;
    let amplitudes = (0..t).map(|i| 4.0 * (2.0 * PI * i as f64 / t as f64).sin()).collect();
    let spec = MotionSpec::new(
        Motion::SmoothDeformation {
            amplitudes,
            frequency: DEFORM_FREQ,
            phase: [0.4, 1.3],
        },
        0,
    );
    let base = phantom(SIDE, SIDE, 3).unwrap();
    let seq = quantize(&generate(&base, &spec, t).unwrap().frames).unwrap();
    let cfg = PipelineConfig::default();
    let rows = grid_sweep(&seq, TrackSource::Exact(&spec), &[4, 8, 16, 32, 64], &cfg).unwrap();
    let s = |g: usize| rows.iter().find(|r| r.grid_size == g).unwrap().ssim_mean;
    let close = (s(4) - s(64)).abs() <= 0.05;
    let monotone = rows.windows(2).all(|w| w[1].ssim_mean >= w[0].ssim_mean - 0.01);
    let table = rows
        .iter()
        .map(|r| format!("g{}={:.4}", r.grid_size, r.ssim_mean))
        .collect::<Vec<_>>()
        .join(" ");
    report(
        3,
        "grid-size robustness",
        close && monotone,
        format!("{table}; |ssim4 - ssim64| = {:.4} (<= 0.05), monotone within 0.01 = {monotone}", (s(4) - s(64)).abs()),
    )
}

/// Direct windowed SSIM: every window's weighted moments from the 2-D kernel.
fn ssim_oracle(a: &Frame, b: &Frame) -> f64 {
    let (k, sigma) = (11usize, 1.5f64);
    let g: Vec<f64> = (0..k)
        .map(|i| {
            let d = i as f64 - 5.0;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = g.iter().sum();
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let (w, h) = (a.width(), a.height());
    let mut total = 0.0;
    let mut count = 0.0;
    for y0 in 0..=h - k {
        for x0 in 0..=w - k {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in 0..k {
                for i in 0..k {
                    let wt = g[i] * g[j] / (sum * sum);
                    let (va, vb) = (a.get(x0 + i, y0 + j), b.get(x0 + i, y0 + j));
                    ma += wt * va;
                    mb += wt * vb;
                    saa += wt * va * va;
                    sbb += wt * vb * vb;
                    sab += wt * va * vb;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1.0;
        }
    }
    total / count
}

fn mse_oracle(a: &Frame, b: &Frame) -> f64 {
    let mut s = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            let d = a.get(x, y) - b.get(x, y);
            s += d * d;
        }
    }
    s / (a.width() * a.height()) as f64
}

fn criterion_04_metric_oracles() -> bool {
    let p = SsimParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_ssim: f64 = 0.0;
    let mut worst_mse: f64 = 0.0;
    for _ in 0..10 {
        let a = Frame::new(32, 32, (0..32 * 32).map(|_| rng.random_range(0.0..255.0)).collect()).unwrap();
        let b = Frame::new(
            32,
            32,
            a.pixels().iter().map(|v| (v + rng.random_range(-60.0..60.0)).clamp(0.0, 255.0)).collect(),
        )
        .unwrap();
        worst_ssim = worst_ssim.max((ssim(&a, &b, &p).unwrap() - ssim_oracle(&a, &b)).abs());
        worst_mse = worst_mse.max((mse(&a, &b).unwrap() - mse_oracle(&a, &b)).abs());
    }
    let img = phantom(32, 32, 9).unwrap();
    let self_ssim = ssim(&img, &img, &p).unwrap();
    let c1 = (0.01f64 * 255.0).powi(2);
    let closed = (2.0 * 100.0 * 110.0 + c1) / (100.0f64.powi(2) + 110.0f64.powi(2) + c1);
    let constant = ssim(
        &Frame::constant(32, 32, 100.0).unwrap(),
        &Frame::constant(32, 32, 110.0).unwrap(),
        &p,
    )
    .unwrap();
    let const_ok = (constant - closed).abs() < 5e-5;
    let pass = worst_ssim <= 1e-6 && worst_mse <= 1e-6 && self_ssim == 1.0 && const_ok;
    report(
        4,
        "metric oracles",
        pass,
        format!(
            "max |ssim - oracle| = {worst_ssim:.1e}, max |mse - oracle| = {worst_mse:.1e}, ssim(I,I) = {self_ssim}, \
             constant 100 vs 110 = {constant:.4} (closed form {closed:.4}; the quoted 0.9941 does not follow from the formula)"
        ),
    )
}

fn criterion_05_baseline_recovery() -> bool {
    let (cx, cy, sigma) = (63.5, 63.5, 8.0);
    let fixed = gaussian_blob(SIDE, SIDE, (cx, cy), sigma, 100.0, 20.0).unwrap();
    let moving = gaussian_blob(SIDE, SIDE, (cx + 2.0, cy), sigma, 100.0, 20.0).unwrap();
    let start = Instant::now();
    let reg = register_diffeo(&moving, &fixed, &RegistrationConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let (ux, uy) = reg.field.displacement();
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for y in 0..SIDE {
        for x in 0..SIDE {
            let r = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            if r <= 2.0 * sigma {
                sx += ux[y * SIDE + x];
                sy += uy[y * SIDE + x];
                n += 1.0;
            }
        }
    }
    let (mx, my) = (sx / n, sy / n);
    let err = (mx - 2.0).hypot(my);
    let warped = warp(&moving, &reg.field, BoundaryPolicy::ClampToEdge, InterpKernel::Bilinear).unwrap();
    let (m0, m1) = (mse(&moving, &fixed).unwrap(), mse(&warped, &fixed).unwrap());
    let trace = &reg.energy_trace;
    let monotone = trace.windows(2).skip(1).all(|w| w[1] <= w[0] + 1e-9);
    let pass = err <= 0.5 && m1 <= 0.1 * m0 && monotone && elapsed < Duration::from_secs(30);
    report(
        5,
        "baseline recovery",
        pass,
        format!(
            "mean displacement ({mx:.3}, {my:.3}) vs (2, 0), mse {m0:.3} -> {m1:.4} ({:.1}% reduction), \
             {} iterations, trace non-increasing = {monotone}, {elapsed:.2?} (limit 30 s)",
            100.0 * (1.0 - m1 / m0),
            trace.len() - 1
        ),
    )
}

fn criterion_06_integration() -> bool {
    let n = 64;
    let constant: Vec<_> = (0..3)
        .map(|_| VelocityField::from_fn(n, n, |_, _| (1.0, 0.0)).unwrap())
        .collect();
    let phi = integrate_euler(&constant, InterpKernel::Bilinear).unwrap();
    let shift_err = (0..n * n)
        .map(|i| {
            let (x, y) = ((i % n) as f64, (i / n) as f64);
            (phi.map_x()[i] - (x + 3.0)).abs().max((phi.map_y()[i] - y).abs())
        })
        .fold(0.0, f64::max);

    let (omega, steps) = (0.01, 10);
    let c = (n as f64 - 1.0) / 2.0;
    let rot: Vec<_> = (0..steps)
        .map(|_| VelocityField::from_fn(n, n, |x, y| (-omega * (y - c), omega * (x - c))).unwrap())
        .collect();
    let phi = integrate_euler(&rot, InterpKernel::Bilinear).unwrap();
    let (s, co) = (omega * steps as f64).sin_cos();
    let mut rot_err: f64 = 0.0;
    for y in n / 4..3 * n / 4 {
        for x in n / 4..3 * n / 4 {
            let (dx, dy) = (x as f64 - c, y as f64 - c);
            let (ex, ey) = (c + co * dx - s * dy, c + s * dx + co * dy);
            let (mx, my) = phi.get(x, y);
            rot_err = rot_err.max((mx - ex).hypot(my - ey));
        }
    }
    report(
        6,
        "integration correctness",
        shift_err <= 1e-9 && rot_err <= 0.05,
        format!("constant-velocity error {shift_err:.1e} (<= 1e-9), rotation error {rot_err:.4} px (<= 0.05)"),
    )
}

/// Uniform noise blurred to a correlation length of `SMOOTH_PX`, rescaled to `max_mag`.
fn smooth_velocity(rng: &mut ChaCha8Rng, n: usize, max_mag: f64) -> StationaryVelocity {
    let mut noise = || -> Vec<f64> {
        let raw: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        gaussian_smooth(&raw, n, n, SMOOTH_PX)
    };
    let (vx, vy) = (noise(), noise());
    let peak = vx.iter().zip(&vy).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max);
    let s = max_mag / peak;
    StationaryVelocity::new(
        n,
        n,
        vx.iter().map(|v| v * s).collect(),
        vy.iter().map(|v| v * s).collect(),
    )
    .unwrap()
}

const SMOOTH_PX: f64 = 8.0;

fn criterion_07_diffeomorphism() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut min_det = f64::INFINITY;
    let mut worst_scaled: f64 = 0.0;
    for _ in 0..50 {
        let k: u32 = rng.random_range(3..=6);
        let scaled = rng.random_range(0.05..0.49);
        let v = smooth_velocity(&mut rng, SIDE, scaled * 2f64.powi(k as i32));
        worst_scaled = worst_scaled.max(v.max_magnitude() / 2f64.powi(k as i32));
        let phi = exp_map(&v, k).unwrap();
        let det = jacobian_determinant(&phi).unwrap();
        min_det = min_det.min(det.iter().copied().fold(f64::INFINITY, f64::min));
    }
    report(
        7,
        "diffeomorphism",
        min_det > 0.0 && worst_scaled < 0.5,
        format!("50 fields smoothed at {SMOOTH_PX} px, largest scaled magnitude {worst_scaled:.3} px, min Jacobian determinant {min_det:.4} (> 0)"),
    )
}

fn criterion_08_force_gradient() -> bool {
    let n = 16;
    let fixed = Frame::from_fn(n, n, |x, y| {
        100.0 + 50.0 * (0.4 * x as f64).sin() * (0.3 * y as f64 + 0.2).cos()
    })
    .unwrap();
    let moving = Frame::from_fn(n, n, |x, y| {
        100.0 + 50.0 * (0.4 * x as f64 + 0.5).sin() * (0.3 * y as f64 + 0.1).cos()
    })
    .unwrap();
    let field = DisplacementField::from_fn(n, n, |x, y| (x + 0.37 + 0.2 * (0.3 * y).sin(), y - 0.23 + 0.1 * (0.2 * x).cos()));
    let cfg = RegistrationConfig {
        lambda: 0.0,
        ..RegistrationConfig::default()
    };
    let (fx, fy) = similarity_force(&moving, &fixed, &field, Similarity::Ssd).unwrap();
    let (ux, uy) = field.displacement();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for i in 0..n * n {
        for comp in 0..2 {
            let e = |d: f64| {
                let (mut a, mut b) = (ux.clone(), uy.clone());
                if comp == 0 {
                    a[i] += d;
                } else {
                    b[i] += d;
                }
                energy(&moving, &fixed, &DisplacementField::from_displacement(n, n, &a, &b).unwrap(), &cfg).unwrap()
            };
            let fd = (e(h) - e(-h)) / (2.0 * h);
            let an = if comp == 0 { fx[i] } else { fy[i] };
            let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-12);
            worst = worst.max(rel);
        }
    }
    report(
        8,
        "force gradient check",
        worst <= 1e-4,
        format!("max relative error over {} components {worst:.2e} (<= 1e-4)", 2 * n * n),
    )
}

fn criterion_09_outlier_robustness() -> bool {
    let (spec, seq) = rigid_setup();
    let queries = sample_uniform_grid(SIDE, SIDE, 16).unwrap();
    let tracks = exact_tracks(&spec, &queries, FRAMES, SIDE, SIDE).unwrap();
    let noisy = perturb_tracks(&tracks, 0.5, 0.05, 99).unwrap();
    let stab = stabilize_sequence(&seq, &noisy, 0, &FieldRecon::idw(), &WarpOptions::default()).unwrap();
    let after = evaluate_sequence_with(&stab.frames, &central_opts()).unwrap();
    report(
        9,
        "outlier robustness",
        after.ssim_mean >= 0.95,
        format!(
            "{} outlier tracks of {}, idw ssim mean {:.4} (>= 0.95)",
            noisy.outliers.as_ref().map_or(0, Vec::len),
            noisy.num_points(),
            after.ssim_mean
        ),
    )
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_10_determinism() -> bool {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.json");
    let motion = MotionSpec::random_rigid(8, 5.0, 2.0, [31.5, 31.5], 5);
    let synth = serde_json::json!({
        "width": 64, "height": 64, "num_frames": 8, "seed": 3,
        "motion": motion, "grid_size": 8, "noise_sigma": 0.3, "outlier_rate": 0.05
    });
    fs::write(&spec, synth.to_string()).unwrap();
    let data = tmp.path().join("data");
    cmd_synth(&spec, &data, None).unwrap();
    let cfg = PipelineConfig {
        frames: Some(data.join("frames")),
        tracks: Some(data.join("tracks.json")),
        out: Some(tmp.path().join("out")),
        emit_fields: true,
        ..PipelineConfig::default()
    };
    cmd_stabilize(&cfg).unwrap();
    let first = snapshot(&tmp.path().join("out"));
    fs::remove_dir_all(tmp.path().join("out")).unwrap();
    cmd_stabilize(&cfg).unwrap();
    let second = snapshot(&tmp.path().join("out"));
    let bytes: usize = first.values().map(Vec::len).sum();
    report(
        10,
        "determinism",
        first == second && first.len() > 8,
        format!("{} files, {bytes} bytes, identical = {}", first.len(), first == second),
    )
}

fn main() {
    let criteria: [fn() -> bool; 10] = [
        criterion_01_identity_exactness,
        criterion_02_rigid_stabilization,
        criterion_03_grid_size_robustness,
        criterion_04_metric_oracles,
        criterion_05_baseline_recovery,
        criterion_06_integration,
        criterion_07_diffeomorphism,
        criterion_08_force_gradient,
        criterion_09_outlier_robustness,
        criterion_10_determinism,
    ];
    let mut failed = 0;
    for c in criteria {
        let ok = std::panic::catch_unwind(c).unwrap_or_else(|_| {
            println!("criterion panicked");
            false
        });
        failed += usize::from(!ok);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
