//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs without the libtest harness so the lines are never
//! captured.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use mmfsk_core::config::ExperimentConfig;
use mmfsk_core::correlate::{correlate_grid, CandidateGrid, GridGeometry};
use mmfsk_core::experiment::run_sweep;
use mmfsk_core::metrics::{chamfer_brute_force, chamfer_one_way};
use mmfsk_core::prior::{build_prior, render_surface_depth, triangulate, CameraIntrinsics, Extrinsics, RasterOptions, TriangleMesh};
use mmfsk_core::reconstruct::{
    backproject, fsk2_reconstruct, fsk3_reconstruct, magnitude_filter, mm2fsk_reconstruct, RadarImage, VoxelGridSpec,
};
use mmfsk_core::scene::{make_scene, SceneSpec};
use mmfsk_core::signal::{
    max_unambiguous_depth, named_frequencies, round_trip_distance, standard_configs, AntennaArray, BasebandTensor,
    FrequencySet, PointTarget, Scene, Vec3, SPEED_OF_LIGHT,
};
use mmfsk_core::sim::{simulate_baseband, NoiseSpec};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok { Ok(detail) } else { Err(detail) }
}

fn desk_array() -> AntennaArray {
    AntennaArray::boundary(16, 16, 0.05).unwrap()
}

fn desk_grid(center: [f64; 2]) -> GridGeometry {
    GridGeometry::new(64, 64, [0.0315, 0.0315], center).unwrap()
}

fn plane(z: f64, center_xy: [f64; 2]) -> Scene {
    make_scene(&SceneSpec::Plane { z, extent: 0.08, spacing: 0.001, tilt_deg: 0.0, center_xy }).unwrap()
}

/// Max and mean absolute depth error over the valid pixels.
fn errors(img: &RadarImage, truth: impl Fn(usize) -> f64) -> (f64, f64, usize) {
    let e: Vec<f64> = (0..img.geometry.len()).filter(|&i| img.valid[i]).map(|i| (img.depth[i] - truth(i)).abs()).collect();
    let max = e.iter().copied().fold(0.0, f64::max);
    (max, e.iter().sum::<f64>() / e.len().max(1) as f64, e.len())
}

fn criterion_1() -> Outcome {
    let published_cm = [13.60, 7.32, 3.66, 1.83, 0.93, 0.75];
    let mut worst: f64 = 0.0;
    let mut got = Vec::new();
    for (cfg, want) in standard_configs().iter().zip(published_cm) {
        let d = max_unambiguous_depth(cfg.set.difference(0, 1)).map_err(|e| e.to_string())? * 100.0;
        worst = worst.max((d - want).abs());
        got.push(format!("{}={d:.3}", cfg.label));
    }
    check(worst <= 0.05, format!("{} cm; worst deviation {worst:.4} cm (tolerance 0.05)", got.join(" ")))
}

/// Random flat desk scenes, per-pixel prior uniformly within ±0.9·Δd_max.
fn closed_loop(rng: &mut ChaCha8Rng, scenes: usize, z_range: (f64, f64)) -> Vec<(String, f64)> {
    let array = desk_array();
    let configs = standard_configs();
    let mut all: Vec<f64> = configs.iter().flat_map(|c| c.set.as_slice().to_vec()).collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let union = FrequencySet::new(all.clone()).unwrap();
    let mut worst: Vec<(String, f64)> = configs.iter().map(|c| (c.name.clone(), 0.0)).collect();
    for _ in 0..scenes {
        let z = rng.random_range(z_range.0..=z_range.1);
        let c = [rng.random_range(-0.005..=0.005), rng.random_range(-0.005..=0.005)];
        let bb = simulate_baseband(&plane(z, c), &array, &union, &NoiseSpec::none()).unwrap();
        let g = desk_grid(c);
        for (ci, cfg) in configs.iter().enumerate() {
            let idx: Vec<usize> = cfg.set.as_slice().iter().map(|f| all.iter().position(|g| g == f).unwrap()).collect();
            let sub = bb.select_frequencies(&idx).unwrap();
            let window = 0.9 * max_unambiguous_depth(cfg.set.difference(0, 1)).unwrap();
            let prior: Vec<f64> = (0..g.len()).map(|_| z + rng.random_range(-window..=window)).collect();
            let grid = CandidateGrid::new(g, prior, vec![true; g.len()]).unwrap();
            let img = mm2fsk_reconstruct(&sub, &grid, &array, &cfg.set).unwrap();
            let (max, _, _) = errors(&img, |_| z);
            worst[ci].1 = worst[ci].1.max(max);
        }
    }
    worst
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let worst = closed_loop(&mut rng, 100, (0.45, 0.55));
    let overall = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let detail: Vec<String> = worst.iter().map(|(k, v)| format!("{k}={:.3}", v * 1e3)).collect();
    check(overall < 1e-3, format!("100 scenes at z∈[0.45,0.55] m, max error per config [mm]: {}", detail.join(" ")))
}

fn criterion_3() -> Outcome {
    let array = desk_array();
    let g = desk_grid([0.0, 0.0]);
    let scene = plane(0.30, [0.0, 0.0]);
    let lo = named_frequencies("d0.5").unwrap().set;
    let hi = named_frequencies("d10.0").unwrap().set;
    let scalar = CandidateGrid::scalar(g, 0.40).unwrap();
    let run = |set: &FrequencySet, grid: &CandidateGrid| {
        let bb = simulate_baseband(&scene, &array, set, &NoiseSpec::none()).unwrap();
        magnitude_filter(&fsk2_reconstruct(&bb, grid, &array, set).unwrap(), -14.0).unwrap()
    };
    let (e_lo, _, _) = errors(&run(&lo, &scalar), |_| 0.30);
    let wrapped = run(&hi, &scalar);
    let (e_window, _, _) = errors(&wrapped, |_| 0.40);
    let (e_hi, _, _) = errors(&wrapped, |_| 0.30);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let per_point = CandidateGrid::new(g, (0..g.len()).map(|_| 0.30 + rng.random_range(-0.002..=0.002)).collect(), vec![true; g.len()]).unwrap();
    let (e_mm, _, _) = errors(&run(&hi, &per_point), |_| 0.30);
    check(
        e_lo < 2e-3 && e_window <= 0.0075 && e_mm < 2e-3,
        format!(
            "2FSK Δ0.5 max error {:.3} mm; 2FSK Δ10.0 max |d−0.40| {:.2} mm (max error {:.1} mm); MM-2FSK Δ10.0 max error {:.3} mm",
            e_lo * 1e3,
            e_window * 1e3,
            e_hi * 1e3,
            e_mm * 1e3
        ),
    )
}

fn criterion_4() -> Outcome {
    let cfg = ExperimentConfig::from_toml_str(
        r#"
seed = 100
[scene]
kind = "plane"
z = 0.3
[noise]
snr_db = 20.0
[frequencies]
configs = ["d0.5", "d1.0", "d2.0", "d4.0", "d8.0", "d10.0"]
[prior]
mode = "ground-truth"
error = { kind = "gaussian", sigma = 0.002 }
[reconstruct]
methods = ["mm2fsk"]
[sweep]
seeds = 20
"#,
        &[],
    )
    .map_err(|e| e.to_string())?;
    let (sweep, _) = run_sweep(&cfg, None).map_err(|e| e.to_string())?;
    let trend = &sweep.trends[0];
    let medians: Vec<String> = sweep.entries.iter().map(|e| format!("{}={:.3}", e.label, e.median_p_eroded * 1e3)).collect();
    check(
        trend.spearman <= -0.8,
        format!("median P_eroded [mm] {}; Spearman {:.3}, verdict {}", medians.join(" "), trend.spearman, trend.verdict),
    )
}

fn criterion_5() -> Outcome {
    let array = desk_array();
    let g = desk_grid([0.0, 0.0]);
    let scene = plane(0.30, [0.0, 0.0]);
    let scalar = CandidateGrid::scalar(g, 0.40).unwrap();
    let run = |name: &str| {
        let set = named_frequencies(name).unwrap().set;
        let bb = simulate_baseband(&scene, &array, &set, &NoiseSpec::none()).unwrap();
        magnitude_filter(&fsk3_reconstruct(&bb, &scalar, &array, &set).unwrap(), -14.0).unwrap()
    };
    let (ok_max, _, _) = errors(&run("3fsk-d0.5-d10.0"), |_| 0.30);
    let (_, bad_mean, _) = errors(&run("3fsk-d1.0-d10.0"), |_| 0.30);
    check(
        ok_max < 1e-3 && bad_mean > 1e-2,
        format!("3FSK(Δ0.5,Δ10.0) max error {:.3} mm; 3FSK(Δ1.0,Δ10.0) mean error {:.1} mm", ok_max * 1e3, bad_mean * 1e3),
    )
}

fn criterion_6() -> Outcome {
    let array = desk_array();
    let set = named_frequencies("fscw-16").unwrap().set;
    let resolution = SPEED_OF_LIGHT / (2.0 * set.bandwidth());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_dz: f64 = 0.0;
    let mut lateral_ok = true;
    for _ in 0..5 {
        let target = [rng.random_range(-0.008..0.008), rng.random_range(-0.008..0.008), rng.random_range(0.25..0.35)];
        let bb = simulate_baseband(&Scene::new(vec![PointTarget::unit(target)]), &array, &set, &NoiseSpec::none()).unwrap();
        let spec = VoxelGridSpec { extent: [0.02, 0.02, 0.2], resolution: [21, 21, 201], center: [0.0, 0.0, 0.3] };
        let img = backproject(&bb, &spec, &array, &set).unwrap();
        let g = img.geometry;
        let peak = (0..g.len()).max_by(|&a, &b| img.magnitude[a].total_cmp(&img.magnitude[b])).unwrap();
        let (u, v) = g.to_pixel(target[0], target[1]);
        lateral_ok &= peak == g.index(u.round() as usize, v.round() as usize);
        worst_dz = worst_dz.max((img.depth[peak] - target[2]).abs());
    }
    check(
        worst_dz <= 0.015 && lateral_ok,
        format!(
            "5 targets, 1 mm voxels: worst depth error {:.1} mm (c/2B = {:.1} mm), argmax at target pixel: {lateral_ok}",
            worst_dz * 1e3,
            resolution * 1e3
        ),
    )
}

/// Serial five-loop reference: pixel rows, pixel columns, frequencies, TX, RX.
fn five_loop(bb: &BasebandTensor, grid: &CandidateGrid, array: &AntennaArray, freqs: &FrequencySet) -> Vec<Complex64> {
    let g = grid.geometry;
    let mut out = Vec::new();
    for v in 0..g.height {
        for u in 0..g.width {
            let p = [g.x(u), g.y(v), grid.prior_depth[g.index(u, v)]];
            for (k, f) in freqs.as_slice().iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (t, tx) in array.tx().iter().enumerate() {
                    for (r, rx) in array.rx().iter().enumerate() {
                        let ph = 2.0 * std::f64::consts::PI * f * round_trip_distance(tx, rx, &p) / SPEED_OF_LIGHT;
                        acc += bb.get(t, r, k) * Complex64::new(ph.cos(), ph.sin());
                    }
                }
                out.push(acc / array.pair_count() as f64);
            }
        }
    }
    out
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (nt, nr) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let mut pos = |n: usize| -> Vec<Vec3> {
            (0..n).map(|_| [rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.005..0.005)]).collect()
        };
        let array = AntennaArray::new(pos(nt), pos(nr)).unwrap();
        let nf = rng.random_range(1..=4);
        let mut f: Vec<f64> = (0..nf).map(|_| rng.random_range(72e9..82e9)).collect();
        f.sort_by(f64::total_cmp);
        f.dedup();
        let freqs = FrequencySet::new(f).unwrap();
        let (w, h) = (rng.random_range(1..=32), rng.random_range(1..=32));
        let g = GridGeometry::new(w, h, [0.04, 0.03], [0.001, -0.002]).unwrap();
        let depth: Vec<f64> = (0..g.len()).map(|_| rng.random_range(0.2..0.6)).collect();
        let grid = CandidateGrid::new(g, depth, vec![true; g.len()]).unwrap();
        let data: Vec<Complex64> =
            (0..nt * nr * freqs.len()).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let bb = BasebandTensor::new(nt, nr, freqs.len(), data).unwrap();
        let fast = correlate_grid(&bb, &grid, &array, &freqs).unwrap();
        let slow = five_loop(&bb, &grid, &array, &freqs);
        let diff = fast.data.iter().zip(&slow).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let norm = slow.iter().map(|c| c.norm()).fold(0.0, f64::max);
        worst = worst.max(diff / norm);
    }
    check(worst <= 1e-12, format!("10 random instances, worst relative ‖ΔC‖∞/‖C‖∞ = {worst:.2e}"))
}

fn circumcircle_violations(px: &[[f64; 2]], tris: &[[usize; 3]]) -> usize {
    let mut bad = 0;
    for t in tris {
        let (a, b, c) = (px[t[0]], px[t[1]], px[t[2]]);
        let d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]));
        let sq = |p: [f64; 2]| p[0] * p[0] + p[1] * p[1];
        let ux = (sq(a) * (b[1] - c[1]) + sq(b) * (c[1] - a[1]) + sq(c) * (a[1] - b[1])) / d;
        let uy = (sq(a) * (c[0] - b[0]) + sq(b) * (a[0] - c[0]) + sq(c) * (b[0] - a[0])) / d;
        let r2 = (a[0] - ux).powi(2) + (a[1] - uy).powi(2);
        bad += px
            .iter()
            .enumerate()
            .filter(|(i, p)| !t.contains(i) && (p[0] - ux).powi(2) + (p[1] - uy).powi(2) < r2 * (1.0 - 1e-9))
            .count();
    }
    bad
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut violations = 0;
    for _ in 0..50 {
        let n = rng.random_range(3..=500);
        let px: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)]).collect();
        let mesh = triangulate(&TriangleMesh { vertices: px.iter().map(|p| [p[0], p[1], 1.0]).collect(), triangles: Vec::new(), source_pixels: px.clone() })
            .map_err(|e| e.to_string())?;
        violations += circumcircle_violations(&px, &mesh.triangles);
    }

    // Tilted plane seen by the desk camera, through the full prior pipeline.
    let spec = SceneSpec::Plane { z: 0.3, extent: 0.2, spacing: 0.001, tilt_deg: 10.0, center_xy: [0.0, 0.0] };
    let surface = spec.surface().unwrap();
    let intr = CameraIntrinsics::new(200.0, 200.0, 79.5, 59.5).unwrap();
    let pose = Extrinsics::look_at([0.06, 0.0, 0.0], [0.0, 0.0, 0.3], [0.0, 1.0, 0.0]).unwrap();
    let map = render_surface_depth(&surface, &intr, &pose, 160, 120).unwrap();
    let g = desk_grid([0.0, 0.0]);
    let prior = build_prior(&map, &intr, &pose, &g, &RasterOptions::default()).unwrap();
    let plane_err = (0..g.len())
        .filter(|&i| prior.valid[i])
        .map(|i| (prior.prior_depth[i] - surface.depth_at(g.x(i % g.width), g.y(i / g.width)).unwrap()).abs())
        .fold(0.0, f64::max);

    let mut chamfer_err: f64 = 0.0;
    for _ in 0..10 {
        let (na, nb) = (rng.random_range(1..=2000), rng.random_range(1..=2000));
        let mut cloud = |n: usize| -> Vec<Vec3> {
            (0..n).map(|_| [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(0.2..0.4)]).collect()
        };
        let (a, b) = (cloud(na), cloud(nb));
        let fast = chamfer_one_way(&a, &b).unwrap();
        let slow = chamfer_brute_force(&a, &b).unwrap();
        chamfer_err = chamfer_err.max((fast - slow).abs() / slow);
    }
    check(
        violations == 0 && plane_err <= 1e-6 && prior.valid_count() == g.len() && chamfer_err <= 1e-12,
        format!(
            "Delaunay circumcircle violations {violations} over 50 instances; planar prior max error {plane_err:.1e} m over {} pixels; Chamfer relative error {chamfer_err:.1e}",
            prior.valid_count()
        ),
    )
}

const DETERMINISM_CONFIG: &str = r#"
seed = 11
[scene]
kind = "step"
levels = [0.29, 0.31]
edge_x = 0.002
[noise]
snr_db = 25.0
[frequencies]
configs = ["d0.5", "d10.0", "3fsk-d0.5-d10.0"]
[prior]
mode = "camera"
[prior.camera]
width = 160
height = 120
intrinsics = { fu = 200.0, fv = 200.0, cu = 79.5, cv = 59.5 }
eye = [0.06, 0.0, 0.0]
target = [0.0, 0.0, 0.3]
depth_noise = 0.0005
dropout = 0.1
[reconstruct]
methods = ["2fsk", "mm2fsk", "3fsk", "bp"]
[reconstruct.bp]
frequencies = "fscw-8"
voxels = { extent = [0.0315, 0.0315, 0.06], resolution = [32, 32, 31], center = [0.0, 0.0, 0.3] }
[sweep]
seeds = 2
"#;

fn run_cli(dir: &Path, threads: usize) -> Result<(), String> {
    let config = dir.join("experiment.toml");
    std::fs::write(&config, DETERMINISM_CONFIG).map_err(|e| e.to_string())?;
    let out = dir.join("out");
    for (cmd, extra) in [("simulate", None), ("prior", None), ("reconstruct", Some("--save-correlation")), ("eval", None), ("sweep", None), ("report", None)] {
        let mut c = Command::new(env!("CARGO_BIN_EXE_mmfsk"));
        c.arg("--config").arg(&config).arg("--output").arg(&out).arg("--threads").arg(threads.to_string()).arg(cmd);
        c.args(extra).env("RUST_LOG", "warn");
        let status = c.output().map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("{cmd} failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
    }
    Ok(())
}

fn criterion_9() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_cli(a.path(), 1)?;
    run_cli(b.path(), 4)?;
    let list = |d: &Path| -> Vec<String> {
        let mut v: Vec<String> =
            std::fs::read_dir(d.join("out")).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
        v.sort();
        v
    };
    let (fa, fb) = (list(a.path()), list(b.path()));
    if fa != fb {
        return Err(format!("output file sets differ: {fa:?} vs {fb:?}"));
    }
    let differing: Vec<&String> = fa
        .iter()
        .filter(|n| std::fs::read(a.path().join("out").join(n)).unwrap() != std::fs::read(b.path().join("out").join(n)).unwrap())
        .collect();
    check(
        differing.is_empty(),
        format!("{} files from simulate/prior/reconstruct/eval/sweep/report at 1 vs 4 threads; differing: {differing:?}", fa.len()),
    )
}

fn criterion_10() -> Outcome {
    let array = AntennaArray::boundary(94, 94, 0.5).unwrap();
    let set = named_frequencies("d10.0").unwrap().set;
    let scene = make_scene(&SceneSpec::Plane { z: 0.3, extent: 0.3, spacing: 0.003, tilt_deg: 0.0, center_xy: [0.0, 0.0] }).unwrap();
    let bb = simulate_baseband(&scene, &array, &set, &NoiseSpec::none()).unwrap();
    let g = GridGeometry::new(301, 301, [0.3, 0.3], [0.0, 0.0]).unwrap();
    let scalar = CandidateGrid::scalar(g, 0.30).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let per_pixel = CandidateGrid::new(g, (0..g.len()).map(|_| 0.30 + rng.random_range(-0.002..=0.002)).collect(), vec![true; g.len()]).unwrap();

    let t = Instant::now();
    fsk2_reconstruct(&bb, &scalar, &array, &set).unwrap();
    let t_2fsk = t.elapsed().as_secs_f64();
    let t = Instant::now();
    mm2fsk_reconstruct(&bb, &per_pixel, &array, &set).unwrap();
    let t_mm = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let spec = VoxelGridSpec { extent: [0.3, 0.3, 0.2], resolution: [301, 301, 201], center: [0.0, 0.0, 0.3] };
    backproject(&bb, &spec, &array, &set).unwrap();
    let t_bp = t.elapsed().as_secs_f64();
    let ratio = t_bp / t_2fsk.max(t_mm);
    check(
        ratio >= 50.0,
        format!("94×94 pairs, 301×301 grid: 2FSK {t_2fsk:.2} s, MM-2FSK {t_mm:.2} s, BP 301×301×201 {t_bp:.1} s, ratio {ratio:.0}"),
    )
}

fn main() {
    // `cargo test -- <filter>` style arguments select criteria by number.
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("unambiguous depth per configuration", criterion_1),
        ("closed-loop recovery", criterion_2),
        ("wrap-failure demonstration", criterion_3),
        ("error trend over frequency difference", criterion_4),
        ("3FSK two-stage behavior", criterion_5),
        ("backprojection sanity", criterion_6),
        ("oracle equivalence", criterion_7),
        ("geometry oracles", criterion_8),
        ("determinism", criterion_9),
        ("runtime ordering", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {n:>2} {name}: PASS ({secs:.1} s) {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} {name}: FAIL ({secs:.1} s) {d}");
            }
        }
        if n == 2 {
            // Informational: the same experiment closer to the array.
            let mut rng = ChaCha8Rng::seed_from_u64(20);
            let near = closed_loop(&mut rng, 10, (0.25, 0.35));
            let detail: Vec<String> = near.iter().map(|(k, v)| format!("{k}={:.3}", v * 1e3)).collect();
            println!("  info: 10 scenes at z∈[0.25,0.35] m, max error per config [mm]: {}", detail.join(" "));
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
