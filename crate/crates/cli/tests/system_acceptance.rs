//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//! Run with `cargo test -p waveguide-diode-cli --test system_acceptance`.

use std::f64::consts::PI;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waveguide_diode::cwdrive::{solve_from_ground, CwDrive};
use waveguide_diode::fockpulse::{integrate_pulse, IntegrationOptions, PulseSpec};
use waveguide_diode::sweep::{self, OptimizeOptions, PhotonProtocol, SweepGrid, SweepResult};
use waveguide_diode::{DensityMatrix, Direction, EmitterArray, C64};
use wgdiode::{execute, parse_config_text, Artifact};

const AMPLITUDE_SQ: f64 = 0.05;

struct Report {
    failures: usize,
}

impl Report {
    fn record(&mut self, id: u32, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("criterion {id:>2}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn default_drive() -> CwDrive {
    CwDrive::right_going(AMPLITUDE_SQ.sqrt())
}

fn max_abs(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, |m, v| m.max(v.abs()))
}

fn on_resonance(result: &SweepResult) -> impl Iterator<Item = f64> + '_ {
    result.cells.iter().filter(|c| c.delta == 0.0).map(|c| c.metrics.as_ref().map_or(f64::NAN, |m| m.rectification))
}

fn criterion_1(cw: &SweepResult) -> (bool, String, f64) {
    let best = cw.best().expect("nonempty sweep");
    let d = best.efficiency();
    (d > 0.3 && d < 0.70, format!("max D = {d:.6} at delta = {}, kL = {:.4}", best.delta, best.kl), d)
}

fn criterion_2(cw: &SweepResult, ground: &SweepResult, inverted: &SweepResult) -> (bool, String) {
    let r_cw = max_abs(on_resonance(cw));
    let r_g = max_abs(on_resonance(ground));
    let r_i = max_abs(on_resonance(inverted));
    let worst = r_cw.max(r_g).max(r_i);
    (worst <= 1e-9, format!("max |R| at zero detuning: cw {r_cw:.2e}, ground {r_g:.2e}, inverted {r_i:.2e}"))
}

fn criterion_3(rng: &mut ChaCha8Rng) -> (bool, String) {
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d1 = rng.gen_range(-3.0..3.0);
        let d2 = rng.gen_range(-3.0..3.0);
        let kl = rng.gen_range(0.05..2.0 * PI - 0.05);
        let e = C64::from_polar(rng.gen_range(0.01..1.5), rng.gen_range(0.0..2.0 * PI));
        let arr = EmitterArray::pair(1.0, kl, d1, d2).expect("valid device");
        let drive = CwDrive::new(e, Direction::RightGoing, 0.0).expect("valid drive");
        let sol = solve_from_ground(&arr, &drive).expect("steady state");
        worst = worst.max((sol.fluxes.total() - e.norm_sqr()).abs() / e.norm_sqr());
    }
    (worst <= 1e-6, format!("worst relative flux error {worst:.2e} over 100 draws"))
}

fn criterion_4(ground: &SweepResult, inverted: &SweepResult) -> (bool, String) {
    let worst =
        |s: &SweepResult| s.cells.iter().map(|c| c.conservation_error.unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
    let (g, i) = (worst(ground), worst(inverted));
    let failed = ground.n_failed() + inverted.n_failed();
    (
        g <= 1e-3 && i <= 1e-3 && failed == 0,
        format!("worst excitation error: ground {g:.2e}, inverted {i:.2e}; failed cells {failed}"),
    )
}

fn criterion_5(rng: &mut ChaCha8Rng, pulse: &PulseSpec, opts: &IntegrationOptions) -> (bool, String) {
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let a = rng.gen_range(-3.0..3.0);
        let b = rng.gen_range(-3.0..3.0);
        let kl = rng.gen_range(0.05..2.0 * PI - 0.05);
        let t = |d1, d2| {
            let arr = EmitterArray::pair(1.0, kl, d1, d2).expect("valid device");
            integrate_pulse(&arr, pulse, &DensityMatrix::ground(2), opts).expect("pulse run").n_r_out
        };
        worst = worst.max((t(a, b) - t(b, a)).abs());
    }
    (worst <= 1e-6, format!("worst |T(d1,d2) - T(d2,d1)| = {worst:.2e} over 20 draws"))
}

fn criterion_6() -> (bool, String) {
    let e_sq: f64 = 1e-4;
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for delta in [0.0, 1.0, 10.0] {
        let arr = EmitterArray::new(1.0, vec![0.0], vec![delta]).expect("single emitter");
        let sol = solve_from_ground(&arr, &CwDrive::right_going(e_sq.sqrt())).expect("steady state");
        let t = sol.fluxes.phi_r_out / e_sq;
        let expected = delta * delta / (delta * delta + 1.0);
        worst = worst.max((t - expected).abs());
        parts.push(format!("T({delta}) = {t:.6}"));
    }
    (worst <= 1e-3, format!("{}; worst deviation {worst:.2e}", parts.join(", ")))
}

fn criterion_7() -> (bool, String) {
    let cfg = parse_config_text(
        "mode = \"validate-noise\"\n\
         delta = [0.3, -0.2]\n\
         kl = 1.0\n\
         noise_intensity = 0.5\n\
         trajectories = 10000\n\
         dt = 0.001\n\
         t_final = 5.0\n\
         seed = 2024\n",
    )
    .expect("valid config");
    let Artifact::Validation(v) = execute(&cfg).expect("ensemble run") else { unreachable!() };
    let pass = v.state_trace_distance < 0.03 && v.z_r.abs() <= 3.0 && v.z_l.abs() <= 3.0;
    (
        pass,
        format!(
            "trace distance {:.4}; phi_R {:.6} vs {:.6} (z = {:.2}); phi_L {:.6} vs {:.6} (z = {:.2})",
            v.state_trace_distance,
            v.ensemble.phi_r_out,
            v.mean_field.phi_r_out,
            v.z_r,
            v.ensemble.phi_l_out,
            v.mean_field.phi_l_out,
            v.z_l
        ),
    )
}

fn criterion_8(grid_max: f64) -> (bool, String) {
    let ratios = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0];
    let curve = sweep::noise_curve(AMPLITUDE_SQ.sqrt(), &ratios, &OptimizeOptions::default()).expect("noise curve");
    let values: Vec<f64> = curve.iter().map(|o| o.d_opt).collect();
    let monotone = values.windows(2).all(|w| w[1] <= w[0] + 1e-9);
    let endpoint = (values[0] - grid_max).abs();
    let listing: Vec<String> = curve.iter().map(|o| format!("{}:{:.4}", o.noise_ratio, o.d_opt)).collect();
    (
        monotone && endpoint <= 1e-3,
        format!(
            "D_opt [{}]; nonincreasing {monotone}; |D_opt(0) - max D| = {endpoint:.4} (optimum at delta {:.5}, kL {:.5}, degenerate {})",
            listing.join(", "),
            curve[0].delta_opt,
            curve[0].kl_opt,
            curve[0].degenerate
        ),
    )
}

fn criterion_9(inverted: &SweepResult) -> (bool, String) {
    let metrics = || inverted.cells.iter().filter_map(|c| c.metrics.as_ref());
    let r = metrics().map(|m| m.rectification).fold(f64::NEG_INFINITY, f64::max);
    let d = metrics().map(|m| m.efficiency_clamped).fold(f64::NEG_INFINITY, f64::max);
    (r > 0.1 && d > 0.0, format!("max R = {r:.4}, max D_clamped = {d:.4}"))
}

fn run_binary(args: &[&str], dir: &std::path::Path, name: &str) -> Vec<u8> {
    let out = dir.join(name);
    let status =
        Command::new(env!("CARGO_BIN_EXE_wgdiode")).args(args).arg("--out").arg(&out).status().expect("binary runs");
    assert!(status.success(), "wgdiode {args:?} failed");
    std::fs::read(out).expect("artifact written")
}

fn criterion_10() -> (bool, String) {
    let dir = tempfile::tempdir().expect("temp dir");
    let cases: [(&str, Vec<&str>); 4] = [
        ("sweep-cw", vec!["sweep-cw"]),
        ("sweep-photon", vec!["sweep-photon", "--delta-points", "5", "--kl-points", "4"]),
        ("optimize-noise", vec!["optimize-noise", "--delta-points", "9", "--kl-points", "9", "--noise-ratios", "0,1"]),
        (
            "validate-noise",
            vec![
                "validate-noise",
                "--noise-intensity",
                "0.5",
                "--trajectories",
                "200",
                "--t-final",
                "2",
                "--seed",
                "7",
            ],
        ),
    ];
    let mut mismatched = Vec::new();
    for (name, args) in &cases {
        let mut outputs = Vec::new();
        for (i, workers) in ["1", "1", "4"].iter().enumerate() {
            let mut a = args.clone();
            a.extend(["--workers", workers]);
            outputs.push(run_binary(&a, dir.path(), &format!("{name}-{i}.csv")));
        }
        if outputs.iter().any(|o| o != &outputs[0]) {
            mismatched.push(*name);
        }
    }
    (
        mismatched.is_empty(),
        format!("{} modes compared over runs with 1, 1 and 4 workers; mismatched {mismatched:?}", cases.len()),
    )
}

fn main() -> ExitCode {
    let mut report = Report { failures: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    let grid = SweepGrid::default();
    let pulse = PulseSpec::exponential(Direction::RightGoing, 2.0).expect("pulse");
    let opts = IntegrationOptions::default();

    let start = Instant::now();
    let cw = sweep::cw_sweep(&grid, &default_drive());
    let cw_time = start.elapsed().as_secs_f64();
    let (pass, detail, grid_max) = criterion_1(&cw);
    report.record(1, pass, format!("{detail} ({cw_time:.1} s)"));

    let start = Instant::now();
    let ground = sweep::single_photon_sweep(&grid, &pulse, PhotonProtocol::Ground, &opts);
    let inverted = sweep::single_photon_sweep(&grid, &pulse, PhotonProtocol::Inverted, &opts);
    let photon_time = start.elapsed().as_secs_f64();

    let (pass, detail) = criterion_2(&cw, &ground, &inverted);
    report.record(2, pass, detail);
    let (pass, detail) = criterion_3(&mut rng);
    report.record(3, pass, detail);
    let (pass, detail) = criterion_4(&ground, &inverted);
    report.record(4, pass, format!("{detail} ({photon_time:.1} s for both sweeps)"));
    let (pass, detail) = criterion_5(&mut rng, &pulse, &opts);
    report.record(5, pass, detail);
    let (pass, detail) = criterion_6();
    report.record(6, pass, detail);

    let start = Instant::now();
    let (pass, detail) = criterion_7();
    report.record(7, pass, format!("{detail} ({:.1} s)", start.elapsed().as_secs_f64()));

    let start = Instant::now();
    let (pass, detail) = criterion_8(grid_max);
    report.record(8, pass, format!("{detail} ({:.1} s)", start.elapsed().as_secs_f64()));

    let (pass, detail) = criterion_9(&inverted);
    report.record(9, pass, detail);
    let (pass, detail) = criterion_10();
    report.record(10, pass, detail);

    println!("{} of 10 criteria failed", report.failures);
    if report.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
