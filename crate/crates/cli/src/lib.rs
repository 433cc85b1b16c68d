//! Library side of the `wgdiode` command: configuration, dispatch to the
//! simulation engines and artifact writing.

pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use waveguide_diode::cwdrive::{solve_from_ground, FluxPair};
use waveguide_diode::stochastic::{evolve_master_equation, mean_field_fluxes, run_ensemble, EnsembleSummary};
use waveguide_diode::sweep::{self, diode_metrics, DiodeMetrics, OptimizeOptions, Optimum, SweepResult};
use waveguide_diode::{cwdrive, DensityMatrix};

pub use config::{parse_config, parse_config_text, Cli, Format, Mode, RunConfig};

/// Integrator allowance added to the statistical bound in `validate-noise`.
pub const DISCRETIZATION_ALLOWANCE: f64 = 1e-5;
/// Number of standard errors accepted in `validate-noise`.
pub const SIGMA_BOUND: f64 = 3.0;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{message}")]
    Config { key: Option<String>, message: String },
    #[error(transparent)]
    Numerical(#[from] waveguide_diode::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Output(String),
}

impl CliError {
    pub fn key(&self) -> Option<&str> {
        match self {
            Self::Config { key, .. } => key.as_deref(),
            _ => None,
        }
    }

    /// 2 for configuration problems, 3 for everything raised while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 2,
            _ => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::Config { .. } => "config",
            Self::Numerical(_) => "numerical",
            Self::Io(_) | Self::Output(_) => "io",
        }
    }

    /// `{"error": {"kind": ..., "key": ..., "message": ...}}`.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": { "kind": self.kind(), "key": self.key(), "message": self.to_string() }
        })
        .to_string()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SteadyReport {
    pub phi_r_out: f64,
    pub phi_l_out: f64,
    pub input_flux: f64,
    pub metrics: DiodeMetrics,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct NoiseValidation {
    pub ensemble: EnsembleSummary,
    /// Averaged master equation over the same window.
    pub mean_field: FluxPair,
    /// `(ensemble − mean field) / standard error` per mode.
    pub z_r: f64,
    pub z_l: f64,
    /// Trace distance between the ensemble mean state and the averaged
    /// master equation at `t_final`.
    pub state_trace_distance: f64,
    pub within_bound: bool,
}

#[derive(Debug, Clone)]
pub enum Artifact {
    Steady(SteadyReport),
    Grid(SweepResult),
    Curve(Vec<Optimum>),
    Validation(NoiseValidation),
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>, CliError> {
    let mut s = serde_json::to_vec_pretty(v).map_err(|e| CliError::Output(e.to_string()))?;
    s.push(b'\n');
    Ok(s)
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

impl Artifact {
    pub fn render(&self, format: Format) -> Result<Vec<u8>, CliError> {
        match (self, format) {
            (Self::Steady(r), Format::Json) => to_json(r),
            (Self::Grid(g), Format::Json) => to_json(g),
            (Self::Curve(c), Format::Json) => to_json(c),
            (Self::Validation(v), Format::Json) => to_json(v),
            (Self::Grid(g), Format::Csv) => {
                let mut buf = Vec::new();
                g.write_csv(&mut buf)?;
                Ok(buf)
            }
            (Self::Curve(c), Format::Csv) => {
                let mut buf = Vec::new();
                sweep::write_noise_curve_csv(c, &mut buf)?;
                Ok(buf)
            }
            (Self::Steady(r), Format::Csv) => Ok(csv_bytes(
                &["phi_r_out", "phi_l_out", "input_flux", "n_l_out_mirror", "R", "T", "D", "D_clamped", "degenerate"],
                &[vec![
                    num(r.phi_r_out),
                    num(r.phi_l_out),
                    num(r.input_flux),
                    num(r.metrics.n_l_out_mirror),
                    num(r.metrics.rectification),
                    num(r.metrics.transmission),
                    num(r.metrics.efficiency),
                    num(r.metrics.efficiency_clamped),
                    r.degenerate.to_string(),
                ]],
            )),
            (Self::Validation(v), Format::Csv) => Ok(csv_bytes(
                &[
                    "phi_r_ensemble",
                    "phi_r_stderr",
                    "phi_r_mean_field",
                    "phi_l_ensemble",
                    "phi_l_stderr",
                    "phi_l_mean_field",
                    "state_trace_distance",
                    "nonstationary",
                    "within_bound",
                ],
                &[vec![
                    num(v.ensemble.phi_r_out),
                    num(v.ensemble.phi_r_stderr),
                    num(v.mean_field.phi_r_out),
                    num(v.ensemble.phi_l_out),
                    num(v.ensemble.phi_l_stderr),
                    num(v.mean_field.phi_l_out),
                    num(v.state_trace_distance),
                    v.ensemble.nonstationary.to_string(),
                    v.within_bound.to_string(),
                ]],
            )),
        }
    }
}

fn steady(cfg: &RunConfig) -> Result<Artifact, CliError> {
    let arr = cfg.device()?;
    let drive = cfg.drive()?;
    let fwd = solve_from_ground(&arr, &drive)?;
    let bwd = solve_from_ground(&arr.mirrored(), &drive)?;
    let metrics = diode_metrics(fwd.fluxes.phi_r_out, bwd.fluxes.phi_r_out, drive.input_flux())?;
    Ok(Artifact::Steady(SteadyReport {
        phi_r_out: fwd.fluxes.phi_r_out,
        phi_l_out: fwd.fluxes.phi_l_out,
        input_flux: drive.input_flux(),
        metrics,
        degenerate: fwd.degenerate || bwd.degenerate,
    }))
}

fn grid_artifact(result: SweepResult) -> Result<Artifact, CliError> {
    if result.n_failed() == result.cells.len() {
        let msg = result.cells.first().and_then(|c| c.flags.failed.clone()).unwrap_or_default();
        return Err(CliError::Numerical(waveguide_diode::Error::InvalidParameter(format!(
            "every grid cell failed; first error: {msg}"
        ))));
    }
    Ok(Artifact::Grid(result))
}

fn validate_noise(cfg: &RunConfig) -> Result<Artifact, CliError> {
    let arr = cfg.device()?;
    let drive = cfg.drive()?;
    let spec = cfg.ensemble()?;
    let ensemble = run_ensemble(&spec, &arr, &drive)?;
    let summary = ensemble.summary();
    let mean_field = mean_field_fluxes(&arr, &drive, spec.t_final())?;
    let (l, _, _) = cwdrive::generator(&arr, &drive);
    let exact = evolve_master_equation(&l, &DensityMatrix::ground(arr.n_emitters()), spec.t_final())?;
    let state_trace_distance = ensemble.mean_state()?.trace_distance(&exact);
    let z = |diff: f64, se: f64| {
        if se > 0.0 {
            diff / se
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY * diff.signum()
        }
    };
    let dr = summary.phi_r_out - mean_field.phi_r_out;
    let dl = summary.phi_l_out - mean_field.phi_l_out;
    let ok = |d: f64, se: f64| d.abs() <= SIGMA_BOUND * se + DISCRETIZATION_ALLOWANCE;
    Ok(Artifact::Validation(NoiseValidation {
        within_bound: ok(dr, summary.phi_r_stderr) && ok(dl, summary.phi_l_stderr),
        z_r: z(dr, summary.phi_r_stderr),
        z_l: z(dl, summary.phi_l_stderr),
        ensemble: summary,
        mean_field,
        state_trace_distance,
    }))
}

/// Runs the configured simulation on the current rayon pool.
pub fn execute(cfg: &RunConfig) -> Result<Artifact, CliError> {
    match cfg.mode {
        Mode::Steady => steady(cfg),
        Mode::SweepCw => grid_artifact(sweep::cw_sweep(&cfg.grid()?, &cfg.drive()?)),
        Mode::SweepPhoton => grid_artifact(sweep::single_photon_sweep(
            &cfg.grid()?,
            &cfg.pulse()?,
            cfg.protocol.into(),
            &cfg.integration()?,
        )),
        Mode::OptimizeNoise => {
            let opts = OptimizeOptions { grid: cfg.grid()?, restarts: cfg.restarts, ..Default::default() };
            Ok(Artifact::Curve(sweep::noise_curve(cfg.amplitude, &cfg.noise_ratios, &opts)?))
        }
        Mode::ValidateNoise => validate_noise(cfg),
    }
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    wall_time_seconds: f64,
}

/// Sidecar path `<out>.meta.json`.
pub fn metadata_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Full run: thread pool sized by `workers`, engine dispatch, artifact and
/// sidecar output. Without an output path the artifact goes to `stdout` and
/// no sidecar is written.
pub fn run(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Output(format!("cannot start worker pool: {e}")))?;
    let artifact = pool.install(|| execute(cfg))?;
    let bytes = artifact.render(cfg.format)?;
    match &cfg.out {
        Some(path) => {
            std::fs::write(path, &bytes)?;
            let meta = Metadata {
                tool: "wgdiode",
                version: env!("CARGO_PKG_VERSION"),
                config: cfg,
                wall_time_seconds: start.elapsed().as_secs_f64(),
            };
            std::fs::write(metadata_path(path), to_json(&meta)?)?;
        }
        None => stdout.write_all(&bytes)?,
    }
    Ok(())
}
