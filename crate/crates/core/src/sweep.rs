//! Diode figures of merit and scans over the detuning of the first emitter
//! and the inter-emitter phase `kL`.
//!
//! Every cell is evaluated twice: the device as given, pumped from the left
//! (right-going input), and its mirror image pumped the same way, which
//! stands in for pumping the original from the right. With forward
//! transmitted count `N_R` and backward transmitted count `N_L'`:
//!
//! ```text
//! R = (N_R − N_L') / (N_R + N_L'),   T = N_R / N_in,   D = R·T
//! ```

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::cwdrive::{solve_from_ground, CwDrive};
use crate::fockpulse::{integrate_pulse, inverted_initial, IntegrationOptions, PulseSpec};
use crate::model::{DensityMatrix, Direction, EmitterArray};
use crate::neldermead::{self, NelderMeadOptions};
use crate::{Error, Result};

/// Tolerance on photon-number conservation per single-photon cell.
pub const CONSERVATION_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiodeMetrics {
    pub n_r_out: f64,
    pub n_l_out_mirror: f64,
    pub rectification: f64,
    pub transmission: f64,
    pub efficiency: f64,
    pub efficiency_clamped: f64,
    /// Both transmitted counts vanish; `R` is reported as zero.
    pub dark: bool,
}

/// Metrics from the forward and backward transmitted counts.
pub fn diode_metrics(forward: f64, backward: f64, input_norm: f64) -> Result<DiodeMetrics> {
    if !(input_norm > 0.0 && input_norm.is_finite()) {
        return Err(Error::InvalidParameter(format!("input norm must be positive, got {input_norm}")));
    }
    if !(forward.is_finite() && backward.is_finite()) {
        return Err(Error::InvalidParameter("transmitted counts must be finite".into()));
    }
    let sum = forward + backward;
    let dark = sum.abs() <= f64::EPSILON * input_norm;
    let rectification = if dark { 0.0 } else { ((forward - backward) / sum).clamp(-1.0, 1.0) };
    let transmission = forward / input_norm;
    let efficiency = rectification * transmission;
    Ok(DiodeMetrics {
        n_r_out: forward,
        n_l_out_mirror: backward,
        rectification,
        transmission,
        efficiency,
        efficiency_clamped: efficiency.max(0.0),
        dark,
    })
}

/// Cell coordinates. `Δ2` is the same for every cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepGrid {
    pub delta_values: Vec<f64>,
    pub kl_values: Vec<f64>,
    pub delta2: f64,
    pub gamma: f64,
}

impl Default for SweepGrid {
    /// `Δ ∈ [−3, 3]`, `kL ∈ [0.05, 2π − 0.05]`, 61 × 61, `γ = 1`.
    fn default() -> Self {
        Self::uniform((-3.0, 3.0), 61, (0.05, 2.0 * PI - 0.05), 61).expect("valid default grid")
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl SweepGrid {
    pub fn uniform(delta: (f64, f64), n_delta: usize, kl: (f64, f64), n_kl: usize) -> Result<Self> {
        Self::new(linspace(delta.0, delta.1, n_delta), linspace(kl.0, kl.1, n_kl), 0.0, 1.0)
    }

    pub fn new(delta_values: Vec<f64>, kl_values: Vec<f64>, delta2: f64, gamma: f64) -> Result<Self> {
        if delta_values.is_empty() || kl_values.is_empty() {
            return Err(Error::InvalidParameter("sweep grid needs at least one Δ and one kL".into()));
        }
        if let Some(k) = kl_values.iter().find(|&&k| !(k > 0.0 && k < 2.0 * PI)) {
            return Err(Error::InvalidParameter(format!("kL values must lie in (0, 2π), got {k}")));
        }
        if delta_values.iter().any(|d| !d.is_finite()) || !delta2.is_finite() {
            return Err(Error::InvalidParameter("detunings must be finite".into()));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self { delta_values, kl_values, delta2, gamma })
    }

    pub fn len(&self) -> usize {
        self.delta_values.len() * self.kl_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells in row-major order, `Δ` outer.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.delta_values.iter().flat_map(|&d| self.kl_values.iter().map(move |&k| (d, k))).collect()
    }

    pub fn device(&self, delta: f64, kl: f64) -> Result<EmitterArray> {
        EmitterArray::pair(self.gamma, kl, delta, self.delta2)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CellFlags {
    /// Non-unique steady state; the one reached from `|g,g⟩` was used.
    pub degenerate: bool,
    /// Excitation left in the emitters at the end of a pulse run.
    pub residual_warning: bool,
    /// Photon-number bookkeeping off by more than [`CONSERVATION_TOL`].
    pub nonconserving: bool,
    /// Solver error message, if the cell could not be evaluated.
    pub failed: Option<String>,
}

impl CellFlags {
    fn label(&self, dark: bool) -> String {
        let mut parts = Vec::new();
        if let Some(msg) = &self.failed {
            parts.push(format!("failed: {msg}"));
        }
        if dark {
            parts.push("dark".to_string());
        }
        if self.degenerate {
            parts.push("degenerate".to_string());
        }
        if self.residual_warning {
            parts.push("residual".to_string());
        }
        if self.nonconserving {
            parts.push("nonconserving".to_string());
        }
        parts.join("|")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub delta: f64,
    pub kl: f64,
    /// `None` when the cell failed.
    pub metrics: Option<DiodeMetrics>,
    pub flags: CellFlags,
    /// Largest `|out + residual − expected|` of the two runs (pulse sweeps only).
    pub conservation_error: Option<f64>,
}

impl CellResult {
    fn failed(delta: f64, kl: f64, err: Error) -> Self {
        Self {
            delta,
            kl,
            metrics: None,
            flags: CellFlags { failed: Some(err.to_string()), ..Default::default() },
            conservation_error: None,
        }
    }

    pub fn efficiency(&self) -> f64 {
        self.metrics.map_or(f64::NAN, |m| m.efficiency)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub grid: SweepGrid,
    pub cells: Vec<CellResult>,
}

fn fmt_f64(x: f64) -> String {
    // Shortest representation that parses back to the same value.
    format!("{x:?}")
}

impl SweepResult {
    pub fn cell(&self, i_delta: usize, i_kl: usize) -> &CellResult {
        &self.cells[i_delta * self.grid.kl_values.len() + i_kl]
    }

    /// Highest efficiency over cells that evaluated.
    pub fn best(&self) -> Option<&CellResult> {
        self.cells.iter().filter(|c| c.metrics.is_some()).max_by(|a, b| a.efficiency().total_cmp(&b.efficiency()))
    }

    pub fn n_failed(&self) -> usize {
        self.cells.iter().filter(|c| c.metrics.is_none()).count()
    }

    /// Columns `delta,kl,n_r_out,n_l_out_mirror,R,T,D,D_clamped,flags`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["delta", "kl", "n_r_out", "n_l_out_mirror", "R", "T", "D", "D_clamped", "flags"])?;
        for c in &self.cells {
            let m = c.metrics;
            let col = |f: fn(&DiodeMetrics) -> f64| m.as_ref().map_or(String::new(), |m| fmt_f64(f(m)));
            wtr.write_record([
                fmt_f64(c.delta),
                fmt_f64(c.kl),
                col(|m| m.n_r_out),
                col(|m| m.n_l_out_mirror),
                col(|m| m.rectification),
                col(|m| m.transmission),
                col(|m| m.efficiency),
                col(|m| m.efficiency_clamped),
                c.flags.label(m.is_some_and(|m| m.dark)),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Steady-state metrics of one cw cell.
pub fn cw_cell(grid: &SweepGrid, delta: f64, kl: f64, drive: &CwDrive) -> CellResult {
    let run = || -> Result<CellResult> {
        if drive.direction() != Direction::RightGoing {
            return Err(Error::InvalidParameter("sweeps pump the device from the left".into()));
        }
        let arr = grid.device(delta, kl)?;
        let fwd = solve_from_ground(&arr, drive)?;
        let bwd = solve_from_ground(&arr.mirrored(), drive)?;
        let metrics = diode_metrics(fwd.fluxes.phi_r_out, bwd.fluxes.phi_r_out, drive.input_flux())?;
        Ok(CellResult {
            delta,
            kl,
            metrics: Some(metrics),
            flags: CellFlags { degenerate: fwd.degenerate || bwd.degenerate, ..Default::default() },
            conservation_error: None,
        })
    };
    run().unwrap_or_else(|e| CellResult::failed(delta, kl, e))
}

/// Continuous-wave sweep on the current rayon pool. Per-cell failures are
/// recorded, not propagated.
pub fn cw_sweep(grid: &SweepGrid, drive: &CwDrive) -> SweepResult {
    let cells = grid.cells().into_par_iter().map(|(d, k)| cw_cell(grid, d, k, drive)).collect();
    SweepResult { grid: grid.clone(), cells }
}

/// Initial emitter state for single-photon sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PhotonProtocol {
    /// Both emitters in `|g⟩`; one photon in.
    Ground,
    /// The first emitter met by the photon starts excited; two excitations in.
    Inverted,
}

impl PhotonProtocol {
    pub fn input_norm(self) -> f64 {
        match self {
            Self::Ground => 1.0,
            Self::Inverted => 2.0,
        }
    }

    fn initial(self, arr: &EmitterArray) -> Result<DensityMatrix> {
        match self {
            Self::Ground => Ok(DensityMatrix::ground(arr.n_emitters())),
            Self::Inverted => inverted_initial(arr, Direction::RightGoing),
        }
    }
}

/// Single-photon metrics of one cell; the pulse must be right-going.
pub fn photon_cell(
    grid: &SweepGrid,
    delta: f64,
    kl: f64,
    pulse: &PulseSpec,
    protocol: PhotonProtocol,
    opts: &IntegrationOptions,
) -> CellResult {
    let run = || -> Result<CellResult> {
        if pulse.direction() != Direction::RightGoing {
            return Err(Error::InvalidParameter("sweeps send the photon from the left".into()));
        }
        let arr = grid.device(delta, kl)?;
        let mirror = arr.mirrored();
        let fwd = integrate_pulse(&arr, pulse, &protocol.initial(&arr)?, opts)?;
        let bwd = integrate_pulse(&mirror, pulse, &protocol.initial(&mirror)?, opts)?;
        let expected = protocol.input_norm();
        let err = |r: &crate::fockpulse::PulseResult| (r.total_out() + r.residual_excitation - expected).abs();
        let conservation_error = err(&fwd).max(err(&bwd));
        let metrics = diode_metrics(fwd.n_r_out, bwd.n_r_out, expected)?;
        Ok(CellResult {
            delta,
            kl,
            metrics: Some(metrics),
            flags: CellFlags {
                residual_warning: fwd.residual_warning || bwd.residual_warning,
                nonconserving: conservation_error > CONSERVATION_TOL,
                ..Default::default()
            },
            conservation_error: Some(conservation_error),
        })
    };
    run().unwrap_or_else(|e| CellResult::failed(delta, kl, e))
}

pub fn single_photon_sweep(
    grid: &SweepGrid,
    pulse: &PulseSpec,
    protocol: PhotonProtocol,
    opts: &IntegrationOptions,
) -> SweepResult {
    let cells = grid.cells().into_par_iter().map(|(d, k)| photon_cell(grid, d, k, pulse, protocol, opts)).collect();
    SweepResult { grid: grid.clone(), cells }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOptions {
    /// Coarse scan; its bounds also bound the local refinement.
    pub grid: SweepGrid,
    /// Number of local refinements, seeded from the best separated cells.
    pub restarts: usize,
    pub nelder_mead: NelderMeadOptions,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            grid: SweepGrid::default(),
            restarts: 5,
            nelder_mead: NelderMeadOptions { ftol: 1e-6, xtol: 1e-5, max_iterations: 400 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Refinement {
    pub seed_delta: f64,
    pub seed_kl: f64,
    pub d_opt: f64,
    pub delta: f64,
    pub kl: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Optimum {
    pub noise_ratio: f64,
    pub d_opt: f64,
    pub delta_opt: f64,
    pub kl_opt: f64,
    /// Best cell of the coarse scan.
    pub grid_max: f64,
    pub refinements: Vec<Refinement>,
    /// Largest minus smallest refined value.
    pub restart_spread: f64,
    /// Some refinement hit its iteration cap.
    pub capped: bool,
    /// The optimum sits on a cell with a non-unique steady state.
    pub degenerate: bool,
}

/// Drive of amplitude `amplitude` with noise `ratio·|E|²` on the opposite mode.
pub fn noisy_drive(amplitude: f64, noise_ratio: f64) -> Result<CwDrive> {
    if !(noise_ratio >= 0.0 && noise_ratio.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise ratio must be nonnegative, got {noise_ratio}")));
    }
    CwDrive::right_going(amplitude).with_noise(noise_ratio * amplitude * amplitude)
}

/// Picks up to `k` cells by decreasing efficiency, skipping any within two
/// grid steps (in both directions) of one already taken.
fn separated_seeds(result: &SweepResult, k: usize) -> Vec<(usize, usize)> {
    let nk = result.grid.kl_values.len();
    let mut order: Vec<usize> = (0..result.cells.len()).filter(|&i| result.cells[i].metrics.is_some()).collect();
    order.sort_by(|&a, &b| result.cells[b].efficiency().total_cmp(&result.cells[a].efficiency()).then(a.cmp(&b)));
    let mut taken: Vec<(usize, usize)> = Vec::new();
    for i in order {
        let (id, ik) = (i / nk, i % nk);
        if taken.iter().all(|&(a, b)| a.abs_diff(id) > 2 || b.abs_diff(ik) > 2) {
            taken.push((id, ik));
            if taken.len() == k {
                break;
            }
        }
    }
    taken
}

fn span(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Best `D` over `(Δ, kL)` at fixed `Γ_n/|E|²`: coarse scan, then bounded
/// Nelder–Mead from the best separated cells.
pub fn optimize_efficiency(amplitude: f64, noise_ratio: f64, opts: &OptimizeOptions) -> Result<Optimum> {
    let drive = noisy_drive(amplitude, noise_ratio)?;
    let grid = &opts.grid;
    let coarse = cw_sweep(grid, &drive);
    let best_cell = coarse.best().ok_or_else(|| Error::InvalidParameter("every coarse cell failed".into()))?;
    let grid_max = best_cell.efficiency();

    let (dlo, dhi) = span(&grid.delta_values);
    let (klo, khi) = span(&grid.kl_values);
    let step = |lo: f64, hi: f64, n: usize| if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.1 };
    let steps = [step(dlo, dhi, grid.delta_values.len()), step(klo, khi, grid.kl_values.len())];
    let seeds = separated_seeds(&coarse, opts.restarts.max(1));

    let refinements: Vec<Refinement> = seeds
        .par_iter()
        .map(|&(id, ik)| {
            let x0 = [grid.delta_values[id], grid.kl_values[ik]];
            let m = neldermead::minimize(
                |x| -cw_cell(grid, x[0], x[1], &drive).efficiency(),
                &x0,
                &steps,
                &[dlo, klo],
                &[dhi, khi],
                &opts.nelder_mead,
            );
            Refinement {
                seed_delta: x0[0],
                seed_kl: x0[1],
                d_opt: -m.value,
                delta: m.x[0],
                kl: m.x[1],
                converged: m.converged,
            }
        })
        .collect();

    let mut d_opt = grid_max;
    let (mut delta_opt, mut kl_opt) = (best_cell.delta, best_cell.kl);
    for r in &refinements {
        if r.d_opt > d_opt {
            d_opt = r.d_opt;
            delta_opt = r.delta;
            kl_opt = r.kl;
        }
    }
    let (lo, hi) = span(&refinements.iter().map(|r| r.d_opt).collect::<Vec<_>>());
    let at_opt = cw_cell(grid, delta_opt, kl_opt, &drive);
    Ok(Optimum {
        noise_ratio,
        d_opt,
        delta_opt,
        kl_opt,
        grid_max,
        restart_spread: hi - lo,
        capped: refinements.iter().any(|r| !r.converged),
        degenerate: at_opt.flags.degenerate,
        refinements,
    })
}

/// `D_opt` for each noise ratio, in the given order.
pub fn noise_curve(amplitude: f64, ratios: &[f64], opts: &OptimizeOptions) -> Result<Vec<Optimum>> {
    ratios.iter().map(|&r| optimize_efficiency(amplitude, r, opts)).collect()
}

/// Columns `noise_ratio,D_opt,delta_opt,kl_opt`.
pub fn write_noise_curve_csv<W: Write>(curve: &[Optimum], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["noise_ratio", "D_opt", "delta_opt", "kl_opt"])?;
    for o in curve {
        wtr.write_record([fmt_f64(o.noise_ratio), fmt_f64(o.d_opt), fmt_f64(o.delta_opt), fmt_f64(o.kl_opt)])?;
    }
    wtr.flush()?;
    Ok(())
}
