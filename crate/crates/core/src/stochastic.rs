//! Explicit classical-noise trajectories.
//!
//! Real Wiener noise `dW`, `E[dW²] = Γ_n dt`, drives the mode opposite to
//! the coherent signal. Each trajectory obeys the Stratonovich equation
//!
//! ```text
//! dρ = L_det[ρ] dt + [J_n − J_n†, ρ] ∘ dW
//! ```
//!
//! integrated with a Heun predictor–corrector, so that the ensemble mean
//! converges to the dephasing master equation of [`crate::cwdrive`] with no
//! hand-inserted correction. Output counts accumulate
//! `dN_n = dW² + ⟨J_n + J_n†⟩ ∘ dW + ⟨J_n†J_n⟩ dt` on the noisy mode
//! (midpoint state) and the usual coherent-drive flux on the signal mode.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::cwdrive::{generator, CwDrive, FluxPair};
use crate::model::{CMatrix, DensityMatrix, Direction, EmitterArray, Liouvillian};
use crate::ode::{self, Dopri5Options};
use crate::{Error, Result, C64};

/// Largest step allowed, in units of `1/γ`.
pub const MAX_DT_GAMMA: f64 = 0.01;
/// Per-trajectory trace drift that aborts the run.
pub const TRACE_ABORT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleSpec {
    n_trajectories: usize,
    dt: f64,
    seed: u64,
    t_final: f64,
}

impl EnsembleSpec {
    /// `t_final` must be a whole number of steps.
    pub fn new(n_trajectories: usize, dt: f64, seed: u64, t_final: f64) -> Result<Self> {
        if n_trajectories == 0 {
            return Err(Error::InvalidParameter("n_trajectories must be positive".into()));
        }
        if !(dt > 0.0 && dt.is_finite() && t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt ({dt}) and t_final ({t_final}) must be positive")));
        }
        let steps = t_final / dt;
        if (steps - steps.round()).abs() > 1e-6 * steps.max(1.0) || steps.round() < 4.0 {
            return Err(Error::InvalidParameter(format!(
                "t_final ({t_final}) must be at least four whole steps of dt ({dt})"
            )));
        }
        Ok(Self { n_trajectories, dt, seed, t_final })
    }

    pub fn n_trajectories(&self) -> usize {
        self.n_trajectories
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    fn check_device(&self, arr: &EmitterArray) -> Result<()> {
        if self.dt > MAX_DT_GAMMA / arr.gamma() {
            return Err(Error::InvalidParameter(format!(
                "dt = {} exceeds {MAX_DT_GAMMA}/γ = {}",
                self.dt,
                MAX_DT_GAMMA / arr.gamma()
            )));
        }
        Ok(())
    }
}

/// Column-sorted nonzero entries of a superoperator.
#[derive(Debug, Clone)]
struct SparseSuper {
    n: usize,
    entries: Vec<(usize, usize, C64)>,
}

impl SparseSuper {
    fn from_liouvillian(l: &Liouvillian) -> Self {
        let m = l.matrix();
        let n = m.nrows();
        let mut entries = Vec::new();
        for c in 0..n {
            for r in 0..n {
                let v = m[(r, c)];
                if v != C64::new(0.0, 0.0) {
                    entries.push((r, c, v));
                }
            }
        }
        Self { n, entries }
    }

    fn apply(&self, x: &[C64], out: &mut [C64]) {
        debug_assert_eq!(x.len(), self.n);
        out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
        for &(r, c, v) in &self.entries {
            out[r] += v * x[c];
        }
    }
}

/// Nonzero entries `(row, col, value)` of a small operator.
#[derive(Debug, Clone)]
struct SparseOp(Vec<(usize, usize, C64)>);

impl SparseOp {
    fn new(m: &CMatrix) -> Self {
        let mut v = Vec::new();
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                if m[(r, c)] != C64::new(0.0, 0.0) {
                    v.push((r, c, m[(r, c)]));
                }
            }
        }
        Self(v)
    }

    /// `out = A X − X A` on column-major `d×d` slices.
    fn commutator_into(&self, d: usize, x: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
        for &(r, k, v) in &self.0 {
            for c in 0..d {
                out[c * d + r] += v * x[c * d + k];
                out[k * d + c] -= x[r * d + c] * v;
            }
        }
    }

    /// `Tr(A X)` for a column-major slice `X`.
    fn trace_with(&self, d: usize, x: &[C64]) -> C64 {
        self.0.iter().map(|&(r, k, v)| v * x[r * d + k]).sum()
    }
}

/// Generator pieces of one trajectory: deterministic part, noise
/// generator `A = J_n − J_n†` and the operators needed for the output counts.
#[derive(Debug, Clone)]
pub struct SmeSystem {
    d: usize,
    l_det: SparseSuper,
    a: SparseOp,
    amplitude: C64,
    j_signal: SparseOp,
    jdj_signal: SparseOp,
    /// `J_n + J_n†`.
    x_noise: SparseOp,
    jdj_noise: SparseOp,
    noise_intensity: f64,
}

impl SmeSystem {
    pub fn new(arr: &EmitterArray, drive: &CwDrive) -> Self {
        let clean = drive.with_noise(0.0).expect("zero noise is valid");
        let (l, jr, jl) = generator(arr, &clean);
        let (js, jn) = match drive.direction() {
            Direction::RightGoing => (jr.into_matrix(), jl.into_matrix()),
            Direction::LeftGoing => (jl.into_matrix(), jr.into_matrix()),
        };
        Self {
            d: arr.dim(),
            l_det: SparseSuper::from_liouvillian(&l),
            a: SparseOp::new(&(&jn - jn.adjoint())),
            amplitude: drive.amplitude(),
            jdj_signal: SparseOp::new(&(js.adjoint() * &js)),
            j_signal: SparseOp::new(&js),
            x_noise: SparseOp::new(&(&jn + jn.adjoint())),
            jdj_noise: SparseOp::new(&(jn.adjoint() * &jn)),
            noise_intensity: drive.noise_intensity(),
        }
    }

    pub fn noise_intensity(&self) -> f64 {
        self.noise_intensity
    }
}

/// Scratch buffers for the in-place step.
struct Workspace {
    k1: Vec<C64>,
    s1: Vec<C64>,
    pred: Vec<C64>,
    k2: Vec<C64>,
    s2: Vec<C64>,
    next: Vec<C64>,
}

impl Workspace {
    fn new(len: usize) -> Self {
        let z = || vec![C64::new(0.0, 0.0); len];
        Self { k1: z(), s1: z(), pred: z(), k2: z(), s2: z(), next: z() }
    }
}

/// Heun step; `ws.next` receives the new state.
#[allow(clippy::needless_range_loop)]
fn heun_in_place(sys: &SmeSystem, rho: &[C64], dw: f64, dt: f64, ws: &mut Workspace) {
    let d = sys.d;
    sys.l_det.apply(rho, &mut ws.k1);
    sys.a.commutator_into(d, rho, &mut ws.s1);
    for i in 0..rho.len() {
        ws.pred[i] = rho[i] + ws.k1[i] * dt + ws.s1[i] * dw;
    }
    sys.l_det.apply(&ws.pred, &mut ws.k2);
    sys.a.commutator_into(d, &ws.pred, &mut ws.s2);
    for i in 0..rho.len() {
        ws.next[i] = rho[i] + (ws.k1[i] + ws.k2[i]) * (0.5 * dt) + (ws.s1[i] + ws.s2[i]) * (0.5 * dw);
    }
}

/// One Stratonovich–Heun step of the conditional master equation.
///
/// Trace and Hermiticity are kept to roundoff; positivity only to the
/// discretization order, so the result is returned as a plain matrix.
pub fn sme_step(rho: &CMatrix, dw: f64, dt: f64, sys: &SmeSystem) -> Result<CMatrix> {
    if rho.nrows() != sys.d || rho.ncols() != sys.d {
        return Err(Error::Dimension(format!("state is {}×{}, system dimension {}", rho.nrows(), rho.ncols(), sys.d)));
    }
    let mut ws = Workspace::new(sys.d * sys.d);
    heun_in_place(sys, rho.as_slice(), dw, dt, &mut ws);
    let m = CMatrix::from_column_slice(sys.d, sys.d, &ws.next);
    let drift = (m.trace() - 1.0).norm();
    if drift > TRACE_ABORT {
        return Err(Error::TraceDrift { drift });
    }
    Ok(m)
}

/// Per-trajectory output: final state and output counts per quarter of
/// the run.
#[derive(Debug, Clone)]
struct TrajectoryRecord {
    final_rho: Vec<C64>,
    signal: [f64; 4],
    noise: [f64; 4],
}

fn run_trajectory(sys: &SmeSystem, spec: &EnsembleSpec, index: usize) -> Result<TrajectoryRecord> {
    let d = sys.d;
    let dt = spec.dt;
    let steps = spec.steps();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let normal = if sys.noise_intensity > 0.0 {
        Some(Normal::new(0.0, (sys.noise_intensity * dt).sqrt()).expect("positive variance"))
    } else {
        None
    };

    let mut rho = vec![C64::new(0.0, 0.0); d * d];
    rho[0] = C64::new(1.0, 0.0);
    let mut ws = Workspace::new(d * d);
    let mut mid = vec![C64::new(0.0, 0.0); d * d];
    let mut signal = [0.0; 4];
    let mut noise = [0.0; 4];
    let e = sys.amplitude;

    for step in 0..steps {
        let dw = normal.as_ref().map_or(0.0, |n| n.sample(&mut rng));
        heun_in_place(sys, &rho, dw, dt, &mut ws);
        for i in 0..rho.len() {
            mid[i] = (rho[i] + ws.next[i]) * 0.5;
        }
        let q = 4 * step / steps;
        signal[q] += (e.norm_sqr()
            + 2.0 * (e.conj() * sys.j_signal.trace_with(d, &mid)).re
            + sys.jdj_signal.trace_with(d, &mid).re)
            * dt;
        noise[q] += dw * dw + sys.x_noise.trace_with(d, &mid).re * dw + sys.jdj_noise.trace_with(d, &mid).re * dt;
        std::mem::swap(&mut rho, &mut ws.next);

        let tr: C64 = (0..d).map(|k| rho[k * d + k]).sum();
        let drift = (tr - 1.0).norm();
        if drift > TRACE_ABORT {
            return Err(Error::TraceDrift { drift });
        }
    }
    Ok(TrajectoryRecord { final_rho: rho, signal, noise })
}

/// Completed trajectory ensemble.
#[derive(Debug, Clone)]
pub struct Ensemble {
    spec: EnsembleSpec,
    noise_intensity: f64,
    signal_direction: Direction,
    d: usize,
    records: Vec<TrajectoryRecord>,
}

/// Sample mean and standard error of the mean.
fn mean_stderr(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, f64::NAN);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub n_trajectories: usize,
    pub dt: f64,
    pub seed: u64,
    pub t_final: f64,
    pub noise_intensity: f64,
    /// Time-averaged over the second half of the run.
    pub phi_r_out: f64,
    pub phi_r_stderr: f64,
    pub phi_l_out: f64,
    pub phi_l_stderr: f64,
    /// Flux difference between the last two quarters of the run exceeds
    /// three standard errors on either mode.
    pub nonstationary: bool,
}

impl EnsembleSummary {
    pub fn fluxes(&self) -> FluxPair {
        FluxPair { phi_r_out: self.phi_r_out, phi_l_out: self.phi_l_out }
    }
}

impl Ensemble {
    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    /// Mean state at `t_final`.
    pub fn mean_state(&self) -> Result<DensityMatrix> {
        let n = self.records.len() as f64;
        let mut acc = CMatrix::zeros(self.d, self.d);
        for r in &self.records {
            acc += CMatrix::from_column_slice(self.d, self.d, &r.final_rho);
        }
        DensityMatrix::from_numerical(acc / C64::new(n, 0.0))
    }

    pub fn summary(&self) -> EnsembleSummary {
        let quarter = self.spec.t_final / 4.0;
        let half = |q: &[f64; 4]| (q[2] + q[3]) / (2.0 * quarter);
        let (sig, sig_se) = mean_stderr(self.records.iter().map(|r| half(&r.signal)));
        let (noi, noi_se) = mean_stderr(self.records.iter().map(|r| half(&r.noise)));
        let drifting = |pick: fn(&TrajectoryRecord) -> &[f64; 4]| {
            let (m, se) = mean_stderr(self.records.iter().map(|r| (pick(r)[3] - pick(r)[2]) / quarter));
            se.is_finite() && m.abs() > 3.0 * se
        };
        let nonstationary = drifting(|r| &r.signal) || drifting(|r| &r.noise);
        let ((r, r_se), (l, l_se)) = match self.signal_direction {
            Direction::RightGoing => ((sig, sig_se), (noi, noi_se)),
            Direction::LeftGoing => ((noi, noi_se), (sig, sig_se)),
        };
        EnsembleSummary {
            n_trajectories: self.records.len(),
            dt: self.spec.dt,
            seed: self.spec.seed,
            t_final: self.spec.t_final,
            noise_intensity: self.noise_intensity,
            phi_r_out: r,
            phi_r_stderr: r_se,
            phi_l_out: l,
            phi_l_stderr: l_se,
            nonstationary,
        }
    }
}

/// Runs `spec.n_trajectories` trajectories from `|g…g⟩` on the current
/// rayon pool. Trajectory `i` draws from stream `i` of a ChaCha generator
/// keyed by the seed, and results are reduced in index order.
pub fn run_ensemble(spec: &EnsembleSpec, arr: &EmitterArray, drive: &CwDrive) -> Result<Ensemble> {
    spec.check_device(arr)?;
    let sys = SmeSystem::new(arr, drive);
    let records =
        (0..spec.n_trajectories).into_par_iter().map(|i| run_trajectory(&sys, spec, i)).collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        spec: *spec,
        noise_intensity: drive.noise_intensity(),
        signal_direction: drive.direction(),
        d: arr.dim(),
        records,
    })
}

/// Monte-Carlo output fluxes with standard errors.
pub fn ensemble_output_flux(spec: &EnsembleSpec, arr: &EmitterArray, drive: &CwDrive) -> Result<EnsembleSummary> {
    Ok(run_ensemble(spec, arr, drive)?.summary())
}

/// Deterministic evolution `dρ/dt = L[ρ]` up to time `t`.
pub fn evolve_master_equation(l: &Liouvillian, rho: &DensityMatrix, t: f64) -> Result<DensityMatrix> {
    let d = rho.dim();
    if l.hilbert_dim() != d {
        return Err(Error::Dimension(format!("state dimension {d} vs generator {}", l.hilbert_dim())));
    }
    let sparse = SparseSuper::from_liouvillian(l);
    let mut y = rho.matrix().as_slice().to_vec();
    let opts = Dopri5Options { rtol: 1e-10, atol: 1e-12, ..Default::default() };
    ode::integrate(|_, y, dy| sparse.apply(y, dy), 0.0, t, &mut y, &opts, |_, _| Ok(()))?;
    DensityMatrix::from_numerical(CMatrix::from_column_slice(d, d, &y))
}

/// Ensemble-mean prediction for [`EnsembleSummary`]: the averaged master
/// equation (dephasing channel included) from `|g…g⟩`, with output fluxes
/// from [`crate::cwdrive::output_fluxes`] averaged over `[t_final/2, t_final]`.
pub fn mean_field_fluxes(arr: &EmitterArray, drive: &CwDrive, t_final: f64) -> Result<FluxPair> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidParameter(format!("t_final must be positive, got {t_final}")));
    }
    let (l, jr, jl) = generator(arr, drive);
    let sys = SmeSystem::new(arr, drive);
    let d = arr.dim();
    let sparse = SparseSuper::from_liouvillian(&l);
    let n = d * d;
    let e = drive.amplitude();
    let gn = drive.noise_intensity();
    let jn = match drive.direction() {
        Direction::RightGoing => jl.matrix(),
        Direction::LeftGoing => jr.matrix(),
    };
    let comm = SparseOp::new(&(jn * jn.adjoint() - jn.adjoint() * jn));
    let rhs = |_: f64, y: &[C64], dy: &mut [C64]| {
        sparse.apply(&y[..n], &mut dy[..n]);
        let rho = &y[..n];
        let signal =
            e.norm_sqr() + 2.0 * (e.conj() * sys.j_signal.trace_with(d, rho)).re + sys.jdj_signal.trace_with(d, rho).re;
        let noise = sys.jdj_noise.trace_with(d, rho).re + gn - gn * comm.trace_with(d, rho).re;
        dy[n] = C64::new(signal, 0.0);
        dy[n + 1] = C64::new(noise, 0.0);
    };
    let mut y = vec![C64::new(0.0, 0.0); n + 2];
    y[0] = C64::new(1.0, 0.0);
    let opts = Dopri5Options { rtol: 1e-10, atol: 1e-12, ..Default::default() };
    let half = 0.5 * t_final;
    let mut f = rhs;
    ode::integrate(&mut f, 0.0, half, &mut y, &opts, |_, _| Ok(()))?;
    let (s0, n0) = (y[n].re, y[n + 1].re);
    ode::integrate(&mut f, half, t_final, &mut y, &opts, |_, _| Ok(()))?;
    let (sig, noi) = ((y[n].re - s0) / half, (y[n + 1].re - n0) / half);
    Ok(match drive.direction() {
        Direction::RightGoing => FluxPair { phi_r_out: sig, phi_l_out: noi },
        Direction::LeftGoing => FluxPair { phi_r_out: noi, phi_l_out: sig },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cwdrive::{solve, solve_from_ground};

    fn single(delta: f64) -> EmitterArray {
        EmitterArray::new(1.0, vec![0.0], vec![delta]).unwrap()
    }

    fn noisy(e: f64, gn: f64) -> CwDrive {
        CwDrive::right_going(e).with_noise(gn).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(EnsembleSpec::new(0, 0.01, 1, 1.0).is_err());
        assert!(EnsembleSpec::new(10, 0.0, 1, 1.0).is_err());
        assert!(EnsembleSpec::new(10, 0.3, 1, 1.0).is_err());
        assert_eq!(EnsembleSpec::new(10, 0.01, 1, 1.0).unwrap().steps(), 100);
        let spec = EnsembleSpec::new(10, 0.02, 1, 1.0).unwrap();
        assert!(run_ensemble(&spec, &single(0.0), &noisy(0.1, 0.1)).is_err());
    }

    #[test]
    fn sparse_superoperator_matches_dense() {
        let arr = EmitterArray::pair(1.0, 1.3, 0.4, -0.2).unwrap();
        let (l, _, _) = generator(&arr, &CwDrive::right_going(0.3));
        let x: Vec<C64> = (0..16).map(|k| C64::new(k as f64 * 0.1, 1.0 - k as f64 * 0.05)).collect();
        let mut out = vec![C64::new(0.0, 0.0); 16];
        SparseSuper::from_liouvillian(&l).apply(&x, &mut out);
        let dense = l.apply(&CMatrix::from_column_slice(4, 4, &x));
        for (a, b) in out.iter().zip(dense.as_slice()) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn step_preserves_trace_and_hermiticity() {
        let arr = EmitterArray::pair(1.0, 2.0, 0.5, 0.0).unwrap();
        let sys = SmeSystem::new(&arr, &noisy(0.2, 0.5));
        let mut rho = DensityMatrix::ground(2).into_matrix();
        for k in 0..50 {
            let dw = 0.03 * ((k as f64) * 0.7).sin();
            let next = sme_step(&rho, dw, 0.01, &sys).unwrap();
            assert!((next.trace() - 1.0).norm() < 1e-9);
            assert!((&next - next.adjoint()).iter().all(|z| z.norm() < 1e-13));
            rho = next;
        }
        assert!(sme_step(&CMatrix::identity(2, 2), 0.0, 0.01, &sys).is_err());
    }

    #[test]
    fn zero_noise_follows_the_master_equation() {
        let arr = EmitterArray::pair(1.0, 1.0, 0.5, 0.0).unwrap();
        let drive = CwDrive::right_going(0.5);
        let spec = EnsembleSpec::new(3, 1e-3, 7, 2.0).unwrap();
        let ens = run_ensemble(&spec, &arr, &drive).unwrap();
        let (l, _, _) = generator(&arr, &drive);
        let exact = evolve_master_equation(&l, &DensityMatrix::ground(2), 2.0).unwrap();
        assert!(ens.mean_state().unwrap().trace_distance(&exact) < 1e-6);
        // Every trajectory is identical without noise.
        let s = ens.summary();
        assert!(s.phi_r_stderr < 1e-12);
    }

    #[test]
    fn mean_field_fluxes_approach_the_steady_state() {
        let arr = EmitterArray::pair(1.0, 1.2, 0.4, 0.0).unwrap();
        for drive in [noisy(0.3, 0.4), CwDrive::new(C64::new(0.1, 0.2), Direction::LeftGoing, 0.2).unwrap()] {
            let ss = solve(&arr, &drive).unwrap().fluxes;
            let late = mean_field_fluxes(&arr, &drive, 200.0).unwrap();
            // Transient weight ~ 1/T in the window average.
            assert!((late.phi_r_out - ss.phi_r_out).abs() < 2e-3, "{late:?} vs {ss:?}");
            assert!((late.phi_l_out - ss.phi_l_out).abs() < 2e-3, "{late:?} vs {ss:?}");
            let window = mean_field_fluxes(&arr, &drive, 10.0).unwrap();
            assert!((window.total() - drive.input_flux()).abs() < 0.05);
        }
    }

    #[test]
    fn zero_noise_ensemble_matches_window_prediction() {
        let arr = EmitterArray::pair(1.0, 2.0, 0.7, 0.0).unwrap();
        let drive = CwDrive::right_going(0.3);
        let s = ensemble_output_flux(&EnsembleSpec::new(2, 1e-3, 0, 4.0).unwrap(), &arr, &drive).unwrap();
        let m = mean_field_fluxes(&arr, &drive, 4.0).unwrap();
        assert!((s.phi_r_out - m.phi_r_out).abs() < 1e-6, "{s:?} {m:?}");
        assert!((s.phi_l_out - m.phi_l_out).abs() < 1e-6);
    }

    #[test]
    fn master_equation_reaches_the_steady_state() {
        let arr = single(0.3);
        let drive = noisy(0.4, 0.5);
        let (l, _, _) = generator(&arr, &drive);
        let late = evolve_master_equation(&l, &DensityMatrix::ground(1), 60.0).unwrap();
        let ss = solve(&arr, &drive).unwrap();
        assert!(late.trace_distance(&ss.rho) < 1e-9);
    }

    #[test]
    fn identical_seeds_reproduce_bitwise() {
        let arr = single(0.0);
        let spec = EnsembleSpec::new(6, 0.01, 42, 1.0).unwrap();
        let a = run_ensemble(&spec, &arr, &noisy(0.2, 0.5)).unwrap();
        let b = run_ensemble(&spec, &arr, &noisy(0.2, 0.5)).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.final_rho, y.final_rho);
            assert_eq!(x.noise, y.noise);
        }
        let c = run_ensemble(&EnsembleSpec::new(6, 0.01, 43, 1.0).unwrap(), &arr, &noisy(0.2, 0.5)).unwrap();
        assert_ne!(a.records[0].final_rho, c.records[0].final_rho);
    }

    #[test]
    fn reduction_is_independent_of_worker_count() {
        let arr = single(0.5);
        let spec = EnsembleSpec::new(8, 0.01, 3, 1.0).unwrap();
        let run = |workers| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .unwrap()
                .install(|| ensemble_output_flux(&spec, &arr, &noisy(0.3, 0.4)).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn noise_only_single_emitter_matches_closed_form() {
        // φ_R = γΓ/(2(1+Γ)), total Γ.
        let gn = 0.5;
        let spec = EnsembleSpec::new(400, 0.01, 11, 12.0).unwrap();
        let s = ensemble_output_flux(&spec, &single(0.0), &noisy(0.0, gn)).unwrap();
        let phi_r = gn / (2.0 * (1.0 + gn));
        assert!((s.phi_r_out - phi_r).abs() < 4.0 * s.phi_r_stderr, "{s:?}");
        assert!((s.phi_l_out - (gn - phi_r)).abs() < 4.0 * s.phi_l_stderr, "{s:?}");
        assert!(s.phi_r_out > 0.0);
    }

    #[test]
    fn far_detuned_device_passes_noise_through() {
        let gn = 0.5;
        let spec = EnsembleSpec::new(200, 0.01, 5, 8.0).unwrap();
        let s = ensemble_output_flux(&spec, &single(50.0), &noisy(0.0, gn)).unwrap();
        let phi_r = gn / (2.0 * (1.0 + gn));
        assert!((s.phi_l_out - (gn - phi_r)).abs() < 4.0 * s.phi_l_stderr);
    }

    #[test]
    fn ensemble_flux_matches_deterministic_noisy_flux() {
        let arr = EmitterArray::pair(1.0, 1.2, 0.4, 0.0).unwrap();
        let drive = noisy(0.05f64.sqrt(), 0.3);
        let spec = EnsembleSpec::new(300, 0.01, 9, 16.0).unwrap();
        let s = ensemble_output_flux(&spec, &arr, &drive).unwrap();
        let det = solve_from_ground(&arr, &drive).unwrap().fluxes;
        assert!((s.phi_r_out - det.phi_r_out).abs() < 4.0 * s.phi_r_stderr, "{s:?} vs {det:?}");
        assert!((s.phi_l_out - det.phi_l_out).abs() < 4.0 * s.phi_l_stderr, "{s:?} vs {det:?}");
        let total_se = (s.phi_r_stderr.powi(2) + s.phi_l_stderr.powi(2)).sqrt();
        assert!((s.fluxes().total() - drive.input_flux()).abs() < 4.0 * total_se);
    }

    #[test]
    fn halving_dt_is_within_statistical_error() {
        let arr = single(0.4);
        let drive = noisy(0.3, 0.5);
        let coarse = ensemble_output_flux(&EnsembleSpec::new(200, 0.01, 21, 8.0).unwrap(), &arr, &drive).unwrap();
        let fine = ensemble_output_flux(&EnsembleSpec::new(200, 0.005, 21, 8.0).unwrap(), &arr, &drive).unwrap();
        let se = (coarse.phi_l_stderr.powi(2) + fine.phi_l_stderr.powi(2)).sqrt();
        assert!((coarse.phi_l_out - fine.phi_l_out).abs() < 4.0 * se);
    }

    #[test]
    fn left_going_signal_puts_noise_on_the_right() {
        let arr = single(0.0);
        let drive = CwDrive::new(C64::new(0.2, 0.0), Direction::LeftGoing, 0.4).unwrap();
        let s = ensemble_output_flux(&EnsembleSpec::new(150, 0.01, 2, 8.0).unwrap(), &arr, &drive).unwrap();
        let det = solve(&arr, &drive).unwrap().fluxes;
        assert!((s.phi_r_out - det.phi_r_out).abs() < 4.0 * s.phi_r_stderr, "{s:?} vs {det:?}");
        assert!((s.phi_l_out - det.phi_l_out).abs() < 4.0 * s.phi_l_stderr, "{s:?} vs {det:?}");
    }
}
