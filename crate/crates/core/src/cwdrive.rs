//! Steady state and output photon fluxes under a continuous-wave coherent
//! drive, optionally with classical broadband noise entering on the
//! counter-propagating mode.
//!
//! A coherent amplitude `E` on a mode with jump operator `J` enters the
//! generator as `ρ ↦ [E*J − E J†, ρ]`. Zero-mean Wiener noise of intensity
//! `Γ_n` on the opposite mode averages to a Lindblad channel with the
//! Hermitian jump `X = i(J − J†)` at rate `Γ_n`.
//!
//! Output fluxes follow from `dN_out = dN_in + J dB† + J† dB + J†J dt`:
//!
//! - driven side: `|E|² + 2 Re(E*⟨J⟩) + ⟨J†J⟩`;
//! - noisy side: `Γ_n + C + ⟨J†J⟩`, where the noise–emitter cross term
//!   `C = −Γ_n ⟨[J, J†]⟩` is the Itô correction of the Stratonovich product
//!   `⟨J + J†⟩ ∘ dW`. It is cross-checked against explicit trajectories in
//!   [`crate::stochastic`].

use nalgebra::{DVector, SVD};
use serde::Serialize;

use crate::model::{
    array_liouvillian, commutator, jump_operators, CMatrix, DensityMatrix, Direction, EmitterArray, Liouvillian,
    Operator,
};
use crate::{Error, Result, C64};

/// Ratio `σ₂/σ₁` of the two smallest singular values above which the
/// steady state counts as unique.
pub const UNIQUENESS_RATIO: f64 = 1e6;
/// Singular values below this fraction of the largest one span the kernel
/// when it is degenerate.
const KERNEL_RTOL: f64 = 1e-8;
const RESIDUAL_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CwDrive {
    amplitude: C64,
    direction: Direction,
    noise_intensity: f64,
}

impl CwDrive {
    /// `noise_intensity` is applied to the mode opposite to `direction`.
    pub fn new(amplitude: C64, direction: Direction, noise_intensity: f64) -> Result<Self> {
        if !(amplitude.re.is_finite() && amplitude.im.is_finite()) {
            return Err(Error::InvalidParameter("drive amplitude must be finite".into()));
        }
        if !(noise_intensity >= 0.0 && noise_intensity.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise intensity must be nonnegative, got {noise_intensity}")));
        }
        Ok(Self { amplitude, direction, noise_intensity })
    }

    /// Noise-free right-going drive with real amplitude.
    pub fn right_going(amplitude: f64) -> Self {
        Self::new(C64::new(amplitude, 0.0), Direction::RightGoing, 0.0).expect("finite amplitude")
    }

    pub fn with_noise(self, noise_intensity: f64) -> Result<Self> {
        Self::new(self.amplitude, self.direction, noise_intensity)
    }

    pub fn with_direction(self, direction: Direction) -> Self {
        Self { direction, ..self }
    }

    pub fn amplitude(&self) -> C64 {
        self.amplitude
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn noise_intensity(&self) -> f64 {
        self.noise_intensity
    }

    /// Total mean input flux `|E|² + Γ_n`.
    pub fn input_flux(&self) -> f64 {
        self.amplitude.norm_sqr() + self.noise_intensity
    }
}

/// Mean output photon fluxes into the right- and left-going modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FluxPair {
    pub phi_r_out: f64,
    pub phi_l_out: f64,
}

impl FluxPair {
    pub fn total(&self) -> f64 {
        self.phi_r_out + self.phi_l_out
    }

    /// Exchanges the roles of the two outputs (spatial reflection).
    pub fn swapped(&self) -> Self {
        Self { phi_r_out: self.phi_l_out, phi_l_out: self.phi_r_out }
    }
}

/// `ρ ↦ [E*J − E J†, ρ]`, i.e. `−i[H_d, ρ]` with `H_d = i(E*J − E J†)`.
pub fn drive_term(amplitude: C64, jump: &Operator) -> Liouvillian {
    let a = jump.matrix() * amplitude.conj() - jump.adjoint().matrix() * amplitude;
    Liouvillian::commutator_with(&a)
}

/// `ρ ↦ −(Γ_n/2)(X²ρ + ρX² − 2XρX)` with `X = i(J − J†)`.
pub fn dephasing_term(noise_intensity: f64, jump: &Operator) -> Result<Liouvillian> {
    if !(noise_intensity >= 0.0 && noise_intensity.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise intensity must be nonnegative, got {noise_intensity}")));
    }
    Ok(Liouvillian::dissipator(&noise_quadrature(jump.matrix()), noise_intensity))
}

/// `X = i(J − J†)`.
pub(crate) fn noise_quadrature(j: &CMatrix) -> CMatrix {
    (j - j.adjoint()) * C64::new(0.0, 1.0)
}

/// Full generator for `arr` under `drive`, together with `(J_R, J_L)`.
pub fn generator(arr: &EmitterArray, drive: &CwDrive) -> (Liouvillian, Operator, Operator) {
    let (jr, jl) = jump_operators(arr);
    let (driven, noisy) = match drive.direction() {
        Direction::RightGoing => (&jr, &jl),
        Direction::LeftGoing => (&jl, &jr),
    };
    let mut l = array_liouvillian(arr) + &drive_term(drive.amplitude(), driven);
    if drive.noise_intensity() > 0.0 {
        l += &dephasing_term(drive.noise_intensity(), noisy).expect("validated by CwDrive");
    }
    (l, jr, jl)
}

/// A stationary state together with diagnostics of the kernel it came from.
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub rho: DensityMatrix,
    /// Numerical dimension of the Liouvillian kernel.
    pub null_dim: usize,
    /// `‖L vec(ρ)‖ / ‖L‖` for the normalized state.
    pub residual: f64,
}

impl SteadyState {
    pub fn is_degenerate(&self) -> bool {
        self.null_dim > 1
    }
}

struct Kernel {
    /// Singular values in ascending order.
    sigma: Vec<f64>,
    /// Right singular vectors, ordered like `sigma`.
    right: Vec<DVector<C64>>,
    /// Left singular vectors, ordered like `sigma`.
    left: Vec<DVector<C64>>,
}

impl Kernel {
    fn of(l: &Liouvillian) -> Self {
        let svd = SVD::new(l.matrix().clone(), true, true);
        let u = svd.u.expect("left vectors requested");
        let v_t = svd.v_t.expect("right vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
        Kernel {
            sigma: order.iter().map(|&k| svd.singular_values[k]).collect(),
            right: order.iter().map(|&k| v_t.row(k).adjoint()).collect(),
            left: order.iter().map(|&k| u.column(k).into_owned()).collect(),
        }
    }

    fn norm(&self) -> f64 {
        *self.sigma.last().unwrap_or(&0.0)
    }

    fn is_unique(&self) -> bool {
        match self.sigma.as_slice() {
            [s0, s1, ..] => *s1 > UNIQUENESS_RATIO * s0 && *s1 > KERNEL_RTOL * self.norm(),
            _ => true,
        }
    }

    fn dimension(&self) -> usize {
        if self.is_unique() {
            1
        } else {
            let tol = KERNEL_RTOL * self.norm();
            self.sigma.iter().filter(|&&s| s <= tol).count().max(2)
        }
    }
}

fn unvec(v: &DVector<C64>, d: usize) -> CMatrix {
    CMatrix::from_column_slice(d, d, v.as_slice())
}

fn normalize_state(m: CMatrix) -> Result<DensityMatrix> {
    let tr = m.trace();
    if tr.norm() < 1e-300 {
        return Err(Error::InvalidState("null vector has vanishing trace".into()));
    }
    DensityMatrix::from_numerical(m / tr)
}

fn residual(l: &Liouvillian, rho: &DensityMatrix, norm: f64) -> f64 {
    let r = l.apply(rho.matrix());
    let frob = r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let rho_frob = rho.matrix().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        frob / (norm * rho_frob)
    } else {
        frob
    }
}

/// Unique stationary state of `l`, from the singular vector of its smallest
/// singular value. Fails with [`Error::NullSpaceDimension`] when the kernel
/// is not one-dimensional.
pub fn steady_state(l: &Liouvillian) -> Result<DensityMatrix> {
    let kernel = Kernel::of(l);
    let dim = kernel.dimension();
    if dim != 1 {
        return Err(Error::NullSpaceDimension { dim });
    }
    let rho = normalize_state(unvec(&kernel.right[0], l.hilbert_dim()))?;
    let res = residual(l, &rho, kernel.norm());
    if res > RESIDUAL_RTOL {
        return Err(Error::InvariantBreach { t: f64::INFINITY, what: format!("steady-state residual {res:e}") });
    }
    Ok(rho)
}

/// Long-time limit of `e^{Lt} ρ₀`. Identical to [`steady_state`] when the
/// kernel is one-dimensional; otherwise `ρ₀` is projected onto the kernel
/// along the conserved quantities (left null vectors), which selects the
/// stationary state actually reached from `initial`.
pub fn steady_state_from(l: &Liouvillian, initial: &DensityMatrix) -> Result<SteadyState> {
    let kernel = Kernel::of(l);
    let d = l.hilbert_dim();
    let null_dim = kernel.dimension();
    let rho = if null_dim == 1 {
        normalize_state(unvec(&kernel.right[0], d))?
    } else {
        let n = d * d;
        let right = CMatrix::from_columns(&kernel.right[..null_dim]);
        let left = CMatrix::from_columns(&kernel.left[..null_dim]);
        let overlap = left.adjoint() * &right;
        let inv = overlap.try_inverse().ok_or_else(|| Error::InvalidState("kernel projector is singular".into()))?;
        let rho0 = DVector::from_column_slice(initial.matrix().as_slice());
        let projected = &right * (inv * (left.adjoint() * rho0));
        debug_assert_eq!(projected.len(), n);
        normalize_state(unvec(&projected, d))?
    };
    let res = residual(l, &rho, kernel.norm());
    if res > RESIDUAL_RTOL {
        return Err(Error::InvariantBreach { t: f64::INFINITY, what: format!("steady-state residual {res:e}") });
    }
    Ok(SteadyState { rho, null_dim, residual: res })
}

/// Mean output fluxes in state `rho` under `drive`.
pub fn output_fluxes(rho: &DensityMatrix, drive: &CwDrive, jr: &Operator, jl: &Operator) -> FluxPair {
    let (driven, noisy) = match drive.direction() {
        Direction::RightGoing => (jr.matrix(), jl.matrix()),
        Direction::LeftGoing => (jl.matrix(), jr.matrix()),
    };
    let e = drive.amplitude();
    let driven_flux =
        e.norm_sqr() + 2.0 * (e.conj() * rho.expect(driven)).re + rho.expect(&(driven.adjoint() * driven)).re;
    let mut noisy_flux = rho.expect(&(noisy.adjoint() * noisy)).re;
    let gn = drive.noise_intensity();
    if gn > 0.0 {
        noisy_flux += gn - gn * rho.expect(&commutator(noisy, &noisy.adjoint())).re;
    }
    match drive.direction() {
        Direction::RightGoing => FluxPair { phi_r_out: driven_flux, phi_l_out: noisy_flux },
        Direction::LeftGoing => FluxPair { phi_r_out: noisy_flux, phi_l_out: driven_flux },
    }
}

#[derive(Debug, Clone)]
pub struct CwSolution {
    pub rho: DensityMatrix,
    pub fluxes: FluxPair,
    /// The kernel was degenerate and the state reached from `|g…g⟩` was taken.
    pub degenerate: bool,
}

/// Steady-state fluxes of `arr` under `drive`; errors on a degenerate kernel.
pub fn solve(arr: &EmitterArray, drive: &CwDrive) -> Result<CwSolution> {
    let (l, jr, jl) = generator(arr, drive);
    let rho = steady_state(&l)?;
    let fluxes = output_fluxes(&rho, drive, &jr, &jl);
    Ok(CwSolution { rho, fluxes, degenerate: false })
}

/// Like [`solve`], but a degenerate kernel yields the stationary state
/// reached from the ground state, reported through
/// [`CwSolution::degenerate`].
pub fn solve_from_ground(arr: &EmitterArray, drive: &CwDrive) -> Result<CwSolution> {
    let (l, jr, jl) = generator(arr, drive);
    let ss = steady_state_from(&l, &DensityMatrix::ground(arr.n_emitters()))?;
    let fluxes = output_fluxes(&ss.rho, drive, &jr, &jl);
    Ok(CwSolution { degenerate: ss.is_degenerate(), rho: ss.rho, fluxes })
}
