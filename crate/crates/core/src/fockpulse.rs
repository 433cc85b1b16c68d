//! Single-photon wave-packet input.
//!
//! The reduced emitter state conditioned on a one-photon Fock input is
//! carried by three blocks `ρ_mn`, `m, n ∈ {0, 1}` photons remaining in the
//! packet:
//!
//! ```text
//! dρ11/dt = L[ρ11] + ξ [ρ01, J†] + ξ* [J, ρ10]
//! dρ01/dt = L[ρ01] + ξ* [J, ρ00]
//! dρ00/dt = L[ρ00]
//! ```
//!
//! with `ρ10 = ρ01†` and `J` the jump operator of the mode carrying the
//! photon. All three blocks start from the same emitter state. The output
//! flux on the photon's own mode is `|ξ|² + 2 Re(ξ* Tr(J ρ10)) + ⟨J†J⟩₁₁`;
//! the other mode only sees `⟨J†J⟩₁₁`.

use std::io::Write;

use serde::Serialize;

use crate::model::{
    array_liouvillian, jump_operators, number_operator, trace_product, CMatrix, DensityMatrix, Direction, EmitterArray,
    Liouvillian,
};
use crate::ode::{self, Dopri5Options, Dopri5Stats};
use crate::{Error, Result, C64};

/// Trace tolerance on `ρ11`, `ρ00` and `ρ01` during evolution.
pub const TRACE_TOL: f64 = 1e-6;
/// Hermiticity tolerance on `ρ11` and `ρ00` during evolution.
pub const HERMITIAN_TOL: f64 = 1e-8;
/// Remaining excitation above which the run is flagged as truncated.
pub const RESIDUAL_WARNING: f64 = 1e-4;

/// Temporal profile of the packet, normalized to `∫|ξ|² dt = 1` (except
/// [`PulseShape::Vacuum`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PulseShape {
    /// `ξ(t) = √Γ_p e^{−Γ_p t/2}` for `t ≥ 0`.
    Exponential { bandwidth: f64 },
    /// `ξ(t) = (π w²)^{−1/4} e^{−(t − t_c)²/(2w²)}`.
    Gaussian { center: f64, width: f64 },
    /// No photon: `ξ ≡ 0`.
    Vacuum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PulseSpec {
    direction: Direction,
    shape: PulseShape,
    delay: f64,
}

impl PulseSpec {
    pub fn exponential(direction: Direction, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidParameter(format!("pulse bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { direction, shape: PulseShape::Exponential { bandwidth }, delay: 0.0 })
    }

    pub fn gaussian(direction: Direction, center: f64, width: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite() && center.is_finite()) {
            return Err(Error::InvalidParameter(format!("invalid Gaussian pulse (center {center}, width {width})")));
        }
        Ok(Self { direction, shape: PulseShape::Gaussian { center, width }, delay: 0.0 })
    }

    pub fn vacuum(direction: Direction) -> Self {
        Self { direction, shape: PulseShape::Vacuum, delay: 0.0 }
    }

    /// Shifts the packet by `delay ≥ 0`; `ξ(t) = 0` for `t < delay`.
    pub fn with_delay(self, delay: f64) -> Result<Self> {
        if !(delay >= 0.0 && delay.is_finite()) {
            return Err(Error::InvalidParameter(format!("pulse delay must be nonnegative, got {delay}")));
        }
        Ok(Self { delay, ..self })
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn shape(&self) -> PulseShape {
        self.shape
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    /// `ξ(t)`.
    pub fn amplitude(&self, t: f64) -> f64 {
        let s = t - self.delay;
        if s < 0.0 {
            return 0.0;
        }
        match self.shape {
            PulseShape::Exponential { bandwidth } => bandwidth.sqrt() * (-0.5 * bandwidth * s).exp(),
            PulseShape::Gaussian { center, width } => {
                let x = (s - center) / width;
                (std::f64::consts::PI * width * width).powf(-0.25) * (-0.5 * x * x).exp()
            }
            PulseShape::Vacuum => 0.0,
        }
    }

    /// `ξ(t)` as seen from inside an integration segment starting at
    /// `start`: a segment that begins before the packet edge sees zero up to
    /// and including its end point.
    fn amplitude_on_segment(&self, start: f64, t: f64) -> f64 {
        if start < self.delay {
            0.0
        } else {
            self.amplitude(t)
        }
    }

    /// Times where `ξ` is not smooth.
    fn breakpoints(&self) -> Vec<f64> {
        match self.shape {
            PulseShape::Exponential { .. } => vec![self.delay],
            _ if self.delay > 0.0 => vec![self.delay],
            _ => Vec::new(),
        }
    }

    /// `∫₀^{t_max} |ξ|² dt` evaluated with the same adaptive quadrature
    /// as the hierarchy.
    pub fn norm(&self, t_max: f64, opts: &Dopri5Options) -> Result<f64> {
        let mut y = [C64::new(0.0, 0.0)];
        integrate_piecewise(
            |start, t, _, dy| dy[0] = C64::new(self.amplitude_on_segment(start, t).powi(2), 0.0),
            &self.breakpoints(),
            t_max,
            &mut y,
            opts,
            |_, _| Ok(()),
        )?;
        Ok(y[0].re)
    }
}

/// `(ρ11, ρ01, ρ00)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyState {
    pub rho11: CMatrix,
    pub rho01: CMatrix,
    pub rho00: CMatrix,
}

impl HierarchyState {
    /// `ρ_ij(0) = ρ_initial δ_ij`.
    pub fn initial(rho: &DensityMatrix) -> Self {
        let d = rho.dim();
        Self { rho11: rho.matrix().clone(), rho01: CMatrix::zeros(d, d), rho00: rho.matrix().clone() }
    }

    pub fn rho10(&self) -> CMatrix {
        self.rho01.adjoint()
    }
}

/// Generator pieces shared by every evaluation of the hierarchy.
#[derive(Debug, Clone)]
pub struct HierarchySystem {
    liouvillian: Liouvillian,
    jr: CMatrix,
    jl: CMatrix,
    direction: Direction,
}

impl HierarchySystem {
    pub fn new(arr: &EmitterArray, direction: Direction) -> Self {
        let (jr, jl) = jump_operators(arr);
        Self { liouvillian: array_liouvillian(arr), jr: jr.into_matrix(), jl: jl.into_matrix(), direction }
    }

    /// Jump operator of the mode carrying the photon.
    pub fn source(&self) -> &CMatrix {
        match self.direction {
            Direction::RightGoing => &self.jr,
            Direction::LeftGoing => &self.jl,
        }
    }

    pub fn liouvillian(&self) -> &Liouvillian {
        &self.liouvillian
    }
}

/// Time derivative of the hierarchy for the instantaneous amplitude `xi`.
pub fn hierarchy_rhs(state: &HierarchyState, xi: C64, sys: &HierarchySystem) -> HierarchyState {
    let l = &sys.liouvillian;
    let j = sys.source();
    let jd = j.adjoint();
    let rho10 = state.rho10();
    let c = |a: &CMatrix, b: &CMatrix| a * b - b * a;
    HierarchyState {
        rho11: l.apply(&state.rho11) + c(&state.rho01, &jd) * xi + c(j, &rho10) * xi.conj(),
        rho01: l.apply(&state.rho01) + c(j, &state.rho00) * xi.conj(),
        rho00: l.apply(&state.rho00),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationOptions {
    pub t_max: f64,
    pub rtol: f64,
    pub atol: f64,
    pub record_series: bool,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self { t_max: 40.0, rtol: 1e-8, atol: 1e-10, record_series: false }
    }
}

impl IntegrationOptions {
    fn dopri(&self) -> Dopri5Options {
        Dopri5Options { rtol: self.rtol, atol: self.atol, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FluxSample {
    pub t: f64,
    pub flux_r: f64,
    pub flux_l: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseResult {
    pub n_r_out: f64,
    pub n_l_out: f64,
    /// `Σ_i ⟨σ_i†σ_i⟩` in `ρ11` at `t_max`.
    pub residual_excitation: f64,
    /// Set when `residual_excitation` exceeds [`RESIDUAL_WARNING`].
    pub residual_warning: bool,
    pub flux_timeseries: Vec<FluxSample>,
    pub stats: Dopri5Stats,
}

impl PulseResult {
    pub fn total_out(&self) -> f64 {
        self.n_r_out + self.n_l_out
    }

    /// Writes the sampled fluxes as CSV with columns `t,flux_r,flux_l`.
    pub fn write_flux_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for s in &self.flux_timeseries {
            wtr.serialize(s)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// The device with the first emitter along the photon's path inverted:
/// `|e,g⟩` (smaller phase excited) for a right-going photon, `|g,e⟩` for a
/// left-going one.
pub fn inverted_initial(arr: &EmitterArray, direction: Direction) -> Result<DensityMatrix> {
    if arr.n_emitters() != 2 {
        return Err(Error::InvalidParameter(format!(
            "inverted protocol needs exactly two emitters, got {}",
            arr.n_emitters()
        )));
    }
    let index = match direction {
        Direction::RightGoing => 0b10,
        Direction::LeftGoing => 0b01,
    };
    DensityMatrix::basis_state(4, index)
}

/// Flat layout of the integrated state: three `d×d` blocks followed by the
/// two accumulated output counts.
struct Layout {
    d: usize,
}

impl Layout {
    fn block(&self) -> usize {
        self.d * self.d
    }

    fn len(&self) -> usize {
        3 * self.block() + 2
    }

    fn r11(&self) -> std::ops::Range<usize> {
        0..self.block()
    }

    fn r01(&self) -> std::ops::Range<usize> {
        self.block()..2 * self.block()
    }

    fn r00(&self) -> std::ops::Range<usize> {
        2 * self.block()..3 * self.block()
    }

    fn counts(&self) -> usize {
        3 * self.block()
    }
}

/// Allocation-free right-hand side on the flat layout.
struct FastRhs<'a> {
    layout: Layout,
    sys: &'a HierarchySystem,
    pulse: &'a PulseSpec,
    /// Column-major Liouvillian.
    l: &'a [C64],
    jdj_r: CMatrix,
    jdj_l: CMatrix,
    rho10: Vec<C64>,
}

impl<'a> FastRhs<'a> {
    fn new(sys: &'a HierarchySystem, pulse: &'a PulseSpec) -> Self {
        let d = sys.liouvillian.hilbert_dim();
        Self {
            layout: Layout { d },
            sys,
            pulse,
            l: sys.liouvillian.matrix().as_slice(),
            jdj_r: sys.jr.adjoint() * &sys.jr,
            jdj_l: sys.jl.adjoint() * &sys.jl,
            rho10: vec![C64::new(0.0, 0.0); d * d],
        }
    }

    fn apply_l(&self, x: &[C64], out: &mut [C64]) {
        let n = x.len();
        out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
        for (c, &xc) in x.iter().enumerate() {
            if xc == C64::new(0.0, 0.0) {
                continue;
            }
            let col = &self.l[c * n..(c + 1) * n];
            for (o, &lv) in out.iter_mut().zip(col) {
                *o += lv * xc;
            }
        }
    }

    /// `out += s (A X − X A)` for column-major `d×d` slices.
    fn add_commutator(d: usize, a: &CMatrix, x: &[C64], s: C64, out: &mut [C64]) {
        for col in 0..d {
            for row in 0..d {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..d {
                    acc += a[(row, k)] * x[col * d + k] - x[k * d + row] * a[(k, col)];
                }
                out[col * d + row] += acc * s;
            }
        }
    }

    /// `(dN_R/dt, dN_L/dt)` for the given flat state.
    fn fluxes(&self, start: f64, t: f64, y: &[C64]) -> (f64, f64) {
        let d = self.layout.d;
        let r11 = &y[self.layout.r11()];
        let r01 = &y[self.layout.r01()];
        let tr_slice = |a: &CMatrix, x: &[C64]| -> C64 {
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..d {
                for k in 0..d {
                    acc += a[(i, k)] * x[i * d + k];
                }
            }
            acc
        };
        let mut fr = tr_slice(&self.jdj_r, r11).re;
        let mut fl = tr_slice(&self.jdj_l, r11).re;
        let xi = self.pulse.amplitude_on_segment(start, t);
        if xi != 0.0 {
            // Tr(J ρ10) = Σ_ik J_ik conj(ρ01_ik).
            let j = self.sys.source();
            let mut tr = C64::new(0.0, 0.0);
            for i in 0..d {
                for k in 0..d {
                    tr += j[(i, k)] * r01[k * d + i].conj();
                }
            }
            let cross = xi * xi + 2.0 * (xi * tr).re;
            match self.sys.direction {
                Direction::RightGoing => fr += cross,
                Direction::LeftGoing => fl += cross,
            }
        }
        (fr, fl)
    }

    fn eval(&mut self, start: f64, t: f64, y: &[C64], dy: &mut [C64]) {
        let d = self.layout.d;
        let (r11, r01, r00) = (self.layout.r11(), self.layout.r01(), self.layout.r00());
        self.apply_l(&y[r11.clone()], &mut dy[r11.clone()]);
        self.apply_l(&y[r01.clone()], &mut dy[r01.clone()]);
        self.apply_l(&y[r00.clone()], &mut dy[r00.clone()]);
        let xi = C64::new(self.pulse.amplitude_on_segment(start, t), 0.0);
        if xi != C64::new(0.0, 0.0) {
            let j = self.sys.source();
            let jd = j.adjoint();
            for col in 0..d {
                for row in 0..d {
                    self.rho10[col * d + row] = y[r01.start + row * d + col].conj();
                }
            }
            // ξ [ρ01, J†] = −ξ [J†, ρ01]
            Self::add_commutator(d, &jd, &y[r01.clone()], -xi, &mut dy[r11.clone()]);
            Self::add_commutator(d, j, &self.rho10, xi.conj(), &mut dy[r11.clone()]);
            Self::add_commutator(d, j, &y[r00.clone()], xi.conj(), &mut dy[r01.clone()]);
        }
        let (fr, fl) = self.fluxes(start, t, y);
        let c = self.layout.counts();
        dy[c] = C64::new(fr, 0.0);
        dy[c + 1] = C64::new(fl, 0.0);
    }
}

fn integrate_piecewise<F, O>(
    mut f: F,
    breakpoints: &[f64],
    t_max: f64,
    y: &mut [C64],
    opts: &Dopri5Options,
    mut observer: O,
) -> Result<Dopri5Stats>
where
    F: FnMut(f64, f64, &[C64], &mut [C64]),
    O: FnMut(f64, &[C64]) -> Result<()>,
{
    let mut stats = Dopri5Stats::default();
    let mut t0 = 0.0;
    let mut stops: Vec<f64> = breakpoints.iter().copied().filter(|&b| b > 0.0 && b < t_max).collect();
    stops.push(t_max);
    for t1 in stops {
        let s = ode::integrate(|t, y, dy| f(t0, t, y, dy), t0, t1, y, opts, &mut observer)?;
        stats.accepted += s.accepted;
        stats.rejected += s.rejected;
        stats.evaluations += s.evaluations;
        t0 = t1;
    }
    Ok(stats)
}

fn check_invariants(layout: &Layout, t: f64, y: &[C64]) -> Result<()> {
    let d = layout.d;
    let trace = |r: std::ops::Range<usize>| -> C64 { (0..d).map(|k| y[r.start + k * d + k]).sum() };
    let herm = |r: std::ops::Range<usize>| -> f64 {
        let mut dev = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                dev = dev.max((y[r.start + j * d + i] - y[r.start + i * d + j].conj()).norm());
            }
        }
        dev
    };
    let limit = 10.0 * TRACE_TOL;
    let t11 = trace(layout.r11());
    let t00 = trace(layout.r00());
    let t01 = trace(layout.r01());
    if (t11 - 1.0).norm() > limit || (t00 - 1.0).norm() > limit || t01.norm() > limit {
        return Err(Error::InvariantBreach {
            t,
            what: format!("hierarchy traces drifted: tr ρ11 = {t11}, tr ρ00 = {t00}, tr ρ01 = {t01}"),
        });
    }
    let h = herm(layout.r11()).max(herm(layout.r00()));
    if h > 10.0 * HERMITIAN_TOL {
        return Err(Error::InvariantBreach { t, what: format!("hierarchy lost Hermiticity ({h:e})") });
    }
    Ok(())
}

/// Propagates the hierarchy from `initial` to `opts.t_max` and accumulates
/// the right and left output photon counts.
pub fn integrate_pulse(
    arr: &EmitterArray,
    pulse: &PulseSpec,
    initial: &DensityMatrix,
    opts: &IntegrationOptions,
) -> Result<PulseResult> {
    if initial.dim() != arr.dim() {
        return Err(Error::Dimension(format!("initial state has dimension {}, device {}", initial.dim(), arr.dim())));
    }
    if !(opts.t_max > 0.0 && opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::InvalidParameter("t_max and tolerances must be positive".into()));
    }
    let sys = HierarchySystem::new(arr, pulse.direction());
    let mut rhs = FastRhs::new(&sys, pulse);
    let layout = Layout { d: arr.dim() };

    let mut y = vec![C64::new(0.0, 0.0); layout.len()];
    y[layout.r11()].copy_from_slice(initial.matrix().as_slice());
    y[layout.r00()].copy_from_slice(initial.matrix().as_slice());

    let mut series = Vec::new();
    if opts.record_series {
        let (fr, fl) = rhs.fluxes(0.0, 0.0, &y);
        series.push(FluxSample { t: 0.0, flux_r: fr, flux_l: fl });
    }
    let probe = FastRhs::new(&sys, pulse);
    let stats = integrate_piecewise(
        |start, t, y, dy| rhs.eval(start, t, y, dy),
        &pulse.breakpoints(),
        opts.t_max,
        &mut y,
        &opts.dopri(),
        |t, y| {
            check_invariants(&layout, t, y)?;
            if opts.record_series {
                let (fr, fl) = probe.fluxes(t, t, y);
                series.push(FluxSample { t, flux_r: fr, flux_l: fl });
            }
            Ok(())
        },
    )?;

    let rho11 = CMatrix::from_column_slice(layout.d, layout.d, &y[layout.r11()]);
    let residual = trace_product(number_operator(arr.n_emitters()).matrix(), &rho11).re;
    let c = layout.counts();
    Ok(PulseResult {
        n_r_out: y[c].re,
        n_l_out: y[c + 1].re,
        residual_excitation: residual,
        residual_warning: residual > RESIDUAL_WARNING,
        flux_timeseries: series,
        stats,
    })
}
