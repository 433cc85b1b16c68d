//! Operators of the emitter array coupled to a bidirectional waveguide.
//!
//! Basis convention: each emitter has `|g⟩ = 0` and `|e⟩ = 1`, and emitter 0
//! is the most significant tensor factor. Basis index `b` of the `2^n`
//! product space therefore has emitter `i` excited iff bit `n - 1 - i` of `b`
//! is set, and `|g…g⟩` is index 0. The single-emitter lowering matrix is
//! `[[0, 1], [0, 0]]`.
//!
//! Density matrices are vectorized column by column, so that
//! `vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ)`; this matches the column-major storage of
//! [`nalgebra::DMatrix`].

use std::ops::{Add, AddAssign, Deref};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result, C64};

pub type CMatrix = DMatrix<C64>;

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-8;

/// Propagation direction of a drive or a photon in the channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Direction {
    /// Travelling towards increasing position (enters from the left).
    RightGoing,
    /// Travelling towards decreasing position (enters from the right).
    LeftGoing,
}

impl Direction {
    pub fn opposite(self) -> Self {
        match self {
            Direction::RightGoing => Direction::LeftGoing,
            Direction::LeftGoing => Direction::RightGoing,
        }
    }
}

/// Emitters along the channel: decay rate into each direction, propagation
/// phases `φ_i = k·x_i` and detunings `Δ_i = ω_i − ω_in`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EmitterArray {
    gamma: f64,
    phases: Vec<f64>,
    detunings: Vec<f64>,
}

impl EmitterArray {
    pub fn new(gamma: f64, phases: Vec<f64>, detunings: Vec<f64>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::InvalidArray("at least one emitter is required".into()));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidArray(format!("gamma must be positive, got {gamma}")));
        }
        if phases.len() != detunings.len() {
            return Err(Error::InvalidArray(format!("{} phases but {} detunings", phases.len(), detunings.len())));
        }
        if phases.iter().chain(&detunings).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArray("phases and detunings must be finite".into()));
        }
        if phases.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArray("phases must be distinct and increasing along the channel".into()));
        }
        Ok(Self { gamma, phases, detunings })
    }

    /// Two emitters at phases `(0, kl)` with detunings `(delta1, delta2)`.
    pub fn pair(gamma: f64, kl: f64, delta1: f64, delta2: f64) -> Result<Self> {
        Self::new(gamma, vec![0.0, kl], vec![delta1, delta2])
    }

    pub fn n_emitters(&self) -> usize {
        self.phases.len()
    }

    /// Hilbert-space dimension `2^n`.
    pub fn dim(&self) -> usize {
        1 << self.phases.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn detunings(&self) -> &[f64] {
        &self.detunings
    }

    /// The spatially reflected device: emitter order reversed, phases negated,
    /// detunings carried along with their emitters. Driving the mirror
    /// right-going is equivalent to driving the original left-going.
    pub fn mirrored(&self) -> Self {
        Self {
            gamma: self.gamma,
            phases: self.phases.iter().rev().map(|p| -p).collect(),
            detunings: self.detunings.iter().rev().copied().collect(),
        }
    }
}

/// Dense operator on the `2^n`-dimensional emitter space.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator(CMatrix);

impl Operator {
    pub fn new(m: CMatrix) -> Result<Self> {
        let d = m.nrows();
        if d != m.ncols() || !d.is_power_of_two() {
            return Err(Error::Dimension(format!(
                "operator must be square with power-of-two dimension, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self(m))
    }

    pub(crate) fn from_matrix(m: CMatrix) -> Self {
        debug_assert!(m.is_square() && m.nrows().is_power_of_two());
        Self(m)
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_matrix(CMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_matrix(CMatrix::identity(dim, dim))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self(&self.0 * s)
    }

    /// Largest element of `|A − A†|`.
    pub fn hermitian_deviation(&self) -> f64 {
        hermitian_deviation(&self.0)
    }
}

impl Deref for Operator {
    type Target = CMatrix;

    fn deref(&self) -> &CMatrix {
        &self.0
    }
}

impl Add for &Operator {
    type Output = Operator;

    fn add(self, rhs: &Operator) -> Operator {
        Operator(&self.0 + &rhs.0)
    }
}

pub(crate) fn hermitian_deviation(m: &CMatrix) -> f64 {
    let d = m.nrows();
    let mut dev = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Hermitian, unit-trace, positive semidefinite state of the emitters.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    /// Validates the state invariants: Hermitian to 1e-10, trace 1 to 1e-10,
    /// smallest eigenvalue ≥ −1e-8.
    pub fn new(m: CMatrix) -> Result<Self> {
        Operator::new(m.clone())?;
        let herm = hermitian_deviation(&m);
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {herm:e})")));
        }
        let tr = m.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace is {tr}, expected 1")));
        }
        let min_eig = min_eigenvalue(&m);
        if min_eig < -PSD_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_eig:e}")));
        }
        Ok(Self(m))
    }

    /// Symmetrizes and renormalizes a numerically obtained state, then
    /// validates it.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn from_numerical(m: CMatrix) -> Result<Self> {
        let h = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        let tr = h.trace().re;
        if !(tr.abs() > f64::MIN_POSITIVE) {
            return Err(Error::InvalidState("vanishing trace".into()));
        }
        Self::new(h / C64::new(tr, 0.0))
    }

    /// The pure basis state `|index⟩⟨index|`.
    pub fn basis_state(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::Dimension(format!("basis index {index} outside dimension {dim}")));
        }
        let mut m = CMatrix::zeros(dim, dim);
        m[(index, index)] = C64::new(1.0, 0.0);
        Self::new(m)
    }

    /// `|g…g⟩⟨g…g|` for `n` emitters.
    pub fn ground(n: usize) -> Self {
        Self::basis_state(1 << n, 0).expect("ground state is valid")
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim) / C64::new(dim as f64, 0.0))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// `Tr(A ρ)`.
    pub fn expect(&self, a: &CMatrix) -> C64 {
        trace_product(a, &self.0)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.0)
    }

    /// `½ ‖ρ − σ‖₁`.
    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        trace_distance(&self.0, &other.0)
    }
}

fn min_eigenvalue(m: &CMatrix) -> f64 {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    SymmetricEigen::new(h).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// `½ Σ |λ_k|` of the Hermitian part of `a − b`.
pub fn trace_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    let d = a - b;
    let h = (&d + d.adjoint()) * C64::new(0.5, 0.0);
    0.5 * SymmetricEigen::new(h).eigenvalues.iter().map(|x| x.abs()).sum::<f64>()
}

/// `Tr(A B)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let d = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..d {
        for k in 0..d {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

/// Generator of the averaged dynamics acting on column-vectorized density
/// matrices of a `dim`-dimensional Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct Liouvillian {
    hilbert_dim: usize,
    matrix: CMatrix,
}

impl Liouvillian {
    pub fn zeros(hilbert_dim: usize) -> Self {
        let n = hilbert_dim * hilbert_dim;
        Self { hilbert_dim, matrix: CMatrix::zeros(n, n) }
    }

    /// `ρ ↦ −i[H, ρ]`. Hermiticity of `h` is not checked here.
    pub(crate) fn hamiltonian_part(h: &CMatrix) -> Self {
        let d = h.nrows();
        let id = CMatrix::identity(d, d);
        let m = (id.kronecker(h) - h.transpose().kronecker(&id)) * C64::new(0.0, -1.0);
        Self { hilbert_dim: d, matrix: m }
    }

    /// `ρ ↦ rate·(J ρ J† − ½{J†J, ρ})`.
    pub(crate) fn dissipator(j: &CMatrix, rate: f64) -> Self {
        let d = j.nrows();
        let id = CMatrix::identity(d, d);
        let jdj = j.adjoint() * j;
        let m = j.map(|z| z.conj()).kronecker(j)
            - id.kronecker(&jdj) * C64::new(0.5, 0.0)
            - jdj.transpose().kronecker(&id) * C64::new(0.5, 0.0);
        Self { hilbert_dim: d, matrix: m * C64::new(rate, 0.0) }
    }

    /// `ρ ↦ A ρ − ρ A` for an arbitrary (not necessarily Hermitian) `A`.
    pub(crate) fn commutator_with(a: &CMatrix) -> Self {
        let d = a.nrows();
        let id = CMatrix::identity(d, d);
        Self { hilbert_dim: d, matrix: id.kronecker(a) - a.transpose().kronecker(&id) }
    }

    pub fn hilbert_dim(&self) -> usize {
        self.hilbert_dim
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    /// `L[ρ]` as a matrix.
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let d = self.hilbert_dim;
        let v = DVector::from_column_slice(rho.as_slice());
        let out = &self.matrix * v;
        CMatrix::from_column_slice(d, d, out.as_slice())
    }

    /// Largest element of `vec(I)† L`; zero for a trace-preserving generator.
    pub fn trace_preservation_error(&self) -> f64 {
        let d = self.hilbert_dim;
        let n = d * d;
        (0..n).map(|col| (0..d).map(|k| self.matrix[(k * d + k, col)]).sum::<C64>().norm()).fold(0.0, f64::max)
    }
}

impl AddAssign<&Liouvillian> for Liouvillian {
    fn add_assign(&mut self, rhs: &Liouvillian) {
        assert_eq!(self.hilbert_dim, rhs.hilbert_dim, "Liouvillian dimension mismatch");
        self.matrix += &rhs.matrix;
    }
}

impl Add<&Liouvillian> for Liouvillian {
    type Output = Liouvillian;

    fn add(mut self, rhs: &Liouvillian) -> Liouvillian {
        self += rhs;
        self
    }
}

/// Lowering operator of emitter `i` among `n`, identity on the others.
pub fn lowering_operator(i: usize, n: usize) -> Result<Operator> {
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, n });
    }
    let dim = 1usize << n;
    let bit = 1usize << (n - 1 - i);
    let mut m = CMatrix::zeros(dim, dim);
    for b in 0..dim {
        if b & bit != 0 {
            m[(b & !bit, b)] = C64::new(1.0, 0.0);
        }
    }
    Ok(Operator::from_matrix(m))
}

fn lowering_all(n: usize) -> Vec<CMatrix> {
    (0..n).map(|i| lowering_operator(i, n).expect("index in range").into_matrix()).collect()
}

/// Total excitation number `Σ_i σ_i†σ_i`.
pub fn number_operator(n: usize) -> Operator {
    let dim = 1usize << n;
    let mut m = CMatrix::zeros(dim, dim);
    for b in 0..dim {
        m[(b, b)] = C64::new(b.count_ones() as f64, 0.0);
    }
    Operator::from_matrix(m)
}

/// Collective jump operators `(J_R, J_L)` with
/// `J_R = √γ Σ e^{−iφ_i} σ_i` and `J_L = √γ Σ e^{+iφ_i} σ_i`.
pub fn jump_operators(arr: &EmitterArray) -> (Operator, Operator) {
    let n = arr.n_emitters();
    let dim = arr.dim();
    let amp = arr.gamma().sqrt();
    let mut jr = CMatrix::zeros(dim, dim);
    let mut jl = CMatrix::zeros(dim, dim);
    for (s, &phi) in lowering_all(n).iter().zip(arr.phases()) {
        jr += s * C64::from_polar(amp, -phi);
        jl += s * C64::from_polar(amp, phi);
    }
    (Operator::from_matrix(jr), Operator::from_matrix(jl))
}

/// Waveguide-mediated exchange `γ Σ_{i<j} sin|φ_i − φ_j| (σ_i†σ_j + σ_j†σ_i)`.
pub fn exchange_hamiltonian(arr: &EmitterArray) -> Operator {
    let n = arr.n_emitters();
    let dim = arr.dim();
    let s = lowering_all(n);
    let phases = arr.phases();
    let mut h = CMatrix::zeros(dim, dim);
    for i in 0..n {
        for j in (i + 1)..n {
            let c = arr.gamma() * (phases[i] - phases[j]).abs().sin();
            if c != 0.0 {
                let hop = s[i].adjoint() * &s[j];
                h += (&hop + hop.adjoint()) * C64::new(c, 0.0);
            }
        }
    }
    Operator::from_matrix(h)
}

/// `H0 = Σ_i Δ_i σ_i†σ_i`, diagonal in the product basis.
pub fn bare_hamiltonian(arr: &EmitterArray) -> Operator {
    let n = arr.n_emitters();
    let dim = arr.dim();
    let mut h = CMatrix::zeros(dim, dim);
    for b in 0..dim {
        let e: f64 = (0..n).filter(|&i| b & (1 << (n - 1 - i)) != 0).map(|i| arr.detunings()[i]).sum();
        h[(b, b)] = C64::new(e, 0.0);
    }
    Operator::from_matrix(h)
}

/// `H0 + H_ex`.
pub fn system_hamiltonian(arr: &EmitterArray) -> Operator {
    &bare_hamiltonian(arr) + &exchange_hamiltonian(arr)
}

/// `L[ρ] = −i[H, ρ] + Σ_k r_k (J_k ρ J_k† − ½{J_k†J_k, ρ})`.
pub fn build_liouvillian(h_total: &Operator, jumps: &[(Operator, f64)]) -> Result<Liouvillian> {
    let dev = h_total.hermitian_deviation();
    if dev > HERMITIAN_TOL {
        return Err(Error::NotHermitian(dev));
    }
    let mut l = Liouvillian::hamiltonian_part(h_total.matrix());
    for (j, rate) in jumps {
        if j.dim() != h_total.dim() {
            return Err(Error::Dimension(format!(
                "jump operator has dimension {}, Hamiltonian {}",
                j.dim(),
                h_total.dim()
            )));
        }
        l += &Liouvillian::dissipator(j.matrix(), *rate);
    }
    Ok(l)
}

/// Undriven generator of the array: `H0 + H_ex` with unit-rate `J_R`, `J_L`
/// dissipators.
pub fn array_liouvillian(arr: &EmitterArray) -> Liouvillian {
    let (jr, jl) = jump_operators(arr);
    build_liouvillian(&system_hamiltonian(arr), &[(jr, 1.0), (jl, 1.0)])
        .expect("array Hamiltonian is Hermitian by construction")
}
