//! State-vector backend over a dynamic set of named qubits, plus density
//! matrices and classical-quantum states for view analysis.
//!
//! Bit `j` of an amplitude index is the qubit `labels[j]`. New qubits take the
//! highest bit; measured qubits are removed and the indices compacted.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::angles::DyadicAngle;
use crate::graphstate::NodeId;

/// Hard cap on live qubits in one register.
pub const MAX_QUBITS: usize = 22;

/// Probabilities below this are treated as impossible branches.
pub const ZERO_PROBABILITY: f64 = 1e-14;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QubitId {
    /// The qubit of a graph node, wherever it currently lives.
    Node(NodeId),
    /// The simulator-side half of an EPR pair created for a node.
    Partner(NodeId),
    /// A client's original input qubit kept back in the ideal world.
    Held(NodeId),
    /// Purifying reference system, never touched by a protocol.
    Reference(u32),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QsimError {
    #[error("qubit {0:?} is already allocated")]
    AlreadyAllocated(QubitId),
    #[error("qubit {0:?} is not allocated")]
    NotAllocated(QubitId),
    #[error("two-qubit gate on a single qubit {0:?}")]
    SameQubit(QubitId),
    #[error("register would exceed {MAX_QUBITS} qubits")]
    TooManyQubits,
    #[error("label set does not match the register")]
    LabelMismatch,
    #[error("amplitude vector has length {0}, expected a power of two matching the labels")]
    BadLength(usize),
    #[error("state is not normalized (norm² = {0})")]
    NotNormalized(f64),
}

/// Supplies measurement outcomes: sampled, forced, or whatever a driver wants.
pub trait OutcomeSource {
    fn choose(&mut self, qubit: QubitId, probabilities: [f64; 2]) -> u8;
}

/// Born-rule sampling from a seeded stream.
pub struct SampledOutcomes(StdRng);

impl SampledOutcomes {
    pub fn new(seed: u64) -> Self {
        SampledOutcomes(StdRng::seed_from_u64(seed))
    }
}

impl OutcomeSource for SampledOutcomes {
    fn choose(&mut self, _qubit: QubitId, p: [f64; 2]) -> u8 {
        u8::from(self.0.gen::<f64>() >= p[0])
    }
}

/// Forced outcomes per qubit; unlisted qubits get `default`.
#[derive(Debug, Clone, Default)]
pub struct ForcedOutcomes {
    pub outcomes: BTreeMap<QubitId, u8>,
    pub default: u8,
}

impl ForcedOutcomes {
    pub fn all(bit: u8) -> Self {
        ForcedOutcomes {
            outcomes: BTreeMap::new(),
            default: bit,
        }
    }
}

impl OutcomeSource for ForcedOutcomes {
    fn choose(&mut self, qubit: QubitId, _p: [f64; 2]) -> u8 {
        self.outcomes.get(&qubit).copied().unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub outcome: u8,
    pub probability: f64,
    /// False when the chosen branch had probability zero; the register is
    /// then left unnormalized and must not be used further.
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumRegister {
    labels: Vec<QubitId>,
    amps: Vec<Complex64>,
}

impl Default for QuantumRegister {
    fn default() -> Self {
        Self::new()
    }
}

/// `e^{iθ}` for a dyadic angle.
pub fn phase(theta: DyadicAngle) -> Complex64 {
    Complex64::from_polar(1.0, theta.to_radians())
}

impl QuantumRegister {
    pub fn new() -> Self {
        QuantumRegister {
            labels: Vec::new(),
            amps: vec![ONE],
        }
    }

    pub fn from_amplitudes(labels: Vec<QubitId>, amps: Vec<Complex64>) -> Result<Self, QsimError> {
        if labels.len() > MAX_QUBITS {
            return Err(QsimError::TooManyQubits);
        }
        if amps.len() != 1 << labels.len() {
            return Err(QsimError::BadLength(amps.len()));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(QsimError::AlreadyAllocated(*l));
            }
        }
        let reg = QuantumRegister { labels, amps };
        let n = reg.norm_sqr();
        if (n - 1.0).abs() > 1e-12 {
            return Err(QsimError::NotNormalized(n));
        }
        Ok(reg)
    }

    /// Haar-ish random pure state from Gaussian amplitudes.
    pub fn random<R: Rng + ?Sized>(labels: Vec<QubitId>, rng: &mut R) -> Result<Self, QsimError> {
        let dim = 1usize << labels.len();
        let mut amps: Vec<Complex64> = (0..dim)
            .map(|_| {
                let (u1, u2): (f64, f64) = (rng.gen_range(1e-12..1.0), rng.gen());
                let r = (-2.0 * u1.ln()).sqrt();
                Complex64::from_polar(r, 2.0 * std::f64::consts::PI * u2)
            })
            .collect();
        let n = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|a| *a /= n);
        Self::from_amplitudes(labels, amps)
    }

    /// Each `(qubit, reference)` pair in `(|00⟩ + |11⟩)/√2`.
    pub fn maximally_entangled(pairs: &[(QubitId, QubitId)]) -> Result<Self, QsimError> {
        let mut reg = Self::new();
        for &(a, b) in pairs {
            reg.alloc_epr(a, b)?;
        }
        Ok(reg)
    }

    pub fn labels(&self) -> &[QubitId] {
        &self.labels
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, q: QubitId) -> bool {
        self.labels.contains(&q)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    fn index_of(&self, q: QubitId) -> Result<usize, QsimError> {
        self.labels
            .iter()
            .position(|&l| l == q)
            .ok_or(QsimError::NotAllocated(q))
    }

    /// Tensors a new qubit `a0|0⟩ + a1|1⟩` on as the highest bit.
    pub fn alloc_state(&mut self, q: QubitId, a0: Complex64, a1: Complex64) -> Result<(), QsimError> {
        if self.contains(q) {
            return Err(QsimError::AlreadyAllocated(q));
        }
        if self.labels.len() >= MAX_QUBITS {
            return Err(QsimError::TooManyQubits);
        }
        let n = self.amps.len();
        let mut amps = Vec::with_capacity(2 * n);
        amps.extend(self.amps.iter().map(|&a| a * a0));
        amps.extend(self.amps.iter().map(|&a| a * a1));
        self.amps = amps;
        self.labels.push(q);
        Ok(())
    }

    /// `|+_θ⟩ = (|0⟩ + e^{iθ}|1⟩)/√2`.
    pub fn alloc_plus(&mut self, q: QubitId, theta: DyadicAngle) -> Result<(), QsimError> {
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        self.alloc_state(q, h, h * phase(theta))
    }

    pub fn alloc_zero(&mut self, q: QubitId) -> Result<(), QsimError> {
        self.alloc_state(q, ONE, ZERO)
    }

    /// `(|00⟩ + |11⟩)/√2` on `(a, b)`.
    pub fn alloc_epr(&mut self, a: QubitId, b: QubitId) -> Result<(), QsimError> {
        if a == b {
            return Err(QsimError::SameQubit(a));
        }
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        self.alloc_state(a, h, h)?;
        self.alloc_zero(b)?;
        self.apply_cnot(a, b)
    }

    /// Appends all qubits of `other` (tensor product, `other` in the high bits).
    pub fn tensor(&mut self, other: &QuantumRegister) -> Result<(), QsimError> {
        for l in &other.labels {
            if self.contains(*l) {
                return Err(QsimError::AlreadyAllocated(*l));
            }
        }
        if self.len() + other.len() > MAX_QUBITS {
            return Err(QsimError::TooManyQubits);
        }
        let mut amps = Vec::with_capacity(self.amps.len() * other.amps.len());
        for &b in &other.amps {
            amps.extend(self.amps.iter().map(|&a| a * b));
        }
        self.amps = amps;
        self.labels.extend_from_slice(&other.labels);
        Ok(())
    }

    pub fn apply_cz(&mut self, a: QubitId, b: QubitId) -> Result<(), QsimError> {
        if a == b {
            return Err(QsimError::SameQubit(a));
        }
        let mask = (1usize << self.index_of(a)?) | (1usize << self.index_of(b)?);
        for (x, amp) in self.amps.iter_mut().enumerate() {
            if x & mask == mask {
                *amp = -*amp;
            }
        }
        Ok(())
    }

    pub fn apply_x(&mut self, q: QubitId) -> Result<(), QsimError> {
        let bit = 1usize << self.index_of(q)?;
        for x in 0..self.amps.len() {
            if x & bit == 0 {
                self.amps.swap(x, x | bit);
            }
        }
        Ok(())
    }

    pub fn apply_z(&mut self, q: QubitId) -> Result<(), QsimError> {
        let bit = 1usize << self.index_of(q)?;
        for (x, amp) in self.amps.iter_mut().enumerate() {
            if x & bit != 0 {
                *amp = -*amp;
            }
        }
        Ok(())
    }

    pub fn apply_h(&mut self, q: QubitId) -> Result<(), QsimError> {
        let bit = 1usize << self.index_of(q)?;
        for x in 0..self.amps.len() {
            if x & bit == 0 {
                let (a, b) = (self.amps[x], self.amps[x | bit]);
                self.amps[x] = (a + b) * FRAC_1_SQRT_2;
                self.amps[x | bit] = (a - b) * FRAC_1_SQRT_2;
            }
        }
        Ok(())
    }

    pub fn apply_cnot(&mut self, control: QubitId, target: QubitId) -> Result<(), QsimError> {
        if control == target {
            return Err(QsimError::SameQubit(control));
        }
        let c = 1usize << self.index_of(control)?;
        let t = 1usize << self.index_of(target)?;
        for x in 0..self.amps.len() {
            if x & c != 0 && x & t == 0 {
                self.amps.swap(x, x | t);
            }
        }
        Ok(())
    }

    /// `Z(θ) = diag(1, e^{iθ})`.
    pub fn apply_z_rotation(&mut self, q: QubitId, theta: DyadicAngle) -> Result<(), QsimError> {
        let bit = 1usize << self.index_of(q)?;
        let p = phase(theta);
        for (x, amp) in self.amps.iter_mut().enumerate() {
            if x & bit != 0 {
                *amp *= p;
            }
        }
        Ok(())
    }

    /// `X^sx` then `Z^sz`.
    pub fn apply_correction(&mut self, q: QubitId, sx: u8, sz: u8) -> Result<(), QsimError> {
        self.index_of(q)?;
        if sx & 1 == 1 {
            self.apply_x(q)?;
        }
        if sz & 1 == 1 {
            self.apply_z(q)?;
        }
        Ok(())
    }

    /// The one-time pad `Z(α) X^t`: `X^t` first.
    pub fn apply_pad(&mut self, q: QubitId, alpha: DyadicAngle, t: u8) -> Result<(), QsimError> {
        self.apply_correction(q, t, 0)?;
        self.apply_z_rotation(q, alpha)
    }

    /// Contracts qubit `q` with the bra `c0⟨0| + c1⟨1|` and removes it.
    /// Returns the squared norm of what is left; does not renormalize.
    pub fn contract(&mut self, q: QubitId, c0: Complex64, c1: Complex64) -> Result<f64, QsimError> {
        let pos = self.index_of(q)?;
        let low = (1usize << pos) - 1;
        let half = self.amps.len() / 2;
        let mut out = Vec::with_capacity(half);
        let mut norm = 0.0;
        for y in 0..half {
            let x0 = ((y & !low) << 1) | (y & low);
            let v = c0 * self.amps[x0] + c1 * self.amps[x0 | (1 << pos)];
            norm += v.norm_sqr();
            out.push(v);
        }
        self.amps = out;
        self.labels.remove(pos);
        Ok(norm)
    }

    fn angle_bra(delta: DyadicAngle, outcome: u8) -> (Complex64, Complex64) {
        // ⟨+_δ| = (⟨0| + e^{-iδ}⟨1|)/√2; outcome 1 is the δ+π basis vector.
        let theta = delta.add_pi(outcome);
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        (h, h * phase(theta).conj())
    }

    /// Born probabilities of the two outcomes of measuring `q` in `|±_δ⟩`.
    pub fn branch_probabilities(&self, q: QubitId, delta: DyadicAngle) -> Result<[f64; 2], QsimError> {
        let pos = self.index_of(q)?;
        let bit = 1usize << pos;
        let c = phase(delta).conj();
        let mut p0 = 0.0;
        let mut total = 0.0;
        for x in 0..self.amps.len() {
            if x & bit == 0 {
                let (a, b) = (self.amps[x], self.amps[x | bit]);
                p0 += ((a + c * b) * FRAC_1_SQRT_2).norm_sqr();
                total += a.norm_sqr() + b.norm_sqr();
            }
        }
        let p0 = (p0 / total).clamp(0.0, 1.0);
        Ok([p0, 1.0 - p0])
    }

    /// Projects `q` onto the given outcome of the `|±_δ⟩` basis, removes it and
    /// renormalizes. Returns the branch probability.
    pub fn project(&mut self, q: QubitId, delta: DyadicAngle, outcome: u8) -> Result<f64, QsimError> {
        let before = self.norm_sqr();
        let (c0, c1) = Self::angle_bra(delta, outcome);
        let p = self.contract(q, c0, c1)? / before;
        if p > ZERO_PROBABILITY {
            self.scale(1.0 / (p * before).sqrt());
        }
        Ok(p)
    }

    fn scale(&mut self, f: f64) {
        self.amps.iter_mut().for_each(|a| *a *= f);
    }

    pub fn measure_angle(
        &mut self,
        q: QubitId,
        delta: DyadicAngle,
        source: &mut dyn OutcomeSource,
    ) -> Result<Measurement, QsimError> {
        let probs = self.branch_probabilities(q, delta)?;
        let outcome = source.choose(q, probs) & 1;
        let probability = self.project(q, delta, outcome)?;
        Ok(Measurement {
            outcome,
            probability,
            valid: probability > ZERO_PROBABILITY,
        })
    }

    pub fn z_probabilities(&self, q: QubitId) -> Result<[f64; 2], QsimError> {
        let bit = 1usize << self.index_of(q)?;
        let mut p = [0.0; 2];
        for (x, a) in self.amps.iter().enumerate() {
            p[usize::from(x & bit != 0)] += a.norm_sqr();
        }
        let total = p[0] + p[1];
        Ok([p[0] / total, p[1] / total])
    }

    /// Computational-basis projection, removing the qubit.
    pub fn project_z(&mut self, q: QubitId, outcome: u8) -> Result<f64, QsimError> {
        let before = self.norm_sqr();
        let (c0, c1) = if outcome & 1 == 0 { (ONE, ZERO) } else { (ZERO, ONE) };
        let p = self.contract(q, c0, c1)? / before;
        if p > ZERO_PROBABILITY {
            self.scale(1.0 / (p * before).sqrt());
        }
        Ok(p)
    }

    pub fn measure_z(&mut self, q: QubitId, source: &mut dyn OutcomeSource) -> Result<Measurement, QsimError> {
        let probs = self.z_probabilities(q)?;
        let outcome = source.choose(q, probs) & 1;
        let probability = self.project_z(q, outcome)?;
        Ok(Measurement {
            outcome,
            probability,
            valid: probability > ZERO_PROBABILITY,
        })
    }

    pub fn relabel(&mut self, from: QubitId, to: QubitId) -> Result<(), QsimError> {
        if from != to && self.contains(to) {
            return Err(QsimError::AlreadyAllocated(to));
        }
        let i = self.index_of(from)?;
        self.labels[i] = to;
        Ok(())
    }

    /// Amplitudes re-indexed so that bit `j` is `order[j]`. `order` must be a
    /// permutation of the register's labels.
    pub fn state_in_order(&self, order: &[QubitId]) -> Result<Vec<Complex64>, QsimError> {
        if order.len() != self.labels.len() {
            return Err(QsimError::LabelMismatch);
        }
        let pos: Vec<usize> = order
            .iter()
            .map(|&q| self.index_of(q).map_err(|_| QsimError::LabelMismatch))
            .collect::<Result<_, _>>()?;
        if pos.iter().enumerate().all(|(j, &p)| j == p) {
            return Ok(self.amps.clone());
        }
        let mut out = vec![ZERO; self.amps.len()];
        for (y, slot) in out.iter_mut().enumerate() {
            let mut x = 0;
            for (j, &p) in pos.iter().enumerate() {
                x |= ((y >> j) & 1) << p;
            }
            *slot = self.amps[x];
        }
        Ok(out)
    }

    /// `|⟨ψ|φ⟩|²` over the same label set, insensitive to global phase and
    /// label order.
    pub fn fidelity(&self, other: &QuantumRegister) -> Result<f64, QsimError> {
        let b = other.state_in_order(&self.labels)?;
        let overlap: Complex64 = self.amps.iter().zip(&b).map(|(a, b)| a.conj() * b).sum();
        Ok(overlap.norm_sqr() / (self.norm_sqr() * other.norm_sqr()))
    }

    /// Reduced density matrix on `keep` (in that bit order), tracing out the rest.
    pub fn reduced_density(&self, keep: &[QubitId]) -> Result<DensityMatrix, QsimError> {
        let mut order = keep.to_vec();
        for l in &self.labels {
            if !keep.contains(l) {
                order.push(*l);
            }
        }
        let amps = self.state_in_order(&order)?;
        let d = 1usize << keep.len();
        let rest = amps.len() / d;
        let norm = self.norm_sqr();
        let mut m = DMatrix::<Complex64>::zeros(d, d);
        for e in 0..rest {
            let block = &amps[e * d..(e + 1) * d];
            for a in 0..d {
                if block[a] == ZERO {
                    continue;
                }
                for b in 0..d {
                    m[(a, b)] += block[a] * block[b].conj();
                }
            }
        }
        Ok(DensityMatrix {
            labels: keep.to_vec(),
            data: m / Complex64::new(norm, 0.0),
        })
    }
}

/// A density matrix over named qubits, bit `j` of the row index being `labels[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub labels: Vec<QubitId>,
    pub data: DMatrix<Complex64>,
}

impl DensityMatrix {
    pub fn zeros(labels: Vec<QubitId>) -> Self {
        let d = 1usize << labels.len();
        DensityMatrix {
            labels,
            data: DMatrix::zeros(d, d),
        }
    }

    pub fn from_pure(labels: Vec<QubitId>, amps: &[Complex64]) -> Self {
        let d = amps.len();
        let data = DMatrix::from_fn(d, d, |a, b| amps[a] * amps[b].conj());
        DensityMatrix { labels, data }
    }

    pub fn maximally_mixed(labels: Vec<QubitId>) -> Self {
        let d = 1usize << labels.len();
        DensityMatrix {
            labels,
            data: DMatrix::identity(d, d) / Complex64::new(d as f64, 0.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.data.trace().re
    }

    pub fn add_weighted(&mut self, other: &DensityMatrix, w: f64) {
        assert_eq!(self.labels, other.labels, "density matrices over different qubits");
        self.data += &other.data * Complex64::new(w, 0.0);
    }

    /// Adds `w·|ψ⟩⟨ψ|` without building the outer product separately.
    pub fn add_pure(&mut self, amps: &[Complex64], w: f64) {
        let d = self.dim();
        assert_eq!(amps.len(), d);
        for a in 0..d {
            let wa = amps[a] * w;
            if wa == ZERO {
                continue;
            }
            for b in 0..d {
                self.data[(a, b)] += wa * amps[b].conj();
            }
        }
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let d = self.dim();
        (0..d).all(|a| (0..d).all(|b| (self.data[(a, b)] - self.data[(b, a)].conj()).norm() <= tol))
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.data.clone().symmetric_eigenvalues().iter().copied().collect()
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.eigenvalues().iter().all(|&l| l >= -tol)
    }

    /// `½‖ρ − σ‖₁`. Panics if the label lists differ.
    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        assert_eq!(self.labels, other.labels, "density matrices over different qubits");
        trace_norm(&(&self.data - &other.data)) / 2.0
    }

    pub fn partial_trace(&self, keep: &[QubitId]) -> Result<DensityMatrix, QsimError> {
        let pos: Vec<usize> = keep
            .iter()
            .map(|q| self.labels.iter().position(|l| l == q).ok_or(QsimError::NotAllocated(*q)))
            .collect::<Result<_, _>>()?;
        let traced: Vec<usize> = (0..self.labels.len()).filter(|j| !pos.contains(j)).collect();
        let dk = 1usize << keep.len();
        let mut m = DMatrix::<Complex64>::zeros(dk, dk);
        let spread = |y: usize, bits: &[usize]| bits.iter().enumerate().fold(0, |x, (j, &p)| x | (((y >> j) & 1) << p));
        for e in 0..1usize << traced.len() {
            let base = spread(e, &traced);
            for a in 0..dk {
                let ra = base | spread(a, &pos);
                for b in 0..dk {
                    m[(a, b)] += self.data[(ra, base | spread(b, &pos))];
                }
            }
        }
        Ok(DensityMatrix {
            labels: keep.to_vec(),
            data: m,
        })
    }
}

/// Trace norm of a Hermitian matrix.
pub fn trace_norm(m: &DMatrix<Complex64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 {
        return m[(0, 0)].norm();
    }
    m.clone().symmetric_eigenvalues().iter().map(|l| l.abs()).sum()
}

fn serialize_matrix<S: Serializer>(m: &DMatrix<Complex64>, s: S) -> Result<S::Ok, S::Error> {
    let rows: Vec<Vec<[f64; 2]>> = (0..m.nrows())
        .map(|a| (0..m.ncols()).map(|b| [m[(a, b)].re, m[(a, b)].im]).collect())
        .collect();
    rows.serialize(s)
}

#[derive(Serialize)]
struct DensityJson<'a> {
    labels: &'a [QubitId],
    #[serde(serialize_with = "serialize_matrix")]
    matrix: &'a DMatrix<Complex64>,
}

impl Serialize for DensityMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        DensityJson {
            labels: &self.labels,
            matrix: &self.data,
        }
        .serialize(s)
    }
}

/// A classical-quantum state `Σ_c |c⟩⟨c| ⊗ ρ_c`, with each block
/// subnormalized by the probability of its classical key.
#[derive(Debug, Clone, PartialEq)]
pub struct CqState<K: Ord> {
    pub labels: Vec<QubitId>,
    pub blocks: BTreeMap<K, DMatrix<Complex64>>,
}

impl<K: Ord + Clone> CqState<K> {
    pub fn new(labels: Vec<QubitId>) -> Self {
        CqState {
            labels,
            blocks: BTreeMap::new(),
        }
    }

    fn block(&mut self, key: K) -> &mut DMatrix<Complex64> {
        let d = 1usize << self.labels.len();
        self.blocks.entry(key).or_insert_with(|| DMatrix::zeros(d, d))
    }

    pub fn add_pure(&mut self, key: K, amps: &[Complex64], w: f64) {
        let m = self.block(key);
        let d = m.nrows();
        for a in 0..d {
            let wa = amps[a] * w;
            if wa == ZERO {
                continue;
            }
            for b in 0..d {
                m[(a, b)] += wa * amps[b].conj();
            }
        }
    }

    pub fn add_density(&mut self, key: K, rho: &DMatrix<Complex64>, w: f64) {
        *self.block(key) += rho * Complex64::new(w, 0.0);
    }

    pub fn merge(&mut self, other: &CqState<K>) {
        assert_eq!(self.labels, other.labels);
        for (k, m) in &other.blocks {
            *self.block(k.clone()) += m;
        }
    }

    pub fn total_trace(&self) -> f64 {
        self.blocks.values().map(|m| m.trace().re).sum()
    }

    pub fn probability(&self, key: &K) -> f64 {
        self.blocks.get(key).map_or(0.0, |m| m.trace().re)
    }

    /// Total variation distance between the classical marginals.
    pub fn classical_distance(&self, other: &CqState<K>) -> f64 {
        let mut keys: Vec<&K> = self.blocks.keys().chain(other.blocks.keys()).collect();
        keys.sort();
        keys.dedup();
        keys.iter().map(|k| (self.probability(k) - other.probability(k)).abs()).sum::<f64>() / 2.0
    }

    /// `½‖·‖₁` of the block-diagonal difference.
    pub fn trace_distance(&self, other: &CqState<K>) -> f64 {
        assert_eq!(self.labels, other.labels, "cq states over different qubits");
        let d = 1usize << self.labels.len();
        let zero = DMatrix::<Complex64>::zeros(d, d);
        let mut keys: Vec<&K> = self.blocks.keys().chain(other.blocks.keys()).collect();
        keys.sort();
        keys.dedup();
        keys.iter()
            .map(|k| {
                let a = self.blocks.get(k).unwrap_or(&zero);
                let b = other.blocks.get(k).unwrap_or(&zero);
                trace_norm(&(a - b))
            })
            .sum::<f64>()
            / 2.0
    }

    /// Sum of all blocks, forgetting the classical key.
    pub fn average(&self) -> DensityMatrix {
        let mut out = DensityMatrix::zeros(self.labels.clone());
        for m in self.blocks.values() {
            out.data += m;
        }
        out
    }
}
