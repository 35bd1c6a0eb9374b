//! Driven-system Hamiltonian builders: disjoint qubits under a common drive,
//! the anharmonic ladder, and a single qubit with its counter-rotating
//! sideband kept explicit.
//!
//! A [`LevelSystem`] is an immutable description; sampling `H(t)` allocates a
//! fresh matrix per call and is reentrant. Natural units: frequencies in
//! units of the primary gap, time in inverse-gap units.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::{DragError, Result};

pub const MAX_QUBITS: usize = 4;
pub const MAX_LADDER_DIM: usize = 8;

/// Instantaneous drive values handed to a model when sampling `H(t)`:
/// the complex drive `omega = (ReOmega + i ImOmega) e^{-i phi}` and the
/// pulse's diagonal detuning channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveSample {
    pub omega: Complex64,
    pub detuning: f64,
}

impl DriveSample {
    pub fn zero() -> Self {
        DriveSample { omega: Complex64::new(0.0, 0.0), detuning: 0.0 }
    }

    pub fn real(re: f64) -> Self {
        DriveSample { omega: Complex64::new(re, 0.0), detuning: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    /// `n` uncoupled qubits sharing one drive line.
    DisjointQubits { n: usize },
    /// Nearest-neighbor-coupled anharmonic ladder of `d` levels.
    Ladder,
    /// Two-level system in the frame rotating opposite to the drive: the
    /// surviving drive term carries an explicit `e^{+2 i omega_d t}` factor
    /// alongside the static one.
    CounterRotating { omega_d: f64 },
    /// Lab-frame two-level system with a cosine carrier on the drive,
    /// used to derive the counter-rotating model by a frame change.
    LabTwoLevel { omega_q: f64, omega_c: f64 },
}

/// Immutable description of a driven level system.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSystem {
    kind: ModelKind,
    dimension: usize,
    /// Static diagonal offsets. Disjoint qubits: one per qubit. Ladder: one
    /// per level. Counter-rotating / lab: per basis state.
    offsets: Vec<f64>,
    /// Drive couplings. Disjoint qubits: one per qubit (first is 1).
    /// Ladder: one per adjacent-level transition.
    couplings: Vec<f64>,
    /// Per-basis-state frame frequencies applied as
    /// `H -> e^{iFt} H e^{-iFt} - F`; all zeros means no transformation.
    frame: Vec<f64>,
}

/// One Hermitian sample of the Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSample {
    pub matrix: DMatrix<Complex64>,
    pub t: f64,
}

/// `n` disjoint qubits under a common drive:
/// `H = sum_m lambda_m Omega~ sigma_m^+ + h.c. + sum_m Delta_m(t) |1><1|_m`.
///
/// The first entry is the driven qubit: its coupling is forced to 1 and the
/// pulse detuning channel adds to its diagonal.
pub fn disjoint_qubits_model(offsets: &[f64], couplings: &[f64]) -> Result<LevelSystem> {
    let n = offsets.len();
    if n == 0 || n != couplings.len() {
        return Err(DragError::DimensionMismatch(format!(
            "offsets ({}) and couplings ({}) must be equal-length and nonempty",
            n,
            couplings.len()
        )));
    }
    if n > MAX_QUBITS {
        return Err(DragError::SizeError(format!("n = {n} qubits exceeds limit {MAX_QUBITS}")));
    }
    let mut couplings = couplings.to_vec();
    couplings[0] = 1.0;
    Ok(LevelSystem {
        kind: ModelKind::DisjointQubits { n },
        dimension: 1 << n,
        offsets: offsets.to_vec(),
        couplings,
        frame: vec![0.0; 1 << n],
    })
}

/// `d`-level anharmonic ladder:
/// `H = sum_j (j delta(t) + Delta_j) Pi_j + sum_j lambda_{j-1} Omega~ sigma^+_{j-1,j} + h.c.`
///
/// `Delta_j` defaults to `(j-1) Delta` (uniform anharmonicity): 0, 0, Delta,
/// 2 Delta, ... Couplings default to `lambda_0 = 1`; missing higher couplings
/// repeat the last supplied value.
pub fn anharmonic_ladder_model(d: usize, delta: f64, couplings: &[f64]) -> Result<LevelSystem> {
    if d < 3 {
        return Err(DragError::SizeError(format!("ladder dimension d = {d} must be >= 3")));
    }
    if d > MAX_LADDER_DIM {
        return Err(DragError::SizeError(format!(
            "ladder dimension d = {d} exceeds limit {MAX_LADDER_DIM}"
        )));
    }
    let offsets: Vec<f64> =
        (0..d).map(|j| if j < 2 { 0.0 } else { (j as f64 - 1.0) * delta }).collect();
    let mut c = Vec::with_capacity(d - 1);
    for j in 0..d - 1 {
        let v = couplings
            .get(j)
            .or(couplings.last())
            .copied()
            .unwrap_or(if j == 0 { 1.0 } else { 1.0 });
        c.push(if j == 0 { 1.0 } else { v });
    }
    Ok(LevelSystem {
        kind: ModelKind::Ladder,
        dimension: d,
        offsets,
        couplings: c,
        frame: vec![0.0; d],
    })
}

/// Two-level system in the frame rotating opposite to the drive carrier.
pub fn counter_rotating_model(omega_d: f64) -> Result<LevelSystem> {
    if !(omega_d > 0.0) {
        return Err(DragError::InvalidSpec(format!("carrier omega_d = {omega_d} must be > 0")));
    }
    Ok(LevelSystem {
        kind: ModelKind::CounterRotating { omega_d },
        dimension: 2,
        offsets: vec![0.0, 2.0 * omega_d],
        couplings: vec![1.0],
        frame: vec![0.0; 2],
    })
}

/// Lab-frame two-level system: `diag(0, omega_q)` with drive
/// `Omega~ (e^{+i omega_c t} + e^{-i omega_c t}) sigma^+ + h.c.`
pub fn lab_two_level_model(omega_q: f64, omega_c: f64) -> Result<LevelSystem> {
    if !(omega_c > 0.0) {
        return Err(DragError::InvalidSpec(format!("carrier omega_c = {omega_c} must be > 0")));
    }
    Ok(LevelSystem {
        kind: ModelKind::LabTwoLevel { omega_q, omega_c },
        dimension: 2,
        offsets: vec![0.0, omega_q],
        couplings: vec![1.0],
        frame: vec![0.0; 2],
    })
}

impl LevelSystem {
    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    pub fn frame(&self) -> &[f64] {
        &self.frame
    }

    /// Fastest angular frequency present, used to size integrator grids.
    pub fn fastest_frequency(&self) -> f64 {
        let base = self
            .offsets
            .iter()
            .chain(self.frame.iter())
            .fold(0.0f64, |m, &x| m.max(x.abs()));
        match self.kind {
            ModelKind::CounterRotating { omega_d } => base.max(2.0 * omega_d),
            ModelKind::LabTwoLevel { omega_c, omega_q } => base.max(omega_c.abs()).max(omega_q.abs()),
            _ => base,
        }
    }

    /// Return a copy carried into a rotating frame: per-basis-state
    /// frequencies `f` transform samples as `e^{iFt} H e^{-iFt} - F`.
    /// Frames compose additively.
    pub fn with_frame(&self, frequencies: &[f64]) -> Result<LevelSystem> {
        if frequencies.len() != self.dimension {
            return Err(DragError::DimensionMismatch(format!(
                "frame has {} entries for dimension {}",
                frequencies.len(),
                self.dimension
            )));
        }
        let mut out = self.clone();
        for (f, add) in out.frame.iter_mut().zip(frequencies) {
            *f += add;
        }
        Ok(out)
    }

    /// Sample `H(t)` under the given drive values.
    pub fn hamiltonian(&self, t: f64, drive: DriveSample) -> DMatrix<Complex64> {
        let d = self.dimension;
        let mut h = DMatrix::<Complex64>::zeros(d, d);
        let om = drive.omega;
        match self.kind {
            ModelKind::DisjointQubits { n } => {
                // basis state s: bit (n-1-m) holds qubit m so that qubit 0 is
                // the leftmost Kronecker factor
                for s in 0..d {
                    let mut diag = 0.0;
                    for m in 0..n {
                        let bit = n - 1 - m;
                        if s >> bit & 1 == 1 {
                            // the detuning channel is a drive-frequency
                            // modulation: every transition shifts with it
                            diag += self.offsets[m] + drive.detuning;
                        }
                    }
                    h[(s, s)] = Complex64::new(diag, 0.0);
                    for m in 0..n {
                        let bit = n - 1 - m;
                        if s >> bit & 1 == 0 {
                            let s1 = s | 1 << bit;
                            let elem = om * self.couplings[m];
                            h[(s1, s)] += elem;
                            h[(s, s1)] += elem.conj();
                        }
                    }
                }
            }
            ModelKind::Ladder => {
                for j in 0..d {
                    h[(j, j)] =
                        Complex64::new(j as f64 * drive.detuning + self.offsets[j], 0.0);
                }
                for j in 1..d {
                    let elem = om * self.couplings[j - 1];
                    h[(j, j - 1)] = elem;
                    h[(j - 1, j)] = elem.conj();
                }
            }
            ModelKind::CounterRotating { omega_d } => {
                h[(0, 0)] = Complex64::new(0.0, 0.0);
                h[(1, 1)] = Complex64::new(2.0 * omega_d + drive.detuning, 0.0);
                // raising-operator coupling: the oscillating factor cancels
                // the e^{+2 i omega_d t} interaction-picture phase of the
                // 2 omega_d gap (resonant drive); the constant term is the
                // counter-rotating sideband this model exists to expose
                let osc = Complex64::new(0.0, -2.0 * omega_d * t).exp();
                let elem = om * (osc + 1.0);
                h[(1, 0)] = elem;
                h[(0, 1)] = elem.conj();
            }
            ModelKind::LabTwoLevel { omega_q, omega_c } => {
                h[(1, 1)] = Complex64::new(omega_q + drive.detuning, 0.0);
                let carrier = Complex64::new(0.0, omega_c * t).exp();
                let elem = om * (carrier + carrier.conj());
                h[(1, 0)] = elem;
                h[(0, 1)] = elem.conj();
            }
        }
        if self.frame.iter().any(|&f| f != 0.0) {
            for r in 0..d {
                for c in 0..d {
                    if r == c {
                        h[(r, r)] -= Complex64::new(self.frame[r], 0.0);
                    } else {
                        let phase = Complex64::new(0.0, (self.frame[r] - self.frame[c]) * t).exp();
                        h[(r, c)] *= phase;
                    }
                }
            }
        }
        h
    }

    pub fn sample(&self, t: f64, drive: DriveSample) -> HamiltonianSample {
        HamiltonianSample { matrix: self.hamiltonian(t, drive), t }
    }
}

/// Operator-norm (spectral-norm upper bound via Frobenius) Hermiticity defect.
pub fn hermiticity_defect(h: &DMatrix<Complex64>) -> f64 {
    (h - h.adjoint()).norm()
}
