//! Fidelity measures, computational-subspace projection, and carrier-phase
//! compensation (virtual-Z and phase ramping).

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::propagator::UnitaryMatrix;
use crate::quad::CumulativeIntegral;
use crate::shaping::ShapedPulse;
use crate::{DragError, Result};

/// Desired evolution to score against.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetGate {
    pub matrix: DMatrix<Complex64>,
    pub label: String,
}

impl TargetGate {
    pub fn new(matrix: DMatrix<Complex64>, label: impl Into<String>) -> Result<Self> {
        let d = matrix.nrows();
        let defect = (matrix.adjoint() * &matrix - DMatrix::<Complex64>::identity(d, d)).norm();
        if defect > 1e-12 {
            return Err(DragError::InvalidSpec(format!(
                "target gate not unitary: defect {defect:.3e}"
            )));
        }
        Ok(TargetGate { matrix, label: label.into() })
    }

    /// `X` on the first (driven) qubit, identity on the rest.
    pub fn x_on_first(n_qubits: usize) -> Self {
        let d = 1 << n_qubits;
        let mut m = DMatrix::<Complex64>::zeros(d, d);
        let top = d >> 1;
        for s in 0..d {
            m[(s ^ top, s)] = Complex64::new(1.0, 0.0);
        }
        TargetGate { matrix: m, label: format!("X(x)1^{}", n_qubits - 1) }
    }

    pub fn x_qubit() -> Self {
        Self::x_on_first(1)
    }
}

fn check_dims(u: &DMatrix<Complex64>, v: &DMatrix<Complex64>) -> Result<()> {
    if u.nrows() != v.nrows() || u.ncols() != v.ncols() {
        return Err(DragError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            u.nrows(),
            u.ncols(),
            v.nrows(),
            v.ncols()
        )));
    }
    Ok(())
}

/// Phase-insensitive fidelity `(1/2^n) Tr|U^dagger V|`, with the trace of
/// the absolute value read per diagonal entry: `sum_j |(U^dagger V)_{jj}|`.
/// This is the only reading under which an off-resonant drive produces a
/// nonzero, time-dependent selection error for a strictly unitary evolution
/// (the full singular-value sum of a unitary product is constant).
pub fn selection_fidelity(
    u: &DMatrix<Complex64>,
    v: &DMatrix<Complex64>,
    n_qubits: usize,
) -> Result<f64> {
    check_dims(u, v)?;
    let m = u.adjoint() * v;
    let s: f64 = (0..m.nrows()).map(|j| m[(j, j)].norm()).sum();
    Ok(s / (1 << n_qubits) as f64)
}

/// Phase-sensitive fidelity `|Tr(U^dagger V)|^2 / 4^n` (denominator chosen
/// so `F(U, U) = 1`).
pub fn gate_fidelity(
    u: &DMatrix<Complex64>,
    v: &DMatrix<Complex64>,
    n_qubits: usize,
) -> Result<f64> {
    check_dims(u, v)?;
    let tr = (u.adjoint() * v).trace();
    Ok(tr.norm_sqr() / 4.0f64.powi(n_qubits as i32))
}

pub fn selection_fidelity_u(u: &UnitaryMatrix, v: &TargetGate, n_qubits: usize) -> Result<f64> {
    selection_fidelity(u.entries(), &v.matrix, n_qubits)
}

pub fn gate_fidelity_u(u: &UnitaryMatrix, v: &TargetGate, n_qubits: usize) -> Result<f64> {
    gate_fidelity(u.entries(), &v.matrix, n_qubits)
}

/// Kept computational block of a (possibly leaky) propagator plus the
/// worst-case leakage `1 - sigma_min^2` of the block.
pub fn project_to_computational(
    u: &DMatrix<Complex64>,
    kept_levels: &[usize],
) -> Result<(DMatrix<Complex64>, f64)> {
    let d = u.nrows();
    for &k in kept_levels {
        if k >= d {
            return Err(DragError::DimensionMismatch(format!(
                "kept level {k} outside dimension {d}"
            )));
        }
    }
    let b = kept_levels.len();
    let mut block = DMatrix::<Complex64>::zeros(b, b);
    for (r, &kr) in kept_levels.iter().enumerate() {
        for (c, &kc) in kept_levels.iter().enumerate() {
            block[(r, c)] = u[(kr, kc)];
        }
    }
    let svd = block.clone().svd(false, false);
    let sigma_min = svd
        .singular_values
        .iter()
        .fold(f64::INFINITY, |m, &s| m.min(s));
    Ok((block, (1.0 - sigma_min * sigma_min).max(0.0)))
}

/// `diag(e^{i phi_j}) * U`.
pub fn apply_virtual_z(u: &DMatrix<Complex64>, phases: &[f64]) -> Result<DMatrix<Complex64>> {
    if phases.len() != u.nrows() {
        return Err(DragError::DimensionMismatch(format!(
            "{} phases for dimension {}",
            phases.len(),
            u.nrows()
        )));
    }
    let mut out = u.clone();
    for (r, &p) in phases.iter().enumerate() {
        let z = Complex64::new(0.0, p).exp();
        for c in 0..u.ncols() {
            out[(r, c)] *= z;
        }
    }
    Ok(out)
}

/// Per-level phases that maximize `gate_fidelity(Z U, V)`:
/// `Tr((Z U)^dagger V) = sum_j e^{-i phi_j} (V U^dagger)_{jj}`, aligned by
/// `phi_j = arg((V U^dagger)_{jj})`. Returns the phases and the optimized
/// fidelity.
pub fn optimize_virtual_z(
    u: &DMatrix<Complex64>,
    v: &DMatrix<Complex64>,
    n_qubits: usize,
) -> Result<(Vec<f64>, f64)> {
    check_dims(u, v)?;
    let m = v * u.adjoint();
    let phases: Vec<f64> = (0..m.nrows()).map(|j| m[(j, j)].arg()).collect();
    let zu = apply_virtual_z(u, &phases)?;
    let f = gate_fidelity(&zu, v, n_qubits)?;
    Ok((phases, f))
}

/// Replace a time-dependent detuning by an equivalent constant-carrier
/// pulse: with `phi_d(t) = int_0^t (delta(t') - mean_detuning) dt'`, the
/// quadratures remix as `Omega' = Omega e^{+i phi_d}` and the detuning map
/// becomes the constant `mean_detuning`. The propagators agree up to a
/// final virtual-Z (the frame is the identity at `t = 0`).
pub fn phase_ramp_compensation(pulse: &ShapedPulse, mean_detuning: f64) -> ShapedPulse {
    let t_max = pulse.duration();
    let p = pulse.clone();
    let cells = 8192;
    let ramp = std::sync::Arc::new(CumulativeIntegral::new(
        {
            let p = pulse.clone();
            move |t| p.detuning(t) - mean_detuning
        },
        t_max,
        cells,
    ));
    let ramp_re = ramp.clone();
    let p_re = p.clone();
    let re = move |t: f64| {
        let phi = ramp_re.eval(t);
        p_re.re_omega(t) * phi.cos() - p_re.im_omega(t) * phi.sin()
    };
    let p_im = p.clone();
    let im = move |t: f64| {
        let phi = ramp.eval(t);
        p_im.re_omega(t) * phi.sin() + p_im.im_omega(t) * phi.cos()
    };
    let mut out = ShapedPulse::new(
        re,
        im,
        move |_| mean_detuning,
        pulse.phase(),
        pulse.theta(),
        t_max,
        format!("{}+ramped", pulse.label()),
    );
    if let Some(w) = pulse.warning() {
        out = out.with_warning(w);
    }
    out
}
