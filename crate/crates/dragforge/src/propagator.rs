//! Time-ordered propagation of driven level systems, frame changes, and a
//! truncated Baker-Campbell-Hausdorff effective-Hamiltonian evaluator.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::models::{HamiltonianSample, LevelSystem};
use crate::shaping::ShapedPulse;
use crate::{DragError, Result};

/// Propagator over a time interval; `U^dagger U = 1` is enforced to 1e-10
/// after every propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryMatrix {
    entries: DMatrix<Complex64>,
}

impl UnitaryMatrix {
    pub fn identity(d: usize) -> Self {
        UnitaryMatrix { entries: DMatrix::identity(d, d) }
    }

    pub fn from_matrix(entries: DMatrix<Complex64>) -> Self {
        UnitaryMatrix { entries }
    }

    pub fn dimension(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<Complex64> {
        self.entries
    }

    /// `|| U^dagger U - 1 ||` (Frobenius norm, an upper bound on the
    /// operator norm).
    pub fn unitarity_defect(&self) -> f64 {
        let d = self.dimension();
        (self.entries.adjoint() * &self.entries - DMatrix::<Complex64>::identity(d, d)).norm()
    }

    /// Composition `other follows self`: returns `other * self`.
    pub fn then(&self, other: &UnitaryMatrix) -> UnitaryMatrix {
        UnitaryMatrix { entries: &other.entries * &self.entries }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Second-order Magnus: one midpoint Hamiltonian sample per step.
    ExponentialMidpoint,
    /// Fourth-order Magnus: two Gauss-point samples and one commutator.
    Magnus4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub method: Method,
    pub steps_per_unit_time: usize,
    /// Target entrywise change under step doubling.
    pub tolerance: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: Method::ExponentialMidpoint,
            steps_per_unit_time: 32,
            tolerance: 1e-10,
        }
    }
}

/// `exp(-i K)` for Hermitian `K`, by eigendecomposition: exactly unitary up
/// to roundoff regardless of `||K||`.
pub fn expm_minus_i(k: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let eig = SymmetricEigen::new(k.clone());
    let d = k.nrows();
    let mut out = DMatrix::<Complex64>::zeros(d, d);
    // U = V exp(-i diag) V^dagger
    let v = &eig.eigenvectors;
    for (j, &ev) in eig.eigenvalues.iter().enumerate() {
        let phase = Complex64::new(0.0, -ev).exp();
        let col = v.column(j);
        for r in 0..d {
            for c in 0..d {
                out[(r, c)] += phase * col[r] * col[c].conj();
            }
        }
    }
    out
}

fn commutator(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    a * b - b * a
}

/// One fixed-grid propagation over `[t0, t1]` with `n` steps.
pub(crate) fn propagate_fixed(
    system: &LevelSystem,
    pulse: &ShapedPulse,
    t0: f64,
    t1: f64,
    n: usize,
    method: Method,
) -> UnitaryMatrix {
    let d = system.dimension();
    let h = (t1 - t0) / n as f64;
    let mut u = DMatrix::<Complex64>::identity(d, d);
    for k in 0..n {
        let a = t0 + k as f64 * h;
        let exponent = match method {
            Method::ExponentialMidpoint => {
                let tm = a + 0.5 * h;
                system.hamiltonian(tm, pulse.drive(tm)) * Complex64::new(h, 0.0)
            }
            Method::Magnus4 => {
                // Gauss-Legendre points; exponent
                // -i (h/2)(H1 + H2) - (sqrt(3) h^2 / 12)[H2, H1],
                // written below as i * K with K Hermitian.
                let s = 3.0f64.sqrt() / 6.0;
                let h1 = system.hamiltonian(a + (0.5 - s) * h, pulse.drive(a + (0.5 - s) * h));
                let h2 = system.hamiltonian(a + (0.5 + s) * h, pulse.drive(a + (0.5 + s) * h));
                let sum = (&h1 + &h2) * Complex64::new(0.5 * h, 0.0);
                // -i K = -i sum - c [H2,H1]  =>  K = sum - i c [H2,H1]
                let c = 3.0f64.sqrt() * h * h / 12.0;
                sum + commutator(&h2, &h1) * Complex64::new(0.0, -c)
            }
        };
        u = expm_minus_i(&exponent) * u;
    }
    UnitaryMatrix { entries: u }
}

fn entrywise_diff(a: &UnitaryMatrix, b: &UnitaryMatrix) -> f64 {
    (a.entries() - b.entries())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Propagate `system` under `pulse` over `[t0, t1]` with automatic
/// step-doubling convergence control.
pub fn evolve_between(
    system: &LevelSystem,
    pulse: &ShapedPulse,
    t0: f64,
    t1: f64,
    config: &IntegratorConfig,
) -> Result<UnitaryMatrix> {
    if t1 <= t0 {
        return Err(DragError::IntegratorFailure(format!("empty interval [{t0}, {t1}]")));
    }
    let span = t1 - t0;
    // carrier-aware grid: resolve the fastest frequency in the system and
    // the drive's own scales
    let f_fast = system
        .fastest_frequency()
        .max(pulse.peak_re())
        .max(pulse.detuning(0.5 * (t0 + t1)).abs());
    let spu = (config.steps_per_unit_time as f64).max(4.0 * f_fast).max(8.0);
    let mut n = (span * spu).ceil() as usize;
    n = n.max(16);
    let order = match config.method {
        Method::ExponentialMidpoint => 2.0,
        Method::Magnus4 => 4.0,
    };
    // probe pair to size the grid for the requested tolerance, then verify
    // by step doubling
    let probe_coarse = propagate_fixed(system, pulse, t0, t1, n, config.method);
    let probe_fine = propagate_fixed(system, pulse, t0, t1, 2 * n, config.method);
    let probe_diff = entrywise_diff(&probe_coarse, &probe_fine);
    // per-step exponentials are unitary to roundoff; the defect of the
    // product grows linearly with the step count
    let defect_cap = |steps: usize| (steps as f64 * 5e-15).max(1e-10);
    let mut coarse = if probe_diff < config.tolerance {
        let defect = probe_fine.unitarity_defect();
        if defect >= defect_cap(2 * n) {
            return Err(DragError::IntegratorFailure(format!(
                "unitarity defect {defect:.3e} at {} steps",
                2 * n
            )));
        }
        return Ok(probe_fine);
    } else {
        let factor = (probe_diff / config.tolerance).powf(1.0 / order);
        n = ((2 * n) as f64 * factor.min(1024.0)).ceil() as usize;
        n = n.min(1 << 22);
        propagate_fixed(system, pulse, t0, t1, n, config.method)
    };
    for _ in 0..3 {
        let fine = propagate_fixed(system, pulse, t0, t1, 2 * n, config.method);
        let diff = entrywise_diff(&coarse, &fine);
        if diff < config.tolerance {
            let defect = fine.unitarity_defect();
            if defect >= defect_cap(2 * n) {
                return Err(DragError::IntegratorFailure(format!(
                    "unitarity defect {defect:.3e} at {} steps",
                    2 * n
                )));
            }
            return Ok(fine);
        }
        n *= 2;
        coarse = fine;
    }
    let fine = propagate_fixed(system, pulse, t0, t1, 2 * n, config.method);
    let diff = entrywise_diff(&coarse, &fine);
    if diff < config.tolerance {
        return Ok(fine);
    }
    Err(DragError::IntegratorFailure(format!(
        "no convergence after 3 step-doubling rounds: entry change {diff:.3e} at {} steps, \
         unitarity defect {:.3e}",
        2 * n,
        fine.unitarity_defect()
    )))
}

/// Propagate over the pulse's full duration `[0, T]`.
pub fn evolve(
    system: &LevelSystem,
    pulse: &ShapedPulse,
    config: &IntegratorConfig,
) -> Result<UnitaryMatrix> {
    evolve_between(system, pulse, 0.0, pulse.duration(), config)
}

/// Carry a system into a rotating frame defined by per-basis-state
/// frequencies: `H -> e^{iFt} H e^{-iFt} - F`.
pub fn rotating_frame(system: &LevelSystem, frame_frequencies: &[f64]) -> Result<LevelSystem> {
    system.with_frame(frame_frequencies)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BchMode {
    /// Pure conjugation `e^{iG} H e^{-iG}` truncated at the second
    /// commutator.
    Interaction,
    /// Conjugation plus the frame-velocity term `-Gdot - (i/2)[G, Gdot]`.
    Diagonalizing,
}

/// Second-commutator-order effective Hamiltonian under the transformation
/// `e^{iG(t)}`, sampled on `times`. `hamiltonian` and `generator` map `t` to
/// Hermitian matrices (the exponent `iG` is then skew-Hermitian). The
/// generator's time derivative is taken by central differences with step
/// `dt_fd`.
pub fn effective_hamiltonian_bch(
    hamiltonian: &dyn Fn(f64) -> DMatrix<Complex64>,
    generator: &dyn Fn(f64) -> DMatrix<Complex64>,
    mode: BchMode,
    times: &[f64],
    dt_fd: f64,
) -> Result<Vec<HamiltonianSample>> {
    if times.is_empty() {
        return Err(DragError::GridMismatch("empty sample grid".into()));
    }
    let d0 = hamiltonian(times[0]).nrows();
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let h = hamiltonian(t);
        let g = generator(t);
        if h.nrows() != d0 || g.nrows() != d0 {
            return Err(DragError::GridMismatch(format!(
                "dimension change at t={t}: {} vs {}",
                h.nrows(),
                d0
            )));
        }
        let i = Complex64::new(0.0, 1.0);
        let gh = commutator(&g, &h);
        let ggh = commutator(&g, &gh);
        // e^{iG} H e^{-iG} = H + i[G,H] - (1/2)[G,[G,H]] + O(G^3)
        let mut eff = &h + &gh * i - ggh * Complex64::new(0.5, 0.0);
        if mode == BchMode::Diagonalizing {
            // + i (d/dt e^{iG}) e^{-iG} = -Gdot - (i/2)[G, Gdot] + O(G^3)
            let gdot = (generator(t + dt_fd) - generator(t - dt_fd))
                * Complex64::new(0.5 / dt_fd, 0.0);
            eff -= &gdot;
            eff -= commutator(&g, &gdot) * (i * Complex64::new(0.5, 0.0));
        }
        out.push(HamiltonianSample { matrix: eff, t });
    }
    Ok(out)
}
