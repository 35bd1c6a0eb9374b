//! Declarative experiment driver: INI-style configs in, CSV reports out.
//!
//! Every run is deterministic — the same config text produces bit-identical
//! output regardless of worker count, because sweep points are dispatched in
//! parallel but assembled in input order and each point's arithmetic is
//! independent of the others.
//!
//! Per-point failures (infeasible pulse construction, integrator divergence)
//! are recorded as `NaN` cells with a warning, and the run continues; the
//! caller decides the exit status from [`RunOutput::nan_count`].

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::envelope::{gaussian_envelope, Envelope, GaussianSpec};
use crate::metrics::{
    optimize_virtual_z, project_to_computational, selection_fidelity_u, TargetGate,
};
use crate::models::{
    anharmonic_ladder_model, counter_rotating_model, disjoint_qubits_model, LevelSystem,
};
use crate::propagator::{evolve, IntegratorConfig, Method};
use crate::shaping::{
    bare_pulse, build_semiclassical_pulse, doublet_derivative_family, doublet_exact,
    ladder_correction, quadruplet, rwa_correction, rwa_correction_with, semiclassical_multiplet,
    triplet,
    DerivativeCoefficients, DetuningSet, DoubletVariant, LadderOrder, ShapedPulse,
    TripletVariant, RWA_DERIV_ONLY_COEFF,
};
use crate::spectrum::{
    bandwidth, excitation_profile, figure_grid, gaussian_sigma_scan, ibp_identity_check,
    narrowest, spectral_excitation, ProfileKind,
};
use crate::{DragError, Result};

/// Flat key-value configuration parsed from INI-style text: `[section]`
/// headers prefix subsequent keys as `section.key`; `#` and `;` start
/// comment lines; duplicate keys are rejected so configs stay diffable.
#[derive(Debug, Clone, Default)]
pub struct Ini {
    map: BTreeMap<String, String>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Ini> {
        let mut map = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = idx + 1;
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return Err(DragError::ConfigError(format!(
                        "line {lineno}: unterminated section header '{line}'"
                    )));
                };
                let name = name.trim();
                if name.is_empty() {
                    return Err(DragError::ConfigError(format!(
                        "line {lineno}: empty section name"
                    )));
                }
                section = name.to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(DragError::ConfigError(format!(
                    "line {lineno}: expected 'key = value', got '{line}'"
                )));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(DragError::ConfigError(format!("line {lineno}: empty key")));
            }
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            if map.insert(full.clone(), value.trim().to_string()).is_some() {
                return Err(DragError::ConfigError(format!(
                    "line {lineno}: duplicate key '{full}'"
                )));
            }
        }
        Ok(Ini { map })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| DragError::ConfigError(format!("missing required key '{key}'")))
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(s) => s.parse::<f64>().map(Some).map_err(|_| {
                DragError::ConfigError(format!("key '{key}': '{s}' is not a number"))
            }),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s.parse::<usize>().map_err(|_| {
                DragError::ConfigError(format!("key '{key}': '{s}' is not a nonnegative integer"))
            }),
        }
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    /// Comma-separated list value; empty or missing key yields an empty list.
    pub fn list(&self, key: &str) -> Vec<String> {
        self.get(key)
            .map(|s| {
                s.split(',')
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(str::to_string)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// FNV-1a 64-bit hash over the canonical (sorted) key-value rendering,
    /// recorded in every CSV header so outputs are traceable to configs.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (k, v) in &self.map {
            eat(k.as_bytes());
            eat(b"=");
            eat(v.as_bytes());
            eat(b"\n");
        }
        h
    }
}

/// Result of one experiment run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// CSV (or plain-text report for `simulate`) with `#` metadata headers.
    pub csv: String,
    /// Number of cells recorded as NaN because a point failed.
    pub nan_count: usize,
    /// Human-readable warnings (per-point failures, regime warnings).
    pub warnings: Vec<String>,
}

/// Dispatch a subcommand against a parsed config.
pub fn run(subcommand: &str, config: &Ini) -> Result<RunOutput> {
    match subcommand {
        "sweep-time" => cmd_sweep_time(config),
        "sweep-lambda" => cmd_sweep_lambda(config),
        "sweep-epsilon" => cmd_sweep_epsilon(config),
        "spectrum" => cmd_spectrum(config),
        "simulate" => cmd_simulate(config),
        "rwa" => cmd_rwa(config),
        other => Err(DragError::ConfigError(format!(
            "unknown subcommand '{other}' (expected sweep-time, sweep-lambda, sweep-epsilon, \
             spectrum, simulate, or rwa)"
        ))),
    }
}

// ---------------------------------------------------------------------------
// shared config plumbing
// ---------------------------------------------------------------------------

/// Spectator offsets/couplings shared by the disjoint-qubit experiments.
#[derive(Debug, Clone, Copy)]
struct Spectators {
    d2: f64,
    d3: Option<f64>,
    d4: Option<f64>,
    l2: f64,
    l3: f64,
    l4: f64,
}

impl Spectators {
    fn from_config(ini: &Ini) -> Result<Spectators> {
        let d2 = ini
            .f64("model.delta2")?
            .ok_or_else(|| DragError::ConfigError("missing required key 'model.delta2'".into()))?;
        let d3 = ini.f64("model.delta3")?;
        let d4 = ini.f64("model.delta4")?;
        if d4.is_some() && d3.is_none() {
            return Err(DragError::ConfigError(
                "'model.delta4' given without 'model.delta3'".into(),
            ));
        }
        Ok(Spectators {
            d2,
            d3,
            d4,
            l2: ini.f64_or("model.lambda2", 1.0)?,
            l3: ini.f64_or("model.lambda3", 1.0)?,
            l4: ini.f64_or("model.lambda4", 1.0)?,
        })
    }

    fn system(&self) -> Result<(LevelSystem, usize)> {
        let mut offsets = vec![0.0, self.d2];
        let mut couplings = vec![1.0, self.l2];
        if let Some(d3) = self.d3 {
            offsets.push(d3);
            couplings.push(self.l3);
        }
        if let Some(d4) = self.d4 {
            offsets.push(d4);
            couplings.push(self.l4);
        }
        let n = offsets.len();
        Ok((disjoint_qubits_model(&offsets, &couplings)?, n))
    }
}

fn integrator_config(ini: &Ini) -> Result<IntegratorConfig> {
    let method = match ini.str_or("integrator.method", "magnus4") {
        "magnus4" => Method::Magnus4,
        "midpoint" => Method::ExponentialMidpoint,
        other => {
            return Err(DragError::ConfigError(format!(
                "integrator.method '{other}' (expected 'magnus4' or 'midpoint')"
            )))
        }
    };
    Ok(IntegratorConfig {
        method,
        steps_per_unit_time: ini.usize_or("integrator.steps_per_unit_time", 32)?,
        tolerance: ini.f64_or("integrator.tolerance", 1e-10)?,
    })
}

fn pulse_theta(ini: &Ini) -> Result<f64> {
    let theta = ini.f64_or("pulse.theta", PI)?;
    if !(theta > 0.0) {
        return Err(DragError::ConfigError(format!(
            "pulse.theta = {theta} must be > 0"
        )));
    }
    Ok(theta)
}

/// Flatness for a named variant: `pulse.flatness.<variant>` overrides the
/// shared `pulse.flatness` (default 1), so one sweep can compare variants at
/// their individually required envelope smoothness.
fn variant_flatness(ini: &Ini, variant: &str) -> Result<u32> {
    let key = format!("pulse.flatness.{variant}");
    let shared = ini.usize_or("pulse.flatness", 1)?;
    let m = ini.usize_or(&key, shared)?;
    if m == 0 {
        return Err(DragError::ConfigError(format!("{key} must be >= 1")));
    }
    Ok(m as u32)
}

/// Truncated Gaussian of the given duration whose plain area is `theta / 2`
/// (the rotation condition in this library's convention). `pulse.sigma`
/// (absolute) takes precedence over `pulse.sigma_over_t` (default 0.25).
fn base_envelope(ini: &Ini, duration: f64, flatness: u32, theta: f64) -> Result<Envelope> {
    let sigma = match ini.f64("pulse.sigma")? {
        Some(s) => s,
        None => ini.f64_or("pulse.sigma_over_t", 0.25)? * duration,
    };
    let unit = gaussian_envelope(GaussianSpec { amplitude: 1.0, sigma, duration, flatness })?;
    let area = unit.area();
    if !(area > 0.0) {
        return Err(DragError::NormalizationFailure(format!(
            "unit envelope area {area} cannot be scaled"
        )));
    }
    // the amplitude is an overall linear scale of the envelope
    Ok(unit.with_amplitude(0.5 * theta / area))
}

/// Map a variant name from the config to a constructed pulse.
fn build_variant(name: &str, env: &Envelope, sp: &Spectators) -> Result<ShapedPulse> {
    let need_d3 = || {
        sp.d3.ok_or_else(|| {
            DragError::ConfigError(format!("variant '{name}' requires 'model.delta3'"))
        })
    };
    match name {
        "bare" => Ok(bare_pulse(env)),
        "first-order" => {
            let targets = DetuningSet::uniform(vec![sp.d2])?;
            let coeffs = semiclassical_multiplet(&targets, &[1])?;
            Ok(build_semiclassical_pulse(env, &coeffs)?.with_label("first-order"))
        }
        "second-real" => doublet_derivative_family(env, sp.d2, sp.l2, DoubletVariant::SecondReal),
        "third-imag" => doublet_derivative_family(env, sp.d2, sp.l2, DoubletVariant::ThirdImag),
        "fourth-real" => doublet_derivative_family(env, sp.d2, sp.l2, DoubletVariant::FourthReal),
        "exact" => doublet_exact(env, sp.d2, sp.l2),
        "triplet-d1d2" => triplet(env, sp.d2, need_d3()?, sp.l2, sp.l3, TripletVariant::D1D2),
        "triplet-d1d3" => triplet(env, sp.d2, need_d3()?, sp.l2, sp.l3, TripletVariant::D1D3),
        "triplet-d2d3" => triplet(env, sp.d2, need_d3()?, sp.l2, sp.l3, TripletVariant::D2D3),
        "triplet-d2d4" => triplet(env, sp.d2, need_d3()?, sp.l2, sp.l3, TripletVariant::D2D4),
        "quadruplet" => {
            let d3 = need_d3()?;
            let d4 = sp.d4.ok_or_else(|| {
                DragError::ConfigError("variant 'quadruplet' requires 'model.delta4'".into())
            })?;
            quadruplet(env, sp.d2, d3, d4, sp.l2, sp.l3, sp.l4)
        }
        "second-derivative" => {
            // single even coefficient nulling the spectrum at +/- delta2
            let a2 = -1.0 / DerivativeCoefficients::null_factor(2, sp.d2);
            let coeffs = DerivativeCoefficients::single(2, a2);
            Ok(build_semiclassical_pulse(env, &coeffs)?.with_label("second-derivative"))
        }
        other => Err(DragError::ConfigError(format!(
            "unknown pulse variant '{other}'"
        ))),
    }
}

/// Spectral offsets a variant is built to null (used by the spectrum report).
fn variant_hole_targets(name: &str, sp: &Spectators) -> Vec<f64> {
    match name {
        "first-order" => vec![sp.d2],
        "second-derivative" => vec![sp.d2, -sp.d2],
        "triplet-d1d2" | "triplet-d1d3" | "triplet-d2d3" | "triplet-d2d4" => {
            sp.d3.map_or_else(|| vec![sp.d2], |d3| vec![sp.d2, d3])
        }
        "quadruplet" => match (sp.d3, sp.d4) {
            (Some(d3), Some(d4)) => vec![sp.d2, d3, d4],
            _ => vec![sp.d2],
        },
        _ => Vec::new(),
    }
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if !(lo > 0.0 && hi > 0.0 && lo <= hi) {
        return Err(DragError::ConfigError(format!(
            "log-spaced grid needs 0 < min <= max, got [{lo}, {hi}]"
        )));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let ratio = (hi / lo).ln();
    Ok((0..n)
        .map(|i| lo * (ratio * i as f64 / (n - 1) as f64).exp())
        .collect())
}

fn lin_spaced(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(DragError::ConfigError(format!(
            "linear grid needs min <= max, got [{lo}, {hi}]"
        )));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect())
}

fn fmt(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:.17e}")
    }
}

fn header(sub: &str, ini: &Ini, units: &str) -> String {
    format!(
        "# dragforge {sub}\n# config-hash={:016x}\n# units: {units}\n",
        ini.hash()
    )
}

/// 1 - selection fidelity against X on the driven qubit, clamped at 0.
fn selection_error(
    system: &LevelSystem,
    pulse: &ShapedPulse,
    n_qubits: usize,
    cfg: &IntegratorConfig,
) -> Result<f64> {
    let u = evolve(system, pulse, cfg)?;
    let f = selection_fidelity_u(&u, &TargetGate::x_on_first(n_qubits), n_qubits)?;
    Ok((1.0 - f).max(0.0))
}

/// Qutrit gate error: project onto the 0-1 block, compensate phases with an
/// optimized virtual-Z, and score the phase-sensitive fidelity (leakage shows
/// up through the sub-unitary block).
fn ladder_gate_error(
    system: &LevelSystem,
    pulse: &ShapedPulse,
    cfg: &IntegratorConfig,
) -> Result<f64> {
    let u = evolve(system, pulse, cfg)?;
    let (block, _leakage) = project_to_computational(u.entries(), &[0, 1])?;
    let (_phases, f) = optimize_virtual_z(&block, &TargetGate::x_qubit().matrix, 1)?;
    Ok((1.0 - f).max(0.0))
}

/// Assemble sweep rows computed in parallel: each cell closure returns the
/// value or an error; errors become NaN cells plus a warning, preserving row
/// order so output is deterministic.
fn sweep_rows<F>(abscissas: &[f64], columns: usize, cell: F) -> (Vec<Vec<f64>>, Vec<String>, usize)
where
    F: Fn(usize, f64, usize) -> Result<f64> + Sync,
{
    let rows: Vec<(Vec<f64>, Vec<String>)> = abscissas
        .par_iter()
        .enumerate()
        .map(|(i, &x)| {
            let mut values = Vec::with_capacity(columns);
            let mut warnings = Vec::new();
            for c in 0..columns {
                match cell(i, x, c) {
                    Ok(v) => values.push(v),
                    Err(e) => {
                        values.push(f64::NAN);
                        warnings.push(format!("point {i} (x = {x:.6e}), column {c}: {e}"));
                    }
                }
            }
            (values, warnings)
        })
        .collect();
    let mut out = Vec::with_capacity(rows.len());
    let mut warnings = Vec::new();
    let mut nan_count = 0;
    for (values, w) in rows {
        nan_count += values.iter().filter(|v| v.is_nan()).count();
        out.push(values);
        warnings.extend(w);
    }
    (out, warnings, nan_count)
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

/// Selection error of each requested variant against gate duration, on a
/// log-spaced grid of `T` in units of `pi / |Delta2|`.
fn cmd_sweep_time(ini: &Ini) -> Result<RunOutput> {
    let sp = Spectators::from_config(ini)?;
    let (system, n_qubits) = sp.system()?;
    let cfg = integrator_config(ini)?;
    let theta = pulse_theta(ini)?;
    let variants = ini.list("pulse.variants");
    if variants.is_empty() {
        return Err(DragError::ConfigError(
            "'pulse.variants' must name at least one variant".into(),
        ));
    }
    let flatness: Vec<u32> = variants
        .iter()
        .map(|v| variant_flatness(ini, v))
        .collect::<Result<_>>()?;
    let points = ini.usize_or("sweep.points", 60)?;
    let t_min = ini.f64_or("sweep.t_min", 1.0)?;
    let t_max = ini.f64_or("sweep.t_max", 12.0)?;
    let grid = log_spaced(t_min, t_max, points)?;
    let time_unit = PI / sp.d2.abs();

    let (rows, warnings, nan_count) = sweep_rows(&grid, variants.len(), |_, t_pi, c| {
        let duration = t_pi * time_unit;
        let env = base_envelope(ini, duration, flatness[c], theta)?;
        let pulse = build_variant(&variants[c], &env, &sp)?;
        selection_error(&system, &pulse, n_qubits, &cfg)
    });

    let mut csv = header("sweep-time", ini, "T in pi/|Delta2|; errors dimensionless");
    let _ = writeln!(csv, "T_pi,{}", variants.join(","));
    for (t_pi, row) in grid.iter().zip(&rows) {
        let cells: Vec<String> = row.iter().copied().map(fmt).collect();
        let _ = writeln!(csv, "{},{}", fmt(*t_pi), cells.join(","));
    }
    Ok(RunOutput { csv, nan_count, warnings })
}

/// Qutrit gate error of the ladder correction orders h0..h3 against the
/// leakage transition strength lambda, at fixed duration.
fn cmd_sweep_lambda(ini: &Ini) -> Result<RunOutput> {
    let delta = ini
        .f64("model.delta")?
        .ok_or_else(|| DragError::ConfigError("missing required key 'model.delta'".into()))?;
    let cfg = integrator_config(ini)?;
    let theta = pulse_theta(ini)?;
    let flatness = ini.usize_or("pulse.flatness", 3)? as u32;
    let t_pi = ini.f64_or("pulse.t_pi", 4.0)?;
    let duration = t_pi * PI / delta.abs();
    let points = ini.usize_or("lambda.points", 11)?;
    let l_min = ini.f64_or("lambda.min", 0.5)?;
    let l_max = ini.f64_or("lambda.max", 1.5)?;
    let grid = lin_spaced(l_min, l_max, points)?;
    let env = base_envelope(ini, duration, flatness, theta)?;
    let orders = [None, Some(LadderOrder::H1), Some(LadderOrder::H2), Some(LadderOrder::H3)];

    let (rows, warnings, nan_count) = sweep_rows(&grid, orders.len(), |_, lambda, c| {
        let system = anharmonic_ladder_model(3, delta, &[1.0, lambda])?;
        let pulse = match orders[c] {
            None => bare_pulse(&env),
            Some(order) => ladder_correction(&env, delta, lambda, order)?,
        };
        ladder_gate_error(&system, &pulse, &cfg)
    });

    let mut csv = header("sweep-lambda", ini, "lambda dimensionless; errors dimensionless");
    let _ = writeln!(csv, "lambda,h0,h1,h2,h3");
    for (lambda, row) in grid.iter().zip(&rows) {
        let cells: Vec<String> = row.iter().copied().map(fmt).collect();
        let _ = writeln!(csv, "{},{}", fmt(*lambda), cells.join(","));
    }
    Ok(RunOutput { csv, nan_count, warnings })
}

/// Selection error of the first-order pulse against the drive-strength ratio
/// `epsilon = peak Omega / Delta`, at fixed duration: each point re-places the
/// spectator at `Delta = peak / epsilon`.
fn cmd_sweep_epsilon(ini: &Ini) -> Result<RunOutput> {
    let cfg = integrator_config(ini)?;
    let theta = pulse_theta(ini)?;
    let flatness = ini.usize_or("pulse.flatness", 2)? as u32;
    let duration = ini
        .f64("pulse.duration")?
        .ok_or_else(|| DragError::ConfigError("missing required key 'pulse.duration'".into()))?;
    let lambda2 = ini.f64_or("model.lambda2", 1.0)?;
    let points = ini.usize_or("sweep.points", 12)?;
    let e_min = ini.f64_or("sweep.epsilon_min", 0.01)?;
    let e_max = ini.f64_or("sweep.epsilon_max", 0.1)?;
    let grid = log_spaced(e_min, e_max, points)?;
    let env = base_envelope(ini, duration, flatness, theta)?;
    let peak = env.peak();

    let (rows, warnings, nan_count) = sweep_rows(&grid, 1, |_, eps, _| {
        let delta = peak / eps;
        let sp = Spectators { d2: delta, d3: None, d4: None, l2: lambda2, l3: 1.0, l4: 1.0 };
        let (system, n_qubits) = sp.system()?;
        let pulse = build_variant("first-order", &env, &sp)?;
        selection_error(&system, &pulse, n_qubits, &cfg)
    });

    let mut csv = header(
        "sweep-epsilon",
        ini,
        "epsilon = peak Omega / Delta (dimensionless); errors dimensionless",
    );
    let _ = writeln!(csv, "epsilon,first_order");
    for (eps, row) in grid.iter().zip(&rows) {
        let _ = writeln!(csv, "{},{}", fmt(*eps), fmt(row[0]));
    }
    Ok(RunOutput { csv, nan_count, warnings })
}

/// Excitation profile of one pulse (spectral magnitude or simulated spectator
/// selection error), its threshold bandwidth, the magnitudes at its targeted
/// hole offsets, and an optional plain-Gaussian sigma-scan comparator.
fn cmd_spectrum(ini: &Ini) -> Result<RunOutput> {
    let sp = Spectators::from_config(ini)?;
    let cfg = integrator_config(ini)?;
    let theta = pulse_theta(ini)?;
    let variant = ini.str_or("pulse.variant", "bare").to_string();
    let flatness = variant_flatness(ini, &variant)?;
    let duration = ini
        .f64("pulse.duration")?
        .ok_or_else(|| DragError::ConfigError("missing required key 'pulse.duration'".into()))?;
    let kind = match ini.str_or("profile.kind", "spectral") {
        "spectral" => ProfileKind::Spectral,
        "simulated" => ProfileKind::Simulated,
        other => {
            return Err(DragError::ConfigError(format!(
                "profile.kind '{other}' (expected 'spectral' or 'simulated')"
            )))
        }
    };
    let threshold = ini.f64_or("profile.threshold", 1e-3)?;
    let env = base_envelope(ini, duration, flatness, theta)?;
    let sigma = env.spec().sigma;

    let scan_sigmas: Vec<f64> = ini
        .list("scan.sigmas")
        .iter()
        .map(|s| {
            s.parse::<f64>().map_err(|_| {
                DragError::ConfigError(format!("scan.sigmas entry '{s}' is not a number"))
            })
        })
        .collect::<Result<_>>()?;
    // cover the widest profile that will be scored
    let grid_sigma = scan_sigmas.iter().fold(sigma, |m, &s| m.min(s));
    let grid = figure_grid(grid_sigma);

    let template = disjoint_qubits_model(&[0.0, sp.d2], &[1.0, sp.l2])?;
    let pulse = build_variant(&variant, &env, &sp)?;
    let profile = excitation_profile(&template, &pulse, &grid, kind, threshold, &cfg)?;
    let bw = bandwidth(&profile, threshold);

    let mut warnings = Vec::new();
    if let Some(w) = pulse.warning() {
        warnings.push(format!("pulse '{variant}': {w}"));
    }

    let mut csv = header("spectrum", ini, "offset in angular frequency; see profile kind");
    csv.push_str(&profile.csv(&variant));
    let _ = writeln!(csv, "# bandwidth={}", fmt(bw));
    let _ = writeln!(csv, "# theta={}", fmt(pulse.theta()));
    for d in variant_hole_targets(&variant, &sp) {
        let mag = spectral_excitation(&pulse, d).norm();
        let _ = writeln!(csv, "# hole offset={} magnitude={}", fmt(d), fmt(mag));
    }
    if let Some(n) = ini.get("ibp.order") {
        let n: usize = n.parse().map_err(|_| {
            DragError::ConfigError(format!("ibp.order '{n}' is not a nonnegative integer"))
        })?;
        let residual = ibp_identity_check(&env, sp.d2, n)?;
        let _ = writeln!(csv, "# ibp order={n} residual={}", fmt(residual));
    }
    if !scan_sigmas.is_empty() {
        let scan =
            gaussian_sigma_scan(&template, duration, theta, &scan_sigmas, &grid, threshold, &cfg)?;
        for p in &scan {
            let _ = writeln!(csv, "# scan sigma={} bandwidth={}", fmt(p.sigma), fmt(p.bandwidth));
        }
        if let Some(best) = narrowest(&scan) {
            let _ = writeln!(
                csv,
                "# narrowest sigma={} bandwidth={}",
                fmt(best.sigma),
                fmt(best.bandwidth)
            );
        }
    }
    Ok(RunOutput { csv, nan_count: 0, warnings })
}

/// Error columns for the counter-rotating (beyond-RWA) corrections against
/// duration: bare Gaussian, derivative-only quadrature, and the full
/// derivative + detuning correction. The carrier is re-placed per point at
/// `omega_d = rwa.omega_d_factor * peak Omega0`.
fn cmd_rwa(ini: &Ini) -> Result<RunOutput> {
    let cfg = integrator_config(ini)?;
    let theta = pulse_theta(ini)?;
    let flatness = ini.usize_or("pulse.flatness", 1)? as u32;
    let factor = ini.f64_or("rwa.omega_d_factor", 10.0)?;
    if !(factor > 0.0) {
        return Err(DragError::ConfigError(format!(
            "rwa.omega_d_factor = {factor} must be > 0"
        )));
    }
    let points = ini.usize_or("sweep.points", 20)?;
    let t_min = ini.f64_or("sweep.t_min", 1.0)?;
    let t_max = ini.f64_or("sweep.t_max", 12.0)?;
    let grid = log_spaced(t_min, t_max, points)?;
    let x = TargetGate::x_qubit();

    let (rows, warnings, nan_count) = sweep_rows(&grid, 3, |_, t_pi, c| {
        let duration = t_pi * PI;
        let env = base_envelope(ini, duration, flatness, theta)?;
        let omega_d = factor * env.peak();
        let system = counter_rotating_model(omega_d)?;
        let pulse = match c {
            0 => bare_pulse(&env),
            // constant-frequency variant: quadrature correction only
            1 => rwa_correction_with(
                &env,
                omega_d,
                RWA_DERIV_ONLY_COEFF,
                0.0,
                "rwa-derivative-only",
            )?,
            _ => rwa_correction(&env, omega_d)?,
        };
        let u = evolve(&system, &pulse, &cfg)?;
        // the frame itself leaves a deterministic diag(1, e^{-2 i omega_d T})
        // phase; compensate phases before scoring, as for hardware virtual-Z
        let (_, f) = optimize_virtual_z(u.entries(), &x.matrix, 1)?;
        Ok((1.0 - f).max(0.0))
    });

    let mut csv = header("rwa", ini, "T in pi (omega_d floats with peak); errors dimensionless");
    let _ = writeln!(csv, "T_pi,bare,derivative_only,derivative_detuning");
    for (t_pi, row) in grid.iter().zip(&rows) {
        let cells: Vec<String> = row.iter().copied().map(fmt).collect();
        let _ = writeln!(csv, "{},{}", fmt(*t_pi), cells.join(","));
    }
    Ok(RunOutput { csv, nan_count, warnings })
}

/// One-shot propagation report: the final unitary, fidelities, leakage, and
/// the spectral magnitude at each model transition offset.
fn cmd_simulate(ini: &Ini) -> Result<RunOutput> {
    let cfg = integrator_config(ini)?;
    let theta = pulse_theta(ini)?;
    let variant = ini.str_or("pulse.variant", "bare").to_string();
    let flatness = variant_flatness(ini, &variant)?;
    let kind = ini.str_or("model.kind", "disjoint").to_string();

    let mut report = header("simulate", ini, "angular frequencies; time in inverse frequency");
    let mut warnings = Vec::new();

    match kind.as_str() {
        "disjoint" => {
            let sp = Spectators::from_config(ini)?;
            let (system, n_qubits) = sp.system()?;
            let duration = match ini.f64("pulse.duration")? {
                Some(t) => t,
                None => ini.f64_or("pulse.t_pi", 8.0)? * PI / sp.d2.abs(),
            };
            let env = base_envelope(ini, duration, flatness, theta)?;
            let pulse = build_variant(&variant, &env, &sp)?;
            if let Some(w) = pulse.warning() {
                warnings.push(format!("pulse '{variant}': {w}"));
            }
            let u = evolve(&system, &pulse, &cfg)?;
            let sel = selection_fidelity_u(&u, &TargetGate::x_on_first(n_qubits), n_qubits)?;
            let (_, gate) =
                optimize_virtual_z(u.entries(), &TargetGate::x_on_first(n_qubits).matrix, n_qubits)?;
            let _ = writeln!(report, "model=disjoint qubits={n_qubits}");
            let _ = writeln!(report, "pulse={} duration={}", pulse.label(), fmt(duration));
            let _ = writeln!(report, "unitarity_defect={}", fmt(u.unitarity_defect()));
            let _ = writeln!(report, "selection_error={}", fmt((1.0 - sel).max(0.0)));
            let _ = writeln!(report, "gate_error_virtual_z={}", fmt((1.0 - gate).max(0.0)));
            for &d in system.offsets().iter().skip(1) {
                let mag = spectral_excitation(&pulse, d).norm();
                let _ = writeln!(report, "excitation offset={} magnitude={}", fmt(d), fmt(mag));
            }
            write_unitary(&mut report, &u);
        }
        "ladder" => {
            let delta = ini.f64("model.delta")?.ok_or_else(|| {
                DragError::ConfigError("missing required key 'model.delta'".into())
            })?;
            let lambda = ini.f64_or("model.lambda", 2.0f64.sqrt())?;
            let system = anharmonic_ladder_model(3, delta, &[1.0, lambda])?;
            let duration = match ini.f64("pulse.duration")? {
                Some(t) => t,
                None => ini.f64_or("pulse.t_pi", 4.0)? * PI / delta.abs(),
            };
            let env = base_envelope(ini, duration, flatness, theta)?;
            let order = match ini.str_or("pulse.order", "h3") {
                "h0" => None,
                "h1" => Some(LadderOrder::H1),
                "h2" => Some(LadderOrder::H2),
                "h3" => Some(LadderOrder::H3),
                other => {
                    return Err(DragError::ConfigError(format!(
                        "pulse.order '{other}' (expected h0..h3)"
                    )))
                }
            };
            let pulse = match order {
                None => bare_pulse(&env),
                Some(o) => ladder_correction(&env, delta, lambda, o)?,
            };
            if let Some(w) = pulse.warning() {
                warnings.push(format!("pulse '{}': {w}", pulse.label()));
            }
            let u = evolve(&system, &pulse, &cfg)?;
            let (block, leakage) = project_to_computational(u.entries(), &[0, 1])?;
            let (_, gate) = optimize_virtual_z(&block, &TargetGate::x_qubit().matrix, 1)?;
            let _ = writeln!(report, "model=ladder levels=3 delta={} lambda={}", fmt(delta), fmt(lambda));
            let _ = writeln!(report, "pulse={} duration={}", pulse.label(), fmt(duration));
            let _ = writeln!(report, "unitarity_defect={}", fmt(u.unitarity_defect()));
            let _ = writeln!(report, "gate_error_virtual_z={}", fmt((1.0 - gate).max(0.0)));
            let _ = writeln!(report, "leakage={}", fmt(leakage));
            let mag = spectral_excitation(&pulse, delta).norm();
            let _ = writeln!(report, "excitation offset={} magnitude={}", fmt(delta), fmt(mag));
            write_unitary(&mut report, &u);
        }
        "counter-rotating" => {
            let duration = ini.f64("pulse.duration")?.ok_or_else(|| {
                DragError::ConfigError("missing required key 'pulse.duration'".into())
            })?;
            let env = base_envelope(ini, duration, flatness, theta)?;
            let omega_d = match ini.f64("model.omega_d")? {
                Some(w) => w,
                None => ini.f64_or("rwa.omega_d_factor", 10.0)? * env.peak(),
            };
            let system = counter_rotating_model(omega_d)?;
            let pulse = match variant.as_str() {
                "bare" => bare_pulse(&env),
                "derivative-detuning" => rwa_correction(&env, omega_d)?,
                other => {
                    return Err(DragError::ConfigError(format!(
                        "pulse.variant '{other}' (counter-rotating supports 'bare' or \
                         'derivative-detuning')"
                    )))
                }
            };
            if let Some(w) = pulse.warning() {
                warnings.push(format!("pulse '{}': {w}", pulse.label()));
            }
            let u = evolve(&system, &pulse, &cfg)?;
            let (_, f) = optimize_virtual_z(u.entries(), &TargetGate::x_qubit().matrix, 1)?;
            let _ = writeln!(report, "model=counter-rotating omega_d={}", fmt(omega_d));
            let _ = writeln!(report, "pulse={} duration={}", pulse.label(), fmt(duration));
            let _ = writeln!(report, "unitarity_defect={}", fmt(u.unitarity_defect()));
            let _ = writeln!(report, "gate_error_virtual_z={}", fmt((1.0 - f).max(0.0)));
            write_unitary(&mut report, &u);
        }
        other => {
            return Err(DragError::ConfigError(format!(
                "model.kind '{other}' (expected 'disjoint', 'ladder', or 'counter-rotating')"
            )))
        }
    }
    Ok(RunOutput { csv: report, nan_count: 0, warnings })
}

fn write_unitary(report: &mut String, u: &crate::propagator::UnitaryMatrix) {
    let m = u.entries();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|c| format!("{}{:+.17e}i", fmt(m[(r, c)].re), m[(r, c)].im))
            .collect();
        let _ = writeln!(report, "U[{r}]={}", row.join(","));
    }
}
