//! Analytic base waveforms (truncated Gaussian family) evaluated as jets,
//! with area normalization.

use crate::jet::{Jet, MAX_ORDER};
use crate::quad;
use crate::{DragError, Result};

/// Truncated Gaussian specification:
/// `A (exp[-(t-T/2)^2 / 2 sigma^2] - exp[-(T/2)^2 / 2 sigma^2])^m` on `[0,T]`.
///
/// The subtraction forces the value to zero at both endpoints; flatness `m`
/// makes derivatives `1..m-1` vanish there as well.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSpec {
    pub amplitude: f64,
    pub sigma: f64,
    pub duration: f64,
    pub flatness: u32,
}

impl GaussianSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(DragError::InvalidSpec(format!("sigma = {} must be > 0", self.sigma)));
        }
        if !(self.duration > 0.0) {
            return Err(DragError::InvalidSpec(format!(
                "duration = {} must be > 0",
                self.duration
            )));
        }
        if self.flatness < 1 {
            return Err(DragError::InvalidSpec("flatness m must be >= 1".into()));
        }
        if !self.amplitude.is_finite() || self.amplitude <= 0.0 {
            return Err(DragError::InvalidSpec(format!(
                "amplitude = {} must be finite and > 0",
                self.amplitude
            )));
        }
        Ok(())
    }
}

/// A pure map `t -> Jet` on `[0, T]`.
///
/// Evaluation is analytic (jet arithmetic on the Gaussian seed), immutable,
/// and safe to call from many workers simultaneously.
#[derive(Debug, Clone, Copy)]
pub struct Envelope {
    spec: GaussianSpec,
}

/// Construct the truncated-Gaussian envelope.
pub fn gaussian_envelope(spec: GaussianSpec) -> Result<Envelope> {
    spec.validate()?;
    Ok(Envelope { spec })
}

impl Envelope {
    pub fn spec(&self) -> &GaussianSpec {
        &self.spec
    }

    pub fn duration(&self) -> f64 {
        self.spec.duration
    }

    pub fn flatness(&self) -> u32 {
        self.spec.flatness
    }

    pub fn amplitude(&self) -> f64 {
        self.spec.amplitude
    }

    pub fn max_order(&self) -> usize {
        MAX_ORDER
    }

    pub fn with_amplitude(&self, amplitude: f64) -> Envelope {
        Envelope { spec: GaussianSpec { amplitude, ..self.spec } }
    }

    /// Jet of the envelope at `t` up to `order` derivatives.
    pub fn jet(&self, t: f64, order: usize) -> Result<Jet> {
        if order > MAX_ORDER {
            return Err(DragError::UnsupportedOrder { requested: order, supported: MAX_ORDER });
        }
        let s = &self.spec;
        let tc = Jet::variable(t, order).add_scalar(-0.5 * s.duration);
        let arg = tc.mul(&tc).scale(-0.5 / (s.sigma * s.sigma));
        let offset = (-0.125 * s.duration * s.duration / (s.sigma * s.sigma)).exp();
        let core = arg.exp().add_scalar(-offset);
        Ok(core.powi(s.flatness).scale(s.amplitude))
    }

    /// Plain value (order-0 jet).
    pub fn value(&self, t: f64) -> f64 {
        if !(0.0..=self.spec.duration).contains(&t) {
            return 0.0;
        }
        self.jet(t, 0).expect("order 0 always supported").value()
    }

    /// d^k/dt^k at `t`.
    pub fn deriv(&self, t: f64, k: usize) -> Result<f64> {
        Ok(self.jet(t, k)?.deriv(k))
    }

    /// Peak value over `[0, T]` found by a dense scan plus local refinement.
    pub fn peak(&self) -> f64 {
        // symmetric about T/2 for the Gaussian family
        self.value(0.5 * self.spec.duration)
    }

    /// Plain area `\int_0^T` of the envelope.
    pub fn area(&self) -> f64 {
        let t_max = self.spec.duration;
        quad::integrate(|t| self.value(t), 0.0, t_max, 1e-14 * self.spec.amplitude * t_max)
    }
}

/// Evaluate `env` as a jet at `t` (precondition `0 <= t <= T`).
pub fn jet_eval(env: &Envelope, t: f64, order: usize) -> Result<Jet> {
    if !(0.0..=env.duration()).contains(&t) {
        return Err(DragError::InvalidSpec(format!(
            "t = {t} outside [0, {}]",
            env.duration()
        )));
    }
    env.jet(t, order)
}

/// Rescale the envelope amplitude so `\int_0^T env(t) weight(t) dt = theta`,
/// by adaptive quadrature plus bisection on the amplitude.
pub fn normalize_area(
    env: &Envelope,
    theta: f64,
    weight: impl Fn(f64) -> f64,
) -> Result<Envelope> {
    if !(theta > 0.0) {
        return Err(DragError::NormalizationFailure(format!("theta = {theta} must be > 0")));
    }
    let t_max = env.duration();
    let area = |amp: f64| {
        let e = env.with_amplitude(amp);
        quad::integrate(|t| e.value(t) * weight(t), 0.0, t_max, 1e-13 * theta)
    };
    let guess = env.amplitude();
    let mut lo = 0.0;
    let mut hi = 10.0 * guess;
    if area(hi) < theta {
        return Err(DragError::NormalizationFailure(format!(
            "target area {theta} not bracketed by amplitude range [0, {hi}]"
        )));
    }
    let mut amp = guess;
    for _ in 0..200 {
        amp = 0.5 * (lo + hi);
        let a = area(amp);
        if (a - theta).abs() <= 1e-12 * theta {
            return Ok(env.with_amplitude(amp));
        }
        if a < theta {
            lo = amp;
        } else {
            hi = amp;
        }
    }
    let residual = (area(amp) - theta).abs() / theta;
    if residual < 1e-10 {
        Ok(env.with_amplitude(amp))
    } else {
        Err(DragError::NormalizationFailure(format!(
            "bisection stalled with relative residual {residual:.3e}"
        )))
    }
}

/// Published amplitude for a plain-area-pi truncated Gaussian with m = 1:
/// `A = pi / (sqrt(2 pi sigma^2) erf[T / sqrt(8) sigma])`.
pub fn pi_area_amplitude(sigma: f64, duration: f64) -> f64 {
    std::f64::consts::PI
        / ((2.0 * std::f64::consts::PI * sigma * sigma).sqrt()
            * erf(duration / (8.0f64.sqrt() * sigma)))
}

/// Error function via Abramowitz-Stegun 7.1.26-style series; accurate to
/// ~1e-15 using the continued power series for the ranges used here.
pub fn erf(x: f64) -> f64 {
    // series erf(x) = 2/sqrt(pi) sum (-1)^n x^(2n+1) / (n! (2n+1)),
    // accelerated form exp(-x^2) * 2x/sqrt(pi) * sum x^(2n)*2^n/(1*3*..*(2n+1))
    let ax = x.abs();
    if ax > 6.0 {
        return x.signum();
    }
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 1.0;
    loop {
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
        n += 1.0;
    }
    2.0 / std::f64::consts::PI.sqrt() * (-x2).exp() * sum
}
