//! Adaptive Gauss-Kronrod quadrature (G7/K15) and a cumulative-integral
//! helper used where a pulse component needs `\int_0^t` of another component.

use num_complex::Complex64;

// K15 nodes on [-1,1] (positive half; symmetric) and weights.
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
// G7 weights matched to XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kronrod = WGK[7] * f(c);
    let mut gauss = WG[3] * f(c);
    for j in 0..7 {
        let x = h * XGK[j];
        let fsum = f(c - x) + f(c + x);
        kronrod += WGK[j] * fsum;
        if j % 2 == 1 {
            gauss += WG[j / 2] * fsum;
        }
    }
    kronrod *= h;
    gauss *= h;
    ((kronrod), (kronrod - gauss).abs())
}

fn adapt(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (v, e) = gk15(f, a, b);
    // the K-G discrepancy bottoms out at the roundoff of the samples; below
    // that level further splitting only burns evaluations
    if e <= tol || e <= 16.0 * f64::EPSILON * v.abs() || depth >= 14 {
        return v;
    }
    let c = 0.5 * (a + b);
    adapt(f, a, c, 0.5 * tol, depth + 1) + adapt(f, c, b, 0.5 * tol, depth + 1)
}

/// Adaptive quadrature of `f` on `[a, b]` to absolute tolerance `abs_tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    // Seed with a few panels so narrow features inside a wide interval are
    // not missed by a single first estimate.
    let n0 = 8;
    let h = (b - a) / n0 as f64;
    let mut total = 0.0;
    for i in 0..n0 {
        let lo = a + i as f64 * h;
        total += adapt(&f, lo, lo + h, abs_tol.max(1e-300) / n0 as f64, 0);
    }
    total
}

/// Complex-valued adaptive quadrature (real and imaginary parts separately).
pub fn integrate_complex(
    f: impl Fn(f64) -> Complex64,
    a: f64,
    b: f64,
    abs_tol: f64,
) -> Complex64 {
    let re = integrate(|t| f(t).re, a, b, abs_tol);
    let im = integrate(|t| f(t).im, a, b, abs_tol);
    Complex64::new(re, im)
}

/// Dense cumulative integral `F(t) = \int_0^t f` on `[0, T]`, evaluated by
/// composite Simpson on a fine fixed grid with local quadratic interpolation
/// between samples.
pub struct CumulativeIntegral {
    t_max: f64,
    h: f64,
    // prefix[i] = integral over [0, i*h]; f_samples for in-cell correction
    prefix: Vec<f64>,
    f: Vec<f64>,
}

impl CumulativeIntegral {
    pub fn new(f: impl Fn(f64) -> f64, t_max: f64, cells: usize) -> Self {
        // each cell integrated by Simpson with a midpoint sample
        let n = cells.max(16);
        let h = t_max / n as f64;
        let mut prefix = Vec::with_capacity(n + 1);
        let mut fs = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        fs.push(f(0.0));
        let mut acc = 0.0;
        for i in 0..n {
            let a = i as f64 * h;
            let fa = fs[i];
            let fm = f(a + 0.5 * h);
            let fb = f(a + h);
            acc += h / 6.0 * (fa + 4.0 * fm + fb);
            prefix.push(acc);
            fs.push(fb);
        }
        CumulativeIntegral { t_max, h, prefix, f: fs }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.t_max);
        let i = ((t / self.h) as usize).min(self.prefix.len() - 2);
        let a = i as f64 * self.h;
        let dt = t - a;
        // trapezoid with endpoint-slope correction inside the cell
        let fa = self.f[i];
        let fb = self.f[i + 1];
        let slope = (fb - fa) / self.h;
        self.prefix[i] + fa * dt + 0.5 * slope * dt * dt
    }

    pub fn total(&self) -> f64 {
        *self.prefix.last().unwrap()
    }
}
