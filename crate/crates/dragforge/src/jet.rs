//! Truncated-Taylor (jet) arithmetic: a value together with its first K
//! time-derivatives, propagated exactly through elementary operations.
//!
//! A `Jet` stores `d^k f/dt^k` in `values[k]` for `k = 0..=order`. Products
//! use the Leibniz rule; quotients, square roots, and `exp` use the standard
//! recursive inversions of it. All shaping expressions in this crate are
//! evaluated as jets so the auxiliary controls (derivatives divided by large
//! detuning powers) carry no finite-difference noise.

use crate::{DragError, Result};

/// Maximum supported derivative order.
pub const MAX_ORDER: usize = 6;
const LEN: usize = MAX_ORDER + 1;

/// Binomial coefficients up to MAX_ORDER, C[n][k].
const BINOM: [[f64; LEN]; LEN] = {
    let mut c = [[0.0; LEN]; LEN];
    let mut n = 0;
    while n < LEN {
        c[n][0] = 1.0;
        let mut k = 1;
        while k <= n {
            c[n][k] = c[n - 1][k - 1] + if k <= n - 1 { c[n - 1][k] } else { 0.0 };
            k += 1;
        }
        n += 1;
    }
    c
};

/// A function value plus its derivatives up to `order` at one sample time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    order: usize,
    v: [f64; LEN],
}

impl Jet {
    pub fn constant(x: f64, order: usize) -> Self {
        assert!(order <= MAX_ORDER);
        let mut v = [0.0; LEN];
        v[0] = x;
        Jet { order, v }
    }

    /// The identity function t -> t sampled at `t`.
    pub fn variable(t: f64, order: usize) -> Self {
        assert!(order <= MAX_ORDER);
        let mut v = [0.0; LEN];
        v[0] = t;
        if order >= 1 {
            v[1] = 1.0;
        }
        Jet { order, v }
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() || values.len() > LEN {
            return Err(DragError::UnsupportedOrder {
                requested: values.len().saturating_sub(1),
                supported: MAX_ORDER,
            });
        }
        let mut v = [0.0; LEN];
        v[..values.len()].copy_from_slice(values);
        Ok(Jet { order: values.len() - 1, v })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// d^k f / dt^k.
    pub fn deriv(&self, k: usize) -> f64 {
        assert!(k <= self.order, "derivative order {k} beyond jet order {}", self.order);
        self.v[k]
    }

    pub fn value(&self) -> f64 {
        self.v[0]
    }

    pub fn values(&self) -> &[f64] {
        &self.v[..=self.order]
    }

    /// Truncate to a lower order.
    pub fn truncated(&self, order: usize) -> Jet {
        assert!(order <= self.order);
        let mut v = [0.0; LEN];
        v[..=order].copy_from_slice(&self.v[..=order]);
        Jet { order, v }
    }

    /// The jet of f', one order shorter.
    pub fn shift(&self) -> Jet {
        assert!(self.order >= 1, "cannot differentiate an order-0 jet");
        let mut v = [0.0; LEN];
        for k in 0..self.order {
            v[k] = self.v[k + 1];
        }
        Jet { order: self.order - 1, v }
    }

    pub fn neg(&self) -> Jet {
        let mut v = self.v;
        for x in v.iter_mut() {
            *x = -*x;
        }
        Jet { order: self.order, v }
    }

    pub fn scale(&self, a: f64) -> Jet {
        let mut v = self.v;
        for x in v.iter_mut() {
            *x *= a;
        }
        Jet { order: self.order, v }
    }

    pub fn add(&self, rhs: &Jet) -> Jet {
        let order = self.order.min(rhs.order);
        let mut v = [0.0; LEN];
        for k in 0..=order {
            v[k] = self.v[k] + rhs.v[k];
        }
        Jet { order, v }
    }

    pub fn sub(&self, rhs: &Jet) -> Jet {
        self.add(&rhs.neg())
    }

    pub fn add_scalar(&self, a: f64) -> Jet {
        let mut v = self.v;
        v[0] += a;
        Jet { order: self.order, v }
    }

    /// Leibniz product rule.
    pub fn mul(&self, rhs: &Jet) -> Jet {
        let order = self.order.min(rhs.order);
        let mut v = [0.0; LEN];
        for k in 0..=order {
            let mut s = 0.0;
            for i in 0..=k {
                s += BINOM[k][i] * self.v[i] * rhs.v[k - i];
            }
            v[k] = s;
        }
        Jet { order, v }
    }

    /// h = f/g via f^(k) = sum_i C(k,i) h^(i) g^(k-i).
    pub fn div(&self, rhs: &Jet) -> Jet {
        let order = self.order.min(rhs.order);
        assert!(rhs.v[0] != 0.0, "jet division by zero");
        let mut h = [0.0; LEN];
        for k in 0..=order {
            let mut s = self.v[k];
            for i in 0..k {
                s -= BINOM[k][i] * h[i] * rhs.v[k - i];
            }
            h[k] = s / rhs.v[0];
        }
        Jet { order, v: h }
    }

    pub fn recip(&self) -> Jet {
        Jet::constant(1.0, self.order).div(self)
    }

    /// h = sqrt(f) via f^(k) = sum_i C(k,i) h^(i) h^(k-i).
    pub fn sqrt(&self) -> Jet {
        assert!(self.v[0] > 0.0, "jet sqrt of non-positive value");
        let order = self.order;
        let mut h = [0.0; LEN];
        h[0] = self.v[0].sqrt();
        for k in 1..=order {
            let mut s = self.v[k];
            for i in 1..k {
                s -= BINOM[k][i] * h[i] * h[k - i];
            }
            h[k] = s / (2.0 * h[0]);
        }
        Jet { order, v: h }
    }

    /// h = exp(f) via h^(k) = sum_{i<k} C(k-1,i) h^(i) f^(k-i).
    pub fn exp(&self) -> Jet {
        let order = self.order;
        let mut h = [0.0; LEN];
        h[0] = self.v[0].exp();
        for k in 1..=order {
            let mut s = 0.0;
            for i in 0..k {
                s += BINOM[k - 1][i] * h[i] * self.v[k - i];
            }
            h[k] = s;
        }
        Jet { order, v: h }
    }

    pub fn powi(&self, m: u32) -> Jet {
        let mut out = Jet::constant(1.0, self.order);
        for _ in 0..m {
            out = out.mul(self);
        }
        out
    }
}
