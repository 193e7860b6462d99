//! Truncated multivariate Taylor arithmetic (forward Taylor mode).
//!
//! A [`TaylorPoly`] holds the Taylor coefficients `c_k = ∂^k f(x0) / k!` of a
//! function around a base point, truncated at a fixed total order. Arithmetic
//! on these objects propagates derivatives exactly (up to rounding); no
//! numerical differencing is involved anywhere.

use std::sync::Arc;

use crate::multi::{self, IndexTable, MultiIndex};

/// Truncated Taylor expansion of a scalar function of `dim` variables.
#[derive(Clone)]
pub struct TaylorPoly {
    table: Arc<IndexTable>,
    /// Taylor coefficients indexed by the table ordering.
    pub coeffs: Vec<f64>,
}

impl TaylorPoly {
    pub fn zero(dim: usize, order: usize) -> Self {
        let table = multi::table(dim, order);
        let n = table.len();
        TaylorPoly {
            table,
            coeffs: vec![0.0; n],
        }
    }

    pub fn constant(dim: usize, order: usize, v: f64) -> Self {
        let mut p = Self::zero(dim, order);
        p.coeffs[0] = v;
        p
    }

    /// Seed for the variable `x_axis` at base value `v`: `v + ξ_axis`.
    pub fn variable(dim: usize, order: usize, axis: usize, v: f64) -> Self {
        let mut p = Self::zero(dim, order);
        p.coeffs[0] = v;
        if order >= 1 {
            let u = MultiIndex::unit(dim, axis);
            let r = p.table.rank_of(&u).unwrap();
            p.coeffs[r] = 1.0;
        }
        p
    }

    /// Seed with affine dependence on the jet variables:
    /// `value + Σ_axis gradient[axis] · ξ_axis`.
    pub fn affine(dim: usize, order: usize, value: f64, gradient: &[f64]) -> Self {
        let mut p = Self::zero(dim, order);
        p.coeffs[0] = value;
        if order >= 1 {
            for (axis, &g) in gradient.iter().enumerate() {
                if g != 0.0 {
                    let u = MultiIndex::unit(dim, axis);
                    let r = p.table.rank_of(&u).unwrap();
                    p.coeffs[r] = g;
                }
            }
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.table.dim
    }

    pub fn order(&self) -> usize {
        self.table.order
    }

    pub fn table(&self) -> &Arc<IndexTable> {
        &self.table
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    /// Taylor coefficient for a multi-index, zero when out of range.
    pub fn coeff(&self, m: &MultiIndex) -> f64 {
        match self.table.rank_of(m) {
            Some(r) => self.coeffs[r],
            None => 0.0,
        }
    }

    /// Derivative value `∂^k f(x0) = k! · c_k`.
    pub fn derivative(&self, m: &MultiIndex) -> f64 {
        self.coeff(m) * m.factorial()
    }

    pub fn add(&self, other: &TaylorPoly) -> TaylorPoly {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &TaylorPoly) -> TaylorPoly {
        self.zip(other, |a, b| a - b)
    }

    fn zip(&self, other: &TaylorPoly, f: impl Fn(f64, f64) -> f64) -> TaylorPoly {
        debug_assert!(Arc::ptr_eq(&self.table, &other.table));
        let mut out = self.clone();
        for (o, b) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *o = f(*o, *b);
        }
        out
    }

    pub fn scale(&self, s: f64) -> TaylorPoly {
        let mut out = self.clone();
        for c in out.coeffs.iter_mut() {
            *c *= s;
        }
        out
    }

    pub fn neg(&self) -> TaylorPoly {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, s: f64) -> TaylorPoly {
        let mut out = self.clone();
        out.coeffs[0] += s;
        out
    }

    /// Truncated product.
    pub fn mul(&self, other: &TaylorPoly) -> TaylorPoly {
        debug_assert!(Arc::ptr_eq(&self.table, &other.table));
        let t = &self.table;
        let order = t.order;
        let mut out = TaylorPoly {
            table: self.table.clone(),
            coeffs: vec![0.0; t.len()],
        };
        for sa in 0..=order {
            let (a_lo, a_hi) = (t.degree_offsets[sa], t.degree_offsets[sa + 1]);
            for ia in a_lo..a_hi {
                let ca = self.coeffs[ia];
                if ca == 0.0 {
                    continue;
                }
                let ma = t.indices[ia];
                let max_sb = order - sa;
                let b_hi = t.degree_offsets[max_sb + 1];
                for ib in 0..b_hi {
                    let cb = other.coeffs[ib];
                    if cb == 0.0 {
                        continue;
                    }
                    let target = ma.add(&t.indices[ib]);
                    let r = t.rank_of(&target).unwrap();
                    out.coeffs[r] += ca * cb;
                }
            }
        }
        out
    }

    /// Composition with a univariate function given by its Taylor
    /// coefficients `series[k] = g^{(k)}(u0)/k!` at `u0 = self.value()`.
    ///
    /// Returns the expansion of `g ∘ self` via Horner evaluation in the
    /// nilpotent part `self - u0`.
    pub fn compose_univariate(&self, series: &[f64]) -> TaylorPoly {
        let nil = {
            let mut n = self.clone();
            n.coeffs[0] = 0.0;
            n
        };
        let order = self.order();
        debug_assert!(series.len() >= order + 1);
        let mut acc = TaylorPoly::constant(self.dim(), order, series[order]);
        for k in (0..order).rev() {
            acc = acc.mul(&nil).add_scalar(series[k]);
        }
        acc
    }

    /// Raise to a small nonnegative integer power by repeated squaring.
    pub fn powi(&self, n: usize) -> TaylorPoly {
        let mut result = TaylorPoly::constant(self.dim(), self.order(), 1.0);
        let mut base = self.clone();
        let mut n = n;
        while n > 0 {
            if n & 1 == 1 {
                result = result.mul(&base);
            }
            n >>= 1;
            if n > 0 {
                base = base.mul(&base);
            }
        }
        result
    }
}

// ---------------------------------------------------------------------------
// Univariate coefficient series for the smooth building blocks.
//
// Each function returns `series[k] = g^{(k)}(u0)/k!` for k = 0..=order.
// ---------------------------------------------------------------------------

pub fn series_exp(u0: f64, order: usize) -> Vec<f64> {
    let e = u0.exp();
    (0..=order).map(|k| e / multi::factorial(k)).collect()
}

pub fn series_sin(u0: f64, order: usize) -> Vec<f64> {
    let (s, c) = u0.sin_cos();
    let cycle = [s, c, -s, -c];
    (0..=order)
        .map(|k| cycle[k % 4] / multi::factorial(k))
        .collect()
}

pub fn series_cos(u0: f64, order: usize) -> Vec<f64> {
    let (s, c) = u0.sin_cos();
    let cycle = [c, -s, -c, s];
    (0..=order)
        .map(|k| cycle[k % 4] / multi::factorial(k))
        .collect()
}

/// `u^a` for real exponent `a`; requires `u0 > 0`.
pub fn series_powf(u0: f64, a: f64, order: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(order + 1);
    // binom(a, k) u0^{a-k}
    let mut coef = u0.powf(a);
    out.push(coef);
    for k in 0..order {
        coef *= (a - k as f64) / (k as f64 + 1.0);
        coef /= u0;
        out.push(coef);
    }
    out
}

pub fn series_sqrt(u0: f64, order: usize) -> Vec<f64> {
    series_powf(u0, 0.5, order)
}

pub fn series_recip(u0: f64, order: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(order + 1);
    let mut c = 1.0 / u0;
    out.push(c);
    for _ in 0..order {
        c = -c / u0;
        out.push(c);
    }
    out
}

/// `ln u` at `u0 > 0`.
pub fn series_ln(u0: f64, order: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(order + 1);
    out.push(u0.ln());
    // d^k/du^k ln u = (-1)^{k-1} (k-1)! / u^k  =>  c_k = (-1)^{k-1}/(k u0^k)
    let mut p = 1.0;
    for k in 1..=order {
        p /= u0;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        out.push(sign * p / k as f64);
    }
    out
}

/// Exponential of a univariate nilpotent-friendly series:
/// given `g` coefficients, return coefficients of `exp(g)`.
fn univariate_exp(series: &[f64]) -> Vec<f64> {
    let order = series.len() - 1;
    // exp(g)' = g' exp(g): standard recurrence
    //   e_0 = exp(g_0),  e_n = (1/n) Σ_{j=1..n} j g_j e_{n-j}
    let mut e = vec![0.0; order + 1];
    e[0] = series[0].exp();
    for n in 1..=order {
        let mut acc = 0.0;
        for j in 1..=n {
            acc += j as f64 * series[j] * e[n - j];
        }
        e[n] = acc / n as f64;
    }
    e
}

/// The bump profile as a function of the squared normalized radius:
/// `w ↦ exp(-1/(1-w))` for `w < 1`, identically zero for `w >= 1`.
pub fn series_bump_sq(w0: f64, order: usize) -> Vec<f64> {
    if w0 >= 1.0 {
        return vec![0.0; order + 1];
    }
    // g(w) = -1/(1-w): coefficients around w0 are -1/(1-w0)^{k+1}
    let mut g = Vec::with_capacity(order + 1);
    let r = 1.0 / (1.0 - w0);
    let mut p = r;
    g.push(-p);
    for _ in 0..order {
        p *= r;
        g.push(-p);
    }
    univariate_exp(&g)
}

/// The endpoint-flat bump on (0, 1): `v ↦ exp(-1/(v(1-v)))`, zero outside.
pub fn series_bump01(v0: f64, order: usize) -> Vec<f64> {
    if v0 <= 0.0 || v0 >= 1.0 {
        return vec![0.0; order + 1];
    }
    // -1/(v(1-v)) = -1/v - 1/(1-v)
    let mut g = Vec::with_capacity(order + 1);
    let a = 1.0 / v0;
    let b = 1.0 / (1.0 - v0);
    let mut pa = a;
    let mut pb = b;
    g.push(-(pa + pb));
    for k in 1..=order {
        pa *= a;
        pb *= b;
        // d^k of -1/v: -(-1)^k k!/v^{k+1} => coeff -(-1)^k / v^{k+1}
        let sa = if k % 2 == 0 { -pa } else { pa };
        g.push(sa - pb);
    }
    univariate_exp(&g)
}

// ---------------------------------------------------------------------------
// The smoothstep built from the bump integral.
//
// S(v) = ∫_0^v exp(-1/(s(1-s))) ds / ∫_0^1 exp(-1/(s(1-s))) ds, clamped to
// 0 below 0 and 1 above 1. Only the order-zero value needs quadrature; all
// derivative entries are exact Taylor coefficients of the bump integrand.
// ---------------------------------------------------------------------------

fn bump01(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        0.0
    } else {
        (-1.0 / (s * (1.0 - s))).exp()
    }
}

/// 64-point Gauss-Legendre nodes/weights on [-1, 1], computed once.
fn gauss64() -> &'static (Vec<f64>, Vec<f64>) {
    use std::sync::OnceLock;
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| crate::quad::gauss_legendre(64))
}

fn bump01_integral(a: f64, b: f64) -> f64 {
    let (nodes, weights) = gauss64();
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        acc += w * bump01(mid + half * x);
    }
    acc * half
}

fn smoothstep_norm() -> f64 {
    use std::sync::OnceLock;
    static NORM: OnceLock<f64> = OnceLock::new();
    // Split at the midpoint; the integrand is symmetric about 1/2.
    *NORM.get_or_init(|| 2.0 * bump01_integral(0.0, 0.5))
}

/// Quadrature-based reference evaluation of the smoothstep (slow path,
/// used to seed the Chebyshev table and in cross-checks).
pub fn smoothstep_reference(v: f64) -> f64 {
    if v <= 0.0 {
        0.0
    } else if v >= 1.0 {
        1.0
    } else if v <= 0.5 {
        bump01_integral(0.0, v) / smoothstep_norm()
    } else {
        1.0 - bump01_integral(v, 1.0) / smoothstep_norm()
    }
}

const CHEB_N: usize = 160;

/// Chebyshev interpolant of the reference smoothstep on [0, 1], built once.
fn cheb_coeffs() -> &'static [f64; CHEB_N] {
    use std::sync::OnceLock;
    static C: OnceLock<[f64; CHEB_N]> = OnceLock::new();
    C.get_or_init(|| {
        let mut vals = [0.0; CHEB_N];
        for (j, val) in vals.iter_mut().enumerate() {
            let theta = std::f64::consts::PI * (j as f64 + 0.5) / CHEB_N as f64;
            let v = 0.5 * (1.0 + theta.cos());
            *val = smoothstep_reference(v);
        }
        let mut c = [0.0; CHEB_N];
        for (k, ck) in c.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, val) in vals.iter().enumerate() {
                let theta = std::f64::consts::PI * (j as f64 + 0.5) / CHEB_N as f64;
                acc += val * (k as f64 * theta).cos();
            }
            *ck = 2.0 * acc / CHEB_N as f64;
        }
        c
    })
}

/// Smoothstep value: 0 for v <= 0, 1 for v >= 1, strictly increasing
/// between (evaluated through the precomputed Chebyshev table; agrees with
/// [`smoothstep_reference`] to ~1e-13).
pub fn smoothstep(v: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    if v >= 1.0 {
        return 1.0;
    }
    let t = 2.0 * v - 1.0;
    let c = cheb_coeffs();
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for k in (1..CHEB_N).rev() {
        let b0 = 2.0 * t * b1 - b2 + c[k];
        b2 = b1;
        b1 = b0;
    }
    (t * b1 - b2 + 0.5 * c[0]).clamp(0.0, 1.0)
}

/// Taylor coefficients of the smoothstep at `v0`.
pub fn series_smoothstep(v0: f64, order: usize) -> Vec<f64> {
    if v0 <= 0.0 {
        let mut s = vec![0.0; order + 1];
        s[0] = 0.0;
        return s;
    }
    if v0 >= 1.0 {
        let mut s = vec![0.0; order + 1];
        s[0] = 1.0;
        return s;
    }
    let mut out = Vec::with_capacity(order + 1);
    out.push(smoothstep(v0));
    if order >= 1 {
        let b = series_bump01(v0, order - 1);
        let norm = smoothstep_norm();
        // S^{(k)} = bump01^{(k-1)}/norm  =>  c_k = b_{k-1}/(k · norm)
        for k in 1..=order {
            out.push(b[k - 1] / (k as f64 * norm));
        }
    }
    out
}
