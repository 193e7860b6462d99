//! Independent reference quadratures.
//!
//! Everything here deliberately avoids the shell-mesh machinery used by the
//! pairing engine: the adaptive integrator is a classic Gauss-Kronrod 7/15
//! bisection scheme, improper integrals are handled by endpoint
//! substitution, and the radial finite-part oracle reduces rotationally
//! invariant two-point problems to one dimension. These are the reference
//! values the main pipeline is checked against.

use crate::error::{Error, Result};

/// 15-point Kronrod nodes (positive half) on [-1, 1].
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.000000000000000,
];

/// 15-point Kronrod weights.
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

/// 7-point Gauss weights (matching XGK[1], XGK[3], XGK[5], XGK[7]).
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

fn gk15(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(mid);
    let mut result_gauss = WG[3] * fc;
    let mut result_kronrod = WGK[7] * fc;
    for j in 0..7 {
        let x = half * XGK[j];
        let f1 = f(mid - x);
        let f2 = f(mid + x);
        result_kronrod += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            result_gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let err = (half * (result_kronrod - result_gauss)).abs();
    (half * result_kronrod, err)
}

/// Adaptive Gauss-Kronrod integration of `f` on `[a, b]` to absolute
/// tolerance `tol`.
pub fn integrate(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    if a == b {
        return Ok(0.0);
    }
    struct Item {
        a: f64,
        b: f64,
        val: f64,
        err: f64,
    }
    let (val, err) = gk15(f, a, b);
    let mut items = vec![Item { a, b, val, err }];
    for _ in 0..20_000 {
        let total_err: f64 = items.iter().map(|i| i.err).sum();
        if total_err <= tol {
            break;
        }
        // split the worst interval
        let worst = items
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.err.partial_cmp(&b.1.err).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let it = items.swap_remove(worst);
        let m = 0.5 * (it.a + it.b);
        if m <= it.a || m >= it.b {
            // interval exhausted at machine precision
            items.push(it);
            break;
        }
        let (v1, e1) = gk15(f, it.a, m);
        let (v2, e2) = gk15(f, m, it.b);
        items.push(Item {
            a: it.a,
            b: m,
            val: v1,
            err: e1,
        });
        items.push(Item {
            a: m,
            b: it.b,
            val: v2,
            err: e2,
        });
    }
    Ok(items.iter().map(|i| i.val).sum())
}

/// Improper integral `∫_a^b f` where `f` may blow up (integrably) at `a`.
///
/// Substitutes `x = a + t^2` to flatten an inverse-square-root-type
/// endpoint singularity, then integrates adaptively.
pub fn integrate_improper_lower(
    f: &mut dyn FnMut(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let mut g = |t: f64| {
        let x = a + t * t;
        if x <= a {
            0.0
        } else {
            2.0 * t * f(x)
        }
    };
    integrate(&mut g, 0.0, (b - a).sqrt(), tol)
}

/// Symmetric improper integral `∫_{-R}^{R} f` with an integrable
/// singularity at 0.
pub fn integrate_improper_symmetric(
    f: &mut dyn FnMut(f64) -> f64,
    radius: f64,
    tol: f64,
) -> Result<f64> {
    let mut right = |x: f64| f(x);
    let r = integrate_improper_lower(&mut right, 0.0, radius, 0.5 * tol)?;
    let mut left = |x: f64| f(-x);
    let l = integrate_improper_lower(&mut left, 0.0, radius, 0.5 * tol)?;
    Ok(r + l)
}

/// The subtracted-integrand finite-part oracle for `t = |x|^{-1}` on R with
/// an order-0 scheme: `∫ (φ(x) - φ(0) w(x)) / |x| dx`.
///
/// `phi` and `window` are provided as callbacks; `radius` bounds the
/// supports of both.
pub fn finite_part_inverse_abs(
    phi: &mut dyn FnMut(f64) -> f64,
    window: &mut dyn FnMut(f64) -> f64,
    radius: f64,
    tol: f64,
) -> Result<f64> {
    let phi0 = phi(0.0);
    let mut g = |x: f64| {
        if x == 0.0 {
            0.0
        } else {
            (phi(x) - phi0 * window(x)) / x.abs()
        }
    };
    // the subtracted integrand is bounded near 0; split there anyway to
    // help the adaptive scheme
    let left = integrate(&mut g, -radius, 0.0, 0.5 * tol)?;
    let right = integrate(&mut g, 0.0, radius, 0.5 * tol)?;
    Ok(left + right)
}

/// Radial finite-part oracle for a two-point amplitude in dimension `d`
/// with kernel power density `g(r)` and separable test data: computes
///
/// `A_{d-1} ∫_0^∞ r^{d-1} g(r) [ η(r) - w(r) η(0) ] dr`
///
/// where `A_{d-1}` is the unit-sphere area, `η` the radial factor of the
/// test function in the relative coordinate and `w` the (radial) window.
/// With `NoSubtraction`, pass `w = 0`.
pub fn radial_finite_part(
    d: usize,
    g: &mut dyn FnMut(f64) -> f64,
    eta: &mut dyn FnMut(f64) -> f64,
    window: Option<&mut dyn FnMut(f64) -> f64>,
    r_max: f64,
    tol: f64,
) -> Result<f64> {
    let area = unit_sphere_area(d)?;
    let eta0 = eta(0.0);
    match window {
        Some(w) => {
            let mut integrand = |r: f64| {
                if r <= 0.0 {
                    return 0.0;
                }
                area * r.powi(d as i32 - 1) * g(r) * (eta(r) - w(r) * eta0)
            };
            integrate(&mut integrand, 0.0, r_max, tol)
        }
        None => {
            let mut integrand = |r: f64| {
                if r <= 0.0 {
                    return 0.0;
                }
                area * r.powi(d as i32 - 1) * g(r) * eta(r)
            };
            integrate_improper_lower(&mut integrand, 0.0, r_max, tol)
        }
    }
}

/// Area of the unit sphere `S^{d-1}`.
pub fn unit_sphere_area(d: usize) -> Result<f64> {
    Ok(match d {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => {
            return Err(Error::InvalidParameter(format!(
                "unit sphere area only tabulated for d <= 3, got {d}"
            )))
        }
    })
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    if points.len() < 2 {
        return Err(Error::InsufficientData("need at least 2 points".into()));
    }
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(Error::InsufficientData("degenerate abscissae".into()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mut ss = 0.0;
    for (x, y) in points {
        let r = y - (slope * x + intercept);
        ss += r * r;
    }
    let residual = (ss / n).sqrt();
    Ok((slope, intercept, residual))
}
