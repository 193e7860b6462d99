//! Deterministic quadrature: Gauss-Legendre rules, singularity-adapted box
//! meshes with dyadic refinement toward a closed set, compensated summation
//! in a fixed order, and a seeded Monte Carlo fallback for high-dimensional
//! configuration pairings.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::region::BoxRegion;

// ---------------------------------------------------------------------------
// Gauss-Legendre rules
// ---------------------------------------------------------------------------

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`,
/// computed by Newton iteration on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        // Chebyshev-like initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            // Legendre P_n(x) and derivative by recurrence
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        // recompute derivative at the converged node
        let mut p0 = 1.0;
        let mut p1 = x;
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn cached_gauss(n: usize) -> (Vec<f64>, Vec<f64>) {
    static CACHE: OnceLock<Mutex<HashMap<usize, (Vec<f64>, Vec<f64>)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard.entry(n).or_insert_with(|| gauss_legendre(n)).clone()
}

/// Tensor Gauss-Legendre nodes/weights over a box, `order` points per axis.
/// Nodes are emitted in a fixed lexicographic order.
pub fn tensor_gauss(bx: &BoxRegion, order: usize) -> Vec<(Vec<f64>, f64)> {
    let dim = bx.dim();
    let (nodes, weights) = cached_gauss(order);
    let mut out = Vec::with_capacity(order.pow(dim as u32));
    let mut idx = vec![0usize; dim];
    loop {
        let mut x = Vec::with_capacity(dim);
        let mut w = 1.0;
        for (axis, &i) in idx.iter().enumerate() {
            let half = 0.5 * (bx.hi[axis] - bx.lo[axis]);
            let mid = 0.5 * (bx.hi[axis] + bx.lo[axis]);
            x.push(mid + half * nodes[i]);
            w *= half * weights[i];
        }
        out.push((x, w));
        // odometer increment
        let mut axis = dim;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < order {
                break;
            }
            idx[axis] = 0;
        }
    }
}

// ---------------------------------------------------------------------------
// Compensated summation
// ---------------------------------------------------------------------------

/// Neumaier compensated accumulator; used everywhere sums must be
/// reproducible and well-conditioned.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

// ---------------------------------------------------------------------------
// Quadrature specification
// ---------------------------------------------------------------------------

/// Monte Carlo fallback parameters (configuration pairings in ambient
/// dimension above three).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct McSpec {
    pub samples: u64,
    pub seed: u64,
}

/// Controls for the pairing quadrature.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct QuadratureSpec {
    /// Absolute tolerance targeted by the shell tail extrapolation.
    pub tolerance: f64,
    /// Maximum dyadic subdivision depth toward the singular set.
    pub max_depth: usize,
    /// Whether boxes are refined toward the singular set.
    pub shell_refine: bool,
    /// Fixed, documented summation order with compensated accumulation.
    pub deterministic: bool,
    /// Ratio `diam(box) / dist(box, set)` below which a box is a leaf.
    pub theta: f64,
    /// Gauss points per axis; 0 picks a dimension-based default.
    pub gauss_order: usize,
    /// Points per axis for inner (partial-integral) rules; 0 for default.
    pub inner_order: usize,
    /// Target panels per axis before singularity refinement.
    pub base_panels: usize,
    /// Monte Carlo fallback for ambient dimension > 3.
    pub mc: Option<McSpec>,
}

/// Hard cap on `max_depth`.
pub const MAX_SUBDIVISION_DEPTH: usize = 48;

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            tolerance: 1e-9,
            max_depth: 24,
            shell_refine: true,
            deterministic: true,
            theta: 0.5,
            gauss_order: 0,
            inner_order: 0,
            base_panels: 2,
            mc: None,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter("tolerance must be positive".into()));
        }
        if self.max_depth > MAX_SUBDIVISION_DEPTH {
            return Err(Error::InvalidParameter(format!(
                "max_depth {} exceeds cap {}",
                self.max_depth, MAX_SUBDIVISION_DEPTH
            )));
        }
        if !(self.theta > 0.0 && self.theta <= 2.0) {
            return Err(Error::InvalidParameter("theta must lie in (0, 2]".into()));
        }
        Ok(())
    }

    pub fn order_for_dim(&self, dim: usize) -> usize {
        if self.gauss_order > 0 {
            return self.gauss_order;
        }
        match dim {
            1 => 24,
            2 => 12,
            3 => 7,
            _ => 4,
        }
    }

    pub fn inner_order_for_dim(&self, dim: usize) -> usize {
        if self.inner_order > 0 {
            return self.inner_order;
        }
        match dim {
            1 => 32,
            2 => 20,
            _ => 16,
        }
    }
}

// ---------------------------------------------------------------------------
// Singularity-adapted box mesh
// ---------------------------------------------------------------------------

/// One quadrature node of a mesh: position, weight, distance to the
/// refinement target, and the dyadic depth of its box.
#[derive(Clone, Debug)]
pub struct MeshNode {
    pub x: Vec<f64>,
    pub w: f64,
    pub dist: f64,
    pub depth: usize,
}

pub struct Mesh {
    pub nodes: Vec<MeshNode>,
    pub boxes: usize,
}

/// Builds the dyadic mesh of a box refined toward `dist_fn`'s zero set.
///
/// Boxes are bisected along their longest axis until either
/// `diam <= theta * dist(box)` or the depth cap; the distance lower bound
/// uses the 1-Lipschitz property of distance functions. Leaves carry a
/// tensor Gauss rule. The leaf order (depth-first, low half first) is the
/// documented deterministic summation order.
pub fn build_mesh(
    bx: &BoxRegion,
    dist_fn: &dyn Fn(&[f64]) -> f64,
    spec: &QuadratureSpec,
) -> Mesh {
    let order = spec.order_for_dim(bx.dim());
    let mut nodes = Vec::new();
    let mut boxes = 0usize;
    // initial uniform split into base panels along each axis
    let mut stack: Vec<(BoxRegion, usize)> = Vec::new();
    {
        let mut initial = vec![bx.clone()];
        for axis in 0..bx.dim() {
            let mut next = Vec::new();
            for b in initial {
                let panels = spec.base_panels.max(1);
                let w = (b.hi[axis] - b.lo[axis]) / panels as f64;
                for k in 0..panels {
                    let mut c = b.clone();
                    c.lo[axis] = b.lo[axis] + k as f64 * w;
                    c.hi[axis] = if k + 1 == panels {
                        b.hi[axis]
                    } else {
                        b.lo[axis] + (k + 1) as f64 * w
                    };
                    next.push(c);
                }
            }
            initial = next;
        }
        for b in initial.into_iter().rev() {
            stack.push((b, 0));
        }
    }
    while let Some((b, depth)) = stack.pop() {
        let center = b.center();
        let half_diag = b.half_diagonal();
        let dist_center = dist_fn(&center);
        let dist_lb = (dist_center - half_diag).max(0.0);
        let refine = spec.shell_refine
            && depth < spec.max_depth
            && 2.0 * half_diag > spec.theta * dist_lb;
        if refine {
            let (a, c) = b.split(b.longest_axis());
            // low half processed first: push high half, then low half
            stack.push((c, depth + 1));
            stack.push((a, depth + 1));
        } else {
            boxes += 1;
            for (x, w) in tensor_gauss(&b, order) {
                let dist = dist_fn(&x);
                nodes.push(MeshNode { x, w, dist, depth });
            }
        }
    }
    Mesh { nodes, boxes }
}

/// Mesh for a smooth integrand (no refinement target): distance is +inf.
pub fn build_plain_mesh(bx: &BoxRegion, spec: &QuadratureSpec) -> Mesh {
    let far = |_: &[f64]| f64::INFINITY;
    let mut spec2 = spec.clone();
    spec2.shell_refine = false;
    build_mesh(bx, &far, &spec2)
}

// ---------------------------------------------------------------------------
// Octave-graded summation with tail extrapolation
// ---------------------------------------------------------------------------

/// Sum of weighted samples graded by distance octaves
/// `dist ∈ [2^{-k-1} D, 2^{-k} D)`, outermost first, with a geometric tail
/// estimate for the innermost shells.
pub struct ShellSums {
    /// per-octave sums, index 0 = outermost
    pub octaves: Vec<f64>,
    pub total: f64,
    /// geometric extrapolation of the un-resolved tail (0 when clearly
    /// convergent or when the innermost shells vanish)
    pub tail: f64,
    pub diverging: bool,
}

/// Grades `(coef, dist)` samples into distance octaves relative to `scale`.
pub fn shell_sums(samples: &[(f64, f64)], scale: f64) -> ShellSums {
    let max_octave = 64usize;
    let mut acc: Vec<CompensatedSum> = vec![CompensatedSum::new(); max_octave + 1];
    let mut total = CompensatedSum::new();
    for &(c, d) in samples {
        let k = if d >= scale {
            0
        } else if d <= 0.0 {
            max_octave
        } else {
            (((scale / d).log2().floor() as i64).max(0) as usize).min(max_octave)
        };
        acc[k].add(c);
        total.add(c);
    }
    let octaves: Vec<f64> = acc.iter().map(|a| a.value()).collect();
    // trailing populated octave window decides convergence
    let last_nonzero = octaves.iter().rposition(|&v| v != 0.0);
    let mut diverging = false;
    let mut tail = 0.0;
    if let Some(last) = last_nonzero {
        if last >= 4 {
            let r3 = octaves[last].abs();
            let r2 = octaves[last - 1].abs();
            let r1 = octaves[last - 2].abs();
            if r1 > 0.0 && r2 > 0.0 && r3 > 0.0 {
                let q1 = r2 / r1;
                let q2 = r3 / r2;
                let q = q1.max(q2);
                if q >= 0.95 {
                    diverging = true;
                } else {
                    tail = octaves[last] * q2 / (1.0 - q2.min(0.9));
                }
            }
        }
    }
    ShellSums {
        octaves,
        total: total.value(),
        tail,
        diverging,
    }
}

// ---------------------------------------------------------------------------
// Monte Carlo sampling (seeded)
// ---------------------------------------------------------------------------

/// Plain Monte Carlo estimate over a box with a fixed seed. Returns the
/// estimate and its standard error; sampling order is the summation order.
pub fn monte_carlo(
    bx: &BoxRegion,
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    mc: &McSpec,
) -> Result<(f64, f64)> {
    if mc.samples == 0 {
        return Err(Error::InvalidParameter("mc.samples must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
    let vol = bx.volume();
    let mut sum = CompensatedSum::new();
    let mut sum_sq = CompensatedSum::new();
    let n = mc.samples;
    for _ in 0..n {
        let x: Vec<f64> = bx
            .lo
            .iter()
            .zip(&bx.hi)
            .map(|(a, b)| rng.gen_range(*a..*b))
            .collect();
        let v = f(&x)?;
        sum.add(v);
        sum_sq.add(v * v);
    }
    let mean = sum.value() / n as f64;
    let var = (sum_sq.value() / n as f64 - mean * mean).max(0.0);
    let est = vol * mean;
    let se = vol * (var / n as f64).sqrt();
    Ok((est, se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_integrates_polynomials_exactly() {
        let (n, w) = gauss_legendre(5);
        // degree-9 exactness: ∫_{-1}^1 x^8 dx = 2/9
        let got: f64 = n.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert_relative_eq!(got, 2.0 / 9.0, epsilon = 1e-13);
        let sum: f64 = w.iter().sum();
        assert_relative_eq!(sum, 2.0, epsilon = 1e-13);
    }

    #[test]
    fn tensor_rule_2d() {
        let bx = BoxRegion::cube(2, 0.0, 1.0);
        let pts = tensor_gauss(&bx, 6);
        let got: f64 = pts.iter().map(|(x, w)| w * x[0] * x[1]).sum();
        assert_relative_eq!(got, 0.25, epsilon = 1e-13);
    }

    #[test]
    fn compensated_sum_is_accurate() {
        let mut s = CompensatedSum::new();
        s.add(1.0);
        for _ in 0..1000 {
            s.add(1e-18);
        }
        assert_relative_eq!(s.value(), 1.0 + 1e-15, epsilon = 1e-18);
    }

    #[test]
    fn mesh_refines_toward_singularity() {
        let bx = BoxRegion::cube(1, -1.0, 1.0);
        let dist = |x: &[f64]| x[0].abs();
        let spec = QuadratureSpec {
            max_depth: 20,
            ..QuadratureSpec::default()
        };
        let mesh = build_mesh(&bx, &dist, &spec);
        let min_dist = mesh
            .nodes
            .iter()
            .map(|n| n.dist)
            .fold(f64::INFINITY, f64::min);
        assert!(min_dist < 1e-5);
        // integral of a smooth function is still correct
        let got: f64 = mesh.nodes.iter().map(|n| n.w * n.x[0].cos()).sum();
        assert_relative_eq!(got, 2.0 * 1.0f64.sin(), epsilon = 1e-12);
    }

    #[test]
    fn mesh_integrates_integrable_singularity() {
        // ∫_0^1 x^{-1/2} dx = 2, refined mesh plus tail extrapolation
        let bx = BoxRegion::new(vec![0.0], vec![1.0]).unwrap();
        let dist = |x: &[f64]| x[0].abs();
        let spec = QuadratureSpec {
            max_depth: 40,
            ..QuadratureSpec::default()
        };
        let mesh = build_mesh(&bx, &dist, &spec);
        let samples: Vec<(f64, f64)> = mesh
            .nodes
            .iter()
            .map(|n| (n.w / n.x[0].sqrt(), n.dist))
            .collect();
        let s = shell_sums(&samples, 1.0);
        assert!(!s.diverging);
        assert_relative_eq!(s.total + s.tail, 2.0, epsilon = 1e-8);
    }

    #[test]
    fn shell_sums_flag_divergence() {
        // ∫_0^1 x^{-1} dx diverges: octave sums are constant
        let bx = BoxRegion::new(vec![0.0], vec![1.0]).unwrap();
        let dist = |x: &[f64]| x[0].abs();
        let spec = QuadratureSpec {
            max_depth: 30,
            ..QuadratureSpec::default()
        };
        let mesh = build_mesh(&bx, &dist, &spec);
        let samples: Vec<(f64, f64)> = mesh
            .nodes
            .iter()
            .map(|n| (n.w / n.x[0], n.dist))
            .collect();
        let s = shell_sums(&samples, 1.0);
        assert!(s.diverging);
    }

    #[test]
    fn monte_carlo_reproducible() {
        let bx = BoxRegion::cube(2, 0.0, 1.0);
        let mc = McSpec {
            samples: 2000,
            seed: 42,
        };
        let mut f = |x: &[f64]| Ok(x[0] + x[1]);
        let (a, se) = monte_carlo(&bx, &mut f, &mc).unwrap();
        let mut f2 = |x: &[f64]| Ok(x[0] + x[1]);
        let (b, _) = monte_carlo(&bx, &mut f2, &mc).unwrap();
        assert_eq!(a, b);
        assert!((a - 1.0).abs() < 5.0 * se.max(1e-3));
    }

    #[test]
    fn spec_validation() {
        let mut s = QuadratureSpec::default();
        assert!(s.validate().is_ok());
        s.tolerance = 0.0;
        assert!(s.validate().is_err());
        let mut s2 = QuadratureSpec::default();
        s2.max_depth = 100;
        assert!(s2.validate().is_err());
    }
}
