//! Renormalization schemes (Taylor projections with a window) and the
//! finite-part extension operator with counterterms and λ-extrapolation.
//!
//! The extension of a density `f` singular on `X` pairs against `φ` as the
//! extrapolated limit over `λ = 2^{-j}` of
//!
//! `F(λ) = ⟨f, β_λ · (φ - P^m_D φ)⟩`,   `β_λ = 1 - χ_λ`,
//!
//! where `P^m_D` is the order-`m` transverse Taylor projection times the
//! scheme window. Two schemes with the same order differ by a distribution
//! supported on `X`, recovered by [`scheme_difference`].

use std::sync::Arc;

use serde::Serialize;

use crate::distribution::{Distribution, PointSupportedDist, RegularDist};
use crate::error::{Error, Result};
use crate::expr::{Expr, TransverseTaylorSpec};
use crate::geometry::ClosedSet;
use crate::multi;
use crate::quad::{CompensatedSum, QuadratureSpec};
use crate::region::BoxRegion;
use crate::testfn::SmoothFunction;

/// Dyadic λ ladder `2^{-j}`, `j = j_min..=j_max`.
#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
pub struct LadderSpec {
    pub j_min: u32,
    pub j_max: u32,
}

impl Default for LadderSpec {
    fn default() -> Self {
        LadderSpec { j_min: 2, j_max: 14 }
    }
}

impl LadderSpec {
    pub fn new(j_min: u32, j_max: u32) -> Result<Self> {
        if j_min < 1 || j_max < j_min + 3 {
            return Err(Error::InvalidParameter(
                "ladder needs j_min >= 1 and at least 4 rungs".into(),
            ));
        }
        Ok(LadderSpec { j_min, j_max })
    }

    pub fn lambdas(&self) -> Vec<(u32, f64)> {
        (self.j_min..=self.j_max)
            .map(|j| (j, 2.0f64.powi(-(j as i32))))
            .collect()
    }
}

/// A renormalization scheme: the singular set, the Taylor subtraction
/// order (`None` for no subtraction), and the window realizing the
/// complement of the vanishing ideal.
#[derive(Clone)]
pub struct RenormScheme {
    set: ClosedSet,
    order: Option<usize>,
    window: SmoothFunction,
    window_radii: (f64, f64),
}

impl RenormScheme {
    /// Order-`m` Taylor scheme with a window equal to 1 within `r_in` of
    /// the set and 0 beyond `r_out`.
    pub fn taylor(set: ClosedSet, m: usize, r_in: f64, r_out: f64) -> Result<Self> {
        if m > multi::MAX_JET_ORDER {
            return Err(Error::JetOrderUnsupported {
                requested: m,
                max: multi::MAX_JET_ORDER,
            });
        }
        let window = SmoothFunction::window(&set, r_in, r_out)?;
        Ok(RenormScheme {
            set,
            order: Some(m),
            window,
            window_radii: (r_in, r_out),
        })
    }

    /// The sentinel scheme that subtracts nothing.
    pub fn no_subtraction(set: ClosedSet) -> Result<Self> {
        let window = SmoothFunction::window(&set, 0.25, 0.5)?;
        Ok(RenormScheme {
            set,
            order: None,
            window,
            window_radii: (0.25, 0.5),
        })
    }

    pub fn set(&self) -> &ClosedSet {
        &self.set
    }

    pub fn order(&self) -> Option<usize> {
        self.order
    }

    pub fn window(&self) -> &SmoothFunction {
        &self.window
    }

    pub fn window_radii(&self) -> (f64, f64) {
        self.window_radii
    }

    /// `P^m_D φ`: the transverse Taylor polynomial of `φ` about the
    /// projection onto the set, multiplied by the window. The
    /// `NoSubtraction` sentinel returns the zero function.
    pub fn project_d(&self, phi: &SmoothFunction) -> Result<SmoothFunction> {
        let dim = self.set.ambient_dim();
        if phi.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: phi.dim(),
            });
        }
        let m = match self.order {
            None => return Ok(SmoothFunction::constant(dim, 0.0)),
            Some(m) => m,
        };
        let e = Expr::TransverseTaylor(Box::new(TransverseTaylorSpec {
            target: phi.expr().clone(),
            target_dim: dim,
            set: self.set.clone(),
            order: m,
            window: self.window.expr().clone(),
        }));
        let support = self.projection_support(phi);
        Ok(SmoothFunction::from_expr(dim, e, support))
    }

    /// `I^m_D φ = φ - P^m_D φ`: the finite-part projection, whose `m`-jet
    /// vanishes on the set.
    pub fn project_i(&self, phi: &SmoothFunction) -> Result<SmoothFunction> {
        let p = self.project_d(phi)?;
        let dim = phi.dim();
        let support = match (phi.support(), p.support()) {
            (Some(a), Some(b)) => Some(a.hull(b)),
            _ => None,
        };
        let e = Expr::Sum(vec![
            phi.expr().as_ref().clone(),
            Expr::AffineOf(0.0, -1.0, Box::new(p.expr().as_ref().clone())),
        ]);
        Ok(SmoothFunction::from_expr(dim, e, support))
    }

    /// Support box of `P^m_D φ`: the window tube around the part of the
    /// set where `φ` has nonvanishing jets.
    fn projection_support(&self, phi: &SmoothFunction) -> Option<BoxRegion> {
        let phi_box = phi.support()?;
        let r_out = self.window_radii.1;
        Some(tube_box(&self.set, phi_box, r_out))
    }
}

/// Bounding box of `{x : d(x, set) <= r, proj(x) near the given box}`.
pub(crate) fn tube_box(set: &ClosedSet, phi_box: &BoxRegion, r: f64) -> BoxRegion {
    match set {
        ClosedSet::Point { p } => BoxRegion::ball(p, r),
        ClosedSet::SmallDiagonal { n, d } => {
            // the projection mean must lie in the hull of the per-particle
            // ranges of φ's box, transversally inflated by r
            let mut lo = vec![f64::INFINITY; *d];
            let mut hi = vec![f64::NEG_INFINITY; *d];
            for i in 0..*n {
                for k in 0..*d {
                    lo[k] = lo[k].min(phi_box.lo[i * d + k]);
                    hi[k] = hi[k].max(phi_box.hi[i * d + k]);
                }
            }
            let mut blo = Vec::with_capacity(n * d);
            let mut bhi = Vec::with_capacity(n * d);
            for _ in 0..*n {
                for k in 0..*d {
                    blo.push(lo[k] - r);
                    bhi.push(hi[k] + r);
                }
            }
            BoxRegion { lo: blo, hi: bhi }
        }
        _ => {
            // conservative hull: inflate φ's box by the tube radius
            BoxRegion {
                lo: phi_box.lo.iter().map(|a| a - r).collect(),
                hi: phi_box.hi.iter().map(|a| a + r).collect(),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Ladder evaluation over flattened samples
// ---------------------------------------------------------------------------

/// One rung of the λ ladder.
#[derive(Clone, Debug, Serialize)]
pub struct LadderRung {
    pub j: u32,
    pub lambda: f64,
    pub value: f64,
}

/// The λ-extrapolated pairing of an extension, with its convergence
/// diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct ExtensionResult {
    /// the extrapolated limit (the pairing value)
    pub value: f64,
    pub ladder: Vec<LadderRung>,
    pub deltas: Vec<f64>,
    pub ratios: Vec<f64>,
    /// set only if the tail ratios stayed below 0.9 over the last 4 rungs
    pub converged: bool,
    pub diverged: bool,
    pub tail_ratio: f64,
    /// one-step Richardson acceleration of the last rung
    pub richardson: f64,
}

/// Evaluates `F(λ) = Σ coef_i · β_λ(dist_i)` over the ladder, in the fixed
/// sample order with compensated accumulation, then extrapolates assuming
/// a geometric tail. Samples are `(coefficient, distance to the set)`.
pub(crate) fn run_ladder(samples: &[(f64, f64)], ladder: &LadderSpec) -> ExtensionResult {
    let mut rungs = Vec::new();
    for (j, lambda) in ladder.lambdas() {
        let mut acc = CompensatedSum::new();
        let r_in = lambda * crate::cutoff::PLATEAU_FRACTION;
        for &(c, d) in samples {
            if c == 0.0 {
                continue;
            }
            let beta = if d >= lambda {
                1.0
            } else if d <= r_in {
                0.0
            } else {
                1.0 - crate::taylor::smoothstep((lambda - d) / (lambda - r_in))
            };
            if beta != 0.0 {
                acc.add(c * beta);
            }
        }
        rungs.push(LadderRung {
            j,
            lambda,
            value: acc.value(),
        });
    }
    summarize_ladder(rungs)
}

pub(crate) fn summarize_ladder(rungs: Vec<LadderRung>) -> ExtensionResult {
    let vals: Vec<f64> = rungs.iter().map(|r| r.value).collect();
    let deltas: Vec<f64> = vals.windows(2).map(|w| w[1] - w[0]).collect();
    let mut ratios = Vec::new();
    for w in deltas.windows(2) {
        if w[0].abs() > 0.0 {
            ratios.push(w[1].abs() / w[0].abs());
        } else {
            ratios.push(0.0);
        }
    }
    let scale = vals
        .last()
        .map(|v| v.abs())
        .unwrap_or(0.0)
        .max(1e-300);
    let tail_ratio = ratios.last().copied().unwrap_or(0.0);
    let last4: Vec<f64> = ratios.iter().rev().take(4).copied().collect();
    let late_deltas_negligible = deltas
        .iter()
        .rev()
        .take(3)
        .all(|d| d.abs() <= 1e-13 * scale);
    let converged =
        late_deltas_negligible || (last4.len() >= 4 && last4.iter().all(|&r| r < 0.9));
    // divergence: the tail deltas keep growing or stay flat at a
    // non-negligible size
    let diverged = !late_deltas_negligible
        && last4.len() >= 3
        && last4.iter().take(3).all(|&r| r >= 0.98)
        && deltas
            .last()
            .map(|d| d.abs() > 1e-10 * scale)
            .unwrap_or(false);
    // one-step Richardson assuming a geometric tail
    let richardson = if deltas.is_empty() {
        vals.last().copied().unwrap_or(0.0)
    } else {
        let f_last = *vals.last().unwrap();
        let d_last = *deltas.last().unwrap();
        let rho = if deltas.len() >= 2 && deltas[deltas.len() - 2].abs() > 0.0 {
            (d_last / deltas[deltas.len() - 2]).clamp(-0.9, 0.9)
        } else {
            0.0
        };
        if d_last.abs() <= 1e-13 * scale {
            f_last
        } else {
            f_last + d_last * rho / (1.0 - rho)
        }
    };
    ExtensionResult {
        value: richardson,
        ladder: rungs,
        deltas,
        ratios,
        converged,
        diverged,
        tail_ratio,
        richardson,
    }
}

// ---------------------------------------------------------------------------
// The extension operator
// ---------------------------------------------------------------------------

/// A renormalized (extended) distribution: the finite-part extension of a
/// regular density that is singular on the scheme's set.
pub struct Extended {
    density: SmoothFunction,
    set: ClosedSet,
    scheme: RenormScheme,
    ladder: LadderSpec,
    quad: QuadratureSpec,
}

/// Constructs the extension (renormalization) of a regular distribution
/// along the scheme's set.
///
/// The density must be locally integrable at positive distance from the
/// set; the scheme's set must match the distribution's declared singular
/// set.
pub fn extend(
    t: &RegularDist,
    scheme: &RenormScheme,
    ladder: LadderSpec,
) -> Result<Arc<Extended>> {
    let set = t
        .set
        .clone()
        .ok_or_else(|| Error::Domain("extension needs a declared singular set".into()))?;
    if &set != scheme.set() {
        return Err(Error::Domain(
            "scheme set does not match the distribution's singular set".into(),
        ));
    }
    if t.density.dim() != set.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: set.ambient_dim(),
            got: t.density.dim(),
        });
    }
    Ok(Arc::new(Extended {
        density: t.density.clone(),
        set,
        scheme: scheme.clone(),
        ladder,
        quad: t.quad.clone(),
    }))
}

impl Extended {
    pub fn scheme(&self) -> &RenormScheme {
        &self.scheme
    }

    pub fn set(&self) -> &ClosedSet {
        &self.set
    }

    pub fn ladder(&self) -> LadderSpec {
        self.ladder
    }

    pub fn density(&self) -> &SmoothFunction {
        &self.density
    }

    /// The extrapolated pairing; [`Error::Divergent`] when the λ ladder
    /// does not settle (the scheme order is below the divergence degree).
    pub fn pair(&self, phi: &SmoothFunction) -> Result<f64> {
        let r = self.pair_detailed(phi)?;
        if r.diverged {
            return Err(Error::Divergent(
                "λ ladder diverges; scheme order below the divergence degree".into(),
            ));
        }
        Ok(r.value)
    }

    /// The full ladder and diagnostics for a single pairing.
    pub fn pair_detailed(&self, phi: &SmoothFunction) -> Result<ExtensionResult> {
        let samples = self.samples(phi)?;
        Ok(run_ladder(&samples, &self.ladder))
    }

    /// Flattened `(coefficient, distance)` samples of
    /// `∫ f · (φ - P^m_D φ)` over the pairing mesh.
    fn samples(&self, phi: &SmoothFunction) -> Result<Vec<(f64, f64)>> {
        let phi_box = phi
            .support()
            .cloned()
            .ok_or_else(|| {
                Error::InvalidParameter(
                    "pairing requires a compactly supported test function".into(),
                )
            })?;
        // When the test support is at positive distance from the set, the
        // projection vanishes identically and the pairing runs on exactly
        // the mesh of the plain pairing (restriction agreement is then
        // bit-exact once λ drops below the distance).
        let set_dist_lb = match &self.set {
            ClosedSet::Point { p } => phi_box.distance_to_point(p),
            other => {
                let c = phi_box.center();
                (other.distance_unchecked(&c) - phi_box.half_diagonal()).max(0.0)
            }
        };
        let reg = RegularDist {
            density: self.density.clone(),
            set: Some(self.set.clone()),
            quad: self.quad.clone(),
        };
        if set_dist_lb > 0.0 || self.scheme.order().is_none() {
            let domain = phi_box;
            return crate::distribution::regular_samples(&reg, phi, &domain);
        }
        let psi = self.scheme.project_i(phi)?;
        let domain = match psi.support() {
            Some(b) => b.clone(),
            None => tube_box(&self.set, &phi_box, self.scheme.window_radii().1).hull(&phi_box),
        };
        crate::distribution::regular_samples(&reg, &psi, &domain)
    }

    /// The λ-indexed counterterm pairing `⟨c_λ, φ⟩ = ⟨f, β_λ P^m_D φ⟩`,
    /// supported on the set through the jet of `φ` there.
    pub fn counterterm_pair(&self, lambda: f64, phi: &SmoothFunction) -> Result<f64> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidParameter("lambda must lie in (0,1]".into()));
        }
        let p = self.scheme.project_d(phi)?;
        let p_box = match p.support() {
            Some(b) => b.clone(),
            None => {
                let phi_box = phi.support().ok_or_else(|| {
                    Error::InvalidParameter("test function must be compactly supported".into())
                })?;
                tube_box(&self.set, phi_box, self.scheme.window_radii().1)
            }
        };
        let reg = RegularDist {
            density: self.density.clone(),
            set: Some(self.set.clone()),
            quad: self.quad.clone(),
        };
        let samples = crate::distribution::regular_samples(&reg, &p, &p_box)?;
        let mut acc = CompensatedSum::new();
        let r_in = lambda * crate::cutoff::PLATEAU_FRACTION;
        for (c, d) in samples {
            let beta = if d >= lambda {
                1.0
            } else if d <= r_in {
                0.0
            } else {
                1.0 - crate::taylor::smoothstep((lambda - d) / (lambda - r_in))
            };
            acc.add(c * beta);
        }
        Ok(acc.value())
    }

    pub fn into_distribution(self: Arc<Self>) -> Distribution {
        Distribution::Extended(self)
    }
}

/// Default subtraction order for a pure power singularity:
/// `max(0, ceil(s) - codim + 1)` where `s` is the fitted growth exponent
/// of the density and `codim` the set's codimension.
pub fn default_subtraction_order(s_fit: f64, codim: usize) -> usize {
    let m = s_fit.ceil() as i64 - codim as i64 + 1;
    m.max(0) as usize
}

// ---------------------------------------------------------------------------
// Scheme ambiguity
// ---------------------------------------------------------------------------

/// Fits the point-supported difference of two extensions of the same
/// distribution under schemes sharing set and order.
///
/// Returns the fitted `Σ c_α ∂^α δ` plus the worst residual on the
/// held-out test functions; a residual above `tol` is an inconsistency
/// error.
pub fn scheme_difference(
    t: &RegularDist,
    scheme1: &RenormScheme,
    scheme2: &RenormScheme,
    ladder: LadderSpec,
    holdout: &[SmoothFunction],
    tol: f64,
) -> Result<(PointSupportedDist, f64)> {
    if scheme1.set() != scheme2.set() {
        return Err(Error::Domain("schemes must share their set".into()));
    }
    if scheme1.order() != scheme2.order() {
        return Err(Error::Domain("schemes must share their order".into()));
    }
    let location = match scheme1.set() {
        ClosedSet::Point { p } => p.clone(),
        _ => {
            return Err(Error::InvalidParameter(
                "scheme difference fitting is implemented for point sets".into(),
            ))
        }
    };
    let m = scheme1.order().unwrap_or(0);
    let ext1 = extend(t, scheme1, ladder)?;
    let ext2 = extend(t, scheme2, ladder)?;
    let dim = location.len();
    // probe radius comfortably covering both windows
    let r_out = scheme1.window_radii().1.max(scheme2.window_radii().1);
    let localizer = SmoothFunction::window(scheme1.set(), 1.2 * r_out, 2.4 * r_out)?;
    let loc_box = BoxRegion::ball(&location, 2.4 * r_out);
    let localizer = SmoothFunction::from_arc(dim, localizer.expr().clone(), Some(loc_box));
    let table = multi::table(dim, m);
    let mut coeffs = Vec::new();
    for k in &table.indices {
        // probe (x - x0)^k * localizer has ∂^α probe(x0) = α! δ_{αk}
        let mut probe = localizer.clone();
        for axis in 0..dim {
            for _ in 0..k.get(axis) {
                let lin = SmoothFunction::polynomial(
                    dim,
                    vec![
                        (unit_exp(dim, axis), 1.0),
                        (vec![0; dim], -location[axis]),
                    ],
                );
                probe = probe.product(&lin)?;
            }
        }
        let diff = ext1.pair(&probe)? - ext2.pair(&probe)?;
        let sign = if k.degree() % 2 == 0 { 1.0 } else { -1.0 };
        let c = sign * diff / k.factorial();
        coeffs.push((k.to_vec(), c));
    }
    let fitted = PointSupportedDist {
        location: location.clone(),
        coeffs,
    };
    // residual on held-out test functions
    let mut worst: f64 = 0.0;
    let point_dist = Distribution::PointSupported(fitted.clone());
    for phi in holdout {
        let diff = ext1.pair(phi)? - ext2.pair(phi)?;
        let model = crate::distribution::pair(&point_dist, phi)?;
        worst = worst.max((diff - model).abs());
    }
    if worst > tol {
        return Err(Error::Inconsistent(format!(
            "scheme-difference residual {worst:.3e} above tolerance {tol:.3e}"
        )));
    }
    Ok((fitted, worst))
}

fn unit_exp(dim: usize, axis: usize) -> Vec<usize> {
    let mut v = vec![0; dim];
    v[axis] = 1;
    v
}
