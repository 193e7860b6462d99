//! Smooth test functions with exact high-order jet evaluation, Taylor
//! fields, and grid seminorm estimation.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::{self, Expr, Poly, Profile};
use crate::geometry::ClosedSet;
use crate::multi::{self, MultiIndex, MAX_JET_ORDER};
use crate::region::BoxRegion;
use crate::taylor::TaylorPoly;

/// The jet of a function at a point: all partial derivatives `∂^k f(x)`
/// with `|k| <= order`.
#[derive(Clone, Debug)]
pub struct Jet {
    dim: usize,
    order: usize,
    /// derivative values in the graded table order
    derivs: Vec<f64>,
}

impl Jet {
    pub(crate) fn from_taylor(tp: &TaylorPoly) -> Jet {
        let table = tp.table();
        let derivs = table
            .indices
            .iter()
            .zip(&tp.coeffs)
            .map(|(k, c)| c * k.factorial())
            .collect();
        Jet {
            dim: tp.dim(),
            order: tp.order(),
            derivs,
        }
    }

    pub fn zero(dim: usize, order: usize) -> Jet {
        let n = multi::table(dim, order).len();
        Jet {
            dim,
            order,
            derivs: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn value(&self) -> f64 {
        self.derivs[0]
    }

    /// Derivative `∂^k f`; the multi-index must satisfy `|k| <= order`.
    pub fn derivative(&self, k: &[usize]) -> f64 {
        let m = MultiIndex::from_slice(k);
        let table = multi::table(self.dim, self.order);
        match table.rank_of(&m) {
            Some(r) => self.derivs[r],
            None => panic!("multi-index outside the jet order"),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        let table = multi::table(self.dim, self.order);
        table
            .indices
            .clone()
            .into_iter()
            .zip(self.derivs.clone())
            .map(|(k, v)| (k.to_vec(), v))
    }

    pub fn raw(&self) -> &[f64] {
        &self.derivs
    }

    /// Truncation to a lower order: the order-(m) prefix of the table.
    pub fn truncate(&self, order: usize) -> Jet {
        assert!(order <= self.order);
        let table = multi::table(self.dim, self.order);
        let keep = table.degree_offsets[order + 1];
        Jet {
            dim: self.dim,
            order,
            derivs: self.derivs[..keep].to_vec(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.derivs.iter().fold(0.0, |a, &b| a.max(b.abs()))
    }
}

/// A smooth scalar function on `R^dim` backed by a closed-form expression
/// tree, jet-evaluable to order [`MAX_JET_ORDER`]. Immutable and safe to
/// share across threads.
#[derive(Clone)]
pub struct SmoothFunction {
    dim: usize,
    expr: Arc<Expr>,
    support: Option<BoxRegion>,
}

impl SmoothFunction {
    pub(crate) fn from_expr(dim: usize, expr: Expr, support: Option<BoxRegion>) -> Self {
        SmoothFunction {
            dim,
            expr: Arc::new(expr),
            support,
        }
    }

    pub(crate) fn from_arc(dim: usize, expr: Arc<Expr>, support: Option<BoxRegion>) -> Self {
        SmoothFunction { dim, expr, support }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> Option<&BoxRegion> {
        self.support.as_ref()
    }

    pub(crate) fn expr(&self) -> &Arc<Expr> {
        &self.expr
    }

    /// Constant function.
    pub fn constant(dim: usize, c: f64) -> Self {
        Self::from_expr(dim, Expr::Const(c), None)
    }

    /// The coordinate function `x_axis`.
    pub fn coordinate(dim: usize, axis: usize) -> Self {
        Self::from_expr(dim, Expr::coordinate(dim, axis), None)
    }

    /// Sparse polynomial from `(exponents, coefficient)` terms.
    pub fn polynomial(dim: usize, terms: Vec<(Vec<usize>, f64)>) -> Self {
        Self::from_expr(dim, Expr::Poly(Poly::from_terms(dim, terms)), None)
    }

    /// `sin(x_0)` in one variable (handy for seminorm checks).
    pub fn sin_1d() -> Self {
        Self::from_expr(
            1,
            Expr::Profile(Profile::Sin, Box::new(Expr::coordinate(1, 0))),
            None,
        )
    }

    /// `cos(x_0)` in one variable.
    pub fn cos_1d() -> Self {
        Self::from_expr(
            1,
            Expr::Profile(Profile::Cos, Box::new(Expr::coordinate(1, 0))),
            None,
        )
    }

    /// The standard bump: `exp(-1/(1 - u^2))` with `u = |x - c|/r`, zero
    /// for `u >= 1`. Compactly supported in the ball of radius `r`, smooth
    /// everywhere.
    pub fn bump(center: &[f64], radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidParameter("bump radius must be positive".into()));
        }
        let dim = center.len();
        // w = |x - c|^2 / r^2 as a polynomial, then the BumpSq profile
        let mut q = Poly::zero(dim);
        for (i, &ci) in center.iter().enumerate() {
            let l = Poly::linear(dim, i, 1.0, -ci);
            q = q.add(&l.mul_poly(&l));
        }
        let q = q.scale(1.0 / (radius * radius));
        let e = Expr::Profile(Profile::BumpSq, Box::new(Expr::Poly(q)));
        let support = BoxRegion::ball(center, radius);
        Ok(Self::from_expr(dim, e, Some(support)))
    }

    /// A bump multiplied by a polynomial prefactor.
    pub fn bump_with_prefactor(
        center: &[f64],
        radius: f64,
        prefactor_terms: Vec<(Vec<usize>, f64)>,
    ) -> Result<Self> {
        let b = Self::bump(center, radius)?;
        let p = Poly::from_terms(center.len(), prefactor_terms);
        let e = Expr::Prod(vec![Expr::Poly(p), b.expr.as_ref().clone()]);
        Ok(Self::from_expr(center.len(), e, b.support.clone()))
    }

    /// Product of per-particle bumps on a configuration space `(R^d)^n`.
    pub fn bump_product(centers: &[Vec<f64>], radius: f64) -> Result<Self> {
        let n = centers.len();
        if n == 0 {
            return Err(Error::InvalidParameter("no bump centers".into()));
        }
        let d = centers[0].len();
        let dim = n * d;
        let full_center: Vec<f64> = centers.iter().flatten().copied().collect();
        let mut factors = Vec::with_capacity(n);
        for (i, c) in centers.iter().enumerate() {
            let mut q = Poly::zero(dim);
            for (k, &ck) in c.iter().enumerate() {
                let l = Poly::linear(dim, i * d + k, 1.0, -ck);
                q = q.add(&l.mul_poly(&l));
            }
            let q = q.scale(1.0 / (radius * radius));
            factors.push(Expr::Profile(Profile::BumpSq, Box::new(Expr::Poly(q))));
        }
        let support = BoxRegion::ball(&full_center, radius);
        // per-block ball: the product vanishes unless every block is within
        // radius of its center, so the box hull per-coordinate is exact
        Ok(Self::from_expr(dim, Expr::Prod(factors), Some(support)))
    }

    /// Window that is exactly 1 where `d(x, set) <= r_in` and exactly 0
    /// where `d(x, set) >= r_out`.
    pub fn window(set: &ClosedSet, r_in: f64, r_out: f64) -> Result<Self> {
        if !(0.0 < r_in && r_in < r_out) {
            return Err(Error::InvalidParameter(
                "window radii must satisfy 0 < r_in < r_out".into(),
            ));
        }
        let dim = set.ambient_dim();
        let e = Expr::Plateau(expr::PlateauSpec {
            set: set.clone(),
            r_in,
            r_out,
        });
        Ok(Self::from_expr(dim, e, None))
    }

    /// `d(x, set)^a` as a smooth function off the set (for example the
    /// densities `|x|^{-1}` or `|x|^{-3/2}` off the origin).
    pub fn power_of_distance(set: &ClosedSet, exponent: f64) -> Result<Self> {
        let dim = set.ambient_dim();
        match set {
            ClosedSet::BigDiagonal { .. } => Err(Error::InvalidParameter(
                "power of big-diagonal distance is only piecewise smooth".into(),
            )),
            _ => {
                let q = set.sq_dist_poly_near(&vec![0.0; dim])?;
                let e = Expr::Profile(Profile::PowF(exponent / 2.0), Box::new(Expr::Poly(q)));
                Ok(Self::from_expr(dim, e, None))
            }
        }
    }

    /// `ln d(x, set)` off the set.
    pub fn log_distance(set: &ClosedSet) -> Result<Self> {
        let dim = set.ambient_dim();
        let q = set.sq_dist_poly_near(&vec![0.0; dim])?;
        let half_log = Expr::AffineOf(
            0.0,
            0.5,
            Box::new(Expr::Profile(Profile::Ln, Box::new(Expr::Poly(q)))),
        );
        Ok(Self::from_expr(dim, half_log, None))
    }

    /// Pointwise product.
    pub fn product(&self, other: &SmoothFunction) -> Result<SmoothFunction> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let support = match (&self.support, &other.support) {
            (Some(a), Some(b)) => match a.intersect(b) {
                Some(i) => Some(i),
                None => Some(BoxRegion::new(a.lo.clone(), a.lo.clone()).unwrap()),
            },
            (Some(a), None) => Some(a.clone()),
            (None, Some(b)) => Some(b.clone()),
            (None, None) => None,
        };
        Ok(SmoothFunction::from_expr(
            self.dim,
            Expr::Prod(vec![self.expr.as_ref().clone(), other.expr.as_ref().clone()]),
            support,
        ))
    }

    /// Pointwise sum.
    pub fn sum(&self, other: &SmoothFunction) -> Result<SmoothFunction> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let support = match (&self.support, &other.support) {
            (Some(a), Some(b)) => Some(a.hull(b)),
            _ => None,
        };
        Ok(SmoothFunction::from_expr(
            self.dim,
            Expr::Sum(vec![self.expr.as_ref().clone(), other.expr.as_ref().clone()]),
            support,
        ))
    }

    pub fn scale(&self, s: f64) -> SmoothFunction {
        SmoothFunction::from_expr(
            self.dim,
            Expr::AffineOf(0.0, s, Box::new(self.expr.as_ref().clone())),
            self.support.clone(),
        )
    }

    /// `(-Δ + m²) f`, computed from the jets of `f`.
    pub fn apply_helmholtz(&self, mass_sq: f64) -> SmoothFunction {
        SmoothFunction::from_expr(
            self.dim,
            Expr::Helmholtz(Box::new(expr::HelmholtzSpec {
                target: self.expr.clone(),
                target_dim: self.dim,
                mass_sq,
            })),
            self.support.clone(),
        )
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        if let Some(s) = &self.support {
            if !s.contains(x) {
                return Ok(0.0);
            }
        }
        expr::eval_value(&self.expr, x)
    }

    /// The jet of order `m` at `x` by forward Taylor evaluation of the
    /// expression tree. Outside the declared support the jet is exactly
    /// zero.
    pub fn jet(&self, x: &[f64], m: usize) -> Result<Jet> {
        self.check_point(x)?;
        if m > MAX_JET_ORDER {
            return Err(Error::JetOrderUnsupported {
                requested: m,
                max: MAX_JET_ORDER,
            });
        }
        if let Some(s) = &self.support {
            if !s.contains(x) {
                return Ok(Jet::zero(self.dim, m));
            }
        }
        let tp = expr::eval_jet(&self.expr, x, m)?;
        Ok(Jet::from_taylor(&tp))
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite evaluation point".into()));
        }
        Ok(())
    }
}

/// Evaluates all partial derivatives `∂^k f(x)`, `|k| <= m`.
pub fn jet_eval(f: &SmoothFunction, x: &[f64], m: usize) -> Result<Jet> {
    f.jet(x, m)
}

/// The Taylor polynomial `T^m_a F(x) = Σ_{|k|<=m} (x-a)^k/k! · f^k(a)` of a
/// jet, as a smooth function with exact polynomial jets.
pub fn taylor_field(jet: &Jet, a: &[f64], m: usize) -> Result<SmoothFunction> {
    if m > jet.order() {
        return Err(Error::Precondition(format!(
            "jet of order {} cannot produce a Taylor field of order {m}",
            jet.order()
        )));
    }
    if a.len() != jet.dim() {
        return Err(Error::DimensionMismatch {
            expected: jet.dim(),
            got: a.len(),
        });
    }
    let dim = jet.dim();
    let table = multi::table(dim, m);
    let mut poly = Poly::zero(dim);
    for k in &table.indices {
        let f_k = {
            let t_full = multi::table(dim, jet.order());
            jet.raw()[t_full.rank_of(k).unwrap()]
        };
        if f_k == 0.0 {
            continue;
        }
        // (x - a)^k / k! expanded into the monomial basis
        let mut term = Poly::constant(dim, f_k / k.factorial());
        for axis in 0..dim {
            for _ in 0..k.get(axis) {
                term = term.mul_poly(&Poly::linear(dim, axis, 1.0, -a[axis]));
            }
        }
        poly = poly.add(&term);
    }
    Ok(SmoothFunction::from_expr(dim, Expr::Poly(poly), None))
}

/// Grid specification for seminorm estimation.
#[derive(Clone, Debug)]
pub struct SeminormSpec {
    pub order: usize,
    pub region: BoxRegion,
    /// grid points per axis (including both endpoints)
    pub resolution: usize,
}

impl SeminormSpec {
    pub fn new(order: usize, region: BoxRegion, resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidParameter(
                "seminorm grid needs at least 2 points per axis".into(),
            ));
        }
        Ok(SeminormSpec {
            order,
            region,
            resolution,
        })
    }
}

/// Grid estimate of `‖f‖^k_K = sup_{x ∈ K, |ν| <= k} |∂^ν f(x)|`.
///
/// This is a lower bound of the true sup that converges under grid
/// refinement.
pub fn seminorm(f: &SmoothFunction, spec: &SeminormSpec) -> Result<f64> {
    if spec.region.dim() != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            got: spec.region.dim(),
        });
    }
    if let Some(s) = f.support() {
        if s.intersect(&spec.region).is_none() {
            return Err(Error::Domain(
                "seminorm region does not meet the function's support".into(),
            ));
        }
    }
    let dim = f.dim();
    let res = spec.resolution;
    let mut best: f64 = 0.0;
    let mut idx = vec![0usize; dim];
    loop {
        let x: Vec<f64> = (0..dim)
            .map(|axis| {
                let t = idx[axis] as f64 / (res - 1) as f64;
                spec.region.lo[axis] + t * (spec.region.hi[axis] - spec.region.lo[axis])
            })
            .collect();
        let jet = f.jet(&x, spec.order)?;
        best = best.max(jet.max_abs());
        // odometer
        let mut axis = dim;
        loop {
            if axis == 0 {
                return Ok(best);
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < res {
                break;
            }
            idx[axis] = 0;
        }
    }
}
