//! Closed-form expression trees with exact forward-Taylor (jet) evaluation.
//!
//! All smooth functions in the toolkit are built from this representation:
//! sparse polynomials, sums, products, quotients, compositions with a fixed
//! family of univariate profiles, plateau cutoffs of set distances,
//! transverse Taylor projections, and partial integrals. Evaluation with
//! jet-valued seeds propagates derivatives exactly; nothing is ever
//! differenced numerically.

use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::geometry::ClosedSet;
use crate::multi::{self, MultiIndex};
use crate::region::BoxRegion;
use crate::taylor::{self, TaylorPoly};

// ---------------------------------------------------------------------------
// Sparse multivariate polynomials
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct Poly {
    dim: usize,
    terms: Vec<(MultiIndex, f64)>,
}

impl Poly {
    pub fn zero(dim: usize) -> Self {
        Poly { dim, terms: vec![] }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        let mut p = Poly::zero(dim);
        if c != 0.0 {
            p.terms.push((MultiIndex::zero(dim), c));
        }
        p
    }

    /// `a * x_axis + b`.
    pub fn linear(dim: usize, axis: usize, a: f64, b: f64) -> Self {
        let mut p = Poly::constant(dim, b);
        if a != 0.0 {
            p.terms.push((MultiIndex::unit(dim, axis), a));
        }
        p
    }

    pub fn coordinate(dim: usize, axis: usize) -> Self {
        Poly::linear(dim, axis, 1.0, 0.0)
    }

    pub fn from_terms(dim: usize, terms: Vec<(Vec<usize>, f64)>) -> Self {
        let mut p = Poly::zero(dim);
        for (k, c) in terms {
            assert_eq!(k.len(), dim);
            p.terms.push((MultiIndex::from_slice(&k), c));
        }
        p.normalize();
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[(MultiIndex, f64)] {
        &self.terms
    }

    pub fn degree(&self) -> usize {
        self.terms.iter().map(|(k, _)| k.degree()).max().unwrap_or(0)
    }

    fn normalize(&mut self) {
        use std::collections::HashMap;
        let mut map: HashMap<MultiIndex, f64> = HashMap::new();
        for (k, c) in self.terms.drain(..) {
            *map.entry(k).or_insert(0.0) += c;
        }
        let mut terms: Vec<(MultiIndex, f64)> =
            map.into_iter().filter(|(_, c)| *c != 0.0).collect();
        terms.sort_by_key(|(k, _)| (k.degree(), k.to_vec()));
        self.terms = terms;
    }

    pub fn add(&self, other: &Poly) -> Poly {
        debug_assert_eq!(self.dim, other.dim);
        let mut p = self.clone();
        p.terms.extend(other.terms.iter().cloned());
        p.normalize();
        p
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Poly {
        let mut p = self.clone();
        for (_, c) in p.terms.iter_mut() {
            *c *= s;
        }
        p.normalize();
        p
    }

    pub fn mul_poly(&self, other: &Poly) -> Poly {
        debug_assert_eq!(self.dim, other.dim);
        let mut p = Poly::zero(self.dim);
        for (ka, ca) in &self.terms {
            for (kb, cb) in &other.terms {
                p.terms.push((ka.add(kb), ca * cb));
            }
        }
        p.normalize();
        p
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (k, c) in &self.terms {
            let mut t = *c;
            for axis in 0..self.dim {
                let e = k.get(axis);
                if e > 0 {
                    t *= x[axis].powi(e as i32);
                }
            }
            acc += t;
        }
        acc
    }

    pub fn eval_taylor(&self, seeds: &[TaylorPoly]) -> TaylorPoly {
        let jd = seeds[0].dim();
        let jo = seeds[0].order();
        // per-axis powers up to the maximal exponent appearing
        let mut max_exp = vec![0usize; self.dim];
        for (k, _) in &self.terms {
            for axis in 0..self.dim {
                max_exp[axis] = max_exp[axis].max(k.get(axis));
            }
        }
        let mut powers: Vec<Vec<TaylorPoly>> = Vec::with_capacity(self.dim);
        for axis in 0..self.dim {
            let mut v = Vec::with_capacity(max_exp[axis] + 1);
            v.push(TaylorPoly::constant(jd, jo, 1.0));
            for e in 1..=max_exp[axis] {
                let prev = v[e - 1].mul(&seeds[axis]);
                v.push(prev);
            }
            powers.push(v);
        }
        let mut acc = TaylorPoly::zero(jd, jo);
        for (k, c) in &self.terms {
            let mut t = TaylorPoly::constant(jd, jo, *c);
            for axis in 0..self.dim {
                let e = k.get(axis);
                if e > 0 {
                    t = t.mul(&powers[axis][e]);
                }
            }
            acc = acc.add(&t);
        }
        acc
    }

    /// Which ambient axes the polynomial actually depends on.
    pub fn active_axes(&self) -> Vec<bool> {
        let mut act = vec![false; self.dim];
        for (k, _) in &self.terms {
            for axis in 0..self.dim {
                if k.get(axis) > 0 {
                    act[axis] = true;
                }
            }
        }
        act
    }
}

// ---------------------------------------------------------------------------
// Univariate smooth profiles
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Profile {
    Exp,
    Ln,
    Sqrt,
    Recip,
    PowF(f64),
    PowI(i32),
    Sin,
    Cos,
    /// `w ↦ exp(-1/(1-w))` for `w < 1`, zero for `w >= 1`
    /// (the bump profile in the squared radial variable).
    BumpSq,
    /// Smoothstep built from the bump integral: 0 below 0, 1 above 1.
    SmoothStep,
}

impl Profile {
    fn series(&self, u0: f64, order: usize) -> Result<Vec<f64>> {
        match self {
            Profile::Exp => Ok(taylor::series_exp(u0, order)),
            Profile::Sin => Ok(taylor::series_sin(u0, order)),
            Profile::Cos => Ok(taylor::series_cos(u0, order)),
            Profile::Ln => {
                if u0 <= 0.0 {
                    return Err(Error::SingularLocus(format!("ln at u = {u0}")));
                }
                Ok(taylor::series_ln(u0, order))
            }
            Profile::Sqrt => {
                if u0 <= 0.0 {
                    return Err(Error::SingularLocus(format!("sqrt jet at u = {u0}")));
                }
                Ok(taylor::series_sqrt(u0, order))
            }
            Profile::Recip => {
                if u0 == 0.0 {
                    return Err(Error::SingularLocus("reciprocal at 0".into()));
                }
                Ok(taylor::series_recip(u0, order))
            }
            Profile::PowF(a) => {
                if u0 <= 0.0 {
                    return Err(Error::SingularLocus(format!("u^{a} jet at u = {u0}")));
                }
                Ok(taylor::series_powf(u0, *a, order))
            }
            Profile::PowI(_) => unreachable!("integer powers handled structurally"),
            Profile::BumpSq => Ok(taylor::series_bump_sq(u0, order)),
            Profile::SmoothStep => Ok(taylor::series_smoothstep(u0, order)),
        }
    }

    fn value(&self, u: f64) -> Result<f64> {
        match self {
            Profile::Exp => Ok(u.exp()),
            Profile::Sin => Ok(u.sin()),
            Profile::Cos => Ok(u.cos()),
            Profile::Ln => {
                if u <= 0.0 {
                    return Err(Error::SingularLocus(format!("ln at u = {u}")));
                }
                Ok(u.ln())
            }
            Profile::Sqrt => {
                if u < 0.0 {
                    return Err(Error::SingularLocus(format!("sqrt at u = {u}")));
                }
                Ok(u.sqrt())
            }
            Profile::Recip => {
                if u == 0.0 {
                    return Err(Error::SingularLocus("reciprocal at 0".into()));
                }
                Ok(1.0 / u)
            }
            Profile::PowF(a) => {
                if u < 0.0 || (u == 0.0 && *a < 0.0) {
                    return Err(Error::SingularLocus(format!("u^{a} at u = {u}")));
                }
                Ok(u.powf(*a))
            }
            Profile::PowI(n) => {
                if u == 0.0 && *n < 0 {
                    return Err(Error::SingularLocus("negative power at 0".into()));
                }
                Ok(u.powi(*n))
            }
            Profile::BumpSq => {
                if u >= 1.0 {
                    Ok(0.0)
                } else {
                    Ok((-1.0 / (1.0 - u)).exp())
                }
            }
            Profile::SmoothStep => Ok(taylor::smoothstep(u)),
        }
    }
}

// ---------------------------------------------------------------------------
// Expression trees
// ---------------------------------------------------------------------------

/// A plateau of the set distance: 1 where `d(x, set) <= r_in`, 0 where
/// `d(x, set) >= r_out`, smoothstep interpolation between. With
/// `r_in = λ/8`, `r_out = λ` this is exactly the scaled cutoff `χ_λ`.
#[derive(Clone, Debug)]
pub struct PlateauSpec {
    pub set: ClosedSet,
    pub r_in: f64,
    pub r_out: f64,
}

impl PlateauSpec {
    pub fn value(&self, d: f64) -> f64 {
        if d <= self.r_in {
            1.0
        } else if d >= self.r_out {
            0.0
        } else {
            taylor::smoothstep((self.r_out - d) / (self.r_out - self.r_in))
        }
    }
}

/// Transverse Taylor projection `P^m_D φ`: the order-`m` Taylor polynomial
/// of the target about its orthogonal projection onto the set, multiplied
/// by a window.
#[derive(Clone)]
pub struct TransverseTaylorSpec {
    pub target: Arc<Expr>,
    pub target_dim: usize,
    pub set: ClosedSet,
    pub order: usize,
    pub window: Arc<Expr>,
}

/// `(-Δ + m²) f` computed from the jet of `f`.
#[derive(Clone)]
pub struct HelmholtzSpec {
    pub target: Arc<Expr>,
    pub target_dim: usize,
    pub mass_sq: f64,
}

/// Partial integral over a block of variables:
/// `u ↦ ∫_{v ∈ v_box} target(A u + B v + c) dv`, by a fixed tensor
/// Gauss-Legendre rule. Jets in `u` pass under the integral sign.
#[derive(Clone)]
pub struct IntegralSliceSpec {
    pub target: Arc<Expr>,
    pub map: AffineMap,
    pub v_box: BoxRegion,
    pub v_order: usize,
    kind: OnceLock<SliceKind>,
    /// cached value of the v-only factor integral (separable case)
    v_integral: OnceLock<Result<f64>>,
    /// cached tensor rule over the v box
    nodes: OnceLock<Arc<Vec<(Vec<f64>, f64)>>>,
}

#[derive(Clone, Debug)]
enum SliceKind {
    /// Every top-level factor depends on u only or v only:
    /// slice = (∫ v-part) * u-part.
    Separable,
    General,
}

/// Affine map `x = A u + B v + c` from split variables into the target's
/// ambient space.
#[derive(Clone, Debug)]
pub struct AffineMap {
    pub n_out: usize,
    pub n_u: usize,
    pub n_v: usize,
    /// row-major `n_out × n_u`
    pub a: Vec<f64>,
    /// row-major `n_out × n_v`
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl AffineMap {
    pub fn apply(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = self.c.clone();
        for r in 0..self.n_out {
            for (k, &uk) in u.iter().enumerate() {
                out[r] += self.a[r * self.n_u + k] * uk;
            }
            for (k, &vk) in v.iter().enumerate() {
                out[r] += self.b[r * self.n_v + k] * vk;
            }
        }
        out
    }

    fn row_u_active(&self, r: usize) -> bool {
        (0..self.n_u).any(|k| self.a[r * self.n_u + k] != 0.0)
    }

    fn row_v_active(&self, r: usize) -> bool {
        (0..self.n_v).any(|k| self.b[r * self.n_v + k] != 0.0)
    }
}

#[derive(Clone)]
pub enum Expr {
    Const(f64),
    Poly(Poly),
    Sum(Vec<Expr>),
    Prod(Vec<Expr>),
    /// `a + b * inner`
    AffineOf(f64, f64, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Profile(Profile, Box<Expr>),
    Plateau(PlateauSpec),
    TransverseTaylor(Box<TransverseTaylorSpec>),
    Helmholtz(Box<HelmholtzSpec>),
    IntegralSlice(Box<IntegralSliceSpec>),
}

impl Expr {
    pub fn coordinate(dim: usize, axis: usize) -> Expr {
        Expr::Poly(Poly::coordinate(dim, axis))
    }

    pub fn scaled(self, s: f64) -> Expr {
        Expr::AffineOf(0.0, s, Box::new(self))
    }

    pub fn shifted(self, c: f64) -> Expr {
        Expr::AffineOf(c, 1.0, Box::new(self))
    }

    pub fn one_minus(self) -> Expr {
        Expr::AffineOf(1.0, -1.0, Box::new(self))
    }

    pub fn integral_slice(
        target: Arc<Expr>,
        map: AffineMap,
        v_box: BoxRegion,
        v_order: usize,
    ) -> Expr {
        Expr::IntegralSlice(Box::new(IntegralSliceSpec {
            target,
            map,
            v_box,
            v_order,
            kind: OnceLock::new(),
            v_integral: OnceLock::new(),
            nodes: OnceLock::new(),
        }))
    }

    /// Ambient axes this expression depends on (conservative).
    pub fn active_axes(&self, dim: usize) -> Vec<bool> {
        match self {
            Expr::Const(_) => vec![false; dim],
            Expr::Poly(p) => p.active_axes(),
            Expr::Sum(v) | Expr::Prod(v) => {
                let mut act = vec![false; dim];
                for e in v {
                    for (a, b) in act.iter_mut().zip(e.active_axes(dim)) {
                        *a |= b;
                    }
                }
                act
            }
            Expr::AffineOf(_, _, e) | Expr::Profile(_, e) => e.active_axes(dim),
            Expr::Div(a, b) => {
                let mut act = a.active_axes(dim);
                for (x, y) in act.iter_mut().zip(b.active_axes(dim)) {
                    *x |= y;
                }
                act
            }
            // set-distance and projection nodes read every coordinate
            Expr::Plateau(_)
            | Expr::TransverseTaylor(_)
            | Expr::Helmholtz(_)
            | Expr::IntegralSlice(_) => vec![true; dim],
        }
    }
}

// ---------------------------------------------------------------------------
// Value evaluation (fast scalar path)
// ---------------------------------------------------------------------------

pub fn eval_value(e: &Expr, x: &[f64]) -> Result<f64> {
    match e {
        Expr::Const(c) => Ok(*c),
        Expr::Poly(p) => Ok(p.eval(x)),
        Expr::Sum(v) => {
            let mut acc = 0.0;
            for t in v {
                acc += eval_value(t, x)?;
            }
            Ok(acc)
        }
        Expr::Prod(v) => {
            let mut acc = 1.0;
            for t in v {
                acc *= eval_value(t, x)?;
                if acc == 0.0 {
                    // products of bump factors vanish early
                    return Ok(0.0);
                }
            }
            Ok(acc)
        }
        Expr::AffineOf(a, b, inner) => Ok(a + b * eval_value(inner, x)?),
        Expr::Div(num, den) => {
            let d = eval_value(den, x)?;
            if d == 0.0 {
                return Err(Error::SingularLocus("division by zero".into()));
            }
            Ok(eval_value(num, x)? / d)
        }
        Expr::Profile(p, inner) => p.value(eval_value(inner, x)?),
        Expr::Plateau(spec) => {
            let d = spec.set.distance(x)?;
            Ok(spec.value(d))
        }
        Expr::TransverseTaylor(spec) => transverse_taylor_value(spec, x),
        Expr::Helmholtz(spec) => {
            let jet = eval_jet(&spec.target, x, 2)?;
            let mut acc = spec.mass_sq * jet.value();
            let dim = spec.target_dim;
            for axis in 0..dim {
                let unit = MultiIndex::unit(dim, axis);
                let second = unit.add(&unit);
                acc -= jet.derivative(&second);
            }
            Ok(acc)
        }
        Expr::IntegralSlice(spec) => slice_value(spec, x),
    }
}

fn transverse_taylor_value(spec: &TransverseTaylorSpec, x: &[f64]) -> Result<f64> {
    let w = eval_value(&spec.window, x)?;
    if w == 0.0 {
        return Ok(0.0);
    }
    let a = spec.set.project(x)?;
    let jet = eval_jet(&spec.target, &a, spec.order)?;
    let table = multi::table(spec.target_dim, spec.order);
    let mut acc = 0.0;
    for k in &table.indices {
        let c = jet.coeff(k); // derivative / k!
        if c == 0.0 {
            continue;
        }
        let mut mono = 1.0;
        for axis in 0..spec.target_dim {
            let e = k.get(axis);
            if e > 0 {
                mono *= (x[axis] - a[axis]).powi(e as i32);
            }
        }
        acc += c * mono;
    }
    Ok(acc * w)
}

/// Plain jet at a point: evaluate with identity seeds.
pub fn eval_jet(e: &Expr, x: &[f64], order: usize) -> Result<TaylorPoly> {
    let dim = x.len();
    let seeds: Vec<TaylorPoly> = (0..dim)
        .map(|axis| TaylorPoly::variable(dim, order, axis, x[axis]))
        .collect();
    eval_taylor(e, &seeds)
}

// ---------------------------------------------------------------------------
// Taylor (jet) evaluation with arbitrary seeds
// ---------------------------------------------------------------------------

pub fn eval_taylor(e: &Expr, seeds: &[TaylorPoly]) -> Result<TaylorPoly> {
    let jd = seeds[0].dim();
    let jo = seeds[0].order();
    match e {
        Expr::Const(c) => Ok(TaylorPoly::constant(jd, jo, *c)),
        Expr::Poly(p) => Ok(p.eval_taylor(seeds)),
        Expr::Sum(v) => {
            let mut acc = TaylorPoly::zero(jd, jo);
            for t in v {
                acc = acc.add(&eval_taylor(t, seeds)?);
            }
            Ok(acc)
        }
        Expr::Prod(v) => {
            let mut acc = TaylorPoly::constant(jd, jo, 1.0);
            for t in v {
                acc = acc.mul(&eval_taylor(t, seeds)?);
            }
            Ok(acc)
        }
        Expr::AffineOf(a, b, inner) => Ok(eval_taylor(inner, seeds)?.scale(*b).add_scalar(*a)),
        Expr::Div(num, den) => {
            let d = eval_taylor(den, seeds)?;
            if d.value() == 0.0 {
                return Err(Error::SingularLocus("division by zero".into()));
            }
            let n = eval_taylor(num, seeds)?;
            let r = d.compose_univariate(&taylor::series_recip(d.value(), jo));
            Ok(n.mul(&r))
        }
        Expr::Profile(p, inner) => {
            let u = eval_taylor(inner, seeds)?;
            match p {
                Profile::PowI(n) => {
                    if *n >= 0 {
                        Ok(u.powi(*n as usize))
                    } else {
                        if u.value() == 0.0 {
                            return Err(Error::SingularLocus("negative power at 0".into()));
                        }
                        let r = u.compose_univariate(&taylor::series_recip(u.value(), jo));
                        Ok(r.powi((-n) as usize))
                    }
                }
                _ => {
                    let series = p.series(u.value(), jo)?;
                    Ok(u.compose_univariate(&series))
                }
            }
        }
        Expr::Plateau(spec) => plateau_taylor(spec, seeds),
        Expr::TransverseTaylor(spec) => transverse_taylor_taylor(spec, seeds),
        Expr::Helmholtz(spec) => helmholtz_taylor(spec, seeds),
        Expr::IntegralSlice(spec) => slice_taylor(spec, seeds),
    }
}

fn plateau_taylor(spec: &PlateauSpec, seeds: &[TaylorPoly]) -> Result<TaylorPoly> {
    let jd = seeds[0].dim();
    let jo = seeds[0].order();
    let x0: Vec<f64> = seeds.iter().map(|s| s.value()).collect();
    let d0 = spec.set.distance(&x0)?;
    if d0 <= spec.r_in {
        // the plateau and its closure: all derivatives of the profile vanish
        return Ok(TaylorPoly::constant(jd, jo, 1.0));
    }
    if d0 >= spec.r_out {
        return Ok(TaylorPoly::constant(jd, jo, 0.0));
    }
    let q = spec.set.sq_dist_poly_near(&x0)?;
    let qj = q.eval_taylor(seeds);
    let d = qj.compose_univariate(&taylor::series_sqrt(qj.value(), jo));
    // v = (r_out - d) / (r_out - r_in)
    let denom = spec.r_out - spec.r_in;
    let v = d.scale(-1.0 / denom).add_scalar(spec.r_out / denom);
    Ok(v.compose_univariate(&taylor::series_smoothstep(v.value(), jo)))
}

/// Local Taylor model of `target` around the point `a`, as coefficients on
/// the (target_dim, order) table.
struct LocalModel {
    table: Arc<crate::multi::IndexTable>,
    coeffs: Vec<f64>,
}

impl LocalModel {
    fn build(target: &Expr, a: &[f64], order: usize) -> Result<LocalModel> {
        let jet = eval_jet(target, a, order)?;
        Ok(LocalModel {
            table: jet.table().clone(),
            coeffs: jet.coeffs.clone(),
        })
    }

    /// Evaluate `∂^k (local model)` at the nilpotent offset `delta`,
    /// returning a jet. The offsets must have value zero.
    fn derivative_at(
        &self,
        k: &MultiIndex,
        delta: &[TaylorPoly],
        delta_pows: &DeltaPowers,
    ) -> TaylorPoly {
        let jd = delta[0].dim();
        let jo = delta[0].order();
        let mut acc = TaylorPoly::zero(jd, jo);
        for (rank, l) in self.table.indices.iter().enumerate() {
            // term c_{k+l} * (k+l)!/l! * delta^l contributes to ∂^k
            let kl = k.add(l);
            let c = match self.table.rank_of(&kl) {
                Some(r) => self.coeffs[r],
                None => continue,
            };
            if c == 0.0 {
                continue;
            }
            let factor = kl.factorial() / l.factorial();
            let _ = rank;
            acc = acc.add(&delta_pows.power(l).scale(c * factor));
        }
        acc
    }
}

/// Cached monomial powers `delta^l` of nilpotent jets.
struct DeltaPowers {
    table: Arc<crate::multi::IndexTable>,
    pows: Vec<TaylorPoly>,
}

impl DeltaPowers {
    fn build(delta: &[TaylorPoly], table: Arc<crate::multi::IndexTable>) -> DeltaPowers {
        let jd = delta[0].dim();
        let jo = delta[0].order();
        let mut pows: Vec<TaylorPoly> = Vec::with_capacity(table.len());
        for m in &table.indices {
            if m.degree() == 0 {
                pows.push(TaylorPoly::constant(jd, jo, 1.0));
                continue;
            }
            // find a predecessor: m - e_axis for the first active axis
            let axis = (0..m.dim()).find(|&ax| m.get(ax) > 0).unwrap();
            let prev = m.checked_sub(&MultiIndex::unit(m.dim(), axis)).unwrap();
            let prev_rank = table.rank_of(&prev).unwrap();
            let p = pows[prev_rank].mul(&delta[axis]);
            pows.push(p);
        }
        DeltaPowers { table, pows }
    }

    fn power(&self, m: &MultiIndex) -> &TaylorPoly {
        &self.pows[self.table.rank_of(m).unwrap()]
    }
}

fn transverse_taylor_taylor(
    spec: &TransverseTaylorSpec,
    seeds: &[TaylorPoly],
) -> Result<TaylorPoly> {
    let jd = seeds[0].dim();
    let jo = seeds[0].order();
    let w = eval_taylor(&spec.window, seeds)?;
    let x0: Vec<f64> = seeds.iter().map(|s| s.value()).collect();
    // outside the window tube the product is identically zero
    if w.coeffs.iter().all(|&c| c == 0.0) {
        return Ok(TaylorPoly::constant(jd, jo, 0.0));
    }
    let proj = spec.set.project_taylor(seeds)?;
    let a: Vec<f64> = proj.iter().map(|p| p.value()).collect();
    let model = LocalModel::build(&spec.target, &a, spec.order + jo)?;
    // nilpotent offsets
    let delta: Vec<TaylorPoly> = proj
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q.coeffs[0] = 0.0;
            q
        })
        .collect();
    let offset: Vec<TaylorPoly> = seeds
        .iter()
        .zip(&proj)
        .map(|(s, p)| s.sub(p))
        .collect();
    let model_table = multi::table(spec.target_dim, spec.order + jo);
    let dp = DeltaPowers::build(&delta, model_table);
    // T = sum_{|k| <= m} (offset)^k / k! * (∂^k target)(proj)
    let ttab = multi::table(spec.target_dim, spec.order);
    let off_dp = DeltaPowersFull::build(&offset, ttab.clone());
    let mut acc = TaylorPoly::zero(jd, jo);
    for k in &ttab.indices {
        let dk = model.derivative_at(k, &delta, &dp);
        let term = off_dp.power(k).mul(&dk).scale(1.0 / k.factorial());
        acc = acc.add(&term);
    }
    let _ = x0;
    Ok(acc.mul(&w))
}

/// Monomial powers of general (not necessarily nilpotent) jets.
struct DeltaPowersFull {
    table: Arc<crate::multi::IndexTable>,
    pows: Vec<TaylorPoly>,
}

impl DeltaPowersFull {
    fn build(vecs: &[TaylorPoly], table: Arc<crate::multi::IndexTable>) -> DeltaPowersFull {
        let jd = vecs[0].dim();
        let jo = vecs[0].order();
        let mut pows: Vec<TaylorPoly> = Vec::with_capacity(table.len());
        for m in &table.indices {
            if m.degree() == 0 {
                pows.push(TaylorPoly::constant(jd, jo, 1.0));
                continue;
            }
            let axis = (0..m.dim()).find(|&ax| m.get(ax) > 0).unwrap();
            let prev = m.checked_sub(&MultiIndex::unit(m.dim(), axis)).unwrap();
            let prev_rank = table.rank_of(&prev).unwrap();
            let p = pows[prev_rank].mul(&vecs[axis]);
            pows.push(p);
        }
        DeltaPowersFull { table, pows }
    }

    fn power(&self, m: &MultiIndex) -> &TaylorPoly {
        &self.pows[self.table.rank_of(m).unwrap()]
    }
}

fn helmholtz_taylor(spec: &HelmholtzSpec, seeds: &[TaylorPoly]) -> Result<TaylorPoly> {
    let jo = seeds[0].order();
    let a: Vec<f64> = seeds.iter().map(|s| s.value()).collect();
    let model = LocalModel::build(&spec.target, &a, jo + 2)?;
    let delta: Vec<TaylorPoly> = seeds
        .iter()
        .map(|s| {
            let mut q = s.clone();
            q.coeffs[0] = 0.0;
            q
        })
        .collect();
    let model_table = multi::table(spec.target_dim, jo + 2);
    let dp = DeltaPowers::build(&delta, model_table);
    let zero_k = MultiIndex::zero(spec.target_dim);
    let mut acc = model.derivative_at(&zero_k, &delta, &dp).scale(spec.mass_sq);
    for axis in 0..spec.target_dim {
        let mut k = MultiIndex::zero(spec.target_dim);
        k = k.add(&MultiIndex::unit(spec.target_dim, axis));
        k = k.add(&MultiIndex::unit(spec.target_dim, axis));
        acc = acc.sub(&model.derivative_at(&k, &delta, &dp));
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Partial integrals (integral slices)
// ---------------------------------------------------------------------------

fn slice_kind(spec: &IntegralSliceSpec) -> &SliceKind {
    spec.kind.get_or_init(|| {
        let factors: Vec<&Expr> = match spec.target.as_ref() {
            Expr::Prod(v) => v.iter().collect(),
            other => vec![other],
        };
        let dim = spec.map.n_out;
        for f in factors {
            let act = f.active_axes(dim);
            let mut u_active = false;
            let mut v_active = false;
            for (r, &a) in act.iter().enumerate() {
                if a {
                    u_active |= spec.map.row_u_active(r);
                    v_active |= spec.map.row_v_active(r);
                }
            }
            if u_active && v_active {
                return SliceKind::General;
            }
        }
        SliceKind::Separable
    })
}

fn split_factors<'a>(spec: &'a IntegralSliceSpec) -> (Vec<&'a Expr>, Vec<&'a Expr>) {
    let factors: Vec<&Expr> = match spec.target.as_ref() {
        Expr::Prod(v) => v.iter().collect(),
        other => vec![other],
    };
    let dim = spec.map.n_out;
    let mut u_fs = Vec::new();
    let mut v_fs = Vec::new();
    for f in factors {
        let act = f.active_axes(dim);
        let mut v_active = false;
        for (r, &a) in act.iter().enumerate() {
            if a {
                v_active |= spec.map.row_v_active(r);
            }
        }
        if v_active {
            v_fs.push(f);
        } else {
            u_fs.push(f);
        }
    }
    (u_fs, v_fs)
}

fn v_nodes(spec: &IntegralSliceSpec) -> Arc<Vec<(Vec<f64>, f64)>> {
    spec.nodes
        .get_or_init(|| Arc::new(crate::quad::tensor_gauss(&spec.v_box, spec.v_order)))
        .clone()
}

fn slice_value(spec: &IntegralSliceSpec, u: &[f64]) -> Result<f64> {
    match slice_kind(spec) {
        SliceKind::Separable => {
            let (u_fs, _) = split_factors(spec);
            let mut uprod = 1.0;
            // u-only factors evaluated at x = A u + B*center + c restricted:
            // their values do not depend on v, use the box center.
            let vc = spec.v_box.center();
            let x = spec.map.apply(u, &vc);
            for f in &u_fs {
                uprod *= eval_value(f, &x)?;
            }
            if uprod == 0.0 {
                return Ok(0.0);
            }
            let vint = spec
                .v_integral
                .get_or_init(|| {
                    let (_, v_fs) = split_factors(spec);
                    // v-only factors: any u works, use the zero vector
                    let u0 = vec![0.0; spec.map.n_u];
                    let mut acc = 0.0;
                    for (vn, w) in v_nodes(spec).iter() {
                        let xv = spec.map.apply(&u0, &vn);
                        let mut t = 1.0;
                        for f in &v_fs {
                            t *= eval_value(f, &xv)?;
                        }
                        acc += w * t;
                    }
                    Ok(acc)
                })
                .clone()?;
            Ok(uprod * vint)
        }
        SliceKind::General => {
            let mut acc = 0.0;
            for (vn, w) in v_nodes(spec).iter() {
                let x = spec.map.apply(u, &vn);
                acc += w * eval_value(&spec.target, &x)?;
            }
            Ok(acc)
        }
    }
}

fn slice_taylor(spec: &IntegralSliceSpec, seeds: &[TaylorPoly]) -> Result<TaylorPoly> {
    let jd = seeds[0].dim();
    let jo = seeds[0].order();
    let mut acc = TaylorPoly::zero(jd, jo);
    for (vn, w) in v_nodes(spec).iter() {
        // x_r = Σ_k A_{rk} u_k + (B v + c)_r as jets
        let mut xs: Vec<TaylorPoly> = Vec::with_capacity(spec.map.n_out);
        for r in 0..spec.map.n_out {
            let mut x = TaylorPoly::constant(jd, jo, 0.0);
            let mut shift = spec.map.c[r];
            for (k, vk) in vn.iter().enumerate() {
                shift += spec.map.b[r * spec.map.n_v + k] * vk;
            }
            x.coeffs[0] = shift;
            for (k, s) in seeds.iter().enumerate() {
                let a = spec.map.a[r * spec.map.n_u + k];
                if a != 0.0 {
                    x = x.add(&s.scale(a));
                }
            }
            xs.push(x);
        }
        acc = acc.add(&eval_taylor(&spec.target, &xs)?.scale(*w));
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn poly_eval_and_jets() {
        // f(x, y) = x^2 y + 3
        let p = Poly::from_terms(2, vec![(vec![2, 1], 1.0), (vec![0, 0], 3.0)]);
        assert_relative_eq!(p.eval(&[2.0, 5.0]), 23.0);
        let j = eval_jet(&Expr::Poly(p), &[2.0, 5.0], 2).unwrap();
        let dx = MultiIndex::from_slice(&[1, 0]);
        let dxy = MultiIndex::from_slice(&[1, 1]);
        assert_relative_eq!(j.derivative(&dx), 20.0); // 2xy
        assert_relative_eq!(j.derivative(&dxy), 4.0); // 2x
    }

    #[test]
    fn division_jets() {
        // f(x) = x / (1 + x^2) at x = 1: f = 1/2, f' = (1 - x^2)/(1+x^2)^2 = 0
        let num = Expr::coordinate(1, 0);
        let den = Expr::Poly(Poly::from_terms(1, vec![(vec![0], 1.0), (vec![2], 1.0)]));
        let f = Expr::Div(Box::new(num), Box::new(den));
        let j = eval_jet(&f, &[1.0], 1).unwrap();
        assert_relative_eq!(j.value(), 0.5);
        assert_relative_eq!(j.derivative(&MultiIndex::from_slice(&[1])), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn plateau_exact_regions() {
        let spec = PlateauSpec {
            set: ClosedSet::point(vec![0.0]),
            r_in: 0.125,
            r_out: 1.0,
        };
        let e = Expr::Plateau(spec);
        assert_eq!(eval_value(&e, &[0.05]).unwrap(), 1.0);
        assert_eq!(eval_value(&e, &[2.0]).unwrap(), 0.0);
        let mid = eval_value(&e, &[0.5]).unwrap();
        assert!(mid > 0.0 && mid < 1.0);
        // jet on the plateau is the constant-one jet
        let j = eval_jet(&e, &[0.05], 3).unwrap();
        assert_eq!(j.value(), 1.0);
        assert!(j.coeffs[1..].iter().all(|&c| c == 0.0));
    }

    #[test]
    fn plateau_jet_matches_finite_difference() {
        let spec = PlateauSpec {
            set: ClosedSet::point(vec![0.0]),
            r_in: 0.125,
            r_out: 1.0,
        };
        let e = Expr::Plateau(spec);
        let x = 0.6;
        let h = 1e-5;
        let j = eval_jet(&e, &[x], 1).unwrap();
        let fd = (eval_value(&e, &[x + h]).unwrap() - eval_value(&e, &[x - h]).unwrap())
            / (2.0 * h);
        assert_relative_eq!(
            j.derivative(&MultiIndex::from_slice(&[1])),
            fd,
            max_relative = 1e-6
        );
    }

    #[test]
    fn helmholtz_of_quadratic() {
        // f = x^2 + y^2, (-Δ + 1) f = -4 + x^2 + y^2
        let f = Arc::new(Expr::Poly(Poly::from_terms(
            2,
            vec![(vec![2, 0], 1.0), (vec![0, 2], 1.0)],
        )));
        let h = Expr::Helmholtz(Box::new(HelmholtzSpec {
            target: f,
            target_dim: 2,
            mass_sq: 1.0,
        }));
        assert_relative_eq!(eval_value(&h, &[1.0, 2.0]).unwrap(), 1.0);
        let j = eval_jet(&h, &[1.0, 2.0], 1).unwrap();
        assert_relative_eq!(j.derivative(&MultiIndex::from_slice(&[1, 0])), 2.0);
    }

    #[test]
    fn transverse_taylor_point_case() {
        // target x^2, point set \{0\} ⊂ R, m = 2, window ≡ 1 near 0:
        // P φ(x) = x^2 * w(x), so on the window plateau P φ = φ.
        let window = Arc::new(Expr::Plateau(PlateauSpec {
            set: ClosedSet::point(vec![0.0]),
            r_in: 0.5,
            r_out: 1.0,
        }));
        let tt = Expr::TransverseTaylor(Box::new(TransverseTaylorSpec {
            target: Arc::new(Expr::Poly(Poly::from_terms(1, vec![(vec![2], 1.0)]))),
            target_dim: 1,
            set: ClosedSet::point(vec![0.0]),
            order: 2,
            window,
        }));
        assert_relative_eq!(eval_value(&tt, &[0.3], ).unwrap(), 0.09, epsilon = 1e-13);
        // far outside the window: zero
        assert_eq!(eval_value(&tt, &[2.0]).unwrap(), 0.0);
        // jet agrees with value path through finite difference
        let j = eval_jet(&tt, &[0.3], 1).unwrap();
        assert_relative_eq!(
            j.derivative(&MultiIndex::from_slice(&[1])),
            0.6,
            epsilon = 1e-12
        );
    }

    #[test]
    fn integral_slice_separable_matches_general() {
        // target(x0, x1) = (1 + x0^2) * sin(x1), map u -> x0, v -> x1.
        let target = Arc::new(Expr::Prod(vec![
            Expr::Poly(Poly::from_terms(2, vec![(vec![0, 0], 1.0), (vec![2, 0], 1.0)])),
            Expr::Profile(Profile::Sin, Box::new(Expr::coordinate(2, 1))),
        ]));
        let map = AffineMap {
            n_out: 2,
            n_u: 1,
            n_v: 1,
            a: vec![1.0, 0.0],
            b: vec![0.0, 1.0],
            c: vec![0.0, 0.0],
        };
        let v_box = BoxRegion::new(vec![0.0], vec![std::f64::consts::PI]).unwrap();
        let e = Expr::integral_slice(target.clone(), map.clone(), v_box.clone(), 24);
        let got = eval_value(&e, &[2.0]).unwrap();
        // ∫_0^π sin = 2, times (1 + 4) = 10
        assert_relative_eq!(got, 10.0, epsilon = 1e-10);
        if let Expr::IntegralSlice(spec) = &e {
            assert!(matches!(slice_kind(spec), SliceKind::Separable));
        }
        // jet in u
        let j = eval_jet(&e, &[2.0], 1).unwrap();
        assert_relative_eq!(
            j.derivative(&MultiIndex::from_slice(&[1])),
            8.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn integral_slice_general_path() {
        // target(x0, x1) = exp(x0 * x1): mixed, forces the general path.
        let target = Arc::new(Expr::Profile(
            Profile::Exp,
            Box::new(Expr::Poly(Poly::from_terms(2, vec![(vec![1, 1], 1.0)]))),
        ));
        let map = AffineMap {
            n_out: 2,
            n_u: 1,
            n_v: 1,
            a: vec![1.0, 0.0],
            b: vec![0.0, 1.0],
            c: vec![0.0, 0.0],
        };
        let v_box = BoxRegion::new(vec![0.0], vec![1.0]).unwrap();
        let e = Expr::integral_slice(target, map, v_box, 32);
        let u = 0.7;
        let got = eval_value(&e, &[u]).unwrap();
        // ∫_0^1 e^{u v} dv = (e^u - 1)/u
        assert_relative_eq!(got, (u.exp() - 1.0) / u, epsilon = 1e-12);
    }
}
