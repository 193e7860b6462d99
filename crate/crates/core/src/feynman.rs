//! Green kernels of `(-Δ + m²)` on flat space, Feynman amplitudes,
//! tempered-product renormalization, and the recursive renormalization
//! maps with factorization checks.
//!
//! Amplitudes are products `∏ G^{n_ij}(x_i, x_j)` over graph edges. The
//! two-point case extends directly along the diagonal; the three-point
//! case runs the recursion: for every nontrivial partition, the tensor
//! product of sub-amplitudes times the partition weight and the cross-edge
//! product is extended along the small diagonal, and the results are
//! summed.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::distribution::{GrowthEstimate, RegularDist};
use crate::error::{Error, Result};
use crate::expr::{AffineMap, Expr, Profile};
use crate::extension::{
    self, extend, run_ladder, ExtensionResult, Extended, LadderSpec, RenormScheme,
};
use crate::geometry::{self, ClosedSet, PartitionPiece, TemperedPartition};
use crate::quad::{self, QuadratureSpec};
use crate::region::BoxRegion;
use crate::testfn::{Jet, SmoothFunction};

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;
const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Green kernel of `(-Δ + m²)` on `R^d`, `d ∈ {1, 2, 3}`, in closed form.
///
/// The massive two-dimensional kernel (a Bessel function) has no
/// elementary closed form and is not supported.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GreenKernel {
    d: usize,
    mass: f64,
}

impl GreenKernel {
    pub fn new(d: usize, mass: f64) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidParameter(format!(
                "spatial dimension must be 1, 2 or 3; got {d}"
            )));
        }
        if mass < 0.0 {
            return Err(Error::InvalidParameter("mass must be nonnegative".into()));
        }
        if d == 2 && mass > 0.0 {
            return Err(Error::InvalidParameter(
                "massive d = 2 kernel has no elementary closed form".into(),
            ));
        }
        Ok(GreenKernel { d, mass })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// `G(r)^power` for separation `r > 0`; `power = 0` gives 1.
    pub fn radial_value(&self, r: f64, power: u32) -> Result<f64> {
        if power == 0 {
            return Ok(1.0);
        }
        if !(r > 0.0) {
            return Err(Error::SingularLocus("kernel evaluated at zero separation".into()));
        }
        let g = match (self.d, self.mass) {
            (1, m) if m == 0.0 => -r / 2.0,
            (1, m) => (-m * r).exp() / (2.0 * m),
            (2, _) => -r.ln() / (2.0 * std::f64::consts::PI),
            (3, m) if m == 0.0 => 1.0 / (FOUR_PI * r),
            (3, m) => (-m * r).exp() / (FOUR_PI * r),
            _ => unreachable!(),
        };
        Ok(g.powi(power as i32))
    }

    /// `G(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != self.d || y.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: x.len().max(y.len()),
            });
        }
        let r = dist(x, y);
        self.radial_value(r, 1)
    }

    /// Jet of `G` at `(x, y)` in all `2d` variables; errors on `x = y`.
    pub fn jet(&self, x: &[f64], y: &[f64], order: usize) -> Result<Jet> {
        if dist(x, y) == 0.0 {
            return Err(Error::SingularLocus("jet of G on the diagonal".into()));
        }
        let e = self.edge_expr(2, 0, 1, 1);
        let cfg: Vec<f64> = x.iter().chain(y).copied().collect();
        let f = SmoothFunction::from_expr(2 * self.d, e, None);
        f.jet(&cfg, order)
    }

    /// `G^{power}(x_i, x_j)` as an expression on the `n`-particle
    /// configuration space (0-based block indices).
    pub(crate) fn edge_expr(&self, n: usize, i: usize, j: usize, power: u32) -> Expr {
        if power == 0 {
            return Expr::Const(1.0);
        }
        let p = power as i32;
        let q = Expr::Poly(geometry::sq_pair_sep_poly(n, self.d, i, j));
        match (self.d, self.mass) {
            (1, m) if m == 0.0 => Expr::AffineOf(
                0.0,
                (-0.5f64).powi(p),
                Box::new(Expr::Profile(Profile::PowF(p as f64 / 2.0), Box::new(q))),
            ),
            (1, m) => Expr::AffineOf(
                0.0,
                (2.0 * m).powi(-p),
                Box::new(Expr::Profile(
                    Profile::Exp,
                    Box::new(Expr::AffineOf(
                        0.0,
                        -(p as f64) * m,
                        Box::new(Expr::Profile(Profile::Sqrt, Box::new(q))),
                    )),
                )),
            ),
            (2, _) => Expr::AffineOf(
                0.0,
                (-1.0 / (2.0 * FOUR_PI)).powi(p) * 2.0f64.powi(p),
                Box::new(Expr::Profile(
                    Profile::PowI(p),
                    Box::new(Expr::AffineOf(
                        0.0,
                        0.5,
                        Box::new(Expr::Profile(Profile::Ln, Box::new(q))),
                    )),
                )),
            ),
            (3, m) if m == 0.0 => Expr::AffineOf(
                0.0,
                FOUR_PI.powi(-p),
                Box::new(Expr::Profile(Profile::PowF(-(p as f64) / 2.0), Box::new(q))),
            ),
            (3, m) => Expr::Prod(vec![
                Expr::AffineOf(
                    0.0,
                    FOUR_PI.powi(-p),
                    Box::new(Expr::Profile(Profile::PowF(-(p as f64) / 2.0), Box::new(q.clone()))),
                ),
                Expr::Profile(
                    Profile::Exp,
                    Box::new(Expr::AffineOf(
                        0.0,
                        -(p as f64) * m,
                        Box::new(Expr::Profile(Profile::Sqrt, Box::new(q))),
                    )),
                ),
            ]),
            _ => unreachable!(),
        }
    }

    /// `x ↦ G(x, y0)` as a smooth function on `R^d` off the source point.
    pub fn point_source(&self, y0: &[f64]) -> Result<SmoothFunction> {
        if y0.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: y0.len(),
            });
        }
        // q(x) = |x - y0|^2
        let mut q = crate::expr::Poly::zero(self.d);
        for (axis, &c) in y0.iter().enumerate() {
            let l = crate::expr::Poly::linear(self.d, axis, 1.0, -c);
            q = q.add(&l.mul_poly(&l));
        }
        let q = Expr::Poly(q);
        let e = match (self.d, self.mass) {
            (1, m) if m == 0.0 => Expr::AffineOf(
                0.0,
                -0.5,
                Box::new(Expr::Profile(Profile::Sqrt, Box::new(q))),
            ),
            (1, m) => Expr::AffineOf(
                0.0,
                1.0 / (2.0 * m),
                Box::new(Expr::Profile(
                    Profile::Exp,
                    Box::new(Expr::AffineOf(
                        0.0,
                        -m,
                        Box::new(Expr::Profile(Profile::Sqrt, Box::new(q))),
                    )),
                )),
            ),
            (2, _) => Expr::AffineOf(
                0.0,
                -1.0 / FOUR_PI,
                Box::new(Expr::Profile(Profile::Ln, Box::new(q))),
            ),
            (3, m) if m == 0.0 => Expr::AffineOf(
                0.0,
                1.0 / FOUR_PI,
                Box::new(Expr::Profile(Profile::PowF(-0.5), Box::new(q))),
            ),
            (3, m) => Expr::Prod(vec![
                Expr::AffineOf(
                    0.0,
                    1.0 / FOUR_PI,
                    Box::new(Expr::Profile(Profile::PowF(-0.5), Box::new(q.clone()))),
                ),
                Expr::Profile(
                    Profile::Exp,
                    Box::new(Expr::AffineOf(
                        0.0,
                        -m,
                        Box::new(Expr::Profile(Profile::Sqrt, Box::new(q))),
                    )),
                ),
            ]),
            _ => unreachable!(),
        };
        Ok(SmoothFunction::from_expr(self.d, e, None))
    }
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Near-diagonal temperedness report for the kernel.
#[derive(Clone, Debug, Serialize)]
pub struct TemperednessReport {
    pub estimate: GrowthEstimate,
    /// the a-priori bound `d + |β| + 1`
    pub paper_bound: f64,
    pub within_bound: bool,
}

/// Fits the blow-up exponent of `sup_{|ν| <= β} |∂^ν G|` on dyadic shells
/// around the two-point diagonal, and checks it against the a-priori
/// bound `d + |β| + 1`.
pub fn green_temperedness_check(
    kernel: &GreenKernel,
    beta_order: usize,
    j_range: (u32, u32),
) -> Result<TemperednessReport> {
    if j_range.1 < j_range.0 + 3 {
        return Err(Error::InsufficientData("need at least 4 shells".into()));
    }
    let d = kernel.dim();
    let set = ClosedSet::small_diagonal(2, d);
    let f = SmoothFunction::from_expr(2 * d, kernel.edge_expr(2, 0, 1, 1), None);
    let region = BoxRegion::cube(2 * d, -1.0, 1.0);
    let estimate =
        crate::distribution::growth_fit_function(&f, &set, &region, beta_order, j_range)?;
    let paper_bound = (d + beta_order + 1) as f64;
    let within_bound = estimate.s <= paper_bound + 0.1;
    Ok(TemperednessReport {
        estimate,
        paper_bound,
        within_bound,
    })
}

// ---------------------------------------------------------------------------
// Graphs and plain amplitudes
// ---------------------------------------------------------------------------

/// A graph on vertices `1..=n` with edge multiplicities `n_ij`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FeynmanGraph {
    n: usize,
    /// upper-triangular multiplicities indexed by (i, j), i < j, 1-based
    edges: BTreeMap<(usize, usize), u32>,
}

impl FeynmanGraph {
    pub fn new(n: usize, edges: &[(usize, usize, u32)]) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter("graph needs n >= 2 vertices".into()));
        }
        let mut map = BTreeMap::new();
        for &(i, j, m) in edges {
            if i == j {
                return Err(Error::InvalidParameter("no self-loops: n_ii = 0".into()));
            }
            if i == 0 || j == 0 || i > n || j > n {
                return Err(Error::InvalidParameter(format!(
                    "edge ({i},{j}) outside 1..={n}"
                )));
            }
            let key = (i.min(j), i.max(j));
            if m > 0 {
                *map.entry(key).or_insert(0) += m;
            }
        }
        Ok(FeynmanGraph { n, edges: map })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Multiplicity `n_ij` (symmetric, zero on the diagonal).
    pub fn multiplicity(&self, i: usize, j: usize) -> u32 {
        if i == j {
            return 0;
        }
        *self.edges.get(&(i.min(j), i.max(j))).unwrap_or(&0)
    }

    pub fn total_edges(&self) -> u32 {
        self.edges.values().sum()
    }

    /// Restriction to a vertex subset, with vertices relabelled 1..=|J| in
    /// increasing order.
    pub fn restrict(&self, subset: &[usize]) -> Result<FeynmanGraph> {
        if subset.len() < 2 {
            return Err(Error::InvalidParameter("subset too small to restrict".into()));
        }
        let mut edges = Vec::new();
        for (a, &va) in subset.iter().enumerate() {
            for (b, &vb) in subset.iter().enumerate().skip(a + 1) {
                let m = self.multiplicity(va, vb);
                if m > 0 {
                    edges.push((a + 1, b + 1, m));
                }
            }
        }
        FeynmanGraph::new(subset.len(), &edges)
    }
}

/// The pointwise amplitude `∏ G^{n_ij}(x_i, x_j)` at a configuration off
/// the active edges' coincidence loci.
pub fn amplitude_eval(graph: &FeynmanGraph, kernel: &GreenKernel, cfg: &[f64]) -> Result<f64> {
    let n = graph.n();
    let d = kernel.dim();
    if cfg.len() != n * d {
        return Err(Error::DimensionMismatch {
            expected: n * d,
            got: cfg.len(),
        });
    }
    let mut acc = 1.0;
    for i in 1..=n {
        for j in (i + 1)..=n {
            let m = graph.multiplicity(i, j);
            if m == 0 {
                continue;
            }
            let r = dist(&cfg[(i - 1) * d..i * d], &cfg[(j - 1) * d..j * d]);
            acc *= kernel.radial_value(r, m)?;
        }
    }
    Ok(acc)
}

/// The amplitude as a smooth function off the big diagonal.
pub fn amplitude_fn(graph: &FeynmanGraph, kernel: &GreenKernel) -> SmoothFunction {
    let n = graph.n();
    let d = kernel.dim();
    let mut factors = Vec::new();
    for i in 1..=n {
        for j in (i + 1)..=n {
            let m = graph.multiplicity(i, j);
            if m > 0 {
                factors.push(kernel.edge_expr(n, i - 1, j - 1, m));
            }
        }
    }
    let e = if factors.is_empty() {
        Expr::Const(1.0)
    } else {
        Expr::Prod(factors)
    };
    SmoothFunction::from_expr(n * d, e, None)
}

// ---------------------------------------------------------------------------
// Scheme ladders
// ---------------------------------------------------------------------------

/// Scheme parameters for one recursion level (vertex-subset size).
#[derive(Clone, Debug, Serialize)]
pub struct LevelScheme {
    /// Taylor subtraction order; `None` for no subtraction.
    pub order: Option<usize>,
    /// window plateau radii `(r_in, r_out)` in set distance
    pub window_radii: (f64, f64),
}

impl LevelScheme {
    pub fn no_subtraction() -> Self {
        LevelScheme {
            order: None,
            window_radii: (0.25, 0.5),
        }
    }

    pub fn taylor(order: usize, r_in: f64, r_out: f64) -> Self {
        LevelScheme {
            order: Some(order),
            window_radii: (r_in, r_out),
        }
    }
}

/// One scheme per recursion level, keyed by vertex-subset size (2..=n).
#[derive(Clone, Debug, Serialize)]
pub struct SchemeLadder {
    levels: BTreeMap<usize, LevelScheme>,
}

impl SchemeLadder {
    pub fn new() -> Self {
        SchemeLadder {
            levels: BTreeMap::new(),
        }
    }

    pub fn with_level(mut self, size: usize, scheme: LevelScheme) -> Self {
        self.levels.insert(size, scheme);
        self
    }

    pub fn uniform(n: usize, scheme: LevelScheme) -> Self {
        let mut ladder = SchemeLadder::new();
        for size in 2..=n {
            ladder.levels.insert(size, scheme.clone());
        }
        ladder
    }

    pub fn level(&self, size: usize) -> Result<&LevelScheme> {
        self.levels.get(&size).ok_or_else(|| {
            Error::InvalidParameter(format!("scheme ladder has no level for subset size {size}"))
        })
    }
}

impl Default for SchemeLadder {
    fn default() -> Self {
        Self::new()
    }
}

// ---------------------------------------------------------------------------
// Renormalized amplitudes
// ---------------------------------------------------------------------------

/// Per-piece pairing diagnostics of a recursive renormalization.
#[derive(Clone, Debug, Serialize)]
pub struct PieceReport {
    pub piece: String,
    pub result: ExtensionResult,
}

/// Full pairing report of a renormalized amplitude.
#[derive(Clone, Debug, Serialize)]
pub struct AmplitudePairing {
    pub value: f64,
    pub pieces: Vec<PieceReport>,
    pub diverged: bool,
}

/// The recursively renormalized amplitude `R_n(G_n)`.
///
/// `R_J ≡ 1` for `|J| <= 1`; the two-point case is the direct extension of
/// `G^{n_12}` along the diagonal; the three-point case sums the extensions
/// of `(R_{I1} ⊗ R_{I2}) · (χ_{I1 I2} G_cross)` over the partition pieces.
pub struct AmplitudeDistribution {
    graph: FeynmanGraph,
    kernel: GreenKernel,
    schemes: SchemeLadder,
    quad: QuadratureSpec,
    ladder: LadderSpec,
    partition: Option<TemperedPartition>,
    /// two-point fast path (ambient dimension <= 3)
    direct: Option<Arc<Extended>>,
}

/// Builds the renormalized amplitude for the graph and kernel.
///
/// Desk-scale scope: `n = 2` for `d <= 3`; `n = 3` deterministic at
/// `d = 1`; `n = 3, d = 2` only with a Monte Carlo spec. Inside the
/// `n = 3` recursion, the subset-size-2 level must be `NoSubtraction`
/// (the one-dimensional and logarithmic kernels are locally integrable).
pub fn renormalize(
    graph: &FeynmanGraph,
    kernel: &GreenKernel,
    schemes: &SchemeLadder,
    quad: &QuadratureSpec,
    ladder: LadderSpec,
) -> Result<AmplitudeDistribution> {
    quad.validate()?;
    let n = graph.n();
    let d = kernel.dim();
    for size in 2..=n {
        schemes.level(size)?;
    }
    match (n, d) {
        (2, _) => {}
        (3, 1) => {}
        (3, 2) => {
            if quad.mc.is_none() {
                return Err(Error::InvalidParameter(
                    "n = 3, d = 2 requires a Monte Carlo spec".into(),
                ));
            }
        }
        _ => {
            return Err(Error::InvalidParameter(format!(
                "desk-scale scope: n <= 3 and (n, d) feasible; got n = {n}, d = {d}"
            )))
        }
    }
    let mut partition = None;
    let mut direct = None;
    if n == 2 {
        if 2 * d <= 3 {
            let level = schemes.level(2)?;
            let set = ClosedSet::small_diagonal(2, d);
            let scheme = build_scheme(&set, level)?;
            let density = amplitude_fn(graph, kernel);
            let reg = RegularDist::new(density, Some(set), quad.clone());
            direct = Some(extend(&reg, &scheme, ladder)?);
        }
    } else {
        let level2 = schemes.level(2)?;
        if level2.order.is_some() {
            return Err(Error::InvalidParameter(
                "subset-size-2 subtraction inside the n = 3 recursion is not supported \
                 at desk scale; use NoSubtraction"
                    .into(),
            ));
        }
        partition = Some(geometry::tempered_partition(n, d, None)?);
    }
    Ok(AmplitudeDistribution {
        graph: graph.clone(),
        kernel: *kernel,
        schemes: schemes.clone(),
        quad: quad.clone(),
        ladder,
        partition,
        direct,
    })
}

fn build_scheme(set: &ClosedSet, level: &LevelScheme) -> Result<RenormScheme> {
    match level.order {
        None => RenormScheme::no_subtraction(set.clone()),
        Some(m) => RenormScheme::taylor(set.clone(), m, level.window_radii.0, level.window_radii.1),
    }
}

impl AmplitudeDistribution {
    pub fn graph(&self) -> &FeynmanGraph {
        &self.graph
    }

    pub fn kernel(&self) -> &GreenKernel {
        &self.kernel
    }

    pub fn pieces(&self) -> Vec<PartitionPiece> {
        match &self.partition {
            Some(p) => p.pieces().to_vec(),
            None => geometry::cover_pieces(2).unwrap(),
        }
    }

    /// The renormalized pairing `⟨R_n(G_n), φ⟩`.
    pub fn pair(&self, phi: &SmoothFunction) -> Result<f64> {
        let r = self.pair_detailed(phi)?;
        if r.diverged {
            return Err(Error::Divergent(
                "amplitude λ ladder diverged; raise the scheme order".into(),
            ));
        }
        Ok(r.value)
    }

    /// Pairing with per-piece ladder diagnostics.
    pub fn pair_detailed(&self, phi: &SmoothFunction) -> Result<AmplitudePairing> {
        let n = self.graph.n();
        let d = self.kernel.dim();
        if phi.dim() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: phi.dim(),
            });
        }
        if n == 2 {
            let result = match &self.direct {
                Some(ext) => ext.pair_detailed(phi)?,
                None => {
                    let samples = self.two_point_reduced_samples(phi)?;
                    run_ladder(&samples, &self.ladder)
                }
            };
            let diverged = result.diverged;
            return Ok(AmplitudePairing {
                value: result.value,
                pieces: vec![PieceReport {
                    piece: "1|2".into(),
                    result,
                }],
                diverged,
            });
        }
        // n = 3 recursion
        let partition = self.partition.as_ref().unwrap();
        let mut pieces = Vec::new();
        let mut value = 0.0;
        let mut diverged = false;
        for (idx, piece) in partition.pieces().iter().enumerate() {
            let samples = if d == 1 {
                self.three_point_piece_samples(piece, idx, phi)?
            } else {
                self.three_point_piece_samples_mc(idx, phi)?
            };
            let result = run_ladder(&samples, &self.ladder);
            value += result.value;
            diverged |= result.diverged;
            pieces.push(PieceReport {
                piece: piece.label(),
                result,
            });
        }
        Ok(AmplitudePairing {
            value,
            pieces,
            diverged,
        })
    }

    /// Reduced two-point samples in the transverse coordinate
    /// `ũ = (x_1 - x_2)/√2`, which turns the `2d`-dimensional pairing into
    /// a `d`-dimensional one with the test function integrated along the
    /// diagonal directions.
    fn two_point_reduced_samples(&self, phi: &SmoothFunction) -> Result<Vec<(f64, f64)>> {
        let d = self.kernel.dim();
        let power = self.graph.multiplicity(1, 2);
        let level = self.schemes.level(2)?;
        let phi_box = phi.support().ok_or_else(|| {
            Error::InvalidParameter("pairing requires a compactly supported test function".into())
        })?;
        // ũ and v boxes from φ's support
        let mut u_lo = Vec::with_capacity(d);
        let mut u_hi = Vec::with_capacity(d);
        let mut v_lo = Vec::with_capacity(d);
        let mut v_hi = Vec::with_capacity(d);
        for k in 0..d {
            u_lo.push((phi_box.lo[k] - phi_box.hi[d + k]) / SQRT2);
            u_hi.push((phi_box.hi[k] - phi_box.lo[d + k]) / SQRT2);
            v_lo.push(0.5 * (phi_box.lo[k] + phi_box.lo[d + k]));
            v_hi.push(0.5 * (phi_box.hi[k] + phi_box.hi[d + k]));
        }
        let mut u_box = BoxRegion::new(u_lo, u_hi)?;
        if level.order.is_some() {
            u_box = u_box.hull(&BoxRegion::ball(&vec![0.0; d], level.window_radii.1));
        }
        let v_box = BoxRegion::new(v_lo, v_hi)?;
        // Φ(ũ) = ∫ φ(v + ũ/√2, v - ũ/√2) dv
        let mut a = vec![0.0; 2 * d * d];
        let mut b = vec![0.0; 2 * d * d];
        for k in 0..d {
            a[k * d + k] = 1.0 / SQRT2;
            a[(d + k) * d + k] = -1.0 / SQRT2;
            b[k * d + k] = 1.0;
            b[(d + k) * d + k] = 1.0;
        }
        let map = AffineMap {
            n_out: 2 * d,
            n_u: d,
            n_v: d,
            a,
            b,
            c: vec![0.0; 2 * d],
        };
        let slice = Expr::integral_slice(
            phi.expr().clone(),
            map,
            v_box.clone(),
            self.quad.inner_order_for_dim(d),
        );
        // diagonal moments for the subtraction term
        let moments = match level.order {
            None => None,
            Some(m) => Some(self.diagonal_moments(phi, &v_box, m)?),
        };
        let origin = vec![0.0; d];
        let dist_fn = move |x: &[f64]| {
            x.iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        let mesh = quad::build_mesh(&u_box, &dist_fn, &self.quad);
        let vol_factor = SQRT2.powi(d as i32);
        let mut samples = Vec::with_capacity(mesh.nodes.len());
        let (r_in, r_out) = level.window_radii;
        for node in &mesh.nodes {
            let r = node.dist;
            if r == 0.0 {
                continue;
            }
            let g = self.kernel.radial_value(SQRT2 * r, power)? * vol_factor;
            let phi_part = crate::expr::eval_value(&slice, &node.x)?;
            let mut coef = g * phi_part;
            if let (Some((table, moms)), Some(m)) = (&moments, level.order) {
                // window in the reduced coordinate: plateau of |ũ|
                let w = plateau_value(r, r_in, r_out);
                if w != 0.0 {
                    let mut t_val = 0.0;
                    for (k, mom) in table.indices.iter().zip(moms) {
                        if *mom == 0.0 {
                            continue;
                        }
                        // offset = (ũ/√2, -ũ/√2) in configuration coords
                        let mut mono = 1.0;
                        for axis in 0..d {
                            let e1 = k.get(axis);
                            let e2 = k.get(d + axis);
                            if e1 > 0 {
                                mono *= (node.x[axis] / SQRT2).powi(e1 as i32);
                            }
                            if e2 > 0 {
                                mono *= (-node.x[axis] / SQRT2).powi(e2 as i32);
                            }
                        }
                        t_val += mom * mono / k.factorial();
                    }
                    coef -= g * w * t_val;
                }
                let _ = m;
            }
            coef *= node.w;
            samples.push((coef, r));
        }
        let _ = origin;
        Ok(samples)
    }

    /// `M_k = ∫ ∂^k φ(v, v) dv` over the diagonal footprint of the
    /// support, for all `|k| <= m` (configuration multi-indices).
    fn diagonal_moments(
        &self,
        phi: &SmoothFunction,
        v_box: &BoxRegion,
        m: usize,
    ) -> Result<(Arc<crate::multi::IndexTable>, Vec<f64>)> {
        let d = self.kernel.dim();
        let table = crate::multi::table(2 * d, m);
        let mut moms = vec![quad::CompensatedSum::new(); table.len()];
        let order = self.quad.inner_order_for_dim(d);
        for (v, w) in quad::tensor_gauss(v_box, order) {
            let cfg: Vec<f64> = v.iter().chain(v.iter()).copied().collect();
            let jet = phi.jet(&cfg, m)?;
            for (acc, deriv) in moms.iter_mut().zip(jet.raw()) {
                acc.add(w * deriv);
            }
        }
        Ok((table, moms.into_iter().map(|a| a.value()).collect()))
    }

    /// Nested deterministic samples for one partition piece at `d = 1`:
    /// outer mesh over the pair block refined toward its diagonal, inner
    /// mesh over the singleton block refined toward the outer points.
    fn three_point_piece_samples(
        &self,
        piece: &PartitionPiece,
        piece_idx: usize,
        phi: &SmoothFunction,
    ) -> Result<Vec<(f64, f64)>> {
        let d = self.kernel.dim();
        debug_assert_eq!(d, 1);
        let partition = self.partition.as_ref().unwrap();
        let top = self.schemes.level(3)?;
        let set3 = ClosedSet::small_diagonal(3, d);
        let scheme3 = build_scheme(&set3, top)?;
        let psi = match top.order {
            None => phi.clone(),
            Some(_) => scheme3.project_i(phi)?,
        };
        let phi_box = phi.support().ok_or_else(|| {
            Error::InvalidParameter("pairing requires a compactly supported test function".into())
        })?;
        let domain = match top.order {
            None => phi_box.clone(),
            Some(_) => extension::tube_box(&set3, phi_box, top.window_radii.1).hull(phi_box),
        };
        // identify the pair side and the singleton
        let (pair, single) = if piece.left().len() == 2 {
            (
                (piece.left()[0], piece.left()[1]),
                piece.right()[0],
            )
        } else {
            (
                (piece.right()[0], piece.right()[1]),
                piece.left()[0],
            )
        };
        let (a, b, c) = (pair.0 - 1, pair.1 - 1, single - 1);
        let n_ab = self.graph.multiplicity(pair.0, pair.1);
        let n_ac = self.graph.multiplicity(pair.0, single);
        let n_bc = self.graph.multiplicity(pair.1, single);
        let outer_box = BoxRegion::new(
            vec![domain.lo[a], domain.lo[b]],
            vec![domain.hi[a], domain.hi[b]],
        )?;
        let inner_box = BoxRegion::new(vec![domain.lo[c]], vec![domain.hi[c]])?;
        let outer_dist = move |x: &[f64]| (x[0] - x[1]).abs() / SQRT2;
        let outer_mesh = quad::build_mesh(&outer_box, &outer_dist, &self.quad);
        let mut inner_quad = self.quad.clone();
        inner_quad.max_depth = self.quad.max_depth.min(16);
        let mut samples = Vec::new();
        for onode in &outer_mesh.nodes {
            let (xa, xb) = (onode.x[0], onode.x[1]);
            let g_pair = if n_ab > 0 {
                let r = (xa - xb).abs();
                if r == 0.0 {
                    continue;
                }
                self.kernel.radial_value(r, n_ab)?
            } else {
                1.0
            };
            let inner_dist = move |x: &[f64]| (x[0] - xa).abs().min((x[0] - xb).abs());
            let inner_mesh = quad::build_mesh(&inner_box, &inner_dist, &inner_quad);
            for inode in &inner_mesh.nodes {
                let xc = inode.x[0];
                let mut cfg = [0.0; 3];
                cfg[a] = xa;
                cfg[b] = xb;
                cfg[c] = xc;
                let d3 = set3.distance_unchecked(&cfg);
                if d3 == 0.0 {
                    continue;
                }
                let psi_v = psi.value(&cfg)?;
                if psi_v == 0.0 {
                    continue;
                }
                let weights = match partition.weights_at(&cfg) {
                    Ok(w) => w,
                    Err(Error::SingularLocus(_)) => continue,
                    Err(e) => return Err(e),
                };
                let chi = weights[piece_idx];
                if chi == 0.0 {
                    continue;
                }
                let mut g_cross = 1.0;
                if n_ac > 0 {
                    let r = (xa - xc).abs();
                    if r == 0.0 {
                        continue;
                    }
                    g_cross *= self.kernel.radial_value(r, n_ac)?;
                }
                if n_bc > 0 {
                    let r = (xb - xc).abs();
                    if r == 0.0 {
                        continue;
                    }
                    g_cross *= self.kernel.radial_value(r, n_bc)?;
                }
                let coef = onode.w * inode.w * g_pair * g_cross * chi * psi_v;
                samples.push((coef, d3));
            }
        }
        Ok(samples)
    }

    /// Monte Carlo samples for one piece at `n = 3, d = 2`.
    fn three_point_piece_samples_mc(
        &self,
        piece_idx: usize,
        phi: &SmoothFunction,
    ) -> Result<Vec<(f64, f64)>> {
        let d = self.kernel.dim();
        let n = self.graph.n();
        let partition = self.partition.as_ref().unwrap();
        let top = self.schemes.level(3)?;
        let set3 = ClosedSet::small_diagonal(n, d);
        let scheme3 = build_scheme(&set3, top)?;
        let psi = match top.order {
            None => phi.clone(),
            Some(_) => scheme3.project_i(phi)?,
        };
        let phi_box = phi.support().ok_or_else(|| {
            Error::InvalidParameter("pairing requires a compactly supported test function".into())
        })?;
        let domain = match top.order {
            None => phi_box.clone(),
            Some(_) => extension::tube_box(&set3, phi_box, top.window_radii.1).hull(phi_box),
        };
        let mc = self.quad.mc.clone().ok_or_else(|| {
            Error::InvalidParameter("n = 3, d = 2 requires a Monte Carlo spec".into())
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(mc.seed.wrapping_add(piece_idx as u64));
        let vol = domain.volume();
        let mut samples = Vec::with_capacity(mc.samples as usize);
        for _ in 0..mc.samples {
            let cfg = domain.sample(&mut rng);
            let d3 = set3.distance_unchecked(&cfg);
            if d3 == 0.0 {
                continue;
            }
            let psi_v = psi.value(&cfg)?;
            if psi_v == 0.0 {
                continue;
            }
            let weights = match partition.weights_at(&cfg) {
                Ok(w) => w,
                Err(Error::SingularLocus(_)) => continue,
                Err(e) => return Err(e),
            };
            let chi = weights[piece_idx];
            if chi == 0.0 {
                continue;
            }
            let amp = match amplitude_eval(&self.graph, &self.kernel, &cfg) {
                Ok(v) => v,
                Err(Error::SingularLocus(_)) => continue,
                Err(e) => return Err(e),
            };
            samples.push((amp * chi * psi_v * vol / mc.samples as f64, d3));
        }
        Ok(samples)
    }

    /// The factorized pairing `⟨(R_{I1} ⊗ R_{I2}) G_cross, φ⟩` for a piece,
    /// computed by the independent tensor route (no partition weights, no
    /// λ ladder at the top level).
    fn factorized_pair(&self, piece: &PartitionPiece, phi: &SmoothFunction) -> Result<f64> {
        let n = self.graph.n();
        let d = self.kernel.dim();
        let phi_box = phi.support().ok_or_else(|| {
            Error::InvalidParameter("pairing requires a compactly supported test function".into())
        })?;
        if n == 2 {
            // R_1 ⊗ R_2 = 1: plain amplitude integral over φ's box
            let density = amplitude_fn(&self.graph, &self.kernel);
            let set = ClosedSet::big_diagonal(2, d);
            let reg = RegularDist::new(density, Some(set), self.quad.clone());
            return crate::distribution::pair(&crate::distribution::Distribution::Regular(reg), phi);
        }
        // n = 3: the 2-element side J carries R_J; the singleton side is
        // integrated through an integral slice.
        let (pair_side, single) = if piece.left().len() == 2 {
            ((piece.left()[0], piece.left()[1]), piece.right()[0])
        } else {
            ((piece.right()[0], piece.right()[1]), piece.left()[0])
        };
        let (a, b, c) = (pair_side.0 - 1, pair_side.1 - 1, single - 1);
        let n_ac = self.graph.multiplicity(pair_side.0, single);
        let n_bc = self.graph.multiplicity(pair_side.1, single);
        // target = G_cross · φ on the full configuration space
        let mut factors = Vec::new();
        if n_ac > 0 {
            factors.push(self.kernel.edge_expr(n, a, c, n_ac));
        }
        if n_bc > 0 {
            factors.push(self.kernel.edge_expr(n, b, c, n_bc));
        }
        factors.push(phi.expr().as_ref().clone());
        let target = Arc::new(Expr::Prod(factors));
        // map: outer (x_a, x_b) blocks, inner x_c block
        let n_out = n * d;
        let n_u = 2 * d;
        let n_v = d;
        let mut am = vec![0.0; n_out * n_u];
        let mut bm = vec![0.0; n_out * n_v];
        for k in 0..d {
            am[(a * d + k) * n_u + k] = 1.0;
            am[(b * d + k) * n_u + d + k] = 1.0;
            bm[(c * d + k) * n_v + k] = 1.0;
        }
        let map = AffineMap {
            n_out,
            n_u,
            n_v,
            a: am,
            b: bm,
            c: vec![0.0; n_out],
        };
        let v_box = BoxRegion::new(
            (0..d).map(|k| phi_box.lo[c * d + k]).collect(),
            (0..d).map(|k| phi_box.hi[c * d + k]).collect(),
        )?;
        let inner_order = self.quad.inner_order_for_dim(d);
        let theta = Expr::integral_slice(target, map, v_box, inner_order);
        let mut lo = Vec::with_capacity(2 * d);
        let mut hi = Vec::with_capacity(2 * d);
        for k in 0..d {
            lo.push(phi_box.lo[a * d + k]);
            hi.push(phi_box.hi[a * d + k]);
        }
        for k in 0..d {
            lo.push(phi_box.lo[b * d + k]);
            hi.push(phi_box.hi[b * d + k]);
        }
        let theta_fn =
            SmoothFunction::from_expr(2 * d, theta, Some(BoxRegion::new(lo, hi)?));
        // R_J = renormalized two-point amplitude of the restricted graph
        let sub_graph = self.graph.restrict(&[pair_side.0, pair_side.1])?;
        let sub = renormalize(
            &sub_graph,
            &self.kernel,
            &self.schemes,
            &self.quad,
            self.ladder,
        )?;
        sub.pair(&theta_fn)
    }
}

fn plateau_value(d: f64, r_in: f64, r_out: f64) -> f64 {
    if d <= r_in {
        1.0
    } else if d >= r_out {
        0.0
    } else {
        crate::taylor::smoothstep((r_out - d) / (r_out - r_in))
    }
}

// ---------------------------------------------------------------------------
// Radial two-point test data and its one-dimensional oracle
// ---------------------------------------------------------------------------

/// A two-point test function that is radial in the relative coordinate and
/// separable across the transverse/diagonal splitting:
///
/// `φ(x1, x2) = b(|x1 - x2|²/ru²) · b(|x1 + x2|²/rv²)`
///
/// with `b(w) = exp(-1/(1-w))` for `w < 1`. Its angular content is exactly
/// integrable, which is what the radial finite-part oracle needs.
pub fn radial_pair_test_function(d: usize, ru: f64, rv: f64) -> Result<SmoothFunction> {
    if !(1..=3).contains(&d) {
        return Err(Error::InvalidParameter("d must be 1, 2 or 3".into()));
    }
    if !(ru > 0.0 && rv > 0.0) {
        return Err(Error::InvalidParameter("radii must be positive".into()));
    }
    let dim = 2 * d;
    let mut qu = crate::expr::Poly::zero(dim);
    let mut qv = crate::expr::Poly::zero(dim);
    for k in 0..d {
        let lu = crate::expr::Poly::linear(dim, k, 1.0, 0.0)
            .add(&crate::expr::Poly::linear(dim, d + k, -1.0, 0.0));
        qu = qu.add(&lu.mul_poly(&lu));
        let lv = crate::expr::Poly::linear(dim, k, 1.0, 0.0)
            .add(&crate::expr::Poly::linear(dim, d + k, 1.0, 0.0));
        qv = qv.add(&lv.mul_poly(&lv));
    }
    let e = Expr::Prod(vec![
        Expr::Profile(
            Profile::BumpSq,
            Box::new(Expr::Poly(qu.scale(1.0 / (ru * ru)))),
        ),
        Expr::Profile(
            Profile::BumpSq,
            Box::new(Expr::Poly(qv.scale(1.0 / (rv * rv)))),
        ),
    ]);
    // |x1 - x2| <= ru and |x1 + x2| <= rv bound every coordinate
    let half = 0.5 * (ru + rv);
    Ok(SmoothFunction::from_expr(
        dim,
        e,
        Some(BoxRegion::cube(dim, -half, half)),
    ))
}

/// Independent radial oracle for the two-point pairing against
/// [`radial_pair_test_function`]: integrates the angles exactly and
/// reduces to a one-dimensional (finite-part) integral evaluated by the
/// adaptive reference quadrature:
///
/// `⟨R_2(G^p), φ⟩ = [∫ b(|2v|²/rv²) dv] · A_{d-1} ∫ r^{d-1} G^p(r)
///                   (b(r²/ru²) − w(r/√2) b(0)) dr`.
pub fn radial_pair_oracle(
    kernel: &GreenKernel,
    power: u32,
    ru: f64,
    rv: f64,
    window_radii: Option<(f64, f64)>,
    tol: f64,
) -> Result<f64> {
    let d = kernel.dim();
    let bump_sq = |w: f64| if w >= 1.0 { 0.0 } else { (-1.0 / (1.0 - w)).exp() };
    let area = crate::oracle::unit_sphere_area(d)?;
    // v-integral of the diagonal factor
    let mut vint_f = |s: f64| {
        let sd = if d == 1 { 1.0 } else { s.powi(d as i32 - 1) };
        area * sd * bump_sq(4.0 * s * s / (rv * rv))
    };
    let vint = if d == 1 {
        // s ranges over the full line in one dimension
        let mut sym = |s: f64| bump_sq(4.0 * s * s / (rv * rv));
        crate::oracle::integrate(&mut sym, -rv / 2.0, rv / 2.0, 0.1 * tol)?
    } else {
        crate::oracle::integrate(&mut vint_f, 0.0, rv / 2.0, 0.1 * tol)?
    };
    let eta0 = bump_sq(0.0);
    let kernel = *kernel;
    let mut radial = |r: f64| {
        if r <= 0.0 {
            return 0.0;
        }
        let g = kernel.radial_value(r, power).unwrap_or(0.0);
        let sub = match window_radii {
            Some((r_in, r_out)) => plateau_value(r / SQRT2, r_in, r_out) * eta0,
            None => 0.0,
        };
        let rd = if d == 1 { 1.0 } else { r.powi(d as i32 - 1) };
        let ang = if d == 1 { 2.0 } else { area };
        ang * rd * g * (bump_sq(r * r / (ru * ru)) - sub)
    };
    let r_max = match window_radii {
        Some((_, r_out)) => ru.max(r_out * SQRT2),
        None => ru,
    };
    let radial_int = crate::oracle::integrate_improper_lower(&mut radial, 0.0, r_max, tol)?;
    Ok(vint * radial_int)
}

// ---------------------------------------------------------------------------
// Tempered products
// ---------------------------------------------------------------------------

/// Renormalized product of a tempered function with a regular
/// distribution whose density is smooth near the set: extends the product
/// density along the scheme's set.
pub fn renorm_product(
    f: &SmoothFunction,
    t: &RegularDist,
    scheme: &RenormScheme,
    ladder: LadderSpec,
) -> Result<Arc<Extended>> {
    let product = f.product(&t.density)?;
    let reg = RegularDist::new(product, Some(scheme.set().clone()), t.quad.clone());
    extend(&reg, scheme, ladder)
}

// ---------------------------------------------------------------------------
// Factorization and consistency checks
// ---------------------------------------------------------------------------

/// Relative residual floor guarding 0/0.
pub const RESIDUAL_FLOOR: f64 = 1e-12;

/// Minimum separation of the support blocks across a piece's cross pairs.
fn min_cross_separation(
    piece: &PartitionPiece,
    phi_box: &BoxRegion,
    d: usize,
) -> f64 {
    let mut min_sep = f64::INFINITY;
    for (i, j) in piece.cross_pairs() {
        let mut acc = 0.0;
        for k in 0..d {
            let (alo, ahi) = (phi_box.lo[(i - 1) * d + k], phi_box.hi[(i - 1) * d + k]);
            let (blo, bhi) = (phi_box.lo[(j - 1) * d + k], phi_box.hi[(j - 1) * d + k]);
            let gap = (alo - bhi).max(blo - ahi).max(0.0);
            acc += gap * gap;
        }
        min_sep = min_sep.min(acc.sqrt());
    }
    min_sep
}

/// Checks the factorization property on a piece: the recursive pairing
/// against the directly factorized tensor pairing, as a relative residual.
///
/// The test support must keep all cross pairs of the piece separated.
pub fn factorization_check(
    amp: &AmplitudeDistribution,
    piece: &PartitionPiece,
    phi: &SmoothFunction,
) -> Result<f64> {
    let d = amp.kernel.dim();
    let phi_box = phi.support().ok_or_else(|| {
        Error::InvalidParameter("factorization check needs a compactly supported φ".into())
    })?;
    if min_cross_separation(piece, phi_box, d) <= 0.0 {
        return Err(Error::Precondition(
            "test support touches a cross-coincidence locus of the piece".into(),
        ));
    }
    let lhs = amp.pair(phi)?;
    let rhs = amp.factorized_pair(piece, phi)?;
    Ok((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(RESIDUAL_FLOOR))
}

/// Residual between the factorized pairings of two pieces on a common
/// separation region.
pub fn consistency_check(
    amp: &AmplitudeDistribution,
    piece_a: &PartitionPiece,
    piece_b: &PartitionPiece,
    phi: &SmoothFunction,
) -> Result<f64> {
    let d = amp.kernel.dim();
    let phi_box = phi.support().ok_or_else(|| {
        Error::InvalidParameter("consistency check needs a compactly supported φ".into())
    })?;
    if min_cross_separation(piece_a, phi_box, d) <= 0.0
        || min_cross_separation(piece_b, phi_box, d) <= 0.0
    {
        return Err(Error::Domain(
            "test support does not sit inside both pieces' separation regions".into(),
        ));
    }
    let va = amp.factorized_pair(piece_a, phi)?;
    let vb = amp.factorized_pair(piece_b, phi)?;
    Ok((va - vb).abs() / va.abs().max(vb.abs()).max(RESIDUAL_FLOOR))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kernel_closed_forms() {
        let g3 = GreenKernel::new(3, 0.0).unwrap();
        assert_relative_eq!(
            g3.eval(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(),
            1.0 / FOUR_PI,
            epsilon = 1e-15
        );
        let g2 = GreenKernel::new(2, 0.0).unwrap();
        assert_relative_eq!(g2.eval(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        let g1m = GreenKernel::new(1, 1.0).unwrap();
        let v = g1m.eval(&[0.0], &[1e-8]).unwrap();
        assert!((v - 0.5).abs() <= 1e-7);
        assert!(GreenKernel::new(2, 1.0).is_err());
        assert!(GreenKernel::new(4, 0.0).is_err());
    }

    #[test]
    fn kernel_symmetry_exact() {
        let g = GreenKernel::new(3, 0.7).unwrap();
        let x = [0.3, -0.2, 0.9];
        let y = [-0.5, 0.1, 0.4];
        assert_eq!(
            g.eval(&x, &y).unwrap().to_bits(),
            g.eval(&y, &x).unwrap().to_bits()
        );
    }

    #[test]
    fn kernel_jet_errors_on_diagonal() {
        let g = GreenKernel::new(3, 0.0).unwrap();
        assert!(g.jet(&[0.0; 3], &[0.0; 3], 1).is_err());
        assert!(g.jet(&[0.0; 3], &[1.0, 0.0, 0.0], 2).is_ok());
    }

    #[test]
    fn green_jet_matches_radial_derivative() {
        // ∂_{x_0} G = G'(r) (x_0 - y_0)/r for the massless 3d kernel
        let g = GreenKernel::new(3, 0.0).unwrap();
        let x = [0.6, 0.1, -0.2];
        let y = [0.0, 0.0, 0.0];
        let r = dist(&x, &y);
        let jet = g.jet(&x, &y, 1).unwrap();
        let expected = -1.0 / (FOUR_PI * r * r) * (x[0] / r);
        assert_relative_eq!(
            jet.derivative(&[1, 0, 0, 0, 0, 0]),
            expected,
            max_relative = 1e-12
        );
    }

    #[test]
    fn graph_basics() {
        let g = FeynmanGraph::new(3, &[(1, 2, 2), (2, 3, 1)]).unwrap();
        assert_eq!(g.multiplicity(1, 2), 2);
        assert_eq!(g.multiplicity(2, 1), 2);
        assert_eq!(g.multiplicity(1, 3), 0);
        assert_eq!(g.multiplicity(2, 2), 0);
        assert_eq!(g.total_edges(), 3);
        assert!(FeynmanGraph::new(2, &[(1, 1, 1)]).is_err());
        let r = g.restrict(&[2, 3]).unwrap();
        assert_eq!(r.multiplicity(1, 2), 1);
    }

    #[test]
    fn amplitude_values() {
        let k3 = GreenKernel::new(3, 0.0).unwrap();
        let g = FeynmanGraph::new(2, &[(1, 2, 2)]).unwrap();
        let cfg = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        assert_relative_eq!(
            amplitude_eval(&g, &k3, &cfg).unwrap(),
            (1.0 / FOUR_PI).powi(2),
            epsilon = 1e-16
        );
        let k1 = GreenKernel::new(1, 0.0).unwrap();
        let t = FeynmanGraph::new(3, &[(1, 2, 1), (1, 3, 1), (2, 3, 1)]).unwrap();
        let cfg1 = [0.0, 1.0, 3.0];
        assert_relative_eq!(amplitude_eval(&t, &k1, &cfg1).unwrap(), -0.75, epsilon = 1e-15);
        assert!(amplitude_eval(&t, &k1, &[0.0, 0.0, 3.0]).is_err());
    }

    #[test]
    fn green_temperedness_massless_3d() {
        let k = GreenKernel::new(3, 0.0).unwrap();
        let rep = green_temperedness_check(&k, 0, (2, 9)).unwrap();
        assert!((rep.estimate.s - 1.0).abs() <= 0.1, "s = {}", rep.estimate.s);
        assert!(rep.within_bound);
        assert_relative_eq!(rep.paper_bound, 4.0);
    }

    #[test]
    fn green_temperedness_1d_bounded() {
        let k = GreenKernel::new(1, 0.0).unwrap();
        let rep = green_temperedness_check(&k, 0, (2, 9)).unwrap();
        assert!(rep.estimate.s <= 0.1, "s = {}", rep.estimate.s);
    }

    #[test]
    fn green_temperedness_2d_first_derivative() {
        let k = GreenKernel::new(2, 0.0).unwrap();
        let rep = green_temperedness_check(&k, 1, (2, 9)).unwrap();
        assert!((rep.estimate.s - 1.0).abs() <= 0.15, "s = {}", rep.estimate.s);
        assert!(rep.within_bound);
    }

    fn quad_spec() -> QuadratureSpec {
        QuadratureSpec {
            max_depth: 26,
            ..QuadratureSpec::default()
        }
    }

    #[test]
    fn two_point_d1_continuous_kernel_is_plain() {
        // G = -|x1 - x2|/2 is continuous: the renormalized pairing equals
        // plain quadrature
        let k = GreenKernel::new(1, 0.0).unwrap();
        let g = FeynmanGraph::new(2, &[(1, 2, 1)]).unwrap();
        let schemes = SchemeLadder::uniform(2, LevelScheme::no_subtraction());
        let amp = renormalize(&g, &k, &schemes, &quad_spec(), LadderSpec::default()).unwrap();
        let phi = SmoothFunction::bump_product(&[vec![0.0], vec![0.3]], 0.5).unwrap();
        let got = amp.pair(&phi).unwrap();
        // independent oracle: iterated adaptive quadrature
        let mut outer = |x1: f64| {
            let mut inner = |x2: f64| {
                let v = phi.value(&[x1, x2]).unwrap();
                -0.5 * (x1 - x2).abs() * v
            };
            crate::oracle::integrate(&mut inner, -0.2, 0.8, 1e-11).unwrap()
        };
        let oracle = crate::oracle::integrate(&mut outer, -0.5, 0.5, 1e-10).unwrap();
        assert!((got - oracle).abs() <= 1e-8, "got {got} oracle {oracle}");
    }

    #[test]
    fn two_point_d3_integrable_matches_improper_oracle() {
        // n12 = 2: |r|^{-2} is integrable in R^3
        let k = GreenKernel::new(3, 0.0).unwrap();
        let g = FeynmanGraph::new(2, &[(1, 2, 2)]).unwrap();
        let schemes = SchemeLadder::uniform(2, LevelScheme::no_subtraction());
        let mut quad = quad_spec();
        quad.gauss_order = 5;
        quad.max_depth = 20;
        let amp = renormalize(&g, &k, &schemes, &quad, LadderSpec::new(2, 11).unwrap()).unwrap();
        // separable test data: η(|u|²) ρ(|2v|²)
        let phi = radial_pair_test_function(3, 0.6, 1.2).unwrap();
        let got = amp.pair(&phi).unwrap();
        let oracle = radial_pair_oracle(&k, 2, 0.6, 1.2, None, 1e-12).unwrap();
        assert!(
            (got - oracle).abs() <= 1e-6,
            "got {got} oracle {oracle} diff {}",
            (got - oracle).abs()
        );
    }

    #[test]
    fn three_point_d1_regular_recursion_matches_plain() {
        let k = GreenKernel::new(1, 0.0).unwrap();
        let g = FeynmanGraph::new(3, &[(1, 2, 1), (1, 3, 1), (2, 3, 1)]).unwrap();
        let schemes = SchemeLadder::uniform(3, LevelScheme::no_subtraction());
        let mut quad = quad_spec();
        quad.max_depth = 14;
        quad.gauss_order = 10;
        let amp = renormalize(&g, &k, &schemes, &quad, LadderSpec::new(2, 9).unwrap()).unwrap();
        let phi =
            SmoothFunction::bump_product(&[vec![0.0], vec![0.9], vec![2.0]], 0.3).unwrap();
        let got = amp.pair(&phi).unwrap();
        // plain amplitude integral by iterated adaptive quadrature
        let phi_ref = &phi;
        let mut f1 = |x1: f64| {
            let mut f2 = |x2: f64| {
                let mut f3 = |x3: f64| {
                    let v = phi_ref.value(&[x1, x2, x3]).unwrap();
                    if v == 0.0 {
                        return 0.0;
                    }
                    let a = -0.5 * (x1 - x2).abs();
                    let b = -0.5 * (x1 - x3).abs();
                    let c = -0.5 * (x2 - x3).abs();
                    a * b * c * v
                };
                crate::oracle::integrate(&mut f3, 1.7, 2.3, 1e-11).unwrap()
            };
            crate::oracle::integrate(&mut f2, 0.6, 1.2, 1e-10).unwrap()
        };
        let oracle = crate::oracle::integrate(&mut f1, -0.3, 0.3, 1e-9).unwrap();
        assert!(
            (got - oracle).abs() <= 1e-6 * oracle.abs().max(1.0),
            "got {got} oracle {oracle}"
        );
    }

    #[test]
    fn factorization_residual_small_for_separated_support() {
        let k = GreenKernel::new(1, 0.0).unwrap();
        let g = FeynmanGraph::new(3, &[(1, 2, 1), (1, 3, 1), (2, 3, 1)]).unwrap();
        let schemes = SchemeLadder::uniform(3, LevelScheme::no_subtraction());
        let mut quad = quad_spec();
        quad.max_depth = 14;
        quad.gauss_order = 10;
        let amp = renormalize(&g, &k, &schemes, &quad, LadderSpec::new(2, 9).unwrap()).unwrap();
        let phi =
            SmoothFunction::bump_product(&[vec![0.0], vec![0.2], vec![5.0]], 0.08).unwrap();
        let piece = PartitionPiece::new(vec![1, 2], vec![3]).unwrap();
        let residual = factorization_check(&amp, &piece, &phi).unwrap();
        assert!(residual <= 1e-3, "residual {residual}");
    }

    #[test]
    fn factorization_precondition_rejected() {
        let k = GreenKernel::new(1, 0.0).unwrap();
        let g = FeynmanGraph::new(3, &[(1, 2, 1), (1, 3, 1), (2, 3, 1)]).unwrap();
        let schemes = SchemeLadder::uniform(3, LevelScheme::no_subtraction());
        let amp =
            renormalize(&g, &k, &schemes, &quad_spec(), LadderSpec::default()).unwrap();
        // blocks 1 and 3 overlap: cross pair (1,3) of piece 13|2... use a
        // piece whose cross pairs touch
        let phi =
            SmoothFunction::bump_product(&[vec![0.0], vec![5.0], vec![0.1]], 0.2).unwrap();
        let piece = PartitionPiece::new(vec![1, 3], vec![2]).unwrap();
        // cross pairs are (1,2) and (3,2): both separated; use the piece
        // separating 1 from 3 instead
        let bad_piece = PartitionPiece::new(vec![1, 2], vec![3]).unwrap();
        assert!(factorization_check(&amp, &bad_piece, &phi).is_err());
        let _ = piece;
    }

    #[test]
    fn consistency_residual_between_pieces() {
        let k = GreenKernel::new(1, 0.0).unwrap();
        let g = FeynmanGraph::new(3, &[(1, 2, 1), (1, 3, 1), (2, 3, 1)]).unwrap();
        let schemes = SchemeLadder::uniform(3, LevelScheme::no_subtraction());
        let mut quad = quad_spec();
        quad.max_depth = 14;
        quad.gauss_order = 10;
        let amp = renormalize(&g, &k, &schemes, &quad, LadderSpec::new(2, 9).unwrap()).unwrap();
        let phi =
            SmoothFunction::bump_product(&[vec![0.0], vec![5.0], vec![10.0]], 0.2).unwrap();
        let pa = PartitionPiece::new(vec![1], vec![2, 3]).unwrap();
        let pb = PartitionPiece::new(vec![1, 2], vec![3]).unwrap();
        let residual = consistency_check(&amp, &pa, &pb, &phi).unwrap();
        assert!(residual <= 1e-3, "residual {residual}");
        // identical pieces: zero by construction
        let same = consistency_check(&amp, &pa, &pa, &phi).unwrap();
        assert_eq!(same, 0.0);
    }

    #[test]
    fn renorm_product_finite_part_of_inverse_x() {
        // f = 1/x (odd), t = 1: pairing with an even bump vanishes under a
        // symmetric window
        let origin = ClosedSet::point(vec![0.0]);
        let x = SmoothFunction::coordinate(1, 0);
        let inv_sq = SmoothFunction::power_of_distance(&origin, -2.0).unwrap();
        let f = x.product(&inv_sq).unwrap(); // 1/x = x · |x|^{-2}
        let t = RegularDist::new(
            SmoothFunction::constant(1, 1.0),
            Some(origin.clone()),
            QuadratureSpec {
                max_depth: 30,
                ..QuadratureSpec::default()
            },
        );
        let scheme = RenormScheme::taylor(origin, 0, 0.125, 0.25).unwrap();
        let ext = renorm_product(&f, &t, &scheme, LadderSpec::default()).unwrap();
        let phi = SmoothFunction::bump(&[0.0], 1.0).unwrap();
        let got = ext.pair(&phi).unwrap();
        assert!(got.abs() <= 1e-8, "got {got}");
    }

    #[test]
    fn growth_composition_is_additive() {
        // s(|x|^{-1} · |x|^{-1}) ≈ s(|x|^{-1}) + s(|x|^{-1})
        let origin = ClosedSet::point(vec![0.0]);
        let f = SmoothFunction::power_of_distance(&origin, -1.0).unwrap();
        let prod = f.product(&f).unwrap();
        let region = BoxRegion::cube(1, -1.0, 1.0);
        let sf = crate::distribution::growth_fit_function(&f, &origin, &region, 0, (2, 10))
            .unwrap()
            .s;
        let sp = crate::distribution::growth_fit_function(&prod, &origin, &region, 0, (2, 10))
            .unwrap()
            .s;
        assert!(sp <= 2.0 * sf + 0.3, "sp {sp} sf {sf}");
        assert!((sp - 2.0).abs() <= 0.2);
    }
}
