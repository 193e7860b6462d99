//! Closed singular sets with exact distance functions, configuration-space
//! diagonals, the separation cover, and the tempered partition of unity.

use rand::Rng;

use crate::error::{Error, Result};
use crate::expr::{Expr, Poly, Profile};
use crate::region::BoxRegion;
use crate::taylor::TaylorPoly;
use crate::testfn::SmoothFunction;

/// Relative margin below which two branch distances of a big diagonal are
/// considered tied, making the distance function non-smooth there.
const BRANCH_TIE_MARGIN: f64 = 1e-10;

/// A closed subset of Euclidean space with an exact distance function.
///
/// Configuration-space variants view `R^{n·d}` as `n` particles in `R^d`,
/// stored as consecutive coordinate blocks.
#[derive(Clone, Debug, PartialEq)]
pub enum ClosedSet {
    /// A single point in `R^d`.
    Point { p: Vec<f64> },
    /// Affine subspace `base + span(directions)` with orthonormal directions.
    AffineSubspace {
        base: Vec<f64>,
        directions: Vec<Vec<f64>>,
    },
    /// Small diagonal `d_n = {x_1 = x_2 = ... = x_n}` in `(R^d)^n`.
    SmallDiagonal { n: usize, d: usize },
    /// Big diagonal `D_n = {x_i = x_j for some i != j}` in `(R^d)^n`.
    BigDiagonal { n: usize, d: usize },
}

impl ClosedSet {
    pub fn point(p: impl Into<Vec<f64>>) -> Self {
        ClosedSet::Point { p: p.into() }
    }

    /// Affine subspace; the spanning directions are checked for
    /// orthonormality.
    pub fn affine(base: Vec<f64>, directions: Vec<Vec<f64>>) -> Result<Self> {
        let dim = base.len();
        for v in &directions {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
        }
        for (i, u) in directions.iter().enumerate() {
            for (j, v) in directions.iter().enumerate() {
                let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(
                        "affine directions must be orthonormal".into(),
                    ));
                }
            }
        }
        Ok(ClosedSet::AffineSubspace { base, directions })
    }

    pub fn small_diagonal(n: usize, d: usize) -> Self {
        ClosedSet::SmallDiagonal { n, d }
    }

    pub fn big_diagonal(n: usize, d: usize) -> Self {
        ClosedSet::BigDiagonal { n, d }
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            ClosedSet::Point { p } => p.len(),
            ClosedSet::AffineSubspace { base, .. } => base.len(),
            ClosedSet::SmallDiagonal { n, d } | ClosedSet::BigDiagonal { n, d } => n * d,
        }
    }

    /// Codimension of the (smooth part of the) set.
    pub fn codim(&self) -> usize {
        match self {
            ClosedSet::Point { p } => p.len(),
            ClosedSet::AffineSubspace { base, directions } => base.len() - directions.len(),
            ClosedSet::SmallDiagonal { n, d } => (n - 1) * d,
            ClosedSet::BigDiagonal { d, .. } => *d,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.ambient_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Exact Euclidean distance to the set.
    pub fn distance(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.distance_unchecked(x))
    }

    pub(crate) fn distance_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            ClosedSet::Point { p } => norm_diff(x, p),
            ClosedSet::AffineSubspace { .. } => {
                let pr = self.project_unchecked(x);
                norm_diff(x, &pr)
            }
            ClosedSet::SmallDiagonal { n, d } => {
                let mean = block_mean(x, *n, *d);
                let mut acc = 0.0;
                for i in 0..*n {
                    for k in 0..*d {
                        let t = x[i * d + k] - mean[k];
                        acc += t * t;
                    }
                }
                acc.sqrt()
            }
            ClosedSet::BigDiagonal { n, d } => {
                let mut best = f64::INFINITY;
                for i in 0..*n {
                    for j in (i + 1)..*n {
                        let mut acc = 0.0;
                        for k in 0..*d {
                            let t = x[i * d + k] - x[j * d + k];
                            acc += t * t;
                        }
                        best = best.min((acc / 2.0).sqrt());
                    }
                }
                best
            }
        }
    }

    /// Nearest point of the set (for the big diagonal, of the nearest
    /// pairwise branch).
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.project_unchecked(x))
    }

    pub(crate) fn project_unchecked(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ClosedSet::Point { p } => p.clone(),
            ClosedSet::AffineSubspace { base, directions } => {
                let mut out = base.clone();
                for e in directions {
                    let t: f64 = x.iter().zip(base).zip(e).map(|((xi, bi), ei)| (xi - bi) * ei).sum();
                    for (o, ei) in out.iter_mut().zip(e) {
                        *o += t * ei;
                    }
                }
                out
            }
            ClosedSet::SmallDiagonal { n, d } => {
                let mean = block_mean(x, *n, *d);
                let mut out = Vec::with_capacity(n * d);
                for _ in 0..*n {
                    out.extend_from_slice(&mean);
                }
                out
            }
            ClosedSet::BigDiagonal { n, d } => {
                let (i, j, _) = self.nearest_branch(x).expect("n >= 2");
                let mut out = x.to_vec();
                for k in 0..*d {
                    let m = 0.5 * (x[i * d + k] + x[j * d + k]);
                    out[i * d + k] = m;
                    out[j * d + k] = m;
                }
                let _ = n;
                out
            }
        }
    }

    fn nearest_branch(&self, x: &[f64]) -> Option<(usize, usize, f64)> {
        if let ClosedSet::BigDiagonal { n, d } = self {
            let mut best: Option<(usize, usize, f64)> = None;
            for i in 0..*n {
                for j in (i + 1)..*n {
                    let mut acc = 0.0;
                    for k in 0..*d {
                        let t = x[i * d + k] - x[j * d + k];
                        acc += t * t;
                    }
                    let dist = (acc / 2.0).sqrt();
                    if best.map_or(true, |(_, _, b)| dist < b) {
                        best = Some((i, j, dist));
                    }
                }
            }
            best
        } else {
            None
        }
    }

    /// Polynomial `q` with `d(x, set) = sqrt(q(x))` valid on a neighborhood
    /// of `x`. For the big diagonal this resolves the nearest pairwise
    /// branch and fails on (numerical) branch ties, where the distance is
    /// not smooth.
    pub(crate) fn sq_dist_poly_near(&self, x: &[f64]) -> Result<Poly> {
        let dim = self.ambient_dim();
        match self {
            ClosedSet::Point { p } => {
                let mut q = Poly::zero(dim);
                for (i, &pi) in p.iter().enumerate() {
                    q = q.add(&Poly::linear(dim, i, 1.0, -pi).mul_poly(&Poly::linear(dim, i, 1.0, -pi)));
                }
                Ok(q)
            }
            ClosedSet::AffineSubspace { base, directions } => {
                // |x-b|^2 - sum_j <x-b, e_j>^2
                let mut q = Poly::zero(dim);
                for (i, &bi) in base.iter().enumerate() {
                    let l = Poly::linear(dim, i, 1.0, -bi);
                    q = q.add(&l.mul_poly(&l));
                }
                for e in directions {
                    let mut proj = Poly::zero(dim);
                    for (i, (&ei, &bi)) in e.iter().zip(base).enumerate() {
                        if ei != 0.0 {
                            proj = proj.add(&Poly::linear(dim, i, ei, -ei * bi));
                        }
                    }
                    q = q.sub(&proj.mul_poly(&proj));
                }
                Ok(q)
            }
            ClosedSet::SmallDiagonal { n, d } => {
                // sum_i |x_i - mean|^2
                let mut q = Poly::zero(dim);
                let inv_n = 1.0 / *n as f64;
                for i in 0..*n {
                    for k in 0..*d {
                        // x_{i,k} - mean_k as a linear polynomial
                        let mut l = Poly::zero(dim);
                        for j in 0..*n {
                            let c = if j == i { 1.0 - inv_n } else { -inv_n };
                            l = l.add(&Poly::linear(dim, j * d + k, c, 0.0));
                        }
                        q = q.add(&l.mul_poly(&l));
                    }
                }
                Ok(q)
            }
            ClosedSet::BigDiagonal { n: _, d } => {
                self.check_dim(x)?;
                let (i, j, best) = self.nearest_branch(x).unwrap();
                // require a clear margin to the second-nearest branch
                let mut second = f64::INFINITY;
                if let ClosedSet::BigDiagonal { n, d } = self {
                    for a in 0..*n {
                        for b in (a + 1)..*n {
                            if (a, b) == (i, j) {
                                continue;
                            }
                            let mut acc = 0.0;
                            for k in 0..*d {
                                let t = x[a * d + k] - x[b * d + k];
                                acc += t * t;
                            }
                            second = second.min((acc / 2.0).sqrt());
                        }
                    }
                }
                if second - best <= BRANCH_TIE_MARGIN * (1.0 + best) {
                    return Err(Error::SingularLocus(
                        "big-diagonal distance is not smooth at a branch tie".into(),
                    ));
                }
                // q = |x_i - x_j|^2 / 2
                let mut q = Poly::zero(dim);
                for k in 0..*d {
                    let mut l = Poly::linear(dim, i * d + k, 1.0, 0.0);
                    l = l.add(&Poly::linear(dim, j * d + k, -1.0, 0.0));
                    q = q.add(&l.mul_poly(&l).scale(0.5));
                }
                Ok(q)
            }
        }
    }

    /// Orthogonal projection applied to jets (the projection is affine, so
    /// this is exact on Taylor expansions).
    pub(crate) fn project_taylor(&self, seeds: &[TaylorPoly]) -> Result<Vec<TaylorPoly>> {
        let x0: Vec<f64> = seeds.iter().map(|s| s.value()).collect();
        self.check_dim(&x0)?;
        let jd = seeds[0].dim();
        let jo = seeds[0].order();
        match self {
            ClosedSet::Point { p } => {
                Ok(p.iter().map(|&c| TaylorPoly::constant(jd, jo, c)).collect())
            }
            ClosedSet::AffineSubspace { base, directions } => {
                let mut out: Vec<TaylorPoly> = base
                    .iter()
                    .map(|&c| TaylorPoly::constant(jd, jo, c))
                    .collect();
                for e in directions {
                    // t = <x - b, e>
                    let mut t = TaylorPoly::constant(jd, jo, 0.0);
                    for ((s, &bi), &ei) in seeds.iter().zip(base).zip(e) {
                        if ei != 0.0 {
                            t = t.add(&s.add_scalar(-bi).scale(ei));
                        }
                    }
                    for (o, &ei) in out.iter_mut().zip(e) {
                        if ei != 0.0 {
                            *o = o.add(&t.scale(ei));
                        }
                    }
                }
                Ok(out)
            }
            ClosedSet::SmallDiagonal { n, d } => {
                let inv_n = 1.0 / *n as f64;
                let mut mean: Vec<TaylorPoly> = Vec::with_capacity(*d);
                for k in 0..*d {
                    let mut m = TaylorPoly::constant(jd, jo, 0.0);
                    for i in 0..*n {
                        m = m.add(&seeds[i * d + k]);
                    }
                    mean.push(m.scale(inv_n));
                }
                let mut out = Vec::with_capacity(n * d);
                for _ in 0..*n {
                    out.extend(mean.iter().cloned());
                }
                Ok(out)
            }
            ClosedSet::BigDiagonal { .. } => Err(Error::SingularLocus(
                "transverse Taylor projection along the big diagonal is only \
                 available through the recursion"
                    .into(),
            )),
        }
    }

    /// Deterministic sample of points lying on the set, inside (the
    /// projection of) the given box.
    pub fn sample_on_set(&self, bbox: &BoxRegion, count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        match self {
            ClosedSet::Point { p } => vec![p.clone(); 1],
            ClosedSet::AffineSubspace { .. } | ClosedSet::SmallDiagonal { .. } => (0..count)
                .map(|_| {
                    let x = bbox.sample(rng);
                    self.project_unchecked(&x)
                })
                .collect(),
            ClosedSet::BigDiagonal { .. } => (0..count)
                .map(|_| {
                    let x = bbox.sample(rng);
                    self.project_unchecked(&x)
                })
                .collect(),
        }
    }

    /// Points at exact distance `r` from the set, near the box.
    pub fn sample_at_distance(
        &self,
        bbox: &BoxRegion,
        r: f64,
        count: usize,
        rng: &mut impl Rng,
    ) -> Vec<Vec<f64>> {
        let on_set = self.sample_on_set(bbox, count, rng);
        let mut out = Vec::with_capacity(count);
        for base in on_set.iter().cycle().take(count) {
            let dir = self.transverse_unit(base, rng);
            let x: Vec<f64> = base.iter().zip(&dir).map(|(b, u)| b + r * u).collect();
            out.push(x);
        }
        out
    }

    /// A unit vector orthogonal to the set at a base point, so that
    /// `base + r * unit` has distance exactly `r`.
    fn transverse_unit(&self, base: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        let dim = self.ambient_dim();
        match self {
            ClosedSet::Point { .. } => random_unit(dim, rng),
            ClosedSet::AffineSubspace { directions, .. } => {
                // random vector minus its tangential components
                loop {
                    let mut v = random_unit(dim, rng);
                    for e in directions {
                        let t: f64 = v.iter().zip(e).map(|(a, b)| a * b).sum();
                        for (vi, ei) in v.iter_mut().zip(e) {
                            *vi -= t * ei;
                        }
                    }
                    let n = norm(&v);
                    if n > 1e-8 {
                        for vi in v.iter_mut() {
                            *vi /= n;
                        }
                        return v;
                    }
                }
            }
            ClosedSet::SmallDiagonal { n, d } => {
                // mean-free block vector
                loop {
                    let mut v = random_unit(dim, rng);
                    let mean = block_mean(&v, *n, *d);
                    for i in 0..*n {
                        for k in 0..*d {
                            v[i * d + k] -= mean[k];
                        }
                    }
                    let nr = norm(&v);
                    if nr > 1e-8 {
                        for vi in v.iter_mut() {
                            *vi /= nr;
                        }
                        return v;
                    }
                }
            }
            ClosedSet::BigDiagonal { n, d } => {
                // offset transversally to the branch whose points coincide
                let (i, j) = {
                    let mut found = (0usize, 1usize);
                    'outer: for a in 0..*n {
                        for b in (a + 1)..*n {
                            let mut acc = 0.0;
                            for k in 0..*d {
                                let t = base[a * d + k] - base[b * d + k];
                                acc += t * t;
                            }
                            if acc < 1e-20 {
                                found = (a, b);
                                break 'outer;
                            }
                        }
                    }
                    found
                };
                let delta = random_unit(*d, rng);
                let mut v = vec![0.0; dim];
                let s = 1.0 / (2.0f64).sqrt();
                for k in 0..*d {
                    v[i * d + k] = s * delta[k];
                    v[j * d + k] = -s * delta[k];
                }
                v
            }
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn norm_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

fn block_mean(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for k in 0..d {
            mean[k] += x[i * d + k];
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    mean
}

fn random_unit(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = norm(&v);
        if n > 1e-3 {
            return v.into_iter().map(|a| a / n).collect();
        }
    }
}

// ---------------------------------------------------------------------------
// Partition pieces and the separation cover
// ---------------------------------------------------------------------------

/// An unordered nontrivial partition `I_1 ⊔ I_2 = {1..n}`, stored with
/// particle labels (1-based) and canonicalized so that `1 ∈ I_1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PartitionPiece {
    i1: Vec<usize>,
    i2: Vec<usize>,
}

impl PartitionPiece {
    pub fn new(mut i1: Vec<usize>, mut i2: Vec<usize>) -> Result<Self> {
        if i1.is_empty() || i2.is_empty() {
            return Err(Error::InvalidParameter(
                "both sides of a partition piece must be nonempty".into(),
            ));
        }
        i1.sort_unstable();
        i2.sort_unstable();
        if i2[0] < i1[0] {
            std::mem::swap(&mut i1, &mut i2);
        }
        for w in i1.iter().chain(&i2) {
            if *w == 0 {
                return Err(Error::InvalidParameter("labels are 1-based".into()));
            }
        }
        Ok(PartitionPiece { i1, i2 })
    }

    pub fn left(&self) -> &[usize] {
        &self.i1
    }

    pub fn right(&self) -> &[usize] {
        &self.i2
    }

    pub fn n(&self) -> usize {
        self.i1.len() + self.i2.len()
    }

    /// Every cross pair `(i, j) ∈ I_1 × I_2`.
    pub fn cross_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.i1.len() * self.i2.len());
        for &i in &self.i1 {
            for &j in &self.i2 {
                out.push((i, j));
            }
        }
        out
    }

    pub fn label(&self) -> String {
        let fmt = |v: &[usize]| {
            v.iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join("")
        };
        format!("{}|{}", fmt(&self.i1), fmt(&self.i2))
    }

    /// Exact membership in `C_{I1 I2}`: all cross pairs distinct.
    pub fn contains(&self, cfg: &[f64], d: usize) -> bool {
        for (i, j) in self.cross_pairs() {
            let a = &cfg[(i - 1) * d..i * d];
            let b = &cfg[(j - 1) * d..j * d];
            if a == b {
                return false;
            }
        }
        true
    }

    /// Thresholded membership: the normalized cross-separation
    /// `min |x_i - x_j| / |h|` exceeds `sigma0`, where `h` is the
    /// center-of-mass offset vector.
    pub fn contains_thresholded(&self, cfg: &[f64], d: usize, sigma0: f64) -> bool {
        let n = self.n();
        let mean = block_mean(cfg, n, d);
        let mut hn = 0.0;
        for i in 0..n {
            for k in 0..d {
                let t = cfg[i * d + k] - mean[k];
                hn += t * t;
            }
        }
        let hn = hn.sqrt();
        if hn == 0.0 {
            return false;
        }
        let mut min_sep = f64::INFINITY;
        for (i, j) in self.cross_pairs() {
            let a = &cfg[(i - 1) * d..i * d];
            let b = &cfg[(j - 1) * d..j * d];
            min_sep = min_sep.min(norm_diff(a, b));
        }
        min_sep / hn > sigma0
    }
}

/// All `2^{n-1} - 1` unordered nontrivial partitions of `{1..n}`,
/// canonically ordered and free of duplicates.
pub fn cover_pieces(n: usize) -> Result<Vec<PartitionPiece>> {
    if n < 2 {
        return Err(Error::Domain("cover requires n >= 2".into()));
    }
    if n > 16 {
        return Err(Error::InvalidParameter("n too large".into()));
    }
    let full: u32 = (1 << n) - 1;
    let mut out = Vec::with_capacity((1 << (n - 1)) - 1);
    for mask in 1..full {
        if mask & 1 == 0 {
            continue; // canonical: label 1 on the left
        }
        let mut i1 = Vec::new();
        let mut i2 = Vec::new();
        for v in 1..=n {
            if mask & (1 << (v - 1)) != 0 {
                i1.push(v);
            } else {
                i2.push(v);
            }
        }
        out.push(PartitionPiece { i1, i2 });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Tempered partition of unity subordinated to the cover
// ---------------------------------------------------------------------------

/// Default lower cut for the normalized cross-separation.
pub fn default_sharpness(n: usize) -> f64 {
    1.0 / (4.0 * n as f64)
}

/// Partition of unity `{χ_{I1 I2}}` on `(R^d)^n \ d_n`, subordinated to the
/// separation cover and tempered along the small diagonal.
///
/// Piece weights depend only on the direction `h/|h|` of the center-of-mass
/// offsets: the raw score of a piece is the product over its cross pairs of
/// a smooth cut of the normalized separation `|x_i - x_j| / |h|`, rising
/// from 0 at `sigma0` to 1 at `2 sigma0`; weights are the scores normalized
/// to sum to one.
pub struct TemperedPartition {
    n: usize,
    d: usize,
    sigma0: f64,
    pieces: Vec<PartitionPiece>,
    weight_fns: Vec<SmoothFunction>,
}

/// Builds the tempered partition for `n` particles in dimension `d`.
///
/// `sharpness` is the lower cut `sigma0` (default `1/(4n)`).
pub fn tempered_partition(n: usize, d: usize, sharpness: Option<f64>) -> Result<TemperedPartition> {
    if n < 2 {
        return Err(Error::Domain("partition requires n >= 2".into()));
    }
    if d < 1 {
        return Err(Error::Domain("dimension must be >= 1".into()));
    }
    let sigma0 = sharpness.unwrap_or_else(|| default_sharpness(n));
    if !(sigma0 > 0.0) {
        return Err(Error::InvalidParameter("sharpness must be positive".into()));
    }
    let pieces = cover_pieces(n)?;
    let scores: Vec<Expr> = pieces
        .iter()
        .map(|p| score_expr(p, n, d, sigma0))
        .collect();
    let total = Expr::Sum(scores.clone());
    let weight_fns = scores
        .into_iter()
        .map(|s| {
            SmoothFunction::from_expr(
                n * d,
                Expr::Div(Box::new(s), Box::new(total.clone())),
                None,
            )
        })
        .collect();
    Ok(TemperedPartition {
        n,
        d,
        sigma0,
        pieces,
        weight_fns,
    })
}

/// Raw score of a piece: product over cross pairs of
/// `S((|x_i-x_j|^2/|h|^2 - sigma0^2) / (3 sigma0^2))`.
fn score_expr(piece: &PartitionPiece, n: usize, d: usize, sigma0: f64) -> Expr {
    let dim = n * d;
    let hh = sq_com_norm_poly(n, d); // |h|^2
    let s0sq = sigma0 * sigma0;
    let mut factors = Vec::new();
    for (i, j) in piece.cross_pairs() {
        let qij = sq_pair_sep_poly(n, d, i - 1, j - 1); // |x_i - x_j|^2
        // u = q_ij / |h|^2, cut = S((u - s0^2)/(3 s0^2))
        let u = Expr::Div(Box::new(Expr::Poly(qij)), Box::new(Expr::Poly(hh.clone())));
        let v = Expr::AffineOf(
            -s0sq / (3.0 * s0sq),
            1.0 / (3.0 * s0sq),
            Box::new(u),
        );
        factors.push(Expr::Profile(Profile::SmoothStep, Box::new(v)));
    }
    let _ = dim;
    Expr::Prod(factors)
}

/// `|h|^2 = Σ_i |x_i - mean|^2` as a polynomial on `R^{n d}`.
pub(crate) fn sq_com_norm_poly(n: usize, d: usize) -> Poly {
    let dim = n * d;
    let inv_n = 1.0 / n as f64;
    let mut q = Poly::zero(dim);
    for i in 0..n {
        for k in 0..d {
            let mut l = Poly::zero(dim);
            for j in 0..n {
                let c = if j == i { 1.0 - inv_n } else { -inv_n };
                l = l.add(&Poly::linear(dim, j * d + k, c, 0.0));
            }
            q = q.add(&l.mul_poly(&l));
        }
    }
    q
}

/// `|x_i - x_j|^2` as a polynomial on `R^{n d}` (0-based block indices).
pub(crate) fn sq_pair_sep_poly(n: usize, d: usize, i: usize, j: usize) -> Poly {
    let dim = n * d;
    let mut q = Poly::zero(dim);
    for k in 0..d {
        let mut l = Poly::linear(dim, i * d + k, 1.0, 0.0);
        l = l.add(&Poly::linear(dim, j * d + k, -1.0, 0.0));
        q = q.add(&l.mul_poly(&l));
    }
    q
}

impl TemperedPartition {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn sharpness(&self) -> f64 {
        self.sigma0
    }

    pub fn pieces(&self) -> &[PartitionPiece] {
        &self.pieces
    }

    /// Weight function of a piece as a smooth function on `R^{n d}`,
    /// evaluable with jets off the small diagonal.
    pub fn weight_fn(&self, piece_index: usize) -> &SmoothFunction {
        &self.weight_fns[piece_index]
    }

    /// All piece weights at a configuration off the small diagonal.
    pub fn weights_at(&self, cfg: &[f64]) -> Result<Vec<f64>> {
        if cfg.len() != self.n * self.d {
            return Err(Error::DimensionMismatch {
                expected: self.n * self.d,
                got: cfg.len(),
            });
        }
        let mean = block_mean(cfg, self.n, self.d);
        let mut hsq = 0.0;
        for i in 0..self.n {
            for k in 0..self.d {
                let t = cfg[i * self.d + k] - mean[k];
                hsq += t * t;
            }
        }
        if hsq == 0.0 {
            return Err(Error::SingularLocus(
                "configuration lies on the small diagonal".into(),
            ));
        }
        let s0sq = self.sigma0 * self.sigma0;
        let mut scores = Vec::with_capacity(self.pieces.len());
        for p in &self.pieces {
            let mut score = 1.0;
            for (i, j) in p.cross_pairs() {
                let a = &cfg[(i - 1) * self.d..i * self.d];
                let b = &cfg[(j - 1) * self.d..j * self.d];
                let qij: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                let u = qij / hsq;
                score *= crate::taylor::smoothstep((u - s0sq) / (3.0 * s0sq));
                if score == 0.0 {
                    break;
                }
            }
            scores.push(score);
        }
        let total: f64 = scores.iter().sum();
        if total <= 0.0 {
            return Err(Error::Inconsistent(
                "no piece received positive score; sharpness too large".into(),
            ));
        }
        Ok(scores.into_iter().map(|s| s / total).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn point_distance() {
        let s = ClosedSet::point(vec![0.0]);
        assert_relative_eq!(s.distance(&[3.0]).unwrap(), 3.0);
        assert!(s.distance(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn small_diagonal_two_particles() {
        let s = ClosedSet::small_diagonal(2, 1);
        let d = s.distance(&[1.0, 0.0]).unwrap();
        assert_relative_eq!(d, 1.0 / 2.0_f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn small_diagonal_matches_brute_force() {
        // DERIVED oracle: minimize |x - (s,s,s)| over a dense grid of s.
        let s = ClosedSet::small_diagonal(3, 1);
        let x = [0.0f64, 1.0, 2.0];
        let mut best = f64::INFINITY;
        let mut t = -5.0f64;
        while t <= 5.0 {
            let d = ((x[0] - t).powi(2) + (x[1] - t).powi(2) + (x[2] - t).powi(2)).sqrt();
            best = best.min(d);
            t += 1e-5;
        }
        assert_relative_eq!(s.distance(&x).unwrap(), best, epsilon = 1e-9);
    }

    #[test]
    fn affine_distance_line_in_r3() {
        // line through origin along e1: distance of (1,2,2) is |(0,2,2)| = 2√2
        let s = ClosedSet::affine(vec![0.0; 3], vec![vec![1.0, 0.0, 0.0]]).unwrap();
        assert_relative_eq!(
            s.distance(&[1.0, 2.0, 2.0]).unwrap(),
            (8.0f64).sqrt(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn affine_rejects_non_orthonormal() {
        assert!(ClosedSet::affine(vec![0.0; 2], vec![vec![1.0, 1.0]]).is_err());
    }

    #[test]
    fn big_diagonal_distance_is_min_over_pairs() {
        let s = ClosedSet::big_diagonal(3, 1);
        let d = s.distance(&[0.0, 0.1, 5.0]).unwrap();
        assert_relative_eq!(d, 0.1 / 2.0_f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn lipschitz_property_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sets = vec![
            ClosedSet::point(vec![0.5, -0.5]),
            ClosedSet::small_diagonal(2, 1),
            ClosedSet::big_diagonal(3, 1),
        ];
        for s in sets {
            let dim = s.ambient_dim();
            for _ in 0..200 {
                let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let y: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let dx = s.distance(&x).unwrap();
                let dy = s.distance(&y).unwrap();
                let sep: f64 = x
                    .iter()
                    .zip(&y)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!((dx - dy).abs() <= sep + 1e-12);
            }
        }
    }

    #[test]
    fn cover_piece_counts() {
        assert_eq!(cover_pieces(2).unwrap().len(), 1);
        assert_eq!(cover_pieces(3).unwrap().len(), 3);
        assert_eq!(cover_pieces(4).unwrap().len(), 7);
        assert!(cover_pieces(1).is_err());
    }

    #[test]
    fn n3_pieces_are_the_expected_ones() {
        let pieces = cover_pieces(3).unwrap();
        let labels: Vec<String> = pieces.iter().map(|p| p.label()).collect();
        assert!(labels.contains(&"1|23".to_string()));
        assert!(labels.contains(&"13|2".to_string()));
        assert!(labels.contains(&"12|3".to_string()));
    }

    #[test]
    fn piece_contains_examples() {
        let p = PartitionPiece::new(vec![1, 2], vec![3]).unwrap();
        assert!(p.contains(&[0.0, 0.0, 1.0], 1));
        assert!(!p.contains(&[0.0, 1.0, 0.0], 1));
        assert!(!p.contains(&[0.0, 1.0, 1.0], 1));
    }

    #[test]
    fn cover_property_random_configurations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 2..=4usize {
            let pieces = cover_pieces(n).unwrap();
            for _ in 0..2500 {
                let cfg: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                // skip configurations on the small diagonal
                if cfg.windows(2).all(|w| w[0] == w[1]) {
                    continue;
                }
                assert!(pieces.iter().any(|p| p.contains(&cfg, 1)));
            }
        }
    }

    #[test]
    fn partition_weights_sum_to_one() {
        let part = tempered_partition(3, 1, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let cfg: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let hsq: f64 = {
                let m = (cfg[0] + cfg[1] + cfg[2]) / 3.0;
                cfg.iter().map(|x| (x - m) * (x - m)).sum()
            };
            if hsq < 1e-6 {
                continue;
            }
            let w = part.weights_at(&cfg).unwrap();
            let sum: f64 = w.iter().sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
            assert!(w.iter().all(|&x| (0.0..=1.0 + 1e-12).contains(&x)));
        }
    }

    #[test]
    fn partition_weights_example_cfg() {
        let part = tempered_partition(3, 1, None).unwrap();
        let w = part.weights_at(&[0.0, 0.0, 1.0]).unwrap();
        // the piece separating {1,2} from {3} must dominate
        let idx_12_3 = part
            .pieces()
            .iter()
            .position(|p| p.label() == "12|3")
            .unwrap();
        for (i, &wi) in w.iter().enumerate() {
            if i != idx_12_3 {
                assert!(w[idx_12_3] >= wi);
            }
        }
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        // pieces splitting 1 from 2 vanish: x_1 = x_2 exactly
        let idx_1_23 = part
            .pieces()
            .iter()
            .position(|p| p.label() == "1|23")
            .unwrap();
        assert_eq!(w[idx_1_23], 0.0);
    }

    #[test]
    fn partition_scale_invariance() {
        let part = tempered_partition(3, 1, None).unwrap();
        let cfg = [0.3, -0.2, 0.9];
        let mean = (cfg[0] + cfg[1] + cfg[2]) / 3.0;
        let lam = 1e-3;
        let scaled: Vec<f64> = cfg.iter().map(|x| mean + lam * (x - mean)).collect();
        let w1 = part.weights_at(&cfg).unwrap();
        let w2 = part.weights_at(&scaled).unwrap();
        for (a, b) in w1.iter().zip(&w2) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn partition_on_diagonal_errors() {
        let part = tempered_partition(2, 1, None).unwrap();
        assert!(part.weights_at(&[0.7, 0.7]).is_err());
    }

    #[test]
    fn n2_weight_is_identically_one() {
        let part = tempered_partition(2, 1, None).unwrap();
        let w = part.weights_at(&[0.0, 1e-6]).unwrap();
        assert_eq!(w.len(), 1);
        assert_relative_eq!(w[0], 1.0);
    }

    #[test]
    fn sample_at_distance_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sets = vec![
            ClosedSet::point(vec![0.0, 0.0]),
            ClosedSet::small_diagonal(3, 1),
            ClosedSet::big_diagonal(3, 1),
        ];
        for s in sets {
            let bbox = BoxRegion::cube(s.ambient_dim(), -1.0, 1.0);
            for r in [0.5, 0.03] {
                for x in s.sample_at_distance(&bbox, r, 8, &mut rng) {
                    let d = s.distance(&x).unwrap();
                    assert_relative_eq!(d, r, max_relative = 1e-9);
                }
            }
        }
    }
}
