//! The scaled cut-off family `χ_λ` and its complement `β_λ = 1 - χ_λ`.
//!
//! `χ_λ(x) = h(d(x, X)/λ)` with a fixed smooth nonincreasing profile `h`
//! that is 1 on `[0, 1/8]` and 0 on `[1, ∞)`. The plateau and zero zones
//! are exact to machine precision, and `|∂^k χ_λ| = O(λ^{-|k|})` wherever
//! the distance is smooth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expr::{Expr, PlateauSpec};
use crate::geometry::ClosedSet;
use crate::region::BoxRegion;
use crate::testfn::{Jet, SmoothFunction};

/// Fraction of λ below which the cutoff is identically one.
pub const PLATEAU_FRACTION: f64 = 0.125;

/// The family `χ_λ` attached to a closed set.
#[derive(Clone, Debug)]
pub struct CutoffFamily {
    set: ClosedSet,
}

impl CutoffFamily {
    pub fn new(set: ClosedSet) -> Self {
        CutoffFamily { set }
    }

    pub fn set(&self) -> &ClosedSet {
        &self.set
    }

    fn check_lambda(lambda: f64) -> Result<()> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must lie in (0, 1], got {lambda}"
            )));
        }
        Ok(())
    }

    fn plateau(&self, lambda: f64) -> PlateauSpec {
        PlateauSpec {
            set: self.set.clone(),
            r_in: lambda * PLATEAU_FRACTION,
            r_out: lambda,
        }
    }

    /// `χ_λ(x)`: exactly 1 for `d <= λ/8`, exactly 0 for `d >= λ`.
    pub fn chi(&self, lambda: f64, x: &[f64]) -> Result<f64> {
        Self::check_lambda(lambda)?;
        let d = self.set.distance(x)?;
        Ok(self.plateau(lambda).value(d))
    }

    /// `β_λ(x) = 1 - χ_λ(x)`.
    pub fn beta(&self, lambda: f64, x: &[f64]) -> Result<f64> {
        Ok(1.0 - self.chi(lambda, x)?)
    }

    /// Jet of `χ_λ` at `x` via the Taylor-mode chain rule through the
    /// profile and the distance function.
    pub fn chi_jet(&self, lambda: f64, x: &[f64], m: usize) -> Result<Jet> {
        Self::check_lambda(lambda)?;
        let e = Expr::Plateau(self.plateau(lambda));
        let tp = crate::expr::eval_jet(&e, x, m)?;
        Ok(Jet::from_taylor_pub(&tp))
    }

    /// `χ_λ` as a smooth function (for products with test functions).
    pub fn chi_fn(&self, lambda: f64) -> Result<SmoothFunction> {
        Self::check_lambda(lambda)?;
        Ok(SmoothFunction::from_expr(
            self.set.ambient_dim(),
            Expr::Plateau(self.plateau(lambda)),
            None,
        ))
    }

    /// `χ_a - χ_b` (a dyadic annulus piece) as a smooth function.
    pub fn chi_difference_fn(&self, a: f64, b: f64) -> Result<SmoothFunction> {
        Self::check_lambda(a)?;
        Self::check_lambda(b)?;
        let e = Expr::Sum(vec![
            Expr::Plateau(self.plateau(a)),
            Expr::AffineOf(0.0, -1.0, Box::new(Expr::Plateau(self.plateau(b)))),
        ]);
        Ok(SmoothFunction::from_expr(self.set.ambient_dim(), e, None))
    }
}

/// Report of the ideal-decay estimate `‖χ_λ φ‖^m_K <= C λ^n ‖φ‖_{m+n}`.
#[derive(Clone, Debug)]
pub struct DecayReport {
    /// fitted slope of `log ‖χ_λ φ‖^m_K` against `log λ`
    pub slope: f64,
    /// the sampled ladder `(λ, ‖χ_λ φ‖^m_K)`
    pub ladder: Vec<(f64, f64)>,
    /// set when every seminorm vanished (support away from the set)
    pub all_zero: bool,
}

/// Verifies `φ ∈ I^{m+n}(X)` by jet vanishing on sampled set points, then
/// fits the decay exponent of `‖χ_λ φ‖^m_K` over the dyadic λ ladder
/// `2^{-j}`, `j = j_min..=j_max`.
///
/// Contract from the cut-off lemma: the fitted slope is at least `n`
/// (within fitting slack). When all seminorms vanish, `slope` is reported
/// as `+∞` via [`DecayReport::all_zero`].
pub fn ideal_decay_check(
    fam: &CutoffFamily,
    phi: &SmoothFunction,
    m: usize,
    n: usize,
    region: &BoxRegion,
    j_range: (u32, u32),
) -> Result<DecayReport> {
    if phi.dim() != fam.set.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: fam.set.ambient_dim(),
            got: phi.dim(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidParameter("decay order n must be >= 1".into()));
    }
    // precondition: the (m+n)-jet of φ vanishes on the set
    let mut rng = ChaCha8Rng::seed_from_u64(0x1dea1);
    for p in fam.set.sample_on_set(region, 16, &mut rng) {
        let jet = phi.jet(&p, m + n - 1)?;
        if jet.max_abs() > 1e-10 {
            return Err(Error::Precondition(format!(
                "test function does not vanish to order {} on the set (|jet| = {:.3e})",
                m + n - 1,
                jet.max_abs()
            )));
        }
    }
    let (j_min, j_max) = j_range;
    let mut ladder = Vec::new();
    let mut logs = Vec::new();
    for j in j_min..=j_max {
        let lambda = 2.0f64.powi(-(j as i32));
        let prod = fam.chi_fn(lambda)?.product(phi)?;
        let s = sup_on_tube(&prod, &fam.set, region, lambda, m, 160, &mut rng)?;
        ladder.push((lambda, s));
        if s > 0.0 {
            logs.push((lambda.ln(), s.ln()));
        }
    }
    if logs.is_empty() {
        return Ok(DecayReport {
            slope: f64::INFINITY,
            ladder,
            all_zero: true,
        });
    }
    if logs.len() < 3 {
        return Err(Error::InsufficientData(
            "fewer than 3 non-zero rungs in the decay ladder".into(),
        ));
    }
    Ok(DecayReport {
        slope: fit_slope(&logs),
        ladder,
        all_zero: false,
    })
}

/// Sampled sup of `max_{|ν|<=m} |∂^ν f|` over the tube `{d(x,X) <= λ} ∩ K`.
///
/// `χ_λ f` is supported in the tube, so this is a sampled estimate of the
/// seminorm `‖χ_λ f‖^m_K`. Radii are stratified in `(0, λ]`.
fn sup_on_tube(
    f: &SmoothFunction,
    set: &ClosedSet,
    region: &BoxRegion,
    lambda: f64,
    m: usize,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut best: f64 = 0.0;
    let strata = 16usize;
    let per = (samples / strata).max(1);
    for s in 0..strata {
        let r = lambda * (s as f64 + 0.5) / strata as f64;
        for x in set.sample_at_distance(region, r, per, rng) {
            if !region.contains(&x) {
                continue;
            }
            let jet = f.jet(&x, m)?;
            best = best.max(jet.max_abs());
        }
    }
    Ok(best)
}

pub(crate) fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

impl Jet {
    pub(crate) fn from_taylor_pub(tp: &crate::taylor::TaylorPoly) -> Jet {
        Jet::from_taylor(tp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn point_family() -> CutoffFamily {
        CutoffFamily::new(ClosedSet::point(vec![0.0]))
    }

    #[test]
    fn plateau_and_zero_zone_exact() {
        let fam = point_family();
        let lambda = 0.25;
        assert_eq!(fam.chi(lambda, &[lambda / 16.0]).unwrap(), 1.0);
        assert_eq!(fam.chi(lambda, &[2.0 * lambda]).unwrap(), 0.0);
    }

    #[test]
    fn lambda_domain() {
        let fam = point_family();
        assert!(fam.chi(0.0, &[0.1]).is_err());
        assert!(fam.chi(1.5, &[0.1]).is_err());
        assert!(fam.chi(1.0, &[0.1]).is_ok());
    }

    #[test]
    fn chi_monotone_in_distance() {
        let fam = point_family();
        let lambda = 0.5;
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let d = 1e-3 + i as f64 * 0.02;
            let v = fam.chi(lambda, &[d]).unwrap();
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn exactness_sampled_per_set_type() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let sets = vec![
            ClosedSet::point(vec![0.0, 0.0]),
            ClosedSet::small_diagonal(2, 1),
            ClosedSet::big_diagonal(3, 1),
        ];
        for set in sets {
            let fam = CutoffFamily::new(set.clone());
            let bbox = BoxRegion::cube(set.ambient_dim(), -1.0, 1.0);
            for _ in 0..500 {
                let lambda = rng.gen_range(0.01..1.0);
                let x = bbox.sample(&mut rng);
                let d = set.distance(&x).unwrap();
                let v = fam.chi(lambda, &x).unwrap();
                if d <= lambda / 8.0 {
                    assert_eq!(v, 1.0);
                } else if d >= lambda {
                    assert_eq!(v, 0.0);
                } else {
                    assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }

    #[test]
    fn jet_in_plateau_and_zero_zone() {
        let fam = point_family();
        let lambda = 0.5;
        let j = fam.chi_jet(lambda, &[0.03], 4).unwrap();
        assert_eq!(j.value(), 1.0);
        assert!(j.raw()[1..].iter().all(|&c| c == 0.0));
        let j0 = fam.chi_jet(lambda, &[0.9], 4).unwrap();
        assert!(j0.raw().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn beta_limits() {
        let fam = point_family();
        let x = [0.37];
        // β_λ -> 1 pointwise off X as λ -> 0
        assert_eq!(fam.beta(0.25, &x).unwrap(), 1.0);
        assert_eq!(fam.beta(1.0, &x).unwrap(), 1.0 - fam.chi(1.0, &x).unwrap());
        // β = 0 on a neighborhood of X
        assert_eq!(fam.beta(0.5, &[0.01]).unwrap(), 0.0);
    }

    #[test]
    fn derivative_scaling_law() {
        // sup over a transition shell of |∂ χ_λ| should scale like λ^{-1}
        let fam = point_family();
        let mut logs = Vec::new();
        for j in 3..=10 {
            let lambda = 2.0f64.powi(-j);
            let mut sup: f64 = 0.0;
            for i in 0..200 {
                let d = lambda * (0.125 + 0.875 * (i as f64 + 0.5) / 200.0);
                let jet = fam.chi_jet(lambda, &[d], 1).unwrap();
                sup = sup.max(jet.derivative(&[1]).abs());
            }
            logs.push((lambda.ln(), sup.ln()));
        }
        let slope = fit_slope(&logs);
        assert!((slope + 1.0).abs() <= 0.1, "slope {slope}");
    }

    #[test]
    fn higher_derivative_blowup_bounded() {
        let fam = point_family();
        for k in 1..=3usize {
            let mut logs = Vec::new();
            for j in 3..=9 {
                let lambda = 2.0f64.powi(-j);
                let mut sup: f64 = 0.0;
                for i in 0..160 {
                    let d = lambda * (0.125 + 0.875 * (i as f64 + 0.5) / 160.0);
                    let jet = fam.chi_jet(lambda, &[d], k).unwrap();
                    sup = sup.max(jet.derivative(&vec![k]).abs());
                }
                logs.push((lambda.ln(), sup.ln()));
            }
            let slope = fit_slope(&logs);
            assert!(slope >= -(k as f64) - 0.1, "k={k} slope {slope}");
        }
    }

    #[test]
    fn ideal_decay_x2_bump() {
        let fam = point_family();
        let phi = SmoothFunction::bump_with_prefactor(&[0.0], 1.0, vec![(vec![2], 1.0)]).unwrap();
        let report = ideal_decay_check(
            &fam,
            &phi,
            0,
            2,
            &BoxRegion::cube(1, -1.0, 1.0),
            (3, 10),
        )
        .unwrap();
        assert!(report.slope >= 1.8, "slope {}", report.slope);
    }

    #[test]
    fn ideal_decay_x_bump() {
        let fam = point_family();
        let phi = SmoothFunction::bump_with_prefactor(&[0.0], 1.0, vec![(vec![1], 1.0)]).unwrap();
        let report = ideal_decay_check(
            &fam,
            &phi,
            0,
            1,
            &BoxRegion::cube(1, -1.0, 1.0),
            (3, 10),
        )
        .unwrap();
        assert!(report.slope >= 0.8, "slope {}", report.slope);
    }

    #[test]
    fn ideal_decay_supported_away_is_infinite() {
        let fam = point_family();
        let phi = SmoothFunction::bump(&[3.0], 0.5).unwrap();
        let report = ideal_decay_check(
            &fam,
            &phi,
            0,
            1,
            &BoxRegion::cube(1, -4.0, 4.0),
            (3, 8),
        )
        .unwrap();
        assert!(report.all_zero);
        assert!(report.slope.is_infinite());
    }

    #[test]
    fn ideal_decay_precondition_enforced() {
        let fam = point_family();
        // a plain bump does not vanish at the origin
        let phi = SmoothFunction::bump(&[0.0], 1.0).unwrap();
        assert!(matches!(
            ideal_decay_check(&fam, &phi, 0, 1, &BoxRegion::cube(1, -1.0, 1.0), (3, 8)),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn chi_jet_on_big_diagonal_tie_is_error_off_plateau() {
        let fam = CutoffFamily::new(ClosedSet::big_diagonal(3, 1));
        // equidistant from branches {1,2} and {2,3}, outside the plateau
        let x = [0.0, 0.4, 0.8];
        let lambda = 0.9;
        let d = fam.set.distance(&x).unwrap();
        assert!(d > lambda / 8.0 && d < lambda);
        assert!(fam.chi_jet(lambda, &x, 1).is_err());
        // the value itself is still defined
        assert!(fam.chi(lambda, &x).is_ok());
    }

    #[test]
    fn dyadic_annulus_support() {
        let fam = point_family();
        let ann = fam.chi_difference_fn(0.5, 0.25).unwrap();
        // zero inside the smaller plateau and outside the larger support
        assert_eq!(ann.value(&[0.01]).unwrap(), 0.0);
        assert_eq!(ann.value(&[0.6]).unwrap(), 0.0);
        assert!(ann.value(&[0.3]).unwrap() > 0.0);
        assert_relative_eq!(
            ann.value(&[0.2]).unwrap(),
            fam.chi(0.5, &[0.2]).unwrap() - fam.chi(0.25, &[0.2]).unwrap()
        );
    }
}
