//! Axis-aligned boxes used for supports and integration domains.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a <= b)) {
            return Err(Error::InvalidParameter("box with lo > hi".into()));
        }
        Ok(BoxRegion { lo, hi })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        BoxRegion {
            lo: vec![lo; dim],
            hi: vec![hi; dim],
        }
    }

    /// Ball bounding box `center ± radius`.
    pub fn ball(center: &[f64], radius: f64) -> Self {
        BoxRegion {
            lo: center.iter().map(|c| c - radius).collect(),
            hi: center.iter().map(|c| c + radius).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(xi, (lo, hi))| *lo <= *xi && *xi <= *hi)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    pub fn half_diagonal(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| 0.25 * (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).collect()
    }

    pub fn volume(&self) -> f64 {
        self.widths().iter().product()
    }

    pub fn longest_axis(&self) -> usize {
        let w = self.widths();
        let mut best = 0;
        for (i, wi) in w.iter().enumerate() {
            if *wi > w[best] {
                best = i;
            }
        }
        best
    }

    pub fn split(&self, axis: usize) -> (BoxRegion, BoxRegion) {
        let mid = 0.5 * (self.lo[axis] + self.hi[axis]);
        let mut a = self.clone();
        let mut b = self.clone();
        a.hi[axis] = mid;
        b.lo[axis] = mid;
        (a, b)
    }

    /// Intersection; `None` when empty.
    pub fn intersect(&self, other: &BoxRegion) -> Option<BoxRegion> {
        let lo: Vec<f64> = self
            .lo
            .iter()
            .zip(&other.lo)
            .map(|(a, b)| a.max(*b))
            .collect();
        let hi: Vec<f64> = self
            .hi
            .iter()
            .zip(&other.hi)
            .map(|(a, b)| a.min(*b))
            .collect();
        if lo.iter().zip(&hi).all(|(a, b)| a <= b) {
            Some(BoxRegion { lo, hi })
        } else {
            None
        }
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &BoxRegion) -> BoxRegion {
        BoxRegion {
            lo: self
                .lo
                .iter()
                .zip(&other.lo)
                .map(|(a, b)| a.min(*b))
                .collect(),
            hi: self
                .hi
                .iter()
                .zip(&other.hi)
                .map(|(a, b)| a.max(*b))
                .collect(),
        }
    }

    /// Distance from a point to the box (0 inside).
    pub fn distance_to_point(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (xi, (lo, hi)) in x.iter().zip(self.lo.iter().zip(&self.hi)) {
            let t = if xi < lo {
                lo - xi
            } else if xi > hi {
                xi - hi
            } else {
                0.0
            };
            acc += t * t;
        }
        acc.sqrt()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| {
                if a == b {
                    *a
                } else {
                    rng.gen_range(*a..*b)
                }
            })
            .collect()
    }
}
