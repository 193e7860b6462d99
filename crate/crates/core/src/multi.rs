//! Multi-index bookkeeping shared by the jet arithmetic.
//!
//! A multi-index `k = (k_1, ..., k_dim)` labels the partial derivative
//! `∂^k = ∂_1^{k_1} ... ∂_dim^{k_dim}`. Tables enumerate all indices with
//! `|k| <= order` in graded lexicographic order and are cached per
//! `(dim, order)` pair so jet operations can look up products in O(1).

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Hard cap on the jet order supported by the toolkit.
///
/// Orders above this are rejected with [`crate::Error::JetOrderUnsupported`].
/// The cap bounds the size of the cached multi-index tables.
pub const MAX_JET_ORDER: usize = 12;

/// Maximum ambient dimension the jet tables are built for
/// (three particles in d = 3 gives a 9-dimensional configuration space).
pub const MAX_AMBIENT_DIM: usize = 9;

/// A multi-index with exponents stored inline.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct MultiIndex {
    exps: [u8; MAX_AMBIENT_DIM],
    dim: u8,
}

impl MultiIndex {
    pub fn zero(dim: usize) -> Self {
        assert!(dim <= MAX_AMBIENT_DIM);
        MultiIndex {
            exps: [0; MAX_AMBIENT_DIM],
            dim: dim as u8,
        }
    }

    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut m = Self::zero(dim);
        m.exps[axis] = 1;
        m
    }

    pub fn from_slice(exps: &[usize]) -> Self {
        assert!(exps.len() <= MAX_AMBIENT_DIM);
        let mut m = Self::zero(exps.len());
        for (i, &e) in exps.iter().enumerate() {
            m.exps[i] = e as u8;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn get(&self, axis: usize) -> usize {
        self.exps[axis] as usize
    }

    /// Total degree `|k|`.
    pub fn degree(&self) -> usize {
        self.exps[..self.dim as usize]
            .iter()
            .map(|&e| e as usize)
            .sum()
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        debug_assert_eq!(self.dim, other.dim);
        let mut m = *self;
        for i in 0..self.dim as usize {
            m.exps[i] += other.exps[i];
        }
        m
    }

    /// Componentwise difference; `None` if any component would go negative.
    pub fn checked_sub(&self, other: &MultiIndex) -> Option<MultiIndex> {
        debug_assert_eq!(self.dim, other.dim);
        let mut m = *self;
        for i in 0..self.dim as usize {
            if other.exps[i] > m.exps[i] {
                return None;
            }
            m.exps[i] -= other.exps[i];
        }
        Some(m)
    }

    /// `k! = k_1! k_2! ... k_dim!` as a float.
    pub fn factorial(&self) -> f64 {
        self.exps[..self.dim as usize]
            .iter()
            .map(|&e| FACTORIALS[e as usize])
            .product()
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.exps[..self.dim as usize]
            .iter()
            .map(|&e| e as usize)
            .collect()
    }
}

const FACTORIALS: [f64; 21] = {
    let mut f = [1.0; 21];
    let mut i = 1;
    while i < 21 {
        f[i] = f[i - 1] * i as f64;
        i += 1;
    }
    f
};

pub fn factorial(n: usize) -> f64 {
    FACTORIALS[n]
}

/// Enumeration of all multi-indices with `|k| <= order` in `dim` variables,
/// graded lexicographic, with a reverse lookup map.
pub struct IndexTable {
    pub dim: usize,
    pub order: usize,
    pub indices: Vec<MultiIndex>,
    /// `degree_offsets[s]..degree_offsets[s+1]` spans the block `|k| = s`.
    pub degree_offsets: Vec<usize>,
    rank: HashMap<MultiIndex, u32>,
}

impl IndexTable {
    fn build(dim: usize, order: usize) -> IndexTable {
        let mut indices = Vec::new();
        let mut degree_offsets = vec![0usize];
        for s in 0..=order {
            enumerate_degree(dim, s, &mut indices);
            degree_offsets.push(indices.len());
        }
        let mut rank = HashMap::with_capacity(indices.len());
        for (i, m) in indices.iter().enumerate() {
            rank.insert(*m, i as u32);
        }
        IndexTable {
            dim,
            order,
            indices,
            degree_offsets,
            rank,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn rank_of(&self, m: &MultiIndex) -> Option<usize> {
        self.rank.get(m).map(|&r| r as usize)
    }
}

/// Append all multi-indices of exact degree `s` in lexicographic order.
fn enumerate_degree(dim: usize, s: usize, out: &mut Vec<MultiIndex>) {
    fn rec(dim: usize, axis: usize, rem: usize, cur: &mut MultiIndex, out: &mut Vec<MultiIndex>) {
        if axis == dim - 1 {
            cur.exps[axis] = rem as u8;
            out.push(*cur);
            cur.exps[axis] = 0;
            return;
        }
        for e in (0..=rem).rev() {
            cur.exps[axis] = e as u8;
            rec(dim, axis + 1, rem - e, cur, out);
        }
        cur.exps[axis] = 0;
    }
    if dim == 0 {
        if s == 0 {
            out.push(MultiIndex::zero(0));
        }
        return;
    }
    let mut cur = MultiIndex::zero(dim);
    rec(dim, 0, s, &mut cur, out);
}

static TABLES: OnceLock<Mutex<HashMap<(usize, usize), Arc<IndexTable>>>> = OnceLock::new();

/// Cached table for `(dim, order)`. Thread-safe; tables are built once.
pub fn table(dim: usize, order: usize) -> Arc<IndexTable> {
    let cache = TABLES.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry((dim, order))
        .or_insert_with(|| Arc::new(IndexTable::build(dim, order)))
        .clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_sizes_match_binomials() {
        // #\{|k| <= m in dim d\} = C(d + m, d)
        let binom = |n: usize, k: usize| -> usize {
            let mut r = 1usize;
            for i in 0..k {
                r = r * (n - i) / (i + 1);
            }
            r
        };
        for (dim, order) in [(1, 8), (2, 6), (3, 5), (6, 3), (9, 2)] {
            let t = table(dim, order);
            assert_eq!(t.len(), binom(dim + order, dim));
        }
    }

    #[test]
    fn rank_roundtrip() {
        let t = table(3, 4);
        for (i, m) in t.indices.iter().enumerate() {
            assert_eq!(t.rank_of(m), Some(i));
        }
    }

    #[test]
    fn graded_ordering() {
        let t = table(2, 3);
        for w in t.indices.windows(2) {
            assert!(w[0].degree() <= w[1].degree());
        }
        assert_eq!(t.indices[0].degree(), 0);
    }

    #[test]
    fn factorials() {
        assert_eq!(factorial(0), 1.0);
        assert_eq!(factorial(5), 120.0);
        let m = MultiIndex::from_slice(&[2, 3]);
        assert_eq!(m.factorial(), 12.0);
    }
}
