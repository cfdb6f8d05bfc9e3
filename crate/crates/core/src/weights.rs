//! Weight vectors and the three feasible sets they live in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSet {
    /// Unit simplex: w_m ∈ [0, 1], Σ w_m = 1.
    Simplex,
    /// Unit hypercube, no sum constraint.
    Box,
    /// Simplex points with every weight a multiple of 1/N.
    Grid(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    w: Vec<f64>,
    set: WeightSet,
}

impl WeightVector {
    /// Validates membership in `set`.
    pub fn new(w: Vec<f64>, set: WeightSet) -> Result<Self> {
        let in_unit = |v: &f64| (-SUM_TOL..=1.0 + SUM_TOL).contains(v);
        if w.is_empty() || !w.iter().all(in_unit) {
            return Err(Error::Domain(format!("weights outside [0, 1]: {w:?}")));
        }
        match set {
            WeightSet::Box => {}
            WeightSet::Simplex => {
                let s: f64 = w.iter().sum();
                if (s - 1.0).abs() > SUM_TOL {
                    return Err(Error::Domain(format!("simplex weights sum to {s}")));
                }
            }
            WeightSet::Grid(n) => {
                if n == 0 {
                    return Err(Error::InvalidN(0));
                }
                let mut total = 0i64;
                for v in &w {
                    let k = (v * n as f64).round();
                    if (k - v * n as f64).abs() > 1e-9 {
                        return Err(Error::Domain(format!("{v} is not a multiple of 1/{n}")));
                    }
                    total += k as i64;
                }
                if total != n as i64 {
                    return Err(Error::Domain(format!("grid weights sum to {total}/{n}")));
                }
            }
        }
        Ok(Self { w, set })
    }

    /// Grid point from integer counts summing to N.
    pub fn from_counts(counts: &[usize], n: usize) -> Result<Self> {
        let w = counts.iter().map(|&c| c as f64 / n as f64).collect();
        Self::new(w, WeightSet::Grid(n))
    }

    /// All mass on model k (1-based).
    pub fn point_mass(m: usize, k: usize) -> Self {
        let mut w = vec![0.0; m];
        w[k - 1] = 1.0;
        Self {
            w,
            set: WeightSet::Simplex,
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn set(&self) -> WeightSet {
        self.set
    }

    /// Tail sums γ_m = Σ_{j≥m} w_j.
    pub fn tail_sums(&self) -> Vec<f64> {
        tail_sums(&self.w)
    }
}

pub fn tail_sums(w: &[f64]) -> Vec<f64> {
    let mut gamma = vec![0.0; w.len()];
    let mut acc = 0.0;
    for (g, v) in gamma.iter_mut().zip(w).rev() {
        acc += v;
        *g = acc;
    }
    gamma
}

/// Number of points in the grid set for M models and resolution N,
/// C(N + M − 1, M − 1).
pub fn grid_size(m: usize, n: usize) -> u128 {
    let k = (m - 1).min(n) as u128;
    let top = (n + m - 1) as u128;
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (top - i) / (i + 1);
    }
    c
}

/// Visits every composition of `n` into `m` nonnegative parts in increasing
/// lexicographic order.
pub fn for_each_composition(m: usize, n: usize, mut f: impl FnMut(&[usize])) {
    let mut counts = vec![0usize; m];
    fn rec(pos: usize, left: usize, counts: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        let m = counts.len();
        if pos == m - 1 {
            counts[pos] = left;
            f(counts);
            return;
        }
        for c in 0..=left {
            counts[pos] = c;
            rec(pos + 1, left - c, counts, f);
        }
    }
    rec(0, n, &mut counts, &mut f);
}
