//! Convex quadratic programs over the simplex, the unit box and the grid.
//!
//! Objective: ½ wᵀHw + gᵀw. Continuous sets use a primal active-set method
//! (bounds plus the optional sum constraint); simplex problems with more
//! than [`ACTIVE_SET_MAX_DIM`] variables switch to pairwise Frank–Wolfe. The
//! grid is searched exhaustively.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::weights::{for_each_composition, grid_size, WeightSet, WeightVector};

pub const ACTIVE_SET_MAX_DIM: usize = 200;
pub const GRID_BUDGET: u128 = 1_000_000;
/// Relative eigenvalue floor below which H is rejected as indefinite.
pub const PSD_TOL: f64 = 1e-8;
/// Relative ridge added to H on the continuous sets.
pub const RIDGE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub set: WeightSet,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub grid_budget: u128,
    /// Round the simplex solution onto the grid when enumeration is too big.
    pub allow_heuristic: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            grid_budget: GRID_BUDGET,
            allow_heuristic: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub weights: WeightVector,
    pub objective: f64,
    /// Max violation of the first-order conditions, relative to the problem scale.
    pub kkt_residual: f64,
    /// Grid answer came from rounding rather than enumeration.
    pub heuristic: bool,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>, set: WeightSet) -> Result<Self> {
        if h.nrows() != h.ncols() || h.nrows() != g.len() || g.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "H is {}x{}, g has length {}",
                h.nrows(),
                h.ncols(),
                g.len()
            )));
        }
        if let WeightSet::Grid(0) = set {
            return Err(Error::InvalidN(0));
        }
        Ok(Self { h, g, set })
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        let w = DVector::from_column_slice(w);
        0.5 * w.dot(&(&self.h * &w)) + self.g.dot(&w)
    }

    pub fn solve(&self) -> Result<QpSolution> {
        self.solve_with(SolveOptions::default())
    }

    pub fn solve_with(&self, opts: SolveOptions) -> Result<QpSolution> {
        let mut h = psd_part(&self.h)?;
        if !matches!(self.set, WeightSet::Grid(_)) {
            // a small ridge makes the minimizer unique and, among the optimal
            // set of a singular H, pulls it toward the minimum-norm point
            let ridge = RIDGE * 1f64.max(h.diagonal().amax());
            for i in 0..h.nrows() {
                h[(i, i)] += ridge;
            }
        }
        let prob = QpProblem {
            h,
            g: self.g.clone(),
            set: self.set,
        };
        match self.set {
            WeightSet::Simplex | WeightSet::Box => {
                let w = if self.set == WeightSet::Simplex && self.dim() > ACTIVE_SET_MAX_DIM {
                    pairwise_frank_wolfe(&prob)
                } else {
                    active_set(&prob)
                };
                let w = finish(w, self.set);
                let kkt_residual = prob.kkt_residual(&w);
                Ok(QpSolution {
                    objective: self.objective(&w),
                    weights: WeightVector::new(w, self.set)?,
                    kkt_residual,
                    heuristic: false,
                })
            }
            WeightSet::Grid(n) => prob.solve_grid(n, opts, self),
        }
    }

    fn solve_grid(&self, n: usize, opts: SolveOptions, original: &QpProblem) -> Result<QpSolution> {
        let m = self.dim();
        let count = grid_size(m, n);
        if count > opts.grid_budget {
            if !opts.allow_heuristic {
                return Err(Error::TooLargeGrid { count });
            }
            let relaxed = QpProblem {
                h: self.h.clone(),
                g: self.g.clone(),
                set: WeightSet::Simplex,
            };
            let w = finish(
                if m > ACTIVE_SET_MAX_DIM {
                    pairwise_frank_wolfe(&relaxed)
                } else {
                    active_set(&relaxed)
                },
                WeightSet::Simplex,
            );
            let counts = largest_remainder(&w, n);
            let weights = WeightVector::from_counts(&counts, n)?;
            return Ok(QpSolution {
                objective: original.objective(weights.as_slice()),
                weights,
                kkt_residual: f64::NAN,
                heuristic: true,
            });
        }
        let scale = self.scale();
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut w = vec![0.0; m];
        for_each_composition(m, n, |c| {
            for (wi, ci) in w.iter_mut().zip(c) {
                *wi = *ci as f64 / n as f64;
            }
            let obj = original.objective(&w);
            // strict improvement only, so ties keep the lexicographically smaller point
            let better = match &best {
                None => true,
                Some((b, _)) => obj < *b - 1e-12 * scale,
            };
            if better {
                best = Some((obj, c.to_vec()));
            }
        });
        let (objective, counts) = best.expect("grid is never empty");
        Ok(QpSolution {
            weights: WeightVector::from_counts(&counts, n)?,
            objective,
            kkt_residual: 0.0,
            heuristic: false,
        })
    }

    fn scale(&self) -> f64 {
        1f64.max(self.h.amax()).max(self.g.amax())
    }

    /// Projected-gradient optimality residual for the continuous sets.
    pub fn kkt_residual(&self, w: &[f64]) -> f64 {
        let wv = DVector::from_column_slice(w);
        let grad = &self.h * &wv + &self.g;
        let tol = 1e-12;
        let lambda = match self.set {
            WeightSet::Box => 0.0,
            _ => {
                let free: Vec<f64> = (0..w.len())
                    .filter(|&i| w[i] > tol)
                    .map(|i| grad[i])
                    .collect();
                if free.is_empty() {
                    -grad.min()
                } else {
                    -free.iter().sum::<f64>() / free.len() as f64
                }
            }
        };
        let upper = matches!(self.set, WeightSet::Box);
        let mut worst: f64 = 0.0;
        for i in 0..w.len() {
            let r = grad[i] + lambda;
            let viol = if w[i] <= tol {
                (-r).max(0.0)
            } else if upper && w[i] >= 1.0 - tol {
                r.max(0.0)
            } else {
                r.abs()
            };
            worst = worst.max(viol);
        }
        worst / self.scale()
    }
}

/// Symmetrizes H and clips mildly negative eigenvalues.
fn psd_part(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let min = eig.eigenvalues.min();
    let norm = eig.eigenvalues.amax();
    if min >= 0.0 {
        return Ok(sym);
    }
    if min < -PSD_TOL * norm.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd { min_eig: min });
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

fn finish(mut w: Vec<f64>, set: WeightSet) -> Vec<f64> {
    for v in &mut w {
        *v = v.clamp(0.0, 1.0);
    }
    if set == WeightSet::Simplex {
        let s: f64 = w.iter().sum();
        for v in &mut w {
            *v /= s;
        }
    }
    w
}

#[derive(Clone, Copy, PartialEq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

/// Primal active-set method for bounds 0 ≤ w (≤ 1 on the box) and, on the
/// simplex, Σw = 1. Subproblems use H + δI with a tiny δ so that singular H
/// still yields the minimum-norm-leaning minimizer.
fn active_set(p: &QpProblem) -> Vec<f64> {
    let m = p.dim();
    let simplex = p.set != WeightSet::Box;
    let scale = p.scale();
    let delta = 1e-12 * 1f64.max(p.h.diagonal().amax());
    let tol = 1e-12 * scale;

    let mut w = vec![0.0; m];
    let mut state = vec![Bound::Lower; m];
    if simplex {
        let k = (0..m)
            .min_by(|&a, &b| {
                let fa = 0.5 * p.h[(a, a)] + p.g[a];
                let fb = 0.5 * p.h[(b, b)] + p.g[b];
                fa.total_cmp(&fb)
            })
            .unwrap();
        w[k] = 1.0;
        state[k] = Bound::Free;
    }

    for _ in 0..(50 * m + 100) {
        let free: Vec<usize> = (0..m).filter(|&i| state[i] == Bound::Free).collect();
        let target = subspace_minimizer(p, &w, &free, simplex, delta);
        let step: Vec<f64> = free.iter().zip(&target).map(|(&i, t)| t - w[i]).collect();
        let moved = step.iter().any(|s| s.abs() > 1e-15);

        if !moved {
            let wv = DVector::from_column_slice(&w);
            let grad = &p.h * &wv + &p.g;
            let lambda = if simplex && !free.is_empty() {
                -free.iter().map(|&i| grad[i]).sum::<f64>() / free.len() as f64
            } else {
                0.0
            };
            let mut worst: Option<(usize, f64)> = None;
            for i in 0..m {
                let mult = match state[i] {
                    Bound::Free => continue,
                    Bound::Lower => grad[i] + lambda,
                    Bound::Upper => -(grad[i] + lambda),
                };
                if mult < -tol && worst.is_none_or(|(_, v)| mult < v) {
                    worst = Some((i, mult));
                }
            }
            match worst {
                None => return w,
                Some((i, _)) => state[i] = Bound::Free,
            }
            continue;
        }

        let mut alpha = 1.0;
        let mut blocking: Option<(usize, Bound)> = None;
        for (&i, &s) in free.iter().zip(&step) {
            if s < 0.0 {
                let a = w[i] / -s;
                if a < alpha {
                    alpha = a;
                    blocking = Some((i, Bound::Lower));
                }
            } else if s > 0.0 && !simplex {
                let a = (1.0 - w[i]) / s;
                if a < alpha {
                    alpha = a;
                    blocking = Some((i, Bound::Upper));
                }
            }
        }
        for (&i, &s) in free.iter().zip(&step) {
            w[i] += alpha * s;
        }
        if let Some((i, b)) = blocking {
            state[i] = b;
            w[i] = if b == Bound::Lower { 0.0 } else { 1.0 };
        }
    }
    w
}

/// Minimizes over the free coordinates with the others held fixed.
fn subspace_minimizer(
    p: &QpProblem,
    w: &[f64],
    free: &[usize],
    simplex: bool,
    delta: f64,
) -> Vec<f64> {
    let k = free.len();
    if k == 0 {
        return Vec::new();
    }
    let m = p.dim();
    let fixed: Vec<usize> = (0..m).filter(|i| !free.contains(i)).collect();
    let dim = if simplex { k + 1 } else { k };
    let mut kkt = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            kkt[(a, b)] = p.h[(i, j)];
        }
        kkt[(a, a)] += delta;
        rhs[a] = -p.g[i] - fixed.iter().map(|&j| p.h[(i, j)] * w[j]).sum::<f64>();
        if simplex {
            kkt[(a, k)] = 1.0;
            kkt[(k, a)] = 1.0;
        }
    }
    if simplex {
        rhs[k] = 1.0 - fixed.iter().map(|&j| w[j]).sum::<f64>();
    }
    let sol = kkt
        .clone()
        .lu()
        .solve(&rhs)
        .unwrap_or_else(|| kkt.svd(true, true).solve(&rhs, 1e-14).expect("svd solve"));
    sol.rows(0, k).iter().copied().collect()
}

/// Pairwise Frank–Wolfe with exact line search on the simplex.
fn pairwise_frank_wolfe(p: &QpProblem) -> Vec<f64> {
    let m = p.dim();
    let scale = p.scale();
    let mut w = DVector::<f64>::from_element(m, 1.0 / m as f64);
    for _ in 0..200_000 {
        let grad = &p.h * &w + &p.g;
        let s = grad.argmin().0;
        let a = (0..m)
            .filter(|&i| w[i] > 0.0)
            .max_by(|&x, &y| grad[x].total_cmp(&grad[y]))
            .unwrap();
        let gap = grad[a] - grad[s];
        if gap <= 1e-13 * scale || a == s {
            break;
        }
        // direction e_s − e_a, step capped by w_a
        let curv = p.h[(s, s)] + p.h[(a, a)] - 2.0 * p.h[(s, a)];
        let mut t = if curv > 0.0 { gap / curv } else { w[a] };
        t = t.min(w[a]);
        w[s] += t;
        w[a] -= t;
    }
    w.iter().copied().collect()
}

/// Rounds simplex weights to counts summing to n by largest remainders.
fn largest_remainder(w: &[f64], n: usize) -> Vec<usize> {
    let scaled: Vec<f64> = w.iter().map(|v| v * n as f64).collect();
    let mut counts: Vec<usize> = scaled.iter().map(|v| v.floor() as usize).collect();
    let mut left = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}
