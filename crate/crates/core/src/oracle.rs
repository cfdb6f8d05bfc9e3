//! Exact finite-sample risks of selection and averaging over nested models,
//! and the oracle weights over the simplex, the box and the grid.
//!
//! Everything is expressed through the per-group increments
//! b_m = μᵀ(P_m − P_{m−1})μ and v_m = tr((P_m − P_{m−1})Ω). With tail sums
//! γ_m = Σ_{j≥m} w_j the averaging risk separates into
//! Σ_m f_m(γ_m) + μᵀ(I − P_M)μ with f_m(γ) = (1 − γ)² b_m + γ² v_m.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::covariance::CovarianceSpec;
use crate::design::NestedDesign;
use crate::error::{Error, Result};
use crate::qp::{QpProblem, SolveOptions};
pub use crate::weights::{WeightSet, WeightVector};
use crate::weights::grid_size;

/// Relative slack in the nonincreasing-θ check.
pub const MONOTONE_TOL: f64 = 1e-12;
/// θ above this counts as a nonzero signal when locating d_n.
pub const SIGNAL_TOL: f64 = 1e-14;

/// How an oracle answer was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OraclePath {
    /// Closed form from the optimal tail sums (θ nonincreasing).
    ClosedForm,
    /// Quadratic program over the weights (θ not monotone).
    Qp,
    /// Exhaustive enumeration of the grid.
    Enumeration,
    /// Exact dynamic program over grid levels (grid too large to enumerate).
    LevelSearch,
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub weights: WeightVector,
    pub risk: f64,
    pub path: OraclePath,
}

/// Selection risks over the candidates together with both optimal indices.
#[derive(Debug, Clone, PartialEq)]
pub struct MsRisk {
    /// R_n(m) for m = 1..M.
    pub risks: Vec<f64>,
    /// Argmin over the M candidates (1-based).
    pub m_star: usize,
    /// Argmin over all q groups (1-based).
    pub m_star_star: usize,
    /// Whether m_star = min(M, m_star_star), as unimodal risk implies.
    pub consistent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaGap {
    /// R_n(m*) − R_n(w*).
    pub delta: f64,
    /// Δ_n / R_n(m*).
    pub ratio: f64,
    /// The same gap by direct subtraction of the two risks.
    pub direct: f64,
    /// Averaging risk fell below half the selection risk.
    pub half_bound_violated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileRow {
    pub m: usize,
    pub bias_inc: f64,
    pub var_inc: f64,
    pub theta: f64,
    pub gamma_star: f64,
    pub r_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskProfile {
    n: usize,
    m: usize,
    bias_inc: Vec<f64>,
    var_inc: Vec<f64>,
    /// μᵀ(I − P_q)μ.
    residual: f64,
    theta: Vec<f64>,
}

impl RiskProfile {
    /// Profile of a design, covariance and mean with `m` candidate models.
    pub fn new(d: &NestedDesign, cov: &CovarianceSpec, mu: &DVector<f64>, m: usize) -> Result<Self> {
        cov.validate(d.n())?;
        let bias_inc = d.quad_form_increments(mu)?;
        let var_inc = (1..=d.groups())
            .map(|k| cov.trace_increment(d, k))
            .collect::<Result<Vec<_>>>()?;
        let fitted = d.project(d.groups(), mu)?;
        let residual = (mu - fitted).norm_squared();
        Self::from_increments(d.n(), bias_inc, var_inc, residual, m)
    }

    /// Profile from precomputed increments over all q groups.
    pub fn from_increments(
        n: usize,
        bias_inc: Vec<f64>,
        var_inc: Vec<f64>,
        residual: f64,
        m: usize,
    ) -> Result<Self> {
        let q = bias_inc.len();
        if var_inc.len() != q || q == 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} bias increments vs {} variance increments",
                q,
                var_inc.len()
            )));
        }
        if m == 0 || m > q {
            return Err(Error::IndexOutOfRange { index: m, max: q });
        }
        if n == 0 {
            return Err(Error::DimensionMismatch("sample size is zero".into()));
        }
        for (k, (&b, &v)) in bias_inc.iter().zip(&var_inc).enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::ZeroVariance(k + 1));
            }
            if !(b >= -1e-9 * v.max(1.0)) || !b.is_finite() {
                return Err(Error::Domain(format!("negative bias increment {b} at group {}", k + 1)));
            }
        }
        let bias_inc: Vec<f64> = bias_inc.into_iter().map(|b| b.max(0.0)).collect();
        if !(residual.is_finite()) {
            return Err(Error::Domain("residual is not finite".into()));
        }
        let theta = bias_inc
            .iter()
            .zip(&var_inc)
            .map(|(b, v)| b / n as f64 / v)
            .collect();
        Ok(Self {
            n,
            m,
            bias_inc,
            var_inc,
            residual: residual.max(0.0),
            theta,
        })
    }

    /// Same increments with a different candidate count.
    pub fn with_candidates(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.groups() {
            return Err(Error::IndexOutOfRange { index: m, max: self.groups() });
        }
        Ok(Self { m, ..self.clone() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Candidate count M.
    pub fn candidates(&self) -> usize {
        self.m
    }

    /// Group count q.
    pub fn groups(&self) -> usize {
        self.bias_inc.len()
    }

    pub fn bias_inc(&self) -> &[f64] {
        &self.bias_inc
    }

    pub fn var_inc(&self) -> &[f64] {
        &self.var_inc
    }

    /// GVI sequence θ_m over all q groups.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// μᵀ(I − P_M)μ.
    pub fn tail_bias(&self) -> f64 {
        self.bias_inc[self.m..].iter().sum::<f64>() + self.residual
    }

    /// μᵀ(I − P_q)μ.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Largest index with θ_m > 0 (0 when there is no signal).
    pub fn d_n(&self) -> usize {
        self.theta
            .iter()
            .rposition(|&t| t > SIGNAL_TOL)
            .map_or(0, |i| i + 1)
    }

    /// Optimal unconstrained tail sum b/(b+v) of group m (1-based, any m ≤ q).
    fn gamma_unconstrained(&self, m: usize) -> f64 {
        let b = self.bias_inc[m - 1];
        b / (b + self.var_inc[m - 1])
    }

    /// γ*_m for m = 1..M, with γ*_1 = 1.
    pub fn gamma_star(&self) -> Vec<f64> {
        (1..=self.m)
            .map(|k| if k == 1 { 1.0 } else { self.gamma_unconstrained(k) })
            .collect()
    }

    /// θ nonincreasing over the candidate indices `from..=M`.
    fn monotone_from(&self, from: usize) -> bool {
        (from..self.m).all(|k| self.theta[k] <= self.theta[k - 1] * (1.0 + MONOTONE_TOL))
    }

    /// θ nonincreasing over 1..M.
    pub fn is_monotone(&self) -> bool {
        self.monotone_from(1)
    }

    /// R_n(m) for m = 1..q.
    pub fn risk_ms_all(&self) -> Vec<f64> {
        let q = self.groups();
        // suffix sums of the bias increments, accumulated from the far end
        let mut tail = vec![self.residual; q];
        for k in (0..q - 1).rev() {
            tail[k] = tail[k + 1] + self.bias_inc[k + 1];
        }
        let mut var = 0.0;
        (0..q)
            .map(|k| {
                var += self.var_inc[k];
                var + tail[k]
            })
            .collect()
    }

    /// R_n(m) for a single index 1 ≤ m ≤ q.
    pub fn risk_at(&self, m: usize) -> Result<f64> {
        if m == 0 || m > self.groups() {
            return Err(Error::IndexOutOfRange { index: m, max: self.groups() });
        }
        let var: f64 = self.var_inc[..m].iter().sum();
        let tail: f64 = self.bias_inc[m..].iter().sum::<f64>() + self.residual;
        Ok(var + tail)
    }

    pub fn risk_ms(&self) -> MsRisk {
        let all = self.risk_ms_all();
        let argmin = |r: &[f64]| {
            let mut best = 0;
            for (k, v) in r.iter().enumerate() {
                if *v < r[best] {
                    best = k;
                }
            }
            best + 1
        };
        let m_star = argmin(&all[..self.m]);
        let m_star_star = argmin(&all);
        MsRisk {
            risks: all[..self.m].to_vec(),
            m_star,
            m_star_star,
            consistent: m_star == self.m.min(m_star_star),
        }
    }

    /// R_n(m*_n).
    pub fn risk_ms_star(&self) -> f64 {
        let ms = self.risk_ms();
        ms.risks[ms.m_star - 1]
    }

    /// Averaging risk for tail sums γ_1..γ_M.
    pub fn risk_gamma(&self, gamma: &[f64]) -> Result<f64> {
        if gamma.len() != self.m {
            return Err(Error::DimensionMismatch(format!(
                "{} tail sums for {} candidates",
                gamma.len(),
                self.m
            )));
        }
        let mut r = self.tail_bias();
        for (k, g) in gamma.iter().enumerate() {
            let b = self.bias_inc[k];
            let v = self.var_inc[k];
            r += (1.0 - g) * (1.0 - g) * b + g * g * v;
        }
        Ok(r)
    }

    /// R_n(w) for a weight vector of length M from any of the weight sets.
    pub fn risk_ma(&self, w: &WeightVector) -> Result<f64> {
        self.risk_gamma(&w.tail_sums())
    }

    /// Averaging risk as a quadratic in w: R(w) = ½wᵀHw + gᵀw + c.
    pub fn quadratic(&self) -> (DMatrix<f64>, DVector<f64>, f64) {
        let m = self.m;
        let d: Vec<f64> = (0..m).map(|k| self.bias_inc[k] + self.var_inc[k]).collect();
        // γ_k = Σ_{j≥k} w_j, so (UᵀDU)_{ij} = Σ_{k ≤ min(i,j)} D_k
        let mut cum = vec![0.0; m];
        let mut acc = 0.0;
        for k in 0..m {
            acc += d[k];
            cum[k] = acc;
        }
        let h = DMatrix::from_fn(m, m, |i, j| 2.0 * cum[i.min(j)]);
        let mut gb = vec![0.0; m];
        let mut acc = 0.0;
        for k in 0..m {
            acc += self.bias_inc[k];
            gb[k] = -2.0 * acc;
        }
        let c = self.bias_inc[..m].iter().sum::<f64>() + self.tail_bias();
        (h, DVector::from_vec(gb), c)
    }

    fn weights_from_gamma(gamma: &[f64], set: WeightSet) -> Result<WeightVector> {
        let m = gamma.len();
        let w = (0..m)
            .map(|k| gamma[k] - if k + 1 < m { gamma[k + 1] } else { 0.0 })
            .collect();
        WeightVector::new(w, set)
    }

    fn solve_qp(&self, set: WeightSet) -> Result<OracleResult> {
        let (h, g, _) = self.quadratic();
        let sol = QpProblem::new(h, g, set)?.solve()?;
        let risk = self.risk_ma(&sol.weights)?;
        Ok(OracleResult {
            weights: sol.weights,
            risk,
            path: OraclePath::Qp,
        })
    }

    /// Optimal weights over the unit simplex.
    pub fn oracle_simplex(&self) -> Result<OracleResult> {
        if !self.monotone_from(2) {
            return self.solve_qp(WeightSet::Simplex);
        }
        let gamma = self.gamma_star();
        let weights = Self::weights_from_gamma(&gamma, WeightSet::Simplex)?;
        Ok(OracleResult {
            weights,
            risk: self.risk_simplex_closed_form(),
            path: OraclePath::ClosedForm,
        })
    }

    /// v_1 + Σ_{m≥2} b_m v_m/(b_m + v_m) + μᵀ(I − P_M)μ.
    fn risk_simplex_closed_form(&self) -> f64 {
        let mut r = self.var_inc[0] + self.tail_bias();
        for k in 1..self.m {
            let (b, v) = (self.bias_inc[k], self.var_inc[k]);
            r += b * v / (b + v);
        }
        r
    }

    /// Optimal weights over the unit box (no sum constraint).
    pub fn oracle_box(&self) -> Result<OracleResult> {
        if !self.monotone_from(1) {
            return self.solve_qp(WeightSet::Box);
        }
        let gamma: Vec<f64> = (1..=self.m).map(|k| self.gamma_unconstrained(k)).collect();
        let weights = Self::weights_from_gamma(&gamma, WeightSet::Box)?;
        let mut risk = self.tail_bias();
        for k in 0..self.m {
            let (b, v) = (self.bias_inc[k], self.var_inc[k]);
            risk += b * v / (b + v);
        }
        Ok(OracleResult {
            weights,
            risk,
            path: OraclePath::ClosedForm,
        })
    }

    /// Grid level i = ⌈Nγ − ½⌉ nearest to γ, rounding exact midpoints down.
    fn grid_level(gamma: f64, n: usize) -> usize {
        let i = (n as f64 * gamma - 0.5).ceil();
        i.clamp(0.0, n as f64) as usize
    }

    /// i_{n,N} = ⌈Nγ*_M − ½⌉.
    pub fn grid_index(&self, n: usize) -> Result<usize> {
        if n == 0 {
            return Err(Error::InvalidN(0));
        }
        Ok(Self::grid_level(*self.gamma_star().last().unwrap(), n))
    }

    /// Optimal weights over the grid of multiples of 1/N.
    pub fn oracle_grid(&self, n: usize) -> Result<OracleResult> {
        if n == 0 {
            return Err(Error::InvalidN(0));
        }
        if !self.monotone_from(2) {
            return self.grid_search(n);
        }
        let gamma = self.gamma_star();
        let levels: Vec<usize> = gamma.iter().map(|&g| Self::grid_level(g, n)).collect();
        let counts: Vec<usize> = (0..self.m)
            .map(|k| levels[k] - levels.get(k + 1).copied().unwrap_or(0))
            .collect();
        let weights = WeightVector::from_counts(&counts, n)?;
        let mut risk = self.risk_simplex_closed_form();
        for k in 1..self.m {
            let (b, v) = (self.bias_inc[k], self.var_inc[k]);
            let d = levels[k] as f64 / n as f64 - gamma[k];
            risk += (b + v) * d * d;
        }
        Ok(OracleResult {
            weights,
            risk,
            path: OraclePath::ClosedForm,
        })
    }

    /// Grid optimum without the monotonicity assumption: enumeration when the
    /// grid is small, otherwise an exact search over nonincreasing level paths.
    fn grid_search(&self, n: usize) -> Result<OracleResult> {
        if grid_size(self.m, n) <= crate::qp::GRID_BUDGET {
            let (h, g, _) = self.quadratic();
            let sol = QpProblem::new(h, g, WeightSet::Grid(n))?.solve_with(SolveOptions {
                allow_heuristic: false,
                ..SolveOptions::default()
            })?;
            let risk = self.risk_ma(&sol.weights)?;
            return Ok(OracleResult {
                weights: sol.weights,
                risk,
                path: OraclePath::Enumeration,
            });
        }
        self.grid_level_search(n)
    }

    /// Exact minimization over nonincreasing level paths γ_1 = 1 ≥ γ_2 ≥ …
    fn grid_level_search(&self, n: usize) -> Result<OracleResult> {
        let m = self.m;
        let f = |k: usize, i: usize| {
            let g = i as f64 / n as f64;
            let (b, v) = (self.bias_inc[k], self.var_inc[k]);
            (1.0 - g) * (1.0 - g) * b + g * g * v
        };
        // cost[k][i]: best Σ_{j≥k} f_j given level i at k, levels nonincreasing
        let mut cost = vec![vec![0.0; n + 1]; m];
        let mut next = vec![vec![0usize; n + 1]; m];
        for i in 0..=n {
            cost[m - 1][i] = f(m - 1, i);
        }
        for k in (0..m - 1).rev() {
            let mut best_val = f64::INFINITY;
            let mut best_i = 0;
            for i in 0..=n {
                // prefer the larger next level on ties: smaller current weight
                if cost[k + 1][i] <= best_val {
                    best_val = cost[k + 1][i];
                    best_i = i;
                }
                cost[k][i] = f(k, i) + best_val;
                next[k][i] = best_i;
            }
        }
        let mut levels = vec![n; m];
        for k in 1..m {
            levels[k] = next[k - 1][levels[k - 1]];
        }
        let counts: Vec<usize> = (0..m)
            .map(|k| levels[k] - levels.get(k + 1).copied().unwrap_or(0))
            .collect();
        let weights = WeightVector::from_counts(&counts, n)?;
        Ok(OracleResult {
            risk: self.risk_ma(&weights)?,
            weights,
            path: OraclePath::LevelSearch,
        })
    }

    /// m_n(z): the largest index (over all groups) with θ_m > z/((1 − z)n),
    /// or 1 when there is none or z ≥ 1.
    pub fn threshold_index(&self, z: f64) -> usize {
        self.threshold_index_upto(z, self.groups())
    }

    fn threshold_index_upto(&self, z: f64, upto: usize) -> usize {
        if z >= 1.0 {
            return 1;
        }
        let thr = z / ((1.0 - z) * self.n as f64);
        self.theta[..upto]
            .iter()
            .rposition(|&t| t > thr)
            .map_or(1, |i| i + 1)
    }

    /// Grid-optimal risk assembled bucket by bucket from the threshold
    /// indices m_n((2i ± 1)/2N). Requires nonincreasing θ.
    pub fn grid_risk_by_thresholds(&self, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(Error::InvalidN(0));
        }
        if !self.monotone_from(2) {
            return Err(Error::Domain("threshold form needs nonincreasing θ".into()));
        }
        let big_m = self.m;
        let nf = n as f64;
        let mn = |z: f64| self.threshold_index_upto(z, big_m);
        let term = |k: usize, i: usize| {
            let g = i as f64 / nf;
            g * g * self.var_inc[k - 1] + (1.0 - g) * (1.0 - g) * self.bias_inc[k - 1]
        };
        let i0 = self.grid_index(n)?;
        let mut risk = self.var_inc[0] + self.tail_bias();
        for i in (i0 + 1)..=n {
            let lo = mn((2 * i + 1) as f64 / (2.0 * nf)) + 1;
            let hi = mn((2 * i - 1) as f64 / (2.0 * nf)).min(big_m);
            for k in lo.max(2)..=hi {
                risk += term(k, i);
            }
        }
        let lo = mn((2 * i0 + 1) as f64 / (2.0 * nf)) + 1;
        for k in lo.max(2)..=big_m {
            risk += term(k, i0);
        }
        Ok(risk)
    }

    /// Oracle advantage of averaging over selection.
    pub fn delta_gap(&self) -> Result<DeltaGap> {
        let ms = self.risk_ms();
        let r_ms = ms.risks[ms.m_star - 1];
        let simplex = self.oracle_simplex()?;
        let direct = r_ms - simplex.risk;
        let delta = if simplex.path == OraclePath::ClosedForm {
            let mut d = 0.0;
            for k in 1..self.m {
                let (b, v) = (self.bias_inc[k], self.var_inc[k]);
                d += if k < ms.m_star {
                    v - b * v / (b + v)
                } else {
                    b * b / (b + v)
                };
            }
            d
        } else {
            direct
        };
        let ratio = if r_ms > 0.0 { delta / r_ms } else { 0.0 };
        Ok(DeltaGap {
            delta,
            ratio,
            direct,
            half_bound_violated: simplex.risk < 0.5 * r_ms,
        })
    }

    /// [tr(P₁Ω)]² / (μᵀP₁μ + tr(P₁Ω)).
    pub fn first_group_gap(&self) -> f64 {
        let (b, v) = (self.bias_inc[0], self.var_inc[0]);
        v * v / (b + v)
    }

    pub fn rows(&self) -> Vec<ProfileRow> {
        let gamma = self.gamma_star();
        let risks = self.risk_ms_all();
        (0..self.m)
            .map(|k| ProfileRow {
                m: k + 1,
                bias_inc: self.bias_inc[k],
                var_inc: self.var_inc[k],
                theta: self.theta[k],
                gamma_star: gamma[k],
                r_ms: risks[k],
            })
            .collect()
    }

    /// Writes the per-candidate rows as CSV in scientific notation.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Config(e.to_string());
        w.write_record(["m", "bias_inc", "var_inc", "theta", "gamma_star", "R_ms"])
            .map_err(io)?;
        for r in self.rows() {
            w.write_record([
                r.m.to_string(),
                format!("{:e}", r.bias_inc),
                format!("{:e}", r.var_inc),
                format!("{:e}", r.theta),
                format!("{:e}", r.gamma_star),
                format!("{:e}", r.r_ms),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Config(e.to_string()))
    }
}
