//! Feasible selection criteria over the nested candidates: AIC, BIC,
//! Mallows Cp and leave-one-out cross-validation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::NestedDesign;
use crate::error::{Error, Result};

/// Leverages at or above 1 − this make leave-one-out residuals undefined.
pub const LEVERAGE_TOL: f64 = 1e-12;
/// Residual sums are floored at this multiple of ‖y‖² so that logarithms stay
/// finite and exact fits tie (and resolve to the smallest model).
pub const RSS_FLOOR: f64 = 1e-24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Aic,
    Bic,
    Cp,
    Loocv,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [Criterion::Aic, Criterion::Bic, Criterion::Cp, Criterion::Loocv];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Aic => "aic",
            Criterion::Bic => "bic",
            Criterion::Cp => "cp",
            Criterion::Loocv => "loocv",
        }
    }
}

/// Per-candidate fits of one response on the first M models.
#[derive(Debug, Clone)]
pub struct FitCache {
    n: usize,
    nu: Vec<usize>,
    y_norm2: f64,
    /// Column m: P_m y.
    fitted: DMatrix<f64>,
    /// Column m: y − P_m y.
    residuals: DMatrix<f64>,
    /// Column m: diagonal of P_m.
    leverage: DMatrix<f64>,
    rss: Vec<f64>,
}

impl FitCache {
    pub fn new(y: &DVector<f64>, d: &NestedDesign, m: usize) -> Result<Self> {
        let n = d.n();
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "response has length {}, design has {n} rows",
                y.len()
            )));
        }
        if m == 0 || m > d.groups() {
            return Err(Error::IndexOutOfRange { index: m, max: d.groups() });
        }
        let q = d.basis();
        let mut fitted = DMatrix::zeros(n, m);
        let mut residuals = DMatrix::zeros(n, m);
        let mut leverage = DMatrix::zeros(n, m);
        let mut fit = DVector::<f64>::zeros(n);
        let mut lev = DVector::<f64>::zeros(n);
        let mut rss = Vec::with_capacity(m);
        for k in 1..=m {
            for j in d.boundary(k - 1)..d.boundary(k) {
                let col = q.column(j);
                let c = col.dot(y);
                fit.axpy(c, &col, 1.0);
                lev += col.component_mul(&col);
            }
            let e = y - &fit;
            rss.push(e.norm_squared());
            fitted.set_column(k - 1, &fit);
            residuals.set_column(k - 1, &e);
            leverage.set_column(k - 1, &lev);
        }
        Ok(Self {
            n,
            nu: d.boundaries()[..m].to_vec(),
            y_norm2: y.norm_squared(),
            fitted,
            residuals,
            leverage,
            rss,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Candidate count M.
    pub fn candidates(&self) -> usize {
        self.rss.len()
    }

    /// ν_1..ν_M.
    pub fn sizes(&self) -> &[usize] {
        &self.nu
    }

    pub fn fitted(&self) -> &DMatrix<f64> {
        &self.fitted
    }

    pub fn residuals(&self) -> &DMatrix<f64> {
        &self.residuals
    }

    pub fn leverage(&self) -> &DMatrix<f64> {
        &self.leverage
    }

    /// Residual sums of squares ‖y − P_m y‖².
    pub fn rss(&self) -> &[f64] {
        &self.rss
    }

    fn floor(&self) -> f64 {
        (RSS_FLOOR * self.y_norm2).max(f64::MIN_POSITIVE)
    }

    fn rss_floored(&self, k: usize) -> f64 {
        self.rss[k].max(self.floor())
    }

    /// σ̂² = rss_M / (n − ν_M) from the largest candidate.
    pub fn sigma2_hat(&self) -> f64 {
        let m = self.candidates();
        self.rss_floored(m - 1) / (self.n - self.nu[m - 1]) as f64
    }

    /// Leave-one-out residuals e_{m,i} / (1 − h_i^{(m)}), one column per model.
    pub fn loo_residuals(&self) -> Result<DMatrix<f64>> {
        let mut out = self.residuals.clone();
        for k in 0..self.candidates() {
            for i in 0..self.n {
                let h = self.leverage[(i, k)];
                if h >= 1.0 - LEVERAGE_TOL {
                    return Err(Error::LeverageOne { model: k + 1, obs: i + 1 });
                }
                out[(i, k)] /= 1.0 - h;
            }
        }
        Ok(out)
    }

    /// Leave-one-out fitted values y − ẽ_m, one column per model.
    pub fn loo_fitted(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut e = self.loo_residuals()?;
        for mut col in e.column_iter_mut() {
            col.neg_mut();
            col += y;
        }
        Ok(e)
    }

    /// Cross-validation sums Σ_i ẽ_{m,i}².
    pub fn cv(&self) -> Result<Vec<f64>> {
        let e = self.loo_residuals()?;
        Ok(e.column_iter().map(|c| c.norm_squared()).collect())
    }

    /// Criterion scores for every candidate.
    pub fn scores(&self, criterion: Criterion) -> Result<Vec<f64>> {
        let n = self.n as f64;
        let m = self.candidates();
        let scores = match criterion {
            Criterion::Aic => (0..m)
                .map(|k| n * (self.rss_floored(k) / n).ln() + 2.0 * self.nu[k] as f64)
                .collect(),
            Criterion::Bic => (0..m)
                .map(|k| n * (self.rss_floored(k) / n).ln() + n.ln() * self.nu[k] as f64)
                .collect(),
            Criterion::Cp => {
                let s2 = self.sigma2_hat();
                (0..m)
                    .map(|k| self.rss_floored(k) + 2.0 * s2 * self.nu[k] as f64)
                    .collect()
            }
            Criterion::Loocv => {
                let floor = self.floor();
                self.cv()?.into_iter().map(|c| c.max(floor)).collect()
            }
        };
        Ok(scores)
    }

    pub fn select(&self, criterion: Criterion) -> Result<Selection> {
        let scores = self.scores(criterion)?;
        let mut best = 0;
        for (k, s) in scores.iter().enumerate() {
            if *s < scores[best] {
                best = k;
            }
        }
        Ok(Selection {
            criterion,
            index: best + 1,
            scores,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub criterion: Criterion,
    /// Chosen model, 1-based.
    pub index: usize,
    pub scores: Vec<f64>,
}

/// Picks a model among the first `m` candidates by `criterion`.
pub fn select(y: &DVector<f64>, d: &NestedDesign, m: usize, criterion: Criterion) -> Result<Selection> {
    FitCache::new(y, d, m)?.select(criterion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn noiseless_response_in_first_model_selects_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = gaussian(30, 4, &mut rng);
        let d = NestedDesign::build(x.clone(), vec![1, 2, 3, 4]).unwrap();
        let y: DVector<f64> = x.column(0) * 2.5;
        let cache = FitCache::new(&y, &d, 4).unwrap();
        for c in Criterion::ALL {
            assert_eq!(cache.select(c).unwrap().index, 1, "{c:?}");
        }
    }

    #[test]
    fn bic_never_chooses_larger_than_aic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let x = gaussian(40, 6, &mut rng);
            let d = NestedDesign::build(x.clone(), vec![1, 2, 3, 4, 5, 6]).unwrap();
            let beta = DVector::from_fn(6, |j, _| 1.0 / (1.0 + j as f64).powi(2));
            let y = &x * beta + DVector::from_fn(40, |_, _| rng.sample::<f64, _>(StandardNormal));
            let cache = FitCache::new(&y, &d, 6).unwrap();
            let aic = cache.select(Criterion::Aic).unwrap().index;
            let bic = cache.select(Criterion::Bic).unwrap().index;
            assert!(bic <= aic);
        }
    }

    #[test]
    fn loo_shortcut_matches_refit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, nu) = (30, vec![1, 3, 4]);
        let x = gaussian(n, 4, &mut rng);
        let d = NestedDesign::build(x.clone(), nu.clone()).unwrap();
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cache = FitCache::new(&y, &d, 3).unwrap();
        let loo = cache.loo_residuals().unwrap();
        for (m, &k) in nu.iter().enumerate() {
            for i in 0..n {
                let rows: Vec<usize> = (0..n).filter(|&r| r != i).collect();
                let xi = x.select_rows(&rows).columns(0, k).into_owned();
                let yi = y.select_rows(&rows);
                let beta = (xi.transpose() * &xi)
                    .try_inverse()
                    .unwrap()
                    * xi.transpose()
                    * yi;
                let pred = x.row(i).columns(0, k).dot(&beta.transpose());
                assert!((loo[(i, m)] - (y[i] - pred)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rss_matches_dense_regression_and_is_nonincreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = gaussian(50, 6, &mut rng);
        let nu = vec![2, 3, 6];
        let d = NestedDesign::build(x.clone(), nu.clone()).unwrap();
        let y = DVector::from_fn(50, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cache = FitCache::new(&y, &d, 3).unwrap();
        for (m, &k) in nu.iter().enumerate() {
            let xm = x.columns(0, k).into_owned();
            let beta = (xm.transpose() * &xm).try_inverse().unwrap() * xm.transpose() * &y;
            let rss = (&y - &xm * beta).norm_squared();
            assert!((cache.rss()[m] - rss).abs() < 1e-9);
        }
        assert!(cache.rss().windows(2).all(|w| w[1] <= w[0] + 1e-12));
        for &h in cache.leverage().iter() {
            assert!((0.0..1.0).contains(&h));
        }
    }

    #[test]
    fn full_leverage_is_reported() {
        // an indicator column makes observation 1 fit exactly
        let mut x = DMatrix::from_fn(6, 2, |i, _| (i + 1) as f64);
        x[(0, 1)] = 1.0;
        for i in 1..6 {
            x[(i, 1)] = 0.0;
        }
        let d = NestedDesign::build(x, vec![1, 2]).unwrap();
        let y = DVector::from_fn(6, |i, _| (i * i) as f64);
        let cache = FitCache::new(&y, &d, 2).unwrap();
        assert_eq!(
            cache.select(Criterion::Loocv).unwrap_err(),
            Error::LeverageOne { model: 2, obs: 1 }
        );
        assert!(cache.select(Criterion::Aic).is_ok());
    }

    #[test]
    fn cp_uses_largest_candidate_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = gaussian(25, 3, &mut rng);
        let d = NestedDesign::build(x, vec![1, 2, 3]).unwrap();
        let y = DVector::from_fn(25, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cache = FitCache::new(&y, &d, 3).unwrap();
        let s2 = cache.rss()[2] / 22.0;
        let cp = cache.scores(Criterion::Cp).unwrap();
        for k in 0..3 {
            assert!((cp[k] - (cache.rss()[k] + 2.0 * s2 * (k + 1) as f64)).abs() < 1e-12);
        }
    }
}
