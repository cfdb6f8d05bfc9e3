//! Feasible averaging weights: Mallows (MMA) and jackknife (JMA, and the
//! sum-unconstrained JMA2) criteria, each a quadratic program in w.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::NestedDesign;
use crate::error::{Error, Result};
use crate::qp::QpProblem;
use crate::selectors::FitCache;
use crate::weights::{WeightSet, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaMethod {
    Mma,
    Jma,
}

/// An averaging criterion C(w) = ½wᵀHw + gᵀw + c over a weight set.
#[derive(Debug, Clone)]
pub struct MaCriterion {
    pub method: MaMethod,
    pub weight_set: WeightSet,
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub constant: f64,
    /// Variance plug-in (Mallows criterion only).
    pub sigma2_hat: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MaFit {
    pub weights: WeightVector,
    /// Criterion value at the returned weights.
    pub value: f64,
}

impl MaCriterion {
    /// Mallows criterion ‖y − Fw‖² + 2σ̂² Σ w_m ν_m on the simplex, written
    /// through the residual matrix E (y − Fw = Ew when Σw = 1).
    pub fn mma(cache: &FitCache) -> Self {
        let e = cache.residuals();
        let s2 = cache.sigma2_hat();
        let g = DVector::from_iterator(
            cache.candidates(),
            cache.sizes().iter().map(|&nu| 2.0 * s2 * nu as f64),
        );
        Self {
            method: MaMethod::Mma,
            weight_set: WeightSet::Simplex,
            h: e.tr_mul(e) * 2.0,
            g,
            constant: 0.0,
            sigma2_hat: Some(s2),
        }
    }

    /// Jackknife criterion ‖y − F̃w‖² with F̃ the leave-one-out fits, over
    /// the simplex (JMA) or the box (JMA2). On the simplex this equals
    /// ‖Σ w_m ẽ_m‖².
    pub fn jma(cache: &FitCache, y: &DVector<f64>, set: WeightSet) -> Result<Self> {
        if matches!(set, WeightSet::Grid(_)) {
            return Err(Error::Domain("jackknife weights are chosen over the simplex or box".into()));
        }
        let (h, g, constant) = match set {
            WeightSet::Simplex => {
                let e = cache.loo_residuals()?;
                (e.tr_mul(&e) * 2.0, DVector::zeros(cache.candidates()), 0.0)
            }
            _ => {
                let f = cache.loo_fitted(y)?;
                (f.tr_mul(&f) * 2.0, f.tr_mul(y) * -2.0, y.norm_squared())
            }
        };
        Ok(Self {
            method: MaMethod::Jma,
            weight_set: set,
            h,
            g,
            constant,
            sigma2_hat: None,
        })
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        let w = DVector::from_column_slice(w);
        0.5 * w.dot(&(&self.h * &w)) + self.g.dot(&w) + self.constant
    }

    pub fn solve(&self) -> Result<MaFit> {
        let sol = QpProblem::new(self.h.clone(), self.g.clone(), self.weight_set)?.solve()?;
        let value = self.value(sol.weights.as_slice());
        Ok(MaFit {
            weights: sol.weights,
            value,
        })
    }
}

/// Averaged fit Σ w_m P_m y.
pub fn averaged_fit(cache: &FitCache, w: &WeightVector) -> DVector<f64> {
    cache.fitted() * DVector::from_column_slice(w.as_slice())
}

pub fn fit_mma(y: &DVector<f64>, d: &NestedDesign, m: usize) -> Result<MaFit> {
    MaCriterion::mma(&FitCache::new(y, d, m)?).solve()
}

pub fn fit_jma(y: &DVector<f64>, d: &NestedDesign, m: usize, set: WeightSet) -> Result<MaFit> {
    MaCriterion::jma(&FitCache::new(y, d, m)?, y, set)?.solve()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selectors::Criterion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn dataset(seed: u64, n: usize, m: usize, noise: f64) -> (DVector<f64>, NestedDesign) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let beta = DVector::from_fn(m, |j, _| 1.0 / (1.0 + j as f64));
        let y = &x * beta + DVector::from_fn(n, |_, _| noise * rng.sample::<f64, _>(StandardNormal));
        let nu = (1..=m).collect();
        (y, NestedDesign::build(x, nu).unwrap())
    }

    fn simplex_grid_min(c: &MaCriterion, step: f64) -> f64 {
        let k = (1.0 / step).round() as usize;
        let mut best = f64::INFINITY;
        for i in 0..=k {
            for j in 0..=(k - i) {
                let w = [i as f64 * step, j as f64 * step, (k - i - j) as f64 * step];
                best = best.min(c.value(&w));
            }
        }
        best
    }

    #[test]
    fn noiseless_truth_gets_all_mma_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(30, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = x.column(0) + x.column(1);
        let d = NestedDesign::build(x, vec![1, 2]).unwrap();
        let fit = fit_mma(&y, &d, 2).unwrap();
        assert!((fit.weights.as_slice()[1] - 1.0).abs() < 1e-8);
        let jma = fit_jma(&y, &d, 2, WeightSet::Simplex).unwrap();
        assert!((jma.weights.as_slice()[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn mma_at_point_mass_is_mallows_cp() {
        let (y, d) = dataset(2, 40, 4, 1.0);
        let cache = FitCache::new(&y, &d, 4).unwrap();
        let c = MaCriterion::mma(&cache);
        let cp = cache.scores(Criterion::Cp).unwrap();
        for k in 0..4 {
            let mut e = vec![0.0; 4];
            e[k] = 1.0;
            assert!((c.value(&e) - cp[k]).abs() < 1e-9 * cp[k]);
        }
        let fit = c.solve().unwrap();
        assert!(cp.iter().all(|&v| fit.value <= v + 1e-9));
    }

    #[test]
    fn minimizers_match_grid_search() {
        for seed in 0..5 {
            let (y, d) = dataset(10 + seed, 35, 3, 1.5);
            let cache = FitCache::new(&y, &d, 3).unwrap();
            let mma = MaCriterion::mma(&cache);
            assert!((mma.solve().unwrap().value - simplex_grid_min(&mma, 1e-3)).abs() < 1e-5 * mma.constant.max(1.0) + 1e-5);
            let jma = MaCriterion::jma(&cache, &y, WeightSet::Simplex).unwrap();
            let got = jma.solve().unwrap().value;
            let grid = simplex_grid_min(&jma, 1e-3);
            assert!(got <= grid + 1e-9 && grid - got < 1e-3 * grid);
        }
    }

    #[test]
    fn jma_forms_agree_on_the_simplex_and_box_is_no_worse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..10 {
            let (y, d) = dataset(20 + seed, 30, 4, 2.0);
            let cache = FitCache::new(&y, &d, 4).unwrap();
            let simplex = MaCriterion::jma(&cache, &y, WeightSet::Simplex).unwrap();
            let bx = MaCriterion::jma(&cache, &y, WeightSet::Box).unwrap();
            let mut w: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            assert!((simplex.value(&w) - bx.value(&w)).abs() < 1e-9 * simplex.value(&w));
            let a = simplex.solve().unwrap().value;
            let b = bx.solve().unwrap().value;
            assert!(b <= a + 1e-9 * a);
        }
    }

    #[test]
    fn criterion_is_convex_along_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (y, d) = dataset(7, 30, 3, 1.0);
        let cache = FitCache::new(&y, &d, 3).unwrap();
        for c in [
            MaCriterion::mma(&cache),
            MaCriterion::jma(&cache, &y, WeightSet::Box).unwrap(),
        ] {
            for _ in 0..50 {
                let a: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
                let b: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
                let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
                assert!(c.value(&mid) <= 0.5 * (c.value(&a) + c.value(&b)) + 1e-9);
            }
        }
    }
}
