//! Error covariance Ω and the traces every risk formula needs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::design::NestedDesign;
use crate::error::{Error, Result};

/// Composable covariance model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceSpec {
    /// σ² I.
    Scalar { sigma2: f64 },
    /// diag(d).
    Diagonal { d: Vec<f64> },
    /// Stationary AR(1): Ω_kl = variance · ρ^|k−l|.
    Ar1 {
        rho: f64,
        #[serde(default = "unit")]
        variance: f64,
    },
    /// Sum of independent components.
    Sum { parts: Vec<CovarianceSpec> },
}

fn unit() -> f64 {
    1.0
}

impl CovarianceSpec {
    pub fn scalar(sigma2: f64) -> Self {
        Self::Scalar { sigma2 }
    }

    pub fn ar1(rho: f64, variance: f64) -> Self {
        Self::Ar1 { rho, variance }
    }

    /// Checks positivity and, for diagonal parts, the length against n.
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            Self::Scalar { sigma2 } => {
                if !(*sigma2 > 0.0 && sigma2.is_finite()) {
                    return Err(Error::Config(format!("sigma2 must be positive, got {sigma2}")));
                }
            }
            Self::Diagonal { d } => {
                if d.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "diagonal covariance has length {}, expected {n}",
                        d.len()
                    )));
                }
                if let Some(bad) = d.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                    return Err(Error::Config(format!(
                        "diagonal covariance entries must be positive, got {bad}"
                    )));
                }
            }
            Self::Ar1 { rho, variance } => {
                if !(rho.abs() < 1.0) {
                    return Err(Error::Config(format!("AR(1) needs |rho| < 1, got {rho}")));
                }
                if !(*variance > 0.0 && variance.is_finite()) {
                    return Err(Error::Config(format!(
                        "AR(1) variance must be positive, got {variance}"
                    )));
                }
            }
            Self::Sum { parts } => {
                if parts.is_empty() {
                    return Err(Error::Config("empty covariance sum".into()));
                }
                for part in parts {
                    part.validate(n)?;
                }
            }
        }
        Ok(())
    }

    /// Ω v in O(n) without forming Ω.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Scalar { sigma2 } => v * *sigma2,
            Self::Diagonal { d } => DVector::from_fn(v.len(), |i, _| d[i] * v[i]),
            Self::Ar1 { rho, variance } => {
                // (Ωv)_i = var · (Σ_{j≤i} ρ^{i−j} v_j + Σ_{j≥i} ρ^{j−i} v_j − v_i)
                let n = v.len();
                let mut fwd = vec![0.0; n];
                let mut acc = 0.0;
                for i in 0..n {
                    acc = v[i] + rho * acc;
                    fwd[i] = acc;
                }
                let mut out = DVector::zeros(n);
                acc = 0.0;
                for i in (0..n).rev() {
                    acc = v[i] + rho * acc;
                    out[i] = variance * (fwd[i] + acc - v[i]);
                }
                out
            }
            Self::Sum { parts } => {
                let mut out = DVector::zeros(v.len());
                for part in parts {
                    out += part.apply(v);
                }
                out
            }
        }
    }

    /// tr((P_m − P_{m−1}) Ω) as Σ qᵀΩq over the group's basis columns.
    pub fn trace_increment(&self, d: &NestedDesign, m: usize) -> Result<f64> {
        let block = d.block(m)?;
        Ok(self.block_trace(&block))
    }

    fn block_trace(&self, block: &nalgebra::DMatrixView<'_, f64>) -> f64 {
        match self {
            Self::Scalar { sigma2 } => sigma2 * block.ncols() as f64,
            Self::Diagonal { d } => block
                .column_iter()
                .map(|q| q.iter().zip(d).map(|(qi, di)| di * qi * qi).sum::<f64>())
                .sum(),
            Self::Ar1 { .. } => block
                .column_iter()
                .map(|q| {
                    let q = q.into_owned();
                    q.dot(&self.apply(&q))
                })
                .sum(),
            Self::Sum { parts } => parts.iter().map(|p| p.block_trace(block)).sum(),
        }
    }

    /// tr(P_m Ω); zero for m = 0.
    pub fn trace_hat(&self, d: &NestedDesign, m: usize) -> Result<f64> {
        if m > d.groups() {
            return Err(Error::IndexOutOfRange {
                index: m,
                max: d.groups(),
            });
        }
        (1..=m).map(|k| self.trace_increment(d, k)).sum()
    }

    /// Dense Ω, for small instances and test oracles.
    pub fn materialize(&self, n: usize) -> DMatrix<f64> {
        match self {
            Self::Scalar { sigma2 } => DMatrix::identity(n, n) * *sigma2,
            Self::Diagonal { d } => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
            Self::Ar1 { rho, variance } => DMatrix::from_fn(n, n, |k, l| {
                variance * rho.powi((k as i64 - l as i64).unsigned_abs() as i32)
            }),
            Self::Sum { parts } => parts
                .iter()
                .fold(DMatrix::zeros(n, n), |acc, p| acc + p.materialize(n)),
        }
    }

    /// Draws ε with mean zero and covariance Ω.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DVector<f64> {
        match self {
            Self::Scalar { sigma2 } => {
                let s = sigma2.sqrt();
                DVector::from_fn(n, |_, _| s * rng.sample::<f64, _>(StandardNormal))
            }
            Self::Diagonal { d } => {
                DVector::from_fn(n, |i, _| d[i].sqrt() * rng.sample::<f64, _>(StandardNormal))
            }
            Self::Ar1 { rho, variance } => {
                let innov = (variance * (1.0 - rho * rho)).sqrt();
                let mut out = DVector::zeros(n);
                let mut prev = 0.0;
                for i in 0..n {
                    let z: f64 = rng.sample(StandardNormal);
                    prev = if i == 0 {
                        variance.sqrt() * z
                    } else {
                        rho * prev + innov * z
                    };
                    out[i] = prev;
                }
                out
            }
            Self::Sum { parts } => {
                let mut out = DVector::zeros(n);
                for part in parts {
                    out += part.sample(n, rng);
                }
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_design(n: usize, nu: Vec<usize>, seed: u64) -> NestedDesign {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = *nu.last().unwrap();
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
        NestedDesign::build(x, nu).unwrap()
    }

    fn dense_trace_increment(cov: &CovarianceSpec, d: &NestedDesign, m: usize) -> f64 {
        let n = d.n();
        let x = d.x();
        let hat = |k: usize| {
            if k == 0 {
                return DMatrix::zeros(n, n);
            }
            let xk = x.columns(0, d.boundary(k)).into_owned();
            &xk * xk.tr_mul(&xk).try_inverse().unwrap() * xk.transpose()
        };
        ((hat(m) - hat(m - 1)) * cov.materialize(n)).trace()
    }

    #[test]
    fn scalar_trace_is_sigma2_times_group_size() {
        let d = random_design(20, vec![2, 5], 1);
        let cov = CovarianceSpec::scalar(2.0);
        assert_eq!(cov.trace_increment(&d, 2).unwrap(), 6.0);
        assert_eq!(cov.trace_hat(&d, 2).unwrap(), 10.0);
        assert_eq!(cov.trace_hat(&d, 0).unwrap(), 0.0);
        let id = CovarianceSpec::scalar(1.0);
        assert_eq!(id.trace_increment(&d, 1).unwrap(), 2.0);
    }

    #[test]
    fn ar1_trace_matches_dense() {
        let d = random_design(40, vec![1, 3, 4], 7);
        let cov = CovarianceSpec::ar1(0.5, 1.0);
        for m in 1..=3 {
            let got = cov.trace_increment(&d, m).unwrap();
            assert!((got - dense_trace_increment(&cov, &d, m)).abs() < 1e-9);
        }
    }

    #[test]
    fn composite_trace_hat_matches_dense() {
        let d = random_design(30, vec![1, 2, 4], 3);
        let x2: Vec<f64> = d.x().column(1).iter().map(|v| v * v).collect();
        let cov = CovarianceSpec::Sum {
            parts: vec![
                CovarianceSpec::Diagonal { d: x2 },
                CovarianceSpec::ar1(0.5, 1.0),
            ],
        };
        cov.validate(30).unwrap();
        let mut dense = 0.0;
        for m in 1..=3 {
            dense += dense_trace_increment(&cov, &d, m);
            assert!((cov.trace_hat(&d, m).unwrap() - dense).abs() < 1e-9);
        }
    }

    #[test]
    fn sum_trace_is_linear() {
        let d = random_design(25, vec![2, 3], 9);
        let a = CovarianceSpec::ar1(-0.3, 2.0);
        let b = CovarianceSpec::Diagonal {
            d: (0..25).map(|i| 1.0 + i as f64 / 10.0).collect(),
        };
        let s = CovarianceSpec::Sum {
            parts: vec![a.clone(), b.clone()],
        };
        for m in 1..=2 {
            assert_eq!(
                s.trace_increment(&d, m).unwrap(),
                a.trace_increment(&d, m).unwrap() + b.trace_increment(&d, m).unwrap()
            );
        }
    }

    #[test]
    fn apply_matches_dense_and_is_pd() {
        let cov = CovarianceSpec::Sum {
            parts: vec![
                CovarianceSpec::ar1(0.7, 1.5),
                CovarianceSpec::Diagonal {
                    d: (0..12).map(|i| 0.5 + i as f64).collect(),
                },
                CovarianceSpec::scalar(0.1),
            ],
        };
        let dense = cov.materialize(12);
        let v = DVector::from_fn(12, |i, _| (i as f64).sin());
        assert!((cov.apply(&v) - &dense * &v).amax() < 1e-12);
        assert!((dense.clone() - dense.transpose()).amax() == 0.0);
        assert!(dense.cholesky().is_some());
    }

    #[test]
    fn validation_errors() {
        assert!(CovarianceSpec::scalar(0.0).validate(3).is_err());
        assert!(CovarianceSpec::ar1(1.0, 1.0).validate(3).is_err());
        assert!(CovarianceSpec::Diagonal { d: vec![1.0; 2] }
            .validate(3)
            .is_err());
        assert!(CovarianceSpec::Sum { parts: vec![] }.validate(3).is_err());
    }

    #[test]
    fn json_round_trip() {
        let cov = CovarianceSpec::Sum {
            parts: vec![CovarianceSpec::scalar(1.0), CovarianceSpec::ar1(0.5, 1.0)],
        };
        let text = serde_json::to_string(&cov).unwrap();
        let back: CovarianceSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cov);
        let parsed: CovarianceSpec = serde_json::from_str(r#"{"kind":"ar1","rho":0.5}"#).unwrap();
        assert_eq!(parsed, CovarianceSpec::ar1(0.5, 1.0));
    }

    #[test]
    fn scalar_sample_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = CovarianceSpec::scalar(1.0).sample(100_000, &mut rng);
        let mean = e.mean();
        let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 99_999.0;
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn ar1_sample_lag_one_autocorrelation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = CovarianceSpec::ar1(0.5, 1.0).sample(100_000, &mut rng);
        let mean = e.mean();
        let c0: f64 = e.iter().map(|v| (v - mean).powi(2)).sum();
        let c1: f64 = (1..e.len()).map(|i| (e[i] - mean) * (e[i - 1] - mean)).sum();
        assert!((c1 / c0 - 0.5).abs() < 0.02, "rho {}", c1 / c0);
        assert!((c0 / 100_000.0 - 1.0).abs() < 0.03);
    }

    #[test]
    fn diagonal_sample_componentwise_variance() {
        let d = vec![0.5, 1.0, 4.0];
        let cov = CovarianceSpec::Diagonal { d: d.clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reps = 20_000;
        let mut sums = [0.0; 3];
        for _ in 0..reps {
            let e = cov.sample(3, &mut rng);
            for i in 0..3 {
                sums[i] += e[i] * e[i];
            }
        }
        for i in 0..3 {
            let var = sums[i] / reps as f64;
            // se of the sample second moment of a normal is d·√(2/reps)
            let se = d[i] * (2.0 / reps as f64).sqrt();
            assert!((var - d[i]).abs() < 3.0 * se, "component {i}: {var}");
        }
    }
}
