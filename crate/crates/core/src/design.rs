//! Nested candidate designs.
//!
//! Model `m` uses the first `nu[m-1]` columns of `X`. Each group of columns
//! gets an orthonormal block that spans what the group adds beyond all
//! earlier groups, so `P_m - P_{m-1} = Q_m Q_mᵀ` and no `n × n` hat matrix is
//! ever formed.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A group column counts as dependent when its residual after projection
/// falls below this fraction of its original norm.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct NestedDesign {
    x: DMatrix<f64>,
    /// Group boundaries ν_1 < … < ν_q (ν_0 = 0 implied).
    nu: Vec<usize>,
    /// Orthonormal basis, columns ν_{m-1}..ν_m belong to group m.
    basis: DMatrix<f64>,
}

impl NestedDesign {
    /// Builds the incremental orthonormal basis group by group.
    ///
    /// Each group block is orthogonalized against all earlier blocks with two
    /// classical Gram–Schmidt passes, then factored by Householder QR.
    pub fn build(x: DMatrix<f64>, nu: Vec<usize>) -> Result<Self> {
        let (n, p) = x.shape();
        if nu.is_empty() {
            return Err(Error::DimensionMismatch("no group boundaries".into()));
        }
        let mut prev = 0;
        for &b in &nu {
            if b <= prev {
                return Err(Error::DimensionMismatch(format!(
                    "group boundaries must be strictly increasing from 0, got {nu:?}"
                )));
            }
            prev = b;
        }
        if prev != p {
            return Err(Error::DimensionMismatch(format!(
                "last boundary {prev} must equal the column count {p}"
            )));
        }
        if p >= n {
            return Err(Error::DimensionMismatch(format!(
                "need fewer predictors than observations, got p={p}, n={n}"
            )));
        }

        let mut basis = DMatrix::<f64>::zeros(n, p);
        let mut start = 0;
        for (g, &end) in nu.iter().enumerate() {
            let width = end - start;
            let mut block = x.columns(start, width).into_owned();
            let col_norms: Vec<f64> = (0..width).map(|j| block.column(j).norm()).collect();
            if start > 0 {
                let earlier = basis.columns(0, start);
                for _ in 0..2 {
                    let coef = earlier.tr_mul(&block);
                    block -= &earlier * coef;
                }
            }
            let qr = block.qr();
            let r = qr.r();
            let mut q = qr.q();
            for j in 0..width {
                let rjj = r[(j, j)];
                if col_norms[j] == 0.0 || rjj.abs() < RANK_TOL * col_norms[j] {
                    return Err(Error::RankDeficient(g + 1));
                }
                if rjj < 0.0 {
                    q.column_mut(j).neg_mut();
                }
            }
            basis.columns_mut(start, width).copy_from(&q.columns(0, width));
            start = end;
        }
        Ok(Self { x, nu, basis })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Number of groups q.
    pub fn groups(&self) -> usize {
        self.nu.len()
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.nu
    }

    /// ν_m, with ν_0 = 0.
    pub fn boundary(&self, m: usize) -> usize {
        if m == 0 {
            0
        } else {
            self.nu[m - 1]
        }
    }

    pub fn group_size(&self, m: usize) -> usize {
        self.boundary(m) - self.boundary(m - 1)
    }

    /// Largest group size among the first `upto` groups.
    pub fn max_group_size(&self, upto: usize) -> usize {
        (1..=upto.min(self.groups()))
            .map(|m| self.group_size(m))
            .max()
            .unwrap_or(0)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// The full orthonormal basis (n × p).
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    fn check_group(&self, m: usize) -> Result<()> {
        if m == 0 || m > self.groups() {
            return Err(Error::IndexOutOfRange {
                index: m,
                max: self.groups(),
            });
        }
        Ok(())
    }

    fn check_len(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "vector has length {}, design has {} rows",
                v.len(),
                self.n()
            )));
        }
        Ok(())
    }

    /// Orthonormal block of group m.
    pub fn block(&self, m: usize) -> Result<nalgebra::DMatrixView<'_, f64>> {
        self.check_group(m)?;
        let lo = self.boundary(m - 1);
        Ok(self.basis.columns(lo, self.boundary(m) - lo))
    }

    /// (P_m − P_{m−1}) v.
    pub fn project_increment(&self, m: usize, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(v)?;
        let block = self.block(m)?;
        let coef = block.tr_mul(v);
        Ok(block * coef)
    }

    /// P_k v; P_0 v = 0.
    pub fn project(&self, k: usize, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(v)?;
        if k > self.groups() {
            return Err(Error::IndexOutOfRange {
                index: k,
                max: self.groups(),
            });
        }
        let width = self.boundary(k);
        if width == 0 {
            return Ok(DVector::zeros(self.n()));
        }
        let q = self.basis.columns(0, width);
        let coef = q.tr_mul(v);
        Ok(q * coef)
    }

    /// Coordinates Qᵀv in the incremental basis.
    pub fn coordinates(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(v)?;
        Ok(self.basis.tr_mul(v))
    }

    /// Entry m−1 holds μᵀ(P_m − P_{m−1})μ for m = 1..q.
    pub fn quad_form_increments(&self, mu: &DVector<f64>) -> Result<Vec<f64>> {
        let c = self.coordinates(mu)?;
        Ok((1..=self.groups())
            .map(|m| {
                let lo = self.boundary(m - 1);
                c.rows(lo, self.boundary(m) - lo).norm_squared()
            })
            .collect())
    }

    /// Same design restricted to its first `m` groups.
    pub fn truncate(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.groups() {
            return Err(Error::IndexOutOfRange {
                index: m,
                max: self.groups(),
            });
        }
        let width = self.boundary(m);
        Ok(Self {
            x: self.x.columns(0, width).into_owned(),
            nu: self.nu[..m].to_vec(),
            basis: self.basis.columns(0, width).into_owned(),
        })
    }
}

/// True coefficients together with the cached mean μ = Xβ.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanModel {
    pub beta: DVector<f64>,
    pub mu: DVector<f64>,
}

impl MeanModel {
    pub fn new(x: &DMatrix<f64>, beta: DVector<f64>) -> Result<Self> {
        if x.ncols() != beta.len() {
            return Err(Error::DimensionMismatch(format!(
                "beta has length {}, design has {} columns",
                beta.len(),
                x.ncols()
            )));
        }
        let mu = x * &beta;
        Ok(Self { beta, mu })
    }

    /// Wraps a mean computed elsewhere, e.g. from predictor columns that are
    /// not part of the candidate design.
    pub fn from_parts(beta: DVector<f64>, mu: DVector<f64>) -> Self {
        Self { beta, mu }
    }

    /// ‖μ‖²/n.
    pub fn mean_square(&self) -> f64 {
        self.mu.norm_squared() / self.mu.len() as f64
    }
}

/// Reads a numeric CSV matrix, row-major. A first row that does not parse as
/// numbers is treated as a header.
pub fn read_csv_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(|s| s.parse::<f64>()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::Config(format!(
                    "{}: row {}: {e}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!(
            "{}: ragged rows",
            path.display()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
    }

    /// Dense hat matrix X_k (X_kᵀX_k)⁻¹ X_kᵀ for the first k columns.
    fn dense_hat(x: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        if k == 0 {
            return DMatrix::zeros(x.nrows(), x.nrows());
        }
        let xk = x.columns(0, k).into_owned();
        let gram = xk.tr_mul(&xk);
        &xk * gram.try_inverse().unwrap() * xk.transpose()
    }

    #[test]
    fn canonical_columns_are_kept() {
        let x = DMatrix::<f64>::identity(4, 4).columns(0, 3).into_owned();
        let d = NestedDesign::build(x.clone(), vec![1, 2, 3]).unwrap();
        assert!((d.basis() - &x).amax() < 1e-14);
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let s = 1.0 / 2f64.sqrt();
        let x = DMatrix::from_row_slice(3, 2, &[s, s, s, s, 0.0, 0.0]);
        assert_eq!(
            NestedDesign::build(x, vec![1, 2]).unwrap_err(),
            Error::RankDeficient(2)
        );
    }

    #[test]
    fn within_group_dependence_is_detected() {
        let mut x = gaussian(20, 3, 3);
        let c = x.column(1) * 2.0;
        x.set_column(2, &c);
        assert_eq!(
            NestedDesign::build(x, vec![1, 3]).unwrap_err(),
            Error::RankDeficient(2)
        );
    }

    #[test]
    fn bad_boundaries_are_rejected() {
        let x = gaussian(10, 3, 1);
        assert!(matches!(
            NestedDesign::build(x.clone(), vec![2, 2, 3]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            NestedDesign::build(x.clone(), vec![1, 2]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            NestedDesign::build(gaussian(3, 3, 1), vec![3]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn basis_is_orthonormal_and_spans_nested_models() {
        let x = gaussian(50, 6, 11);
        let d = NestedDesign::build(x.clone(), vec![2, 5, 6]).unwrap();
        let gram = d.basis().tr_mul(d.basis());
        assert!((gram - DMatrix::identity(6, 6)).amax() < 1e-10);

        for m in 1..=3 {
            let hat = dense_hat(&x, d.boundary(m));
            let q = d.basis().columns(0, d.boundary(m)).into_owned();
            let ours = &q * q.transpose();
            assert!((ours - hat).amax() < 1e-9);
            for j in 0..d.boundary(m) {
                let col = x.column(j).into_owned();
                let resid = &col - d.project(m, &col).unwrap();
                assert!(resid.norm() < 1e-8 * col.norm());
            }
        }
    }

    #[test]
    fn project_increment_matches_dense_oracle() {
        let x = gaussian(50, 6, 11);
        let d = NestedDesign::build(x.clone(), vec![2, 5, 6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = DVector::from_fn(50, |_, _| rng.sample(StandardNormal));
        let dense = (dense_hat(&x, 5) - dense_hat(&x, 2)) * &v;
        let ours = d.project_increment(2, &v).unwrap();
        assert!((ours - dense).amax() < 1e-9);
    }

    #[test]
    fn project_increment_on_span_and_complement() {
        let x = gaussian(30, 4, 2);
        let d = NestedDesign::build(x, vec![1, 3, 4]).unwrap();
        let inside = d.block(2).unwrap().column(1).into_owned() * 3.0;
        let back = d.project_increment(2, &inside).unwrap();
        assert!((back - &inside).amax() < 1e-12);
        let other = d.block(1).unwrap().column(0).into_owned();
        assert!(d.project_increment(2, &other).unwrap().amax() < 1e-12);
        assert!(matches!(
            d.project_increment(4, &other),
            Err(Error::IndexOutOfRange { index: 4, max: 3 })
        ));
    }

    #[test]
    fn quad_form_increments_orthonormal_case() {
        // Columns scaled so that (1/n) Σ x_ij² = 1.
        let n = 8;
        let mut x = DMatrix::zeros(n, 2);
        for i in 0..n {
            x[(i, 0)] = 1.0;
            x[(i, 1)] = if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        let d = NestedDesign::build(x.clone(), vec![1, 2]).unwrap();
        let mean = MeanModel::new(&x, DVector::from_vec(vec![1.0, 0.5])).unwrap();
        let inc = d.quad_form_increments(&mean.mu).unwrap();
        assert!((inc[0] - n as f64).abs() < 1e-12);
        assert!((inc[1] - 0.25 * n as f64).abs() < 1e-12);
        assert_eq!(
            d.quad_form_increments(&DVector::zeros(n)).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn quad_form_increments_sum_to_norm() {
        let x = gaussian(40, 5, 8);
        let d = NestedDesign::build(x.clone(), vec![2, 4, 5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mu = DVector::from_fn(40, |_, _| rng.sample(StandardNormal));
        let inc = d.quad_form_increments(&mu).unwrap();
        let resid = &mu - d.project(3, &mu).unwrap();
        let total: f64 = inc.iter().sum::<f64>() + resid.norm_squared();
        assert!((total - mu.norm_squared()).abs() < 1e-9 * mu.norm_squared());
        for (m, got) in inc.iter().enumerate() {
            let lo = d.boundary(m);
            let hi = d.boundary(m + 1);
            let dense = (dense_hat(&x, hi) - dense_hat(&x, lo)) * &mu;
            assert!((mu.dot(&dense) - got).abs() < 1e-9);
        }
    }

    #[test]
    fn truncate_keeps_prefix() {
        let x = gaussian(30, 5, 4);
        let d = NestedDesign::build(x, vec![1, 3, 5]).unwrap();
        let t = d.truncate(2).unwrap();
        assert_eq!(t.groups(), 2);
        assert_eq!(t.p(), 3);
        assert_eq!(t.basis(), &d.basis().columns(0, 3).into_owned());
    }

    #[test]
    fn csv_with_and_without_header() {
        let dir = std::env::temp_dir().join(format!("nestavg-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let a = dir.join("a.csv");
        std::fs::write(&a, "x1,x2\n1,2\n3,4\n5,6\n").unwrap();
        let b = dir.join("b.csv");
        std::fs::write(&b, "1,2\n3,4\n5,6\n").unwrap();
        let ma = read_csv_matrix(&a).unwrap();
        let mb = read_csv_matrix(&b).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(ma.shape(), (3, 2));
        assert_eq!(ma[(2, 1)], 6.0);
        std::fs::remove_dir_all(dir).ok();
    }
}
