//! Seeded battery of finite-sample oracle inequalities: discrete-optimum
//! closed form vs enumeration, the N = 1 collapse, the box/simplex/grid
//! sandwich with its 1/(2N) bound, and the first-group gap identity.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::covariance::CovarianceSpec;
use crate::design::NestedDesign;
use crate::error::Result;
use crate::oracle::RiskProfile;
use crate::weights::{for_each_composition, WeightSet, WeightVector};

/// Largest grid resolution exercised by the battery.
pub const MAX_GRID_N: usize = 4;

/// A random instance: a real design with a mean whose increments follow a
/// nonincreasing θ sequence.
#[derive(Debug, Clone)]
pub struct Instance {
    pub design: NestedDesign,
    pub cov: CovarianceSpec,
    pub mu: DVector<f64>,
    pub profile: RiskProfile,
}

/// Draws a design with n ≤ 80 and M ≤ 6 groups, a scalar or AR(1)
/// covariance and a mean with θ_1 ≥ θ_2 ≥ … ≥ θ_M.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R) -> Result<Instance> {
    let n = rng.random_range(20..=80);
    let m = rng.random_range(1..=6);
    let mut nu = Vec::with_capacity(m);
    let mut acc = 0;
    for _ in 0..m {
        acc += rng.random_range(1..=3);
        nu.push(acc);
    }
    let x = DMatrix::from_fn(n, acc, |_, _| rng.sample::<f64, _>(StandardNormal));
    let design = NestedDesign::build(x, nu)?;
    let cov = if rng.random_bool(0.5) {
        CovarianceSpec::scalar(rng.random_range(0.2..3.0))
    } else {
        CovarianceSpec::ar1(rng.random_range(-0.7..0.7), rng.random_range(0.2..3.0))
    };

    // θ sorted nonincreasing on a log scale spanning weak and strong signals
    let mut theta: Vec<f64> = (0..m)
        .map(|_| 10f64.powf(rng.random_range(-4.0..1.0)) / n as f64)
        .collect();
    theta.sort_by(|a, b| b.total_cmp(a));
    let mut mu = DVector::zeros(n);
    for k in 1..=m {
        let v = cov.trace_increment(&design, k)?;
        let b = n as f64 * theta[k - 1] * v;
        let block = design.block(k)?;
        let mut dir = DVector::from_fn(block.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        dir /= dir.norm();
        mu += block * dir * b.sqrt();
    }
    // a component outside the span supplies the residual bias
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let off = &z - design.project(m, &z)?;
    mu += off * rng.random_range(0.0..0.3);
    let profile = RiskProfile::new(&design, &cov, &mu, m)?;
    Ok(Instance {
        design,
        cov,
        mu,
        profile,
    })
}

/// Minimum averaging risk over W(N) by enumerating every composition.
pub fn enumerate_grid_risk(profile: &RiskProfile, n: usize) -> Result<f64> {
    let m = profile.candidates();
    let mut best = f64::INFINITY;
    let mut err = None;
    for_each_composition(m, n, |c| match WeightVector::from_counts(c, n).and_then(|w| profile.risk_ma(&w)) {
        Ok(r) => best = best.min(r),
        Err(e) => err = Some(e),
    });
    match err {
        Some(e) => Err(e),
        None => Ok(best),
    }
}

/// Outcome of one named inequality over the battery.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub checked: usize,
    pub violations: usize,
    /// Largest discrepancy (or excess over the bound) seen.
    pub worst: f64,
}

impl CheckResult {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            checked: 0,
            violations: 0,
            worst: 0.0,
        }
    }

    /// Records `excess`; positive values beyond `tol` are violations.
    fn record(&mut self, excess: f64, tol: f64) {
        self.checked += 1;
        self.worst = self.worst.max(excess);
        if !(excess <= tol) {
            self.violations += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0 && self.checked > 0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BatteryReport {
    pub seed: u64,
    pub instances: usize,
    pub checks: Vec<CheckResult>,
}

impl BatteryReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const CLOSED_FORM_VS_ENUMERATION: &str = "grid_closed_form_vs_enumeration";
pub const THRESHOLD_FORM_VS_ENUMERATION: &str = "grid_threshold_form_vs_enumeration";
pub const GRID_ONE_COLLAPSE: &str = "grid_n1_equals_selection";
pub const SANDWICH: &str = "box_le_simplex_le_grid";
pub const GRID_GAP_BOUND: &str = "grid_gap_le_selection_over_2n";
pub const FIRST_GROUP_GAP: &str = "simplex_minus_box_identity";
pub const SIMPLEX_VS_QP: &str = "simplex_closed_form_vs_qp";

/// Runs every check on `instances` seeded random instances. Tolerances are
/// relative to the instance's selection risk.
pub fn run_battery(seed: u64, instances: usize) -> Result<BatteryReport> {
    let mut enum_check = CheckResult::new(CLOSED_FORM_VS_ENUMERATION);
    let mut lemma = CheckResult::new(THRESHOLD_FORM_VS_ENUMERATION);
    let mut collapse = CheckResult::new(GRID_ONE_COLLAPSE);
    let mut sandwich = CheckResult::new(SANDWICH);
    let mut bound = CheckResult::new(GRID_GAP_BOUND);
    let mut gap = CheckResult::new(FIRST_GROUP_GAP);
    let mut qp = CheckResult::new(SIMPLEX_VS_QP);
    for i in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let inst = random_instance(&mut rng)?;
        let p = &inst.profile;
        let r_ms = p.risk_ms_star();
        let scale = r_ms.max(1.0);
        let simplex = p.oracle_simplex()?.risk;
        let bx = p.oracle_box()?.risk;

        for n in 1..=MAX_GRID_N {
            let grid = p.oracle_grid(n)?.risk;
            let brute = enumerate_grid_risk(p, n)?;
            enum_check.record((grid - brute).abs() / scale, 1e-10);
            lemma.record((p.grid_risk_by_thresholds(n)? - brute).abs() / scale, 1e-10);
            if n == 1 {
                collapse.record((grid - r_ms).abs() / scale, 1e-12);
            }
            let tol = 1e-12 * scale;
            sandwich.record((bx - simplex).max(simplex - grid), tol);
            bound.record((grid - simplex) - r_ms / (2.0 * n as f64), tol);
        }
        gap.record(((simplex - bx) - p.first_group_gap()).abs() / scale, 1e-10);

        let (h, g, c) = p.quadratic();
        let sol = crate::qp::QpProblem::new(h, g, WeightSet::Simplex)?.solve()?;
        qp.record((sol.objective + c - simplex) / scale, 1e-8);
    }
    Ok(BatteryReport {
        seed,
        instances,
        checks: vec![enum_check, lemma, collapse, sandwich, bound, gap, qp],
    })
}

/// Profile with algebraically decaying θ on an orthonormal design with
/// unequal group sizes and M = 3n^{1/3} candidates, for the large-n
/// lower bound R(w*) ≥ ½R(m*).
pub fn large_n_profile<R: Rng + ?Sized>(rng: &mut R) -> Result<RiskProfile> {
    let n = rng.random_range(500..=5000);
    let alpha = rng.random_range(0.6..2.0);
    let scale = rng.random_range(0.5..4.0);
    let sigma2 = rng.random_range(0.5..2.0);
    let m = (3.0 * (n as f64).cbrt()).round() as usize;
    let q = 4 * m;
    let mut bias = Vec::with_capacity(q);
    let mut var = Vec::with_capacity(q);
    for k in 1..=q {
        let size = rng.random_range(1..=3) as f64;
        let v = sigma2 * size;
        bias.push(n as f64 * scale * (k as f64).powf(-2.0 * alpha) * v);
        var.push(v);
    }
    RiskProfile::from_increments(n, bias, var, 0.0, m)
}
