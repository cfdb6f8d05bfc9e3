//! Monte Carlo engine for the three simulation designs: data generation,
//! the replication loop, loss aggregation and normalized risk tables, plus
//! exact oracle diagnostics along a sample-size grid.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{DecayKind, MRule};
use crate::averagers::{averaged_fit, MaCriterion};
use crate::covariance::CovarianceSpec;
use crate::design::{MeanModel, NestedDesign};
use crate::error::{Error, Result};
use crate::oracle::RiskProfile;
use crate::selectors::{Criterion, FitCache};
use crate::weights::{WeightSet, WeightVector};

/// Largest tolerated fraction of aborted replicates.
pub const MAX_ABORT_FRACTION: f64 = 0.01;
/// RNG stream reserved for the shared design in fixed-design mode.
const DESIGN_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Example {
    /// Groups of alternating sizes 2 and 3, intercept plus iid normal predictors.
    Ex1,
    /// One predictor per group, heteroscedastic and autocorrelated errors.
    Ex2,
    /// One predictor per group, Toeplitz-correlated predictors.
    Ex3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Aic,
    Bic,
    Cp,
    Loocv,
    Mma,
    Jma,
    Jma2,
    /// Exact oracle simplex weights from the known mean and covariance.
    Oracle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Aic => "aic",
            Method::Bic => "bic",
            Method::Cp => "cp",
            Method::Loocv => "loocv",
            Method::Mma => "mma",
            Method::Jma => "jma",
            Method::Jma2 => "jma2",
            Method::Oracle => "oracle",
        }
    }

    fn criterion(self) -> Option<Criterion> {
        match self {
            Method::Aic => Some(Criterion::Aic),
            Method::Bic => Some(Criterion::Bic),
            Method::Cp => Some(Criterion::Cp),
            Method::Loocv => Some(Criterion::Loocv),
            _ => None,
        }
    }
}

impl Example {
    pub fn name(self) -> &'static str {
        match self {
            Example::Ex1 => "ex1",
            Example::Ex2 => "ex2",
            Example::Ex3 => "ex3",
        }
    }

    pub fn default_methods(self) -> Vec<Method> {
        match self {
            Example::Ex2 => vec![Method::Aic, Method::Bic, Method::Loocv, Method::Jma2, Method::Jma],
            _ => vec![Method::Aic, Method::Bic, Method::Loocv, Method::Mma],
        }
    }

    /// Method whose risk divides all others.
    pub fn normalizer(self) -> Method {
        match self {
            Example::Ex2 => Method::Jma,
            _ => Method::Mma,
        }
    }

    /// All group boundaries ν_1 < … < ν_q = p.
    pub fn boundaries(self, p: usize) -> Vec<usize> {
        match self {
            Example::Ex1 => {
                let mut nu = Vec::new();
                for m in 1.. {
                    let b = if m % 2 == 1 { 5 * (m / 2) + 2 } else { 5 * (m / 2) };
                    if b >= p {
                        break;
                    }
                    nu.push(b);
                }
                nu.push(p);
                nu
            }
            _ => (1..=p).collect(),
        }
    }
}

fn default_rho() -> f64 {
    0.5
}

fn default_scale() -> f64 {
    1.0
}

fn default_reps() -> usize {
    1000
}

/// One simulation setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    pub example: Example,
    pub n: usize,
    pub decay: DecayKind,
    /// Population R² (R̃² for the second design).
    pub r2: f64,
    #[serde(default = "default_rho")]
    pub rho1: f64,
    #[serde(default = "default_rho")]
    pub rho2: f64,
    #[serde(default = "default_reps")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub methods: Option<Vec<Method>>,
    /// Draw the design once and resample only the noise.
    #[serde(default)]
    pub fixed_design: bool,
    /// Multiplies the error covariance (use a tiny value for noiseless checks).
    #[serde(default = "default_scale")]
    pub noise_scale: f64,
    /// Overrides the candidate count rule.
    #[serde(default)]
    pub candidates: Option<usize>,
    /// Overrides the predictor count rule.
    #[serde(default)]
    pub predictors: Option<usize>,
    /// Record per-replicate choices.
    #[serde(default)]
    pub audit: bool,
}

impl DgpConfig {
    pub fn new(example: Example, n: usize, decay: DecayKind, r2: f64) -> Self {
        Self {
            example,
            n,
            decay,
            r2,
            rho1: 0.5,
            rho2: 0.5,
            replications: 1000,
            seed: 0,
            methods: None,
            fixed_design: false,
            noise_scale: 1.0,
            candidates: None,
            predictors: None,
            audit: false,
        }
    }

    /// p = ⌊5 n^{2/3}⌋ unless overridden.
    pub fn p(&self) -> usize {
        self.predictors.unwrap_or_else(|| {
            let c = (self.n as f64).cbrt();
            (5.0 * c * c + 1e-9).floor() as usize
        })
    }

    /// M = nearest integer to 3 n^{1/3} unless overridden.
    pub fn m(&self) -> usize {
        self.candidates
            .unwrap_or_else(|| (3.0 * (self.n as f64).cbrt()).round() as usize)
    }

    pub fn methods(&self) -> Vec<Method> {
        self.methods.clone().unwrap_or_else(|| self.example.default_methods())
    }

    pub fn decay_param(&self) -> f64 {
        match self.decay {
            DecayKind::Algebraic { alpha } => alpha,
            DecayKind::Exponential { c } => c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.r2 > 0.0 && self.r2 < 1.0) {
            return bad(format!("r2 must lie in (0, 1), got {}", self.r2));
        }
        match self.decay {
            DecayKind::Algebraic { alpha } if !(alpha > 0.0) => {
                return bad(format!("decay exponent must be positive, got {alpha}"))
            }
            DecayKind::Exponential { c } if !(c > 0.0) => {
                return bad(format!("decay rate must be positive, got {c}"))
            }
            _ => {}
        }
        for (name, rho) in [("rho1", self.rho1), ("rho2", self.rho2)] {
            if !(rho.abs() < 1.0) {
                return bad(format!("{name} must lie in (−1, 1), got {rho}"));
            }
        }
        if !(self.noise_scale > 0.0) {
            return bad(format!("noise_scale must be positive, got {}", self.noise_scale));
        }
        if self.replications == 0 {
            return bad("replications must be positive".into());
        }
        let (p, m) = (self.p(), self.m());
        if p == 0 {
            return bad("need at least one predictor".into());
        }
        let nu = self.example.boundaries(p);
        if m < 1 || m > nu.len() {
            return bad(format!("candidate count {m} outside 1..={}", nu.len()));
        }
        if nu[m - 1] >= self.n {
            return bad(format!("candidate columns {} must be fewer than n={}", nu[m - 1], self.n));
        }
        if self.example == Example::Ex2 && nu[m - 1] < 2 {
            return bad("the second design needs at least two candidate predictors".into());
        }
        let methods = self.methods();
        if methods.is_empty() {
            return bad("method list is empty".into());
        }
        if !methods.contains(&self.example.normalizer()) {
            return bad(format!(
                "{} results are normalized by {}, which must be among the methods",
                self.example.name(),
                self.example.normalizer().name()
            ));
        }
        Ok(())
    }
}

/// A drawn data-generating process restricted to its candidate columns.
#[derive(Debug, Clone)]
pub struct Dgp {
    /// Nested design over the candidate groups (plus any requested extra).
    pub design: NestedDesign,
    /// Coefficients over all p predictors and the mean μ.
    pub mean: MeanModel,
    pub cov: CovarianceSpec,
    /// Candidate count M.
    pub candidates: usize,
    pub p: usize,
    /// Scalar error variance when the errors are homoscedastic.
    pub sigma2: Option<f64>,
}

fn decay_value(decay: DecayKind, m: usize) -> f64 {
    match decay {
        DecayKind::Algebraic { alpha } => (m as f64).powf(-alpha),
        DecayKind::Exponential { c } => (-c * m as f64).exp(),
    }
}

/// Coefficients over all p predictors.
pub fn coefficients(cfg: &DgpConfig, p: usize) -> Result<Vec<f64>> {
    match cfg.example {
        Example::Ex1 => {
            let nu = cfg.example.boundaries(p);
            let mut beta = Vec::with_capacity(p);
            let mut lo = 0;
            for (g, &hi) in nu.iter().enumerate() {
                let b = decay_value(cfg.decay, g + 1);
                beta.extend(std::iter::repeat(b).take(hi - lo));
                lo = hi;
            }
            Ok(beta)
        }
        Example::Ex2 => {
            let c = (cfg.r2 / (1.0 - cfg.r2)).sqrt();
            Ok((1..=p)
                .map(|m| {
                    let zeta = match m {
                        1 => 2.0 / (1.0 - cfg.rho1),
                        2 => 4.0,
                        _ => 2.0,
                    };
                    c * zeta.sqrt() * decay_value(cfg.decay, m)
                })
                .collect())
        }
        Example::Ex3 => {
            // target increments ξ_j = decay(j)²
            let xi = |j: usize| decay_value(cfg.decay, j).powi(2);
            let rho = cfg.rho2;
            let s = (1.0 - rho * rho).sqrt();
            let mut beta = Vec::with_capacity(p);
            for j in 1..=p {
                let b = if j == 1 {
                    xi(1).sqrt() - rho * (xi(2) / (1.0 - rho * rho)).sqrt()
                } else {
                    (xi(j).sqrt() - rho * xi(j + 1).sqrt()) / s
                };
                if b < 0.0 {
                    return Err(Error::NegativeBeta(j));
                }
                beta.push(b);
            }
            Ok(beta)
        }
    }
}

/// Empirical variance with divisor n.
fn empirical_variance(v: &DVector<f64>) -> f64 {
    let mean = v.mean();
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64
}

/// Draws one design, mean and covariance. The returned design spans the
/// first M + `extra` groups; μ uses all p predictors.
pub fn make_dgp_with_extra<R: Rng + ?Sized>(cfg: &DgpConfig, rng: &mut R, extra: usize) -> Result<Dgp> {
    cfg.validate()?;
    let (n, p, m) = (cfg.n, cfg.p(), cfg.m());
    let beta = coefficients(cfg, p)?;
    let nu_all = cfg.example.boundaries(p);
    let groups = (m + extra).min(nu_all.len());
    let nu: Vec<usize> = nu_all[..groups].to_vec();
    let width = nu[groups - 1];
    if width >= n {
        return Err(Error::Config(format!("candidate columns {width} must be fewer than n={n}")));
    }

    let mut x = DMatrix::<f64>::zeros(n, width);
    let mut mu = DVector::<f64>::zeros(n);
    let mut row = vec![0.0; p];
    let rho = cfg.rho2;
    let s = (1.0 - rho * rho).sqrt();
    for i in 0..n {
        match cfg.example {
            Example::Ex1 | Example::Ex2 => {
                row[0] = 1.0;
                for v in row.iter_mut().skip(1) {
                    *v = rng.sample(StandardNormal);
                }
            }
            Example::Ex3 => {
                row[0] = rng.sample(StandardNormal);
                for j in 1..p {
                    let z: f64 = rng.sample(StandardNormal);
                    row[j] = rho * row[j - 1] + s * z;
                }
            }
        }
        mu[i] = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
        for j in 0..width {
            x[(i, j)] = row[j];
        }
    }

    let (cov, sigma2) = match cfg.example {
        Example::Ex2 => {
            let d: Vec<f64> = (0..n).map(|i| cfg.noise_scale * x[(i, 1)] * x[(i, 1)]).collect();
            let cov = CovarianceSpec::Sum {
                parts: vec![
                    CovarianceSpec::Diagonal { d },
                    CovarianceSpec::ar1(cfg.rho1, cfg.noise_scale),
                ],
            };
            (cov, None)
        }
        _ => {
            let var_mu = empirical_variance(&mu);
            let s2 = cfg.noise_scale * var_mu * (1.0 - cfg.r2) / cfg.r2;
            if !(s2 > 0.0) {
                return Err(Error::Config("the drawn mean has zero variance".into()));
            }
            (CovarianceSpec::scalar(s2), Some(s2))
        }
    };
    let design = NestedDesign::build(x, nu)?;
    Ok(Dgp {
        design,
        mean: MeanModel::from_parts(DVector::from_vec(beta), mu),
        cov,
        candidates: m,
        p,
        sigma2,
    })
}

/// Draws one design, mean and covariance over the M candidate groups.
pub fn make_dgp<R: Rng + ?Sized>(cfg: &DgpConfig, rng: &mut R) -> Result<Dgp> {
    make_dgp_with_extra(cfg, rng, 0)
}

/// Per-replicate generator: stream `replicate` of the configured seed.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRecord {
    pub replicate: usize,
    pub method: Method,
    pub loss: f64,
    /// Selected model for selection methods.
    pub index: Option<usize>,
    /// Weights for averaging methods.
    pub weights: Option<Vec<f64>>,
    /// Criterion scores for selection methods.
    pub scores: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_loss: f64,
    pub se: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub config: DgpConfig,
    pub rows: Vec<MethodSummary>,
    /// Completed replicates.
    pub replications: usize,
    pub aborted: usize,
    /// Why each aborted replicate failed, in replicate order.
    pub abort_reasons: Vec<String>,
    pub audit: Option<Vec<AuditRecord>>,
}

impl SimResult {
    pub fn row(&self, method: Method) -> Option<&MethodSummary> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn normalized(&self, method: Method) -> Option<f64> {
        self.row(method).map(|r| r.normalized)
    }
}

/// Evaluates every method on one response; returns losses and audit records.
pub fn evaluate_methods(
    dgp: &Dgp,
    y: &DVector<f64>,
    methods: &[Method],
    replicate: usize,
    audit: bool,
) -> Result<(Vec<f64>, Vec<AuditRecord>)> {
    let m = dgp.candidates;
    let cache = FitCache::new(y, &dgp.design, m)?;
    let mu = &dgp.mean.mu;
    let mut losses = Vec::with_capacity(methods.len());
    let mut records = Vec::new();
    for &method in methods {
        let (loss, index, weights, scores) = if let Some(c) = method.criterion() {
            let sel = cache.select(c)?;
            let loss = (cache.fitted().column(sel.index - 1) - mu).norm_squared();
            (loss, Some(sel.index), None, Some(sel.scores))
        } else {
            let w = match method {
                Method::Mma => MaCriterion::mma(&cache).solve()?.weights,
                Method::Jma => MaCriterion::jma(&cache, y, WeightSet::Simplex)?.solve()?.weights,
                Method::Jma2 => MaCriterion::jma(&cache, y, WeightSet::Box)?.solve()?.weights,
                _ => RiskProfile::new(&dgp.design, &dgp.cov, mu, m)?.oracle_simplex()?.weights,
            };
            let loss = (averaged_fit(&cache, &w) - mu).norm_squared();
            (loss, None, Some(w.as_slice().to_vec()), None)
        };
        if !loss.is_finite() {
            return Err(Error::Domain(format!("{} produced a non-finite loss", method.name())));
        }
        losses.push(loss);
        if audit {
            records.push(AuditRecord {
                replicate,
                method,
                loss,
                index,
                weights,
                scores,
            });
        }
    }
    Ok((losses, records))
}

/// Sum by recursive halving; independent of how the values were produced.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Mean and standard error of the mean.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = pairwise_sum(v) / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs all replicates of one setting on the current rayon pool.
pub fn run_study(cfg: &DgpConfig) -> Result<SimResult> {
    cfg.validate()?;
    let methods = cfg.methods();
    let shared = if cfg.fixed_design {
        Some(make_dgp(cfg, &mut replicate_rng(cfg.seed, DESIGN_STREAM))?)
    } else {
        None
    };
    type Outcome = std::result::Result<(Vec<f64>, Vec<AuditRecord>), String>;
    let outcomes: Vec<Outcome> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(cfg.seed, r as u64);
            let mut run = || -> Result<(Vec<f64>, Vec<AuditRecord>)> {
                let owned;
                let dgp = match &shared {
                    Some(d) => d,
                    None => {
                        owned = make_dgp(cfg, &mut rng)?;
                        &owned
                    }
                };
                let y = &dgp.mean.mu + dgp.cov.sample(cfg.n, &mut rng);
                evaluate_methods(dgp, &y, &methods, r, cfg.audit)
            };
            run().map_err(|e| format!("replicate {r}: {e}"))
        })
        .collect();

    let total = outcomes.len();
    let mut per_method: Vec<Vec<f64>> = vec![Vec::with_capacity(total); methods.len()];
    let mut audit = Vec::new();
    let mut reasons = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok((losses, records)) => {
                for (k, l) in losses.into_iter().enumerate() {
                    per_method[k].push(l);
                }
                audit.extend(records);
            }
            Err(reason) => {
                reasons.push(reason);
            }
        }
    }
    let aborted = reasons.len();
    if aborted as f64 > MAX_ABORT_FRACTION * total as f64 || aborted == total {
        return Err(Error::TooManyAborted {
            aborted,
            total,
            reason: reasons.pop().unwrap_or_default(),
        });
    }
    let stats: Vec<(f64, f64)> = per_method.iter().map(|v| mean_se(v)).collect();
    let norm_idx = methods
        .iter()
        .position(|&m| m == cfg.example.normalizer())
        .expect("validated");
    let denom = stats[norm_idx].0;
    let rows = methods
        .iter()
        .zip(&stats)
        .enumerate()
        .map(|(k, (&method, &(mean, se)))| MethodSummary {
            method,
            mean_loss: mean,
            se,
            normalized: if k == norm_idx { 1.0 } else { mean / denom },
        })
        .collect();
    Ok(SimResult {
        config: cfg.clone(),
        rows,
        replications: total - aborted,
        aborted,
        abort_reasons: reasons,
        audit: cfg.audit.then_some(audit),
    })
}

/// A grid of settings sharing one example and decay family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub example: Example,
    /// "algebraic" or "exponential".
    pub family: DecayFamily,
    /// Decay exponents (algebraic) or rates (exponential).
    pub decay_params: Vec<f64>,
    pub n: Vec<usize>,
    pub r2: Vec<f64>,
    #[serde(default = "default_reps")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub methods: Option<Vec<Method>>,
    #[serde(default)]
    pub fixed_design: bool,
    #[serde(default = "default_scale")]
    pub noise_scale: f64,
    #[serde(default = "default_rho")]
    pub rho1: f64,
    #[serde(default = "default_rho")]
    pub rho2: f64,
    #[serde(default)]
    pub candidates: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayFamily {
    Algebraic,
    Exponential,
}

impl DecayFamily {
    pub fn name(self) -> &'static str {
        match self {
            DecayFamily::Algebraic => "algebraic",
            DecayFamily::Exponential => "exponential",
        }
    }

    pub fn with_param(self, v: f64) -> DecayKind {
        match self {
            DecayFamily::Algebraic => DecayKind::Algebraic { alpha: v },
            DecayFamily::Exponential => DecayKind::Exponential { c: v },
        }
    }
}

impl StudyConfig {
    /// Output file stem, one per (example, decay family).
    pub fn stem(&self) -> String {
        format!("{}_{}", self.example.name(), self.family.name())
    }

    /// All settings in (decay, r2, n) order.
    pub fn settings(&self) -> Vec<DgpConfig> {
        let mut out = Vec::new();
        for &a in &self.decay_params {
            for &r2 in &self.r2 {
                for &n in &self.n {
                    out.push(DgpConfig {
                        rho1: self.rho1,
                        rho2: self.rho2,
                        replications: self.replications,
                        seed: self.seed,
                        methods: self.methods.clone(),
                        fixed_design: self.fixed_design,
                        noise_scale: self.noise_scale,
                        candidates: self.candidates,
                        ..DgpConfig::new(self.example, n, self.family.with_param(a), r2)
                    });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.decay_params.is_empty() || self.n.is_empty() || self.r2.is_empty() {
            return Err(Error::Config("decay_params, n and r2 must be nonempty".into()));
        }
        self.settings().iter().try_for_each(DgpConfig::validate)
    }
}

/// Writes result tables: method, n, r2, decay-param, mean_loss, se, normalized.
pub fn write_results_csv<W: Write>(results: &[SimResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Config(e.to_string());
    w.write_record(["method", "n", "r2", "decay-param", "mean_loss", "se", "normalized"])
        .map_err(io)?;
    for res in results {
        for row in &res.rows {
            w.write_record([
                row.method.name().to_string(),
                res.config.n.to_string(),
                format!("{:e}", res.config.r2),
                format!("{:e}", res.config.decay_param()),
                format!("{:e}", row.mean_loss),
                format!("{:e}", row.se),
                format!("{:e}", row.normalized),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::Config(e.to_string()))
}

/// Monte Carlo mean loss (and its standard error) of the fixed averaging
/// weights `w` on a fixed design, resampling only the noise.
pub fn fixed_weight_loss(
    design: &NestedDesign,
    mu: &DVector<f64>,
    cov: &CovarianceSpec,
    w: &WeightVector,
    reps: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let m = w.len();
    if m > design.groups() {
        return Err(Error::DimensionMismatch(format!(
            "{m} weights for {} groups",
            design.groups()
        )));
    }
    let gamma = w.tail_sums();
    let width = design.boundary(m);
    let q = design.basis().columns(0, width);
    let mut scale = vec![0.0; width];
    for k in 1..=m {
        for s in scale.iter_mut().take(design.boundary(k)).skip(design.boundary(k - 1)) {
            *s = gamma[k - 1];
        }
    }
    let scale = DVector::from_vec(scale);
    let losses: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r as u64);
            let y = mu + cov.sample(design.n(), &mut rng);
            let c = q.tr_mul(&y).component_mul(&scale);
            (q * c - mu).norm_squared()
        })
        .collect();
    Ok(mean_se(&losses))
}

/// Sample-size sweep of exact oracle quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DiagnosticsConfig {
    /// Orthonormal design with one predictor per group: b_m = nβ_m², v_m = σ².
    Diagonal {
        decay: DecayKind,
        sigma2: f64,
        m_rule: MRule,
        n: Vec<usize>,
    },
    /// One seeded design per n drawn from a simulation setting.
    Example { setting: DgpConfig, n: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRow {
    pub n: usize,
    pub candidates: usize,
    pub m_star: usize,
    pub m_star_star: usize,
    pub risk_ms: f64,
    pub risk_ma: f64,
    pub delta: f64,
    pub ratio: f64,
    /// M_n < m**_n (selection is limited by the candidate count).
    pub below_optimal: bool,
}

fn diagnostics_row(n: usize, profile: &RiskProfile) -> Result<DiagnosticsRow> {
    let ms = profile.risk_ms();
    let gap = profile.delta_gap()?;
    let risk_ms = ms.risks[ms.m_star - 1];
    Ok(DiagnosticsRow {
        n,
        candidates: profile.candidates(),
        m_star: ms.m_star,
        m_star_star: ms.m_star_star,
        risk_ms,
        risk_ma: risk_ms - gap.delta,
        delta: gap.delta,
        ratio: gap.ratio,
        below_optimal: ms.m_star_star > profile.candidates(),
    })
}

/// Profile of the orthonormal shortcut design with p = ⌊5n^{2/3}⌋ groups.
pub fn diagonal_profile(decay: DecayKind, sigma2: f64, m: usize, n: usize) -> Result<RiskProfile> {
    let c = (n as f64).cbrt();
    let p = ((5.0 * c * c + 1e-9).floor() as usize).max(m);
    let bias = (1..=p).map(|k| n as f64 * decay_value(decay, k).powi(2)).collect();
    RiskProfile::from_increments(n, bias, vec![sigma2; p], 0.0, m)
}

pub fn oracle_diagnostics(cfg: &DiagnosticsConfig) -> Result<Vec<DiagnosticsRow>> {
    match cfg {
        DiagnosticsConfig::Diagonal { decay, sigma2, m_rule, n } => n
            .iter()
            .map(|&n| {
                let m = (m_rule.eval(n as f64).round() as usize).max(1);
                let profile = diagonal_profile(*decay, *sigma2, m, n)?;
                diagnostics_row(n, &profile)
            })
            .collect(),
        DiagnosticsConfig::Example { setting, n } => n
            .iter()
            .map(|&n| {
                let cfg = DgpConfig { n, ..setting.clone() };
                // one extra group tells whether the optimum lies beyond M
                let dgp = make_dgp_with_extra(&cfg, &mut replicate_rng(cfg.seed, DESIGN_STREAM), 1)?;
                let profile = RiskProfile::new(&dgp.design, &dgp.cov, &dgp.mean.mu, dgp.candidates)?;
                diagnostics_row(n, &profile)
            })
            .collect(),
    }
}

pub fn write_diagnostics_csv<W: Write>(rows: &[DiagnosticsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Config(e.to_string());
    w.write_record([
        "n", "M", "m_star", "m_star_star", "R_ms", "R_ma", "delta", "ratio", "regime",
    ])
    .map_err(io)?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.candidates.to_string(),
            r.m_star.to_string(),
            r.m_star_star.to_string(),
            format!("{:e}", r.risk_ms),
            format!("{:e}", r.risk_ma),
            format!("{:e}", r.delta),
            format!("{:e}", r.ratio),
            if r.below_optimal { "M<m**" } else { "M>=m**" }.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Config(e.to_string()))
}
