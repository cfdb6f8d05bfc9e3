//! Limiting risks for algebraic (β_m = m^{−α}) and exponential
//! (β_m = e^{−cm}) coefficient decay: incomplete beta values, the grid
//! constants ψ*_N, limiting risk ratios between simplex and grid averaging,
//! regime-matched asymptotic risks, and an empirical decay classifier.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::beta::{checked_beta, checked_beta_inc};

use crate::error::{Error, Result};

/// Non-regularized incomplete beta B(x; a, b) = ∫₀ˣ t^{a−1}(1 − t)^{b−1} dt.
pub fn inc_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) || !(a > 0.0) || !(b > 0.0) {
        return Err(Error::Domain(format!(
            "incomplete beta needs 0 ≤ x ≤ 1 and a, b > 0, got x={x}, a={a}, b={b}"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return checked_beta(a, b).map_err(|e| Error::Domain(e.to_string()));
    }
    checked_beta_inc(a, b, x).map_err(|e| Error::Domain(e.to_string()))
}

/// Limit of M_n / m**_n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kappa {
    Finite(f64),
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecayKind {
    /// β_m = m^{−α}, α > ½.
    Algebraic { alpha: f64 },
    /// β_m = e^{−cm}, c > 0.
    Exponential { c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayModel {
    pub kind: DecayKind,
    pub sigma2: f64,
    pub kappa: Kappa,
    /// Grid resolution.
    pub n_grid: usize,
}

impl DecayModel {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DecayKind::Algebraic { alpha } if !(alpha > 0.5) => {
                return Err(Error::Domain(format!("α must exceed 1/2, got {alpha}")))
            }
            DecayKind::Exponential { c } if !(c > 0.0) => {
                return Err(Error::Domain(format!("c must be positive, got {c}")))
            }
            _ => {}
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::Domain(format!("σ² must be positive, got {}", self.sigma2)));
        }
        if let Kappa::Finite(k) = self.kappa {
            if !(k > 0.0) || !k.is_finite() {
                return Err(Error::Domain(format!("κ must be positive, got {k}")));
            }
        }
        if self.n_grid == 0 {
            return Err(Error::InvalidN(0));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.5 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("α must exceed 1/2, got {alpha}")))
    }
}

/// i*_N = ⌈N/(1 + κ^{2α}) − ½⌉, or 0 for κ = ∞.
pub fn i_star(n_grid: usize, alpha: f64, kappa: Kappa) -> usize {
    match kappa {
        Kappa::Infinite => 0,
        Kappa::Finite(k) => {
            let v = (n_grid as f64 / (1.0 + k.powf(2.0 * alpha)) - 0.5).ceil();
            v.clamp(0.0, n_grid as f64) as usize
        }
    }
}

/// ψ*_N, the normalized limiting grid-averaging risk.
pub fn psi_star(n_grid: usize, alpha: f64, kappa: Kappa) -> Result<f64> {
    check_alpha(alpha)?;
    if n_grid == 0 {
        return Err(Error::InvalidN(0));
    }
    let nf = n_grid as f64;
    let i0 = i_star(n_grid, alpha, kappa);
    let e = 1.0 / (2.0 * alpha);
    let mut sum = 0.0;
    for i in i0..n_grid {
        let t = (2 * i + 1) as f64 / (2.0 * nf);
        sum += t.powf(1.0 - e) * (1.0 - t).powf(e);
    }
    let mut psi = 2.0 / nf * sum;
    if let Kappa::Finite(k) = kappa {
        let r = i0 as f64 / nf;
        psi += (2.0 * alpha - 1.0) / (2.0 * alpha) * r * r * k;
        psi -= e * (1.0 - r) * (1.0 - r) * k.powf(1.0 - 2.0 * alpha);
    }
    Ok(psi)
}

/// lim_{N→∞} ψ*_N = ((2α−1)/4α²)[π/sin(π/2α) − B(1/(1+κ^{2α}); 1 − 1/2α, 1/2α)].
pub fn psi_limit(alpha: f64, kappa: Kappa) -> Result<f64> {
    check_alpha(alpha)?;
    Ok((2.0 * alpha - 1.0) / (4.0 * alpha * alpha) * beta_gap(alpha, kappa)?)
}

/// π/sin(π/2α) − B(1/(1+κ^{2α}); 1 − 1/2α, 1/2α).
fn beta_gap(alpha: f64, kappa: Kappa) -> Result<f64> {
    let e = 1.0 / (2.0 * alpha);
    let full = PI / (PI * e).sin();
    let partial = match kappa {
        Kappa::Infinite => 0.0,
        Kappa::Finite(k) => inc_beta(1.0 / (1.0 + k.powf(2.0 * alpha)), 1.0 - e, e)?,
    };
    Ok(full - partial)
}

fn kappa_term(alpha: f64, kappa: Kappa) -> f64 {
    match kappa {
        Kappa::Infinite => 0.0,
        Kappa::Finite(k) => k.powf(1.0 - 2.0 * alpha) / (2.0 * alpha),
    }
}

/// lim_n R_n(w*_n) / R_n(w*_{n,N}) for algebraic decay.
pub fn limit_ratio(model: &DecayModel) -> Result<f64> {
    model.validate()?;
    let alpha = match model.kind {
        DecayKind::Algebraic { alpha } => alpha,
        DecayKind::Exponential { .. } => return Err(Error::KindMismatch),
    };
    let tail = kappa_term(alpha, model.kappa);
    let num = psi_limit(alpha, model.kappa)? + tail;
    let den = psi_star(model.n_grid, alpha, model.kappa)? + tail;
    Ok(num / den)
}

/// Limiting ratio with the exponential family's value of 1 filled in.
pub fn limit_ratio_or_one(model: &DecayModel) -> Result<f64> {
    match limit_ratio(model) {
        Err(Error::KindMismatch) => Ok(1.0),
        other => other,
    }
}

/// How the candidate count grows with n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum MRule {
    /// M_n ≡ m.
    Fixed { m: usize },
    /// M_n = coef · n^{exponent}.
    Power { coef: f64, exponent: f64 },
    /// M_n = coef · ln n.
    Log { coef: f64 },
}

impl MRule {
    pub fn eval(&self, n: f64) -> f64 {
        match *self {
            MRule::Fixed { m } => m as f64,
            MRule::Power { coef, exponent } => coef * n.powf(exponent),
            MRule::Log { coef } => coef * n.ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Candidate count stays fixed.
    Fixed,
    /// M_n → ∞ but M_n = o(m**_n).
    Vanishing,
    /// M_n / m**_n → κ ∈ (0, ∞].
    Proportional,
    /// Exponential decay with limsup M_n / m**_n < 1.
    Below,
    /// Exponential decay with M_n ≥ m**_n eventually.
    AtLeast,
}

/// Leading-order values of R/n for the three oracles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticRisk {
    pub regime: Regime,
    pub simplex: f64,
    pub grid: f64,
    pub selection: f64,
}

/// Σ_{m>k} m^{−s} by direct summation plus an Euler–Maclaurin tail.
pub fn zeta_tail(s: f64, k: usize) -> f64 {
    let cut = k + 2000;
    let mut sum = 0.0;
    for m in (k + 1..cut).rev() {
        sum += (m as f64).powf(-s);
    }
    let c = cut as f64;
    sum + c.powf(1.0 - s) / (s - 1.0) + 0.5 * c.powf(-s) + s / 12.0 * c.powf(-s - 1.0)
}

/// Regime-matched asymptotic values of R/n for simplex averaging, grid
/// averaging with `model.n_grid` levels, and selection. The number of
/// predictors is treated as unbounded. `model.kappa` is ignored; the ratio
/// M_n/m**_n at this n is used instead.
pub fn asymptotic_risk(model: &DecayModel, n: f64, rule: MRule) -> Result<AsymptoticRisk> {
    model.validate()?;
    let s2 = model.sigma2;
    let x = n / s2;
    match model.kind {
        DecayKind::Algebraic { alpha } => {
            let m_ss = x.powf(1.0 / (2.0 * alpha));
            let m = rule.eval(n);
            let regime = match rule {
                MRule::Fixed { .. } => Regime::Fixed,
                MRule::Log { .. } => Regime::Vanishing,
                MRule::Power { exponent, .. } => {
                    let crit = 1.0 / (2.0 * alpha);
                    if exponent <= 0.0 {
                        return Err(Error::RegimeUndetermined);
                    } else if exponent < crit - 1e-12 {
                        Regime::Vanishing
                    } else {
                        Regime::Proportional
                    }
                }
            };
            let s = 2.0 * alpha;
            match regime {
                Regime::Fixed => {
                    let MRule::Fixed { m } = rule else { unreachable!() };
                    let v = zeta_tail(s, m);
                    Ok(AsymptoticRisk { regime, simplex: v, grid: v, selection: v })
                }
                Regime::Vanishing => {
                    let v = m.powf(1.0 - s) / (s - 1.0);
                    Ok(AsymptoticRisk { regime, simplex: v, grid: v, selection: v })
                }
                _ => {
                    let kappa = match rule {
                        MRule::Power { exponent, .. } if exponent > 1.0 / s + 1e-12 => Kappa::Infinite,
                        _ => Kappa::Finite(m / m_ss),
                    };
                    let scale = x.powf(1.0 / s - 1.0);
                    let tail = m.powf(1.0 - s) / (s - 1.0);
                    let simplex = scale / s * beta_gap(alpha, kappa)? + tail;
                    let grid = s / (s - 1.0) * scale * psi_star(model.n_grid, alpha, kappa)? + tail;
                    let selection = s / (s - 1.0) * scale * psi_star(1, alpha, kappa)? + tail;
                    Ok(AsymptoticRisk { regime, simplex, grid, selection })
                }
            }
        }
        DecayKind::Exponential { c } => {
            let regime = match rule {
                MRule::Fixed { .. } => Regime::Below,
                MRule::Power { exponent, .. } if exponent > 0.0 => Regime::AtLeast,
                MRule::Log { coef } => {
                    // m** ~ ln(n)/(2c), so M/m** → 2c·coef
                    let k = 2.0 * c * coef;
                    if (k - 1.0).abs() < 1e-12 {
                        return Err(Error::RegimeUndetermined);
                    } else if k < 1.0 {
                        Regime::Below
                    } else {
                        Regime::AtLeast
                    }
                }
                _ => return Err(Error::RegimeUndetermined),
            };
            let v = match regime {
                Regime::Below => (-2.0 * c * rule.eval(n)).exp() / ((2.0 * c).exp() - 1.0),
                _ => s2 / n * x.ln() / (2.0 * c),
            };
            Ok(AsymptoticRisk { regime, simplex: v, grid: v, selection: v })
        }
    }
}

/// Lower bound ϖσ²/(2^{2α+1}ϖ^{−2α} + 2)·(n/σ²)^{1/2α} on R_n(w*_{n,N}) − R_n(w*_n)
/// when M_n ≥ c·m**_n, with ϖ = min{c, (2N−1)^{−1/2α}}. Reported, not asserted.
pub fn grid_gap_lower_bound(alpha: f64, sigma2: f64, n: f64, c_lower: f64, n_grid: usize) -> Result<f64> {
    check_alpha(alpha)?;
    if n_grid == 0 {
        return Err(Error::InvalidN(0));
    }
    let varpi = c_lower.min(((2 * n_grid - 1) as f64).powf(-1.0 / (2.0 * alpha)));
    let denom = 2f64.powf(2.0 * alpha + 1.0) * varpi.powf(-2.0 * alpha) + 2.0;
    Ok(varpi * sigma2 / denom * (n / sigma2).powf(1.0 / (2.0 * alpha)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayClass {
    /// Ratios θ_{⌊km⌋}/θ_m stay bounded away from 0 and 1 (slow decay).
    A1Like,
    /// Ratios vanish along the tail (fast decay).
    A2Like,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub class: DecayClass,
    /// (m, θ_{⌊km⌋}/θ_m) over the examined tail.
    pub ratios: Vec<(usize, f64)>,
}

/// Classifies the positive prefix of θ by the ratios θ_{⌊km⌋}/θ_m over the
/// second half of the usable range of m. Diagnostic only.
pub fn decay_classify(theta: &[f64], k: f64) -> Result<DecayReport> {
    if !(k > 1.0) {
        return Err(Error::Domain(format!("ratio k must exceed 1, got {k}")));
    }
    let len = theta.iter().take_while(|&&t| t > 0.0 && t.is_finite()).count();
    if len < 10 {
        return Err(Error::TooShort(len));
    }
    let last = (len as f64 / k).floor() as usize;
    let first = (last / 2).max(1);
    let ratios: Vec<(usize, f64)> = (first..=last)
        .filter(|&m| ((k * m as f64).floor() as usize) <= len)
        .map(|m| (m, theta[(k * m as f64).floor() as usize - 1] / theta[m - 1]))
        .collect();
    if ratios.len() < 2 {
        return Err(Error::TooShort(len));
    }
    let max = ratios.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let head = ratios[0].1;
    let tail = ratios[ratios.len() - 1].1;
    let class = if max >= 1.0 - 1e-6 {
        DecayClass::Inconclusive
    } else if tail < 0.5 * head || tail < 1e-3 {
        DecayClass::A2Like
    } else if tail > 0.01 {
        DecayClass::A1Like
    } else {
        DecayClass::Inconclusive
    };
    Ok(DecayReport { class, ratios })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        let h = (b - a) / panels as f64;
        let mut s = f(a) + f(b);
        for i in 1..panels {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn incomplete_beta_values() {
        assert_eq!(inc_beta(0.0, 0.3, 0.7).unwrap(), 0.0);
        assert!((inc_beta(0.5, 2.0, 3.0).unwrap() - 11.0 / 192.0).abs() < 1e-14);
        for alpha in [0.6, 0.8, 1.0, 2.0, 5.0] {
            let e = 1.0 / (2.0 * alpha);
            let v = inc_beta(1.0, 1.0 - e, e).unwrap();
            assert!((v - PI / (PI * e).sin()).abs() < 1e-9, "α={alpha}");
        }
        assert!(inc_beta(1.5, 1.0, 1.0).is_err());
        assert!(inc_beta(0.5, 0.0, 1.0).is_err());
    }

    #[test]
    fn incomplete_beta_against_quadrature_and_complement() {
        let (a, b) = (2.0, 3.5);
        for x in [0.1, 0.3, 0.7, 0.95] {
            let q = simpson(|t| t.powf(a - 1.0) * (1.0 - t).powf(b - 1.0), 0.0, x, 20_000);
            assert!((inc_beta(x, a, b).unwrap() - q).abs() < 1e-9);
        }
        // small shape parameters through the reflection identity
        let (a, b) = (0.375, 0.625);
        let full = inc_beta(1.0, a, b).unwrap();
        for x in [0.05, 0.4, 0.8, 0.999] {
            let lhs = inc_beta(x, a, b).unwrap() + inc_beta(1.0 - x, b, a).unwrap();
            assert!((lhs - full).abs() < 1e-10 * full);
        }
        // substitution t = u^{1/a} removes the endpoint singularity
        let x: f64 = 0.3;
        let q = simpson(|u| (1.0 - u.powf(1.0 / a)).powf(b - 1.0) / a, 0.0, x.powf(a), 20_000);
        assert!((inc_beta(x, a, b).unwrap() - q).abs() < 1e-9);
    }

    #[test]
    fn psi_star_first_value_and_monotonicity() {
        let alpha = 0.8;
        for k in [1.0, 2.0] {
            let kappa = Kappa::Finite(k);
            let p1 = psi_star(1, alpha, kappa).unwrap();
            assert!((p1 - (1.0 - k.powf(1.0 - 2.0 * alpha) / (2.0 * alpha))).abs() < 1e-15);
            let mut prev = p1;
            for n in 2..=10 {
                let p = psi_star(n, alpha, kappa).unwrap();
                assert!(p < prev, "κ={k} N={n}");
                prev = p;
            }
            let lim = psi_limit(alpha, kappa).unwrap();
            assert!((psi_star(10_000, alpha, kappa).unwrap() - lim).abs() < 1e-6);
        }
        // below κ = 1 the first grid level already sits at 1
        let p1 = psi_star(1, alpha, Kappa::Finite(0.5)).unwrap();
        assert!((p1 - (2.0 * alpha - 1.0) / (2.0 * alpha) * 0.5).abs() < 1e-15);
    }

    #[test]
    fn limit_ratio_shape() {
        let model = |k: Kappa, n| DecayModel {
            kind: DecayKind::Algebraic { alpha: 0.8 },
            sigma2: 1.0,
            kappa: k,
            n_grid: n,
        };
        for k in [Kappa::Finite(1.0), Kappa::Finite(2.0), Kappa::Infinite] {
            let mut prev = 0.0;
            for n in 1..=10 {
                let r = limit_ratio(&model(k, n)).unwrap();
                assert!(r < 1.0 && r > prev);
                prev = r;
            }
            assert!((limit_ratio(&model(k, 100_000)).unwrap() - 1.0).abs() < 1e-6);
        }
        let exp = DecayModel {
            kind: DecayKind::Exponential { c: 1.0 },
            ..model(Kappa::Finite(1.0), 2)
        };
        assert_eq!(limit_ratio(&exp), Err(Error::KindMismatch));
        assert_eq!(limit_ratio_or_one(&exp), Ok(1.0));
    }

    #[test]
    fn asymptotic_regimes() {
        let alg = DecayModel {
            kind: DecayKind::Algebraic { alpha: 0.8 },
            sigma2: 1.0,
            kappa: Kappa::Infinite,
            n_grid: 2,
        };
        let fixed = asymptotic_risk(&alg, 1e6, MRule::Fixed { m: 3 }).unwrap();
        assert_eq!(fixed.regime, Regime::Fixed);
        let direct: f64 = (4..2_000_000).map(|m| (m as f64).powf(-1.6)).sum::<f64>()
            + 2_000_000f64.powf(-0.6) / 0.6;
        assert!((fixed.simplex - direct).abs() < 1e-8);

        let slow = asymptotic_risk(&alg, 1e6, MRule::Log { coef: 1.0 }).unwrap();
        assert_eq!(slow.regime, Regime::Vanishing);

        let prop = asymptotic_risk(&alg, 1e6, MRule::Power { coef: 1.0, exponent: 1.0 / 1.6 }).unwrap();
        assert_eq!(prop.regime, Regime::Proportional);
        assert!(prop.simplex < prop.grid && prop.grid < prop.selection);

        let exp = DecayModel {
            kind: DecayKind::Exponential { c: 0.5 },
            ..alg
        };
        let at_least = asymptotic_risk(&exp, 1e6, MRule::Power { coef: 3.0, exponent: 1.0 / 3.0 }).unwrap();
        assert_eq!(at_least.regime, Regime::AtLeast);
        assert!((at_least.simplex - 1e-6 * 1e6f64.ln()).abs() < 1e-15);
        let below = asymptotic_risk(&exp, 1e6, MRule::Fixed { m: 2 }).unwrap();
        assert!((below.simplex - (-2.0f64).exp() / (1f64.exp() - 1.0)).abs() < 1e-15);
        assert_eq!(
            asymptotic_risk(&exp, 1e6, MRule::Log { coef: 1.0 }),
            Err(Error::RegimeUndetermined)
        );
    }

    #[test]
    fn decay_classes() {
        let alg: Vec<f64> = (1..=60).map(|m| (m as f64).powf(-1.6)).collect();
        let r = decay_classify(&alg, 2.0).unwrap();
        assert_eq!(r.class, DecayClass::A1Like);
        assert!(r.ratios.iter().all(|(_, v)| (v - 2f64.powf(-1.6)).abs() < 1e-12));
        let exp: Vec<f64> = (1..=60).map(|m| (-2.0 * m as f64).exp()).collect();
        assert_eq!(decay_classify(&exp, 2.0).unwrap().class, DecayClass::A2Like);
        assert_eq!(decay_classify(&[0.3; 40], 2.0).unwrap().class, DecayClass::Inconclusive);
        assert_eq!(decay_classify(&[0.3; 5], 2.0), Err(Error::TooShort(5)));
    }

    #[test]
    fn gap_lower_bound_is_positive() {
        let v = grid_gap_lower_bound(0.8, 1.0, 1e4, 0.5, 2).unwrap();
        assert!(v > 0.0 && v.is_finite());
    }
}
