//! Closed-form generalization bounds.
//!
//! Every bound is evaluated from its explicit pre-asymptotic expression.
//! Unannotated logarithms are natural logs. A report's `value` is the sum of
//! its additive `terms`; multiplicative constants are listed in `constants`.

use std::collections::BTreeMap;
use std::f64::consts::{LN_2, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::NormReport;

/// `sqrt(32 ln(4e) / 3)`.
pub fn c0() -> f64 {
    (32.0 * (4.0 * std::f64::consts::E).ln() / 3.0).sqrt()
}

/// `sqrt(ln(log2(4 / gamma))) + sqrt(ln(1 / delta))`; `None` unless `0 < gamma < 2`.
pub fn c1(gamma_margin: f64, delta: f64) -> Option<f64> {
    c1_parts(gamma_margin, delta).map(|(a, b)| a + b)
}

fn c1_parts(gamma_margin: f64, delta: f64) -> Option<(f64, f64)> {
    if !(gamma_margin > 0.0 && gamma_margin < 2.0) {
        return None;
    }
    Some(((4.0 / gamma_margin).log2().ln().sqrt(), (1.0 / delta).ln().sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub s_p: usize,
    pub s_a: usize,
    pub t_p: usize,
    pub t_a: usize,
    pub eta: f64,
    pub delta: f64,
    pub gamma_loss: f64,
    pub gamma_margin: f64,
    pub norm: NormReport,
    /// `sum_j ||x_j||^2` over the training instances.
    pub sum_sq_norms: f64,
    /// `Gamma_S = max_j ||x_j||^2`.
    pub max_sq_norm: f64,
    /// `sup_i (||PF_i||_2 + ||AF_i||_2)`.
    pub sup_pf_af: f64,
    /// May be `+inf`.
    pub chi2: f64,
    /// Transductive complexity parameter; recorded only, no bound depends on it.
    pub p_transductive: f64,
}

impl BoundInputs {
    /// Inputs with `eta = t_p / s_p`, `delta = 0.05`, `gamma_margin = 0.1`, no shift.
    pub fn new(s_p: usize, s_a: usize, t_p: usize, t_a: usize, gamma_loss: f64, norm: NormReport) -> Self {
        BoundInputs {
            s_p,
            s_a,
            t_p,
            t_a,
            eta: t_p as f64 / s_p.max(1) as f64,
            delta: 0.05,
            gamma_loss,
            gamma_margin: 0.1,
            norm,
            sum_sq_norms: 0.0,
            max_sq_norm: 0.0,
            sup_pf_af: 0.0,
            chi2: 0.0,
            p_transductive: 0.5,
        }
    }

    /// `|S| = S_P * S_A`.
    pub fn s(&self) -> f64 {
        (self.s_p * self.s_a) as f64
    }

    /// `|T| = T_P * T_A`.
    pub fn t(&self) -> f64 {
        (self.t_p * self.t_a) as f64
    }

    /// `||W0||_2`, falling back to the first layer's spectral norm.
    pub fn w0(&self) -> f64 {
        self.norm
            .w0_spectral
            .or_else(|| self.norm.spectral.first().copied())
            .unwrap_or(0.0)
    }

    pub fn layers(&self) -> usize {
        self.norm.spectral.len()
    }

    fn check_counts(&self) -> Result<()> {
        if self.s_p == 0 || self.s_a == 0 || self.t_p == 0 || self.t_a == 0 {
            return Err(Error::Precondition("bound inputs need positive train and test counts".into()));
        }
        Ok(())
    }

    fn check_delta(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Precondition(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Thm1,
    Cor1,
    Thm2,
    Cor2Reg,
    Cor2Cla,
    Thm3,
    Thm4,
    Cor5,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    /// `None` when inapplicable.
    pub value: Option<f64>,
    /// Additive terms; `value` is their sum.
    pub terms: BTreeMap<String, f64>,
    pub constants: BTreeMap<String, f64>,
    pub applicable: bool,
    pub reason: Option<String>,
}

impl BoundReport {
    fn from_terms(kind: BoundKind, terms: &[(&str, f64)], constants: &[(&str, f64)]) -> Self {
        let value = terms.iter().map(|(_, v)| v).sum();
        BoundReport {
            kind,
            value: Some(value),
            terms: terms.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            constants: constants.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            applicable: true,
            reason: None,
        }
    }

    fn inapplicable(kind: BoundKind, reason: impl Into<String>) -> Self {
        BoundReport {
            kind,
            value: None,
            terms: BTreeMap::new(),
            constants: BTreeMap::new(),
            applicable: false,
            reason: Some(reason.into()),
        }
    }

    /// Sum of the terms other than the empirical error.
    pub fn slack(&self) -> Option<f64> {
        self.value
            .map(|v| v - self.terms.get("error_s").copied().unwrap_or(0.0))
    }

    pub fn term(&self, name: &str) -> f64 {
        self.terms.get(name).copied().unwrap_or(f64::NAN)
    }
}

/// `gamma L ||W0||_2 (|S| + |T|) / (|S| |T|)`.
pub fn thm1_transductive_complexity(inp: &BoundInputs) -> Result<BoundReport> {
    inp.check_counts()?;
    let (s, t) = (inp.s(), inp.t());
    let v = inp.gamma_loss * inp.norm.lipschitz_upper * inp.w0() * (s + t) / (s * t);
    Ok(BoundReport::from_terms(
        BoundKind::Thm1,
        &[("complexity", v)],
        &[("gamma", inp.gamma_loss), ("lipschitz", inp.norm.lipschitz_upper), ("w0_spectral", inp.w0())],
    ))
}

/// Transductive complexity with `sup_i (||PF_i|| + ||AF_i||)` in place of `||W0||_2`.
pub fn cor1_transductive_complexity(inp: &BoundInputs) -> Result<BoundReport> {
    inp.check_counts()?;
    let (s, t) = (inp.s(), inp.t());
    let v = inp.gamma_loss * inp.norm.lipschitz_upper * inp.sup_pf_af * (s + t) / (s * t);
    Ok(BoundReport::from_terms(
        BoundKind::Cor1,
        &[("complexity", v)],
        &[("gamma", inp.gamma_loss), ("lipschitz", inp.norm.lipschitz_upper), ("sup_pf_af", inp.sup_pf_af)],
    ))
}

fn eta_ok(kind: BoundKind, eta: f64) -> Option<BoundReport> {
    if eta > 0.0 && eta < 1.0 {
        return None;
    }
    Some(BoundReport::inapplicable(
        kind,
        format!("transductive bound requires partition ratio 0 < eta < 1 (training set larger than test set), got eta = {eta}"),
    ))
}

/// Transductive bound for the adaptive-feature model:
/// `err + gamma L ||W0|| (1+eta)/(eta |S|) + c0 (1+eta)/sqrt(eta |S|) + sqrt((1+eta) ln(1/delta) / (2|T|))`.
pub fn thm2_transductive_bound(inp: &BoundInputs, error_s: f64) -> Result<BoundReport> {
    inp.check_counts()?;
    inp.check_delta()?;
    if let Some(r) = eta_ok(BoundKind::Thm2, inp.eta) {
        return Ok(r);
    }
    let (s, t, eta) = (inp.s(), inp.t(), inp.eta);
    let c0 = c0();
    let term1 = inp.gamma_loss * inp.norm.lipschitz_upper * inp.w0() * (1.0 + eta) / (eta * s);
    let term2 = c0 * (1.0 + eta) / (eta * s).sqrt();
    let term3 = ((1.0 + eta) * (1.0 / inp.delta).ln() / (2.0 * t)).sqrt();
    Ok(BoundReport::from_terms(
        BoundKind::Thm2,
        &[("error_s", error_s), ("term1", term1), ("term2", term2), ("term3", term3)],
        &[("c0", c0), ("eta", eta), ("s_pairs", s), ("t_pairs", t)],
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cor2Which {
    Reg,
    Cla,
}

/// Regression / classification analogue of the transductive bound, indexed by
/// problems only; the classification middle term carries an extra `|S_A|`.
pub fn cor2_bounds(inp: &BoundInputs, error_s: f64, which: Cor2Which) -> Result<BoundReport> {
    let kind = match which {
        Cor2Which::Reg => BoundKind::Cor2Reg,
        Cor2Which::Cla => BoundKind::Cor2Cla,
    };
    inp.check_counts()?;
    inp.check_delta()?;
    if let Some(r) = eta_ok(kind, inp.eta) {
        return Ok(r);
    }
    let (sp, eta) = (inp.s_p as f64, inp.eta);
    let factor = match which {
        Cor2Which::Reg => 1.0,
        Cor2Which::Cla => inp.s_a as f64,
    };
    let c0 = c0();
    let term1 = inp.gamma_loss * inp.norm.lipschitz_upper * factor * inp.w0() * (1.0 + eta) / (eta * sp);
    let root = (eta * sp).sqrt();
    let term2 = c0 * (1.0 + eta) / root;
    let term3 = (0.5 * (1.0 + eta) * (1.0 / inp.delta).ln()).sqrt() / root;
    Ok(BoundReport::from_terms(
        kind,
        &[("error_s", error_s), ("term1", term1), ("term2", term2), ("term3", term3)],
        &[("c0", c0), ("eta", eta), ("s_problems", sp), ("algo_factor", factor)],
    ))
}

/// `(1/|S|) sqrt(2 l ln2 Gamma_f Sigma + 2 Gamma_f^2 Sigma^{3/2})`.
pub fn thm3_inductive_complexity(inp: &BoundInputs) -> Result<BoundReport> {
    if inp.s_p == 0 || inp.s_a == 0 {
        return Err(Error::Precondition("inductive complexity needs |S| > 0".into()));
    }
    let gf = inp.norm.frob_product;
    if !(gf > 0.0) || inp.sum_sq_norms < 0.0 {
        return Err(Error::Precondition("inductive complexity needs Gamma_f > 0 and sum of squared norms >= 0".into()));
    }
    let (l, sig) = (inp.layers() as f64, inp.sum_sq_norms);
    let v = (2.0 * l * LN_2 * gf * sig + 2.0 * gf * gf * sig.powf(1.5)).sqrt() / inp.s();
    Ok(BoundReport::from_terms(
        BoundKind::Thm3,
        &[("complexity", v)],
        &[("gamma_f", gf), ("layers", l), ("sum_sq_norms", sig)],
    ))
}

fn inductive(kind: BoundKind, inp: &BoundInputs, error_s: f64, gamma_s: f64) -> Result<BoundReport> {
    if inp.s_p == 0 || inp.s_a == 0 {
        return Err(Error::Precondition("inductive bound needs |S| > 0".into()));
    }
    inp.check_delta()?;
    let Some((c1a, c1b)) = c1_parts(inp.gamma_margin, inp.delta) else {
        return Ok(BoundReport::inapplicable(
            kind,
            format!("c1 undefined: margin must satisfy 0 < gamma < 2, got {}", inp.gamma_margin),
        ));
    };
    let (s, l, gf) = (inp.s(), inp.layers() as f64, inp.norm.frob_product);
    let rs = s.sqrt();
    let inner = LN_2 * l * gf * gamma_s + gf * gf * gamma_s.powf(1.5) * rs;
    let rademacher = 4.0 * SQRT_2 / (rs * inp.gamma_margin) * inner.sqrt();
    let confidence = (c1a + c1b) / rs;
    Ok(BoundReport::from_terms(
        kind,
        &[("error_s", error_s), ("rademacher", rademacher), ("confidence", confidence)],
        &[
            ("c1", c1a + c1b),
            ("gamma_f", gf),
            ("gamma_s", gamma_s),
            ("gamma_margin", inp.gamma_margin),
            ("layers", l),
            ("s_pairs", s),
        ],
    ))
}

/// Inductive margin bound for the predefined-feature model with `Gamma_S = max ||x_j||^2`.
pub fn thm4_inductive_bound(inp: &BoundInputs, error_s: f64) -> Result<BoundReport> {
    inductive(BoundKind::Thm4, inp, error_s, inp.max_sq_norm)
}

/// Inductive bound under shift: `Gamma_S -> (chi2 + 1) Gamma_S`.
pub fn cor5_shifted_bound(inp: &BoundInputs, error_s: f64) -> Result<BoundReport> {
    if inp.chi2 < 0.0 || inp.chi2.is_nan() {
        return Err(Error::Precondition(format!("chi-square divergence must be >= 0, got {}", inp.chi2)));
    }
    if !inp.chi2.is_finite() {
        return Ok(BoundReport::inapplicable(
            BoundKind::Cor5,
            "bound vacuous: test support exceeds training support (chi-square divergence is infinite)",
        ));
    }
    let mut r = inductive(BoundKind::Cor5, inp, error_s, (inp.chi2 + 1.0) * inp.max_sq_norm)?;
    if r.applicable {
        r.constants.insert("chi2".into(), inp.chi2);
        r.constants.insert("chi2_growth".into(), (inp.chi2 + 1.0).powf(0.75));
    }
    Ok(r)
}

/// Simplified dominant-regime rate `4 sqrt2 Gamma_f Gamma_S^{3/4} / (|S|^{1/4} gamma)`.
pub fn dominant_rate(gamma_f: f64, gamma_s: f64, s_pairs: f64, gamma_margin: f64) -> f64 {
    4.0 * SQRT_2 * gamma_f * gamma_s.powf(0.75) / (s_pairs.powf(0.25) * gamma_margin)
}
