//! AFT, PH and PO survival models around a TBP baseline, and the censored,
//! left-truncated likelihood.

use serde::{Deserialize, Serialize};

use crate::baseline::TbpBaseline;
use crate::data::{CensoringKind, Observation};
use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;

/// Floor applied to `S(a) - S(b)` before taking logs.
pub const MASS_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModelKind {
    Aft,
    Ph,
    Po,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Aft, ModelKind::Ph, ModelKind::Po];
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "AFT" => Ok(ModelKind::Aft),
            "PH" => Ok(ModelKind::Ph),
            "PO" => Ok(ModelKind::Po),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Aft => "AFT",
            ModelKind::Ph => "PH",
            ModelKind::Po => "PO",
        })
    }
}

/// `x'beta` for raw covariates.
pub fn linear_predictor(x: &[f64], beta: &[f64]) -> f64 {
    x.iter().zip(beta).map(|(a, b)| a * b).sum()
}

/// Survival function `S_x(t)` for linear predictor `eta`.
pub fn surv(model: ModelKind, t: f64, eta: f64, base: &TbpBaseline) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t == f64::INFINITY {
        return 0.0;
    }
    match model {
        ModelKind::Aft => base.s0(eta.exp() * t),
        ModelKind::Ph => (eta.exp() * base.s0(t).ln()).exp(),
        ModelKind::Po => {
            let s0 = base.s0(t);
            s0 / (eta.exp() * (1.0 - s0) + s0)
        }
    }
}

/// Density `f_x(t) = -dS_x(t)/dt`.
pub fn dens(model: ModelKind, t: f64, eta: f64, base: &TbpBaseline) -> f64 {
    surv_dens(model, t, eta, base).1
}

/// `(S_x(t), f_x(t))` in one pass.
pub fn surv_dens(model: ModelKind, t: f64, eta: f64, base: &TbpBaseline) -> (f64, f64) {
    if t <= 0.0 {
        return (1.0, 0.0);
    }
    if t == f64::INFINITY {
        return (0.0, 0.0);
    }
    let k = eta.exp();
    match model {
        ModelKind::Aft => {
            let (s0, f0) = base.eval(k * t);
            (s0, k * f0)
        }
        ModelKind::Ph => {
            let (s0, f0) = base.eval(t);
            let ls = s0.ln();
            ((k * ls).exp(), k * f0 * ((k - 1.0) * ls).exp())
        }
        ModelKind::Po => {
            let (s0, f0) = base.eval(t);
            let den = k * (1.0 - s0) + s0;
            (s0 / den, k * f0 / (den * den))
        }
    }
}

/// Hazard `f_x(t) / S_x(t)`.
pub fn hazard(model: ModelKind, t: f64, eta: f64, base: &TbpBaseline) -> f64 {
    let (s, f) = surv_dens(model, t, eta, base);
    f / s
}

/// Log-likelihood contribution of one record given its linear predictor.
///
/// Exact records contribute `log f(a)`; all others `log(S(a) - S(b))` with
/// the difference floored at [`MASS_FLOOR`]. A record with no probability
/// mass returns `-inf`. Left truncation subtracts `log S(u)`.
pub fn obs_loglik(model: ModelKind, obs: &Observation, eta: f64, base: &TbpBaseline) -> f64 {
    let mut ll = match obs.kind() {
        CensoringKind::Exact => dens(model, obs.a, eta, base).ln(),
        CensoringKind::Right => surv(model, obs.a, eta, base).ln(),
        _ => {
            let diff = surv(model, obs.a, eta, base) - surv(model, obs.b, eta, base);
            if diff > 0.0 {
                diff.max(MASS_FLOOR).ln()
            } else {
                f64::NEG_INFINITY
            }
        }
    };
    if obs.u > 0.0 {
        ll -= surv(model, obs.u, eta, base).ln();
    }
    if ll.is_nan() {
        f64::NEG_INFINITY
    } else {
        ll
    }
}

/// Total and per-record log-likelihoods; `etas[i]` is the full linear
/// predictor of record `i` (covariates, spline terms and frailty).
pub fn total_loglik(
    model: ModelKind,
    observations: &[Observation],
    etas: &[f64],
    base: &TbpBaseline,
) -> (f64, Vec<f64>) {
    let per: Vec<f64> = observations
        .iter()
        .zip(etas)
        .map(|(o, &e)| obs_loglik(model, o, e, base))
        .collect();
    (pairwise_sum(&per), per)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::{CenteringFamily, FamilyKind};

    fn base() -> TbpBaseline {
        let w = vec![0.05, 0.1, 0.3, 0.25, 0.1, 0.1, 0.1];
        TbpBaseline::from_weights(w, CenteringFamily::new(FamilyKind::LogLogistic, [0.1, 0.2])).unwrap()
    }

    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let c = 0.5 * (a + b);
        let whole = (b - a) / 6.0 * (f(a) + 4.0 * f(c) + f(b));
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let c = 0.5 * (a + b);
            let (l, r) = (0.5 * (a + c), 0.5 * (c + b));
            let left = (c - a) / 6.0 * (f(a) + 4.0 * f(l) + f(c));
            let right = (b - c) / 6.0 * (f(c) + 4.0 * f(r) + f(b));
            if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, c, left, tol / 2.0, depth - 1) + rec(f, c, b, right, tol / 2.0, depth - 1)
        }
        rec(f, a, b, whole, tol, depth)
    }

    #[test]
    fn zero_predictor_gives_baseline() {
        let b = base();
        for m in ModelKind::ALL {
            for &t in &[0.1, 0.7, 2.0, 9.0] {
                assert!((surv(m, t, 0.0, &b) - b.s0(t)).abs() < 1e-15);
                assert!((dens(m, t, 0.0, &b) - b.f0(t)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn hand_values_for_ph_and_po() {
        // Locate t with S0(t) = 0.5 by bisection and evaluate there.
        let b = base();
        let (mut lo, mut hi): (f64, f64) = (1e-6, 1e6);
        for _ in 0..200 {
            let mid: f64 = (lo * hi).sqrt();
            if b.s0(mid) > 0.5 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let t = lo;
        let s0 = b.s0(t);
        assert!((s0 - 0.5).abs() < 1e-12);
        assert!((surv(ModelKind::Ph, t, 2f64.ln(), &b) - s0 * s0).abs() < 1e-12);
        let po = 0.5 * s0 / (1.0 - 0.5 * s0);
        assert!((surv(ModelKind::Po, t, 2f64.ln(), &b) - po).abs() < 1e-12);
        assert!((po - 1.0 / 3.0).abs() < 1e-11);
    }

    #[test]
    fn aft_density_scales() {
        let b = base();
        let lhs = dens(ModelKind::Aft, 1.0, 3f64.ln(), &b);
        assert!((lhs - 3.0 * b.f0(3.0)).abs() < 1e-13);
    }

    #[test]
    fn density_is_negative_derivative() {
        let b = base();
        let h = 1e-5;
        for m in ModelKind::ALL {
            for &(t, eta) in &[(0.4, -0.7), (1.3, 0.5), (3.0, 1.2)] {
                let fd = -(surv(m, t + h, eta, &b) - surv(m, t - h, eta, &b)) / (2.0 * h);
                assert!((fd - dens(m, t, eta, &b)).abs() < 1e-6, "{m} {t} {eta}");
            }
        }
    }

    #[test]
    fn truncated_exact_and_right_censored() {
        let b = base();
        let o = Observation::new(1.0, 2.0, 2.0, vec![], 0).unwrap();
        let want = b.f0(2.0).ln() - b.s0(1.0).ln();
        assert!((obs_loglik(ModelKind::Ph, &o, 0.0, &b) - want).abs() < 1e-13);
        let r = Observation::new(0.0, 1.5, f64::INFINITY, vec![], 0).unwrap();
        assert!((obs_loglik(ModelKind::Po, &r, 0.0, &b) - b.s0(1.5).ln()).abs() < 1e-14);
    }

    #[test]
    fn interval_matches_quadrature() {
        let b = base();
        let eta = 1.0;
        let o = Observation::interval(1.0, 2.0, vec![1.0], 0).unwrap();
        let ll = obs_loglik(ModelKind::Ph, &o, eta, &b);
        let e = std::f64::consts::E;
        let closed = (b.s0(1.0).powf(e) - b.s0(2.0).powf(e)).ln();
        assert!((ll - closed).abs() < 1e-12);
        let f = |t: f64| dens(ModelKind::Ph, t, eta, &b);
        let q = simpson(&f, 1.0, 2.0, 1e-12, 30);
        assert!(((q.ln() - ll) / ll).abs() < 1e-6);
    }

    #[test]
    fn zero_mass_interval_is_neg_inf() {
        let b = base();
        let o = Observation::interval(1e9, 2e9, vec![], 0).unwrap();
        assert_eq!(obs_loglik(ModelKind::Aft, &o, 30.0, &b), f64::NEG_INFINITY);
    }

    #[test]
    fn total_is_sum_and_empty_is_zero() {
        let b = base();
        assert_eq!(total_loglik(ModelKind::Aft, &[], &[], &b).0, 0.0);
        let o = vec![Observation::exact(0.8, vec![], 0).unwrap()];
        let (t, per) = total_loglik(ModelKind::Po, &o, &[0.3], &b);
        assert_eq!(t, obs_loglik(ModelKind::Po, &o[0], 0.3, &b));
        assert_eq!(per.len(), 1);
    }

    #[test]
    fn po_odds_ratio_is_constant() {
        let b = base();
        let eta = 0.8;
        for k in 0..30 {
            let t = 0.05 * 1.3f64.powi(k);
            let s = surv(ModelKind::Po, t, eta, &b);
            let s0 = b.s0(t);
            let ratio = ((1.0 - s) / s) / ((1.0 - s0) / s0);
            assert!((ratio - eta.exp()).abs() < 1e-10 * eta.exp(), "t = {t}");
        }
    }
}
