//! Bernstein polynomials, the parametric centering families, and the
//! transformed Bernstein polynomial (TBP) baseline built from them.
//!
//! The baseline survival is `S0(t) = D(S_theta(t) | J, w)` where `D` is the
//! Bernstein (beta mixture) distribution function on (0, 1). Equal weights
//! give `D(x) = x`, so the centering family is recovered exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{ln_gamma, normal_pdf, normal_sf};

/// Default Bernstein degree.
pub const DEFAULT_DEGREE: usize = 15;

/// `S_theta(t)` is clamped into this band before the Bernstein transform.
pub const SURVIVAL_CLAMP: f64 = 1e-15;

const SIMPLEX_TOL: f64 = 1e-10;
const STACK_LEN: usize = 64;

/// Binomial(n, x) probabilities for k = 0..=n, written into `out[..=n]`.
/// Starts from the dominant tail so nothing underflows at the start.
fn binomial_pmf(n: usize, x: f64, out: &mut [f64]) {
    let out = &mut out[..=n];
    if n == 0 {
        out[0] = 1.0;
        return;
    }
    let nf = n as f64;
    if x < 0.5 {
        let ratio = x / (1.0 - x);
        out[0] = (nf * (-x).ln_1p()).exp();
        for k in 1..=n {
            out[k] = out[k - 1] * ((n - k + 1) as f64 / k as f64) * ratio;
        }
    } else {
        let ratio = (1.0 - x) / x;
        out[n] = (nf * x.ln()).exp();
        for k in (1..=n).rev() {
            out[k - 1] = out[k] * (k as f64 / (n - k + 1) as f64) * ratio;
        }
    }
}

fn with_buffer<R>(len: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    if len <= STACK_LEN {
        let mut buf = [0.0f64; STACK_LEN];
        f(&mut buf[..len])
    } else {
        let mut buf = vec![0.0f64; len];
        f(&mut buf)
    }
}

/// `D(x | J, w) = sum_j w_j Delta_{j,J}(x)` without argument checks.
///
/// The beta distribution functions follow
/// `Delta_{j+1,J}(x) = Delta_{j,J}(x) - C(J, j) x^j (1 - x)^(J - j)`,
/// walked upward from `Delta_{1,J} = 1 - (1 - x)^J` when `x >= 1/2` and
/// downward from `Delta_{J,J} = x^J` when `x < 1/2`, so that in both cases
/// no large cancellation occurs.
pub fn bernstein_cdf_unchecked(x: f64, w: &[f64]) -> f64 {
    let j_max = w.len();
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return w.iter().sum();
    }
    with_buffer(j_max + 1, |pmf| {
        binomial_pmf(j_max, x, pmf);
        let mut total = 0.0;
        if x >= 0.5 {
            let mut delta = -((j_max as f64) * (-x).ln_1p()).exp_m1();
            for j in 1..=j_max {
                total += w[j - 1] * delta;
                delta -= pmf[j];
            }
        } else {
            let mut delta = 0.0;
            for j in (1..=j_max).rev() {
                delta += pmf[j];
                total += w[j - 1] * delta;
            }
        }
        total
    })
}

/// `d(x | J, w) = sum_j w_j Beta(x; j, J - j + 1)` without argument checks.
pub fn bernstein_pdf_unchecked(x: f64, w: &[f64]) -> f64 {
    let j_max = w.len();
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    if j_max == 1 {
        return w[0];
    }
    if x == 0.0 {
        return j_max as f64 * w[0];
    }
    if x == 1.0 {
        return j_max as f64 * w[j_max - 1];
    }
    with_buffer(j_max, |pmf| {
        binomial_pmf(j_max - 1, x, pmf);
        j_max as f64 * w.iter().zip(pmf.iter()).map(|(a, b)| a * b).sum::<f64>()
    })
}

fn check_simplex(w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::Domain("weight vector is empty".into()));
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain("weights must be non-negative and finite".into()));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Domain(format!("weights sum to {s}, not 1")));
    }
    Ok(())
}

fn check_unit(x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("x = {x} outside [0, 1]")));
    }
    Ok(())
}

pub fn bernstein_cdf(x: f64, w: &[f64]) -> Result<f64> {
    check_unit(x)?;
    check_simplex(w)?;
    Ok(bernstein_cdf_unchecked(x, w))
}

pub fn bernstein_pdf(x: f64, w: &[f64]) -> Result<f64> {
    check_unit(x)?;
    check_simplex(w)?;
    Ok(bernstein_pdf_unchecked(x, w))
}

/// Rewrites a degree `J - 1` weight vector as degree `J` weights with the
/// same Bernstein density.
pub fn raise_degree(w: &[f64]) -> Vec<f64> {
    let j_new = w.len() + 1;
    let jf = j_new as f64;
    (1..=j_new)
        .map(|j| {
            let left = if j >= 2 { w[j - 2] * (j - 1) as f64 / jf } else { 0.0 };
            let right = if j <= w.len() { w[j - 1] * (j_new - j) as f64 / jf } else { 0.0 };
            left + right
        })
        .collect()
}

/// Softmax of `(z_1, ..., z_{J-1}, 0)`.
pub fn weights_from_logits(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(0.0f64, f64::max);
    let mut w: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    w.push((-max).exp());
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

pub fn logits_from_weights(w: &[f64]) -> Vec<f64> {
    let last = w[w.len() - 1].ln();
    w[..w.len() - 1].iter().map(|v| v.ln() - last).collect()
}

/// Log density of the logits `z` under `w ~ Dirichlet(alpha, ..., alpha)`,
/// including the Jacobian of the softmax map:
/// `log Gamma(alpha J) - J log Gamma(alpha) + alpha * sum_j log w_j`.
pub fn tbp_log_prior(z: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha = {alpha} must be positive")));
    }
    let j = (z.len() + 1) as f64;
    let max = z.iter().copied().fold(0.0f64, f64::max);
    let lse = max + (z.iter().map(|v| (v - max).exp()).sum::<f64>() + (-max).exp()).ln();
    let sum_log_w = z.iter().sum::<f64>() - j * lse;
    Ok(ln_gamma(alpha * j) - j * ln_gamma(alpha) + alpha * sum_log_w)
}

/// `log p(z = 0 | alpha) = log Gamma(alpha J) - J (alpha log J + log Gamma(alpha))`.
pub fn alpha_log_prior_at_zero(alpha: f64, degree: usize) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha = {alpha} must be positive")));
    }
    let j = degree as f64;
    Ok(ln_gamma(alpha * j) - j * (alpha * j.ln() + ln_gamma(alpha)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    LogLogistic,
    LogNormal,
    Weibull,
}

impl std::str::FromStr for FamilyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "loglogistic" | "log-logistic" => Ok(FamilyKind::LogLogistic),
            "lognormal" | "log-normal" => Ok(FamilyKind::LogNormal),
            "weibull" => Ok(FamilyKind::Weibull),
            other => Err(Error::Config(format!("unknown centering family `{other}`"))),
        }
    }
}

impl std::fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FamilyKind::LogLogistic => "loglogistic",
            FamilyKind::LogNormal => "lognormal",
            FamilyKind::Weibull => "weibull",
        })
    }
}

/// A parametric survival family with `theta` on R^2 (log-scale, log-shape).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenteringFamily {
    pub kind: FamilyKind,
    pub theta: [f64; 2],
}

impl CenteringFamily {
    pub fn new(kind: FamilyKind, theta: [f64; 2]) -> Self {
        CenteringFamily { kind, theta }
    }

    /// `(S_theta(t), f_theta(t))`.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        if t <= 0.0 {
            return (1.0, 0.0);
        }
        if t == f64::INFINITY {
            return (0.0, 0.0);
        }
        let [t1, t2] = self.theta;
        let shape = t2.exp();
        let lt = t.ln();
        match self.kind {
            FamilyKind::LogLogistic => {
                let ly = shape * (t1 + lt);
                // S = 1/(1+y), 1-S = y/(1+y), both computed without overflow.
                let s = 1.0 / (1.0 + ly.exp());
                let f_comp = 1.0 / (1.0 + (-ly).exp());
                (s, shape / t * s * f_comp)
            }
            FamilyKind::Weibull => {
                let y = (shape * (t1 + lt)).exp();
                let s = (-y).exp();
                (s, shape / t * y * s)
            }
            FamilyKind::LogNormal => {
                let z = (lt + t1) * shape;
                (normal_sf(z), normal_pdf(z) * shape / t)
            }
        }
    }

    pub fn survival(&self, t: f64) -> f64 {
        self.eval(t).0
    }

    pub fn density(&self, t: f64) -> f64 {
        self.eval(t).1
    }

    /// Moment-matching starting value from log event-time summaries.
    pub fn initial_theta(kind: FamilyKind, log_mean: f64, log_sd: f64) -> [f64; 2] {
        let sd = log_sd.max(1e-3);
        match kind {
            FamilyKind::LogLogistic => {
                let scale = sd * 3f64.sqrt() / std::f64::consts::PI;
                [-log_mean, -scale.ln()]
            }
            FamilyKind::LogNormal => [-log_mean, -sd.ln()],
            FamilyKind::Weibull => {
                // log T = -theta1 + scale * (log Exp(1)); mean -gamma_e, sd pi/sqrt(6).
                let scale = sd * 6f64.sqrt() / std::f64::consts::PI;
                let euler = 0.577_215_664_901_532_9;
                [-(log_mean + euler * scale), -scale.ln()]
            }
        }
    }
}

/// TBP baseline: Bernstein weights plus a centering family.
#[derive(Debug, Clone, PartialEq)]
pub struct TbpBaseline {
    weights: Vec<f64>,
    pub centering: CenteringFamily,
}

impl TbpBaseline {
    pub fn uniform(degree: usize, centering: CenteringFamily) -> Self {
        assert!(degree >= 1, "Bernstein degree must be positive");
        TbpBaseline {
            weights: vec![1.0 / degree as f64; degree],
            centering,
        }
    }

    pub fn from_logits(z: &[f64], centering: CenteringFamily) -> Self {
        TbpBaseline {
            weights: weights_from_logits(z),
            centering,
        }
    }

    pub fn from_weights(w: Vec<f64>, centering: CenteringFamily) -> Result<Self> {
        check_simplex(&w)?;
        Ok(TbpBaseline {
            weights: w,
            centering,
        })
    }

    pub fn degree(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn logits(&self) -> Vec<f64> {
        logits_from_weights(&self.weights)
    }

    fn clamped(&self, t: f64) -> (f64, f64) {
        let (s, f) = self.centering.eval(t);
        (s.clamp(SURVIVAL_CLAMP, 1.0 - SURVIVAL_CLAMP), f)
    }

    pub fn s0(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        if t == f64::INFINITY {
            return 0.0;
        }
        bernstein_cdf_unchecked(self.clamped(t).0, &self.weights)
    }

    pub fn f0(&self, t: f64) -> f64 {
        if t <= 0.0 || t == f64::INFINITY {
            return 0.0;
        }
        let (x, f) = self.clamped(t);
        bernstein_pdf_unchecked(x, &self.weights) * f
    }

    /// `(S0(t), f0(t))` in one call.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        if t <= 0.0 {
            return (1.0, 0.0);
        }
        if t == f64::INFINITY {
            return (0.0, 0.0);
        }
        let (x, f) = self.clamped(t);
        (
            bernstein_cdf_unchecked(x, &self.weights),
            bernstein_pdf_unchecked(x, &self.weights) * f,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ll(theta: [f64; 2]) -> CenteringFamily {
        CenteringFamily::new(FamilyKind::LogLogistic, theta)
    }

    #[test]
    fn cdf_endpoints() {
        let w = [0.1, 0.2, 0.3, 0.2, 0.2];
        assert_eq!(bernstein_cdf(0.0, &w).unwrap(), 0.0);
        assert!((bernstein_cdf(1.0, &w).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degree_one_is_uniform() {
        for &x in &[0.0, 0.1, 0.37, 0.5, 0.99] {
            assert!((bernstein_cdf(x, &[1.0]).unwrap() - x).abs() < 1e-15);
            assert_eq!(bernstein_pdf(x, &[1.0]).unwrap(), 1.0);
        }
    }

    #[test]
    fn argument_errors() {
        assert!(bernstein_cdf(1.5, &[1.0]).is_err());
        assert!(bernstein_cdf(-0.1, &[1.0]).is_err());
        assert!(bernstein_cdf(0.5, &[0.5, 0.6]).is_err());
        assert!(bernstein_pdf(0.5, &[]).is_err());
        assert!(tbp_log_prior(&[0.0], 0.0).is_err());
        assert!(alpha_log_prior_at_zero(-1.0, 3).is_err());
    }

    #[test]
    fn alpha_prior_at_zero_hand_value() {
        // Gamma(2) / [2 Gamma(1)]^2 = 1/4.
        let v = alpha_log_prior_at_zero(1.0, 2).unwrap();
        assert!((v.exp() - 0.25).abs() < 1e-14);
        // Consistent with the logit prior evaluated at zero.
        for &a in &[0.3, 1.0, 4.5] {
            let z = vec![0.0; 14];
            let lhs = tbp_log_prior(&z, a).unwrap();
            assert!((lhs - alpha_log_prior_at_zero(a, 15).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn logit_prior_is_permutation_invariant() {
        // Permuting all J weights (including the reference) leaves the
        // Dirichlet density unchanged.
        let w = [0.1, 0.25, 0.05, 0.4, 0.2];
        let mut perm = w;
        perm.reverse();
        let a = tbp_log_prior(&logits_from_weights(&w), 0.7).unwrap();
        let b = tbp_log_prior(&logits_from_weights(&perm), 0.7).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn large_alpha_concentrates_at_zero() {
        let dir = [0.3, -0.5, 0.2, 0.9];
        let mut last = f64::INFINITY;
        for k in 0..20 {
            let r = k as f64 * 0.05;
            let z: Vec<f64> = dir.iter().map(|d| d * r).collect();
            let v = tbp_log_prior(&z, 1e4).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn weights_logits_roundtrip() {
        let z = [0.5, -1.0, 2.0];
        let w = weights_from_logits(&z);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let back = logits_from_weights(&w);
        for (a, b) in z.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_weights_recover_centering() {
        let c = ll([0.2, 0.4]);
        let b = TbpBaseline::uniform(15, c);
        for k in 0..50 {
            let t = 0.01 * 1.2f64.powi(k);
            assert!((b.s0(t) - c.survival(t)).abs() < 1e-12);
        }
        assert_eq!(b.s0(0.0), 1.0);
    }

    #[test]
    fn family_survivals_match_closed_forms() {
        let t: f64 = 1.7;
        let th: [f64; 2] = [0.3, -0.2];
        let (lam, k) = (th[0].exp(), th[1].exp());
        let s_ll = 1.0 / (1.0 + (lam * t).powf(k));
        let s_w = (-(lam * t).powf(k)).exp();
        let s_ln = 1.0 - crate::numeric::normal_cdf((t.ln() + th[0]) * k);
        assert!((CenteringFamily::new(FamilyKind::LogLogistic, th).survival(t) - s_ll).abs() < 1e-15);
        assert!((CenteringFamily::new(FamilyKind::Weibull, th).survival(t) - s_w).abs() < 1e-15);
        assert!((CenteringFamily::new(FamilyKind::LogNormal, th).survival(t) - s_ln).abs() < 1e-15);
    }

    #[test]
    fn family_densities_match_finite_differences() {
        for kind in [FamilyKind::LogLogistic, FamilyKind::LogNormal, FamilyKind::Weibull] {
            let c = CenteringFamily::new(kind, [0.1, 0.3]);
            for &t in &[0.2, 1.0, 3.0] {
                let h = 1e-6;
                let fd = -(c.survival(t + h) - c.survival(t - h)) / (2.0 * h);
                assert!((fd - c.density(t)).abs() < 1e-7, "{kind:?} at {t}");
            }
        }
    }

    #[test]
    fn initial_theta_inverts_location_scale() {
        // For the log-logistic family the median of T is exp(-theta1).
        let th = CenteringFamily::initial_theta(FamilyKind::LogLogistic, 0.7, 0.5);
        assert!((CenteringFamily::new(FamilyKind::LogLogistic, th).survival(0.7f64.exp()) - 0.5).abs() < 1e-12);
        let th = CenteringFamily::initial_theta(FamilyKind::LogNormal, -0.2, 0.8);
        assert!((CenteringFamily::new(FamilyKind::LogNormal, th).survival((-0.2f64).exp()) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cdf_matches_incomplete_beta() {
        use statrs::function::beta::beta_reg;
        let w = weights_from_logits(&[0.3, -1.0, 2.0, 0.0, 0.5, -0.7, 1.1]);
        let j = w.len();
        for k in 1..200 {
            let x = k as f64 / 200.0;
            let oracle: f64 = (1..=j).map(|i| w[i - 1] * beta_reg(i as f64, (j - i + 1) as f64, x)).sum();
            assert!((bernstein_cdf(x, &w).unwrap() - oracle).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn raising_degree_keeps_density() {
        let w = weights_from_logits(&[0.4, -0.3, 1.2, 0.1]);
        let up = raise_degree(&w);
        assert_eq!(up.len(), w.len() + 1);
        assert!((up.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        for k in 0..=50 {
            let x = k as f64 / 50.0;
            assert!((bernstein_pdf(x, &w).unwrap() - bernstein_pdf(x, &up).unwrap()).abs() < 1e-12);
            assert!((bernstein_cdf(x, &w).unwrap() - bernstein_cdf(x, &up).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn tbp_density_is_negative_survival_slope() {
        let z: Vec<f64> = (0..14).map(|k| (k as f64 * 0.9).sin()).collect();
        for kind in [FamilyKind::LogLogistic, FamilyKind::LogNormal, FamilyKind::Weibull] {
            let b = TbpBaseline::from_logits(&z, CenteringFamily::new(kind, [0.2, 0.1]));
            for &t in &[0.1, 0.5, 1.0, 2.5, 6.0] {
                let h = 1e-5 * t;
                let fd = -(b.s0(t + h) - b.s0(t - h)) / (2.0 * h);
                assert!((fd - b.f0(t)).abs() < 1e-6, "{kind:?} at {t}");
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn cdf_is_monotone_and_bounded(z in proptest::collection::vec(-4.0f64..4.0, 1..20), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let w = weights_from_logits(&z);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (fl, fh) = (bernstein_cdf(lo, &w).unwrap(), bernstein_cdf(hi, &w).unwrap());
            proptest::prop_assert!(fl <= fh + 1e-14);
            proptest::prop_assert!((-1e-14..=1.0 + 1e-14).contains(&fl));
            proptest::prop_assert!(bernstein_pdf(lo, &w).unwrap() >= 0.0);
        }

        #[test]
        fn weights_stay_on_simplex(z in proptest::collection::vec(-30.0f64..30.0, 1..30)) {
            let w = weights_from_logits(&z);
            proptest::prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            proptest::prop_assert!(w.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn baseline_survival_is_decreasing(z in proptest::collection::vec(-3.0f64..3.0, 14), t in 0.01f64..20.0, dt in 0.0f64..5.0) {
            let b = TbpBaseline::from_logits(&z, ll([0.0, 0.0]));
            proptest::prop_assert!(b.s0(t + dt) <= b.s0(t) + 1e-14);
        }
    }
}
