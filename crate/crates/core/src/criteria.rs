//! Model comparison and testing from posterior output: DIC, LPML / CPO,
//! WAIC, pseudo Bayes factors, Savage-Dickey Bayes factors and effective
//! sample sizes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::archive::PosteriorArchive;
use crate::baseline::alpha_log_prior_at_zero;
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, mean, mean_and_cov, mvn_log_density, quantile, variance};

/// `(DIC, p_D)` from per-draw total log-likelihoods and the log-likelihood
/// at the posterior mean.
pub fn dic(totals: &[f64], loglik_at_mean: f64) -> Result<(f64, f64)> {
    if totals.is_empty() {
        return Err(Error::Domain("DIC needs at least one draw".into()));
    }
    let pd = 2.0 * (loglik_at_mean - mean(totals));
    Ok((-2.0 * loglik_at_mean + 2.0 * pd, pd))
}

/// LPML and the per-observation log CPO estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Cpo {
    pub lpml: f64,
    pub log_cpo: Vec<f64>,
}

fn check_matrix(loglik: &[Vec<f64>], min_draws: usize, what: &str) -> Result<usize> {
    if loglik.len() < min_draws {
        return Err(Error::Domain(format!("{what} needs at least {min_draws} draws, got {}", loglik.len())));
    }
    let n = loglik[0].len();
    if loglik.iter().any(|r| r.len() != n) {
        return Err(Error::Domain("ragged log-likelihood matrix".into()));
    }
    if loglik.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite log-likelihood entry".into()));
    }
    Ok(n)
}

/// Truncated importance-sampling CPO: weights `1/L_i` are capped at
/// `sqrt(L)` times their mean, all in log space.
pub fn lpml(loglik: &[Vec<f64>]) -> Result<Cpo> {
    let n = check_matrix(loglik, 2, "LPML")?;
    let l = loglik.len() as f64;
    let mut log_cpo = Vec::with_capacity(n);
    let mut col = vec![0.0; loglik.len()];
    for i in 0..n {
        for (c, row) in col.iter_mut().zip(loglik) {
            *c = row[i];
        }
        let log_w: Vec<f64> = col.iter().map(|v| -v).collect();
        let cap = log_sum_exp(&log_w) - l.ln() + 0.5 * l.ln();
        let log_wt: Vec<f64> = log_w.iter().map(|w| w.min(cap)).collect();
        let num: Vec<f64> = col.iter().zip(&log_wt).map(|(a, b)| a + b).collect();
        log_cpo.push(log_sum_exp(&num) - log_sum_exp(&log_wt));
    }
    Ok(Cpo {
        lpml: log_cpo.iter().sum(),
        log_cpo,
    })
}

/// Pseudo Bayes factor of model 1 against model 2.
pub fn pseudo_bayes_factor(lpml1: f64, lpml2: f64) -> f64 {
    (lpml1 - lpml2).exp()
}

/// `(WAIC, p_W)`.
pub fn waic(loglik: &[Vec<f64>]) -> Result<(f64, f64)> {
    let n = check_matrix(loglik, 2, "WAIC")?;
    let l = loglik.len() as f64;
    let mut lppd = 0.0;
    let mut pw = 0.0;
    let mut col = vec![0.0; loglik.len()];
    for i in 0..n {
        for (c, row) in col.iter_mut().zip(loglik) {
            *c = row[i];
        }
        lppd += log_sum_exp(&col) - l.ln();
        pw += variance(&col);
    }
    Ok((-2.0 * lppd + 2.0 * pw, pw))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Criteria {
    pub lpml: f64,
    pub dic: f64,
    pub pd: f64,
    pub waic: f64,
    pub pw: f64,
}

/// All three criteria of an archive.
pub fn criteria(archive: &PosteriorArchive) -> Result<Criteria> {
    let at_mean = archive
        .meta
        .loglik_at_mean
        .ok_or_else(|| Error::Domain("archive has no log-likelihood at the posterior mean".into()))?;
    let (dic, pd) = dic(&archive.loglik_totals(), at_mean)?;
    let cpo = lpml(&archive.loglik)?;
    let (waic, pw) = waic(&archive.loglik)?;
    Ok(Criteria {
        lpml: cpo.lpml,
        dic,
        pd,
        waic,
        pw,
    })
}

/// A Savage-Dickey estimate on the log scale; `ridge` is set when the
/// posterior covariance needed regularisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BayesFactor {
    pub log_bf: f64,
    pub ridge: bool,
}

impl BayesFactor {
    pub fn bf(&self) -> f64 {
        self.log_bf.exp()
    }
}

fn normal_at_zero(rows: &[Vec<f64>]) -> Result<(f64, bool)> {
    if rows.len() < 2 {
        return Err(Error::Domain("need at least two draws".into()));
    }
    let (m, c) = mean_and_cov(rows);
    let zero = DVector::zeros(m.len());
    let (v, ridge) = mvn_log_density(&zero, &m, &c)
        .ok_or_else(|| Error::NotPositiveDefinite("posterior covariance".into()))?;
    if ridge {
        log::warn!("posterior covariance is singular; added a ridge");
    }
    Ok((v, ridge))
}

/// Semiparametric (`z != 0`) against parametric (`z = 0`) baseline.
pub fn bf_parametric(archive: &PosteriorArchive) -> Result<BayesFactor> {
    let lay = archive.layout();
    let alpha_hat = mean(&archive.series(lay.alpha_at()));
    let num = alpha_log_prior_at_zero(alpha_hat, lay.degree)?;
    let (den, ridge) = normal_at_zero(&archive.block(lay.z_at()..lay.alpha_at()))?;
    Ok(BayesFactor { log_bf: num - den, ridge })
}

/// Nonlinear against linear effect for spline term `term`.
pub fn bf_linearity(archive: &PosteriorArchive, term: usize) -> Result<BayesFactor> {
    let lay = archive.layout();
    let k = *lay
        .spline_dims
        .get(term)
        .ok_or_else(|| Error::Config(format!("no spline term {term}")))?;
    let at = lay.spline_at(term);
    let prior = &archive.meta.spline_prior_cov[term];
    let prior = DMatrix::from_fn(k, k, |i, j| prior[i][j]);
    let zero = DVector::zeros(k);
    let (num, _) = mvn_log_density(&zero, &zero, &prior)
        .ok_or_else(|| Error::NotPositiveDefinite("spline prior covariance".into()))?;
    let (den, ridge) = normal_at_zero(&archive.block(at..at + k))?;
    Ok(BayesFactor { log_bf: num - den, ridge })
}

/// Effective sample size with flags for degenerate input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ess {
    pub value: f64,
    pub zero_variance: bool,
    pub clamped: bool,
}

/// `L / (1 + 2 sum rho_k)` with autocorrelations truncated by the initial
/// monotone positive sequence of paired sums.
pub fn ess(series: &[f64]) -> Result<Ess> {
    let l = series.len();
    if l < 10 {
        return Err(Error::Domain(format!("ESS needs at least 10 values, got {l}")));
    }
    let lf = l as f64;
    let m = mean(series);
    let dev: Vec<f64> = series.iter().map(|x| x - m).collect();
    let gamma = |k: usize| dev[..l - k].iter().zip(&dev[k..]).map(|(a, b)| a * b).sum::<f64>() / lf;
    let g0 = gamma(0);
    if !(g0 > 0.0) {
        return Ok(Ess {
            value: lf,
            zero_variance: true,
            clamped: false,
        });
    }
    let mut sum_pairs = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while k + 1 < l {
        let pair = gamma(k) + gamma(k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum_pairs += pair;
        prev = pair;
        k += 2;
    }
    let sigma2 = -g0 + 2.0 * sum_pairs;
    let raw = if sigma2 > 0.0 { lf * g0 / sigma2 } else { f64::INFINITY };
    let value = raw.clamp(1.0, lf);
    Ok(Ess {
        value,
        zero_variance: false,
        clamped: value != raw,
    })
}

/// Posterior summary of one scalar parameter (type-7 quantiles).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn summarize(series: &[f64]) -> ParamSummary {
    ParamSummary {
        mean: mean(series),
        median: quantile(series, 0.5),
        sd: if series.len() > 1 { variance(series).sqrt() } else { 0.0 },
        lower: quantile(series, 0.025),
        upper: quantile(series, 0.975),
    }
}
