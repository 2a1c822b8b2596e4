//! Adaptive Metropolis-within-Gibbs sampler for the joint posterior of
//! `(z, theta, beta, xi, alpha, v, tau2, phi, gamma)`.
//!
//! One sweep updates, in order: the Bernstein logits `z`, the centering
//! parameters `theta`, the regression coefficients (linear and spline), the
//! TBP precision `alpha`, each frailty, `tau^{-2}` (Gibbs), the GRF range
//! `phi`, and the inclusion indicators `gamma`. Every block draws from its
//! own random stream.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::archive::{Layout, PosteriorArchive, RunMeta};
use crate::baseline::{tbp_log_prior, CenteringFamily, FamilyKind, TbpBaseline, DEFAULT_DEGREE};
use crate::data::{CensoringKind, Dataset, Observation};
use crate::error::{Error, Result};
use crate::frailty::{FrailtySpec, PrecisionStructure};
use crate::models::{obs_loglik, ModelKind};
use crate::numeric::{cholesky_with_ridge, lower_times, mean, mean_and_cov, pairwise_sum, variance};
use crate::rng::{stream, Stream, StreamRng};
use crate::splines::{g_scale_with, SplineTerm, DEFAULT_BASIS};

pub const DEFAULT_ADAPT_START: usize = 5000;
pub const DEFAULT_PRERUN: usize = 2000;
pub const PROPOSAL_JITTER: f64 = 1e-10;
const INITIAL_VAR: f64 = 0.16;
const PRERUN_THETA_VAR: f64 = 100.0;

/// Random-walk proposal whose covariance switches from `sigma0` to the
/// scaled running covariance of past states after `adapt_start` iterations.
#[derive(Debug, Clone)]
pub struct AdaptiveProposal {
    sigma0: DMatrix<f64>,
    sigma0_l: DMatrix<f64>,
    mean: Vec<f64>,
    scatter: DMatrix<f64>,
    count: usize,
    adapt_start: usize,
}

impl AdaptiveProposal {
    pub fn new(sigma0: DMatrix<f64>, adapt_start: usize) -> Result<Self> {
        let (chol, _) = cholesky_with_ridge(&sigma0, 1e-10)
            .ok_or_else(|| Error::NotPositiveDefinite("initial proposal covariance".into()))?;
        let d = sigma0.nrows();
        Ok(AdaptiveProposal {
            sigma0_l: chol.l(),
            sigma0,
            mean: vec![0.0; d],
            scatter: DMatrix::zeros(d, d),
            count: 0,
            adapt_start,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma0.nrows()
    }

    /// Index `l` of the next proposal: one more than the number of states
    /// observed so far.
    pub fn iteration(&self) -> usize {
        self.count + 1
    }

    pub fn running_mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sample_covariance(&self) -> Option<DMatrix<f64>> {
        (self.count >= 2).then(|| &self.scatter / (self.count - 1) as f64)
    }

    /// Covariance the next proposal will use.
    pub fn covariance(&self) -> DMatrix<f64> {
        if self.iteration() <= self.adapt_start {
            return self.sigma0.clone();
        }
        match self.sample_covariance() {
            Some(c) => {
                let d = self.dim();
                (c + DMatrix::identity(d, d) * PROPOSAL_JITTER) * (2.4 * 2.4 / d as f64)
            }
            None => self.sigma0.clone(),
        }
    }

    pub fn propose(&self, current: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        let e: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let step = if self.iteration() <= self.adapt_start {
            lower_times(&self.sigma0_l, &e)
        } else {
            match cholesky_with_ridge(&self.covariance(), 1e-10) {
                Some((c, _)) => lower_times(&c.l(), &e),
                None => lower_times(&self.sigma0_l, &e),
            }
        };
        current.iter().zip(step).map(|(a, b)| a + b).collect()
    }

    /// Adds a visited state to the running moments (Welford update).
    pub fn observe(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d / n;
        }
        let d = self.dim();
        for a in 0..d {
            let after_a = x[a] - self.mean[a];
            for b in 0..d {
                self.scatter[(b, a)] += delta[b] * after_a;
            }
        }
    }
}

/// Starting values and proposal scales that replace the parametric pre-run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartValues {
    pub theta: [f64; 2],
    pub theta_cov: Vec<Vec<f64>>,
    pub coef: Vec<f64>,
    pub coef_cov: Vec<Vec<f64>>,
}

/// Sampler settings and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub model: ModelKind,
    pub family: FamilyKind,
    /// Bernstein degree `J`.
    pub degree: usize,
    pub nburn: usize,
    pub nsave: usize,
    /// Thinning interval; 1 keeps every post-burn-in state.
    pub nskip: usize,
    pub seed: u64,
    /// `l0`; proposals use their initial covariance up to this iteration.
    pub adapt_start: usize,
    /// Length of the pinned-weights pre-run (ignored when `start` is set).
    pub prerun: usize,
    pub start: Option<StartValues>,
    /// `beta0`; zero when absent.
    pub beta_mean: Option<Vec<f64>>,
    /// `W0 = beta_var * I` without selection.
    pub beta_var: f64,
    /// `V0 = theta_var_scale * V_hat`.
    pub theta_var_scale: f64,
    pub a_alpha: f64,
    pub b_alpha: f64,
    pub a_tau: f64,
    pub b_tau: f64,
    pub a_phi: f64,
    /// Defaults to `(a_phi - 1) / phi0`.
    pub b_phi: Option<f64>,
    pub selection: bool,
    /// Prior inclusion probability of each covariate.
    pub inclusion_prob: f64,
    /// `M` and `q` of the g-prior scale.
    pub g_m: f64,
    pub g_q: f64,
    /// Covariate columns that get an additional spline term.
    pub nonlinear: Vec<usize>,
    pub spline_basis: usize,
    pub fixed_alpha: Option<f64>,
    /// Pins the weights at `1/J` (the parametric model).
    pub fixed_weights: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            model: ModelKind::Aft,
            family: FamilyKind::LogLogistic,
            degree: DEFAULT_DEGREE,
            nburn: 1000,
            nsave: 1000,
            nskip: 1,
            seed: 1,
            adapt_start: DEFAULT_ADAPT_START,
            prerun: DEFAULT_PRERUN,
            start: None,
            beta_mean: None,
            beta_var: 1e10,
            theta_var_scale: 10.0,
            a_alpha: 1.0,
            b_alpha: 1.0,
            a_tau: 0.001,
            b_tau: 0.001,
            a_phi: 2.0,
            b_phi: None,
            selection: false,
            inclusion_prob: 0.5,
            g_m: 10.0,
            g_q: 0.9,
            nonlinear: Vec::new(),
            spline_basis: DEFAULT_BASIS,
            fixed_alpha: None,
            fixed_weights: false,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.degree < 2 {
            return bad(format!("degree J = {} must be at least 2", self.degree));
        }
        if self.nskip == 0 {
            return bad("nskip must be at least 1".into());
        }
        for (name, v) in [
            ("beta_var", self.beta_var),
            ("theta_var_scale", self.theta_var_scale),
            ("a_alpha", self.a_alpha),
            ("b_alpha", self.b_alpha),
            ("a_tau", self.a_tau),
            ("b_tau", self.b_tau),
            ("a_phi", self.a_phi),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if let Some(b) = self.b_phi {
            if !(b > 0.0 && b.is_finite()) {
                return bad(format!("b_phi = {b} must be positive"));
            }
        }
        if !(self.inclusion_prob > 0.0 && self.inclusion_prob < 1.0) {
            return bad("inclusion_prob must lie in (0, 1)".into());
        }
        if !(self.g_q > 0.5 && self.g_q < 1.0) || !(self.g_m > 1.0) {
            return bad("g-prior needs M > 1 and q in (0.5, 1)".into());
        }
        if let Some(a) = self.fixed_alpha {
            if !(a > 0.0 && a.is_finite()) {
                return bad(format!("fixed_alpha = {a} must be positive"));
            }
        }
        if self.start.is_none() && self.prerun < 4 {
            return bad("prerun needs at least 4 iterations when no start values are given".into());
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> usize {
        self.nburn + self.nsave * self.nskip
    }
}

/// Regression design: raw covariates followed by centered spline bases.
#[derive(Debug, Clone)]
pub struct Design {
    x: DMatrix<f64>,
    splines: Vec<SplineTerm>,
    p: usize,
    names: Vec<String>,
}

impl Design {
    pub fn new(data: &Dataset, nonlinear: &[usize], k: usize) -> Result<Self> {
        let n = data.n();
        let p = data.p();
        let mut splines = Vec::new();
        for &j in nonlinear {
            if j >= p {
                return Err(Error::Config(format!("nonlinear covariate index {j} out of range")));
            }
            splines.push(SplineTerm::build(j, &data.column(j), k)?);
        }
        let d = p + splines.iter().map(SplineTerm::k).sum::<usize>();
        let mut x = DMatrix::zeros(n, d);
        for (i, o) in data.observations().iter().enumerate() {
            for j in 0..p {
                x[(i, j)] = o.x[j];
            }
        }
        let mut names: Vec<String> = data.covariate_names().iter().map(|s| format!("beta_{s}")).collect();
        let mut col = p;
        for s in &splines {
            let cname = &data.covariate_names()[s.covariate];
            for c in 0..s.k() {
                x.set_column(col + c, &s.design().column(c));
                names.push(format!("xi_{cname}_{}", c + 1));
            }
            col += s.k();
        }
        Ok(Design { x, splines, p, names })
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn splines(&self) -> &[SplineTerm] {
        &self.splines
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Covariate part of every record's linear predictor.
    pub fn xb(&self, coef: &[f64]) -> Vec<f64> {
        let n = self.x.nrows();
        let mut out = vec![0.0; n];
        for (c, &b) in coef.iter().enumerate() {
            if b != 0.0 {
                for (o, x) in out.iter_mut().zip(self.x.column(c).iter()) {
                    *o += x * b;
                }
            }
        }
        out
    }
}

/// Full linear predictors `xb + v_loc`.
pub fn linear_predictors(observations: &[Observation], xb: &[f64], v: &[f64]) -> Vec<f64> {
    observations
        .iter()
        .zip(xb)
        .map(|(o, e)| e + if v.is_empty() { 0.0 } else { v[o.location] })
        .collect()
}

/// Posterior summaries of the pinned-weights pre-run.
#[derive(Debug, Clone)]
pub struct PrerunEstimate {
    pub theta: [f64; 2],
    pub theta_cov: DMatrix<f64>,
    pub coef: Vec<f64>,
    pub coef_cov: DMatrix<f64>,
    pub v: Vec<f64>,
    pub tau2: f64,
    pub phi: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Block {
    Z,
    Theta,
    Coef,
    Alpha,
    Frailty,
    Phi,
}

impl Block {
    fn name(self) -> &'static str {
        match self {
            Block::Z => "z",
            Block::Theta => "theta",
            Block::Coef => "beta",
            Block::Alpha => "alpha",
            Block::Frailty => "v",
            Block::Phi => "phi",
        }
    }
}

struct Gaussian {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
}

impl Gaussian {
    fn from_cov(mean: DVector<f64>, cov: &DMatrix<f64>, what: &str) -> Result<Self> {
        let (chol, ridge) = cholesky_with_ridge(cov, 1e-10)
            .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))?;
        if ridge > 0.0 {
            log::warn!("{what}: added ridge {ridge:e}");
        }
        Ok(Gaussian {
            mean,
            precision: chol.inverse(),
        })
    }

    fn log_kernel(&self, x: &[f64]) -> f64 {
        let d = DVector::from_column_slice(x) - &self.mean;
        -0.5 * (d.transpose() * &self.precision * &d)[(0, 0)]
    }
}

/// Prior on the joint coefficient vector `(beta, xi_1, ..., xi_s)`.
fn coef_prior(
    data: &Dataset,
    design: &Design,
    config: &McmcConfig,
    vague: bool,
) -> Result<(Gaussian, Vec<DMatrix<f64>>)> {
    let p = design.p();
    let d = design.dim();
    let mut cov = DMatrix::zeros(d, d);
    let mut mean = DVector::zeros(d);
    if config.selection && !vague && p > 0 {
        let xc = data.centered_design();
        let mut xtx = xc.transpose() * xc;
        let scale = (0..p).map(|j| xtx[(j, j)]).fold(0.0, f64::max).max(1e-300);
        if cholesky_with_ridge(&xtx, 0.0).map_or(true, |(_, r)| r > 0.0) {
            let eps = 1e-8 * scale;
            log::warn!("singular X'X in selection prior; adding ridge {eps:e}");
            for j in 0..p {
                xtx[(j, j)] += eps;
            }
        }
        let inv = xtx
            .try_inverse()
            .ok_or_else(|| Error::NotPositiveDefinite("selection prior X'X".into()))?;
        let g = g_scale_with(config.g_m, config.g_q, p);
        let block = inv * (g * data.n() as f64);
        cov.view_mut((0, 0), (p, p)).copy_from(&((&block + block.transpose()) * 0.5));
    } else {
        for j in 0..p {
            cov[(j, j)] = config.beta_var;
        }
        if let (Some(b0), false) = (&config.beta_mean, vague) {
            if b0.len() != p {
                return Err(Error::Config(format!("beta_mean has {} entries, expected {p}", b0.len())));
            }
            mean.rows_mut(0, p).copy_from_slice(b0);
        }
    }
    let mut spline_covs = Vec::new();
    let mut at = p;
    for s in design.splines() {
        let c = s.prior_covariance()?;
        cov.view_mut((at, at), (s.k(), s.k())).copy_from(&c);
        at += s.k();
        spline_covs.push(c);
    }
    Ok((Gaussian::from_cov(mean, &cov, "coefficient prior covariance")?, spline_covs))
}

struct Counter {
    tried: u64,
    accepted: u64,
}

/// Settings that differ between the pre-run and the main chain.
struct Setup {
    stream_base: u64,
    theta0: [f64; 2],
    theta_cov0: DMatrix<f64>,
    theta_prop: DMatrix<f64>,
    coef: Vec<f64>,
    coef_prop: DMatrix<f64>,
    vague_coef: bool,
    fixed_weights: bool,
    update_alpha: bool,
    selection: bool,
    adapt_start: usize,
    v: Vec<f64>,
    tau2: f64,
    phi: Option<f64>,
}

struct Chain<'a> {
    obs: &'a [Observation],
    model: ModelKind,
    family: FamilyKind,
    design: &'a Design,
    by_loc: Vec<Vec<usize>>,
    frailty: &'a FrailtySpec,
    prec: Option<PrecisionStructure>,

    theta_prior: Gaussian,
    coef_prior: Gaussian,
    a_alpha: f64,
    b_alpha: f64,
    a_tau: f64,
    b_tau: f64,
    a_phi: f64,
    b_phi: f64,
    q: f64,
    fixed_weights: bool,
    update_alpha: bool,
    selection: bool,

    z: Vec<f64>,
    theta: [f64; 2],
    coef: Vec<f64>,
    gamma: Vec<bool>,
    alpha: f64,
    v: Vec<f64>,
    tau2: f64,
    phi: f64,

    base: TbpBaseline,
    xb: Vec<f64>,
    ll: Vec<f64>,
    ll_total: f64,

    prop_z: AdaptiveProposal,
    prop_theta: AdaptiveProposal,
    prop_coef: AdaptiveProposal,
    prop_alpha: AdaptiveProposal,
    prop_phi: AdaptiveProposal,
    rngs: Vec<StreamRng>,
    counters: BTreeMap<Block, Counter>,
    site_counters: Vec<Counter>,
    nonfinite: u64,
    sweeps: usize,
}

impl<'a> Chain<'a> {
    fn new(
        data: &'a Dataset,
        design: &'a Design,
        frailty: &'a FrailtySpec,
        config: &McmcConfig,
        setup: Setup,
    ) -> Result<Self> {
        let j = config.degree;
        let p = design.p();
        let (coef_prior, _) = coef_prior(data, design, config, setup.vague_coef)?;
        let theta_prior = Gaussian::from_cov(
            DVector::from_column_slice(&setup.theta0),
            &setup.theta_cov0,
            "theta prior covariance",
        )?;
        let prec = match frailty {
            FrailtySpec::None => None,
            FrailtySpec::Iid => Some(PrecisionStructure::Iid { m: data.m() }),
            FrailtySpec::Icar(a) => Some(PrecisionStructure::Icar(a.clone())),
            FrailtySpec::Grf(g) => {
                let phi = setup.phi.unwrap_or_else(|| g.phi0());
                Some(PrecisionStructure::Grf(g.precision(phi)?))
            }
        };
        let (phi, b_phi) = match frailty {
            FrailtySpec::Grf(g) => {
                let phi0 = g.phi0();
                (
                    setup.phi.unwrap_or(phi0),
                    config.b_phi.unwrap_or((config.a_phi - 1.0).max(1e-3) / phi0),
                )
            }
            _ => (1.0, config.b_phi.unwrap_or(1.0)),
        };
        let m = prec.as_ref().map_or(0, PrecisionStructure::m);
        let v = if setup.v.len() == m { setup.v } else { vec![0.0; m] };
        let alpha = config.fixed_alpha.unwrap_or(config.a_alpha / config.b_alpha);
        let z = vec![0.0; j - 1];
        let gamma = vec![true; p];
        let base = TbpBaseline::from_logits(&z, CenteringFamily::new(config.family, setup.theta0));
        let l0 = setup.adapt_start;
        let scalar = |v: f64| DMatrix::from_element(1, 1, v);
        let rngs = (0..9).map(|k| stream(config.seed, setup.stream_base + k)).collect();
        let mut chain = Chain {
            obs: data.observations(),
            model: config.model,
            family: config.family,
            design,
            by_loc: data.records_by_location(),
            frailty,
            prec,
            theta_prior,
            coef_prior,
            a_alpha: config.a_alpha,
            b_alpha: config.b_alpha,
            a_tau: config.a_tau,
            b_tau: config.b_tau,
            a_phi: config.a_phi,
            b_phi,
            q: config.inclusion_prob,
            fixed_weights: setup.fixed_weights,
            update_alpha: setup.update_alpha,
            selection: setup.selection && p > 0,
            z,
            theta: setup.theta0,
            coef: setup.coef,
            gamma,
            alpha,
            v,
            tau2: setup.tau2,
            phi,
            base,
            xb: Vec::new(),
            ll: Vec::new(),
            ll_total: 0.0,
            prop_z: AdaptiveProposal::new(DMatrix::identity(j - 1, j - 1) * INITIAL_VAR, l0)?,
            prop_theta: AdaptiveProposal::new(setup.theta_prop, l0)?,
            prop_coef: AdaptiveProposal::new(setup.coef_prop, l0)?,
            prop_alpha: AdaptiveProposal::new(scalar(INITIAL_VAR), l0)?,
            prop_phi: AdaptiveProposal::new(scalar(INITIAL_VAR), l0)?,
            rngs,
            counters: BTreeMap::new(),
            site_counters: (0..m).map(|_| Counter { tried: 0, accepted: 0 }).collect(),
            nonfinite: 0,
            sweeps: 0,
        };
        chain.xb = chain.design.xb(&chain.coef_eff(&chain.coef, &chain.gamma));
        chain.ll = chain.loglik_all(&chain.base, &chain.xb, &chain.v);
        if let Some(i) = chain.ll.iter().position(|l| !l.is_finite()) {
            let o = &chain.obs[i];
            return Err(Error::NonFiniteInit {
                index: i + 1,
                detail: format!("u = {}, a = {}, b = {}, log-likelihood {}", o.u, o.a, o.b, chain.ll[i]),
            });
        }
        chain.ll_total = pairwise_sum(&chain.ll);
        Ok(chain)
    }

    fn coef_eff(&self, coef: &[f64], gamma: &[bool]) -> Vec<f64> {
        let mut c = coef.to_vec();
        if self.selection {
            for (cj, &g) in c.iter_mut().zip(gamma) {
                if !g {
                    *cj = 0.0;
                }
            }
        }
        c
    }

    fn eta(&self, i: usize, xb: &[f64], v: &[f64]) -> f64 {
        xb[i] + if v.is_empty() { 0.0 } else { v[self.obs[i].location] }
    }

    fn loglik_all(&self, base: &TbpBaseline, xb: &[f64], v: &[f64]) -> Vec<f64> {
        (0..self.obs.len())
            .map(|i| obs_loglik(self.model, &self.obs[i], self.eta(i, xb, v), base))
            .collect()
    }

    fn rng(&mut self, s: Stream) -> &mut StreamRng {
        &mut self.rngs[s as usize]
    }

    /// Metropolis decision for log target ratio `log_ratio`, drawing the
    /// uniform from the block's stream.
    fn decide(&mut self, block: Block, s: Stream, log_ratio: f64) -> bool {
        let u: f64 = self.rng(s).gen();
        let c = self.counters.entry(block).or_insert(Counter { tried: 0, accepted: 0 });
        c.tried += 1;
        if log_ratio.is_nan() {
            self.nonfinite += 1;
            return false;
        }
        let ok = u.ln() < log_ratio;
        if ok {
            c.accepted += 1;
        }
        ok
    }

    fn reject_nonfinite(&mut self, block: Block) {
        let c = self.counters.entry(block).or_insert(Counter { tried: 0, accepted: 0 });
        c.tried += 1;
        self.nonfinite += 1;
    }

    fn update_z(&mut self) {
        let zs = self.prop_z.propose(&self.z, &mut self.rngs[Stream::Weights as usize]);
        let base = TbpBaseline::from_logits(&zs, CenteringFamily::new(self.family, self.theta));
        let ll = self.loglik_all(&base, &self.xb, &self.v);
        let total = pairwise_sum(&ll);
        let lp_new = total + tbp_log_prior(&zs, self.alpha).unwrap_or(f64::NAN);
        if !lp_new.is_finite() {
            self.reject_nonfinite(Block::Z);
        } else {
            let lp_old = self.ll_total + tbp_log_prior(&self.z, self.alpha).unwrap_or(f64::NAN);
            if self.decide(Block::Z, Stream::Weights, lp_new - lp_old) {
                self.z = zs;
                self.base = base;
                self.ll = ll;
                self.ll_total = total;
            }
        }
        self.prop_z.observe(&self.z);
    }

    fn update_theta(&mut self) {
        let ts = self.prop_theta.propose(&self.theta, &mut self.rngs[Stream::Theta as usize]);
        let theta = [ts[0], ts[1]];
        let base = TbpBaseline::from_logits(&self.z, CenteringFamily::new(self.family, theta));
        let ll = self.loglik_all(&base, &self.xb, &self.v);
        let total = pairwise_sum(&ll);
        let lp_new = total + self.theta_prior.log_kernel(&ts);
        if !lp_new.is_finite() {
            self.reject_nonfinite(Block::Theta);
        } else {
            let lp_old = self.ll_total + self.theta_prior.log_kernel(&self.theta);
            if self.decide(Block::Theta, Stream::Theta, lp_new - lp_old) {
                self.theta = theta;
                self.base = base;
                self.ll = ll;
                self.ll_total = total;
            }
        }
        self.prop_theta.observe(&self.theta);
    }

    fn update_coef(&mut self) {
        if self.coef.is_empty() {
            return;
        }
        let cs = self.prop_coef.propose(&self.coef, &mut self.rngs[Stream::Beta as usize]);
        let xb = self.design.xb(&self.coef_eff(&cs, &self.gamma));
        let ll = self.loglik_all(&self.base, &xb, &self.v);
        let total = pairwise_sum(&ll);
        let lp_new = total + self.coef_prior.log_kernel(&cs);
        if !lp_new.is_finite() {
            self.reject_nonfinite(Block::Coef);
        } else {
            let lp_old = self.ll_total + self.coef_prior.log_kernel(&self.coef);
            if self.decide(Block::Coef, Stream::Beta, lp_new - lp_old) {
                self.coef = cs;
                self.xb = xb;
                self.ll = ll;
                self.ll_total = total;
            }
        }
        self.prop_coef.observe(&self.coef);
    }

    fn alpha_log_target(&self, alpha: f64) -> f64 {
        tbp_log_prior(&self.z, alpha).unwrap_or(f64::NAN) + (self.a_alpha - 1.0) * alpha.ln()
            - self.b_alpha * alpha
    }

    fn update_alpha(&mut self) {
        let a = self.prop_alpha.propose(&[self.alpha], &mut self.rngs[Stream::Alpha as usize])[0];
        if a <= 0.0 {
            // Outside the support: an ordinary rejection.
            let _: f64 = self.rng(Stream::Alpha).gen();
            self.counters.entry(Block::Alpha).or_insert(Counter { tried: 0, accepted: 0 }).tried += 1;
        } else {
            let lp_new = self.alpha_log_target(a);
            if !lp_new.is_finite() {
                self.reject_nonfinite(Block::Alpha);
            } else if self.decide(Block::Alpha, Stream::Alpha, lp_new - self.alpha_log_target(self.alpha)) {
                self.alpha = a;
            }
        }
        self.prop_alpha.observe(&[self.alpha]);
    }

    fn update_frailties(&mut self) {
        let Some(prec) = self.prec.take() else { return };
        for i in 0..prec.m() {
            let (mu, var) = prec.conditional(i, &self.v, self.tau2);
            let rng = &mut self.rngs[Stream::Frailty as usize];
            let e: f64 = rng.sample(StandardNormal);
            let u: f64 = rng.gen();
            let old = self.v[i];
            let new = old + var.sqrt() * e;
            let mut diff = 0.0;
            let mut fresh = Vec::with_capacity(self.by_loc[i].len());
            for &r in &self.by_loc[i] {
                let l = obs_loglik(self.model, &self.obs[r], self.xb[r] + new, &self.base);
                diff += l - self.ll[r];
                fresh.push(l);
            }
            let log_ratio =
                diff - ((new - mu).powi(2) - (old - mu).powi(2)) / (2.0 * var);
            self.site_counters[i].tried += 1;
            if !log_ratio.is_finite() && log_ratio != f64::NEG_INFINITY {
                self.nonfinite += 1;
                continue;
            }
            if u.ln() < log_ratio {
                self.site_counters[i].accepted += 1;
                self.v[i] = new;
                for (&r, l) in self.by_loc[i].iter().zip(fresh) {
                    self.ll[r] = l;
                }
            }
        }
        if let PrecisionStructure::Icar(_) = prec {
            let c = mean(&self.v);
            self.v.iter_mut().for_each(|x| *x -= c);
            self.ll = self.loglik_all(&self.base, &self.xb, &self.v);
        }
        self.ll_total = pairwise_sum(&self.ll);
        self.prec = Some(prec);
    }

    fn update_tau2(&mut self) {
        let Some(prec) = &self.prec else { return };
        let shape = self.a_tau + 0.5 * prec.rank() as f64;
        let rate = self.b_tau + 0.5 * prec.quad_form(&self.v);
        let g = Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters");
        let draw: f64 = g.sample(&mut self.rngs[Stream::Tau as usize]);
        let tau2 = 1.0 / draw;
        if tau2.is_finite() && tau2 > 0.0 {
            self.tau2 = tau2;
        } else {
            self.nonfinite += 1;
        }
    }

    fn phi_log_target(&self, prec: &PrecisionStructure, phi: f64) -> f64 {
        -0.5 * prec.log_det_corr() - 0.5 * prec.quad_form(&self.v) / self.tau2
            + (self.a_phi - 1.0) * phi.ln()
            - self.b_phi * phi
    }

    fn update_phi(&mut self) {
        let FrailtySpec::Grf(spec) = self.frailty else { return };
        let ps = self.prop_phi.propose(&[self.phi], &mut self.rngs[Stream::Range as usize])[0];
        if ps <= 0.0 {
            let _: f64 = self.rng(Stream::Range).gen();
            self.counters.entry(Block::Phi).or_insert(Counter { tried: 0, accepted: 0 }).tried += 1;
        } else {
            match spec.precision(ps) {
                Ok(gp) => {
                    let cand = PrecisionStructure::Grf(gp);
                    let lp_new = self.phi_log_target(&cand, ps);
                    let cur = self.prec.as_ref().expect("GRF precision");
                    let lp_old = self.phi_log_target(cur, self.phi);
                    if !lp_new.is_finite() {
                        self.reject_nonfinite(Block::Phi);
                    } else if self.decide(Block::Phi, Stream::Range, lp_new - lp_old) {
                        self.phi = ps;
                        self.prec = Some(cand);
                    }
                }
                Err(_) => self.reject_nonfinite(Block::Phi),
            }
        }
        self.prop_phi.observe(&[self.phi]);
    }

    /// Excluded coefficients do not touch the likelihood, so they are drawn
    /// exactly from their conditional prior given the included ones.
    fn refresh_excluded(&mut self) {
        let out: Vec<usize> = (0..self.design.p()).filter(|&j| !self.gamma[j]).collect();
        if out.is_empty() {
            return;
        }
        let q = &self.coef_prior.precision;
        let mu = &self.coef_prior.mean;
        let keep: Vec<usize> = (0..self.coef.len()).filter(|j| !out.contains(j)).collect();
        let q_oo = DMatrix::from_fn(out.len(), out.len(), |a, b| q[(out[a], out[b])]);
        let Some(chol) = q_oo.cholesky() else {
            return;
        };
        let shift = DVector::from_fn(out.len(), |a, _| {
            keep.iter().map(|&k| q[(out[a], k)] * (self.coef[k] - mu[k])).sum::<f64>()
        });
        let mean = chol.solve(&shift);
        let rng = &mut self.rngs[Stream::Selection as usize];
        let z = DVector::from_fn(out.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise = chol.l().transpose().solve_upper_triangular(&z).unwrap_or(z);
        for (a, &j) in out.iter().enumerate() {
            self.coef[j] = mu[j] - mean[a] + noise[a];
        }
    }

    fn update_gamma(&mut self) {
        self.refresh_excluded();
        let log_prior_odds = self.q.ln() - (1.0 - self.q).ln();
        for j in 0..self.design.p() {
            let mut flipped = self.gamma.clone();
            flipped[j] = !flipped[j];
            let xb = self.design.xb(&self.coef_eff(&self.coef, &flipped));
            let ll = self.loglik_all(&self.base, &xb, &self.v);
            let total = pairwise_sum(&ll);
            let (l1, l0) = if self.gamma[j] { (self.ll_total, total) } else { (total, self.ll_total) };
            let log_odds = log_prior_odds + l1 - l0;
            let p1 = 1.0 / (1.0 + (-log_odds).exp());
            let u: f64 = self.rng(Stream::Selection).gen();
            if p1.is_nan() {
                self.nonfinite += 1;
                continue;
            }
            let want = u < p1;
            if want != self.gamma[j] {
                self.gamma = flipped;
                self.xb = xb;
                self.ll = ll;
                self.ll_total = total;
            }
        }
    }

    fn sweep(&mut self) {
        if !self.fixed_weights {
            self.update_z();
        }
        self.update_theta();
        self.update_coef();
        if self.update_alpha {
            self.update_alpha();
        }
        self.update_frailties();
        self.update_tau2();
        self.update_phi();
        if self.selection {
            self.update_gamma();
        }
        self.sweeps += 1;
        #[cfg(debug_assertions)]
        if self.sweeps <= 50 || self.sweeps % 100 == 0 {
            let xb = self.design.xb(&self.coef_eff(&self.coef, &self.gamma));
            let fresh = pairwise_sum(&self.loglik_all(&self.base, &xb, &self.v));
            debug_assert!(
                (fresh - self.ll_total).abs() <= 1e-10 * (1.0 + fresh.abs()),
                "cached log-likelihood {} differs from fresh {fresh}",
                self.ll_total
            );
        }
    }

    fn record(&self) -> Vec<f64> {
        let mut row = self.coef.clone();
        if self.selection {
            row.extend(self.gamma.iter().map(|&g| if g { 1.0 } else { 0.0 }));
        }
        row.extend_from_slice(&self.theta);
        row.extend_from_slice(&self.z);
        row.push(self.alpha);
        if self.prec.is_some() {
            row.push(self.tau2);
        }
        if matches!(self.frailty, FrailtySpec::Grf(_)) {
            row.push(self.phi);
        }
        row.extend_from_slice(&self.v);
        row
    }

    fn acceptance(&self) -> BTreeMap<String, f64> {
        let mut out: BTreeMap<String, f64> = self
            .counters
            .iter()
            .filter(|(_, c)| c.tried > 0)
            .map(|(b, c)| (b.name().to_string(), c.accepted as f64 / c.tried as f64))
            .collect();
        let (tried, acc) = self
            .site_counters
            .iter()
            .fold((0u64, 0u64), |(t, a), c| (t + c.tried, a + c.accepted));
        if tried > 0 {
            out.insert(Block::Frailty.name().to_string(), acc as f64 / tried as f64);
        }
        out
    }

    fn site_acceptance(&self) -> Vec<f64> {
        self.site_counters
            .iter()
            .map(|c| if c.tried > 0 { c.accepted as f64 / c.tried as f64 } else { 0.0 })
            .collect()
    }
}

fn check_frailty(data: &Dataset, frailty: &FrailtySpec) -> Result<()> {
    let m = data.m();
    let got = match frailty {
        FrailtySpec::None | FrailtySpec::Iid => m,
        FrailtySpec::Icar(a) => a.m(),
        FrailtySpec::Grf(g) => g.coords.len(),
    };
    if got != m {
        return Err(Error::Frailty(format!("frailty prior has {got} sites but the data have {m}")));
    }
    Ok(())
}

/// Crude log-time summaries used to start the pre-run.
fn log_time_summary(obs: &[Observation]) -> (f64, f64) {
    let logs: Vec<f64> = obs
        .iter()
        .map(|o| match o.kind() {
            CensoringKind::Exact | CensoringKind::Right => o.a.ln(),
            CensoringKind::Left => (0.5 * o.b).ln(),
            CensoringKind::Interval => 0.5 * (o.a.ln() + o.b.ln()),
        })
        .filter(|x| x.is_finite())
        .collect();
    if logs.is_empty() {
        return (0.0, 1.0);
    }
    let sd = if logs.len() > 1 { variance(&logs).sqrt() } else { 1.0 };
    (mean(&logs), if sd > 0.0 { sd } else { 1.0 })
}

fn symmetric(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn usable_cov(c: DMatrix<f64>, fallback: &DMatrix<f64>) -> DMatrix<f64> {
    let degenerate = (0..c.nrows()).any(|i| !(c[(i, i)] > 0.0)) || c.iter().any(|x| !x.is_finite());
    if degenerate || cholesky_with_ridge(&c, 0.0).map_or(true, |(_, r)| r > 0.0) {
        fallback.clone()
    } else {
        symmetric(&c)
    }
}

/// Short chain with weights pinned at `1/J` and vague priors on
/// `(theta, beta)`; returns posterior means and covariances from the second
/// half of the run.
pub fn parametric_prerun(
    data: &Dataset,
    design: &Design,
    frailty: &FrailtySpec,
    config: &McmcConfig,
) -> Result<PrerunEstimate> {
    if data.n() == 0 {
        return Err(Error::Config("the parametric pre-run needs at least one observation".into()));
    }
    let iters = config.prerun.max(4);
    let (lm, ls) = log_time_summary(data.observations());
    let theta0 = CenteringFamily::initial_theta(config.family, lm, ls);
    let d = design.dim();
    let n = data.n() as f64;
    let mut coef_prop = DMatrix::zeros(d, d);
    for c in 0..d {
        let col: Vec<f64> = design.matrix().column(c).iter().copied().collect();
        let var = variance(&col);
        coef_prop[(c, c)] = if var > 1e-12 { 1.0 / (n * var) } else { 1.0 };
    }
    let theta_prop = DMatrix::identity(2, 2) * 0.01;
    let setup = Setup {
        stream_base: Stream::Prerun as u64,
        theta0,
        theta_cov0: DMatrix::identity(2, 2) * PRERUN_THETA_VAR,
        theta_prop: theta_prop.clone(),
        coef: vec![0.0; d],
        coef_prop: coef_prop.clone(),
        vague_coef: true,
        fixed_weights: true,
        update_alpha: false,
        selection: false,
        adapt_start: iters / 4,
        v: Vec::new(),
        tau2: 1.0,
        phi: None,
    };
    let mut chain = Chain::new(data, design, frailty, config, setup)?;
    let keep_from = iters / 2;
    let mut thetas = Vec::new();
    let mut coefs = Vec::new();
    let mut vs: Vec<Vec<f64>> = Vec::new();
    let mut tau2s = Vec::new();
    let mut phis = Vec::new();
    for it in 0..iters {
        chain.sweep();
        if it >= keep_from {
            thetas.push(chain.theta.to_vec());
            coefs.push(chain.coef.clone());
            vs.push(chain.v.clone());
            tau2s.push(chain.tau2);
            phis.push(chain.phi);
        }
    }
    let (tm, tc) = mean_and_cov(&thetas);
    let (cm, cc) = mean_and_cov(&coefs);
    let (vm, _) = mean_and_cov(&vs);
    Ok(PrerunEstimate {
        theta: [tm[0], tm[1]],
        theta_cov: usable_cov(tc, &theta_prop),
        coef: cm.iter().copied().collect(),
        coef_cov: usable_cov(cc, &coef_prop),
        v: vm.iter().copied().collect(),
        tau2: if chain.prec.is_some() { mean(&tau2s) } else { 1.0 },
        phi: matches!(frailty, FrailtySpec::Grf(_)).then(|| mean(&phis)),
    })
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], d: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Config(format!("{what} must be {d} x {d}")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

/// Column names of a run's draws, in storage order.
pub fn column_names(design: &Design, data: &Dataset, frailty: &FrailtySpec, config: &McmcConfig) -> Vec<String> {
    let mut cols: Vec<String> = design.names().to_vec();
    if config.selection && design.p() > 0 {
        cols.extend(data.covariate_names().iter().map(|s| format!("gamma_{s}")));
    }
    cols.push("theta1".into());
    cols.push("theta2".into());
    cols.extend((1..config.degree).map(|j| format!("z{j}")));
    cols.push("alpha".into());
    if !frailty.is_none() {
        cols.push("tau2".into());
    }
    if matches!(frailty, FrailtySpec::Grf(_)) {
        cols.push("phi".into());
    }
    if !frailty.is_none() {
        cols.extend(data.location_ids().iter().map(|id| format!("v_{id}")));
    }
    cols
}

/// Pre-run (unless start values are supplied), burn-in, then `nsave`
/// states thinned by `nskip`.
pub fn run_chain(data: &Dataset, frailty: &FrailtySpec, config: &McmcConfig) -> Result<PosteriorArchive> {
    config.validate()?;
    check_frailty(data, frailty)?;
    let design = Design::new(data, &config.nonlinear, config.spline_basis)?;
    let d = design.dim();
    let (theta_hat, v_hat, coef_hat, w_hat, v0, tau20, phi0) = match &config.start {
        Some(s) => {
            if s.coef.len() != d {
                return Err(Error::Config(format!("start coef has {} entries, expected {d}", s.coef.len())));
            }
            (
                s.theta,
                from_rows(&s.theta_cov, 2, "start theta_cov")?,
                s.coef.clone(),
                from_rows(&s.coef_cov, d, "start coef_cov")?,
                Vec::new(),
                1.0,
                None,
            )
        }
        None => {
            let est = parametric_prerun(data, &design, frailty, config)?;
            (est.theta, est.theta_cov, est.coef, est.coef_cov, est.v, est.tau2, est.phi)
        }
    };
    let setup = Setup {
        stream_base: 0,
        theta0: theta_hat,
        theta_cov0: &v_hat * config.theta_var_scale,
        theta_prop: v_hat.clone(),
        coef: coef_hat.clone(),
        coef_prop: w_hat.clone(),
        vague_coef: false,
        fixed_weights: config.fixed_weights,
        update_alpha: config.fixed_alpha.is_none(),
        selection: config.selection,
        adapt_start: config.adapt_start,
        v: v0,
        tau2: tau20,
        phi: phi0,
    };
    let mut chain = Chain::new(data, &design, frailty, config, setup)?;
    let columns = column_names(&design, data, frailty, config);
    let mut draws = Vec::with_capacity(config.nsave);
    let mut loglik = Vec::with_capacity(config.nsave);
    for _ in 0..config.nburn {
        chain.sweep();
    }
    for _ in 0..config.nsave {
        for _ in 0..config.nskip {
            chain.sweep();
        }
        draws.push(chain.record());
        loglik.push(chain.ll.clone());
    }
    debug_assert!(draws.iter().all(|r| r.len() == columns.len()));

    let layout = Layout {
        p: design.p(),
        spline_dims: design.splines().iter().map(SplineTerm::k).collect(),
        selection: chain.selection,
        degree: config.degree,
        m: chain.v.len(),
        has_phi: matches!(frailty, FrailtySpec::Grf(_)),
    };
    let (_, spline_covs) = coef_prior(data, &design, config, false)?;
    let mut archive = PosteriorArchive {
        meta: RunMeta {
            config: config.clone(),
            frailty: frailty.name().to_string(),
            n: data.n(),
            layout,
            columns,
            covariate_names: data.covariate_names().to_vec(),
            acceptance: chain.acceptance(),
            site_acceptance: chain.site_acceptance(),
            nonfinite_rejections: chain.nonfinite,
            theta_hat,
            theta_cov: to_rows(&v_hat),
            coef_hat,
            coef_cov: to_rows(&w_hat),
            spline_prior_cov: spline_covs.iter().map(to_rows).collect(),
            loglik_at_mean: None,
            criteria: BTreeMap::new(),
            run: None,
        },
        draws,
        loglik,
    };
    archive.meta.loglik_at_mean = loglik_at_posterior_mean(&archive, data, &design);
    Ok(archive)
}

/// `log L(D | Omega_hat)` with `Omega_hat` the componentwise posterior mean
/// of the effective coefficients, `theta`, `z` and `v`.
pub fn loglik_at_posterior_mean(archive: &PosteriorArchive, data: &Dataset, design: &Design) -> Option<f64> {
    let l = archive.len();
    if l == 0 {
        return None;
    }
    let lay = archive.layout();
    let avg = |f: &dyn Fn(usize) -> Vec<f64>| -> Vec<f64> {
        let mut acc = f(0);
        for k in 1..l {
            for (a, x) in acc.iter_mut().zip(f(k)) {
                *a += x;
            }
        }
        acc.iter().map(|a| a / l as f64).collect()
    };
    let coef = avg(&|k| archive.coef_eff(k));
    let theta = avg(&|k| archive.theta(k).to_vec());
    let z = avg(&|k| archive.z(k).to_vec());
    let v = if lay.m > 0 { avg(&|k| archive.frailties(k).to_vec()) } else { Vec::new() };
    let base = TbpBaseline::from_logits(&z, CenteringFamily::new(archive.meta.config.family, [theta[0], theta[1]]));
    let xb = design.xb(&coef);
    let etas = linear_predictors(data.observations(), &xb, &v);
    Some(crate::models::total_loglik(archive.meta.config.model, data.observations(), &etas, &base).0)
}
