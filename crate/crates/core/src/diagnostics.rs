//! Cox-Snell residuals `r(t) = -log S_x(t)` and the Turnbull estimate of
//! their distribution. Under a correct model the residuals form an
//! arbitrarily censored Exp(1) sample, so the estimated cumulative hazard
//! should follow the identity line.

use crate::archive::PosteriorArchive;
use crate::data::{CensoringKind, Dataset};
use crate::error::Result;
use crate::models::surv;
use crate::sampler::{linear_predictors, Design};

pub const DEFAULT_OVERLAY_DRAWS: usize = 10;
pub const TURNBULL_MAX_ITER: usize = 1000;
pub const TURNBULL_TOL: f64 = 1e-8;

/// A censored residual: the event residual lies in `(a, b]` (or equals `a`
/// when `a == b`) and is known to exceed `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub u: f64,
    pub a: f64,
    pub b: f64,
}

impl Residual {
    pub fn exact(r: f64) -> Self {
        Residual { u: 0.0, a: r, b: r }
    }

    pub fn right(r: f64) -> Self {
        Residual {
            u: 0.0,
            a: r,
            b: f64::INFINITY,
        }
    }

    pub fn interval(a: f64, b: f64) -> Self {
        Residual { u: 0.0, a, b }
    }
}

/// Residuals of every record under one posterior draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSample {
    pub draw: usize,
    pub residuals: Vec<Residual>,
}

fn r_of(s: f64) -> f64 {
    if s >= 1.0 {
        0.0
    } else {
        -s.ln()
    }
}

/// `default_count` draws spread evenly over the archive.
pub fn overlay_draws(len: usize, count: usize) -> Vec<usize> {
    if len == 0 || count == 0 {
        return Vec::new();
    }
    let k = count.min(len);
    (0..k).map(|j| ((j as f64 + 0.5) * len as f64 / k as f64) as usize).collect()
}

pub fn coxsnell_residuals(archive: &PosteriorArchive, data: &Dataset, draws: &[usize]) -> Result<Vec<ResidualSample>> {
    let cfg = &archive.meta.config;
    let design = Design::new(data, &cfg.nonlinear, cfg.spline_basis)?;
    let obs = data.observations();
    Ok(draws
        .iter()
        .map(|&l| {
            let base = archive.baseline(l);
            let xb = design.xb(&archive.coef_eff(l));
            let etas = linear_predictors(obs, &xb, archive.frailties(l));
            let residuals = obs
                .iter()
                .zip(&etas)
                .map(|(o, &eta)| {
                    let r = |t: f64| r_of(surv(cfg.model, t, eta, &base));
                    let u = r(o.u);
                    match o.kind() {
                        CensoringKind::Exact => Residual { u, a: r(o.a), b: r(o.a) },
                        CensoringKind::Right => Residual {
                            u,
                            a: r(o.a),
                            b: f64::INFINITY,
                        },
                        _ => Residual { u, a: r(o.a), b: r(o.b) },
                    }
                })
                .collect();
            ResidualSample { draw: l, residuals }
        })
        .collect())
}

/// Turnbull support intervals with their masses, in increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct Turnbull {
    /// `(lo, hi)`; a point mass has `lo == hi`, otherwise the interval is
    /// `(lo, hi]`.
    pub support: Vec<(f64, f64)>,
    pub masses: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl Turnbull {
    /// `S(t+)`: mass not lying entirely at or below `t`.
    pub fn survival(&self, t: f64) -> f64 {
        let below: f64 = self
            .support
            .iter()
            .zip(&self.masses)
            .filter(|((_, hi), _)| *hi <= t)
            .map(|(_, p)| p)
            .sum();
        (1.0 - below).max(0.0)
    }

    /// `(lo_j, -log S(lo_j -))` at each support interval's left end.
    pub fn cumhaz_points(&self) -> Vec<(f64, f64)> {
        let mut acc = 0.0f64;
        let mut out = Vec::with_capacity(self.support.len());
        for ((lo, _), p) in self.support.iter().zip(&self.masses) {
            out.push((*lo, -(1.0 - acc).max(0.0).ln()));
            acc += p;
        }
        out
    }
}

// Endpoint keys: (value, 0) closed left end of a point, (value, 1) right
// end, (value, 2) open left end.
type Key = (f64, u8);

fn key_le(a: Key, b: Key) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 <= b.1)
}

fn keys(r: &Residual) -> (Key, Key) {
    if r.a == r.b {
        ((r.a, 0), (r.b, 1))
    } else {
        ((r.a, 2), (r.b, 1))
    }
}

/// Self-consistency EM over the innermost intervals, with truncation
/// handled by conditioning each record on the support beyond its `u`.
pub fn turnbull_npmle(sample: &[Residual]) -> Turnbull {
    turnbull_with(sample, TURNBULL_MAX_ITER, TURNBULL_TOL)
}

pub fn turnbull_with(sample: &[Residual], max_iter: usize, tol: f64) -> Turnbull {
    let mut ends: Vec<(Key, bool)> = Vec::with_capacity(2 * sample.len());
    for r in sample {
        let (l, rr) = keys(r);
        ends.push((l, true));
        ends.push((rr, false));
    }
    ends.sort_by(|x, y| x.0 .0.total_cmp(&y.0 .0).then(x.0 .1.cmp(&y.0 .1)).then(y.1.cmp(&x.1)));
    let mut sup: Vec<(Key, Key)> = Vec::new();
    for w in ends.windows(2) {
        if w[0].1 && !w[1].1 {
            sup.push((w[0].0, w[1].0));
        }
    }
    let k = sup.len();
    if k == 0 {
        return Turnbull {
            support: Vec::new(),
            masses: Vec::new(),
            iterations: 0,
            converged: true,
        };
    }
    let alpha: Vec<Vec<usize>> = sample
        .iter()
        .map(|r| {
            let (l, rr) = keys(r);
            (0..k).filter(|&j| key_le(l, sup[j].0) && key_le(sup[j].1, rr)).collect()
        })
        .collect();
    let truncated: Vec<Option<Vec<usize>>> = sample
        .iter()
        .map(|r| (r.u > 0.0).then(|| (0..k).filter(|&j| sup[j].1 .0 > r.u).collect()))
        .collect();
    let mut p = vec![1.0 / k as f64; k];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut next = vec![0.0; k];
        let mut total = 0.0;
        for (i, set) in alpha.iter().enumerate() {
            let denom: f64 = set.iter().map(|&j| p[j]).sum();
            if denom > 0.0 {
                for &j in set {
                    next[j] += p[j] / denom;
                }
                total += 1.0;
            }
            if let Some(beyond) = &truncated[i] {
                // Ghost records for the mass the truncation hides.
                let seen: f64 = beyond.iter().map(|&j| p[j]).sum();
                if seen > 0.0 {
                    let mut hidden = vec![true; k];
                    beyond.iter().for_each(|&j| hidden[j] = false);
                    for j in 0..k {
                        if hidden[j] {
                            next[j] += p[j] / seen;
                            total += p[j] / seen;
                        }
                    }
                }
            }
        }
        if total > 0.0 {
            next.iter_mut().for_each(|x| *x /= total);
        }
        let change = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        p = next;
        if change < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("Turnbull EM did not converge in {max_iter} iterations");
    }
    Turnbull {
        support: sup.iter().map(|(l, r)| (l.0, r.0)).collect(),
        masses: p,
        iterations,
        converged,
    }
}

/// One row of residual plot data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotPoint {
    pub draw: usize,
    pub r: f64,
    pub cumhaz: f64,
}

/// `(r, Lambda_hat(r))` traces, one per residual sample.
pub fn residual_plot_data(samples: &[ResidualSample]) -> Vec<PlotPoint> {
    samples
        .iter()
        .flat_map(|s| {
            let tb = turnbull_npmle(&s.residuals);
            tb.cumhaz_points()
                .into_iter()
                .filter(|(r, h)| r.is_finite() && h.is_finite())
                .map(move |(r, h)| PlotPoint {
                    draw: s.draw,
                    r,
                    cumhaz: h,
                })
        })
        .collect()
}

/// Least-squares slope (with intercept) of `cumhaz` on `r`.
pub fn slope(points: &[PlotPoint]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.r).sum::<f64>() / n;
    let my = points.iter().map(|p| p.cumhaz).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.r - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.r - mx) * (p.cumhaz - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn km(times: &[(f64, bool)]) -> Vec<(f64, f64)> {
        // Direct Kaplan-Meier: (event time, S(t+)).
        let mut t = times.to_vec();
        t.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        let mut s = 1.0;
        let mut at_risk = t.len() as f64;
        let mut out = Vec::new();
        let mut i = 0;
        while i < t.len() {
            let v = t[i].0;
            let mut d = 0.0;
            let mut c = 0.0;
            while i < t.len() && t[i].0 == v {
                if t[i].1 {
                    d += 1.0
                } else {
                    c += 1.0
                }
                i += 1;
            }
            if d > 0.0 {
                s *= 1.0 - d / at_risk;
                out.push((v, s));
            }
            at_risk -= d + c;
        }
        out
    }

    #[test]
    fn exact_sample_is_empirical() {
        let tb = turnbull_npmle(&[Residual::exact(1.0), Residual::exact(2.0), Residual::exact(3.0)]);
        assert_eq!(tb.support, vec![(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]);
        for p in &tb.masses {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!((tb.survival(1.0) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn kaplan_meier_hand_example() {
        let tb = turnbull_npmle(&[Residual::exact(1.0), Residual::right(2.0), Residual::exact(3.0)]);
        assert_eq!(tb.support, vec![(1.0, 1.0), (3.0, 3.0)]);
        assert!((tb.masses[0] - 1.0 / 3.0).abs() < 1e-8);
        assert!((tb.masses[1] - 2.0 / 3.0).abs() < 1e-8);
        assert!((tb.survival(1.0) - 2.0 / 3.0).abs() < 1e-8);
        assert!((tb.survival(2.0) - 2.0 / 3.0).abs() < 1e-8);
        assert!(tb.survival(3.0).abs() < 1e-8);
    }

    #[test]
    fn two_adjacent_intervals_split_evenly() {
        let tb = turnbull_npmle(&[Residual::interval(0.0, 1.0), Residual::interval(1.0, 2.0)]);
        assert_eq!(tb.support, vec![(0.0, 1.0), (1.0, 2.0)]);
        assert!((tb.masses[0] - 0.5).abs() < 1e-12);
        assert!((tb.masses[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn reduces_to_kaplan_meier() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let n = rng.gen_range(5..40);
            let data: Vec<(f64, bool)> = (0..n)
                .map(|_| ((rng.gen_range(1..30) as f64) / 7.0, rng.gen_bool(0.7)))
                .collect();
            let sample: Vec<Residual> = data
                .iter()
                .map(|&(t, e)| if e { Residual::exact(t) } else { Residual::right(t) })
                .collect();
            let tb = turnbull_with(&sample, 100_000, 1e-13);
            for (t, s) in km(&data) {
                assert!((tb.survival(t) - s).abs() < 1e-8, "t = {t}: {} vs {s}", tb.survival(t));
            }
            assert!((tb.masses.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn exponential_sample_has_unit_slope() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let exp = rand_distr::Exp1;
        let res: Vec<Residual> = (0..10_000).map(|_| Residual::exact(rng.sample::<f64, _>(exp))).collect();
        let pts = residual_plot_data(&[ResidualSample { draw: 0, residuals: res }]);
        let s = slope(&pts).unwrap();
        assert!((0.95..=1.05).contains(&s), "slope {s}");
        assert!(residual_plot_data(&[]).is_empty());
    }

    #[test]
    fn truncation_removes_hidden_mass_bias() {
        // Exp(1) truncated at 1: observed values are 1 + Exp(1); conditioning
        // on T > 1 must give S(t)/S(1) = exp(-(t - 1)) beyond 1.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut sample = Vec::new();
        while sample.len() < 3000 {
            let t: f64 = rng.sample(rand_distr::Exp1);
            let u = 0.5;
            if t > u {
                sample.push(Residual { u, a: t, b: t });
            }
        }
        let tb = turnbull_npmle(&sample);
        let s1 = tb.survival(1.0);
        assert!((s1 / tb.survival(0.5) - (-0.5f64).exp()).abs() < 0.03);
    }
}
