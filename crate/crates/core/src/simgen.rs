//! Synthetic data: survival times from AFT / PH / PO models around a known
//! baseline, mixed right and inspection-interval censoring, ICAR / IID / GRF
//! frailty fields and the covariate designs of the simulation studies.

use nalgebra::Cholesky;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Exp, Poisson, StandardNormal, Uniform};

use crate::baseline::CenteringFamily;
use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::frailty::{correlation_matrix, Adjacency, NUGGET};
use crate::models::ModelKind;
use crate::numeric::{mean, normal_sf};
use crate::rng::{block_stream, stream, Stream, StreamRng};

/// Edge list of the bundled 37-region adjacency (hexagonal board of radius 3).
pub const HEX37_ADJACENCY: &str = include_str!("../data/hex37.adj");

/// Neighbour lists of the hexagonal board with `radius` rings around a
/// centre cell. Cells are numbered in axial `(q, r)` order.
pub fn hex_board(radius: i32) -> Vec<Vec<usize>> {
    let cells: Vec<(i32, i32)> = (-radius..=radius)
        .flat_map(|q| (-radius..=radius).map(move |r| (q, r)))
        .filter(|(q, r)| (q + r).abs() <= radius)
        .collect();
    let dirs = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)];
    cells
        .iter()
        .map(|&(q, r)| {
            let mut nb: Vec<usize> = dirs
                .iter()
                .filter_map(|(dq, dr)| cells.iter().position(|&c| c == (q + dq, r + dr)))
                .collect();
            nb.sort_unstable();
            nb
        })
        .collect()
}

/// The bundled 37-region adjacency.
pub fn hex37() -> Adjacency {
    let ids: Vec<String> = (1..=37).map(|k| k.to_string()).collect();
    let nb = crate::data::parse_adjacency(HEX37_ADJACENCY, &ids).expect("bundled adjacency parses");
    Adjacency::new(nb).expect("bundled adjacency is valid")
}

/// True baseline survival.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineTruth {
    /// `1 - 0.5 [Phi(2(log t + 1)) + Phi(2(log t - 1))]`, an equal mixture
    /// of lognormals at `log t = -1` and `1` with sd 0.5.
    Bimodal,
    Parametric(CenteringFamily),
}

impl BaselineTruth {
    pub fn s0(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        match self {
            BaselineTruth::Bimodal => {
                let lt = t.ln();
                0.5 * (normal_sf(2.0 * (lt + 1.0)) + normal_sf(2.0 * (lt - 1.0)))
            }
            BaselineTruth::Parametric(c) => c.survival(t),
        }
    }
}

/// `S_x(t)` for the true baseline.
pub fn true_survival(model: ModelKind, truth: &BaselineTruth, t: f64, eta: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let k = eta.exp();
    match model {
        ModelKind::Aft => truth.s0(k * t),
        ModelKind::Ph => (k * truth.s0(t).ln()).exp(),
        ModelKind::Po => {
            let s0 = truth.s0(t);
            s0 / (k * (1.0 - s0) + s0)
        }
    }
}

/// Solves `F_x(t) = u` by geometric bracket expansion from `[1e-10, 1e3]`
/// followed by bisection on `log t`.
pub fn sample_survival_time(model: ModelKind, eta: f64, truth: &BaselineTruth, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("uniform draw {u} outside (0, 1)")));
    }
    let target = 1.0 - u;
    let above = |t: f64| true_survival(model, truth, t, eta) > target;
    let (mut lo, mut hi) = (1e-10f64, 1e3f64);
    while !above(lo) {
        lo /= 10.0;
        if lo < 1e-300 {
            return Err(Error::Bracket(u));
        }
    }
    while above(hi) {
        hi *= 10.0;
        if hi > 1e300 {
            return Err(Error::Bracket(u));
        }
    }
    for _ in 0..400 {
        if hi / lo - 1.0 < 1e-13 {
            break;
        }
        let mid = (lo * hi).sqrt();
        if above(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Half the records are right-censored at `Uniform(right_lo, right_hi)`
/// (exact when the event comes first); the rest are inspected at
/// cumulative `Exp(gap_rate)` gaps, `1 + Poisson(inspections_mean)` times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CensoringScheme {
    pub right_fraction: f64,
    pub right_lo: f64,
    pub right_hi: f64,
    pub inspections_mean: f64,
    pub gap_rate: f64,
}

impl Default for CensoringScheme {
    fn default() -> Self {
        CensoringScheme {
            right_fraction: 0.5,
            right_lo: 2.0,
            right_hi: 6.0,
            inspections_mean: 2.0,
            gap_rate: 1.0,
        }
    }
}

/// Observation intervals `(a, b)` for true times `times`.
pub fn apply_censoring(times: &[f64], scheme: &CensoringScheme, rng: &mut StreamRng) -> Vec<(f64, f64)> {
    let n = times.len();
    let n_right = (scheme.right_fraction * n as f64).floor() as usize;
    let mut right = vec![false; n];
    for i in sample_indices(rng, n, n_right) {
        right[i] = true;
    }
    let cens = Uniform::new(scheme.right_lo, scheme.right_hi);
    let pois = Poisson::new(scheme.inspections_mean).expect("positive Poisson mean");
    let gap = Exp::new(scheme.gap_rate).expect("positive rate");
    let mut out = Vec::with_capacity(n);
    for (i, &t) in times.iter().enumerate() {
        if right[i] {
            let c = cens.sample(rng);
            out.push(if t <= c { (t, t) } else { (c, f64::INFINITY) });
        } else {
            let k = 1 + pois.sample(rng) as usize;
            let mut visits = Vec::with_capacity(k);
            let mut acc = 0.0;
            for _ in 0..k {
                acc += gap.sample(rng);
                visits.push(acc);
            }
            let before = visits.iter().filter(|&&o| o < t).count();
            out.push(if before == 0 {
                (0.0, visits[0])
            } else if before == k {
                (visits[k - 1], f64::INFINITY)
            } else {
                (visits[before - 1], visits[before])
            });
        }
    }
    out
}

/// Frailty field used to generate data.
#[derive(Debug, Clone)]
pub enum FrailtyTruth {
    None,
    Iid { m: usize, tau2: f64 },
    Icar { adjacency: Adjacency, tau2: f64 },
    Grf { coords: Vec<[f64; 2]>, tau2: f64, phi: f64, nu: f64 },
}

impl FrailtyTruth {
    pub fn m(&self) -> usize {
        match self {
            FrailtyTruth::None => 1,
            FrailtyTruth::Iid { m, .. } => *m,
            FrailtyTruth::Icar { adjacency, .. } => adjacency.m(),
            FrailtyTruth::Grf { coords, .. } => coords.len(),
        }
    }
}

fn std_normals(n: usize, rng: &mut StreamRng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// ICAR: `N(0, tau2 (F_e - E + 1e-10 I)^{-1})`, then centered. GRF:
/// `N(0, tau2 R)`.
pub fn gen_frailty_truth(spec: &FrailtyTruth, rng: &mut StreamRng) -> Result<Vec<f64>> {
    match spec {
        FrailtyTruth::None => Ok(vec![0.0]),
        FrailtyTruth::Iid { m, tau2 } => Ok(std_normals(*m, rng).iter().map(|e| e * tau2.sqrt()).collect()),
        FrailtyTruth::Icar { adjacency, tau2 } => {
            let m = adjacency.m();
            let mut q = adjacency.precision_matrix();
            for i in 0..m {
                q[(i, i)] += 1e-10;
            }
            // x = L'^{-1} e has covariance Q^{-1} when Q = L L'.
            let chol = Cholesky::new(q).ok_or_else(|| Error::NotPositiveDefinite("ICAR precision".into()))?;
            let e = nalgebra::DVector::from_vec(std_normals(m, rng));
            let x = chol
                .l()
                .transpose()
                .solve_upper_triangular(&e)
                .ok_or_else(|| Error::NotPositiveDefinite("ICAR precision".into()))?;
            let mut v: Vec<f64> = x.iter().map(|a| a * tau2.sqrt()).collect();
            let c = mean(&v);
            v.iter_mut().for_each(|a| *a -= c);
            Ok(v)
        }
        FrailtyTruth::Grf { coords, tau2, phi, nu } => {
            let mut r = correlation_matrix(coords, *phi, *nu);
            for i in 0..coords.len() {
                r[(i, i)] += NUGGET;
            }
            let chol = Cholesky::new(r).ok_or_else(|| Error::NotPositiveDefinite("GRF correlation".into()))?;
            let v = crate::numeric::lower_times(&chol.l(), &std_normals(coords.len(), rng));
            Ok(v.iter().map(|a| a * tau2.sqrt()).collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateDesign {
    /// `x1 ~ Bernoulli(0.5)`, `x2 ~ N(0, 1)`.
    Basic,
    /// `x1 ~ Bernoulli(0.5)`, `x2..x5 ~ N(0, 1)`.
    Selection5,
    /// As `Selection5` but `x3 = x2 + 0.15 z`.
    Selection5Collinear,
    /// Ten covariates `x_k | z ~ N(z, 1)` with a shared `z ~ N(0, 1)`.
    Selection10,
}

impl CovariateDesign {
    pub fn p(self) -> usize {
        match self {
            CovariateDesign::Basic => 2,
            CovariateDesign::Selection5 | CovariateDesign::Selection5Collinear => 5,
            CovariateDesign::Selection10 => 10,
        }
    }

    pub fn names(self) -> Vec<String> {
        (1..=self.p()).map(|k| format!("x{k}")).collect()
    }
}

/// Rows of covariates, one per record.
pub fn gen_covariates(design: CovariateDesign, n: usize, rng: &mut StreamRng) -> Vec<Vec<f64>> {
    let coin = Bernoulli::new(0.5).expect("valid probability");
    (0..n)
        .map(|_| match design {
            CovariateDesign::Basic => {
                let x1 = if coin.sample(rng) { 1.0 } else { 0.0 };
                vec![x1, rng.sample(StandardNormal)]
            }
            CovariateDesign::Selection5 | CovariateDesign::Selection5Collinear => {
                let x1 = if coin.sample(rng) { 1.0 } else { 0.0 };
                let mut x = vec![x1];
                x.extend(std_normals(4, rng));
                if design == CovariateDesign::Selection5Collinear {
                    let z: f64 = rng.sample(StandardNormal);
                    x[2] = x[1] + 0.15 * z;
                }
                x
            }
            CovariateDesign::Selection10 => {
                let z: f64 = rng.sample(StandardNormal);
                std_normals(10, rng).iter().map(|e| z + e).collect()
            }
        })
        .collect()
}

/// A complete data-generating design.
#[derive(Debug, Clone)]
pub struct SimDesign {
    pub model: ModelKind,
    pub beta: Vec<f64>,
    pub baseline: BaselineTruth,
    pub frailty: FrailtyTruth,
    pub censoring: CensoringScheme,
    pub covariates: CovariateDesign,
    pub per_site: usize,
}

impl SimDesign {
    /// 37 ICAR regions x 20 records, `beta = (1, 1)`, bimodal baseline.
    pub fn icar_design(model: ModelKind) -> Self {
        SimDesign {
            model,
            beta: vec![1.0, 1.0],
            baseline: BaselineTruth::Bimodal,
            frailty: FrailtyTruth::Icar {
                adjacency: hex37(),
                tau2: 1.0,
            },
            censoring: CensoringScheme::default(),
            covariates: CovariateDesign::Basic,
            per_site: 20,
        }
    }

    /// Variable-selection examples under PH: `beta = (1, 1, 0, 0, 0)` for
    /// examples 1 and 2, five ones then five zeros for example 3.
    pub fn selection_example(design: CovariateDesign) -> Self {
        let beta = match design {
            CovariateDesign::Selection10 => [vec![1.0; 5], vec![0.0; 5]].concat(),
            CovariateDesign::Basic => vec![1.0, 1.0],
            _ => vec![1.0, 1.0, 0.0, 0.0, 0.0],
        };
        SimDesign {
            beta,
            covariates: design,
            ..SimDesign::icar_design(ModelKind::Ph)
        }
    }

    /// 150 GRF sites drawn uniformly on `[0, 10]^2` with 5 records each
    /// (`tau2 = phi = nu = 1`). The sites are drawn from `seed`.
    pub fn grf_design(model: ModelKind, seed: u64) -> Self {
        let mut rng = block_stream(seed, Stream::Simulation);
        let unif = Uniform::new(0.0, 10.0);
        let coords = (0..150).map(|_| [unif.sample(&mut rng), unif.sample(&mut rng)]).collect();
        SimDesign {
            frailty: FrailtyTruth::Grf {
                coords,
                tau2: 1.0,
                phi: 1.0,
                nu: 1.0,
            },
            per_site: 5,
            ..SimDesign::icar_design(model)
        }
    }

    pub fn n(&self) -> usize {
        self.frailty.m() * self.per_site
    }
}

/// A generated dataset together with its latent truth.
#[derive(Debug, Clone)]
pub struct SimData {
    pub dataset: Dataset,
    pub times: Vec<f64>,
    pub frailties: Vec<f64>,
}

/// Generates one dataset; fully determined by `(design, seed)`.
pub fn generate(design: &SimDesign, seed: u64) -> Result<SimData> {
    if design.beta.len() != design.covariates.p() {
        return Err(Error::Config(format!(
            "beta has {} entries but the covariate design has {}",
            design.beta.len(),
            design.covariates.p()
        )));
    }
    // Stream 0 is used by `grf_design` for the site layout.
    let mut rng = stream(seed, Stream::Simulation as u64 + 1);
    let m = design.frailty.m();
    let n = design.n();
    let x = gen_covariates(design.covariates, n, &mut rng);
    let v = gen_frailty_truth(&design.frailty, &mut rng)?;
    let mut times = Vec::with_capacity(n);
    for (i, xi) in x.iter().enumerate() {
        let eta = crate::models::linear_predictor(xi, &design.beta) + v[i / design.per_site];
        let u: f64 = loop {
            let u: f64 = rng.gen();
            if u > 0.0 {
                break u;
            }
        };
        times.push(sample_survival_time(design.model, eta, &design.baseline, u)?);
    }
    let intervals = apply_censoring(&times, &design.censoring, &mut rng);
    let obs = intervals
        .iter()
        .zip(x)
        .enumerate()
        .map(|(i, (&(a, b), xi))| Observation::new(0.0, a, b, xi, i / design.per_site))
        .collect::<Result<Vec<_>>>()?;
    let mut dataset = Dataset::new(obs, design.covariates.names(), m)?;
    if let FrailtyTruth::Grf { coords, .. } = &design.frailty {
        dataset = dataset.with_coords(coords.clone())?;
    }
    Ok(SimData {
        dataset,
        times,
        frailties: if matches!(design.frailty, FrailtyTruth::None) { Vec::new() } else { v },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CensoringKind;

    #[test]
    fn bundled_adjacency_matches_generator() {
        let a = hex37();
        let b = hex_board(3);
        assert_eq!(b.len(), 37);
        for i in 0..37 {
            assert_eq!(a.neighbors(i), b[i].as_slice());
        }
        let degrees: Vec<usize> = (0..37).map(|i| a.degree(i)).collect();
        assert_eq!(degrees.iter().sum::<usize>(), 180);
        assert_eq!(*degrees.iter().min().unwrap(), 3);
    }

    #[test]
    fn median_of_symmetric_mixture() {
        // The bimodal truth is symmetric in log t about 0, so its median is 1.
        let t = sample_survival_time(ModelKind::Ph, 0.0, &BaselineTruth::Bimodal, 0.5).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
        assert!((BaselineTruth::Bimodal.s0(t) - 0.5).abs() < 1e-13);
    }

    #[test]
    fn sampled_times_invert_the_cdf() {
        let mut rng = stream(5, 0);
        for k in 0..1000 {
            let model = ModelKind::ALL[k % 3];
            let u: f64 = rng.gen_range(1e-6..1.0 - 1e-6);
            let eta: f64 = rng.gen_range(-3.0..3.0);
            let t = sample_survival_time(model, eta, &BaselineTruth::Bimodal, u).unwrap();
            let f = 1.0 - true_survival(model, &BaselineTruth::Bimodal, t, eta);
            assert!((f - u).abs() < 1e-10, "{model} u = {u} eta = {eta}");
        }
    }

    #[test]
    fn censoring_rules() {
        let mut rng = stream(9, 0);
        let s = CensoringScheme {
            right_fraction: 1.0,
            ..CensoringScheme::default()
        };
        let out = apply_censoring(&[0.5, 100.0], &s, &mut rng);
        assert_eq!(out[0], (0.5, 0.5));
        assert!(out[1].1.is_infinite() && (2.0..6.0).contains(&out[1].0));
        let s = CensoringScheme {
            right_fraction: 0.0,
            ..CensoringScheme::default()
        };
        let out = apply_censoring(&[1e-9], &s, &mut rng);
        assert_eq!(out[0].0, 0.0);
        assert!(out[0].1 > 1e-9);
    }

    #[test]
    fn icar_truth_is_centered() {
        let mut rng = stream(1, 0);
        let v = gen_frailty_truth(
            &FrailtyTruth::Icar {
                adjacency: hex37(),
                tau2: 1.0,
            },
            &mut rng,
        )
        .unwrap();
        assert_eq!(v.len(), 37);
        assert!(mean(&v).abs() < 1e-12);
    }

    #[test]
    fn generation_is_deterministic_and_composition_plausible() {
        let d = SimDesign::icar_design(ModelKind::Aft);
        let a = generate(&d, 42).unwrap();
        let b = generate(&d, 42).unwrap();
        assert_eq!(a.times, b.times);
        assert_eq!(a.dataset.n(), 740);
        let kinds: Vec<CensoringKind> = a.dataset.observations().iter().map(|o| o.kind()).collect();
        let frac = |k: CensoringKind| kinds.iter().filter(|&&x| x == k).count() as f64 / 740.0;
        assert!(frac(CensoringKind::Exact) > 0.25);
        assert!(frac(CensoringKind::Left) > 0.1);
    }
}
