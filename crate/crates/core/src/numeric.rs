//! Small numerical helpers shared across modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use libm::erfc;
use statrs::function::erf::erfc_inv;

pub use statrs::function::gamma::ln_gamma;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - 0.5 * LN_2PI).exp()
}

/// Standard normal quantile function, polished with two Newton steps.
pub fn normal_quantile(p: f64) -> f64 {
    let mut x = -SQRT_2 * erfc_inv(2.0 * p);
    if x.is_finite() {
        for _ in 0..2 {
            let dens = normal_pdf(x);
            if dens > 0.0 {
                x -= (normal_cdf(x) - p) / dens;
            }
        }
    }
    x
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Pairwise summation with a fixed split order, so the result only depends
/// on the input order and never on how work was scheduled.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BASE: usize = 32;
    if xs.len() <= BASE {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Type-7 (linear interpolation) sample quantile.
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, p)
}

pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sample mean vector and unbiased covariance matrix of row vectors.
pub fn mean_and_cov(rows: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let d = rows.first().map_or(0, Vec::len);
    let n = rows.len();
    let mut m = DVector::zeros(d);
    for r in rows {
        for (k, x) in r.iter().enumerate() {
            m[k] += x;
        }
    }
    if n > 0 {
        m /= n as f64;
    }
    let mut c = DMatrix::zeros(d, d);
    if n > 1 {
        for r in rows {
            for a in 0..d {
                let da = r[a] - m[a];
                for b in 0..=a {
                    c[(a, b)] += da * (r[b] - m[b]);
                }
            }
        }
        c /= (n - 1) as f64;
        for a in 0..d {
            for b in 0..a {
                c[(b, a)] = c[(a, b)];
            }
        }
    }
    (m, c)
}

/// Cholesky factorization, retrying with a growing diagonal ridge. Returns
/// the factor and the ridge that was needed (0 when none).
pub fn cholesky_with_ridge(a: &DMatrix<f64>, first_ridge: f64) -> Option<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Some((c, 0.0));
    }
    let scale = (0..a.nrows()).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let mut ridge = first_ridge * scale;
    for _ in 0..20 {
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += ridge;
        }
        if let Some(c) = Cholesky::new(b) {
            return Some((c, ridge));
        }
        ridge *= 10.0;
    }
    None
}

/// log N_d(x; mean, cov). Adds a 1e-10 ridge when `cov` is numerically
/// singular and reports whether it did.
pub fn mvn_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Option<(f64, bool)> {
    let d = x.len();
    let (chol, ridge) = cholesky_with_ridge(cov, 1e-10)?;
    let diff = x - mean;
    let sol = chol.l().solve_lower_triangular(&diff)?;
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let val = -0.5 * (d as f64 * LN_2PI + logdet + sol.norm_squared());
    Some((val, ridge > 0.0))
}

/// Lower-triangular matrix times a standard normal vector, i.e. a draw from
/// N(0, L L').
pub fn lower_times(l: &DMatrix<f64>, z: &[f64]) -> Vec<f64> {
    let d = z.len();
    (0..d)
        .map(|i| (0..=i).map(|j| l[(i, j)] * z[j]).sum())
        .collect()
}
