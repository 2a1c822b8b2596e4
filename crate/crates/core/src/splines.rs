//! Cubic B-spline terms for partially linear predictors.
//!
//! A term with `K` coefficients uses a clamped cubic basis with `K + 2`
//! functions on `[min, max]` of the observed covariate (so `K - 2` interior
//! knots at equispaced quantiles of the distinct values). The first and last
//! functions are dropped and the remaining columns are centered over the
//! data, since the linear term and the intercept are already in the model.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numeric::{normal_quantile, quantile_sorted};

pub const DEFAULT_BASIS: usize = 5;
const DEGREE: usize = 3;

/// `[log 10 / Phi^{-1}(0.9)]^2 / k`, the g-prior scale used for spline
/// coefficients (and, with `k = p`, for selection priors).
pub fn g_scale(k: usize) -> f64 {
    g_scale_with(10.0, 0.9, k)
}

pub fn g_scale_with(big_m: f64, q: f64, k: usize) -> f64 {
    (big_m.ln() / normal_quantile(q)).powi(2) / k as f64
}

#[derive(Debug, Clone)]
pub struct SplineTerm {
    pub covariate: usize,
    knots: Vec<f64>,
    means: Vec<f64>,
    design: DMatrix<f64>,
    pub g: f64,
}

impl SplineTerm {
    /// Builds the centered basis for covariate column `covariate` with
    /// observed `values` and `k` retained functions.
    pub fn build(covariate: usize, values: &[f64], k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("spline basis size {k} must be at least 2")));
        }
        let mut distinct: Vec<f64> = values.to_vec();
        if distinct.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite spline covariate".into()));
        }
        distinct.sort_by(|a, b| a.total_cmp(b));
        distinct.dedup();
        if distinct.len() < k + 5 {
            return Err(Error::TooFewDistinct {
                needed: k + 5,
                found: distinct.len(),
            });
        }
        let lo = distinct[0];
        let hi = distinct[distinct.len() - 1];
        let n_inner = k - 2;
        let mut knots = vec![lo; DEGREE + 1];
        for j in 1..=n_inner {
            knots.push(quantile_sorted(&distinct, j as f64 / (n_inner + 1) as f64));
        }
        knots.extend(std::iter::repeat(hi).take(DEGREE + 1));
        if knots.windows(2).any(|w| w[1] < w[0])
            || knots[DEGREE..knots.len() - DEGREE].windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::TooFewDistinct {
                needed: k + 5,
                found: distinct.len(),
            });
        }
        let mut term = SplineTerm {
            covariate,
            knots,
            means: vec![0.0; k],
            design: DMatrix::zeros(0, 0),
            g: g_scale(k),
        };
        let n = values.len();
        let mut raw = DMatrix::zeros(n, k);
        for (i, &x) in values.iter().enumerate() {
            let b = term.raw_basis(x);
            for c in 0..k {
                raw[(i, c)] = b[c + 1];
            }
        }
        let means: Vec<f64> = (0..k).map(|c| raw.column(c).mean()).collect();
        for c in 0..k {
            for i in 0..n {
                raw[(i, c)] -= means[c];
            }
        }
        term.means = means;
        term.design = raw;
        Ok(term)
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn range(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// Centered design matrix (n x K).
    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    /// All `K + 2` raw basis values at `x` (clamped into the knot range).
    pub fn raw_basis(&self, x: f64) -> Vec<f64> {
        let (lo, hi) = self.range();
        let x = if x < lo || x > hi {
            log::warn!("spline argument {x} outside [{lo}, {hi}]; clamped");
            x.clamp(lo, hi)
        } else {
            x
        };
        let t = &self.knots;
        let nb = t.len() - DEGREE - 1;
        // Span mu with t[mu] <= x < t[mu + 1]; the right end uses the last
        // non-empty span.
        let mut mu = DEGREE;
        while mu < nb - 1 && x >= t[mu + 1] {
            mu += 1;
        }
        let mut n = [0.0f64; DEGREE + 1];
        let mut left = [0.0f64; DEGREE + 1];
        let mut right = [0.0f64; DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = x - t[mu + 1 - j];
            right[j] = t[mu + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        let mut out = vec![0.0; nb];
        for (r, v) in n.iter().enumerate() {
            out[mu - DEGREE + r] = *v;
        }
        out
    }

    /// Centered retained basis at `x`.
    pub fn basis_row(&self, x: f64) -> Vec<f64> {
        let raw = self.raw_basis(x);
        (0..self.k()).map(|c| raw[c + 1] - self.means[c]).collect()
    }

    /// `u(x) = sum_k xi_k B_k(x)` with centered basis functions.
    pub fn eval(&self, x: f64, xi: &[f64]) -> f64 {
        self.basis_row(x).iter().zip(xi).map(|(b, c)| b * c).sum()
    }

    /// `g n (X'X)^{-1}`, the prior covariance of the coefficients.
    pub fn prior_covariance(&self) -> Result<DMatrix<f64>> {
        let n = self.design.nrows() as f64;
        let xtx = self.design.transpose() * &self.design;
        let inv = xtx
            .try_inverse()
            .ok_or_else(|| Error::NotPositiveDefinite("spline design X'X".into()))?;
        let cov = inv * (self.g * n);
        Ok((&cov + cov.transpose()) * 0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn values(n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i * 37 % 101) as f64 / 10.0).powf(1.3)).collect()
    }

    /// Independent oracle: build every basis function as explicit cubic
    /// polynomials per knot span through the recursion on coefficients.
    fn poly_basis(knots: &[f64], x: f64) -> Vec<f64> {
        type Poly = [f64; 4];
        let mul_lin = |p: &Poly, a: f64, b: f64| -> Poly {
            // (a + b x) p(x)
            let mut out = [0.0; 4];
            for d in 0..4 {
                out[d] += a * p[d];
                if d + 1 < 4 {
                    out[d + 1] += b * p[d];
                }
            }
            out
        };
        let nk = knots.len();
        let span = (0..nk - 1)
            .filter(|&s| knots[s] < knots[s + 1] && x >= knots[s] && x <= knots[s + 1])
            .last()
            .unwrap();
        let mut level: Vec<Poly> = (0..nk - 1)
            .map(|i| if i == span { [1.0, 0.0, 0.0, 0.0] } else { [0.0; 4] })
            .collect();
        for d in 1..=3 {
            let mut next = Vec::new();
            for i in 0..nk - 1 - d {
                let mut acc = [0.0; 4];
                let den1 = knots[i + d] - knots[i];
                if den1 > 0.0 {
                    let p = mul_lin(&level[i], -knots[i] / den1, 1.0 / den1);
                    (0..4).for_each(|c| acc[c] += p[c]);
                }
                let den2 = knots[i + d + 1] - knots[i + 1];
                if den2 > 0.0 {
                    let p = mul_lin(&level[i + 1], knots[i + d + 1] / den2, -1.0 / den2);
                    (0..4).for_each(|c| acc[c] += p[c]);
                }
                next.push(acc);
            }
            level = next;
        }
        level
            .iter()
            .map(|p| ((p[3] * x + p[2]) * x + p[1]) * x + p[0])
            .collect()
    }

    #[test]
    fn g_scale_value() {
        assert!((g_scale(5) - 0.645_62).abs() < 1e-4);
        let expected = (10f64.ln() / 1.281_551_565_544_600_5).powi(2) / 5.0;
        assert!((g_scale(5) - expected).abs() < 1e-12);
    }

    #[test]
    fn raw_basis_is_partition_of_unity() {
        let v = values(200);
        let t = SplineTerm::build(0, &v, 5).unwrap();
        assert_eq!(t.raw_basis(3.0).len(), 7);
        let (lo, hi) = t.range();
        for i in 0..=100 {
            let x = lo + (hi - lo) * i as f64 / 100.0;
            let s: f64 = t.raw_basis(x).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn de_boor_matches_polynomial_oracle() {
        let v = values(200);
        let t = SplineTerm::build(0, &v, 6).unwrap();
        let (lo, hi) = t.range();
        for i in 0..100 {
            let x = lo + (hi - lo) * ((i as f64 * 0.754_877_666).fract());
            let a = t.raw_basis(x);
            let b = poly_basis(t.knots(), x);
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() < 1e-12, "x = {x}");
            }
        }
    }

    #[test]
    fn design_columns_centered_and_eval_consistent() {
        let v = values(150);
        let t = SplineTerm::build(0, &v, 5).unwrap();
        for c in 0..5 {
            assert!(t.design().column(c).sum().abs() < 1e-10);
        }
        let xi = [0.3, -1.2, 0.5, 2.0, -0.7];
        for (i, &x) in v.iter().enumerate().take(30) {
            let direct = t.eval(x, &xi);
            let row: f64 = (0..5).map(|c| t.design()[(i, c)] * xi[c]).sum();
            assert!((direct - row).abs() < 1e-12);
        }
        assert_eq!(t.eval(v[0], &[0.0; 5]), 0.0);
        assert!((t.eval(v[3], &[1.0, 0.0, 0.0, 0.0, 0.0]) - t.design()[(3, 0)]).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_is_clamped() {
        let v = values(100);
        let t = SplineTerm::build(0, &v, 4).unwrap();
        let (lo, hi) = t.range();
        assert_eq!(t.raw_basis(lo - 5.0), t.raw_basis(lo));
        assert_eq!(t.raw_basis(hi + 5.0), t.raw_basis(hi));
    }

    #[test]
    fn too_few_values() {
        assert!(matches!(
            SplineTerm::build(0, &[1.0, 2.0, 3.0, 1.0], 5),
            Err(Error::TooFewDistinct { .. })
        ));
        assert!(SplineTerm::build(0, &values(50), 1).is_err());
    }

    #[test]
    fn prior_covariance_is_symmetric_pd() {
        let t = SplineTerm::build(0, &values(200), 5).unwrap();
        let c = t.prior_covariance().unwrap();
        assert!((&c - c.transpose()).amax() < 1e-12);
        assert!(nalgebra::Cholesky::new(c).is_some());
    }
}
