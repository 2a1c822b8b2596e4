//! Frailty priors: IID, ICAR over an adjacency graph, and Gaussian random
//! fields with powered-exponential correlation, optionally replaced by the
//! full-scale approximation (reduced-rank knots plus block-diagonal residual).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Nugget added to every GRF correlation matrix.
pub const NUGGET: f64 = 1e-10;

/// Correlation at which the prior mode of the range parameter is anchored.
pub const PHI0_CORRELATION: f64 = 0.001;

/// `exp(-(phi d)^nu)`.
pub fn powexp_corr(d: f64, phi: f64, nu: f64) -> f64 {
    if d == 0.0 {
        return 1.0;
    }
    (-(phi * d).powf(nu)).exp()
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn max_distance(coords: &[[f64; 2]]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..coords.len() {
        for j in 0..i {
            best = best.max(distance(coords[i], coords[j]));
        }
    }
    best
}

/// Range giving correlation 0.001 at distance `d_max`.
pub fn solve_phi0(d_max: f64, nu: f64) -> f64 {
    (-PHI0_CORRELATION.ln()).powf(1.0 / nu) / d_max
}

fn check_nu(nu: f64) -> Result<()> {
    if !(nu > 0.0 && nu <= 2.0) {
        return Err(Error::Frailty(format!("shape nu = {nu} outside (0, 2]")));
    }
    Ok(())
}

/// Neighbour lists of a connected, symmetric adjacency graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn new(mut neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let m = neighbors.len();
        for (i, nb) in neighbors.iter_mut().enumerate() {
            nb.sort_unstable();
            nb.dedup();
            if nb.is_empty() {
                return Err(Error::Frailty(format!("region {} has no neighbours", i + 1)));
            }
            if nb.contains(&i) {
                return Err(Error::Frailty(format!("region {} is its own neighbour", i + 1)));
            }
            if nb.iter().any(|&j| j >= m) {
                return Err(Error::Frailty(format!("region {} has an out-of-range neighbour", i + 1)));
            }
        }
        for i in 0..m {
            for &j in &neighbors[i] {
                if neighbors[j].binary_search(&i).is_err() {
                    return Err(Error::Frailty(format!(
                        "adjacency is not symmetric between regions {} and {}",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        let adj = Adjacency { neighbors };
        let comps = adj.components();
        if comps > 1 {
            return Err(Error::Frailty(format!(
                "adjacency graph has {comps} connected components; ICAR needs a connected graph"
            )));
        }
        Ok(adj)
    }

    /// Builds from a dense 0/1 matrix.
    pub fn from_matrix(e: &DMatrix<f64>) -> Result<Self> {
        let m = e.nrows();
        let nb = (0..m)
            .map(|i| (0..m).filter(|&j| e[(i, j)] != 0.0).collect())
            .collect();
        Self::new(nb)
    }

    fn components(&self) -> usize {
        let m = self.neighbors.len();
        let mut seen = vec![false; m];
        let mut count = 0;
        for start in 0..m {
            if seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                for &j in &self.neighbors[i] {
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        count
    }

    pub fn m(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// `C = F_e - E`.
    pub fn precision_matrix(&self) -> DMatrix<f64> {
        let m = self.m();
        let mut c = DMatrix::zeros(m, m);
        for i in 0..m {
            c[(i, i)] = self.degree(i) as f64;
            for &j in &self.neighbors[i] {
                c[(i, j)] = -1.0;
            }
        }
        c
    }

    /// `v'(F_e - E)v = sum over edges of (v_i - v_j)^2`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.m() {
            for &j in &self.neighbors[i] {
                if j > i {
                    s += (v[i] - v[j]).powi(2);
                }
            }
        }
        s
    }
}

/// Greedy maximin selection of `count` sites, refined by swaps that strictly
/// reduce the covering radius `max_i min_k |s_i - knot_k|`.
pub fn select_knots(coords: &[[f64; 2]], count: usize) -> Result<Vec<usize>> {
    let m = coords.len();
    if count == 0 || count > m {
        return Err(Error::Frailty(format!("knot count {count} outside 1..={m}")));
    }
    if count == m {
        return Ok((0..m).collect());
    }
    let cx = coords.iter().map(|c| c[0]).sum::<f64>() / m as f64;
    let cy = coords.iter().map(|c| c[1]).sum::<f64>() / m as f64;
    let mut first = 0;
    let mut best = -1.0;
    for (i, c) in coords.iter().enumerate() {
        let d = distance(*c, [cx, cy]);
        if d > best {
            best = d;
            first = i;
        }
    }
    let mut chosen = vec![first];
    let mut near: Vec<f64> = coords.iter().map(|c| distance(*c, coords[first])).collect();
    while chosen.len() < count {
        let mut pick = 0;
        let mut far = -1.0;
        for (i, &d) in near.iter().enumerate() {
            if d > far {
                far = d;
                pick = i;
            }
        }
        chosen.push(pick);
        for (i, d) in near.iter_mut().enumerate() {
            *d = d.min(distance(coords[i], coords[pick]));
        }
    }
    if m * count <= 20_000 {
        swap_refine(coords, &mut chosen, 3);
    }
    Ok(chosen)
}

fn covering_radius(coords: &[[f64; 2]], knots: &[usize]) -> f64 {
    coords
        .iter()
        .map(|c| {
            knots
                .iter()
                .map(|&k| distance(*c, coords[k]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

fn swap_refine(coords: &[[f64; 2]], knots: &mut [usize], passes: usize) {
    let m = coords.len();
    let mut current = covering_radius(coords, knots);
    for _ in 0..passes {
        let mut improved = false;
        for slot in 0..knots.len() {
            for cand in 0..m {
                if knots.contains(&cand) {
                    continue;
                }
                let old = knots[slot];
                knots[slot] = cand;
                let r = covering_radius(coords, knots);
                if r < current - 1e-12 {
                    current = r;
                    improved = true;
                } else {
                    knots[slot] = old;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// Partition of the sites into `count` blocks: block centres come from
/// [`select_knots`] and every site joins its nearest centre.
pub fn assign_blocks(coords: &[[f64; 2]], count: usize) -> Result<Vec<usize>> {
    let centers = select_knots(coords, count)?;
    Ok(coords
        .iter()
        .map(|c| {
            let mut best = 0;
            let mut bd = f64::INFINITY;
            for (b, &k) in centers.iter().enumerate() {
                let d = distance(*c, coords[k]);
                if d < bd {
                    bd = d;
                    best = b;
                }
            }
            best
        })
        .collect())
}

/// Knots and blocks of a full-scale approximation, fixed for a whole run.
#[derive(Debug, Clone, PartialEq)]
pub struct FsaDesign {
    pub knots: Vec<usize>,
    pub blocks: Vec<usize>,
    pub n_blocks: usize,
}

impl FsaDesign {
    pub fn new(coords: &[[f64; 2]], knots: usize, blocks: usize) -> Result<Self> {
        Ok(FsaDesign {
            knots: select_knots(coords, knots)?,
            blocks: assign_blocks(coords, blocks)?,
            n_blocks: blocks,
        })
    }

    fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_blocks];
        for (i, &b) in self.blocks.iter().enumerate() {
            out[b].push(i);
        }
        out.retain(|v| !v.is_empty());
        out
    }
}

/// `R = (1 - eps) rho + eps I`.
pub fn correlation_matrix(coords: &[[f64; 2]], phi: f64, nu: f64) -> DMatrix<f64> {
    let m = coords.len();
    DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            1.0
        } else {
            (1.0 - NUGGET) * powexp_corr(distance(coords[i], coords[j]), phi, nu)
        }
    })
}

fn chol_logdet(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Factorized full-scale approximation `R = (1-eps) U rho_AA^{-1} U' + R_s`
/// with `U = rho_mA` and block-diagonal `R_s`.
#[derive(Debug, Clone)]
pub struct FsaMatrix {
    m: usize,
    u: DMatrix<f64>,
    g: DMatrix<f64>,
    blocks: Vec<Vec<usize>>,
    block_rs: Vec<DMatrix<f64>>,
    block_chol: Vec<Cholesky<f64, Dyn>>,
    rs_inv_u: DMatrix<f64>,
    cap_chol: Cholesky<f64, Dyn>,
    logdet: f64,
}

impl FsaMatrix {
    pub fn build(coords: &[[f64; 2]], design: &FsaDesign, phi: f64, nu: f64) -> Result<Self> {
        check_nu(nu)?;
        let m = coords.len();
        let a = design.knots.len();
        let knot_xy: Vec<[f64; 2]> = design.knots.iter().map(|&k| coords[k]).collect();
        let rho_aa = DMatrix::from_fn(a, a, |i, j| powexp_corr(distance(knot_xy[i], knot_xy[j]), phi, nu));
        let u = DMatrix::from_fn(m, a, |i, j| powexp_corr(distance(coords[i], knot_xy[j]), phi, nu));
        let rho_aa_chol = Cholesky::new(rho_aa.clone()).ok_or_else(|| {
            Error::NotPositiveDefinite("knot correlation matrix (duplicate knots?)".into())
        })?;
        // G = L_A^{-1} U', so that U rho_AA^{-1} U' = G'G.
        let g = rho_aa_chol
            .l()
            .solve_lower_triangular(&u.transpose())
            .ok_or_else(|| Error::NotPositiveDefinite("knot correlation matrix".into()))?;
        let mut is_knot = vec![false; m];
        design.knots.iter().for_each(|&k| is_knot[k] = true);

        let blocks = design.members();
        let mut block_chol = Vec::with_capacity(blocks.len());
        let mut block_rs = Vec::with_capacity(blocks.len());
        let mut logdet_rs = 0.0;
        for mem in &blocks {
            let nb = mem.len();
            let rs = DMatrix::from_fn(nb, nb, |r, c| {
                let (i, j) = (mem[r], mem[c]);
                // Residuals at knot sites vanish exactly.
                let resid = if is_knot[i] || is_knot[j] {
                    0.0
                } else {
                    powexp_corr(distance(coords[i], coords[j]), phi, nu) - g.column(i).dot(&g.column(j))
                };
                (1.0 - NUGGET) * resid + if i == j { NUGGET } else { 0.0 }
            });
            let rs = (&rs + rs.transpose()) * 0.5;
            block_rs.push(rs.clone());
            let ch = Cholesky::new(rs).ok_or_else(|| {
                Error::NotPositiveDefinite("FSA residual block (increase the nugget or knots)".into())
            })?;
            logdet_rs += chol_logdet(&ch);
            block_chol.push(ch);
        }

        let mut rs_inv_u = DMatrix::zeros(m, a);
        for (mem, ch) in blocks.iter().zip(&block_chol) {
            let sub = DMatrix::from_fn(mem.len(), a, |r, c| u[(mem[r], c)]);
            let sol = ch.solve(&sub);
            for (r, &i) in mem.iter().enumerate() {
                for c in 0..a {
                    rs_inv_u[(i, c)] = sol[(r, c)];
                }
            }
        }
        let mut cap = &rho_aa + (u.transpose() * &rs_inv_u) * (1.0 - NUGGET);
        cap = (&cap + cap.transpose()) * 0.5;
        let cap_chol = Cholesky::new(cap)
            .ok_or_else(|| Error::NotPositiveDefinite("FSA capacitance matrix".into()))?;
        let logdet = chol_logdet(&cap_chol) - chol_logdet(&rho_aa_chol) + logdet_rs;
        Ok(FsaMatrix {
            m,
            u,
            g,
            blocks,
            block_rs,
            block_chol,
            rs_inv_u,
            cap_chol,
            logdet,
        })
    }

    fn rs_solve(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        for (mem, ch) in self.blocks.iter().zip(&self.block_chol) {
            let sub = DVector::from_iterator(mem.len(), mem.iter().map(|&i| v[i]));
            let sol = ch.solve(&sub);
            for (r, &i) in mem.iter().enumerate() {
                out[i] = sol[r];
            }
        }
        out
    }

    fn smw_solve(&self, v: &DVector<f64>) -> DVector<f64> {
        let x = self.rs_solve(v);
        let y = self.u.transpose() * &x;
        let s = self.cap_chol.solve(&y);
        x - (&self.rs_inv_u * s) * (1.0 - NUGGET)
    }

    /// `R v` from the low-rank and block pieces.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = (self.g.transpose() * (&self.g * v)) * (1.0 - NUGGET);
        for (mem, rs) in self.blocks.iter().zip(&self.block_rs) {
            for (r, &i) in mem.iter().enumerate() {
                out[i] += mem.iter().enumerate().map(|(c, &j)| rs[(r, c)] * v[j]).sum::<f64>();
            }
        }
        out
    }

    /// `R^{-1} v` by the Sherman-Woodbury-Morrison identity.
    ///
    /// Knot sites leave `R_s` with eigenvalues near the nugget, so the raw
    /// identity loses digits to cancellation; two steps of iterative
    /// refinement against [`FsaMatrix::apply`] recover them.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut x = self.smw_solve(v);
        for _ in 0..REFINE_STEPS {
            let r = v - self.apply(&x);
            x += self.smw_solve(&r);
        }
        x
    }

    /// `log det R` via the capacitance identity.
    pub fn log_det(&self) -> f64 {
        self.logdet
    }

    /// Dense `R^{-1}`, column by column through [`FsaMatrix::solve`].
    pub fn inverse(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.m, self.m);
        for j in 0..self.m {
            let mut e = DVector::zeros(self.m);
            e[j] = 1.0;
            p.set_column(j, &self.solve(&e));
        }
        (&p + p.transpose()) * 0.5
    }

    /// The approximated correlation matrix itself, formed densely.
    pub fn dense(&self) -> DMatrix<f64> {
        let mut r = (self.g.transpose() * &self.g) * (1.0 - NUGGET);
        for (mem, rs) in self.blocks.iter().zip(&self.block_rs) {
            for (a, &i) in mem.iter().enumerate() {
                for (b, &j) in mem.iter().enumerate() {
                    r[(i, j)] += rs[(a, b)];
                }
            }
        }
        r
    }
}

const REFINE_STEPS: usize = 2;

/// Precision `R^{-1}` and `log det R` of a GRF at one range value.
#[derive(Debug, Clone)]
pub struct GrfPrecision {
    pub phi: f64,
    precision: DMatrix<f64>,
    log_det: f64,
}

impl GrfPrecision {
    pub fn dense(coords: &[[f64; 2]], phi: f64, nu: f64) -> Result<Self> {
        check_nu(nu)?;
        if !(phi > 0.0) {
            return Err(Error::Domain(format!("range phi = {phi} must be positive")));
        }
        let r = correlation_matrix(coords, phi, nu);
        let ch = Cholesky::new(r).ok_or_else(|| Error::NotPositiveDefinite("GRF correlation".into()))?;
        Ok(GrfPrecision {
            phi,
            log_det: chol_logdet(&ch),
            precision: ch.inverse(),
        })
    }

    pub fn fsa(coords: &[[f64; 2]], design: &FsaDesign, phi: f64, nu: f64) -> Result<Self> {
        if !(phi > 0.0) {
            return Err(Error::Domain(format!("range phi = {phi} must be positive")));
        }
        let f = FsaMatrix::build(coords, design, phi, nu)?;
        Ok(GrfPrecision {
            phi,
            log_det: f.log_det(),
            precision: f.inverse(),
        })
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let v = DVector::from_column_slice(v);
        v.dot(&(&self.precision * &v))
    }
}

/// Georeferenced frailty structure: sites, shape, and optional FSA design.
#[derive(Debug, Clone)]
pub struct GrfSpec {
    pub coords: Vec<[f64; 2]>,
    pub nu: f64,
    pub fsa: Option<FsaDesign>,
}

impl GrfSpec {
    pub fn new(coords: Vec<[f64; 2]>, nu: f64, fsa: Option<(usize, usize)>) -> Result<Self> {
        check_nu(nu)?;
        for i in 0..coords.len() {
            for j in 0..i {
                if coords[i] == coords[j] {
                    return Err(Error::Frailty(format!("sites {} and {} coincide", j + 1, i + 1)));
                }
            }
        }
        let fsa = fsa.map(|(a, b)| FsaDesign::new(&coords, a, b)).transpose()?;
        Ok(GrfSpec { coords, nu, fsa })
    }

    pub fn phi0(&self) -> f64 {
        solve_phi0(max_distance(&self.coords), self.nu)
    }

    pub fn precision(&self, phi: f64) -> Result<GrfPrecision> {
        match &self.fsa {
            Some(d) => GrfPrecision::fsa(&self.coords, d, phi, self.nu),
            None => GrfPrecision::dense(&self.coords, phi, self.nu),
        }
    }
}

/// Which frailty prior is attached to the sites.
#[derive(Debug, Clone, Default)]
pub enum FrailtySpec {
    #[default]
    None,
    Iid,
    Icar(Adjacency),
    Grf(GrfSpec),
}

impl FrailtySpec {
    pub fn name(&self) -> &'static str {
        match self {
            FrailtySpec::None => "none",
            FrailtySpec::Iid => "iid",
            FrailtySpec::Icar(_) => "icar",
            FrailtySpec::Grf(_) => "grf",
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, FrailtySpec::None)
    }
}

/// Prior structure of `v` at the current range value.
#[derive(Debug, Clone)]
pub enum PrecisionStructure {
    Iid { m: usize },
    Icar(Adjacency),
    Grf(GrfPrecision),
}

impl PrecisionStructure {
    pub fn m(&self) -> usize {
        match self {
            PrecisionStructure::Iid { m } => *m,
            PrecisionStructure::Icar(a) => a.m(),
            PrecisionStructure::Grf(g) => g.precision.nrows(),
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            PrecisionStructure::Icar(a) => a.m() - 1,
            other => other.m(),
        }
    }

    /// Mean and variance of `v_i` given the other frailties.
    pub fn conditional(&self, i: usize, v: &[f64], tau2: f64) -> (f64, f64) {
        match self {
            PrecisionStructure::Iid { .. } => (0.0, tau2),
            PrecisionStructure::Icar(a) => {
                let nb = a.neighbors(i);
                let e = nb.len() as f64;
                (nb.iter().map(|&j| v[j]).sum::<f64>() / e, tau2 / e)
            }
            PrecisionStructure::Grf(g) => {
                let p = &g.precision;
                let pii = p[(i, i)];
                let s: f64 = (0..v.len()).filter(|&j| j != i).map(|j| p[(i, j)] * v[j]).sum();
                (-s / pii, tau2 / pii)
            }
        }
    }

    /// `v'Cv`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        match self {
            PrecisionStructure::Iid { .. } => v.iter().map(|x| x * x).sum(),
            PrecisionStructure::Icar(a) => a.quad_form(v),
            PrecisionStructure::Grf(g) => g.quad_form(v),
        }
    }

    /// `log det R` for a GRF, zero otherwise (constant in every update).
    pub fn log_det_corr(&self) -> f64 {
        match self {
            PrecisionStructure::Grf(g) => g.log_det,
            _ => 0.0,
        }
    }

    /// Log prior density of `v` given `tau2`, up to a constant:
    /// `-(rank/2) log tau2 - log det(R)/2 - v'Cv / (2 tau2)`.
    pub fn log_density(&self, v: &[f64], tau2: f64) -> f64 {
        -0.5 * self.rank() as f64 * tau2.ln() - 0.5 * self.log_det_corr() - 0.5 * self.quad_form(v) / tau2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Adjacency {
        Adjacency::new(vec![vec![1], vec![0, 2], vec![1]]).unwrap()
    }

    fn grid(m: usize) -> Vec<[f64; 2]> {
        // Deterministic scattered points on [0, 10]^2.
        (0..m)
            .map(|i| {
                let a = (i as f64 * 0.618_033_988_75).fract();
                let b = (i as f64 * 0.414_213_562_37 + 0.1).fract();
                [10.0 * a, 10.0 * b]
            })
            .collect()
    }

    #[test]
    fn correlation_basics() {
        assert_eq!(powexp_corr(0.0, 2.0, 1.0), 1.0);
        assert!((powexp_corr(2.0, 0.5, 1.0) - (-1.0f64).exp()).abs() < 1e-15);
        let phi0 = solve_phi0(10.0, 1.0);
        assert!((phi0 - 0.690_775_527_898_213_7).abs() < 1e-12);
        assert!((powexp_corr(10.0, phi0, 1.0) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn icar_quad_form_and_conditionals() {
        let a = path3();
        assert!((a.quad_form(&[1.0, 0.0, -1.0]) - 2.0).abs() < 1e-15);
        assert_eq!(a.quad_form(&[4.0, 4.0, 4.0]), 0.0);
        let s = PrecisionStructure::Icar(a.clone());
        assert_eq!(s.rank(), 2);
        let (mean, var) = s.conditional(1, &[3.0, 100.0, 3.0], 2.0);
        assert_eq!((mean, var), (3.0, 1.0));
        let c = a.precision_matrix();
        let ones = DVector::from_element(3, 1.0);
        assert!((c * ones).norm() == 0.0);
    }

    #[test]
    fn adjacency_validation() {
        assert!(Adjacency::new(vec![vec![1], vec![0], vec![3], vec![2]]).is_err());
        assert!(Adjacency::new(vec![vec![1], vec![]]).is_err());
        assert!(Adjacency::new(vec![vec![1], vec![2], vec![1]]).is_err());
    }

    #[test]
    fn iid_conditional() {
        let s = PrecisionStructure::Iid { m: 4 };
        assert_eq!(s.conditional(2, &[1.0, 2.0, 3.0, 4.0], 0.7), (0.0, 0.7));
    }

    #[test]
    fn grf_conditional_matches_schur_complement() {
        let coords = vec![[0.0, 0.0], [1.0, 0.5], [0.3, 2.0]];
        let (phi, nu, tau2) = (0.8, 1.5, 1.7);
        let g = GrfPrecision::dense(&coords, phi, nu).unwrap();
        let s = PrecisionStructure::Grf(g);
        let r = correlation_matrix(&coords, phi, nu) * tau2;
        let v = [0.0, 0.4, -1.1];
        // Partitioned Gaussian: condition site 0 on sites 1 and 2.
        let s12 = r.view((0, 1), (1, 2)).clone_owned();
        let s22 = r.view((1, 1), (2, 2)).clone_owned();
        let s22i = s22.try_inverse().unwrap();
        let rest = DVector::from_vec(vec![v[1], v[2]]);
        let mean = (&s12 * &s22i * rest)[0];
        let var = r[(0, 0)] - (&s12 * &s22i * s12.transpose())[(0, 0)];
        let (m, vv) = s.conditional(0, &v, tau2);
        assert!((m - mean).abs() < 1e-12);
        assert!((vv - var).abs() < 1e-12);
    }

    #[test]
    fn knots_on_square_are_diagonal() {
        let sq = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let mut k = select_knots(&sq, 2).unwrap();
        k.sort();
        // Brute force: the pair with the largest separation.
        let mut best = (0, 0);
        let mut bd = 0.0;
        for i in 0..4 {
            for j in i + 1..4 {
                let d = distance(sq[i], sq[j]);
                if d > bd + 1e-12 {
                    bd = d;
                    best = (i, j);
                }
            }
        }
        assert!((distance(sq[k[0]], sq[k[1]]) - bd).abs() < 1e-12, "{k:?} vs {best:?}");
        assert_eq!(select_knots(&sq, 4).unwrap(), vec![0, 1, 2, 3]);
        assert!(select_knots(&sq, 5).is_err());
        assert!(assign_blocks(&sq, 1).unwrap().iter().all(|&b| b == 0));
    }

    #[test]
    fn fsa_single_block_is_exact() {
        let c = grid(40);
        let design = FsaDesign::new(&c, 6, 1).unwrap();
        let f = FsaMatrix::build(&c, &design, 0.4, 1.0).unwrap();
        let dense = correlation_matrix(&c, 0.4, 1.0);
        assert!((f.dense() - dense).amax() < 1e-10);
    }

    #[test]
    fn fsa_within_block_entries_are_exact() {
        let c = grid(60);
        let design = FsaDesign::new(&c, 10, 5).unwrap();
        let f = FsaMatrix::build(&c, &design, 0.5, 1.0).unwrap();
        let dense = correlation_matrix(&c, 0.5, 1.0);
        let approx = f.dense();
        for i in 0..60 {
            for j in 0..60 {
                if design.blocks[i] == design.blocks[j] {
                    assert!((approx[(i, j)] - dense[(i, j)]).abs() < 1e-10);
                }
            }
        }
        let id = f.inverse() * approx;
        let mut off = 0.0f64;
        for i in 0..60 {
            for j in 0..60 {
                if i != j {
                    off = off.max(id[(i, j)].abs());
                }
            }
        }
        assert!(off < 1e-8, "{off}");
    }

    #[test]
    fn fsa_quad_form_matches_dense_solve() {
        let c = grid(60);
        let design = FsaDesign::new(&c, 10, 4).unwrap();
        let f = FsaMatrix::build(&c, &design, 0.5, 1.0).unwrap();
        let v = DVector::from_fn(60, |i, _| (i as f64 * 0.37).sin());
        let smw = v.dot(&f.solve(&v));
        let dense = v.dot(&f.dense().lu().solve(&v).unwrap());
        assert!(((smw - dense) / dense).abs() < 1e-6);
    }

    #[test]
    fn icar_kernel_is_shift_invariant() {
        let a = path3();
        let v = [0.3, -1.0, 2.0];
        let w: Vec<f64> = v.iter().map(|x| x + 5.0).collect();
        assert!((a.quad_form(&v) - a.quad_form(&w)).abs() < 1e-12);
    }
}
