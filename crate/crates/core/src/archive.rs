//! Retained posterior draws and run metadata.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::{CenteringFamily, TbpBaseline};
use crate::data::fmt_num;
use crate::error::{Error, Result};
use crate::sampler::McmcConfig;

/// Column layout of one retained draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub p: usize,
    pub spline_dims: Vec<usize>,
    pub selection: bool,
    pub degree: usize,
    /// Number of frailties stored (0 without a frailty prior).
    pub m: usize,
    pub has_phi: bool,
}

impl Layout {
    pub fn coef_dim(&self) -> usize {
        self.p + self.spline_dims.iter().sum::<usize>()
    }

    fn gamma_at(&self) -> usize {
        self.coef_dim()
    }

    pub fn theta_at(&self) -> usize {
        self.gamma_at() + if self.selection { self.p } else { 0 }
    }

    pub fn z_at(&self) -> usize {
        self.theta_at() + 2
    }

    pub fn alpha_at(&self) -> usize {
        self.z_at() + self.degree - 1
    }

    pub fn tau2_at(&self) -> Option<usize> {
        (self.m > 0).then(|| self.alpha_at() + 1)
    }

    pub fn phi_at(&self) -> Option<usize> {
        self.has_phi.then(|| self.alpha_at() + 2)
    }

    pub fn v_at(&self) -> usize {
        self.alpha_at() + 1 + usize::from(self.m > 0) + usize::from(self.has_phi)
    }

    pub fn width(&self) -> usize {
        self.v_at() + self.m
    }

    /// Start offset of spline term `l` within the coefficient block.
    pub fn spline_at(&self, l: usize) -> usize {
        self.p + self.spline_dims[..l].iter().sum::<usize>()
    }
}

/// Everything needed to interpret and reproduce a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub config: McmcConfig,
    pub frailty: String,
    pub n: usize,
    pub layout: Layout,
    pub columns: Vec<String>,
    pub covariate_names: Vec<String>,
    pub acceptance: BTreeMap<String, f64>,
    pub site_acceptance: Vec<f64>,
    pub nonfinite_rejections: u64,
    pub theta_hat: [f64; 2],
    pub theta_cov: Vec<Vec<f64>>,
    pub coef_hat: Vec<f64>,
    pub coef_cov: Vec<Vec<f64>>,
    /// Spline prior covariances `g n (X'X)^{-1}`, one per term.
    pub spline_prior_cov: Vec<Vec<Vec<f64>>>,
    pub loglik_at_mean: Option<f64>,
    #[serde(default)]
    pub criteria: BTreeMap<String, f64>,
    /// The front end's resolved run configuration, echoed verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<serde_json::Value>,
}

#[derive(Debug, Clone)]
pub struct PosteriorArchive {
    pub meta: RunMeta,
    pub draws: Vec<Vec<f64>>,
    pub loglik: Vec<Vec<f64>>,
}

impl PosteriorArchive {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn layout(&self) -> &Layout {
        &self.meta.layout
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.meta.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.column_index(name)?;
        Some(self.series(k))
    }

    pub fn series(&self, k: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[k]).collect()
    }

    /// Rows restricted to columns `range`.
    pub fn block(&self, range: std::ops::Range<usize>) -> Vec<Vec<f64>> {
        self.draws.iter().map(|d| d[range.clone()].to_vec()).collect()
    }

    /// Effective coefficients of draw `l`: `gamma * beta` followed by the
    /// spline coefficients.
    pub fn coef_eff(&self, l: usize) -> Vec<f64> {
        let lay = &self.meta.layout;
        let d = &self.draws[l];
        let mut c = d[..lay.coef_dim()].to_vec();
        if lay.selection {
            for j in 0..lay.p {
                c[j] *= d[lay.theta_at() - lay.p + j];
            }
        }
        c
    }

    pub fn theta(&self, l: usize) -> [f64; 2] {
        let k = self.meta.layout.theta_at();
        [self.draws[l][k], self.draws[l][k + 1]]
    }

    pub fn z(&self, l: usize) -> &[f64] {
        let lay = &self.meta.layout;
        &self.draws[l][lay.z_at()..lay.alpha_at()]
    }

    pub fn frailties(&self, l: usize) -> &[f64] {
        let lay = &self.meta.layout;
        &self.draws[l][lay.v_at()..lay.width()]
    }

    pub fn baseline(&self, l: usize) -> TbpBaseline {
        TbpBaseline::from_logits(self.z(l), CenteringFamily::new(self.meta.config.family, self.theta(l)))
    }

    /// Total log-likelihood of each retained draw.
    pub fn loglik_totals(&self) -> Vec<f64> {
        self.loglik.iter().map(|r| crate::numeric::pairwise_sum(r)).collect()
    }

    /// Sub-model (set of included covariates) frequencies, most frequent
    /// first. Ties are broken by the set's text.
    pub fn submodel_frequencies(&self) -> Vec<(Vec<usize>, f64)> {
        let lay = &self.meta.layout;
        if !lay.selection || self.draws.is_empty() {
            return Vec::new();
        }
        let g0 = lay.theta_at() - lay.p;
        let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        for d in &self.draws {
            let set: Vec<usize> = (0..lay.p).filter(|&j| d[g0 + j] > 0.5).collect();
            *counts.entry(set).or_default() += 1;
        }
        let total = self.draws.len() as f64;
        let mut out: Vec<(Vec<usize>, f64)> =
            counts.into_iter().map(|(k, c)| (k, c as f64 / total)).collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }

    pub fn write_draws_csv(&self, path: &Path) -> Result<()> {
        write_matrix(path, &self.meta.columns, &self.draws)
    }

    pub fn write_loglik_csv(&self, path: &Path) -> Result<()> {
        let header: Vec<String> = (1..=self.meta.n).map(|i| format!("obs{i}")).collect();
        write_matrix(path, &header, &self.loglik)
    }

    pub fn write_meta_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Writes `draws.csv`, `loglik.csv` and `meta.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.write_draws_csv(&dir.join("draws.csv"))?;
        self.write_loglik_csv(&dir.join("loglik.csv"))?;
        self.write_meta_json(&dir.join("meta.json"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: RunMeta = serde_json::from_str(&text)?;
        let (cols, draws) = read_matrix(&dir.join("draws.csv"))?;
        if cols != meta.columns {
            return Err(Error::Config("draws.csv header does not match meta.json".into()));
        }
        let (_, loglik) = read_matrix(&dir.join("loglik.csv"))?;
        Ok(PosteriorArchive { meta, draws, loglik })
    }
}

fn write_matrix(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| fmt_num(*v)).collect();
        writeln!(out, "{}", line.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

fn read_matrix(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: format!("{other:?}"),
            },
        })?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.trim().parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: k as u64 + 2,
                    msg: e.to_string(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_offsets() {
        let lay = Layout {
            p: 2,
            spline_dims: vec![5],
            selection: true,
            degree: 4,
            m: 3,
            has_phi: true,
        };
        assert_eq!(lay.coef_dim(), 7);
        assert_eq!(lay.theta_at(), 9);
        assert_eq!(lay.z_at(), 11);
        assert_eq!(lay.alpha_at(), 14);
        assert_eq!(lay.tau2_at(), Some(15));
        assert_eq!(lay.phi_at(), Some(16));
        assert_eq!(lay.v_at(), 17);
        assert_eq!(lay.width(), 20);
        assert_eq!(lay.spline_at(0), 2);
    }
}
