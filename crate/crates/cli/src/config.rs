//! Run configuration: a TOML file whose tables mirror the library types,
//! overridable from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tbpsurv::data::{load_adjacency, load_csv, Dataset, LocationSpec, Schema};
use tbpsurv::frailty::{Adjacency, FrailtySpec, GrfSpec};
use tbpsurv::sampler::McmcConfig;
use tbpsurv::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub t1: String,
    pub t2: String,
    pub trunc: Option<String>,
    pub covariates: Vec<String>,
    /// Areal id column, or the id column matched against `sites`.
    pub location: Option<String>,
    /// Coordinate columns `[x, y]` for georeferenced records.
    pub coords: Option<[String; 2]>,
    /// Site table `id,x,y`.
    pub sites: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            t1: "t1".into(),
            t2: "t2".into(),
            trunc: None,
            covariates: Vec::new(),
            location: None,
            coords: None,
            sites: None,
            adjacency: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FrailtyKind {
    #[default]
    None,
    Iid,
    Icar,
    Grf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrailtyConfig {
    pub kind: FrailtyKind,
    pub nu: f64,
    pub fsa_knots: Option<usize>,
    pub fsa_blocks: Option<usize>,
}

impl Default for FrailtyConfig {
    fn default() -> Self {
        FrailtyConfig {
            kind: FrailtyKind::None,
            nu: 1.0,
            fsa_knots: None,
            fsa_blocks: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output: Option<PathBuf>,
    /// Covariates given a B-spline term; resolved into `mcmc.nonlinear`.
    pub nonlinear: Vec<String>,
    pub data: DataConfig,
    pub frailty: FrailtyConfig,
    pub mcmc: McmcConfig,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl RunConfig {
    /// Reads a TOML config, or the run echo stored in a fit's `meta.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            let meta: serde_json::Value = serde_json::from_str(&text)?;
            let run = meta
                .get("run")
                .cloned()
                .ok_or_else(|| Error::Config(format!("{} has no run configuration", path.display())))?;
            return Ok(serde_json::from_value(run)?);
        }
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_else(|e| format!("# cannot render config: {e}\n"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.path.is_none() {
            return Err(Error::Config("no data file given".into()));
        }
        if self.data.coords.is_some() && (self.data.location.is_some() || self.data.sites.is_some()) {
            return Err(Error::Config("give either coordinate columns or a location id column".into()));
        }
        if self.data.sites.is_some() && self.data.location.is_none() {
            return Err(Error::Config("a site table needs the location id column".into()));
        }
        match self.frailty.kind {
            FrailtyKind::Icar if self.data.adjacency.is_none() => {
                return Err(Error::Config("ICAR frailties need an adjacency file".into()))
            }
            FrailtyKind::Icar | FrailtyKind::Iid if self.data.location.is_none() => {
                return Err(Error::Config("areal frailties need a location column".into()))
            }
            FrailtyKind::Grf if self.data.coords.is_none() && self.data.sites.is_none() => {
                return Err(Error::Config("GRF frailties need coordinates or a site table".into()))
            }
            _ => {}
        }
        if self.frailty.fsa_knots.is_some() != self.frailty.fsa_blocks.is_some() {
            return Err(Error::Config("set both fsa_knots and fsa_blocks, or neither".into()));
        }
        for name in &self.nonlinear {
            if !self.data.covariates.contains(name) {
                return Err(Error::Config(format!("nonlinear term `{name}` is not a covariate")));
            }
        }
        self.mcmc.validate()
    }

    /// Maps `nonlinear` names to covariate indices in `mcmc.nonlinear`.
    pub fn resolve(&mut self) -> Result<()> {
        if !self.nonlinear.is_empty() {
            self.mcmc.nonlinear = self
                .nonlinear
                .iter()
                .map(|n| {
                    self.data
                        .covariates
                        .iter()
                        .position(|c| c == n)
                        .ok_or_else(|| Error::Config(format!("nonlinear term `{n}` is not a covariate")))
                })
                .collect::<Result<_>>()?;
        }
        self.validate()
    }

    pub fn schema(&self) -> Schema {
        let d = &self.data;
        let location = match (&d.location, &d.coords, &d.sites) {
            (Some(id), _, Some(table)) => LocationSpec::SiteTable {
                id: id.clone(),
                table: table.clone(),
            },
            (Some(id), _, None) => LocationSpec::Id(id.clone()),
            (None, Some([x, y]), _) => LocationSpec::Coords { x: x.clone(), y: y.clone() },
            _ => LocationSpec::None,
        };
        Schema {
            t1: d.t1.clone(),
            t2: d.t2.clone(),
            trunc: d.trunc.clone(),
            covariates: d.covariates.clone(),
            location,
        }
    }

    pub fn load_data(&self) -> Result<Dataset> {
        let path = self.data.path.as_ref().ok_or_else(|| Error::Config("no data file given".into()))?;
        if !path.exists() {
            return Err(Error::Io {
                path: path.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
            });
        }
        load_csv(path, &self.schema())
    }

    pub fn frailty_spec(&self, data: &Dataset) -> Result<FrailtySpec> {
        Ok(match self.frailty.kind {
            FrailtyKind::None => FrailtySpec::None,
            FrailtyKind::Iid => FrailtySpec::Iid,
            FrailtyKind::Icar => {
                let path = self.data.adjacency.as_ref().ok_or_else(|| Error::Config("no adjacency file".into()))?;
                FrailtySpec::Icar(Adjacency::new(load_adjacency(path, data.location_ids())?)?)
            }
            FrailtyKind::Grf => {
                let coords = data
                    .coords()
                    .ok_or_else(|| Error::Config("the data carry no coordinates".into()))?
                    .to_vec();
                let fsa = self.frailty.fsa_knots.zip(self.frailty.fsa_blocks);
                FrailtySpec::Grf(GrfSpec::new(coords, self.frailty.nu, fsa)?)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.data.path = Some("d.csv".into());
        c.data.covariates = vec!["x1".into(), "x2".into()];
        c.data.location = Some("loc".into());
        c.frailty.kind = FrailtyKind::Iid;
        c.mcmc.nburn = 7;
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[mcmc]\nnburnn = 3\n").is_err());
    }

    #[test]
    fn icar_without_adjacency_is_invalid() {
        let mut c = RunConfig::default();
        c.data.path = Some("d.csv".into());
        c.data.location = Some("loc".into());
        c.frailty.kind = FrailtyKind::Icar;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn nonlinear_names_resolve_to_indices() {
        let mut c = RunConfig::default();
        c.data.path = Some("d.csv".into());
        c.data.covariates = vec!["a".into(), "b".into()];
        c.nonlinear = vec!["b".into()];
        c.resolve().unwrap();
        assert_eq!(c.mcmc.nonlinear, vec![1]);
        c.nonlinear = vec!["z".into()];
        assert!(c.resolve().is_err());
    }
}
