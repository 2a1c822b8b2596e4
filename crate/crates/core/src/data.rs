//! Censored, optionally left-truncated and spatially indexed survival records.
//!
//! Upper endpoints of `+inf` are written as empty CSV fields. The censoring
//! kind of a record is always derived from `(u, a, b)` and never stored.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CensoringKind {
    Exact,
    Right,
    Left,
    Interval,
}

/// One survival record. `location` is a 0-based site index.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub u: f64,
    pub a: f64,
    pub b: f64,
    pub x: Vec<f64>,
    pub location: usize,
}

impl Observation {
    pub fn new(u: f64, a: f64, b: f64, x: Vec<f64>, location: usize) -> Result<Self> {
        let obs = Observation { u, a, b, x, location };
        obs.validate()?;
        Ok(obs)
    }

    pub fn exact(t: f64, x: Vec<f64>, location: usize) -> Result<Self> {
        Self::new(0.0, t, t, x, location)
    }

    pub fn interval(a: f64, b: f64, x: Vec<f64>, location: usize) -> Result<Self> {
        Self::new(0.0, a, b, x, location)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidObservation(msg));
        if !(self.u.is_finite() && self.a.is_finite()) || self.b.is_nan() {
            return bad(format!("non-finite endpoint in ({}, {}, {})", self.u, self.a, self.b));
        }
        if self.u < 0.0 || self.a < 0.0 {
            return bad(format!("negative time in ({}, {}, {})", self.u, self.a, self.b));
        }
        if self.u > self.a {
            return bad(format!("truncation time {} exceeds lower endpoint {}", self.u, self.a));
        }
        if self.b < self.a {
            return bad(format!("upper endpoint {} below lower endpoint {}", self.b, self.a));
        }
        if self.a == self.b && self.a == 0.0 {
            return bad("exact event time 0".into());
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return bad("missing or non-finite covariate".into());
        }
        Ok(())
    }

    pub fn kind(&self) -> CensoringKind {
        if self.a == self.b {
            CensoringKind::Exact
        } else if self.b == f64::INFINITY {
            CensoringKind::Right
        } else if self.a == self.u {
            CensoringKind::Left
        } else {
            CensoringKind::Interval
        }
    }
}

/// A subject whose covariates change at the epoch times `epochs[k].0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVaryingSubject {
    pub u: f64,
    pub a: f64,
    pub b: f64,
    pub location: usize,
    pub epochs: Vec<(f64, Vec<f64>)>,
}

/// Splits a subject into left-truncated records, one per covariate epoch.
///
/// Epoch `k < o` becomes `(t_k, t_{k+1}, inf, x_k)`: truncated at `t_k` and
/// right-censored at `t_{k+1}`. The last epoch carries the subject's own
/// censoring interval, truncated at `t_o`.
pub fn expand_time_varying(subject: &TimeVaryingSubject) -> Result<Vec<Observation>> {
    let ep = &subject.epochs;
    let Some(last) = ep.last() else {
        return Err(Error::InvalidObservation("subject has no covariate epochs".into()));
    };
    if last.0 > subject.a {
        return Err(Error::InvalidObservation(format!(
            "last epoch time {} exceeds lower endpoint {}",
            last.0, subject.a
        )));
    }
    if ep[0].0 != subject.u {
        return Err(Error::InvalidObservation(format!(
            "first epoch time {} differs from truncation time {}",
            ep[0].0, subject.u
        )));
    }
    let dim = ep[0].1.len();
    for w in ep.windows(2) {
        if !(w[1].0 > w[0].0) {
            return Err(Error::InvalidObservation("epoch times must increase strictly".into()));
        }
    }
    if ep.iter().any(|e| e.1.len() != dim) {
        return Err(Error::InvalidObservation("covariate dimension changes across epochs".into()));
    }
    let mut out = Vec::with_capacity(ep.len());
    for k in 0..ep.len() - 1 {
        out.push(Observation::new(
            ep[k].0,
            ep[k + 1].0,
            f64::INFINITY,
            ep[k].1.clone(),
            subject.location,
        )?);
    }
    out.push(Observation::new(
        last.0,
        subject.a,
        subject.b,
        last.1.clone(),
        subject.location,
    )?);
    Ok(out)
}

/// An immutable collection of records sharing `p` covariates and `m` sites.
#[derive(Debug, Clone)]
pub struct Dataset {
    observations: Vec<Observation>,
    m: usize,
    covariate_names: Vec<String>,
    location_ids: Vec<String>,
    coords: Option<Vec<[f64; 2]>>,
    centered: DMatrix<f64>,
    means: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset. When there is at least one record, every site index
    /// in `0..m` must be used by some record.
    pub fn new(
        observations: Vec<Observation>,
        covariate_names: Vec<String>,
        m: usize,
    ) -> Result<Self> {
        let p = covariate_names.len();
        for (i, o) in observations.iter().enumerate() {
            o.validate()
                .map_err(|e| Error::InvalidObservation(format!("record {}: {e}", i + 1)))?;
            if o.x.len() != p {
                return Err(Error::InvalidObservation(format!(
                    "record {} has {} covariates, expected {p}",
                    i + 1,
                    o.x.len()
                )));
            }
            if o.location >= m {
                return Err(Error::InvalidObservation(format!(
                    "record {} has location {} but m = {m}",
                    i + 1,
                    o.location + 1
                )));
            }
        }
        if !observations.is_empty() {
            let mut seen = vec![false; m];
            observations.iter().for_each(|o| seen[o.location] = true);
            if let Some(k) = seen.iter().position(|s| !s) {
                return Err(Error::InvalidObservation(format!("location {} has no records", k + 1)));
            }
        }
        let n = observations.len();
        let mut means = vec![0.0; p];
        for o in &observations {
            for (mj, xj) in means.iter_mut().zip(&o.x) {
                *mj += xj;
            }
        }
        if n > 0 {
            means.iter_mut().for_each(|v| *v /= n as f64);
        }
        let centered = DMatrix::from_fn(n, p, |i, j| observations[i].x[j] - means[j]);
        Ok(Dataset {
            observations,
            m,
            covariate_names,
            location_ids: (1..=m).map(|k| k.to_string()).collect(),
            coords: None,
            centered,
            means,
        })
    }

    pub fn with_location_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.m {
            return Err(Error::Config(format!("{} location ids for m = {}", ids.len(), self.m)));
        }
        self.location_ids = ids;
        Ok(self)
    }

    pub fn with_coords(mut self, coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.len() != self.m {
            return Err(Error::Config(format!("{} coordinates for m = {}", coords.len(), self.m)));
        }
        self.coords = Some(coords);
        Ok(self)
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn location_ids(&self) -> &[String] {
        &self.location_ids
    }

    pub fn coords(&self) -> Option<&[[f64; 2]]> {
        self.coords.as_deref()
    }

    /// Column-centered covariate matrix (n x p).
    pub fn centered_design(&self) -> &DMatrix<f64> {
        &self.centered
    }

    pub fn covariate_means(&self) -> &[f64] {
        &self.means
    }

    /// Raw values of covariate `j` over all records.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.observations.iter().map(|o| o.x[j]).collect()
    }

    /// Record indices grouped by site.
    pub fn records_by_location(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.m];
        for (i, o) in self.observations.iter().enumerate() {
            out[o.location].push(i);
        }
        out
    }

    /// Writes the standard schema: `t1,t2,trunc,<covariates>,loc` plus
    /// `x,y` when coordinates are attached.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header: Vec<String> = vec!["t1".into(), "t2".into(), "trunc".into()];
        header.extend(self.covariate_names.iter().cloned());
        header.push("loc".into());
        if self.coords.is_some() {
            header.push("x".into());
            header.push("y".into());
        }
        w.write_record(&header)?;
        for o in &self.observations {
            let mut row = vec![fmt_num(o.a), fmt_time(o.b), fmt_num(o.u)];
            row.extend(o.x.iter().map(|v| fmt_num(*v)));
            row.push(self.location_ids[o.location].clone());
            if let Some(c) = &self.coords {
                row.push(fmt_num(c[o.location][0]));
                row.push(fmt_num(c[o.location][1]));
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("{other:?}"),
        },
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_num(v: f64) -> String {
    format!("{v:e}")
}

fn fmt_time(v: f64) -> String {
    if v == f64::INFINITY {
        String::new()
    } else {
        fmt_num(v)
    }
}

/// Where a record's site comes from.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum LocationSpec {
    /// Everything at a single site.
    #[default]
    None,
    /// Areal id column; ids are densely re-indexed in sorted order
    /// (numerically when every id is an integer).
    Id(String),
    /// Raw coordinates per record; distinct points become sites in order of
    /// first appearance.
    Coords { x: String, y: String },
    /// Id column resolved against a site table `id,x,y`; the table order
    /// defines the site index.
    SiteTable { id: String, table: PathBuf },
}

/// Column names for [`load_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub t1: String,
    pub t2: String,
    pub trunc: Option<String>,
    pub covariates: Vec<String>,
    pub location: LocationSpec,
}

impl Schema {
    /// The layout produced by [`Dataset::write_csv`].
    pub fn standard(covariates: Vec<String>, with_coords: bool) -> Self {
        Schema {
            t1: "t1".into(),
            t2: "t2".into(),
            trunc: Some("trunc".into()),
            covariates,
            location: if with_coords {
                LocationSpec::Coords { x: "x".into(), y: "y".into() }
            } else {
                LocationSpec::Id("loc".into())
            },
        }
    }
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_time(field: &str, path: &Path, line: u64, empty: f64) -> Result<f64> {
    let s = field.trim();
    if s.is_empty() {
        return Ok(empty);
    }
    if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("+inf") {
        return Ok(f64::INFINITY);
    }
    s.parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("cannot parse `{s}` as a number")))
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers().map_err(|e| csv_io(path, e))?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    };
    let i_t1 = col(&schema.t1)?;
    let i_t2 = col(&schema.t2)?;
    let i_trunc = schema.trunc.as_deref().map(col).transpose()?;
    let i_cov: Vec<usize> = schema.covariates.iter().map(|c| col(c)).collect::<Result<_>>()?;
    enum Loc {
        None,
        Id(usize),
        Xy(usize, usize),
    }
    let loc = match &schema.location {
        LocationSpec::None => Loc::None,
        LocationSpec::Id(c) | LocationSpec::SiteTable { id: c, .. } => Loc::Id(col(c)?),
        LocationSpec::Coords { x, y } => Loc::Xy(col(x)?, col(y)?),
    };

    struct Row {
        u: f64,
        a: f64,
        b: f64,
        x: Vec<f64>,
        key: String,
        xy: [f64; 2],
        line: u64,
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |i: usize| rec.get(i).unwrap_or("");
        let u = match i_trunc {
            Some(i) => parse_time(get(i), path, line, 0.0)?,
            None => 0.0,
        };
        let a = parse_time(get(i_t1), path, line, u)?;
        let b = parse_time(get(i_t2), path, line, f64::INFINITY)?;
        if a < 0.0 || b < 0.0 || u < 0.0 {
            return Err(parse_err(path, line, "negative time"));
        }
        if b < a {
            return Err(parse_err(path, line, format!("t2 = {b} is smaller than t1 = {a}")));
        }
        let x = i_cov
            .iter()
            .map(|&i| {
                let s = get(i);
                s.parse::<f64>()
                    .map_err(|_| parse_err(path, line, format!("cannot parse covariate `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let (key, xy) = match loc {
            Loc::None => (String::new(), [0.0; 2]),
            Loc::Id(i) => (get(i).to_string(), [0.0; 2]),
            Loc::Xy(i, j) => {
                let px = parse_time(get(i), path, line, f64::NAN)?;
                let py = parse_time(get(j), path, line, f64::NAN)?;
                if !(px.is_finite() && py.is_finite()) {
                    return Err(parse_err(path, line, "missing coordinate"));
                }
                (String::new(), [px, py])
            }
        };
        rows.push(Row { u, a, b, x, key, xy, line });
    }

    let mut index_of: HashMap<String, usize> = HashMap::new();
    let mut ids: Vec<String> = Vec::new();
    let mut coords: Option<Vec<[f64; 2]>> = None;
    let mut row_site: Vec<usize> = Vec::with_capacity(rows.len());
    match &schema.location {
        LocationSpec::None => {
            ids.push("1".into());
            row_site.resize(rows.len(), 0);
        }
        LocationSpec::Id(_) => {
            let mut uniq: Vec<String> = rows.iter().map(|r| r.key.clone()).collect();
            uniq.sort();
            uniq.dedup();
            if uniq.iter().all(|s| s.parse::<i64>().is_ok()) {
                uniq.sort_by_key(|s| s.parse::<i64>().unwrap_or(0));
            }
            for (k, id) in uniq.iter().enumerate() {
                index_of.insert(id.clone(), k);
            }
            ids = uniq;
            row_site.extend(rows.iter().map(|r| index_of[&r.key]));
        }
        LocationSpec::SiteTable { table, .. } => {
            let sites = load_sites(table)?;
            for (k, (id, _)) in sites.iter().enumerate() {
                index_of.insert(id.clone(), k);
            }
            for r in &rows {
                let k = *index_of
                    .get(&r.key)
                    .ok_or_else(|| parse_err(path, r.line, format!("site `{}` not in site table", r.key)))?;
                row_site.push(k);
            }
            ids = sites.iter().map(|s| s.0.clone()).collect();
            coords = Some(sites.into_iter().map(|s| s.1).collect());
        }
        LocationSpec::Coords { .. } => {
            let mut pts: Vec<[f64; 2]> = Vec::new();
            let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
            for r in &rows {
                let key = (r.xy[0].to_bits(), r.xy[1].to_bits());
                let k = *seen.entry(key).or_insert_with(|| {
                    pts.push(r.xy);
                    pts.len() - 1
                });
                row_site.push(k);
            }
            ids = (1..=pts.len()).map(|k| k.to_string()).collect();
            coords = Some(pts);
        }
    }

    let m = ids.len();
    let mut obs = Vec::with_capacity(rows.len());
    for (r, &site) in rows.into_iter().zip(&row_site) {
        let line = r.line;
        obs.push(
            Observation::new(r.u, r.a, r.b, r.x, site)
                .map_err(|e| parse_err(path, line, e.to_string()))?,
        );
    }
    let mut ds = Dataset::new(obs, schema.covariates.clone(), m)?.with_location_ids(ids)?;
    if let Some(c) = coords {
        ds = ds.with_coords(c)?;
    }
    Ok(ds)
}

/// Reads a site table with columns `id,x,y`.
pub fn load_sites(path: &Path) -> Result<Vec<(String, [f64; 2])>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() < 3 {
            return Err(parse_err(path, line, "expected id,x,y"));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| parse_err(path, line, format!("cannot parse `{s}`")))
        };
        out.push((rec[0].to_string(), [num(&rec[1])?, num(&rec[2])?]));
    }
    Ok(out)
}

/// Reads an adjacency structure as neighbour lists over site indices.
///
/// Two layouts are accepted: a square whitespace-separated 0/1 matrix whose
/// rows follow the site index order, or an edge list with one pair of site
/// ids per line. Blank lines and `#` comments are skipped. The result is
/// symmetrised; self-loops are rejected.
pub fn load_adjacency(path: &Path, location_ids: &[String]) -> Result<Vec<Vec<usize>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_adjacency(&text, location_ids).map_err(|e| match e {
        Error::Parse { line, msg, .. } => parse_err(path, line, msg),
        other => other,
    })
}

pub fn parse_adjacency(text: &str, location_ids: &[String]) -> Result<Vec<Vec<usize>>> {
    let m = location_ids.len();
    let lines: Vec<(u64, Vec<&str>)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i as u64 + 1, l.split('#').next().unwrap_or("")))
        .map(|(i, l)| (i, l.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect::<Vec<_>>()))
        .filter(|(_, t)| !t.is_empty())
        .collect();
    let err = |line: u64, msg: String| Error::Parse {
        path: PathBuf::new(),
        line,
        msg,
    };
    let is_matrix = lines.len() == m
        && lines.iter().all(|(_, t)| t.len() == m && t.iter().all(|s| *s == "0" || *s == "1"));
    let mut nb: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut add = |i: usize, j: usize, line: u64| -> Result<()> {
        if i == j {
            return Err(err(line, format!("self-loop at site {}", location_ids[i])));
        }
        if !nb[i].contains(&j) {
            nb[i].push(j);
        }
        if !nb[j].contains(&i) {
            nb[j].push(i);
        }
        Ok(())
    };
    if is_matrix {
        for (i, (line, toks)) in lines.iter().enumerate() {
            for (j, t) in toks.iter().enumerate() {
                if *t == "1" {
                    add(i, j, *line)?;
                }
            }
        }
    } else {
        let index: HashMap<&str, usize> = location_ids
            .iter()
            .enumerate()
            .map(|(k, s)| (s.as_str(), k))
            .collect();
        for (line, toks) in &lines {
            if toks.len() != 2 {
                return Err(err(*line, "expected a pair of site ids".into()));
            }
            let look = |s: &str| {
                index
                    .get(s)
                    .copied()
                    .ok_or_else(|| err(*line, format!("unknown site id `{s}`")))
            };
            add(look(toks[0])?, look(toks[1])?, *line)?;
        }
    }
    nb.iter_mut().for_each(|v| v.sort_unstable());
    Ok(nb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_follow_endpoint_rules() {
        let x = vec![];
        assert_eq!(Observation::exact(2.0, x.clone(), 0).unwrap().kind(), CensoringKind::Exact);
        assert_eq!(
            Observation::new(0.0, 3.5, f64::INFINITY, x.clone(), 0).unwrap().kind(),
            CensoringKind::Right
        );
        assert_eq!(Observation::new(0.0, 0.0, 1.2, x.clone(), 0).unwrap().kind(), CensoringKind::Left);
        assert_eq!(Observation::new(0.5, 0.5, 1.2, x.clone(), 0).unwrap().kind(), CensoringKind::Left);
        assert_eq!(Observation::new(0.5, 1.0, 1.2, x.clone(), 0).unwrap().kind(), CensoringKind::Interval);
    }

    #[test]
    fn invalid_records_are_rejected() {
        assert!(Observation::new(0.0, 2.0, 1.0, vec![], 0).is_err());
        assert!(Observation::new(0.0, -1.0, 1.0, vec![], 0).is_err());
        assert!(Observation::new(2.0, 1.0, 3.0, vec![], 0).is_err());
        assert!(Observation::exact(0.0, vec![], 0).is_err());
        assert!(Observation::exact(1.0, vec![f64::NAN], 0).is_err());
    }

    #[test]
    fn expansion_with_one_epoch_is_identity() {
        let s = TimeVaryingSubject {
            u: 0.0,
            a: 2.0,
            b: 2.0,
            location: 0,
            epochs: vec![(0.0, vec![1.0])],
        };
        let out = expand_time_varying(&s).unwrap();
        assert_eq!(out, vec![Observation::exact(2.0, vec![1.0], 0).unwrap()]);
    }

    #[test]
    fn expansion_with_two_epochs() {
        let s = TimeVaryingSubject {
            u: 0.0,
            a: 2.0,
            b: 2.0,
            location: 0,
            epochs: vec![(0.0, vec![1.0]), (1.0, vec![2.0])],
        };
        let out = expand_time_varying(&s).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].u, out[0].a, out[0].b), (0.0, 1.0, f64::INFINITY));
        assert_eq!(out[0].x, vec![1.0]);
        assert_eq!((out[1].u, out[1].a, out[1].b), (1.0, 2.0, 2.0));
        assert_eq!(out[1].x, vec![2.0]);
    }

    #[test]
    fn expansion_errors() {
        let mut s = TimeVaryingSubject {
            u: 0.0,
            a: 2.0,
            b: 2.0,
            location: 0,
            epochs: vec![],
        };
        assert!(expand_time_varying(&s).is_err());
        s.epochs = vec![(0.0, vec![1.0]), (3.0, vec![2.0])];
        assert!(expand_time_varying(&s).is_err());
        s.epochs = vec![(0.0, vec![1.0]), (1.0, vec![2.0, 3.0])];
        assert!(expand_time_varying(&s).is_err());
    }

    #[test]
    fn centered_columns_sum_to_zero() {
        let obs = vec![
            Observation::exact(1.0, vec![1.0, 5.0], 0).unwrap(),
            Observation::exact(2.0, vec![0.0, 7.0], 1).unwrap(),
            Observation::exact(3.0, vec![1.0, -2.0], 1).unwrap(),
        ];
        let ds = Dataset::new(obs, vec!["a".into(), "b".into()], 2).unwrap();
        for j in 0..2 {
            assert!(ds.centered_design().column(j).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn unused_location_is_an_error() {
        let obs = vec![Observation::exact(1.0, vec![], 0).unwrap()];
        assert!(Dataset::new(obs, vec![], 2).is_err());
    }

    #[test]
    fn adjacency_matrix_and_edge_list_agree() {
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let mat = parse_adjacency("0 1 0\n1 0 1\n0 1 0\n", &ids).unwrap();
        let edges = parse_adjacency("# path\na b\nc b\n", &ids).unwrap();
        assert_eq!(mat, edges);
        assert_eq!(mat, vec![vec![1], vec![0, 2], vec![1]]);
        assert!(parse_adjacency("a a\n", &ids).is_err());
        assert!(parse_adjacency("a z\n", &ids).is_err());
    }
}
