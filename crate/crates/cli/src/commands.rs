use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use tbpsurv::archive::PosteriorArchive;
use tbpsurv::criteria::{criteria, dic, lpml, waic, Criteria};
use tbpsurv::data::fmt_num;
use tbpsurv::diagnostics::{coxsnell_residuals, overlay_draws, residual_plot_data, slope};
use tbpsurv::frailty::{FrailtySpec, GrfSpec};
use tbpsurv::models::obs_loglik;
use tbpsurv::numeric::quantile;
use tbpsurv::sampler::{linear_predictors, run_chain, Design, McmcConfig};
use tbpsurv::simgen::{self, CovariateDesign, FrailtyTruth, SimDesign};
use tbpsurv::splines::g_scale_with;
use tbpsurv::study::{coverage_summary, run_replicates, Estimate};
use tbpsurv::{Error, Result};

use crate::config::{FrailtyKind, RunConfig};
use crate::report::{self, write_file};
use crate::{DesignName, DiagnoseArgs, FitArgs, McStudyArgs, Overrides, SimulateArgs};

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn apply(cfg: &mut RunConfig, o: Overrides) {
    if let Some(v) = o.data {
        cfg.data.path = Some(v);
    }
    if let Some(v) = o.model {
        cfg.mcmc.model = v;
    }
    if let Some(v) = o.frailty {
        cfg.frailty.kind = v;
    }
    if let Some(v) = o.adjacency {
        cfg.data.adjacency = Some(v);
    }
    if let Some(v) = o.location {
        cfg.data.location = Some(v);
    }
    if let Some(v) = o.covariates {
        cfg.data.covariates = v;
    }
    if let Some(v) = o.nonlinear {
        cfg.nonlinear = v;
    }
    if o.selection {
        cfg.mcmc.selection = true;
    }
    if let Some(v) = o.nburn {
        cfg.mcmc.nburn = v;
    }
    if let Some(v) = o.nsave {
        cfg.mcmc.nsave = v;
    }
    if let Some(v) = o.nskip {
        cfg.mcmc.nskip = v;
    }
    if let Some(v) = o.seed {
        cfg.mcmc.seed = v;
    }
}

/// Makes file references independent of the working directory so the
/// echoed config can be replayed from anywhere.
fn absolutize(cfg: &mut RunConfig) -> Result<()> {
    for p in [&mut cfg.data.path, &mut cfg.data.adjacency, &mut cfg.data.sites, &mut cfg.output]
        .into_iter()
        .flatten()
    {
        *p = absolute(p)?;
    }
    Ok(())
}

fn derived_settings(cfg: &RunConfig, data: &tbpsurv::data::Dataset, frailty: &FrailtySpec) -> Result<String> {
    let m = &cfg.mcmc;
    let mut s = String::new();
    let _ = writeln!(s, "# derived");
    let _ = writeln!(s, "# n = {}, p = {}, sites = {}", data.n(), data.p(), data.m());
    let _ = writeln!(s, "# frailty = {}", frailty.name());
    if let FrailtySpec::Grf(g) = frailty {
        let phi0 = g.phi0();
        let _ = writeln!(s, "# phi0 = {}", fmt_num(phi0));
        let _ = writeln!(s, "# b_phi = {}", fmt_num(m.b_phi.unwrap_or((m.a_phi - 1.0) / phi0)));
    }
    if m.selection && data.p() > 0 {
        let _ = writeln!(s, "# g (selection) = {}", fmt_num(g_scale_with(m.g_m, m.g_q, data.p())));
    }
    let design = Design::new(data, &m.nonlinear, m.spline_basis)?;
    for t in design.splines() {
        let _ = writeln!(
            s,
            "# g (spline on {}) = {}",
            data.covariate_names()[t.covariate],
            fmt_num(g_scale_with(m.g_m, m.g_q, t.k()))
        );
    }
    let _ = writeln!(s, "# iterations = {}", m.total_iterations());
    Ok(s)
}

fn criteria_map(c: &Criteria) -> BTreeMap<String, f64> {
    [("lpml", c.lpml), ("dic", c.dic), ("pd", c.pd), ("waic", c.waic), ("pw", c.pw)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

pub fn fit(args: FitArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply(&mut cfg, args.overrides);
    if let Some(out) = args.out {
        cfg.output = Some(out);
    }
    cfg.resolve()?;
    let data = cfg.load_data()?;
    let frailty = cfg.frailty_spec(&data)?;
    if args.dry_run {
        print!("{}", cfg.to_toml());
        print!("{}", derived_settings(&cfg, &data, &frailty)?);
        return Ok(());
    }
    let out = cfg
        .output
        .clone()
        .ok_or_else(|| Error::Config("no output directory (use --out or `output` in the config)".into()))?;
    absolutize(&mut cfg)?;
    create_dir(&out)?;
    let mut archive = run_chain(&data, &frailty, &cfg.mcmc)?;
    let crit = match criteria(&archive) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("criteria unavailable: {e}");
            None
        }
    };
    if let Some(c) = &crit {
        archive.meta.criteria = criteria_map(c);
    }
    archive.meta.run = Some(serde_json::to_value(&cfg)?);
    archive.save(&out)?;
    let summary = report::summary(&archive, crit.as_ref());
    write_file(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn sim_design(name: DesignName, model: tbpsurv::models::ModelKind, seed: u64) -> SimDesign {
    match name {
        DesignName::Icar => SimDesign::icar_design(model),
        DesignName::Grf => SimDesign::grf_design(model, seed),
        DesignName::Sel1 => SimDesign::selection_example(CovariateDesign::Selection5),
        DesignName::Sel2 => SimDesign::selection_example(CovariateDesign::Selection5Collinear),
        DesignName::Sel3 => SimDesign::selection_example(CovariateDesign::Selection10),
    }
}

fn is_selection(name: DesignName) -> bool {
    matches!(name, DesignName::Sel1 | DesignName::Sel2 | DesignName::Sel3)
}

fn frailty_for(design: &SimDesign) -> Result<FrailtySpec> {
    Ok(match &design.frailty {
        FrailtyTruth::None => FrailtySpec::None,
        FrailtyTruth::Iid { .. } => FrailtySpec::Iid,
        FrailtyTruth::Icar { adjacency, .. } => FrailtySpec::Icar(adjacency.clone()),
        FrailtyTruth::Grf { coords, nu, .. } => FrailtySpec::Grf(GrfSpec::new(coords.clone(), *nu, None)?),
    })
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let design = sim_design(args.design, args.model, args.seed);
    let sim = simgen::generate(&design, args.seed)?;
    create_dir(&args.out)?;
    let out = absolute(&args.out)?;
    let data_path = out.join("data.csv");
    sim.dataset.write_csv(&data_path)?;

    let mut cfg = RunConfig::default();
    cfg.output = Some(out.join("fit"));
    cfg.data.path = Some(data_path);
    cfg.data.trunc = Some("trunc".into());
    cfg.data.covariates = sim.dataset.covariate_names().to_vec();
    cfg.mcmc.model = design.model;
    cfg.mcmc.seed = args.seed;
    cfg.mcmc.selection = is_selection(args.design);
    let (tau2, phi) = match &design.frailty {
        FrailtyTruth::Icar { tau2, .. } => {
            let adj = out.join("adjacency.txt");
            write_file(&adj, simgen::HEX37_ADJACENCY)?;
            cfg.data.location = Some("loc".into());
            cfg.data.adjacency = Some(adj);
            cfg.frailty.kind = FrailtyKind::Icar;
            (Some(*tau2), None)
        }
        FrailtyTruth::Grf { tau2, phi, nu, .. } => {
            cfg.data.coords = Some(["x".into(), "y".into()]);
            cfg.frailty.kind = FrailtyKind::Grf;
            cfg.frailty.nu = *nu;
            (Some(*tau2), Some(*phi))
        }
        FrailtyTruth::Iid { tau2, .. } => {
            cfg.data.location = Some("loc".into());
            cfg.frailty.kind = FrailtyKind::Iid;
            (Some(*tau2), None)
        }
        FrailtyTruth::None => (None, None),
    };
    write_file(&out.join("fit.toml"), &cfg.to_toml())?;
    let truth = json!({
        "model": design.model,
        "seed": args.seed,
        "covariates": sim.dataset.covariate_names(),
        "beta": design.beta,
        "tau2": tau2,
        "phi": phi,
        "frailties": sim.frailties,
        "times": sim.times,
    });
    write_file(&out.join("truth.json"), &serde_json::to_string_pretty(&truth)?)?;
    println!(
        "wrote {} records at {} sites to {}",
        sim.dataset.n(),
        sim.dataset.m(),
        out.display()
    );
    Ok(())
}

/// Per-record log-likelihood of every stored draw, evaluated from scratch.
fn recompute_loglik(archive: &PosteriorArchive, data: &tbpsurv::data::Dataset) -> Result<Vec<Vec<f64>>> {
    let cfg = &archive.meta.config;
    let design = Design::new(data, &cfg.nonlinear, cfg.spline_basis)?;
    let obs = data.observations();
    Ok((0..archive.len())
        .map(|l| {
            let base = archive.baseline(l);
            let xb = design.xb(&archive.coef_eff(l));
            let etas = linear_predictors(obs, &xb, archive.frailties(l));
            obs.iter()
                .zip(&etas)
                .map(|(o, &eta)| obs_loglik(cfg.model, o, eta, &base))
                .collect()
        })
        .collect())
}

pub fn diagnose(args: DiagnoseArgs) -> Result<()> {
    let archive = PosteriorArchive::load(&args.fit)?;
    let run = archive
        .meta
        .run
        .clone()
        .ok_or_else(|| Error::Config(format!("{} carries no run configuration", args.fit.display())))?;
    let cfg: RunConfig = serde_json::from_value(run)?;
    let data = cfg.load_data()?;
    if data.n() != archive.meta.n {
        return Err(Error::Config(format!(
            "data have {} records but the fit used {}",
            data.n(),
            archive.meta.n
        )));
    }
    let out = args.out.clone().unwrap_or_else(|| args.fit.clone());
    create_dir(&out)?;

    let draws = overlay_draws(archive.len(), args.draws);
    let samples = coxsnell_residuals(&archive, &data, &draws)?;
    let points = residual_plot_data(&samples);
    write_file(&out.join("coxsnell.csv"), &report::coxsnell_csv(&points))?;
    if args.svg {
        write_file(&out.join("coxsnell.svg"), &report::coxsnell_svg(&points))?;
    }

    let ll = recompute_loglik(&archive, &data)?;
    let cpo = lpml(&ll)?;
    let (waic_v, _) = waic(&ll)?;
    let totals: Vec<f64> = ll.iter().map(|r| r.iter().sum()).collect();
    let mut s = String::new();
    let _ = writeln!(s, "residual draws {}  points {}", draws.len(), points.len());
    if let Some(b) = slope(&points) {
        let _ = writeln!(s, "residual slope {}", fmt_num(b));
    }
    let _ = writeln!(s, "LPML recomputed {}", fmt_num(cpo.lpml));
    if let Some(stored) = archive.meta.criteria.get("lpml") {
        let _ = writeln!(s, "LPML stored     {}  (difference {})", fmt_num(*stored), fmt_num(cpo.lpml - stored));
    }
    if let Some(at_mean) = archive.meta.loglik_at_mean {
        let (d, _) = dic(&totals, at_mean)?;
        let _ = writeln!(s, "DIC recomputed  {}", fmt_num(d));
    }
    let _ = writeln!(s, "WAIC recomputed {}", fmt_num(waic_v));
    write_file(&out.join("diagnose.txt"), &s)?;
    print!("{s}");
    Ok(())
}

struct Replicate {
    seed: u64,
    estimates: Vec<Estimate>,
    tau2_median: Option<f64>,
}

fn estimate(series: &[f64]) -> Estimate {
    let s = tbpsurv::criteria::summarize(series);
    Estimate {
        point: s.mean,
        psd: s.sd,
        lower: s.lower,
        upper: s.upper,
    }
}

pub fn mc_study(args: McStudyArgs) -> Result<()> {
    let mut mcmc = match &args.config {
        Some(p) => RunConfig::load(p)?.mcmc,
        None => McmcConfig::default(),
    };
    mcmc.model = args.model;
    mcmc.selection = is_selection(args.design);
    if let Some(v) = args.nburn {
        mcmc.nburn = v;
    }
    if let Some(v) = args.nsave {
        mcmc.nsave = v;
    }
    if let Some(v) = args.nskip {
        mcmc.nskip = v;
    }
    mcmc.validate()?;
    if args.replicates == 0 {
        return Err(Error::Config("--replicates must be positive".into()));
    }
    let design = sim_design(args.design, args.model, args.seed);
    let frailty = frailty_for(&design)?;
    create_dir(&args.out)?;

    let reps = run_replicates(args.replicates, args.jobs, args.seed, |_, seed| {
        let sim = simgen::generate(&design, seed)?;
        let mut cfg = mcmc.clone();
        cfg.seed = seed;
        let archive = run_chain(&sim.dataset, &frailty, &cfg)?;
        let p = design.beta.len();
        let coefs: Vec<Vec<f64>> = (0..archive.len()).map(|l| archive.coef_eff(l)).collect();
        let estimates = (0..p)
            .map(|j| estimate(&coefs.iter().map(|c| c[j]).collect::<Vec<_>>()))
            .collect();
        let tau2_median = archive.column("tau2").map(|t| quantile(&t, 0.5));
        Ok(Replicate {
            seed,
            estimates,
            tau2_median,
        })
    })?;

    let names = design.covariates.names();
    let mut csv = String::from("replicate,seed");
    for n in &names {
        let _ = write!(csv, ",{n}_mean,{n}_sd,{n}_lower,{n}_upper");
    }
    csv.push_str(",tau2_median\n");
    for (k, r) in reps.iter().enumerate() {
        let _ = write!(csv, "{k},{}", r.seed);
        for e in &r.estimates {
            let _ = write!(
                csv,
                ",{},{},{},{}",
                fmt_num(e.point),
                fmt_num(e.psd),
                fmt_num(e.lower),
                fmt_num(e.upper)
            );
        }
        let _ = writeln!(csv, ",{}", r.tau2_median.map(fmt_num).unwrap_or_default());
    }
    write_file(&args.out.join("replicates.csv"), &csv)?;

    let mut s = format!(
        "design {}  model {}  replicates {}\n\n{:<8} {:>8} {:>14} {:>14} {:>14} {:>8}\n",
        design_label(args.design),
        args.model,
        reps.len(),
        "param",
        "truth",
        "bias",
        "psd",
        "sd(est)",
        "cp"
    );
    for (j, n) in names.iter().enumerate() {
        let est: Vec<Estimate> = reps.iter().map(|r| r.estimates[j]).collect();
        let c = coverage_summary(&est, design.beta[j]);
        let _ = writeln!(
            s,
            "{:<8} {:>8} {:>14.6e} {:>14.6e} {:>14.6e} {:>8.3}",
            n, design.beta[j], c.bias, c.psd, c.sd_est, c.coverage
        );
    }
    let medians: Vec<f64> = reps.iter().filter_map(|r| r.tau2_median).collect();
    if let (false, FrailtyTruth::Icar { tau2, .. } | FrailtyTruth::Grf { tau2, .. } | FrailtyTruth::Iid { tau2, .. }) =
        (medians.is_empty(), &design.frailty)
    {
        let bias = tbpsurv::numeric::mean(&medians) - tau2;
        let _ = writeln!(s, "\ntau2 median bias {bias:.6e}");
    }
    write_file(&args.out.join("coverage.txt"), &s)?;
    print!("{s}");
    Ok(())
}

fn design_label(d: DesignName) -> &'static str {
    match d {
        DesignName::Icar => "icar",
        DesignName::Grf => "grf",
        DesignName::Sel1 => "sel1",
        DesignName::Sel2 => "sel2",
        DesignName::Sel3 => "sel3",
    }
}
