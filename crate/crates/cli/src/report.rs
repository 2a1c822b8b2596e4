//! Text and SVG outputs.

use std::fmt::Write as _;
use std::path::Path;

use tbpsurv::archive::PosteriorArchive;
use tbpsurv::criteria::{ess, summarize, Criteria};
use tbpsurv::data::fmt_num;
use tbpsurv::diagnostics::PlotPoint;
use tbpsurv::{Error, Result};

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Posterior summary: one row per parameter, then acceptance rates,
/// criteria and (under selection) the sub-model table. Quantiles use linear
/// interpolation between order statistics.
pub fn summary(archive: &PosteriorArchive, crit: Option<&Criteria>) -> String {
    let meta = &archive.meta;
    let cfg = &meta.config;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "model {}  frailty {}  n {}  draws {}  (nburn {}, nskip {}, seed {})",
        cfg.model,
        meta.frailty,
        meta.n,
        archive.len(),
        cfg.nburn,
        cfg.nskip,
        cfg.seed
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<16} {:>14} {:>14} {:>14} {:>14} {:>14} {:>10}",
        "parameter", "mean", "median", "sd", "2.5%", "97.5%", "ess"
    );
    if !archive.is_empty() {
        for (k, name) in meta.columns.iter().enumerate() {
            let series = archive.series(k);
            let p = summarize(&series);
            let e = ess(&series).map_or_else(|_| "NA".to_string(), |e| format!("{:.1}", e.value));
            let _ = writeln!(
                s,
                "{:<16} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e} {:>10}",
                name, p.mean, p.median, p.sd, p.lower, p.upper, e
            );
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "acceptance");
    for (block, rate) in &meta.acceptance {
        let _ = writeln!(s, "  {block:<8} {rate:.4}");
    }
    if meta.nonfinite_rejections > 0 {
        let _ = writeln!(s, "  non-finite proposals rejected: {}", meta.nonfinite_rejections);
    }
    if let Some(c) = crit {
        let _ = writeln!(s);
        let _ = writeln!(s, "criteria");
        let _ = writeln!(s, "  LPML {}", fmt_num(c.lpml));
        let _ = writeln!(s, "  DIC  {}  (pD {})", fmt_num(c.dic), fmt_num(c.pd));
        let _ = writeln!(s, "  WAIC {}  (pW {})", fmt_num(c.waic), fmt_num(c.pw));
    }
    if cfg.selection && !archive.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "submodels");
        for (set, p) in archive.submodel_frequencies() {
            let names: Vec<&str> = set.iter().map(|&j| meta.covariate_names[j].as_str()).collect();
            let label = if names.is_empty() { "(none)".to_string() } else { names.join(",") };
            let _ = writeln!(s, "  {label:<24} {p:.4}");
        }
    }
    s
}

pub fn coxsnell_csv(points: &[PlotPoint]) -> String {
    let mut s = String::from("draw_id,r,cumhaz\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.draw, fmt_num(p.r), fmt_num(p.cumhaz));
    }
    s
}

/// Scatter of the residual traces against the identity line.
pub fn coxsnell_svg(points: &[PlotPoint]) -> String {
    let (w, h, pad) = (480.0, 480.0, 40.0);
    let top = points
        .iter()
        .flat_map(|p| [p.r, p.cumhaz])
        .filter(|v| v.is_finite())
        .fold(1.0f64, f64::max);
    let sx = |v: f64| pad + (w - 2.0 * pad) * v / top;
    let sy = |v: f64| h - pad - (h - 2.0 * pad) * v / top;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4 3"/>"#,
        sx(0.0),
        sy(0.0),
        sx(top),
        sy(top)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{} {} L{} {} L{} {}" fill="none" stroke="black"/>"#,
        sx(0.0),
        sy(top),
        sx(0.0),
        sy(0.0),
        sx(top),
        sy(0.0)
    );
    for p in points.iter().filter(|p| p.r.is_finite() && p.cumhaz.is_finite()) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="steelblue" fill-opacity="0.5"/>"#,
            sx(p.r),
            sy(p.cumhaz)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">residual</text>"#,
        w / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 12 {})">cumulative hazard</text>"#,
        h / 2.0,
        h / 2.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_is_balanced() {
        let pts = vec![
            PlotPoint { draw: 0, r: 0.0, cumhaz: 0.0 },
            PlotPoint { draw: 0, r: 1.5, cumhaz: 1.4 },
        ];
        let svg = coxsnell_svg(&pts);
        assert!(svg.starts_with("<?xml"));
        assert_eq!(svg.matches("<svg").count(), 1);
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 2);
    }

    #[test]
    fn csv_header_and_rows() {
        let pts = vec![PlotPoint { draw: 3, r: 0.5, cumhaz: 0.25 }];
        assert_eq!(coxsnell_csv(&pts), "draw_id,r,cumhaz\n3,5e-1,2.5e-1\n");
    }
}
