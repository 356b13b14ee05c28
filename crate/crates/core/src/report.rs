//! CSV and JSON emitters for analysis results.
//!
//! | file | columns |
//! |---|---|
//! | `fig1_std_curve.csv` | `round, mean_std, sem, count, n, fit` |
//! | `table1_disagreement.csv` | `group, mean_std, sem, n, delta, se_delta, z, p_value` |
//! | `fig2_distributions.csv` | `which, class, mean_fraction, sem, n` |
//! | `fig3_p_bins.csv` | `p_lo, p_hi, n, round, mean_std, sem` |
//! | `fig4_halving.csv` | `lambda2_lo, lambda2_hi, lambda2_center, n, mean_halving, sem, theory` |
//! | `spectral.csv` | `experiment, lambda2_mod, halving_time_theory, halving_time_empirical` |
//!
//! Missing values are empty cells.

use std::fs::File;
use std::path::Path;

use serde::Serialize;

use crate::analysis::{CurveWithSem, DecayFit, GroupComparison, GroupStats, HalvingReport, PBinReport, StanceHistogram};
use crate::scoring::Stance;

pub const FIG1_FILE: &str = "fig1_std_curve.csv";
pub const TABLE1_FILE: &str = "table1_disagreement.csv";
pub const FIG2_FILE: &str = "fig2_distributions.csv";
pub const FIG3_FILE: &str = "fig3_p_bins.csv";
pub const FIG4_FILE: &str = "fig4_halving.csv";
pub const SPECTRAL_FILE: &str = "spectral.csv";
pub const SUMMARY_FILE: &str = "summary.json";

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn writer(path: &Path) -> csv::Result<csv::Writer<File>> {
    csv::Writer::from_path(path)
}

pub fn write_fig1(path: &Path, curve: &CurveWithSem, fit: Option<&DecayFit>) -> csv::Result<()> {
    let mut w = writer(path)?;
    w.write_record(["round", "mean_std", "sem", "count", "n", "fit"])?;
    for i in 0..curve.x.len() {
        w.write_record([
            curve.x[i].to_string(),
            curve.mean[i].to_string(),
            curve.sem[i].to_string(),
            curve.counts[i].to_string(),
            curve.n.to_string(),
            cell(fit.map(|f| f.eval(curve.x[i] as f64))),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table1(path: &Path, groups: &[(String, GroupStats)], comparison: Option<&GroupComparison>) -> csv::Result<()> {
    let mut w = writer(path)?;
    w.write_record(["group", "mean_std", "sem", "n", "delta", "se_delta", "z", "p_value"])?;
    for (name, g) in groups {
        w.write_record([name.clone(), g.mean.to_string(), g.sem.to_string(), g.n.to_string(), String::new(), String::new(), String::new(), String::new()])?;
    }
    if let Some(c) = comparison {
        w.write_record([
            "difference".to_string(),
            String::new(),
            String::new(),
            String::new(),
            c.delta.to_string(),
            c.se_delta.to_string(),
            c.z.to_string(),
            c.p_value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_fig2(path: &Path, hists: &[StanceHistogram]) -> csv::Result<()> {
    let mut w = writer(path)?;
    w.write_record(["which", "class", "mean_fraction", "sem", "n"])?;
    for h in hists {
        let which = serde_json::to_value(h.which).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        for s in Stance::ALL {
            let i = s.index();
            w.write_record([which.clone(), s.as_str().to_string(), h.mean[i].to_string(), h.sem[i].to_string(), h.n.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_fig3(path: &Path, report: &PBinReport) -> csv::Result<()> {
    let mut w = writer(path)?;
    w.write_record(["p_lo", "p_hi", "n", "round", "mean_std", "sem"])?;
    for b in &report.bins {
        match &b.curve {
            Some(c) => {
                for i in 0..c.x.len() {
                    w.write_record([
                        b.lo.to_string(),
                        b.hi.to_string(),
                        b.n.to_string(),
                        c.x[i].to_string(),
                        c.mean[i].to_string(),
                        c.sem[i].to_string(),
                    ])?;
                }
            }
            None => w.write_record([b.lo.to_string(), b.hi.to_string(), "0".into(), String::new(), String::new(), String::new()])?,
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_fig4(path: &Path, report: &HalvingReport) -> csv::Result<()> {
    let mut w = writer(path)?;
    w.write_record(["lambda2_lo", "lambda2_hi", "lambda2_center", "n", "mean_halving", "sem", "theory"])?;
    for b in &report.bins {
        w.write_record([
            b.lo.to_string(),
            b.hi.to_string(),
            b.center.to_string(),
            b.n.to_string(),
            cell(b.mean),
            cell(b.sem),
            cell(b.theory),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralRow {
    pub experiment: String,
    pub lambda2_mod: Option<f64>,
    pub halving_time_theory: Option<f64>,
    pub halving_time_empirical: Option<f64>,
}

pub fn write_spectral(path: &Path, rows: &[SpectralRow]) -> csv::Result<()> {
    let mut w = writer(path)?;
    w.write_record(["experiment", "lambda2_mod", "halving_time_theory", "halving_time_empirical"])?;
    for r in rows {
        w.write_record([r.experiment.clone(), cell(r.lambda2_mod), cell(r.halving_time_theory), cell(r.halving_time_empirical)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<T: Serialize>(path: &Path, summary: &T) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(summary).map_err(std::io::Error::other)?;
    std::fs::write(path, text + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{bin_halving_points, HalvingPoint, Which};

    #[test]
    fn csv_headers_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let curve = CurveWithSem { x: vec![0, 1], mean: vec![0.4, 0.2], sem: vec![0.01, 0.0], counts: vec![2, 2], n: 2 };
        let p = dir.path().join(FIG1_FILE);
        write_fig1(&p, &curve, None).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), "round,mean_std,sem,count,n,fit");
        assert_eq!(text.lines().nth(1).unwrap(), "0,0.4,0.01,2,2,");

        let hist = StanceHistogram { which: Which::Final, mean: [0.0, 0.25, 0.75], sem: [0.0; 3], n: 4 };
        let p = dir.path().join(FIG2_FILE);
        write_fig2(&p, &[hist]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("final,for,0.75,0,4"));

        let pts = [HalvingPoint { lambda2_mod: 0.5, halving_time: 1.0 }, HalvingPoint { lambda2_mod: 0.9, halving_time: 6.0 }];
        let report = HalvingReport {
            points: pts.to_vec(),
            bins: bin_halving_points(&pts, 4).unwrap(),
            excluded_unreconstructible: 0,
            excluded_zero_spread: 0,
            excluded_never_halving: 0,
        };
        let p = dir.path().join(FIG4_FILE);
        write_fig4(&p, &report).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().next().unwrap().ends_with(",theory"));
    }
}
