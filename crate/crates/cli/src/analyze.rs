//! `opinet analyze`: curves, tables and spectral statistics over a corpus.

use std::ops::Range;
use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::{json, Value};

use opinet_core::analysis::{
    compare_groups, curves_by_p_bins, final_disagreement_with, fit_exponential_decay, halving_vs_lambda2,
    opinion_distributions, record_std_series, std_curve_with, summarize_predictions, Which, DEFAULT_P_BIN_EDGES,
};
use opinet_core::dataset::{corpus_files, read_record_with, reconstruct_matrix, AliasTable, CorpusFilter, ExperimentRecord};
use opinet_core::degroot::{halving_time_from_series, StdDivisor};
use opinet_core::report::{self, SpectralRow};
use opinet_core::spectral::{second_eigenvalue_modulus, theoretical_halving_time};

use crate::config::Resolver;
use crate::{CliError, ReadArgs};

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub read: ReadArgs,
    /// Corpus root (`<model>/<setting>/<group>/*.json`).
    #[arg(long)]
    pub corpus: Option<String>,
    /// Model folder to select.
    #[arg(long)]
    pub model: Option<String>,
    /// main or ablation.
    #[arg(long)]
    pub setting: Option<String>,
    /// Topic folder (or ablation kind) to select.
    #[arg(long)]
    pub topic: Option<String>,
    /// Output directory. [default: analysis]
    #[arg(long)]
    pub out: Option<String>,
    /// Two groups for the disagreement table, as A:B. `weighted` means
    /// main, `weightless` the weightless ablation; other names are folders.
    #[arg(long)]
    pub compare: Option<String>,
    /// Disagreement curve and decay fit.
    #[arg(long)]
    pub fig1: bool,
    /// Final disagreement table and prediction error.
    #[arg(long)]
    pub table1: bool,
    /// Initial and final stance distributions.
    #[arg(long)]
    pub fig2: bool,
    /// Disagreement curves by edge-probability bin.
    #[arg(long)]
    pub fig3: bool,
    /// Halving time against |lambda2|.
    #[arg(long)]
    pub fig4: bool,
    /// Bins on the |lambda2| axis. [default: 30]
    #[arg(long)]
    pub bins: Option<usize>,
    /// Comma-separated edge-probability bin edges. [default: 0.15,0.2,0.25,0.3,0.35,1]
    #[arg(long)]
    pub p_bins: Option<String>,
    /// Divide by K instead of K - 1 in the disagreement STD.
    #[arg(long)]
    pub population_std: bool,
    /// Rounds used by the decay fit, as START..END (END exclusive).
    #[arg(long)]
    pub fit_range: Option<String>,
    /// Parallel file reads. [default: 1]
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Outputs {
    fig1: bool,
    table1: bool,
    fig2: bool,
    fig3: bool,
    fig4: bool,
}

fn parse_edges(text: &str) -> Result<Vec<f64>, CliError> {
    let edges: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| CliError::config(format!("p_bins: {t:?}: {e}"))))
        .collect::<Result<_, _>>()?;
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::config("p_bins needs at least two increasing edges"));
    }
    Ok(edges)
}

fn parse_range(text: &str) -> Result<Range<usize>, CliError> {
    let bad = || CliError::config(format!("fit_range {text:?}: expected START..END"));
    let (a, b) = text.split_once("..").ok_or_else(bad)?;
    let start: usize = a.trim().parse().map_err(|_| bad())?;
    let end: usize = b.trim().parse().map_err(|_| bad())?;
    if end <= start {
        return Err(bad());
    }
    Ok(start..end)
}

fn group_filter(name: &str, model: &Option<String>) -> CorpusFilter {
    let (setting, group) = match name.to_ascii_lowercase().as_str() {
        "weighted" | "main" => (Some("main".to_string()), None),
        "weightless" => (Some("ablation".to_string()), Some("weightless".to_string())),
        other => (None, Some(other.to_string())),
    };
    CorpusFilter { model: model.clone(), setting, group }
}

struct Selection {
    entries: Vec<(PathBuf, ExperimentRecord)>,
    skipped: Vec<(PathBuf, String)>,
}

impl Selection {
    fn records(&self) -> Vec<&ExperimentRecord> {
        self.entries.iter().map(|(_, r)| r).collect()
    }
}

/// Reads matching files on `jobs` threads; results keep path order.
fn load(root: &Path, filter: &CorpusFilter, aliases: &AliasTable, jobs: usize) -> Result<Selection, CliError> {
    let files = corpus_files(root, filter).map_err(|e| CliError::config(e.to_string()))?;
    let chunk = files.len().div_ceil(jobs.max(1)).max(1);
    let results: Vec<Vec<(PathBuf, Result<ExperimentRecord, String>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = files
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|(p, _)| (p.clone(), read_record_with(p, aliases).map_err(|e| e.to_string())))
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("reader thread panicked")).collect()
    });
    let mut sel = Selection { entries: Vec::new(), skipped: Vec::new() };
    for (path, r) in results.into_iter().flatten() {
        match r {
            Ok(rec) => sel.entries.push((path, rec)),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                sel.skipped.push((path, e));
            }
        }
    }
    Ok(sel)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::failure(format!("writing {}: {e}", path.display()))
}

fn spectral_rows(root: &Path, sel: &Selection) -> Vec<SpectralRow> {
    sel.entries
        .iter()
        .map(|(path, rec)| {
            let lambda2 = reconstruct_matrix(rec).ok().and_then(|a| second_eigenvalue_modulus(&a).ok());
            let empirical = record_std_series(rec, StdDivisor::Sample)
                .into_iter()
                .collect::<Option<Vec<f64>>>()
                .and_then(|s| halving_time_from_series(&s).ok().flatten());
            SpectralRow {
                experiment: path.strip_prefix(root).unwrap_or(path).display().to_string(),
                lambda2_mod: lambda2,
                halving_time_theory: lambda2.and_then(|l| theoretical_halving_time(l).ok()),
                halving_time_empirical: empirical,
            }
        })
        .collect()
}

fn error_value(e: impl std::fmt::Display) -> Value {
    json!({ "error": e.to_string() })
}

pub fn run(args: AnalyzeArgs, r: &mut Resolver) -> Result<(), CliError> {
    let corpus = r
        .get_opt("corpus", args.corpus.clone())?
        .ok_or_else(|| CliError::config("--corpus is required"))?;
    let model = r.get_opt("model", args.model.clone())?;
    let setting = r.get_opt("setting", args.setting.clone())?;
    let topic = r.get_opt("topic", args.topic.clone())?;
    let out = PathBuf::from(r.get("out", args.out.clone(), "analysis".to_string())?);
    let compare = r.get_opt("compare", args.compare.clone())?;
    let mut outputs = Outputs {
        fig1: r.switch("fig1", args.fig1)?,
        table1: r.switch("table1", args.table1)?,
        fig2: r.switch("fig2", args.fig2)?,
        fig3: r.switch("fig3", args.fig3)?,
        fig4: r.switch("fig4", args.fig4)?,
    };
    if !(outputs.fig1 || outputs.table1 || outputs.fig2 || outputs.fig3 || outputs.fig4) {
        outputs = Outputs { fig1: true, table1: true, fig2: true, fig3: true, fig4: true };
    }
    let bins = r.get("bins", args.bins, 30usize)?;
    let default_edges = DEFAULT_P_BIN_EDGES.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
    let edges = parse_edges(&r.get("p_bins", args.p_bins.clone(), default_edges)?)?;
    let divisor = if r.switch("population_std", args.population_std)? { StdDivisor::Population } else { StdDivisor::Sample };
    let fit_range = r.get_opt("fit_range", args.fit_range.clone())?.map(|t| parse_range(&t)).transpose()?;
    let jobs = r.get("jobs", args.jobs, 1usize)?;
    let aliases = args.read.aliases(r)?;
    r.reject_unknown()?;
    if bins == 0 || jobs == 0 {
        return Err(CliError::config("bins and jobs must be at least 1"));
    }
    let groups = compare
        .as_deref()
        .map(|c| {
            c.split_once(':')
                .filter(|(a, b)| !a.is_empty() && !b.is_empty())
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .ok_or_else(|| CliError::config(format!("compare {c:?}: expected A:B")))
        })
        .transpose()?;
    eprint!("{}", r.header("analyze"));

    let root = PathBuf::from(&corpus);
    let filter = CorpusFilter { model: model.clone(), setting, group: topic };
    let sel = load(&root, &filter, &aliases, jobs)?;
    if sel.entries.is_empty() {
        return Err(CliError::failure(format!("no records selected under {corpus}")));
    }
    let records = sel.records();
    std::fs::create_dir_all(&out).map_err(|e| CliError::failure(format!("cannot create {}: {e}", out.display())))?;

    let mut summary = serde_json::Map::new();
    summary.insert("config".into(), r.to_json("analyze"));
    summary.insert(
        "selection".into(),
        json!({
            "records": sel.entries.len(),
            "skipped": sel.skipped.iter().map(|(p, e)| json!({"path": p.display().to_string(), "error": e})).collect::<Vec<_>>(),
        }),
    );

    if outputs.fig1 {
        let path = out.join(report::FIG1_FILE);
        let curve = std_curve_with(&records, divisor).map_err(|e| CliError::failure(e.to_string()))?;
        let fit = fit_exponential_decay(&curve.mean, fit_range.clone());
        if let Err(e) = &fit {
            log::warn!("decay fit failed: {e}");
        }
        report::write_fig1(&path, &curve, fit.as_ref().ok()).map_err(csv_err(&path))?;
        summary.insert("fit".into(), fit.map_or_else(error_value, |f| json!(f)));
    }

    if outputs.table1 {
        let path = out.join(report::TABLE1_FILE);
        let mut stats = Vec::new();
        let mut counts = serde_json::Map::new();
        match &groups {
            Some((a, b)) => {
                for name in [a, b] {
                    let g = load(&root, &group_filter(name, &model), &aliases, jobs)?;
                    if g.entries.is_empty() {
                        return Err(CliError::failure(format!("compare group {name:?} selects no records")));
                    }
                    counts.insert(name.clone(), json!({"records": g.entries.len(), "skipped": g.skipped.len()}));
                    let st = final_disagreement_with(&g.records(), divisor).map_err(|e| CliError::failure(e.to_string()))?;
                    stats.push((name.clone(), st));
                }
            }
            None => {
                let st = final_disagreement_with(&records, divisor).map_err(|e| CliError::failure(e.to_string()))?;
                stats.push(("selection".to_string(), st));
            }
        }
        let comparison = (stats.len() == 2).then(|| compare_groups(stats[0].1, stats[1].1));
        report::write_table1(&path, &stats, comparison.as_ref()).map_err(csv_err(&path))?;
        summary.insert(
            "table1".into(),
            json!({
                "groups": stats.iter().map(|(n, s)| json!({"group": n, "mean_std": s.mean, "sem": s.sem, "n": s.n})).collect::<Vec<_>>(),
                "group_selection": counts,
                "comparison": comparison,
            }),
        );
        summary.insert(
            "prediction".into(),
            summarize_predictions(&records).map_or_else(error_value, |p| json!(p)),
        );
    }

    if outputs.fig2 {
        let path = out.join(report::FIG2_FILE);
        let hists = [Which::Initial, Which::Final]
            .into_iter()
            .map(|w| opinion_distributions(&records, w))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::failure(e.to_string()))?;
        report::write_fig2(&path, &hists).map_err(csv_err(&path))?;
        summary.insert("fig2".into(), json!(hists));
    }

    if outputs.fig3 {
        let path = out.join(report::FIG3_FILE);
        let rep = curves_by_p_bins(&records, &edges).map_err(|e| CliError::failure(e.to_string()))?;
        report::write_fig3(&path, &rep).map_err(csv_err(&path))?;
        summary.insert(
            "fig3".into(),
            json!({
                "bins": rep.bins.iter().map(|b| json!({"lo": b.lo, "hi": b.hi, "n": b.n})).collect::<Vec<_>>(),
                "without_p": rep.without_p,
                "out_of_range": rep.out_of_range,
            }),
        );
    }

    if outputs.fig4 {
        let path = out.join(report::FIG4_FILE);
        match halving_vs_lambda2(&records, bins) {
            Ok(rep) => {
                report::write_fig4(&path, &rep).map_err(csv_err(&path))?;
                summary.insert(
                    "fig4".into(),
                    json!({
                        "points": rep.points.len(),
                        "excluded_unreconstructible": rep.excluded_unreconstructible,
                        "excluded_zero_spread": rep.excluded_zero_spread,
                        "excluded_never_halving": rep.excluded_never_halving,
                    }),
                );
            }
            Err(e) => {
                log::warn!("halving report failed: {e}");
                summary.insert("fig4".into(), error_value(e));
            }
        }
        let path = out.join(report::SPECTRAL_FILE);
        report::write_spectral(&path, &spectral_rows(&root, &sel)).map_err(csv_err(&path))?;
    }

    let path = out.join(report::SUMMARY_FILE);
    report::write_summary(&path, &Value::Object(summary))
        .map_err(|e| CliError::failure(format!("writing {}: {e}", path.display())))?;
    println!("{} records analysed ({} skipped); results in {}", sel.entries.len(), sel.skipped.len(), out.display());
    Ok(())
}
