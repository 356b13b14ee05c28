//! Statistics over sets of experiment records: disagreement curves, decay
//! fits, final-opinion summaries, group comparisons, prediction error against
//! the DeGroot limit, stance histograms and halving-time binning.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::dataset::{reconstruct_matrix, DatasetError, ExperimentRecord};
use crate::degroot::{halving_time_from_series, std_with, StdDivisor};
use crate::spectral::{predict_consensus, second_eigenvalue_modulus, theoretical_halving_time, SpectralError};
use crate::scoring::{discretize, Stance};

pub const FINAL_WINDOW: usize = 10;
pub const FIT_GRID_STEPS: usize = 200;
pub const DEFAULT_P_BIN_EDGES: [f64; 6] = [0.15, 0.20, 0.25, 0.30, 0.35, 1.0];

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no data: {0}")]
    Empty(String),
    #[error("need at least {needed} points, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("curve is not decaying")]
    NotDecaying,
    #[error("missing initial score for agents {0:?}")]
    MissingInitialScores(Vec<usize>),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard error of the mean with the sample divisor; `None` below two values.
pub fn sem(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let m = mean(values);
    let var = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((var / n as f64).sqrt())
}

/// Mean, SEM and count of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub mean: f64,
    /// Zero for a single observation.
    pub sem: f64,
    pub n: usize,
}

impl GroupStats {
    pub fn new(mean: f64, sem: f64, n: usize) -> Self {
        GroupStats { mean, sem, n }
    }

    pub fn from_values(values: &[f64]) -> Result<Self, AnalysisError> {
        if values.is_empty() {
            return Err(AnalysisError::Empty("no values".into()));
        }
        Ok(GroupStats { mean: mean(values), sem: sem(values).unwrap_or(0.0), n: values.len() })
    }
}

/// Per-round mean across experiments with its SEM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveWithSem {
    pub x: Vec<usize>,
    pub mean: Vec<f64>,
    /// Zero where only one experiment contributes.
    pub sem: Vec<f64>,
    /// Experiments contributing to each round.
    pub counts: Vec<usize>,
    /// Experiments in the set.
    pub n: usize,
}

/// Cross-agent STD per round, dropping missing scores; `None` where fewer
/// than two scores are present.
pub fn record_std_series(record: &ExperimentRecord, divisor: StdDivisor) -> Vec<Option<f64>> {
    record
        .stance_scores
        .iter()
        .map(|row| {
            let present: Vec<f64> = row.iter().flatten().copied().collect();
            std_with(&present, divisor).ok()
        })
        .collect()
}

pub fn std_curve(records: &[&ExperimentRecord]) -> Result<CurveWithSem, AnalysisError> {
    std_curve_with(records, StdDivisor::Sample)
}

/// Mean and SEM across records of the per-round STD. Records of unequal
/// length are truncated to the shortest.
pub fn std_curve_with(records: &[&ExperimentRecord], divisor: StdDivisor) -> Result<CurveWithSem, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::Empty("std curve over zero records".into()));
    }
    let series: Vec<Vec<Option<f64>>> = records.iter().map(|r| record_std_series(r, divisor)).collect();
    let len = series.iter().map(Vec::len).min().unwrap_or(0);
    if series.iter().any(|s| s.len() != len) {
        log::info!("records differ in length; truncating curves to {len} rounds");
    }
    let mut curve = CurveWithSem { x: Vec::new(), mean: Vec::new(), sem: Vec::new(), counts: Vec::new(), n: records.len() };
    for t in 0..len {
        let vals: Vec<f64> = series.iter().filter_map(|s| s[t]).collect();
        if vals.is_empty() {
            continue;
        }
        curve.x.push(t);
        curve.mean.push(mean(&vals));
        curve.sem.push(sem(&vals).unwrap_or(0.0));
        curve.counts.push(vals.len());
    }
    Ok(curve)
}

/// `y(t) = a exp(-b t) + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub r_squared: f64,
}

impl DecayFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.a * (-self.b * t).exp() + self.c
    }
}

fn r_squared(t: &[f64], y: &[f64], a: f64, b: f64, c: f64) -> f64 {
    let m = mean(y);
    let ss_tot: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
    let ss_res: f64 = t.iter().zip(y).map(|(ti, yi)| (yi - (a * (-b * ti).exp() + c)).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

/// Log-linear least squares for `(a, b)` at a fixed floor `c`, scored by R²
/// on the original scale. Points with `y <= c` are left out of the log fit.
fn fit_at(t: &[f64], y: &[f64], c: f64) -> Option<DecayFit> {
    let pts: Vec<(f64, f64)> = t.iter().zip(y).filter(|(_, yi)| **yi > c).map(|(ti, yi)| (*ti, (yi - c).ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mz = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxz: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - mz)).sum();
    let slope = sxz / sxx;
    let a = (mz - slope * mt).exp();
    let b = -slope;
    let r2 = r_squared(t, y, a, b, c);
    r2.is_finite().then_some(DecayFit { a, b, c, r_squared: r2 })
}

/// Least-squares `(a, c)` for a fixed rate, with `c` held in `[0, cmax]`.
fn fit_given_rate(t: &[f64], y: &[f64], b: f64, cmax: f64) -> Option<DecayFit> {
    let e: Vec<f64> = t.iter().map(|ti| (-b * ti).exp()).collect();
    let n = e.len() as f64;
    let me = e.iter().sum::<f64>() / n;
    let my = mean(y);
    let see: f64 = e.iter().map(|v| (v - me).powi(2)).sum();
    if see <= 0.0 {
        return None;
    }
    let sey: f64 = e.iter().zip(y).map(|(v, w)| (v - me) * (w - my)).sum();
    let mut a = sey / see;
    let mut c = my - a * me;
    if !(0.0..=cmax).contains(&c) {
        c = c.clamp(0.0, cmax);
        let ee: f64 = e.iter().map(|v| v * v).sum();
        a = e.iter().zip(y).map(|(v, w)| v * (w - c)).sum::<f64>() / ee;
    }
    let r2 = r_squared(t, y, a, b, c);
    r2.is_finite().then_some(DecayFit { a, b, c, r_squared: r2 })
}

/// Golden-section search over the rate around `b0`, solving `(a, c)`
/// exactly at each step.
fn refine_rate(t: &[f64], y: &[f64], b0: f64, cmax: f64) -> Option<DecayFit> {
    let score = |b: f64| fit_given_rate(t, y, b, cmax).map_or(f64::NEG_INFINITY, |f| f.r_squared);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (b0 / 4.0, b0 * 4.0);
    let (mut x1, mut x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut f1, mut f2) = (score(x1), score(x2));
    for _ in 0..200 {
        if hi - lo <= 1e-14 * b0 {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = score(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = score(x1);
        }
    }
    fit_given_rate(t, y, 0.5 * (lo + hi), cmax)
}

fn better(x: Option<DecayFit>, y: Option<DecayFit>) -> Option<DecayFit> {
    match (x, y) {
        (Some(p), Some(q)) => Some(if q.r_squared > p.r_squared { q } else { p }),
        (p, q) => p.or(q),
    }
}

/// Fits `a exp(-b t) + c` to `y` indexed by round. `range` restricts the
/// rounds used. The floor `c` is scanned over 201 evenly spaced values in
/// `[0, min y]`, then refined by golden-section search around the best grid
/// value. A last pass searches the rate directly with `a` and `c` solved in
/// closed form, which matters for fast decays whose tail sits on the floor.
pub fn fit_exponential_decay(y: &[f64], range: Option<Range<usize>>) -> Result<DecayFit, AnalysisError> {
    let range = range.unwrap_or(0..y.len());
    let end = range.end.min(y.len());
    let start = range.start.min(end);
    let t: Vec<f64> = (start..end).map(|i| i as f64).collect();
    let y = &y[start..end];
    if y.len() < 5 {
        return Err(AnalysisError::TooShort { needed: 5, got: y.len() });
    }
    if y.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(AnalysisError::Degenerate("values must be positive".into()));
    }
    let m = mean(y);
    if y.iter().all(|v| (v - m).abs() <= 1e-15 * m.abs().max(1.0)) {
        return Err(AnalysisError::Degenerate("constant curve; decay rate indeterminate".into()));
    }
    let ymin = y.iter().copied().fold(f64::INFINITY, f64::min);
    let step = ymin / FIT_GRID_STEPS as f64;
    let mut best: Option<(usize, DecayFit)> = None;
    for i in 0..=FIT_GRID_STEPS {
        if let Some(f) = fit_at(&t, y, i as f64 * step) {
            if best.is_none_or(|(_, b)| f.r_squared > b.r_squared) {
                best = Some((i, f));
            }
        }
    }
    let (i, mut fit) = best.ok_or_else(|| AnalysisError::Degenerate("y - c is non-positive for every floor".into()))?;
    let (mut lo, mut hi) = ((i as f64 - 1.0).max(0.0) * step, ((i + 1) as f64 * step).min(ymin));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let score = |c: f64| fit_at(&t, y, c).map_or(f64::NEG_INFINITY, |f| f.r_squared);
    let (mut x1, mut x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut f1, mut f2) = (score(x1), score(x2));
    for _ in 0..100 {
        if hi - lo <= 1e-15 * ymin.max(1e-300) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = score(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = score(x1);
        }
    }
    fit = better(Some(fit), fit_at(&t, y, 0.5 * (lo + hi))).expect("grid fit exists");
    if fit.b > 0.0 {
        fit = better(Some(fit), refine_rate(&t, y, fit.b, ymin)).expect("grid fit exists");
    }
    if fit.b <= 0.0 || fit.a <= 0.0 {
        return Err(AnalysisError::NotDecaying);
    }
    Ok(fit)
}

/// Per-agent mean of the last [`FINAL_WINDOW`] rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalOpinions {
    /// `None` for agents with no score in the window.
    pub values: Vec<Option<f64>>,
    /// Rounds averaged.
    pub window: usize,
    /// Set when the record had fewer rounds than the window.
    pub fallback: bool,
}

impl FinalOpinions {
    pub fn present(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }
}

pub fn final_opinions(record: &ExperimentRecord) -> FinalOpinions {
    let rows = &record.stance_scores;
    let fallback = rows.len() < FINAL_WINDOW;
    if fallback {
        log::warn!("record has {} scored rounds; averaging all of them", rows.len());
    }
    let window = rows.len().min(FINAL_WINDOW);
    let tail = &rows[rows.len() - window..];
    let values = (0..record.agents())
        .map(|k| {
            let v: Vec<f64> = tail.iter().filter_map(|r| r.get(k).copied().flatten()).collect();
            (!v.is_empty()).then(|| mean(&v))
        })
        .collect();
    FinalOpinions { values, window, fallback }
}

/// Mean and SEM across records of the cross-agent STD of final opinions.
pub fn final_disagreement(records: &[&ExperimentRecord]) -> Result<GroupStats, AnalysisError> {
    final_disagreement_with(records, StdDivisor::Sample)
}

pub fn final_disagreement_with(records: &[&ExperimentRecord], divisor: StdDivisor) -> Result<GroupStats, AnalysisError> {
    let stds: Vec<f64> = records
        .iter()
        .filter_map(|r| std_with(&final_opinions(r).present(), divisor).ok())
        .collect();
    GroupStats::from_values(&stds).map_err(|_| AnalysisError::Empty("final disagreement over zero records".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub mean_a: f64,
    pub sem_a: f64,
    pub mean_b: f64,
    pub sem_b: f64,
    pub delta: f64,
    pub se_delta: f64,
    /// `f64::INFINITY` when the difference is nonzero with zero standard error.
    pub z: f64,
    /// Two-sided standard-normal tail probability.
    pub p_value: f64,
}

pub fn compare_groups(a: GroupStats, b: GroupStats) -> GroupComparison {
    let delta = (a.mean - b.mean).abs();
    let se_delta = a.sem.hypot(b.sem);
    let z = if se_delta > 0.0 {
        delta / se_delta
    } else if delta > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let p_value = if z.is_infinite() { 0.0 } else { erfc(z / std::f64::consts::SQRT_2) };
    GroupComparison { mean_a: a.mean, sem_a: a.sem, mean_b: b.mean, sem_b: b.sem, delta, se_delta, z, p_value }
}

/// Final opinions of one record against the DeGroot limit from its round-0 scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionError {
    pub prediction: f64,
    pub observed_mean: f64,
    pub rmse: f64,
    /// Three-way class of prediction equals that of the mean final opinion.
    pub class3_hit: bool,
    /// Same on {for, against}; `None` when either side is neutral.
    pub class2_hit: Option<bool>,
}

pub fn degroot_prediction_error(record: &ExperimentRecord) -> Result<PredictionError, AnalysisError> {
    let a = reconstruct_matrix(record)?;
    let row0 = record.round_scores(0).ok_or_else(|| AnalysisError::Empty("record has no round-0 scores".into()))?;
    let missing: Vec<usize> = row0.iter().enumerate().filter(|(_, s)| s.is_none()).map(|(i, _)| i).collect();
    if !missing.is_empty() {
        return Err(AnalysisError::MissingInitialScores(missing));
    }
    let mu0: Vec<f64> = row0.iter().map(|s| s.expect("checked")).collect();
    let prediction = predict_consensus(&a, &mu0)?;
    let finals = final_opinions(record).present();
    if finals.is_empty() {
        return Err(AnalysisError::Empty("no final opinions".into()));
    }
    let rmse = (finals.iter().map(|f| (f - prediction).powi(2)).sum::<f64>() / finals.len() as f64).sqrt();
    let observed_mean = mean(&finals);
    let (p, o) = (discretize(prediction), discretize(observed_mean));
    let class2_hit = (p != Stance::Neutral && o != Stance::Neutral).then_some(p == o);
    Ok(PredictionError { prediction, observed_mean, rmse, class3_hit: p == o, class2_hit })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub n: usize,
    pub mean_rmse: f64,
    pub rmse_sem: f64,
    pub class3_accuracy: f64,
    pub class2_accuracy: Option<f64>,
    /// Records entering the binary metric.
    pub class2_n: usize,
    /// Records whose prediction could not be computed.
    pub excluded: usize,
}

pub fn summarize_predictions(records: &[&ExperimentRecord]) -> Result<PredictionSummary, AnalysisError> {
    let mut errs = Vec::new();
    let mut excluded = 0;
    for r in records {
        match degroot_prediction_error(r) {
            Ok(e) => errs.push(e),
            Err(e) => {
                log::debug!("prediction skipped: {e}");
                excluded += 1;
            }
        }
    }
    if errs.is_empty() {
        return Err(AnalysisError::Empty("no record supports a prediction".into()));
    }
    let rmse: Vec<f64> = errs.iter().map(|e| e.rmse).collect();
    let hits3 = errs.iter().filter(|e| e.class3_hit).count();
    let bin: Vec<bool> = errs.iter().filter_map(|e| e.class2_hit).collect();
    Ok(PredictionSummary {
        n: errs.len(),
        mean_rmse: mean(&rmse),
        rmse_sem: sem(&rmse).unwrap_or(0.0),
        class3_accuracy: hits3 as f64 / errs.len() as f64,
        class2_accuracy: (!bin.is_empty()).then(|| bin.iter().filter(|h| **h).count() as f64 / bin.len() as f64),
        class2_n: bin.len(),
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    Initial,
    Final,
}

/// Mean fraction of agents per stance class, ordered against, neutral, for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StanceHistogram {
    pub which: Which,
    pub mean: [f64; 3],
    pub sem: [f64; 3],
    pub n: usize,
}

/// Class fractions of one record.
pub fn class_fractions(record: &ExperimentRecord, which: Which) -> Option<[f64; 3]> {
    let classes: Vec<Stance> = match which {
        Which::Initial => record.initial_opinions.clone(),
        Which::Final => final_opinions(record).present().into_iter().map(discretize).collect(),
    };
    if classes.is_empty() {
        return None;
    }
    let mut f = [0.0; 3];
    for c in &classes {
        f[c.index()] += 1.0;
    }
    Some(f.map(|x| x / classes.len() as f64))
}

pub fn opinion_distributions(records: &[&ExperimentRecord], which: Which) -> Result<StanceHistogram, AnalysisError> {
    let fr: Vec<[f64; 3]> = records.iter().filter_map(|r| class_fractions(r, which)).collect();
    if fr.is_empty() {
        return Err(AnalysisError::Empty("stance histogram over zero records".into()));
    }
    let mut out = StanceHistogram { which, mean: [0.0; 3], sem: [0.0; 3], n: fr.len() };
    for c in 0..3 {
        let col: Vec<f64> = fr.iter().map(|f| f[c]).collect();
        out.mean[c] = mean(&col);
        out.sem[c] = sem(&col).unwrap_or(0.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PBin {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    /// `None` for an empty bin.
    pub curve: Option<CurveWithSem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PBinReport {
    pub bins: Vec<PBin>,
    /// Records without an edge probability.
    pub without_p: usize,
    /// Records whose p falls outside every bin.
    pub out_of_range: usize,
}

/// Bins are `[lo, hi)` except the last, which includes its upper edge.
pub fn curves_by_p_bins(records: &[&ExperimentRecord], edges: &[f64]) -> Result<PBinReport, AnalysisError> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
        return Err(AnalysisError::Degenerate("bin edges must be strictly increasing, at least two".into()));
    }
    let nb = edges.len() - 1;
    let mut groups: Vec<Vec<&ExperimentRecord>> = vec![Vec::new(); nb];
    let (mut without_p, mut out_of_range) = (0, 0);
    for r in records {
        let Some(p) = r.erdos_renyi_p else {
            without_p += 1;
            continue;
        };
        let bin = (0..nb).find(|&i| p >= edges[i] && (p < edges[i + 1] || (i == nb - 1 && p <= edges[nb])));
        match bin {
            Some(i) => groups[i].push(r),
            None => out_of_range += 1,
        }
    }
    let bins = groups
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            let curve = if g.is_empty() { None } else { Some(std_curve(&g)?) };
            Ok(PBin { lo: edges[i], hi: edges[i + 1], n: g.len(), curve })
        })
        .collect::<Result<_, AnalysisError>>()?;
    Ok(PBinReport { bins, without_p, out_of_range })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalvingPoint {
    pub lambda2_mod: f64,
    pub halving_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalvingBin {
    pub lo: f64,
    pub hi: f64,
    pub center: f64,
    pub n: usize,
    pub mean: Option<f64>,
    /// `None` below two points.
    pub sem: Option<f64>,
    /// `ln 2 / -ln(center)`.
    pub theory: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalvingReport {
    pub points: Vec<HalvingPoint>,
    pub bins: Vec<HalvingBin>,
    pub excluded_unreconstructible: usize,
    pub excluded_zero_spread: usize,
    pub excluded_never_halving: usize,
}

/// Equal-width bins over `[min, max]` of the observed moduli.
pub fn bin_halving_points(points: &[HalvingPoint], n_bins: usize) -> Result<Vec<HalvingBin>, AnalysisError> {
    if n_bins == 0 {
        return Err(AnalysisError::Degenerate("need at least one bin".into()));
    }
    if points.is_empty() {
        return Err(AnalysisError::Empty("no halving points".into()));
    }
    let lo = points.iter().map(|p| p.lambda2_mod).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.lambda2_mod).fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    for p in points {
        let i = if width > 0.0 { (((p.lambda2_mod - lo) / width) as usize).min(n_bins - 1) } else { 0 };
        groups[i].push(p.halving_time);
    }
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            let (blo, bhi) = (lo + i as f64 * width, lo + (i + 1) as f64 * width);
            let center = 0.5 * (blo + bhi);
            HalvingBin {
                lo: blo,
                hi: bhi,
                center,
                n: g.len(),
                mean: (!g.is_empty()).then(|| mean(&g)),
                sem: sem(&g),
                theory: theoretical_halving_time(center).ok(),
            }
        })
        .collect())
}

pub fn halving_vs_lambda2(records: &[&ExperimentRecord], n_bins: usize) -> Result<HalvingReport, AnalysisError> {
    let mut points = Vec::new();
    let (mut unrec, mut zero, mut never) = (0, 0, 0);
    for r in records {
        let l2 = match reconstruct_matrix(r).map_err(AnalysisError::from).and_then(|a| Ok(second_eigenvalue_modulus(&a)?)) {
            Ok(v) => v,
            Err(e) => {
                log::debug!("halving point skipped: {e}");
                unrec += 1;
                continue;
            }
        };
        let series: Option<Vec<f64>> = record_std_series(r, StdDivisor::Sample).into_iter().collect();
        let Some(series) = series else {
            unrec += 1;
            continue;
        };
        match halving_time_from_series(&series) {
            Ok(Some(h)) => points.push(HalvingPoint { lambda2_mod: l2, halving_time: h }),
            Ok(None) => never += 1,
            Err(_) => zero += 1,
        }
    }
    let bins = bin_halving_points(&points, n_bins)?;
    Ok(HalvingReport {
        points,
        bins,
        excluded_unreconstructible: unrec,
        excluded_zero_spread: zero,
        excluded_never_halving: never,
    })
}
