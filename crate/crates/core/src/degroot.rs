//! Exact DeGroot dynamics `mu_{k,i} = sum_l a_{lk} mu_{l,i-1}` and the
//! disagreement measures used to compare runs against it.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::CombinationMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DegrootError {
    #[error("dimension mismatch: expected {expected} agents, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("standard deviation needs at least 2 agents, got {0}")]
    TooFewAgents(usize),
    #[error("trajectory must contain at least 2 rounds")]
    TooShort,
    #[error("initial disagreement is zero; halving time undefined")]
    ZeroInitialSpread,
}

/// Divisor used for the cross-agent standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdDivisor {
    /// `K - 1`
    #[default]
    Sample,
    /// `K`
    Population,
}

/// Opinion vectors for rounds `0..=T`; index 0 holds the initial opinions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpinionTrajectory {
    rounds: Vec<Vec<f64>>,
}

impl OpinionTrajectory {
    pub fn new(rounds: Vec<Vec<f64>>) -> Result<Self, DegrootError> {
        let first = rounds.first().ok_or(DegrootError::TooShort)?.len();
        if let Some(bad) = rounds.iter().find(|r| r.len() != first) {
            return Err(DegrootError::Dimension { expected: first, got: bad.len() });
        }
        Ok(OpinionTrajectory { rounds })
    }

    pub fn rounds(&self) -> &[Vec<f64>] {
        &self.rounds
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn agents(&self) -> usize {
        self.rounds[0].len()
    }

    pub fn last(&self) -> &[f64] {
        self.rounds.last().expect("non-empty")
    }

    pub fn std_series(&self, divisor: StdDivisor) -> Result<Vec<f64>, DegrootError> {
        self.rounds.iter().map(|r| std_with(r, divisor)).collect()
    }

    /// CSV with columns `round, agent_0 .. agent_{K-1}, std`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["round".to_string()];
        header.extend((0..self.agents()).map(|k| format!("agent_{k}")));
        header.push("std".into());
        w.write_record(&header)?;
        for (t, row) in self.rounds.iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            rec.push(std_with(row, StdDivisor::Sample).map(|s| s.to_string()).unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One synchronous update `mu' = A^T mu`.
pub fn step(a: &CombinationMatrix, mu: &[f64]) -> Result<Vec<f64>, DegrootError> {
    let k = a.agents();
    if mu.len() != k {
        return Err(DegrootError::Dimension { expected: k, got: mu.len() });
    }
    let m = a.matrix();
    Ok((0..k)
        .map(|to| (0..k).map(|from| m[(from, to)] * mu[from]).sum())
        .collect())
}

pub fn simulate(a: &CombinationMatrix, mu0: &[f64], rounds: usize) -> Result<OpinionTrajectory, DegrootError> {
    let mut out = Vec::with_capacity(rounds + 1);
    out.push(step_check(a, mu0)?);
    for _ in 0..rounds {
        let next = step(a, out.last().expect("non-empty"))?;
        out.push(next);
    }
    Ok(OpinionTrajectory { rounds: out })
}

fn step_check(a: &CombinationMatrix, mu0: &[f64]) -> Result<Vec<f64>, DegrootError> {
    if mu0.len() != a.agents() {
        return Err(DegrootError::Dimension { expected: a.agents(), got: mu0.len() });
    }
    Ok(mu0.to_vec())
}

/// Sample standard deviation across agents.
pub fn disagreement_std(mu: &[f64]) -> Result<f64, DegrootError> {
    std_with(mu, StdDivisor::Sample)
}

pub fn std_with(values: &[f64], divisor: StdDivisor) -> Result<f64, DegrootError> {
    let n = values.len();
    if n < 2 {
        return Err(DegrootError::TooFewAgents(n));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let d = match divisor {
        StdDivisor::Sample => (n - 1) as f64,
        StdDivisor::Population => n as f64,
    };
    Ok((ss / d).sqrt())
}

/// First round at which the disagreement falls to half its initial value,
/// linearly interpolated between the bracketing rounds. `Ok(None)` when the
/// series never gets there.
pub fn halving_time_from_series(series: &[f64]) -> Result<Option<f64>, DegrootError> {
    if series.len() < 2 {
        return Err(DegrootError::TooShort);
    }
    let s0 = series[0];
    if s0 <= 0.0 {
        return Err(DegrootError::ZeroInitialSpread);
    }
    let target = s0 / 2.0;
    for t in 1..series.len() {
        let (prev, cur) = (series[t - 1], series[t]);
        if cur <= target {
            let frac = if prev > cur { (prev - target) / (prev - cur) } else { 1.0 };
            return Ok(Some((t - 1) as f64 + frac.clamp(0.0, 1.0)));
        }
    }
    Ok(None)
}

pub fn empirical_halving_time(traj: &OpinionTrajectory) -> Result<Option<f64>, DegrootError> {
    halving_time_from_series(&traj.std_series(StdDivisor::Sample)?)
}
