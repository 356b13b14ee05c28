//! Perron vector, second eigenvalue modulus and convergence-rate quantities
//! of a combination matrix.

use nalgebra::linalg::Schur;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::CombinationMatrix;

pub const DEFAULT_PERRON_TOL: f64 = 1e-10;
pub const DEFAULT_PERRON_MAX_ITER: usize = 100_000;
const SCHUR_MAX_ITER: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("combination matrix is not primitive")]
    NotPrimitive,
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("eigenvalue iteration did not converge")]
    EigenFailure,
    #[error("{0}")]
    Domain(String),
    #[error("dimension mismatch: matrix has {expected} agents, vector has {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub perron: Vec<f64>,
    pub lambda2_mod: f64,
    pub halving_time: f64,
}

fn require_primitive(a: &CombinationMatrix) -> Result<(), SpectralError> {
    if a.is_primitive() {
        Ok(())
    } else {
        Err(SpectralError::NotPrimitive)
    }
}

fn fixed_point_residual(a: &CombinationMatrix, v: &DVector<f64>) -> f64 {
    (a.matrix() * v - v).amax()
}

/// Power iteration for the positive, unit-sum vector with `A pi = pi`.
///
/// Once the fixed-point residual drops below `tol` the iteration continues
/// for as many steps again (or until the residual stops shrinking), since the
/// distance to `pi` can exceed the residual by a factor `1 / (1 - |lambda2|)`.
pub fn perron_vector(a: &CombinationMatrix, tol: f64, max_iter: usize) -> Result<Vec<f64>, SpectralError> {
    require_primitive(a)?;
    let k = a.agents();
    let m = a.matrix();
    let step = |v: &DVector<f64>| {
        let mut next = m * v;
        let s = next.sum();
        next /= s;
        next
    };
    let mut v = DVector::from_element(k, 1.0 / k as f64);
    let mut residual = f64::INFINITY;
    for iter in 1..=max_iter {
        v = step(&v);
        residual = fixed_point_residual(a, &v);
        if residual < tol {
            for _ in 0..iter {
                let next = step(&v);
                let r = fixed_point_residual(a, &next);
                if r >= residual {
                    break;
                }
                v = next;
                residual = r;
            }
            return Ok(v.iter().copied().collect());
        }
    }
    Err(SpectralError::NoConvergence { iterations: max_iter, residual })
}

/// Largest modulus among the eigenvalues of `A` other than the (simple)
/// eigenvalue one. Complex pairs contribute their common modulus.
pub fn second_eigenvalue_modulus(a: &CombinationMatrix) -> Result<f64, SpectralError> {
    require_primitive(a)?;
    let mut moduli: Vec<(f64, f64)> = eigenvalues(a)?
        .into_iter()
        .map(|(re, im)| ((re - 1.0).hypot(im), re.hypot(im)))
        .collect();
    if moduli.len() < 2 {
        return Ok(0.0);
    }
    // drop the eigenvalue nearest to one
    let unit = moduli
        .iter()
        .enumerate()
        .min_by(|x, y| x.1 .0.total_cmp(&y.1 .0))
        .map(|(i, _)| i)
        .expect("non-empty");
    moduli.swap_remove(unit);
    Ok(moduli.iter().map(|m| m.1).fold(0.0, f64::max))
}

/// All eigenvalues `(re, im)` via real Schur decomposition. The deflation
/// threshold is relaxed step by step when the QR iteration stalls.
pub fn eigenvalues(a: &CombinationMatrix) -> Result<Vec<(f64, f64)>, SpectralError> {
    for eps in [f64::EPSILON, 1e-15, 1e-14, 1e-12] {
        if let Some(schur) = Schur::try_new(a.matrix().clone(), eps, SCHUR_MAX_ITER) {
            return Ok(schur.complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect());
        }
    }
    Err(SpectralError::EigenFailure)
}

/// Limiting consensus `sum_l pi_l mu0_l`.
pub fn predict_consensus(a: &CombinationMatrix, mu0: &[f64]) -> Result<f64, SpectralError> {
    if mu0.len() != a.agents() {
        return Err(SpectralError::Dimension { expected: a.agents(), got: mu0.len() });
    }
    let pi = perron_vector(a, DEFAULT_PERRON_TOL, DEFAULT_PERRON_MAX_ITER)?;
    Ok(pi.iter().zip(mu0).map(|(p, m)| p * m).sum())
}

/// `ln 2 / -ln |lambda2|`, and 0 when `|lambda2| = 0`.
pub fn theoretical_halving_time(lambda2_mod: f64) -> Result<f64, SpectralError> {
    if !(0.0..1.0).contains(&lambda2_mod) {
        return Err(SpectralError::Domain(format!(
            "|lambda2| must lie in [0, 1), got {lambda2_mod}"
        )));
    }
    if lambda2_mod == 0.0 {
        return Ok(0.0);
    }
    Ok(std::f64::consts::LN_2 / -lambda2_mod.ln())
}

pub fn spectral_summary(a: &CombinationMatrix) -> Result<SpectralSummary, SpectralError> {
    let perron = perron_vector(a, DEFAULT_PERRON_TOL, DEFAULT_PERRON_MAX_ITER)?;
    let lambda2_mod = second_eigenvalue_modulus(a)?;
    // rounding can put a nearly-reducible matrix a hair above one
    let halving_time = theoretical_halving_time(lambda2_mod.min(1.0 - f64::EPSILON))?;
    Ok(SpectralSummary { perron, lambda2_mod, halving_time })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub sigma: f64,
    pub lambda2_mod: f64,
    /// `max_{l,k} |[A^t]_{lk} - pi_l|` for `t = 1..=t_max`.
    pub deviations: Vec<f64>,
    /// Smallest `C` with `deviation(t) <= C sigma^t` over the evaluated horizon.
    pub c_sigma: f64,
}

/// Measures the entrywise distance of `A^t` from its limit `pi 1^T`.
pub fn convergence_bound_report(a: &CombinationMatrix, sigma: f64, t_max: usize) -> Result<BoundReport, SpectralError> {
    let lambda2_mod = second_eigenvalue_modulus(a)?;
    if !(sigma > lambda2_mod && sigma < 1.0) {
        return Err(SpectralError::Domain(format!(
            "sigma must lie in (|lambda2| = {lambda2_mod}, 1), got {sigma}"
        )));
    }
    let pi = perron_vector(a, DEFAULT_PERRON_TOL, DEFAULT_PERRON_MAX_ITER)?;
    let m = a.matrix();
    let mut power = m.clone();
    let mut deviations = Vec::with_capacity(t_max);
    let mut c_sigma: f64 = 0.0;
    for t in 1..=t_max {
        if t > 1 {
            power = m * &power;
        }
        let dev = power
            .row_iter()
            .zip(&pi)
            .flat_map(|(row, p)| row.iter().map(move |x| (x - p).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        c_sigma = c_sigma.max(dev / sigma.powi(t as i32));
        deviations.push(dev);
    }
    Ok(BoundReport { sigma, lambda2_mod, deviations, c_sigma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_combination_matrix, generate_graph, AgentProfile, AgentType, GraphSpec};
    use crate::scoring::Stance;

    fn two_by_two() -> CombinationMatrix {
        CombinationMatrix::from_rows(&[vec![0.8, 0.4], vec![0.2, 0.6]]).unwrap()
    }

    fn uniform(k: usize) -> CombinationMatrix {
        CombinationMatrix::from_rows(&vec![vec![1.0 / k as f64; k]; k]).unwrap()
    }

    fn ring(k: usize, s: f64) -> CombinationMatrix {
        let g = generate_graph(&GraphSpec::ring(k)).unwrap();
        let p = vec![AgentProfile::new(AgentType::SelfConfident, Stance::For).with_self_weight(s); k];
        build_combination_matrix(&g, &p).unwrap()
    }

    #[test]
    fn perron_two_by_two() {
        let pi = perron_vector(&two_by_two(), 1e-12, 10_000).unwrap();
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-10);
        assert!((pi[1] - 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn perron_doubly_stochastic_is_uniform() {
        let pi = perron_vector(&ring(7, 0.6), DEFAULT_PERRON_TOL, DEFAULT_PERRON_MAX_ITER).unwrap();
        for p in pi {
            assert!((p - 1.0 / 7.0).abs() < 1e-9);
        }
    }

    #[test]
    fn perron_rejects_reducible() {
        let a = CombinationMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(perron_vector(&a, 1e-10, 100), Err(SpectralError::NotPrimitive));
        assert_eq!(second_eigenvalue_modulus(&a), Err(SpectralError::NotPrimitive));
    }

    #[test]
    fn perron_reports_non_convergence() {
        let slow = CombinationMatrix::from_rows(&[vec![0.99, 0.001], vec![0.01, 0.999]]).unwrap();
        match perron_vector(&slow, 1e-14, 2) {
            Err(SpectralError::NoConvergence { iterations: 2, residual }) => assert!(residual > 1e-14),
            other => panic!("unexpected {other:?}"),
        }
        assert!(perron_vector(&slow, 1e-10, DEFAULT_PERRON_MAX_ITER).is_ok());
    }

    #[test]
    fn lambda2_examples() {
        assert!((second_eigenvalue_modulus(&two_by_two()).unwrap() - 0.4).abs() < 1e-12);
        assert!(second_eigenvalue_modulus(&uniform(20)).unwrap() < 1e-10);
        let l2 = second_eigenvalue_modulus(&ring(20, 0.8)).unwrap();
        let theta = 2.0 * std::f64::consts::PI / 20.0;
        let expected = (0.8 + 0.2 * theta.cos()).hypot(0.2 * theta.sin());
        assert!((l2 - expected).abs() < 1e-10);
        assert!((l2 - 0.99214).abs() < 5e-6);
    }

    #[test]
    fn consensus_prediction() {
        assert!((predict_consensus(&two_by_two(), &[1.0, 0.0]).unwrap() - 2.0 / 3.0).abs() < 1e-10);
        let mu = [0.1, 0.9, 0.3, 0.3, 0.7];
        let mean = mu.iter().sum::<f64>() / 5.0;
        assert!((predict_consensus(&ring(5, 0.7), &mu).unwrap() - mean).abs() < 1e-9);
        assert!((predict_consensus(&two_by_two(), &[0.42, 0.42]).unwrap() - 0.42).abs() < 1e-12);
        assert!(matches!(
            predict_consensus(&two_by_two(), &[1.0]),
            Err(SpectralError::Dimension { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn halving_time_values() {
        assert!((theoretical_halving_time(0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!((theoretical_halving_time(0.917).unwrap() - 8.00).abs() < 5e-3);
        assert!((theoretical_halving_time(0.4).unwrap() - 0.7565).abs() < 5e-5);
        assert_eq!(theoretical_halving_time(0.0).unwrap(), 0.0);
        assert!(theoretical_halving_time(1.0).is_err());
        assert!(theoretical_halving_time(-0.1).is_err());
        let mut prev = 0.0;
        for i in 1..1000 {
            let t = theoretical_halving_time(i as f64 / 1000.0).unwrap();
            assert!(t > prev);
            prev = t;
        }
    }

    #[test]
    fn bound_report_rank_one() {
        let r = convergence_bound_report(&uniform(6), 0.5, 20).unwrap();
        assert!(r.deviations.iter().all(|&d| d < 1e-15));
    }

    #[test]
    fn bound_report_two_by_two_closed_form() {
        let r = convergence_bound_report(&two_by_two(), 0.5, 30).unwrap();
        // A^t - pi 1^T = 0.4^t (I - pi 1^T), whose largest entry is 2/3
        for (i, d) in r.deviations.iter().enumerate() {
            let t = (i + 1) as i32;
            assert!((d - 0.4f64.powi(t) * 2.0 / 3.0).abs() < 1e-12);
        }
        assert!((r.c_sigma - 0.8 * 2.0 / 3.0).abs() < 1e-10);
        assert!(convergence_bound_report(&two_by_two(), 0.3, 5).is_err());
        assert!(convergence_bound_report(&two_by_two(), 1.0, 5).is_err());
    }
}
