use opinet_core::analysis::{
    bin_halving_points, compare_groups, curves_by_p_bins, degroot_prediction_error, final_disagreement, final_opinions,
    fit_exponential_decay, halving_vs_lambda2, opinion_distributions, std_curve, AnalysisError, GroupStats, HalvingPoint,
    Which,
};
use opinet_core::dataset::ExperimentRecord;
use opinet_core::graph::{
    generate_connected_graph, generate_graph, AgentProfile, AgentType, GraphSpec,
};
use opinet_core::harness::{initial_opinions_from_stances, run_experiment, ExperimentConfig, NullSink, SyntheticBackend};
use opinet_core::rng;
use opinet_core::scoring::{Stance, StubNumericScorer};

fn profiles(k: usize, seed: u64) -> Vec<AgentProfile> {
    let mut r = rng::seeded(seed);
    (0..k)
        .map(|_| {
            let t = if rng::unit(&mut r) < 0.5 { AgentType::SelfConfident } else { AgentType::OpenMinded };
            AgentProfile::new(t, Stance::ALL[rng::index(&mut r, 3)])
        })
        .collect()
}

fn synthetic(spec: GraphSpec, profiles: Vec<AgentProfile>, rounds: u32, mu0: Option<Vec<f64>>) -> ExperimentRecord {
    let g = generate_connected_graph(&spec, 1000).unwrap();
    let cfg = ExperimentConfig::new(g.spec, g.graph, profiles, "Bitcoin", rounds).unwrap();
    let mu0 = mu0.unwrap_or_else(|| initial_opinions_from_stances(&cfg.profiles));
    let backend = SyntheticBackend::new(cfg.matrix().unwrap(), mu0).unwrap();
    run_experiment(&cfg, &backend, &StubNumericScorer, &mut NullSink).unwrap()
}

/// Fully connected record with the given score rows and no responses.
fn with_scores(rows: Vec<Vec<Option<f64>>>) -> ExperimentRecord {
    let k = rows[0].len();
    let spec = GraphSpec::fully_connected(k);
    let ps = (0..k).map(|_| AgentProfile::new(AgentType::SelfConfident, Stance::Neutral)).collect();
    let cfg = ExperimentConfig::new(spec, generate_graph(&spec).unwrap(), ps, "Bitcoin", rows.len() as u32 - 1).unwrap();
    let mut rec = cfg.empty_record();
    rec.stance_scores = rows;
    rec.complete = true;
    rec
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn constant_record_gives_zero_curve() {
    let rec = with_scores(vec![vec![Some(0.5); 4]; 6]);
    let c = std_curve(&[&rec]).unwrap();
    assert_eq!(c.mean, vec![0.0; 6]);
    assert_eq!(c.sem, vec![0.0; 6]);
    assert_eq!(c.n, 1);
}

#[test]
fn identical_records_have_zero_sem() {
    let rec = synthetic(GraphSpec::ring(5), profiles(5, 1), 8, None);
    let c = std_curve(&[&rec, &rec]).unwrap();
    assert!(c.sem.iter().all(|s| *s == 0.0));
    assert!(c.mean[0] > 0.0);
}

#[test]
fn empty_record_set_is_an_error() {
    assert!(matches!(std_curve(&[]), Err(AnalysisError::Empty(_))));
    assert!(final_disagreement(&[]).is_err());
}

#[test]
fn synthetic_corpus_curve_decays_from_initial_spread() {
    let recs: Vec<ExperimentRecord> = (0..50u64)
        .map(|s| synthetic(GraphSpec::erdos_renyi(20, 0.3, s), profiles(20, 100 + s), 40, None))
        .collect();
    let refs: Vec<&ExperimentRecord> = recs.iter().collect();
    let c = std_curve(&refs).unwrap();
    assert!(c.mean[0] > 0.3 && c.mean[0] < 0.5, "initial spread {}", c.mean[0]);
    for w in c.mean.windows(2) {
        assert!(w[1] <= w[0] + 1e-12);
    }
    assert!(c.mean[40] < 0.1 * c.mean[0]);
}

#[test]
fn fit_recovers_shifted_exponential() {
    let y: Vec<f64> = (0..60).map(|t| 0.3 * (-0.1 * t as f64).exp() + 0.1).collect();
    let f = fit_exponential_decay(&y, None).unwrap();
    assert!(close(f.a, 0.3, 0.003) && close(f.b, 0.1, 0.001) && close(f.c, 0.1, 0.001));
    assert!(f.r_squared > 0.9999);
}

#[test]
fn fit_recovers_pure_halving() {
    let y: Vec<f64> = (0..30).map(|t| 0.4 * 0.5f64.powi(t)).collect();
    let f = fit_exponential_decay(&y, None).unwrap();
    assert!(close(f.b, std::f64::consts::LN_2, 0.01 * std::f64::consts::LN_2));
    assert!(f.c < 1e-6);
}

#[test]
fn fit_rejects_constant_curve() {
    assert!(matches!(fit_exponential_decay(&[0.2; 20], None), Err(AnalysisError::Degenerate(_))));
}

#[test]
fn final_opinion_examples() {
    let rec = with_scores(vec![vec![Some(0.5); 3]; 15]);
    assert_eq!(final_opinions(&rec).values, vec![Some(0.5); 3]);

    // rounds 71-75 at 0, 76-80 at 1
    let rows: Vec<Vec<Option<f64>>> = (0..=80).map(|t| vec![Some(if t <= 75 { 0.0 } else { 1.0 })]).collect();
    let rows: Vec<Vec<Option<f64>>> = rows.into_iter().map(|r| vec![r[0], Some(0.5)]).collect();
    let f = final_opinions(&with_scores(rows));
    assert_eq!(f.values[0], Some(0.5));
    assert!(!f.fallback);

    let mut rows = vec![vec![Some(0.2), Some(0.4)]; 20];
    rows[12][0] = None;
    rows[17][0] = None;
    for row in rows.iter_mut().skip(10) {
        if let Some(v) = row[0].as_mut() {
            *v = 0.8;
        }
    }
    assert!(close(final_opinions(&with_scores(rows)).values[0].unwrap(), 0.8, 1e-12));
}

#[test]
fn short_record_falls_back_to_all_rounds() {
    let f = final_opinions(&with_scores(vec![vec![Some(0.0), Some(1.0)], vec![Some(1.0), Some(1.0)]]));
    assert!(f.fallback);
    assert_eq!(f.values, vec![Some(0.5), Some(1.0)]);
}

#[test]
fn consensus_records_have_zero_disagreement() {
    let rec = with_scores(vec![vec![Some(0.7); 4]; 12]);
    let g = final_disagreement(&[&rec, &rec, &rec]).unwrap();
    assert_eq!((g.mean, g.sem, g.n), (0.0, 0.0, 3));
}

#[test]
fn group_comparison_examples() {
    let c = compare_groups(GroupStats::new(0.3, 0.02, 10), GroupStats::new(0.3, 0.02, 10));
    assert_eq!((c.delta, c.p_value), (0.0, 1.0));
    let c = compare_groups(GroupStats::new(0.5, 0.01, 10), GroupStats::new(0.48, 0.01, 10));
    assert!(close(c.se_delta, 0.01414, 5e-6));
    assert!(close(c.z, 1.414, 5e-4));
    let c = compare_groups(GroupStats::new(0.5, 0.0, 1), GroupStats::new(0.4, 0.0, 1));
    assert!(c.z.is_infinite());
}

#[test]
fn noise_free_record_matches_its_prediction() {
    let rec = synthetic(GraphSpec::fully_connected(6), profiles(6, 3), 120, None);
    let e = degroot_prediction_error(&rec).unwrap();
    assert!(e.rmse < 1e-8, "rmse {}", e.rmse);
    assert!(e.class3_hit);
    assert!(e.class2_hit.unwrap_or(true));
}

#[test]
fn mirrored_consensus_is_a_miss() {
    let mut rows = vec![vec![Some(0.9); 4]];
    rows.extend(vec![vec![Some(0.1); 4]; 12]);
    let e = degroot_prediction_error(&with_scores(rows)).unwrap();
    assert!(close(e.prediction, 0.9, 1e-12));
    assert!(close(e.rmse, 0.8, 1e-12));
    assert!(!e.class3_hit);
    assert_eq!(e.class2_hit, Some(false));
}

#[test]
fn missing_initial_scores_block_prediction() {
    let mut rows = vec![vec![Some(0.5); 3]; 12];
    rows[0][1] = None;
    assert!(matches!(degroot_prediction_error(&with_scores(rows)), Err(AnalysisError::MissingInitialScores(v)) if v == vec![1]));
}

#[test]
fn distribution_examples() {
    let all_for: Vec<AgentProfile> = (0..5).map(|_| AgentProfile::new(AgentType::OpenMinded, Stance::For)).collect();
    let rec = synthetic(GraphSpec::fully_connected(5), all_for, 12, None);
    let h = opinion_distributions(&[&rec], Which::Initial).unwrap();
    assert_eq!(h.mean, [0.0, 0.0, 1.0]);

    let rec = synthetic(GraphSpec::fully_connected(5), profiles(5, 9), 30, Some(vec![0.9; 5]));
    let h = opinion_distributions(&[&rec], Which::Final).unwrap();
    assert_eq!(h.mean, [0.0, 0.0, 1.0]);

    let recs: Vec<ExperimentRecord> =
        (0..6u64).map(|s| synthetic(GraphSpec::erdos_renyi(8, 0.5, s), profiles(8, s), 12, None)).collect();
    let refs: Vec<&ExperimentRecord> = recs.iter().collect();
    for which in [Which::Initial, Which::Final] {
        let h = opinion_distributions(&refs, which).unwrap();
        assert!(close(h.mean.iter().sum::<f64>(), 1.0, 1e-12));
    }
}

#[test]
fn p_bin_examples() {
    let recs: Vec<ExperimentRecord> = (0..40u64)
        .map(|s| {
            let p = if s % 2 == 0 { 0.2 + 0.003 * s as f64 } else { 0.5 + 0.01 * s as f64 };
            synthetic(GraphSpec::erdos_renyi(20, p, s), profiles(20, 500 + s), 30, None)
        })
        .collect();
    let refs: Vec<&ExperimentRecord> = recs.iter().collect();

    let report = curves_by_p_bins(&refs, &[0.15, 0.35, 1.0]).unwrap();
    let area = |i: usize| report.bins[i].curve.as_ref().unwrap().mean.iter().sum::<f64>();
    assert_eq!(report.bins[0].n + report.bins[1].n, 40);
    assert!(area(1) < area(0));

    let report = curves_by_p_bins(&refs, &[0.0, 0.1, 1.0]).unwrap();
    assert_eq!(report.bins[0].n, 0);
    assert!(report.bins[0].curve.is_none());
    assert_eq!(report.bins[1].curve.as_ref().unwrap(), &std_curve(&refs).unwrap());

    let ring = synthetic(GraphSpec::ring(5), profiles(5, 2), 5, None);
    let report = curves_by_p_bins(&[&ring], &[0.0, 1.0]).unwrap();
    assert_eq!(report.without_p, 1);
}

#[test]
fn halving_bins_examples() {
    let recs: Vec<ExperimentRecord> =
        (0..12u64).map(|s| synthetic(GraphSpec::erdos_renyi(12, 0.4, s), profiles(12, 900 + s), 40, None)).collect();
    let refs: Vec<&ExperimentRecord> = recs.iter().collect();
    let report = halving_vs_lambda2(&refs, 30).unwrap();
    assert_eq!(report.bins.len(), 30);
    assert_eq!(report.points.len() + report.excluded_zero_spread + report.excluded_never_halving + report.excluded_unreconstructible, 12);

    let bins = bin_halving_points(
        &[HalvingPoint { lambda2_mod: 0.5, halving_time: 1.0 }, HalvingPoint { lambda2_mod: 0.9, halving_time: 6.0 }],
        4,
    )
    .unwrap();
    assert_eq!(bins[0].n, 1);
    assert_eq!(bins[0].sem, None);
    assert_eq!(bins[1].mean, None);
}

#[test]
fn analyses_are_deterministic() {
    let recs: Vec<ExperimentRecord> =
        (0..5u64).map(|s| synthetic(GraphSpec::erdos_renyi(10, 0.4, s), profiles(10, s), 20, None)).collect();
    let refs: Vec<&ExperimentRecord> = recs.iter().collect();
    assert_eq!(std_curve(&refs).unwrap(), std_curve(&refs).unwrap());
    assert_eq!(halving_vs_lambda2(&refs, 30).unwrap(), halving_vs_lambda2(&refs, 30).unwrap());
}
