use std::path::{Path, PathBuf};

use opinet_core::dataset::{
    corpus_files, read_record, reconstruct_matrix, scan_corpus, write_record, CorpusFilter, DatasetError,
};
use opinet_core::graph::GraphKind;
use opinet_core::scoring::Stance;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn corpus() -> PathBuf {
    fixtures().join("corpus")
}

fn filter(model: Option<&str>, setting: Option<&str>, group: Option<&str>) -> CorpusFilter {
    CorpusFilter { model: model.map(String::from), setting: setting.map(String::from), group: group.map(String::from) }
}

#[test]
fn sample_record_has_twenty_agents() {
    let rec = read_record(&corpus().join("gemini2flash/main/bitcoin/exp_000.json")).unwrap();
    assert_eq!(rec.agents(), 20);
    assert_eq!(rec.responses.len(), 20 * (rec.num_rounds as usize + 1));
    assert!(rec.complete);
    let a = reconstruct_matrix(&rec).unwrap();
    assert_eq!(a.agents(), 20);
}

#[test]
fn full_scan_counts_fixtures_and_skips_broken_file() {
    let mut scan = scan_corpus(&corpus(), &CorpusFilter::default()).unwrap();
    let paths: Vec<PathBuf> = scan.by_ref().map(|e| e.path).collect();
    assert_eq!(paths.len(), 5);
    let mut sorted = paths.clone();
    sorted.sort();
    assert_eq!(paths, sorted);
    assert_eq!(scan.skipped().len(), 1);
    assert!(scan.skipped()[0].0.ends_with("exp_002_truncated.json"));
}

#[test]
fn topic_filter_selects_bitcoin_only() {
    let recs: Vec<_> = scan_corpus(&corpus(), &filter(Some("gemini2flash"), Some("main"), Some("bitcoin"))).unwrap().collect();
    assert_eq!(recs.len(), 2);
    assert!(recs.iter().all(|e| e.record.topic == "Bitcoin"));
}

#[test]
fn ablation_filter_selects_weightless_only() {
    let recs: Vec<_> = scan_corpus(&corpus(), &filter(None, Some("ablation"), Some("weightless"))).unwrap().collect();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].record.weighted, Some(false));
    assert!(matches!(reconstruct_matrix(&recs[0].record), Err(DatasetError::Weightless)));
}

#[test]
fn ablation_directly_under_model_is_located() {
    let files = corpus_files(&corpus(), &filter(Some("gpt5nano"), Some("ablation"), Some("biased_start"))).unwrap();
    assert_eq!(files.len(), 1);
    assert_eq!(files[0].1.setting, "ablation");
}

#[test]
fn empty_directory_scans_to_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut scan = scan_corpus(dir.path(), &CorpusFilter::default()).unwrap();
    assert!(scan.next().is_none());
    assert!(scan.skipped().is_empty());
}

#[test]
fn missing_root_is_an_io_error() {
    let Err(err) = scan_corpus(Path::new("/nonexistent/corpus/root"), &CorpusFilter::default()) else {
        panic!("scan of a missing root succeeded");
    };
    assert!(matches!(err, DatasetError::Io { .. } | DatasetError::MissingRoot(..)), "{err:?}");
}

#[test]
fn upstream_key_names_are_mapped() {
    let rec = read_record(&fixtures().join("upstream_k3.json")).unwrap();
    assert_eq!(rec.agents(), 3);
    assert_eq!(rec.topic, "Veganism");
    assert_eq!(rec.ai_model, "gemini-2.0-flash");
    assert_eq!(rec.graph_type, GraphKind::ErdosRenyi);
    assert_eq!(rec.erdos_renyi_p, Some(0.5));
    assert_eq!(rec.num_rounds, 1);
    assert_eq!(rec.initial_opinions, vec![Stance::For, Stance::Against, Stance::Neutral]);
    assert_eq!(rec.stance_scores[1], vec![Some(1.0), Some(1.0 / 3.0), None]);
    assert_eq!(rec.responses[4].text, "Maybe less meat.");
    assert_eq!(rec.extra["annotator_notes"]["batch"], 7);
    let a = reconstruct_matrix(&rec).unwrap();
    // agent 1 is open-minded: diagonal 0.6
    assert!((a.weight(1, 1) - 0.6).abs() < 1e-12);
    assert!((a.weight(0, 0) - 0.8).abs() < 1e-12);
    assert!(rec.topology.iter().all(|l| l.len() == 2));
}

#[test]
fn upstream_record_rewrites_canonically() {
    let rec = read_record(&fixtures().join("upstream_k3.json")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("canonical.json");
    write_record(&rec, &out).unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("\"stance_scores\""));
    assert!(!text.contains("\"history\""));
    assert_eq!(read_record(&out).unwrap(), rec);
}

#[test]
fn malformed_document_reports_location() {
    match read_record(&corpus().join("gemini2flash/main/bitcoin/exp_002_truncated.json")) {
        Err(DatasetError::Parse { line, column, .. }) => {
            assert_eq!(line, 1);
            assert!(column > 30);
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}
