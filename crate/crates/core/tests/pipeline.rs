use pruneflow_core::channel::NetworkModel;
use pruneflow_core::pipeline::model::{model_paths, MANIFEST_VERSION};
use pruneflow_core::pipeline::toy::{calibrate, open_thresholds, toy_input, toy_model, Calibration, ToyShape};
use pruneflow_core::pipeline::{plaintext_forward, private_forward, Model, OracleMode, Variant};
use pruneflow_core::sharing::SessionConfig;
use pruneflow_core::transcript::RevealKind;
use pruneflow_core::Error;

fn small() -> ToyShape {
    ToyShape { layers: 1, model_dim: 4, heads: 2, ffn_dim: 8, input_dim: 3, max_tokens: 8, classes: 2 }
}

fn max_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn model_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_model(&small(), 3).unwrap();
    let (mp, bp) = m.save(dir.path(), "toy").unwrap();
    assert_eq!(Model::load(&mp, &bp).unwrap(), m);
    assert_eq!(Model::load_manifest(&mp).unwrap(), m);
}

#[test]
fn truncated_blob_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_model(&small(), 3).unwrap();
    let (mp, bp) = m.save(dir.path(), "toy").unwrap();
    let bytes = std::fs::read(&bp).unwrap();
    std::fs::write(&bp, &bytes[..bytes.len() - 8]).unwrap();
    let err = Model::load(&mp, &bp).unwrap_err();
    assert!(matches!(err, Error::Validation(ref m) if m.contains("overruns")), "{err}");
}

#[test]
fn equal_thresholds_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = toy_model(&small(), 3).unwrap();
    m.manifest.layers[0].beta = m.manifest.layers[0].theta;
    assert!(m.manifest.validate().is_err());
    let (mp, bp) = model_paths(dir.path(), "bad");
    std::fs::write(&mp, serde_json::to_string(&m.manifest).unwrap()).unwrap();
    std::fs::write(&bp, m.blob_bytes()).unwrap();
    assert!(matches!(Model::load(&mp, &bp), Err(Error::Validation(_))));
}

#[test]
fn version_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = toy_model(&small(), 3).unwrap();
    m.manifest.version = MANIFEST_VERSION + 1;
    let (mp, bp) = model_paths(dir.path(), "v2");
    std::fs::write(&mp, serde_json::to_string(&m.manifest).unwrap()).unwrap();
    std::fs::write(&bp, m.blob_bytes()).unwrap();
    assert!(matches!(Model::load(&mp, &bp), Err(Error::Version { found: 2, expected: 1 })));
}

#[test]
fn missing_blob_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_model(&small(), 3).unwrap();
    let (mp, bp) = m.save(dir.path(), "toy").unwrap();
    std::fs::remove_file(&bp).unwrap();
    let msg = Model::load(&mp, &bp).unwrap_err().to_string();
    assert!(msg.contains(&bp.display().to_string()), "{msg}");
}

#[test]
fn oracle_without_pruning_keeps_counts() {
    let shape = ToyShape { layers: 3, ..ToyShape::default() };
    let m = toy_model(&shape, 9).unwrap();
    let x = toy_input(&m.params(), 6, shape.input_dim, 1);
    let out = plaintext_forward(&m, &x, 6, Variant::Baseline, OracleMode::Fixed).unwrap();
    assert_eq!(out.token_counts, vec![6, 6, 6]);
}

#[test]
fn oracle_prunes_everything_above_one() {
    let shape = ToyShape::default();
    let mut m = toy_model(&shape, 9).unwrap();
    let p = m.params();
    m.manifest.layers[0].theta = p.to_signed(p.encode(1.0).unwrap().0);
    m.manifest.layers[0].beta = p.to_signed(p.encode(2.0).unwrap().0);
    let x = toy_input(&p, 5, shape.input_dim, 1);
    for mode in [OracleMode::Fixed, OracleMode::Float] {
        let out = plaintext_forward(&m, &x, 5, Variant::Prune, mode).unwrap();
        assert_eq!(out.token_counts, vec![0, 0]);
        assert_eq!(out.logits, vec![0.0; shape.classes]);
    }
    let run = private_forward(&m, &x, 5, Variant::PruneReduce, &SessionConfig::new(p, 4), &NetworkModel::lan()).unwrap();
    assert_eq!(run.report.token_counts, vec![0, 0]);
    assert_eq!(run.report.logits, vec![0.0; shape.classes]);
}

#[test]
fn oracle_shape_errors() {
    let m = toy_model(&small(), 1).unwrap();
    let x = toy_input(&m.params(), 2, 3, 1);
    assert!(matches!(plaintext_forward(&m, &x, 3, Variant::Prune, OracleMode::Fixed), Err(Error::Shape(_))));
    assert!(matches!(plaintext_forward(&m, &[], 0, Variant::Prune, OracleMode::Fixed), Err(Error::Empty(_))));
}

#[test]
fn fixed_and_float_oracles_agree() {
    for seed in 0..5 {
        let shape = ToyShape { layers: 2, model_dim: 8, heads: 2, ffn_dim: 16, input_dim: 4, max_tokens: 16, classes: 3 };
        let m = toy_model(&shape, seed).unwrap();
        let x = toy_input(&m.params(), 12, shape.input_dim, seed + 100);
        let a = plaintext_forward(&m, &x, 12, Variant::Baseline, OracleMode::Fixed).unwrap();
        let b = plaintext_forward(&m, &x, 12, Variant::Baseline, OracleMode::Float).unwrap();
        assert!(max_err(&a.logits, &b.logits) <= 2f64.powi(-5), "seed {seed}: {:?} vs {:?}", a.logits, b.logits);
    }
}

#[test]
fn open_thresholds_match_oracle() {
    let shape = ToyShape { layers: 2, model_dim: 8, heads: 2, ffn_dim: 8, input_dim: 4, max_tokens: 16, classes: 2 };
    let m = toy_model(&shape, 11).unwrap();
    let p = m.params();
    let (t, b) = open_thresholds(&p);
    assert!(m.manifest.layers.iter().all(|l| l.theta == t && l.beta == b));
    let x = toy_input(&p, 10, shape.input_dim, 5);
    let run = private_forward(&m, &x, 10, Variant::PruneReduce, &SessionConfig::new(p, 8), &NetworkModel::lan()).unwrap();
    let o = plaintext_forward(&m, &x, 10, Variant::PruneReduce, OracleMode::Fixed).unwrap();
    assert_eq!(run.report.token_counts, vec![10, 10]);
    assert_eq!(run.report.token_counts, o.token_counts);
    assert!(max_err(&run.report.logits, &o.logits) <= 2f64.powi(-5));
}

#[test]
fn half_pruned_counts_match_oracle() {
    let shape = ToyShape { layers: 2, model_dim: 8, heads: 2, ffn_dim: 8, input_dim: 4, max_tokens: 16, classes: 2 };
    let mut m = toy_model(&shape, 21).unwrap();
    let p = m.params();
    let x = toy_input(&p, 12, shape.input_dim, 2);
    calibrate(&mut m, &x, 12, Calibration { prune: 0.5, reduce: 0.5, margin: 8 }).unwrap();
    let o = plaintext_forward(&m, &x, 12, Variant::PruneReduce, OracleMode::Fixed).unwrap();
    let run = private_forward(&m, &x, 12, Variant::PruneReduce, &SessionConfig::new(p, 3), &NetworkModel::lan()).unwrap();
    assert_eq!(run.report.token_counts, o.token_counts);
    assert!(o.token_counts[0] < 12, "calibration found no gap: {:?}", o.token_counts);
    assert!(max_err(&run.report.logits, &o.logits) <= 2f64.powi(-5));
}

#[test]
fn single_token_completes() {
    let m = toy_model(&small(), 2).unwrap();
    let p = m.params();
    let x = toy_input(&p, 1, 3, 2);
    let run = private_forward(&m, &x, 1, Variant::PruneReduce, &SessionConfig::new(p, 1), &NetworkModel::lan()).unwrap();
    let o = plaintext_forward(&m, &x, 1, Variant::PruneReduce, OracleMode::Fixed).unwrap();
    assert_eq!(run.report.token_counts, vec![1]);
    assert!(max_err(&run.report.logits, &o.logits) <= 2f64.powi(-5));
}

#[test]
fn only_the_client_sees_logits() {
    let m = toy_model(&small(), 2).unwrap();
    let p = m.params();
    let x = toy_input(&p, 4, 3, 2);
    let run = private_forward(&m, &x, 4, Variant::Prune, &SessionConfig::new(p, 1), &NetworkModel::lan()).unwrap();
    let [t0, t1] = &run.session.transcripts;
    assert_eq!(t0.count(RevealKind::Output), 0);
    assert_eq!(t1.count(RevealKind::Output), 2);
    assert_eq!(t0.count(RevealKind::Plain) + t1.count(RevealKind::Plain), 0);
}

#[test]
fn token_counts_never_increase_and_bytes_shrink() {
    let shape = ToyShape { layers: 3, model_dim: 8, heads: 2, ffn_dim: 8, input_dim: 4, max_tokens: 16, classes: 2 };
    let mut m = toy_model(&shape, 5).unwrap();
    let p = m.params();
    let x = toy_input(&p, 14, shape.input_dim, 6);
    calibrate(&mut m, &x, 14, Calibration { prune: 0.3, reduce: 0.0, margin: 8 }).unwrap();
    let run = private_forward(&m, &x, 14, Variant::Prune, &SessionConfig::new(p, 2), &NetworkModel::lan()).unwrap();
    let c = &run.report.token_counts;
    assert!(c.windows(2).all(|w| w[1] <= w[0]), "{c:?}");
    let base = private_forward(&m, &x, 14, Variant::Baseline, &SessionConfig::new(p, 2), &NetworkModel::lan()).unwrap();
    for (l, layer) in run.report.layers.iter().enumerate().skip(1) {
        let full = &base.report.layers[l];
        if layer.n_in < full.n_in {
            let attn_ffn = |r: &pruneflow_core::pipeline::InferenceReport, l: usize| {
                ["attn", "ffn"].iter().map(|ph| r.ledger.get(&format!("layer{l}.{ph}")).map_or(0, |s| s.bytes0 + s.bytes1)).sum::<u64>()
            };
            assert!(attn_ffn(&run.report, l) < attn_ffn(&base.report, l));
        }
    }
}
