//! The oracle-equivalence sweep and the token-count scaling benchmark.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::channel::{estimate_time, NetworkModel};
use crate::error::Result;
use crate::pipeline::toy::{bench_input, bench_model, calibrate, toy_input, toy_model, Calibration, ToyShape};
use crate::pipeline::{plaintext_forward, private_forward, Model, OracleMode, OracleOutput, Variant};
use crate::sharing::PackedBits;
use crate::sharing::{AdderKind, SessionConfig};
use crate::transcript::{audit, Disclosure};

/// Largest tolerated logit difference between the private pass and the
/// fixed-point oracle.
pub const LOGIT_TOLERANCE: f64 = 1.0 / 32.0;

/// A calibrated random toy model with its input.
pub struct ToyCase {
    pub seed: u64,
    pub model: Model,
    pub tokens: Vec<u64>,
    pub n: usize,
}

/// Random shape with `L <= 3`, `D <= 32`, `n <= 32`, thresholds calibrated
/// to prune and reduce about a third of the tokens per layer.
pub fn toy_case(seed: u64) -> Result<ToyCase> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x70c5_ca5e);
    let heads = [1usize, 2, 4][rng.gen_range(0..3)];
    let hd = [2usize, 4, 8][rng.gen_range(0..3)];
    let model_dim = heads * hd;
    let shape = ToyShape {
        layers: rng.gen_range(1..=3),
        model_dim,
        heads,
        ffn_dim: 2 * model_dim,
        input_dim: rng.gen_range(1..=8),
        max_tokens: 32,
        classes: rng.gen_range(2..=4),
    };
    let n = rng.gen_range(1..=32);
    let mut model = toy_model(&shape, seed)?;
    let tokens = toy_input(&model.params(), n, shape.input_dim, seed.wrapping_add(1));
    calibrate(&mut model, &tokens, n, Calibration { prune: 0.3, reduce: 0.4, margin: 16 })?;
    Ok(ToyCase { seed, model, tokens, n })
}

/// Outcome of one toy case.
#[derive(Clone, Debug, Serialize)]
pub struct CaseResult {
    pub seed: u64,
    pub tokens: usize,
    pub layers: usize,
    pub model_dim: usize,
    pub oracle_counts: Vec<usize>,
    pub private_counts: Vec<usize>,
    pub max_logit_err: f64,
    pub unclassified_reveals: usize,
    /// `None` when the case passed
    pub failure: Option<String>,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

/// Runs one case through both paths and the transcript audit. `fault`
/// corrupts one dealer triple.
pub fn check_case(case: &ToyCase, variant: Variant, fault: Option<u64>) -> Result<CaseResult> {
    let params = case.model.params();
    let oracle = plaintext_forward(&case.model, &case.tokens, case.n, variant, OracleMode::Fixed)?;
    let mut cfg = SessionConfig::new(params, case.seed.wrapping_mul(31).wrapping_add(7));
    cfg.fault = fault;
    let mut res = CaseResult {
        seed: case.seed,
        tokens: case.n,
        layers: case.model.manifest.layers.len(),
        model_dim: case.model.dims().model_dim,
        oracle_counts: oracle.token_counts.clone(),
        private_counts: Vec::new(),
        max_logit_err: f64::NAN,
        unclassified_reveals: 0,
        failure: None,
    };
    let run = match private_forward(&case.model, &case.tokens, case.n, variant, &cfg, &NetworkModel::lan()) {
        Ok(r) => r,
        Err(e) => {
            res.failure = Some(format!("protocol error: {e}"));
            return Ok(res);
        }
    };
    res.private_counts = run.report.token_counts.clone();
    res.max_logit_err = run
        .report
        .logits
        .iter()
        .zip(&oracle.logits)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let expected = expected_disclosure(&oracle, variant);
    for (party, t) in run.session.transcripts.iter().enumerate() {
        let d = Disclosure { output_allowed: party == 1, ..expected.clone() };
        res.unclassified_reveals += audit(t, &d).unclassified.len();
    }
    res.failure = if res.private_counts != res.oracle_counts {
        Some(format!("token counts {:?} vs oracle {:?}", res.private_counts, res.oracle_counts))
    } else if !(res.max_logit_err <= LOGIT_TOLERANCE) {
        Some(format!("logit error {:.5} above {LOGIT_TOLERANCE}", res.max_logit_err))
    } else if res.unclassified_reveals > 0 {
        Some(format!("{} unclassified reveals", res.unclassified_reveals))
    } else {
        None
    };
    Ok(res)
}

/// What a run may disclose, derived from the plaintext oracle: the kept
/// count of every layer that had tokens and the packed reduction masks.
pub fn expected_disclosure(oracle: &OracleOutput, variant: Variant) -> Disclosure {
    if !variant.prunes() {
        return Disclosure::default();
    }
    let mut token_counts = Vec::new();
    let mut n_in = oracle.token_counts.first().map_or(0, |_| usize::MAX);
    for &c in &oracle.token_counts {
        if n_in > 0 {
            token_counts.push(c as u64);
        }
        n_in = c;
    }
    let reduction_words = oracle
        .reduction_masks
        .iter()
        .flat_map(|m| PackedBits::from_bools(m).words().to_vec())
        .collect();
    Disclosure { token_counts, reduction_words, output_allowed: false }
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifySummary {
    pub cases: Vec<CaseResult>,
    pub fault: Option<u64>,
}

impl VerifySummary {
    pub fn passed(&self) -> bool {
        !self.cases.is_empty() && self.cases.iter().all(CaseResult::passed)
    }
}

/// Oracle equivalence over `seeds`, optionally with one corrupted triple.
pub fn verify_suite(seeds: &[u64], fault: Option<u64>) -> Result<VerifySummary> {
    let mut cases = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let case = toy_case(seed)?;
        cases.push(check_case(&case, Variant::PruneReduce, fault)?);
    }
    Ok(VerifySummary { cases, fault })
}

/// One line of the scaling table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub variant: String,
    pub bytes: u64,
    pub rounds: u64,
    pub est_lan_s: f64,
    pub est_wan_s: f64,
    pub swaps: u64,
}

pub const BENCH_HEADER: &str = "n,variant,bytes,rounds,est_lan_s,est_wan_s,swaps";

impl BenchRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{}",
            self.n, self.variant, self.bytes, self.rounds, self.est_lan_s, self.est_wan_s, self.swaps
        )
    }
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(BENCH_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

/// Runs the bench model on `n` tokens for every variant in `ns`.
pub fn bench(ns: &[usize], variants: &[Variant], seed: u64, adder: AdderKind) -> Result<Vec<BenchRow>> {
    let max = ns.iter().copied().max().unwrap_or(1);
    let model = bench_model(max, seed)?;
    let params = model.params();
    let mut rows = Vec::new();
    for &n in ns {
        let tokens = bench_input(&params, n, seed.wrapping_add(n as u64));
        for &v in variants {
            let mut cfg = SessionConfig::new(params, seed);
            cfg.adder = adder;
            cfg.keep_transcript = false;
            let run = private_forward(&model, &tokens, n, v, &cfg, &NetworkModel::lan())?;
            let ledger = &run.session.ledger;
            rows.push(BenchRow {
                n,
                variant: v.name().to_string(),
                bytes: ledger.total_bytes(),
                rounds: ledger.total_rounds(),
                est_lan_s: estimate_time(ledger, &NetworkModel::lan()),
                est_wan_s: estimate_time(ledger, &NetworkModel::wan()),
                swaps: run.report.layers.iter().map(|l| l.swaps).sum(),
            });
        }
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let cov: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let var: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    cov / var
}
