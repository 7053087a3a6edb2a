//! Self-generated toy models and inputs, plus threshold calibration against
//! the fixed-point oracle.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::Result;
use crate::nonlinear::PolyConfig;
use crate::pipeline::model::{expected_tensors, Dims, LayerMeta, Model};
use crate::pipeline::oracle::{plaintext_forward, OracleMode, Variant};
use crate::ring::FixedPointParams;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyShape {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub input_dim: usize,
    pub max_tokens: usize,
    pub classes: usize,
}

impl Default for ToyShape {
    fn default() -> Self {
        ToyShape { layers: 2, model_dim: 8, heads: 2, ffn_dim: 16, input_dim: 8, max_tokens: 32, classes: 2 }
    }
}

/// Thresholds that disable pruning and reduction: every score is above
/// `-1` and below `2`.
pub fn open_thresholds(params: &FixedPointParams) -> (i64, i64) {
    let t = params.to_signed(params.encode(-1.0).unwrap().0);
    let b = params.to_signed(params.encode(2.0).unwrap().0);
    (t, b)
}

fn enc(params: &FixedPointParams, v: f64) -> u64 {
    params.encode(v).expect("toy weight fits").0
}

/// Random model with Xavier-like weights and no pruning.
pub fn toy_model(shape: &ToyShape, seed: u64) -> Result<Model> {
    let params = FixedPointParams::default();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let (theta, beta) = open_thresholds(&params);
    let layers: Vec<LayerMeta> = (0..shape.layers)
        .map(|_| LayerMeta { heads: shape.heads, ffn_dim: shape.ffn_dim, theta, beta })
        .collect();
    let dims = Dims {
        input_dim: shape.input_dim,
        model_dim: shape.model_dim,
        max_tokens: shape.max_tokens,
        classes: shape.classes,
    };
    let mut tensors = BTreeMap::new();
    for (name, [r, c]) in expected_tensors(&dims, &layers) {
        let vals: Vec<f64> = if name.ends_with("gamma") {
            (0..r * c).map(|_| rng.gen_range(0.8..1.2)).collect()
        } else if name.ends_with("pos") {
            (0..r * c).map(|_| rng.gen_range(-0.1..0.1)).collect()
        } else if r == 1 {
            (0..c).map(|_| rng.gen_range(-0.1..0.1)).collect()
        } else {
            // attention projections get extra gain so maps are not uniform
            let gain = if name.ends_with(".wq") || name.ends_with(".wk") { 2.0 } else { 1.0 };
            let a = gain * (3.0 / r as f64).sqrt();
            (0..r * c).map(|_| rng.gen_range(-a..a)).collect()
        };
        tensors.insert(name, vals.iter().map(|&v| enc(&params, v)).collect());
    }
    Model::assemble(params, PolyConfig::default(), dims, layers, tensors)
}

/// `n x input_dim` token matrix with entries uniform in `[-1, 1]`.
pub fn toy_input(params: &FixedPointParams, n: usize, input_dim: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..n * input_dim).map(|_| enc(params, rng.gen_range(-1.0..1.0))).collect()
}

/// Chooses a threshold in a gap of the sorted `scores` (raw, scale `f`) at
/// least `2 * margin` wide, as close as possible to `target` of the tokens
/// falling at or below it. `None` when no gap qualifies.
fn pick_gap(scores: &[i64], target: f64, margin: i64) -> Option<i64> {
    let mut s = scores.to_vec();
    s.sort_unstable();
    let n = s.len();
    let goal = target * n as f64;
    (1..n)
        .filter(|&i| s[i] - s[i - 1] >= 2 * margin)
        .min_by(|&a, &b| (a as f64 - goal).abs().total_cmp(&(b as f64 - goal).abs()).then(a.cmp(&b)))
        .map(|i| s[i - 1] + (s[i] - s[i - 1]) / 2)
}

/// Targets for [`calibrate`].
#[derive(Clone, Copy, Debug)]
pub struct Calibration {
    /// fraction of each layer's tokens to prune
    pub prune: f64,
    /// fraction of the kept tokens to reduce
    pub reduce: f64,
    /// minimum distance, in ulps, between a threshold and any score
    pub margin: i64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration { prune: 0.3, reduce: 0.5, margin: 16 }
    }
}

/// Sets each layer's thresholds, front to back, so that the fixed-point
/// oracle's scores stay at least `margin` away from them. A layer without a
/// usable gap keeps all tokens (or reduces none).
pub fn calibrate(model: &mut Model, tokens: &[u64], n: usize, cal: Calibration) -> Result<()> {
    let (open_t, open_b) = open_thresholds(&model.params());
    for l in 0..model.manifest.layers.len() {
        let out = plaintext_forward(model, tokens, n, Variant::PruneReduce, OracleMode::Fixed)?;
        let one = (1u64 << model.params().f) as f64;
        let scores: Vec<i64> = out.scores[l].iter().map(|&s| (s * one).round() as i64).collect();
        if scores.is_empty() {
            break;
        }
        let theta = pick_gap(&scores, cal.prune, cal.margin).filter(|_| cal.prune > 0.0).unwrap_or(open_t);
        let kept: Vec<i64> = scores.iter().copied().filter(|&s| s > theta).collect();
        let beta = if kept.is_empty() || cal.reduce <= 0.0 {
            None
        } else {
            pick_gap(&kept, cal.reduce, cal.margin)
        };
        let beta = beta.unwrap_or(open_b).max(theta + 1);
        let meta = &mut model.manifest.layers[l];
        meta.theta = theta;
        meta.beta = beta;
    }
    model.manifest.validate()
}

/// Scaling-benchmark model: 6 layers, `D = 8`, 4 heads. In layer 0 every
/// query attends to the tokens whose feature 0 is set, so only those have
/// non-negligible importance; later layers attend uniformly and keep every
/// survivor.
pub fn bench_model(max_tokens: usize, seed: u64) -> Result<Model> {
    let params = FixedPointParams::default();
    let shape = ToyShape { layers: 6, model_dim: 8, heads: 4, ffn_dim: 16, input_dim: 8, max_tokens, classes: 2 };
    let mut m = toy_model(&shape, seed)?;
    let d = shape.model_dim;
    let mut set = |name: String, vals: Vec<f64>| {
        m.tensors.insert(name, vals.iter().map(|&v| enc(&params, v)).collect());
    };
    set("embed.w".into(), (0..d * d).map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 }).collect());
    set("embed.pos".into(), vec![0.0; max_tokens * d]);
    for l in 0..shape.layers {
        let name = |w: &str| crate::pipeline::model::layer_tensor(l, w);
        // layer 0 queries all point at feature 0; later layers attend uniformly
        set(name("wq"), vec![0.0; d * d]);
        set(name("bq"), vec![if l == 0 { 3.0 } else { 0.0 }; d]);
        set(name("wk"), (0..d * d).map(|i| if i < d { 2.0 } else { 0.0 }).collect());
        set(name("bk"), vec![0.0; d]);
    }
    // theta between cold (~0) and hot (1/30) importance; beta above both
    let theta = params.to_signed(enc(&params, 0.005));
    let beta = params.to_signed(enc(&params, 0.5));
    for meta in &mut m.manifest.layers {
        meta.theta = theta;
        meta.beta = beta;
    }
    m.manifest.validate()?;
    Ok(m)
}

/// Number of attended tokens in [`bench_input`].
pub const BENCH_HOT: usize = 30;

/// `n` tokens of width 8; the first [`BENCH_HOT`] have feature 0 set.
pub fn bench_input(params: &FixedPointParams, n: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n * 8);
    for i in 0..n {
        out.push(enc(params, if i < BENCH_HOT { 1.0 } else { 0.0 }));
        for _ in 1..8 {
            out.push(enc(params, rng.gen_range(-0.5..0.5)));
        }
    }
    out
}
