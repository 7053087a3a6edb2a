//! The two-party forward pass.
//!
//! Party 0 holds the model, party 1 the tokens. Weights and tokens are
//! secret-shared up front; every later value stays shared except the
//! per-layer kept counts, the reduction masks and the final logits, which
//! only party 1 receives.

use crate::channel::NetworkModel;
use crate::error::{Error, Result};
use crate::linear::{add_bias, attention_scores_many, matmul_many, matmul_shared, residual_add, SharedMatrix};
use crate::nonlinear::{gelu_shared, layernorm_shared, softmax_shared, Degree, PolyConfig};
use crate::pipeline::model::{expected_tensors, layer_tensor, Dims, LayerMeta, Model};
use crate::pipeline::oracle::Variant;
use crate::pipeline::report::{InferenceReport, LayerReport};
use crate::pruning::{
    bind_and_count, importance_scores, oblivious_compact, prune_mask, reduction_mask, truncate_and_strip,
};
use crate::ring::FixedPointParams;
use crate::sharing::{run_session, Party, SessionConfig, SessionOutput, Threshold};
use crate::transcript::RevealKind;

/// What both parties know about the model: shapes and approximation
/// settings, but no weights or thresholds.
#[derive(Clone, Debug)]
struct PublicShape {
    params: FixedPointParams,
    poly: PolyConfig,
    dims: Dims,
    /// heads and FFN width per layer
    layers: Vec<(usize, usize)>,
    holder: u8,
}

impl PublicShape {
    fn of(model: &Model) -> Self {
        let m = &model.manifest;
        PublicShape {
            params: m.params,
            poly: m.poly.clone(),
            dims: m.dims.clone(),
            layers: m.layers.iter().map(|l| (l.heads, l.ffn_dim)).collect(),
            holder: m.threshold_holder,
        }
    }

    /// Placeholder metadata for shape bookkeeping on the non-owner side.
    fn metas(&self) -> Vec<LayerMeta> {
        self.layers.iter().map(|&(heads, ffn_dim)| LayerMeta { heads, ffn_dim, theta: 0, beta: 1 }).collect()
    }
}

/// Per-party outcome of the forward pass.
#[derive(Debug, Default)]
struct PartyResult {
    /// party 1 only
    logits: Option<Vec<u64>>,
    token_counts: Vec<usize>,
    swaps: Vec<u64>,
    reduced: Vec<usize>,
}

/// Everything a run produces.
pub struct PrivateRun {
    pub report: InferenceReport,
    /// raw logits as party 1 reconstructed them
    pub logits_raw: Vec<u64>,
    pub session: SessionOutput<(), ()>,
}

/// Runs the private forward pass of `model` on the `n x input_dim` encoded
/// `tokens`.
pub fn private_forward(
    model: &Model,
    tokens: &[u64],
    n: usize,
    variant: Variant,
    cfg: &SessionConfig,
    net: &NetworkModel,
) -> Result<PrivateRun> {
    let dims = model.dims();
    if n == 0 {
        return Err(Error::Empty("token matrix"));
    }
    if tokens.len() != n * dims.input_dim {
        return Err(Error::Shape(format!("{} token values for {n} x {}", tokens.len(), dims.input_dim)));
    }
    if n > dims.max_tokens {
        return Err(Error::Shape(format!("{n} tokens exceed the positional table ({})", dims.max_tokens)));
    }
    if cfg.params != model.params() {
        return Err(Error::InvalidParams("session and model fixed-point parameters differ".into()));
    }
    model.manifest.validate()?;
    let shape = PublicShape::of(model);
    let thresholds: Vec<(u64, u64)> = model
        .manifest
        .layers
        .iter()
        .map(|l| (shape.params.from_signed(l.theta), shape.params.from_signed(l.beta)))
        .collect();
    let holder = shape.holder;
    let th0 = (holder == 0).then_some(thresholds.as_slice());
    let th1 = (holder == 1).then_some(thresholds.as_slice());

    let out = run_session(
        cfg,
        async |p: &mut Party| forward_party(p, &shape, Some(model), None, th0, n, variant).await,
        async |p: &mut Party| forward_party(p, &shape, None, Some(tokens), th1, n, variant).await,
    )?;
    let r0 = out.out0?;
    let r1 = out.out1?;
    if r0.token_counts != r1.token_counts {
        return Err(Error::Validation("parties disagree on token counts".into()));
    }
    let logits_raw = r1.logits.ok_or(Error::Validation("client received no logits".into()))?;
    let session = SessionOutput {
        out0: (),
        out1: (),
        ledger: out.ledger,
        transcripts: out.transcripts,
        logs: out.logs,
        usage: out.usage,
    };
    let ledger = &session.ledger;

    let mut layers = Vec::new();
    let mut n_in = n;
    for l in 0..shape.layers.len() {
        let prefix = format!("layer{l}.");
        let bytes = ledger.phases().iter().filter(|(k, _)| k.starts_with(&prefix)).map(|(_, v)| v.bytes()).sum();
        let n_out = r1.token_counts[l];
        layers.push(LayerReport { layer: l, n_in, n_out, swaps: r1.swaps[l], bytes, reduced_count: r1.reduced[l] });
        n_in = n_out;
    }
    let params = shape.params;
    let report = InferenceReport {
        variant: variant.name().to_string(),
        tokens: n,
        logits: logits_raw.iter().map(|&v| params.decode(crate::RingElement(v))).collect(),
        token_counts: r1.token_counts.clone(),
        layers,
        ledger: ledger.summary(),
        total_bytes: ledger.total_bytes(),
        total_rounds: ledger.total_rounds(),
        network: *net,
        est_seconds: InferenceReport::estimates(ledger, net),
        transcript_digests: [session.transcripts[0].digest(), session.transcripts[1].digest()],
    };
    Ok(PrivateRun { report, logits_raw, session })
}

/// Splits a flat share vector back into named matrices.
struct Weights {
    names: Vec<String>,
    mats: Vec<SharedMatrix>,
}

impl Weights {
    fn get(&self, name: &str) -> &SharedMatrix {
        let i = self.names.iter().position(|n| n == name).unwrap_or_else(|| panic!("no tensor {name}"));
        &self.mats[i]
    }

    fn layer(&self, l: usize, what: &str) -> &SharedMatrix {
        self.get(&layer_tensor(l, what))
    }
}

async fn forward_party(
    p: &mut Party,
    shape: &PublicShape,
    model: Option<&Model>,
    tokens: Option<&[u64]>,
    thresholds: Option<&[(u64, u64)]>,
    n: usize,
    variant: Variant,
) -> Result<PartyResult> {
    let dims = &shape.dims;
    let d = dims.model_dim;
    let cfg = &shape.poly;
    let me = p.id();

    // setup: share weights (party 0) and tokens (party 1)
    p.set_phase("setup");
    // positions are model constants that party 0 adds to its own share
    let table: Vec<_> = expected_tensors(dims, &shape.metas()).into_iter().filter(|(name, _)| name != "embed.pos").collect();
    let total: usize = table.iter().map(|(_, s)| s[0] * s[1]).sum();
    let flat: Option<Vec<u64>> =
        model.map(|m| table.iter().flat_map(|(name, _)| m.tensor(name).iter().copied()).collect());
    let shared = p.input(0, flat.as_deref(), total).await?;
    let mut off = 0;
    let mut w = Weights { names: Vec::new(), mats: Vec::new() };
    for (name, [r, c]) in table {
        w.mats.push(SharedMatrix::new(r, c, shared[off..off + r * c].to_vec())?);
        w.names.push(name);
        off += r * c;
    }
    let tok = p.input(1, tokens, n * dims.input_dim).await?;
    let tok = SharedMatrix::new(n, dims.input_dim, tok)?;

    // embedding plus public positions, added by party 0
    p.set_phase("embed");
    let mut x = matmul_shared(p, &tok, w.get("embed.w")).await?;
    if me == 0 {
        let pos = &model.expect("party 0 holds the model").tensor("embed.pos")[..n * d];
        x.data = p.add_public(&x.data, pos);
    }

    let mut res = PartyResult::default();
    let mut degrees = vec![Degree::High; n];
    for (l, &(heads, ffn)) in shape.layers.iter().enumerate() {
        let rows = x.rows;
        if rows == 0 {
            res.token_counts.push(0);
            res.swaps.push(0);
            res.reduced.push(0);
            continue;
        }

        p.set_phase(&format!("layer{l}.attn"));
        let qkv = matmul_many(p, &[(&x, w.layer(l, "wq")), (&x, w.layer(l, "wk")), (&x, w.layer(l, "wv"))]).await?;
        let q = add_bias(p, &qkv[0], w.layer(l, "bq"))?;
        let k = add_bias(p, &qkv[1], w.layer(l, "bk"))?;
        let v = add_bias(p, &qkv[2], w.layer(l, "bv"))?;
        let hd = d / heads;
        let qs: Vec<SharedMatrix> = (0..heads).map(|h| q.columns(h * hd, hd)).collect();
        let ks: Vec<SharedMatrix> = (0..heads).map(|h| k.columns(h * hd, hd)).collect();
        let vs: Vec<SharedMatrix> = (0..heads).map(|h| v.columns(h * hd, hd)).collect();
        let pairs: Vec<(&SharedMatrix, &SharedMatrix)> = qs.iter().zip(&ks).collect();
        let scores = attention_scores_many(p, &pairs, hd).await?;
        // all heads' rows in one softmax
        let stacked = SharedMatrix::new(heads * rows, rows, scores.iter().flat_map(|s| s.data.iter().copied()).collect())?;
        let stacked_deg: Vec<Degree> = (0..heads).flat_map(|_| degrees.iter().copied()).collect();
        let probs = softmax_shared(p, &stacked, &stacked_deg, cfg).await?;
        let att: Vec<SharedMatrix> = (0..heads)
            .map(|h| SharedMatrix::new(rows, rows, probs.data[h * rows * rows..(h + 1) * rows * rows].to_vec()))
            .collect::<Result<_>>()?;
        let av: Vec<(&SharedMatrix, &SharedMatrix)> = att.iter().zip(&vs).collect();
        let ctx = SharedMatrix::hstack(&matmul_many(p, &av).await?)?;
        let o = matmul_shared(p, &ctx, w.layer(l, "wo")).await?;
        let o = add_bias(p, &o, w.layer(l, "bo"))?;
        let h = residual_add(p, &x, &o)?;

        let (kept, swaps) = if variant.prunes() {
            p.set_phase(&format!("layer{l}.prune"));
            let s = importance_scores(p, &att, cfg.extra_frac)?;
            let theta: Option<Vec<u64>> = thresholds.map(|t| vec![t[l].0; rows]);
            let th = Threshold::held_by(shape.holder, me, theta.as_deref());
            let mask = prune_mask(p, &s, th).await?;
            let (mut bound, n_kept) = bind_and_count(p, &h, &s, &mask).await?;
            let swaps = oblivious_compact(p, &mut bound, rows - n_kept).await?;
            let (kept, kept_scores) = truncate_and_strip(&bound, n_kept);
            degrees = if variant.reduces() {
                let beta: Option<Vec<u64>> = thresholds.map(|t| vec![t[l].1; n_kept]);
                let th = Threshold::held_by(shape.holder, me, beta.as_deref());
                let high = reduction_mask(p, &kept_scores, th).await?;
                high.iter().map(|&b| if b { Degree::High } else { Degree::Low }).collect()
            } else {
                vec![Degree::High; n_kept]
            };
            (kept, swaps)
        } else {
            degrees = vec![Degree::High; rows];
            (h, 0)
        };
        res.token_counts.push(kept.rows);
        res.swaps.push(swaps);
        res.reduced.push(degrees.iter().filter(|&&g| g == Degree::Low).count());
        if kept.rows == 0 {
            x = kept;
            continue;
        }

        p.set_phase(&format!("layer{l}.ffn"));
        let y = layernorm_shared(p, &kept, w.layer(l, "ln1.gamma"), w.layer(l, "ln1.beta"), cfg).await?;
        let u = matmul_shared(p, &y, w.layer(l, "ffn.w1")).await?;
        let u = add_bias(p, &u, w.layer(l, "ffn.b1"))?;
        debug_assert_eq!(u.cols, ffn);
        let g = gelu_shared(p, &u, &degrees, cfg).await?;
        let z = matmul_shared(p, &g, w.layer(l, "ffn.w2")).await?;
        let z = add_bias(p, &z, w.layer(l, "ffn.b2"))?;
        let z = residual_add(p, &z, &y)?;
        x = layernorm_shared(p, &z, w.layer(l, "ln2.gamma"), w.layer(l, "ln2.beta"), cfg).await?;
    }

    p.set_phase("output");
    res.logits = if x.rows == 0 {
        // every token was pruned; the count already told both parties
        (me == 1).then(|| vec![0; dims.classes])
    } else {
        let first = x.head_rows(1);
        let lg = matmul_shared(p, &first, w.get("head.w")).await?;
        let lg = add_bias(p, &lg, w.get("head.b"))?;
        p.reveal_to(1, RevealKind::Output, &lg.data).await?
    };
    Ok(res)
}
