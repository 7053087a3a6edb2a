//! Plaintext reference transformer.
//!
//! Fixed-point mode replays the private computation on plain signed
//! integers, with the same encodings, segment tables and iteration counts,
//! rounding to nearest wherever the private path truncates. Float mode uses
//! the same approximations of `exp` and GELU but exact arithmetic
//! elsewhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlinear::{Degree, PolyConfig};
use crate::pipeline::model::{layer_tensor, Model};
use crate::ring::FixedPointParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Baseline,
    Prune,
    PruneReduce,
}

impl Variant {
    pub fn prunes(self) -> bool {
        !matches!(self, Variant::Baseline)
    }

    pub fn reduces(self) -> bool {
        matches!(self, Variant::PruneReduce)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Prune => "prune",
            Variant::PruneReduce => "prune-reduce",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "prune" => Ok(Variant::Prune),
            "prune-reduce" => Ok(Variant::PruneReduce),
            _ => Err(Error::InvalidParams(format!("unknown variant {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleMode {
    Fixed,
    Float,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OracleOutput {
    pub logits: Vec<f64>,
    /// fixed-point mode only
    pub logits_raw: Vec<i64>,
    /// tokens left after each layer
    pub token_counts: Vec<usize>,
    /// importance scores of each layer's tokens before pruning
    pub scores: Vec<Vec<f64>>,
    /// low-degree tokens after each layer
    pub reduced: Vec<usize>,
    /// per layer, `[S > beta]` for each kept token (reducing variant only)
    pub reduction_masks: Vec<Vec<bool>>,
}

/// Plain matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy> Mat<T> {
    fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Round-to-nearest shift.
fn rs(x: i128, b: u32) -> i64 {
    if b == 0 {
        return x as i64;
    }
    ((x + (1i128 << (b - 1))) >> b) as i64
}

struct Fixed<'a> {
    p: FixedPointParams,
    cfg: &'a PolyConfig,
}

impl Fixed<'_> {
    fn f(&self) -> u32 {
        self.p.f
    }

    fn enc(&self, v: f64, frac: u32) -> i64 {
        (v * 2f64.powi(frac as i32)).round() as i64
    }

    fn floor(&self, v: f64, frac: u32) -> i64 {
        (v * 2f64.powi(frac as i32)).floor() as i64
    }

    fn matmul(&self, x: &Mat<i64>, w: &Mat<i64>) -> Mat<i64> {
        let mut out = Vec::with_capacity(x.rows * w.cols);
        for i in 0..x.rows {
            for j in 0..w.cols {
                let acc: i128 = (0..x.cols).map(|k| x.data[i * x.cols + k] as i128 * w.data[k * w.cols + j] as i128).sum();
                out.push(rs(acc, self.f()));
            }
        }
        Mat { rows: x.rows, cols: w.cols, data: out }
    }

    fn add_row(&self, x: &mut Mat<i64>, b: &[i64]) {
        for i in 0..x.rows {
            for j in 0..x.cols {
                x.data[i * x.cols + j] += b[j];
            }
        }
    }

    fn exp(&self, z: i64, d: Degree, frac: u32) -> i64 {
        let (n, clip) = self.cfg.exp_params(d);
        if z <= self.floor(clip, self.f()) {
            return 0;
        }
        let shift = frac as i32 - self.f() as i32 - n as i32;
        let mut t = if shift >= 0 { z << shift } else { rs(z as i128, (-shift) as u32) } + (1i64 << frac);
        for _ in 0..n {
            t = rs(t as i128 * t as i128, frac);
        }
        t
    }

    fn edges(lo: f64, hi: f64) -> [f64; 5] {
        let r = hi / lo;
        [lo, lo * r.powf(0.25), lo * r.powf(0.5), lo * r.powf(0.75), hi]
    }

    fn segment(&self, x: i64, edges: &[f64; 5], xfrac: u32) -> usize {
        let q: Vec<i64> = edges[1..4].iter().map(|&e| self.floor(e, xfrac)).collect();
        let b1 = x > q[1];
        let b2 = x > if b1 { q[2] } else { q[0] };
        (b1 as usize) * 2 + b2 as usize
    }

    fn reciprocal(&self, s: i64, k: f64, frac: u32) -> i64 {
        let edges = Self::edges(1.0, k);
        let i = self.segment(s, &edges, frac);
        let mut y = self.enc(2.0 / (edges[i] + edges[i + 1]), frac);
        for _ in 0..self.cfg.recip_iters {
            let e = rs(s as i128 * y as i128, frac);
            y = rs(y as i128 * ((2i64 << frac) - e) as i128, frac);
        }
        y
    }

    fn softmax(&self, x: &Mat<i64>, degrees: &[Degree]) -> Mat<i64> {
        let f = self.f();
        let fe = f + self.cfg.extra_frac;
        let fr = f + self.cfg.recip_extra_frac;
        let k = x.cols;
        let mut out = Vec::with_capacity(x.data.len());
        for i in 0..x.rows {
            let row = x.row(i);
            let mx = *row.iter().max().unwrap();
            let e: Vec<i64> = row.iter().map(|&v| self.exp(v - mx, degrees[i], fe)).collect();
            let s: i64 = e.iter().sum();
            let y = self.reciprocal(s << (fr - fe), k as f64, fr);
            let y = rs(y as i128, fr - fe);
            out.extend(e.iter().map(|&v| rs(v as i128 * y as i128, 2 * fe - f)));
        }
        Mat { rows: x.rows, cols: k, data: out }
    }

    fn gelu(&self, x: i64, d: Degree) -> i64 {
        let f = self.f();
        let fc = f + self.cfg.extra_frac;
        let poly = |c0: f64, terms: &[(f64, i64)]| -> i64 {
            let acc: i128 = self.enc(c0, f + fc) as i128
                + terms.iter().map(|&(c, v)| self.enc(c, fc) as i128 * v as i128).sum::<i128>();
            rs(acc, fc)
        };
        let x2 = rs(x as i128 * x as i128, f);
        match d {
            Degree::High => {
                let [b0, b1, b2] = self.cfg.gelu_breaks.map(|b| self.floor(b, f));
                if x <= b0 {
                    0
                } else if x <= b1 {
                    let x3 = rs(x2 as i128 * x as i128, f);
                    let [c0, c1, c2, c3] = self.cfg.gelu_p3;
                    poly(c0, &[(c1, x), (c2, x2), (c3, x3)])
                } else if x <= b2 {
                    let x3 = rs(x2 as i128 * x as i128, f);
                    let x4 = rs(x2 as i128 * x2 as i128, f);
                    let x6 = rs(x3 as i128 * x3 as i128, f);
                    let [d0, d1, d2, d4, d6] = self.cfg.gelu_p6;
                    poly(d0, &[(d1, x), (d2, x2), (d4, x4), (d6, x6)])
                } else {
                    x
                }
            }
            Degree::Low => {
                let lo = self.floor(-self.cfg.gelu_low_break, f);
                let hi = self.floor(self.cfg.gelu_low_break, f);
                if x <= lo {
                    0
                } else if x <= hi {
                    let [c1, c2] = self.cfg.gelu_low;
                    poly(0.0, &[(c1, x), (c2, x2)])
                } else {
                    x
                }
            }
        }
    }

    fn rsqrt(&self, v: i64, frac: u32) -> i64 {
        let f = self.f();
        let eps = self.cfg.ln_eps_ulps as f64 / 2f64.powi(f as i32);
        let edges = Self::edges(eps, self.cfg.ln_var_max);
        let i = self.segment(v, &edges, f);
        let mut y = self.enc(1.2 / edges[i + 1].sqrt(), frac);
        for _ in 0..self.cfg.rsqrt_iters {
            let a = rs(v as i128 * y as i128, f);
            let b = rs(a as i128 * y as i128, frac);
            let w = rs(((3i64 << frac) - b) as i128, frac - f);
            y = rs(y as i128 * w as i128, f + 1);
        }
        y
    }

    fn layernorm(&self, x: &Mat<i64>, g: &[i64], b: &[i64]) -> Mat<i64> {
        let f = self.f();
        let fc = f + self.cfg.extra_frac;
        let d = x.cols;
        let inv_d = self.enc(1.0 / d as f64, fc) as i128;
        let mut out = Vec::with_capacity(x.data.len());
        for i in 0..x.rows {
            let row = x.row(i);
            let mu = rs(row.iter().map(|&v| v as i128).sum::<i128>() * inv_d, fc);
            let dev: Vec<i64> = row.iter().map(|&v| v - mu).collect();
            let sq: i128 = dev.iter().map(|&v| rs(v as i128 * v as i128, f) as i128).sum();
            let var = rs(sq * inv_d, fc);
            let y = self.rsqrt(var + self.cfg.ln_eps_ulps as i64, fc);
            for j in 0..d {
                let nrm = rs(dev[j] as i128 * y as i128, fc);
                out.push(rs(nrm as i128 * g[j] as i128, f) + b[j]);
            }
        }
        Mat { rows: x.rows, cols: d, data: out }
    }
}

/// Runs the reference forward pass. `tokens` is `n x input_dim`, encoded.
pub fn plaintext_forward(model: &Model, tokens: &[u64], n: usize, variant: Variant, mode: OracleMode) -> Result<OracleOutput> {
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
    match mode {
        OracleMode::Fixed => fixed_forward(model, tokens, n, variant),
        OracleMode::Float => float_forward(model, tokens, n, variant),
    }
}

fn fixed_forward(model: &Model, tokens: &[u64], n: usize, variant: Variant) -> Result<OracleOutput> {
    let p = model.params();
    let cfg = &model.manifest.poly;
    let fx = Fixed { p, cfg };
    let f = p.f;
    let dims = model.dims();
    let d = dims.model_dim;
    let t = |name: &str, rows: usize, cols: usize| Mat {
        rows,
        cols,
        data: model.tensor(name).iter().map(|&v| p.to_signed(v)).collect::<Vec<i64>>(),
    };
    let tok = Mat { rows: n, cols: dims.input_dim, data: tokens.iter().map(|&v| p.to_signed(v)).collect() };
    let mut x = fx.matmul(&tok, &t("embed.w", dims.input_dim, d));
    let pos = t("embed.pos", dims.max_tokens, d);
    for i in 0..n * d {
        x.data[i] += pos.data[i];
    }
    let mut out = OracleOutput::default();
    let mut degrees = vec![Degree::High; n];
    for (l, meta) in model.manifest.layers.iter().enumerate() {
        let rows = x.rows;
        if rows == 0 {
            out.token_counts.push(0);
            out.scores.push(Vec::new());
            out.reduced.push(0);
            continue;
        }
        let lt = |what: &str, r, c| t(&layer_tensor(l, what), r, c);
        let proj = |w: &str, b: &str| {
            let mut m = fx.matmul(&x, &lt(w, d, d));
            fx.add_row(&mut m, &lt(b, 1, d).data);
            m
        };
        let (q, k, v) = (proj("wq", "bq"), proj("wk", "bk"), proj("wv", "bv"));
        let h = meta.heads;
        let hd = d / h;
        let inv = fx.enc(1.0 / (hd as f64).sqrt(), f) as i128;
        let mut att = Vec::with_capacity(h);
        let mut ctx = Mat { rows, cols: d, data: vec![0; rows * d] };
        for head in 0..h {
            let cols = head * hd..(head + 1) * hd;
            let mut sc = Mat { rows, cols: rows, data: Vec::with_capacity(rows * rows) };
            for i in 0..rows {
                for j in 0..rows {
                    let dot: i128 = cols.clone().map(|c| q.data[i * d + c] as i128 * k.data[j * d + c] as i128).sum();
                    sc.data.push(rs(rs(dot, f) as i128 * inv, f));
                }
            }
            let a = fx.softmax(&sc, &degrees);
            for i in 0..rows {
                for c in cols.clone() {
                    let acc: i128 = (0..rows).map(|j| a.data[i * rows + j] as i128 * v.data[j * d + c] as i128).sum();
                    ctx.data[i * d + c] = rs(acc, f);
                }
            }
            att.push(a);
        }
        let mut o = fx.matmul(&ctx, &lt("wo", d, d));
        fx.add_row(&mut o, &lt("bo", 1, d).data);
        let mut hmat = x.clone();
        for i in 0..hmat.data.len() {
            hmat.data[i] += o.data[i];
        }

        // importance scores
        let fs = f + cfg.extra_frac;
        let inv_hn = fx.enc(1.0 / (h * rows) as f64, fs) as i128;
        let scores: Vec<i64> = (0..rows)
            .map(|i| {
                let col: i128 = att.iter().map(|a| (0..rows).map(|j| a.data[j * rows + i] as i128).sum::<i128>()).sum();
                rs(col * inv_hn, fs)
            })
            .collect();
        out.scores.push(scores.iter().map(|&s| s as f64 / 2f64.powi(f as i32)).collect());

        let keep: Vec<usize> = if variant.prunes() {
            (0..rows).filter(|&i| scores[i] > meta.theta).collect()
        } else {
            (0..rows).collect()
        };
        degrees = keep
            .iter()
            .map(|&i| if variant.reduces() && scores[i] <= meta.beta { Degree::Low } else { Degree::High })
            .collect();
        let kept = Mat {
            rows: keep.len(),
            cols: d,
            data: keep.iter().flat_map(|&i| hmat.row(i).to_vec()).collect(),
        };
        out.token_counts.push(kept.rows);
        out.reduced.push(degrees.iter().filter(|&&g| g == Degree::Low).count());
        if variant.reduces() {
            out.reduction_masks.push(degrees.iter().map(|&g| g == Degree::High).collect());
        }

        let y = fx.layernorm(&kept, &lt("ln1.gamma", 1, d).data, &lt("ln1.beta", 1, d).data);
        let mut u = fx.matmul(&y, &lt("ffn.w1", d, meta.ffn_dim));
        fx.add_row(&mut u, &lt("ffn.b1", 1, meta.ffn_dim).data);
        for i in 0..u.rows {
            for j in 0..u.cols {
                u.data[i * u.cols + j] = fx.gelu(u.data[i * u.cols + j], degrees[i]);
            }
        }
        let mut w = fx.matmul(&u, &lt("ffn.w2", meta.ffn_dim, d));
        fx.add_row(&mut w, &lt("ffn.b2", 1, d).data);
        for i in 0..w.data.len() {
            w.data[i] += y.data[i];
        }
        x = fx.layernorm(&w, &lt("ln2.gamma", 1, d).data, &lt("ln2.beta", 1, d).data);
    }
    let classes = dims.classes;
    out.logits_raw = if x.rows == 0 {
        vec![0; classes]
    } else {
        let first = Mat { rows: 1, cols: d, data: x.row(0).to_vec() };
        let mut lg = fx.matmul(&first, &t("head.w", d, classes));
        fx.add_row(&mut lg, &t("head.b", 1, classes).data);
        lg.data
    };
    out.logits = out.logits_raw.iter().map(|&v| v as f64 / 2f64.powi(f as i32)).collect();
    Ok(out)
}

fn float_forward(model: &Model, tokens: &[u64], n: usize, variant: Variant) -> Result<OracleOutput> {
    let p = model.params();
    let cfg = &model.manifest.poly;
    let dims = model.dims();
    let d = dims.model_dim;
    let dec = |v: u64| p.to_signed(v) as f64 / 2f64.powi(p.f as i32);
    let t = |name: &str| model.tensor(name).iter().map(|&v| dec(v)).collect::<Vec<f64>>();
    let matmul = |x: &[f64], r: usize, k: usize, w: &[f64], c: usize| -> Vec<f64> {
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = (0..k).map(|m| x[i * k + m] * w[m * c + j]).sum();
            }
        }
        out
    };
    let add_row = |x: &mut [f64], b: &[f64]| {
        for (i, v) in x.iter_mut().enumerate() {
            *v += b[i % b.len()];
        }
    };
    let exp = |z: f64, deg: Degree| {
        let (n, clip) = cfg.exp_params(deg);
        if z <= clip {
            0.0
        } else {
            (1.0 + z / 2f64.powi(n as i32)).powi(1 << n)
        }
    };
    let gelu = |x: f64, deg: Degree| match deg {
        Degree::High => {
            let [b0, b1, b2] = cfg.gelu_breaks;
            if x <= b0 {
                0.0
            } else if x <= b1 {
                let [c0, c1, c2, c3] = cfg.gelu_p3;
                c0 + c1 * x + c2 * x * x + c3 * x.powi(3)
            } else if x <= b2 {
                let [c0, c1, c2, c4, c6] = cfg.gelu_p6;
                c0 + c1 * x + c2 * x * x + c4 * x.powi(4) + c6 * x.powi(6)
            } else {
                x
            }
        }
        Degree::Low => {
            let b = cfg.gelu_low_break;
            if x <= -b {
                0.0
            } else if x <= b {
                cfg.gelu_low[0] * x + cfg.gelu_low[1] * x * x
            } else {
                x
            }
        }
    };
    let eps = cfg.ln_eps_ulps as f64 / 2f64.powi(p.f as i32);
    let layernorm = |x: &[f64], g: &[f64], b: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        for row in x.chunks(d) {
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + eps).sqrt();
            out.extend(row.iter().enumerate().map(|(j, v)| (v - mu) * r * g[j] + b[j]));
        }
        out
    };

    let tok: Vec<f64> = tokens.iter().map(|&v| dec(v)).collect();
    let mut x = matmul(&tok, n, dims.input_dim, &t("embed.w"), d);
    let pos = t("embed.pos");
    for i in 0..n * d {
        x[i] += pos[i];
    }
    let mut rows = n;
    let mut out = OracleOutput::default();
    let mut degrees = vec![Degree::High; n];
    for (l, meta) in model.manifest.layers.iter().enumerate() {
        if rows == 0 {
            out.token_counts.push(0);
            out.scores.push(Vec::new());
            out.reduced.push(0);
            continue;
        }
        let lt = |w: &str| t(&layer_tensor(l, w));
        let proj = |w: &str, b: &str| {
            let mut m = matmul(&x, rows, d, &lt(w), d);
            add_row(&mut m, &lt(b));
            m
        };
        let (q, k, v) = (proj("wq", "bq"), proj("wk", "bk"), proj("wv", "bv"));
        let h = meta.heads;
        let hd = d / h;
        let mut ctx = vec![0.0; rows * d];
        let mut colsum = vec![0.0; rows];
        for head in 0..h {
            let cs = head * hd..(head + 1) * hd;
            for i in 0..rows {
                let sc: Vec<f64> = (0..rows)
                    .map(|j| cs.clone().map(|c| q[i * d + c] * k[j * d + c]).sum::<f64>() / (hd as f64).sqrt())
                    .collect();
                let mx = sc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = sc.iter().map(|&s| exp(s - mx, degrees[i])).collect();
                let sum: f64 = e.iter().sum();
                for j in 0..rows {
                    let a = e[j] / sum;
                    colsum[j] += a;
                    for c in cs.clone() {
                        ctx[i * d + c] += a * v[j * d + c];
                    }
                }
            }
        }
        let mut o = matmul(&ctx, rows, d, &lt("wo"), d);
        add_row(&mut o, &lt("bo"));
        let hmat: Vec<f64> = x.iter().zip(&o).map(|(a, b)| a + b).collect();
        let scores: Vec<f64> = colsum.iter().map(|c| c / (h * rows) as f64).collect();
        out.scores.push(scores.clone());
        let theta = meta.theta as f64 / 2f64.powi(p.f as i32);
        let beta = meta.beta as f64 / 2f64.powi(p.f as i32);
        let keep: Vec<usize> = if variant.prunes() {
            (0..rows).filter(|&i| scores[i] > theta).collect()
        } else {
            (0..rows).collect()
        };
        degrees = keep
            .iter()
            .map(|&i| if variant.reduces() && scores[i] <= beta { Degree::Low } else { Degree::High })
            .collect();
        let kept: Vec<f64> = keep.iter().flat_map(|&i| hmat[i * d..(i + 1) * d].to_vec()).collect();
        rows = keep.len();
        out.token_counts.push(rows);
        out.reduced.push(degrees.iter().filter(|&&g| g == Degree::Low).count());
        if variant.reduces() {
            out.reduction_masks.push(degrees.iter().map(|&g| g == Degree::High).collect());
        }

        let y = layernorm(&kept, &lt("ln1.gamma"), &lt("ln1.beta"));
        let mut u = matmul(&y, rows, d, &lt("ffn.w1"), meta.ffn_dim);
        add_row(&mut u, &lt("ffn.b1"));
        for i in 0..rows {
            for j in 0..meta.ffn_dim {
                u[i * meta.ffn_dim + j] = gelu(u[i * meta.ffn_dim + j], degrees[i]);
            }
        }
        let mut w = matmul(&u, rows, meta.ffn_dim, &lt("ffn.w2"), d);
        add_row(&mut w, &lt("ffn.b2"));
        for i in 0..w.len() {
            w[i] += y[i];
        }
        x = layernorm(&w, &lt("ln2.gamma"), &lt("ln2.beta"));
    }
    out.logits = if rows == 0 {
        vec![0.0; dims.classes]
    } else {
        let mut lg = matmul(&x[..d], 1, d, &t("head.w"), dims.classes);
        add_row(&mut lg, &t("head.b"));
        lg
    };
    Ok(out)
}
