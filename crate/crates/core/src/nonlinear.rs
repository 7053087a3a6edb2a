//! Shared softmax, GELU and layer normalization.
//!
//! Each token row is evaluated with either the high-degree or the
//! low-degree approximation. Intermediate values that need more precision
//! than the model scale `f` are carried at `f + extra_frac` fractional bits
//! (reciprocals at `f + recip_extra_frac`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear::SharedMatrix;
use crate::ring::FixedPointParams;
use crate::sharing::{PackedBits, Party};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Degree {
    High,
    Low,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolyConfig {
    pub exp_high_n: u32,
    pub exp_low_n: u32,
    pub exp_clip_t: f64,
    /// clip for the low-degree exponential, where `(1 + x/8)^8` stops
    /// being monotone below `-8`
    pub exp_low_clip_t: f64,
    /// `[-5, -1.97, 3]`
    pub gelu_breaks: [f64; 3],
    /// coefficients of `x^0..x^3`
    pub gelu_p3: [f64; 4],
    /// coefficients of `x^0, x^1, x^2, x^4, x^6`
    pub gelu_p6: [f64; 5],
    pub gelu_low_break: f64,
    /// coefficients of `x` and `x^2`
    pub gelu_low: [f64; 2],
    pub extra_frac: u32,
    pub recip_extra_frac: u32,
    pub recip_iters: u32,
    pub rsqrt_iters: u32,
    /// layer-norm epsilon in units of `2^-f`
    pub ln_eps_ulps: u64,
    /// public upper bound on a row variance
    pub ln_var_max: f64,
}

impl Default for PolyConfig {
    fn default() -> Self {
        PolyConfig {
            exp_high_n: 6,
            exp_low_n: 3,
            exp_clip_t: -13.0,
            exp_low_clip_t: -8.0,
            gelu_breaks: [-5.0, -1.97, 3.0],
            gelu_p3: [-0.50540312, -0.42226581, -0.11807613, -0.01103413],
            gelu_p6: [0.00852632, 0.5, 0.36032927, -0.03768820, 0.00180675],
            gelu_low_break: 1.7626,
            gelu_low: [0.5, 0.28367],
            extra_frac: 6,
            recip_extra_frac: 8,
            recip_iters: 4,
            rsqrt_iters: 6,
            ln_eps_ulps: 16,
            ln_var_max: 256.0,
        }
    }
}

impl PolyConfig {
    pub fn validate(&self, params: &FixedPointParams) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(format!("poly config: {m}")));
        if self.exp_high_n == 0 || self.exp_low_n == 0 || self.exp_high_n > 16 || self.exp_low_n > 16 {
            return bad("exponential squarings must be in 1..=16");
        }
        if !(self.exp_clip_t < 0.0 && self.exp_low_clip_t < 0.0) {
            return bad("clip boundaries must be negative");
        }
        let [a, b, c] = self.gelu_breaks;
        if !(a < b && b < c) || !(self.gelu_low_break > 0.0) {
            return bad("GELU breakpoints must be increasing");
        }
        let widest = params.f + self.extra_frac.max(self.recip_extra_frac);
        if 2 * widest + 8 > params.ell {
            return bad("internal precision too wide for the ring");
        }
        if self.ln_eps_ulps == 0 || !(self.ln_var_max > self.ln_eps_ulps as f64 / 2f64.powi(params.f as i32)) {
            return bad("layer-norm variance range is empty");
        }
        if self.recip_iters == 0 || self.rsqrt_iters == 0 {
            return bad("Newton iteration counts must be positive");
        }
        Ok(())
    }

    pub fn exp_params(&self, d: Degree) -> (u32, f64) {
        match d {
            Degree::High => (self.exp_high_n, self.exp_clip_t),
            Degree::Low => (self.exp_low_n, self.exp_low_clip_t),
        }
    }
}

fn enc_at(params: &FixedPointParams, v: f64, frac: u32) -> u64 {
    params.encode_at(v, frac).expect("constant fits the ring").0
}

fn floor_at(params: &FixedPointParams, v: f64, frac: u32) -> u64 {
    params.encode_floor_at(v, frac).expect("constant fits the ring").0
}

fn broadcast(per_row: &[u64], cols: usize) -> Vec<u64> {
    per_row.iter().flat_map(|&v| std::iter::repeat_n(v, cols)).collect()
}

fn row_sums(p: &Party, data: &[u64], cols: usize) -> Vec<u64> {
    let m = p.params().mask();
    data.chunks(cols).map(|r| r.iter().fold(0u64, |a, v| a.wrapping_add(*v)) & m).collect()
}

/// Clipped `(1 + x/2^n)^(2^n)` for `x` at scale `f`, one `(n, clip)` per
/// element. The result is at `frac` fractional bits.
pub async fn approx_exp_mixed(p: &mut Party, x: &[u64], exps: &[(u32, f64)], frac: u32) -> Result<Vec<u64>> {
    let params = p.params();
    let f = params.f;
    if exps.len() != x.len() {
        return Err(Error::Shape("one exponential exps per element".into()));
    }
    let clips: Vec<u64> = exps.iter().map(|&(_, t)| floor_at(&params, t, f)).collect();
    let keep = p.gt_public(x, &clips).await?;
    let keep = p.b2a(&keep).await?;

    let mut t: Vec<u64> = x
        .iter()
        .zip(exps)
        .map(|(&v, &(n, _))| {
            let shift = frac as i32 - f as i32 - n as i32;
            if shift >= 0 {
                params.reduce(v << shift)
            } else {
                p.trunc(&[v], (-shift) as u32)[0]
            }
        })
        .collect();
    t = p.add_const(&t, 1u64 << frac);
    let rounds = exps.iter().map(|s| s.0).max().unwrap_or(0);
    for r in 0..rounds {
        let idx: Vec<usize> = (0..x.len()).filter(|&i| exps[i].0 > r).collect();
        let sub: Vec<u64> = idx.iter().map(|&i| t[i]).collect();
        let sq = p.mul_trunc(&sub, &sub, frac).await?;
        for (&i, v) in idx.iter().zip(sq) {
            t[i] = v;
        }
    }
    p.mul(&keep, &t).await
}

/// `approx_exp` with a single Taylor exponent and clip; result at scale `f`.
pub async fn approx_exp(p: &mut Party, x: &[u64], n: u32, clip: f64, cfg: &PolyConfig) -> Result<Vec<u64>> {
    let f = p.params().f;
    let frac = f + cfg.extra_frac;
    let e = approx_exp_mixed(p, x, &vec![(n, clip); x.len()], frac).await?;
    Ok(p.trunc(&e, frac - f))
}

/// Segment boundaries `lo * (hi/lo)^(i/4)`, `i = 0..=4`.
fn geometric_edges(lo: f64, hi: f64) -> [f64; 5] {
    let r = hi / lo;
    [lo, lo * r.powf(0.25), lo * r.powf(0.5), lo * r.powf(0.75), hi]
}

/// Piecewise-constant initial guess from two comparisons. `x` and the edges
/// share the scale `xfrac`; `guess[i]` is the value for segment `i` at the
/// output scale.
async fn segment_guess(p: &mut Party, x: &[u64], edges: [f64; 5], xfrac: u32, guess: [u64; 4]) -> Result<Vec<u64>> {
    let params = p.params();
    let n = x.len();
    let q: Vec<u64> = edges[1..4].iter().map(|&e| floor_at(&params, e, xfrac)).collect();
    let b1 = p.gt_public(x, &vec![q[1]; n]).await?;
    let b1 = p.b2a(&b1).await?;
    // mid = q1 + b1 (q3 - q1)
    let step = params.reduce(q[2].wrapping_sub(q[0]));
    let mid = p.add_const(&p.scale(&b1, step), q[0]);
    let b2 = p.gt_bounded(x, &mid).await?;
    let b2 = p.b2a(&b2).await?;
    let b12 = p.mul(&b1, &b2).await?;
    let [g00, g01, g10, g11] = guess;
    let c1 = params.reduce(g10.wrapping_sub(g00));
    let c2 = params.reduce(g01.wrapping_sub(g00));
    let c12 = params.reduce(g11.wrapping_sub(g10).wrapping_sub(g01).wrapping_add(g00));
    let mut y = p.add(&p.scale(&b1, c1), &p.scale(&b2, c2));
    y = p.add(&y, &p.scale(&b12, c12));
    Ok(p.add_const(&y, g00))
}

/// `1 / s` for `s` in `[1, k]`, both at `frac` fractional bits.
pub async fn reciprocal_at(p: &mut Party, s: &[u64], k: f64, frac: u32, iters: u32) -> Result<Vec<u64>> {
    if !(k >= 1.0) {
        return Err(Error::InvalidParams(format!("reciprocal bound {k} < 1")));
    }
    let params = p.params();
    let edges = geometric_edges(1.0, k);
    let guess: [u64; 4] = std::array::from_fn(|i| enc_at(&params, 2.0 / (edges[i] + edges[i + 1]), frac));
    // segment order is (b1, b2) = 00, 01, 10, 11
    let mut y = segment_guess(p, s, edges, frac, guess).await?;
    let two = 2u64 << frac;
    for _ in 0..iters {
        let e = p.mul_trunc(s, &y, frac).await?;
        let w = p.add_const(&p.neg(&e), two);
        y = p.mul_trunc(&y, &w, frac).await?;
    }
    Ok(y)
}

/// `1 / s` for `s` in `[1, k]` at scale `f`.
pub async fn reciprocal_shared(p: &mut Party, s: &[u64], k: f64, cfg: &PolyConfig) -> Result<Vec<u64>> {
    let f = p.params().f;
    let up = cfg.recip_extra_frac;
    let lifted = p.scale(s, 1u64 << up);
    let y = reciprocal_at(p, &lifted, k, f + up, cfg.recip_iters).await?;
    Ok(p.trunc(&y, up))
}

/// Row-wise softmax of `x` (scale `f`); `degrees[i]` picks the exponential
/// for row `i`.
pub async fn softmax_shared(p: &mut Party, x: &SharedMatrix, degrees: &[Degree], cfg: &PolyConfig) -> Result<SharedMatrix> {
    let (rows, k) = (x.rows, x.cols);
    if degrees.len() != rows {
        return Err(Error::Shape(format!("{} degrees for {rows} rows", degrees.len())));
    }
    if rows == 0 {
        return Ok(x.clone());
    }
    if k == 0 {
        return Err(Error::Empty("softmax row"));
    }
    let params = p.params();
    let f = params.f;
    let fe = f + cfg.extra_frac;
    let fr = f + cfg.recip_extra_frac;

    // running max, first occurrence wins on ties
    let col = |j: usize| -> Vec<u64> { (0..rows).map(|i| x.data[i * k + j]).collect() };
    let mut cur = col(0);
    for j in 1..k {
        let cj = col(j);
        let b = p.gt_bounded(&cj, &cur).await?;
        let b = p.b2a(&b).await?;
        cur = p.select(&b, &cj, &cur).await?;
    }
    let z = p.sub(&x.data, &broadcast(&cur, k));

    let exps: Vec<(u32, f64)> = degrees
        .iter()
        .flat_map(|&d| std::iter::repeat_n(cfg.exp_params(d), k))
        .collect();
    let e = approx_exp_mixed(p, &z, &exps, fe).await?;
    let s = row_sums(p, &e, k);
    let s = p.scale(&s, 1u64 << (fr - fe));
    let y = reciprocal_at(p, &s, k as f64, fr, cfg.recip_iters).await?;
    let y = p.trunc(&y, fr - fe);
    let out = p.mul_trunc(&e, &broadcast(&y, k), 2 * fe - f).await?;
    SharedMatrix::new(rows, k, out)
}

/// GELU of each element with the given degree. Also returns the branch
/// bits (three per element for high degree, two for low), element-major
/// per bit: bit `j` of element `i` is at `j * n + i`.
pub async fn gelu_traced(p: &mut Party, x: &[u64], degree: Degree, cfg: &PolyConfig) -> Result<(Vec<u64>, PackedBits)> {
    let params = p.params();
    let f = params.f;
    let fc = f + cfg.extra_frac;
    let n = x.len();
    if n == 0 {
        return Ok((Vec::new(), PackedBits::zeros(0)));
    }
    // polynomial sum at f + fc, truncated back by fc
    let poly = |p: &Party, c0: f64, terms: &[(f64, &[u64])]| -> Vec<u64> {
        let mut acc = vec![enc_at(&params, c0, f + fc); n];
        acc = p.constant(&acc);
        for (c, pow) in terms {
            acc = p.add(&acc, &p.scale(pow, enc_at(&params, *c, fc)));
        }
        p.trunc(&acc, fc)
    };
    match degree {
        Degree::High => {
            let br: Vec<u64> = cfg
                .gelu_breaks
                .iter()
                .flat_map(|&b| std::iter::repeat_n(floor_at(&params, b, f), n))
                .collect();
            let xs: Vec<u64> = [x, x, x].concat();
            let bits = p.gt_public(&xs, &br).await?;
            let b = p.b2a(&bits).await?;

            let x2 = p.mul_trunc(x, x, f).await?;
            let x34 = p.mul_trunc(&[x2.clone(), x2.clone()].concat(), &[x, &x2[..]].concat(), f).await?;
            let (x3, x4) = x34.split_at(n);
            let x6 = p.mul_trunc(x3, x3, f).await?;
            let [c0, c1, c2, c3] = cfg.gelu_p3;
            let p3 = poly(p, c0, &[(c1, x), (c2, &x2), (c3, x3)]);
            let [d0, d1, d2, d4, d6] = cfg.gelu_p6;
            let p6 = poly(p, d0, &[(d1, x), (d2, &x2), (d4, x4), (d6, &x6)]);
            let rhs = [p3.clone(), p.sub(&p6, &p3), p.sub(x, &p6)].concat();
            let prod = p.mul(&b, &rhs).await?;
            let out = p.add(&p.add(&prod[..n], &prod[n..2 * n]), &prod[2 * n..]);
            Ok((out, bits))
        }
        Degree::Low => {
            let lo = floor_at(&params, -cfg.gelu_low_break, f);
            let hi = floor_at(&params, cfg.gelu_low_break, f);
            let br: Vec<u64> = std::iter::repeat_n(lo, n).chain(std::iter::repeat_n(hi, n)).collect();
            let bits = p.gt_public(&[x, x].concat(), &br).await?;
            let b = p.b2a(&bits).await?;
            let x2 = p.mul_trunc(x, x, f).await?;
            let [c1, c2] = cfg.gelu_low;
            let q = poly(p, 0.0, &[(c1, x), (c2, &x2)]);
            let rhs = [q.clone(), p.sub(x, &q)].concat();
            let prod = p.mul(&b, &rhs).await?;
            Ok((p.add(&prod[..n], &prod[n..]), bits))
        }
    }
}

/// GELU over a token matrix; `degrees[i]` applies to row `i`.
pub async fn gelu_shared(p: &mut Party, x: &SharedMatrix, degrees: &[Degree], cfg: &PolyConfig) -> Result<SharedMatrix> {
    if degrees.len() != x.rows {
        return Err(Error::Shape(format!("{} degrees for {} rows", degrees.len(), x.rows)));
    }
    let mut out = x.clone();
    for d in [Degree::High, Degree::Low] {
        let rows: Vec<usize> = (0..x.rows).filter(|&i| degrees[i] == d).collect();
        if rows.is_empty() {
            continue;
        }
        let vals: Vec<u64> = rows.iter().flat_map(|&i| x.row(i).to_vec()).collect();
        let (y, _) = gelu_traced(p, &vals, d, cfg).await?;
        for (&i, chunk) in rows.iter().zip(y.chunks(x.cols)) {
            out.row_mut(i).copy_from_slice(chunk);
        }
    }
    Ok(out)
}

/// `1 / sqrt(v)` for `v` (scale `f`) in `[eps, var_max]`; result at `frac`.
pub async fn rsqrt_at(p: &mut Party, v: &[u64], frac: u32, cfg: &PolyConfig) -> Result<Vec<u64>> {
    let params = p.params();
    let f = params.f;
    let eps = cfg.ln_eps_ulps as f64 / 2f64.powi(f as i32);
    let edges = geometric_edges(eps, cfg.ln_var_max);
    let guess: [u64; 4] = std::array::from_fn(|i| enc_at(&params, 1.2 / edges[i + 1].sqrt(), frac));
    let mut y = segment_guess(p, v, edges, f, guess).await?;
    let three = 3u64 << frac;
    for _ in 0..cfg.rsqrt_iters {
        // y <- y (3 - v y^2) / 2
        let a = p.mul_trunc(v, &y, f).await?;
        let b = p.mul_trunc(&a, &y, frac).await?;
        let w = p.add_const(&p.neg(&b), three);
        let w = p.trunc(&w, frac - f);
        y = p.mul_trunc(&y, &w, f + 1).await?;
    }
    Ok(y)
}

/// Row-wise `gamma * (x - mean) / sqrt(var + eps) + beta`.
pub async fn layernorm_shared(
    p: &mut Party,
    x: &SharedMatrix,
    gamma: &SharedMatrix,
    beta: &SharedMatrix,
    cfg: &PolyConfig,
) -> Result<SharedMatrix> {
    let (rows, d) = (x.rows, x.cols);
    if d == 0 {
        return Err(Error::Empty("layer-norm row"));
    }
    if gamma.data.len() != d || beta.data.len() != d {
        return Err(Error::Shape(format!("layer-norm of width {d} with {}/{} parameters", gamma.data.len(), beta.data.len())));
    }
    if rows == 0 {
        return Ok(x.clone());
    }
    let params = p.params();
    let f = params.f;
    let fc = f + cfg.extra_frac;
    let inv_d = enc_at(&params, 1.0 / d as f64, fc);

    let sum = row_sums(p, &x.data, d);
    let mu = p.trunc(&p.scale(&sum, inv_d), fc);
    let dev = p.sub(&x.data, &broadcast(&mu, d));
    let sq = p.mul_trunc(&dev, &dev, f).await?;
    let var = p.trunc(&p.scale(&row_sums(p, &sq, d), inv_d), fc);
    let v = p.add_const(&var, cfg.ln_eps_ulps);
    let y = rsqrt_at(p, &v, fc, cfg).await?;
    let normed = p.mul_trunc(&dev, &broadcast(&y, d), fc).await?;
    let g: Vec<u64> = (0..rows).flat_map(|_| gamma.data.iter().copied()).collect();
    let scaled = p.mul_trunc(&normed, &g, f).await?;
    let bias: Vec<u64> = (0..rows).flat_map(|_| beta.data.iter().copied()).collect();
    SharedMatrix::new(rows, d, p.add(&scaled, &bias))
}
