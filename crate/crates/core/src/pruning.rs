//! Token pruning on shared data.
//!
//! Importance scores come from the attention maps, a shared comparison
//! against the pruning threshold gives the mask, and the mask is bound to
//! each token as a companion key element `M * 2^f`. Bubble passes of
//! oblivious swaps then move the pruned tokens to the tail while keeping
//! the kept ones in order. Only the kept count and the reduction mask are
//! ever opened.

use crate::error::{Error, Result};
use crate::linear::SharedMatrix;
use crate::sharing::{PackedBits, Party, Threshold};
use crate::transcript::RevealKind;

/// Tokens with their bound keys and carried scores; swaps move all three.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundRows {
    pub payload: SharedMatrix,
    /// `M[i] * 2^f`
    pub key: Vec<u64>,
    pub score: Vec<u64>,
}

impl BoundRows {
    pub fn len(&self) -> usize {
        self.key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.key.is_empty()
    }

    fn unit_width(&self) -> usize {
        self.payload.cols + 2
    }

    /// Row `i` as one swap unit: payload, key, score.
    fn unit(&self, i: usize) -> Vec<u64> {
        let mut u = self.payload.row(i).to_vec();
        u.push(self.key[i]);
        u.push(self.score[i]);
        u
    }

    fn set_unit(&mut self, i: usize, u: &[u64]) {
        let d = self.payload.cols;
        self.payload.row_mut(i).copy_from_slice(&u[..d]);
        self.key[i] = u[d];
        self.score[i] = u[d + 1];
    }
}

/// Column sums of the attention maps, averaged over heads and rows:
/// `S[i] = 1/(H n) * sum_h sum_j Att_h[j, i]`. Local.
pub fn importance_scores(p: &Party, att: &[SharedMatrix], extra_frac: u32) -> Result<Vec<u64>> {
    let Some(first) = att.first() else {
        return Err(Error::Empty("attention heads"));
    };
    let n = first.rows;
    if att.iter().any(|a| a.rows != n || a.cols != n) {
        return Err(Error::Shape("attention heads must all be n x n".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let params = p.params();
    let mask = params.mask();
    let mut col = vec![0u64; n];
    for a in att {
        for j in 0..n {
            for (c, v) in col.iter_mut().zip(a.row(j)) {
                *c = c.wrapping_add(*v) & mask;
            }
        }
    }
    let inv = params
        .encode_at(1.0 / (att.len() * n) as f64, params.f + extra_frac)
        .expect("1/(Hn) fits")
        .0;
    Ok(p.trunc(&p.scale(&col, inv), params.f + extra_frac))
}

/// `M[i] = [S[i] > theta]`.
pub async fn prune_mask(p: &mut Party, scores: &[u64], theta: Threshold<'_>) -> Result<PackedBits> {
    p.cmp_gt(scores, theta).await
}

/// Binds the mask to each token and opens the kept count `n'`.
pub async fn bind_and_count(
    p: &mut Party,
    x: &SharedMatrix,
    scores: &[u64],
    mask: &PackedBits,
) -> Result<(BoundRows, usize)> {
    let n = x.rows;
    if scores.len() != n || mask.len() != n {
        return Err(Error::Shape(format!("{n} tokens, {} scores, {} mask bits", scores.len(), mask.len())));
    }
    let m = p.b2a(mask).await?;
    let total = m.iter().fold(0u64, |a, v| a.wrapping_add(*v)) & p.params().mask();
    let count = p.open(RevealKind::TokenCount, &[total]).await?[0];
    if count > n as u64 {
        return Err(Error::Validation(format!("opened count {count} exceeds {n} tokens")));
    }
    let key = p.scale(&m, 1u64 << p.params().f);
    Ok((BoundRows { payload: x.clone(), key, score: scores.to_vec() }, count as usize))
}

/// Exchanges rows `i` and `j` where `s` (0/1 share) is set:
/// `row_i <- row_i + s (row_j - row_i)` and symmetrically, batched over all
/// pairs. Two multiplications per scalar pair.
async fn swap_batch(p: &mut Party, rows: &mut BoundRows, pairs: &[(usize, usize)], s: &[u64]) -> Result<()> {
    let w = rows.unit_width();
    let mut bits = Vec::with_capacity(2 * w * pairs.len());
    let mut diffs = Vec::with_capacity(2 * w * pairs.len());
    let mut bases = Vec::with_capacity(2 * w * pairs.len());
    for (&(i, j), &sb) in pairs.iter().zip(s) {
        let (ui, uj) = (rows.unit(i), rows.unit(j));
        for (a, b) in [(&ui, &uj), (&uj, &ui)] {
            diffs.extend(p.sub(b, a));
            bases.extend_from_slice(a);
            bits.extend(std::iter::repeat_n(sb, w));
        }
    }
    let t = p.mul(&bits, &diffs).await?;
    let out = p.add(&bases, &t);
    for (k, &(i, j)) in pairs.iter().enumerate() {
        rows.set_unit(i, &out[2 * k * w..(2 * k + 1) * w]);
        rows.set_unit(j, &out[(2 * k + 1) * w..(2 * k + 2) * w]);
    }
    Ok(())
}

/// Number of swaps `m` bubble passes perform on `n` rows.
pub fn bubble_swap_count(n: usize, m: usize) -> u64 {
    (0..m.min(n)).map(|k| (n - k - 1) as u64).sum()
}

/// `m` bubble passes. In pass `k`, for `i` in `0..n-k-1`, row `i` trades
/// places with row `i+1` unless its key marks it kept. Returns the swap
/// count.
pub async fn oblivious_compact(p: &mut Party, rows: &mut BoundRows, m: usize) -> Result<u64> {
    let n = rows.len();
    if m > n {
        return Err(Error::Shape(format!("{m} pruned rows out of {n}")));
    }
    let f = p.params().f;
    let mut swaps = 0u64;
    for k in 0..m {
        for i in 0..n - k - 1 {
            let kept = p.extract_bit(&rows.key[i..i + 1], f).await?;
            let kept = p.b2a(&kept).await?;
            // swap when row i is pruned
            let s = p.add_const(&p.neg(&kept), 1);
            swap_batch(p, rows, &[(i, i + 1)], &s).await?;
            swaps += 1;
        }
    }
    Ok(swaps)
}

/// Keeps the first `n'` rows and drops the keys.
pub fn truncate_and_strip(rows: &BoundRows, n_prime: usize) -> (SharedMatrix, Vec<u64>) {
    let n_prime = n_prime.min(rows.len());
    (rows.payload.head_rows(n_prime), rows.score[..n_prime].to_vec())
}

/// Opens `[S[i] > beta]` for the kept tokens to both parties.
pub async fn reduction_mask(p: &mut Party, kept_scores: &[u64], beta: Threshold<'_>) -> Result<Vec<bool>> {
    if kept_scores.is_empty() {
        return Ok(Vec::new());
    }
    let bits = p.cmp_gt(kept_scores, beta).await?;
    Ok(p.open_bits(RevealKind::ReductionMask, &bits).await?.to_bools())
}

/// Compare-exchange gates of a bitonic sorting network on `n` (a power of
/// two) wires, grouped by stage. `true` marks an ascending gate.
pub fn bitonic_stages(n: usize) -> Vec<Vec<(usize, usize, bool)>> {
    let mut stages = Vec::new();
    let mut k = 2;
    while k <= n {
        let mut j = k / 2;
        while j > 0 {
            let mut st = Vec::new();
            for i in 0..n {
                let l = i ^ j;
                if l > i {
                    st.push((i, l, i & k == 0));
                }
            }
            stages.push(st);
            j /= 2;
        }
        k *= 2;
    }
    stages
}

/// Sorts kept rows ahead of pruned ones with a full bitonic network, padding
/// to a power of two with pruned sentinel rows. Returns the padded rows and
/// the number of compare-exchange gates.
pub async fn bitonic_prune_baseline(p: &mut Party, rows: &BoundRows) -> Result<(BoundRows, u64)> {
    let n = rows.len();
    let size = n.next_power_of_two().max(1);
    let d = rows.payload.cols;
    let mut padded = rows.clone();
    padded.payload.data.resize(size * d, 0);
    padded.payload.rows = size;
    padded.key.resize(size, 0);
    padded.score.resize(size, 0);
    let f = p.params().f;
    let mut gates = 0u64;
    for stage in bitonic_stages(size) {
        let g = stage.len();
        let keys: Vec<u64> = stage
            .iter()
            .map(|&(i, _, _)| padded.key[i])
            .chain(stage.iter().map(|&(_, l, _)| padded.key[l]))
            .collect();
        let bits = p.extract_bit(&keys, f).await?;
        let parts = bits.split(&[g, g]);
        let (bi, bl) = (&parts[0], &parts[1]);
        // ascending on "pruned": swap when i is pruned and l kept
        let mut x = PackedBits::zeros(g);
        let mut y = PackedBits::zeros(g);
        let (nbi, nbl) = (p.not(bi), p.not(bl));
        for (t, &(_, _, up)) in stage.iter().enumerate() {
            let (a, b) = if up { (nbi.get(t), bl.get(t)) } else { (bi.get(t), nbl.get(t)) };
            x.set(t, a);
            y.set(t, b);
        }
        let s = p.and(&x, &y).await?;
        let s = p.b2a(&s).await?;
        let pairs: Vec<(usize, usize)> = stage.iter().map(|&(i, l, _)| (i, l)).collect();
        swap_batch(p, &mut padded, &pairs, &s).await?;
        gates += g as u64;
    }
    Ok((padded, gates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::FixedPointParams;
    use crate::sharing::{run_symmetric, SessionConfig};

    #[test]
    fn swap_counts() {
        assert_eq!(bubble_swap_count(4, 1), 3);
        assert_eq!(bubble_swap_count(4, 0), 0);
        assert_eq!(bubble_swap_count(128, 8), 988);
        let gates = |n| bitonic_stages(n).iter().map(Vec::len).sum::<usize>();
        assert_eq!(gates(4), 6);
        assert_eq!(gates(128), 1792);
    }

    #[test]
    fn importance_examples() {
        let params = FixedPointParams::default();
        let one = params.one().0;
        let out = run_symmetric(&SessionConfig::new(params, 1), async |p: &mut Party| {
            let a = SharedMatrix::new(2, 2, p.constant(&[one, 0, one, 0]))?;
            let s = importance_scores(p, &[a], 6)?;
            p.open(RevealKind::Plain, &s).await
        })
        .unwrap();
        assert_eq!(out.out0.unwrap(), vec![one, 0]);
    }

    #[test]
    fn compact_small_case() {
        let params = FixedPointParams::default();
        let one = params.one().0;
        let data: Vec<u64> = (10..14).collect();
        let sc = [one, 0, one, one];
        let out = run_symmetric(&SessionConfig::new(params, 1), async |p: &mut Party| {
            let x = SharedMatrix::new(4, 1, p.constant(&data))?;
            let s = p.constant(&sc);
            let mask = prune_mask(p, &s, Threshold::held_by(0, p.id(), Some(&[one / 2; 4]))).await?;
            let (mut rows, kept) = bind_and_count(p, &x, &s, &mask).await?;
            let swaps = oblivious_compact(p, &mut rows, 4 - kept).await?;
            let (payload, _) = truncate_and_strip(&rows, kept);
            let v = p.open(RevealKind::Plain, &payload.data).await?;
            Ok::<_, Error>((kept, swaps, v))
        })
        .unwrap();
        assert_eq!(out.out0.unwrap(), (3, 3, vec![10, 12, 13]));
    }
}
