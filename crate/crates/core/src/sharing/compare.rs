//! Bit extraction and signed comparison.
//!
//! To read bit `k` of a shared `z`, the parties open `c = z + r` against a
//! dealer edaBit `r` (known bitwise in XOR shares). Then
//! `z_k = c_k ^ r_k ^ borrow_k`, where `borrow_k` is the borrow into
//! position `k` of the subtraction `c - r`, computed by a boolean circuit.

use crate::error::{Error, Result};
use crate::sharing::{AdderKind, PackedBits, Party};
use crate::transcript::RevealKind;

/// Who knows the threshold of a comparison.
#[derive(Clone, Copy, Debug)]
pub enum Threshold<'a> {
    /// This party holds the plaintext thresholds.
    Mine(&'a [u64]),
    /// The peer holds them.
    Theirs,
}

impl<'a> Threshold<'a> {
    /// The view of `holder`'s private thresholds from party `me`.
    pub fn held_by(holder: u8, me: u8, values: Option<&'a [u64]>) -> Threshold<'a> {
        match (holder == me, values) {
            (true, Some(v)) => Threshold::Mine(v),
            _ => Threshold::Theirs,
        }
    }
}

impl Party {
    /// XOR shares of bit `k` of each shared element.
    pub async fn extract_bit(&mut self, z: &[u64], k: u32) -> Result<PackedBits> {
        let ell = self.params().ell;
        if k >= ell {
            return Err(Error::InvalidParams(format!("bit {k} of a {ell}-bit ring")));
        }
        let n = z.len();
        if n == 0 {
            return Ok(PackedBits::zeros(0));
        }
        let eda = self.tape().edabits(n, k + 1)?;
        let masked = self.add(z, &eda.arith);
        let c = self.open(RevealKind::EdabitMasked, &masked).await?;

        let r_bit = |j: u32| PackedBits::bit_slice(&eda.bits, j);
        let notc = |j: u32| PackedBits::bit_slice(&c, j).not();

        let borrow = if k == 0 {
            PackedBits::zeros(n)
        } else {
            match self.adder() {
                AdderKind::Ripple => {
                    let mut b = notc(0).and(&r_bit(0));
                    for j in 1..k {
                        let (rj, ncj) = (r_bit(j), notc(j));
                        let t = self.and(&rj, &b).await?;
                        b = t.xor(&ncj.and(&rj.xor(&b)));
                    }
                    b
                }
                AdderKind::Prefix => {
                    // (generate, propagate) per bit, low to high
                    let mut nodes: Vec<(PackedBits, PackedBits)> = (0..k)
                        .map(|j| {
                            let (rj, ncj) = (r_bit(j), notc(j));
                            (ncj.and(&rj), self.xor_public(&rj, &ncj))
                        })
                        .collect();
                    while nodes.len() > 1 {
                        let pairs = nodes.len() / 2;
                        let last = nodes.len() == 2;
                        let mut left = Vec::new();
                        let mut right = Vec::new();
                        for i in 0..pairs {
                            let (lo, hi) = (&nodes[2 * i], &nodes[2 * i + 1]);
                            left.push(&hi.1);
                            right.push(&lo.0);
                            if !last {
                                left.push(&hi.1);
                                right.push(&lo.1);
                            }
                        }
                        let prod = self.and(&PackedBits::concat(&left), &PackedBits::concat(&right)).await?;
                        let per = if last { 1 } else { 2 };
                        let parts = prod.split(&vec![n; pairs * per]);
                        let mut next = Vec::with_capacity(pairs + 1);
                        for i in 0..pairs {
                            let hi = &nodes[2 * i + 1];
                            let g = hi.0.xor(&parts[per * i]);
                            let p = if last { PackedBits::zeros(n) } else { parts[per * i + 1].clone() };
                            next.push((g, p));
                        }
                        if nodes.len() % 2 == 1 {
                            next.push(nodes.pop().unwrap());
                        }
                        nodes = next;
                    }
                    nodes.pop().unwrap().0
                }
            }
        };
        let mut out = r_bit(k).xor(&borrow);
        if self.id() == 0 {
            out = out.xor(&PackedBits::bit_slice(&c, k));
        }
        Ok(out)
    }

    /// Sign bit of each shared element.
    pub async fn msb(&mut self, z: &[u64]) -> Result<PackedBits> {
        let k = self.params().ell - 1;
        self.extract_bit(z, k).await
    }

    /// `[x > t]` for shared `x` and a threshold private to one party, over
    /// the full signed range.
    ///
    /// `t - x` can overflow when the signs differ, so the result combines
    /// the sign bits of `x`, `t` and `t - x`:
    /// `s_z ^ ((s_x ^ s_t) & (s_t ^ s_z))`.
    pub async fn cmp_gt(&mut self, x: &[u64], threshold: Threshold<'_>) -> Result<PackedBits> {
        let n = x.len();
        let ell = self.params().ell;
        let (z, s_t) = match threshold {
            Threshold::Mine(t) => {
                if t.len() != n {
                    return Err(Error::Shape(format!("{} thresholds for {n} values", t.len())));
                }
                (self.sub(t, x), PackedBits::bit_slice(t, ell - 1))
            }
            Threshold::Theirs => (self.neg(x), PackedBits::zeros(n)),
        };
        let both: Vec<u64> = x.iter().chain(&z).copied().collect();
        let signs = self.msb(&both).await?;
        let parts = signs.split(&[n, n]);
        let (s_x, s_z) = (&parts[0], &parts[1]);
        let prod = self.and(&s_x.xor(&s_t), &s_t.xor(s_z)).await?;
        Ok(s_z.xor(&prod))
    }

    /// `[x > y]` for two shared vectors whose difference fits in the signed
    /// range. One sign extraction.
    pub async fn gt_bounded(&mut self, x: &[u64], y: &[u64]) -> Result<PackedBits> {
        let d = self.sub(y, x);
        self.msb(&d).await
    }

    /// `[x > t]` for public `t`, assuming `|t - x| < 2^(ell-1)`.
    pub async fn gt_public(&mut self, x: &[u64], t: &[u64]) -> Result<PackedBits> {
        let d = self.neg(x);
        let d = self.add_public(&d, t);
        self.msb(&d).await
    }
}
