//! Trusted-dealer correlated randomness.
//!
//! Both parties expand the same dealer seed into the same stream of
//! correlations and each keeps only its own share. The stream never depends
//! on any secret, only on the order in which correlations are requested,
//! which the symmetric protocol code keeps identical on both sides.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::channel::PartyId;
use crate::error::{Error, Result};
use crate::ring::FixedPointParams;

/// Optional caps on how much correlated randomness a tape may hand out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TapeBudget {
    pub beaver: Option<u64>,
    pub and_words: Option<u64>,
    pub edabits: Option<u64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TapeUsage {
    /// scalar triples plus one per matrix triple
    pub beaver: u64,
    pub matrix_elements: u64,
    pub and_words: u64,
    pub edabits: u64,
}

/// A batch of scalar Beaver triples with consecutive ids.
#[derive(Clone, Debug)]
pub struct BeaverTriples {
    pub first_id: u64,
    pub a: Vec<u64>,
    pub b: Vec<u64>,
    pub c: Vec<u64>,
}

impl BeaverTriples {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

/// Shares of `A (r x k)`, `B (k x c)` and `C = A B`.
#[derive(Clone, Debug)]
pub struct MatrixTriple {
    pub id: u64,
    pub rows: usize,
    pub inner: usize,
    pub cols: usize,
    pub a: Vec<u64>,
    pub b: Vec<u64>,
    pub c: Vec<u64>,
}

/// XOR-shared AND triples, 64 per word.
#[derive(Clone, Debug)]
pub struct AndTriples {
    pub a: Vec<u64>,
    pub b: Vec<u64>,
    pub c: Vec<u64>,
}

/// Random ring elements shared arithmetically together with XOR shares of
/// their low `nbits` bits (one word per element).
#[derive(Clone, Debug)]
pub struct EdaBits {
    pub nbits: u32,
    pub arith: Vec<u64>,
    pub bits: Vec<u64>,
}

pub struct DealerTape {
    party: PartyId,
    params: FixedPointParams,
    rng: ChaCha12Rng,
    next_id: u64,
    budget: TapeBudget,
    usage: TapeUsage,
    fault: Option<u64>,
}

impl DealerTape {
    pub fn new(party: PartyId, params: FixedPointParams, seed: u64) -> Self {
        DealerTape {
            party,
            params,
            rng: ChaCha12Rng::seed_from_u64(seed),
            next_id: 0,
            budget: TapeBudget::default(),
            usage: TapeUsage::default(),
            fault: None,
        }
    }

    pub fn with_budget(mut self, budget: TapeBudget) -> Self {
        self.budget = budget;
        self
    }

    /// Test hook: corrupts party 0's `c` share of the triple with this id
    /// (for a matrix triple, its first element).
    pub fn with_fault(mut self, triple_id: Option<u64>) -> Self {
        self.fault = triple_id;
        self
    }

    pub fn usage(&self) -> TapeUsage {
        self.usage
    }

    #[inline]
    fn word(&mut self) -> u64 {
        self.rng.next_u64() & self.params.mask()
    }

    /// Keeps this party's half of a dealer secret, drawing one mask word.
    #[inline]
    fn split(&mut self, secret: u64) -> u64 {
        let s0 = self.word();
        if self.party == 0 {
            s0
        } else {
            self.params.reduce(secret.wrapping_sub(s0))
        }
    }

    #[inline]
    fn split_xor(&mut self, secret: u64, mask: u64) -> u64 {
        let s0 = self.rng.next_u64() & mask;
        if self.party == 0 {
            s0
        } else {
            (secret ^ s0) & mask
        }
    }

    fn charge(used: &mut u64, cap: Option<u64>, n: u64, what: &'static str) -> Result<()> {
        if let Some(cap) = cap {
            if *used + n > cap {
                return Err(Error::TapeExhausted(what));
            }
        }
        *used += n;
        Ok(())
    }

    fn corruption(&self) -> u64 {
        // 64.0 at the product scale 2f
        1u64 << (2 * self.params.f + 6).min(self.params.ell - 2)
    }

    pub fn beaver(&mut self, n: usize) -> Result<BeaverTriples> {
        Self::charge(&mut self.usage.beaver, self.budget.beaver, n as u64, "beaver triples")?;
        let first_id = self.next_id;
        self.next_id += n as u64;
        let mut t = BeaverTriples {
            first_id,
            a: Vec::with_capacity(n),
            b: Vec::with_capacity(n),
            c: Vec::with_capacity(n),
        };
        for i in 0..n {
            let a = self.word();
            let b = self.word();
            let c = self.params.reduce(a.wrapping_mul(b));
            let sa = self.split(a);
            let sb = self.split(b);
            let mut sc = self.split(c);
            if self.party == 0 && self.fault == Some(first_id + i as u64) {
                sc = self.params.reduce(sc.wrapping_add(self.corruption()));
            }
            t.a.push(sa);
            t.b.push(sb);
            t.c.push(sc);
        }
        Ok(t)
    }

    pub fn matrix_triple(&mut self, rows: usize, inner: usize, cols: usize) -> Result<MatrixTriple> {
        Self::charge(&mut self.usage.beaver, self.budget.beaver, 1, "beaver triples")?;
        self.usage.matrix_elements += (rows * inner + inner * cols + rows * cols) as u64;
        let id = self.next_id;
        self.next_id += 1;
        let a: Vec<u64> = (0..rows * inner).map(|_| self.word()).collect();
        let b: Vec<u64> = (0..inner * cols).map(|_| self.word()).collect();
        let mut c = vec![0u64; rows * cols];
        for i in 0..rows {
            for k in 0..inner {
                let aik = a[i * inner + k];
                if aik == 0 {
                    continue;
                }
                let brow = &b[k * cols..(k + 1) * cols];
                let crow = &mut c[i * cols..(i + 1) * cols];
                for (cj, bj) in crow.iter_mut().zip(brow) {
                    *cj = cj.wrapping_add(aik.wrapping_mul(*bj));
                }
            }
        }
        let sa = a.into_iter().map(|v| self.split(v)).collect();
        let sb = b.into_iter().map(|v| self.split(v)).collect();
        let mut sc: Vec<u64> = c.into_iter().map(|v| self.split(self.params.reduce(v))).collect();
        if self.party == 0 && self.fault == Some(id) && !sc.is_empty() {
            sc[0] = self.params.reduce(sc[0].wrapping_add(self.corruption()));
        }
        Ok(MatrixTriple { id, rows, inner, cols, a: sa, b: sb, c: sc })
    }

    pub fn and_triples(&mut self, words: usize) -> Result<AndTriples> {
        Self::charge(&mut self.usage.and_words, self.budget.and_words, words as u64, "AND triples")?;
        let mut t = AndTriples {
            a: Vec::with_capacity(words),
            b: Vec::with_capacity(words),
            c: Vec::with_capacity(words),
        };
        for _ in 0..words {
            let a = self.rng.next_u64();
            let b = self.rng.next_u64();
            let sa = self.split_xor(a, u64::MAX);
            let sb = self.split_xor(b, u64::MAX);
            let sc = self.split_xor(a & b, u64::MAX);
            t.a.push(sa);
            t.b.push(sb);
            t.c.push(sc);
        }
        Ok(t)
    }

    pub fn edabits(&mut self, count: usize, nbits: u32) -> Result<EdaBits> {
        Self::charge(&mut self.usage.edabits, self.budget.edabits, count as u64, "edaBits")?;
        let bitmask = if nbits >= 64 { u64::MAX } else { (1u64 << nbits) - 1 };
        let mut e = EdaBits {
            nbits,
            arith: Vec::with_capacity(count),
            bits: Vec::with_capacity(count),
        };
        for _ in 0..count {
            let r = self.word();
            let sr = self.split(r);
            let sb = self.split_xor(r, bitmask);
            e.arith.push(sr);
            e.bits.push(sb);
        }
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(seed: u64) -> (DealerTape, DealerTape) {
        let p = FixedPointParams::default();
        (DealerTape::new(0, p, seed), DealerTape::new(1, p, seed))
    }

    #[test]
    fn beaver_triples_open_correctly() {
        let (mut t0, mut t1) = pair(3);
        let (x, y) = (t0.beaver(100).unwrap(), t1.beaver(100).unwrap());
        for i in 0..100 {
            let a = x.a[i].wrapping_add(y.a[i]);
            let b = x.b[i].wrapping_add(y.b[i]);
            let c = x.c[i].wrapping_add(y.c[i]);
            assert_eq!(c, a.wrapping_mul(b));
        }
        assert_eq!(x.first_id, y.first_id);
    }

    #[test]
    fn matrix_triple_opens_to_product() {
        let (mut t0, mut t1) = pair(9);
        let (x, y) = (t0.matrix_triple(3, 4, 2).unwrap(), t1.matrix_triple(3, 4, 2).unwrap());
        let open = |u: &[u64], v: &[u64]| -> Vec<u64> { u.iter().zip(v).map(|(a, b)| a.wrapping_add(*b)).collect() };
        let (a, b, c) = (open(&x.a, &y.a), open(&x.b, &y.b), open(&x.c, &y.c));
        for i in 0..3 {
            for j in 0..2 {
                let s = (0..4).fold(0u64, |acc, k| acc.wrapping_add(a[i * 4 + k].wrapping_mul(b[k * 2 + j])));
                assert_eq!(c[i * 2 + j], s);
            }
        }
    }

    #[test]
    fn and_triples_and_edabits_are_consistent() {
        let (mut t0, mut t1) = pair(5);
        let (x, y) = (t0.and_triples(10).unwrap(), t1.and_triples(10).unwrap());
        for i in 0..10 {
            assert_eq!(x.c[i] ^ y.c[i], (x.a[i] ^ y.a[i]) & (x.b[i] ^ y.b[i]));
        }
        let (x, y) = (t0.edabits(50, 13).unwrap(), t1.edabits(50, 13).unwrap());
        for i in 0..50 {
            let r = x.arith[i].wrapping_add(y.arith[i]);
            assert_eq!(x.bits[i] ^ y.bits[i], r & 0x1fff);
        }
    }

    #[test]
    fn narrow_ring_shares_stay_reduced() {
        let p = FixedPointParams::new(16, 4).unwrap();
        let mut t1 = DealerTape::new(1, p, 1);
        let t = t1.beaver(64).unwrap();
        assert!(t.a.iter().chain(&t.b).chain(&t.c).all(|&v| v <= 0xffff));
    }

    #[test]
    fn budget_exhaustion() {
        let p = FixedPointParams::default();
        let mut t = DealerTape::new(0, p, 1).with_budget(TapeBudget { beaver: Some(5), ..Default::default() });
        assert!(t.beaver(5).is_ok());
        assert!(matches!(t.beaver(1), Err(Error::TapeExhausted(_))));
    }

    #[test]
    fn fault_hook_breaks_one_triple() {
        let (t0, mut t1) = pair(11);
        let mut t0 = t0.with_fault(Some(2));
        let (x, y) = (t0.beaver(4).unwrap(), t1.beaver(4).unwrap());
        let bad: Vec<bool> = (0..4)
            .map(|i| {
                let a = x.a[i].wrapping_add(y.a[i]);
                let b = x.b[i].wrapping_add(y.b[i]);
                x.c[i].wrapping_add(y.c[i]) != a.wrapping_mul(b)
            })
            .collect();
        assert_eq!(bad, vec![false, false, true, false]);
    }
}
