//! Two-party additive secret sharing over `Z_{2^ell}`.
//!
//! A [`Party`] holds one side of a session: its channel endpoint, its half
//! of the dealer tape and its transcript. Protocol code is written once,
//! symmetrically, as async functions over `&mut Party`; [`run_session`]
//! drives both sides on the current thread.
//!
//! Vectors of shares are plain `Vec<u64>` (arithmetic) or [`PackedBits`]
//! (XOR-shared bits). Everything is batched: one call to [`Party::mul`]
//! costs one round however long the vectors are.

mod bits;
pub mod compare;
pub mod dealer;

use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

pub use bits::PackedBits;
pub use compare::Threshold;
pub use dealer::{DealerTape, TapeBudget, TapeUsage};

use crate::channel::{bytes_to_words, duplex, run_pair, words_to_bytes, CostLedger, Endpoint, MessageRecord, PartyId};
use crate::error::{Error, Result};
use crate::ring::{FixedPointParams, RingElement};
use crate::transcript::{RevealKind, Transcript};

/// One party's additive share of a single ring element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArithShare {
    pub party: PartyId,
    pub value: RingElement,
}

/// One party's XOR share of a single bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoolShare {
    pub party: PartyId,
    pub bit: bool,
}

/// Splits `x` into two uniformly random addends.
pub fn share(params: &FixedPointParams, x: RingElement, rng: &mut impl RngCore) -> (ArithShare, ArithShare) {
    let s0 = params.reduce(rng.next_u64());
    let s1 = params.reduce(x.0.wrapping_sub(s0));
    (
        ArithShare { party: 0, value: RingElement(s0) },
        ArithShare { party: 1, value: RingElement(s1) },
    )
}

/// Reconstructs a secret and logs it.
pub fn open(
    params: &FixedPointParams,
    a: ArithShare,
    b: ArithShare,
    transcript: &mut Transcript,
) -> Result<RingElement> {
    if a.party == b.party {
        return Err(Error::PartyMismatch(a.party));
    }
    let v = params.add(a.value, b.value);
    transcript.record(RevealKind::Plain, v.0);
    Ok(v)
}

pub fn share_bit(b: bool, rng: &mut impl RngCore) -> (BoolShare, BoolShare) {
    let r = rng.next_u64() & 1 == 1;
    (BoolShare { party: 0, bit: r }, BoolShare { party: 1, bit: r ^ b })
}

pub fn open_bit(a: BoolShare, b: BoolShare) -> Result<bool> {
    if a.party == b.party {
        return Err(Error::PartyMismatch(a.party));
    }
    Ok(a.bit ^ b.bit)
}

pub fn add_local(params: &FixedPointParams, a: ArithShare, b: ArithShare) -> ArithShare {
    ArithShare { party: a.party, value: params.add(a.value, b.value) }
}

pub fn sub_local(params: &FixedPointParams, a: ArithShare, b: ArithShare) -> ArithShare {
    ArithShare { party: a.party, value: params.sub(a.value, b.value) }
}

pub fn scale_local(params: &FixedPointParams, a: ArithShare, k: RingElement) -> ArithShare {
    ArithShare { party: a.party, value: params.mul(a.value, k) }
}

/// Only party 0 adds the constant.
pub fn add_public(params: &FixedPointParams, a: ArithShare, k: RingElement) -> ArithShare {
    if a.party == 0 {
        ArithShare { party: 0, value: params.add(a.value, k) }
    } else {
        a
    }
}

/// Boolean adder used inside bit extraction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdderKind {
    /// one AND round per bit
    #[default]
    Ripple,
    /// log-depth parallel prefix
    Prefix,
}

#[derive(Clone, Debug)]
pub struct SessionConfig {
    pub params: FixedPointParams,
    pub dealer_seed: u64,
    /// seeds the parties' private randomness (input masking)
    pub input_seed: u64,
    pub adder: AdderKind,
    /// keep every revealed value, not just counts and digest
    pub keep_transcript: bool,
    pub budget: TapeBudget,
    /// corrupt this Beaver triple id on party 0's tape
    pub fault: Option<u64>,
}

impl SessionConfig {
    pub fn new(params: FixedPointParams, dealer_seed: u64) -> Self {
        SessionConfig {
            params,
            dealer_seed,
            input_seed: dealer_seed.wrapping_add(1),
            adder: AdderKind::Ripple,
            keep_transcript: true,
            budget: TapeBudget::default(),
            fault: None,
        }
    }
}

/// Both parties' results plus everything the session recorded.
pub struct SessionOutput<R0, R1> {
    pub out0: R0,
    pub out1: R1,
    pub ledger: CostLedger,
    pub transcripts: [Transcript; 2],
    pub logs: [Vec<MessageRecord>; 2],
    pub usage: [TapeUsage; 2],
}

pub struct Party {
    id: PartyId,
    params: FixedPointParams,
    net: Endpoint,
    tape: DealerTape,
    rng: ChaCha12Rng,
    transcript: Transcript,
    phase: Arc<str>,
    adder: AdderKind,
    consumed: Vec<u64>,
}

/// Runs `f0` as party 0 and `f1` as party 1 against each other.
pub fn run_session<R0, R1>(
    cfg: &SessionConfig,
    f0: impl AsyncFnOnce(&mut Party) -> R0,
    f1: impl AsyncFnOnce(&mut Party) -> R1,
) -> Result<SessionOutput<R0, R1>> {
    cfg.params.validate()?;
    let (e0, e1, ledger) = duplex();
    let activity = e0.activity();
    let mut p0 = Party::new(0, cfg, e0);
    let mut p1 = Party::new(1, cfg, e1);
    let (out0, out1) = {
        let (a, b) = (&mut p0, &mut p1);
        run_pair(activity, async move { f0(a).await }, async move { f1(b).await })?
    };
    let ledger = ledger.lock().unwrap().clone();
    let usage = [p0.tape.usage(), p1.tape.usage()];
    let logs = [p0.net.log().to_vec(), p1.net.log().to_vec()];
    let transcripts = [std::mem::take(&mut p0.transcript), std::mem::take(&mut p1.transcript)];
    Ok(SessionOutput { out0, out1, ledger, transcripts, logs, usage })
}

/// Runs the same protocol on both sides.
pub fn run_symmetric<R>(
    cfg: &SessionConfig,
    f: impl AsyncFn(&mut Party) -> R,
) -> Result<SessionOutput<R, R>> {
    run_session(cfg, async |p: &mut Party| f(p).await, async |p: &mut Party| f(p).await)
}

impl Party {
    fn new(id: PartyId, cfg: &SessionConfig, net: Endpoint) -> Self {
        let tape = DealerTape::new(id, cfg.params, cfg.dealer_seed)
            .with_budget(cfg.budget)
            .with_fault(cfg.fault);
        Party {
            id,
            params: cfg.params,
            net,
            tape,
            rng: ChaCha12Rng::seed_from_u64(cfg.input_seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(id as u64 + 1))),
            transcript: Transcript::new(cfg.keep_transcript),
            phase: Arc::from("default"),
            adder: cfg.adder,
            consumed: Vec::new(),
        }
    }

    pub fn id(&self) -> PartyId {
        self.id
    }

    pub fn params(&self) -> FixedPointParams {
        self.params
    }

    pub fn adder(&self) -> AdderKind {
        self.adder
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn ledger(&self) -> CostLedger {
        self.net.ledger()
    }

    /// Sets the ledger label for subsequent traffic and returns the old one.
    pub fn set_phase(&mut self, label: &str) -> Arc<str> {
        std::mem::replace(&mut self.phase, Arc::from(label))
    }

    pub fn restore_phase(&mut self, label: Arc<str>) {
        self.phase = label;
    }

    pub(crate) fn tape(&mut self) -> &mut DealerTape {
        &mut self.tape
    }

    /// Marks triple ids as used; a second use is an error.
    pub(crate) fn consume(&mut self, first: u64, n: u64) -> Result<()> {
        for id in first..first + n {
            let (w, b) = ((id / 64) as usize, id % 64);
            if self.consumed.len() <= w {
                self.consumed.resize(w + 1, 0);
            }
            if self.consumed[w] >> b & 1 == 1 {
                return Err(Error::TripleReuse(id));
            }
            self.consumed[w] |= 1 << b;
        }
        Ok(())
    }

    // ---- raw messaging ----

    pub fn send_words(&mut self, words: &[u64]) -> Result<()> {
        self.net.send(&self.phase, &words_to_bytes(words))
    }

    pub async fn recv_words(&mut self) -> Result<Vec<u64>> {
        bytes_to_words(&self.net.recv().await?)
    }

    /// Sends `mine` and receives the peer's message of the same length.
    pub async fn exchange(&mut self, mine: &[u64]) -> Result<Vec<u64>> {
        self.send_words(mine)?;
        let theirs = self.recv_words().await?;
        if theirs.len() != mine.len() {
            return Err(Error::Frame(format!("expected {} words, got {}", mine.len(), theirs.len())));
        }
        Ok(theirs)
    }

    // ---- sharing and opening ----

    /// Secret-shares `values` owned by `owner`. The non-owner passes `None`
    /// and the vector length.
    pub async fn input(&mut self, owner: PartyId, values: Option<&[u64]>, len: usize) -> Result<Vec<u64>> {
        if self.id == owner {
            let values = values.ok_or(Error::Empty("input values"))?;
            if values.len() != len {
                return Err(Error::Shape(format!("input of {} values, declared {len}", values.len())));
            }
            let mask = self.params.mask();
            let theirs: Vec<u64> = (0..len).map(|_| self.rng.next_u64() & mask).collect();
            self.send_words(&theirs)?;
            Ok(values.iter().zip(&theirs).map(|(v, r)| v.wrapping_sub(*r) & mask).collect())
        } else {
            let got = self.recv_words().await?;
            if got.len() != len {
                return Err(Error::Shape(format!("received {} input shares, expected {len}", got.len())));
            }
            Ok(got)
        }
    }

    /// Opens shares to both parties and logs them under `kind`.
    pub async fn open(&mut self, kind: RevealKind, shares: &[u64]) -> Result<Vec<u64>> {
        let theirs = self.exchange(shares).await?;
        let p = self.params;
        let vals: Vec<u64> = shares.iter().zip(&theirs).map(|(a, b)| p.reduce(a.wrapping_add(*b))).collect();
        self.transcript.record_all(kind, &vals);
        Ok(vals)
    }

    /// Opens shares to `target` only; the other party gets `None`.
    pub async fn reveal_to(&mut self, target: PartyId, kind: RevealKind, shares: &[u64]) -> Result<Option<Vec<u64>>> {
        if self.id == target {
            let theirs = self.recv_words().await?;
            if theirs.len() != shares.len() {
                return Err(Error::Frame("reveal length mismatch".into()));
            }
            let p = self.params;
            let vals: Vec<u64> = shares.iter().zip(&theirs).map(|(a, b)| p.reduce(a.wrapping_add(*b))).collect();
            self.transcript.record_all(kind, &vals);
            Ok(Some(vals))
        } else {
            self.send_words(shares)?;
            Ok(None)
        }
    }

    /// Opens XOR-shared bits to both parties; the packed words are logged.
    pub async fn open_bits(&mut self, kind: RevealKind, x: &PackedBits) -> Result<PackedBits> {
        let theirs = self.exchange(x.words()).await?;
        let words: Vec<u64> = x.words().iter().zip(&theirs).map(|(a, b)| a ^ b).collect();
        self.transcript.record_all(kind, &words);
        Ok(PackedBits::from_words(x.len(), words))
    }

    // ---- local arithmetic ----

    pub fn add(&self, a: &[u64], b: &[u64]) -> Vec<u64> {
        debug_assert_eq!(a.len(), b.len());
        let m = self.params.mask();
        a.iter().zip(b).map(|(x, y)| x.wrapping_add(*y) & m).collect()
    }

    pub fn sub(&self, a: &[u64], b: &[u64]) -> Vec<u64> {
        debug_assert_eq!(a.len(), b.len());
        let m = self.params.mask();
        a.iter().zip(b).map(|(x, y)| x.wrapping_sub(*y) & m).collect()
    }

    pub fn neg(&self, a: &[u64]) -> Vec<u64> {
        let m = self.params.mask();
        a.iter().map(|x| x.wrapping_neg() & m).collect()
    }

    pub fn scale(&self, a: &[u64], k: u64) -> Vec<u64> {
        let m = self.params.mask();
        a.iter().map(|x| x.wrapping_mul(k) & m).collect()
    }

    /// Adds a public constant to every element (party 0 only).
    pub fn add_const(&self, a: &[u64], k: u64) -> Vec<u64> {
        if self.id == 0 {
            let m = self.params.mask();
            a.iter().map(|x| x.wrapping_add(k) & m).collect()
        } else {
            a.to_vec()
        }
    }

    /// Adds a public vector elementwise (party 0 only).
    pub fn add_public(&self, a: &[u64], k: &[u64]) -> Vec<u64> {
        if self.id == 0 {
            self.add(a, k)
        } else {
            a.to_vec()
        }
    }

    /// Share of a public vector: party 0 holds it, party 1 holds zeros.
    pub fn constant(&self, k: &[u64]) -> Vec<u64> {
        if self.id == 0 {
            k.to_vec()
        } else {
            vec![0; k.len()]
        }
    }

    /// Local truncation by `bits`. Party 0 shifts its share; party 1 shifts
    /// the negation of its share and negates back, so the reconstructed
    /// result is `x / 2^bits` rounded down or up, unbiased on average.
    pub fn trunc(&self, x: &[u64], bits: u32) -> Vec<u64> {
        if bits == 0 {
            return x.to_vec();
        }
        let p = self.params;
        if self.id == 0 {
            x.iter().map(|&v| p.from_signed(p.to_signed(v) >> bits)).collect()
        } else {
            x.iter()
                .map(|&v| {
                    let n = p.to_signed(v.wrapping_neg() & p.mask());
                    p.from_signed((n >> bits).wrapping_neg())
                })
                .collect()
        }
    }

    // ---- multiplication ----

    /// Elementwise product with fresh dealer triples. One round.
    pub async fn mul(&mut self, x: &[u64], y: &[u64]) -> Result<Vec<u64>> {
        if x.len() != y.len() {
            return Err(Error::Shape(format!("mul of {} and {} elements", x.len(), y.len())));
        }
        if x.is_empty() {
            return Ok(Vec::new());
        }
        let t = self.tape.beaver(x.len())?;
        self.mul_with(x, y, &t).await
    }

    /// Elementwise product with caller-supplied triples.
    pub async fn mul_with(&mut self, x: &[u64], y: &[u64], t: &dealer::BeaverTriples) -> Result<Vec<u64>> {
        let n = x.len();
        if y.len() != n || t.len() != n {
            return Err(Error::Shape(format!("mul of {n}/{} elements with {} triples", y.len(), t.len())));
        }
        self.consume(t.first_id, n as u64)?;
        let m = self.params.mask();
        let mut masked = Vec::with_capacity(2 * n);
        masked.extend(x.iter().zip(&t.a).map(|(v, a)| v.wrapping_sub(*a) & m));
        masked.extend(y.iter().zip(&t.b).map(|(v, b)| v.wrapping_sub(*b) & m));
        let de = self.open(RevealKind::BeaverMasked, &masked).await?;
        let (d, e) = de.split_at(n);
        Ok((0..n)
            .map(|i| {
                // z = c + d*b + e*a (+ d*e for party 0)
                let mut z = t.c[i]
                    .wrapping_add(d[i].wrapping_mul(t.b[i]))
                    .wrapping_add(e[i].wrapping_mul(t.a[i]));
                if self.id == 0 {
                    z = z.wrapping_add(d[i].wrapping_mul(e[i]));
                }
                z & m
            })
            .collect())
    }

    /// Product followed by local truncation.
    pub async fn mul_trunc(&mut self, x: &[u64], y: &[u64], bits: u32) -> Result<Vec<u64>> {
        let z = self.mul(x, y).await?;
        Ok(self.trunc(&z, bits))
    }

    /// Shared matrix product `x (r x k) * y (k x c)` with one matrix triple.
    pub async fn matmul(&mut self, x: &[u64], y: &[u64], r: usize, k: usize, c: usize) -> Result<Vec<u64>> {
        let mut out = self.matmul_batch(&[MatmulJob { x, y, rows: r, inner: k, cols: c }]).await?;
        Ok(out.pop().unwrap())
    }

    /// Several independent matrix products opened in one round.
    pub async fn matmul_batch(&mut self, jobs: &[MatmulJob<'_>]) -> Result<Vec<Vec<u64>>> {
        let m = self.params.mask();
        let mut triples = Vec::with_capacity(jobs.len());
        let mut masked = Vec::new();
        for j in jobs {
            let (r, k, c) = (j.rows, j.inner, j.cols);
            if j.x.len() != r * k || j.y.len() != k * c {
                return Err(Error::Shape(format!(
                    "matmul {r}x{k} * {k}x{c} with {} and {} elements",
                    j.x.len(),
                    j.y.len()
                )));
            }
            if r * c == 0 {
                triples.push(None);
                continue;
            }
            let t = self.tape.matrix_triple(r, k, c)?;
            self.consume(t.id, 1)?;
            masked.extend(j.x.iter().zip(&t.a).map(|(v, a)| v.wrapping_sub(*a) & m));
            masked.extend(j.y.iter().zip(&t.b).map(|(v, b)| v.wrapping_sub(*b) & m));
            triples.push(Some(t));
        }
        let de = if masked.is_empty() { Vec::new() } else { self.open(RevealKind::BeaverMasked, &masked).await? };
        let mut off = 0;
        let mut out = Vec::with_capacity(jobs.len());
        for (j, t) in jobs.iter().zip(triples) {
            let (r, k, c) = (j.rows, j.inner, j.cols);
            let Some(t) = t else {
                out.push(vec![0; r * c]);
                continue;
            };
            let d = &de[off..off + r * k];
            let e = &de[off + r * k..off + r * k + k * c];
            off += r * k + k * c;
            // z = C + d B + A e (+ d e for party 0)
            let mut z = t.c;
            matmul_acc(&mut z, d, &t.b, r, k, c);
            matmul_acc(&mut z, &t.a, e, r, k, c);
            if self.id == 0 {
                matmul_acc(&mut z, d, e, r, k, c);
            }
            out.push(z.into_iter().map(|v| v & m).collect());
        }
        Ok(out)
    }

    // ---- boolean ----

    /// AND of two XOR-shared bit vectors. One round.
    pub async fn and(&mut self, x: &PackedBits, y: &PackedBits) -> Result<PackedBits> {
        if x.len() != y.len() {
            return Err(Error::Shape(format!("AND of {} and {} bits", x.len(), y.len())));
        }
        if x.is_empty() {
            return Ok(PackedBits::zeros(0));
        }
        let w = x.words().len();
        let t = self.tape.and_triples(w)?;
        let mut masked = Vec::with_capacity(2 * w);
        masked.extend(x.words().iter().zip(&t.a).map(|(v, a)| v ^ a));
        masked.extend(y.words().iter().zip(&t.b).map(|(v, b)| v ^ b));
        let theirs = self.exchange(&masked).await?;
        let de: Vec<u64> = masked.iter().zip(&theirs).map(|(a, b)| a ^ b).collect();
        self.transcript.record_all(RevealKind::AndMasked, &de);
        let (d, e) = de.split_at(w);
        let words = (0..w)
            .map(|i| {
                let mut z = t.c[i] ^ (d[i] & t.b[i]) ^ (e[i] & t.a[i]);
                if self.id == 0 {
                    z ^= d[i] & e[i];
                }
                z
            })
            .collect();
        Ok(PackedBits::from_words(x.len(), words))
    }

    /// XOR with a public bit vector (party 0 only).
    pub fn xor_public(&self, x: &PackedBits, k: &PackedBits) -> PackedBits {
        if self.id == 0 {
            x.xor(k)
        } else {
            x.clone()
        }
    }

    /// Shared NOT.
    pub fn not(&self, x: &PackedBits) -> PackedBits {
        if self.id == 0 {
            x.not()
        } else {
            x.clone()
        }
    }

    /// Converts XOR-shared bits to additive shares of 0/1.
    pub async fn b2a(&mut self, b: &PackedBits) -> Result<Vec<u64>> {
        let mine: Vec<u64> = b.to_bools().into_iter().map(u64::from).collect();
        let zero = vec![0u64; mine.len()];
        let (x, y) = if self.id == 0 { (&mine, &zero) } else { (&zero, &mine) };
        let cross = self.mul(x, y).await?;
        let m = self.params.mask();
        Ok(mine.iter().zip(&cross).map(|(v, c)| v.wrapping_sub(c.wrapping_mul(2)) & m).collect())
    }

    /// `b ? x : y` for an arithmetic 0/1 share `b`, as `y + b (x - y)`.
    pub async fn select(&mut self, b: &[u64], x: &[u64], y: &[u64]) -> Result<Vec<u64>> {
        let d = self.sub(x, y);
        let bd = self.mul(b, &d).await?;
        Ok(self.add(y, &bd))
    }
}

/// Operands of one shared matrix product `x (rows x inner) * y (inner x cols)`.
#[derive(Clone, Copy, Debug)]
pub struct MatmulJob<'a> {
    pub x: &'a [u64],
    pub y: &'a [u64],
    pub rows: usize,
    pub inner: usize,
    pub cols: usize,
}

/// `z += x (r x k) * y (k x c)` with wrapping arithmetic.
pub(crate) fn matmul_acc(z: &mut [u64], x: &[u64], y: &[u64], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let zrow = &mut z[i * c..(i + 1) * c];
        for t in 0..k {
            let a = x[i * k + t];
            if a == 0 {
                continue;
            }
            let yrow = &y[t * c..(t + 1) * c];
            for (zj, yj) in zrow.iter_mut().zip(yrow) {
                *zj = zj.wrapping_add(a.wrapping_mul(*yj));
            }
        }
    }
}
