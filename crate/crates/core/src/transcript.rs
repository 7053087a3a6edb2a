//! Log of every value a party learns from an opening, plus the leakage audit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Why a value was revealed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RevealKind {
    /// `x - a` or `y - b` of a Beaver multiplication.
    BeaverMasked,
    /// `x + r` against a dealer edaBit during bit extraction.
    EdabitMasked,
    /// `x ^ a` or `y ^ b` of a boolean AND gate (packed words).
    AndMasked,
    /// The surviving-token count `n'`.
    TokenCount,
    /// One word of the reduction mask (packed bits).
    ReductionMask,
    /// Final output revealed to its recipient.
    Output,
    /// A plain opening with no declared purpose.
    Plain,
}

impl RevealKind {
    /// Openings that are uniformly masked by dealer randomness.
    pub fn is_masked(self) -> bool {
        matches!(self, RevealKind::BeaverMasked | RevealKind::EdabitMasked | RevealKind::AndMasked)
    }

    fn tag(self) -> u8 {
        self as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reveal {
    pub kind: RevealKind,
    pub value: u64,
}

/// The values one party has seen opened, in order.
///
/// Keeping every value is optional (large benchmark runs only keep the
/// per-kind counts and the running digest).
#[derive(Clone, Debug)]
pub struct Transcript {
    keep_values: bool,
    entries: Vec<Reveal>,
    counts: BTreeMap<RevealKind, u64>,
    hasher: Sha256,
}

impl Default for Transcript {
    fn default() -> Self {
        Transcript::new(true)
    }
}

impl Transcript {
    pub fn new(keep_values: bool) -> Self {
        Transcript {
            keep_values,
            entries: Vec::new(),
            counts: BTreeMap::new(),
            hasher: Sha256::new(),
        }
    }

    pub fn record(&mut self, kind: RevealKind, value: u64) {
        self.hasher.update([kind.tag()]);
        self.hasher.update(value.to_le_bytes());
        *self.counts.entry(kind).or_default() += 1;
        if self.keep_values {
            self.entries.push(Reveal { kind, value });
        }
    }

    pub fn record_all(&mut self, kind: RevealKind, values: &[u64]) {
        for &v in values {
            self.record(kind, v);
        }
    }

    pub fn len(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> &[Reveal] {
        &self.entries
    }

    pub fn count(&self, kind: RevealKind) -> u64 {
        self.counts.get(&kind).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<RevealKind, u64> {
        &self.counts
    }

    pub fn digest(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }
}

/// What a protocol run is allowed to disclose.
#[derive(Clone, Debug, Default)]
pub struct Disclosure {
    /// Expected surviving-token counts, in order.
    pub token_counts: Vec<u64>,
    /// Expected reduction-mask words, in order.
    pub reduction_words: Vec<u64>,
    /// Whether an [`RevealKind::Output`] is legitimate for this party.
    pub output_allowed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub masked: u64,
    pub counts: u64,
    pub reduction_words: u64,
    pub outputs: u64,
    /// Reveals that fall outside the declared disclosure set.
    pub unclassified: Vec<Reveal>,
}

impl AuditReport {
    pub fn clean(&self) -> bool {
        self.unclassified.is_empty()
    }
}

/// Classifies every reveal of a (value-keeping) transcript against the
/// declared disclosure set. Counts and reduction words must match the
/// expected values in order; anything else is unclassified.
pub fn audit(transcript: &Transcript, disclosure: &Disclosure) -> AuditReport {
    let mut report = AuditReport::default();
    let mut counts = disclosure.token_counts.iter();
    let mut words = disclosure.reduction_words.iter();
    for r in transcript.entries() {
        let ok = match r.kind {
            k if k.is_masked() => {
                report.masked += 1;
                true
            }
            RevealKind::TokenCount => {
                report.counts += 1;
                counts.next() == Some(&r.value)
            }
            RevealKind::ReductionMask => {
                report.reduction_words += 1;
                words.next() == Some(&r.value)
            }
            RevealKind::Output => {
                report.outputs += 1;
                disclosure.output_allowed
            }
            _ => false,
        };
        if !ok {
            report.unclassified.push(*r);
        }
    }
    report
}

/// Chi-square statistic of the top `bits` bits of masked ring openings
/// against the uniform distribution. Returns `(statistic, degrees_of_freedom)`.
pub fn masked_uniformity(values: impl IntoIterator<Item = u64>, ell: u32, bits: u32) -> (f64, usize) {
    let buckets = 1usize << bits;
    let mut hist = vec![0u64; buckets];
    let mut n = 0u64;
    for v in values {
        hist[(v >> (ell - bits)) as usize & (buckets - 1)] += 1;
        n += 1;
    }
    let expect = n as f64 / buckets as f64;
    let stat = hist.iter().map(|&h| (h as f64 - expect).powi(2) / expect).sum();
    (stat, buckets - 1)
}
