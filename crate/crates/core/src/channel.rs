//! In-process duplex transport between the two parties.
//!
//! Every frame on the wire is a 4-byte little-endian length prefix followed
//! by the payload; ring elements travel as 8-byte little-endian words. The
//! shared [`CostLedger`] counts bytes per party and rounds per phase label.
//!
//! Rounds are counted by message dependency depth: a frame's depth is one
//! more than the deepest frame its sender had received when sending it.
//! A party is charged a round for each increase of its own send depth, and
//! the exported round count for a phase is the larger of the two parties'.

use std::collections::{BTreeMap, VecDeque};
use std::future::Future;
use std::pin::pin;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::task::{Context, Poll, Waker};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type PartyId = u8;

/// Length prefix in bytes.
pub const FRAME_HEADER: u64 = 4;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCost {
    pub bytes_sent: [u64; 2],
    pub bytes_received: [u64; 2],
    pub rounds: [u64; 2],
    pub messages: [u64; 2],
}

impl PhaseCost {
    pub fn bytes(&self) -> u64 {
        self.bytes_sent[0] + self.bytes_sent[1]
    }

    pub fn rounds(&self) -> u64 {
        self.rounds[0].max(self.rounds[1])
    }
}

/// Exported form of one phase: `{bytes0, bytes1, rounds}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub bytes0: u64,
    pub bytes1: u64,
    pub rounds: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CostLedger {
    phases: BTreeMap<String, PhaseCost>,
}

impl CostLedger {
    pub fn phases(&self) -> &BTreeMap<String, PhaseCost> {
        &self.phases
    }

    pub fn phase(&self, label: &str) -> Option<&PhaseCost> {
        self.phases.get(label)
    }

    pub fn total_bytes(&self) -> u64 {
        self.phases.values().map(PhaseCost::bytes).sum()
    }

    pub fn bytes_sent_by(&self, party: PartyId) -> u64 {
        self.phases.values().map(|p| p.bytes_sent[party as usize]).sum()
    }

    pub fn total_rounds(&self) -> u64 {
        self.phases.values().map(PhaseCost::rounds).sum()
    }

    pub fn summary(&self) -> BTreeMap<String, PhaseSummary> {
        self.phases
            .iter()
            .map(|(k, v)| {
                (
                    k.clone(),
                    PhaseSummary {
                        bytes0: v.bytes_sent[0],
                        bytes1: v.bytes_sent[1],
                        rounds: v.rounds(),
                    },
                )
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary()).expect("ledger summary serializes")
    }

    /// Adds another ledger's counters into this one.
    pub fn absorb(&mut self, other: &CostLedger) {
        for (k, v) in &other.phases {
            let e = self.phases.entry(k.clone()).or_default();
            for i in 0..2 {
                e.bytes_sent[i] += v.bytes_sent[i];
                e.bytes_received[i] += v.bytes_received[i];
                e.rounds[i] += v.rounds[i];
                e.messages[i] += v.messages[i];
            }
        }
    }

    fn entry(&mut self, label: &str) -> &mut PhaseCost {
        if !self.phases.contains_key(label) {
            self.phases.insert(label.to_string(), PhaseCost::default());
        }
        self.phases.get_mut(label).unwrap()
    }
}

/// Bandwidth/latency model used to turn a ledger into an estimated time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    /// bits per second
    pub bandwidth: f64,
    /// seconds charged per round
    pub latency: f64,
}

impl NetworkModel {
    pub fn new(bandwidth: f64, latency: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !(latency >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "network model needs bandwidth > 0 and latency >= 0 (got {bandwidth}, {latency})"
            )));
        }
        Ok(NetworkModel { bandwidth, latency })
    }

    /// 3 Gbps, 0.8 ms.
    pub fn lan() -> Self {
        NetworkModel { bandwidth: 3e9, latency: 0.8e-3 }
    }

    /// 200 Mbps, 40 ms.
    pub fn wan() -> Self {
        NetworkModel { bandwidth: 200e6, latency: 40e-3 }
    }
}

/// Modelled seconds: `sum_phase(bytes * 8 / bandwidth) + rounds * latency`.
pub fn estimate_time(ledger: &CostLedger, model: &NetworkModel) -> f64 {
    ledger
        .phases
        .values()
        .map(|p| p.bytes() as f64 * 8.0 / model.bandwidth + p.rounds() as f64 * model.latency)
        .sum()
}

/// One sent frame as seen by its sender.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MessageRecord {
    pub label: Arc<str>,
    pub payload_len: u32,
}

struct Envelope {
    label: Arc<str>,
    depth: u64,
    frame: Vec<u8>,
}

#[derive(Default)]
struct Queue {
    frames: VecDeque<Envelope>,
    closed: bool,
}

/// One party's end of the duplex link.
pub struct Endpoint {
    party: PartyId,
    outbox: Arc<Mutex<Queue>>,
    inbox: Arc<Mutex<Queue>>,
    ledger: Arc<Mutex<CostLedger>>,
    activity: Arc<AtomicU64>,
    recv_depth: u64,
    sent_depth: u64,
    log: Vec<MessageRecord>,
}

/// Creates the two endpoints of a link plus a handle on their shared ledger.
pub fn duplex() -> (Endpoint, Endpoint, Arc<Mutex<CostLedger>>) {
    let a = Arc::new(Mutex::new(Queue::default()));
    let b = Arc::new(Mutex::new(Queue::default()));
    let ledger = Arc::new(Mutex::new(CostLedger::default()));
    let activity = Arc::new(AtomicU64::new(0));
    let mk = |party, outbox: &Arc<Mutex<Queue>>, inbox: &Arc<Mutex<Queue>>| Endpoint {
        party,
        outbox: outbox.clone(),
        inbox: inbox.clone(),
        ledger: ledger.clone(),
        activity: activity.clone(),
        recv_depth: 0,
        sent_depth: 0,
        log: Vec::new(),
    };
    let e0 = mk(0, &a, &b);
    let e1 = mk(1, &b, &a);
    (e0, e1, ledger)
}

impl Endpoint {
    pub fn party(&self) -> PartyId {
        self.party
    }

    /// Frames sent so far, in order.
    pub fn log(&self) -> &[MessageRecord] {
        &self.log
    }

    pub fn ledger(&self) -> CostLedger {
        self.ledger.lock().unwrap().clone()
    }

    pub(crate) fn activity(&self) -> Arc<AtomicU64> {
        self.activity.clone()
    }

    pub fn send(&mut self, label: &Arc<str>, payload: &[u8]) -> Result<()> {
        let len = u32::try_from(payload.len())
            .map_err(|_| Error::Frame(format!("payload of {} bytes", payload.len())))?;
        let mut frame = Vec::with_capacity(payload.len() + FRAME_HEADER as usize);
        frame.extend_from_slice(&len.to_le_bytes());
        frame.extend_from_slice(payload);
        let depth = self.recv_depth + 1;
        let new_rounds = depth.saturating_sub(self.sent_depth);
        self.sent_depth = self.sent_depth.max(depth);
        if self.inbox.lock().unwrap().closed {
            // peer hung up
            return Err(Error::ChannelClosed);
        }
        {
            let mut q = self.outbox.lock().unwrap();
            let mut ledger = self.ledger.lock().unwrap();
            let e = ledger.entry(label);
            let p = self.party as usize;
            e.bytes_sent[p] += frame.len() as u64;
            e.rounds[p] += new_rounds;
            e.messages[p] += 1;
            q.frames.push_back(Envelope { label: label.clone(), depth, frame });
        }
        self.log.push(MessageRecord { label: label.clone(), payload_len: len });
        self.activity.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Waits for the next frame and returns its payload.
    pub async fn recv(&mut self) -> Result<Vec<u8>> {
        let env = std::future::poll_fn(|_cx| {
            let mut q = self.inbox.lock().unwrap();
            match q.frames.pop_front() {
                Some(env) => Poll::Ready(Ok(env)),
                None if q.closed => Poll::Ready(Err(Error::ChannelClosed)),
                None => Poll::Pending,
            }
        })
        .await?;
        self.recv_depth = self.recv_depth.max(env.depth);
        {
            let mut ledger = self.ledger.lock().unwrap();
            ledger.entry(&env.label).bytes_received[self.party as usize] += env.frame.len() as u64;
        }
        self.activity.fetch_add(1, Ordering::Relaxed);
        decode_frame(env.frame)
    }

    pub fn close(&mut self) {
        self.outbox.lock().unwrap().closed = true;
        self.activity.fetch_add(1, Ordering::Relaxed);
    }
}

impl Drop for Endpoint {
    fn drop(&mut self) {
        self.close();
    }
}

fn decode_frame(mut frame: Vec<u8>) -> Result<Vec<u8>> {
    if frame.len() < FRAME_HEADER as usize {
        return Err(Error::Frame("short header".into()));
    }
    let len = u32::from_le_bytes(frame[..4].try_into().unwrap()) as usize;
    if frame.len() != len + 4 {
        return Err(Error::Frame(format!("length prefix {len} vs body {}", frame.len() - 4)));
    }
    frame.drain(..4);
    Ok(frame)
}

pub fn words_to_bytes(words: &[u64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(words.len() * 8);
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

pub fn bytes_to_words(bytes: &[u8]) -> Result<Vec<u64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Frame(format!("{} bytes is not a whole number of words", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Drives both parties' futures to completion on the current thread.
///
/// The parties interleave cooperatively: each is polled until it blocks on
/// an empty inbox. If neither can make progress the run is a deadlock.
pub fn run_pair<F0, F1>(activity: Arc<AtomicU64>, f0: F0, f1: F1) -> Result<(F0::Output, F1::Output)>
where
    F0: Future,
    F1: Future,
{
    let mut f0 = pin!(f0);
    let mut f1 = pin!(f1);
    let mut out0 = None;
    let mut out1 = None;
    let mut cx = Context::from_waker(Waker::noop());
    loop {
        let before = activity.load(Ordering::Relaxed);
        if out0.is_none() {
            if let Poll::Ready(v) = f0.as_mut().poll(&mut cx) {
                out0 = Some(v);
            }
        }
        if out1.is_none() {
            if let Poll::Ready(v) = f1.as_mut().poll(&mut cx) {
                out1 = Some(v);
            }
        }
        if out0.is_some() && out1.is_some() {
            return Ok((out0.unwrap(), out1.unwrap()));
        }
        if activity.load(Ordering::Relaxed) == before {
            return Err(Error::Deadlock);
        }
    }
}
