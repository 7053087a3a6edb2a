//! Inference report exported as JSON.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel::{estimate_time, CostLedger, NetworkModel, PhaseSummary};

/// Cost and pruning outcome of one layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub swaps: u64,
    /// all phases of this layer
    pub bytes: u64,
    pub reduced_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatedSeconds {
    /// under the network model of the run
    pub selected: f64,
    pub lan: f64,
    pub wan: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub variant: String,
    pub tokens: usize,
    /// revealed to the client only
    pub logits: Vec<f64>,
    /// tokens left after each layer
    pub token_counts: Vec<usize>,
    pub layers: Vec<LayerReport>,
    pub ledger: BTreeMap<String, PhaseSummary>,
    pub total_bytes: u64,
    pub total_rounds: u64,
    pub network: NetworkModel,
    pub est_seconds: EstimatedSeconds,
    /// SHA-256 over each party's opened values
    pub transcript_digests: [String; 2],
}

impl InferenceReport {
    pub fn estimates(ledger: &CostLedger, net: &NetworkModel) -> EstimatedSeconds {
        EstimatedSeconds {
            selected: estimate_time(ledger, net),
            lan: estimate_time(ledger, &NetworkModel::lan()),
            wan: estimate_time(ledger, &NetworkModel::wan()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Short human-readable summary.
    pub fn summary(&self) -> String {
        let counts: Vec<String> = self.token_counts.iter().map(usize::to_string).collect();
        format!(
            "variant {}: {} tokens -> [{}], {} bytes, {} rounds, est {:.3}s (lan {:.3}s, wan {:.3}s)",
            self.variant,
            self.tokens,
            counts.join(", "),
            self.total_bytes,
            self.total_rounds,
            self.est_seconds.selected,
            self.est_seconds.lan,
            self.est_seconds.wan
        )
    }
}
