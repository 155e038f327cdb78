//! Measurement output of a completed run: offset samples against true
//! time, reference-time delivery records, slave update/validity history,
//! diagnostic counters and the raw observations the budget decomposition
//! attributes to each error source.

use crate::gptp::NodeId;
use crate::timebase::{TickDuration, Timestamp};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct PduCounter {
    pub sent: u64,
    pub arrived: u64,
    pub lost: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Counters {
    /// Sync PDUs discarded for a stale sequence id.
    pub stale_sync_drops: u64,
    /// Negative peer-delay or 5GS-residence measurements.
    pub measurement_anomalies: u64,
    /// Attempted cross-NPN deliveries; nonzero fails the run.
    pub isolation_violations: u64,
    /// PDUs dropped because an endpoint was down.
    pub pdu_loss: u64,
    /// Translator protocol violations (double or missing ingress stamp).
    pub protocol_violations: u64,
    /// Per-domain transport accounting.
    pub per_domain: BTreeMap<u8, PduCounter>,
    /// Arrival events still queued when the run ended.
    pub in_flight_at_end: u64,
}

impl Counters {
    pub fn domain(&mut self, number: u8) -> &mut PduCounter {
        self.per_domain.entry(number).or_default()
    }
}

/// One periodic measurement of a device's corrected clock against the
/// acting grandmaster, on the simulator's privileged true timeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OffsetSample {
    pub at: Timestamp,
    pub node: NodeId,
    pub domain: u8,
    /// Device's grandmaster estimate minus the grandmaster's actual clock.
    pub offset: TickDuration,
}

/// One periodic measurement of a UE's disciplined 5GS clock against the
/// 5G grandmaster.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UeSample {
    pub at: Timestamp,
    pub node: NodeId,
    pub est_offset: TickDuration,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeliveryRecord {
    pub at: Timestamp,
    pub ue: NodeId,
    /// 5GS-time error immediately after the delivery step.
    pub est_offset: TickDuration,
    pub quant_error: TickDuration,
    pub ta_residual: TickDuration,
}

/// A processed Sync from the selected grandmaster stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UpdateRecord {
    pub at: Timestamp,
    pub node: NodeId,
    pub domain: u8,
    pub source: NodeId,
    /// Correction field of the delivered PDU.
    pub correction: TickDuration,
    pub offset_estimate: TickDuration,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValidityRecord {
    pub at: Timestamp,
    pub node: NodeId,
    pub domain: u8,
    pub valid: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FinalSlaveState {
    pub selected: Option<NodeId>,
    pub offset_estimate: TickDuration,
    pub valid: bool,
    pub ever_lost_validity: bool,
}

/// Worst observed magnitude of each 5GS error source during the run.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct BudgetObservations {
    pub max_abs_quant_error: TickDuration,
    pub max_abs_ta_residual: TickDuration,
    pub max_abs_delivery_est: TickDuration,
    /// Worst drift of a UE 5GS clock away from its delivery anchor.
    pub max_abs_ue_drift_accrual: TickDuration,
    /// Constant per-node 5GS transport errors drawn for this run.
    pub drawn_node_errors: BTreeMap<NodeId, TickDuration>,
}

impl BudgetObservations {
    pub fn observe(field: &mut TickDuration, value: TickDuration) {
        if value.abs() > *field {
            *field = value.abs();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub scenario: String,
    pub seed: u64,
    pub t_end: Timestamp,
    /// Samples before this true time are excluded from reports.
    pub warmup_end: Timestamp,
    pub offset_samples: Vec<OffsetSample>,
    pub ue_samples: Vec<UeSample>,
    pub deliveries: Vec<DeliveryRecord>,
    pub updates: Vec<UpdateRecord>,
    pub validity: Vec<ValidityRecord>,
    pub final_states: BTreeMap<(NodeId, u8), FinalSlaveState>,
    pub counters: Counters,
    pub budget: BudgetObservations,
}
