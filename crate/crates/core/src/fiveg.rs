//! The 5G system as an 802.1AS time-aware virtual bridge.
//!
//! Two synchronization processes run in parallel and stay independent: the
//! 5GS-internal process (grandmaster -> gNB -> UE reference-time delivery
//! with quantization and timing-advance residuals) and the TSN-domain
//! process (gPTP PDUs transiting the user plane between the network-side
//! and device-side TSN translators, corrected by the measured 5GS
//! residence time).

use crate::gptp::{DomainId, NodeId, SyncPdu, DEFAULT_SYNC_PDU_BYTES};
use crate::timebase::{quantize, ClockModel, Rational, TickDuration, Timestamp, TICKS_PER_SEC};
use rand::Rng;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// The 5GS-internal reference clock plus the bounded deviation of each
/// transport-synchronized node (UPF, gNB) from it. The wireline telecom
/// profile distribution is abstracted to these per-node bounds.
#[derive(Clone, Debug)]
pub struct FiveGSystemClock {
    pub gm_clock: ClockModel,
    /// Per-node deviation bound; the engine draws a constant deviation
    /// within the bound for each node at run start.
    pub per_node_error: BTreeMap<NodeId, TickDuration>,
}

pub const DEFAULT_NODE_ERROR_BOUND_NS: i64 = 100;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DeliveryKind {
    Broadcast,
    Unicast,
}

/// Radio reference-time delivery parameters.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct RadioRefTimeConfig {
    /// Period between deliveries; a multiple of the 10 ms radio frame.
    pub delivery_period: TickDuration,
    /// Granularity of the signaled absolute time value.
    pub ref_quantization: TickDuration,
    /// Timing-advance quantization step, at least 32 ns.
    pub ta_quantization: TickDuration,
    pub delivery_kind: DeliveryKind,
}

pub const RADIO_FRAME: TickDuration = TickDuration::from_millis(10);
pub const MIN_TA_QUANTIZATION: TickDuration = TickDuration::from_nanos(32);

impl RadioRefTimeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.delivery_period < RADIO_FRAME {
            return Err("ref-time delivery period must be at least one 10 ms radio frame".into());
        }
        if self.ta_quantization < MIN_TA_QUANTIZATION {
            return Err("timing-advance quantization must be at least 32 ns".into());
        }
        if self.ref_quantization.ticks() < 1 {
            return Err("reference-time quantization must be at least 1 tick".into());
        }
        Ok(())
    }
}

/// A UE's view of 5GS time: the signed error of its disciplined 5GS clock
/// against the 5G grandmaster, refreshed by each reference-time delivery.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Ue5gClockState {
    pub ue: NodeId,
    pub est_5g_offset: TickDuration,
    pub last_delivery: Timestamp,
    pub prop_delay_true: TickDuration,
}

/// Outcome of one reference-time delivery, split into its error terms so
/// the budget decomposition can attribute them.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct RefTimeOutcome {
    pub est_5g_offset: TickDuration,
    pub quant_error: TickDuration,
    pub ta_residual: TickDuration,
}

/// One reference-time delivery: the gNB signals its (quantized) 5GS clock
/// reading; the timing-advance loop compensates the radio propagation
/// delay, leaving a residual uniform in half a TA quantization step either
/// way. The UE's 5GS-time error right after the delivery is
/// `gnb_error + quantization_error + ta_residual`.
pub fn deliver_ref_time<R: Rng>(
    cfg: &RadioRefTimeConfig,
    gnb_reading_unquantized: Timestamp,
    gnb_error: TickDuration,
    rng: &mut R,
) -> RefTimeOutcome {
    let signaled = quantize(gnb_reading_unquantized, cfg.ref_quantization);
    let quant_error = signaled - gnb_reading_unquantized;
    let half = cfg.ta_quantization.ticks() / 2;
    let ta_residual = TickDuration::from_ticks(rng.random_range(-half..=half));
    RefTimeOutcome {
        est_5g_offset: gnb_error + quant_error + ta_residual,
        quant_error,
        ta_residual,
    }
}

/// A non-public network: its member translators, member UEs and the
/// working-clock domains it owns. Domains of one NPN never reach the
/// device-side translators of another, even over a shared RAN.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct NpnContext {
    pub id: String,
    pub ues: BTreeSet<NodeId>,
    pub upfs: BTreeSet<NodeId>,
    pub domains: BTreeSet<u8>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TranslatorViolation {
    #[error("PDU already carries a 5GS ingress timestamp")]
    AlreadyStamped,
    #[error("PDU reached device-side translator without a 5GS ingress timestamp")]
    MissingIngressStamp,
}

/// Network-side translator ingress: stamps the UPF's 5GS clock reading
/// into the PDU. Everything else is left untouched.
pub fn nw_tt_ingress(pdu: &SyncPdu, upf_5g_local: Timestamp) -> Result<SyncPdu, TranslatorViolation> {
    if pdu.embedded_tsi.is_some() {
        return Err(TranslatorViolation::AlreadyStamped);
    }
    let mut out = pdu.clone();
    out.embedded_tsi = Some(upf_5g_local);
    Ok(out)
}

/// Result of a device-side translator egress.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct EgressOutcome {
    pub pdu: SyncPdu,
    pub residence: TickDuration,
    /// Set when 5GS clock errors made the computed residence negative;
    /// the value is still applied as computed.
    pub anomaly: bool,
}

/// Device-side translator egress: the difference between the egress and
/// ingress 5GS timestamps is the calculated 5GS residence time, added to
/// the PDU's correction before it leaves toward the next time-aware
/// system.
pub fn ds_tt_egress(pdu: &SyncPdu, ue_5g_local: Timestamp) -> Result<EgressOutcome, TranslatorViolation> {
    let tsi = pdu.embedded_tsi.ok_or(TranslatorViolation::MissingIngressStamp)?;
    let residence = ue_5g_local - tsi;
    let mut out = pdu.clone();
    out.correction = pdu.correction + residence;
    out.embedded_tsi = None;
    Ok(EgressOutcome { pdu: out, residence, anomaly: residence.is_negative() })
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RouteDecision {
    Deliver,
    Reject(RouteRejection),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RouteRejection {
    UeNotInNpn,
    DomainNotOwned,
}

/// Guards every user-plane delivery toward a device-side translator:
/// deliver only when the target UE belongs to the NPN and the PDU's
/// domain is owned by it. Rejections feed the isolation-violation
/// counter, which must stay zero on a correct run.
pub fn route_pdu(npn: &NpnContext, pdu: &SyncPdu, target_ue: NodeId) -> RouteDecision {
    if !npn.ues.contains(&target_ue) {
        return RouteDecision::Reject(RouteRejection::UeNotInNpn);
    }
    if !npn.domains.contains(&pdu.domain.number) {
        return RouteDecision::Reject(RouteRejection::DomainNotOwned);
    }
    RouteDecision::Deliver
}

/// Builds the Sync PDU an edge translator emits when the 5GS clock acts
/// as grandmaster for a merged time domain: origin is the edge's 5GS
/// clock reading, correction starts at zero.
pub fn emit_5gs_gm_sync(
    edge_5g_reading: Timestamp,
    domain: DomainId,
    sequence_id: u64,
    edge_node: NodeId,
) -> SyncPdu {
    SyncPdu {
        domain,
        origin_ts: edge_5g_reading,
        correction: TickDuration::ZERO,
        sequence_id,
        src_node: edge_node,
        embedded_tsi: None,
        size_bytes: DEFAULT_SYNC_PDU_BYTES,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OverheadError {
    #[error("overhead inputs must all be positive")]
    NonPositiveInput,
}

/// gPTP signaling load relative to the user-plane application load, as an
/// exact ratio: `(msgs * gptp_bytes / gptp_interval) / (user_bytes /
/// user_period)`. Constant in the number of UEs by construction.
pub fn compute_overhead(
    user_payload_bytes: u64,
    user_period: TickDuration,
    gptp_msgs_per_interval: u64,
    gptp_payload_bytes: u64,
    gptp_interval: TickDuration,
) -> Result<Rational, OverheadError> {
    if user_payload_bytes == 0
        || gptp_msgs_per_interval == 0
        || gptp_payload_bytes == 0
        || user_period.ticks() <= 0
        || gptp_interval.ticks() <= 0
    {
        return Err(OverheadError::NonPositiveInput);
    }
    let gptp_rate = Rational::new(
        (gptp_msgs_per_interval * gptp_payload_bytes) as i128,
        gptp_interval.ticks() as i128,
    );
    let user_rate = Rational::new(user_payload_bytes as i128, user_period.ticks() as i128);
    Ok(gptp_rate / user_rate)
}

/// Data rate in bits per second for a payload repeated every `period`.
pub fn rate_bits_per_sec(payload_bytes: u64, period: TickDuration) -> Rational {
    Rational::new(
        payload_bytes as i128 * 8 * TICKS_PER_SEC as i128,
        period.ticks() as i128,
    )
}
