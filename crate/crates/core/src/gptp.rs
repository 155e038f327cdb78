//! gPTP time-aware-system behavior: domains, synchronization PDUs,
//! peer-delay measurement, the bridge forwarding procedure, end-station
//! clock updates and simplified grandmaster election with hot standby.
//!
//! Everything here is a pure function over plain values; the event engine
//! in [`crate::simcore`] owns all state and drives these operations.

use crate::timebase::{ratio_floor_i64, Rational, TickDuration, Timestamp};
use num::One;
use thiserror::Error;

/// Index of a node in the compiled topology. Indices are assigned in
/// lexicographic order of the configured node names, so ordering on
/// `NodeId` matches ordering on names.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct NodeId(pub u32);

/// gPTP domain identity: the domain number carried in every PDU plus the
/// clock class it distributes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct DomainId {
    pub number: u8,
    pub class: DomainClass,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum DomainClass {
    Working,
    Universal,
}

/// Highest valid gPTP domain number.
pub const MAX_DOMAIN_NUMBER: u8 = 127;
/// Working-clock domains allowed per non-public network.
pub const MAX_WORKING_DOMAINS_PER_NPN: usize = 32;

/// A gPTP synchronization message. Sync and Follow_Up are collapsed into
/// one PDU carrying both the grandmaster origin timestamp and the
/// cumulative correction; the on-wire message count only matters for
/// overhead accounting.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SyncPdu {
    pub domain: DomainId,
    /// Grandmaster clock reading at origin.
    pub origin_ts: Timestamp,
    /// Cumulative delay from the grandmaster: link delays plus residence
    /// times accumulated along the path.
    pub correction: TickDuration,
    pub sequence_id: u64,
    /// The grandmaster that sourced this stream.
    pub src_node: NodeId,
    /// 5GS ingress timestamp, present only while the PDU transits the 5G
    /// virtual bridge.
    pub embedded_tsi: Option<Timestamp>,
    pub size_bytes: u32,
}

pub const DEFAULT_SYNC_PDU_BYTES: u32 = 50;

/// The four timestamps of a peer-delay exchange plus the neighbor rate
/// ratio in effect: `t1`/`t4` on the requester clock, `t2`/`t3` on the
/// responder clock.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PdelayExchange {
    pub t1: Timestamp,
    pub t2: Timestamp,
    pub t3: Timestamp,
    pub t4: Timestamp,
    pub neighbor_rate_ratio: Rational,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PortRole {
    Master,
    Slave,
    Passive,
    Disabled,
}

/// Per-port view used when processing a Sync ingress.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PortState {
    pub role: PortRole,
    /// Latest one-way delay estimate for the attached link.
    pub neighbor_delay: TickDuration,
    pub neighbor_rate_ratio: Rational,
    pub peer: NodeId,
}

impl PortState {
    pub fn new(role: PortRole, peer: NodeId) -> Self {
        Self { role, neighbor_delay: TickDuration::ZERO, neighbor_rate_ratio: Rational::one(), peer }
    }
}

/// Clock-slave state for one (node, domain, grandmaster-stream) triple:
/// the signed estimate of local clock minus grandmaster clock.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ClockSlaveState {
    pub domain: DomainId,
    /// Local clock minus grandmaster clock, signed.
    pub gm_offset_estimate: TickDuration,
    /// True time of the last processed Sync, for metrics.
    pub last_update: Timestamp,
    pub valid: bool,
    pub last_sequence_id: Option<u64>,
}

impl ClockSlaveState {
    pub fn fresh(domain: DomainId) -> Self {
        Self {
            domain,
            gm_offset_estimate: TickDuration::ZERO,
            last_update: Timestamp::ZERO,
            valid: false,
            last_sequence_id: None,
        }
    }
}

/// A grandmaster-capable node and its election priority tuple. Lower
/// values win; the node id breaks all ties.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct GmCandidate {
    pub node: NodeId,
    pub priority1: u8,
    pub clock_quality: u8,
    pub priority2: u8,
    pub is_hot_standby: bool,
}

/// Result of a peer-delay measurement. A negative raw value (asymmetry or
/// a fault) is clamped to zero and flagged so the engine can count it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct DelayEstimate {
    pub delay: TickDuration,
    pub anomaly: bool,
}

/// One-way symmetric link delay from a peer-delay exchange:
/// `((t4 - t1) - ratio * (t3 - t2)) / 2`, floored to whole ticks.
pub fn measure_link_delay(x: &PdelayExchange) -> DelayEstimate {
    debug_assert!(x.t2 <= x.t3 && x.t1 <= x.t4);
    let round_trip = Rational::from_integer((x.t4 - x.t1).ticks() as i128);
    let turnaround = Rational::from_integer((x.t3 - x.t2).ticks() as i128);
    let raw = (round_trip - x.neighbor_rate_ratio * turnaround) / Rational::from_integer(2);
    let ticks = ratio_floor_i64(raw);
    if ticks < 0 {
        DelayEstimate { delay: TickDuration::ZERO, anomaly: true }
    } else {
        DelayEstimate { delay: TickDuration::from_ticks(ticks), anomaly: false }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SyncIngressError {
    #[error("stale sequence id {got} (last seen {last})")]
    StaleSequence { got: u64, last: u64 },
}

/// Processes a Sync PDU arriving on a slave port: the grandmaster time at
/// ingress is `origin + correction + neighbor_delay`, and the offset
/// estimate is the local ingress stamp minus that.
pub fn process_sync_ingress(
    prev: &ClockSlaveState,
    pdu: &SyncPdu,
    ingress_local: Timestamp,
    port: &PortState,
) -> Result<ClockSlaveState, SyncIngressError> {
    if let Some(last) = prev.last_sequence_id {
        if pdu.sequence_id <= last {
            return Err(SyncIngressError::StaleSequence { got: pdu.sequence_id, last });
        }
    }
    let gm_at_ingress = pdu.origin_ts + pdu.correction + port.neighbor_delay;
    Ok(ClockSlaveState {
        domain: prev.domain,
        gm_offset_estimate: ingress_local - gm_at_ingress,
        last_update: ingress_local,
        valid: true,
        last_sequence_id: Some(pdu.sequence_id),
    })
}

/// Builds the PDU a bridge forwards to its clock slaves: the correction
/// grows by the upstream link delay plus this bridge's residence time;
/// origin, domain and sequence id are preserved.
pub fn build_forwarded_sync(
    pdu: &SyncPdu,
    residence: TickDuration,
    upstream_link_delay: TickDuration,
) -> SyncPdu {
    debug_assert!(!residence.is_negative());
    let mut out = pdu.clone();
    out.correction = pdu.correction + upstream_link_delay + residence;
    out
}

/// Residence time of a PDU through a node, on that node's local clock.
/// Egress before ingress on the same clock is a simulation-order bug.
pub fn compute_residence(ingress_local: Timestamp, egress_local: Timestamp) -> TickDuration {
    assert!(
        egress_local >= ingress_local,
        "negative residence: egress {egress_local:?} before ingress {ingress_local:?}"
    );
    egress_local - ingress_local
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no grandmaster candidate available")]
pub struct NoGrandmaster;

/// Simplified best-master election: minimize
/// (priority1, clock_quality, priority2, node id).
pub fn bmca_elect(candidates: &[GmCandidate]) -> Result<NodeId, NoGrandmaster> {
    candidates
        .iter()
        .min_by_key(|c| (c.priority1, c.clock_quality, c.priority2, c.node))
        .map(|c| c.node)
        .ok_or(NoGrandmaster)
}

/// PDUs matching the wanted domain number, order preserved.
pub fn select_domain(received: &[SyncPdu], wanted: DomainId) -> Vec<SyncPdu> {
    received.iter().filter(|p| p.domain.number == wanted.number).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num::One;
    use proptest::prelude::*;

    fn working(number: u8) -> DomainId {
        DomainId { number, class: DomainClass::Working }
    }

    fn pdu(domain: u8, origin: Timestamp, correction: i64, seq: u64) -> SyncPdu {
        SyncPdu {
            domain: working(domain),
            origin_ts: origin,
            correction: TickDuration::from_ticks(correction),
            sequence_id: seq,
            src_node: NodeId(0),
            embedded_tsi: None,
            size_bytes: DEFAULT_SYNC_PDU_BYTES,
        }
    }

    fn exchange(t1: i64, t2: i64, t3: i64, t4: i64) -> PdelayExchange {
        PdelayExchange {
            t1: Timestamp::from_ticks(t1),
            t2: Timestamp::from_ticks(t2),
            t3: Timestamp::from_ticks(t3),
            t4: Timestamp::from_ticks(t4),
            neighbor_rate_ratio: Rational::one(),
        }
    }

    #[test]
    fn link_delay_symmetric_link() {
        let est = measure_link_delay(&exchange(0, 1000, 5000, 6000));
        assert_eq!(est, DelayEstimate { delay: TickDuration::from_ticks(1000), anomaly: false });
    }

    #[test]
    fn link_delay_zero_when_all_equal() {
        let est = measure_link_delay(&exchange(7, 7, 7, 7));
        assert_eq!(est.delay, TickDuration::ZERO);
        assert!(!est.anomaly);
    }

    #[test]
    fn link_delay_ignores_responder_offset() {
        let base = measure_link_delay(&exchange(0, 1000, 5000, 6000));
        for shift in [123_456i64, -987_654] {
            let shifted = measure_link_delay(&exchange(0, 1000 + shift, 5000 + shift, 6000));
            assert_eq!(shifted, base);
        }
    }

    #[test]
    fn link_delay_asymmetric_link_averages_directions() {
        // Downstream (req -> resp) 800 ticks, upstream 1200 ticks,
        // turnaround 4000 on the responder clock.
        let down = 800i64;
        let up = 1200i64;
        let turnaround = 4000i64;
        let x = exchange(0, down, down + turnaround, down + turnaround + up);
        let est = measure_link_delay(&x);
        // Independent oracle: the symmetric estimate is the mean of the
        // two one-way delays, and the downstream error is their half-gap.
        let mean = (down + up) / 2;
        assert_eq!(est.delay, TickDuration::from_ticks(mean));
        let downstream_error = mean - down;
        assert_eq!(downstream_error, 200);
    }

    #[test]
    fn link_delay_negative_clamps_and_flags() {
        // Responder claims a turnaround longer than the round trip.
        let est = measure_link_delay(&exchange(0, 0, 5000, 1000));
        assert_eq!(est.delay, TickDuration::ZERO);
        assert!(est.anomaly);
    }

    #[test]
    fn sync_ingress_perfectly_synchronized() {
        let origin = Timestamp::from_secs(1000);
        let p = pdu(0, origin, 500, 1);
        let mut port = PortState::new(PortRole::Slave, NodeId(9));
        port.neighbor_delay = TickDuration::from_ticks(100);
        let prev = ClockSlaveState::fresh(working(0));
        let st = process_sync_ingress(&prev, &p, origin + TickDuration::from_ticks(600), &port).unwrap();
        assert_eq!(st.gm_offset_estimate, TickDuration::ZERO);
        assert!(st.valid);
    }

    #[test]
    fn sync_ingress_offset_arithmetic() {
        let origin = Timestamp::from_secs(1000);
        let p = pdu(0, origin, 500, 1);
        let mut port = PortState::new(PortRole::Slave, NodeId(9));
        port.neighbor_delay = TickDuration::from_ticks(100);
        let prev = ClockSlaveState::fresh(working(0));
        let st = process_sync_ingress(&prev, &p, origin + TickDuration::from_ticks(1600), &port).unwrap();
        assert_eq!(st.gm_offset_estimate, TickDuration::from_ticks(1000));
    }

    #[test]
    fn sync_ingress_drops_stale_sequence() {
        let origin = Timestamp::from_secs(1);
        let port = PortState::new(PortRole::Slave, NodeId(9));
        let prev = ClockSlaveState::fresh(working(0));
        let st = process_sync_ingress(&prev, &pdu(0, origin, 0, 5), origin, &port).unwrap();
        let err = process_sync_ingress(&st, &pdu(0, origin, 0, 5), origin, &port).unwrap_err();
        assert_eq!(err, SyncIngressError::StaleSequence { got: 5, last: 5 });
        let err = process_sync_ingress(&st, &pdu(0, origin, 0, 4), origin, &port).unwrap_err();
        assert_eq!(err, SyncIngressError::StaleSequence { got: 4, last: 5 });
    }

    #[test]
    fn forwarded_sync_accumulates_correction() {
        let p = pdu(0, Timestamp::from_secs(5), 0, 3);
        let out = build_forwarded_sync(&p, TickDuration::from_ticks(400), TickDuration::from_ticks(100));
        assert_eq!(out.correction, TickDuration::from_ticks(500));
        assert_eq!(out.origin_ts, p.origin_ts);
        assert_eq!(out.sequence_id, p.sequence_id);
    }

    #[test]
    fn forwarded_sync_identity_when_zero() {
        let p = pdu(0, Timestamp::from_secs(5), 777, 3);
        let out = build_forwarded_sync(&p, TickDuration::ZERO, TickDuration::ZERO);
        assert_eq!(out, p);
    }

    #[test]
    fn forwarded_sync_two_bridge_chain_matches_hand_sum() {
        // GM -d1- B1 -d2- B2 -d3- ES with residences r1, r2; the PDU the
        // end station receives carries d1+r1+d2+r2 and the receiver adds
        // d3 itself via its neighbor delay.
        let (d1, r1, d2, r2) = (100i64, 400, 250, 150);
        let p0 = pdu(0, Timestamp::from_secs(1), 0, 1);
        let p1 = build_forwarded_sync(&p0, TickDuration::from_ticks(r1), TickDuration::from_ticks(d1));
        let p2 = build_forwarded_sync(&p1, TickDuration::from_ticks(r2), TickDuration::from_ticks(d2));
        let oracle: i64 = [d1, r1, d2, r2].iter().sum();
        assert_eq!(p2.correction, TickDuration::from_ticks(oracle));
    }

    #[test]
    fn residence_examples() {
        let a = Timestamp::from_secs(100);
        let b = a + TickDuration::from_micros(500);
        assert_eq!(compute_residence(a, b), TickDuration::from_micros(500));
        assert_eq!(compute_residence(a, a), TickDuration::ZERO);
    }

    #[test]
    fn residence_measured_on_drifting_bridge_clock() {
        // Bridge with +50 ppm: a true 10 ms residence reads 500 ns longer
        // on the bridge clock. Oracle: read_local at both true instants.
        let c = crate::timebase::ClockModel::new(
            TickDuration::ZERO,
            Rational::from_integer(50),
            TickDuration::from_ticks(1),
            Timestamp::ZERO,
        )
        .unwrap();
        let t_in = Timestamp::from_secs(2);
        let t_out = t_in + TickDuration::from_millis(10);
        let measured = compute_residence(c.read_local(t_in), c.read_local(t_out));
        assert_eq!(measured, TickDuration::from_millis(10) + TickDuration::from_nanos(500));
    }

    #[test]
    #[should_panic(expected = "negative residence")]
    fn residence_negative_is_fatal() {
        let a = Timestamp::from_secs(100);
        compute_residence(a, a - TickDuration::from_ticks(1));
    }

    fn cand(node: u32, p1: u8, cq: u8, p2: u8) -> GmCandidate {
        GmCandidate { node: NodeId(node), priority1: p1, clock_quality: cq, priority2: p2, is_hot_standby: false }
    }

    #[test]
    fn bmca_examples() {
        assert_eq!(bmca_elect(&[cand(4, 3, 3, 3)]).unwrap(), NodeId(4));
        assert_eq!(bmca_elect(&[cand(1, 1, 0, 0), cand(2, 2, 0, 0)]).unwrap(), NodeId(1));
        assert_eq!(bmca_elect(&[cand(7, 0, 0, 0), cand(3, 0, 0, 0)]).unwrap(), NodeId(3));
        assert_eq!(bmca_elect(&[]).unwrap_err(), NoGrandmaster);
    }

    #[test]
    fn select_domain_examples() {
        assert!(select_domain(&[], working(1)).is_empty());
        let list = vec![pdu(1, Timestamp::ZERO, 0, 1), pdu(2, Timestamp::ZERO, 0, 2), pdu(1, Timestamp::ZERO, 0, 3)];
        let picked = select_domain(&list, working(1));
        assert_eq!(picked.len(), 2);
        assert_eq!(picked[0].sequence_id, 1);
        assert_eq!(picked[1].sequence_id, 3);
    }

    proptest! {
        #[test]
        fn bmca_is_permutation_invariant(mut tuples in proptest::collection::vec((0u32..50, 0u8..4, 0u8..4, 0u8..4), 1..12)) {
            tuples.sort();
            tuples.dedup_by_key(|t| t.0);
            let cands: Vec<GmCandidate> = tuples.iter().map(|&(n, a, b, c)| cand(n, a, b, c)).collect();
            let winner = bmca_elect(&cands).unwrap();
            let mut rev = cands.clone();
            rev.reverse();
            prop_assert_eq!(bmca_elect(&rev).unwrap(), winner);
            let mut rot = cands.clone();
            rot.rotate_left(cands.len() / 2 + 1);
            prop_assert_eq!(bmca_elect(&rot).unwrap(), winner);
        }

        #[test]
        fn select_domain_distributes_over_concat(
            a in proptest::collection::vec((0u8..4, 0u64..100), 0..8),
            b in proptest::collection::vec((0u8..4, 0u64..100), 0..8),
            wanted in 0u8..4,
        ) {
            let mk = |v: &[(u8, u64)]| -> Vec<SyncPdu> {
                v.iter().map(|&(d, s)| pdu(d, Timestamp::ZERO, 0, s)).collect()
            };
            let wa = working(wanted);
            let concat: Vec<SyncPdu> = mk(&a).into_iter().chain(mk(&b)).collect();
            let mut split = select_domain(&mk(&a), wa);
            split.extend(select_domain(&mk(&b), wa));
            prop_assert_eq!(select_domain(&concat, wa), split);
        }

        #[test]
        fn link_delay_shift_invariance(shift in -1_000_000i64..1_000_000, d in 0i64..100_000, turn in 0i64..100_000) {
            let plain = measure_link_delay(&exchange(0, d, d + turn, 2 * d + turn));
            let shifted = measure_link_delay(&exchange(0, d + shift, d + turn + shift, 2 * d + turn));
            prop_assert_eq!(plain, shifted);
            prop_assert_eq!(plain.delay, TickDuration::from_ticks(d));
        }
    }
}
