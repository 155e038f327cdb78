//! The simulation world: node/domain runtime state and the event handlers
//! that implement gPTP distribution, the 5GS virtual bridge and fault
//! injection on top of the event queue.

use super::trace::*;
use super::{EventKind, EventQueue, QueuedEvent, SubstreamRng};
use crate::config::{
    DomainSource, DriftSpec, FaultKind, JitterSpec, LinkKind, NodeKind, ScenarioConfig,
};
use crate::fiveg::{self, RouteDecision};
use crate::gptp::{
    self, ClockSlaveState, GmCandidate, NodeId, PdelayExchange, PortRole, PortState, SyncPdu,
    DEFAULT_SYNC_PDU_BYTES,
};
use crate::timebase::{quantize, ClockModel, Rational, TickDuration, Timestamp};
use num::One;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

struct PortRt {
    link: usize,
    peer: NodeId,
    kind: LinkKind,
    delay_est: TickDuration,
    rate_ratio: Rational,
    prev_t3: Option<Timestamp>,
    prev_t4: Option<Timestamp>,
}

struct SlaveRt {
    per_source: BTreeMap<NodeId, ClockSlaveState>,
    selected: Option<NodeId>,
    excluded: BTreeSet<NodeId>,
    valid: bool,
    update_count: u64,
    ever_lost_validity: bool,
}

impl SlaveRt {
    fn new(selected: Option<NodeId>) -> Self {
        Self {
            per_source: BTreeMap::new(),
            selected,
            excluded: BTreeSet::new(),
            valid: false,
            update_count: 0,
            ever_lost_validity: false,
        }
    }
}

struct UeRt {
    gnb: Option<NodeId>,
    /// Disciplined 5GS clock, re-anchored by each reference-time delivery.
    fg_clock: Option<ClockModel>,
    last_delivery: Timestamp,
    last_delivery_est: TickDuration,
    prop_delay: TickDuration,
    ta_rng: ChaCha8Rng,
}

struct NodeRt {
    alive: bool,
    kind: NodeKind,
    osc: ClockModel,
    drift: Rational,
    ports: Vec<PortRt>,
    slaves: BTreeMap<u8, SlaveRt>,
    ue: Option<UeRt>,
    /// Drawn constant deviation from the 5G grandmaster (UPF/gNB).
    fg_error: TickDuration,
    residence_rng: ChaCha8Rng,
    merged_seq: BTreeMap<u8, u64>,
}

struct EmitterRt {
    seq: u64,
    next_mark_local: Timestamp,
}

struct DomainRt {
    emitters: BTreeMap<NodeId, EmitterRt>,
    merged_next_mark: Timestamp,
}

/// One scenario's executable state. Strictly single-threaded; independent
/// `Sim` instances share nothing and may run on different threads.
pub struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    queue: EventQueue,
    nodes: Vec<NodeRt>,
    domains: Vec<DomainRt>,
    link_rngs: Vec<ChaCha8Rng>,
    fg_gm: ClockModel,
    pdelay_interval: TickDuration,
    pdelay_turnaround: TickDuration,
    estimate_rate_ratio: bool,
    counters: Counters,
    trace: Trace,
}

fn resolve_drift(spec: &DriftSpec, key: &str, streams: &SubstreamRng) -> Rational {
    match spec {
        DriftSpec::Constant(v) => *v,
        DriftSpec::UniformPpm(bound) => {
            // micro-ppm resolution keeps the draw exact and the bound tight
            let micro = (bound * Rational::from_integer(1_000_000)).to_integer();
            let mut rng = streams.stream(key);
            let draw = rng.random_range(-micro..=micro);
            Rational::new(draw, 1_000_000)
        }
    }
}

impl<'a> Sim<'a> {
    pub fn new(cfg: &'a ScenarioConfig) -> Self {
        let streams = SubstreamRng::new(cfg.run.seed);
        let mut budget = BudgetObservations::default();

        let fg_drift = resolve_drift(&cfg.fiveg.gm_clock.drift, "drift:5gs-gm", &streams);
        let fg_gm = ClockModel::new(
            cfg.fiveg.gm_clock.offset,
            fg_drift,
            cfg.fiveg.gm_clock.granularity,
            Timestamp::ZERO,
        )
        .expect("validated 5GS grandmaster clock");

        let mut nodes: Vec<NodeRt> = Vec::with_capacity(cfg.nodes.len());
        for (i, nc) in cfg.nodes.iter().enumerate() {
            let id = NodeId(i as u32);
            let drift = resolve_drift(&nc.clock.drift, &format!("drift:{}", nc.name), &streams);
            let osc = ClockModel::new(nc.clock.offset, drift, nc.clock.granularity, Timestamp::ZERO)
                .expect("validated node clock");
            let fg_error = match cfg.fiveg.node_error_bounds.get(&id) {
                Some(bound) if matches!(nc.kind, NodeKind::Upf | NodeKind::Gnb) => {
                    let b = bound.ticks();
                    if b == 0 {
                        TickDuration::ZERO
                    } else {
                        let mut rng = streams.stream(&format!("fgerr:{}", nc.name));
                        TickDuration::from_ticks(rng.random_range(-b..=b))
                    }
                }
                _ => TickDuration::ZERO,
            };
            if matches!(nc.kind, NodeKind::Upf | NodeKind::Gnb) {
                budget.drawn_node_errors.insert(id, fg_error);
            }
            nodes.push(NodeRt {
                alive: true,
                kind: nc.kind,
                osc,
                drift,
                ports: Vec::new(),
                slaves: BTreeMap::new(),
                ue: None,
                fg_error,
                residence_rng: streams.stream(&format!("residence:{}", nc.name)),
                merged_seq: BTreeMap::new(),
            });
        }

        // Ports. Radio links carry reference time, not PDUs, so they do not
        // become gPTP ports; the UE keeps its propagation delay instead.
        let mut link_rngs = Vec::with_capacity(cfg.links.len());
        for (li, link) in cfg.links.iter().enumerate() {
            link_rngs.push(streams.stream(&link.rng_key));
            if link.kind == LinkKind::Radio {
                continue;
            }
            for (end, peer) in [(link.a, link.b), (link.b, link.a)] {
                nodes[end.0 as usize].ports.push(PortRt {
                    link: li,
                    peer,
                    kind: link.kind,
                    delay_est: TickDuration::ZERO,
                    rate_ratio: Rational::one(),
                    prev_t3: None,
                    prev_t4: None,
                });
            }
        }

        // UE runtime: serving gNB and radio propagation delay.
        for (i, nc) in cfg.nodes.iter().enumerate() {
            if nc.kind != NodeKind::Ue {
                continue;
            }
            let id = NodeId(i as u32);
            let mut gnb = None;
            let mut prop = TickDuration::ZERO;
            for link in &cfg.links {
                if link.kind == LinkKind::Radio && (link.a == id || link.b == id) {
                    let g = link.other_end(id);
                    gnb = Some(g);
                    prop = link.delay_from(g);
                }
            }
            nodes[i].ue = Some(UeRt {
                gnb,
                fg_clock: None,
                last_delivery: Timestamp::ZERO,
                last_delivery_est: TickDuration::ZERO,
                prop_delay: prop,
                ta_rng: streams.stream(&format!("ta:{}", nc.name)),
            });
        }

        // Domain runtime and initial election.
        let mut domains = Vec::with_capacity(cfg.domains.len());
        for dc in &cfg.domains {
            let mut rt = DomainRt { emitters: BTreeMap::new(), merged_next_mark: Timestamp::ZERO };
            if let DomainSource::External { candidates, .. } = &dc.source {
                let elected = gptp::bmca_elect(candidates).expect("validated non-empty candidates");
                rt.emitters.insert(elected, EmitterRt { seq: 0, next_mark_local: Timestamp::ZERO });
                for c in candidates {
                    if c.is_hot_standby {
                        rt.emitters
                            .entry(c.node)
                            .or_insert(EmitterRt { seq: 0, next_mark_local: Timestamp::ZERO });
                    }
                }
                // Every tracking node starts slaved to the elected stream.
                for (i, nc) in cfg.nodes.iter().enumerate() {
                    if tracks_domain(nc, dc.id.number) {
                        nodes[i].slaves.insert(dc.id.number, SlaveRt::new(Some(elected)));
                    }
                }
            } else {
                for (i, nc) in cfg.nodes.iter().enumerate() {
                    if tracks_domain(nc, dc.id.number) {
                        nodes[i].slaves.insert(dc.id.number, SlaveRt::new(None));
                    }
                }
            }
            domains.push(rt);
        }

        let pdelay_interval =
            cfg.domains.iter().map(|d| d.pdelay_interval).min().unwrap_or(TickDuration::from_secs(1));
        let pdelay_turnaround = cfg
            .domains
            .iter()
            .map(|d| d.pdelay_turnaround)
            .min()
            .unwrap_or(TickDuration::from_micros(100));
        let estimate_rate_ratio = cfg.domains.iter().any(|d| d.estimate_rate_ratio);

        let trace = Trace {
            scenario: cfg.name.clone(),
            seed: cfg.run.seed,
            t_end: Timestamp::ZERO,
            warmup_end: Timestamp::ZERO + cfg.run.warmup,
            offset_samples: Vec::new(),
            ue_samples: Vec::new(),
            deliveries: Vec::new(),
            updates: Vec::new(),
            validity: Vec::new(),
            final_states: BTreeMap::new(),
            counters: Counters::default(),
            budget,
        };

        let mut sim = Sim {
            cfg,
            queue: EventQueue::new(),
            nodes,
            domains,
            link_rngs,
            fg_gm,
            pdelay_interval,
            pdelay_turnaround,
            estimate_rate_ratio,
            counters: Counters::default(),
            trace,
        };
        sim.bootstrap();
        sim
    }

    fn bootstrap(&mut self) {
        let t0 = Timestamp::ZERO;
        // Scripted faults first so a t=0 failure precedes any emission.
        for f in &self.cfg.run.faults {
            self.queue.schedule(f.at, EventKind::Fault { node: f.node, kind: f.kind });
        }
        for (di, dc) in self.cfg.domains.iter().enumerate() {
            match &dc.source {
                DomainSource::External { .. } => {
                    let emitters: Vec<NodeId> = self.domains[di].emitters.keys().copied().collect();
                    for e in emitters {
                        let mark = self.nodes[e.0 as usize].osc.read_local(t0);
                        self.domains[di].emitters.get_mut(&e).unwrap().next_mark_local = mark;
                        self.queue.schedule(t0, EventKind::SyncEmit { domain_idx: di, emitter: e });
                    }
                }
                DomainSource::FiveGsMerged => {
                    self.domains[di].merged_next_mark = self.fg_gm.read_local(t0);
                    self.queue.schedule(t0, EventKind::MergedEmit { domain_idx: di });
                }
            }
        }
        // Peer-delay measurement on every wired port.
        for (i, node) in self.nodes.iter().enumerate() {
            for (pi, port) in node.ports.iter().enumerate() {
                if port.kind == LinkKind::Wired {
                    self.queue
                        .schedule(t0, EventKind::PdelayRound { node: NodeId(i as u32), port: pi });
                }
            }
        }
        // Reference-time delivery to every UE with a serving gNB.
        for (i, node) in self.nodes.iter().enumerate() {
            if node.ue.as_ref().map(|u| u.gnb.is_some()).unwrap_or(false) {
                self.queue.schedule(t0, EventKind::RefTimeDelivery { ue: NodeId(i as u32) });
            }
        }
        // Missed-sync watchdogs for externally sourced domains.
        for (i, node) in self.nodes.iter().enumerate() {
            let id = NodeId(i as u32);
            for (&dn, sl) in &node.slaves {
                if let Some(sel) = sl.selected {
                    if sel != id {
                        let timeout = self.detection_timeout(dn);
                        self.queue.schedule(
                            t0 + timeout,
                            EventKind::SyncWatchdog { node: id, domain_number: dn, armed_count: 0 },
                        );
                    }
                }
            }
        }
        self.queue.schedule(t0, EventKind::Sample);
    }

    fn detection_timeout(&self, domain_number: u8) -> TickDuration {
        let dc = self.domain_cfg(domain_number);
        let mut t = TickDuration::ZERO;
        for _ in 0..dc.missed_sync_threshold {
            t += dc.sync_interval;
        }
        t
    }

    fn domain_cfg(&self, number: u8) -> &crate::config::DomainCfg {
        self.cfg
            .domains
            .iter()
            .find(|d| d.id.number == number)
            .expect("domain number validated")
    }

    fn domain_idx(&self, number: u8) -> usize {
        self.cfg.domains.iter().position(|d| d.id.number == number).expect("domain validated")
    }

    /// Schedules a node failure or recovery.
    pub fn inject_fault(&mut self, node: NodeId, at: Timestamp, kind: FaultKind) {
        self.queue.schedule(at, EventKind::Fault { node, kind });
    }

    /// Processes every event with `at <= t_end` and returns the trace.
    pub fn run_until(mut self, t_end: Timestamp) -> Trace {
        while let Some(ev) = self.queue.pop_at_most(t_end) {
            self.dispatch(ev);
        }
        self.finalize(t_end)
    }

    fn dispatch(&mut self, ev: QueuedEvent) {
        match ev.kind {
            EventKind::SyncEmit { domain_idx, emitter } => self.on_sync_emit(domain_idx, emitter),
            EventKind::MergedEmit { domain_idx } => self.on_merged_emit(domain_idx),
            EventKind::PduArrival { to, from, link, pdu } => self.on_pdu_arrival(to, from, link, pdu),
            EventKind::BridgeEgress { node, ingress_port, ingress_local, pdu } => {
                self.on_bridge_egress(node, ingress_port, ingress_local, pdu)
            }
            EventKind::PdelayRound { node, port } => self.on_pdelay_round(node, port),
            EventKind::PdelayApply { node, port, exchange } => self.on_pdelay_apply(node, port, exchange),
            EventKind::RefTimeDelivery { ue } => self.on_ref_time_delivery(ue),
            EventKind::Fault { node, kind } => self.on_fault(node, kind),
            EventKind::SyncWatchdog { node, domain_number, armed_count } => {
                self.on_watchdog(node, domain_number, armed_count)
            }
            EventKind::Sample => self.on_sample(),
        }
    }

    // -- transport ---------------------------------------------------------

    fn transmit(&mut self, link_idx: usize, from: NodeId, pdu: SyncPdu) {
        let now = self.queue.now();
        let link = &self.cfg.links[link_idx];
        let to = link.other_end(from);
        let ctr = self.counters.domain(pdu.domain.number);
        ctr.sent += 1;
        if !self.nodes[from.0 as usize].alive || !self.nodes[to.0 as usize].alive {
            self.counters.domain(pdu.domain.number).lost += 1;
            self.counters.pdu_loss += 1;
            return;
        }
        let base = link.delay_from(from);
        let jitter = match link.jitter {
            JitterSpec::None => TickDuration::ZERO,
            JitterSpec::Uniform { min, max } => {
                let draw = self.link_rngs[link_idx].random_range(min.ticks()..=max.ticks());
                TickDuration::from_ticks(draw)
            }
        };
        self.queue.schedule(now + base + jitter, EventKind::PduArrival { to, from, link: link_idx, pdu });
    }

    // -- sync emission -----------------------------------------------------

    fn on_sync_emit(&mut self, domain_idx: usize, emitter: NodeId) {
        let now = self.queue.now();
        let dc = &self.cfg.domains[domain_idx];
        let sync_interval = dc.sync_interval;
        let domain = dc.id;
        let Some(em) = self.domains[domain_idx].emitters.get_mut(&emitter) else { return };
        // Next round ticks on the emitter's own clock even while it is down,
        // so a recovered grandmaster resumes its cadence.
        em.next_mark_local = em.next_mark_local + sync_interval;
        let next_mark = em.next_mark_local;
        let next_true = self.nodes[emitter.0 as usize].osc.to_true(next_mark);
        self.queue.schedule(next_true, EventKind::SyncEmit { domain_idx, emitter });

        if !self.nodes[emitter.0 as usize].alive {
            return;
        }
        let seq = {
            let em = self.domains[domain_idx].emitters.get_mut(&emitter).unwrap();
            em.seq += 1;
            em.seq
        };
        let origin = self.nodes[emitter.0 as usize].osc.read_local(now);
        let pdu = SyncPdu {
            domain,
            origin_ts: origin,
            correction: TickDuration::ZERO,
            sequence_id: seq,
            src_node: emitter,
            embedded_tsi: None,
            size_bytes: DEFAULT_SYNC_PDU_BYTES,
        };
        let wired: Vec<usize> = self.nodes[emitter.0 as usize]
            .ports
            .iter()
            .filter(|p| p.kind == LinkKind::Wired)
            .map(|p| p.link)
            .collect();
        for link in wired {
            self.transmit(link, emitter, pdu.clone());
        }
    }

    fn on_merged_emit(&mut self, domain_idx: usize) {
        let now = self.queue.now();
        let dc = &self.cfg.domains[domain_idx];
        let domain = dc.id;
        let mark = self.domains[domain_idx].merged_next_mark + dc.sync_interval;
        self.domains[domain_idx].merged_next_mark = mark;
        self.queue.schedule(self.fg_gm.to_true(mark), EventKind::MergedEmit { domain_idx });

        // Each live translator edge sources the merged domain toward its
        // wired TSN neighbors, stamping its own 5GS clock as origin.
        for i in 0..self.nodes.len() {
            let id = NodeId(i as u32);
            if !self.nodes[i].alive {
                continue;
            }
            if !matches!(self.nodes[i].kind, NodeKind::Upf | NodeKind::Ue) {
                continue;
            }
            let wired: Vec<usize> = self.nodes[i]
                .ports
                .iter()
                .filter(|p| p.kind == LinkKind::Wired)
                .map(|p| p.link)
                .collect();
            if wired.is_empty() {
                continue;
            }
            let Some(reading) = self.fg_edge_reading(id) else { continue };
            let seq = {
                let e = self.nodes[i].merged_seq.entry(domain.number).or_insert(0);
                *e += 1;
                *e
            };
            let pdu = fiveg::emit_5gs_gm_sync(reading, domain, seq, id);
            for link in wired {
                self.transmit(link, id, pdu.clone());
            }
        }
    }

    /// A translator's reading of the 5GS clock: the UPF applies its drawn
    /// transport error, the UE its disciplined clock; both floor to the
    /// node's stamping granularity.
    fn fg_edge_reading(&self, node: NodeId) -> Option<Timestamp> {
        let now = self.queue.now();
        let n = &self.nodes[node.0 as usize];
        match n.kind {
            NodeKind::Upf | NodeKind::Gnb => {
                let raw = self.fg_gm.read_local(now) + n.fg_error;
                Some(quantize(raw, self.cfg.node(node).clock.granularity))
            }
            NodeKind::Ue => n.ue.as_ref().and_then(|u| u.fg_clock.as_ref()).map(|c| c.read_local(now)),
            _ => None,
        }
    }

    // -- PDU forwarding and consumption -------------------------------------

    fn port_index(&self, node: NodeId, link: usize) -> usize {
        self.nodes[node.0 as usize]
            .ports
            .iter()
            .position(|p| p.link == link)
            .expect("arrival on a known port")
    }

    fn on_pdu_arrival(&mut self, to: NodeId, _from: NodeId, link: usize, pdu: SyncPdu) {
        let now = self.queue.now();
        if !self.nodes[to.0 as usize].alive {
            self.counters.domain(pdu.domain.number).lost += 1;
            self.counters.pdu_loss += 1;
            return;
        }
        self.counters.domain(pdu.domain.number).arrived += 1;
        let port_idx = self.port_index(to, link);
        match self.nodes[to.0 as usize].kind {
            NodeKind::EndStation => {
                let delay = self.nodes[to.0 as usize].ports[port_idx].delay_est;
                self.consume(to, &pdu, delay);
            }
            NodeKind::Bridge => {
                let delay = self.nodes[to.0 as usize].ports[port_idx].delay_est;
                self.consume(to, &pdu, delay);
                let ingress_local = self.nodes[to.0 as usize].osc.read_local(now);
                let hold = self.draw_residence(to);
                self.queue.schedule(
                    now + hold,
                    EventKind::BridgeEgress { node: to, ingress_port: port_idx, ingress_local, pdu },
                );
            }
            NodeKind::Upf => self.on_upf_ingress(to, port_idx, pdu),
            NodeKind::Ue => self.on_ue_ingress(to, port_idx, pdu),
            NodeKind::Gnb => {
                // Radio links never carry PDUs; a gNB arrival is a wiring bug.
                self.counters.protocol_violations += 1;
            }
        }
    }

    fn draw_residence(&mut self, node: NodeId) -> TickDuration {
        let nc = self.cfg.node(node);
        match nc.residence_jitter {
            JitterSpec::None => nc.residence,
            JitterSpec::Uniform { min, max } => {
                let draw = self.nodes[node.0 as usize]
                    .residence_rng
                    .random_range(min.ticks()..=max.ticks());
                nc.residence + TickDuration::from_ticks(draw)
            }
        }
    }

    fn on_bridge_egress(
        &mut self,
        node: NodeId,
        ingress_port: usize,
        ingress_local: Timestamp,
        pdu: SyncPdu,
    ) {
        let now = self.queue.now();
        if !self.nodes[node.0 as usize].alive {
            return;
        }
        let egress_local = self.nodes[node.0 as usize].osc.read_local(now);
        let residence = gptp::compute_residence(ingress_local, egress_local);
        let upstream = self.nodes[node.0 as usize].ports[ingress_port].delay_est;
        let out = gptp::build_forwarded_sync(&pdu, residence, upstream);
        let fanout: Vec<usize> = self.nodes[node.0 as usize]
            .ports
            .iter()
            .enumerate()
            .filter(|(pi, p)| *pi != ingress_port && p.kind == LinkKind::Wired)
            .map(|(_, p)| p.link)
            .collect();
        for link in fanout {
            self.transmit(link, node, out.clone());
        }
    }

    fn on_upf_ingress(&mut self, upf: NodeId, port_idx: usize, pdu: SyncPdu) {
        if self.nodes[upf.0 as usize].ports[port_idx].kind != LinkKind::Wired {
            // Uplink gPTP through a session is rejected at validation; a PDU
            // here means the scenario found another way, count and drop.
            self.counters.protocol_violations += 1;
            return;
        }
        // The virtual bridge accounts its wired ingress link like any other
        // time-aware system, then stamps the 5GS ingress time.
        let upstream = self.nodes[upf.0 as usize].ports[port_idx].delay_est;
        let with_link = gptp::build_forwarded_sync(&pdu, TickDuration::ZERO, upstream);
        let Some(reading) = self.fg_edge_reading(upf) else {
            self.counters.protocol_violations += 1;
            return;
        };
        let stamped = match fiveg::nw_tt_ingress(&with_link, reading) {
            Ok(p) => p,
            Err(_) => {
                self.counters.protocol_violations += 1;
                return;
            }
        };
        let sessions: Vec<(usize, NodeId)> = self.nodes[upf.0 as usize]
            .ports
            .iter()
            .filter(|p| p.kind == LinkKind::PduSession)
            .map(|p| (p.link, p.peer))
            .collect();
        let npn = self.cfg.npn_of(upf).cloned();
        for (link, target) in sessions {
            match &npn {
                Some(ctx) => match fiveg::route_pdu(ctx, &stamped, target) {
                    RouteDecision::Deliver => self.transmit(link, upf, stamped.clone()),
                    RouteDecision::Reject(_) => {
                        self.counters.isolation_violations += 1;
                    }
                },
                None => self.transmit(link, upf, stamped.clone()),
            }
        }
    }

    fn on_ue_ingress(&mut self, ue: NodeId, port_idx: usize, pdu: SyncPdu) {
        if self.nodes[ue.0 as usize].ports[port_idx].kind != LinkKind::PduSession {
            // Wired-side Sync toward a UE would be uplink distribution.
            self.counters.protocol_violations += 1;
            return;
        }
        let Some(reading) = self.fg_edge_reading(ue) else {
            // No 5GS time yet; the translator cannot stamp an egress.
            self.counters.protocol_violations += 1;
            return;
        };
        let out = match fiveg::ds_tt_egress(&pdu, reading) {
            Ok(o) => o,
            Err(_) => {
                self.counters.protocol_violations += 1;
                return;
            }
        };
        if out.anomaly {
            self.counters.measurement_anomalies += 1;
        }
        if self.cfg.node(ue).is_end_station {
            self.consume(ue, &out.pdu, TickDuration::ZERO);
        }
        let wired: Vec<usize> = self.nodes[ue.0 as usize]
            .ports
            .iter()
            .filter(|p| p.kind == LinkKind::Wired)
            .map(|p| p.link)
            .collect();
        for link in wired {
            self.transmit(link, ue, out.pdu.clone());
        }
    }

    /// Slave-side ingress: updates the per-stream estimate and, when the
    /// stream is the selected grandmaster, validity and the watchdog.
    fn consume(&mut self, node: NodeId, pdu: &SyncPdu, neighbor_delay: TickDuration) {
        let now = self.queue.now();
        let dn = pdu.domain.number;
        let merged = matches!(self.domain_cfg(dn).source, DomainSource::FiveGsMerged);
        let ingress_local = self.nodes[node.0 as usize].osc.read_local(now);
        let n = &mut self.nodes[node.0 as usize];
        let Some(sl) = n.slaves.get_mut(&dn) else { return };
        if sl.excluded.contains(&pdu.src_node) {
            return;
        }
        let entry = sl
            .per_source
            .entry(pdu.src_node)
            .or_insert_with(|| ClockSlaveState::fresh(pdu.domain));
        let role = if sl.selected == Some(pdu.src_node) { PortRole::Slave } else { PortRole::Passive };
        let port_view = PortState {
            role,
            neighbor_delay,
            neighbor_rate_ratio: Rational::one(),
            peer: pdu.src_node,
        };
        match gptp::process_sync_ingress(entry, pdu, ingress_local, &port_view) {
            Ok(mut st) => {
                // last_update is kept in true time for metrics.
                st.last_update = now;
                *entry = st.clone();
                if merged && sl.selected.is_none() {
                    sl.selected = Some(pdu.src_node);
                }
                if sl.selected == Some(pdu.src_node) {
                    sl.update_count += 1;
                    let count = sl.update_count;
                    if !sl.valid {
                        sl.valid = true;
                        self.trace.validity.push(ValidityRecord { at: now, node, domain: dn, valid: true });
                    }
                    self.trace.updates.push(UpdateRecord {
                        at: now,
                        node,
                        domain: dn,
                        source: pdu.src_node,
                        correction: pdu.correction,
                        offset_estimate: st.gm_offset_estimate,
                    });
                    let timeout = self.detection_timeout(dn);
                    self.queue.schedule(
                        now + timeout,
                        EventKind::SyncWatchdog { node, domain_number: dn, armed_count: count },
                    );
                }
            }
            Err(gptp::SyncIngressError::StaleSequence { .. }) => {
                self.counters.stale_sync_drops += 1;
            }
        }
    }

    // -- peer delay ----------------------------------------------------------

    fn on_pdelay_round(&mut self, node: NodeId, port: usize) {
        let now = self.queue.now();
        self.queue.schedule(now + self.pdelay_interval, EventKind::PdelayRound { node, port });
        let (link_idx, peer) = {
            let p = &self.nodes[node.0 as usize].ports[port];
            (p.link, p.peer)
        };
        if !self.nodes[node.0 as usize].alive || !self.nodes[peer.0 as usize].alive {
            return;
        }
        let link = &self.cfg.links[link_idx];
        let mut draw = |rng: &mut ChaCha8Rng| match link.jitter {
            JitterSpec::None => TickDuration::ZERO,
            JitterSpec::Uniform { min, max } => {
                TickDuration::from_ticks(rng.random_range(min.ticks()..=max.ticks()))
            }
        };
        let d_fwd = link.delay_from(node) + draw(&mut self.link_rngs[link_idx]);
        let d_rev = link.delay_from(peer) + draw(&mut self.link_rngs[link_idx]);
        let turnaround = self.pdelay_turnaround;
        let t1 = self.nodes[node.0 as usize].osc.read_local(now);
        let t2 = self.nodes[peer.0 as usize].osc.read_local(now + d_fwd);
        let t3 = self.nodes[peer.0 as usize].osc.read_local(now + d_fwd + turnaround);
        let done = now + d_fwd + turnaround + d_rev;
        let t4 = self.nodes[node.0 as usize].osc.read_local(done);
        let ratio = self.nodes[node.0 as usize].ports[port].rate_ratio;
        self.queue.schedule(
            done,
            EventKind::PdelayApply {
                node,
                port,
                exchange: PdelayExchange { t1, t2, t3, t4, neighbor_rate_ratio: ratio },
            },
        );
    }

    fn on_pdelay_apply(&mut self, node: NodeId, port: usize, exchange: PdelayExchange) {
        let peer = self.nodes[node.0 as usize].ports[port].peer;
        if !self.nodes[node.0 as usize].alive || !self.nodes[peer.0 as usize].alive {
            return;
        }
        let mut exchange = exchange;
        if self.estimate_rate_ratio {
            let p = &mut self.nodes[node.0 as usize].ports[port];
            if let (Some(p3), Some(p4)) = (p.prev_t3, p.prev_t4) {
                let dt3 = (exchange.t3 - p3).ticks();
                let dt4 = (exchange.t4 - p4).ticks();
                if dt3 > 0 && dt4 > 0 {
                    // responder interval converted into requester clock units
                    p.rate_ratio = Rational::new(dt4 as i128, dt3 as i128);
                }
            }
            p.prev_t3 = Some(exchange.t3);
            p.prev_t4 = Some(exchange.t4);
            exchange.neighbor_rate_ratio = p.rate_ratio;
        }
        let est = gptp::measure_link_delay(&exchange);
        if est.anomaly {
            self.counters.measurement_anomalies += 1;
        }
        let p = &mut self.nodes[node.0 as usize].ports[port];
        p.delay_est = est.delay;
    }

    // -- 5GS reference time ---------------------------------------------------

    fn on_ref_time_delivery(&mut self, ue: NodeId) {
        let now = self.queue.now();
        let period = self.cfg.fiveg.ref_time.delivery_period;
        self.queue.schedule(now + period, EventKind::RefTimeDelivery { ue });
        if !self.nodes[ue.0 as usize].alive {
            return;
        }
        let Some(gnb) = self.nodes[ue.0 as usize].ue.as_ref().and_then(|u| u.gnb) else { return };
        if !self.nodes[gnb.0 as usize].alive {
            return;
        }
        let gm_reading = self.fg_gm.read_local(now);
        let gnb_error = self.nodes[gnb.0 as usize].fg_error;
        let gnb_reading = gm_reading + gnb_error;
        let (drift, granularity) = {
            let n = &self.nodes[ue.0 as usize];
            (n.drift, self.cfg.node(ue).clock.granularity)
        };
        let u = self.nodes[ue.0 as usize].ue.as_mut().expect("ue runtime");
        let outcome =
            fiveg::deliver_ref_time(&self.cfg.fiveg.ref_time, gnb_reading, gnb_error, &mut u.ta_rng);
        // Re-anchor the disciplined clock: it reads gm + est now and then
        // free-runs on the UE oscillator until the next delivery.
        let anchor_value = gm_reading + outcome.est_5g_offset;
        let offset = anchor_value - now;
        u.fg_clock = Some(
            ClockModel::new(offset, drift, granularity, now).expect("validated UE clock parameters"),
        );
        u.last_delivery = now;
        u.last_delivery_est = outcome.est_5g_offset;
        self.trace.deliveries.push(DeliveryRecord {
            at: now,
            ue,
            est_offset: outcome.est_5g_offset,
            quant_error: outcome.quant_error,
            ta_residual: outcome.ta_residual,
        });
        BudgetObservations::observe(&mut self.trace.budget.max_abs_quant_error, outcome.quant_error);
        BudgetObservations::observe(&mut self.trace.budget.max_abs_ta_residual, outcome.ta_residual);
        BudgetObservations::observe(&mut self.trace.budget.max_abs_delivery_est, outcome.est_5g_offset);
    }

    // -- faults and detection --------------------------------------------------

    fn on_fault(&mut self, node: NodeId, kind: FaultKind) {
        let now = self.queue.now();
        match kind {
            FaultKind::Fail => self.nodes[node.0 as usize].alive = false,
            FaultKind::Recover => {
                self.nodes[node.0 as usize].alive = true;
                // Re-arm detection so a revived slave notices dead streams.
                let domains: Vec<(u8, u64, Option<NodeId>)> = self.nodes[node.0 as usize]
                    .slaves
                    .iter()
                    .map(|(&dn, sl)| (dn, sl.update_count, sl.selected))
                    .collect();
                for (dn, count, selected) in domains {
                    if selected.is_some() && selected != Some(node) {
                        let timeout = self.detection_timeout(dn);
                        self.queue.schedule(
                            now + timeout,
                            EventKind::SyncWatchdog { node, domain_number: dn, armed_count: count },
                        );
                    }
                }
            }
        }
    }

    fn on_watchdog(&mut self, node: NodeId, domain_number: u8, armed_count: u64) {
        let now = self.queue.now();
        if !self.nodes[node.0 as usize].alive {
            return;
        }
        let timeout = self.detection_timeout(domain_number);
        let domain_idx = self.domain_idx(domain_number);
        let candidates: Vec<GmCandidate> = match &self.cfg.domains[domain_idx].source {
            DomainSource::External { candidates, .. } => candidates.clone(),
            DomainSource::FiveGsMerged => Vec::new(),
        };
        let sl = match self.nodes[node.0 as usize].slaves.get_mut(&domain_number) {
            Some(s) => s,
            None => return,
        };
        if sl.update_count != armed_count {
            return; // a fresher sync re-armed this watchdog
        }
        let Some(old) = sl.selected else { return };
        if old == node {
            return; // the acting grandmaster has nothing to detect
        }
        // The selected stream went quiet: exclude it and fail over.
        sl.excluded.insert(old);
        let excluded = sl.excluded.clone();
        let remaining: Vec<GmCandidate> =
            candidates.into_iter().filter(|c| !excluded.contains(&c.node)).collect();
        match gptp::bmca_elect(&remaining) {
            Ok(new_gm) => {
                sl.selected = Some(new_gm);
                let fresh = sl
                    .per_source
                    .get(&new_gm)
                    .map(|st| st.valid && now - st.last_update <= timeout)
                    .unwrap_or(false);
                let valid_now = fresh || new_gm == node;
                if valid_now != sl.valid {
                    sl.valid = valid_now;
                    if !valid_now {
                        sl.ever_lost_validity = true;
                    }
                    self.trace.validity.push(ValidityRecord {
                        at: now,
                        node,
                        domain: domain_number,
                        valid: valid_now,
                    });
                }
                let count = sl.update_count;
                self.queue.schedule(
                    now + timeout,
                    EventKind::SyncWatchdog { node, domain_number, armed_count: count },
                );
                if new_gm == node {
                    // Become the acting grandmaster; a cold standby starts
                    // its Sync stream here.
                    let dom = &mut self.domains[domain_idx];
                    if !dom.emitters.contains_key(&node) {
                        let mark = self.nodes[node.0 as usize].osc.read_local(now);
                        dom.emitters.insert(node, EmitterRt { seq: 0, next_mark_local: mark });
                        self.queue.schedule(now, EventKind::SyncEmit { domain_idx, emitter: node });
                    }
                }
            }
            Err(_) => {
                // No remaining candidate: the domain is unsynchronized here.
                sl.selected = None;
                if sl.valid {
                    sl.valid = false;
                    sl.ever_lost_validity = true;
                    self.trace.validity.push(ValidityRecord {
                        at: now,
                        node,
                        domain: domain_number,
                        valid: false,
                    });
                }
            }
        }
    }

    // -- measurement -------------------------------------------------------------

    fn on_sample(&mut self) {
        let now = self.queue.now();
        self.queue.schedule(now + self.cfg.run.sampling_period, EventKind::Sample);
        for i in 0..self.nodes.len() {
            let id = NodeId(i as u32);
            if !self.nodes[i].alive {
                continue;
            }
            let domains: Vec<(u8, NodeId, TickDuration)> = self.nodes[i]
                .slaves
                .iter()
                .filter_map(|(&dn, sl)| {
                    if !sl.valid {
                        return None;
                    }
                    let sel = sl.selected?;
                    if sel == id {
                        return None; // the acting grandmaster is the reference
                    }
                    let est = sl.per_source.get(&sel)?.gm_offset_estimate;
                    Some((dn, sel, est))
                })
                .collect();
            for (dn, sel, est) in domains {
                let local = self.nodes[i].osc.read_local(now);
                let est_gm = local - est;
                let reference = match self.domain_cfg(dn).source {
                    DomainSource::FiveGsMerged => self.fg_gm.read_local(now),
                    DomainSource::External { .. } => self.nodes[sel.0 as usize].osc.read_local(now),
                };
                self.trace.offset_samples.push(OffsetSample {
                    at: now,
                    node: id,
                    domain: dn,
                    offset: est_gm - reference,
                });
            }
            // UE 5GS-internal clock state.
            if let Some(u) = &self.nodes[i].ue {
                if let Some(fg) = &u.fg_clock {
                    let est = fg.read_local(now) - self.fg_gm.read_local(now);
                    let accrual = est - u.last_delivery_est;
                    self.trace.ue_samples.push(UeSample { at: now, node: id, est_offset: est });
                    BudgetObservations::observe(
                        &mut self.trace.budget.max_abs_ue_drift_accrual,
                        accrual,
                    );
                }
            }
        }
    }

    fn finalize(mut self, t_end: Timestamp) -> Trace {
        self.trace.t_end = t_end;
        for (i, node) in self.nodes.iter().enumerate() {
            let id = NodeId(i as u32);
            for (&dn, sl) in &node.slaves {
                let est = sl
                    .selected
                    .and_then(|s| sl.per_source.get(&s))
                    .map(|st| st.gm_offset_estimate)
                    .unwrap_or(TickDuration::ZERO);
                self.trace.final_states.insert(
                    (id, dn),
                    FinalSlaveState {
                        selected: sl.selected,
                        offset_estimate: est,
                        valid: sl.valid,
                        ever_lost_validity: sl.ever_lost_validity,
                    },
                );
            }
        }
        self.counters.in_flight_at_end = self.queue.pending_arrivals();
        self.trace.counters = self.counters;
        self.trace
    }
}

fn tracks_domain(nc: &crate::config::NodeCfg, number: u8) -> bool {
    let is_consumer = match nc.kind {
        NodeKind::EndStation | NodeKind::Bridge => true,
        NodeKind::Ue => nc.is_end_station,
        NodeKind::Upf | NodeKind::Gnb => false,
    };
    if !is_consumer {
        return false;
    }
    match &nc.track_domains {
        Some(set) => set.contains(&number),
        None => true,
    }
}
