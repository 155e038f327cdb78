//! Trace post-processing: per-device synchronicity statistics, compliance
//! verdicts against the industrial requirement classes, the 5GS error
//! budget decomposition and failover continuity analysis.
//!
//! All statistics are measured against the simulator's privileged true
//! timeline: the requirement is defined between the master clock and each
//! device clock, and only the simulator observes both exactly.

use crate::config::{DomainSource, JitterSpec, LinkKind, NodeKind, ScenarioConfig};
use crate::gptp::{self, NodeId};
use crate::simcore::Trace;
use crate::timebase::{Rational, TickDuration, Timestamp};
use std::collections::BTreeMap;

// ---------------------------------------------------------------------------
// Synchronicity report
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceStats {
    pub node: NodeId,
    pub domain: u8,
    pub samples: u64,
    pub max_abs: TickDuration,
    /// Mean |offset| in ticks, exact.
    pub mean_abs: Rational,
    pub p99_abs: TickDuration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynchronicityReport {
    pub window: (Timestamp, Timestamp),
    pub devices: Vec<DeviceStats>,
}

/// Aggregates the trace's offset samples inside the measurement window
/// into per-(node, domain) statistics. Samples only exist while a slave
/// holds a valid estimate, and the warm-up prefix is excluded.
pub fn synchronicity_report(trace: &Trace) -> SynchronicityReport {
    let window = (trace.warmup_end, trace.t_end);
    let mut by_device: BTreeMap<(NodeId, u8), Vec<i64>> = BTreeMap::new();
    for s in &trace.offset_samples {
        if s.at >= window.0 && s.at <= window.1 {
            by_device.entry((s.node, s.domain)).or_default().push(s.offset.ticks().abs());
        }
    }
    let devices = by_device
        .into_iter()
        .map(|((node, domain), mut abs)| {
            abs.sort_unstable();
            let n = abs.len();
            let sum: i128 = abs.iter().map(|&v| v as i128).sum();
            let p99_idx = ((n as f64 * 0.99).ceil() as usize).max(1) - 1;
            DeviceStats {
                node,
                domain,
                samples: n as u64,
                max_abs: TickDuration::from_ticks(*abs.last().unwrap()),
                mean_abs: Rational::new(sum, n as i128),
                p99_abs: TickDuration::from_ticks(abs[p99_idx.min(n - 1)]),
            }
        })
        .collect();
    SynchronicityReport { window, devices }
}

// ---------------------------------------------------------------------------
// Compliance
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComplianceOutcome {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComplianceVerdict {
    pub scenario_class: u8,
    pub threshold: TickDuration,
    pub device_count: usize,
    pub device_limit: usize,
    /// Informational only; the simulator has no geometry.
    pub service_area: &'static str,
    pub outcome: ComplianceOutcome,
}

impl ComplianceVerdict {
    pub fn passed(&self) -> bool {
        self.outcome == ComplianceOutcome::Pass
    }
}

/// Synchronicity requirement per accuracy class: threshold, device limit
/// and the informational service-area note.
pub fn class_requirement(class: u8) -> (TickDuration, usize, &'static str) {
    match class {
        1 => (TickDuration::from_micros(1), 300, "<= 100 m x 100 m"),
        2 => (TickDuration::from_micros(10), 10, "<= 2500 m^2"),
        3 => (TickDuration::from_micros(1), 100, "< 20 km^2"),
        other => panic!("compliance class must be 1, 2 or 3, got {other}"),
    }
}

/// Pass iff every device's max |offset| is strictly below the class
/// threshold and the device count is within the class limit.
pub fn evaluate_compliance(report: &SynchronicityReport, class: u8) -> ComplianceVerdict {
    let (threshold, limit, area) = class_requirement(class);
    let device_count = report.devices.len();
    let outcome = if device_count == 0 {
        ComplianceOutcome::NotApplicable
    } else if device_count <= limit && report.devices.iter().all(|d| d.max_abs < threshold) {
        ComplianceOutcome::Pass
    } else {
        ComplianceOutcome::Fail
    };
    ComplianceVerdict {
        scenario_class: class,
        threshold,
        device_count,
        device_limit: limit,
        service_area: area,
        outcome,
    }
}

// ---------------------------------------------------------------------------
// Budget decomposition
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Contribution {
    /// Conservative worst-case bound from configuration.
    pub bound: TickDuration,
    /// Worst magnitude actually observed, where the trace records it.
    pub measured: Option<TickDuration>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BudgetDecomposition {
    /// 5GS transport node errors on the path (gNB and UPF bounds).
    pub gnb_node_error: Contribution,
    pub ref_quantization: Contribution,
    pub ta_residual: Contribution,
    /// Every clock-reading granularity along the worst path: origin stamp,
    /// peer-delay stamps, residence stamps, translator stamps, consumer
    /// ingress and sample-time reads.
    pub tt_granularity: Contribution,
    /// Asymmetric link delays plus jitter- and turnaround-induced
    /// peer-delay error on the worst path.
    pub wired_link_asymmetry: Contribution,
    /// Oscillator drift between corrections: consumer and grandmaster over
    /// a sync interval, UE 5GS clock over a delivery period, grandmaster
    /// drift over the path latency.
    pub drift_accrual: Contribution,
    /// Sum of the six bounds.
    pub bound_total: TickDuration,
    /// Largest |offset| observed end to end inside the window.
    pub measured_max: TickDuration,
    /// `measured_max <= bound_total`; a violation is a simulator defect.
    pub conservative: bool,
}

fn ceil_ppm_over(interval: TickDuration, ppm: Rational) -> TickDuration {
    // ticks * ppm / 1e6, rounded up
    let v = Rational::from_integer(interval.ticks() as i128) * ppm
        / Rational::from_integer(1_000_000);
    TickDuration::from_ticks(i64::try_from(v.ceil().to_integer()).expect("drift bound in range"))
}

#[derive(Default, Clone)]
struct PathBounds {
    gnb_node_error: TickDuration,
    ref_quantization: TickDuration,
    ta_residual: TickDuration,
    tt_granularity: TickDuration,
    wired_link_asymmetry: TickDuration,
    drift_accrual: TickDuration,
}

impl PathBounds {
    fn total(&self) -> TickDuration {
        self.gnb_node_error
            + self.ref_quantization
            + self.ta_residual
            + self.tt_granularity
            + self.wired_link_asymmetry
            + self.drift_accrual
    }
}

/// Per-source bounds from configuration plus the measured end-to-end
/// maximum from the trace. The bound walks the distribution tree from the
/// grandmaster and takes the worst consumer path.
pub fn decompose_budget(cfg: &ScenarioConfig, trace: &Trace) -> BudgetDecomposition {
    let mut worst = PathBounds::default();
    for dc in &cfg.domains {
        let roots: Vec<NodeId> = match &dc.source {
            DomainSource::External { candidates, .. } => {
                gptp::bmca_elect(candidates).into_iter().collect()
            }
            DomainSource::FiveGsMerged => cfg
                .nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| matches!(n.kind, NodeKind::Upf | NodeKind::Ue))
                .map(|(i, _)| NodeId(i as u32))
                .collect(),
        };
        for root in roots {
            for (consumer, path_links) in paths_from(cfg, root) {
                let nc = cfg.node(consumer);
                let consumes = match nc.kind {
                    NodeKind::EndStation | NodeKind::Bridge => true,
                    NodeKind::Ue => nc.is_end_station,
                    _ => false,
                } && nc
                    .track_domains
                    .as_ref()
                    .map(|s| s.contains(&dc.id.number))
                    .unwrap_or(true);
                if !consumes || consumer == root {
                    continue;
                }
                let b = path_bound(cfg, dc, root, consumer, &path_links);
                if b.total() > worst.total() {
                    worst = b;
                }
            }
        }
    }

    let measured = |v: TickDuration| Some(v);
    let mut gnb_measured = TickDuration::ZERO;
    for (&id, &err) in &trace.budget.drawn_node_errors {
        let _ = id;
        if err.abs() > gnb_measured {
            gnb_measured = err.abs();
        }
    }
    let mut measured_max = TickDuration::ZERO;
    for s in &trace.offset_samples {
        if s.at >= trace.warmup_end && s.offset.abs() > measured_max {
            measured_max = s.offset.abs();
        }
    }
    for s in &trace.ue_samples {
        if s.at >= trace.warmup_end && s.est_offset.abs() > measured_max {
            measured_max = s.est_offset.abs();
        }
    }
    let bound_total = worst.total();
    BudgetDecomposition {
        gnb_node_error: Contribution { bound: worst.gnb_node_error, measured: measured(gnb_measured) },
        ref_quantization: Contribution {
            bound: worst.ref_quantization,
            measured: measured(trace.budget.max_abs_quant_error),
        },
        ta_residual: Contribution {
            bound: worst.ta_residual,
            measured: measured(trace.budget.max_abs_ta_residual),
        },
        tt_granularity: Contribution { bound: worst.tt_granularity, measured: None },
        wired_link_asymmetry: Contribution { bound: worst.wired_link_asymmetry, measured: None },
        drift_accrual: Contribution {
            bound: worst.drift_accrual,
            measured: measured(trace.budget.max_abs_ue_drift_accrual),
        },
        bound_total,
        measured_max,
        conservative: measured_max <= bound_total,
    }
}

/// BFS over the PDU distribution graph (wired + session links), returning
/// for each reachable node the link path from the root.
fn paths_from(cfg: &ScenarioConfig, root: NodeId) -> Vec<(NodeId, Vec<usize>)> {
    let n = cfg.nodes.len();
    let mut parent_link: Vec<Option<(usize, NodeId)>> = vec![None; n];
    let mut seen = vec![false; n];
    seen[root.0 as usize] = true;
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        for (li, link) in cfg.links.iter().enumerate() {
            if link.kind == LinkKind::Radio {
                continue;
            }
            if link.a != v && link.b != v {
                continue;
            }
            let w = link.other_end(v);
            if !seen[w.0 as usize] {
                seen[w.0 as usize] = true;
                parent_link[w.0 as usize] = Some((li, v));
                queue.push_back(w);
            }
        }
    }
    let mut out = Vec::new();
    for i in 0..n {
        if !seen[i] || i == root.0 as usize {
            continue;
        }
        let mut path = Vec::new();
        let mut cur = NodeId(i as u32);
        while let Some((li, p)) = parent_link[cur.0 as usize] {
            path.push(li);
            cur = p;
        }
        path.reverse();
        out.push((NodeId(i as u32), path));
    }
    out
}

fn path_bound(
    cfg: &ScenarioConfig,
    dc: &crate::config::DomainCfg,
    root: NodeId,
    consumer: NodeId,
    path_links: &[usize],
) -> PathBounds {
    let mut b = PathBounds::default();
    let g = |id: NodeId| cfg.node(id).clock.granularity;
    let drift = |id: NodeId| cfg.node(id).clock.drift.bound_ppm();
    let one_tick = TickDuration::from_ticks(1);

    // Origin stamp and grandmaster read at sample time.
    let (gm_gran, gm_drift) = match dc.source {
        DomainSource::FiveGsMerged => {
            (cfg.fiveg.gm_clock.granularity, cfg.fiveg.gm_clock.drift.bound_ppm())
        }
        DomainSource::External { .. } => (g(root), drift(root)),
    };
    b.tt_granularity += gm_gran + gm_gran;
    // Consumer ingress stamp and sample-time read.
    b.tt_granularity += g(consumer) + g(consumer);
    // Consumer and grandmaster drift across one sync interval.
    b.drift_accrual += ceil_ppm_over(dc.sync_interval, drift(consumer) + gm_drift);

    let mut path_latency = TickDuration::ZERO;
    let mut prev = root;
    for &li in path_links {
        let link = &cfg.links[li];
        let next = link.other_end(prev);
        match link.kind {
            LinkKind::Wired => {
                let d_fwd = link.delay_from(prev);
                let d_rev = link.delay_from(next);
                let asym = (d_fwd - d_rev).abs();
                let half_asym = TickDuration::from_ticks(asym.ticks() / 2 + asym.ticks() % 2);
                let jitter = link.jitter.width();
                // estimate error (half width) + per-sync transit deviation
                // (full width) + turnaround drift residual
                let turn = ceil_ppm_over(dc.pdelay_turnaround, drift(prev) + drift(next));
                b.wired_link_asymmetry += half_asym + jitter + jitter + turn;
                // peer-delay stamp granularity and final floor
                b.tt_granularity += g(prev) + g(next) + one_tick;
                path_latency += d_fwd + jitter;
            }
            LinkKind::PduSession => {
                let (upf, ue) = if cfg.node(prev).kind == NodeKind::Upf { (prev, next) } else { (next, prev) };
                let bound = |id: NodeId| {
                    cfg.fiveg.node_error_bounds.get(&id).copied().unwrap_or(TickDuration::ZERO)
                };
                let ue_rt_gnb = serving_gnb(cfg, ue);
                let gnb_bound = ue_rt_gnb.map(bound).unwrap_or(TickDuration::ZERO);
                b.gnb_node_error += bound(upf) + gnb_bound;
                b.ref_quantization += cfg.fiveg.ref_time.ref_quantization;
                b.ta_residual +=
                    TickDuration::from_ticks(cfg.fiveg.ref_time.ta_quantization.ticks() / 2);
                // translator stamps
                b.tt_granularity += g(upf) + g(ue);
                // UE 5GS clock drift across a delivery period
                b.drift_accrual += ceil_ppm_over(cfg.fiveg.ref_time.delivery_period, drift(ue));
                path_latency += link.delay_from(upf) + link.jitter.width();
            }
            LinkKind::Radio => {}
        }
        // residence stamps at intermediate forwarding nodes
        if next != consumer && matches!(cfg.node(next).kind, NodeKind::Bridge) {
            b.tt_granularity += g(next) + g(next);
            path_latency += cfg.node(next).residence;
            if let JitterSpec::Uniform { max, .. } = cfg.node(next).residence_jitter {
                path_latency += max;
            }
        }
        prev = next;
    }
    // Grandmaster drift across the in-flight path latency.
    b.drift_accrual += ceil_ppm_over(path_latency, gm_drift);
    b
}

fn serving_gnb(cfg: &ScenarioConfig, ue: NodeId) -> Option<NodeId> {
    cfg.links
        .iter()
        .find(|l| l.kind == LinkKind::Radio && (l.a == ue || l.b == ue))
        .map(|l| l.other_end(ue))
}

// ---------------------------------------------------------------------------
// Failover continuity
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FailoverReport {
    /// No grandmaster failure occurred in the run.
    NotApplicable,
    Evaluated(FailoverContinuity),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FailoverContinuity {
    pub window: (Timestamp, Timestamp),
    /// Largest |offset| sampled inside the failover window.
    pub max_offset_in_window: TickDuration,
    /// Largest |offset| sampled between warm-up and the failure.
    pub steady_state_max: TickDuration,
    /// Any slave's valid flag dropped at or after the failure.
    pub any_invalidation: bool,
    /// Largest gap between consecutive selected-stream updates ending
    /// inside or after the window start.
    pub max_update_gap: TickDuration,
}

/// Examines slave behavior across `[failure, failure + 2 * sync_interval]`.
/// Hot-standby runs must show no invalidation and no offset excess over
/// the steady state; cold standby shows an update gap of at least one
/// detection timeout.
pub fn failover_continuity(trace: &Trace, failure: Timestamp, window_len: TickDuration) -> FailoverReport {
    let window = (failure, failure + window_len);
    let mut max_in_window = TickDuration::ZERO;
    let mut steady = TickDuration::ZERO;
    for s in &trace.offset_samples {
        if s.at >= window.0 && s.at <= window.1 && s.offset.abs() > max_in_window {
            max_in_window = s.offset.abs();
        }
        if s.at >= trace.warmup_end && s.at < failure && s.offset.abs() > steady {
            steady = s.offset.abs();
        }
    }
    let any_invalidation = trace.validity.iter().any(|v| !v.valid && v.at >= failure);
    let mut max_gap = TickDuration::ZERO;
    let mut last_update: BTreeMap<(NodeId, u8), Timestamp> = BTreeMap::new();
    for u in &trace.updates {
        if let Some(prev) = last_update.insert((u.node, u.domain), u.at) {
            if u.at >= failure {
                let gap = u.at - prev;
                if gap > max_gap {
                    max_gap = gap;
                }
            }
        }
    }
    // Streams that never recovered: count the gap to the end of the run.
    for ((_, _), &last) in &last_update {
        if last < trace.t_end {
            let gap = trace.t_end - last;
            if last >= failure || gap > window_len {
                if gap > max_gap {
                    max_gap = gap;
                }
            }
        }
    }
    FailoverReport::Evaluated(FailoverContinuity {
        window,
        max_offset_in_window: max_in_window,
        steady_state_max: steady,
        any_invalidation,
        max_update_gap: max_gap,
    })
}

/// Largest instantaneous spread between any two UEs' 5GS clock errors,
/// over all sample instants in the window.
pub fn max_relative_ue_difference(trace: &Trace) -> Option<TickDuration> {
    let mut by_time: BTreeMap<Timestamp, (i64, i64)> = BTreeMap::new();
    for s in &trace.ue_samples {
        if s.at < trace.warmup_end {
            continue;
        }
        let entry = by_time.entry(s.at).or_insert((i64::MAX, i64::MIN));
        entry.0 = entry.0.min(s.est_offset.ticks());
        entry.1 = entry.1.max(s.est_offset.ticks());
    }
    by_time
        .values()
        .filter(|(lo, hi)| hi >= lo)
        .map(|(lo, hi)| TickDuration::from_ticks(hi - lo))
        .max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simcore::{BudgetObservations, Counters, OffsetSample, Trace};

    fn empty_trace() -> Trace {
        Trace {
            scenario: "t".into(),
            seed: 0,
            t_end: Timestamp::from_secs(10),
            warmup_end: Timestamp::from_millis(250),
            offset_samples: Vec::new(),
            ue_samples: Vec::new(),
            deliveries: Vec::new(),
            updates: Vec::new(),
            validity: Vec::new(),
            final_states: BTreeMap::new(),
            counters: Counters::default(),
            budget: BudgetObservations::default(),
        }
    }

    fn trace_with_offsets(per_device_ns: &[(u32, i64)]) -> Trace {
        let mut t = empty_trace();
        for &(node, ns) in per_device_ns {
            t.offset_samples.push(OffsetSample {
                at: Timestamp::from_secs(1),
                node: NodeId(node),
                domain: 0,
                offset: TickDuration::from_nanos(ns),
            });
        }
        t
    }

    #[test]
    fn report_ignores_warmup_samples() {
        let mut t = trace_with_offsets(&[(0, 500)]);
        t.offset_samples.push(OffsetSample {
            at: Timestamp::from_millis(100), // inside warm-up
            node: NodeId(0),
            domain: 0,
            offset: TickDuration::from_micros(99),
        });
        let r = synchronicity_report(&t);
        assert_eq!(r.devices.len(), 1);
        assert_eq!(r.devices[0].max_abs, TickDuration::from_nanos(500));
    }

    #[test]
    fn zero_noise_report_is_all_zero() {
        let t = trace_with_offsets(&[(0, 0), (1, 0)]);
        let r = synchronicity_report(&t);
        assert!(r.devices.iter().all(|d| d.max_abs == TickDuration::ZERO));
        assert!(r.devices.iter().all(|d| d.mean_abs == Rational::from_integer(0)));
    }

    #[test]
    fn compliance_class1_examples() {
        let pass = synchronicity_report(&trace_with_offsets(&[(0, 900), (1, 900)]));
        assert!(evaluate_compliance(&pass, 1).passed());
        let fail = synchronicity_report(&trace_with_offsets(&[(0, 900), (1, 1200)]));
        assert_eq!(evaluate_compliance(&fail, 1).outcome, ComplianceOutcome::Fail);
    }

    #[test]
    fn compliance_class2_ten_devices_at_9us_pass() {
        let devices: Vec<(u32, i64)> = (0..10).map(|i| (i, 9_000)).collect();
        let r = synchronicity_report(&trace_with_offsets(&devices));
        let v = evaluate_compliance(&r, 2);
        assert_eq!(v.threshold, TickDuration::from_micros(10));
        assert_eq!(v.device_count, 10);
        assert!(v.passed());
        // an eleventh device breaks the class-2 population limit
        let devices11: Vec<(u32, i64)> = (0..11).map(|i| (i, 9_000)).collect();
        let r11 = synchronicity_report(&trace_with_offsets(&devices11));
        assert_eq!(evaluate_compliance(&r11, 2).outcome, ComplianceOutcome::Fail);
    }

    #[test]
    fn compliance_without_devices_is_not_applicable() {
        let r = synchronicity_report(&empty_trace());
        assert_eq!(evaluate_compliance(&r, 1).outcome, ComplianceOutcome::NotApplicable);
    }

    #[test]
    fn compliance_is_monotone_in_offsets() {
        // lowering any device's max never flips pass into fail
        let base: Vec<(u32, i64)> = vec![(0, 950), (1, 700)];
        let lowered: Vec<(u32, i64)> = vec![(0, 200), (1, 700)];
        let vb = evaluate_compliance(&synchronicity_report(&trace_with_offsets(&base)), 1);
        let vl = evaluate_compliance(&synchronicity_report(&trace_with_offsets(&lowered)), 1);
        if vb.passed() {
            assert!(vl.passed());
        }
    }

    #[test]
    fn failover_not_applicable_handled_by_caller_contract() {
        let t = empty_trace();
        let rep = failover_continuity(&t, Timestamp::from_secs(5), TickDuration::from_millis(250));
        match rep {
            FailoverReport::Evaluated(c) => {
                assert_eq!(c.max_offset_in_window, TickDuration::ZERO);
                assert!(!c.any_invalidation);
            }
            FailoverReport::NotApplicable => panic!("explicit window given"),
        }
    }

    #[test]
    fn relative_ue_difference_spreads_per_instant() {
        use crate::simcore::UeSample;
        let mut t = empty_trace();
        for (node, est) in [(0u32, 10i64), (1, -20)] {
            t.ue_samples.push(UeSample {
                at: Timestamp::from_secs(1),
                node: NodeId(node),
                est_offset: TickDuration::from_nanos(est),
            });
        }
        for (node, est) in [(0u32, 5i64), (1, 6)] {
            t.ue_samples.push(UeSample {
                at: Timestamp::from_secs(2),
                node: NodeId(node),
                est_offset: TickDuration::from_nanos(est),
            });
        }
        assert_eq!(max_relative_ue_difference(&t), Some(TickDuration::from_nanos(30)));
    }
}
