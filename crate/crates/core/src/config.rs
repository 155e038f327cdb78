//! Scenario ingestion and validation.
//!
//! Scenarios are single JSON documents. Every duration is a suffixed
//! string (`"125ms"`, `"32ns"`, `"1tick"`) normalized to ticks at parse
//! time; mixing bare numbers and implicit units is rejected so a scenario
//! can never be silently misread. Parsing either yields a fully validated
//! [`ScenarioConfig`] with every default made explicit, or the complete
//! list of validation errors.

use crate::fiveg::{
    DeliveryKind, NpnContext, RadioRefTimeConfig, DEFAULT_NODE_ERROR_BOUND_NS,
    MIN_TA_QUANTIZATION,
};
use crate::gptp::{
    DomainClass, DomainId, GmCandidate, NodeId, MAX_DOMAIN_NUMBER, MAX_WORKING_DOMAINS_PER_NPN,
};
use crate::timebase::{
    rational_from_decimal_str, rational_from_f64, rational_to_decimal_string, Rational,
    TickDuration, Timestamp, TICKS_PER_MS, TICKS_PER_NS, TICKS_PER_SEC, TICKS_PER_US,
};
use num::{Signed, Zero};
use serde::Deserialize;
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

// ---------------------------------------------------------------------------
// Validated configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum NodeKind {
    EndStation,
    Bridge,
    Upf,
    Gnb,
    Ue,
}

impl NodeKind {
    fn as_str(self) -> &'static str {
        match self {
            NodeKind::EndStation => "end_station",
            NodeKind::Bridge => "bridge",
            NodeKind::Upf => "upf",
            NodeKind::Gnb => "gnb",
            NodeKind::Ue => "ue",
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum DriftSpec {
    /// Fixed drift in ppm.
    Constant(Rational),
    /// Drift drawn once per run, uniform in [-bound, +bound] ppm at
    /// micro-ppm resolution.
    UniformPpm(Rational),
}

impl DriftSpec {
    /// Worst-case |drift| in ppm, for budget bounds.
    pub fn bound_ppm(&self) -> Rational {
        match self {
            DriftSpec::Constant(v) => v.abs(),
            DriftSpec::UniformPpm(b) => b.abs(),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ClockCfg {
    pub offset: TickDuration,
    pub drift: DriftSpec,
    pub granularity: TickDuration,
}

impl ClockCfg {
    pub fn ideal() -> Self {
        Self {
            offset: TickDuration::ZERO,
            drift: DriftSpec::Constant(Rational::zero()),
            granularity: TickDuration::from_ticks(1),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum JitterSpec {
    None,
    Uniform { min: TickDuration, max: TickDuration },
}

impl JitterSpec {
    pub fn width(&self) -> TickDuration {
        match self {
            JitterSpec::None => TickDuration::ZERO,
            JitterSpec::Uniform { min, max } => *max - *min,
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct NodeCfg {
    pub name: String,
    pub kind: NodeKind,
    pub clock: ClockCfg,
    /// Hold time between Sync ingress and egress for forwarding nodes.
    pub residence: TickDuration,
    pub residence_jitter: JitterSpec,
    /// Domains whose timing this node consumes; `None` tracks all.
    pub track_domains: Option<BTreeSet<u8>>,
    /// For UEs: consume corrected PDUs directly as an end device.
    pub is_end_station: bool,
}

pub const DEFAULT_GRANULARITY_NS: i64 = 8;
pub const DEFAULT_BRIDGE_RESIDENCE: TickDuration = TickDuration::from_micros(500);

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LinkKind {
    Wired,
    Radio,
    PduSession,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LinkCfg {
    pub a: NodeId,
    pub b: NodeId,
    pub kind: LinkKind,
    pub delay_ab: TickDuration,
    pub delay_ba: TickDuration,
    pub jitter: JitterSpec,
    /// Stable substream key, independent of list order.
    pub rng_key: String,
}

impl LinkCfg {
    pub fn other_end(&self, n: NodeId) -> NodeId {
        if self.a == n {
            self.b
        } else {
            self.a
        }
    }

    pub fn delay_from(&self, from: NodeId) -> TickDuration {
        if from == self.a {
            self.delay_ab
        } else {
            self.delay_ba
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum DomainSource {
    External { candidates: Vec<GmCandidate>, cold_standby: BTreeSet<NodeId> },
    FiveGsMerged,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct DomainCfg {
    pub id: DomainId,
    pub sync_interval: TickDuration,
    pub pdelay_interval: TickDuration,
    pub pdelay_turnaround: TickDuration,
    pub estimate_rate_ratio: bool,
    /// Missed sync intervals before a slave declares its grandmaster
    /// failed and re-elects.
    pub missed_sync_threshold: u32,
    pub source: DomainSource,
}

pub const DEFAULT_SYNC_INTERVAL: TickDuration = TickDuration::from_millis(125);
pub const DEFAULT_PDELAY_INTERVAL: TickDuration = TickDuration::from_secs(1);
pub const DEFAULT_PDELAY_TURNAROUND: TickDuration = TickDuration::from_micros(100);
pub const DEFAULT_MISSED_SYNC_THRESHOLD: u32 = 3;

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FivegCfg {
    pub gm_clock: ClockCfg,
    pub ref_time: RadioRefTimeConfig,
    /// Deviation bound of each transport-synchronized node (UPF, gNB).
    pub node_error_bounds: BTreeMap<NodeId, TickDuration>,
    pub npns: Vec<NpnContext>,
}

pub const DEFAULT_REF_QUANTIZATION_NS: i64 = 10;
pub const DEFAULT_DELIVERY_PERIOD: TickDuration = TickDuration::from_secs(1);
pub const DEFAULT_PDU_SESSION_MIN: TickDuration = TickDuration::from_millis(1);
pub const DEFAULT_PDU_SESSION_MAX: TickDuration = TickDuration::from_millis(10);

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FaultKind {
    Fail,
    Recover,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FaultDirective {
    pub node: NodeId,
    pub at: Timestamp,
    pub kind: FaultKind,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RunCfg {
    pub duration: Timestamp,
    pub seed: u64,
    /// Samples before this true time are excluded from reports.
    pub warmup: TickDuration,
    pub sampling_period: TickDuration,
    pub faults: Vec<FaultDirective>,
    pub compliance_class: Option<u8>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct OutputCfg {
    pub dir: String,
    pub csv: bool,
    pub json: bool,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct OverheadCfg {
    pub user_payload_bytes: u64,
    pub user_period: TickDuration,
    pub gptp_msgs_per_interval: u64,
    pub gptp_payload_bytes: u64,
    pub gptp_interval: TickDuration,
}

/// A fully validated scenario, every default made explicit. Node ids are
/// indices into `nodes`, which is sorted by name.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ScenarioConfig {
    pub name: String,
    pub nodes: Vec<NodeCfg>,
    pub links: Vec<LinkCfg>,
    pub domains: Vec<DomainCfg>,
    pub fiveg: FivegCfg,
    pub run: RunCfg,
    pub output: OutputCfg,
    pub overhead: Option<OverheadCfg>,
}

impl ScenarioConfig {
    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.nodes
            .binary_search_by(|n| n.name.as_str().cmp(name))
            .ok()
            .map(|i| NodeId(i as u32))
    }

    pub fn node(&self, id: NodeId) -> &NodeCfg {
        &self.nodes[id.0 as usize]
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.nodes[id.0 as usize].name
    }

    /// NPN owning this node, if any.
    pub fn npn_of(&self, id: NodeId) -> Option<&NpnContext> {
        self.fiveg.npns.iter().find(|n| n.ues.contains(&id) || n.upfs.contains(&id))
    }
}

// ---------------------------------------------------------------------------
// Durations
// ---------------------------------------------------------------------------

/// Parses a suffixed duration such as `"125ms"`, `"-50ns"`, `"0.5us"` or
/// `"1tick"` into an exact tick count.
pub fn parse_duration(s: &str) -> Result<TickDuration, String> {
    let s = s.trim();
    let (num_part, unit_ticks) = if let Some(p) = s.strip_suffix("ticks") {
        (p, 1i128)
    } else if let Some(p) = s.strip_suffix("tick") {
        (p, 1i128)
    } else if let Some(p) = s.strip_suffix("ns") {
        (p, TICKS_PER_NS as i128)
    } else if let Some(p) = s.strip_suffix("us") {
        (p, TICKS_PER_US as i128)
    } else if let Some(p) = s.strip_suffix("µs") {
        (p, TICKS_PER_US as i128)
    } else if let Some(p) = s.strip_suffix("ms") {
        (p, TICKS_PER_MS as i128)
    } else if let Some(p) = s.strip_suffix('s') {
        (p, TICKS_PER_SEC as i128)
    } else {
        return Err(format!(
            "duration '{s}' needs an explicit unit suffix (ticks, ns, us, ms, s)"
        ));
    };
    let value = rational_from_decimal_str(num_part)
        .map_err(|e| format!("duration '{s}': {e}"))?;
    let ticks = value * Rational::from_integer(unit_ticks);
    if !ticks.is_integer() {
        return Err(format!("duration '{s}' is not a whole number of ticks (2^-16 ns)"));
    }
    let t = i64::try_from(ticks.to_integer()).map_err(|_| format!("duration '{s}' out of range"))?;
    Ok(TickDuration::from_ticks(t))
}

/// Canonical rendering: largest unit that divides the value exactly.
pub fn render_duration(t: TickDuration) -> String {
    let ticks = t.ticks();
    for (per, suffix) in [
        (TICKS_PER_SEC, "s"),
        (TICKS_PER_MS, "ms"),
        (TICKS_PER_US, "us"),
        (TICKS_PER_NS, "ns"),
    ] {
        if ticks % per == 0 {
            return format!("{}{}", ticks / per, suffix);
        }
    }
    format!("{ticks}ticks")
}

// ---------------------------------------------------------------------------
// Raw schema
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    topology: RawTopology,
    #[serde(default)]
    domains: Vec<RawDomain>,
    fiveg: Option<RawFiveg>,
    scenario: Option<RawScenario>,
    output: Option<RawOutput>,
    overhead: Option<RawOverhead>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTopology {
    nodes: Vec<RawNode>,
    #[serde(default)]
    links: Vec<RawLink>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: String,
    kind: String,
    clock: Option<RawClock>,
    residence: Option<String>,
    residence_jitter: Option<RawJitter>,
    track_domains: Option<Vec<u8>>,
    is_end_station: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClock {
    offset: Option<String>,
    drift_ppm: Option<RawDrift>,
    granularity: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawDrift {
    Constant(f64),
    Uniform { uniform_ppm: f64 },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    a: String,
    b: String,
    kind: Option<String>,
    delay: Option<String>,
    delay_reverse: Option<String>,
    jitter: Option<RawJitter>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJitter {
    min: String,
    max: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    number: u8,
    class: Option<String>,
    sync_interval: Option<String>,
    pdelay_interval: Option<String>,
    pdelay_turnaround: Option<String>,
    estimate_rate_ratio: Option<bool>,
    missed_sync_threshold: Option<u32>,
    gm_candidates: Option<Vec<RawCandidate>>,
    merged_5gs_gm: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCandidate {
    node: String,
    priority1: Option<u8>,
    clock_quality: Option<u8>,
    priority2: Option<u8>,
    standby: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFiveg {
    gm_clock: Option<RawClock>,
    ref_time: Option<RawRefTime>,
    node_error_bound: Option<String>,
    node_error_bounds: Option<BTreeMap<String, String>>,
    pdu_session_delay: Option<RawSessionDelay>,
    #[serde(default)]
    npns: Vec<RawNpn>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRefTime {
    delivery_period: Option<String>,
    ref_quantization: Option<String>,
    ta_quantization: Option<String>,
    delivery_kind: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSessionDelay {
    min: String,
    max: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNpn {
    id: String,
    #[serde(default)]
    ues: Vec<String>,
    #[serde(default)]
    upfs: Vec<String>,
    #[serde(default)]
    domains: Vec<u8>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    duration: Option<String>,
    seed: Option<u64>,
    warmup: Option<String>,
    sampling_period: Option<String>,
    #[serde(default)]
    faults: Vec<RawFault>,
    compliance_class: Option<u8>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFault {
    node: String,
    at: String,
    kind: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<String>,
    formats: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOverhead {
    user_payload_bytes: u64,
    user_period: String,
    gptp_msgs_per_interval: Option<u64>,
    gptp_payload_bytes: Option<u64>,
    gptp_interval: Option<String>,
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config syntax error: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("invalid scenario configuration:\n{}", .0.iter().map(|i| format!("  - {i}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ValidationIssue>),
}

struct Issues(Vec<ValidationIssue>);

impl Issues {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(ValidationIssue { path: path.into(), message: message.into() });
    }
}

// ---------------------------------------------------------------------------
// Parsing and validation
// ---------------------------------------------------------------------------

/// Parses and fully validates a scenario document, reporting every
/// validation problem rather than just the first.
pub fn parse_config(document: &str) -> Result<ScenarioConfig, ConfigError> {
    let raw: RawConfig = serde_json::from_str(document)?;
    compile(raw).map_err(ConfigError::Invalid)
}

fn parse_clock(raw: Option<RawClock>, path: &str, issues: &mut Issues) -> ClockCfg {
    let mut cfg = ClockCfg {
        offset: TickDuration::ZERO,
        drift: DriftSpec::Constant(Rational::zero()),
        granularity: TickDuration::from_nanos(DEFAULT_GRANULARITY_NS),
    };
    let Some(raw) = raw else { return cfg };
    if let Some(o) = raw.offset {
        match parse_duration(&o) {
            Ok(d) => cfg.offset = d,
            Err(e) => issues.push(format!("{path}.offset"), e),
        }
    }
    if let Some(d) = raw.drift_ppm {
        let parsed = match d {
            RawDrift::Constant(v) => rational_from_f64(v).map(DriftSpec::Constant),
            RawDrift::Uniform { uniform_ppm } => rational_from_f64(uniform_ppm).map(DriftSpec::UniformPpm),
        };
        match parsed {
            Ok(spec) => {
                if spec.bound_ppm() > Rational::from_integer(1000) {
                    issues.push(format!("{path}.drift_ppm"), "|drift| must be at most 1000 ppm");
                } else {
                    cfg.drift = spec;
                }
            }
            Err(e) => issues.push(format!("{path}.drift_ppm"), e),
        }
    }
    if let Some(g) = raw.granularity {
        match parse_duration(&g) {
            Ok(d) if d.ticks() >= 1 => cfg.granularity = d,
            Ok(_) => issues.push(format!("{path}.granularity"), "granularity must be at least 1 tick"),
            Err(e) => issues.push(format!("{path}.granularity"), e),
        }
    }
    cfg
}

fn parse_jitter(raw: Option<RawJitter>, path: &str, issues: &mut Issues) -> JitterSpec {
    let Some(raw) = raw else { return JitterSpec::None };
    let min = parse_duration(&raw.min);
    let max = parse_duration(&raw.max);
    match (min, max) {
        (Ok(min), Ok(max)) => {
            if min > max {
                issues.push(path.to_string(), "jitter min exceeds max");
                JitterSpec::None
            } else {
                JitterSpec::Uniform { min, max }
            }
        }
        (a, b) => {
            if let Err(e) = a {
                issues.push(format!("{path}.min"), e);
            }
            if let Err(e) = b {
                issues.push(format!("{path}.max"), e);
            }
            JitterSpec::None
        }
    }
}

fn compile(raw: RawConfig) -> Result<ScenarioConfig, Vec<ValidationIssue>> {
    let mut issues = Issues(Vec::new());

    // Nodes, sorted by name so NodeId order is stable.
    let mut raw_nodes = raw.topology.nodes;
    raw_nodes.sort_by(|a, b| a.id.cmp(&b.id));
    for w in raw_nodes.windows(2) {
        if w[0].id == w[1].id {
            issues.push("topology.nodes", format!("duplicate node id '{}'", w[0].id));
        }
    }
    let mut nodes = Vec::with_capacity(raw_nodes.len());
    for rn in raw_nodes {
        let path = format!("topology.nodes[{}]", rn.id);
        let kind = match rn.kind.as_str() {
            "end_station" => NodeKind::EndStation,
            "bridge" => NodeKind::Bridge,
            "upf" => NodeKind::Upf,
            "gnb" => NodeKind::Gnb,
            "ue" => NodeKind::Ue,
            other => {
                issues.push(format!("{path}.kind"), format!("unknown node kind '{other}'"));
                NodeKind::EndStation
            }
        };
        let clock = parse_clock(rn.clock, &format!("{path}.clock"), &mut issues);
        let residence = match rn.residence.as_deref() {
            Some(s) => parse_duration(s).unwrap_or_else(|e| {
                issues.push(format!("{path}.residence"), e);
                DEFAULT_BRIDGE_RESIDENCE
            }),
            None => DEFAULT_BRIDGE_RESIDENCE,
        };
        if residence.is_negative() {
            issues.push(format!("{path}.residence"), "residence must be non-negative");
        }
        let residence_jitter =
            parse_jitter(rn.residence_jitter, &format!("{path}.residence_jitter"), &mut issues);
        if let JitterSpec::Uniform { min, .. } = residence_jitter {
            if (residence + min).is_negative() {
                issues.push(format!("{path}.residence_jitter"), "residence plus jitter may go negative");
            }
        }
        nodes.push(NodeCfg {
            name: rn.id,
            kind,
            clock,
            residence,
            residence_jitter,
            track_domains: rn.track_domains.map(|v| v.into_iter().collect()),
            is_end_station: rn.is_end_station.unwrap_or(false),
        });
    }

    let node_id = |name: &str| -> Option<NodeId> {
        nodes
            .binary_search_by(|n: &NodeCfg| n.name.as_str().cmp(name))
            .ok()
            .map(|i| NodeId(i as u32))
    };
    let resolve = |name: &str, path: &str, issues: &mut Issues| -> Option<NodeId> {
        let id = node_id(name);
        if id.is_none() {
            issues.push(path.to_string(), format!("unknown node '{name}'"));
        }
        id
    };

    // Default user-plane transit for pdu_session links that omit a delay.
    let (session_min, session_max) = match raw.fiveg.as_ref().and_then(|f| f.pdu_session_delay.as_ref()) {
        Some(d) => {
            let min = parse_duration(&d.min).unwrap_or_else(|e| {
                issues.push("fiveg.pdu_session_delay.min", e);
                DEFAULT_PDU_SESSION_MIN
            });
            let max = parse_duration(&d.max).unwrap_or_else(|e| {
                issues.push("fiveg.pdu_session_delay.max", e);
                DEFAULT_PDU_SESSION_MAX
            });
            (min, max)
        }
        None => (DEFAULT_PDU_SESSION_MIN, DEFAULT_PDU_SESSION_MAX),
    };

    let mut links = Vec::new();
    let mut pair_counts: BTreeMap<(String, String), u32> = BTreeMap::new();
    for (i, rl) in raw.topology.links.into_iter().enumerate() {
        let path = format!("topology.links[{i}]");
        let (Some(a), Some(b)) = (
            resolve(&rl.a, &format!("{path}.a"), &mut issues),
            resolve(&rl.b, &format!("{path}.b"), &mut issues),
        ) else {
            continue;
        };
        if a == b {
            issues.push(path.clone(), "link endpoints must differ");
            continue;
        }
        let kind = match rl.kind.as_deref().unwrap_or("wired") {
            "wired" => LinkKind::Wired,
            "radio" => LinkKind::Radio,
            "pdu_session" => LinkKind::PduSession,
            other => {
                issues.push(format!("{path}.kind"), format!("unknown link kind '{other}'"));
                LinkKind::Wired
            }
        };
        let (delay_ab, jitter) = match (&rl.delay, kind) {
            (Some(s), _) => {
                let d = parse_duration(s).unwrap_or_else(|e| {
                    issues.push(format!("{path}.delay"), e);
                    TickDuration::ZERO
                });
                (d, parse_jitter(rl.jitter, &format!("{path}.jitter"), &mut issues))
            }
            (None, LinkKind::PduSession) => (
                session_min,
                JitterSpec::Uniform { min: TickDuration::ZERO, max: session_max - session_min },
            ),
            (None, _) => {
                issues.push(format!("{path}.delay"), "link delay is required");
                (TickDuration::ZERO, JitterSpec::None)
            }
        };
        let delay_ba = match rl.delay_reverse.as_deref() {
            Some(s) => parse_duration(s).unwrap_or_else(|e| {
                issues.push(format!("{path}.delay_reverse"), e);
                delay_ab
            }),
            None => delay_ab,
        };
        for (d, field) in [(delay_ab, "delay"), (delay_ba, "delay_reverse")] {
            if d.is_negative() {
                issues.push(format!("{path}.{field}"), "delay must be non-negative");
            }
        }
        if let JitterSpec::Uniform { min, .. } = jitter {
            if (delay_ab + min).is_negative() || (delay_ba + min).is_negative() {
                issues.push(format!("{path}.jitter"), "delay plus jitter may go negative");
            }
        }
        // Substream key stable under list reordering: sorted endpoint names
        // plus an ordinal among same-pair links.
        let (lo, hi) = if nodes[a.0 as usize].name <= nodes[b.0 as usize].name {
            (nodes[a.0 as usize].name.clone(), nodes[b.0 as usize].name.clone())
        } else {
            (nodes[b.0 as usize].name.clone(), nodes[a.0 as usize].name.clone())
        };
        let ordinal = pair_counts.entry((lo.clone(), hi.clone())).or_insert(0);
        let rng_key = format!("link:{lo}|{hi}|{ordinal}");
        *ordinal += 1;
        links.push(LinkCfg { a, b, kind, delay_ab, delay_ba, jitter, rng_key });
    }

    // Domains.
    let mut domains = Vec::new();
    let mut seen_numbers = BTreeSet::new();
    for rd in raw.domains {
        let path = format!("domains[{}]", rd.number);
        if rd.number > MAX_DOMAIN_NUMBER {
            issues.push(format!("{path}.number"), format!("domain number must be 0..={MAX_DOMAIN_NUMBER}"));
        }
        if !seen_numbers.insert(rd.number) {
            issues.push(format!("{path}.number"), "duplicate domain number");
        }
        let class = match rd.class.as_deref().unwrap_or("working") {
            "working" => DomainClass::Working,
            "universal" => DomainClass::Universal,
            other => {
                issues.push(format!("{path}.class"), format!("unknown domain class '{other}'"));
                DomainClass::Working
            }
        };
        let mut get = |field: Option<String>, name: &str, default: TickDuration| match field.as_deref() {
            Some(s) => parse_duration(s).unwrap_or_else(|e| {
                issues.push(format!("{path}.{name}"), e);
                default
            }),
            None => default,
        };
        let sync_interval = get(rd.sync_interval, "sync_interval", DEFAULT_SYNC_INTERVAL);
        let pdelay_interval = get(rd.pdelay_interval, "pdelay_interval", DEFAULT_PDELAY_INTERVAL);
        let pdelay_turnaround = get(rd.pdelay_turnaround, "pdelay_turnaround", DEFAULT_PDELAY_TURNAROUND);
        if sync_interval.ticks() <= 0 {
            issues.push(format!("{path}.sync_interval"), "sync interval must be positive");
        }

        let merged = rd.merged_5gs_gm.unwrap_or(false);
        let source = match (merged, rd.gm_candidates) {
            (true, Some(c)) if !c.is_empty() => {
                issues.push(
                    path.clone(),
                    "merged 5GS grandmaster mode conflicts with external GM candidates on the same domain",
                );
                DomainSource::FiveGsMerged
            }
            (true, _) => DomainSource::FiveGsMerged,
            (false, Some(rcands)) if !rcands.is_empty() => {
                let mut candidates = Vec::new();
                let mut cold = BTreeSet::new();
                for rc in rcands {
                    let cpath = format!("{path}.gm_candidates[{}]", rc.node);
                    let Some(id) = resolve(&rc.node, &cpath, &mut issues) else { continue };
                    let standby = rc.standby.as_deref();
                    let is_hot = match standby {
                        Some("hot") => true,
                        Some("cold") => {
                            cold.insert(id);
                            false
                        }
                        None => false,
                        Some(other) => {
                            issues.push(format!("{cpath}.standby"), format!("unknown standby mode '{other}'"));
                            false
                        }
                    };
                    candidates.push(GmCandidate {
                        node: id,
                        priority1: rc.priority1.unwrap_or(128),
                        clock_quality: rc.clock_quality.unwrap_or(128),
                        priority2: rc.priority2.unwrap_or(128),
                        is_hot_standby: is_hot,
                    });
                }
                DomainSource::External { candidates, cold_standby: cold }
            }
            (false, _) => {
                issues.push(path.clone(), "domain needs gm_candidates or merged_5gs_gm: true");
                DomainSource::External { candidates: Vec::new(), cold_standby: BTreeSet::new() }
            }
        };
        domains.push(DomainCfg {
            id: DomainId { number: rd.number, class },
            sync_interval,
            pdelay_interval,
            pdelay_turnaround,
            estimate_rate_ratio: rd.estimate_rate_ratio.unwrap_or(false),
            missed_sync_threshold: rd.missed_sync_threshold.unwrap_or(DEFAULT_MISSED_SYNC_THRESHOLD),
            source,
        });
    }

    // 5G subsystem.
    let default_bound = TickDuration::from_nanos(DEFAULT_NODE_ERROR_BOUND_NS);
    let mut fiveg = FivegCfg {
        gm_clock: ClockCfg::ideal(),
        ref_time: RadioRefTimeConfig {
            delivery_period: DEFAULT_DELIVERY_PERIOD,
            ref_quantization: TickDuration::from_nanos(DEFAULT_REF_QUANTIZATION_NS),
            ta_quantization: MIN_TA_QUANTIZATION,
            delivery_kind: DeliveryKind::Broadcast,
        },
        node_error_bounds: BTreeMap::new(),
        npns: Vec::new(),
    };
    let mut explicit_bound_default = default_bound;
    if let Some(rf) = raw.fiveg {
        fiveg.gm_clock = match rf.gm_clock {
            Some(c) => parse_clock(Some(c), "fiveg.gm_clock", &mut issues),
            None => ClockCfg::ideal(),
        };
        if let Some(rt) = rf.ref_time {
            let mut get = |field: Option<String>, name: &str, default: TickDuration| match field.as_deref() {
                Some(s) => parse_duration(s).unwrap_or_else(|e| {
                    issues.push(format!("fiveg.ref_time.{name}"), e);
                    default
                }),
                None => default,
            };
            fiveg.ref_time.delivery_period = get(rt.delivery_period, "delivery_period", DEFAULT_DELIVERY_PERIOD);
            fiveg.ref_time.ref_quantization = get(
                rt.ref_quantization,
                "ref_quantization",
                TickDuration::from_nanos(DEFAULT_REF_QUANTIZATION_NS),
            );
            fiveg.ref_time.ta_quantization = get(rt.ta_quantization, "ta_quantization", MIN_TA_QUANTIZATION);
            fiveg.ref_time.delivery_kind = match rt.delivery_kind.as_deref().unwrap_or("broadcast") {
                "broadcast" => DeliveryKind::Broadcast,
                "unicast" => DeliveryKind::Unicast,
                other => {
                    issues.push("fiveg.ref_time.delivery_kind", format!("unknown delivery kind '{other}'"));
                    DeliveryKind::Broadcast
                }
            };
            if let Err(e) = fiveg.ref_time.validate() {
                issues.push("fiveg.ref_time", e);
            }
        }
        if let Some(b) = rf.node_error_bound {
            match parse_duration(&b) {
                Ok(d) => explicit_bound_default = d,
                Err(e) => issues.push("fiveg.node_error_bound", e),
            }
        }
        if let Some(map) = rf.node_error_bounds {
            for (name, bound) in map {
                let path = format!("fiveg.node_error_bounds.{name}");
                let Some(id) = resolve(&name, &path, &mut issues) else { continue };
                match parse_duration(&bound) {
                    Ok(d) => {
                        fiveg.node_error_bounds.insert(id, d);
                    }
                    Err(e) => issues.push(path, e),
                }
            }
        }
        for rn in rf.npns {
            let path = format!("fiveg.npns[{}]", rn.id);
            let mut npn = NpnContext {
                id: rn.id,
                ues: BTreeSet::new(),
                upfs: BTreeSet::new(),
                domains: rn.domains.iter().copied().collect(),
            };
            for ue in &rn.ues {
                if let Some(id) = resolve(ue, &format!("{path}.ues"), &mut issues) {
                    npn.ues.insert(id);
                }
            }
            for upf in &rn.upfs {
                if let Some(id) = resolve(upf, &format!("{path}.upfs"), &mut issues) {
                    npn.upfs.insert(id);
                }
            }
            let working: Vec<u8> = npn
                .domains
                .iter()
                .copied()
                .filter(|n| {
                    domains
                        .iter()
                        .find(|d| d.id.number == *n)
                        .map(|d| d.id.class == DomainClass::Working)
                        .unwrap_or(true)
                })
                .collect();
            if working.len() > MAX_WORKING_DOMAINS_PER_NPN {
                issues.push(
                    format!("{path}.domains"),
                    format!(
                        "NPN '{}' claims {} working clock domains; at most {} working clock domains are supported per NPN",
                        npn.id,
                        working.len(),
                        MAX_WORKING_DOMAINS_PER_NPN
                    ),
                );
            }
            fiveg.npns.push(npn);
        }
    }
    // Every UPF and gNB gets an error bound; explicit entries win.
    for (i, n) in nodes.iter().enumerate() {
        if matches!(n.kind, NodeKind::Upf | NodeKind::Gnb) {
            fiveg.node_error_bounds.entry(NodeId(i as u32)).or_insert(explicit_bound_default);
        }
    }

    // Run settings.
    let max_sync = domains.iter().map(|d| d.sync_interval).max().unwrap_or(DEFAULT_SYNC_INTERVAL);
    let mut run = RunCfg {
        duration: Timestamp::from_secs(10),
        seed: 0,
        warmup: max_sync + max_sync,
        sampling_period: TickDuration::from_millis(10),
        faults: Vec::new(),
        compliance_class: None,
    };
    if let Some(rs) = raw.scenario {
        if let Some(d) = rs.duration.as_deref() {
            match parse_duration(d) {
                Ok(v) if v.ticks() > 0 => run.duration = Timestamp::ZERO + v,
                Ok(_) => issues.push("scenario.duration", "duration must be positive"),
                Err(e) => issues.push("scenario.duration", e),
            }
        }
        if let Some(s) = rs.seed {
            run.seed = s;
        }
        if let Some(w) = rs.warmup.as_deref() {
            match parse_duration(w) {
                Ok(v) if !v.is_negative() => run.warmup = v,
                Ok(_) => issues.push("scenario.warmup", "warmup must be non-negative"),
                Err(e) => issues.push("scenario.warmup", e),
            }
        }
        if let Some(p) = rs.sampling_period.as_deref() {
            match parse_duration(p) {
                Ok(v) if v.ticks() > 0 => run.sampling_period = v,
                Ok(_) => issues.push("scenario.sampling_period", "sampling period must be positive"),
                Err(e) => issues.push("scenario.sampling_period", e),
            }
        }
        if let Some(c) = rs.compliance_class {
            if (1..=3).contains(&c) {
                run.compliance_class = Some(c);
            } else {
                issues.push("scenario.compliance_class", "compliance class must be 1, 2 or 3");
            }
        }
        let mut seen_faults = BTreeSet::new();
        for (i, rfault) in rs.faults.into_iter().enumerate() {
            let path = format!("scenario.faults[{i}]");
            let Some(id) = resolve(&rfault.node, &path, &mut issues) else { continue };
            let at = match parse_duration(&rfault.at) {
                Ok(v) if !v.is_negative() => Timestamp::ZERO + v,
                Ok(_) => {
                    issues.push(format!("{path}.at"), "fault time must be non-negative");
                    continue;
                }
                Err(e) => {
                    issues.push(format!("{path}.at"), e);
                    continue;
                }
            };
            let kind = match rfault.kind.as_str() {
                "fail" => FaultKind::Fail,
                "recover" => FaultKind::Recover,
                other => {
                    issues.push(format!("{path}.kind"), format!("unknown fault kind '{other}'"));
                    continue;
                }
            };
            if !seen_faults.insert((id, at, rfault.kind.clone())) {
                issues.push(path, "duplicate fault directive");
                continue;
            }
            run.faults.push(FaultDirective { node: id, at, kind });
        }
    }

    let output = match raw.output {
        Some(ro) => {
            let mut csv = true;
            let mut json = true;
            if let Some(formats) = ro.formats {
                csv = formats.iter().any(|f| f == "csv");
                json = formats.iter().any(|f| f == "json");
                for f in &formats {
                    if f != "csv" && f != "json" {
                        issues.push("output.formats", format!("unknown format '{f}'"));
                    }
                }
            }
            OutputCfg { dir: ro.dir.unwrap_or_else(|| "out".into()), csv, json }
        }
        None => OutputCfg { dir: "out".into(), csv: true, json: true },
    };

    let overhead = raw.overhead.map(|ro| {
        let user_period = parse_duration(&ro.user_period).unwrap_or_else(|e| {
            issues.push("overhead.user_period", e);
            TickDuration::from_micros(500)
        });
        let gptp_interval = match ro.gptp_interval.as_deref() {
            Some(s) => parse_duration(s).unwrap_or_else(|e| {
                issues.push("overhead.gptp_interval", e);
                DEFAULT_SYNC_INTERVAL
            }),
            None => DEFAULT_SYNC_INTERVAL,
        };
        OverheadCfg {
            user_payload_bytes: ro.user_payload_bytes,
            user_period,
            gptp_msgs_per_interval: ro.gptp_msgs_per_interval.unwrap_or(2),
            gptp_payload_bytes: ro.gptp_payload_bytes.unwrap_or(50),
            gptp_interval,
        }
    });

    let cfg = ScenarioConfig {
        name: raw.name.unwrap_or_else(|| "scenario".into()),
        nodes,
        links,
        domains,
        fiveg,
        run,
        output,
        overhead,
    };
    validate_structure(&cfg, &mut issues);

    if issues.0.is_empty() {
        Ok(cfg)
    } else {
        Err(issues.0)
    }
}

/// Structural checks that need the whole compiled picture.
fn validate_structure(cfg: &ScenarioConfig, issues: &mut Issues) {
    let n = cfg.nodes.len();

    // Per-UE structural rules: at most one session and one radio link,
    // and both present together.
    let mut session_count = vec![0u32; n];
    let mut radio_count = vec![0u32; n];
    let mut wired_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut all_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for l in &cfg.links {
        let (a, b) = (l.a.0 as usize, l.b.0 as usize);
        match l.kind {
            LinkKind::Wired => {
                wired_adj[a].push(b);
                wired_adj[b].push(a);
                all_adj[a].push(b);
                all_adj[b].push(a);
                for (end, name) in [(l.a, &cfg.nodes[a].name), (l.b, &cfg.nodes[b].name)] {
                    if cfg.node(end).kind == NodeKind::Gnb {
                        issues.push("topology.links", format!("gNB '{name}' cannot terminate a wired gPTP link"));
                    }
                }
            }
            LinkKind::Radio => {
                let kinds = (cfg.node(l.a).kind, cfg.node(l.b).kind);
                let ue = match kinds {
                    (NodeKind::Gnb, NodeKind::Ue) => l.b,
                    (NodeKind::Ue, NodeKind::Gnb) => l.a,
                    _ => {
                        issues.push("topology.links", "radio links must join a gNB and a UE");
                        continue;
                    }
                };
                radio_count[ue.0 as usize] += 1;
            }
            LinkKind::PduSession => {
                let kinds = (cfg.node(l.a).kind, cfg.node(l.b).kind);
                let ue = match kinds {
                    (NodeKind::Upf, NodeKind::Ue) => l.b,
                    (NodeKind::Ue, NodeKind::Upf) => l.a,
                    _ => {
                        issues.push("topology.links", "pdu_session links must join a UPF and a UE");
                        continue;
                    }
                };
                session_count[ue.0 as usize] += 1;
                all_adj[a].push(b);
                all_adj[b].push(a);
            }
        }
    }
    for (i, node) in cfg.nodes.iter().enumerate() {
        if node.kind == NodeKind::Ue {
            if session_count[i] > 1 {
                issues.push(
                    "topology",
                    format!("UE '{}' has multiple PDU sessions; one virtual bridge per UPF", node.name),
                );
            }
            if session_count[i] == 1 && radio_count[i] == 0 {
                issues.push(
                    "topology",
                    format!("UE '{}' has a PDU session but no radio link for 5GS reference time", node.name),
                );
            }
        }
        if node.kind == NodeKind::Upf {
            let wired_ports = wired_adj[i].len();
            if wired_ports > 1 {
                issues.push(
                    "topology",
                    format!("UPF '{}' has {wired_ports} wired ports; exactly one upstream TSN attachment is supported", node.name),
                );
            }
        }
    }

    // The PDU distribution graph (wired + session) must be loop-free.
    if has_cycle(&all_adj) {
        issues.push("topology.links", "time distribution topology must be loop-free");
    }

    // Grandmaster placement: distributing from a device-side island would
    // need uplink time distribution.
    let wired_comp = components(&wired_adj);
    for d in &cfg.domains {
        let DomainSource::External { candidates, .. } = &d.source else { continue };
        let dpath = format!("domains[{}]", d.id.number);
        for c in candidates {
            let node = cfg.node(c.node);
            if node.kind == NodeKind::Ue {
                issues.push(
                    format!("{dpath}.gm_candidates[{}]", node.name),
                    "grandmaster behind a UE needs uplink time distribution, which is a 5G Release 17 feature and not supported",
                );
                continue;
            }
            if node.kind == NodeKind::Gnb || node.kind == NodeKind::Upf {
                issues.push(
                    format!("{dpath}.gm_candidates[{}]", node.name),
                    "grandmaster candidates must be TSN end stations or bridges",
                );
                continue;
            }
            // Wired island containing the candidate: device-side if it has
            // no UPF but hangs off a UE with a PDU session.
            let comp = wired_comp[c.node.0 as usize];
            let mut island_has_upf = false;
            let mut island_behind_ue = false;
            for (i, nn) in cfg.nodes.iter().enumerate() {
                if wired_comp[i] != comp {
                    continue;
                }
                if nn.kind == NodeKind::Upf {
                    island_has_upf = true;
                }
                if nn.kind == NodeKind::Ue && session_count[i] > 0 {
                    island_behind_ue = true;
                }
            }
            if !island_has_upf && island_behind_ue {
                issues.push(
                    format!("{dpath}.gm_candidates[{}]", node.name),
                    "grandmaster behind a UE needs uplink time distribution, which is a 5G Release 17 feature and not supported",
                );
            }
        }

        // Connectivity: everything that consumes or forwards this domain
        // must be reachable from some candidate over the distribution graph.
        if !candidates.is_empty() {
            let mut reach = vec![false; n];
            let mut stack: Vec<usize> = candidates.iter().map(|c| c.node.0 as usize).collect();
            for &s in &stack {
                reach[s] = true;
            }
            while let Some(v) = stack.pop() {
                for &w in &all_adj[v] {
                    if !reach[w] {
                        reach[w] = true;
                        stack.push(w);
                    }
                }
            }
            for (i, nn) in cfg.nodes.iter().enumerate() {
                let tracks = nn
                    .track_domains
                    .as_ref()
                    .map(|s| s.contains(&d.id.number))
                    .unwrap_or(nn.kind == NodeKind::EndStation || nn.is_end_station);
                if tracks && !reach[i] && nn.kind != NodeKind::Gnb {
                    issues.push(
                        dpath.clone(),
                        format!("node '{}' tracks domain {} but is unreachable from its grandmaster candidates", nn.name, d.id.number),
                    );
                }
            }
        }
    }

    // Merged mode needs a 5G system to source from.
    let any_translator = cfg.nodes.iter().any(|nd| matches!(nd.kind, NodeKind::Upf | NodeKind::Ue));
    for d in &cfg.domains {
        if matches!(d.source, DomainSource::FiveGsMerged) && !any_translator {
            issues.push(
                format!("domains[{}]", d.id.number),
                "merged 5GS grandmaster mode needs at least one UPF or UE translator in the topology",
            );
        }
    }

    // NPN membership sanity: members must have the right kinds.
    for npn in &cfg.fiveg.npns {
        for &ue in &npn.ues {
            if cfg.node(ue).kind != NodeKind::Ue {
                issues.push(
                    format!("fiveg.npns[{}].ues", npn.id),
                    format!("'{}' is not a UE", cfg.node_name(ue)),
                );
            }
        }
        for &upf in &npn.upfs {
            if cfg.node(upf).kind != NodeKind::Upf {
                issues.push(
                    format!("fiveg.npns[{}].upfs", npn.id),
                    format!("'{}' is not a UPF", cfg.node_name(upf)),
                );
            }
        }
        for dnum in &npn.domains {
            if !cfg.domains.iter().any(|d| d.id.number == *dnum) {
                issues.push(
                    format!("fiveg.npns[{}].domains", npn.id),
                    format!("domain {dnum} is not defined"),
                );
            }
        }
    }
}

fn has_cycle(adj: &[Vec<usize>]) -> bool {
    let n = adj.len();
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        // BFS counting edges vs vertices per component.
        let mut verts = 0usize;
        let mut edge_ends = 0usize;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(v) = stack.pop() {
            verts += 1;
            edge_ends += adj[v].len();
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        if edge_ends / 2 >= verts && verts > 0 && edge_ends > 0 {
            return true;
        }
    }
    false
}

fn components(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        comp[start] = next;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if comp[w] == usize::MAX {
                    comp[w] = next;
                    stack.push(w);
                }
            }
        }
        next += 1;
    }
    comp
}

// ---------------------------------------------------------------------------
// Canonical serialization (defaults explicit)
// ---------------------------------------------------------------------------

fn drift_to_json(d: &DriftSpec) -> Value {
    let num = |r: &Rational| -> Value {
        let s = rational_to_decimal_string(*r);
        serde_json::from_str(&s).expect("decimal renders as a JSON number")
    };
    match d {
        DriftSpec::Constant(v) => num(v),
        DriftSpec::UniformPpm(b) => json!({ "uniform_ppm": num(b) }),
    }
}

fn clock_to_json(c: &ClockCfg) -> Value {
    json!({
        "offset": render_duration(c.offset),
        "drift_ppm": drift_to_json(&c.drift),
        "granularity": render_duration(c.granularity),
    })
}

fn jitter_to_json(j: &JitterSpec) -> Option<Value> {
    match j {
        JitterSpec::None => None,
        JitterSpec::Uniform { min, max } => Some(json!({
            "min": render_duration(*min),
            "max": render_duration(*max),
        })),
    }
}

impl ScenarioConfig {
    /// Serializes back to the document schema with every default explicit;
    /// parsing the result yields an equal configuration.
    pub fn to_json_value(&self) -> Value {
        let nodes: Vec<Value> = self
            .nodes
            .iter()
            .map(|n| {
                let mut v = json!({
                    "id": n.name,
                    "kind": n.kind.as_str(),
                    "clock": clock_to_json(&n.clock),
                    "residence": render_duration(n.residence),
                    "is_end_station": n.is_end_station,
                });
                if let Some(j) = jitter_to_json(&n.residence_jitter) {
                    v["residence_jitter"] = j;
                }
                if let Some(t) = &n.track_domains {
                    v["track_domains"] = json!(t.iter().collect::<Vec<_>>());
                }
                v
            })
            .collect();
        let links: Vec<Value> = self
            .links
            .iter()
            .map(|l| {
                let mut v = json!({
                    "a": self.node_name(l.a),
                    "b": self.node_name(l.b),
                    "kind": match l.kind {
                        LinkKind::Wired => "wired",
                        LinkKind::Radio => "radio",
                        LinkKind::PduSession => "pdu_session",
                    },
                    "delay": render_duration(l.delay_ab),
                    "delay_reverse": render_duration(l.delay_ba),
                });
                if let Some(j) = jitter_to_json(&l.jitter) {
                    v["jitter"] = j;
                }
                v
            })
            .collect();
        let domains: Vec<Value> = self
            .domains
            .iter()
            .map(|d| {
                let mut v = json!({
                    "number": d.id.number,
                    "class": match d.id.class { DomainClass::Working => "working", DomainClass::Universal => "universal" },
                    "sync_interval": render_duration(d.sync_interval),
                    "pdelay_interval": render_duration(d.pdelay_interval),
                    "pdelay_turnaround": render_duration(d.pdelay_turnaround),
                    "estimate_rate_ratio": d.estimate_rate_ratio,
                    "missed_sync_threshold": d.missed_sync_threshold,
                });
                match &d.source {
                    DomainSource::FiveGsMerged => {
                        v["merged_5gs_gm"] = json!(true);
                    }
                    DomainSource::External { candidates, cold_standby } => {
                        let cands: Vec<Value> = candidates
                            .iter()
                            .map(|c| {
                                let mut cv = json!({
                                    "node": self.node_name(c.node),
                                    "priority1": c.priority1,
                                    "clock_quality": c.clock_quality,
                                    "priority2": c.priority2,
                                });
                                if c.is_hot_standby {
                                    cv["standby"] = json!("hot");
                                } else if cold_standby.contains(&c.node) {
                                    cv["standby"] = json!("cold");
                                }
                                cv
                            })
                            .collect();
                        v["gm_candidates"] = json!(cands);
                    }
                }
                v
            })
            .collect();
        let bounds: serde_json::Map<String, Value> = self
            .fiveg
            .node_error_bounds
            .iter()
            .map(|(id, b)| (self.node_name(*id).to_string(), json!(render_duration(*b))))
            .collect();
        let npns: Vec<Value> = self
            .fiveg
            .npns
            .iter()
            .map(|n| {
                json!({
                    "id": n.id,
                    "ues": n.ues.iter().map(|u| self.node_name(*u)).collect::<Vec<_>>(),
                    "upfs": n.upfs.iter().map(|u| self.node_name(*u)).collect::<Vec<_>>(),
                    "domains": n.domains.iter().collect::<Vec<_>>(),
                })
            })
            .collect();
        let faults: Vec<Value> = self
            .run
            .faults
            .iter()
            .map(|f| {
                json!({
                    "node": self.node_name(f.node),
                    "at": render_duration(f.at - Timestamp::ZERO),
                    "kind": match f.kind { FaultKind::Fail => "fail", FaultKind::Recover => "recover" },
                })
            })
            .collect();
        let mut formats = Vec::new();
        if self.output.csv {
            formats.push("csv");
        }
        if self.output.json {
            formats.push("json");
        }
        let mut root = json!({
            "name": self.name,
            "topology": { "nodes": nodes, "links": links },
            "domains": domains,
            "fiveg": {
                "gm_clock": clock_to_json(&self.fiveg.gm_clock),
                "ref_time": {
                    "delivery_period": render_duration(self.fiveg.ref_time.delivery_period),
                    "ref_quantization": render_duration(self.fiveg.ref_time.ref_quantization),
                    "ta_quantization": render_duration(self.fiveg.ref_time.ta_quantization),
                    "delivery_kind": match self.fiveg.ref_time.delivery_kind {
                        DeliveryKind::Broadcast => "broadcast",
                        DeliveryKind::Unicast => "unicast",
                    },
                },
                "node_error_bounds": bounds,
                "npns": npns,
            },
            "scenario": {
                "duration": render_duration(self.run.duration - Timestamp::ZERO),
                "seed": self.run.seed,
                "warmup": render_duration(self.run.warmup),
                "sampling_period": render_duration(self.run.sampling_period),
                "faults": faults,
            },
            "output": {
                "dir": self.output.dir,
                "formats": formats,
            },
        });
        if let Some(c) = self.run.compliance_class {
            root["scenario"]["compliance_class"] = json!(c);
        }
        if let Some(o) = &self.overhead {
            root["overhead"] = json!({
                "user_payload_bytes": o.user_payload_bytes,
                "user_period": render_duration(o.user_period),
                "gptp_msgs_per_interval": o.gptp_msgs_per_interval,
                "gptp_payload_bytes": o.gptp_payload_bytes,
                "gptp_interval": render_duration(o.gptp_interval),
            });
        }
        root
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "minimal",
        "topology": {
            "nodes": [
                {"id": "gm", "kind": "end_station"},
                {"id": "es", "kind": "end_station"}
            ],
            "links": [
                {"a": "gm", "b": "es", "delay": "1us"}
            ]
        },
        "domains": [
            {"number": 0, "gm_candidates": [{"node": "gm", "priority1": 1}]}
        ]
    }"#;

    #[test]
    fn duration_suffixes() {
        assert_eq!(parse_duration("125ms"), Ok(TickDuration::from_millis(125)));
        assert_eq!(parse_duration("32ns"), Ok(TickDuration::from_nanos(32)));
        assert_eq!(parse_duration("1us"), Ok(TickDuration::from_micros(1)));
        assert_eq!(parse_duration("0.5us"), Ok(TickDuration::from_nanos(500)));
        assert_eq!(parse_duration("1tick"), Ok(TickDuration::from_ticks(1)));
        assert_eq!(parse_duration("-50ns"), Ok(TickDuration::from_nanos(-50)));
        assert_eq!(parse_duration("60s"), Ok(TickDuration::from_secs(60)));
        assert!(parse_duration("125").is_err());
        assert!(parse_duration("1.00000000001ns").is_err());
    }

    #[test]
    fn duration_rendering_round_trips() {
        for s in ["125ms", "32ns", "1us", "60s", "3ticks"] {
            let d = parse_duration(s).unwrap();
            assert_eq!(render_duration(d), s);
            assert_eq!(parse_duration(&render_duration(d)).unwrap(), d);
        }
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.nodes.len(), 2);
        assert_eq!(cfg.domains[0].sync_interval, DEFAULT_SYNC_INTERVAL);
        assert_eq!(cfg.domains[0].pdelay_interval, DEFAULT_PDELAY_INTERVAL);
        assert_eq!(cfg.domains[0].missed_sync_threshold, 3);
        assert_eq!(cfg.nodes[0].clock.granularity, TickDuration::from_nanos(8));
        assert_eq!(cfg.run.duration, Timestamp::from_secs(10));
        assert_eq!(cfg.run.warmup, TickDuration::from_millis(250));
        assert!(cfg.output.csv && cfg.output.json);
    }

    #[test]
    fn node_ids_sorted_by_name() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.node_name(NodeId(0)), "es");
        assert_eq!(cfg.node_name(NodeId(1)), "gm");
        assert_eq!(cfg.node_id("gm"), Some(NodeId(1)));
    }

    #[test]
    fn round_trips_through_canonical_form() {
        let c1 = parse_config(MINIMAL).unwrap();
        let doc = serde_json::to_string_pretty(&c1.to_json_value()).unwrap();
        let c2 = parse_config(&doc).unwrap();
        assert_eq!(c1, c2);
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_config("{ \"topology\": ").unwrap_err();
        match err {
            ConfigError::Syntax(e) => assert!(e.line() >= 1),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn collects_all_validation_errors() {
        let doc = r#"{
            "topology": {
                "nodes": [{"id": "a", "kind": "nonsense"}],
                "links": [{"a": "a", "b": "missing", "delay": "banana"}]
            },
            "domains": [{"number": 200}]
        }"#;
        match parse_config(doc).unwrap_err() {
            ConfigError::Invalid(issues) => {
                assert!(issues.len() >= 3, "got: {issues:?}");
            }
            other => panic!("expected validation errors, got {other:?}"),
        }
    }

    fn npn_domains_doc(count: u8) -> String {
        let domains: Vec<String> = (0..count)
            .map(|i| format!(r#"{{"number": {i}, "gm_candidates": [{{"node": "gm"}}]}}"#))
            .collect();
        let numbers: Vec<String> = (0..count).map(|i| i.to_string()).collect();
        format!(
            r#"{{
            "topology": {{
                "nodes": [
                    {{"id": "gm", "kind": "end_station"}},
                    {{"id": "upf1", "kind": "upf"}},
                    {{"id": "gnb1", "kind": "gnb"}},
                    {{"id": "ue1", "kind": "ue", "is_end_station": true}}
                ],
                "links": [
                    {{"a": "gm", "b": "upf1", "delay": "1us"}},
                    {{"a": "gnb1", "b": "ue1", "kind": "radio", "delay": "500ns"}},
                    {{"a": "upf1", "b": "ue1", "kind": "pdu_session"}}
                ]
            }},
            "domains": [{domains}],
            "fiveg": {{"npns": [{{"id": "npn-a", "ues": ["ue1"], "upfs": ["upf1"], "domains": [{numbers}]}}]}}
        }}"#,
            domains = domains.join(","),
            numbers = numbers.join(",")
        )
    }

    #[test]
    fn rejects_33_working_domains_per_npn() {
        assert!(parse_config(&npn_domains_doc(32)).is_ok());
        match parse_config(&npn_domains_doc(33)).unwrap_err() {
            ConfigError::Invalid(issues) => {
                assert!(
                    issues.iter().any(|i| i.message.contains("at most 32 working clock domains")),
                    "got: {issues:?}"
                );
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_gm_behind_ue() {
        let doc = r#"{
            "topology": {
                "nodes": [
                    {"id": "upf1", "kind": "upf"},
                    {"id": "gnb1", "kind": "gnb"},
                    {"id": "ue1", "kind": "ue"},
                    {"id": "gm_es", "kind": "end_station"},
                    {"id": "root", "kind": "end_station"}
                ],
                "links": [
                    {"a": "root", "b": "upf1", "delay": "1us"},
                    {"a": "gnb1", "b": "ue1", "kind": "radio", "delay": "500ns"},
                    {"a": "upf1", "b": "ue1", "kind": "pdu_session"},
                    {"a": "ue1", "b": "gm_es", "delay": "1us"}
                ]
            },
            "domains": [{"number": 0, "gm_candidates": [{"node": "gm_es"}]}]
        }"#;
        match parse_config(doc).unwrap_err() {
            ConfigError::Invalid(issues) => {
                assert!(
                    issues.iter().any(|i| i.message.contains("Release 17")),
                    "got: {issues:?}"
                );
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_direct_ue_candidate() {
        let doc = r#"{
            "topology": {
                "nodes": [
                    {"id": "upf1", "kind": "upf"},
                    {"id": "gnb1", "kind": "gnb"},
                    {"id": "ue1", "kind": "ue", "is_end_station": true},
                    {"id": "root", "kind": "end_station"}
                ],
                "links": [
                    {"a": "root", "b": "upf1", "delay": "1us"},
                    {"a": "gnb1", "b": "ue1", "kind": "radio", "delay": "500ns"},
                    {"a": "upf1", "b": "ue1", "kind": "pdu_session"}
                ]
            },
            "domains": [{"number": 0, "gm_candidates": [{"node": "ue1"}]}]
        }"#;
        match parse_config(doc).unwrap_err() {
            ConfigError::Invalid(issues) => {
                assert!(issues.iter().any(|i| i.message.contains("Release 17")), "got: {issues:?}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_small_ta_quantization() {
        let doc = r#"{
            "topology": {"nodes": [{"id": "a", "kind": "end_station"}, {"id": "b", "kind": "end_station"}],
                         "links": [{"a": "a", "b": "b", "delay": "1us"}]},
            "domains": [{"number": 0, "gm_candidates": [{"node": "a"}]}],
            "fiveg": {"ref_time": {"ta_quantization": "31ns"}}
        }"#;
        match parse_config(doc).unwrap_err() {
            ConfigError::Invalid(issues) => {
                assert!(issues.iter().any(|i| i.message.contains("32 ns")), "got: {issues:?}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_merged_mode_conflict() {
        let doc = r#"{
            "topology": {"nodes": [{"id": "a", "kind": "end_station"}, {"id": "b", "kind": "end_station"}],
                         "links": [{"a": "a", "b": "b", "delay": "1us"}]},
            "domains": [{"number": 0, "merged_5gs_gm": true, "gm_candidates": [{"node": "a"}]}]
        }"#;
        match parse_config(doc).unwrap_err() {
            ConfigError::Invalid(issues) => {
                assert!(issues.iter().any(|i| i.message.contains("conflicts")), "got: {issues:?}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_cyclic_topology() {
        let doc = r#"{
            "topology": {
                "nodes": [
                    {"id": "a", "kind": "bridge"}, {"id": "b", "kind": "bridge"}, {"id": "c", "kind": "bridge"},
                    {"id": "gm", "kind": "end_station"}
                ],
                "links": [
                    {"a": "gm", "b": "a", "delay": "1us"},
                    {"a": "a", "b": "b", "delay": "1us"},
                    {"a": "b", "b": "c", "delay": "1us"},
                    {"a": "c", "b": "a", "delay": "1us"}
                ]
            },
            "domains": [{"number": 0, "gm_candidates": [{"node": "gm"}]}]
        }"#;
        match parse_config(doc).unwrap_err() {
            ConfigError::Invalid(issues) => {
                assert!(issues.iter().any(|i| i.message.contains("loop-free")), "got: {issues:?}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_fault_directives() {
        let doc = r#"{
            "topology": {"nodes": [{"id": "a", "kind": "end_station"}, {"id": "b", "kind": "end_station"}],
                         "links": [{"a": "a", "b": "b", "delay": "1us"}]},
            "domains": [{"number": 0, "gm_candidates": [{"node": "a"}]}],
            "scenario": {"faults": [
                {"node": "a", "at": "5s", "kind": "fail"},
                {"node": "a", "at": "5s", "kind": "fail"}
            ]}
        }"#;
        match parse_config(doc).unwrap_err() {
            ConfigError::Invalid(issues) => {
                assert!(issues.iter().any(|i| i.message.contains("duplicate fault")), "got: {issues:?}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }
}
