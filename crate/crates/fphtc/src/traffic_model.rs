//! Domain types for packets, bidirectional TCP flows, and class-of-service
//! labels, plus dataset manipulation (balancing, splitting).

use std::collections::HashMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Idle gap after which an in-progress flow is considered terminated.
pub const FLOW_IDLE_TIMEOUT_SECS: f64 = 600.0;

pub const TCP_FIN: u8 = 0x01;
pub const TCP_SYN: u8 = 0x02;
pub const TCP_RST: u8 = 0x04;
pub const TCP_ACK: u8 = 0x10;

/// The eight application types of the traffic corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AppType {
    Chat,
    Voip,
    Audio,
    Video,
    Ftp,
    Mail,
    P2p,
    Web,
}

pub const ALL_APPS: [AppType; 8] = [
    AppType::Chat,
    AppType::Voip,
    AppType::Audio,
    AppType::Video,
    AppType::Ftp,
    AppType::Mail,
    AppType::P2p,
    AppType::Web,
];

impl AppType {
    pub fn name(self) -> &'static str {
        match self {
            AppType::Chat => "CHAT",
            AppType::Voip => "VOIP",
            AppType::Audio => "AUDIO",
            AppType::Video => "VIDEO",
            AppType::Ftp => "FTP",
            AppType::Mail => "MAIL",
            AppType::P2p => "P2P",
            AppType::Web => "WEB",
        }
    }
}

impl fmt::Display for AppType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AppType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CHAT" => Ok(AppType::Chat),
            "VOIP" => Ok(AppType::Voip),
            "AUDIO" => Ok(AppType::Audio),
            "VIDEO" => Ok(AppType::Video),
            "FTP" => Ok(AppType::Ftp),
            "MAIL" => Ok(AppType::Mail),
            "P2P" => Ok(AppType::P2p),
            "WEB" => Ok(AppType::Web),
            other => Err(Error::InvalidArgument(format!(
                "unknown application type {other:?}"
            ))),
        }
    }
}

/// The three routing treatments, with a stable 0/1/2 encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CoSLabel {
    DelaySensitive,
    DelayModerate,
    DelayTolerant,
}

pub const ALL_COS: [CoSLabel; 3] = [
    CoSLabel::DelaySensitive,
    CoSLabel::DelayModerate,
    CoSLabel::DelayTolerant,
];

pub const N_COS: usize = 3;

impl CoSLabel {
    pub fn encode(self) -> usize {
        match self {
            CoSLabel::DelaySensitive => 0,
            CoSLabel::DelayModerate => 1,
            CoSLabel::DelayTolerant => 2,
        }
    }

    pub fn decode(idx: usize) -> Result<Self> {
        match idx {
            0 => Ok(CoSLabel::DelaySensitive),
            1 => Ok(CoSLabel::DelayModerate),
            2 => Ok(CoSLabel::DelayTolerant),
            other => Err(Error::InvalidArgument(format!(
                "CoS encoding out of range: {other}"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CoSLabel::DelaySensitive => "DELAY_SENSITIVE",
            CoSLabel::DelayModerate => "DELAY_MODERATE",
            CoSLabel::DelayTolerant => "DELAY_TOLERANT",
        }
    }
}

impl fmt::Display for CoSLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CoSLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "DELAY_SENSITIVE" => Ok(CoSLabel::DelaySensitive),
            "DELAY_MODERATE" => Ok(CoSLabel::DelayModerate),
            "DELAY_TOLERANT" => Ok(CoSLabel::DelayTolerant),
            other => Err(Error::InvalidArgument(format!(
                "unknown CoS label {other:?}"
            ))),
        }
    }
}

/// Table mapping each application type to its routing treatment.
pub fn cos_of_app(app: AppType) -> CoSLabel {
    match app {
        AppType::Chat | AppType::Voip => CoSLabel::DelaySensitive,
        AppType::Audio | AppType::Video => CoSLabel::DelayModerate,
        AppType::Ftp | AppType::Mail | AppType::P2p | AppType::Web => CoSLabel::DelayTolerant,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub timestamp: f64,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub payload_len: u32,
    pub tcp_flags: u8,
    pub direction: Option<Direction>,
}

impl Packet {
    /// The packet as seen from the opposite direction.
    pub fn reversed(&self) -> Packet {
        Packet {
            src_ip: self.dst_ip,
            dst_ip: self.src_ip,
            src_port: self.dst_port,
            dst_port: self.src_port,
            ..*self
        }
    }
}

/// Canonical bidirectional 5-tuple: the (ip, port) endpoint pair ordered so
/// both directions of a conversation share one key. Protocol is always TCP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub ip_a: Ipv4Addr,
    pub port_a: u16,
    pub ip_b: Ipv4Addr,
    pub port_b: u16,
}

pub fn canonical_flow_key(p: &Packet) -> FlowKey {
    let src = (p.src_ip, p.src_port);
    let dst = (p.dst_ip, p.dst_port);
    let (a, b) = if src <= dst { (src, dst) } else { (dst, src) };
    FlowKey {
        ip_a: a.0,
        port_a: a.1,
        ip_b: b.0,
        port_b: b.1,
    }
}

/// A bidirectional TCP conversation: time-ordered packets plus optional
/// ground-truth and teacher-predicted labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub key: FlowKey,
    pub packets: Vec<Packet>,
    pub true_app: Option<AppType>,
    pub teacher_label: Option<CoSLabel>,
}

impl Flow {
    pub fn total_payload(&self) -> u64 {
        self.packets.iter().map(|p| p.payload_len as u64).sum()
    }

    pub fn label(&self, kind: LabelKind) -> Option<CoSLabel> {
        match kind {
            LabelKind::Truth => self.true_app.map(cos_of_app),
            LabelKind::TeacherPredicted => self.teacher_label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelKind {
    Truth,
    TeacherPredicted,
}

#[derive(Debug, Clone)]
pub struct FlowDataset {
    pub flows: Vec<Flow>,
    pub label_kind: LabelKind,
}

impl FlowDataset {
    pub fn new(flows: Vec<Flow>, label_kind: LabelKind) -> Result<Self> {
        if flows.iter().any(|f| f.label(label_kind).is_none()) {
            return Err(Error::MissingLabel);
        }
        Ok(FlowDataset { flows, label_kind })
    }

    pub fn labels(&self) -> Vec<CoSLabel> {
        self.flows
            .iter()
            .map(|f| f.label(self.label_kind).expect("checked at construction"))
            .collect()
    }
}

/// Output of [`assemble_flows`] with exact packet accounting.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub flows: Vec<Flow>,
    /// Flows removed because every packet carried zero payload.
    pub dropped_flows: usize,
    /// Packets inside those dropped flows.
    pub dropped_packets: usize,
}

/// Group packets into bidirectional flows. Direction is Forward iff the
/// packet's source endpoint equals the endpoint that sent the flow's first
/// packet. A flow terminates at FIN/RST or after a 600 s idle gap; later
/// packets on the same 5-tuple start a new flow. Flows whose total payload is
/// zero are dropped (and accounted).
pub fn assemble_flows(packets: &[Packet]) -> Assembly {
    let mut order: Vec<usize> = (0..packets.len()).collect();
    order.sort_by(|&i, &j| {
        packets[i]
            .timestamp
            .partial_cmp(&packets[j].timestamp)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });

    struct InProgress {
        flow: Flow,
        initiator: (Ipv4Addr, u16),
        last_ts: f64,
        closed: bool,
    }

    let mut active: HashMap<FlowKey, usize> = HashMap::new();
    let mut all: Vec<InProgress> = Vec::new();

    for &i in &order {
        let p = &packets[i];
        let key = canonical_flow_key(p);
        let slot = match active.get(&key) {
            Some(&s)
                if !all[s].closed && p.timestamp - all[s].last_ts <= FLOW_IDLE_TIMEOUT_SECS =>
            {
                Some(s)
            }
            _ => None,
        };
        let s = match slot {
            Some(s) => s,
            None => {
                all.push(InProgress {
                    flow: Flow {
                        key,
                        packets: Vec::new(),
                        true_app: None,
                        teacher_label: None,
                    },
                    initiator: (p.src_ip, p.src_port),
                    last_ts: p.timestamp,
                    closed: false,
                });
                let s = all.len() - 1;
                active.insert(key, s);
                s
            }
        };
        let entry = &mut all[s];
        let direction = if (p.src_ip, p.src_port) == entry.initiator {
            Direction::Forward
        } else {
            Direction::Backward
        };
        entry.flow.packets.push(Packet {
            direction: Some(direction),
            ..*p
        });
        entry.last_ts = p.timestamp;
        if p.tcp_flags & (TCP_FIN | TCP_RST) != 0 {
            entry.closed = true;
        }
    }

    let mut flows = Vec::new();
    let mut dropped_flows = 0;
    let mut dropped_packets = 0;
    for e in all {
        if e.flow.total_payload() == 0 {
            dropped_flows += 1;
            dropped_packets += e.flow.packets.len();
        } else {
            flows.push(e.flow);
        }
    }
    Assembly {
        flows,
        dropped_flows,
        dropped_packets,
    }
}

/// Equalize class counts by upsampling minority classes with replacement up
/// to the majority count. Deterministic per seed.
pub fn balance_dataset(ds: &FlowDataset, seed: u64) -> Result<FlowDataset> {
    let labels = ds.labels();
    let mut by_class: [Vec<usize>; N_COS] = Default::default();
    for (i, l) in labels.iter().enumerate() {
        by_class[l.encode()].push(i);
    }
    for (c, idxs) in by_class.iter().enumerate() {
        if idxs.is_empty() {
            return Err(Error::EmptyClass(ALL_COS[c].name().to_string()));
        }
    }
    let target = by_class.iter().map(|v| v.len()).max().unwrap();
    let mut rng = crate::rng::seeded(seed, 0x62616c);
    let mut flows = Vec::with_capacity(target * N_COS);
    for idxs in &by_class {
        for &i in idxs {
            flows.push(ds.flows[i].clone());
        }
        for _ in idxs.len()..target {
            let i = idxs[rng.random_range(0..idxs.len())];
            flows.push(ds.flows[i].clone());
        }
    }
    Ok(FlowDataset {
        flows,
        label_kind: ds.label_kind,
    })
}

/// Seeded shuffle-and-partition. The test half receives
/// `round(test_fraction * |ds|)` flows.
pub fn split_dataset(
    ds: &FlowDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(FlowDataset, FlowDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must be in (0,1), got {test_fraction}"
        )));
    }
    if ds.flows.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 flows to split".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..ds.flows.len()).collect();
    let mut rng = crate::rng::seeded(seed, 0x73706c69);
    idx.shuffle(&mut rng);
    let n_test = (test_fraction * ds.flows.len() as f64).round() as usize;
    let (test_idx, train_idx) = idx.split_at(n_test);
    let pick = |ids: &[usize]| FlowDataset {
        flows: ids.iter().map(|&i| ds.flows[i].clone()).collect(),
        label_kind: ds.label_kind,
    };
    Ok((pick(train_idx), pick(test_idx)))
}
