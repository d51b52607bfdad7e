//! The packet-based student: a single CART over the four packet-header
//! features (decimal src/dst IP, src/dst port) with entropy splits and
//! balanced class weights, compiled into a routing-policy rule table with one
//! rule per leaf.

use std::fmt::Write as _;
use std::path::Path;

use crate::traffic_model::{CoSLabel, Flow, LabelKind, Packet, ALL_COS, N_COS};
use crate::{Error, Result};

pub const N_PACKET_FEATURES: usize = 4;

/// Upper bounds (exclusive) of the four integer feature domains.
pub const FEATURE_DOMAIN: [u64; N_PACKET_FEATURES] = [1 << 32, 1 << 32, 1 << 16, 1 << 16];

pub const FEATURE_TAGS: [&str; N_PACKET_FEATURES] = ["srcip", "dstip", "sport", "dport"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PacketFeatures {
    pub src_ip_dec: u32,
    pub dst_ip_dec: u32,
    pub src_port: u16,
    pub dst_port: u16,
}

impl PacketFeatures {
    pub fn get(&self, feature: usize) -> u64 {
        match feature {
            0 => self.src_ip_dec as u64,
            1 => self.dst_ip_dec as u64,
            2 => self.src_port as u64,
            3 => self.dst_port as u64,
            _ => panic!("feature index out of range"),
        }
    }
}

/// Big-endian decimal encoding of the addresses: `a.b.c.d -> a*2^24 + ... + d`.
pub fn packet_features(p: &Packet) -> PacketFeatures {
    PacketFeatures {
        src_ip_dec: u32::from(p.src_ip),
        dst_ip_dec: u32::from(p.dst_ip),
        src_port: p.src_port,
        dst_port: p.dst_port,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketRecord {
    pub features: PacketFeatures,
    pub label: CoSLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CartConfig {
    /// Criterion is fixed to entropy and class weighting to balanced.
    pub max_depth: Option<usize>,
    pub max_leaf_nodes: Option<usize>,
    pub min_samples_split: usize,
}

impl Default for CartConfig {
    fn default() -> Self {
        CartConfig {
            max_depth: None,
            max_leaf_nodes: None,
            min_samples_split: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CartNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        label: CoSLabel,
        class_counts: [usize; N_COS],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<CartNode>,
}

impl DecisionTree {
    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, CartNode::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[CartNode], i: usize) -> usize {
            match &nodes[i] {
                CartNode::Leaf { .. } => 0,
                CartNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Deduplicate all packets of labeled flows into unique directed 4-tuples.
/// Conflicting labels across flows resolve by majority of occurrences, ties
/// to the first label seen; the conflict count is reported.
pub struct PacketDataset {
    pub records: Vec<PacketRecord>,
    pub conflicts: usize,
}

pub fn build_packet_dataset(flows: &[Flow], label_kind: LabelKind) -> Result<PacketDataset> {
    use std::collections::HashMap;
    // tuple -> (first-seen order, per-label occurrence counts, first label)
    let mut seen: HashMap<PacketFeatures, usize> = HashMap::new();
    let mut entries: Vec<(PacketFeatures, [usize; N_COS], CoSLabel)> = Vec::new();
    for flow in flows {
        let label = flow.label(label_kind).ok_or(Error::MissingLabel)?;
        for p in &flow.packets {
            let f = packet_features(p);
            match seen.get(&f) {
                Some(&i) => entries[i].1[label.encode()] += 1,
                None => {
                    let mut counts = [0usize; N_COS];
                    counts[label.encode()] += 1;
                    seen.insert(f, entries.len());
                    entries.push((f, counts, label));
                }
            }
        }
    }
    let mut conflicts = 0;
    let records = entries
        .into_iter()
        .map(|(features, counts, first)| {
            let distinct = counts.iter().filter(|&&c| c > 0).count();
            if distinct > 1 {
                conflicts += 1;
            }
            let max = *counts.iter().max().unwrap();
            // majority, ties to first seen
            let label = if counts[first.encode()] == max {
                first
            } else {
                ALL_COS[counts.iter().position(|&c| c == max).unwrap()]
            };
            PacketRecord { features, label }
        })
        .collect();
    Ok(PacketDataset { records, conflicts })
}

fn weighted_entropy(counts: &[f64; N_COS]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    -counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / total;
            p * p.log2()
        })
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy)]
struct CartSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Exact greedy entropy split with per-class sample weights. Candidates are
/// midpoints between consecutive distinct sorted values; ties break toward
/// the lowest feature index, then the lowest threshold.
fn cart_best_split(
    indices: &[usize],
    records: &[PacketRecord],
    weights: &[f64; N_COS],
) -> Option<CartSplit> {
    if indices.len() < 2 {
        return None;
    }
    let mut total = [0.0f64; N_COS];
    for &i in indices {
        total[records[i].label.encode()] += weights[records[i].label.encode()];
    }
    let total_w: f64 = total.iter().sum();
    let parent = weighted_entropy(&total);
    if parent == 0.0 {
        return None;
    }

    let per_feature = crate::par::map_indices(N_PACKET_FEATURES, |f| {
        let mut order: Vec<usize> = indices.to_vec();
        order.sort_by_key(|&i| records[i].features.get(f));
        let mut left = [0.0f64; N_COS];
        let mut best: Option<CartSplit> = None;
        for w in 0..order.len() - 1 {
            let i = order[w];
            let c = records[i].label.encode();
            left[c] += weights[c];
            let (v, next) = (
                records[i].features.get(f),
                records[order[w + 1]].features.get(f),
            );
            if next <= v {
                continue;
            }
            let mut right = [0.0f64; N_COS];
            for k in 0..N_COS {
                right[k] = total[k] - left[k];
            }
            let lw: f64 = left.iter().sum();
            let rw = total_w - lw;
            let gain = parent
                - (lw / total_w) * weighted_entropy(&left)
                - (rw / total_w) * weighted_entropy(&right);
            let threshold = (v + next) as f64 / 2.0;
            let better = match best {
                None => true,
                Some(b) => gain > b.gain || (gain == b.gain && threshold < b.threshold),
            };
            if better {
                best = Some(CartSplit {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
        best
    });

    let mut winner: Option<CartSplit> = None;
    for cand in per_feature.into_iter().flatten() {
        let better = match winner {
            None => true,
            Some(w) => {
                cand.gain > w.gain
                    || (cand.gain == w.gain
                        && (cand.feature, cand.threshold) < (w.feature, w.threshold))
            }
        };
        if better {
            winner = Some(cand);
        }
    }
    winner.filter(|w| w.gain > 1e-12)
}

fn leaf_from(indices: &[usize], records: &[PacketRecord], weights: &[f64; N_COS]) -> CartNode {
    let mut class_counts = [0usize; N_COS];
    for &i in indices {
        class_counts[records[i].label.encode()] += 1;
    }
    // weighted majority, ties to lowest encoding
    let mut label = ALL_COS[0];
    let mut best = -1.0;
    for k in 0..N_COS {
        let w = class_counts[k] as f64 * weights[k];
        if w > best {
            best = w;
            label = ALL_COS[k];
        }
    }
    CartNode::Leaf {
        label,
        class_counts,
    }
}

/// Train the student CART. Balanced class weights `N / (3 * N_k)`; best-first
/// growth so a finite leaf cap spends its budget on the highest-gain splits.
/// Deterministic for a fixed input order.
pub fn train_cart(records: &[PacketRecord], config: &CartConfig, _seed: u64) -> Result<DecisionTree> {
    if records.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot train a CART on an empty packet dataset".into(),
        ));
    }
    if config.min_samples_split < 2 {
        return Err(Error::InvalidArgument(
            "min_samples_split must be >= 2".into(),
        ));
    }
    let n = records.len() as f64;
    let mut class_n = [0usize; N_COS];
    for r in records {
        class_n[r.label.encode()] += 1;
    }
    let mut weights = [0.0f64; N_COS];
    for k in 0..N_COS {
        if class_n[k] > 0 {
            weights[k] = n / (N_COS as f64 * class_n[k] as f64);
        }
    }

    struct Frontier {
        node: usize,
        depth: usize,
        indices: Vec<usize>,
        split: CartSplit,
        seq: usize,
    }

    let all: Vec<usize> = (0..records.len()).collect();
    let mut nodes = vec![leaf_from(&all, records, &weights)];
    let mut frontier: Vec<Frontier> = Vec::new();
    let mut seq = 0usize;
    let mut leaves = 1usize;

    let consider = |frontier: &mut Vec<Frontier>,
                    seq: &mut usize,
                    node: usize,
                    depth: usize,
                    idx: Vec<usize>| {
        if let Some(d) = config.max_depth {
            if depth >= d {
                return;
            }
        }
        if idx.len() < config.min_samples_split {
            return;
        }
        if let Some(split) = cart_best_split(&idx, records, &weights) {
            frontier.push(Frontier {
                node,
                depth,
                indices: idx,
                split,
                seq: *seq,
            });
            *seq += 1;
        }
    };

    consider(&mut frontier, &mut seq, 0, 0, all);

    while !frontier.is_empty() {
        if let Some(cap) = config.max_leaf_nodes {
            if leaves >= cap {
                break;
            }
        }
        let mut bi = 0;
        for i in 1..frontier.len() {
            let (a, b) = (&frontier[i], &frontier[bi]);
            if a.split.gain > b.split.gain || (a.split.gain == b.split.gain && a.seq < b.seq) {
                bi = i;
            }
        }
        let item = frontier.swap_remove(bi);
        let (mut li, mut ri) = (Vec::new(), Vec::new());
        for &i in &item.indices {
            if (records[i].features.get(item.split.feature) as f64) <= item.split.threshold {
                li.push(i);
            } else {
                ri.push(i);
            }
        }
        let left = nodes.len();
        nodes.push(leaf_from(&li, records, &weights));
        let right = nodes.len();
        nodes.push(leaf_from(&ri, records, &weights));
        nodes[item.node] = CartNode::Split {
            feature: item.split.feature,
            threshold: item.split.threshold,
            left,
            right,
        };
        leaves += 1;
        consider(&mut frontier, &mut seq, left, item.depth + 1, li);
        consider(&mut frontier, &mut seq, right, item.depth + 1, ri);
    }

    Ok(DecisionTree { nodes })
}

/// Root-to-leaf descent; left iff `value <= threshold`.
pub fn classify(tree: &DecisionTree, f: &PacketFeatures) -> CoSLabel {
    let mut i = 0;
    loop {
        match &tree.nodes[i] {
            CartNode::Leaf { label, .. } => return *label,
            CartNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                i = if (f.get(*feature) as f64) <= *threshold {
                    *left
                } else {
                    *right
                };
            }
        }
    }
}

/// Closed-open interval `[lo, hi)` on an integer feature domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub lo: u64,
    pub hi: u64,
}

impl Interval {
    pub fn contains(&self, v: u64) -> bool {
        self.lo <= v && v < self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub intervals: [Interval; N_PACKET_FEATURES],
    pub action: CoSLabel,
}

impl Rule {
    pub fn matches(&self, f: &PacketFeatures) -> bool {
        (0..N_PACKET_FEATURES).all(|i| self.intervals[i].contains(f.get(i)))
    }
}

/// The compiled rule table. Rules partition the 4-D feature space: every
/// point matches exactly one rule, and the rule count equals the leaf count
/// of the source tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingPolicy {
    pub rules: Vec<Rule>,
}

impl RoutingPolicy {
    pub fn lookup(&self, f: &PacketFeatures) -> Option<&Rule> {
        self.rules.iter().find(|r| r.matches(f))
    }
}

/// Translate every root-to-leaf path into a rule: `<= t` tightens the upper
/// bound to `floor(t)+1`, `> t` raises the lower bound to `floor(t)+1`.
pub fn compile_rules(tree: &DecisionTree) -> RoutingPolicy {
    fn walk(
        nodes: &[CartNode],
        i: usize,
        bounds: [Interval; N_PACKET_FEATURES],
        out: &mut Vec<Rule>,
    ) {
        match &nodes[i] {
            CartNode::Leaf { label, .. } => out.push(Rule {
                intervals: bounds,
                action: *label,
            }),
            CartNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let cut = threshold.floor() as u64 + 1;
                let mut lb = bounds;
                lb[*feature].hi = lb[*feature].hi.min(cut);
                walk(nodes, *left, lb, out);
                let mut rb = bounds;
                rb[*feature].lo = rb[*feature].lo.max(cut);
                walk(nodes, *right, rb, out);
            }
        }
    }
    let full = [
        Interval { lo: 0, hi: FEATURE_DOMAIN[0] },
        Interval { lo: 0, hi: FEATURE_DOMAIN[1] },
        Interval { lo: 0, hi: FEATURE_DOMAIN[2] },
        Interval { lo: 0, hi: FEATURE_DOMAIN[3] },
    ];
    let mut rules = Vec::with_capacity(tree.leaf_count());
    walk(&tree.nodes, 0, full, &mut rules);
    RoutingPolicy { rules }
}

// ---------------------------------------------------------------------------
// policy text format
// ---------------------------------------------------------------------------

pub fn policy_to_string(policy: &RoutingPolicy) -> Result<String> {
    if policy.rules.is_empty() {
        return Err(Error::InvalidArgument(
            "refusing to export an empty policy (rules must cover the feature space)".into(),
        ));
    }
    let mut out = String::new();
    for r in &policy.rules {
        for (tag, iv) in FEATURE_TAGS.iter().zip(&r.intervals) {
            write!(out, "{tag}:[{},{}) ", iv.lo, iv.hi).unwrap();
        }
        writeln!(out, "-> {}", r.action).unwrap();
    }
    Ok(out)
}

pub fn policy_from_string(text: &str) -> Result<RoutingPolicy> {
    let mut rules = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| Error::PolicyFormat {
            line: lineno + 1,
            msg: msg.to_string(),
        };
        let (lhs, action) = line
            .split_once("->")
            .ok_or_else(|| err("missing `->`"))?;
        let action: CoSLabel = action
            .trim()
            .parse()
            .map_err(|_| err("unknown action"))?;
        let parts: Vec<&str> = lhs.split_whitespace().collect();
        if parts.len() != N_PACKET_FEATURES {
            return Err(err("expected 4 feature intervals"));
        }
        let mut intervals = [Interval { lo: 0, hi: 0 }; N_PACKET_FEATURES];
        for (i, part) in parts.iter().enumerate() {
            let body = part
                .strip_prefix(FEATURE_TAGS[i])
                .and_then(|s| s.strip_prefix(":["))
                .and_then(|s| s.strip_suffix(')'))
                .ok_or_else(|| err("malformed interval"))?;
            let (lo, hi) = body.split_once(',').ok_or_else(|| err("malformed interval"))?;
            let lo: u64 = lo.parse().map_err(|_| err("bad interval bound"))?;
            let hi: u64 = hi.parse().map_err(|_| err("bad interval bound"))?;
            if lo >= hi || hi > FEATURE_DOMAIN[i] {
                return Err(err("interval bounds out of range"));
            }
            intervals[i] = Interval { lo, hi };
        }
        rules.push(Rule { intervals, action });
    }
    if rules.is_empty() {
        return Err(Error::PolicyFormat {
            line: 0,
            msg: "policy file contains no rules".into(),
        });
    }
    Ok(RoutingPolicy { rules })
}

pub fn export_policy(policy: &RoutingPolicy, path: &Path) -> Result<()> {
    std::fs::write(path, policy_to_string(policy)?)?;
    Ok(())
}

pub fn import_policy(path: &Path) -> Result<RoutingPolicy> {
    policy_from_string(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// tree persistence (shares the versioned model container style)
// ---------------------------------------------------------------------------

pub fn tree_to_string(tree: &DecisionTree) -> String {
    let mut out = String::new();
    out.push_str("fphtc-model v1\n");
    out.push_str("kind cart\n");
    writeln!(out, "nodes {}", tree.nodes.len()).unwrap();
    for n in &tree.nodes {
        match n {
            CartNode::Split {
                feature,
                threshold,
                left,
                right,
            } => writeln!(out, "split {feature} {threshold:?} {left} {right}").unwrap(),
            CartNode::Leaf {
                label,
                class_counts,
            } => writeln!(
                out,
                "leaf {} {} {} {}",
                label.encode(),
                class_counts[0],
                class_counts[1],
                class_counts[2]
            )
            .unwrap(),
        }
    }
    out.push_str("end\n");
    out
}

pub fn tree_from_string(text: &str) -> Result<DecisionTree> {
    let mut lines = text.lines();
    if lines.next() != Some("fphtc-model v1") || lines.next() != Some("kind cart") {
        return Err(Error::ModelFormat("bad cart container header".into()));
    }
    let hdr = lines
        .next()
        .ok_or_else(|| Error::ModelFormat("missing node count".into()))?;
    let count: usize = hdr
        .strip_prefix("nodes ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::ModelFormat(format!("bad node count line {hdr:?}")))?;
    let mut nodes = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| Error::ModelFormat("truncated cart".into()))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::ModelFormat(format!("bad node line {line:?}"));
        let node = match parts.as_slice() {
            ["split", f, t, l, r] => CartNode::Split {
                feature: f.parse().map_err(|_| bad())?,
                threshold: t.parse().map_err(|_| bad())?,
                left: l.parse().map_err(|_| bad())?,
                right: r.parse().map_err(|_| bad())?,
            },
            ["leaf", lab, a, b, c] => CartNode::Leaf {
                label: CoSLabel::decode(lab.parse().map_err(|_| bad())?)?,
                class_counts: [
                    a.parse().map_err(|_| bad())?,
                    b.parse().map_err(|_| bad())?,
                    c.parse().map_err(|_| bad())?,
                ],
            },
            _ => return Err(bad()),
        };
        nodes.push(node);
    }
    if lines.next() != Some("end") {
        return Err(Error::ModelFormat("missing end marker".into()));
    }
    Ok(DecisionTree { nodes })
}

pub fn save_tree(tree: &DecisionTree, path: &Path) -> Result<()> {
    std::fs::write(path, tree_to_string(tree))?;
    Ok(())
}

pub fn load_tree(path: &Path) -> Result<DecisionTree> {
    tree_from_string(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic_model::{canonical_flow_key, Direction, TCP_ACK};
    use rand::Rng;
    use std::net::Ipv4Addr;

    fn feat(src: u32, dst: u32, sport: u16, dport: u16) -> PacketFeatures {
        PacketFeatures {
            src_ip_dec: src,
            dst_ip_dec: dst,
            src_port: sport,
            dst_port: dport,
        }
    }

    #[test]
    fn ip_decimal_encoding() {
        let mut p = Packet {
            timestamp: 0.0,
            src_ip: Ipv4Addr::new(0, 0, 0, 0),
            dst_ip: Ipv4Addr::new(192, 168, 1, 1),
            src_port: 1,
            dst_port: 2,
            payload_len: 0,
            tcp_flags: 0,
            direction: None,
        };
        let f = packet_features(&p);
        assert_eq!(f.src_ip_dec, 0);
        assert_eq!(f.dst_ip_dec, 3_232_235_777);
        p.src_ip = Ipv4Addr::new(255, 255, 255, 255);
        assert_eq!(packet_features(&p).src_ip_dec, u32::MAX);
    }

    fn one_flow(label: crate::traffic_model::AppType, tuples: &[(u32, u32, u16, u16)]) -> Flow {
        let packets: Vec<Packet> = tuples
            .iter()
            .enumerate()
            .map(|(i, &(s, d, sp, dp))| Packet {
                timestamp: i as f64,
                src_ip: Ipv4Addr::from(s),
                dst_ip: Ipv4Addr::from(d),
                src_port: sp,
                dst_port: dp,
                payload_len: 10,
                tcp_flags: TCP_ACK,
                direction: Some(if i % 2 == 0 {
                    Direction::Forward
                } else {
                    Direction::Backward
                }),
            })
            .collect();
        Flow {
            key: canonical_flow_key(&packets[0]),
            packets,
            true_app: Some(label),
            teacher_label: None,
        }
    }

    #[test]
    fn packet_dataset_uniqueness() {
        use crate::traffic_model::AppType;
        let f = one_flow(AppType::Voip, &[(1, 2, 10, 20); 10]);
        let ds = build_packet_dataset(&[f], LabelKind::Truth).unwrap();
        assert_eq!(ds.records.len(), 1);
        assert_eq!(ds.conflicts, 0);
    }

    #[test]
    fn bidirectional_flow_two_records_same_label() {
        use crate::traffic_model::AppType;
        let f = one_flow(AppType::Voip, &[(1, 2, 10, 20), (2, 1, 20, 10)]);
        let ds = build_packet_dataset(&[f], LabelKind::Truth).unwrap();
        assert_eq!(ds.records.len(), 2);
        assert!(ds.records.iter().all(|r| r.label == CoSLabel::DelaySensitive));
    }

    #[test]
    fn conflict_resolved_by_majority() {
        use crate::traffic_model::AppType;
        let a1 = one_flow(AppType::Voip, &[(1, 2, 10, 20)]);
        let a2 = one_flow(AppType::Voip, &[(1, 2, 10, 20)]);
        let b = one_flow(AppType::Ftp, &[(1, 2, 10, 20)]);
        let ds = build_packet_dataset(&[a1, a2, b], LabelKind::Truth).unwrap();
        assert_eq!(ds.records.len(), 1);
        assert_eq!(ds.records[0].label, CoSLabel::DelaySensitive);
        assert_eq!(ds.conflicts, 1);
    }

    #[test]
    fn unlabeled_flow_errors() {
        use crate::traffic_model::AppType;
        let mut f = one_flow(AppType::Voip, &[(1, 2, 10, 20)]);
        f.true_app = None;
        assert!(build_packet_dataset(&[f], LabelKind::Truth).is_err());
    }

    fn rec(f: PacketFeatures, label: CoSLabel) -> PacketRecord {
        PacketRecord { features: f, label }
    }

    #[test]
    fn single_class_single_leaf() {
        let records: Vec<PacketRecord> = (0..10)
            .map(|i| rec(feat(i, 0, 0, 0), CoSLabel::DelayModerate))
            .collect();
        let tree = train_cart(&records, &CartConfig::default(), 0).unwrap();
        assert_eq!(tree.leaf_count(), 1);
        assert_eq!(classify(&tree, &feat(999, 0, 0, 0)), CoSLabel::DelayModerate);
    }

    #[test]
    fn dst_port_separable_depth_one() {
        let mut records = Vec::new();
        for i in 0..20u16 {
            let dport = if i < 10 { 80 + i } else { 8000 + i };
            let label = if dport <= 443 {
                CoSLabel::DelaySensitive
            } else {
                CoSLabel::DelayTolerant
            };
            records.push(rec(feat(1, 2, 3, dport), label));
        }
        let tree = train_cart(&records, &CartConfig::default(), 0).unwrap();
        assert_eq!(tree.depth(), 1);
        match &tree.nodes[0] {
            CartNode::Split { feature, .. } => assert_eq!(*feature, 3),
            n => panic!("expected split, got {n:?}"),
        }
        assert_eq!(classify(&tree, &feat(1, 2, 3, 80)), CoSLabel::DelaySensitive);
        for r in &records {
            assert_eq!(classify(&tree, &r.features), r.label);
        }
    }

    #[test]
    fn consistent_data_fits_exactly() {
        let mut rng = crate::rng::seeded(17, 0xca);
        for _ in 0..10 {
            let mut records = Vec::new();
            let mut seen = std::collections::HashMap::new();
            for _ in 0..300 {
                let f = feat(
                    rng.random_range(0..1000),
                    rng.random_range(0..1000),
                    rng.random_range(0..100),
                    rng.random_range(0..100),
                );
                let label = ALL_COS[rng.random_range(0..3)];
                // keep the dataset label-consistent on duplicate tuples
                let label = *seen.entry(f).or_insert(label);
                records.push(rec(f, label));
            }
            let tree = train_cart(&records, &CartConfig::default(), 0).unwrap();
            for r in &records {
                assert_eq!(classify(&tree, &r.features), r.label);
            }
        }
    }

    #[test]
    fn leaf_cap_bounds_rule_count() {
        let mut rng = crate::rng::seeded(23, 0x1eaf);
        let records: Vec<PacketRecord> = (0..500)
            .map(|_| {
                rec(
                    feat(
                        rng.random_range(0..10000),
                        rng.random_range(0..10000),
                        rng.random_range(0..1000),
                        rng.random_range(0..1000),
                    ),
                    ALL_COS[rng.random_range(0..3)],
                )
            })
            .collect();
        let cfg = CartConfig {
            max_leaf_nodes: Some(8),
            ..Default::default()
        };
        let tree = train_cart(&records, &cfg, 0).unwrap();
        assert!(tree.leaf_count() <= 8);
        assert_eq!(compile_rules(&tree).rules.len(), tree.leaf_count());
    }

    #[test]
    fn single_leaf_rule_covers_space() {
        let records = vec![rec(feat(1, 2, 3, 4), CoSLabel::DelayTolerant)];
        let tree = train_cart(&records, &CartConfig::default(), 0).unwrap();
        let policy = compile_rules(&tree);
        assert_eq!(policy.rules.len(), 1);
        let r = &policy.rules[0];
        for (iv, dom) in r.intervals.iter().zip(FEATURE_DOMAIN) {
            assert_eq!(iv.lo, 0);
            assert_eq!(iv.hi, dom);
        }
    }

    #[test]
    fn depth_one_rule_translation() {
        // dst_port <= 443 split
        let tree = DecisionTree {
            nodes: vec![
                CartNode::Split {
                    feature: 3,
                    threshold: 443.5,
                    left: 1,
                    right: 2,
                },
                CartNode::Leaf {
                    label: CoSLabel::DelaySensitive,
                    class_counts: [1, 0, 0],
                },
                CartNode::Leaf {
                    label: CoSLabel::DelayTolerant,
                    class_counts: [0, 0, 1],
                },
            ],
        };
        let policy = compile_rules(&tree);
        assert_eq!(policy.rules.len(), 2);
        assert_eq!(policy.rules[0].intervals[3], Interval { lo: 0, hi: 444 });
        assert_eq!(
            policy.rules[1].intervals[3],
            Interval { lo: 444, hi: 65536 }
        );
        for f in [feat(0, 0, 0, 443), feat(0, 0, 0, 444), feat(0, 0, 0, 65535)] {
            let hits: Vec<_> = policy.rules.iter().filter(|r| r.matches(&f)).collect();
            assert_eq!(hits.len(), 1);
            assert_eq!(hits[0].action, classify(&tree, &f));
        }
    }

    #[test]
    fn rules_partition_small_trees() {
        let mut rng = crate::rng::seeded(31, 0xd15);
        for _ in 0..5 {
            let records: Vec<PacketRecord> = (0..100)
                .map(|_| {
                    rec(
                        feat(
                            rng.random_range(0..50),
                            rng.random_range(0..50),
                            rng.random_range(0..20),
                            rng.random_range(0..20),
                        ),
                        ALL_COS[rng.random_range(0..3)],
                    )
                })
                .collect();
            let tree = train_cart(&records, &CartConfig::default(), 0).unwrap();
            let policy = compile_rules(&tree);
            assert_eq!(policy.rules.len(), tree.leaf_count());
            // every random point matches exactly one rule, agreeing with the tree
            for _ in 0..2000 {
                let f = feat(
                    rng.random_range(0..u32::MAX),
                    rng.random_range(0..u32::MAX),
                    rng.random_range(0..u16::MAX),
                    rng.random_range(0..u16::MAX),
                );
                let hits: Vec<_> = policy.rules.iter().filter(|r| r.matches(&f)).collect();
                assert_eq!(hits.len(), 1);
                assert_eq!(hits[0].action, classify(&tree, &f));
            }
        }
    }

    #[test]
    fn policy_text_round_trip() {
        let tree = {
            let mut rng = crate::rng::seeded(3, 0x9);
            let records: Vec<PacketRecord> = (0..200)
                .map(|_| {
                    rec(
                        feat(
                            rng.random_range(0..1000),
                            rng.random_range(0..1000),
                            rng.random_range(0..100),
                            rng.random_range(0..100),
                        ),
                        ALL_COS[rng.random_range(0..3)],
                    )
                })
                .collect();
            train_cart(&records, &CartConfig::default(), 0).unwrap()
        };
        let policy = compile_rules(&tree);
        let text = policy_to_string(&policy).unwrap();
        let back = policy_from_string(&text).unwrap();
        assert_eq!(back, policy);
    }

    #[test]
    fn empty_policy_export_rejected() {
        assert!(policy_to_string(&RoutingPolicy { rules: vec![] }).is_err());
    }

    #[test]
    fn malformed_policy_line_reports_number() {
        let text = "srcip:[0,4294967296) dstip:[0,4294967296) sport:[0,65536) dport:[0,65536) -> DELAY_TOLERANT\nnot a rule\n";
        match policy_from_string(text) {
            Err(Error::PolicyFormat { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected policy format error, got {other:?}"),
        }
    }

    #[test]
    fn tree_persistence_round_trip() {
        let mut rng = crate::rng::seeded(41, 0x7ee);
        let records: Vec<PacketRecord> = (0..300)
            .map(|_| {
                rec(
                    feat(
                        rng.random_range(0..5000),
                        rng.random_range(0..5000),
                        rng.random_range(0..200),
                        rng.random_range(0..200),
                    ),
                    ALL_COS[rng.random_range(0..3)],
                )
            })
            .collect();
        let tree = train_cart(&records, &CartConfig::default(), 0).unwrap();
        let back = tree_from_string(&tree_to_string(&tree)).unwrap();
        assert_eq!(back, tree);
    }
}
