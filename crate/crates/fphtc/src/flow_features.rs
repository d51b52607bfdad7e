//! Flow-level statistical features for the flow-based classifier.
//!
//! The schema is versioned (`flow-features-v1`, 44 dimensions): per direction
//! (fwd/bwd) and combined, packet counts, payload-length and inter-arrival
//! statistics; plus duration/rate/ratio features and the decimal-encoded
//! addresses and ports of the flow's initiating packet. Statistics over an
//! empty direction or a single packet are zero-filled, with a presence flag
//! per direction disambiguating true zeros.

use crate::traffic_model::{Direction, Flow};
use crate::{par, Error, Result};

pub const SCHEMA_NAME: &str = "flow-features-v1";
pub const DIMENSION: usize = 44;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    pub name: &'static str,
    pub feature_names: Vec<&'static str>,
}

impl FeatureSchema {
    pub fn dimension(&self) -> usize {
        self.feature_names.len()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.feature_names.contains(&name)
    }
}

fn direction_names(prefix: &'static str) -> [&'static str; 12] {
    match prefix {
        "fwd" => [
            "fwd_pkt_count",
            "fwd_payload_bytes",
            "fwd_payload_len_min",
            "fwd_payload_len_max",
            "fwd_payload_len_mean",
            "fwd_payload_len_var",
            "fwd_payload_len_std",
            "fwd_iat_min",
            "fwd_iat_max",
            "fwd_iat_mean",
            "fwd_iat_var",
            "fwd_present",
        ],
        "bwd" => [
            "bwd_pkt_count",
            "bwd_payload_bytes",
            "bwd_payload_len_min",
            "bwd_payload_len_max",
            "bwd_payload_len_mean",
            "bwd_payload_len_var",
            "bwd_payload_len_std",
            "bwd_iat_min",
            "bwd_iat_max",
            "bwd_iat_mean",
            "bwd_iat_var",
            "bwd_present",
        ],
        _ => unreachable!(),
    }
}

/// The fixed feature schema; constant across the process lifetime.
pub fn schema() -> FeatureSchema {
    let mut names = Vec::with_capacity(DIMENSION);
    names.extend(direction_names("fwd"));
    names.extend(direction_names("bwd"));
    names.extend([
        "pkt_count",
        "payload_bytes",
        "payload_len_min",
        "payload_len_max",
        "payload_len_mean",
        "payload_len_var",
        "payload_len_std",
        "iat_min",
        "iat_max",
        "iat_mean",
        "iat_var",
    ]);
    names.extend([
        "duration",
        "pkts_per_s",
        "bytes_per_s",
        "down_up_pkt_ratio",
        "down_up_byte_ratio",
    ]);
    names.extend(["src_ip_dec", "dst_ip_dec", "src_port", "dst_port"]);
    debug_assert_eq!(names.len(), DIMENSION);
    FeatureSchema {
        name: SCHEMA_NAME,
        feature_names: names,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn check_dimension(&self) -> Result<()> {
        if self.values.len() != DIMENSION {
            return Err(Error::DimensionMismatch {
                expected: DIMENSION,
                got: self.values.len(),
            });
        }
        Ok(())
    }
}

/// Population variance; 0 for fewer than two samples.
fn stats(values: &[f64]) -> (f64, f64, f64, f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0, 0.0, 0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() <= 1 {
        0.0
    } else {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
    };
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max, mean, var, var.sqrt())
}

fn iats(timestamps: &[f64]) -> Vec<f64> {
    timestamps.windows(2).map(|w| w[1] - w[0]).collect()
}

/// 11 statistics for one packet subsequence (lengths + timestamps).
fn subseq_block(lens: &[f64], ts: &[f64]) -> [f64; 11] {
    let (pmin, pmax, pmean, pvar, pstd) = stats(lens);
    let gaps = iats(ts);
    let (imin, imax, imean, ivar, _) = stats(&gaps);
    [
        lens.len() as f64,
        lens.iter().sum(),
        pmin,
        pmax,
        pmean,
        pvar,
        pstd,
        imin,
        imax,
        imean,
        ivar,
    ]
}

/// Pure function of the flow; deterministic.
pub fn extract_features(flow: &Flow) -> FeatureVector {
    let mut fwd_len = Vec::new();
    let mut fwd_ts = Vec::new();
    let mut bwd_len = Vec::new();
    let mut bwd_ts = Vec::new();
    let mut all_len = Vec::with_capacity(flow.packets.len());
    let mut all_ts = Vec::with_capacity(flow.packets.len());
    for p in &flow.packets {
        let l = p.payload_len as f64;
        all_len.push(l);
        all_ts.push(p.timestamp);
        match p.direction {
            Some(Direction::Backward) => {
                bwd_len.push(l);
                bwd_ts.push(p.timestamp);
            }
            _ => {
                fwd_len.push(l);
                fwd_ts.push(p.timestamp);
            }
        }
    }

    let mut values = Vec::with_capacity(DIMENSION);
    for (lens, ts) in [(&fwd_len, &fwd_ts), (&bwd_len, &bwd_ts)] {
        values.extend(subseq_block(lens, ts));
        values.push(if lens.is_empty() { 0.0 } else { 1.0 });
    }
    values.extend(subseq_block(&all_len, &all_ts));

    let duration = if all_ts.len() < 2 {
        0.0
    } else {
        all_ts[all_ts.len() - 1] - all_ts[0]
    };
    let total_bytes: f64 = all_len.iter().sum();
    let rate = |x: f64| if duration > 0.0 { x / duration } else { 0.0 };
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    values.push(duration);
    values.push(rate(all_len.len() as f64));
    values.push(rate(total_bytes));
    values.push(ratio(bwd_len.len() as f64, fwd_len.len() as f64));
    values.push(ratio(bwd_len.iter().sum(), fwd_len.iter().sum()));

    let first = &flow.packets[0];
    values.push(u32::from(first.src_ip) as f64);
    values.push(u32::from(first.dst_ip) as f64);
    values.push(first.src_port as f64);
    values.push(first.dst_port as f64);

    debug_assert_eq!(values.len(), DIMENSION);
    FeatureVector { values }
}

/// Batch extraction; data-parallel with the `parallel` feature.
pub fn extract_all(flows: &[Flow]) -> Vec<FeatureVector> {
    par::map(flows, extract_features)
}

/// Sequential batch extraction, kept public for benchmarking against
/// [`extract_all`].
pub fn extract_all_sequential(flows: &[Flow]) -> Vec<FeatureVector> {
    par::map_seq(flows, extract_features)
}

/// CSV export: header row of schema names plus a final `label` column.
pub fn to_csv(features: &[FeatureVector], labels: &[crate::traffic_model::CoSLabel]) -> String {
    let mut out = schema().feature_names.join(",");
    out.push_str(",label\n");
    for (fv, l) in features.iter().zip(labels) {
        let row: Vec<String> = fv.values.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(","));
        out.push_str(&format!(",{l}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic_model::{canonical_flow_key, Packet, TCP_ACK};
    use std::net::Ipv4Addr;

    fn flow(dirs_lens_ts: &[(Direction, u32, f64)]) -> Flow {
        let packets: Vec<Packet> = dirs_lens_ts
            .iter()
            .map(|&(d, len, ts)| {
                let fwd = d == Direction::Forward;
                Packet {
                    timestamp: ts,
                    src_ip: Ipv4Addr::new(10, 0, 0, if fwd { 1 } else { 2 }),
                    dst_ip: Ipv4Addr::new(10, 0, 0, if fwd { 2 } else { 1 }),
                    src_port: if fwd { 5000 } else { 80 },
                    dst_port: if fwd { 80 } else { 5000 },
                    payload_len: len,
                    tcp_flags: TCP_ACK,
                    direction: Some(d),
                }
            })
            .collect();
        Flow {
            key: canonical_flow_key(&packets[0]),
            packets,
            true_app: None,
            teacher_label: None,
        }
    }

    fn get(fv: &FeatureVector, name: &str) -> f64 {
        let s = schema();
        let i = s.feature_names.iter().position(|&n| n == name).unwrap();
        fv.values[i]
    }

    #[test]
    fn schema_dimension_and_names() {
        let s = schema();
        assert_eq!(s.dimension(), 44);
        assert!(s.contains("fwd_payload_len_mean"));
        assert_eq!(schema(), s);
        let mut uniq = s.feature_names.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 44);
    }

    #[test]
    fn constant_forward_payloads() {
        use Direction::*;
        let f = flow(&[(Forward, 100, 0.0), (Forward, 100, 1.0), (Forward, 100, 2.0)]);
        let fv = extract_features(&f);
        assert_eq!(get(&fv, "fwd_payload_len_mean"), 100.0);
        assert_eq!(get(&fv, "fwd_payload_len_var"), 0.0);
        assert_eq!(get(&fv, "fwd_present"), 1.0);
        assert_eq!(get(&fv, "bwd_present"), 0.0);
    }

    #[test]
    fn iat_mean() {
        use Direction::*;
        let f = flow(&[(Forward, 10, 0.0), (Forward, 10, 1.0), (Forward, 10, 4.0)]);
        let fv = extract_features(&f);
        assert_eq!(get(&fv, "iat_mean"), 2.0);
    }

    #[test]
    fn single_packet_zero_fill() {
        let f = flow(&[(Direction::Forward, 42, 5.0)]);
        let fv = extract_features(&f);
        assert_eq!(get(&fv, "iat_mean"), 0.0);
        assert_eq!(get(&fv, "iat_min"), 0.0);
        assert_eq!(get(&fv, "duration"), 0.0);
        assert!(fv.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn time_translation_invariance() {
        use Direction::*;
        let base = [(Forward, 10, 0.5), (Backward, 20, 1.25), (Forward, 30, 2.0)];
        let shifted: Vec<_> = base.iter().map(|&(d, l, t)| (d, l, t + 1000.0)).collect();
        let a = extract_features(&flow(&base));
        let b = extract_features(&flow(&shifted));
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn endpoint_swap_maps_fwd_to_bwd() {
        use Direction::*;
        let base = [(Forward, 10, 0.0), (Backward, 20, 1.0), (Forward, 30, 3.0)];
        let swapped: Vec<_> = base
            .iter()
            .map(|&(d, l, t)| {
                let d = if d == Forward { Backward } else { Forward };
                (d, l, t)
            })
            .collect();
        let a = extract_features(&flow(&base));
        let b = extract_features(&flow(&swapped));
        // first 12 entries are fwd_*, next 12 are bwd_*
        assert_eq!(a.values[0..12], b.values[12..24]);
        assert_eq!(a.values[12..24], b.values[0..12]);
    }

    #[test]
    fn batch_matches_single() {
        use Direction::*;
        let flows = vec![
            flow(&[(Forward, 10, 0.0), (Backward, 20, 1.0)]),
            flow(&[(Forward, 7, 0.0)]),
        ];
        let batch = extract_all(&flows);
        let seq = extract_all_sequential(&flows);
        assert_eq!(batch, seq);
        assert_eq!(batch[1], extract_features(&flows[1]));
    }
}
