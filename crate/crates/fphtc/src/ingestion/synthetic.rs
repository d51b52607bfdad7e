//! Seeded synthetic traffic generator. Each application type owns a pool of
//! /24 client subnets and a pool of server ports, so packet-header features
//! carry class signal, and per-app payload/timing distributions give the
//! flow-level features their signal.
//!
//! Two presets ship with the crate:
//! - `separable`: per-app payload means spaced several stddevs apart;
//! - `overlapping`: payload means within one stddev of each other, which makes
//!   the flow-classification problem genuinely hard.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::traffic_model::{
    canonical_flow_key, AppType, Direction, Flow, Packet, ALL_APPS, TCP_ACK, TCP_FIN, TCP_SYN,
};
use crate::{Error, Result};

/// Generation parameters for one application type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProfile {
    /// Log-normal packet-count distribution (of the underlying normal).
    pub pkt_count_mu: f64,
    pub pkt_count_sigma: f64,
    /// Per-direction normal payload-length distributions, bytes.
    pub fwd_payload_mean: f64,
    pub fwd_payload_std: f64,
    pub bwd_payload_mean: f64,
    pub bwd_payload_std: f64,
    /// Exponential inter-arrival rate, packets per second.
    pub iat_rate: f64,
    /// Probability that a non-initial packet travels client-to-server.
    pub forward_fraction: f64,
    /// Server ports this application uses.
    pub port_pool: Vec<u16>,
    /// Client /24 subnets, as the first three octets.
    pub subnet_pool: Vec<[u8; 3]>,
}

impl SyntheticProfile {
    fn validate(&self, app: AppType) -> Result<()> {
        let bad = |msg: &str| {
            Err(Error::InvalidArgument(format!(
                "profile for {app}: {msg}"
            )))
        };
        if self.port_pool.is_empty() || self.subnet_pool.is_empty() {
            return bad("empty port or subnet pool");
        }
        if !(self.forward_fraction > 0.0 && self.forward_fraction < 1.0) {
            return bad("forward_fraction must be in (0,1)");
        }
        for v in [
            self.pkt_count_mu,
            self.pkt_count_sigma,
            self.fwd_payload_mean,
            self.fwd_payload_std,
            self.bwd_payload_mean,
            self.bwd_payload_std,
            self.iat_rate,
        ] {
            if !v.is_finite() || v <= 0.0 {
                return bad("distribution parameters must be finite and positive");
            }
        }
        Ok(())
    }
}

pub type ProfileSet = BTreeMap<AppType, SyntheticProfile>;
pub type AppMix = BTreeMap<AppType, f64>;

pub fn preset_names() -> &'static [&'static str] {
    &["separable", "overlapping"]
}

/// A named profile preset, or an error listing the valid names.
pub fn preset(name: &str) -> Result<ProfileSet> {
    match name {
        "separable" => Ok(build_preset(false)),
        "overlapping" => Ok(build_preset(true)),
        other => Err(Error::InvalidArgument(format!(
            "unknown preset {other:?}; available: {}",
            preset_names().join(", ")
        ))),
    }
}

/// Applications are laid out in cross-class pairs that interleave /24 subnets
/// within a shared /16 and share a port pool, so the packet-level classifier
/// has to resolve fine-grained address boundaries and an app unseen during
/// training falls into its partner's (different-class) region.
fn build_preset(overlapping: bool) -> ProfileSet {
    // (app, second octet, even /24s?, port base)
    let layout: [(AppType, u8, bool, u16); 8] = [
        (AppType::Voip, 10, true, 5000),
        (AppType::Mail, 10, false, 5000),
        (AppType::Audio, 20, true, 6000),
        (AppType::P2p, 20, false, 6000),
        (AppType::Ftp, 30, true, 7000),
        (AppType::Chat, 30, false, 7000),
        (AppType::Video, 40, true, 8000),
        (AppType::Web, 40, false, 8000),
    ];
    let iat_rates: [(AppType, f64); 8] = [
        (AppType::Chat, 5.0),
        (AppType::Voip, 50.0),
        (AppType::Audio, 40.0),
        (AppType::Video, 60.0),
        (AppType::Ftp, 20.0),
        (AppType::Mail, 10.0),
        (AppType::P2p, 30.0),
        (AppType::Web, 15.0),
    ];
    let mut set = ProfileSet::new();
    for &(app, octet, even, port_base) in &layout {
        let idx = ALL_APPS.iter().position(|&a| a == app).unwrap() as f64;
        let (pay_mean, pay_std) = if overlapping {
            (200.0 + 8.0 * idx, 40.0)
        } else {
            (80.0 + 80.0 * idx, 10.0)
        };
        let iat = iat_rates.iter().find(|(a, _)| *a == app).unwrap().1;
        let iat = if overlapping { 20.0 + 0.5 * idx } else { iat };
        let start: u8 = if even { 0 } else { 1 };
        set.insert(
            app,
            SyntheticProfile {
                pkt_count_mu: 10f64.ln(),
                pkt_count_sigma: 0.4,
                fwd_payload_mean: pay_mean,
                fwd_payload_std: pay_std,
                bwd_payload_mean: pay_mean + 40.0,
                bwd_payload_std: pay_std,
                iat_rate: iat,
                forward_fraction: 0.55,
                port_pool: (port_base..port_base + 32).collect(),
                subnet_pool: (0..32).map(|i| [10, octet, start + 2 * i]).collect(),
            },
        );
    }
    set
}

/// Generate exactly `n_flows` labeled flows. Fully deterministic per seed.
pub fn generate_synthetic(
    profiles: &ProfileSet,
    app_mix: &AppMix,
    n_flows: usize,
    seed: u64,
) -> Result<Vec<Flow>> {
    if n_flows == 0 {
        return Err(Error::InvalidArgument("n_flows must be >= 1".into()));
    }
    let mut apps = Vec::new();
    let mut cum = Vec::new();
    let mut total = 0.0;
    for (&app, &w) in app_mix {
        if w < 0.0 || !w.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "weight for {app} must be nonnegative"
            )));
        }
        if w == 0.0 {
            continue;
        }
        let profile = profiles.get(&app).ok_or_else(|| {
            Error::InvalidArgument(format!("no profile for weighted app {app}"))
        })?;
        profile.validate(app)?;
        total += w;
        apps.push(app);
        cum.push(total);
    }
    if apps.is_empty() {
        return Err(Error::InvalidArgument(
            "app mix weights must sum to a positive value".into(),
        ));
    }

    let mut rng = crate::rng::seeded(seed, 0x73796e74);
    let mut flows = Vec::with_capacity(n_flows);
    for i in 0..n_flows {
        let u: f64 = rng.random_range(0.0..total);
        let k = cum.partition_point(|&c| c <= u).min(apps.len() - 1);
        let app = apps[k];
        let prof = &profiles[&app];

        let subnet = prof.subnet_pool[rng.random_range(0..prof.subnet_pool.len())];
        let client_ip = Ipv4Addr::new(subnet[0], subnet[1], subnet[2], rng.random_range(1..=254));
        let server_ip = Ipv4Addr::new(
            192,
            168,
            rng.random_range(0..4),
            rng.random_range(1..=254),
        );
        let client_port: u16 = rng.random_range(20000..60000);
        let server_port = prof.port_pool[rng.random_range(0..prof.port_pool.len())];

        let count_dist = LogNormal::new(prof.pkt_count_mu, prof.pkt_count_sigma).unwrap();
        let n_pkts = (count_dist.sample(&mut rng).round() as usize).clamp(2, 200);
        let fwd_pay = Normal::new(prof.fwd_payload_mean, prof.fwd_payload_std).unwrap();
        let bwd_pay = Normal::new(prof.bwd_payload_mean, prof.bwd_payload_std).unwrap();
        let iat = Exp::new(prof.iat_rate).unwrap();

        let mut ts = i as f64 * 0.01 + rng.random_range(0.0..0.01);
        let mut packets = Vec::with_capacity(n_pkts);
        for j in 0..n_pkts {
            let forward = j == 0 || rng.random_bool(prof.forward_fraction);
            let pay = if forward {
                fwd_pay.sample(&mut rng)
            } else {
                bwd_pay.sample(&mut rng)
            };
            let payload_len = pay.round().clamp(1.0, 1460.0) as u32;
            let flags = if j == 0 {
                TCP_SYN
            } else if j == n_pkts - 1 {
                TCP_FIN | TCP_ACK
            } else {
                TCP_ACK
            };
            let (src_ip, dst_ip, src_port, dst_port, direction) = if forward {
                (client_ip, server_ip, client_port, server_port, Direction::Forward)
            } else {
                (server_ip, client_ip, server_port, client_port, Direction::Backward)
            };
            packets.push(Packet {
                timestamp: ts,
                src_ip,
                dst_ip,
                src_port,
                dst_port,
                payload_len,
                tcp_flags: flags,
                direction: Some(direction),
            });
            ts += iat.sample(&mut rng);
        }
        flows.push(Flow {
            key: canonical_flow_key(&packets[0]),
            packets,
            true_app: Some(app),
            teacher_label: None,
        });
    }
    Ok(flows)
}
