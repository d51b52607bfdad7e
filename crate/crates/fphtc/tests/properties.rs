//! Generated-input checks for structural invariants.

use proptest::prelude::*;

use fphtc::analysis::{
    fphtc_bound, optimal_lambda, packet_bound, teacher_bound, total_cost, BoundParams,
};
use fphtc::policy::{classify, compile_rules, train_cart, CartConfig, PacketFeatures, PacketRecord};
use fphtc::traffic_model::{canonical_flow_key, CoSLabel, Packet};

fn arb_features() -> impl Strategy<Value = PacketFeatures> {
    (any::<u32>(), any::<u32>(), any::<u16>(), any::<u16>()).prop_map(
        |(src_ip_dec, dst_ip_dec, src_port, dst_port)| PacketFeatures {
            src_ip_dec,
            dst_ip_dec,
            src_port,
            dst_port,
        },
    )
}

fn arb_params() -> impl Strategy<Value = BoundParams> {
    (
        1u64..1_000_000,
        0.001f64..=1.0,
        0.5f64..=1.0,
        0.01f64..100.0,
        0.01f64..100.0,
        0.0f64..0.5,
        0.0f64..0.5,
        0.0f64..0.5,
        0.01f64..10.0,
        1e-6f64..1.0,
    )
        .prop_map(
            |(n, lambda, alpha, cap_fl, cap_rp, eps_fl, eps_rp, eps_pk, k_weight, c_dpi)| {
                BoundParams {
                    n,
                    lambda,
                    alpha,
                    cap_fl,
                    cap_rp,
                    eps_fl,
                    eps_rp,
                    eps_pk,
                    k_weight,
                    c_dpi,
                }
            },
        )
}

proptest! {
    #[test]
    fn flow_key_is_direction_symmetric(
        a_ip: u32, b_ip: u32, a_port: u16, b_port: u16
    ) {
        let pkt = |src_ip: u32, src_port, dst_ip: u32, dst_port| Packet {
            timestamp: 0.0,
            src_ip: src_ip.into(),
            dst_ip: dst_ip.into(),
            src_port,
            dst_port,
            payload_len: 1,
            tcp_flags: 0,
            direction: None,
        };
        let fwd = canonical_flow_key(&pkt(a_ip, a_port, b_ip, b_port));
        let rev = canonical_flow_key(&pkt(b_ip, b_port, a_ip, a_port));
        prop_assert_eq!(fwd, rev);
    }

    #[test]
    fn bounds_are_nonnegative_and_cost_exceeds_dpi_bill(p in arb_params()) {
        prop_assert!(p.validate().is_ok());
        prop_assert!(teacher_bound(&p) >= 0.0);
        prop_assert!(fphtc_bound(&p) >= 0.0);
        prop_assert!(packet_bound(&p) >= 0.0);
        let cost = total_cost(&p, p.lambda);
        prop_assert!(cost >= p.n as f64 * p.lambda * p.c_dpi);
        let opt = optimal_lambda(&p);
        prop_assert!(opt.lambda > 0.0 && opt.lambda <= 1.0);
    }

    #[test]
    fn rules_partition_for_random_trees(
        seed in 0u64..1000,
        probes in proptest::collection::vec(arb_features(), 50)
    ) {
        // a small tree trained on pseudo-random consistent records
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 33) as u32
        };
        let records: Vec<PacketRecord> = (0..60)
            .map(|_| {
                let f = PacketFeatures {
                    src_ip_dec: next() % 1000,
                    dst_ip_dec: next() % 1000,
                    src_port: (next() % 100) as u16,
                    dst_port: (next() % 100) as u16,
                };
                let label = CoSLabel::decode(((f.src_ip_dec + f.src_port as u32) % 3) as usize)
                    .unwrap();
                PacketRecord { features: f, label }
            })
            .collect();
        let tree = train_cart(&records, &CartConfig::default(), 0).unwrap();
        let policy = compile_rules(&tree);
        prop_assert_eq!(policy.rules.len(), tree.leaf_count());
        for f in &probes {
            let hits = policy.rules.iter().filter(|r| r.matches(f)).count();
            prop_assert_eq!(hits, 1);
            prop_assert_eq!(policy.lookup(f).unwrap().action, classify(&tree, f));
        }
    }
}
