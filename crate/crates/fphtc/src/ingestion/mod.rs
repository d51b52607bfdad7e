//! Labeled flow corpora: classic-pcap read/write with a label manifest, a
//! seeded synthetic traffic generator, and the DPI ground-truth oracle.

mod pcap;
mod synthetic;

pub use pcap::{read_pcap, write_pcap, PcapRead};
pub use synthetic::{
    generate_synthetic, preset, preset_names, AppMix, ProfileSet, SyntheticProfile,
};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::traffic_model::{assemble_flows, AppType, Flow};
use crate::{Error, Result};

/// Maps capture files to the application type of every flow inside them.
/// Stands in for a DPI engine on recorded traffic.
#[derive(Debug, Clone, Default)]
pub struct CaptureManifest {
    entries: BTreeMap<PathBuf, AppType>,
}

impl CaptureManifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<PathBuf>, app: AppType) {
        self.entries.insert(path.into(), app);
    }

    pub fn get(&self, path: &Path) -> Option<AppType> {
        self.entries.get(path).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Path, AppType)> {
        self.entries.iter().map(|(p, a)| (p.as_path(), *a))
    }

    /// Parse the tab-separated `path<TAB>APPTYPE` table.
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = CaptureManifest::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (path, app) = line.split_once('\t').ok_or_else(|| {
                Error::Manifest(format!("line {}: expected `path<TAB>APPTYPE`", i + 1))
            })?;
            let app: AppType = app
                .parse()
                .map_err(|e| Error::Manifest(format!("line {}: {e}", i + 1)))?;
            m.insert(path.trim(), app);
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (p, a) in self.entries() {
            out.push_str(&format!("{}\t{}\n", p.display(), a));
        }
        out
    }
}

/// Flows assembled from one capture, with skip accounting.
#[derive(Debug, Clone)]
pub struct CaptureRead {
    pub flows: Vec<Flow>,
    pub skipped_packets: usize,
    pub truncated_records: usize,
    pub dropped_zero_payload_flows: usize,
}

/// Read a classic pcap file, assemble bidirectional TCP flows, and attach the
/// manifest's application label to every flow.
pub fn read_capture(path: &Path, manifest: &CaptureManifest) -> Result<CaptureRead> {
    let app = manifest.get(path);
    let rd = read_pcap(path)?;
    let asm = assemble_flows(&rd.packets);
    let mut flows = asm.flows;
    for f in &mut flows {
        f.true_app = app;
    }
    Ok(CaptureRead {
        flows,
        skipped_packets: rd.skipped_packets,
        truncated_records: rd.truncated_records,
        dropped_zero_payload_flows: asm.dropped_flows,
    })
}

/// The DPI stand-in: reveals the flow's ground-truth application. Callers
/// account a cost of `c_DPI` per invocation.
pub fn dpi_label(flow: &Flow) -> Result<AppType> {
    flow.true_app.ok_or(Error::MissingGroundTruth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic_model::canonical_flow_key;
    use crate::traffic_model::Packet;
    use std::net::Ipv4Addr;

    #[test]
    fn manifest_round_trip() {
        let text = "a.pcap\tVOIP\nb.pcap\tMAIL\n";
        let m = CaptureManifest::parse(text).unwrap();
        assert_eq!(m.get(Path::new("a.pcap")), Some(AppType::Voip));
        assert_eq!(m.get(Path::new("b.pcap")), Some(AppType::Mail));
        assert_eq!(m.to_text(), text);
    }

    #[test]
    fn manifest_rejects_bad_rows() {
        assert!(CaptureManifest::parse("a.pcap VOIP").is_err());
        assert!(CaptureManifest::parse("a.pcap\tBOGUS").is_err());
    }

    #[test]
    fn dpi_oracle_identity_and_error() {
        let p = Packet {
            timestamp: 0.0,
            src_ip: Ipv4Addr::new(10, 0, 0, 1),
            dst_ip: Ipv4Addr::new(10, 0, 0, 2),
            src_port: 1000,
            dst_port: 80,
            payload_len: 5,
            tcp_flags: 0,
            direction: None,
        };
        let mut f = Flow {
            key: canonical_flow_key(&p),
            packets: vec![p],
            true_app: Some(AppType::Voip),
            teacher_label: None,
        };
        assert_eq!(dpi_label(&f).unwrap(), AppType::Voip);
        f.true_app = None;
        assert!(dpi_label(&f).is_err());
    }
}
