//! Classic pcap read/write. Reading accepts both byte orders and link types
//! Ethernet (1) and raw IPv4 (101); only TCP-over-IPv4 packets become
//! [`Packet`]s, everything else is counted and skipped. Writing emits raw-IPv4
//! records with the payload truncated (`incl_len` covers the headers only,
//! `orig_len` preserves the true length), so payload sizes round-trip without
//! storing payload bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};

use crate::traffic_model::Packet;
use crate::{Error, Result};

const MAGIC_LE: u32 = 0xa1b2_c3d4;
const LINKTYPE_ETHERNET: u32 = 1;
const LINKTYPE_RAW_IPV4: u32 = 101;
const IP_HDR: usize = 20;
const TCP_HDR: usize = 20;

#[derive(Debug, Clone)]
pub struct PcapRead {
    pub packets: Vec<Packet>,
    /// Non-TCP / non-IPv4 packets skipped.
    pub skipped_packets: usize,
    /// Records cut short by file truncation.
    pub truncated_records: usize,
}

pub fn write_pcap(path: &Path, packets: &[Packet]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_u32::<LittleEndian>(MAGIC_LE)?;
    w.write_u16::<LittleEndian>(2)?;
    w.write_u16::<LittleEndian>(4)?;
    w.write_u32::<LittleEndian>(0)?; // thiszone
    w.write_u32::<LittleEndian>(0)?; // sigfigs
    w.write_u32::<LittleEndian>(65535)?; // snaplen
    w.write_u32::<LittleEndian>(LINKTYPE_RAW_IPV4)?;

    for p in packets {
        let ts_sec = p.timestamp.floor() as u32;
        let ts_usec = ((p.timestamp - ts_sec as f64) * 1e6).round() as u32;
        let (ts_sec, ts_usec) = if ts_usec >= 1_000_000 {
            (ts_sec + 1, 0)
        } else {
            (ts_sec, ts_usec)
        };
        let total = IP_HDR + TCP_HDR + p.payload_len as usize;
        w.write_u32::<LittleEndian>(ts_sec)?;
        w.write_u32::<LittleEndian>(ts_usec)?;
        w.write_u32::<LittleEndian>((IP_HDR + TCP_HDR) as u32)?;
        w.write_u32::<LittleEndian>(total as u32)?;

        let mut hdr = [0u8; IP_HDR + TCP_HDR];
        hdr[0] = 0x45;
        BigEndian::write_u16(&mut hdr[2..4], total as u16);
        hdr[8] = 64; // ttl
        hdr[9] = 6; // TCP
        hdr[12..16].copy_from_slice(&p.src_ip.octets());
        hdr[16..20].copy_from_slice(&p.dst_ip.octets());
        BigEndian::write_u16(&mut hdr[20..22], p.src_port);
        BigEndian::write_u16(&mut hdr[22..24], p.dst_port);
        hdr[32] = 5 << 4; // data offset
        hdr[33] = p.tcp_flags;
        BigEndian::write_u16(&mut hdr[34..36], 65535); // window
        w.write_all(&hdr)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pcap(path: &Path) -> Result<PcapRead> {
    let mut r = BufReader::new(File::open(path)?);
    let mut gh = [0u8; 24];
    r.read_exact(&mut gh)
        .map_err(|_| Error::PcapFormat("file shorter than global header".into()))?;
    let magic = LittleEndian::read_u32(&gh[0..4]);
    let big_endian = match magic {
        MAGIC_LE => false,
        m if m.swap_bytes() == MAGIC_LE => true,
        m => return Err(Error::PcapFormat(format!("bad magic 0x{m:08x}"))),
    };
    let rd32 = |b: &[u8]| {
        if big_endian {
            BigEndian::read_u32(b)
        } else {
            LittleEndian::read_u32(b)
        }
    };
    let linktype = rd32(&gh[20..24]);
    let link_overhead = match linktype {
        LINKTYPE_ETHERNET => 14,
        LINKTYPE_RAW_IPV4 => 0,
        lt => return Err(Error::PcapFormat(format!("unsupported link type {lt}"))),
    };

    let mut packets = Vec::new();
    let mut skipped = 0usize;
    let mut truncated = 0usize;
    loop {
        let mut rh = [0u8; 16];
        // fill fully: a plain read may stop short at the buffer boundary
        let mut filled = 0;
        while filled < rh.len() {
            let n = r.read(&mut rh[filled..])?;
            if n == 0 {
                break;
            }
            filled += n;
        }
        match filled {
            0 => break,
            16 => {}
            _ => {
                truncated += 1;
                break;
            }
        }
        let ts_sec = rd32(&rh[0..4]);
        let ts_usec = rd32(&rh[4..8]);
        let incl_len = rd32(&rh[8..12]) as usize;
        let orig_len = rd32(&rh[12..16]) as usize;
        let mut data = vec![0u8; incl_len];
        if r.read_exact(&mut data).is_err() {
            truncated += 1;
            break;
        }
        if incl_len < link_overhead + IP_HDR + TCP_HDR {
            skipped += 1;
            continue;
        }
        let ip = &data[link_overhead..];
        if ip[0] >> 4 != 4 {
            skipped += 1;
            continue;
        }
        let ihl = ((ip[0] & 0x0f) as usize) * 4;
        if ip[9] != 6 || ip.len() < ihl + TCP_HDR {
            skipped += 1;
            continue;
        }
        let tcp = &ip[ihl..];
        let data_off = ((tcp[12] >> 4) as usize) * 4;
        let payload = orig_len.saturating_sub(link_overhead + ihl + data_off);
        packets.push(Packet {
            timestamp: ts_sec as f64 + ts_usec as f64 * 1e-6,
            src_ip: Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]),
            dst_ip: Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]),
            src_port: BigEndian::read_u16(&tcp[0..2]),
            dst_port: BigEndian::read_u16(&tcp[2..4]),
            payload_len: payload as u32,
            tcp_flags: tcp[13],
            direction: None,
        });
    }
    Ok(PcapRead {
        packets,
        skipped_packets: skipped,
        truncated_records: truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic_model::TCP_ACK;
    use tempfile::tempdir;

    fn pkt(ts: f64, len: u32) -> Packet {
        Packet {
            timestamp: ts,
            src_ip: Ipv4Addr::new(10, 0, 0, 1),
            dst_ip: Ipv4Addr::new(10, 0, 0, 2),
            src_port: 4321,
            dst_port: 443,
            payload_len: len,
            tcp_flags: TCP_ACK,
            direction: None,
        }
    }

    #[test]
    fn round_trip_count_timestamps_tuples() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.pcap");
        let pkts: Vec<Packet> = (0..50)
            .map(|i| pkt(1_000_000.0 + i as f64 * 0.000_123, 100 + i))
            .collect();
        write_pcap(&path, &pkts).unwrap();
        let rd = read_pcap(&path).unwrap();
        assert_eq!(rd.packets.len(), pkts.len());
        assert_eq!(rd.skipped_packets, 0);
        for (a, b) in pkts.iter().zip(&rd.packets) {
            assert!((a.timestamp - b.timestamp).abs() < 1e-6);
            assert_eq!(a.src_ip, b.src_ip);
            assert_eq!(a.dst_ip, b.dst_ip);
            assert_eq!(a.src_port, b.src_port);
            assert_eq!(a.dst_port, b.dst_port);
            assert_eq!(a.payload_len, b.payload_len);
            assert_eq!(a.tcp_flags, b.tcp_flags);
        }
    }

    #[test]
    fn empty_after_header_is_empty() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("e.pcap");
        write_pcap(&path, &[]).unwrap();
        let rd = read_pcap(&path).unwrap();
        assert!(rd.packets.is_empty());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.pcap");
        std::fs::write(&path, [0u8; 24]).unwrap();
        assert!(matches!(read_pcap(&path), Err(Error::PcapFormat(_))));
    }

    #[test]
    fn udp_packets_skipped() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("udp.pcap");
        write_pcap(&path, &[pkt(0.0, 10)]).unwrap();
        // flip the protocol byte of the single record to UDP (17)
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[24 + 16 + 9] = 17;
        std::fs::write(&path, &bytes).unwrap();
        let rd = read_pcap(&path).unwrap();
        assert!(rd.packets.is_empty());
        assert_eq!(rd.skipped_packets, 1);
    }

    #[test]
    fn truncated_record_partial_read() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.pcap");
        write_pcap(&path, &[pkt(0.0, 10), pkt(1.0, 10)]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        let rd = read_pcap(&path).unwrap();
        assert_eq!(rd.packets.len(), 1);
        assert_eq!(rd.truncated_records, 1);
    }
}
