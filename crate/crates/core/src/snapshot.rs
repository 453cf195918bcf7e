//! Bit-exact binary snapshots of per-rank ensemble slices.
//!
//! A snapshot file is a fixed little-endian header, the amplitude payload
//! in species / theta / phi / component order with the full re[E] array
//! followed by the full im[E] array per component, and a trailing CRC-32
//! of the payload. The payload order matches the in-memory SoA layout, so
//! serialization doubles as a layout check.
//!
//! Direct mode: every rank writes its own file. Staged mode: an
//! accelerator rank encodes the same bytes (with `writer_rank` set to its
//! CPU partner) and ships them through the exchange hub; the partner
//! validates the CRC and writes the file under the owner's name.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::state::{AmpBlock, Ensemble};
use crate::topology::ExchangeHub;
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"XFLT";
pub const FORMAT_VERSION: u32 = 1;
/// magic + version + 3 x u32 dims + 3 x u64 + f64 radius + 2 x u32 ranks.
pub const HEADER_LEN: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotHeader {
    pub n_flavors: u32,
    pub n_phi: u32,
    pub n_energy: u32,
    pub n_theta_local: u64,
    pub global_theta_offset: u64,
    pub step_index: u64,
    pub radius: f64,
    pub writer_rank: u32,
    pub owner_rank: u32,
}

impl SnapshotHeader {
    /// Amplitude payload length in bytes: both species, re and im planes.
    pub fn payload_len(&self) -> usize {
        2 * self.n_theta_local as usize
            * self.n_phi as usize
            * self.n_flavors as usize
            * 2
            * self.n_energy as usize
            * 8
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        let mut at = 0usize;
        let mut put = |bytes: &[u8]| {
            out[at..at + bytes.len()].copy_from_slice(bytes);
            at += bytes.len();
        };
        put(&MAGIC);
        put(&FORMAT_VERSION.to_le_bytes());
        put(&self.n_flavors.to_le_bytes());
        put(&self.n_phi.to_le_bytes());
        put(&self.n_energy.to_le_bytes());
        put(&self.n_theta_local.to_le_bytes());
        put(&self.global_theta_offset.to_le_bytes());
        put(&self.step_index.to_le_bytes());
        put(&self.radius.to_le_bytes());
        put(&self.writer_rank.to_le_bytes());
        put(&self.owner_rank.to_le_bytes());
        debug_assert_eq!(at, HEADER_LEN);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<SnapshotHeader> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Integrity(format!(
                "snapshot truncated: {} bytes is shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::Integrity(format!(
                "bad snapshot magic {:02x?} (expected \"XFLT\")",
                &bytes[0..4]
            )));
        }
        let mut at = 4usize;
        let u32_at = |at: &mut usize| {
            let v = u32::from_le_bytes(bytes[*at..*at + 4].try_into().unwrap());
            *at += 4;
            v
        };
        let version = u32_at(&mut at);
        if version != FORMAT_VERSION {
            return Err(Error::Integrity(format!(
                "unsupported snapshot format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let n_flavors = u32_at(&mut at);
        let n_phi = u32_at(&mut at);
        let n_energy = u32_at(&mut at);
        let u64_at = |at: &mut usize| {
            let v = u64::from_le_bytes(bytes[*at..*at + 8].try_into().unwrap());
            *at += 8;
            v
        };
        let n_theta_local = u64_at(&mut at);
        let global_theta_offset = u64_at(&mut at);
        let step_index = u64_at(&mut at);
        let radius = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        at += 8;
        let writer_rank = u32_at(&mut at);
        let owner_rank = u32_at(&mut at);
        debug_assert_eq!(at, HEADER_LEN);
        Ok(SnapshotHeader {
            n_flavors,
            n_phi,
            n_energy,
            n_theta_local,
            global_theta_offset,
            step_index,
            radius,
            writer_rank,
            owner_rank,
        })
    }
}

/// CRC-32, polynomial 0xEDB88320, standard reflected form.
pub fn crc32(bytes: &[u8]) -> u32 {
    static TABLE: std::sync::OnceLock<[u32; 256]> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut table = [0u32; 256];
        for (i, slot) in table.iter_mut().enumerate() {
            let mut c = i as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 {
                    0xEDB8_8320 ^ (c >> 1)
                } else {
                    c >> 1
                };
            }
            *slot = c;
        }
        table
    });
    let mut c = 0xFFFF_FFFFu32;
    for &b in bytes {
        c = table[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    c ^ 0xFFFF_FFFF
}

/// Decoded snapshot: header plus the amplitude block in the same flat
/// order the owning ensemble slice uses.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub header: SnapshotHeader,
    pub amps: AmpBlock,
}

/// Serialize a slice. Pure: the same slice always yields the same bytes.
pub fn encode_snapshot(
    ensemble: &Ensemble,
    step_index: u64,
    writer_rank: u32,
    owner_rank: u32,
) -> Vec<u8> {
    let grid = ensemble.grid();
    let header = SnapshotHeader {
        n_flavors: grid.n_flavors as u32,
        n_phi: grid.n_phi as u32,
        n_energy: grid.n_energy as u32,
        n_theta_local: ensemble.n_theta_local() as u64,
        global_theta_offset: ensemble.theta_start() as u64,
        step_index,
        radius: ensemble.r_current,
        writer_rank,
        owner_rank,
    };
    let payload_len = header.payload_len();
    let mut out = Vec::with_capacity(HEADER_LEN + payload_len + 4);
    out.extend_from_slice(&header.to_bytes());

    let amps = ensemble.amps();
    let ne = grid.n_energy;
    debug_assert_eq!(amps.len() * 2 * 8, payload_len);
    // One (species, theta, phi, component) block at a time: the energy
    // axis is contiguous in both the re and im planes.
    for block in 0..amps.len() / ne {
        for &x in &amps.re[block * ne..(block + 1) * ne] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for &x in &amps.im[block * ne..(block + 1) * ne] {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32(&out[HEADER_LEN..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Parse and validate header, length, and payload CRC.
pub fn decode_snapshot(bytes: &[u8]) -> Result<Snapshot> {
    let header = SnapshotHeader::from_bytes(bytes)?;
    let payload_len = header.payload_len();
    let want = HEADER_LEN + payload_len + 4;
    if bytes.len() != want {
        return Err(Error::Integrity(format!(
            "snapshot truncated or oversized: {} bytes, header dims imply {want}",
            bytes.len()
        )));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
    let stored = u32::from_le_bytes(bytes[want - 4..].try_into().unwrap());
    let actual = crc32(payload);
    if stored != actual {
        return Err(Error::Integrity(format!(
            "snapshot CRC mismatch: stored {stored:#010x}, computed {actual:#010x}"
        )));
    }

    let ne = header.n_energy as usize;
    let amp_len = payload_len / 16;
    let mut amps = AmpBlock::zeros(amp_len);
    let mut at = 0usize;
    let read_f64 = |at: &mut usize| {
        let v = f64::from_le_bytes(payload[*at..*at + 8].try_into().unwrap());
        *at += 8;
        v
    };
    for block in 0..amp_len / ne {
        for k in 0..ne {
            amps.re[block * ne + k] = read_f64(&mut at);
        }
        for k in 0..ne {
            amps.im[block * ne + k] = read_f64(&mut at);
        }
    }
    Ok(Snapshot { header, amps })
}

pub fn snapshot_file_name(step_index: u64, owner_rank: u32) -> String {
    format!("snap_{step_index:08}_{owner_rank:04}.xflt")
}

/// Atomically write already-encoded snapshot bytes into `dir` under the
/// canonical name derived from the embedded header. The CRC is verified
/// first so a corrupt transmission never produces a valid-named file.
pub fn write_encoded(bytes: &[u8], dir: &Path) -> Result<PathBuf> {
    let snap = decode_snapshot(bytes)?;
    let name = snapshot_file_name(snap.header.step_index, snap.header.owner_rank);
    let path = dir.join(&name);
    let tmp = dir.join(format!(".{name}.tmp{}", snap.header.writer_rank));
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Direct mode: the owning rank writes its own slice.
pub fn write_direct(
    ensemble: &Ensemble,
    step_index: u64,
    rank: u32,
    dir: &Path,
) -> Result<PathBuf> {
    write_encoded(&encode_snapshot(ensemble, step_index, rank, rank), dir)
}

/// Staged mode, sender side: encode with the stager recorded as writer
/// and ship the bytes through the hub. The file appears once the stager
/// calls [`stage_and_write`].
pub fn send_staged(
    hub: &ExchangeHub,
    ensemble: &Ensemble,
    step_index: u64,
    owner_rank: u32,
    stager_rank: u32,
) -> Result<()> {
    let bytes = encode_snapshot(ensemble, step_index, stager_rank, owner_rank);
    hub.send_bytes(owner_rank as usize, stager_rank as usize, bytes)
}

/// Staged mode, stager side: receive `expected` staged payloads and write
/// them in ascending owner-rank order. Returns the written paths.
pub fn stage_and_write(
    hub: &ExchangeHub,
    stager_rank: u32,
    expected: usize,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let payloads = hub.recv_bytes(stager_rank as usize, expected)?;
    let mut written = Vec::with_capacity(payloads.len());
    for (_, bytes) in payloads {
        written.push(write_encoded(&bytes, dir)?);
    }
    Ok(written)
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_snapshot(&bytes)
}

/// Append one line to the run manifest in `dir`.
pub fn append_manifest(dir: &Path, line: &str) -> Result<()> {
    let path = dir.join("manifest.txt");
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(file, "{line}").map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridConfig};
    use crate::state::{init_slice, Spectra};
    use std::sync::Arc;

    fn slice(n_theta: usize, start: usize, local: usize) -> Ensemble {
        let grid = Arc::new(
            build_grid(&GridConfig {
                n_theta,
                n_phi: 1,
                n_energy: 4,
                ..GridConfig::default()
            })
            .unwrap(),
        );
        init_slice(grid, &Spectra::default(), start, local).unwrap()
    }

    #[test]
    fn payload_length_formula() {
        let ens = slice(4, 1, 2);
        let bytes = encode_snapshot(&ens, 0, 0, 0);
        // 2 species x 2 theta x 1 phi x 2 flavors x 2 planes x 4 E x 8 B = 512
        assert_eq!(bytes.len(), HEADER_LEN + 512 + 4);
    }

    #[test]
    fn payload_scales_linearly_in_theta_bins() {
        let a = encode_snapshot(&slice(300, 0, 100), 0, 0, 0);
        let b = encode_snapshot(&slice(300, 0, 290), 0, 0, 0);
        let pa = a.len() - HEADER_LEN - 4;
        let pb = b.len() - HEADER_LEN - 4;
        assert_eq!(pb * 100, pa * 290);
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ens = slice(6, 2, 3);
        let bytes = encode_snapshot(&ens, 42, 1, 1);
        let snap = decode_snapshot(&bytes).unwrap();
        assert_eq!(snap.amps, *ens.amps());
        assert_eq!(snap.header.step_index, 42);
        assert_eq!(snap.header.global_theta_offset, 2);
        assert_eq!(snap.header.radius, ens.r_current);
    }

    #[test]
    fn known_crc_vector() {
        // standard check value for "123456789"
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32(b""), 0);
    }

    #[test]
    fn file_naming_rule() {
        assert_eq!(snapshot_file_name(100, 3), "snap_00000100_0003.xflt");
    }

    #[test]
    fn flipped_payload_byte_is_a_crc_error() {
        let mut bytes = encode_snapshot(&slice(4, 0, 2), 0, 0, 0);
        bytes[HEADER_LEN + 8] ^= 0x01;
        let err = decode_snapshot(&bytes).unwrap_err();
        assert!(err.to_string().contains("CRC"), "{err}");
    }

    #[test]
    fn truncation_and_magic_errors_are_distinct() {
        let bytes = encode_snapshot(&slice(4, 0, 2), 0, 0, 0);
        let err = decode_snapshot(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");

        let mut bad = bytes.clone();
        bad[0] = b'Y';
        let err = decode_snapshot(&bad).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");

        let mut badver = bytes;
        badver[4] = 99;
        let err = decode_snapshot(&badver).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn write_read_back_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let ens = slice(4, 0, 2);
        let path = write_direct(&ens, 100, 3, dir.path()).unwrap();
        assert_eq!(path.file_name().unwrap(), "snap_00000100_0003.xflt");
        let on_disk = std::fs::read(&path).unwrap();
        assert_eq!(on_disk, encode_snapshot(&ens, 100, 3, 3));
        assert_eq!(read_snapshot(&path).unwrap().amps, *ens.amps());
        // no temp leftovers
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn staged_bytes_match_direct_except_writer_rank() {
        let ens = slice(4, 2, 2);
        let direct = encode_snapshot(&ens, 7, 5, 5);
        let staged = encode_snapshot(&ens, 7, 0, 5);
        assert_eq!(direct[HEADER_LEN..], staged[HEADER_LEN..]);
        let hd = SnapshotHeader::from_bytes(&direct).unwrap();
        let hs = SnapshotHeader::from_bytes(&staged).unwrap();
        assert_eq!(hd.writer_rank, 5);
        assert_eq!(hs.writer_rank, 0);
        assert_eq!(
            SnapshotHeader {
                writer_rank: 0,
                ..hd
            },
            hs
        );
    }

    #[test]
    fn staged_transport_through_hub() {
        let dir = tempfile::tempdir().unwrap();
        let hub = ExchangeHub::new(3);
        let e1 = slice(6, 0, 3);
        let e2 = slice(6, 3, 3);
        send_staged(&hub, &e1, 10, 1, 0).unwrap();
        send_staged(&hub, &e2, 10, 2, 0).unwrap();
        let written = stage_and_write(&hub, 0, 2, dir.path()).unwrap();
        assert_eq!(written.len(), 2);
        assert_eq!(written[0].file_name().unwrap(), "snap_00000010_0001.xflt");
        assert_eq!(written[1].file_name().unwrap(), "snap_00000010_0002.xflt");
        let s1 = read_snapshot(&written[0]).unwrap();
        assert_eq!(s1.header.writer_rank, 0);
        assert_eq!(s1.header.owner_rank, 1);
        assert_eq!(s1.amps, *e1.amps());
    }

    #[test]
    fn corrupted_staged_payload_writes_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let hub = ExchangeHub::new(2);
        let mut bytes = encode_snapshot(&slice(4, 0, 2), 0, 0, 1);
        let n = bytes.len();
        bytes[n - 10] ^= 0xFF;
        hub.send_bytes(1, 0, bytes).unwrap();
        assert!(stage_and_write(&hub, 0, 1, dir.path()).is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
