//! File plumbing: atomic writes and the labeled-shot dataset format.
//!
//! Dataset layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "NMWPGT01"
//! code       u8       0 = toric, 1 = rotated
//! distance   u32
//! n_stab     u32      syndrome length
//! records    u64
//! per record:
//!   seed     u64      shot seed the frame was sampled from
//!   p        f64      physical error rate of the shot
//!   syndrome ceil(n_stab / 8) bytes, bit i of byte i / 8 is stabilizer i
//!   n_def    u32      then n_def u32 defect indices (ascending)
//!   n_pairs  u32      then n_pairs (u32, u32) labeled stabilizer pairs
//!   n_bnd    u32      then n_bnd u32 defects labeled to the boundary
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::decoder::DefectMatching;
use crate::error::{QecError, Result};
use crate::lattice::CodeKind;
use crate::noise::Syndrome;

/// Writes through `fill` into a temporary sibling of `path` and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| QecError::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        fill(&mut w)?;
        w.flush()?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        Ok(())
    })();
    match result {
        Ok(()) => {
            std::fs::rename(&tmp, path)?;
            Ok(())
        }
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e)
        }
    }
}

pub fn write_string_atomic(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
}

pub const DATASET_MAGIC: &[u8; 8] = b"NMWPGT01";

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledRecord {
    pub seed: u64,
    pub p: f64,
    pub syndrome: Syndrome,
    pub matching: DefectMatching,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub code: CodeKind,
    pub distance: usize,
    pub n_stabilizers: usize,
    pub records: Vec<LabeledRecord>,
}

fn code_byte(code: CodeKind) -> u8 {
    match code {
        CodeKind::Toric => 0,
        CodeKind::RotatedSurface => 1,
    }
}

impl Dataset {
    pub fn write_to(&self, w: &mut dyn Write) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&[code_byte(self.code)])?;
        w.write_all(&(self.distance as u32).to_le_bytes())?;
        w.write_all(&(self.n_stabilizers as u32).to_le_bytes())?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        let u32s = |w: &mut dyn Write, xs: &mut dyn Iterator<Item = usize>| -> Result<()> {
            for x in xs {
                w.write_all(&(x as u32).to_le_bytes())?;
            }
            Ok(())
        };
        for rec in &self.records {
            if rec.syndrome.len() != self.n_stabilizers {
                return Err(QecError::SizeMismatch {
                    what: "dataset syndrome",
                    expected: self.n_stabilizers,
                    actual: rec.syndrome.len(),
                });
            }
            w.write_all(&rec.seed.to_le_bytes())?;
            w.write_all(&rec.p.to_le_bytes())?;
            let mut bytes = vec![0u8; self.n_stabilizers.div_ceil(8)];
            for (i, _) in rec.syndrome.0.iter().enumerate().filter(|(_, &b)| b) {
                bytes[i / 8] |= 1 << (i % 8);
            }
            w.write_all(&bytes)?;
            u32s(w, &mut std::iter::once(rec.syndrome.defect_count()))?;
            u32s(w, &mut rec.syndrome.defects())?;
            u32s(w, &mut std::iter::once(rec.matching.pairs.len()))?;
            u32s(w, &mut rec.matching.pairs.iter().flat_map(|&(a, b)| [a, b]))?;
            u32s(w, &mut std::iter::once(rec.matching.boundary.len()))?;
            u32s(w, &mut rec.matching.boundary.iter().copied())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut dyn Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(QecError::Format("not a labeled dataset (bad magic)".into()));
        }
        let code = match read_array::<1>(r)?[0] {
            0 => CodeKind::Toric,
            1 => CodeKind::RotatedSurface,
            b => return Err(QecError::Format(format!("unknown code byte {b}"))),
        };
        let distance = read_u32(r)? as usize;
        let n = read_u32(r)? as usize;
        let count = u64::from_le_bytes(read_array(r)?);
        let mut records = Vec::new();
        for _ in 0..count {
            let seed = u64::from_le_bytes(read_array(r)?);
            let p = f64::from_le_bytes(read_array(r)?);
            let mut bytes = vec![0u8; n.div_ceil(8)];
            r.read_exact(&mut bytes)?;
            let syndrome = Syndrome((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect());
            let n_def = read_u32(r)? as usize;
            let defects = (0..n_def)
                .map(|_| Ok(read_u32(r)? as usize))
                .collect::<Result<Vec<_>>>()?;
            if !defects.iter().copied().eq(syndrome.defects()) {
                return Err(QecError::Format("defect list disagrees with syndrome bits".into()));
            }
            let n_pairs = read_u32(r)? as usize;
            let pairs = (0..n_pairs)
                .map(|_| Ok((read_u32(r)? as usize, read_u32(r)? as usize)))
                .collect::<Result<Vec<_>>>()?;
            let n_bnd = read_u32(r)? as usize;
            let boundary = (0..n_bnd)
                .map(|_| Ok(read_u32(r)? as usize))
                .collect::<Result<Vec<_>>>()?;
            records.push(LabeledRecord {
                seed,
                p,
                syndrome,
                matching: DefectMatching { pairs, boundary },
            });
        }
        Ok(Dataset {
            code,
            distance,
            n_stabilizers: n,
            records,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| self.write_to(w))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

/// Parses a syndrome file: defect stabilizer indices separated by
/// whitespace or commas, `#` starting a comment.
pub fn parse_syndrome(text: &str, n_stabilizers: usize) -> Result<Syndrome> {
    let mut defects = Vec::new();
    for line in text.lines() {
        let body = line.split('#').next().unwrap_or("");
        for tok in body
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
        {
            let s: usize = tok
                .parse()
                .map_err(|_| QecError::Format(format!("syndrome entry {tok:?} is not an index")))?;
            if s >= n_stabilizers {
                return Err(QecError::Format(format!(
                    "defect {s} out of range for {n_stabilizers} stabilizers"
                )));
            }
            defects.push(s);
        }
    }
    defects.sort_unstable();
    if defects.windows(2).any(|w| w[0] == w[1]) {
        return Err(QecError::Format("repeated defect index".into()));
    }
    Ok(Syndrome::from_defects(n_stabilizers, &defects))
}

fn read_array<const N: usize>(r: &mut dyn Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32(r: &mut dyn Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip() {
        let ds = Dataset {
            code: CodeKind::Toric,
            distance: 4,
            n_stabilizers: 32,
            records: vec![
                LabeledRecord {
                    seed: 9,
                    p: 0.1,
                    syndrome: Syndrome::from_defects(32, &[1, 2, 20, 31]),
                    matching: DefectMatching {
                        pairs: vec![(1, 2), (20, 31)],
                        boundary: vec![],
                    },
                },
                LabeledRecord {
                    seed: 10,
                    p: 0.05,
                    syndrome: Syndrome::from_defects(32, &[]),
                    matching: DefectMatching::default(),
                },
            ],
        };
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], DATASET_MAGIC);
        let back = Dataset::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn syndrome_files_parse_indices() {
        let s = parse_syndrome("# two defects\n3, 17\n\n", 32).unwrap();
        assert_eq!(s.defects().collect::<Vec<_>>(), vec![3, 17]);
        assert!(parse_syndrome("40", 32).is_err());
        assert!(parse_syndrome("3 3", 32).is_err());
        assert!(parse_syndrome("x", 32).is_err());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let buf = b"NOTADATA........".to_vec();
        assert!(matches!(
            Dataset::read_from(&mut buf.as_slice()),
            Err(QecError::Format(_))
        ));
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("out.txt");
        write_string_atomic(&path, "first").unwrap();
        write_string_atomic(&path, "second").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
        let leftovers = std::fs::read_dir(path.parent().unwrap()).unwrap().count();
        assert_eq!(leftovers, 1);
    }
}
