//! Binary spectrogram cache (`APNE`).
//!
//! Layout, all integers little-endian: magic `APNE`, u32 version, u32 n_mels,
//! u32 n_frames, u32 count, then per entry u32 id length, UTF-8 id, u32 chunk
//! index, u8 label (1 = apnea) and `n_mels * n_frames` f32 values, mel-major.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::ingest::{ChunkLabel, ClassCounts};

pub const MAGIC: &[u8; 4] = b"APNE";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub record_id: String,
    pub chunk_index: u32,
    pub label: ChunkLabel,
    pub values: Vec<f32>,
}

impl CacheEntry {
    pub fn new(spectrogram: Spectrogram, label: ChunkLabel) -> Self {
        CacheEntry {
            record_id: spectrogram.record_id,
            chunk_index: spectrogram.chunk_index,
            label,
            values: spectrogram.values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramCache {
    pub n_mels: usize,
    pub n_frames: usize,
    pub entries: Vec<CacheEntry>,
}

impl SpectrogramCache {
    pub fn new(n_mels: usize, n_frames: usize) -> Self {
        SpectrogramCache {
            n_mels,
            n_frames,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, entry: CacheEntry) -> Result<()> {
        if entry.values.len() != self.n_mels * self.n_frames {
            return Err(Error::Data(format!(
                "spectrogram {}#{} has {} values, expected {}x{}",
                entry.record_id,
                entry.chunk_index,
                entry.values.len(),
                self.n_mels,
                self.n_frames
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<ChunkLabel> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn counts(&self) -> ClassCounts {
        ClassCounts::of(self.entries.iter().map(|e| &e.label))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let u32_of = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| Error::Data(format!("{what} {v} exceeds the cache format")))
        };
        let mut out = Vec::with_capacity(20 + self.entries.len() * (13 + 4 * self.n_mels * self.n_frames));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32_of(self.n_mels, "n_mels")?.to_le_bytes());
        out.extend_from_slice(&u32_of(self.n_frames, "n_frames")?.to_le_bytes());
        out.extend_from_slice(&u32_of(self.entries.len(), "entry count")?.to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&u32_of(e.record_id.len(), "record id length")?.to_le_bytes());
            out.extend_from_slice(e.record_id.as_bytes());
            out.extend_from_slice(&e.chunk_index.to_le_bytes());
            out.push(u8::from(e.label.is_apnea()));
            for v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Artifact(format!("bad spectrogram cache magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Artifact(format!(
                "spectrogram cache version {version}, expected {VERSION}"
            )));
        }
        let n_mels = read_u32(&mut r)? as usize;
        let n_frames = read_u32(&mut r)? as usize;
        let count = read_u32(&mut r)? as usize;
        let n_values = n_mels * n_frames;
        let mut cache = SpectrogramCache::new(n_mels, n_frames);
        let mut raw = vec![0u8; 4 * n_values];
        for _ in 0..count {
            let id_len = read_u32(&mut r)? as usize;
            if id_len > r.len() {
                return Err(truncated());
            }
            let (id, rest) = r.split_at(id_len);
            r = rest;
            let record_id = String::from_utf8(id.to_vec())
                .map_err(|_| Error::Artifact("record id is not valid UTF-8".into()))?;
            let chunk_index = read_u32(&mut r)?;
            let mut label = [0u8; 1];
            read_exact(&mut r, &mut label)?;
            let label = match label[0] {
                0 => ChunkLabel::NonApnea,
                1 => ChunkLabel::Apnea,
                other => return Err(Error::Artifact(format!("invalid label byte {other}"))),
            };
            read_exact(&mut r, &mut raw)?;
            let values = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            cache.entries.push(CacheEntry {
                record_id,
                chunk_index,
                label,
                values,
            });
        }
        if !r.is_empty() {
            return Err(Error::Artifact(format!("{} trailing bytes after cache entries", r.len())));
        }
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Artifact(msg) => Error::Artifact(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

fn truncated() -> Error {
    Error::Artifact("spectrogram cache is truncated".into())
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| truncated())
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> SpectrogramCache {
        let mut c = SpectrogramCache::new(2, 3);
        c.push(CacheEntry {
            record_id: "rec01".into(),
            chunk_index: 7,
            label: ChunkLabel::Apnea,
            values: vec![0.0, 0.5, 1.0, 0.25, 0.75, 1.0],
        })
        .unwrap();
        c
    }

    #[test]
    fn byte_layout() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"APNE");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &5u32.to_le_bytes());
        assert_eq!(&bytes[24..29], b"rec01");
        assert_eq!(&bytes[29..33], &7u32.to_le_bytes());
        assert_eq!(bytes[33], 1);
        assert_eq!(&bytes[34..38], &0.0f32.to_le_bytes());
        assert_eq!(&bytes[38..42], &0.5f32.to_le_bytes());
        assert_eq!(bytes.len(), 34 + 24);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(SpectrogramCache::from_bytes(&bad), Err(Error::Artifact(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(SpectrogramCache::from_bytes(&bad), Err(Error::Artifact(_))));
        assert!(matches!(
            SpectrogramCache::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Artifact(_))
        ));
        let mut bad = bytes.clone();
        bad[33] = 9;
        assert!(matches!(SpectrogramCache::from_bytes(&bad), Err(Error::Artifact(_))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(SpectrogramCache::from_bytes(&long), Err(Error::Artifact(_))));
    }

    #[test]
    fn push_checks_size() {
        let mut c = SpectrogramCache::new(2, 2);
        let e = CacheEntry {
            record_id: "r".into(),
            chunk_index: 0,
            label: ChunkLabel::NonApnea,
            values: vec![0.0; 3],
        };
        assert!(matches!(c.push(e), Err(Error::Data(_))));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.apne");
        let c = sample();
        c.save(&path).unwrap();
        assert_eq!(SpectrogramCache::load(&path).unwrap(), c);
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            n_mels in 1usize..5,
            n_frames in 1usize..5,
            raw in proptest::collection::vec(("[a-z0-9]{0,8}", any::<u32>(), any::<bool>(), any::<u32>()), 0..6),
        ) {
            let mut c = SpectrogramCache::new(n_mels, n_frames);
            for (id, idx, apnea, bits) in raw {
                let values = (0..n_mels * n_frames)
                    .map(|k| f32::from_bits(bits.wrapping_add(k as u32)))
                    .collect();
                c.push(CacheEntry { record_id: id, chunk_index: idx, label: ChunkLabel::from_apnea(apnea), values }).unwrap();
            }
            let bytes = c.to_bytes().unwrap();
            let back = SpectrogramCache::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
            prop_assert_eq!(back.entries.len(), c.entries.len());
        }
    }
}
