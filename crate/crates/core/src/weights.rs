//! Model weight file (`APWT`).
//!
//! Layout, integers little-endian: magic `APWT`, u32 version, u32 length and
//! bytes of the model configuration as JSON, u32 entry count, then per entry
//! u32 name length, name, u32 rank, u32 dims, u64 payload byte offset. The
//! payload follows: f32 arrays in manifest order. Parameters come first in
//! registration order, then `<norm>.running_mean` / `<norm>.running_var`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ResNetConfig, ResNetModel};

pub const MAGIC: &[u8; 4] = b"APWT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

fn arrays(model: &ResNetModel<f32>) -> Vec<(String, Vec<usize>, &[f32])> {
    let mut out: Vec<(String, Vec<usize>, &[f32])> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.tensor.shape().to_vec(), p.tensor.data()))
        .collect();
    for n in model.norm_stats() {
        let c = n.state.running_mean.len();
        out.push((format!("{}.running_mean", n.name), vec![c], &n.state.running_mean));
        out.push((format!("{}.running_var", n.name), vec![c], &n.state.running_var));
    }
    out
}

pub fn to_bytes(model: &ResNetModel<f32>) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(model.config())
        .map_err(|e| Error::Artifact(format!("cannot encode model configuration: {e}")))?;
    let arrays = arrays(model);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, shape, data) in &arrays {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 4 * data.len() as u64;
    }
    for (_, _, data) in &arrays {
        for v in *data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Artifact(format!("weight file truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

/// Parses the header: model configuration and manifest.
pub fn read_manifest(bytes: &[u8]) -> Result<(ResNetConfig, Vec<ManifestEntry>, usize)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Artifact(format!("not a weight file (magic {magic:?})")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Artifact(format!("weight file version {version}, expected {VERSION}")));
    }
    let len = r.u32("configuration length")? as usize;
    let config: ResNetConfig = serde_json::from_slice(r.take(len, "configuration")?)
        .map_err(|e| Error::Artifact(format!("weight file configuration: {e}")))?;
    let count = r.u32("entry count")? as usize;
    let mut entries = Vec::new();
    for k in 0..count {
        let what = format!("manifest entry {k}");
        let len = r.u32(&what)? as usize;
        let name = String::from_utf8(r.take(len, &what)?.to_vec())
            .map_err(|_| Error::Artifact(format!("{what}: name is not UTF-8")))?;
        let rank = r.u32(&what)? as usize;
        if rank > 8 {
            return Err(Error::Artifact(format!("{what} ({name}): implausible rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32(&what).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let offset = r.u64(&what)?;
        entries.push(ManifestEntry { name, shape, offset });
    }
    Ok((config, entries, r.pos))
}

pub fn from_bytes(bytes: &[u8]) -> Result<ResNetModel<f32>> {
    let (config, manifest, payload_start) = read_manifest(bytes)?;
    config
        .validate()
        .map_err(|e| Error::Artifact(format!("weight file configuration is invalid: {e}")))?;
    let mut model = ResNetModel::<f32>::build(&config, 0)?;
    let expected: Vec<(String, Vec<usize>)> =
        arrays(&model).into_iter().map(|(n, s, _)| (n, s)).collect();
    if manifest.len() != expected.len() {
        return Err(Error::Artifact(format!(
            "manifest lists {} arrays, the configured model has {}",
            manifest.len(),
            expected.len()
        )));
    }
    let payload = &bytes[payload_start..];
    let mut values: Vec<Vec<f32>> = Vec::with_capacity(manifest.len());
    let mut next = 0u64;
    for (entry, (name, shape)) in manifest.iter().zip(&expected) {
        if &entry.name != name || &entry.shape != shape {
            return Err(Error::Artifact(format!(
                "manifest entry {} {:?} does not match model array {} {:?}",
                entry.name, entry.shape, name, shape
            )));
        }
        if entry.offset != next {
            return Err(Error::Artifact(format!(
                "manifest entry {} has offset {}, expected {next}",
                entry.name, entry.offset
            )));
        }
        let n: usize = shape.iter().product();
        let start = entry.offset as usize;
        let raw = payload.get(start..start + 4 * n).ok_or_else(|| {
            Error::Artifact(format!("payload too short for {}", entry.name))
        })?;
        values.push(
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        );
        next += 4 * n as u64;
    }
    if payload.len() as u64 != next {
        return Err(Error::Artifact(format!(
            "payload has {} bytes, manifest describes {next}",
            payload.len()
        )));
    }
    let mut values = values.into_iter();
    for p in model.params_mut() {
        if let Some(v) = values.next() {
            p.tensor.data_mut().copy_from_slice(&v);
        }
    }
    for n in model.norm_stats_mut() {
        if let (Some(mean), Some(var)) = (values.next(), values.next()) {
            n.state.running_mean = mean;
            n.state.running_var = var;
        }
    }
    Ok(model)
}

pub fn save(model: &ResNetModel<f32>, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ResNetModel<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Artifact(m) => Error::Artifact(format!("{}: {m}", path.display())),
        other => other,
    })
}
