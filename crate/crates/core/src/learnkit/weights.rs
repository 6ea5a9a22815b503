//! `UVWT` weight container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "UVWT" | u32 version=1 | u8 kind | u32 entry count | entries... | u32 meta len | meta
//! ```
//!
//! Kind 0 (MLP bundle) entries are `u32 name len, name, u32 layer count L,
//! (L+1) x u32 dims, f32 params` with each layer's row-major weight followed
//! by its bias. Kind 1 (tensor blocks) entries are `u32 name len, name,
//! u32 rows, u32 cols, f32 data`. The trailing metadata is a UTF-8 JSON object
//! of string values (kind label, dims, seeds, embedded config text).

use std::collections::BTreeMap;
use std::path::Path;

use super::matrix::Matrix;
use super::mlp::{Layer, Mlp};
use crate::binio::{u32_of, ByteReader, ByteWriter};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"UVWT";
const VERSION: u32 = 1;
const MAX_NAME: u32 = 4096;
const MAX_LAYERS: u32 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    MlpBundle = 0,
    TensorBlocks = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Entries {
    Mlps(Vec<(String, Mlp<f32>)>),
    Blocks(Vec<(String, Matrix<f32>)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub entries: Entries,
    pub meta: BTreeMap<String, String>,
}

impl WeightFile {
    pub fn mlps(nets: Vec<(String, Mlp<f32>)>) -> Self {
        WeightFile {
            entries: Entries::Mlps(nets),
            meta: BTreeMap::new(),
        }
    }

    pub fn blocks(blocks: Vec<(String, Matrix<f32>)>) -> Self {
        WeightFile {
            entries: Entries::Blocks(blocks),
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn kind(&self) -> WeightKind {
        match self.entries {
            Entries::Mlps(_) => WeightKind::MlpBundle,
            Entries::Blocks(_) => WeightKind::TensorBlocks,
        }
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Missing(format!("weight metadata key `{key}`")))
    }

    pub fn mlp(&self, name: &str) -> Option<&Mlp<f32>> {
        match &self.entries {
            Entries::Mlps(nets) => nets.iter().find(|(n, _)| n == name).map(|(_, m)| m),
            Entries::Blocks(_) => None,
        }
    }

    /// Fetches a network and checks it has the shape the caller configured.
    pub fn mlp_with_dims(&self, name: &str, expected: &[usize]) -> Result<Mlp<f32>> {
        let net = self
            .mlp(name)
            .ok_or_else(|| Error::Missing(format!("network `{name}` in weight file")))?;
        let dims = net.dims();
        if dims != expected {
            return Err(Error::Dimension(format!(
                "network `{name}` has dims {dims:?}, expected {expected:?}"
            )));
        }
        Ok(net.clone())
    }

    pub fn block(&self, name: &str) -> Result<&Matrix<f32>> {
        match &self.entries {
            Entries::Blocks(b) => b.iter().find(|(n, _)| n == name).map(|(_, m)| m),
            Entries::Mlps(_) => None,
        }
        .ok_or_else(|| Error::Missing(format!("block `{name}` in weight file")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = ByteWriter::create(path)?;
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.u8(self.kind() as u8)?;
        match &self.entries {
            Entries::Mlps(nets) => {
                w.u32(u32_of(nets.len(), "net count")?)?;
                for (name, net) in nets {
                    write_name(&mut w, name)?;
                    let dims = net.dims();
                    w.u32(u32_of(net.layers.len(), "layer count")?)?;
                    for d in &dims {
                        w.u32(u32_of(*d, "layer dim")?)?;
                    }
                    for layer in &net.layers {
                        w.f32s(&layer.weight.data)?;
                        w.f32s(&layer.bias)?;
                    }
                }
            }
            Entries::Blocks(blocks) => {
                w.u32(u32_of(blocks.len(), "block count")?)?;
                for (name, m) in blocks {
                    write_name(&mut w, name)?;
                    w.u32(u32_of(m.rows, "rows")?)?;
                    w.u32(u32_of(m.cols, "cols")?)?;
                    w.f32s(&m.data)?;
                }
            }
        }
        let meta = serde_json::to_string(&self.meta).expect("string map serializes");
        w.u32(u32_of(meta.len(), "metadata length")?)?;
        w.bytes(meta.as_bytes())?;
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = ByteReader::open(path)?;
        r.magic(MAGIC)?;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.fail(format!("unsupported version {version}, expected {VERSION}")));
        }
        let kind = r.u8("kind tag")?;
        let count = r.u32("entry count")?;
        let entries = match kind {
            0 => {
                let mut nets = Vec::new();
                for _ in 0..count {
                    let name = read_name(&mut r)?;
                    let layers = r.u32("layer count")?;
                    if layers == 0 || layers > MAX_LAYERS {
                        return Err(r.fail(format!("implausible layer count {layers}")));
                    }
                    let mut dims = Vec::with_capacity(layers as usize + 1);
                    for _ in 0..=layers {
                        let d = r.u32("layer dim")? as usize;
                        if d == 0 {
                            return Err(r.fail("zero layer dim"));
                        }
                        dims.push(d);
                    }
                    let mut ls = Vec::with_capacity(layers as usize);
                    for w in dims.windows(2) {
                        let mut weight = Matrix::zeros(w[1], w[0]);
                        r.f32s(&mut weight.data, "weights")?;
                        let mut bias = vec![0.0f32; w[1]];
                        r.f32s(&mut bias, "bias")?;
                        ls.push(Layer { weight, bias });
                    }
                    nets.push((name, Mlp::from_layers(ls)?));
                }
                Entries::Mlps(nets)
            }
            1 => {
                let mut blocks = Vec::new();
                for _ in 0..count {
                    let name = read_name(&mut r)?;
                    let rows = r.u32("rows")? as usize;
                    let cols = r.u32("cols")? as usize;
                    let mut m = Matrix::zeros(rows, cols);
                    r.f32s(&mut m.data, "block data")?;
                    blocks.push((name, m));
                }
                Entries::Blocks(blocks)
            }
            other => return Err(r.fail(format!("unknown kind tag {other}"))),
        };
        let meta_len = r.u32("metadata length")?;
        let mut meta_bytes = vec![0u8; meta_len as usize];
        r.read_exact(&mut meta_bytes, "metadata")?;
        let meta: BTreeMap<String, String> = serde_json::from_slice(&meta_bytes)
            .map_err(|e| r.fail(format!("metadata is not a JSON string map: {e}")))?;
        r.expect_eof()?;
        Ok(WeightFile { entries, meta })
    }
}

fn write_name(w: &mut ByteWriter, name: &str) -> Result<()> {
    w.u32(u32_of(name.len(), "name length")?)?;
    w.bytes(name.as_bytes())
}

fn read_name<R: std::io::Read>(r: &mut ByteReader<R>) -> Result<String> {
    let len = r.u32("name length")?;
    if len > MAX_NAME {
        return Err(r.fail(format!("name length {len} exceeds {MAX_NAME}")));
    }
    let mut b = vec![0u8; len as usize];
    r.read_exact(&mut b, "name")?;
    String::from_utf8(b).map_err(|_| r.fail("name is not UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightFile {
        WeightFile::mlps(vec![
            ("q".into(), Mlp::new(&[5, 7, 3], 1).unwrap()),
            ("actor".into(), Mlp::new(&[5, 2], 2).unwrap()),
        ])
        .with_meta("kind", "policy")
        .with_meta("seed", "11")
        .with_meta("config", "a = 1\nb = \"x\"\n")
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.uvwt");
        let w = sample();
        w.save(&p).unwrap();
        assert_eq!(WeightFile::load(&p).unwrap(), w);

        let blocks = WeightFile::blocks(vec![(
            "mean".into(),
            Matrix::from_vec(1, 3, vec![0.5, -1.0, f32::MIN_POSITIVE]).unwrap(),
        )])
        .with_meta("kind", "pca");
        blocks.save(&p).unwrap();
        assert_eq!(WeightFile::load(&p).unwrap(), blocks);
    }

    #[test]
    fn dims_mismatch_names_both_shapes() {
        let w = sample();
        let err = w.mlp_with_dims("q", &[5, 8, 3]).unwrap_err().to_string();
        assert!(
            err.contains("[5, 7, 3]") && err.contains("[5, 8, 3]"),
            "{err}"
        );
    }

    #[test]
    fn wrong_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.uvwt");
        sample().save(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&p, &bad).unwrap();
        assert!(matches!(
            WeightFile::load(&p),
            Err(Error::Format { offset: 0, .. })
        ));

        bytes.truncate(bytes.len() - 10);
        std::fs::write(&p, &bytes).unwrap();
        let err = WeightFile::load(&p).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }
}
