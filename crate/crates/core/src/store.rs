//! Binary containers for generated datasets and training checkpoints.
//!
//! Both start with an 8-byte magic, a little-endian `u32` header length and a
//! JSON header. Datasets then hold token records; checkpoints hold named
//! `f64` matrices.
//!
//! Dataset record: `rows, cols, rows·cols ids, qlen, qlen ids, tlen, tlen
//! ids, elen, elen ids`, all `u32`.
//!
//! Checkpoint block: `u16` name length, UTF-8 name, `u32` rows, `u32` cols,
//! `rows·cols` `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::input::{Example, ItemGrid, QueryInput};
use crate::params::ParamSet;

pub const DATASET_MAGIC: &[u8; 8] = b"MEMODS01";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MEMOCKP1";

/// One example in token form. `extras` carries task-specific integers
/// (query type and distance for PAI, the task id for bAbI).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub rows: u32,
    pub cols: u32,
    pub memory: Vec<u32>,
    pub query: Vec<u32>,
    pub targets: Vec<u32>,
    pub extras: Vec<u32>,
}

impl TokenRecord {
    /// Token form of an example whose memory and query are both tokens.
    pub fn from_example(ex: &Example, extras: Vec<u32>) -> Result<Self> {
        let (ItemGrid::Tokens { rows, cols, ids }, QueryInput::Tokens(query)) = (&ex.memory, &ex.query) else {
            return Err(Error::Format("only token examples can be stored".into()));
        };
        Ok(TokenRecord {
            rows: *rows as u32,
            cols: *cols as u32,
            memory: ids.clone(),
            query: query.clone(),
            targets: ex.targets.clone(),
            extras,
        })
    }

    /// The example this record was made from.
    pub fn to_example(&self) -> Result<Example> {
        Ok(Example {
            memory: ItemGrid::tokens(self.rows as usize, self.cols as usize, self.memory.clone())?,
            query: QueryInput::Tokens(self.query.clone()),
            targets: self.targets.clone(),
        })
    }

    pub fn grid(&self) -> Result<ItemGrid> {
        ItemGrid::tokens(self.rows as usize, self.cols as usize, self.memory.clone())
    }
}

fn write_u32<W: Write>(w: &mut W, x: u32) -> Result<()> {
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn write_ids<W: Write>(w: &mut W, ids: &[u32]) -> Result<()> {
    for &x in ids {
        write_u32(w, x)?;
    }
    Ok(())
}

fn read_ids<R: Read>(r: &mut R, n: usize) -> Result<Vec<u32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} length {n} exceeds u32")))
}

fn write_header<W: Write, H: Serialize>(w: &mut W, magic: &[u8; 8], header: &H) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    w.write_all(magic)?;
    write_u32(w, len_u32(json.len(), "header")?)?;
    w.write_all(&json)?;
    Ok(())
}

fn read_header<R: Read, H: DeserializeOwned>(r: &mut R, magic: &[u8; 8]) -> Result<H> {
    let mut m = [0u8; 8];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let n = read_u32(r)? as usize;
    let mut json = vec![0u8; n];
    r.read_exact(&mut json)?;
    Ok(serde_json::from_slice(&json)?)
}

/// Writes a dataset; the header's `count` field is filled by the caller.
pub fn write_dataset<H: Serialize>(path: &Path, header: &H, records: &[TokenRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, DATASET_MAGIC, header)?;
    write_u32(&mut w, len_u32(records.len(), "record count")?)?;
    for rec in records {
        if rec.memory.len() != rec.rows as usize * rec.cols as usize {
            return Err(Error::Format(format!(
                "record memory has {} ids for {}x{}",
                rec.memory.len(),
                rec.rows,
                rec.cols
            )));
        }
        write_u32(&mut w, rec.rows)?;
        write_u32(&mut w, rec.cols)?;
        write_ids(&mut w, &rec.memory)?;
        for part in [&rec.query, &rec.targets, &rec.extras] {
            write_u32(&mut w, len_u32(part.len(), "record field")?)?;
            write_ids(&mut w, part)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<TokenRecord>)> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_header(&mut r, DATASET_MAGIC)?;
    let n = read_u32(&mut r)? as usize;
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let rows = read_u32(&mut r)?;
        let cols = read_u32(&mut r)?;
        let memory = read_ids(&mut r, rows as usize * cols as usize)?;
        let mut parts = Vec::with_capacity(3);
        for _ in 0..3 {
            let len = read_u32(&mut r)? as usize;
            parts.push(read_ids(&mut r, len)?);
        }
        let extras = parts.pop().expect("three parts");
        let targets = parts.pop().expect("three parts");
        let query = parts.pop().expect("three parts");
        records.push(TokenRecord {
            rows,
            cols,
            memory,
            query,
            targets,
            extras,
        });
    }
    Ok((header, records))
}

/// Named matrices in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Blocks(pub Vec<(String, Tensor)>);

impl Blocks {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.0.push((name.into(), t));
    }

    /// Adds every parameter of `set` under `prefix.name`.
    pub fn push_params(&mut self, prefix: &str, set: &ParamSet) {
        for p in set.iter() {
            self.push(format!("{prefix}.{}", p.name), p.value.clone());
        }
    }

    pub fn push_all(&mut self, prefix: &str, tensors: &[Tensor]) {
        for (i, t) in tensors.iter().enumerate() {
            self.push(format!("{prefix}.{i}"), t.clone());
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.0
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("checkpoint block {name} missing")))
    }

    /// Overwrites `set` from blocks named `prefix.name`, checking shapes.
    pub fn load_params(&self, prefix: &str, set: &mut ParamSet) -> Result<()> {
        for p in set.iter_mut() {
            let t = self.get(&format!("{prefix}.{}", p.name))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Format(format!(
                    "block {prefix}.{} has shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }

    /// Tensors `prefix.0 .. prefix.{n-1}`.
    pub fn load_all(&self, prefix: &str, n: usize) -> Result<Vec<Tensor>> {
        (0..n).map(|i| self.get(&format!("{prefix}.{i}")).cloned()).collect()
    }
}

pub fn write_checkpoint<H: Serialize>(path: &Path, header: &H, blocks: &Blocks) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, CHECKPOINT_MAGIC, header)?;
    write_u32(&mut w, len_u32(blocks.0.len(), "block count")?)?;
    for (name, t) in &blocks.0 {
        let bytes = name.as_bytes();
        let n = u16::try_from(bytes.len())
            .map_err(|_| Error::Format(format!("block name {name} too long")))?;
        w.write_all(&n.to_le_bytes())?;
        w.write_all(bytes)?;
        write_u32(&mut w, len_u32(t.rows(), "rows")?)?;
        write_u32(&mut w, len_u32(t.cols(), "cols")?)?;
        for &x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<H: DeserializeOwned>(path: &Path) -> Result<(H, Blocks)> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_header(&mut r, CHECKPOINT_MAGIC)?;
    let n = read_u32(&mut r)? as usize;
    let mut blocks = Blocks::default();
    for _ in 0..n {
        let mut len = [0u8; 2];
        r.read_exact(&mut len)?;
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut buf = vec![0u8; rows * cols * 8];
        r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        blocks.push(name, Tensor::from_vec(rows, cols, data)?);
    }
    Ok((header, blocks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Header {
        task: String,
        count: usize,
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let recs = vec![
            TokenRecord {
                rows: 2,
                cols: 3,
                memory: vec![1, 2, 0, 4, 5, 0],
                query: vec![7, 8, 9],
                targets: vec![3],
                extras: vec![1, 2],
            },
            TokenRecord {
                rows: 1,
                cols: 1,
                memory: vec![u32::MAX],
                ..TokenRecord::default()
            },
        ];
        let h = Header {
            task: "pai".into(),
            count: 2,
        };
        write_dataset(&path, &h, &recs).unwrap();
        let (h2, r2): (Header, _) = read_dataset(&path).unwrap();
        assert_eq!(h, h2);
        assert_eq!(recs, r2);
    }

    #[test]
    fn token_examples_round_trip_through_records() {
        let ex = Example {
            memory: ItemGrid::tokens(2, 2, vec![1, 2, 0, 0]).unwrap(),
            query: QueryInput::Tokens(vec![3, 4]),
            targets: vec![5, 6],
        };
        let rec = TokenRecord::from_example(&ex, vec![9]).unwrap();
        assert_eq!(rec.to_example().unwrap(), ex);
        let dense = Example {
            memory: ItemGrid::dense(1, 1, 1, vec![0.5]).unwrap(),
            ..ex
        };
        assert!(TokenRecord::from_example(&dense, vec![]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut set = ParamSet::new();
        set.add("a", Tensor::uniform(3, 4, 1.0, &mut rng));
        set.add("b", Tensor::row(vec![f64::MIN_POSITIVE, -0.0, 1e300]));
        let mut blocks = Blocks::default();
        blocks.push_params("model", &set);
        blocks.push_all("adam.m", &[Tensor::scalar(0.5)]);
        write_checkpoint(&path, &Header { task: "x".into(), count: 0 }, &blocks).unwrap();
        let (_, back): (Header, Blocks) = read_checkpoint(&path).unwrap();
        assert_eq!(back, blocks);
        let mut fresh = set.clone();
        for p in fresh.iter_mut() {
            p.value.fill(0.0);
        }
        back.load_params("model", &mut fresh).unwrap();
        assert_eq!(fresh, set);
        assert_eq!(back.load_all("adam.m", 1).unwrap(), vec![Tensor::scalar(0.5)]);
        assert!(back.get("nope").is_err());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        write_dataset(&path, &Header { task: "g".into(), count: 0 }, &[]).unwrap();
        let err = read_checkpoint::<Header>(&path).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn shape_mismatch_on_load() {
        let mut blocks = Blocks::default();
        blocks.push("m.a", Tensor::zeros(2, 2));
        let mut set = ParamSet::new();
        set.add("a", Tensor::zeros(3, 2));
        assert!(blocks.load_params("m", &mut set).is_err());
    }
}
