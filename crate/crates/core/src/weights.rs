//! Named parameter tensors and the `RPWT` checkpoint container.
//!
//! Layout (little-endian): magic `RPWT`, u32 version, u32 entry count, then
//! per entry u32 name length, UTF-8 name, u32 rank, rank x u32 extents and
//! the f64 payload.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rppg_autodiff::{Graph, Tensor, Var};

use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"RPWT";
const VERSION: u32 = 1;

/// Ordered collection of named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Weights {
    entries: Vec<(String, Tensor)>,
}

impl Weights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(e) => e.1 = t,
            None => self.entries.push((name, t)),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for d in t.shape() {
                w.write_all(&(*d as u32).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Weights> {
        let mut magic = [0u8; 4];
        fill(&mut r, &mut magic).map_err(|_| Error::NotAWeights)?;
        if &magic != MAGIC {
            return Err(Error::NotAWeights);
        }
        let header = |r: &mut R| -> Result<u32> {
            let mut b = [0u8; 4];
            fill(r, &mut b).map_err(|_| Error::MalformedHeader("header ends early".into()))?;
            Ok(u32::from_le_bytes(b))
        };
        let version = header(&mut r)?;
        if version != VERSION {
            return Err(Error::MalformedHeader(format!("unsupported version {version}")));
        }
        let count = header(&mut r)?;
        let mut out = Weights::new();
        for _ in 0..count {
            let len = header(&mut r)? as usize;
            if len > 4096 {
                return Err(Error::MalformedHeader(format!("name length {len}")));
            }
            let mut name = vec![0u8; len];
            fill(&mut r, &mut name).map_err(|_| Error::TruncatedPayload)?;
            let name = String::from_utf8(name).map_err(|_| Error::MalformedHeader("name is not UTF-8".into()))?;
            let rank = header(&mut r)? as usize;
            if rank == 0 || rank > 8 {
                return Err(Error::MalformedHeader(format!("rank {rank} for `{name}`")));
            }
            let shape = (0..rank).map(|_| header(&mut r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            if n == 0 || n > 1 << 28 {
                return Err(Error::MalformedHeader(format!("shape {shape:?} for `{name}`")));
            }
            let mut bytes = vec![0u8; n * 8];
            fill(&mut r, &mut bytes).map_err(|_| Error::TruncatedPayload)?;
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            out.insert(name, Tensor::new(shape, data)?);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Weights> {
        Weights::read_from(BufReader::new(File::open(path)?))
    }
}

fn fill<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<()> {
    r.read_exact(buf)
}

/// Parameters bound into one graph.
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn new(g: &mut Graph, w: &Weights, trainable: bool) -> Result<Self> {
        let mut vars = HashMap::new();
        for (name, t) in w.iter() {
            vars.insert(name.to_string(), g.leaf(t.clone(), trainable)?);
        }
        Ok(Bound { vars })
    }

    /// Rebinds one parameter to an existing graph node.
    pub fn set(&mut self, name: &str, v: Var) {
        self.vars.insert(name.to_string(), v);
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    /// Gradients of every bound parameter, in `w` order.
    pub fn grads(&self, g: &Graph, w: &Weights) -> Result<Vec<Vec<f64>>> {
        w.iter()
            .map(|(name, t)| {
                let v = self.get(name)?;
                Ok(g.grad(v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; t.len()]))
            })
            .collect()
    }
}

