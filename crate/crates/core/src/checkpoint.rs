//! CKP1 parameter container.
//!
//! ```text
//! "CKP1" | u32 entry count | entries sorted by name
//! entry: u32 name length | name (UTF-8) | u32 ndim | ndim × u32 dims | f32 LE payload
//! ```
//!
//! Scalars and small vectors of run metadata are stored as ordinary entries under `meta.`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{contract, Error, Result};
use crate::numerics::{ParamSet, Tensor};

pub const CKP_MAGIC: &[u8; 4] = b"CKP1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], data: &[f64]) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!("entry `{name}`: shape {shape:?} with {} values", data.len())));
        }
        self.entries.insert(name, (shape.to_vec(), data.iter().map(|&v| v as f32).collect()));
        Ok(())
    }

    pub fn insert_meta(&mut self, key: &str, values: &[f64]) {
        self.entries.insert(format!("meta.{key}"), (vec![values.len()], values.iter().map(|&v| v as f32).collect()));
    }

    /// Stores every tensor of `ps` as `{prefix}{name}`.
    pub fn insert_params(&mut self, prefix: &str, ps: &ParamSet) {
        for (name, t) in ps.iter() {
            self.entries.insert(format!("{prefix}{name}"), (t.shape().to_vec(), t.data().iter().map(|&v| v as f32).collect()));
        }
    }

    pub fn get(&self, name: &str) -> Option<Tensor> {
        self.entries
            .get(name)
            .map(|(s, d)| Tensor::new(s, d.iter().map(|&v| v as f64).collect()).expect("entry shape is consistent"))
    }

    pub fn meta(&self, key: &str) -> Result<Vec<f64>> {
        self.get(&format!("meta.{key}"))
            .map(Tensor::into_data)
            .ok_or_else(|| Error::Contract(format!("checkpoint has no `meta.{key}` entry")))
    }

    pub fn meta_scalar(&self, key: &str) -> Result<f64> {
        match self.meta(key)?.as_slice() {
            [v] => Ok(*v),
            other => contract(format!("`meta.{key}` holds {} values, expected 1", other.len())),
        }
    }

    /// All entries under `prefix`, with the prefix stripped, as trainable tensors.
    pub fn params(&self, prefix: &str) -> ParamSet {
        let mut ps = ParamSet::new();
        for name in self.entries.keys().filter(|n| n.starts_with(prefix)) {
            ps.insert(&name[prefix.len()..], self.get(name).unwrap().with_grad());
        }
        ps
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CKP_MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, (shape, data)) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CKP_MAGIC {
            return Err(Error::Format { offset: 0, msg: "bad checkpoint magic".into() });
        }
        let count = r.u32()?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let at = r.pos;
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format { offset: at as u64, msg: "entry name is not UTF-8".into() })?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = r.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            if entries.insert(name.clone(), (shape, data)).is_some() {
                return Err(Error::Format { offset: at as u64, msg: format!("duplicate entry `{name}`") });
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format { offset: r.pos as u64, msg: "trailing bytes".into() });
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput { path: path.to_path_buf(), msg: "checkpoint not found".into() },
            _ => Error::Io(e),
        })?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format { offset: self.bytes.len() as u64, msg: format!("truncated: needed {n} more bytes") });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_sorted() {
        let mut c = Checkpoint::new();
        c.insert("z.w", &[2, 1], &[1.0, -2.5]).unwrap();
        c.insert("a.b", &[1], &[0.25]).unwrap();
        c.insert_meta("t", &[50.0]);
        let bytes = c.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.names().collect::<Vec<_>>(), ["a.b", "meta.t", "z.w"]);
        assert_eq!(back.meta_scalar("t").unwrap(), 50.0);
        // first entry name directly after magic + count + length
        assert_eq!(&bytes[12..15], b"a.b");
    }

    #[test]
    fn params_strip_prefix() {
        let mut ps = ParamSet::new();
        ps.insert("conv.w", Tensor::new(&[1], vec![3.0]).unwrap());
        let mut c = Checkpoint::new();
        c.insert_params("net.", &ps);
        let got = c.params("net.");
        assert_eq!(got.get("conv.w").unwrap().data(), &[3.0]);
        assert!(got.get("conv.w").unwrap().requires_grad);
    }

    #[test]
    fn rejects_corruption() {
        let mut c = Checkpoint::new();
        c.insert("a", &[2], &[1.0, 2.0]).unwrap();
        let b = c.encode();
        assert!(matches!(Checkpoint::decode(&b[..b.len() - 1]), Err(Error::Format { .. })));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bad), Err(Error::Format { offset: 0, .. })));
        let mut long = b;
        long.push(0);
        assert!(Checkpoint::decode(&long).is_err());
    }
}
