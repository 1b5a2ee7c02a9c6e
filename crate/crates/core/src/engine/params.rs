//! Named parameter arrays and their binary snapshot format.
//!
//! Layout (all integers little-endian): the magic bytes `QOTP`, a `u32`
//! version, then one record per parameter until end of file:
//! `u32` name length, UTF-8 name, `u32` rank, `rank` x `u32` dims, and the
//! row-major `f64` payload.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::scalar::Scalar;

use super::tensor::Tensor;
use super::EngineError;

pub const PARAM_MAGIC: &[u8; 4] = b"QOTP";
pub const PARAM_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) {
        self.entries.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    /// Glorot-uniform weights of shape `[fan_in, fan_out]`.
    pub fn init_glorot(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::of(rng.random_range(-limit..limit)))
            .collect();
        self.insert(
            name,
            Tensor::matrix(fan_in, fan_out, data).expect("glorot dims"),
        );
    }

    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape));
    }

    /// Weights and bias for a dense layer named `prefix`.
    pub fn init_dense(&mut self, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        self.init_glorot(&format!("{prefix}.w"), fan_in, fan_out, rng);
        self.init_zeros(&format!("{prefix}.b"), &[1, fan_out]);
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), EngineError> {
        let io = |e: std::io::Error| EngineError::Io(e.to_string());
        w.write_all(PARAM_MAGIC).map_err(io)?;
        w.write_all(&PARAM_VERSION.to_le_bytes()).map_err(io)?;
        for (name, tensor) in &self.entries {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(bytes).map_err(io)?;
            w.write_all(&(tensor.shape().len() as u32).to_le_bytes())
                .map_err(io)?;
            for &d in tensor.shape() {
                w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
            }
            for x in tensor.data() {
                w.write_all(&x.as_f64().to_le_bytes()).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, EngineError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)
            .map_err(|e| EngineError::Io(e.to_string()))?;
        let mut cur = Cursor { buf: &buf, pos: 0 };
        if cur.take(4)? != PARAM_MAGIC {
            return Err(EngineError::Format("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != PARAM_VERSION {
            return Err(EngineError::Format(format!(
                "unsupported version {version} (expected {PARAM_VERSION})"
            )));
        }
        let mut store = Self::new();
        while cur.pos < buf.len() {
            let len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| EngineError::Format("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = cur.u32()? as usize;
            let dims = (0..rank)
                .map(|_| cur.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n: usize = dims.iter().product();
            let data = (0..n)
                .map(|_| cur.f64().map(T::of))
                .collect::<Result<Vec<_>, _>>()?;
            store.insert(&name, Tensor::new(dims, data)?);
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EngineError> {
        let mut bytes = Vec::new();
        self.write_to(&mut bytes)?;
        std::fs::write(path, bytes).map_err(|e| EngineError::Io(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EngineError> {
        let file = std::fs::File::open(path).map_err(|e| EngineError::Io(e.to_string()))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EngineError> {
        if self.pos + n > self.buf.len() {
            return Err(EngineError::Format(format!(
                "truncated record at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, EngineError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, EngineError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut s = ParamStore::<f64>::new();
        s.insert("ab", Tensor::row(vec![1.5]));
        let mut bytes = Vec::new();
        s.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[0..4], b"QOTP");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(&bytes[12..14], b"ab");
        assert_eq!(u32::from_le_bytes(bytes[14..18].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[18..22].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[22..26].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(bytes[26..34].try_into().unwrap()), 1.5);
        assert_eq!(bytes.len(), 34);
    }

    #[test]
    fn rejects_wrong_version_and_truncation() {
        let mut s = ParamStore::<f64>::new();
        s.insert("w", Tensor::row(vec![1.0, 2.0]));
        let mut bytes = Vec::new();
        s.write_to(&mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(ParamStore::<f64>::read_from(&bad[..]).is_err());
        assert!(ParamStore::<f64>::read_from(&bytes[..bytes.len() - 3]).is_err());
    }

    proptest! {
        #[test]
        fn snapshot_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 1..20), cols in 1usize..4) {
            let rows = values.len() / cols;
            prop_assume!(rows > 0);
            let data = values[..rows * cols].to_vec();
            let mut s = ParamStore::<f64>::new();
            s.insert("layer.w", Tensor::matrix(rows, cols, data).unwrap());
            s.insert("bias", Tensor::new(vec![cols], vec![0.25; cols]).unwrap());
            let mut bytes = Vec::new();
            s.write_to(&mut bytes).unwrap();
            prop_assert_eq!(ParamStore::<f64>::read_from(&bytes[..]).unwrap(), s);
        }
    }
}
