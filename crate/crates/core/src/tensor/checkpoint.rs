//! Self-describing parameter container.
//!
//! Layout (all header lines are ASCII, `\n`-terminated):
//!
//! ```text
//! TMPT-CHECKPOINT 1
//! endian little
//! precision f32|f64
//! meta <byte length>
//! <UTF-8 JSON metadata of exactly that length>
//! tensors <count>
//! then per tensor, sorted by name:
//! tensor <name> <dim,dim,...> <trainable 0|1>
//! <product(dims) little-endian values>
//! ```

use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::params::ParamStore;
use super::scalar::{Precision, Scalar};
use super::tensor::Tensor;

const MAGIC: &str = "TMPT-CHECKPOINT 1";

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub precision: Precision,
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: serde_json::Value,
    pub params: ParamStore<T>,
}

fn bad(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: msg.into(),
    }
}

fn read_line(r: &mut impl BufRead, path: &Path) -> Result<String> {
    let mut s = String::new();
    if r.read_line(&mut s)? == 0 {
        return Err(bad(path, "unexpected end of checkpoint"));
    }
    Ok(s.trim_end_matches('\n').to_string())
}

fn read_header(r: &mut impl BufRead, path: &Path) -> Result<CheckpointHeader> {
    if read_line(r, path)? != MAGIC {
        return Err(bad(path, "not a checkpoint (bad magic)"));
    }
    if read_line(r, path)? != "endian little" {
        return Err(bad(path, "unsupported endianness"));
    }
    let precision = match read_line(r, path)?.as_str() {
        "precision f32" => Precision::F32,
        "precision f64" => Precision::F64,
        other => return Err(bad(path, format!("bad precision line `{other}`"))),
    };
    let meta_len: usize = read_line(r, path)?
        .strip_prefix("meta ")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| bad(path, "bad meta line"))?;
    let mut meta = vec![0u8; meta_len];
    r.read_exact(&mut meta)?;
    let mut nl = [0u8; 1];
    r.read_exact(&mut nl)?;
    let meta = serde_json::from_slice(&meta)?;
    Ok(CheckpointHeader { precision, meta })
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(meta: serde_json::Value, params: ParamStore<T>) -> Self {
        Self { meta, params }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::new();
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "endian little")?;
        writeln!(out, "precision {}", T::PRECISION.name())?;
        writeln!(out, "meta {}", meta.len())?;
        out.extend_from_slice(&meta);
        out.push(b'\n');
        writeln!(out, "tensors {}", self.params.len())?;
        for (name, t) in self.params.iter() {
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(Error::Invalid(format!(
                    "parameter name `{name}` not storable"
                )));
            }
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            writeln!(
                out,
                "tensor {name} {} {}",
                dims.join(","),
                u8::from(t.requires_grad)
            )?;
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, path)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = std::io::Cursor::new(bytes);
        let header = read_header(&mut r, path)?;
        if header.precision != T::PRECISION {
            return Err(bad(
                path,
                format!(
                    "checkpoint holds {} values, requested {}",
                    header.precision.name(),
                    T::PRECISION.name()
                ),
            ));
        }
        let count: usize = read_line(&mut r, path)?
            .strip_prefix("tensors ")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| bad(path, "bad tensors line"))?;
        let width = T::PRECISION.byte_width();
        let mut params = ParamStore::new();
        for _ in 0..count {
            let line = read_line(&mut r, path)?;
            let fields: Vec<&str> = line.split(' ').collect();
            let [tag, name, dims, trainable] = fields[..] else {
                return Err(bad(path, format!("bad tensor line `{line}`")));
            };
            if tag != "tensor" {
                return Err(bad(path, format!("bad tensor line `{line}`")));
            }
            let shape = dims
                .split(',')
                .map(str::parse)
                .collect::<std::result::Result<Vec<usize>, _>>()
                .map_err(|_| bad(path, format!("bad dims `{dims}`")))?;
            let numel: usize = shape.iter().product();
            let mut raw = vec![0u8; numel * width];
            r.read_exact(&mut raw)
                .map_err(|_| bad(path, format!("truncated tensor `{name}`")))?;
            let data = raw.chunks(width).map(T::read_le).collect();
            let t = Tensor::new(shape, data)?.with_grad(trainable == "1");
            params.insert(name, t);
        }
        Ok(Self {
            meta: header.meta,
            params,
        })
    }
}

/// Reads only the header, e.g. to decide which precision to load.
pub fn peek_header(path: &Path) -> Result<CheckpointHeader> {
    let f = std::fs::File::open(path)?;
    read_header(&mut std::io::BufReader::new(f), path)
}

impl CheckpointHeader {
    pub fn peek(path: &Path) -> Result<Self> {
        peek_header(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn roundtrip_preserves_everything() {
        let mut rng = Rng::new(2);
        let mut p = ParamStore::<f32>::new();
        p.insert("a.w", rng.normal_tensor(&[3, 2], 1.0).with_grad(true));
        p.insert("b", rng.normal_tensor(&[4], 1.0));
        let ck = Checkpoint::new(serde_json::json!({"k": [1, 2]}), p);
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::<f32>::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert!(Checkpoint::<f64>::from_bytes(&bytes, Path::new("mem")).is_err());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut p = ParamStore::<f64>::new();
        p.insert("w", Tensor::vector(vec![1.0, 2.0]));
        let bytes = Checkpoint::new(serde_json::Value::Null, p)
            .to_bytes()
            .unwrap();
        let cut = &bytes[..bytes.len() - 3];
        assert!(Checkpoint::<f64>::from_bytes(cut, Path::new("mem")).is_err());
    }
}
