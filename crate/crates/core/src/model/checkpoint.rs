//! Binary checkpoint container.
//!
//! Layout: magic `SICR`, version `u32`, a `u32`-length-prefixed UTF-8
//! `key=value` block, then tensors until end of file, each as name length
//! `u16`, name bytes, dtype tag `u8` (0 = f32, 1 = f64), rank `u8`, dims as
//! `u32`, raw little-endian values. All integers are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"SICR";
pub const VERSION: u32 = 1;

/// Storage precision of a tensor on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            t => Err(Error::format(format!("unknown dtype tag {t}"))),
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(Error::arg(format!("dtype must be f32 or f64, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Vec<(String, String)>,
    pub tensors: Vec<(String, Dtype, Tensor)>,
}

impl Checkpoint {
    pub fn get_config(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _, _)| n == name).map(|(_, _, t)| t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let text: String = self.config.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        w.write_all(&u32::try_from(text.len()).map_err(|_| Error::arg("config block too large"))?.to_le_bytes())?;
        w.write_all(text.as_bytes())?;
        for (name, dtype, t) in &self.tensors {
            let name_len = u16::try_from(name.len()).map_err(|_| Error::arg(format!("tensor name too long: {name}")))?;
            w.write_all(&name_len.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[dtype.tag(), t.rank() as u8])?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in t.data() {
                match dtype {
                    Dtype::F32 => w.write_all(&(v as f32).to_le_bytes())?,
                    Dtype::F64 => w.write_all(&v.to_le_bytes())?,
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format(format!("{}: bad magic {magic:?}", path.display())));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::format(format!("{}: unsupported version {version}", path.display())));
        }
        let mut text = vec![0u8; read_u32(&mut r)? as usize];
        r.read_exact(&mut text)?;
        let text = String::from_utf8(text).map_err(|_| Error::format("config block is not UTF-8"))?;
        let mut config = Vec::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::format(format!("malformed config line {line:?}")))?;
            config.push((k.to_string(), v.to_string()));
        }
        let mut tensors = Vec::new();
        loop {
            let mut len = [0u8; 2];
            match r.read(&mut len[..1])? {
                0 => break,
                _ => r.read_exact(&mut len[1..])?,
            }
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::format("tensor name is not UTF-8"))?;
            let mut hdr = [0u8; 2];
            r.read_exact(&mut hdr)?;
            let dtype = Dtype::from_tag(hdr[0])?;
            let shape = (0..hdr[1]).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * dtype.bytes()];
            r.read_exact(&mut raw)?;
            let data = match dtype {
                Dtype::F32 => raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
                Dtype::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            };
            let t = Tensor::new(&shape, data).map_err(|e| Error::format(format!("tensor {name}: {e}")))?;
            tensors.push((name, dtype, t));
        }
        Ok(Self { config, tensors })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            config: vec![("a".into(), "1".into()), ("b".into(), "x,y".into())],
            tensors: vec![
                ("w".into(), Dtype::F32, Tensor::new(&[2, 2], vec![0.5, -1.25, 3.0, 0.0]).unwrap()),
                ("v".into(), Dtype::F64, Tensor::from_vec(vec![std::f64::consts::PI])),
            ],
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        sample().save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), sample());
    }

    #[test]
    fn bad_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        sample().save(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(Checkpoint::load(&p), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        sample().save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(Checkpoint::load(&p), Err(Error::Io(_))));
    }
}
