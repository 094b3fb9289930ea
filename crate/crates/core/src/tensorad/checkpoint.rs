//! Parameter checkpoint file.
//!
//! Flat binary layout, little-endian throughout:
//!   magic "ICMF" | version u32 | count u32
//!   then per record:
//!   name_len u32 | name UTF-8 | rank u32 | extents u32 × rank | payload f64 × numel
//!
//! See docs/format.md for the normative description.

use super::nn::Parameter;
use super::Tensor;
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"ICMF";
pub const VERSION: u32 = 1;

pub fn save(path: &Path, records: &[Parameter]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&(records.len() as u32).to_le_bytes())?;
    for p in records {
        let name = p.name.as_bytes();
        f.write_all(&(name.len() as u32).to_le_bytes())?;
        f.write_all(name)?;
        let shape = p.tensor.shape();
        f.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &e in shape {
            f.write_all(&(e as u32).to_le_bytes())?;
        }
        p.tensor.with_data(|d| -> std::io::Result<()> {
            for v in d {
                f.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Parameter>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let version = read_u32(&mut f)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let count = read_u32(&mut f)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut f)? as usize;
        let mut name = vec![0u8; name_len];
        f.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("checkpoint name is not UTF-8".into()))?;
        let rank = read_u32(&mut f)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut f)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            f.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        out.push(Parameter {
            name,
            tensor: Tensor::from_vec(&shape, data),
        });
    }
    Ok(out)
}

/// Copy loaded values into an existing model's parameters by name.
/// Every model parameter must be present in the checkpoint.
pub fn restore(records: &[Parameter], params: &[Parameter]) -> Result<()> {
    for p in params {
        let rec = records
            .iter()
            .find(|r| r.name == p.name)
            .ok_or_else(|| Error::Format(format!("checkpoint missing parameter {}", p.name)))?;
        if rec.tensor.shape() != p.tensor.shape() {
            return Err(Error::Format(format!(
                "checkpoint parameter {} has shape {:?}, model expects {:?}",
                p.name,
                rec.tensor.shape(),
                p.tensor.shape()
            )));
        }
        p.tensor.set_data(&rec.tensor.to_vec());
    }
    Ok(())
}

fn read_u32(f: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    f.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.icmf");
        let params = vec![
            Parameter {
                name: "a.weight".into(),
                tensor: Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-9, 7.0]),
            },
            Parameter {
                name: "b.bias".into(),
                tensor: Tensor::from_vec(&[1], vec![42.0]),
            },
        ];
        save(&path, &params).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].name, "a.weight");
        assert_eq!(loaded[0].tensor.shape(), &[2, 3]);
        assert_eq!(loaded[0].tensor.to_vec(), params[0].tensor.to_vec());
        assert_eq!(loaded[1].tensor.to_vec(), vec![42.0]);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.icmf");
        std::fs::write(&path, b"NOPE....").unwrap();
        match load(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("magic")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.icmf");
        let params = vec![Parameter {
            name: "w".into(),
            tensor: Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]),
        }];
        save(&path, &params).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(load(&path).is_err());
    }
}
