//! Binary checkpoint and activation files. Everything is little-endian.
//!
//! Checkpoint (`LTHC`):
//!
//! ```text
//! "LTHC" | version u16 | layer_count u32 | (layer_count + 1) x dim u32
//! | initial bank | current bank | seed u64 | epochs u32 | epochs x (train f64, test f64)
//! ```
//!
//! Each bank holds, per layer in order, the `fan_in x fan_out` weights
//! (row-major) followed by the `fan_out` biases, all `f32`.
//!
//! Activations (`ACTV`):
//!
//! ```text
//! "ACTV" | layer tag u8 | N u32 | d u32 | N x d f32 (row-major) | N label bytes
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::mlp::{ActivationMatrix, Checkpoint, EpochRecord, LayerId, NetworkConfig, Params};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LTHC";
pub const CHECKPOINT_VERSION: u16 = 1;
pub const ACTIVATION_MAGIC: &[u8; 4] = b"ACTV";

fn write_bank(out: &mut Vec<u8>, params: &Params) {
    for layer in &params.layers {
        for &v in layer.weights.iter().chain(&layer.bias) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let dims = ck.config.layer_dims();
    let mut out = Vec::with_capacity(32 + 8 * ck.current.num_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&((dims.len() - 1) as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    write_bank(&mut out, &ck.initial);
    write_bank(&mut out, &ck.current);
    out.extend_from_slice(&ck.seed.to_le_bytes());
    out.extend_from_slice(&(ck.history.len() as u32).to_le_bytes());
    for rec in &ck.history {
        out.extend_from_slice(&rec.train_accuracy.to_le_bytes());
        out.extend_from_slice(&rec.test_accuracy.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::TruncatedFile {
                field,
                needed: self.pos + n,
                available: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, field: &'static str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u16(&mut self, field: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn f32(&mut self, field: &'static str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn f64(&mut self, field: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let found = self.take(4, "magic")?;
        if found != expected {
            return Err(Error::BadMagic {
                field: "magic",
                expected: u32::from_be_bytes(*expected),
                found: u32::from_be_bytes(found.try_into().unwrap()),
            });
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format {
                format: self.format,
                reason: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }
}

fn read_bank(r: &mut Reader<'_>, config: &NetworkConfig) -> Result<Params> {
    let mut params = Params::zeros(config);
    for layer in &mut params.layers {
        for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            *v = f64::from(r.f32("parameter bank")?);
        }
    }
    Ok(params)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader {
        bytes,
        pos: 0,
        format: "checkpoint",
    };
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            format: "checkpoint",
            reason: format!("unsupported version {version}"),
        });
    }
    let layers = r.u32("layer count")? as usize;
    if layers > 64 {
        return Err(Error::Format {
            format: "checkpoint",
            reason: format!("implausible layer count {layers}"),
        });
    }
    let dims = (0..=layers)
        .map(|_| r.u32("layer dims").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let config = NetworkConfig::new(dims)?;
    let initial = read_bank(&mut r, &config)?;
    let current = read_bank(&mut r, &config)?;
    let seed = r.u64("seed")?;
    let epochs = r.u32("history length")? as usize;
    let history = (0..epochs)
        .map(|_| {
            Ok(EpochRecord {
                train_accuracy: r.f64("history")?,
                test_accuracy: r.f64("history")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Checkpoint::new(config, current, initial, seed, history)
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(ck)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn encode_activations(act: &ActivationMatrix) -> Vec<u8> {
    let (n, d) = act.values.dim();
    let mut out = Vec::with_capacity(13 + 4 * n * d + n);
    out.extend_from_slice(ACTIVATION_MAGIC);
    out.push(act.layer.tag());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for &v in act.values.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend_from_slice(&act.labels);
    out
}

pub fn decode_activations(bytes: &[u8]) -> Result<ActivationMatrix> {
    let mut r = Reader {
        bytes,
        pos: 0,
        format: "activation",
    };
    r.magic(ACTIVATION_MAGIC)?;
    let tag = r.u8("layer id")?;
    let layer = LayerId::from_index((tag as usize).wrapping_sub(1)).ok_or_else(|| Error::Format {
        format: "activation",
        reason: format!("layer id byte {tag} not in 1..=3"),
    })?;
    let n = r.u32("row count")? as usize;
    let d = r.u32("column count")? as usize;
    let raw = r.take(n.saturating_mul(d).saturating_mul(4), "values")?;
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let labels = r.take(n, "labels")?.to_vec();
    r.finish()?;
    Ok(ActivationMatrix {
        values: Array2::from_shape_vec((n, d), values).expect("length checked"),
        labels,
        layer,
    })
}

pub fn save_activations(act: &ActivationMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_activations(act)).map_err(|e| Error::io(path, e))
}

pub fn load_activations(path: impl AsRef<Path>) -> Result<ActivationMatrix> {
    let path = path.as_ref();
    decode_activations(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::init_network;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut ck = init_network(&NetworkConfig::mnist(), 42);
        ck.history.push(EpochRecord {
            train_accuracy: 0.5,
            test_accuracy: 0.25,
        });
        let bytes = encode_checkpoint(&ck);
        assert_eq!(&bytes[..4], b"LTHC");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn checkpoint_errors() {
        let ck = init_network(&NetworkConfig::mnist(), 1);
        let bytes = encode_checkpoint(&ck);
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 3]),
            Err(Error::TruncatedFile { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::BadMagic { .. })));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(decode_checkpoint(&long), Err(Error::Format { .. })));
    }

    #[test]
    fn activation_round_trip() {
        let act = ActivationMatrix {
            values: Array2::from_shape_fn((3, 2), |(i, j)| i as f64 - 0.5 * j as f64),
            labels: vec![0, 9, 4],
            layer: LayerId::Fc2,
        };
        let bytes = encode_activations(&act);
        assert_eq!(bytes[4], 2);
        assert_eq!(bytes.len(), 4 + 1 + 8 + 24 + 3);
        assert_eq!(decode_activations(&bytes).unwrap(), act);
    }
}
