//! CMDL model files.
//!
//! `"CMDL" | version u16 | architecture u8 | tensors`, each tensor being
//! `rank u8 | dims u32... | f64 values`, all little-endian. Tensor order:
//! metadata, training summary, scaler mean, scaler scale, then every layer
//! weight and bias in network order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::network::{Layer, Network};
use super::{Architecture, CnnShape, Model, Standardizer, TrainingSummary};

const MAGIC: &[u8; 4] = b"CMDL";
const VERSION: u16 = 1;

struct Tensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

fn push_tensor(out: &mut Vec<u8>, dims: &[usize], values: &[f64]) {
    debug_assert_eq!(dims.iter().product::<usize>(), values.len());
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format("model", format!("truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.take(1)?[0] as usize;
        let dims: Vec<usize> = (0..rank)
            .map(|_| Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize))
            .collect::<Result<_>>()?;
        let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let count = count
            .filter(|&c| c.checked_mul(8).is_some_and(|b| b <= self.bytes.len()))
            .ok_or_else(|| Error::format("model", format!("tensor dims {dims:?} exceed the file")))?;
        let raw = self.take(count * 8)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Tensor { dims, values })
    }

    fn expect(&mut self, what: &str, dims: &[usize]) -> Result<Vec<f64>> {
        let t = self.tensor()?;
        if t.dims != dims {
            return Err(Error::format(
                "model",
                format!("{what} tensor has dims {:?}, expected {dims:?}", t.dims),
            ));
        }
        Ok(t.values)
    }
}

fn as_count(v: f64, what: &str) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::format("model", format!("metadata {what} = {v} is not a positive integer")))
    }
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.architecture.tag());
        let classes = self.num_classes() as f64;
        let meta = match &self.architecture {
            Architecture::Softmax => vec![self.input_len() as f64, classes],
            Architecture::Cnn(s) => vec![
                self.input_len() as f64,
                classes,
                s.conv_filters[0] as f64,
                s.conv_filters[1] as f64,
                s.kernel_size as f64,
                s.pool_size as f64,
                s.dense_units as f64,
                s.dropout_rate,
            ],
        };
        push_tensor(&mut out, &[meta.len()], &meta);
        let s = &self.summary;
        push_tensor(&mut out, &[4], &[s.train_loss, s.val_loss, s.train_accuracy, s.val_accuracy]);
        push_tensor(&mut out, &[self.scaler.len()], &self.scaler.mean);
        push_tensor(&mut out, &[self.scaler.len()], &self.scaler.scale);
        for layer in &self.network.layers {
            match layer {
                Layer::Conv(c) => {
                    push_tensor(&mut out, &[c.out_channels, c.in_channels, c.kernel], &c.weight);
                    push_tensor(&mut out, &[c.out_channels], &c.bias);
                }
                Layer::Dense(d) => {
                    push_tensor(&mut out, &[d.outputs, d.inputs], &d.weight);
                    push_tensor(&mut out, &[d.outputs], &d.bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 7 || &bytes[..4] != MAGIC {
            return Err(Error::format("model", "missing CMDL header"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::format("model", format!("unsupported version {version}")));
        }
        let tag = bytes[6];
        let mut r = Reader { bytes, pos: 7 };
        let meta = r.tensor()?;
        let (architecture, mut network) = match (tag, meta.values.as_slice()) {
            (0, [input_len, classes]) => {
                let n = as_count(*input_len, "input length")?;
                (Architecture::Softmax, Network::linear(n, as_count(*classes, "classes")?))
            }
            (1, [input_len, classes, f1, f2, kernel, pool, dense, dropout]) => {
                let shape = CnnShape {
                    conv_filters: [as_count(*f1, "filters")?, as_count(*f2, "filters")?],
                    kernel_size: as_count(*kernel, "kernel")?,
                    pool_size: as_count(*pool, "pool")?,
                    dropout_rate: *dropout,
                    dense_units: as_count(*dense, "dense units")?,
                };
                let network = Network::cnn(
                    as_count(*input_len, "input length")?,
                    shape.conv_filters,
                    shape.kernel_size,
                    shape.pool_size,
                    shape.dropout_rate,
                    shape.dense_units,
                    as_count(*classes, "classes")?,
                    0,
                )
                .map_err(|e| Error::format("model", e.to_string()))?;
                (Architecture::Cnn(shape), network)
            }
            (tag, values) => {
                return Err(Error::format(
                    "model",
                    format!("architecture tag {tag} with {} metadata values", values.len()),
                ))
            }
        };
        let s = r.expect("summary", &[4])?;
        let summary = TrainingSummary {
            train_loss: s[0],
            val_loss: s[1],
            train_accuracy: s[2],
            val_accuracy: s[3],
        };
        let n = network.input_len;
        let scaler = Standardizer {
            mean: r.expect("scaler mean", &[n])?,
            scale: r.expect("scaler scale", &[n])?,
        };
        for layer in &mut network.layers {
            match layer {
                Layer::Conv(c) => {
                    c.weight = r.expect("conv weight", &[c.out_channels, c.in_channels, c.kernel])?;
                    c.bias = r.expect("conv bias", &[c.out_channels])?;
                }
                Layer::Dense(d) => {
                    d.weight = r.expect("dense weight", &[d.outputs, d.inputs])?;
                    d.bias = r.expect("dense bias", &[d.outputs])?;
                }
                _ => {}
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::format("model", format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Model {
            architecture,
            network,
            scaler,
            summary,
            history: Vec::new(),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
