//! `WFD1` model files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "WFD1"
//! u8   precision tag (4 = f32, 8 = f64)
//! u64  step counter
//! u32  input_dim, u32 output_dim, u32 hidden layer count
//!      per hidden layer: u32 width, u8 residual flag
//! f64  leaky slope, dropout rate, bn epsilon, bn momentum
//! u64  payload length in bytes
//! payload:
//!      per hidden layer: W (in×out, row-major), b, γ, β, running mean, running var
//!      output block:     γ, β, running mean, running var, W (in×out), b
//! u64  checksum of the payload
//! ```

use std::fs;
use std::path::Path;

use super::model::{BatchNorm, Dense, HiddenLayer, Model, OutputLayer, Topology};
use super::tensor::{Matrix, Real};
use super::NeuralError;
use crate::checksum::checksum64;

pub const MODEL_MAGIC: &[u8; 4] = b"WFD1";

fn push_slice<T: Real>(out: &mut Vec<u8>, xs: &[T]) {
    for &x in xs {
        x.write_le(out);
    }
}

fn push_bn<T: Real>(out: &mut Vec<u8>, bn: &BatchNorm<T>) {
    push_slice(out, &bn.gamma);
    push_slice(out, &bn.beta);
    push_slice(out, &bn.running_mean);
    push_slice(out, &bn.running_var);
}

pub fn encode_model<T: Real>(model: &Model<T>) -> Vec<u8> {
    let t = &model.topology;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.push(T::BYTES as u8);
    out.extend_from_slice(&model.step.to_le_bytes());
    out.extend_from_slice(&(t.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(t.output_dim as u32).to_le_bytes());
    out.extend_from_slice(&(t.hidden.len() as u32).to_le_bytes());
    for (&w, &skip) in t.hidden.iter().zip(&t.residual) {
        out.extend_from_slice(&(w as u32).to_le_bytes());
        out.push(skip as u8);
    }
    for v in [t.leaky_slope, t.dropout_rate, t.bn_epsilon, t.bn_momentum] {
        out.extend_from_slice(&v.to_le_bytes());
    }

    let mut payload = Vec::new();
    for layer in &model.hidden {
        push_slice(&mut payload, &layer.dense.weight.data);
        push_slice(&mut payload, &layer.dense.bias);
        push_bn(&mut payload, &layer.bn);
    }
    push_bn(&mut payload, &model.output.bn);
    push_slice(&mut payload, &model.output.dense.weight.data);
    push_slice(&mut payload, &model.output.dense.bias);

    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&checksum64(&payload).to_le_bytes());
    out
}

pub fn save_model<T: Real>(model: &Model<T>, path: impl AsRef<Path>) -> Result<(), NeuralError> {
    fs::write(path, encode_model(model)).map_err(NeuralError::IoFailure)
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<Model<T>, NeuralError> {
    decode_model(&fs::read(path).map_err(NeuralError::IoFailure)?)
}

/// Byte cursor whose running out of input means a truncated file.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NeuralError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(NeuralError::ChecksumMismatch)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NeuralError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, NeuralError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NeuralError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NeuralError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn reals<T: Real>(&mut self, n: usize) -> Result<Vec<T>, NeuralError> {
        Ok(self.take(n * T::BYTES)?.chunks_exact(T::BYTES).map(T::read_le).collect())
    }

    fn bn<T: Real>(&mut self, width: usize) -> Result<BatchNorm<T>, NeuralError> {
        Ok(BatchNorm {
            gamma: self.reals(width)?,
            beta: self.reals(width)?,
            running_mean: self.reals(width)?,
            running_var: self.reals(width)?,
        })
    }
}

pub fn decode_model<T: Real>(bytes: &[u8]) -> Result<Model<T>, NeuralError> {
    if bytes.len() < 4 || &bytes[..4] != MODEL_MAGIC {
        return Err(NeuralError::VersionMismatch("not a WFD1 model file".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let precision = r.u8()?;
    if precision as usize != T::BYTES {
        return Err(NeuralError::VersionMismatch(format!(
            "model stored with {precision}-byte floats, loading as {}-byte",
            T::BYTES
        )));
    }
    let step = r.u64()?;
    let input_dim = r.u32()? as usize;
    let output_dim = r.u32()? as usize;
    let n_hidden = r.u32()? as usize;
    let mut hidden = Vec::new();
    let mut residual = Vec::new();
    for _ in 0..n_hidden {
        hidden.push(r.u32()? as usize);
        residual.push(r.u8()? != 0);
    }
    let topology = Topology {
        input_dim,
        hidden,
        residual,
        output_dim,
        leaky_slope: r.f64()?,
        dropout_rate: r.f64()?,
        bn_epsilon: r.f64()?,
        bn_momentum: r.f64()?,
    };
    topology
        .validate()
        .map_err(|e| NeuralError::VersionMismatch(format!("bad topology header: {e}")))?;

    let payload_len = r.u64()? as usize;
    let payload_start = r.pos;
    let payload = r.take(payload_len)?;
    let stored = r.u64()?;
    if checksum64(payload) != stored || r.pos != bytes.len() {
        return Err(NeuralError::ChecksumMismatch);
    }

    let mut p = Reader { bytes: &bytes[..payload_start + payload_len], pos: payload_start };
    let mut layers = Vec::with_capacity(n_hidden);
    for i in 0..n_hidden {
        let (fan_in, width) = (topology.layer_input(i), topology.hidden[i]);
        let weight = Matrix::from_vec(fan_in, width, p.reals(fan_in * width)?);
        let bias = p.reals(width)?;
        let bn = p.bn(width)?;
        layers.push(HiddenLayer {
            dense: Dense { weight, bias },
            bn,
        });
    }
    let last = topology.layer_input(n_hidden);
    let bn = p.bn(last)?;
    let weight = Matrix::from_vec(last, output_dim, p.reals(last * output_dim)?);
    let bias = p.reals(output_dim)?;
    if p.pos != payload_start + payload_len {
        return Err(NeuralError::VersionMismatch("payload size does not match topology".into()));
    }
    Ok(Model {
        topology,
        hidden: layers,
        output: OutputLayer {
            bn,
            dense: Dense { weight, bias },
        },
        step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn perturbed_model() -> Model<f32> {
        let topo = Topology::new(6, vec![5, 5], 3).with_residual(vec![false, true]);
        let mut m = Model::<f32>::init(topo, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for layer in &mut m.hidden {
            for v in layer.bn.running_mean.iter_mut().chain(&mut layer.bn.running_var) {
                *v = rng.gen_range(0.0..2.0);
            }
        }
        m.step = 1234;
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = perturbed_model();
        let bytes = encode_model(&m);
        let back: Model<f32> = decode_model(&bytes).unwrap();
        assert_eq!(encode_model(&back), bytes);
        assert_eq!(back, m);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.wfd");
        save_model(&m, &path).unwrap();
        assert_eq!(load_model::<f32>(&path).unwrap(), m);
    }

    #[test]
    fn truncation_and_corruption() {
        let bytes = encode_model(&perturbed_model());
        for cut in [5, 30, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_model::<f32>(&bytes[..cut]), Err(NeuralError::ChecksumMismatch)));
        }
        let mut flipped = bytes.clone();
        let last = flipped.len() - 20;
        flipped[last] ^= 0x40;
        assert!(matches!(decode_model::<f32>(&flipped), Err(NeuralError::ChecksumMismatch)));
    }

    #[test]
    fn wrong_magic_or_precision() {
        let mut bytes = encode_model(&perturbed_model());
        assert!(matches!(decode_model::<f64>(&bytes), Err(NeuralError::VersionMismatch(_))));
        bytes[3] = b'9';
        assert!(matches!(decode_model::<f32>(&bytes), Err(NeuralError::VersionMismatch(_))));
    }
}
