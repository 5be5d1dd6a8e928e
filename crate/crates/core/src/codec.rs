//! Little-endian binary containers: `MSC1` models, `PRB1` probe sections and
//! `DSC1` dataset caches.
//!
//! MSC1 layout: magic, `u32` class count, `u32` layer count, per layer
//! (`u8` kind, `u32` input width, `u32` output width, `u8` activation code),
//! then every layer's weights (row-major) followed by its biases as `f64`.
//!
//! PRB1 layout (appended after an MSC1 block): magic, `u8` flags (bit 0 set
//! when the probes are trained), `u32` probe count, then per probe `u32`
//! layer index, weights (`class_count × width`, row-major) and biases.
//!
//! DSC1 layout: magic, `u32` class count, `u32` case count, `u32` rank,
//! `u32` per dimension, all labels as `u32`, then all features as `f64`.

use crate::data::{Case, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseParams, LayerKind, LayerSpec, Model, NetworkSpec};
use crate::probe::{InstrumentedModel, Probe};
use crate::tensor::Tensor;

pub const MODEL_MAGIC: &[u8; 4] = b"MSC1";
pub const PROBE_MAGIC: &[u8; 4] = b"PRB1";
pub const DATASET_MAGIC: &[u8; 4] = b"DSC1";

const FLAG_TRAINED: u8 = 1;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("dimension fits in u32");
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(format!(
                "truncated: need {n} bytes, {} remain",
                self.buf.len() - self.pos
            ))),
        }
    }

    fn err(&self, detail: impl Into<String>) -> Error {
        Error::format_at(format!("byte offset {}", self.pos), detail)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let at = self.pos;
        let got = self.take(4)?;
        if got != expected {
            return Err(Error::format_at(
                format!("byte offset {at}"),
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let at = self.pos;
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| self.err("length overflow"))?,
        )?;
        let vs: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if let Some(i) = vs.iter().position(|v| !v.is_finite()) {
            return Err(Error::format_at(
                format!("byte offset {}", at + 8 * i),
                "non-finite value",
            ));
        }
        Ok(vs)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::ReLU => 1,
        Activation::Softmax => 2,
    }
}

fn write_model(w: &mut Writer, model: &Model) {
    let spec = model.spec();
    w.bytes(MODEL_MAGIC);
    w.u32(spec.class_count);
    w.u32(spec.layers.len());
    for l in &spec.layers {
        w.u8(match l.kind {
            LayerKind::Dense => 0,
        });
        w.u32(l.input_width);
        w.u32(l.output_width);
        w.u8(activation_code(l.activation));
    }
    for p in model.params() {
        w.f64s(p.weights.data());
        w.f64s(p.biases.data());
    }
}

fn read_model(r: &mut Reader) -> Result<Model> {
    r.magic(MODEL_MAGIC)?;
    let class_count = r.u32()?;
    let layer_count = r.u32()?;
    let mut layers = Vec::with_capacity(layer_count.min(1024));
    for _ in 0..layer_count {
        let kind = match r.u8()? {
            0 => LayerKind::Dense,
            k => return Err(r.err(format!("unknown layer kind {k}"))),
        };
        let input_width = r.u32()?;
        let output_width = r.u32()?;
        let activation = match r.u8()? {
            0 => Activation::Identity,
            1 => Activation::ReLU,
            2 => Activation::Softmax,
            a => return Err(r.err(format!("unknown activation code {a}"))),
        };
        layers.push(LayerSpec {
            kind,
            input_width,
            output_width,
            activation,
        });
    }
    let spec = NetworkSpec {
        layers,
        class_count,
    };
    spec.validate()
        .map_err(|e| r.err(format!("invalid network header: {e}")))?;
    let mut params = Vec::with_capacity(spec.layers.len());
    for l in &spec.layers {
        let w = r.f64s(l.input_width * l.output_width)?;
        let b = r.f64s(l.output_width)?;
        params.push(DenseParams {
            weights: Tensor::new(vec![l.output_width, l.input_width], w)?,
            biases: Tensor::new(vec![l.output_width], b)?,
        });
    }
    Model::new(spec, params)
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut w = Writer::default();
    write_model(&mut w, model);
    w.buf
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader::new(bytes);
    let m = read_model(&mut r)?;
    r.finish()?;
    Ok(m)
}

pub fn encode_instrumented(im: &InstrumentedModel) -> Vec<u8> {
    let mut w = Writer::default();
    write_model(&mut w, im.base());
    w.bytes(PROBE_MAGIC);
    w.u8(if im.is_trained() { FLAG_TRAINED } else { 0 });
    w.u32(im.probes().len());
    for p in im.probes() {
        w.u32(p.layer_index());
        w.f64s(p.weights().data());
        w.f64s(p.biases().data());
    }
    w.buf
}

pub fn decode_instrumented(bytes: &[u8]) -> Result<InstrumentedModel> {
    let mut r = Reader::new(bytes);
    let base = read_model(&mut r)?;
    r.magic(PROBE_MAGIC)?;
    let flags = r.u8()?;
    if flags & !FLAG_TRAINED != 0 {
        return Err(r.err(format!("unknown probe flags {flags:#04x}")));
    }
    let count = r.u32()?;
    if count != base.spec().hidden_count() {
        return Err(r.err(format!(
            "{count} probes for {} hidden layers",
            base.spec().hidden_count()
        )));
    }
    let n = base.class_count();
    let mut probes = Vec::with_capacity(count);
    for _ in 0..count {
        let layer_index = r.u32()?;
        if layer_index == 0 || layer_index > base.spec().hidden_count() {
            return Err(r.err(format!(
                "probe layer index {layer_index} is not a hidden layer"
            )));
        }
        let width = base.spec().layers[layer_index - 1].output_width;
        let w = r.f64s(n * width)?;
        let b = r.f64s(n)?;
        probes.push(Probe::new(
            layer_index,
            Tensor::new(vec![n, width], w)?,
            Tensor::new(vec![n], b)?,
        )?);
    }
    r.finish()?;
    InstrumentedModel::from_parts(base, probes, flags & FLAG_TRAINED != 0)
}

pub fn encode_dataset(data: &LabeledDataset) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(DATASET_MAGIC);
    w.u32(data.class_count());
    w.u32(data.len());
    w.u32(data.input_shape().len());
    for &d in data.input_shape() {
        w.u32(d);
    }
    for c in data.cases() {
        w.u32(c.label);
    }
    for c in data.cases() {
        w.f64s(c.input.data());
    }
    w.buf
}

pub fn decode_dataset(bytes: &[u8]) -> Result<LabeledDataset> {
    let mut r = Reader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    let class_count = r.u32()?;
    let count = r.u32()?;
    let rank = r.u32()?;
    if rank == 0 || rank > 8 {
        return Err(r.err(format!("unsupported input rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32()?);
    }
    let width: usize = shape.iter().product();
    let mut labels = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        labels.push(r.u32()?);
    }
    let mut cases = Vec::with_capacity(count.min(1 << 20));
    for label in labels {
        let x = r.f64s(width)?;
        cases.push(Case {
            input: Tensor::new(shape.clone(), x)?,
            label,
        });
    }
    r.finish()?;
    LabeledDataset::new(class_count, cases)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn model_header_is_self_describing() {
        let spec = NetworkSpec::mlp(2, &[3], 2).unwrap();
        let m = Model::initialize(spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let bytes = encode_model(&m);
        assert_eq!(&bytes[..4], b"MSC1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        // 2 layer headers of 10 bytes, then 6+3+6+2 doubles
        assert_eq!(bytes.len(), 12 + 20 + 8 * 17);
        assert_eq!(decode_model(&bytes).unwrap(), m);
    }

    #[test]
    fn model_rejects_bad_magic_and_truncation() {
        let spec = NetworkSpec::mlp(2, &[3], 2).unwrap();
        let m = Model::initialize(spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut bytes = encode_model(&m);
        let short = &bytes[..bytes.len() - 3];
        match decode_model(short) {
            Err(Error::Format { detail, .. }) => assert!(detail.contains("truncated")),
            other => panic!("{other:?}"),
        }
        bytes[0] = b'X';
        match decode_model(&bytes) {
            Err(Error::Format { location, .. }) => assert_eq!(location, "byte offset 0"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dataset_round_trip() {
        let cases = vec![
            Case {
                input: Tensor::new(vec![2, 2], vec![0.0, 1.0, -2.5, 3.25]).unwrap(),
                label: 1,
            },
            Case {
                input: Tensor::new(vec![2, 2], vec![1e-300, 7.0, 0.1, 0.2]).unwrap(),
                label: 0,
            },
        ];
        let d = LabeledDataset::new(3, cases).unwrap();
        let bytes = encode_dataset(&d);
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back, d);
        assert_eq!(encode_dataset(&back), bytes);
    }
}
