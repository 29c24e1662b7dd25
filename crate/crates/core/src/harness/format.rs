//! Binary mask files (`ABPM`) and network checkpoints (`ABPC`).
//!
//! Both share one framing, all integers little-endian:
//!
//! ```text
//! magic [4] | version u16 | tensor count u32
//! per tensor: name_len u32 | name utf-8 | rank u8 | dims u64 × rank | payload
//! crc32 u32   (over every preceding byte)
//! ```
//!
//! Mask payloads are the bits packed LSB-first and padded to a byte;
//! checkpoint payloads are `f64` values.

use std::path::Path;

use crate::binary_mask::{BinaryMask, MaskBits};
use crate::error::{Error, Result};
use crate::mask::{MaskLogits, Temperatures};
use crate::model::{BaseLayer, DenseLayer, LossKind, MaskedNetwork, Mlp};
use crate::ops::Activation;
use crate::tensor::Tensor;

pub const MASK_MAGIC: [u8; 4] = *b"ABPM";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ABPC";
pub const FORMAT_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 4;
const CRC_LEN: usize = 4;

#[derive(Clone, Copy)]
enum Payload {
    Bits,
    Floats,
}

struct Entry<'a> {
    name: &'a str,
    shape: &'a [usize],
    payload: Vec<u8>,
}

fn encode(magic: [u8; 4], entries: &[Entry<'_>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.shape.len() as u8);
        for &d in e.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&e.payload);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(format!("{what} at byte {}", self.pos))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

struct RawEntry<'a> {
    name: String,
    shape: Vec<usize>,
    payload: &'a [u8],
}

/// Walks the body (everything between header and checksum).
fn parse_body<'a>(body: &'a [u8], count: u32, kind: Payload) -> Result<Vec<RawEntry<'a>>> {
    let mut r = Reader { bytes: body, pos: 0 };
    let mut out = Vec::new();
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = r.u64("dimension")?;
            shape.push(usize::try_from(d).map_err(|_| Error::Malformed(format!("dimension {d} too large")))?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Malformed("element count overflows".into()))?;
        let len = match kind {
            Payload::Bits => Some(n.div_ceil(8)),
            Payload::Floats => n.checked_mul(8),
        }
        .ok_or_else(|| Error::Malformed("payload length overflows".into()))?;
        let payload = r.take(len, "payload")?;
        out.push(RawEntry { name, shape, payload });
    }
    if r.pos != body.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(out)
}

fn decode(bytes: &[u8], magic: [u8; 4], kind: Payload) -> Result<Vec<RawEntry<'_>>> {
    if bytes.len() < 4 {
        return Err(Error::Truncated(format!("{} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if found != magic {
        return Err(Error::BadMagic { expected: magic, found });
    }
    if bytes.len() < 6 {
        return Err(Error::Truncated("version".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(Error::Truncated(format!("{} bytes, minimum is {}", bytes.len(), HEADER_LEN + CRC_LEN)));
    }
    let count = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes"));
    let split = bytes.len() - CRC_LEN;
    let stored = u32::from_le_bytes(bytes[split..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..split]);
    let body = &bytes[HEADER_LEN..split];
    if stored != computed {
        // A body too short for its own headers means bytes were lost.
        return match parse_body(body, count, kind) {
            Err(e @ Error::Truncated(_)) => Err(e),
            _ => Err(Error::ChecksumMismatch { stored, computed }),
        };
    }
    parse_body(body, count, kind)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn encode_mask(mask: &BinaryMask) -> Vec<u8> {
    let entries: Vec<Entry<'_>> = mask
        .tensors()
        .iter()
        .map(|t| Entry {
            name: &t.name,
            shape: t.bits.shape(),
            payload: t.bits.packed().to_vec(),
        })
        .collect();
    encode(MASK_MAGIC, &entries)
}

pub fn decode_mask(bytes: &[u8]) -> Result<BinaryMask> {
    let mut mask = BinaryMask::new();
    for e in decode(bytes, MASK_MAGIC, Payload::Bits)? {
        let bits = MaskBits::from_packed(&e.shape, e.payload.to_vec())?;
        mask.push(e.name, bits).map_err(|e| Error::Malformed(e.to_string()))?;
    }
    Ok(mask)
}

/// Exact size of [`encode_mask`]'s output.
pub fn mask_file_len(mask: &BinaryMask) -> usize {
    HEADER_LEN
        + mask
            .tensors()
            .iter()
            .map(|t| 4 + t.name.len() + 1 + 8 * t.bits.shape().len() + t.bits.len().div_ceil(8))
            .sum::<usize>()
        + CRC_LEN
}

pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    write_file(path, &encode_mask(mask))
}

pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    decode_mask(&read_file(path)?)
}

/// Named `f64` tensors in file order.
pub type TensorList = Vec<(String, Tensor)>;

pub fn encode_tensors(tensors: &[(String, Tensor)]) -> Vec<u8> {
    let entries: Vec<Entry<'_>> = tensors
        .iter()
        .map(|(name, t)| Entry {
            name,
            shape: t.shape(),
            payload: t.data().iter().flat_map(|v| v.to_le_bytes()).collect(),
        })
        .collect();
    encode(CHECKPOINT_MAGIC, &entries)
}

pub fn decode_tensors(bytes: &[u8]) -> Result<TensorList> {
    decode(bytes, CHECKPOINT_MAGIC, Payload::Floats)?
        .into_iter()
        .map(|e| {
            let data = e
                .payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Ok((e.name, Tensor::new(e.shape, data)?))
        })
        .collect()
}

fn loss_code(kind: LossKind) -> f64 {
    match kind {
        LossKind::SquaredError => 0.0,
        LossKind::CrossEntropy => 1.0,
    }
}

fn loss_from_code(code: f64) -> Result<LossKind> {
    match code as i64 {
        0 => Ok(LossKind::SquaredError),
        1 => Ok(LossKind::CrossEntropy),
        _ => Err(Error::Malformed(format!("unknown loss code {code}"))),
    }
}

/// Flattens a network (frozen base, logits, head, metadata) into named tensors.
///
/// Base layer `L` contributes `L.weight`, `L.bias`, `L.theta` and, when its
/// bias is masked, `L.bias_theta`; head layer `i` contributes
/// `head.{i}.weight` and `head.{i}.bias`.
pub fn network_to_tensors(net: &MaskedNetwork) -> TensorList {
    let mut out = Vec::new();
    for l in net.base() {
        let name = l.name();
        out.push((format!("{name}.weight"), l.w0().clone()));
        out.push((format!("{name}.bias"), l.bias0().clone()));
        out.push((format!("{name}.theta"), l.logits().theta().clone()));
        if let Some(b) = l.bias_logits() {
            out.push((format!("{name}.bias_theta"), b.theta().clone()));
        }
    }
    for (i, layer) in net.head.layers.iter().enumerate() {
        out.push((format!("head.{i}.weight"), layer.weights.clone()));
        out.push((format!("head.{i}.bias"), layer.bias.clone()));
    }
    let codes = |acts: Vec<Activation>| Tensor::vector(acts.into_iter().map(Activation::code).collect());
    out.push(("meta.base_activations".into(), codes(net.base().iter().map(|l| l.activation()).collect())));
    out.push(("meta.head_activations".into(), codes(net.head.layers.iter().map(|l| l.activation).collect())));
    out.push(("meta.loss".into(), Tensor::vector(vec![loss_code(net.loss_kind())])));
    let t = net.base().first().map_or(Temperatures::default(), |l| l.logits().temperatures());
    out.push(("meta.temperatures".into(), Tensor::vector(vec![t.large(), t.small()])));
    out
}

pub fn network_from_tensors(tensors: TensorList) -> Result<MaskedNetwork> {
    let find = |name: &str| {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Malformed(format!("checkpoint lacks `{name}`")))
    };
    let base_acts = find("meta.base_activations")?.data().to_vec();
    let head_acts = find("meta.head_activations")?.data().to_vec();
    let loss = loss_from_code(find("meta.loss")?.data().first().copied().unwrap_or(-1.0))?;
    let temps = match find("meta.temperatures")?.data() {
        [l, s] => Temperatures::new(*l, *s)?,
        _ => return Err(Error::Malformed("meta.temperatures needs two values".into())),
    };

    let mut base_names: Vec<&str> = Vec::new();
    for (name, _) in &tensors {
        if let Some(prefix) = name.strip_suffix(".theta") {
            base_names.push(prefix);
        }
    }
    if base_names.len() != base_acts.len() {
        return Err(Error::Malformed(format!(
            "{} base layers but {} activations",
            base_names.len(),
            base_acts.len()
        )));
    }
    let mut base = Vec::new();
    for (name, &code) in base_names.iter().zip(&base_acts) {
        let w = find(&format!("{name}.weight"))?.clone();
        let b = find(&format!("{name}.bias"))?.clone();
        let bias_theta = tensors
            .iter()
            .find(|(n, _)| *n == format!("{name}.bias_theta"))
            .map(|(_, t)| t.clone());
        let mut layer = BaseLayer::new(*name, w, b, Activation::from_code(code)?, temps, bias_theta.is_some())?;
        *layer.logits_mut() = MaskLogits::new(find(&format!("{name}.theta"))?.clone(), temps)?;
        if let (Some(bl), Some(t)) = (layer.bias_logits_mut(), bias_theta) {
            *bl = MaskLogits::new(t, temps)?;
        }
        base.push(layer);
    }
    let mut layers = Vec::new();
    for (i, &code) in head_acts.iter().enumerate() {
        layers.push(DenseLayer {
            weights: find(&format!("head.{i}.weight"))?.clone(),
            bias: find(&format!("head.{i}.bias"))?.clone(),
            activation: Activation::from_code(code)?,
        });
    }
    MaskedNetwork::new(base, Mlp { layers }, loss)
}

pub fn encode_checkpoint(net: &MaskedNetwork) -> Vec<u8> {
    encode_tensors(&network_to_tensors(net))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<MaskedNetwork> {
    network_from_tensors(decode_tensors(bytes)?)
}

pub fn save_checkpoint(net: &MaskedNetwork, path: &Path) -> Result<()> {
    write_file(path, &encode_checkpoint(net))
}

pub fn load_checkpoint(path: &Path) -> Result<MaskedNetwork> {
    decode_checkpoint(&read_file(path)?)
}
