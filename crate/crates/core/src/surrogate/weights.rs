//! MSUW weight container, little-endian:
//!
//! ```text
//! "MSUW" | version u32 | levels u32 | base_channels u32 | in_channels u32 | out_channels u32 | input_side u32
//! tensor count u32 | per tensor: name_len u32 | UTF-8 name | rank u32 | dims u64[rank] | f32 payload (row-major)
//! ```
//!
//! Both convolution and transposed-convolution kernels are stored as
//! `[out_channels, in_channels, kh, kw]`. Decoder level `L` concatenates its
//! upsampled features before the matching encoder features, so the first
//! `c_L` input channels of `dec{L}.conv1` see the upsampled path.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::SurrogateError;
use crate::rng::SeededStream;

pub const MAGIC: [u8; 4] = *b"MSUW";
pub const FORMAT_VERSION: u32 = 1;

/// Network shape descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub levels: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    /// `n_c − 1` predicted basis channels.
    pub out_channels: usize,
    pub input_side: usize,
}

impl Architecture {
    /// The default four-level, base-16 network for 32×32 tiles and `n_c = 5`.
    pub fn standard(levels: usize) -> Self {
        Self { levels, base_channels: 16, in_channels: 1, out_channels: 4, input_side: 32 }
    }

    pub fn validate(&self) -> Result<(), SurrogateError> {
        let bad = |m: String| Err(SurrogateError::InvalidArchitecture(m));
        if !(2..=4).contains(&self.levels) {
            return bad(format!("levels must be 2, 3 or 4, got {}", self.levels));
        }
        if self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        let factor = 1usize << self.levels;
        if self.input_side == 0 || !self.input_side.is_multiple_of(factor) {
            return bad(format!("input side {} is not divisible by 2^{}", self.input_side, self.levels));
        }
        Ok(())
    }

    /// Feature channels at encoder/decoder level `level` (1 = finest).
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << (level - 1)
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.base_channels << self.levels
    }

    /// Tensor names and shapes in file order: encoder levels from the finest,
    /// bottleneck, decoder levels from the coarsest, classifier.
    pub fn schedule(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut conv = |name: String, cin: usize, cout: usize, k: usize| {
            out.push((format!("{name}.weight"), vec![cout, cin, k, k]));
            out.push((format!("{name}.bias"), vec![cout]));
        };
        let mut cin = self.in_channels;
        for l in 1..=self.levels {
            let c = self.channels(l);
            conv(format!("enc{l}.conv1"), cin, c, 3);
            conv(format!("enc{l}.conv2"), c, c, 3);
            cin = c;
        }
        let b = self.bottleneck_channels();
        conv("bottleneck.conv1".into(), cin, b, 3);
        conv("bottleneck.conv2".into(), b, b, 3);
        for l in (1..=self.levels).rev() {
            let c = self.channels(l);
            conv(format!("dec{l}.up"), 2 * c, c, 3);
            conv(format!("dec{l}.conv1"), 2 * c, c, 3);
            conv(format!("dec{l}.conv2"), c, c, 3);
        }
        conv("classifier".into(), self.base_channels, self.out_channels, 1);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.schedule().iter().map(|(_, d)| d.iter().product::<usize>()).sum()
    }
}

/// Row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

/// Validated network weights.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetWeights {
    arch: Architecture,
    tensors: HashMap<String, Tensor>,
}

impl UNetWeights {
    /// Checks that `tensors` carries exactly the scheduled names and shapes with finite values.
    pub fn new(arch: Architecture, tensors: HashMap<String, Tensor>) -> Result<Self, SurrogateError> {
        arch.validate()?;
        let schedule = arch.schedule();
        for (name, dims) in &schedule {
            let t = tensors.get(name).ok_or_else(|| SurrogateError::MissingTensor(name.clone()))?;
            if &t.dims != dims || t.data.len() != dims.iter().product::<usize>() {
                return Err(SurrogateError::TensorShape { name: name.clone(), expected: dims.clone(), got: t.dims.clone() });
            }
            if let Some(offset) = t.data.iter().position(|v| !v.is_finite()) {
                return Err(SurrogateError::NonFinite { name: name.clone(), offset });
            }
        }
        if tensors.len() != schedule.len() {
            let unknown = tensors
                .keys()
                .find(|k| !schedule.iter().any(|(n, _)| n == *k))
                .cloned()
                .unwrap_or_default();
            return Err(SurrogateError::UnknownTensor(unknown));
        }
        Ok(Self { arch, tensors })
    }

    /// All tensors zero.
    pub fn zeros(arch: Architecture) -> Result<Self, SurrogateError> {
        arch.validate()?;
        let tensors = arch
            .schedule()
            .into_iter()
            .map(|(name, dims)| {
                let n = dims.iter().product();
                (name, Tensor { dims, data: vec![0.0; n] })
            })
            .collect();
        Self::new(arch, tensors)
    }

    /// He-normal kernels (`std = √(2 / fan_in)`) and small normal biases
    /// (`std = 0.05`), drawn in schedule order from one seeded stream.
    pub fn random(arch: Architecture, seed: u64) -> Result<Self, SurrogateError> {
        arch.validate()?;
        let mut rng = SeededStream::new(seed);
        let tensors = arch
            .schedule()
            .into_iter()
            .map(|(name, dims)| {
                let n: usize = dims.iter().product();
                let std = if dims.len() == 4 { (2.0 / (dims[1] * dims[2] * dims[3]) as f64).sqrt() } else { 0.05 };
                let data = (0..n).map(|_| (std * rng.standard_normal()) as f32).collect();
                (name, Tensor { dims, data })
            })
            .collect();
        Self::new(arch, tensors)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn tensor(&self, name: &str) -> &Tensor {
        self.tensors.get(name).unwrap_or_else(|| panic!("validated weights lack tensor {name}"))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }
}

/// Serializes `weights` in schedule order.
pub fn save_weights_to<W: Write>(mut out: W, weights: &UNetWeights) -> Result<(), SurrogateError> {
    let a = weights.arch;
    let schedule = a.schedule();
    out.write_all(&MAGIC)?;
    for v in [FORMAT_VERSION as usize, a.levels, a.base_channels, a.in_channels, a.out_channels, a.input_side] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    out.write_all(&(schedule.len() as u32).to_le_bytes())?;
    for (name, _) in &schedule {
        let t = weights.tensor(name);
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.dims.len() as u32).to_le_bytes())?;
        for &d in &t.dims {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &t.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save_weights(path: impl AsRef<Path>, weights: &UNetWeights) -> Result<(), SurrogateError> {
    save_weights_to(BufWriter::new(File::create(path)?), weights)
}

/// Reader that tracks its byte offset and the last complete tensor.
struct Cursor<R> {
    inner: R,
    offset: u64,
    last_tensor: Option<String>,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, buf: &mut [u8], what: &str) -> Result<(), SurrogateError> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => SurrogateError::Truncated {
                offset: self.offset,
                reading: what.to_string(),
                last_tensor: self.last_tensor.clone(),
            },
            _ => SurrogateError::Io(e),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32, SurrogateError> {
        let mut b = [0u8; 4];
        self.bytes(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self, what: &str) -> Result<u64, SurrogateError> {
        let mut b = [0u8; 8];
        self.bytes(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }
}

/// Parses and validates a weight file.
pub fn load_weights_from<R: Read>(input: R) -> Result<UNetWeights, SurrogateError> {
    let mut cur = Cursor { inner: input, offset: 0, last_tensor: None };
    let mut magic = [0u8; 4];
    cur.bytes(&mut magic, "magic")?;
    if magic != MAGIC {
        return Err(SurrogateError::BadMagic(magic));
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(SurrogateError::UnsupportedVersion(version));
    }
    let mut field = || cur.u32("architecture block").map(|v| v as usize);
    let arch = Architecture {
        levels: field()?,
        base_channels: field()?,
        in_channels: field()?,
        out_channels: field()?,
        input_side: field()?,
    };
    arch.validate()?;
    let schedule: HashMap<String, Vec<usize>> = arch.schedule().into_iter().collect();
    let count = cur.u32("tensor count")? as usize;
    let mut tensors = HashMap::new();
    for _ in 0..count {
        let at = cur.offset;
        let len = cur.u32("tensor name length")? as usize;
        if len > 256 {
            return Err(SurrogateError::BadName { offset: at });
        }
        let mut name = vec![0u8; len];
        cur.bytes(&mut name, "tensor name")?;
        let name = String::from_utf8(name).map_err(|_| SurrogateError::BadName { offset: at })?;
        let expected = schedule.get(&name).ok_or_else(|| SurrogateError::UnknownTensor(name.clone()))?;
        if tensors.contains_key(&name) {
            return Err(SurrogateError::DuplicateTensor(name));
        }
        let rank = cur.u32(&format!("rank of {name}"))? as usize;
        if rank != expected.len() {
            return Err(SurrogateError::TensorShape { name, expected: expected.clone(), got: vec![0; rank] });
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u64(&format!("dims of {name}"))? as usize);
        }
        if &dims != expected {
            return Err(SurrogateError::TensorShape { name, expected: expected.clone(), got: dims });
        }
        let n: usize = dims.iter().product();
        let start = cur.offset;
        let mut raw = vec![0u8; 4 * n];
        cur.bytes(&mut raw, &format!("payload of {name}"))?;
        let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(SurrogateError::NonFiniteAt { name, offset: start + 4 * i as u64 });
        }
        cur.last_tensor = Some(name.clone());
        tensors.insert(name, Tensor { dims, data });
    }
    UNetWeights::new(arch, tensors)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<UNetWeights, SurrogateError> {
    load_weights_from(BufReader::new(File::open(path)?))
}
