//! Binary model file, little-endian:
//!
//! ```text
//! "FLOD" | version u32 | D u32 | blocks u32 | hidden u32 | flags u32
//! per block:
//!   [glow] actnorm log_scale[D] f32, bias[D] f32
//!   [glow] permutation D × u32
//!   [glow] L strictly-lower entries, row-major, f32
//!   [glow] U upper entries row-major; diagonal as (sign i8, log-magnitude f32)
//!   coupling hidden weight [H × ⌈D/2⌉], bias [H], output weight [2⌊D/2⌋ × H], bias [2⌊D/2⌋], f32
//! ```
//! flags: bit 0 = trained on normalized features, bit 1 = RealNVP architecture.

use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::{ActNorm, AffineCoupling, Architecture, FlowBlock, FlowModel, InvertibleLinear};
use crate::numerics::{LinearLayer, Matrix};

pub const MAGIC: &[u8; 4] = b"FLOD";
pub const FORMAT_VERSION: u32 = 1;

const FLAG_NORMALIZED: u32 = 1;
const FLAG_REALNVP: u32 = 1 << 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated payload: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i8(&mut self) -> Result<i8> {
        Ok(self.take(1)?[0] as i8)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn linear(&mut self, input: usize, output: usize) -> Result<LinearLayer<f32>> {
        let w = Matrix::new(output, input, self.f32s(output * input)?)?;
        let b = self.f32s(output)?;
        LinearLayer::from_parts(w, b)
    }
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl FlowModel<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.dim();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let mut flags = 0;
        if self.normalized_features {
            flags |= FLAG_NORMALIZED;
        }
        if self.architecture() == Architecture::RealNvp {
            flags |= FLAG_REALNVP;
        }
        for v in [
            FORMAT_VERSION,
            d as u32,
            self.block_count() as u32,
            self.hidden_width() as u32,
            flags,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for block in &self.blocks {
            if let Some(a) = &block.actnorm {
                put_f32s(&mut out, &a.log_scale);
                put_f32s(&mut out, &a.bias);
            }
            if let Some(l) = &block.linear {
                for &p in &l.permutation {
                    out.extend_from_slice(&(p as u32).to_le_bytes());
                }
                for i in 0..d {
                    put_f32s(&mut out, &l.lower.row(i)[..i]);
                }
                for i in 0..d {
                    out.push(l.sign[i] as u8);
                    out.extend_from_slice(&l.log_magnitude[i].to_le_bytes());
                    put_f32s(&mut out, &l.upper.row(i)[i + 1..]);
                }
            }
            for layer in [&block.coupling.hidden, &block.coupling.output] {
                put_f32s(&mut out, layer.weight.as_slice());
                put_f32s(&mut out, &layer.bias);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4).ok() != Some(&MAGIC[..]) {
            return Err(Error::Format("bad magic, not a flow model file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let d = r.u32()? as usize;
        let block_count = r.u32()? as usize;
        let hidden = r.u32()? as usize;
        let flags = r.u32()?;
        if flags & !(FLAG_NORMALIZED | FLAG_REALNVP) != 0 {
            return Err(Error::Format(format!("unknown flag bits {flags:#x}")));
        }
        let architecture = if flags & FLAG_REALNVP != 0 {
            Architecture::RealNvp
        } else {
            Architecture::Glow
        };
        if d < 2 || block_count == 0 || hidden == 0 {
            return Err(Error::Format(format!(
                "invalid header: dim {d}, blocks {block_count}, hidden {hidden}"
            )));
        }
        let mut blocks = Vec::with_capacity(block_count.min(4096));
        for b in 0..block_count {
            let (actnorm, linear) = if architecture == Architecture::Glow {
                let log_scale = r.f32s(d)?;
                let bias = r.f32s(d)?;
                let actnorm = ActNorm::from_parts(log_scale, bias)?;
                let mut perm = Vec::with_capacity(d);
                for _ in 0..d {
                    perm.push(r.u32()? as usize);
                }
                let mut lower = Matrix::zeros(d, d);
                for i in 0..d {
                    for j in 0..i {
                        lower.set(i, j, r.f32()?);
                    }
                }
                let mut upper = Matrix::zeros(d, d);
                let mut sign = Vec::with_capacity(d);
                let mut log_mag = Vec::with_capacity(d);
                for i in 0..d {
                    sign.push(r.i8()?);
                    log_mag.push(r.f32()?);
                    for j in i + 1..d {
                        upper.set(i, j, r.f32()?);
                    }
                }
                let linear = InvertibleLinear::from_parts(perm, lower, upper, sign, log_mag)
                    .map_err(|e| Error::Format(format!("block {b}: {e}")))?;
                (Some(actnorm), Some(linear))
            } else {
                (None, None)
            };
            let (pass, trans) = AffineCoupling::<f32>::ranges(d, b % 2);
            let hidden_layer = r.linear(pass.len(), hidden)?;
            let output_layer = r.linear(hidden, 2 * trans.len())?;
            let coupling = AffineCoupling::from_parts(d, b % 2, hidden_layer, output_layer)?;
            blocks.push(FlowBlock {
                actnorm,
                linear,
                coupling,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after the last block",
                bytes.len() - r.pos
            )));
        }
        let model = FlowModel::from_blocks(
            d,
            hidden,
            architecture,
            flags & FLAG_NORMALIZED != 0,
            blocks,
        )?;
        let finite = model.blocks.iter().all(|b| {
            b.coupling.hidden.weight.is_finite()
                && b.coupling.output.weight.is_finite()
                && b.actnorm.as_ref().is_none_or(|a| {
                    a.log_scale.iter().chain(&a.bias).all(|v| v.is_finite())
                })
        });
        if !finite {
            return Err(Error::Format("non-finite parameter in model file".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
