//! Encoder checkpoint file format.
//!
//! Layout (all little-endian):
//!   magic "ANET" | version u32 | K u32 | architecture descriptor (u32 len +
//!   UTF-8) | descriptor FNV-1a64 hash u64 | embedded config text (u32 len +
//!   UTF-8) | per-channel stats 3 x (mean f64, std f64) | tensor count u32 |
//!   per tensor: rank u32, dims u32 x rank, data f32 x prod(dims).

use std::path::Path;

use crate::autodiff::Tensor;
use crate::binio::{fnv1a64, ByteReader, ByteWriter};
use crate::codec::validate_bits;
use crate::encoder::{Architecture, ChannelStats, EncoderParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ANET";
const VERSION: u32 = 1;

/// A loaded checkpoint: the encoder plus the training config it was
/// produced with (verbatim TOML text, possibly empty).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: EncoderParams,
    pub config_echo: String,
}

pub fn save_checkpoint(params: &EncoderParams, config_echo: &str, path: &Path) -> Result<()> {
    let mut w = ByteWriter::new();
    w.magic(MAGIC);
    w.u32(VERSION);
    w.u32(params.hash_bits);
    let descriptor = params.arch.descriptor();
    w.str32(&descriptor);
    w.u64(fnv1a64(descriptor.as_bytes()));
    w.str32(config_echo);
    for ch in 0..3 {
        w.f64(params.norm.mean[ch]);
        w.f64(params.norm.std[ch]);
    }
    w.u32(params.tensors.len() as u32);
    for t in &params.tensors {
        w.u32(t.shape.len() as u32);
        for &d in &t.shape {
            w.u32(d as u32);
        }
        for &v in &t.data {
            w.f32(v as f32);
        }
    }
    std::fs::write(path, w.into_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let mut r = ByteReader::new(&bytes, path);
    r.expect_magic(MAGIC)?;
    r.expect_version(VERSION)?;
    let bits = r.u32("hash bits")?;
    validate_bits(bits)?;
    let descriptor = r.str32("architecture descriptor")?;
    let stored_hash = r.u64("descriptor hash")?;
    if stored_hash != fnv1a64(descriptor.as_bytes()) {
        return Err(Error::DescriptorHashMismatch);
    }
    let arch = Architecture::parse(&descriptor)?;
    if arch.output_bits()? != bits {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            detail: format!("architecture ends in {} bits, header says {bits}", arch.output_bits()?),
        });
    }
    let config_echo = r.str32("config echo")?;
    let mut norm = ChannelStats::identity();
    for ch in 0..3 {
        norm.mean[ch] = r.f64("channel mean")?;
        norm.std[ch] = r.f64("channel std")?;
    }
    let n_tensors = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let rank = r.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("tensor dim")? as usize);
        }
        let n: usize = shape.iter().product();
        let data: Vec<f64> = r.f32_slice(n, "tensor data")?.into_iter().map(f64::from).collect();
        tensors.push(Tensor::from_vec(&shape, data)?);
    }
    r.expect_end()?;

    let expected = expected_tensor_shapes(&arch);
    if tensors.len() != expected.len()
        || tensors.iter().zip(&expected).any(|(t, e)| &t.shape != e)
    {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            detail: "tensor shapes do not match the architecture".to_string(),
        });
    }

    Ok(Checkpoint {
        params: EncoderParams {
            arch,
            hash_bits: bits,
            tensors,
            norm,
        },
        config_echo,
    })
}

fn expected_tensor_shapes(arch: &Architecture) -> Vec<Vec<usize>> {
    use crate::encoder::LayerSpec;
    let mut out = Vec::new();
    for layer in &arch.layers {
        match layer {
            LayerSpec::Conv { in_ch, out_ch } => {
                out.push(vec![*out_ch, *in_ch, 3, 3]);
                out.push(vec![*out_ch]);
            }
            LayerSpec::Dense { n_in, n_out } => {
                out.push(vec![*n_out, *n_in]);
                out.push(vec![*n_out]);
            }
            _ => {}
        }
    }
    out
}
