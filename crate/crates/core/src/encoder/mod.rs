//! The convolutional encoder f: feature tensor -> K-dimensional hash
//! activation, built on the autodiff tape.

mod adam;
mod arch;
mod checkpoint;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use arch::{Architecture, LayerSpec};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::codec::{balanced_sign, HashCode};
use crate::error::{Error, Result};
use crate::features::FeatureTensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Continuous hash-layer output v_h plus its mean-centered form, which both
/// the balanced binarization and the STE gate key off.
#[derive(Debug, Clone)]
pub struct HashActivation {
    v_h: Vec<f64>,
    centered: Vec<f64>,
}

impl HashActivation {
    pub fn new(v_h: Vec<f64>) -> Self {
        let mean = v_h.iter().sum::<f64>() / v_h.len() as f64;
        let centered: Vec<f64> = v_h.iter().map(|v| v - mean).collect();
        debug_assert!(
            (centered.iter().sum::<f64>() / centered.len() as f64).abs() <= 1e-6,
            "centered activation should have zero mean"
        );
        HashActivation { v_h, centered }
    }

    pub fn len(&self) -> usize {
        self.v_h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_h.is_empty()
    }

    pub fn v_h(&self) -> &[f64] {
        &self.v_h
    }

    pub fn centered(&self) -> &[f64] {
        &self.centered
    }

    /// Balanced binarization of this activation.
    pub fn code(&self) -> HashCode {
        balanced_sign(&self.v_h)
    }
}

/// Per-channel input standardization statistics, estimated on the training
/// set and stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ChannelStats {
    pub fn identity() -> Self {
        ChannelStats {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    /// Mean/std of each channel over a set of feature tensors.
    pub fn estimate<'a, I: IntoIterator<Item = &'a FeatureTensor>>(tensors: I) -> Self {
        let mut sum = [0.0f64; 3];
        let mut sum_sq = [0.0f64; 3];
        let mut count = [0u64; 3];
        for t in tensors {
            for ch in 0..3 {
                for &v in t.channel(ch) {
                    sum[ch] += v as f64;
                    sum_sq[ch] += (v as f64) * (v as f64);
                    count[ch] += 1;
                }
            }
        }
        let mut mean = [0.0; 3];
        let mut std = [1.0; 3];
        for ch in 0..3 {
            if count[ch] > 0 {
                mean[ch] = sum[ch] / count[ch] as f64;
                let var = (sum_sq[ch] / count[ch] as f64 - mean[ch] * mean[ch]).max(0.0);
                std[ch] = var.sqrt();
            }
        }
        ChannelStats { mean, std }
    }
}

/// Encoder weights: one tensor per parameter slot, ordered by layer.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub arch: Architecture,
    pub hash_bits: u32,
    pub tensors: Vec<Tensor>,
    pub norm: ChannelStats,
}

impl EncoderParams {
    /// Fan-in-scaled uniform weights, zero biases, seeded.
    pub fn init(arch: Architecture, norm: ChannelStats, seed: u64) -> Result<Self> {
        let hash_bits = arch.output_bits()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut tensors = Vec::new();
        for layer in &arch.layers {
            match layer {
                LayerSpec::Conv { in_ch, out_ch } => {
                    let fan_in = in_ch * 9;
                    let a = (3.0 / fan_in as f64).sqrt();
                    let w: Vec<f64> = (0..out_ch * in_ch * 9).map(|_| rng.gen_range(-a..a)).collect();
                    tensors.push(Tensor::from_vec(&[*out_ch, *in_ch, 3, 3], w)?);
                    tensors.push(Tensor::zeros(&[*out_ch]));
                }
                LayerSpec::Dense { n_in, n_out } => {
                    let a = (3.0 / *n_in as f64).sqrt();
                    let w: Vec<f64> = (0..n_in * n_out).map(|_| rng.gen_range(-a..a)).collect();
                    tensors.push(Tensor::from_vec(&[*n_out, *n_in], w)?);
                    tensors.push(Tensor::zeros(&[*n_out]));
                }
                _ => {}
            }
        }
        Ok(EncoderParams {
            arch,
            hash_bits,
            tensors,
            norm,
        })
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Standardizes a feature tensor into the [3, T, 40] autodiff input.
    fn standardize(&self, x: &FeatureTensor) -> Tensor {
        let t = x.frames();
        let c = x.coeffs();
        let mut data = Vec::with_capacity(3 * t * c);
        for ch in 0..3 {
            let mean = self.norm.mean[ch];
            let std = self.norm.std[ch].max(1e-6);
            data.extend(x.channel(ch).iter().map(|&v| (v as f64 - mean) / std));
        }
        Tensor::from_vec(&[3, t, c], data).expect("feature tensor length invariant")
    }
}

/// A recorded forward pass: the activation plus everything needed to
/// backpropagate a seed gradient at v_h into parameter gradients.
pub struct EncoderPass {
    tape: Tape,
    param_ids: Vec<NodeId>,
    out: NodeId,
}

impl EncoderPass {
    pub fn activation(&self) -> HashActivation {
        HashActivation::new(self.tape.value(self.out).data.clone())
    }

    /// Backpropagates dL/d(v_h) and returns parameter gradients in the same
    /// order as `EncoderParams::tensors`. Consumes the pass.
    pub fn backward(mut self, grad_vh: &[f64], params: &EncoderParams) -> Result<Vec<Tensor>> {
        let grads = self.tape.backward_seeded(self.out, grad_vh)?;
        Ok(self
            .param_ids
            .iter()
            .zip(&params.tensors)
            .map(|(&id, p)| {
                let mut g = Tensor::zeros(&p.shape);
                g.data = grads.wrt(id, p.len());
                g
            })
            .collect())
    }
}

/// Runs the encoder forward, recording the tape.
pub fn forward_pass(params: &EncoderParams, x: &FeatureTensor) -> Result<EncoderPass> {
    let mut tape = Tape::new();
    let mut cur = tape.leaf(params.standardize(x));
    let param_ids: Vec<NodeId> = params.tensors.iter().map(|t| tape.leaf(t.clone())).collect();

    let mut slot = 0usize;
    for layer in &params.arch.layers {
        cur = match layer {
            LayerSpec::Conv { .. } => {
                let w = param_ids[slot];
                let b = param_ids[slot + 1];
                slot += 2;
                tape.conv3x3(cur, w, b)?
            }
            LayerSpec::Dense { .. } => {
                let w = param_ids[slot];
                let b = param_ids[slot + 1];
                slot += 2;
                tape.dense(cur, w, b)?
            }
            LayerSpec::Relu => tape.relu(cur),
            LayerSpec::Pool2 => tape.max_pool2(cur)?,
            LayerSpec::GlobalAvgPool => tape.global_avg_pool(cur)?,
        };
    }
    if tape.value(cur).len() != params.hash_bits as usize {
        return Err(Error::ShapeMismatch(format!(
            "encoder produced {} outputs for {} hash bits",
            tape.value(cur).len(),
            params.hash_bits
        )));
    }
    Ok(EncoderPass {
        tape,
        param_ids,
        out: cur,
    })
}

/// Deterministic encoder application: params + input -> hash activation.
pub fn encoder_forward(params: &EncoderParams, x: &FeatureTensor) -> Result<HashActivation> {
    Ok(forward_pass(params, x)?.activation())
}
