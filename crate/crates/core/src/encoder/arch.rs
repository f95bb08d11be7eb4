//! Encoder architecture descriptors.
//!
//! A descriptor is a comma-separated layer list, e.g.
//! `conv(3->16),relu,pool2,conv(16->32),relu,pool2,gap,dense(32->256),relu,dense(256->64)`.
//! The canonical string round-trips through [`Architecture::parse`] /
//! [`Architecture::descriptor`] and is stored verbatim in checkpoints.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    /// 3x3 convolution, stride 1, zero same-padding.
    Conv { in_ch: usize, out_ch: usize },
    Relu,
    /// 2x2 max pooling, stride 2.
    Pool2,
    /// Global average pooling over the spatial axes.
    GlobalAvgPool,
    Dense { n_in: usize, n_out: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub layers: Vec<LayerSpec>,
}

/// Shape state while walking the layer list.
enum Stage {
    Spatial(usize),
    Flat(usize),
}

impl Architecture {
    /// The stock encoder: two conv/pool stages, global average pooling, and
    /// a two-layer head ending in the hash layer of width `bits`.
    pub fn default_for_bits(bits: u32) -> Self {
        Architecture {
            layers: vec![
                LayerSpec::Conv { in_ch: 3, out_ch: 16 },
                LayerSpec::Relu,
                LayerSpec::Pool2,
                LayerSpec::Conv { in_ch: 16, out_ch: 32 },
                LayerSpec::Relu,
                LayerSpec::Pool2,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { n_in: 32, n_out: 256 },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    n_in: 256,
                    n_out: bits as usize,
                },
            ],
        }
    }

    /// A deliberately small variant for fast tests and gradient checks.
    pub fn tiny_for_bits(bits: u32) -> Self {
        Architecture {
            layers: vec![
                LayerSpec::Conv { in_ch: 3, out_ch: 4 },
                LayerSpec::Relu,
                LayerSpec::Pool2,
                LayerSpec::Conv { in_ch: 4, out_ch: 8 },
                LayerSpec::Relu,
                LayerSpec::Pool2,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { n_in: 8, n_out: 16 },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    n_in: 16,
                    n_out: bits as usize,
                },
            ],
        }
    }

    /// Resolves a config `arch` value: a named preset or a full descriptor.
    pub fn from_config_value(value: &str, bits: u32) -> Result<Self> {
        let arch = match value {
            "default" => Self::default_for_bits(bits),
            "tiny" => Self::tiny_for_bits(bits),
            descriptor => Self::parse(descriptor)?,
        };
        let out = arch.output_bits()?;
        if out != bits {
            return Err(Error::BadArchitecture {
                descriptor: arch.descriptor(),
                detail: format!("final dense width {out} does not match configured bits {bits}"),
            });
        }
        Ok(arch)
    }

    pub fn parse(s: &str) -> Result<Self> {
        let bad = |detail: String| Error::BadArchitecture {
            descriptor: s.to_string(),
            detail,
        };
        let mut layers = Vec::new();
        for tok in s.split(',') {
            let tok = tok.trim();
            if tok == "relu" {
                layers.push(LayerSpec::Relu);
            } else if tok == "pool2" {
                layers.push(LayerSpec::Pool2);
            } else if tok == "gap" {
                layers.push(LayerSpec::GlobalAvgPool);
            } else if let Some(body) = tok.strip_prefix("conv(").and_then(|t| t.strip_suffix(')')) {
                let (a, b) = parse_arrow(body).ok_or_else(|| bad(format!("bad conv token {tok:?}")))?;
                layers.push(LayerSpec::Conv { in_ch: a, out_ch: b });
            } else if let Some(body) = tok.strip_prefix("dense(").and_then(|t| t.strip_suffix(')')) {
                let (a, b) = parse_arrow(body).ok_or_else(|| bad(format!("bad dense token {tok:?}")))?;
                layers.push(LayerSpec::Dense { n_in: a, n_out: b });
            } else {
                return Err(bad(format!("unknown layer token {tok:?}")));
            }
        }
        let arch = Architecture { layers };
        arch.output_bits()?;
        Ok(arch)
    }

    /// Canonical descriptor string.
    pub fn descriptor(&self) -> String {
        self.layers
            .iter()
            .map(|l| match l {
                LayerSpec::Conv { in_ch, out_ch } => format!("conv({in_ch}->{out_ch})"),
                LayerSpec::Relu => "relu".to_string(),
                LayerSpec::Pool2 => "pool2".to_string(),
                LayerSpec::GlobalAvgPool => "gap".to_string(),
                LayerSpec::Dense { n_in, n_out } => format!("dense({n_in}->{n_out})"),
            })
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Checks layer chaining for a 3-channel input and returns the hash
    /// layer width.
    pub fn output_bits(&self) -> Result<u32> {
        let bad = |detail: String| Error::BadArchitecture {
            descriptor: self.descriptor(),
            detail,
        };
        let mut stage = Stage::Spatial(3);
        for layer in &self.layers {
            stage = match (layer, stage) {
                (LayerSpec::Conv { in_ch, out_ch }, Stage::Spatial(c)) => {
                    if *in_ch != c {
                        return Err(bad(format!("conv expects {in_ch} channels, gets {c}")));
                    }
                    Stage::Spatial(*out_ch)
                }
                (LayerSpec::Conv { .. }, Stage::Flat(_)) => {
                    return Err(bad("conv after flattening".into()))
                }
                (LayerSpec::Relu, st) => st,
                (LayerSpec::Pool2, Stage::Spatial(c)) => Stage::Spatial(c),
                (LayerSpec::Pool2, Stage::Flat(_)) => {
                    return Err(bad("pool2 after flattening".into()))
                }
                (LayerSpec::GlobalAvgPool, Stage::Spatial(c)) => Stage::Flat(c),
                (LayerSpec::GlobalAvgPool, Stage::Flat(_)) => {
                    return Err(bad("gap after flattening".into()))
                }
                (LayerSpec::Dense { n_in, n_out }, Stage::Flat(n)) => {
                    if *n_in != n {
                        return Err(bad(format!("dense expects {n_in} inputs, gets {n}")));
                    }
                    Stage::Flat(*n_out)
                }
                (LayerSpec::Dense { .. }, Stage::Spatial(_)) => {
                    return Err(bad("dense before flattening".into()))
                }
            };
        }
        match stage {
            Stage::Flat(k) if k > 0 => Ok(k as u32),
            Stage::Flat(_) => Err(bad("zero-width output".into())),
            Stage::Spatial(_) => Err(bad("network never flattens".into())),
        }
    }
}

fn parse_arrow(body: &str) -> Option<(usize, usize)> {
    let (a, b) = body.split_once("->")?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_descriptor_roundtrips() {
        for bits in [16u32, 32, 64, 128] {
            let arch = Architecture::default_for_bits(bits);
            let s = arch.descriptor();
            let back = Architecture::parse(&s).unwrap();
            assert_eq!(back, arch);
            assert_eq!(back.output_bits().unwrap(), bits);
        }
    }

    #[test]
    fn chain_mismatch_is_rejected() {
        assert!(Architecture::parse("conv(3->16),conv(8->4),gap,dense(4->16)").is_err());
        assert!(Architecture::parse("dense(3->16)").is_err());
        assert!(Architecture::parse("conv(3->16)").is_err()); // never flattens
        assert!(Architecture::parse("conv(3->16),gap,dense(16->8),pool2").is_err());
    }

    #[test]
    fn unknown_token_is_rejected() {
        assert!(Architecture::parse("conv(3->4),softmax,gap,dense(4->4)").is_err());
    }

    #[test]
    fn config_value_checks_bits() {
        assert!(Architecture::from_config_value("default", 64).is_ok());
        assert!(Architecture::from_config_value("tiny", 16).is_ok());
        let explicit = Architecture::default_for_bits(32).descriptor();
        assert!(Architecture::from_config_value(&explicit, 32).is_ok());
        assert!(Architecture::from_config_value(&explicit, 64).is_err());
    }
}
