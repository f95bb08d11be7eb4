//! WAV decoding, mono conversion, and linear resampling.

use std::path::Path;

use crate::error::{Error, Result};

/// Decoded mono audio, samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PcmBuffer {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl PcmBuffer {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Decodes a PCM WAV file (16-bit integer or 32-bit float, mono or stereo).
/// Stereo is averaged to mono; 16-bit samples are scaled by 1/32768.
pub fn decode_wav(path: &Path) -> Result<PcmBuffer> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::WavUnreadable {
            path: path.to_path_buf(),
            reason: io.to_string(),
        },
        other => Error::WavUnreadable {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(Error::WavUnsupported {
            path: path.to_path_buf(),
            detail: format!("{} channels (mono or stereo only)", spec.channels),
        });
    }

    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::WavUnreadable {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v.clamp(-1.0, 1.0)))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::WavUnreadable {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?,
        (fmt, bits) => {
            return Err(Error::WavUnsupported {
                path: path.to_path_buf(),
                detail: format!("{bits}-bit {fmt:?} (16-bit int or 32-bit float only)"),
            })
        }
    };

    let samples = if spec.channels == 2 {
        interleaved
            .chunks_exact(2)
            .map(|lr| 0.5 * (lr[0] + lr[1]))
            .collect()
    } else {
        interleaved
    };

    if samples.is_empty() {
        return Err(Error::EmptyAudio {
            path: path.to_path_buf(),
        });
    }
    Ok(PcmBuffer {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// Writes mono 16-bit PCM. Samples are clamped to [-1, 1].
pub fn write_wav_mono16(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| Error::WavUnreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(|e| Error::WavUnreadable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    }
    writer.finalize().map_err(|e| Error::WavUnreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(())
}

/// Linear-interpolation resampling onto a new rate grid. Equal rates return
/// the input unchanged; output length is round(len * target / source) and
/// positions past the last input sample hold its value.
pub fn resample_linear(pcm: &PcmBuffer, target_rate: u32) -> PcmBuffer {
    assert!(target_rate > 0, "target rate must be positive");
    if pcm.sample_rate == target_rate {
        return pcm.clone();
    }
    let src = &pcm.samples;
    let out_len = ((src.len() as u64 * target_rate as u64 + pcm.sample_rate as u64 / 2)
        / pcm.sample_rate as u64) as usize;
    let ratio = pcm.sample_rate as f64 / target_rate as f64;
    let last = src.len() - 1;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let pos = i as f64 * ratio;
        let i0 = pos.floor() as usize;
        if i0 >= last {
            out.push(src[last]);
        } else {
            let frac = (pos - i0 as f64) as f32;
            out.push(src[i0] * (1.0 - frac) + src[i0 + 1] * frac);
        }
    }
    PcmBuffer {
        samples: out,
        sample_rate: target_rate,
    }
}
