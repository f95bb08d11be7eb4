//! MFCC feature extraction and multi-window fusion.
//!
//! Each clip becomes a 3-channel tensor of MFCC frames: one channel per
//! analysis window length, with the longer-window channels linearly
//! interpolated onto the shortest window's frame axis.

pub mod archive;

pub use archive::{load_archive, save_archive, FeatureArchive};

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::PcmBuffer;
use crate::error::{Error, Result};

/// Pipeline sample rate in Hz.
pub const SAMPLE_RATE: u32 = 44_100;
/// Cepstral coefficients kept per frame.
pub const N_COEFFS: usize = 40;
/// Mel filterbank size.
pub const N_MELS: usize = 128;
/// Floor inside the log to keep silent bands finite.
pub const LOG_FLOOR: f64 = 1e-10;
/// Analysis window lengths fused into the 3 channels.
pub const DEFAULT_WINDOWS: [usize; 3] = [4096, 11_025, 22_050];

/// MFCC frames for one clip at one window length: `frames x N_COEFFS`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f32>,
    frames: usize,
    pub window: usize,
    pub hop: usize,
}

impl FeatureMatrix {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * N_COEFFS..(t + 1) * N_COEFFS]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Fused 3-channel encoder input for one clip, channel-major
/// `[3][frames][N_COEFFS]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    clip_id: String,
    label: u32,
    frames: usize,
    data: Vec<f32>,
    single_window: bool,
}

impl FeatureTensor {
    pub fn from_parts(
        clip_id: &str,
        label: u32,
        frames: usize,
        data: Vec<f32>,
        single_window: bool,
    ) -> Result<Self> {
        if data.len() != 3 * frames * N_COEFFS {
            return Err(Error::ShapeMismatch(format!(
                "feature tensor of {} values cannot be 3x{frames}x{N_COEFFS}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(format!(
                "feature tensor for {clip_id} contains non-finite values"
            )));
        }
        Ok(FeatureTensor {
            clip_id: clip_id.to_string(),
            label,
            frames,
            data,
            single_window,
        })
    }

    pub fn clip_id(&self) -> &str {
        &self.clip_id
    }

    pub fn label(&self) -> u32 {
        self.label
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn coeffs(&self) -> usize {
        N_COEFFS
    }

    pub fn single_window(&self) -> bool {
        self.single_window
    }

    pub fn channel(&self, ch: usize) -> &[f32] {
        let n = self.frames * N_COEFFS;
        &self.data[ch * n..(ch + 1) * n]
    }

    pub fn raw(&self) -> &[f32] {
        &self.data
    }
}

/// Triangular mel filterbank over FFT bin center frequencies, stored as
/// sparse rows (first nonzero bin + weights), area-normalized per filter.
struct MelBank {
    rows: Vec<(usize, Vec<f64>)>,
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl MelBank {
    fn new(n_fft: usize, sample_rate: u32, n_bands: usize) -> Self {
        let n_bins = n_fft / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_bands + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (n_bands + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;

        let mut rows = Vec::with_capacity(n_bands);
        for m in 0..n_bands {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let area_norm = 2.0 / (right - left);
            let mut start = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f <= left || f >= right {
                    0.0
                } else if f <= center {
                    (f - left) / (center - left)
                } else {
                    (right - f) / (right - center)
                };
                if w > 0.0 {
                    if start.is_none() {
                        start = Some(k);
                    }
                    weights.push(w * area_norm);
                } else if start.is_some() {
                    break;
                }
            }
            rows.push((start.unwrap_or(0), weights));
        }
        MelBank { rows }
    }

    fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (band, (start, weights)) in self.rows.iter().enumerate() {
            out[band] = weights
                .iter()
                .zip(&power[*start..])
                .map(|(w, p)| w * p)
                .sum();
        }
    }
}

/// Orthonormal type-II DCT truncated to [`N_COEFFS`] outputs.
struct DctII {
    table: Vec<f64>, // N_COEFFS x N_MELS
}

impl DctII {
    fn new(n_in: usize, n_out: usize) -> Self {
        let mut table = Vec::with_capacity(n_in * n_out);
        for k in 0..n_out {
            let scale = if k == 0 {
                (1.0 / n_in as f64).sqrt()
            } else {
                (2.0 / n_in as f64).sqrt()
            };
            for n in 0..n_in {
                table.push(
                    scale
                        * (std::f64::consts::PI * (2.0 * n as f64 + 1.0) * k as f64
                            / (2.0 * n_in as f64))
                            .cos(),
                );
            }
        }
        DctII { table }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.table[k * n..(k + 1) * n]
                .iter()
                .zip(x)
                .map(|(c, v)| c * v)
                .sum();
        }
    }
}

/// Reusable extractor for one window/hop configuration. Construction
/// precomputes the FFT plan, Hann window, mel bank, and DCT table, so one
/// instance can be shared (it is `Sync`) across worker threads.
pub struct MfccExtractor {
    pub window: usize,
    pub hop: usize,
    fft: Arc<dyn Fft<f64>>,
    hann: Vec<f64>,
    bank: MelBank,
    dct: DctII,
}

impl MfccExtractor {
    pub fn new(window: usize, hop: usize) -> Self {
        assert!(window >= 2 && hop >= 1);
        let fft = FftPlanner::new().plan_fft_forward(window);
        let hann: Vec<f64> = (0..window)
            .map(|n| {
                0.5 * (1.0
                    - (2.0 * std::f64::consts::PI * n as f64 / (window as f64 - 1.0)).cos())
            })
            .collect();
        MfccExtractor {
            window,
            hop,
            fft,
            hann,
            bank: MelBank::new(window, SAMPLE_RATE, N_MELS),
            dct: DctII::new(N_MELS, N_COEFFS),
        }
    }

    /// Frame count for a clip of `len` samples, or None if too short.
    pub fn frames_for(&self, len: usize) -> Option<usize> {
        if len < self.window {
            None
        } else {
            Some((len - self.window) / self.hop + 1)
        }
    }

    pub fn extract(&self, pcm: &PcmBuffer) -> Result<FeatureMatrix> {
        if pcm.sample_rate != SAMPLE_RATE {
            return Err(Error::SampleRateMismatch {
                expected: SAMPLE_RATE,
                actual: pcm.sample_rate,
            });
        }
        let frames = self.frames_for(pcm.len()).ok_or(Error::ClipTooShort {
            len: pcm.len(),
            window: self.window,
        })?;

        let n_bins = self.window / 2 + 1;
        let mut data = vec![0.0f32; frames * N_COEFFS];
        let mut buf = vec![Complex::new(0.0, 0.0); self.window];
        let mut power = vec![0.0f64; n_bins];
        let mut mel = vec![0.0f64; N_MELS];
        let mut cep = vec![0.0f64; N_COEFFS];

        for t in 0..frames {
            let start = t * self.hop;
            for (i, c) in buf.iter_mut().enumerate() {
                *c = Complex::new(pcm.samples[start + i] as f64 * self.hann[i], 0.0);
            }
            self.fft.process(&mut buf);
            for (k, p) in power.iter_mut().enumerate() {
                *p = buf[k].norm_sqr();
            }
            self.bank.apply(&power, &mut mel);
            for m in mel.iter_mut() {
                *m = m.max(LOG_FLOOR).ln();
            }
            self.dct.apply(&mel, &mut cep);
            for (c, out) in cep.iter().zip(&mut data[t * N_COEFFS..(t + 1) * N_COEFFS]) {
                *out = *c as f32;
            }
        }
        Ok(FeatureMatrix {
            data,
            frames,
            window: self.window,
            hop: self.hop,
        })
    }
}

/// One-shot MFCC extraction at an explicit window/hop.
pub fn mfcc(pcm: &PcmBuffer, window: usize, hop: usize) -> Result<FeatureMatrix> {
    MfccExtractor::new(window, hop).extract(pcm)
}

/// Extractor bundle for the three fused window lengths (hop = window/4).
pub struct MultiWindowExtractor {
    extractors: Vec<MfccExtractor>,
}

impl MultiWindowExtractor {
    pub fn new(windows: [usize; 3]) -> Self {
        MultiWindowExtractor {
            extractors: windows
                .iter()
                .map(|&w| MfccExtractor::new(w, (w / 4).max(1)))
                .collect(),
        }
    }

    pub fn with_defaults() -> Self {
        Self::new(DEFAULT_WINDOWS)
    }

    /// Fused 3-channel tensor; channels 2 and 3 are interpolated onto
    /// channel 1's frame axis.
    pub fn extract(&self, pcm: &PcmBuffer, clip_id: &str, label: u32) -> Result<FeatureTensor> {
        let mats: Vec<FeatureMatrix> = self
            .extractors
            .iter()
            .map(|e| e.extract(pcm))
            .collect::<Result<_>>()?;
        let frames = mats[0].frames();
        let mut data = Vec::with_capacity(3 * frames * N_COEFFS);
        data.extend_from_slice(mats[0].data());
        for m in &mats[1..] {
            align_frames(m, frames, &mut data);
        }
        FeatureTensor::from_parts(clip_id, label, frames, data, false)
    }

    /// Single-window mode: channel 1 replicated into all three channels,
    /// with the tensor flagged accordingly.
    pub fn extract_single(&self, pcm: &PcmBuffer, clip_id: &str, label: u32) -> Result<FeatureTensor> {
        let m = self.extractors[0].extract(pcm)?;
        let frames = m.frames();
        let mut data = Vec::with_capacity(3 * frames * N_COEFFS);
        for _ in 0..3 {
            data.extend_from_slice(m.data());
        }
        FeatureTensor::from_parts(clip_id, label, frames, data, true)
    }

    /// Minimum clip length accepted (the largest window).
    pub fn min_samples(&self) -> usize {
        self.extractors.iter().map(|e| e.window).max().unwrap_or(0)
    }
}

/// Fused features at the default window lengths.
pub fn multi_window_features(pcm: &PcmBuffer, clip_id: &str, label: u32) -> Result<FeatureTensor> {
    MultiWindowExtractor::with_defaults().extract(pcm, clip_id, label)
}

/// Linearly interpolates `m`'s rows onto `target` frames (endpoint-aligned)
/// and appends them to `out`.
fn align_frames(m: &FeatureMatrix, target: usize, out: &mut Vec<f32>) {
    let src_frames = m.frames();
    for t in 0..target {
        if src_frames == 1 || target == 1 {
            out.extend_from_slice(m.row(0));
            continue;
        }
        let pos = t as f64 * (src_frames - 1) as f64 / (target - 1) as f64;
        let i0 = (pos.floor() as usize).min(src_frames - 1);
        if i0 + 1 >= src_frames {
            out.extend_from_slice(m.row(src_frames - 1));
        } else {
            let frac = (pos - i0 as f64) as f32;
            let (a, b) = (m.row(i0), m.row(i0 + 1));
            out.extend(a.iter().zip(b).map(|(x, y)| x * (1.0 - frac) + y * frac));
        }
    }
}
