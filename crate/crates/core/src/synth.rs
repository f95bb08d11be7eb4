//! Deterministic synthetic audio-event corpus for desk-scale verification.
//!
//! Classes cycle through three recipes (vibrato tone, band-passed noise,
//! linear chirp) with a class-specific base frequency, so classes are
//! spectrally separable while clips within a class vary in pitch, phase,
//! and amplitude.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::features::SAMPLE_RATE;

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    /// Optional per-class clip counts; overrides `per_class` when set.
    pub class_sizes: Option<Vec<usize>>,
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 8,
            per_class: 40,
            class_sizes: None,
            duration_s: 2.0,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "synthetic corpus needs at least 2 classes, got {}",
                self.classes
            )));
        }
        let sizes = self.sizes();
        if sizes.len() != self.classes {
            return Err(Error::Config(format!(
                "{} class sizes given for {} classes",
                sizes.len(),
                self.classes
            )));
        }
        if sizes.iter().any(|&s| s < 4) {
            return Err(Error::Config("every class needs at least 4 clips".into()));
        }
        if self.duration_s * (SAMPLE_RATE as f64) < 22_050.0 {
            return Err(Error::Config(format!(
                "duration {}s is shorter than the largest analysis window",
                self.duration_s
            )));
        }
        Ok(())
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.class_sizes
            .clone()
            .unwrap_or_else(|| vec![self.per_class; self.classes])
    }
}

#[derive(Debug, Clone)]
pub struct SynthClip {
    pub id: String,
    pub class: u32,
    pub class_name: String,
    pub samples: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub clips: Vec<SynthClip>,
    pub class_names: Vec<String>,
}

/// Class base frequency: geometric ladder starting at 180 Hz.
fn base_freq(class: usize) -> f64 {
    180.0 * 1.38f64.powi(class as i32)
}

enum Recipe {
    VibratoTone,
    BandNoise,
    Chirp,
}

fn recipe_for(class: usize) -> Recipe {
    match class % 3 {
        0 => Recipe::VibratoTone,
        1 => Recipe::BandNoise,
        _ => Recipe::Chirp,
    }
}

/// Generates the whole corpus deterministically from the spec seed.
pub fn generate_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let n_samples = (spec.duration_s * SAMPLE_RATE as f64).round() as usize;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let sizes = spec.sizes();
    let class_names: Vec<String> = (0..spec.classes).map(|c| format!("class{c:02}")).collect();

    let mut clips = Vec::new();
    for (class, &count) in sizes.iter().enumerate() {
        for idx in 0..count {
            let samples = generate_clip(class, n_samples, &mut rng);
            clips.push(SynthClip {
                id: format!("{}_{idx:03}", class_names[class]),
                class: class as u32,
                class_name: class_names[class].clone(),
                samples,
            });
        }
    }
    Ok(SynthCorpus { clips, class_names })
}

fn generate_clip(class: usize, n_samples: usize, rng: &mut ChaCha20Rng) -> Vec<f32> {
    let f0 = base_freq(class) * (1.0 + rng.gen_range(-0.02..0.02));
    let amp = rng.gen_range(0.35..0.5);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let sr = SAMPLE_RATE as f64;
    match recipe_for(class) {
        Recipe::VibratoTone => {
            let vib_rate = rng.gen_range(4.0..6.5);
            (0..n_samples)
                .map(|n| {
                    let t = n as f64 / sr;
                    let inst = f0 * (1.0 + 0.01 * (std::f64::consts::TAU * vib_rate * t).sin());
                    (amp * (std::f64::consts::TAU * inst * t + phase).sin()) as f32
                })
                .collect()
        }
        Recipe::BandNoise => {
            // white noise through two cascaded RBJ band-pass biquads
            // centered on f0, for a steep enough band edge that the class
            // keeps a stable spectral centroid
            let noise: Vec<f64> = (0..n_samples).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let stage = |input: &[f64]| -> Vec<f64> {
                let q = 8.0;
                let w0 = std::f64::consts::TAU * f0 / sr;
                let alpha = w0.sin() / (2.0 * q);
                let b0 = alpha;
                let b2 = -alpha;
                let a0 = 1.0 + alpha;
                let a1 = -2.0 * w0.cos();
                let a2 = 1.0 - alpha;
                let (mut x1, mut x2, mut y1, mut y2) = (0.0f64, 0.0, 0.0, 0.0);
                input
                    .iter()
                    .map(|&x0| {
                        let y0 = (b0 * x0 + b2 * x2 - a1 * y1 - a2 * y2) / a0;
                        x2 = x1;
                        x1 = x0;
                        y2 = y1;
                        y1 = y0;
                        y0
                    })
                    .collect()
            };
            let out = stage(&stage(&noise));
            let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
            out.iter().map(|v| (v / peak * amp) as f32).collect()
        }
        Recipe::Chirp => {
            let f_start = f0 * 0.8;
            let f_end = f0 * 1.6;
            let dur = n_samples as f64 / sr;
            (0..n_samples)
                .map(|n| {
                    let t = n as f64 / sr;
                    // linear sweep: phase integral of f_start + (f_end-f_start) t / dur
                    let ph = std::f64::consts::TAU
                        * (f_start * t + 0.5 * (f_end - f_start) * t * t / dur)
                        + phase;
                    (amp * ph.sin()) as f32
                })
                .collect()
        }
    }
}
