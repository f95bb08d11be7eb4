//! Helpers shared by the integration and acceptance suites.

use std::path::Path;

use audiohash::audio::{decode_wav, resample_linear, write_wav_mono16};
use audiohash::features::{FeatureArchive, FeatureTensor, MultiWindowExtractor, SAMPLE_RATE};
use audiohash::synth::SynthCorpus;
use rayon::prelude::*;

/// Writes the corpus as 16-bit WAVs, decodes them back, and extracts the
/// feature archive — the same path the CLI takes.
pub fn archive_from_corpus(corpus: &SynthCorpus, multi_window: bool, tmp: &Path) -> FeatureArchive {
    let extractor = MultiWindowExtractor::with_defaults();
    let clips: Vec<FeatureTensor> = corpus
        .clips
        .par_iter()
        .map(|clip| {
            let path = tmp.join(format!("{}.wav", clip.id));
            write_wav_mono16(&path, &clip.samples, SAMPLE_RATE).unwrap();
            let pcm = resample_linear(&decode_wav(&path).unwrap(), SAMPLE_RATE);
            if multi_window {
                extractor.extract(&pcm, &clip.id, clip.class).unwrap()
            } else {
                extractor.extract_single(&pcm, &clip.id, clip.class).unwrap()
            }
        })
        .collect();
    FeatureArchive {
        label_table: corpus.class_names.clone(),
        single_window: !multi_window,
        clips,
    }
}
