//! Training configuration and the epoch loop: stratified batching,
//! forward -> binarize -> weighted loss -> STE backward -> Adam, with
//! per-epoch checkpoints and a held-out mAP@100 monitor.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::codec::validate_bits;
use crate::dataset::{
    count_pair_balance, epoch_batches, sample_pairs, split_zero_shot, LabeledSet, PairBatch,
    PairWeights, SimilarityOracle,
};
use crate::encoder::{
    adam_step, forward_pass, save_checkpoint, AdamHyper, AdamState, Architecture, ChannelStats,
    EncoderParams, HashActivation,
};
use crate::error::{Error, Result};
use crate::features::FeatureArchive;
use crate::index::RetrievalIndex;
use crate::loss::{total_loss, LossConfig, LossMode};
use crate::metrics::{evaluate, ProtocolInfo};

/// Fraction of the training items held out per class to monitor mAP@100.
const HOLDOUT_FRACTION: f64 = 0.2;

const SHUFFLE_SALT: u64 = 0x9E37_79B9_7F4A_7C15;
const HOLDOUT_SALT: u64 = 0x517C_C1B7_2722_0A95;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub bits: u32,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub beta: f64,
    pub margin: f64,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub multi_window: bool,
    /// Encoder preset ("default", "tiny") or a full layer descriptor.
    pub arch: String,
    /// When positive, holds out this fraction of classes from training
    /// (the zero-shot protocol); 0 trains on every class.
    pub zero_shot_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            bits: 64,
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            alpha: 1.0,
            lambda: 0.7,
            beta: 0.3,
            margin: 1.0,
            seed: 42,
            loss_mode: LossMode::Wcl,
            multi_window: true,
            arch: "default".to_string(),
            zero_shot_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            margin: self.margin,
            lambda: self.lambda,
            beta: self.beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_bits(self.bits)?;
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.zero_shot_fraction) {
            return Err(Error::Config(format!(
                "zero_shot_fraction must lie in [0, 1), got {}",
                self.zero_shot_fraction
            )));
        }
        self.loss_config().validate()?;
        Architecture::from_config_value(&self.arch, self.bits)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub map100: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub stats: Vec<EpochStats>,
    /// Epoch whose checkpoint was kept (highest held-out mAP@100), when a
    /// holdout slice existed.
    pub best_epoch: Option<usize>,
    /// Class names trained on under the zero-shot protocol.
    pub seen_classes: Option<Vec<String>>,
    /// Archive indices actually trained on.
    pub fit_items: Vec<usize>,
    /// Archive indices held out for the per-epoch mAP@100 monitor.
    pub holdout_items: Vec<usize>,
}

/// Trains the encoder on the archive. When paths are given, a checkpoint is
/// written after initialization and every epoch (the best-by-mAP parameters
/// win at the end) and the per-epoch log is written as `epoch,loss,map100`.
pub fn train(
    archive: &FeatureArchive,
    cfg: &TrainConfig,
    ckpt_path: Option<&Path>,
    log_path: Option<&Path>,
) -> Result<TrainOutcome> {
    train_with_progress(archive, cfg, ckpt_path, log_path, |_| {})
}

/// [`train`] with a per-epoch observer (progress reporting).
pub fn train_with_progress(
    archive: &FeatureArchive,
    cfg: &TrainConfig,
    ckpt_path: Option<&Path>,
    log_path: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if archive.single_window && cfg.multi_window {
        return Err(Error::Config(
            "config asks for multi-window but the archive was extracted single-window".into(),
        ));
    }
    if !archive.single_window && !cfg.multi_window {
        return Err(Error::Config(
            "config asks for single-window but the archive was extracted multi-window".into(),
        ));
    }
    let set = LabeledSet::from_archive(archive);
    if set.num_classes() < 2 {
        return Err(Error::TooFewClasses {
            needed: 2,
            got: set.num_classes(),
        });
    }

    let (candidates, seen_classes) = if cfg.zero_shot_fraction > 0.0 {
        let zs = split_zero_shot(&set, cfg.zero_shot_fraction, cfg.seed)?;
        let names = zs
            .seen_classes
            .iter()
            .map(|&c| set.label_table[c as usize].clone())
            .collect();
        (zs.train, Some(names))
    } else {
        ((0..set.len()).collect::<Vec<_>>(), None)
    };

    let (fit_items, holdout_items) = holdout_split(&set, &candidates, cfg.seed ^ HOLDOUT_SALT);
    let fit_labels: Vec<u32> = fit_items.iter().map(|&i| set.labels[i]).collect();

    // dataset-level imbalance weights from the training pairs
    let (n_similar, n_dissimilar) = count_pair_balance(&fit_labels);
    let weights = match cfg.loss_mode {
        LossMode::Wcl => PairWeights::from_balance(n_similar, n_dissimilar)?,
        LossMode::Tcl => {
            PairWeights::from_balance(n_similar, n_dissimilar)?;
            PairWeights::unit()
        }
    };

    let norm = ChannelStats::estimate(fit_items.iter().map(|&i| &archive.clips[i]));
    let arch = Architecture::from_config_value(&cfg.arch, cfg.bits)?;
    let mut params = EncoderParams::init(arch, norm, cfg.seed)?;
    let mut adam = AdamState::new(&params.tensors);
    let hyper = AdamHyper {
        lr: cfg.lr,
        ..AdamHyper::default()
    };
    let loss_cfg = cfg.loss_config();
    let oracle = SimilarityOracle::from_labels(&set.labels);
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let config_echo = cfg.to_toml_string();

    if let Some(p) = ckpt_path {
        save_checkpoint(&params, &config_echo, p)?;
    }

    let mut stats = Vec::new();
    let mut best: Option<(usize, f64, EncoderParams)> = None;

    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(&fit_labels, cfg.batch_size, &mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for positions in &batches {
            let batch_items: Vec<usize> = positions.iter().map(|&p| fit_items[p]).collect();
            let passes: Vec<_> = batch_items
                .par_iter()
                .map(|&item| forward_pass(&params, &archive.clips[item]))
                .collect::<Result<_>>()?;
            let activations: Vec<HashActivation> =
                passes.iter().map(|p: &crate::encoder::EncoderPass| p.activation()).collect();
            let codes = activations.iter().map(|a| a.code()).collect();
            let pairs = sample_pairs(&batch_items, &oracle, &weights)?;
            let batch = PairBatch {
                pairs,
                activations,
                codes,
            };
            let tl = total_loss(&batch, &loss_cfg, cfg.loss_mode)?;
            debug_assert!(tl.loss.is_finite());
            epoch_loss += tl.loss;

            let grad_sets: Vec<Vec<Tensor>> = passes
                .into_par_iter()
                .enumerate()
                .map(|(i, pass)| pass.backward(&tl.grad(i), &params))
                .collect::<Result<_>>()?;
            let mut summed: Vec<Tensor> =
                params.tensors.iter().map(|t| Tensor::zeros(&t.shape)).collect();
            for grads in &grad_sets {
                for (acc, g) in summed.iter_mut().zip(grads) {
                    for (a, v) in acc.data.iter_mut().zip(&g.data) {
                        *a += v;
                    }
                }
            }
            adam_step(&mut params.tensors, &summed, &mut adam, &hyper)?;
        }

        let mean_loss = epoch_loss / batches.len().max(1) as f64;
        let map100 = holdout_map100(&params, archive, &set, &fit_items, &holdout_items)?;
        let entry = EpochStats {
            epoch,
            loss: mean_loss,
            map100,
        };
        on_epoch(&entry);
        stats.push(entry);
        if let Some(p) = ckpt_path {
            save_checkpoint(&params, &config_echo, p)?;
        }
        if !holdout_items.is_empty()
            && best.as_ref().is_none_or(|(_, best_map, _)| map100 > *best_map)
        {
            best = Some((epoch, map100, params.clone()));
        }
    }

    let best_epoch = if let Some((epoch, _, best_params)) = best {
        params = best_params;
        if let Some(p) = ckpt_path {
            save_checkpoint(&params, &config_echo, p)?;
        }
        Some(epoch)
    } else {
        None
    };

    if let Some(p) = log_path {
        let mut text = String::from("epoch,loss,map100\n");
        for s in &stats {
            text.push_str(&format!("{},{:.9},{:.6}\n", s.epoch, s.loss, s.map100));
        }
        std::fs::write(p, text)?;
    }

    Ok(TrainOutcome {
        params,
        stats,
        best_epoch,
        seen_classes,
        fit_items,
        holdout_items,
    })
}

/// Stratified holdout: up to [`HOLDOUT_FRACTION`] of each class, leaving at
/// least one training item per class. Classes with a single item stay in
/// the training slice.
fn holdout_split(set: &LabeledSet, candidates: &[usize], seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); set.num_classes()];
    for &i in candidates {
        per_class[set.labels[i] as usize].push(i);
    }
    let mut fit = Vec::new();
    let mut holdout = Vec::new();
    for mut members in per_class {
        if members.len() < 2 {
            fit.extend(members);
            continue;
        }
        members.shuffle(&mut rng);
        let n_hold = ((members.len() as f64 * HOLDOUT_FRACTION).round() as usize)
            .clamp(1, members.len() - 1);
        holdout.extend(&members[..n_hold]);
        fit.extend(&members[n_hold..]);
    }
    fit.sort_unstable();
    holdout.sort_unstable();
    (fit, holdout)
}

/// mAP@100 of the holdout queries against an index of the fitted items.
fn holdout_map100(
    params: &EncoderParams,
    archive: &FeatureArchive,
    set: &LabeledSet,
    fit_items: &[usize],
    holdout_items: &[usize],
) -> Result<f64> {
    if holdout_items.is_empty() || fit_items.is_empty() {
        return Ok(0.0);
    }
    let codes: Vec<_> = fit_items
        .par_iter()
        .map(|&i| Ok(crate::encoder::encoder_forward(params, &archive.clips[i])?.code()))
        .collect::<Result<_>>()?;
    let index = RetrievalIndex::build(
        params.hash_bits,
        &codes,
        fit_items.iter().map(|&i| set.ids[i].clone()).collect(),
        fit_items.iter().map(|&i| set.labels[i]).collect(),
        set.label_table.clone(),
    )?;
    let queries: Vec<&crate::features::FeatureTensor> =
        holdout_items.iter().map(|&i| &archive.clips[i]).collect();
    let report = evaluate(params, &index, &queries, 100, ProtocolInfo::Standard)?;
    Ok(report.map_at_k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_parse_from_empty_toml() {
        let cfg = TrainConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, TrainConfig::default());
    }

    #[test]
    fn config_roundtrips_through_toml() {
        let cfg = TrainConfig {
            bits: 32,
            epochs: 3,
            loss_mode: LossMode::Tcl,
            multi_window: false,
            ..Default::default()
        };
        let text = cfg.to_toml_string();
        let back = TrainConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_bits_value_is_rejected() {
        assert!(matches!(
            TrainConfig::from_toml_str("bits = 48"),
            Err(Error::InvalidBits(48))
        ));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(TrainConfig::from_toml_str("learning_rate = 0.1").is_err());
    }

    #[test]
    fn loss_mode_strings() {
        let cfg = TrainConfig::from_toml_str("loss_mode = \"tcl\"").unwrap();
        assert_eq!(cfg.loss_mode, LossMode::Tcl);
        assert!(TrainConfig::from_toml_str("loss_mode = \"contrastive\"").is_err());
    }

    #[test]
    fn holdout_is_stratified_and_disjoint() {
        let set = LabeledSet {
            ids: (0..30).map(|i| format!("i{i}")).collect(),
            labels: (0..30).map(|i| (i % 3) as u32).collect(),
            label_table: vec!["a".into(), "b".into(), "c".into()],
        };
        let all: Vec<usize> = (0..30).collect();
        let (fit, hold) = holdout_split(&set, &all, 9);
        assert_eq!(fit.len() + hold.len(), 30);
        for h in &hold {
            assert!(!fit.contains(h));
        }
        for class in 0..3u32 {
            assert!(fit.iter().any(|&i| set.labels[i] == class));
            assert!(hold.iter().any(|&i| set.labels[i] == class));
        }
    }

    #[test]
    fn singleton_classes_stay_in_training() {
        let set = LabeledSet {
            ids: (0..11).map(|i| format!("i{i}")).collect(),
            labels: vec![0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1],
            label_table: vec!["big".into(), "tiny".into()],
        };
        let all: Vec<usize> = (0..11).collect();
        let (fit, hold) = holdout_split(&set, &all, 1);
        assert!(fit.contains(&10));
        assert!(!hold.contains(&10));
    }
}
