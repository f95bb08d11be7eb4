//! Subcommand implementations. Diagnostics go to stderr, results to stdout.

use std::path::{Path, PathBuf};

use audiohash::audio::{decode_wav, resample_linear, write_wav_mono16};
use audiohash::codec::HashCode;
use audiohash::dataset::{split_standard, split_zero_shot, LabeledSet};
use audiohash::encoder::{encoder_forward, load_checkpoint, Checkpoint};
use audiohash::error::{Error, Result};
use audiohash::features::{
    load_archive, save_archive, FeatureArchive, FeatureTensor, MultiWindowExtractor, SAMPLE_RATE,
};
use audiohash::index::RetrievalIndex;
use audiohash::metrics::{evaluate, ProtocolInfo};
use audiohash::synth::{generate_corpus, SynthSpec};
use audiohash::train::{train_with_progress, TrainConfig};
use rayon::prelude::*;

use crate::{EvalArgs, FeaturesArgs, IndexArgs, QueryArgs, SynthArgs, TrainArgs};

pub(crate) fn synth(args: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        classes: args.classes,
        per_class: args.per_class,
        class_sizes: args.class_sizes,
        duration_s: args.duration,
        seed: args.seed,
    };
    let corpus = generate_corpus(&spec)?;
    std::fs::create_dir_all(&args.out)?;
    let manifest_path = args.out.join("manifest.csv");
    let mut manifest = csv::Writer::from_path(&manifest_path)
        .map_err(|e| Error::Config(format!("manifest write failed: {e}")))?;
    manifest
        .write_record(["path", "label"])
        .map_err(|e| Error::Config(format!("manifest write failed: {e}")))?;
    for clip in &corpus.clips {
        let file = format!("{}.wav", clip.id);
        write_wav_mono16(&args.out.join(&file), &clip.samples, SAMPLE_RATE)?;
        manifest
            .write_record([file.as_str(), clip.class_name.as_str()])
            .map_err(|e| Error::Config(format!("manifest write failed: {e}")))?;
    }
    manifest
        .flush()
        .map_err(|e| Error::Config(format!("manifest write failed: {e}")))?;
    eprintln!(
        "wrote {} clips across {} classes to {}",
        corpus.clips.len(),
        corpus.class_names.len(),
        args.out.display()
    );
    Ok(())
}

struct ManifestRow {
    row: usize,
    path: PathBuf,
    label: String,
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Manifest {
        row: 0,
        detail: format!("cannot open {}: {e}", path.display()),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Manifest {
            row: 0,
            detail: e.to_string(),
        })?
        .clone();
    if headers.len() < 2 || &headers[0] != "path" || &headers[1] != "label" {
        return Err(Error::Manifest {
            row: 0,
            detail: format!("expected header `path,label`, got {headers:?}"),
        });
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Manifest {
            row,
            detail: e.to_string(),
        })?;
        if record.len() < 2 {
            return Err(Error::Manifest {
                row,
                detail: "missing label column".to_string(),
            });
        }
        let raw = PathBuf::from(&record[0]);
        let resolved = if raw.is_absolute() { raw } else { base.join(raw) };
        rows.push(ManifestRow {
            row,
            path: resolved,
            label: record[1].to_string(),
        });
    }
    Ok(rows)
}

pub(crate) fn features(args: FeaturesArgs) -> Result<()> {
    let rows = read_manifest(&args.manifest)?;
    let mut label_table: Vec<String> = rows.iter().map(|r| r.label.clone()).collect();
    label_table.sort();
    label_table.dedup();
    let extractor = MultiWindowExtractor::with_defaults();

    let clips: Vec<FeatureTensor> = rows
        .par_iter()
        .map(|r| -> Result<FeatureTensor> {
            let label = label_table.binary_search(&r.label).unwrap() as u32;
            let clip_id = r
                .path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("row{}", r.row));
            let pcm = resample_linear(
                &decode_wav(&r.path).map_err(|e| Error::Manifest {
                    row: r.row,
                    detail: e.to_string(),
                })?,
                SAMPLE_RATE,
            );
            let tensor = if args.multi_window {
                extractor.extract(&pcm, &clip_id, label)
            } else {
                extractor.extract_single(&pcm, &clip_id, label)
            };
            tensor.map_err(|e| Error::Manifest {
                row: r.row,
                detail: e.to_string(),
            })
        })
        .collect::<Result<_>>()?;

    let archive = FeatureArchive {
        label_table,
        single_window: !args.multi_window,
        clips,
    };
    save_archive(&archive, &args.out)?;
    eprintln!(
        "extracted {} clips ({} classes, {}) -> {}",
        archive.clips.len(),
        archive.num_classes(),
        if args.multi_window { "multi-window" } else { "single-window" },
        args.out.display()
    );
    Ok(())
}

pub(crate) fn train(args: TrainArgs) -> Result<()> {
    let archive = load_archive(&args.features)?;
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::from_toml_str(&std::fs::read_to_string(path)?)?,
        None => TrainConfig::default(),
    };
    // flags win over the config file
    if let Some(v) = args.bits {
        cfg.bits = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.beta {
        cfg.beta = v;
    }
    if let Some(v) = args.margin {
        cfg.margin = v;
    }
    if let Some(v) = &args.loss_mode {
        cfg.loss_mode = v.parse()?;
    }
    if let Some(v) = args.multi_window {
        cfg.multi_window = v;
    }
    if let Some(v) = &args.arch {
        cfg.arch = v.clone();
    }
    if let Some(v) = args.zero_shot_fraction {
        cfg.zero_shot_fraction = v;
    }
    cfg.validate()?;

    let outcome = train_with_progress(
        &archive,
        &cfg,
        Some(&args.out),
        args.log.as_deref(),
        |s| eprintln!("epoch {:3}  loss {:.6}  holdout map100 {:.4}", s.epoch, s.loss, s.map100),
    )?;
    if let Some(best) = outcome.best_epoch {
        eprintln!("kept epoch {best} (best held-out map100)");
    }
    if let Some(seen) = &outcome.seen_classes {
        eprintln!("zero-shot training classes: {}", seen.join(" "));
    }
    eprintln!("checkpoint -> {}", args.out.display());
    Ok(())
}

/// Window mode recorded in a checkpoint's embedded config.
fn checkpoint_multi_window(ck: &Checkpoint) -> Result<bool> {
    Ok(TrainConfig::from_toml_str(&ck.config_echo)?.multi_window)
}

pub(crate) fn index(args: IndexArgs) -> Result<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let archive = load_archive(&args.features)?;
    let multi = checkpoint_multi_window(&ck)?;
    if multi == archive.single_window {
        return Err(Error::Config(format!(
            "checkpoint was trained {} but the archive is {}",
            if multi { "multi-window" } else { "single-window" },
            if archive.single_window { "single-window" } else { "multi-window" },
        )));
    }
    let codes: Vec<HashCode> = archive
        .clips
        .par_iter()
        .map(|clip| Ok(encoder_forward(&ck.params, clip)?.code()))
        .collect::<Result<_>>()?;
    let index = RetrievalIndex::build(
        ck.params.hash_bits,
        &codes,
        archive.clips.iter().map(|c| c.clip_id().to_string()).collect(),
        archive.clips.iter().map(|c| c.label()).collect(),
        archive.label_table.clone(),
    )?;
    index.save(&args.out)?;
    eprintln!(
        "indexed {} items at {} bits -> {}",
        index.len(),
        index.bits(),
        args.out.display()
    );
    Ok(())
}

pub(crate) fn query(args: QueryArgs) -> Result<()> {
    let index = RetrievalIndex::load(&args.index)?;
    let ck = load_checkpoint(&args.checkpoint)?;
    if ck.params.hash_bits != index.bits() {
        return Err(Error::BitsMismatch {
            expected: index.bits(),
            actual: ck.params.hash_bits,
        });
    }
    let pcm = resample_linear(&decode_wav(&args.audio)?, SAMPLE_RATE);
    let extractor = MultiWindowExtractor::with_defaults();
    let tensor = if checkpoint_multi_window(&ck)? {
        extractor.extract(&pcm, "query", 0)?
    } else {
        extractor.extract_single(&pcm, "query", 0)?
    };
    let code = encoder_forward(&ck.params, &tensor)?.code();
    let hits = index.search_topk(&code, args.k as usize)?;
    println!("rank,id,label,distance");
    for (rank, hit) in hits.iter().enumerate() {
        println!(
            "{},{},{},{}",
            rank + 1,
            index.id(hit.item),
            index.label_name(hit.item),
            hit.distance
        );
    }
    Ok(())
}

pub(crate) fn eval(args: EvalArgs) -> Result<()> {
    let index = RetrievalIndex::load(&args.index)?;
    let ck = load_checkpoint(&args.checkpoint)?;
    if ck.params.hash_bits != index.bits() {
        return Err(Error::BitsMismatch {
            expected: index.bits(),
            actual: ck.params.hash_bits,
        });
    }
    let archive = load_archive(&args.features)?;
    let set = LabeledSet::from_archive(&archive);

    let (query_items, protocol) = match args.protocol.as_str() {
        "standard" => {
            let split = split_standard(&set, 0.5, args.seed)?;
            (split.queries, ProtocolInfo::Standard)
        }
        "zero-shot" => {
            let zs = split_zero_shot(&set, args.zero_shot_fraction, args.seed)?;
            let names = |classes: &[u32]| -> Vec<String> {
                classes.iter().map(|&c| set.label_table[c as usize].clone()).collect()
            };
            (
                zs.queries.clone(),
                ProtocolInfo::ZeroShot {
                    seen_classes: names(&zs.seen_classes),
                    unseen_classes: names(&zs.unseen_classes),
                },
            )
        }
        other => {
            return Err(Error::Config(format!(
                "protocol must be standard or zero-shot, got {other:?}"
            )))
        }
    };
    let queries: Vec<&FeatureTensor> = query_items.iter().map(|&i| &archive.clips[i]).collect();
    let report = evaluate(&ck.params, &index, &queries, args.k as usize, protocol)?;

    let summary = report.report_csv();
    print!("{summary}");
    if let Some(path) = &args.report {
        std::fs::write(path, &summary)?;
    }
    if let Some(path) = &args.per_query {
        std::fs::write(path, report.per_query_csv())?;
    }
    eprintln!(
        "evaluated {} queries against {} items",
        queries.len(),
        index.len()
    );
    Ok(())
}
