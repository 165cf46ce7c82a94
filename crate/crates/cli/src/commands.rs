use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use djscc::codec::{encode_batch, quantize_batch};
use djscc::evaluation::{djscc_roundtrip, mse, run_sweep, ssim, Scheme, SweepResult};
use djscc::image::Image;
use djscc::link::ChannelKind;
use djscc::semantic_kb::{load_kb, SemanticCodebook};
use djscc::training::{
    ingest_dataset, load_checkpoint, save_checkpoint, train, Checkpoint, DatasetKind, EpochReport,
    ImageSet, TrainReport, REPORT_FILE, SNAPSHOT_FILE,
};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::plots;

pub const SWEEP_CSV: &str = "sweep.csv";
pub const MSE_PLOT: &str = "mse_vs_snr.svg";
pub const SSIM_PLOT: &str = "ssim_vs_snr.svg";
pub const BITS_PLOT: &str = "bits_per_image.svg";
pub const RECONSTRUCTION: &str = "reconstruction.png";

fn write_snapshot(dir: &Path, cfg: &ExperimentConfig) -> Result<(), CliError> {
    fs::write(dir.join(SNAPSHOT_FILE), cfg.snapshot())
        .map_err(|e| CliError::io(format!("writing {}", dir.display()), e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))
}

fn epoch_line(e: &EpochReport) -> String {
    format!(
        "{:>5} {:>6} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>7.4}",
        e.epoch, e.steps, e.reconstruction, e.codebook, e.commitment, e.total, e.utilization
    )
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let codec = cfg.codec()?;
    let train_cfg = cfg.train_config();
    let root = cfg.data_root()?;
    let splits = ingest_dataset(cfg.dataset, &root)?;
    let out = cfg.out.clone();
    create_dir(&out)?;
    write_snapshot(&out, cfg)?;

    println!(
        "training {} on {} images: J={} K={} epochs={} batch={} seed={}",
        cfg.dataset,
        train_cfg
            .train_limit
            .map_or(splits.train.len(), |n| n.min(splits.train.len())),
        codec.hidden_width,
        train_cfg.codebook_size,
        train_cfg.epochs,
        train_cfg.batch_size,
        train_cfg.seed
    );
    println!(
        "{:>5} {:>6} {:>12} {:>12} {:>12} {:>12} {:>7}",
        "epoch", "steps", "recon", "codebook", "commit", "total", "util"
    );
    let outcome = train(&train_cfg, &codec, &splits.train, |e| {
        println!("{}", epoch_line(e));
        eprintln!("epoch {} took {:.1}s", e.epoch, e.seconds);
    })?;
    let ck = Checkpoint::new(cfg.dataset, codec, outcome.params, outcome.kb);
    save_checkpoint(&out, &ck, Some(&outcome.report), Some(&cfg.snapshot()))?;
    println!(
        "checkpoint written to {}: K={} J={} kb {}",
        out.display(),
        ck.kb.size(),
        ck.kb.dim(),
        ck.kb.content_hash_hex()
    );
    Ok(out)
}

/// Test split for each requested dataset, loaded once.
fn test_splits(
    cfg: &ExperimentConfig,
    datasets: &[DatasetKind],
) -> Result<BTreeMap<DatasetKind, ImageSet>, CliError> {
    let root = cfg.data_root()?;
    let mut out = BTreeMap::new();
    for &d in datasets {
        out.insert(d, ingest_dataset(d, &root)?.test);
    }
    Ok(out)
}

pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<SweepResult, CliError> {
    let mut checkpoints: BTreeMap<DatasetKind, Checkpoint> = BTreeMap::new();
    for path in &cfg.sweep.checkpoints {
        let ck = load_checkpoint(path)?;
        if checkpoints.contains_key(&ck.dataset) {
            return Err(CliError::Usage(format!(
                "two checkpoints given for {}",
                ck.dataset
            )));
        }
        checkpoints.insert(ck.dataset, ck);
    }
    let datasets: Vec<DatasetKind> = if !checkpoints.is_empty() {
        checkpoints.keys().copied().collect()
    } else {
        cfg.sweep
            .datasets
            .clone()
            .unwrap_or_else(|| vec![cfg.dataset])
    };
    if cfg.sweep.schemes.contains(&Scheme::Djscc) {
        if let Some(d) = datasets.iter().find(|d| !checkpoints.contains_key(d)) {
            return Err(CliError::Usage(format!(
                "the djscc scheme needs a checkpoint for {d}; pass --checkpoint or use --schemes webee"
            )));
        }
    }
    let tests = test_splits(cfg, &datasets)?;
    let out = cfg.out.clone();
    create_dir(&out)?;
    write_snapshot(&out, cfg)?;

    let mut result = SweepResult::default();
    for d in &datasets {
        let sweep_cfg = cfg.sweep_config(*d);
        result.extend(run_sweep(&sweep_cfg, checkpoints.get(d), &tests[d])?);
    }
    result.write_csv(out.join(SWEEP_CSV))?;
    plots::metric_vs_snr(&result, &out.join(MSE_PLOT), "MSE vs SNR", "MSE", |r| r.mse)?;
    plots::metric_vs_snr(&result, &out.join(SSIM_PLOT), "SSIM vs SNR", "SSIM", |r| {
        r.ssim
    })?;
    plots::bits_per_image(&result, &out.join(BITS_PLOT))?;

    println!(
        "{:>8} {:>8} {:>6} {:>10} {:>8} {:>6} {:>6}",
        "dataset", "scheme", "snr", "mse", "ssim", "loss", "bits"
    );
    for r in &result.rows {
        println!(
            "{:>8} {:>8} {:>6} {:>10.6} {:>8.4} {:>6.3} {:>6}",
            r.dataset.name(),
            r.scheme.name(),
            r.snr_db,
            r.mse,
            r.ssim,
            r.packet_loss_fraction,
            r.bits_per_image
        );
    }
    println!("results written to {}", out.display());
    Ok(result)
}

fn read_image(path: &Path) -> Result<Image, CliError> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => CliError::io(format!("reading {}", path.display()), io),
        other => CliError::Usage(format!("cannot decode {}: {other}", path.display())),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, bytes) = if img.color().has_color() {
        (3, img.into_rgb8().into_raw())
    } else {
        (1, img.into_luma8().into_raw())
    };
    Ok(Image::from_bytes(h, w, channels, &bytes)?)
}

fn write_image(path: &Path, im: &Image) -> Result<(), CliError> {
    let (h, w, c) = im.shape();
    let bytes = im.to_bytes();
    let res = if c == 1 {
        image::GrayImage::from_raw(w as u32, h as u32, bytes).map(|b| b.save(path))
    } else {
        image::RgbImage::from_raw(w as u32, h as u32, bytes).map(|b| b.save(path))
    };
    match res {
        Some(Ok(())) => Ok(()),
        Some(Err(e)) => Err(CliError::Internal(format!(
            "writing {}: {e}",
            path.display()
        ))),
        None => Err(CliError::Internal("image buffer size mismatch".into())),
    }
}

pub struct RoundtripStats {
    pub mse: f64,
    pub ssim: f64,
    pub packets: usize,
    pub packets_lost: usize,
    pub erased_slots: usize,
    pub bits: usize,
}

pub fn cmd_roundtrip(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    image_path: &Path,
    snr_db: f64,
    channel: Option<ChannelKind>,
) -> Result<RoundtripStats, CliError> {
    let ck = load_checkpoint(checkpoint)?;
    let src = read_image(image_path)?;
    let want = ck.codec.image_shape();
    if src.shape() != want {
        return Err(CliError::Usage(format!(
            "image {} is {}x{}x{}, the checkpoint expects {}x{}x{}",
            image_path.display(),
            src.shape().0,
            src.shape().1,
            src.shape().2,
            want.0,
            want.1,
            want.2
        )));
    }
    let mut model = cfg.channel_model(snr_db);
    if let Some(kind) = channel {
        model.kind = kind;
    }
    model.validate()?;
    let rt = djscc_roundtrip(&src, &ck, &model)?;
    create_dir(&cfg.out)?;
    let out = cfg.out.join(RECONSTRUCTION);
    write_image(&out, &rt.image)?;
    let stats = RoundtripStats {
        mse: mse(&src, &rt.image)?,
        ssim: ssim(&src, &rt.image)?,
        packets: rt.transmission.packets,
        packets_lost: rt.transmission.packets_lost,
        erased_slots: rt.transmission.erased_slots,
        bits: rt.transmission.wire_bits,
    };
    println!(
        "mse {:.6} ssim {:.4} packets {} lost {} erased_slots {} bits {}",
        stats.mse, stats.ssim, stats.packets, stats.packets_lost, stats.erased_slots, stats.bits
    );
    println!("reconstruction written to {}", out.display());
    Ok(stats)
}

/// Prints what a knowledge base file or checkpoint contains.
pub fn cmd_inspect_kb(
    path: &Path,
    cfg: Option<&ExperimentConfig>,
    images: usize,
) -> Result<(), CliError> {
    let (kb, ck): (SemanticCodebook, Option<Checkpoint>) = if path.is_dir() {
        let ck = load_checkpoint(path)?;
        (ck.kb.clone(), Some(ck))
    } else {
        (load_kb(path)?, None)
    };
    println!("K {}", kb.size());
    println!("J {}", kb.dim());
    println!("hash {}", kb.content_hash_hex());
    let Some(ck) = ck else {
        println!("utilization unknown (a bare knowledge base file carries no encoder)");
        return Ok(());
    };
    println!("dataset {}", ck.dataset);
    if let Ok(report) = TrainReport::read_csv(path.join(REPORT_FILE)) {
        if let Some(last) = report.last() {
            println!(
                "utilization {:.4} (training epoch {})",
                last.utilization, last.epoch
            );
        }
    }
    let root = match cfg {
        Some(c) => c.data_root().ok(),
        None => ExperimentConfig::published(ck.dataset).data_root().ok(),
    };
    if let Some(root) = root {
        let test = ingest_dataset(ck.dataset, &root)?.test;
        let n = images.min(test.len());
        let mut used = vec![false; kb.size()];
        let set = test.head(n);
        for start in (0..n).step_by(100) {
            let chunk = set.images(start..(start + 100).min(n));
            let refs: Vec<&Image> = chunk.iter().collect();
            for g in quantize_batch(&encode_batch(&refs, &ck.params, &ck.codec)?, &ck.kb)? {
                for &z in g.indices() {
                    used[z as usize] = true;
                }
            }
        }
        let count = used.iter().filter(|&&u| u).count();
        println!(
            "utilization {:.4} ({count} of {} vectors over {n} test images)",
            count as f64 / kb.size() as f64,
            kb.size()
        );
    }
    Ok(())
}
