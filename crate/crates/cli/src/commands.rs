use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use geosup::data::{
    generate_synthetic_with, load_image, load_image_folder, write_dataset, DatasetManifest, ManifestSidecar,
    MANIFEST_FILE,
};
use geosup::trainer::{
    default_grid, evaluate_checkpoint, hyperparameter_grid, run_ablation_suite, write_table, Checkpoint, Trainer,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{GridKind, RunConfig};
use crate::exit::{Failure, CONFIG};
use crate::visualize;

const LOCK_FILE: &str = ".geosup.lock";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const ABLATION_FILE: &str = "ablation.tsv";

/// Exclusive claim on an output directory, released on drop.
struct OutDirLock(PathBuf);

impl OutDirLock {
    fn acquire(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let path = dir.join(LOCK_FILE);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            Failure::new(
                crate::exit::OTHER,
                format!("{} is in use by another run ({e}); remove {} if stale", dir.display(), path.display()),
            )
        })?;
        writeln!(f, "{}", std::process::id())?;
        Ok(OutDirLock(path))
    }
}

impl Drop for OutDirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Loads a dataset directory, taking the image size from its sidecar when present.
fn load_dataset(dir: &Path, default_size: usize) -> Result<DatasetManifest, Failure> {
    let sidecar = dir.join(MANIFEST_FILE);
    let size = if sidecar.is_file() {
        let bytes = fs::read(&sidecar)?;
        let s: ManifestSidecar = serde_json::from_slice(&bytes)
            .map_err(|e| Failure::new(crate::exit::DATA, format!("bad {}: {e}", sidecar.display())))?;
        s.image_size
    } else {
        default_size
    };
    Ok(load_image_folder(dir, size)?)
}

pub fn generate(config: &Path, out: &Path) -> Result<(), Failure> {
    let cfg = RunConfig::load(config)?;
    let _lock = OutDirLock::acquire(out)?;
    let manifest = generate_synthetic_with(&cfg.data)?;
    write_dataset(&manifest, out)?;
    cfg.echo(out)?;
    let hash = sha256_hex(&fs::read(out.join(MANIFEST_FILE))?);
    fs::write(out.join("manifest.sha256"), format!("{hash}\n"))?;
    println!(
        "wrote {} train / {} test images, {} classes",
        manifest.train.len(),
        manifest.test.len(),
        manifest.num_classes()
    );
    println!("manifest sha256 {hash}");
    Ok(())
}

pub fn train(
    config: &Path,
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
    deterministic: bool,
) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(config)?;
    if deterministic {
        cfg.trainer.deterministic = true;
    }
    let _lock = OutDirLock::acquire(out)?;
    let manifest = load_dataset(data, cfg.data.image_size)?;

    let mut trainer = match resume {
        Some(path) => {
            let ck = Checkpoint::<f32>::load(path)?;
            if ck.model.config.num_classes != manifest.num_classes() {
                return Err(Failure::config(format!(
                    "checkpoint has {} classes but the dataset has {}",
                    ck.model.config.num_classes,
                    manifest.num_classes()
                )));
            }
            // the checkpoint's settings govern; only the epoch budget comes from the config
            let epochs = cfg.trainer.epochs;
            let mut t = Trainer::from_checkpoint(ck);
            t.config.epochs = epochs;
            t.config.deterministic |= deterministic;
            cfg.trainer = t.config.clone();
            let mc = &t.model.config;
            cfg.backbone = mc.backbone.clone();
            cfg.sda = mc.sda.clone();
            cfg.gae = mc.gae.clone();
            cfg.gat = mc.gat;
            log::info!("resuming after epoch {}", t.epoch);
            t
        }
        None => {
            let mc = cfg.model_config(manifest.image_size, manifest.num_classes());
            Trainer::<f32>::new(&mc, &cfg.trainer, manifest.class_names.clone())?
        }
    };
    cfg.echo(out)?;

    let metrics_path = out.join(METRICS_FILE);
    let file = if resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&metrics_path)?
    } else {
        File::create(&metrics_path)?
    };
    let mut metrics = BufWriter::new(file);
    let ck_path = out.join(CHECKPOINT_FILE);
    trainer.fit(&manifest, |m, t| {
        writeln!(metrics, "{}", serde_json::to_string(m)?)?;
        metrics.flush()?;
        t.checkpoint().save(&ck_path)
    })?;
    if trainer.epoch == 0 || !ck_path.exists() {
        trainer.checkpoint().save(&ck_path)?;
    }
    println!("trained {} epochs; checkpoint {}", trainer.epoch, ck_path.display());
    Ok(())
}

pub fn eval(checkpoint: &Path, data: &Path) -> Result<(), Failure> {
    let ck = Checkpoint::<f32>::load(checkpoint)?;
    let manifest = load_dataset(data, ck.model.config.image_size)?;
    let report = evaluate_checkpoint(&ck, &manifest)?;
    println!("top1 {:.6} ({}/{})", report.accuracy, report.correct, report.total);
    Ok(())
}

#[derive(Debug, Serialize)]
struct VisualRecord {
    path: String,
    predicted_class: usize,
    reference_x: usize,
    reference_y: usize,
    pattern_argmax_x: usize,
    pattern_argmax_y: usize,
    max_displacement_px: f64,
    files: Vec<String>,
}

#[derive(Debug, Serialize)]
struct VisualSummary {
    images: Vec<VisualRecord>,
    skipped: usize,
}

pub fn visualize(checkpoint: &Path, images: &[PathBuf], out: &Path) -> Result<(), Failure> {
    let ck = Checkpoint::<f32>::load(checkpoint)?;
    let _lock = OutDirLock::acquire(out)?;
    let size = ck.model.config.image_size;
    let mut summary = VisualSummary {
        images: Vec::new(),
        skipped: 0,
    };
    for (i, path) in images.iter().enumerate() {
        let img = match load_image(path, size) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                summary.skipped += 1;
                continue;
            }
        };
        let ex = ck.model.explain(img.view(), &ck.train.flags)?;
        let stem = format!(
            "{i:03}_{}",
            path.file_stem().and_then(|s| s.to_str()).unwrap_or("image")
        );
        let pattern = visualize::normalize(&ex.pattern);
        let renders = [
            ("original", visualize::image_rgb(&img)),
            ("grid", visualize::grid_overlay(&img, &ex.grid)),
            ("warped", visualize::image_rgb(&ex.warped)),
            ("feedback", visualize::heat_overlay(&img, &ex.feedback)),
            ("pattern", visualize::pattern_overlay(&img, &ex.pattern, ex.reference)),
        ];
        let mut files = Vec::new();
        for (kind, canvas) in renders {
            let name = format!("{stem}_{kind}.png");
            canvas
                .save(out.join(&name))
                .with_context(|| format!("cannot write {name}"))?;
            files.push(name);
        }
        let argmax = visualize::argmax_cell(&pattern);
        summary.images.push(VisualRecord {
            path: path.display().to_string(),
            predicted_class: ex.predicted_class,
            reference_x: ex.reference.x,
            reference_y: ex.reference.y,
            pattern_argmax_x: argmax.x,
            pattern_argmax_y: argmax.y,
            max_displacement_px: ex.grid.max_displacement_px(),
            files,
        });
    }
    fs::write(out.join("summary.json"), serde_json::to_vec_pretty(&summary).map_err(anyhow::Error::from)?)?;
    println!(
        "rendered {} images, skipped {}",
        summary.images.len(),
        summary.skipped
    );
    Ok(())
}

pub fn ablate(config: &Path, data: &Path, out: &Path, deterministic: bool) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(config)?;
    if deterministic {
        cfg.trainer.deterministic = true;
    }
    let _lock = OutDirLock::acquire(out)?;
    let mut manifest = load_dataset(data, cfg.data.image_size)?;
    if let Some(k) = cfg.ablation.classes {
        if k < 2 || k > manifest.num_classes() {
            return Err(Failure::new(
                CONFIG,
                format!("ablation.classes must be in [2, {}], got {k}", manifest.num_classes()),
            ));
        }
        manifest = manifest.restrict_classes(k);
    }
    cfg.echo(out)?;
    let rows = match cfg.ablation.grid {
        GridKind::Default => default_grid(cfg.trainer.loss_weights),
        GridKind::Hyperparameter => hyperparameter_grid(&cfg.ablation.alphas, &cfg.ablation.betas, &cfg.ablation.gammas),
    };
    let model = cfg.model_config(manifest.image_size, manifest.num_classes());
    let table_path = out.join(ABLATION_FILE);
    let mut done = Vec::new();
    let results = run_ablation_suite(&model, &cfg.trainer, &rows, &cfg.ablation.seeds, &manifest, |r| {
        done.push(r.clone());
        write_table(File::create(&table_path)?, &done)?;
        Ok(())
    })?;
    write_table(std::io::stdout().lock(), &results)?;
    Ok(())
}
