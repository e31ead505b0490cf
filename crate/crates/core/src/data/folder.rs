use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{ImageBuffer, Rgb, RgbImage};
use ndarray::Array3;

use super::{
    DatasetManifest, DatasetSource, ImageTensor, LabeledSample, ManifestSidecar, SidecarEntry, Split, MANIFEST_FILE,
    MANIFEST_VERSION, MIN_IMAGE_SIDE,
};
use crate::error::{Error, Result};

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let hidden = path
            .file_name()
            .and_then(|n| n.to_str())
            .map_or(true, |n| n.starts_with('.'));
        if !hidden {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn class_dirs(split_dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for path in sorted_entries(split_dir)? {
        if path.is_dir() {
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| Error::Ingestion(format!("non-UTF-8 class directory under {}", split_dir.display())))?
                .to_string();
            out.push((name, path));
        }
    }
    Ok(out)
}

/// Decodes one image file, resizes it to `image_size`² and scales it to `[0,1]`.
pub fn load_image(path: &Path, image_size: usize) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut rgb = img.to_rgb8();
    let side = image_size as u32;
    if rgb.dimensions() != (side, side) {
        rgb = image::imageops::resize(&rgb, side, side, FilterType::Triangle);
    }
    Ok(Array3::from_shape_fn((3, image_size, image_size), |(c, y, x)| {
        rgb.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
    }))
}

/// Loads `root/train/<class>/*` and `root/test/<class>/*`.
///
/// Classes are the subdirectories of `train/`, indexed in lexicographic
/// order. Every non-hidden file inside a class directory must decode as an
/// image. Images are resized to `image_size`² and scaled to `[0,1]`.
pub fn load_image_folder(root: impl AsRef<Path>, image_size: usize) -> Result<DatasetManifest> {
    let root = root.as_ref();
    if image_size < MIN_IMAGE_SIDE {
        return Err(Error::config(format!(
            "image_size must be at least {MIN_IMAGE_SIDE}, got {image_size}"
        )));
    }
    let mut dirs = Vec::new();
    for split in [Split::Train, Split::Test] {
        let dir = root.join(split.dir_name());
        if !dir.is_dir() {
            return Err(Error::Ingestion(format!("missing split directory {}", dir.display())));
        }
        dirs.push(dir);
    }

    let train_classes = class_dirs(&dirs[0])?;
    if train_classes.is_empty() {
        return Err(Error::Ingestion(format!("{} has no class directories", dirs[0].display())));
    }
    let class_names: Vec<String> = train_classes.iter().map(|(n, _)| n.clone()).collect();

    let mut splits: Vec<Vec<LabeledSample>> = Vec::new();
    for (split, dir) in [Split::Train, Split::Test].into_iter().zip(&dirs) {
        let classes = class_dirs(dir)?;
        let mut samples = Vec::new();
        for (name, class_dir) in classes {
            let label = class_names.binary_search(&name).map_err(|_| {
                Error::Ingestion(format!("class {name:?} appears in {} but not in train", split.dir_name()))
            })?;
            for file in sorted_entries(&class_dir)? {
                if !file.is_file() {
                    continue;
                }
                let rel = file.strip_prefix(root).unwrap_or(&file);
                samples.push(LabeledSample {
                    id: rel.to_string_lossy().replace('\\', "/"),
                    image: load_image(&file, image_size)?,
                    label,
                });
            }
        }
        splits.push(samples);
    }
    let test = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();

    let mut counts = vec![0usize; class_names.len()];
    for s in &train {
        counts[s.label] += 1;
    }
    if let Some(k) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Ingestion(format!("train class {:?} has no images", class_names[k])));
    }
    if test.is_empty() {
        log::warn!("{} contains no images", dirs[1].display());
    }

    Ok(DatasetManifest {
        per_class_train: counts.iter().copied().min().unwrap_or(0),
        class_names,
        image_size,
        train,
        test,
        source: DatasetSource::Folder {
            root: root.display().to_string(),
        },
    })
}

fn to_rgb(image: &ImageTensor) -> RgbImage {
    let (_, h, w) = image.dim();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| (image[[c, y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([px(0), px(1), px(2)])
    })
}

fn file_stem(id: &str) -> &str {
    let last = id.rsplit('/').next().unwrap_or(id);
    last.rsplit_once('.').map_or(last, |(stem, _)| stem)
}

/// Writes the dataset as `<split>/<class>/<stem>.png` plus the JSON sidecar,
/// in the layout [`load_image_folder`] reads.
pub fn write_dataset(manifest: &DatasetManifest, out_dir: impl AsRef<Path>) -> Result<ManifestSidecar> {
    let out_dir = out_dir.as_ref();
    let mut entries: [Vec<SidecarEntry>; 2] = [Vec::new(), Vec::new()];
    for (slot, split) in [Split::Train, Split::Test].into_iter().enumerate() {
        for class in &manifest.class_names {
            fs::create_dir_all(out_dir.join(split.dir_name()).join(class))?;
        }
        for sample in manifest.split(split) {
            let rel = format!(
                "{}/{}/{}.png",
                split.dir_name(),
                manifest.class_names[sample.label],
                file_stem(&sample.id)
            );
            to_rgb(&sample.image).save(out_dir.join(&rel))?;
            entries[slot].push(SidecarEntry {
                path: rel,
                label: sample.label,
            });
        }
    }
    let [train, test] = entries;
    let sidecar = ManifestSidecar {
        format_version: MANIFEST_VERSION,
        image_size: manifest.image_size,
        class_names: manifest.class_names.clone(),
        per_class_train: manifest.per_class_train,
        source: manifest.source.clone(),
        train,
        test,
    };
    fs::write(out_dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(sidecar)
}
