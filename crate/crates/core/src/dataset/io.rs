//! Loading and persisting datasets.
//!
//! On-disk layout of a dataset root:
//!
//! ```text
//! root/
//!   images/<name>.png          image files
//!   annotations/<name>.json    one annotation per image
//!   train.json / test.json     manifest files (lists of annotation paths)
//! ```
//!
//! An annotation file is a single JSON document:
//! `{"image": "<filename>", "heads": [[x, y], ...]}` with x, y as decimal
//! numbers in image coordinates. A manifest file is
//! `{"name": ..., "split": "train"|"test", "annotations": [paths]}` with
//! paths relative to the dataset root.

use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::{AnnotatedSample, DatasetManifest, SampleSource, Split};
use crate::error::{Error, Result};
use crate::util::{read_to_string, write_file, write_json};

/// One head-annotation document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Annotation {
    pub image: String,
    pub heads: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestFile {
    name: String,
    split: Split,
    annotations: Vec<String>,
}

/// Tallies collected while loading a dataset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Head points that were outside the image and clamped in-bounds.
    pub clamped_heads: usize,
}

fn parse_annotation(path: &Path) -> Result<Annotation> {
    let raw = read_to_string(path).map_err(|_| Error::MissingAnnotation {
        image: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        path: path.to_path_buf(),
    })?;
    serde_json::from_str(&raw).map_err(|e| Error::AnnotationParse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn load_image_chw(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::ImageDecode {
            path: path.to_path_buf(),
            source: e,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = Array3::<f32>::zeros((3, h, w));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c, y as usize, x as usize)] = px[c] as f32 / 255.0;
        }
    }
    Ok(data)
}

/// Loads the dataset described by `root/<manifest_name>`.
///
/// Out-of-bounds head points are clamped to the nearest in-bounds pixel and
/// counted in the returned [`LoadReport`].
pub fn load_dataset(root: &Path, manifest_name: &str) -> Result<(DatasetManifest, LoadReport)> {
    let manifest_path = root.join(manifest_name);
    let raw = read_to_string(&manifest_path)?;
    let file: ManifestFile =
        serde_json::from_str(&raw).map_err(|e| Error::json(&manifest_path, e))?;

    if file.annotations.is_empty() {
        return Err(Error::NoSamples {
            path: root.to_path_buf(),
        });
    }

    let mut report = LoadReport::default();
    let mut samples = Vec::with_capacity(file.annotations.len());
    for ann_rel in &file.annotations {
        let ann_path = root.join(ann_rel);
        let ann = parse_annotation(&ann_path)?;

        let image_path = root.join("images").join(&ann.image);
        if !image_path.exists() {
            return Err(Error::MissingImage {
                image: image_path,
                annotation: ann_path,
            });
        }
        let image = load_image_chw(&image_path)?;
        let (h, w) = (image.shape()[1] as f64, image.shape()[2] as f64);

        let mut heads = Vec::with_capacity(ann.heads.len());
        for [x, y] in ann.heads {
            let cx = x.clamp(0.0, w - 1.0);
            let cy = y.clamp(0.0, h - 1.0);
            if cx != x || cy != y {
                report.clamped_heads += 1;
                log::warn!(
                    "clamped head ({x}, {y}) -> ({cx}, {cy}) in {}",
                    ann_path.display()
                );
            }
            heads.push((cx, cy));
        }

        let id = Path::new(&ann.image)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| ann.image.clone());
        samples.push(AnnotatedSample {
            id,
            image,
            heads,
            source: SampleSource::Real,
        });
    }

    let manifest = DatasetManifest {
        name: file.name,
        split: file.split,
        samples,
    };
    manifest.validate()?;
    Ok((manifest, report))
}

/// Scans `root/images`, pairs each image with `root/annotations/<stem>.json`,
/// and writes a manifest file `root/<split>.json`. Returns the manifest path.
///
/// A missing annotation is an error naming the image; an empty images
/// directory is a "no samples" error.
pub fn scan_dataset_root(root: &Path, name: &str, split: Split) -> Result<PathBuf> {
    let images_dir = root.join("images");
    let mut image_files: Vec<PathBuf> = std::fs::read_dir(&images_dir)
        .map_err(|e| Error::io(&images_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    image_files.sort();

    if image_files.is_empty() {
        return Err(Error::NoSamples {
            path: root.to_path_buf(),
        });
    }

    let mut annotations = Vec::with_capacity(image_files.len());
    for img in &image_files {
        let stem = img
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let ann_rel = format!("annotations/{stem}.json");
        let ann_path = root.join(&ann_rel);
        if !ann_path.exists() {
            return Err(Error::MissingAnnotation {
                image: img
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                path: ann_path,
            });
        }
        annotations.push(ann_rel);
    }

    let manifest = ManifestFile {
        name: name.to_string(),
        split,
        annotations,
    };
    let manifest_path = root.join(format!("{split}.json"));
    write_json(&manifest_path, &manifest)?;
    Ok(manifest_path)
}

/// Persists an in-memory dataset under `root` in the documented layout and
/// returns the manifest path. Images are written as 8-bit RGB PNG.
pub fn save_dataset(manifest: &DatasetManifest, root: &Path) -> Result<PathBuf> {
    let mut ann_paths = Vec::with_capacity(manifest.len());
    for sample in &manifest.samples {
        let (c, h, w) = {
            let s = sample.image.shape();
            (s[0], s[1], s[2])
        };
        if c != 3 {
            return Err(Error::ShapeMismatch(format!(
                "sample {}: expected 3 channels, found {c}",
                sample.id
            )));
        }
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let px = [
                    (sample.image[(0, y, x)].clamp(0.0, 1.0) * 255.0).round() as u8,
                    (sample.image[(1, y, x)].clamp(0.0, 1.0) * 255.0).round() as u8,
                    (sample.image[(2, y, x)].clamp(0.0, 1.0) * 255.0).round() as u8,
                ];
                img.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        let image_name = format!("{}.png", sample.id);
        let image_path = root.join("images").join(&image_name);
        if let Some(parent) = image_path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        img.save(&image_path).map_err(|e| Error::ImageDecode {
            path: image_path.clone(),
            source: e,
        })?;

        let ann = Annotation {
            image: image_name,
            heads: sample.heads.iter().map(|&(x, y)| [x, y]).collect(),
        };
        let ann_rel = format!("annotations/{}.json", sample.id);
        let ann_body = serde_json::to_vec_pretty(&ann)
            .map_err(|e| Error::json(Path::new(&ann_rel), e))?;
        write_file(&root.join(&ann_rel), &ann_body)?;
        ann_paths.push(ann_rel);
    }

    let file = ManifestFile {
        name: manifest.name.clone(),
        split: manifest.split,
        annotations: ann_paths,
    };
    let manifest_path = root.join(format!("{}.json", manifest.split));
    write_json(&manifest_path, &file)?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthesize_dataset;

    #[test]
    fn save_scan_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synthesize_dataset(3, (0, 5), (16, 16), 11).unwrap();
        save_dataset(&manifest, dir.path()).unwrap();

        let manifest_path = scan_dataset_root(dir.path(), "rt", Split::Train).unwrap();
        assert_eq!(manifest_path, dir.path().join("train.json"));

        let (loaded, report) = load_dataset(dir.path(), "train.json").unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(report.clamped_heads, 0);
        // Head annotations survive the round trip exactly (JSON carries f64).
        for (a, b) in manifest.samples.iter().zip(loaded.samples.iter()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.heads, b.heads);
        }
    }

    #[test]
    fn out_of_bounds_heads_are_clamped_and_tallied() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synthesize_dataset(1, (0, 0), (16, 16), 3).unwrap();
        save_dataset(&manifest, dir.path()).unwrap();

        // Rewrite the annotation with one out-of-bounds head: (W+5, 10).
        let ann_path = dir.path().join("annotations/synth-00000.json");
        let ann = Annotation {
            image: "synth-00000.png".into(),
            heads: vec![[21.0, 10.0]],
        };
        std::fs::write(&ann_path, serde_json::to_vec(&ann).unwrap()).unwrap();

        let (loaded, report) = load_dataset(dir.path(), "train.json").unwrap();
        assert_eq!(report.clamped_heads, 1);
        assert_eq!(loaded.samples[0].heads, vec![(15.0, 10.0)]);
    }

    #[test]
    fn empty_images_directory_is_no_samples() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("images")).unwrap();
        let err = scan_dataset_root(dir.path(), "e", Split::Train).unwrap_err();
        assert!(matches!(err, Error::NoSamples { .. }), "{err}");
    }

    #[test]
    fn missing_annotation_names_the_image() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synthesize_dataset(2, (0, 2), (8, 8), 5).unwrap();
        save_dataset(&manifest, dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("annotations/synth-00001.json")).unwrap();

        let err = scan_dataset_root(dir.path(), "m", Split::Train).unwrap_err();
        match err {
            Error::MissingAnnotation { image, .. } => assert_eq!(image, "synth-00001.png"),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn malformed_annotation_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synthesize_dataset(1, (1, 1), (8, 8), 9).unwrap();
        save_dataset(&manifest, dir.path()).unwrap();
        let ann_path = dir.path().join("annotations/synth-00000.json");
        std::fs::write(&ann_path, "{\n  \"image\": \"synth-00000.png\",\n  \"heads\": oops\n}")
            .unwrap();

        let err = load_dataset(dir.path(), "train.json").unwrap_err();
        match err {
            Error::AnnotationParse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error: {other}"),
        }
    }
}
