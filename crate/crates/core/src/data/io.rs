//! On-disk dataset layout:
//!
//! ```text
//! root/
//!   manifest.json
//!   <subject>/<condition>/<view:03>/frame_0001.png ...
//! ```
//!
//! Frames are 8-bit grayscale PNGs (0 background, 255 foreground). Loading
//! thresholds at 128 and re-normalizes, so datasets produced elsewhere with
//! the same layout are accepted as long as frames contain a subject.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, Luma};

use super::normalize::normalize_sequence;
use super::{Dataset, Frame, Manifest, ManifestEntry};
use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

fn frame_to_image(frame: &Frame) -> GrayImage {
    let mut img = GrayImage::new(frame.w as u32, frame.h as u32);
    for r in 0..frame.h {
        for c in 0..frame.w {
            let v = if frame.get(r, c) != 0 { 255u8 } else { 0 };
            img.put_pixel(c as u32, r as u32, Luma([v]));
        }
    }
    img
}

fn image_to_frame(img: &GrayImage) -> Frame {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut frame = Frame::new(h, w);
    for r in 0..h {
        for c in 0..w {
            let Luma([v]) = *img.get_pixel(c as u32, r as u32);
            frame.set(r, c, (v >= 128) as u8);
        }
    }
    frame
}

/// Write `dataset` under `root`. Refuses a non-empty directory unless
/// `force` is set.
pub fn save_dataset(root: &Path, dataset: &Dataset, force: bool) -> Result<()> {
    if root.exists() {
        let non_empty = fs::read_dir(root)?.next().is_some();
        if non_empty && !force {
            return Err(Error::config(format!(
                "output directory {} is not empty (use --force to overwrite)",
                root.display()
            )));
        }
    }
    fs::create_dir_all(root)?;
    let mut entries = Vec::with_capacity(dataset.len());
    for seq in &dataset.sequences {
        let rel = format!("{}/{}/{:03}", seq.subject, seq.condition, seq.view);
        let dir = root.join(&rel);
        fs::create_dir_all(&dir)?;
        for (i, frame) in seq.frames.iter().enumerate() {
            let path = dir.join(format!("frame_{:04}.png", i + 1));
            frame_to_image(frame)
                .save_with_format(&path, ImageFormat::Png)
                .map_err(|e| Error::Format(format!("writing {}: {e}", path.display())))?;
        }
        entries.push(ManifestEntry {
            subject: seq.subject.clone(),
            condition: seq.condition.clone(),
            view: seq.view,
            frames: seq.frames.len(),
            path: rel,
        });
    }
    let manifest = Manifest { sequences: entries };
    fs::write(root.join(MANIFEST_NAME), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn load_sequence_dir(dir: &Path) -> Result<Vec<Frame>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .map(|x| x.eq_ignore_ascii_case("png") || x.eq_ignore_ascii_case("pgm"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    let mut frames = Vec::with_capacity(paths.len());
    for p in paths {
        let img = image::open(&p)
            .map_err(|e| Error::Format(format!("reading {}: {e}", p.display())))?
            .into_luma8();
        frames.push(image_to_frame(&img));
    }
    Ok(frames)
}

/// Load a dataset from `root`, via its manifest when present, otherwise by
/// scanning the subject/condition/view directory tree. Frames are
/// re-normalized on load (the normalization is idempotent).
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest_path = root.join(MANIFEST_NAME);
    let mut sequences = Vec::new();
    if manifest_path.exists() {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
        for entry in manifest.sequences {
            let raw = load_sequence_dir(&root.join(&entry.path))?;
            sequences.push(normalize_sequence(
                &entry.subject,
                &entry.condition,
                entry.view,
                &raw,
            )?);
        }
    } else {
        let mut subject_dirs: Vec<PathBuf> = fs::read_dir(root)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        subject_dirs.sort();
        for sdir in subject_dirs {
            let subject = sdir.file_name().unwrap().to_string_lossy().to_string();
            let mut cond_dirs: Vec<PathBuf> =
                fs::read_dir(&sdir)?.filter_map(|e| e.ok()).map(|e| e.path()).collect();
            cond_dirs.sort();
            for cdir in cond_dirs.into_iter().filter(|p| p.is_dir()) {
                let condition = cdir.file_name().unwrap().to_string_lossy().to_string();
                let mut view_dirs: Vec<PathBuf> =
                    fs::read_dir(&cdir)?.filter_map(|e| e.ok()).map(|e| e.path()).collect();
                view_dirs.sort();
                for vdir in view_dirs.into_iter().filter(|p| p.is_dir()) {
                    let view_name = vdir.file_name().unwrap().to_string_lossy().to_string();
                    let view: u16 = view_name.parse().map_err(|_| {
                        Error::Data(format!("view directory '{view_name}' is not a number"))
                    })?;
                    let raw = load_sequence_dir(&vdir)?;
                    sequences.push(normalize_sequence(&subject, &condition, view, &raw)?);
                }
            }
        }
    }
    if sequences.is_empty() {
        return Err(Error::Data(format!("no sequences found under {}", root.display())));
    }
    Dataset::new(sequences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_dataset, SynthConfig};

    #[test]
    fn save_load_round_trip_preserves_frames() {
        let cfg = SynthConfig { subjects: 2, seqs_per_subject: 1, views: vec![0, 90], ..Default::default() };
        let ds = synth_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds, false).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.len(), ds.len());
        for (a, b) in ds.sequences.iter().zip(loaded.sequences.iter()) {
            assert_eq!(a.id(), b.id());
            assert_eq!(a.frames, b.frames, "frames changed in {}", a.id());
        }
    }

    #[test]
    fn refuses_nonempty_dir_without_force() {
        let cfg = SynthConfig { subjects: 2, seqs_per_subject: 1, views: vec![0], ..Default::default() };
        let ds = synth_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("existing.txt"), "x").unwrap();
        assert!(save_dataset(dir.path(), &ds, false).is_err());
        save_dataset(dir.path(), &ds, true).unwrap();
    }

    #[test]
    fn loads_without_manifest_by_scanning() {
        let cfg = SynthConfig { subjects: 2, seqs_per_subject: 1, views: vec![36], ..Default::default() };
        let ds = synth_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds, false).unwrap();
        std::fs::remove_file(dir.path().join(MANIFEST_NAME)).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.len(), ds.len());
    }
}
