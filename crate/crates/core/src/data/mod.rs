//! Silhouette sequences: the dataset unit, normalization to the network's
//! input geometry, P x K batch sampling, a synthetic walker generator for
//! desk-scale experiments, and the on-disk dataset layout.

pub mod io;
pub mod normalize;
pub mod sampler;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frame geometry every sequence is normalized to.
pub const FRAME_H: usize = 64;
pub const FRAME_W: usize = 44;

/// A binary raster; pixels are 0 (background) or 1 (foreground), row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(h: usize, w: usize) -> Self {
        Frame { h, w, pixels: vec![0; h * w] }
    }

    pub fn from_pixels(h: usize, w: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != h * w {
            return Err(Error::Data(format!(
                "frame buffer has {} pixels for {h}x{w}",
                pixels.len()
            )));
        }
        Ok(Frame { h, w, pixels })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.pixels[r * self.w + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: u8) {
        self.pixels[r * self.w + c] = v;
    }

    pub fn foreground_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p != 0).count()
    }

    pub fn is_empty_frame(&self) -> bool {
        self.foreground_count() == 0
    }

    /// Intersection-over-union of the foreground masks.
    pub fn iou(&self, other: &Frame) -> f64 {
        debug_assert_eq!((self.h, self.w), (other.h, other.w));
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&a, &b) in self.pixels.iter().zip(other.pixels.iter()) {
            let fa = a != 0;
            let fb = b != 0;
            inter += (fa && fb) as usize;
            union += (fa || fb) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// An ordered silhouette sequence with identity metadata. Frames are
/// normalized 64x44 binary rasters.
#[derive(Clone, Debug)]
pub struct SilhouetteSequence {
    pub subject: String,
    /// Walking-condition tag, e.g. "nm-01" or "seq-00".
    pub condition: String,
    /// Camera view angle in degrees.
    pub view: u16,
    pub frames: Vec<Frame>,
}

impl SilhouetteSequence {
    /// Stable identifier used in manifests and embedding metadata.
    pub fn id(&self) -> String {
        format!("{}/{}/{:03}", self.subject, self.condition, self.view)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Data(format!("sequence {} has no frames", self.id())));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.h != FRAME_H || f.w != FRAME_W {
                return Err(Error::Data(format!(
                    "sequence {} frame {i} is {}x{}, expected {FRAME_H}x{FRAME_W}",
                    self.id(),
                    f.h,
                    f.w
                )));
            }
            if f.is_empty_frame() {
                return Err(Error::Data(format!(
                    "sequence {} frame {i} has no foreground",
                    self.id()
                )));
            }
        }
        Ok(())
    }
}

/// An in-memory dataset of normalized sequences.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub sequences: Vec<SilhouetteSequence>,
}

impl Dataset {
    pub fn new(sequences: Vec<SilhouetteSequence>) -> Result<Self> {
        for s in &sequences {
            s.validate()?;
        }
        Ok(Dataset { sequences })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Sorted unique subject ids; the index of a subject in this list is its
    /// class label for training.
    pub fn subjects(&self) -> Vec<String> {
        let mut subjects: Vec<String> =
            self.sequences.iter().map(|s| s.subject.clone()).collect();
        subjects.sort();
        subjects.dedup();
        subjects
    }

    pub fn views(&self) -> Vec<u16> {
        let mut views: Vec<u16> = self.sequences.iter().map(|s| s.view).collect();
        views.sort_unstable();
        views.dedup();
        views
    }

    /// Keep only sequences whose condition is in `conditions`.
    pub fn filter_conditions(&self, conditions: &[String]) -> Dataset {
        Dataset {
            sequences: self
                .sequences
                .iter()
                .filter(|s| conditions.contains(&s.condition))
                .cloned()
                .collect(),
        }
    }
}

/// Serializable sequence metadata for the dataset manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub subject: String,
    pub condition: String,
    pub view: u16,
    pub frames: usize,
    /// Directory of the frame images, relative to the dataset root.
    pub path: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub sequences: Vec<ManifestEntry>,
}
