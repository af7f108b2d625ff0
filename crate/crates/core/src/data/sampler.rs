//! P x K batch sampling with fixed-length clip extraction.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Frame, FRAME_H, FRAME_W};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::shape::Shape5;
use crate::tensor::Tensor5;

/// Batch layout: P distinct subjects, K clips each, T frames per clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub p: usize,
    pub k: usize,
    pub clip_len: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { p: 8, k: 8, clip_len: 30 }
    }
}

impl SamplerConfig {
    pub fn batch_size(&self) -> usize {
        self.p * self.k
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || self.k < 2 {
            return Err(Error::Sampling(format!(
                "triplet sampling needs P >= 2 and K >= 2, got P={} K={}",
                self.p, self.k
            )));
        }
        if self.clip_len == 0 {
            return Err(Error::Sampling("clip_len must be >= 1".into()));
        }
        Ok(())
    }
}

/// Subject list and per-subject sequence indices, precomputed once.
#[derive(Clone, Debug)]
pub struct TrainIndex {
    pub subjects: Vec<String>,
    by_subject: Vec<Vec<usize>>,
}

impl TrainIndex {
    pub fn build(dataset: &Dataset) -> Self {
        let subjects = dataset.subjects();
        let mut by_subject = vec![Vec::new(); subjects.len()];
        for (i, seq) in dataset.sequences.iter().enumerate() {
            let label = subjects.binary_search(&seq.subject).expect("subject listed");
            by_subject[label].push(i);
        }
        TrainIndex { subjects, by_subject }
    }

    pub fn num_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn label_of(&self, subject: &str) -> Option<usize> {
        self.subjects.binary_search_by(|s| s.as_str().cmp(subject)).ok()
    }
}

/// A clip of exactly `clip_len` frames: a random contiguous window when the
/// sequence is long enough, otherwise the sequence repeated cyclically from
/// a random phase.
pub fn extract_clip<'a>(
    frames: &'a [Frame],
    clip_len: usize,
    rng: &mut impl Rng,
) -> Vec<&'a Frame> {
    let len = frames.len();
    if len >= clip_len {
        let start = rng.gen_range(0..=len - clip_len);
        frames[start..start + clip_len].iter().collect()
    } else {
        let phase = rng.gen_range(0..len);
        log::debug!("cyclic repeat: {len} frames to {clip_len}");
        (0..clip_len).map(|i| &frames[(phase + i) % len]).collect()
    }
}

fn clip_into<T: Scalar>(batch: &mut Tensor5<T>, sample: usize, clip: &[&Frame]) {
    let shape = batch.shape();
    let data = batch.data_mut();
    for (t, frame) in clip.iter().enumerate() {
        debug_assert_eq!((frame.h, frame.w), (FRAME_H, FRAME_W));
        let base = shape.index(sample, 0, t, 0, 0);
        for (dst, &px) in data[base..base + FRAME_H * FRAME_W].iter_mut().zip(&frame.pixels) {
            *dst = if px != 0 { T::one() } else { T::zero() };
        }
    }
}

/// Draw one training batch: P distinct subjects, K clips per subject
/// (sequences drawn without replacement when the subject has at least K,
/// with replacement otherwise). Returns the clip tensor
/// `(P*K, 1, T, 64, 44)` and per-sample class labels.
pub fn sample_batch<T: Scalar>(
    dataset: &Dataset,
    index: &TrainIndex,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<(Tensor5<T>, Vec<usize>)> {
    cfg.validate()?;
    if index.num_subjects() < cfg.p {
        return Err(Error::Sampling(format!(
            "need at least {} subjects, dataset has {}",
            cfg.p,
            index.num_subjects()
        )));
    }
    let mut subject_ids: Vec<usize> = (0..index.num_subjects()).collect();
    subject_ids.shuffle(rng);
    subject_ids.truncate(cfg.p);

    let shape = Shape5::new(cfg.batch_size(), 1, cfg.clip_len, FRAME_H, FRAME_W);
    let mut batch = Tensor5::zeros(shape);
    let mut labels = Vec::with_capacity(cfg.batch_size());
    for (pi, &label) in subject_ids.iter().enumerate() {
        let seqs = &index.by_subject[label];
        debug_assert!(!seqs.is_empty());
        let chosen: Vec<usize> = if seqs.len() >= cfg.k {
            let mut pool = seqs.clone();
            pool.shuffle(rng);
            pool.truncate(cfg.k);
            pool
        } else {
            (0..cfg.k).map(|_| seqs[rng.gen_range(0..seqs.len())]).collect()
        };
        for (ki, &seq_idx) in chosen.iter().enumerate() {
            let clip = extract_clip(&dataset.sequences[seq_idx].frames, cfg.clip_len, rng);
            clip_into(&mut batch, pi * cfg.k + ki, &clip);
            labels.push(label);
        }
    }
    Ok((batch, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_dataset, SynthConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_dataset() -> Dataset {
        synth_dataset(&SynthConfig {
            subjects: 8,
            seqs_per_subject: 4,
            views: vec![0, 90],
            frames_min: 12,
            frames_max: 40,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn p8_k8_yields_64_clips() {
        let ds = toy_dataset();
        let index = TrainIndex::build(&ds);
        let cfg = SamplerConfig { p: 8, k: 8, clip_len: 30 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (batch, labels) = sample_batch::<f32>(&ds, &index, &cfg, &mut rng).unwrap();
        assert_eq!(batch.shape(), Shape5::new(64, 1, 30, 64, 44));
        assert_eq!(labels.len(), 64);
        let mut uniq = labels.clone();
        uniq.dedup();
        assert_eq!(uniq.len(), 8, "8 runs of 8 equal labels");
    }

    #[test]
    fn exact_length_window_is_the_whole_sequence() {
        let ds = toy_dataset();
        let frames: Vec<Frame> = ds.sequences[0].frames[..30].to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let clip = extract_clip(&frames, 30, &mut rng);
        for (a, b) in clip.iter().zip(frames.iter()) {
            assert_eq!(**a, *b);
        }
    }

    #[test]
    fn short_sequences_repeat_cyclically() {
        let ds = toy_dataset();
        let frames: Vec<Frame> = ds.sequences[0].frames[..12].to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let clip = extract_clip(&frames, 30, &mut rng);
        assert_eq!(clip.len(), 30);
        // Identify the phase from the first frame, then check periodicity.
        let phase = frames.iter().position(|f| f == clip[0]).unwrap();
        for (i, f) in clip.iter().enumerate() {
            assert_eq!(**f, frames[(phase + i) % 12], "mismatch at {i}");
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let ds = toy_dataset();
        let index = TrainIndex::build(&ds);
        let cfg = SamplerConfig { p: 4, k: 4, clip_len: 30 };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            sample_batch::<f32>(&ds, &index, &cfg, &mut rng).unwrap()
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert!(a.bitwise_eq(&b));
        assert_eq!(la, lb);
    }

    #[test]
    fn too_few_subjects_is_sampling_error() {
        let ds = toy_dataset();
        let index = TrainIndex::build(&ds);
        let cfg = SamplerConfig { p: 16, k: 2, clip_len: 30 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_batch::<f32>(&ds, &index, &cfg, &mut rng),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn degenerate_pk_is_rejected() {
        let cfg = SamplerConfig { p: 1, k: 8, clip_len: 30 };
        assert!(matches!(cfg.validate(), Err(Error::Sampling(_))));
        let cfg = SamplerConfig { p: 4, k: 1, clip_len: 30 };
        assert!(matches!(cfg.validate(), Err(Error::Sampling(_))));
    }
}
