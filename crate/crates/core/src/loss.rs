//! Training losses over per-strip embeddings.
//!
//! Both losses treat each horizontal strip as an independent feature space:
//! the batch-all triplet loss enumerates every valid (anchor, positive,
//! negative) triple per strip, and the cross-entropy loss classifies each
//! strip with its own weight matrix. Each loss is one fused op with an
//! analytic backward rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GradGraph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor5;
#[cfg(test)]
use crate::shape::Shape5;

/// Batch-all triplet loss configuration; distances are Euclidean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletConfig {
    pub margin: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        TripletConfig { margin: 0.2 }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin <= 0.0 {
            return Err(Error::config("triplet margin must be > 0"));
        }
        Ok(())
    }
}

/// Label-smoothed cross-entropy configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CeConfig {
    pub num_classes: usize,
    /// Smoothing mass epsilon in [0, 1); 0 is plain cross-entropy.
    pub smoothing: f64,
}

impl CeConfig {
    pub fn new(num_classes: usize, smoothing: f64) -> Self {
        CeConfig { num_classes, smoothing }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("cross-entropy needs at least 2 classes"));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::config("smoothing must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Number of (anchor, positive, negative) triples per strip for a batch of
/// `p` classes with `k` samples each: `p*k * (k-1) * (p-1)*k`.
pub fn batch_all_triplet_count(p: usize, k: usize) -> usize {
    p * k * (k - 1) * (p - 1) * k
}

fn check_strip_input<T: Scalar>(emb: &Tensor5<T>, labels: &[usize]) -> Result<(usize, usize, usize)> {
    let s = emb.shape();
    if s.t != 1 || s.w != 1 {
        return Err(Error::Contract(format!(
            "strip embeddings must have T=1 and W=1, got {s}"
        )));
    }
    if labels.len() != s.n {
        return Err(Error::Data(format!(
            "{} labels for a batch of {}",
            labels.len(),
            s.n
        )));
    }
    Ok((s.n, s.c, s.h))
}

/// Per-strip squared distances and guarded Euclidean distances for one strip.
fn strip_distances<T: Scalar>(
    emb: &Tensor5<T>,
    strip: usize,
    n: usize,
    c: usize,
) -> Vec<T> {
    let s = emb.shape();
    let d = emb.data();
    let mut dist = vec![T::zero(); n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = T::zero();
            for ch in 0..c {
                let diff = d[s.index(i, ch, 0, strip, 0)] - d[s.index(j, ch, 0, strip, 0)];
                acc = acc + diff * diff;
            }
            let dd = acc.sqrt();
            dist[i * n + j] = dd;
            dist[j * n + i] = dd;
        }
    }
    dist
}

impl<T: Scalar> GradGraph<T> {
    /// Batch-all triplet loss over strip embeddings `(N, C, 1, H, 1)`.
    ///
    /// Per strip: every (a, p, n) with label(a) == label(p), a != p,
    /// label(n) != label(a) contributes `[D(a,p) - D(a,n) + margin]_+`; the
    /// strip loss is the mean over triples with a strictly positive hinge
    /// (0 when there are none), and the total is the mean over strips.
    pub fn triplet_batch_all(
        &mut self,
        emb: Var,
        labels: &[usize],
        cfg: &TripletConfig,
    ) -> Result<Var> {
        cfg.validate()?;
        let ev = self.value(emb).clone();
        let (n, c, strips) = check_strip_input(&ev, labels)?;
        let mut class_counts = std::collections::BTreeMap::new();
        for &l in labels {
            *class_counts.entry(l).or_insert(0usize) += 1;
        }
        if class_counts.len() < 2 {
            return Err(Error::Sampling("triplet loss needs at least 2 classes in the batch".into()));
        }
        if class_counts.values().all(|&k| k < 2) {
            return Err(Error::Sampling("triplet loss needs a class with at least 2 samples".into()));
        }
        let labels: Vec<usize> = labels.to_vec();
        let margin = T::from_f64(cfg.margin);

        let strip_loss = |strip: usize| -> (T, usize) {
            let dist = strip_distances(&ev, strip, n, c);
            let mut sum = T::zero();
            let mut count = 0usize;
            for a in 0..n {
                for p in 0..n {
                    if p == a || labels[p] != labels[a] {
                        continue;
                    }
                    let dap = dist[a * n + p];
                    for neg in 0..n {
                        if labels[neg] == labels[a] {
                            continue;
                        }
                        let hinge = dap - dist[a * n + neg] + margin;
                        if hinge > T::zero() {
                            sum = sum + hinge;
                            count += 1;
                        }
                    }
                }
            }
            (sum, count)
        };

        let mut total = T::zero();
        for strip in 0..strips {
            let (sum, count) = strip_loss(strip);
            if count > 0 {
                total = total + sum / T::from_f64(count as f64);
            }
        }
        total = total / T::from_f64(strips as f64);
        let y = Tensor5::scalar(total);

        Ok(self.push_op(y, &[emb], move || {
            Box::new(move |gout, store| {
                let g = gout.scalar_value();
                let s = ev.shape();
                let d = ev.data();
                let tiny = T::from_f64(1e-30);
                let mut grad = Tensor5::zeros(s);
                let gd = grad.data_mut();
                for strip in 0..strips {
                    let dist = strip_distances(&ev, strip, n, c);
                    // Recount active triples; identical to the forward pass.
                    let mut count = 0usize;
                    for a in 0..n {
                        for p in 0..n {
                            if p == a || labels[p] != labels[a] {
                                continue;
                            }
                            let dap = dist[a * n + p];
                            for neg in 0..n {
                                if labels[neg] == labels[a] {
                                    continue;
                                }
                                if dap - dist[a * n + neg] + margin > T::zero() {
                                    count += 1;
                                }
                            }
                        }
                    }
                    if count == 0 {
                        continue;
                    }
                    let scale = g / (T::from_f64(count as f64) * T::from_f64(strips as f64));
                    for a in 0..n {
                        for p in 0..n {
                            if p == a || labels[p] != labels[a] {
                                continue;
                            }
                            let dap = dist[a * n + p];
                            let inv_ap = T::one() / dap.max(tiny);
                            for neg in 0..n {
                                if labels[neg] == labels[a] {
                                    continue;
                                }
                                let dan = dist[a * n + neg];
                                if dap - dan + margin <= T::zero() {
                                    continue;
                                }
                                let inv_an = T::one() / dan.max(tiny);
                                for ch in 0..c {
                                    let ia = s.index(a, ch, 0, strip, 0);
                                    let ip = s.index(p, ch, 0, strip, 0);
                                    let ineg = s.index(neg, ch, 0, strip, 0);
                                    let diff_ap = (d[ia] - d[ip]) * inv_ap;
                                    let diff_an = (d[ia] - d[ineg]) * inv_an;
                                    gd[ia] = gd[ia] + scale * (diff_ap - diff_an);
                                    gd[ip] = gd[ip] - scale * diff_ap;
                                    gd[ineg] = gd[ineg] + scale * diff_an;
                                }
                            }
                        }
                    }
                }
                store.accumulate(emb, grad);
            })
        }))
    }

    /// Label-smoothed cross-entropy over per-strip logits `(N, C, 1, H, 1)`.
    ///
    /// The target distribution puts `1 - eps + eps/C` on the true class and
    /// `eps/C` elsewhere; the loss is the mean over samples and strips.
    pub fn cross_entropy_smooth(
        &mut self,
        logits: Var,
        labels: &[usize],
        cfg: &CeConfig,
    ) -> Result<Var> {
        cfg.validate()?;
        let lv = self.value(logits).clone();
        let (n, classes, strips) = check_strip_input(&lv, labels)?;
        if classes != cfg.num_classes {
            return Err(Error::config(format!(
                "logits have {classes} classes, config says {}",
                cfg.num_classes
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let labels: Vec<usize> = labels.to_vec();
        let eps = T::from_f64(cfg.smoothing);
        let uniform = eps / T::from_f64(classes as f64);
        let on_true = T::one() - eps + uniform;

        let s = lv.shape();
        let d = lv.data();
        let inv_count = T::one() / T::from_f64((n * strips) as f64);
        let mut total = T::zero();
        for i in 0..n {
            for strip in 0..strips {
                let mut maxv = T::neg_infinity();
                for ch in 0..classes {
                    maxv = maxv.max(d[s.index(i, ch, 0, strip, 0)]);
                }
                let mut lse = T::zero();
                let mut expect = T::zero();
                for ch in 0..classes {
                    let z = d[s.index(i, ch, 0, strip, 0)];
                    lse = lse + (z - maxv).exp();
                    let q = if ch == labels[i] { on_true } else { uniform };
                    expect = expect + q * z;
                }
                total = total + (maxv + lse.ln() - expect) * inv_count;
            }
        }
        let y = Tensor5::scalar(total);

        Ok(self.push_op(y, &[logits], move || {
            Box::new(move |gout, store| {
                let g = gout.scalar_value() * inv_count;
                let d = lv.data();
                let mut grad = Tensor5::zeros(s);
                let gd = grad.data_mut();
                for i in 0..n {
                    for strip in 0..strips {
                        let mut maxv = T::neg_infinity();
                        for ch in 0..classes {
                            maxv = maxv.max(d[s.index(i, ch, 0, strip, 0)]);
                        }
                        let mut denom = T::zero();
                        for ch in 0..classes {
                            denom = denom + (d[s.index(i, ch, 0, strip, 0)] - maxv).exp();
                        }
                        for ch in 0..classes {
                            let z = d[s.index(i, ch, 0, strip, 0)];
                            let softmax = (z - maxv).exp() / denom;
                            let q = if ch == labels[i] { on_true } else { uniform };
                            gd[s.index(i, ch, 0, strip, 0)] = g * (softmax - q);
                        }
                    }
                }
                store.accumulate(logits, grad);
            })
        }))
    }

    /// Unweighted sum of the two loss terms.
    pub fn combined_loss(&mut self, triplet: Var, cross_entropy: Var) -> Result<Var> {
        self.add(triplet, cross_entropy)
    }
}
