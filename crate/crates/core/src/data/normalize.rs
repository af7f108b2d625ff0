//! Frame normalization to 64x44: crop to the subject's vertical extent,
//! rescale so the height fills all 64 rows (aspect preserved, nearest
//! neighbor), then cut a 44-column window centered on the horizontal center
//! of mass. One pass can shift the extents by a pixel through resampling, so
//! the pass is iterated to a fixed point; the result is idempotent per pixel.

use super::{Frame, SilhouetteSequence, FRAME_H, FRAME_W};
use crate::error::{Error, Result};

fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Rows [top, bottom] containing foreground, or None for an empty frame.
fn vertical_extent(frame: &Frame) -> Option<(usize, usize)> {
    let mut top = None;
    let mut bottom = None;
    for r in 0..frame.h {
        if (0..frame.w).any(|c| frame.get(r, c) != 0) {
            if top.is_none() {
                top = Some(r);
            }
            bottom = Some(r);
        }
    }
    Some((top?, bottom?))
}

/// Column center of mass of the foreground.
fn center_of_mass_col(frame: &Frame) -> f64 {
    let mut count = 0usize;
    let mut sum = 0usize;
    for r in 0..frame.h {
        for c in 0..frame.w {
            if frame.get(r, c) != 0 {
                count += 1;
                sum += c;
            }
        }
    }
    sum as f64 / count as f64
}

fn normalize_pass(frame: &Frame) -> Option<Frame> {
    let (top, bottom) = vertical_extent(frame)?;
    let crop_h = bottom - top + 1;
    // Nearest-neighbor rescale so the cropped rows fill FRAME_H; the column
    // axis is scaled by the same factor to preserve aspect ratio. Endpoints
    // are pinned (align-corners) so the extremal rows stay occupied.
    let scale = FRAME_H as f64 / crop_h as f64;
    let new_w = ((frame.w as f64 * scale).round() as usize).max(1);
    let sample_row = |r: usize| -> usize {
        if FRAME_H == 1 {
            return top;
        }
        let pos = r as f64 * (crop_h - 1) as f64 / (FRAME_H - 1) as f64;
        top + round_half_up(pos).clamp(0, crop_h as i64 - 1) as usize
    };
    let sample_col = |c: usize| -> usize {
        if new_w == 1 {
            return 0;
        }
        let pos = c as f64 * (frame.w - 1) as f64 / (new_w - 1) as f64;
        round_half_up(pos).clamp(0, frame.w as i64 - 1) as usize
    };
    let mut scaled = Frame::new(FRAME_H, new_w);
    for r in 0..FRAME_H {
        let src_r = sample_row(r);
        for c in 0..new_w {
            // Binary input, nearest sampling: already 0/1, no re-threshold
            // needed beyond the loader's 0.5 cut.
            scaled.set(r, c, frame.get(src_r, sample_col(c)));
        }
    }
    if scaled.is_empty_frame() {
        return None;
    }

    let com = center_of_mass_col(&scaled);
    let start = round_half_up(com) - (FRAME_W as i64 / 2);
    let mut out = Frame::new(FRAME_H, FRAME_W);
    for r in 0..FRAME_H {
        for c in 0..FRAME_W {
            let src = start + c as i64;
            if src >= 0 && (src as usize) < new_w {
                out.set(r, c, scaled.get(r, src as usize));
            }
        }
    }
    if out.is_empty_frame() {
        return None;
    }
    Some(out)
}

/// Normalize one raw binary frame; `None` when no foreground survives.
pub fn normalize_frame(frame: &Frame) -> Option<Frame> {
    let mut current = normalize_pass(frame)?;
    for _ in 0..8 {
        let next = normalize_pass(&current)?;
        if next == current {
            return Some(current);
        }
        current = next;
    }
    log::warn!("frame normalization did not reach a fixed point after 8 passes");
    Some(current)
}

/// Normalize a whole sequence, dropping empty frames with a warning;
/// rejects the sequence when nothing survives.
pub fn normalize_sequence(
    subject: &str,
    condition: &str,
    view: u16,
    raw_frames: &[Frame],
) -> Result<SilhouetteSequence> {
    let mut frames = Vec::with_capacity(raw_frames.len());
    let mut dropped = 0usize;
    for f in raw_frames {
        match normalize_frame(f) {
            Some(n) => frames.push(n),
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("{subject}/{condition}/{view:03}: dropped {dropped} empty frame(s)");
    }
    if frames.is_empty() {
        return Err(Error::Data(format!(
            "{subject}/{condition}/{view:03}: all frames empty after normalization"
        )));
    }
    Ok(SilhouetteSequence {
        subject: subject.to_string(),
        condition: condition.to_string(),
        view,
        frames,
    })
}
