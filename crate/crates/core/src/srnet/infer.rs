//! Long-fiber inference: tile the frame into fixed-width windows,
//! keep only edge-unaffected center outputs, stitch, denormalize.

use super::model::Model;
use crate::autodiff::{Shape, Tensor};
use crate::dataset::{denormalize_bfs, BfsTrace};
use crate::error::{Error, Result};
use crate::physics::BgsFrame;

/// Run the network over a normalized frame of any width at or above
/// the configured window, producing a BFS trace in Hz.
///
/// The frame is edge-replicated by the configured margin, covered by
/// windows advancing `window - 2·margin` columns at a time (the final
/// window is back-aligned), and each window contributes only its
/// center columns.
pub fn infer_long(model: &Model, frame: &BgsFrame, bfs_range_hz: (f64, f64)) -> Result<BfsTrace> {
    infer_long_with_stride(model, frame, bfs_range_hz, model.config.window_stride())
}

/// [`infer_long`] with an explicit stitching stride (smaller strides
/// re-evaluate overlapping windows; used for consistency checks).
pub fn infer_long_with_stride(
    model: &Model,
    frame: &BgsFrame,
    bfs_range_hz: (f64, f64),
    stride: usize,
) -> Result<BfsTrace> {
    if !(bfs_range_hz.0 < bfs_range_hz.1) {
        return Err(Error::InvalidInput("empty bfs range".into()));
    }
    if !frame.normalized {
        return Err(Error::InvalidInput(
            "inference expects a peak-normalized frame".into(),
        ));
    }
    let window = model.config.infer_window;
    let margin = model.config.edge_margin;
    if stride == 0 || stride > window - 2 * margin {
        return Err(Error::InvalidInput(format!(
            "stride must be in 1..={}",
            window - 2 * margin
        )));
    }
    let width = frame.n_cols();
    if width < window {
        return Err(Error::InvalidInput(format!(
            "frame width {width} below inference window {window}"
        )));
    }
    let nf = frame.n_freq();
    if nf != model.config.input_freq {
        return Err(Error::ShapeMismatch(format!(
            "frame has {nf} frequencies, model expects {}",
            model.config.input_freq
        )));
    }
    // edge-replicated frame, padded by `margin` columns per side
    let padded_width = width + 2 * margin;
    let mut padded = vec![0.0f32; nf * padded_width];
    for f in 0..nf {
        let row = frame.row(f);
        let dst = &mut padded[f * padded_width..(f + 1) * padded_width];
        for (k, slot) in dst.iter_mut().enumerate() {
            let src = (k as i64 - margin as i64).clamp(0, width as i64 - 1) as usize;
            *slot = row[src] as f32;
        }
    }
    let mut out = vec![f64::NAN; width];
    let mut filled = vec![false; width];
    let mut offset = 0usize;
    loop {
        let start = offset.min(padded_width - window);
        let mut x = Vec::with_capacity(nf * window);
        for f in 0..nf {
            x.extend_from_slice(&padded[f * padded_width + start..f * padded_width + start + window]);
        }
        let x = Tensor::from_vec(Shape([1, 1, nf, window]), x)?;
        let pred = model.forward_eval(&x)?;
        for col in margin..window - margin {
            let padded_col = start + col;
            let orig = padded_col as i64 - margin as i64;
            if orig >= 0 && (orig as usize) < width && !filled[orig as usize] {
                let value = pred.data()[col] as f64;
                out[orig as usize] = denormalize_bfs(value.clamp(0.0, 1.0), bfs_range_hz);
                filled[orig as usize] = true;
            }
        }
        if filled.iter().all(|&f| f) {
            break;
        }
        if start == padded_width - window {
            return Err(Error::Numeric("stitching failed to cover the frame".into()));
        }
        offset += stride;
    }
    BfsTrace::new(out, frame.spatial_pitch)
}
