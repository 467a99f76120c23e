//! Anti-aliased strided 1-D convolutions over padded batches.
//!
//! A batch of `B` sequences is stored as `[(B · L) × C]`, sequence `b`
//! occupying rows `b·L .. b·L + len_b`. Because no layer pads, the first
//! `len'_b` outputs of a sequence only ever read its own valid rows, so the
//! padding never leaks into valid frames.

use serde::{Deserialize, Serialize};

use crate::autograd::{CustomOp, Graph, Var};
use crate::tensor::Mat;

/// The fixed low-pass kernel `[1, 3, 3, 1] / 8`.
pub const BLUR_KERNEL: [f64; 4] = [0.125, 0.375, 0.375, 0.125];
pub const CONV_KERNEL: usize = 3;
pub const CONV_STRIDE: usize = 2;

/// One layer of a conv stack, for receptive-field bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    /// Taps of the stride-1 low-pass filter before the conv, if any.
    pub blur_taps: Option<usize>,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvLayerSpec {
    pub const BLURRED: Self = Self { blur_taps: Some(4), kernel: CONV_KERNEL, stride: CONV_STRIDE };

    pub fn output_len(&self, len: usize) -> Option<usize> {
        let after_blur = len.checked_sub(self.blur_taps.map_or(0, |t| t - 1))?;
        let span = after_blur.checked_sub(self.kernel)?;
        Some(span / self.stride + 1)
    }
}

/// Input samples seen by one output frame.
pub fn receptive_field(layers: &[ConvLayerSpec]) -> usize {
    let (mut field, mut jump) = (1, 1);
    for l in layers {
        if let Some(t) = l.blur_taps {
            field += (t - 1) * jump;
        }
        field += (l.kernel - 1) * jump;
        jump *= l.stride;
    }
    field
}

/// Output length of a stack, or `None` if the input is too short.
pub fn stack_output_len(layers: &[ConvLayerSpec], len: usize) -> Option<usize> {
    layers.iter().try_fold(len, |l, spec| spec.output_len(l).filter(|&n| n >= 1))
}

/// Shortest input producing one output frame.
pub fn min_input_len(layers: &[ConvLayerSpec]) -> usize {
    (1..).find(|&n| stack_output_len(layers, n).is_some()).expect("some length works")
}

struct Blur {
    batch: usize,
    len: usize,
}

impl CustomOp for Blur {
    fn name(&self) -> &'static str {
        "blur"
    }

    fn backward(&self, inputs: &[&Mat], _output: &Mat, grad: &Mat) -> Vec<Option<Mat>> {
        let c = inputs[0].cols;
        let out_len = self.len - 3;
        let mut gx = Mat::zeros(self.batch * self.len, c);
        for b in 0..self.batch {
            for t in 0..out_len {
                let go = grad.row(b * out_len + t);
                for (j, w) in BLUR_KERNEL.iter().enumerate() {
                    let row = gx.row_mut(b * self.len + t + j);
                    for (x, g) in row.iter_mut().zip(go) {
                        *x += w * g;
                    }
                }
            }
        }
        vec![Some(gx)]
    }
}

/// Valid stride-1 low-pass filtering along time: `L → L − 3` per sequence.
pub fn blur(g: &mut Graph, x: Var, batch: usize, len: usize) -> Var {
    let xm = g.value(x);
    assert_eq!(xm.rows, batch * len);
    assert!(len >= 4, "blur needs at least 4 rows per sequence");
    let c = xm.cols;
    let out_len = len - 3;
    let mut out = Mat::zeros(batch * out_len, c);
    for b in 0..batch {
        for t in 0..out_len {
            let o = out.row_mut(b * out_len + t);
            for (j, w) in BLUR_KERNEL.iter().enumerate() {
                for (y, v) in o.iter_mut().zip(xm.row(b * len + t + j)) {
                    *y += w * v;
                }
            }
        }
    }
    g.custom(vec![x], out, Box::new(Blur { batch, len }))
}

struct Im2Col {
    batch: usize,
    len: usize,
    out_len: usize,
}

impl CustomOp for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn backward(&self, inputs: &[&Mat], _output: &Mat, grad: &Mat) -> Vec<Option<Mat>> {
        let c = inputs[0].cols;
        let mut gx = Mat::zeros(self.batch * self.len, c);
        for b in 0..self.batch {
            for t in 0..self.out_len {
                let go = grad.row(b * self.out_len + t);
                for j in 0..CONV_KERNEL {
                    let row = gx.row_mut(b * self.len + CONV_STRIDE * t + j);
                    for (x, g) in row.iter_mut().zip(&go[j * c..(j + 1) * c]) {
                        *x += g;
                    }
                }
            }
        }
        vec![Some(gx)]
    }
}

/// Gathers kernel-3, stride-2 windows: `[(B·L) × C] → [(B·L') × 3C]`.
pub fn im2col(g: &mut Graph, x: Var, batch: usize, len: usize) -> (Var, usize) {
    let xm = g.value(x);
    assert_eq!(xm.rows, batch * len);
    assert!(len >= CONV_KERNEL);
    let c = xm.cols;
    let out_len = (len - CONV_KERNEL) / CONV_STRIDE + 1;
    let mut out = Mat::zeros(batch * out_len, CONV_KERNEL * c);
    for b in 0..batch {
        for t in 0..out_len {
            let o = out.row_mut(b * out_len + t);
            for j in 0..CONV_KERNEL {
                o[j * c..(j + 1) * c].copy_from_slice(xm.row(b * len + CONV_STRIDE * t + j));
            }
        }
    }
    (g.custom(vec![x], out, Box::new(Im2Col { batch, len, out_len })), out_len)
}
