//! Fused LSTM cell.

use crate::autograd::{CustomOp, Graph, Var};
use crate::tensor::{sigmoid, Mat};

struct LstmCell {
    hidden: usize,
}

impl CustomOp for LstmCell {
    fn name(&self) -> &'static str {
        "lstm_cell"
    }

    fn backward(&self, inputs: &[&Mat], output: &Mat, grad: &Mat) -> Vec<Option<Mat>> {
        let (pre, c_prev) = (inputs[0], inputs[1]);
        let h = self.hidden;
        let rows = pre.rows;
        let mut g_pre = Mat::zeros(rows, 4 * h);
        let mut g_c = Mat::zeros(rows, h);
        for r in 0..rows {
            let p = pre.row(r);
            let out = output.row(r);
            let go = grad.row(r);
            for j in 0..h {
                let i = sigmoid(p[j]);
                let f = sigmoid(p[h + j]);
                let gg = p[2 * h + j].tanh();
                let o = sigmoid(p[3 * h + j]);
                let c = out[h + j];
                let tc = c.tanh();
                let dh = go[j];
                let dc = go[h + j] + dh * o * (1.0 - tc * tc);
                let gp = g_pre.row_mut(r);
                gp[j] = dc * gg * i * (1.0 - i);
                gp[h + j] = dc * c_prev.get(r, j) * f * (1.0 - f);
                gp[2 * h + j] = dc * i * (1.0 - gg * gg);
                gp[3 * h + j] = dh * tc * o * (1.0 - o);
                g_c.set(r, j, dc * f);
            }
        }
        vec![Some(g_pre), Some(g_c)]
    }
}

/// One LSTM step from gate pre-activations `[B × 4H]` (order i, f, g, o) and
/// the previous cell state; returns `(h, c)`.
pub fn lstm_cell(g: &mut Graph, pre: Var, c_prev: Var) -> (Var, Var) {
    let (p, cp) = (g.value(pre), g.value(c_prev));
    let h = cp.cols;
    assert_eq!(p.cols, 4 * h, "gate width");
    let rows = p.rows;
    let mut out = Mat::zeros(rows, 2 * h);
    for r in 0..rows {
        let pr = p.row(r);
        for j in 0..h {
            let c = sigmoid(pr[h + j]) * cp.get(r, j) + sigmoid(pr[j]) * pr[2 * h + j].tanh();
            out.set(r, j, sigmoid(pr[3 * h + j]) * c.tanh());
            out.set(r, h + j, c);
        }
    }
    let both = g.custom(vec![pre, c_prev], out, Box::new(LstmCell { hidden: h }));
    (g.slice_cols(both, 0, h), g.slice_cols(both, h, h))
}
