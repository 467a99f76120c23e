//! Monotone Gaussian-window attention over the content sequence.
//!
//! With `K` windows, a linear map of the bottom state yields `(α̂, β̂, κ̂)`;
//! `α = exp α̂`, `β = exp β̂`, `κ = κ_prev + exp κ̂` and the weight of content
//! position `u ∈ 1..=N` is `Σ_k α_k exp(−β_k (κ_k − u)²)`. The window centres
//! can only move forward.

use crate::autograd::{CustomOp, Graph, Var};
use crate::tensor::Mat;

/// Weights for one row.
pub fn window_weights(alpha_hat: &[f64], beta_hat: &[f64], kappa: &[f64], n: usize) -> Vec<f64> {
    (1..=n)
        .map(|u| {
            let u = u as f64;
            alpha_hat
                .iter()
                .zip(beta_hat)
                .zip(kappa)
                .map(|((&a, &b), &k)| (a - b.exp() * (k - u) * (k - u)).exp())
                .sum()
        })
        .collect()
}

struct GaussWindow {
    n: usize,
}

impl CustomOp for GaussWindow {
    fn name(&self) -> &'static str {
        "gauss_window"
    }

    fn backward(&self, inputs: &[&Mat], _output: &Mat, grad: &Mat) -> Vec<Option<Mat>> {
        let (ah, bh, kp) = (inputs[0], inputs[1], inputs[2]);
        let (rows, k) = ah.shape();
        let (mut ga, mut gb, mut gk) = (Mat::zeros(rows, k), Mat::zeros(rows, k), Mat::zeros(rows, k));
        for r in 0..rows {
            for j in 0..k {
                let (a, beta, kap) = (ah.get(r, j), bh.get(r, j).exp(), kp.get(r, j));
                let (mut sa, mut sb, mut sk) = (0.0, 0.0, 0.0);
                for u in 1..=self.n {
                    let d = kap - u as f64;
                    let e = (a - beta * d * d).exp() * grad.get(r, u - 1);
                    sa += e;
                    sb -= e * beta * d * d;
                    sk -= e * 2.0 * beta * d;
                }
                ga.set(r, j, sa);
                gb.set(r, j, sb);
                gk.set(r, j, sk);
            }
        }
        vec![Some(ga), Some(gb), Some(gk)]
    }
}

/// `[B × N]` window weights from `[B × K]` inputs.
pub fn gauss_window(g: &mut Graph, alpha_hat: Var, beta_hat: Var, kappa: Var, n: usize) -> Var {
    let (a, b, k) = (g.value(alpha_hat), g.value(beta_hat), g.value(kappa));
    let rows = a.rows;
    let mut out = Mat::zeros(rows, n);
    for r in 0..rows {
        out.row_mut(r).copy_from_slice(&window_weights(a.row(r), b.row(r), k.row(r), n));
    }
    g.custom(vec![alpha_hat, beta_hat, kappa], out, Box::new(GaussWindow { n }))
}

/// Content one-hots of a batch, padded with zero rows to a common length.
#[derive(Clone, Debug)]
pub struct BatchContent {
    /// `[(B · N) × V]`, row `b·N + u` is position `u` of sequence `b`.
    pub rows: Mat,
    pub max_len: usize,
    pub lens: Vec<usize>,
}

impl BatchContent {
    pub fn new(one_hots: &[Mat]) -> Self {
        let max_len = one_hots.iter().map(|m| m.rows).max().unwrap_or(0);
        let v = one_hots.first().map_or(0, |m| m.cols);
        let mut rows = Mat::zeros(one_hots.len() * max_len, v);
        for (b, m) in one_hots.iter().enumerate() {
            rows.data[b * max_len * v..(b * max_len + m.rows) * v].copy_from_slice(&m.data);
        }
        Self { rows, max_len, lens: one_hots.iter().map(|m| m.rows).collect() }
    }

    pub fn batch(&self) -> usize {
        self.lens.len()
    }

    pub fn width(&self) -> usize {
        self.rows.cols
    }
}

struct AttendContent {
    content: Mat,
    n: usize,
}

impl CustomOp for AttendContent {
    fn name(&self) -> &'static str {
        "attend_content"
    }

    fn backward(&self, _inputs: &[&Mat], _output: &Mat, grad: &Mat) -> Vec<Option<Mat>> {
        let rows = grad.rows;
        let v = self.content.cols;
        let mut gw = Mat::zeros(rows, self.n);
        for b in 0..rows {
            for u in 0..self.n {
                let c = self.content.row(b * self.n + u);
                gw.set(b, u, (0..v).map(|i| grad.get(b, i) * c[i]).sum());
            }
        }
        vec![Some(gw)]
    }
}

/// `a_b = Σ_u w[b, u] · c_{b,u}`.
pub fn attend_content(g: &mut Graph, weights: Var, content: &BatchContent) -> Var {
    let w = g.value(weights);
    let (rows, n, v) = (w.rows, content.max_len, content.width());
    assert_eq!(w.cols, n);
    let mut out = Mat::zeros(rows, v);
    for b in 0..rows {
        for u in 0..n {
            let wu = w.get(b, u);
            if wu == 0.0 {
                continue;
            }
            let c = content.rows.row(b * n + u);
            for (o, ci) in out.row_mut(b).iter_mut().zip(c) {
                *o += wu * ci;
            }
        }
    }
    g.custom(vec![weights], out, Box::new(AttendContent { content: content.rows.clone(), n }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::gradcheck;
    use crate::rng::Rng;
    use rand::{Rng as _, SeedableRng};

    #[test]
    fn sharp_window_selects_one_position() {
        let w = window_weights(&[0.0], &[1e4f64.ln()], &[3.0], 5);
        assert!((w[2] - 1.0).abs() < 1e-12);
        for (i, v) in w.iter().enumerate() {
            if i != 2 {
                assert!(*v < 1e-300);
            }
        }
        let content = BatchContent::new(&[Mat::identity(5)]);
        let mut g = Graph::new();
        let wv = g.constant(Mat::row_vector(w));
        let a = attend_content(&mut g, wv, &content);
        assert!((g.value(a).data[2] - 1.0).abs() < 1e-12);
        assert!(g.value(a).data.iter().enumerate().all(|(i, v)| i == 2 || v.abs() < 1e-300));
    }

    #[test]
    fn vanishing_alpha_zeroes_attention() {
        let w = window_weights(&[-800.0, -800.0], &[0.0, 0.0], &[1.0, 2.0], 4);
        assert!(w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn padded_positions_contribute_nothing() {
        let c = BatchContent::new(&[Mat::identity(4).slice_rows(0, 2), Mat::identity(4)]);
        let mut g = Graph::new();
        let w = g.constant(Mat::filled(2, 4, 1.0));
        let a = attend_content(&mut g, w, &c);
        assert_eq!(g.value(a).row(0), &[1.0, 1.0, 0.0, 0.0][..]);
    }

    #[test]
    fn window_and_content_ops_match_finite_differences() {
        let mut rng = Rng::seed_from_u64(12);
        let mk = |r: &mut Rng, lo: f64, hi: f64| Mat::from_vec(2, 3, (0..6).map(|_| r.random_range(lo..hi)).collect());
        let inputs = [mk(&mut rng, -1.0, 1.0), mk(&mut rng, -1.0, 0.5), mk(&mut rng, 0.0, 4.0)];
        let oh: Vec<Mat> = (0..2).map(|_| Mat::from_vec(4, 3, (0..12).map(|_| rng.random_range(0.0..1.0)).collect())).collect();
        let content = BatchContent::new(&oh);
        let r = gradcheck::check(&inputs, 1e-6, 1e-10, |g, v| {
            let w = gauss_window(g, v[0], v[1], v[2], 4);
            let a = attend_content(g, w, &content);
            let s1 = g.sum_squares(a);
            let s2 = g.sum(w);
            g.add(s1, s2)
        });
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }
}
