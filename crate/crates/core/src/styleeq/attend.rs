//! Multi-head scaled dot-product attention over variable-length frame sets,
//! without positional encoding.

use crate::autograd::{CustomOp, Graph, Var};
use crate::tensor::{softmax_in_place, Mat};

/// Frame layout shared by keys and values: `[(B · t_max) × H·d]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameLayout {
    pub t_max: usize,
    pub lens: Vec<usize>,
}

struct MultiHead {
    heads: usize,
    layout: FrameLayout,
    /// `[B × H·t_max]` softmax weights from the forward pass.
    weights: Mat,
}

fn weights_for(q: &Mat, k: &Mat, heads: usize, layout: &FrameLayout) -> Mat {
    let batch = q.rows;
    let d = q.cols / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let t_max = layout.t_max;
    let mut w = Mat::zeros(batch, heads * t_max);
    let mut scores = Vec::with_capacity(t_max);
    for b in 0..batch {
        let n = layout.lens[b];
        let qr = q.row(b);
        for h in 0..heads {
            scores.clear();
            let qh = &qr[h * d..(h + 1) * d];
            for t in 0..n {
                let kr = &k.row(b * t_max + t)[h * d..(h + 1) * d];
                scores.push(qh.iter().zip(kr).map(|(a, c)| a * c).sum::<f64>() * scale);
            }
            softmax_in_place(&mut scores);
            w.row_mut(b)[h * t_max..h * t_max + n].copy_from_slice(&scores);
        }
    }
    w
}

impl CustomOp for MultiHead {
    fn name(&self) -> &'static str {
        "multi_head_attention"
    }

    fn backward(&self, inputs: &[&Mat], _output: &Mat, grad: &Mat) -> Vec<Option<Mat>> {
        let (q, k, v) = (inputs[0], inputs[1], inputs[2]);
        let heads = self.heads;
        let d = q.cols / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let t_max = self.layout.t_max;
        let (mut gq, mut gk, mut gv) = (Mat::zeros(q.rows, q.cols), Mat::zeros(k.rows, k.cols), Mat::zeros(v.rows, v.cols));
        let mut dw = Vec::with_capacity(t_max);
        for b in 0..q.rows {
            let n = self.layout.lens[b];
            for h in 0..heads {
                let cols = h * d..(h + 1) * d;
                let go = &grad.row(b)[cols.clone()];
                let w = &self.weights.row(b)[h * t_max..h * t_max + n];
                dw.clear();
                for t in 0..n {
                    let vr = &v.row(b * t_max + t)[cols.clone()];
                    dw.push(go.iter().zip(vr).map(|(a, c)| a * c).sum::<f64>());
                    for (gvx, g) in gv.row_mut(b * t_max + t)[cols.clone()].iter_mut().zip(go) {
                        *gvx += w[t] * g;
                    }
                }
                let mean: f64 = w.iter().zip(&dw).map(|(a, c)| a * c).sum();
                for t in 0..n {
                    let ds = w[t] * (dw[t] - mean) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kr = k.row(b * t_max + t)[cols.clone()].to_vec();
                    for (x, kv) in gq.row_mut(b)[cols.clone()].iter_mut().zip(&kr) {
                        *x += ds * kv;
                    }
                    let qh = q.row(b)[cols.clone()].to_vec();
                    for (x, qv) in gk.row_mut(b * t_max + t)[cols.clone()].iter_mut().zip(&qh) {
                        *x += ds * qv;
                    }
                }
            }
        }
        vec![Some(gq), Some(gk), Some(gv)]
    }
}

/// Returns the concatenated head outputs `[B × H·d]` and the per-head
/// weights `[B × H·t_max]` (zero beyond each sequence's length).
pub fn multi_head_attention(
    g: &mut Graph,
    query: Var,
    keys: Var,
    values: Var,
    heads: usize,
    layout: &FrameLayout,
) -> (Var, Mat) {
    let (q, k, v) = (g.value(query), g.value(keys), g.value(values));
    assert_eq!(q.cols % heads, 0);
    assert_eq!(k.rows, q.rows * layout.t_max);
    assert!(layout.lens.iter().all(|&n| n >= 1 && n <= layout.t_max), "every sequence needs >= 1 frame");
    let d = q.cols / heads;
    let w = weights_for(q, k, heads, layout);
    let mut out = Mat::zeros(q.rows, q.cols);
    for b in 0..q.rows {
        for h in 0..heads {
            for t in 0..layout.lens[b] {
                let wt = w.get(b, h * layout.t_max + t);
                let vr = &v.row(b * layout.t_max + t)[h * d..(h + 1) * d];
                for (o, x) in out.row_mut(b)[h * d..(h + 1) * d].iter_mut().zip(vr) {
                    *o += wt * x;
                }
            }
        }
    }
    let op = MultiHead { heads, layout: layout.clone(), weights: w.clone() };
    (g.custom(vec![query, keys, values], out, Box::new(op)), w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::gradcheck;
    use crate::rng::Rng;
    use rand::{Rng as _, SeedableRng};

    fn rand_mat(rng: &mut Rng, r: usize, c: usize) -> Mat {
        Mat::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn single_frame_gets_all_weight() {
        let mut rng = Rng::seed_from_u64(1);
        let layout = FrameLayout { t_max: 1, lens: vec![1] };
        let mut g = Graph::new();
        let q = g.constant(rand_mat(&mut rng, 1, 8));
        let k = g.constant(rand_mat(&mut rng, 1, 8));
        let vm = rand_mat(&mut rng, 1, 8);
        let v = g.constant(vm.clone());
        let (out, w) = multi_head_attention(&mut g, q, k, v, 2, &layout);
        assert_eq!(w.data, vec![1.0, 1.0]);
        assert_eq!(g.value(out), &vm);
    }

    #[test]
    fn weights_are_distributions() {
        let mut rng = Rng::seed_from_u64(2);
        let layout = FrameLayout { t_max: 5, lens: vec![5, 3, 1] };
        let mut g = Graph::new();
        let q = g.constant(rand_mat(&mut rng, 3, 12));
        let k = g.constant(rand_mat(&mut rng, 15, 12));
        let v = g.constant(rand_mat(&mut rng, 15, 12));
        let (_, w) = multi_head_attention(&mut g, q, k, v, 3, &layout);
        for b in 0..3 {
            for h in 0..3 {
                let s: f64 = w.row(b)[h * 5..h * 5 + 5].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(w.row(b)[h * 5 + layout.lens[b]..h * 5 + 5].iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn permuting_frames_permutes_weights() {
        let mut rng = Rng::seed_from_u64(3);
        let layout = FrameLayout { t_max: 4, lens: vec![4] };
        let q = rand_mat(&mut rng, 1, 4);
        let k = rand_mat(&mut rng, 4, 4);
        let perm = [2, 0, 3, 1];
        let kp = Mat::from_rows(&perm.iter().map(|&i| k.row(i).to_vec()).collect::<Vec<_>>());
        let same_v = Mat::from_rows(&vec![vec![0.5, -1.0, 2.0, 0.25]; 4]);
        let mut g = Graph::new();
        let (qv, kv, kpv, vv) = (g.constant(q), g.constant(k), g.constant(kp), g.constant(same_v));
        let (o1, w1) = multi_head_attention(&mut g, qv, kv, vv, 1, &layout);
        let (o2, w2) = multi_head_attention(&mut g, qv, kpv, vv, 1, &layout);
        for (j, &i) in perm.iter().enumerate() {
            assert!((w2.data[j] - w1.data[i]).abs() < 1e-15);
        }
        assert!(g.value(o1).max_abs_diff(g.value(o2)) < 1e-15);
    }

    #[test]
    fn attention_matches_finite_differences() {
        let mut rng = Rng::seed_from_u64(4);
        let layout = FrameLayout { t_max: 4, lens: vec![4, 2] };
        let inputs = [rand_mat(&mut rng, 2, 6), rand_mat(&mut rng, 8, 6), rand_mat(&mut rng, 8, 6)];
        let r = gradcheck::check(&inputs, 1e-6, 1e-10, |g, v| {
            let (o, _) = multi_head_attention(g, v[0], v[1], v[2], 2, &layout);
            g.sum_squares(o)
        });
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }
}
