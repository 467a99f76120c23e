//! Eager reverse-mode differentiation over [`Mat`] values.
//!
//! Every operation computes its value immediately and records enough to
//! replay the chain rule. Nodes that depend on no parameter skip the
//! backward pass entirely, so constants (content one-hots, noise, masks) are
//! free to use.

use crate::tensor::{gemm, sigmoid, swish, swish_grad, Mat};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A fused operation with a hand-written backward pass.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Gradients wrt each input, given the upstream gradient of the output.
    fn backward(&self, inputs: &[&Mat], output: &Mat, grad: &Mat) -> Vec<Option<Mat>>;
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { a: Var, row: Var },
    MulCol { a: Var, col: Var },
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Swish(Var),
    Concat(Vec<Var>),
    Slice { a: Var, start: usize },
    Sum(Var),
    SumSquares(Var),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// The tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.len(), 1);
        m.data[0]
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A value that receives gradients.
    pub fn param(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A value that never receives gradients.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn custom(&mut self, inputs: Vec<Var>, value: Mat, op: Box<dyn CustomOp>) -> Var {
        let ng = self.any_grad(&inputs);
        self.push(value, Op::Custom { inputs, op }, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) · op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        let rows = if ta { am.cols } else { am.rows };
        let cols = if tb { bm.rows } else { bm.cols };
        let mut out = Mat::zeros(rows, cols);
        gemm(1.0, am, ta, bm, tb, 0.0, &mut out);
        let ng = self.any_grad(&[a, b]);
        self.push(out, Op::MatMul { a, b, ta, tb }, ng)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.shape(), bm.shape(), "elementwise shape mismatch");
        let data = am.data.iter().zip(&bm.data).map(|(&x, &y)| f(x, y)).collect();
        let out = Mat::from_vec(am.rows, am.cols, data);
        let ng = self.any_grad(&[a, b]);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (am, rm) = (self.value(a), self.value(row));
        assert_eq!((rm.rows, rm.cols), (1, am.cols), "bias shape mismatch");
        let mut out = am.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&rm.data) {
                *o += b;
            }
        }
        let ng = self.any_grad(&[a, row]);
        self.push(out, Op::AddRow { a, row }, ng)
    }

    /// Scales row `r` of `a` by `col[r]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (am, cm) = (self.value(a), self.value(col));
        assert_eq!((cm.rows, cm.cols), (am.rows, 1), "column shape mismatch");
        let mut out = am.clone();
        for r in 0..out.rows {
            let s = cm.data[r];
            for o in out.row_mut(r) {
                *o *= s;
            }
        }
        let ng = self.any_grad(&[a, col]);
        self.push(out, Op::MulCol { a, col }, ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        let ng = self.nodes[a.0].needs_grad;
        self.push(out, op, ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn swish(&mut self, a: Var) -> Var {
        self.unary(a, swish, Op::Swish(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows, rows, "concat row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + m.cols].copy_from_slice(m.row(r));
            }
            off += m.cols;
        }
        let ng = self.any_grad(parts);
        self.push(out, Op::Concat(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice_cols(start, len);
        let ng = self.nodes[a.0].needs_grad;
        self.push(out, Op::Slice { a, start }, ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Mat::filled(1, 1, self.value(a).sum());
        let ng = self.nodes[a.0].needs_grad;
        self.push(out, Op::Sum(a), ng)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let out = Mat::filled(1, 1, self.value(a).sum_squares());
        let ng = self.nodes[a.0].needs_grad;
        self.push(out, Op::SumSquares(a), ng)
    }

    /// `x · W + b` for a batch `x` of rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward requires a scalar root");
        let mut grads: Vec<Option<Mat>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Mat::filled(1, 1, 1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        let want = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (am, bm) = (self.value(*a), self.value(*b));
                if want(*a) {
                    // d op(a) = g · op(b)^T
                    let mut ga = Mat::zeros(am.rows, am.cols);
                    if *ta {
                        gemm(1.0, bm, *tb, g, true, 0.0, &mut ga);
                    } else {
                        gemm(1.0, g, false, bm, !*tb, 0.0, &mut ga);
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                if want(*b) {
                    // d op(b) = op(a)^T · g
                    let mut gb = Mat::zeros(bm.rows, bm.cols);
                    if *tb {
                        gemm(1.0, g, true, am, *ta, 0.0, &mut gb);
                    } else {
                        gemm(1.0, am, !*ta, g, false, 0.0, &mut gb);
                    }
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::Add(a, b) => {
                if want(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if want(*b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if want(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if want(*b) {
                    accumulate(&mut grads[b.0], g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                if want(*a) {
                    let data = g.data.iter().zip(&bm.data).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads[a.0], Mat::from_vec(g.rows, g.cols, data));
                }
                if want(*b) {
                    let data = g.data.iter().zip(&am.data).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads[b.0], Mat::from_vec(g.rows, g.cols, data));
                }
            }
            Op::AddRow { a, row } => {
                if want(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if want(*row) {
                    let mut gr = Mat::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, x) in gr.data.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads[row.0], gr);
                }
            }
            Op::MulCol { a, col } => {
                let (am, cm) = (self.value(*a), self.value(*col));
                if want(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows {
                        let s = cm.data[r];
                        for x in ga.row_mut(r) {
                            *x *= s;
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                if want(*col) {
                    let mut gc = Mat::zeros(cm.rows, 1);
                    for r in 0..g.rows {
                        gc.data[r] = g.row(r).iter().zip(am.row(r)).map(|(x, y)| x * y).sum();
                    }
                    accumulate(&mut grads[col.0], gc);
                }
            }
            Op::Scale(a, s) => accumulate(&mut grads[a.0], g.map(|x| x * s)),
            Op::Sigmoid(a) => {
                let data = g.data.iter().zip(&node.value.data).map(|(x, y)| x * y * (1.0 - y)).collect();
                accumulate(&mut grads[a.0], Mat::from_vec(g.rows, g.cols, data));
            }
            Op::Tanh(a) => {
                let data = g.data.iter().zip(&node.value.data).map(|(x, y)| x * (1.0 - y * y)).collect();
                accumulate(&mut grads[a.0], Mat::from_vec(g.rows, g.cols, data));
            }
            Op::Exp(a) => {
                let data = g.data.iter().zip(&node.value.data).map(|(x, y)| x * y).collect();
                accumulate(&mut grads[a.0], Mat::from_vec(g.rows, g.cols, data));
            }
            Op::Swish(a) => {
                let am = self.value(*a);
                let data = g.data.iter().zip(&am.data).map(|(x, y)| x * swish_grad(*y)).collect();
                accumulate(&mut grads[a.0], Mat::from_vec(g.rows, g.cols, data));
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let cols = self.value(*p).cols;
                    if want(*p) {
                        accumulate(&mut grads[p.0], g.slice_cols(off, cols));
                    }
                    off += cols;
                }
            }
            Op::Slice { a, start } => {
                let am = self.value(*a);
                let mut ga = Mat::zeros(am.rows, am.cols);
                for r in 0..g.rows {
                    ga.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::Sum(a) => {
                let am = self.value(*a);
                accumulate(&mut grads[a.0], Mat::filled(am.rows, am.cols, g.data[0]));
            }
            Op::SumSquares(a) => {
                let s = 2.0 * g.data[0];
                accumulate(&mut grads[a.0], self.value(*a).map(|x| s * x));
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Mat> = inputs.iter().map(|&v| self.value(v)).collect();
                let gs = op.backward(&vals, &node.value, g);
                debug_assert_eq!(gs.len(), inputs.len(), "{} returned wrong arity", op.name());
                for (v, gi) in inputs.iter().zip(gs) {
                    if let (true, Some(gi)) = (want(*v), gi) {
                        accumulate(&mut grads[v.0], gi);
                    }
                }
            }
        }
    }
}

/// Finite-difference gradient checking.
///
/// The oracle only ever evaluates forward values, so it stays independent of
/// the backward code it validates.
pub mod gradcheck {
    use super::*;

    /// Report of one check.
    #[derive(Clone, Debug)]
    pub struct GradCheck {
        pub max_rel_err: f64,
        pub max_abs_err: f64,
        pub checked: usize,
    }

    /// Compares analytic gradients of `f` wrt every entry of `inputs` with
    /// central differences of step `h`. The relative error of one entry is
    /// `|a − n| / max(|a| + |n|, floor)`.
    pub fn check(
        inputs: &[Mat],
        h: f64,
        floor: f64,
        f: impl Fn(&mut Graph, &[Var]) -> Var,
    ) -> GradCheck {
        let coords: Vec<(usize, usize)> = inputs
            .iter()
            .enumerate()
            .flat_map(|(i, m)| (0..m.len()).map(move |j| (i, j)))
            .collect();
        check_subset(inputs, &coords, h, floor, f)
    }

    /// As [`check`], restricted to the listed `(input, flat index)` entries.
    pub fn check_subset(
        inputs: &[Mat],
        coords: &[(usize, usize)],
        h: f64,
        floor: f64,
        f: impl Fn(&mut Graph, &[Var]) -> Var,
    ) -> GradCheck {
        let eval = |vals: &[Mat]| -> f64 {
            let mut g = Graph::new();
            let vars: Vec<Var> = vals.iter().map(|m| g.param(m.clone())).collect();
            let out = f(&mut g, &vars);
            g.scalar(out)
        };
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|m| g.param(m.clone())).collect();
        let out = f(&mut g, &vars);
        let grads = g.backward(out);
        let mut report = GradCheck { max_rel_err: 0.0, max_abs_err: 0.0, checked: 0 };
        let mut work: Vec<Mat> = inputs.to_vec();
        for &(i, j) in coords {
            let orig = work[i].data[j];
            work[i].data[j] = orig + h;
            let plus = eval(&work);
            work[i].data[j] = orig - h;
            let minus = eval(&work);
            work[i].data[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads.get(vars[i]).map_or(0.0, |m| m.data[j]);
            let abs = (analytic - numeric).abs();
            let rel = abs / (analytic.abs() + numeric.abs()).max(floor);
            report.max_abs_err = report.max_abs_err.max(abs);
            report.max_rel_err = report.max_rel_err.max(rel);
            report.checked += 1;
        }
        report
    }
}

#[cfg(test)]
mod tests {
    use super::gradcheck::check;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn builtin_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs = vec![
            rand_mat(&mut rng, 3, 4),
            rand_mat(&mut rng, 4, 5),
            rand_mat(&mut rng, 1, 5),
            rand_mat(&mut rng, 3, 1),
            rand_mat(&mut rng, 5, 4),
        ];
        let r = check(&inputs, 1e-5, 1e-8, |g, v| {
            let l = g.linear(v[0], v[1], v[2]);
            let s = g.swish(l);
            let t = g.tanh(s);
            let m = g.mul_col(t, v[3]);
            let sig = g.sigmoid(m);
            let e = g.exp(sig);
            let prod = g.mul(e, t);
            let sl = g.slice_cols(prod, 1, 3);
            let cat = g.concat_cols(&[sl, m]);
            let back = g.matmul_t(v[4], true, v[1], true);
            let bsum = g.sum_squares(back);
            let d = g.sub(cat, cat);
            let d = g.add(d, cat);
            let sc = g.scale(d, 0.7);
            let a = g.sum_squares(sc);
            let b = g.sum(sc);
            let ab = g.add(a, b);
            g.add(ab, bsum)
        });
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Mat::filled(2, 2, 1.0));
        let p = g.param(Mat::filled(2, 2, 2.0));
        let m = g.mul(c, p);
        let s = g.sum(m);
        let grads = g.backward(s);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap().data, vec![1.0; 4]);
    }
}
