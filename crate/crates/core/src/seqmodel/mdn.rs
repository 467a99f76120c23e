//! Bivariate Gaussian mixture head with pen and stop Bernoullis.
//!
//! Raw head layout for `M` components (width `6M + 2`):
//! `[π̂ (M) | μx (M) | μy (M) | log σx (M) | log σy (M) | ρ̂ (M) | ê | q̂]`,
//! squashed by softmax, identity, exp, tanh and sigmoid respectively.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autograd::{CustomOp, Graph, Var};
use crate::error::{Error, Result};
use crate::rng::{normal, Rng};
use crate::tensor::{log_sum_exp, sigmoid, softplus, Mat};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn head_width(num_mixtures: usize) -> usize {
    6 * num_mixtures + 2
}

/// Parameters of `p(x_t | ·)` for one sequence position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputDistParams {
    pub pi: Vec<f64>,
    pub mu: Vec<[f64; 2]>,
    pub sigma: Vec<[f64; 2]>,
    pub rho: Vec<f64>,
    pub pen_prob: f64,
    pub stop_prob: f64,
}

/// `ln cosh x`, stable for large `|x|`.
fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl OutputDistParams {
    pub fn from_raw(raw: &[f64], m: usize) -> Self {
        assert_eq!(raw.len(), head_width(m), "raw head width");
        let mut pi = raw[..m].to_vec();
        crate::tensor::softmax_in_place(&mut pi);
        Self {
            pi,
            mu: (0..m).map(|j| [raw[m + j], raw[2 * m + j]]).collect(),
            sigma: (0..m).map(|j| [raw[3 * m + j].exp(), raw[4 * m + j].exp()]).collect(),
            rho: (0..m).map(|j| raw[5 * m + j].tanh()).collect(),
            pen_prob: sigmoid(raw[6 * m]),
            stop_prob: sigmoid(raw[6 * m + 1]),
        }
    }

    pub fn num_mixtures(&self) -> usize {
        self.pi.len()
    }

    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.pi.iter().sum();
        if (total - 1.0).abs() > 1e-6 || self.pi.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::invalid(format!("mixture weights do not form a simplex (sum {total})")));
        }
        if self.sigma.iter().flatten().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("mixture standard deviations must be positive"));
        }
        if self.rho.iter().any(|&r| !(r.abs() < 1.0)) {
            return Err(Error::invalid("mixture correlations must lie in (-1, 1)"));
        }
        for (name, p) in [("pen", self.pen_prob), ("stop", self.stop_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn bernoulli_log(p: f64, bit: bool) -> f64 {
    if bit {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

/// Bivariate normal log density.
fn log_n2(x: [f64; 2], mu: [f64; 2], sigma: [f64; 2], rho: f64) -> f64 {
    let zx = (x[0] - mu[0]) / sigma[0];
    let zy = (x[1] - mu[1]) / sigma[1];
    let one_m = 1.0 - rho * rho;
    let z = zx * zx + zy * zy - 2.0 * rho * zx * zy;
    -LN_2PI - sigma[0].ln() - sigma[1].ln() - 0.5 * one_m.ln() - z / (2.0 * one_m)
}

/// `log p(x)` for an offset `(dx, dy)`, pen bit and stop bit.
pub fn output_log_prob(dist: &OutputDistParams, x: [f64; 3], is_last: bool) -> Result<f64> {
    dist.validate()?;
    if !(x[2] == 0.0 || x[2] == 1.0) {
        return Err(Error::invalid(format!("pen value {} is not 0 or 1", x[2])));
    }
    let terms: Vec<f64> = (0..dist.num_mixtures())
        .map(|j| dist.pi[j].ln() + log_n2([x[0], x[1]], dist.mu[j], dist.sigma[j], dist.rho[j]))
        .collect();
    Ok(log_sum_exp(&terms) + bernoulli_log(dist.pen_prob, x[2] == 1.0) + bernoulli_log(dist.stop_prob, is_last))
}

/// Negative log probability straight from raw head outputs, writing
/// `∂(−log p)/∂raw` into `grad`.
pub fn nll_raw(raw: &[f64], m: usize, x: [f64; 3], is_last: bool, grad: &mut [f64]) -> f64 {
    debug_assert_eq!(raw.len(), head_width(m));
    let logits = &raw[..m];
    let lse_pi = log_sum_exp(logits);
    let mut comp = vec![0.0; m];
    let mut aux = vec![(0.0, 0.0, 0.0, 0.0); m]; // (zx, zy, rho, 1 - rho²)
    for j in 0..m {
        let (mx, my) = (raw[m + j], raw[2 * m + j]);
        let (lsx, lsy) = (raw[3 * m + j], raw[4 * m + j]);
        let rr = raw[5 * m + j];
        let rho = rr.tanh();
        let log_one_m = -2.0 * ln_cosh(rr);
        let one_m = log_one_m.exp();
        let zx = (x[0] - mx) * (-lsx).exp();
        let zy = (x[1] - my) * (-lsy).exp();
        let z = zx * zx + zy * zy - 2.0 * rho * zx * zy;
        let log_n = -LN_2PI - lsx - lsy - 0.5 * log_one_m - z / (2.0 * one_m);
        comp[j] = logits[j] - lse_pi + log_n;
        aux[j] = (zx, zy, rho, one_m);
    }
    let lse = log_sum_exp(&comp);
    for j in 0..m {
        let gamma = (comp[j] - lse).exp();
        let pi = (logits[j] - lse_pi).exp();
        let (zx, zy, rho, one_m) = aux[j];
        let (sx, sy) = (raw[3 * m + j].exp(), raw[4 * m + j].exp());
        let z = zx * zx + zy * zy - 2.0 * rho * zx * zy;
        grad[j] = pi - gamma;
        grad[m + j] = -gamma * (zx - rho * zy) / (sx * one_m);
        grad[2 * m + j] = -gamma * (zy - rho * zx) / (sy * one_m);
        grad[3 * m + j] = -gamma * (-1.0 + zx * (zx - rho * zy) / one_m);
        grad[4 * m + j] = -gamma * (-1.0 + zy * (zy - rho * zx) / one_m);
        grad[5 * m + j] = -gamma * (rho + zx * zy - rho * z / one_m);
    }
    let (e, q) = (raw[6 * m], raw[6 * m + 1]);
    let pen = x[2] == 1.0;
    // −log σ(a) = softplus(−a); −log(1 − σ(a)) = softplus(a)
    let pen_nll = if pen { softplus(-e) } else { softplus(e) };
    let stop_nll = if is_last { softplus(-q) } else { softplus(q) };
    grad[6 * m] = sigmoid(e) - f64::from(u8::from(pen));
    grad[6 * m + 1] = sigmoid(q) - f64::from(u8::from(is_last));
    -lse + pen_nll + stop_nll
}

/// Row-wise negative log likelihood of targets under a raw head batch.
struct MixtureNll {
    m: usize,
    targets: Vec<[f64; 3]>,
    last: Vec<bool>,
}

impl CustomOp for MixtureNll {
    fn name(&self) -> &'static str {
        "mixture_nll"
    }

    fn backward(&self, inputs: &[&Mat], _output: &Mat, grad: &Mat) -> Vec<Option<Mat>> {
        let raw = inputs[0];
        let mut g = Mat::zeros(raw.rows, raw.cols);
        for b in 0..raw.rows {
            let row = g.row_mut(b);
            nll_raw(raw.row(b), self.m, self.targets[b], self.last[b], row);
            let s = grad.data[b];
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        vec![Some(g)]
    }
}

/// `[B × 1]` negative log probabilities of `targets` (with stop flags `last`).
pub fn mixture_nll(g: &mut Graph, raw: Var, m: usize, targets: Vec<[f64; 3]>, last: Vec<bool>) -> Var {
    let r = g.value(raw);
    assert_eq!(r.cols, head_width(m));
    assert_eq!(targets.len(), r.rows);
    let mut scratch = vec![0.0; r.cols];
    let out: Vec<f64> = (0..r.rows).map(|b| nll_raw(r.row(b), m, targets[b], last[b], &mut scratch)).collect();
    let value = Mat::from_vec(out.len(), 1, out);
    g.custom(vec![raw], value, Box::new(MixtureNll { m, targets, last }))
}

/// A draw from the head: offset, pen bit, stop flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutputSample {
    pub offset: [f64; 2],
    pub pen: bool,
    pub stop: bool,
}

/// Samples a component from `π` (softmax of `log π / temperature`), then the
/// bivariate Gaussian with both standard deviations multiplied by
/// `std_scale`, then the two Bernoullis unchanged.
pub fn sample_output(dist: &OutputDistParams, rng: &mut Rng, std_scale: f64, temperature: f64) -> OutputSample {
    let mut w: Vec<f64> = dist.pi.iter().map(|p| p.ln() / temperature).collect();
    crate::tensor::softmax_in_place(&mut w);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut j = w.len() - 1;
    for (i, p) in w.iter().enumerate() {
        acc += p;
        if u < acc {
            j = i;
            break;
        }
    }
    let (n1, n2) = (normal(rng), normal(rng));
    let [sx, sy] = dist.sigma[j];
    let (sx, sy) = (sx * std_scale, sy * std_scale);
    let rho = dist.rho[j];
    let dx = dist.mu[j][0] + sx * n1;
    let dy = dist.mu[j][1] + sy * (rho * n1 + (1.0 - rho * rho).sqrt() * n2);
    let pen = rng.random::<f64>() < dist.pen_prob;
    let stop = rng.random::<f64>() < dist.stop_prob;
    OutputSample { offset: [dx, dy], pen, stop }
}
