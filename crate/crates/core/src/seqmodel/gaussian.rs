//! Diagonal Gaussians for the latent prior and posterior.

use serde::{Deserialize, Serialize};

use crate::autograd::{CustomOp, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianDiag {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl GaussianDiag {
    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], log_std: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.log_std.len() {
            return Err(Error::invalid("mean and log_std lengths differ"));
        }
        if self.mean.iter().chain(&self.log_std).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite Gaussian parameters"));
        }
        Ok(())
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(x)
            .map(|((m, l), v)| {
                let z = (v - m) * (-l).exp();
                -0.5 * z * z - l - 0.5 * (2.0 * std::f64::consts::PI).ln()
            })
            .sum()
    }
}

fn kl_terms(mq: f64, lq: f64, mp: f64, lp: f64) -> f64 {
    let d = mq - mp;
    // The variance ratio as one exponential keeps KL(q, q) exactly zero.
    lp - lq + ((2.0 * (lq - lp)).exp() + d * d * (-2.0 * lp).exp()) * 0.5 - 0.5
}

/// `KL(q ‖ p)` summed over dimensions.
pub fn kl_diag_gaussians(q: &GaussianDiag, p: &GaussianDiag) -> Result<f64> {
    q.validate()?;
    p.validate()?;
    if q.dim() != p.dim() {
        return Err(Error::invalid(format!("KL between {}-d and {}-d Gaussians", q.dim(), p.dim())));
    }
    Ok((0..q.dim()).map(|i| kl_terms(q.mean[i], q.log_std[i], p.mean[i], p.log_std[i])).sum())
}

/// `mean + exp(log_std) ⊙ noise`.
pub fn reparam_sample(g: &GaussianDiag, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != g.dim() {
        return Err(Error::invalid(format!("noise has {} dims, latent has {}", noise.len(), g.dim())));
    }
    Ok(g.mean.iter().zip(&g.log_std).zip(noise).map(|((m, l), n)| m + l.exp() * n).collect())
}

/// Differentiable reparameterization over a batch of rows.
pub fn reparam_graph(g: &mut Graph, mean: Var, log_std: Var, noise: Var) -> Var {
    let s = g.exp(log_std);
    let sn = g.mul(s, noise);
    g.add(mean, sn)
}

struct KlDiagOp;

impl CustomOp for KlDiagOp {
    fn name(&self) -> &'static str {
        "kl_diag"
    }

    fn backward(&self, inputs: &[&Mat], _output: &Mat, grad: &Mat) -> Vec<Option<Mat>> {
        let (mq, lq, mp, lp) = (inputs[0], inputs[1], inputs[2], inputs[3]);
        let (rows, cols) = mq.shape();
        let mut g = [Mat::zeros(rows, cols), Mat::zeros(rows, cols), Mat::zeros(rows, cols), Mat::zeros(rows, cols)];
        for b in 0..rows {
            let s = grad.data[b];
            for i in 0..cols {
                let k = b * cols + i;
                let inv_vp = (-2.0 * lp.data[k]).exp();
                let d = mq.data[k] - mp.data[k];
                let vq = (2.0 * lq.data[k]).exp();
                g[0].data[k] = s * d * inv_vp;
                g[1].data[k] = s * (-1.0 + vq * inv_vp);
                g[2].data[k] = -s * d * inv_vp;
                g[3].data[k] = s * (1.0 - (vq + d * d) * inv_vp);
            }
        }
        g.into_iter().map(Some).collect()
    }
}

/// Row-wise `KL(q ‖ p)` as a `[B × 1]` column.
pub fn kl_graph(g: &mut Graph, mq: Var, lq: Var, mp: Var, lp: Var) -> Var {
    let (a, b, c, d) = (g.value(mq), g.value(lq), g.value(mp), g.value(lp));
    let (rows, cols) = a.shape();
    let out = (0..rows)
        .map(|r| (0..cols).map(|i| kl_terms(a.get(r, i), b.get(r, i), c.get(r, i), d.get(r, i))).sum())
        .collect();
    let value = Mat::from_vec(rows, 1, out);
    g.custom(vec![mq, lq, mp, lp], value, Box::new(KlDiagOp))
}
