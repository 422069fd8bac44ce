use super::{BackwardRule, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl BatchNormStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

struct BatchNormRule {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    training: bool,
}

fn layout(x: &Tensor) -> Result<(usize, usize, usize)> {
    if x.rank() < 2 {
        return Err(Error::shape("batch norm needs at least (B, C)"));
    }
    let (b, c) = (x.dim(0), x.dim(1));
    Ok((b, c, x.len() / (b * c)))
}

impl BackwardRule for BatchNormRule {
    fn name(&self) -> &'static str {
        "batch_norm"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Result<Vec<Option<Vec<f32>>>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let (b, c, inner) = layout(x)?;
        let count = (b * inner) as f64;
        let xd = x.data();
        let mut dgamma = vec![0.0f64; c];
        let mut dbeta = vec![0.0f64; c];
        for bi in 0..b {
            for ci in 0..c {
                let lo = (bi * c + ci) * inner;
                let (m, s) = (self.mean[ci], self.inv_std[ci]);
                let (mut sg, mut sgx) = (0.0f64, 0.0f64);
                for (&gv, &xv) in g[lo..lo + inner].iter().zip(&xd[lo..lo + inner]) {
                    sg += gv as f64;
                    sgx += gv as f64 * (xv as f64 - m) * s;
                }
                dbeta[ci] += sg;
                dgamma[ci] += sgx;
            }
        }
        let dx = needs[0].then(|| {
            let mut dx = vec![0.0f32; x.len()];
            for bi in 0..b {
                for ci in 0..c {
                    let lo = (bi * c + ci) * inner;
                    let (m, s) = (self.mean[ci], self.inv_std[ci]);
                    let scale = gamma.data()[ci] as f64 * s;
                    if self.training {
                        let mg = dbeta[ci] / count;
                        let mgx = dgamma[ci] / count;
                        for i in lo..lo + inner {
                            let xhat = (xd[i] as f64 - m) * s;
                            dx[i] = (scale * (g[i] as f64 - mg - xhat * mgx)) as f32;
                        }
                    } else {
                        for i in lo..lo + inner {
                            dx[i] = (scale * g[i] as f64) as f32;
                        }
                    }
                }
            }
            dx
        });
        let to32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<f32>>();
        Ok(vec![dx, needs[1].then(|| to32(dgamma)), needs[2].then(|| to32(dbeta))])
    }
}

impl Tape {
    /// Per-channel batch normalisation over every axis except 1.
    ///
    /// In training mode the batch statistics are used and `stats` is updated
    /// with momentum [`BN_MOMENTUM`]; otherwise `stats` is used as-is.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats,
        training: bool,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (b, c, inner) = layout(xv)?;
        if self.value(gamma).len() != c || self.value(beta).len() != c || stats.mean.len() != c {
            return Err(Error::shape(format!("batch norm parameters do not match {c} channels")));
        }
        let count = (b * inner) as f64;
        let xd = xv.data();
        let (mean, var) = if training {
            let mut mean = vec![0.0f64; c];
            let mut var = vec![0.0f64; c];
            for bi in 0..b {
                for (ci, m) in mean.iter_mut().enumerate() {
                    let lo = (bi * c + ci) * inner;
                    *m += crate::numeric::sum_f64(&xd[lo..lo + inner]);
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for bi in 0..b {
                for ci in 0..c {
                    let lo = (bi * c + ci) * inner;
                    let m = mean[ci];
                    var[ci] += xd[lo..lo + inner].iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count);
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            for ci in 0..c {
                stats.mean[ci] = ((1.0 - BN_MOMENTUM) * stats.mean[ci] as f64 + BN_MOMENTUM * mean[ci]) as f32;
                stats.var[ci] = ((1.0 - BN_MOMENTUM) * stats.var[ci] as f64 + BN_MOMENTUM * var[ci] * unbias) as f32;
            }
            (mean, var)
        } else {
            (
                stats.mean.iter().map(|&m| m as f64).collect::<Vec<_>>(),
                stats.var.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            )
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![0.0f32; xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                let lo = (bi * c + ci) * inner;
                let (m, s, ga, be) = (mean[ci], inv_std[ci], gv[ci] as f64, bv[ci] as f64);
                for i in lo..lo + inner {
                    out[i] = (ga * (xd[i] as f64 - m) * s + be) as f32;
                }
            }
        }
        let out = Tensor::new(xv.shape(), out)?;
        let rule = BatchNormRule {
            mean,
            inv_std,
            training,
        };
        Ok(self.record(vec![x, gamma, beta], out, Box::new(rule)))
    }
}
