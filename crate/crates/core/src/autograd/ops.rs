use super::{BackwardRule, Tape, Var};
use crate::error::{Error, Result};
use crate::gemm::{sgemm, Layout};
use crate::numeric::sum_f64;
use crate::tensor::{self, Tensor};

struct AddRule;

impl BackwardRule for AddRule {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Result<Vec<Option<Vec<f32>>>> {
        Ok(needs.iter().map(|&n| n.then(|| g.to_vec())).collect())
    }
}

struct ScaleRule(f32);

impl BackwardRule for ScaleRule {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f32], _: &[bool]) -> Result<Vec<Option<Vec<f32>>>> {
        Ok(vec![Some(g.iter().map(|x| x * self.0).collect())])
    }
}

struct MulRule;

impl BackwardRule for MulRule {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Result<Vec<Option<Vec<f32>>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let da = needs[0].then(|| g.iter().zip(b).map(|(g, y)| g * y).collect());
        let db = needs[1].then(|| g.iter().zip(a).map(|(g, x)| g * x).collect());
        Ok(vec![da, db])
    }
}

struct ReluRule {
    mask: Vec<bool>,
}

impl BackwardRule for ReluRule {
    fn name(&self) -> &'static str {
        "relu"
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f32], _: &[bool]) -> Result<Vec<Option<Vec<f32>>>> {
        let d = g
            .iter()
            .zip(&self.mask)
            .map(|(&g, &on)| if on { g } else { 0.0 })
            .collect();
        Ok(vec![Some(d)])
    }
}

struct SumRule;

impl BackwardRule for SumRule {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], _: &[bool]) -> Result<Vec<Option<Vec<f32>>>> {
        Ok(vec![Some(vec![g[0]; inputs[0].len()])])
    }
}

struct ReshapeRule;

impl BackwardRule for ReshapeRule {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f32], _: &[bool]) -> Result<Vec<Option<Vec<f32>>>> {
        Ok(vec![Some(g.to_vec())])
    }
}

struct MatmulRule;

impl BackwardRule for MatmulRule {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Result<Vec<Option<Vec<f32>>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
        let da = needs[0].then(|| {
            let mut da = vec![0.0f32; m * k];
            sgemm(
                m,
                n,
                k,
                1.0,
                g,
                Layout::row_major(n),
                b.data(),
                Layout::transposed(n),
                0.0,
                &mut da,
                Layout::row_major(k),
            );
            da
        });
        let db = needs[1].then(|| {
            let mut db = vec![0.0f32; k * n];
            sgemm(
                k,
                m,
                n,
                1.0,
                a.data(),
                Layout::transposed(k),
                g,
                Layout::row_major(n),
                0.0,
                &mut db,
                Layout::row_major(n),
            );
            db
        });
        Ok(vec![da, db])
    }
}

struct LinearRule {
    has_bias: bool,
}

impl BackwardRule for LinearRule {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Result<Vec<Option<Vec<f32>>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (n, fin, fout) = (x.dim(0), x.dim(1), w.dim(0));
        let dx = needs[0].then(|| {
            let mut dx = vec![0.0f32; n * fin];
            sgemm(
                n,
                fout,
                fin,
                1.0,
                g,
                Layout::row_major(fout),
                w.data(),
                Layout::row_major(fin),
                0.0,
                &mut dx,
                Layout::row_major(fin),
            );
            dx
        });
        let dw = needs[1].then(|| {
            let mut dw = vec![0.0f32; fout * fin];
            sgemm(
                fout,
                n,
                fin,
                1.0,
                g,
                Layout::transposed(fout),
                x.data(),
                Layout::row_major(fin),
                0.0,
                &mut dw,
                Layout::row_major(fin),
            );
            dw
        });
        let mut grads = vec![dx, dw];
        if self.has_bias {
            grads.push(needs[2].then(|| {
                (0..fout)
                    .map(|o| {
                        let mut acc = 0.0f64;
                        for r in 0..n {
                            acc += g[r * fout + o] as f64;
                        }
                        acc as f32
                    })
                    .collect()
            }));
        }
        Ok(grads)
    }
}

struct SoftmaxCeRule {
    labels: Vec<usize>,
    probs: Vec<f32>,
}

impl BackwardRule for SoftmaxCeRule {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], _: &[bool]) -> Result<Vec<Option<Vec<f32>>>> {
        let (b, k) = (inputs[0].dim(0), inputs[0].dim(1));
        let scale = g[0] / b as f32;
        let mut d: Vec<f32> = self.probs.iter().map(|p| p * scale).collect();
        for (i, &l) in self.labels.iter().enumerate() {
            d[i * k + l] -= scale;
        }
        Ok(vec![Some(d)])
    }
}

struct GlobalPoolRule;

impl BackwardRule for GlobalPoolRule {
    fn name(&self) -> &'static str {
        "global_avg_pool_3d"
    }
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], _: &[bool]) -> Result<Vec<Option<Vec<f32>>>> {
        let x = inputs[0];
        let vol = x.len() / g.len();
        let inv = 1.0 / vol as f32;
        let mut d = vec![0.0f32; x.len()];
        for (chunk, &gv) in d.chunks_exact_mut(vol).zip(g) {
            chunk.iter_mut().for_each(|v| *v = gv * inv);
        }
        Ok(vec![Some(d)])
    }
}

/// `(B, C, T, H, W) -> (B·T, C)`, averaging each frame over space.
struct FramePoolRule;

impl BackwardRule for FramePoolRule {
    fn name(&self) -> &'static str {
        "frame_avg_pool"
    }
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], _: &[bool]) -> Result<Vec<Option<Vec<f32>>>> {
        let (b, c, t, h, w) = inputs[0].dims5()?;
        let hw = h * w;
        let inv = 1.0 / hw as f32;
        let mut d = vec![0.0f32; inputs[0].len()];
        for bi in 0..b {
            for ci in 0..c {
                for ti in 0..t {
                    let gv = g[(bi * t + ti) * c + ci] * inv;
                    let lo = ((bi * c + ci) * t + ti) * hw;
                    d[lo..lo + hw].iter_mut().for_each(|v| *v = gv);
                }
            }
        }
        Ok(vec![Some(d)])
    }
}

/// `(B·T, K) -> (B, K)`, averaging the `T` rows of each sample.
struct SegmentMeanRule {
    segments: usize,
}

impl BackwardRule for SegmentMeanRule {
    fn name(&self) -> &'static str {
        "segment_mean"
    }
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], _: &[bool]) -> Result<Vec<Option<Vec<f32>>>> {
        let (rows, k) = (inputs[0].dim(0), inputs[0].dim(1));
        let t = self.segments;
        let inv = 1.0 / t as f32;
        let mut d = vec![0.0f32; rows * k];
        for r in 0..rows {
            let b = r / t;
            for j in 0..k {
                d[r * k + j] = g[b * k + j] * inv;
            }
        }
        Ok(vec![Some(d)])
    }
}

struct PermuteTemporalRule;

impl BackwardRule for PermuteTemporalRule {
    fn name(&self) -> &'static str {
        "permute_to_temporal"
    }
    fn backward(&self, inputs: &[&Tensor], out: &Tensor, g: &[f32], _: &[bool]) -> Result<Vec<Option<Vec<f32>>>> {
        let (b, _, _, h, w) = inputs[0].dims5()?;
        let gt = Tensor::new(out.shape(), g.to_vec())?;
        Ok(vec![Some(tensor::permute_from_temporal(&gt, b, h, w)?.into_data())])
    }
}

struct ChannelMeanRule;

impl BackwardRule for ChannelMeanRule {
    fn name(&self) -> &'static str {
        "mean_over_channels"
    }
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], _: &[bool]) -> Result<Vec<Option<Vec<f32>>>> {
        let x = inputs[0];
        let (n, c, t) = (x.dim(0), x.dim(1), x.dim(2));
        let inv = 1.0 / c as f32;
        let mut d = vec![0.0f32; x.len()];
        for ni in 0..n {
            for ci in 0..c {
                for ti in 0..t {
                    d[(ni * c + ci) * t + ti] = g[ni * t + ti] * inv;
                }
            }
        }
        Ok(vec![Some(d)])
    }
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::add(self.value(a), self.value(b))?;
        Ok(self.record(vec![a, b], out, Box::new(AddRule)))
    }

    pub fn scale(&mut self, a: Var, alpha: f32) -> Var {
        let out = tensor::scale(self.value(a), alpha);
        self.record(vec![a], out, Box::new(ScaleRule(alpha)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        x.same_shape(y, "mul")?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.record(vec![a, b], out, Box::new(MulRule)))
    }

    /// Rectifier. Under [`Tape::replay_relu_masks`] the active set comes from
    /// the replayed masks instead of the input signs.
    pub fn relu(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let replayed = self.next_replayed_mask(n);
        let x = self.value(a);
        let mask = replayed.unwrap_or_else(|| x.data().iter().map(|&v| v > 0.0).collect());
        let data = x
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &on)| if on { v } else { 0.0 })
            .collect();
        let out = Tensor::new(x.shape(), data).expect("same shape");
        self.log_mask(&mask);
        self.record(vec![a], out, Box::new(ReluRule { mask }))
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(sum_f64(self.value(a).data()) as f32);
        self.record(vec![a], out, Box::new(SumRule))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.record(vec![a], out, Box::new(ReshapeRule)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.record(vec![a, b], out, Box::new(MatmulRule)))
    }

    /// `x (N, in) · wᵀ (in, out) + bias`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        xv.expect_rank(2, "linear input")?;
        wv.expect_rank(2, "linear weight")?;
        let (n, fin, fout) = (xv.dim(0), xv.dim(1), wv.dim(0));
        if wv.dim(1) != fin {
            return Err(Error::shape(format!(
                "linear weight {:?} does not accept {fin} features",
                wv.shape()
            )));
        }
        let mut out = vec![0.0f32; n * fout];
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.shape() != [fout] {
                return Err(Error::shape(format!("bias shape {:?} for {fout} outputs", bv.shape())));
            }
            for row in out.chunks_exact_mut(fout) {
                row.copy_from_slice(bv.data());
            }
        }
        sgemm(
            n,
            fin,
            fout,
            1.0,
            xv.data(),
            Layout::row_major(fin),
            wv.data(),
            Layout::transposed(fin),
            1.0,
            &mut out,
            Layout::row_major(fout),
        );
        let out = Tensor::new(&[n, fout], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.record(
            inputs,
            out,
            Box::new(LinearRule {
                has_bias: bias.is_some(),
            }),
        ))
    }

    /// Mean softmax cross-entropy of `(B, K)` logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = tensor::softmax_cross_entropy(self.value(logits), labels)?;
        let rule = SoftmaxCeRule {
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.record(vec![logits], Tensor::scalar(loss), Box::new(rule)))
    }

    pub fn global_avg_pool_3d(&mut self, x: Var) -> Result<Var> {
        let out = tensor::global_avg_pool_3d(self.value(x))?;
        Ok(self.record(vec![x], out, Box::new(GlobalPoolRule)))
    }

    /// Per-frame spatial average: `(B, C, T, H, W) -> (B·T, C)`.
    pub fn frame_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (b, c, t, h, w) = self.value(x).dims5()?;
        let hw = h * w;
        let src = self.value(x).data();
        let mut out = vec![0.0f32; b * t * c];
        for bi in 0..b {
            for ci in 0..c {
                for ti in 0..t {
                    let lo = ((bi * c + ci) * t + ti) * hw;
                    out[(bi * t + ti) * c + ci] = (sum_f64(&src[lo..lo + hw]) / hw as f64) as f32;
                }
            }
        }
        let out = Tensor::new(&[b * t, c], out)?;
        Ok(self.record(vec![x], out, Box::new(FramePoolRule)))
    }

    /// Average consecutive groups of `segments` rows: `(B·T, K) -> (B, K)`.
    pub fn segment_mean(&mut self, x: Var, segments: usize) -> Result<Var> {
        let xv = self.value(x);
        xv.expect_rank(2, "segment_mean")?;
        let (rows, k) = (xv.dim(0), xv.dim(1));
        if segments == 0 || rows % segments != 0 {
            return Err(Error::shape(format!(
                "{rows} rows do not split into groups of {segments}"
            )));
        }
        let b = rows / segments;
        let mut out = vec![0.0f32; b * k];
        for bi in 0..b {
            for j in 0..k {
                let mut acc = 0.0f64;
                for s in 0..segments {
                    acc += xv.data()[(bi * segments + s) * k + j] as f64;
                }
                out[bi * k + j] = (acc / segments as f64) as f32;
            }
        }
        let out = Tensor::new(&[b, k], out)?;
        Ok(self.record(vec![x], out, Box::new(SegmentMeanRule { segments })))
    }

    pub fn permute_to_temporal(&mut self, x: Var) -> Result<Var> {
        let out = tensor::permute_to_temporal(self.value(x))?;
        Ok(self.record(vec![x], out, Box::new(PermuteTemporalRule)))
    }

    pub fn mean_over_channels(&mut self, x: Var) -> Result<Var> {
        let out = tensor::mean_over_channels(self.value(x))?;
        Ok(self.record(vec![x], out, Box::new(ChannelMeanRule)))
    }
}
