//! Spatio-temporal convolution (im2col + GEMM), spatial max pooling and
//! spatial subsampling.

use super::{BackwardRule, Tape, Var};
use crate::error::{Error, Result};
use crate::gemm::{sgemm, Layout};
use crate::tensor::Tensor;

/// Shape bookkeeping for a `kt x kh x kw` convolution with stride `(1, s, s)`
/// and "same" zero padding `(kt/2, kh/2, kw/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub kt: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn new(x: &Tensor, weight: &Tensor, stride: usize) -> Result<Self> {
        let (batch, c_in, t, h, w) = x.dims5()?;
        weight.expect_rank(5, "conv3d weight")?;
        let s = weight.shape();
        if s[1] != c_in {
            return Err(Error::shape(format!(
                "conv3d weight {:?} expects {} input channels, input has {c_in}",
                s, s[1]
            )));
        }
        if s[2].is_multiple_of(2) || s[3].is_multiple_of(2) || s[4].is_multiple_of(2) {
            return Err(Error::shape(format!(
                "conv3d kernel {:?} must have odd extents",
                &s[2..]
            )));
        }
        if stride == 0 {
            return Err(Error::shape("conv3d stride must be positive"));
        }
        Ok(Self {
            batch,
            c_in,
            c_out: s[0],
            t,
            h,
            w,
            kt: s[2],
            kh: s[3],
            kw: s[4],
            stride,
        })
    }

    pub fn out_h(&self) -> usize {
        (self.h + 2 * (self.kh / 2) - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * (self.kw / 2) - self.kw) / self.stride + 1
    }

    fn rows(&self) -> usize {
        self.c_in * self.kt * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.t * self.out_h() * self.out_w()
    }

    fn pointwise(&self) -> bool {
        self.kt == 1 && self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    /// Multiply-accumulates of one forward pass.
    pub fn macs(&self) -> u64 {
        (self.batch * self.c_out * self.rows() * self.cols()) as u64
    }
}

fn im2col(x: &[f32], g: &ConvGeometry, col: &mut [f32]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let (pt, ph, pw) = ((g.kt / 2) as isize, (g.kh / 2) as isize, (g.kw / 2) as isize);
    let n = g.cols();
    let plane = g.h * g.w;
    for ci in 0..g.c_in {
        for dt in 0..g.kt {
            for dy in 0..g.kh {
                for dx in 0..g.kw {
                    let row = ((ci * g.kt + dt) * g.kh + dy) * g.kw + dx;
                    let dst = &mut col[row * n..(row + 1) * n];
                    for to in 0..g.t {
                        let ti = to as isize + dt as isize - pt;
                        for yo in 0..ho {
                            let yi = (yo * g.stride) as isize + dy as isize - ph;
                            let base = (to * ho + yo) * wo;
                            if ti < 0 || ti >= g.t as isize || yi < 0 || yi >= g.h as isize {
                                dst[base..base + wo].iter_mut().for_each(|v| *v = 0.0);
                                continue;
                            }
                            let src = (ci * g.t + ti as usize) * plane + yi as usize * g.w;
                            for xo in 0..wo {
                                let xi = (xo * g.stride) as isize + dx as isize - pw;
                                dst[base + xo] = if xi < 0 || xi >= g.w as isize {
                                    0.0
                                } else {
                                    x[src + xi as usize]
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f32], g: &ConvGeometry, dx_out: &mut [f32]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let (pt, ph, pw) = ((g.kt / 2) as isize, (g.kh / 2) as isize, (g.kw / 2) as isize);
    let n = g.cols();
    let plane = g.h * g.w;
    for ci in 0..g.c_in {
        for dt in 0..g.kt {
            for dy in 0..g.kh {
                for dx in 0..g.kw {
                    let row = ((ci * g.kt + dt) * g.kh + dy) * g.kw + dx;
                    let src = &col[row * n..(row + 1) * n];
                    for to in 0..g.t {
                        let ti = to as isize + dt as isize - pt;
                        if ti < 0 || ti >= g.t as isize {
                            continue;
                        }
                        for yo in 0..ho {
                            let yi = (yo * g.stride) as isize + dy as isize - ph;
                            if yi < 0 || yi >= g.h as isize {
                                continue;
                            }
                            let base = (to * ho + yo) * wo;
                            let dst = (ci * g.t + ti as usize) * plane + yi as usize * g.w;
                            for xo in 0..wo {
                                let xi = (xo * g.stride) as isize + dx as isize - pw;
                                if xi >= 0 && xi < g.w as isize {
                                    dx_out[dst + xi as usize] += src[base + xo];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution without recording, used by the tape op and by tests.
pub(crate) fn conv3d_forward(x: &Tensor, weight: &Tensor, stride: usize) -> Result<(Tensor, ConvGeometry)> {
    let g = ConvGeometry::new(x, weight, stride)?;
    let (rows, cols) = (g.rows(), g.cols());
    let in_span = g.c_in * g.t * g.h * g.w;
    let out_span = g.c_out * cols;
    let mut out = vec![0.0f32; g.batch * out_span];
    let mut col = if g.pointwise() {
        Vec::new()
    } else {
        vec![0.0f32; rows * cols]
    };
    for b in 0..g.batch {
        let xb = &x.data()[b * in_span..(b + 1) * in_span];
        let rhs: &[f32] = if g.pointwise() {
            xb
        } else {
            im2col(xb, &g, &mut col);
            &col
        };
        sgemm(
            g.c_out,
            rows,
            cols,
            1.0,
            weight.data(),
            Layout::row_major(rows),
            rhs,
            Layout::row_major(cols),
            0.0,
            &mut out[b * out_span..(b + 1) * out_span],
            Layout::row_major(cols),
        );
    }
    let out = Tensor::new(&[g.batch, g.c_out, g.t, g.out_h(), g.out_w()], out)?;
    Ok((out, g))
}

struct Conv3dRule {
    geom: ConvGeometry,
}

impl BackwardRule for Conv3dRule {
    fn name(&self) -> &'static str {
        "conv3d"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &[f32], needs: &[bool]) -> Result<Vec<Option<Vec<f32>>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let g = &self.geom;
        let (rows, cols) = (g.rows(), g.cols());
        let in_span = g.c_in * g.t * g.h * g.w;
        let out_span = g.c_out * cols;
        let mut dw = needs[1].then(|| vec![0.0f32; w.len()]);
        let mut dx = needs[0].then(|| vec![0.0f32; x.len()]);
        let mut col = if g.pointwise() {
            Vec::new()
        } else {
            vec![0.0f32; rows * cols]
        };
        let mut dcol = if g.pointwise() || dx.is_none() {
            Vec::new()
        } else {
            vec![0.0f32; rows * cols]
        };
        for b in 0..g.batch {
            let xb = &x.data()[b * in_span..(b + 1) * in_span];
            let gb = &grad[b * out_span..(b + 1) * out_span];
            if let Some(dw) = dw.as_mut() {
                let rhs: &[f32] = if g.pointwise() {
                    xb
                } else {
                    im2col(xb, g, &mut col);
                    &col
                };
                // dW += G_b (C_out x N) · col_bᵀ (N x R)
                sgemm(
                    g.c_out,
                    cols,
                    rows,
                    1.0,
                    gb,
                    Layout::row_major(cols),
                    rhs,
                    Layout::transposed(cols),
                    1.0,
                    dw,
                    Layout::row_major(rows),
                );
            }
            if let Some(dx) = dx.as_mut() {
                let dxb = &mut dx[b * in_span..(b + 1) * in_span];
                if g.pointwise() {
                    sgemm(
                        rows,
                        g.c_out,
                        cols,
                        1.0,
                        w.data(),
                        Layout::transposed(rows),
                        gb,
                        Layout::row_major(cols),
                        0.0,
                        dxb,
                        Layout::row_major(cols),
                    );
                } else {
                    sgemm(
                        rows,
                        g.c_out,
                        cols,
                        1.0,
                        w.data(),
                        Layout::transposed(rows),
                        gb,
                        Layout::row_major(cols),
                        0.0,
                        &mut dcol,
                        Layout::row_major(cols),
                    );
                    col2im(&dcol, g, dxb);
                }
            }
        }
        Ok(vec![dx, dw])
    }
}

struct MaxPoolRule {
    argmax: Vec<usize>,
}

impl BackwardRule for MaxPoolRule {
    fn name(&self) -> &'static str {
        "max_pool_spatial"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &[f32], _: &[bool]) -> Result<Vec<Option<Vec<f32>>>> {
        let mut d = vec![0.0f32; inputs[0].len()];
        for (&src, &g) in self.argmax.iter().zip(grad) {
            d[src] += g;
        }
        Ok(vec![Some(d)])
    }
}

struct SubsampleRule {
    stride: usize,
}

impl BackwardRule for SubsampleRule {
    fn name(&self) -> &'static str {
        "subsample_spatial"
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, grad: &[f32], _: &[bool]) -> Result<Vec<Option<Vec<f32>>>> {
        let (_, _, _, h, w) = inputs[0].dims5()?;
        let (_, _, _, ho, wo) = out.dims5()?;
        let mut d = vec![0.0f32; inputs[0].len()];
        for (plane, g) in grad.chunks_exact(ho * wo).enumerate() {
            for y in 0..ho {
                for x in 0..wo {
                    d[plane * h * w + y * self.stride * w + x * self.stride] = g[y * wo + x];
                }
            }
        }
        Ok(vec![Some(d)])
    }
}

impl Tape {
    /// 3D convolution, weight `[C_out, C_in, kt, kh, kw]`, stride `(1, s, s)`, same padding, no bias.
    pub fn conv3d(&mut self, x: Var, weight: Var, stride: usize) -> Result<Var> {
        let (out, geom) = conv3d_forward(self.value(x), self.value(weight), stride)?;
        Ok(self.record(vec![x, weight], out, Box::new(Conv3dRule { geom })))
    }

    /// `1 x 3 x 3` max pooling with spatial stride 2 and padding 1.
    pub fn max_pool_spatial(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (b, c, t, h, w) = xv.dims5()?;
        let (ho, wo) = ((h - 1) / 2 + 1, (w - 1) / 2 + 1);
        let planes = b * c * t;
        let mut out = vec![0.0f32; planes * ho * wo];
        let mut argmax = vec![0usize; out.len()];
        for p in 0..planes {
            let src = &xv.data()[p * h * w..(p + 1) * h * w];
            for y in 0..ho {
                for xo in 0..wo {
                    let mut best = f32::NEG_INFINITY;
                    let mut at = 0;
                    for dy in 0..3 {
                        let yi = (y * 2 + dy) as isize - 1;
                        if yi < 0 || yi >= h as isize {
                            continue;
                        }
                        for dx in 0..3 {
                            let xi = (xo * 2 + dx) as isize - 1;
                            if xi < 0 || xi >= w as isize {
                                continue;
                            }
                            let idx = yi as usize * w + xi as usize;
                            if src[idx] > best {
                                best = src[idx];
                                at = idx;
                            }
                        }
                    }
                    let o = (p * ho + y) * wo + xo;
                    out[o] = best;
                    argmax[o] = p * h * w + at;
                }
            }
        }
        let out = Tensor::new(&[b, c, t, ho, wo], out)?;
        Ok(self.record(vec![x], out, Box::new(MaxPoolRule { argmax })))
    }

    /// Keep every `stride`-th row and column (what a strided `1x1x1` kernel sees).
    pub fn subsample_spatial(&mut self, x: Var, stride: usize) -> Result<Var> {
        if stride == 1 {
            return Ok(x);
        }
        let xv = self.value(x);
        let (b, c, t, h, w) = xv.dims5()?;
        let (ho, wo) = ((h - 1) / stride + 1, (w - 1) / stride + 1);
        let mut out = Vec::with_capacity(b * c * t * ho * wo);
        for plane in xv.data().chunks_exact(h * w) {
            for y in 0..ho {
                for xo in 0..wo {
                    out.push(plane[y * stride * w + xo * stride]);
                }
            }
        }
        let out = Tensor::new(&[b, c, t, ho, wo], out)?;
        Ok(self.record(vec![x], out, Box::new(SubsampleRule { stride })))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution with explicit zero padding.
    fn conv_oracle(x: &Tensor, w: &Tensor, stride: usize) -> Vec<f64> {
        let g = ConvGeometry::new(x, w, stride).unwrap();
        let (ho, wo) = (g.out_h(), g.out_w());
        let mut out = vec![0.0f64; g.batch * g.c_out * g.t * ho * wo];
        let at = |b: usize, c: usize, t: isize, y: isize, xx: isize| -> f64 {
            if t < 0 || y < 0 || xx < 0 || t >= g.t as isize || y >= g.h as isize || xx >= g.w as isize {
                0.0
            } else {
                x.data()[(((b * g.c_in + c) * g.t + t as usize) * g.h + y as usize) * g.w + xx as usize] as f64
            }
        };
        for b in 0..g.batch {
            for co in 0..g.c_out {
                for t in 0..g.t {
                    for y in 0..ho {
                        for xo in 0..wo {
                            let mut acc = 0.0;
                            for ci in 0..g.c_in {
                                for dt in 0..g.kt {
                                    for dy in 0..g.kh {
                                        for dx in 0..g.kw {
                                            let wv = w.data()
                                                [(((co * g.c_in + ci) * g.kt + dt) * g.kh + dy) * g.kw + dx]
                                                as f64;
                                            acc += wv
                                                * at(
                                                    b,
                                                    ci,
                                                    (t + dt) as isize - (g.kt / 2) as isize,
                                                    (y * stride + dy) as isize - (g.kh / 2) as isize,
                                                    (xo * stride + dx) as isize - (g.kw / 2) as isize,
                                                );
                                        }
                                    }
                                }
                            }
                            out[(((b * g.c_out + co) * g.t + t) * ho + y) * wo + xo] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &(kt, kh, stride, h) in &[
            (1, 3, 1, 5),
            (1, 3, 2, 6),
            (3, 1, 1, 3),
            (1, 1, 2, 5),
            (1, 1, 1, 4),
            (3, 3, 2, 7),
        ] {
            let x = Tensor::from_fn(&[2, 3, 4, h, h + 1], |_| rng.gen_range(-1.0..1.0));
            let w = Tensor::from_fn(&[4, 3, kt, kh, kh], |_| rng.gen_range(-1.0..1.0));
            let (out, _) = conv3d_forward(&x, &w, stride).unwrap();
            let oracle = conv_oracle(&x, &w, stride);
            assert_eq!(out.len(), oracle.len());
            for (a, b) in out.data().iter().zip(&oracle) {
                assert!((*a as f64 - b).abs() < 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn strided_shapes() {
        let x = Tensor::zeros(&[1, 2, 3, 32, 32]);
        let w = Tensor::zeros(&[4, 2, 1, 3, 3]);
        let (out, g) = conv3d_forward(&x, &w, 2).unwrap();
        assert_eq!(out.shape(), &[1, 4, 3, 16, 16]);
        assert_eq!(g.macs(), (4 * 2 * 9 * 3 * 16 * 16) as u64);
        let w7 = Tensor::zeros(&[1, 2, 1, 7, 7]);
        assert_eq!(
            conv3d_forward(&Tensor::zeros(&[1, 2, 1, 224, 224]), &w7, 2)
                .unwrap()
                .1
                .out_h(),
            112
        );
    }
}
