//! Forward and backward kernels of the temporal operator family.
//!
//! Every forward kernel is generic over its accumulator so the same loop nest
//! runs in float32 (production) or float64 (verification). Multiplies are
//! tallied per inner loop into an optional [`MulCounter`]; temporal
//! convolutions multiply against an explicitly zero-padded buffer so the tally
//! includes the padding taps.

use crate::error::{Error, Result};
use crate::numeric::{axpy, axpy_acc, dot_f64, Accum, Precision};
use crate::tensor::Tensor;

use super::kernels::{DepthwiseTemporalKernel, FullTemporalFcKernel, TemporalConvKernel, TfcKernel};

/// Counts scalar multiplies performed by a kernel.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct MulCounter {
    pub multiplies: u64,
}

impl MulCounter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    fn add(counter: &mut Option<&mut MulCounter>, n: usize) {
        if let Some(c) = counter.as_deref_mut() {
            c.multiplies += n as u64;
        }
    }
}

/// Input geometry `(B, C, T, H·W)` plus `(H, W)`.
#[derive(Debug, Clone, Copy)]
struct Geom {
    b: usize,
    c: usize,
    t: usize,
    h: usize,
    w: usize,
}

impl Geom {
    fn of(v: &Tensor) -> Result<Self> {
        let (b, c, t, h, w) = v.dims5()?;
        Ok(Self { b, c, t, h, w })
    }
    fn hw(&self) -> usize {
        self.h * self.w
    }
    fn out_shape(&self, c: usize) -> [usize; 5] {
        [self.b, c, self.t, self.h, self.w]
    }
}

fn finish<A: Accum>(acc: Vec<A>, shape: &[usize]) -> Result<Tensor> {
    Tensor::new(shape, acc.into_iter().map(Accum::to_f32).collect())
}

fn check_fixed_length(bound: usize, actual: usize) -> Result<()> {
    if bound != actual {
        return Err(Error::TemporalLength {
            expected: bound,
            actual,
        });
    }
    Ok(())
}

/// Zero-pad every `(b, c)` time series by `pad` frames on both sides.
fn pad_time(data: &[f32], g: Geom, pad: usize) -> Vec<f32> {
    let hw = g.hw();
    let tp = g.t + 2 * pad;
    let mut out = vec![0.0f32; g.b * g.c * tp * hw];
    for bc in 0..g.b * g.c {
        let src = &data[bc * g.t * hw..(bc + 1) * g.t * hw];
        out[(bc * tp + pad) * hw..(bc * tp + pad + g.t) * hw].copy_from_slice(src);
    }
    out
}

fn unpad_time(padded: &[f32], g: Geom, pad: usize) -> Vec<f32> {
    let hw = g.hw();
    let tp = g.t + 2 * pad;
    let mut out = vec![0.0f32; g.b * g.c * g.t * hw];
    for bc in 0..g.b * g.c {
        out[bc * g.t * hw..(bc + 1) * g.t * hw]
            .copy_from_slice(&padded[(bc * tp + pad) * hw..(bc * tp + pad + g.t) * hw]);
    }
    out
}

// ---------------------------------------------------------------------------
// temporal convolution

fn check_temporal_conv(g: Geom, k: &TemporalConvKernel) -> Result<()> {
    if k.c_in() != g.c {
        return Err(Error::shape(format!(
            "temporal_conv kernel expects C_in={}, input has {}",
            k.c_in(),
            g.c
        )));
    }
    if k.extent() > g.t {
        return Err(Error::shape(format!(
            "temporal kernel extent {} exceeds clip length {}",
            k.extent(),
            g.t
        )));
    }
    Ok(())
}

fn temporal_conv_acc<A: Accum>(
    v: &Tensor,
    k: &TemporalConvKernel,
    mut counter: Option<&mut MulCounter>,
) -> Result<(Vec<A>, [usize; 5])> {
    let g = Geom::of(v)?;
    check_temporal_conv(g, k)?;
    let (kt, c_out) = (k.extent(), k.c_out());
    let pad = (kt - 1) / 2;
    let hw = g.hw();
    let span = g.t * hw;
    let tp = g.t + 2 * pad;
    let padded = pad_time(v.data(), g, pad);
    let w = k.weights().data();
    let mut out = vec![A::default(); g.b * c_out * span];
    for b in 0..g.b {
        for co in 0..c_out {
            let dst = &mut out[(b * c_out + co) * span..(b * c_out + co + 1) * span];
            for ci in 0..g.c {
                let src = &padded[(b * g.c + ci) * tp * hw..];
                for tap in 0..kt {
                    let wv = w[(co * g.c + ci) * kt + tap];
                    axpy_acc(A::from_f32(wv), &src[tap * hw..tap * hw + span], dst);
                    MulCounter::add(&mut counter, span);
                }
            }
        }
    }
    Ok((out, g.out_shape(c_out)))
}

/// Stride-1 temporal cross-correlation with `(K-1)/2` zero padding; `T` is preserved.
pub fn temporal_conv(v: &Tensor, k: &TemporalConvKernel) -> Result<Tensor> {
    temporal_conv_ext(v, k, Precision::F32, None)
}

pub fn temporal_conv_ext(
    v: &Tensor,
    k: &TemporalConvKernel,
    precision: Precision,
    counter: Option<&mut MulCounter>,
) -> Result<Tensor> {
    match precision {
        Precision::F32 => {
            let (acc, s) = temporal_conv_acc::<f32>(v, k, counter)?;
            finish(acc, &s)
        }
        Precision::F64 => {
            let (acc, s) = temporal_conv_acc::<f64>(v, k, counter)?;
            finish(acc, &s)
        }
    }
}

pub fn temporal_conv_backward(
    v: &Tensor,
    k: &TemporalConvKernel,
    grad_out: &[f32],
    need_input: bool,
) -> Result<(Option<Tensor>, Tensor)> {
    let g = Geom::of(v)?;
    check_temporal_conv(g, k)?;
    let (kt, c_out) = (k.extent(), k.c_out());
    let pad = (kt - 1) / 2;
    let hw = g.hw();
    let span = g.t * hw;
    let tp = g.t + 2 * pad;
    let padded = pad_time(v.data(), g, pad);
    let w = k.weights().data();
    let mut dw = vec![0.0f64; w.len()];
    let mut dpad = if need_input {
        vec![0.0f32; padded.len()]
    } else {
        Vec::new()
    };
    for b in 0..g.b {
        for co in 0..c_out {
            let go = &grad_out[(b * c_out + co) * span..(b * c_out + co + 1) * span];
            for ci in 0..g.c {
                let base = (b * g.c + ci) * tp * hw;
                for tap in 0..kt {
                    let widx = (co * g.c + ci) * kt + tap;
                    let lo = base + tap * hw;
                    dw[widx] += dot_f64(go, &padded[lo..lo + span]);
                    if need_input {
                        axpy(w[widx], go, &mut dpad[lo..lo + span]);
                    }
                }
            }
        }
    }
    let dv = if need_input {
        Some(Tensor::new(v.shape(), unpad_time(&dpad, g, pad))?)
    } else {
        None
    };
    let dw = Tensor::new(k.weights().shape(), dw.into_iter().map(|x| x as f32).collect())?;
    Ok((dv, dw))
}

// ---------------------------------------------------------------------------
// residual depthwise temporal convolution

fn check_rdw(g: Geom, k: &DepthwiseTemporalKernel) -> Result<()> {
    if k.channels() != g.c {
        return Err(Error::shape(format!(
            "depthwise kernel has {} channels, input has {}",
            k.channels(),
            g.c
        )));
    }
    if k.extent() > g.t {
        return Err(Error::shape(format!(
            "depthwise kernel extent {} exceeds clip length {}",
            k.extent(),
            g.t
        )));
    }
    Ok(())
}

fn rdw_acc<A: Accum>(
    v: &Tensor,
    k: &DepthwiseTemporalKernel,
    mut counter: Option<&mut MulCounter>,
) -> Result<(Vec<A>, [usize; 5])> {
    let g = Geom::of(v)?;
    check_rdw(g, k)?;
    let kt = k.extent();
    let pad = (kt - 1) / 2;
    let hw = g.hw();
    let span = g.t * hw;
    let tp = g.t + 2 * pad;
    let padded = pad_time(v.data(), g, pad);
    let w = k.weights().data();
    let mut out: Vec<A> = v.data().iter().map(|&x| A::from_f32(x)).collect();
    for b in 0..g.b {
        for c in 0..g.c {
            let dst = &mut out[(b * g.c + c) * span..(b * g.c + c + 1) * span];
            let src = &padded[(b * g.c + c) * tp * hw..];
            for tap in 0..kt {
                axpy_acc(A::from_f32(w[c * kt + tap]), &src[tap * hw..tap * hw + span], dst);
                MulCounter::add(&mut counter, span);
            }
        }
    }
    Ok((out, g.out_shape(g.c)))
}

/// `O_c = V_c + W_c * V_c`: per-channel temporal filter plus identity skip.
pub fn rdw(v: &Tensor, k: &DepthwiseTemporalKernel) -> Result<Tensor> {
    rdw_ext(v, k, Precision::F32, None)
}

pub fn rdw_ext(
    v: &Tensor,
    k: &DepthwiseTemporalKernel,
    precision: Precision,
    counter: Option<&mut MulCounter>,
) -> Result<Tensor> {
    match precision {
        Precision::F32 => {
            let (acc, s) = rdw_acc::<f32>(v, k, counter)?;
            finish(acc, &s)
        }
        Precision::F64 => {
            let (acc, s) = rdw_acc::<f64>(v, k, counter)?;
            finish(acc, &s)
        }
    }
}

pub fn rdw_backward(
    v: &Tensor,
    k: &DepthwiseTemporalKernel,
    grad_out: &[f32],
    need_input: bool,
) -> Result<(Option<Tensor>, Tensor)> {
    let g = Geom::of(v)?;
    check_rdw(g, k)?;
    let kt = k.extent();
    let pad = (kt - 1) / 2;
    let hw = g.hw();
    let span = g.t * hw;
    let tp = g.t + 2 * pad;
    let padded = pad_time(v.data(), g, pad);
    let w = k.weights().data();
    let mut dw = vec![0.0f64; w.len()];
    let mut dpad = if need_input {
        vec![0.0f32; padded.len()]
    } else {
        Vec::new()
    };
    for b in 0..g.b {
        for c in 0..g.c {
            let go = &grad_out[(b * g.c + c) * span..(b * g.c + c + 1) * span];
            let base = (b * g.c + c) * tp * hw;
            for tap in 0..kt {
                let lo = base + tap * hw;
                dw[c * kt + tap] += dot_f64(go, &padded[lo..lo + span]);
                if need_input {
                    axpy(w[c * kt + tap], go, &mut dpad[lo..lo + span]);
                }
            }
        }
    }
    let dv = if need_input {
        let mut dv = unpad_time(&dpad, g, pad);
        for (d, &go) in dv.iter_mut().zip(grad_out) {
            *d += go;
        }
        Some(Tensor::new(v.shape(), dv)?)
    } else {
        None
    };
    let dw = Tensor::new(k.weights().shape(), dw.into_iter().map(|x| x as f32).collect())?;
    Ok((dv, dw))
}

// ---------------------------------------------------------------------------
// temporal fully connected family

fn full_fc_acc<A: Accum>(
    v: &Tensor,
    k: &FullTemporalFcKernel,
    mut counter: Option<&mut MulCounter>,
) -> Result<(Vec<A>, [usize; 5])> {
    let g = Geom::of(v)?;
    check_fixed_length(k.time(), g.t)?;
    if k.c_in() != g.c {
        return Err(Error::shape(format!(
            "temporal FC kernel expects C_in={}, input has {}",
            k.c_in(),
            g.c
        )));
    }
    let (t, hw, c_out) = (g.t, g.hw(), k.c_out());
    let w = k.weights().data();
    let x = v.data();
    let mut out = vec![A::default(); g.b * c_out * t * hw];
    for b in 0..g.b {
        for j in 0..c_out {
            for c in 0..g.c {
                let mat = &w[(j * g.c + c) * t * t..(j * g.c + c + 1) * t * t];
                let src = &x[(b * g.c + c) * t * hw..(b * g.c + c + 1) * t * hw];
                for ti in 0..t {
                    let dst_lo = ((b * c_out + j) * t + ti) * hw;
                    let dst = &mut out[dst_lo..dst_lo + hw];
                    for tj in 0..t {
                        axpy_acc(A::from_f32(mat[ti * t + tj]), &src[tj * hw..(tj + 1) * hw], dst);
                        MulCounter::add(&mut counter, hw);
                    }
                }
            }
        }
    }
    Ok((out, g.out_shape(c_out)))
}

/// `O_j = Σ_c W_jc · V_c` with an unshared `T x T` matrix per channel pair.
pub fn full_temporal_fc(v: &Tensor, k: &FullTemporalFcKernel) -> Result<Tensor> {
    full_temporal_fc_ext(v, k, Precision::F32, None)
}

pub fn full_temporal_fc_ext(
    v: &Tensor,
    k: &FullTemporalFcKernel,
    precision: Precision,
    counter: Option<&mut MulCounter>,
) -> Result<Tensor> {
    match precision {
        Precision::F32 => {
            let (acc, s) = full_fc_acc::<f32>(v, k, counter)?;
            finish(acc, &s)
        }
        Precision::F64 => {
            let (acc, s) = full_fc_acc::<f64>(v, k, counter)?;
            finish(acc, &s)
        }
    }
}

pub fn full_temporal_fc_backward(
    v: &Tensor,
    k: &FullTemporalFcKernel,
    grad_out: &[f32],
    need_input: bool,
) -> Result<(Option<Tensor>, Tensor)> {
    let g = Geom::of(v)?;
    check_fixed_length(k.time(), g.t)?;
    let (t, hw, c_out) = (g.t, g.hw(), k.c_out());
    let w = k.weights().data();
    let x = v.data();
    let mut dw = vec![0.0f64; w.len()];
    let mut dv = if need_input { vec![0.0f32; x.len()] } else { Vec::new() };
    for b in 0..g.b {
        for j in 0..c_out {
            for c in 0..g.c {
                let wbase = (j * g.c + c) * t * t;
                let xbase = (b * g.c + c) * t * hw;
                for ti in 0..t {
                    let go_lo = ((b * c_out + j) * t + ti) * hw;
                    let go = &grad_out[go_lo..go_lo + hw];
                    for tj in 0..t {
                        let src = xbase + tj * hw;
                        dw[wbase + ti * t + tj] += dot_f64(go, &x[src..src + hw]);
                        if need_input {
                            axpy(w[wbase + ti * t + tj], go, &mut dv[src..src + hw]);
                        }
                    }
                }
            }
        }
    }
    let dv = if need_input {
        Some(Tensor::new(v.shape(), dv)?)
    } else {
        None
    };
    let dw = Tensor::new(k.weights().shape(), dw.into_iter().map(|x| x as f32).collect())?;
    Ok((dv, dw))
}

fn tfc_shared_acc<A: Accum>(
    v: &Tensor,
    k: &TfcKernel,
    mut counter: Option<&mut MulCounter>,
) -> Result<(Vec<A>, [usize; 5])> {
    let g = Geom::of(v)?;
    check_fixed_length(k.time(), g.t)?;
    let (t, hw, c_out) = (g.t, g.hw(), k.c_out());
    let w = k.weights().data();
    let x = v.data();
    let mut out = vec![A::default(); g.b * c_out * t * hw];
    for b in 0..g.b {
        for j in 0..c_out {
            let mat = &w[j * t * t..(j + 1) * t * t];
            for c in 0..g.c {
                let src = &x[(b * g.c + c) * t * hw..(b * g.c + c + 1) * t * hw];
                for ti in 0..t {
                    let dst_lo = ((b * c_out + j) * t + ti) * hw;
                    let dst = &mut out[dst_lo..dst_lo + hw];
                    for tj in 0..t {
                        axpy_acc(A::from_f32(mat[ti * t + tj]), &src[tj * hw..(tj + 1) * hw], dst);
                        MulCounter::add(&mut counter, hw);
                    }
                }
            }
        }
    }
    Ok((out, g.out_shape(c_out)))
}

/// `O_j = Σ_c W_j · V_c`: one matrix per output channel shared across inputs.
pub fn tfc_shared(v: &Tensor, k: &TfcKernel) -> Result<Tensor> {
    tfc_shared_ext(v, k, Precision::F32, None)
}

pub fn tfc_shared_ext(
    v: &Tensor,
    k: &TfcKernel,
    precision: Precision,
    counter: Option<&mut MulCounter>,
) -> Result<Tensor> {
    match precision {
        Precision::F32 => {
            let (acc, s) = tfc_shared_acc::<f32>(v, k, counter)?;
            finish(acc, &s)
        }
        Precision::F64 => {
            let (acc, s) = tfc_shared_acc::<f64>(v, k, counter)?;
            finish(acc, &s)
        }
    }
}

/// Double-precision output of [`tfc_shared`] without the final rounding to f32.
pub fn tfc_shared_f64(v: &Tensor, k: &TfcKernel) -> Result<Vec<f64>> {
    Ok(tfc_shared_acc::<f64>(v, k, None)?.0)
}

/// Gradient of `Σ_j W_j^T g_j` with respect to the (channel-independent) input.
fn tfc_input_grad(g: Geom, k: &TfcKernel, grad_out: &[f32]) -> Vec<f32> {
    let (t, hw, c_out) = (g.t, g.hw(), k.c_out());
    let w = k.weights().data();
    let mut ds = vec![0.0f32; g.b * t * hw];
    for b in 0..g.b {
        for j in 0..c_out {
            for ti in 0..t {
                let go_lo = ((b * c_out + j) * t + ti) * hw;
                let go = &grad_out[go_lo..go_lo + hw];
                for tj in 0..t {
                    let dst = (b * t + tj) * hw;
                    axpy(w[(j * t + ti) * t + tj], go, &mut ds[dst..dst + hw]);
                }
            }
        }
    }
    ds
}

/// `dW[j,ti,tj] = Σ_b <g[b,j,ti,:], s[b,tj,:]>` for a per-batch `(T, HW)` signal `s`.
fn tfc_weight_grad(g: Geom, k: &TfcKernel, grad_out: &[f32], signal: &[f32]) -> Vec<f64> {
    let (t, hw, c_out) = (g.t, g.hw(), k.c_out());
    let mut dw = vec![0.0f64; c_out * t * t];
    for b in 0..g.b {
        for j in 0..c_out {
            for ti in 0..t {
                let go_lo = ((b * c_out + j) * t + ti) * hw;
                let go = &grad_out[go_lo..go_lo + hw];
                for tj in 0..t {
                    let s = (b * t + tj) * hw;
                    dw[(j * t + ti) * t + tj] += dot_f64(go, &signal[s..s + hw]);
                }
            }
        }
    }
    dw
}

fn broadcast_channels(g: Geom, per_batch: &[f32], scale: f32) -> Vec<f32> {
    let span = g.t * g.hw();
    let mut out = vec![0.0f32; g.b * g.c * span];
    for b in 0..g.b {
        let src = &per_batch[b * span..(b + 1) * span];
        for c in 0..g.c {
            let dst = &mut out[(b * g.c + c) * span..(b * g.c + c + 1) * span];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s * scale;
            }
        }
    }
    out
}

pub fn tfc_shared_backward(
    v: &Tensor,
    k: &TfcKernel,
    grad_out: &[f32],
    need_input: bool,
) -> Result<(Option<Tensor>, Tensor)> {
    let g = Geom::of(v)?;
    check_fixed_length(k.time(), g.t)?;
    let span = g.t * g.hw();
    let x = v.data();
    let mut dw = vec![0.0f64; k.param_count()];
    for c in 0..g.c {
        let mut slice = vec![0.0f32; g.b * span];
        for b in 0..g.b {
            slice[b * span..(b + 1) * span].copy_from_slice(&x[(b * g.c + c) * span..(b * g.c + c + 1) * span]);
        }
        for (d, part) in dw.iter_mut().zip(tfc_weight_grad(g, k, grad_out, &slice)) {
            *d += part;
        }
    }
    let dv = if need_input {
        let ds = tfc_input_grad(g, k, grad_out);
        Some(Tensor::new(v.shape(), broadcast_channels(g, &ds, 1.0))?)
    } else {
        None
    };
    let dw = Tensor::new(k.weights().shape(), dw.into_iter().map(|x| x as f32).collect())?;
    Ok((dv, dw))
}

/// Channel sum (or mean) per `(b, t, hw)`, always accumulated in f64.
fn channel_reduce<A: Accum>(v: &Tensor, g: Geom, divide: bool) -> Vec<A> {
    let span = g.t * g.hw();
    let x = v.data();
    let mut out = vec![A::default(); g.b * span];
    let mut acc = vec![0.0f64; span];
    for b in 0..g.b {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for c in 0..g.c {
            for (a, &xv) in acc.iter_mut().zip(&x[(b * g.c + c) * span..(b * g.c + c + 1) * span]) {
                *a += xv as f64;
            }
        }
        for (o, &a) in out[b * span..(b + 1) * span].iter_mut().zip(&acc) {
            let val = if divide { a / g.c as f64 } else { a };
            *o = A::from_f64(val);
        }
    }
    out
}

/// `O_j = W_j · S` for a reduced per-batch signal `S` of shape `(B, T, HW)`.
fn apply_shared_matrices<A: Accum>(
    signal: &[A],
    g: Geom,
    k: &TfcKernel,
    counter: &mut Option<&mut MulCounter>,
) -> Vec<A> {
    let (t, hw, c_out) = (g.t, g.hw(), k.c_out());
    let w = k.weights().data();
    let mut out = vec![A::default(); g.b * c_out * t * hw];
    for b in 0..g.b {
        for j in 0..c_out {
            for ti in 0..t {
                let dst_lo = ((b * c_out + j) * t + ti) * hw;
                for tj in 0..t {
                    let wv = A::from_f32(w[(j * t + ti) * t + tj]);
                    let src = &signal[(b * t + tj) * hw..(b * t + tj + 1) * hw];
                    for (d, &s) in out[dst_lo..dst_lo + hw].iter_mut().zip(src) {
                        *d += wv * s;
                    }
                    MulCounter::add(counter, hw);
                }
            }
        }
    }
    out
}

fn tfc_reordered_acc<A: Accum>(
    v: &Tensor,
    k: &TfcKernel,
    mut counter: Option<&mut MulCounter>,
) -> Result<(Vec<A>, [usize; 5])> {
    let g = Geom::of(v)?;
    check_fixed_length(k.time(), g.t)?;
    let s = channel_reduce::<A>(v, g, false);
    Ok((apply_shared_matrices(&s, g, k, &mut counter), g.out_shape(k.c_out())))
}

/// `O_j = W_j · Σ_c V_c`: channel sum first, so the matrix is applied once per output channel.
pub fn tfc_reordered(v: &Tensor, k: &TfcKernel) -> Result<Tensor> {
    tfc_reordered_ext(v, k, Precision::F32, None)
}

pub fn tfc_reordered_ext(
    v: &Tensor,
    k: &TfcKernel,
    precision: Precision,
    counter: Option<&mut MulCounter>,
) -> Result<Tensor> {
    match precision {
        Precision::F32 => {
            let (acc, s) = tfc_reordered_acc::<f32>(v, k, counter)?;
            finish(acc, &s)
        }
        Precision::F64 => {
            let (acc, s) = tfc_reordered_acc::<f64>(v, k, counter)?;
            finish(acc, &s)
        }
    }
}

pub fn tfc_reordered_f64(v: &Tensor, k: &TfcKernel) -> Result<Vec<f64>> {
    Ok(tfc_reordered_acc::<f64>(v, k, None)?.0)
}

pub fn tfc_reordered_backward(
    v: &Tensor,
    k: &TfcKernel,
    grad_out: &[f32],
    need_input: bool,
) -> Result<(Option<Tensor>, Tensor)> {
    tfc_reduced_backward(v, k, grad_out, need_input, false)
}

fn tfc_reduced_backward(
    v: &Tensor,
    k: &TfcKernel,
    grad_out: &[f32],
    need_input: bool,
    mean: bool,
) -> Result<(Option<Tensor>, Tensor)> {
    let g = Geom::of(v)?;
    check_fixed_length(k.time(), g.t)?;
    let s = channel_reduce::<f32>(v, g, mean);
    let dw = tfc_weight_grad(g, k, grad_out, &s);
    let dv = if need_input {
        let ds = tfc_input_grad(g, k, grad_out);
        let scale = if mean { 1.0 / g.c as f32 } else { 1.0 };
        Some(Tensor::new(v.shape(), broadcast_channels(g, &ds, scale))?)
    } else {
        None
    };
    let dw = Tensor::new(k.weights().shape(), dw.into_iter().map(|x| x as f32).collect())?;
    Ok((dv, dw))
}

fn tfc_acc<A: Accum>(v: &Tensor, k: &TfcKernel, mut counter: Option<&mut MulCounter>) -> Result<(Vec<A>, [usize; 5])> {
    let g = Geom::of(v)?;
    check_fixed_length(k.time(), g.t)?;
    let m = channel_reduce::<A>(v, g, true);
    Ok((apply_shared_matrices(&m, g, k, &mut counter), g.out_shape(k.c_out())))
}

/// The production TFC operator: `O_j = W_j · mean_c(V_c)`, bias-free.
///
/// Rejects any clip whose length differs from the kernel's bound `T`.
pub fn tfc(v: &Tensor, k: &TfcKernel) -> Result<Tensor> {
    tfc_ext(v, k, Precision::F32, None)
}

pub fn tfc_ext(v: &Tensor, k: &TfcKernel, precision: Precision, counter: Option<&mut MulCounter>) -> Result<Tensor> {
    match precision {
        Precision::F32 => {
            let (acc, s) = tfc_acc::<f32>(v, k, counter)?;
            finish(acc, &s)
        }
        Precision::F64 => {
            let (acc, s) = tfc_acc::<f64>(v, k, counter)?;
            finish(acc, &s)
        }
    }
}

pub fn tfc_backward(v: &Tensor, k: &TfcKernel, grad_out: &[f32], need_input: bool) -> Result<(Option<Tensor>, Tensor)> {
    tfc_reduced_backward(v, k, grad_out, need_input, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn unit_kernel_conv_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let v = rand_tensor(&[1, 1, 5, 2, 2], &mut rng);
        let k = TemporalConvKernel::new(Tensor::new(&[1, 1, 1], vec![1.0]).unwrap()).unwrap();
        assert_eq!(temporal_conv(&v, &k).unwrap(), v);
        let v3 = rand_tensor(&[2, 3, 4, 1, 2], &mut rng);
        let delta = TemporalConvKernel::identity(3, 3).unwrap();
        assert_eq!(temporal_conv(&v3, &delta).unwrap(), v3);
    }

    #[test]
    fn conv_errors() {
        let v = Tensor::zeros(&[1, 2, 2, 1, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let wrong_c = TemporalConvKernel::init(1, 3, 1, &mut rng).unwrap();
        assert!(matches!(temporal_conv(&v, &wrong_c), Err(Error::Shape(_))));
        let too_long = TemporalConvKernel::init(1, 2, 3, &mut rng).unwrap();
        assert!(matches!(temporal_conv(&v, &too_long), Err(Error::Shape(_))));
    }

    #[test]
    fn tfc_rejects_other_lengths() {
        let k = TfcKernel::identity(2, 4);
        for t in [1, 3, 5, 8] {
            let v = Tensor::zeros(&[1, 2, t, 1, 1]);
            match tfc(&v, &k) {
                Err(Error::TemporalLength { expected, actual }) => {
                    assert_eq!((expected, actual), (4, t));
                }
                other => panic!("expected fixed-length error, got {other:?}"),
            }
            assert!(tfc_shared(&v, &k).is_err());
            assert!(tfc_reordered(&v, &k).is_err());
        }
        let full = FullTemporalFcKernel::tied(&k, 2);
        assert!(matches!(
            full_temporal_fc(&Tensor::zeros(&[1, 2, 3, 1, 1]), &full),
            Err(Error::TemporalLength { .. })
        ));
    }

    #[test]
    fn identity_fc_sums_channels() {
        let k = TfcKernel::identity(1, 4);
        let single = Tensor::from_fn(&[1, 1, 4, 2, 2], |i| i as f32);
        assert_eq!(
            full_temporal_fc(&single, &FullTemporalFcKernel::tied(&k, 1)).unwrap(),
            single
        );
        assert_eq!(tfc_shared(&single, &k).unwrap(), single);

        let three = Tensor::full(&[1, 3, 4, 2, 2], 0.5);
        let out = full_temporal_fc(&three, &FullTemporalFcKernel::tied(&k, 3)).unwrap();
        assert!(out.data().iter().all(|&x| x == 1.5));
    }

    #[test]
    fn single_channel_reordering_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let v = rand_tensor(&[2, 1, 6, 2, 3], &mut rng);
        let k = TfcKernel::random(4, 6, &mut rng);
        assert_eq!(tfc_shared(&v, &k).unwrap(), tfc_reordered(&v, &k).unwrap());
    }

    #[test]
    fn tfc_of_identical_channels_with_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let one = rand_tensor(&[1, 1, 5, 2, 2], &mut rng);
        let mut data = Vec::new();
        for _ in 0..4 {
            data.extend_from_slice(one.data());
        }
        let v = Tensor::new(&[1, 4, 5, 2, 2], data).unwrap();
        let out = tfc(&v, &TfcKernel::identity(1, 5)).unwrap();
        assert_eq!(out, one);
    }

    #[test]
    fn degenerate_single_frame_is_channel_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let v = rand_tensor(&[2, 3, 1, 2, 2], &mut rng);
        let k = TfcKernel::new(Tensor::new(&[2, 1, 1], vec![2.0, -0.5]).unwrap()).unwrap();
        let out = tfc(&v, &k).unwrap();
        let mean = crate::tensor::mean_over_channels(&crate::tensor::permute_to_temporal(&v).unwrap()).unwrap();
        for b in 0..2 {
            for p in 0..4 {
                let m = mean.data()[b * 4 + p];
                assert!((out.data()[(b * 2) * 4 + p] - 2.0 * m).abs() < 1e-6);
                assert!((out.data()[(b * 2 + 1) * 4 + p] + 0.5 * m).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rdw_identity_and_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let v = rand_tensor(&[2, 3, 5, 2, 2], &mut rng);
        let zero = DepthwiseTemporalKernel::zeros(3, 3).unwrap();
        assert_eq!(rdw(&v, &zero).unwrap(), v);
        let mut delta = DepthwiseTemporalKernel::zeros(3, 3).unwrap();
        for c in 0..3 {
            delta.weights_mut().data_mut()[c * 3 + 1] = 1.0;
        }
        let out = rdw(&v, &delta).unwrap();
        for (o, x) in out.data().iter().zip(v.data()) {
            assert_eq!(*o, 2.0 * x);
        }
        let wrong = DepthwiseTemporalKernel::zeros(2, 3).unwrap();
        assert!(matches!(rdw(&v, &wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn reordered_saves_channel_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let v = rand_tensor(&[2, 8, 4, 2, 2], &mut rng);
        let k = TfcKernel::random(3, 4, &mut rng);
        let (mut shared, mut reordered) = (MulCounter::new(), MulCounter::new());
        tfc_shared_ext(&v, &k, Precision::F32, Some(&mut shared)).unwrap();
        tfc_reordered_ext(&v, &k, Precision::F32, Some(&mut reordered)).unwrap();
        assert_eq!(shared.multiplies, 8 * reordered.multiplies);
        assert_eq!(reordered.multiplies, (2 * 3 * 4 * 4 * 4) as u64);
    }
}
