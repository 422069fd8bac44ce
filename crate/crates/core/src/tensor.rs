//! Dense row-major float32 tensors and the eager (tape-free) forward kernels
//! shared by the autograd layer.

use crate::error::{Error, Result};
use crate::numeric::{dot_f64, sum_f64};

/// Dense row-major tensor. The canonical video layout is `(B, C, T, H, W)`;
/// lower-rank views such as `(B·H·W, C, T)` are separate materialised tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
}

/// The universal value type of the framework.
pub type VideoTensor = Tensor;

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape(format!("zero-sized axis in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {numel} elements, buffer has {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero-sized axis in {shape:?}");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
            grad: None,
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            grad: None,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(&mut f).collect();
        Self::new(shape, data).expect("from_fn shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f32>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape(format!(
                "gradient of length {} for tensor of shape {:?}",
                grad.len(),
                self.shape
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<f32>> {
        self.grad.take()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), n);
        }
        Ok(self)
    }

    /// The scalar value of a one-element tensor.
    pub fn item(&self) -> Result<f32> {
        if self.data.len() != 1 {
            return Err(Error::shape(format!("item() on tensor of shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::shape(format!(
                "{what} expects a rank-{rank} tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    /// `(B, C, T, H, W)` of a rank-5 tensor.
    pub fn dims5(&self) -> Result<(usize, usize, usize, usize, usize)> {
        self.expect_rank(5, "video op")?;
        let s = &self.shape;
        Ok((s[0], s[1], s[2], s[3], s[4]))
    }

    pub fn same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

/// `(B, C, T, H, W) -> (B·H·W, C, T)`; element `(b,c,t,h,w)` lands at `((b·H+h)·W+w, c, t)`.
pub fn permute_to_temporal(v: &Tensor) -> Result<Tensor> {
    let (b, c, t, h, w) = v.dims5()?;
    let src = v.data();
    let mut out = vec![0.0f32; src.len()];
    let hw = h * w;
    for bi in 0..b {
        for ci in 0..c {
            for ti in 0..t {
                let base = ((bi * c + ci) * t + ti) * hw;
                for p in 0..hw {
                    let n = bi * hw + p;
                    out[(n * c + ci) * t + ti] = src[base + p];
                }
            }
        }
    }
    Tensor::new(&[b * hw, c, t], out)
}

/// Inverse of [`permute_to_temporal`].
pub fn permute_from_temporal(v: &Tensor, batch: usize, height: usize, width: usize) -> Result<Tensor> {
    v.expect_rank(3, "permute_from_temporal")?;
    let (n, c, t) = (v.dim(0), v.dim(1), v.dim(2));
    let hw = height * width;
    if batch == 0 || hw == 0 || n != batch * hw {
        return Err(Error::shape(format!(
            "cannot split {n} rows into batch {batch} x {height} x {width}"
        )));
    }
    let src = v.data();
    let mut out = vec![0.0f32; src.len()];
    for bi in 0..batch {
        for p in 0..hw {
            let row = bi * hw + p;
            for ci in 0..c {
                for ti in 0..t {
                    out[((bi * c + ci) * t + ti) * hw + p] = src[(row * c + ci) * t + ti];
                }
            }
        }
    }
    Tensor::new(&[batch, c, t, height, width], out)
}

/// `(N, C, T) -> (N, T)`, averaging over channels in float64, channel 0 first.
pub fn mean_over_channels(v: &Tensor) -> Result<Tensor> {
    v.expect_rank(3, "mean_over_channels")?;
    let (n, c, t) = (v.dim(0), v.dim(1), v.dim(2));
    let src = v.data();
    let mut out = vec![0.0f32; n * t];
    let mut acc = vec![0.0f64; t];
    for ni in 0..n {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for ci in 0..c {
            let row = &src[(ni * c + ci) * t..(ni * c + ci + 1) * t];
            for (a, &x) in acc.iter_mut().zip(row) {
                *a += x as f64;
            }
        }
        for (o, a) in out[ni * t..(ni + 1) * t].iter_mut().zip(&acc) {
            *o = (*a / c as f64) as f32;
        }
    }
    Tensor::new(&[n, t], out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.same_shape(b, "add")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape(), data)
}

pub fn scale(a: &Tensor, alpha: f32) -> Tensor {
    let data = a.data().iter().map(|x| x * alpha).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

pub fn relu(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

/// Plain `(M, K) x (K, N)` product with float64 dot products.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.expect_rank(2, "matmul lhs")?;
    b.expect_rank(2, "matmul rhs")?;
    let (m, k) = (a.dim(0), a.dim(1));
    let (k2, n) = (b.dim(0), b.dim(1));
    if k != k2 {
        return Err(Error::shape(format!("matmul inner dimensions {k} and {k2} differ")));
    }
    let bt = transpose2(b.data(), k, n);
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let row = &a.data()[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot_f64(row, &bt[j * k..(j + 1) * k]) as f32;
        }
    }
    Tensor::new(&[m, n], out)
}

pub(crate) fn transpose2(src: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

pub fn sum(a: &Tensor) -> f32 {
    sum_f64(a.data()) as f32
}

/// `(B, C, T, H, W) -> (B, C)`: mean over time and space.
pub fn global_avg_pool_3d(v: &Tensor) -> Result<Tensor> {
    let (b, c, t, h, w) = v.dims5()?;
    let vol = t * h * w;
    let out = v
        .data()
        .chunks_exact(vol)
        .map(|chunk| (sum_f64(chunk) / vol as f64) as f32)
        .collect();
    Tensor::new(&[b, c], out)
}

/// Mean softmax cross-entropy of `(B, K)` logits against integer labels.
/// Returns the loss and the row-wise softmax probabilities.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f32, Vec<f32>)> {
    logits.expect_rank(2, "softmax_cross_entropy")?;
    let (b, k) = (logits.dim(0), logits.dim(1));
    if labels.len() != b {
        return Err(Error::shape(format!("{} labels for a batch of {b}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::shape(format!("label {bad} out of range for {k} classes")));
    }
    let mut probs = vec![0.0f32; b * k];
    let mut total = 0.0f64;
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x)) as f64;
        let mut denom = 0.0f64;
        for &x in row {
            denom += (x as f64 - max).exp();
        }
        for (j, &x) in row.iter().enumerate() {
            probs[i * k + j] = ((x as f64 - max).exp() / denom) as f32;
        }
        total += denom.ln() + max - row[label] as f64;
    }
    Ok(((total / b as f64) as f32, probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[2, 0], vec![]).is_err());
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn permute_singleton() {
        let v = Tensor::new(&[1, 1, 1, 1, 1], vec![4.5]).unwrap();
        let p = permute_to_temporal(&v).unwrap();
        assert_eq!(p.shape(), &[1, 1, 1]);
        assert_eq!(p.data(), &[4.5]);
    }

    #[test]
    fn permute_shape_and_placement() {
        let v = Tensor::from_fn(&[2, 3, 4, 5, 6], |i| i as f32);
        let p = permute_to_temporal(&v).unwrap();
        assert_eq!(p.shape(), &[60, 3, 4]);
        let (bb, cc, tt, hh, ww) = (1, 2, 3, 4, 5);
        let src = (((bb * 3 + cc) * 4 + tt) * 5 + hh) * 6 + ww;
        let row = (bb * 5 + hh) * 6 + ww;
        assert_eq!(p.data()[(row * 3 + cc) * 4 + tt], src as f32);
    }

    #[test]
    fn permute_rejects_rank() {
        let v = Tensor::zeros(&[2, 3, 4]);
        assert!(matches!(permute_to_temporal(&v), Err(Error::Shape(_))));
    }

    #[test]
    fn channel_mean_cases() {
        let single = Tensor::from_fn(&[2, 1, 3], |i| i as f32 * 0.5);
        let m = mean_over_channels(&single).unwrap();
        assert_eq!(m.data(), single.data());

        let same = Tensor::full(&[2, 4, 3], 1.25);
        assert!(mean_over_channels(&same).unwrap().data().iter().all(|&x| x == 1.25));

        // v[., c, .] = c for c in {0,1,2}
        let ramp = Tensor::from_fn(&[2, 3, 5], |i| ((i / 5) % 3) as f32);
        assert!(mean_over_channels(&ramp).unwrap().data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn small_ops() {
        let r = relu(&Tensor::new(&[2], vec![-1.0, 2.0]).unwrap());
        assert_eq!(r.data(), &[0.0, 2.0]);

        let c = Tensor::full(&[2, 3, 2, 2, 2], 0.75);
        let p = global_avg_pool_3d(&c).unwrap();
        assert_eq!(p.shape(), &[2, 3]);
        assert!(p.data().iter().all(|&x| x == 0.75));

        for k in [2usize, 5, 16] {
            let logits = Tensor::full(&[3, k], 0.3);
            let (loss, _) = softmax_cross_entropy(&logits, &[0, 1, k - 1]).unwrap();
            assert!((loss as f64 - (k as f64).ln()).abs() < 1e-6);
        }

        let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(&[2, 1], vec![1.0, -1.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[-1.0, -1.0]);
        assert!(matmul(&b, &b).is_err());
    }

    proptest! {
        #[test]
        fn permute_round_trip_is_bitwise(
            b in 1usize..3, c in 1usize..4, t in 1usize..5, h in 1usize..4, w in 1usize..4,
            seed in any::<u64>(),
        ) {
            let mut s = seed;
            let v = Tensor::from_fn(&[b, c, t, h, w], |_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f32::from_bits(((s >> 41) as u32) | 0x3f00_0000) - 1.0
            });
            let back = permute_from_temporal(&permute_to_temporal(&v).unwrap(), b, h, w).unwrap();
            prop_assert_eq!(
                back.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                v.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }

        #[test]
        fn reductions_are_deterministic(xs in proptest::collection::vec(-1e3f32..1e3, 1..64)) {
            let n = xs.len();
            let t = Tensor::new(&[n], xs).unwrap();
            prop_assert_eq!(sum(&t).to_bits(), sum(&t.clone()).to_bits());
        }
    }
}
