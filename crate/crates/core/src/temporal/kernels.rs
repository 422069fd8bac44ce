use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::container;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Scale of the Gaussian perturbation added to the identity when a TFC kernel is initialised.
pub const TFC_INIT_NOISE: f32 = 0.01;

fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt() as f32;
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound))
}

/// Dense temporal convolution weights `[C_out, C_in, K]` with odd `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalConvKernel {
    weights: Tensor,
}

impl TemporalConvKernel {
    pub fn new(weights: Tensor) -> Result<Self> {
        weights.expect_rank(3, "TemporalConvKernel")?;
        if weights.dim(2).is_multiple_of(2) {
            return Err(Error::shape(format!(
                "temporal kernel extent must be odd, got {}",
                weights.dim(2)
            )));
        }
        Ok(Self { weights })
    }

    pub fn init<R: Rng + ?Sized>(c_out: usize, c_in: usize, k: usize, rng: &mut R) -> Result<Self> {
        Self::new(fan_in_uniform(&[c_out, c_in, k], c_in * k, rng))
    }

    /// `delta` on the centre tap of every diagonal channel pair.
    pub fn identity(c: usize, k: usize) -> Result<Self> {
        let mut w = Tensor::zeros(&[c, c, k]);
        for i in 0..c {
            w.data_mut()[(i * c + i) * k + k / 2] = 1.0;
        }
        Self::new(w)
    }

    pub fn c_out(&self) -> usize {
        self.weights.dim(0)
    }
    pub fn c_in(&self) -> usize {
        self.weights.dim(1)
    }
    pub fn extent(&self) -> usize {
        self.weights.dim(2)
    }
    pub fn weights(&self) -> &Tensor {
        &self.weights
    }
    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }
    pub fn param_count(&self) -> usize {
        self.weights.len()
    }
}

/// Unshared temporal fully connected weights `[C_out, C_in, T, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullTemporalFcKernel {
    weights: Tensor,
}

impl FullTemporalFcKernel {
    pub fn new(weights: Tensor) -> Result<Self> {
        weights.expect_rank(4, "FullTemporalFcKernel")?;
        if weights.dim(2) != weights.dim(3) {
            return Err(Error::shape(format!(
                "temporal FC matrices must be square, got {:?}",
                weights.shape()
            )));
        }
        Ok(Self { weights })
    }

    pub fn init<R: Rng + ?Sized>(c_out: usize, c_in: usize, t: usize, rng: &mut R) -> Result<Self> {
        Self::new(fan_in_uniform(&[c_out, c_in, t, t], c_in * t, rng))
    }

    /// Repeat a shared TFC kernel across `c_in` input channels.
    pub fn tied(shared: &TfcKernel, c_in: usize) -> Self {
        let (c_out, t) = (shared.c_out(), shared.time());
        let tt = t * t;
        let mut w = Tensor::zeros(&[c_out, c_in, t, t]);
        for j in 0..c_out {
            let src = &shared.weights().data()[j * tt..(j + 1) * tt];
            for c in 0..c_in {
                w.data_mut()[(j * c_in + c) * tt..(j * c_in + c + 1) * tt].copy_from_slice(src);
            }
        }
        Self { weights: w }
    }

    pub fn c_out(&self) -> usize {
        self.weights.dim(0)
    }
    pub fn c_in(&self) -> usize {
        self.weights.dim(1)
    }
    pub fn time(&self) -> usize {
        self.weights.dim(2)
    }
    pub fn weights(&self) -> &Tensor {
        &self.weights
    }
    pub fn param_count(&self) -> usize {
        self.weights.len()
    }
}

/// Per-output-channel `T x T` temporal mixing matrices `[C_out, T, T]`, bound to one `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfcKernel {
    weights: Tensor,
}

impl TfcKernel {
    pub fn new(weights: Tensor) -> Result<Self> {
        weights.expect_rank(3, "TfcKernel")?;
        if weights.dim(1) != weights.dim(2) {
            return Err(Error::shape(format!(
                "TFC matrices must be square, got {:?}",
                weights.shape()
            )));
        }
        Ok(Self { weights })
    }

    pub fn zeros(c_out: usize, t: usize) -> Self {
        Self {
            weights: Tensor::zeros(&[c_out, t, t]),
        }
    }

    pub fn identity(c_out: usize, t: usize) -> Self {
        let mut k = Self::zeros(c_out, t);
        for j in 0..c_out {
            for i in 0..t {
                k.weights.data_mut()[(j * t + i) * t + i] = 1.0;
            }
        }
        k
    }

    /// `I_T + 0.01 * N(0, 1)` for every output channel.
    pub fn near_identity<R: Rng + ?Sized>(c_out: usize, t: usize, rng: &mut R) -> Self {
        let mut k = Self::identity(c_out, t);
        for w in k.weights.data_mut() {
            let n: f32 = StandardNormal.sample(rng);
            *w += TFC_INIT_NOISE * n;
        }
        k
    }

    /// Dense random matrices, used by receptive-field and equivalence checks.
    pub fn random<R: Rng + ?Sized>(c_out: usize, t: usize, rng: &mut R) -> Self {
        Self {
            weights: fan_in_uniform(&[c_out, t, t], t, rng),
        }
    }

    pub fn c_out(&self) -> usize {
        self.weights.dim(0)
    }
    pub fn time(&self) -> usize {
        self.weights.dim(1)
    }
    pub fn weights(&self) -> &Tensor {
        &self.weights
    }
    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }
    pub fn param_count(&self) -> usize {
        self.weights.len()
    }
}

/// One temporal filter per channel, `[C, K]` with odd `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseTemporalKernel {
    weights: Tensor,
}

impl DepthwiseTemporalKernel {
    pub fn new(weights: Tensor) -> Result<Self> {
        weights.expect_rank(2, "DepthwiseTemporalKernel")?;
        if weights.dim(1).is_multiple_of(2) {
            return Err(Error::shape(format!(
                "depthwise kernel extent must be odd, got {}",
                weights.dim(1)
            )));
        }
        Ok(Self { weights })
    }

    /// Zero filters: a residual depthwise unit built from this starts as the identity.
    pub fn zeros(c: usize, k: usize) -> Result<Self> {
        Self::new(Tensor::zeros(&[c, k]))
    }

    pub fn init<R: Rng + ?Sized>(c: usize, k: usize, rng: &mut R) -> Result<Self> {
        Self::new(fan_in_uniform(&[c, k], k, rng))
    }

    pub fn channels(&self) -> usize {
        self.weights.dim(0)
    }
    pub fn extent(&self) -> usize {
        self.weights.dim(1)
    }
    pub fn weights(&self) -> &Tensor {
        &self.weights
    }
    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }
}

macro_rules! container_io {
    ($($ty:ty),*) => {$(
        impl $ty {
            pub fn save(&self, path: &Path) -> Result<()> {
                container::write(path, &self.weights)
            }
            pub fn load(path: &Path) -> Result<Self> {
                Self::new(container::read(path)?)
            }
        }
    )*};
}

container_io!(
    TemporalConvKernel,
    FullTemporalFcKernel,
    TfcKernel,
    DepthwiseTemporalKernel
);

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shape_validation() {
        assert!(TemporalConvKernel::new(Tensor::zeros(&[2, 2, 2])).is_err());
        assert!(TfcKernel::new(Tensor::zeros(&[2, 3, 4])).is_err());
        assert!(DepthwiseTemporalKernel::new(Tensor::zeros(&[4, 4])).is_err());
        assert!(FullTemporalFcKernel::new(Tensor::zeros(&[1, 1, 2, 3])).is_err());
    }

    #[test]
    fn param_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(TfcKernel::near_identity(64, 32, &mut rng).param_count(), 64 * 32 * 32);
        assert_eq!(
            FullTemporalFcKernel::init(3, 5, 4, &mut rng).unwrap().param_count(),
            3 * 5 * 16
        );
        assert_eq!(TemporalConvKernel::init(4, 3, 3, &mut rng).unwrap().param_count(), 36);
    }

    #[test]
    fn init_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = TemporalConvKernel::init(8, 16, 3, &mut rng).unwrap();
        let bound = (1.0f32 / 48.0).sqrt();
        assert!(k.weights().data().iter().all(|w| w.abs() <= bound));
        let tfc = TfcKernel::near_identity(2, 4, &mut rng);
        for (i, w) in tfc.weights().data().iter().enumerate() {
            let on_diag = (i % 16) / 4 == i % 4;
            let target = if on_diag { 1.0 } else { 0.0 };
            assert!((w - target).abs() < 0.1);
        }
        assert!(DepthwiseTemporalKernel::zeros(3, 3)
            .unwrap()
            .weights()
            .data()
            .iter()
            .all(|&w| w == 0.0));
    }

    #[test]
    fn kernel_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = TfcKernel::near_identity(3, 5, &mut rng);
        let p = dir.path().join("tfc.tfck");
        k.save(&p).unwrap();
        assert_eq!(TfcKernel::load(&p).unwrap(), k);
    }
}
