//! Tape bindings for the temporal operator family. Kernel weights are tape
//! nodes so they receive gradients like any other parameter.

use super::{BackwardRule, Tape, Var};
use crate::error::Result;
use crate::temporal::{self, DepthwiseTemporalKernel, FullTemporalFcKernel, TemporalConvKernel, TfcKernel};
use crate::tensor::Tensor;

type BackwardFn = fn(&Tensor, &Tensor, &[f32], bool) -> Result<(Option<Tensor>, Tensor)>;

struct KernelRule {
    name: &'static str,
    backward: BackwardFn,
}

impl BackwardRule for KernelRule {
    fn name(&self) -> &'static str {
        self.name
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Result<Vec<Option<Vec<f32>>>> {
        let (dv, dw) = (self.backward)(inputs[0], inputs[1], g, needs[0])?;
        Ok(vec![dv.map(Tensor::into_data), needs[1].then(|| dw.into_data())])
    }
}

macro_rules! kernel_backward {
    ($fn_name:ident, $kernel:ty, $backward:path) => {
        fn $fn_name(v: &Tensor, w: &Tensor, g: &[f32], need: bool) -> Result<(Option<Tensor>, Tensor)> {
            let k = <$kernel>::new(w.clone())?;
            $backward(v, &k, g, need)
        }
    };
}

kernel_backward!(temporal_conv_bw, TemporalConvKernel, temporal::temporal_conv_backward);
kernel_backward!(full_fc_bw, FullTemporalFcKernel, temporal::full_temporal_fc_backward);
kernel_backward!(tfc_shared_bw, TfcKernel, temporal::tfc_shared_backward);
kernel_backward!(tfc_reordered_bw, TfcKernel, temporal::tfc_reordered_backward);
kernel_backward!(tfc_bw, TfcKernel, temporal::tfc_backward);
kernel_backward!(rdw_bw, DepthwiseTemporalKernel, temporal::rdw_backward);

impl Tape {
    fn kernel_op(&mut self, x: Var, w: Var, out: Tensor, name: &'static str, backward: BackwardFn) -> Var {
        self.record(vec![x, w], out, Box::new(KernelRule { name, backward }))
    }

    pub fn temporal_conv(&mut self, x: Var, w: Var) -> Result<Var> {
        let k = TemporalConvKernel::new(self.value(w).clone())?;
        let out = temporal::temporal_conv(self.value(x), &k)?;
        Ok(self.kernel_op(x, w, out, "temporal_conv", temporal_conv_bw))
    }

    pub fn full_temporal_fc(&mut self, x: Var, w: Var) -> Result<Var> {
        let k = FullTemporalFcKernel::new(self.value(w).clone())?;
        let out = temporal::full_temporal_fc(self.value(x), &k)?;
        Ok(self.kernel_op(x, w, out, "full_temporal_fc", full_fc_bw))
    }

    pub fn tfc_shared(&mut self, x: Var, w: Var) -> Result<Var> {
        let k = TfcKernel::new(self.value(w).clone())?;
        let out = temporal::tfc_shared(self.value(x), &k)?;
        Ok(self.kernel_op(x, w, out, "tfc_shared", tfc_shared_bw))
    }

    pub fn tfc_reordered(&mut self, x: Var, w: Var) -> Result<Var> {
        let k = TfcKernel::new(self.value(w).clone())?;
        let out = temporal::tfc_reordered(self.value(x), &k)?;
        Ok(self.kernel_op(x, w, out, "tfc_reordered", tfc_reordered_bw))
    }

    pub fn tfc(&mut self, x: Var, w: Var) -> Result<Var> {
        let k = TfcKernel::new(self.value(w).clone())?;
        let out = temporal::tfc(self.value(x), &k)?;
        Ok(self.kernel_op(x, w, out, "tfc", tfc_bw))
    }

    pub fn rdw(&mut self, x: Var, w: Var) -> Result<Var> {
        let k = DepthwiseTemporalKernel::new(self.value(w).clone())?;
        let out = temporal::rdw(self.value(x), &k)?;
        Ok(self.kernel_op(x, w, out, "rdw", rdw_bw))
    }
}
