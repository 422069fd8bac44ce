//! Temporal operators: dense temporal convolution, the temporal fully
//! connected (TFC) family, and the residual depthwise unit.
//!
//! | operator             | multiplies                       |
//! |----------------------|----------------------------------|
//! | `temporal_conv`      | `B·C_out·H·W·T·C_in·K`           |
//! | `full_temporal_fc`   | `B·C_out·H·W·T·C_in·T`           |
//! | `tfc_shared`         | `B·C_out·H·W·T·C_in·T`           |
//! | `tfc_reordered`      | `B·C_out·H·W·T·T`                |
//! | `tfc`                | `B·C_out·H·W·T·T`                |
//! | `rdw`                | `B·C·H·W·T·K`                    |

mod kernels;
mod ops;

pub use kernels::{DepthwiseTemporalKernel, FullTemporalFcKernel, TemporalConvKernel, TfcKernel, TFC_INIT_NOISE};
pub use ops::{
    full_temporal_fc, full_temporal_fc_backward, full_temporal_fc_ext, rdw, rdw_backward, rdw_ext, temporal_conv,
    temporal_conv_backward, temporal_conv_ext, tfc, tfc_backward, tfc_ext, tfc_reordered, tfc_reordered_backward,
    tfc_reordered_ext, tfc_reordered_f64, tfc_shared, tfc_shared_backward, tfc_shared_ext, tfc_shared_f64, MulCounter,
};
