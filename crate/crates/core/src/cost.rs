//! Closed-form parameter and FLOP counts. One multiply-accumulate counts as
//! one FLOP; residual additions and channel sums are not counted.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{HeadKind, NetworkSpec, PathStep, TEMPORAL_KERNEL};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCost {
    pub label: String,
    pub params: u64,
    pub flops: u64,
    /// A fractional factor of the closed form was rounded down.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub rounded: bool,
}

impl OpCost {
    fn new(label: impl Into<String>, params: u64, flops: u64) -> Self {
        Self {
            label: label.into(),
            params,
            flops,
            rounded: false,
        }
    }
}

fn positive(dims: &[(&str, usize)]) -> Result<()> {
    match dims.iter().find(|(_, v)| *v == 0) {
        Some((name, _)) => Err(Error::Usage(format!("cost dimension {name} must be at least 1"))),
        None => Ok(()),
    }
}

/// `(n / d, n % d != 0)`
fn div_floor(n: u64, d: u64) -> (u64, bool) {
    (n / d, !n.is_multiple_of(d))
}

/// Temporal convolution: `C_out·C_in·K` params, `B·C_out·H·W·T·C_in·K` FLOPs.
pub fn cost_temporal_conv(
    b: usize,
    c_in: usize,
    c_out: usize,
    t: usize,
    h: usize,
    w: usize,
    k: usize,
) -> Result<OpCost> {
    positive(&[
        ("B", b),
        ("C_in", c_in),
        ("C_out", c_out),
        ("T", t),
        ("H", h),
        ("W", w),
        ("K", k),
    ])?;
    let [b, ci, co, t, h, w, k] = [b, c_in, c_out, t, h, w, k].map(|v| v as u64);
    Ok(OpCost::new("temporal_conv", co * ci * k, b * co * h * w * t * ci * k))
}

/// Unshared temporal fully connected map: `C_out·C_in·T²` params, `B·C_out·H·W·T·C_in·T` FLOPs.
pub fn cost_full_fc(b: usize, c_in: usize, c_out: usize, t: usize, h: usize, w: usize) -> Result<OpCost> {
    positive(&[("B", b), ("C_in", c_in), ("C_out", c_out), ("T", t), ("H", h), ("W", w)])?;
    let [b, ci, co, t, h, w] = [b, c_in, c_out, t, h, w].map(|v| v as u64);
    Ok(OpCost::new(
        "full_temporal_fc",
        co * ci * t * t,
        b * co * h * w * t * ci * t,
    ))
}

/// Channel-shared kernels applied before the channel sum: `C_out·T²` params,
/// but still `B·C_out·H·W·T·C_in·T` FLOPs.
pub fn cost_tfc_shared(b: usize, c_in: usize, c_out: usize, t: usize, h: usize, w: usize) -> Result<OpCost> {
    let full = cost_full_fc(b, c_in, c_out, t, h, w)?;
    let [co, t] = [c_out, t].map(|v| v as u64);
    Ok(OpCost::new("tfc_shared", co * t * t, full.flops))
}

/// TFC (reordered or normalized): `C_out·T²` params, `B·C_out·H·W·T²` FLOPs; no `C_in` term.
pub fn cost_tfc(b: usize, c_in: usize, c_out: usize, t: usize, h: usize, w: usize) -> Result<OpCost> {
    positive(&[("B", b), ("C_in", c_in), ("C_out", c_out), ("T", t), ("H", h), ("W", w)])?;
    let [b, co, t, h, w] = [b, c_out, t, h, w].map(|v| v as u64);
    Ok(OpCost::new("tfc", co * t * t, b * co * h * w * t * t))
}

/// Residual depthwise temporal unit: `C·K` params, `B·C·H·W·T·K` FLOPs.
pub fn cost_rdw(b: usize, c: usize, t: usize, h: usize, w: usize, k: usize) -> Result<OpCost> {
    positive(&[("B", b), ("C", c), ("T", t), ("H", h), ("W", w), ("K", k)])?;
    let [b, c, t, h, w, k] = [b, c, t, h, w, k].map(|v| v as u64);
    Ok(OpCost::new("rdw", c * k, b * c * h * w * t * k))
}

/// SE operation, literal form: `C_in·C_in/8` params, `B·C_in·C_in/8` FLOPs.
pub fn cost_se(b: usize, c_in: usize) -> Result<OpCost> {
    positive(&[("B", b), ("C_in", c_in)])?;
    let [b, c] = [b, c_in].map(|v| v as u64);
    let (params, r1) = div_floor(c * c, 8);
    let (flops, r2) = div_floor(b * c * c, 8);
    Ok(OpCost {
        rounded: r1 || r2,
        ..OpCost::new("se", params, flops)
    })
}

/// Nonlocal operation, literal form: `C_in·C_in/2·4` params,
/// `B·C_in/2·H·W·T·C_in·4 + B·C_in·(THW)²` FLOPs.
pub fn cost_nonlocal(b: usize, c_in: usize, t: usize, h: usize, w: usize) -> Result<OpCost> {
    positive(&[("B", b), ("C_in", c_in), ("T", t), ("H", h), ("W", w)])?;
    let [b, c, t, h, w] = [b, c_in, t, h, w].map(|v| v as u64);
    let half = c / 2;
    let thw = t * h * w;
    Ok(OpCost {
        rounded: c % 2 != 0,
        ..OpCost::new("nonlocal", c * half * 4, b * half * thw * c * 4 + b * c * thw * thw)
    })
}

/// Temporal nonlocal operation, literal form: `C_in·C_in/4·3 + (C_in/4)²` params,
/// `B·C_in/4·H·W·T·C_in·3.25 + B·C_in/2·T·T·H·W` FLOPs.
pub fn cost_temporal_nonlocal(b: usize, c_in: usize, t: usize, h: usize, w: usize) -> Result<OpCost> {
    positive(&[("B", b), ("C_in", c_in), ("T", t), ("H", h), ("W", w)])?;
    let [b, c, t, h, w] = [b, c_in, t, h, w].map(|v| v as u64);
    let (q, half) = (c / 4, c / 2);
    let (proj, r) = div_floor(b * q * h * w * t * c * 13, 4);
    Ok(OpCost {
        rounded: c % 4 != 0 || r,
        ..OpCost::new("temporal_nonlocal", c * q * 3 + q * q, proj + b * half * t * t * h * w)
    })
}

/// Spatial convolution `1 x k x k` evaluated at output size `ho x wo`.
#[allow(clippy::too_many_arguments)]
fn cost_conv(
    label: String,
    b: usize,
    c_in: usize,
    c_out: usize,
    kt: usize,
    k: usize,
    t: usize,
    ho: usize,
    wo: usize,
) -> OpCost {
    let [b, ci, co, kt, k, t, ho, wo] = [b, c_in, c_out, kt, k, t, ho, wo].map(|v| v as u64);
    let params = co * ci * kt * k * k;
    OpCost::new(label, params, params * b * t * ho * wo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub ops: Vec<OpCost>,
    pub total_params: u64,
    pub total_flops: u64,
    /// Named ratios, e.g. against a baseline.
    #[serde(default)]
    pub ratios: Vec<(String, f64)>,
}

impl CostReport {
    pub fn from_ops(ops: Vec<OpCost>) -> Self {
        let total_params = ops.iter().map(|o| o.params).sum();
        let total_flops = ops.iter().map(|o| o.flops).sum();
        Self {
            ops,
            total_params,
            total_flops,
            ratios: Vec::new(),
        }
    }

    /// Sum of the ops whose label ends with `suffix`.
    pub fn subtotal(&self, suffix: &str) -> (u64, u64) {
        self.ops
            .iter()
            .filter(|o| o.label.ends_with(suffix))
            .fold((0, 0), |(p, f), o| (p + o.params, f + o.flops))
    }

    /// Record `self / baseline` ratios of totals under `name`.
    pub fn with_baseline(mut self, name: &str, baseline: &CostReport) -> Self {
        self.ratios.push((
            format!("params / {name}"),
            self.total_params as f64 / baseline.total_params as f64,
        ));
        self.ratios.push((
            format!("flops / {name}"),
            self.total_flops as f64 / baseline.total_flops as f64,
        ));
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table.
    pub fn to_text(&self) -> String {
        let width = self.ops.iter().map(|o| o.label.len()).max().unwrap_or(0).max(5);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>14}  {:>18}", "op", "params", "flops");
        for o in &self.ops {
            let mark = if o.rounded { " *" } else { "" };
            let _ = writeln!(s, "{:<width$}  {:>14}  {:>18}{mark}", o.label, o.params, o.flops);
        }
        let _ = writeln!(
            s,
            "{:<width$}  {:>14}  {:>18}",
            "total", self.total_params, self.total_flops
        );
        for (name, r) in &self.ratios {
            let _ = writeln!(s, "{name}: {r:.6}");
        }
        if self.ops.iter().any(|o| o.rounded) {
            let _ = writeln!(s, "* fractional factor rounded down");
        }
        s
    }
}

/// Per-operator costs of a network for a `batch x 3 x T x height x width` input.
/// Parameter totals include batch-norm scale/shift and the classifier bias,
/// so they equal the built network's parameter count.
pub fn cost_network(net: &NetworkSpec, batch: usize, height: usize, width: usize) -> Result<CostReport> {
    positive(&[("batch", batch), ("height", height), ("width", width)])?;
    net.validate()?;
    let t = net.temporal_length;
    let down = |n: usize, s: usize| (n - 1) / s + 1;
    let mut ops = Vec::new();
    let bn = |label: String, c: usize| OpCost::new(label, 2 * c as u64, 0);

    let stem = net.stem.conv();
    let (mut h, mut w) = (down(height, stem.stride), down(width, stem.stride));
    ops.push(cost_conv(
        "stem.conv".into(),
        batch,
        stem.c_in,
        stem.c_out,
        1,
        stem.kh,
        t,
        h,
        w,
    ));
    ops.push(bn("stem.bn".into(), stem.c_out));
    if net.stem.max_pool {
        (h, w) = (down(h, 2), down(w, 2));
    }
    for (si, stage) in net.stages.iter().enumerate() {
        for (bi, block) in stage.blocks.iter().enumerate() {
            let base = format!("s{si}.b{bi}");
            let (h_in, w_in) = (h, w);
            let (mut nconv, mut nrdw) = (0, 0);
            for (k, step) in block.path().into_iter().enumerate() {
                match step {
                    PathStep::Conv { shape, .. } => {
                        nconv += 1;
                        let label = format!("{base}.conv{nconv}");
                        (h, w) = (down(h, shape.stride), down(w, shape.stride));
                        if shape.is_temporal() {
                            let c = cost_temporal_conv(batch, shape.c_in, shape.c_out, t, h, w, shape.kt)?;
                            ops.push(OpCost { label, ..c });
                        } else {
                            ops.push(cost_conv(
                                label,
                                batch,
                                shape.c_in,
                                shape.c_out,
                                shape.kt,
                                shape.kh,
                                t,
                                h,
                                w,
                            ));
                        }
                        if k == 0 && block.tfc {
                            let c = cost_tfc(batch, block.c_in, shape.c_out, t, h, w)?;
                            ops.push(OpCost {
                                label: format!("{base}.conv{nconv}.tfc"),
                                ..c
                            });
                        }
                        ops.push(bn(format!("{base}.conv{nconv}.bn"), shape.c_out));
                    }
                    PathStep::Rdw { channels } => {
                        nrdw += 1;
                        let c = cost_rdw(batch, channels, t, h, w, TEMPORAL_KERNEL)?;
                        ops.push(OpCost {
                            label: format!("{base}.rdw{nrdw}"),
                            ..c
                        });
                    }
                }
            }
            if let Some(p) = block.projection() {
                let (ho, wo) = (down(h_in, p.stride), down(w_in, p.stride));
                ops.push(cost_conv(
                    format!("{base}.proj"),
                    batch,
                    p.c_in,
                    p.c_out,
                    1,
                    1,
                    t,
                    ho,
                    wo,
                ));
                ops.push(bn(format!("{base}.proj.bn"), p.c_out));
            }
        }
    }
    let (c, k) = (net.feature_channels() as u64, net.num_classes as u64);
    let rows = match net.head {
        HeadKind::GlobalPool => batch as u64,
        HeadKind::FrameScores => (batch * t) as u64,
    };
    ops.push(OpCost::new("fc", k * c + k, rows * k * c));
    Ok(CostReport::from_ops(ops))
}

/// The operator-level ratios: full-FC over temporal-conv parameters (`T²/K`),
/// TFC over temporal-conv FLOPs (`T/(C_in·K)`), and the reorder saving (`C_in`).
pub fn operator_ratios(c_in: usize, c_out: usize, t: usize, k: usize) -> Result<CostReport> {
    let conv = cost_temporal_conv(1, c_in, c_out, t, 1, 1, k)?;
    let full = cost_full_fc(1, c_in, c_out, t, 1, 1)?;
    let shared = cost_tfc_shared(1, c_in, c_out, t, 1, 1)?;
    let tfc = cost_tfc(1, c_in, c_out, t, 1, 1)?;
    let ratios = vec![
        (
            "full_fc params / temporal_conv params".to_string(),
            full.params as f64 / conv.params as f64,
        ),
        (
            "tfc flops / temporal_conv flops".to_string(),
            tfc.flops as f64 / conv.flops as f64,
        ),
        (
            "tfc_shared flops / tfc flops".to_string(),
            shared.flops as f64 / tfc.flops as f64,
        ),
    ];
    let mut report = CostReport::from_ops(vec![conv, full, shared, tfc]);
    report.ratios = ratios;
    Ok(report)
}
