//! The ablation matrix: sampling strategy and TFC insertion on the mini
//! networks, several seeds each, with the directional checks on the results.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{Architecture, NetworkConfig, TfcPolicy};
use crate::sampling::Strategy;

use super::config::TrainConfig;
use super::metrics::MetricsRow;
use super::run::{train_on, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub name: &'static str,
    pub arch: Architecture,
    pub tfc: TfcPolicy,
    pub sampling: Strategy,
}

pub const V3D_VIDEO: &str = "v3d-video";
pub const V3D_CLIP: &str = "v3d-clip";
pub const TFC_V3D_VIDEO: &str = "tfc-v3d-video";
pub const TSN_VIDEO: &str = "tsn-video";
pub const TFC_TSN_VIDEO: &str = "tfc-tsn-video";

pub fn standard_variants() -> Vec<Variant> {
    let v = |name, arch, tfc, sampling| Variant {
        name,
        arch,
        tfc,
        sampling,
    };
    vec![
        v(V3D_VIDEO, Architecture::V3d, TfcPolicy::None, Strategy::Video),
        v(V3D_CLIP, Architecture::V3d, TfcPolicy::None, Strategy::Clip),
        v(
            TFC_V3D_VIDEO,
            Architecture::V3d,
            TfcPolicy::V3d { phase: 0 },
            Strategy::Video,
        ),
        v(TSN_VIDEO, Architecture::Tsn, TfcPolicy::None, Strategy::Video),
        v(TFC_TSN_VIDEO, Architecture::Tsn, TfcPolicy::Tsn, Strategy::Video),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: String,
    pub seed: u64,
    pub val: MetricsRow,
    pub seconds: f64,
}

/// `base` with the variant's network and sampling, the seed, and an output
/// directory `<base.out>/<variant>-s<seed>`.
pub fn variant_config(base: &TrainConfig, variant: &Variant, seed: u64) -> TrainConfig {
    let mut network = NetworkConfig {
        arch: variant.arch,
        tfc: variant.tfc,
        ..base.network.clone()
    };
    network.tfc = variant.tfc;
    TrainConfig {
        network,
        sampling: variant.sampling,
        seed,
        out: base.out.join(format!("{}-s{seed}", variant.name)),
        ..base.clone()
    }
}

/// Train every variant for every seed, reporting each finished run.
pub fn run_matrix(
    base: &TrainConfig,
    data: &Dataset,
    variants: &[Variant],
    seeds: &[u64],
    on_done: &mut dyn FnMut(&RunResult),
) -> Result<Vec<RunResult>> {
    let mut results = Vec::new();
    for &seed in seeds {
        for v in variants {
            let cfg = variant_config(base, v, seed);
            let started = Instant::now();
            let outcome = train_on(&cfg, data, &mut |_| {})?;
            let r = RunResult {
                variant: v.name.to_string(),
                seed,
                val: outcome.final_val,
                seconds: started.elapsed().as_secs_f64(),
            };
            on_done(&r);
            results.push(r);
        }
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn top1s(results: &[RunResult], variant: &str) -> Vec<(u64, f64)> {
    results
        .iter()
        .filter(|r| r.variant == variant)
        .map(|r| (r.seed, r.val.top1))
        .collect()
}

fn mean(v: &[(u64, f64)]) -> f64 {
    v.iter().map(|x| x.1).sum::<f64>() / v.len().max(1) as f64
}

/// The three directional checks, on mean validation top-1 across seeds:
/// video beats clip sampling for V3D by `≥ 0.15`; TFC-TSN beats TSN by
/// `≥ 0.10`; TFC-V3D stays within one point of V3D on every seed with a
/// non-negative mean difference.
pub fn directional_checks(results: &[RunResult]) -> Vec<DirectionalCheck> {
    let gap = |a: &str, b: &str| mean(&top1s(results, a)) - mean(&top1s(results, b));
    let present = |names: &[&str]| names.iter().all(|n| !top1s(results, n).is_empty());
    let mut checks = Vec::new();

    if present(&[V3D_VIDEO, V3D_CLIP]) {
        let g = gap(V3D_VIDEO, V3D_CLIP);
        checks.push(DirectionalCheck {
            name: "video-level beats clip-level sampling (mini-V3D) by >= 15 points".into(),
            passed: g >= 0.15,
            detail: format!(
                "video {:.3}, clip {:.3}, gap {:+.3}",
                mean(&top1s(results, V3D_VIDEO)),
                mean(&top1s(results, V3D_CLIP)),
                g
            ),
        });
    }
    if present(&[TFC_TSN_VIDEO, TSN_VIDEO]) {
        let g = gap(TFC_TSN_VIDEO, TSN_VIDEO);
        checks.push(DirectionalCheck {
            name: "mini-TFC-TSN beats mini-TSN by >= 10 points".into(),
            passed: g >= 0.10,
            detail: format!(
                "tfc-tsn {:.3}, tsn {:.3}, gap {:+.3}",
                mean(&top1s(results, TFC_TSN_VIDEO)),
                mean(&top1s(results, TSN_VIDEO)),
                g
            ),
        });
    }
    if present(&[TFC_V3D_VIDEO, V3D_VIDEO]) {
        let tfc = top1s(results, TFC_V3D_VIDEO);
        let base = top1s(results, V3D_VIDEO);
        let per_seed: Vec<f64> = tfc
            .iter()
            .filter_map(|&(s, a)| base.iter().find(|b| b.0 == s).map(|b| a - b.1))
            .collect();
        let mean_diff = per_seed.iter().sum::<f64>() / per_seed.len().max(1) as f64;
        checks.push(DirectionalCheck {
            name: "mini-TFC-V3D >= mini-V3D - 1 point per seed, mean difference >= 0".into(),
            passed: !per_seed.is_empty() && per_seed.iter().all(|&d| d >= -0.01) && mean_diff >= 0.0,
            detail: format!("per-seed differences {per_seed:?}, mean {mean_diff:+.3}"),
        });
    }
    checks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Split;

    fn result(variant: &str, seed: u64, top1: f64) -> RunResult {
        RunResult {
            variant: variant.into(),
            seed,
            val: MetricsRow {
                epoch: 0,
                split: Split::Val,
                lr: 0.01,
                top1,
                top5: 1.0,
                loss: 0.0,
                l1: 0.0,
                wall_time: 0.0,
            },
            seconds: 0.0,
        }
    }

    #[test]
    fn checks_use_means_and_per_seed_bands() {
        let mut rs = Vec::new();
        for seed in 0..3 {
            rs.push(result(V3D_VIDEO, seed, 0.6));
            rs.push(result(V3D_CLIP, seed, 0.4));
            rs.push(result(TSN_VIDEO, seed, 0.3));
            rs.push(result(TFC_TSN_VIDEO, seed, 0.35));
            rs.push(result(TFC_V3D_VIDEO, seed, if seed == 0 { 0.595 } else { 0.61 }));
        }
        let checks = directional_checks(&rs);
        assert_eq!(checks.len(), 3);
        assert!(checks[0].passed, "{:?}", checks[0]);
        assert!(!checks[1].passed);
        assert!(checks[2].passed, "{:?}", checks[2]);

        rs.push(result(TFC_V3D_VIDEO, 3, 0.5));
        rs.push(result(V3D_VIDEO, 3, 0.6));
        assert!(!directional_checks(&rs)[2].passed);
    }

    #[test]
    fn variant_configs_differ_only_in_network_sampling_seed_and_out() {
        let base = TrainConfig::default();
        let vs = standard_variants();
        let cfg = variant_config(&base, &vs[4], 7);
        assert_eq!(cfg.network.arch, Architecture::Tsn);
        assert_eq!(cfg.network.tfc, TfcPolicy::Tsn);
        assert_eq!(cfg.seed, 7);
        assert!(cfg.out.ends_with("tfc-tsn-video-s7"));
        assert_eq!(cfg.lr, base.lr);
        assert_eq!(variant_config(&base, &vs[1], 0).sampling, Strategy::Clip);
    }
}
