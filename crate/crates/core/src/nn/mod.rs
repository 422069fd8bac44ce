//! Residual blocks, network specs and their execution.
//!
//! A [`NetworkSpec`] is a plain description (stem, stages of [`BlockSpec`]s,
//! head). [`param_layout`] derives the parameter list from it and
//! [`Network`] owns the tensors and runs the forward pass on a tape.

mod network;
mod profile;
mod spec;

pub use network::{param_layout, ForwardPass, Mode, Network, ParamDecl, ParamInit, ParamRole};
pub use profile::{Architecture, NetworkConfig};
pub use spec::{
    place_tfc_blocks, BlockKind, BlockSpec, ConvShape, HeadKind, NetworkSpec, PathStep, StageSpec, StemSpec, TfcPolicy,
    TEMPORAL_KERNEL,
};

/// Two stages with one TFC block each, T=4, for 8x8 frames and 4 classes.
/// Small enough for exhaustive gradient checks; covers the temporal conv,
/// RDW, TFC, projection and batch-norm paths.
pub fn tiny_spec() -> NetworkSpec {
    let b0 = BlockSpec::new(BlockKind::RdwBottleneck, 4, 2, 6, 1)
        .expect("valid block")
        .tfc_variant();
    let b1 = BlockSpec::new(BlockKind::Bottleneck3dTemporal, 6, 3, 8, 2)
        .expect("valid block")
        .tfc_variant();
    NetworkSpec {
        stem: StemSpec {
            c_in: 3,
            c_out: 4,
            kernel: 3,
            stride: 1,
            max_pool: false,
        },
        stages: vec![StageSpec { blocks: vec![b0] }, StageSpec { blocks: vec![b1] }],
        head: HeadKind::GlobalPool,
        num_classes: 4,
        temporal_length: 4,
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autograd::Tape;
    use crate::error::Error;
    use crate::gradcheck::check_directional;
    use crate::tensor::Tensor;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn video(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng(seed);
        Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
    }

    fn stage_of(n: usize, kind: BlockKind) -> StageSpec {
        StageSpec::repeated(BlockSpec::new(kind, 8, 4, 8, 1).unwrap(), n)
    }

    fn four_stage(repeats: [usize; 4]) -> NetworkSpec {
        NetworkSpec {
            stem: StemSpec {
                c_in: 3,
                c_out: 8,
                kernel: 3,
                stride: 1,
                max_pool: false,
            },
            stages: repeats.iter().map(|&r| stage_of(r, BlockKind::Bottleneck2d)).collect(),
            head: HeadKind::GlobalPool,
            num_classes: 4,
            temporal_length: 4,
        }
    }

    fn converted(net: &NetworkSpec) -> Vec<Vec<usize>> {
        net.stages
            .iter()
            .map(|s| {
                s.blocks
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| b.tfc)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn v3d_policy_converts_every_other_block_from_the_first() {
        let net = place_tfc_blocks(&four_stage([3, 4, 6, 3]), TfcPolicy::V3d { phase: 0 }).unwrap();
        assert_eq!(converted(&net), vec![vec![], vec![0, 2], vec![0, 2, 4], vec![]]);
        let net = place_tfc_blocks(&four_stage([3, 4, 6, 3]), TfcPolicy::V3d { phase: 1 }).unwrap();
        assert_eq!(converted(&net), vec![vec![], vec![1, 3], vec![1, 3, 5], vec![]]);
    }

    #[test]
    fn tsn_policy_converts_the_last_two_stages() {
        let net = place_tfc_blocks(&four_stage([3, 4, 6, 3]), TfcPolicy::Tsn).unwrap();
        assert_eq!(net.tfc_block_count(), 9);
        assert_eq!(converted(&net)[2].len(), 6);
    }

    #[test]
    fn empty_policy_leaves_network_unchanged() {
        let base = four_stage([1, 2, 2, 1]);
        assert_eq!(place_tfc_blocks(&base, TfcPolicy::None).unwrap(), base);
        assert_eq!("".parse::<TfcPolicy>().unwrap(), TfcPolicy::None);
    }

    #[test]
    fn unknown_policy_and_short_networks_are_rejected() {
        assert!(matches!("v4d".parse::<TfcPolicy>(), Err(Error::UnknownPolicy(_))));
        assert!(place_tfc_blocks(&tiny_spec(), TfcPolicy::Tsn).is_err());
    }

    #[test]
    fn tfc_variant_adds_branch_channels_times_t_squared() {
        for arch in [Architecture::Tsn, Architecture::V3d, Architecture::V3dDepthwise] {
            let base = NetworkConfig::mini(arch, TfcPolicy::None).build_spec().unwrap();
            for policy in [TfcPolicy::V3d { phase: 0 }, TfcPolicy::Tsn] {
                let tfc = place_tfc_blocks(&base, policy).unwrap();
                let expected: usize = tfc
                    .blocks()
                    .filter(|b| b.tfc)
                    .map(|b| b.branch_channels() * 16 * 16)
                    .sum();
                let a = Network::new(base.clone(), &mut rng(1)).unwrap();
                let b = Network::new(tfc, &mut rng(1)).unwrap();
                assert_eq!(b.param_count() - a.param_count(), expected);
            }
        }
    }

    #[test]
    fn mini_profile_keeps_temporal_length_and_halves_space() {
        let spec = NetworkConfig::mini(Architecture::V3d, TfcPolicy::V3d { phase: 0 })
            .build_spec()
            .unwrap();
        assert_eq!(spec.output_size(32, 32), (2, 2));
        assert_eq!(spec.tfc_block_count(), 2);
        let mut net = Network::new(spec, &mut rng(2)).unwrap();
        let logits = net.predict(&video(&[2, 3, 16, 32, 32], 3)).unwrap();
        assert_eq!(logits.shape(), &[2, 16]);
        assert!(logits.is_finite());
    }

    #[test]
    fn wrong_clip_length_is_a_temporal_error() {
        let mut net = Network::new(tiny_spec(), &mut rng(4)).unwrap();
        let err = net.predict(&video(&[1, 3, 5, 8, 8], 5)).unwrap_err();
        assert!(matches!(err, Error::TemporalLength { expected: 4, actual: 5 }));
    }

    #[test]
    fn duplicated_video_gives_identical_rows() {
        for arch in [Architecture::Tsn, Architecture::V3d, Architecture::V3dDepthwise] {
            let mut cfg = NetworkConfig::mini(arch, TfcPolicy::Tsn);
            cfg.frames = 4;
            cfg.size = 16;
            let mut net = Network::new(cfg.build_spec().unwrap(), &mut rng(6)).unwrap();
            let one = video(&[1, 3, 4, 16, 16], 7);
            let mut data = one.data().to_vec();
            data.extend_from_slice(one.data());
            let logits = net.predict(&Tensor::new(&[2, 3, 4, 16, 16], data).unwrap()).unwrap();
            let (a, b) = logits.data().split_at(16);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_input_gives_classifier_bias() {
        let spec = NetworkConfig::mini(Architecture::V3d, TfcPolicy::V3d { phase: 0 })
            .build_spec()
            .unwrap();
        let mut net = Network::new(spec, &mut rng(8)).unwrap();
        let logits = net.predict(&Tensor::zeros(&[1, 3, 16, 32, 32])).unwrap();
        assert_eq!(logits.data(), net.param("fc.bias").unwrap().data());
    }

    #[test]
    fn zeroed_tfc_block_matches_base_block_exactly() {
        let spec = NetworkConfig::mini(Architecture::V3d, TfcPolicy::V3d { phase: 0 })
            .build_spec()
            .unwrap();
        let mut tfc = Network::new(spec.clone(), &mut rng(9)).unwrap();
        tfc.zero_tfc_kernels();
        let base_spec = place_tfc_blocks(&spec, TfcPolicy::None).unwrap();
        let mut base_spec = base_spec;
        base_spec
            .stages
            .iter_mut()
            .flat_map(|s| &mut s.blocks)
            .for_each(|b| b.tfc = false);
        let params = tfc
            .decls()
            .iter()
            .zip(tfc.params())
            .filter(|(d, _)| d.role != ParamRole::Tfc)
            .map(|(_, p)| p.clone())
            .collect();
        let mut base = Network::from_parts(base_spec, params, tfc.bn_stats().to_vec()).unwrap();
        let x = video(&[2, 3, 16, 32, 32], 10);
        assert_eq!(tfc.predict(&x).unwrap().data(), base.predict(&x).unwrap().data());

        let mut t1 = Tape::new();
        let mut t2 = Tape::new();
        let (x1, x2) = (t1.constant(x.clone()), t2.constant(x));
        let l1 = tfc.forward(&mut t1, x1, Mode::Train).unwrap().logits;
        let l2 = base.forward(&mut t2, x2, Mode::Train).unwrap().logits;
        assert_eq!(t1.value(l1).data(), t2.value(l2).data());
    }

    #[test]
    fn from_parts_rejects_mismatched_shapes() {
        let net = Network::new(tiny_spec(), &mut rng(11)).unwrap();
        let mut params = net.params().to_vec();
        params[0] = Tensor::zeros(&[1]);
        let err = Network::from_parts(tiny_spec(), params, net.bn_stats().to_vec()).unwrap_err();
        assert!(matches!(err, Error::IncompatibleCheckpoint(_)));
    }

    #[test]
    fn tiny_network_gradients_match_finite_differences() {
        let mut net = Network::new(tiny_spec(), &mut rng(12)).unwrap();
        // Non-trivial RDW and BN parameters so every path carries gradient.
        let mut r = rng(13);
        for (d, p) in net.decls().to_vec().iter().zip(net.params_mut()) {
            if matches!(d.role, ParamRole::Rdw | ParamRole::BnScale | ParamRole::BnShift) {
                p.data_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.3..0.3));
            }
        }
        let mut inputs = vec![video(&[2, 3, 4, 8, 8], 14)];
        inputs.extend(net.params().iter().cloned());
        let labels = [1, 3];
        let report = check_directional(&inputs, 1e-3, 8, 15, |tape, vars| {
            let logits = net.forward_with(tape, vars[0], &vars[1..], true)?;
            tape.softmax_cross_entropy(logits, &labels)
        })
        .unwrap();
        assert!(report.passes(1e-3), "max rel error {}", report.max_rel_error);
    }
}
