mod common;

use common::*;
use proptest::prelude::*;
use sdp::heads::{AxisEmbedding, Head, HeadKind, HeadSpec};
use sdp::GridShape;

fn kind_strategy() -> impl Strategy<Value = HeadKind> {
    prop::sample::select(HeadKind::ALL.to_vec())
}

fn dims_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop_oneof![
        (2usize..=20).prop_map(|n| vec![n]),
        (2usize..=6, 2usize..=6).prop_map(|(a, b)| vec![a, b]),
    ]
}

proptest! {
    #![proptest_config(prop_config(48))]

    #[test]
    fn heads_are_normalized(kind in kind_strategy(), dims in dims_strategy(), seed in any::<u64>()) {
        check_head_normalized(kind, &dims, seed).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn head_gradients_match_finite_differences(kind in kind_strategy(), dims in dims_strategy(), seed in any::<u64>()) {
        check_head_grad(kind, &dims, seed).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn penalized_gradients_match_finite_differences(
        sdp in any::<bool>(),
        dims in dims_strategy(),
        order in 1usize..=3,
        radius in 1usize..=3,
        seed in any::<u64>(),
    ) {
        let kind = if sdp { HeadKind::Sdp } else { HeadKind::Smn };
        check_penalized_grad(kind, &dims, order, radius, seed).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn logistic_tails_conserve_mass(bins in 2usize..=40, seed in any::<u64>()) {
        check_lmm_conservation(bins, seed).map_err(TestCaseError::fail)?;
    }
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for kind in HeadKind::ALL {
        for seed in 0..3 {
            check_end_to_end_grad(kind, seed).unwrap();
        }
    }
}

#[test]
fn sdp_without_penalty_trains_exactly_like_udp() {
    for seed in 0..3 {
        check_sdp_zero_is_udp(seed).unwrap();
    }
}

#[test]
fn three_dimensional_heads_are_normalized() {
    for kind in HeadKind::ALL {
        check_head_normalized(kind, &[3, 4, 2], 11).unwrap();
        check_head_grad(kind, &[3, 4, 2], 12).unwrap();
    }
}

#[test]
fn zero_parameters_give_uniform_tree_and_multinomial() {
    let shape = GridShape::line(8).unwrap();
    for kind in [HeadKind::Mn, HeadKind::Udp] {
        let head = Head::new(HeadSpec::new(kind, shape.clone())).unwrap();
        let full = head.full(&vec![0.0; head.param_count()]).unwrap();
        assert!(full.mass().iter().all(|&m| (m - 0.125).abs() < 1e-15));
    }
}

#[test]
fn parameter_counts() {
    let line = GridShape::line(10).unwrap();
    let plane = GridShape::new(vec![4, 5]).unwrap();
    assert_eq!(HeadSpec::new(HeadKind::Mn, line.clone()).param_count(), 10);
    assert_eq!(HeadSpec::new(HeadKind::Udp, line.clone()).param_count(), 9);
    assert_eq!(HeadSpec::new(HeadKind::Gmm, plane.clone()).with_components(3).param_count(), 18);
    assert_eq!(HeadSpec::new(HeadKind::Lmm, plane.clone()).with_components(3).param_count(), 15);
    assert_eq!(HeadSpec::new(HeadKind::Gmm, line).with_components(2).param_count(), 6);
    assert_eq!(HeadSpec::new(HeadKind::Sdp, plane).param_count(), 19);
}

#[test]
fn gaussian_head_peaks_at_its_mean() {
    let spec = HeadSpec::new(HeadKind::Gmm, GridShape::line(21).unwrap())
        .with_components(1)
        .with_embedding(vec![AxisEmbedding::spanning(-1.0, 1.0, 21)]);
    let head = Head::new(spec).unwrap();
    // Mean 0.3 sits on bin 13; the raw diagonal maps to a scale near 0.2.
    let full = head.full(&[0.0, 0.3, -1.5]).unwrap();
    let argmax = (0..21).max_by(|&a, &b| full.mass()[a].total_cmp(&full.mass()[b])).unwrap();
    assert_eq!(argmax, 13);
    assert!(full.mean()[0] > 12.0 && full.mean()[0] < 14.0);
}

#[test]
fn penalty_is_zero_for_flat_logits_and_positive_for_a_spike() {
    let spec = HeadSpec::new(HeadKind::Smn, GridShape::line(9).unwrap()).with_smoothing(1.0, 1, 2);
    let head = Head::new(spec).unwrap();
    assert_eq!(head.window_penalty(&[0.5; 9], 4).unwrap(), 0.0);
    let mut spike = vec![0.0; 9];
    spike[4] = 3.0;
    assert_eq!(head.window_penalty(&spike, 4).unwrap(), 6.0);
    // The window around cell 0 is {0, 1, 2} and misses the spike.
    assert_eq!(head.window_penalty(&spike, 0).unwrap(), 0.0);
}

#[test]
fn invalid_specs_are_rejected() {
    let line = GridShape::line(6).unwrap();
    assert!(Head::new(HeadSpec::new(HeadKind::Sdp, line.clone())).is_err());
    assert!(Head::new(HeadSpec::new(HeadKind::Sdp, line.clone()).with_smoothing(-1.0, 1, 2)).is_err());
    assert!(Head::new(HeadSpec::new(HeadKind::Smn, line.clone()).with_smoothing(1.0, 4, 2)).is_err());
    assert!(Head::new(HeadSpec::new(HeadKind::Gmm, line.clone()).with_components(0)).is_err());
    assert!(Head::new(HeadSpec::new(HeadKind::Udp, GridShape::line(1).unwrap())).is_err());
    let head = Head::new(HeadSpec::new(HeadKind::Mn, line)).unwrap();
    assert!(head.log_prob(&[0.0; 5], 0).is_err());
    assert!(head.log_prob(&[0.0; 6], 6).is_err());
}

#[test]
fn head_kinds_round_trip_through_names() {
    for kind in HeadKind::ALL {
        assert_eq!(kind.name().parse::<HeadKind>().unwrap(), kind);
    }
    assert!("softmax".parse::<HeadKind>().is_err());
}
