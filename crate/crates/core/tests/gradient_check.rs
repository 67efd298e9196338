//! Analytic gradients of each loss against central finite differences, in
//! double precision, over every shared weight.

mod common;

use pusnet::NetworkSpec;

#[test]
fn tiny_spec_gradients_match_finite_differences() {
    for which in 0..3 {
        let worst = common::worst_relative_error(NetworkSpec::tiny(), which);
        eprintln!("loss {which}: worst relative error {worst:e}");
        assert!(worst <= 1e-4, "loss {which}: {worst:e}");
    }
}

#[test]
fn shortcut_spec_gradients_match_finite_differences() {
    // Shortcuts (2,4) and (4,6); the first lands on the split conv.
    let spec = NetworkSpec {
        num_conv_layers: 7,
        channels: 4,
        gn_groups: 2,
        skip_range: Some((2, 6)),
        split_layer: 4,
        bias_layers: vec![1, 7],
        ..NetworkSpec::tiny()
    };
    for which in 0..3 {
        let worst = common::worst_relative_error(spec.clone(), which);
        eprintln!("loss {which}: worst relative error {worst:e}");
        assert!(worst <= 1e-4, "loss {which}: {worst:e}");
    }
}

#[test]
fn single_group_normalization_gradients_match() {
    let spec = NetworkSpec { num_conv_layers: 5, gn_groups: 1, split_layer: 3, bias_layers: vec![1, 5], ..NetworkSpec::tiny() };
    for which in 0..3 {
        let worst = common::worst_relative_error(spec.clone(), which);
        assert!(worst <= 1e-4, "loss {which}: {worst:e}");
    }
}
