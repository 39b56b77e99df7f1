//! Monte-Carlo cross-checks of the analytic variance predictions.

use binlab_core::harness::{measure_gradient_variance, InputDist, McConfig};
use binlab_core::init::{binarize, sample_weights, InitScheme};
use binlab_core::matrix::{matmul, Matrix};
use binlab_core::net::NetworkSpec;
use binlab_core::normalizer::NormalizerConfig;
use binlab_core::rng::seeded_stream;
use binlab_core::theory::predict_forward_variance;

fn pooled_column_variance(m: &Matrix) -> f64 {
    let n = m.values().len() as f64;
    let mean = m.values().iter().sum::<f64>() / n;
    m.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Forward variance product on a raw linear chain (no activation between
/// layers), the regime the product formula describes: widths [8, 16] with ±1
/// weights give Var(s1) = 8 and Var(s2) = 128.
#[test]
fn forward_variance_product_matches_monte_carlo() {
    let widths = [8usize, 16, 32];
    let samples = 20_000;
    let mut rng = seeded_stream(11, 0);
    let x = Matrix::from_fn(samples, widths[0], |_, _| rng.rademacher());
    let w1 = binarize(&sample_weights(&InitScheme::uniform(0.3), widths[0], widths[1], &mut rng).unwrap());
    let w2 = binarize(&sample_weights(&InitScheme::uniform(0.3), widths[1], widths[2], &mut rng).unwrap());
    let s1 = matmul(&x, &w1).unwrap();
    let s2 = matmul(&s1, &w2).unwrap();

    let spec = NetworkSpec::binary_chain(&widths, 4, |_| NormalizerConfig::identity());
    let predicted = predict_forward_variance(&spec, 1.0, &[1.0, 1.0]).unwrap();
    assert_eq!(predicted, vec![8.0, 128.0]);

    let v1 = pooled_column_variance(&s1);
    let v2 = pooled_column_variance(&s2);
    assert!((v1 / 8.0 - 1.0).abs() < 0.15, "Var(s1) = {v1}");
    assert!((v2 / 128.0 - 1.0).abs() < 0.25, "Var(s2) = {v2}");
}

/// Zero input variance propagates exactly: constant inputs give every neuron
/// a constant dot product.
#[test]
fn forward_variance_of_constant_input_is_zero() {
    let samples = 512;
    let mut rng = seeded_stream(13, 0);
    let x = Matrix::from_fn(samples, 8, |_, _| 1.0);
    let w = binarize(&sample_weights(&InitScheme::uniform(0.3), 8, 16, &mut rng).unwrap());
    let s = matmul(&x, &w).unwrap();
    let mean = s.col_mean();
    for v in s.col_variance_biased(&mean) {
        assert_eq!(v, 0.0);
    }
}

/// The fixed-scale substitute reproduces the batch-norm gradient gain.
#[test]
fn center_scale_substitute_tracks_bn_ratio() {
    let widths = [32usize, 32, 32];
    let spec = NetworkSpec::binary_chain(&widths, 64, |fan_in| {
        NormalizerConfig::center_scale(1.0 / (fan_in as f64).sqrt())
    });
    let mc = McConfig {
        trials: 100,
        batch_size: 64,
        master_seed: 9,
        input_dist: InputDist::Rademacher,
    };
    let report = measure_gradient_variance(&spec, &InitScheme::uniform(0.01), &mc).unwrap();
    let ratio = report.measured_ratio(1);
    assert!((0.75..=1.33).contains(&ratio), "layer gain {ratio}");
}

/// Gaussian inputs satisfy the same recursion (unit input variance).
#[test]
fn gaussian_inputs_give_the_same_no_norm_gain() {
    let spec = NetworkSpec::binary_chain(&[32, 32, 32], 64, |_| NormalizerConfig::identity());
    let mc = McConfig {
        trials: 100,
        batch_size: 64,
        master_seed: 15,
        input_dist: InputDist::Gaussian,
    };
    let report = measure_gradient_variance(&spec, &InitScheme::uniform(0.01), &mc).unwrap();
    let ratio = report.measured_ratio(1);
    assert!((24.0..=42.0).contains(&ratio), "layer gain {ratio}, nominal 32");
}

/// The measurement is insensitive to the latent weight variance (binarized
/// weights): coupled seeds give bit-identical reports across sigma^2.
#[test]
fn reports_are_invariant_to_latent_variance() {
    let spec = NetworkSpec::binary_chain(&[16, 16, 16], 32, |_| NormalizerConfig::full_bn());
    let mc = McConfig {
        trials: 40,
        batch_size: 32,
        master_seed: 21,
        input_dist: InputDist::Rademacher,
    };
    let base = measure_gradient_variance(&spec, &InitScheme::uniform(1e-1), &mc).unwrap();
    for s2 in [1e-2, 1e-3, 1e-4] {
        let other = measure_gradient_variance(&spec, &InitScheme::uniform(s2), &mc).unwrap();
        for (a, b) in base.layers.iter().zip(&other.layers) {
            assert_eq!(a.measured.to_bits(), b.measured.to_bits(), "sigma^2 {s2}");
        }
    }
}
