//! Worker-parallel Monte-Carlo measurement and the ablation grid runner.
//!
//! Parallelism never changes results: trial `t` always uses stream
//! `(master_seed, t)` and partial sums are reduced in trial order, so any
//! worker count produces the byte-identical report. Ablation cells are
//! likewise independent single-threaded runs collected in grid order.

use std::time::Instant;

use binlab_core::data::{synth_split, TrainTestSplit};
use binlab_core::harness::{assemble_report, run_trial, GradVarianceReport, McConfig, TrialAccum};
use binlab_core::init::InitScheme;
use binlab_core::net::NetworkSpec;
use binlab_core::train::{train, TrainConfig};

use crate::config::{DataSource, SuiteConfig};
use crate::idx::load_idx;
use crate::{cifar::load_cifar10_bin, CliError, Result};

/// Measure per-layer gradient variance with `workers` threads.
///
/// Bit-identical to `binlab_core::harness::measure_gradient_variance` for any
/// worker count.
pub fn measure_parallel(
    spec: &NetworkSpec,
    scheme: &InitScheme,
    mc: &McConfig,
    workers: usize,
) -> Result<GradVarianceReport> {
    spec.validate().map_err(CliError::Core)?;
    if mc.trials < 30 {
        return Err(CliError::Core(binlab_core::Error::Contract(format!(
            "variance reports need at least 30 trials, got {}",
            mc.trials
        ))));
    }
    let workers = workers.clamp(1, mc.trials);
    let mut accums: Vec<Option<binlab_core::Result<TrialAccum>>> = Vec::new();
    accums.resize_with(mc.trials, || None);

    // contiguous chunks, one per worker; slots are disjoint slices
    let chunk = mc.trials.div_ceil(workers);
    std::thread::scope(|scope| {
        let mut rest: &mut [Option<binlab_core::Result<TrialAccum>>] = &mut accums;
        let mut start = 0usize;
        while !rest.is_empty() {
            let take = chunk.min(rest.len());
            let (slice, tail) = rest.split_at_mut(take);
            rest = tail;
            let first = start as u64;
            scope.spawn(move || {
                for (offset, slot) in slice.iter_mut().enumerate() {
                    *slot = Some(run_trial(spec, scheme, mc, first + offset as u64));
                }
            });
            start += take;
        }
    });

    let accums: Vec<TrialAccum> = accums
        .into_iter()
        .map(|slot| slot.expect("every trial filled"))
        .collect::<binlab_core::Result<_>>()
        .map_err(CliError::Core)?;
    assemble_report(spec, mc, &accums).map_err(CliError::Core)
}

/// Materialize a dataset source.
pub fn load_data(source: &DataSource) -> Result<TrainTestSplit> {
    match source {
        DataSource::Synthetic {
            n_train,
            n_test,
            dim,
            classes,
            separation,
            seed,
        } => synth_split(*n_train, *n_test, *dim, *classes, *separation, *seed)
            .map_err(CliError::Core),
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            mean,
            std,
            classes,
        } => Ok(TrainTestSplit {
            train: load_idx(
                train_images.as_ref(),
                train_labels.as_ref(),
                *mean,
                *std,
                *classes,
            )?,
            test: load_idx(
                test_images.as_ref(),
                test_labels.as_ref(),
                *mean,
                *std,
                *classes,
            )?,
        }),
        DataSource::Cifar10 {
            train_bins,
            test_bins,
            mean,
            std,
        } => Ok(TrainTestSplit {
            train: load_cifar10_bin(train_bins, mean, std)?,
            test: load_cifar10_bin(test_bins, mean, std)?,
        }),
    }
}

/// One (normalizer, variance) cell of an ablation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub normalizer: String,
    pub sigma_sq: f64,
    pub seeds: usize,
    /// Best test accuracy over the cell's seeds (NaN if every run failed).
    pub best_test_acc: f64,
    /// First-layer gradient variance at epoch 0 of the first seed's run.
    pub epoch0_grad_var_first_layer: f64,
    pub failed_runs: usize,
    pub wall_seconds: f64,
}

/// The training config of one cell: the suite normalizer applied to every
/// layer but the last (which keeps the base config's), and the cell variance
/// applied to binary layers (full-precision layers keep the base scheme's).
pub fn cell_config(suite: &SuiteConfig, norm_index: usize, sigma_sq: f64, seed_index: usize) -> TrainConfig {
    let rule = &suite.normalizers[norm_index];
    let mut config = suite.base.clone();
    let depth = config.spec.layers.len();
    let widths = config.spec.widths();
    for (l, layer) in config.spec.layers.iter_mut().enumerate() {
        if l < depth - 1 {
            layer.normalizer = rule.config_for(
                widths[l],
                layer.normalizer.epsilon,
                layer.normalizer.momentum,
            );
        }
    }
    config.sigma_sq_per_layer = Some(
        config
            .spec
            .layers
            .iter()
            .map(|layer| {
                if layer.binary {
                    sigma_sq
                } else {
                    suite.base.scheme.sigma_sq
                }
            })
            .collect(),
    );
    config.master_seed = suite.base.master_seed + seed_index as u64;
    config.telemetry = true;
    config
}

/// Run the full (normalizer x variance) grid; identical seeds across cells,
/// per-cell failures recorded in the row while the suite continues.
pub fn run_ablation(suite: &SuiteConfig) -> Result<Vec<AblationRow>> {
    let data = load_data(&suite.data)?;
    let mut rows = Vec::new();
    for norm_index in 0..suite.normalizers.len() {
        for &sigma_sq in &suite.variances {
            let started = Instant::now();
            let mut best = f64::NAN;
            let mut failed_runs = 0usize;
            let mut epoch0 = f64::NAN;
            for seed_index in 0..suite.seeds {
                let config = cell_config(suite, norm_index, sigma_sq, seed_index);
                let record = train(&config, &data).map_err(CliError::Core)?;
                if seed_index == 0 {
                    epoch0 = record
                        .grad_variance_epoch0
                        .as_ref()
                        .and_then(|v| v.first().copied())
                        .unwrap_or(f64::NAN);
                }
                if record.failed {
                    failed_runs += 1;
                } else if !(record.best_test_accuracy <= best) {
                    best = record.best_test_accuracy;
                }
            }
            rows.push(AblationRow {
                normalizer: suite.normalizers[norm_index].label(),
                sigma_sq,
                seeds: suite.seeds,
                best_test_acc: best,
                epoch0_grad_var_first_layer: epoch0,
                failed_runs,
                wall_seconds: started.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use binlab_core::harness::{measure_gradient_variance, InputDist};
    use binlab_core::normalizer::NormalizerConfig;

    #[test]
    fn parallel_report_matches_sequential_bitwise() {
        let spec = NetworkSpec::binary_chain(&[16, 16, 16], 32, |_| NormalizerConfig::full_bn());
        let scheme = InitScheme::uniform(0.01);
        let mc = McConfig {
            trials: 41, // deliberately not divisible by the worker count
            batch_size: 32,
            master_seed: 5,
            input_dist: InputDist::Rademacher,
        };
        let sequential = measure_gradient_variance(&spec, &scheme, &mc).unwrap();
        for workers in [1, 2, 4, 7] {
            let parallel = measure_parallel(&spec, &scheme, &mc, workers).unwrap();
            assert_eq!(parallel, sequential, "workers = {workers}");
            for (a, b) in parallel.layers.iter().zip(&sequential.layers) {
                assert_eq!(a.measured.to_bits(), b.measured.to_bits());
            }
        }
    }

    #[test]
    fn empty_suite_gives_no_rows() {
        let suite = crate::config::parse_suite_file(
            "normalizers=\nsource=synthetic\nn_train=64\nn_test=32\ndim=8\nclasses=2\n\
             widths=8,8,8,2\nbinary=0,1,0\nnormalize_last=false\nepochs=1\nbatch=8\n",
        )
        .unwrap();
        let rows = run_ablation(&suite).unwrap();
        assert!(rows.is_empty());
    }

    #[test]
    fn grid_runs_and_orders_cells() {
        let suite = crate::config::parse_suite_file(
            "normalizers=full_bn,identity\nvariances=0.01\nseeds=2\n\
             source=synthetic\nn_train=64\nn_test=32\ndim=8\nclasses=2\n\
             widths=8,8,8,2\nbinary=0,1,0\nnormalize_last=false\nepochs=1\nbatch=8\n",
        )
        .unwrap();
        let rows = run_ablation(&suite).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].normalizer, "full_bn");
        assert_eq!(rows[1].normalizer, "identity");
        assert!(rows.iter().all(|r| r.seeds == 2));
        assert!(rows.iter().all(|r| r.best_test_acc.is_finite()));
    }
}
