//! Flat key=value configuration files.
//!
//! One `key=value` pair per line; blank lines and `#` comments are skipped;
//! unknown keys are errors. List values use commas (`widths=64,256,10`),
//! paths use `;` as the separator. The schemas are documented in the README.

use std::collections::BTreeMap;
use std::path::Path;

use binlab_core::harness::{InputDist, McConfig};
use binlab_core::init::InitScheme;
use binlab_core::net::{LayerSpec, NetworkSpec};
use binlab_core::normalizer::{NormalizerConfig, NormalizerKind, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
use binlab_core::optim::AdamHyper;
use binlab_core::train::TrainConfig;

use crate::{CliError, Result};

/// Parsed key=value file with typed accessors that consume keys, so leftover
/// (unknown) keys can be rejected.
pub struct KvFile {
    entries: BTreeMap<String, String>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "line {}: expected key=value, got {line:?}",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(CliError::Config(format!(
                    "line {}: duplicate key {key:?}",
                    lineno + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| CliError::Config(format!("key {key:?}: cannot parse {raw:?}"))),
        }
    }

    fn take_list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.take(key) {
            None => Ok(None),
            Some(raw) => raw
                .split(',')
                .map(|item| {
                    item.trim().parse::<T>().map_err(|_| {
                        CliError::Config(format!("key {key:?}: cannot parse item {item:?}"))
                    })
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Error out if any keys were not consumed.
    pub fn finish(self) -> Result<()> {
        if let Some(key) = self.entries.keys().next() {
            return Err(CliError::Config(format!("unknown key {key:?}")));
        }
        Ok(())
    }
}

/// Normalizer assignment rule from a config value.
#[derive(Debug, Clone, PartialEq)]
pub enum NormRule {
    FullBn,
    CenterScaleFixed(f64),
    /// `center_scale:inv_sqrt_k`: per-layer scale `1 / sqrt(fan_in)`.
    CenterScaleInvSqrtFanIn,
    CenterOnly,
    Identity,
}

impl NormRule {
    pub fn parse(raw: &str) -> Result<Self> {
        match raw {
            "full_bn" => Ok(Self::FullBn),
            "center_only" => Ok(Self::CenterOnly),
            "identity" => Ok(Self::Identity),
            "center_scale:inv_sqrt_k" => Ok(Self::CenterScaleInvSqrtFanIn),
            other => match other.strip_prefix("center_scale:") {
                Some(num) => num
                    .parse::<f64>()
                    .map(Self::CenterScaleFixed)
                    .map_err(|_| CliError::Config(format!("bad center_scale factor {num:?}"))),
                None => Err(CliError::Config(format!("unknown normalizer {raw:?}"))),
            },
        }
    }

    pub fn config_for(&self, fan_in: usize, epsilon: f64, momentum: f64) -> NormalizerConfig {
        let kind = match self {
            Self::FullBn => NormalizerKind::FullBn,
            Self::CenterScaleFixed(c) => NormalizerKind::CenterScale { scale: *c },
            Self::CenterScaleInvSqrtFanIn => NormalizerKind::CenterScale {
                scale: 1.0 / (fan_in as f64).sqrt(),
            },
            Self::CenterOnly => NormalizerKind::CenterOnly,
            Self::Identity => NormalizerKind::Identity,
        };
        NormalizerConfig {
            kind,
            epsilon,
            momentum,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::FullBn => "full_bn".into(),
            Self::CenterScaleFixed(c) => format!("center_scale:{c}"),
            Self::CenterScaleInvSqrtFanIn => "center_scale:inv_sqrt_k".into(),
            Self::CenterOnly => "center_only".into(),
            Self::Identity => "identity".into(),
        }
    }
}

fn parse_init(raw: &str) -> Result<InitScheme> {
    match raw {
        "glorot" => Ok(InitScheme::glorot()),
        "fan_in" => Ok(InitScheme::fan_in()),
        other => {
            if let Some(num) = other.strip_prefix("uniform:") {
                num.parse::<f64>()
                    .map(InitScheme::uniform)
                    .map_err(|_| CliError::Config(format!("bad uniform variance {num:?}")))
            } else if let Some(num) = other.strip_prefix("gaussian:") {
                num.parse::<f64>()
                    .map(InitScheme::gaussian)
                    .map_err(|_| CliError::Config(format!("bad gaussian variance {num:?}")))
            } else {
                Err(CliError::Config(format!("unknown init scheme {raw:?}")))
            }
        }
    }
}

fn parse_bool(raw: &str, key: &str) -> Result<bool> {
    match raw {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(CliError::Config(format!("key {key:?}: expected bool, got {raw:?}"))),
    }
}

/// Network shape shared by `analyze` specs and training configs.
pub struct NetworkFile {
    pub spec: NetworkSpec,
    pub scheme: InitScheme,
    pub input_dist: InputDist,
    pub norm_rule: NormRule,
}

fn build_spec(
    kv: &mut KvFile,
    default_all_binary: bool,
) -> Result<(NetworkSpec, NormRule)> {
    let widths: Vec<usize> = kv
        .take_list("widths")?
        .ok_or_else(|| CliError::Config("missing key \"widths\"".into()))?;
    if widths.len() < 3 {
        return Err(CliError::Config(
            "widths needs the input dimension plus at least two layers".into(),
        ));
    }
    let depth = widths.len() - 1;
    let binary: Vec<bool> = match kv.take_list::<u8>("binary")? {
        Some(flags) => {
            if flags.len() != depth {
                return Err(CliError::Config(format!(
                    "binary has {} flags for {depth} layers",
                    flags.len()
                )));
            }
            flags.iter().map(|&f| f != 0).collect()
        }
        None => vec![default_all_binary; depth],
    };
    let norm_rule = match kv.take("normalizer") {
        Some(raw) => NormRule::parse(&raw)?,
        None => NormRule::FullBn,
    };
    let normalize_last = match kv.take("normalize_last") {
        Some(raw) => parse_bool(&raw, "normalize_last")?,
        None => true,
    };
    let epsilon = kv.take_parsed::<f64>("epsilon")?.unwrap_or(DEFAULT_EPSILON);
    let momentum = kv.take_parsed::<f64>("momentum")?.unwrap_or(DEFAULT_MOMENTUM);
    // bias defaults to the final layer only
    let bias: Vec<bool> = match kv.take_list::<u8>("bias")? {
        Some(flags) => {
            if flags.len() != depth {
                return Err(CliError::Config(format!(
                    "bias has {} flags for {depth} layers",
                    flags.len()
                )));
            }
            flags.iter().map(|&f| f != 0).collect()
        }
        None => (0..depth).map(|l| l == depth - 1).collect(),
    };
    let batch = kv.take_parsed::<usize>("batch")?.unwrap_or(128);

    let layers = (0..depth)
        .map(|l| {
            let normalizer = if l == depth - 1 && !normalize_last {
                NormalizerConfig {
                    kind: NormalizerKind::Identity,
                    epsilon,
                    momentum,
                }
            } else {
                norm_rule.config_for(widths[l], epsilon, momentum)
            };
            LayerSpec {
                width: widths[l + 1],
                binary: binary[l],
                normalizer,
                bias: bias[l],
            }
        })
        .collect();
    Ok((
        NetworkSpec {
            input_dim: widths[0],
            layers,
            batch_size: batch,
        },
        norm_rule,
    ))
}

/// Parse an `analyze` network spec file (all-binary by default).
pub fn parse_network_file(text: &str) -> Result<NetworkFile> {
    let mut kv = KvFile::parse(text)?;
    let (spec, norm_rule) = build_spec(&mut kv, true)?;
    let scheme = match kv.take("init") {
        Some(raw) => parse_init(&raw)?,
        None => InitScheme::uniform(0.01),
    };
    let input_dist = match kv.take("input").as_deref() {
        None | Some("rademacher") => InputDist::Rademacher,
        Some("gaussian") => InputDist::Gaussian,
        Some(other) => {
            return Err(CliError::Config(format!("unknown input distribution {other:?}")))
        }
    };
    kv.finish()?;
    spec.validate().map_err(CliError::Core)?;
    Ok(NetworkFile {
        spec,
        scheme,
        input_dist,
        norm_rule,
    })
}

/// Assemble the Monte-Carlo config for `analyze` from a spec file plus flags.
pub fn analyze_mc(trials: usize, batch: usize, seed: u64) -> McConfig {
    McConfig {
        trials,
        batch_size: batch,
        master_seed: seed,
        input_dist: InputDist::Rademacher,
    }
}

/// Parse a full training config file (full-precision first/last by default
/// is NOT assumed; the binary flags come from the file, defaulting to none).
pub fn parse_train_file(text: &str) -> Result<TrainConfig> {
    let mut kv = KvFile::parse(text)?;
    parse_train_from(&mut kv).and_then(|config| {
        kv.finish()?;
        Ok(config)
    })
}

fn parse_train_from(kv: &mut KvFile) -> Result<TrainConfig> {
    let (spec, _) = build_spec(kv, false)?;
    let scheme = match kv.take("init") {
        Some(raw) => parse_init(&raw)?,
        None => InitScheme::uniform(0.01),
    };
    let sigma_sq_per_layer = kv.take_list::<f64>("sigma_per_layer")?;
    let lr = kv.take_parsed::<f64>("lr")?.unwrap_or(1e-3);
    let mut adam = AdamHyper::with_lr(lr);
    if let Some(b1) = kv.take_parsed::<f64>("beta1")? {
        adam.beta1 = b1;
    }
    if let Some(b2) = kv.take_parsed::<f64>("beta2")? {
        adam.beta2 = b2;
    }
    if let Some(eps) = kv.take_parsed::<f64>("adam_eps")? {
        adam.eps = eps;
    }
    let epochs = kv.take_parsed::<usize>("epochs")?.unwrap_or(30);
    let milestones = kv.take_list::<usize>("milestones")?.unwrap_or_default();
    let lr_decay_div = kv.take_parsed::<f64>("decay")?.unwrap_or(10.0);
    let master_seed = kv.take_parsed::<u64>("seed")?.unwrap_or(42);
    let latent_clip = match kv.take("latent_clip") {
        Some(raw) => parse_bool(&raw, "latent_clip")?,
        None => true,
    };
    let telemetry = match kv.take("telemetry") {
        Some(raw) => parse_bool(&raw, "telemetry")?,
        None => true,
    };
    let config = TrainConfig {
        spec,
        scheme,
        sigma_sq_per_layer,
        adam,
        epochs,
        milestones,
        lr_decay_div,
        master_seed,
        latent_clip,
        telemetry,
    };
    config.validate().map_err(CliError::Core)?;
    Ok(config)
}

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        n_train: usize,
        n_test: usize,
        dim: usize,
        classes: usize,
        separation: f64,
        seed: u64,
    },
    Idx {
        train_images: String,
        train_labels: String,
        test_images: String,
        test_labels: String,
        mean: f64,
        std: f64,
        classes: usize,
    },
    Cifar10 {
        train_bins: Vec<String>,
        test_bins: Vec<String>,
        mean: [f64; 3],
        std: [f64; 3],
    },
}

/// Per-channel normalization constants applied by the CIFAR-10 loader.
pub const CIFAR10_MEAN: [f64; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR10_STD: [f64; 3] = [0.247, 0.243, 0.261];

/// Parse a dataset spec file.
pub fn parse_data_file(text: &str) -> Result<DataSource> {
    let mut kv = KvFile::parse(text)?;
    let source = parse_data_from(&mut kv)?;
    kv.finish()?;
    Ok(source)
}

fn parse_data_from(kv: &mut KvFile) -> Result<DataSource> {
    let source = kv
        .take("source")
        .ok_or_else(|| CliError::Config("missing key \"source\"".into()))?;
    match source.as_str() {
        "synthetic" => Ok(DataSource::Synthetic {
            n_train: kv.take_parsed::<usize>("n_train")?.unwrap_or(4096),
            n_test: kv.take_parsed::<usize>("n_test")?.unwrap_or(1024),
            dim: kv.take_parsed::<usize>("dim")?.unwrap_or(64),
            classes: kv.take_parsed::<usize>("classes")?.unwrap_or(10),
            separation: kv.take_parsed::<f64>("separation")?.unwrap_or(3.0),
            seed: kv.take_parsed::<u64>("data_seed")?.unwrap_or(7),
        }),
        "idx" => {
            let need = |kv: &mut KvFile, key: &str| -> Result<String> {
                kv.take(key)
                    .ok_or_else(|| CliError::Config(format!("missing key {key:?}")))
            };
            Ok(DataSource::Idx {
                train_images: need(kv, "train_images")?,
                train_labels: need(kv, "train_labels")?,
                test_images: need(kv, "test_images")?,
                test_labels: need(kv, "test_labels")?,
                mean: kv.take_parsed::<f64>("mean")?.unwrap_or(0.0),
                std: {
                    let std = kv.take_parsed::<f64>("std")?.unwrap_or(1.0);
                    if !(std > 0.0) {
                        return Err(CliError::Config(format!(
                            "normalization std must be positive, got {std}"
                        )));
                    }
                    std
                },
                classes: kv.take_parsed::<usize>("classes")?.unwrap_or(10),
            })
        }
        "cifar10" => {
            let split_paths = |raw: String| -> Vec<String> {
                raw.split(';')
                    .map(|p| p.trim().to_string())
                    .filter(|p| !p.is_empty())
                    .collect()
            };
            let train_bins = split_paths(kv.take("train_bins").ok_or_else(|| {
                CliError::Config("missing key \"train_bins\"".into())
            })?);
            let test_bins = split_paths(
                kv.take("test_bins")
                    .ok_or_else(|| CliError::Config("missing key \"test_bins\"".into()))?,
            );
            let mean = match kv.take_list::<f64>("mean")? {
                Some(list) if list.len() == 3 => [list[0], list[1], list[2]],
                Some(list) => {
                    return Err(CliError::Config(format!(
                        "mean needs 3 channel values, got {}",
                        list.len()
                    )))
                }
                None => CIFAR10_MEAN,
            };
            let std = match kv.take_list::<f64>("std")? {
                Some(list) if list.len() == 3 => [list[0], list[1], list[2]],
                Some(list) => {
                    return Err(CliError::Config(format!(
                        "std needs 3 channel values, got {}",
                        list.len()
                    )))
                }
                None => CIFAR10_STD,
            };
            if std.iter().any(|&s| !(s > 0.0)) {
                return Err(CliError::Config("normalization std must be positive".into()));
            }
            Ok(DataSource::Cifar10 {
                train_bins,
                test_bins,
                mean,
                std,
            })
        }
        other => Err(CliError::Config(format!("unknown source {other:?}"))),
    }
}

/// An ablation suite: a base training config, inline data keys, and the
/// (normalizer x binary-layer variance) grid with seeds per cell.
pub struct SuiteConfig {
    pub base: TrainConfig,
    pub data: DataSource,
    pub normalizers: Vec<NormRule>,
    pub variances: Vec<f64>,
    pub seeds: usize,
}

pub fn parse_suite_file(text: &str) -> Result<SuiteConfig> {
    let mut kv = KvFile::parse(text)?;
    let normalizers = match kv.take("normalizers") {
        Some(raw) if raw.trim().is_empty() => Vec::new(),
        Some(raw) => raw
            .split(',')
            .map(|item| NormRule::parse(item.trim()))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let variances = kv.take_list::<f64>("variances")?.unwrap_or_else(|| vec![0.01]);
    let seeds = kv.take_parsed::<usize>("seeds")?.unwrap_or(3);
    if seeds == 0 {
        return Err(CliError::Config("seeds must be at least 1".into()));
    }
    let data = parse_data_from(&mut kv)?;
    let base = parse_train_from(&mut kv)?;
    kv.finish()?;
    Ok(SuiteConfig {
        base,
        data,
        normalizers,
        variances,
        seeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_network_file() {
        let nf = parse_network_file("widths=64,64,64\nnormalizer=full_bn\n").unwrap();
        assert_eq!(nf.spec.widths(), vec![64, 64, 64]);
        assert!(nf.spec.layers.iter().all(|l| l.binary));
        assert_eq!(
            nf.spec.layers[0].normalizer.kind,
            NormalizerKind::FullBn
        );
    }

    #[test]
    fn rejects_unknown_keys_and_duplicates() {
        assert!(matches!(
            parse_network_file("widths=8,8,8\nbogus=1\n"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            KvFile::parse("a=1\na=2\n"),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn inv_sqrt_k_resolves_per_layer() {
        let nf =
            parse_network_file("widths=64,16,16\nnormalizer=center_scale:inv_sqrt_k\n").unwrap();
        assert_eq!(
            nf.spec.layers[0].normalizer.kind,
            NormalizerKind::CenterScale { scale: 0.125 }
        );
        assert_eq!(
            nf.spec.layers[1].normalizer.kind,
            NormalizerKind::CenterScale { scale: 0.25 }
        );
    }

    #[test]
    fn train_file_round_trip() {
        let text = "widths=8,16,16,4\nbinary=0,1,0\nnormalizer=center_scale:inv_sqrt_k\n\
                    normalize_last=false\ninit=uniform:0.01\nlr=0.002\nepochs=6\n\
                    milestones=3,5\ndecay=10\nbatch=16\nseed=9\nlatent_clip=true\ntelemetry=false\n";
        let config = parse_train_file(text).unwrap();
        assert_eq!(config.spec.widths(), vec![8, 16, 16, 4]);
        assert!(!config.spec.layers[0].binary);
        assert!(config.spec.layers[1].binary);
        assert_eq!(
            config.spec.layers[2].normalizer.kind,
            NormalizerKind::Identity
        );
        // bias defaults to the last layer only
        assert!(!config.spec.layers[0].bias && config.spec.layers[2].bias);
        assert_eq!(config.adam.lr, 0.002);
        assert_eq!(config.milestones, vec![3, 5]);
        assert!(!config.telemetry);
    }

    #[test]
    fn data_file_variants() {
        let synth = parse_data_file(
            "source=synthetic\nn_train=100\nn_test=50\ndim=8\nclasses=3\nseparation=2.5\ndata_seed=1\n",
        )
        .unwrap();
        assert!(matches!(synth, DataSource::Synthetic { n_train: 100, classes: 3, .. }));

        let cifar = parse_data_file("source=cifar10\ntrain_bins=a.bin;b.bin\ntest_bins=t.bin\n")
            .unwrap();
        match cifar {
            DataSource::Cifar10 { train_bins, mean, .. } => {
                assert_eq!(train_bins.len(), 2);
                assert_eq!(mean, CIFAR10_MEAN);
            }
            _ => panic!("expected cifar10"),
        }

        assert!(matches!(
            parse_data_file("source=idx\ntrain_images=a\n"),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn suite_file_grid() {
        let text = "normalizers=full_bn,identity\nvariances=0.1,0.01\nseeds=2\n\
                    source=synthetic\nn_train=100\nn_test=50\ndim=8\nclasses=3\n\
                    widths=8,16,16,4\nbinary=0,1,0\nnormalize_last=false\nepochs=2\nbatch=16\n";
        let suite = parse_suite_file(text).unwrap();
        assert_eq!(suite.normalizers.len(), 2);
        assert_eq!(suite.variances, vec![0.1, 0.01]);
        assert_eq!(suite.seeds, 2);
    }

    #[test]
    fn empty_normalizer_list_is_an_empty_suite() {
        let text = "normalizers=\nsource=synthetic\nwidths=8,16,4\nepochs=1\nbatch=8\n";
        let suite = parse_suite_file(text).unwrap();
        assert!(suite.normalizers.is_empty());
    }
}
