//! Flat `key = value` experiment configuration with dotted section keys.
//!
//! Blank lines and lines starting with `#` are ignored. Relative paths are
//! resolved against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::nn::{Activation, ConvStem, ModelSpec};
use crate::optim::{LineSearchConfig, LrSchedule};
use crate::trajectory::SamplingSchedule;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        train_limit: Option<usize>,
        test_limit: Option<usize>,
    },
    Blobs {
        classes: usize,
        per_class: usize,
        test_per_class: usize,
        dim: usize,
        spread: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub init: u64,
    pub data: u64,
    pub noise: u64,
}

impl Seeds {
    /// Seeds derived from a single run seed (what `--seed` sets).
    pub fn from_run_seed(seed: u64) -> Self {
        Seeds { init: seed, data: seed.wrapping_add(1), noise: seed.wrapping_add(2) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineOptimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub optimizer: BaselineOptimizer,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectedOptimizer {
    Psgd,
    Pbfgs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedConfig {
    pub optimizer: ProjectedOptimizer,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub line_search: LineSearchConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub data: DataSource,
    pub normalize: bool,
    pub seeds: Seeds,
    pub baseline: BaselineConfig,
    pub sampling: SamplingSchedule,
    /// Prepend the initial point `w_0` to the trajectory.
    pub include_init: bool,
    pub d: usize,
    pub projected: ProjectedConfig,
    pub noise_fraction: Option<f64>,
    pub output_dir: PathBuf,
    pub eval_chunk: usize,
}

const KEYS: &[&str] = &[
    "model.layers",
    "model.activation",
    "model.conv",
    "model.input_shape",
    "data.source",
    "data.train_images",
    "data.train_labels",
    "data.test_images",
    "data.test_labels",
    "data.train_limit",
    "data.test_limit",
    "data.classes",
    "data.per_class",
    "data.test_per_class",
    "data.dim",
    "data.spread",
    "data.normalize",
    "seeds.init",
    "seeds.data",
    "seeds.noise",
    "baseline.optimizer",
    "baseline.lr",
    "baseline.momentum",
    "baseline.weight_decay",
    "baseline.epochs",
    "baseline.batch_size",
    "baseline.schedule",
    "sampling.per_epoch",
    "sampling.start",
    "sampling.end",
    "sampling.include_init",
    "subspace.d",
    "projected.optimizer",
    "projected.lr",
    "projected.momentum",
    "projected.weight_decay",
    "projected.epochs",
    "projected.batch_size",
    "projected.schedule",
    "projected.c",
    "projected.beta",
    "projected.max_backtracks",
    "noise.fraction",
    "output_dir",
    "eval.chunk",
];

/// Raw key/value pairs before interpretation.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
    base_dir: PathBuf,
}

impl RawConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut raw = RawConfig { values: BTreeMap::new(), base_dir: base_dir.to_path_buf() };
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", lineno + 1), format!("expected key = value, got {line:?}")))?;
            raw.set(k.trim(), v.trim())?;
        }
        Ok(raw)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::config(key, "unknown key"));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::config(key, format!("cannot parse {v:?}"))),
        }
    }

    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.values
            .get(key)
            .map(|v| v.parse().map_err(|_| Error::config(key, format!("cannot parse {v:?}"))))
            .transpose()
    }

    fn list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        self.values
            .get(key)
            .map(|v| {
                v.split(',')
                    .map(|p| p.trim().parse().map_err(|_| Error::config(key, format!("cannot parse {v:?}"))))
                    .collect()
            })
            .transpose()
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        let v = self.values.get(key).ok_or_else(|| Error::config(key, "required"))?;
        Ok(self.base_dir.join(v))
    }

    fn parse_with<T>(&self, key: &str, default: T, f: impl Fn(&str) -> std::result::Result<T, String>) -> Result<T> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => f(v).map_err(|m| Error::config(key, m)),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        ExperimentConfig::from_raw(&RawConfig::parse(&text, base)?)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        ExperimentConfig::from_raw(&RawConfig::parse(text, base_dir)?)
    }

    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let layers = raw.list("model.layers")?.unwrap_or_else(|| vec![784, 64, 10]);
        let activation = raw.parse_with("model.activation", Activation::Relu, |s| s.parse())?;
        let conv_stem = match raw.list("model.conv")? {
            None => None,
            Some(c) => {
                let [channels, kernel, stride] = c[..] else {
                    return Err(Error::config("model.conv", "expected channels,kernel,stride"));
                };
                let shape = raw.list("model.input_shape")?.ok_or_else(|| Error::config("model.input_shape", "required with model.conv"))?;
                let [ic, h, w] = shape[..] else {
                    return Err(Error::config("model.input_shape", "expected channels,height,width"));
                };
                Some(ConvStem { channels, kernel, stride, input: (ic, h, w) })
            }
        };
        let model = ModelSpec { layer_dims: layers, activation, conv_stem };
        model.validate().map_err(|e| Error::config("model.layers", e.to_string()))?;

        let data = match raw.get("data.source", "idx".to_string())?.as_str() {
            "idx" => DataSource::Idx {
                train_images: raw.path("data.train_images")?,
                train_labels: raw.path("data.train_labels")?,
                test_images: raw.path("data.test_images")?,
                test_labels: raw.path("data.test_labels")?,
                train_limit: raw.opt("data.train_limit")?,
                test_limit: raw.opt("data.test_limit")?,
            },
            "blobs" => DataSource::Blobs {
                classes: raw.get("data.classes", *model.layer_dims.last().unwrap())?,
                per_class: raw.get("data.per_class", 100)?,
                test_per_class: raw.get("data.test_per_class", 50)?,
                dim: raw.get("data.dim", model.layer_dims[0])?,
                spread: raw.get("data.spread", 1.0)?,
            },
            other => return Err(Error::config("data.source", format!("expected idx or blobs, got {other:?}"))),
        };

        let seeds = Seeds {
            init: raw.get("seeds.init", 0)?,
            data: raw.get("seeds.data", 1)?,
            noise: raw.get("seeds.noise", 2)?,
        };

        let baseline = BaselineConfig {
            optimizer: raw.parse_with("baseline.optimizer", BaselineOptimizer::Sgd, |s| match s {
                "sgd" => Ok(BaselineOptimizer::Sgd),
                "adam" => Ok(BaselineOptimizer::Adam),
                _ => Err(format!("expected sgd or adam, got {s:?}")),
            })?,
            lr: raw.get("baseline.lr", 0.1)?,
            momentum: raw.get("baseline.momentum", 0.9)?,
            weight_decay: raw.get("baseline.weight_decay", 1e-4)?,
            epochs: raw.get("baseline.epochs", 20)?,
            batch_size: raw.get("baseline.batch_size", 128)?,
            schedule: raw.parse_with("baseline.schedule", LrSchedule::default(), |s| s.parse())?,
        };
        if baseline.epochs == 0 {
            return Err(Error::config("baseline.epochs", "must be at least 1"));
        }
        if baseline.batch_size == 0 {
            return Err(Error::config("baseline.batch_size", "must be at least 1"));
        }

        let sampling = SamplingSchedule::new(
            raw.get("sampling.per_epoch", 1)?,
            raw.get("sampling.start", 0)?,
            raw.get("sampling.end", baseline.epochs)?,
        )?;
        if sampling.end_epoch > baseline.epochs {
            return Err(Error::config(
                "sampling.end",
                format!("{} is past the {} baseline epochs", sampling.end_epoch, baseline.epochs),
            ));
        }

        let optimizer = raw.parse_with("projected.optimizer", ProjectedOptimizer::Psgd, |s| match s {
            "psgd" => Ok(ProjectedOptimizer::Psgd),
            "pbfgs" => Ok(ProjectedOptimizer::Pbfgs),
            _ => Err(format!("expected psgd or pbfgs, got {s:?}")),
        })?;
        let default_batch = match optimizer {
            ProjectedOptimizer::Psgd => baseline.batch_size,
            ProjectedOptimizer::Pbfgs => 512,
        };
        let default_epochs = match optimizer {
            ProjectedOptimizer::Psgd => 40,
            ProjectedOptimizer::Pbfgs => 10,
        };
        let projected = ProjectedConfig {
            optimizer,
            lr: raw.get("projected.lr", 1.0)?,
            momentum: raw.get("projected.momentum", baseline.momentum)?,
            weight_decay: raw.get("projected.weight_decay", baseline.weight_decay)?,
            epochs: raw.get("projected.epochs", default_epochs)?,
            batch_size: raw.get("projected.batch_size", default_batch)?,
            schedule: raw.parse_with("projected.schedule", LrSchedule(vec![(30, 0.1)]), |s| s.parse())?,
            line_search: LineSearchConfig {
                c: raw.get("projected.c", 0.4)?,
                beta: raw.get("projected.beta", 0.55)?,
                max_backtracks: raw.get("projected.max_backtracks", 50)?,
            },
        };
        projected.line_search.validate()?;
        if projected.epochs == 0 {
            return Err(Error::config("projected.epochs", "must be at least 1"));
        }
        if projected.batch_size == 0 {
            return Err(Error::config("projected.batch_size", "must be at least 1"));
        }

        let noise_fraction: Option<f64> = raw.opt("noise.fraction")?;
        if let Some(c) = noise_fraction {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::config("noise.fraction", format!("{c} is outside [0, 1]")));
            }
        }

        let d = raw.get("subspace.d", 20)?;
        if d == 0 {
            return Err(Error::config("subspace.d", "must be at least 1"));
        }
        let output_dir = match raw.values.get("output_dir") {
            Some(_) => raw.path("output_dir")?,
            None => raw.base_dir.join("runs"),
        };

        Ok(ExperimentConfig {
            model,
            data,
            normalize: raw.get("data.normalize", false)?,
            seeds,
            baseline,
            sampling,
            include_init: raw.get("sampling.include_init", false)?,
            d,
            projected,
            noise_fraction,
            output_dir,
            eval_chunk: raw.get("eval.chunk", 1000)?,
        })
    }

    /// Number of snapshots a baseline run will record.
    pub fn expected_samples(&self, train_len: usize) -> usize {
        let steps = crate::data::steps_per_epoch(train_len, self.baseline.batch_size);
        self.sampling.expected_samples(steps) + usize::from(self.include_init)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(text, Path::new("/cfg"))
    }

    const BLOBS: &str = "data.source = blobs\nmodel.layers = 4,8,3\n";

    #[test]
    fn defaults_follow_the_desk_recipe() {
        let cfg = parse(BLOBS).unwrap();
        assert_eq!(cfg.baseline.lr, 0.1);
        assert_eq!(cfg.baseline.momentum, 0.9);
        assert_eq!(cfg.baseline.weight_decay, 1e-4);
        assert_eq!(cfg.baseline.batch_size, 128);
        assert_eq!(cfg.baseline.epochs, 20);
        assert_eq!(cfg.sampling, SamplingSchedule::new(1, 0, 20).unwrap());
        assert!(!cfg.include_init);
        assert_eq!(cfg.d, 20);
        assert_eq!(cfg.projected.optimizer, ProjectedOptimizer::Psgd);
        assert_eq!(cfg.projected.lr, 1.0);
        assert_eq!(cfg.projected.epochs, 40);
        assert_eq!(cfg.projected.schedule.factor(30), 0.1);
        assert_eq!(cfg.projected.line_search, LineSearchConfig::default());
        assert_eq!(cfg.output_dir, PathBuf::from("/cfg/runs"));
        assert_eq!(cfg.noise_fraction, None);
    }

    #[test]
    fn pbfgs_defaults_to_larger_batches() {
        let cfg = parse(&format!("{BLOBS}projected.optimizer = pbfgs\n")).unwrap();
        assert_eq!(cfg.projected.batch_size, 512);
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let text = "data.train_images = a.gz\ndata.train_labels = b\ndata.test_images = /abs/c\ndata.test_labels = d\noutput_dir = out\n";
        let cfg = parse(text).unwrap();
        let DataSource::Idx { train_images, test_images, .. } = cfg.data else { panic!() };
        assert_eq!(train_images, PathBuf::from("/cfg/a.gz"));
        assert_eq!(test_images, PathBuf::from("/abs/c"));
        assert_eq!(cfg.output_dir, PathBuf::from("/cfg/out"));
    }

    #[test]
    fn errors_name_the_offending_key() {
        let key_of = |text: &str| match parse(text) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected config error, got {other:?}"),
        };
        assert_eq!(key_of(&format!("{BLOBS}baseline.lr = fast\n")), "baseline.lr");
        assert_eq!(key_of(&format!("{BLOBS}bogus.key = 1\n")), "bogus.key");
        assert_eq!(key_of(&format!("{BLOBS}noise.fraction = 1.5\n")), "noise.fraction");
        assert_eq!(key_of(&format!("{BLOBS}sampling.start = 20\n")), "sampling.start");
        assert_eq!(key_of(&format!("{BLOBS}sampling.end = 21\n")), "sampling.end");
        assert_eq!(key_of(&format!("{BLOBS}projected.c = 1\n")), "projected.c");
        assert_eq!(key_of("data.source = blobs\nmodel.layers = 4,0,3\n"), "model.layers");
        assert_eq!(key_of("data.source = idx\n"), "data.train_images");
        assert_eq!(key_of(&format!("{BLOBS}no equals sign\n")), "line 3");
    }

    #[test]
    fn comments_and_overrides() {
        let mut raw = RawConfig::parse(&format!("# comment\n\n{BLOBS}"), Path::new(".")).unwrap();
        raw.set("subspace.d", "5").unwrap();
        assert_eq!(ExperimentConfig::from_raw(&raw).unwrap().d, 5);
    }

    #[test]
    fn run_seed_derivation() {
        assert_eq!(Seeds::from_run_seed(7), Seeds { init: 7, data: 8, noise: 9 });
    }
}
