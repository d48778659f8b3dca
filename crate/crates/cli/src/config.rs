//! TOML run configuration. Unknown keys are rejected; relative paths are
//! resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use bathcls::model::{ModelConfig, Variant};
use bathcls::sweep::{GridSpec, HyperParams, SweepSettings};
use bathcls::trainer::{TrainSpec, DEFAULT_THRESHOLD};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub hyper: HyperParams,
    #[serde(default)]
    pub train: TrainSection,
    pub data: DataSection,
    pub output: OutputSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

/// Architecture widths. Activation and the pool/norm toggles come from
/// `[hyper]`, the input size from `[train]`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub variant: Variant,
    pub feb_filters: Vec<usize>,
    pub rb_count: usize,
    pub rb_filters: usize,
    pub rb_depth: usize,
    pub kernel_size: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            variant: m.variant,
            feb_filters: m.feb_filters,
            rb_count: m.rb_count,
            rb_filters: m.rb_filters,
            rb_depth: m.rb_depth,
            kernel_size: m.kernel_size,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs_max: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    /// 0 disables early stopping.
    pub patience: usize,
    pub image_size: usize,
    pub threshold: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainSpec::default();
        Self {
            epochs_max: t.epochs_max,
            batch_size: t.batch_size,
            validation_fraction: t.validation_fraction,
            patience: t.patience.unwrap_or(0),
            image_size: t.image_size,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub manifest: Option<PathBuf>,
    /// Image root for manifest paths; defaults to the manifest's directory.
    pub root: Option<PathBuf>,
    pub synthetic: Option<SyntheticSection>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub train: usize,
    pub test: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub variants: Vec<Variant>,
    pub grid: GridSpec,
    pub per_model: usize,
    pub phase1_size: usize,
    pub phase1_epochs: usize,
    pub phase2_sizes: Vec<usize>,
    pub phase2_epochs: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            grid: GridSpec::default(),
            per_model: 2,
            phase1_size: 256,
            phase1_epochs: 50,
            phase2_sizes: vec![128, 256, 512, 1024],
            phase2_epochs: 500,
        }
    }
}

/// Where samples come from after path resolution.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Manifest { manifest: PathBuf, root: PathBuf },
    Synthetic { train: usize, test: usize, seed: u64 },
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(m) = self.data.manifest.as_mut() {
            fix(m);
        }
        if let Some(r) = self.data.root.as_mut() {
            fix(r);
        }
        fix(&mut self.output.dir);
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError(m));
        match (&self.data.manifest, &self.data.synthetic) {
            (Some(_), Some(_)) => return bad("[data] needs either `manifest` or `synthetic`, not both".into()),
            (None, None) => return bad("[data] needs `manifest` or `synthetic`".into()),
            (Some(m), None) if !m.is_file() => return bad(format!("manifest {} does not exist", m.display())),
            (None, Some(s)) if s.train < 2 || s.test < 2 || s.train % 2 == 1 || s.test % 2 == 1 => {
                return bad("synthetic train and test counts must be even and >= 2".into())
            }
            _ => {}
        }
        if self.data.synthetic.is_some() && self.data.root.is_some() {
            return bad("[data] `root` only applies to a manifest".into());
        }
        if let Some(r) = &self.data.root {
            if !r.is_dir() {
                return bad(format!("image root {} is not a directory", r.display()));
            }
        }
        if !(0.0..=1.0).contains(&self.train.threshold) {
            return bad(format!("threshold must be in [0, 1], got {}", self.train.threshold));
        }
        self.train_spec(self.train.image_size, self.train.epochs_max)
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        self.model_config().validate().map_err(|e| ConfigError(e.to_string()))?;
        let s = &self.sweep;
        if s.variants.is_empty() || s.per_model == 0 || s.phase2_sizes.is_empty() {
            return bad("[sweep] needs at least one variant, per_model >= 1 and one phase-2 size".into());
        }
        if s.phase1_epochs == 0 || s.phase2_epochs == 0 || s.phase1_size == 0 || s.phase2_sizes.contains(&0) {
            return bad("[sweep] epochs and sizes must be >= 1".into());
        }
        if s.grid.enumerate().is_empty() {
            return bad("[sweep.grid] has an empty axis".into());
        }
        Ok(())
    }

    pub fn data_source(&self) -> DataSource {
        match (&self.data.manifest, &self.data.synthetic) {
            (Some(m), _) => DataSource::Manifest {
                manifest: m.clone(),
                root: self
                    .data
                    .root
                    .clone()
                    .unwrap_or_else(|| m.parent().unwrap_or(Path::new(".")).to_path_buf()),
            },
            (None, Some(s)) => DataSource::Synthetic {
                train: s.train,
                test: s.test,
                seed: s.seed,
            },
            (None, None) => unreachable!("validated"),
        }
    }

    /// Architecture with the `[hyper]` toggles and `[train]` size applied.
    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        self.hyper.apply(&ModelConfig {
            variant: m.variant,
            feb_filters: m.feb_filters.clone(),
            rb_count: m.rb_count,
            rb_filters: m.rb_filters,
            rb_depth: m.rb_depth,
            kernel_size: m.kernel_size,
            input_size: self.train.image_size,
            ..ModelConfig::default()
        })
    }

    pub fn train_spec(&self, image_size: usize, epochs_max: usize) -> TrainSpec {
        TrainSpec {
            epochs_max,
            batch_size: self.train.batch_size,
            validation_fraction: self.train.validation_fraction,
            patience: (self.train.patience > 0).then_some(self.train.patience),
            seed: self.seed,
            hyperparams: self.hyper,
            image_size,
        }
    }

    pub fn sweep_settings(&self, epochs_max: usize) -> SweepSettings {
        SweepSettings {
            base_model: self.model_config(),
            epochs_max,
            batch_size: self.train.batch_size,
            validation_fraction: self.train.validation_fraction,
            patience: (self.train.patience > 0).then_some(self.train.patience),
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, text).unwrap();
        RunConfig::load(&path)
    }

    const MINIMAL: &str = "[data]\nsynthetic = { train = 8, test = 4 }\n[output]\ndir = \"out\"\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.model_config().input_size, 256);
        assert_eq!(c.hyper, HyperParams::default());
        assert_eq!(c.train_spec(256, 50).patience, Some(10));
        assert!(c.output.dir.ends_with("out") && c.output.dir.is_absolute());
        assert_eq!(c.sweep.grid.enumerate().len(), 144);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = parse(&format!("{MINIMAL}[train]\nepochs = 3\n")).unwrap_err();
        assert!(e.0.contains("epochs"), "{e}");
    }

    #[test]
    fn data_source_must_be_unambiguous() {
        let e = parse("[data]\n[output]\ndir = \"o\"\n").unwrap_err();
        assert!(e.0.contains("manifest"));
        let e = parse("[data]\nmanifest = \"nope.csv\"\n[output]\ndir = \"o\"\n").unwrap_err();
        assert!(e.0.contains("does not exist"));
    }

    #[test]
    fn patience_zero_disables_early_stopping() {
        let c = parse(&format!("{MINIMAL}[train]\npatience = 0\nimage_size = 32\n")).unwrap();
        assert_eq!(c.train_spec(32, 5).patience, None);
    }

    #[test]
    fn hyper_section_overrides_model_toggles() {
        let c = parse(&format!(
            "{MINIMAL}[hyper]\nactivation = \"tanh\"\nuse_batchnorm = true\n"
        ))
        .unwrap();
        let m = c.model_config();
        assert_eq!(m.activation, bathcls::nn::ActivationKind::Tanh);
        assert!(m.use_batchnorm && m.use_maxpool);
    }

    #[test]
    fn shipped_configs_parse() {
        let dir = tempfile::tempdir().unwrap();
        let configs = dir.path().join("configs");
        let manifest = dir.path().join("data/hotelbath/manifest.csv");
        std::fs::create_dir_all(&configs).unwrap();
        std::fs::create_dir_all(manifest.parent().unwrap()).unwrap();
        std::fs::write(&manifest, "path,label,split\n").unwrap();
        for name in ["smoke.toml", "hotelbath.toml"] {
            let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
            std::fs::copy(src, configs.join(name)).unwrap();
            RunConfig::load(&configs.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        let full = RunConfig::load(&configs.join("hotelbath.toml")).unwrap();
        assert_eq!(full.sweep.grid.enumerate().len(), 144);
        assert_eq!(full.model_config().input_size, 512);
    }
}
