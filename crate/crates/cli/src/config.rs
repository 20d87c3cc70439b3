//! Flat experiment configuration: JSON or `key=value` files plus overrides.

use std::path::{Path, PathBuf};

use pstn_core::cpab::Tessellation;
use pstn_core::model::{ModelSpec, Variant};
use pstn_core::transform::Family;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Directory holding the four standard IDX files.
    #[default]
    Mnist,
    /// UCR-style delimited text, `train_file` and `test_file`.
    Ucr,
    /// Generated warped glyphs (16×16).
    Synth2d,
    /// Generated warped waveforms (length 64).
    Synth1d,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    /// Ignored (forced to `none`) for the cnn variant.
    pub family: Family,
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    pub train_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
    pub synth_train: usize,
    pub synth_test: usize,
    /// Nuisance warp scale for generated data; `None` uses the generator default.
    pub synth_warp_scale: Option<f64>,
    /// Size `k` of the seeded training subset.
    pub subset: Option<usize>,
    pub balanced: bool,
    pub seed: u64,
    pub sigma_p: f64,
    pub sigma_da: f64,
    pub sigma_noise: f64,
    pub s_train: usize,
    /// Test-time samples; `None` means 10 for pstn. Always 1 for cnn and stn.
    pub s_test: Option<usize>,
    /// `None` means 100, or 20 when training on 1000 or more examples.
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub lr_classifier: f64,
    pub lr_localizer: f64,
    pub weight_decay: f64,
    pub kl_weight: f64,
    /// 1D tessellation resolution.
    pub cells: usize,
    /// 2D tessellation resolution (rectangles per axis, four triangles each).
    pub grid_nx: usize,
    pub grid_ny: usize,
    pub n_steps: usize,
    /// Fraction of the training set held out for per-epoch validation.
    pub val_fraction: f64,
    pub normalize: bool,
    pub bins: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Pstn,
            family: Family::Affine,
            dataset: DatasetKind::Mnist,
            data_dir: PathBuf::from("data/mnist"),
            train_file: None,
            test_file: None,
            synth_train: 50,
            synth_test: 500,
            synth_warp_scale: None,
            subset: None,
            balanced: true,
            seed: 0,
            sigma_p: 0.05,
            sigma_da: 0.0,
            sigma_noise: 0.0,
            s_train: 1,
            s_test: None,
            epochs: None,
            batch_size: 64,
            lr_classifier: 1e-3,
            lr_localizer: 1e-3,
            weight_decay: 0.01,
            kl_weight: 1.0,
            cells: 16,
            grid_nx: 2,
            grid_ny: 2,
            n_steps: 100,
            val_fraction: 0.0,
            normalize: true,
            bins: 10,
            output_dir: PathBuf::from("runs"),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl ExperimentConfig {
    /// Parses a JSON object or `key=value` lines (`#` starts a comment).
    pub fn parse(text: &str) -> Result<Self, CliError> {
        if text.trim_start().starts_with('{') {
            return serde_json::from_str(text).map_err(|e| usage(format!("config: {e}")));
        }
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected key=value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one field from its textual form. `none` clears optional fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.replace('-', "_");
        let mut tree = serde_json::to_value(&*self).expect("config serializes");
        let fields = tree.as_object_mut().expect("config is an object");
        let Some(slot) = fields.get_mut(&key) else {
            return Err(usage(format!("unknown config field `{key}`")));
        };
        *slot = if value.eq_ignore_ascii_case("none") || value.eq_ignore_ascii_case("null") {
            serde_json::Value::Null
        } else {
            serde_json::from_str(value).unwrap_or_else(|_| serde_json::Value::String(value.to_string()))
        };
        *self = serde_json::from_value(tree).map_err(|e| usage(format!("invalid value `{value}` for `{key}`: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, why: &str| Err(usage(format!("invalid `{field}`: {why}")));
        if !(self.sigma_p > 0.0) {
            return bad("sigma_p", "must be positive");
        }
        for (name, v) in [("sigma_da", self.sigma_da), ("sigma_noise", self.sigma_noise), ("weight_decay", self.weight_decay), ("kl_weight", self.kl_weight)] {
            if !(v >= 0.0) {
                return bad(name, "must be non-negative");
            }
        }
        for (name, v) in [("lr_classifier", self.lr_classifier), ("lr_localizer", self.lr_localizer)] {
            if !(v > 0.0) {
                return bad(name, "must be positive");
            }
        }
        let counts = [
            ("s_train", Some(self.s_train)),
            ("s_test", self.s_test),
            ("epochs", self.epochs),
            ("batch_size", Some(self.batch_size)),
            ("subset", self.subset),
            ("cells", Some(self.cells)),
            ("grid_nx", Some(self.grid_nx)),
            ("grid_ny", Some(self.grid_ny)),
            ("n_steps", Some(self.n_steps)),
            ("bins", Some(self.bins)),
            ("synth_test", Some(self.synth_test)),
        ];
        for (name, v) in counts {
            if v == Some(0) {
                return bad(name, "must be at least 1");
            }
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction", "must be in [0, 1)");
        }
        if self.variant != Variant::Cnn && self.family == Family::None {
            return bad("family", "stn and pstn need `affine` or `diffeo`");
        }
        if self.dataset == DatasetKind::Ucr && (self.train_file.is_none() || self.test_file.is_none()) {
            return bad("train_file", "ucr datasets need `train_file` and `test_file`");
        }
        Ok(())
    }

    pub fn effective_family(&self) -> Family {
        if self.variant == Variant::Cnn {
            Family::None
        } else {
            self.family
        }
    }

    /// Number of training examples before any validation split, when known up front.
    fn train_size_hint(&self) -> Option<usize> {
        self.subset.or(match self.dataset {
            DatasetKind::Synth1d | DatasetKind::Synth2d => Some(self.synth_train),
            _ => None,
        })
    }

    pub fn effective_epochs(&self) -> usize {
        self.epochs
            .unwrap_or(if self.train_size_hint().is_some_and(|n| n < 1000) { 100 } else { 20 })
    }

    pub fn effective_s_test(&self) -> usize {
        match self.variant {
            Variant::Pstn => self.s_test.unwrap_or(10),
            _ => 1,
        }
    }

    pub fn tessellation(&self, input_shape: &[usize]) -> Tessellation {
        if input_shape.len() == 2 {
            Tessellation::Intervals { cells: self.cells }
        } else {
            Tessellation::Triangles {
                nx: self.grid_nx,
                ny: self.grid_ny,
            }
        }
    }

    pub fn model_spec(&self, input_shape: &[usize], classes: usize) -> ModelSpec {
        let mut spec = ModelSpec::new(self.variant, self.effective_family(), input_shape, classes);
        spec.sigma_p = self.sigma_p;
        spec.sigma_noise = self.sigma_noise;
        spec.s_train = self.s_train;
        spec.s_test = self.effective_s_test();
        spec.tessellation = self.tessellation(input_shape);
        spec.n_steps = self.n_steps;
        spec.kl_weight = self.kl_weight;
        spec
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
