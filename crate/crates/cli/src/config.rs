//! Flat `key=value` run configuration.
//!
//! Resolution order: built-in defaults, then the `--config` file, then
//! `--set` pairs, then dedicated flags. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::PathBuf;

use wavetex::data::{AugmentConfig, PipelineConfig};
use wavetex::train::TrainConfig;
use wavetex::{BackboneConfig, ModelConfig};

use crate::CliError;

const DEFAULTS: &[(&str, &str)] = &[
    ("preset", "tiny"),
    ("input_channels", "1"),
    ("input_side", "auto"),
    ("stem_width", "preset"),
    ("stem_kernel", "preset"),
    ("stem_stride", "preset"),
    ("stem_maxpool", "preset"),
    ("stage_widths", "preset"),
    ("blocks_per_stage", "preset"),
    ("variant", "awtm"),
    ("tap", "pos3"),
    ("levels", "auto"),
    ("num_classes", "auto"),
    ("alpha", "0.1"),
    ("beta", "0.1"),
    ("epochs", "100"),
    ("batch_size", "8"),
    ("lr0", "0.001"),
    ("momentum", "0.9"),
    ("lr_half_period", "10"),
    ("seed", "0"),
    ("precision", "f32"),
    ("checkpoint_every", "10"),
    ("shuffle", "true"),
    ("equalize", "true"),
    ("flip_prob", "0.5"),
    ("rotation_prob", "0.5"),
    ("max_rotation_deg", "15"),
    ("affine_prob", "0.5"),
    ("max_translate", "0.1"),
    ("scale_min", "0.9"),
    ("scale_max", "1.1"),
    ("brightness_prob", "0.5"),
    ("brightness_min", "0.8"),
    ("brightness_max", "1.2"),
];

const BACKBONE_KEYS: &[&str] = &[
    "stem_width",
    "stem_kernel",
    "stem_stride",
    "stem_maxpool",
    "stage_widths",
    "blocks_per_stage",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct Resolved {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub pipeline: PipelineConfig,
    pub precision: Precision,
    /// The same configuration with every `auto`/`preset` replaced.
    pub echo: RunConfig,
}

fn parse<N: std::str::FromStr>(key: &str, v: &str) -> Result<N, CliError> {
    v.parse()
        .map_err(|_| CliError::Config(format!("`{key}` has invalid value `{v}`")))
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: DEFAULTS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_owned();
                Ok(())
            }
            None => Err(CliError::Config(format!("unknown configuration key `{key}`"))),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    /// Applies a `key=value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn apply_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{pair}`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Builds typed configurations. `data_classes` fills `num_classes=auto`.
    pub fn resolve(&self, data_classes: usize, out_dir: PathBuf) -> Result<Resolved, CliError> {
        let g = |k: &str| self.get(k);
        let channels: usize = parse("input_channels", g("input_channels"))?;
        let mut backbone = match g("preset") {
            "tiny" => BackboneConfig::tiny(channels),
            "full" => BackboneConfig::full(channels),
            other => return Err(CliError::Config(format!("unknown preset `{other}` (expected tiny or full)"))),
        };
        if g("input_side") != "auto" {
            backbone.input_side = parse("input_side", g("input_side"))?;
        }
        let mut model = ModelConfig::new(
            backbone,
            g("variant").parse()?,
            g("tap").parse()?,
            match g("num_classes") {
                "auto" => data_classes,
                v => parse("num_classes", v)?,
            },
        );
        for key in BACKBONE_KEYS {
            if g(key) != "preset" {
                model.set(key, g(key))?;
            }
        }
        model.set("levels", g("levels"))?;
        model.alpha = parse("alpha", g("alpha"))?;
        model.beta = parse("beta", g("beta"))?;
        model.validate()?;

        let augment = AugmentConfig {
            flip_prob: parse("flip_prob", g("flip_prob"))?,
            rotation_prob: parse("rotation_prob", g("rotation_prob"))?,
            max_rotation_deg: parse("max_rotation_deg", g("max_rotation_deg"))?,
            affine_prob: parse("affine_prob", g("affine_prob"))?,
            max_translate: parse("max_translate", g("max_translate"))?,
            scale_range: (parse("scale_min", g("scale_min"))?, parse("scale_max", g("scale_max"))?),
            brightness_prob: parse("brightness_prob", g("brightness_prob"))?,
            brightness_range: (
                parse("brightness_min", g("brightness_min"))?,
                parse("brightness_max", g("brightness_max"))?,
            ),
        };
        let train = TrainConfig {
            epochs: parse("epochs", g("epochs"))?,
            batch_size: parse("batch_size", g("batch_size"))?,
            lr0: parse("lr0", g("lr0"))?,
            momentum: parse("momentum", g("momentum"))?,
            lr_half_period: parse("lr_half_period", g("lr_half_period"))?,
            seed: parse("seed", g("seed"))?,
            shuffle: parse("shuffle", g("shuffle"))?,
            augment,
            checkpoint_every: parse("checkpoint_every", g("checkpoint_every"))?,
            out_dir,
        };
        train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let precision = match g("precision") {
            "f32" => Precision::F32,
            "f64" => Precision::F64,
            other => return Err(CliError::Config(format!("unknown precision `{other}` (expected f32 or f64)"))),
        };
        let pipeline = PipelineConfig {
            side: model.backbone.input_side,
            channels,
            equalize: parse("equalize", g("equalize"))?,
        };

        let mut echo = self.clone();
        let resolved_model = ModelConfig::from_kv(&model.to_kv())?;
        for line in resolved_model.to_kv().lines() {
            let (k, v) = line.split_once('=').expect("kv line");
            if echo.values.contains_key(k) {
                echo.values.insert(k.to_owned(), v.to_owned());
            }
        }
        echo.values.insert("levels".into(), model.resolved_levels()?.to_string());
        Ok(Resolved {
            model,
            train,
            pipeline,
            precision,
            echo,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_fail() {
        let mut c = RunConfig::default();
        assert!(matches!(c.apply_text("bogus = 1"), Err(CliError::Config(_))));
        assert!(c.apply_text("epochs = 3 # short\n\n# note\nvariant=dawn").is_ok());
        assert_eq!(c.get("epochs"), "3");
        assert_eq!(c.get("variant"), "dawn");
    }

    #[test]
    fn resolves_auto_levels() {
        let mut c = RunConfig::default();
        c.apply_text("preset=full\ntap=pos4").unwrap();
        let r = c.resolve(2, PathBuf::from("out")).unwrap();
        assert_eq!(r.model.resolved_levels().unwrap(), 2);
        assert_eq!(r.echo.get("levels"), "2");
        assert_eq!(r.echo.get("input_side"), "256");
        assert_eq!(r.echo.get("stem_kernel"), "7");
    }

    #[test]
    fn echo_reproduces_resolution() {
        let mut c = RunConfig::default();
        c.apply_text("variant=dawn\nepochs=4").unwrap();
        let r = c.resolve(3, PathBuf::from("o")).unwrap();
        let mut again = RunConfig::default();
        again.apply_text(&r.echo.to_text()).unwrap();
        let r2 = again.resolve(99, PathBuf::from("o")).unwrap();
        assert_eq!(r2.model.resolved_levels().unwrap(), r.model.resolved_levels().unwrap());
        assert_eq!(r2.model.levels, Some(2));
        assert_eq!(ModelConfig { levels: None, ..r2.model }, r.model);
        assert_eq!(r2.train, r.train);
    }

    #[test]
    fn too_many_levels_is_a_config_error() {
        let mut c = RunConfig::default();
        c.apply_text("preset=full\ntap=pos5\nlevels=9").unwrap();
        assert!(matches!(c.resolve(2, PathBuf::new()), Err(CliError::Config(m)) if m.contains("at most 1")));
    }
}
