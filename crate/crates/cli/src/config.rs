//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ffhr_core::encoder::{EncoderConfig, EncoderVariant, Space};
use ffhr_core::{Curvature, ModelConfig, ScoreKind, TrainConfig, TransformKind};

/// Every key a config file may set, in the order the resolved echo uses.
pub const KEYS: &[&str] = &[
    "data_dir",
    "output_dir",
    "model",
    "score",
    "space",
    "use_gcn",
    "encoder",
    "dim",
    "curvature",
    "trainable_curvature",
    "layers",
    "heads",
    "activation_slope",
    "self_loops",
    "batch_size",
    "learning_rate",
    "reg_coeff",
    "max_epochs",
    "patience",
    "eval_every",
    "seed",
    "check_ball",
    "threads",
    "deterministic",
    "corrupt_gradient",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub model: TransformKind,
    /// `None` picks the inner-product score of the chosen space.
    pub score: Option<ScoreKind>,
    pub space: Space,
    pub use_gcn: bool,
    pub encoder: EncoderVariant,
    pub dim: usize,
    pub curvature: f64,
    pub trainable_curvature: bool,
    pub layers: usize,
    pub heads: usize,
    pub activation_slope: f64,
    pub self_loops: bool,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub reg_coeff: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub check_ball: bool,
    /// 0 means one worker per core.
    pub threads: Option<usize>,
    pub deterministic: bool,
    /// Test hook: perturbs the analytic gradient in `gradcheck`.
    pub corrupt_gradient: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            data_dir: None,
            output_dir: PathBuf::from("runs"),
            model: model.transform,
            score: None,
            space: model.encoder.space,
            use_gcn: model.use_gcn,
            encoder: model.encoder.variant,
            dim: model.dim,
            curvature: model.curvature.get(),
            trainable_curvature: model.trainable_curvature,
            layers: model.encoder.num_layers,
            heads: model.encoder.num_heads,
            activation_slope: model.encoder.activation_slope,
            self_loops: model.encoder.self_loops,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            reg_coeff: train.reg_coeff,
            max_epochs: train.max_epochs,
            patience: train.patience,
            eval_every: train.eval_every,
            seed: train.seed,
            check_ball: train.check_ball,
            threads: None,
            deterministic: false,
            corrupt_gradient: false,
        }
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => bail!("expected true or false, got {v:?}"),
    }
}

fn parse<T: std::str::FromStr>(v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| anyhow!("cannot parse {v:?}: {e}"))
}

fn space_name(s: Space) -> &'static str {
    match s {
        Space::Hyperbolic => "hyperbolic",
        Space::Euclidean => "euclidean",
    }
}

fn encoder_name(v: EncoderVariant) -> &'static str {
    match v {
        EncoderVariant::Fpm => "fpm",
        EncoderVariant::Hgcn => "hgcn",
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let res: Result<()> = (|| {
            match key {
                "data_dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
                "output_dir" => self.output_dir = PathBuf::from(v),
                "model" => self.model = TransformKind::from_model_name(v)?,
                "score" => self.score = if v == "auto" { None } else { Some(ScoreKind::from_name(v)?) },
                "space" => {
                    self.space = match v {
                        "hyperbolic" => Space::Hyperbolic,
                        "euclidean" => Space::Euclidean,
                        _ => bail!("expected hyperbolic or euclidean"),
                    }
                }
                "use_gcn" => self.use_gcn = parse_bool(v)?,
                "encoder" => {
                    self.encoder = match v {
                        "fpm" => EncoderVariant::Fpm,
                        "hgcn" => EncoderVariant::Hgcn,
                        _ => bail!("expected fpm or hgcn"),
                    }
                }
                "dim" => self.dim = parse(v)?,
                "curvature" => self.curvature = parse(v)?,
                "trainable_curvature" => self.trainable_curvature = parse_bool(v)?,
                "layers" => self.layers = parse(v)?,
                "heads" => self.heads = parse(v)?,
                "activation_slope" => self.activation_slope = parse(v)?,
                "self_loops" => self.self_loops = parse_bool(v)?,
                "batch_size" => self.batch_size = parse(v)?,
                "learning_rate" => self.learning_rate = parse(v)?,
                "reg_coeff" => self.reg_coeff = parse(v)?,
                "max_epochs" => self.max_epochs = parse(v)?,
                "patience" => self.patience = parse(v)?,
                "eval_every" => self.eval_every = parse(v)?,
                "seed" => self.seed = parse(v)?,
                "check_ball" => self.check_ball = parse_bool(v)?,
                "threads" => self.threads = if v == "auto" { None } else { Some(parse(v)?) },
                "deterministic" => self.deterministic = parse_bool(v)?,
                "corrupt_gradient" => self.corrupt_gradient = parse_bool(v)?,
                _ => bail!("unknown key"),
            }
            Ok(())
        })();
        res.with_context(|| format!("config key {key:?}"))
    }

    pub fn parse_text(text: &str, origin: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected `key = value`", i + 1))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                bail!("{origin}:{}: key {key:?} set twice", i + 1);
            }
            cfg.set(key, value).with_context(|| format!("{origin}:{}", i + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        RunConfig::parse_text(&text, &path.display().to_string())
    }

    /// Reads `path` (or starts from defaults) and applies `key=value`
    /// overrides in order.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        RunConfig::resolve_from(RunConfig::default(), path, overrides)
    }

    /// Like [`RunConfig::resolve`], with `base` standing in for a missing
    /// config file.
    pub fn resolve_from(base: RunConfig, path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut cfg = match path {
            Some(p) => RunConfig::load(p)?,
            None => base,
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects key=value, got {o:?}"))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }

    pub fn score_kind(&self) -> ScoreKind {
        self.score.unwrap_or(match self.space {
            Space::Hyperbolic => ScoreKind::Hin,
            Space::Euclidean => ScoreKind::EuclideanInner,
        })
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            dim: self.dim,
            transform: self.model,
            score: self.score_kind(),
            use_gcn: self.use_gcn,
            encoder: EncoderConfig {
                num_layers: self.layers,
                num_heads: self.heads,
                activation_slope: self.activation_slope,
                space: self.space,
                self_loops: self.self_loops,
                variant: self.encoder,
            },
            curvature: Curvature::new(self.curvature)?,
            trainable_curvature: self.trainable_curvature,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            reg_coeff: self.reg_coeff,
            max_epochs: self.max_epochs,
            patience: self.patience,
            eval_every: self.eval_every,
            seed: self.seed,
            check_ball: self.check_ball,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Worker count: the `threads` key, then `FFHR_THREADS`, then one per
    /// core. Deterministic runs always use one.
    pub fn worker_threads(&self) -> Result<usize> {
        if self.deterministic {
            return Ok(1);
        }
        if let Some(t) = self.threads {
            return Ok(t);
        }
        match std::env::var("FFHR_THREADS") {
            Ok(v) => parse(&v).context("FFHR_THREADS"),
            Err(_) => Ok(0),
        }
    }

    fn value(&self, key: &str) -> String {
        match key {
            "data_dir" => self.data_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            "output_dir" => self.output_dir.display().to_string(),
            "model" => self.model.model_name().to_string(),
            "score" => self.score_kind().name().to_string(),
            "space" => space_name(self.space).to_string(),
            "use_gcn" => self.use_gcn.to_string(),
            "encoder" => encoder_name(self.encoder).to_string(),
            "dim" => self.dim.to_string(),
            "curvature" => self.curvature.to_string(),
            "trainable_curvature" => self.trainable_curvature.to_string(),
            "layers" => self.layers.to_string(),
            "heads" => self.heads.to_string(),
            "activation_slope" => self.activation_slope.to_string(),
            "self_loops" => self.self_loops.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "reg_coeff" => self.reg_coeff.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "patience" => self.patience.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "seed" => self.seed.to_string(),
            "check_ball" => self.check_ball.to_string(),
            "threads" => self.threads.map(|t| t.to_string()).unwrap_or_else(|| "auto".into()),
            "deterministic" => self.deterministic.to_string(),
            "corrupt_gradient" => self.corrupt_gradient.to_string(),
            _ => unreachable!("key list and value table disagree on {key}"),
        }
    }

    /// Every key with its resolved value. Feeding the text back through
    /// [`RunConfig::parse_text`] gives the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# resolved ffhr configuration\n");
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.value(key));
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        KEYS.iter()
            .map(|k| (k.to_string(), serde_json::Value::String(self.value(k))))
            .collect::<serde_json::Map<_, _>>()
            .into()
    }
}
