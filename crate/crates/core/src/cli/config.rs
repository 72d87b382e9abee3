//! `key = value` run configuration with `#` comments and dotted section
//! keys. A bare key (`lambda`) resolves to the unique known key ending in
//! `.lambda`.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::SceneConfig;
use crate::embeddings::{build_semantic_inputs, load_word_vectors, Vocabulary};
use crate::error::{Error, Result};
use crate::gi_unit::GiMode;
use crate::model::{AdjacencyInit, GINetConfig};
use crate::numerics::Matrix;
use crate::training::TrainConfig;

/// The configuration shipped with the binary; used when `--config` is absent.
pub const BUNDLED: &str = include_str!("../../configs/toy.conf");

pub const KEYS: [&str; 33] = [
    "seed",
    "model.nodes",
    "model.node_dim",
    "model.channels",
    "model.embed_dim",
    "model.widths",
    "model.stride",
    "model.gi_mode",
    "model.semantic_adjacency",
    "data.side",
    "data.classes",
    "data.scenes",
    "data.min_shapes",
    "data.max_shapes",
    "data.seed",
    "data.jitter",
    "data.noise",
    "train.base_lr",
    "train.momentum",
    "train.weight_decay",
    "train.power",
    "train.iters",
    "train.batch",
    "train.log_interval",
    "train.eval_interval",
    "train.augment",
    "loss.lambda",
    "loss.alpha",
    "loss.sc_include_background",
    "embeddings.path",
    "output.dir",
    "sweep.lambdas",
    "gradcheck.max_probes",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: GINetConfig,
    pub data: SceneConfig,
    pub train: TrainConfig,
    pub embeddings: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub sweep_lambdas: Vec<f64>,
    /// Probe cap per tensor for the gradient suite; 0 probes everything.
    pub gradcheck_max_probes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = SceneConfig::default();
        RunConfig {
            model: GINetConfig {
                classes: data.classes.len(),
                ..GINetConfig::default()
            },
            data,
            train: TrainConfig::default(),
            embeddings: None,
            output_dir: PathBuf::from("runs/toy"),
            sweep_lambdas: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            gradcheck_max_probes: 0,
        }
    }
}

/// One `key = value` assignment and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub origin: String,
}

pub fn parse_entries(text: &str, source: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            msg,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(format!("expected `key = value`, found {line:?}")))?;
        let key = resolve_key(k.trim()).map_err(parse_err)?;
        out.push(Entry {
            key,
            value: v.trim().to_string(),
            origin: format!("{source}:{}", i + 1),
        });
    }
    Ok(out)
}

/// Parses a `--set key=value` override.
pub fn parse_override(s: &str) -> Result<Entry> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set {s:?}: expected key=value")))?;
    let key = resolve_key(k.trim()).map_err(|m| Error::Config(format!("--set {s:?}: {m}")))?;
    Ok(Entry {
        key,
        value: v.trim().to_string(),
        origin: "--set".into(),
    })
}

fn resolve_key(k: &str) -> std::result::Result<String, String> {
    if KEYS.contains(&k) {
        return Ok(k.to_string());
    }
    let matches: Vec<&str> = KEYS
        .iter()
        .copied()
        .filter(|key| key.rsplit('.').next() == Some(k) && key.contains('.'))
        .collect();
    match matches.as_slice() {
        [one] if !k.contains('.') => Ok(one.to_string()),
        [] | [_] => Err(format!("unknown key `{k}`")),
        many => Err(format!("ambiguous key `{k}`: could be {}", many.join(", "))),
    }
}

fn num<T: FromStr>(e: &Entry) -> Result<T> {
    e.value.parse().map_err(|_| {
        Error::Config(format!(
            "{} ({}): cannot parse {:?} as {}",
            e.key,
            e.origin,
            e.value,
            std::any::type_name::<T>()
        ))
    })
}

fn list<T: FromStr>(e: &Entry) -> Result<Vec<T>> {
    e.value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Config(format!("{} ({}): cannot parse list item {s:?}", e.key, e.origin)))
        })
        .collect()
}

fn boolean(e: &Entry) -> Result<bool> {
    match e.value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "{} ({}): expected a boolean, found {:?}",
            e.key, e.origin, e.value
        ))),
    }
}

impl RunConfig {
    /// Applies entries in order (later entries win), then validates.
    pub fn from_entries(entries: &[Entry]) -> Result<Self> {
        let mut c = RunConfig::default();
        for e in entries {
            c.apply(e)?;
        }
        c.model.classes = c.data.classes.len();
        c.validate()?;
        Ok(c)
    }

    /// Reads `path` (or the bundled config) and layers `overrides` on top.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut entries = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                parse_entries(&text, &p.display().to_string())?
            }
            None => parse_entries(BUNDLED, "<bundled toy.conf>")?,
        };
        for o in overrides {
            entries.push(parse_override(o)?);
        }
        Self::from_entries(&entries)
    }

    fn apply(&mut self, e: &Entry) -> Result<()> {
        let (m, d, t) = (&mut self.model, &mut self.data, &mut self.train);
        match e.key.as_str() {
            "seed" => t.seed = num(e)?,
            "model.nodes" => m.nodes = num(e)?,
            "model.node_dim" => m.node_dim = num(e)?,
            "model.channels" => m.channels = num(e)?,
            "model.embed_dim" => m.embed_dim = num(e)?,
            "model.widths" => {
                let w: Vec<usize> = list(e)?;
                m.widths = w.try_into().map_err(|w: Vec<usize>| {
                    Error::Config(format!(
                        "model.widths ({}): expected 3 widths, found {}",
                        e.origin,
                        w.len()
                    ))
                })?;
            }
            "model.stride" => m.stride = num(e)?,
            "model.gi_mode" => {
                m.gi_mode = GiMode::parse(&e.value).ok_or_else(|| {
                    Error::Config(format!("model.gi_mode ({}): expected full, visual or off", e.origin))
                })?
            }
            "model.semantic_adjacency" => {
                m.semantic_adjacency = match e.value.as_str() {
                    "random" => AdjacencyInit::Random,
                    "cooccurrence" => AdjacencyInit::Cooccurrence,
                    _ => {
                        return Err(Error::Config(format!(
                            "model.semantic_adjacency ({}): expected random or cooccurrence",
                            e.origin
                        )))
                    }
                }
            }
            "data.side" => d.side = num(e)?,
            "data.classes" => d.classes = list(e)?,
            "data.scenes" => d.scenes = num(e)?,
            "data.min_shapes" => d.min_shapes = num(e)?,
            "data.max_shapes" => d.max_shapes = num(e)?,
            "data.seed" => d.seed = num(e)?,
            "data.jitter" => d.jitter = num(e)?,
            "data.noise" => d.noise = num(e)?,
            "train.base_lr" => t.base_lr = num(e)?,
            "train.momentum" => t.momentum = num(e)?,
            "train.weight_decay" => t.weight_decay = num(e)?,
            "train.power" => t.power = num(e)?,
            "train.iters" => t.iters = num(e)?,
            "train.batch" => t.batch = num(e)?,
            "train.log_interval" => t.log_interval = num(e)?,
            "train.eval_interval" => t.eval_interval = num(e)?,
            "train.augment" => t.augment = boolean(e)?,
            "loss.lambda" => t.loss.lambda = num(e)?,
            "loss.alpha" => t.loss.alpha = num(e)?,
            "loss.sc_include_background" => t.sc_include_background = boolean(e)?,
            "embeddings.path" => self.embeddings = (!e.value.is_empty()).then(|| PathBuf::from(&e.value)),
            "output.dir" => self.output_dir = PathBuf::from(&e.value),
            "sweep.lambdas" => self.sweep_lambdas = list(e)?,
            "gradcheck.max_probes" => self.gradcheck_max_probes = num(e)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.data.validate()?;
        self.train.validate()?;
        if self.model.classes != self.data.classes.len() {
            return Err(Error::Config("model class count differs from data.classes".into()));
        }
        if !self.data.side.is_multiple_of(self.model.stride) {
            return Err(Error::Config(format!(
                "data.side = {} is not divisible by model.stride = {}",
                self.data.side, self.model.stride
            )));
        }
        if !(0.0..=1.0).contains(&self.data.jitter) || !(0.0..).contains(&self.data.noise) {
            return Err(Error::Config(
                "data.jitter must be in [0, 1] and data.noise non-negative".into(),
            ));
        }
        if self.sweep_lambdas.iter().any(|l| !(0.0..).contains(l)) {
            return Err(Error::Config("sweep.lambdas must be non-negative".into()));
        }
        Ok(())
    }

    /// Class embeddings `L` (`M × K`), from the configured file or hashed
    /// fallback vectors.
    pub fn semantic_inputs(&self) -> Result<Matrix<f32>> {
        let vocab = match &self.embeddings {
            Some(p) => load_word_vectors(p, self.model.embed_dim)?,
            None => Vocabulary::empty(self.model.embed_dim),
        };
        Ok(build_semantic_inputs(&self.data.classes, &vocab)?.matrix())
    }
}
