//! Adagrad training loops, HTD to RHTD initialization and checkpoints.
//!
//! Per-example gradients are computed on independent tapes (in parallel) and
//! summed in example order, so results do not depend on the thread count.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{EncodedPair, FilterBounds, Vocabulary};
use crate::eval::{corpus_rouge, EvalError};
use crate::lexicon::{Lexicon, TypedVocabulary, WordType};
use crate::model::{ModelConfig, ModelError, ModelParams, Mode};
use crate::numerics::Tensor;
use crate::typed_decoders::{
    collect_gradients, greedy_decode, pair_loss, rhtd_sample_type, rhtd_step_gradients, Objective,
};

pub const ADAGRAD_EPS: f64 = 1e-10;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RHTD";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch for {name}: {message}")]
    Shape { name: String, message: String },
    #[error("incompatible checkpoint: {}", .0.join("; "))]
    Incompatible(Vec<String>),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint truncated at byte {offset} (needed {needed} more bytes)")]
    Truncated { offset: usize, needed: usize },
    #[error("checkpoint version {found} is not supported (expected {CHECKPOINT_VERSION})")]
    Version { found: u32 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// How the retained checkpoint is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    DevLoss,
    /// Dev ROUGE-L F1 of greedy decodes.
    DevRouge,
}

impl Selection {
    fn name(self) -> &'static str {
        match self {
            Selection::DevLoss => "dev_loss",
            Selection::DevRouge => "dev_rouge",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub lstm_layers: usize,
    pub lr: f64,
    /// Weight of the type loss in the htd objective.
    pub lambda: f64,
    /// Gumbel-Softmax temperature.
    pub tau: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Maximum vocabulary size, reserved tokens included.
    pub vocab_size: usize,
    pub filter: FilterBounds,
    /// Global gradient-norm clipping threshold.
    pub clip_norm: f64,
    pub selection: Selection,
    /// Greedy decoding budget for generation and ROUGE selection.
    pub max_decode_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::PgNet,
            embed_dim: 128,
            hidden_dim: 128,
            lstm_layers: 1,
            lr: 0.05,
            lambda: 1.0,
            tau: 1.0,
            epochs: 10,
            batch_size: 8,
            seed: 1,
            vocab_size: 50_000,
            filter: FilterBounds::default(),
            clip_norm: 2.0,
            selection: Selection::DevLoss,
            max_decode_len: 30,
        }
    }
}

/// Keys accepted by [`TrainConfig::set`], in echo order.
pub const CONFIG_KEYS: [&str; 18] = [
    "mode",
    "embed_dim",
    "hidden_dim",
    "lstm_layers",
    "lr",
    "lambda",
    "tau",
    "epochs",
    "batch_size",
    "seed",
    "vocab_size",
    "min_src",
    "max_src",
    "min_tgt",
    "max_tgt",
    "clip_norm",
    "selection",
    "max_decode_len",
];

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            value
                .trim()
                .parse()
                .map_err(|e| TrainError::Config(format!("bad value {value:?} for {key}: {e}")))
        }
        match key {
            "mode" => {
                self.mode = value.trim().parse().map_err(|e: ModelError| match e {
                    ModelError::Config(m) => TrainError::Config(m),
                    other => TrainError::Config(other.to_string()),
                })?
            }
            "embed_dim" => self.embed_dim = num(key, value)?,
            "hidden_dim" => self.hidden_dim = num(key, value)?,
            "lstm_layers" => self.lstm_layers = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "vocab_size" => self.vocab_size = num(key, value)?,
            "min_src" => self.filter.min_src = num(key, value)?,
            "max_src" => self.filter.max_src = num(key, value)?,
            "min_tgt" => self.filter.min_tgt = num(key, value)?,
            "max_tgt" => self.filter.max_tgt = num(key, value)?,
            "clip_norm" => self.clip_norm = num(key, value)?,
            "selection" => {
                self.selection = match value.trim() {
                    "dev_loss" => Selection::DevLoss,
                    "dev_rouge" => Selection::DevRouge,
                    other => {
                        return Err(TrainError::Config(format!(
                            "unknown selection {other:?} (expected dev_loss or dev_rouge)"
                        )))
                    }
                }
            }
            "max_decode_len" => self.max_decode_len = num(key, value)?,
            _ => return Err(TrainError::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        CONFIG_KEYS
            .iter()
            .map(|&k| {
                let v = match k {
                    "mode" => self.mode.to_string(),
                    "embed_dim" => self.embed_dim.to_string(),
                    "hidden_dim" => self.hidden_dim.to_string(),
                    "lstm_layers" => self.lstm_layers.to_string(),
                    "lr" => self.lr.to_string(),
                    "lambda" => self.lambda.to_string(),
                    "tau" => self.tau.to_string(),
                    "epochs" => self.epochs.to_string(),
                    "batch_size" => self.batch_size.to_string(),
                    "seed" => self.seed.to_string(),
                    "vocab_size" => self.vocab_size.to_string(),
                    "min_src" => self.filter.min_src.to_string(),
                    "max_src" => self.filter.max_src.to_string(),
                    "min_tgt" => self.filter.min_tgt.to_string(),
                    "max_tgt" => self.filter.max_tgt.to_string(),
                    "clip_norm" => self.clip_norm.to_string(),
                    "selection" => self.selection.name().to_string(),
                    "max_decode_len" => self.max_decode_len.to_string(),
                    _ => unreachable!(),
                };
                (k, v)
            })
            .collect()
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive_ints = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("max_decode_len", self.max_decode_len),
        ];
        for (k, v) in positive_ints {
            if v == 0 {
                return Err(TrainError::Config(format!("{k} must be positive")));
            }
        }
        if self.lstm_layers != 1 {
            return Err(TrainError::Config(format!(
                "only single-layer LSTMs are supported, got lstm_layers={}",
                self.lstm_layers
            )));
        }
        for (k, v) in [("lr", self.lr), ("lambda", self.lambda), ("tau", self.tau), ("clip_norm", self.clip_norm)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(TrainError::Config(format!("{k} must be positive and finite, got {v}")));
            }
        }
        if self.vocab_size <= crate::corpus::RESERVED.len() {
            return Err(TrainError::Config(format!(
                "vocab_size must exceed {}",
                crate::corpus::RESERVED.len()
            )));
        }
        self.filter
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            mode: self.mode,
        }
    }
}

/// `acc += g²; θ -= lr · g / √(acc + ε)`.
pub fn adagrad_step(param: &mut Tensor, grad: &Tensor, acc: &mut Tensor, lr: f64) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != acc.shape() {
        return Err(TrainError::Shape {
            name: "adagrad".into(),
            message: format!(
                "parameter {:?}, gradient {:?}, accumulator {:?}",
                param.shape(),
                grad.shape(),
                acc.shape()
            ),
        });
    }
    for ((p, &g), a) in param.data_mut().iter_mut().zip(grad.data()).zip(acc.data_mut()) {
        *a += g * g;
        *p -= lr * g / (*a + ADAGRAD_EPS).sqrt();
    }
    Ok(())
}

/// Applies [`adagrad_step`] to every parameter that has a gradient.
pub fn adagrad_update(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Tensor>,
    accumulators: &mut BTreeMap<String, Tensor>,
    lr: f64,
) -> Result<()> {
    for (name, g) in grads {
        let acc = accumulators.get_mut(name).ok_or_else(|| TrainError::Shape {
            name: name.clone(),
            message: "no accumulator".into(),
        })?;
        let p = params.get_mut(name).ok_or_else(|| TrainError::Shape {
            name: name.clone(),
            message: "no parameter".into(),
        })?;
        adagrad_step(p, g, acc, lr).map_err(|e| match e {
            TrainError::Shape { message, .. } => TrainError::Shape {
                name: name.clone(),
                message,
            },
            other => other,
        })?;
    }
    Ok(())
}

pub fn zero_accumulators(params: &ModelParams) -> BTreeMap<String, Tensor> {
    params
        .iter()
        .map(|(n, t)| (n.to_owned(), Tensor::zeros(t.shape())))
        .collect()
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= k);
        }
    }
    norm
}

/// Trained state: parameters, optimizer state and everything needed to
/// encode and decode new inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub accumulators: BTreeMap<String, Tensor>,
    /// Completed epochs.
    pub epoch: usize,
    pub vocab: Vocabulary,
    /// Present for typed modes.
    pub lexicon: Option<Lexicon>,
}

impl Checkpoint {
    pub fn fresh(config: &TrainConfig, vocab: Vocabulary, lexicon: Option<Lexicon>) -> Result<Self> {
        config.validate()?;
        if config.mode.is_typed() && lexicon.is_none() {
            return Err(TrainError::Config(format!("{} mode needs a lexicon", config.mode)));
        }
        if config.mode == Mode::Rhtd {
            return Err(TrainError::Config(
                "rhtd parameters must be initialized from a trained htd checkpoint".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ModelParams::init(config.model_config(vocab.len()), &mut rng);
        let accumulators = zero_accumulators(&params);
        Ok(Self {
            config: config.clone(),
            params,
            accumulators,
            epoch: 0,
            vocab,
            lexicon,
        })
    }

    /// Word types of the vocabulary; everything is context without a lexicon.
    pub fn typed_vocabulary(&self) -> TypedVocabulary {
        match &self.lexicon {
            Some(lex) => TypedVocabulary::new(&self.vocab, lex.clone()),
            None => TypedVocabulary::from_types(vec![WordType::Context; self.vocab.len()], Lexicon::default()),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut text = String::new();
        for (k, v) in self.config.pairs() {
            text.push_str(&format!("{k}={v}\n"));
        }
        text.push_str(&format!("epoch={}\n", self.epoch));
        text.push_str(&format!("vocab={}\n", self.vocab.words().join(" ")));
        if let Some(lex) = &self.lexicon {
            let join = |s: &BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join(" ");
            text.push_str(&format!("aspects={}\n", join(&lex.aspects)));
            text.push_str(&format!("opinions={}\n", join(&lex.opinions)));
        }
        let frozen: Vec<String> = self.params.frozen_rows().iter().map(usize::to_string).collect();
        text.push_str(&format!("frozen={}\n", frozen.join(" ")));

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        let records: Vec<(String, &Tensor)> = self
            .params
            .iter()
            .map(|(n, t)| (format!("param.{n}"), t))
            .chain(self.accumulators.iter().map(|(n, t)| (format!("adagrad.{n}"), t)))
            .collect();
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for (name, t) in records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(TrainError::Format("missing RHTD magic header".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(TrainError::Version { found: version });
        }
        let text_len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(text_len)?)
            .map_err(|e| TrainError::Format(format!("config block is not UTF-8: {e}")))?;
        let mut entries: BTreeMap<&str, &str> = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Format(format!("bad config line {line:?}")))?;
            entries.insert(k, v);
        }
        let mut take = |k: &str| {
            entries
                .remove(k)
                .ok_or_else(|| TrainError::Format(format!("config block lacks {k}")))
        };
        let mut config = TrainConfig::default();
        for k in CONFIG_KEYS {
            config.set(k, take(k)?).map_err(|e| TrainError::Format(e.to_string()))?;
        }
        let epoch = take("epoch")?
            .parse()
            .map_err(|e| TrainError::Format(format!("bad epoch: {e}")))?;
        let vocab_text: String = take("vocab")?.split(' ').map(|w| format!("{w}\n")).collect();
        let vocab = Vocabulary::parse(&vocab_text).map_err(|e| TrainError::Format(format!("vocabulary: {e}")))?;
        let frozen: BTreeSet<usize> = take("frozen")?
            .split_whitespace()
            .map(|s| s.parse().map_err(|e| TrainError::Format(format!("bad frozen row {s:?}: {e}"))))
            .collect::<Result<_>>()?;
        let words = |s: &str| s.split_whitespace().map(str::to_owned).collect::<BTreeSet<_>>();
        let lexicon = match (entries.remove("aspects"), entries.remove("opinions")) {
            (Some(a), Some(o)) => Some(Lexicon {
                aspects: words(a),
                opinions: words(o),
            }),
            (None, None) => None,
            _ => return Err(TrainError::Format("lexicon needs both aspects and opinions".into())),
        };
        if let Some(k) = entries.keys().next() {
            return Err(TrainError::Format(format!("unknown config key {k:?}")));
        }

        let count = r.u32()? as usize;
        let mut params = BTreeMap::new();
        let mut accumulators = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| TrainError::Format(format!("tensor name is not UTF-8: {e}")))?
                .to_owned();
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
            let len: usize = shape.iter().product();
            let payload = r.take(len.checked_mul(8).ok_or_else(|| TrainError::Format("tensor too large".into()))?)?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| TrainError::Format(e.to_string()))?;
            let target = if let Some(n) = name.strip_prefix("param.") {
                params.insert(n.to_owned(), t)
            } else if let Some(n) = name.strip_prefix("adagrad.") {
                accumulators.insert(n.to_owned(), t)
            } else {
                return Err(TrainError::Format(format!("unknown record {name:?}")));
            };
            if target.is_some() {
                return Err(TrainError::Format(format!("duplicate record {name:?}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(TrainError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let mut params = ModelParams::from_tensors(config.model_config(vocab.len()), params)
            .map_err(|e| TrainError::Format(e.to_string()))?;
        params.set_frozen_rows(frozen);
        let acc_names: Vec<&str> = accumulators.keys().map(String::as_str).collect();
        if acc_names != params.names().collect::<Vec<_>>()
            || accumulators.iter().any(|(n, a)| params.get(n).map(Tensor::shape) != Some(a.shape()))
        {
            return Err(TrainError::Format("accumulators do not match parameters".into()));
        }
        Ok(Self {
            config,
            params,
            accumulators,
            epoch,
            vocab,
            lexicon,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(io_err(path))?)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let rest = self.bytes.len() - self.pos;
        if n > rest {
            return Err(TrainError::Truncated {
                offset: self.pos,
                needed: n - rest,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Copies every parameter of a trained htd checkpoint into an rhtd
/// checkpoint with fresh accumulators. `config` describes the rhtd run and
/// `vocab` the data it will train on.
pub fn init_rhtd_from_htd(htd: &Checkpoint, config: &TrainConfig, vocab: &Vocabulary) -> Result<Checkpoint> {
    let mut diffs = Vec::new();
    if htd.config.mode != Mode::Htd {
        diffs.push(format!("mode: checkpoint is {}, expected htd", htd.config.mode));
    }
    if htd.config.embed_dim != config.embed_dim {
        diffs.push(format!("embed_dim: checkpoint {}, config {}", htd.config.embed_dim, config.embed_dim));
    }
    if htd.config.hidden_dim != config.hidden_dim {
        diffs.push(format!("hidden_dim: checkpoint {}, config {}", htd.config.hidden_dim, config.hidden_dim));
    }
    if htd.vocab.len() != vocab.len() {
        diffs.push(format!("vocab_size: checkpoint {}, data {}", htd.vocab.len(), vocab.len()));
    } else if htd.vocab.words() != vocab.words() {
        diffs.push("vocabulary: same size but different words".into());
    }
    if !diffs.is_empty() {
        return Err(TrainError::Incompatible(diffs));
    }
    let mut config = config.clone();
    config.mode = Mode::Rhtd;
    config.validate()?;
    let mut params = htd.params.clone();
    params.config.mode = Mode::Rhtd;
    Ok(Checkpoint {
        config,
        accumulators: zero_accumulators(&params),
        params,
        epoch: 0,
        vocab: htd.vocab.clone(),
        lexicon: htd.lexicon.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mode: Mode,
    /// Teacher-forced NLL per token over the training set after the epoch.
    pub train_loss: Option<f64>,
    pub dev_loss: Option<f64>,
    /// Mean rhtd reward over every sampled step of the epoch.
    pub mean_reward: Option<f64>,
}

pub const LOG_HEADER: &str = "epoch\tmode\ttrain_loss\tdev_loss\tmean_reward";

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}",
            self.epoch,
            self.mode,
            opt(self.train_loss),
            opt(self.dev_loss),
            opt(self.mean_reward)
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best epoch by the configured selection rule.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<EpochLog>,
}

struct ExampleGrads {
    grads: BTreeMap<String, Tensor>,
    tokens: usize,
    rewards: Vec<f64>,
}

fn example_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_e8a3_91c7);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

fn example_gradients(
    params: &ModelParams,
    types: &TypedVocabulary,
    config: &TrainConfig,
    pair: &EncodedPair,
    rng: &mut ChaCha8Rng,
) -> Result<ExampleGrads> {
    let tokens = pair.target.len() + 1;
    if params.config.mode == Mode::Rhtd {
        let (stage1, mut grads, rewards) = rhtd_step_gradients(pair, params, types, &mut |p| rhtd_sample_type(p, rng))?;
        grads.extend(stage1);
        return Ok(ExampleGrads {
            grads,
            tokens,
            rewards: rewards.into_iter().map(|r| r.reward).collect(),
        });
    }
    let mut tape = crate::numerics::Tape::new();
    let bound = params.bind(&mut tape, true);
    let out = if params.config.mode == Mode::Htd {
        let mut objective = Objective::Htd {
            lambda: config.lambda,
            tau: config.tau,
            rng,
        };
        pair_loss(&mut tape, &bound, types, pair, &mut objective)?
    } else {
        pair_loss(&mut tape, &bound, types, pair, &mut Objective::Likelihood)?
    };
    let mut grads = tape.backward(out.loss).map_err(ModelError::from)?;
    Ok(ExampleGrads {
        grads: collect_gradients(&bound, &mut grads),
        tokens,
        rewards: Vec::new(),
    })
}

/// Teacher-forced NLL per token under the inference distribution.
pub fn mean_nll(params: &ModelParams, types: &TypedVocabulary, pairs: &[EncodedPair]) -> Result<Option<f64>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let per_pair: Vec<(f64, usize)> = pairs
        .par_iter()
        .map(|pair| {
            let mut tape = crate::numerics::Tape::new();
            let bound = params.bind(&mut tape, false);
            let out = pair_loss(&mut tape, &bound, types, pair, &mut Objective::Likelihood)?;
            Ok((out.nll, out.tokens))
        })
        .collect::<Result<_>>()?;
    let (nll, tokens) = per_pair
        .iter()
        .fold((0.0, 0usize), |(s, n), &(l, t)| (s + l, n + t));
    Ok(Some(nll / tokens as f64))
}

/// Greedy decodes in parallel, in input order.
pub fn decode_all(
    params: &ModelParams,
    types: &TypedVocabulary,
    pairs: &[EncodedPair],
    max_len: usize,
) -> Result<Vec<Vec<usize>>> {
    pairs
        .par_iter()
        .map(|p| Ok(greedy_decode(params, types, &p.source, &p.oov, max_len)?.ids))
        .collect()
}

/// Mean ROUGE-L F1 of greedy decodes against the reference targets,
/// compared as extended ids.
pub fn rouge_l_on(params: &ModelParams, types: &TypedVocabulary, pairs: &[EncodedPair], max_len: usize) -> Result<Option<f64>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let decoded = decode_all(params, types, pairs, max_len)?;
    let as_words = |ids: &[usize]| ids.iter().map(usize::to_string).collect::<Vec<_>>();
    let scored: Vec<(Vec<String>, Vec<String>)> = decoded
        .iter()
        .zip(pairs)
        .map(|(d, p)| (as_words(d), as_words(&p.target)))
        .collect();
    Ok(Some(corpus_rouge(&scored)?.rouge_l.f1))
}

/// Runs one epoch of shuffled mini-batch Adagrad. Returns the mean reward
/// for rhtd.
fn run_epoch(ckpt: &mut Checkpoint, types: &TypedVocabulary, train: &[EncodedPair]) -> Result<Option<f64>> {
    let config = ckpt.config.clone();
    let epoch = ckpt.epoch + 1;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(epoch as u64);
    order.shuffle(&mut shuffle_rng);

    let mut reward_sum = 0.0;
    let mut reward_count = 0usize;
    for batch in order.chunks(config.batch_size) {
        let params = &ckpt.params;
        let results: Vec<ExampleGrads> = batch
            .par_iter()
            .map(|&i| example_gradients(params, types, &config, &train[i], &mut example_rng(config.seed, epoch, i)))
            .collect::<Result<_>>()?;
        let tokens: usize = results.iter().map(|r| r.tokens).sum();
        let mut total: BTreeMap<String, Tensor> = BTreeMap::new();
        for r in results {
            reward_sum += r.rewards.iter().sum::<f64>();
            reward_count += r.rewards.len();
            for (name, g) in r.grads {
                match total.get_mut(&name) {
                    Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                    None => {
                        total.insert(name, g);
                    }
                }
            }
        }
        let k = 1.0 / tokens as f64;
        for g in total.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= k);
        }
        if let Some(g) = total.get_mut("embedding") {
            let dim = g.shape()[1];
            for &row in ckpt.params.frozen_rows() {
                g.data_mut()[row * dim..(row + 1) * dim].fill(0.0);
            }
        }
        clip_global_norm(&mut total, config.clip_norm);
        adagrad_update(&mut ckpt.params, &total, &mut ckpt.accumulators, config.lr)?;
    }
    ckpt.epoch = epoch;
    Ok((reward_count > 0).then(|| reward_sum / reward_count as f64))
}

/// Trains `start` for `start.config.epochs` further epochs.
pub fn train_from(mut start: Checkpoint, train: &[EncodedPair], dev: &[EncodedPair]) -> Result<TrainOutcome> {
    let config = start.config.clone();
    config.validate()?;
    if config.mode.is_typed() && start.lexicon.is_none() {
        return Err(TrainError::Config(format!("{} mode needs a lexicon", config.mode)));
    }
    if start.params.config != config.model_config(start.vocab.len()) {
        return Err(TrainError::Config(format!(
            "parameters are for {:?} but the run is configured for {:?}",
            start.params.config,
            config.model_config(start.vocab.len())
        )));
    }
    let types = start.typed_vocabulary();
    let vocab_size = start.vocab.len();
    for pair in train.iter().chain(dev) {
        if let Some(bad) = pair.source.iter().chain(&pair.target).find(|&&id| id >= pair.extended_size(vocab_size)) {
            return Err(TrainError::Config(format!("pair id {bad} is outside the checkpoint vocabulary")));
        }
    }

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Checkpoint)> = None;
    for _ in 0..config.epochs {
        let mean_reward = run_epoch(&mut start, &types, train)?;
        let train_loss = mean_nll(&start.params, &types, train)?;
        let dev_loss = mean_nll(&start.params, &types, dev)?;
        let entry = EpochLog {
            epoch: start.epoch,
            mode: config.mode,
            train_loss,
            dev_loss,
            mean_reward,
        };
        log::info!("{entry}");
        log.push(entry);
        // Lower is better.
        let score = match config.selection {
            Selection::DevLoss => dev_loss.or(train_loss),
            Selection::DevRouge => rouge_l_on(&start.params, &types, dev, config.max_decode_len)?.map(|r| -r),
        }
        .unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(b, _)| score < *b || score == f64::NEG_INFINITY) {
            best = Some((score, start.clone()));
        }
    }
    let best = best.map_or_else(|| start.clone(), |(_, c)| c);
    Ok(TrainOutcome { best, last: start, log })
}

/// Fresh parameters for every mode except rhtd, which needs `init` (an htd
/// checkpoint).
pub fn train(
    config: &TrainConfig,
    vocab: Vocabulary,
    lexicon: Option<Lexicon>,
    init: Option<&Checkpoint>,
    train: &[EncodedPair],
    dev: &[EncodedPair],
) -> Result<TrainOutcome> {
    let start = match (config.mode, init) {
        (Mode::Rhtd, Some(htd)) => init_rhtd_from_htd(htd, config, &vocab)?,
        (Mode::Rhtd, None) => {
            return Err(TrainError::Config(
                "rhtd training requires an htd checkpoint to initialize from".into(),
            ))
        }
        (_, Some(_)) => {
            return Err(TrainError::Config(format!(
                "initialization from a checkpoint is only used by rhtd, not {}",
                config.mode
            )))
        }
        (_, None) => Checkpoint::fresh(config, vocab, lexicon)?,
    };
    train_from(start, train, dev)
}
