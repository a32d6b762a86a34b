//! Bidirectional LSTM encoder, attentive LSTM decoder and the
//! pointer-generator output layer.
//!
//! All computation is recorded on a [`Tape`]. [`ModelParams::bind`] places a
//! parameter set on a tape and returns the [`Bound`] handles the step
//! functions read from.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::corpus::{Vocabulary, UNK};
use crate::numerics::{NumericsError, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("source sequence is empty")]
    EmptySource,
    #[error("parameter {0:?} is not defined for this model")]
    MissingParameter(String),
    #[error("embedding file line {line}: {message}")]
    Embeddings { line: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Seq2Seq,
    PgNet,
    Std,
    Htd,
    Rhtd,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Seq2Seq, Mode::PgNet, Mode::Std, Mode::Htd, Mode::Rhtd];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Seq2Seq => "seq2seq",
            Mode::PgNet => "pgnet",
            Mode::Std => "std",
            Mode::Htd => "htd",
            Mode::Rhtd => "rhtd",
        }
    }

    /// Uses type-specific output projections and a type predictor.
    pub fn is_typed(self) -> bool {
        matches!(self, Mode::Std | Mode::Htd | Mode::Rhtd)
    }

    /// Mixes a copy distribution into the output.
    pub fn has_pointer(self) -> bool {
        self != Mode::Seq2Seq
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                ModelError::Config(format!(
                    "unknown mode {s:?} (expected one of seq2seq, pgnet, std, htd, rhtd)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// LSTM state size; also the attention size.
    pub hidden_dim: usize,
    pub mode: Mode,
}

/// Output projection name prefixes of the three typed decoders, in type
/// index order.
pub const TYPED_OUTPUTS: [&str; 3] = ["out.aspect", "out.opinion", "out.context"];

/// Names and shapes of every parameter the configuration defines.
pub fn parameter_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (v, e, d) = (config.vocab_size, config.embed_dim, config.hidden_dim);
    let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
    let mut add = |name: &str, shape: Vec<usize>| shapes.push((name.to_owned(), shape));
    add("embedding", vec![v, e]);
    for dir in ["enc.fwd", "enc.bwd"] {
        add(&format!("{dir}.w"), vec![4 * d, e + d]);
        add(&format!("{dir}.b"), vec![4 * d]);
    }
    for proj in ["enc.proj", "enc.init_h", "enc.init_c"] {
        add(&format!("{proj}.w"), vec![d, 2 * d]);
        add(&format!("{proj}.b"), vec![d]);
    }
    add("dec.w", vec![4 * d, e + d]);
    add("dec.b", vec![4 * d]);
    add("attn.w_h", vec![d, d]);
    add("attn.w_s", vec![d, d]);
    add("attn.b", vec![d]);
    add("attn.v", vec![d]);
    if config.mode.is_typed() {
        for prefix in TYPED_OUTPUTS {
            add(&format!("{prefix}.w"), vec![v, 2 * d]);
            add(&format!("{prefix}.b"), vec![v]);
        }
        add("type.w", vec![3, 2 * d]);
        add("type.b", vec![3]);
    } else {
        add("out.w", vec![v, 2 * d]);
        add("out.b", vec![v]);
    }
    if config.mode.has_pointer() {
        add("ptr.w_h", vec![1, d]);
        add("ptr.w_s", vec![1, d]);
        add("ptr.w_x", vec![1, e]);
        add("ptr.b", vec![1]);
    }
    shapes
}

/// Parameters of the type predictor; everything else is shared.
pub fn is_type_parameter(name: &str) -> bool {
    name.starts_with("type.")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    tensors: BTreeMap<String, Tensor>,
    /// Embedding rows loaded from pretrained vectors; they receive no updates.
    frozen_rows: BTreeSet<usize>,
}

impl ModelParams {
    /// Uniform(-0.1, 0.1) weights (the attention vector included) and zero
    /// biases.
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, shape) in parameter_shapes(&config) {
            let t = if name.ends_with(".b") {
                Tensor::zeros(&shape)
            } else {
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect();
                Tensor::new(shape, data).expect("parameter shapes are nonzero")
            };
            tensors.insert(name, t);
        }
        Self {
            config,
            tensors,
            frozen_rows: BTreeSet::new(),
        }
    }

    /// Assembles parameters from named tensors, checking names and shapes
    /// against the configuration.
    pub fn from_tensors(config: ModelConfig, mut tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let mut out = BTreeMap::new();
        for (name, shape) in parameter_shapes(&config) {
            let t = tensors
                .remove(&name)
                .ok_or_else(|| ModelError::MissingParameter(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Config(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            out.insert(name, t);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(ModelError::Config(format!("unexpected parameter {extra:?}")));
        }
        Ok(Self {
            config,
            tensors: out,
            frozen_rows: BTreeSet::new(),
        })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    /// Parameters in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn frozen_rows(&self) -> &BTreeSet<usize> {
        &self.frozen_rows
    }

    pub fn set_frozen_rows(&mut self, rows: BTreeSet<usize>) {
        self.frozen_rows = rows;
    }

    /// Total number of scalar parameters.
    pub fn size(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Places every parameter on the tape, trainable or constant.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Bound {
            config: self.config,
            vars,
        }
    }

    /// Overwrites embedding rows from a whitespace-separated vector file and
    /// freezes them. The UNK row is never frozen. Returns the number of rows
    /// loaded.
    pub fn load_pretrained_embeddings(&mut self, text: &str, vocab: &Vocabulary) -> Result<usize> {
        let e = self.config.embed_dim;
        let table = self.tensors.get_mut("embedding").expect("embedding always present");
        let mut frozen = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else { continue };
            let values: Vec<f64> = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|err| ModelError::Embeddings {
                    line: i + 1,
                    message: err.to_string(),
                })?;
            if values.len() != e {
                return Err(ModelError::Embeddings {
                    line: i + 1,
                    message: format!("expected {e} values, got {}", values.len()),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Embeddings {
                    line: i + 1,
                    message: "non-finite value".into(),
                });
            }
            if let Some(id) = vocab.id(word) {
                if id >= self.config.vocab_size {
                    continue;
                }
                table.data_mut()[id * e..(id + 1) * e].copy_from_slice(&values);
                if id != UNK {
                    frozen.insert(id);
                }
            }
        }
        let loaded = frozen.len();
        self.frozen_rows.extend(frozen);
        Ok(loaded)
    }
}

/// Parameter handles on one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    pub config: ModelConfig,
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn new(config: ModelConfig, vars: BTreeMap<String, Var>) -> Self {
        Self { config, vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingParameter(name.to_owned()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// `w·x + b` for a matrix `w` and vector `x`.
pub fn affine(tape: &mut Tape, w: Var, b: Var, x: Var) -> Result<Var> {
    let wx = tape.matmul(w, x)?;
    Ok(tape.add(wx, b)?)
}

fn lstm_cell(tape: &mut Tape, w: Var, b: Var, x: Var, h: Var, c: Var, d: usize) -> Result<(Var, Var)> {
    let xh = tape.concat(&[x, h])?;
    let z = affine(tape, w, b, xh)?;
    let zi = tape.slice(z, 0, d)?;
    let zf = tape.slice(z, d, d)?;
    let zg = tape.slice(z, 2 * d, d)?;
    let zo = tape.slice(z, 3 * d, d)?;
    let i = tape.sigmoid(zi)?;
    let f = tape.sigmoid(zf)?;
    let g = tape.tanh(zg)?;
    let o = tape.sigmoid(zo)?;
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_new = tape.add(fc, ig)?;
    let tc = tape.tanh(c_new)?;
    let h_new = tape.mul(o, tc)?;
    Ok((h_new, c_new))
}

/// Maps extended ids to UNK for embedding lookup.
pub fn input_id(id: usize, vocab_size: usize) -> usize {
    if id < vocab_size {
        id
    } else {
        UNK
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// `[m, d]` projected bidirectional states.
    pub states: Var,
    /// `[m, d]` attention keys `states · W_h`.
    pub keys: Var,
    pub init_h: Var,
    pub init_c: Var,
    pub len: usize,
}

pub fn encode(tape: &mut Tape, p: &Bound, source: &[usize]) -> Result<EncoderOutput> {
    if source.is_empty() {
        return Err(ModelError::EmptySource);
    }
    let (v, d) = (p.config.vocab_size, p.config.hidden_dim);
    let table = p.var("embedding")?;
    let inputs: Vec<Var> = source
        .iter()
        .map(|&id| tape.embedding_row(table, input_id(id, v)))
        .collect::<std::result::Result<_, _>>()?;
    let m = inputs.len();

    let run = |tape: &mut Tape, prefix: &str, order: &mut dyn Iterator<Item = usize>| -> Result<Vec<(Var, Var)>> {
        let w = p.var(&format!("{prefix}.w"))?;
        let b = p.var(&format!("{prefix}.b"))?;
        let mut h = tape.constant(Tensor::zeros(&[d]));
        let mut c = tape.constant(Tensor::zeros(&[d]));
        let mut out = vec![(h, c); m];
        for k in order {
            (h, c) = lstm_cell(tape, w, b, inputs[k], h, c, d)?;
            out[k] = (h, c);
        }
        Ok(out)
    };
    let fwd = run(tape, "enc.fwd", &mut (0..m))?;
    let bwd = run(tape, "enc.bwd", &mut (0..m).rev())?;

    let (pw, pb) = (p.var("enc.proj.w")?, p.var("enc.proj.b")?);
    let mut rows = Vec::with_capacity(m);
    for k in 0..m {
        let both = tape.concat(&[fwd[k].0, bwd[k].0])?;
        rows.push(affine(tape, pw, pb, both)?);
    }
    let flat = tape.concat(&rows)?;
    let states = tape.reshape(flat, &[m, d])?;
    let keys = tape.matmul(states, p.var("attn.w_h")?)?;

    let last_h = tape.concat(&[fwd[m - 1].0, bwd[0].0])?;
    let last_c = tape.concat(&[fwd[m - 1].1, bwd[0].1])?;
    let ih = affine(tape, p.var("enc.init_h.w")?, p.var("enc.init_h.b")?, last_h)?;
    let init_h = tape.tanh(ih)?;
    let init_c = affine(tape, p.var("enc.init_c.w")?, p.var("enc.init_c.b")?, last_c)?;
    Ok(EncoderOutput {
        states,
        keys,
        init_h,
        init_c,
        len: m,
    })
}

/// Additive attention: `score_k = v · tanh(W_h h_k + W_s s + b)`. Returns the
/// attention weights `[m]` and the context vector `[d]`.
pub fn attend(tape: &mut Tape, p: &Bound, s: Var, enc: &EncoderOutput) -> Result<(Var, Var)> {
    let q = affine(tape, p.var("attn.w_s")?, p.var("attn.b")?, s)?;
    let pre = tape.add(enc.keys, q)?;
    let act = tape.tanh(pre)?;
    let scores = tape.matmul(act, p.var("attn.v")?)?;
    let weights = tape.softmax(scores)?;
    let context = tape.matmul(weights, enc.states)?;
    Ok((weights, context))
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
}

impl DecoderState {
    pub fn initial(enc: &EncoderOutput) -> Self {
        Self {
            h: enc.init_h,
            c: enc.init_c,
        }
    }
}

/// Everything one decoder position produces before the output layer.
#[derive(Debug, Clone, Copy)]
pub struct StepFeatures {
    pub state: DecoderState,
    /// Embedding of the decoder input token.
    pub input: Var,
    pub attention: Var,
    pub context: Var,
    /// `[s_t, h*_t]`, length `2d`.
    pub features: Var,
}

/// Advances the decoder by one token. `prev` is the previous token's
/// extended id; ids outside the vocabulary are fed as UNK.
pub fn decoder_step(
    tape: &mut Tape,
    p: &Bound,
    enc: &EncoderOutput,
    state: DecoderState,
    prev: usize,
) -> Result<StepFeatures> {
    let d = p.config.hidden_dim;
    let x = tape.embedding_row(p.var("embedding")?, input_id(prev, p.config.vocab_size))?;
    let (h, c) = lstm_cell(tape, p.var("dec.w")?, p.var("dec.b")?, x, state.h, state.c, d)?;
    let (attention, context) = attend(tape, p, h, enc)?;
    let features = tape.concat(&[h, context])?;
    Ok(StepFeatures {
        state: DecoderState { h, c },
        input: x,
        attention,
        context,
        features,
    })
}

/// `softmax(W [s, h*] + b)` over the vocabulary, using the projection named
/// `prefix` (`out` for the single decoder).
pub fn vocab_dist(tape: &mut Tape, p: &Bound, features: Var, prefix: &str) -> Result<Var> {
    let logits = affine(tape, p.var(&format!("{prefix}.w"))?, p.var(&format!("{prefix}.b"))?, features)?;
    Ok(tape.softmax(logits)?)
}

/// `σ(w_h·h* + w_s·s + w_x·x + b)`, shape `[1]`.
pub fn gen_prob(tape: &mut Tape, p: &Bound, context: Var, s: Var, x: Var) -> Result<Var> {
    let a = tape.matmul(p.var("ptr.w_h")?, context)?;
    let b = tape.matmul(p.var("ptr.w_s")?, s)?;
    let c = tape.matmul(p.var("ptr.w_x")?, x)?;
    let ab = tape.add(a, b)?;
    let abc = tape.add(ab, c)?;
    let z = tape.add(abc, p.var("ptr.b")?)?;
    Ok(tape.sigmoid(z)?)
}

/// A vocabulary distribution zero-padded to the extended size.
pub fn pad_to_extended(tape: &mut Tape, p_vocab: Var, extended_size: usize) -> Result<Var> {
    let v = tape.value(p_vocab).len();
    if extended_size <= v {
        return Ok(p_vocab);
    }
    let zeros = tape.constant(Tensor::zeros(&[extended_size - v]));
    Ok(tape.concat(&[p_vocab, zeros])?)
}

/// `p_gen · P_vocab(w) + (1 - p_gen) · Σ_{k: source_k = w} copy_k` over the
/// extended vocabulary. `copy` holds one weight per source position.
pub fn pointer_mix(
    tape: &mut Tape,
    p_vocab: Var,
    copy: Var,
    p_gen: Var,
    source: &[usize],
    extended_size: usize,
) -> Result<Var> {
    let padded = pad_to_extended(tape, p_vocab, extended_size)?;
    let generated = tape.mul(padded, p_gen)?;
    let copied = tape.scatter_add(copy, source, extended_size)?;
    let one = tape.constant(Tensor::scalar(1.0));
    let neg = tape.neg(p_gen)?;
    let p_copy = tape.add(one, neg)?;
    let copied = tape.mul(copied, p_copy)?;
    Ok(tape.add(generated, copied)?)
}

/// The pointer-generator output distribution; attention weights act as the
/// copy distribution.
pub fn pgnet_final_dist(
    tape: &mut Tape,
    p_vocab: Var,
    attention: Var,
    p_gen: Var,
    source: &[usize],
    extended_size: usize,
) -> Result<Var> {
    pointer_mix(tape, p_vocab, attention, p_gen, source, extended_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(mode: Mode) -> ModelConfig {
        ModelConfig {
            vocab_size: 8,
            embed_dim: 3,
            hidden_dim: 4,
            mode,
        }
    }

    fn params(mode: Mode) -> ModelParams {
        ModelParams::init(config(mode), &mut ChaCha8Rng::seed_from_u64(3))
    }

    #[test]
    fn mode_names_roundtrip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!("bogus".parse::<Mode>().is_err());
    }

    #[test]
    fn parameter_sets_depend_on_mode() {
        let s2s = params(Mode::Seq2Seq);
        assert!(s2s.get("out.w").is_some() && s2s.get("ptr.b").is_none());
        let pg = params(Mode::PgNet);
        assert!(pg.get("ptr.w_x").is_some() && pg.get("type.w").is_none());
        let htd = params(Mode::Htd);
        assert!(htd.get("out.w").is_none());
        assert_eq!(htd.get("out.opinion.w").unwrap().shape(), &[8, 8]);
        assert_eq!(htd.get("type.w").unwrap().shape(), &[3, 8]);
        assert!(htd.get("dec.b").unwrap().data().iter().all(|&b| b == 0.0));
        assert!(htd.get("dec.w").unwrap().data().iter().all(|&w| w.abs() < 0.1));
    }

    #[test]
    fn from_tensors_checks_shapes() {
        let p = params(Mode::PgNet);
        let tensors: BTreeMap<String, Tensor> = p.iter().map(|(n, t)| (n.to_owned(), t.clone())).collect();
        assert_eq!(ModelParams::from_tensors(p.config, tensors.clone()).unwrap(), p);
        let mut bad = tensors.clone();
        bad.insert("ptr.b".into(), Tensor::zeros(&[2]));
        assert!(ModelParams::from_tensors(p.config, bad).is_err());
        let mut missing = tensors;
        missing.remove("dec.w");
        assert!(matches!(
            ModelParams::from_tensors(p.config, missing),
            Err(ModelError::MissingParameter(_))
        ));
    }

    #[test]
    fn encoder_emits_one_state_per_token() {
        let p = params(Mode::PgNet);
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let enc = encode(&mut tape, &b, &[5]).unwrap();
        assert_eq!(tape.shape(enc.states), &[1, 4]);
        let enc = encode(&mut tape, &b, &[5, 6, 9, 4]).unwrap();
        assert_eq!(tape.shape(enc.states), &[4, 4]);
        assert!(matches!(encode(&mut tape, &b, &[]), Err(ModelError::EmptySource)));
    }

    #[test]
    fn zero_weights_give_identical_states() {
        let mut p = params(Mode::PgNet);
        for (name, t) in p.iter_mut() {
            if name.starts_with("enc.") {
                t.data_mut().fill(0.0);
            }
        }
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let enc = encode(&mut tape, &b, &[4, 5, 6]).unwrap();
        let s = tape.value(enc.states).data();
        assert!(s.iter().all(|&x| x == s[0]));
    }

    #[test]
    fn single_position_attention_is_one() {
        let p = params(Mode::PgNet);
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let enc = encode(&mut tape, &b, &[7]).unwrap();
        let (a, ctx) = attend(&mut tape, &b, enc.init_h, &enc).unwrap();
        assert_eq!(tape.value(a).data(), &[1.0]);
        assert_eq!(tape.value(ctx).data(), tape.value(enc.states).data());
    }

    #[test]
    fn zero_output_layer_is_uniform() {
        let mut p = params(Mode::PgNet);
        p.get_mut("out.w").unwrap().data_mut().fill(0.0);
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let f = tape.constant(Tensor::vector(&[0.3; 8]));
        let dist = vocab_dist(&mut tape, &b, f, "out").unwrap();
        assert!(tape.value(dist).data().iter().all(|&x| (x - 0.125).abs() < 1e-15));
    }

    #[test]
    fn bias_shift_leaves_vocab_dist_unchanged() {
        let p = params(Mode::PgNet);
        let mut shifted = p.clone();
        shifted.get_mut("out.b").unwrap().data_mut().iter_mut().for_each(|b| *b += 7.5);
        let f = Tensor::vector(&[0.1, -0.4, 0.9, 0.2, 0.0, 0.5, -0.3, 0.7]);
        let run = |p: &ModelParams| {
            let mut tape = Tape::new();
            let b = p.bind(&mut tape, false);
            let x = tape.constant(f.clone());
            let d = vocab_dist(&mut tape, &b, x, "out").unwrap();
            tape.value(d).data().to_vec()
        };
        for (a, b) in run(&p).iter().zip(run(&shifted)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_pointer_weights_give_half() {
        let p = params(Mode::PgNet);
        let mut tape = Tape::new();
        let mut b = p.bind(&mut tape, false);
        for name in ["ptr.w_h", "ptr.w_s", "ptr.w_x"] {
            let shape = tape.shape(b.var(name).unwrap()).to_vec();
            let z = tape.constant(Tensor::zeros(&shape));
            b.vars.insert(name.into(), z);
        }
        let h = tape.constant(Tensor::vector(&[1.0; 4]));
        let x = tape.constant(Tensor::vector(&[1.0; 3]));
        let g = gen_prob(&mut tape, &b, h, h, x).unwrap();
        assert_eq!(tape.value(g).data(), &[0.5]);

        let big = tape.constant(Tensor::scalar(50.0));
        b.vars.insert("ptr.b".into(), big);
        let g = gen_prob(&mut tape, &b, h, h, x).unwrap();
        assert!(tape.value(g).data()[0] > 1.0 - 1e-9);
    }

    #[test]
    fn pointer_boundaries() {
        let mut tape = Tape::new();
        let pv = tape.constant(Tensor::vector(&[0.1, 0.2, 0.3, 0.4]));
        let a = tape.constant(Tensor::vector(&[0.4, 0.6]));
        let one = tape.constant(Tensor::scalar(1.0));
        let zero = tape.constant(Tensor::scalar(0.0));

        let d = pgnet_final_dist(&mut tape, pv, a, one, &[1, 4], 5).unwrap();
        assert_eq!(tape.value(d).data(), &[0.1, 0.2, 0.3, 0.4, 0.0]);

        let d = pgnet_final_dist(&mut tape, pv, a, zero, &[2, 2], 4).unwrap();
        assert_eq!(tape.value(d).data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn pretrained_rows_load_and_freeze() {
        use crate::corpus::{build_vocab, ReviewPair};
        let vocab = build_vocab(&[ReviewPair::new("good bad", "")], 8).unwrap();
        let mut p = ModelParams::init(
            ModelConfig {
                vocab_size: vocab.len(),
                embed_dim: 2,
                hidden_dim: 2,
                mode: Mode::PgNet,
            },
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        let n = p
            .load_pretrained_embeddings("good 1.5 -2\n<unk> 9 9\nmissing 0 0\n", &vocab)
            .unwrap();
        assert_eq!(n, 1);
        let good = vocab.id("good").unwrap();
        assert_eq!(&p.get("embedding").unwrap().data()[good * 2..good * 2 + 2], &[1.5, -2.0]);
        assert_eq!(p.frozen_rows().iter().copied().collect::<Vec<_>>(), vec![good]);
        assert!(p.load_pretrained_embeddings("good 1\n", &vocab).is_err());
    }
}
