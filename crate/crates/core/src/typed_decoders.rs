//! Type-aware output layers and their training objectives.
//!
//! Typed modes share the encoder and decoder recurrence and differ only in
//! the output layer. A type predictor gives `P(type | history)` over aspect,
//! opinion and context; three projections give a word distribution per type.
//!
//! * `std` mixes the three word distributions with the type probabilities.
//! * `htd` multiplies each word's probability by a per-type mask (Gumbel-
//!   Softmax relaxed during training, argmax one-hot at inference), masks the
//!   copy distribution the same way and renormalizes both sides.
//! * `rhtd` samples a type, decodes under the hard mask of that type, and
//!   trains the type predictor with REINFORCE using a match reward.

use std::collections::BTreeMap;

use rand::distributions::Open01;
use rand::{Rng, RngCore};

use crate::corpus::{EncodedPair, BOS, EOS, UNK};
use crate::lexicon::{TypedVocabulary, WordType};
use crate::model::{
    affine, decoder_step, encode, gen_prob, pad_to_extended, pgnet_final_dist, pointer_mix, vocab_dist,
    Bound, DecoderState, ModelError, ModelParams, Mode, Result, StepFeatures, TYPED_OUTPUTS,
};
use crate::numerics::{Gradients, NumericsError, Tape, Tensor, Var};

/// Reference probabilities below this are clamped before taking the log.
pub const MIN_PROB: f64 = 1e-12;
pub const REWARD_MATCH: f64 = 1.0;
pub const REWARD_MISMATCH: f64 = 0.3;

/// `softmax(W_type [s, h*] + b_type)` over the three word types.
pub fn type_dist(tape: &mut Tape, p: &Bound, features: Var) -> Result<Var> {
    let logits = affine(tape, p.var("type.w")?, p.var("type.b")?, features)?;
    Ok(tape.softmax(logits)?)
}

/// One word distribution over the vocabulary per type, in type index order.
pub fn typed_vocab_dists(tape: &mut Tape, p: &Bound, features: Var) -> Result<[Var; 3]> {
    let mut out = [features; 3];
    for (slot, prefix) in out.iter_mut().zip(TYPED_OUTPUTS) {
        *slot = vocab_dist(tape, p, features, prefix)?;
    }
    Ok(out)
}

/// `Σ_i P(type_i) · P(w | type_i)` over the vocabulary.
pub fn std_vocab_mixture(tape: &mut Tape, type_probs: Var, dists: [Var; 3]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (i, dist) in dists.into_iter().enumerate() {
        let weight = tape.slice(type_probs, i, 1)?;
        let term = tape.mul(dist, weight)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(acc.expect("three types"))
}

/// Soft type mixture followed by pointer mixing.
pub fn std_final_dist(
    tape: &mut Tape,
    type_probs: Var,
    dists: [Var; 3],
    attention: Var,
    p_gen: Var,
    source: &[usize],
    extended_size: usize,
) -> Result<Var> {
    let mixed = std_vocab_mixture(tape, type_probs, dists)?;
    pointer_mix(tape, mixed, attention, p_gen, source, extended_size)
}

/// Three standard Gumbel samples `-log(-log u)`.
pub fn sample_gumbel(rng: &mut dyn RngCore) -> [f64; 3] {
    let mut g = [0.0; 3];
    for x in &mut g {
        let u: f64 = rng.sample(Open01);
        *x = -(-u.ln()).ln();
    }
    g
}

/// `softmax((log p + g) / τ)`. Fails with a domain error if any probability
/// is zero.
pub fn gumbel_softmax(tape: &mut Tape, probs: Var, tau: f64, noise: [f64; 3]) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(ModelError::Config(format!("temperature must be positive, got {tau}")));
    }
    let logp = tape.log(probs)?;
    let g = tape.constant(Tensor::vector(&noise));
    let perturbed = tape.add(logp, g)?;
    let scaled = tape.scale(perturbed, 1.0 / tau)?;
    Ok(tape.softmax(scaled)?)
}

/// Constant one-hot type weights.
pub fn hard_mask(tape: &mut Tape, t: WordType) -> Var {
    let mut w = [0.0; 3];
    w[t.index()] = 1.0;
    tape.constant(Tensor::vector(&w))
}

/// Intermediate and final distributions of the masked decoder.
#[derive(Debug, Clone, Copy)]
pub struct HtdOutput {
    /// Masked, renormalized vocabulary distribution; `None` if the mask
    /// removes every vocabulary word.
    pub vocab: Option<Var>,
    /// Masked, renormalized copy weights per source position; `None` if the
    /// mask removes every source word.
    pub copy: Option<Var>,
    pub dist: Var,
}

/// Masked typed decoding over the extended vocabulary.
///
/// Each vocabulary word takes its probability from its own type's
/// distribution times that type's mask weight; copy weights are scaled by
/// the mask weight of the source word's type. Both sides are renormalized
/// and mixed with `p_gen`. When a hard mask leaves one side empty, the other
/// side carries all the mass.
#[allow(clippy::too_many_arguments)]
pub fn htd_final_dist(
    tape: &mut Tape,
    dists: [Var; 3],
    mask: Var,
    attention: Var,
    p_gen: Var,
    source: &[usize],
    source_types: &[WordType],
    vocab_types: &[WordType],
    extended_size: usize,
) -> Result<HtdOutput> {
    let v = vocab_types.len();
    let stacked = tape.concat(&dists)?;
    let own: Vec<usize> = vocab_types.iter().enumerate().map(|(w, t)| t.index() * v + w).collect();
    let picked = tape.pick(stacked, &own)?;
    let word_mask = tape.pick(mask, &vocab_types.iter().map(|t| t.index()).collect::<Vec<_>>())?;
    let masked_vocab = tape.mul(picked, word_mask)?;

    let source_mask = tape.pick(mask, &source_types.iter().map(|t| t.index()).collect::<Vec<_>>())?;
    let masked_copy = tape.mul(attention, source_mask)?;

    let mass = |tape: &Tape, x: Var| tape.value(x).data().iter().sum::<f64>();
    let vocab = if mass(tape, masked_vocab) > 0.0 {
        Some(tape.normalize(masked_vocab)?)
    } else {
        None
    };
    let copy = if mass(tape, masked_copy) > 0.0 {
        Some(tape.normalize(masked_copy)?)
    } else {
        None
    };
    let dist = match (vocab, copy) {
        (Some(pv), Some(beta)) => pointer_mix(tape, pv, beta, p_gen, source, extended_size)?,
        (Some(pv), None) => pad_to_extended(tape, pv, extended_size)?,
        (None, Some(beta)) => tape.scatter_add(beta, source, extended_size)?,
        (None, None) => {
            return Err(NumericsError::Domain {
                op: "htd mask",
                index: 0,
                value: 0.0,
            }
            .into())
        }
    };
    Ok(HtdOutput { vocab, copy, dist })
}

/// Categorical draw from three type probabilities.
pub fn rhtd_sample_type(probs: &[f64], rng: &mut dyn RngCore) -> WordType {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return WordType::from_index(i).expect("three types");
        }
    }
    // Rounding left `u` past the cumulative total; take the last type with
    // nonzero mass.
    let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1);
    WordType::from_index(last).expect("three types")
}

pub fn rhtd_reward(sampled: WordType, reference: WordType) -> f64 {
    if sampled == reference {
        REWARD_MATCH
    } else {
        REWARD_MISMATCH
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardRecord {
    pub step: usize,
    pub sampled: WordType,
    pub reference: WordType,
    pub reward: f64,
}

/// How typed modes choose their mask at each step.
pub enum MaskChoice<'a> {
    /// Hard one-hot mask on the most probable type.
    Argmax,
    /// Hard one-hot mask on a given type.
    Fixed(WordType),
    /// Gumbel-Softmax weights with the given temperature and noise.
    Gumbel { tau: f64, noise: [f64; 3] },
    /// Hard mask on the type returned by the sampler, which sees the type
    /// probabilities.
    Sampled(&'a mut dyn FnMut(&[f64]) -> WordType),
}

/// One decoding position's output layer.
#[derive(Debug, Clone, Copy)]
pub struct StepDist {
    /// Final distribution: over the extended vocabulary, or over the
    /// vocabulary alone in seq2seq mode.
    pub dist: Var,
    pub type_probs: Option<Var>,
    pub p_gen: Option<Var>,
    /// The type whose hard mask was applied.
    pub hard_type: Option<WordType>,
}

/// Per-pair data the output layer needs.
pub struct PairView<'a> {
    pub source: &'a [usize],
    pub oov: &'a [String],
    pub source_types: Vec<WordType>,
    pub extended_size: usize,
}

impl<'a> PairView<'a> {
    pub fn new(source: &'a [usize], oov: &'a [String], types: &TypedVocabulary) -> Self {
        Self {
            source,
            oov,
            source_types: source.iter().map(|&id| types.type_of(id, oov)).collect(),
            extended_size: types.vocab_types().len() + oov.len(),
        }
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// The mode's output distribution for one step. `type_features` feeds the
/// type predictor; pass a detached copy of `step.features` to keep type
/// gradients away from the shared parameters.
pub fn step_distribution(
    tape: &mut Tape,
    p: &Bound,
    types: &TypedVocabulary,
    pair: &PairView<'_>,
    step: &StepFeatures,
    type_features: Var,
    mask: MaskChoice<'_>,
) -> Result<StepDist> {
    let mode = p.config.mode;
    if mode == Mode::Seq2Seq {
        let dist = vocab_dist(tape, p, step.features, "out")?;
        return Ok(StepDist {
            dist,
            type_probs: None,
            p_gen: None,
            hard_type: None,
        });
    }
    let p_gen = gen_prob(tape, p, step.context, step.state.h, step.input)?;
    if mode == Mode::PgNet {
        let pv = vocab_dist(tape, p, step.features, "out")?;
        let dist = pgnet_final_dist(tape, pv, step.attention, p_gen, pair.source, pair.extended_size)?;
        return Ok(StepDist {
            dist,
            type_probs: None,
            p_gen: Some(p_gen),
            hard_type: None,
        });
    }
    let tp = type_dist(tape, p, type_features)?;
    let dists = typed_vocab_dists(tape, p, step.features)?;
    if mode == Mode::Std {
        let dist = std_final_dist(tape, tp, dists, step.attention, p_gen, pair.source, pair.extended_size)?;
        return Ok(StepDist {
            dist,
            type_probs: Some(tp),
            p_gen: Some(p_gen),
            hard_type: None,
        });
    }
    let (weights, hard_type) = match mask {
        MaskChoice::Argmax => {
            let t = WordType::from_index(argmax(tape.value(tp).data())).expect("three types");
            (hard_mask(tape, t), Some(t))
        }
        MaskChoice::Fixed(t) => (hard_mask(tape, t), Some(t)),
        MaskChoice::Sampled(sampler) => {
            let t = sampler(tape.value(tp).data());
            (hard_mask(tape, t), Some(t))
        }
        MaskChoice::Gumbel { tau, noise } => (gumbel_softmax(tape, tp, tau, noise)?, None),
    };
    let out = htd_final_dist(
        tape,
        dists,
        weights,
        step.attention,
        p_gen,
        pair.source,
        &pair.source_types,
        types.vocab_types(),
        pair.extended_size,
    )?;
    Ok(StepDist {
        dist: out.dist,
        type_probs: Some(tp),
        p_gen: Some(p_gen),
        hard_type,
    })
}

/// `-log max(P[index], MIN_PROB)`. A clamped probability contributes a
/// constant with no gradient.
fn clamped_nll(tape: &mut Tape, dist: Var, index: usize, clamped: &mut usize) -> Result<Var> {
    let prob = tape.pick(dist, &[index])?;
    if tape.value(prob).data()[0] < MIN_PROB {
        *clamped += 1;
        return Ok(tape.constant(Tensor::scalar(-MIN_PROB.ln())));
    }
    let lp = tape.log(prob)?;
    Ok(tape.neg(lp)?)
}

/// `Σ_t -(log P_t(w*_t) + λ log P_t(type*_t))` over per-step word and type
/// distributions. Probabilities below [`MIN_PROB`] are clamped and counted in
/// `clamped`.
pub fn htd_loss(
    tape: &mut Tape,
    word_dists: &[Var],
    type_dists: &[Var],
    references: &[usize],
    reference_types: &[WordType],
    lambda: f64,
    clamped: &mut usize,
) -> Result<Var> {
    if lambda < 0.0 {
        return Err(ModelError::Config(format!("type loss weight must be nonnegative, got {lambda}")));
    }
    let mut terms = Vec::with_capacity(2 * word_dists.len());
    for (((&dist, &tp), &w), &c) in word_dists.iter().zip(type_dists).zip(references).zip(reference_types) {
        terms.push(clamped_nll(tape, dist, w, clamped)?);
        let type_nll = clamped_nll(tape, tp, c.index(), clamped)?;
        terms.push(tape.scale(type_nll, lambda)?);
    }
    let all = tape.concat(&terms)?;
    Ok(tape.sum(all)?)
}

/// Training or evaluation objective for one pair.
pub enum Objective<'a> {
    /// Negative log-likelihood under the mode's inference distribution
    /// (argmax hard mask for htd and rhtd). This is also the training loss
    /// of seq2seq, pgnet and std.
    Likelihood,
    /// NLL under a Gumbel-Softmax mask plus `lambda` times the type NLL.
    Htd {
        lambda: f64,
        tau: f64,
        rng: &'a mut dyn RngCore,
    },
    /// NLL under the hard mask of a sampled type, plus the REINFORCE term
    /// `reward · -log P(sampled type)` computed from detached decoder
    /// features so it only reaches the type predictor.
    Rhtd {
        sampler: &'a mut dyn FnMut(&[f64]) -> WordType,
    },
}

#[derive(Debug, Clone)]
pub struct PairLoss {
    /// Scalar to differentiate.
    pub loss: Var,
    /// The word negative log-likelihood part of `loss`; for rhtd this is the
    /// stage-2 objective.
    pub word_loss: Var,
    /// Summed word negative log-likelihood (without type terms).
    pub nll: f64,
    /// Target length including the end token.
    pub tokens: usize,
    /// Reference probabilities that fell below [`MIN_PROB`].
    pub clamped: usize,
    pub rewards: Vec<RewardRecord>,
}

/// Decoder inputs and targets: `BOS y₁ … y_n` predicts `y₁ … y_n EOS`.
pub fn teacher_forcing(target: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut inputs = vec![BOS];
    inputs.extend_from_slice(target);
    let mut outputs = target.to_vec();
    outputs.push(EOS);
    (inputs, outputs)
}

/// Teacher-forced loss of one pair on `tape`.
pub fn pair_loss(
    tape: &mut Tape,
    p: &Bound,
    types: &TypedVocabulary,
    pair: &EncodedPair,
    objective: &mut Objective<'_>,
) -> Result<PairLoss> {
    let mode = p.config.mode;
    let vocab_size = p.config.vocab_size;
    match objective {
        Objective::Htd { .. } if mode != Mode::Htd => {
            return Err(ModelError::Config(format!("htd objective used with {mode} parameters")))
        }
        Objective::Rhtd { .. } if mode != Mode::Rhtd => {
            return Err(ModelError::Config(format!("rhtd objective used with {mode} parameters")))
        }
        _ => {}
    }
    let view = PairView::new(&pair.source, &pair.oov, types);
    let enc = encode(tape, p, &pair.source)?;
    let (inputs, outputs) = teacher_forcing(&pair.target);
    let mut state = DecoderState::initial(&enc);
    let mut word_terms = Vec::with_capacity(outputs.len());
    let mut type_terms = Vec::new();
    let mut nll = 0.0;
    let mut clamped = 0;
    let mut rewards = Vec::new();

    for (t, (&prev, &reference)) in inputs.iter().zip(&outputs).enumerate() {
        let step = decoder_step(tape, p, &enc, state, prev)?;
        state = step.state;
        let reference = if mode.has_pointer() {
            reference
        } else if reference < vocab_size {
            reference
        } else {
            UNK
        };
        let ref_type = types.type_of(reference, &pair.oov);

        let (dist, type_term) = match objective {
            Objective::Likelihood => {
                let sd = step_distribution(tape, p, types, &view, &step, step.features, MaskChoice::Argmax)?;
                (sd.dist, None)
            }
            Objective::Htd { lambda, tau, rng } => {
                let noise = sample_gumbel(&mut **rng);
                let mask = MaskChoice::Gumbel { tau: *tau, noise };
                let sd = step_distribution(tape, p, types, &view, &step, step.features, mask)?;
                let tp = sd.type_probs.expect("typed mode");
                let type_nll = clamped_nll(tape, tp, ref_type.index(), &mut clamped)?;
                (sd.dist, Some(tape.scale(type_nll, *lambda)?))
            }
            Objective::Rhtd { sampler } => {
                let detached = tape.detach(step.features);
                let mut sampled = None;
                let mut record = |probs: &[f64]| {
                    let s = sampler(probs);
                    sampled = Some(s);
                    s
                };
                let sd = step_distribution(tape, p, types, &view, &step, detached, MaskChoice::Sampled(&mut record))?;
                let sampled = sampled.expect("sampler called for rhtd");
                let reward = rhtd_reward(sampled, ref_type);
                rewards.push(RewardRecord {
                    step: t,
                    sampled,
                    reference: ref_type,
                    reward,
                });
                let tp = sd.type_probs.expect("typed mode");
                let policy_nll = clamped_nll(tape, tp, sampled.index(), &mut clamped)?;
                (sd.dist, Some(tape.scale(policy_nll, reward)?))
            }
        };
        let word_nll = clamped_nll(tape, dist, reference, &mut clamped)?;
        nll += tape.value(word_nll).data()[0];
        word_terms.push(word_nll);
        type_terms.extend(type_term);
    }
    let words = tape.concat(&word_terms)?;
    let word_loss = tape.sum(words)?;
    let loss = if type_terms.is_empty() {
        word_loss
    } else {
        let types = tape.concat(&type_terms)?;
        let type_loss = tape.sum(types)?;
        tape.add(word_loss, type_loss)?
    };
    Ok(PairLoss {
        loss,
        word_loss,
        nll,
        tokens: outputs.len(),
        clamped,
        rewards,
    })
}

/// Gradients of every bound parameter, by name.
pub fn collect_gradients(bound: &Bound, grads: &mut Gradients) -> BTreeMap<String, Tensor> {
    bound
        .iter()
        .filter_map(|(name, var)| grads.take(var).map(|g| (name.to_owned(), g)))
        .collect()
}

/// Stage-1 (type predictor) and stage-2 (everything else) gradients of the
/// two-stage objective for one pair, with the rewards it received.
pub type RhtdGradients = (BTreeMap<String, Tensor>, BTreeMap<String, Tensor>, Vec<RewardRecord>);

/// Requires parameters in rhtd mode, which only
/// `training::init_rhtd_from_htd` produces.
pub fn rhtd_step_gradients(
    pair: &EncodedPair,
    params: &ModelParams,
    types: &TypedVocabulary,
    sampler: &mut dyn FnMut(&[f64]) -> WordType,
) -> Result<RhtdGradients> {
    if params.config.mode != Mode::Rhtd {
        return Err(ModelError::Config(format!(
            "rhtd training needs parameters initialized from an htd checkpoint, got {} parameters",
            params.config.mode
        )));
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let out = pair_loss(&mut tape, &bound, types, pair, &mut Objective::Rhtd { sampler })?;
    let mut grads = tape.backward(out.loss)?;
    let (type_grads, shared): (BTreeMap<_, _>, BTreeMap<_, _>) = collect_gradients(&bound, &mut grads)
        .into_iter()
        .partition(|(name, _)| crate::model::is_type_parameter(name));
    Ok((type_grads, shared, out.rewards))
}

/// Greedy decoding result with the hard mask type chosen at each step
/// (typed hard-mask modes only).
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Extended ids, without the end token.
    pub ids: Vec<usize>,
    pub step_types: Vec<Option<WordType>>,
}

/// Greedy decoding from BOS until EOS or `max_len` tokens.
pub fn greedy_decode(
    params: &ModelParams,
    types: &TypedVocabulary,
    source: &[usize],
    oov: &[String],
    max_len: usize,
) -> Result<Decoded> {
    let mut decoded = Decoded {
        ids: Vec::new(),
        step_types: Vec::new(),
    };
    if max_len == 0 {
        return Ok(decoded);
    }
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let view = PairView::new(source, oov, types);
    let enc = encode(&mut tape, &p, source)?;
    let mut state = DecoderState::initial(&enc);
    let mut prev = BOS;
    while decoded.ids.len() < max_len {
        let step = decoder_step(&mut tape, &p, &enc, state, prev)?;
        state = step.state;
        let sd = step_distribution(&mut tape, &p, types, &view, &step, step.features, MaskChoice::Argmax)?;
        let id = argmax(tape.value(sd.dist).data());
        if id == EOS {
            break;
        }
        decoded.ids.push(id);
        decoded.step_types.push(sd.hard_type);
        prev = id;
    }
    Ok(decoded)
}
