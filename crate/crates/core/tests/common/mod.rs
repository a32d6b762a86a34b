#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use typedsum::corpus::EncodedPair;
use typedsum::lexicon::{Lexicon, TypedVocabulary, WordType};
use typedsum::model::{Bound, ModelConfig, ModelError, ModelParams, Mode};
use typedsum::numerics::{NumericsError, Tape, Tensor, Var};

pub fn config(mode: Mode, vocab_size: usize, dim: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        embed_dim: dim,
        hidden_dim: dim,
        mode,
    }
}

pub fn params(mode: Mode, vocab_size: usize, dim: usize, seed: u64) -> ModelParams {
    ModelParams::init(config(mode, vocab_size, dim), &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Eight words: the four reserved ids, then aspect, aspect, opinion, context.
/// The lexicon types "brandx" as an aspect for out-of-vocabulary copies.
pub fn types8() -> TypedVocabulary {
    use WordType::*;
    let lexicon = Lexicon {
        aspects: ["brandx".to_string()].into(),
        opinions: ["wow".to_string()].into(),
    };
    TypedVocabulary::from_types(
        vec![Context, Context, Context, Context, Aspect, Aspect, Opinion, Context],
        lexicon,
    )
}

/// Five source tokens (one out of vocabulary, copied in the target) and a
/// three-token target.
pub fn pair8() -> EncodedPair {
    EncodedPair {
        source: vec![4, 8, 6, 7, 5],
        target: vec![6, 8, 4],
        oov: vec!["brandx".to_string()],
    }
}

pub fn scale_params(p: &mut ModelParams, factor: f64) {
    for (_, t) in p.iter_mut() {
        t.data_mut().iter_mut().for_each(|x| *x *= factor);
    }
}

/// Adds a deterministic spread to every bias so no term is degenerate.
pub fn perturb_biases(p: &mut ModelParams) {
    for (name, t) in p.iter_mut() {
        if t.rank() == 1 {
            let salt = name.len() as f64;
            for (i, x) in t.data_mut().iter_mut().enumerate() {
                *x += 0.05 * ((i as f64 + salt) * 0.7).sin();
            }
        }
    }
}

/// Splits params into names and tensors for a gradient check.
pub fn flatten(p: &ModelParams) -> (Vec<String>, Vec<Tensor>) {
    p.iter().map(|(n, t)| (n.to_owned(), t.clone())).unzip()
}

pub fn rebind(config: ModelConfig, names: &[String], vars: &[Var]) -> Bound {
    let map: BTreeMap<String, Var> = names.iter().cloned().zip(vars.iter().copied()).collect();
    Bound::new(config, map)
}

pub fn numerics(e: ModelError) -> NumericsError {
    match e {
        ModelError::Numerics(n) => n,
        other => panic!("unexpected model error: {other}"),
    }
}

pub fn values(tape: &Tape, v: Var) -> Vec<f64> {
    tape.value(v).data().to_vec()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
    assert_eq!(actual.len(), expected.len(), "length mismatch");
    for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
        assert!((a - e).abs() <= tol, "index {i}: {a} vs {e} (tol {tol})");
    }
}
