//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every criterion reports even when an
//! earlier one fails. The process exits nonzero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use typedsum::corpus::{build_vocab, encode_pair, load_pairs, EncodedPair, Vocabulary, RESERVED};
use typedsum::eval::{corpus_rouge, lcs_len, rouge_l, rouge_n, RougeScore};
use typedsum::lexicon::{load_parsed_corpus, run_double_propagation, Lexicon, TypedVocabulary, WordType};
use typedsum::model::{decoder_step, encode, DecoderState, Mode};
use typedsum::numerics::{grad_check_many, op_probes, Tape, Tensor};
use typedsum::training::{decode_all, train, EpochLog, TrainConfig, TrainOutcome};
use typedsum::typed_decoders::{
    gumbel_softmax, pair_loss, rhtd_reward, rhtd_sample_type, rhtd_step_gradients, sample_gumbel, step_distribution,
    MaskChoice, Objective, PairView,
};

// Tolerances and budgets.
const OP_GRAD_TOL: f64 = 1e-6;
const OP_TRIALS: usize = 50;
const LOSS_GRAD_TOL: f64 = 1e-5;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const NORM_TOL: f64 = 1e-9;
const NORM_TRIALS: usize = 1000;
const NORM_BUDGET: Duration = Duration::from_secs(60);
const GUMBEL_IDENTITY_TOL: f64 = 1e-12;
const GUMBEL_SHARP_MIN: f64 = 0.999;
const REINFORCE_REL_TOL: f64 = 0.05;
const REINFORCE_DRAWS: usize = 10_000;
const REINFORCE_BUDGET: Duration = Duration::from_secs(120);
const OVERFIT_EPOCHS: usize = 150;
const OVERFIT_MAX_EPOCHS: usize = 500;
const OVERFIT_DIM: usize = 32;
const OVERFIT_LOSS: f64 = 0.1;
const OVERFIT_EXACT: f64 = 0.9;
const OVERFIT_ROUGE1: f64 = 0.95;
const OVERFIT_BUDGET: Duration = Duration::from_secs(600);
const COPY_EPOCHS: usize = 400;
const REWARD_RISE: f64 = 0.05;
const ROUGE_TOL: f64 = 1e-9;
const LCS_MAX_LEN: usize = 8;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let overfit = OverfitRuns::new();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("gradient correctness", Box::new(gradients)),
        ("distribution normalization", Box::new(normalization)),
        ("gumbel-softmax contract", Box::new(gumbel_contract)),
        ("reinforce unbiasedness", Box::new(reinforce)),
        ("double propagation fixpoint", Box::new(double_propagation)),
        ("overfit regeneration", Box::new(|| overfit.regeneration())),
        ("copy mechanism", Box::new(copy_mechanism)),
        ("rhtd reward trend", Box::new(|| overfit.reward_trend())),
        ("rouge oracle", Box::new(rouge_oracle)),
        ("pipeline determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {:>2} PASS {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn within(budget: Duration, start: Instant) -> Result<(), String> {
    let t = start.elapsed();
    if t > budget {
        return Err(format!("took {t:?}, budget {budget:?}"));
    }
    Ok(())
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_op: f64 = 0.0;
    let probes = op_probes();
    for probe in &probes {
        for trial in 0..OP_TRIALS {
            let inputs = (probe.inputs)(&mut rng);
            let err = grad_check_many(probe.loss, &inputs, 1e-6).map_err(|e| e.to_string())?;
            ensure!(err < OP_GRAD_TOL, "{} trial {trial}: relative error {err:e}", probe.name);
            worst_op = worst_op.max(err);
        }
    }

    let types = types8();
    let pair = pair8();
    let mut worst_loss: f64 = 0.0;
    for mode in [Mode::PgNet, Mode::Std, Mode::Htd] {
        let mut p = params(mode, 8, 4, 11);
        scale_params(&mut p, 4.0);
        perturb_biases(&mut p);
        let (names, inputs) = flatten(&p);
        let err = grad_check_many(
            |tape, vars| {
                let b = rebind(p.config, &names, vars);
                let mut noise_rng = ChaCha8Rng::seed_from_u64(5);
                let mut obj = if mode == Mode::Htd {
                    Objective::Htd {
                        lambda: 1.0,
                        tau: 1.0,
                        rng: &mut noise_rng,
                    }
                } else {
                    Objective::Likelihood
                };
                Ok(pair_loss(tape, &b, &types, &pair, &mut obj).map_err(numerics)?.loss)
            },
            &inputs,
            1e-6,
        )
        .map_err(|e| e.to_string())?;
        ensure!(err < LOSS_GRAD_TOL, "{mode} loss: relative error {err:e}");
        worst_loss = worst_loss.max(err);
    }
    within(GRAD_BUDGET, start)?;
    Ok(format!(
        "{} ops x {OP_TRIALS} trials worst {worst_op:.1e}; pgnet/std/htd losses worst {worst_loss:.1e}",
        probes.len()
    ))
}

fn check_distribution(what: &str, values: &[f64]) -> Result<(), String> {
    let total: f64 = values.iter().sum();
    ensure!((total - 1.0).abs() < NORM_TOL, "{what} sums to {total}");
    ensure!(values.iter().all(|&v| v >= 0.0), "{what} has a negative entry");
    Ok(())
}

fn normalization() -> Outcome {
    let start = Instant::now();
    let types = types8();
    let pair = pair8();
    let view = PairView::new(&pair.source, &pair.oov, &types);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut checked = 0usize;
    for trial in 0..NORM_TRIALS {
        for mode in Mode::ALL {
            let mut p = params(mode, 8, 4, trial as u64);
            scale_params(&mut p, rng.gen_range(0.5..20.0));
            let mut tape = Tape::new();
            let b = p.bind(&mut tape, false);
            let enc = encode(&mut tape, &b, &pair.source).map_err(|e| e.to_string())?;
            let mut state = DecoderState::initial(&enc);
            for prev in [2usize, 6, 8, 4] {
                let step = decoder_step(&mut tape, &b, &enc, state, prev).map_err(|e| e.to_string())?;
                state = step.state;
                let mut choices = vec![MaskChoice::Argmax];
                if matches!(mode, Mode::Htd | Mode::Rhtd) {
                    choices.push(MaskChoice::Gumbel {
                        tau: 1.0,
                        noise: sample_gumbel(&mut rng),
                    });
                    choices.extend(WordType::ALL.map(MaskChoice::Fixed));
                }
                for choice in choices {
                    let sd = step_distribution(&mut tape, &b, &types, &view, &step, step.features, choice)
                        .map_err(|e| e.to_string())?;
                    check_distribution(&format!("{mode} trial {trial}"), tape.value(sd.dist).data())?;
                    checked += 1;
                }
            }
        }
    }
    within(NORM_BUDGET, start)?;
    Ok(format!("{checked} final distributions over {NORM_TRIALS} parameterizations per mode"))
}

fn gumbel_contract() -> Outcome {
    let mut tape = Tape::new();
    let probs = [0.2, 0.3, 0.5];
    let pv = tape.constant(Tensor::vector(&probs));
    let identity = gumbel_softmax(&mut tape, pv, 1.0, [0.0; 3]).map_err(|e| e.to_string())?;
    let id = tape.value(identity).data().to_vec();
    let gap = id.iter().zip(probs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure!(gap <= GUMBEL_IDENTITY_TOL, "zero-noise identity off by {gap:e}");

    let sharp = gumbel_softmax(&mut tape, pv, 0.01, [0.0; 3]).map_err(|e| e.to_string())?;
    let max = tape.value(sharp).data().iter().copied().fold(0.0, f64::max);
    ensure!(max > GUMBEL_SHARP_MIN, "tau 0.01 max component {max}");

    // With noise the sharpness bound is 1 / (1 + 2 exp(-gap / tau)).
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let noise = sample_gumbel(&mut rng);
        let y = gumbel_softmax(&mut tape, pv, 0.01, noise).map_err(|e| e.to_string())?;
        let mut z: Vec<f64> = probs.iter().zip(noise).map(|(p, g)| p.ln() + g).collect();
        z.sort_by(f64::total_cmp);
        let bound = 1.0 / (1.0 + 2.0 * (-(z[2] - z[1]) / 0.01).exp());
        let m = tape.value(y).data().iter().copied().fold(0.0, f64::max);
        ensure!(m >= bound - 1e-12, "noisy max {m} below {bound}");
    }

    let mut codomain = BTreeSet::new();
    for s in WordType::ALL {
        for r in WordType::ALL {
            codomain.insert(rhtd_reward(s, r).to_bits());
        }
    }
    let expected: BTreeSet<u64> = [0.3f64, 1.0].iter().map(|x| x.to_bits()).collect();
    ensure!(codomain == expected, "reward codomain {codomain:?}");
    Ok(format!("identity within {gap:.1e}; tau 0.01 max {max:.6}; rewards {{0.3, 1.0}}"))
}

fn reinforce() -> Outcome {
    let start = Instant::now();
    let mut p = params(Mode::Rhtd, 6, 3, 8);
    scale_params(&mut p, 3.0);
    let probs = [0.13, 0.13, 0.74];
    p.get_mut("type.w").unwrap().data_mut().fill(0.0);
    *p.get_mut("type.b").unwrap() = Tensor::vector(&probs.map(f64::ln));
    use WordType::*;
    let types = TypedVocabulary::from_types(vec![Context, Context, Context, Context, Aspect, Opinion], Lexicon::default());
    let pair = EncodedPair {
        source: vec![4, 5, 4],
        target: vec![],
        oov: vec![],
    };

    let mut tape = Tape::new();
    let b = p.bind(&mut tape, false);
    let enc = encode(&mut tape, &b, &pair.source).map_err(|e| e.to_string())?;
    let step = decoder_step(&mut tape, &b, &enc, DecoderState::initial(&enc), 2).map_err(|e| e.to_string())?;
    let f = values(&tape, step.features);

    // Exact expectation over the three sampled types; the end token is context.
    let reference = Context.index();
    let mut dz = [0.0; 3];
    for c in 0..3 {
        let v = if c == reference { 1.0 } else { 0.3 };
        for j in 0..3 {
            dz[j] += probs[c] * v * (probs[j] - if j == c { 1.0 } else { 0.0 });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut sum_b = [0.0; 3];
    let mut sum_w = vec![0.0; 3 * f.len()];
    for _ in 0..REINFORCE_DRAWS {
        let (g, _, _) = rhtd_step_gradients(&pair, &p, &types, &mut |pr| rhtd_sample_type(pr, &mut rng))
            .map_err(|e| e.to_string())?;
        sum_b.iter_mut().zip(g["type.b"].data()).for_each(|(s, x)| *s += x);
        sum_w.iter_mut().zip(g["type.w"].data()).for_each(|(s, x)| *s += x);
    }
    let n = REINFORCE_DRAWS as f64;
    let mut worst: f64 = 0.0;
    for j in 0..3 {
        let mut pairs = vec![(sum_b[j] / n, dz[j])];
        pairs.extend(f.iter().enumerate().map(|(k, fk)| (sum_w[j * f.len() + k] / n, dz[j] * fk)));
        for (mean, exact) in pairs {
            let rel = (mean - exact).abs() / exact.abs();
            ensure!(rel <= REINFORCE_REL_TOL, "type {j}: mean {mean} vs exact {exact}");
            worst = worst.max(rel);
        }
    }
    within(REINFORCE_BUDGET, start)?;
    Ok(format!("{} components, worst relative error {:.2}%", 3 * (f.len() + 1), 100.0 * worst))
}

fn double_propagation() -> Outcome {
    let corpus = load_parsed_corpus(&fixture("dp_six_sentences.parsed")).map_err(|e| e.to_string())?;
    ensure!(corpus.len() == 6, "fixture has {} sentences", corpus.len());
    let set = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect::<BTreeSet<_>>();
    let p = run_double_propagation(&corpus, &set(&["incredible", "light"]));
    let aspects = set(&["speed", "control", "charger", "case"]);
    let opinions = set(&["incredible", "light", "portable", "sturdy", "cheap", "sleek"]);
    ensure!(p.lexicon.aspects == aspects, "aspects {:?}", p.lexicon.aspects);
    ensure!(p.lexicon.opinions == opinions, "opinions {:?}", p.lexicon.opinions);
    ensure!(
        p.passes.first() == Some(&(set(&["speed"]), set(&["portable"]))),
        "first pass {:?}",
        p.passes.first()
    );
    let first_seen = |w: &str| p.passes.iter().position(|(a, o)| a.contains(w) || o.contains(w));
    ensure!(first_seen("control") == Some(1), "control first seen in pass {:?}", first_seen("control"));
    Ok(format!(
        "{} aspects, {} opinions in {} passes; speed and portable in pass 1, control in pass 2",
        aspects.len(),
        opinions.len(),
        p.passes.len()
    ))
}

fn overfit_lexicon() -> Lexicon {
    let words = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect::<BTreeSet<_>>();
    Lexicon {
        aspects: words(&["battery", "screen", "sound", "case", "strap", "lens", "charger", "keyboard"]),
        opinions: words(&["great", "poor", "sturdy", "cheap", "bright", "loud", "weak", "solid"]),
    }
}

/// Runs of every mode on the 32-pair fixture, shared by two criteria.
struct OverfitRuns {
    runs: std::cell::OnceCell<Result<Vec<(Mode, TrainOutcome, Duration)>, String>>,
}

impl OverfitRuns {
    fn new() -> Self {
        Self {
            runs: std::cell::OnceCell::new(),
        }
    }

    fn get(&self) -> Result<&Vec<(Mode, TrainOutcome, Duration)>, String> {
        self.runs.get_or_init(run_overfit).as_ref().map_err(Clone::clone)
    }

    fn regeneration(&self) -> Outcome {
        let (vocab, pairs) = overfit_data()?;
        let mut notes = Vec::new();
        for (mode, out, took) in self.get()? {
            ensure!(*took <= OVERFIT_BUDGET, "{mode} took {took:?}");
            let loss = out.log.last().and_then(|e| e.train_loss).ok_or("no training loss logged")?;
            ensure!(loss < OVERFIT_LOSS, "{mode}: final training loss {loss:.4}");
            let types = out.last.typed_vocabulary();
            let decoded = decode_all(&out.last.params, &types, &pairs, 30).map_err(|e| e.to_string())?;
            let exact = decoded.iter().zip(&pairs).filter(|(d, p)| **d == p.target).count();
            let frac = exact as f64 / pairs.len() as f64;
            ensure!(frac >= OVERFIT_EXACT, "{mode}: {exact}/{} exact", pairs.len());
            let scored: Vec<(Vec<String>, Vec<String>)> = decoded
                .iter()
                .zip(&pairs)
                .map(|(d, p)| (words(d, p, &vocab), words(&p.target, p, &vocab)))
                .collect();
            let r1 = corpus_rouge(&scored).map_err(|e| e.to_string())?.rouge_1.f1;
            ensure!(r1 >= OVERFIT_ROUGE1, "{mode}: ROUGE-1 F1 {r1:.4}");
            notes.push(format!("{mode} loss {loss:.4} exact {exact}/{} R1 {r1:.3} {:.0}s", pairs.len(), took.as_secs_f64()));
        }
        Ok(notes.join("; "))
    }

    fn reward_trend(&self) -> Outcome {
        let runs = self.get()?;
        let (_, out, _) = runs.iter().find(|(m, _, _)| *m == Mode::Rhtd).ok_or("no rhtd run")?;
        let reward = |e: &EpochLog| e.mean_reward.ok_or("rhtd epoch without reward");
        let first = reward(out.log.first().ok_or("empty log")?)?;
        let last = reward(out.log.last().ok_or("empty log")?)?;
        ensure!(last - first >= REWARD_RISE, "mean reward {first:.4} -> {last:.4}");
        Ok(format!("mean reward {first:.4} at epoch 1 -> {last:.4} at epoch {}", out.log.len()))
    }
}

fn overfit_data() -> Result<(Vocabulary, Vec<EncodedPair>), String> {
    let pairs = load_pairs(&fixture("overfit_32.jsonl")).map_err(|e| e.to_string())?;
    let vocab = build_vocab(&pairs, 1000).map_err(|e| e.to_string())?;
    let encoded = pairs.iter().map(|p| encode_pair(p, &vocab)).collect();
    Ok((vocab, encoded))
}

fn words(ids: &[usize], pair: &EncodedPair, vocab: &Vocabulary) -> Vec<String> {
    ids.iter()
        .map(|&id| pair.surface(id, vocab).unwrap_or("<?>").to_string())
        .collect()
}

/// Default training settings apart from the model size. rhtd starts from the htd
/// checkpoint after one epoch, so the type policy still has room to improve.
fn run_overfit() -> Result<Vec<(Mode, TrainOutcome, Duration)>, String> {
    assert!(OVERFIT_EPOCHS <= OVERFIT_MAX_EPOCHS);
    let (vocab, pairs) = overfit_data()?;
    let lexicon = overfit_lexicon();
    let config = |mode, epochs| TrainConfig {
        mode,
        embed_dim: OVERFIT_DIM,
        hidden_dim: OVERFIT_DIM,
        epochs,
        ..TrainConfig::default()
    };
    let err = |e: typedsum::training::TrainError| e.to_string();
    let mut runs = Vec::new();
    for mode in Mode::ALL {
        let start = Instant::now();
        let out = match mode {
            Mode::Rhtd => {
                let htd = train(&config(Mode::Htd, 1), vocab.clone(), Some(lexicon.clone()), None, &pairs, &[]).map_err(err)?;
                train(&config(mode, OVERFIT_EPOCHS), vocab.clone(), None, Some(&htd.last), &pairs, &[]).map_err(err)?
            }
            _ => train(&config(mode, OVERFIT_EPOCHS), vocab.clone(), Some(lexicon.clone()), None, &pairs, &[]).map_err(err)?,
        };
        runs.push((mode, out, start.elapsed()));
    }
    Ok(runs)
}

fn copy_mechanism() -> Outcome {
    let raw = load_pairs(&fixture("copy_oov_16.jsonl")).map_err(|e| e.to_string())?;
    let brands: BTreeSet<String> = raw.iter().map(|p| p.summary[1].clone()).collect();
    ensure!(brands.len() == raw.len(), "brands are not unique");
    let full = build_vocab(&raw, 1000).map_err(|e| e.to_string())?;
    let kept: Vec<&str> = full.words()[RESERVED.len()..]
        .iter()
        .map(String::as_str)
        .filter(|w| !brands.contains(*w))
        .collect();
    let vocab = Vocabulary::parse(&format!("{}\n{}\n", RESERVED.join("\n"), kept.join("\n"))).map_err(|e| e.to_string())?;
    let pairs: Vec<EncodedPair> = raw.iter().map(|p| encode_pair(p, &vocab)).collect();
    ensure!(pairs.iter().all(|p| p.oov.len() == 1), "each review should have exactly one unknown word");

    let mut copied = 0;
    for mode in [Mode::PgNet, Mode::Seq2Seq] {
        let config = TrainConfig {
            mode,
            embed_dim: OVERFIT_DIM,
            hidden_dim: OVERFIT_DIM,
            epochs: COPY_EPOCHS,
            ..TrainConfig::default()
        };
        let out = train(&config, vocab.clone(), None, None, &pairs, &[]).map_err(|e| e.to_string())?;
        let types = out.last.typed_vocabulary();
        let decoded = decode_all(&out.last.params, &types, &pairs, 30).map_err(|e| e.to_string())?;
        for ((d, p), r) in decoded.iter().zip(&pairs).zip(&raw) {
            let emitted = words(d, p, &vocab);
            let has_brand = emitted.contains(&r.summary[1]);
            match mode {
                Mode::PgNet => ensure!(has_brand, "pgnet output {emitted:?} lacks {}", r.summary[1]),
                _ => ensure!(
                    !emitted.iter().any(|w| brands.contains(w)),
                    "seq2seq output {emitted:?} contains an unknown brand"
                ),
            }
            copied += usize::from(has_brand);
        }
    }
    Ok(format!("pgnet copied all {copied} unknown brands; seq2seq emitted none"))
}

fn hand_f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Hand counts per pair: (precision, recall) for ROUGE-1, ROUGE-2, ROUGE-L.
const HAND: [[(f64, f64); 3]; 5] = [
    [(0.75, 0.75), (1.0 / 3.0, 1.0 / 3.0), (0.75, 0.75)],
    [(2.0 / 3.0, 2.0 / 3.0), (0.5, 0.5), (2.0 / 3.0, 2.0 / 3.0)],
    [(1.0, 1.0), (1.0, 1.0), (1.0, 1.0)],
    [(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)],
    [(0.6, 1.0), (0.0, 0.0), (0.2, 1.0 / 3.0)],
];

fn rouge_oracle() -> Outcome {
    let text = std::fs::read_to_string(fixture("rouge_five_pairs.tsv")).map_err(|e| e.to_string())?;
    let pairs: Vec<(Vec<String>, Vec<String>)> = text
        .lines()
        .map(|l| {
            let (c, r) = l.split_once('\t').unwrap();
            let toks = |s: &str| s.split_whitespace().map(str::to_owned).collect();
            (toks(c), toks(r))
        })
        .collect();
    ensure!(pairs.len() == HAND.len(), "fixture has {} pairs", pairs.len());
    let close = |s: RougeScore, (p, r): (f64, f64)| {
        (s.precision - p).abs() < ROUGE_TOL && (s.recall - r).abs() < ROUGE_TOL && (s.f1 - hand_f1(p, r)).abs() < ROUGE_TOL
    };
    for (i, ((c, r), hand)) in pairs.iter().zip(HAND).enumerate() {
        let r1 = rouge_n(c, r, 1).map_err(|e| e.to_string())?;
        let r2 = rouge_n(c, r, 2).map_err(|e| e.to_string())?;
        let rl = rouge_l(c, r);
        ensure!(close(r1, hand[0]) && close(r2, hand[1]) && close(rl, hand[2]), "pair {}: {r1:?} {r2:?} {rl:?}", i + 1);
    }

    let checked = exhaustive_lcs()?;
    Ok(format!("5 hand pairs within {ROUGE_TOL:e}; LCS matches enumeration on {checked} pairs"))
}

/// Compares `lcs_len` with the longest shared subsequence found by
/// enumerating subsequences, for every pair of sequences over three symbols
/// with length at most `LCS_MAX_LEN`.
fn exhaustive_lcs() -> Result<u64, String> {
    // Sequences of length k get codes offset[k] + (base-3 value).
    let mut offset = vec![0usize; LCS_MAX_LEN + 2];
    for k in 0..=LCS_MAX_LEN {
        offset[k + 1] = offset[k] + 3usize.pow(k as u32);
    }
    let total = offset[LCS_MAX_LEN + 1];
    let code = |s: &[u8]| offset[s.len()] + s.iter().fold(0usize, |acc, &c| acc * 3 + c as usize);

    let mut seqs: Vec<Vec<u8>> = Vec::with_capacity(total);
    for k in 0..=LCS_MAX_LEN {
        for v in 0..3usize.pow(k as u32) {
            let mut s = vec![0u8; k];
            let mut x = v;
            for slot in s.iter_mut().rev() {
                *slot = (x % 3) as u8;
                x /= 3;
            }
            seqs.push(s);
        }
    }

    // Distinct subsequence codes of each sequence, grouped by length.
    let subs: Vec<Vec<Vec<u32>>> = seqs
        .iter()
        .map(|s| {
            let mut by_len = vec![BTreeSet::new(); s.len() + 1];
            for mask in 0u32..(1 << s.len()) {
                let sub: Vec<u8> = (0..s.len()).filter(|i| mask >> i & 1 == 1).map(|i| s[i]).collect();
                by_len[sub.len()].insert(code(&sub) as u32);
            }
            by_len.into_iter().map(|set| set.into_iter().collect()).collect()
        })
        .collect();

    let words = total.div_ceil(64);
    let mut member = vec![0u64; words];
    let mut checked = 0u64;
    for (a, subs_a) in seqs.iter().zip(&subs) {
        member.fill(0);
        for &c in subs_a.iter().flatten() {
            member[c as usize / 64] |= 1 << (c % 64);
        }
        for (b, subs_b) in seqs.iter().zip(&subs) {
            let top = a.len().min(b.len());
            let oracle = (0..=top)
                .rev()
                .find(|&k| subs_b[k].iter().any(|&c| member[c as usize / 64] >> (c % 64) & 1 == 1))
                .unwrap_or(0);
            let got = lcs_len(a, b);
            ensure!(got == oracle, "lcs({a:?}, {b:?}) = {got}, enumeration gives {oracle}");
            checked += 1;
        }
    }
    Ok(checked)
}

/// Runs the whole command-line pipeline in `dir` and returns every file it
/// produced plus the captured stdout of each step, keyed by name.
fn pipeline(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let fx = |n: &str| fixture(n).to_string_lossy().into_owned();
    let small = ["--embed-dim", "12", "--hidden-dim", "12", "--epochs", "3", "--seed", "5"];
    let steps: Vec<Vec<String>> = vec![
        vec!["extract-lexicon", "--parses", &fx("overfit_reviews.parsed"), "--seed-opinions", &fx("overfit_seed_opinions.txt"), "--out", "lexicon.tsv"]
            .into_iter()
            .map(String::from)
            .collect(),
        vec!["preprocess", "--pairs", &fx("overfit_32.jsonl"), "--out-dir", "data", "--seed", "5"]
            .into_iter()
            .map(String::from)
            .collect(),
        ["train", "--mode", "htd", "--data", "data", "--lexicon", "lexicon.tsv", "--out", "htd.ckpt", "--log", "htd.log"]
            .iter()
            .chain(&small)
            .map(|s| s.to_string())
            .collect(),
        ["train", "--mode", "rhtd", "--data", "data", "--init-from", "htd.ckpt", "--out", "rhtd.ckpt", "--log", "rhtd.log"]
            .iter()
            .chain(&small)
            .map(|s| s.to_string())
            .collect(),
        ["generate", "--ckpt", "rhtd.ckpt", "--input", "data/test.reviews.txt", "--out", "generated.txt"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        ["evaluate", "--candidates", "generated.txt", "--references", "data/test.summaries.txt", "--out", "report.tsv"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    ];
    let mut artifacts = Vec::new();
    for (i, args) in steps.iter().enumerate() {
        let out = Command::new(env!("CARGO_BIN_EXE_typedsum"))
            .args(args)
            .current_dir(dir)
            .env("RUST_LOG", "warn")
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(out.status.success(), "{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr));
        artifacts.push((format!("stdout of step {i} ({})", args[0]), out.stdout));
    }
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let mut entries: Vec<_> = std::fs::read_dir(&d).map_err(|e| e.to_string())?.map(|e| e.unwrap().path()).collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                stack.push(path);
            } else {
                let name = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                artifacts.push((name, std::fs::read(&path).map_err(|e| e.to_string())?));
            }
        }
    }
    Ok(artifacts)
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = pipeline(a.path())?;
    let second = pipeline(b.path())?;
    let names = |v: &[(String, Vec<u8>)]| v.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    ensure!(names(&first) == names(&second), "different artifacts: {:?} vs {:?}", names(&first), names(&second));
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        ensure!(x == y, "{name} differs between runs");
    }
    for required in ["htd.ckpt", "rhtd.ckpt", "generated.txt", "report.tsv"] {
        ensure!(first.iter().any(|(n, _)| n == required), "{required} was not produced");
    }
    Ok(format!("{} artifacts byte-identical across two directories", first.len()))
}
