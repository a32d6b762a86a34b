//! The `typedsum` command line: lexicon extraction, preprocessing,
//! training, generation and evaluation.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use typedsum::corpus::{
    build_vocab, encode_pair, encode_source, filter_pairs, load_pairs, parse_encoded, split_dataset, tokenize,
    CorpusError, EncodedPair, ReviewPair, Vocabulary,
};
use typedsum::eval::{corpus_rouge, EvalError};
use typedsum::lexicon::{load_parsed_corpus, load_seed_opinions, run_double_propagation, Lexicon, LexiconError};
use typedsum::model::{ModelError, Mode};
use typedsum::training::{decode_all, init_rhtd_from_htd, train_from, Checkpoint, TrainConfig, TrainError, LOG_HEADER};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INCOMPATIBLE: i32 = 3;

/// Files written by `preprocess` inside the output directory.
pub const VOCAB_FILE: &str = "vocab.txt";
pub const TRAIN_FILE: &str = "train.ids";
pub const DEV_FILE: &str = "dev.ids";
pub const TEST_FILE: &str = "test.ids";
pub const TEST_REVIEWS_FILE: &str = "test.reviews.txt";
pub const TEST_SUMMARIES_FILE: &str = "test.summaries.txt";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Incompatible(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Incompatible(_) => EXIT_INCOMPATIBLE,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Incompatible(m) => m,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Incompatible(_) => CliError::Incompatible(e.to_string()),
            TrainError::Model(ModelError::Config(_)) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<LexiconError> for CliError {
    fn from(e: LexiconError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "typedsum", version, about = "Typed-decoder abstractive review summarization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract aspect and opinion words from dependency parses by double propagation.
    ExtractLexicon {
        /// Dependency-parsed reviews (index, form, POS, head, relation per line).
        #[arg(long)]
        parses: PathBuf,
        /// Seed opinion words, one per line.
        #[arg(long)]
        seed_opinions: PathBuf,
        /// Lexicon file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter, split and encode review/summary pairs.
    Preprocess {
        /// Line-delimited JSON records with "review" and "summary".
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Train a model on a preprocessed data directory.
    Train {
        /// seq2seq, pgnet, std, htd or rhtd (overrides the config file).
        #[arg(long)]
        mode: Option<String>,
        /// Directory written by `preprocess`.
        #[arg(long)]
        data: PathBuf,
        /// Lexicon file (required for std and htd).
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Checkpoint to write (the best epoch by the selection rule).
        #[arg(long)]
        out: PathBuf,
        /// Trained htd checkpoint to initialize rhtd from.
        #[arg(long)]
        init_from: Option<PathBuf>,
        /// Pretrained embeddings: a token then embed_dim numbers per line.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Tab-separated per-epoch log; printed to stdout when absent.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Greedy-decode summaries for raw reviews, one per line.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        /// Reviews, one per line.
        #[arg(long)]
        input: PathBuf,
        /// Summaries, one per line.
        #[arg(long)]
        out: PathBuf,
        /// Maximum summary length (defaults to the checkpoint's max_decode_len).
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// ROUGE-1, ROUGE-2 and ROUGE-L between line-aligned files.
    Evaluate {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Training configuration overrides. Flags take precedence over `--config`.
#[derive(Args, Debug, Default)]
struct ConfigFlags {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    lstm_layers: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Weight of the type loss in the htd objective.
    #[arg(long)]
    lambda: Option<f64>,
    /// Gumbel-Softmax temperature.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum vocabulary size including reserved tokens.
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    min_src: Option<usize>,
    #[arg(long)]
    max_src: Option<usize>,
    #[arg(long)]
    min_tgt: Option<usize>,
    #[arg(long)]
    max_tgt: Option<usize>,
    #[arg(long)]
    clip_norm: Option<f64>,
    /// dev_loss or dev_rouge.
    #[arg(long)]
    selection: Option<String>,
    #[arg(long)]
    max_decode_len: Option<usize>,
}

impl ConfigFlags {
    fn resolve(&self, mode: Option<&str>) -> Result<TrainConfig> {
        let mut config = TrainConfig::default();
        if let Some(path) = &self.config {
            config.apply_text(&read(path)?)?;
        }
        let overrides = [
            ("mode", mode.map(str::to_owned)),
            ("embed_dim", self.embed_dim.map(|v| v.to_string())),
            ("hidden_dim", self.hidden_dim.map(|v| v.to_string())),
            ("lstm_layers", self.lstm_layers.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("tau", self.tau.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("vocab_size", self.vocab_size.map(|v| v.to_string())),
            ("min_src", self.min_src.map(|v| v.to_string())),
            ("max_src", self.max_src.map(|v| v.to_string())),
            ("min_tgt", self.min_tgt.map(|v| v.to_string())),
            ("max_tgt", self.max_tgt.map(|v| v.to_string())),
            ("clip_norm", self.clip_norm.map(|v| v.to_string())),
            ("selection", self.selection.clone()),
            ("max_decode_len", self.max_decode_len.map(|v| v.to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                config.set(key, &v)?;
            }
        }
        config.validate()?;
        Ok(config)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code. Errors are reported on standard error.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::ExtractLexicon {
            parses,
            seed_opinions,
            out,
        } => extract_lexicon(&parses, &seed_opinions, &out),
        Command::Preprocess { pairs, out_dir, config } => preprocess(&pairs, &out_dir, &config.resolve(None)?),
        Command::Train {
            mode,
            data,
            lexicon,
            out,
            init_from,
            embeddings,
            log,
            config,
        } => {
            let config = config.resolve(mode.as_deref())?;
            let paths = TrainPaths {
                data: &data,
                lexicon: lexicon.as_deref(),
                out: &out,
                init_from: init_from.as_deref(),
                embeddings: embeddings.as_deref(),
                log: log.as_deref(),
            };
            run_train(&config, &paths)
        }
        Command::Generate {
            ckpt,
            input,
            out,
            max_len,
        } => generate(&ckpt, &input, &out, max_len),
        Command::Evaluate {
            candidates,
            references,
            out,
        } => evaluate(&candidates, &references, out.as_deref()),
    }
}

fn extract_lexicon(parses: &Path, seeds: &Path, out: &Path) -> Result<()> {
    let corpus = load_parsed_corpus(parses)?;
    let seeds = load_seed_opinions(seeds)?;
    let result = run_double_propagation(&corpus, &seeds);
    log::info!(
        "{} aspects, {} opinions after {} passes",
        result.lexicon.aspects.len(),
        result.lexicon.opinions.len(),
        result.passes.len()
    );
    write(out, result.lexicon.to_file_string())
}

fn encoded_lines(pairs: &[EncodedPair]) -> String {
    pairs.iter().map(|p| p.to_line() + "\n").collect()
}

fn token_lines<'a>(rows: impl Iterator<Item = &'a Vec<String>>) -> String {
    rows.map(|r| r.join(" ") + "\n").collect()
}

fn preprocess(pairs_path: &Path, out_dir: &Path, config: &TrainConfig) -> Result<()> {
    let pairs = load_pairs(pairs_path)?;
    let total = pairs.len();
    let kept = filter_pairs(pairs, &config.filter)?;
    log::info!("kept {} of {total} pairs", kept.len());
    let split = split_dataset(kept, config.seed)?;
    let vocab = build_vocab(&split.train, config.vocab_size)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::Data(format!("{}: {e}", out_dir.display())))?;
    let encode = |ps: &[ReviewPair]| ps.iter().map(|p| encode_pair(p, &vocab)).collect::<Vec<_>>();
    write(&out_dir.join(VOCAB_FILE), vocab.to_file_string())?;
    write(&out_dir.join(TRAIN_FILE), encoded_lines(&encode(&split.train)))?;
    write(&out_dir.join(DEV_FILE), encoded_lines(&encode(&split.dev)))?;
    write(&out_dir.join(TEST_FILE), encoded_lines(&encode(&split.test)))?;
    write(&out_dir.join(TEST_REVIEWS_FILE), token_lines(split.test.iter().map(|p| &p.review)))?;
    write(&out_dir.join(TEST_SUMMARIES_FILE), token_lines(split.test.iter().map(|p| &p.summary)))?;
    Ok(())
}

struct TrainPaths<'a> {
    data: &'a Path,
    lexicon: Option<&'a Path>,
    out: &'a Path,
    init_from: Option<&'a Path>,
    embeddings: Option<&'a Path>,
    log: Option<&'a Path>,
}

fn load_split(data: &Path, name: &str, vocab: &Vocabulary) -> Result<Vec<EncodedPair>> {
    let path = data.join(name);
    parse_encoded(&read(&path)?, vocab.len()).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn run_train(config: &TrainConfig, paths: &TrainPaths<'_>) -> Result<()> {
    let vocab_path = paths.data.join(VOCAB_FILE);
    let vocab = Vocabulary::parse(&read(&vocab_path)?).map_err(|e| CliError::Data(format!("{}: {e}", vocab_path.display())))?;
    let train = load_split(paths.data, TRAIN_FILE, &vocab)?;
    let dev = load_split(paths.data, DEV_FILE, &vocab)?;
    let lexicon = match paths.lexicon {
        Some(p) => Some(Lexicon::load(p)?),
        None => None,
    };

    let mut start = if config.mode == Mode::Rhtd {
        let init = paths.init_from.ok_or_else(|| {
            CliError::Usage("--mode rhtd requires --init-from <htd checkpoint> (rhtd starts from a trained htd model)".into())
        })?;
        let htd = Checkpoint::load(init)?;
        if let Some(lex) = &lexicon {
            if htd.lexicon.as_ref() != Some(lex) {
                return Err(CliError::Incompatible(
                    "--lexicon differs from the lexicon stored in the htd checkpoint".into(),
                ));
            }
        }
        init_rhtd_from_htd(&htd, config, &vocab)?
    } else {
        if paths.init_from.is_some() {
            return Err(CliError::Usage(format!("--init-from is only used with --mode rhtd, not {}", config.mode)));
        }
        if config.mode.is_typed() && lexicon.is_none() {
            return Err(CliError::Usage(format!("--mode {} requires --lexicon", config.mode)));
        }
        let lexicon = if config.mode.is_typed() { lexicon } else { None };
        Checkpoint::fresh(config, vocab, lexicon)?
    };
    if let Some(path) = paths.embeddings {
        let loaded = start.params.load_pretrained_embeddings(&read(path)?, &start.vocab)?;
        log::info!("loaded {loaded} pretrained embedding rows");
    }

    let outcome = train_from(start, &train, &dev)?;
    let mut log_text = String::from(LOG_HEADER);
    log_text.push('\n');
    for e in &outcome.log {
        log_text.push_str(&e.to_string());
        log_text.push('\n');
    }
    match paths.log {
        Some(p) => write(p, &log_text)?,
        None => print!("{log_text}"),
    }
    outcome.best.save(paths.out)?;
    log::info!("saved epoch {} to {}", outcome.best.epoch, paths.out.display());
    Ok(())
}

fn generate(ckpt_path: &Path, input: &Path, out: &Path, max_len: Option<usize>) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let types = ckpt.typed_vocabulary();
    let sources: Vec<EncodedPair> = read(input)?
        .lines()
        .map(|line| encode_source(&tokenize(line), &ckpt.vocab))
        .collect();
    if let Some(i) = sources.iter().position(|p| p.source.is_empty()) {
        return Err(CliError::Data(format!("{}: line {} is empty", input.display(), i + 1)));
    }
    let max_len = max_len.unwrap_or(ckpt.config.max_decode_len);
    let decoded = decode_all(&ckpt.params, &types, &sources, max_len)?;
    let mut text = String::new();
    for (ids, pair) in decoded.iter().zip(&sources) {
        let words: Vec<&str> = ids
            .iter()
            .map(|&id| pair.surface(id, &ckpt.vocab).expect("decoded ids lie in the extended vocabulary"))
            .collect();
        text.push_str(&words.join(" "));
        text.push('\n');
    }
    write(out, text)
}

fn evaluate(candidates: &Path, references: &Path, out: Option<&Path>) -> Result<()> {
    let split = |text: String| -> Vec<Vec<String>> {
        text.lines()
            .map(|l| l.split_whitespace().map(str::to_owned).collect())
            .collect()
    };
    let cands = split(read(candidates)?);
    let refs = split(read(references)?);
    if cands.len() != refs.len() {
        return Err(CliError::Data(format!(
            "{} has {} lines but {} has {}",
            candidates.display(),
            cands.len(),
            references.display(),
            refs.len()
        )));
    }
    let pairs: Vec<(Vec<String>, Vec<String>)> = cands.into_iter().zip(refs).collect();
    let report = corpus_rouge(&pairs)?.to_string();
    print!("{report}");
    if let Some(p) = out {
        write(p, &report)?;
    }
    Ok(())
}
