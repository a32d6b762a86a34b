//! Aspect and opinion lexicon mining over dependency parses.
//!
//! Four propagation rules link aspect nouns and opinion adjectives:
//!
//! | rule | relation | endpoints | propagates                 |
//! |------|----------|-----------|----------------------------|
//! | R1   | `nn`     | NN, NN    | aspect → aspect            |
//! | R2   | `conj`   | JJ, JJ    | opinion → opinion          |
//! | R3   | `nsubj`  | NN, JJ    | opinion ↔ aspect           |
//! | R4   | `amod`   | JJ, NN    | opinion ↔ aspect           |
//!
//! NN is `{NN, NNS}` and JJ is `{JJ, JJR, JJS}`. Edges are matched on the
//! relation and the unordered endpoint pair, so head direction conventions do
//! not matter. Each pass reads only the lexicon it was given; passes repeat
//! until nothing new is found.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{Vocabulary, RESERVED};

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, LexiconError>;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Penn Treebank part-of-speech tags, including punctuation tags.
pub const PTB_TAGS: &[&str] = &[
    "CC", "CD", "DT", "EX", "FW", "IN", "JJ", "JJR", "JJS", "LS", "MD", "NN", "NNS", "NNP", "NNPS",
    "PDT", "POS", "PRP", "PRP$", "RB", "RBR", "RBS", "RP", "SYM", "TO", "UH", "VB", "VBD", "VBG",
    "VBN", "VBP", "VBZ", "WDT", "WP", "WP$", "WRB", ".", ",", ":", "``", "''", "-LRB-", "-RRB-",
    "#", "$", "HYPH", "NFP", "ADD", "AFX", "GW", "XX",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedToken {
    pub form: String,
    pub pos: String,
    /// 1-based index of the governing token, 0 for the root.
    pub head: usize,
    pub deprel: String,
}

impl ParsedToken {
    fn is_noun(&self) -> bool {
        matches!(self.pos.as_str(), "NN" | "NNS")
    }

    fn is_adjective(&self) -> bool {
        matches!(self.pos.as_str(), "JJ" | "JJR" | "JJS")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedSentence {
    pub tokens: Vec<ParsedToken>,
}

/// Reads sentences of tab-separated `index form pos head deprel` lines,
/// separated by blank lines.
pub fn parse_parsed_corpus(text: &str) -> Result<Vec<ParsedSentence>> {
    let mut sentences = Vec::new();
    let mut current = ParsedSentence::default();
    // Line number of each token's line, for head validation at sentence end.
    let mut lines_of_current = Vec::new();

    let finish = |sent: &mut ParsedSentence, lines: &mut Vec<usize>, out: &mut Vec<ParsedSentence>| -> Result<()> {
        let n = sent.tokens.len();
        for (tok, &line) in sent.tokens.iter().zip(lines.iter()) {
            if tok.head > n {
                return Err(LexiconError::Parse {
                    line,
                    message: format!("head {} outside sentence of {n} tokens", tok.head),
                });
            }
        }
        if n > 0 {
            out.push(std::mem::take(sent));
        }
        lines.clear();
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            finish(&mut current, &mut lines_of_current, &mut sentences)?;
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != 5 {
            return Err(LexiconError::Parse {
                line,
                message: format!("expected 5 tab-separated columns, got {}", cols.len()),
            });
        }
        let parse_index = |s: &str, what: &str| {
            s.trim().parse::<usize>().map_err(|_| LexiconError::Parse {
                line,
                message: format!("invalid {what} {s:?}"),
            })
        };
        let index = parse_index(cols[0], "token index")?;
        if index != current.tokens.len() + 1 {
            return Err(LexiconError::Parse {
                line,
                message: format!("expected token index {}, got {index}", current.tokens.len() + 1),
            });
        }
        let pos = cols[2].trim();
        if !PTB_TAGS.contains(&pos) {
            return Err(LexiconError::Parse {
                line,
                message: format!("unknown POS tag {pos:?}"),
            });
        }
        let head = parse_index(cols[3], "head index")?;
        current.tokens.push(ParsedToken {
            form: cols[1].trim().to_lowercase(),
            pos: pos.to_owned(),
            head,
            deprel: cols[4].trim().to_owned(),
        });
        lines_of_current.push(line);
    }
    finish(&mut current, &mut lines_of_current, &mut sentences)?;
    Ok(sentences)
}

pub fn load_parsed_corpus(path: &Path) -> Result<Vec<ParsedSentence>> {
    parse_parsed_corpus(&read(path)?)
}

/// One word per line; lines starting with `;` and blank lines are ignored.
pub fn parse_seed_opinions(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with(';'))
        .map(str::to_lowercase)
        .collect()
}

pub fn load_seed_opinions(path: &Path) -> Result<BTreeSet<String>> {
    Ok(parse_seed_opinions(&read(path)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WordType {
    Aspect = 0,
    Opinion = 1,
    Context = 2,
}

impl WordType {
    pub const ALL: [WordType; 3] = [WordType::Aspect, WordType::Opinion, WordType::Context];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn letter(self) -> char {
        match self {
            WordType::Aspect => 'A',
            WordType::Opinion => 'O',
            WordType::Context => 'C',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c {
            'A' => Some(WordType::Aspect),
            'O' => Some(WordType::Opinion),
            'C' => Some(WordType::Context),
            _ => None,
        }
    }
}

impl fmt::Display for WordType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            WordType::Aspect => "aspect",
            WordType::Opinion => "opinion",
            WordType::Context => "context",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lexicon {
    pub aspects: BTreeSet<String>,
    pub opinions: BTreeSet<String>,
}

impl Lexicon {
    /// Opinion membership wins over aspect membership.
    pub fn word_type(&self, word: &str) -> WordType {
        if self.opinions.contains(word) {
            WordType::Opinion
        } else if self.aspects.contains(word) {
            WordType::Aspect
        } else {
            WordType::Context
        }
    }

    /// Drops aspects that are also opinions.
    pub fn resolve_conflicts(&mut self) {
        let opinions = &self.opinions;
        self.aspects.retain(|w| !opinions.contains(w));
    }

    /// `word<TAB>A|O` lines sorted by word.
    pub fn to_file_string(&self) -> String {
        let mut entries: BTreeMap<&str, char> = BTreeMap::new();
        for w in &self.aspects {
            entries.insert(w, 'A');
        }
        for w in &self.opinions {
            entries.insert(w, 'O');
        }
        entries.into_iter().map(|(w, t)| format!("{w}\t{t}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = Lexicon::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| LexiconError::Parse {
                line: i + 1,
                message,
            };
            let (word, tag) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected word<TAB>A|O".into()))?;
            let word = word.trim().to_lowercase();
            match tag.trim() {
                "A" => lex.aspects.insert(word),
                "O" => lex.opinions.insert(word),
                other => return Err(parse_err(format!("unknown type {other:?}"))),
            };
        }
        lex.resolve_conflicts();
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read(path)?)
    }
}

fn is_nn_relation(rel: &str) -> bool {
    rel == "nn" || rel == "compound"
}

/// Applies R1-R4 once over every dependency edge. Returns the aspects and
/// opinions found that are not already in `lexicon`.
pub fn propagate_step(corpus: &[ParsedSentence], lexicon: &Lexicon) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut new_aspects = BTreeSet::new();
    let mut new_opinions = BTreeSet::new();
    let is_aspect = |t: &ParsedToken| lexicon.aspects.contains(&t.form);
    let is_opinion = |t: &ParsedToken| lexicon.opinions.contains(&t.form);

    for sentence in corpus {
        for dep in &sentence.tokens {
            if dep.head == 0 {
                continue;
            }
            let gov = &sentence.tokens[dep.head - 1];
            let rel = dep.deprel.as_str();
            if is_nn_relation(rel) {
                if dep.is_noun() && gov.is_noun() {
                    if is_aspect(dep) {
                        new_aspects.insert(gov.form.clone());
                    }
                    if is_aspect(gov) {
                        new_aspects.insert(dep.form.clone());
                    }
                }
            } else if rel == "conj" {
                if dep.is_adjective() && gov.is_adjective() {
                    if is_opinion(dep) {
                        new_opinions.insert(gov.form.clone());
                    }
                    if is_opinion(gov) {
                        new_opinions.insert(dep.form.clone());
                    }
                }
            } else if rel == "nsubj" || rel == "amod" {
                let (noun, adj) = if dep.is_noun() && gov.is_adjective() {
                    (dep, gov)
                } else if dep.is_adjective() && gov.is_noun() {
                    (gov, dep)
                } else {
                    continue;
                };
                if is_opinion(adj) {
                    new_aspects.insert(noun.form.clone());
                }
                if is_aspect(noun) {
                    new_opinions.insert(adj.form.clone());
                }
            }
        }
    }
    new_aspects.retain(|w| !lexicon.aspects.contains(w));
    new_opinions.retain(|w| !lexicon.opinions.contains(w));
    (new_aspects, new_opinions)
}

/// Result of running propagation to its fixpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Propagation {
    pub lexicon: Lexicon,
    /// Words added by each pass, in pass order. The final, empty pass is not
    /// recorded.
    pub passes: Vec<(BTreeSet<String>, BTreeSet<String>)>,
}

/// Seeds the opinion set with the seed words that occur in the corpus, then
/// repeats [`propagate_step`] until a pass adds nothing. Aspect/opinion
/// conflicts are resolved in favour of opinion at the end.
pub fn run_double_propagation(corpus: &[ParsedSentence], seed_opinions: &BTreeSet<String>) -> Propagation {
    let corpus_words: BTreeSet<&str> = corpus
        .iter()
        .flat_map(|s| s.tokens.iter().map(|t| t.form.as_str()))
        .collect();
    let mut lexicon = Lexicon {
        aspects: BTreeSet::new(),
        opinions: seed_opinions
            .iter()
            .filter(|w| corpus_words.contains(w.as_str()))
            .cloned()
            .collect(),
    };
    let mut passes = Vec::new();
    loop {
        let (aspects, opinions) = propagate_step(corpus, &lexicon);
        if aspects.is_empty() && opinions.is_empty() {
            break;
        }
        lexicon.aspects.extend(aspects.iter().cloned());
        lexicon.opinions.extend(opinions.iter().cloned());
        passes.push((aspects, opinions));
    }
    lexicon.resolve_conflicts();
    Propagation { lexicon, passes }
}

/// Type of every vocabulary word by id; reserved tokens are context words.
pub fn assign_word_types(vocab: &Vocabulary, lexicon: &Lexicon) -> Vec<WordType> {
    vocab
        .words()
        .iter()
        .map(|w| {
            if RESERVED.contains(&w.as_str()) {
                WordType::Context
            } else {
                lexicon.word_type(w)
            }
        })
        .collect()
}

/// Vocabulary word types plus the lexicon needed to type a pair's
/// out-of-vocabulary source words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypedVocabulary {
    types: Vec<WordType>,
    lexicon: Lexicon,
}

impl TypedVocabulary {
    pub fn new(vocab: &Vocabulary, lexicon: Lexicon) -> Self {
        Self {
            types: assign_word_types(vocab, &lexicon),
            lexicon,
        }
    }

    pub fn from_types(types: Vec<WordType>, lexicon: Lexicon) -> Self {
        Self { types, lexicon }
    }

    pub fn vocab_types(&self) -> &[WordType] {
        &self.types
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    /// Type of an extended id; `oov` lists the pair's out-of-vocabulary words
    /// in extended-id order.
    pub fn type_of(&self, id: usize, oov: &[String]) -> WordType {
        match self.types.get(id) {
            Some(&t) => t,
            None => oov
                .get(id - self.types.len())
                .map_or(WordType::Context, |w| self.lexicon.word_type(w)),
        }
    }
}
