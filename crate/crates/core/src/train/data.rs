//! Corpus ingestion.
//!
//! Sentence and document corpora are UTF-8 TSV, `label<TAB>tokens`, with
//! document sentences separated by ` ||| `. Pair corpora are
//! `label<TAB>premise<TAB>hypothesis`. Tokens are split on whitespace.

use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TaskKind;
use crate::error::{Error, Result};
use crate::model::{ModelInput, Vocabulary};

pub const SENTENCE_SEPARATOR: &str = "|||";

/// Tokenized example before vocabulary lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RawInput {
    Sentence(Vec<String>),
    Document(Vec<Vec<String>>),
    Pair(Vec<String>, Vec<String>),
}

impl RawInput {
    pub fn tokens(&self) -> Box<dyn Iterator<Item = &str> + '_> {
        match self {
            RawInput::Sentence(t) => Box::new(t.iter().map(String::as_str)),
            RawInput::Document(s) => Box::new(s.iter().flatten().map(String::as_str)),
            RawInput::Pair(p, h) => Box::new(p.iter().chain(h).map(String::as_str)),
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            RawInput::Sentence(t) => t.is_empty(),
            RawInput::Document(s) => s.iter().all(Vec::is_empty),
            RawInput::Pair(p, h) => p.is_empty() || h.is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawExample {
    pub label: String,
    pub input: RawInput,
}

fn split_tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Parses one corpus. Blank lines and examples left without tokens are
/// skipped.
pub fn parse_corpus<R: BufRead>(reader: R, task: TaskKind) -> Result<Vec<RawExample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let err = |msg: String| Error::Parse { line: i + 1, msg };
        let label = fields[0].trim().to_string();
        if label.is_empty() {
            return Err(err("empty label".into()));
        }
        let input = match task {
            TaskKind::Sentence | TaskKind::Synthetic => {
                if fields.len() != 2 {
                    return Err(err(format!("expected 2 tab-separated fields, got {}", fields.len())));
                }
                RawInput::Sentence(split_tokens(fields[1]))
            }
            TaskKind::Document => {
                if fields.len() != 2 {
                    return Err(err(format!("expected 2 tab-separated fields, got {}", fields.len())));
                }
                let sentences: Vec<Vec<String>> = fields[1]
                    .split(SENTENCE_SEPARATOR)
                    .map(split_tokens)
                    .filter(|s| !s.is_empty())
                    .collect();
                RawInput::Document(sentences)
            }
            TaskKind::Pair => {
                if fields.len() != 3 {
                    return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
                }
                RawInput::Pair(split_tokens(fields[1]), split_tokens(fields[2]))
            }
        };
        if !input.is_empty() {
            out.push(RawExample { label, input });
        }
    }
    Ok(out)
}

pub fn read_corpus(path: &Path, task: TaskKind) -> Result<Vec<RawExample>> {
    let file = std::fs::File::open(path)?;
    parse_corpus(std::io::BufReader::new(file), task)
}

/// Label names in class-id order. All-integer labels map to themselves
/// (class count = max + 1); anything else is sorted lexicographically.
pub fn label_set(examples: &[RawExample]) -> Vec<String> {
    let names: BTreeSet<&str> = examples.iter().map(|e| e.label.as_str()).collect();
    let ints: Option<Vec<usize>> = names.iter().map(|s| s.parse::<usize>().ok()).collect();
    match ints {
        Some(ids) if !ids.is_empty() => {
            let n = ids.iter().max().copied().unwrap_or(0) + 1;
            (0..n.max(2)).map(|i| i.to_string()).collect()
        }
        _ => names.into_iter().map(str::to_string).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub input: ModelInput,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub task: TaskKind,
    pub examples: Vec<Example>,
    pub vocab: Vocabulary,
    pub labels: Vec<String>,
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Maps raw examples through an existing vocabulary and label set.
    pub fn from_raw(task: TaskKind, raw: &[RawExample], vocab: &Vocabulary, labels: &[String]) -> Result<Self> {
        let mut examples = Vec::with_capacity(raw.len());
        for (i, r) in raw.iter().enumerate() {
            let label = labels.iter().position(|l| *l == r.label).ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("label {:?} not in the training label set", r.label),
            })?;
            let input = match &r.input {
                RawInput::Sentence(t) => ModelInput::Sentence(vocab.encode(t)),
                RawInput::Document(s) => ModelInput::Document(s.iter().map(|t| vocab.encode(t)).collect()),
                RawInput::Pair(p, h) => ModelInput::Pair {
                    premise: vocab.encode(p),
                    hypothesis: vocab.encode(h),
                },
            };
            examples.push(Example { input, label });
        }
        Ok(Dataset {
            task,
            examples,
            vocab: vocab.clone(),
            labels: labels.to_vec(),
        })
    }

    /// Builds vocabulary and labels from `train`, then maps every split.
    pub fn build_splits(
        task: TaskKind,
        train: &[RawExample],
        others: &[&[RawExample]],
        min_count: usize,
    ) -> Result<(Dataset, Vec<Dataset>)> {
        if train.is_empty() {
            return Err(Error::InvalidConfig("training corpus has no examples".into()));
        }
        let vocab = Vocabulary::build(train.iter().flat_map(|e| e.input.tokens()), min_count);
        let labels = label_set(train);
        if labels.len() < 2 {
            return Err(Error::InvalidConfig("training corpus needs at least two labels".into()));
        }
        let tr = Dataset::from_raw(task, train, &vocab, &labels)?;
        let rest = others
            .iter()
            .map(|o| Dataset::from_raw(task, o, &vocab, &labels))
            .collect::<Result<Vec<_>>>()?;
        Ok((tr, rest))
    }
}
