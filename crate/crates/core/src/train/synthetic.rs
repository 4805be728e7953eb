//! Seeded keyword-spotting task.
//!
//! Class `c` owns keyword token `kw{c}`. An example of length `L` holds
//! `max(1, round((1 − distractor_rate)·L))` copies of its keyword, the rest
//! drawn uniformly from the distractor tokens, in random order.

use serde::{Deserialize, Serialize};

use super::config::TaskKind;
use super::data::{Dataset, Example};
use crate::error::{Error, Result};
use crate::model::{ModelInput, Vocabulary};
use crate::numerics::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTask {
    pub n_classes: usize,
    /// Keywords plus distractors, excluding the pad and unk ids.
    pub vocab: usize,
    pub distractor_rate: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub train_size: usize,
    pub dev_size: usize,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        SyntheticTask {
            n_classes: 4,
            vocab: 200,
            distractor_rate: 0.9,
            min_len: 10,
            max_len: 30,
            train_size: 1000,
            dev_size: 300,
        }
    }
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::InvalidConfig("synthetic task needs at least two classes".into()));
        }
        if self.vocab < self.n_classes + usize::from(self.distractor_rate > 0.0) {
            return Err(Error::InvalidConfig("synthetic vocab too small for keywords and distractors".into()));
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(Error::InvalidConfig("distractor_rate must be in [0, 1]".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::InvalidConfig("need 1 <= min_len <= max_len".into()));
        }
        Ok(())
    }

    /// Keywords first, then distractors.
    pub fn vocabulary(&self) -> Vocabulary {
        let kw = (0..self.n_classes).map(|c| format!("kw{c}"));
        let dis = (self.n_classes..self.vocab).map(|i| format!("w{i}"));
        Vocabulary::from_tokens(kw.chain(dis))
    }

    pub fn keyword_copies(&self, len: usize) -> usize {
        (((1.0 - self.distractor_rate) * len as f64).round() as usize).clamp(1, len)
    }

    /// `n` examples; identical for identical `(self, seed)`.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Dataset> {
        self.validate()?;
        let vocab = self.vocabulary();
        let kw0 = vocab.id("kw0");
        let n_distractors = self.vocab - self.n_classes;
        let first_distractor = kw0 + self.n_classes;
        let mut rng = Rng::new(seed);
        let mut examples = Vec::with_capacity(n);
        for _ in 0..n {
            let label = rng.below(self.n_classes);
            let len = self.min_len + rng.below(self.max_len - self.min_len + 1);
            let k = if n_distractors == 0 { len } else { self.keyword_copies(len) };
            let mut tokens = vec![kw0 + label; k];
            for _ in k..len {
                tokens.push(first_distractor + rng.below(n_distractors));
            }
            rng.shuffle(&mut tokens);
            examples.push(Example {
                input: ModelInput::Sentence(tokens),
                label,
            });
        }
        Ok(Dataset {
            task: TaskKind::Synthetic,
            examples,
            vocab,
            labels: (0..self.n_classes).map(|c| c.to_string()).collect(),
        })
    }

    /// Train and dev splits from independent streams of `seed`.
    pub fn splits(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        let train = self.generate(self.train_size, Rng::derive(seed, &[1]).next_u64())?;
        let dev = self.generate(self.dev_size, Rng::derive(seed, &[2]).next_u64())?;
        Ok((train, dev))
    }
}
