//! Token vocabulary and embedding lookup.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Whitespace-token vocabulary. Ids 0 and 1 are reserved for padding and
/// unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from(vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()])
    }
}

impl Vocabulary {
    /// Tokens seen at least `min_count` times, most frequent first, ties
    /// broken lexicographically.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count.max(1) && *t != PAD_TOKEN && *t != UNK_TOKEN)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut all = Vocabulary::default().tokens;
        all.extend(kept.into_iter().map(|(t, _)| t.to_string()));
        Self::from(all)
    }

    /// Vocabulary of `<pad>`, `<unk>` and the given tokens in order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut all = Vocabulary::default().tokens;
        all.extend(tokens);
        Self::from(all)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(UNK_TOKEN)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

/// `vocab_size × dim` lookup table; row [`PAD`] stays zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub id: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn new(store: &mut ParamStore, name: &str, vocab_size: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        let mut vectors = rng.normal_matrix(vocab_size, dim, 1.0 / (dim as f64).sqrt());
        if vocab_size > PAD {
            vectors.row_mut(PAD).fill(0.0);
        }
        Self::from_matrix(store, name, vectors)
    }

    pub fn from_matrix(store: &mut ParamStore, name: &str, mut vectors: Matrix) -> Result<Self> {
        if vectors.rows() == 0 || vectors.cols() == 0 {
            return Err(Error::InvalidConfig("embedding table must be non-empty".into()));
        }
        vectors.row_mut(PAD).fill(0.0);
        let (vocab_size, dim) = vectors.shape();
        let id = store.add(name, vectors)?;
        store.freeze_row(id, PAD);
        Ok(EmbeddingTable { id, vocab_size, dim })
    }

    fn check(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.vocab_size) {
            Some(&id) => Err(Error::TokenOutOfRange {
                id,
                vocab_size: self.vocab_size,
            }),
            None => Ok(()),
        }
    }

    /// `dim × len(ids)` with pad columns zero, plus the validity mask.
    pub fn embed(&self, store: &ParamStore, ids: &[usize]) -> Result<(Matrix, Vec<bool>)> {
        self.check(ids)?;
        let table = store.value(self.id);
        let mut x = Matrix::zeros(self.dim, ids.len());
        for (c, &id) in ids.iter().enumerate() {
            if id != PAD {
                x.set_col(c, table.row(id));
            }
        }
        Ok((x, ids.iter().map(|&i| i != PAD).collect()))
    }

    /// Lookup without pad handling; callers have already dropped pads.
    pub(crate) fn lookup(&self, store: &ParamStore, ids: &[usize]) -> Result<Matrix> {
        self.check(ids)?;
        let table = store.value(self.id);
        let mut x = Matrix::zeros(self.dim, ids.len());
        for (c, &id) in ids.iter().enumerate() {
            x.set_col(c, table.row(id));
        }
        Ok(x)
    }

    /// Scatters column `c` of `cotangent` into row `ids[c]`.
    pub fn backward(&self, grads: &mut Gradients, ids: &[usize], cotangent: &Matrix) {
        for (c, &id) in ids.iter().enumerate() {
            if id != PAD {
                grads.add_row(self.id, id, &cotangent.col(c));
            }
        }
    }
}

/// Reads `token v1 … vd` lines into a `vocab.len() × dim` table. Rows for
/// tokens absent from the file keep seeded `N(0, 1/d)` vectors. Returns the
/// table and the number of vocabulary tokens found.
pub fn load_pretrained<R: BufRead>(reader: R, vocab: &Vocabulary, dim: usize, seed: u64) -> Result<(Matrix, usize)> {
    let mut rng = Rng::new(seed);
    let mut table = rng.normal_matrix(vocab.len(), dim, 1.0 / (dim as f64).sqrt());
    let mut hits = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(|s| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno + 1,
                    msg: format!("bad float {s:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("expected {dim} values, got {}", values.len()),
            });
        }
        if let Some(id) = vocab.get(token) {
            if id != PAD {
                table.row_mut(id).copy_from_slice(&values);
                hits += 1;
            }
        }
    }
    table.row_mut(PAD).fill(0.0);
    Ok((table, hits))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_order_and_threshold() {
        let text = "b a c a b a d";
        let v = Vocabulary::build(text.split(' '), 2);
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a", "b"]);
        assert_eq!(v.id("c"), UNK);
        assert_eq!(v.encode(&["a", "zzz"]), vec![2, UNK]);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&json).unwrap(), v);
    }

    #[test]
    fn embed_examples() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(0);
        let t = EmbeddingTable::new(&mut store, "emb", 5, 3, &mut rng).unwrap();
        let (x, mask) = t.embed(&store, &[PAD]).unwrap();
        assert_eq!(x.col(0), vec![0.0; 3]);
        assert_eq!(mask, vec![false]);

        let (x, _) = t.embed(&store, &[3, 3]).unwrap();
        assert_eq!(x.col(0), x.col(1));

        assert!(matches!(
            t.embed(&store, &[5]),
            Err(Error::TokenOutOfRange { id: 5, vocab_size: 5 })
        ));

        let mut g = Gradients::for_store(&store);
        let mut cot = Matrix::zeros(3, 2);
        cot[(1, 0)] = 1.0;
        t.backward(&mut g, &[4, 2], &cot);
        store.accumulate(&g, 1.0);
        let grad = &store.param(t.id).grad;
        let nonzero: Vec<_> = (0..5).filter(|&r| grad.row(r).iter().any(|x| *x != 0.0)).collect();
        assert_eq!(nonzero, vec![4]);
    }

    #[test]
    fn pretrained_loader() {
        let vocab = Vocabulary::from_tokens(["cat".to_string(), "dog".to_string()]);
        let text = "cat 1 2\nbird 3 4\n<pad> 9 9\n";
        let (m, hits) = load_pretrained(text.as_bytes(), &vocab, 2, 7).unwrap();
        assert_eq!(hits, 1);
        assert_eq!(m.row(2), &[1.0, 2.0]);
        assert_eq!(m.row(PAD), &[0.0, 0.0]);
        let (m2, _) = load_pretrained(text.as_bytes(), &vocab, 2, 7).unwrap();
        assert_eq!(m, m2);
        assert!(load_pretrained("cat 1\n".as_bytes(), &vocab, 2, 7).is_err());
    }
}
