//! Classifiers for sentences, documents and sentence pairs.
//!
//! Every architecture is embed → fuse → aggregate → feed-forward head, with
//! an exact hand-written backward. Documents nest the word pipeline under a
//! second encoder and aggregator over sentence vectors; pairs encode both
//! sides with shared weights and combine them as `[p; h; |p − h|; p ∘ h]`.

pub mod aggregation;
pub mod embedding;
pub mod encoder;
pub mod head;
pub mod params;

use serde::{Deserialize, Serialize};

use crate::adjacency::{AdjacencyMatrix, ScorerActivation};
use crate::aggregators::AggregationWeights;
use crate::eigencentrality::{EigenPair, PowerConfig};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

pub use aggregation::{AggCache, AggregationLayer, AggregatorKind};
pub use embedding::{load_pretrained, EmbeddingTable, Vocabulary, PAD, UNK};
pub use encoder::{EncoderCache, EncoderKind, FusionEncoder, HiddenStates};
pub use head::{ClassifierHead, HeadCache};
pub use params::{Gradients, Param, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Flat,
    Hierarchical,
    Pair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub vocab_size: usize,
    pub n_classes: usize,
    pub embedding_size: usize,
    pub encoder: EncoderKind,
    /// Per direction for the Elman encoder.
    pub encoder_hidden_units: usize,
    pub connectivity_hidden_units: usize,
    pub head_hidden_units: usize,
    pub aggregator: AggregatorKind,
    pub dropout_rate: f64,
    pub power: PowerConfig,
    #[serde(default)]
    pub scorer_activation: ScorerActivation,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::InvalidConfig("vocabulary needs at least the pad and unk ids".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::InvalidConfig("need at least two classes".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!("dropout_rate {} not in [0, 1)", self.dropout_rate)));
        }
        self.power.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelInput {
    Sentence(Vec<usize>),
    Document(Vec<Vec<usize>>),
    Pair { premise: Vec<usize>, hypothesis: Vec<usize> },
}

impl ModelInput {
    /// Number of tokens, pads included.
    pub fn len(&self) -> usize {
        match self {
            ModelInput::Sentence(t) => t.len(),
            ModelInput::Document(s) => s.iter().map(Vec::len).sum(),
            ModelInput::Pair { premise, hypothesis } => premise.len() + hypothesis.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Longest single token sequence fed to one encoder call.
    pub fn max_sequence_len(&self) -> usize {
        match self {
            ModelInput::Sentence(t) => t.len(),
            ModelInput::Document(s) => s.iter().map(Vec::len).max().unwrap_or(0).max(s.len()),
            ModelInput::Pair { premise, hypothesis } => premise.len().max(hypothesis.len()),
        }
    }
}

/// Inverted dropout mask, `None` when nothing is dropped.
pub(crate) fn dropout_mask(n: usize, rate: f64, rng: &mut Rng) -> Option<Vec<f64>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some((0..n).map(|_| if rng.bernoulli(rate) { 0.0 } else { keep }).collect())
}

#[derive(Debug, Clone)]
struct SeqCache {
    enc: EncoderCache,
    agg: AggCache,
}

#[derive(Debug, Clone)]
struct WordCache {
    /// Positions in the original input that were kept (non-pad).
    positions: Vec<usize>,
    ids: Vec<usize>,
    emb_mask: Option<Vec<f64>>,
    seq: SeqCache,
}

#[derive(Debug, Clone)]
enum Cache {
    Flat(WordCache),
    Hierarchical { words: Vec<WordCache>, outer: SeqCache },
    Pair { p: WordCache, h: WordCache, rp: Vec<f64>, rh: Vec<f64> },
}

/// Result of a forward pass, holding what the backward pass needs.
#[derive(Debug, Clone)]
pub struct Forward {
    pub probs: Vec<f64>,
    cache: Cache,
    head: HeadCache,
}

impl Forward {
    /// Every eigen aggregation performed, innermost first.
    pub fn eigen_results(&self) -> Vec<(&AdjacencyMatrix, &EigenPair)> {
        let words: Vec<&WordCache> = match &self.cache {
            Cache::Flat(w) => vec![w],
            Cache::Hierarchical { words, .. } => words.iter().collect(),
            Cache::Pair { p, h, .. } => vec![p, h],
        };
        let mut out: Vec<_> = words.iter().filter_map(|w| w.seq.agg.eigen()).collect();
        if let Cache::Hierarchical { outer, .. } = &self.cache {
            out.extend(outer.agg.eigen());
        }
        out
    }

    pub fn power_steps(&self) -> Vec<usize> {
        self.eigen_results().iter().map(|(_, e)| e.steps_taken).collect()
    }

    pub fn predicted(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Word-level aggregation of one sentence, for graph export.
#[derive(Debug, Clone)]
pub struct SentenceGraph {
    /// Input positions that survived pad removal, one per weight.
    pub positions: Vec<usize>,
    pub weights: AggregationWeights,
    pub adjacency: AdjacencyMatrix,
    pub eig: EigenPair,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loss {
    pub value: f64,
    pub clamped: bool,
}

pub const PROB_FLOOR: f64 = 1e-12;

/// Negative log-probability of `label`, with the probability clamped at
/// [`PROB_FLOOR`].
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<Loss> {
    let p = *probs
        .get(label)
        .ok_or_else(|| Error::dims("cross_entropy", format!("label < {}", probs.len()), label))?;
    let clamped = !(p >= PROB_FLOOR);
    Ok(Loss {
        value: -p.max(PROB_FLOOR).ln(),
        clamped,
    })
}

/// Gradient of [`cross_entropy`] with respect to the softmax logits.
pub fn cross_entropy_grad(probs: &[f64], label: usize) -> Vec<f64> {
    let mut g = probs.to_vec();
    g[label] -= 1.0;
    g
}

/// `[p; h; |p − h|; p ∘ h]`.
pub fn nli_combine(rp: &[f64], rh: &[f64]) -> Result<Vec<f64>> {
    if rp.len() != rh.len() {
        return Err(Error::dims("nli_combine", rp.len(), rh.len()));
    }
    let mut r = Vec::with_capacity(4 * rp.len());
    r.extend_from_slice(rp);
    r.extend_from_slice(rh);
    r.extend(rp.iter().zip(rh).map(|(a, b)| (a - b).abs()));
    r.extend(rp.iter().zip(rh).map(|(a, b)| a * b));
    Ok(r)
}

/// Backward of [`nli_combine`]; the derivative of `|x|` at 0 is taken as 0.
pub fn nli_combine_backward(rp: &[f64], rh: &[f64], cotangent: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = rp.len();
    let mut gp = cotangent[..d].to_vec();
    let mut gh = cotangent[d..2 * d].to_vec();
    for i in 0..d {
        let diff = rp[i] - rh[i];
        let s = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        gp[i] += s * cotangent[2 * d + i] + rh[i] * cotangent[3 * d + i];
        gh[i] += -s * cotangent[2 * d + i] + rp[i] * cotangent[3 * d + i];
    }
    (gp, gh)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub embedding: EmbeddingTable,
    pub encoder: FusionEncoder,
    pub aggregator: AggregationLayer,
    pub outer: Option<(FusionEncoder, AggregationLayer)>,
    pub head: ClassifierHead,
}

/// Per-example loss, prediction and gradients.
#[derive(Debug, Clone)]
pub struct ExampleGrad {
    pub loss: Loss,
    pub predicted: usize,
    pub power_steps: Vec<usize>,
    pub grads: Gradients,
}

impl Model {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let embedding = EmbeddingTable::new(&mut store, "embedding", spec.vocab_size, spec.embedding_size, &mut rng)?;
        Self::assemble(spec, store, embedding, &mut rng)
    }

    /// Like [`Model::new`] with a caller-supplied embedding table.
    pub fn with_embeddings(spec: ModelSpec, vectors: Matrix, seed: u64) -> Result<Self> {
        spec.validate()?;
        if vectors.shape() != (spec.vocab_size, spec.embedding_size) {
            return Err(Error::dims(
                "Model::with_embeddings",
                format!("{}x{}", spec.vocab_size, spec.embedding_size),
                format!("{}x{}", vectors.rows(), vectors.cols()),
            ));
        }
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let embedding = EmbeddingTable::from_matrix(&mut store, "embedding", vectors)?;
        Self::assemble(spec, store, embedding, &mut rng)
    }

    fn assemble(spec: ModelSpec, mut store: ParamStore, embedding: EmbeddingTable, rng: &mut Rng) -> Result<Self> {
        let encoder = FusionEncoder::new(
            &mut store,
            "encoder",
            spec.encoder,
            spec.embedding_size,
            spec.encoder_hidden_units,
            rng,
        )?;
        let dh = encoder.output_dim();
        let aggregator = AggregationLayer::new(
            &mut store,
            "aggregator",
            spec.aggregator,
            dh,
            spec.connectivity_hidden_units,
            spec.scorer_activation,
            rng,
        )?;
        let outer = match spec.architecture {
            Architecture::Hierarchical => {
                let hidden = match spec.encoder {
                    EncoderKind::IdentityProjection => dh,
                    EncoderKind::BidirectionalElman => dh / 2,
                };
                let enc = FusionEncoder::new(&mut store, "outer_encoder", spec.encoder, dh, hidden, rng)?;
                let agg = AggregationLayer::new(
                    &mut store,
                    "outer_aggregator",
                    spec.aggregator,
                    enc.output_dim(),
                    spec.connectivity_hidden_units,
                    spec.scorer_activation,
                    rng,
                )?;
                Some((enc, agg))
            }
            _ => None,
        };
        let head_in = match spec.architecture {
            Architecture::Flat => dh,
            Architecture::Hierarchical => outer.as_ref().map(|(e, _)| e.output_dim()).unwrap_or(dh),
            Architecture::Pair => 4 * dh,
        };
        let head = ClassifierHead::new(
            &mut store,
            head_in,
            spec.head_hidden_units,
            spec.n_classes,
            spec.dropout_rate,
            rng,
        )?;
        Ok(Model {
            spec,
            store,
            embedding,
            encoder,
            aggregator,
            outer,
            head,
        })
    }

    /// Rebuilds a model around a saved parameter store; names and shapes must
    /// match what `spec` produces.
    pub fn from_store(spec: ModelSpec, store: ParamStore) -> Result<Self> {
        let mut model = Model::new(spec, 0)?;
        if store.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                model.store.len(),
                store.len()
            )));
        }
        for (want, got) in model.store.params().iter().zip(store.params()) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    got.name,
                    got.value.shape(),
                    want.name,
                    want.value.shape()
                )));
            }
        }
        model.store = store;
        Ok(model)
    }

    fn trunc_k(&self) -> usize {
        self.spec.power.grad_steps
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        let ok = matches!(
            (self.spec.architecture, input),
            (Architecture::Flat, ModelInput::Sentence(_))
                | (Architecture::Hierarchical, ModelInput::Document(_))
                | (Architecture::Pair, ModelInput::Pair { .. })
        );
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "input kind does not match the {:?} architecture",
                self.spec.architecture
            )))
        }
    }

    fn encode_words(&self, ids: &[usize], mut rng: Option<&mut Rng>) -> Result<(Vec<f64>, WordCache)> {
        let positions: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] != PAD).collect();
        if positions.is_empty() {
            return Err(Error::EmptySequence);
        }
        let kept: Vec<usize> = positions.iter().map(|&i| ids[i]).collect();
        let mut x = self.embedding.lookup(&self.store, &kept)?;
        let emb_mask = rng
            .as_mut()
            .and_then(|r| dropout_mask(x.data().len(), self.spec.dropout_rate, r));
        if let Some(m) = &emb_mask {
            for (v, k) in x.data_mut().iter_mut().zip(m) {
                *v *= k;
            }
        }
        let (h, enc) = self.encoder.forward(&self.store, &x)?;
        let (v, agg) = self.aggregator.forward(&self.store, &h, &self.spec.power)?;
        Ok((
            v,
            WordCache {
                positions,
                ids: kept,
                emb_mask,
                seq: SeqCache { enc, agg },
            },
        ))
    }

    fn backward_words(&self, cache: &WordCache, cotangent: &[f64], grads: &mut Gradients) -> Result<()> {
        let dh = self
            .aggregator
            .backward(&self.store, &cache.seq.agg, cotangent, self.trunc_k(), grads)?;
        let mut dx = self.encoder.backward(&self.store, &cache.seq.enc, &dh, grads);
        if let Some(m) = &cache.emb_mask {
            for (v, k) in dx.data_mut().iter_mut().zip(m) {
                *v *= k;
            }
        }
        self.embedding.backward(grads, &cache.ids, &dx);
        Ok(())
    }

    /// Forward pass. Dropout is active only when `rng` is given.
    pub fn forward(&self, input: &ModelInput, mut rng: Option<&mut Rng>) -> Result<Forward> {
        self.check_input(input)?;
        let (rep, cache) = match input {
            ModelInput::Sentence(ids) => {
                let (v, w) = self.encode_words(ids, rng.as_deref_mut())?;
                (v, Cache::Flat(w))
            }
            ModelInput::Document(sentences) => {
                let mut words = Vec::new();
                let mut vecs = Vec::new();
                for s in sentences {
                    if s.iter().all(|&t| t == PAD) {
                        continue;
                    }
                    let (v, w) = self.encode_words(s, rng.as_deref_mut())?;
                    vecs.push(v);
                    words.push(w);
                }
                if vecs.is_empty() {
                    return Err(Error::EmptySequence);
                }
                let x = Matrix::from_columns(&vecs)?;
                let (enc, agg) = self.outer.as_ref().expect("hierarchical model has an outer stage");
                let (h, ec) = enc.forward(&self.store, &x)?;
                let (v, ac) = agg.forward(&self.store, &h, &self.spec.power)?;
                (
                    v,
                    Cache::Hierarchical {
                        words,
                        outer: SeqCache { enc: ec, agg: ac },
                    },
                )
            }
            ModelInput::Pair { premise, hypothesis } => {
                let (rp, p) = self.encode_words(premise, rng.as_deref_mut())?;
                let (rh, h) = self.encode_words(hypothesis, rng.as_deref_mut())?;
                (nli_combine(&rp, &rh)?, Cache::Pair { p, h, rp, rh })
            }
        };
        let (probs, head) = self.head.forward(&self.store, &rep, rng)?;
        if !probs.iter().all(|p| p.is_finite()) {
            return Err(Error::Divergence("non-finite class probabilities".into()));
        }
        Ok(Forward { probs, cache, head })
    }

    /// Backward of `cross_entropy(forward.probs, label)`.
    pub fn backward(&self, fwd: &Forward, label: usize) -> Result<Gradients> {
        if label >= self.spec.n_classes {
            return Err(Error::dims("Model::backward", format!("label < {}", self.spec.n_classes), label));
        }
        let mut grads = Gradients::for_store(&self.store);
        let dlogits = cross_entropy_grad(&fwd.probs, label);
        let drep = self.head.backward(&self.store, &fwd.head, &dlogits, &mut grads);
        match &fwd.cache {
            Cache::Flat(w) => self.backward_words(w, &drep, &mut grads)?,
            Cache::Hierarchical { words, outer } => {
                let (enc, agg) = self.outer.as_ref().expect("hierarchical model has an outer stage");
                let dh = agg.backward(&self.store, &outer.agg, &drep, self.trunc_k(), &mut grads)?;
                let dx = enc.backward(&self.store, &outer.enc, &dh, &mut grads);
                for (j, w) in words.iter().enumerate() {
                    self.backward_words(w, &dx.col(j), &mut grads)?;
                }
            }
            Cache::Pair { p, h, rp, rh } => {
                let (gp, gh) = nli_combine_backward(rp, rh, &drep);
                self.backward_words(p, &gp, &mut grads)?;
                self.backward_words(h, &gh, &mut grads)?;
            }
        }
        Ok(grads)
    }

    pub fn loss_and_grad(&self, input: &ModelInput, label: usize, rng: Option<&mut Rng>) -> Result<ExampleGrad> {
        let fwd = self.forward(input, rng)?;
        let loss = cross_entropy(&fwd.probs, label)?;
        let grads = self.backward(&fwd, label)?;
        Ok(ExampleGrad {
            loss,
            predicted: fwd.predicted(),
            power_steps: fwd.power_steps(),
            grads,
        })
    }

    /// Class probabilities without dropout.
    pub fn predict(&self, input: &ModelInput) -> Result<Vec<f64>> {
        Ok(self.forward(input, None)?.probs)
    }

    /// Word graph of one token sequence under the word-level aggregator.
    pub fn sentence_graph(&self, ids: &[usize]) -> Result<SentenceGraph> {
        if self.spec.aggregator != AggregatorKind::Eigen {
            return Err(Error::InvalidConfig(format!(
                "graph export needs the eigen aggregator, model uses {}",
                self.spec.aggregator
            )));
        }
        let (_, w) = self.encode_words(ids, None)?;
        match w.seq.agg {
            AggCache::Eigen { a, eig, weights, .. } => Ok(SentenceGraph {
                positions: w.positions,
                weights,
                adjacency: a,
                eig,
            }),
            _ => unreachable!("eigen aggregator yields an eigen cache"),
        }
    }
}

/// Flat-architecture class probabilities.
pub fn classify_flat(model: &Model, tokens: &[usize]) -> Result<Vec<f64>> {
    model.predict(&ModelInput::Sentence(tokens.to_vec()))
}

/// Hierarchical-architecture class probabilities.
pub fn classify_hierarchical(model: &Model, document: &[Vec<usize>]) -> Result<Vec<f64>> {
    model.predict(&ModelInput::Document(document.to_vec()))
}

/// Pair-architecture class probabilities.
pub fn classify_pair(model: &Model, premise: &[usize], hypothesis: &[usize]) -> Result<Vec<f64>> {
    model.predict(&ModelInput::Pair {
        premise: premise.to_vec(),
        hypothesis: hypothesis.to_vec(),
    })
}
