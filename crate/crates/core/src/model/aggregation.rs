//! Trainable aggregation layer wrapping the strategies in [`crate::aggregators`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamId, ParamStore};
use crate::adjacency::{raw_scores, raw_scores_backward, AdjacencyMatrix, ConnectivityScorer, ScorerActivation};
use crate::aggregators::{
    aggregate, aggregate_backward_h, average_weights, eigen_aggregate_backward, eigen_weights, max_pool,
    max_pool_backward, self_attention_backward, self_attention_weights, AggregationWeights, SelfAttentionParams,
};
use crate::eigencentrality::{EigenPair, PowerConfig};
use crate::error::{Error, Result};
use crate::numerics::{column_softmax_backward, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    #[default]
    Eigen,
    SelfAttn,
    Max,
    Avg,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 4] = [Self::Eigen, Self::SelfAttn, Self::Max, Self::Avg];

    pub fn name(self) -> &'static str {
        match self {
            Self::Eigen => "eigen",
            Self::SelfAttn => "self_attn",
            Self::Max => "max",
            Self::Avg => "avg",
        }
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown aggregator {s:?} (eigen|self_attn|max|avg)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct ScorerIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationLayer {
    pub kind: AggregatorKind,
    pub dim: usize,
    pub activation: ScorerActivation,
    scorer: Option<ScorerIds>,
    query: Option<ParamId>,
}

#[derive(Debug, Clone)]
pub enum AggCache {
    Eigen {
        h: Matrix,
        a: AdjacencyMatrix,
        eig: EigenPair,
        weights: AggregationWeights,
    },
    SelfAttn {
        h: Matrix,
        weights: AggregationWeights,
    },
    Max {
        argmax: Vec<usize>,
        n: usize,
    },
    Avg {
        weights: AggregationWeights,
    },
}

impl AggCache {
    pub fn weights(&self) -> Option<&AggregationWeights> {
        match self {
            AggCache::Eigen { weights, .. } | AggCache::SelfAttn { weights, .. } | AggCache::Avg { weights } => {
                Some(weights)
            }
            AggCache::Max { .. } => None,
        }
    }

    pub fn eigen(&self) -> Option<(&AdjacencyMatrix, &EigenPair)> {
        match self {
            AggCache::Eigen { a, eig, .. } => Some((a, eig)),
            _ => None,
        }
    }
}

impl AggregationLayer {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        kind: AggregatorKind,
        dim: usize,
        connectivity_hidden: usize,
        activation: ScorerActivation,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut scorer = None;
        let mut query = None;
        match kind {
            AggregatorKind::Eigen => {
                if connectivity_hidden == 0 {
                    return Err(Error::InvalidConfig("connectivity_hidden_units must be positive".into()));
                }
                let s = ConnectivityScorer::random(dim, connectivity_hidden, rng);
                scorer = Some(ScorerIds {
                    w1: store.add(format!("{prefix}.scorer.w1"), s.w1)?,
                    b1: store.add(format!("{prefix}.scorer.b1"), Matrix::from_vec(s.b1.len(), 1, s.b1)?)?,
                    w2: store.add(format!("{prefix}.scorer.w2"), Matrix::from_vec(s.w2.len(), 1, s.w2)?)?,
                    b2: store.add(format!("{prefix}.scorer.b2"), Matrix::filled(1, 1, s.b2))?,
                });
            }
            AggregatorKind::SelfAttn => {
                let q = SelfAttentionParams::random(dim, rng).q;
                query = Some(store.add(format!("{prefix}.query"), Matrix::from_vec(dim, 1, q)?)?);
            }
            AggregatorKind::Max | AggregatorKind::Avg => {}
        }
        Ok(AggregationLayer {
            kind,
            dim,
            activation,
            scorer,
            query,
        })
    }

    /// Materializes the connectivity scorer from the store (eigen only).
    pub fn scorer(&self, store: &ParamStore) -> Option<ConnectivityScorer> {
        self.scorer.map(|ids| ConnectivityScorer {
            w1: store.value(ids.w1).clone(),
            b1: store.value(ids.b1).data().to_vec(),
            w2: store.value(ids.w2).data().to_vec(),
            b2: store.value(ids.b2).data()[0],
            activation: self.activation,
        })
    }

    pub fn scorer_ids(&self) -> Option<[ParamId; 4]> {
        self.scorer.map(|s| [s.w1, s.b1, s.w2, s.b2])
    }

    pub fn query_id(&self) -> Option<ParamId> {
        self.query
    }

    /// Adjacency of `h` under the learned scorer (eigen only).
    pub fn adjacency(&self, store: &ParamStore, h: &Matrix) -> Result<AdjacencyMatrix> {
        let scorer = self
            .scorer(store)
            .ok_or_else(|| Error::InvalidConfig(format!("aggregator {} has no adjacency", self.kind)))?;
        AdjacencyMatrix::from_scores(&raw_scores(&scorer, h)?)
    }

    pub fn forward(&self, store: &ParamStore, h: &Matrix, power: &PowerConfig) -> Result<(Vec<f64>, AggCache)> {
        if h.rows() != self.dim {
            return Err(Error::dims("AggregationLayer::forward", self.dim, h.rows()));
        }
        if h.cols() == 0 {
            return Err(Error::EmptySequence);
        }
        match self.kind {
            AggregatorKind::Eigen => {
                let a = self.adjacency(store, h)?;
                let (weights, eig) = eigen_weights(&a, power)?;
                let out = aggregate(h, &weights)?;
                Ok((
                    out,
                    AggCache::Eigen {
                        h: h.clone(),
                        a,
                        eig,
                        weights,
                    },
                ))
            }
            AggregatorKind::SelfAttn => {
                let q = store.value(self.query.expect("query present")).data().to_vec();
                let weights = self_attention_weights(&SelfAttentionParams { q }, h)?;
                let out = aggregate(h, &weights)?;
                Ok((out, AggCache::SelfAttn { h: h.clone(), weights }))
            }
            AggregatorKind::Max => {
                let (out, argmax) = max_pool(h)?;
                Ok((out, AggCache::Max { argmax, n: h.cols() }))
            }
            AggregatorKind::Avg => {
                let weights = average_weights(h.cols());
                let out = aggregate(h, &weights)?;
                Ok((out, AggCache::Avg { weights }))
            }
        }
    }

    /// Returns `∂L/∂h`, accumulating parameter gradients into `grads`.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &AggCache,
        cotangent: &[f64],
        trunc_k: usize,
        grads: &mut Gradients,
    ) -> Result<Matrix> {
        match cache {
            AggCache::Eigen { h, a, eig, .. } => {
                let (mut dh, ga) = eigen_aggregate_backward(h, a, eig, cotangent, trunc_k)?;
                let ids = self.scorer.expect("scorer present");
                let scorer = self.scorer(store).expect("scorer present");
                let g_scores = column_softmax_backward(a.matrix(), &ga);
                let (gs, dh_graph) = raw_scores_backward(&scorer, h, &g_scores)?;
                dh.axpy(1.0, &dh_graph);
                grads.add_dense(ids.w1, 1.0, &gs.w1);
                grads.add_vec(ids.b1, &gs.b1);
                grads.add_vec(ids.w2, &gs.w2);
                grads.add_vec(ids.b2, &[gs.b2]);
                Ok(dh)
            }
            AggCache::SelfAttn { h, weights } => {
                let qid = self.query.expect("query present");
                let params = SelfAttentionParams {
                    q: store.value(qid).data().to_vec(),
                };
                let (dh, dq) = self_attention_backward(&params, h, weights, cotangent);
                grads.add_vec(qid, &dq);
                Ok(dh)
            }
            AggCache::Max { argmax, n } => Ok(max_pool_backward(argmax, *n, cotangent)),
            AggCache::Avg { weights } => Ok(aggregate_backward_h(weights, cotangent)),
        }
    }
}

/// Mean of power-method step counts, zero for an empty slice.
pub fn mean_steps(steps: &[usize]) -> f64 {
    if steps.is_empty() {
        0.0
    } else {
        steps.iter().sum::<usize>() as f64 / steps.len() as f64
    }
}
