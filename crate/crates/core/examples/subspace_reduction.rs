//! When the connectivity score depends only on the target word, every column
//! of the adjacency matrix is the same softmax, and the eigen-centrality
//! weights collapse to ordinary self-attention.
//!
//! cargo run --example subspace_reduction

use eigencent::adjacency::{build_adjacency, ConnectivityScorer, ScorerActivation};
use eigencent::aggregators::{eigen_weights, self_attention_weights, SelfAttentionParams};
use eigencent::eigencentrality::PowerConfig;
use eigencent::numerics::{Matrix, Rng};

fn main() -> eigencent::Result<()> {
    let (d, n) = (4, 6);
    let mut rng = Rng::new(3);
    let h = rng.normal_matrix(d, n, 1.0);
    let attn = SelfAttentionParams::random(d, &mut rng);

    let mut row = attn.q.clone();
    row.extend(vec![0.0; d]);
    let row_only = ConnectivityScorer {
        w1: Matrix::from_vec(1, 2 * d, row)?,
        b1: vec![0.0],
        w2: vec![1.0],
        b2: 0.0,
        activation: ScorerActivation::Linear,
    };
    let a = build_adjacency(&row_only, &h, &vec![true; n])?;
    let (ew, eig) = eigen_weights(&a, &PowerConfig::default())?;
    let sw = self_attention_weights(&attn, &h)?;
    println!("eigen (row-only scorer)  {:?}", ew.weights.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>());
    println!("self-attention           {:?}", sw.weights.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>());
    println!("steps {}", eig.steps_taken);

    let full = ConnectivityScorer::random(d, 8, &mut rng);
    let a = build_adjacency(&full, &h, &vec![true; n])?;
    let (fw, _) = eigen_weights(&a, &PowerConfig::default())?;
    println!("eigen (pairwise scorer)  {:?}", fw.weights.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>());
    Ok(())
}
