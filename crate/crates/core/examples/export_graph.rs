//! Trains a small model on the keyword task and prints the word graph of one
//! sentence: centrality weights and the strongest edges.
//!
//! cargo run --release --example export_graph

use eigencent::cli::export_graph;
use eigencent::train::{train_fresh, TrainConfig};

fn main() -> eigencent::Result<()> {
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::synthetic_quick()
    };
    let (train, dev) = cfg.synthetic.splits(cfg.seed)?;
    let out = train_fresh(&train, &dev, &cfg, None)?;
    let g = export_graph(&out.best, "w17 w5 kw2 w88 w40 w5 kw2 w3")?;
    println!("lambda {:.12}, {} steps", g.meta.lambda, g.meta.steps_taken);
    for (t, w) in g.tokens.iter().zip(&g.weights) {
        println!("{t:>5} {w:.4} {}", "#".repeat((w * 60.0).round() as usize));
    }
    let mut edges: Vec<(f64, usize, usize)> = g
        .adjacency
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &v)| (v, j, i)))
        .collect();
    edges.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (v, j, i) in edges.iter().take(5) {
        println!("{} -> {}  {v:.3}", g.tokens[*j], g.tokens[*i]);
    }
    println!("{}", serde_json::to_string(&g.meta)?);
    Ok(())
}
