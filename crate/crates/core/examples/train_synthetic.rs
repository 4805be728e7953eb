//! Trains the eigen-centrality classifier and the average-pooling baseline on
//! the seeded keyword task and prints both learning curves.
//!
//! cargo run --release --example train_synthetic [seed]

use std::time::Instant;

use eigencent::model::AggregatorKind;
use eigencent::train::{train_fresh, TrainConfig};

fn main() -> eigencent::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2019);
    let base = TrainConfig {
        seed,
        ..TrainConfig::synthetic_quick()
    };
    let (train, dev) = base.synthetic.splits(seed)?;
    println!(
        "{} train / {} dev examples, vocabulary {}",
        train.len(),
        dev.len(),
        train.vocab.len()
    );
    for agg in [AggregatorKind::Eigen, AggregatorKind::Avg] {
        let cfg = TrainConfig {
            aggregator: agg,
            ..base.clone()
        };
        let t = Instant::now();
        let out = train_fresh(&train, &dev, &cfg, None)?;
        println!("aggregator {agg}");
        for r in &out.log {
            println!(
                "  epoch {:2}  loss {:.4}  train {:.3}  dev {:.3}  lr {:.5}  power steps {:.1}",
                r.epoch, r.train_loss, r.train_acc, r.dev_acc, r.lr, r.mean_power_steps
            );
        }
        println!("  {:.1}s", t.elapsed().as_secs_f64());
    }
    Ok(())
}
