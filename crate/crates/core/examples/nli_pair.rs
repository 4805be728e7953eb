//! Premise/hypothesis classification with a shared encoder and the
//! `[p; h; p∘h; |p−h|]` feature combination, trained on a toy entailment set.
//!
//! cargo run --release --example nli_pair

use eigencent::model::ModelInput;
use eigencent::train::{evaluate, parse_corpus, train_fresh, Dataset, TaskKind, TrainConfig};

const TRAIN: &str = "\
entailment\ta man is playing a guitar\ta person plays music
contradiction\ta man is playing a guitar\tnobody is playing anything
entailment\ta woman is reading a book\ta person reads
contradiction\ta woman is reading a book\tnobody reads
entailment\ta dog runs in the park\tan animal runs
contradiction\ta dog runs in the park\tthe dog is asleep
entailment\tchildren play football outside\tkids play a game
contradiction\tchildren play football outside\tthe children are asleep inside
";

fn main() -> eigencent::Result<()> {
    let raw = parse_corpus(TRAIN.as_bytes(), TaskKind::Pair)?;
    let (train, rest) = Dataset::build_splits(TaskKind::Pair, &raw, &[&raw], 1)?;
    let cfg = TrainConfig {
        task: TaskKind::Pair,
        embedding_size: 12,
        encoder_hidden_units: 8,
        connectivity_hidden_units: 6,
        head_hidden_units: 12,
        initial_learning_rate: 0.02,
        initial_batch_size: 4,
        batch_size_low_bound: 1,
        dropout_rate: 0.0,
        epochs: 40,
        ..TrainConfig::nli()
    };
    let out = train_fresh(&train, &rest[0], &cfg, None)?;
    let last = out.log.last().expect("at least one epoch");
    println!("epoch {}  train loss {:.4}  accuracy {:.3}", last.epoch, last.train_loss, last.train_acc);
    let report = evaluate(&out.last.model, &train)?;
    println!("training-set accuracy {:.3}", report.accuracy);

    let enc = |s: &str| train.vocab.encode(&s.split_whitespace().collect::<Vec<_>>());
    let probe = ModelInput::Pair {
        premise: enc("a dog runs in the park"),
        hypothesis: enc("nobody runs"),
    };
    let p = out.last.model.predict(&probe)?;
    for (label, pr) in train.labels.iter().zip(&p) {
        println!("  {label:14} {pr:.3}");
    }
    Ok(())
}
