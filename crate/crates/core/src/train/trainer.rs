//! Training loop and evaluation.
//!
//! Every random draw is keyed by `(seed, epoch, example)`, and per-example
//! gradients are summed in example order, so a run is reproducible
//! regardless of thread count and resumable at any epoch boundary.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, DevScore};
use super::config::TrainConfig;
use super::data::Dataset;
use super::optim::{adam_step, clip_gradients};
use crate::error::{Error, Result};
use crate::model::{cross_entropy, Model};
use crate::numerics::Rng;

pub const LOG_FILE: &str = "train_log.jsonl";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub dev_acc: f64,
    pub lr: f64,
    pub mean_power_steps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub label: String,
    pub support: usize,
    pub correct: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub loss: f64,
    pub total: usize,
    pub correct: usize,
    pub per_class: Vec<ClassCounts>,
}

/// Accuracy, mean loss and per-class counts with dropout off.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<EvalReport> {
    let outs: Vec<(usize, f64)> = data
        .examples
        .par_iter()
        .map(|e| {
            let p = model.predict(&e.input)?;
            let loss = cross_entropy(&p, e.label)?.value;
            Ok((crate::model::argmax(&p), loss))
        })
        .collect::<Result<_>>()?;
    let mut per_class: Vec<ClassCounts> = data
        .labels
        .iter()
        .map(|l| ClassCounts {
            label: l.clone(),
            support: 0,
            correct: 0,
            predicted: 0,
        })
        .collect();
    let mut correct = 0;
    let mut loss = 0.0;
    for (e, (pred, l)) in data.examples.iter().zip(&outs) {
        loss += l;
        per_class[e.label].support += 1;
        if let Some(c) = per_class.get_mut(*pred) {
            c.predicted += 1;
        }
        if *pred == e.label {
            correct += 1;
            per_class[e.label].correct += 1;
        }
    }
    let total = data.len();
    let n = total.max(1) as f64;
    Ok(EvalReport {
        accuracy: correct as f64 / n,
        loss: loss / n,
        total,
        correct,
        per_class,
    })
}

/// Splits `order` into batches of `initial_batch_size`; a batch whose
/// `size × longest sequence` exceeds `max_batch_tokens` is halved while both
/// halves stay at or above `batch_size_low_bound`.
pub fn plan_batches(order: &[usize], lengths: &[usize], cfg: &TrainConfig) -> Vec<Vec<usize>> {
    fn split(chunk: &[usize], lengths: &[usize], cfg: &TrainConfig, out: &mut Vec<Vec<usize>>) {
        let longest = chunk.iter().map(|&i| lengths[i]).max().unwrap_or(0);
        if chunk.len() >= 2 * cfg.batch_size_low_bound && chunk.len() * longest > cfg.max_batch_tokens {
            let (a, b) = chunk.split_at(chunk.len() / 2);
            split(a, lengths, cfg, out);
            split(b, lengths, cfg, out);
        } else {
            out.push(chunk.to_vec());
        }
    }
    let mut out = Vec::new();
    for chunk in order.chunks(cfg.initial_batch_size) {
        split(chunk, lengths, cfg, &mut out);
    }
    out
}

fn shuffle_rng(seed: u64, epoch: usize) -> Rng {
    Rng::derive(seed, &[epoch as u64, 0])
}

fn dropout_rng(seed: u64, epoch: usize, example: usize) -> Rng {
    Rng::derive(seed, &[epoch as u64, 1, example as u64])
}

/// Checkpoint of an untrained model.
pub fn initial_checkpoint(model: Model, cfg: &TrainConfig, data: &Dataset) -> Checkpoint {
    Checkpoint {
        config: cfg.clone(),
        model,
        vocab: data.vocab.clone(),
        labels: data.labels.clone(),
        rng: shuffle_rng(cfg.seed, 1).state(),
        step: 0,
        epoch: 0,
        best: None,
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Records for the epochs run in this call.
    pub log: Vec<EpochRecord>,
    pub best: Checkpoint,
    pub last: Checkpoint,
}

/// Trains from `start` up to `cfg.epochs` completed epochs.
///
/// With `out_dir`, each epoch appends to [`LOG_FILE`] and rewrites
/// [`LAST_CHECKPOINT`], and improvements on dev rewrite [`BEST_CHECKPOINT`].
/// A fresh start (epoch 0) truncates the log. `best` is the best checkpoint
/// so far when resuming.
pub fn train_loop(
    train: &Dataset,
    dev: &Dataset,
    start: Checkpoint,
    best: Option<Checkpoint>,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        if start.epoch == 0 {
            std::fs::File::create(dir.join(LOG_FILE))?;
            start.save(&dir.join(LAST_CHECKPOINT))?;
            if best.is_none() {
                start.save(&dir.join(BEST_CHECKPOINT))?;
            }
        }
    }
    let mut state = start;
    let mut best = best.unwrap_or_else(|| state.clone());
    let lengths: Vec<usize> = train.examples.iter().map(|e| e.input.max_sequence_len()).collect();
    let mut log = Vec::new();

    for epoch in state.epoch + 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = Rng::from_state(&state.rng)?;
        rng.shuffle(&mut order);
        let batches = plan_batches(&order, &lengths, cfg);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut steps_sum = 0usize;
        let mut steps_count = 0usize;
        let mut lr = cfg.learning_rate(state.step);
        for batch in &batches {
            let model = &state.model;
            let results = batch
                .par_iter()
                .map(|&i| {
                    let e = &train.examples[i];
                    let mut r = dropout_rng(cfg.seed, epoch, i);
                    model.loss_and_grad(&e.input, e.label, Some(&mut r))
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| match e {
                    Error::Divergence(m) => Error::Divergence(format!("epoch {epoch}, step {}: {m}", state.step + 1)),
                    other => other,
                })?;
            let scale = 1.0 / batch.len() as f64;
            let store = &mut state.model.store;
            store.zero_grad();
            let mut batch_loss = 0.0;
            for (r, &i) in results.iter().zip(batch) {
                store.accumulate(&r.grads, scale);
                batch_loss += r.loss.value;
                if r.predicted == train.examples[i].label {
                    correct += 1;
                }
                steps_sum += r.power_steps.iter().sum::<usize>();
                steps_count += r.power_steps.len();
            }
            let gnorm = store.grad_norm();
            if !batch_loss.is_finite() || !gnorm.is_finite() {
                return Err(Error::Divergence(format!(
                    "epoch {epoch}, step {}: loss {batch_loss}, gradient norm {gnorm}",
                    state.step + 1
                )));
            }
            loss_sum += batch_loss;
            if let Some(c) = cfg.clip_norm {
                clip_gradients(store, c);
            }
            state.step += 1;
            lr = adam_step(store, cfg, state.step);
        }

        let report = evaluate(&state.model, dev).map_err(|e| match e {
            Error::Divergence(m) => Error::Divergence(format!("epoch {epoch}, dev evaluation: {m}")),
            other => other,
        })?;
        let n = train.len() as f64;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            dev_acc: report.accuracy,
            lr,
            mean_power_steps: if steps_count == 0 {
                0.0
            } else {
                steps_sum as f64 / steps_count as f64
            },
        };
        state.epoch = epoch;
        state.rng = shuffle_rng(cfg.seed, epoch + 1).state();
        let score = DevScore {
            accuracy: report.accuracy,
            loss: report.loss,
            epoch,
        };
        let improved = state.best.is_none_or(|b| score.beats(&b));
        if improved {
            state.best = Some(score);
        }
        if let Some(dir) = out_dir {
            let mut f = OpenOptions::new().create(true).append(true).open(dir.join(LOG_FILE))?;
            writeln!(f, "{}", serde_json::to_string(&record)?)?;
            state.save(&dir.join(LAST_CHECKPOINT))?;
        }
        if improved {
            best = state.clone();
            if let Some(dir) = out_dir {
                best.save(&dir.join(BEST_CHECKPOINT))?;
            }
        }
        log.push(record);
    }
    Ok(TrainOutcome {
        log,
        best,
        last: state,
    })
}

/// Fresh model and training run for `cfg` on the given splits.
pub fn train_fresh(train: &Dataset, dev: &Dataset, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let model = Model::new(cfg.model_spec(train.vocab.len(), train.n_classes()), cfg.seed)?;
    train_loop(train, dev, initial_checkpoint(model, cfg, train), None, cfg, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelInput;
    use crate::train::data::Example;
    use crate::train::synthetic::SyntheticTask;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            synthetic: SyntheticTask {
                train_size: 120,
                dev_size: 40,
                vocab: 30,
                ..SyntheticTask::default()
            },
            ..TrainConfig::synthetic_quick()
        }
    }

    #[test]
    fn batches_cover_everything_and_respect_floor() {
        let cfg = TrainConfig {
            initial_batch_size: 8,
            batch_size_low_bound: 2,
            max_batch_tokens: 20,
            ..TrainConfig::default()
        };
        let lengths: Vec<usize> = (0..19).map(|i| if i < 8 { 10 } else { 1 }).collect();
        let order: Vec<usize> = (0..19).collect();
        let b = plan_batches(&order, &lengths, &cfg);
        let mut all: Vec<usize> = b.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, order);
        assert_eq!(b[0].len(), 2);
        assert!(b.iter().take(4).all(|x| x.len() == 2));
        assert_eq!(b[4].len(), 8);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let cfg = TrainConfig { epochs: 0, ..tiny_cfg() };
        let (tr, dev) = cfg.synthetic.splits(1).unwrap();
        let out = train_fresh(&tr, &dev, &cfg, None).unwrap();
        assert!(out.log.is_empty());
        let init = Model::new(cfg.model_spec(tr.vocab.len(), 4), cfg.seed).unwrap();
        assert_eq!(out.last.model.store.checksum(), init.store.checksum());
        assert_eq!(out.best.model, out.last.model);
    }

    #[test]
    fn one_epoch_lowers_loss() {
        let cfg = TrainConfig { epochs: 1, ..tiny_cfg() };
        let (tr, dev) = cfg.synthetic.splits(2).unwrap();
        let init = Model::new(cfg.model_spec(tr.vocab.len(), 4), cfg.seed).unwrap();
        let before = evaluate(&init, &tr).unwrap().loss;
        let out = train_fresh(&tr, &dev, &cfg, None).unwrap();
        let after = evaluate(&out.last.model, &tr).unwrap().loss;
        assert!(after <= before, "{before} -> {after}");
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let cfg = tiny_cfg();
        let (tr, dev) = cfg.synthetic.splits(3).unwrap();
        let full = train_fresh(&tr, &dev, &cfg, None).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let first = TrainConfig { epochs: 1, ..cfg.clone() };
        train_fresh(&tr, &dev, &first, Some(dir.path())).unwrap();
        let last = Checkpoint::load(&dir.path().join(LAST_CHECKPOINT)).unwrap();
        let best = Checkpoint::load(&dir.path().join(BEST_CHECKPOINT)).unwrap();
        let rest = train_loop(&tr, &dev, last, Some(best), &cfg, Some(dir.path())).unwrap();

        assert_eq!(rest.log, full.log[1..].to_vec());
        assert_eq!(rest.last.model.store, full.last.model.store);
        let lines = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        let expected: String = full
            .log
            .iter()
            .map(|r| serde_json::to_string(r).unwrap() + "\n")
            .collect();
        assert_eq!(lines, expected);
    }

    #[test]
    fn evaluate_counts_and_purity() {
        let cfg = tiny_cfg();
        let (tr, _) = cfg.synthetic.splits(4).unwrap();
        let model = Model::new(cfg.model_spec(tr.vocab.len(), 4), 1).unwrap();
        let sum = model.store.checksum();
        let r = evaluate(&model, &tr).unwrap();
        assert_eq!(model.store.checksum(), sum);
        assert_eq!(r.per_class.iter().map(|c| c.support).sum::<usize>(), tr.len());
        assert_eq!(r.per_class.iter().map(|c| c.predicted).sum::<usize>(), tr.len());
        let mut rev = tr.clone();
        rev.examples.reverse();
        assert_eq!(evaluate(&model, &rev).unwrap().accuracy, r.accuracy);
    }

    #[test]
    fn constant_predictor_scores_half_on_balanced_data() {
        let cfg = TrainConfig {
            task: crate::train::TaskKind::Sentence,
            ..tiny_cfg()
        };
        let data = Dataset {
            task: cfg.task,
            examples: (0..10)
                .map(|i| Example {
                    input: ModelInput::Sentence(vec![2 + i % 3]),
                    label: i % 2,
                })
                .collect(),
            vocab: crate::model::Vocabulary::from_tokens(["a".into(), "b".into(), "c".into()]),
            labels: vec!["0".into(), "1".into()],
        };
        let mut model = Model::new(cfg.model_spec(5, 2), 1).unwrap();
        model.store.value_mut(model.head.w2).fill(0.0);
        let b2 = model.head.b2;
        model.store.value_mut(b2).data_mut()[1] = 3.0;
        assert_eq!(evaluate(&model, &data).unwrap().accuracy, 0.5);
    }
}
