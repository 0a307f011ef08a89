//! Data preparation, training with early stopping, learning-rate search and evaluation.

use std::time::Instant;

use crate::cells::{count_params, param_budget_to_units};
use crate::data::{
    gen_lag_task, gen_synthetic_signal, load_pianoroll, load_signal, make_split, PianoRollDataset,
    SignalDataset,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::heads::HeadKind;
use crate::model::{
    average_nll_with, bptt, perturb_weights, Gradients, ModelShape, SequenceBatchItem, SequenceModel,
};
use crate::numerics::{derive_seed, RngStream};
use crate::optim::{
    clip_global_norm_in_place, lr_candidates, EarlyStopState, RmsPropConfig, RmsPropState, StopDecision,
};
use crate::params::Parameters;

use super::config::{ExperimentConfig, ModelSize, Task};
use super::output::{LearningCurveRecord, ResultRow};

const STREAM_DATA: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_NOISE: u64 = 4;
const STREAM_SHUFFLE: u64 = 5;
const STREAM_LR: u64 = 6;
const STREAM_CANDIDATE: u64 = 1000;

/// Train/valid/test sequences ready for the model.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub name: String,
    pub head: HeadKind,
    pub d_in: usize,
    pub d_out: usize,
    pub train: Vec<SequenceBatchItem>,
    pub valid: Vec<SequenceBatchItem>,
    pub test: Vec<SequenceBatchItem>,
}

/// A dataset produced by one of the built-in generators.
#[derive(Clone, Debug, PartialEq)]
pub enum GeneratedData {
    PianoRoll(PianoRollDataset),
    Signal(SignalDataset),
}

/// The dataset the lag task, or the signal task without a data file, trains on.
pub fn generate_data(config: &ExperimentConfig) -> Result<GeneratedData> {
    let mut rng = RngStream::new(config.seed).fork(STREAM_DATA);
    match config.task {
        Task::Lag => Ok(GeneratedData::PianoRoll(gen_lag_task(
            &mut rng,
            config.num_seq,
            config.seq_len,
            config.lag,
            config.dim,
        )?)),
        Task::Signal => Ok(GeneratedData::Signal(gen_synthetic_signal(
            &mut rng,
            config.num_seq,
            config.seq_len,
            config.tones,
        )?)),
        Task::PianoRoll => Err(Error::Config("the pianoroll task has no generator".into())),
    }
}

pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    config.validate()?;
    let split_seed = derive_seed(config.seed, STREAM_SPLIT);
    let name = config.dataset_label();
    match config.task {
        Task::Lag | Task::PianoRoll => {
            let [train, valid, test] = if config.task == Task::Lag {
                let GeneratedData::PianoRoll(ds) = generate_data(config)? else {
                    unreachable!()
                };
                split_pianoroll(&ds, split_seed, config.split)?
            } else if let Some(path) = &config.data {
                split_pianoroll(&load_pianoroll(path)?, split_seed, config.split)?
            } else {
                let load = |p: &Option<std::path::PathBuf>| load_pianoroll(p.as_ref().expect("validated"));
                [load(&config.train_data)?, load(&config.valid_data)?, load(&config.test_data)?]
            };
            let dim = train.dim;
            if valid.dim != dim || test.dim != dim {
                return Err(Error::Data(format!(
                    "split dimensions differ: train {dim}, valid {}, test {}",
                    valid.dim, test.dim
                )));
            }
            Ok(PreparedData {
                name,
                head: HeadKind::Bernoulli,
                d_in: dim,
                d_out: dim,
                train: nonempty(train.to_items()?, "train")?,
                valid: nonempty(valid.to_items()?, "valid")?,
                test: nonempty(test.to_items()?, "test")?,
            })
        }
        Task::Signal => {
            let [train, valid, test] = if config.train_data.is_some() {
                let load = |p: &Option<std::path::PathBuf>| load_signal(p.as_ref().expect("validated"));
                [load(&config.train_data)?, load(&config.valid_data)?, load(&config.test_data)?]
            } else {
                let ds = match &config.data {
                    Some(path) => load_signal(path)?,
                    None => match generate_data(config)? {
                        GeneratedData::Signal(ds) => ds,
                        GeneratedData::PianoRoll(_) => unreachable!(),
                    },
                };
                let s = make_split(ds.len(), split_seed, config.split)?;
                [ds.subset(&s.train), ds.subset(&s.valid), ds.subset(&s.test)]
            };
            // normalization statistics come from the training split only
            let (mean, std) = train.stats()?;
            let window = |ds: &SignalDataset, label| -> Result<Vec<SequenceBatchItem>> {
                let items = ds.normalized_with(mean, std)?.to_items(config.in_len, config.out_len, config.stride())?;
                nonempty(items, label)
            };
            Ok(PreparedData {
                name,
                head: HeadKind::Gmm {
                    components: config.components,
                },
                d_in: config.in_len,
                d_out: config.out_len,
                train: window(&train, "train")?,
                valid: window(&valid, "valid")?,
                test: window(&test, "test")?,
            })
        }
    }
}

fn split_pianoroll(ds: &PianoRollDataset, seed: u64, fractions: (f64, f64, f64)) -> Result<[PianoRollDataset; 3]> {
    let s = make_split(ds.len(), seed, fractions)?;
    Ok([ds.subset(&s.train), ds.subset(&s.valid), ds.subset(&s.test)])
}

fn nonempty(items: Vec<SequenceBatchItem>, label: &str) -> Result<Vec<SequenceBatchItem>> {
    if items.is_empty() {
        return Err(Error::Data(format!("{label} split is empty")));
    }
    Ok(items)
}

/// Configured hidden size, or the largest one fitting the parameter budget.
pub fn resolve_model_size(config: &ExperimentConfig, d_in: usize) -> Result<usize> {
    match config.size {
        ModelSize::Hidden(n) => Ok(n),
        ModelSize::Budget(b) => param_budget_to_units(config.cell, d_in, b),
    }
}

pub fn model_shape(config: &ExperimentConfig, data: &PreparedData) -> Result<ModelShape> {
    Ok(ModelShape {
        kind: config.cell,
        head: data.head,
        hidden: resolve_model_size(config, data.d_in)?,
        d_in: data.d_in,
        d_out: data.d_out,
        gru_variant: config.gru_variant,
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest validation NLL (the initial
    /// model when no epoch completed).
    pub model: SequenceModel,
    pub curve: Vec<LearningCurveRecord>,
    pub initial_valid: f64,
    pub best_epoch: Option<usize>,
    pub best_valid: Option<f64>,
    pub updates: usize,
    /// Diagnostic when training stopped on a non-finite loss.
    pub diverged: Option<String>,
}

/// Per update: perturb weights, backpropagate at the noisy point, clip, and
/// apply RMSProp to the clean parameters. Per epoch: evaluate validation NLL
/// and consult early stopping.
pub fn run_training(
    config: &ExperimentConfig,
    data: &PreparedData,
    lr: f64,
    seed: u64,
    exec: Execution,
) -> Result<TrainOutcome> {
    let shape = model_shape(config, data)?;
    let root = RngStream::new(seed);
    let mut model = SequenceModel::new(shape, &mut root.fork(STREAM_INIT), config.init_scale)?;
    let initial_valid = average_nll_with(&model, &data.valid, exec)?;
    let mut outcome = TrainOutcome {
        model: model.clone(),
        curve: Vec::new(),
        initial_valid,
        best_epoch: None,
        best_valid: None,
        updates: 0,
        diverged: None,
    };
    if config.max_epochs == 0 {
        return Ok(outcome);
    }

    let mut noise_rng = root.fork(STREAM_NOISE);
    let mut shuffle_rng = root.fork(STREAM_SHUFFLE);
    let mut opt = RmsPropState::new(
        model.zero_gradients(),
        RmsPropConfig {
            lr,
            rho: config.rho,
            epsilon: config.rms_epsilon,
        },
    )?;
    let mut stopper = EarlyStopState::new(config.patience);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let start = Instant::now();

    'epochs: for epoch in 1..=config.max_epochs {
        shuffle_rng.shuffle(&mut order);
        let mut nll_sum = 0.0;
        let mut steps = 0usize;
        for batch in order.chunks(config.batch_size) {
            let noisy = perturb_weights(&model, &mut noise_rng, config.noise_std)?;
            let (mut grads, nll) = batch_gradients(&noisy, &data.train, batch, exec)?;
            if !nll.is_finite() || !grads.norm().is_finite() {
                outcome.diverged = Some(format!(
                    "non-finite training loss at epoch {epoch}, update {} (lr {lr:e})",
                    outcome.updates + 1
                ));
                break 'epochs;
            }
            clip_global_norm_in_place(&mut grads, config.clip)?;
            opt.step(&mut model, &grads)?;
            outcome.updates += 1;
            nll_sum += nll;
            steps += batch.iter().map(|&i| data.train[i].len()).sum::<usize>();
        }

        let valid_nll = average_nll_with(&model, &data.valid, exec)?;
        if !valid_nll.is_finite() {
            outcome.diverged = Some(format!("non-finite validation NLL after epoch {epoch} (lr {lr:e})"));
            break;
        }
        outcome.curve.push(LearningCurveRecord {
            epoch,
            updates: outcome.updates,
            wall_clock_s: start.elapsed().as_secs_f64(),
            train_nll: nll_sum / steps as f64,
            valid_nll,
            lr,
        });
        if outcome.best_valid.is_none_or(|best| valid_nll < best) {
            outcome.best_valid = Some(valid_nll);
            outcome.best_epoch = Some(epoch);
            outcome.model = model.clone();
        }
        if stopper.update(valid_nll, epoch) == StopDecision::Stop {
            break;
        }
    }
    Ok(outcome)
}

fn batch_gradients(
    model: &SequenceModel,
    items: &[SequenceBatchItem],
    batch: &[usize],
    exec: Execution,
) -> Result<(Gradients, f64)> {
    if let [single] = batch {
        return bptt(model, &items[*single]);
    }
    let parts = exec.map(batch, |&i| bptt(model, &items[i]));
    let mut grads = model.zero_gradients();
    let mut total = 0.0;
    for part in parts {
        let (g, nll) = part?;
        grads.add_assign(&g);
        total += nll;
    }
    Ok((grads, total))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSummary {
    pub index: usize,
    pub lr: f64,
    /// Lowest validation NLL reached; `inf` when no epoch completed.
    pub best_valid: f64,
    pub epochs_run: usize,
    pub diverged: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LrSearchOutcome {
    pub best_lr: f64,
    pub best_index: usize,
    pub candidates: Vec<CandidateSummary>,
}

/// Short run per log-uniform candidate (each with its own derived seed);
/// the lowest validation NLL wins, ties going to the earlier candidate.
pub fn run_lr_search(config: &ExperimentConfig, data: &PreparedData, exec: Execution) -> Result<LrSearchOutcome> {
    let mut rng = RngStream::new(config.seed).fork(STREAM_LR);
    let lrs = lr_candidates(&mut rng, config.lr_candidates, config.lr_log_lo, config.lr_log_hi)?;
    let mut short = config.clone();
    short.max_epochs = config.search_epochs();

    let runs = exec.map_range(lrs.len(), |i| {
        let seed = derive_seed(config.seed, STREAM_CANDIDATE + i as u64);
        // candidates already run side by side; keep each one sequential inside
        run_training(&short, data, lrs[i], seed, Execution::Sequential)
    });
    let mut candidates = Vec::with_capacity(lrs.len());
    for (index, run) in runs.into_iter().enumerate() {
        let run = run?;
        candidates.push(CandidateSummary {
            index,
            lr: lrs[index],
            best_valid: run.best_valid.unwrap_or(f64::INFINITY),
            epochs_run: run.curve.len(),
            diverged: run.diverged,
        });
    }
    let best = candidates
        .iter()
        .filter(|c| c.best_valid.is_finite())
        .min_by(|a, b| a.best_valid.total_cmp(&b.best_valid).then(a.index.cmp(&b.index)));
    match best {
        Some(c) => Ok(LrSearchOutcome {
            best_lr: c.lr,
            best_index: c.index,
            candidates: candidates.clone(),
        }),
        None => Err(Error::Search(format!(
            "every candidate diverged: {}",
            lrs.iter().map(|lr| format!("{lr:e}")).collect::<Vec<_>>().join(", ")
        ))),
    }
}

/// Per-timestep average NLL of `model` on one split, without weight noise.
pub fn evaluate(model: &SequenceModel, items: &[SequenceBatchItem], exec: Execution) -> Result<f64> {
    if let Some(item) = items.first() {
        if item.inputs[0].len() != model.d_in() || item.targets[0].len() != model.d_out() {
            return Err(Error::Contract(format!(
                "model reads {} and predicts {} values per step, data has {} and {}",
                model.d_in(),
                model.d_out(),
                item.inputs[0].len(),
                item.targets[0].len()
            )));
        }
    }
    average_nll_with(model, items, exec)
}

pub fn result_row(
    config: &ExperimentConfig,
    data: &PreparedData,
    model: &SequenceModel,
    lr: f64,
    exec: Execution,
) -> Result<ResultRow> {
    Ok(ResultRow {
        dataset: data.name.clone(),
        cell: config.cell.to_string(),
        train_nll: evaluate(model, &data.train, exec)?,
        valid_nll: evaluate(model, &data.valid, exec)?,
        test_nll: evaluate(model, &data.test, exec)?,
        n: model.hidden_size(),
        param_count: count_params(model.kind(), model.hidden_size(), model.d_in()),
        best_lr: lr,
        seed: config.seed,
    })
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub run: String,
    pub row: ResultRow,
    pub curve: Vec<LearningCurveRecord>,
    pub search: Option<LrSearchOutcome>,
    pub model: SequenceModel,
    pub diverged: Option<String>,
}

/// Learning-rate search (unless `lr` is fixed), full training of the winner
/// from the run seed, then evaluation of the best-validation checkpoint.
pub fn run_experiment(config: &ExperimentConfig, exec: Execution) -> Result<ExperimentOutcome> {
    let data = prepare_data(config)?;
    run_experiment_on(config, &data, exec)
}

pub fn run_experiment_on(config: &ExperimentConfig, data: &PreparedData, exec: Execution) -> Result<ExperimentOutcome> {
    config.validate()?;
    let (lr, search) = match config.lr {
        Some(lr) => (lr, None),
        None => {
            let s = run_lr_search(config, data, exec)?;
            (s.best_lr, Some(s))
        }
    };
    let trained = run_training(config, data, lr, config.seed, exec)?;
    if let (Some(msg), None) = (&trained.diverged, trained.best_epoch) {
        return Err(Error::Divergence(format!("{msg}; no epoch completed")));
    }
    let row = result_row(config, data, &trained.model, lr, exec)?;
    Ok(ExperimentOutcome {
        run: config.run_label(),
        row,
        curve: trained.curve,
        search,
        model: trained.model,
        diverged: trained.diverged,
    })
}
