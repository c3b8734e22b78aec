//! Mini-batch training, early stopping and the hyperparameter sweep.

mod adam;
mod sweep;

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use adam::{adam_step, OptimState, BETA1, BETA2, EPSILON};
pub use sweep::{grid_points, parse_grid, read_grid, sweep, sweep_table, Grid, SweepRow};

use crate::config::HyperParams;
use crate::corpus::{generate_synthetic, InteractionCorpus, RelationGraph, SynthSpec};
use crate::diffkernel::{finite_diff_check, GradCheckReport};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, EvalOptions, EvalSplit};
use crate::losses::{
    loss_and_grad, loss_and_grad_sharded, loss_value, make_example, sample_inter, Batch,
    LossValues, LossWeights,
};
use crate::model::{Checkpoint, ModelDims, ModelParams, Pass};
use crate::relstore::RelationStore;

/// Random stream for `epoch`; epoch 0 is reserved for initialisation.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

pub fn init_params(
    corpus: &InteractionCorpus,
    store: &RelationStore,
    hyper: &HyperParams,
) -> ModelParams {
    let dims = ModelDims::new(hyper, corpus.num_items(), store.num_relations());
    ModelParams::init(dims, hyper.init_std, &mut epoch_rng(hyper.seed, 0))
}

/// Shuffles users and assembles the epoch's batches. Negatives and inter
/// samples are drawn fresh from `rng`.
pub fn make_batches(
    corpus: &InteractionCorpus,
    store: &RelationStore,
    hyper: &HyperParams,
    rng: &mut ChaCha8Rng,
) -> Vec<(Vec<usize>, Batch)> {
    let mut users: Vec<usize> = (1..=corpus.num_users())
        .filter(|&u| corpus.split(u).train.len() >= 2)
        .collect();
    users.shuffle(rng);
    users
        .chunks(hyper.batch_size)
        .map(|chunk| {
            let sequences = chunk
                .iter()
                .map(|&u| {
                    make_example(
                        corpus.split(u).train,
                        hyper.max_len,
                        corpus.num_items(),
                        store,
                        hyper.intra_neg_cap,
                        rng,
                    )
                })
                .collect();
            let inter = if hyper.beta != 0.0 {
                sample_inter(store, hyper.inter_budget(), rng)
            } else {
                Vec::new()
            };
            (chunk.to_vec(), Batch { sequences, inter })
        })
        .collect()
}

fn nonfinite_report(
    epoch: usize,
    batch: usize,
    users: &[usize],
    values: &LossValues,
    params: &ModelParams,
) -> String {
    let mut s = format!("non-finite loss at epoch {epoch}, batch {batch}: {values:?}\nusers: {users:?}\nparameter norms:\n");
    for (_, p) in params.set().iter() {
        let norm = p.value.sum_squares().sqrt();
        let _ = writeln!(s, "  {} {norm:e}", p.name);
    }
    s
}

/// One pass over all users; returns the component losses averaged per
/// batch.
pub fn train_epoch(
    corpus: &InteractionCorpus,
    store: &RelationStore,
    params: &mut ModelParams,
    state: &mut OptimState,
    hyper: &HyperParams,
    epoch: usize,
) -> Result<LossValues> {
    let mut rng = epoch_rng(hyper.seed, epoch);
    let batches = make_batches(corpus, store, hyper, &mut rng);
    let pass = Pass::new(hyper, true);
    let weights = LossWeights::from_hyper(hyper);
    let mut sum = LossValues::default();
    for (k, (users, batch)) in batches.iter().enumerate() {
        let (values, grads) = loss_and_grad_sharded(params, &pass, &weights, batch, hyper.threads);
        if !values.total.is_finite() || !grads.iter().all(|(_, g)| g.is_finite()) {
            return Err(Error::NonFinite(nonfinite_report(
                epoch, k, users, &values, params,
            )));
        }
        adam_step(params.set_mut(), &grads, state, hyper.lr);
        sum.add(&values);
    }
    if !batches.is_empty() {
        let n = batches.len() as f64;
        sum = LossValues {
            total: sum.total / n,
            pred: sum.pred / n,
            intra: sum.intra / n,
            inter: sum.inter / n,
            l2: sum.l2 / n,
        };
    }
    Ok(sum)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossValues,
    pub valid_mrr: f64,
}

/// Per-epoch records and the best epoch. Wall-clock times are kept apart
/// (see [`FitOutcome::epoch_seconds`]) so that the log is reproducible.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    /// One JSON object per epoch followed by a `{"best_epoch": …}` line.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let _ = writeln!(
                s,
                "{}",
                serde_json::to_string(r).expect("record serializes")
            );
        }
        let _ = writeln!(
            s,
            "{}",
            serde_json::json!({ "best_epoch": self.best_epoch })
        );
        s
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub best: Checkpoint,
    pub best_valid_mrr: f64,
    pub log: TrainLog,
    pub epoch_seconds: Vec<f64>,
}

/// Trains with validation MRR (full ranking) after every epoch.
pub fn fit(
    corpus: &InteractionCorpus,
    store: &RelationStore,
    hyper: &HyperParams,
) -> Result<FitOutcome> {
    let opts = EvalOptions {
        threads: hyper.threads,
        ..EvalOptions::new(EvalSplit::Valid)
    };
    fit_with_validator(corpus, store, hyper, |params, _| {
        evaluate(params, hyper, corpus, &opts).map(|r| r.metrics.mrr)
    })
}

/// [`fit`] with a caller-supplied validation score (higher is better).
///
/// Stops once `patience` consecutive epochs fail to strictly improve on the
/// best score, or after `max_epochs`. Returns the best checkpoint.
pub fn fit_with_validator<F>(
    corpus: &InteractionCorpus,
    store: &RelationStore,
    hyper: &HyperParams,
    mut validator: F,
) -> Result<FitOutcome>
where
    F: FnMut(&ModelParams, usize) -> Result<f64>,
{
    hyper.validate()?;
    if hyper.max_len != corpus.max_len() {
        return Err(Error::Config(format!(
            "max_len {} differs from the corpus length {}",
            hyper.max_len,
            corpus.max_len()
        )));
    }
    let mut params = init_params(corpus, store, hyper);
    let mut state = OptimState::new(params.set());
    let checkpoint = |params: &ModelParams, state: &OptimState| Checkpoint {
        hyper: hyper.clone(),
        relation_names: store.relation_names().to_vec(),
        params: params.clone(),
        optim: Some(state.clone()),
    };
    let mut best = checkpoint(&params, &state);
    let mut best_mrr = f64::NEG_INFINITY;
    let mut log = TrainLog::default();
    let mut seconds = Vec::new();
    let mut since_best = 0;
    for epoch in 1..=hyper.max_epochs {
        let start = Instant::now();
        let loss = train_epoch(corpus, store, &mut params, &mut state, hyper, epoch)?;
        let mrr = validator(&params, epoch)?;
        seconds.push(start.elapsed().as_secs_f64());
        log.records.push(EpochRecord {
            epoch,
            loss,
            valid_mrr: mrr,
        });
        if mrr > best_mrr {
            best_mrr = mrr;
            best = checkpoint(&params, &state);
            log.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hyper.patience {
                break;
            }
        }
    }
    Ok(FitOutcome {
        best,
        best_valid_mrr: best_mrr,
        log,
        epoch_seconds: seconds,
    })
}

/// Tiny model used by the gradient check: d=8, L=6, two blocks, two heads.
pub fn gradcheck_hyper() -> HyperParams {
    HyperParams {
        max_len: 6,
        dim: 8,
        ffn_dim: 8,
        layers: 2,
        heads: 2,
        dropout: 0.0,
        alpha: 0.5,
        beta: 0.5,
        lambda: 0.01,
        batch_size: 4,
        inter_budget: Some(6),
        init_std: 0.3,
        ..HyperParams::default()
    }
}

/// Builds a random corpus with `num_items` items and `num_relations`
/// relations, a random model, one training batch, and compares the
/// gradient of the total loss with central differences.
pub fn gradcheck_model(
    hyper: &HyperParams,
    num_items: usize,
    num_relations: usize,
    coords: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport> {
    hyper.validate()?;
    let spec = SynthSpec {
        users: 4,
        items: num_items,
        relations: num_relations,
        min_seq_len: 4,
        max_seq_len: hyper.max_len + 4,
        graph: RelationGraph::Random {
            pairs_per_relation: num_items,
        },
        p_rel: 0.5,
        max_len: hyper.max_len,
    };
    let (corpus, store) = generate_synthetic(&spec, seed)?;
    let mut params = init_params(&corpus, &store, hyper);
    for r in 0..store.num_relations() {
        params.set_relation_weight(r, if r % 2 == 0 { 0.5 } else { -0.3 });
    }
    let mut rng = epoch_rng(seed, 1);
    let mut batches = make_batches(&corpus, &store, hyper, &mut rng);
    let batch = batches.swap_remove(0).1;
    let pass = Pass::new(hyper, false);
    let weights = LossWeights::from_hyper(hyper);
    let (_, grads) = loss_and_grad(&params, &pass, &weights, &batch);
    let mut probe = params.clone();
    Ok(finite_diff_check(
        |set| {
            *probe.set_mut() = set.clone();
            loss_value(&probe, &pass, &weights, &batch).total
        },
        params.set(),
        &grads,
        1e-5,
        coords,
        seed,
    ))
}
