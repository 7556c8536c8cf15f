//! Minibatch Adam training with seeded shuffling, deterministic tree-sum
//! gradient reduction, validation-CIDEr model selection and grid search.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{
    backward, forward_loss, greedy_decode, AdamState, CaptionerError, Checkpoint, HyperParams,
    Params, TrainExample, TrainLogEntry,
};
use crate::corpus::{CaptionSet, Vocabulary};
use crate::fmath;
use crate::metrics::{cider, tokenize, CiderVariant, TokenSeq};
use crate::repr::ReprVector;
use crate::rng::{substream, Stream};
use crate::ImageId;

/// Validation inputs for model selection: representations to decode and the
/// reference captions to score them against.
#[derive(Debug, Clone)]
pub struct ValData {
    pub reprs: Vec<ReprVector>,
    pub captions: CaptionSet,
}

fn add_in_place(acc: &mut Params, other: &Params) {
    for (a, b) in acc.tensors_mut().into_iter().zip(other.tensors()) {
        for (x, y) in a.data.iter_mut().zip(&b.data) {
            *x += y;
        }
    }
}

/// Fixed-order pairwise tree reduction; the result is independent of how
/// the per-example passes were scheduled.
pub fn tree_sum(mut grads: Vec<Params>) -> Params {
    assert!(!grads.is_empty());
    while grads.len() > 1 {
        let mut next = Vec::with_capacity(grads.len().div_ceil(2));
        let mut iter = grads.into_iter();
        while let Some(mut left) = iter.next() {
            if let Some(right) = iter.next() {
                add_in_place(&mut left, &right);
            }
            next.push(left);
        }
        grads = next;
    }
    grads.pop().unwrap()
}

fn scale_in_place(grads: &mut Params, factor: f64) {
    for t in grads.tensors_mut() {
        for x in &mut t.data {
            *x *= factor;
        }
    }
}

fn clip_global_norm(grads: &mut Params, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let mut sq = 0.0;
    for t in grads.tensors() {
        for &x in &t.data {
            sq += x * x;
        }
    }
    let norm = fmath::sqrt(sq);
    if norm > max_norm {
        scale_in_place(grads, max_norm / norm);
    }
}

fn adam_step(params: &mut Params, state: &mut AdamState, grads: &Params, hp: &HyperParams) {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - fmath::pow(hp.adam_beta1, t);
    let bc2 = 1.0 - fmath::pow(hp.adam_beta2, t);
    let (b1, b2, eps, lr) = (hp.adam_beta1, hp.adam_beta2, hp.adam_epsilon, hp.learning_rate);

    let mut p_tensors = params.tensors_mut();
    let mut m_tensors = state.m.tensors_mut();
    let mut v_tensors = state.v.tensors_mut();
    let g_tensors = grads.tensors();
    for i in 0..g_tensors.len() {
        let p = &mut p_tensors[i];
        let m = &mut m_tensors[i];
        let v = &mut v_tensors[i];
        let g = g_tensors[i];
        for k in 0..g.data.len() {
            let gk = g.data[k];
            m.data[k] = b1 * m.data[k] + (1.0 - b1) * gk;
            v.data[k] = b2 * v.data[k] + (1.0 - b2) * gk * gk;
            let m_hat = m.data[k] / bc1;
            let v_hat = v.data[k] / bc2;
            p.data[k] -= lr * m_hat / (fmath::sqrt(v_hat) + eps);
        }
    }
}

fn validate_dataset(
    dataset: &[TrainExample],
    vocab: &Vocabulary,
) -> Result<usize, CaptionerError> {
    let first = dataset.first().ok_or(CaptionerError::EmptyDataset)?;
    let dim = first.repr.dim();
    for ex in dataset {
        if ex.repr.dim() != dim {
            return Err(CaptionerError::DimMismatch {
                want: dim,
                got: ex.repr.dim(),
            });
        }
        if ex.token_ids.len() < 2 {
            return Err(CaptionerError::BadTokenId {
                id: 0,
                size: vocab.len(),
            });
        }
        for &id in &ex.token_ids {
            if id as usize >= vocab.len() {
                return Err(CaptionerError::BadTokenId {
                    id,
                    size: vocab.len(),
                });
            }
        }
    }
    Ok(dim)
}

fn validation_cider(
    params: &Params,
    hp: &HyperParams,
    vocab: &Vocabulary,
    val: &ValData,
    refs: &BTreeMap<ImageId, Vec<TokenSeq>>,
    variant: CiderVariant,
) -> Result<f64, CaptionerError> {
    let mut cands: BTreeMap<ImageId, TokenSeq> = BTreeMap::new();
    for r in &val.reprs {
        let ids = greedy_decode(params, hp, &r.values, hp.max_decode_len)?;
        let tokens = ids.iter().map(|&id| vocab.decode(id).to_string()).collect();
        cands.insert(r.image_id, TokenSeq::from_tokens(tokens));
    }
    Ok(cider(&cands, refs, variant)?.mean)
}

/// Fresh-init training: uniform init from the seed's `Init` substream, then
/// `train_from_init`.
pub fn train(
    dataset: &[TrainExample],
    hp: &HyperParams,
    vocab: &Vocabulary,
    val: Option<&ValData>,
    variant: CiderVariant,
) -> Result<Checkpoint, CaptionerError> {
    hp.validate()?;
    let dim = validate_dataset(dataset, vocab)?;
    let init = Params::init(hp, dim, vocab.len());
    train_from_init(dataset, hp, vocab, val, variant, init)
}

/// Minibatch Adam for up to `max_epochs`, seeded per-epoch shuffling,
/// model selection on best validation CIDEr (final epoch when no validation
/// set is given). Bit-deterministic in (dataset, hp, init).
pub fn train_from_init(
    dataset: &[TrainExample],
    hp: &HyperParams,
    vocab: &Vocabulary,
    val: Option<&ValData>,
    variant: CiderVariant,
    init: Params,
) -> Result<Checkpoint, CaptionerError> {
    hp.validate()?;
    let dim = validate_dataset(dataset, vocab)?;
    if init.proj.cols != dim {
        return Err(CaptionerError::DimMismatch {
            want: init.proj.cols,
            got: dim,
        });
    }
    let schema = dataset[0].repr.schema.clone();

    let val_refs: Option<BTreeMap<ImageId, Vec<TokenSeq>>> = val.map(|v| {
        v.reprs
            .iter()
            .map(|r| {
                let caps = v.captions.get(r.image_id).cloned().unwrap_or_default();
                (r.image_id, caps.iter().map(|c| tokenize(c)).collect())
            })
            .collect()
    });

    let mut params = init;
    let mut adam = AdamState::new(&params);
    let mut log: Vec<TrainLogEntry> = Vec::with_capacity(hp.max_epochs);
    let mut best: Option<(f64, Params, AdamState, usize)> = None;

    for epoch in 0..hp.max_epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut substream(hp.seed, Stream::Shuffle, epoch as u64));

        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;

        for (batch_idx, chunk) in order.chunks(hp.batch_size).enumerate() {
            let wrap = |e: CaptionerError| CaptionerError::Diverged {
                epoch,
                batch: batch_idx,
                source: Box::new(e),
            };
            let mut grads_list = Vec::with_capacity(chunk.len());
            for (pos, &ex_idx) in chunk.iter().enumerate() {
                let counter = (epoch * dataset.len() + batch_idx * hp.batch_size + pos) as u64;
                let dropout_seed = substream(hp.seed, Stream::Dropout, counter).next_u64();
                let (loss, caches) =
                    forward_loss(&params, hp, &dataset[ex_idx], dropout_seed).map_err(wrap)?;
                let grads = backward(&params, hp, &caches).map_err(wrap)?;
                epoch_loss += loss;
                epoch_tokens += dataset[ex_idx].target_len();
                grads_list.push(grads);
            }
            let mut grad = tree_sum(grads_list);
            scale_in_place(&mut grad, 1.0 / chunk.len() as f64);
            clip_global_norm(&mut grad, hp.clip_norm);
            adam_step(&mut params, &mut adam, &grad, hp);
        }

        let val_cider = match (&val, &val_refs) {
            (Some(v), Some(refs)) if !v.reprs.is_empty() => {
                Some(validation_cider(&params, hp, vocab, v, refs, variant)?)
            }
            _ => None,
        };
        log.push(TrainLogEntry {
            epoch,
            train_loss_per_token: epoch_loss / epoch_tokens.max(1) as f64,
            val_cider,
        });
        if let Some(vc) = val_cider {
            let improved = best.as_ref().map(|(b, ..)| vc > *b).unwrap_or(true);
            if improved {
                best = Some((vc, params.clone(), adam.clone(), epoch));
            }
        }
    }

    let (params, adam) = match best {
        Some((_, p, a, _)) => (p, a),
        None => (params, adam),
    };
    Ok(Checkpoint {
        params,
        hp: hp.clone(),
        vocab: vocab.clone(),
        schema,
        adam,
        log,
    })
}

/// Grid of candidate hyperparameter values, searched exhaustively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub batch_sizes: Vec<usize>,
    pub dropouts: Vec<f64>,
    pub learning_rates: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            batch_sizes: alloc::vec![50, 100],
            dropouts: alloc::vec![0.2, 0.7],
            learning_rates: alloc::vec![1e-4, 4e-4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRun {
    pub batch_size: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub best_val_cider: f64,
}

/// Trains every grid combination and returns the checkpoint with the best
/// validation CIDEr; ties keep the earliest combination in batch-size,
/// dropout, learning-rate nesting order.
pub fn train_grid(
    dataset: &[TrainExample],
    base_hp: &HyperParams,
    grid: &GridSpec,
    vocab: &Vocabulary,
    val: &ValData,
    variant: CiderVariant,
) -> Result<(Checkpoint, Vec<GridRun>), CaptionerError> {
    if val.reprs.is_empty() {
        return Err(CaptionerError::BadHyperParams(
            "grid search requires a non-empty validation set",
        ));
    }
    let mut runs = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    for &batch_size in &grid.batch_sizes {
        for &dropout in &grid.dropouts {
            for &learning_rate in &grid.learning_rates {
                let hp = HyperParams {
                    batch_size,
                    dropout,
                    learning_rate,
                    ..base_hp.clone()
                };
                let ckpt = train(dataset, &hp, vocab, Some(val), variant)?;
                let best_val = ckpt
                    .log
                    .iter()
                    .filter_map(|e| e.val_cider)
                    .fold(f64::NEG_INFINITY, f64::max);
                runs.push(GridRun {
                    batch_size,
                    dropout,
                    learning_rate,
                    best_val_cider: best_val,
                });
                let improved = best.as_ref().map(|(b, _)| best_val > *b).unwrap_or(true);
                if improved {
                    best = Some((best_val, ckpt));
                }
            }
        }
    }
    Ok((best.unwrap().1, runs))
}
