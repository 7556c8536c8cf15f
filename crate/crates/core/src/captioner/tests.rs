use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::*;
use crate::corpus::{CaptionSet, Vocabulary, BOS, EOS};
use crate::fmath;
use crate::metrics::CiderVariant;
use crate::repr::{ReprSchema, ReprVector};

fn tiny_hp(conditioning: Conditioning) -> HyperParams {
    HyperParams {
        embed_dim: 7,
        hidden_dim: 8,
        layers: 2,
        max_epochs: 4,
        batch_size: 4,
        dropout: 0.0,
        learning_rate: 1e-3,
        seed: 3,
        conditioning,
        ..HyperParams::default()
    }
}

fn repr(id: i64, values: Vec<f64>) -> ReprVector {
    let dim = values.len() as i64;
    ReprVector {
        image_id: id,
        values,
        schema: ReprSchema::Frequency {
            categories: (1..=dim).collect(),
        },
    }
}

fn example(id: i64, values: Vec<f64>, body: &[u32]) -> TrainExample {
    let mut token_ids = alloc::vec![BOS];
    token_ids.extend_from_slice(body);
    token_ids.push(EOS);
    TrainExample {
        image_id: id,
        repr: repr(id, values),
        token_ids,
    }
}

fn random_params(hp: &HyperParams, repr_dim: usize, vocab: usize, seed: u64) -> Params {
    let hp = HyperParams {
        seed,
        ..hp.clone()
    };
    Params::init(&hp, repr_dim, vocab)
}

#[test]
fn project_elu_hand_values() {
    let hp = tiny_hp(Conditioning::HiddenInit);
    let mut params = random_params(&hp, 2, 11, 0);
    // overwrite proj with a 2x2 identity embedded in zeros
    params.proj = Tensor::zeros(hp.hidden_dim, 2);
    params.proj.data[0] = 1.0;
    params.proj.data[3] = 1.0; // row 1, col 1

    let (_, x) = project(&params, &[0.0, 0.0]).unwrap();
    assert!(x.iter().all(|&v| v == 0.0));

    let (_, x) = project(&params, &[-1.0, 2.0]).unwrap();
    assert!((x[0] - (fmath::exp(-1.0) - 1.0)).abs() < 1e-15);
    assert_eq!(x[1], 2.0);
    assert!(x.iter().all(|v| v.is_finite()));

    assert!(matches!(
        project(&params, &[1.0, 2.0, 3.0]),
        Err(CaptionerError::DimMismatch { want: 2, got: 3 })
    ));
}

#[test]
fn uniform_logits_give_t_ln_v() {
    let hp = tiny_hp(Conditioning::HiddenInit);
    let vocab_size = 11;
    let params = random_params(&hp, 3, vocab_size, 1).zeros_like();
    let ex = example(1, alloc::vec![0.5, -0.25, 1.0], &[4, 5, 6]);
    let (loss, _) = forward_loss(&params, &hp, &ex, 0).unwrap();
    let t = ex.target_len() as f64;
    assert!((loss - t * fmath::ln(vocab_size as f64)).abs() < 1e-9);
}

#[test]
fn bos_eos_only_caption_has_positive_loss() {
    let hp = tiny_hp(Conditioning::HiddenInit);
    let params = random_params(&hp, 3, 11, 2);
    let ex = TrainExample {
        image_id: 1,
        repr: repr(1, alloc::vec![1.0, 0.0, 2.0]),
        token_ids: alloc::vec![BOS, EOS],
    };
    let (loss, caches) = forward_loss(&params, &hp, &ex, 7).unwrap();
    assert!(loss > 0.0);
    assert_eq!(caches.step_probs().len(), 1);
}

#[test]
fn softmax_is_normalized_and_positive_at_every_step() {
    let hp = HyperParams {
        dropout: 0.3,
        ..tiny_hp(Conditioning::HiddenInit)
    };
    let params = random_params(&hp, 4, 11, 5);
    let ex = example(1, alloc::vec![1.0, 2.0, 0.0, 3.0], &[4, 7, 9, 5]);
    let (loss, caches) = forward_loss(&params, &hp, &ex, 123).unwrap();
    assert!(loss >= 0.0);
    for probs in caches.step_probs() {
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
        assert!(probs.iter().all(|&p| p > 0.0));
    }
}

#[test]
fn forward_is_deterministic_in_the_seed() {
    let hp = HyperParams {
        dropout: 0.5,
        ..tiny_hp(Conditioning::HiddenInit)
    };
    let params = random_params(&hp, 4, 11, 5);
    let ex = example(1, alloc::vec![1.0, 2.0, 0.0, 3.0], &[4, 7, 9]);
    let (a, _) = forward_loss(&params, &hp, &ex, 99).unwrap();
    let (b, _) = forward_loss(&params, &hp, &ex, 99).unwrap();
    assert_eq!(a, b);
    let (c, _) = forward_loss(&params, &hp, &ex, 100).unwrap();
    assert_ne!(a, c, "different dropout seed must change the masked loss");
}

/// Central finite differences over every parameter of every tensor. The
/// per-tensor comparison is the L2-norm relative error
/// ||numeric - analytic|| / max(||numeric||, ||analytic||): an FD oracle
/// with eps = 1e-5 on an O(1) f64 loss carries ~1e-10 absolute noise per
/// entry, so pointwise ratios are meaningless for near-zero gradients.
fn gradient_check(hp: &HyperParams, repr_dim: usize, vocab: usize, seed: u64, dropout_seed: u64) {
    let params = random_params(hp, repr_dim, vocab, seed);
    let mut values = Vec::new();
    let mut rng = crate::rng::substream(seed, crate::rng::Stream::Synth, 9);
    use rand::Rng;
    for _ in 0..repr_dim {
        values.push(rng.random_range(-1.0..2.0));
    }
    let body: Vec<u32> = (0..4).map(|_| rng.random_range(4..vocab as u32)).collect();
    let ex = example(1, values, &body);

    let (_, caches) = forward_loss(&params, hp, &ex, dropout_seed).unwrap();
    let analytic = backward(&params, hp, &caches).unwrap();

    let eps = 1e-5;
    let names: Vec<String> = params
        .named_tensors()
        .iter()
        .map(|(n, _)| n.clone())
        .collect();
    for (ti, name) in names.iter().enumerate() {
        let len = params.tensors()[ti].data.len();
        let mut diff_sq = 0.0f64;
        let mut num_sq = 0.0f64;
        let mut ana_sq = 0.0f64;
        for k in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[ti].data[k] += eps;
            let (lp, _) = forward_loss(&plus, hp, &ex, dropout_seed).unwrap();
            let mut minus = params.clone();
            minus.tensors_mut()[ti].data[k] -= eps;
            let (lm, _) = forward_loss(&minus, hp, &ex, dropout_seed).unwrap();
            let numeric = (lp - lm) / (2.0 * eps);
            let a = analytic.tensors()[ti].data[k];
            diff_sq += (numeric - a) * (numeric - a);
            num_sq += numeric * numeric;
            ana_sq += a * a;
        }
        let scale = num_sq.max(ana_sq).sqrt();
        if scale < 1e-8 {
            continue; // both zero to FD resolution (e.g. frozen blocks)
        }
        let rel = diff_sq.sqrt() / scale;
        assert!(rel <= 1e-4, "tensor {name} relative error {rel:.3e}");
    }
}

#[test]
fn gradients_match_finite_differences_hidden_init() {
    let hp = tiny_hp(Conditioning::HiddenInit);
    gradient_check(&hp, 6, 11, 17, 0);
}

#[test]
fn gradients_match_finite_differences_first_input() {
    let hp = tiny_hp(Conditioning::FirstInput);
    gradient_check(&hp, 6, 11, 18, 0);
}

#[test]
fn gradients_match_finite_differences_with_dropout() {
    let hp = HyperParams {
        dropout: 0.3,
        ..tiny_hp(Conditioning::HiddenInit)
    };
    gradient_check(&hp, 5, 11, 19, 42);
}

#[test]
fn unused_vocab_rows_get_small_softmax_gradients() {
    // every row of the output projection receives probability mass, so no
    // gradient entry of out_w for an unused token is exactly zero
    let hp = tiny_hp(Conditioning::HiddenInit);
    let params = random_params(&hp, 3, 11, 23);
    let ex = example(1, alloc::vec![1.0, 0.0, 0.5], &[4, 5]);
    let (_, caches) = forward_loss(&params, &hp, &ex, 0).unwrap();
    let grads = backward(&params, &hp, &caches).unwrap();
    let unused_token = 9usize; // never a target in this example
    let row = grads.out_w.row(unused_token);
    assert!(row.iter().any(|&g| g != 0.0));
}

#[test]
fn zero_gradient_for_frozen_block() {
    // an input coordinate that is always zero leaves its projection column
    // untouched
    let hp = tiny_hp(Conditioning::HiddenInit);
    let params = random_params(&hp, 3, 11, 29);
    let ex = example(1, alloc::vec![1.0, 0.0, 0.5], &[4, 5, 6]);
    let (_, caches) = forward_loss(&params, &hp, &ex, 0).unwrap();
    let grads = backward(&params, &hp, &caches).unwrap();
    for r in 0..grads.proj.rows {
        assert_eq!(grads.proj.at(r, 1), 0.0);
    }
}

#[test]
fn stale_caches_are_rejected() {
    let hp = tiny_hp(Conditioning::HiddenInit);
    let mut params = random_params(&hp, 3, 11, 31);
    let ex = example(1, alloc::vec![1.0, 0.0, 0.5], &[4, 5]);
    let (_, caches) = forward_loss(&params, &hp, &ex, 0).unwrap();
    params.out_b.data[0] += 1.0;
    assert_eq!(
        backward(&params, &hp, &caches),
        Err(CaptionerError::StaleCaches)
    );
}

#[test]
fn bad_token_ids_are_rejected() {
    let hp = tiny_hp(Conditioning::HiddenInit);
    let params = random_params(&hp, 3, 11, 37);
    let ex = example(1, alloc::vec![1.0, 0.0, 0.5], &[40]);
    match forward_loss(&params, &hp, &ex, 0) {
        Err(CaptionerError::BadTokenId { id: 40, size: 11 }) => {}
        other => panic!("expected bad-token error, got {:?}", other.map(|(l, _)| l)),
    }
}

fn toy_vocab(words: &[&str]) -> Vocabulary {
    let mut caps = CaptionSet::new();
    caps.push(1, words.join(" "));
    let ids: BTreeSet<i64> = [1].into_iter().collect();
    Vocabulary::build(&caps, &ids, 1).unwrap()
}

#[test]
fn decode_is_deterministic_and_respects_max_len() {
    let hp = tiny_hp(Conditioning::HiddenInit);
    let vocab = toy_vocab(&["a", "dog", "runs", "fast"]);
    let params = random_params(&hp, 3, vocab.len(), 41);
    let v = alloc::vec![1.0, 2.0, 0.0];
    let a = greedy_decode(&params, &hp, &v, 20).unwrap();
    let b = greedy_decode(&params, &hp, &v, 20).unwrap();
    assert_eq!(a, b);
    assert!(greedy_decode(&params, &hp, &v, 0).unwrap().is_empty());
}

#[test]
fn decode_never_emits_pad_bos_unk() {
    let vocab = toy_vocab(&["a", "dog", "runs", "fast"]);
    for seed in 0..30u64 {
        let hp = tiny_hp(Conditioning::HiddenInit);
        let params = random_params(&hp, 3, vocab.len(), seed);
        let v = alloc::vec![seed as f64 * 0.1, 1.0, -0.5];
        let out = greedy_decode(&params, &hp, &v, 20).unwrap();
        for id in out {
            assert!(id != crate::corpus::PAD && id != BOS && id != crate::corpus::UNK);
        }
    }
}

#[test]
fn tree_sum_matches_sequential_sum() {
    let hp = tiny_hp(Conditioning::HiddenInit);
    let mut grads = Vec::new();
    for seed in 0..5 {
        grads.push(random_params(&hp, 3, 11, seed));
    }
    let tree = tree_sum(grads.clone());
    // sequential reference
    let mut seq = grads[0].clone();
    for g in &grads[1..] {
        for (a, b) in seq.tensors_mut().into_iter().zip(g.tensors()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }
    for (a, b) in tree.tensors().iter().zip(seq.tensors()) {
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

fn overfit_dataset(vocab: &Vocabulary) -> Vec<TrainExample> {
    let sentences = ["a dog runs fast", "a cat sits still"];
    sentences
        .iter()
        .enumerate()
        .map(|(i, s)| TrainExample {
            image_id: i as i64 + 1,
            repr: repr(i as i64 + 1, alloc::vec![i as f64, 1.0 - i as f64, 0.5]),
            token_ids: vocab.encode_caption(s),
        })
        .collect()
}

fn overfit_vocab() -> Vocabulary {
    let mut caps = CaptionSet::new();
    caps.push(1, "a dog runs fast".to_string());
    caps.push(2, "a cat sits still".to_string());
    let ids: BTreeSet<i64> = [1, 2].into_iter().collect();
    Vocabulary::build(&caps, &ids, 1).unwrap()
}

#[test]
fn training_is_bit_deterministic() {
    let vocab = overfit_vocab();
    let dataset = overfit_dataset(&vocab);
    let hp = HyperParams {
        max_epochs: 3,
        batch_size: 2,
        dropout: 0.2,
        ..tiny_hp(Conditioning::HiddenInit)
    };
    let a = train(&dataset, &hp, &vocab, None, CiderVariant::CiderD).unwrap();
    let b = train(&dataset, &hp, &vocab, None, CiderVariant::CiderD).unwrap();
    assert_eq!(a, b);
}

#[test]
fn loss_is_nonincreasing_over_first_adam_steps() {
    // full-batch steps at lr 1e-4: at most one non-monotone step in five
    let vocab = overfit_vocab();
    let dataset = overfit_dataset(&vocab);
    let hp = HyperParams {
        max_epochs: 5,
        batch_size: dataset.len(),
        dropout: 0.0,
        learning_rate: 1e-4,
        ..tiny_hp(Conditioning::HiddenInit)
    };
    let ckpt = train(&dataset, &hp, &vocab, None, CiderVariant::CiderD).unwrap();
    let losses: Vec<f64> = ckpt.log.iter().map(|e| e.train_loss_per_token).collect();
    let violations = losses.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(violations <= 1, "losses: {losses:?}");
}

#[test]
fn overfit_reproduces_training_captions() {
    let vocab = overfit_vocab();
    let dataset = overfit_dataset(&vocab);
    let hp = HyperParams {
        max_epochs: 400,
        batch_size: 1,
        dropout: 0.0,
        learning_rate: 3e-3,
        embed_dim: 12,
        hidden_dim: 16,
        ..tiny_hp(Conditioning::HiddenInit)
    };
    let ckpt = train(&dataset, &hp, &vocab, None, CiderVariant::CiderD).unwrap();
    assert!(
        ckpt.log.last().unwrap().train_loss_per_token < 0.1,
        "final loss {}",
        ckpt.log.last().unwrap().train_loss_per_token
    );
    let caption = ckpt.caption(&dataset[0].repr).unwrap();
    assert_eq!(caption, "a dog runs fast");
    let caption = ckpt.caption(&dataset[1].repr).unwrap();
    assert_eq!(caption, "a cat sits still");
}

#[test]
fn empty_dataset_is_an_error() {
    let vocab = overfit_vocab();
    let hp = tiny_hp(Conditioning::HiddenInit);
    assert_eq!(
        train(&[], &hp, &vocab, None, CiderVariant::CiderD),
        Err(CaptionerError::EmptyDataset)
    );
}

#[test]
fn grid_search_runs_every_combination() {
    let vocab = overfit_vocab();
    let dataset = overfit_dataset(&vocab);
    let hp = HyperParams {
        max_epochs: 2,
        ..tiny_hp(Conditioning::HiddenInit)
    };
    let grid = GridSpec {
        batch_sizes: alloc::vec![1, 2],
        dropouts: alloc::vec![0.0, 0.2],
        learning_rates: alloc::vec![1e-3, 4e-3],
    };
    let mut captions = CaptionSet::new();
    captions.push(1, "a dog runs fast".to_string());
    captions.push(2, "a cat sits still".to_string());
    let val = ValData {
        reprs: dataset.iter().map(|e| e.repr.clone()).collect(),
        captions,
    };
    let (best, runs) = train_grid(&dataset, &hp, &grid, &vocab, &val, CiderVariant::CiderD).unwrap();
    assert_eq!(runs.len(), 8);
    let best_val = runs
        .iter()
        .map(|r| r.best_val_cider)
        .fold(f64::NEG_INFINITY, f64::max);
    let ckpt_best = best
        .log
        .iter()
        .filter_map(|e| e.val_cider)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best_val, ckpt_best);
}

#[test]
fn without_projection_columns_drops_exactly_those_inputs() {
    let hp = tiny_hp(Conditioning::HiddenInit);
    let params = random_params(&hp, 4, 11, 51);
    let cut = params.without_projection_columns(&[1..2]);
    assert_eq!(cut.proj.cols, 3);
    for r in 0..params.proj.rows {
        assert_eq!(cut.proj.at(r, 0), params.proj.at(r, 0));
        assert_eq!(cut.proj.at(r, 1), params.proj.at(r, 2));
        assert_eq!(cut.proj.at(r, 2), params.proj.at(r, 3));
    }
}
