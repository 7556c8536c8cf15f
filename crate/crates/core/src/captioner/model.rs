//! Forward pass with teacher forcing, exact backpropagation through time and
//! greedy decoding.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CaptionerError, Checkpoint, Conditioning, HyperParams, Params, TrainExample};
use crate::corpus::{BOS, EOS, PAD, UNK};
use crate::fmath;
use crate::repr::ReprVector;

/// What fed layer 0 at a given step.
#[derive(Clone, Copy, PartialEq)]
enum StepInput {
    Projection,
    Token(u32),
}

struct StepCache {
    source: StepInput,
    /// Post-dropout input to layer 0 and the mask that produced it.
    input: Vec<f64>,
    input_mask: Vec<f64>,
    /// Post-dropout inputs to layers 1.. and their masks.
    inter_inputs: Vec<Vec<f64>>,
    inter_masks: Vec<Vec<f64>>,
    gate_i: Vec<Vec<f64>>,
    gate_f: Vec<Vec<f64>>,
    gate_g: Vec<Vec<f64>>,
    gate_o: Vec<Vec<f64>>,
    cell: Vec<Vec<f64>>,
    tanh_cell: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
    /// Present only on steps that predict a target token.
    out_mask: Vec<f64>,
    h_top_dropped: Vec<f64>,
    probs: Vec<f64>,
    target: Option<u32>,
}

/// Everything the backward pass needs from one forward pass.
pub struct Caches {
    steps: Vec<StepCache>,
    repr: Vec<f64>,
    proj_pre: Vec<f64>,
    x: Vec<f64>,
    h0: Vec<Vec<f64>>,
    conditioning: Conditioning,
    fingerprint: u64,
}

impl Caches {
    /// Softmax distributions of the target-bearing steps, for diagnostics.
    pub fn step_probs(&self) -> Vec<&[f64]> {
        self.steps
            .iter()
            .filter(|s| s.target.is_some())
            .map(|s| s.probs.as_slice())
            .collect()
    }
}

fn dropout_mask(rng: &mut ChaCha8Rng, len: usize, p: f64) -> Vec<f64> {
    if p == 0.0 {
        return alloc::vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

fn apply_mask(values: &[f64], mask: &[f64]) -> Vec<f64> {
    values.iter().zip(mask).map(|(v, m)| v * m).collect()
}

struct GateActs {
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

fn lstm_step(
    layer: &super::LayerParams,
    input: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    n: usize,
) -> GateActs {
    let mut z = layer.bias.data.clone();
    layer.w_ih.matvec_add(input, &mut z);
    layer.w_hh.matvec_add(h_prev, &mut z);

    let mut acts = GateActs {
        i: Vec::with_capacity(n),
        f: Vec::with_capacity(n),
        g: Vec::with_capacity(n),
        o: Vec::with_capacity(n),
        c: Vec::with_capacity(n),
        tanh_c: Vec::with_capacity(n),
        h: Vec::with_capacity(n),
    };
    for k in 0..n {
        let i = fmath::sigmoid(z[k]);
        let f = fmath::sigmoid(z[n + k]);
        let g = fmath::tanh(z[2 * n + k]);
        let o = fmath::sigmoid(z[3 * n + k]);
        let c = f * c_prev[k] + i * g;
        let tc = fmath::tanh(c);
        acts.i.push(i);
        acts.f.push(f);
        acts.g.push(g);
        acts.o.push(o);
        acts.c.push(c);
        acts.tanh_c.push(tc);
        acts.h.push(o * tc);
    }
    acts
}

/// x = ELU(W v).
pub fn project(params: &Params, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>), CaptionerError> {
    if v.len() != params.proj.cols {
        return Err(CaptionerError::DimMismatch {
            want: params.proj.cols,
            got: v.len(),
        });
    }
    let mut pre = alloc::vec![0.0; params.proj.rows];
    params.proj.matvec_add(v, &mut pre);
    let x = pre.iter().map(|&z| fmath::elu(z)).collect();
    Ok((pre, x))
}

fn log_softmax_loss(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &z in logits {
        sum += fmath::exp(z - max);
    }
    let lse = max + fmath::ln(sum);
    let probs = logits.iter().map(|&z| fmath::exp(z - lse)).collect();
    (lse - logits[target], probs)
}

/// Teacher-forced negative log likelihood of the caption, summed over time
/// steps, plus the caches for `backward`.
pub fn forward_loss(
    params: &Params,
    hp: &HyperParams,
    example: &TrainExample,
    dropout_seed: u64,
) -> Result<(f64, Caches), CaptionerError> {
    let vocab_size = params.embed.rows;
    if example.token_ids.len() < 2 {
        return Err(CaptionerError::BadTokenId {
            id: 0,
            size: vocab_size,
        });
    }
    for &id in &example.token_ids {
        if id as usize >= vocab_size {
            return Err(CaptionerError::BadTokenId {
                id,
                size: vocab_size,
            });
        }
    }
    let (proj_pre, x) = project(params, &example.repr.values)?;
    let want_x = hp.projection_dim();
    if x.len() != want_x {
        return Err(CaptionerError::DimMismatch {
            want: want_x,
            got: x.len(),
        });
    }

    let n = hp.hidden_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);

    let (mut h, c0): (Vec<Vec<f64>>, Vec<Vec<f64>>) = match hp.conditioning {
        Conditioning::HiddenInit => (
            alloc::vec![x.clone(); hp.layers],
            alloc::vec![alloc::vec![0.0; n]; hp.layers],
        ),
        Conditioning::FirstInput => (
            alloc::vec![alloc::vec![0.0; n]; hp.layers],
            alloc::vec![alloc::vec![0.0; n]; hp.layers],
        ),
    };
    let h0 = h.clone();
    let mut c = c0;

    let mut plan: Vec<(StepInput, Option<u32>)> = Vec::new();
    if hp.conditioning == Conditioning::FirstInput {
        plan.push((StepInput::Projection, None));
    }
    for t in 0..example.token_ids.len() - 1 {
        plan.push((
            StepInput::Token(example.token_ids[t]),
            Some(example.token_ids[t + 1]),
        ));
    }

    let mut steps = Vec::with_capacity(plan.len());
    let mut loss = 0.0;

    for (step_index, (source, target)) in plan.into_iter().enumerate() {
        let raw: Vec<f64> = match source {
            StepInput::Projection => x.clone(),
            StepInput::Token(id) => params.embed.row(id as usize).to_vec(),
        };
        let input_mask = dropout_mask(&mut rng, raw.len(), hp.dropout);
        let input = apply_mask(&raw, &input_mask);

        let mut inter_inputs = Vec::with_capacity(hp.layers.saturating_sub(1));
        let mut inter_masks = Vec::with_capacity(hp.layers.saturating_sub(1));
        let mut gate_i = Vec::with_capacity(hp.layers);
        let mut gate_f = Vec::with_capacity(hp.layers);
        let mut gate_g = Vec::with_capacity(hp.layers);
        let mut gate_o = Vec::with_capacity(hp.layers);
        let mut cell = Vec::with_capacity(hp.layers);
        let mut tanh_cell = Vec::with_capacity(hp.layers);
        let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(hp.layers);

        for l in 0..hp.layers {
            let layer_in = if l == 0 {
                input.clone()
            } else {
                let mask = dropout_mask(&mut rng, n, hp.dropout);
                let dropped = apply_mask(&hidden[l - 1], &mask);
                inter_masks.push(mask);
                inter_inputs.push(dropped.clone());
                dropped
            };
            let acts = lstm_step(&params.layers[l], &layer_in, &h[l], &c[l], n);
            if acts.h.iter().any(|v| !v.is_finite()) || acts.c.iter().any(|v| !v.is_finite()) {
                return Err(CaptionerError::NonFinite { step: step_index });
            }
            h[l] = acts.h.clone();
            c[l] = acts.c.clone();
            gate_i.push(acts.i);
            gate_f.push(acts.f);
            gate_g.push(acts.g);
            gate_o.push(acts.o);
            cell.push(acts.c);
            tanh_cell.push(acts.tanh_c);
            hidden.push(acts.h);
        }

        let (out_mask, h_top_dropped, probs) = if let Some(target) = target {
            let out_mask = dropout_mask(&mut rng, n, hp.dropout);
            let h_dropped = apply_mask(&hidden[hp.layers - 1], &out_mask);
            let mut logits = params.out_b.data.clone();
            params.out_w.matvec_add(&h_dropped, &mut logits);
            let (step_loss, probs) = log_softmax_loss(&logits, target as usize);
            loss += step_loss;
            if !loss.is_finite() {
                return Err(CaptionerError::NonFinite { step: step_index });
            }
            (out_mask, h_dropped, probs)
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };

        steps.push(StepCache {
            source,
            input,
            input_mask,
            inter_inputs,
            inter_masks,
            gate_i,
            gate_f,
            gate_g,
            gate_o,
            cell,
            tanh_cell,
            hidden,
            out_mask,
            h_top_dropped,
            probs,
            target,
        });
    }

    Ok((
        loss,
        Caches {
            steps,
            repr: example.repr.values.clone(),
            proj_pre,
            x,
            h0,
            conditioning: hp.conditioning,
            fingerprint: params.fingerprint(),
        },
    ))
}

/// Exact gradients of `forward_loss` with respect to every parameter.
pub fn backward(
    params: &Params,
    hp: &HyperParams,
    caches: &Caches,
) -> Result<Params, CaptionerError> {
    if params.fingerprint() != caches.fingerprint {
        return Err(CaptionerError::StaleCaches);
    }
    let n = hp.hidden_dim;
    let layers = hp.layers;
    let mut grads = params.zeros_like();

    let mut dh: Vec<Vec<f64>> = alloc::vec![alloc::vec![0.0; n]; layers];
    let mut dc: Vec<Vec<f64>> = alloc::vec![alloc::vec![0.0; n]; layers];
    let mut dx = alloc::vec![0.0; caches.x.len()];

    for t in (0..caches.steps.len()).rev() {
        let step = &caches.steps[t];

        if let Some(target) = step.target {
            let mut dlogits = step.probs.clone();
            dlogits[target as usize] -= 1.0;
            grads.out_w.outer_add(&dlogits, &step.h_top_dropped);
            for (b, d) in grads.out_b.data.iter_mut().zip(&dlogits) {
                *b += d;
            }
            let mut dh_dropped = alloc::vec![0.0; n];
            params.out_w.matvec_transpose_add(&dlogits, &mut dh_dropped);
            for k in 0..n {
                dh[layers - 1][k] += dh_dropped[k] * step.out_mask[k];
            }
        }

        for l in (0..layers).rev() {
            let h_prev: &[f64] = if t == 0 {
                &caches.h0[l]
            } else {
                &caches.steps[t - 1].hidden[l]
            };
            let c_prev_owned;
            let c_prev: &[f64] = if t == 0 {
                c_prev_owned = alloc::vec![0.0; n];
                &c_prev_owned
            } else {
                &caches.steps[t - 1].cell[l]
            };
            let layer_in: &[f64] = if l == 0 {
                &step.input
            } else {
                &step.inter_inputs[l - 1]
            };

            let (gi, gf, gg, go) = (
                &step.gate_i[l],
                &step.gate_f[l],
                &step.gate_g[l],
                &step.gate_o[l],
            );
            let tc = &step.tanh_cell[l];

            let mut da = alloc::vec![0.0; 4 * n];
            let mut dc_prev = alloc::vec![0.0; n];
            for k in 0..n {
                let dhk = dh[l][k];
                let d_o = dhk * tc[k];
                let dck = dc[l][k] + dhk * go[k] * (1.0 - tc[k] * tc[k]);
                let d_i = dck * gg[k];
                let d_f = dck * c_prev[k];
                let d_g = dck * gi[k];
                da[k] = d_i * gi[k] * (1.0 - gi[k]);
                da[n + k] = d_f * gf[k] * (1.0 - gf[k]);
                da[2 * n + k] = d_g * (1.0 - gg[k] * gg[k]);
                da[3 * n + k] = d_o * go[k] * (1.0 - go[k]);
                dc_prev[k] = dck * gf[k];
            }

            grads.layers[l].w_ih.outer_add(&da, layer_in);
            grads.layers[l].w_hh.outer_add(&da, h_prev);
            for (b, d) in grads.layers[l].bias.data.iter_mut().zip(&da) {
                *b += d;
            }

            let mut dinput = alloc::vec![0.0; layer_in.len()];
            params.layers[l].w_ih.matvec_transpose_add(&da, &mut dinput);
            let mut dh_prev = alloc::vec![0.0; n];
            params.layers[l].w_hh.matvec_transpose_add(&da, &mut dh_prev);

            dh[l] = dh_prev;
            dc[l] = dc_prev;

            if l > 0 {
                let mask = &step.inter_masks[l - 1];
                for k in 0..n {
                    dh[l - 1][k] += dinput[k] * mask[k];
                }
            } else {
                let through_mask = apply_mask(&dinput, &step.input_mask);
                match step.source {
                    StepInput::Token(id) => {
                        let row = grads.embed.row_mut(id as usize);
                        for (r, d) in row.iter_mut().zip(&through_mask) {
                            *r += d;
                        }
                    }
                    StepInput::Projection => {
                        for (xg, d) in dx.iter_mut().zip(&through_mask) {
                            *xg += d;
                        }
                    }
                }
            }
        }
    }

    // Gradient into the projection: hidden-init wiring feeds x as h0 of
    // every layer; first-input wiring already routed it through step 0.
    if caches.conditioning == Conditioning::HiddenInit {
        for l in 0..layers {
            for (xg, d) in dx.iter_mut().zip(&dh[l]) {
                *xg += d;
            }
        }
    }
    let dpre: Vec<f64> = dx
        .iter()
        .zip(&caches.proj_pre)
        .map(|(d, &z)| d * fmath::elu_prime(z))
        .collect();
    grads.proj.outer_add(&dpre, &caches.repr);

    Ok(grads)
}

/// Greedy argmax decoding: starts from BOS with state from the projection,
/// emits the argmax token each step (ties to the lowest id), masks PAD, BOS
/// and UNK, stops at EOS or `max_len`. Dropout is disabled.
pub fn greedy_decode(
    params: &Params,
    hp: &HyperParams,
    repr: &[f64],
    max_len: usize,
) -> Result<Vec<u32>, CaptionerError> {
    let (_, x) = project(params, repr)?;
    if x.len() != hp.projection_dim() {
        return Err(CaptionerError::DimMismatch {
            want: hp.projection_dim(),
            got: x.len(),
        });
    }
    let n = hp.hidden_dim;

    let mut h: Vec<Vec<f64>>;
    let mut c: Vec<Vec<f64>> = alloc::vec![alloc::vec![0.0; n]; hp.layers];
    match hp.conditioning {
        Conditioning::HiddenInit => {
            h = alloc::vec![x.clone(); hp.layers];
        }
        Conditioning::FirstInput => {
            h = alloc::vec![alloc::vec![0.0; n]; hp.layers];
            let mut input = x.clone();
            for l in 0..hp.layers {
                let acts = lstm_step(&params.layers[l], &input, &h[l], &c[l], n);
                input = acts.h.clone();
                h[l] = acts.h;
                c[l] = acts.c;
            }
        }
    }

    let mut out = Vec::new();
    let mut token = BOS;
    for _ in 0..max_len {
        let mut input = params.embed.row(token as usize).to_vec();
        for l in 0..hp.layers {
            let acts = lstm_step(&params.layers[l], &input, &h[l], &c[l], n);
            input = acts.h.clone();
            h[l] = acts.h;
            c[l] = acts.c;
        }
        let mut logits = params.out_b.data.clone();
        params.out_w.matvec_add(&input, &mut logits);
        for special in [PAD, BOS, UNK] {
            logits[special as usize] = f64::NEG_INFINITY;
        }
        let mut best = 0usize;
        for (i, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = i;
            }
        }
        if best as u32 == EOS {
            break;
        }
        out.push(best as u32);
        token = best as u32;
    }
    Ok(out)
}

/// Decoding against a checkpoint, with the representation checked against
/// the stored schema.
pub fn greedy_decode_checkpoint(
    ckpt: &Checkpoint,
    v: &ReprVector,
    max_len: usize,
) -> Result<Vec<u32>, CaptionerError> {
    if v.dim() != ckpt.schema.dim() {
        return Err(CaptionerError::DimMismatch {
            want: ckpt.schema.dim(),
            got: v.dim(),
        });
    }
    greedy_decode(&ckpt.params, &ckpt.hp, &v.values, max_len)
}
