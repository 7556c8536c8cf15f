//! From-scratch conditioned language model: ELU projection of the image
//! representation, a stacked LSTM trained with teacher forcing and Adam,
//! greedy decoding and self-contained checkpoints.

mod model;
#[cfg(test)]
mod tests;
mod train;

pub use model::{backward, forward_loss, greedy_decode, greedy_decode_checkpoint, project, Caches};
pub use train::{train, train_from_init, train_grid, tree_sum, GridSpec, ValData};

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::metrics::MetricsError;
use crate::repr::{ReprSchema, ReprVector};
use crate::rng::{substream, Stream};
use crate::ImageId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CaptionerError {
    #[error("representation dimension {got} does not match the projection input {want}")]
    DimMismatch { want: usize, got: usize },
    #[error("non-finite value at time step {step}")]
    NonFinite { step: usize },
    #[error("training diverged at epoch {epoch}, batch {batch}: {source}")]
    Diverged {
        epoch: usize,
        batch: usize,
        source: Box<CaptionerError>,
    },
    #[error("empty training dataset")]
    EmptyDataset,
    #[error("stale caches: parameters changed since the forward pass")]
    StaleCaches,
    #[error("invalid hyperparameters: {0}")]
    BadHyperParams(&'static str),
    #[error("token id {id} outside vocabulary of size {size}")]
    BadTokenId { id: u32, size: usize },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// How the projected image vector conditions the LSTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// h0 of every layer is set to x, cell states start at zero, BOS is the
    /// first input token. x must therefore have hidden_dim entries.
    #[default]
    HiddenInit,
    /// x is fed as a pseudo-token before BOS; states start at zero and x
    /// must have embed_dim entries.
    FirstInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub vocab_threshold: u32,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub clip_norm: f64,
    pub init_scale: f64,
    pub seed: u64,
    pub max_decode_len: usize,
    pub conditioning: Conditioning,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            embed_dim: 128,
            hidden_dim: 256,
            layers: 2,
            max_epochs: 50,
            batch_size: 50,
            dropout: 0.2,
            learning_rate: 1e-4,
            vocab_threshold: 2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            clip_norm: 5.0,
            init_scale: 0.08,
            seed: 0,
            max_decode_len: 20,
            conditioning: Conditioning::HiddenInit,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), CaptionerError> {
        let bad = |what| Err(CaptionerError::BadHyperParams(what));
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.layers == 0 {
            return bad("model dimensions must be positive");
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }

    /// Output dimension of the projection under the configured wiring.
    pub fn projection_dim(&self) -> usize {
        match self.conditioning {
            Conditioning::HiddenInit => self.hidden_dim,
            Conditioning::FirstInput => self.embed_dim,
        }
    }
}

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: alloc::vec![0.0; rows * cols],
        }
    }

    pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        Tensor { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// out += A x
    pub fn matvec_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            out[r] += acc;
        }
    }

    /// out += A^T d
    pub fn matvec_transpose_add(&self, d: &[f64], out: &mut [f64]) {
        debug_assert_eq!(d.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for r in 0..self.rows {
            let coef = d[r];
            if coef == 0.0 {
                continue;
            }
            let row = self.row(r);
            for (o, a) in out.iter_mut().zip(row) {
                *o += coef * a;
            }
        }
    }

    /// self += d (outer) x
    pub fn outer_add(&mut self, d: &[f64], x: &[f64]) {
        debug_assert_eq!(d.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for r in 0..self.rows {
            let coef = d[r];
            let row = self.row_mut(r);
            for (o, v) in row.iter_mut().zip(x) {
                *o += coef * v;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Weights of one LSTM layer; gates are stacked [input, forget, cell,
/// output] along the rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

/// Every trainable parameter of the captioner. The same struct doubles as
/// the container for gradients and Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// Projection of the image representation (projection_dim x repr_dim).
    pub proj: Tensor,
    /// Word embedding table (vocab x embed_dim).
    pub embed: Tensor,
    pub layers: Vec<LayerParams>,
    /// Output projection to the vocabulary (vocab x hidden_dim) and bias.
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl Params {
    /// Uniform(-init_scale, init_scale) init, drawn from the `Init`
    /// substream in a fixed tensor order.
    pub fn init(hp: &HyperParams, repr_dim: usize, vocab_size: usize) -> Self {
        let mut rng = substream(hp.seed, Stream::Init, 0);
        let s = hp.init_scale;
        let n = hp.hidden_dim;
        let e = hp.embed_dim;
        let proj = Tensor::uniform(&mut rng, hp.projection_dim(), repr_dim, s);
        let embed = Tensor::uniform(&mut rng, vocab_size, e, s);
        let mut layers = Vec::with_capacity(hp.layers);
        for l in 0..hp.layers {
            let in_dim = if l == 0 { e } else { n };
            layers.push(LayerParams {
                w_ih: Tensor::uniform(&mut rng, 4 * n, in_dim, s),
                w_hh: Tensor::uniform(&mut rng, 4 * n, n, s),
                bias: Tensor::uniform(&mut rng, 1, 4 * n, s),
            });
        }
        let out_w = Tensor::uniform(&mut rng, vocab_size, n, s);
        let out_b = Tensor::uniform(&mut rng, 1, vocab_size, s);
        Params {
            proj,
            embed,
            layers,
            out_w,
            out_b,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.data.fill(0.0);
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = alloc::vec![&self.proj, &self.embed];
        for l in &self.layers {
            out.push(&l.w_ih);
            out.push(&l.w_hh);
            out.push(&l.bias);
        }
        out.push(&self.out_w);
        out.push(&self.out_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = alloc::vec![&mut self.proj, &mut self.embed];
        for l in &mut self.layers {
            out.push(&mut l.w_ih);
            out.push(&mut l.w_hh);
            out.push(&mut l.bias);
        }
        out.push(&mut self.out_w);
        out.push(&mut self.out_b);
        out
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = alloc::vec![
            (String::from("proj"), &self.proj),
            (String::from("embed"), &self.embed),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((alloc::format!("layer{i}.w_ih"), &l.w_ih));
            out.push((alloc::format!("layer{i}.w_hh"), &l.w_hh));
            out.push((alloc::format!("layer{i}.bias"), &l.bias));
        }
        out.push((String::from("out_w"), &self.out_w));
        out.push((String::from("out_b"), &self.out_b));
        out
    }

    /// Drops the given input coordinates from the projection matrix; used by
    /// the ablation driver so an ablated run shares the baseline's init.
    pub fn without_projection_columns(&self, removed: &[core::ops::Range<usize>]) -> Self {
        let keep: Vec<usize> = (0..self.proj.cols)
            .filter(|i| !removed.iter().any(|r| r.contains(i)))
            .collect();
        let mut proj = Tensor::zeros(self.proj.rows, keep.len());
        for r in 0..self.proj.rows {
            for (new_c, &old_c) in keep.iter().enumerate() {
                proj.data[r * keep.len() + new_c] = self.proj.at(r, old_c);
            }
        }
        let mut out = self.clone();
        out.proj = proj;
        out
    }

    /// Cheap content fingerprint used to detect stale backward caches.
    pub fn fingerprint(&self) -> u64 {
        let mut acc = 0xcbf2_9ce4_8422_2325u64;
        for t in self.tensors() {
            for &x in &t.data {
                acc = acc.rotate_left(13) ^ x.to_bits();
            }
        }
        acc
    }
}

/// One (image representation, encoded caption) training pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub image_id: ImageId,
    pub repr: ReprVector,
    /// BOS + caption token ids + EOS.
    pub token_ids: Vec<u32>,
}

impl TrainExample {
    /// Number of prediction targets (all tokens after BOS).
    pub fn target_len(&self) -> usize {
        self.token_ids.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub epoch: usize,
    pub train_loss_per_token: f64,
    pub val_cider: Option<f64>,
}

/// Adam moment estimates, shaped like the parameters they track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// Self-contained model artifact: decoding needs nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: Params,
    pub hp: HyperParams,
    pub vocab: Vocabulary,
    pub schema: ReprSchema,
    pub adam: AdamState,
    pub log: Vec<TrainLogEntry>,
}

impl Checkpoint {
    /// Decoded caption text for a representation vector.
    pub fn caption(&self, v: &ReprVector) -> Result<String, CaptionerError> {
        let ids = greedy_decode_checkpoint(self, v, self.hp.max_decode_len)?;
        Ok(ids
            .iter()
            .map(|&id| self.vocab.decode(id))
            .collect::<Vec<_>>()
            .join(" "))
    }
}
