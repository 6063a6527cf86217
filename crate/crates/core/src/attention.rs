//! Additive attention over BiLSTM states.
//!
//! For key `h_i` and query `q_j`:
//!
//! ```text
//! score(j, i) = V · tanh(W1 h_i + W2 q_j)
//! alpha(j, ·) = softmax_i score(j, i)
//! c_j         = Σ_i alpha(j, i) h_i
//! ```
//!
//! Matrices indexed by query come first: scores and weights are
//! `queries x timesteps`, contexts are `queries x H`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::SeqTensor;
use crate::numerics::{axpy, dot, glorot_uniform, softmax_in_place, Mat, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// `A x H`, applied to keys.
    pub w1: Mat,
    /// `A x H`, applied to queries.
    pub w2: Mat,
    /// `1 x A`
    pub v: Mat,
}

impl AttentionParams {
    pub fn zeros(width: usize, hidden: usize) -> Self {
        AttentionParams {
            w1: Mat::zeros(width, hidden),
            w2: Mat::zeros(width, hidden),
            v: Mat::zeros(1, width),
        }
    }

    pub fn init(width: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        Ok(AttentionParams {
            w1: glorot_uniform(width, hidden, rng)?,
            w2: glorot_uniform(width, hidden, rng)?,
            v: glorot_uniform(1, width, rng)?,
        })
    }

    pub fn width(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    fn check(&self) -> Result<()> {
        if self.w2.shape() != self.w1.shape() || self.v.shape() != (1, self.w1.rows()) {
            return Err(Error::shape(format!(
                "attention W1 {:?}, W2 {:?}, V {:?} are inconsistent",
                self.w1.shape(),
                self.w2.shape(),
                self.v.shape()
            )));
        }
        Ok(())
    }
}

/// Which BiLSTM states act as queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    /// A single query: the last state.
    #[default]
    Final,
    /// Every state is a query; one context per timestep.
    All,
}

impl QueryMode {
    pub fn query_count(self, timesteps: usize) -> usize {
        match self {
            QueryMode::Final => 1,
            QueryMode::All => timesteps,
        }
    }
}

impl std::str::FromStr for QueryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(QueryMode::Final),
            "all" => Ok(QueryMode::All),
            other => Err(Error::Config(format!(
                "attention mode must be `final` or `all`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for QueryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            QueryMode::Final => "final",
            QueryMode::All => "all",
        })
    }
}

pub fn select_queries(keys: &SeqTensor, mode: QueryMode) -> Mat {
    match mode {
        QueryMode::Final => {
            let last = keys.step(keys.timesteps() - 1);
            Mat::new(1, last.len(), last.to_vec()).expect("row shape")
        }
        QueryMode::All => keys.to_mat(),
    }
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// `queries x timesteps`, each row a distribution.
    pub weights: Mat,
    /// `queries x H`
    pub contexts: Mat,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    keys: SeqTensor,
    queries: Mat,
    /// `tanh(W1 h_i + W2 q_j)` stored at `[(j * T + i) * A ..]`.
    hidden: Vec<f64>,
    weights: Mat,
}

fn check_widths(keys: &SeqTensor, queries: &Mat, p: &AttentionParams) -> Result<()> {
    p.check()?;
    if keys.channels() != p.hidden() || queries.cols() != p.hidden() {
        return Err(Error::shape(format!(
            "attention over width {} given keys of width {} and queries of width {}",
            p.hidden(),
            keys.channels(),
            queries.cols()
        )));
    }
    Ok(())
}

fn hidden_and_scores(keys: &SeqTensor, queries: &Mat, p: &AttentionParams) -> (Vec<f64>, Mat) {
    let a = p.width();
    let t_len = keys.timesteps();
    let q_len = queries.rows();
    let mut key_proj = vec![0.0; t_len * a];
    for i in 0..t_len {
        p.w1.matvec_into(keys.step(i), &mut key_proj[i * a..(i + 1) * a]);
    }
    let mut query_proj = vec![0.0; a];
    let mut hidden = vec![0.0; q_len * t_len * a];
    let mut scores = Mat::zeros(q_len, t_len);
    let v = p.v.row(0);
    for j in 0..q_len {
        p.w2.matvec_into(queries.row(j), &mut query_proj);
        for i in 0..t_len {
            let off = (j * t_len + i) * a;
            let cell = &mut hidden[off..off + a];
            for ((h, &kp), &qp) in cell.iter_mut().zip(&key_proj[i * a..(i + 1) * a]).zip(&query_proj) {
                *h = (kp + qp).tanh();
            }
            scores.set(j, i, dot(v, cell));
        }
    }
    (hidden, scores)
}

/// One score per (query, timestep) pair.
pub fn attention_scores(keys: &SeqTensor, queries: &Mat, p: &AttentionParams) -> Result<Mat> {
    check_widths(keys, queries, p)?;
    Ok(hidden_and_scores(keys, queries, p).1)
}

/// Softmax over timesteps, separately for every query row.
pub fn attention_weights(scores: &Mat) -> Result<Mat> {
    if scores.cols() == 0 {
        return Err(Error::shape("attention weights over zero timesteps"));
    }
    let mut w = scores.clone();
    for j in 0..w.rows() {
        softmax_in_place(w.row_mut(j));
    }
    Ok(w)
}

pub fn context_vectors(weights: &Mat, keys: &SeqTensor) -> Result<Mat> {
    if weights.cols() != keys.timesteps() {
        return Err(Error::shape(format!(
            "attention weights span {} timesteps but keys have {}",
            weights.cols(),
            keys.timesteps()
        )));
    }
    let mut ctx = Mat::zeros(weights.rows(), keys.channels());
    for j in 0..weights.rows() {
        let dst = ctx.row_mut(j);
        for (i, &w) in weights.row(j).iter().enumerate() {
            axpy(w, keys.step(i), dst);
        }
    }
    Ok(ctx)
}

pub fn attention_forward(
    keys: &SeqTensor,
    queries: &Mat,
    p: &AttentionParams,
) -> Result<(AttentionOutput, AttentionCache)> {
    check_widths(keys, queries, p)?;
    let (hidden, scores) = hidden_and_scores(keys, queries, p);
    let weights = attention_weights(&scores)?;
    let contexts = context_vectors(&weights, keys)?;
    let cache = AttentionCache {
        keys: keys.clone(),
        queries: queries.clone(),
        hidden,
        weights: weights.clone(),
    };
    Ok((AttentionOutput { weights, contexts }, cache))
}

/// Gradient w.r.t. scores for one query row: `(diag(α) − α αᵀ) dα`.
pub fn softmax_backward(alpha: &[f64], d_alpha: &[f64]) -> Vec<f64> {
    let s = dot(alpha, d_alpha);
    alpha.iter().zip(d_alpha).map(|(a, g)| a * (g - s)).collect()
}

/// Returns `(param grads, d_keys, d_queries)`.
pub fn attention_backward(
    d_contexts: &Mat,
    cache: &AttentionCache,
    p: &AttentionParams,
) -> Result<(AttentionParams, SeqTensor, Mat)> {
    let keys = &cache.keys;
    let (t_len, h) = (keys.timesteps(), keys.channels());
    let q_len = cache.queries.rows();
    let a = p.width();
    if d_contexts.shape() != (q_len, h) {
        return Err(Error::shape(format!(
            "context gradient {:?} for cached contexts {:?}",
            d_contexts.shape(),
            (q_len, h)
        )));
    }
    let mut grads = AttentionParams::zeros(a, h);
    let mut d_keys = SeqTensor::zeros(t_len, h);
    let mut d_queries = Mat::zeros(q_len, h);
    // Sums of pre-tanh gradients per key and per query, fed through W1 / W2 once.
    let mut dz_key = vec![0.0; t_len * a];
    let mut dz_query = vec![0.0; a];
    let v = p.v.row(0);

    for j in 0..q_len {
        let dc = d_contexts.row(j);
        let alpha = cache.weights.row(j);
        let mut d_alpha = vec![0.0; t_len];
        for i in 0..t_len {
            axpy(alpha[i], dc, d_keys.step_mut(i));
            d_alpha[i] = dot(dc, keys.step(i));
        }
        let d_score = softmax_backward(alpha, &d_alpha);
        dz_query.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..t_len {
            let off = (j * t_len + i) * a;
            let cell = &cache.hidden[off..off + a];
            let ds = d_score[i];
            if ds == 0.0 {
                continue;
            }
            axpy(ds, cell, grads.v.row_mut(0));
            let dzk = &mut dz_key[i * a..(i + 1) * a];
            for k in 0..a {
                let dz = ds * v[k] * (1.0 - cell[k] * cell[k]);
                dzk[k] += dz;
                dz_query[k] += dz;
            }
        }
        grads.w2.add_outer(&dz_query, cache.queries.row(j));
        p.w2.matvec_t_acc(&dz_query, d_queries.row_mut(j));
    }
    for i in 0..t_len {
        let dzk = &dz_key[i * a..(i + 1) * a];
        grads.w1.add_outer(dzk, keys.step(i));
        p.w1.matvec_t_acc(dzk, d_keys.step_mut(i));
    }
    Ok((grads, d_keys, d_queries))
}
