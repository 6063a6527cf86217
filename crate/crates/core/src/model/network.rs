//! Whole-network forward and backward passes.
//!
//! Pipeline per sample:
//!
//! ```text
//! x (F) -> 1-channel sequence -> conv + ReLU (F-K+1 x filters) -> max pool
//!       -> BiLSTM 1 -> dropout -> additive attention -> contexts as a sequence
//!       -> BiLSTM 2 -> [flatten(conv output), flatten(BiLSTM 2 output)]
//! ```
//!
//! The concatenated rows of a batch then go through the dense head
//! (ReLU hidden layer, dropout, softmax output) as one matrix.

use crate::attention::{attention_backward, attention_forward, select_queries, AttentionCache};
use crate::error::{Error, Result};
use crate::layers::{
    conv1d_backward, conv1d_forward, dense_backward_batch, dense_backward_preact_batch, dense_forward_batch,
    dropout_backward, dropout_forward, maxpool1d_backward, maxpool1d_forward, Activation, ConvCache, DenseCache,
    DropoutMask, PoolCache, SeqTensor,
};
use crate::model::{Gradients, ModelConfig, ModelParams, ParamTensors};
use crate::numerics::{axpy, Mat, Rng};
use crate::recurrent::{bilstm_backward, bilstm_forward, BpttCache};

/// Intermediate state of one sample, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct SampleCache {
    conv: ConvCache,
    conv_output: SeqTensor,
    pool: PoolCache,
    pooled: SeqTensor,
    lstm1: BpttCache,
    bilstm1_output: SeqTensor,
    drop1: DropoutMask,
    attn: AttentionCache,
    attention_weights: Mat,
    lstm2: BpttCache,
    bilstm2_output: SeqTensor,
}

impl SampleCache {
    pub fn conv_output(&self) -> &SeqTensor {
        &self.conv_output
    }

    pub fn pooled(&self) -> &SeqTensor {
        &self.pooled
    }

    pub fn bilstm1_output(&self) -> &SeqTensor {
        &self.bilstm1_output
    }

    /// `queries x timesteps`
    pub fn attention_weights(&self) -> &Mat {
        &self.attention_weights
    }

    pub fn bilstm2_output(&self) -> &SeqTensor {
        &self.bilstm2_output
    }

    pub fn first_dropout(&self) -> &DropoutMask {
        &self.drop1
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    samples: Vec<SampleCache>,
    hidden: DenseCache,
    drop2: Vec<DropoutMask>,
    out: DenseCache,
}

impl ForwardCache {
    pub fn samples(&self) -> &[SampleCache] {
        &self.samples
    }

    /// Post-ReLU hidden activations, before dropout.
    pub fn hidden_activations(&self) -> &Mat {
        self.hidden.output()
    }

    pub fn hidden_dropout(&self) -> &[DropoutMask] {
        &self.drop2
    }
}

fn sample_forward(
    params: &ModelParams,
    config: &ModelConfig,
    features: &[f64],
    dropout_rng: Option<&mut Rng>,
) -> Result<(Vec<f64>, SampleCache)> {
    let x = SeqTensor::from_features(features)?;
    let (conv_output, conv) = conv1d_forward(&x, &params.conv, Activation::Relu)?;
    let (pooled, pool) = maxpool1d_forward(&conv_output, config.pool_size)?;
    let (bilstm1_output, lstm1) = bilstm_forward(&pooled, &params.bilstm1)?;

    let (keys, drop1) = match dropout_rng {
        Some(rng) => dropout_forward(bilstm1_output.data(), config.dropout_rate, true, rng)?,
        None => (bilstm1_output.data().to_vec(), DropoutMask::identity()),
    };
    let keys = SeqTensor::new(bilstm1_output.timesteps(), bilstm1_output.channels(), keys)?;
    let queries = select_queries(&keys, config.attention_mode);
    let (attended, attn) = attention_forward(&keys, &queries, &params.attn)?;
    let contexts = SeqTensor::from_mat(&attended.contexts)?;
    let (bilstm2_output, lstm2) = bilstm_forward(&contexts, &params.bilstm2)?;

    let mut combined = Vec::with_capacity(config.combined_width());
    combined.extend_from_slice(conv_output.data());
    combined.extend_from_slice(bilstm2_output.data());
    let cache = SampleCache {
        conv,
        conv_output,
        pool,
        pooled,
        lstm1,
        bilstm1_output,
        drop1,
        attn,
        attention_weights: attended.weights,
        lstm2,
        bilstm2_output,
    };
    Ok((combined, cache))
}

/// Class probabilities for every row of `batch`.
///
/// `training` enables both dropout layers, drawing masks from `rng`;
/// inference mode leaves `rng` untouched.
pub fn forward(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &Mat,
    training: bool,
    rng: &mut Rng,
) -> Result<(Mat, ForwardCache)> {
    if batch.cols() != config.input_features {
        return Err(Error::shape(format!(
            "model expects {} features per row, batch has {}",
            config.input_features,
            batch.cols()
        )));
    }
    if batch.rows() == 0 {
        return Err(Error::shape("empty batch"));
    }
    let mut combined = Mat::zeros(batch.rows(), config.combined_width());
    let mut samples = Vec::with_capacity(batch.rows());
    for r in 0..batch.rows() {
        let drop_rng = if training { Some(&mut *rng) } else { None };
        let (row, cache) = sample_forward(params, config, batch.row(r), drop_rng)?;
        combined.row_mut(r).copy_from_slice(&row);
        samples.push(cache);
    }

    let (mut hidden_act, hidden) = dense_forward_batch(&combined, &params.dense_hidden, Activation::Relu)?;
    let mut drop2 = Vec::with_capacity(batch.rows());
    for r in 0..hidden_act.rows() {
        let (dropped, mask) = dropout_forward(hidden_act.row(r), config.dropout_rate, training, rng)?;
        hidden_act.row_mut(r).copy_from_slice(&dropped);
        drop2.push(mask);
    }
    let (probs, out) = dense_forward_batch(&hidden_act, &params.dense_out, Activation::Softmax)?;
    if !probs.is_finite() {
        return Err(Error::NonFinite("model forward".into()));
    }
    Ok((
        probs,
        ForwardCache {
            samples,
            hidden,
            drop2,
            out,
        },
    ))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    axpy(1.0, src, dst);
}

/// Gradients of every parameter given the loss gradient w.r.t. the
/// output logits (pre-softmax), one row per sample.
pub fn backward(params: &ModelParams, config: &ModelConfig, cache: &ForwardCache, d_logits: &Mat) -> Result<Gradients> {
    let n = cache.samples.len();
    if d_logits.shape() != (n, config.num_classes) {
        return Err(Error::shape(format!(
            "logit gradient {:?} for a cached batch of {n} x {}",
            d_logits.shape(),
            config.num_classes
        )));
    }
    let mut grads = ModelParams::zeros(config);

    let (g_out, d_dropped) = dense_backward_preact_batch(d_logits, &cache.out, &params.dense_out)?;
    grads.dense_out = g_out;
    let mut d_hidden = Mat::zeros(d_dropped.rows(), d_dropped.cols());
    for r in 0..n {
        let g = dropout_backward(d_dropped.row(r), &cache.drop2[r])?;
        d_hidden.row_mut(r).copy_from_slice(&g);
    }
    let (g_hidden, d_combined) = dense_backward_batch(&d_hidden, &cache.hidden, &params.dense_hidden)?;
    grads.dense_hidden = g_hidden;

    let conv_width = config.conv_len() * config.conv_filters;
    for (s, sample) in cache.samples.iter().enumerate() {
        let row = d_combined.row(s);
        let d_h2 = SeqTensor::new(config.query_count(), config.bilstm_width(), row[conv_width..].to_vec())?;
        let (g2, d_ctx) = bilstm_backward(&d_h2, &sample.lstm2, &params.bilstm2)?;
        let (ga, mut d_keys, d_queries) = attention_backward(&d_ctx.to_mat(), &sample.attn, &params.attn)?;
        // Queries are themselves BiLSTM states.
        let t_len = d_keys.timesteps();
        match config.attention_mode {
            crate::attention::QueryMode::Final => add_into(d_keys.step_mut(t_len - 1), d_queries.row(0)),
            crate::attention::QueryMode::All => add_into(d_keys.data_mut(), d_queries.data()),
        }
        let d_h1 = dropout_backward(d_keys.data(), &sample.drop1)?;
        let d_h1 = SeqTensor::new(t_len, config.bilstm_width(), d_h1)?;
        let (g1, d_pooled) = bilstm_backward(&d_h1, &sample.lstm1, &params.bilstm1)?;
        let mut d_conv = maxpool1d_backward(&d_pooled, &sample.pool)?;
        add_into(d_conv.data_mut(), &row[..conv_width]);
        let (gc, _) = conv1d_backward(&d_conv, &sample.conv, &params.conv)?;

        add_into(&mut grads.conv.weights, &gc.weights);
        add_into(&mut grads.conv.bias, &gc.bias);
        for (dst, src) in [(&mut grads.bilstm1, &g1), (&mut grads.bilstm2, &g2)] {
            for (d, s) in [(&mut dst.forward, &src.forward), (&mut dst.backward, &src.backward)] {
                add_into(d.w_ih.data_mut(), s.w_ih.data());
                add_into(d.w_hh.data_mut(), s.w_hh.data());
                add_into(&mut d.bias, &s.bias);
            }
        }
        add_into(grads.attn.w1.data_mut(), ga.w1.data());
        add_into(grads.attn.w2.data_mut(), ga.w2.data());
        add_into(grads.attn.v.data_mut(), ga.v.data());
    }
    if !grads.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("model backward".into()));
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::QueryMode;
    use crate::layers::dense_forward;
    use crate::model::gradcheck::random_batch;

    fn setup(mode: QueryMode) -> (ModelConfig, ModelParams) {
        let cfg = ModelConfig {
            input_features: 12,
            num_classes: 4,
            conv_filters: 3,
            bilstm_units_per_direction: 3,
            attention_width: 5,
            dense_units: 7,
            attention_mode: mode,
            seed: 4,
            ..ModelConfig::default()
        };
        let p = ModelParams::build(&cfg).unwrap();
        (cfg, p)
    }

    #[test]
    fn rows_are_distributions_in_both_modes() {
        for mode in [QueryMode::Final, QueryMode::All] {
            let (cfg, p) = setup(mode);
            let (batch, _) = random_batch(&cfg, 5, 1);
            for training in [false, true] {
                let (probs, _) = forward(&p, &cfg, &batch, training, &mut Rng::new(2)).unwrap();
                for r in 0..5 {
                    assert!((probs.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn identical_rows_identical_outputs() {
        let (cfg, p) = setup(QueryMode::Final);
        let (one, _) = random_batch(&cfg, 1, 3);
        let twice = Mat::from_rows(&[one.row(0).to_vec(), one.row(0).to_vec()]).unwrap();
        let (probs, _) = forward(&p, &cfg, &twice, false, &mut Rng::new(0)).unwrap();
        assert_eq!(probs.row(0), probs.row(1));
    }

    #[test]
    fn matches_hand_composition() {
        for mode in [QueryMode::Final, QueryMode::All] {
            let (cfg, p) = setup(mode);
            let (batch, _) = random_batch(&cfg, 1, 5);
            let (probs, cache) = forward(&p, &cfg, &batch, false, &mut Rng::new(0)).unwrap();

            let x = SeqTensor::from_features(batch.row(0)).unwrap();
            let (c, _) = conv1d_forward(&x, &p.conv, Activation::Relu).unwrap();
            let (pooled, _) = maxpool1d_forward(&c, cfg.pool_size).unwrap();
            let (h1, _) = bilstm_forward(&pooled, &p.bilstm1).unwrap();
            let q = select_queries(&h1, mode);
            let (att, _) = attention_forward(&h1, &q, &p.attn).unwrap();
            let (h2, _) = bilstm_forward(&SeqTensor::from_mat(&att.contexts).unwrap(), &p.bilstm2).unwrap();
            let mut combined = c.data().to_vec();
            combined.extend_from_slice(h2.data());
            assert_eq!(combined.len(), cfg.combined_width());
            let (hidden, _) = dense_forward(&combined, &p.dense_hidden, Activation::Relu).unwrap();
            let (out, _) = dense_forward(&hidden, &p.dense_out, Activation::Softmax).unwrap();

            for (a, b) in probs.row(0).iter().zip(&out) {
                assert!((a - b).abs() < 1e-12, "{mode}");
            }
            assert_eq!(
                cache.samples()[0].attention_weights().shape(),
                (q.rows(), pooled.timesteps())
            );
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let (cfg, p) = setup(QueryMode::All);
        let (batch, _) = random_batch(&cfg, 3, 6);
        let (_, cache) = forward(&p, &cfg, &batch, true, &mut Rng::new(1)).unwrap();
        let g = backward(&p, &cfg, &cache, &Mat::zeros(3, cfg.num_classes)).unwrap();
        assert!(g.tensors().iter().all(|(_, t)| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn masked_hidden_units_get_no_gradient() {
        let (cfg, p) = setup(QueryMode::Final);
        let (batch, _) = random_batch(&cfg, 1, 8);
        let mut rng = Rng::new(3);
        let (cache, masked) = loop {
            let (_, cache) = forward(&p, &cfg, &batch, true, &mut rng).unwrap();
            let scales = cache.hidden_dropout()[0].scales().unwrap().to_vec();
            let masked: Vec<usize> = (0..scales.len()).filter(|&j| scales[j] == 0.0).collect();
            if !masked.is_empty() {
                break (cache, masked);
            }
        };
        let d = Mat::from_rows(&[vec![0.3, -0.1, -0.4, 0.2]]).unwrap();
        let g = backward(&p, &cfg, &cache, &d).unwrap();
        for j in masked {
            for k in 0..cfg.num_classes {
                assert_eq!(g.dense_out.weights.get(k, j), 0.0);
            }
            assert_eq!(g.dense_hidden.bias[j], 0.0);
            assert!(g.dense_hidden.weights.row(j).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn width_mismatch_and_cache_mismatch() {
        let (cfg, p) = setup(QueryMode::Final);
        assert!(matches!(
            forward(&p, &cfg, &Mat::zeros(2, 11), false, &mut Rng::new(0)),
            Err(Error::Shape(_))
        ));
        let (batch, _) = random_batch(&cfg, 2, 0);
        let (_, cache) = forward(&p, &cfg, &batch, false, &mut Rng::new(0)).unwrap();
        assert!(matches!(
            backward(&p, &cfg, &cache, &Mat::zeros(3, 4)),
            Err(Error::Shape(_))
        ));
    }
}
