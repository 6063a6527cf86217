use crate::attention::AttentionParams;
use crate::error::{Error, Result};
use crate::layers::{Conv1DParams, DenseParams};
use crate::model::ModelConfig;
use crate::numerics::Rng;
use crate::recurrent::{BiLstmParams, LstmParams};

/// Flat, named views over every learnable array.
///
/// Iteration order is fixed; the checkpoint format and the optimizer rely on it.
pub trait ParamTensors {
    fn tensors(&self) -> Vec<(&'static str, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])>;

    fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

impl ParamTensors for Vec<f64> {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![("values", self.as_slice())]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![("values", self.as_mut_slice())]
    }
}

/// Every learnable array of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub conv: Conv1DParams,
    pub bilstm1: BiLstmParams,
    pub attn: AttentionParams,
    pub bilstm2: BiLstmParams,
    pub dense_hidden: DenseParams,
    pub dense_out: DenseParams,
}

/// Gradients mirror the parameter layout exactly.
pub type Gradients = ModelParams;

pub const GROUP_NAMES: [&str; 21] = [
    "conv.weights",
    "conv.bias",
    "bilstm1.forward.w_ih",
    "bilstm1.forward.w_hh",
    "bilstm1.forward.bias",
    "bilstm1.backward.w_ih",
    "bilstm1.backward.w_hh",
    "bilstm1.backward.bias",
    "attention.w1",
    "attention.w2",
    "attention.v",
    "bilstm2.forward.w_ih",
    "bilstm2.forward.w_hh",
    "bilstm2.forward.bias",
    "bilstm2.backward.w_ih",
    "bilstm2.backward.w_hh",
    "bilstm2.backward.bias",
    "dense_hidden.weights",
    "dense_hidden.bias",
    "dense_out.weights",
    "dense_out.bias",
];

impl ModelParams {
    /// Freshly initialized parameters; deterministic in `config.seed`.
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.seed);
        let h = config.bilstm_width();
        Ok(ModelParams {
            conv: Conv1DParams::glorot(config.kernel_size, 1, config.conv_filters, &mut rng)?,
            bilstm1: BiLstmParams::init(config.conv_filters, config.bilstm_units_per_direction, &mut rng)?,
            attn: AttentionParams::init(config.attention_width, h, &mut rng)?,
            bilstm2: BiLstmParams::init(h, config.bilstm_units_per_direction, &mut rng)?,
            dense_hidden: DenseParams::glorot(config.combined_width(), config.dense_units, &mut rng)?,
            dense_out: DenseParams::glorot(config.dense_units, config.num_classes, &mut rng)?,
        })
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.bilstm_width();
        let u = config.bilstm_units_per_direction;
        ModelParams {
            conv: Conv1DParams::zeros(config.kernel_size, 1, config.conv_filters),
            bilstm1: BiLstmParams::zeros(config.conv_filters, u),
            attn: AttentionParams::zeros(config.attention_width, h),
            bilstm2: BiLstmParams::zeros(h, u),
            dense_hidden: DenseParams::zeros(config.combined_width(), config.dense_units),
            dense_out: DenseParams::zeros(config.dense_units, config.num_classes),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    /// Element counts per group, in `GROUP_NAMES` order.
    pub fn group_lengths(&self) -> Vec<usize> {
        self.tensors().iter().map(|(_, t)| t.len()).collect()
    }

    /// Errors unless every array has the shape `config` implies.
    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let expected = ModelParams::zeros(config);
        for ((name, have), (_, want)) in self.tensors().iter().zip(expected.tensors().iter()) {
            if have.len() != want.len() {
                return Err(Error::shape(format!(
                    "{name} has {} values, config implies {}",
                    have.len(),
                    want.len()
                )));
            }
        }
        if self.dense_hidden.weights.shape() != expected.dense_hidden.weights.shape()
            || self.dense_out.weights.shape() != expected.dense_out.weights.shape()
        {
            return Err(Error::shape("dense layer shapes disagree with config"));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

fn lstm_views(p: &LstmParams) -> [&[f64]; 3] {
    [p.w_ih.data(), p.w_hh.data(), &p.bias]
}

fn lstm_views_mut(p: &mut LstmParams) -> [&mut [f64]; 3] {
    let LstmParams { w_ih, w_hh, bias, .. } = p;
    [w_ih.data_mut(), w_hh.data_mut(), bias.as_mut_slice()]
}

impl ParamTensors for ModelParams {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut views: Vec<&[f64]> = vec![&self.conv.weights, &self.conv.bias];
        views.extend(lstm_views(&self.bilstm1.forward));
        views.extend(lstm_views(&self.bilstm1.backward));
        views.extend([self.attn.w1.data(), self.attn.w2.data(), self.attn.v.data()]);
        views.extend(lstm_views(&self.bilstm2.forward));
        views.extend(lstm_views(&self.bilstm2.backward));
        views.extend([
            self.dense_hidden.weights.data(),
            &self.dense_hidden.bias,
            self.dense_out.weights.data(),
            &self.dense_out.bias,
        ]);
        GROUP_NAMES.iter().copied().zip(views).collect()
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let ModelParams {
            conv,
            bilstm1,
            attn,
            bilstm2,
            dense_hidden,
            dense_out,
        } = self;
        let mut views: Vec<&mut [f64]> = vec![conv.weights.as_mut_slice(), conv.bias.as_mut_slice()];
        views.extend(lstm_views_mut(&mut bilstm1.forward));
        views.extend(lstm_views_mut(&mut bilstm1.backward));
        let AttentionParams { w1, w2, v } = attn;
        views.extend([w1.data_mut(), w2.data_mut(), v.data_mut()]);
        views.extend(lstm_views_mut(&mut bilstm2.forward));
        views.extend(lstm_views_mut(&mut bilstm2.backward));
        views.extend([
            dense_hidden.weights.data_mut(),
            dense_hidden.bias.as_mut_slice(),
            dense_out.weights.data_mut(),
            dense_out.bias.as_mut_slice(),
        ]);
        GROUP_NAMES.iter().copied().zip(views).collect()
    }
}
