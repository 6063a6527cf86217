//! LSTM cell and bidirectional LSTM with exact backpropagation through time.
//!
//! Gate blocks are stacked in the order input, forget, cell candidate,
//! output: rows `[0, U)` of every weight matrix belong to the input gate,
//! `[U, 2U)` to the forget gate and so on.

use crate::error::{Error, Result};
use crate::layers::SeqTensor;
use crate::numerics::{axpy, glorot_uniform, sigmoid, Mat, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub input_size: usize,
    pub units: usize,
    /// `4U x D`
    pub w_ih: Mat,
    /// `4U x U`
    pub w_hh: Mat,
    /// `4U`
    pub bias: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input_size: usize, units: usize) -> Self {
        LstmParams {
            input_size,
            units,
            w_ih: Mat::zeros(4 * units, input_size),
            w_hh: Mat::zeros(4 * units, units),
            bias: vec![0.0; 4 * units],
        }
    }

    /// Glorot weights, zero bias except the forget block, which starts at 1.
    pub fn init(input_size: usize, units: usize, rng: &mut Rng) -> Result<Self> {
        let mut bias = vec![0.0; 4 * units];
        bias[units..2 * units].iter_mut().for_each(|b| *b = 1.0);
        Ok(LstmParams {
            input_size,
            units,
            w_ih: glorot_uniform(4 * units, input_size, rng)?,
            w_hh: glorot_uniform(4 * units, units, rng)?,
            bias,
        })
    }

    fn check(&self) -> Result<()> {
        let g = 4 * self.units;
        if self.w_ih.shape() != (g, self.input_size) || self.w_hh.shape() != (g, self.units) || self.bias.len() != g {
            return Err(Error::shape("LSTM parameters inconsistent with their dimensions"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl BiLstmParams {
    pub fn zeros(input_size: usize, units: usize) -> Self {
        BiLstmParams {
            forward: LstmParams::zeros(input_size, units),
            backward: LstmParams::zeros(input_size, units),
        }
    }

    pub fn init(input_size: usize, units: usize, rng: &mut Rng) -> Result<Self> {
        Ok(BiLstmParams {
            forward: LstmParams::init(input_size, units, rng)?,
            backward: LstmParams::init(input_size, units, rng)?,
        })
    }

    pub fn output_width(&self) -> usize {
        2 * self.forward.units
    }
}

/// Activations of one cell step.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Activated gates `[i | f | g | o]`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

impl LstmStepCache {
    pub fn h(&self) -> Vec<f64> {
        let u = self.c.len();
        (0..u).map(|k| self.gates[3 * u + k] * self.tanh_c[k]).collect()
    }
}

/// `pre` holds `W_ih x + b` on entry and is reused as scratch.
fn step(mut pre: Vec<f64>, h_prev: &[f64], c_prev: &[f64], p: &LstmParams) -> LstmStepCache {
    let u = p.units;
    for (a, row) in pre.iter_mut().zip(p.w_hh.data().chunks_exact(u)) {
        *a += crate::numerics::dot(row, h_prev);
    }
    for v in &mut pre[..2 * u] {
        *v = sigmoid(*v);
    }
    for v in &mut pre[2 * u..3 * u] {
        *v = v.tanh();
    }
    for v in &mut pre[3 * u..] {
        *v = sigmoid(*v);
    }
    let mut c = vec![0.0; u];
    let mut tanh_c = vec![0.0; u];
    for k in 0..u {
        c[k] = pre[u + k] * c_prev[k] + pre[k] * pre[2 * u + k];
        tanh_c[k] = c[k].tanh();
    }
    LstmStepCache {
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gates: pre,
        c,
        tanh_c,
    }
}

/// One LSTM step: returns `(h_t, c_t, cache)`.
pub fn lstm_cell_forward(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &LstmParams,
) -> Result<(Vec<f64>, Vec<f64>, LstmStepCache)> {
    p.check()?;
    if x.len() != p.input_size || h_prev.len() != p.units || c_prev.len() != p.units {
        return Err(Error::shape(format!(
            "LSTM cell D={} U={} given x {}, h {}, c {}",
            p.input_size,
            p.units,
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let mut pre = p.w_ih.matvec(x)?;
    axpy(1.0, &p.bias, &mut pre);
    let cache = step(pre, h_prev, c_prev, p);
    Ok((cache.h(), cache.c.clone(), cache))
}

/// Reverse of one cell step. Accumulates parameter gradients into `grads`
/// and returns `(dx, dh_prev, dc_prev)`.
fn step_backward(
    dh: &[f64],
    dc_next: &[f64],
    x: &[f64],
    cache: &LstmStepCache,
    p: &LstmParams,
    grads: &mut LstmParams,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let u = p.units;
    let g = &cache.gates;
    let mut da = vec![0.0; 4 * u];
    let mut dc_prev = vec![0.0; u];
    for k in 0..u {
        let (i, f, cand, o) = (g[k], g[u + k], g[2 * u + k], g[3 * u + k]);
        let tc = cache.tanh_c[k];
        let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
        da[k] = dc * cand * i * (1.0 - i);
        da[u + k] = dc * cache.c_prev[k] * f * (1.0 - f);
        da[2 * u + k] = dc * i * (1.0 - cand * cand);
        da[3 * u + k] = dh[k] * tc * o * (1.0 - o);
        dc_prev[k] = dc * f;
    }
    grads.w_ih.add_outer(&da, x);
    grads.w_hh.add_outer(&da, &cache.h_prev);
    axpy(1.0, &da, &mut grads.bias);
    let mut dx = vec![0.0; p.input_size];
    p.w_ih.matvec_t_acc(&da, &mut dx);
    let mut dh_prev = vec![0.0; u];
    p.w_hh.matvec_t_acc(&da, &mut dh_prev);
    (dx, dh_prev, dc_prev)
}

/// Step caches of both directions, indexed by original timestep.
#[derive(Debug, Clone)]
pub struct BpttCache {
    input: SeqTensor,
    forward: Vec<LstmStepCache>,
    backward: Vec<LstmStepCache>,
}

impl BpttCache {
    pub fn timesteps(&self) -> usize {
        self.input.timesteps()
    }
}

fn run_direction(x: &SeqTensor, p: &LstmParams, reverse: bool) -> Vec<LstmStepCache> {
    let t_len = x.timesteps();
    let mut caches: Vec<Option<LstmStepCache>> = vec![None; t_len];
    let mut h = vec![0.0; p.units];
    let mut c = vec![0.0; p.units];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..t_len).rev())
    } else {
        Box::new(0..t_len)
    };
    let mut pre = vec![0.0; 4 * p.units];
    for t in order {
        p.w_ih.matvec_into(x.step(t), &mut pre);
        axpy(1.0, &p.bias, &mut pre);
        let cache = step(pre.clone(), &h, &c, p);
        h = cache.h();
        c.copy_from_slice(&cache.c);
        caches[t] = Some(cache);
    }
    caches.into_iter().map(|c| c.expect("every step visited")).collect()
}

/// Bidirectional LSTM from zero initial states. Row `t` of the output is
/// `[forward h_t | backward h_t]`, the backward direction having consumed
/// steps `T-1 ..= t`.
pub fn bilstm_forward(x: &SeqTensor, p: &BiLstmParams) -> Result<(SeqTensor, BpttCache)> {
    p.forward.check()?;
    p.backward.check()?;
    if p.forward.input_size != p.backward.input_size || p.forward.units != p.backward.units {
        return Err(Error::shape("BiLSTM directions disagree on input size or units"));
    }
    if x.channels() != p.forward.input_size {
        return Err(Error::shape(format!(
            "BiLSTM expects {} input channels, got {}",
            p.forward.input_size,
            x.channels()
        )));
    }
    let u = p.forward.units;
    let fwd = run_direction(x, &p.forward, false);
    let bwd = run_direction(x, &p.backward, true);
    let mut out = SeqTensor::zeros(x.timesteps(), 2 * u);
    for t in 0..x.timesteps() {
        let row = out.step_mut(t);
        row[..u].copy_from_slice(&fwd[t].h());
        row[u..].copy_from_slice(&bwd[t].h());
    }
    Ok((
        out,
        BpttCache {
            input: x.clone(),
            forward: fwd,
            backward: bwd,
        },
    ))
}

/// Exact BPTT through both directions. Returns `(param grads, dx)`.
pub fn bilstm_backward(dh: &SeqTensor, cache: &BpttCache, p: &BiLstmParams) -> Result<(BiLstmParams, SeqTensor)> {
    let u = p.forward.units;
    let t_len = cache.timesteps();
    if dh.timesteps() != t_len || dh.channels() != 2 * u {
        return Err(Error::shape(format!(
            "BiLSTM upstream {}x{} for cached {}x{}",
            dh.timesteps(),
            dh.channels(),
            t_len,
            2 * u
        )));
    }
    let mut grads = BiLstmParams::zeros(p.forward.input_size, u);
    let mut dx = SeqTensor::zeros(t_len, p.forward.input_size);

    let mut carry_h = vec![0.0; u];
    let mut carry_c = vec![0.0; u];
    for t in (0..t_len).rev() {
        let mut g = dh.step(t)[..u].to_vec();
        axpy(1.0, &carry_h, &mut g);
        let (dxt, dhp, dcp) = step_backward(
            &g,
            &carry_c,
            cache.input.step(t),
            &cache.forward[t],
            &p.forward,
            &mut grads.forward,
        );
        axpy(1.0, &dxt, dx.step_mut(t));
        carry_h = dhp;
        carry_c = dcp;
    }

    carry_h.iter_mut().for_each(|v| *v = 0.0);
    carry_c.iter_mut().for_each(|v| *v = 0.0);
    for t in 0..t_len {
        let mut g = dh.step(t)[u..].to_vec();
        axpy(1.0, &carry_h, &mut g);
        let (dxt, dhp, dcp) = step_backward(
            &g,
            &carry_c,
            cache.input.step(t),
            &cache.backward[t],
            &p.backward,
            &mut grads.backward,
        );
        axpy(1.0, &dxt, dx.step_mut(t));
        carry_h = dhp;
        carry_c = dcp;
    }
    Ok((grads, dx))
}
