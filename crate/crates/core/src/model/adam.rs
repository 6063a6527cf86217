use crate::error::{Error, Result};
use crate::model::ParamTensors;

/// Bias-corrected Adam moments for a parameter set of type `P`.
#[derive(Debug, Clone)]
pub struct AdamState<P> {
    pub m: P,
    pub v: P,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl<P: ParamTensors + Clone> AdamState<P> {
    pub fn new(like: &P, learning_rate: f64) -> Self {
        let mut zero = like.clone();
        for (_, t) in zero.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        AdamState {
            m: zero.clone(),
            v: zero,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }
}

pub fn adam_step<P: ParamTensors>(params: &mut P, grads: &P, state: &mut AdamState<P>) -> Result<()> {
    let gl: Vec<usize> = grads.tensors().iter().map(|(_, t)| t.len()).collect();
    let pl: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
    let ml: Vec<usize> = state.m.tensors().iter().map(|(_, t)| t.len()).collect();
    if gl != pl || ml != pl {
        return Err(Error::shape("Adam: parameter, gradient and moment layouts differ"));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let lr = state.learning_rate;
    let eps = state.epsilon;

    let g_views = grads.tensors();
    let mut m_views = state.m.tensors_mut();
    let mut v_views = state.v.tensors_mut();
    for (gi, (_, p)) in params.tensors_mut().into_iter().enumerate() {
        let g = g_views[gi].1;
        let m = &mut *m_views[gi].1;
        let v = &mut *v_views[gi].1;
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![0.3, -4.0, 1e-3];
        let mut s = AdamState::new(&p, 1e-3);
        adam_step(&mut p, &g, &mut s).unwrap();
        let moved: Vec<f64> = p.iter().zip([1.0, -2.0, 0.5]).map(|(a, b)| a - b).collect();
        for (d, gi) in moved.iter().zip(&g) {
            assert!((d + 1e-3 * gi.signum()).abs() < 1e-7, "{d}");
        }
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, 2.0];
        let mut s = AdamState::new(&p, 1e-3);
        adam_step(&mut p, &vec![0.0, 0.0], &mut s).unwrap();
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn descends_quadratic_bowl() {
        // f(x) = Σ a_i (x_i - c_i)^2
        let a = [1.0, 3.0, 0.5];
        let c = [0.2, -0.7, 1.5];
        let f = |x: &[f64]| -> f64 { x.iter().zip(a).zip(c).map(|((x, a), c)| a * (x - c) * (x - c)).sum() };
        let mut x = vec![2.0, 1.0, -1.0];
        let mut s = AdamState::new(&x, 1e-3);
        let mut prev = f(&x);
        for _ in 0..3 {
            let g: Vec<f64> = x.iter().zip(a).zip(c).map(|((x, a), c)| 2.0 * a * (x - c)).collect();
            adam_step(&mut x, &g, &mut s).unwrap();
            let now = f(&x);
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let mut p = vec![1.0, 2.0];
        let mut s = AdamState::new(&p, 1e-3);
        assert!(adam_step(&mut p, &vec![0.0], &mut s).is_err());
    }
}
