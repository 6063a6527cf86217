//! Whole-model central-difference gradient check.

use serde::Serialize;

use crate::error::Result;
use crate::model::{backward, forward, sparse_categorical_crossentropy, ModelConfig, ModelParams, ParamTensors};
use crate::numerics::{Mat, Rng};

/// Deliberate corruption of the analytic gradient, for testing the checker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fault {
    ScaleConvGradient(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    pub fault: Option<Fault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            tolerance: 1e-4,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub name: &'static str,
    pub entries: usize,
    /// Largest `|analytic - numeric| / max(1, |numeric|)` over the group.
    pub worst: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub tolerance: f64,
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.groups.iter().map(|g| g.worst).fold(0.0, f64::max)
    }

    pub fn failing(&self) -> Vec<&GroupReport> {
        self.groups.iter().filter(|g| !(g.worst <= self.tolerance)).collect()
    }

    pub fn passed(&self) -> bool {
        self.failing().is_empty()
    }

    pub fn render(&self) -> String {
        let mut s = format!("gradient check (eps={:e}, tol={:e})\n", self.epsilon, self.tolerance);
        for g in &self.groups {
            let flag = if g.worst <= self.tolerance { "ok" } else { "FAIL" };
            s.push_str(&format!(
                "  {:<24} {:>6} entries  worst {:.3e}  {flag}\n",
                g.name, g.entries, g.worst
            ));
        }
        s.push_str(&format!(
            "worst {:.3e}: {}\n",
            self.worst(),
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        s
    }
}

/// A random standard-normal batch with labels cycling through the classes.
pub fn random_batch(config: &ModelConfig, rows: usize, seed: u64) -> (Mat, Vec<usize>) {
    let mut rng = Rng::new(seed);
    let data = (0..rows * config.input_features).map(|_| rng.normal()).collect();
    let labels = (0..rows).map(|i| i % config.num_classes).collect();
    (
        Mat::new(rows, config.input_features, data).expect("batch shape"),
        labels,
    )
}

fn loss_at(params: &ModelParams, config: &ModelConfig, batch: &Mat, labels: &[usize]) -> Result<f64> {
    let (probs, _) = forward(params, config, batch, false, &mut Rng::new(0))?;
    Ok(sparse_categorical_crossentropy(&probs, labels)?.0)
}

/// Compare backprop against central differences for every parameter of a
/// freshly built model, with dropout disabled.
pub fn gradient_check(
    config: &ModelConfig,
    batch: &Mat,
    labels: &[usize],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let params = ModelParams::build(config)?;
    gradient_check_params(&params, config, batch, labels, opts)
}

pub fn gradient_check_params(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &Mat,
    labels: &[usize],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (probs, cache) = forward(params, config, batch, false, &mut Rng::new(0))?;
    let (_, d_logits) = sparse_categorical_crossentropy(&probs, labels)?;
    let mut grads = backward(params, config, &cache, &d_logits)?;
    if let Some(Fault::ScaleConvGradient(s)) = opts.fault {
        grads.conv.weights.iter_mut().for_each(|g| *g *= s);
    }

    let mut probe = params.clone();
    let n_groups = params.tensors().len();
    let mut groups = Vec::with_capacity(n_groups);
    for gi in 0..n_groups {
        let (name, analytic) = grads.tensors()[gi];
        let mut worst: f64 = 0.0;
        for k in 0..analytic.len() {
            let orig = probe.tensors()[gi].1[k];
            probe.tensors_mut()[gi].1[k] = orig + opts.epsilon;
            let up = loss_at(&probe, config, batch, labels)?;
            probe.tensors_mut()[gi].1[k] = orig - opts.epsilon;
            let down = loss_at(&probe, config, batch, labels)?;
            probe.tensors_mut()[gi].1[k] = orig;
            let numeric = (up - down) / (2.0 * opts.epsilon);
            worst = worst.max((analytic[k] - numeric).abs() / numeric.abs().max(1.0));
        }
        groups.push(GroupReport {
            name,
            entries: analytic.len(),
            worst,
        });
    }
    Ok(GradCheckReport {
        epsilon: opts.epsilon,
        tolerance: opts.tolerance,
        groups,
    })
}
