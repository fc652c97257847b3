//! Finite-difference verification of the backward pass.
//!
//! Central differences with a step scaled to each element's magnitude, run
//! against the evaluation-mode forward only — this side never touches the
//! reverse-mode code it is checking.

use crate::error::Result;
use crate::model::{backward, forward, loss, ModelParams, TrainSample};

/// Worst relative error per parameter tensor.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<(String, f64)>,
    pub worst: f64,
    pub worst_param: String,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.worst
    }
}

/// Compare reverse-mode gradients against central finite differences for
/// every element of every named parameter. `eps` scales the step
/// (`h = eps · max(1, |θ|)`); relative error uses a 1e-6 floor so near-zero
/// gradients compare on absolute terms.
pub fn check_gradients(
    sample: &TrainSample,
    params: &ModelParams,
    beta: f64,
    eps: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = backward(sample, params, beta, None)?;

    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut per_param = Vec::with_capacity(names.len());
    let mut worst = 0.0f64;
    let mut worst_param = String::new();

    for name in &names {
        let len = probe.get(name).numel();
        let grad = analytic.get(name).expect("backward covers every parameter");
        let mut tensor_worst = 0.0f64;
        for i in 0..len {
            let original = probe.get(name).data()[i];
            let h = eps * original.abs().max(1.0);

            probe.get_mut(name).data_mut()[i] = original + h;
            let up = eval_loss(sample, &probe, beta)?;
            probe.get_mut(name).data_mut()[i] = original - h;
            let down = eval_loss(sample, &probe, beta)?;
            probe.get_mut(name).data_mut()[i] = original;

            let fd = (up - down) / (2.0 * h);
            let g = grad.data()[i];
            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
            tensor_worst = tensor_worst.max(rel);
        }
        if tensor_worst > worst {
            worst = tensor_worst;
            worst_param = name.clone();
        }
        per_param.push((name.clone(), tensor_worst));
    }
    Ok(GradCheckReport { per_param, worst, worst_param })
}

fn eval_loss(sample: &TrainSample, params: &ModelParams, beta: f64) -> Result<f64> {
    let out = forward(sample, params)?;
    Ok(loss(&out, &sample.caption, sample.subtype, beta)?.total)
}
