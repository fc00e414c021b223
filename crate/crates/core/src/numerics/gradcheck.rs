//! Central finite-difference checks for gradients produced by [`Graph::backward`].

use std::collections::BTreeMap;

use super::graph::{Graph, Var};
use super::Tensor;
use crate::error::{Error, Result};

/// Gradients smaller than this are compared on an absolute scale.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    /// Largest relative error seen in each parameter tensor.
    pub per_param: BTreeMap<String, f64>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// `|a - n| / max(|a|, |n|, GRADCHECK_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR)
}

fn evaluate<F>(
    forward: &mut F,
    params: &[(String, Tensor)],
) -> Result<(f64, Option<super::graph::Gradients>)>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|(n, t)| g.param(n.clone(), t)).collect();
    let loss = forward(&mut g, &vars)?;
    let value = g.value(loss);
    if value.len() != 1 {
        return Err(Error::arg("gradcheck forward must return a scalar"));
    }
    Ok((value.data()[0], Some(g.backward(loss)?)))
}

/// Compares analytic gradients of `forward` against central differences with step `step`.
///
/// `forward` receives the parameters bound in the order given. It must be deterministic;
/// two evaluations at the same point that disagree raise [`Error::Protocol`].
pub fn finite_diff_gradcheck<F>(
    mut forward: F,
    params: &[(String, Tensor)],
    step: f64,
    tolerance: f64,
) -> Result<GradcheckReport>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let params: Vec<(String, Tensor)> = params
        .iter()
        .map(|(n, t)| (n.clone(), t.clone().with_requires_grad(true)))
        .collect();

    let (base, grads) = evaluate(&mut forward, &params)?;
    let (again, _) = evaluate(&mut forward, &params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Protocol(format!(
            "forward is not deterministic ({base} vs {again}); disable dropout before checking"
        )));
    }
    let grads = grads.unwrap_or_default();

    let mut per_param = BTreeMap::new();
    let mut worst = 0.0f64;
    for pi in 0..params.len() {
        let name = params[pi].0.clone();
        let analytic = grads
            .get(&name)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(params[pi].1.shape().to_vec()));
        let mut max_err = 0.0f64;
        for i in 0..params[pi].1.len() {
            let mut probe = params.clone();
            let orig = probe[pi].1.data()[i];
            probe[pi].1.data_mut()[i] = orig + step;
            let (plus, _) = evaluate(&mut forward, &probe)?;
            probe[pi].1.data_mut()[i] = orig - step;
            let (minus, _) = evaluate(&mut forward, &probe)?;
            let numeric = (plus - minus) / (2.0 * step);
            max_err = max_err.max(relative_error(analytic.data()[i], numeric));
        }
        worst = worst.max(max_err);
        per_param.insert(name, max_err);
    }
    Ok(GradcheckReport {
        per_param,
        max_rel_error: worst,
        tolerance,
    })
}
