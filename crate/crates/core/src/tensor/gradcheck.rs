//! Central-difference gradient checking in 64-bit precision.

use crate::error::{Error, Result};
use crate::tensor::graph::{Graph, Var};
use crate::tensor::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub eps: f64,
    /// Coordinates sampled per parameter tensor; `None` checks every entry.
    pub per_tensor: Option<usize>,
    pub seed: u64,
    /// Name of an op whose backward rule is deliberately corrupted.
    pub corrupt_op: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            eps: 1e-4,
            per_tensor: None,
            seed: 0,
            corrupt_op: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coordinates_checked: usize,
}

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient of the scalar built by `f` against
/// central differences, perturbing each sampled parameter coordinate by
/// `±eps`.
///
/// `f` receives a fresh graph and one leaf per entry of `params`, in order,
/// and must return the scalar loss node.
pub fn gradcheck<F>(f: F, params: &[(String, Tensor<f64>)], opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::<f64>::new();
    if let Some(op) = &opts.corrupt_op {
        g.corrupt_backward(op)?;
    }
    let vars: Vec<Var> = params.iter().map(|(_, t)| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        let v = g.value(loss);
        if !v.is_scalar() {
            return Err(Error::Contract("gradcheck function must return a scalar".into()));
        }
        Ok(v.item())
    };

    let mut values: Vec<Tensor<f64>> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut rng = Rng::new(opts.seed);
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coordinates_checked: 0,
    };

    for (pi, (name, t)) in params.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[pi], t);
        let coords: Vec<usize> = match opts.per_tensor {
            Some(k) if k < t.len() => {
                let mut all: Vec<usize> = (0..t.len()).collect();
                rng.shuffle(&mut all);
                all.truncate(k);
                all.sort_unstable();
                all
            }
            _ => (0..t.len()).collect(),
        };
        for idx in coords {
            let orig = values[pi].data()[idx];
            values[pi].data_mut()[idx] = orig + opts.eps;
            let plus = eval(&values)?;
            values[pi].data_mut()[idx] = orig - opts.eps;
            let minus = eval(&values)?;
            values[pi].data_mut()[idx] = orig;

            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic.data()[idx];
            let err = relative_error(a, numeric);
            report.coordinates_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), idx));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}
