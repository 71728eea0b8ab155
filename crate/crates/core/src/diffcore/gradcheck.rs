use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParameterStore;
use crate::error::{Error, NumericsError};

/// Fraction of each parameter's coordinates probed by [`grad_check`].
pub const DEFAULT_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst_param: Option<(String, usize)>,
    pub checked: usize,
    pub passed: bool,
}

/// Compares reverse-mode gradients of `f` against central differences on a
/// seeded subsample of coordinates.
///
/// Relative error is `|a − b| / max(|a|, |b|, 1e−8)`.
pub fn grad_check<F>(
    f: F,
    params: &ParameterStore,
    step: f64,
    tol: f64,
    seed: u64,
) -> Result<GradCheckReport, Error>
where
    F: FnMut(&ParameterStore, &mut Graph) -> Result<Var, Error>,
{
    grad_check_fraction(f, params, step, tol, seed, DEFAULT_FRACTION)
}

pub fn grad_check_fraction<F>(
    mut f: F,
    params: &ParameterStore,
    step: f64,
    tol: f64,
    seed: u64,
    fraction: f64,
) -> Result<GradCheckReport, Error>
where
    F: FnMut(&ParameterStore, &mut Graph) -> Result<Var, Error>,
{
    if step <= 0.0 {
        return Err(Error::Config(format!("grad_check step must be > 0, got {step}")));
    }
    let mut analytic = params.clone();
    analytic.zero_grads();
    let mut graph = Graph::new();
    let loss = f(params, &mut graph)?;
    if !graph.scalar_value(loss).is_finite() {
        return Err(NumericsError::NonFinite("evaluating f at the base point".into()).into());
    }
    graph.backward(loss, &mut analytic)?;

    let mut eval = |store: &ParameterStore| -> Result<f64, Error> {
        let mut g = Graph::new();
        let v = f(store, &mut g)?;
        let out = g.scalar_value(v);
        if !out.is_finite() {
            return Err(NumericsError::NonFinite("evaluating a perturbed point".into()).into());
        }
        Ok(out)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: None,
        checked: 0,
        passed: true,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let len = params.get(&name).map(|t| t.len()).unwrap_or(0);
        if len == 0 {
            continue;
        }
        let take = ((len as f64 * fraction).ceil() as usize).clamp(1, len);
        let mut picks = sample(&mut rng, len, take).into_vec();
        picks.sort_unstable();
        for idx in picks {
            let base = params.get(&name).expect("name listed").data()[idx];
            probe.value_mut(&name).expect("exists").data_mut()[idx] = base + step;
            let up = eval(&probe)?;
            probe.value_mut(&name).expect("exists").data_mut()[idx] = base - step;
            let down = eval(&probe)?;
            probe.value_mut(&name).expect("exists").data_mut()[idx] = base;

            let numeric = (up - down) / (2.0 * step);
            let exact = analytic.grad(&name).expect("exists").data()[idx];
            let denom = numeric.abs().max(exact.abs()).max(1e-8);
            let rel = (numeric - exact).abs() / denom;
            report.checked += 1;
            if report.worst_param.is_none() || rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = Some((name.clone(), idx));
            }
        }
    }
    report.passed = report.max_rel_err < tol;
    Ok(report)
}
