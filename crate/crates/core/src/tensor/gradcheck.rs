//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, Tensor, Var};
use crate::Result;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Maximum allowed relative error per coordinate.
    pub tolerance: f64,
    /// Step is `step_scale * (1 + |x|)` per coordinate.
    pub step_scale: f64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
    /// Check at most this many coordinates of each tensor (seeded sample).
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Multiply analytic gradients by `1 + fault` (harness mutation testing).
    pub analytic_fault: Option<f64>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            step_scale: 1e-5,
            floor: 1e-6,
            max_coords: None,
            seed: 0,
            analytic_fault: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the function is not smooth there
    /// (two step sizes disagree, e.g. a ReLU kink inside the stencil).
    pub kinks: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
    pub non_finite: Option<String>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.non_finite.is_none() && self.max_rel_error() <= self.tolerance
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Compare analytic and finite-difference gradients of the scalar `f` with
/// respect to every named input and every non-frozen parameter in `store`.
///
/// `f` receives a tape, the recorded inputs (in order) and the store.
pub fn check<F>(
    f: F,
    inputs: &[(&str, Tensor)],
    store: &mut ParamStore,
    config: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var], &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(_, t)| tape.input(t.clone(), true))
        .collect();
    let loss = f(&mut tape, &vars, store)?;
    let loss_value = tape.value(loss).data()[0];
    let mut report = GradCheckReport {
        tensors: Vec::new(),
        tolerance: config.tolerance,
        non_finite: None,
    };
    if !loss_value.is_finite() {
        report.non_finite = Some(format!("forward produced non-finite loss {loss_value}"));
        return Ok(report);
    }
    let grads = tape.backward(loss, store)?;

    let eval = |inputs: &[Tensor], store: &ParamStore| -> Result<f64> {
        let mut t = Tape::inference();
        let vs: Vec<Var> = inputs.iter().map(|x| t.input(x.clone(), false)).collect();
        let l = f(&mut t, &vs, store)?;
        Ok(t.value(l).data()[0])
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let fault = 1.0 + config.analytic_fault.unwrap_or(0.0);
    let mut current: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();

    for (i, (name, _)) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(vars[i]) {
            Some(g) => g.iter().map(|v| v * fault).collect(),
            None => vec![0.0; current[i].len()],
        };
        let coords = pick(current[i].len(), config.max_coords, &mut rng);
        let mut entry = TensorCheck {
            name: (*name).to_string(),
            max_rel_error: 0.0,
            checked: 0,
            kinks: 0,
        };
        for c in coords {
            let x0 = current[i].data()[c];
            let quotient = |h: f64, current: &mut Vec<Tensor>| -> Result<f64> {
                current[i].data_mut()[c] = x0 + h;
                let up = eval(current, store)?;
                current[i].data_mut()[c] = x0 - h;
                let down = eval(current, store)?;
                current[i].data_mut()[c] = x0;
                Ok((up - down) / (2.0 * h))
            };
            let h = config.step_scale * (1.0 + x0.abs());
            let n1 = quotient(h, &mut current)?;
            if !n1.is_finite() {
                report.non_finite = Some(format!("non-finite difference quotient at {name}[{c}]"));
                return Ok(report);
            }
            let mut err = rel_error(analytic[c], n1, config.floor);
            if err > config.tolerance {
                let n2 = quotient(h * 0.1, &mut current)?;
                if rel_error(n1, n2, config.floor) > config.tolerance {
                    entry.kinks += 1;
                    continue;
                }
                err = err.min(rel_error(analytic[c], n2, config.floor));
            }
            entry.checked += 1;
            entry.max_rel_error = entry.max_rel_error.max(err);
        }
        report.tensors.push(entry);
    }

    let ids: Vec<_> = store.canonical_order().filter(|&id| !store.get(id).frozen).collect();
    for id in ids {
        let analytic: Vec<f64> = store.grad(id).iter().map(|v| v * fault).collect();
        let len = store.get(id).tensor.len();
        let coords = pick(len, config.max_coords, &mut rng);
        let mut entry = TensorCheck {
            name: store.get(id).name.clone(),
            max_rel_error: 0.0,
            checked: 0,
            kinks: 0,
        };
        for c in coords {
            let x0 = store.get(id).tensor.data()[c];
            let probe = |x: f64, store: &mut ParamStore| -> Result<f64> {
                store.get_mut(id).tensor.data_mut()[c] = x;
                let v = eval(&current, store);
                store.get_mut(id).tensor.data_mut()[c] = x0;
                v
            };
            let h = config.step_scale * (1.0 + x0.abs());
            let n1 = (probe(x0 + h, store)? - probe(x0 - h, store)?) / (2.0 * h);
            if !n1.is_finite() {
                report.non_finite = Some(format!("non-finite difference quotient at {}[{c}]", entry.name));
                return Ok(report);
            }
            let mut err = rel_error(analytic[c], n1, config.floor);
            if err > config.tolerance {
                let h2 = h * 0.1;
                let n2 = (probe(x0 + h2, store)? - probe(x0 - h2, store)?) / (2.0 * h2);
                if rel_error(n1, n2, config.floor) > config.tolerance {
                    entry.kinks += 1;
                    continue;
                }
                err = err.min(rel_error(analytic[c], n2, config.floor));
            }
            entry.checked += 1;
            entry.max_rel_error = entry.max_rel_error.max(err);
        }
        report.tensors.push(entry);
    }
    Ok(report)
}

pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn pick(len: usize, max: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match max {
        Some(m) if m < len => {
            let mut v = sample(rng, len, m).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..len).collect(),
    }
}
