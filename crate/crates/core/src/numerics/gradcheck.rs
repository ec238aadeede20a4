//! Central-difference gradient verification in 64-bit.

use alloc::vec::Vec;

use super::{Grads, NumericsError, ParamId, ParamSet, Tape, Tensor, Var};

pub const DEFAULT_EPS: f64 = 1e-3;

/// Richardson-extrapolated central difference,
/// `(4·D(eps/2) − D(eps)) / 3` with `D(h) = (f(x+h) − f(x−h)) / 2h`.
/// The step error is O(eps⁴), so a fairly large `eps` keeps rounding noise
/// small without giving up accuracy.
fn derivative<F>(mut f: F, eps: f64) -> Result<f64, NumericsError>
where
    F: FnMut(f64) -> Result<f64, NumericsError>,
{
    let d = |f: &mut F, h: f64| -> Result<f64, NumericsError> { Ok((f(h)? - f(-h)?) / (2.0 * h)) };
    let coarse = d(&mut f, eps)?;
    let fine = d(&mut f, eps / 2.0)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Largest coordinate-wise [`relative_error`] between two gradient sets.
pub fn max_relative_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    analytic
        .iter()
        .flatten()
        .zip(numeric.iter().flatten())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64, NumericsError>
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var, NumericsError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.value(out).item()
}

/// Analytic gradient of `f` with respect to each input tensor.
pub fn analytic_gradient<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<Vec<Vec<f64>>, NumericsError>
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var, NumericsError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            grads
                .wrt(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| alloc::vec![0.0; t.len()])
        })
        .collect())
}

/// Extrapolated central differences for every coordinate.
pub fn numeric_gradient<F>(
    f: &F,
    inputs: &[Tensor<f64>],
    eps: f64,
) -> Result<Vec<Vec<f64>>, NumericsError>
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var, NumericsError>,
{
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[t].len());
        for c in 0..inputs[t].len() {
            let orig = work[t].data()[c];
            let slope = derivative(
                |h| {
                    work[t].data_mut()[c] = orig + h;
                    eval_scalar(f, &work)
                },
                eps,
            )?;
            work[t].data_mut()[c] = orig;
            g.push(slope);
        }
        out.push(g);
    }
    Ok(out)
}

/// Max relative error between the tape gradient of scalar `f` and central
/// differences over all input coordinates.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64, NumericsError>
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var, NumericsError>,
{
    let analytic = analytic_gradient(&f, inputs)?;
    let numeric = numeric_gradient(&f, inputs, eps)?;
    Ok(max_relative_error(&analytic, &numeric))
}

/// Outcome of [`grad_check_params`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub max_rel_error: f64,
    /// Parameter name and flat coordinate of the worst disagreement.
    pub worst: Option<(alloc::string::String, usize)>,
    pub coordinates: usize,
}

/// Gradient check over every coordinate of a parameter set. `f` builds a
/// scalar loss on a tape bound to the given parameters.
pub fn grad_check_params<F>(
    params: &ParamSet<f64>,
    eps: f64,
    f: F,
) -> Result<ParamCheck, NumericsError>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var, NumericsError>,
{
    let eval = |p: &ParamSet<f64>| -> Result<f64, NumericsError> {
        let mut tape = Tape::with_params(p);
        let out = f(&mut tape)?;
        tape.value(out).item()
    };
    let mut analytic = Grads::zeros_like(params);
    {
        let mut tape = Tape::with_params(params);
        let out = f(&mut tape)?;
        tape.backward(out)?.accumulate_into(&mut analytic);
    }
    let mut work = params.clone();
    let mut report = ParamCheck {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for p in 0..params.len() {
        let id = ParamId(p);
        for c in 0..params.get(id).len() {
            let orig = work.get(id).data()[c];
            let numeric = derivative(
                |h| {
                    work.get_mut(id).data_mut()[c] = orig + h;
                    eval(&work)
                },
                eps,
            )?;
            work.get_mut(id).data_mut()[c] = orig;
            let err = relative_error(analytic.get(id)[c], numeric);
            report.coordinates += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((params.name(id).into(), c));
            }
        }
    }
    Ok(report)
}
