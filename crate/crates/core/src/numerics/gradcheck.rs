use super::{ParamStore, Tape, Var};
use crate::error::{DosaError, Result};

/// Compares tape gradients of `analytic` against central differences of
/// `numeric` over every trainable coordinate in `store`.
///
/// Returns the largest relative error, with denominator
/// `max(|analytic|, |numeric|, 1e-8)`. The two closures normally compute the
/// same function; they differ when the analytic graph contains a
/// `stop_gradient` and the numeric side must hold that branch fixed.
pub fn gradient_check<A, N>(store: &mut ParamStore, h: f64, analytic: A, numeric: N) -> Result<f64>
where
    A: Fn(&mut Tape, &ParamStore) -> Result<Var>,
    N: Fn(&ParamStore) -> Result<f64>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(DosaError::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    store.zero_grads();
    let mut tape = Tape::new();
    let out = analytic(&mut tape, store)?;
    tape.backward(out, store)?;

    let ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, _)| id)
        .collect();

    let mut max_err: f64 = 0.0;
    for id in ids {
        let grad = store.get(id).grad();
        for k in 0..grad.len() {
            let orig = store.value(id).as_slice()[k];
            store.get_mut(id).value.as_mut_slice()[k] = orig + h;
            let plus = numeric(store);
            store.get_mut(id).value.as_mut_slice()[k] = orig - h;
            let minus = numeric(store);
            store.get_mut(id).value.as_mut_slice()[k] = orig;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(DosaError::NonFinite(format!(
                    "objective at '{}'[{k}] ± {h}",
                    store.get(id).name
                )));
            }
            let fd = (plus - minus) / (2.0 * h);
            let an = grad.as_slice()[k];
            let denom = an.abs().max(fd.abs()).max(1e-8);
            max_err = max_err.max((an - fd).abs() / denom);
        }
    }
    store.zero_grads();
    Ok(max_err)
}

/// [`gradient_check`] where the numeric side re-runs the same graph.
pub fn finite_difference_check<F>(store: &mut ParamStore, h: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    gradient_check(store, h, &f, |s: &ParamStore| {
        let mut tape = Tape::new();
        let out = f(&mut tape, s)?;
        tape.scalar_value(out)
    })
}
