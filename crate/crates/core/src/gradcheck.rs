//! Central finite-difference verification of tape gradients.

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::models::Classifier;

/// Compares reverse-mode gradients of `f` against central differences.
///
/// Returns `max |g_auto − g_fd| / max(1, |g_fd|)` over every entry of every
/// trainable parameter. On return the store holds the reverse-mode gradients and
/// unchanged parameter values.
pub fn grad_check<F>(mut f: F, store: &mut ParamStore, h: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(1e-8..=1e-4).contains(&h) {
        return Err(Error::Config(format!("finite-difference step {h} outside [1e-8, 1e-4]")));
    }
    store.zero_grad();
    {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        if !tape.value(out).is_finite() {
            return Err(Error::NonFinite("objective evaluation during gradient check".into()));
        }
        tape.backward(out, store)?;
    }
    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        let v = tape.value(out).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("objective evaluation during gradient check".into()));
        }
        Ok(v)
    };

    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().filter(|id| store.get(*id).trainable).collect();
    for id in ids {
        for k in 0..store.value(id).len() {
            let orig = store.value(id).data()[k];
            // Divide by the step actually taken after rounding orig ± h.
            let (up, down) = (orig + h, orig - h);
            store.value_mut(id).data_mut()[k] = up;
            let plus = eval(store);
            store.value_mut(id).data_mut()[k] = down;
            let minus = eval(store);
            store.value_mut(id).data_mut()[k] = orig;
            let fd = (plus? - minus?) / (up - down);
            let auto = store.grad(id).data()[k];
            worst = worst.max((auto - fd).abs() / fd.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// [`grad_check`] of a classifier's mean cross-entropy on one batch, with
/// respect to every trainable parameter of the model.
pub fn classifier_grad_check<M: Classifier + Clone>(
    model: &M,
    batch: &[&M::Input],
    labels: &[usize],
    eta: Option<f64>,
    h: f64,
) -> Result<f64> {
    let mut probe = model.clone();
    let mut store = probe.params().clone();
    grad_check(
        |tape, store| {
            *probe.params_mut() = store.clone();
            let logits = probe.logits(tape, batch, eta)?;
            tape.cross_entropy(logits, labels)
        },
        &mut store,
        h,
    )
}
