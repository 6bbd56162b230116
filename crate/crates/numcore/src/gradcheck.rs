//! Central finite-difference checks for tape gradients (64-bit).

use crate::array::NdArray;
use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// Agreement between analytic and numeric gradients for one array.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub name: String,
    /// `|analytic - numeric| / (|analytic| + |numeric|)` over the checked
    /// coordinates (zero when both vanish).
    pub rel_err: f64,
    pub checked: usize,
    pub analytic_norm: f64,
}

fn coords(numel: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(k) if k < numel => (0..k).map(|i| i * numel / k + (i * 7919) % (numel / k).max(1)).collect(),
        _ => (0..numel).collect(),
    }
}

/// Gradients whose analytic and numeric norms both fall below this are
/// treated as equal. Parameters with an identically zero gradient
/// (e.g. attention key biases, which softmax cancels) otherwise compare two
/// round-off residues and report a meaningless relative error near 1.
pub const ABS_FLOOR: f64 = 1e-8;

fn rel_err(analytic: &[f64], numeric: &[f64]) -> (f64, f64) {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let denom = na + nn;
    (if denom < 1e-12 || na.max(nn) < ABS_FLOOR { 0.0 } else { diff / denom }, na)
}

/// Checks `d f / d inputs` for a scalar function of leaf arrays.
pub fn check_inputs<F>(inputs: &[NdArray<f64>], f: F, h: f64, limit: Option<usize>) -> Result<Vec<GradReport>>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let eval = |arrays: &[NdArray<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = arrays.iter().map(|a| tape.leaf(a.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };
    let tape = Tape::new();
    let vars: Vec<_> = inputs
        .iter()
        .map(|a| tape.leaf(a.clone().with_requires_grad(true)))
        .collect();
    let loss = f(&tape, &vars)?;
    tape.backward(loss)?;
    let mut reports = Vec::new();
    for (i, v) in vars.iter().enumerate() {
        let grad = v.grad().map(|g| g.into_data()).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        let idx = coords(inputs[i].numel(), limit);
        let mut analytic = Vec::with_capacity(idx.len());
        let mut numeric = Vec::with_capacity(idx.len());
        let mut work = inputs.to_vec();
        for &j in &idx {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            analytic.push(grad[j]);
            numeric.push((up - down) / (2.0 * h));
        }
        let (rel, norm) = rel_err(&analytic, &numeric);
        reports.push(GradReport {
            name: format!("input{i}"),
            rel_err: rel,
            checked: idx.len(),
            analytic_norm: norm,
        });
    }
    Ok(reports)
}

/// Checks gradients of a scalar loss with respect to stored parameters.
pub fn check_params<F>(
    store: &mut ParamStore<f64>,
    f: F,
    h: f64,
    limit: Option<usize>,
) -> Result<Vec<GradReport>>
where
    F: for<'t> Fn(&'t Tape<f64>, &ParamStore<f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let loss = f(&tape, store)?;
    tape.backward(loss)?;
    let mut grads = ParamStore::clone(store);
    grads.zero_grads();
    grads.accumulate_from(&tape)?;
    drop(tape);
    let ids: Vec<ParamId> = store.ids().collect();
    let mut reports = Vec::new();
    for id in ids {
        let numel = store.get(id).numel();
        let grad = grads.get(id).grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; numel]);
        let idx = coords(numel, limit);
        let mut analytic = Vec::with_capacity(idx.len());
        let mut numeric = Vec::with_capacity(idx.len());
        for &j in &idx {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + h;
            let up = {
                let t = Tape::new();
                f(&t, store)?.item()
            };
            store.get_mut(id).data_mut()[j] = orig - h;
            let down = {
                let t = Tape::new();
                f(&t, store)?.item()
            };
            store.get_mut(id).data_mut()[j] = orig;
            analytic.push(grad[j]);
            numeric.push((up - down) / (2.0 * h));
        }
        let (rel, norm) = rel_err(&analytic, &numeric);
        reports.push(GradReport {
            name: store.name(id).to_string(),
            rel_err: rel,
            checked: idx.len(),
            analytic_norm: norm,
        });
    }
    Ok(reports)
}
