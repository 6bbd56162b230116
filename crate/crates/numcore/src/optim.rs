use crate::array::NdArray;
use crate::error::{NumError, Result};
use crate::params::ParamStore;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment buffers and step counter for AdamW.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T: Real = f32> {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> AdamWState<T> {
    pub fn new(config: AdamWConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        Self {
            config,
            step: 0,
            first: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn for_store(config: AdamWConfig, store: &ParamStore<T>) -> Self {
        Self::new(config, store.ids().map(|id| store.get(id).numel()))
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.first, &self.second)
    }

    /// Applies one update to every parameter of `store` using its gradient
    /// buffer. Parameters without a gradient are treated as having zero
    /// gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        for (name, p, _) in store.entries_mut() {
            if p.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(NumError::NonFiniteGradient { param: name.to_string() });
            }
        }
        self.begin(lr)?;
        for (i, (_, p, decay)) in store.entries_mut().enumerate() {
            self.update_one(i, p, decay, lr)?;
        }
        Ok(())
    }

    fn begin(&mut self, lr: f64) -> Result<()> {
        if !(lr >= 0.0) {
            return Err(NumError::Contract(format!("learning rate must be >= 0, got {lr}")));
        }
        self.step += 1;
        Ok(())
    }

    fn update_one(&mut self, i: usize, p: &mut NdArray<T>, decay: bool, lr: f64) -> Result<()> {
        let c = self.config;
        let (m, v) = (&mut self.first[i], &mut self.second[i]);
        if m.len() != p.numel() {
            return Err(NumError::Shape {
                op: "adamw_step",
                lhs: p.shape().to_vec(),
                rhs: vec![m.len()],
            });
        }
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let shrink = T::lit(1.0 - lr * c.weight_decay);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let (lr_t, eps) = (T::lit(lr), T::lit(c.eps));
        let (bc1, bc2) = (T::lit(bc1), T::lit(bc2));
        let (data, grad) = p.data_and_grad_mut();
        for j in 0..data.len() {
            let g = grad[j];
            if decay {
                data[j] = data[j] * shrink;
            }
            m[j] = b1 * m[j] + one_b1 * g;
            v[j] = b2 * v[j] + one_b2 * g * g;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            data[j] = data[j] - lr_t * mhat / (vhat.sqrt() + eps);
        }
        Ok(())
    }
}

/// AdamW update over a slice of arrays, each carrying its own gradient.
/// Decoupled weight decay is applied to all of them.
pub fn adamw_step<T: Real>(params: &mut [NdArray<T>], state: &mut AdamWState<T>, lr: f64) -> Result<()> {
    if params.len() != state.first.len() {
        return Err(NumError::Contract(format!(
            "optimizer tracks {} parameters, got {}",
            state.first.len(),
            params.len()
        )));
    }
    if params
        .iter()
        .any(|p| p.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())))
    {
        return Err(NumError::NonFiniteGradient { param: "<slice>".into() });
    }
    state.begin(lr)?;
    for (i, p) in params.iter_mut().enumerate() {
        state.update_one(i, p, true, lr)?;
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for id in store.ids() {
        if let Some(g) = store.get(id).grad() {
            sq += g.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = T::lit(max_norm / norm);
        for (_, p, _) in store.entries_mut() {
            if let Some(g) = p.grad_mut() {
                g.iter_mut().for_each(|v| *v = *v * s);
            }
        }
    }
    norm
}
