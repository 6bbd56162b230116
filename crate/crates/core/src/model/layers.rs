use numcore::{NdArray, ParamId, ParamStore, Real, Tape, Var};
use rand::Rng;

use super::ModelError;

pub(crate) const NEG_INF: f64 = -1e9;

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            w: store.add(format!("{name}.weight"), NdArray::randn(vec![d_in, d_out], std, rng), true)?,
            b: store.add(format!("{name}.bias"), NdArray::zeros(vec![d_out]), false)?,
        })
    }

    pub fn forward<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: &Var<'t, T>,
    ) -> Result<Var<'t, T>, ModelError> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        Ok(x.matmul(&w)?.add_bias(&b)?)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize) -> Result<Self, ModelError> {
        Ok(Self {
            gain: store.add(format!("{name}.gain"), NdArray::full(vec![d], T::one()), false)?,
            bias: store.add(format!("{name}.bias"), NdArray::zeros(vec![d]), false)?,
        })
    }

    pub fn forward<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: &Var<'t, T>,
    ) -> Result<Var<'t, T>, ModelError> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        Ok(x.layer_norm(&g, &b)?)
    }
}

/// Additive attention bias `[batch, seq, seq]`: `-1e9` where a query may not
/// look at a key (padding, and the future when `causal`).
pub(crate) fn attention_bias<T: Real>(key_mask: &[bool], batch: usize, seq: usize, causal: bool) -> Vec<T> {
    let neg = T::lit(NEG_INF);
    let mut bias = vec![T::zero(); batch * seq * seq];
    for b in 0..batch {
        for i in 0..seq {
            for j in 0..seq {
                if !key_mask[b * seq + j] || (causal && j > i) {
                    bias[(b * seq + i) * seq + j] = neg;
                }
            }
        }
    }
    bias
}

/// Post-norm transformer block: self-attention then a GELU feed-forward,
/// each followed by residual add and layer norm.
#[derive(Debug, Clone)]
pub(crate) struct Block {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln1: Norm,
    ff1: Linear,
    ff2: Linear,
    ln2: Norm,
    n_heads: usize,
    d_model: usize,
}

impl Block {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        n_heads: usize,
        d_ff: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            q: Linear::new(store, &format!("{name}.attn.q"), d_model, d_model, std, rng)?,
            k: Linear::new(store, &format!("{name}.attn.k"), d_model, d_model, std, rng)?,
            v: Linear::new(store, &format!("{name}.attn.v"), d_model, d_model, std, rng)?,
            o: Linear::new(store, &format!("{name}.attn.o"), d_model, d_model, std, rng)?,
            ln1: Norm::new(store, &format!("{name}.ln1"), d_model)?,
            ff1: Linear::new(store, &format!("{name}.ff1"), d_model, d_ff, std, rng)?,
            ff2: Linear::new(store, &format!("{name}.ff2"), d_ff, d_model, std, rng)?,
            ln2: Norm::new(store, &format!("{name}.ln2"), d_model)?,
            n_heads,
            d_model,
        })
    }

    /// Parameters on the residual-free branches (attention output and the
    /// second feed-forward projection).
    pub fn branch_outputs(&self) -> [ParamId; 4] {
        [self.o.w, self.o.b, self.ff2.w, self.ff2.b]
    }

    /// `x` is `[batch * seq, d_model]`; `bias` comes from [`attention_bias`].
    pub fn forward<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: &Var<'t, T>,
        batch: usize,
        seq: usize,
        bias: &[T],
    ) -> Result<Var<'t, T>, ModelError> {
        let (h, dh) = (self.n_heads, self.d_model / self.n_heads);
        let heads = |v: Var<'t, T>| -> Result<Var<'t, T>, ModelError> {
            Ok(v.reshape(vec![batch, seq, h, dh])?
                .swap_axes12()?
                .reshape(vec![batch * h, seq, dh])?)
        };
        let q = heads(self.q.forward(tape, store, x)?)?;
        let k = heads(self.k.forward(tape, store, x)?)?;
        let v = heads(self.v.forward(tape, store, x)?)?;
        let scores = q
            .bmm(&k, false, true)?
            .scale(1.0 / (dh as f64).sqrt())
            .add_broadcast_const(bias, batch, h)?;
        let ctx = scores
            .softmax_rows()
            .bmm(&v, false, false)?
            .reshape(vec![batch, h, seq, dh])?
            .swap_axes12()?
            .reshape(vec![batch * seq, self.d_model])?;
        let attn = self.o.forward(tape, store, &ctx)?;
        let x = self.ln1.forward(tape, store, &x.add(&attn)?)?;
        let ff = self.ff1.forward(tape, store, &x)?.gelu();
        let ff = self.ff2.forward(tape, store, &ff)?;
        self.ln2.forward(tape, store, &x.add(&ff)?)
    }
}
