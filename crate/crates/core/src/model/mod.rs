//! Transformer components: a BERT-style encoder with CLS pooling and a tied
//! MLM head, the single-layer causal bottleneck decoder, and the auxiliary
//! head used by contrastive pre-training.

mod layers;

use numcore::{NdArray, NumError, ParamId, ParamStore, Real, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ContextBatch, TokenBatch, CLS};
use layers::{attention_bias, Block, Norm};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds max_seq_len {max}; truncate before encoding")]
    TooLong { len: usize, max: usize },
    #[error("contract violated: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    /// 1-based encoder layer whose states feed the auxiliary head.
    pub aux_tap_layer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub n_aux_layers: usize,
    /// Share one parameter set between the query and passage towers.
    pub tie_towers: bool,
    pub init_std: f64,
}

impl ModelConfig {
    /// Desk-scale default: 4 layers, 4 heads, d_model 128, d_ff 512.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            encoder: EncoderConfig {
                n_layers: 4,
                n_heads: 4,
                d_model: 128,
                d_ff: 512,
                vocab_size,
                max_seq_len: 128,
                aux_tap_layer: 2,
            },
            n_aux_layers: 2,
            tie_towers: true,
            init_std: 0.02,
        }
    }

    /// BERT-base shaped encoder, for reference configurations.
    pub fn base(vocab_size: usize) -> Self {
        Self {
            encoder: EncoderConfig {
                n_layers: 12,
                n_heads: 12,
                d_model: 768,
                d_ff: 3072,
                vocab_size,
                max_seq_len: 512,
                aux_tap_layer: 6,
            },
            n_aux_layers: 2,
            tie_towers: true,
            init_std: 0.02,
        }
    }

    /// A very small model for tests and quick experiments.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            encoder: EncoderConfig {
                n_layers: 2,
                n_heads: 2,
                d_model: 16,
                d_ff: 32,
                vocab_size,
                max_seq_len: 24,
                aux_tap_layer: 1,
            },
            n_aux_layers: 1,
            tie_towers: true,
            init_std: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let e = &self.encoder;
        let bad = |m: String| Err(ModelError::Config(m));
        if e.n_heads == 0 || e.d_model % e.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", e.d_model, e.n_heads));
        }
        if e.n_layers == 0 || e.aux_tap_layer == 0 || e.aux_tap_layer > e.n_layers {
            return bad(format!("aux_tap_layer {} not in 1..={}", e.aux_tap_layer, e.n_layers));
        }
        if e.max_seq_len < 4 {
            return bad(format!("max_seq_len {} < 4", e.max_seq_len));
        }
        if e.vocab_size <= crate::data::NUM_SPECIALS {
            return bad(format!("vocab_size {} leaves no room beyond specials", e.vocab_size));
        }
        if self.n_aux_layers == 0 || e.d_ff == 0 {
            return bad("n_aux_layers and d_ff must be positive".into());
        }
        Ok(())
    }
}

/// Which tower of the bi-encoder to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tower {
    Passage,
    Query,
}

#[derive(Debug, Clone)]
struct Encoder {
    tok_emb: ParamId,
    pos_emb: ParamId,
    emb_ln: Norm,
    blocks: Vec<Block>,
    mlm_bias: ParamId,
}

impl Encoder {
    fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ModelError> {
        let e = &cfg.encoder;
        let std = cfg.init_std;
        Ok(Self {
            tok_emb: store.add(
                format!("{prefix}.tok_emb"),
                NdArray::randn(vec![e.vocab_size, e.d_model], std, rng),
                true,
            )?,
            pos_emb: store.add(
                format!("{prefix}.pos_emb"),
                NdArray::randn(vec![e.max_seq_len, e.d_model], std, rng),
                true,
            )?,
            emb_ln: Norm::new(store, &format!("{prefix}.emb_ln"), e.d_model)?,
            blocks: (0..e.n_layers)
                .map(|i| Block::new(store, &format!("{prefix}.layer{i}"), e.d_model, e.n_heads, e.d_ff, std, rng))
                .collect::<Result<_, _>>()?,
            mlm_bias: store.add(format!("{prefix}.mlm_bias"), NdArray::zeros(vec![e.vocab_size]), false)?,
        })
    }
}

/// Encoder activations for one batch.
#[derive(Debug, Clone)]
pub struct EncoderOutput<'t, T: Real> {
    /// Final-layer states, `[batch * seq_len, d_model]`.
    pub hidden: Var<'t, T>,
    /// Output of layer `l` at index `l - 1`.
    pub layer_states: Vec<Var<'t, T>>,
    /// Final-layer `[CLS]` states, `[batch, d_model]`.
    pub cls: Var<'t, T>,
    pub batch: usize,
    pub seq_len: usize,
    pub key_mask: Vec<bool>,
}

impl<'t, T: Real> EncoderOutput<'t, T> {
    /// States of 1-based layer `layer`, tagged for the auxiliary head.
    pub fn tapped(&self, layer: usize) -> Result<TappedStates<'t, T>, ModelError> {
        let states = *self
            .layer_states
            .get(layer.wrapping_sub(1))
            .ok_or_else(|| ModelError::Contract(format!("no encoder layer {layer}")))?;
        Ok(TappedStates { layer, states })
    }

    /// Row indices of `[CLS]` positions in the flattened states.
    pub fn cls_rows(&self) -> Vec<usize> {
        (0..self.batch).map(|b| b * self.seq_len).collect()
    }
}

/// Hidden states of one encoder layer, tagged with the layer index.
#[derive(Debug, Clone, Copy)]
pub struct TappedStates<'t, T: Real> {
    pub layer: usize,
    pub states: Var<'t, T>,
}

/// A sentence representation: the final-layer `[CLS]` state.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledOutput<T = f32>(pub Vec<T>);

/// Inner product `v_q . v_p`.
pub fn similarity<T: Real>(q: &PooledOutput<T>, p: &PooledOutput<T>) -> Result<T, ModelError> {
    if q.0.len() != p.0.len() {
        return Err(ModelError::Contract(format!(
            "similarity of {}- and {}-dimensional vectors",
            q.0.len(),
            p.0.len()
        )));
    }
    Ok(q.0.iter().zip(&p.0).fold(T::zero(), |acc, (&a, &b)| acc + a * b))
}

#[derive(Debug, Clone)]
struct Decoder {
    pos_emb: ParamId,
    emb_ln: Norm,
    block: Block,
    out_bias: ParamId,
}

#[derive(Debug, Clone)]
struct AuxHead {
    blocks: Vec<Block>,
    out_bias: ParamId,
}

/// Bi-encoder plus its pre-training heads, with all parameters in one
/// store.
#[derive(Debug, Clone)]
pub struct Model<T: Real = f32> {
    config: ModelConfig,
    pub store: ParamStore<T>,
    passage: Encoder,
    query: Option<Encoder>,
    decoder: Decoder,
    aux: AuxHead,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let e = config.encoder.clone();
        let std = config.init_std;
        let passage = Encoder::new(&mut store, "enc", &config, &mut rng)?;
        let query = if config.tie_towers {
            None
        } else {
            Some(Encoder::new(&mut store, "qenc", &config, &mut rng)?)
        };
        let decoder = Decoder {
            pos_emb: store.add(
                "dec.pos_emb",
                NdArray::randn(vec![e.max_seq_len, e.d_model], std, &mut rng),
                true,
            )?,
            emb_ln: Norm::new(&mut store, "dec.emb_ln", e.d_model)?,
            block: Block::new(&mut store, "dec.layer0", e.d_model, e.n_heads, e.d_ff, std, &mut rng)?,
            out_bias: store.add("dec.out_bias", NdArray::zeros(vec![e.vocab_size]), false)?,
        };
        let aux = AuxHead {
            blocks: (0..config.n_aux_layers)
                .map(|i| Block::new(&mut store, &format!("aux.layer{i}"), e.d_model, e.n_heads, e.d_ff, std, &mut rng))
                .collect::<Result<_, _>>()?,
            out_bias: store.add("aux.out_bias", NdArray::zeros(vec![e.vocab_size]), false)?,
        };
        Ok(Self {
            config,
            store,
            passage,
            query,
            decoder,
            aux,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn d_model(&self) -> usize {
        self.config.encoder.d_model
    }

    fn tower(&self, tower: Tower) -> &Encoder {
        match (tower, &self.query) {
            (Tower::Query, Some(q)) => q,
            _ => &self.passage,
        }
    }

    /// The token embedding table shared by the encoder MLM head, the
    /// decoder and the auxiliary head.
    pub fn token_embedding(&self) -> ParamId {
        self.passage.tok_emb
    }

    /// Output projections of the auxiliary head's residual branches.
    pub fn aux_branch_params(&self) -> Vec<ParamId> {
        self.aux.blocks.iter().flat_map(|b| b.branch_outputs()).collect()
    }

    /// Runs one tower over a padded batch. Every row must start with
    /// `[CLS]` and fit in `max_seq_len`.
    pub fn encode<'t>(
        &self,
        tape: &'t Tape<T>,
        batch: &TokenBatch,
        tower: Tower,
    ) -> Result<EncoderOutput<'t, T>, ModelError> {
        let max = self.config.encoder.max_seq_len;
        if batch.seq_len > max {
            return Err(ModelError::TooLong {
                len: batch.seq_len,
                max,
            });
        }
        if batch.batch == 0 || batch.seq_len == 0 {
            return Err(ModelError::Contract("empty batch".into()));
        }
        for b in 0..batch.batch {
            if batch.row(b)[0] != CLS {
                return Err(ModelError::Contract(format!("row {b} does not start with [CLS]")));
            }
        }
        let enc = self.tower(tower);
        let store = &self.store;
        let ids: Vec<usize> = batch.ids.iter().map(|&i| i as usize).collect();
        let tok = tape.param(store, enc.tok_emb).embedding(&ids)?;
        let positions: Vec<usize> = (0..batch.batch).flat_map(|_| 0..batch.seq_len).collect();
        let pos = tape.param(store, enc.pos_emb).gather_rows(&positions)?;
        let mut x = enc.emb_ln.forward(tape, store, &tok.add(&pos)?)?;
        let bias = attention_bias::<T>(&batch.attention_mask, batch.batch, batch.seq_len, false);
        let mut layer_states = Vec::with_capacity(enc.blocks.len());
        for block in &enc.blocks {
            x = block.forward(tape, store, &x, batch.batch, batch.seq_len, &bias)?;
            layer_states.push(x);
        }
        let cls_rows: Vec<usize> = (0..batch.batch).map(|b| b * batch.seq_len).collect();
        let cls = x.gather_rows(&cls_rows)?;
        Ok(EncoderOutput {
            hidden: x,
            layer_states,
            cls,
            batch: batch.batch,
            seq_len: batch.seq_len,
            key_mask: batch.attention_mask.clone(),
        })
    }

    /// MLM logits `rows . E^T + b` for `[n, d_model]` states, with `E` the
    /// tower's token embedding table.
    pub fn mlm_logits<'t>(&self, tape: &'t Tape<T>, rows: &Var<'t, T>, tower: Tower) -> Result<Var<'t, T>, ModelError> {
        let enc = self.tower(tower);
        let table = tape.param(&self.store, enc.tok_emb);
        let bias = tape.param(&self.store, enc.mlm_bias);
        Ok(rows.matmul_t(&table, false, true)?.add_bias(&bias)?)
    }

    /// Single-layer causal decoder over `[h_cls, x_1 .. x_N]`. Returns
    /// logits `[batch * (N + 1), vocab]`; row `i` of a sequence predicts
    /// `x_{i+1}` (and the last real row predicts `[SEP]`).
    pub fn bottleneck_decode<'t>(
        &self,
        tape: &'t Tape<T>,
        cls: &Var<'t, T>,
        ctx: &ContextBatch,
    ) -> Result<Var<'t, T>, ModelError> {
        let (b, n) = (ctx.batch, ctx.len);
        if n == 0 || ctx.lens.iter().any(|&l| l == 0) {
            return Err(ModelError::Contract("bottleneck context is empty".into()));
        }
        let max = self.config.encoder.max_seq_len;
        if n + 1 > max {
            return Err(ModelError::TooLong { len: n + 1, max });
        }
        if cls.shape() != vec![b, self.d_model()] {
            return Err(ModelError::Contract(format!(
                "h_cls shape {:?} does not match context batch {b}",
                cls.shape()
            )));
        }
        let store = &self.store;
        let ids: Vec<usize> = ctx.inputs.iter().map(|&i| i as usize).collect();
        let emb = tape.param(store, self.passage.tok_emb).embedding(&ids)?;
        let joined = tape.concat_rows(&[*cls, emb])?;
        let seq = n + 1;
        let mut order = Vec::with_capacity(b * seq);
        for r in 0..b {
            order.push(r);
            order.extend((0..n).map(|i| b + r * n + i));
        }
        let x = joined.gather_rows(&order)?;
        let positions: Vec<usize> = (0..b).flat_map(|_| 0..seq).collect();
        let pos = tape.param(store, self.decoder.pos_emb).gather_rows(&positions)?;
        let x = self.decoder.emb_ln.forward(tape, store, &x.add(&pos)?)?;
        let key_mask: Vec<bool> = ctx
            .lens
            .iter()
            .flat_map(|&l| (0..seq).map(move |p| p <= l))
            .collect();
        let bias = attention_bias::<T>(&key_mask, b, seq, true);
        let h = self.decoder.block.forward(tape, store, &x, b, seq, &bias)?;
        let table = tape.param(store, self.passage.tok_emb);
        let out_bias = tape.param(store, self.decoder.out_bias);
        Ok(h.matmul_t(&table, false, true)?.add_bias(&out_bias)?)
    }

    /// Auxiliary head states over `[h_cls, h_l^1, .., h_l^n]`: the tapped
    /// layer's sequence with position 0 replaced by the final `[CLS]` state.
    pub fn aux_hidden<'t>(
        &self,
        tape: &'t Tape<T>,
        cls: &Var<'t, T>,
        tapped: &TappedStates<'t, T>,
        key_mask: &[bool],
        batch: usize,
        seq: usize,
    ) -> Result<Var<'t, T>, ModelError> {
        if tapped.layer != self.config.encoder.aux_tap_layer {
            return Err(ModelError::Contract(format!(
                "auxiliary head reads layer {}, got states of layer {}",
                self.config.encoder.aux_tap_layer, tapped.layer
            )));
        }
        if tapped.states.shape() != vec![batch * seq, self.d_model()] || cls.shape() != vec![batch, self.d_model()] {
            return Err(ModelError::Contract(format!(
                "auxiliary head inputs {:?} / {:?} do not match batch {batch} x {seq}",
                tapped.states.shape(),
                cls.shape()
            )));
        }
        let joined = tape.concat_rows(&[*cls, tapped.states])?;
        let mut order = Vec::with_capacity(batch * seq);
        for r in 0..batch {
            order.push(r);
            order.extend((1..seq).map(|i| batch + r * seq + i));
        }
        let mut x = joined.gather_rows(&order)?;
        let bias = attention_bias::<T>(key_mask, batch, seq, false);
        for block in &self.aux.blocks {
            x = block.forward(tape, &self.store, &x, batch, seq, &bias)?;
        }
        Ok(x)
    }

    /// Projects auxiliary head states to vocabulary logits.
    pub fn aux_project<'t>(&self, tape: &'t Tape<T>, rows: &Var<'t, T>) -> Result<Var<'t, T>, ModelError> {
        let table = tape.param(&self.store, self.passage.tok_emb);
        let bias = tape.param(&self.store, self.aux.out_bias);
        Ok(rows.matmul_t(&table, false, true)?.add_bias(&bias)?)
    }

    /// MLM-style logits `[batch * seq, vocab]` from the auxiliary head.
    pub fn aux_head_logits<'t>(
        &self,
        tape: &'t Tape<T>,
        out: &EncoderOutput<'t, T>,
        tapped: &TappedStates<'t, T>,
    ) -> Result<Var<'t, T>, ModelError> {
        let h = self.aux_hidden(tape, &out.cls, tapped, &out.key_mask, out.batch, out.seq_len)?;
        self.aux_project(tape, &h)
    }

    /// Sentence representations for a batch, outside any training graph.
    pub fn embed(&self, batch: &TokenBatch, tower: Tower) -> Result<Vec<PooledOutput<T>>, ModelError> {
        let tape = Tape::new();
        let out = self.encode(&tape, batch, tower)?;
        let d = self.d_model();
        let v = out.cls.to_vec();
        Ok(v.chunks_exact(d).map(|c| PooledOutput(c.to_vec())).collect())
    }

    /// Loads stored values by parameter name; every parameter of this model
    /// must be present with a matching shape.
    pub fn load_params(&mut self, named: &[(String, Vec<usize>, Vec<T>)]) -> Result<(), ModelError> {
        let mut seen = vec![false; self.store.len()];
        for (name, shape, data) in named {
            let id = self
                .store
                .lookup(name)
                .ok_or_else(|| ModelError::Contract(format!("unknown parameter `{name}`")))?;
            if self.store.get(id).shape() != shape.as_slice() {
                return Err(ModelError::Contract(format!(
                    "parameter `{name}` has shape {:?}, stored {:?}",
                    self.store.get(id).shape(),
                    shape
                )));
            }
            self.store.assign(id, data)?;
            seen[id.index()] = true;
        }
        if let Some(missing) = self.store.ids().find(|id| !seen[id.index()]) {
            return Err(ModelError::Contract(format!(
                "parameter `{}` missing from checkpoint",
                self.store.name(missing)
            )));
        }
        Ok(())
    }

    /// Copies parameter values from a model of the same architecture but
    /// possibly different precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        let mut store = ParamStore::new();
        for id in self.store.ids() {
            store
                .add(self.store.name(id), self.store.get(id).cast::<U>(), self.store.decays(id))
                .expect("names are unique");
        }
        Model {
            config: self.config.clone(),
            store,
            passage: self.passage.clone(),
            query: self.query.clone(),
            decoder: self.decoder.clone(),
            aux: self.aux.clone(),
        }
    }
}
