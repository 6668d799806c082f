//! A small pre-norm encoder-only transformer whose GEMMs all run through the
//! quantized layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{
    bilinear_backward, bilinear_forward, linear_backward, linear_forward, StepContext,
};
use super::stash::{Site, StashKey};
use crate::costmodel::{self, CostContext, CostLedger};
use crate::engine::{
    add, cross_entropy, cross_entropy_backward, gelu, gelu_backward, layer_norm,
    layer_norm_backward, scale, softmax_rows, softmax_rows_backward, LayerNormCache, Tensor,
};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub seq_len: usize,
    /// Sequences per training step.
    pub batch_size: usize,
}

impl ModelSpec {
    /// Desk-scale default: trains on one core in seconds.
    pub fn toy() -> Self {
        ModelSpec {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            vocab: 32,
            seq_len: 16,
            batch_size: 16,
        }
    }

    /// A six-layer translation-sized transformer (4096 tokens per step), used
    /// only for cost estimation.
    pub fn transformer_6layer() -> Self {
        ModelSpec {
            n_layers: 6,
            d_model: 512,
            n_heads: 4,
            d_ff: 1024,
            vocab: 8000,
            seq_len: 64,
            batch_size: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab", self.vocab),
            ("seq_len", self.seq_len),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model {name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Token positions per step.
    pub fn tokens(&self) -> usize {
        self.seq_len * self.batch_size
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub w1: Tensor,
    pub w2: Tensor,
}

/// All trainable tensors. Linear layers have no biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub token_embedding: Tensor,
    pub position_embedding: Tensor,
    pub blocks: Vec<BlockParams>,
    pub lnf_gamma: Tensor,
    pub lnf_beta: Tensor,
    pub w_out: Tensor,
}

fn normal(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("std is positive");
    Tensor::from_parts(
        vec![rows, cols],
        (0..rows * cols).map(|_| dist.sample(rng)).collect(),
    )
}

impl Params {
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, f) = (spec.d_model, spec.d_ff);
        let ones = |n| Tensor::filled(&[1, n], 1.0);
        let zeros = |n| Tensor::zeros(&[1, n]);
        let token_embedding = normal(spec.vocab, d, 1.0, &mut rng);
        let position_embedding = normal(spec.seq_len, d, 1.0, &mut rng);
        let mut blocks = Vec::with_capacity(spec.n_layers);
        for _ in 0..spec.n_layers {
            let sd = (d as f64).powf(-0.5);
            blocks.push(BlockParams {
                ln1_gamma: ones(d),
                ln1_beta: zeros(d),
                wq: normal(d, d, sd, &mut rng),
                wk: normal(d, d, sd, &mut rng),
                wv: normal(d, d, sd, &mut rng),
                wo: normal(d, d, sd, &mut rng),
                ln2_gamma: ones(d),
                ln2_beta: zeros(d),
                w1: normal(d, f, sd, &mut rng),
                w2: normal(f, d, (f as f64).powf(-0.5), &mut rng),
            });
        }
        Ok(Params {
            token_embedding,
            position_embedding,
            blocks,
            lnf_gamma: ones(d),
            lnf_beta: zeros(d),
            w_out: normal(d, spec.vocab, (d as f64).powf(-0.5), &mut rng),
        })
    }

    /// Tensors in a fixed order shared with [`Params::tensors_mut`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.token_embedding, &self.position_embedding];
        for b in &self.blocks {
            v.extend([
                &b.ln1_gamma,
                &b.ln1_beta,
                &b.wq,
                &b.wk,
                &b.wv,
                &b.wo,
                &b.ln2_gamma,
                &b.ln2_beta,
                &b.w1,
                &b.w2,
            ]);
        }
        v.extend([&self.lnf_gamma, &self.lnf_beta, &self.w_out]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.token_embedding, &mut self.position_embedding];
        for b in &mut self.blocks {
            v.extend([
                &mut b.ln1_gamma,
                &mut b.ln1_beta,
                &mut b.wq,
                &mut b.wk,
                &mut b.wv,
                &mut b.wo,
                &mut b.ln2_gamma,
                &mut b.ln2_beta,
                &mut b.w1,
                &mut b.w2,
            ]);
        }
        v.extend([&mut self.lnf_gamma, &mut self.lnf_beta, &mut self.w_out]);
        v
    }

    pub fn zeros_like(&self) -> Params {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        z
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Residual-branch dropout. Masks are drawn in a fixed order from `rng`.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn mask(&mut self, shape: &[usize]) -> Tensor {
        let keep = 1.0 - self.rate;
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        Tensor::from_parts(shape.to_vec(), data)
    }
}

fn apply_mask(t: &Tensor, mask: Option<&Tensor>) -> Tensor {
    match mask {
        None => t.clone(),
        Some(m) => Tensor::from_parts(
            t.shape().to_vec(),
            t.data().iter().zip(m.data()).map(|(a, b)| a * b).collect(),
        ),
    }
}

struct BlockCache {
    ln1: LayerNormCache,
    probs: Vec<Tensor>,
    attn_mask: Option<Tensor>,
    ln2: LayerNormCache,
    ffn_pre: Tensor,
    ffn_mask: Option<Tensor>,
}

/// Intermediate values kept for [`backward`].
pub struct ForwardCache {
    tokens: Vec<usize>,
    blocks: Vec<BlockCache>,
    lnf: LayerNormCache,
}

fn check_tokens(spec: &ModelSpec, tokens: &[usize]) -> Result<usize> {
    if tokens.is_empty() || !tokens.len().is_multiple_of(spec.seq_len) {
        return Err(Error::Shape(format!(
            "{} tokens do not form whole sequences of {}",
            tokens.len(),
            spec.seq_len
        )));
    }
    if let Some(t) = tokens.iter().find(|&&t| t >= spec.vocab) {
        return Err(Error::Contract(format!(
            "token {t} outside vocabulary of {}",
            spec.vocab
        )));
    }
    Ok(tokens.len() / spec.seq_len)
}

/// Logits for `tokens`, a row-major `[batch × seq_len]` id array.
pub fn forward(
    params: &Params,
    spec: &ModelSpec,
    tokens: &[usize],
    ctx: &mut StepContext,
    mut dropout: Option<Dropout>,
) -> Result<(Tensor, ForwardCache)> {
    let batch = check_tokens(spec, tokens)?;
    let (s, d, dh) = (spec.seq_len, spec.d_model, spec.head_dim());
    let mut h = Vec::with_capacity(tokens.len() * d);
    for (i, &tok) in tokens.iter().enumerate() {
        let (te, pe) = (
            params.token_embedding.row(tok),
            params.position_embedding.row(i % s),
        );
        h.extend(te.iter().zip(pe).map(|(a, b)| a + b));
    }
    let mut h = Tensor::from_parts(vec![tokens.len(), d], h);
    let inv_sqrt_dh = 1.0 / (dh as f64).sqrt();
    let mut caches = Vec::with_capacity(params.blocks.len());
    for (l, bp) in params.blocks.iter().enumerate() {
        let (a, ln1) = layer_norm(&h, &bp.ln1_gamma, &bp.ln1_beta, LAYER_NORM_EPS)?;
        let q = linear_forward(ctx, StashKey::new(l, Site::Query), &a, &bp.wq)?;
        let k = linear_forward(ctx, StashKey::new(l, Site::Key), &a, &bp.wk)?;
        let v = linear_forward(ctx, StashKey::new(l, Site::Value), &a, &bp.wv)?;
        let mut attn = Tensor::zeros(&[tokens.len(), d]);
        let mut probs = Vec::with_capacity(batch * spec.n_heads);
        for b in 0..batch {
            for head in 0..spec.n_heads {
                let inst = b * spec.n_heads + head;
                let rows = b * s..(b + 1) * s;
                let qs = q.column_slice(rows.clone(), head * dh, dh)?;
                let ks = k.column_slice(rows.clone(), head * dh, dh)?;
                let vs = v.column_slice(rows, head * dh, dh)?;
                let scores = bilinear_forward(
                    ctx,
                    StashKey::instance(l, Site::Scores, inst),
                    &qs,
                    &ks.transpose(),
                )?;
                let p = softmax_rows(&scale(&scores, inv_sqrt_dh)?);
                let out =
                    bilinear_forward(ctx, StashKey::instance(l, Site::Context, inst), &p, &vs)?;
                attn.add_into_slice(b * s, head * dh, &out)?;
                probs.push(p);
            }
        }
        let o = linear_forward(ctx, StashKey::new(l, Site::AttnOut), &attn, &bp.wo)?;
        let attn_mask = dropout.as_mut().map(|dr| dr.mask(o.shape()));
        h = add(&h, &apply_mask(&o, attn_mask.as_ref()))?;
        let (a2, ln2) = layer_norm(&h, &bp.ln2_gamma, &bp.ln2_beta, LAYER_NORM_EPS)?;
        let ffn_pre = linear_forward(ctx, StashKey::new(l, Site::Ffn1), &a2, &bp.w1)?;
        let f2 = linear_forward(ctx, StashKey::new(l, Site::Ffn2), &gelu(&ffn_pre), &bp.w2)?;
        let ffn_mask = dropout.as_mut().map(|dr| dr.mask(f2.shape()));
        h = add(&h, &apply_mask(&f2, ffn_mask.as_ref()))?;
        caches.push(BlockCache {
            ln1,
            probs,
            attn_mask,
            ln2,
            ffn_pre,
            ffn_mask,
        });
    }
    let (hf, lnf) = layer_norm(&h, &params.lnf_gamma, &params.lnf_beta, LAYER_NORM_EPS)?;
    let logits = linear_forward(
        ctx,
        StashKey::new(spec.n_layers, Site::Head),
        &hf,
        &params.w_out,
    )?;
    Ok((
        logits,
        ForwardCache {
            tokens: tokens.to_vec(),
            blocks: caches,
            lnf,
        },
    ))
}

/// Gradients of the loss with respect to every parameter, given `dlogits`.
pub fn backward(
    params: &Params,
    spec: &ModelSpec,
    cache: ForwardCache,
    dlogits: &Tensor,
    ctx: &mut StepContext,
) -> Result<Params> {
    let (s, dh) = (spec.seq_len, spec.head_dim());
    let n_tok = cache.tokens.len();
    let batch = n_tok / s;
    let inv_sqrt_dh = 1.0 / (dh as f64).sqrt();
    let mut grads = params.zeros_like();
    let (dhf, dw_out) = linear_backward(
        ctx,
        StashKey::new(spec.n_layers, Site::Head),
        dlogits,
        &params.w_out,
    )?;
    grads.w_out = dw_out;
    let (mut dh_res, dg, db) = layer_norm_backward(&cache.lnf, &params.lnf_gamma, &dhf)?;
    grads.lnf_gamma = dg;
    grads.lnf_beta = db;
    for (l, bc) in cache.blocks.into_iter().enumerate().rev() {
        let bp = &params.blocks[l];
        let gb = &mut grads.blocks[l];

        let df2 = apply_mask(&dh_res, bc.ffn_mask.as_ref());
        let (dgelu, dw2) = linear_backward(ctx, StashKey::new(l, Site::Ffn2), &df2, &bp.w2)?;
        let dpre = gelu_backward(&bc.ffn_pre, &dgelu)?;
        let (da2, dw1) = linear_backward(ctx, StashKey::new(l, Site::Ffn1), &dpre, &bp.w1)?;
        let (dln2, dg2, db2) = layer_norm_backward(&bc.ln2, &bp.ln2_gamma, &da2)?;
        dh_res = add(&dh_res, &dln2)?;
        (gb.w1, gb.w2, gb.ln2_gamma, gb.ln2_beta) = (dw1, dw2, dg2, db2);

        let do_ = apply_mask(&dh_res, bc.attn_mask.as_ref());
        let (dattn, dwo) = linear_backward(ctx, StashKey::new(l, Site::AttnOut), &do_, &bp.wo)?;
        gb.wo = dwo;
        let d = spec.d_model;
        let (mut dq, mut dk, mut dv) = (
            Tensor::zeros(&[n_tok, d]),
            Tensor::zeros(&[n_tok, d]),
            Tensor::zeros(&[n_tok, d]),
        );
        for b in (0..batch).rev() {
            for head in (0..spec.n_heads).rev() {
                let inst = b * spec.n_heads + head;
                let dout = dattn.column_slice(b * s..(b + 1) * s, head * dh, dh)?;
                let (dp, dvs) =
                    bilinear_backward(ctx, StashKey::instance(l, Site::Context, inst), &dout)?;
                let dscores = scale(&softmax_rows_backward(&bc.probs[inst], &dp)?, inv_sqrt_dh)?;
                let (dqs, dkt) =
                    bilinear_backward(ctx, StashKey::instance(l, Site::Scores, inst), &dscores)?;
                dq.add_into_slice(b * s, head * dh, &dqs)?;
                dk.add_into_slice(b * s, head * dh, &dkt.transpose())?;
                dv.add_into_slice(b * s, head * dh, &dvs)?;
            }
        }
        let (da_v, dwv) = linear_backward(ctx, StashKey::new(l, Site::Value), &dv, &bp.wv)?;
        let (da_k, dwk) = linear_backward(ctx, StashKey::new(l, Site::Key), &dk, &bp.wk)?;
        let (da_q, dwq) = linear_backward(ctx, StashKey::new(l, Site::Query), &dq, &bp.wq)?;
        let da = add(&add(&da_q, &da_k)?, &da_v)?;
        let (dln1, dg1, db1) = layer_norm_backward(&bc.ln1, &bp.ln1_gamma, &da)?;
        dh_res = add(&dh_res, &dln1)?;
        (gb.wq, gb.wk, gb.wv, gb.ln1_gamma, gb.ln1_beta) = (dwq, dwk, dwv, dg1, db1);
    }
    let d = spec.d_model;
    let (te, pe) = (grads.token_embedding.data_mut(), &mut Vec::new());
    pe.resize(s * d, 0.0);
    for (i, &tok) in cache.tokens.iter().enumerate() {
        let row = dh_res.row(i);
        for c in 0..d {
            te[tok * d + c] += row[c];
            pe[(i % s) * d + c] += row[c];
        }
    }
    grads.position_embedding = Tensor::from_parts(vec![s, d], std::mem::take(pe));
    Ok(grads)
}

/// Forward, loss, and backward for one batch.
pub fn loss_and_grads(
    params: &Params,
    spec: &ModelSpec,
    tokens: &[usize],
    targets: &[usize],
    smoothing: f64,
    ctx: &mut StepContext,
    dropout: Option<Dropout>,
) -> Result<(f64, Params)> {
    let (logits, cache) = forward(params, spec, tokens, ctx, dropout)?;
    let loss = cross_entropy(&logits, targets, smoothing)?;
    let dlogits = cross_entropy_backward(&logits, targets, smoothing)?;
    let grads = backward(params, spec, cache, &dlogits, ctx)?;
    Ok((loss, grads))
}

/// Charges one full training step of `spec` (forward, backward, optimizer
/// update) without running it. Mirrors [`forward`] and [`backward`] call for call.
pub fn charge_training_step(
    spec: &ModelSpec,
    ctx: &CostContext,
    ledger: &mut CostLedger,
) -> Result<()> {
    spec.validate()?;
    let (t, d, f, v, s, dh) = (
        spec.tokens(),
        spec.d_model,
        spec.d_ff,
        spec.vocab,
        spec.seq_len,
        spec.head_dim(),
    );
    let instances = spec.batch_size * spec.n_heads;
    for _ in 0..spec.n_layers {
        for _ in 0..3 {
            costmodel::linear_forward(ledger, ctx, t, d, d)?;
        }
        for _ in 0..instances {
            costmodel::bilinear_forward(ledger, ctx, s, dh, s)?;
            costmodel::bilinear_forward(ledger, ctx, s, s, dh)?;
        }
        costmodel::linear_forward(ledger, ctx, t, d, d)?;
        costmodel::linear_forward(ledger, ctx, t, d, f)?;
        costmodel::linear_forward(ledger, ctx, t, f, d)?;
    }
    costmodel::linear_forward(ledger, ctx, t, d, v)?;
    costmodel::linear_backward(ledger, ctx, t, d, v)?;
    for _ in 0..spec.n_layers {
        costmodel::linear_backward(ledger, ctx, t, f, d)?;
        costmodel::linear_backward(ledger, ctx, t, d, f)?;
        costmodel::linear_backward(ledger, ctx, t, d, d)?;
        for _ in 0..instances {
            costmodel::bilinear_backward(ledger, ctx, s, s, dh)?;
            costmodel::bilinear_backward(ledger, ctx, s, dh, s)?;
        }
        for _ in 0..3 {
            costmodel::linear_backward(ledger, ctx, t, d, d)?;
        }
    }
    costmodel::optimizer_update(ledger, ctx, parameter_count(spec));
    Ok(())
}

/// Number of trainable scalars of `spec`.
pub fn parameter_count(spec: &ModelSpec) -> usize {
    let (d, f) = (spec.d_model, spec.d_ff);
    let block = 4 * d * d + 2 * d * f + 4 * d;
    spec.vocab * d + spec.seq_len * d + spec.n_layers * block + 2 * d + d * spec.vocab
}
