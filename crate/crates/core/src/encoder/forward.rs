//! Batched forward pass with an optional tape, and the matching backward
//! pass.
//!
//! Sequences in a batch are packed row-wise into one `rows x hidden` matrix
//! so every position-wise operation is a single matrix product. Attention is
//! the only per-sequence operation. Only the prefix of each sequence up to
//! its last attended position is computed; trailing padding never enters.

use rand::Rng as _;

use super::params::{EncoderConfig, EncoderParams, LayerParams, Pooling};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{
    gelu, gelu_grad, gemm, layer_norm, layer_norm_backward, linear, linear_backward, NormCache, Real, View,
    ViewMut,
};
use crate::tokenizer::TokenSequence;

/// Dropout is applied only in `Train` mode, drawing from the given stream.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

/// Per-layer token states and pooled vectors of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerOutputs<F> {
    /// Number of computed positions (the sequence span, padding excluded).
    pub len: usize,
    pub hidden: usize,
    /// `layers x (len * hidden)`, row-major per layer.
    pub states: Vec<Vec<F>>,
    /// `layers x hidden`.
    pub pooled: Vec<Vec<F>>,
}

impl<F: Real> LayerOutputs<F> {
    pub fn layers(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, layer: usize, pos: usize) -> &[F] {
        &self.states[layer][pos * self.hidden..(pos + 1) * self.hidden]
    }

    /// Pooled vector of the last layer.
    pub fn top(&self) -> &[F] {
        self.pooled.last().expect("at least one layer")
    }
}

#[derive(Clone, Copy, Debug)]
struct Span {
    offset: usize,
    len: usize,
}

struct LayerTape<F> {
    x: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    probs: Vec<F>,
    ctx: Vec<F>,
    attn_drop: Option<Vec<F>>,
    ln1: NormCache<F>,
    y: Vec<F>,
    hpre: Vec<F>,
    hact: Vec<F>,
    ffn_drop: Option<Vec<F>>,
    ln2: NormCache<F>,
}

struct Tape<F> {
    emb_ln: NormCache<F>,
    emb_drop: Option<Vec<F>>,
    layers: Vec<LayerTape<F>>,
}

/// Result of a batched forward pass.
pub struct Forward<F> {
    pub outputs: Vec<LayerOutputs<F>>,
    spans: Vec<Span>,
    ids: Vec<u32>,
    positions: Vec<usize>,
    key_mask: Vec<bool>,
    prob_offsets: Vec<usize>,
    pooling: Pooling,
    tape: Option<Tape<F>>,
}

/// Gradients of the loss with respect to encoder outputs.
pub struct OutputGrads<F> {
    /// `[sequence][layer]` gradient w.r.t. the pooled vector.
    pooled: Vec<Vec<Option<Vec<F>>>>,
    /// `[sequence]` list of `(position, gradient)` for top-layer token states.
    top_rows: Vec<Vec<(usize, Vec<F>)>>,
}

impl<F: Real> OutputGrads<F> {
    pub fn new(sequences: usize, layers: usize) -> Self {
        OutputGrads {
            pooled: vec![vec![None; layers]; sequences],
            top_rows: vec![Vec::new(); sequences],
        }
    }

    pub fn add_pooled(&mut self, seq: usize, layer: usize, grad: &[F]) {
        match &mut self.pooled[seq][layer] {
            Some(g) => g.iter_mut().zip(grad).for_each(|(a, &b)| *a += b),
            slot => *slot = Some(grad.to_vec()),
        }
    }

    pub fn add_top_state(&mut self, seq: usize, pos: usize, grad: &[F]) {
        self.top_rows[seq].push((pos, grad.to_vec()));
    }
}

fn apply_dropout<F: Real>(x: &mut [F], p: f64, rng: &mut Rng) -> Vec<F> {
    let keep = F::c(1.0 / (1.0 - p));
    let mask: Vec<F> = (0..x.len())
        .map(|_| if rng.random::<f64>() < p { F::zero() } else { keep })
        .collect();
    x.iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
    mask
}

fn maybe_dropout<F: Real>(x: &mut [F], p: f64, mode: &mut Mode<'_>) -> Option<Vec<F>> {
    match mode {
        Mode::Train(rng) if p > 0.0 => Some(apply_dropout(x, p, rng)),
        _ => None,
    }
}

fn check_finite<F: Real>(x: &[F], what: impl FnOnce() -> String) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what()))
    }
}

/// Masked multi-head attention over packed sequences. Returns the context
/// matrix and the attention probabilities (`heads x len x len` per sequence).
fn attention<F: Real>(
    q: &[F],
    k: &[F],
    v: &[F],
    spans: &[Span],
    key_mask: &[bool],
    prob_offsets: &[usize],
    total_probs: usize,
    cfg: &EncoderConfig,
) -> (Vec<F>, Vec<F>) {
    let d = cfg.hidden;
    let dh = cfg.head_dim();
    let scale = F::one() / F::c(dh as f64).sqrt();
    let mut ctx = vec![F::zero(); q.len()];
    let mut probs = vec![F::zero(); total_probs];
    for (s, span) in spans.iter().enumerate() {
        let (o, n) = (span.offset, span.len);
        let mask = &key_mask[o..o + n];
        for h in 0..cfg.heads {
            let base = o * d + h * dh;
            let p_off = prob_offsets[s] + h * n * n;
            let pm = &mut probs[p_off..p_off + n * n];
            gemm(
                scale,
                View::strided(&q[base..], n, dh, d, 1),
                View::strided(&k[base..], n, dh, d, 1).t(),
                F::zero(),
                ViewMut::new(pm, n, n),
            );
            for row in pm.chunks_exact_mut(n) {
                let mut max = F::neg_infinity();
                for (j, &x) in row.iter().enumerate() {
                    if mask[j] && x > max {
                        max = x;
                    }
                }
                let mut sum = F::zero();
                for (j, x) in row.iter_mut().enumerate() {
                    *x = if mask[j] { (*x - max).exp() } else { F::zero() };
                    sum += *x;
                }
                let inv = F::one() / sum;
                row.iter_mut().for_each(|x| *x *= inv);
            }
            gemm(
                F::one(),
                View::new(pm, n, n),
                View::strided(&v[base..], n, dh, d, 1),
                F::zero(),
                ViewMut::strided(&mut ctx[base..], n, dh, d, 1),
            );
        }
    }
    (ctx, probs)
}

#[allow(clippy::too_many_arguments)]
fn attention_backward<F: Real>(
    q: &[F],
    k: &[F],
    v: &[F],
    probs: &[F],
    dctx: &[F],
    spans: &[Span],
    prob_offsets: &[usize],
    cfg: &EncoderConfig,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let d = cfg.hidden;
    let dh = cfg.head_dim();
    let scale = F::one() / F::c(dh as f64).sqrt();
    let mut dq = vec![F::zero(); q.len()];
    let mut dk = vec![F::zero(); k.len()];
    let mut dv = vec![F::zero(); v.len()];
    let mut dp = Vec::new();
    for (s, span) in spans.iter().enumerate() {
        let (o, n) = (span.offset, span.len);
        dp.clear();
        dp.resize(n * n, F::zero());
        for h in 0..cfg.heads {
            let base = o * d + h * dh;
            let p_off = prob_offsets[s] + h * n * n;
            let pm = &probs[p_off..p_off + n * n];
            let dctx_h = View::strided(&dctx[base..], n, dh, d, 1);
            // dV = P^T dctx
            gemm(F::one(), View::new(pm, n, n).t(), dctx_h, F::zero(), ViewMut::strided(&mut dv[base..], n, dh, d, 1));
            // dP = dctx V^T
            gemm(
                F::one(),
                dctx_h,
                View::strided(&v[base..], n, dh, d, 1).t(),
                F::zero(),
                ViewMut::new(&mut dp, n, n),
            );
            // softmax backward: dS = P * (dP - rowsum(dP * P))
            for (dr, pr) in dp.chunks_exact_mut(n).zip(pm.chunks_exact(n)) {
                let inner: F = dr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
                for (x, &p) in dr.iter_mut().zip(pr) {
                    *x = p * (*x - inner);
                }
            }
            gemm(
                scale,
                View::new(&dp, n, n),
                View::strided(&k[base..], n, dh, d, 1),
                F::zero(),
                ViewMut::strided(&mut dq[base..], n, dh, d, 1),
            );
            gemm(
                scale,
                View::new(&dp, n, n).t(),
                View::strided(&q[base..], n, dh, d, 1),
                F::zero(),
                ViewMut::strided(&mut dk[base..], n, dh, d, 1),
            );
        }
    }
    (dq, dk, dv)
}

/// Mask-weighted pooling of one sequence's `len x hidden` states.
pub fn pool<F: Real>(states: &[F], mask: &[bool], hidden: usize, mode: Pooling) -> Result<Vec<F>> {
    let active = mask.iter().filter(|&&m| m).count();
    if active == 0 {
        return Err(Error::Empty("pooling mask has no active position".into()));
    }
    Ok(match mode {
        Pooling::Cls => states[..hidden].to_vec(),
        Pooling::Mean => {
            let mut out = vec![F::zero(); hidden];
            for (row, _) in states.chunks_exact(hidden).zip(mask).filter(|(_, &m)| m) {
                out.iter_mut().zip(row).for_each(|(o, &x)| *o += x);
            }
            let inv = F::one() / F::c(active as f64);
            out.iter_mut().for_each(|o| *o *= inv);
            out
        }
    })
}

fn pool_backward<F: Real>(grad: &[F], mask: &[bool], hidden: usize, mode: Pooling, dstates: &mut [F]) {
    match mode {
        Pooling::Cls => dstates[..hidden].iter_mut().zip(grad).for_each(|(d, &g)| *d += g),
        Pooling::Mean => {
            let active = mask.iter().filter(|&&m| m).count();
            let inv = F::one() / F::c(active as f64);
            for (row, _) in dstates.chunks_exact_mut(hidden).zip(mask).filter(|(_, &m)| m) {
                row.iter_mut().zip(grad).for_each(|(d, &g)| *d += g * inv);
            }
        }
    }
}

struct LayerResult<F> {
    out: Vec<F>,
    tape: Option<LayerTape<F>>,
}

fn layer_forward<F: Real>(
    p: &LayerParams<F>,
    cfg: &EncoderConfig,
    x: Vec<F>,
    packed: &Forward<F>,
    total_probs: usize,
    mode: &mut Mode<'_>,
    record: bool,
) -> LayerResult<F> {
    let (d, f) = (cfg.hidden, cfg.ffn);
    let rows = x.len() / d;
    let q = linear(&x, &p.wq.data, &p.bq.data, rows, d, d);
    let k = linear(&x, &p.wk.data, &p.bk.data, rows, d, d);
    let v = linear(&x, &p.wv.data, &p.bv.data, rows, d, d);
    let (ctx, probs) = attention(&q, &k, &v, &packed.spans, &packed.key_mask, &packed.prob_offsets, total_probs, cfg);
    let mut a = linear(&ctx, &p.wo.data, &p.bo.data, rows, d, d);
    let attn_drop = maybe_dropout(&mut a, cfg.dropout, mode);
    a.iter_mut().zip(&x).for_each(|(a, &xv)| *a += xv);
    let (y, ln1) = layer_norm(&a, &p.ln1_g.data, &p.ln1_b.data, d);

    let hpre = linear(&y, &p.w1.data, &p.b1.data, rows, d, f);
    let hact: Vec<F> = hpre.iter().map(|&h| gelu(h)).collect();
    let mut o = linear(&hact, &p.w2.data, &p.b2.data, rows, f, d);
    let ffn_drop = maybe_dropout(&mut o, cfg.dropout, mode);
    o.iter_mut().zip(&y).for_each(|(o, &yv)| *o += yv);
    let (out, ln2) = layer_norm(&o, &p.ln2_g.data, &p.ln2_b.data, d);

    let tape = record.then(|| LayerTape {
        x,
        q,
        k,
        v,
        probs,
        ctx,
        attn_drop,
        ln1,
        y,
        hpre,
        hact,
        ffn_drop,
        ln2,
    });
    LayerResult { out, tape }
}

/// Runs the encoder over a batch. With `record`, keeps what
/// [`Forward::backward`] needs.
pub fn forward<F: Real>(
    params: &EncoderParams<F>,
    cfg: &EncoderConfig,
    seqs: &[&TokenSequence],
    mut mode: Mode<'_>,
    record: bool,
) -> Result<Forward<F>> {
    let d = cfg.hidden;
    let mut packed = Forward {
        outputs: Vec::with_capacity(seqs.len()),
        spans: Vec::with_capacity(seqs.len()),
        ids: Vec::new(),
        positions: Vec::new(),
        key_mask: Vec::new(),
        prob_offsets: Vec::with_capacity(seqs.len()),
        pooling: cfg.pooling,
        tape: None,
    };
    let mut total_probs = 0;
    for seq in seqs {
        if seq.ids.len() > cfg.max_len {
            return Err(Error::SequenceTooLong {
                len: seq.ids.len(),
                max_len: cfg.max_len,
            });
        }
        let n = seq.span();
        if n == 0 {
            return Err(Error::Empty("sequence has no attended position".into()));
        }
        if let Some(&bad) = seq.ids[..n].iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(Error::Shape(format!("token id {bad} >= vocab size {}", cfg.vocab_size)));
        }
        packed.spans.push(Span {
            offset: packed.ids.len(),
            len: n,
        });
        packed.prob_offsets.push(total_probs);
        total_probs += cfg.heads * n * n;
        packed.ids.extend_from_slice(&seq.ids[..n]);
        packed.positions.extend(0..n);
        packed.key_mask.extend(seq.attention_mask[..n].iter().map(|&m| m == 1));
    }
    let rows = packed.ids.len();

    let mut e = vec![F::zero(); rows * d];
    for (r, row) in e.chunks_exact_mut(d).enumerate() {
        let t = &params.tok_emb.data[packed.ids[r] as usize * d..][..d];
        let pe = &params.pos_emb.data[packed.positions[r] * d..][..d];
        for j in 0..d {
            row[j] = t[j] + pe[j];
        }
    }
    let (mut x, emb_ln) = layer_norm(&e, &params.emb_ln_g.data, &params.emb_ln_b.data, d);
    let emb_drop = maybe_dropout(&mut x, cfg.dropout, &mut mode);

    let mut layer_states = Vec::with_capacity(cfg.layers);
    let mut tapes = Vec::with_capacity(cfg.layers);
    for (l, lp) in params.layers.iter().enumerate() {
        let res = layer_forward(lp, cfg, x, &packed, total_probs, &mut mode, record);
        check_finite(&res.out, || format!("layer {} output", l + 1))?;
        if let Some(t) = res.tape {
            tapes.push(t);
        }
        layer_states.push(res.out.clone());
        x = res.out;
    }

    for span in &packed.spans {
        let (o, n) = (span.offset, span.len);
        let mask = &packed.key_mask[o..o + n];
        let states: Vec<Vec<F>> = layer_states.iter().map(|s| s[o * d..(o + n) * d].to_vec()).collect();
        let pooled = states
            .iter()
            .map(|s| pool(s, mask, d, cfg.pooling))
            .collect::<Result<Vec<_>>>()?;
        packed.outputs.push(LayerOutputs {
            len: n,
            hidden: d,
            states,
            pooled,
        });
    }
    if record {
        packed.tape = Some(Tape {
            emb_ln,
            emb_drop,
            layers: tapes,
        });
    }
    Ok(packed)
}

/// Single-sequence convenience wrapper around [`forward`].
pub fn encode_sequence<F: Real>(
    params: &EncoderParams<F>,
    cfg: &EncoderConfig,
    seq: &TokenSequence,
    mode: Mode<'_>,
) -> Result<LayerOutputs<F>> {
    let mut fw = forward(params, cfg, &[seq], mode, false)?;
    Ok(fw.outputs.pop().expect("one sequence"))
}

impl<F: Real> Forward<F> {
    pub fn is_recorded(&self) -> bool {
        self.tape.is_some()
    }

    /// Attention probabilities of `layer`, `head` for sequence `seq`
    /// (`len x len`, row = query). Requires a recorded pass.
    pub fn attention_probs(&self, seq: usize, layer: usize, head: usize) -> Option<&[F]> {
        let tape = self.tape.as_ref()?;
        let n = self.spans[seq].len;
        let off = self.prob_offsets[seq] + head * n * n;
        Some(&tape.layers[layer].probs[off..off + n * n])
    }

    /// Backpropagates `grads` through the recorded pass, returning gradients
    /// for every encoder tensor.
    pub fn backward(&self, params: &EncoderParams<F>, cfg: &EncoderConfig, grads: &OutputGrads<F>) -> Result<EncoderParams<F>> {
        let tape = self
            .tape
            .as_ref()
            .ok_or_else(|| Error::Invalid("backward called on a forward pass that was not recorded".into()))?;
        let d = cfg.hidden;
        let rows = self.ids.len();
        let layers = cfg.layers;
        let mut g = params.zeros_like();

        // Inject output gradients per layer.
        let mut inject: Vec<Option<Vec<F>>> = vec![None; layers];
        for (s, span) in self.spans.iter().enumerate() {
            let (o, n) = (span.offset, span.len);
            let mask = &self.key_mask[o..o + n];
            for (l, pg) in grads.pooled[s].iter().enumerate() {
                if let Some(pg) = pg {
                    let buf = inject[l].get_or_insert_with(|| vec![F::zero(); rows * d]);
                    pool_backward(pg, mask, d, self.pooling, &mut buf[o * d..(o + n) * d]);
                }
            }
            if !grads.top_rows[s].is_empty() {
                let buf = inject[layers - 1].get_or_insert_with(|| vec![F::zero(); rows * d]);
                for (pos, rg) in &grads.top_rows[s] {
                    let r = o + pos;
                    buf[r * d..(r + 1) * d].iter_mut().zip(rg).for_each(|(a, &b)| *a += b);
                }
            }
        }

        let mut dx = vec![F::zero(); rows * d];
        for l in (0..layers).rev() {
            if let Some(extra) = &inject[l] {
                dx.iter_mut().zip(extra).for_each(|(a, &b)| *a += b);
            }
            dx = self.layer_backward(&params.layers[l], &mut g.layers[l], &tape.layers[l], cfg, dx);
        }

        if let Some(mask) = &tape.emb_drop {
            dx.iter_mut().zip(mask).for_each(|(a, &m)| *a *= m);
        }
        let de = layer_norm_backward(&tape.emb_ln, &params.emb_ln_g.data, &dx, &mut g.emb_ln_g.data, &mut g.emb_ln_b.data, d);
        for (r, row) in de.chunks_exact(d).enumerate() {
            let t = &mut g.tok_emb.data[self.ids[r] as usize * d..][..d];
            t.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
            let pe = &mut g.pos_emb.data[self.positions[r] * d..][..d];
            pe.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
        }
        Ok(g)
    }

    fn layer_backward(
        &self,
        p: &LayerParams<F>,
        g: &mut LayerParams<F>,
        t: &LayerTape<F>,
        cfg: &EncoderConfig,
        dout: Vec<F>,
    ) -> Vec<F> {
        let (d, f) = (cfg.hidden, cfg.ffn);
        let rows = dout.len() / d;

        let dr2 = layer_norm_backward(&t.ln2, &p.ln2_g.data, &dout, &mut g.ln2_g.data, &mut g.ln2_b.data, d);
        let mut dy = dr2.clone();
        let mut dff = dr2;
        if let Some(mask) = &t.ffn_drop {
            dff.iter_mut().zip(mask).for_each(|(a, &m)| *a *= m);
        }
        let mut dhact = vec![F::zero(); rows * f];
        linear_backward(&t.hact, &p.w2.data, &dff, &mut g.w2.data, &mut g.b2.data, Some(&mut dhact), rows, f, d);
        let dhpre: Vec<F> = dhact.iter().zip(&t.hpre).map(|(&a, &h)| a * gelu_grad(h)).collect();
        linear_backward(&t.y, &p.w1.data, &dhpre, &mut g.w1.data, &mut g.b1.data, Some(&mut dy), rows, d, f);

        let dr1 = layer_norm_backward(&t.ln1, &p.ln1_g.data, &dy, &mut g.ln1_g.data, &mut g.ln1_b.data, d);
        let mut dx = dr1.clone();
        let mut da = dr1;
        if let Some(mask) = &t.attn_drop {
            da.iter_mut().zip(mask).for_each(|(a, &m)| *a *= m);
        }
        let mut dctx = vec![F::zero(); rows * d];
        linear_backward(&t.ctx, &p.wo.data, &da, &mut g.wo.data, &mut g.bo.data, Some(&mut dctx), rows, d, d);
        let (dq, dk, dv) = attention_backward(&t.q, &t.k, &t.v, &t.probs, &dctx, &self.spans, &self.prob_offsets, cfg);
        linear_backward(&t.x, &p.wq.data, &dq, &mut g.wq.data, &mut g.bq.data, Some(&mut dx), rows, d, d);
        linear_backward(&t.x, &p.wk.data, &dk, &mut g.wk.data, &mut g.bk.data, Some(&mut dx), rows, d, d);
        linear_backward(&t.x, &p.wv.data, &dv, &mut g.wv.data, &mut g.bv.data, Some(&mut dx), rows, d, d);
        dx
    }
}

/// Cached activations of the MLM head.
pub struct MlmTape<F> {
    x: Vec<F>,
    z: Vec<F>,
    ln: NormCache<F>,
    t: Vec<F>,
}

/// MLM head over `rows x hidden` top-layer states: dense, GELU, layer norm,
/// then the tied token-embedding projection plus an output bias. Returns
/// `rows x vocab_size` logits.
pub fn mlm_forward<F: Real>(params: &EncoderParams<F>, cfg: &EncoderConfig, x: Vec<F>) -> (Vec<F>, MlmTape<F>) {
    let (d, v) = (cfg.hidden, cfg.vocab_size);
    let rows = x.len() / d;
    let z = linear(&x, &params.mlm_w.data, &params.mlm_b.data, rows, d, d);
    let a: Vec<F> = z.iter().map(|&h| gelu(h)).collect();
    let (t, ln) = layer_norm(&a, &params.mlm_ln_g.data, &params.mlm_ln_b.data, d);
    let mut logits = Vec::with_capacity(rows * v);
    for _ in 0..rows {
        logits.extend_from_slice(&params.mlm_bias.data);
    }
    gemm(
        F::one(),
        View::new(&t, rows, d),
        View::new(&params.tok_emb.data, v, d).t(),
        F::one(),
        ViewMut::new(&mut logits, rows, v),
    );
    (logits, MlmTape { x, z, ln, t })
}

/// Backward of [`mlm_forward`]; accumulates into `g` and returns the
/// gradient w.r.t. the input states.
pub fn mlm_backward<F: Real>(
    params: &EncoderParams<F>,
    cfg: &EncoderConfig,
    tape: &MlmTape<F>,
    dlogits: &[F],
    g: &mut EncoderParams<F>,
) -> Vec<F> {
    let (d, v) = (cfg.hidden, cfg.vocab_size);
    let rows = tape.x.len() / d;
    // logits = t E^T + bias
    gemm(
        F::one(),
        View::new(dlogits, rows, v).t(),
        View::new(&tape.t, rows, d),
        F::one(),
        ViewMut::new(&mut g.tok_emb.data, v, d),
    );
    for row in dlogits.chunks_exact(v) {
        g.mlm_bias.data.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
    }
    let mut dt = vec![F::zero(); rows * d];
    gemm(
        F::one(),
        View::new(dlogits, rows, v),
        View::new(&params.tok_emb.data, v, d),
        F::zero(),
        ViewMut::new(&mut dt, rows, d),
    );
    let da = layer_norm_backward(&tape.ln, &params.mlm_ln_g.data, &dt, &mut g.mlm_ln_g.data, &mut g.mlm_ln_b.data, d);
    let dz: Vec<F> = da.iter().zip(&tape.z).map(|(&a, &z)| a * gelu_grad(z)).collect();
    let mut dx = vec![F::zero(); rows * d];
    linear_backward(&tape.x, &params.mlm_w.data, &dz, &mut g.mlm_w.data, &mut g.mlm_b.data, Some(&mut dx), rows, d, d);
    dx
}

/// Full-sequence MLM logits (`len x vocab_size`) from top-layer states.
pub fn mlm_logits<F: Real>(params: &EncoderParams<F>, cfg: &EncoderConfig, out: &LayerOutputs<F>) -> Vec<F> {
    let top = out.states.last().expect("at least one layer").clone();
    mlm_forward(params, cfg, top).0
}
