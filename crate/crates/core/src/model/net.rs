//! Network assembly: patch embedder, encoder over [subtype token ∥ patches],
//! subtype head, and the autoregressive decoder — forward passes that cache
//! exactly what the paired backward passes consume.
//!
//! The encoder applies no positional encoding over patches, so it is
//! permutation-equivariant in the patch rows; the decoder adds a sinusoidal
//! table over token positions. Cross-attention keys/values are all encoder
//! states including row 0 (the encoded subtype token), which is how the
//! subtype signal reaches caption generation.

use rand_chacha::ChaCha8Rng;

use crate::data::{PatchImage, PAD};
use crate::error::{Error, Result};
use crate::model::ops::{
    attention_bwd, attention_fwd, conv2d_bwd, conv2d_fwd, conv_out, dropout_bwd, dropout_fwd,
    gelu_bwd, gelu_fwd, layernorm_bwd, layernorm_fwd, linear_bwd, linear_fwd, AttnCache,
    AttnGrads, AttnWeights, LayerNormCache,
};
use crate::model::{ForwardOutput, Gradients, LossBreakdown, ModelParams, TrainSample};
use crate::tensor::{log_sum_exp, softmax_rows, Tensor};

type Dropout<'a> = Option<&'a mut ChaCha8Rng>;

fn add_rows(x: &mut [f64], y: &[f64]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += *b;
    }
}

// ---------------------------------------------------------------------------
// Patch embedder: three stride-2 convs with GELU, global average pool, linear.

struct PatchCache {
    input: Vec<f64>,
    pre: [Vec<f64>; 3],
    act: [Vec<f64>; 3],
    pooled: Vec<f64>,
    sizes: [usize; 4],
}

pub(crate) struct EmbedderCache {
    patches: Vec<PatchCache>,
}

pub(crate) fn embedder_forward(
    patches: &[PatchImage],
    params: &ModelParams,
) -> Result<(Tensor, EmbedderCache)> {
    let cfg = params.config();
    if patches.is_empty() {
        return Err(Error::EmptyPatchSet);
    }
    let (c_in, size) = (patches[0].channels(), patches[0].size());
    if c_in != cfg.patch_channels {
        return Err(Error::ShapeMismatch {
            name: "patch".into(),
            expected: vec![cfg.patch_channels, size, size],
            got: vec![c_in, size, size],
        });
    }
    for p in patches {
        if p.channels() != c_in || p.size() != size {
            return Err(Error::ShapeMismatch {
                name: "patch".into(),
                expected: vec![c_in, size, size],
                got: vec![p.channels(), p.size(), p.size()],
            });
        }
    }

    let [c1, c2, c3] = cfg.embed_channels;
    let chans = [c_in, c1, c2, c3];
    let mut rows = Tensor::zeros(&[patches.len(), cfg.embed_dim]);
    let mut caches = Vec::with_capacity(patches.len());
    for (pi, patch) in patches.iter().enumerate() {
        let input: Vec<f64> = patch.pixels().iter().map(|&v| v as f64).collect();
        let mut sizes = [size, 0, 0, 0];
        let mut pre: [Vec<f64>; 3] = Default::default();
        let mut act: [Vec<f64>; 3] = Default::default();
        let mut x = input.clone();
        for stage in 0..3 {
            let w = params.get(&format!("embed.conv{stage}.w"));
            let b = params.get(&format!("embed.conv{stage}.b"));
            let out = conv2d_fwd(&x, chans[stage], sizes[stage], w, b);
            sizes[stage + 1] = conv_out(sizes[stage]);
            act[stage] = gelu_fwd(&out);
            pre[stage] = out;
            x = act[stage].clone();
        }
        let spatial = sizes[3] * sizes[3];
        let pooled: Vec<f64> = (0..c3)
            .map(|c| x[c * spatial..(c + 1) * spatial].iter().sum::<f64>() / spatial as f64)
            .collect();
        let row = linear_fwd(&pooled, 1, params.get("embed.proj.w"), params.get("embed.proj.b"));
        rows.row_mut(pi).copy_from_slice(&row);
        caches.push(PatchCache { input, pre, act, pooled, sizes });
    }
    Ok((rows, EmbedderCache { patches: caches }))
}

pub(crate) fn embedder_backward(
    d_rows: &[f64],
    cache: &EmbedderCache,
    params: &ModelParams,
    grads: &mut Gradients,
) {
    let cfg = params.config();
    let d = cfg.embed_dim;
    let [c1, c2, c3] = cfg.embed_channels;
    let chans = [cfg.patch_channels, c1, c2, c3];
    for (pi, pc) in cache.patches.iter().enumerate() {
        let drow = &d_rows[pi * d..(pi + 1) * d];
        let mut gproj_w = std::mem::replace(grads.get_mut("embed.proj.w"), Tensor::zeros(&[0]));
        let mut gproj_b = std::mem::replace(grads.get_mut("embed.proj.b"), Tensor::zeros(&[0]));
        let dpooled = linear_bwd(
            drow,
            1,
            &pc.pooled,
            params.get("embed.proj.w"),
            &mut gproj_w,
            &mut gproj_b,
        );
        *grads.get_mut("embed.proj.w") = gproj_w;
        *grads.get_mut("embed.proj.b") = gproj_b;

        let spatial = pc.sizes[3] * pc.sizes[3];
        let mut dact: Vec<f64> = Vec::with_capacity(c3 * spatial);
        for c in 0..c3 {
            dact.extend(std::iter::repeat(dpooled[c] / spatial as f64).take(spatial));
        }
        for stage in (0..3).rev() {
            let dpre = gelu_bwd(&dact, &pc.pre[stage]);
            let below: &[f64] = if stage == 0 { &pc.input } else { &pc.act[stage - 1] };
            let w = params.get(&format!("embed.conv{stage}.w"));
            let mut gw =
                std::mem::replace(grads.get_mut(&format!("embed.conv{stage}.w")), Tensor::zeros(&[0]));
            let mut gb =
                std::mem::replace(grads.get_mut(&format!("embed.conv{stage}.b")), Tensor::zeros(&[0]));
            let dbelow = conv2d_bwd(
                &dpre,
                below,
                chans[stage],
                pc.sizes[stage],
                w,
                &mut gw,
                &mut gb,
                stage > 0,
            );
            *grads.get_mut(&format!("embed.conv{stage}.w")) = gw;
            *grads.get_mut(&format!("embed.conv{stage}.b")) = gb;
            if let Some(dbelow) = dbelow {
                dact = dbelow;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Encoder.

struct EncLayerCache {
    ln1: LayerNormCache,
    ln1_out: Vec<f64>,
    attn: AttnCache,
    attn_drop: Option<Vec<f64>>,
    ln2: LayerNormCache,
    ln2_out: Vec<f64>,
    ff_pre: Vec<f64>,
    ff_act: Vec<f64>,
    ff_drop: Option<Vec<f64>>,
}

pub(crate) struct EncoderCache {
    input_drop: Option<Vec<f64>>,
    layers: Vec<EncLayerCache>,
    final_ln: LayerNormCache,
    rows: usize,
}

fn attn_weights<'a>(params: &'a ModelParams, prefix: &str) -> AttnWeights<'a> {
    AttnWeights {
        wq: params.get(&format!("{prefix}.wq")),
        bq: params.get(&format!("{prefix}.bq")),
        wk: params.get(&format!("{prefix}.wk")),
        bk: params.get(&format!("{prefix}.bk")),
        wv: params.get(&format!("{prefix}.wv")),
        bv: params.get(&format!("{prefix}.bv")),
        wo: params.get(&format!("{prefix}.wo")),
        bo: params.get(&format!("{prefix}.bo")),
    }
}

/// Run attention backward against the named weight prefix, accumulating into
/// `grads` (works around holding eight mutable borrows at once).
#[allow(clippy::too_many_arguments)]
fn attention_bwd_named(
    dout: &[f64],
    cache: &AttnCache,
    q_in: &[f64],
    kv_in: &[f64],
    heads: usize,
    dim: usize,
    params: &ModelParams,
    prefix: &str,
    grads: &mut Gradients,
) -> (Vec<f64>, Vec<f64>) {
    let names: Vec<String> = ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"]
        .iter()
        .map(|p| format!("{prefix}.{p}"))
        .collect();
    let mut taken: Vec<Tensor> =
        names.iter().map(|n| std::mem::replace(grads.get_mut(n), Tensor::zeros(&[0]))).collect();
    let (dq_in, dkv_in) = {
        let mut it = taken.iter_mut();
        let (wq, bq, wk, bk, wv, bv, wo, bo) = (
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
        );
        attention_bwd(
            dout,
            cache,
            q_in,
            kv_in,
            heads,
            dim,
            &attn_weights(params, prefix),
            AttnGrads { wq, bq, wk, bk, wv, bv, wo, bo },
        )
    };
    for (name, tensor) in names.iter().zip(taken) {
        *grads.get_mut(name) = tensor;
    }
    (dq_in, dkv_in)
}

fn layernorm_bwd_named(
    dy: &[f64],
    cache: &LayerNormCache,
    rows: usize,
    dim: usize,
    params: &ModelParams,
    prefix: &str,
    grads: &mut Gradients,
) -> Vec<f64> {
    let gname = format!("{prefix}.g");
    let bname = format!("{prefix}.b");
    let mut dg = std::mem::replace(grads.get_mut(&gname), Tensor::zeros(&[0]));
    let mut db = std::mem::replace(grads.get_mut(&bname), Tensor::zeros(&[0]));
    let dx = layernorm_bwd(dy, cache, rows, dim, params.get(&gname), &mut dg, &mut db);
    *grads.get_mut(&gname) = dg;
    *grads.get_mut(&bname) = db;
    dx
}

fn linear_bwd_named(
    dy: &[f64],
    rows: usize,
    x: &[f64],
    params: &ModelParams,
    wname: &str,
    bname: &str,
    grads: &mut Gradients,
) -> Vec<f64> {
    let mut dw = std::mem::replace(grads.get_mut(wname), Tensor::zeros(&[0]));
    let mut db = std::mem::replace(grads.get_mut(bname), Tensor::zeros(&[0]));
    let dx = linear_bwd(dy, rows, x, params.get(wname), &mut dw, &mut db);
    *grads.get_mut(wname) = dw;
    *grads.get_mut(bname) = db;
    dx
}

/// Prepend the subtype token to the patch rows and run the encoder stack.
pub(crate) fn encoder_forward(
    patch_embeds: &Tensor,
    params: &ModelParams,
    dropout: &mut Dropout,
) -> (Tensor, EncoderCache) {
    let cfg = params.config();
    let d = cfg.embed_dim;
    debug_assert_eq!(patch_embeds.cols(), d);
    let rows = patch_embeds.rows() + 1;

    let mut x = Vec::with_capacity(rows * d);
    x.extend_from_slice(params.get("subtype_token").data());
    x.extend_from_slice(patch_embeds.data());
    let input_drop = dropout_fwd(&mut x, cfg.dropout_rate, dropout);

    let mut layers = Vec::with_capacity(cfg.enc_layers);
    for i in 0..cfg.enc_layers {
        let (ln1_out, ln1) = layernorm_fwd(
            &x,
            rows,
            d,
            params.get(&format!("enc.{i}.ln1.g")),
            params.get(&format!("enc.{i}.ln1.b")),
        );
        let (mut attn_out, attn) = attention_fwd(
            &ln1_out,
            rows,
            &ln1_out,
            rows,
            cfg.heads,
            d,
            &attn_weights(params, &format!("enc.{i}.attn")),
            false,
        );
        let attn_drop = dropout_fwd(&mut attn_out, cfg.dropout_rate, dropout);
        add_rows(&mut x, &attn_out);

        let (ln2_out, ln2) = layernorm_fwd(
            &x,
            rows,
            d,
            params.get(&format!("enc.{i}.ln2.g")),
            params.get(&format!("enc.{i}.ln2.b")),
        );
        let ff_pre = linear_fwd(
            &ln2_out,
            rows,
            params.get(&format!("enc.{i}.ff.w1")),
            params.get(&format!("enc.{i}.ff.b1")),
        );
        let ff_act = gelu_fwd(&ff_pre);
        let mut ff_out = linear_fwd(
            &ff_act,
            rows,
            params.get(&format!("enc.{i}.ff.w2")),
            params.get(&format!("enc.{i}.ff.b2")),
        );
        let ff_drop = dropout_fwd(&mut ff_out, cfg.dropout_rate, dropout);
        add_rows(&mut x, &ff_out);

        layers.push(EncLayerCache {
            ln1,
            ln1_out,
            attn,
            attn_drop,
            ln2,
            ln2_out,
            ff_pre,
            ff_act,
            ff_drop,
        });
    }

    let (out, final_ln) =
        layernorm_fwd(&x, rows, d, params.get("enc.final_ln.g"), params.get("enc.final_ln.b"));
    (
        Tensor::from_vec(&[rows, d], out),
        EncoderCache { input_drop, layers, final_ln, rows },
    )
}

/// Returns the gradient w.r.t. the patch embed rows; the subtype-token
/// gradient goes straight into `grads`.
pub(crate) fn encoder_backward(
    d_states: &[f64],
    cache: &EncoderCache,
    params: &ModelParams,
    grads: &mut Gradients,
) -> Vec<f64> {
    let cfg = params.config();
    let d = cfg.embed_dim;
    let rows = cache.rows;

    let mut dx = layernorm_bwd_named(
        d_states,
        &cache.final_ln,
        rows,
        d,
        params,
        "enc.final_ln",
        grads,
    );

    for (i, layer) in cache.layers.iter().enumerate().rev() {
        // Feed-forward sublayer.
        let mut dff_out = dx.clone();
        dropout_bwd(&mut dff_out, &layer.ff_drop);
        let dff_act = linear_bwd_named(
            &dff_out,
            rows,
            &layer.ff_act,
            params,
            &format!("enc.{i}.ff.w2"),
            &format!("enc.{i}.ff.b2"),
            grads,
        );
        let dff_pre = gelu_bwd(&dff_act, &layer.ff_pre);
        let dln2_out = linear_bwd_named(
            &dff_pre,
            rows,
            &layer.ln2_out,
            params,
            &format!("enc.{i}.ff.w1"),
            &format!("enc.{i}.ff.b1"),
            grads,
        );
        let mut dx_mid =
            layernorm_bwd_named(&dln2_out, &layer.ln2, rows, d, params, &format!("enc.{i}.ln2"), grads);
        add_rows(&mut dx_mid, &dx);

        // Attention sublayer.
        let mut dattn_out = dx_mid.clone();
        dropout_bwd(&mut dattn_out, &layer.attn_drop);
        let (dq_in, dkv_in) = attention_bwd_named(
            &dattn_out,
            &layer.attn,
            &layer.ln1_out,
            &layer.ln1_out,
            cfg.heads,
            d,
            params,
            &format!("enc.{i}.attn"),
            grads,
        );
        let mut dln1_out = dq_in;
        add_rows(&mut dln1_out, &dkv_in);
        let mut dx_in =
            layernorm_bwd_named(&dln1_out, &layer.ln1, rows, d, params, &format!("enc.{i}.ln1"), grads);
        add_rows(&mut dx_in, &dx_mid);
        dx = dx_in;
    }

    dropout_bwd(&mut dx, &cache.input_drop);
    let token_grad = grads.get_mut("subtype_token");
    for (g, v) in token_grad.data_mut().iter_mut().zip(&dx[..d]) {
        *g += *v;
    }
    dx[d..].to_vec()
}

// ---------------------------------------------------------------------------
// Decoder.

struct DecLayerCache {
    ln1: LayerNormCache,
    ln1_out: Vec<f64>,
    self_attn: AttnCache,
    self_drop: Option<Vec<f64>>,
    ln2: LayerNormCache,
    ln2_out: Vec<f64>,
    cross: AttnCache,
    cross_drop: Option<Vec<f64>>,
    ln3: LayerNormCache,
    ln3_out: Vec<f64>,
    ff_pre: Vec<f64>,
    ff_act: Vec<f64>,
    ff_drop: Option<Vec<f64>>,
}

pub(crate) struct DecoderCache {
    tokens: Vec<u32>,
    emb_drop: Option<Vec<f64>>,
    layers: Vec<DecLayerCache>,
    final_ln: LayerNormCache,
    dec_out: Vec<f64>,
    rows: usize,
}

/// Teacher-forced decoder pass over `tokens` (the caption minus its last
/// element); row `t` of the returned logits predicts token `t + 1`.
pub(crate) fn decoder_forward(
    tokens: &[u32],
    enc_states: &Tensor,
    params: &ModelParams,
    dropout: &mut Dropout,
) -> Result<(Tensor, DecoderCache)> {
    let cfg = params.config();
    let d = cfg.embed_dim;
    let rows = tokens.len();
    if rows == 0 {
        return Err(Error::InvalidCaption("empty decoder input".into()));
    }
    if rows > cfg.max_caption_len {
        return Err(Error::InvalidCaption(format!(
            "decoder input of {rows} tokens exceeds max_caption_len {}",
            cfg.max_caption_len
        )));
    }
    let enc_rows = enc_states.rows();

    let table = params.get("tok_embed.w");
    let mut x = vec![0.0; rows * d];
    for (t, &tok) in tokens.iter().enumerate() {
        if tok as usize >= cfg.vocab_size {
            return Err(Error::InvalidCaption(format!("token id {tok} out of vocabulary")));
        }
        let emb = table.row(tok as usize);
        let pos = params.pos_table().row(t);
        for i in 0..d {
            x[t * d + i] = emb[i] + pos[i];
        }
    }
    let emb_drop = dropout_fwd(&mut x, cfg.dropout_rate, dropout);

    let mut layers = Vec::with_capacity(cfg.dec_layers);
    for i in 0..cfg.dec_layers {
        let (ln1_out, ln1) = layernorm_fwd(
            &x,
            rows,
            d,
            params.get(&format!("dec.{i}.ln1.g")),
            params.get(&format!("dec.{i}.ln1.b")),
        );
        let (mut self_out, self_attn) = attention_fwd(
            &ln1_out,
            rows,
            &ln1_out,
            rows,
            cfg.heads,
            d,
            &attn_weights(params, &format!("dec.{i}.self")),
            true,
        );
        let self_drop = dropout_fwd(&mut self_out, cfg.dropout_rate, dropout);
        add_rows(&mut x, &self_out);

        let (ln2_out, ln2) = layernorm_fwd(
            &x,
            rows,
            d,
            params.get(&format!("dec.{i}.ln2.g")),
            params.get(&format!("dec.{i}.ln2.b")),
        );
        let (mut cross_out, cross) = attention_fwd(
            &ln2_out,
            rows,
            enc_states.data(),
            enc_rows,
            cfg.heads,
            d,
            &attn_weights(params, &format!("dec.{i}.cross")),
            false,
        );
        let cross_drop = dropout_fwd(&mut cross_out, cfg.dropout_rate, dropout);
        add_rows(&mut x, &cross_out);

        let (ln3_out, ln3) = layernorm_fwd(
            &x,
            rows,
            d,
            params.get(&format!("dec.{i}.ln3.g")),
            params.get(&format!("dec.{i}.ln3.b")),
        );
        let ff_pre = linear_fwd(
            &ln3_out,
            rows,
            params.get(&format!("dec.{i}.ff.w1")),
            params.get(&format!("dec.{i}.ff.b1")),
        );
        let ff_act = gelu_fwd(&ff_pre);
        let mut ff_out = linear_fwd(
            &ff_act,
            rows,
            params.get(&format!("dec.{i}.ff.w2")),
            params.get(&format!("dec.{i}.ff.b2")),
        );
        let ff_drop = dropout_fwd(&mut ff_out, cfg.dropout_rate, dropout);
        add_rows(&mut x, &ff_out);

        layers.push(DecLayerCache {
            ln1,
            ln1_out,
            self_attn,
            self_drop,
            ln2,
            ln2_out,
            cross,
            cross_drop,
            ln3,
            ln3_out,
            ff_pre,
            ff_act,
            ff_drop,
        });
    }

    let (dec_out, final_ln) =
        layernorm_fwd(&x, rows, d, params.get("dec.final_ln.g"), params.get("dec.final_ln.b"));
    let logits = linear_fwd(&dec_out, rows, params.get("out_proj.w"), params.get("out_proj.b"));
    Ok((
        Tensor::from_vec(&[rows, cfg.vocab_size], logits),
        DecoderCache { tokens: tokens.to_vec(), emb_drop, layers, final_ln, dec_out, rows },
    ))
}

/// Returns the gradient w.r.t. the encoder states.
pub(crate) fn decoder_backward(
    d_logits: &[f64],
    cache: &DecoderCache,
    enc_states: &Tensor,
    params: &ModelParams,
    grads: &mut Gradients,
) -> Vec<f64> {
    let cfg = params.config();
    let d = cfg.embed_dim;
    let rows = cache.rows;
    let enc_rows = enc_states.rows();

    let ddec_out =
        linear_bwd_named(d_logits, rows, &cache.dec_out, params, "out_proj.w", "out_proj.b", grads);
    let mut dx = layernorm_bwd_named(
        &ddec_out,
        &cache.final_ln,
        rows,
        d,
        params,
        "dec.final_ln",
        grads,
    );

    let mut d_enc = vec![0.0; enc_rows * d];
    for (i, layer) in cache.layers.iter().enumerate().rev() {
        let mut dff_out = dx.clone();
        dropout_bwd(&mut dff_out, &layer.ff_drop);
        let dff_act = linear_bwd_named(
            &dff_out,
            rows,
            &layer.ff_act,
            params,
            &format!("dec.{i}.ff.w2"),
            &format!("dec.{i}.ff.b2"),
            grads,
        );
        let dff_pre = gelu_bwd(&dff_act, &layer.ff_pre);
        let dln3_out = linear_bwd_named(
            &dff_pre,
            rows,
            &layer.ln3_out,
            params,
            &format!("dec.{i}.ff.w1"),
            &format!("dec.{i}.ff.b1"),
            grads,
        );
        let mut dx_mid2 =
            layernorm_bwd_named(&dln3_out, &layer.ln3, rows, d, params, &format!("dec.{i}.ln3"), grads);
        add_rows(&mut dx_mid2, &dx);

        let mut dcross_out = dx_mid2.clone();
        dropout_bwd(&mut dcross_out, &layer.cross_drop);
        let (dq_in, denc_part) = attention_bwd_named(
            &dcross_out,
            &layer.cross,
            &layer.ln2_out,
            enc_states.data(),
            cfg.heads,
            d,
            params,
            &format!("dec.{i}.cross"),
            grads,
        );
        add_rows(&mut d_enc, &denc_part);
        let mut dx_mid1 =
            layernorm_bwd_named(&dq_in, &layer.ln2, rows, d, params, &format!("dec.{i}.ln2"), grads);
        add_rows(&mut dx_mid1, &dx_mid2);

        let mut dself_out = dx_mid1.clone();
        dropout_bwd(&mut dself_out, &layer.self_drop);
        let (dq2, dkv2) = attention_bwd_named(
            &dself_out,
            &layer.self_attn,
            &layer.ln1_out,
            &layer.ln1_out,
            cfg.heads,
            d,
            params,
            &format!("dec.{i}.self"),
            grads,
        );
        let mut dln1_out = dq2;
        add_rows(&mut dln1_out, &dkv2);
        let mut dx_in =
            layernorm_bwd_named(&dln1_out, &layer.ln1, rows, d, params, &format!("dec.{i}.ln1"), grads);
        add_rows(&mut dx_in, &dx_mid1);
        dx = dx_in;
    }

    dropout_bwd(&mut dx, &cache.emb_drop);
    let table_grad = grads.get_mut("tok_embed.w");
    for (t, &tok) in cache.tokens.iter().enumerate() {
        let row = table_grad.row_mut(tok as usize);
        for (g, v) in row.iter_mut().zip(&dx[t * d..(t + 1) * d]) {
            *g += *v;
        }
    }
    d_enc
}

// ---------------------------------------------------------------------------
// Heads, losses, and the full pass.

pub(crate) fn subtype_forward(enc_states: &Tensor, params: &ModelParams) -> Vec<f64> {
    linear_fwd(
        &enc_states.data()[..params.config().embed_dim],
        1,
        params.get("subtype_head.w"),
        params.get("subtype_head.b"),
    )
}

/// Mean cross-entropy over non-PAD targets plus the logit gradient.
pub(crate) fn caption_ce(logits: &Tensor, targets: &[u32]) -> Result<(f64, Tensor)> {
    let vocab = logits.cols();
    assert_eq!(logits.rows(), targets.len(), "one logit row per target token");
    let supervised = targets.iter().filter(|&&t| t != PAD).count();
    if supervised == 0 {
        return Err(Error::NoSupervisedTokens);
    }
    let scale = 1.0 / supervised as f64;
    let mut loss = 0.0;
    let mut dlogits = Tensor::zeros(&[targets.len(), vocab]);
    for (t, &target) in targets.iter().enumerate() {
        if target == PAD {
            continue;
        }
        let row = logits.row(t);
        let lse = log_sum_exp(row);
        loss += lse - row[target as usize];
        let drow = dlogits.row_mut(t);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
        for (j, g) in drow.iter_mut().enumerate() {
            *g = (row[j] - max).exp() / denom * scale;
        }
        drow[target as usize] -= scale;
    }
    Ok((loss * scale, dlogits))
}

/// One-hot cross-entropy over subtype logits plus its gradient.
pub(crate) fn subtype_ce(logits: &[f64], label: u32) -> (f64, Vec<f64>) {
    let lse = log_sum_exp(logits);
    let loss = lse - logits[label as usize];
    let mut probs = logits.to_vec();
    softmax_rows(&mut probs, logits.len());
    probs[label as usize] -= 1.0;
    (loss, probs)
}

pub(crate) struct FullCache {
    pub embedder: EmbedderCache,
    pub encoder: EncoderCache,
    pub decoder: DecoderCache,
    pub enc_states: Tensor,
}

pub(crate) fn forward_full(
    sample: &TrainSample,
    params: &ModelParams,
    mut dropout: Dropout,
) -> Result<(ForwardOutput, FullCache)> {
    let (embeds, embedder) = embedder_forward(&sample.patches, params)?;
    let (enc_states, encoder) = encoder_forward(&embeds, params, &mut dropout);
    let dec_in = &sample.caption.tokens()[..sample.caption.len_predicted()];
    let (caption_logits, decoder) = decoder_forward(dec_in, &enc_states, params, &mut dropout)?;
    let subtype_logits = subtype_forward(&enc_states, params);

    caption_logits.ensure_finite("caption_logits")?;
    enc_states.ensure_finite("encoder_states")?;
    if !subtype_logits.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("subtype_logits".into()));
    }
    let output = ForwardOutput {
        encoder_states: enc_states.clone(),
        subtype_logits: subtype_logits.clone(),
        caption_logits: caption_logits.clone(),
    };
    Ok((output, FullCache { embedder, encoder, decoder, enc_states }))
}

pub(crate) fn backward_full(
    sample: &TrainSample,
    params: &ModelParams,
    beta: f64,
    dropout: Dropout,
) -> Result<(LossBreakdown, ForwardOutput, Gradients)> {
    let (output, cache) = forward_full(sample, params, dropout)?;
    let targets = &sample.caption.tokens()[1..];
    let (caption_loss, dlogits) = caption_ce(&output.caption_logits, targets)?;
    let (subtype_loss, mut dsub) = subtype_ce(&output.subtype_logits, sample.subtype);
    for g in &mut dsub {
        *g *= beta;
    }

    let mut grads = Gradients::zeros_like(params);
    let mut d_enc =
        decoder_backward(dlogits.data(), &cache.decoder, &cache.enc_states, params, &mut grads);
    let d = params.config().embed_dim;
    let d_enc0 = linear_bwd_named(
        &dsub,
        1,
        &cache.enc_states.data()[..d],
        params,
        "subtype_head.w",
        "subtype_head.b",
        &mut grads,
    );
    add_rows(&mut d_enc[..d], &d_enc0);
    let d_embeds = encoder_backward(&d_enc, &cache.encoder, params, &mut grads);
    embedder_backward(&d_embeds, &cache.embedder, params, &mut grads);

    let breakdown = LossBreakdown {
        total: caption_loss + beta * subtype_loss,
        caption: caption_loss,
        subtype: subtype_loss,
    };
    Ok((breakdown, output, grads))
}
