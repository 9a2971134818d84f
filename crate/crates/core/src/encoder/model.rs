//! Pre-norm transformer encoder with an explicit backward pass.
//!
//! All parameters live in one flat `Vec<f64>` described by a [`Layout`], so
//! optimizers, checkpoints and finite-difference checks can treat the model as
//! a single vector.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{tokenize, EncodedText, EncoderConfig};
use crate::error::Error;
use crate::linalg::{add_bias, dot, matmul, matmul_a_bt_acc, matmul_at_b_acc, sum_rows_acc};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// A named contiguous slice of the parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl ParamBlock {
    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
pub struct Layout {
    tok: usize,
    pos: usize,
    layers: Vec<LayerOffsets>,
    lnf_g: usize,
    lnf_b: usize,
    proj_w: usize,
    proj_b: usize,
    blocks: Vec<ParamBlock>,
    total: usize,
}

impl Layout {
    pub fn new(config: &EncoderConfig) -> Self {
        let d = config.d_model;
        let f = config.d_ff;
        let mut blocks = Vec::new();
        let mut total = 0;
        let mut alloc_block = |name: String, len: usize| {
            let offset = total;
            blocks.push(ParamBlock { name, offset, len });
            total += len;
            offset
        };
        let tok = alloc_block("tok_emb".to_string(), config.vocab.size() * d);
        let pos = alloc_block("pos_emb".to_string(), config.max_len * d);
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let mut named = |s: &str, len: usize| alloc_block(format!("layer{l}.{s}"), len);
            layers.push(LayerOffsets {
                ln1_g: named("ln1_g", d),
                ln1_b: named("ln1_b", d),
                wq: named("wq", d * d),
                bq: named("bq", d),
                wk: named("wk", d * d),
                bk: named("bk", d),
                wv: named("wv", d * d),
                bv: named("bv", d),
                wo: named("wo", d * d),
                bo: named("bo", d),
                ln2_g: named("ln2_g", d),
                ln2_b: named("ln2_b", d),
                w1: named("w1", d * f),
                b1: named("b1", f),
                w2: named("w2", f * d),
                b2: named("b2", d),
            });
        }
        let lnf_g = alloc_block("lnf_g".to_string(), d);
        let lnf_b = alloc_block("lnf_b".to_string(), d);
        let proj_w = alloc_block("proj_w".to_string(), d * config.d_out);
        let proj_b = alloc_block("proj_b".to_string(), config.d_out);
        Layout {
            tok,
            pos,
            layers,
            lnf_g,
            lnf_b,
            proj_w,
            proj_b,
            blocks,
            total,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }
}

struct LayerCache {
    xhat1: Vec<f64>,
    rstd1: Vec<f64>,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    xhat2: Vec<f64>,
    rstd2: Vec<f64>,
    b: Vec<f64>,
    hpre: Vec<f64>,
    hact: Vec<f64>,
}

/// Activations kept from [`Encoder::forward`] for the backward pass.
pub struct ForwardCache {
    ids: Vec<u32>,
    layers: Vec<LayerCache>,
    xhatf: Vec<f64>,
    rstdf: Vec<f64>,
    z: Vec<f64>,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl PartialEq for Layout {
    fn eq(&self, other: &Self) -> bool {
        self.blocks == other.blocks
    }
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], y: &mut [f64], xhat: &mut [f64], rstd: &mut [f64]) {
    let d = g.len();
    for (r, ((xr, yr), hr)) in x
        .chunks_exact(d)
        .zip(y.chunks_exact_mut(d))
        .zip(xhat.chunks_exact_mut(d))
        .enumerate()
    {
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / libm::sqrt(var + LN_EPS);
        rstd[r] = s;
        for i in 0..d {
            hr[i] = (xr[i] - mean) * s;
            yr[i] = g[i] * hr[i] + b[i];
        }
    }
}

/// Accumulates `dx` and the gain/bias gradients of a layer norm.
fn layer_norm_backward(
    dy: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    g: &[f64],
    dx: &mut [f64],
    dg: &mut [f64],
    db: &mut [f64],
) {
    let d = g.len();
    let mut dxhat = vec![0.0; d];
    for (r, ((dyr, hr), dxr)) in dy
        .chunks_exact(d)
        .zip(xhat.chunks_exact(d))
        .zip(dx.chunks_exact_mut(d))
        .enumerate()
    {
        let mut mean_d = 0.0;
        let mut mean_dh = 0.0;
        for i in 0..d {
            dg[i] += dyr[i] * hr[i];
            db[i] += dyr[i];
            dxhat[i] = dyr[i] * g[i];
            mean_d += dxhat[i];
            mean_dh += dxhat[i] * hr[i];
        }
        mean_d /= d as f64;
        mean_dh /= d as f64;
        for i in 0..d {
            dxr[i] += rstd[r] * (dxhat[i] - mean_d - hr[i] * mean_dh);
        }
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(GELU_C * (x + GELU_A * x * x * x)))
}

fn gelu_grad(x: f64) -> f64 {
    let t = libm::tanh(GELU_C * (x + GELU_A * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Encoder {
    /// Fresh encoder with seeded random initialization.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self, Error> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let mut fill = |params: &mut [f64], offset: usize, len: usize, std: f64| {
            let normal = Normal::new(0.0, std).expect("positive std");
            for p in &mut params[offset..offset + len] {
                *p = normal.sample(&mut rng);
            }
        };
        fill(&mut params, layout.tok, config.vocab.size() * d, 0.5);
        fill(&mut params, layout.pos, config.max_len * d, 0.1);
        let inv = |n: usize| 1.0 / libm::sqrt(n as f64);
        for lo in layout.layers.clone() {
            params[lo.ln1_g..lo.ln1_g + d].fill(1.0);
            params[lo.ln2_g..lo.ln2_g + d].fill(1.0);
            for w in [lo.wq, lo.wk, lo.wv, lo.wo] {
                fill(&mut params, w, d * d, inv(d));
            }
            fill(&mut params, lo.w1, d * config.d_ff, inv(d));
            fill(&mut params, lo.w2, config.d_ff * d, inv(config.d_ff));
        }
        params[layout.lnf_g..layout.lnf_g + d].fill(1.0);
        // Unit-variance dot products between fresh outputs.
        let proj_std = inv(d) / libm::sqrt(libm::sqrt(config.d_out as f64));
        fill(&mut params, layout.proj_w, d * config.d_out, proj_std);
        Ok(Encoder { config, layout, params })
    }

    /// Rebuilds an encoder from stored parameters.
    pub fn from_params(config: EncoderConfig, params: Vec<f64>) -> Result<Self, Error> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Config {
                line: 0,
                message: format!(
                    "parameter vector has {} entries; configuration needs {}",
                    params.len(),
                    layout.total
                ),
            });
        }
        Ok(Encoder { config, layout, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    /// Encodes `text`; identical inputs give identical outputs.
    pub fn encode(&self, text: &str) -> EncodedText {
        self.forward(text).0
    }

    pub fn forward(&self, text: &str) -> (EncodedText, ForwardCache) {
        let tokenized = tokenize(text, &self.config);
        let ids = tokenized.ids;
        let cfg = &self.config;
        let (d, f, h) = (cfg.d_model, cfg.d_ff, cfg.n_heads);
        let dh = d / h;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let n = ids.len();
        let p = &self.params;
        let lo = &self.layout;

        let mut x = vec![0.0; n * d];
        for (t, &id) in ids.iter().enumerate() {
            let e = &p[lo.tok + id as usize * d..lo.tok + (id as usize + 1) * d];
            let pe = &p[lo.pos + t * d..lo.pos + (t + 1) * d];
            for i in 0..d {
                x[t * d + i] = e[i] + pe[i];
            }
        }

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for off in &lo.layers {
            let mut a = vec![0.0; n * d];
            let mut xhat1 = vec![0.0; n * d];
            let mut rstd1 = vec![0.0; n];
            layer_norm(
                &x,
                &p[off.ln1_g..off.ln1_g + d],
                &p[off.ln1_b..off.ln1_b + d],
                &mut a,
                &mut xhat1,
                &mut rstd1,
            );
            let proj = |w: usize, b: usize| {
                let mut out = vec![0.0; n * d];
                matmul(&a, &p[w..w + d * d], &mut out, n, d, d);
                add_bias(&mut out, &p[b..b + d]);
                out
            };
            let q = proj(off.wq, off.bq);
            let k = proj(off.wk, off.bk);
            let v = proj(off.wv, off.bv);

            let mut probs = vec![0.0; h * n * n];
            let mut ctx = vec![0.0; n * d];
            for head in 0..h {
                let c0 = head * dh;
                let pm = &mut probs[head * n * n..(head + 1) * n * n];
                for i in 0..n {
                    let qi = &q[i * d + c0..i * d + c0 + dh];
                    let row = &mut pm[i * n..(i + 1) * n];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..n {
                        let kj = &k[j * d + c0..j * d + c0 + dh];
                        let s = dot(qi, kj) * scale;
                        row[j] = s;
                        max = max.max(s);
                    }
                    let mut sum = 0.0;
                    for s in row.iter_mut() {
                        *s = libm::exp(*s - max);
                        sum += *s;
                    }
                    for s in row.iter_mut() {
                        *s /= sum;
                    }
                    let ci = &mut ctx[i * d + c0..i * d + c0 + dh];
                    for j in 0..n {
                        let pij = row[j];
                        let vj = &v[j * d + c0..j * d + c0 + dh];
                        for c in 0..dh {
                            ci[c] += pij * vj[c];
                        }
                    }
                }
            }
            let mut attn_out = vec![0.0; n * d];
            matmul(&ctx, &p[off.wo..off.wo + d * d], &mut attn_out, n, d, d);
            add_bias(&mut attn_out, &p[off.bo..off.bo + d]);
            for (xi, oi) in x.iter_mut().zip(&attn_out) {
                *xi += oi;
            }

            let mut b = vec![0.0; n * d];
            let mut xhat2 = vec![0.0; n * d];
            let mut rstd2 = vec![0.0; n];
            layer_norm(
                &x,
                &p[off.ln2_g..off.ln2_g + d],
                &p[off.ln2_b..off.ln2_b + d],
                &mut b,
                &mut xhat2,
                &mut rstd2,
            );
            let mut hpre = vec![0.0; n * f];
            matmul(&b, &p[off.w1..off.w1 + d * f], &mut hpre, n, d, f);
            add_bias(&mut hpre, &p[off.b1..off.b1 + f]);
            let hact: Vec<f64> = hpre.iter().map(|&v| gelu(v)).collect();
            let mut ff = vec![0.0; n * d];
            matmul(&hact, &p[off.w2..off.w2 + f * d], &mut ff, n, f, d);
            add_bias(&mut ff, &p[off.b2..off.b2 + d]);
            for (xi, fi) in x.iter_mut().zip(&ff) {
                *xi += fi;
            }
            layers.push(LayerCache {
                xhat1,
                rstd1,
                a,
                q,
                k,
                v,
                probs,
                ctx,
                xhat2,
                rstd2,
                b,
                hpre,
                hact,
            });
        }

        let mut z = vec![0.0; n * d];
        let mut xhatf = vec![0.0; n * d];
        let mut rstdf = vec![0.0; n];
        layer_norm(
            &x,
            &p[lo.lnf_g..lo.lnf_g + d],
            &p[lo.lnf_b..lo.lnf_b + d],
            &mut z,
            &mut xhatf,
            &mut rstdf,
        );
        let dout = cfg.d_out;
        let mut out = vec![0.0; n * dout];
        matmul(&z, &p[lo.proj_w..lo.proj_w + d * dout], &mut out, n, d, dout);
        add_bias(&mut out, &p[lo.proj_b..lo.proj_b + dout]);

        let tokens = out.split_off(dout);
        let encoded = EncodedText {
            source: text.to_string(),
            cls: out,
            tokens,
            n_tokens: n - 1,
            d_out: dout,
            truncated: tokenized.truncated,
        };
        let cache = ForwardCache {
            ids,
            layers,
            xhatf,
            rstdf,
            z,
        };
        (encoded, cache)
    }

    /// Accumulates parameter gradients into `grad` given upstream gradients for
    /// the `[CLS]` vector (`d_out`) and the token rows (`n_tokens × d_out`).
    pub fn backward(&self, cache: &ForwardCache, d_cls: &[f64], d_tokens: &[f64], grad: &mut [f64]) {
        let cfg = &self.config;
        let (d, f, h) = (cfg.d_model, cfg.d_ff, cfg.n_heads);
        let dh = d / h;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let n = cache.ids.len();
        let dout = cfg.d_out;
        let p = &self.params;
        let lo = &self.layout;
        debug_assert_eq!(grad.len(), lo.total);
        debug_assert_eq!(d_cls.len(), dout);
        debug_assert_eq!(d_tokens.len(), (n - 1) * dout);

        let mut g_out = Vec::with_capacity(n * dout);
        g_out.extend_from_slice(d_cls);
        g_out.extend_from_slice(d_tokens);

        {
            let (head, tail) = grad.split_at_mut(lo.proj_b);
            matmul_at_b_acc(&cache.z, &g_out, &mut head[lo.proj_w..lo.proj_w + d * dout], n, d, dout);
            sum_rows_acc(&g_out, &mut tail[..dout]);
        }
        let mut dz = vec![0.0; n * d];
        matmul_a_bt_acc(&g_out, &p[lo.proj_w..lo.proj_w + d * dout], &mut dz, n, d, dout);
        let mut dx = vec![0.0; n * d];
        {
            let (gg, gb) = grad[lo.lnf_g..lo.lnf_b + d].split_at_mut(d);
            layer_norm_backward(
                &dz,
                &cache.xhatf,
                &cache.rstdf,
                &p[lo.lnf_g..lo.lnf_g + d],
                &mut dx,
                gg,
                gb,
            );
        }

        for (off, lc) in lo.layers.iter().zip(&cache.layers).rev() {
            // Feed-forward residual: x_out = x_mid + W2·gelu(W1·LN2(x_mid))
            let df = &dx;
            matmul_at_b_acc(&lc.hact, df, &mut grad[off.w2..off.w2 + f * d], n, f, d);
            sum_rows_acc(df, &mut grad[off.b2..off.b2 + d]);
            let mut dhpre = vec![0.0; n * f];
            matmul_a_bt_acc(df, &p[off.w2..off.w2 + f * d], &mut dhpre, n, f, d);
            for (g, &x) in dhpre.iter_mut().zip(&lc.hpre) {
                *g *= gelu_grad(x);
            }
            matmul_at_b_acc(&lc.b, &dhpre, &mut grad[off.w1..off.w1 + d * f], n, d, f);
            sum_rows_acc(&dhpre, &mut grad[off.b1..off.b1 + f]);
            let mut db = vec![0.0; n * d];
            matmul_a_bt_acc(&dhpre, &p[off.w1..off.w1 + d * f], &mut db, n, d, f);
            let mut dmid = dx.clone();
            {
                let (gg, gb) = grad[off.ln2_g..off.ln2_b + d].split_at_mut(d);
                layer_norm_backward(
                    &db,
                    &lc.xhat2,
                    &lc.rstd2,
                    &p[off.ln2_g..off.ln2_g + d],
                    &mut dmid,
                    gg,
                    gb,
                );
            }

            // Attention residual: x_mid = x_in + Wo·attn(LN1(x_in))
            let dattn = &dmid;
            matmul_at_b_acc(&lc.ctx, dattn, &mut grad[off.wo..off.wo + d * d], n, d, d);
            sum_rows_acc(dattn, &mut grad[off.bo..off.bo + d]);
            let mut dctx = vec![0.0; n * d];
            matmul_a_bt_acc(dattn, &p[off.wo..off.wo + d * d], &mut dctx, n, d, d);

            let mut dq = vec![0.0; n * d];
            let mut dk = vec![0.0; n * d];
            let mut dv = vec![0.0; n * d];
            let mut dp = vec![0.0; n];
            for head in 0..h {
                let c0 = head * dh;
                let pm = &lc.probs[head * n * n..(head + 1) * n * n];
                for i in 0..n {
                    let dci = &dctx[i * d + c0..i * d + c0 + dh];
                    let prow = &pm[i * n..(i + 1) * n];
                    let mut weighted = 0.0;
                    for j in 0..n {
                        let vj = &lc.v[j * d + c0..j * d + c0 + dh];
                        dp[j] = dot(dci, vj);
                        weighted += dp[j] * prow[j];
                        let dvj = &mut dv[j * d + c0..j * d + c0 + dh];
                        for c in 0..dh {
                            dvj[c] += prow[j] * dci[c];
                        }
                    }
                    for j in 0..n {
                        let ds = prow[j] * (dp[j] - weighted) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let (r, s) = (i * d + c0, j * d + c0);
                        for (g, kv) in dq[r..r + dh].iter_mut().zip(&lc.k[s..s + dh]) {
                            *g += ds * kv;
                        }
                        for (g, qv) in dk[s..s + dh].iter_mut().zip(&lc.q[r..r + dh]) {
                            *g += ds * qv;
                        }
                    }
                }
            }
            let mut da = vec![0.0; n * d];
            for (w, b, g) in [(off.wq, off.bq, &dq), (off.wk, off.bk, &dk), (off.wv, off.bv, &dv)] {
                matmul_at_b_acc(&lc.a, g, &mut grad[w..w + d * d], n, d, d);
                sum_rows_acc(g, &mut grad[b..b + d]);
                matmul_a_bt_acc(g, &p[w..w + d * d], &mut da, n, d, d);
            }
            let mut din = dmid;
            {
                let (gg, gb) = grad[off.ln1_g..off.ln1_b + d].split_at_mut(d);
                layer_norm_backward(
                    &da,
                    &lc.xhat1,
                    &lc.rstd1,
                    &p[off.ln1_g..off.ln1_g + d],
                    &mut din,
                    gg,
                    gb,
                );
            }
            dx = din;
        }

        for (t, &id) in cache.ids.iter().enumerate() {
            let row = &dx[t * d..(t + 1) * d];
            let te = lo.tok + id as usize * d;
            let pe = lo.pos + t * d;
            for i in 0..d {
                grad[te + i] += row[i];
                grad[pe + i] += row[i];
            }
        }
    }
}
