//! Pre-norm transformer encoder with an explicit backward pass.
//!
//! Per layer: `x + Attn(LN(x))`, then `+ FFN(LN(.))` with a `tanh` hidden
//! activation. The sequence embedding is `LN_f(h_L[0]) W_out + b_out`.
//! Attention logits are scaled by `1/sqrt(head_dim)`. Only the `[CLS]` row of
//! the last layer is needed for the output, so the last layer computes a single
//! query row.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::input::TokenSequence;
use super::EncoderError;
use crate::index::EmbeddingVector;

const LN_EPS: f64 = 1e-5;

/// Encoder hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub query_budget: usize,
    pub vocab_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            dim: 64,
            ff_dim: 128,
            max_len: 128,
            query_budget: 24,
            vocab_size: 0,
        }
    }
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("layers", self.layers),
            ("heads", self.heads),
            ("dim", self.dim),
            ("ff_dim", self.ff_dim),
            ("max_len", self.max_len),
            ("query_budget", self.query_budget),
        ] {
            if v == 0 {
                errs.push(format!("model.{name} must be positive"));
            }
        }
        if self.heads > 0 && !self.dim.is_multiple_of(self.heads) {
            errs.push(format!("model.dim ({}) must be divisible by model.heads ({})", self.dim, self.heads));
        }
        if self.query_budget + 2 > self.max_len {
            errs.push("model.query_budget + 2 must not exceed model.max_len".into());
        }
        errs
    }
}

/// Weights of one encoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    pub ff_in: Array2<f64>,
    pub ff_in_bias: Array1<f64>,
    pub ff_out: Array2<f64>,
    pub ff_out_bias: Array1<f64>,
}

/// All encoder weights. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub final_gain: Array1<f64>,
    pub final_bias: Array1<f64>,
    pub out_proj: Array2<f64>,
    pub out_bias: Array1<f64>,
}

impl LayerParams {
    fn zeros(c: &EncoderConfig) -> Self {
        let d = c.dim;
        let f = c.ff_dim;
        Self {
            ln1_gain: Array1::zeros(d),
            ln1_bias: Array1::zeros(d),
            wq: Array2::zeros((d, d)),
            bq: Array1::zeros(d),
            wk: Array2::zeros((d, d)),
            bk: Array1::zeros(d),
            wv: Array2::zeros((d, d)),
            bv: Array1::zeros(d),
            wo: Array2::zeros((d, d)),
            bo: Array1::zeros(d),
            ln2_gain: Array1::zeros(d),
            ln2_bias: Array1::zeros(d),
            ff_in: Array2::zeros((d, f)),
            ff_in_bias: Array1::zeros(f),
            ff_out: Array2::zeros((f, d)),
            ff_out_bias: Array1::zeros(d),
        }
    }
}

macro_rules! layer_fields {
    ($m:ident) => {
        $m!(ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo, ln2_gain, ln2_bias, ff_in, ff_in_bias, ff_out, ff_out_bias)
    };
}

impl EncoderParams {
    pub fn zeros(config: EncoderConfig) -> Self {
        let d = config.dim;
        Self {
            config,
            token_embedding: Array2::zeros((config.vocab_size, d)),
            position_embedding: Array2::zeros((config.max_len, d)),
            layers: (0..config.layers).map(|_| LayerParams::zeros(&config)).collect(),
            final_gain: Array1::zeros(d),
            final_bias: Array1::zeros(d),
            out_proj: Array2::zeros((d, d)),
            out_bias: Array1::zeros(d),
        }
    }

    /// Seeded initialization: N(0, 0.02) weights, unit norm gains, zero biases.
    pub fn init(config: EncoderConfig, seed: u64) -> Self {
        let mut p = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).unwrap();
        let mut fill = |a: &mut [f64]| a.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        fill(p.token_embedding.as_slice_mut().unwrap());
        fill(p.position_embedding.as_slice_mut().unwrap());
        for l in &mut p.layers {
            l.ln1_gain.fill(1.0);
            l.ln2_gain.fill(1.0);
            for w in [&mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo, &mut l.ff_in, &mut l.ff_out] {
                fill(w.as_slice_mut().unwrap());
            }
        }
        p.final_gain.fill(1.0);
        let out_std = 1.0 / (config.dim as f64).sqrt();
        let out_normal = Normal::new(0.0, out_std).unwrap();
        p.out_proj
            .iter_mut()
            .for_each(|v| *v = out_normal.sample(&mut rng));
        p
    }

    /// Every tensor in the fixed serialization order, with its name.
    pub fn named_tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("token_embedding".into(), self.token_embedding.as_slice().unwrap()),
            ("position_embedding".into(), self.position_embedding.as_slice().unwrap()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            macro_rules! push {
                ($($f:ident),*) => { $( out.push((format!("layer{i}.{}", stringify!($f)), l.$f.as_slice().unwrap())); )* };
            }
            layer_fields!(push);
        }
        out.push(("final_gain".into(), self.final_gain.as_slice().unwrap()));
        out.push(("final_bias".into(), self.final_bias.as_slice().unwrap()));
        out.push(("out_proj".into(), self.out_proj.as_slice().unwrap()));
        out.push(("out_bias".into(), self.out_bias.as_slice().unwrap()));
        out
    }

    /// Mutable views in the same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.token_embedding.as_slice_mut().unwrap(),
            self.position_embedding.as_slice_mut().unwrap(),
        ];
        for l in self.layers.iter_mut() {
            macro_rules! push {
                ($($f:ident),*) => { $( out.push(l.$f.as_slice_mut().unwrap()); )* };
            }
            layer_fields!(push);
        }
        out.push(self.final_gain.as_slice_mut().unwrap());
        out.push(self.final_bias.as_slice_mut().unwrap());
        out.push(self.out_proj.as_slice_mut().unwrap());
        out.push(self.out_bias.as_slice_mut().unwrap());
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &EncoderParams, scale: f64) {
        let theirs = other.named_tensors();
        for (mine, (_, src)) in self.tensors_mut().into_iter().zip(theirs) {
            mine.iter_mut().zip(src).for_each(|(a, b)| *a += scale * b);
        }
    }

    fn check(&self, seq: &TokenSequence) -> Result<usize, EncoderError> {
        if seq.len() > self.config.max_len {
            return Err(EncoderError::SequenceTooLong {
                len: seq.len(),
                max_len: self.config.max_len,
            });
        }
        if seq.mask.len() != seq.ids.len() {
            return Err(EncoderError::BadMask);
        }
        let real = seq.real_len();
        if real == 0 || seq.mask[..real].iter().any(|&m| m != 1) {
            return Err(EncoderError::BadMask);
        }
        if let Some(&bad) = seq.ids[..real].iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(EncoderError::TokenOutOfRange(bad));
        }
        Ok(real)
    }

    /// Final-layer `[CLS]` embedding.
    pub fn encode(&self, seq: &TokenSequence) -> Result<EmbeddingVector, EncoderError> {
        Ok(self.forward(seq)?.embedding())
    }

    /// Per-position attention from `[CLS]` in the last layer, summed over heads.
    /// Masked positions get 0.
    pub fn cls_attention(&self, seq: &TokenSequence) -> Result<Vec<f64>, EncoderError> {
        Ok(self.forward(seq)?.cls_attention(seq.len()))
    }

    /// Forward pass over the unmasked prefix, keeping what backward needs.
    ///
    /// Padding sits only at the tail and is masked from every attention row,
    /// so dropping it yields exactly the masked computation.
    pub fn forward(&self, seq: &TokenSequence) -> Result<ForwardCache, EncoderError> {
        let n = self.check(seq)?;
        let ids = seq.ids[..n].to_vec();
        let d = self.config.dim;
        let mut x = Array2::<f64>::zeros((n, d));
        for (t, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(t);
            row += &self.token_embedding.row(id as usize);
            row += &self.position_embedding.row(t);
        }
        let nl = self.layers.len();
        let mut caches = Vec::with_capacity(nl);
        for (li, layer) in self.layers.iter().enumerate() {
            let m = if li + 1 == nl { 1 } else { n };
            let (out, cache) = layer_forward(layer, &self.config, x, m);
            caches.push(cache);
            x = out;
        }
        let h = x.row(0).to_owned();
        let (xhat, rstd) = norm_row(h.view());
        let z = &xhat * &self.final_gain + &self.final_bias;
        let emb = z.dot(&self.out_proj) + &self.out_bias;
        Ok(ForwardCache {
            ids,
            layers: caches,
            final_xhat: xhat,
            final_rstd: rstd,
            final_z: z,
            emb,
        })
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d embedding`.
    pub fn backward(&self, cache: &ForwardCache, d_emb: &[f64], grads: &mut EncoderParams) {
        let d_emb = ArrayView1::from(d_emb);
        grads.out_bias += &d_emb;
        // out_proj[i][j] += z[i] * d_emb[j]
        for (i, &zi) in cache.final_z.iter().enumerate() {
            grads.out_proj.row_mut(i).scaled_add(zi, &d_emb);
        }
        let dz = self.out_proj.dot(&d_emb);
        grads.final_bias += &dz;
        grads.final_gain += &(&dz * &cache.final_xhat);
        let dxhat = &dz * &self.final_gain;
        let dh = norm_backward_row(dxhat.view(), cache.final_xhat.view(), cache.final_rstd);

        let mut dx = Array2::<f64>::zeros((1, self.config.dim));
        dx.row_mut(0).assign(&dh);
        for (li, layer) in self.layers.iter().enumerate().rev() {
            dx = layer_backward(layer, &self.config, &cache.layers[li], dx.view(), &mut grads.layers[li]);
        }
        for (t, &id) in cache.ids.iter().enumerate() {
            grads.token_embedding.row_mut(id as usize).scaled_add(1.0, &dx.row(t));
            grads.position_embedding.row_mut(t).scaled_add(1.0, &dx.row(t));
        }
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    ids: Vec<u32>,
    layers: Vec<LayerCache>,
    final_xhat: Array1<f64>,
    final_rstd: f64,
    final_z: Array1<f64>,
    emb: Array1<f64>,
}

impl ForwardCache {
    pub fn embedding(&self) -> EmbeddingVector {
        EmbeddingVector(self.emb.to_vec())
    }

    pub fn real_len(&self) -> usize {
        self.ids.len()
    }

    /// Last-layer `[CLS]` attention summed over heads, zero-padded to `padded_len`.
    pub fn cls_attention(&self, padded_len: usize) -> Vec<f64> {
        let last = self.layers.last().expect("at least one layer");
        let mut out = vec![0.0; padded_len.max(self.ids.len())];
        for a in &last.attn {
            for (o, w) in out.iter_mut().zip(a.row(0)) {
                *o += w;
            }
        }
        out
    }

    /// Last-layer `[CLS]` attention weights of one head.
    pub fn last_attention(&self, head: usize) -> ArrayView1<'_, f64> {
        self.layers.last().unwrap().attn[head].row(0)
    }

    /// Last-layer value vectors (real positions x dim).
    pub fn last_values(&self) -> ArrayView2<'_, f64> {
        self.layers.last().unwrap().v.view()
    }

    /// Last-layer `[CLS]` context vector before the output projection.
    pub fn last_context(&self) -> ArrayView1<'_, f64> {
        self.layers.last().unwrap().ctx.row(0)
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    xhat1: Array2<f64>,
    rstd1: Array1<f64>,
    h1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    xhat2: Array2<f64>,
    rstd2: Array1<f64>,
    h2: Array2<f64>,
    act: Array2<f64>,
}

fn norm_row(x: ArrayView1<f64>) -> (Array1<f64>, f64) {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    (x.mapv(|v| (v - mean) * rstd), rstd)
}

fn norm_rows(x: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let mut xhat = Array2::zeros(x.raw_dim());
    let mut rstd = Array1::zeros(x.nrows());
    for (i, row) in x.rows().into_iter().enumerate() {
        let (h, r) = norm_row(row);
        xhat.row_mut(i).assign(&h);
        rstd[i] = r;
    }
    (xhat, rstd)
}

fn norm_backward_row(dxhat: ArrayView1<f64>, xhat: ArrayView1<f64>, rstd: f64) -> Array1<f64> {
    let n = dxhat.len() as f64;
    let mean_d = dxhat.sum() / n;
    let mean_dx = dxhat.dot(&xhat) / n;
    let mut out = Array1::zeros(dxhat.len());
    for i in 0..dxhat.len() {
        out[i] = rstd * (dxhat[i] - mean_d - xhat[i] * mean_dx);
    }
    out
}

fn add_bias(m: &mut Array2<f64>, b: &Array1<f64>) {
    for mut row in m.rows_mut() {
        row += b;
    }
}

fn layer_forward(p: &LayerParams, c: &EncoderConfig, x: Array2<f64>, m: usize) -> (Array2<f64>, LayerCache) {
    let (_, d) = x.dim();
    let hd = c.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();

    let (xhat1, rstd1) = norm_rows(x.view());
    let mut h1 = &xhat1 * &p.ln1_gain;
    add_bias(&mut h1, &p.ln1_bias);

    let mut q = h1.slice(s![..m, ..]).dot(&p.wq);
    add_bias(&mut q, &p.bq);
    let mut k = h1.dot(&p.wk);
    add_bias(&mut k, &p.bk);
    let mut v = h1.dot(&p.wv);
    add_bias(&mut v, &p.bv);

    let mut ctx = Array2::<f64>::zeros((m, d));
    let mut attn = Vec::with_capacity(c.heads);
    for h in 0..c.heads {
        let cols = s![.., h * hd..(h + 1) * hd];
        let mut a = q.slice(cols).dot(&k.slice(cols).t());
        for mut row in a.rows_mut() {
            let mx = row.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v * scale));
            let mut sum = 0.0;
            row.mapv_inplace(|v| {
                let e = (v * scale - mx).exp();
                sum += e;
                e
            });
            row /= sum;
        }
        general_mat_mul(1.0, &a, &v.slice(cols), 0.0, &mut ctx.slice_mut(cols));
        attn.push(a);
    }

    let mut x1 = ctx.dot(&p.wo);
    add_bias(&mut x1, &p.bo);
    x1 += &x.slice(s![..m, ..]);

    let (xhat2, rstd2) = norm_rows(x1.view());
    let mut h2 = &xhat2 * &p.ln2_gain;
    add_bias(&mut h2, &p.ln2_bias);
    let mut act = h2.dot(&p.ff_in);
    add_bias(&mut act, &p.ff_in_bias);
    act.mapv_inplace(f64::tanh);
    let mut y = act.dot(&p.ff_out);
    add_bias(&mut y, &p.ff_out_bias);
    y += &x1;

    debug_assert_eq!(y.dim(), (m, d));
    (
        y,
        LayerCache {
            xhat1,
            rstd1,
            h1,
            q,
            k,
            v,
            attn,
            ctx,
            xhat2,
            rstd2,
            h2,
            act,
        },
    )
}

fn layer_backward(
    p: &LayerParams,
    c: &EncoderConfig,
    cache: &LayerCache,
    dy: ArrayView2<f64>,
    g: &mut LayerParams,
) -> Array2<f64> {
    let m = dy.nrows();
    let n = cache.k.nrows();
    let d = c.dim;
    let hd = c.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();

    // feed-forward block
    g.ff_out_bias += &dy.sum_axis(Axis(0));
    general_mat_mul(1.0, &cache.act.t(), &dy, 1.0, &mut g.ff_out);
    let mut du = dy.dot(&p.ff_out.t());
    du.zip_mut_with(&cache.act, |dv, &a| *dv *= 1.0 - a * a);
    g.ff_in_bias += &du.sum_axis(Axis(0));
    general_mat_mul(1.0, &cache.h2.t(), &du, 1.0, &mut g.ff_in);
    let dh2 = du.dot(&p.ff_in.t());
    g.ln2_bias += &dh2.sum_axis(Axis(0));
    g.ln2_gain += &(&dh2 * &cache.xhat2).sum_axis(Axis(0));
    let dxhat2 = &dh2 * &p.ln2_gain;
    let mut dx1 = dy.to_owned();
    for i in 0..m {
        let r = norm_backward_row(dxhat2.row(i), cache.xhat2.row(i), cache.rstd2[i]);
        dx1.row_mut(i).scaled_add(1.0, &r);
    }

    // attention block
    let mut dx = Array2::<f64>::zeros((n, d));
    dx.slice_mut(s![..m, ..]).assign(&dx1);
    g.bo += &dx1.sum_axis(Axis(0));
    general_mat_mul(1.0, &cache.ctx.t(), &dx1, 1.0, &mut g.wo);
    let dctx = dx1.dot(&p.wo.t());

    let mut dq = Array2::<f64>::zeros((m, d));
    let mut dk = Array2::<f64>::zeros((n, d));
    let mut dv = Array2::<f64>::zeros((n, d));
    for h in 0..c.heads {
        let cols = s![.., h * hd..(h + 1) * hd];
        let a = &cache.attn[h];
        let dctx_h = dctx.slice(cols);
        general_mat_mul(1.0, &a.t(), &dctx_h, 0.0, &mut dv.slice_mut(cols));
        let mut ds = dctx_h.dot(&cache.v.slice(cols).t());
        for (mut drow, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
            let inner = drow.dot(&arow);
            drow.zip_mut_with(&arow, |dv, &av| *dv = av * (*dv - inner) * scale);
        }
        general_mat_mul(1.0, &ds, &cache.k.slice(cols), 0.0, &mut dq.slice_mut(cols));
        general_mat_mul(1.0, &ds.t(), &cache.q.slice(cols), 0.0, &mut dk.slice_mut(cols));
    }

    let h1m = cache.h1.slice(s![..m, ..]);
    g.bq += &dq.sum_axis(Axis(0));
    general_mat_mul(1.0, &h1m.t(), &dq, 1.0, &mut g.wq);
    g.bk += &dk.sum_axis(Axis(0));
    general_mat_mul(1.0, &cache.h1.t(), &dk, 1.0, &mut g.wk);
    g.bv += &dv.sum_axis(Axis(0));
    general_mat_mul(1.0, &cache.h1.t(), &dv, 1.0, &mut g.wv);

    let mut dh1 = dk.dot(&p.wk.t());
    general_mat_mul(1.0, &dv, &p.wv.t(), 1.0, &mut dh1);
    general_mat_mul(1.0, &dq, &p.wq.t(), 1.0, &mut dh1.slice_mut(s![..m, ..]));

    g.ln1_bias += &dh1.sum_axis(Axis(0));
    g.ln1_gain += &(&dh1 * &cache.xhat1).sum_axis(Axis(0));
    let dxhat1 = &dh1 * &p.ln1_gain;
    for i in 0..n {
        let r = norm_backward_row(dxhat1.row(i), cache.xhat1.row(i), cache.rstd1[i]);
        dx.row_mut(i).scaled_add(1.0, &r);
    }
    dx
}
