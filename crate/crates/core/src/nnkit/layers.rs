//! Layers with hand-written backward passes.
//!
//! Every layer follows the same pattern: `forward` returns the output plus a
//! cache, and `backward` takes that cache and the upstream gradient, adds
//! parameter gradients into a same-shaped gradient struct, and returns the
//! gradient with respect to the input.

use rand::Rng;

use super::params::Params;
use super::tensor::{softmax_in_place, Tensor};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Option<Tensor>,
}

impl Linear {
    pub fn new<R: Rng>(input: usize, output: usize, bias: bool, rng: &mut R) -> Self {
        Self {
            w: Tensor::xavier_uniform(&[input, output], input, output, rng),
            b: bias.then(|| Tensor::zeros(&[output])),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "linear expects {} input features, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let mut y = x.matmul(&self.w);
        if let Some(b) = &self.b {
            for i in 0..y.rows() {
                for (v, bb) in y.row_mut(i).iter_mut().zip(b.data()) {
                    *v += bb;
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor, dy: &Tensor, grad: &mut Linear) -> Tensor {
        grad.w.add_assign(&x.matmul_tn(dy));
        if let Some(gb) = &mut grad.b {
            let gb = gb.data_mut();
            for i in 0..dy.rows() {
                for (g, d) in gb.iter_mut().zip(dy.row(i)) {
                    *g += d;
                }
            }
        }
        dy.matmul_nt(&self.w)
    }
}

impl Params for Linear {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.w"), &self.w));
        if let Some(b) = &self.b {
            out.push((format!("{prefix}.b"), b));
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.w"), &mut self.w));
        if let Some(b) = &mut self.b {
            out.push((format!("{prefix}.b"), b));
        }
    }
}

/// Layer normalization over the last dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: Tensor::filled(&[dim], 1.0),
            bias: Tensor::zeros(&[dim]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, LayerNormCache) {
        let d = x.cols();
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let row = xhat.row_mut(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * s);
            inv_std.push(s);
        }
        let mut y = xhat.clone();
        for i in 0..y.rows() {
            for ((v, g), b) in y.row_mut(i).iter_mut().zip(self.gain.data()).zip(self.bias.data()) {
                *v = *v * g + b;
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Tensor, grad: &mut LayerNorm) -> Tensor {
        let d = dy.cols();
        let mut dx = Tensor::zeros(dy.shape());
        for i in 0..dy.rows() {
            let xhat = cache.xhat.row(i);
            let dyr = dy.row(i);
            for j in 0..d {
                grad.gain.data_mut()[j] += dyr[j] * xhat[j];
                grad.bias.data_mut()[j] += dyr[j];
            }
            let dxhat: Vec<f64> = dyr.iter().zip(self.gain.data()).map(|(a, g)| a * g).collect();
            let sum: f64 = dxhat.iter().sum();
            let dot: f64 = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum();
            let s = cache.inv_std[i] / d as f64;
            for (j, out) in dx.row_mut(i).iter_mut().enumerate() {
                *out = s * (d as f64 * dxhat[j] - sum - xhat[j] * dot);
            }
        }
        dx
    }
}

impl Params for LayerNorm {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.gain"), &self.gain));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.gain"), &mut self.gain));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
}

/// Multi-head scaled dot-product self-attention. The key projection has no
/// bias: softmax is shift-invariant per query, so it could never be trained.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    probs: Vec<Tensor>,
    ctx: Tensor,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::shape(format!(
                "model dim {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            q: Linear::new(dim, dim, true, rng),
            k: Linear::new(dim, dim, false, rng),
            v: Linear::new(dim, dim, true, rng),
            o: Linear::new(dim, dim, true, rng),
            heads,
        })
    }

    fn head_dim(&self) -> usize {
        self.q.output_dim() / self.heads
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, AttentionCache)> {
        let q = self.q.forward(x)?;
        let k = self.k.forward(x)?;
        let v = self.v.forward(x)?;
        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut ctx = Tensor::zeros(&[x.rows(), self.q.output_dim()]);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.col_slice(h * hd, hd);
            let kh = k.col_slice(h * hd, hd);
            let vh = v.col_slice(h * hd, hd);
            let mut p = qh.matmul_nt(&kh);
            p.scale(scale);
            for i in 0..p.rows() {
                softmax_in_place(p.row_mut(i));
            }
            ctx.set_col_slice(h * hd, &p.matmul(&vh));
            probs.push(p);
        }
        let out = self.o.forward(&ctx)?;
        Ok((
            out,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                probs,
                ctx,
            },
        ))
    }

    pub fn backward(&self, cache: &AttentionCache, dy: &Tensor, grad: &mut MultiHeadAttention) -> Tensor {
        let dctx = self.o.backward(&cache.ctx, dy, &mut grad.o);
        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let n = dy.rows();
        let d = self.q.output_dim();
        let mut dq = Tensor::zeros(&[n, d]);
        let mut dk = Tensor::zeros(&[n, d]);
        let mut dv = Tensor::zeros(&[n, d]);
        for h in 0..self.heads {
            let p = &cache.probs[h];
            let dctx_h = dctx.col_slice(h * hd, hd);
            let vh = cache.v.col_slice(h * hd, hd);
            let qh = cache.q.col_slice(h * hd, hd);
            let kh = cache.k.col_slice(h * hd, hd);

            dv.set_col_slice(h * hd, &p.matmul_tn(&dctx_h));
            let dp = dctx_h.matmul_nt(&vh);
            let mut ds = Tensor::zeros(&[n, n]);
            for i in 0..n {
                let pr = p.row(i);
                let dpr = dp.row(i);
                let dot: f64 = pr.iter().zip(dpr).map(|(a, b)| a * b).sum();
                for (j, out) in ds.row_mut(i).iter_mut().enumerate() {
                    *out = pr[j] * (dpr[j] - dot) * scale;
                }
            }
            dq.set_col_slice(h * hd, &ds.matmul(&kh));
            dk.set_col_slice(h * hd, &ds.matmul_tn(&qh));
        }
        let mut dx = self.q.backward(&cache.x, &dq, &mut grad.q);
        dx.add_assign(&self.k.backward(&cache.x, &dk, &mut grad.k));
        dx.add_assign(&self.v.backward(&cache.x, &dv, &mut grad.v));
        dx
    }
}

impl Params for MultiHeadAttention {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.q.collect(&format!("{prefix}.q"), out);
        self.k.collect(&format!("{prefix}.k"), out);
        self.v.collect(&format!("{prefix}.v"), out);
        self.o.collect(&format!("{prefix}.o"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.q.collect_mut(&format!("{prefix}.q"), out);
        self.k.collect_mut(&format!("{prefix}.k"), out);
        self.v.collect_mut(&format!("{prefix}.v"), out);
        self.o.collect_mut(&format!("{prefix}.o"), out);
    }
}

/// tanh approximation of GELU.
fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Position-wise `Linear -> GELU -> Linear`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache {
    x: Tensor,
    pre: Tensor,
    act: Tensor,
}

impl FeedForward {
    pub fn new<R: Rng>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            up: Linear::new(dim, hidden, true, rng),
            down: Linear::new(hidden, dim, true, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, FeedForwardCache)> {
        let pre = self.up.forward(x)?;
        let mut act = pre.clone();
        act.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
        let out = self.down.forward(&act)?;
        Ok((out, FeedForwardCache { x: x.clone(), pre, act }))
    }

    pub fn backward(&self, cache: &FeedForwardCache, dy: &Tensor, grad: &mut FeedForward) -> Tensor {
        let mut dact = self.down.backward(&cache.act, dy, &mut grad.down);
        for (g, x) in dact.data_mut().iter_mut().zip(cache.pre.data()) {
            *g *= gelu_grad(*x);
        }
        self.up.backward(&cache.x, &dact, &mut grad.up)
    }
}

impl Params for FeedForward {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.up.collect(&format!("{prefix}.up"), out);
        self.down.collect(&format!("{prefix}.down"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.up.collect_mut(&format!("{prefix}.up"), out);
        self.down.collect_mut(&format!("{prefix}.down"), out);
    }
}

/// Post-norm encoder block: `h = LN(x + Attn(x))`, `y = LN(h + FFN(h))`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ffn: FeedForward,
    pub ln2: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct EncoderLayerCache {
    attn: AttentionCache,
    ln1: LayerNormCache,
    ffn: FeedForwardCache,
    ln2: LayerNormCache,
}

impl EncoderLayer {
    pub fn new<R: Rng>(dim: usize, heads: usize, ffn_dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::new(dim, heads, rng)?,
            ln1: LayerNorm::new(dim),
            ffn: FeedForward::new(dim, ffn_dim, rng),
            ln2: LayerNorm::new(dim),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, EncoderLayerCache)> {
        let (a, attn) = self.attn.forward(x)?;
        let (h, ln1) = self.ln1.forward(&x.add(&a));
        let (f, ffn) = self.ffn.forward(&h)?;
        let (y, ln2) = self.ln2.forward(&h.add(&f));
        Ok((y, EncoderLayerCache { attn, ln1, ffn, ln2 }))
    }

    pub fn backward(&self, cache: &EncoderLayerCache, dy: &Tensor, grad: &mut EncoderLayer) -> Tensor {
        let dr2 = self.ln2.backward(&cache.ln2, dy, &mut grad.ln2);
        let mut dh = self.ffn.backward(&cache.ffn, &dr2, &mut grad.ffn);
        dh.add_assign(&dr2);
        let dr1 = self.ln1.backward(&cache.ln1, &dh, &mut grad.ln1);
        let mut dx = self.attn.backward(&cache.attn, &dr1, &mut grad.attn);
        dx.add_assign(&dr1);
        dx
    }
}

impl Params for EncoderLayer {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.attn.collect(&format!("{prefix}.attn"), out);
        self.ln1.collect(&format!("{prefix}.ln1"), out);
        self.ffn.collect(&format!("{prefix}.ffn"), out);
        self.ln2.collect(&format!("{prefix}.ln2"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.attn.collect_mut(&format!("{prefix}.attn"), out);
        self.ln1.collect_mut(&format!("{prefix}.ln1"), out);
        self.ffn.collect_mut(&format!("{prefix}.ffn"), out);
        self.ln2.collect_mut(&format!("{prefix}.ln2"), out);
    }
}

/// A stack of [`EncoderLayer`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn new<R: Rng>(n_layers: usize, dim: usize, heads: usize, ffn_dim: usize, rng: &mut R) -> Result<Self> {
        let layers = (0..n_layers)
            .map(|_| EncoderLayer::new(dim, heads, ffn_dim, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.attn.q.input_dim())
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<EncoderLayerCache>)> {
        if !self.layers.is_empty() && x.cols() != self.dim() {
            return Err(Error::shape(format!(
                "encoder expects width {}, got {}",
                self.dim(),
                x.cols()
            )));
        }
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, cache) = layer.forward(&h)?;
            y.check_finite(&format!("encoder layer {i}"))?;
            h = y;
            caches.push(cache);
        }
        Ok((h, caches))
    }

    pub fn backward(&self, caches: &[EncoderLayerCache], dy: &Tensor, grad: &mut Encoder) -> Result<Tensor> {
        if caches.len() != self.layers.len() || grad.layers.len() != self.layers.len() {
            return Err(Error::shape(format!(
                "encoder has {} layers but got {} caches and {} gradient layers",
                self.layers.len(),
                caches.len(),
                grad.layers.len()
            )));
        }
        let mut d = dy.clone();
        for ((layer, cache), g) in self.layers.iter().zip(caches).zip(grad.layers.iter_mut()).rev() {
            d = layer.backward(cache, &d, g);
        }
        Ok(d)
    }
}

impl Params for Encoder {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.collect(&format!("{prefix}.{i}"), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.collect_mut(&format!("{prefix}.{i}"), out);
        }
    }
}

/// Gathers rows of an embedding table.
pub fn embed(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    let d = table.cols();
    let mut data = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= table.rows() {
            return Err(Error::validation(format!(
                "id {id} outside embedding table of {} rows",
                table.rows()
            )));
        }
        data.extend_from_slice(table.row(id));
    }
    Tensor::from_vec(&[ids.len(), d], data)
}

/// Scatter-adds `dy` rows into the gradient of an embedding table.
pub fn embed_backward(grad_table: &mut Tensor, ids: &[usize], dy: &Tensor) {
    for (i, &id) in ids.iter().enumerate() {
        for (g, d) in grad_table.row_mut(id).iter_mut().zip(dy.row(i)) {
            *g += d;
        }
    }
}

/// `PE[p, 2i] = sin(p / 10000^(2i/d))`, `PE[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn sinusoidal_positions(n: usize, d: usize) -> Result<Tensor> {
    if d % 2 != 0 {
        return Err(Error::shape(format!("positional coding needs an even width, got {d}")));
    }
    let mut pe = Tensor::zeros(&[n, d]);
    for p in 0..n {
        let row = pe.row_mut(p);
        for i in 0..d / 2 {
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            row[2 * i] = angle.sin();
            row[2 * i + 1] = angle.cos();
        }
    }
    Ok(pe)
}
