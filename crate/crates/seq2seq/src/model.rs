//! Parameters, forward pass with activation caches, and the hand-written
//! backward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{gemm, Mat, MatMut};
use crate::{ModelConfig, ModelError, Scalar, PAD};

pub(crate) const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

/// One named tensor in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Lin {
    pub w: usize,
    pub b: usize,
    pub din: usize,
    pub dout: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Ln {
    pub g: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Attn {
    pub q: Lin,
    pub k: Lin,
    pub v: Lin,
    pub o: Lin,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Ffn {
    pub l1: Lin,
    pub l2: Lin,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncLayer {
    pub ln1: Ln,
    pub attn: Attn,
    pub ln2: Ln,
    pub ffn: Ffn,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecLayer {
    pub ln1: Ln,
    pub self_attn: Attn,
    pub ln2: Ln,
    pub cross: Attn,
    pub ln3: Ln,
    pub ffn: Ffn,
}

#[derive(Debug, Clone)]
pub(crate) struct Index {
    pub tok: usize,
    pub enc_pos: usize,
    pub dec_pos: usize,
    pub enc: Vec<EncLayer>,
    pub dec: Vec<DecLayer>,
    pub enc_ln: Ln,
    pub dec_ln: Ln,
}

#[derive(Clone, Copy, PartialEq)]
enum Init {
    Normal,
    Zero,
    One,
}

struct Builder {
    infos: Vec<TensorInfo>,
    inits: Vec<Init>,
    n: usize,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        let off = self.n;
        self.infos.push(TensorInfo { name, offset: off, rows, cols });
        self.inits.push(init);
        self.n += rows * cols;
        off
    }

    fn lin(&mut self, name: &str, din: usize, dout: usize) -> Lin {
        let w = self.add(format!("{name}.w"), din, dout, Init::Normal);
        let b = self.add(format!("{name}.b"), 1, dout, Init::Zero);
        Lin { w, b, din, dout }
    }

    fn ln(&mut self, name: &str, d: usize) -> Ln {
        let g = self.add(format!("{name}.g"), 1, d, Init::One);
        let b = self.add(format!("{name}.b"), 1, d, Init::Zero);
        Ln { g, b }
    }

    fn attn(&mut self, name: &str, d: usize) -> Attn {
        Attn {
            q: self.lin(&format!("{name}.q"), d, d),
            k: self.lin(&format!("{name}.k"), d, d),
            v: self.lin(&format!("{name}.v"), d, d),
            o: self.lin(&format!("{name}.o"), d, d),
        }
    }

    fn ffn(&mut self, name: &str, d: usize, f: usize) -> Ffn {
        Ffn { l1: self.lin(&format!("{name}.fc1"), d, f), l2: self.lin(&format!("{name}.fc2"), f, d) }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Index, Vec<TensorInfo>, Vec<Init>) {
    let d = cfg.d_model;
    let mut b = Builder { infos: Vec::new(), inits: Vec::new(), n: 0 };
    let tok = b.add("tok_emb".into(), cfg.vocab_size, d, Init::Normal);
    let enc_pos = b.add("enc_pos".into(), cfg.max_positions, d, Init::Normal);
    let dec_pos = b.add("dec_pos".into(), cfg.max_positions, d, Init::Normal);
    let enc = (0..cfg.enc_layers)
        .map(|i| {
            let p = format!("enc.{i}");
            EncLayer {
                ln1: b.ln(&format!("{p}.ln1"), d),
                attn: b.attn(&format!("{p}.attn"), d),
                ln2: b.ln(&format!("{p}.ln2"), d),
                ffn: b.ffn(&p, d, cfg.ffn_dim),
            }
        })
        .collect();
    let enc_ln = b.ln("enc.ln_f", d);
    let dec = (0..cfg.dec_layers)
        .map(|i| {
            let p = format!("dec.{i}");
            DecLayer {
                ln1: b.ln(&format!("{p}.ln1"), d),
                self_attn: b.attn(&format!("{p}.self"), d),
                ln2: b.ln(&format!("{p}.ln2"), d),
                cross: b.attn(&format!("{p}.cross"), d),
                ln3: b.ln(&format!("{p}.ln3"), d),
                ffn: b.ffn(&p, d, cfg.ffn_dim),
            }
        })
        .collect();
    let dec_ln = b.ln("dec.ln_f", d);
    (Index { tok, enc_pos, dec_pos, enc, dec, enc_ln, dec_ln }, b.infos, b.inits)
}

pub(crate) fn layout_of(cfg: &ModelConfig) -> Vec<TensorInfo> {
    build_layout(cfg).1
}

/// Encoder-decoder transformer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Transformer<S> {
    pub cfg: ModelConfig,
    pub params: Vec<S>,
    pub(crate) idx: Index,
    layout: Vec<TensorInfo>,
}

// ---- building blocks ------------------------------------------------------

fn linear<S: Scalar>(p: &[S], l: Lin, x: &[S]) -> Vec<S> {
    let n = x.len() / l.din;
    let mut y = Vec::with_capacity(n * l.dout);
    for _ in 0..n {
        y.extend_from_slice(&p[l.b..l.b + l.dout]);
    }
    gemm(n, l.din, l.dout, S::one(), Mat::rm(x, l.din), Mat { d: p, off: l.w, rs: l.dout, cs: 1 }, S::one(), MatMut::rm(&mut y, l.dout));
    y
}

/// Accumulates weight gradients into `g` and, if given, the input gradient into `dx`.
fn linear_back<S: Scalar>(p: &[S], g: &mut [S], l: Lin, x: &[S], dy: &[S], dx: Option<&mut [S]>) {
    let n = x.len() / l.din;
    gemm(l.din, n, l.dout, S::one(), Mat::rm(x, l.din).t(), Mat::rm(dy, l.dout), S::one(), MatMut { d: g, off: l.w, rs: l.dout, cs: 1 });
    for row in dy.chunks_exact(l.dout) {
        for (gb, &v) in g[l.b..l.b + l.dout].iter_mut().zip(row) {
            *gb += v;
        }
    }
    if let Some(dx) = dx {
        gemm(n, l.dout, l.din, S::one(), Mat::rm(dy, l.dout), Mat { d: p, off: l.w, rs: l.dout, cs: 1 }.t(), S::one(), MatMut::rm(dx, l.din));
    }
}

pub(crate) struct LnCache<S> {
    xhat: Vec<S>,
    rstd: Vec<S>,
}

pub(crate) fn layer_norm<S: Scalar>(p: &[S], ln: Ln, x: &[S], d: usize) -> (Vec<S>, LnCache<S>) {
    let n = x.len() / d;
    let eps = S::of(LN_EPS);
    let dn = S::of(d as f64);
    let mut y = vec![S::zero(); x.len()];
    let mut xhat = vec![S::zero(); x.len()];
    let mut rstd = vec![S::zero(); n];
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<S>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
        let rs = S::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = h * p[ln.g + j] + p[ln.b + j];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn layer_norm_back<S: Scalar>(p: &[S], g: &mut [S], ln: Ln, c: &LnCache<S>, dy: &[S], d: usize) -> Vec<S> {
    let dn = S::of(d as f64);
    let mut dx = vec![S::zero(); dy.len()];
    let mut dxh = vec![S::zero(); d];
    for (r, &rs) in c.rstd.iter().enumerate() {
        let xh = &c.xhat[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let (mut m1, mut m2) = (S::zero(), S::zero());
        for j in 0..d {
            g[ln.g + j] += dyr[j] * xh[j];
            g[ln.b + j] += dyr[j];
            dxh[j] = dyr[j] * p[ln.g + j];
            m1 += dxh[j];
            m2 += dxh[j] * xh[j];
        }
        m1 /= dn;
        m2 /= dn;
        for j in 0..d {
            dx[r * d + j] = rs * (dxh[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

/// Softmax over the first `visible` entries; the rest become zero.
pub(crate) fn softmax_prefix<S: Scalar>(row: &mut [S], visible: usize) {
    let mx = row[..visible].iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for v in &mut row[..visible] {
        *v = (*v - mx).exp();
        sum += *v;
    }
    for v in &mut row[..visible] {
        *v /= sum;
    }
    for v in &mut row[visible..] {
        *v = S::zero();
    }
}

pub(crate) struct AttnCache<S> {
    q: Vec<S>,
    k: Vec<S>,
    v: Vec<S>,
    /// heads × nq × nk
    pub(crate) probs: Vec<S>,
    ctx: Vec<S>,
}

pub(crate) fn attention<S: Scalar>(p: &[S], a: Attn, xq: &[S], xkv: &[S], heads: usize, causal: bool) -> (Vec<S>, AttnCache<S>) {
    let d = a.q.din;
    let (nq, nk, dk) = (xq.len() / d, xkv.len() / d, d / heads);
    let q = linear(p, a.q, xq);
    let k = linear(p, a.k, xkv);
    let v = linear(p, a.v, xkv);
    let scale = S::one() / S::of(dk as f64).sqrt();
    let mut probs = vec![S::zero(); heads * nq * nk];
    let mut ctx = vec![S::zero(); nq * d];
    for h in 0..heads {
        let s = &mut probs[h * nq * nk..(h + 1) * nq * nk];
        gemm(nq, dk, nk, scale, Mat::rm(&q, d).col(h * dk), Mat::rm(&k, d).col(h * dk).t(), S::zero(), MatMut::rm(s, nk));
        for i in 0..nq {
            softmax_prefix(&mut s[i * nk..(i + 1) * nk], if causal { (i + 1).min(nk) } else { nk });
        }
        gemm(nq, nk, dk, S::one(), Mat::rm(s, nk), Mat::rm(&v, d).col(h * dk), S::zero(), MatMut::rm(&mut ctx, d).col(h * dk));
    }
    let out = linear(p, a.o, &ctx);
    (out, AttnCache { q, k, v, probs, ctx })
}

/// Returns (d xq, d xkv).
fn attention_back<S: Scalar>(
    p: &[S],
    g: &mut [S],
    a: Attn,
    c: &AttnCache<S>,
    xq: &[S],
    xkv: &[S],
    dout: &[S],
    heads: usize,
) -> (Vec<S>, Vec<S>) {
    let d = a.q.din;
    let (nq, nk, dk) = (xq.len() / d, xkv.len() / d, d / heads);
    let scale = S::one() / S::of(dk as f64).sqrt();
    let mut dctx = vec![S::zero(); nq * d];
    linear_back(p, g, a.o, &c.ctx, dout, Some(&mut dctx));
    let mut dq = vec![S::zero(); nq * d];
    let mut dkk = vec![S::zero(); nk * d];
    let mut dv = vec![S::zero(); nk * d];
    let mut ds = vec![S::zero(); nq * nk];
    for h in 0..heads {
        let pr = &c.probs[h * nq * nk..(h + 1) * nq * nk];
        let hc = h * dk;
        gemm(nq, dk, nk, S::one(), Mat::rm(&dctx, d).col(hc), Mat::rm(&c.v, d).col(hc).t(), S::zero(), MatMut::rm(&mut ds, nk));
        gemm(nk, nq, dk, S::one(), Mat::rm(pr, nk).t(), Mat::rm(&dctx, d).col(hc), S::one(), MatMut::rm(&mut dv, d).col(hc));
        for i in 0..nq {
            let (prow, drow) = (&pr[i * nk..(i + 1) * nk], &mut ds[i * nk..(i + 1) * nk]);
            let dot: S = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
            for (dv_, &pv) in drow.iter_mut().zip(prow) {
                *dv_ = pv * (*dv_ - dot) * scale;
            }
        }
        gemm(nq, nk, dk, S::one(), Mat::rm(&ds, nk), Mat::rm(&c.k, d).col(hc), S::one(), MatMut::rm(&mut dq, d).col(hc));
        gemm(nk, nq, dk, S::one(), Mat::rm(&ds, nk).t(), Mat::rm(&c.q, d).col(hc), S::one(), MatMut::rm(&mut dkk, d).col(hc));
    }
    let mut dxq = vec![S::zero(); nq * d];
    linear_back(p, g, a.q, xq, &dq, Some(&mut dxq));
    let mut dxkv = vec![S::zero(); nk * d];
    linear_back(p, g, a.k, xkv, &dkk, Some(&mut dxkv));
    linear_back(p, g, a.v, xkv, &dv, Some(&mut dxkv));
    (dxq, dxkv)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

pub(crate) fn gelu<S: Scalar>(x: S) -> S {
    let (c, a, h) = (S::of(GELU_C), S::of(GELU_A), S::of(0.5));
    h * x * (S::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<S: Scalar>(x: S) -> S {
    let (c, a, h) = (S::of(GELU_C), S::of(GELU_A), S::of(0.5));
    let t = (c * (x + a * x * x * x)).tanh();
    h * (S::one() + t) + h * x * (S::one() - t * t) * c * (S::one() + S::of(3.0) * a * x * x)
}

pub(crate) struct FfnCache<S> {
    pre: Vec<S>,
    act: Vec<S>,
}

pub(crate) fn ffn<S: Scalar>(p: &[S], f: Ffn, x: &[S]) -> (Vec<S>, FfnCache<S>) {
    let pre = linear(p, f.l1, x);
    let act: Vec<S> = pre.iter().map(|&v| gelu(v)).collect();
    let out = linear(p, f.l2, &act);
    (out, FfnCache { pre, act })
}

fn ffn_back<S: Scalar>(p: &[S], g: &mut [S], f: Ffn, c: &FfnCache<S>, x: &[S], dout: &[S]) -> Vec<S> {
    let mut dact = vec![S::zero(); c.act.len()];
    linear_back(p, g, f.l2, &c.act, dout, Some(&mut dact));
    for (da, &pre) in dact.iter_mut().zip(&c.pre) {
        *da *= gelu_grad(pre);
    }
    let mut dx = vec![S::zero(); x.len()];
    linear_back(p, g, f.l1, x, &dact, Some(&mut dx));
    dx
}

fn add_into<S: Scalar>(acc: &mut [S], x: &[S]) {
    for (a, &b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

struct EncCache<S> {
    ln1: LnCache<S>,
    a: Vec<S>,
    attn: AttnCache<S>,
    ln2: LnCache<S>,
    b: Vec<S>,
    ffn: FfnCache<S>,
}

struct DecCache<S> {
    ln1: LnCache<S>,
    a: Vec<S>,
    self_attn: AttnCache<S>,
    ln2: LnCache<S>,
    b: Vec<S>,
    cross: AttnCache<S>,
    ln3: LnCache<S>,
    c: Vec<S>,
    ffn: FfnCache<S>,
}

struct Caches<S> {
    enc: Vec<EncCache<S>>,
    enc_ln: LnCache<S>,
    enc_out: Vec<S>,
    dec: Vec<DecCache<S>>,
    dec_ln: LnCache<S>,
    dec_out: Vec<S>,
}

/// Mean cross-entropy of row-major `logits` (n × vocab) against `targets`,
/// ignoring PAD targets. Returns the mean and the number of counted tokens;
/// the mean is 0 when every target is PAD.
pub fn cross_entropy<S: Scalar>(logits: &[S], targets: &[u32], vocab: usize) -> (S, usize) {
    let (sum, n) = ce_sum(logits, targets, vocab, None);
    if n == 0 {
        (S::zero(), 0)
    } else {
        (sum / S::of(n as f64), n)
    }
}

/// Summed loss; with `grad = Some((dlogits, w))` also writes `w * dLoss/dlogits`.
fn ce_sum<S: Scalar>(logits: &[S], targets: &[u32], vocab: usize, mut grad: Option<(&mut [S], S)>) -> (S, usize) {
    let mut sum = S::zero();
    let mut n = 0;
    for (r, &t) in targets.iter().enumerate() {
        if t == PAD {
            continue;
        }
        let row = &logits[r * vocab..(r + 1) * vocab];
        let mx = row.iter().copied().fold(S::neg_infinity(), S::max);
        let z: S = row.iter().map(|&v| (v - mx).exp()).sum();
        let lse = mx + z.ln();
        sum += lse - row[t as usize];
        n += 1;
        if let Some((dl, w)) = grad.as_mut() {
            let drow = &mut dl[r * vocab..(r + 1) * vocab];
            for (dv, &v) in drow.iter_mut().zip(row) {
                *dv = (v - lse).exp() * *w;
            }
            drow[t as usize] -= *w;
        }
    }
    (sum, n)
}

impl<S: Scalar> Transformer<S> {
    /// Fresh weights: N(0, 0.02) for matrices and embeddings, zero biases,
    /// unit LayerNorm gains.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let (idx, layout, inits) = build_layout(&cfg);
        let n = layout.last().map_or(0, |t| t.offset + t.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut params = Vec::with_capacity(n);
        for (t, init) in layout.iter().zip(&inits) {
            for _ in 0..t.len() {
                params.push(match init {
                    Init::Normal => S::of(normal.sample(&mut rng)),
                    Init::Zero => S::zero(),
                    Init::One => S::one(),
                });
            }
        }
        Ok(Transformer { cfg, params, idx, layout })
    }

    pub fn from_params(cfg: ModelConfig, params: Vec<S>) -> Result<Self, ModelError> {
        cfg.validate()?;
        let (idx, layout, _) = build_layout(&cfg);
        let n = layout.last().map_or(0, |t| t.offset + t.len());
        if params.len() != n {
            return Err(ModelError::ShapeMismatch(format!("expected {n} parameters, got {}", params.len())));
        }
        Ok(Transformer { cfg, params, idx, layout })
    }

    pub fn layout(&self) -> &[TensorInfo] {
        &self.layout
    }

    pub fn tensor(&self, name: &str) -> Option<&[S]> {
        self.layout.iter().find(|t| t.name == name).map(|t| &self.params[t.offset..t.offset + t.len()])
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn cast<T: Scalar>(&self) -> Transformer<T> {
        Transformer {
            cfg: self.cfg.clone(),
            params: self.params.iter().map(|v| T::of(v.to_f64().expect("finite"))).collect(),
            idx: self.idx.clone(),
            layout: self.layout.clone(),
        }
    }

    pub(crate) fn check_ids(&self, ids: &[u32]) -> Result<(), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::ShapeMismatch("empty sequence".into()));
        }
        if ids.len() > self.cfg.max_positions {
            return Err(ModelError::SequenceTooLong { len: ids.len(), max: self.cfg.max_positions });
        }
        match ids.iter().find(|&&t| t as usize >= self.cfg.vocab_size) {
            Some(&id) => Err(ModelError::BadTokenId { id, vocab: self.cfg.vocab_size }),
            None => Ok(()),
        }
    }

    pub(crate) fn embed_one(&self, pos_table: usize, id: u32, pos: usize) -> Vec<S> {
        let d = self.cfg.d_model;
        let (t, ps) = (self.idx.tok + id as usize * d, pos_table + pos * d);
        (0..d).map(|j| self.params[t + j] + self.params[ps + j]).collect()
    }

    fn embed(&self, pos_table: usize, ids: &[u32]) -> Vec<S> {
        ids.iter().enumerate().flat_map(|(i, &id)| self.embed_one(pos_table, id, i)).collect()
    }

    fn embed_back(&self, g: &mut [S], pos_table: usize, ids: &[u32], dx: &[S]) {
        let d = self.cfg.d_model;
        for (i, &id) in ids.iter().enumerate() {
            let row = &dx[i * d..(i + 1) * d];
            for j in 0..d {
                g[self.idx.tok + id as usize * d + j] += row[j];
                g[pos_table + i * d + j] += row[j];
            }
        }
    }

    pub(crate) fn logits_of(&self, out: &[S]) -> Vec<S> {
        let (d, v) = (self.cfg.d_model, self.cfg.vocab_size);
        let n = out.len() / d;
        let mut logits = vec![S::zero(); n * v];
        let tok = Mat { d: &self.params[..], off: self.idx.tok, rs: d, cs: 1 };
        gemm(n, d, v, S::one(), Mat::rm(out, d), tok.t(), S::zero(), MatMut::rm(&mut logits, v));
        logits
    }

    fn encode_cached(&self, src: &[u32]) -> (Vec<EncCache<S>>, LnCache<S>, Vec<S>) {
        let (p, d, h) = (&self.params[..], self.cfg.d_model, self.cfg.heads);
        let mut x = self.embed(self.idx.enc_pos, src);
        let mut caches = Vec::with_capacity(self.idx.enc.len());
        for l in &self.idx.enc {
            let (a, ln1) = layer_norm(p, l.ln1, &x, d);
            let (att, attn) = attention(p, l.attn, &a, &a, h, false);
            add_into(&mut x, &att);
            let (b, ln2) = layer_norm(p, l.ln2, &x, d);
            let (f, ffc) = ffn(p, l.ffn, &b);
            add_into(&mut x, &f);
            caches.push(EncCache { ln1, a, attn, ln2, b, ffn: ffc });
        }
        let (out, lnc) = layer_norm(p, self.idx.enc_ln, &x, d);
        (caches, lnc, out)
    }

    fn forward_cached(&self, src: &[u32], tgt_in: &[u32]) -> Result<(Vec<S>, Caches<S>), ModelError> {
        self.check_ids(src)?;
        self.check_ids(tgt_in)?;
        let (p, d, h) = (&self.params[..], self.cfg.d_model, self.cfg.heads);
        let (enc, enc_ln, enc_out) = self.encode_cached(src);
        let mut x = self.embed(self.idx.dec_pos, tgt_in);
        let mut dec = Vec::with_capacity(self.idx.dec.len());
        for l in &self.idx.dec {
            let (a, ln1) = layer_norm(p, l.ln1, &x, d);
            let (att, self_attn) = attention(p, l.self_attn, &a, &a, h, true);
            add_into(&mut x, &att);
            let (b, ln2) = layer_norm(p, l.ln2, &x, d);
            let (att, cross) = attention(p, l.cross, &b, &enc_out, h, false);
            add_into(&mut x, &att);
            let (c, ln3) = layer_norm(p, l.ln3, &x, d);
            let (f, ffc) = ffn(p, l.ffn, &c);
            add_into(&mut x, &f);
            dec.push(DecCache { ln1, a, self_attn, ln2, b, cross, ln3, c, ffn: ffc });
        }
        let (dec_out, dec_ln) = layer_norm(p, self.idx.dec_ln, &x, d);
        let logits = self.logits_of(&dec_out);
        Ok((logits, Caches { enc, enc_ln, enc_out, dec, dec_ln, dec_out }))
    }

    /// Logits (len(tgt_in) × vocab) for every decoder position.
    pub fn forward(&self, src: &[u32], tgt_in: &[u32]) -> Result<Vec<S>, ModelError> {
        Ok(self.forward_cached(src, tgt_in)?.0)
    }

    /// Encoder output (len(src) × d_model).
    pub fn encoder_output(&self, src: &[u32]) -> Result<Vec<S>, ModelError> {
        self.check_ids(src)?;
        Ok(self.encode_cached(src).2)
    }

    fn split_target(tgt: &[u32]) -> Result<(&[u32], &[u32]), ModelError> {
        if tgt.len() < 2 {
            return Err(ModelError::ShapeMismatch("target needs at least BOS and EOS".into()));
        }
        Ok((&tgt[..tgt.len() - 1], &tgt[1..]))
    }

    /// Teacher-forced mean loss of `tgt` (BOS … EOS) given `src`.
    pub fn loss(&self, src: &[u32], tgt: &[u32]) -> Result<(S, usize), ModelError> {
        let (tin, tout) = Self::split_target(tgt)?;
        let logits = self.forward(src, tin)?;
        Ok(cross_entropy(&logits, tout, self.cfg.vocab_size))
    }

    /// Adds `weight * d(summed loss)/d(params)` into `grad`; returns the summed
    /// loss and the number of counted target tokens.
    pub fn accumulate_grad(&self, src: &[u32], tgt: &[u32], weight: S, grad: &mut [S]) -> Result<(S, usize), ModelError> {
        if grad.len() != self.params.len() {
            return Err(ModelError::ShapeMismatch("gradient buffer has the wrong length".into()));
        }
        let (tin, tout) = Self::split_target(tgt)?;
        let (logits, c) = self.forward_cached(src, tin)?;
        let (p, d, h, v) = (&self.params[..], self.cfg.d_model, self.cfg.heads, self.cfg.vocab_size);
        let mut dlogits = vec![S::zero(); logits.len()];
        let (sum, n) = ce_sum(&logits, tout, v, Some((&mut dlogits, weight)));

        let nt = tin.len();
        let mut dout = vec![S::zero(); nt * d];
        let tok = Mat { d: p, off: self.idx.tok, rs: d, cs: 1 };
        gemm(nt, v, d, S::one(), Mat::rm(&dlogits, v), tok, S::zero(), MatMut::rm(&mut dout, d));
        gemm(v, nt, d, S::one(), Mat::rm(&dlogits, v).t(), Mat::rm(&c.dec_out, d), S::one(), MatMut { d: grad, off: self.idx.tok, rs: d, cs: 1 });

        let mut dx = layer_norm_back(p, grad, self.idx.dec_ln, &c.dec_ln, &dout, d);
        let mut denc = vec![S::zero(); c.enc_out.len()];
        for (l, lc) in self.idx.dec.iter().zip(&c.dec).rev() {
            let df = ffn_back(p, grad, l.ffn, &lc.ffn, &lc.c, &dx);
            add_into(&mut dx, &layer_norm_back(p, grad, l.ln3, &lc.ln3, &df, d));
            let (dq, dkv) = attention_back(p, grad, l.cross, &lc.cross, &lc.b, &c.enc_out, &dx, h);
            add_into(&mut denc, &dkv);
            add_into(&mut dx, &layer_norm_back(p, grad, l.ln2, &lc.ln2, &dq, d));
            let (mut dq, dkv) = attention_back(p, grad, l.self_attn, &lc.self_attn, &lc.a, &lc.a, &dx, h);
            add_into(&mut dq, &dkv);
            add_into(&mut dx, &layer_norm_back(p, grad, l.ln1, &lc.ln1, &dq, d));
        }
        self.embed_back(grad, self.idx.dec_pos, tin, &dx);

        let mut dx = layer_norm_back(p, grad, self.idx.enc_ln, &c.enc_ln, &denc, d);
        for (l, lc) in self.idx.enc.iter().zip(&c.enc).rev() {
            let df = ffn_back(p, grad, l.ffn, &lc.ffn, &lc.b, &dx);
            add_into(&mut dx, &layer_norm_back(p, grad, l.ln2, &lc.ln2, &df, d));
            let (mut dq, dkv) = attention_back(p, grad, l.attn, &lc.attn, &lc.a, &lc.a, &dx, h);
            add_into(&mut dq, &dkv);
            add_into(&mut dx, &layer_norm_back(p, grad, l.ln1, &lc.ln1, &dq, d));
        }
        self.embed_back(grad, self.idx.enc_pos, src, &dx);
        Ok((sum, n))
    }

    /// Mean loss and its gradient for a single pair.
    pub fn backward(&self, src: &[u32], tgt: &[u32]) -> Result<(S, Vec<S>), ModelError> {
        let (_, tout) = Self::split_target(tgt)?;
        let n = tout.iter().filter(|&&t| t != PAD).count();
        let w = if n == 0 { S::zero() } else { S::one() / S::of(n as f64) };
        let mut grad = vec![S::zero(); self.params.len()];
        let (sum, _) = self.accumulate_grad(src, tgt, w, &mut grad)?;
        Ok((sum * w, grad))
    }

    /// Attention probabilities (heads × nq × nk) of the first decoder layer's
    /// self-attention, for inspection.
    pub fn first_self_attention(&self, src: &[u32], tgt_in: &[u32]) -> Result<Vec<S>, ModelError> {
        let (_, c) = self.forward_cached(src, tgt_in)?;
        c.dec
            .into_iter()
            .next()
            .map(|l| l.self_attn.probs)
            .ok_or_else(|| ModelError::ShapeMismatch("no decoder layers".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            enc_layers: 1,
            dec_layers: 1,
            d_model: 16,
            heads: 2,
            ffn_dim: 32,
            max_positions: 12,
            vocab_size: 11,
            share_embeddings: true,
        }
    }

    #[test]
    fn init_is_deterministic_with_expected_spread() {
        let cfg = ModelConfig { d_model: 64, heads: 4, ffn_dim: 128, vocab_size: 300, ..tiny() };
        let a = Transformer::<f32>::init(cfg.clone(), 7).unwrap();
        let b = Transformer::<f32>::init(cfg.clone(), 7).unwrap();
        let c = Transformer::<f32>::init(cfg, 8).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
        let w = a.tensor("tok_emb").unwrap();
        let mean = w.iter().map(|&v| v as f64).sum::<f64>() / w.len() as f64;
        let sd = (w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        assert!(mean.abs() < 2e-3 && (sd - 0.02).abs() < 1e-3, "mean {mean} sd {sd}");
        assert!(a.tensor("enc.0.ln1.g").unwrap().iter().all(|&v| v == 1.0));
        assert!(a.tensor("dec.0.fc1.b").unwrap().iter().all(|&v| v == 0.0));
        let last = a.layout().last().unwrap();
        assert_eq!(last.offset + last.len(), a.n_params());
    }

    #[test]
    fn layer_norm_with_unit_gain_standardises() {
        let p = vec![1.0f64, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let (y, _) = layer_norm(&p, Ln { g: 0, b: 4 }, &[1.0, 2.0, 3.0, 6.0], 4);
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
        // x = [1,2,3,6]: mean 3, var 3.5
        assert!((y[0] - (-2.0 / (3.5f64 + LN_EPS).sqrt())).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_mask_is_causal() {
        let m = Transformer::<f64>::init(tiny(), 1).unwrap();
        let probs = m.first_self_attention(&[1, 5, 6, 2], &[1, 7, 8, 9, 4]).unwrap();
        let n = 5;
        for h in 0..2 {
            for i in 0..n {
                let row = &probs[h * n * n + i * n..h * n * n + (i + 1) * n];
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row[i + 1..].iter().all(|&v| v == 0.0));
                assert!(row[..=i].iter().all(|&v| v > 0.0));
            }
        }
        // changing a later decoder token never affects earlier logits
        let a = m.forward(&[1, 5, 6, 2], &[1, 7, 8, 9, 4]).unwrap();
        let b = m.forward(&[1, 5, 6, 2], &[1, 7, 8, 3, 10]).unwrap();
        assert_eq!(a[..3 * 11], b[..3 * 11]);
        assert_ne!(a[3 * 11..], b[3 * 11..]);
    }

    #[test]
    fn hand_computed_single_head_attention() {
        // d = 2, one head, identity projections, zero biases.
        let eye = |p: &mut Vec<f64>| -> Lin {
            let w = p.len();
            p.extend([1.0, 0.0, 0.0, 1.0]);
            let b = p.len();
            p.extend([0.0, 0.0]);
            Lin { w, b, din: 2, dout: 2 }
        };
        let mut p = Vec::new();
        let a = Attn { q: eye(&mut p), k: eye(&mut p), v: eye(&mut p), o: eye(&mut p) };
        let xq = [1.0, 0.0];
        let xkv = [1.0, 0.0, 0.0, 1.0];
        let (out, c) = attention(&p, a, &xq, &xkv, 1, false);
        // scores = [1, 0] / sqrt(2)
        let e = (1.0f64 / 2f64.sqrt()).exp();
        let (p0, p1) = (e / (e + 1.0), 1.0 / (e + 1.0));
        assert!((c.probs[0] - p0).abs() < 1e-12 && (c.probs[1] - p1).abs() < 1e-12);
        assert!((out[0] - p0).abs() < 1e-12 && (out[1] - p1).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_examples() {
        let v = 7;
        let (l, n) = cross_entropy(&vec![0.0f64; 2 * v], &[3, 4], v);
        assert_eq!(n, 2);
        assert!((l - (v as f64).ln()).abs() < 1e-12);
        assert_eq!(cross_entropy(&vec![0.5f64; 2 * v], &[PAD, PAD], v), (0.0, 0));
        // PAD rows do not dilute the mean
        let mut logits = vec![0.0f64; 2 * v];
        logits[3] = 100.0;
        let (l, n) = cross_entropy(&logits, &[3, PAD], v);
        assert_eq!(n, 1);
        assert!(l < 1e-12);
    }

    #[test]
    fn positions_break_permutation_equivariance() {
        let mut m = Transformer::<f64>::init(tiny(), 3).unwrap();
        let (src, perm) = ([5u32, 6, 7, 8], [0usize, 2, 1, 3]);
        let psrc: Vec<u32> = perm.iter().map(|&i| src[i]).collect();
        let rows = |o: &[f64], i: usize| o[i * 16..(i + 1) * 16].to_vec();
        let a = m.encoder_output(&src).unwrap();
        let b = m.encoder_output(&psrc).unwrap();
        assert!(perm.iter().enumerate().any(|(j, &i)| rows(&a, i) != rows(&b, j)));
        // without positions the encoder is permutation-equivariant
        let ep = m.idx.enc_pos;
        for v in &mut m.params[ep..ep + 12 * 16] {
            *v = 0.0;
        }
        let a = m.encoder_output(&src).unwrap();
        let b = m.encoder_output(&psrc).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            for (x, y) in rows(&a, i).iter().zip(rows(&b, j)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn input_validation() {
        let m = Transformer::<f32>::init(tiny(), 0).unwrap();
        assert!(matches!(m.forward(&[1; 13], &[1]), Err(ModelError::SequenceTooLong { len: 13, max: 12 })));
        assert!(matches!(m.forward(&[1, 11], &[1]), Err(ModelError::BadTokenId { id: 11, vocab: 11 })));
        assert!(m.loss(&[1, 2], &[1]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = Transformer::<f64>::init(tiny(), 11).unwrap();
        let src = [1u32, 5, 9, 4, 2];
        let tgt = [1u32, 6, 3, 10, 2, PAD];
        let (_, grad) = m.backward(&src, &tgt).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-4;
        let mut probe: Vec<usize> = (0..200).map(|_| rng.gen_range(0..m.n_params())).collect();
        // make sure every tensor is touched at least once
        probe.extend(m.layout().iter().map(|t| t.offset + t.len() / 2));
        let mut worst = 0.0f64;
        for i in probe {
            let mut plus = m.clone();
            plus.params[i] += h;
            let mut minus = m.clone();
            minus.params[i] -= h;
            let num = (plus.loss(&src, &tgt).unwrap().0 - minus.loss(&src, &tgt).unwrap().0) / (2.0 * h);
            let ana = grad[i];
            let err = (ana - num).abs();
            let ok = err <= 1e-3 * ana.abs().max(num.abs()) || err <= 1e-6;
            let name = &m.layout().iter().find(|t| t.offset <= i && i < t.offset + t.len()).unwrap().name;
            assert!(ok, "param {i} ({name}): analytic {ana} numeric {num}");
            worst = worst.max(err);
        }
        assert!(worst.is_finite());
    }

    #[test]
    fn unused_positions_get_no_gradient() {
        let m = Transformer::<f64>::init(tiny(), 2).unwrap();
        let (_, grad) = m.backward(&[1, 4, 2], &[1, 5, 2]).unwrap();
        let d = 16;
        let ep = m.idx.enc_pos;
        assert!(grad[ep + 3 * d..ep + 12 * d].iter().all(|&g| g == 0.0));
        assert!(grad[ep..ep + 3 * d].iter().any(|&g| g != 0.0));
        let dp = m.idx.dec_pos;
        assert!(grad[dp + 2 * d..dp + 12 * d].iter().all(|&g| g == 0.0));
    }
}
