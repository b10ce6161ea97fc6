//! Incremental decoding with cached keys/values, greedy and beam search.

use crate::model::{ffn, layer_norm, Attn, Lin, Transformer};
use crate::tensor::{gemm, Mat, MatMut};
use crate::{BeamConfig, ModelError, Scalar, BOS, EOS, PAD};

/// Source-side state computed once per input: encoder output and the
/// cross-attention keys/values of every decoder layer.
pub struct Encoded<S> {
    cross_kv: Vec<(Vec<S>, Vec<S>)>,
}

/// Decoder prefix state: self-attention keys/values per layer.
#[derive(Clone)]
pub struct DecodeState<S> {
    pos: usize,
    kv: Vec<(Vec<S>, Vec<S>)>,
}

fn project<S: Scalar>(p: &[S], l: Lin, x: &[S]) -> Vec<S> {
    let n = x.len() / l.din;
    let mut y = Vec::with_capacity(n * l.dout);
    for _ in 0..n {
        y.extend_from_slice(&p[l.b..l.b + l.dout]);
    }
    gemm(n, l.din, l.dout, S::one(), Mat::rm(x, l.din), Mat { d: p, off: l.w, rs: l.dout, cs: 1 }, S::one(), MatMut::rm(&mut y, l.dout));
    y
}

/// One query row against `n` cached key/value rows.
fn attend_one<S: Scalar>(p: &[S], a: Attn, q: &[S], k: &[S], v: &[S], heads: usize) -> Vec<S> {
    let d = q.len();
    let (n, dk) = (k.len() / d, d / heads);
    let scale = S::one() / S::of(dk as f64).sqrt();
    let mut ctx = vec![S::zero(); d];
    let mut s = vec![S::zero(); n];
    for h in 0..heads {
        let r = h * dk..(h + 1) * dk;
        for (j, sj) in s.iter_mut().enumerate() {
            *sj = q[r.clone()].iter().zip(&k[j * d + h * dk..]).map(|(&a, &b)| a * b).sum::<S>() * scale;
        }
        crate::model::softmax_prefix(&mut s, n);
        for (j, &pj) in s.iter().enumerate() {
            for c in r.clone() {
                ctx[c] += pj * v[j * d + c];
            }
        }
    }
    project(p, a.o, &ctx)
}

fn add_into<S: Scalar>(acc: &mut [S], x: &[S]) {
    for (a, &b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

impl<S: Scalar> Transformer<S> {
    pub fn encode(&self, src: &[u32]) -> Result<Encoded<S>, ModelError> {
        let enc_out = self.encoder_output(src)?;
        let p = &self.params[..];
        let cross_kv = self.idx.dec.iter().map(|l| (project(p, l.cross.k, &enc_out), project(p, l.cross.v, &enc_out))).collect();
        Ok(Encoded { cross_kv })
    }

    pub fn start_state(&self) -> DecodeState<S> {
        DecodeState { pos: 0, kv: vec![(Vec::new(), Vec::new()); self.idx.dec.len()] }
    }

    /// Feeds `token` at the next position and returns logits for the one after.
    pub fn step(&self, enc: &Encoded<S>, st: &mut DecodeState<S>, token: u32) -> Result<Vec<S>, ModelError> {
        if st.pos >= self.cfg.max_positions {
            return Err(ModelError::SequenceTooLong { len: st.pos + 1, max: self.cfg.max_positions });
        }
        if token as usize >= self.cfg.vocab_size {
            return Err(ModelError::BadTokenId { id: token, vocab: self.cfg.vocab_size });
        }
        let (p, d, h) = (&self.params[..], self.cfg.d_model, self.cfg.heads);
        let mut x = self.embed_one(self.idx.dec_pos, token, st.pos);
        for ((l, (sk, sv)), (ck, cv)) in self.idx.dec.iter().zip(st.kv.iter_mut()).zip(&enc.cross_kv) {
            let (a, _) = layer_norm(p, l.ln1, &x, d);
            let q = project(p, l.self_attn.q, &a);
            sk.extend(project(p, l.self_attn.k, &a));
            sv.extend(project(p, l.self_attn.v, &a));
            add_into(&mut x, &attend_one(p, l.self_attn, &q, sk, sv, h));
            let (b, _) = layer_norm(p, l.ln2, &x, d);
            let q = project(p, l.cross.q, &b);
            add_into(&mut x, &attend_one(p, l.cross, &q, ck, cv, h));
            let (c, _) = layer_norm(p, l.ln3, &x, d);
            add_into(&mut x, &ffn(p, l.ffn, &c).0);
        }
        st.pos += 1;
        let (out, _) = layer_norm(p, self.idx.dec_ln, &x, d);
        Ok(self.logits_of(&out))
    }
}

/// Anything that can score next tokens given a prefix.
pub trait StepModel {
    type State: Clone;
    fn start(&self) -> Self::State;
    /// Feeds `token`; returns log-probabilities of the next token.
    fn step(&self, state: &mut Self::State, token: u32) -> Vec<f64>;
    /// Longest output the model can produce.
    fn max_len(&self) -> usize;
}

struct Bound<'a, S> {
    model: &'a Transformer<S>,
    enc: Encoded<S>,
}

impl<S: Scalar> StepModel for Bound<'_, S> {
    type State = DecodeState<S>;

    fn start(&self) -> DecodeState<S> {
        self.model.start_state()
    }

    fn step(&self, st: &mut DecodeState<S>, token: u32) -> Vec<f64> {
        let logits = self.model.step(&self.enc, st, token).expect("decode length is bounded by max_len");
        let l: Vec<f64> = logits.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
        let mx = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + l.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        l.into_iter().map(|v| v - lse).collect()
    }

    fn max_len(&self) -> usize {
        self.model.cfg.max_positions
    }
}

/// Beam search over the transformer; output excludes BOS and EOS.
pub fn beam_search<S: Scalar>(model: &Transformer<S>, src: &[u32], cfg: &BeamConfig) -> Result<Vec<u32>, ModelError> {
    let enc = model.encode(src)?;
    Ok(beam_search_with(&Bound { model, enc }, cfg))
}

struct Hyp<St> {
    toks: Vec<u32>,
    score: f64,
    state: St,
    next: Vec<f64>,
}

/// Beam search with width `cfg.k`. Hypotheses that emit EOS leave the beam,
/// which shrinks accordingly; search stops once `k` have finished, once no
/// live hypothesis can beat the best finished one, or at the length limit.
/// Ties are broken by lower token id, then by lower beam index.
pub fn beam_search_with<M: StepModel>(m: &M, cfg: &BeamConfig) -> Vec<u32> {
    let max_len = cfg.max_decode_len.min(m.max_len());
    let k = cfg.k.max(1);
    let mut state = m.start();
    let next = m.step(&mut state, BOS);
    let mut live = vec![Hyp { toks: Vec::new(), score: 0.0, state, next }];
    let mut finished: Vec<(Vec<u32>, f64)> = Vec::new();
    for len in 1..=max_len {
        let width = k - finished.len();
        let mut cands: Vec<(f64, u32, usize)> = Vec::new();
        for (bi, h) in live.iter().enumerate() {
            for (t, &lp) in h.next.iter().enumerate() {
                let t = t as u32;
                if t == PAD || t == BOS || !lp.is_finite() {
                    continue;
                }
                cands.push((h.score + lp, t, bi));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(width);
        let mut next_live = Vec::new();
        for (score, t, bi) in cands {
            let parent = &live[bi];
            let mut toks = parent.toks.clone();
            if t == EOS {
                finished.push((toks, score));
                continue;
            }
            toks.push(t);
            let mut state = parent.state.clone();
            let next = if len < max_len { m.step(&mut state, t) } else { Vec::new() };
            next_live.push(Hyp { toks, score, state, next });
        }
        live = next_live;
        if finished.len() >= k || live.is_empty() {
            break;
        }
        let best_fin = finished.iter().map(|f| f.1).fold(f64::NEG_INFINITY, f64::max);
        let best_live = live.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        if best_fin >= best_live {
            break;
        }
    }
    let best = |xs: &mut dyn Iterator<Item = (Vec<u32>, f64)>| {
        xs.fold(None::<(Vec<u32>, f64)>, |acc, x| match acc {
            Some(a) if a.1 >= x.1 => Some(a),
            _ => Some(x),
        })
    };
    if let Some((toks, _)) = best(&mut finished.into_iter()) {
        return toks;
    }
    best(&mut live.into_iter().map(|h| (h.toks, h.score))).map(|h| h.0).unwrap_or_default()
}

/// Argmax decoding (lowest id on ties); output excludes BOS and EOS.
pub fn greedy<M: StepModel>(m: &M, max_decode_len: usize) -> Vec<u32> {
    let mut state = m.start();
    let mut lp = m.step(&mut state, BOS);
    let mut out = Vec::new();
    let max_len = max_decode_len.min(m.max_len());
    while out.len() < max_len {
        let mut best: Option<(u32, f64)> = None;
        for (t, &v) in lp.iter().enumerate() {
            let t = t as u32;
            if t == PAD || t == BOS || !v.is_finite() {
                continue;
            }
            if best.is_none_or(|b| v > b.1) {
                best = Some((t, v));
            }
        }
        match best {
            None => break,
            Some((t, _)) if t == EOS => break,
            Some((t, _)) => {
                out.push(t);
                if out.len() < max_len {
                    lp = m.step(&mut state, t);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Model64, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Next-token distribution depends only on the prefix, via a lookup.
    struct Table {
        v: usize,
        f: fn(&[u32]) -> Vec<(u32, f64)>,
    }

    impl StepModel for Table {
        type State = Vec<u32>;
        fn start(&self) -> Vec<u32> {
            Vec::new()
        }
        fn step(&self, st: &mut Vec<u32>, t: u32) -> Vec<f64> {
            if t != BOS {
                st.push(t);
            }
            let mut out = vec![f64::NEG_INFINITY; self.v];
            for (tok, p) in (self.f)(st) {
                out[tok as usize] = p.ln();
            }
            out
        }
        fn max_len(&self) -> usize {
            10
        }
    }

    const A: u32 = 3;
    const B: u32 = 4;

    fn trap(prefix: &[u32]) -> Vec<(u32, f64)> {
        match prefix {
            [] => vec![(A, 0.6), (B, 0.4)],
            // ten-way tie; EOS has the lowest id
            [A] => (2..12).map(|t| (t, 0.1)).collect(),
            [B] => vec![(EOS, 0.9), (A, 0.1)],
            _ => vec![(EOS, 1.0)],
        }
    }

    #[test]
    fn beam_finds_the_better_sequence() {
        let m = Table { v: 12, f: trap };
        // greedy: A then EOS, probability 0.06
        assert_eq!(greedy(&m, 10), vec![A]);
        assert_eq!(beam_search_with(&m, &BeamConfig { k: 1, max_decode_len: 10 }), vec![A]);
        // beam: B then EOS, probability 0.36
        assert_eq!(beam_search_with(&m, &BeamConfig { k: 2, max_decode_len: 10 }), vec![B]);
    }

    #[test]
    fn length_limit_returns_best_partial() {
        let m = Table { v: 6, f: |_| vec![(A, 0.7), (B, 0.2), (EOS, 0.1)] };
        assert_eq!(beam_search_with(&m, &BeamConfig { k: 1, max_decode_len: 3 }), vec![A, A, A]);
        assert_eq!(greedy(&m, 3), vec![A, A, A]);
    }

    fn small() -> ModelConfig {
        ModelConfig {
            enc_layers: 2,
            dec_layers: 2,
            d_model: 16,
            heads: 4,
            ffn_dim: 24,
            max_positions: 16,
            vocab_size: 9,
            share_embeddings: true,
        }
    }

    #[test]
    fn incremental_steps_match_full_forward() {
        let m = Model64::init(small(), 4).unwrap();
        let src = [1u32, 5, 6, 7, 2];
        let tgt = [1u32, 4, 8, 3, 3, 6];
        let full = m.forward(&src, &tgt).unwrap();
        let enc = m.encode(&src).unwrap();
        let mut st = m.start_state();
        for (i, &t) in tgt.iter().enumerate() {
            let row = m.step(&enc, &mut st, t).unwrap();
            for (a, b) in row.iter().zip(&full[i * 9..(i + 1) * 9]) {
                assert!((a - b).abs() < 1e-10, "position {i}");
            }
        }
    }

    #[test]
    fn width_one_is_greedy_on_random_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..5 {
            let m = Model64::init(small(), seed).unwrap();
            let src: Vec<u32> = (0..6).map(|_| rng.gen_range(3..9)).collect();
            let bound = Bound { model: &m, enc: m.encode(&src).unwrap() };
            let g = greedy(&bound, 12);
            assert_eq!(beam_search_with(&bound, &BeamConfig { k: 1, max_decode_len: 12 }), g);
            let b = beam_search(&m, &src, &BeamConfig { k: 4, max_decode_len: 12 }).unwrap();
            assert!(b.len() <= 12 && !b.contains(&EOS) && !b.contains(&BOS));
        }
    }

    #[test]
    fn decode_length_is_capped_by_positions() {
        let m = Model64::init(small(), 1).unwrap();
        let out = beam_search(&m, &[1, 2], &BeamConfig { k: 2, max_decode_len: 1000 }).unwrap();
        assert!(out.len() <= 16);
    }
}
