//! Checkpoint format: a text header (magic, `key=value` model config, one
//! `name rows cols` line per tensor, `data`) followed by the parameters as
//! little-endian f32 in layout order.

use std::io::{BufRead, BufReader, Read, Write};

use crate::model::layout_of;
use crate::{ModelConfig, ModelError, Scalar, Transformer};

pub const CHECKPOINT_MAGIC: &str = "#declab-model v1";

pub fn save_checkpoint<S: Scalar, W: Write>(model: &Transformer<S>, mut w: W) -> Result<(), ModelError> {
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    w.write_all(model.cfg.to_kv().as_bytes())?;
    writeln!(w, "tensors={}", model.layout().len())?;
    for t in model.layout() {
        writeln!(w, "{} {} {}", t.name, t.rows, t.cols)?;
    }
    writeln!(w, "data")?;
    let mut buf = Vec::with_capacity(model.params.len() * 4);
    for v in &model.params {
        buf.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar, R: Read>(r: R) -> Result<Transformer<S>, ModelError> {
    let bad = |m: String| ModelError::Checkpoint(m);
    let mut r = BufReader::new(r);
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<R>| -> Result<String, ModelError> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(ModelError::Checkpoint("truncated header".into()));
        }
        Ok(line.trim_end_matches('\n').to_string())
    };
    if next_line(&mut r)? != CHECKPOINT_MAGIC {
        return Err(bad("missing magic line".into()));
    }
    let mut cfg = ModelConfig::default();
    let n_tensors = loop {
        let l = next_line(&mut r)?;
        let (k, v) = l.split_once('=').ok_or_else(|| bad(format!("expected key=value, got `{l}`")))?;
        if k == "tensors" {
            break v.parse::<usize>().map_err(|_| bad(format!("bad tensor count `{v}`")))?;
        }
        cfg.set(k, v)?;
    };
    cfg.validate()?;
    let expected = layout_of(&cfg);
    if n_tensors != expected.len() {
        return Err(bad(format!("expected {} tensors, found {n_tensors}", expected.len())));
    }
    for t in &expected {
        let l = next_line(&mut r)?;
        let want = format!("{} {} {}", t.name, t.rows, t.cols);
        if l != want {
            return Err(bad(format!("tensor mismatch: expected `{want}`, found `{l}`")));
        }
    }
    if next_line(&mut r)? != "data" {
        return Err(bad("missing data marker".into()));
    }
    let n = expected.last().map_or(0, |t| t.offset + t.len());
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * 4 {
        return Err(bad(format!("expected {} data bytes, found {}", n * 4, bytes.len())));
    }
    let params = bytes.chunks_exact(4).map(|c| S::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)).collect();
    Transformer::from_params(cfg, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Model;

    fn cfg() -> ModelConfig {
        ModelConfig {
            enc_layers: 1,
            dec_layers: 2,
            d_model: 8,
            heads: 2,
            ffn_dim: 16,
            max_positions: 10,
            vocab_size: 7,
            share_embeddings: true,
        }
    }

    #[test]
    fn round_trip_is_exact_for_f32() {
        let m = Model::init(cfg(), 3).unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&m, &mut buf).unwrap();
        let back: Model = load_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.cfg, m.cfg);
        assert_eq!(back.params, m.params);
        assert_eq!(back.forward(&[1, 4, 2], &[1, 5]).unwrap(), m.forward(&[1, 4, 2], &[1, 5]).unwrap());
    }

    #[test]
    fn corrupted_checkpoints_are_rejected() {
        let m = Model::init(cfg(), 3).unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&m, &mut buf).unwrap();
        assert!(load_checkpoint::<f32, _>(&buf[..buf.len() - 1]).is_err());
        let at = buf.windows(5).position(|w| w == b"data\n").unwrap();
        let header = String::from_utf8(buf[..at].to_vec()).unwrap().replace("dec.1.ln1.g 1 8", "dec.1.ln1.g 1 9");
        let mut tampered = header.into_bytes();
        tampered.extend_from_slice(&buf[at..]);
        assert!(load_checkpoint::<f32, _>(&tampered[..]).is_err());
        assert!(load_checkpoint::<f32, _>(&b"nonsense\n"[..]).is_err());
        let mut other = Vec::new();
        save_checkpoint(&Model::init(ModelConfig { dec_layers: 1, ..cfg() }, 3).unwrap(), &mut other).unwrap();
        let mut spliced = other.clone();
        spliced.truncate(other.len() - 4);
        assert!(load_checkpoint::<f32, _>(&spliced[..]).is_err());
    }
}
