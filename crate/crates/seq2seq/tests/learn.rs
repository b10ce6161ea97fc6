//! Small end-to-end learning problems through the public API.

use declab_seq2seq::{
    beam_search, load_checkpoint, save_checkpoint, BeamConfig, Model, Model64, ModelConfig, TrainConfig, Trainer, BOS, EOS,
};

fn cfg() -> ModelConfig {
    ModelConfig {
        enc_layers: 1,
        dec_layers: 1,
        d_model: 32,
        heads: 4,
        ffn_dim: 64,
        max_positions: 16,
        vocab_size: 14,
        share_embeddings: true,
    }
}

/// Sequences over ids 3..14 mapped to their reversal.
fn reversal(n: usize) -> Vec<(Vec<u32>, Vec<u32>)> {
    (0..n as u32)
        .map(|i| {
            let len = 2 + (i % 4) as usize;
            let body: Vec<u32> = (0..len as u32).map(|j| 3 + (i * 7 + j * 5 + i / 3) % 11).collect();
            let mut src = vec![BOS];
            src.extend(&body);
            src.push(EOS);
            let mut tgt = vec![BOS];
            tgt.extend(body.iter().rev());
            tgt.push(EOS);
            (src, tgt)
        })
        .collect()
}

#[test]
fn learns_to_reverse() {
    let data = reversal(24);
    let tc = TrainConfig { batch_size: 8, learning_rate: 3e-3, warmup_steps: 30, max_steps: 600, ..TrainConfig::default() };
    let mut t = Trainer::new(Model::init(cfg(), 1).unwrap(), tc);
    let mut first = None;
    let last = t.run(&data, |_, l| {
        first.get_or_insert(l);
    })
    .unwrap();
    assert!(last < first.unwrap() / 10.0, "{first:?} -> {last}");
    let beam = BeamConfig { k: 3, max_decode_len: 12 };
    let exact = data.iter().filter(|(s, tg)| beam_search(&t.model, s, &beam).unwrap() == tg[1..tg.len() - 1]).count();
    assert!(exact >= 22, "{exact}/24");
}

#[test]
fn checkpoint_file_preserves_decoding() {
    let data = reversal(8);
    let tc = TrainConfig { batch_size: 4, learning_rate: 3e-3, warmup_steps: 5, max_steps: 40, ..TrainConfig::default() };
    let mut t = Trainer::new(Model::init(cfg(), 2).unwrap(), tc);
    t.run(&data, |_, _| {}).unwrap();
    let path = std::env::temp_dir().join(format!("declab-learn-{}.ckpt", std::process::id()));
    save_checkpoint(&t.model, std::fs::File::create(&path).unwrap()).unwrap();
    let back: Model = load_checkpoint(std::fs::File::open(&path).unwrap()).unwrap();
    std::fs::remove_file(&path).ok();
    assert_eq!(back.params, t.model.params);
    let beam = BeamConfig::default();
    for (s, _) in &data {
        assert_eq!(beam_search(&back, s, &beam).unwrap(), beam_search(&t.model, s, &beam).unwrap());
    }
}

#[test]
fn precisions_agree() {
    let m = Model64::init(cfg(), 4).unwrap();
    let lo: Model = m.cast();
    let (src, tgt) = &reversal(3)[2];
    let a = m.forward(src, &tgt[..tgt.len() - 1]).unwrap();
    let b = lo.forward(src, &tgt[..tgt.len() - 1]).unwrap();
    let worst = a.iter().zip(&b).map(|(x, y)| (x - *y as f64).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-4, "{worst}");
}
