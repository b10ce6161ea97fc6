//! Subword tokenization: pre-tokenization rules plus a unigram language
//! model vocabulary trained by EM with pruning.
//!
//! Id layout: PAD, BOS, EOS, UNK, then one fallback id per ASCII byte, then
//! the metaspace, then the learned pieces.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
const BYTE_BASE: u32 = 4;
pub const METASPACE_ID: u32 = BYTE_BASE + 128;
pub const FIRST_PIECE: u32 = METASPACE_ID + 1;

/// Stands in for a space inside a string literal.
pub const METASPACE: char = '\u{2581}';

pub const MAX_PIECE_CHARS: usize = 8;
pub const PRUNE_FRACTION: f64 = 0.2;
pub const DEFAULT_VOCAB_SIZE: usize = 1000;
pub const DEFAULT_SEED_MULTIPLIER: usize = 10;

const VOCAB_HEADER: &str = "#declab-vocab v1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TokenizerError {
    #[error("unterminated string literal starting at byte {0}")]
    UnterminatedString(usize),
    #[error("corpus alphabet has {alphabet} symbols, more than the target size {target}")]
    CorpusTooSmall { alphabet: usize, target: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("token id {0} is out of range")]
    BadTokenId(u32),
    #[error("vocabulary file line {line}: {msg}")]
    Format { line: usize, msg: String },
}

#[derive(Clone, Copy, PartialEq)]
enum Class {
    Word,
    Digit,
    Space,
    Punct,
}

fn class(c: char) -> Class {
    if c.is_ascii_alphabetic() || c == '_' {
        Class::Word
    } else if c.is_ascii_digit() {
        Class::Digit
    } else if c.is_whitespace() {
        Class::Space
    } else {
        Class::Punct
    }
}

fn split(text: &str, strict: bool) -> Result<Vec<String>, TokenizerError> {
    let mut out: Vec<String> = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut Vec<String>| {
        if !word.is_empty() {
            out.push(std::mem::take(word));
        }
    };
    let mut chars = text.char_indices().peekable();
    let mut pending_space = false;
    while let Some((at, c)) = chars.next() {
        let k = class(c);
        if k == Class::Space {
            flush(&mut word, &mut out);
            pending_space = true;
            continue;
        }
        if pending_space {
            if !out.is_empty() {
                out.push(" ".into());
            }
            pending_space = false;
        }
        match k {
            Class::Word => word.push(c),
            Class::Digit => {
                flush(&mut word, &mut out);
                out.push(c.to_string());
            }
            _ if c == '"' => {
                flush(&mut word, &mut out);
                out.push("\"".into());
                let mut closed = false;
                while let Some((_, d)) = chars.next() {
                    if d == '"' {
                        closed = true;
                        break;
                    }
                    let kd = class(d);
                    if kd == Class::Word {
                        word.push(d);
                        continue;
                    }
                    flush(&mut word, &mut out);
                    if d == ' ' {
                        out.push(METASPACE.to_string());
                    } else {
                        out.push(d.to_string());
                        if d == '\\' {
                            // the escaped character is taken verbatim
                            if let Some((_, e)) = chars.next() {
                                if class(e) == Class::Word {
                                    word.push(e);
                                } else {
                                    out.push(e.to_string());
                                }
                            }
                        }
                    }
                }
                flush(&mut word, &mut out);
                if closed {
                    out.push("\"".into());
                } else if strict {
                    return Err(TokenizerError::UnterminatedString(at));
                }
            }
            _ => {
                flush(&mut word, &mut out);
                out.push(c.to_string());
            }
        }
    }
    flush(&mut word, &mut out);
    Ok(out)
}

/// Splits text into fragments that no piece may cross: identifier runs,
/// single digits, single punctuation characters, a single space for each
/// whitespace run outside string literals, and a metaspace for each space
/// inside one. Leading and trailing whitespace is dropped.
pub fn pretokenize(text: &str) -> Result<Vec<String>, TokenizerError> {
    split(text, true)
}

/// The normal form that decoding reproduces: whitespace outside string
/// literals collapsed to single spaces and trimmed.
pub fn normalize(text: &str) -> String {
    split(text, false).unwrap_or_default().concat().replace(METASPACE, " ")
}

/// A trained unigram vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    pieces: Vec<(String, f64)>,
    index: HashMap<String, u32>,
    /// Log-probability charged for a byte-fallback token during segmentation.
    fallback_lp: f64,
}

impl Vocab {
    fn from_pieces(mut pieces: Vec<(String, f64)>) -> Vocab {
        pieces.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let index = pieces.iter().enumerate().map(|(i, (p, _))| (p.clone(), FIRST_PIECE + i as u32)).collect();
        let min = pieces.iter().map(|p| p.1).fold(0.0f64, f64::min);
        Vocab { pieces, index, fallback_lp: min - 10.0 }
    }

    /// Number of learned pieces; the bound checked against the configured size.
    pub fn size(&self) -> usize {
        self.pieces.len()
    }

    /// Number of distinct ids, specials included: the model's vocabulary size.
    pub fn n_ids(&self) -> usize {
        FIRST_PIECE as usize + self.pieces.len()
    }

    pub fn pieces(&self) -> &[(String, f64)] {
        &self.pieces
    }

    pub fn id_of(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    /// Surface text of an id; specials other than byte fallbacks render empty.
    pub fn piece_text(&self, id: u32) -> Result<String, TokenizerError> {
        Ok(match id {
            PAD | BOS | EOS => String::new(),
            UNK => "\u{fffd}".into(),
            i if i < METASPACE_ID => ((i - BYTE_BASE) as u8 as char).to_string(),
            METASPACE_ID => " ".into(),
            i => match self.pieces.get((i - FIRST_PIECE) as usize) {
                Some((p, _)) => p.clone(),
                None => return Err(TokenizerError::BadTokenId(id)),
            },
        })
    }

    fn char_id(&self, c: char) -> (u32, f64) {
        let s = c.to_string();
        if let Some(&id) = self.index.get(&s) {
            return (id, self.pieces[(id - FIRST_PIECE) as usize].1);
        }
        if c.is_ascii() {
            (BYTE_BASE + c as u32, self.fallback_lp)
        } else {
            (UNK, self.fallback_lp)
        }
    }

    /// Maximum-likelihood segmentation of one fragment. Ties prefer fewer
    /// pieces, then the lexicographically smallest first piece.
    fn segment(&self, frag: &str, out: &mut Vec<u32>) {
        if frag == METASPACE.to_string() {
            out.push(METASPACE_ID);
            return;
        }
        let chars: Vec<char> = frag.chars().collect();
        let n = chars.len();
        // best[i]: (score, pieces, first piece id, first piece text, end of first piece)
        let mut best: Vec<Option<(f64, usize, u32, String, usize)>> = vec![None; n + 1];
        best[n] = Some((0.0, 0, 0, String::new(), n));
        for i in (0..n).rev() {
            let mut cand: Option<(f64, usize, u32, String, usize)> = None;
            for j in i + 1..=n.min(i + MAX_PIECE_CHARS) {
                let text: String = chars[i..j].iter().collect();
                let (id, lp) = if j == i + 1 {
                    self.char_id(chars[i])
                } else {
                    match self.index.get(&text) {
                        Some(&id) => (id, self.pieces[(id - FIRST_PIECE) as usize].1),
                        None => continue,
                    }
                };
                let rest = best[j].as_ref().expect("suffix solved");
                let c = (lp + rest.0, rest.1 + 1, id, text, j);
                let better = match &cand {
                    None => true,
                    Some(b) => c.0 > b.0 || (c.0 == b.0 && (c.1 < b.1 || (c.1 == b.1 && c.3 < b.3))),
                };
                if better {
                    cand = Some(c);
                }
            }
            best[i] = cand;
        }
        let mut i = 0;
        while i < n {
            let b = best[i].as_ref().expect("segmentation exists");
            out.push(b.2);
            i = b.4;
        }
    }

    /// Encodes text without BOS/EOS. Never fails: characters outside the
    /// vocabulary fall back to byte ids.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for f in split(text, false).unwrap_or_default() {
            self.segment(&f, &mut out);
        }
        out
    }

    /// BOS + encode + EOS, or `None` when longer than `max_len`.
    pub fn encode_for_model(&self, text: &str, max_len: usize) -> Option<Vec<u32>> {
        let mut ids = vec![BOS];
        ids.extend(self.encode(text));
        ids.push(EOS);
        (ids.len() <= max_len).then_some(ids)
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        for &id in ids {
            out.push_str(&self.piece_text(id)?);
        }
        Ok(out)
    }

    /// Header line, then one `piece<TAB>logprob` line per piece.
    pub fn to_text(&self) -> String {
        let mut out = format!("{VOCAB_HEADER} size={}\n", self.pieces.len());
        for (p, lp) in &self.pieces {
            out.push_str(&escape(p));
            out.push('\t');
            out.push_str(&format!("{lp:?}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Vocab, TokenizerError> {
        let fmt = |line: usize, msg: &str| TokenizerError::Format { line, msg: msg.to_string() };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| fmt(1, "missing header"))?;
        let size: usize = header
            .strip_prefix(VOCAB_HEADER)
            .and_then(|r| r.trim().strip_prefix("size="))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| fmt(1, "bad header"))?;
        let mut pieces = Vec::new();
        for (i, l) in lines.enumerate() {
            let (p, lp) = l.rsplit_once('\t').ok_or_else(|| fmt(i + 2, "expected piece<TAB>logprob"))?;
            let lp: f64 = lp.parse().map_err(|_| fmt(i + 2, "bad logprob"))?;
            if !lp.is_finite() || lp >= 0.0 {
                return Err(fmt(i + 2, "logprob must be finite and negative"));
            }
            pieces.push((unescape(p).ok_or_else(|| fmt(i + 2, "bad escape"))?, lp));
        }
        if pieces.len() != size {
            return Err(fmt(1, "size does not match piece count"));
        }
        Ok(Vocab::from_pieces(pieces))
    }
}

fn escape(p: &str) -> String {
    p.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

fn unescape(p: &str) -> Option<String> {
    let mut out = String::new();
    let mut cs = p.chars();
    while let Some(c) = cs.next() {
        if c == '\\' {
            out.push(match cs.next()? {
                '\\' => '\\',
                't' => '\t',
                'n' => '\n',
                _ => return None,
            });
        } else {
            out.push(c);
        }
    }
    Some(out)
}

// ---------------------------------------------------------------- training

/// Viterbi log-likelihood and piece sequence of `frag` under `lps`, optionally
/// forbidding one piece.
fn viterbi<'a>(frag: &[char], lps: &'a HashMap<String, f64>, skip: Option<&str>) -> (f64, Vec<String>) {
    let n = frag.len();
    let mut best: Vec<(f64, usize)> = vec![(f64::NEG_INFINITY, 0); n + 1];
    best[0] = (0.0, 0);
    for j in 1..=n {
        for i in j.saturating_sub(MAX_PIECE_CHARS)..j {
            if best[i].0 == f64::NEG_INFINITY {
                continue;
            }
            let s: String = frag[i..j].iter().collect();
            if Some(s.as_str()) == skip {
                continue;
            }
            if let Some(lp) = lps.get(&s) {
                let v = best[i].0 + lp;
                if v > best[j].0 {
                    best[j] = (v, i);
                }
            }
        }
    }
    let mut pieces = Vec::new();
    let mut j = n;
    while j > 0 && best[j].0 > f64::NEG_INFINITY {
        let i = best[j].1;
        pieces.push(frag[i..j].iter().collect());
        j = i;
    }
    pieces.reverse();
    (best[n].0, pieces)
}

fn em_step(frags: &[(Vec<char>, u64)], lps: &mut HashMap<String, f64>) -> HashMap<String, u64> {
    let mut counts: HashMap<String, u64> = lps.keys().map(|k| (k.clone(), 0)).collect();
    for (f, c) in frags {
        for p in viterbi(f, lps, None).1 {
            *counts.get_mut(&p).expect("piece in vocab") += c;
        }
    }
    let total: u64 = counts.values().sum();
    let denom = (total + counts.len() as u64) as f64;
    for (p, lp) in lps.iter_mut() {
        *lp = ((counts[p] + 1) as f64 / denom).ln();
    }
    counts
}

/// Trains a unigram vocabulary of at most `target_size` pieces.
pub fn train_unigram(corpus: &[String], target_size: usize, seed_multiplier: usize) -> Result<Vocab, TokenizerError> {
    let meta = METASPACE.to_string();
    let mut frag_counts: BTreeMap<String, u64> = BTreeMap::new();
    for line in corpus {
        for f in split(line, false).unwrap_or_default() {
            if f != meta {
                *frag_counts.entry(f).or_default() += 1;
            }
        }
    }
    if frag_counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let frags: Vec<(Vec<char>, u64)> = frag_counts.iter().map(|(f, c)| (f.chars().collect(), *c)).collect();

    let mut char_freq: BTreeMap<String, u64> = BTreeMap::new();
    let mut sub_freq: BTreeMap<String, u64> = BTreeMap::new();
    for (f, c) in &frags {
        for (i, ch) in f.iter().enumerate() {
            *char_freq.entry(ch.to_string()).or_default() += c;
            for j in i + 2..=f.len().min(i + MAX_PIECE_CHARS) {
                *sub_freq.entry(f[i..j].iter().collect()).or_default() += c;
            }
        }
    }
    if char_freq.len() > target_size {
        return Err(TokenizerError::CorpusTooSmall { alphabet: char_freq.len(), target: target_size });
    }
    let mut seeds: Vec<(String, u64)> = sub_freq.into_iter().collect();
    seeds.sort_by(|a, b| {
        let (sa, sb) = (a.1 * a.0.chars().count() as u64, b.1 * b.0.chars().count() as u64);
        sb.cmp(&sa).then_with(|| a.0.cmp(&b.0))
    });
    seeds.truncate((seed_multiplier * target_size).saturating_sub(char_freq.len()));

    let total: u64 = char_freq.values().sum::<u64>() + seeds.iter().map(|s| s.1).sum::<u64>();
    let mut lps: HashMap<String, f64> = char_freq
        .iter()
        .map(|(p, c)| (p.clone(), *c))
        .chain(seeds)
        .map(|(p, c)| (p, (c as f64 / total as f64).ln()))
        .collect();

    loop {
        em_step(&frags, &mut lps);
        let counts = em_step(&frags, &mut lps);
        let size = lps.len();
        if size <= target_size {
            break;
        }
        // loss of dropping a piece: its uses re-segmented without it
        let mut impact: Vec<(f64, String)> = lps
            .iter()
            .filter(|(p, _)| p.chars().count() > 1)
            .map(|(p, lp)| {
                let c = counts[p];
                if c == 0 {
                    return (0.0, p.clone());
                }
                let chars: Vec<char> = p.chars().collect();
                let alt = viterbi(&chars, &lps, Some(p)).0;
                (c as f64 * (lp - alt), p.clone())
            })
            .collect();
        impact.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let quota = ((impact.len() as f64 * PRUNE_FRACTION).ceil() as usize).max(1);
        for (_, p) in impact.into_iter().take(quota.min(size - target_size)) {
            lps.remove(&p);
        }
    }
    em_step(&frags, &mut lps);
    Ok(Vocab::from_pieces(lps.into_iter().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn pretokenize_rules() {
        assert_eq!(pretokenize("512").unwrap(), strs(&["5", "1", "2"]));
        assert_eq!(pretokenize("a  +b").unwrap(), strs(&["a", " ", "+", "b"]));
        assert_eq!(pretokenize("\"a b\"").unwrap(), strs(&["\"", "a", "\u{2581}", "b", "\""]));
        assert_eq!(pretokenize("x2").unwrap(), strs(&["x", "2"]));
        assert_eq!(pretokenize("  int\n\tf ").unwrap(), strs(&["int", " ", "f"]));
        assert!(matches!(pretokenize("\"abc"), Err(TokenizerError::UnterminatedString(0))));
    }

    #[test]
    fn normal_form() {
        assert_eq!(normalize("int  f(\n) { return \"a  b\"; }\n"), "int f( ) { return \"a  b\"; }");
        assert_eq!(normalize(&normalize("x  =  \"q\\\" \"")), normalize("x  =  \"q\\\" \""));
    }

    #[test]
    fn one_letter_corpus() {
        let v = train_unigram(&strs(&["aaaa", "aaaa"]), 4, 10).unwrap();
        assert!(v.size() <= 4);
        assert!(v.id_of("a").is_some());
        assert!(v.pieces().iter().any(|(p, _)| p.len() > 1 && p.chars().all(|c| c == 'a')));
        assert!(v.encode("aaaa").len() <= 2);
        assert!(v.pieces().iter().all(|(_, lp)| lp.is_finite() && *lp < 0.0));
    }

    #[test]
    fn digits_split_and_round_trip() {
        let corpus = strs(&["int f(int a) { return a + 512; }", "ldi r0, #5", "lds r1, \"hi  there\""]);
        let v = train_unigram(&corpus, 60, 10).unwrap();
        let ids = v.encode("512");
        assert_eq!(ids.len(), 3);
        assert_eq!(v.decode(&ids).unwrap(), "512");
        for line in &corpus {
            let ids = v.encode(line);
            assert!(!ids.contains(&UNK));
            assert_eq!(v.decode(&ids).unwrap(), normalize(line));
        }
        assert!(v.pieces().iter().all(|(p, _)| !p.as_bytes().windows(2).any(|w| w[0].is_ascii_digit() && w[1].is_ascii_digit())));
        // unseen ASCII falls back to byte ids
        assert_eq!(v.decode(&v.encode("@~")).unwrap(), "@~");
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = train_unigram(&strs(&["a\\b\tc", "abab abab"]), 20, 10).unwrap();
        let back = Vocab::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert!(Vocab::from_text("nonsense").is_err());
    }

    #[test]
    fn decode_edge_cases() {
        let v = train_unigram(&strs(&["ab"]), 10, 10).unwrap();
        assert_eq!(v.decode(&[]).unwrap(), "");
        assert_eq!(v.decode(&[BOS, v.id_of("a").unwrap(), EOS]).unwrap(), "a");
        assert!(matches!(v.decode(&[9999]), Err(TokenizerError::BadTokenId(9999))));
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = strs(&["for (i = 0; i < n; i = i + 1) { s = s + p[i]; }", "while (x) { x = x - 1; }"]);
        assert_eq!(train_unigram(&corpus, 40, 10).unwrap(), train_unigram(&corpus, 40, 10).unwrap());
        assert!(matches!(train_unigram(&corpus, 3, 10), Err(TokenizerError::CorpusTooSmall { .. })));
    }
}
