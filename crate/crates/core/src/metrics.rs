//! Edit distance and similarity, Pearson correlation of code features
//! against IO success, and length-bucketed accuracy.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::{normalize, pretokenize};
use crate::toyisa::{IsaId, OptLevel};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("reference text is empty after normalization")]
    EmptyReference,
    #[error("zero variance: correlation undefined")]
    DegenerateVariance,
    #[error("need two equally long samples of at least two points ({0} vs {1})")]
    BadSamples(usize, usize),
}

/// Levenshtein distance with unit costs, bottom-up over two rows.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j]
            } else {
                1 + prev[j].min(prev[j + 1]).min(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Char,
    /// Pre-tokenizer fragments.
    Token,
}

/// `max(0, 1 - distance / |reference|)` over normalized characters.
pub fn edit_similarity(hypothesis: &str, reference: &str) -> Result<f64, MetricsError> {
    edit_similarity_with(hypothesis, reference, Granularity::Char)
}

pub fn edit_similarity_with(hypothesis: &str, reference: &str, g: Granularity) -> Result<f64, MetricsError> {
    let units = |s: &str| -> Vec<String> {
        match g {
            Granularity::Char => normalize(s).chars().map(String::from).collect(),
            Granularity::Token => pretokenize(s).unwrap_or_else(|_| normalize(s).chars().map(String::from).collect()),
        }
    };
    let (h, r) = (units(hypothesis), units(reference));
    if r.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let d = edit_distance(&h, &r);
    Ok((1.0 - d as f64 / r.len() as f64).max(0.0))
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(MetricsError::BadSamples(xs.len(), ys.len()));
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::DegenerateVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Outcome and features of one decompiled test function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub isa: IsaId,
    pub opt: OptLevel,
    pub compiles: bool,
    pub io_pass: bool,
    pub edit_similarity: f64,
    pub asm_length: usize,
    pub c_length: usize,
    pub num_func_args: usize,
    pub num_pointers: usize,
}

pub const FEATURES: [&str; 6] = ["compiles", "edit_similarity", "asm_length", "c_length", "num_func_args", "num_pointers"];

pub const RECORD_COLUMNS: [&str; 10] = [
    "id",
    "isa",
    "opt",
    "compiles",
    "io_pass",
    "edit_similarity",
    "asm_length",
    "c_length",
    "num_func_args",
    "num_pointers",
];

impl EvalRecord {
    pub fn feature(&self, name: &str) -> f64 {
        match name {
            "compiles" => self.compiles as u8 as f64,
            "edit_similarity" => self.edit_similarity,
            "asm_length" => self.asm_length as f64,
            "c_length" => self.c_length as f64,
            "num_func_args" => self.num_func_args as f64,
            "num_pointers" => self.num_pointers as f64,
            _ => panic!("unknown feature `{name}`"),
        }
    }

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{},{},{},{}",
            self.id,
            self.isa,
            self.opt,
            self.compiles as u8,
            self.io_pass as u8,
            self.edit_similarity,
            self.asm_length,
            self.c_length,
            self.num_func_args,
            self.num_pointers
        )
    }
}

/// One cell of the correlation table: `None` when the correlation is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    /// `isa/opt`, or `all` for the pooled records.
    pub stratum: String,
    pub feature: String,
    pub n: usize,
    pub r: Option<f64>,
}

fn correlate(stratum: String, recs: &[&EvalRecord], out: &mut Vec<CorrelationCell>) {
    let ys: Vec<f64> = recs.iter().map(|r| r.io_pass as u8 as f64).collect();
    for f in FEATURES {
        let xs: Vec<f64> = recs.iter().map(|r| r.feature(f)).collect();
        out.push(CorrelationCell { stratum: stratum.clone(), feature: f.to_string(), n: recs.len(), r: pearson(&xs, &ys).ok() });
    }
}

/// Pearson r of each feature against `io_pass`, per (isa, opt) stratum in
/// sorted order, followed by the pooled stratum.
pub fn correlation_table(records: &[EvalRecord]) -> Vec<CorrelationCell> {
    let mut strata: Vec<(IsaId, OptLevel)> = records.iter().map(|r| (r.isa, r.opt)).collect();
    strata.sort();
    strata.dedup();
    let mut out = Vec::new();
    for (isa, opt) in strata {
        let recs: Vec<&EvalRecord> = records.iter().filter(|r| r.isa == isa && r.opt == opt).collect();
        correlate(format!("{isa}/{opt}"), &recs, &mut out);
    }
    correlate("all".into(), &records.iter().collect::<Vec<_>>(), &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean io_pass; `None` for an empty bin.
    pub accuracy: Option<f64>,
}

/// Equal-width bins over the range of `key`; the last bin is closed.
pub fn bucket_accuracy(records: &[EvalRecord], n_bins: usize, key: impl Fn(&EvalRecord) -> f64) -> Vec<Bucket> {
    let n_bins = n_bins.max(1);
    let keys: Vec<f64> = records.iter().map(&key).collect();
    let lo = keys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = keys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if records.is_empty() {
        return Vec::new();
    }
    let width = (hi - lo) / n_bins as f64;
    let mut count = vec![0usize; n_bins];
    let mut pass = vec![0usize; n_bins];
    for (r, k) in records.iter().zip(&keys) {
        let b = if width > 0.0 { (((k - lo) / width) as usize).min(n_bins - 1) } else { 0 };
        count[b] += 1;
        pass[b] += r.io_pass as usize;
    }
    (0..n_bins)
        .map(|b| Bucket {
            lo: lo + width * b as f64,
            hi: lo + width * (b + 1) as f64,
            count: count[b],
            accuracy: (count[b] > 0).then(|| pass[b] as f64 / count[b] as f64),
        })
        .collect()
}

pub fn write_records_csv(w: &mut impl Write, records: &[EvalRecord]) -> io::Result<()> {
    writeln!(w, "{}", RECORD_COLUMNS.join(","))?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn write_correlation_csv(w: &mut impl Write, cells: &[CorrelationCell]) -> io::Result<()> {
    writeln!(w, "stratum,feature,n,r")?;
    for c in cells {
        let r = c.r.map(|r| format!("{r:.6}")).unwrap_or_default();
        writeln!(w, "{},{},{},{}", c.stratum, c.feature, c.n, r)?;
    }
    Ok(())
}

pub fn write_buckets_csv(w: &mut impl Write, stratum: &str, buckets: &[Bucket]) -> io::Result<()> {
    for (i, b) in buckets.iter().enumerate() {
        let acc = b.accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
        writeln!(w, "{stratum},{i},{:.1},{:.1},{},{acc}", b.lo, b.hi, b.count)?;
    }
    Ok(())
}

pub const BUCKET_HEADER: &str = "stratum,bin,lo,hi,count,accuracy";
