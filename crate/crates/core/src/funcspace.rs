//! Functions as labellings of a fixed evaluation set, and frequency tables
//! over them.
//!
//! A trained network, a GP posterior sample, or an accepted rejection sample
//! all reduce to the same object: the bit string of predicted labels on the
//! test inputs, in stored order. Empirical probabilities come from counting
//! how often each bit string appears in a sample.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// A binary labelling of an ordered evaluation set. Bit `i` is the predicted
/// label of the `i`-th input; bits are packed little-endian within `u64`
/// words. Immutable once built.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinaryFunction {
    words: Vec<u64>,
    len: usize,
}

impl BinaryFunction {
    pub fn zeros(len: usize) -> Self {
        BinaryFunction {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        let mut f = BinaryFunction::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b != 0 {
                f.words[i / 64] |= 1u64 << (i % 64);
            }
        }
        f
    }

    pub fn from_bool_slice(bits: &[bool]) -> Self {
        let mut f = BinaryFunction::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                f.words[i / 64] |= 1u64 << (i % 64);
            }
        }
        f
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, i: usize) -> u8 {
        assert!(i < self.len);
        ((self.words[i / 64] >> (i % 64)) & 1) as u8
    }

    pub fn bits(&self) -> Vec<u8> {
        (0..self.len).map(|i| self.bit(i)).collect()
    }

    /// Flip the given bit positions (used to construct fixed-error functions).
    pub fn with_flipped(&self, positions: &[usize]) -> Self {
        let mut f = self.clone();
        for &p in positions {
            assert!(p < f.len);
            f.words[p / 64] ^= 1u64 << (p % 64);
        }
        f
    }

    /// Global bit complement.
    pub fn complement(&self) -> Self {
        let mut f = self.clone();
        for w in &mut f.words {
            *w = !*w;
        }
        f.mask_tail();
        f
    }

    /// Restrict to the bits at `positions`, in the given order.
    pub fn restrict(&self, positions: &[usize]) -> Self {
        let bits: Vec<u8> = positions.iter().map(|&p| self.bit(p)).collect();
        BinaryFunction::from_bits(&bits)
    }

    /// Hamming distance to another function of the same length; divided by
    /// the length this is the generalisation error.
    pub fn error_count(&self, truth: &BinaryFunction) -> Result<u32> {
        if self.len != truth.len {
            return Err(Error::LengthMismatch {
                expected: truth.len,
                got: self.len,
            });
        }
        Ok(self
            .words
            .iter()
            .zip(&truth.words)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum())
    }

    /// Hex serialisation: the little-endian byte dump of the bit string,
    /// two lowercase hex digits per byte (bit `i` is bit `i % 8` of byte
    /// `i / 8`).
    pub fn to_hex(&self) -> String {
        let nbytes = self.len.div_ceil(8);
        let mut s = String::with_capacity(nbytes * 2);
        for j in 0..nbytes {
            let byte = ((self.words[j / 8] >> (8 * (j % 8))) & 0xff) as u8;
            s.push_str(&format!("{byte:02x}"));
        }
        s
    }

    pub fn from_hex(hex: &str, len: usize) -> Result<Self> {
        let nbytes = len.div_ceil(8);
        if hex.len() != nbytes * 2 {
            return Err(Error::Other(format!(
                "hex string has {} digits, expected {} for length {len}",
                hex.len(),
                nbytes * 2
            )));
        }
        let mut f = BinaryFunction::zeros(len);
        for j in 0..nbytes {
            let byte = u8::from_str_radix(&hex[2 * j..2 * j + 2], 16)
                .map_err(|e| Error::Other(format!("bad hex digit: {e}")))?;
            f.words[j / 8] |= (byte as u64) << (8 * (j % 8));
        }
        f.mask_tail();
        // Reject set bits beyond `len` so from_hex(to_hex(f)) is exact.
        let roundtrip = f.to_hex();
        if roundtrip != hex.to_ascii_lowercase() {
            return Err(Error::Other(format!(
                "hex string sets bits beyond function length {len}"
            )));
        }
        Ok(f)
    }

    fn mask_tail(&mut self) {
        let used = self.len % 64;
        if used != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << used) - 1;
            }
        }
    }
}

impl fmt::Debug for BinaryFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryFunction({}, len={})", self.to_hex(), self.len)
    }
}

/// Mergeable map from function to occurrence count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: BTreeMap<BinaryFunction, u64>,
    total: u64,
    len: usize,
    provenance: String,
}

/// Overlap statistics over the functions two tables share (each with count
/// at least the chosen minimum).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverlapStats {
    /// Cumulative probability of the joint set under the first table.
    pub sum_a_on_joint: f64,
    /// Cumulative probability of the joint set under the second table.
    pub sum_b_on_joint: f64,
    pub joint_count: usize,
    /// Pearson correlation of log probabilities over the joint set.
    pub pearson_loglog: f64,
}

/// Minimum per-table count for a function to enter overlap statistics.
pub const DEFAULT_MIN_COUNT: u64 = 10;

impl FrequencyTable {
    pub fn new(len: usize, provenance: impl Into<String>) -> Self {
        FrequencyTable {
            counts: BTreeMap::new(),
            total: 0,
            len,
            provenance: provenance.into(),
        }
    }

    pub fn function_len(&self) -> usize {
        self.len
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, f: &BinaryFunction) -> u64 {
        self.counts.get(f).copied().unwrap_or(0)
    }

    pub fn probability(&self, f: &BinaryFunction) -> f64 {
        self.count(f) as f64 / self.total as f64
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BinaryFunction, u64)> {
        self.counts.iter().map(|(f, &c)| (f, c))
    }

    /// Record one observation of `f`.
    pub fn record(&mut self, f: BinaryFunction) -> Result<()> {
        if f.len() != self.len {
            return Err(Error::LengthMismatch {
                expected: self.len,
                got: f.len(),
            });
        }
        *self.counts.entry(f).or_insert(0) += 1;
        self.total += 1;
        Ok(())
    }

    pub fn record_many(&mut self, f: BinaryFunction, n: u64) -> Result<()> {
        if f.len() != self.len {
            return Err(Error::LengthMismatch {
                expected: self.len,
                got: f.len(),
            });
        }
        if n > 0 {
            *self.counts.entry(f).or_insert(0) += n;
            self.total += n;
        }
        Ok(())
    }

    /// Pointwise-add another table. Commutative and associative, so shards
    /// built by parallel workers can be folded in any order.
    pub fn merge(&mut self, other: &FrequencyTable) -> Result<()> {
        if other.len != self.len {
            return Err(Error::LengthMismatch {
                expected: self.len,
                got: other.len,
            });
        }
        if other.provenance != self.provenance {
            return Err(Error::ProvenanceMismatch(
                self.provenance.clone(),
                other.provenance.clone(),
            ));
        }
        for (f, &c) in other.counts.iter() {
            *self.counts.entry(f.clone()).or_insert(0) += c;
        }
        self.total += other.total;
        Ok(())
    }

    /// Tally of each function restricted to `positions` (e.g. a full-domain
    /// table restricted to the test inputs).
    pub fn restrict(&self, positions: &[usize]) -> FrequencyTable {
        let mut out = FrequencyTable::new(positions.len(), self.provenance.clone());
        for (f, &c) in self.counts.iter() {
            out.record_many(f.restrict(positions), c).expect("same length");
        }
        out
    }

    /// Joint-set statistics against another table; `min_count` defaults to
    /// [`DEFAULT_MIN_COUNT`] to suppress finite-sampling noise.
    pub fn overlap_stats(
        &self,
        other: &FrequencyTable,
        min_count: u64,
    ) -> Result<OverlapStats> {
        if self.total == 0 || other.total == 0 {
            return Err(Error::EmptyTable);
        }
        if other.len != self.len {
            return Err(Error::LengthMismatch {
                expected: self.len,
                got: other.len,
            });
        }
        let mut log_a = Vec::new();
        let mut log_b = Vec::new();
        let mut sum_a = 0.0;
        let mut sum_b = 0.0;
        for (f, &ca) in self.counts.iter() {
            let cb = other.count(f);
            if ca >= min_count && cb >= min_count {
                let pa = ca as f64 / self.total as f64;
                let pb = cb as f64 / other.total as f64;
                sum_a += pa;
                sum_b += pb;
                log_a.push(pa.ln());
                log_b.push(pb.ln());
            }
        }
        if log_a.is_empty() {
            return Err(Error::EmptyJointSet);
        }
        Ok(OverlapStats {
            sum_a_on_joint: sum_a,
            sum_b_on_joint: sum_b,
            joint_count: log_a.len(),
            pearson_loglog: stats::pearson(&log_a, &log_b),
        })
    }

    /// The largest probability threshold `t` such that the functions with
    /// probability >= t carry more than 90% of the table's mass. Exact
    /// integer arithmetic, so ties at the 90% edge resolve correctly.
    pub fn boundary_90(&self) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::EmptyTable);
        }
        let mut counts: Vec<u64> = self.counts.values().copied().collect();
        counts.sort_unstable_by(|a, b| b.cmp(a));
        let mut cum: u64 = 0;
        let mut i = 0;
        while i < counts.len() {
            let c = counts[i];
            // Include the whole tie group at count c.
            while i < counts.len() && counts[i] == c {
                cum += counts[i];
                i += 1;
            }
            if 10 * cum > 9 * self.total {
                return Ok(c as f64 / self.total as f64);
            }
        }
        // The full mass is 100% > 90%, so the loop always returns.
        unreachable!("counts sum to total");
    }

    /// Per-bit misclassification probabilities against `truth`, weighted by
    /// empirical probability. Their mean equals the table's average
    /// generalisation error.
    pub fn per_bit_marginals(&self, truth: &BinaryFunction) -> Result<Vec<f64>> {
        if self.total == 0 {
            return Err(Error::EmptyTable);
        }
        if truth.len() != self.len {
            return Err(Error::LengthMismatch {
                expected: self.len,
                got: truth.len(),
            });
        }
        let mut p = vec![0.0; self.len];
        for (f, &c) in self.counts.iter() {
            let w = c as f64 / self.total as f64;
            for (i, pi) in p.iter_mut().enumerate() {
                if f.bit(i) != truth.bit(i) {
                    *pi += w;
                }
            }
        }
        Ok(p)
    }

    /// Probability-weighted mean generalisation error against `truth`.
    pub fn mean_error(&self, truth: &BinaryFunction) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::EmptyTable);
        }
        let mut acc = 0.0;
        for (f, &c) in self.counts.iter() {
            acc += c as f64 * f.error_count(truth)? as f64;
        }
        Ok(acc / (self.total as f64 * self.len as f64))
    }

    /// Rows sorted by descending count then hex, so serialisation is
    /// deterministic.
    pub fn sorted_rows(&self) -> Vec<(String, u64, f64)> {
        let mut rows: Vec<(String, u64, f64)> = self
            .counts
            .iter()
            .map(|(f, &c)| (f.to_hex(), c, c as f64 / self.total as f64))
            .collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        rows
    }

    /// CSV with columns `function_hex,count,probability`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("function_hex,count,probability\n");
        for (hex, count, prob) in self.sorted_rows() {
            out.push_str(&format!("{hex},{count},{prob:.17e}\n"));
        }
        out
    }

    /// Parse a table written by [`to_csv`]. Probabilities are recomputed
    /// from the counts.
    pub fn from_csv(text: &str, len: usize, provenance: impl Into<String>) -> Result<Self> {
        let mut table = FrequencyTable::new(len, provenance);
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 || line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let hex = parts
                .next()
                .ok_or_else(|| Error::Other(format!("csv line {lineno}: missing hex")))?;
            let count: u64 = parts
                .next()
                .ok_or_else(|| Error::Other(format!("csv line {lineno}: missing count")))?
                .parse()
                .map_err(|e| Error::Other(format!("csv line {lineno}: bad count: {e}")))?;
            table.record_many(BinaryFunction::from_hex(hex, len)?, count)?;
        }
        Ok(table)
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            function_hex: &'a str,
            count: u64,
            probability: f64,
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            total: u64,
            provenance: &'a str,
            function_length: usize,
            functions: Vec<Row<'a>>,
        }
        let rows = self.sorted_rows();
        let doc = Doc {
            total: self.total,
            provenance: &self.provenance,
            function_length: self.len,
            functions: rows
                .iter()
                .map(|(hex, count, prob)| Row {
                    function_hex: hex,
                    count: *count,
                    probability: *prob,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("serialisable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            function_hex: String,
            count: u64,
        }
        #[derive(Deserialize)]
        struct Doc {
            total: u64,
            provenance: String,
            function_length: usize,
            functions: Vec<Row>,
        }
        let doc: Doc =
            serde_json::from_str(text).map_err(|e| Error::Other(format!("bad table json: {e}")))?;
        let mut table = FrequencyTable::new(doc.function_length, doc.provenance);
        for row in doc.functions {
            table.record_many(
                BinaryFunction::from_hex(&row.function_hex, doc.function_length)?,
                row.count,
            )?;
        }
        if table.total != doc.total {
            return Err(Error::Other(format!(
                "table json total {} disagrees with row sum {}",
                doc.total, table.total
            )));
        }
        Ok(table)
    }
}
