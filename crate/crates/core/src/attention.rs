//! Generation/context token layout, the banded context mask and two
//! attention evaluators.
//!
//! Tokens `[0, G)` are the generation sequence and `[G, G + C)` the context.
//! The mask allows:
//!
//! | query      | key        | allowed                         |
//! |------------|------------|---------------------------------|
//! | generation | generation | always                          |
//! | generation | context    | when `gen_reads_context` is set |
//! | context    | generation | always                          |
//! | context    | context    | iff `|q - k| <= K`              |
//!
//! The band runs over the flat context index and ignores segment seams.
//!
//! [`dense_masked_attention`] scores every key and zeroes the masked ones;
//! it is the reference. [`sparse_context_attention`] scores only the keys a
//! row may see, so context rows cost `O(G + K)` instead of `O(G + C)`. Both
//! accumulate keys in ascending index order within a row.

use std::ops::Range;

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// A contiguous run of context tokens from one source.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSegment {
    pub offset: usize,
    pub len: usize,
    pub tag: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    gen_len: usize,
    ctx_len: usize,
    segments: Vec<TokenSegment>,
}

impl TokenLayout {
    /// Lays out context segments back to back from offset 0.
    pub fn new(gen_len: usize, segments: impl IntoIterator<Item = (usize, String)>) -> Self {
        let mut offset = 0;
        let segments: Vec<TokenSegment> = segments
            .into_iter()
            .map(|(len, tag)| {
                let s = TokenSegment { offset, len, tag };
                offset += len;
                s
            })
            .collect();
        Self {
            gen_len,
            ctx_len: offset,
            segments,
        }
    }

    /// Single untagged context segment.
    pub fn uniform(gen_len: usize, ctx_len: usize) -> Self {
        let segs = (ctx_len > 0).then(|| (ctx_len, "context".to_string()));
        Self::new(gen_len, segs)
    }

    pub fn gen_len(&self) -> usize {
        self.gen_len
    }

    pub fn ctx_len(&self) -> usize {
        self.ctx_len
    }

    pub fn total_len(&self) -> usize {
        self.gen_len + self.ctx_len
    }

    pub fn segments(&self) -> &[TokenSegment] {
        &self.segments
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandedMaskSpec {
    bandwidth: usize,
}

impl BandedMaskSpec {
    pub fn new(bandwidth: usize) -> Result<Self> {
        if bandwidth == 0 {
            return Err(Error::arg("band width must be at least 1"));
        }
        Ok(Self { bandwidth })
    }

    /// One face's spatial token count: `(res / patch)²`.
    pub fn for_face(res: usize, patch: usize) -> Result<Self> {
        if patch == 0 || !res.is_multiple_of(patch) {
            return Err(Error::arg(format!(
                "patch size {patch} must divide face resolution {res}"
            )));
        }
        Self::new((res / patch).pow(2))
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }
}

/// Anything that can answer "may query `q` read key `k`".
pub trait AttentionMask: Sync {
    fn len(&self) -> usize;
    fn allowed(&self, q: usize, k: usize) -> bool;
}

/// Unmasked attention over `n` tokens.
#[derive(Clone, Copy, Debug)]
pub struct FullMask(pub usize);

impl AttentionMask for FullMask {
    fn len(&self) -> usize {
        self.0
    }

    fn allowed(&self, _q: usize, _k: usize) -> bool {
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContextMask {
    gen_len: usize,
    ctx_len: usize,
    bandwidth: usize,
    gen_reads_context: bool,
}

impl ContextMask {
    /// Same mask with generation→context reads switched on or off.
    pub fn with_gen_reads_context(mut self, on: bool) -> Self {
        self.gen_reads_context = on;
        self
    }

    pub fn gen_reads_context(&self) -> bool {
        self.gen_reads_context
    }

    /// Key ranges visible to query `q`, ascending and disjoint.
    pub fn key_ranges(&self, q: usize) -> [Range<usize>; 2] {
        let g = self.gen_len;
        let n = g + self.ctx_len;
        if q < g {
            if self.gen_reads_context {
                [0..n, n..n]
            } else {
                [0..g, n..n]
            }
        } else {
            let lo = q.saturating_sub(self.bandwidth).max(g);
            let hi = (q + self.bandwidth + 1).min(n);
            [0..g, lo..hi]
        }
    }

    /// Number of allowed `(q, k)` pairs.
    pub fn allowed_count(&self) -> u64 {
        (0..self.len())
            .map(|q| {
                self.key_ranges(q)
                    .iter()
                    .map(|r| r.len() as u64)
                    .sum::<u64>()
            })
            .sum()
    }
}

impl AttentionMask for ContextMask {
    fn len(&self) -> usize {
        self.gen_len + self.ctx_len
    }

    fn allowed(&self, q: usize, k: usize) -> bool {
        let g = self.gen_len;
        match (q < g, k < g) {
            (true, true) | (false, true) => true,
            (true, false) => self.gen_reads_context,
            (false, false) => q.abs_diff(k) <= self.bandwidth,
        }
    }
}

pub fn build_context_mask(layout: &TokenLayout, spec: &BandedMaskSpec) -> ContextMask {
    ContextMask {
        gen_len: layout.gen_len,
        ctx_len: layout.ctx_len,
        bandwidth: spec.bandwidth,
        gen_reads_context: true,
    }
}

/// Per-head query/key/value sequences, stored `[head][token][dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionInputs<T> {
    heads: usize,
    seq_len: usize,
    dim: usize,
    pub queries: Vec<T>,
    pub keys: Vec<T>,
    pub values: Vec<T>,
}

impl<T: Float> AttentionInputs<T> {
    pub fn new(
        heads: usize,
        seq_len: usize,
        dim: usize,
        queries: Vec<T>,
        keys: Vec<T>,
        values: Vec<T>,
    ) -> Result<Self> {
        if dim == 0 || heads == 0 {
            return Err(Error::arg(
                "head count and head dimension must be at least 1",
            ));
        }
        let n = heads * seq_len * dim;
        if queries.len() != n || keys.len() != n || values.len() != n {
            return Err(Error::arg(format!(
                "query/key/value buffers must each hold {heads}x{seq_len}x{dim} values"
            )));
        }
        Ok(Self {
            heads,
            seq_len,
            dim,
            queries,
            keys,
            values,
        })
    }

    /// Standard-normal inputs from a seeded generator.
    pub fn random(heads: usize, seq_len: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = heads * seq_len * dim;
        let mut draw = |_| {
            T::from(Distribution::<f64>::sample(&StandardNormal, &mut rng)).expect("finite draw")
        };
        let queries = (0..n).map(&mut draw).collect();
        let keys = (0..n).map(&mut draw).collect();
        let values = (0..n).map(&mut draw).collect();
        Self::new(heads, seq_len, dim, queries, keys, values)
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn vec<'a>(&self, buf: &'a [T], head: usize, token: usize) -> &'a [T] {
        let o = (head * self.seq_len + token) * self.dim;
        &buf[o..o + self.dim]
    }
}

#[inline]
fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Softmax-weighted sum of `values` over `keys`, given as ascending ranges.
/// `scores` must already hold the scaled logits for those keys, in order.
fn softmax_accumulate<T: Float>(
    inp: &AttentionInputs<T>,
    head: usize,
    keys: impl Iterator<Item = usize> + Clone,
    scores: &mut [T],
    out: &mut [T],
) {
    let max = scores.iter().fold(T::neg_infinity(), |m, &s| m.max(s));
    let mut denom = T::zero();
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        denom = denom + *s;
    }
    out.iter_mut().for_each(|o| *o = T::zero());
    for (k, &w) in keys.zip(scores.iter()) {
        let v = inp.vec(&inp.values, head, k);
        for (o, &vv) in out.iter_mut().zip(v) {
            *o = *o + w * vv;
        }
    }
    let inv = T::one() / denom;
    out.iter_mut().for_each(|o| *o = *o * inv);
}

fn scale<T: Float>(dim: usize) -> T {
    T::one() / T::from(dim as f64).expect("dim fits").sqrt()
}

/// Reference path: scores every key, then drops the masked ones.
///
/// Output is `[head][token][dim]`, one vector per query.
pub fn dense_masked_attention<T, M>(inp: &AttentionInputs<T>, mask: &M) -> Result<Vec<T>>
where
    T: Float + Send + Sync,
    M: AttentionMask,
{
    let n = inp.seq_len;
    if mask.len() != n {
        return Err(Error::arg(format!(
            "mask covers {} tokens, inputs have {n}",
            mask.len()
        )));
    }
    for q in 0..n {
        if !(0..n).any(|k| mask.allowed(q, k)) {
            return Err(Error::arg(format!("query {q} has no allowed keys")));
        }
    }
    let d = inp.dim;
    let sc: T = scale(d);
    let mut out = vec![T::zero(); inp.heads * n * d];
    par::for_each_row(&mut out, d, |row, o| {
        let (head, q) = (row / n, row % n);
        let qv = inp.vec(&inp.queries, head, q);
        let all: Vec<T> = (0..n)
            .map(|k| dot(qv, inp.vec(&inp.keys, head, k)) * sc)
            .collect();
        let keep = (0..n).filter(|&k| mask.allowed(q, k));
        let mut scores: Vec<T> = keep.clone().map(|k| all[k]).collect();
        softmax_accumulate(inp, head, keep, &mut scores, o);
    });
    Ok(out)
}

/// Band-limited path: context rows only score the `G` generation keys and
/// the `2K + 1` band around the diagonal.
pub fn sparse_context_attention<T>(
    inp: &AttentionInputs<T>,
    layout: &TokenLayout,
    spec: &BandedMaskSpec,
) -> Result<Vec<T>>
where
    T: Float + Send + Sync,
{
    sparse_attention_with_mask(inp, &build_context_mask(layout, spec))
}

/// [`sparse_context_attention`] for an explicit (possibly reconfigured) mask.
pub fn sparse_attention_with_mask<T>(inp: &AttentionInputs<T>, mask: &ContextMask) -> Result<Vec<T>>
where
    T: Float + Send + Sync,
{
    let n = inp.seq_len;
    if mask.len() != n {
        return Err(Error::arg(format!(
            "layout covers {} tokens, inputs have {n}",
            mask.len()
        )));
    }
    if mask.gen_len == 0 && mask.ctx_len == 0 {
        return Ok(Vec::new());
    }
    let d = inp.dim;
    let sc: T = scale(d);
    let mut out = vec![T::zero(); inp.heads * n * d];
    par::for_each_row(&mut out, d, |row, o| {
        let (head, q) = (row / n, row % n);
        let qv = inp.vec(&inp.queries, head, q);
        let [a, b] = mask.key_ranges(q);
        let keys = a.chain(b);
        let mut scores: Vec<T> = keys
            .clone()
            .map(|k| dot(qv, inp.vec(&inp.keys, head, k)) * sc)
            .collect();
        softmax_accumulate(inp, head, keys, &mut scores, o);
    });
    Ok(out)
}

/// Score-computation multiply-accumulates of the banded layout:
/// `2d · (G² + 2GC + C · min(2K + 1, C))`.
///
/// The band term counts the full `2K + 1` window for every context row, so
/// it is an upper bound on the exact count by `K(K + 1)` rows' worth at the
/// two ends of the band (when `C > 2K`).
pub fn attention_flops(layout: &TokenLayout, spec: &BandedMaskSpec, dim: usize) -> u64 {
    let (g, c, k) = (
        layout.gen_len as u64,
        layout.ctx_len as u64,
        spec.bandwidth as u64,
    );
    2 * dim as u64 * (g * g + 2 * g * c + c * (2 * k + 1).min(c))
}

/// Same count for unmasked attention over all `G + C` tokens.
pub fn dense_attention_flops(layout: &TokenLayout, dim: usize) -> u64 {
    let n = layout.total_len() as u64;
    2 * dim as u64 * n * n
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn linear_fit_r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len()) as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}
