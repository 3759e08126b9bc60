//! State containers shared by all dynamics: the free/constrained index split,
//! points of `T*M`, `TM` and of the variational state space, and sampled
//! trajectories.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Split of configuration indices into free (`a`) and constrained (`α`) blocks.
///
/// Fields are public so that malformed splits can be represented and
/// reported by [`validate_split`]; use [`IndexSplit::new`] for a checked value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexSplit {
    pub n: usize,
    pub free: Vec<usize>,
    pub constrained: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SplitViolation {
    Overlap(usize),
    OutOfRange(usize),
    Duplicate(usize),
    Unsorted,
    CoverIncomplete(Vec<usize>),
}

impl fmt::Display for SplitViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitViolation::Overlap(i) => write!(f, "overlap at {i}"),
            SplitViolation::OutOfRange(i) => write!(f, "index {i} out of range"),
            SplitViolation::Duplicate(i) => write!(f, "duplicate index {i}"),
            SplitViolation::Unsorted => write!(f, "indices not sorted ascending"),
            SplitViolation::CoverIncomplete(missing) => write!(f, "cover incomplete: missing {missing:?}"),
        }
    }
}

/// All invariant violations of `split`; empty iff it is well formed.
pub fn validate_split(split: &IndexSplit) -> Vec<SplitViolation> {
    let mut out = Vec::new();
    for block in [&split.free, &split.constrained] {
        if block.windows(2).any(|w| w[0] > w[1]) && !out.contains(&SplitViolation::Unsorted) {
            out.push(SplitViolation::Unsorted);
        }
        let mut seen = BTreeSet::new();
        for &i in block {
            if !seen.insert(i) {
                out.push(SplitViolation::Duplicate(i));
            }
        }
    }
    let free: BTreeSet<usize> = split.free.iter().copied().collect();
    let con: BTreeSet<usize> = split.constrained.iter().copied().collect();
    for &i in free.intersection(&con) {
        out.push(SplitViolation::Overlap(i));
    }
    for &i in free.union(&con) {
        if i >= split.n {
            out.push(SplitViolation::OutOfRange(i));
        }
    }
    let missing: Vec<usize> = (0..split.n).filter(|i| !free.contains(i) && !con.contains(i)).collect();
    if !missing.is_empty() {
        out.push(SplitViolation::CoverIncomplete(missing));
    }
    out
}

impl IndexSplit {
    pub fn new(n: usize, free: Vec<usize>, constrained: Vec<usize>) -> Result<Self> {
        let split = IndexSplit { n, free, constrained };
        let report = validate_split(&split);
        if report.is_empty() {
            Ok(split)
        } else {
            let msg: Vec<String> = report.iter().map(|v| v.to_string()).collect();
            Err(Error::InvalidSystem(format!("index split: {}", msg.join(", "))))
        }
    }

    /// Free block `0..n-k`, constrained block `n-k..n`.
    pub fn trailing(n: usize, k: usize) -> Self {
        assert!(k <= n);
        IndexSplit { n, free: (0..n - k).collect(), constrained: (n - k..n).collect() }
    }

    pub fn unconstrained(n: usize) -> Self {
        Self::trailing(n, 0)
    }

    /// Number of free coordinates, `n - k`.
    pub fn m(&self) -> usize {
        self.free.len()
    }

    /// Number of constraints.
    pub fn k(&self) -> usize {
        self.constrained.len()
    }

    /// Split a full vector into its (free, constrained) blocks.
    pub fn split<T: Copy>(&self, full: &[T]) -> (Vec<T>, Vec<T>) {
        (
            self.free.iter().map(|&i| full[i]).collect(),
            self.constrained.iter().map(|&i| full[i]).collect(),
        )
    }

    /// Inverse of [`IndexSplit::split`].
    pub fn join<T: Copy + Default>(&self, free: &[T], constrained: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); self.n];
        for (&i, &v) in self.free.iter().zip(free) {
            out[i] = v;
        }
        for (&i, &v) in self.constrained.iter().zip(constrained) {
            out[i] = v;
        }
        out
    }
}

fn all_finite<T: Scalar>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn check_finite<T: Scalar>(v: &[T]) -> Result<()> {
    if all_finite(v) {
        Ok(())
    } else {
        Err(Error::NonFinite { step: 0 })
    }
}

/// Point `(q, p)` of the cotangent bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState<T = f64> {
    pub q: Vec<T>,
    pub p: Vec<T>,
}

impl<T: Scalar> PhaseState<T> {
    pub fn new(q: Vec<T>, p: Vec<T>) -> Result<Self> {
        if q.len() != p.len() {
            return Err(Error::Dimension { expected: q.len(), got: p.len() });
        }
        check_finite(&q)?;
        check_finite(&p)?;
        Ok(PhaseState { q, p })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// `[q; p]`
    pub fn to_vec(&self) -> Vec<T> {
        self.q.iter().chain(&self.p).copied().collect()
    }

    pub fn from_slice(x: &[T]) -> Self {
        let n = x.len() / 2;
        PhaseState { q: x[..n].to_vec(), p: x[n..].to_vec() }
    }
}

/// Point `(q, v)` of the tangent bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentState<T = f64> {
    pub q: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> TangentState<T> {
    pub fn new(q: Vec<T>, v: Vec<T>) -> Result<Self> {
        if q.len() != v.len() {
            return Err(Error::Dimension { expected: q.len(), got: v.len() });
        }
        check_finite(&q)?;
        check_finite(&v)?;
        Ok(TangentState { q, v })
    }
}

/// Point `(q, q̇^a, μ̃_α)` of the constrained-variational state space.
#[derive(Clone, Debug, PartialEq)]
pub struct VakonomicState<T = f64> {
    pub q: Vec<T>,
    pub vfree: Vec<T>,
    pub mu: Vec<T>,
}

impl<T: Scalar> VakonomicState<T> {
    pub fn new(split: &IndexSplit, q: Vec<T>, vfree: Vec<T>, mu: Vec<T>) -> Result<Self> {
        if q.len() != split.n {
            return Err(Error::Dimension { expected: split.n, got: q.len() });
        }
        if vfree.len() != split.m() {
            return Err(Error::Dimension { expected: split.m(), got: vfree.len() });
        }
        if mu.len() != split.k() {
            return Err(Error::Dimension { expected: split.k(), got: mu.len() });
        }
        check_finite(&q)?;
        check_finite(&vfree)?;
        check_finite(&mu)?;
        Ok(VakonomicState { q, vfree, mu })
    }

    /// `[q; vfree; mu]`
    pub fn to_vec(&self) -> Vec<T> {
        self.q.iter().chain(&self.vfree).chain(&self.mu).copied().collect()
    }

    pub fn from_slice(split: &IndexSplit, x: &[T]) -> Self {
        let (n, m) = (split.n, split.m());
        VakonomicState { q: x[..n].to_vec(), vfree: x[n..n + m].to_vec(), mu: x[n + m..].to_vec() }
    }
}

/// Sampled trajectory: a strictly increasing time grid and named columns,
/// each a `len × width` row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    columns: Vec<Column>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub width: usize,
    data: Vec<f64>,
}

impl Column {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.width.max(1))
    }
}

impl Trajectory {
    pub fn new(layout: &[(&str, usize)]) -> Self {
        Trajectory {
            times: Vec::new(),
            columns: layout
                .iter()
                .map(|&(name, width)| Column { name: name.to_string(), width, data: Vec::new() })
                .collect(),
        }
    }

    /// Append a sample; `values` follows the column layout order.
    pub fn push(&mut self, t: f64, values: &[&[f64]]) -> Result<()> {
        if let Some(&prev) = self.times.last() {
            if !(t > prev) {
                return Err(Error::NonMonotonicTime { prev, next: t });
            }
        }
        if values.len() != self.columns.len() {
            return Err(Error::Dimension { expected: self.columns.len(), got: values.len() });
        }
        for (col, v) in self.columns.iter().zip(values) {
            if v.len() != col.width {
                return Err(Error::Dimension { expected: col.width, got: v.len() });
            }
        }
        for (col, v) in self.columns.iter_mut().zip(values) {
            col.data.extend_from_slice(v);
        }
        self.times.push(t);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c.name == name)
    }

    pub fn row(&self, name: &str, i: usize) -> Result<&[f64]> {
        Ok(self.column(name)?.row(i))
    }

    pub fn last_row(&self, name: &str) -> Result<&[f64]> {
        let n = self.len();
        if n == 0 {
            return Err(Error::MissingColumn(name.to_string()));
        }
        self.row(name, n - 1)
    }
}
