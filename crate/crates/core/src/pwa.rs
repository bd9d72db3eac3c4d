//! Piecewise-affine value approximations: affine cuts, min-of-cuts
//! evaluation, supporting-cut queries, hyperplane interpolation, the local
//! submodularity test, and the per-epoch stack of approximations with its
//! JSON-lines checkpoint format.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::{StateSpace, StateVec};

#[derive(Debug, Error)]
pub enum PwaError {
    #[error("hyperplane coefficients must be finite")]
    NonFinite,
    #[error("a piecewise-affine value needs at least one cut")]
    EmptyCuts,
    #[error("expected {expected} interpolation values, got {got}")]
    ValueCount { expected: usize, got: usize },
    #[error("cut dimension mismatch: expected {expected}, got {got}")]
    CutDimension { expected: usize, got: usize },
    #[error("checkpoint record has epoch {t} outside 1..={t_bar}")]
    BadCutEpoch { t: usize, t_bar: usize },
    #[error("checkpoint is missing cuts for epoch {t}")]
    MissingEpoch { t: usize },
    #[error("checkpoint i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint record is malformed: {0}")]
    Parse(#[from] serde_json::Error),
}

/// An affine function `H(x) = <a, x> + b` (slope in money per unit state,
/// offset in money).
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperplane {
    slope: Vec<f64>,
    offset: f64,
}

impl Hyperplane {
    pub fn new(slope: Vec<f64>, offset: f64) -> Result<Self, PwaError> {
        if !offset.is_finite() || slope.iter().any(|a| !a.is_finite()) {
            return Err(PwaError::NonFinite);
        }
        Ok(Self { slope, offset })
    }

    pub fn dim(&self) -> usize {
        self.slope.len()
    }

    pub fn slope(&self) -> &[f64] {
        &self.slope
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn eval(&self, x: &StateVec) -> f64 {
        debug_assert_eq!(self.slope.len(), x.dim());
        // Dot product first: mirrors the summation order used when fitting,
        // so interpolation points reproduce to within one rounding of the
        // offset cancellation.
        let mut dot = 0.0;
        for (a, &xi) in self.slope.iter().zip(x.entries()) {
            dot += a * xi as f64;
        }
        dot + self.offset
    }
}

/// Default tie tolerance for supporting-cut queries, scaled to the value
/// magnitude. Exact-arithmetic argmins become generic float ties after
/// repeated cut insertion.
pub fn default_tie_tol(value_at_x: f64) -> f64 {
    1e-9 * (1.0 + value_at_x.abs())
}

/// A borrowed view over a cut prefix; evaluation is the pointwise minimum.
///
/// Views let the solver read an approximation as of an earlier iteration
/// (cuts are append-only) without cloning.
#[derive(Clone, Copy)]
pub struct PwaView<'a> {
    cuts: &'a [Hyperplane],
}

impl<'a> PwaView<'a> {
    pub fn cuts(&self) -> &'a [Hyperplane] {
        self.cuts
    }

    /// `min_j H_j(x)`.
    pub fn evaluate(&self, x: &StateVec) -> f64 {
        debug_assert!(!self.cuts.is_empty());
        self.cuts
            .iter()
            .map(|h| h.eval(x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Evaluates the minimum at `x` and at each unit-bump successor in one
    /// pass, writing `n + 1` values into `out` in successor order. A cut's
    /// value at `x + e_s` is its value at `x` plus one slope entry, so this
    /// costs one traversal of the cut list instead of `n + 1`.
    pub fn evaluate_successors_into(&self, x: &StateVec, out: &mut Vec<f64>) {
        let n = x.dim();
        out.clear();
        out.resize(n + 1, f64::INFINITY);
        for h in self.cuts {
            let at_x = h.eval(x);
            if at_x < out[0] {
                out[0] = at_x;
            }
            for (slot, a) in out[1..].iter_mut().zip(h.slope()) {
                let v = at_x + a;
                if v < *slot {
                    *slot = v;
                }
            }
        }
    }

    /// Indices of cuts within `tie_tol` of the minimum at `x`; never empty.
    pub fn supporting_indices(&self, x: &StateVec, tie_tol: f64) -> Vec<usize> {
        let values: Vec<f64> = self.cuts.iter().map(|h| h.eval(x)).collect();
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v <= min + tie_tol)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Min-of-cuts value approximation. Cuts are append-only during training, so
/// evaluation is nonincreasing in the number of cuts and the function is
/// concave extensible by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct PwaValue {
    cuts: Vec<Hyperplane>,
}

impl PwaValue {
    pub fn new(initial: Hyperplane) -> Self {
        Self {
            cuts: vec![initial],
        }
    }

    /// Rebuilds from an explicit cut list; the list must be nonempty and
    /// dimensionally consistent.
    pub fn from_cuts(cuts: Vec<Hyperplane>) -> Result<Self, PwaError> {
        let first = cuts.first().ok_or(PwaError::EmptyCuts)?;
        let dim = first.dim();
        for h in &cuts {
            if h.dim() != dim {
                return Err(PwaError::CutDimension {
                    expected: dim,
                    got: h.dim(),
                });
            }
        }
        Ok(Self { cuts })
    }

    pub fn cuts(&self) -> &[Hyperplane] {
        &self.cuts
    }

    pub fn view(&self) -> PwaView<'_> {
        PwaView { cuts: &self.cuts }
    }

    /// View restricted to the first `len` cuts.
    pub fn prefix_view(&self, len: usize) -> PwaView<'_> {
        PwaView {
            cuts: &self.cuts[..len],
        }
    }

    pub fn evaluate(&self, x: &StateVec) -> f64 {
        self.view().evaluate(x)
    }

    pub fn supporting_indices(&self, x: &StateVec, tie_tol: f64) -> Vec<usize> {
        self.view().supporting_indices(x, tie_tol)
    }

    /// Appends a cut; afterwards the evaluation at every point equals the
    /// minimum of the previous evaluation and `h`. Dominated cuts are kept.
    pub fn add_cut(&mut self, h: Hyperplane) {
        debug_assert_eq!(h.dim(), self.cuts[0].dim());
        self.cuts.push(h);
    }
}

/// The unique affine interpolant through `(anchor, values[0])` and
/// `(anchor + e_s, values[s])` for `s = 1..n`: slope `a_s = values[s] -
/// values[0]`, offset `b = values[0] - <a, anchor>`. The value ordering must
/// match [`successors`].
pub fn fit_hyperplane(anchor: &StateVec, values: &[f64]) -> Result<Hyperplane, PwaError> {
    let n = anchor.dim();
    if values.len() != n + 1 {
        return Err(PwaError::ValueCount {
            expected: n + 1,
            got: values.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(PwaError::NonFinite);
    }
    let slope: Vec<f64> = (0..n).map(|s| values[s + 1] - values[0]).collect();
    let mut dot = 0.0;
    for (a, &xi) in slope.iter().zip(anchor.entries()) {
        dot += a * xi as f64;
    }
    Hyperplane::new(slope, values[0] - dot)
}

/// Outcome of a pairwise submodularity check.
#[derive(Clone, Copy, Debug)]
pub struct SubmodularityCheck {
    pub holds: bool,
    /// Largest positive excess of `f(join) + f(meet)` over `f(y) + f(z)`
    /// across the checked pairs (0 when none).
    pub worst_violation: f64,
    pub tolerance: f64,
}

/// Checks `f(join(y,z)) + f(meet(y,z)) <= f(y) + f(z)` for every unordered
/// pair of distinct points in `z_set`, within a tolerance of
/// `1e-9 * (1 + max |f|)` over the set. `f` must be evaluable at the join
/// and meet of any pair (total functions on the lattice qualify).
pub fn is_submodular_on<F>(mut f: F, z_set: &[StateVec]) -> SubmodularityCheck
where
    F: FnMut(&StateVec) -> f64,
{
    let base: Vec<f64> = z_set.iter().map(&mut f).collect();
    let scale = base.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tolerance = 1e-9 * (1.0 + scale);

    let mut memo: HashMap<StateVec, f64> = HashMap::new();
    for (p, &v) in z_set.iter().zip(&base) {
        memo.insert(p.clone(), v);
    }
    let mut worst = f64::NEG_INFINITY;
    for i in 0..z_set.len() {
        for j in (i + 1)..z_set.len() {
            let (y, z) = (&z_set[i], &z_set[j]);
            if y == z {
                continue;
            }
            let join = y.join(z);
            let meet = y.meet(z);
            let f_join = *memo.entry(join).or_insert_with_key(|p| f(p));
            let f_meet = *memo.entry(meet).or_insert_with_key(|p| f(p));
            let excess = f_join + f_meet - base[i] - base[j];
            worst = worst.max(excess);
        }
    }
    SubmodularityCheck {
        holds: !(worst > tolerance),
        worst_violation: worst.max(0.0),
        tolerance,
    }
}

/// Combinatorial structure of the local pair set `Z(x)`, independent of the
/// anchor and of the function being checked: the distinct lattice offsets
/// touched by any pair's join or meet, and per pair the offset indices to
/// combine. Built once per dimension and cached.
struct LocalPairTable {
    /// Offsets as sparse bump lists `(dim, count)`, `count <= 2`, at most
    /// four bumped dims. The first `z_len` entries are the pair-set points
    /// themselves.
    offsets: Vec<Vec<(u32, u8)>>,
    z_len: usize,
    /// `(i, j, join, meet)` offset indices per unordered pair.
    pairs: Vec<(u32, u32, u32, u32)>,
}

impl LocalPairTable {
    fn build(n: usize) -> Self {
        // Z(x) as bump multisets (s, s') with s <= s' over {stay} ∪ dims.
        let mut offsets: Vec<Vec<(u32, u8)>> = Vec::with_capacity(1 + n + n * (n + 1) / 2);
        offsets.push(vec![]);
        for d in 0..n {
            offsets.push(vec![(d as u32, 1)]);
        }
        for a in 0..n {
            offsets.push(vec![(a as u32, 2)]);
            for b in (a + 1)..n {
                offsets.push(vec![(a as u32, 1), (b as u32, 1)]);
            }
        }
        let z_len = offsets.len();

        let key_of = |bumps: &[(u32, u8)]| -> u64 {
            let mut key = 0u64;
            let mut slot = 0;
            for &(dim, count) in bumps {
                for _ in 0..count {
                    key |= (dim as u64 + 1) << (16 * slot);
                    slot += 1;
                }
            }
            key
        };
        let mut index: HashMap<u64, u32> = offsets
            .iter()
            .enumerate()
            .map(|(i, b)| (key_of(b), i as u32))
            .collect();

        let mut pairs = Vec::with_capacity(z_len * (z_len - 1) / 2);
        for i in 0..z_len {
            for j in (i + 1)..z_len {
                let (join, meet) = join_meet(&offsets[i], &offsets[j]);
                let mut intern = |bumps: Vec<(u32, u8)>, offsets: &mut Vec<Vec<(u32, u8)>>| {
                    let key = key_of(&bumps);
                    *index.entry(key).or_insert_with(|| {
                        offsets.push(bumps);
                        (offsets.len() - 1) as u32
                    })
                };
                let join_idx = intern(join, &mut offsets);
                let meet_idx = intern(meet, &mut offsets);
                pairs.push((i as u32, j as u32, join_idx, meet_idx));
            }
        }
        Self {
            offsets,
            z_len,
            pairs,
        }
    }

    fn cached(n: usize) -> Arc<LocalPairTable> {
        static TABLES: std::sync::OnceLock<std::sync::Mutex<HashMap<usize, Arc<LocalPairTable>>>> =
            std::sync::OnceLock::new();
        let tables = TABLES.get_or_init(|| std::sync::Mutex::new(HashMap::new()));
        let mut guard = tables.lock().expect("pair table lock");
        guard
            .entry(n)
            .or_insert_with(|| Arc::new(LocalPairTable::build(n)))
            .clone()
    }
}

/// Elementwise max and min of two sparse bump multisets (sorted by dim).
fn join_meet(a: &[(u32, u8)], b: &[(u32, u8)]) -> (Vec<(u32, u8)>, Vec<(u32, u8)>) {
    let mut join = Vec::with_capacity(4);
    let mut meet = Vec::with_capacity(2);
    let (mut ia, mut ib) = (0, 0);
    while ia < a.len() || ib < b.len() {
        match (a.get(ia), b.get(ib)) {
            (Some(&(da, ca)), Some(&(db, cb))) if da == db => {
                join.push((da, ca.max(cb)));
                meet.push((da, ca.min(cb)));
                ia += 1;
                ib += 1;
            }
            (Some(&(da, ca)), Some(&(db, _))) if da < db => {
                join.push((da, ca));
                ia += 1;
            }
            (Some(_), Some(&(db, cb))) => {
                join.push((db, cb));
                ib += 1;
            }
            (Some(&(da, ca)), None) => {
                join.push((da, ca));
                ia += 1;
            }
            (None, Some(&(db, cb))) => {
                join.push((db, cb));
                ib += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    (join, meet)
}

/// Submodularity of a min-of-cuts function on the local pair set `Z(x)`,
/// equivalent to [`is_submodular_on`] over [`local_check_set`] but
/// specialized to the backward sweep's hot loop: every point of interest is
/// `x` plus at most four unit bumps, so a cut evaluation reduces to its
/// cached value at `x` plus a handful of slope terms, and the pair
/// combinatorics are precomputed per dimension.
///
/// [`local_check_set`]: crate::state::local_check_set
pub fn pwa_submodular_on_local_set(q: PwaView<'_>, x: &StateVec) -> SubmodularityCheck {
    let n = x.dim();
    let table = LocalPairTable::cached(n);
    let cuts = q.cuts();
    let base: Vec<f64> = cuts.iter().map(|h| h.eval(x)).collect();

    let mut values = Vec::with_capacity(table.offsets.len());
    for bumps in &table.offsets {
        let mut min = f64::INFINITY;
        for (h, &at_x) in cuts.iter().zip(&base) {
            let mut v = at_x;
            for &(dim, count) in bumps {
                v += h.slope()[dim as usize] * count as f64;
            }
            min = min.min(v);
        }
        values.push(min);
    }

    let scale = values[..table.z_len]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let tolerance = 1e-9 * (1.0 + scale);
    let mut worst = f64::NEG_INFINITY;
    for &(i, j, join, meet) in &table.pairs {
        let excess =
            values[join as usize] + values[meet as usize] - values[i as usize] - values[j as usize];
        worst = worst.max(excess);
    }
    SubmodularityCheck {
        holds: !(worst > tolerance),
        worst_violation: worst.max(0.0),
        tolerance,
    }
}

/// Exact terminal continuation handle (`-C`, extended finitely off the box).
pub type TerminalFn = Arc<dyn Fn(&StateVec) -> f64 + Send + Sync>;

/// One checkpoint line: the cut added to epoch `t` in training iteration
/// `iter` (iteration 0 is the initial upper bound).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CutRecord {
    pub t: usize,
    pub iter: u32,
    pub a: Vec<f64>,
    pub b: f64,
}

/// The per-epoch family of approximations `{Q_t}` for `t = 1..=t_bar`, plus
/// the exact terminal function at `t_bar + 1`. The terminal is never
/// approximated.
pub struct ValueStack {
    per_t: Vec<PwaValue>,
    iter_tags: Vec<Vec<u32>>,
    terminal: TerminalFn,
}

impl ValueStack {
    /// A fresh stack with the same initial upper-bound cut at every epoch.
    pub fn new(t_bar: usize, initial: Hyperplane, terminal: TerminalFn) -> Self {
        assert!(t_bar >= 1, "horizon must have at least one epoch");
        Self {
            per_t: (0..t_bar).map(|_| PwaValue::new(initial.clone())).collect(),
            iter_tags: vec![vec![0]; t_bar],
            terminal,
        }
    }

    pub fn t_bar(&self) -> usize {
        self.per_t.len()
    }

    pub fn dim(&self) -> usize {
        self.per_t[0].cuts()[0].dim()
    }

    /// The approximation at epoch `t` (1-based, `t <= t_bar`).
    pub fn value_fn(&self, t: usize) -> &PwaValue {
        &self.per_t[t - 1]
    }

    pub fn terminal(&self) -> &TerminalFn {
        &self.terminal
    }

    /// Evaluates the stack at `(t, x)`; `t = t_bar + 1` hits the exact
    /// terminal function.
    pub fn evaluate(&self, t: usize, x: &StateVec) -> f64 {
        if t == self.t_bar() + 1 {
            (self.terminal)(x)
        } else {
            self.per_t[t - 1].evaluate(x)
        }
    }

    /// Iteration tag of each cut at epoch `t`, parallel to the cut list.
    pub fn iter_tags(&self, t: usize) -> &[u32] {
        &self.iter_tags[t - 1]
    }

    /// View of `Q_t` as it stood before training iteration `iter` (tags are
    /// nondecreasing because cuts are append-only).
    pub fn view_before_iter(&self, t: usize, iter: u32) -> PwaView<'_> {
        let tags = &self.iter_tags[t - 1];
        let len = tags.partition_point(|&tag| tag < iter);
        self.per_t[t - 1].prefix_view(len.max(1))
    }

    pub fn add_cut(&mut self, t: usize, iter: u32, h: Hyperplane) {
        self.per_t[t - 1].add_cut(h);
        self.iter_tags[t - 1].push(iter);
    }

    /// Upper bound at the origin, `Q_1(0)`.
    pub fn origin_bound(&self) -> f64 {
        let origin = StateVec::zeros(self.dim());
        self.per_t[0].evaluate(&origin)
    }

    /// Optional compaction: drops cuts that support the minimum nowhere on
    /// the box. Off by default in training; intended for desk-scale spaces.
    pub fn compact(&mut self, space: &StateSpace) {
        for t in 0..self.per_t.len() {
            let q = &self.per_t[t];
            let mut keep = vec![false; q.cuts().len()];
            for x in space.iter_states() {
                let tol = default_tie_tol(q.evaluate(&x));
                for j in q.supporting_indices(&x, tol) {
                    keep[j] = true;
                }
            }
            let cuts: Vec<Hyperplane> = q
                .cuts()
                .iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(h, _)| h.clone())
                .collect();
            let tags: Vec<u32> = self.iter_tags[t]
                .iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(&tag, _)| tag)
                .collect();
            self.per_t[t] = PwaValue::from_cuts(cuts).expect("at least one cut supports");
            self.iter_tags[t] = tags;
        }
    }

    /// Writes one JSON record per cut. Doubles survive the decimal round
    /// trip bit-exactly.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<(), PwaError> {
        for (t_idx, q) in self.per_t.iter().enumerate() {
            for (h, &iter) in q.cuts().iter().zip(&self.iter_tags[t_idx]) {
                let record = CutRecord {
                    t: t_idx + 1,
                    iter,
                    a: h.slope().to_vec(),
                    b: h.offset(),
                };
                serde_json::to_writer(&mut w, &record)?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    /// Reconstructs a stack from checkpoint lines. Every epoch in
    /// `1..=t_bar` must have at least one cut and every cut must match the
    /// state dimension `n`.
    pub fn read_checkpoint<R: BufRead>(
        r: R,
        n: usize,
        t_bar: usize,
        terminal: TerminalFn,
    ) -> Result<Self, PwaError> {
        let mut cuts: Vec<Vec<Hyperplane>> = vec![Vec::new(); t_bar];
        let mut tags: Vec<Vec<u32>> = vec![Vec::new(); t_bar];
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: CutRecord = serde_json::from_str(&line)?;
            if record.t < 1 || record.t > t_bar {
                return Err(PwaError::BadCutEpoch { t: record.t, t_bar });
            }
            if record.a.len() != n {
                return Err(PwaError::CutDimension {
                    expected: n,
                    got: record.a.len(),
                });
            }
            cuts[record.t - 1].push(Hyperplane::new(record.a, record.b)?);
            tags[record.t - 1].push(record.iter);
        }
        let mut per_t = Vec::with_capacity(t_bar);
        for (t_idx, c) in cuts.into_iter().enumerate() {
            if c.is_empty() {
                return Err(PwaError::MissingEpoch { t: t_idx + 1 });
            }
            per_t.push(PwaValue::from_cuts(c)?);
        }
        Ok(Self {
            per_t,
            iter_tags: tags,
            terminal,
        })
    }
}
