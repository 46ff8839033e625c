//! Linear algebra over symbolic message coefficient vectors.
//!
//! Every signal in the simulator is a linear combination of source messages.
//! A [`CoeffVec`] records the combination sparsely by [`MessageId`], and an
//! [`Equation`] pairs it with the complex value a node actually holds. Rank,
//! span membership, elimination and decoding all run through this module.
//!
//! Arithmetic is plain `f64` complex; rank and equality decisions are gated by
//! tolerances. Pivoting is deterministic (largest magnitude, ties resolved by
//! row order after sorting columns by `MessageId`), so identical inputs reduce
//! identically.

use crate::matrix::{CMatrix, LuDecomposition};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Coefficients below this magnitude are dropped from a [`CoeffVec`].
pub const ZERO_THRESHOLD: f64 = 1e-12;
/// Default relative tolerance for span membership, elimination and solving.
pub const SPAN_TOL: f64 = 1e-9;
/// Decode systems with a 1-norm condition estimate above this are rejected.
pub const CONDITION_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EqError {
    #[error(
        "coefficient on {id} cannot be cancelled by the known equations (residual {residual:.3e})"
    )]
    NotEliminable { id: MessageId, residual: f64 },
    #[error("decode system is singular")]
    Singular,
    #[error("decode system is ill-conditioned (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },
    #[error("back-substitution residual {residual:.3e} exceeds tolerance")]
    ResidualTooLarge { residual: f64 },
    #[error("{equations} equations supplied for {unknowns} unknowns")]
    ShapeMismatch { equations: usize, unknowns: usize },
    #[error("equation involves {id}, which is not among the unknowns")]
    OutsideUnknowns { id: MessageId },
}

impl EqError {
    /// True for failures caused by an unlucky (near measure-zero) channel draw
    /// rather than by a malformed request.
    pub fn is_degenerate_draw(&self) -> bool {
        matches!(
            self,
            EqError::Singular | EqError::IllConditioned { .. } | EqError::ResidualTooLarge { .. }
        )
    }
}

/// Identity of one source message: round `l`, intended destination, and the
/// symbol position within that destination's block (μ, ν, ω for three users).
///
/// Ordering is lexicographic on `(round, dest, slot_sym)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MessageId {
    pub round: u32,
    pub dest: u32,
    pub slot_sym: u32,
}

impl MessageId {
    pub fn new(round: u32, dest: u32, slot_sym: u32) -> Self {
        assert!(
            round >= 1 && dest >= 1 && slot_sym >= 1,
            "message indices are one-based"
        );
        Self {
            round,
            dest,
            slot_sym,
        }
    }
}

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.slot_sym {
            1 => write!(f, "μ{}({})", self.dest, self.round),
            2 => write!(f, "ν{}({})", self.dest, self.round),
            3 => write!(f, "ω{}({})", self.dest, self.round),
            s => write!(f, "m{}_{}({})", self.dest, s, self.round),
        }
    }
}

/// Sparse complex coefficient vector over message ids.
///
/// No stored entry is smaller than [`ZERO_THRESHOLD`] in magnitude.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoeffVec {
    entries: BTreeMap<MessageId, Complex64>,
}

impl CoeffVec {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn unit(id: MessageId) -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(id, Complex64::new(1.0, 0.0));
        Self { entries }
    }

    /// Duplicate ids are summed.
    pub fn from_entries(entries: impl IntoIterator<Item = (MessageId, Complex64)>) -> Self {
        let mut v = Self::zero();
        for (id, c) in entries {
            *v.entries.entry(id).or_default() += c;
        }
        v.prune();
        v
    }

    pub fn get(&self, id: MessageId) -> Complex64 {
        self.entries.get(&id).copied().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (MessageId, Complex64)> + '_ {
        self.entries.iter().map(|(id, c)| (*id, *c))
    }

    pub fn support(&self) -> impl Iterator<Item = MessageId> + '_ {
        self.entries.keys().copied()
    }

    pub fn support_set(&self) -> BTreeSet<MessageId> {
        self.support().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Same as [`CoeffVec::is_empty`]: pruning leaves no zero entries.
    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries
            .values()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        let mut v = self.clone();
        v.scale(factor);
        v
    }

    pub fn scale(&mut self, factor: Complex64) {
        for c in self.entries.values_mut() {
            *c *= factor;
        }
        self.prune();
    }

    /// `self += factor * other`
    pub fn add_scaled(&mut self, other: &CoeffVec, factor: Complex64) {
        for (id, c) in &other.entries {
            *self.entries.entry(*id).or_default() += factor * c;
        }
        self.prune();
    }

    /// Substitutes message values: `Σ coeff(id) · value(id)`.
    pub fn evaluate(&self, value: impl Fn(MessageId) -> Complex64) -> Complex64 {
        self.entries.iter().map(|(id, c)| c * value(*id)).sum()
    }

    /// Largest entry-wise difference to `other`.
    pub fn distance(&self, other: &CoeffVec) -> f64 {
        let ids: BTreeSet<MessageId> = self.support().chain(other.support()).collect();
        ids.into_iter()
            .map(|id| (self.get(id) - other.get(id)).norm())
            .fold(0.0, f64::max)
    }

    pub fn approx_eq(&self, other: &CoeffVec, tol: f64) -> bool {
        self.distance(other) <= tol
    }

    fn remove(&mut self, id: MessageId) {
        self.entries.remove(&id);
    }

    fn retain(&mut self, keep: impl Fn(MessageId) -> bool) {
        self.entries.retain(|id, _| keep(*id));
    }

    fn prune(&mut self) {
        self.entries.retain(|_, c| c.norm() >= ZERO_THRESHOLD);
    }
}

/// A coefficient vector together with the realised value a node holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Equation {
    pub coeffs: CoeffVec,
    pub value: Complex64,
}

impl Equation {
    pub fn new(coeffs: CoeffVec, value: Complex64) -> Self {
        Self { coeffs, value }
    }

    /// The trivial equation `1 · id = value` a source holds for its own message.
    pub fn message(id: MessageId, value: Complex64) -> Self {
        Self::new(CoeffVec::unit(id), value)
    }

    pub fn zero() -> Self {
        Self::new(CoeffVec::zero(), Complex64::new(0.0, 0.0))
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self::new(self.coeffs.scaled(factor), self.value * factor)
    }

    pub fn add_scaled(&mut self, other: &Equation, factor: Complex64) {
        self.coeffs.add_scaled(&other.coeffs, factor);
        self.value += factor * other.value;
    }

    /// `|value − coeffs · truth|`
    pub fn residual(&self, truth: impl Fn(MessageId) -> Complex64) -> f64 {
        (self.value - self.coeffs.evaluate(truth)).norm()
    }
}

/// Rows the elimination routines can operate on.
trait Row: Clone {
    fn coeffs(&self) -> &CoeffVec;
    fn scale_by(&mut self, factor: Complex64);
    fn sub_scaled(&mut self, pivot: &Self, factor: Complex64);
    fn clear(&mut self, id: MessageId);
}

impl Row for CoeffVec {
    fn coeffs(&self) -> &CoeffVec {
        self
    }
    fn scale_by(&mut self, factor: Complex64) {
        self.scale(factor);
    }
    fn sub_scaled(&mut self, pivot: &Self, factor: Complex64) {
        self.add_scaled(pivot, -factor);
    }
    fn clear(&mut self, id: MessageId) {
        self.remove(id);
    }
}

impl Row for Equation {
    fn coeffs(&self) -> &CoeffVec {
        &self.coeffs
    }
    fn scale_by(&mut self, factor: Complex64) {
        self.coeffs.scale(factor);
        self.value *= factor;
    }
    fn sub_scaled(&mut self, pivot: &Self, factor: Complex64) {
        self.add_scaled(pivot, -factor);
    }
    fn clear(&mut self, id: MessageId) {
        self.coeffs.remove(id);
    }
}

/// Gauss–Jordan reduction restricted to `columns`, visited in order.
///
/// Returns the pivot rows, each normalised to 1 on its pivot column and zero on
/// every other pivot column. Rows whose best candidate is at or below `floor`
/// on a column do not pivot there.
fn reduce<R: Row>(rows: Vec<R>, columns: &[MessageId], floor: f64) -> Vec<(MessageId, R)> {
    let mut remaining = rows;
    let mut pivots: Vec<(MessageId, R)> = Vec::new();
    for &col in columns {
        let mut best: Option<(usize, f64)> = None;
        for (i, r) in remaining.iter().enumerate() {
            let mag = r.coeffs().get(col).norm();
            if best.is_none_or(|(_, m)| mag > m) {
                best = Some((i, mag));
            }
        }
        let Some((bi, mag)) = best else { break };
        if mag <= floor {
            continue;
        }
        let mut pivot = remaining.remove(bi);
        let inv = pivot.coeffs().get(col).inv();
        pivot.scale_by(inv);
        for r in remaining
            .iter_mut()
            .chain(pivots.iter_mut().map(|(_, r)| r))
        {
            let f = r.coeffs().get(col);
            if f != Complex64::new(0.0, 0.0) {
                r.sub_scaled(&pivot, f);
                r.clear(col);
            }
        }
        pivots.push((col, pivot));
    }
    pivots
}

fn columns_of<'a, R: Row + 'a>(rows: impl IntoIterator<Item = &'a R>) -> Vec<MessageId> {
    let ids: BTreeSet<MessageId> = rows
        .into_iter()
        .flat_map(|r| r.coeffs().support())
        .collect();
    ids.into_iter().collect()
}

/// Output of [`row_reduce`].
#[derive(Debug, Clone)]
pub struct RowReduction {
    pub basis: Vec<CoeffVec>,
    pub rank: usize,
}

/// Reduced row echelon basis of the span of `vectors`.
///
/// `tol` is relative to the largest coefficient magnitude in the input.
pub fn row_reduce(vectors: &[CoeffVec], tol: f64) -> RowReduction {
    assert!(tol > 0.0, "tolerance must be positive");
    let scale = vectors.iter().map(CoeffVec::max_abs).fold(0.0, f64::max);
    let columns = columns_of(vectors);
    let basis: Vec<CoeffVec> = reduce(vectors.to_vec(), &columns, tol * scale)
        .into_iter()
        .map(|(_, row)| row)
        .collect();
    RowReduction {
        rank: basis.len(),
        basis,
    }
}

/// A reduced basis ready for repeated membership queries.
#[derive(Debug, Clone)]
pub struct SpanBasis {
    pivots: Vec<(MessageId, CoeffVec)>,
}

impl SpanBasis {
    pub fn new(vectors: &[CoeffVec], tol: f64) -> Self {
        let scale = vectors.iter().map(CoeffVec::max_abs).fold(0.0, f64::max);
        let columns = columns_of(vectors);
        Self {
            pivots: reduce(vectors.to_vec(), &columns, tol * scale),
        }
    }

    pub fn rank(&self) -> usize {
        self.pivots.len()
    }

    /// What is left of `v` after eliminating every pivot column.
    pub fn residual(&self, v: &CoeffVec) -> CoeffVec {
        let mut r = v.clone();
        for (col, row) in &self.pivots {
            let f = r.get(*col);
            if f != Complex64::new(0.0, 0.0) {
                r.add_scaled(row, -f);
                r.remove(*col);
            }
        }
        r
    }

    pub fn contains(&self, v: &CoeffVec, tol: f64) -> bool {
        let norm = v.norm();
        norm == 0.0 || self.residual(v).norm() <= tol * norm
    }
}

/// Whether `v` lies in the span of `basis`, judged by the relative norm of the
/// elimination residual. `basis` need not be reduced beforehand.
pub fn in_span(v: &CoeffVec, basis: &[CoeffVec], tol: f64) -> bool {
    SpanBasis::new(basis, tol).contains(v, tol)
}

/// Indices of the items connected to `seed` through shared message ids.
///
/// Rows outside this component cannot influence elimination against `seed`,
/// so callers use it to keep bases small on long runs.
pub fn connected_component<T>(
    items: &[T],
    coeffs: impl Fn(&T) -> &CoeffVec,
    seed: impl IntoIterator<Item = MessageId>,
) -> Vec<usize> {
    let mut ids: BTreeSet<MessageId> = seed.into_iter().collect();
    let mut taken = vec![false; items.len()];
    loop {
        let mut grew = false;
        for (i, item) in items.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let cv = coeffs(item);
            if cv.support().any(|id| ids.contains(&id)) {
                taken[i] = true;
                ids.extend(cv.support());
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }
    (0..items.len()).filter(|&i| taken[i]).collect()
}

/// Cancels every coefficient of `received` outside `targets` using `known`.
///
/// Both the coefficients and the value are updated by the same row operations.
/// The returned equation is supported on `targets` only.
pub fn eliminate_known(
    received: &Equation,
    known: &[Equation],
    targets: &BTreeSet<MessageId>,
    tol: f64,
) -> Result<Equation, EqError> {
    let rows: Vec<Equation> = connected_component(known, |e| &e.coeffs, received.coeffs.support())
        .into_iter()
        .map(|i| known[i].clone())
        .collect();
    let off_target: Vec<MessageId> = columns_of(rows.iter().chain(std::iter::once(received)))
        .into_iter()
        .filter(|id| !targets.contains(id))
        .collect();
    let scale = rows
        .iter()
        .map(|e| e.coeffs.max_abs())
        .fold(received.coeffs.max_abs(), f64::max);

    let mut cleaned = received.clone();
    for (col, pivot) in reduce(rows, &off_target, tol * scale) {
        let f = cleaned.coeffs.get(col);
        if f != Complex64::new(0.0, 0.0) {
            cleaned.add_scaled(&pivot, -f);
            cleaned.coeffs.remove(col);
        }
    }

    let floor = tol * received.coeffs.max_abs().max(ZERO_THRESHOLD);
    if let Some((id, c)) = cleaned
        .coeffs
        .iter()
        .filter(|(id, _)| !targets.contains(id))
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
    {
        if c.norm() > floor {
            return Err(EqError::NotEliminable {
                id,
                residual: c.norm(),
            });
        }
    }
    cleaned.coeffs.retain(|id| targets.contains(&id));
    Ok(cleaned)
}

/// Result of [`solve_messages_detailed`].
#[derive(Debug, Clone)]
pub struct Solution {
    pub values: BTreeMap<MessageId, Complex64>,
    /// 1-norm condition estimate of the coefficient matrix.
    pub condition: f64,
    /// `‖A x − b‖`
    pub residual: f64,
}

/// Solves the square system `eqs` for `unknowns`.
pub fn solve_messages(
    eqs: &[Equation],
    unknowns: &[MessageId],
    tol: f64,
) -> Result<BTreeMap<MessageId, Complex64>, EqError> {
    solve_messages_detailed(eqs, unknowns, tol).map(|s| s.values)
}

pub fn solve_messages_detailed(
    eqs: &[Equation],
    unknowns: &[MessageId],
    tol: f64,
) -> Result<Solution, EqError> {
    if eqs.len() != unknowns.len() {
        return Err(EqError::ShapeMismatch {
            equations: eqs.len(),
            unknowns: unknowns.len(),
        });
    }
    let column: BTreeMap<MessageId, usize> = unknowns
        .iter()
        .enumerate()
        .map(|(j, id)| (*id, j))
        .collect();
    let n = unknowns.len();
    let mut a = CMatrix::zeros(n, n);
    for (i, eq) in eqs.iter().enumerate() {
        for (id, c) in eq.coeffs.iter() {
            let j = *column.get(&id).ok_or(EqError::OutsideUnknowns { id })?;
            a.set(i, j, c);
        }
    }
    let b: Vec<Complex64> = eqs.iter().map(|e| e.value).collect();
    if n == 0 {
        return Ok(Solution {
            values: BTreeMap::new(),
            condition: 1.0,
            residual: 0.0,
        });
    }

    let scale = a.max_abs();
    let lu = LuDecomposition::factor(&a, ZERO_THRESHOLD * scale.max(ZERO_THRESHOLD))
        .ok_or(EqError::Singular)?;
    let condition = a.norm_one() * lu.inverse().norm_one();
    if !condition.is_finite() || condition > CONDITION_LIMIT {
        return Err(EqError::IllConditioned { condition });
    }
    let x = lu.solve(&b);
    let residual = a
        .mul_vec(&x)
        .iter()
        .zip(&b)
        .map(|(ax, bi)| (ax - bi).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let b_norm = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if residual > tol * b_norm {
        return Err(EqError::ResidualTooLarge { residual });
    }
    Ok(Solution {
        values: unknowns.iter().copied().zip(x).collect(),
        condition,
        residual,
    })
}
