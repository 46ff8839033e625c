//! Closed-form DoF values, bound tables and measured DoF.
//!
//! Bounds and counts are exact rationals; the `approx` field is for display.

use crate::schemes::{run_scheme, RunOptions, SchemeError, SchemeId, SimReport};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use std::fmt;

/// A DoF value kept exactly, with a float copy.
/// Comparisons use the exact value only.
#[derive(Debug, Clone)]
pub struct DofValue {
    pub exact: BigRational,
    pub approx: f64,
}

impl PartialEq for DofValue {
    fn eq(&self, other: &Self) -> bool {
        self.exact == other.exact
    }
}

impl Eq for DofValue {}

impl PartialOrd for DofValue {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DofValue {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.exact.cmp(&other.exact)
    }
}

impl DofValue {
    pub fn new(exact: BigRational) -> Self {
        let approx = exact.to_f64().unwrap_or(f64::NAN);
        Self { exact, approx }
    }

    pub fn from_ratio(numer: u64, denom: u64) -> Self {
        Self::new(BigRational::new(BigInt::from(numer), BigInt::from(denom)))
    }

    /// `"num/den"`, with denominator 1 for integers.
    pub fn fraction(&self) -> String {
        format!("{}/{}", self.exact.numer(), self.exact.denom())
    }
}

impl fmt::Display for DofValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.exact)
    }
}

fn big(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Harmonic number `1 + 1/2 + … + 1/K`.
pub fn harmonic_number(k: u32) -> BigRational {
    (1..=k as i64).fold(BigRational::zero(), |acc, i| acc + big(i).recip())
}

/// `K / (1 + 1/2 + … + 1/K)`, the delayed-CSIT broadcast DoF and the network's upper bound.
pub fn harmonic_bound(k: u32) -> DofValue {
    assert!(k >= 1, "K must be at least 1");
    DofValue::new(big(k as i64) / harmonic_number(k))
}

/// DoF of treating each hop separately: `4/3 − 2/(3(3K−1))`.
pub fn cascade_dof(k: u32) -> DofValue {
    assert!(k >= 2, "K must be at least 2");
    DofValue::new(big(4) / big(3) - big(2) / big(3 * (3 * k as i64 - 1)))
}

/// Achievable lower bound and converse upper bound for the network.
pub fn theorem2_bounds(k: u32) -> (DofValue, DofValue) {
    assert!(k >= 2, "K must be at least 2");
    let upper = harmonic_bound(k);
    if k == 2 {
        (upper.clone(), upper)
    } else {
        (DofValue::new(big(3) / big(2)), upper)
    }
}

/// Delivered messages per slot.
pub fn measured_dof_counts(delivered: usize, slots: usize) -> DofValue {
    assert!(slots > 0, "no slots used");
    DofValue::new(BigRational::new(
        BigInt::from(delivered),
        BigInt::from(slots),
    ))
}

pub fn measured_dof(report: &SimReport) -> DofValue {
    measured_dof_counts(report.messages_delivered, report.slots_used)
}

/// One row of the bound table.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub users: u32,
    pub cascade: DofValue,
    pub lower: DofValue,
    pub upper: DofValue,
}

pub fn bound_table(users: impl IntoIterator<Item = u32>) -> Vec<BoundRow> {
    users
        .into_iter()
        .map(|k| {
            let (lower, upper) = theorem2_bounds(k);
            BoundRow {
                users: k,
                cascade: cascade_dof(k),
                lower,
                upper,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub rounds: usize,
    pub measured: DofValue,
    pub asymptote: DofValue,
    /// `asymptote − measured`.
    pub gap: DofValue,
}

/// Runs `scheme` once per entry of `rounds` and compares with the scheme's asymptote.
pub fn convergence_table(
    scheme: SchemeId,
    layers: usize,
    users: usize,
    rounds: &[usize],
    seed: u64,
) -> Result<Vec<ConvergenceRow>, SchemeError> {
    if rounds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SchemeError::InvalidParameters(
            "round list must be strictly increasing".into(),
        ));
    }
    let asymptote = theorem2_bounds(users as u32).0;
    rounds
        .iter()
        .map(|&l| {
            let report = run_scheme(scheme, layers, users, l, seed, &RunOptions::default())?;
            let measured = measured_dof(&report);
            let gap = DofValue::new(&asymptote.exact - &measured.exact);
            Ok(ConvergenceRow {
                rounds: l,
                measured,
                asymptote: asymptote.clone(),
                gap,
            })
        })
        .collect()
}

/// Whether the gap column never increases.
pub fn gaps_non_increasing(rows: &[ConvergenceRow]) -> bool {
    rows.windows(2).all(|w| w[1].gap.exact <= w[0].gap.exact)
}

/// `cascade < lower ≤ upper = harmonic` for one K.
pub fn ordering_holds(k: u32) -> bool {
    let (lower, upper) = theorem2_bounds(k);
    cascade_dof(k) < lower && lower <= upper && upper == harmonic_bound(k)
}
