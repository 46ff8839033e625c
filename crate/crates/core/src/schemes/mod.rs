//! Executable transmission schemes.
//!
//! Every scheme is expressed as a [`Schedule`]: per slot, per layer and per
//! node, what to transmit and what to do with the received signal. The
//! [`Simulation`] executor runs a schedule through the network module, which
//! enforces formability, full-duplex causality and the CSIT ledger at every
//! step, and audits every equation against the injected ground truth.
//!
//! * [`af`]: amplify-and-forward reduction to an equivalent single-hop
//!   broadcast channel (global-range feedback) with a pluggable inner code.
//! * [`onehop`]: the pipelined multi-round schemes for one-hop-range feedback
//!   (two users, three users, and more than three users by embedding).

pub mod af;
pub mod onehop;
mod sim;

pub use af::{
    af_gains, build_global_schedule, equivalent_channel, equivalent_from_hops, relay_gains,
    AfGains, BroadcastInnerCode, TwoUserInnerCode,
};
pub use onehop::{
    build_pipeline_schedule, build_round_schedule, build_round_schedule_33, inject_unformable_swap,
    PipelinePattern, SwapSlot,
};
pub use sim::{DecodeOutcome, RunLog, Simulation};

use crate::eqspace::{EqError, MessageId, SPAN_TOL};
use crate::network::{sub_seed, EqLabel, FeedbackMode, NetworkError, QueryStats};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SchemeError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("slot {slot}, node {node} of layer {layer}: {source}")]
    Equation {
        slot: usize,
        layer: usize,
        node: usize,
        #[source]
        source: EqError,
    },
    #[error("slot {slot}: schedule refers to {label}, which nobody holds")]
    UnknownEquation { slot: usize, label: EqLabel },
    #[error("degenerate channel draws in {attempts} consecutive attempts")]
    DegenerateDraws { attempts: usize },
    #[error("invalid scheme parameters: {0}")]
    InvalidParameters(String),
}

impl SchemeError {
    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            SchemeError::Network(NetworkError::CsitAccess { .. }) => "csit-access",
            SchemeError::Network(NetworkError::Formability { .. }) => "formability",
            SchemeError::Network(NetworkError::InvalidConfig(_)) => "invalid-config",
            SchemeError::Equation { source, .. } if source.is_degenerate_draw() => "degenerate",
            SchemeError::Equation { .. } => "elimination",
            SchemeError::UnknownEquation { .. } => "unknown-equation",
            SchemeError::DegenerateDraws { .. } => "degenerate",
            SchemeError::InvalidParameters(_) => "invalid-parameters",
        }
    }

    fn is_degenerate_draw(&self) -> bool {
        matches!(self, SchemeError::Equation { source, .. } if source.is_degenerate_draw())
    }
}

/// What one transmitter (source antenna or relay) sends in a slot.
#[derive(Debug, Clone, PartialEq)]
pub enum TxDirective {
    Silent,
    /// A source antenna sends one of its own messages.
    Fresh(MessageId),
    /// Resend an equation the node holds.
    Forward(EqLabel),
    /// Form a next-layer equation from held equations and delayed CSI.
    Reconstruct(EqLabel),
    /// Amplify-and-forward the signal received in this same slot.
    Amplify,
}

impl fmt::Display for TxDirective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TxDirective::Silent => f.write_str("silence"),
            TxDirective::Fresh(id) => write!(f, "message {id}"),
            TxDirective::Forward(l) => write!(f, "forwarded {l}"),
            TxDirective::Reconstruct(l) => write!(f, "reconstructed {l}"),
            TxDirective::Amplify => f.write_str("amplified reception"),
        }
    }
}

/// What a receiver does with the signal it gets in a slot.
#[derive(Debug, Clone, PartialEq)]
pub enum RxDirective {
    Discard,
    /// Keep the received equation under this label.
    Store(EqLabel),
    /// Cancel everything but `target` using held equations. With a sender, the
    /// result is divided by the incoming gain from that transmitter so it
    /// equals `target` exactly; without one it is kept as a scaled copy.
    Recover {
        target: EqLabel,
        sender: Option<usize>,
    },
}

/// How an equation is defined in terms of earlier ones.
#[derive(Debug, Clone, PartialEq)]
pub enum EqDefinition {
    /// `Σ_i h[hop]_{row,i}(slot) · inputs[i]`
    HopRow {
        hop: usize,
        slot: usize,
        row: usize,
        inputs: Vec<EqLabel>,
    },
    /// `Σ_i H̃_{row,i}(slot) · inputs[i]` over the amplify-and-forward
    /// equivalent channel.
    EquivalentRow {
        slot: usize,
        row: usize,
        inputs: Vec<EqLabel>,
    },
}

impl EqDefinition {
    pub fn inputs(&self) -> &[EqLabel] {
        match self {
            EqDefinition::HopRow { inputs, .. } | EqDefinition::EquivalentRow { inputs, .. } => {
                inputs
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodePoint {
    pub after_slot: usize,
    /// One-based destination index.
    pub dest: usize,
    pub equations: Vec<EqLabel>,
    pub unknowns: Vec<MessageId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClaimKind {
    /// Both nodes of a swap pair hold both swapped equations.
    OverheardPair,
    /// A node holds the equations it needs for its next transmissions.
    Knowledge,
}

/// Equations that must be in the span of each listed node's knowledge right
/// after `after_slot`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeClaim {
    pub after_slot: usize,
    pub kind: ClaimKind,
    pub layer: usize,
    pub nodes: Vec<usize>,
    pub labels: Vec<EqLabel>,
}

/// Directives of one slot; `tx[n-1]` covers layer `n` (1..N−1), `rx[n-2]`
/// layer `n` (2..N). Inner vectors are indexed by node, zero-based.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotPlan {
    pub tx: Vec<Vec<TxDirective>>,
    pub rx: Vec<Vec<RxDirective>>,
}

impl SlotPlan {
    fn idle(layers: usize, users: usize) -> Self {
        Self {
            tx: vec![vec![TxDirective::Silent; users]; layers - 1],
            rx: vec![vec![RxDirective::Discard; users]; layers - 1],
        }
    }
}

/// A complete transmission plan for a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub layers: usize,
    pub users: usize,
    slots: Vec<SlotPlan>,
    pub definitions: BTreeMap<EqLabel, EqDefinition>,
    /// Layer-1 labels and the message each one is.
    pub source_labels: BTreeMap<EqLabel, MessageId>,
    pub decodes: Vec<DecodePoint>,
    pub claims: Vec<KnowledgeClaim>,
    pub messages: BTreeSet<MessageId>,
}

/// Directives for a single round of a pipelined scheme.
pub type RoundSchedule = Schedule;

impl Schedule {
    pub fn new(layers: usize, users: usize) -> Self {
        assert!(
            layers >= 2 && users >= 1,
            "schedule needs at least two layers"
        );
        Self {
            layers,
            users,
            slots: Vec::new(),
            definitions: BTreeMap::new(),
            source_labels: BTreeMap::new(),
            decodes: Vec::new(),
            claims: Vec::new(),
            messages: BTreeSet::new(),
        }
    }

    pub fn total_slots(&self) -> usize {
        self.slots.len()
    }

    /// Directives of `slot` (one-based).
    pub fn slot(&self, slot: usize) -> &SlotPlan {
        &self.slots[slot - 1]
    }

    fn ensure(&mut self, slot: usize) {
        while self.slots.len() < slot {
            self.slots.push(SlotPlan::idle(self.layers, self.users));
        }
    }

    pub fn tx(&self, slot: usize, layer: usize, node: usize) -> &TxDirective {
        &self.slots[slot - 1].tx[layer - 1][node - 1]
    }

    pub fn rx(&self, slot: usize, layer: usize, node: usize) -> &RxDirective {
        &self.slots[slot - 1].rx[layer - 2][node - 1]
    }

    /// Sets a transmit directive; panics if the antenna is already busy.
    pub fn set_tx(&mut self, slot: usize, layer: usize, node: usize, d: TxDirective) {
        self.ensure(slot);
        let cell = &mut self.slots[slot - 1].tx[layer - 1][node - 1];
        assert!(
            *cell == TxDirective::Silent,
            "slot {slot}: node {node} of layer {layer} scheduled twice"
        );
        *cell = d;
    }

    /// Overwrites a transmit directive.
    pub fn replace_tx(&mut self, slot: usize, layer: usize, node: usize, d: TxDirective) {
        self.ensure(slot);
        self.slots[slot - 1].tx[layer - 1][node - 1] = d;
    }

    pub fn set_rx(&mut self, slot: usize, layer: usize, node: usize, d: RxDirective) {
        self.ensure(slot);
        let cell = &mut self.slots[slot - 1].rx[layer - 2][node - 1];
        assert!(
            *cell == RxDirective::Discard,
            "slot {slot}: receiver {node} of layer {layer} scheduled twice"
        );
        *cell = d;
    }

    /// Overlays `other`; directive clashes panic.
    pub fn merge(&mut self, other: Schedule) {
        assert!(
            self.layers == other.layers && self.users == other.users,
            "cannot merge schedules of different networks"
        );
        for (i, plan) in other.slots.into_iter().enumerate() {
            let slot = i + 1;
            for (l, row) in plan.tx.into_iter().enumerate() {
                for (k, d) in row.into_iter().enumerate() {
                    if d != TxDirective::Silent {
                        self.set_tx(slot, l + 1, k + 1, d);
                    }
                }
            }
            for (l, row) in plan.rx.into_iter().enumerate() {
                for (k, d) in row.into_iter().enumerate() {
                    if d != RxDirective::Discard {
                        self.set_rx(slot, l + 2, k + 1, d);
                    }
                }
            }
            self.ensure(slot);
        }
        self.definitions.extend(other.definitions);
        self.source_labels.extend(other.source_labels);
        self.decodes.extend(other.decodes);
        self.claims.extend(other.claims);
        self.messages.extend(other.messages);
    }

    /// Source messages an equation is ultimately built from.
    pub fn target_messages(&self, label: &EqLabel) -> BTreeSet<MessageId> {
        if let Some(id) = self.source_labels.get(label) {
            return [*id].into_iter().collect();
        }
        match self.definitions.get(label) {
            Some(def) => def
                .inputs()
                .iter()
                .flat_map(|l| self.target_messages(l))
                .collect(),
            None => BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemeId {
    #[serde(rename = "global-k2")]
    GlobalK2,
    #[serde(rename = "onehop-33")]
    OneHop33,
    #[serde(rename = "onehop-k2")]
    OneHopK2,
    #[serde(rename = "onehop-kgt3")]
    OneHopKgt3,
}

impl SchemeId {
    pub const ALL: [SchemeId; 4] = [
        SchemeId::GlobalK2,
        SchemeId::OneHop33,
        SchemeId::OneHopK2,
        SchemeId::OneHopKgt3,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SchemeId::GlobalK2 => "global-k2",
            SchemeId::OneHop33 => "onehop-33",
            SchemeId::OneHopK2 => "onehop-k2",
            SchemeId::OneHopKgt3 => "onehop-kgt3",
        }
    }

    /// Feedback mode the scheme is designed for.
    pub fn native_feedback(&self) -> FeedbackMode {
        match self {
            SchemeId::GlobalK2 => FeedbackMode::GlobalRange,
            _ => FeedbackMode::OneHopRange,
        }
    }

    /// Checks `(layers, users)` against what the scheme supports.
    pub fn validate(&self, layers: usize, users: usize) -> Result<(), SchemeError> {
        let bad = |msg: String| Err(SchemeError::InvalidParameters(msg));
        match self {
            SchemeId::GlobalK2 if users != 2 => bad(format!("global-k2 needs K = 2, got {users}")),
            SchemeId::GlobalK2 if layers < 2 => bad(format!("global-k2 needs N ≥ 2, got {layers}")),
            SchemeId::OneHop33 if users != 3 => bad(format!("onehop-33 needs K = 3, got {users}")),
            SchemeId::OneHopK2 if users != 2 => bad(format!("onehop-k2 needs K = 2, got {users}")),
            SchemeId::OneHopKgt3 if users <= 3 => {
                bad(format!("onehop-kgt3 needs K > 3, got {users}"))
            }
            SchemeId::OneHop33 | SchemeId::OneHopK2 | SchemeId::OneHopKgt3 if layers < 3 => {
                bad(format!("{} needs N ≥ 3, got {layers}", self.as_str()))
            }
            _ => Ok(()),
        }
    }

    /// Slots a run of `rounds` rounds (blocks) occupies.
    pub fn slots_used(&self, layers: usize, rounds: usize) -> usize {
        match self {
            SchemeId::GlobalK2 => 3 * rounds,
            SchemeId::OneHop33 | SchemeId::OneHopKgt3 => 6 * rounds + 3 * (layers - 2),
            SchemeId::OneHopK2 => 3 * rounds + 3 * (layers - 2),
        }
    }

    /// Messages a run of `rounds` rounds (blocks) delivers.
    pub fn messages(&self, rounds: usize) -> usize {
        match self {
            SchemeId::GlobalK2 | SchemeId::OneHopK2 => 4 * rounds,
            SchemeId::OneHop33 | SchemeId::OneHopKgt3 => 9 * rounds,
        }
    }

    /// Sum DoF as the number of rounds grows.
    pub fn asymptotic_dof(&self) -> Ratio<u64> {
        match self {
            SchemeId::GlobalK2 | SchemeId::OneHopK2 => Ratio::new(4, 3),
            SchemeId::OneHop33 | SchemeId::OneHopKgt3 => Ratio::new(3, 2),
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| format!("unknown scheme {s:?}"))
    }
}

/// Fault injected into a schedule before running it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutation {
    /// Relay 2_1 forwards, in its first swap slot, an equation only 2_2 holds.
    UnformableSwap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Feedback mode of the ledger; `None` uses the scheme's own.
    pub feedback: Option<FeedbackMode>,
    /// Abort on the first formability or CSIT violation instead of logging it.
    pub strict: bool,
    pub noise: bool,
    pub power: f64,
    /// Span, elimination and solve tolerance.
    pub tolerance: f64,
    /// A decoded message counts as delivered when its normalised error is below this.
    pub decode_tolerance: f64,
    /// Allowed `|value − coeffs·truth|` for every equation in noise-free runs.
    pub consistency_tolerance: f64,
    pub mutation: Option<Mutation>,
    pub max_attempts: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            feedback: None,
            strict: true,
            noise: false,
            power: 1.0,
            tolerance: SPAN_TOL,
            decode_tolerance: 1e-6,
            consistency_tolerance: 1e-10,
            mutation: None,
            max_attempts: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    Formability,
    CsitAccess,
    Elimination,
    Consistency,
    OverheardPair,
    Knowledge,
    Decode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub slot: usize,
    pub detail: String,
}

/// Outcome of one scheme run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub scheme: SchemeId,
    pub layers: usize,
    pub users: usize,
    pub rounds: usize,
    pub feedback: FeedbackMode,
    /// Seed requested by the caller.
    pub seed: u64,
    /// Seed of the accepted draw (differs from `seed` after redraws).
    pub draw_seed: u64,
    pub slots_used: usize,
    pub messages_sent: usize,
    pub messages_delivered: usize,
    /// Worst normalised decode error of each destination, over all rounds.
    pub decode_residuals: Vec<f64>,
    #[serde(serialize_with = "ratio_as_string")]
    pub measured_dof: Ratio<u64>,
    pub redraw_count: usize,
    pub violations: Vec<Violation>,
    /// Worst `|value − coeffs·truth|` seen on any equation.
    pub max_consistency_residual: f64,
    pub claims_checked: usize,
    pub csi: QueryStats,
}

fn ratio_as_string<S: serde::Serializer>(r: &Ratio<u64>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
}

impl SimReport {
    pub fn max_residual(&self) -> f64 {
        self.decode_residuals.iter().copied().fold(0.0, f64::max)
    }

    pub fn all_decoded(&self) -> bool {
        self.messages_delivered == self.messages_sent
            && !self
                .violations
                .iter()
                .any(|v| v.kind == ViolationKind::Decode)
    }

    pub fn violations_of(&self, kind: ViolationKind) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(move |v| v.kind == kind)
    }
}

/// Builds the schedule for a scheme, validating its parameters.
pub fn build_schedule(
    scheme: SchemeId,
    layers: usize,
    users: usize,
    rounds: usize,
) -> Result<Schedule, SchemeError> {
    scheme.validate(layers, users)?;
    if rounds == 0 {
        return Err(SchemeError::InvalidParameters(
            "need at least one round".into(),
        ));
    }
    Ok(match scheme {
        SchemeId::GlobalK2 => build_global_schedule(layers, &TwoUserInnerCode, rounds),
        SchemeId::OneHop33 | SchemeId::OneHopKgt3 => {
            build_pipeline_schedule(&PipelinePattern::three_user(), layers, users, rounds)
        }
        SchemeId::OneHopK2 => {
            build_pipeline_schedule(&PipelinePattern::two_user(), layers, users, rounds)
        }
    })
}

const REDRAW_STREAM: u64 = 0x5245_4452; // "REDR"

/// Runs `schedule` on fresh channel draws until no decode system is degenerate.
pub fn run_schedule(
    scheme: SchemeId,
    schedule: &Schedule,
    rounds: usize,
    seed: u64,
    options: &RunOptions,
) -> Result<SimReport, SchemeError> {
    let feedback = options.feedback.unwrap_or_else(|| scheme.native_feedback());
    for attempt in 0..options.max_attempts.max(1) {
        let draw_seed = if attempt == 0 {
            seed
        } else {
            sub_seed(seed, &[REDRAW_STREAM, attempt as u64])
        };
        let mut sim = Simulation::new(schedule.clone(), draw_seed, feedback, options);
        match sim.run() {
            Ok(()) => {
                let log = sim.into_log();
                let slots_used = schedule.total_slots();
                return Ok(SimReport {
                    scheme,
                    layers: schedule.layers,
                    users: schedule.users,
                    rounds,
                    feedback,
                    seed,
                    draw_seed,
                    slots_used,
                    messages_sent: schedule.messages.len(),
                    messages_delivered: log.messages_delivered,
                    decode_residuals: log.decode_residuals(),
                    measured_dof: Ratio::new(log.messages_delivered as u64, slots_used as u64),
                    redraw_count: attempt,
                    violations: log.violations,
                    max_consistency_residual: log.max_consistency_residual,
                    claims_checked: log.claims_checked,
                    csi: log.csi,
                });
            }
            Err(e) if e.is_degenerate_draw() => continue,
            Err(e) => return Err(e),
        }
    }
    Err(SchemeError::DegenerateDraws {
        attempts: options.max_attempts.max(1),
    })
}

/// Builds and runs a scheme, applying any mutation in `options`.
pub fn run_scheme(
    scheme: SchemeId,
    layers: usize,
    users: usize,
    rounds: usize,
    seed: u64,
    options: &RunOptions,
) -> Result<SimReport, SchemeError> {
    let mut schedule = build_schedule(scheme, layers, users, rounds)?;
    if let Some(Mutation::UnformableSwap) = options.mutation {
        let pattern = match scheme {
            SchemeId::OneHopK2 => PipelinePattern::two_user(),
            SchemeId::OneHop33 | SchemeId::OneHopKgt3 => PipelinePattern::three_user(),
            SchemeId::GlobalK2 => {
                return Err(SchemeError::InvalidParameters(
                    "unformable-swap mutation needs a relay-swapping scheme".into(),
                ))
            }
        };
        inject_unformable_swap(&mut schedule, &pattern);
    }
    run_schedule(scheme, &schedule, rounds, seed, options)
}

/// Global-range amplify-and-forward scheme for two users.
pub fn run_global_range_k2(
    layers: usize,
    blocks: usize,
    seed: u64,
) -> Result<SimReport, SchemeError> {
    run_scheme(
        SchemeId::GlobalK2,
        layers,
        2,
        blocks,
        seed,
        &RunOptions::default(),
    )
}

/// One-hop-range three-user scheme.
pub fn run_one_hop_33(layers: usize, rounds: usize, seed: u64) -> Result<SimReport, SchemeError> {
    run_scheme(
        SchemeId::OneHop33,
        layers,
        3,
        rounds,
        seed,
        &RunOptions::default(),
    )
}

/// One-hop-range two-user scheme.
pub fn run_one_hop_k2(layers: usize, rounds: usize, seed: u64) -> Result<SimReport, SchemeError> {
    run_scheme(
        SchemeId::OneHopK2,
        layers,
        2,
        rounds,
        seed,
        &RunOptions::default(),
    )
}

/// One-hop-range scheme for K > 3: the three-user scheme on nodes 1..3, the
/// rest silent.
pub fn run_one_hop_kgt3(
    layers: usize,
    users: usize,
    rounds: usize,
    seed: u64,
) -> Result<SimReport, SchemeError> {
    run_scheme(
        SchemeId::OneHopKgt3,
        layers,
        users,
        rounds,
        seed,
        &RunOptions::default(),
    )
}
