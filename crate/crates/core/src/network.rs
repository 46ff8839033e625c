//! The layered relay network: topology, block-fading channels, slot-wise
//! propagation and the delayed-CSIT feedback ledger.
//!
//! Layer 1 is the K-antenna source, layers 2..N−1 hold K single-antenna
//! full-duplex relays each, and layer N holds the K destinations. Hop `n`
//! connects layer `n` to layer `n+1`; its channel in slot `t` is the K×K matrix
//! `H[n](t)` whose entry `(i, k)` is the gain from node `n_k` to node `(n+1)_i`.
//!
//! Scheme code never reads channel matrices directly. It asks a [`CsiGate`],
//! which checks each request against the [`CsitLedger`] for the active
//! feedback mode and keeps a tally of what was asked for.

use crate::eqspace::{CoeffVec, Equation, MessageId, SpanBasis};
use crate::matrix::CMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetworkError {
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
    #[error(
        "layer {layer} may not see the CSI of hop {hop} for slot {slot} (current slot {current_slot})"
    )]
    CsitAccess {
        layer: usize,
        hop: usize,
        slot: usize,
        current_slot: usize,
    },
    #[error("node {node} of layer {layer} cannot form its slot-{slot} transmission: {detail}")]
    Formability {
        layer: usize,
        node: usize,
        slot: usize,
        detail: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Number of layers N, source and destinations included.
    pub layers: usize,
    /// Users K: source antennas, relays per layer, destinations.
    pub users: usize,
    /// Per-layer power P.
    pub power: f64,
    pub noise_enabled: bool,
}

impl NetworkConfig {
    pub fn new(layers: usize, users: usize) -> Result<Self, NetworkError> {
        Self::with_power(layers, users, 1.0, false)
    }

    pub fn with_power(
        layers: usize,
        users: usize,
        power: f64,
        noise_enabled: bool,
    ) -> Result<Self, NetworkError> {
        if layers < 2 {
            return Err(NetworkError::InvalidConfig(format!(
                "need at least 2 layers, got {layers}"
            )));
        }
        if users < 2 {
            return Err(NetworkError::InvalidConfig(format!(
                "need at least 2 users, got {users}"
            )));
        }
        if !(power > 0.0 && power.is_finite()) {
            return Err(NetworkError::InvalidConfig(format!(
                "power must be positive, got {power}"
            )));
        }
        Ok(Self {
            layers,
            users,
            power,
            noise_enabled,
        })
    }

    pub fn hops(&self) -> usize {
        self.layers - 1
    }

    pub fn has_relays(&self) -> bool {
        self.layers >= 3
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed from `seed` and a list of tags.
pub fn sub_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(seed), |acc, &t| {
        splitmix64(acc ^ splitmix64(t.wrapping_add(0xA5A5_5A5A)))
    })
}

const CHANNEL_STREAM: u64 = 0x4348_414e; // "CHAN"
const TRUTH_STREAM: u64 = 0x5452_5554; // "TRUT"
const NOISE_STREAM: u64 = 0x4e4f_4953; // "NOIS"

/// Circularly-symmetric complex normal sample with the given variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Per-hop, per-slot channel matrices of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    seed: u64,
    users: usize,
    hops: usize,
    slots: usize,
    matrices: Vec<CMatrix>,
}

impl ChannelRealization {
    /// Builds a realization from explicit matrices, mainly for tests.
    pub fn from_fn(
        users: usize,
        hops: usize,
        slots: usize,
        mut f: impl FnMut(usize, usize) -> CMatrix,
    ) -> Self {
        let mut matrices = Vec::with_capacity(hops * slots);
        for slot in 1..=slots {
            for hop in 1..=hops {
                let m = f(hop, slot);
                assert!(
                    m.rows() == users && m.cols() == users,
                    "channel matrix must be K×K"
                );
                matrices.push(m);
            }
        }
        Self {
            seed: 0,
            users,
            hops,
            slots,
            matrices,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn hops(&self) -> usize {
        self.hops
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    /// Raw channel `H[hop](slot)`, one-based indices.
    ///
    /// Propagation and test oracles use this; scheme logic must go through a
    /// [`CsiGate`].
    pub fn matrix(&self, hop: usize, slot: usize) -> &CMatrix {
        assert!((1..=self.hops).contains(&hop), "hop {hop} out of range");
        assert!((1..=self.slots).contains(&slot), "slot {slot} out of range");
        &self.matrices[(slot - 1) * self.hops + (hop - 1)]
    }
}

/// Draws i.i.d. CN(0, 1) channels for slots `1..=slots`.
///
/// Each matrix is generated from its own stream keyed by `(seed, hop, slot)`,
/// so an entry depends only on those and its position.
pub fn draw_channels(config: &NetworkConfig, seed: u64, slots: usize) -> ChannelRealization {
    assert!(slots >= 1, "need at least one slot");
    let k = config.users;
    let mut r = ChannelRealization::from_fn(k, config.hops(), slots, |hop, slot| {
        let mut rng =
            ChaCha8Rng::seed_from_u64(sub_seed(seed, &[CHANNEL_STREAM, hop as u64, slot as u64]));
        CMatrix::from_fn(k, k, |_, _| complex_normal(&mut rng, 1.0))
    });
    r.seed = seed;
    r
}

/// Realised source messages, used to audit every equation in the network.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    values: BTreeMap<MessageId, Complex64>,
    variance: f64,
}

impl GroundTruth {
    pub fn draw(seed: u64, messages: impl IntoIterator<Item = MessageId>, variance: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, &[TRUTH_STREAM]));
        let values = messages
            .into_iter()
            .map(|id| (id, complex_normal(&mut rng, variance)))
            .collect();
        Self { values, variance }
    }

    pub fn from_values(values: BTreeMap<MessageId, Complex64>) -> Self {
        Self {
            values,
            variance: 1.0,
        }
    }

    /// Panics on an unknown message: every id in the network must come from the source.
    pub fn get(&self, id: MessageId) -> Complex64 {
        *self
            .values
            .get(&id)
            .unwrap_or_else(|| panic!("no ground truth for {id}"))
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn messages(&self) -> impl Iterator<Item = MessageId> + '_ {
        self.values.keys().copied()
    }
}

/// Receiver noise, unit variance per complex sample.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
    variance: f64,
}

impl NoiseSource {
    pub fn new(seed: u64, variance: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(sub_seed(seed, &[NOISE_STREAM])),
            variance,
        }
    }

    pub fn sample(&mut self) -> Complex64 {
        complex_normal(&mut self.rng, self.variance)
    }
}

/// `y[n+1] = H[n] x[n] (+ z)` for every hop at once.
///
/// `x[i]` is the transmit vector of layer `i+1` (silent antennas send exact
/// zero), `h[i]` the matching hop matrix; entry `i` of the result is what layer
/// `i+2` receives.
pub fn propagate_slot(
    x: &[Vec<Complex64>],
    h: &[&CMatrix],
    mut noise: Option<&mut NoiseSource>,
) -> Vec<Vec<Complex64>> {
    assert_eq!(
        x.len(),
        h.len(),
        "one channel matrix per transmitting layer"
    );
    x.iter()
        .zip(h)
        .map(|(xn, hn)| {
            let mut y = hn.mul_vec(xn);
            if let Some(z) = noise.as_deref_mut() {
                y.iter_mut().for_each(|yi| *yi += z.sample());
            }
            y
        })
        .collect()
}

/// Symbolic twin of [`propagate_slot`] for one hop.
///
/// Node `k` of the receiving layer gets `Σ_i h[k][i] · plan_i`; `None` is a
/// silent transmitter. Values go through the numeric path (including noise),
/// coefficients through the symbolic one, so comparing the two against the
/// ground truth audits the whole simulation.
pub fn propagate_hop(
    plans: &[Option<Equation>],
    h: &CMatrix,
    noise: Option<&mut NoiseSource>,
) -> Vec<Equation> {
    assert_eq!(plans.len(), h.cols(), "one plan per transmitting node");
    let x: Vec<Complex64> = plans
        .iter()
        .map(|p| p.as_ref().map_or(Complex64::new(0.0, 0.0), |e| e.value))
        .collect();
    let y = propagate_slot(&[x], &[h], noise).pop().unwrap_or_default();
    y.into_iter()
        .enumerate()
        .map(|(k, value)| {
            let mut coeffs = CoeffVec::zero();
            for (i, plan) in plans.iter().enumerate() {
                if let Some(p) = plan {
                    coeffs.add_scaled(&p.coeffs, h.get(k, i));
                }
            }
            Equation::new(coeffs, value)
        })
        .collect()
}

/// [`propagate_hop`] applied to every hop of a slot.
pub fn propagate_equation_slot(
    plans: &[Vec<Option<Equation>>],
    h: &[&CMatrix],
    mut noise: Option<&mut NoiseSource>,
) -> Vec<Vec<Equation>> {
    assert_eq!(
        plans.len(),
        h.len(),
        "one channel matrix per transmitting layer"
    );
    plans
        .iter()
        .zip(h)
        .map(|(p, hn)| propagate_hop(p, hn, noise.as_deref_mut()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackMode {
    /// Every node's feedback reaches the source one slot later.
    GlobalRange,
    /// Feedback travels one hop upstream only.
    OneHopRange,
}

impl fmt::Display for FeedbackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeedbackMode::GlobalRange => "global-range",
            FeedbackMode::OneHopRange => "one-hop-range",
        })
    }
}

impl std::str::FromStr for FeedbackMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "global-range" | "global" => Ok(FeedbackMode::GlobalRange),
            "one-hop-range" | "one-hop" | "onehop" => Ok(FeedbackMode::OneHopRange),
            _ => Err(format!("unknown feedback mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsitLedger {
    pub mode: FeedbackMode,
    pub current_slot: usize,
}

impl CsitLedger {
    pub fn new(mode: FeedbackMode) -> Self {
        Self {
            mode,
            current_slot: 1,
        }
    }

    pub fn at(mode: FeedbackMode, current_slot: usize) -> Self {
        Self { mode, current_slot }
    }

    pub fn visible(&self, querying_layer: usize, hop: usize, slot: usize) -> bool {
        csit_visible(self, querying_layer, hop, slot)
    }
}

/// Whether `querying_layer` knows `H[hop](slot)` during the ledger's current slot.
///
/// Receivers see their incoming hop instantly; layers further downstream get it
/// one slot later along with the data. Upstream, the source sees every hop
/// (global range) or each layer sees only its own outgoing hop (one-hop range),
/// in both cases one slot late.
pub fn csit_visible(ledger: &CsitLedger, querying_layer: usize, hop: usize, slot: usize) -> bool {
    assert!(hop >= 1, "hops are one-based");
    let past = slot < ledger.current_slot;
    if querying_layer == hop + 1 && slot <= ledger.current_slot {
        return true;
    }
    if querying_layer > hop + 1 && past {
        return true;
    }
    match ledger.mode {
        FeedbackMode::GlobalRange => querying_layer == 1 && past,
        FeedbackMode::OneHopRange => querying_layer == hop && past,
    }
}

/// One channel coefficient a plan was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct CsiUse {
    pub hop: usize,
    pub slot: usize,
}

/// Tally of CSI requests, split by where the querying layer sits relative to the hop.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct QueryStats {
    pub total: usize,
    pub denied: usize,
    /// `layer == hop`
    pub transmit_side: usize,
    /// `layer == hop + 1`
    pub receive_side: usize,
    /// `layer > hop + 1`
    pub downstream: usize,
    /// `layer < hop`
    pub upstream: usize,
}

impl QueryStats {
    /// Queries outside the transmit/receive pair of the hop.
    pub fn out_of_scope(&self) -> usize {
        self.downstream + self.upstream
    }
}

/// Ledger-checked channel accessor.
///
/// In strict mode a denied request is an error. Otherwise the coefficient is
/// still handed out and the denial is only recorded.
#[derive(Debug, Clone)]
pub struct CsiGate {
    channels: Arc<ChannelRealization>,
    ledger: CsitLedger,
    strict: bool,
    stats: QueryStats,
    denials: Vec<NetworkError>,
}

impl CsiGate {
    pub fn new(channels: Arc<ChannelRealization>, mode: FeedbackMode, strict: bool) -> Self {
        Self {
            channels,
            ledger: CsitLedger::new(mode),
            strict,
            stats: QueryStats::default(),
            denials: Vec::new(),
        }
    }

    pub fn ledger(&self) -> CsitLedger {
        self.ledger
    }

    pub fn set_slot(&mut self, slot: usize) {
        self.ledger.current_slot = slot;
    }

    pub fn stats(&self) -> QueryStats {
        self.stats
    }

    pub fn denials(&self) -> &[NetworkError] {
        &self.denials
    }

    fn admit(&mut self, layer: usize, hop: usize, slot: usize) -> Result<(), NetworkError> {
        self.stats.total += 1;
        match layer {
            l if l == hop => self.stats.transmit_side += 1,
            l if l == hop + 1 => self.stats.receive_side += 1,
            l if l > hop + 1 => self.stats.downstream += 1,
            _ => self.stats.upstream += 1,
        }
        if self.ledger.visible(layer, hop, slot) {
            return Ok(());
        }
        self.stats.denied += 1;
        let err = NetworkError::CsitAccess {
            layer,
            hop,
            slot,
            current_slot: self.ledger.current_slot,
        };
        self.denials.push(err.clone());
        if self.strict {
            Err(err)
        } else {
            Ok(())
        }
    }

    /// `h[hop]_{row,col}(slot)` as seen from `layer`; `row`/`col` are one-based.
    pub fn coefficient(
        &mut self,
        layer: usize,
        hop: usize,
        slot: usize,
        row: usize,
        col: usize,
    ) -> Result<Complex64, NetworkError> {
        self.admit(layer, hop, slot)?;
        Ok(self.channels.matrix(hop, slot).get(row - 1, col - 1))
    }

    /// Whole matrix `H[hop](slot)` as seen from `layer`.
    pub fn matrix(
        &mut self,
        layer: usize,
        hop: usize,
        slot: usize,
    ) -> Result<CMatrix, NetworkError> {
        self.admit(layer, hop, slot)?;
        Ok(self.channels.matrix(hop, slot).clone())
    }
}

/// Name of an equation `L[layer]_index(round)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EqLabel {
    pub layer: u32,
    pub index: u32,
    pub round: u32,
}

impl EqLabel {
    pub fn new(layer: u32, index: u32, round: u32) -> Self {
        Self {
            layer,
            index,
            round,
        }
    }
}

impl fmt::Display for EqLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}[{}]({})", self.index, self.layer, self.round)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnownEquation {
    pub label: Option<EqLabel>,
    pub equation: Equation,
    /// Slot in which the node obtained it; 0 for a source's own messages.
    pub learned_slot: usize,
}

/// What one node (the source, a relay, or a destination) knows.
#[derive(Debug, Clone, Default)]
pub struct NodeState {
    pub layer: usize,
    pub index: usize,
    known: Vec<KnownEquation>,
    by_label: BTreeMap<EqLabel, usize>,
    /// Indices into `known` of the equations involving each message.
    by_message: BTreeMap<MessageId, Vec<usize>>,
}

impl NodeState {
    pub fn new(layer: usize, index: usize) -> Self {
        Self {
            layer,
            index,
            ..Self::default()
        }
    }

    pub fn learn(&mut self, label: Option<EqLabel>, equation: Equation, slot: usize) {
        let index = self.known.len();
        if let Some(l) = label {
            self.by_label.insert(l, index);
        }
        for id in equation.coeffs.support() {
            self.by_message.entry(id).or_default().push(index);
        }
        self.known.push(KnownEquation {
            label,
            equation,
            learned_slot: slot,
        });
    }

    pub fn equation(&self, label: &EqLabel) -> Option<&Equation> {
        self.by_label.get(label).map(|&i| &self.known[i].equation)
    }

    pub fn knows(&self, label: &EqLabel) -> bool {
        self.by_label.contains_key(label)
    }

    pub fn known(&self) -> &[KnownEquation] {
        &self.known
    }

    /// Equations obtained strictly before `slot`.
    pub fn equations_before(&self, slot: usize) -> Vec<Equation> {
        self.known
            .iter()
            .filter(|k| k.learned_slot < slot)
            .map(|k| k.equation.clone())
            .collect()
    }

    /// Equations obtained before `slot` that are linked to `support` through
    /// shared messages, directly or via other such equations, in learning order.
    ///
    /// Nothing outside this set can take part in eliminating or spanning a
    /// vector on `support`, so it keeps bases small on long runs.
    pub fn related_before(
        &self,
        support: impl IntoIterator<Item = MessageId>,
        slot: usize,
    ) -> Vec<&KnownEquation> {
        let mut visited = BTreeSet::new();
        let mut taken = BTreeSet::new();
        let mut queue: Vec<MessageId> = support.into_iter().collect();
        while let Some(id) = queue.pop() {
            if !visited.insert(id) {
                continue;
            }
            for &i in self.by_message.get(&id).into_iter().flatten() {
                let k = &self.known[i];
                if k.learned_slot < slot && taken.insert(i) {
                    queue.extend(k.equation.coeffs.support());
                }
            }
        }
        taken.into_iter().map(|i| &self.known[i]).collect()
    }

    /// Basis of what the node knew before `slot`, restricted to the part that
    /// can interact with `support`.
    pub fn basis_for(
        &self,
        support: impl IntoIterator<Item = MessageId>,
        slot: usize,
        tol: f64,
    ) -> SpanBasis {
        let vectors: Vec<CoeffVec> = self
            .related_before(support, slot)
            .into_iter()
            .map(|k| k.equation.coeffs.clone())
            .collect();
        SpanBasis::new(&vectors, tol)
    }

    /// Whether `v` is in the span of what the node knew before `slot`.
    pub fn spans(&self, v: &CoeffVec, slot: usize, tol: f64) -> bool {
        self.basis_for(v.support(), slot, tol).contains(v, tol)
    }
}

/// A transmission a node intends to send, with the CSI it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub equation: Equation,
    pub csi_used: Vec<CsiUse>,
}

impl Plan {
    pub fn new(equation: Equation) -> Self {
        Self {
            equation,
            csi_used: Vec::new(),
        }
    }
}

/// A node may send `plan` only if it lies in the span of what the node knew
/// before the current slot and every channel coefficient behind it was visible
/// to the node's layer.
pub fn check_formable(node: &NodeState, plan: &Plan, ledger: &CsitLedger, tol: f64) -> bool {
    plan.csi_used
        .iter()
        .all(|u| ledger.visible(node.layer, u.hop, u.slot))
        && node.spans(&plan.equation.coeffs, ledger.current_slot, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eqspace::SPAN_TOL;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn config_validation() {
        assert!(NetworkConfig::new(1, 3).is_err());
        assert!(NetworkConfig::new(3, 1).is_err());
        assert!(NetworkConfig::with_power(3, 3, 0.0, false).is_err());
        let cfg = NetworkConfig::new(2, 2).unwrap();
        assert_eq!(cfg.hops(), 1);
        assert!(!cfg.has_relays());
    }

    #[test]
    fn channels_are_deterministic_and_seed_sensitive() {
        let cfg = NetworkConfig::new(4, 3).unwrap();
        let a = draw_channels(&cfg, 42, 5);
        assert_eq!(a, draw_channels(&cfg, 42, 5));
        let b = draw_channels(&cfg, 43, 5);
        assert_ne!(a.matrix(1, 1), b.matrix(1, 1));
        // a longer draw extends, it does not reshuffle
        let longer = draw_channels(&cfg, 42, 9);
        assert_eq!(a.matrix(3, 5), longer.matrix(3, 5));
    }

    #[test]
    fn channel_entries_have_unit_power() {
        let cfg = NetworkConfig::new(3, 4).unwrap();
        let r = draw_channels(&cfg, 7, 320);
        let mut sum = 0.0;
        let mut count = 0usize;
        for slot in 1..=320 {
            for hop in 1..=2 {
                for z in r.matrix(hop, slot).as_slice() {
                    sum += z.norm_sqr();
                    count += 1;
                }
            }
        }
        assert!(count >= 10_000);
        let mean = sum / count as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean |h|² = {mean}");
    }

    #[test]
    fn silent_network_receives_nothing() {
        let h = CMatrix::from_fn(3, 3, |i, j| c(i as f64 + 1.0, j as f64));
        let y = propagate_slot(
            &[vec![c(0.0, 0.0); 3], vec![c(0.0, 0.0); 3]],
            &[&h, &h],
            None,
        );
        assert!(y.iter().flatten().all(|z| *z == c(0.0, 0.0)));
    }

    #[test]
    fn identity_channel_passes_through() {
        let h = CMatrix::identity(3);
        let x = vec![c(1.0, 0.0), c(0.0, 2.0), c(0.0, 0.0)];
        assert_eq!(
            propagate_slot(std::slice::from_ref(&x), &[&h], None),
            vec![x]
        );
    }

    #[test]
    fn propagation_matches_direct_product() {
        let cfg = NetworkConfig::new(3, 3).unwrap();
        let r = draw_channels(&cfg, 99, 1);
        let x1 = vec![c(0.3, -1.0), c(2.0, 0.5), c(-0.4, 0.0)];
        let x2 = vec![c(1.0, 1.0), c(0.0, 0.0), c(-2.0, 0.7)];
        let y = propagate_slot(
            &[x1.clone(), x2.clone()],
            &[r.matrix(1, 1), r.matrix(2, 1)],
            None,
        );
        for (hop, x) in [(1, &x1), (2, &x2)] {
            let h = r.matrix(hop, 1);
            for (i, got) in y[hop - 1].iter().enumerate() {
                let mut want = c(0.0, 0.0);
                for (k, xk) in x.iter().enumerate() {
                    want += h.get(i, k) * xk;
                }
                assert!((got - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn single_transmitter_spreads_by_column() {
        let m = MessageId::new(1, 1, 1);
        let h = CMatrix::from_fn(2, 2, |i, j| c((i + 1) as f64, j as f64));
        let rx = propagate_hop(&[Some(Equation::message(m, c(2.0, 0.0))), None], &h, None);
        for (k, eq) in rx.iter().enumerate() {
            assert_eq!(eq.coeffs, CoeffVec::unit(m).scaled(h.get(k, 0)));
            assert_eq!(eq.value, h.get(k, 0) * 2.0);
        }
    }

    #[test]
    fn one_hop_range_hides_downstream_hops_from_source() {
        let ledger = CsitLedger::at(FeedbackMode::OneHopRange, 10);
        for slot in 1..10 {
            assert!(!csit_visible(&ledger, 1, 2, slot));
            assert!(csit_visible(&ledger, 1, 1, slot));
        }
        assert!(!csit_visible(&ledger, 1, 1, 10));
    }

    #[test]
    fn global_range_source_sees_every_hop_one_slot_late() {
        let ledger = CsitLedger::at(FeedbackMode::GlobalRange, 5);
        assert!(csit_visible(&ledger, 1, 4, 4));
        assert!(!csit_visible(&ledger, 1, 4, 5));
        // relays get no upstream feedback in this mode
        assert!(!csit_visible(&ledger, 2, 3, 4));
    }

    #[test]
    fn receivers_see_incoming_channel_instantly() {
        for mode in [FeedbackMode::GlobalRange, FeedbackMode::OneHopRange] {
            let ledger = CsitLedger::at(mode, 6);
            assert!(csit_visible(&ledger, 3, 2, 6));
            assert!(!csit_visible(&ledger, 3, 2, 7));
            assert!(csit_visible(&ledger, 4, 2, 5));
            assert!(!csit_visible(&ledger, 4, 2, 6));
        }
    }

    #[test]
    fn gate_counts_and_denies() {
        let cfg = NetworkConfig::new(3, 2).unwrap();
        let channels = Arc::new(draw_channels(&cfg, 1, 4));
        let mut gate = CsiGate::new(channels.clone(), FeedbackMode::OneHopRange, true);
        gate.set_slot(3);
        assert_eq!(
            gate.coefficient(1, 1, 2, 1, 2).unwrap(),
            channels.matrix(1, 2).get(0, 1)
        );
        assert!(gate.coefficient(2, 1, 3, 2, 2).is_ok());
        let err = gate.coefficient(1, 2, 1, 1, 1).unwrap_err();
        assert_eq!(
            err,
            NetworkError::CsitAccess {
                layer: 1,
                hop: 2,
                slot: 1,
                current_slot: 3
            }
        );
        let s = gate.stats();
        assert_eq!(
            (
                s.total,
                s.denied,
                s.transmit_side,
                s.receive_side,
                s.upstream
            ),
            (3, 1, 1, 1, 1)
        );

        let mut lenient = CsiGate::new(channels, FeedbackMode::OneHopRange, false);
        lenient.set_slot(3);
        assert!(lenient.matrix(1, 2, 1).is_ok());
        assert_eq!(lenient.denials().len(), 1);
    }

    #[test]
    fn formability_needs_knowledge_and_visible_csi() {
        let a = MessageId::new(1, 1, 1);
        let b = MessageId::new(1, 1, 2);
        let mut node = NodeState::new(2, 1);
        node.learn(None, Equation::message(a, c(1.0, 0.0)), 1);
        let ledger = CsitLedger::at(FeedbackMode::OneHopRange, 2);

        let plan = Plan::new(Equation::message(a, c(1.0, 0.0)).scaled(c(0.0, 3.0)));
        assert!(check_formable(&node, &plan, &ledger, SPAN_TOL));
        assert!(!check_formable(
            &node,
            &Plan::new(Equation::message(b, c(1.0, 0.0))),
            &ledger,
            SPAN_TOL
        ));

        // slot-2 reception cannot feed a slot-2 transmission
        node.learn(None, Equation::message(b, c(1.0, 0.0)), 2);
        assert!(!check_formable(
            &node,
            &Plan::new(Equation::message(b, c(1.0, 0.0))),
            &ledger,
            SPAN_TOL
        ));

        let mut with_csi = plan.clone();
        with_csi.csi_used.push(CsiUse { hop: 2, slot: 1 });
        assert!(check_formable(&node, &with_csi, &ledger, SPAN_TOL));
        with_csi.csi_used.push(CsiUse { hop: 3, slot: 1 });
        assert!(!check_formable(&node, &with_csi, &ledger, SPAN_TOL));
    }
}
