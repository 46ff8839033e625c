use super::af::{equivalent_from_hops, relay_gains};
use super::{
    ClaimKind, EqDefinition, RunOptions, RxDirective, Schedule, SchemeError, TxDirective,
    Violation, ViolationKind,
};
use crate::eqspace::{eliminate_known, solve_messages, Equation, MessageId};
use crate::network::{
    check_formable, draw_channels, propagate_hop, ChannelRealization, CsiGate, CsiUse, EqLabel,
    FeedbackMode, GroundTruth, NetworkConfig, NetworkError, NodeState, NoiseSource, Plan,
    QueryStats,
};
use num_complex::Complex64;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

/// Result of one destination decoding one round.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutcome {
    pub slot: usize,
    pub dest: usize,
    /// Worst `|decoded − truth| / σ` over the round's messages.
    pub residual: f64,
    pub delivered: bool,
}

/// Everything a run records besides the final state.
#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub violations: Vec<Violation>,
    pub decodes: Vec<DecodeOutcome>,
    pub messages_delivered: usize,
    pub max_consistency_residual: f64,
    pub claims_checked: usize,
    pub csi: QueryStats,
}

impl RunLog {
    /// Worst residual per destination, indexed by destination − 1.
    pub fn decode_residuals(&self) -> Vec<f64> {
        let mut per_dest: BTreeMap<usize, f64> = BTreeMap::new();
        for d in &self.decodes {
            let e = per_dest.entry(d.dest).or_insert(0.0);
            *e = e.max(d.residual);
        }
        per_dest.into_values().collect()
    }
}

/// Slot-by-slot executor of a [`Schedule`].
///
/// Within a slot the layers are processed upstream to downstream. Ordinary
/// transmissions only draw on knowledge from earlier slots, so this order is
/// the same as all layers sending at once; it only matters for
/// [`TxDirective::Amplify`], which forwards the same slot's reception.
pub struct Simulation {
    schedule: Schedule,
    channels: Arc<ChannelRealization>,
    truth: GroundTruth,
    gate: CsiGate,
    noise: Option<NoiseSource>,
    /// `nodes[0]` holds the source alone, `nodes[n-1]` the K nodes of layer n.
    nodes: Vec<Vec<NodeState>>,
    /// First version of every labelled equation formed anywhere.
    registry: BTreeMap<EqLabel, Equation>,
    /// Messages each recovered label is supported on, by definition.
    targets: BTreeMap<EqLabel, BTreeSet<MessageId>>,
    options: RunOptions,
    slot: usize,
    log: RunLog,
}

impl Simulation {
    pub fn new(
        schedule: Schedule,
        seed: u64,
        feedback: FeedbackMode,
        options: &RunOptions,
    ) -> Self {
        let config = NetworkConfig {
            layers: schedule.layers,
            users: schedule.users,
            power: options.power,
            noise_enabled: options.noise,
        };
        let channels = Arc::new(draw_channels(&config, seed, schedule.total_slots().max(1)));
        Self::with_channels(schedule, channels, seed, feedback, options)
    }

    /// Runs on explicit channels; messages and noise still come from `seed`.
    pub fn with_channels(
        schedule: Schedule,
        channels: Arc<ChannelRealization>,
        seed: u64,
        feedback: FeedbackMode,
        options: &RunOptions,
    ) -> Self {
        let variance = if options.noise {
            options.power / schedule.users as f64
        } else {
            1.0
        };
        let truth = GroundTruth::draw(seed, schedule.messages.iter().copied(), variance);
        let mut nodes = vec![vec![NodeState::new(1, 1)]];
        for layer in 2..=schedule.layers {
            nodes.push(
                (1..=schedule.users)
                    .map(|k| NodeState::new(layer, k))
                    .collect(),
            );
        }
        let mut registry = BTreeMap::new();
        for (label, id) in &schedule.source_labels {
            let eq = Equation::message(*id, truth.get(*id));
            nodes[0][0].learn(Some(*label), eq.clone(), 0);
            registry.insert(*label, eq);
        }
        let labelled: BTreeSet<MessageId> = schedule.source_labels.values().copied().collect();
        for id in schedule.messages.difference(&labelled) {
            nodes[0][0].learn(None, Equation::message(*id, truth.get(*id)), 0);
        }
        Self {
            gate: CsiGate::new(channels.clone(), feedback, options.strict),
            noise: options.noise.then(|| NoiseSource::new(seed, 1.0)),
            schedule,
            channels,
            truth,
            nodes,
            registry,
            targets: BTreeMap::new(),
            options: options.clone(),
            slot: 0,
            log: RunLog::default(),
        }
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn channels(&self) -> &ChannelRealization {
        &self.channels
    }

    /// Last completed slot.
    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn node(&self, layer: usize, index: usize) -> &NodeState {
        if layer == 1 {
            &self.nodes[0][0]
        } else {
            &self.nodes[layer - 1][index - 1]
        }
    }

    /// The network-wide first version of `label`, if anyone has formed it.
    pub fn equation(&self, label: &EqLabel) -> Option<&Equation> {
        self.registry.get(label)
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn into_log(mut self) -> RunLog {
        self.log.csi = self.gate.stats();
        self.log
    }

    pub fn is_done(&self) -> bool {
        self.slot >= self.schedule.total_slots()
    }

    pub fn run(&mut self) -> Result<(), SchemeError> {
        while !self.is_done() {
            self.step()?;
        }
        self.log.csi = self.gate.stats();
        Ok(())
    }

    pub fn run_until(&mut self, slot: usize) -> Result<(), SchemeError> {
        while self.slot < slot && !self.is_done() {
            self.step()?;
        }
        Ok(())
    }

    /// Executes the next slot.
    pub fn step(&mut self) -> Result<(), SchemeError> {
        let t = self.slot + 1;
        assert!(t <= self.schedule.total_slots(), "schedule exhausted");
        self.gate.set_slot(t);
        let users = self.schedule.users;
        let mut last_rx: Vec<Equation> = Vec::new();
        for n in 1..self.schedule.layers {
            let mut plans = Vec::with_capacity(users);
            for k in 1..=users {
                let d = self.schedule.tx(t, n, k).clone();
                plans.push(self.transmit(t, n, k, &d, &last_rx)?);
            }
            let received = propagate_hop(&plans, self.channels.matrix(n, t), self.noise.as_mut());
            for (k, eq) in received.iter().enumerate() {
                self.audit(t, n + 1, k + 1, eq);
            }
            for (k, eq) in received.iter().enumerate() {
                let d = self.schedule.rx(t, n + 1, k + 1).clone();
                self.receive(t, n + 1, k + 1, &d, eq)?;
            }
            last_rx = received;
        }
        self.slot = t;
        self.check_claims(t);
        self.decode(t)?;
        Ok(())
    }

    fn record(&mut self, kind: ViolationKind, slot: usize, detail: String) {
        self.log.violations.push(Violation { kind, slot, detail });
    }

    fn audit(&mut self, slot: usize, layer: usize, node: usize, eq: &Equation) {
        let truth = &self.truth;
        let r = eq.residual(|id| truth.get(id)) / truth.variance().sqrt();
        self.log.max_consistency_residual = self.log.max_consistency_residual.max(r);
        if !self.options.noise && r > self.options.consistency_tolerance {
            self.record(
                ViolationKind::Consistency,
                slot,
                format!("node {node} of layer {layer}: value off by {r:.3e}"),
            );
        }
    }

    /// The node's own copy of `label`, or else the network-wide one (which the
    /// formability check will then reject).
    fn resolve(
        &self,
        slot: usize,
        layer: usize,
        node: usize,
        label: &EqLabel,
    ) -> Result<Equation, SchemeError> {
        self.node(layer, node)
            .equation(label)
            .or_else(|| self.registry.get(label))
            .cloned()
            .ok_or(SchemeError::UnknownEquation {
                slot,
                label: *label,
            })
    }

    fn csi_denied(&mut self, slot: usize, err: NetworkError) -> Result<(), SchemeError> {
        if self.options.strict {
            return Err(err.into());
        }
        self.record(ViolationKind::CsitAccess, slot, err.to_string());
        Ok(())
    }

    fn transmit(
        &mut self,
        t: usize,
        n: usize,
        k: usize,
        d: &TxDirective,
        last_rx: &[Equation],
    ) -> Result<Option<Equation>, SchemeError> {
        let plan = match d {
            TxDirective::Silent => return Ok(None),
            TxDirective::Amplify => {
                let before = self.gate.denials().len();
                let incoming = self.gate.matrix(n, n - 1, t)?;
                if self.gate.denials().len() > before {
                    let err = self.gate.denials()[before].clone();
                    self.csi_denied(t, err)?;
                }
                let g = relay_gains(&incoming).gains[k - 1];
                return Ok(Some(last_rx[k - 1].scaled(g)));
            }
            TxDirective::Fresh(id) => Plan::new(Equation::message(*id, self.truth.get(*id))),
            TxDirective::Forward(label) => Plan::new(self.resolve(t, n, k, label)?),
            TxDirective::Reconstruct(target) => self.reconstruct(t, n, k, target)?,
        };

        let ledger = self.gate.ledger();
        if !check_formable(self.node(n, k), &plan, &ledger, self.options.tolerance) {
            let err = NetworkError::Formability {
                layer: n,
                node: k,
                slot: t,
                detail: format!("{d} is outside its knowledge or CSI"),
            };
            if self.options.strict {
                return Err(err.into());
            }
            self.record(ViolationKind::Formability, t, err.to_string());
        }
        Ok(Some(plan.equation))
    }

    /// Builds `target` from its definition, fetching every channel coefficient
    /// through the gate as layer `n`.
    fn reconstruct(
        &mut self,
        t: usize,
        n: usize,
        k: usize,
        target: &EqLabel,
    ) -> Result<Plan, SchemeError> {
        let def =
            self.schedule
                .definitions
                .get(target)
                .cloned()
                .ok_or(SchemeError::UnknownEquation {
                    slot: t,
                    label: *target,
                })?;
        let before = self.gate.denials().len();
        let (coeffs, csi_used): (Vec<Complex64>, Vec<CsiUse>) = match &def {
            EqDefinition::HopRow {
                hop,
                slot,
                row,
                inputs,
            } => {
                let mut c = Vec::with_capacity(inputs.len());
                for i in 1..=inputs.len() {
                    c.push(self.gate.coefficient(n, *hop, *slot, *row, i)?);
                }
                (
                    c,
                    vec![CsiUse {
                        hop: *hop,
                        slot: *slot,
                    }],
                )
            }
            EqDefinition::EquivalentRow { slot, row, inputs } => {
                let mut hops = Vec::new();
                for hop in 1..self.schedule.layers {
                    hops.push(self.gate.matrix(n, hop, *slot)?);
                }
                let h = equivalent_from_hops(&hops);
                let c = (0..inputs.len()).map(|i| h.get(row - 1, i)).collect();
                let used = (1..self.schedule.layers)
                    .map(|hop| CsiUse { hop, slot: *slot })
                    .collect();
                (c, used)
            }
        };
        let denials: Vec<NetworkError> = self.gate.denials()[before..].to_vec();
        for err in denials {
            self.csi_denied(t, err)?;
        }
        let mut eq = Equation::zero();
        for (label, c) in def.inputs().iter().zip(coeffs) {
            eq.add_scaled(&self.resolve(t, n, k, label)?, c);
        }
        Ok(Plan {
            equation: eq,
            csi_used,
        })
    }

    fn receive(
        &mut self,
        t: usize,
        layer: usize,
        k: usize,
        d: &RxDirective,
        eq: &Equation,
    ) -> Result<(), SchemeError> {
        match d {
            RxDirective::Discard => {}
            RxDirective::Store(label) => {
                self.nodes[layer - 1][k - 1].learn(Some(*label), eq.clone(), t);
                self.registry.entry(*label).or_insert_with(|| eq.clone());
            }
            RxDirective::Recover { target, sender } => {
                let targets = self
                    .targets
                    .entry(*target)
                    .or_insert_with(|| self.schedule.target_messages(target))
                    .clone();
                let known: Vec<Equation> = self.nodes[layer - 1][k - 1]
                    .related_before(eq.coeffs.support(), t)
                    .into_iter()
                    .map(|e| e.equation.clone())
                    .collect();
                let cleaned = match eliminate_known(eq, &known, &targets, self.options.tolerance) {
                    Ok(c) => c,
                    Err(source) => {
                        if self.options.strict {
                            return Err(SchemeError::Equation {
                                slot: t,
                                layer,
                                node: k,
                                source,
                            });
                        }
                        self.record(
                            ViolationKind::Elimination,
                            t,
                            format!("node {k} of layer {layer} recovering {target}: {source}"),
                        );
                        return Ok(());
                    }
                };
                let recovered = match sender {
                    Some(s) => {
                        let h = self.gate.coefficient(layer, layer - 1, t, k, *s)?;
                        cleaned.scaled(h.inv())
                    }
                    None => cleaned,
                };
                self.audit(t, layer, k, &recovered);
                self.nodes[layer - 1][k - 1].learn(Some(*target), recovered.clone(), t);
                self.registry.entry(*target).or_insert(recovered);
            }
        }
        Ok(())
    }

    fn check_claims(&mut self, t: usize) {
        let claims: Vec<_> = self
            .schedule
            .claims
            .iter()
            .filter(|c| c.after_slot == t)
            .cloned()
            .collect();
        for claim in claims {
            self.log.claims_checked += 1;
            let kind = match claim.kind {
                ClaimKind::OverheardPair => ViolationKind::OverheardPair,
                ClaimKind::Knowledge => ViolationKind::Knowledge,
            };
            for label in &claim.labels {
                let Some(eq) = self.registry.get(label) else {
                    self.record(kind, t, format!("{label} was never formed"));
                    continue;
                };
                let v = eq.coeffs.clone();
                for &k in &claim.nodes {
                    if !self
                        .node(claim.layer, k)
                        .spans(&v, t + 1, self.options.tolerance)
                    {
                        self.record(
                            kind,
                            t,
                            format!("node {k} of layer {} does not hold {label}", claim.layer),
                        );
                    }
                }
            }
        }
    }

    fn decode(&mut self, t: usize) -> Result<(), SchemeError> {
        let points: Vec<_> = self
            .schedule
            .decodes
            .iter()
            .filter(|d| d.after_slot == t)
            .cloned()
            .collect();
        let layer = self.schedule.layers;
        for p in points {
            let node = self.node(layer, p.dest);
            let eqs: Option<Vec<Equation>> = p
                .equations
                .iter()
                .map(|l| node.equation(l).cloned())
                .collect();
            let Some(eqs) = eqs else {
                self.record(
                    ViolationKind::Decode,
                    t,
                    format!("destination {} is missing decode equations", p.dest),
                );
                continue;
            };
            let values = match solve_messages(&eqs, &p.unknowns, self.options.tolerance) {
                Ok(v) => v,
                Err(source) if source.is_degenerate_draw() => {
                    return Err(SchemeError::Equation {
                        slot: t,
                        layer,
                        node: p.dest,
                        source,
                    });
                }
                Err(source) => {
                    self.record(
                        ViolationKind::Decode,
                        t,
                        format!("destination {}: {source}", p.dest),
                    );
                    continue;
                }
            };
            let sigma = self.truth.variance().sqrt();
            let residual = p
                .unknowns
                .iter()
                .map(|id| (values[id] - self.truth.get(*id)).norm() / sigma)
                .fold(0.0, f64::max);
            let delivered = residual <= self.options.decode_tolerance;
            if delivered {
                self.log.messages_delivered += p.unknowns.len();
            } else {
                self.record(
                    ViolationKind::Decode,
                    t,
                    format!("destination {} decoded with error {residual:.3e}", p.dest),
                );
            }
            self.log.decodes.push(DecodeOutcome {
                slot: t,
                dest: p.dest,
                residual,
                delivered,
            });
        }
        Ok(())
    }
}
