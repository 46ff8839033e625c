//! Pipelined multi-round schemes for one-hop-range feedback.
//!
//! Messages are split into groups, one group per destination. In round `l`,
//! layer `n` first sends one group per slot (the fresh slots), so node
//! `(n+1)_k` hears row `k` of the hop channel applied to every group. The
//! layer then spends a few swap slots in which two of its nodes each send one
//! next-layer equation the other receiving node already holds; each receiver
//! of the pair cancels the equation it knows and keeps the other. Afterwards
//! node `(n+1)_k` holds every next-layer equation of group `k`, which is what
//! it needs for its own fresh and swap slots.
//!
//! Layer `n` works on round `l` during slots `R(l−1) + 3(n−1) + 1 ..= R(l−1) +
//! 3(n−1) + R`, where `R` is the round length (6 for three users, 3 for two).
//! A run of `L` rounds therefore takes `R·L + 3(N−2)` slots.

use super::{
    ClaimKind, DecodePoint, EqDefinition, KnowledgeClaim, RxDirective, Schedule, TxDirective,
};
use crate::eqspace::MessageId;
use crate::network::EqLabel;

/// One swap slot: who sends which next-layer equation, and who recovers what.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwapSlot {
    /// Offset within the layer's round, one-based.
    pub offset: usize,
    /// `(sending node, next-layer equation index)`
    pub senders: Vec<(usize, u32)>,
    /// `(receiving node, equation index it recovers, node that sent it)`
    pub receivers: Vec<(usize, u32, usize)>,
}

/// Shape of a pipelined scheme.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelinePattern {
    /// Symbols per destination; also the number of active nodes per layer.
    pub group: usize,
    pub round_len: usize,
    /// Slot offset between consecutive layers working on the same round.
    pub layer_offset: usize,
    pub swaps: Vec<SwapSlot>,
}

impl PipelinePattern {
    /// Three users, nine messages per round in six slots per layer.
    pub fn three_user() -> Self {
        Self {
            group: 3,
            round_len: 6,
            layer_offset: 3,
            swaps: vec![
                SwapSlot {
                    offset: 4,
                    senders: vec![(1, 2), (2, 4)],
                    receivers: vec![(1, 2, 1), (2, 4, 2)],
                },
                SwapSlot {
                    offset: 5,
                    senders: vec![(1, 3), (3, 7)],
                    receivers: vec![(1, 3, 1), (3, 7, 3)],
                },
                SwapSlot {
                    offset: 6,
                    senders: vec![(2, 6), (3, 8)],
                    receivers: vec![(2, 6, 2), (3, 8, 3)],
                },
            ],
        }
    }

    /// Two users, four messages per round in three slots per layer.
    pub fn two_user() -> Self {
        Self {
            group: 2,
            round_len: 3,
            layer_offset: 3,
            swaps: vec![SwapSlot {
                offset: 3,
                senders: vec![(1, 2), (2, 3)],
                receivers: vec![(1, 2, 1), (2, 3, 2)],
            }],
        }
    }

    /// Slot before layer `layer` starts round `round`.
    pub fn round_base(&self, layer: usize, round: usize) -> usize {
        self.round_len * (round - 1) + self.layer_offset * (layer - 1)
    }

    pub fn total_slots(&self, layers: usize, rounds: usize) -> usize {
        self.round_base(layers - 1, rounds) + self.round_len
    }

    pub fn messages_per_round(&self) -> usize {
        self.group * self.group
    }

    /// Message carried by source label `L[1]_index(round)`.
    pub fn message(&self, index: u32, round: u32) -> MessageId {
        let g = self.group as u32;
        MessageId::new(round, (index - 1) / g + 1, (index - 1) % g + 1)
    }
}

/// Directives for round `round` of `pattern` on an `(N, K)` network.
///
/// Nodes beyond `pattern.group` stay silent and ignore what they hear.
pub fn build_round_schedule(
    pattern: &PipelinePattern,
    layers: usize,
    users: usize,
    round: usize,
) -> Schedule {
    assert!(layers >= 3, "pipelined schemes need relays");
    assert!(users >= pattern.group, "not enough nodes per layer");
    assert!(round >= 1, "rounds are one-based");
    let g = pattern.group;
    let l = round as u32;
    let mut s = Schedule::new(layers, users);

    for index in 1..=(g * g) as u32 {
        let label = EqLabel::new(1, index, l);
        let id = pattern.message(index, l);
        s.source_labels.insert(label, id);
        s.messages.insert(id);
    }

    for n in 1..layers {
        let base = pattern.round_base(n, round);
        let next = (n + 1) as u32;
        let here = n as u32;

        for group in 1..=g {
            let slot = base + group;
            let inputs: Vec<EqLabel> = (1..=g)
                .map(|i| EqLabel::new(here, (g * (group - 1) + i) as u32, l))
                .collect();
            for k in 1..=g {
                let index = (g * (group - 1) + k) as u32;
                let tx = if n == 1 {
                    TxDirective::Fresh(pattern.message(index, l))
                } else {
                    TxDirective::Forward(EqLabel::new(here, index, l))
                };
                s.set_tx(slot, n, k, tx);
                let received = EqLabel::new(next, index, l);
                s.set_rx(slot, n + 1, k, RxDirective::Store(received));
                s.definitions.insert(
                    received,
                    EqDefinition::HopRow {
                        hop: n,
                        slot,
                        row: k,
                        inputs: inputs.clone(),
                    },
                );
            }
        }

        for swap in &pattern.swaps {
            let slot = base + swap.offset;
            for &(node, index) in &swap.senders {
                s.set_tx(
                    slot,
                    n,
                    node,
                    TxDirective::Reconstruct(EqLabel::new(next, index, l)),
                );
            }
            for &(node, index, sender) in &swap.receivers {
                s.set_rx(
                    slot,
                    n + 1,
                    node,
                    RxDirective::Recover {
                        target: EqLabel::new(next, index, l),
                        sender: Some(sender),
                    },
                );
            }
            s.claims.push(KnowledgeClaim {
                after_slot: slot,
                kind: ClaimKind::OverheardPair,
                layer: n + 1,
                nodes: swap.receivers.iter().map(|r| r.0).collect(),
                labels: swap
                    .senders
                    .iter()
                    .map(|&(_, i)| EqLabel::new(next, i, l))
                    .collect(),
            });
        }

        let done = base + pattern.round_len;
        for k in 1..=g {
            s.claims.push(KnowledgeClaim {
                after_slot: done,
                kind: ClaimKind::Knowledge,
                layer: n + 1,
                nodes: vec![k],
                labels: (1..=g)
                    .map(|i| EqLabel::new(next, (g * (k - 1) + i) as u32, l))
                    .collect(),
            });
        }
        if n + 1 == layers {
            for k in 1..=g {
                s.decodes.push(DecodePoint {
                    after_slot: done,
                    dest: k,
                    equations: (1..=g)
                        .map(|i| EqLabel::new(next, (g * (k - 1) + i) as u32, l))
                        .collect(),
                    unknowns: (1..=g as u32)
                        .map(|i| MessageId::new(l, k as u32, i))
                        .collect(),
                });
            }
        }
    }
    s
}

/// Round `l` of the three-user scheme on an `(N, 3)` network.
pub fn build_round_schedule_33(layers: usize, round: usize) -> Schedule {
    build_round_schedule(&PipelinePattern::three_user(), layers, 3, round)
}

/// Rounds `1..=rounds` merged into one schedule.
pub fn build_pipeline_schedule(
    pattern: &PipelinePattern,
    layers: usize,
    users: usize,
    rounds: usize,
) -> Schedule {
    let mut s = Schedule::new(layers, users);
    for round in 1..=rounds {
        s.merge(build_round_schedule(pattern, layers, users, round));
    }
    debug_assert_eq!(s.total_slots(), pattern.total_slots(layers, rounds));
    s
}

/// Makes relay 2_1 forward, in its first round-1 swap slot, a layer-2 equation
/// that only relay 2_2 heard. The result must trip the formability check.
pub fn inject_unformable_swap(schedule: &mut Schedule, pattern: &PipelinePattern) {
    assert!(schedule.layers >= 3, "needs a relay layer");
    let slot = pattern.round_base(2, 1) + pattern.swaps[0].offset;
    // index 2 + group is heard by node 2 in the second fresh slot
    let foreign = EqLabel::new(2, (pattern.group + 2) as u32, 1);
    schedule.replace_tx(slot, 2, 1, TxDirective::Forward(foreign));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(layer: u32, index: u32, round: u32) -> EqLabel {
        EqLabel::new(layer, index, round)
    }

    #[test]
    fn slot_four_source_row() {
        let s = build_round_schedule_33(3, 1);
        assert_eq!(*s.tx(4, 1, 1), TxDirective::Reconstruct(l(2, 2, 1)));
        assert_eq!(*s.tx(4, 1, 2), TxDirective::Reconstruct(l(2, 4, 1)));
        assert_eq!(*s.tx(4, 1, 3), TxDirective::Silent);
        assert_eq!(*s.tx(5, 1, 2), TxDirective::Silent);
        assert_eq!(*s.tx(6, 1, 1), TxDirective::Silent);
    }

    #[test]
    fn slot_seven_relay_row() {
        let s = build_round_schedule_33(3, 1);
        assert_eq!(*s.tx(7, 2, 1), TxDirective::Reconstruct(l(3, 2, 1)));
        assert_eq!(*s.tx(7, 2, 2), TxDirective::Reconstruct(l(3, 4, 1)));
        assert_eq!(*s.tx(7, 2, 3), TxDirective::Silent);
        assert_eq!(*s.tx(8, 2, 1), TxDirective::Reconstruct(l(3, 3, 1)));
        assert_eq!(*s.tx(8, 2, 3), TxDirective::Reconstruct(l(3, 7, 1)));
        assert_eq!(*s.tx(9, 2, 2), TxDirective::Reconstruct(l(3, 6, 1)));
        assert_eq!(*s.tx(9, 2, 3), TxDirective::Reconstruct(l(3, 8, 1)));
    }

    #[test]
    fn first_twelve_slots_follow_the_table() {
        let s = build_pipeline_schedule(&PipelinePattern::three_user(), 3, 3, 2);
        let fresh =
            |round: u32, dest: u32, sym: u32| TxDirective::Fresh(MessageId::new(round, dest, sym));
        // source rows: messages of destination t in slot t, then swaps
        for t in 1..=3u32 {
            for k in 1..=3u32 {
                assert_eq!(*s.tx(t as usize, 1, k as usize), fresh(1, t, k));
                assert_eq!(*s.tx(t as usize + 6, 1, k as usize), fresh(2, t, k));
            }
        }
        assert_eq!(*s.tx(10, 1, 1), TxDirective::Reconstruct(l(2, 2, 2)));
        assert_eq!(*s.tx(12, 1, 3), TxDirective::Reconstruct(l(2, 8, 2)));
        // relays forward L[2]_{3(t-1)+k} in slots 4..6 and round 2 in 10..12
        for t in 1..=3u32 {
            for k in 1..=3u32 {
                assert_eq!(
                    *s.tx(3 + t as usize, 2, k as usize),
                    TxDirective::Forward(l(2, 3 * (t - 1) + k, 1))
                );
                assert_eq!(
                    *s.tx(9 + t as usize, 2, k as usize),
                    TxDirective::Forward(l(2, 3 * (t - 1) + k, 2))
                );
            }
        }
        // receivers: relay 2_3 ignores slot 4, destination 3_2 ignores slot 8
        assert_eq!(*s.rx(4, 2, 3), RxDirective::Discard);
        assert_eq!(*s.rx(8, 3, 2), RxDirective::Discard);
        assert_eq!(*s.rx(1, 2, 2), RxDirective::Store(l(2, 2, 1)));
        assert_eq!(*s.rx(6, 3, 3), RxDirective::Store(l(3, 9, 1)));
        assert_eq!(s.total_slots(), 15);
    }

    #[test]
    fn layer_slots_follow_pipeline_formula() {
        let s = build_pipeline_schedule(&PipelinePattern::three_user(), 5, 3, 3);
        let busy: Vec<usize> = (1..=s.total_slots())
            .filter(|&t| {
                (1..=3).any(|k| match s.tx(t, 4, k) {
                    TxDirective::Forward(lab) | TxDirective::Reconstruct(lab) => lab.round == 3,
                    _ => false,
                })
            })
            .collect();
        assert_eq!(busy, (22..=27).collect::<Vec<_>>());
    }

    #[test]
    fn swap_slots_have_one_silent_antenna() {
        let s = build_pipeline_schedule(&PipelinePattern::three_user(), 4, 3, 2);
        let p = PipelinePattern::three_user();
        for n in 1..4 {
            for round in 1..=2 {
                for off in 4..=6 {
                    let t = p.round_base(n, round) + off;
                    let silent = (1..=3)
                        .filter(|&k| *s.tx(t, n, k) == TxDirective::Silent)
                        .count();
                    assert_eq!(silent, 1, "layer {n} round {round} offset {off}");
                }
            }
        }
    }

    #[test]
    fn embedding_keeps_extra_nodes_silent() {
        let s = build_pipeline_schedule(&PipelinePattern::three_user(), 3, 5, 1);
        for t in 1..=s.total_slots() {
            for n in 1..3 {
                for k in 4..=5 {
                    assert_eq!(*s.tx(t, n, k), TxDirective::Silent);
                    assert_eq!(*s.rx(t, n + 1, k), RxDirective::Discard);
                }
            }
        }
        assert_eq!(s.messages.len(), 9);
    }

    #[test]
    fn two_user_round() {
        let p = PipelinePattern::two_user();
        let s = build_pipeline_schedule(&p, 3, 2, 1);
        assert_eq!(s.total_slots(), 6);
        assert_eq!(*s.tx(3, 1, 1), TxDirective::Reconstruct(l(2, 2, 1)));
        assert_eq!(*s.tx(3, 1, 2), TxDirective::Reconstruct(l(2, 3, 1)));
        assert_eq!(*s.tx(4, 2, 2), TxDirective::Forward(l(2, 2, 1)));
        assert_eq!(*s.tx(6, 2, 2), TxDirective::Reconstruct(l(3, 3, 1)));
        assert_eq!(p.message(3, 1), MessageId::new(1, 2, 1));
    }

    #[test]
    fn targets_expand_to_destination_group() {
        let s = build_round_schedule_33(4, 1);
        let want: Vec<MessageId> = (1..=3).map(|i| MessageId::new(1, 3, i)).collect();
        assert_eq!(
            s.target_messages(&l(4, 8, 1))
                .into_iter()
                .collect::<Vec<_>>(),
            want
        );
    }
}
