//! Amplify-and-forward reduction for global-range feedback.
//!
//! Every relay scales what it hears by the largest gain its power constraint
//! allows and forwards it within the same slot. End to end the network then
//! looks like a single-hop K-user broadcast channel with matrix
//!
//! ```text
//! H̃(t) = H[N−1](t) G[N−1](t) · · · H[2](t) G[2](t) H[1](t)
//! ```
//!
//! The source knows every hop one slot late, so it knows `H̃(t−1)` at slot `t`
//! and can run any delayed-CSIT broadcast code on the equivalent channel. The
//! code is plugged in through [`BroadcastInnerCode`]; only the two-user code
//! ships.

use super::{
    ClaimKind, DecodePoint, EqDefinition, KnowledgeClaim, RxDirective, Schedule, TxDirective,
};
use crate::eqspace::MessageId;
use crate::matrix::CMatrix;
use crate::network::{ChannelRealization, EqLabel};
use num_complex::Complex64;

/// Amplification coefficients `g[n]_i(t)` of the relays of one layer in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct AfGains {
    pub gains: Vec<Complex64>,
}

impl AfGains {
    pub fn as_matrix(&self) -> CMatrix {
        CMatrix::diagonal(&self.gains)
    }

    /// Left-hand side of the power constraint for each relay:
    /// `|g_i|² (Σ_k |h_ik|² + 1/K)`.
    pub fn constraint_load(&self, row_norm_sqr: &[f64], users: usize) -> Vec<f64> {
        self.gains
            .iter()
            .zip(row_norm_sqr)
            .map(|(g, n)| g.norm_sqr() * (n + 1.0 / users as f64))
            .collect()
    }
}

/// Largest real gains meeting `|g_i|² (‖h_i‖² + 1/K) ≤ 1` with equality.
pub fn af_gains(row_norm_sqr: &[f64], users: usize) -> AfGains {
    assert!(users >= 1, "need at least one user");
    AfGains {
        gains: row_norm_sqr
            .iter()
            .map(|&n| {
                assert!(n >= 0.0, "row norms are non-negative");
                Complex64::new((1.0 / (n + 1.0 / users as f64)).sqrt(), 0.0)
            })
            .collect(),
    }
}

/// Gains of the relays fed through `incoming`.
pub fn relay_gains(incoming: &CMatrix) -> AfGains {
    let norms: Vec<f64> = (0..incoming.rows())
        .map(|i| incoming.row_norm_sqr(i))
        .collect();
    af_gains(&norms, incoming.cols())
}

/// Equivalent channel from explicit per-layer gains.
///
/// `gains[j]` belongs to relay layer `j + 2`; with `layers == 2` the product is
/// empty and `H[1](t)` comes back unchanged.
pub fn equivalent_channel(
    channels: &ChannelRealization,
    gains: &[AfGains],
    slot: usize,
    layers: usize,
) -> CMatrix {
    assert!(layers >= 2, "need at least two layers");
    assert_eq!(gains.len(), layers - 2, "one gain set per relay layer");
    let mut h = channels.matrix(1, slot).clone();
    for n in 3..=layers {
        let hop = n - 1;
        let g = gains[hop - 2].as_matrix();
        h = &(channels.matrix(hop, slot) * &g) * &h;
    }
    h
}

/// Equivalent channel with the gains each relay would choose; `hops[0]` is `H[1]`.
pub fn equivalent_from_hops(hops: &[CMatrix]) -> CMatrix {
    let (first, rest) = hops.split_first().expect("need at least one hop");
    let mut h = first.clone();
    let mut incoming = first;
    for next in rest {
        let g = relay_gains(incoming).as_matrix();
        h = &(next * &g) * &h;
        incoming = next;
    }
    h
}

/// A delayed-CSIT broadcast code for the equivalent single-hop channel.
///
/// An implementation writes, for one block, the source antenna directives
/// (layer 1), the destination receive directives (layer N), the equation
/// definitions (over [`EqDefinition::EquivalentRow`]) and the decode points.
/// Relays are filled in by [`build_global_schedule`].
pub trait BroadcastInnerCode {
    fn users(&self) -> usize;
    fn slots_per_block(&self) -> usize;
    fn messages_per_block(&self) -> usize;
    fn schedule_block(&self, block: u32, first_slot: usize, schedule: &mut Schedule);
}

/// Two-user code: one slot per destination with both of its symbols, then one
/// slot resending the two equations each destination overheard for the other.
#[derive(Debug, Clone, Copy, Default)]
pub struct TwoUserInnerCode;

impl BroadcastInnerCode for TwoUserInnerCode {
    fn users(&self) -> usize {
        2
    }

    fn slots_per_block(&self) -> usize {
        3
    }

    fn messages_per_block(&self) -> usize {
        4
    }

    fn schedule_block(&self, block: u32, first_slot: usize, s: &mut Schedule) {
        let last = s.layers;
        let dest_layer = last as u32;
        let label = |i: u32| EqLabel::new(dest_layer, i, block);
        let src = |i: u32| EqLabel::new(1, i, block);
        for dest in 1..=2u32 {
            let slot = first_slot + dest as usize - 1;
            let inputs = vec![src(2 * dest - 1), src(2 * dest)];
            for sym in 1..=2u32 {
                let id = MessageId::new(block, dest, sym);
                s.source_labels.insert(src(2 * (dest - 1) + sym), id);
                s.messages.insert(id);
                s.set_tx(slot, 1, sym as usize, TxDirective::Fresh(id));
            }
            for k in 1..=2u32 {
                let l = label(2 * (dest - 1) + k);
                s.definitions.insert(
                    l,
                    EqDefinition::EquivalentRow {
                        slot,
                        row: k as usize,
                        inputs: inputs.clone(),
                    },
                );
                s.set_rx(slot, last, k as usize, RxDirective::Store(l));
            }
        }
        // destination 2 overheard L2, destination 1 overheard L3
        let swap = first_slot + 2;
        s.set_tx(swap, 1, 1, TxDirective::Reconstruct(label(2)));
        s.set_tx(swap, 1, 2, TxDirective::Reconstruct(label(3)));
        s.set_rx(
            swap,
            last,
            1,
            RxDirective::Recover {
                target: label(2),
                sender: None,
            },
        );
        s.set_rx(
            swap,
            last,
            2,
            RxDirective::Recover {
                target: label(3),
                sender: None,
            },
        );
        s.claims.push(KnowledgeClaim {
            after_slot: swap,
            kind: ClaimKind::OverheardPair,
            layer: last,
            nodes: vec![1, 2],
            labels: vec![label(2), label(3)],
        });
        for dest in 1..=2u32 {
            s.decodes.push(DecodePoint {
                after_slot: swap,
                dest: dest as usize,
                equations: vec![label(2 * dest - 1), label(2 * dest)],
                unknowns: (1..=2)
                    .map(|sym| MessageId::new(block, dest, sym))
                    .collect(),
            });
        }
    }
}

/// Global-range schedule: `blocks` consecutive blocks of `code`, with every
/// relay amplifying and forwarding in every slot.
pub fn build_global_schedule(
    layers: usize,
    code: &dyn BroadcastInnerCode,
    blocks: usize,
) -> Schedule {
    let users = code.users();
    let mut s = Schedule::new(layers, users);
    let per_block = code.slots_per_block();
    for b in 1..=blocks {
        code.schedule_block(b as u32, (b - 1) * per_block + 1, &mut s);
    }
    let total = blocks * per_block;
    for slot in 1..=total {
        for layer in 2..layers {
            for k in 1..=users {
                s.set_tx(slot, layer, k, TxDirective::Amplify);
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{draw_channels, NetworkConfig};

    #[test]
    fn gain_on_zero_row() {
        let g = af_gains(&[0.0], 2);
        assert!((g.gains[0].norm_sqr() - 2.0).abs() < 1e-15);
        assert_eq!(g.gains[0].im, 0.0);
    }

    #[test]
    fn gain_on_row_norm_three() {
        let g = af_gains(&[3.0], 3);
        assert!((g.gains[0].norm_sqr() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn gains_saturate_constraint() {
        let cfg = NetworkConfig::new(3, 4).unwrap();
        let ch = draw_channels(&cfg, 17, 3);
        for slot in 1..=3 {
            let h = ch.matrix(1, slot);
            let norms: Vec<f64> = (0..4).map(|i| h.row_norm_sqr(i)).collect();
            for load in relay_gains(h).constraint_load(&norms, 4) {
                assert!((load - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_layers_is_first_hop() {
        let cfg = NetworkConfig::new(2, 2).unwrap();
        let ch = draw_channels(&cfg, 3, 2);
        assert_eq!(&equivalent_channel(&ch, &[], 2, 2), ch.matrix(1, 2));
        assert_eq!(
            &equivalent_from_hops(&[ch.matrix(1, 2).clone()]),
            ch.matrix(1, 2)
        );
    }

    #[test]
    fn identity_network_is_identity() {
        let ch = ChannelRealization::from_fn(3, 3, 1, |_, _| CMatrix::identity(3));
        let ones = AfGains {
            gains: vec![Complex64::new(1.0, 0.0); 3],
        };
        assert_eq!(
            equivalent_channel(&ch, &[ones.clone(), ones], 1, 4),
            CMatrix::identity(3)
        );
    }

    #[test]
    fn global_schedule_shape() {
        let s = build_global_schedule(4, &TwoUserInnerCode, 2);
        assert_eq!(s.total_slots(), 6);
        assert_eq!(s.messages.len(), 8);
        assert_eq!(*s.tx(5, 3, 2), TxDirective::Amplify);
        assert_eq!(
            *s.tx(6, 1, 1),
            TxDirective::Reconstruct(EqLabel::new(4, 2, 2))
        );
        assert_eq!(s.decodes.len(), 4);
    }
}
