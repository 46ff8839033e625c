//! Deterministic simulator for delayed-CSIT transmission schemes over layered
//! relay-aided MIMO broadcast networks, with the matching DoF formulas.
//!
//! A network has a K-antenna source, N−2 layers of K full-duplex relays and K
//! destinations. Every signal is tracked both numerically and as a linear
//! combination of source messages, so decodability, formability and
//! knowledge claims can be checked exactly.
//!
//! ```
//! use relay_dof::schemes::run_one_hop_33;
//!
//! let report = run_one_hop_33(3, 2, 7).unwrap();
//! assert_eq!(report.slots_used, 15);
//! assert_eq!(report.messages_delivered, 18);
//! ```

pub mod analysis;
pub mod eqspace;
pub mod matrix;
pub mod network;
pub mod schemes;
