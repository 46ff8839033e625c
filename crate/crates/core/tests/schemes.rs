use num_complex::Complex64;
use num_rational::Ratio;
use proptest::prelude::*;
use relay_dof::eqspace::{solve_messages, MessageId, SPAN_TOL};
use relay_dof::network::{EqLabel, FeedbackMode};
use relay_dof::schemes::{
    build_schedule, run_scheme, Mutation, RunOptions, SchemeError, SchemeId, Simulation,
    ViolationKind,
};
use std::collections::BTreeMap;

const CONFIGS: [(usize, usize, SchemeId); 6] = [
    (3, 3, SchemeId::OneHop33),
    (5, 3, SchemeId::OneHop33),
    (3, 2, SchemeId::OneHopK2),
    (5, 2, SchemeId::OneHopK2),
    (3, 5, SchemeId::OneHopKgt3),
    (3, 2, SchemeId::GlobalK2),
];

fn lenient() -> RunOptions {
    RunOptions {
        strict: false,
        ..RunOptions::default()
    }
}

/// Plain triple loop, independent of the library's matrix type.
fn product(a: &[[Complex64; 3]; 3], b: &[[Complex64; 3]; 3]) -> [[Complex64; 3]; 3] {
    let mut c = [[Complex64::new(0.0, 0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

fn raw(sim: &Simulation, hop: usize, slot: usize) -> [[Complex64; 3]; 3] {
    let m = sim.channels().matrix(hop, slot);
    let mut out = [[Complex64::new(0.0, 0.0); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m.get(i, j);
        }
    }
    out
}

fn three_user_sim(seed: u64) -> Simulation {
    let schedule = build_schedule(SchemeId::OneHop33, 3, 3, 1).unwrap();
    Simulation::new(
        schedule,
        seed,
        FeedbackMode::OneHopRange,
        &RunOptions::default(),
    )
}

#[test]
fn every_configuration_decodes_cleanly() {
    for (layers, users, scheme) in CONFIGS {
        for seed in 0..5 {
            let r = run_scheme(scheme, layers, users, 3, seed, &RunOptions::default()).unwrap();
            assert!(r.all_decoded(), "{scheme} N={layers} K={users} seed={seed}");
            assert!(r.violations.is_empty(), "{:?}", r.violations);
            assert!(r.max_residual() < 1e-6);
            assert!(r.max_consistency_residual < 1e-10);
        }
    }
}

#[test]
fn destination_recovers_overheard_equation_at_slot_seven() {
    for seed in [1, 2, 3] {
        let mut sim = three_user_sim(seed);
        sim.run_until(7).unwrap();
        let h = product(&raw(&sim, 2, 4), &raw(&sim, 1, 1));
        let l2 = sim.node(3, 1).equation(&EqLabel::new(3, 2, 1)).unwrap();
        for (j, want) in h[1].iter().enumerate() {
            let id = MessageId::new(1, 1, j as u32 + 1);
            assert!((l2.coeffs.get(id) - want).norm() < 1e-9);
        }
        assert_eq!(l2.coeffs.len(), 3);
    }
}

#[test]
fn destination_solves_its_first_hop_products() {
    let sim = {
        let mut s = three_user_sim(11);
        s.run_until(5).unwrap();
        s
    };
    let h = product(&raw(&sim, 2, 4), &raw(&sim, 1, 1));
    let unknowns: Vec<MessageId> = (1..=3).map(|j| MessageId::new(1, 1, j)).collect();
    let eqs: Vec<_> = (0..3)
        .map(|i| {
            let coeffs = unknowns.iter().enumerate().map(|(j, id)| (*id, h[i][j]));
            let c = relay_dof::eqspace::CoeffVec::from_entries(coeffs);
            let value = c.evaluate(|id| sim.truth().get(id));
            relay_dof::eqspace::Equation::new(c, value)
        })
        .collect();
    let values = solve_messages(&eqs, &unknowns, SPAN_TOL).unwrap();
    for id in &unknowns {
        assert!((values[id] - sim.truth().get(*id)).norm() < 1e-6);
    }
}

#[test]
fn relay_knowledge_after_slot_six() {
    let mut sim = three_user_sim(5);
    sim.run_until(6).unwrap();
    // relay 2_k holds its three fresh receptions and the two swapped equations
    let held: BTreeMap<usize, Vec<u32>> = BTreeMap::from([
        (1, vec![1, 4, 7, 2, 3]),
        (2, vec![2, 5, 8, 4, 6]),
        (3, vec![3, 6, 9, 7, 8]),
    ]);
    for (k, labels) in held {
        for i in labels {
            let eq = sim.equation(&EqLabel::new(2, i, 1)).unwrap();
            assert!(
                sim.node(2, k).spans(&eq.coeffs, 7, SPAN_TOL),
                "2_{k} lacks L{i}"
            );
        }
    }
    assert!(sim.log().violations.is_empty());
}

#[test]
fn global_scheme_rejected_under_one_hop_feedback() {
    let options = RunOptions {
        feedback: Some(FeedbackMode::OneHopRange),
        ..RunOptions::default()
    };
    let err = run_scheme(SchemeId::GlobalK2, 3, 2, 2, 9, &options).unwrap_err();
    assert_eq!(err.kind(), "csit-access");
    let again = run_scheme(SchemeId::GlobalK2, 3, 2, 2, 9, &options).unwrap_err();
    assert_eq!(err.to_string(), again.to_string());
    let logged = run_scheme(
        SchemeId::GlobalK2,
        3,
        2,
        2,
        9,
        &RunOptions {
            strict: false,
            ..options
        },
    )
    .unwrap();
    assert!(logged.violations_of(ViolationKind::CsitAccess).count() > 0);
}

#[test]
fn one_hop_schemes_stay_in_scope() {
    for (layers, users, scheme) in CONFIGS.into_iter().filter(|c| c.2 != SchemeId::GlobalK2) {
        let r = run_scheme(scheme, layers, users, 2, 4, &RunOptions::default()).unwrap();
        assert_eq!(r.csi.out_of_scope(), 0);
        assert_eq!(r.csi.denied, 0);
        assert!(r.csi.total > 0);
    }
}

#[test]
fn unformable_swap_is_caught() {
    let options = RunOptions {
        mutation: Some(Mutation::UnformableSwap),
        ..RunOptions::default()
    };
    let err = run_scheme(SchemeId::OneHop33, 3, 3, 2, 7, &options).unwrap_err();
    assert!(matches!(err, SchemeError::Network(_)));
    assert_eq!(err.kind(), "formability");
    let logged = run_scheme(
        SchemeId::OneHop33,
        3,
        3,
        2,
        7,
        &RunOptions {
            strict: false,
            ..options
        },
    )
    .unwrap();
    assert!(logged.violations_of(ViolationKind::Formability).count() > 0);
}

#[test]
fn claims_are_checked() {
    let r = run_scheme(SchemeId::OneHop33, 3, 3, 2, 7, &lenient()).unwrap();
    assert!(r.claims_checked > 0);
    assert_eq!(r.violations_of(ViolationKind::OverheardPair).count(), 0);
    assert_eq!(r.violations_of(ViolationKind::Knowledge).count(), 0);
}

fn noisy(power: f64) -> RunOptions {
    RunOptions {
        noise: true,
        power,
        decode_tolerance: 1e-2,
        ..RunOptions::default()
    }
}

#[test]
fn noisy_run_decodes_at_high_power() {
    let r = run_scheme(SchemeId::OneHop33, 3, 3, 2, 7, &noisy(1e10)).unwrap();
    assert!(r.all_decoded(), "{:?}", r.decode_residuals);
}

#[test]
fn noisy_error_falls_with_power() {
    let lo = run_scheme(SchemeId::OneHop33, 3, 3, 2, 7, &noisy(1e6))
        .unwrap()
        .max_residual();
    let hi = run_scheme(SchemeId::OneHop33, 3, 3, 2, 7, &noisy(1e8))
        .unwrap()
        .max_residual();
    assert!(lo > 0.0);
    assert!((lo / hi - 10.0).abs() < 0.5, "{lo} vs {hi}");
}

#[test]
fn identical_seeds_identical_reports() {
    let a = run_scheme(SchemeId::OneHopK2, 4, 2, 3, 21, &RunOptions::default()).unwrap();
    let b = run_scheme(SchemeId::OneHopK2, 4, 2, 3, 21, &RunOptions::default()).unwrap();
    assert_eq!(a, b);
    let c = run_scheme(SchemeId::OneHopK2, 4, 2, 3, 22, &RunOptions::default()).unwrap();
    assert_ne!(a.decode_residuals, c.decode_residuals);
}

#[test]
fn global_scheme_is_four_thirds_per_block() {
    for blocks in [1, 4] {
        let r = run_scheme(SchemeId::GlobalK2, 4, 2, blocks, 3, &RunOptions::default()).unwrap();
        assert_eq!(r.measured_dof, Ratio::new(4, 3));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn three_user_counting_identity(layers in 3usize..=6, rounds in 1usize..=50, seed in any::<u64>()) {
        let r = run_scheme(SchemeId::OneHop33, layers, 3, rounds, seed, &RunOptions::default()).unwrap();
        let expected = Ratio::new(9 * rounds as u64, (6 * rounds + 3 * (layers - 2)) as u64);
        prop_assert_eq!(r.measured_dof, expected);
    }
}
