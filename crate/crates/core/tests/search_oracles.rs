//! Multiplet search against constructed systems with known answers.

use oinfo_core::oracle::{
    mixed_gaussian, planted_redundancy, planted_synergy, rng_for, PLANTED_REDUNDANCY,
    PLANTED_SYNERGY,
};
use oinfo_core::search::{
    exhaustive_search, greedy_extend, search_profile, SearchMethod, SearchOptions, SearchSpace,
};
use oinfo_core::oracle::model_with_last_as_target;
use oinfo_core::{omega, Objective};

#[test]
fn planted_synergy_is_recovered() {
    let mut hits = 0;
    for t in 0..100 {
        let model = planted_synergy(2_000, &mut rng_for(t, 100)).unwrap();
        let best = exhaustive_search(&model, 10, 3, Objective::Synergy, &SearchOptions::default()).unwrap();
        hits += usize::from(best.neuron_indices == PLANTED_SYNERGY);
    }
    assert!(hits >= 95, "{hits}/100");
}

#[test]
fn planted_redundancy_is_recovered() {
    for t in 0..10 {
        let model = planted_redundancy(2_000, &mut rng_for(t, 101)).unwrap();
        let best = exhaustive_search(&model, 10, 3, Objective::Redundancy, &SearchOptions::default()).unwrap();
        assert_eq!(best.neuron_indices, PLANTED_REDUNDANCY);
        assert!(best.omega > 0.0);
    }
}

#[test]
fn greedy_growth_keeps_planted_members() {
    let model = planted_synergy(2_000, &mut rng_for(3, 102)).unwrap();
    let mut current = exhaustive_search(&model, 10, 3, Objective::Synergy, &SearchOptions::default()).unwrap();
    assert_eq!(current.neuron_indices, PLANTED_SYNERGY);
    while current.k < 10 {
        current = greedy_extend(&model, 10, &current, Objective::Synergy).unwrap();
        assert!(PLANTED_SYNERGY.iter().all(|i| current.neuron_indices.contains(i)));
    }
}

#[test]
fn reported_omega_matches_recomputation() {
    let data = mixed_gaussian(3_000, 21, &mut rng_for(0, 103));
    let model = model_with_last_as_target(&data).unwrap();
    let space = SearchSpace::new(&model, 20).unwrap();
    for objective in Objective::BOTH {
        let profile = search_profile(&model, 20, 20, objective, &SearchOptions::default()).unwrap();
        assert_eq!(profile.entries.len(), 19);
        for m in &profile.entries {
            let again = omega(&model, &m.model_subset(&space)).unwrap().value;
            assert!((again - m.omega).abs() <= 1e-12);
            assert!(m.neuron_indices.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(m.method == SearchMethod::Exhaustive, m.k <= 6);
        }
        let six = profile.get(6).unwrap();
        assert_eq!(six.candidates_evaluated, 38_760);
        for w in profile.entries[4..].windows(2) {
            assert_eq!(w[1].candidates_evaluated, (20 - w[0].k) as u64);
        }
    }
}

#[test]
fn greedy_versus_exhaustive_gap_at_eight() {
    let data = mixed_gaussian(5_000, 13, &mut rng_for(1, 104));
    let model = model_with_last_as_target(&data).unwrap();
    let raised = SearchOptions {
        exhaustive_ceiling: 8,
        ..SearchOptions::default()
    };
    for objective in Objective::BOTH {
        let exact = exhaustive_search(&model, 12, 8, objective, &raised).unwrap();
        assert_eq!(exact.candidates_evaluated, 495);
        let greedy = search_profile(&model, 12, 8, objective, &SearchOptions::default())
            .unwrap()
            .get(8)
            .unwrap()
            .clone();
        assert_eq!(greedy.method, SearchMethod::Greedy);
        let gap = greedy.omega - exact.omega;
        println!("{objective}: exhaustive {:+.5}, greedy {:+.5}, gap {gap:+.5}", exact.omega, greedy.omega);
        // the exhaustive optimum can never lose to the greedy chain
        assert!(!objective.better(greedy.omega, exact.omega));
    }
}
