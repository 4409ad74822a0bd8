mod common;

use common::{busy_strategy, ring4, ring4_counts, raw_strategy};
use mpflow::alloc::{allocate, split_rates, SplitMatrix};
use mpflow::oracle::{kkt_check, objective, solve_num, UtilitySpec};
use mpflow::rational::{int, ratio, to_f64};
use mpflow::{Error, Network, Rational};
use num_traits::{Signed, Zero};
use proptest::prelude::*;
use std::collections::BTreeMap;

const TOL: f64 = 1e-8;

fn floats(counts: &[Rational]) -> Vec<f64> {
    counts.iter().map(to_f64).collect()
}

/// `A` alone on resource `a` (C = 1), `B` on `a` and `b` (C = 3).
fn two_speed() -> Network {
    Network::new(
        [("a".to_string(), int(1)), ("b".to_string(), int(3))],
        [("A".to_string(), vec!["a"]), ("B".to_string(), vec!["a", "b"])],
    )
    .unwrap()
}

#[test]
fn ring4_numerical_rates() {
    let net = ring4();
    let counts = floats(&ring4_counts());
    for alpha in [0.5, 1.0, 2.0] {
        let sol = solve_num(&net, &counts, UtilitySpec::new(alpha).unwrap(), TOL).unwrap();
        for (x, e) in sol.rates.iter().zip([0.5, 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]) {
            assert!((x - e).abs() < 1e-6, "alpha {alpha}: {:?}", sol.rates);
        }
    }
}

#[test]
fn single_link_is_capacity_over_count() {
    let net = Network::new([("j".to_string(), ratio(7, 2))], [("i".to_string(), vec!["j"])]).unwrap();
    for alpha in [0.25, 0.5, 1.0, 2.0, 5.0] {
        let sol = solve_num(&net, &[3.0], UtilitySpec::new(alpha).unwrap(), TOL).unwrap();
        assert!((sol.rates[0] - 3.5 / 3.0).abs() < TOL, "alpha {alpha}: {}", sol.rates[0]);
    }
}

#[test]
fn bad_inputs() {
    let net = ring4();
    assert!(matches!(UtilitySpec::new(0.0), Err(Error::Input(_))));
    assert!(matches!(UtilitySpec::new(f64::NAN), Err(Error::Input(_))));
    let u = UtilitySpec::new(1.0).unwrap();
    assert!(solve_num(&net, &[0.0; 4], u, TOL).is_err());
    assert!(solve_num(&net, &[1.0; 4], u, 0.0).is_err());
    assert!(solve_num(&net, &[1.0; 3], u, TOL).is_err());
    assert!(solve_num(&net, &[1.0, -1.0, 1.0, 1.0], u, TOL).is_err());
}

#[test]
fn exact_allocation_passes_and_two_speed_optimum() {
    let net = two_speed();
    let counts = vec![int(1), int(1)];
    let dec = allocate(&net, &counts).unwrap();
    assert_eq!(dec.rates, vec![int(1), int(3)]);
    let splits = split_rates(&net, &counts, &dec).unwrap();
    assert!(kkt_check(&net, &counts, &dec.rates, &splits).ok);
}

#[test]
fn faster_user_on_shared_resource_is_rejected() {
    // Feasible and saturating, but B (rate 7/2) draws from the resource it
    // shares with A (rate 1/2).
    let net = two_speed();
    let counts = vec![int(1), int(1)];
    let rates = vec![ratio(1, 2), ratio(7, 2)];
    let splits = SplitMatrix {
        rows: vec![
            BTreeMap::from([(0, ratio(1, 2))]),
            BTreeMap::from([(0, ratio(1, 2)), (1, int(3))]),
        ],
    };
    let report = kkt_check(&net, &counts, &rates, &splits);
    assert!(!report.ok);
    assert_eq!(report.violations.len(), 1, "{:?}", report.violations);
    assert!(report.violations[0].contains("slower user A"));
}

#[test]
fn swapped_cluster_rates_are_rejected() {
    let net = ring4();
    let counts = ring4_counts();
    let dec = allocate(&net, &counts).unwrap();
    let splits = split_rates(&net, &counts, &dec).unwrap();
    // Exchange the rates of user 1 and user 3 along with their splits.
    let mut rates = dec.rates.clone();
    rates.swap(0, 2);
    let mut rows = splits.rows.clone();
    let r0: Rational = rows[0].values().sum();
    let r2: Rational = rows[2].values().sum();
    for v in rows[0].values_mut() {
        *v = &*v * &rates[0] / &r0;
    }
    for v in rows[2].values_mut() {
        *v = &*v * &rates[2] / &r2;
    }
    assert!(!kkt_check(&net, &counts, &rates, &SplitMatrix { rows }).ok);
}

#[test]
fn dimension_mismatch_is_reported() {
    let net = ring4();
    let report = kkt_check(&net, &ring4_counts(), &[int(1)], &SplitMatrix { rows: vec![] });
    assert!(!report.ok);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn perturbed_split_is_rejected(raw in raw_strategy(6, 6), pick in any::<usize>(), up in any::<bool>()) {
        let net = raw.network();
        let counts = raw.counts();
        prop_assume!(counts.iter().any(|c| !c.is_zero()));
        let dec = allocate(&net, &counts).unwrap();
        let splits = split_rates(&net, &counts, &dec).unwrap();
        prop_assert!(kkt_check(&net, &counts, &dec.rates, &splits).ok);
        // Move one split of a user with flows by δ, keeping it nonnegative.
        let entries: Vec<(usize, usize)> = (0..net.num_users())
            .filter(|&i| counts[i].is_positive())
            .flat_map(|i| splits.rows[i].iter().filter(|(_, v)| up || v.is_positive()).map(move |(&j, _)| (i, j)))
            .collect();
        let (i, j) = entries[pick % entries.len()];
        let mut rows = splits.rows.clone();
        let delta = if up { ratio(1, 7) } else { -(&rows[i][&j] / int(2)) };
        *rows.get_mut(i).unwrap().get_mut(&j).unwrap() += &delta;
        let mut rates = dec.rates.clone();
        rates[i] += delta;
        let report = kkt_check(&net, &counts, &rates, &SplitMatrix { rows });
        prop_assert!(!report.ok);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rates_do_not_depend_on_alpha(raw in busy_strategy(5, 5)) {
        let net = raw.network();
        let counts = floats(&raw.counts());
        let dec = allocate(&net, &raw.counts()).unwrap();
        for alpha in [0.5, 1.0, 2.0] {
            let sol = solve_num(&net, &counts, UtilitySpec::new(alpha).unwrap(), TOL).unwrap();
            for i in 0..net.num_users() {
                prop_assert!((sol.rates[i] - to_f64(&dec.rates[i])).abs() < 1e-6,
                    "alpha {}: {:?} vs {:?}", alpha, sol.rates, dec.rates);
            }
        }
    }

    #[test]
    fn rates_are_inverse_marginal_prices(raw in busy_strategy(5, 5), alpha_ix in 0usize..3) {
        let u = UtilitySpec::new([0.5, 1.0, 2.0][alpha_ix]).unwrap();
        let net = raw.network();
        let counts = floats(&raw.counts());
        let sol = solve_num(&net, &counts, u, TOL).unwrap();
        prop_assert!(sol.duals.iter().all(|m| *m >= 0.0));
        for (i, user) in net.users().iter().enumerate() {
            let price = user.resources.iter().map(|j| sol.duals[j]).fold(f64::INFINITY, f64::min);
            let x = u.inverse_derivative(price);
            prop_assert!((x - sol.rates[i]).abs() <= 1e-6 * sol.rates[i].max(1.0),
                "user {}: {} vs {}", i, x, sol.rates[i]);
        }
    }

    #[test]
    fn exact_allocation_is_at_least_as_good(raw in busy_strategy(5, 5), alpha_ix in 0usize..3) {
        let u = UtilitySpec::new([0.5, 1.0, 2.0][alpha_ix]).unwrap();
        let net = raw.network();
        let counts = floats(&raw.counts());
        let dec = allocate(&net, &raw.counts()).unwrap();
        let exact: Vec<f64> = dec.rates.iter().map(to_f64).collect();
        let sol = solve_num(&net, &counts, u, TOL).unwrap();
        let slack = TOL * net.num_users() as f64;
        prop_assert!(objective(&counts, &exact, u) >= sol.objective(&counts, u) - slack);
    }
}
