mod common;

use common::{ring4, random_loads, raw_strategy};
use mpflow::cuts::{gcc_feasible, maxflow_feasible, violating_allocation, LoadVector};
use mpflow::rational::{int, ratio};
use mpflow::{Error, Network, Rational, ResourceSet};
use num_traits::Zero;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn load_on(net: &Network, loads: &[Rational], set: &ResourceSet) -> Rational {
    net.users_inside(set).iter().map(|i| &loads[i]).sum()
}

#[test]
fn ring4_allocation_is_feasible_with_expected_tight_sets() {
    let net = ring4();
    let loads = vec![int(2), ratio(2, 3), ratio(2, 3), ratio(2, 3)];
    let report = gcc_feasible(&net, &LoadVector(loads.clone())).unwrap();
    assert!(report.feasible);
    assert!(report.violated.is_empty());
    let mut tight: Vec<ResourceSet> = net
        .enumerate_strongly_connected()
        .unwrap()
        .into_iter()
        .filter(|s| load_on(&net, &loads, s) == net.capacity(s))
        .collect();
    tight.sort();
    assert_eq!(report.tight, tight);
    assert!(tight.contains(&net.resource_set(&["1", "2"]).unwrap()));
    assert!(tight.contains(&net.all_resources()));
    assert!(maxflow_feasible(&net, &LoadVector(loads)).unwrap());
}

#[test]
fn zero_and_excess_loads() {
    let net = ring4();
    assert!(gcc_feasible(&net, &LoadVector::zeros(&net)).unwrap().feasible);
    assert!(maxflow_feasible(&net, &LoadVector::zeros(&net)).unwrap());
    let big = LoadVector(vec![int(2); 4]);
    let report = gcc_feasible(&net, &big).unwrap();
    assert!(!report.feasible);
    assert!(report.violated.contains(&net.all_resources()));
    assert!(!maxflow_feasible(&net, &big).unwrap());
}

#[test]
fn single_resource_boundary() {
    let net = Network::new([("j".to_string(), ratio(3, 2))], [("a".to_string(), vec!["j"])]).unwrap();
    assert!(maxflow_feasible(&net, &LoadVector(vec![ratio(3, 2)])).unwrap());
    assert!(!maxflow_feasible(&net, &LoadVector(vec![ratio(5, 2)])).unwrap());
}

#[test]
fn ring4_violating_allocation() {
    let net = ring4();
    let target = net.resource_set(&["1", "2"]).unwrap();
    let v = violating_allocation(&net, &target).unwrap();
    // ε is half of min(min_j C_j, C_1/1, C_2/1) = 1/2.
    assert_eq!(v.0, vec![ratio(5, 2), int(0), int(0), int(0)]);
    let report = gcc_feasible(&net, &v).unwrap();
    assert_eq!(report.violated, vec![target]);
}

#[test]
fn single_resource_violating_allocation() {
    let net = Network::new(
        [("j".to_string(), int(3))],
        [("a".to_string(), vec!["j"]), ("b".to_string(), vec!["j"])],
    )
    .unwrap();
    let v = violating_allocation(&net, &net.all_resources()).unwrap();
    // C/k + ε/k with k = 2 and ε = min(3, 3/2)/2.
    assert_eq!(v.0, vec![int(3) / int(2) + ratio(3, 8), int(3) / int(2) + ratio(3, 8)]);
}

#[test]
fn vacuous_constraint_cannot_be_violated() {
    let net = ring4();
    let single = net.resource_set(&["1"]).unwrap();
    assert!(matches!(violating_allocation(&net, &single), Err(Error::Construction(_))));
}

#[test]
fn load_file_parsing() {
    let net = ring4();
    let v = LoadVector::from_json(&net, r#"{"1": "1/2", "3": 2}"#).unwrap();
    assert_eq!(v.0, vec![ratio(1, 2), int(0), int(2), int(0)]);
    assert!(LoadVector::from_json(&net, r#"{"9": 1}"#).is_err());
    assert!(LoadVector::from_json(&net, r#"{"1": -1}"#).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cut_check_agrees_with_max_flow(raw in raw_strategy(6, 6), seed in any::<u64>()) {
        let net = raw.network();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let loads = LoadVector(random_loads(&mut rng, &net));
        let report = gcc_feasible(&net, &loads).unwrap();
        prop_assert_eq!(report.feasible, maxflow_feasible(&net, &loads).unwrap());
        prop_assert_eq!(report.feasible, report.violated.is_empty());
        for s in net.enumerate_strongly_connected().unwrap() {
            let lhs = load_on(&net, &loads.0, &s);
            prop_assert_eq!(report.violated.contains(&s), lhs > net.capacity(&s));
            prop_assert_eq!(report.tight.contains(&s), lhs == net.capacity(&s));
        }
    }

    #[test]
    fn feasibility_is_monotone(raw in raw_strategy(6, 6), seed in any::<u64>(), keep in 0u32..=4) {
        let net = raw.network();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let loads = random_loads(&mut rng, &net);
        if gcc_feasible(&net, &LoadVector(loads.clone())).unwrap().feasible {
            let smaller: Vec<Rational> = loads.iter().enumerate()
                .map(|(i, l)| if i as u32 % 5 == keep { Rational::zero() } else { l * ratio(3, 4) })
                .collect();
            prop_assert!(gcc_feasible(&net, &LoadVector(smaller.clone())).unwrap().feasible);
            prop_assert!(maxflow_feasible(&net, &LoadVector(smaller)).unwrap());
        }
    }

    #[test]
    fn violating_allocation_breaks_only_its_target(raw in raw_strategy(6, 6)) {
        let net = raw.network();
        for target in net.enumerate_strongly_connected().unwrap() {
            let inside = net.users_inside(&target);
            if inside.is_empty() {
                continue;
            }
            let v = violating_allocation(&net, &target).unwrap();
            let report = gcc_feasible(&net, &v).unwrap();
            prop_assert_eq!(&report.violated, &vec![target.clone()]);
            prop_assert!(report.tight.is_empty());
            // The excess is ε = min(min_j C_j, min_{j ∈ target} C_j / k_j) / 2.
            let mut eps = net.resources().iter().map(|r| r.capacity.clone()).min().unwrap();
            for j in target.iter() {
                let k = inside.iter().filter(|&i| net.user(i).resources.contains(j)).count();
                let share = net.resource(j).capacity.clone() / int(k as i64);
                if share < eps {
                    eps = share;
                }
            }
            eps /= int(2);
            prop_assert_eq!(load_on(&net, &v.0, &target) - net.capacity(&target), eps);
            prop_assert!(!maxflow_feasible(&net, &v).unwrap());
        }
    }
}
