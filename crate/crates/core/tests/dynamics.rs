mod common;

use common::{ring4, integrated_traffic, random_raw};
use mpflow::circle::{circle_network, circle_traffic, CircleParams};
use mpflow::dynamics::{simulate, stability_check, streaming_blocking, Model, SimConfig, TrafficSpec, UserTraffic};
use mpflow::rational::{int, ratio, to_f64};
use mpflow::{Error, Network, Rational};
use num_traits::Zero;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn streaming(net: &Network, kappa: &[Rational], eta: &[Rational]) -> TrafficSpec {
    TrafficSpec::new(
        net,
        net.users()
            .iter()
            .enumerate()
            .map(|(i, u)| UserTraffic {
                id: u.id.clone(),
                lambda: Rational::zero(),
                mu: int(1),
                kappa: kappa[i].clone(),
                eta: eta[i].clone(),
                peak: None,
            })
            .collect(),
    )
    .unwrap()
}

/// `u` on `a` (C = 2) and `b` (C = 1), `v` on `b` alone.
fn two_users() -> Network {
    Network::new(
        [("a".to_string(), int(2)), ("b".to_string(), int(1))],
        [("u".to_string(), vec!["a", "b"]), ("v".to_string(), vec!["b"])],
    )
    .unwrap()
}

#[test]
fn symmetric_circle_below_capacity_is_stable() {
    for (n, r) in [(3, 2), (5, 2), (6, 4)] {
        let p = CircleParams::new(n, r, int(1), ratio(9, 10), int(1), int(1), int(1)).unwrap();
        let net = circle_network(&p).unwrap();
        let rho = vec![p.rho(); n];
        assert!(stability_check(&net, &rho).unwrap().stable);
        // An arc of k resources confines k - r + 1 users, so at ρ = C only
        // the full ring is exhausted.
        let full = vec![int(1); n];
        let report = stability_check(&net, &full).unwrap();
        assert!(!report.stable);
        assert_eq!(report.violated, vec![net.all_resources()]);
    }
}

#[test]
fn overload_seen_only_by_the_full_ring() {
    let net = ring4();
    let rho = vec![ratio(19, 10), ratio(4, 5), ratio(4, 5), ratio(4, 5)];
    let report = stability_check(&net, &rho).unwrap();
    assert!(!report.stable);
    assert_eq!(report.violated, vec![net.all_resources()]);
    let err = report.into_result(&net).unwrap_err();
    assert!(matches!(err, Error::Unstable { ref violated } if violated == &vec![vec!["1", "2", "3", "4"]]));
}

#[test]
fn boundary_load_is_unstable() {
    let net = ring4();
    // Users 1 and 2 exactly fill {1, 2, 3}; every other set has room.
    let rho = vec![ratio(3, 2), ratio(3, 2), ratio(1, 10), ratio(1, 10)];
    let report = stability_check(&net, &rho).unwrap();
    assert_eq!(report.violated, vec![net.resource_set(&["1", "2", "3"]).unwrap()]);
    assert!(stability_check(&net, &[int(-1), int(0), int(0), int(0)]).is_err());
}

#[test]
fn simulation_refuses_unstable_load() {
    let net = ring4();
    let traffic = TrafficSpec::new(
        &net,
        net.users()
            .iter()
            .map(|u| UserTraffic { id: u.id.clone(), lambda: int(1), mu: int(1), kappa: int(1), eta: int(1), peak: None })
            .collect(),
    )
    .unwrap();
    assert!(matches!(simulate(&net, &traffic, &SimConfig::new(Model::Integrated)), Err(Error::Unstable { .. })));
}

#[test]
fn streaming_means_match_offered_load() {
    let net = two_users();
    let traffic = streaming(&net, &[int(3), ratio(1, 2)], &[int(2), ratio(1, 4)]);
    let mut cfg = SimConfig::new(Model::Streaming);
    cfg.horizon = 4_000.0;
    cfg.warmup = 50.0;
    cfg.seed = 3;
    cfg.replications = 8;
    let res = simulate(&net, &traffic, &cfg).unwrap();
    for (est, want) in res.m.iter().zip([1.5, 2.0]) {
        // Two comparisons at 95% each; twice the half-width covers both.
        assert!((est.mean - want).abs() <= 2.0 * est.half_width, "{est:?} vs {want}");
        assert!(est.half_width < 0.05 * want);
    }
    assert!(res.blocking.iter().all(|b| b.mean == 0.0));
}

#[test]
fn blocking_above_capacity_is_certain() {
    let net = Network::new([("j".to_string(), int(2))], [("i".to_string(), vec!["j"])]).unwrap();
    let traffic = streaming(&net, &[int(1)], &[int(1)]);
    let b = streaming_blocking(&net, &traffic, &int(3), None).unwrap();
    assert_eq!(b.probability, vec![int(1)]);
    assert_eq!(b.states, 1);
}

#[test]
fn blocking_single_link_example() {
    let net = Network::new([("j".to_string(), int(2))], [("i".to_string(), vec!["j"])]).unwrap();
    let traffic = streaming(&net, &[int(1)], &[int(1)]);
    let b = streaming_blocking(&net, &traffic, &int(1), None).unwrap();
    assert_eq!(b.probability, vec![ratio(1, 5)]);
    assert!(streaming_blocking(&net, &traffic, &int(1), Some(&[1])).is_err());
    assert_eq!(streaming_blocking(&net, &traffic, &int(1), Some(&[6])).unwrap().probability, vec![ratio(1, 5)]);
}

/// Blocking of `u` and `v` on [`two_users`] with `y = 1/2` by direct
/// enumeration: the state `(a, b)` is admissible iff `b ≤ 2` and
/// `a + b ≤ 6`, and a class is blocked when one more of it is not.
fn two_user_blocking(load: [f64; 2]) -> [f64; 2] {
    let ok = |a: i32, b: i32| b <= 2 && a + b <= 6;
    let weight = |a: i32, b: i32| {
        let f = |k: i32| (1..=k).map(f64::from).product::<f64>();
        load[0].powi(a) / f(a) * load[1].powi(b) / f(b)
    };
    let (mut total, mut bu, mut bv) = (0.0, 0.0, 0.0);
    for a in 0..=8 {
        for b in 0..=8 {
            if ok(a, b) {
                let w = weight(a, b);
                total += w;
                if !ok(a + 1, b) {
                    bu += w;
                }
                if !ok(a, b + 1) {
                    bv += w;
                }
            }
        }
    }
    [bu / total, bv / total]
}

#[test]
fn admission_control_matches_exact_blocking() {
    let net = two_users();
    let traffic = streaming(&net, &[int(2), ratio(1, 2)], &[int(1), int(1)]);
    let y = ratio(1, 2);
    let exact = streaming_blocking(&net, &traffic, &y, None).unwrap();
    let direct = two_user_blocking([2.0, 0.5]);
    for i in 0..2 {
        assert!((to_f64(&exact.probability[i]) - direct[i]).abs() < 1e-12);
    }
    let mut cfg = SimConfig::new(Model::Streaming);
    cfg.horizon = 20_000.0;
    cfg.warmup = 20.0;
    cfg.seed = 17;
    cfg.replications = 8;
    cfg.admission = Some(0.5);
    let res = simulate(&net, &traffic, &cfg).unwrap();
    for i in 0..2 {
        let est = res.blocking[i];
        assert!((est.mean - direct[i]).abs() <= 2.0 * est.half_width, "user {i}: {est:?} vs {}", direct[i]);
    }
}

#[test]
fn integrated_throughput_balances_arrivals() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..3 {
        let net = random_raw(&mut rng, 3, 3).network();
        let traffic = integrated_traffic(&mut rng, &net);
        let mut cfg = SimConfig::new(Model::Integrated);
        cfg.horizon = 3_000.0;
        cfg.warmup = 50.0;
        cfg.seed = 29;
        cfg.replications = 8;
        let res = simulate(&net, &traffic, &cfg).unwrap();
        for (est, rho) in res.throughput.iter().zip(traffic.rho()) {
            let rho = to_f64(&rho);
            assert!((est.mean - rho).abs() <= 2.0 * est.half_width.max(0.01 * rho), "{est:?} vs {rho}");
        }
    }
}

#[test]
fn peak_rate_circle_scales_to_equilibrium() {
    let p = CircleParams::new(5, 2, int(1), ratio(1, 2), int(1), int(1), int(1)).unwrap();
    let net = circle_network(&p).unwrap();
    let mut traffic = circle_traffic(&p, &net).unwrap();
    for u in &mut traffic.users {
        u.peak = Some(ratio(1, 4));
    }
    let mut cfg = SimConfig::new(Model::PeakRate);
    cfg.scale = 100;
    cfg.horizon = 100.0;
    cfg.warmup = 20.0;
    cfg.seed = 1;
    cfg.replications = 4;
    let res = simulate(&net, &traffic, &cfg).unwrap();
    // At n̂ = ρ / r = 2 per unit scale the pooled rate 5 / 10 exceeds the peak.
    for est in &res.n {
        let per_unit = est.mean / 100.0;
        assert!((per_unit - 2.0).abs() < 0.2, "{est:?}");
    }
}

#[test]
fn identical_seeds_give_identical_results() {
    let net = two_users();
    let traffic = streaming(&net, &[int(2), ratio(1, 2)], &[int(1), int(1)]);
    let mut cfg = SimConfig::new(Model::Streaming);
    cfg.horizon = 200.0;
    cfg.seed = 99;
    cfg.replications = 3;
    cfg.record_every = Some(10.0);
    let a = simulate(&net, &traffic, &cfg).unwrap();
    assert_eq!(a, simulate(&net, &traffic, &cfg).unwrap());
    assert_eq!(a.trajectory.len(), 21);
    cfg.seed = 100;
    assert_ne!(a, simulate(&net, &traffic, &cfg).unwrap());
}
