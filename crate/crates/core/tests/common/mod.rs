//! Random instances shared by the integration tests.
#![allow(dead_code)]

use mpflow::dynamics::{TrafficSpec, UserTraffic};
use mpflow::equilibrium::neq_condition;
use mpflow::rational::{int, ratio};
use mpflow::{Network, Rational, ResourceSet};
use num_traits::Zero;
use proptest::prelude::*;
use rand::Rng;

/// Capacities as `(p, q)`, routes as resource bitmasks, counts per user.
#[derive(Clone, Debug)]
pub struct Raw {
    pub caps: Vec<(i64, i64)>,
    pub routes: Vec<u64>,
    pub counts: Vec<i64>,
}

impl Raw {
    pub fn network(&self) -> Network {
        let nj = self.caps.len();
        Network::new(
            self.caps
                .iter()
                .enumerate()
                .map(|(j, &(p, q))| (format!("r{j}"), ratio(p, q))),
            self.routes.iter().enumerate().map(|(i, &mask)| {
                let route: Vec<String> = (0..nj).filter(|j| mask >> j & 1 == 1).map(|j| format!("r{j}")).collect();
                (format!("u{i}"), route)
            }),
        )
        .unwrap()
    }

    pub fn counts(&self) -> Vec<Rational> {
        self.counts.iter().map(|&c| int(c)).collect()
    }
}

pub fn raw_strategy(max_j: usize, max_i: usize) -> impl Strategy<Value = Raw> {
    (1..=max_j, 1..=max_i).prop_flat_map(|(nj, ni)| {
        (
            prop::collection::vec((1i64..=12, 1i64..=4), nj),
            prop::collection::vec(1u64..(1u64 << nj), ni),
            prop::collection::vec(0i64..=5, ni),
        )
            .prop_map(|(caps, routes, counts)| Raw { caps, routes, counts })
    })
}

/// Like [`raw_strategy`] but every user has flows.
pub fn busy_strategy(max_j: usize, max_i: usize) -> impl Strategy<Value = Raw> {
    raw_strategy(max_j, max_i).prop_map(|mut r| {
        for c in &mut r.counts {
            *c = (*c).max(1);
        }
        r
    })
}

pub fn random_raw<R: Rng>(rng: &mut R, max_j: usize, max_i: usize) -> Raw {
    let nj = rng.random_range(1..=max_j);
    let ni = rng.random_range(1..=max_i);
    Raw {
        caps: (0..nj).map(|_| (rng.random_range(1..=12), rng.random_range(1..=4))).collect(),
        // Short routes give more varied connectivity than uniform masks.
        routes: (0..ni)
            .map(|_| {
                let len = rng.random_range(1..=nj.min(3));
                let mut mask = 0u64;
                while (mask.count_ones() as usize) < len {
                    mask |= 1 << rng.random_range(0..nj);
                }
                mask
            })
            .collect(),
        counts: (0..ni).map(|_| rng.random_range(0..=5)).collect(),
    }
}

/// Random loads with denominators up to 6, around the capacity scale.
pub fn random_loads<R: Rng>(rng: &mut R, net: &Network) -> Vec<Rational> {
    let scale = net.capacity(&net.all_resources()) * int(2) / int(net.num_users() as i64);
    (0..net.num_users())
        .map(|_| {
            if rng.random_bool(0.2) {
                Rational::zero()
            } else {
                &scale * ratio(rng.random_range(0..=12), rng.random_range(1..=6) * 6)
            }
        })
        .collect()
}

/// Largest `Σ_{I(J')} ρ / C(J')` over strongly connected sets.
pub fn utilization(net: &Network, rho: &[Rational]) -> Rational {
    let mut worst = Rational::zero();
    for set in net.enumerate_strongly_connected().unwrap() {
        let load: Rational = net.users_inside(&set).iter().map(|i| &rho[i]).sum();
        let u = load / net.capacity(&set);
        if u > worst {
            worst = u;
        }
    }
    worst
}

/// Loads `ρ` with random odd denominators scaled to a random utilization
/// below one, resampled until no cut is exactly exhausted.
pub fn stable_rho<R: Rng>(rng: &mut R, net: &Network) -> Vec<Rational> {
    loop {
        let raw: Vec<Rational> = (0..net.num_users())
            .map(|_| ratio(rng.random_range(1..=1000), 997))
            .collect();
        let target = ratio(rng.random_range(50..=95), 100);
        let scale = target / utilization(net, &raw);
        let rho: Vec<Rational> = raw.iter().map(|r| r * &scale).collect();
        if neq_condition(net, &rho).unwrap().holds {
            return rho;
        }
    }
}

pub fn traffic_from(net: &Network, rho: &[Rational], kappa: &[Rational], peaks: Option<&[Rational]>) -> TrafficSpec {
    TrafficSpec::new(
        net,
        net.users()
            .iter()
            .enumerate()
            .map(|(i, u)| UserTraffic {
                id: u.id.clone(),
                lambda: rho[i].clone() * int(2),
                mu: int(2),
                kappa: kappa[i].clone() * int(3),
                eta: int(3),
                peak: peaks.map(|p| p[i].clone()),
            })
            .collect(),
    )
    .unwrap()
}

/// Stable integrated traffic.
pub fn integrated_traffic<R: Rng>(rng: &mut R, net: &Network) -> TrafficSpec {
    let rho = stable_rho(rng, net);
    let kappa: Vec<Rational> = (0..net.num_users()).map(|_| ratio(rng.random_range(1..=8), 4)).collect();
    traffic_from(net, &rho, &kappa, None)
}

/// Stable peak-rate traffic satisfying the uniqueness condition.
pub fn peak_traffic<R: Rng>(rng: &mut R, net: &Network) -> TrafficSpec {
    let rho = stable_rho(rng, net);
    let peaks: Vec<Rational> = (0..net.num_users()).map(|_| ratio(rng.random_range(1..=16), 4)).collect();
    let zero = vec![Rational::zero(); net.num_users()];
    traffic_from(net, &rho, &zero, Some(&peaks))
}

/// All nonempty subsets of the network's resources.
pub fn all_subsets(net: &Network) -> Vec<ResourceSet> {
    let nj = net.num_resources();
    (1u64..(1 << nj))
        .map(|m| ResourceSet::from_indices(nj, (0..nj).filter(|j| m >> j & 1 == 1)))
        .collect()
}

/// Four unit resources in a ring; user k uses k and k+1.
pub fn ring4() -> Network {
    Network::new(
        (1..=4).map(|j| (j.to_string(), int(1))),
        (1..=4).map(|i| (i.to_string(), vec![i.to_string(), (i % 4 + 1).to_string()])),
    )
    .unwrap()
}

pub fn ring4_counts() -> Vec<Rational> {
    vec![int(4), int(1), int(1), int(1)]
}
