//! Fluid limits: drift, equilibrium points and complete resource pooling.
//!
//! Integrated traffic has the unique equilibrium `m̂ = κ/η`, `n̂ x̂ = ρ` where
//! `x̂` solves the clustering problem with budgets `C(J') - Σ_{I(J')} ρ` and
//! weights `m̂`. With peak rates, the candidate rate of a set `J'` when the
//! users of rank at most `i*` are held at their peak rate is
//!
//! ```text
//! Π(J', I', i*) = (C(J') - Σ_{i ∈ I', rank > i*} ρ_i) / Σ_{i ∈ I', rank ≤ i*} ρ_i / r_i
//! ```
//!
//! and the equilibrium is built level by level from the minimal `Π`.

use num_traits::{Signed, Zero};
use serde_json::json;

use crate::alloc::{allocate, Allocator};
use crate::dynamics::{stability_check, Model, TrafficSpec};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::rational::{self, Rate, Rational};
use crate::scalar::Scalar;
use crate::set::{ResourceSet, UserSet};

/// Time derivative of the fluid limit.
///
/// Returns `(n', m')`: `n'` is empty for the streaming model and `m'` is
/// empty for the peak-rate model. Rates come from the clustering allocation
/// on `n + m` (integrated) or `n` (peak rate).
pub fn drift<T: Scalar>(
    net: &Network,
    traffic: &TrafficSpec,
    model: Model,
    n: &[T],
    m: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    let nu = net.num_users();
    let f = |q: &Rational| T::from_rational(q);
    let streaming_drift = || -> Result<Vec<T>> {
        if m.len() != nu {
            return Err(Error::Input("need one streaming count per user".into()));
        }
        Ok(traffic
            .users
            .iter()
            .zip(m)
            .map(|(u, mi)| f(&u.kappa) - f(&u.eta) * mi.clone())
            .collect())
    };
    match model {
        Model::Streaming => Ok((Vec::new(), streaming_drift()?)),
        Model::Integrated => {
            if n.len() != nu {
                return Err(Error::Input("need one elastic count per user".into()));
            }
            let md = streaming_drift()?;
            let total: Vec<T> = n.iter().zip(m).map(|(a, b)| a.clone() + b.clone()).collect();
            let x = allocate(net, &total)?.rates;
            let nd = (0..nu)
                .map(|i| {
                    let u = &traffic.users[i];
                    f(&u.lambda) - f(&u.mu) * n[i].clone() * x[i].clone()
                })
                .collect();
            Ok((nd, md))
        }
        Model::PeakRate => {
            if n.len() != nu {
                return Err(Error::Input("need one elastic count per user".into()));
            }
            let peaks = traffic.peaks()?;
            let x = allocate(net, n)?.rates;
            let nd = (0..nu)
                .map(|i| {
                    let u = &traffic.users[i];
                    let r = f(&peaks[i]);
                    let rate = if x[i] < r { x[i].clone() } else { r };
                    f(&u.lambda) - f(&u.mu) * n[i].clone() * rate
                })
                .collect();
            Ok((nd, Vec::new()))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquilibriumLevel {
    pub users: UserSet,
    pub resources: ResourceSet,
    pub rate: Rate,
    /// Number of peak-rate ranks at or below the level's threshold `i*_k`.
    pub istar: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquilibriumPoint {
    pub n_hat: Vec<Rational>,
    /// Streaming counts; zero in the peak-rate model.
    pub m_hat: Vec<Rational>,
    pub x_hat: Vec<Rational>,
    pub levels: Vec<EquilibriumLevel>,
    /// Users held at their peak rate.
    pub peak_constrained: UserSet,
}

impl EquilibriumPoint {
    /// True when every user with traffic shares one level.
    pub fn single_level(&self) -> bool {
        self.levels.iter().filter(|l| !l.users.is_empty()).count() <= 1
    }

    pub fn to_json(&self, net: &Network) -> serde_json::Value {
        let by_user = |v: &[Rational]| -> serde_json::Value {
            net.users()
                .iter()
                .zip(v)
                .map(|(u, q)| (u.id.clone(), serde_json::Value::from(rational::format_rational(q))))
                .collect::<serde_json::Map<_, _>>()
                .into()
        };
        let levels: Vec<_> = self
            .levels
            .iter()
            .map(|l| {
                json!({
                    "rate": l.rate.to_string(),
                    "users": net.user_ids(&l.users),
                    "resources": net.resource_ids(&l.resources),
                    "istar": l.istar,
                })
            })
            .collect();
        json!({
            "n_hat": by_user(&self.n_hat),
            "m_hat": by_user(&self.m_hat),
            "x_hat": by_user(&self.x_hat),
            "levels": levels,
            "I_star": net.user_ids(&self.peak_constrained),
        })
    }
}

/// Equilibrium of the integrated streaming/elastic fluid limit.
pub fn integrated_equilibrium(net: &Network, traffic: &TrafficSpec) -> Result<EquilibriumPoint> {
    traffic.validate(Model::Integrated)?;
    let rho = traffic.rho();
    stability_check(net, &rho)?.into_result(net)?;
    let m_hat = traffic.streaming_load();
    let budget = |s: &ResourceSet, users: &UserSet| -> Rational {
        net.capacity(s) - users.iter().map(|i| &rho[i]).sum::<Rational>()
    };
    let dec = Allocator::new(net).allocate_generalized(&budget, &m_hat)?;
    let n_hat = rho.iter().zip(&dec.rates).map(|(r, x)| r / x).collect();
    let levels = dec
        .levels
        .into_iter()
        .map(|l| EquilibriumLevel {
            users: l.users,
            resources: l.resources,
            rate: l.rate,
            istar: None,
        })
        .collect();
    Ok(EquilibriumPoint {
        n_hat,
        m_hat,
        x_hat: dec.rates,
        levels,
        peak_constrained: net.no_users(),
    })
}

/// Users with traffic, ranked by peak rate (ties by user id).
#[derive(Clone, Debug)]
pub struct PeakOrder {
    /// `rank[i]` is 1-based; `None` for users without traffic.
    pub rank: Vec<Option<usize>>,
    /// Peak rates in rank order.
    pub sorted: Vec<Rational>,
}

impl PeakOrder {
    pub fn new(net: &Network, rho: &[Rational], peaks: &[Rational]) -> Self {
        let mut order: Vec<usize> = (0..rho.len()).filter(|&i| rho[i].is_positive()).collect();
        order.sort_by(|&a, &b| peaks[a].cmp(&peaks[b]).then_with(|| net.user(a).id.cmp(&net.user(b).id)));
        let mut rank = vec![None; rho.len()];
        for (k, &i) in order.iter().enumerate() {
            rank[i] = Some(k + 1);
        }
        PeakOrder {
            rank,
            sorted: order.iter().map(|&i| peaks[i].clone()).collect(),
        }
    }

    /// `Π(J', I', i*)`, or `None` when no user of `I'` has rank `≤ i*`.
    pub fn pi(&self, capacity: &Rational, users: &UserSet, rho: &[Rational], peaks: &[Rational], istar: usize) -> Option<Rational> {
        let mut above = Rational::zero();
        let mut denom = Rational::zero();
        for i in users.iter() {
            match self.rank[i] {
                Some(k) if k <= istar => denom += &rho[i] / &peaks[i],
                Some(_) => above += &rho[i],
                None => {}
            }
        }
        (!denom.is_zero()).then(|| (capacity - above) / denom)
    }

    /// The unique `i*` with `r_{i*} < Π(J', I', i*) ≤ r_{i*+1}` and its `Π`.
    pub fn find_istar(
        &self,
        capacity: &Rational,
        users: &UserSet,
        rho: &[Rational],
        peaks: &[Rational],
    ) -> Result<(usize, Rational)> {
        let load: Rational = users.iter().map(|i| &rho[i]).sum();
        if &load >= capacity {
            return Err(Error::Unstable { violated: Vec::new() });
        }
        let k = self.sorted.len();
        for istar in 1..=k {
            let Some(pi) = self.pi(capacity, users, rho, peaks, istar) else {
                continue;
            };
            let above_low = pi > self.sorted[istar - 1];
            let below_high = istar == k || pi <= self.sorted[istar];
            if above_low && below_high {
                return Ok((istar, pi));
            }
        }
        Err(Error::Internal("no peak-rate threshold satisfies the interval condition".into()))
    }
}

/// `i*` for a single group holding every given user, ranked by `peaks`.
pub fn find_istar(capacity: &Rational, rho: &[Rational], peaks: &[Rational]) -> Result<(usize, Rational)> {
    if rho.len() != peaks.len() {
        return Err(Error::Input("need one peak rate per load".into()));
    }
    let mut order: Vec<usize> = (0..rho.len()).filter(|&i| rho[i].is_positive()).collect();
    order.sort_by(|&a, &b| peaks[a].cmp(&peaks[b]).then(a.cmp(&b)));
    let mut rank = vec![None; rho.len()];
    for (k, &i) in order.iter().enumerate() {
        rank[i] = Some(k + 1);
    }
    let po = PeakOrder {
        rank,
        sorted: order.iter().map(|&i| peaks[i].clone()).collect(),
    };
    let users = UserSet::full(rho.len());
    po.find_istar(capacity, &users, rho, peaks).map_err(|e| match e {
        Error::Unstable { .. } => Error::Unstable { violated: vec![vec!["J'".into()]] },
        e => e,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeqReport {
    pub holds: bool,
    /// `(I', J')` pairs with `Σ_{I'} ρ = C(J')`.
    pub witnesses: Vec<(UserSet, ResourceSet)>,
}

/// Largest number of optional users per set the uniqueness check enumerates.
pub const MAX_NEQ_EXTRA: usize = 20;

/// Checks `Σ_{I'} ρ ≠ C(J')` for every connected `J'` and every `I'` with
/// `I(J') ⊊ I' ⊆ {i : J(i) ∩ J' ≠ ∅}`.
pub fn neq_condition(net: &Network, rho: &[Rational]) -> Result<NeqReport> {
    if rho.len() != net.num_users() {
        return Err(Error::Input("need one load per user".into()));
    }
    let mut witnesses = Vec::new();
    for set in net.enumerate_connected()? {
        let inside = net.users_inside(&set);
        let extra: Vec<usize> = net.users_touching(&set).difference(&inside).iter().collect();
        if extra.len() > MAX_NEQ_EXTRA {
            return Err(Error::EnumerationCap {
                size: extra.len(),
                cap: MAX_NEQ_EXTRA,
            });
        }
        let base: Rational = inside.iter().map(|i| &rho[i]).sum();
        let cap = net.capacity(&set);
        let mut found: Vec<UserSet> = Vec::new();
        for mask in 1u64..(1u64 << extra.len()) {
            let mut users = inside.clone();
            let mut total = base.clone();
            for (b, &i) in extra.iter().enumerate() {
                if mask >> b & 1 == 1 {
                    users.insert(i);
                    total += &rho[i];
                }
            }
            if total == cap {
                found.push(users);
            }
        }
        found.sort();
        witnesses.extend(found.into_iter().map(|u| (u, set.clone())));
    }
    Ok(NeqReport {
        holds: witnesses.is_empty(),
        witnesses,
    })
}

/// Equilibrium of the peak-rate fluid limit.
///
/// Fails with [`Error::NonUnique`] when some cut is exactly exhausted, since
/// then a whole range of equilibria exists.
pub fn peak_rate_equilibrium(net: &Network, traffic: &TrafficSpec) -> Result<EquilibriumPoint> {
    traffic.validate(Model::PeakRate)?;
    let rho = traffic.rho();
    let peaks = traffic.peaks()?;
    stability_check(net, &rho)?.into_result(net)?;
    let neq = neq_condition(net, &rho)?;
    if let Some((users, resources)) = neq.witnesses.first() {
        return Err(Error::NonUnique {
            users: net.user_ids(users),
            resources: net.resource_ids(resources),
        });
    }
    let order = PeakOrder::new(net, &rho, &peaks);
    let nu = net.num_users();
    let mut n_hat = vec![Rational::zero(); nu];
    let mut x_hat = vec![Rational::zero(); nu];
    let mut peak_constrained = net.no_users();
    let mut levels = Vec::new();
    let mut remaining = net.all_resources();
    let mut active = net.no_users();
    for (i, r) in rho.iter().enumerate() {
        if r.is_positive() {
            active.insert(i);
        }
    }
    let mut alloc = Allocator::new(net);
    let mut previous: Option<Rational> = None;
    while !remaining.is_empty() {
        let family = alloc.family(&remaining, &active)?;
        let mut best: Option<Rational> = None;
        let mut union = net.no_resources();
        for c in family.iter().filter(|c| !c.users.is_empty()) {
            let cap = net.capacity(&c.resources);
            // The reduced network stays stable at every step.
            let load: Rational = c.users.iter().map(|i| &rho[i]).sum();
            if load >= cap {
                return Err(Error::Internal(format!(
                    "reduced network unstable on {{{}}}",
                    net.resource_ids(&c.resources).join(",")
                )));
            }
            let (_, pi) = order.find_istar(&cap, &c.users, &rho, &peaks)?;
            match &best {
                Some(b) if pi == *b => union.union_with(&c.resources),
                Some(b) if pi > *b => {}
                _ => {
                    best = Some(pi);
                    union = c.resources.clone();
                }
            }
        }
        let Some(x) = best else {
            levels.push(EquilibriumLevel {
                users: net.no_users(),
                resources: remaining.clone(),
                rate: Rate::Infinite,
                istar: None,
            });
            break;
        };
        let users = net.view_of(remaining.clone(), active.clone()).users_inside(&union);
        let (istar, pi) = order.find_istar(&net.capacity(&union), &users, &rho, &peaks)?;
        if pi != x {
            return Err(Error::Internal(format!(
                "union of minimizers has rate {pi}, expected {x}"
            )));
        }
        if previous.as_ref().is_some_and(|p| *p >= x) {
            return Err(Error::Internal("equilibrium level rates not increasing".into()));
        }
        for i in users.iter() {
            x_hat[i] = x.clone();
            let rank = order.rank[i].expect("active users are ranked");
            if rank <= istar {
                n_hat[i] = &rho[i] / &peaks[i];
                peak_constrained.insert(i);
            } else {
                n_hat[i] = &rho[i] / &x;
            }
        }
        remaining.difference_with(&union);
        active.difference_with(&users);
        previous = Some(x.clone());
        levels.push(EquilibriumLevel {
            users,
            resources: union,
            rate: Rate::Finite(x),
            istar: Some(istar),
        });
    }
    Ok(EquilibriumPoint {
        n_hat,
        m_hat: vec![Rational::zero(); nu],
        x_hat,
        levels,
        peak_constrained,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolingReport {
    /// All inequalities hold strictly.
    pub pooled: bool,
    /// Sets where the inequality fails.
    pub failing: Vec<ResourceSet>,
    /// Sets where it holds with equality.
    pub boundary: Vec<ResourceSet>,
}

impl PoolingReport {
    fn from_parts(failing: Vec<ResourceSet>, boundary: Vec<ResourceSet>) -> Self {
        PoolingReport {
            pooled: failing.is_empty() && boundary.is_empty(),
            failing,
            boundary,
        }
    }
}

/// Necessary and sufficient test for complete resource pooling at the
/// integrated equilibrium.
///
/// With the pooled rate `x = (C(J) - Σ ρ) / Σ κ/η`, pooling requires
/// `Σ_{I(J')} ρ + x Σ_{I(J')} κ/η < C(J')` on every strongly connected
/// `J' ≠ J` with `I(J') ≠ ∅`; this is the pooled rate lying strictly below
/// the rate of `J'`. Equalities are reported as boundary cases.
pub fn crp_check_integrated(net: &Network, traffic: &TrafficSpec) -> Result<PoolingReport> {
    traffic.validate(Model::Integrated)?;
    let rho = traffic.rho();
    stability_check(net, &rho)?.into_result(net)?;
    let m_hat = traffic.streaming_load();
    let all = net.all_resources();
    let x = (net.capacity(&all) - rho.iter().sum::<Rational>()) / m_hat.iter().sum::<Rational>();
    let mut failing = Vec::new();
    let mut boundary = Vec::new();
    for c in net.view().strongly_connected()? {
        if c.resources == all || c.users.is_empty() {
            continue;
        }
        let lhs: Rational = c.users.iter().map(|i| &rho[i] + &x * &m_hat[i]).sum();
        let cap = net.capacity(&c.resources);
        if lhs > cap {
            failing.push(c.resources);
        } else if lhs == cap {
            boundary.push(c.resources);
        }
    }
    Ok(PoolingReport::from_parts(failing, boundary))
}

/// Sufficient pooling test for the integrated model: the users that can
/// reach `J'` carry more load than `C(J')` for every nonempty `J'` whose
/// complement is strongly connected.
pub fn crp_sufficient_integrated(net: &Network, traffic: &TrafficSpec) -> Result<PoolingReport> {
    let rho = traffic.rho();
    stability_check(net, &rho)?.into_result(net)?;
    let all = net.all_resources();
    let mut failing = Vec::new();
    for c in net.view().strongly_connected()? {
        let set = all.difference(&c.resources);
        if set.is_empty() {
            continue;
        }
        let load: Rational = net.users_touching(&set).iter().map(|i| &rho[i]).sum();
        if load <= net.capacity(&set) {
            failing.push(set);
        }
    }
    failing.sort();
    Ok(PoolingReport::from_parts(failing, Vec::new()))
}

/// Sufficient pooling test for the peak-rate model: the users that can reach
/// `J'` carry more load than `C(J')` for every connected `J' ≠ J`.
pub fn crp_check_peak(net: &Network, traffic: &TrafficSpec) -> Result<PoolingReport> {
    let rho = traffic.rho();
    stability_check(net, &rho)?.into_result(net)?;
    let all = net.all_resources();
    let mut failing = Vec::new();
    for set in net.enumerate_connected()? {
        if set == all {
            continue;
        }
        let load: Rational = net.users_touching(&set).iter().map(|i| &rho[i]).sum();
        if load <= net.capacity(&set) {
            failing.push(set);
        }
    }
    Ok(PoolingReport::from_parts(failing, Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::UserTraffic;
    use crate::rational::{int, ratio};

    fn ring(n: usize, r: usize) -> Network {
        Network::new(
            (0..n).map(|j| (format!("{}", j + 1), int(1))),
            (0..n).map(|i| (format!("{}", i + 1), (0..r).map(|d| format!("{}", (i + d) % n + 1)).collect::<Vec<_>>())),
        )
        .unwrap()
    }

    fn spec(net: &Network, rows: &[(Rational, Rational, Option<Rational>)]) -> TrafficSpec {
        TrafficSpec::new(
            net,
            net.users()
                .iter()
                .zip(rows)
                .map(|(u, (rho, kappa, peak))| UserTraffic {
                    id: u.id.clone(),
                    lambda: rho.clone(),
                    mu: int(1),
                    kappa: kappa.clone(),
                    eta: int(1),
                    peak: peak.clone(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn integrated_symmetric_ring() {
        let net = ring(5, 2);
        let t = spec(&net, &vec![(ratio(1, 2), int(1), None); 5]);
        let eq = integrated_equilibrium(&net, &t).unwrap();
        assert_eq!(eq.m_hat, vec![int(1); 5]);
        assert_eq!(eq.x_hat, vec![ratio(1, 2); 5]);
        assert_eq!(eq.n_hat, vec![int(1); 5]);
        assert!(eq.single_level());
        let (nd, md) = drift(&net, &t, Model::Integrated, &eq.n_hat, &eq.m_hat).unwrap();
        assert!(nd.iter().chain(&md).all(|d| d.is_zero()));
        assert!(crp_check_integrated(&net, &t).unwrap().pooled);
    }

    #[test]
    fn negative_drift_without_arrivals() {
        let net = ring(4, 2);
        let t = spec(&net, &vec![(int(0), int(1), Some(int(1))); 4]);
        let (nd, _) = drift(&net, &t, Model::PeakRate, &[int(1), int(2), int(1), int(3)], &[]).unwrap();
        assert!(nd.iter().all(|d| d.is_negative()));
    }

    #[test]
    fn istar_example() {
        let (istar, pi) = find_istar(&int(4), &[int(1), int(1)], &[int(1), int(10)]).unwrap();
        assert_eq!((istar, pi), (1, int(3)));
        let (istar, _) = find_istar(&int(4), &[int(1)], &[int(2)]).unwrap();
        assert_eq!(istar, 1);
        assert!(find_istar(&int(2), &[int(1), int(1)], &[int(1), int(1)]).is_err());
    }

    #[test]
    fn uniform_peaks_give_rho_over_r() {
        let net = ring(4, 2);
        let t = spec(&net, &vec![(ratio(2, 5), int(0), Some(ratio(1, 4))); 4]);
        let eq = peak_rate_equilibrium(&net, &t).unwrap();
        assert_eq!(eq.n_hat, vec![ratio(8, 5); 4]);
        assert!(eq.single_level());
        assert_eq!(eq.peak_constrained, net.all_users());
        let (nd, _) = drift(&net, &t, Model::PeakRate, &eq.n_hat, &[]).unwrap();
        assert!(nd.iter().all(|d| d.is_zero()));
    }

    /// N=3 ring with ρ_2 + ρ_3 = C_3 and r_1 < (C_1+C_2)/(ρ_1/r_1) < r_2 ≤ r_3.
    fn tied_ring() -> (Network, TrafficSpec) {
        let net = ring(3, 2);
        let t = spec(
            &net,
            &[
                (ratio(3, 4), int(0), Some(int(1))),
                (ratio(1, 2), int(0), Some(int(4))),
                (ratio(1, 2), int(0), Some(int(4))),
            ],
        );
        (net, t)
    }

    #[test]
    fn tied_instance_is_rejected() {
        let (net, t) = tied_ring();
        let neq = neq_condition(&net, &t.rho()).unwrap();
        assert!(!neq.holds);
        assert_eq!(neq.witnesses.len(), 1);
        let (users, resources) = &neq.witnesses[0];
        assert_eq!(net.user_ids(users), ["2", "3"]);
        assert_eq!(net.resource_ids(resources), ["3"]);
        match peak_rate_equilibrium(&net, &t) {
            Err(Error::NonUnique { users, resources }) => {
                assert_eq!(users, ["2", "3"]);
                assert_eq!(resources, ["3"]);
            }
            other => panic!("expected non-uniqueness, got {other:?}"),
        }
        // Any perturbation restores uniqueness.
        let mut rho = t.rho();
        rho[2] += ratio(1, 1000);
        assert!(neq_condition(&net, &rho).unwrap().holds);
    }

    #[test]
    fn peak_levels_and_constraints() {
        let net = ring(3, 2);
        let t = spec(
            &net,
            &[
                (ratio(3, 4), int(0), Some(int(1))),
                (ratio(1, 3), int(0), Some(int(4))),
                (ratio(1, 2), int(0), Some(int(4))),
            ],
        );
        let eq = peak_rate_equilibrium(&net, &t).unwrap();
        let (nd, _) = drift(&net, &t, Model::PeakRate, &eq.n_hat, &[]).unwrap();
        assert!(nd.iter().all(|d| d.is_zero()), "{nd:?}");
        assert_eq!(allocate(&net, &eq.n_hat).unwrap().rates, eq.x_hat);
        for i in 0..3 {
            let constrained = eq.x_hat[i] > t.peaks().unwrap()[i];
            assert_eq!(constrained, eq.peak_constrained.contains(i));
        }
    }

    #[test]
    fn peak_pooling_single_resource() {
        let net = Network::new([("j".to_string(), int(2))], [("a".to_string(), vec!["j"])]).unwrap();
        let t = spec(&net, &[(int(1), int(0), Some(int(1)))]);
        assert!(crp_check_peak(&net, &t).unwrap().pooled);
    }

    #[test]
    fn sufficient_implies_pooling_on_ring() {
        let net = ring(4, 2);
        let t = spec(&net, &vec![(ratio(4, 5), int(1), None); 4]);
        assert!(crp_sufficient_integrated(&net, &t).unwrap().pooled);
        assert!(crp_check_integrated(&net, &t).unwrap().pooled);
    }
}
