//! Exact rate allocation by clustering.
//!
//! The allocation is built level by level. At each step the rate
//! `C(J') / Σ_{i ∈ I(J')} n_i` is minimized over the strongly connected sets of
//! the reduced network, the union of all minimizers forms the next level,
//! and that level's users and resources are removed before repeating. Rates
//! come out in strictly increasing order and do not depend on the concave
//! utility being maximized.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use num_traits::Zero;
use serde_json::json;

use crate::cuts::transport_graph;
use crate::error::{Error, Result};
use crate::network::{Confined, Network, View};
use crate::rational::{self, Rate, Rational};
use crate::scalar::Scalar;
use crate::set::{ResourceSet, UserSet};

/// `(Σ w) / (Σ w / v)`.
pub fn weighted_harmonic_mean(values: &[Rational], weights: &[Rational]) -> Result<Rational> {
    if values.is_empty() || values.len() != weights.len() {
        return Err(Error::Input(
            "weighted harmonic mean needs equally many values and weights, at least one".into(),
        ));
    }
    if values.iter().chain(weights).any(|v| *v <= Rational::zero()) {
        return Err(Error::Input("harmonic mean inputs must be positive".into()));
    }
    let total: Rational = weights.iter().sum();
    let inverse: Rational = values.iter().zip(weights).map(|(v, w)| w / v).sum();
    Ok(total / inverse)
}

/// `C(J') / Σ_{i ∈ I'} n_i`, or `+∞` when no flow is present.
pub fn cluster_rate<T: Scalar>(
    net: &Network,
    counts: &[T],
    users: &UserSet,
    resources: &ResourceSet,
) -> Rate<T> {
    let total = sum_over(counts, users);
    if total.is_zero() {
        Rate::Infinite
    } else {
        Rate::Finite(T::from_rational(&net.capacity(resources)) / total)
    }
}

fn sum_over<T: Scalar>(values: &[T], users: &UserSet) -> T {
    users.iter().fold(T::zero(), |a, i| a + values[i].clone())
}

/// One cluster: resources pooled by exactly these users at a common rate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cluster {
    pub users: UserSet,
    pub resources: ResourceSet,
}

/// All clusters sharing a rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Level<T = Rational> {
    pub users: UserSet,
    pub resources: ResourceSet,
    pub rate: Rate<T>,
    /// Connected components of `(users, resources)`, ordered by smallest resource.
    pub clusters: Vec<Cluster>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterDecomposition<T = Rational> {
    pub levels: Vec<Level<T>>,
    /// Per-user rate; zero for users without flows.
    pub rates: Vec<T>,
    /// Resources no active user can reach (the `+∞` level).
    pub redundant: ResourceSet,
}

impl<T: Scalar> ClusterDecomposition<T> {
    /// Index of the level holding user `i`, if the user has flows.
    pub fn level_of(&self, i: usize) -> Option<usize> {
        self.levels.iter().position(|l| l.users.contains(i))
    }

    pub fn min_rate(&self) -> Option<&T> {
        self.levels.first().and_then(|l| l.rate.finite())
    }

    pub fn max_rate(&self) -> Option<&T> {
        self.levels.iter().rev().find_map(|l| l.rate.finite())
    }
}

impl ClusterDecomposition<Rational> {
    pub fn to_json(&self, net: &Network) -> serde_json::Value {
        let levels: Vec<_> = self
            .levels
            .iter()
            .map(|l| {
                json!({
                    "rate": l.rate.to_string(),
                    "users": net.user_ids(&l.users),
                    "resources": net.resource_ids(&l.resources),
                    "clusters": l.clusters.iter().map(|c| json!({
                        "users": net.user_ids(&c.users),
                        "resources": net.resource_ids(&c.resources),
                    })).collect::<Vec<_>>(),
                })
            })
            .collect();
        let rates: serde_json::Map<String, serde_json::Value> = net
            .users()
            .iter()
            .zip(&self.rates)
            .map(|(u, x)| (u.id.clone(), rational::format_rational(x).into()))
            .collect();
        json!({
            "levels": levels,
            "rates": rates,
            "redundant": net.resource_ids(&self.redundant),
        })
    }
}

/// Capacity functional for the generalized algorithm: the budget available to
/// `users` (the users confined to `resources` in the reduced network).
pub trait Budget<T> {
    fn budget(&self, resources: &ResourceSet, users: &UserSet) -> T;
}

impl<T, F: Fn(&ResourceSet, &UserSet) -> T> Budget<T> for F {
    fn budget(&self, resources: &ResourceSet, users: &UserSet) -> T {
        self(resources, users)
    }
}

/// Plain capacities `C(J')`.
pub struct Capacity<'a>(pub &'a Network);

impl<T: Scalar> Budget<T> for Capacity<'_> {
    fn budget(&self, resources: &ResourceSet, _: &UserSet) -> T {
        T::from_rational(&self.0.capacity(resources))
    }
}

/// Runs the clustering algorithm and caches the strongly connected sets of
/// every reduced network it meets, so repeated calls (simulation, drift
/// evaluation) skip the subset enumeration.
pub struct Allocator<'a> {
    net: &'a Network,
    families: HashMap<(ResourceSet, UserSet), Arc<Vec<Confined>>>,
}

impl<'a> Allocator<'a> {
    pub fn new(net: &'a Network) -> Self {
        Allocator {
            net,
            families: HashMap::new(),
        }
    }

    pub fn network(&self) -> &'a Network {
        self.net
    }

    pub(crate) fn family(&mut self, remaining: &ResourceSet, active: &UserSet) -> Result<Arc<Vec<Confined>>> {
        let key = (remaining.clone(), active.clone());
        if let Some(f) = self.families.get(&key) {
            return Ok(f.clone());
        }
        let fam = Arc::new(
            self.net
                .view_of(remaining.clone(), active.clone())
                .strongly_connected()?,
        );
        self.families.insert(key, fam.clone());
        Ok(fam)
    }

    pub fn allocate<T: Scalar>(&mut self, counts: &[T]) -> Result<ClusterDecomposition<T>> {
        let net = self.net;
        self.allocate_generalized(&Capacity(net), counts)
    }

    /// The clustering loop with `C(J')` replaced by `budget` and counts by
    /// `weights`. Users with zero weight take no part and get rate zero.
    pub fn allocate_generalized<T: Scalar, B: Budget<T> + ?Sized>(
        &mut self,
        budget: &B,
        weights: &[T],
    ) -> Result<ClusterDecomposition<T>> {
        let net = self.net;
        check_counts(net, weights)?;
        let mut remaining = net.all_resources();
        let mut active = net.no_users();
        for (i, w) in weights.iter().enumerate() {
            if !w.is_zero() {
                active.insert(i);
            }
        }
        let mut rates = vec![T::zero(); net.num_users()];
        let mut levels: Vec<Level<T>> = Vec::new();
        let mut redundant = net.no_resources();
        while !remaining.is_empty() {
            let family = self.family(&remaining, &active)?;
            let mut best: Option<T> = None;
            let mut union = net.no_resources();
            for c in family.iter() {
                if c.users.is_empty() {
                    continue;
                }
                let b = budget.budget(&c.resources, &c.users);
                if b <= T::zero() {
                    return Err(Error::Unstable {
                        violated: vec![net.resource_ids(&c.resources)],
                    });
                }
                let v = b / sum_over(weights, &c.users);
                match &best {
                    Some(x) if v.ties(x) => union.union_with(&c.resources),
                    Some(x) if v > *x => {}
                    _ => {
                        best = Some(v);
                        union = c.resources.clone();
                    }
                }
            }
            let Some(x) = best else {
                levels.push(Level {
                    users: net.no_users(),
                    resources: remaining.clone(),
                    rate: Rate::Infinite,
                    clusters: components(net, &net.no_users(), &remaining),
                });
                redundant = remaining;
                break;
            };
            let view = net.view_of(remaining.clone(), active.clone());
            let users = view.users_inside(&union);
            let pooled = budget.budget(&union, &users) / sum_over(weights, &users);
            if !pooled.ties(&x) {
                return Err(Error::Internal(format!(
                    "union of minimizers has rate {pooled:?}, expected {x:?}"
                )));
            }
            if let Some(prev) = levels.last().and_then(|l| l.rate.finite()) {
                if !(x > *prev) || x.ties(prev) {
                    return Err(Error::Internal(format!(
                        "level rates not increasing: {prev:?} then {x:?}"
                    )));
                }
            }
            for i in users.iter() {
                rates[i] = x.clone();
            }
            remaining.difference_with(&union);
            active.difference_with(&users);
            levels.push(Level {
                clusters: components(net, &users, &union),
                users,
                resources: union,
                rate: Rate::Finite(x),
            });
        }
        Ok(ClusterDecomposition {
            levels,
            rates,
            redundant,
        })
    }
}

fn check_counts<T: Scalar>(net: &Network, counts: &[T]) -> Result<()> {
    if counts.len() != net.num_users() {
        return Err(Error::Input(format!(
            "{} counts given for {} users",
            counts.len(),
            net.num_users()
        )));
    }
    if counts.iter().any(|c| *c < T::zero()) {
        return Err(Error::Input("counts must be nonnegative".into()));
    }
    Ok(())
}

/// Connected components of the bipartite graph on `(users, resources)`.
fn components(net: &Network, users: &UserSet, resources: &ResourceSet) -> Vec<Cluster> {
    let mut left = resources.clone();
    let mut out = Vec::new();
    while let Some(start) = left.first() {
        let mut comp = ResourceSet::from_indices(net.num_resources(), [start]);
        let mut members = net.no_users();
        loop {
            let mut grew = false;
            for i in users.iter() {
                if members.contains(i) {
                    continue;
                }
                let reach = net.user(i).resources.intersection(resources);
                if reach.intersects(&comp) {
                    comp.union_with(&reach);
                    members.insert(i);
                    grew = true;
                }
            }
            if !grew {
                break;
            }
        }
        left.difference_with(&comp);
        out.push(Cluster {
            users: members,
            resources: comp,
        });
    }
    out
}

pub fn allocate<T: Scalar>(net: &Network, counts: &[T]) -> Result<ClusterDecomposition<T>> {
    Allocator::new(net).allocate(counts)
}

pub fn allocate_generalized<T: Scalar, B: Budget<T> + ?Sized>(
    net: &Network,
    budget: &B,
    weights: &[T],
) -> Result<ClusterDecomposition<T>> {
    Allocator::new(net).allocate_generalized(budget, weights)
}

/// Per-user, per-resource rates `x_i^j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMatrix {
    /// `rows[i]` maps every `j ∈ J(i)` to `x_i^j`.
    pub rows: Vec<BTreeMap<usize, Rational>>,
}

impl SplitMatrix {
    pub fn get(&self, i: usize, j: usize) -> Rational {
        self.rows[i].get(&j).cloned().unwrap_or_else(Rational::zero)
    }

    /// `Σ_i n_i x_i^j`.
    pub fn load(&self, counts: &[Rational], j: usize) -> Rational {
        self.rows
            .iter()
            .zip(counts)
            .map(|(row, n)| row.get(&j).map_or_else(Rational::zero, |x| x * n))
            .sum()
    }

    pub fn to_json(&self, net: &Network) -> serde_json::Value {
        let mut out = serde_json::Map::new();
        for (i, row) in self.rows.iter().enumerate() {
            let entries: serde_json::Map<String, serde_json::Value> = row
                .iter()
                .map(|(j, x)| (net.resource(*j).id.clone(), rational::format_rational(x).into()))
                .collect();
            out.insert(net.user(i).id.clone(), entries.into());
        }
        out.into()
    }
}

/// Realizes a decomposition as per-resource rates by solving one max-flow per
/// level. Every level resource ends up saturated.
pub fn split_rates(
    net: &Network,
    counts: &[Rational],
    dec: &ClusterDecomposition,
) -> Result<SplitMatrix> {
    check_counts(net, counts)?;
    let mut rows: Vec<BTreeMap<usize, Rational>> = net
        .users()
        .iter()
        .map(|u| u.resources.iter().map(|j| (j, Rational::zero())).collect())
        .collect();
    for level in &dec.levels {
        let Rate::Finite(x) = &level.rate else {
            continue;
        };
        let supplies = level
            .users
            .iter()
            .filter(|&i| !counts[i].is_zero())
            .map(|i| (i, &counts[i] * x));
        let (mut g, s, t) = transport_graph(net, supplies, &level.resources);
        let pushed = g.max_flow(s, t);
        let cap = net.capacity(&level.resources);
        if pushed != cap {
            return Err(Error::Internal(format!(
                "level at rate {x} carries {pushed} of capacity {cap}"
            )));
        }
        // Middle edges follow the source edges in insertion order.
        let mut e = 2 * level.users.iter().filter(|&i| !counts[i].is_zero()).count();
        for i in level.users.iter().filter(|&i| !counts[i].is_zero()) {
            for j in net.user(i).resources.iter() {
                if level.resources.contains(j) {
                    rows[i].insert(j, g.flow(e) / &counts[i]);
                    e += 2;
                }
            }
        }
    }
    Ok(SplitMatrix { rows })
}

/// Smallest rate: the minimum of `C(J') / Σ_{I(J')} n` over strongly
/// connected sets holding flows.
pub fn min_rate<T: Scalar>(net: &Network, counts: &[T]) -> Result<Rate<T>> {
    check_counts(net, counts)?;
    let mut best = Rate::Infinite;
    for c in busy_view(net, counts).strongly_connected()? {
        let v = cluster_rate(net, counts, &c.users, &c.resources);
        if v < best {
            best = v;
        }
    }
    Ok(best)
}

/// Largest rate: the maximum over connected `J'` of `C(J')` divided by the
/// flows of every user that can reach `J'`. Users without flows do not
/// connect anything, and sets no flow can reach are skipped.
pub fn max_rate<T: Scalar>(net: &Network, counts: &[T]) -> Result<Rate<T>> {
    check_counts(net, counts)?;
    let mut best: Option<T> = None;
    for set in busy_view(net, counts).connected()? {
        let users = net.users_touching(&set);
        if let Rate::Finite(v) = cluster_rate(net, counts, &users, &set) {
            if best.as_ref().is_none_or(|b| v > *b) {
                best = Some(v);
            }
        }
    }
    Ok(best.map_or(Rate::Infinite, Rate::Finite))
}

fn busy_view<'a, T: Scalar>(net: &'a Network, counts: &[T]) -> View<'a> {
    let busy = UserSet::from_indices(net.num_users(), (0..net.num_users()).filter(|&i| !counts[i].is_zero()));
    net.view_of(net.all_resources(), busy)
}

/// Lower bound on `x_i`: the minimum of `C(J') / Σ_{I(J')} n` over all
/// resource sets `J'` that contain `J(i)`.
pub fn rate_lower_bound<T: Scalar>(net: &Network, counts: &[T], user: usize) -> Result<T> {
    check_counts(net, counts)?;
    if user >= net.num_users() || counts[user].is_zero() {
        return Err(Error::Input(format!("user {user} has no flows")));
    }
    let own = &net.user(user).resources;
    let mut best: Option<T> = None;
    for set in net.enumerate_subsets()? {
        if !own.is_subset(&set) {
            continue;
        }
        let users = net.users_inside(&set);
        if let Rate::Finite(v) = cluster_rate(net, counts, &users, &set) {
            if best.as_ref().is_none_or(|b| v < *b) {
                best = Some(v);
            }
        }
    }
    best.ok_or_else(|| Error::Internal("no set contains the user".into()))
}
