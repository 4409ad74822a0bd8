//! Bipartite network model: resources with capacities, users with the set of
//! resources they may draw from, and the connectivity notions built on it.
//!
//! A resource set `J'` is *connected* when the bipartite graph spanned by
//! `J'` and every user is connected on `J'`, and *strongly connected* when it
//! stays connected using only the users confined to `J'`
//! ([`Network::users_inside`]). Strongly connected sets index the cut
//! constraints and drive the allocation algorithm.

use std::collections::HashMap;

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{self, Rational};
use crate::set::{ResourceSet, UserSet};

/// Largest resource count for which subsets are enumerated unless overridden.
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

/// Hard ceiling on the enumeration cap; beyond it subset masks overflow.
pub const MAX_ENUMERATION_CAP: usize = 40;

#[derive(Clone, Debug, PartialEq)]
pub struct Resource {
    pub id: String,
    pub capacity: Rational,
}

#[derive(Clone, Debug, PartialEq)]
pub struct User {
    pub id: String,
    pub resources: ResourceSet,
}

/// Ring layout: resource `k` and user `k` sit at position `k`, and user `k`
/// uses the `routes` consecutive resources starting at `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ring {
    pub routes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    resources: Vec<Resource>,
    users: Vec<User>,
    resource_index: HashMap<String, usize>,
    user_index: HashMap<String, usize>,
    ring: Option<Ring>,
    cap: usize,
}

impl Network {
    /// Builds a network from `(id, capacity)` resources and `(id, resource ids)`
    /// users, validating ids and capacities.
    pub fn new<R, U, S>(resources: R, users: U) -> Result<Self>
    where
        R: IntoIterator<Item = (String, Rational)>,
        U: IntoIterator<Item = (String, Vec<S>)>,
        S: AsRef<str>,
    {
        let mut resource_index = HashMap::new();
        let mut res = Vec::new();
        for (id, capacity) in resources {
            if !capacity.is_positive() {
                return Err(Error::Input(format!(
                    "resource `{id}` has non-positive capacity {}",
                    rational::format_rational(&capacity)
                )));
            }
            if resource_index.insert(id.clone(), res.len()).is_some() {
                return Err(Error::Input(format!("duplicate resource id `{id}`")));
            }
            res.push(Resource { id, capacity });
        }
        if res.is_empty() {
            return Err(Error::Input("network has no resources".into()));
        }
        let mut user_index = HashMap::new();
        let mut us = Vec::new();
        for (id, routes) in users {
            let mut set = ResourceSet::empty(res.len());
            for r in routes {
                let r = r.as_ref();
                let j = *resource_index
                    .get(r)
                    .ok_or_else(|| Error::UnknownResource(r.to_string()))?;
                set.insert(j);
            }
            if set.is_empty() {
                return Err(Error::Input(format!("user `{id}` has no resources")));
            }
            if user_index.insert(id.clone(), us.len()).is_some() {
                return Err(Error::Input(format!("duplicate user id `{id}`")));
            }
            us.push(User { id, resources: set });
        }
        Ok(Network {
            resources: res,
            users: us,
            resource_index,
            user_index,
            ring: None,
            cap: DEFAULT_ENUMERATION_CAP,
        })
    }

    /// Overrides the subset-enumeration cap.
    pub fn with_enumeration_cap(mut self, cap: usize) -> Result<Self> {
        if cap > MAX_ENUMERATION_CAP {
            return Err(Error::Input(format!(
                "enumeration cap {cap} exceeds the hard ceiling {MAX_ENUMERATION_CAP}"
            )));
        }
        self.cap = cap;
        Ok(self)
    }

    pub fn enumeration_cap(&self) -> usize {
        self.cap
    }

    /// Marks the network as a ring so enumerations use arcs instead of subsets.
    ///
    /// Fails unless the structure really is the ring `J(k) = {k, …, k+routes-1}`.
    pub fn with_ring(mut self, routes: usize) -> Result<Self> {
        let n = self.resources.len();
        if self.users.len() != n || routes == 0 || routes >= n {
            return Err(Error::Input(format!(
                "not a ring of {n} resources with {routes} routes per user"
            )));
        }
        for (k, user) in self.users.iter().enumerate() {
            let expect = ResourceSet::from_indices(n, (0..routes).map(|d| (k + d) % n));
            if user.resources != expect {
                return Err(Error::Input(format!(
                    "user `{}` does not follow the ring layout",
                    user.id
                )));
            }
        }
        self.ring = Some(Ring { routes });
        Ok(self)
    }

    pub fn ring(&self) -> Option<Ring> {
        self.ring
    }

    pub fn num_resources(&self) -> usize {
        self.resources.len()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn resources(&self) -> &[Resource] {
        &self.resources
    }

    pub fn users(&self) -> &[User] {
        &self.users
    }

    pub fn resource(&self, j: usize) -> &Resource {
        &self.resources[j]
    }

    pub fn user(&self, i: usize) -> &User {
        &self.users[i]
    }

    pub fn resource_index(&self, id: &str) -> Result<usize> {
        self.resource_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownResource(id.to_string()))
    }

    pub fn user_index(&self, id: &str) -> Result<usize> {
        self.user_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownUser(id.to_string()))
    }

    /// Resolves resource ids into a set, rejecting unknown ids.
    pub fn resource_set<S: AsRef<str>>(&self, ids: &[S]) -> Result<ResourceSet> {
        let mut set = self.no_resources();
        for id in ids {
            set.insert(self.resource_index(id.as_ref())?);
        }
        Ok(set)
    }

    pub fn user_set<S: AsRef<str>>(&self, ids: &[S]) -> Result<UserSet> {
        let mut set = self.no_users();
        for id in ids {
            set.insert(self.user_index(id.as_ref())?);
        }
        Ok(set)
    }

    pub fn resource_ids(&self, set: &ResourceSet) -> Vec<String> {
        set.iter().map(|j| self.resources[j].id.clone()).collect()
    }

    pub fn user_ids(&self, set: &UserSet) -> Vec<String> {
        set.iter().map(|i| self.users[i].id.clone()).collect()
    }

    pub fn all_resources(&self) -> ResourceSet {
        ResourceSet::full(self.resources.len())
    }

    pub fn all_users(&self) -> UserSet {
        UserSet::full(self.users.len())
    }

    pub fn no_resources(&self) -> ResourceSet {
        ResourceSet::empty(self.resources.len())
    }

    pub fn no_users(&self) -> UserSet {
        UserSet::empty(self.users.len())
    }

    /// `C(J')`, the total capacity of a resource set.
    pub fn capacity(&self, set: &ResourceSet) -> Rational {
        set.iter()
            .fold(Rational::zero(), |acc, j| acc + &self.resources[j].capacity)
    }

    /// Users whose whole resource set lies inside `set`.
    pub fn users_inside(&self, set: &ResourceSet) -> UserSet {
        self.view().users_inside(set)
    }

    /// Users that can use at least one resource of `set`.
    pub fn users_touching(&self, set: &ResourceSet) -> UserSet {
        let mut out = self.no_users();
        for (i, u) in self.users.iter().enumerate() {
            if u.resources.intersects(set) {
                out.insert(i);
            }
        }
        out
    }

    /// Whether `(users, resources)` is connected: every pair of resources in
    /// `resources` is joined by a path alternating through users of `users`.
    pub fn is_connected(&self, users: &UserSet, resources: &ResourceSet) -> bool {
        self.view().is_connected(users, resources)
    }

    pub fn is_strongly_connected(&self, resources: &ResourceSet) -> bool {
        self.view().is_strongly_connected(resources)
    }

    /// Every nonempty strongly connected resource set, in set order.
    pub fn enumerate_strongly_connected(&self) -> Result<Vec<ResourceSet>> {
        Ok(self
            .view()
            .strongly_connected()?
            .into_iter()
            .map(|c| c.resources)
            .collect())
    }

    /// Every nonempty resource set that is connected through all users.
    pub fn enumerate_connected(&self) -> Result<Vec<ResourceSet>> {
        self.view().connected()
    }

    /// Every nonempty subset of resources (bounded by the enumeration cap).
    pub fn enumerate_subsets(&self) -> Result<Vec<ResourceSet>> {
        let view = self.view();
        let local = view.local_positions()?;
        let m = local.len();
        let mut out: Vec<ResourceSet> = (1u64..(1u64 << m))
            .map(|mask| view.from_mask(&local, mask))
            .collect();
        out.sort();
        Ok(out)
    }

    pub(crate) fn view(&self) -> View<'_> {
        View {
            net: self,
            remaining: self.all_resources(),
            active: self.all_users(),
        }
    }

    pub(crate) fn view_of(&self, remaining: ResourceSet, active: UserSet) -> View<'_> {
        View {
            net: self,
            remaining,
            active,
        }
    }
}

/// A strongly connected set together with the users confined to it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Confined {
    pub resources: ResourceSet,
    pub users: UserSet,
}

/// The network restricted to `remaining` resources and `active` users, with
/// each user's resource set cut down to what remains.
#[derive(Clone, Debug)]
pub(crate) struct View<'a> {
    pub net: &'a Network,
    pub remaining: ResourceSet,
    pub active: UserSet,
}

impl<'a> View<'a> {
    /// Residual resource set of user `i`.
    fn reach(&self, i: usize) -> ResourceSet {
        self.net.users[i].resources.intersection(&self.remaining)
    }

    pub fn users_inside(&self, set: &ResourceSet) -> UserSet {
        let mut out = self.net.no_users();
        for i in self.active.iter() {
            let reach = self.reach(i);
            if !reach.is_empty() && reach.is_subset(set) {
                out.insert(i);
            }
        }
        out
    }

    pub fn is_connected(&self, users: &UserSet, resources: &ResourceSet) -> bool {
        let Some(start) = resources.first() else {
            return true;
        };
        let mut reached = self.net.no_resources();
        reached.insert(start);
        let mut pending: Vec<usize> = users.iter().collect();
        loop {
            let before = pending.len();
            pending.retain(|&i| {
                let edges = self.net.users[i].resources.intersection(resources);
                if edges.intersects(&reached) {
                    reached.union_with(&edges);
                    false
                } else {
                    true
                }
            });
            if pending.len() == before {
                break;
            }
        }
        resources.is_subset(&reached)
    }

    pub fn is_strongly_connected(&self, resources: &ResourceSet) -> bool {
        let inside = self.users_inside(resources);
        self.is_connected(&inside, resources)
    }

    /// Remaining resources as a list of positions for subset masks.
    fn local_positions(&self) -> Result<Vec<usize>> {
        let local: Vec<usize> = self.remaining.iter().collect();
        if local.len() > self.net.cap {
            return Err(Error::EnumerationCap {
                size: local.len(),
                cap: self.net.cap,
            });
        }
        Ok(local)
    }

    fn from_mask(&self, local: &[usize], mask: u64) -> ResourceSet {
        let mut set = self.net.no_resources();
        let mut m = mask;
        while m != 0 {
            let b = m.trailing_zeros() as usize;
            set.insert(local[b]);
            m &= m - 1;
        }
        set
    }

    /// Residual reach of each active user as a mask over `local`.
    fn user_masks(&self, local: &[usize]) -> Vec<(usize, u64)> {
        self.active
            .iter()
            .filter_map(|i| {
                let mut mask = 0u64;
                for (b, &j) in local.iter().enumerate() {
                    if self.net.users[i].resources.contains(j) {
                        mask |= 1 << b;
                    }
                }
                (mask != 0).then_some((i, mask))
            })
            .collect()
    }

    /// Strongly connected sets of the view with their confined users, in set
    /// order. Rings enumerate arcs; everything else enumerates subsets.
    pub fn strongly_connected(&self) -> Result<Vec<Confined>> {
        let mut out = match self.net.ring {
            Some(_) => self.ring_strongly_connected(),
            None => self.subset_strongly_connected()?,
        };
        out.sort_by(|a, b| a.resources.cmp(&b.resources));
        Ok(out)
    }

    fn subset_strongly_connected(&self) -> Result<Vec<Confined>> {
        let local = self.local_positions()?;
        let masks = self.user_masks(&local);
        let m = local.len();
        let mut out = Vec::new();
        for set in 1u64..(1u64 << m) {
            let inside: Vec<u64> = masks
                .iter()
                .filter(|(_, um)| um & !set == 0)
                .map(|&(_, um)| um)
                .collect();
            if !mask_connected(set, &inside) {
                continue;
            }
            let mut users = self.net.no_users();
            for &(i, um) in &masks {
                if um & !set == 0 {
                    users.insert(i);
                }
            }
            out.push(Confined {
                resources: self.from_mask(&local, set),
                users,
            });
        }
        Ok(out)
    }

    fn ring_strongly_connected(&self) -> Vec<Confined> {
        let n = self.net.num_resources();
        let mut out = Vec::new();
        let whole = self.remaining.len() == n;
        for start in 0..n {
            if !self.remaining.contains(start) {
                continue;
            }
            let mut arc = self.net.no_resources();
            for len in 1..=n {
                let j = (start + len - 1) % n;
                if !self.remaining.contains(j) {
                    break;
                }
                if len == n && !(whole && start == 0) {
                    break;
                }
                arc.insert(j);
                let users = self.users_inside(&arc);
                if self.is_connected(&users, &arc) {
                    out.push(Confined {
                        resources: arc.clone(),
                        users,
                    });
                }
            }
        }
        out
    }

    /// Resource sets connected through all active users.
    pub fn connected(&self) -> Result<Vec<ResourceSet>> {
        let local = self.local_positions()?;
        let masks: Vec<u64> = self.user_masks(&local).into_iter().map(|(_, m)| m).collect();
        let m = local.len();
        let mut out = Vec::new();
        for set in 1u64..(1u64 << m) {
            let edges: Vec<u64> = masks
                .iter()
                .map(|um| um & set)
                .filter(|&e| e != 0)
                .collect();
            if mask_connected(set, &edges) {
                out.push(self.from_mask(&local, set));
            }
        }
        out.sort();
        Ok(out)
    }
}

/// Connectivity of `set` when each entry of `edges` (a subset of `set`) glues
/// its members together.
fn mask_connected(set: u64, edges: &[u64]) -> bool {
    let mut reached = set & set.wrapping_neg();
    loop {
        let mut grew = false;
        for &e in edges {
            if e & reached != 0 && e & !reached != 0 {
                reached |= e;
                grew = true;
            }
        }
        if !grew {
            return reached == set;
        }
    }
}

/// Per-user flow counts: elastic `n` and streaming `m`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Population {
    pub n: Vec<u64>,
    pub m: Vec<u64>,
}

impl Population {
    pub fn zeros(users: usize) -> Self {
        Population {
            n: vec![0; users],
            m: vec![0; users],
        }
    }

    /// `n_i + m_i`, the count the allocation sees.
    pub fn totals(&self) -> Vec<Rational> {
        self.n
            .iter()
            .zip(&self.m)
            .map(|(a, b)| rational::int((a + b) as i64))
            .collect()
    }
}

/// On-disk network description.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetworkFile {
    pub resources: Vec<ResourceEntry>,
    pub users: Vec<UserEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResourceEntry {
    pub id: String,
    #[serde(with = "rational::serde_rational")]
    pub capacity: Rational,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UserEntry {
    pub id: String,
    pub resources: Vec<String>,
    #[serde(default)]
    pub n: u64,
    #[serde(default)]
    pub m: u64,
}

impl NetworkFile {
    pub fn build(&self) -> Result<(Network, Population)> {
        let net = Network::new(
            self.resources
                .iter()
                .map(|r| (r.id.clone(), r.capacity.clone())),
            self.users.iter().map(|u| (u.id.clone(), u.resources.clone())),
        )?;
        let pop = Population {
            n: self.users.iter().map(|u| u.n).collect(),
            m: self.users.iter().map(|u| u.m).collect(),
        };
        Ok((net, pop))
    }

    pub fn from_network(net: &Network, pop: &Population) -> Self {
        NetworkFile {
            resources: net
                .resources()
                .iter()
                .map(|r| ResourceEntry {
                    id: r.id.clone(),
                    capacity: r.capacity.clone(),
                })
                .collect(),
            users: net
                .users()
                .iter()
                .enumerate()
                .map(|(i, u)| UserEntry {
                    id: u.id.clone(),
                    resources: net.resource_ids(&u.resources),
                    n: pop.n[i],
                    m: pop.m[i],
                })
                .collect(),
        }
    }
}

/// Parses a network JSON document.
pub fn parse_network(json: &str) -> Result<(Network, Population)> {
    let file: NetworkFile = serde_json::from_str(json).map_err(|e| {
        Error::Input(format!(
            "network JSON at line {} column {}: {e}",
            e.line(),
            e.column()
        ))
    })?;
    file.build()
}
