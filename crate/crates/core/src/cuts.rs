//! Generalized cut constraints.
//!
//! A load vector `Λ` (total rate per user, `Λ_i = n_i x_i`) can be carried by
//! the network iff `Σ_{i ∈ I(J')} Λ_i ≤ C(J')` for every strongly connected
//! `J'`. [`maxflow_feasible`] decides the same question by max-flow, and
//! [`violating_allocation`] shows no constraint can be dropped.

use std::collections::BTreeMap;

use num_traits::{Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::FlowGraph;
use crate::network::Network;
use crate::rational::{self, Rational};
use crate::set::{ResourceSet, UserSet};

/// Total load per user, indexed like [`Network::users`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoadVector(pub Vec<Rational>);

impl LoadVector {
    pub fn zeros(net: &Network) -> Self {
        LoadVector(vec![Rational::zero(); net.num_users()])
    }

    pub fn total(&self, users: &UserSet) -> Rational {
        users.iter().fold(Rational::zero(), |acc, i| acc + &self.0[i])
    }

    /// Reads `{"user id": load, ...}`; users not listed get load 0.
    pub fn from_json(net: &Network, json: &str) -> Result<Self> {
        let map: BTreeMap<String, serde_json::Value> = serde_json::from_str(json)
            .map_err(|e| {
                Error::Input(format!(
                    "loads JSON at line {} column {}: {e}",
                    e.line(),
                    e.column()
                ))
            })?;
        let mut out = Self::zeros(net);
        for (id, v) in map {
            let i = net.user_index(&id)?;
            let q = rational::rational_from_json(&v)?;
            if q.is_negative() {
                return Err(Error::Input(format!("negative load for user `{id}`")));
            }
            out.0[i] = q;
        }
        Ok(out)
    }

    fn check(&self, net: &Network) -> Result<()> {
        if self.0.len() != net.num_users() {
            return Err(Error::Input(format!(
                "load vector has {} entries for {} users",
                self.0.len(),
                net.num_users()
            )));
        }
        if self.0.iter().any(|l| l.is_negative()) {
            return Err(Error::Input("loads must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CutReport {
    pub feasible: bool,
    /// Strongly connected sets whose constraint fails, in set order.
    pub violated: Vec<ResourceSet>,
    /// Strongly connected sets whose constraint holds with equality.
    pub tight: Vec<ResourceSet>,
}

#[derive(Serialize)]
struct CutReportJson {
    feasible: bool,
    violated: Vec<Vec<String>>,
    tight: Vec<Vec<String>>,
}

impl CutReport {
    pub fn to_json(&self, net: &Network) -> serde_json::Value {
        serde_json::to_value(CutReportJson {
            feasible: self.feasible,
            violated: self.violated.iter().map(|s| net.resource_ids(s)).collect(),
            tight: self.tight.iter().map(|s| net.resource_ids(s)).collect(),
        })
        .expect("report serializes")
    }
}

/// Checks every generalized cut constraint.
pub fn gcc_feasible(net: &Network, loads: &LoadVector) -> Result<CutReport> {
    loads.check(net)?;
    let mut violated = Vec::new();
    let mut tight = Vec::new();
    for c in net.view().strongly_connected()? {
        let lhs = loads.total(&c.users);
        let cap = net.capacity(&c.resources);
        if lhs > cap {
            violated.push(c.resources);
        } else if lhs == cap {
            tight.push(c.resources);
        }
    }
    Ok(CutReport {
        feasible: violated.is_empty(),
        violated,
        tight,
    })
}

/// Decides feasibility by max-flow on source → users → resources → sink.
pub fn maxflow_feasible(net: &Network, loads: &LoadVector) -> Result<bool> {
    loads.check(net)?;
    let demand = loads.0.iter().fold(Rational::zero(), |a, l| a + l);
    let (mut g, source, sink) = transport_graph(
        net,
        net.all_users().iter().map(|i| (i, loads.0[i].clone())),
        &net.all_resources(),
    );
    Ok(g.max_flow(source, sink) == demand)
}

/// Node layout: source, users, resources, sink. Middle edges get a bound
/// larger than any flow that can cross them, which stands in for `+∞`.
pub(crate) fn transport_graph(
    net: &Network,
    supplies: impl Iterator<Item = (usize, Rational)>,
    resources: &ResourceSet,
) -> (FlowGraph, usize, usize) {
    let ni = net.num_users();
    let nj = net.num_resources();
    let source = 0;
    let sink = 1 + ni + nj;
    let supplies: Vec<(usize, Rational)> = supplies.collect();
    let big = supplies.iter().fold(net.capacity(resources), |a, (_, s)| a + s)
        + rational::int(1);
    let mut g = FlowGraph::new(sink + 1);
    for (i, s) in &supplies {
        g.add_edge(source, 1 + i, s.clone());
    }
    for (i, _) in &supplies {
        for j in net.user(*i).resources.iter() {
            if resources.contains(j) {
                g.add_edge(1 + i, 1 + ni + j, big.clone());
            }
        }
    }
    for j in resources.iter() {
        g.add_edge(1 + ni + j, sink, net.resource(j).capacity.clone());
    }
    (g, source, sink)
}

/// Builds loads that violate the constraint of `target` and no other.
///
/// Each user confined to `target` takes an equal share `C_j / k_j` of every
/// resource it touches (`k_j` counting confined users at `j`), plus an equal
/// share of a slack `ε` set to half of `min(min_j C_j, min_{j ∈ target} C_j / k_j)`.
/// The constraint of `target` is then exceeded by exactly `ε`.
pub fn violating_allocation(net: &Network, target: &ResourceSet) -> Result<LoadVector> {
    if !net.is_strongly_connected(target) || target.is_empty() {
        return Err(Error::Input(format!(
            "{{{}}} is not a strongly connected set",
            net.resource_ids(target).join(",")
        )));
    }
    let inside = net.users_inside(target);
    if inside.is_empty() {
        return Err(Error::Construction(format!(
            "no user is confined to {{{}}}, so its constraint cannot be violated",
            net.resource_ids(target).join(",")
        )));
    }
    let mut k = vec![0i64; net.num_resources()];
    for i in inside.iter() {
        for j in net.user(i).resources.iter() {
            k[j] += 1;
        }
    }
    let share = |j: usize| &net.resource(j).capacity / rational::int(k[j]);
    let min_cap = net
        .resources()
        .iter()
        .map(|r| r.capacity.clone())
        .min()
        .expect("networks have resources");
    let min_share = target
        .iter()
        .map(share)
        .min()
        .expect("target is nonempty");
    let eps = min_cap.min(min_share) / rational::int(2);
    let extra = &eps / rational::int(inside.len() as i64);
    let mut loads = LoadVector::zeros(net);
    for i in inside.iter() {
        let base = net
            .user(i)
            .resources
            .iter()
            .fold(Rational::zero(), |a, j| a + share(j));
        loads.0[i] = base + &extra;
    }
    Ok(loads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, ratio};

    fn ring4() -> Network {
        Network::new(
            (1..=4).map(|j| (j.to_string(), int(1))),
            (1..=4).map(|i| (i.to_string(), vec![i.to_string(), (i % 4 + 1).to_string()])),
        )
        .unwrap()
    }

    #[test]
    fn allocation_loads_are_feasible() {
        let net = ring4();
        let loads = LoadVector(vec![int(2), ratio(2, 3), ratio(2, 3), ratio(2, 3)]);
        let report = gcc_feasible(&net, &loads).unwrap();
        assert!(report.feasible);
        // Oracle: test every strongly connected set directly.
        let expect: Vec<ResourceSet> = net
            .enumerate_strongly_connected()
            .unwrap()
            .into_iter()
            .filter(|s| loads.total(&net.users_inside(s)) == net.capacity(s))
            .collect();
        assert_eq!(report.tight, expect);
        assert!(report.tight.contains(&net.resource_set(&["1", "2"]).unwrap()));
        assert!(report.tight.contains(&net.all_resources()));
        assert!(maxflow_feasible(&net, &loads).unwrap());
    }

    #[test]
    fn zero_and_overload() {
        let net = ring4();
        assert!(gcc_feasible(&net, &LoadVector::zeros(&net)).unwrap().feasible);
        assert!(maxflow_feasible(&net, &LoadVector::zeros(&net)).unwrap());
        let loads = LoadVector(vec![int(2); 4]);
        let report = gcc_feasible(&net, &loads).unwrap();
        assert!(!report.feasible);
        assert!(report.violated.contains(&net.all_resources()));
        assert!(!maxflow_feasible(&net, &loads).unwrap());
    }

    #[test]
    fn single_link() {
        let net = Network::new([("j".to_string(), int(3))], [("i".to_string(), vec!["j"])]).unwrap();
        assert!(maxflow_feasible(&net, &LoadVector(vec![int(3)])).unwrap());
        assert!(!maxflow_feasible(&net, &LoadVector(vec![int(4)])).unwrap());
    }

    #[test]
    fn witness_on_ring() {
        let net = ring4();
        let target = net.resource_set(&["1", "2"]).unwrap();
        let loads = violating_allocation(&net, &target).unwrap();
        assert_eq!(loads.0[1..], [int(0), int(0), int(0)]);
        // ε is half of min(1, 1/1).
        assert_eq!(loads.0[0], ratio(5, 2));
        let report = gcc_feasible(&net, &loads).unwrap();
        assert_eq!(report.violated, vec![target]);
    }

    #[test]
    fn witness_single_resource() {
        let net = Network::new(
            [("j".to_string(), int(3))],
            [("a".to_string(), vec!["j"]), ("b".to_string(), vec!["j"])],
        )
        .unwrap();
        let loads = violating_allocation(&net, &net.all_resources()).unwrap();
        // C/k + ε/k with ε = min(3, 3/2)/2.
        assert_eq!(loads.0, vec![ratio(3, 2) + ratio(3, 8); 2]);
    }

    #[test]
    fn witness_needs_confined_users() {
        let net = ring4();
        let single = net.resource_set(&["1"]).unwrap();
        assert!(matches!(
            violating_allocation(&net, &single),
            Err(Error::Construction(_))
        ));
    }

    #[test]
    fn loads_json() {
        let net = ring4();
        let loads = LoadVector::from_json(&net, r#"{"1": "1/2", "3": 2}"#).unwrap();
        assert_eq!(loads.0, vec![ratio(1, 2), int(0), int(2), int(0)]);
        assert!(LoadVector::from_json(&net, r#"{"9": 1}"#).is_err());
        assert!(LoadVector::from_json(&net, r#"{"1": -1}"#).is_err());
    }
}
