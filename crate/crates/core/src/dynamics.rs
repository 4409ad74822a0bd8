//! Flow-level dynamics: traffic parameters, the stability condition, the
//! streaming blocking formula and an event-driven simulator for the three
//! Markov chain models.
//!
//! | model        | arrivals      | departures                     |
//! |--------------|---------------|--------------------------------|
//! | streaming    | `m_i`: `κ_i`  | `η_i m_i`                      |
//! | integrated   | both          | `μ_i n_i x_i(n+m)`, `η_i m_i`  |
//! | peak rate    | `n_i`: `λ_i`  | `μ_i n_i min(x_i(n), r_i)`     |
//!
//! Under scale `L` arrival rates and capacities are multiplied by `L`; peak
//! rates stay fixed.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alloc::{min_rate, Allocator};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::rational::{self, Rate, Rational};
use crate::set::ResourceSet;

/// Parameters of one user. Rates a model does not use may be zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserTraffic {
    pub id: String,
    /// Elastic arrival rate `λ_i`.
    #[serde(with = "rational::serde_rational", default = "zero")]
    pub lambda: Rational,
    /// Elastic service rate `μ_i` (inverse mean size).
    #[serde(with = "rational::serde_rational", default = "one")]
    pub mu: Rational,
    /// Streaming arrival rate `κ_i`.
    #[serde(with = "rational::serde_rational", default = "zero")]
    pub kappa: Rational,
    /// Streaming departure rate `η_i`.
    #[serde(with = "rational::serde_rational", default = "one")]
    pub eta: Rational,
    /// Peak rate `r_i`.
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "opt_rational"
    )]
    pub peak: Option<Rational>,
}

fn zero() -> Rational {
    Rational::zero()
}

fn one() -> Rational {
    Rational::one()
}

mod opt_rational {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(q: &Option<Rational>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match q {
            Some(q) => s.serialize_str(&rational::format_rational(q)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Rational>, D::Error> {
        let v = Option::<serde_json::Value>::deserialize(d)?;
        v.map(|v| rational::rational_from_json(&v).map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Streaming,
    Integrated,
    PeakRate,
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "streaming" => Ok(Model::Streaming),
            "integrated" => Ok(Model::Integrated),
            "peak_rate" | "peak-rate" => Ok(Model::PeakRate),
            other => Err(Error::Input(format!(
                "unknown model `{other}` (expected streaming, integrated or peak_rate)"
            ))),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Streaming => "streaming",
            Model::Integrated => "integrated",
            Model::PeakRate => "peak_rate",
        })
    }
}

/// Per-user traffic, indexed like [`Network::users`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficSpec {
    pub users: Vec<UserTraffic>,
}

#[derive(Deserialize, Serialize)]
struct TrafficFile {
    users: Vec<UserTraffic>,
}

impl TrafficSpec {
    /// Aligns entries with the network's users by id.
    pub fn new(net: &Network, entries: Vec<UserTraffic>) -> Result<Self> {
        let mut slots: Vec<Option<UserTraffic>> = vec![None; net.num_users()];
        for e in entries {
            let i = net.user_index(&e.id)?;
            if slots[i].is_some() {
                return Err(Error::Input(format!("traffic for user `{}` given twice", e.id)));
            }
            for (name, v) in [("lambda", &e.lambda), ("mu", &e.mu), ("kappa", &e.kappa), ("eta", &e.eta)] {
                if v.is_negative() {
                    return Err(Error::Input(format!("{name} of user `{}` is negative", e.id)));
                }
            }
            if e.peak.as_ref().is_some_and(|r| !r.is_positive()) {
                return Err(Error::Input(format!("peak rate of user `{}` must be positive", e.id)));
            }
            slots[i] = Some(e);
        }
        let users = slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                s.ok_or_else(|| Error::Input(format!("no traffic given for user `{}`", net.user(i).id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrafficSpec { users })
    }

    /// Reads `{"users": [{"id", "lambda", "mu", "kappa", "eta", "peak"}]}`.
    pub fn from_json(net: &Network, json: &str) -> Result<Self> {
        let file: TrafficFile = serde_json::from_str(json).map_err(|e| {
            Error::Input(format!("traffic JSON at line {} column {}: {e}", e.line(), e.column()))
        })?;
        Self::new(net, file.users)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(TrafficFile { users: self.users.clone() }).expect("traffic serializes")
    }

    /// `ρ_i = λ_i / μ_i`.
    pub fn rho(&self) -> Vec<Rational> {
        self.users
            .iter()
            .map(|u| if u.lambda.is_zero() { Rational::zero() } else { &u.lambda / &u.mu })
            .collect()
    }

    /// `κ_i / η_i`, the streaming mean.
    pub fn streaming_load(&self) -> Vec<Rational> {
        self.users
            .iter()
            .map(|u| if u.kappa.is_zero() { Rational::zero() } else { &u.kappa / &u.eta })
            .collect()
    }

    pub fn peaks(&self) -> Result<Vec<Rational>> {
        self.users
            .iter()
            .map(|u| {
                u.peak
                    .clone()
                    .ok_or_else(|| Error::Input(format!("user `{}` has no peak rate", u.id)))
            })
            .collect()
    }

    /// Rejects parameter combinations the model cannot use.
    pub fn validate(&self, model: Model) -> Result<()> {
        for u in &self.users {
            let need_mu = model != Model::Streaming && u.lambda.is_positive();
            if need_mu && !u.mu.is_positive() {
                return Err(Error::Input(format!("user `{}` needs a positive mu", u.id)));
            }
            let need_eta = model != Model::PeakRate && u.kappa.is_positive();
            if need_eta && !u.eta.is_positive() {
                return Err(Error::Input(format!("user `{}` needs a positive eta", u.id)));
            }
            if model == Model::Integrated && !u.kappa.is_positive() {
                return Err(Error::Input(format!(
                    "user `{}` needs positive streaming traffic in the integrated model",
                    u.id
                )));
            }
            if model == Model::PeakRate && u.peak.is_none() {
                return Err(Error::Input(format!("user `{}` has no peak rate", u.id)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StabilityReport {
    pub stable: bool,
    /// Strongly connected sets with `Σ_{I(J')} ρ ≥ C(J')`.
    pub violated: Vec<ResourceSet>,
}

impl StabilityReport {
    pub fn into_result(self, net: &Network) -> Result<()> {
        if self.stable {
            Ok(())
        } else {
            Err(Error::Unstable {
                violated: self.violated.iter().map(|s| net.resource_ids(s)).collect(),
            })
        }
    }
}

/// Checks `Σ_{i ∈ I(J')} ρ_i < C(J')` on every strongly connected set.
pub fn stability_check(net: &Network, rho: &[Rational]) -> Result<StabilityReport> {
    if rho.len() != net.num_users() || rho.iter().any(|r| r.is_negative()) {
        return Err(Error::Input("need one nonnegative load per user".into()));
    }
    let mut violated = Vec::new();
    for c in net.view().strongly_connected()? {
        let load: Rational = c.users.iter().map(|i| &rho[i]).sum();
        if load >= net.capacity(&c.resources) {
            violated.push(c.resources);
        }
    }
    Ok(StabilityReport {
        stable: violated.is_empty(),
        violated,
    })
}

/// Blocking probabilities of the streaming model with threshold admission.
#[derive(Clone, Debug, PartialEq)]
pub struct Blocking {
    pub probability: Vec<Rational>,
    /// Number of admissible states.
    pub states: usize,
    /// Per-user bound on `m_i` used for the enumeration.
    pub bounds: Vec<u64>,
}

/// Largest number of states [`streaming_blocking`] will enumerate.
pub const MAX_BLOCKING_STATES: u128 = 20_000_000;

/// Exact blocking probabilities when a state is admissible iff its smallest
/// rate is at least `y`.
///
/// Admissible states satisfy `m_i ≤ ⌊C(J(i)) / y⌋` because `J(i)` is always
/// strongly connected. A caller-supplied `truncation` must dominate those
/// bounds.
pub fn streaming_blocking(
    net: &Network,
    traffic: &TrafficSpec,
    y: &Rational,
    truncation: Option<&[u64]>,
) -> Result<Blocking> {
    if !y.is_positive() {
        return Err(Error::Input("threshold must be positive".into()));
    }
    traffic.validate(Model::Streaming)?;
    let load = traffic.streaming_load();
    let mut bounds: Vec<u64> = net
        .users()
        .iter()
        .map(|u| {
            (net.capacity(&u.resources) / y)
                .floor()
                .to_integer()
                .to_u64()
                .expect("bound fits")
        })
        .collect();
    if let Some(t) = truncation {
        if t.len() != bounds.len() {
            return Err(Error::Input("truncation needs one bound per user".into()));
        }
        for (i, (&given, &need)) in t.iter().zip(&bounds).enumerate() {
            if given < need {
                return Err(Error::Input(format!(
                    "truncation {given} for user `{}` is below the admissible bound {need}",
                    net.user(i).id
                )));
            }
        }
        bounds = t.to_vec();
    }
    // Users with no streaming load stay at zero.
    let caps: Vec<u64> = bounds
        .iter()
        .zip(&load)
        .map(|(&b, l)| if l.is_zero() { 0 } else { b })
        .collect();
    let total: u128 = caps.iter().map(|&c| c as u128 + 1).product();
    if total > MAX_BLOCKING_STATES {
        return Err(Error::EnumerationCap {
            size: total.min(usize::MAX as u128) as usize,
            cap: MAX_BLOCKING_STATES as usize,
        });
    }

    // Poisson weights ρ^k / k! per user.
    let weights: Vec<Vec<Rational>> = caps
        .iter()
        .zip(&load)
        .map(|(&c, l)| {
            let mut w = vec![Rational::one()];
            for k in 1..=c {
                let next = &w[k as usize - 1] * l / rational::int(k as i64);
                w.push(next);
            }
            w
        })
        .collect();

    let mut alloc = Allocator::new(net);
    let mut admissible: HashMap<Vec<u64>, bool> = HashMap::new();
    let mut is_admissible = |m: &[u64]| -> Result<bool> {
        if let Some(&a) = admissible.get(m) {
            return Ok(a);
        }
        let counts: Vec<Rational> = m.iter().map(|&k| rational::int(k as i64)).collect();
        let dec = alloc.allocate(&counts)?;
        let ok = dec.min_rate().is_none_or(|x| x >= y);
        admissible.insert(m.to_vec(), ok);
        Ok(ok)
    };

    let nu = caps.len();
    let mut mass = Rational::zero();
    let mut blocked = vec![Rational::zero(); nu];
    let mut states = 0usize;
    let mut m = vec![0u64; nu];
    loop {
        if is_admissible(&m)? {
            states += 1;
            let w: Rational = m
                .iter()
                .enumerate()
                .fold(Rational::one(), |acc, (i, &k)| acc * &weights[i][k as usize]);
            for i in 0..nu {
                if load[i].is_zero() {
                    continue;
                }
                let mut up = m.clone();
                up[i] += 1;
                let next_ok = up[i] <= caps[i] && is_admissible(&up)?;
                if !next_ok {
                    blocked[i] += &w;
                }
            }
            mass += w;
        }
        // Odometer over the truncated box.
        let mut d = 0;
        loop {
            if d == nu {
                let probability = blocked.into_iter().map(|b| b / &mass).collect();
                return Ok(Blocking {
                    probability,
                    states,
                    bounds,
                });
            }
            if m[d] < caps[d] {
                m[d] += 1;
                break;
            }
            m[d] = 0;
            d += 1;
        }
    }
}

/// Whether counts `m` keep every rate at or above `y` (exact).
pub fn admissible(net: &Network, counts: &[u64], y: &Rational) -> Result<bool> {
    let c: Vec<Rational> = counts.iter().map(|&k| rational::int(k as i64)).collect();
    Ok(match min_rate(net, &c)? {
        Rate::Infinite => true,
        Rate::Finite(x) => &x >= y,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimConfig {
    pub model: Model,
    /// Scale `L ≥ 1` applied to arrival rates and capacities.
    pub scale: u32,
    /// Length of the measured window, in time units.
    pub horizon: f64,
    /// Time simulated before measuring starts.
    pub warmup: f64,
    pub seed: u64,
    pub replications: usize,
    /// Admission threshold on the smallest rate for streaming arrivals.
    pub admission: Option<f64>,
    /// Sampling interval for the trajectory of replication 0.
    pub record_every: Option<f64>,
}

impl SimConfig {
    pub fn new(model: Model) -> Self {
        SimConfig {
            model,
            scale: 1,
            horizon: 1_000.0,
            warmup: 0.0,
            seed: 0,
            replications: 1,
            admission: None,
            record_every: None,
        }
    }

    fn check(&self) -> Result<()> {
        if self.scale < 1 {
            return Err(Error::Input("scale must be at least 1".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Input("horizon must be positive".into()));
        }
        if !(self.warmup >= 0.0 && self.warmup.is_finite()) {
            return Err(Error::Input("warmup must be nonnegative".into()));
        }
        if self.replications < 1 {
            return Err(Error::Input("need at least one replication".into()));
        }
        if self.admission.is_some_and(|y| !(y > 0.0)) {
            return Err(Error::Input("admission threshold must be positive".into()));
        }
        if self.record_every.is_some_and(|d| !(d > 0.0)) {
            return Err(Error::Input("recording interval must be positive".into()));
        }
        Ok(())
    }
}

/// Mean and 95% confidence half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sample {
    pub time: f64,
    pub n: Vec<u64>,
    pub m: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimResult {
    pub seed: u64,
    pub scale: u32,
    /// Time-averaged elastic counts `n̄_i`.
    pub n: Vec<Estimate>,
    /// Time-averaged streaming counts `m̄_i`.
    pub m: Vec<Estimate>,
    /// Time-averaged elastic throughput `n_i x_i` (including the peak cap).
    pub throughput: Vec<Estimate>,
    /// Fraction of streaming arrivals refused by admission control.
    pub blocking: Vec<Estimate>,
    /// Transitions per replication (warmup included).
    pub transitions: Vec<u64>,
    pub trajectory: Vec<Sample>,
}

struct Run {
    n: Vec<f64>,
    m: Vec<f64>,
    throughput: Vec<f64>,
    blocked: Vec<u64>,
    offered: Vec<u64>,
    /// Batch means of `n` and `m`, used when there is a single replication.
    batches: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>,
    transitions: u64,
    trajectory: Vec<Sample>,
}

const BATCHES: usize = 20;
const MEMO_LIMIT: usize = 1 << 20;

/// Simulates the chain exactly (Gillespie) and averages over replications
/// with seeds `seed, seed+1, …`. Replications run in parallel and are
/// merged in order, so the result depends only on the inputs.
pub fn simulate(net: &Network, traffic: &TrafficSpec, cfg: &SimConfig) -> Result<SimResult> {
    cfg.check()?;
    traffic.validate(cfg.model)?;
    if cfg.model != Model::Streaming {
        stability_check(net, &traffic.rho())?.into_result(net)?;
    }
    let runs: Vec<Run> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_once(net, traffic, cfg, cfg.seed.wrapping_add(r as u64), r == 0))
        .collect::<Result<Vec<_>>>()?;

    let nu = net.num_users();
    let pick = |f: &dyn Fn(&Run) -> f64, batch: &dyn Fn(&(Vec<f64>, Vec<f64>, Vec<f64>)) -> f64| -> Estimate {
        if runs.len() > 1 {
            estimate(&runs.iter().map(f).collect::<Vec<_>>())
        } else {
            estimate(&runs[0].batches.iter().map(batch).collect::<Vec<_>>())
        }
    };
    let n = (0..nu).map(|i| pick(&|r| r.n[i], &|b| b.0[i])).collect();
    let m = (0..nu).map(|i| pick(&|r| r.m[i], &|b| b.1[i])).collect();
    let throughput = (0..nu).map(|i| pick(&|r| r.throughput[i], &|b| b.2[i])).collect();
    let blocking = (0..nu)
        .map(|i| {
            let per_run: Vec<f64> = runs
                .iter()
                .map(|r| if r.offered[i] == 0 { 0.0 } else { r.blocked[i] as f64 / r.offered[i] as f64 })
                .collect();
            if runs.len() > 1 {
                estimate(&per_run)
            } else {
                Estimate { mean: per_run[0], half_width: f64::NAN }
            }
        })
        .collect();
    let transitions = runs.iter().map(|r| r.transitions).collect();
    let trajectory = runs.into_iter().next().map(|r| r.trajectory).unwrap_or_default();
    Ok(SimResult {
        seed: cfg.seed,
        scale: cfg.scale,
        n,
        m,
        throughput,
        blocking,
        transitions,
        trajectory,
    })
}

/// Sample mean with a normal-approximation 95% half-width.
fn estimate(xs: &[f64]) -> Estimate {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    if xs.len() < 2 {
        return Estimate { mean, half_width: f64::NAN };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let t = student_t_975(xs.len() - 1);
    Estimate {
        mean,
        half_width: t * (var / k).sqrt(),
    }
}

fn student_t_975(dof: usize) -> f64 {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    StudentsT::new(0.0, 1.0, dof as f64)
        .map(|d| d.inverse_cdf(0.975))
        .unwrap_or(1.96)
}

fn run_once(net: &Network, traffic: &TrafficSpec, cfg: &SimConfig, seed: u64, record: bool) -> Result<Run> {
    let nu = net.num_users();
    let l = cfg.scale as f64;
    let f = |q: &Rational| rational::to_f64(q);
    let lambda: Vec<f64> = traffic.users.iter().map(|u| f(&u.lambda) * l).collect();
    let mu: Vec<f64> = traffic.users.iter().map(|u| f(&u.mu)).collect();
    let kappa: Vec<f64> = traffic.users.iter().map(|u| f(&u.kappa) * l).collect();
    let eta: Vec<f64> = traffic.users.iter().map(|u| f(&u.eta)).collect();
    let peak: Vec<f64> = traffic
        .users
        .iter()
        .map(|u| u.peak.as_ref().map_or(f64::INFINITY, f))
        .collect();
    let elastic = cfg.model != Model::Streaming;
    let streaming = cfg.model != Model::PeakRate;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alloc = Allocator::new(net);
    // Rates on the unscaled network; scaled capacities multiply them by L.
    let mut memo: HashMap<Vec<u64>, (Vec<f64>, f64)> = HashMap::new();
    let mut rates_for = |counts: &[u64]| -> Result<(Vec<f64>, f64)> {
        if let Some(r) = memo.get(counts) {
            return Ok(r.clone());
        }
        let c: Vec<f64> = counts.iter().map(|&k| k as f64).collect();
        let dec = alloc.allocate(&c)?;
        let x: Vec<f64> = dec.rates.iter().map(|x| x * l).collect();
        let min = dec.min_rate().map_or(f64::INFINITY, |x| x * l);
        if memo.len() >= MEMO_LIMIT {
            memo.clear();
        }
        memo.insert(counts.to_vec(), (x.clone(), min));
        Ok((x, min))
    };

    let mut n = vec![0u64; nu];
    let mut m = vec![0u64; nu];
    let end = cfg.warmup + cfg.horizon;
    let batch_len = cfg.horizon / BATCHES as f64;
    let mut t: f64 = 0.0;
    let mut run = Run {
        n: vec![0.0; nu],
        m: vec![0.0; nu],
        throughput: vec![0.0; nu],
        blocked: vec![0; nu],
        offered: vec![0; nu],
        batches: vec![(vec![0.0; nu], vec![0.0; nu], vec![0.0; nu]); BATCHES],
        transitions: 0,
        trajectory: Vec::new(),
    };
    let mut next_record: f64 = 0.0;
    let mut rates = vec![0.0; 4 * nu];
    loop {
        let counts: Vec<u64> = if cfg.model == Model::Integrated {
            n.iter().zip(&m).map(|(a, b)| a + b).collect()
        } else if cfg.model == Model::PeakRate {
            n.clone()
        } else {
            m.clone()
        };
        let needs_alloc = elastic && n.iter().any(|&k| k > 0);
        let x = if needs_alloc { rates_for(&counts)?.0 } else { vec![0.0; nu] };
        let served: Vec<f64> = (0..nu).map(|i| n[i] as f64 * x[i].min(peak[i])).collect();
        for i in 0..nu {
            rates[4 * i] = if elastic { lambda[i] } else { 0.0 };
            rates[4 * i + 1] = mu[i] * served[i];
            rates[4 * i + 2] = if streaming { kappa[i] } else { 0.0 };
            rates[4 * i + 3] = eta[i] * m[i] as f64;
        }
        let total: f64 = rates.iter().sum();
        let dt = if total > 0.0 {
            -(1.0 - rng.random::<f64>()).ln() / total
        } else {
            f64::INFINITY
        };
        // Accumulate the time averages over the part of [t, t+dt] inside the window.
        let (a, b) = (t.max(cfg.warmup), (t + dt).min(end));
        if b > a {
            let first = ((a - cfg.warmup) / batch_len).floor() as usize;
            let last = (((b - cfg.warmup) / batch_len).ceil() as usize).min(BATCHES);
            for k in first..last {
                let lo = a.max(cfg.warmup + k as f64 * batch_len);
                let hi = b.min(cfg.warmup + (k + 1) as f64 * batch_len);
                if hi <= lo {
                    continue;
                }
                let w = hi - lo;
                let batch = &mut run.batches[k];
                for i in 0..nu {
                    batch.0[i] += w * n[i] as f64;
                    batch.1[i] += w * m[i] as f64;
                    batch.2[i] += w * served[i];
                }
            }
        }
        if record {
            if let Some(every) = cfg.record_every {
                while next_record <= (t + dt).min(end) {
                    run.trajectory.push(Sample { time: next_record, n: n.clone(), m: m.clone() });
                    next_record += every;
                }
            }
        }
        if t + dt >= end {
            break;
        }
        t += dt;
        run.transitions += 1;
        let mut u = rng.random::<f64>() * total;
        let mut event = rates.len() - 1;
        for (e, r) in rates.iter().enumerate() {
            if u < *r {
                event = e;
                break;
            }
            u -= r;
        }
        while rates[event] == 0.0 {
            // Guard against rounding landing on an impossible event.
            event -= 1;
        }
        let i = event / 4;
        match event % 4 {
            0 => n[i] += 1,
            1 => n[i] -= 1,
            2 => {
                let measured = t >= cfg.warmup;
                if measured {
                    run.offered[i] += 1;
                }
                let admit = match cfg.admission {
                    None => true,
                    Some(y) => {
                        let mut up = if cfg.model == Model::Integrated {
                            n.iter().zip(&m).map(|(a, b)| a + b).collect::<Vec<_>>()
                        } else {
                            m.clone()
                        };
                        up[i] += 1;
                        rates_for(&up)?.1 >= y * (1.0 - 1e-12)
                    }
                };
                if admit {
                    m[i] += 1;
                } else if measured {
                    run.blocked[i] += 1;
                }
            }
            _ => m[i] -= 1,
        }
    }
    for batch in &mut run.batches {
        for i in 0..nu {
            batch.0[i] /= batch_len;
            batch.1[i] /= batch_len;
            batch.2[i] /= batch_len;
        }
    }
    for i in 0..nu {
        run.n[i] = run.batches.iter().map(|b| b.0[i]).sum::<f64>() / BATCHES as f64;
        run.m[i] = run.batches.iter().map(|b| b.1[i]).sum::<f64>() / BATCHES as f64;
        run.throughput[i] = run.batches.iter().map(|b| b.2[i]).sum::<f64>() / BATCHES as f64;
    }
    Ok(run)
}
