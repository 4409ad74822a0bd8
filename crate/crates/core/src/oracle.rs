//! Independent numerical solution of the utility maximization
//!
//! ```text
//! maximize   Σ_i n_i U(x_i),   x_i = Σ_{j ∈ J(i)} x_i^j
//! subject to Σ_i n_i x_i^j ≤ C_j,   x_i^j ≥ 0
//! ```
//!
//! with the α-fair utility `U(x) = x^{1-α}/(1-α)` (`log x` at `α = 1`), and
//! an exact checker for the optimality structure of a candidate solution.
//!
//! The solver knows nothing about clusters. It runs a log-barrier interior
//! point method on the split variables, so agreement with
//! [`crate::alloc::allocate`] is a genuine cross-check.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_traits::{Signed, Zero};
use serde::Serialize;

use crate::alloc::SplitMatrix;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::rational::{self, Rational};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UtilitySpec {
    pub alpha: f64,
}

impl UtilitySpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Input(format!("alpha must be positive, got {alpha}")));
        }
        Ok(UtilitySpec { alpha })
    }

    pub fn value(&self, x: f64) -> f64 {
        if self.alpha == 1.0 {
            x.ln()
        } else {
            x.powf(1.0 - self.alpha) / (1.0 - self.alpha)
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        x.powf(-self.alpha)
    }

    fn second_derivative(&self, x: f64) -> f64 {
        -self.alpha * x.powf(-self.alpha - 1.0)
    }

    /// `(U')^{-1}(p)`.
    pub fn inverse_derivative(&self, p: f64) -> f64 {
        p.powf(-1.0 / self.alpha)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NumSolution {
    /// `x_i`; zero for users without flows.
    pub rates: Vec<f64>,
    /// `x_i^j` for `j ∈ J(i)`.
    pub splits: Vec<BTreeMap<usize, f64>>,
    /// Resource prices; zero for resources no flow can use.
    pub duals: Vec<f64>,
    pub newton_steps: usize,
    /// Bound on the objective gap at termination.
    pub gap: f64,
}

impl NumSolution {
    pub fn objective(&self, counts: &[f64], u: UtilitySpec) -> f64 {
        objective(counts, &self.rates, u)
    }
}

/// `Σ_{n_i > 0} n_i U(x_i)`.
pub fn objective(counts: &[f64], rates: &[f64], u: UtilitySpec) -> f64 {
    counts
        .iter()
        .zip(rates)
        .filter(|(n, _)| **n > 0.0)
        .map(|(n, x)| n * u.value(*x))
        .sum()
}

const MAX_NEWTON: usize = 5_000;
/// Splits below this fraction of their resource are dropped before polishing.
const POLISH_DROP: f64 = 1e-5;
const POLISH_STEPS: usize = 50;

/// Solves the problem to within `tol` on the rates.
///
/// The barrier weight grows until the duality gap bound falls below
/// `tol / 100`. The result is then polished by Newton's method on the
/// optimality conditions of the active splits, and the polished point is
/// kept only if it is feasible and passes the sign checks.
pub fn solve_num(net: &Network, counts: &[f64], u: UtilitySpec, tol: f64) -> Result<NumSolution> {
    if counts.len() != net.num_users() || counts.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
        return Err(Error::Input("counts must be finite, nonnegative, one per user".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Input(format!("tolerance must be positive, got {tol}")));
    }
    // Variables y = n_i x_i^j over active users.
    let mut vars: Vec<(usize, usize)> = Vec::new();
    for (i, user) in net.users().iter().enumerate() {
        if counts[i] > 0.0 {
            vars.extend(user.resources.iter().map(|j| (i, j)));
        }
    }
    if vars.is_empty() {
        return Err(Error::Input("no user has flows".into()));
    }
    let cap: Vec<f64> = net
        .resources()
        .iter()
        .map(|r| rational::to_f64(&r.capacity))
        .collect();
    let mut per_resource = vec![0usize; cap.len()];
    for &(_, j) in &vars {
        per_resource[j] += 1;
    }
    let used: Vec<usize> = (0..cap.len()).filter(|&j| per_resource[j] > 0).collect();
    let k = vars.len();
    let constraints = (k + used.len()) as f64;

    let mut y: Vec<f64> = vars
        .iter()
        .map(|&(_, j)| cap[j] / (2.0 * per_resource[j] as f64))
        .collect();

    let slack = |y: &[f64]| -> Vec<f64> {
        let mut s = cap.clone();
        for (v, &(_, j)) in vars.iter().enumerate() {
            s[j] -= y[v];
        }
        s
    };
    let rates_of = |y: &[f64]| -> Vec<f64> {
        let mut x = vec![0.0; counts.len()];
        for (v, &(i, _)) in vars.iter().enumerate() {
            x[i] += y[v] / counts[i];
        }
        x
    };
    let barrier = |t: f64, y: &[f64]| -> f64 {
        if y.iter().any(|v| *v <= 0.0) {
            return f64::INFINITY;
        }
        let s = slack(y);
        if used.iter().any(|&j| s[j] <= 0.0) {
            return f64::INFINITY;
        }
        let x = rates_of(y);
        -t * objective(counts, &x, u)
            - used.iter().map(|&j| s[j].ln()).sum::<f64>()
            - y.iter().map(|v| v.ln()).sum::<f64>()
    };

    let gap_target = (tol * 1e-2).max(1e-13);
    let mut t = 1.0;
    let mut steps = 0;
    loop {
        // Centering by damped Newton.
        loop {
            let s = slack(&y);
            let x = rates_of(&y);
            let mut g = DVector::zeros(k);
            // Hessian M + Aᵀ S⁻² A: M holds the utility and sign terms, S the
            // slacks. 1/s² grows like t² and would swamp M if assembled.
            let mut m: DMatrix<f64> = DMatrix::zeros(k, k);
            for (a, &(ia, ja)) in vars.iter().enumerate() {
                g[a] = -t * u.derivative(x[ia]) + 1.0 / s[ja] - 1.0 / y[a];
                m[(a, a)] += 1.0 / (y[a] * y[a]);
                for (b, &(ib, _)) in vars.iter().enumerate() {
                    if ia == ib {
                        m[(a, b)] += -t * u.second_derivative(x[ia]) / counts[ia];
                    }
                }
            }
            let dir = -newton_solve(&m, &vars, &used, &s, &g)?;
            let decrement = -g.dot(&dir);
            let f0 = barrier(t, &y);
            // Stop once the predicted decrease is lost in the rounding of f0.
            // The utility terms can cancel to near zero (U = ln at x = 1), so
            // their rounding is measured by t Σ y U'(x) rather than by f0.
            let scale = f0.abs() + t * vars.iter().enumerate().map(|(a, &(i, _))| y[a] * u.derivative(x[i])).sum::<f64>();
            if decrement / 2.0 <= 1e-10 || decrement <= 32.0 * f64::EPSILON * scale {
                break;
            }
            steps += 1;
            if steps > MAX_NEWTON {
                return Err(Error::Convergence {
                    iterations: steps,
                    residual: decrement,
                });
            }
            let mut step = 1.0;
            loop {
                let trial: Vec<f64> = y.iter().zip(dir.iter()).map(|(a, d)| a + step * d).collect();
                let f1 = barrier(t, &trial);
                if f1.is_finite() && f1 <= f0 - 0.25 * step * decrement {
                    y = trial;
                    break;
                }
                step *= 0.5;
                if step < 1e-10 {
                    break;
                }
            }
            if step < 1e-10 {
                // Rounding hides any further decrease at this barrier weight.
                break;
            }
        }
        if constraints / t < gap_target {
            break;
        }
        t *= 8.0;
    }

    // Prices from stationarity, U'(x_i) = μ_j - 1/(t y), read off the
    // largest flow at each resource. The slack 1/(t s_j) gives the same value
    // in exact arithmetic but s_j is a cancellation-prone difference.
    let rates = rates_of(&y);
    let mut duals = vec![0.0; cap.len()];
    let mut largest = vec![0.0; cap.len()];
    for (v, &(i, j)) in vars.iter().enumerate() {
        if y[v] > largest[j] {
            largest[j] = y[v];
            duals[j] = u.derivative(rates[i]) + 1.0 / (t * y[v]);
        }
    }
    // Splits that vanish with zero reduced cost make the central path
    // approach the optimum only like t^(-1/2); finish on the active set.
    if let Some((py, pd)) = polish(counts, u, &vars, &used, &cap, &y, &duals) {
        y = py;
        duals = pd;
    }

    let rates = rates_of(&y);
    let mut splits: Vec<BTreeMap<usize, f64>> = net
        .users()
        .iter()
        .map(|user| user.resources.iter().map(|j| (j, 0.0)).collect())
        .collect();
    for (v, &(i, j)) in vars.iter().enumerate() {
        splits[i].insert(j, y[v] / counts[i]);
    }
    Ok(NumSolution {
        rates,
        splits,
        duals,
        newton_steps: steps,
        gap: constraints / t,
    })
}

/// Newton's method on the optimality conditions with the small splits
/// fixed at zero and every reachable resource saturated:
/// `U'(x_i) = μ_j` on kept splits and `Σ y = C_j`. Returns `None` unless
/// the result is feasible and no dropped split could raise the objective.
fn polish(
    counts: &[f64],
    u: UtilitySpec,
    vars: &[(usize, usize)],
    used: &[usize],
    cap: &[f64],
    y: &[f64],
    duals: &[f64],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let keep: Vec<usize> = (0..vars.len()).filter(|&a| y[a] > POLISH_DROP * cap[vars[a].1]).collect();
    let (p, q) = (keep.len(), used.len());
    let row_of = |j: usize| used.iter().position(|&r| r == j).expect("reachable resource");
    let mut yk: Vec<f64> = keep.iter().map(|&a| y[a]).collect();
    let mut mu: Vec<f64> = used.iter().map(|&j| duals[j]).collect();
    let rates = |yk: &[f64]| {
        let mut x = vec![0.0; counts.len()];
        for (b, &a) in keep.iter().enumerate() {
            let i = vars[a].0;
            x[i] += yk[b] / counts[i];
        }
        x
    };
    let residual = |yk: &[f64], mu: &[f64]| {
        let x = rates(yk);
        let mut f = DVector::zeros(p + q);
        for (b, &a) in keep.iter().enumerate() {
            let (i, j) = vars[a];
            f[b] = u.derivative(x[i]) - mu[row_of(j)];
        }
        for r in 0..q {
            f[p + r] = -cap[used[r]];
        }
        for (b, &a) in keep.iter().enumerate() {
            f[p + row_of(vars[a].1)] += yk[b];
        }
        f
    };
    let mut f = residual(&yk, &mu);
    for _ in 0..POLISH_STEPS {
        if f.amax() < 1e-14 * mu.iter().fold(1.0f64, |m, v| m.max(v.abs())) {
            break;
        }
        let x = rates(&yk);
        let mut jac = DMatrix::zeros(p + q, p + q);
        for (b, &a) in keep.iter().enumerate() {
            let (i, j) = vars[a];
            for (c, &a2) in keep.iter().enumerate() {
                if vars[a2].0 == i {
                    jac[(b, c)] = u.second_derivative(x[i]) / counts[i];
                }
            }
            jac[(b, p + row_of(j))] = -1.0;
            jac[(p + row_of(j), b)] = 1.0;
        }
        // Split exchanges that keep every rate and load fixed leave the
        // Jacobian singular; the minimum-norm step ignores them.
        let step = jac.svd(true, true).solve(&f, 1e-12).ok()?;
        for b in 0..p {
            yk[b] -= step[b];
        }
        for r in 0..q {
            mu[r] -= step[p + r];
        }
        f = residual(&yk, &mu);
    }
    let scale = mu.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if f.amax() > 1e-10 * scale || yk.iter().any(|v| *v < 0.0) || mu.iter().any(|m| *m < 0.0) {
        return None;
    }
    let x = rates(&yk);
    let dropped_ok = (0..vars.len())
        .filter(|a| !keep.contains(a))
        .all(|a| u.derivative(x[vars[a].0]) <= mu[row_of(vars[a].1)] * (1.0 + 1e-9));
    if !dropped_ok {
        return None;
    }
    let mut full = vec![0.0; vars.len()];
    for (b, &a) in keep.iter().enumerate() {
        full[a] = yk[b];
    }
    let mut prices = duals.to_vec();
    for (r, &j) in used.iter().enumerate() {
        prices[j] = mu[r];
    }
    Some((full, prices))
}

/// Solves `(M + Aᵀ S⁻² A) d = g` through the equivalent augmented system
/// `[M, Aᵀ; A, -S²] [d; λ] = [g; 0]`, which never forms `1/s²` or `M⁻¹`.
/// Both blocks are scaled to unit diagonal before a fully pivoted LU.
fn newton_solve(
    m: &DMatrix<f64>,
    vars: &[(usize, usize)],
    used: &[usize],
    s: &[f64],
    g: &DVector<f64>,
) -> Result<DVector<f64>> {
    let k = vars.len();
    let size = k + used.len();
    let mut scale = DVector::zeros(size);
    for a in 0..k {
        scale[a] = 1.0 / m[(a, a)].sqrt();
    }
    for (r, &j) in used.iter().enumerate() {
        scale[k + r] = 1.0 / s[j];
    }
    let mut kkt = DMatrix::zeros(size, size);
    for a in 0..k {
        for b in 0..k {
            kkt[(a, b)] = m[(a, b)] * scale[a] * scale[b];
        }
    }
    for (r, &j) in used.iter().enumerate() {
        for (a, &(_, ja)) in vars.iter().enumerate() {
            if ja == j {
                let v = scale[a] * scale[k + r];
                kkt[(a, k + r)] = v;
                kkt[(k + r, a)] = v;
            }
        }
        kkt[(k + r, k + r)] = -1.0;
    }
    let mut rhs = DVector::zeros(size);
    for a in 0..k {
        rhs[a] = g[a] * scale[a];
    }
    let lu = kkt.clone().full_piv_lu();
    let singular = || Error::Numeric("barrier Newton system is singular".into());
    let mut sol = lu.solve(&rhs).ok_or_else(singular)?;
    for _ in 0..2 {
        let r = &rhs - &kkt * &sol;
        sol += lu.solve(&r).ok_or_else(singular)?;
    }
    Ok(DVector::from_fn(k, |a, _| sol[a] * scale[a]))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct KktReport {
    pub ok: bool,
    pub violations: Vec<String>,
}

/// Checks a candidate allocation exactly:
///
/// * splits are nonnegative, add up to `x_i`, and respect every capacity;
/// * every resource some flow can use is saturated;
/// * a user never draws from a resource it shares with a user of lower rate.
///
/// Users without flows are ignored.
pub fn kkt_check(
    net: &Network,
    counts: &[Rational],
    rates: &[Rational],
    splits: &SplitMatrix,
) -> KktReport {
    let mut violations = Vec::new();
    let nu = net.num_users();
    if counts.len() != nu || rates.len() != nu || splits.rows.len() != nu {
        return KktReport {
            ok: false,
            violations: vec!["dimension mismatch".into()],
        };
    }
    let active: Vec<usize> = (0..nu).filter(|&i| counts[i].is_positive()).collect();
    for &i in &active {
        let id = &net.user(i).id;
        let mut total = Rational::zero();
        for (j, v) in &splits.rows[i] {
            if !net.user(i).resources.contains(*j) {
                violations.push(format!("user {id} draws from resource {} outside its set", net.resource(*j).id));
            }
            if v.is_negative() {
                violations.push(format!("negative split for user {id}"));
            }
            total += v;
        }
        if total != rates[i] {
            violations.push(format!(
                "splits of user {id} add up to {}, rate is {}",
                rational::format_rational(&total),
                rational::format_rational(&rates[i])
            ));
        }
    }
    let mut touched = net.no_resources();
    for &i in &active {
        touched.union_with(&net.user(i).resources);
    }
    for j in 0..net.num_resources() {
        let load: Rational = active.iter().map(|&i| &counts[i] * splits.get(i, j)).sum();
        let c = &net.resource(j).capacity;
        let id = &net.resource(j).id;
        if &load > c {
            violations.push(format!("resource {id} overloaded: {} > {}", rational::format_rational(&load), rational::format_rational(c)));
        } else if touched.contains(j) && &load < c {
            violations.push(format!("resource {id} not saturated: {} < {}", rational::format_rational(&load), rational::format_rational(c)));
        }
    }
    for &a in &active {
        for &b in &active {
            if rates[a] <= rates[b] {
                continue;
            }
            for j in net.user(a).resources.intersection(&net.user(b).resources).iter() {
                if splits.get(a, j).is_positive() {
                    violations.push(format!(
                        "user {} uses resource {} shared with slower user {}",
                        net.user(a).id,
                        net.resource(j).id,
                        net.user(b).id
                    ));
                }
            }
        }
    }
    KktReport {
        ok: violations.is_empty(),
        violations,
    }
}
