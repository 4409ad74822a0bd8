//! The symmetric circle: `N` resources of capacity `C` on a ring, user `i`
//! splitting over the `r` consecutive resources `i, …, i+r-1`, and identical
//! integrated traffic `(λ, μ, κ, η)` for every user.
//!
//! Around the pooled equilibrium the scaled fluctuations follow a linear
//! diffusion `dY = -P Y dt + D dW`. This module gives `P`, `e^{-Pt}` and the
//! stationary covariance in closed form, plus the normal approximation to
//! the probability that the slowest user sits in a cluster of `k` users.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_traits::Signed;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::dynamics::{TrafficSpec, UserTraffic};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::rational::{self, Rate, Rational};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct CircleParams {
    pub n: usize,
    pub r: usize,
    pub capacity: Rational,
    pub lambda: Rational,
    pub mu: Rational,
    pub kappa: Rational,
    pub eta: Rational,
}

impl CircleParams {
    pub fn new(
        n: usize,
        r: usize,
        capacity: Rational,
        lambda: Rational,
        mu: Rational,
        kappa: Rational,
        eta: Rational,
    ) -> Result<Self> {
        let p = CircleParams {
            n,
            r,
            capacity,
            lambda,
            mu,
            kappa,
            eta,
        };
        p.check()?;
        Ok(p)
    }

    /// Validates the shape and rates; stability is checked separately.
    pub fn check(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::Input(format!("a circle needs N >= 3, got {}", self.n)));
        }
        if self.r < 2 || self.r >= self.n {
            return Err(Error::Input(format!(
                "routes per user must satisfy 2 <= r < N, got r = {} with N = {}",
                self.r, self.n
            )));
        }
        for (name, v) in [
            ("C", &self.capacity),
            ("lambda", &self.lambda),
            ("mu", &self.mu),
            ("kappa", &self.kappa),
            ("eta", &self.eta),
        ] {
            if !v.is_positive() {
                return Err(Error::Input(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn rho(&self) -> Rational {
        &self.lambda / &self.mu
    }

    pub fn m_hat(&self) -> Rational {
        &self.kappa / &self.eta
    }

    fn stable(&self) -> Result<()> {
        self.check()?;
        if self.rho() >= self.capacity {
            return Err(Error::Unstable {
                violated: vec![vec!["every resource".into()]],
            });
        }
        Ok(())
    }

    fn floats(&self) -> Floats {
        let f = rational::to_f64;
        Floats {
            n: self.n as f64,
            c: f(&self.capacity),
            lambda: f(&self.lambda),
            mu: f(&self.mu),
            kappa: f(&self.kappa),
            eta: f(&self.eta),
            rho: f(&self.rho()),
            m_hat: f(&self.m_hat()),
        }
    }
}

struct Floats {
    n: f64,
    c: f64,
    lambda: f64,
    mu: f64,
    kappa: f64,
    eta: f64,
    rho: f64,
    m_hat: f64,
}

/// The ring network; resources and users are named `1..=N`.
pub fn circle_network(p: &CircleParams) -> Result<Network> {
    p.check()?;
    let n = p.n;
    Network::new(
        (1..=n).map(|j| (j.to_string(), p.capacity.clone())),
        (0..n).map(|i| {
            let route: Vec<String> = (0..p.r).map(|d| ((i + d) % n + 1).to_string()).collect();
            ((i + 1).to_string(), route)
        }),
    )?
    .with_ring(p.r)
}

/// The same traffic for every user of [`circle_network`].
pub fn circle_traffic(p: &CircleParams, net: &Network) -> Result<TrafficSpec> {
    TrafficSpec::new(
        net,
        net.users()
            .iter()
            .map(|u| UserTraffic {
                id: u.id.clone(),
                lambda: p.lambda.clone(),
                mu: p.mu.clone(),
                kappa: p.kappa.clone(),
                eta: p.eta.clone(),
                peak: None,
            })
            .collect(),
    )
}

/// Smallest allocated rate from arc sums alone.
///
/// Minimizes `(k+r-1) C / (n_i + … + n_{i+k-1})` over start `i` and
/// `k = 1..=N-r`, together with `N C / Σ n`. Arcs without flows are skipped.
pub fn circle_min_rate<T: Scalar>(p: &CircleParams, counts: &[T]) -> Result<Rate<T>> {
    p.check()?;
    let n = p.n;
    if counts.len() != n {
        return Err(Error::Input(format!("{} counts given for {n} users", counts.len())));
    }
    if counts.iter().any(|c| *c < T::zero()) {
        return Err(Error::Input("counts must be nonnegative".into()));
    }
    let cap = T::from_rational(&p.capacity);
    let mut best = Rate::Infinite;
    let mut consider = |resources: usize, total: &T| {
        if !total.is_zero() {
            let v = <T as Scalar>::from_u64(resources as u64) * cap.clone() / total.clone();
            if best.finite().is_none_or(|b| v < *b) {
                best = Rate::Finite(v);
            }
        }
    };
    for i in 0..n {
        let mut total = T::zero();
        for k in 1..=n - p.r {
            total = total + counts[(i + k - 1) % n].clone();
            consider(k + p.r - 1, &total);
        }
    }
    let all = counts.iter().fold(T::zero(), |a, c| a + c.clone());
    consider(n, &all);
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CircleEquilibrium {
    #[serde(with = "rational::serde_rational")]
    pub n_hat: Rational,
    #[serde(with = "rational::serde_rational")]
    pub m_hat: Rational,
    #[serde(with = "rational::serde_rational")]
    pub x_hat: Rational,
}

/// `m̂ = κ/η`, `x̂ = (C-ρ)/m̂`, `n̂ = ρ m̂ / (C-ρ)`, the same for every user
/// and every `r`.
pub fn circle_equilibrium(p: &CircleParams) -> Result<CircleEquilibrium> {
    p.stable()?;
    let rho = p.rho();
    let m_hat = p.m_hat();
    let slack = &p.capacity - &rho;
    Ok(CircleEquilibrium {
        n_hat: &rho * &m_hat / &slack,
        x_hat: &slack / &m_hat,
        m_hat,
    })
}

/// Linearization `P` and noise `D` of the diffusion around equilibrium.
///
/// Elastic coordinates come first, streaming second, so
/// `P = [[A, B], [0, ηI]]` with `A = -Q + dI` for a generator `Q` whose
/// off-diagonal entries are all `q`, and `B` constant `-q`.
#[derive(Clone, Debug)]
pub struct DiffusionModel {
    pub n: usize,
    pub p: DMatrix<f64>,
    /// Diagonal of `D`: `√(2λ)` then `√(2κ)`.
    pub noise: DVector<f64>,
    pub q: f64,
    pub d: f64,
    pub eta: f64,
}

impl DiffusionModel {
    /// `D Dᵀ`.
    pub fn noise_covariance(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.noise.map(|v| v * v))
    }
}

pub fn drift_matrix(p: &CircleParams) -> Result<DiffusionModel> {
    p.stable()?;
    let f = p.floats();
    let n = p.n;
    let slack = f.c - f.rho;
    let q = f.mu * f.rho * slack / (f.n * f.c * f.m_hat);
    let d = f.mu * slack * slack / (f.c * f.m_hat);
    let a_diag = f.mu * slack / f.m_hat * (1.0 - f.rho / (f.n * f.c));
    let mut pm = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            pm[(i, j)] = if i == j { a_diag } else { -q };
            pm[(i, n + j)] = -q;
        }
        pm[(n + i, n + i)] = f.eta;
    }
    let noise = DVector::from_fn(2 * n, |i, _| {
        if i < n {
            (2.0 * f.lambda).sqrt()
        } else {
            (2.0 * f.kappa).sqrt()
        }
    });
    Ok(DiffusionModel {
        n,
        p: pm,
        noise,
        q,
        d,
        eta: f.eta,
    })
}

/// `e^{-Pt}` from the eigen-structure of `Q`.
pub fn expm_closed(model: &DiffusionModel, t: f64) -> Result<DMatrix<f64>> {
    if !(t >= 0.0) {
        return Err(Error::Input(format!("time must be nonnegative, got {t}")));
    }
    let n = model.n;
    let nf = n as f64;
    let (q, d, eta) = (model.q, model.d, model.eta);
    let decay = (-d * t).exp();
    // 1 - e^{-Nqt}
    let mix = -(-nf * q * t).exp_m1();
    let diag = decay * (1.0 - mix * (nf - 1.0) / nf);
    let off = decay * mix / nf;
    // (e^{-ηt} - e^{-dt}) / (η - d)
    let delta = eta - d;
    let ratio = if delta.abs() < 1e-9 * eta.abs().max(d.abs()) {
        -t * (-eta * t).exp()
    } else {
        decay * (-delta * t).exp_m1() / delta
    };
    let upper = -q * ratio;
    let mut e = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            e[(i, j)] = if i == j { diag } else { off };
            e[(i, n + j)] = upper;
        }
        e[(n + i, n + i)] = (-eta * t).exp();
    }
    Ok(e)
}

/// Stationary second moments of the diffusion. Entries are the same for
/// every user, and for every pair of distinct users.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Covariances {
    /// `Cov(n_i, n_j)`, `i ≠ j`.
    pub cov_nn: f64,
    pub var_n: f64,
    /// `Cov(n_i, m_j)` for all `i, j`.
    pub cov_nm: f64,
    pub var_m: f64,
    /// `Cov(m_i, m_j)`, `i ≠ j`.
    pub cov_mm: f64,
    /// `Var(n_i + m_i)`.
    pub total_var: f64,
    /// `Cov(n_i + m_i, n_j + m_j)`, `i ≠ j`.
    pub total_cov: f64,
}

impl Covariances {
    /// The full `2N × 2N` matrix.
    pub fn matrix(&self, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(2 * n, 2 * n, |a, b| {
            let (ea, eb) = (a < n, b < n);
            let same = a % n == b % n;
            match (ea, eb) {
                (true, true) if same => self.var_n,
                (true, true) => self.cov_nn,
                (false, false) if same => self.var_m,
                (false, false) => self.cov_mm,
                _ => self.cov_nm,
            }
        })
    }
}

pub fn covariance_closed(p: &CircleParams) -> Result<Covariances> {
    p.stable()?;
    let f = p.floats();
    let slack = f.c - f.rho;
    let denom = f.mu * slack * slack + f.c * f.kappa;
    let cov_nn = f.m_hat / f.n * (f.rho * f.rho / (slack * slack) + f.lambda * f.rho / denom);
    let cov_nm = f.m_hat / f.n * f.lambda * slack / denom;
    let var_n = f.m_hat * f.rho / slack + cov_nn;
    let var_m = f.m_hat;
    let total_cov = cov_nn + 2.0 * cov_nm;
    Ok(Covariances {
        cov_nn,
        var_n,
        cov_nm,
        var_m,
        cov_mm: 0.0,
        total_var: f.m_hat * f.c / slack + total_cov,
        total_cov,
    })
}

/// Largest `N` the dense numeric covariance routines accept.
pub const MAX_NUMERIC_N: usize = 16;

/// Solves `PΣ + ΣPᵀ = DDᵀ` as one dense linear system.
pub fn covariance_numeric(model: &DiffusionModel) -> Result<DMatrix<f64>> {
    if model.n > MAX_NUMERIC_N {
        return Err(Error::Input(format!(
            "numeric covariance supports N <= {MAX_NUMERIC_N}, got {}",
            model.n
        )));
    }
    lyapunov(&model.p, &model.noise_covariance())
}

/// Solution `X` of `P X + X Pᵀ = W` via the Kronecker form
/// `(I ⊗ P + P ⊗ I) vec X = vec W`.
pub fn lyapunov(p: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = p.nrows();
    if p.ncols() != m || w.shape() != (m, m) {
        return Err(Error::Input("Lyapunov operands must be square and of equal size".into()));
    }
    let eye = DMatrix::<f64>::identity(m, m);
    let k = eye.kronecker(p) + p.kronecker(&eye);
    let rhs = DVector::from_column_slice(w.as_slice());
    let x = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("Lyapunov system is singular".into()))?;
    let x = DMatrix::from_column_slice(m, m, x.as_slice());
    Ok((&x + x.transpose()) * 0.5)
}

/// `∫_0^∞ e^{-Pt} DDᵀ e^{-Pᵀt} dt` by quadrature.
///
/// Gauss–Legendre on a short window `[0, h]`, then repeated doubling
/// `Σ_{2T} = Σ_T + e^{-PT} Σ_T e^{-PᵀT}` until the tail is below `tol`
/// relative to the partial integral.
pub fn covariance_quadrature(model: &DiffusionModel, tol: f64) -> Result<DMatrix<f64>> {
    if model.n > MAX_NUMERIC_N {
        return Err(Error::Input(format!(
            "numeric covariance supports N <= {MAX_NUMERIC_N}, got {}",
            model.n
        )));
    }
    let w = model.noise_covariance();
    let p = &model.p;
    let norm = p.abs().row_sum().max();
    if norm == 0.0 {
        return Err(Error::Numeric("integral diverges for P = 0".into()));
    }
    let h = 0.5 / norm;
    let (nodes, weights) = gauss_legendre(24);
    let mut sigma = DMatrix::zeros(p.nrows(), p.nrows());
    for (x, wt) in nodes.iter().zip(&weights) {
        let t = 0.5 * h * (x + 1.0);
        let e = (-p * t).exp();
        sigma += (&e * &w * e.transpose()) * (0.5 * h * wt);
    }
    let mut step = (-p * h).exp();
    for _ in 0..200 {
        let tail = &step * &sigma * step.transpose();
        let size = tail.abs().max();
        sigma += tail;
        if size <= tol * sigma.abs().max() {
            return Ok((&sigma + sigma.transpose()) * 0.5);
        }
        step = &step * &step;
        if !step.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(Error::Numeric("covariance integral did not converge".into()))
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` from the Jacobi matrix.
fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(m, m, |i, j| {
        if i.abs_diff(j) == 1 {
            let k = i.max(j) as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `ln(1 - Φ(z))` without underflow for large `z`.
pub fn log_normal_survival(z: f64) -> f64 {
    if z < 5.0 {
        return (0.5 * erfc(z / std::f64::consts::SQRT_2)).ln();
    }
    // Mills ratio by its continued fraction z + 1/(z + 2/(z + 3/(z + …))).
    let mut frac = z;
    for k in (1..=80).rev() {
        frac = z + k as f64 / frac;
    }
    -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln() - frac.ln()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CongestionRow {
    pub k: usize,
    /// Standardized threshold passed to `1 - Φ`.
    pub z: f64,
    pub log_probability: f64,
    pub probability: f64,
}

/// Normal approximation to the probability that some user gets a rate
/// below `ε` while sitting in a cluster of `k` users.
///
/// Rows cover `k = 1..=N-r` (with the factor `N` for the `N` rotations) and
/// then `k = N`.
pub fn congestion_probabilities(p: &CircleParams, eps: f64) -> Result<Vec<CongestionRow>> {
    if !(eps > 0.0) {
        return Err(Error::Input(format!("epsilon must be positive, got {eps}")));
    }
    let cov = covariance_closed(p)?;
    let f = p.floats();
    let mean = f.m_hat * f.c / (f.c - f.rho);
    let row = |k: usize, resources: usize, rotations: f64| {
        let kf = k as f64;
        let sd = (kf * cov.total_var + kf * (kf - 1.0) * cov.total_cov).sqrt();
        let z = (resources as f64 * f.c / eps - kf * mean) / sd;
        let log_probability = rotations.ln() + log_normal_survival(z);
        CongestionRow {
            k,
            z,
            log_probability,
            probability: log_probability.exp(),
        }
    };
    let mut rows: Vec<_> = (1..=p.n - p.r).map(|k| row(k, k + p.r - 1, f.n)).collect();
    rows.push(row(p.n, p.n, 1.0));
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterSize {
    /// Most likely cluster size among `k ≤ N-r`.
    pub k_argmax: usize,
    /// Continuous minimizer of the small-`ε` term; `None` when undefined.
    pub k0: Option<f64>,
}

pub fn most_likely_cluster_size(p: &CircleParams, eps: f64) -> Result<ClusterSize> {
    let rows = congestion_probabilities(p, eps)?;
    let best = rows[..rows.len() - 1]
        .iter()
        .fold(None::<&CongestionRow>, |b, r| match b {
            Some(b) if b.log_probability >= r.log_probability => Some(b),
            _ => Some(r),
        })
        .expect("r < N leaves at least one arc size");
    let cov = covariance_closed(p)?;
    Ok(ClusterSize {
        k_argmax: best.k,
        k0: k0(p.r, cov.total_var, cov.total_cov),
    })
}

/// `(r-1)(𝒱-𝒞) / (𝒱 - (2(r-1)+1)𝒞)` when the denominator is positive.
pub fn k0(r: usize, total_var: f64, total_cov: f64) -> Option<f64> {
    let a = r as f64 - 1.0;
    let denom = total_var - (2.0 * a + 1.0) * total_cov;
    (denom > 0.0).then(|| a * (total_var - total_cov) / denom)
}

/// `(k+r-1) / √(k𝒱 + k(k-1)𝒞)`, the small-`ε` part of the threshold `z`
/// without the factor `C/ε`.
pub fn dominating_term(k: usize, r: usize, total_var: f64, total_cov: f64) -> f64 {
    let kf = k as f64;
    (kf + r as f64 - 1.0) / (kf * total_var + kf * (kf - 1.0) * total_cov).sqrt()
}
