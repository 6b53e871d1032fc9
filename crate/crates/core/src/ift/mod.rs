//! Constructive generalized implicit function theorem on finite-dimensional
//! truncations.
//!
//! Given `φ: X ⊇ U → Y` and `ψ: Y ⊇ V → Z` with `φ(0) = 0`, `ψ(0) = 0`,
//! `ψ∘φ ≡ 0` and `im dφ(0) = ker dψ(0)`, [`certify_neighborhood`] computes a
//! radius `W` inside which every zero of `ψ` lies on the image of `φ`, and
//! [`solve_fiber`] produces the preimage by the correction iteration
//!
//! ```text
//! u_n     = φ(x_n) - y
//! v_n     = σ(u_n - τ(dψ(0) u_n))
//! x_{n+1} = x_n - v_n
//! ```
//!
//! where `σ` and `τ` are minimum-norm right inverses of `dφ(0)` and `dψ(0)`.
//! Inside `W` the defects `|u_n|` at least halve at every step.

pub mod charts;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linops::{
    self, inverse_compose, LinearOperator, LinopsError, RankTolerance, SpectralDecomposition,
};

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;
/// Number of random pairs used by the heuristic Lipschitz estimator.
pub const DEFAULT_LIPSCHITZ_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapError {
    #[error("point outside the chart domain: {0}")]
    OutOfDomain(String),
    #[error("{map}: expected a vector of length {expected}, got {got}")]
    Dimension { map: String, expected: usize, got: usize },
    #[error("{0}: evaluation produced non-finite values")]
    NonFinite(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IftError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Linops(#[from] LinopsError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{0} does not fix the origin (|value at 0| = {1:.3e})")]
    OriginNotFixed(String, f64),
    #[error("chain condition failed: |ψ(φ(x))| = {residual:.3e} at sample {sample}")]
    ChainConditionFailed { sample: usize, residual: f64 },
    #[error("exactness failed: {0}")]
    ExactnessFailed(String),
    #[error("no derivative-Lipschitz bound for {0}")]
    MissingLipschitz(String),
    #[error("target is not in the zero fiber: |ψ(y)| = {residual:.3e}")]
    NotInFiber { residual: f64 },
    #[error("target norm {norm:.6e} is outside the certified radius {radius:.6e}")]
    OutsideCertifiedRadius { norm: f64, radius: f64 },
    #[error("iteration diverged at step {iteration} (|u| = {u_norm:.3e})")]
    Diverged { iteration: usize, u_norm: f64 },
    #[error("no convergence within {0} iterations")]
    MaxIterations(usize),
    #[error("{0}: derivative at the origin is not an embedding")]
    NotEmbedding(String),
    #[error("transition leaves the certified chart: {0}")]
    OutOfChart(String),
}

pub type Result<T> = std::result::Result<T, IftError>;

type EvalFn = dyn Fn(&DVector<f64>) -> std::result::Result<DVector<f64>, MapError> + Send + Sync;
type JacobianFn = dyn Fn(&DVector<f64>) -> std::result::Result<DMatrix<f64>, MapError> + Send + Sync;

/// A `C¹` map between coordinate spaces, with the regularity data the
/// certificate needs.
///
/// The Jacobian is analytic when supplied and central differences otherwise.
/// An exact linearization at the origin can be attached separately; it is
/// returned for `x = 0` in preference to either.
#[derive(Clone)]
pub struct DifferentiableMap {
    name: String,
    domain_dim: usize,
    codomain_dim: usize,
    eval: Arc<EvalFn>,
    jacobian: Option<Arc<JacobianFn>>,
    origin_jacobian: Option<LinearOperator>,
    fd_step: f64,
    deriv_lipschitz: Option<f64>,
    lipschitz_heuristic: bool,
    domain_radius: f64,
}

impl fmt::Debug for DifferentiableMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DifferentiableMap")
            .field("name", &self.name)
            .field("domain_dim", &self.domain_dim)
            .field("codomain_dim", &self.codomain_dim)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .field("deriv_lipschitz", &self.deriv_lipschitz)
            .field("lipschitz_heuristic", &self.lipschitz_heuristic)
            .field("domain_radius", &self.domain_radius)
            .finish()
    }
}

impl DifferentiableMap {
    pub fn new<F>(name: impl Into<String>, domain_dim: usize, codomain_dim: usize, eval: F) -> Self
    where
        F: Fn(&DVector<f64>) -> std::result::Result<DVector<f64>, MapError> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            domain_dim,
            codomain_dim,
            eval: Arc::new(eval),
            jacobian: None,
            origin_jacobian: None,
            fd_step: DEFAULT_FD_STEP,
            deriv_lipschitz: None,
            lipschitz_heuristic: false,
            domain_radius: f64::INFINITY,
        }
    }

    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(&DVector<f64>) -> std::result::Result<DMatrix<f64>, MapError> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn with_origin_jacobian(mut self, jacobian: LinearOperator) -> Self {
        assert_eq!(
            (jacobian.codomain_dim(), jacobian.domain_dim()),
            (self.codomain_dim, self.domain_dim),
            "origin Jacobian has the wrong shape"
        );
        self.origin_jacobian = Some(jacobian);
        self
    }

    pub fn with_lipschitz(mut self, bound: f64) -> Self {
        assert!(bound >= 0.0, "Lipschitz bound must be nonnegative");
        self.deriv_lipschitz = Some(bound);
        self.lipschitz_heuristic = false;
        self
    }

    pub fn with_domain_radius(mut self, radius: f64) -> Self {
        assert!(radius > 0.0, "domain radius must be positive");
        self.domain_radius = radius;
        self
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        assert!(h > 0.0, "finite-difference step must be positive");
        self.fd_step = h;
        self
    }

    /// Replaces the Lipschitz bound by a sampled estimate, flagged heuristic.
    pub fn with_estimated_lipschitz(mut self, samples: usize, seed: u64) -> Result<Self> {
        let estimate = self.estimate_lipschitz(samples, seed)?;
        self.deriv_lipschitz = Some(estimate);
        self.lipschitz_heuristic = true;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain_dim(&self) -> usize {
        self.domain_dim
    }

    pub fn codomain_dim(&self) -> usize {
        self.codomain_dim
    }

    pub fn deriv_lipschitz(&self) -> Option<f64> {
        self.deriv_lipschitz
    }

    pub fn lipschitz_is_heuristic(&self) -> bool {
        self.lipschitz_heuristic
    }

    pub fn domain_radius(&self) -> f64 {
        self.domain_radius
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    fn check_input(&self, x: &DVector<f64>) -> std::result::Result<(), MapError> {
        if x.len() != self.domain_dim {
            return Err(MapError::Dimension {
                map: self.name.clone(),
                expected: self.domain_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: &DVector<f64>) -> std::result::Result<DVector<f64>, MapError> {
        self.check_input(x)?;
        let y = (self.eval)(x)?;
        if y.len() != self.codomain_dim {
            return Err(MapError::Dimension {
                map: self.name.clone(),
                expected: self.codomain_dim,
                got: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(MapError::NonFinite(self.name.clone()));
        }
        Ok(y)
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> std::result::Result<LinearOperator, MapError> {
        self.check_input(x)?;
        if let Some(origin) = &self.origin_jacobian {
            if x.iter().all(|&v| v == 0.0) {
                return Ok(origin.clone());
            }
        }
        let m = match &self.jacobian {
            Some(jac) => jac(x)?,
            None => central_difference_jacobian(self, x, self.fd_step)?,
        };
        LinearOperator::new(m).map_err(|_| MapError::NonFinite(self.name.clone()))
    }

    /// Maximum of `|dF(x) - dF(x')| / |x - x'|` over random pairs in the
    /// domain ball. A lower bound on the true constant, hence heuristic.
    pub fn estimate_lipschitz(&self, samples: usize, seed: u64) -> Result<f64> {
        if self.domain_dim == 0 {
            return Ok(0.0);
        }
        let radius = if self.domain_radius.is_finite() { self.domain_radius } else { 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best: f64 = 0.0;
        for _ in 0..samples {
            let a = sample_ball(&mut rng, self.domain_dim, radius);
            let b = sample_ball(&mut rng, self.domain_dim, radius);
            let gap = (&a - &b).norm();
            if gap == 0.0 {
                continue;
            }
            let ja = self.jacobian(&a)?;
            let jb = self.jacobian(&b)?;
            let diff = LinearOperator::new(ja.matrix() - jb.matrix())?;
            best = best.max(linops::operator_norm(&diff)? / gap);
        }
        Ok(best)
    }
}

/// Central differences `(F(x + h e_i) - F(x - h e_i)) / 2h`.
pub fn central_difference_jacobian(
    map: &DifferentiableMap,
    x: &DVector<f64>,
    h: f64,
) -> std::result::Result<DMatrix<f64>, MapError> {
    let mut jac = DMatrix::zeros(map.codomain_dim, map.domain_dim);
    let mut probe = x.clone();
    for i in 0..map.domain_dim {
        probe[i] = x[i] + h;
        let plus = map.eval(&probe)?;
        probe[i] = x[i] - h;
        let minus = map.eval(&probe)?;
        probe[i] = x[i];
        jac.set_column(i, &((plus - minus) / (2.0 * h)));
    }
    Ok(jac)
}

/// Uniform sample from the closed ball of the given radius.
pub(crate) fn sample_ball(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> DVector<f64> {
    loop {
        let z = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        let n = z.norm();
        if n > 0.0 && n <= 1.0 {
            return z * radius;
        }
        if dim > 6 {
            // rejection is wasteful in high dimension; rescale a Gaussian-like direction
            let scale: f64 = rng.random_range(0.0f64..1.0).powf(1.0 / dim as f64);
            return z / n * (radius * scale);
        }
    }
}

/// Deterministic low-discrepancy points in the ball of the given radius.
pub(crate) fn halton_ball(count: usize, dim: usize, radius: f64) -> Vec<DVector<f64>> {
    const PRIMES: [u64; 24] =
        [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89];
    let radical_inverse = |mut i: u64, base: u64| {
        let mut f = 1.0;
        let mut r = 0.0;
        while i > 0 {
            f /= base as f64;
            r += f * (i % base) as f64;
            i /= base;
        }
        r
    };
    (1..=count as u64)
        .map(|i| {
            let z = DVector::from_fn(dim, |k, _| 2.0 * radical_inverse(i, PRIMES[k % PRIMES.len()] + 0) - 1.0);
            let n = z.norm();
            if n > 1.0 {
                z / n * radius
            } else {
                z * radius
            }
        })
        .collect()
}

/// Constants certifying the neighbourhood `W` of the fiber theorem.
#[derive(Debug, Clone, PartialEq)]
pub struct IftConstants {
    pub c1: f64,
    pub c2: f64,
    pub cmax: f64,
    /// `δ = min(radius(φ), radius(ψ), 1/(6 C³ L))`.
    pub delta: f64,
    /// `δ / (9 C³)`.
    pub w_radius: f64,
    /// `δ / (162 C⁴)`.
    pub x0_radius: f64,
    pub lipschitz: f64,
    pub lipschitz_heuristic: bool,
    /// `C1` (resp. `C2`) is vacuous when `dφ(0)` (resp. `dψ(0)`) has rank 0:
    /// its image is `{0}` and every constant works, so it contributes 0.
    pub c1_vacuous: bool,
    pub c2_vacuous: bool,
    pub rank_tol: RankTolerance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyOptions {
    pub rank_tol: RankTolerance,
    pub chain_samples: usize,
    pub chain_tol: f64,
    pub exactness_tol: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self { rank_tol: RankTolerance::default(), chain_samples: 100, chain_tol: 1e-8, exactness_tol: 1e-8 }
    }
}

pub fn certify_neighborhood(phi: &DifferentiableMap, psi: &DifferentiableMap) -> Result<IftConstants> {
    certify_neighborhood_with(phi, psi, &CertifyOptions::default())
}

pub fn certify_neighborhood_with(
    phi: &DifferentiableMap,
    psi: &DifferentiableMap,
    opts: &CertifyOptions,
) -> Result<IftConstants> {
    if phi.codomain_dim != psi.domain_dim {
        return Err(IftError::DimensionMismatch(format!(
            "{} lands in dimension {} but {} starts from {}",
            phi.name, phi.codomain_dim, psi.name, psi.domain_dim
        )));
    }
    let x_origin = DVector::zeros(phi.domain_dim);
    let y_origin = DVector::zeros(psi.domain_dim);
    let phi0 = phi.eval(&x_origin)?.norm();
    if phi0 > opts.chain_tol {
        return Err(IftError::OriginNotFixed(phi.name.clone(), phi0));
    }
    let psi0 = psi.eval(&y_origin)?.norm();
    if psi0 > opts.chain_tol {
        return Err(IftError::OriginNotFixed(psi.name.clone(), psi0));
    }

    let dphi0 = phi.jacobian(&x_origin)?;
    let dpsi0 = psi.jacobian(&y_origin)?;
    let phi_dec = SpectralDecomposition::new(&dphi0, &opts.rank_tol);
    let psi_dec = SpectralDecomposition::new(&dpsi0, &opts.rank_tol);

    let sample_radius =
        0.5 * phi.domain_radius.min(psi.domain_radius / phi_dec.sigma_max().max(1.0)).min(1.0);
    for (sample, x) in halton_ball(opts.chain_samples, phi.domain_dim, sample_radius).iter().enumerate() {
        let residual = psi.eval(&phi.eval(x)?)?.norm();
        if residual > opts.chain_tol * x.norm().max(1.0) {
            return Err(IftError::ChainConditionFailed { sample, residual });
        }
    }

    let composite = dpsi0.matrix() * dphi0.matrix();
    let composite_norm = if composite.is_empty() {
        0.0
    } else {
        linops::operator_norm(&LinearOperator::new(composite)?)?
    };
    let scale = 1.0 + phi_dec.sigma_max() * psi_dec.sigma_max();
    if composite_norm > opts.exactness_tol * scale {
        return Err(IftError::ExactnessFailed(format!("|dψ(0) dφ(0)| = {composite_norm:.3e}")));
    }
    if phi_dec.rank() != psi_dec.nullity() {
        return Err(IftError::ExactnessFailed(format!(
            "rank dφ(0) = {} but nullity dψ(0) = {}",
            phi_dec.rank(),
            psi_dec.nullity()
        )));
    }

    let c1 = phi_dec.sigma_min_positive().map_or(0.0, |s| 1.0 / s);
    let c2 = psi_dec.sigma_min_positive().map_or(0.0, |s| 1.0 / s);
    let bounds = linops::BoundConstants::assemble(c1, c2, phi_dec.sigma_max(), psi_dec.sigma_max());
    let cmax = bounds.c;

    let l_phi = phi.deriv_lipschitz.ok_or_else(|| IftError::MissingLipschitz(phi.name.clone()))?;
    let l_psi = psi.deriv_lipschitz.ok_or_else(|| IftError::MissingLipschitz(psi.name.clone()))?;
    let lipschitz = l_phi.max(l_psi);
    let c3 = cmax.powi(3);
    let variation_radius = if lipschitz > 0.0 { 1.0 / (6.0 * c3 * lipschitz) } else { f64::INFINITY };
    let delta = phi.domain_radius.min(psi.domain_radius).min(variation_radius);
    if !delta.is_finite() {
        return Err(IftError::DimensionMismatch(
            "unbounded domains with zero Lipschitz bound: set a domain radius".into(),
        ));
    }
    Ok(IftConstants {
        c1,
        c2,
        cmax,
        delta,
        w_radius: delta / (9.0 * c3),
        x0_radius: delta / (162.0 * c3 * cmax),
        lipschitz,
        lipschitz_heuristic: phi.lipschitz_heuristic || psi.lipschitz_heuristic,
        c1_vacuous: phi_dec.rank() == 0,
        c2_vacuous: psi_dec.rank() == 0,
        rank_tol: opts.rank_tol,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiberOptions {
    /// Stop once `|φ(x) - y| <= tol`; defaults to `1e-10 (1 + |y|)`.
    pub tol: Option<f64>,
    pub fiber_tol: f64,
    pub max_iterations: usize,
    pub patience: usize,
    pub override_radius: bool,
    /// Relative residual allowed when pulling a correction back through `dφ(0)`.
    pub image_tol: f64,
}

impl Default for FiberOptions {
    fn default() -> Self {
        Self {
            tol: None,
            fiber_tol: 1e-8,
            max_iterations: 200,
            patience: 5,
            override_radius: false,
            image_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationTrace {
    pub xs: Vec<DVector<f64>>,
    pub u_norms: Vec<f64>,
    pub v_norms: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl IterationTrace {
    /// First index `n >= 1` where `|u_{n+1}| > |u_n|/2 + slack`, if any.
    pub fn halving_violation(&self, slack: f64) -> Option<usize> {
        (1..self.u_norms.len().saturating_sub(1))
            .find(|&n| self.u_norms[n + 1] > 0.5 * self.u_norms[n] + slack)
    }
}

/// Finds `x` with `φ(x) = y` for `y` in the zero fiber of `ψ`.
pub fn solve_fiber(
    phi: &DifferentiableMap,
    psi: &DifferentiableMap,
    y: &DVector<f64>,
    constants: &IftConstants,
    opts: &FiberOptions,
) -> Result<(DVector<f64>, IterationTrace)> {
    if y.len() != phi.codomain_dim || phi.codomain_dim != psi.domain_dim {
        return Err(IftError::DimensionMismatch(format!(
            "target of length {} for {} -> {}",
            y.len(),
            phi.name,
            psi.name
        )));
    }
    let fiber_residual = psi.eval(y)?.norm();
    if fiber_residual > opts.fiber_tol {
        return Err(IftError::NotInFiber { residual: fiber_residual });
    }
    let y_norm = y.norm();
    if !opts.override_radius && y_norm >= constants.w_radius {
        return Err(IftError::OutsideCertifiedRadius { norm: y_norm, radius: constants.w_radius });
    }
    let tol = opts.tol.unwrap_or(1e-10 * (1.0 + y_norm));

    let dphi0 = phi.jacobian(&DVector::zeros(phi.domain_dim))?;
    let dpsi0 = psi.jacobian(&DVector::zeros(psi.domain_dim))?;
    let sigma = SpectralDecomposition::new(&dphi0, &constants.rank_tol);
    let tau = SpectralDecomposition::new(&dpsi0, &constants.rank_tol);

    let mut trace = IterationTrace::default();
    let mut x = DVector::zeros(phi.domain_dim);
    let mut stalled = 0;
    for n in 0..=opts.max_iterations {
        let u = phi.eval(&x)? - y;
        let u_norm = u.norm();
        trace.xs.push(x.clone());
        trace.u_norms.push(u_norm);
        trace.iterations = n;
        if !u_norm.is_finite() {
            return Err(IftError::Diverged { iteration: n, u_norm });
        }
        if u_norm <= tol {
            trace.converged = true;
            return Ok((x, trace));
        }
        if n > 0 {
            let prev = trace.u_norms[n - 1];
            if u_norm > 0.9 * prev {
                stalled += 1;
                if stalled >= opts.patience {
                    return Err(IftError::Diverged { iteration: n, u_norm });
                }
            } else {
                stalled = 0;
            }
        }
        if n == opts.max_iterations {
            break;
        }
        let projected = &u - tau.pseudo_solve(&dpsi0.apply(&u));
        let v = linops::preimage_checked(&dphi0, &sigma, &projected, opts.image_tol, u_norm)?;
        trace.v_norms.push(v.norm());
        x -= v;
    }
    Err(IftError::MaxIterations(opts.max_iterations))
}

/// Bi-Lipschitz constants `c |x-y| <= |f(x)-f(y)| <= C |x-y|` on a ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuasiIsometry {
    pub lower: f64,
    pub upper: f64,
    pub ball_radius: f64,
}

/// With `r = σ_min(df(0))`: `c = r/4`, `C = |df(0)| + r/4`, and the ball is
/// small enough that `|df(p) - df(0)| <= r/4` on it.
pub fn quasi_isometry_constants(f: &DifferentiableMap) -> Result<QuasiIsometry> {
    let df0 = f.jacobian(&DVector::zeros(f.domain_dim))?;
    let dec = SpectralDecomposition::new(&df0, &RankTolerance::default());
    let r = dec.sigma_min();
    if r == 0.0 || dec.rank() < f.domain_dim {
        return Err(IftError::NotEmbedding(f.name.clone()));
    }
    let lipschitz = f.deriv_lipschitz.ok_or_else(|| IftError::MissingLipschitz(f.name.clone()))?;
    let variation = if lipschitz > 0.0 { r / (4.0 * lipschitz) } else { f64::INFINITY };
    Ok(QuasiIsometry { lower: r / 4.0, upper: dec.sigma_max() + r / 4.0, ball_radius: f.domain_radius.min(variation) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub x_prime: DVector<f64>,
    /// `dφ₁(x')⁻¹ ∘ dφ₂(x)`.
    pub differential: LinearOperator,
    pub trace: IterationTrace,
}

/// Chart change `φ₁⁻¹ ∘ φ₂` at `x`, with its differential.
pub fn transition_map(
    phi1: &DifferentiableMap,
    phi2: &DifferentiableMap,
    psi: &DifferentiableMap,
    x: &DVector<f64>,
    constants: &IftConstants,
    opts: &FiberOptions,
) -> Result<Transition> {
    let y = phi2.eval(x)?;
    if !opts.override_radius && y.norm() >= constants.w_radius {
        return Err(IftError::OutOfChart(format!(
            "|{}(x)| = {:.6e} >= {:.6e}",
            phi2.name,
            y.norm(),
            constants.w_radius
        )));
    }
    let (x_prime, trace) = solve_fiber(phi1, psi, &y, constants, opts)?;
    let differential = inverse_compose(&phi1.jacobian(&x_prime)?, &phi2.jacobian(x)?, 1e-6)?;
    Ok(Transition { x_prime, differential, trace })
}

/// Recentres a chart pair at `u`: `φ_u(x) = φ(u + x) - φ(u)` and
/// `ψ_u(y) = ψ(φ(u) + y)`, so the theorem can be applied around any point of
/// the fiber.
pub fn recenter(
    phi: &DifferentiableMap,
    psi: &DifferentiableMap,
    u: &DVector<f64>,
) -> Result<(DifferentiableMap, DifferentiableMap)> {
    let base = phi.eval(u)?;
    let (phi_c, psi_c) = (phi.clone(), psi.clone());
    let (u_c, base_c) = (u.clone(), base.clone());
    let mut phi_u = DifferentiableMap::new(format!("{}@u", phi.name), phi.domain_dim, phi.codomain_dim, move |x| {
        Ok(phi_c.eval(&(&u_c + x))? - &base_c)
    })
    .with_fd_step(phi.fd_step)
    .with_domain_radius((phi.domain_radius - u.norm()).max(f64::MIN_POSITIVE));
    let (phi_j, u_j) = (phi.clone(), u.clone());
    phi_u = phi_u.with_jacobian(move |x| Ok(phi_j.jacobian(&(&u_j + x))?.into_matrix()));
    let base_j = base.clone();
    let mut psi_u = DifferentiableMap::new(format!("{}@φ(u)", psi.name), psi.domain_dim, psi.codomain_dim, move |y| {
        psi_c.eval(&(&base + y))
    })
    .with_fd_step(psi.fd_step)
    .with_domain_radius((psi.domain_radius - base_j.norm()).max(f64::MIN_POSITIVE));
    let psi_j = psi.clone();
    psi_u = psi_u.with_jacobian(move |y| Ok(psi_j.jacobian(&(&base_j + y))?.into_matrix()));
    if let Some(l) = phi.deriv_lipschitz {
        phi_u.deriv_lipschitz = Some(l);
        phi_u.lipschitz_heuristic = phi.lipschitz_heuristic;
    }
    if let Some(l) = psi.deriv_lipschitz {
        psi_u.deriv_lipschitz = Some(l);
        psi_u.lipschitz_heuristic = psi.lipschitz_heuristic;
    }
    Ok((phi_u, psi_u))
}

/// The linear chart `x ↦ Kx` onto `ker dψ(0)`, with `K` an orthonormal
/// kernel basis. When `ψ` vanishes on that kernel this is a valid `φ` and the
/// zero set of `ψ` near 0 is the kernel itself.
pub fn kernel_inclusion(psi: &DifferentiableMap, rank_tol: &RankTolerance) -> Result<DifferentiableMap> {
    let dpsi0 = psi.jacobian(&DVector::zeros(psi.domain_dim))?;
    let basis = linops::null_space(&dpsi0, rank_tol);
    let k = basis.ncols();
    let jac = basis.clone();
    Ok(DifferentiableMap::new(format!("ker d{}(0)", psi.name), k, psi.domain_dim, move |x| Ok(&basis * x))
        .with_jacobian(move |_| Ok(jac.clone()))
        .with_lipschitz(0.0)
        .with_domain_radius(psi.domain_radius))
}

#[cfg(test)]
mod tests {
    use super::charts::*;
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn parabola_constants() {
        let c = certify_neighborhood(&parabola(), &parabola_constraint()).unwrap();
        assert_eq!(c.cmax, 1.0);
        assert_eq!(c.delta, 1.0 / 12.0);
        assert_eq!(c.w_radius, c.delta / 9.0);
        assert_eq!(c.x0_radius, c.delta / 162.0);
    }

    #[test]
    fn scaled_parabola_constants() {
        let c = certify_neighborhood(&scaled_parabola(), &parabola_constraint()).unwrap();
        assert!((c.c1 - 2.0).abs() < 1e-15);
        assert!((c.cmax - 2.0).abs() < 1e-15);
    }

    #[test]
    fn linear_maps_use_domain_radii() {
        let phi = DifferentiableMap::new("incl", 1, 2, |x| Ok(v(&[x[0], 0.0])))
            .with_lipschitz(0.0)
            .with_domain_radius(0.3);
        let psi = DifferentiableMap::new("proj", 2, 1, |y| Ok(v(&[y[1]])))
            .with_lipschitz(0.0)
            .with_domain_radius(0.7);
        let c = certify_neighborhood(&phi, &psi).unwrap();
        assert_eq!(c.delta, 0.3);
    }

    #[test]
    fn chain_condition_failure_is_reported() {
        let phi = parabola();
        let psi = DifferentiableMap::new("bad", 2, 1, |y| Ok(v(&[y[1] - 2.0 * y[0] * y[0]])))
            .with_lipschitz(4.0)
            .with_domain_radius(1.0);
        assert!(matches!(certify_neighborhood(&phi, &psi), Err(IftError::ChainConditionFailed { .. })));
    }

    #[test]
    fn exactness_failure_is_reported() {
        // dφ(0) = 0 while ker dψ(0) is one-dimensional.
        let phi = DifferentiableMap::new("cubic", 1, 2, |x| Ok(v(&[x[0].powi(3), 0.0])))
            .with_jacobian(|x| Ok(DMatrix::from_column_slice(2, 1, &[3.0 * x[0] * x[0], 0.0])))
            .with_lipschitz(6.0)
            .with_domain_radius(1.0);
        let psi = DifferentiableMap::new("second", 2, 1, |y| Ok(v(&[y[1]])))
            .with_lipschitz(0.0)
            .with_domain_radius(1.0);
        assert!(matches!(certify_neighborhood(&phi, &psi), Err(IftError::ExactnessFailed(_))));
    }

    #[test]
    fn missing_lipschitz_is_reported() {
        let phi = DifferentiableMap::new("x", 1, 1, |x| Ok(x.clone())).with_domain_radius(1.0);
        let psi = DifferentiableMap::new("zero", 1, 0, |_| Ok(DVector::zeros(0))).with_lipschitz(0.0);
        assert!(matches!(certify_neighborhood(&phi, &psi), Err(IftError::MissingLipschitz(_))));
    }

    #[test]
    fn zero_target_needs_no_correction() {
        let (phi, psi) = (parabola(), parabola_constraint());
        let c = certify_neighborhood(&phi, &psi).unwrap();
        let (x, trace) = solve_fiber(&phi, &psi, &v(&[0.0, 0.0]), &c, &FiberOptions::default()).unwrap();
        assert_eq!(x, v(&[0.0]));
        assert!(trace.converged);
        assert!(trace.iterations <= 1);
    }

    #[test]
    fn parabola_fiber_recovers_parameter() {
        let (phi, psi) = (parabola(), parabola_constraint());
        let c = certify_neighborhood(&phi, &psi).unwrap();
        let a = 0.01;
        let opts = FiberOptions { override_radius: true, ..Default::default() };
        let (x, trace) = solve_fiber(&phi, &psi, &v(&[a, a * a]), &c, &opts).unwrap();
        assert!((x[0] - a).abs() <= 1e-10);
        assert_eq!(trace.halving_violation(1e-12), None);
    }

    #[test]
    fn circle_fiber_matches_atan2() {
        let (phi, psi) = (circle(), circle_constraint());
        let c = certify_neighborhood(&phi, &psi).unwrap();
        let t: f64 = 0.02;
        let y = v(&[t.sin(), t.cos() - 1.0]);
        let opts = FiberOptions { override_radius: true, ..Default::default() };
        let (x, _) = solve_fiber(&phi, &psi, &y, &c, &opts).unwrap();
        let expected = y[0].atan2(y[1] + 1.0);
        assert!((x[0] - expected).abs() <= 1e-9);
        assert!((x[0] - t).abs() <= 1e-9);
    }

    #[test]
    fn solve_fiber_preconditions() {
        let (phi, psi) = (parabola(), parabola_constraint());
        let c = certify_neighborhood(&phi, &psi).unwrap();
        let off_fiber = v(&[0.001, 0.5]);
        assert!(matches!(
            solve_fiber(&phi, &psi, &off_fiber, &c, &FiberOptions::default()),
            Err(IftError::NotInFiber { .. })
        ));
        let far = v(&[0.5, 0.25]);
        assert!(matches!(
            solve_fiber(&phi, &psi, &far, &c, &FiberOptions::default()),
            Err(IftError::OutsideCertifiedRadius { .. })
        ));
    }

    #[test]
    fn far_targets_fail_gracefully() {
        // On the circle the chart x ↦ (sin x, cos x - 1) cannot reach the
        // antipode; the chord iteration stalls and must abort.
        let (phi, psi) = (circle(), circle_constraint());
        let c = certify_neighborhood(&phi, &psi).unwrap();
        let y = v(&[0.0, -2.0]);
        let opts = FiberOptions { override_radius: true, ..Default::default() };
        let err = solve_fiber(&phi, &psi, &y, &c, &opts).unwrap_err();
        assert!(
            matches!(err, IftError::Diverged { .. } | IftError::MaxIterations(_) | IftError::Linops(_)),
            "{err:?}"
        );
    }

    #[test]
    fn quasi_isometry_examples() {
        let iso = DifferentiableMap::new("rot", 2, 2, |x| Ok(v(&[-x[1], x[0]]))).with_lipschitz(0.0);
        let q = quasi_isometry_constants(&iso).unwrap();
        assert!((q.lower - 0.25).abs() < 1e-15 && (q.upper - 1.25).abs() < 1e-15);

        let double = DifferentiableMap::new("2x", 1, 1, |x| Ok(x * 2.0)).with_lipschitz(0.0);
        let q = quasi_isometry_constants(&double).unwrap();
        assert!((q.lower - 0.5).abs() < 1e-15 && (q.upper - 2.5).abs() < 1e-15);

        let q = quasi_isometry_constants(&parabola()).unwrap();
        assert_eq!((q.lower, q.upper, q.ball_radius), (0.25, 1.25, 0.125));

        let flat = DifferentiableMap::new("x^3", 1, 1, |x| Ok(x.map(|t| t.powi(3))))
            .with_jacobian(|x| Ok(DMatrix::from_element(1, 1, 3.0 * x[0] * x[0])))
            .with_lipschitz(6.0);
        assert!(matches!(quasi_isometry_constants(&flat), Err(IftError::NotEmbedding(_))));
    }

    #[test]
    fn quasi_isometry_holds_on_sampled_pairs() {
        let f = parabola();
        let q = quasi_isometry_constants(&f).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..2000 {
            let a = sample_ball(&mut rng, 1, q.ball_radius);
            let b = sample_ball(&mut rng, 1, q.ball_radius);
            let d = (&a - &b).norm();
            let fd = (f.eval(&a).unwrap() - f.eval(&b).unwrap()).norm();
            assert!(q.lower * d <= fd + 1e-15 && fd <= q.upper * d + 1e-15);
        }
    }

    #[test]
    fn identical_charts_transition_trivially() {
        let (phi, psi) = (parabola(), parabola_constraint());
        let c = certify_neighborhood(&phi, &psi).unwrap();
        let x = v(&[0.003]);
        let t = transition_map(&phi, &phi, &psi, &x, &c, &FiberOptions::default()).unwrap();
        assert!((t.x_prime[0] - 0.003).abs() < 1e-14);
        assert!((t.differential.matrix()[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parabola_transition_doubles() {
        let (phi1, phi2, psi) = (parabola(), doubled_parabola(), parabola_constraint());
        let c = certify_neighborhood(&phi1, &psi).unwrap();
        let x = v(&[0.002]);
        let t = transition_map(&phi1, &phi2, &psi, &x, &c, &FiberOptions::default()).unwrap();
        assert!((t.x_prime[0] - 0.004).abs() < 1e-13);
        assert!((t.differential.matrix()[(0, 0)] - 2.0).abs() < 1e-9);

        // finite differences of the computed transition
        let h = 1e-5;
        let opts = FiberOptions { tol: Some(1e-15), ..Default::default() };
        let at = |s: f64| transition_map(&phi1, &phi2, &psi, &v(&[s]), &c, &opts).unwrap().x_prime[0];
        let fd = (at(0.002 + h) - at(0.002 - h)) / (2.0 * h);
        assert!((fd - t.differential.matrix()[(0, 0)]).abs() < 1e-6);
    }

    #[test]
    fn transition_out_of_chart() {
        let (phi1, phi2, psi) = (parabola(), doubled_parabola(), parabola_constraint());
        let c = certify_neighborhood(&phi1, &psi).unwrap();
        let err = transition_map(&phi1, &phi2, &psi, &v(&[0.1]), &c, &FiberOptions::default());
        assert!(matches!(err, Err(IftError::OutOfChart(_))));
    }

    #[test]
    fn recentered_pair_is_certifiable() {
        let (phi, psi) = (parabola(), parabola_constraint());
        let (phi_u, psi_u) = recenter(&phi, &psi, &v(&[0.05])).unwrap();
        let c = certify_neighborhood(&phi_u, &psi_u).unwrap();
        let target = phi.eval(&v(&[0.0505])).unwrap() - phi.eval(&v(&[0.05])).unwrap();
        let opts = FiberOptions { override_radius: true, ..Default::default() };
        let (x, _) = solve_fiber(&phi_u, &psi_u, &target, &c, &opts).unwrap();
        assert!((x[0] - 0.0005).abs() < 1e-10);
    }

    #[test]
    fn kernel_slice_chart() {
        // ψ(y) = y₂ (1 + y₁²) vanishes exactly on the kernel {y₂ = 0}.
        let psi = DifferentiableMap::new("slice", 2, 1, |y| Ok(v(&[y[1] * (1.0 + y[0] * y[0])])))
            .with_lipschitz(4.0)
            .with_domain_radius(1.0);
        let phi = kernel_inclusion(&psi, &RankTolerance::default()).unwrap();
        let c = certify_neighborhood(&phi, &psi).unwrap();
        let y = v(&[c.w_radius * 0.5, 0.0]);
        let (x, _) = solve_fiber(&phi, &psi, &y, &c, &FiberOptions::default()).unwrap();
        assert!((phi.eval(&x).unwrap() - y).norm() < 1e-12);
    }

    #[test]
    fn lipschitz_estimate_is_close_for_parabola() {
        let est = parabola().estimate_lipschitz(500, 1).unwrap();
        assert!(est <= 2.0 + 1e-9 && est > 1.5, "{est}");
    }

    #[test]
    fn halton_points_stay_in_ball() {
        for p in halton_ball(100, 3, 0.2) {
            assert!(p.norm() <= 0.2 + 1e-15);
        }
    }
}
