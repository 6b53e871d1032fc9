//! Local rigidity of a representation `r: Γ → G`.
//!
//! The maps
//!
//! ```text
//! φ(g)(s) = g r(s) g⁻¹ r(s)⁻¹                  G → Map(S, G)
//! ψ(α)(t) = Π_j (α(s_j) r(s_j))^{ε_j}          Map(S, G) → Map(T', G)
//! ```
//!
//! are written in exponential coordinates around the identity tuples, so
//! that `dφ(0) = δ⁰` and `dψ(0) = δ¹_{T'}`. When `H¹ = 0` the fiber solver
//! applied to `α(s) = r'(s) r(s)⁻¹` recovers a conjugator from a nearby
//! homomorphism `r'` back to `r`.

pub mod fixtures;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cohomology::{self, CoboundaryPair, CohomologyError, GammaModule};
use crate::ift::{
    self, central_difference_jacobian, certify_neighborhood_with, CertifyOptions, DifferentiableMap, FiberOptions,
    IftConstants, IftError, IterationTrace, MapError,
};
use crate::liegroup::{exp, exp_frechet, log_frechet, log_matrix, GroupElement, LieError, Representation};
use crate::linops::{LinearOperator, RankTolerance};

pub const DEFAULT_CHART_RADIUS: f64 = 0.05;
pub const DEFAULT_DIFFERENTIAL_TOL: f64 = 1e-6;
pub const DEFAULT_CHAIN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RigidityError {
    #[error(transparent)]
    Cohomology(#[from] CohomologyError),
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error(transparent)]
    Ift(#[from] IftError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("finite-difference Jacobian of {map} differs from the coboundary by {residual:.3e}")]
    DifferentialMismatch { map: &'static str, residual: f64 },
    #[error("ψ∘φ is not trivial: residual {residual:.3e}")]
    ChainCondition { residual: f64 },
    #[error("representation is not locally rigid (dim H¹ = {0})")]
    NotRigid(usize),
    #[error("representations differ in {0}")]
    Incompatible(&'static str),
    #[error("perturbation is outside the neighbourhood: {0}")]
    NotInNeighborhood(String),
    #[error("conjugation residual {residual:.3e} exceeds {tol:.3e}")]
    ResidualTooLarge { residual: f64, tol: f64 },
}

pub type Result<T> = std::result::Result<T, RigidityError>;

/// A point of `Map(S, G)`: one group element per generator.
#[derive(Debug, Clone, PartialEq)]
pub struct RepPoint {
    pub elements: Vec<GroupElement>,
}

impl RepPoint {
    /// `α(s) = r'(s) r(s)⁻¹`.
    pub fn difference(rep: &Representation, rep_prime: &Representation) -> Result<Self> {
        check_compatible(rep, rep_prime)?;
        let elements = rep_prime
            .images()
            .iter()
            .zip(rep.images())
            .map(|(p, r)| p.mul(&r.inverse()))
            .collect();
        Ok(Self { elements })
    }

    /// Stacked log coordinates in the algebra basis of `rep`'s group.
    pub fn log_coordinates(&self, rep: &Representation) -> Result<DVector<f64>> {
        let basis = rep.group().basis();
        let d = basis.dim();
        let mut out = DVector::zeros(self.elements.len() * d);
        for (i, g) in self.elements.iter().enumerate() {
            let x = log_matrix(g.matrix())?;
            out.rows_mut(i * d, d).copy_from(&basis.coordinates(&x));
        }
        Ok(out)
    }
}

fn check_compatible(rep: &Representation, rep_prime: &Representation) -> Result<()> {
    if rep.presentation() != rep_prime.presentation() {
        return Err(RigidityError::Incompatible("presentation"));
    }
    if rep.group() != rep_prime.group() {
        return Err(RigidityError::Incompatible("group"));
    }
    Ok(())
}

fn out_of_chart(e: LieError) -> MapError {
    MapError::OutOfDomain(e.to_string())
}

/// `ξ ↦ log φ(exp ξ)` from algebra coordinates to stacked log coordinates.
pub fn build_phi(rep: &Representation) -> DifferentiableMap {
    let basis = rep.group().basis().clone();
    let d = basis.dim();
    let k = rep.presentation().num_generators();
    let r: Vec<DMatrix<f64>> = rep.images().iter().map(|g| g.matrix().clone()).collect();
    let r_inv: Vec<DMatrix<f64>> = rep.images().iter().map(|g| g.inverse().into_matrix()).collect();

    let (basis_e, r_e, r_inv_e) = (basis.clone(), r.clone(), r_inv.clone());
    let eval = move |xi: &DVector<f64>| {
        let x = basis_e.to_matrix(xi);
        let g = x.exp();
        let g_inv = (-&x).exp();
        let mut out = DVector::zeros(k * d);
        for s in 0..k {
            let m = &g * &r_e[s] * &g_inv * &r_inv_e[s];
            let l = log_matrix(&m).map_err(out_of_chart)?;
            out.rows_mut(s * d, d).copy_from(&basis_e.coordinates(&l));
        }
        Ok(out)
    };
    let jacobian = move |xi: &DVector<f64>| {
        let x = basis.to_matrix(xi);
        let g = x.exp();
        let g_inv = (-&x).exp();
        let dg: Vec<DMatrix<f64>> = basis.elements().iter().map(|b| exp_frechet(&x, b)).collect();
        let dg_inv: Vec<DMatrix<f64>> = basis.elements().iter().map(|b| exp_frechet(&-&x, &-b)).collect();
        let mut jac = DMatrix::zeros(k * d, d);
        for s in 0..k {
            let m = &g * &r[s] * &g_inv * &r_inv[s];
            for c in 0..d {
                let dm = &dg[c] * &r[s] * &g_inv * &r_inv[s] + &g * &r[s] * &dg_inv[c] * &r_inv[s];
                let dl = log_frechet(&m, &dm).map_err(out_of_chart)?;
                jac.view_mut((s * d, c), (d, 1)).copy_from(&basis.coordinates(&dl));
            }
        }
        Ok(jac)
    };
    DifferentiableMap::new("φ", d, k * d, eval).with_jacobian(jacobian)
}

/// `c ↦ log ψ(exp c)` on stacked log coordinates, for the relators in `subset`.
pub fn build_psi(rep: &Representation, subset: &[usize]) -> DifferentiableMap {
    let basis = rep.group().basis().clone();
    let d = basis.dim();
    let k = rep.presentation().num_generators();
    let relators: Vec<Vec<(usize, i8)>> = subset
        .iter()
        .map(|&t| rep.presentation().relators()[t].letters().iter().map(|l| (l.generator, l.sign)).collect())
        .collect();
    let n = rep.dimension();
    let r: Vec<DMatrix<f64>> = rep.images().iter().map(|g| g.matrix().clone()).collect();
    let r_inv: Vec<DMatrix<f64>> = rep.images().iter().map(|g| g.inverse().into_matrix()).collect();
    let rows = relators.len() * d;

    // α(s) r(s) and its inverse r(s)⁻¹ α(s)⁻¹
    let factors = {
        let (basis, r, r_inv) = (basis.clone(), r.clone(), r_inv.clone());
        move |c: &DVector<f64>| -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
            let xs: Vec<DMatrix<f64>> = (0..k).map(|s| basis.to_matrix(&c.rows(s * d, d).into_owned())).collect();
            let fwd = (0..k).map(|s| xs[s].exp() * &r[s]).collect();
            let bwd = (0..k).map(|s| &r_inv[s] * (-&xs[s]).exp()).collect();
            (xs, fwd, bwd)
        }
    };

    let (basis_e, relators_e, factors_e) = (basis.clone(), relators.clone(), factors.clone());
    let eval = move |c: &DVector<f64>| {
        let (_, fwd, bwd) = factors_e(c);
        let mut out = DVector::zeros(rows);
        for (row, letters) in relators_e.iter().enumerate() {
            let q = letters.iter().fold(DMatrix::identity(n, n), |acc, &(s, e)| {
                acc * if e > 0 { &fwd[s] } else { &bwd[s] }
            });
            let l = log_matrix(&q).map_err(out_of_chart)?;
            out.rows_mut(row * d, d).copy_from(&basis_e.coordinates(&l));
        }
        Ok(out)
    };
    let jacobian = move |c: &DVector<f64>| {
        let (xs, fwd, bwd) = factors(c);
        // derivatives of α(s) r(s) and r(s)⁻¹ α(s)⁻¹ along each basis direction
        let d_fwd: Vec<Vec<DMatrix<f64>>> = (0..k)
            .map(|s| basis.elements().iter().map(|b| exp_frechet(&xs[s], b) * &r[s]).collect())
            .collect();
        let d_bwd: Vec<Vec<DMatrix<f64>>> = (0..k)
            .map(|s| basis.elements().iter().map(|b| &r_inv[s] * exp_frechet(&-&xs[s], &-b)).collect())
            .collect();
        let mut jac = DMatrix::zeros(rows, k * d);
        for (row, letters) in relators.iter().enumerate() {
            let pick = |&(s, e): &(usize, i8)| if e > 0 { &fwd[s] } else { &bwd[s] };
            let m = letters.len();
            let mut prefix = Vec::with_capacity(m + 1);
            prefix.push(DMatrix::<f64>::identity(n, n));
            for l in letters {
                let next = prefix.last().unwrap() * pick(l);
                prefix.push(next);
            }
            let mut suffix = vec![DMatrix::<f64>::identity(n, n); m + 1];
            for j in (0..m).rev() {
                suffix[j] = pick(&letters[j]) * &suffix[j + 1];
            }
            let q = &prefix[m];
            let mut dq = vec![DMatrix::<f64>::zeros(n, n); k * d];
            for (j, &(s, e)) in letters.iter().enumerate() {
                for c in 0..d {
                    let df = if e > 0 { &d_fwd[s][c] } else { &d_bwd[s][c] };
                    dq[s * d + c] += &prefix[j] * df * &suffix[j + 1];
                }
            }
            for (col, dqc) in dq.iter().enumerate() {
                let dl = log_frechet(q, dqc).map_err(out_of_chart)?;
                jac.view_mut((row * d, col), (d, 1)).copy_from(&basis.coordinates(&dl));
            }
        }
        Ok(jac)
    };
    DifferentiableMap::new("ψ", k * d, rows, eval).with_jacobian(jacobian)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigidityOptions {
    pub rank_tol: RankTolerance,
    pub fd_step: f64,
    pub differential_tol: f64,
    pub chain_tol: f64,
    pub chain_samples: usize,
    pub chart_radius: f64,
    pub lipschitz_samples: usize,
    pub seed: u64,
    /// Compute the certified neighbourhood when the verdict is rigid.
    pub certify: bool,
}

impl Default for RigidityOptions {
    fn default() -> Self {
        Self {
            rank_tol: RankTolerance::default(),
            fd_step: ift::DEFAULT_FD_STEP,
            differential_tol: DEFAULT_DIFFERENTIAL_TOL,
            chain_tol: DEFAULT_CHAIN_TOL,
            chain_samples: 20,
            chart_radius: DEFAULT_CHART_RADIUS,
            lipschitz_samples: ift::DEFAULT_LIPSCHITZ_SAMPLES,
            seed: 0,
            certify: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigidityReport {
    pub num_generators: usize,
    pub num_relators: usize,
    pub module_dim: usize,
    pub relator_subset: Vec<usize>,
    pub rank_d0: usize,
    pub rank_d1: usize,
    pub nullity_d1: usize,
    pub h1_dim: usize,
    pub rigid: bool,
    pub complex_defect: f64,
    /// Largest entrywise gap between finite differences and `δ⁰`, `δ¹_{T'}`.
    pub differential_residuals: [f64; 2],
    pub chain_residual: f64,
    /// In finite dimensions every linear map has closed image.
    pub closed_image_automatic: bool,
    pub certified_radius: Option<f64>,
    pub certification_note: Option<String>,
    pub warnings: Vec<String>,
    pub conjugator: Option<GroupElement>,
    pub conjugation_residual: Option<f64>,
}

/// The rigidity maps with their certificate data attached.
#[derive(Debug, Clone)]
pub struct RigidityCharts {
    pub phi: DifferentiableMap,
    pub psi: DifferentiableMap,
    pub complex: CoboundaryPair,
    pub rank_tol: RankTolerance,
}

impl RigidityCharts {
    pub fn new(rep: &Representation, opts: &RigidityOptions) -> Result<Self> {
        let module = GammaModule::from_representation(rep)?;
        let complex = cohomology::assemble(&module, rep.presentation(), &opts.rank_tol)?;
        let phi = build_phi(rep)
            .with_origin_jacobian(complex.d0.clone())
            .with_fd_step(opts.fd_step)
            .with_domain_radius(opts.chart_radius);
        let psi = build_psi(rep, &complex.relator_subset)
            .with_origin_jacobian(complex.d1.clone())
            .with_fd_step(opts.fd_step)
            .with_domain_radius(opts.chart_radius);
        let rank_tol = opts.rank_tol.with_reference_scale(complex.d0_scale.max(complex.d1_scale));
        Ok(Self { phi, psi, complex, rank_tol })
    }

    /// Attaches sampled Lipschitz bounds and certifies the neighbourhood.
    pub fn certify(&mut self, opts: &RigidityOptions) -> Result<IftConstants> {
        self.phi = self.phi.clone().with_estimated_lipschitz(opts.lipschitz_samples, opts.seed)?;
        self.psi = self.psi.clone().with_estimated_lipschitz(opts.lipschitz_samples, opts.seed.wrapping_add(1))?;
        let certify_opts = CertifyOptions { rank_tol: self.rank_tol, ..CertifyOptions::default() };
        Ok(certify_neighborhood_with(&self.phi, &self.psi, &certify_opts)?)
    }
}

fn max_entry_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Computes `H¹`, validates the differentials of the rigidity maps and
/// issues the verdict.
pub fn check_local_rigidity(rep: &Representation, opts: &RigidityOptions) -> Result<RigidityReport> {
    let mut charts = RigidityCharts::new(rep, opts)?;
    let (h1_dim, details) = charts.complex.h1(&opts.rank_tol)?;

    let x0 = DVector::zeros(charts.phi.domain_dim());
    let y0 = DVector::zeros(charts.psi.domain_dim());
    let fd_phi = central_difference_jacobian(&charts.phi, &x0, opts.fd_step)?;
    let fd_psi = central_difference_jacobian(&charts.psi, &y0, opts.fd_step)?;
    let residuals = [max_entry_gap(&fd_phi, charts.complex.d0.matrix()), max_entry_gap(&fd_psi, charts.complex.d1.matrix())];
    for (map, residual) in ["φ", "ψ"].into_iter().zip(residuals) {
        if !(residual <= opts.differential_tol) {
            return Err(RigidityError::DifferentialMismatch { map, residual });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut chain_residual: f64 = 0.0;
    for _ in 0..opts.chain_samples {
        let xi = DVector::from_fn(charts.phi.domain_dim(), |_, _| rng.random_range(-1.0..1.0));
        let norm = xi.norm();
        if norm == 0.0 {
            continue;
        }
        let xi = xi * (1e-2 * rng.random_range(0.0..1.0) / norm);
        chain_residual = chain_residual.max(charts.psi.eval(&charts.phi.eval(&xi)?)?.norm());
    }
    if chain_residual > opts.chain_tol * charts.complex.d1_scale.max(1.0) {
        return Err(RigidityError::ChainCondition { residual: chain_residual });
    }

    let rigid = h1_dim == 0;
    let (mut certified_radius, mut certification_note) = (None, None);
    if rigid && opts.certify {
        match charts.certify(opts) {
            Ok(c) => certified_radius = Some(c.w_radius),
            Err(e) => certification_note = Some(e.to_string()),
        }
    }
    Ok(RigidityReport {
        num_generators: rep.presentation().num_generators(),
        num_relators: rep.presentation().relators().len(),
        module_dim: rep.group().dim(),
        relator_subset: charts.complex.relator_subset.clone(),
        rank_d0: details.d0.rank,
        rank_d1: details.d1.rank,
        nullity_d1: details.d1.nullity,
        h1_dim,
        rigid,
        complex_defect: details.complex_defect,
        differential_residuals: residuals,
        chain_residual,
        closed_image_automatic: true,
        certified_radius,
        certification_note,
        warnings: details.warnings,
        conjugator: None,
        conjugation_residual: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoverOptions {
    pub tol: f64,
    pub override_radius: bool,
    pub rigidity: RigidityOptions,
    pub fiber: FiberOptions,
}

impl Default for RecoverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            override_radius: false,
            rigidity: RigidityOptions::default(),
            fiber: FiberOptions { fiber_tol: 1e-8, ..FiberOptions::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conjugator {
    pub g: GroupElement,
    /// `max_s |g r(s) g⁻¹ - r'(s)|`.
    pub residual: f64,
    pub xi: DVector<f64>,
    pub target_norm: f64,
    pub w_radius: f64,
    pub inside_certified: bool,
    pub trace: IterationTrace,
}

/// `max_s |g r(s) g⁻¹ - r'(s)|` in the spectral norm.
pub fn conjugation_residual(g: &GroupElement, rep: &Representation, rep_prime: &Representation) -> f64 {
    let g_inv = g.inverse();
    rep.images()
        .iter()
        .zip(rep_prime.images())
        .map(|(r, p)| {
            let diff = g.mul(r).mul(&g_inv).into_matrix() - p.matrix();
            diff.svd(false, false).singular_values.max()
        })
        .fold(0.0, f64::max)
}

/// Finds `g` with `g r(s) g⁻¹ = r'(s)` for every generator, by solving
/// `φ(ξ) = log α_{r'}` and setting `g = exp ξ`.
pub fn recover_conjugator(rep: &Representation, rep_prime: &Representation, opts: &RecoverOptions) -> Result<Conjugator> {
    check_compatible(rep, rep_prime)?;
    let mut charts = RigidityCharts::new(rep, &opts.rigidity)?;
    let (h1_dim, _) = charts.complex.h1(&opts.rigidity.rank_tol)?;
    if h1_dim != 0 {
        return Err(RigidityError::NotRigid(h1_dim));
    }
    let constants = charts.certify(&opts.rigidity)?;
    let alpha = RepPoint::difference(rep, rep_prime)?;
    let y = alpha
        .log_coordinates(rep)
        .map_err(|e| RigidityError::NotInNeighborhood(e.to_string()))?;
    let target_norm = y.norm();
    let inside_certified = target_norm < constants.w_radius;
    if !inside_certified && !opts.override_radius {
        return Err(RigidityError::NotInNeighborhood(format!(
            "|log α| = {target_norm:.6e} >= certified radius {:.6e}",
            constants.w_radius
        )));
    }
    let fiber = FiberOptions { override_radius: true, ..opts.fiber.clone() };
    let (xi, trace) = ift::solve_fiber(&charts.phi, &charts.psi, &y, &constants, &fiber)?;
    let g = exp(&rep.group().basis().to_matrix(&xi));
    let residual = conjugation_residual(&g, rep, rep_prime);
    if !(residual <= opts.tol) {
        return Err(RigidityError::ResidualTooLarge { residual, tol: opts.tol });
    }
    Ok(Conjugator { g, residual, xi, target_norm, w_radius: constants.w_radius, inside_certified, trace })
}

/// Runs the rigidity check and, when a perturbation is supplied and the
/// verdict is rigid, attaches the recovered conjugator.
pub fn rigidity_report(
    rep: &Representation,
    rep_prime: Option<&Representation>,
    opts: &RecoverOptions,
) -> Result<RigidityReport> {
    let mut report = check_local_rigidity(rep, &opts.rigidity)?;
    if let (Some(p), true) = (rep_prime, report.rigid) {
        let c = recover_conjugator(rep, p, opts)?;
        report.conjugator = Some(c.g);
        report.conjugation_residual = Some(c.residual);
    }
    Ok(report)
}

/// Origin Jacobians of the rigidity maps, for inspection.
pub fn origin_differentials(charts: &RigidityCharts) -> Result<(LinearOperator, LinearOperator)> {
    let x0 = DVector::zeros(charts.phi.domain_dim());
    let y0 = DVector::zeros(charts.psi.domain_dim());
    Ok((charts.phi.jacobian(&x0)?, charts.psi.jacobian(&y0)?))
}
