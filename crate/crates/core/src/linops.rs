//! Dense linear-operator utilities.
//!
//! Everything here works with the Euclidean norm on vectors and the spectral
//! norm on operators, so every open-mapping constant is a singular value.
//! The perturbation solvers follow the constructive arguments for openness of
//! surjections, embeddings and exact pairs `im(f) = ker(g)`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Slack used when checking orthonormal columns/rows.
pub const NORMALIZATION_TOL: f64 = 1e-8;

const MAX_SERIES_TERMS: usize = 100_000;
const MAX_TRANSFER_STEPS: usize = 500;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinopsError {
    #[error("operator has non-finite entries")]
    NonFinite,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("vector is not in the image (residual {residual:.3e} > {allowed:.3e})")]
    YNotInImage { residual: f64, allowed: f64 },
    #[error("operator has no nonzero singular value")]
    ZeroOperator,
    #[error("perturbation ratio {ratio:.6} is not below 1")]
    PerturbationTooLarge { ratio: f64 },
    #[error("operator is not surjective (rank {rank} < {rows})")]
    NotSurjective { rank: usize, rows: usize },
    #[error("operator is not a closed embedding")]
    NotEmbedding,
    #[error("halving violated at step {step}: {next:.3e} > {prev:.3e} / 2")]
    HalvingViolated { step: usize, prev: f64, next: f64 },
    #[error("pair is not exact: {0}")]
    NotExact(String),
    #[error("{0} is not normalized")]
    NotNormalized(&'static str),
    #[error("vector is not in the kernel (residual {residual:.3e})")]
    NotInKernel { residual: f64 },
    #[error("image mismatch in column {column} (residual {residual:.3e})")]
    ImageMismatch { column: usize, residual: f64 },
    #[error("series did not reach the tolerance within {0} terms")]
    NotConverged(usize),
}

pub type Result<T> = std::result::Result<T, LinopsError>;

/// A dense real matrix viewed as a map from `domain_dim`-space to
/// `codomain_dim`-space. Entries are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator {
    matrix: DMatrix<f64>,
}

impl LinearOperator {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(LinopsError::NonFinite);
        }
        Ok(Self { matrix })
    }

    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinopsError::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} operator",
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(rows, cols, data))
    }

    pub fn identity(n: usize) -> Self {
        Self { matrix: DMatrix::identity(n, n) }
    }

    pub fn zeros(codomain_dim: usize, domain_dim: usize) -> Self {
        Self { matrix: DMatrix::zeros(codomain_dim, domain_dim) }
    }

    pub fn domain_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn codomain_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.domain_dim(), "operator applied to a vector of the wrong length");
        &self.matrix * x
    }

    pub fn compose(&self, inner: &LinearOperator) -> Result<LinearOperator> {
        if self.domain_dim() != inner.codomain_dim() {
            return Err(LinopsError::DimensionMismatch(format!(
                "cannot compose {}x{} after {}x{}",
                self.codomain_dim(),
                self.domain_dim(),
                inner.codomain_dim(),
                inner.domain_dim()
            )));
        }
        Ok(Self { matrix: &self.matrix * &inner.matrix })
    }

    pub fn transpose(&self) -> LinearOperator {
        Self { matrix: self.matrix.transpose() }
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0 || self.matrix.ncols() == 0
    }
}

impl TryFrom<DMatrix<f64>> for LinearOperator {
    type Error = LinopsError;

    fn try_from(matrix: DMatrix<f64>) -> Result<Self> {
        Self::new(matrix)
    }
}

/// Rule deciding which singular values count as zero.
///
/// A singular value is zero when it falls below
/// `relative * max(sigma_max, reference_scale)`, with `relative` defaulting to
/// `f64::EPSILON * max(rows, cols)`. `reference_scale` lets callers that
/// assemble a matrix from cancelling terms (such as `I - Ad(g)` for central
/// `g`) measure rounding against the size of the operands rather than against
/// the (possibly tiny) result.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RankTolerance {
    pub relative: Option<f64>,
    pub reference_scale: f64,
}

impl RankTolerance {
    pub fn with_relative(relative: f64) -> Self {
        Self { relative: Some(relative), reference_scale: 0.0 }
    }

    pub fn with_reference_scale(mut self, scale: f64) -> Self {
        self.reference_scale = scale;
        self
    }

    pub fn threshold(&self, sigma_max: f64, rows: usize, cols: usize) -> f64 {
        let factor = self.relative.unwrap_or(f64::EPSILON * rows.max(cols) as f64);
        factor * sigma_max.max(self.reference_scale)
    }
}

/// Thin singular value decomposition with singular values sorted in
/// descending order and a fixed numerical-rank threshold.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    rows: usize,
    cols: usize,
    u: DMatrix<f64>,
    sigma: Vec<f64>,
    v_t: DMatrix<f64>,
    threshold: f64,
    rank: usize,
}

impl SpectralDecomposition {
    pub fn new(op: &LinearOperator, tol: &RankTolerance) -> Self {
        let (rows, cols) = op.matrix.shape();
        if op.is_empty() {
            return Self {
                rows,
                cols,
                u: DMatrix::zeros(rows, 0),
                sigma: Vec::new(),
                v_t: DMatrix::zeros(0, cols),
                threshold: 0.0,
                rank: 0,
            };
        }
        let svd = op.matrix.clone().svd(true, true);
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested V^T");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        let u = DMatrix::from_fn(rows, order.len(), |r, c| u[(r, order[c])]);
        let v_t = DMatrix::from_fn(order.len(), cols, |r, c| v_t[(order[r], c)]);
        let sigma_max = sigma.first().copied().unwrap_or(0.0);
        let threshold = tol.threshold(sigma_max, rows, cols);
        let rank = sigma.iter().filter(|&&s| s > threshold).count();
        Self { rows, cols, u, sigma, v_t, threshold, rank }
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.sigma
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn nullity(&self) -> usize {
        self.cols - self.rank
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma.first().copied().unwrap_or(0.0)
    }

    /// Smallest singular value above the rank threshold.
    pub fn sigma_min_positive(&self) -> Option<f64> {
        self.rank.checked_sub(1).map(|i| self.sigma[i])
    }

    /// Smallest singular value of the full domain, i.e. the best `r` with
    /// `|Ax| >= r |x|`; zero when the domain is larger than the codomain.
    pub fn sigma_min(&self) -> f64 {
        if self.cols > self.rows {
            0.0
        } else {
            self.sigma.last().copied().unwrap_or(f64::INFINITY)
        }
    }

    /// Minimum-norm least-squares solution `A⁺y` with truncation at the rank
    /// threshold.
    pub fn pseudo_solve(&self, y: &DVector<f64>) -> DVector<f64> {
        assert_eq!(y.len(), self.rows, "right-hand side has the wrong length");
        let mut x = DVector::zeros(self.cols);
        for k in 0..self.rank {
            let coeff = self.u.column(k).dot(y) / self.sigma[k];
            x.axpy(coeff, &self.v_t.row(k).transpose(), 1.0);
        }
        x
    }

    /// The pseudo-inverse matrix `A⁺`.
    pub fn pseudo_inverse(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.cols, self.rows);
        for k in 0..self.rank {
            p += (self.v_t.row(k).transpose() * self.u.column(k).transpose()) / self.sigma[k];
        }
        p
    }
}

/// Largest singular value.
pub fn operator_norm(a: &LinearOperator) -> Result<f64> {
    if a.matrix.iter().any(|v| !v.is_finite()) {
        return Err(LinopsError::NonFinite);
    }
    Ok(SpectralDecomposition::new(a, &RankTolerance::default()).sigma_max())
}

pub fn numerical_rank(a: &LinearOperator, tol: &RankTolerance) -> usize {
    SpectralDecomposition::new(a, tol).rank()
}

/// Orthonormal basis (as columns) of the numerical null space.
pub fn null_space(a: &LinearOperator, tol: &RankTolerance) -> DMatrix<f64> {
    let (rows, cols) = a.matrix.shape();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    if rows == 0 {
        return DMatrix::identity(cols, cols);
    }
    // Pad with zero rows so the SVD returns a full V.
    let padded = if rows < cols {
        let mut m = DMatrix::zeros(cols, cols);
        m.rows_mut(0, rows).copy_from(&a.matrix);
        m
    } else {
        a.matrix.clone()
    };
    let sigma_max = SpectralDecomposition::new(a, tol).sigma_max();
    let threshold = tol.threshold(sigma_max, rows, cols);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let kernel: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] <= threshold).collect();
    DMatrix::from_fn(cols, kernel.len(), |r, c| v_t[(kernel[c], r)])
}

/// Minimum-norm `x` with `Ax = y`.
///
/// Fails with [`LinopsError::YNotInImage`] when the least-squares residual
/// exceeds `tol * |y|`, which is how a failed open-mapping hypothesis shows up
/// at a particular vector.
pub fn min_norm_preimage(a: &LinearOperator, y: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    let decomposition = SpectralDecomposition::new(a, &RankTolerance::default());
    preimage_checked(a, &decomposition, y, tol, y.norm())
}

/// Like [`min_norm_preimage`] with a precomputed decomposition and an explicit
/// scale for the residual test.
pub fn preimage_checked(
    a: &LinearOperator,
    decomposition: &SpectralDecomposition,
    y: &DVector<f64>,
    tol: f64,
    scale: f64,
) -> Result<DVector<f64>> {
    if y.len() != a.codomain_dim() {
        return Err(LinopsError::DimensionMismatch(format!(
            "vector of length {} for codomain of dimension {}",
            y.len(),
            a.codomain_dim()
        )));
    }
    let x = decomposition.pseudo_solve(y);
    let residual = (a.apply(&x) - y).norm();
    let allowed = tol * scale;
    if residual > allowed {
        return Err(LinopsError::YNotInImage { residual, allowed });
    }
    Ok(x)
}

/// Open-mapping constants of a pair of differentials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub c1: f64,
    pub c2: f64,
    pub c: f64,
    pub dphi0_norm: f64,
    pub dpsi0_norm: f64,
}

/// `C1 = 1/σ⁺_min(dφ(0))`, `C2 = 1/σ⁺_min(dψ(0))` and
/// `C = max{C1, C2, |dφ(0)|, |dψ(0)|, 1}`.
pub fn bound_constants(dphi0: &LinearOperator, dpsi0: &LinearOperator) -> Result<BoundConstants> {
    bound_constants_with(dphi0, dpsi0, &RankTolerance::default())
}

pub fn bound_constants_with(
    dphi0: &LinearOperator,
    dpsi0: &LinearOperator,
    tol: &RankTolerance,
) -> Result<BoundConstants> {
    let phi = SpectralDecomposition::new(dphi0, tol);
    let psi = SpectralDecomposition::new(dpsi0, tol);
    let c1 = 1.0 / phi.sigma_min_positive().ok_or(LinopsError::ZeroOperator)?;
    let c2 = 1.0 / psi.sigma_min_positive().ok_or(LinopsError::ZeroOperator)?;
    Ok(BoundConstants::assemble(c1, c2, phi.sigma_max(), psi.sigma_max()))
}

impl BoundConstants {
    pub fn assemble(c1: f64, c2: f64, dphi0_norm: f64, dpsi0_norm: f64) -> Self {
        let c = [c1, c2, dphi0_norm, dpsi0_norm, 1.0].into_iter().fold(f64::MIN, f64::max);
        Self { c1, c2, c, dphi0_norm, dpsi0_norm }
    }
}

/// Largest `r` with `|f x| >= r |x|`; zero when `f` is not injective.
pub fn embedding_radius(f: &LinearOperator) -> f64 {
    SpectralDecomposition::new(f, &RankTolerance::default()).sigma_min()
}

/// Output of [`surjective_perturbation_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSolution {
    pub solution: DVector<f64>,
    /// `|(f+g)(w_0 + ... + w_{n-1}) - v|` for n = 1, 2, ...
    pub residuals: Vec<f64>,
    /// `a = |g| / r` with `r = σ⁺_min(f)`.
    pub contraction: f64,
    pub radius: f64,
}

/// Solves `(f+g)w = v` for surjective `f` and `|g| < σ⁺_min(f)` by the
/// correction series `f(w_0) = v`, `f(w_{n+1}) = -g(w_n)`.
///
/// After n terms the residual equals `|g(w_{n-1})| <= aⁿ |v|`.
pub fn surjective_perturbation_solve(
    f: &LinearOperator,
    g: &LinearOperator,
    v: &DVector<f64>,
    tol: f64,
) -> Result<PerturbationSolution> {
    if f.matrix.shape() != g.matrix.shape() {
        return Err(LinopsError::DimensionMismatch("f and g differ in shape".into()));
    }
    if v.len() != f.codomain_dim() {
        return Err(LinopsError::DimensionMismatch("right-hand side length".into()));
    }
    let decomposition = SpectralDecomposition::new(f, &RankTolerance::default());
    if decomposition.rank() < f.codomain_dim() {
        return Err(LinopsError::NotSurjective {
            rank: decomposition.rank(),
            rows: f.codomain_dim(),
        });
    }
    let radius = decomposition.sigma_min_positive().unwrap_or(f64::INFINITY);
    let contraction = operator_norm(g)? / radius;
    if contraction >= 1.0 {
        return Err(LinopsError::PerturbationTooLarge { ratio: contraction });
    }

    let v_norm = v.norm();
    let mut solution = DVector::zeros(f.domain_dim());
    let mut residuals = Vec::new();
    let mut target = v.clone();
    for _ in 0..MAX_SERIES_TERMS {
        let term = decomposition.pseudo_solve(&target);
        solution += &term;
        let defect = g.apply(&term);
        let residual = defect.norm();
        residuals.push(residual);
        if residual <= tol * v_norm {
            return Ok(PerturbationSolution { solution, residuals, contraction, radius });
        }
        target = -defect;
    }
    Err(LinopsError::NotConverged(MAX_SERIES_TERMS))
}

/// Output of [`exactness_transfer`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExactnessTransfer {
    pub solution: DVector<f64>,
    /// `|v_1|, |v_2|, ...`; each entry at most half the previous one.
    pub v_norms: Vec<f64>,
}

fn has_orthonormal_columns(m: &DMatrix<f64>) -> bool {
    let gram = m.transpose() * m;
    (gram - DMatrix::identity(m.ncols(), m.ncols())).amax() <= NORMALIZATION_TOL
}

/// Given an exact pair `im(f) = ker(g)` with `f` isometric and `g` a metric
/// quotient (orthonormal columns and rows respectively), and perturbations
/// with `g̃f̃ = 0` and `max(|f-f̃|, |g-g̃|) < 1/10`, finds `x` with `f̃x = v` for
/// `v ∈ ker(g̃)`.
///
/// Each step removes the `g`-visible part `w_n` of `v_n`, pulls the rest back
/// through `f` and subtracts its `f̃`-image; the remainder at least halves.
pub fn exactness_transfer(
    f: &LinearOperator,
    g: &LinearOperator,
    f_tilde: &LinearOperator,
    g_tilde: &LinearOperator,
    v: &DVector<f64>,
    tol: f64,
) -> Result<ExactnessTransfer> {
    let y_dim = f.codomain_dim();
    if g.domain_dim() != y_dim
        || f_tilde.matrix.shape() != f.matrix.shape()
        || g_tilde.matrix.shape() != g.matrix.shape()
        || v.len() != y_dim
    {
        return Err(LinopsError::DimensionMismatch("inconsistent chain shapes".into()));
    }
    if !has_orthonormal_columns(&f.matrix) {
        return Err(LinopsError::NotNormalized("f (columns)"));
    }
    if !has_orthonormal_columns(&g.matrix.transpose()) {
        return Err(LinopsError::NotNormalized("g (rows)"));
    }
    let tol_rank = RankTolerance::default();
    let gf = (&g.matrix * &f.matrix).amax();
    let rank_sum = numerical_rank(f, &tol_rank) + numerical_rank(g, &tol_rank);
    if gf > NORMALIZATION_TOL || rank_sum != y_dim {
        return Err(LinopsError::NotExact(format!(
            "|gf| = {gf:.3e}, rank(f) + rank(g) = {rank_sum}, dim = {y_dim}"
        )));
    }
    let gf_tilde = operator_norm(&LinearOperator::new(&g_tilde.matrix * &f_tilde.matrix)?)?;
    if gf_tilde > tol.max(NORMALIZATION_TOL) {
        return Err(LinopsError::NotExact(format!("|g̃f̃| = {gf_tilde:.3e}")));
    }
    let delta = operator_norm(&LinearOperator::new(&f.matrix - &f_tilde.matrix)?)?
        .max(operator_norm(&LinearOperator::new(&g.matrix - &g_tilde.matrix)?)?);
    if delta >= 0.1 {
        return Err(LinopsError::PerturbationTooLarge { ratio: delta / 0.1 });
    }
    let v_norm = v.norm();
    let kernel_residual = g_tilde.apply(v).norm();
    if kernel_residual > tol.max(f64::EPSILON) * v_norm.max(f64::MIN_POSITIVE) {
        return Err(LinopsError::NotInKernel { residual: kernel_residual });
    }

    let g_dec = SpectralDecomposition::new(g, &tol_rank);
    let f_dec = SpectralDecomposition::new(f, &tol_rank);
    let slack = 1e-12 * v_norm;
    let mut solution = DVector::zeros(f.domain_dim());
    let mut current = v.clone();
    let mut v_norms = vec![v_norm];
    for step in 1..=MAX_TRANSFER_STEPS {
        let current_norm = *v_norms.last().expect("nonempty");
        if current_norm <= tol * v_norm {
            return Ok(ExactnessTransfer { solution, v_norms });
        }
        let w = g_dec.pseudo_solve(&g.apply(&current));
        let pulled = preimage_checked(f, &f_dec, &(&current - &w), 1e-6, current_norm)
            .map_err(|e| LinopsError::NotExact(e.to_string()))?;
        current -= f_tilde.apply(&pulled);
        solution += pulled;
        let next_norm = current.norm();
        if next_norm > 0.5 * current_norm + slack {
            return Err(LinopsError::HalvingViolated { step, prev: current_norm, next: next_norm });
        }
        v_norms.push(next_norm);
    }
    Err(LinopsError::NotConverged(MAX_TRANSFER_STEPS))
}

/// `f⁻¹ ∘ g` for a closed embedding `f` with `im(g) ⊆ im(f)`.
pub fn inverse_compose(f: &LinearOperator, g: &LinearOperator, tol: f64) -> Result<LinearOperator> {
    if f.codomain_dim() != g.codomain_dim() {
        return Err(LinopsError::DimensionMismatch("f and g have different codomains".into()));
    }
    let decomposition = SpectralDecomposition::new(f, &RankTolerance::default());
    if decomposition.rank() < f.domain_dim() {
        return Err(LinopsError::NotEmbedding);
    }
    let p = decomposition.pseudo_inverse();
    let a = &p * &g.matrix;
    let defect = &f.matrix * &a - &g.matrix;
    for (column, (d, gc)) in defect.column_iter().zip(g.matrix.column_iter()).enumerate() {
        let residual = d.norm();
        if residual > tol * gc.norm().max(f64::MIN_POSITIVE) {
            return Err(LinopsError::ImageMismatch { column, residual });
        }
    }
    LinearOperator::new(a)
}

/// Splits a full-column-rank `f` as `f = q r` with orthonormal columns `q`.
pub fn orthonormalize_columns(f: &LinearOperator) -> Result<(LinearOperator, LinearOperator)> {
    if embedding_radius(f) == 0.0 {
        return Err(LinopsError::NotEmbedding);
    }
    let qr = f.matrix.clone().qr();
    Ok((LinearOperator::new(qr.q())?, LinearOperator::new(qr.r())?))
}

/// Splits a full-row-rank `g` as `g = l q` with orthonormal rows `q`.
pub fn orthonormalize_rows(g: &LinearOperator) -> Result<(LinearOperator, LinearOperator)> {
    let (q, r) = orthonormalize_columns(&g.transpose()).map_err(|e| match e {
        LinopsError::NotEmbedding => LinopsError::NotSurjective {
            rank: numerical_rank(g, &RankTolerance::default()),
            rows: g.codomain_dim(),
        },
        other => other,
    })?;
    Ok((r.transpose(), q.transpose()))
}
