//! Coboundary operators of a finitely presented group with coefficients in a
//! finite-dimensional module, and the first cohomology `H¹ = ker δ¹ / im δ⁰`.
//!
//! Cochains `Map(S, V)` are stacked vectors with one `d`-block per generator,
//! in generator order; `δ¹` has one block row per relator of the chosen
//! subset.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::liegroup::{LieError, Representation};
use crate::linops::{LinearOperator, RankTolerance, SpectralDecomposition};
use crate::words::{relator_prefixes, Presentation, Word};

/// Relative tolerance of the `δ¹ δ⁰ = 0` check.
pub const COMPLEX_TOL: f64 = 1e-9;
/// Singular values within this factor of the rank threshold are flagged.
pub const BORDERLINE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CohomologyError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("ρ({0}) is not invertible")]
    NotInvertible(usize),
    #[error("relator index {0} out of range")]
    InvalidSubset(usize),
    #[error("|δ¹ δ⁰| = {norm:.3e} exceeds {allowed:.3e}: not a complex")]
    NotAComplex { norm: f64, allowed: f64 },
    #[error("numerical ranks are inconsistent: nullity δ¹ = {nullity_d1} < rank δ⁰ = {rank_d0}")]
    RankInconsistent { nullity_d1: usize, rank_d0: usize },
    #[error(transparent)]
    Lie(#[from] LieError),
}

pub type Result<T> = std::result::Result<T, CohomologyError>;

/// A `d`-dimensional module over the free group on the generators, given by
/// the action `ρ(s)` of each generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaModule {
    dim: usize,
    rho: Vec<DMatrix<f64>>,
    rho_inv: Vec<DMatrix<f64>>,
}

impl GammaModule {
    pub fn new(dim: usize, rho: Vec<DMatrix<f64>>) -> Result<Self> {
        let mut rho_inv = Vec::with_capacity(rho.len());
        for (i, m) in rho.iter().enumerate() {
            if m.shape() != (dim, dim) {
                return Err(CohomologyError::DimensionMismatch(format!(
                    "ρ({i}) is {}x{}, expected {dim}x{dim}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            let op = LinearOperator::new(m.clone()).map_err(|_| CohomologyError::NotInvertible(i))?;
            if SpectralDecomposition::new(&op, &RankTolerance::default()).rank() < dim {
                return Err(CohomologyError::NotInvertible(i));
            }
            rho_inv.push(m.clone().try_inverse().ok_or(CohomologyError::NotInvertible(i))?);
        }
        Ok(Self { dim, rho, rho_inv })
    }

    /// Every generator acts as the identity.
    pub fn trivial(num_generators: usize, dim: usize) -> Self {
        let id = DMatrix::identity(dim, dim);
        Self { dim, rho: vec![id.clone(); num_generators], rho_inv: vec![id; num_generators] }
    }

    /// The adjoint module `γ.v = Ad(r(γ)) v` on the Lie algebra.
    pub fn from_representation(rep: &Representation) -> Result<Self> {
        let rho = rep.ad_matrices()?.into_iter().map(LinearOperator::into_matrix).collect();
        Self::new(rep.group().dim(), rho)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_generators(&self) -> usize {
        self.rho.len()
    }

    pub fn rho(&self) -> &[DMatrix<f64>] {
        &self.rho
    }

    /// `ρ(w)`, the ordered product over the letters of `w`.
    pub fn act(&self, w: &Word) -> DMatrix<f64> {
        w.letters().iter().fold(DMatrix::identity(self.dim, self.dim), |acc, l| {
            acc * if l.sign > 0 { &self.rho[l.generator] } else { &self.rho_inv[l.generator] }
        })
    }

    /// The same module in the basis given by the columns of `q`:
    /// `ρ'(s) = q⁻¹ ρ(s) q`.
    pub fn change_basis(&self, q: &DMatrix<f64>) -> Result<Self> {
        let q_inv = q.clone().try_inverse().ok_or(CohomologyError::DimensionMismatch("singular basis change".into()))?;
        Self::new(self.dim, self.rho.iter().map(|r| &q_inv * r * q).collect())
    }

    fn check(&self, pres: &Presentation) -> Result<()> {
        if self.rho.len() != pres.num_generators() {
            return Err(CohomologyError::DimensionMismatch(format!(
                "module has {} generators, presentation has {}",
                self.rho.len(),
                pres.num_generators()
            )));
        }
        Ok(())
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        0.0
    } else {
        m.clone().svd(false, false).singular_values.max()
    }
}

/// `δ⁰` with blocks `I - ρ(s)`, and the scale of its rounding error.
fn delta0_scaled(module: &GammaModule, pres: &Presentation) -> Result<(LinearOperator, f64)> {
    module.check(pres)?;
    let d = module.dim;
    let mut m = DMatrix::zeros(module.rho.len() * d, d);
    let mut scale2 = 0.0;
    for (i, r) in module.rho.iter().enumerate() {
        m.view_mut((i * d, 0), (d, d)).copy_from(&(DMatrix::identity(d, d) - r));
        scale2 += (1.0 + spectral_norm(r)).powi(2);
    }
    Ok((LinearOperator::new(m).expect("finite blocks"), scale2.sqrt()))
}

fn delta1_scaled(module: &GammaModule, pres: &Presentation, subset: &[usize]) -> Result<(LinearOperator, f64)> {
    module.check(pres)?;
    let d = module.dim;
    let k = pres.num_generators();
    let mut m = DMatrix::zeros(subset.len() * d, k * d);
    let mut scale2 = 0.0;
    for (row, &t) in subset.iter().enumerate() {
        let relator = pres.relators().get(t).ok_or(CohomologyError::InvalidSubset(t))?;
        let mut block_scale = 0.0;
        for entry in relator_prefixes(relator) {
            let p = module.act(&entry.prefix);
            block_scale += spectral_norm(&p);
            let mut target = m.view_mut((row * d, entry.generator * d), (d, d));
            target += p * f64::from(entry.sign);
        }
        scale2 += block_scale * block_scale;
    }
    Ok((LinearOperator::new(m).expect("finite blocks"), scale2.sqrt()))
}

pub fn delta0(module: &GammaModule, pres: &Presentation) -> Result<LinearOperator> {
    Ok(delta0_scaled(module, pres)?.0)
}

/// `δ¹` restricted to the relators in `subset`. Block `(t, s)` is
/// `Σ ε_j ρ(prefix_j)` over the letters `j` of `t` on generator `s`.
pub fn delta1(module: &GammaModule, pres: &Presentation, subset: &[usize]) -> Result<LinearOperator> {
    Ok(delta1_scaled(module, pres, subset)?.0)
}

/// Largest block norm of a stacked cochain.
pub fn sup_block_norm(cochain: &DVector<f64>, block: usize) -> f64 {
    assert!(block > 0 && cochain.len() % block == 0, "cochain length is not a multiple of the block size");
    cochain.as_slice().chunks(block).map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max)
}

/// Rank summary of one coboundary.
#[derive(Debug, Clone, PartialEq)]
pub struct RankSummary {
    pub rank: usize,
    pub nullity: usize,
    pub threshold: f64,
    /// Smallest kept and largest dropped singular values, when present.
    pub smallest_kept: Option<f64>,
    pub largest_dropped: Option<f64>,
    pub borderline: bool,
}

impl RankSummary {
    fn new(op: &LinearOperator, tol: &RankTolerance, scale: f64) -> Self {
        let dec = SpectralDecomposition::new(op, &tol.with_reference_scale(scale));
        let threshold = dec.threshold();
        let sv = dec.singular_values();
        let rank = dec.rank();
        let borderline = sv
            .iter()
            .any(|&s| s > threshold / BORDERLINE_FACTOR && s < threshold * BORDERLINE_FACTOR);
        Self {
            rank,
            nullity: dec.nullity(),
            threshold,
            smallest_kept: rank.checked_sub(1).map(|i| sv[i]),
            largest_dropped: sv.get(rank).copied(),
            borderline,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct H1Details {
    pub d0: RankSummary,
    pub d1: RankSummary,
    pub complex_defect: f64,
    pub warnings: Vec<String>,
}

/// The assembled complex for a chosen relator subset.
#[derive(Debug, Clone, PartialEq)]
pub struct CoboundaryPair {
    pub d0: LinearOperator,
    pub d1: LinearOperator,
    pub relator_subset: Vec<usize>,
    pub d0_scale: f64,
    pub d1_scale: f64,
}

impl CoboundaryPair {
    pub fn new(module: &GammaModule, pres: &Presentation, subset: &[usize]) -> Result<Self> {
        let (d0, d0_scale) = delta0_scaled(module, pres)?;
        let (d1, d1_scale) = delta1_scaled(module, pres, subset)?;
        Ok(Self { d0, d1, relator_subset: subset.to_vec(), d0_scale, d1_scale })
    }

    /// `|δ¹ δ⁰|` and the allowed bound `1e-9 (1 + s₁ s₀)` with the assembly scales.
    pub fn complex_defect(&self) -> (f64, f64) {
        let product = self.d1.matrix() * self.d0.matrix();
        let norm = spectral_norm(&product);
        (norm, COMPLEX_TOL * (1.0 + self.d1_scale * self.d0_scale))
    }

    pub fn h1(&self, tol: &RankTolerance) -> Result<(usize, H1Details)> {
        let (norm, allowed) = self.complex_defect();
        if !(norm <= allowed) {
            return Err(CohomologyError::NotAComplex { norm, allowed });
        }
        let d0 = RankSummary::new(&self.d0, tol, self.d0_scale);
        let d1 = RankSummary::new(&self.d1, tol, self.d1_scale);
        let mut warnings = Vec::new();
        if d0.borderline {
            warnings.push(format!("δ⁰ has a singular value within {BORDERLINE_FACTOR}x of the rank threshold {:.3e}", d0.threshold));
        }
        if d1.borderline {
            warnings.push(format!("δ¹ has a singular value within {BORDERLINE_FACTOR}x of the rank threshold {:.3e}", d1.threshold));
        }
        let dim = d1
            .nullity
            .checked_sub(d0.rank)
            .ok_or(CohomologyError::RankInconsistent { nullity_d1: d1.nullity, rank_d0: d0.rank })?;
        Ok((dim, H1Details { d0, d1, complex_defect: norm, warnings }))
    }
}

/// `dim H¹ = nullity δ¹_subset - rank δ⁰`.
pub fn h1_dimension(
    module: &GammaModule,
    pres: &Presentation,
    subset: &[usize],
    tol: &RankTolerance,
) -> Result<(usize, H1Details)> {
    CoboundaryPair::new(module, pres, subset)?.h1(tol)
}

/// Greedy choice of relators: scan in order and keep a relator only if it
/// raises the rank of `δ¹` on the kept set.
pub fn saturate_relators(module: &GammaModule, pres: &Presentation, tol: &RankTolerance) -> Result<Vec<usize>> {
    module.check(pres)?;
    let mut kept: Vec<usize> = Vec::new();
    let mut rank = 0;
    for t in 0..pres.relators().len() {
        kept.push(t);
        let (d1, scale) = delta1_scaled(module, pres, &kept)?;
        let r = SpectralDecomposition::new(&d1, &tol.with_reference_scale(scale)).rank();
        if r > rank {
            rank = r;
        } else {
            kept.pop();
        }
    }
    Ok(kept)
}

/// Saturates the relators and assembles the complex on the chosen subset.
pub fn assemble(module: &GammaModule, pres: &Presentation, tol: &RankTolerance) -> Result<CoboundaryPair> {
    let subset = saturate_relators(module, pres, tol)?;
    CoboundaryPair::new(module, pres, &subset)
}

/// Numerical rank with the assembly scale folded into the threshold.
pub fn scaled_rank(op: &LinearOperator, scale: f64, tol: &RankTolerance) -> usize {
    SpectralDecomposition::new(op, &tol.with_reference_scale(scale)).rank()
}
