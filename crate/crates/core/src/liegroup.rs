//! Matrix Lie groups: exponential and logarithm, adjoint matrices, word
//! evaluation and representations of finitely presented groups.
//!
//! A group is an ambient size `n` together with a basis of its Lie algebra
//! inside `n×n` matrices. `GL(n)`, `SL(n)` and `SO(n)` come as presets; the
//! basis orders are
//!
//! - `gl(n)`: `E_ij` in row-major order,
//! - `sl(n)`: the diagonal `E_kk - E_{k+1,k+1}`, then `E_ij` for `i < j`, then `i > j`
//!   (for `n = 2` this is `(h, e, f)`),
//! - `so(n)`: `(E_ij - E_ji)/√2` for `i < j`.
//!
//! A representation file names the group preset and gives each generator's
//! image as `n²` row-major numbers:
//!
//! ```text
//! group: sl2
//! generator a: 2 0 0 0.5
//! ```

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linops::{null_space, LinearOperator, RankTolerance, SpectralDecomposition};
use crate::words::{Presentation, Word};

/// Default relator tolerance before condition scaling.
pub const DEFAULT_REL_TOL: f64 = 1e-10;
const INVARIANCE_TOL: f64 = 1e-9;
const LOG_SERIES_RADIUS: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LieError {
    #[error("logarithm undefined: |g - I| = {distance:.3e} is not below 1")]
    OutOfChartDomain { distance: f64 },
    #[error("conjugation leaves the algebra span (residual {residual:.3e})")]
    NotInvariant { residual: f64 },
    #[error("matrix is not invertible")]
    NotInvertible,
    #[error("non-finite matrix entries")]
    NonFinite,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("algebra basis is linearly dependent")]
    DependentBasis,
    #[error("unknown group `{0}`")]
    UnknownGroup(String),
    #[error("generator `{generator}` is not in {group}: {reason}")]
    NotInGroup { generator: String, group: String, reason: String },
    #[error("relator {relator} evaluates to I only up to {defect:.3e} (allowed {allowed:.3e})")]
    RelatorDefect { relator: usize, defect: f64, allowed: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, LieError>;

/// An invertible square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    matrix: DMatrix<f64>,
}

impl GroupElement {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(LieError::DimensionMismatch(format!("{}x{} matrix", matrix.nrows(), matrix.ncols())));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(LieError::NonFinite);
        }
        let op = LinearOperator::new(matrix.clone()).map_err(|_| LieError::NonFinite)?;
        let dec = SpectralDecomposition::new(&op, &RankTolerance::default());
        if dec.rank() < matrix.nrows() {
            return Err(LieError::NotInvertible);
        }
        Ok(Self { matrix })
    }

    pub fn identity(n: usize) -> Self {
        Self { matrix: DMatrix::identity(n, n) }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn inverse(&self) -> Self {
        let inv = self.matrix.clone().try_inverse().expect("checked invertible at construction");
        Self { matrix: inv }
    }

    pub fn mul(&self, other: &GroupElement) -> Self {
        Self { matrix: &self.matrix * &other.matrix }
    }

    /// Spectral distance `|g - I|`.
    pub fn distance_to_identity(&self) -> f64 {
        spectral_norm(&(&self.matrix - DMatrix::identity(self.dim(), self.dim())))
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Matrix exponential (scaling and squaring with a Padé approximant).
pub fn exp(x: &DMatrix<f64>) -> GroupElement {
    assert!(x.is_square(), "exp needs a square matrix");
    GroupElement { matrix: x.exp() }
}

/// Principal logarithm on `|g - I| < 1`.
///
/// Takes Denman–Beavers square roots until `|g - I| <= 1/4`, sums the
/// Mercator series there and scales back by `2^k`.
pub fn log(g: &GroupElement) -> Result<DMatrix<f64>> {
    let distance = g.distance_to_identity();
    if distance.is_nan() || distance >= 1.0 {
        return Err(LieError::OutOfChartDomain { distance });
    }
    Ok(log_unchecked(g.matrix()))
}

/// [`log`] on a bare matrix.
pub fn log_matrix(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let distance = spectral_norm(&(m - DMatrix::identity(m.nrows(), m.ncols())));
    if distance.is_nan() || distance >= 1.0 {
        return Err(LieError::OutOfChartDomain { distance });
    }
    Ok(log_unchecked(m))
}

fn log_unchecked(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let mut y = a.clone();
    let mut squarings = 0;
    while spectral_norm(&(&y - &id)) > LOG_SERIES_RADIUS && squarings < 64 {
        y = sqrt_denman_beavers(&y);
        squarings += 1;
    }
    let e = &y - &id;
    let mut power = e.clone();
    let mut sum = e.clone();
    for k in 2..200 {
        power = &power * &e;
        let term = &power / k as f64;
        if k % 2 == 0 {
            sum -= &term;
        } else {
            sum += &term;
        }
        if term.norm() <= 1e-18 * sum.norm().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    sum * 2f64.powi(squarings)
}

fn sqrt_denman_beavers(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..60 {
        let y_inv = y.clone().try_inverse().expect("square root iterate stays invertible");
        let z_inv = z.clone().try_inverse().expect("square root iterate stays invertible");
        let y_next = (&y + z_inv) * 0.5;
        z = (&z + y_inv) * 0.5;
        let change = (&y_next - &y).norm();
        y = y_next;
        if change <= 1e-16 * y.norm() {
            break;
        }
    }
    y
}

/// Fréchet derivative of `exp` at `x` in direction `e`, read off the
/// upper-right block of `exp([[x, e], [0, x]])`.
pub fn exp_frechet(x: &DMatrix<f64>, e: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(x);
    block.view_mut((n, n), (n, n)).copy_from(x);
    block.view_mut((0, n), (n, n)).copy_from(e);
    block.exp().view((0, n), (n, n)).into_owned()
}

/// Fréchet derivative of `log` at `p` (with `|p - I| < 1`) in direction `d`.
pub fn log_frechet(p: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = p.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let distance = spectral_norm(&(p - &id));
    if distance >= 1.0 {
        return Err(LieError::OutOfChartDomain { distance });
    }
    let d_norm = spectral_norm(d);
    if d_norm == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    // scale the direction so the block matrix stays inside the series domain
    let s = (0.5 * (1.0 - distance) / d_norm).min(1.0);
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(p);
    block.view_mut((n, n), (n, n)).copy_from(p);
    block.view_mut((0, n), (n, n)).copy_from(&(d * s));
    Ok(log_unchecked(&block).view((0, n), (n, n)).into_owned() / s)
}

/// A basis of a Lie algebra of `n×n` matrices, with the pseudo-inverse that
/// reads off coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraBasis {
    n: usize,
    elements: Vec<DMatrix<f64>>,
    coordinates: DMatrix<f64>,
}

impl AlgebraBasis {
    pub fn new(n: usize, elements: Vec<DMatrix<f64>>) -> Result<Self> {
        if elements.iter().any(|b| b.shape() != (n, n)) {
            return Err(LieError::DimensionMismatch(format!("basis elements must be {n}x{n}")));
        }
        let d = elements.len();
        let mut stacked = DMatrix::zeros(n * n, d);
        for (j, b) in elements.iter().enumerate() {
            stacked.set_column(j, &DVector::from_iterator(n * n, b.transpose().iter().copied()));
        }
        let op = LinearOperator::new(stacked).map_err(|_| LieError::NonFinite)?;
        let dec = SpectralDecomposition::new(&op, &RankTolerance::default());
        if dec.rank() < d {
            return Err(LieError::DependentBasis);
        }
        Ok(Self { n, elements, coordinates: dec.pseudo_inverse() })
    }

    pub fn dim(&self) -> usize {
        self.elements.len()
    }

    pub fn ambient(&self) -> usize {
        self.n
    }

    pub fn elements(&self) -> &[DMatrix<f64>] {
        &self.elements
    }

    /// `Σ c_i B_i`.
    pub fn to_matrix(&self, coords: &DVector<f64>) -> DMatrix<f64> {
        assert_eq!(coords.len(), self.dim(), "coordinate vector has the wrong length");
        self.elements.iter().zip(coords.iter()).fold(DMatrix::zeros(self.n, self.n), |acc, (b, &c)| acc + b * c)
    }

    /// Least-squares coordinates of `x` and the distance from `x` to the span.
    pub fn coordinates_with_residual(&self, x: &DMatrix<f64>) -> (DVector<f64>, f64) {
        let flat = DVector::from_iterator(self.n * self.n, x.transpose().iter().copied());
        let c = &self.coordinates * flat;
        let residual = (self.to_matrix(&c) - x).norm();
        (c, residual)
    }

    pub fn coordinates(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.coordinates_with_residual(x).0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupKind {
    General,
    Special,
    Orthogonal,
    Custom,
}

/// A matrix group given by its ambient size and algebra basis.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixGroup {
    name: String,
    kind: GroupKind,
    basis: AlgebraBasis,
}

fn unit(n: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    m[(i, j)] = 1.0;
    m
}

impl MatrixGroup {
    pub fn gl(n: usize) -> Self {
        let elements = (0..n).flat_map(|i| (0..n).map(move |j| unit(n, i, j))).collect();
        Self { name: format!("GL({n})"), kind: GroupKind::General, basis: AlgebraBasis::new(n, elements).unwrap() }
    }

    pub fn sl(n: usize) -> Self {
        let mut elements: Vec<DMatrix<f64>> = (0..n.saturating_sub(1)).map(|k| unit(n, k, k) - unit(n, k + 1, k + 1)).collect();
        for i in 0..n {
            for j in i + 1..n {
                elements.push(unit(n, i, j));
            }
        }
        for i in 0..n {
            for j in 0..i {
                elements.push(unit(n, i, j));
            }
        }
        Self { name: format!("SL({n})"), kind: GroupKind::Special, basis: AlgebraBasis::new(n, elements).unwrap() }
    }

    pub fn so(n: usize) -> Self {
        let mut elements = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                elements.push((unit(n, i, j) - unit(n, j, i)) / std::f64::consts::SQRT_2);
            }
        }
        Self { name: format!("SO({n})"), kind: GroupKind::Orthogonal, basis: AlgebraBasis::new(n, elements).unwrap() }
    }

    /// A group given only by an algebra basis; membership is not checked.
    pub fn custom(name: impl Into<String>, basis: AlgebraBasis) -> Self {
        Self { name: name.into(), kind: GroupKind::Custom, basis }
    }

    /// Preset lookup by key such as `so2`, `so3`, `sl2`, `gl2`.
    pub fn from_key(key: &str) -> Result<Self> {
        let key = key.trim().to_ascii_lowercase();
        let unknown = || LieError::UnknownGroup(key.clone());
        if key.len() < 3 {
            return Err(unknown());
        }
        let n: usize = key[2..].parse().map_err(|_| unknown())?;
        if n == 0 || n > 16 {
            return Err(unknown());
        }
        match &key[..2] {
            "gl" => Ok(Self::gl(n)),
            "sl" if n >= 2 => Ok(Self::sl(n)),
            "so" if n >= 2 => Ok(Self::so(n)),
            _ => Err(unknown()),
        }
    }

    pub fn key(&self) -> String {
        let n = self.ambient();
        match self.kind {
            GroupKind::General => format!("gl{n}"),
            GroupKind::Special => format!("sl{n}"),
            GroupKind::Orthogonal => format!("so{n}"),
            GroupKind::Custom => self.name.clone(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn basis(&self) -> &AlgebraBasis {
        &self.basis
    }

    pub fn ambient(&self) -> usize {
        self.basis.ambient()
    }

    /// Dimension of the Lie algebra, which is the module dimension.
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// `exp(Σ c_i B_i)`.
    pub fn exp_coords(&self, coords: &DVector<f64>) -> GroupElement {
        exp(&self.basis.to_matrix(coords))
    }

    /// Checks the defining equations of the group up to `tol`.
    pub fn check_membership(&self, g: &GroupElement, tol: f64) -> std::result::Result<(), String> {
        let m = g.matrix();
        if m.nrows() != self.ambient() {
            return Err(format!("expected {}x{}, got {}x{}", self.ambient(), self.ambient(), m.nrows(), m.ncols()));
        }
        let id = DMatrix::<f64>::identity(m.nrows(), m.nrows());
        match self.kind {
            GroupKind::General | GroupKind::Custom => Ok(()),
            GroupKind::Special => {
                let det = m.determinant();
                if (det - 1.0).abs() > tol * m.norm().powi(m.nrows() as i32).max(1.0) {
                    return Err(format!("determinant {det}"));
                }
                Ok(())
            }
            GroupKind::Orthogonal => {
                let defect = (m.transpose() * m - &id).norm();
                if defect > tol {
                    return Err(format!("|gᵀg - I| = {defect:.3e}"));
                }
                if m.determinant() <= 0.0 {
                    return Err("negative determinant".into());
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for MatrixGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Matrix of `v ↦ g v g⁻¹` in the given basis.
pub fn ad_matrix(g: &GroupElement, basis: &AlgebraBasis) -> Result<LinearOperator> {
    if g.dim() != basis.ambient() {
        return Err(LieError::DimensionMismatch(format!("{}x{} element for {}x{} algebra", g.dim(), g.dim(), basis.ambient(), basis.ambient())));
    }
    let g_inv = g.inverse();
    let d = basis.dim();
    let mut ad = DMatrix::zeros(d, d);
    for (j, b) in basis.elements().iter().enumerate() {
        let conj = g.matrix() * b * g_inv.matrix();
        let (c, residual) = basis.coordinates_with_residual(&conj);
        if residual > INVARIANCE_TOL * conj.norm().max(1.0) {
            return Err(LieError::NotInvariant { residual });
        }
        ad.set_column(j, &c);
    }
    LinearOperator::new(ad).map_err(|_| LieError::NonFinite)
}

/// Orthonormal basis of the stabilizer algebra `{x : σ̇(x)(p) = 0}`.
pub fn stabilizer_algebra(action_derivative: &LinearOperator) -> DMatrix<f64> {
    null_space(action_derivative, &RankTolerance::default())
}

/// Derivative at the identity of the linear action on `n`-space at `p`, in
/// algebra coordinates: `x ↦ -x p`.
pub fn linear_action_derivative(group: &MatrixGroup, p: &DVector<f64>) -> LinearOperator {
    let cols: Vec<DVector<f64>> = group.basis().elements().iter().map(|b| -(b * p)).collect();
    let m = if cols.is_empty() { DMatrix::zeros(p.len(), 0) } else { DMatrix::from_columns(&cols) };
    LinearOperator::new(m).expect("finite action derivative")
}

/// A homomorphism from a finitely presented group into a matrix group,
/// given by generator images.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    presentation: Presentation,
    group: MatrixGroup,
    images: Vec<GroupElement>,
    inverses: Vec<GroupElement>,
    rel_tol: f64,
}

impl Representation {
    pub fn new(presentation: Presentation, group: MatrixGroup, images: Vec<GroupElement>) -> Result<Self> {
        Self::with_rel_tol(presentation, group, images, DEFAULT_REL_TOL)
    }

    /// Validates images against the group and every relator. A relator
    /// `t = s_1^{ε_1}⋯s_m^{ε_m}` must satisfy
    /// `|r(t) - I| <= rel_tol · max(1, Π |r(s_j)^{ε_j}|)`.
    pub fn with_rel_tol(
        presentation: Presentation,
        group: MatrixGroup,
        images: Vec<GroupElement>,
        rel_tol: f64,
    ) -> Result<Self> {
        if images.len() != presentation.num_generators() {
            return Err(LieError::DimensionMismatch(format!(
                "{} images for {} generators",
                images.len(),
                presentation.num_generators()
            )));
        }
        for (name, g) in presentation.generators().iter().zip(&images) {
            let scale = spectral_norm(g.matrix()).max(1.0);
            group.check_membership(g, rel_tol * 1e2 * scale).map_err(|reason| LieError::NotInGroup {
                generator: name.clone(),
                group: group.name().to_string(),
                reason,
            })?;
        }
        let inverses = images.iter().map(GroupElement::inverse).collect();
        let rep = Self { presentation, group, images, inverses, rel_tol };
        let norms: Vec<[f64; 2]> =
            rep.images.iter().zip(&rep.inverses).map(|(g, h)| [spectral_norm(g.matrix()), spectral_norm(h.matrix())]).collect();
        for (i, t) in rep.presentation.relators().iter().enumerate() {
            let scale = t.letters().iter().map(|l| norms[l.generator][usize::from(l.sign < 0)]).product::<f64>();
            let allowed = rel_tol * scale.max(1.0);
            let defect = rep.evaluate_word(t).distance_to_identity();
            if !(defect <= allowed) {
                return Err(LieError::RelatorDefect { relator: i, defect, allowed });
            }
        }
        Ok(rep)
    }

    pub fn presentation(&self) -> &Presentation {
        &self.presentation
    }

    pub fn group(&self) -> &MatrixGroup {
        &self.group
    }

    pub fn images(&self) -> &[GroupElement] {
        &self.images
    }

    pub fn rel_tol(&self) -> f64 {
        self.rel_tol
    }

    /// Ambient matrix size.
    pub fn dimension(&self) -> usize {
        self.group.ambient()
    }

    pub fn image_of_letter(&self, generator: usize, sign: i8) -> &GroupElement {
        if sign > 0 {
            &self.images[generator]
        } else {
            &self.inverses[generator]
        }
    }

    /// Ordered product of generator images; the empty word gives `I`.
    pub fn evaluate_word(&self, w: &Word) -> GroupElement {
        let n = self.dimension();
        let m = w
            .letters()
            .iter()
            .fold(DMatrix::identity(n, n), |acc, l| acc * self.image_of_letter(l.generator, l.sign).matrix());
        GroupElement { matrix: m }
    }

    /// `Ad(r(s))` for every generator `s`.
    pub fn ad_matrices(&self) -> Result<Vec<LinearOperator>> {
        self.images.iter().map(|g| ad_matrix(g, self.group.basis())).collect()
    }

    /// `Ad(r(w))`.
    pub fn ad_of_word(&self, w: &Word) -> Result<LinearOperator> {
        ad_matrix(&self.evaluate_word(w), self.group.basis())
    }

    /// The representation `γ ↦ g r(γ) g⁻¹`.
    pub fn conjugate(&self, g: &GroupElement) -> Result<Self> {
        let g_inv = g.inverse();
        let images = self.images.iter().map(|r| g.mul(r).mul(&g_inv)).collect();
        Self::with_rel_tol(self.presentation.clone(), self.group.clone(), images, self.rel_tol)
    }

    /// Parses a representation file against `presentation`.
    pub fn parse(text: &str, presentation: &Presentation) -> Result<Self> {
        let mut group: Option<MatrixGroup> = None;
        let mut images: Vec<Option<GroupElement>> = vec![None; presentation.num_generators()];
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |message: String| LieError::Parse { line, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, rest) = content.split_once(':').ok_or_else(|| err(format!("expected `key: value`, got `{content}`")))?;
            let key = key.trim();
            if key == "group" {
                if group.is_some() {
                    return Err(err("duplicate group line".into()));
                }
                group = Some(MatrixGroup::from_key(rest).map_err(|e| err(e.to_string()))?);
                continue;
            }
            let Some(name) = key.strip_prefix("generator").map(str::trim).filter(|s| !s.is_empty()) else {
                return Err(err(format!("unknown key `{key}`")));
            };
            let g = group.as_ref().ok_or_else(|| err("generator before group line".into()))?;
            let index = presentation
                .generators()
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| err(format!("unknown generator `{name}`")))?;
            if images[index].is_some() {
                return Err(err(format!("generator `{name}` given twice")));
            }
            let values = rest
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad number `{t}`"))))
                .collect::<Result<Vec<f64>>>()?;
            let n = g.ambient();
            if values.len() != n * n {
                return Err(err(format!("expected {} entries, got {}", n * n, values.len())));
            }
            let m = DMatrix::from_row_slice(n, n, &values);
            images[index] = Some(GroupElement::new(m).map_err(|e| err(e.to_string()))?);
        }
        let group = group.ok_or(LieError::Parse { line: 0, message: "missing group line".into() })?;
        let images = images
            .into_iter()
            .zip(presentation.generators())
            .map(|(g, name)| g.ok_or_else(|| LieError::Parse { line: 0, message: format!("no image for `{name}`") }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(presentation.clone(), group, images)
    }

    /// Text form accepted by [`Representation::parse`].
    pub fn to_text(&self) -> String {
        let mut out = format!("group: {}\n", self.group.key());
        for (name, g) in self.presentation.generators().iter().zip(&self.images) {
            let entries: Vec<String> = g.matrix().transpose().iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&format!("generator {name}: {}\n", entries.join(" ")));
        }
        out
    }
}

/// Rotation of the plane by `theta`.
pub fn rotation2(theta: f64) -> GroupElement {
    let (s, c) = theta.sin_cos();
    GroupElement { matrix: DMatrix::from_row_slice(2, 2, &[c, -s, s, c]) }
}
