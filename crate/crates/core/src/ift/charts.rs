//! Built-in chart pairs used by the demos, tests and benchmarks.

use nalgebra::{DMatrix, DVector};

use super::{certify_neighborhood, DifferentiableMap, IftConstants, Result};

/// Names accepted by [`builtin_pair`].
pub const BUILTIN_PAIRS: &[&str] = &["parabola", "circle"];

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

/// `x ↦ (x, x²)`.
pub fn parabola() -> DifferentiableMap {
    DifferentiableMap::new("parabola", 1, 2, |x| Ok(v(&[x[0], x[0] * x[0]])))
        .with_jacobian(|x| Ok(DMatrix::from_column_slice(2, 1, &[1.0, 2.0 * x[0]])))
        .with_lipschitz(2.0)
        .with_domain_radius(1.0)
}

/// `x ↦ (x/2, x²/4)`, the parabola at half speed.
pub fn scaled_parabola() -> DifferentiableMap {
    DifferentiableMap::new("scaled parabola", 1, 2, |x| Ok(v(&[0.5 * x[0], 0.25 * x[0] * x[0]])))
        .with_jacobian(|x| Ok(DMatrix::from_column_slice(2, 1, &[0.5, 0.5 * x[0]])))
        .with_lipschitz(0.5)
        .with_domain_radius(1.0)
}

/// `x ↦ (2x, 4x²)`, the parabola at double speed.
pub fn doubled_parabola() -> DifferentiableMap {
    DifferentiableMap::new("doubled parabola", 1, 2, |x| Ok(v(&[2.0 * x[0], 4.0 * x[0] * x[0]])))
        .with_jacobian(|x| Ok(DMatrix::from_column_slice(2, 1, &[2.0, 8.0 * x[0]])))
        .with_lipschitz(8.0)
        .with_domain_radius(1.0)
}

/// `(y₁, y₂) ↦ y₂ - y₁²`.
pub fn parabola_constraint() -> DifferentiableMap {
    DifferentiableMap::new("parabola constraint", 2, 1, |y| Ok(v(&[y[1] - y[0] * y[0]])))
        .with_jacobian(|y| Ok(DMatrix::from_row_slice(1, 2, &[-2.0 * y[0], 1.0])))
        .with_lipschitz(2.0)
        .with_domain_radius(1.0)
}

/// `x ↦ (sin x, cos x - 1)`, the unit circle through the origin.
pub fn circle() -> DifferentiableMap {
    DifferentiableMap::new("circle", 1, 2, |x| Ok(v(&[x[0].sin(), x[0].cos() - 1.0])))
        .with_jacobian(|x| Ok(DMatrix::from_column_slice(2, 1, &[x[0].cos(), -x[0].sin()])))
        .with_lipschitz(1.0)
}

/// `(y₁, y₂) ↦ y₁² + (y₂ + 1)² - 1`.
pub fn circle_constraint() -> DifferentiableMap {
    DifferentiableMap::new("circle constraint", 2, 1, |y| Ok(v(&[y[0] * y[0] + (y[1] + 1.0).powi(2) - 1.0])))
        .with_jacobian(|y| Ok(DMatrix::from_row_slice(1, 2, &[2.0 * y[0], 2.0 * (y[1] + 1.0)])))
        .with_lipschitz(2.0)
}

/// Looks up a built-in `(φ, ψ)` pair by name.
pub fn builtin_pair(name: &str) -> Option<(DifferentiableMap, DifferentiableMap)> {
    match name {
        "parabola" => Some((parabola(), parabola_constraint())),
        "circle" => Some((circle(), circle_constraint())),
        _ => None,
    }
}

/// Truncation to `N` coordinates of `ψ(v) = |v| v + A v` with
/// `A e_n = -(1/n) e_n`, paired with `φ ≡ 0` on the zero space.
///
/// `dψ(0) = A` is injective on every truncation, but its smallest singular
/// value is `1/N`, so the certified radius collapses as `N` grows.
pub fn shrinking_radius_maps(n: usize) -> (DifferentiableMap, DifferentiableMap) {
    assert!(n >= 1, "truncation size must be positive");
    let phi = DifferentiableMap::new("zero", 0, n, move |_| Ok(DVector::zeros(n)))
        .with_jacobian(move |_| Ok(DMatrix::zeros(n, 0)))
        .with_lipschitz(0.0)
        .with_domain_radius(1.0);
    let a = DVector::from_fn(n, |i, _| -1.0 / (i + 1) as f64);
    let a_jac = a.clone();
    // The derivative of v ↦ |v| v is |v| I + v vᵀ/|v|, which is 3-Lipschitz.
    let psi = DifferentiableMap::new("truncated counterexample", n, n, move |y| {
        Ok(y * y.norm() + a.component_mul(y))
    })
    .with_jacobian(move |y| {
        let r = y.norm();
        let mut j = DMatrix::from_diagonal(&a_jac);
        if r > 0.0 {
            j += DMatrix::identity(n, n) * r + y * y.transpose() / r;
        }
        Ok(j)
    })
    .with_lipschitz(3.0)
    .with_domain_radius(1.0);
    (phi, psi)
}

/// Certified radius of the `N`-coordinate truncation.
pub fn shrinking_radius_demo(n: usize) -> Result<f64> {
    Ok(shrinking_radius_constants(n)?.w_radius)
}

pub fn shrinking_radius_constants(n: usize) -> Result<IftConstants> {
    let (phi, psi) = shrinking_radius_maps(n);
    certify_neighborhood(&phi, &psi)
}

#[cfg(test)]
mod tests {
    use super::super::central_difference_jacobian;
    use super::*;

    #[test]
    fn declared_jacobians_match_differences() {
        let maps = [parabola(), scaled_parabola(), doubled_parabola(), parabola_constraint(), circle(), circle_constraint()];
        let points = [-0.4, -0.05, 0.0, 0.013, 0.3];
        for map in &maps {
            for &p in &points {
                let x = DVector::from_element(map.domain_dim(), p) + DVector::from_fn(map.domain_dim(), |i, _| 0.1 * i as f64);
                let declared = map.jacobian(&x).unwrap().into_matrix();
                let fd = central_difference_jacobian(map, &x, 1e-5).unwrap();
                let err = (&declared - &fd).norm();
                assert!(err <= 1e-6 * declared.norm().max(1.0), "{}: {err}", map.name());
            }
        }
        for n in [1, 4] {
            let (_, psi) = shrinking_radius_maps(n);
            let x = DVector::from_fn(n, |i, _| 0.1 + 0.05 * i as f64);
            let declared = psi.jacobian(&x).unwrap().into_matrix();
            let fd = central_difference_jacobian(&psi, &x, 1e-5).unwrap();
            assert!((&declared - &fd).norm() <= 1e-6 * declared.norm());
        }
    }

    #[test]
    fn shrinking_radius_first_term() {
        let c = shrinking_radius_constants(1).unwrap();
        assert_eq!(c.cmax, 1.0);
        assert!(c.c1_vacuous);
        assert_eq!(c.delta, 1.0 / 18.0);
        assert_eq!(c.w_radius, 1.0 / 162.0);
    }

    #[test]
    fn shrinking_radius_decreases() {
        let radii: Vec<f64> = (1..=10).map(|n| shrinking_radius_demo(n).unwrap()).collect();
        assert!(radii.windows(2).all(|w| w[1] < w[0]));
        assert!(radii[9] < radii[0]);
    }

    #[test]
    fn truncation_has_a_nonzero_zero() {
        for n in 1..=10 {
            let (_, psi) = shrinking_radius_maps(n);
            let mut p = DVector::zeros(n);
            p[n - 1] = 1.0 / n as f64;
            assert!(psi.eval(&p).unwrap().norm() < 1e-15);
        }
    }

    #[test]
    fn circle_constant_is_two() {
        let c = certify_neighborhood(&circle(), &circle_constraint()).unwrap();
        assert_eq!(c.c2, 0.5);
        assert_eq!(c.cmax, 2.0);
        assert_eq!(c.delta, 1.0 / 96.0);
    }

    #[test]
    fn lookup() {
        assert!(builtin_pair("parabola").is_some());
        assert!(builtin_pair("hyperbola").is_none());
    }
}
