//! Example representations used by the tests, benchmarks and CLI demos.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::liegroup::{exp, rotation2, GroupElement, MatrixGroup, Representation};
use crate::words::Presentation;

pub fn cyclic_presentation(n: usize) -> Presentation {
    Presentation::from_strs(&["a"], &[&format!("a^{n}")]).unwrap()
}

/// `⟨a | aⁿ, a²ⁿ⟩`, whose second relator is redundant.
pub fn redundant_cyclic_presentation(n: usize) -> Presentation {
    Presentation::from_strs(&["a"], &[&format!("a^{n}"), &format!("a^{}", 2 * n)]).unwrap()
}

pub fn free_presentation(rank: usize) -> Presentation {
    let names: Vec<String> = (1..=rank).map(|i| format!("x{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Presentation::from_strs(&refs, &[]).unwrap()
}

/// `⟨a₁, b₁, …, a_g, b_g | [a₁, b₁]⋯[a_g, b_g]⟩`.
pub fn surface_presentation(genus: usize) -> Presentation {
    let names: Vec<String> = (1..=genus).flat_map(|i| [format!("a{i}"), format!("b{i}")]).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let relator: Vec<String> =
        (1..=genus).map(|i| format!("a{i} b{i} a{i}^-1 b{i}^-1")).collect();
    Presentation::from_strs(&refs, &[&relator.join(" ")]).unwrap()
}

/// `Z/n → SO(2)`, generator to the rotation by `2π/n`.
pub fn cyclic_rotation(n: usize) -> Representation {
    Representation::new(cyclic_presentation(n), MatrixGroup::so(2), vec![rotation2(2.0 * PI / n as f64)]).unwrap()
}

/// `Z/n → GL(2)` by the same rotation; conjugation now acts nontrivially.
pub fn cyclic_gl2(n: usize) -> Representation {
    Representation::new(cyclic_presentation(n), MatrixGroup::gl(2), vec![rotation2(2.0 * PI / n as f64)]).unwrap()
}

/// `⟨a | aⁿ, a²ⁿ⟩ → SO(2)` by the rotation by `2π/n`.
pub fn redundant_cyclic_rotation(n: usize) -> Representation {
    Representation::new(redundant_cyclic_presentation(n), MatrixGroup::so(2), vec![rotation2(2.0 * PI / n as f64)])
        .unwrap()
}

/// `Z → SL(2)`, generator to `diag(2, 1/2)`.
pub fn hyperbolic_z() -> Representation {
    let g = GroupElement::new(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]))).unwrap();
    Representation::new(free_presentation(1), MatrixGroup::sl(2), vec![g]).unwrap()
}

/// `⟨s | s⟩ → SO(2)`.
pub fn trivial_group() -> Representation {
    let p = Presentation::from_strs(&["s"], &["s"]).unwrap();
    Representation::new(p, MatrixGroup::so(2), vec![GroupElement::identity(2)]).unwrap()
}

/// The free group of the given rank into `SO(3)` with random images.
pub fn free_so3(rank: usize, seed: u64) -> Representation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let so3 = MatrixGroup::so(3);
    let images = (0..rank).map(|_| so3.exp_coords(&random_vector(&mut rng, 3, 1.0))).collect();
    Representation::new(free_presentation(rank), so3, images).unwrap()
}

fn random_vector(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-scale..scale))
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    loop {
        let v = random_vector(rng, d, 1.0);
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Surface group of the given genus in `SO(3)`: each pair `a_i, b_i` are
/// rotations about a common random axis, so every commutator is trivial.
pub fn surface_group_so3(genus: usize, seed: u64) -> Representation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let so3 = MatrixGroup::so(3);
    let mut images = Vec::new();
    for _ in 0..genus {
        let axis = random_unit(&mut rng, 3);
        for _ in 0..2 {
            images.push(so3.exp_coords(&(&axis * rng.random_range(0.3..2.5))));
        }
    }
    Representation::new(surface_presentation(genus), so3, images).unwrap()
}

/// `⟨a, b | a b a⁻¹ b⁻¹⟩ → SO(3)` by two rotations about one random axis.
pub fn torus_so3(seed: u64) -> Representation {
    torus_so3_perturbed(seed, 0.0)
}

/// The torus representation with its axis tilted and angles shifted by `eps`.
pub fn torus_so3_perturbed(seed: u64, eps: f64) -> Representation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let so3 = MatrixGroup::so(3);
    let axis = random_unit(&mut rng, 3);
    let angles = [rng.random_range(0.3..2.5), rng.random_range(0.3..2.5)];
    let tilt = random_unit(&mut rng, 3);
    let axis = (&axis + &tilt * eps).normalize();
    let images = angles.iter().map(|&t| so3.exp_coords(&(&axis * (t + eps)))).collect();
    Representation::new(surface_presentation(1), so3, images).unwrap()
}

/// `exp(η) r exp(-η)` for a seeded random `η` of the given coordinate norm.
pub fn conjugated(rep: &Representation, size: f64, seed: u64) -> Representation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let group = rep.group();
    let eta = random_unit(&mut rng, group.dim()) * size;
    let h = exp(&group.basis().to_matrix(&eta));
    rep.conjugate(&h).unwrap()
}

/// Every fixture representation with a short label.
pub fn corpus() -> Vec<(String, Representation)> {
    let mut out: Vec<(String, Representation)> =
        [2, 3, 6].iter().map(|&n| (format!("Z/{n} -> SO(2)"), cyclic_rotation(n))).collect();
    out.push(("Z/3 -> GL(2)".into(), cyclic_gl2(3)));
    out.push(("Z -> SL(2) hyperbolic".into(), hyperbolic_z()));
    out.push(("trivial group".into(), trivial_group()));
    out.push(("<a | a^3, a^6> -> SO(2)".into(), redundant_cyclic_rotation(3)));
    out.push(("torus -> SO(3)".into(), torus_so3(1)));
    out.push(("genus 2 -> SO(3)".into(), surface_group_so3(2, 2)));
    out.push(("F2 -> SO(3)".into(), free_so3(2, 3)));
    out
}
