//! Acceptance suite. Runs every criterion, prints one line each, and exits
//! nonzero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rigift::cohomology::{self, CoboundaryPair, GammaModule};
use rigift::ift::charts::{circle, circle_constraint, parabola, parabola_constraint, shrinking_radius_demo};
use rigift::ift::{certify_neighborhood, central_difference_jacobian, solve_fiber, DifferentiableMap, FiberOptions};
use rigift::linops::{exactness_transfer, operator_norm, surjective_perturbation_solve, LinearOperator, RankTolerance};
use rigift::rigidity::fixtures::{self, conjugated, corpus, cyclic_gl2, cyclic_rotation, hyperbolic_z};
use rigift::rigidity::{build_phi, build_psi, check_local_rigidity, recover_conjugator, RecoverOptions, RigidityOptions};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit, || format!("took {:.2}s, limit {limit}s", elapsed.as_secs_f64()))
}

fn halving_law() -> Outcome {
    let start = Instant::now();
    let mut solves = 0;
    for (label, phi, psi, seed) in
        [("parabola", parabola(), parabola_constraint(), 1u64), ("circle", circle(), circle_constraint(), 2)]
    {
        let c = certify_neighborhood(&phi, &psi).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut targets = 0;
        while targets < 100 {
            let t = rng.random_range(-1.0..1.0) * c.w_radius;
            let y = phi.eval(&DVector::from_element(1, t)).map_err(|e| e.to_string())?;
            if y.norm() >= c.w_radius {
                continue;
            }
            targets += 1;
            let (x, trace) = solve_fiber(&phi, &psi, &y, &c, &FiberOptions::default())
                .map_err(|e| format!("{label}: {e}"))?;
            let u = &trace.u_norms;
            for n in 1..u.len().saturating_sub(1) {
                ensure(u[n + 1] <= 0.5 * u[n] + 1e-12, || format!("{label}: |u_{}| = {:e} > |u_{n}|/2", n + 1, u[n + 1]))?;
            }
            for (n, v) in trace.v_norms.iter().enumerate() {
                ensure(*v <= 2.0 * c.cmax.powi(3) * u[n], || format!("{label}: step bound fails at {n}"))?;
            }
            let residual = (phi.eval(&x).map_err(|e| e.to_string())? - &y).norm();
            ensure(residual <= 1e-9, || format!("{label}: residual {residual:e}"))?;
            ensure(x.norm() < c.delta / 2.0, || format!("{label}: |x| = {:e} >= δ/2", x.norm()))?;
            solves += 1;
        }
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("{solves} solves, {:.3}s", start.elapsed().as_secs_f64()))
}

fn constant_formulas() -> Outcome {
    let c = certify_neighborhood(&parabola(), &parabola_constraint()).map_err(|e| e.to_string())?;
    let delta = 1.0f64.min(1.0 / 12.0);
    let checks = [("C", c.cmax, 1.0), ("δ", c.delta, delta), ("w_radius", c.w_radius, delta / 9.0)];
    for (name, got, want) in checks {
        ensure((got - want).abs() <= 1e-15, || format!("{name} = {got:e}, expected {want:e}"))?;
    }
    Ok(format!("C = {}, δ = {}, w_radius = {}", c.cmax, c.delta, c.w_radius))
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn perturbation_solver() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let m = rng.random_range(1..=8);
        let n = rng.random_range(m..=12);
        let f = LinearOperator::new(random_matrix(&mut rng, m, n)).unwrap();
        let sigma_min = f.matrix().clone().svd(false, false).singular_values.min();
        let g_raw = LinearOperator::new(random_matrix(&mut rng, m, n)).unwrap();
        let ratio = rng.random_range(0.0..0.9);
        let g = LinearOperator::new(g_raw.matrix() * (ratio * sigma_min / operator_norm(&g_raw).unwrap())).unwrap();
        let v = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let sol = surjective_perturbation_solve(&f, &g, &v, 1e-12).map_err(|e| format!("trial {trial}: {e}"))?;
        let a = sol.contraction;
        for (k, r) in sol.residuals.iter().enumerate() {
            let bound = a.powi(k as i32 + 1) * v.norm() * (1.0 + 1e-9);
            ensure(*r <= bound, || format!("trial {trial}: term {k} residual {r:e} > {bound:e}"))?;
        }
        // least-squares oracle: the minimum-norm solution A^T (A A^T)^{-1} v
        let a_mat = f.matrix() + g.matrix();
        let gram = (&a_mat * a_mat.transpose()).cholesky().ok_or("oracle Gram matrix is singular")?;
        let oracle = a_mat.transpose() * gram.solve(&v);
        let projected = a_mat.transpose() * gram.solve(&(&a_mat * &sol.solution));
        let err = (&projected - &oracle).norm() / oracle.norm().max(1.0);
        worst = worst.max(err);
        ensure(err <= 1e-8, || format!("trial {trial}: oracle mismatch {err:e}"))?;
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("100 trials, worst oracle gap {worst:.2e}, {:.3}s", start.elapsed().as_secs_f64()))
}

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    random_matrix(rng, n, n).qr().q()
}

fn exactness_transfer_halves() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut max_steps = 0;
    for trial in 0..100 {
        let q = random_orthogonal(&mut rng, 3);
        let f = q.columns(0, 1).into_owned();
        let g = q.columns(1, 2).transpose();
        let h = random_matrix(&mut rng, 3, 1);
        let h = &h * (rng.random_range(0.0..0.045) / h.norm());
        let f_tilde = &f + &h;
        let proj = DMatrix::identity(3, 3) - &f_tilde * f_tilde.transpose() / f_tilde.norm_squared();
        let g_tilde = &g * proj;
        let df = operator_norm(&LinearOperator::new(&f - &f_tilde).unwrap()).unwrap();
        let dg = operator_norm(&LinearOperator::new(&g - &g_tilde).unwrap()).unwrap();
        ensure(df <= 0.05 && dg <= 0.05, || format!("trial {trial}: fixture perturbation {df:e}, {dg:e}"))?;
        let v: DVector<f64> = f_tilde.column(0) * rng.random_range(-2.0..2.0);
        let ops = [f.clone(), g.clone(), f_tilde.clone(), g_tilde.clone()].map(|m| LinearOperator::new(m).unwrap());
        let out = exactness_transfer(&ops[0], &ops[1], &ops[2], &ops[3], &v, 1e-12).map_err(|e| format!("trial {trial}: {e}"))?;
        for w in out.v_norms.windows(2) {
            ensure(w[1] <= 0.5 * w[0], || format!("trial {trial}: {:e} -> {:e} does not halve", w[0], w[1]))?;
        }
        let err = (&f_tilde * &out.solution - &v).norm();
        ensure(err <= 1e-8, || format!("trial {trial}: |f̃x - v| = {err:e}"))?;
        max_steps = max_steps.max(out.v_norms.len() - 1);
    }
    Ok(format!("100 trials, at most {max_steps} steps"))
}

fn complex_identity() -> Outcome {
    let tol = RankTolerance::default();
    let mut worst: f64 = 0.0;
    for (label, rep) in corpus() {
        let module = GammaModule::from_representation(&rep).map_err(|e| e.to_string())?;
        let all: Vec<usize> = (0..rep.presentation().relators().len()).collect();
        let pair = CoboundaryPair::new(&module, rep.presentation(), &all).map_err(|e| e.to_string())?;
        let (norm, allowed) = pair.complex_defect();
        ensure(norm <= allowed, || format!("{label}: |δ¹δ⁰| = {norm:e} > {allowed:e}"))?;
        worst = worst.max(norm);
        cohomology::assemble(&module, rep.presentation(), &tol).map_err(|e| format!("{label}: {e}"))?;
    }
    Ok(format!("{} representations, max |δ¹δ⁰| = {worst:.2e}", corpus().len()))
}

fn max_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64, String> {
    ensure(a.shape() == b.shape(), || format!("shape {:?} vs {:?}", a.shape(), b.shape()))?;
    Ok(a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

fn fd_at_origin(map: &DifferentiableMap) -> Result<DMatrix<f64>, String> {
    central_difference_jacobian(map, &DVector::zeros(map.domain_dim()), 1e-5).map_err(|e| e.to_string())
}

fn differential_agreement() -> Outcome {
    let start = Instant::now();
    let tol = RankTolerance::default();
    let mut worst: f64 = 0.0;
    for (label, rep) in corpus() {
        let module = GammaModule::from_representation(&rep).map_err(|e| e.to_string())?;
        let subset = cohomology::saturate_relators(&module, rep.presentation(), &tol).map_err(|e| e.to_string())?;
        let d0 = cohomology::delta0(&module, rep.presentation()).map_err(|e| e.to_string())?;
        let d1 = cohomology::delta1(&module, rep.presentation(), &subset).map_err(|e| e.to_string())?;
        let gap0 = max_gap(&fd_at_origin(&build_phi(&rep))?, d0.matrix())?;
        let gap1 = max_gap(&fd_at_origin(&build_psi(&rep, &subset))?, d1.matrix())?;
        ensure(gap0 <= 1e-6, || format!("{label}: dφ gap {gap0:e}"))?;
        ensure(gap1 <= 1e-6, || format!("{label}: dψ gap {gap1:e}"))?;
        worst = worst.max(gap0).max(gap1);
    }
    within(start.elapsed(), 10.0)?;
    Ok(format!("max entry gap {worst:.2e}, {:.3}s", start.elapsed().as_secs_f64()))
}

fn rigidity_verdicts() -> Outcome {
    let opts = RigidityOptions { certify: false, ..RigidityOptions::default() };
    let r = check_local_rigidity(&cyclic_rotation(3), &opts).map_err(|e| e.to_string())?;
    ensure(r.h1_dim == 0 && r.rigid, || format!("Z/3 -> SO(2): h1 = {}, rigid = {}", r.h1_dim, r.rigid))?;
    let s = check_local_rigidity(&hyperbolic_z(), &opts).map_err(|e| e.to_string())?;
    ensure(s.h1_dim == 1 && !s.rigid, || format!("Z -> SL(2): h1 = {}, rigid = {}", s.h1_dim, s.rigid))?;
    Ok("Z/3 -> SO(2): h1 = 0 rigid; Z -> SL(2) diag(2, 1/2): h1 = 1 not rigid".into())
}

fn conjugator_recovery() -> Outcome {
    let rep = cyclic_gl2(3);
    let opts = RecoverOptions { override_radius: true, ..RecoverOptions::default() };
    let same = recover_conjugator(&rep, &rep, &opts).map_err(|e| e.to_string())?;
    let id_gap = (same.g.matrix() - DMatrix::<f64>::identity(2, 2)).amax();
    ensure(id_gap <= 1e-12, || format!("r' = r gave g with |g - I| = {id_gap:e}"))?;
    let mut notes = Vec::new();
    for size in [1e-4, 1e-3] {
        for seed in 0..5 {
            let rep_prime = conjugated(&rep, size, seed);
            let c = recover_conjugator(&rep, &rep_prime, &opts).map_err(|e| format!("|η| = {size:e}: {e}"))?;
            ensure(c.residual <= 1e-8, || format!("|η| = {size:e}: residual {:e}", c.residual))?;
            if seed == 0 {
                let place = if c.inside_certified { "inside" } else { "outside" };
                notes.push(format!("|η| = {size:e}: residual {:.1e}, target {place} W = {:.1e}", c.residual, c.w_radius));
            }
        }
    }
    Ok(notes.join("; "))
}

fn shrinking_radius() -> Outcome {
    let radii: Vec<f64> = (1..=10).map(shrinking_radius_demo).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    for (n, w) in radii.windows(2).enumerate() {
        ensure(w[1] < w[0], || format!("radius at N = {} is not below N = {}", n + 2, n + 1))?;
    }
    Ok(format!("w(1) = {:.3e} ... w(10) = {:.3e}", radii[0], radii[9]))
}

fn saturation_soundness() -> Outcome {
    let tol = RankTolerance::default();
    let mut cases: Vec<(String, GammaModule, rigift::words::Presentation)> = corpus()
        .into_iter()
        .map(|(label, rep)| (label, GammaModule::from_representation(&rep).unwrap(), rep.presentation().clone()))
        .collect();
    for n in 2..=6 {
        cases.push((format!("<a | a^{n}, a^{}> trivial", 2 * n), GammaModule::trivial(1, 1), fixtures::redundant_cyclic_presentation(n)));
    }
    for (label, module, pres) in &cases {
        let all: Vec<usize> = (0..pres.relators().len()).collect();
        let subset = cohomology::saturate_relators(module, pres, &tol).map_err(|e| e.to_string())?;
        let full = CoboundaryPair::new(module, pres, &all).map_err(|e| e.to_string())?;
        let part = CoboundaryPair::new(module, pres, &subset).map_err(|e| e.to_string())?;
        let nullity = |p: &CoboundaryPair| p.d1.domain_dim() - cohomology::scaled_rank(&p.d1, p.d1_scale, &tol);
        ensure(nullity(&full) == nullity(&part), || format!("{label}: {} vs {}", nullity(&part), nullity(&full)))?;
        if label.contains("trivial") {
            ensure(subset == vec![0], || format!("{label}: subset {subset:?}"))?;
        }
    }
    Ok(format!("{} presentations", cases.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("halving law", halving_law),
        ("constant formulas", constant_formulas),
        ("perturbation solver", perturbation_solver),
        ("exactness transfer", exactness_transfer_halves),
        ("complex identity", complex_identity),
        ("differential agreement", differential_agreement),
        ("rigidity verdicts", rigidity_verdicts),
        ("conjugator recovery", conjugator_recovery),
        ("shrinking radius", shrinking_radius),
        ("saturation soundness", saturation_soundness),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
