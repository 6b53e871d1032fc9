//! `rigift`: cohomology, local rigidity and fiber solves from the command line.

mod report;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rigift::cohomology::{self, CohomologyError, GammaModule};
use rigift::ift::{self, charts, IftConstants, IterationTrace};
use rigift::liegroup::{LieError, Representation};
use rigift::rigidity::{self, RecoverOptions, RigidityError, RigidityOptions};
use rigift::words::Presentation;
use rigift::{FiberOptions, IftError, RankTolerance};

use report::{flag, list, matrix, num, Format, Report};

#[derive(Parser, Debug)]
#[command(name = "rigift", version, about = "Group cohomology, local rigidity and implicit-function fiber solves")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalOpts {
    /// Output style.
    #[arg(long, value_enum, default_value = "human", global = true)]
    format: Format,
    /// Convergence tolerance for fiber solves and conjugation residuals.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Relative singular value cutoff for numerical rank.
    #[arg(long, env = "RIGIFT_RANK_TOL", global = true)]
    rank_tol: Option<f64>,
    /// Step for finite-difference Jacobian checks.
    #[arg(long, global = true)]
    fd_step: Option<f64>,
    /// Seed for sampled checks and Lipschitz estimates.
    #[arg(long, default_value_t = 0, global = true)]
    seed: u64,
    /// Treat borderline numerical ranks as a failure.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dimension of H¹ for the adjoint module of a representation, or a trivial module.
    Cohomology {
        presentation: PathBuf,
        /// Representation file; omit and pass `--trivial-dim` for a trivial module.
        representation: Option<PathBuf>,
        #[arg(long, conflicts_with = "representation")]
        trivial_dim: Option<usize>,
    },
    /// Local rigidity verdict, plus a conjugator when a perturbed representation is given.
    Rigidity {
        presentation: PathBuf,
        representation: PathBuf,
        perturbed: Option<PathBuf>,
        /// Solve even when the perturbation lies outside the certified radius.
        #[arg(long)]
        override_radius: bool,
    },
    /// Solve φ(x) = y on a built-in chart pair.
    SolveFiber {
        /// `parabola` or `circle`.
        chart: String,
        #[arg(required = true, allow_negative_numbers = true)]
        target: Vec<f64>,
        #[arg(long)]
        override_radius: bool,
        #[arg(long, default_value_t = 200)]
        max_iterations: usize,
    },
    /// Worked examples: `parabola`, `circle`, `shrinking-radius`.
    Demo {
        name: String,
        /// Parabola target abscissa.
        #[arg(long, default_value_t = 0.01, allow_negative_numbers = true)]
        a: f64,
        /// Circle target angle.
        #[arg(long, default_value_t = 0.02, allow_negative_numbers = true)]
        theta: f64,
        /// Largest truncation for the shrinking-radius table.
        #[arg(long, default_value_t = 10)]
        n_max: usize,
    },
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Validation(String),
    Ambiguous(String),
    Recovery(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Ambiguous(_) => 3,
            Failure::Recovery(_) => 5,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            Failure::Input(m) => ("input error", m),
            Failure::Validation(m) => ("validation failed", m),
            Failure::Ambiguous(m) => ("rank ambiguity", m),
            Failure::Recovery(m) => ("conjugator recovery failed", m),
        };
        write!(f, "{kind}: {msg}")
    }
}

fn lie_failure(path: &Path, e: LieError) -> Failure {
    match e {
        LieError::Parse { .. } | LieError::UnknownGroup(_) => Failure::Input(format!("{}: {e}", path.display())),
        _ => Failure::Validation(format!("{}: {e}", path.display())),
    }
}

fn cohomology_failure(e: CohomologyError) -> Failure {
    match e {
        CohomologyError::Lie(l) => Failure::Validation(l.to_string()),
        e => Failure::Validation(e.to_string()),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load_presentation(path: &Path) -> Result<Presentation, Failure> {
    read(path)?.parse().map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load_representation(path: &Path, pres: &Presentation) -> Result<Representation, Failure> {
    Representation::parse(&read(path)?, pres).map_err(|e| lie_failure(path, e))
}

impl GlobalOpts {
    fn rank_tol(&self) -> RankTolerance {
        self.rank_tol.map(RankTolerance::with_relative).unwrap_or_default()
    }

    fn rigidity(&self) -> RigidityOptions {
        let mut o = RigidityOptions { rank_tol: self.rank_tol(), seed: self.seed, ..RigidityOptions::default() };
        if let Some(h) = self.fd_step {
            o.fd_step = h;
        }
        o
    }

    fn fiber(&self, override_radius: bool) -> FiberOptions {
        FiberOptions { tol: self.tol, override_radius, ..FiberOptions::default() }
    }

    fn check_warnings(&self, warnings: &[String]) -> Result<(), Failure> {
        if self.strict && !warnings.is_empty() {
            return Err(Failure::Ambiguous(warnings.join("; ")));
        }
        Ok(())
    }
}

fn cmd_cohomology(g: &GlobalOpts, pres_path: &Path, rep_path: Option<&Path>, trivial_dim: Option<usize>) -> Result<(Report, u8), Failure> {
    let pres = load_presentation(pres_path)?;
    let (module, label) = match (rep_path, trivial_dim) {
        (Some(p), _) => {
            let rep = load_representation(p, &pres)?;
            let m = GammaModule::from_representation(&rep).map_err(cohomology_failure)?;
            (m, format!("adjoint ({})", rep.group().key()))
        }
        (None, Some(d)) => (GammaModule::trivial(pres.num_generators(), d), "trivial".to_string()),
        (None, None) => return Err(Failure::Input("give a representation file or --trivial-dim".into())),
    };
    let tol = g.rank_tol();
    let pair = cohomology::assemble(&module, &pres, &tol).map_err(cohomology_failure)?;
    let (h1, details) = pair.h1(&tol).map_err(cohomology_failure)?;

    let mut r = Report::new();
    r.field("module", label)
        .field("module_dim", module.dim().to_string())
        .field("generators", pres.num_generators().to_string())
        .field("relators", pres.relators().len().to_string())
        .field("relator_subset", list(&pair.relator_subset))
        .field("rank_d0", details.d0.rank.to_string())
        .field("rank_d1", details.d1.rank.to_string())
        .field("nullity_d1", details.d1.nullity.to_string())
        .field("threshold_d0", num(details.d0.threshold))
        .field("threshold_d1", num(details.d1.threshold))
        .field("h1_dim", h1.to_string());
    for w in &details.warnings {
        r.field("warning", w.clone());
    }
    g.check_warnings(&details.warnings)?;
    Ok((r, 0))
}

fn rigidity_failure(e: RigidityError) -> Failure {
    match e {
        RigidityError::Lie(l) => Failure::Validation(l.to_string()),
        e => Failure::Validation(e.to_string()),
    }
}

fn cmd_rigidity(
    g: &GlobalOpts,
    pres_path: &Path,
    rep_path: &Path,
    perturbed: Option<&Path>,
    override_radius: bool,
) -> Result<(Report, u8), Failure> {
    let pres = load_presentation(pres_path)?;
    let rep = load_representation(rep_path, &pres)?;
    let rep_prime = perturbed.map(|p| load_representation(p, &pres)).transpose()?;
    let opts = RecoverOptions {
        tol: g.tol.unwrap_or(RecoverOptions::default().tol),
        override_radius,
        rigidity: g.rigidity(),
        fiber: g.fiber(override_radius),
    };
    let rep_report = rigidity::check_local_rigidity(&rep, &opts.rigidity).map_err(rigidity_failure)?;

    let mut r = Report::new();
    r.field("group", rep.group().key())
        .field("generators", rep_report.num_generators.to_string())
        .field("relators", rep_report.num_relators.to_string())
        .field("module_dim", rep_report.module_dim.to_string())
        .field("relator_subset", list(&rep_report.relator_subset))
        .field("rank_d0", rep_report.rank_d0.to_string())
        .field("rank_d1", rep_report.rank_d1.to_string())
        .field("nullity_d1", rep_report.nullity_d1.to_string())
        .field("h1_dim", rep_report.h1_dim.to_string())
        .field("rigid", flag(rep_report.rigid))
        .field("closed_image", if rep_report.closed_image_automatic { "automatic" } else { "unchecked" });
    match (rep_report.certified_radius, &rep_report.certification_note) {
        (Some(w), _) => r.field("certified_radius", num(w)),
        (None, Some(note)) => r.field("certified_radius", format!("none ({note})")),
        (None, None) => r.field("certified_radius", "none"),
    };
    for w in &rep_report.warnings {
        r.field("warning", w.clone());
    }
    g.check_warnings(&rep_report.warnings)?;

    if !rep_report.rigid {
        return Ok((r, 4));
    }
    if let Some(rep_prime) = rep_prime {
        let c = rigidity::recover_conjugator(&rep, &rep_prime, &opts).map_err(|e| match e {
            RigidityError::Incompatible(_) => rigidity_failure(e),
            e => Failure::Recovery(e.to_string()),
        })?;
        r.field("perturbation_norm", num(c.target_norm))
            .field("inside_certified", flag(c.inside_certified))
            .field("iterations", c.trace.iterations.to_string())
            .field("conjugator", matrix(c.g.matrix()))
            .field("conjugation_residual", num(c.residual));
    }
    Ok((r, 0))
}

fn trace_rows(trace: &IterationTrace) -> Vec<Vec<String>> {
    (0..trace.u_norms.len())
        .map(|n| {
            let ratio = if n > 0 && trace.u_norms[n - 1] > 0.0 {
                num(trace.u_norms[n] / trace.u_norms[n - 1])
            } else {
                "-".to_string()
            };
            let v = trace.v_norms.get(n).map_or("-".to_string(), |v| num(*v));
            vec![n.to_string(), num(trace.u_norms[n]), v, ratio]
        })
        .collect()
}

fn constants_fields(r: &mut Report, c: &IftConstants) {
    r.field("C", num(c.cmax))
        .field("L", format!("{}{}", num(c.lipschitz), if c.lipschitz_heuristic { " (sampled)" } else { "" }))
        .field("delta", num(c.delta))
        .field("certified_radius", num(c.w_radius));
}

fn fiber_solve(g: &GlobalOpts, chart: &str, y: DVector<f64>, override_radius: bool, max_iterations: usize) -> Result<(Report, u8), Failure> {
    let (phi, psi) = charts::builtin_pair(chart)
        .ok_or_else(|| Failure::Input(format!("unknown chart `{chart}` (choose from {})", charts::BUILTIN_PAIRS.join(", "))))?;
    let constants = ift::certify_neighborhood_with(&phi, &psi, &ift::CertifyOptions { rank_tol: g.rank_tol(), ..Default::default() })
        .map_err(|e| Failure::Validation(e.to_string()))?;
    let opts = FiberOptions { max_iterations, ..g.fiber(override_radius) };
    let mut r = Report::new();
    r.field("chart", chart)
        .field("target", y.iter().map(|v| num(*v)).collect::<Vec<_>>().join(" "))
        .field("target_norm", num(y.norm()));
    constants_fields(&mut r, &constants);
    r.field("inside_certified", flag(y.norm() < constants.w_radius));
    let (x, trace) = ift::solve_fiber(&phi, &psi, &y, &constants, &opts).map_err(|e| match e {
        IftError::Diverged { .. } | IftError::MaxIterations(_) => Failure::Recovery(e.to_string()),
        e => Failure::Validation(e.to_string()),
    })?;
    r.field("solution", x.iter().map(|v| num(*v)).collect::<Vec<_>>().join(" "))
        .field("iterations", trace.iterations.to_string())
        .field("halving", match trace.halving_violation(1e-12) {
            None => "holds".to_string(),
            Some(n) => format!("violated at step {n}"),
        })
        .table("trace", &["n", "u_norm", "v_norm", "ratio"], trace_rows(&trace));
    Ok((r, 0))
}

fn cmd_demo(g: &GlobalOpts, name: &str, a: f64, theta: f64, n_max: usize) -> Result<(Report, u8), Failure> {
    match name {
        "parabola" => fiber_solve(g, "parabola", DVector::from_column_slice(&[a, a * a]), true, 200),
        "circle" => {
            let (s, c) = theta.sin_cos();
            fiber_solve(g, "circle", DVector::from_column_slice(&[s, c - 1.0]), true, 200)
        }
        "shrinking-radius" => {
            if n_max == 0 {
                return Err(Failure::Input("--n-max must be at least 1".into()));
            }
            let rows = (1..=n_max)
                .map(|n| {
                    let c = charts::shrinking_radius_constants(n).map_err(|e| Failure::Validation(e.to_string()))?;
                    Ok(vec![n.to_string(), num(c.cmax), num(c.delta), num(c.w_radius)])
                })
                .collect::<Result<Vec<_>, Failure>>()?;
            let mut r = Report::new();
            r.field("demo", "shrinking-radius")
                .field("n_max", n_max.to_string())
                .table("radius", &["n", "C", "delta", "w"], rows);
            Ok((r, 0))
        }
        other => Err(Failure::Input(format!("unknown demo `{other}` (choose from parabola, circle, shrinking-radius)"))),
    }
}

fn run(cli: &Cli) -> Result<(Report, u8), Failure> {
    let g = &cli.global;
    match &cli.command {
        Command::Cohomology { presentation, representation, trivial_dim } => {
            cmd_cohomology(g, presentation, representation.as_deref(), *trivial_dim)
        }
        Command::Rigidity { presentation, representation, perturbed, override_radius } => {
            cmd_rigidity(g, presentation, representation, perturbed.as_deref(), *override_radius)
        }
        Command::SolveFiber { chart, target, override_radius, max_iterations } => {
            fiber_solve(g, chart, DVector::from_column_slice(target), *override_radius, *max_iterations)
        }
        Command::Demo { name, a, theta, n_max } => cmd_demo(g, name, *a, *theta, *n_max),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok((report, code)) => {
            print!("{}", report.render(cli.global.format));
            if code == 4 {
                eprintln!("not locally rigid");
            }
            ExitCode::from(code)
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
