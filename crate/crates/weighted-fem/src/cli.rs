//! Batch front-end: parse an experiment config, run the requested
//! operation, write artifacts, and map failures to exit codes
//! (2 validation, 3 divergence/solver).

use crate::analysis::{
    constants_report, convergence_study, poincare_constant, ritz_stability_constant,
    small_oscillation_check, Model,
};
use crate::config::{ExperimentConfig, NamedSpec, DEFAULT_SEED};
use crate::error::{Error, Result};
use crate::fem::{FemSpace, LinearCoefficient, ProblemData};
use crate::io::{config_hash, csv_with_provenance, json_with_provenance, vtk_string};
use crate::registry::{problem_from_name, registry_listing};
use crate::solvers::{
    check_structure, nonlinearity_from_name, solve_linear, solve_quasilinear, Nonlinearity,
    SolverOptions,
};
use crate::weights::{ap_characteristic, reverse_holder_probe};
use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "weighted-fem", version, about = "P1 FEM for quasilinear problems with Muckenhoupt-weighted data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (falls back to WEIGHTED_FEM_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem instance and write the field as VTK.
    Solve(RunArgs),
    /// Run a convergence study over a refinement hierarchy (CSV).
    Convergence(RunArgs),
    /// Discrete inf-sup constants per level plus C_delta/C_R/C_P (JSON).
    Infsup(RunArgs),
    /// Ritz projection stability constant (JSON).
    RitzStability(RunArgs),
    /// Muckenhoupt characteristic and reverse Hoelder probe (JSON).
    WeightCheck(RunArgs),
    /// Sampling audit of the structure assumptions (JSON).
    StructureCheck(RunArgs),
    /// Small-oscillation condition arithmetic (JSON).
    OscillationCheck(RunArgs),
    /// List built-in problems, nonlinearities, and weight families.
    Registry,
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // Help/version are successes, everything else is a usage error.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Registry => {
            print!("{}", registry_listing());
            Ok(())
        }
        Command::Solve(a) => with_config(a, cmd_solve),
        Command::Convergence(a) => with_config(a, cmd_convergence),
        Command::Infsup(a) => with_config(a, cmd_infsup),
        Command::RitzStability(a) => with_config(a, cmd_ritz),
        Command::WeightCheck(a) => with_config(a, cmd_weight_check),
        Command::StructureCheck(a) => with_config(a, cmd_structure_check),
        Command::OscillationCheck(a) => with_config(a, cmd_oscillation),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Parameter(_)
        | Error::InvalidPolygon(_)
        | Error::InvalidMesh(_)
        | Error::DegenerateWeight(_)
        | Error::Io(_) => 2,
        Error::Divergence(_)
        | Error::NonFiniteIntegrand(..)
        | Error::NonConvergence(_)
        | Error::LinearSolve(_)
        | Error::PointOutsideDomain(..) => 3,
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    hash: String,
    seed: u64,
    out: PathBuf,
    verbose: bool,
}

impl Ctx {
    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        std::fs::write(&path, contents)?;
        if self.verbose {
            println!("wrote {}", path.display());
        }
        Ok(path)
    }

    fn write_json<T: serde::Serialize>(&self, name: &str, report: &T) -> Result<PathBuf> {
        let value = json_with_provenance(report, &self.hash, self.seed);
        let mut text = serde_json::to_string_pretty(&value)
            .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
        text.push('\n');
        self.write(name, &text)
    }

    fn problem(&self) -> Result<ProblemData> {
        let spec = self
            .cfg
            .problem
            .as_ref()
            .ok_or_else(|| Error::Config("this command requires a \"problem\" entry".into()))?;
        let reg = problem_from_name(&spec.name, &spec.params)?;
        Ok(ProblemData {
            f: reg.f,
            g: reg.g,
            p: self.cfg.p,
            omega: self.cfg.weight(),
            singular_point: reg.singular_point,
        })
    }

    fn nonlinearity(&self, spec: &NamedSpec) -> Result<Nonlinearity> {
        nonlinearity_from_name(&spec.name, &spec.params)
    }

    fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            method: self.cfg.solver.method,
            rel_tol: self.cfg.solver.rel_tol,
            max_iter: self.cfg.solver.max_iter,
            continuation: self.cfg.solver.continuation,
            initial: None,
        }
    }
}

fn with_config(args: &RunArgs, body: fn(&Ctx) -> Result<()>) -> Result<()> {
    let threads = args.threads.or_else(|| {
        std::env::var("WEIGHTED_FEM_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(t) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let bytes = std::fs::read(&args.config).map_err(|e| {
        Error::Config(format!("cannot read {}: {e}", args.config.display()))
    })?;
    let origin = args
        .config
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| args.config.display().to_string());
    let cfg = ExperimentConfig::from_json(&bytes, &origin)?;
    let ctx = Ctx {
        hash: config_hash(&bytes),
        seed: args.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED),
        cfg,
        out: args.out.clone(),
        verbose: args.verbose,
    };
    body(&ctx)
}

fn cmd_solve(ctx: &Ctx) -> Result<()> {
    let mesh = ctx.cfg.mesh.build()?;
    let space = FemSpace::new(mesh);
    let data = ctx.problem()?;
    // Surface non-integrable data before spending time on assembly.
    data.validate_on(&space.mesh, &ctx.cfg.quadrature)?;
    let (field, report) = match &ctx.cfg.model {
        None => solve_linear(&space, &LinearCoefficient::identity(), &data, &ctx.cfg.quadrature)?,
        Some(spec) => {
            let nl = ctx.nonlinearity(spec)?;
            solve_quasilinear(&space, &nl, &data, &ctx.solver_options(), &ctx.cfg.quadrature)?
        }
    };
    println!(
        "solve: dofs={} iterations={} converged={} norm={:.6e}",
        space.num_dofs(),
        report.iterations,
        report.converged,
        report.final_weighted_norm
    );
    let values = field.vertex_values();
    let provenance = format!(
        "weighted-fem artifact_version=1 config_sha256={} seed={}",
        ctx.hash, ctx.seed
    );
    ctx.write("solution.vtk", &vtk_string(&space.mesh, &[("u", &values)], &provenance))?;
    ctx.write_json("solve_report.json", &report)?;
    Ok(())
}

fn cmd_convergence(ctx: &Ctx) -> Result<()> {
    let base = ctx.cfg.mesh.build()?;
    let spec = ctx
        .cfg
        .problem
        .as_ref()
        .ok_or_else(|| Error::Config("convergence requires a \"problem\" entry".into()))?;
    let reg = problem_from_name(&spec.name, &spec.params)?;
    let data = ctx.problem()?;
    let model = match &ctx.cfg.model {
        None => Model::Linear(LinearCoefficient::identity()),
        Some(m) => Model::Quasilinear(ctx.nonlinearity(m)?, ctx.solver_options()),
    };
    let levels = ctx.cfg.levels.unwrap_or(5);
    let report = convergence_study(
        &base,
        &data,
        &model,
        Some(&reg.exact),
        levels,
        &ctx.cfg.quadrature,
    )?;
    for (i, rec) in report.levels.iter().enumerate() {
        let rate = if i == 0 { None } else { report.rates[i - 1].0 };
        println!(
            "level {} h={:.4e} dofs={} err_grad={:.6e} rate={} monitor={:.4e} iters={}",
            rec.level,
            rec.h,
            rec.dofs,
            rec.err_grad.unwrap_or(f64::NAN),
            rate.map(|r| format!("{r:.3}")).unwrap_or_else(|| "-".into()),
            rec.norm_monitor,
            rec.iterations
        );
    }
    ctx.write(
        "convergence.csv",
        &csv_with_provenance(&report.to_csv(), &ctx.hash, ctx.seed),
    )?;
    Ok(())
}

fn cmd_infsup(ctx: &Ctx) -> Result<()> {
    let base = ctx.cfg.mesh.build()?;
    let levels = ctx.cfg.levels.unwrap_or(3);
    let report = constants_report(&base, levels, ctx.cfg.p, &ctx.cfg.weight(), &ctx.cfg.quadrature)?;
    for (h, beta) in &report.beta_h {
        println!("h={h:.4e} beta_h={beta:.12}");
    }
    println!(
        "C_delta={:.6} C_R={:.6} C_P={:.6}",
        report.c_delta_est, report.c_r_est, report.c_p_est
    );
    ctx.write_json("infsup.json", &report)?;
    Ok(())
}

fn cmd_ritz(ctx: &Ctx) -> Result<()> {
    let base = ctx.cfg.mesh.build()?;
    let space = FemSpace::new(base);
    let refinements = ctx.cfg.probe_refinements.unwrap_or(1);
    let (value, quality) = ritz_stability_constant(
        &space,
        ctx.cfg.p,
        &ctx.cfg.weight(),
        refinements,
        &ctx.cfg.quadrature,
    )?;
    let (poincare, _) = poincare_constant(&space, ctx.cfg.p, &ctx.cfg.weight(), &ctx.cfg.quadrature)?;
    println!("C_R={value:.12} ({quality:?}) C_P={poincare:.12}");
    ctx.write_json(
        "ritz_stability.json",
        &serde_json::json!({
            "c_r": value,
            "quality": quality,
            "c_p": poincare,
            "probe_refinements": refinements,
        }),
    )?;
    Ok(())
}

fn cmd_weight_check(ctx: &Ctx) -> Result<()> {
    let polygon = ctx.cfg.mesh.polygon()?;
    let w = ctx.cfg.weight();
    let num_balls = ctx.cfg.num_balls.unwrap_or(200);
    let diam = polygon.diameter();
    let radii = ctx.cfg.radii.unwrap_or((1e-3 * diam, 0.5 * diam));
    let ap = ap_characteristic(&w, ctx.cfg.p, &polygon, num_balls, radii, ctx.seed)?;
    println!(
        "[w]_Ap ~ {:.6} (p={}, balls={}, diverging={})",
        ap.value, ap.p, ap.num_balls, ap.diverging
    );
    let rh = match &ctx.cfg.eps_grid {
        Some(grid) => Some(reverse_holder_probe(
            &w,
            ctx.cfg.p,
            &polygon,
            grid,
            num_balls,
            radii,
            ctx.seed,
        )?),
        None => None,
    };
    if let Some(rh) = &rh {
        println!("reverse Hoelder: eps={} constant={:.6}", rh.eps, rh.constant);
    }
    ctx.write_json(
        "weight_check.json",
        &serde_json::json!({ "ap": ap, "reverse_holder": rh }),
    )?;
    Ok(())
}

fn cmd_structure_check(ctx: &Ctx) -> Result<()> {
    let spec = ctx
        .cfg
        .model
        .as_ref()
        .ok_or_else(|| Error::Config("structure-check requires a \"model\" entry".into()))?;
    let nl = ctx.nonlinearity(spec)?;
    let polygon = ctx.cfg.mesh.polygon()?;
    let samples = ctx.cfg.sample_count.unwrap_or(2000);
    let schedule = ctx
        .cfg
        .radius_schedule
        .clone()
        .unwrap_or_else(|| vec![0.5, 1.0, 2.0, 3.0, 4.0]);
    let report = check_structure(&nl, &polygon, samples, &schedule, ctx.seed);
    println!(
        "structure {}: coercivity>={:.4e} growth<={:.4e} monotonicity>={:.4e} violations={}",
        nl.name,
        report.worst_coercivity_ratio,
        report.worst_growth_ratio,
        report.worst_monotonicity,
        report.violations.len()
    );
    for v in &report.violations {
        println!("violation: {v}");
    }
    ctx.write_json("structure_check.json", &report)?;
    Ok(())
}

fn cmd_oscillation(ctx: &Ctx) -> Result<()> {
    let need = |name: &str, v: Option<f64>| {
        v.ok_or_else(|| Error::Config(format!("oscillation-check requires \"{name}\"")))
    };
    let alpha = need("alpha", ctx.cfg.alpha)?;
    let lambda = need("lambda", ctx.cfg.lambda)?;
    let c_delta = need("c_delta", ctx.cfg.c_delta)?;
    let c_r = need("c_r", ctx.cfg.c_r)?;
    let coeff = LinearCoefficient::new(
        std::sync::Arc::new(move |_| crate::geometry::Mat2::scaled_identity(alpha)),
        alpha,
        lambda,
    );
    let report = small_oscillation_check(&coeff, c_delta, c_r)?;
    println!("small oscillation: lhs={:.6} holds={}", report.lhs, report.holds);
    ctx.write_json("oscillation_check.json", &report)?;
    Ok(())
}

/// Path helper used by integration tests.
pub fn artifact(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
