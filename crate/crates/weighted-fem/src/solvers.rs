//! Linear solves and the monotone quasilinear solve, with the
//! `Nonlinearity` abstraction carrying the structural constants.

use crate::error::{Error, Result};
use crate::fem::{
    assemble_load, assemble_stiffness, weighted_norm_field, DiscreteField, FemSpace,
    LinearCoefficient, NormKind, ProblemData,
};
use crate::geometry::{Mat2, Vec2};
use crate::linalg::{solve_spd, CsrMatrix};
use crate::quadrature::{integrate, SingularIntegrationPolicy, Triangle};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use std::time::Instant;

pub type FluxFn = Arc<dyn Fn(Vec2, Vec2) -> Vec2 + Send + Sync>;
pub type FluxJacFn = Arc<dyn Fn(Vec2, Vec2) -> Mat2 + Send + Sync>;
pub type AsymptoticFn = Arc<dyn Fn(Vec2) -> Mat2 + Send + Sync>;

/// Monotonicity constant of the exp prototype: min_t d/dt (t + t e^{-t^2})
/// = 1 - 2 e^{-3/2}, attained at t = sqrt(3/2).
pub const MU_UHLENBECK_EXP: f64 = 0.553_739_679_703_140_4;

/// Flux a(x, v) with its derivative, asymptotic matrix, and structural
/// constants alpha (coercivity), Lambda (growth), mu (strong monotonicity,
/// when known).
#[derive(Clone)]
pub struct Nonlinearity {
    pub a: FluxFn,
    pub da: FluxJacFn,
    pub a_inf: AsymptoticFn,
    pub alpha: f64,
    pub lambda: f64,
    pub mu: Option<f64>,
    pub name: String,
}

impl Nonlinearity {
    pub fn linear(coeff: LinearCoefficient) -> Nonlinearity {
        let a_mat = coeff.a.clone();
        let a_jac = coeff.a.clone();
        let a_inf = coeff.a.clone();
        Nonlinearity {
            a: Arc::new(move |x, v| a_mat(x).apply(v)),
            da: Arc::new(move |x, _| a_jac(x)),
            a_inf: Arc::new(move |x| a_inf(x)),
            alpha: coeff.alpha,
            lambda: coeff.lambda,
            mu: Some(coeff.alpha),
            name: "linear".into(),
        }
    }

    /// a(v) = (1 + e^{-|v|^2}) v: alpha = 1, Lambda = 2, A_inf = I.
    pub fn uhlenbeck_exp() -> Nonlinearity {
        Nonlinearity {
            a: Arc::new(|_, v| v.scale(1.0 + (-v.norm_sq()).exp())),
            da: Arc::new(|_, v| {
                let e = (-v.norm_sq()).exp();
                // d/dv [(1+e^{-s^2}) v] = (1+e^{-s^2}) I - 2 e^{-s^2} v v^T.
                let vvt = Mat2::new(v.x * v.x, v.x * v.y, v.y * v.x, v.y * v.y);
                Mat2::scaled_identity(1.0 + e).add(vvt.scale(-2.0 * e))
            }),
            a_inf: Arc::new(|_| Mat2::IDENTITY),
            alpha: 1.0,
            lambda: 2.0,
            mu: Some(MU_UHLENBECK_EXP),
            name: "uhlenbeck_exp".into(),
        }
    }

    /// a(v) = (a_tilde + 1/(1+|v|)) v: alpha = mu = a_tilde,
    /// Lambda = a_tilde + 1, A_inf = a_tilde I.
    pub fn uhlenbeck_rational(a_tilde: f64) -> Result<Nonlinearity> {
        if !(a_tilde > 0.0) || !a_tilde.is_finite() {
            return Err(Error::Parameter(format!(
                "uhlenbeck_rational needs a_tilde > 0, got {a_tilde}"
            )));
        }
        Ok(Nonlinearity {
            a: Arc::new(move |_, v| v.scale(a_tilde + 1.0 / (1.0 + v.norm()))),
            da: Arc::new(move |_, v| {
                let s = v.norm();
                let phi = a_tilde + 1.0 / (1.0 + s);
                if s < 1e-14 {
                    return Mat2::scaled_identity(phi);
                }
                let coef = -1.0 / (s * (1.0 + s) * (1.0 + s));
                let vvt = Mat2::new(v.x * v.x, v.x * v.y, v.y * v.x, v.y * v.y);
                Mat2::scaled_identity(phi).add(vvt.scale(coef))
            }),
            a_inf: Arc::new(move |_| Mat2::scaled_identity(a_tilde)),
            alpha: a_tilde,
            lambda: a_tilde + 1.0,
            mu: Some(a_tilde),
            name: "uhlenbeck_rational".into(),
        })
    }
}

pub const NONLINEARITY_NAMES: [&str; 3] = ["linear", "uhlenbeck_exp", "uhlenbeck_rational"];

/// Build a registered nonlinearity from its key and JSON parameters.
///
/// "linear" takes {"matrix": [[a,b],[c,d]]} (default identity);
/// "uhlenbeck_rational" takes {"a_tilde": t} (default 0.5).
pub fn nonlinearity_from_name(name: &str, params: &serde_json::Value) -> Result<Nonlinearity> {
    match name {
        "linear" => {
            let m = match params.get("matrix") {
                None => Mat2::IDENTITY,
                Some(v) => {
                    let rows: [[f64; 2]; 2] = serde_json::from_value(v.clone())
                        .map_err(|e| Error::Config(format!("bad linear matrix: {e}")))?;
                    Mat2::new(rows[0][0], rows[0][1], rows[1][0], rows[1][1])
                }
            };
            if !m.is_symmetric(1e-12) {
                return Err(Error::Parameter("linear matrix must be symmetric".into()));
            }
            let (lo, hi) = m.sym_eigenvalues();
            if lo <= 0.0 {
                return Err(Error::Parameter(format!(
                    "linear matrix must be positive definite (eigenvalue {lo})"
                )));
            }
            Ok(Nonlinearity::linear(LinearCoefficient::new(
                Arc::new(move |_| m),
                lo,
                hi,
            )))
        }
        "uhlenbeck_exp" => Ok(Nonlinearity::uhlenbeck_exp()),
        "uhlenbeck_rational" => {
            let a_tilde = match params.get("a_tilde") {
                None => 0.5,
                Some(v) => v
                    .as_f64()
                    .ok_or_else(|| Error::Config("a_tilde must be a number".into()))?,
            };
            Nonlinearity::uhlenbeck_rational(a_tilde)
        }
        other => Err(Error::Config(format!(
            "unknown nonlinearity {other:?}; known: {NONLINEARITY_NAMES:?}"
        ))),
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub wall_time: f64,
    pub final_weighted_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Newton,
    Zarantonello,
}

#[derive(Clone)]
pub struct SolverOptions {
    pub method: Method,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Solve with the asymptotic linear coefficient first and restart the
    /// nonlinear iteration from that field.
    pub continuation: bool,
    pub initial: Option<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            method: Method::Newton,
            rel_tol: 1e-10,
            max_iter: 10_000,
            continuation: false,
            initial: None,
        }
    }
}

/// Solve stiffness(A) c = load(data).
pub fn solve_linear<'a>(
    space: &'a FemSpace,
    coeff: &LinearCoefficient,
    data: &ProblemData,
    policy: &SingularIntegrationPolicy,
) -> Result<(DiscreteField<'a>, SolveReport)> {
    let start = Instant::now();
    let stiffness = assemble_stiffness(space, coeff);
    let load = assemble_load(space, data, policy)?;
    let (coeffs, iterations) = solve_spd(&stiffness, &load)?;
    let field = space.field_from_coeffs(coeffs);
    let norm = weighted_norm_field(&field, data.p, &data.omega, NormKind::Gradient, policy)?;
    Ok((
        field,
        SolveReport {
            iterations,
            residual_history: Vec::new(),
            converged: true,
            wall_time: start.elapsed().as_secs_f64(),
            final_weighted_norm: norm,
        },
    ))
}

/// Residual R(c)_i = sum_T int_T a(x, grad u_h) . grad phi_i - load_i.
pub fn quasilinear_residual(
    space: &FemSpace,
    a: &Nonlinearity,
    coeffs: &[f64],
    load: &[f64],
) -> Vec<f64> {
    let mesh = &space.mesh;
    let mut r: Vec<f64> = load.iter().map(|v| -v).collect();
    let field = DiscreteField {
        space,
        coeffs: coeffs.to_vec(),
    };
    for t in 0..mesh.num_triangles() {
        let tri: Triangle = mesh.triangle_vertices(t);
        let grads = space.hat_gradients(t);
        let conn = mesh.triangles[t];
        let gu = field.gradient_on(t);
        for li in 0..3 {
            let Some(i) = space.dof_of_vertex[conn[li]] else { continue };
            let gi = grads[li];
            let flux = &a.a;
            r[i] += integrate(&tri, |x| flux(x, gu).dot(gi))
                .expect("flux must be finite on piecewise-constant gradients");
        }
    }
    r
}

/// Newton Jacobian J_{ij} = sum_T int_T da(x, grad u_h) grad phi_j . grad phi_i.
pub fn quasilinear_jacobian(space: &FemSpace, a: &Nonlinearity, coeffs: &[f64]) -> DMatrix<f64> {
    let mesh = &space.mesh;
    let n = space.num_dofs();
    let mut jac = DMatrix::zeros(n, n);
    let field = DiscreteField {
        space,
        coeffs: coeffs.to_vec(),
    };
    for t in 0..mesh.num_triangles() {
        let tri: Triangle = mesh.triangle_vertices(t);
        let grads = space.hat_gradients(t);
        let conn = mesh.triangles[t];
        let gu = field.gradient_on(t);
        for li in 0..3 {
            let Some(i) = space.dof_of_vertex[conn[li]] else { continue };
            for lj in 0..3 {
                let Some(j) = space.dof_of_vertex[conn[lj]] else { continue };
                let (gi, gj) = (grads[li], grads[lj]);
                let da = &a.da;
                let val = integrate(&tri, |x| da(x, gu).apply(gj).dot(gi))
                    .expect("flux derivative must be finite");
                jac[(i, j)] += val;
            }
        }
    }
    jac
}

struct Preconditioner {
    stiffness: CsrMatrix,
}

impl Preconditioner {
    /// || r ||_{S^{-1}} together with the applied S^{-1} r.
    fn dual_norm(&self, r: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (z, _) = solve_spd(&self.stiffness, r)?;
        let sq: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        Ok((sq.max(0.0).sqrt(), z))
    }
}

/// Damped Newton or Zarantonello iteration for the quasilinear Galerkin
/// system. Residuals are measured in the norm induced by the inverse of
/// stiffness(A_inf).
pub fn solve_quasilinear<'a>(
    space: &'a FemSpace,
    a: &Nonlinearity,
    data: &ProblemData,
    opts: &SolverOptions,
    policy: &SingularIntegrationPolicy,
) -> Result<(DiscreteField<'a>, SolveReport)> {
    let start = Instant::now();
    let n = space.num_dofs();
    let load = assemble_load(space, data, policy)?;
    let a_inf_coeff = LinearCoefficient::new(a.a_inf.clone(), a.alpha, a.lambda);
    let precond = Preconditioner {
        stiffness: assemble_stiffness(space, &a_inf_coeff),
    };

    let mut coeffs = match &opts.initial {
        Some(c) => {
            if c.len() != n {
                return Err(Error::Parameter(format!(
                    "initial guess has {} entries, expected {n}",
                    c.len()
                )));
            }
            c.clone()
        }
        None if opts.continuation => solve_spd(&precond.stiffness, &load)?.0,
        None => vec![0.0; n],
    };

    let tau = match opts.method {
        Method::Zarantonello => {
            let mu = a.mu.ok_or_else(|| {
                Error::Parameter("zarantonello requires a monotonicity constant mu".into())
            })?;
            mu / (a.lambda * a.lambda)
        }
        Method::Newton => 0.0,
    };

    let mut r = quasilinear_residual(space, a, &coeffs, &load);
    let (mut rnorm, mut z) = precond.dual_norm(&r)?;
    let r0 = rnorm.max(f64::MIN_POSITIVE);
    let mut history = vec![rnorm];
    let mut converged = rnorm <= opts.rel_tol * r0;

    let mut iterations = 0;
    while !converged && iterations < opts.max_iter {
        match opts.method {
            Method::Zarantonello => {
                for (c, zi) in coeffs.iter_mut().zip(&z) {
                    *c -= tau * zi;
                }
                r = quasilinear_residual(space, a, &coeffs, &load);
                let (nn, nz) = precond.dual_norm(&r)?;
                rnorm = nn;
                z = nz;
            }
            Method::Newton => {
                let jac = quasilinear_jacobian(space, a, &coeffs);
                let rhs = DVector::from_column_slice(&r);
                let delta = jac
                    .lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::LinearSolve("singular Newton Jacobian".into()))?;
                let sigma = 1e-4;
                let mut damping = 1.0;
                loop {
                    let trial: Vec<f64> = coeffs
                        .iter()
                        .zip(delta.iter())
                        .map(|(c, d)| c - damping * d)
                        .collect();
                    let rt = quasilinear_residual(space, a, &trial, &load);
                    let (nn, nz) = precond.dual_norm(&rt)?;
                    if nn <= (1.0 - sigma * damping) * rnorm {
                        coeffs = trial;
                        r = rt;
                        rnorm = nn;
                        z = nz;
                        break;
                    }
                    damping *= 0.5;
                    if damping < 2f64.powi(-30) {
                        return Err(Error::NonConvergence(format!(
                            "newton damping floor reached at iteration {iterations}, \
                             residual {rnorm:.3e} (initial {r0:.3e})"
                        )));
                    }
                }
            }
        }
        iterations += 1;
        history.push(rnorm);
        converged = rnorm <= opts.rel_tol * r0;
    }

    if !converged {
        return Err(Error::NonConvergence(format!(
            "{:?} stalled after {iterations} iterations, residual {rnorm:.3e} relative {:.3e}",
            opts.method,
            rnorm / r0
        )));
    }

    let field = space.field_from_coeffs(coeffs);
    let norm = weighted_norm_field(&field, data.p, &data.omega, NormKind::Gradient, policy)?;
    Ok((
        field,
        SolveReport {
            iterations,
            residual_history: history,
            converged,
            wall_time: start.elapsed().as_secs_f64(),
            final_weighted_norm: norm,
        },
    ))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct StructureReport {
    pub sample_count: usize,
    /// min over samples of a(x,v).v / |v|^2 (should stay >= alpha).
    pub worst_coercivity_ratio: f64,
    /// max over samples of |a(x,v)| / |v| (should stay <= Lambda).
    pub worst_growth_ratio: f64,
    /// min over random pairs of (a(x,v)-a(x,w)).(v-w) / |v-w|^2.
    pub worst_monotonicity: f64,
    /// (N, eps(N)) with eps(N) = max_{|v| >= N} |a(x,v) - A_inf(x)v| / |v|.
    pub eps_profile: Vec<(f64, f64)>,
    /// (N, max_{|v| >= N} |da(x,v) - A_inf(x)|) in the spectral norm.
    pub strong_profile: Vec<(f64, f64)>,
    pub violations: Vec<String>,
}

/// Sampling-based audit of assumptions (B)-(F). Refutes, never certifies.
pub fn check_structure(
    a: &Nonlinearity,
    domain: &crate::mesh::ConvexPolygon,
    sample_count: usize,
    radius_schedule: &[f64],
    seed: u64,
) -> StructureReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = domain.bounding_box();
    let sample_x = |rng: &mut ChaCha8Rng| loop {
        let x = Vec2::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y));
        if domain.contains(x, 0.0) {
            return x;
        }
    };
    let r_min = radius_schedule.iter().cloned().fold(f64::INFINITY, f64::min);
    let r_max = radius_schedule.iter().cloned().fold(0.0, f64::max);
    let (log_lo, log_hi) = ((r_min.max(1e-3)).ln(), (r_max.max(1e-2) * 2.0).ln());

    let mut samples = Vec::with_capacity(sample_count + 8 * radius_schedule.len());
    for _ in 0..sample_count {
        let x = sample_x(&mut rng);
        let r = (rng.gen_range(log_lo..log_hi)).exp();
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        samples.push((x, Vec2::new(r * theta.cos(), r * theta.sin())));
    }
    // The profile sup is typically attained at |v| = N exactly; pin those.
    for &n in radius_schedule {
        for k in 0..8 {
            let theta = std::f64::consts::TAU * k as f64 / 8.0;
            samples.push((sample_x(&mut rng), Vec2::new(n * theta.cos(), n * theta.sin())));
        }
    }

    let mut worst_coercivity_ratio = f64::INFINITY;
    let mut worst_growth_ratio = 0.0f64;
    for &(x, v) in &samples {
        let av = (a.a)(x, v);
        let vsq = v.norm_sq();
        worst_coercivity_ratio = worst_coercivity_ratio.min(av.dot(v) / vsq);
        worst_growth_ratio = worst_growth_ratio.max(av.norm() / v.norm());
    }

    let mut worst_monotonicity = f64::INFINITY;
    for _ in 0..sample_count {
        let x = sample_x(&mut rng);
        let draw = |rng: &mut ChaCha8Rng| {
            let r = (rng.gen_range(log_lo..log_hi)).exp();
            let t = rng.gen_range(0.0..std::f64::consts::TAU);
            Vec2::new(r * t.cos(), r * t.sin())
        };
        let v = draw(&mut rng);
        let w = draw(&mut rng);
        if (v - w).norm_sq() < 1e-24 {
            continue;
        }
        let diff = ((a.a)(x, v) - (a.a)(x, w)).dot(v - w) / (v - w).norm_sq();
        worst_monotonicity = worst_monotonicity.min(diff);
    }

    let mut eps_profile = Vec::new();
    let mut strong_profile = Vec::new();
    for &n in radius_schedule {
        let mut eps = 0.0f64;
        let mut strong = 0.0f64;
        for &(x, v) in &samples {
            if v.norm() < n {
                continue;
            }
            let dev = ((a.a)(x, v) - (a.a_inf)(x).apply(v)).norm() / v.norm();
            eps = eps.max(dev);
            strong = strong.max((a.da)(x, v).sub((a.a_inf)(x)).spectral_norm());
        }
        eps_profile.push((n, eps));
        strong_profile.push((n, strong));
    }

    let tol = 1e-9;
    let mut violations = Vec::new();
    if worst_coercivity_ratio < a.alpha - tol {
        violations.push(format!(
            "coercivity: ratio {worst_coercivity_ratio:.6e} below alpha = {}",
            a.alpha
        ));
    }
    if worst_growth_ratio > a.lambda + tol {
        violations.push(format!(
            "growth: ratio {worst_growth_ratio:.6e} above Lambda = {}",
            a.lambda
        ));
    }
    if worst_monotonicity <= 0.0 {
        violations.push(format!(
            "monotonicity: inner product ratio {worst_monotonicity:.6e} not positive"
        ));
    }
    if let Some(mu) = a.mu {
        if worst_monotonicity < mu - tol {
            violations.push(format!(
                "strong monotonicity: ratio {worst_monotonicity:.6e} below mu = {mu}"
            ));
        }
    }

    StructureReport {
        sample_count,
        worst_coercivity_ratio,
        worst_growth_ratio,
        worst_monotonicity,
        eps_profile,
        strong_profile,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{ConvexPolygon, Mesh};
    use crate::weights::WeightSpec;
    use std::f64::consts::PI;

    fn policy() -> SingularIntegrationPolicy {
        SingularIntegrationPolicy::default()
    }

    fn space(n: usize) -> FemSpace {
        FemSpace::new(Mesh::structured_unit_square(n))
    }

    fn sin_sin_data() -> ProblemData {
        ProblemData {
            f: Arc::new(|_| Vec2::ZERO),
            g: Arc::new(|x: Vec2| 2.0 * PI * PI * (PI * x.x).sin() * (PI * x.y).sin()),
            p: 2.0,
            omega: WeightSpec::constant(1.0),
            singular_point: None,
        }
    }

    #[test]
    fn mu_oracle_for_uhlenbeck_exp() {
        // Grid-minimize d/dt (t + t e^{-t^2}) = 1 + e^{-t^2}(1 - 2 t^2).
        let mut min = f64::INFINITY;
        for k in 0..200_000 {
            let t = 10.0 * k as f64 / 200_000.0;
            min = min.min(1.0 + (-t * t).exp() * (1.0 - 2.0 * t * t));
        }
        assert!((min - MU_UHLENBECK_EXP).abs() < 1e-8, "oracle min {min}");
        assert!((MU_UHLENBECK_EXP - (1.0 - 2.0 * (-1.5f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn linear_solve_converges_to_sin_sin() {
        let data = sin_sin_data();
        let mut prev_err = f64::INFINITY;
        for n in [4, 8, 16] {
            let sp = space(n);
            let (u, report) = solve_linear(&sp, &LinearCoefficient::identity(), &data, &policy())
                .unwrap();
            assert!(report.converged);
            let err = sp
                .free_dofs
                .iter()
                .zip(&u.coeffs)
                .map(|(&v, c)| {
                    let x = sp.mesh.vertices[v];
                    (c - (PI * x.x).sin() * (PI * x.y).sin()).abs()
                })
                .fold(0.0f64, f64::max);
            assert!(err < prev_err, "n = {n}: {err} !< {prev_err}");
            prev_err = err;
        }
        assert!(prev_err < 0.01, "final nodal error {prev_err}");
    }

    #[test]
    fn linear_solve_reproduces_vh_data() {
        let sp = space(4);
        let w = sp.interpolate(|x| x.x * (1.0 - x.x) * x.y);
        let sp2 = sp.clone();
        let coeffs = w.coeffs.clone();
        let data = ProblemData {
            f: Arc::new(move |x: Vec2| {
                let f = DiscreteField {
                    space: &sp2,
                    coeffs: coeffs.clone(),
                };
                let (t, _) = sp2.mesh.locate(x).unwrap();
                f.gradient_on(t)
            }),
            g: Arc::new(|_| 0.0),
            p: 2.0,
            omega: WeightSpec::constant(1.0),
            singular_point: None,
        };
        let (u, _) = solve_linear(&sp, &LinearCoefficient::identity(), &data, &policy()).unwrap();
        for (a, b) in u.coeffs.iter().zip(&w.coeffs) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_data_gives_zero_field() {
        let sp = space(4);
        let data = ProblemData {
            f: Arc::new(|_| Vec2::ZERO),
            g: Arc::new(|_| 0.0),
            p: 2.0,
            omega: WeightSpec::constant(1.0),
            singular_point: None,
        };
        let (u, _) = solve_linear(&sp, &LinearCoefficient::identity(), &data, &policy()).unwrap();
        assert!(u.coeffs.iter().all(|c| c.abs() < 1e-14));
    }

    #[test]
    fn quasilinear_with_linear_flux_matches_linear_solve() {
        let sp = space(8);
        let data = sin_sin_data();
        let coeff = LinearCoefficient::identity();
        let (u_lin, _) = solve_linear(&sp, &coeff, &data, &policy()).unwrap();
        let (u_q, report) = solve_quasilinear(
            &sp,
            &Nonlinearity::linear(coeff),
            &data,
            &SolverOptions::default(),
            &policy(),
        )
        .unwrap();
        assert!(report.converged);
        for (a, b) in u_lin.coeffs.iter().zip(&u_q.coeffs) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn prototype_newton_converges_fast() {
        let sp = space(8);
        let data = sin_sin_data();
        let (_, report) = solve_quasilinear(
            &sp,
            &Nonlinearity::uhlenbeck_exp(),
            &data,
            &SolverOptions::default(),
            &policy(),
        )
        .unwrap();
        assert!(report.converged);
        assert!(report.iterations <= 25, "{} iterations", report.iterations);
        let last = *report.residual_history.last().unwrap();
        let first = report.residual_history[0];
        assert!(last < 1e-10 * first, "relative residual {}", last / first);
        // Damped-Newton acceptance forces a strictly decreasing history.
        for pair in report.residual_history.windows(2) {
            assert!(pair[1] < pair[0]);
        }
    }

    #[test]
    fn newton_and_zarantonello_agree() {
        let sp = space(8);
        let data = sin_sin_data();
        let nl = Nonlinearity::uhlenbeck_exp();
        let (u_n, _) =
            solve_quasilinear(&sp, &nl, &data, &SolverOptions::default(), &policy()).unwrap();
        let opts = SolverOptions {
            method: Method::Zarantonello,
            ..SolverOptions::default()
        };
        let (u_z, report) = solve_quasilinear(&sp, &nl, &data, &opts, &policy()).unwrap();
        // Contraction: the preconditioned residual never increases.
        for pair in report.residual_history.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-12));
        }
        let diff = sp.field_from_coeffs(
            u_n.coeffs.iter().zip(&u_z.coeffs).map(|(a, b)| a - b).collect(),
        );
        let d = weighted_norm_field(
            &diff,
            2.0,
            &WeightSpec::constant(1.0),
            NormKind::Gradient,
            &policy(),
        )
        .unwrap();
        assert!(d < 1e-8, "method disagreement {d}");
    }

    #[test]
    fn uniqueness_from_random_initial_guesses() {
        use rand::Rng;
        let sp = space(4);
        let data = sin_sin_data();
        let nl = Nonlinearity::uhlenbeck_exp();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut solutions = Vec::new();
        for _ in 0..2 {
            let initial: Vec<f64> =
                (0..sp.num_dofs()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let opts = SolverOptions {
                initial: Some(initial),
                ..SolverOptions::default()
            };
            let (u, _) = solve_quasilinear(&sp, &nl, &data, &opts, &policy()).unwrap();
            solutions.push(u.coeffs);
        }
        let diff = sp.field_from_coeffs(
            solutions[0]
                .iter()
                .zip(&solutions[1])
                .map(|(a, b)| a - b)
                .collect(),
        );
        let d = weighted_norm_field(
            &diff,
            2.0,
            &WeightSpec::constant(1.0),
            NormKind::Gradient,
            &policy(),
        )
        .unwrap();
        assert!(d < 1e-8, "initial-guess disagreement {d}");
    }

    #[test]
    fn returned_field_residual_is_consistent() {
        let sp = space(8);
        let data = sin_sin_data();
        let nl = Nonlinearity::uhlenbeck_exp();
        let (u, report) =
            solve_quasilinear(&sp, &nl, &data, &SolverOptions::default(), &policy()).unwrap();
        let load = assemble_load(&sp, &data, &policy()).unwrap();
        let r = quasilinear_residual(&sp, &nl, &u.coeffs, &load);
        let s = assemble_stiffness(&sp, &LinearCoefficient::identity());
        let (z, _) = solve_spd(&s, &r).unwrap();
        let rnorm: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>().sqrt();
        let r0 = report.residual_history[0];
        assert!(rnorm < 10.0 * 1e-10 * r0, "re-evaluated residual {rnorm}");
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        use rand::Rng;
        let sp = space(4);
        let nl = Nonlinearity::uhlenbeck_exp();
        let n = sp.num_dofs();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let load = vec![0.0; n];
        for _ in 0..10 {
            let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let jac = quasilinear_jacobian(&sp, &nl, &c);
            let jd = &jac * DVector::from_column_slice(&d);
            let h = 1e-6;
            let cp: Vec<f64> = c.iter().zip(&d).map(|(a, b)| a + h * b).collect();
            let cm: Vec<f64> = c.iter().zip(&d).map(|(a, b)| a - h * b).collect();
            let rp = quasilinear_residual(&sp, &nl, &cp, &load);
            let rm = quasilinear_residual(&sp, &nl, &cm, &load);
            let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let scale = jd.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(1e-12);
            for (a, b) in jd.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-5 * scale, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zarantonello_without_mu_is_rejected() {
        let sp = space(2);
        let data = sin_sin_data();
        let mut nl = Nonlinearity::uhlenbeck_exp();
        nl.mu = None;
        let opts = SolverOptions {
            method: Method::Zarantonello,
            ..SolverOptions::default()
        };
        assert!(matches!(
            solve_quasilinear(&sp, &nl, &data, &opts, &policy()),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn structure_of_linear_flux() {
        let nl = Nonlinearity::linear(LinearCoefficient::scaled_identity(1.5));
        let domain = ConvexPolygon::unit_square();
        let report = check_structure(&nl, &domain, 500, &[0.5, 1.0, 2.0, 3.0], 0xA9);
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        assert!(report.worst_coercivity_ratio >= 1.5 - 1e-12);
        assert!(report.worst_growth_ratio <= 1.5 + 1e-12);
        for &(_, eps) in &report.eps_profile {
            assert!(eps < 1e-12);
        }
        for &(_, s) in &report.strong_profile {
            assert!(s < 1e-12);
        }
    }

    #[test]
    fn structure_of_prototype() {
        let nl = Nonlinearity::uhlenbeck_exp();
        let domain = ConvexPolygon::unit_square();
        let report = check_structure(&nl, &domain, 2000, &[0.5, 1.0, 2.0, 3.0, 4.0], 0xA9);
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        // eps(N) = max_{t >= N} t e^{-t^2}, decreasing past 1/sqrt(2).
        let profile = &report.eps_profile;
        for pair in profile.windows(2) {
            assert!(pair[1].1 <= pair[0].1 + 1e-15);
        }
        let eps3 = profile.iter().find(|&&(n, _)| n == 3.0).unwrap().1;
        assert!(eps3 < 4e-4, "eps(3) = {eps3}");
        assert!(eps3 > 1e-6, "profile should be pinned at |v| = 3, got {eps3}");
    }

    #[test]
    fn structure_flags_invalid_flux() {
        // a(v) = v/|v| violates growth near 0 and coercivity at large |v|.
        let nl = Nonlinearity {
            a: Arc::new(|_, v: Vec2| v.scale(1.0 / v.norm())),
            da: Arc::new(|_, _| Mat2::IDENTITY),
            a_inf: Arc::new(|_| Mat2::IDENTITY),
            alpha: 1.0,
            lambda: 1.0,
            mu: None,
            name: "invalid".into(),
        };
        let domain = ConvexPolygon::unit_square();
        let report = check_structure(&nl, &domain, 500, &[0.5, 1.0, 2.0, 3.0], 0xA9);
        assert!(
            report.violations.iter().any(|v| v.contains("coercivity")),
            "{:?}",
            report.violations
        );
    }

    #[test]
    fn registry_keys() {
        let empty = serde_json::json!({});
        for name in NONLINEARITY_NAMES {
            assert!(nonlinearity_from_name(name, &empty).is_ok(), "{name}");
        }
        assert!(nonlinearity_from_name("nope", &empty).is_err());
        let m = serde_json::json!({"matrix": [[2.0, 0.5], [0.5, 1.0]]});
        let nl = nonlinearity_from_name("linear", &m).unwrap();
        assert!(nl.alpha > 0.0 && nl.lambda > nl.alpha);
        let bad = serde_json::json!({"matrix": [[0.0, 0.0], [0.0, -1.0]]});
        assert!(nonlinearity_from_name("linear", &bad).is_err());
        let rat = nonlinearity_from_name("uhlenbeck_rational", &serde_json::json!({"a_tilde": 2.0}))
            .unwrap();
        assert!((rat.alpha - 2.0).abs() < 1e-15 && (rat.lambda - 3.0).abs() < 1e-15);
        assert!(nonlinearity_from_name("uhlenbeck_rational", &serde_json::json!({"a_tilde": 0.0}))
            .is_err());
    }

    #[test]
    fn rational_prototype_solves() {
        let sp = space(4);
        let data = sin_sin_data();
        let nl = Nonlinearity::uhlenbeck_rational(0.5).unwrap();
        let (_, report) =
            solve_quasilinear(&sp, &nl, &data, &SolverOptions::default(), &policy()).unwrap();
        assert!(report.converged && report.iterations <= 25);
    }
}
