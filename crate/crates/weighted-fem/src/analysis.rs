//! Stability diagnostics: discrete inf-sup constants, Ritz stability,
//! weighted Poincare constant, the small-oscillation check, and
//! convergence studies on refinement hierarchies.

use crate::error::{Error, Result};
use crate::fem::{
    assemble_stiffness, weighted_gradient_gram, weighted_norm_field,
    weighted_value_gram, DiscreteField, FemSpace, LinearCoefficient, NormKind, ProblemData,
    ScalarFn, VectorFn,
};
use crate::geometry::Vec2;
use crate::linalg::CsrMatrix;
use crate::mesh::Mesh;
use crate::quadrature::{integrate, integrate_singular, SingularIntegrationPolicy, Triangle};
use crate::solvers::{solve_linear, solve_quasilinear, Nonlinearity, SolveReport, SolverOptions};
use crate::weights::WeightSpec;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense spectral diagnostics are capped at this many dofs.
pub const DENSE_DIAG_LIMIT: usize = 3000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundQuality {
    Exact,
    /// Randomized probe maximum; the true constant is at least this.
    LowerBound,
}

fn dense_check(n: usize, what: &str) -> Result<()> {
    if n > DENSE_DIAG_LIMIT {
        return Err(Error::Parameter(format!(
            "{what} uses dense linear algebra, capped at {DENSE_DIAG_LIMIT} dofs (got {n})"
        )));
    }
    Ok(())
}

fn cholesky_of(m: &CsrMatrix, what: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(m.to_dense())
        .ok_or_else(|| Error::LinearSolve(format!("{what} is not positive definite")))
}

/// Discrete inf-sup constant for p = 2: smallest singular value of
/// L_w^{-1} S L_{w'}^{-T} with Gram factorizations D_w = L_w L_w^T and
/// D_{w'} = L_{w'} L_{w'}^T.
pub fn infsup_constant(
    space: &FemSpace,
    p: f64,
    w: &WeightSpec,
    policy: &SingularIntegrationPolicy,
) -> Result<f64> {
    if (p - 2.0).abs() > 1e-12 {
        return Err(Error::Parameter(format!(
            "exact inf-sup constant requires p = 2 (got {p}); \
             use infsup_lower_bound for a labeled Monte-Carlo bound"
        )));
    }
    dense_check(space.num_dofs(), "infsup_constant")?;
    let s = assemble_stiffness(space, &LinearCoefficient::identity()).to_dense();
    let wd = w.dual(p)?;
    let l_w = cholesky_of(&weighted_gradient_gram(space, w, policy)?, "weighted Gram")?;
    let l_wd = cholesky_of(&weighted_gradient_gram(space, &wd, policy)?, "dual Gram")?;
    // L_w^{-1} S, then right-multiply by L_{w'}^{-T} via a transposed solve.
    let half = l_w
        .l()
        .solve_lower_triangular(&s)
        .ok_or_else(|| Error::LinearSolve("singular Cholesky factor".into()))?;
    let whitened = l_wd
        .l()
        .solve_lower_triangular(&half.transpose())
        .ok_or_else(|| Error::LinearSolve("singular Cholesky factor".into()))?
        .transpose();
    let sv = whitened.svd(false, false).singular_values;
    Ok(sv.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Monte-Carlo lower bound on the inf-sup value restricted to v = w probes;
/// valid for any p but only a bound, never the constant.
pub fn infsup_lower_bound(
    space: &FemSpace,
    p: f64,
    w: &WeightSpec,
    samples: usize,
    seed: u64,
    policy: &SingularIntegrationPolicy,
) -> Result<(f64, BoundQuality)> {
    let s = assemble_stiffness(space, &LinearCoefficient::identity());
    let wd = w.dual(p)?;
    let q = p / (p - 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    for _ in 0..samples.max(1) {
        let c: Vec<f64> = (0..space.num_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut sc = vec![0.0; s.n];
        s.matvec(&c, &mut sc);
        let pairing: f64 = c.iter().zip(&sc).map(|(a, b)| a * b).sum();
        let field = space.field_from_coeffs(c);
        let nw = weighted_norm_field(&field, p, w, NormKind::Gradient, policy)?;
        let nv = weighted_norm_field(&field, q, &wd, NormKind::Gradient, policy)?;
        if nw * nv > 0.0 {
            best = best.min(pairing.abs() / (nw * nv));
        }
    }
    Ok((best, BoundQuality::LowerBound))
}

/// Prolongation from the free dofs of `coarse` into the free dofs of `fine`
/// (spaces must be nested; `fine` built by refining the coarse mesh).
pub fn prolongation(coarse: &FemSpace, fine: &FemSpace) -> Result<DMatrix<f64>> {
    let mut p = DMatrix::zeros(fine.num_dofs(), coarse.num_dofs());
    for (i, &fv) in fine.free_dofs.iter().enumerate() {
        let x = fine.mesh.vertices[fv];
        let (t, bary) = coarse.mesh.locate(x)?;
        for k in 0..3 {
            if let Some(j) = coarse.dof_of_vertex[coarse.mesh.triangles[t][k]] {
                p[(i, j)] = bary[k];
            }
        }
    }
    Ok(p)
}

/// Stability constant of the Ritz projection from a probe space refined
/// `probe_refinements` times down to `coarse`, measured between weighted
/// gradient norms. Exact generalized singular value for p = 2; randomized
/// lower bound otherwise.
pub fn ritz_stability_constant(
    coarse: &FemSpace,
    p: f64,
    w: &WeightSpec,
    probe_refinements: usize,
    policy: &SingularIntegrationPolicy,
) -> Result<(f64, BoundQuality)> {
    if probe_refinements == 0 {
        return Err(Error::Parameter("probe_refinements must be >= 1".into()));
    }
    let mut mesh = coarse.mesh.clone();
    for _ in 0..probe_refinements {
        mesh = mesh.refine_uniform();
    }
    let fine = FemSpace::new(mesh);
    dense_check(fine.num_dofs(), "ritz_stability_constant")?;

    let prol = prolongation(coarse, &fine)?;
    let s_fine = assemble_stiffness(&fine, &LinearCoefficient::identity()).to_dense();
    let s_coarse = assemble_stiffness(coarse, &LinearCoefficient::identity()).to_dense();
    let s_coarse_chol = Cholesky::new(s_coarse)
        .ok_or_else(|| Error::LinearSolve("coarse stiffness not SPD".into()))?;
    // Ritz matrix in coefficients: c = S_H^{-1} P^T S_f v.
    let ritz = s_coarse_chol.solve(&(prol.transpose() * &s_fine));

    if (p - 2.0).abs() <= 1e-12 {
        let g_coarse = cholesky_of(
            &weighted_gradient_gram(coarse, w, policy)?,
            "coarse weighted Gram",
        )?;
        let g_fine = cholesky_of(
            &weighted_gradient_gram(&fine, w, policy)?,
            "fine weighted Gram",
        )?;
        // sigma_max of L_H^T M L_f^{-T}.
        let left = g_coarse.l().transpose() * &ritz;
        let k = g_fine
            .l()
            .solve_lower_triangular(&left.transpose())
            .ok_or_else(|| Error::LinearSolve("singular Cholesky factor".into()))?
            .transpose();
        let sv = k.svd(false, false).singular_values;
        Ok((sv.iter().cloned().fold(0.0, f64::max), BoundQuality::Exact))
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0xA9);
        let mut best = 0.0f64;
        for _ in 0..24 {
            let v: Vec<f64> = (0..fine.num_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c = &ritz * DVector::from_column_slice(&v);
            let fine_field = fine.field_from_coeffs(v);
            let coarse_field = coarse.field_from_coeffs(c.iter().cloned().collect());
            let denom = weighted_norm_field(&fine_field, p, w, NormKind::Gradient, policy)?;
            let numer = weighted_norm_field(&coarse_field, p, w, NormKind::Gradient, policy)?;
            if denom > 0.0 {
                best = best.max(numer / denom);
            }
        }
        Ok((best, BoundQuality::LowerBound))
    }
}

/// Weighted Poincare constant: p = 2 gives sqrt(lambda_max) of the pencil
/// M_w c = lambda D_w c; other exponents give a randomized lower bound.
pub fn poincare_constant(
    space: &FemSpace,
    p: f64,
    w: &WeightSpec,
    policy: &SingularIntegrationPolicy,
) -> Result<(f64, BoundQuality)> {
    if (p - 2.0).abs() <= 1e-12 {
        dense_check(space.num_dofs(), "poincare_constant")?;
        let mass = weighted_value_gram(space, w, policy)?.to_dense();
        let grad = cholesky_of(&weighted_gradient_gram(space, w, policy)?, "weighted Gram")?;
        let half = grad
            .l()
            .solve_lower_triangular(&mass)
            .ok_or_else(|| Error::LinearSolve("singular Cholesky factor".into()))?;
        let whitened = grad
            .l()
            .solve_lower_triangular(&half.transpose())
            .ok_or_else(|| Error::LinearSolve("singular Cholesky factor".into()))?;
        let eig = whitened.symmetric_eigen().eigenvalues;
        let lam = eig.iter().cloned().fold(0.0, f64::max);
        Ok((lam.sqrt(), BoundQuality::Exact))
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0xA9);
        let mut best = 0.0f64;
        for _ in 0..24 {
            let c: Vec<f64> = (0..space.num_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let field = space.field_from_coeffs(c);
            let nv = weighted_norm_field(&field, p, w, NormKind::Value, policy)?;
            let ng = weighted_norm_field(&field, p, w, NormKind::Gradient, policy)?;
            if ng > 0.0 {
                best = best.max(nv / ng);
            }
        }
        Ok((best, BoundQuality::LowerBound))
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct OscillationReport {
    pub lhs: f64,
    pub holds: bool,
}

/// Small-oscillation condition 2 C_delta C_R (1 - alpha/Lambda) <= 1.
pub fn small_oscillation_check(
    coeff: &LinearCoefficient,
    c_delta_est: f64,
    c_r_est: f64,
) -> Result<OscillationReport> {
    if coeff.alpha > coeff.lambda {
        return Err(Error::Parameter(format!(
            "alpha {} exceeds Lambda {}",
            coeff.alpha, coeff.lambda
        )));
    }
    if !(coeff.alpha > 0.0) || !(c_delta_est > 0.0) || !(c_r_est > 0.0) {
        return Err(Error::Parameter("oscillation check needs positive inputs".into()));
    }
    let lhs = 2.0 * c_delta_est * c_r_est * (1.0 - coeff.alpha / coeff.lambda);
    Ok(OscillationReport { lhs, holds: lhs <= 1.0 })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ConstantsReport {
    pub c_delta_est: f64,
    pub c_r_est: f64,
    pub c_p_est: f64,
    /// (h, beta_h) per mesh level.
    pub beta_h: Vec<(f64, f64)>,
    pub provenance: String,
}

/// Dense diagnostics over a refinement hierarchy: beta_h per level, with
/// C_delta = 1/beta at the finest level, C_R and C_P on the coarsest.
pub fn constants_report(
    base: &Mesh,
    levels: usize,
    p: f64,
    w: &WeightSpec,
    policy: &SingularIntegrationPolicy,
) -> Result<ConstantsReport> {
    if levels == 0 {
        return Err(Error::Parameter("constants_report needs at least one level".into()));
    }
    let mut beta_h = Vec::new();
    let mut mesh = base.clone();
    for level in 0..levels {
        let space = FemSpace::new(mesh.clone());
        let beta = infsup_constant(&space, p, w, policy)?;
        beta_h.push((space.mesh.h, beta));
        if level + 1 < levels {
            mesh = mesh.refine_uniform();
        }
    }
    let coarse = FemSpace::new(base.clone());
    let (c_r_est, _) = ritz_stability_constant(&coarse, p, w, 1, policy)?;
    let (c_p_est, _) = poincare_constant(&coarse, p, w, policy)?;
    let c_delta_est = 1.0 / beta_h.last().unwrap().1;
    Ok(ConstantsReport {
        c_delta_est,
        c_r_est,
        c_p_est,
        beta_h,
        provenance: format!(
            "{} levels from h = {}, p = {}, weight {:?}",
            levels, base.h, p, w
        ),
    })
}

/// Manufactured solution with its gradient for error measurement.
#[derive(Clone)]
pub struct Manufactured {
    pub value: ScalarFn,
    pub gradient: VectorFn,
}

#[derive(Clone)]
pub enum Model {
    Linear(LinearCoefficient),
    Quasilinear(Nonlinearity, SolverOptions),
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct LevelRecord {
    pub level: usize,
    pub h: f64,
    pub dofs: usize,
    pub err_grad: Option<f64>,
    pub err_val: Option<f64>,
    /// ||grad u_h||_{L^p(w)} / (1 + ||f|| + ||g||).
    pub norm_monitor: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvergenceReport {
    pub levels: Vec<LevelRecord>,
    /// (rate_grad, rate_val) between successive levels; None when either
    /// error sits at quadrature noise.
    pub rates: Vec<(Option<f64>, Option<f64>)>,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "level,h,dofs,err_grad,err_val,rate_grad,rate_val,norm_monitor,iterations\n",
        );
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
        for (i, rec) in self.levels.iter().enumerate() {
            let (rg, rv) = if i == 0 {
                (None, None)
            } else {
                self.rates[i - 1]
            };
            out.push_str(&format!(
                "{},{:.12e},{},{},{},{},{},{:.12e},{}\n",
                rec.level,
                rec.h,
                rec.dofs,
                fmt(rec.err_grad),
                fmt(rec.err_val),
                rg.map(|x| format!("{x:.6}")).unwrap_or_default(),
                rv.map(|x| format!("{x:.6}")).unwrap_or_default(),
                rec.norm_monitor,
                rec.iterations,
            ));
        }
        out
    }
}

fn field_error_norms(
    field: &DiscreteField,
    exact: &Manufactured,
    p: f64,
    w: &WeightSpec,
    singular: Option<Vec2>,
    policy: &SingularIntegrationPolicy,
) -> Result<(f64, f64)> {
    let mesh = &field.space.mesh;
    let sing = singular.or_else(|| w.singular_point());
    let mut grad_total = 0.0;
    let mut val_total = 0.0;
    for t in 0..mesh.num_triangles() {
        let tri: Triangle = mesh.triangle_vertices(t);
        let gh = field.gradient_on(t);
        let grad_integrand = |x: Vec2| ((exact.gradient)(x) - gh).norm().powf(p) * w.eval(x);
        let val_integrand = |x: Vec2| {
            let bary = mesh.barycentric(t, x);
            ((exact.value)(x) - field.value_on(t, bary)).abs().powf(p) * w.eval(x)
        };
        match sing {
            Some(s) => {
                grad_total += integrate_singular(&tri, grad_integrand, s, policy)?;
                val_total += integrate_singular(&tri, val_integrand, s, policy)?;
            }
            None => {
                grad_total += integrate(&tri, grad_integrand)?;
                val_total += integrate(&tri, val_integrand)?;
            }
        }
    }
    Ok((grad_total.powf(1.0 / p), val_total.powf(1.0 / p)))
}

/// Solve on a refinement hierarchy starting from `base`, recording weighted
/// errors against `exact` (when given) and the uniform-bound monitor.
pub fn convergence_study(
    base: &Mesh,
    data: &ProblemData,
    model: &Model,
    exact: Option<&Manufactured>,
    levels: usize,
    policy: &SingularIntegrationPolicy,
) -> Result<ConvergenceReport> {
    if levels < 3 {
        return Err(Error::Parameter(format!(
            "convergence study needs >= 3 levels, got {levels}"
        )));
    }
    let base_space = FemSpace::new(base.clone());
    let (f_norm, g_norm) = data.validate_on(&base_space.mesh, policy)?;
    let data_scale = 1.0 + f_norm + g_norm;

    let mut records: Vec<LevelRecord> = Vec::new();
    let mut mesh = base.clone();
    for level in 0..levels {
        let space = FemSpace::new(mesh.clone());
        let (field, report): (DiscreteField, SolveReport) = match model {
            Model::Linear(coeff) => solve_linear(&space, coeff, data, policy)?,
            Model::Quasilinear(nl, opts) => solve_quasilinear(&space, nl, data, opts, policy)?,
        };
        let (err_grad, err_val) = match exact {
            Some(ex) => {
                let (g, v) =
                    field_error_norms(&field, ex, data.p, &data.omega, data.singular_point, policy)?;
                (Some(g), Some(v))
            }
            None => (None, None),
        };
        records.push(LevelRecord {
            level,
            h: space.mesh.h,
            dofs: space.num_dofs(),
            err_grad,
            err_val,
            norm_monitor: report.final_weighted_norm / data_scale,
            iterations: report.iterations,
        });
        if level + 1 < levels {
            mesh = mesh.refine_uniform();
        }
    }

    let rate = |prev: Option<f64>, cur: Option<f64>| -> Option<f64> {
        let (p, c) = (prev?, cur?);
        // Below quadrature noise the ratio is meaningless.
        if p < 1e-12 || c < 1e-12 {
            return None;
        }
        Some((p / c).log2())
    };
    let rates = records
        .windows(2)
        .map(|pair| {
            (
                rate(pair[0].err_grad, pair[1].err_grad),
                rate(pair[0].err_val, pair[1].err_val),
            )
        })
        .collect();
    Ok(ConvergenceReport { levels: records, rates })
}
