//! Muckenhoupt weights: evaluation, duals, characteristic estimation,
//! reverse Hölder probing, maximal-function factorization, and lattice
//! combinations.

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::mesh::ConvexPolygon;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Grid samples of a nonnegative function on an axis-aligned square.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFn {
    pub origin: Vec2,
    /// Side length of the square domain.
    pub size: f64,
    /// Grid resolution per axis; `values` holds n*n row-major cell values.
    pub n: usize,
    pub values: Vec<f64>,
}

impl GridFn {
    pub fn from_fn<F: Fn(Vec2) -> f64>(origin: Vec2, size: f64, n: usize, f: F) -> Self {
        let mut values = Vec::with_capacity(n * n);
        let cell = size / n as f64;
        for j in 0..n {
            for i in 0..n {
                let x = origin + Vec2::new((i as f64 + 0.5) * cell, (j as f64 + 0.5) * cell);
                values.push(f(x));
            }
        }
        GridFn {
            origin,
            size,
            n,
            values,
        }
    }

    pub fn constant(origin: Vec2, size: f64, n: usize, value: f64) -> Self {
        GridFn::from_fn(origin, size, n, |_| value)
    }

    fn cell_size(&self) -> f64 {
        self.size / self.n as f64
    }

    fn cell_center(&self, i: usize, j: usize) -> Vec2 {
        let c = self.cell_size();
        self.origin + Vec2::new((i as f64 + 0.5) * c, (j as f64 + 0.5) * c)
    }

    /// Nearest-cell evaluation (clamped to the domain).
    pub fn eval(&self, x: Vec2) -> f64 {
        let c = self.cell_size();
        let i = (((x.x - self.origin.x) / c).floor() as i64).clamp(0, self.n as i64 - 1) as usize;
        let j = (((x.y - self.origin.y) / c).floor() as i64).clamp(0, self.n as i64 - 1) as usize;
        self.values[j * self.n + i]
    }

    /// Grid-quadrature average over the ball of radius `r` at `x`,
    /// restricted to the grid domain.
    pub fn ball_average(&self, x: Vec2, r: f64) -> f64 {
        let c = self.cell_size();
        let i0 = (((x.x - r - self.origin.x) / c).floor() as i64).max(0) as usize;
        let i1 = ((((x.x + r - self.origin.x) / c).ceil() as i64).min(self.n as i64 - 1)).max(0)
            as usize;
        let j0 = (((x.y - r - self.origin.y) / c).floor() as i64).max(0) as usize;
        let j1 = ((((x.y + r - self.origin.y) / c).ceil() as i64).min(self.n as i64 - 1)).max(0)
            as usize;
        let mut sum = 0.0;
        let mut count = 0usize;
        for j in j0..=j1 {
            for i in i0..=i1 {
                if (self.cell_center(i, j) - x).norm() <= r {
                    sum += self.values[j * self.n + i];
                    count += 1;
                }
            }
        }
        if count == 0 {
            self.eval(x)
        } else {
            sum / count as f64
        }
    }

    /// Discrete Hardy-Littlewood maximal function: max ball average over the
    /// dyadic radius set {2^{-j} diam : j = 0..levels}.
    pub fn maximal(&self, x: Vec2, levels: usize) -> f64 {
        let diam = self.size * std::f64::consts::SQRT_2;
        let mut best: f64 = 0.0;
        for j in 0..=levels {
            let r = diam * 0.5f64.powi(j as i32);
            best = best.max(self.ball_average(x, r));
        }
        best
    }
}

/// Number of dyadic radius levels in the discrete maximal function.
pub const MAXIMAL_LEVELS: usize = 8;

/// An evaluable weight with A_p diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSpec {
    Constant {
        value: f64,
    },
    /// omega(x) = |x - center|^gamma.
    Power {
        center: Vec2,
        gamma: f64,
    },
    LatticeMin {
        left: Box<WeightSpec>,
        right: Box<WeightSpec>,
    },
    LatticeMax {
        left: Box<WeightSpec>,
        right: Box<WeightSpec>,
    },
    /// omega(x) = base(x)^exponent; used for duals of non-power families.
    PowOf {
        base: Box<WeightSpec>,
        exponent: f64,
    },
    /// omega(x) = k(x) * M[w](x)^eps, an A_1 weight by factorization.
    MaximalFactor {
        w: GridFn,
        eps: f64,
        k: GridFn,
    },
}

impl WeightSpec {
    pub fn constant(value: f64) -> Self {
        WeightSpec::Constant { value }
    }

    pub fn power(center: Vec2, gamma: f64) -> Self {
        WeightSpec::Power { center, gamma }
    }

    pub fn eval(&self, x: Vec2) -> f64 {
        match self {
            WeightSpec::Constant { value } => *value,
            WeightSpec::Power { center, gamma } => (x - *center).norm().powf(*gamma),
            WeightSpec::LatticeMin { left, right } => left.eval(x).min(right.eval(x)),
            WeightSpec::LatticeMax { left, right } => left.eval(x).max(right.eval(x)),
            WeightSpec::PowOf { base, exponent } => base.eval(x).powf(*exponent),
            WeightSpec::MaximalFactor { w, eps, k } => {
                k.eval(x) * w.maximal(x, MAXIMAL_LEVELS).powf(*eps)
            }
        }
    }

    /// The single point where the weight is singular (zero or infinite),
    /// if any.
    pub fn singular_point(&self) -> Option<Vec2> {
        match self {
            WeightSpec::Constant { .. } | WeightSpec::MaximalFactor { .. } => None,
            WeightSpec::Power { center, gamma } => {
                if *gamma == 0.0 {
                    None
                } else {
                    Some(*center)
                }
            }
            WeightSpec::LatticeMin { left, right } | WeightSpec::LatticeMax { left, right } => {
                left.singular_point().or_else(|| right.singular_point())
            }
            WeightSpec::PowOf { base, .. } => base.singular_point(),
        }
    }

    /// The dual weight omega' = omega^{-1/(p-1)}.
    pub fn dual(&self, p: f64) -> Result<WeightSpec> {
        if !(p > 1.0) {
            return Err(Error::Parameter(format!("dual weight needs p > 1, got {p}")));
        }
        let e = -1.0 / (p - 1.0);
        Ok(match self {
            WeightSpec::Constant { value } => WeightSpec::Constant {
                value: value.powf(e),
            },
            WeightSpec::Power { center, gamma } => WeightSpec::Power {
                center: *center,
                gamma: gamma * e,
            },
            WeightSpec::PowOf { base, exponent } => WeightSpec::PowOf {
                base: base.clone(),
                exponent: exponent * e,
            },
            other => WeightSpec::PowOf {
                base: Box::new(other.clone()),
                exponent: e,
            },
        })
    }

    /// Pointwise min or max of two weights with compatible singular sets.
    pub fn combine(w1: WeightSpec, w2: WeightSpec, mode: LatticeMode) -> Result<WeightSpec> {
        if let (Some(a), Some(b)) = (w1.singular_point(), w2.singular_point()) {
            if (a - b).norm() > 1e-12 {
                return Err(Error::Parameter(
                    "lattice combination of weights with different singular points".into(),
                ));
            }
        }
        let (left, right) = (Box::new(w1), Box::new(w2));
        Ok(match mode {
            LatticeMode::Min => WeightSpec::LatticeMin { left, right },
            LatticeMode::Max => WeightSpec::LatticeMax { left, right },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeMode {
    Min,
    Max,
}

/// omega(x) = k(x) M[w](x)^eps, an A_1 weight by the factorization theorem.
pub fn maximal_factor_weight(w: GridFn, eps: f64, k: GridFn) -> Result<WeightSpec> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Parameter(format!("eps must lie in (0,1), got {eps}")));
    }
    if w.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Parameter("w samples must be finite and >= 0".into()));
    }
    if w.values.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateWeight("w is identically zero".into()));
    }
    if k.values.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Parameter("k must be positive and bounded".into()));
    }
    Ok(WeightSpec::MaximalFactor { w, eps, k })
}

/// Estimated Muckenhoupt characteristic.
#[derive(Debug, Clone, Serialize)]
pub struct ApEstimate {
    pub p: f64,
    /// Estimated [omega]_{A_p}; a lower bound only when `diverging`.
    pub value: f64,
    pub num_balls: usize,
    pub max_radius: f64,
    pub min_radius: f64,
    pub diverging: bool,
}

const BALL_GRID: usize = 32;
const SING_REFINE_DEPTH: usize = 40;
const QUARTILE_GROWTH: f64 = 0.10;

/// Midpoint-quadrature average of `f` over the ball B_r(center) on a
/// BALL_GRID x BALL_GRID sub-grid of its bounding box. When `singular` lies
/// inside the ball, the cell containing it is refined dyadically toward the
/// singular point; a non-saturating refinement marks the average divergent.
fn ball_average<F: Fn(Vec2) -> f64>(
    center: Vec2,
    r: f64,
    f: &F,
    singular: Option<Vec2>,
) -> (f64, bool) {
    let n = BALL_GRID;
    let cell = 2.0 * r / n as f64;
    let lo = center - Vec2::new(r, r);
    let sing_cell = singular.and_then(|s| {
        if (s - center).norm() >= r {
            return None;
        }
        let i = ((s.x - lo.x) / cell).floor() as i64;
        let j = ((s.y - lo.y) / cell).floor() as i64;
        if i < 0 || j < 0 || i >= n as i64 || j >= n as i64 {
            None
        } else {
            Some((i as usize, j as usize))
        }
    });

    let mut sum = 0.0;
    let mut count = 0usize;
    let mut diverging = false;
    for j in 0..n {
        for i in 0..n {
            let c = lo + Vec2::new((i as f64 + 0.5) * cell, (j as f64 + 0.5) * cell);
            if (c - center).norm() > r {
                continue;
            }
            count += 1;
            if sing_cell == Some((i, j)) {
                let (integral, div) =
                    refine_singular_cell(lo + Vec2::new(i as f64 * cell, j as f64 * cell), cell, f, singular.unwrap());
                sum += integral / (cell * cell);
                diverging |= div;
            } else {
                let v = f(c);
                if !v.is_finite() {
                    diverging = true;
                } else {
                    sum += v;
                }
            }
        }
    }
    if count == 0 {
        return (f64::NAN, false);
    }
    (sum / count as f64, diverging)
}

/// Integral of `f` over the square cell at `origin` with side `size`,
/// refining dyadically toward `s`. Returns (integral, diverging): diverging
/// when the per-depth increments fail to decay.
fn refine_singular_cell<F: Fn(Vec2) -> f64>(
    origin: Vec2,
    size: f64,
    f: &F,
    s: Vec2,
) -> (f64, bool) {
    let mut total = 0.0;
    let mut org = origin;
    let mut side = size;
    let mut head = 0.0;
    let mut tail = 0.0;
    for depth in 0..SING_REFINE_DEPTH {
        let half = side / 2.0;
        let si = if s.x >= org.x + half { 1 } else { 0 };
        let sj = if s.y >= org.y + half { 1 } else { 0 };
        let mut increment = 0.0;
        for j in 0..2 {
            for i in 0..2 {
                if (i, j) == (si, sj) {
                    continue;
                }
                let c = org + Vec2::new((i as f64 + 0.5) * half, (j as f64 + 0.5) * half);
                let v = f(c);
                if v.is_finite() {
                    increment += v * half * half;
                }
            }
        }
        total += increment;
        if depth < 5 {
            head += increment;
        }
        if depth >= SING_REFINE_DEPTH - 5 {
            tail += increment;
        }
        org = org + Vec2::new(si as f64 * half, sj as f64 * half);
        side = half;
    }
    let diverging = head > 0.0 && tail >= 0.5 * head;
    (total, diverging)
}

fn sample_point_in(region: &ConvexPolygon, rng: &mut ChaCha8Rng) -> Vec2 {
    let (lo, hi) = region.bounding_box();
    loop {
        let x = Vec2::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y));
        if region.contains(x, 0.0) {
            return x;
        }
    }
}

struct BallSample {
    radius: f64,
    value: f64,
    diverging: bool,
}

/// Draw `num_balls` balls: centers uniform in the region (half forced onto
/// the weight's singular point when it lies inside), radii log-uniform.
fn sample_balls<F: Fn(Vec2, f64) -> (f64, bool)>(
    w: &WeightSpec,
    region: &ConvexPolygon,
    num_balls: usize,
    radii: (f64, f64),
    seed: u64,
    per_ball: F,
) -> Vec<BallSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r_min, r_max) = radii;
    let sing_inside = w
        .singular_point()
        .filter(|s| region.contains(*s, 0.0));
    let mut samples = Vec::with_capacity(num_balls);
    for i in 0..num_balls {
        let radius = (rng.gen_range(r_min.ln()..=r_max.ln())).exp();
        let center = match sing_inside {
            Some(s) if i % 2 == 0 => s,
            _ => sample_point_in(region, &mut rng),
        };
        let (value, diverging) = per_ball(center, radius);
        if value.is_finite() {
            samples.push(BallSample {
                radius,
                value,
                diverging,
            });
        }
    }
    // Largest radius first; the running maximum is inspected small-radius last.
    samples.sort_by(|a, b| b.radius.partial_cmp(&a.radius).unwrap());
    samples
}

/// Growth of the running maximum over the final (small-radius) quartile.
fn final_quartile_growth(samples: &[BallSample]) -> bool {
    if samples.len() < 8 {
        return false;
    }
    let mut running = Vec::with_capacity(samples.len());
    let mut m = f64::NEG_INFINITY;
    for s in samples {
        m = m.max(s.value);
        running.push(m);
    }
    let at_quartile = running[3 * running.len() / 4];
    let last = *running.last().unwrap();
    last > (1.0 + QUARTILE_GROWTH) * at_quartile
}

/// Monte-Carlo/stratified estimate of the Muckenhoupt characteristic
/// [omega]_{A_p} over sampled balls.
pub fn ap_characteristic(
    w: &WeightSpec,
    p: f64,
    region: &ConvexPolygon,
    num_balls: usize,
    radii: (f64, f64),
    seed: u64,
) -> Result<ApEstimate> {
    if !(p > 1.0) {
        return Err(Error::Parameter(format!("A_p needs p in (1,inf), got {p}")));
    }
    if num_balls < 1 {
        return Err(Error::Parameter("num_balls must be >= 1".into()));
    }
    let dual_exp = -1.0 / (p - 1.0);
    let singular = w.singular_point();
    let samples = sample_balls(w, region, num_balls, radii, seed, |center, r| {
        let (avg_w, div1) = ball_average(center, r, &|x| w.eval(x), singular);
        let (avg_dual, div2) = ball_average(center, r, &|x| w.eval(x).powf(dual_exp), singular);
        (avg_w * avg_dual.powf(p - 1.0), div1 || div2)
    });
    let value = samples
        .iter()
        .map(|s| s.value)
        .fold(f64::NEG_INFINITY, f64::max);
    let diverging = samples.iter().any(|s| s.diverging) || final_quartile_growth(&samples);
    Ok(ApEstimate {
        p,
        value,
        num_balls,
        max_radius: radii.1,
        min_radius: radii.0,
        diverging,
    })
}

/// Reverse Hölder probe result.
#[derive(Debug, Clone, Serialize)]
pub struct ReverseHolderProbe {
    /// Largest epsilon in the grid whose sup ratio saturates.
    pub eps: f64,
    /// The saturated sup ratio for that epsilon.
    pub constant: f64,
    /// Per-epsilon (eps, sup, accepted) detail.
    pub detail: Vec<(f64, f64, bool)>,
}

/// For each epsilon, estimate sup over balls of
/// (avg omega^{1+eps})^{1/(1+eps)} / avg omega and keep the largest epsilon
/// whose sup saturates under radius refinement.
pub fn reverse_holder_probe(
    w: &WeightSpec,
    p: f64,
    region: &ConvexPolygon,
    eps_grid: &[f64],
    num_balls: usize,
    radii: (f64, f64),
    seed: u64,
) -> Result<ReverseHolderProbe> {
    if eps_grid.is_empty() {
        return Err(Error::Parameter("eps_grid must not be empty".into()));
    }
    if !(p > 1.0) {
        return Err(Error::Parameter(format!("p must be > 1, got {p}")));
    }
    let singular = w.singular_point();
    let mut detail = Vec::with_capacity(eps_grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &eps in eps_grid {
        let samples = sample_balls(w, region, num_balls, radii, seed, |center, r| {
            let (avg_w, div1) = ball_average(center, r, &|x| w.eval(x), singular);
            let (avg_pow, div2) =
                ball_average(center, r, &|x| w.eval(x).powf(1.0 + eps), singular);
            (avg_pow.powf(1.0 / (1.0 + eps)) / avg_w, div1 || div2)
        });
        let sup = samples
            .iter()
            .map(|s| s.value)
            .fold(f64::NEG_INFINITY, f64::max);
        let saturates =
            !samples.iter().any(|s| s.diverging) && !final_quartile_growth(&samples);
        detail.push((eps, sup, saturates));
        if saturates {
            match best {
                Some((e, _)) if e >= eps => {}
                _ => best = Some((eps, sup)),
            }
        }
    }
    let (eps, constant) = best.ok_or_else(|| {
        Error::Parameter("no epsilon in the grid produced a saturating sup ratio".into())
    })?;
    Ok(ReverseHolderProbe {
        eps,
        constant,
        detail,
    })
}
