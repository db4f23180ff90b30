//! Type-II maximum likelihood for the uncorrected kernel.
//!
//! The search runs in `θ = (log ν², log a_l)` over the dimensions whose
//! initial inverse lengthscale is positive; a dimension that starts at zero
//! stays switched off. Every coordinate is clamped to its box.

use faer::MatRef;
use serde::{Deserialize, Serialize};

use super::KernelSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gp::{log_ml_only, log_ml_with_gradient, NewtonOptions};

const NU2_BOUNDS: (f64, f64) = (1e-4, 1e4);
const INV_LENGTHSCALE_BOUNDS: (f64, f64) = (1e-3, 1e3);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMethod {
    /// Derivative-free simplex descent.
    NelderMead,
    /// Box-projected BFGS on the analytic gradient of the Laplace evidence.
    #[default]
    QuasiNewton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperSearch {
    pub method: SearchMethod,
    /// Starting points: the initial spec, then all lengthscales ×3 and ×1/3.
    pub starts: usize,
    /// Objective evaluations per start (simplex) or iterations per start (BFGS).
    pub evaluations: usize,
    pub newton: NewtonOptions,
}

impl Default for HyperSearch {
    fn default() -> Self {
        HyperSearch {
            method: SearchMethod::QuasiNewton,
            starts: 1,
            evaluations: 40,
            newton: NewtonOptions::default(),
        }
    }
}

impl HyperSearch {
    pub fn nelder_mead(starts: usize, evaluations: usize) -> Self {
        HyperSearch {
            method: SearchMethod::NelderMead,
            starts,
            evaluations,
            newton: NewtonOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HyperFit {
    pub spec: KernelSpec,
    pub log_ml: f64,
    pub evaluations: usize,
}

struct Problem<'a> {
    base: &'a KernelSpec,
    points: MatRef<'a, f64>,
    y: &'a [f64],
    active: Vec<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    newton: NewtonOptions,
    warm: Option<Vec<f64>>,
    evaluations: usize,
}

impl Problem<'_> {
    fn clamp(&self, theta: &mut [f64]) {
        for (k, t) in theta.iter_mut().enumerate() {
            *t = t.clamp(self.lower[k], self.upper[k]);
        }
    }

    fn value(&mut self, theta: &[f64]) -> f64 {
        self.evaluations += 1;
        let spec = self.base.with_log_params(theta, &self.active);
        match log_ml_only(&spec, self.points, self.y, self.warm.as_deref(), &self.newton) {
            Ok((v, alpha, _)) if v.is_finite() => {
                self.warm = Some(alpha);
                v
            }
            _ => f64::NEG_INFINITY,
        }
    }

    fn value_and_gradient(&mut self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.evaluations += 1;
        let spec = self.base.with_log_params(theta, &self.active);
        let e = log_ml_with_gradient(&spec, self.points, self.y, &self.active, self.warm.as_deref(), &self.newton).ok()?;
        if !e.log_ml.is_finite() || e.gradient.iter().any(|g| !g.is_finite()) {
            return None;
        }
        self.warm = Some(e.alpha);
        Some((e.log_ml, e.gradient))
    }
}

fn start_points(init: &[f64], problem: &Problem<'_>, starts: usize) -> Vec<Vec<f64>> {
    let factors = [1.0f64, 3.0, 1.0 / 3.0];
    (0..starts.max(1))
        .map(|s| {
            let shift = factors.get(s).copied().unwrap_or(1.0).ln() + if s >= factors.len() { 0.5 * s as f64 } else { 0.0 };
            let mut t = init.to_vec();
            for v in t.iter_mut().skip(1) {
                *v += shift;
            }
            problem.clamp(&mut t);
            t
        })
        .collect()
}

/// Maximizes `f` by Nelder–Mead with at most `budget` evaluations, `f(start) = f0` already known.
fn nelder_mead(problem: &mut Problem<'_>, start: &[f64], f0: f64, budget: usize) -> (Vec<f64>, f64) {
    let dim = start.len();
    let mut used = 0usize;
    let eval = |problem: &mut Problem<'_>, mut t: Vec<f64>, used: &mut usize| -> (Vec<f64>, f64) {
        problem.clamp(&mut t);
        *used += 1;
        let v = problem.value(&t);
        (t, v)
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(start.to_vec(), f0)];
    for k in 0..dim {
        if used >= budget {
            break;
        }
        let mut t = start.to_vec();
        t[k] += if t[k] + 0.5 <= problem.upper[k] { 0.5 } else { -0.5 };
        simplex.push(eval(problem, t, &mut used));
    }
    if simplex.len() < dim + 1 {
        return best_of(&simplex);
    }
    while used < budget {
        simplex.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        let spread = simplex[0].1 - simplex[dim].1;
        if spread.abs() < 1e-10 {
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|k| simplex[..dim].iter().map(|v| v.0[k]).sum::<f64>() / dim as f64)
            .collect();
        let worst = simplex[dim].clone();
        let along = |c: f64| -> Vec<f64> { (0..dim).map(|k| centroid[k] + c * (worst.0[k] - centroid[k])).collect() };
        let refl = eval(problem, along(-1.0), &mut used);
        if refl.1 > simplex[0].1 {
            if used < budget {
                let exp = eval(problem, along(-2.0), &mut used);
                simplex[dim] = if exp.1 > refl.1 { exp } else { refl };
            } else {
                simplex[dim] = refl;
            }
            continue;
        }
        if refl.1 > simplex[dim - 1].1 {
            simplex[dim] = refl;
            continue;
        }
        if used >= budget {
            break;
        }
        let contr = if refl.1 > worst.1 {
            eval(problem, along(-0.5), &mut used)
        } else {
            eval(problem, along(0.5), &mut used)
        };
        if contr.1 > worst.1.max(refl.1) {
            simplex[dim] = contr;
            continue;
        }
        let best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            if used >= budget {
                break;
            }
            let t: Vec<f64> = (0..dim).map(|k| best[k] + 0.5 * (v.0[k] - best[k])).collect();
            *v = eval(problem, t, &mut used);
        }
    }
    best_of(&simplex)
}

fn best_of(simplex: &[(Vec<f64>, f64)]) -> (Vec<f64>, f64) {
    simplex
        .iter()
        .fold(None::<&(Vec<f64>, f64)>, |acc, v| match acc {
            Some(a) if a.1 >= v.1 => Some(a),
            _ => Some(v),
        })
        .cloned()
        .expect("simplex is nonempty")
}

/// Projected gradient: components pushing out of the box are dropped.
fn projected(theta: &[f64], grad: &[f64], problem: &Problem<'_>) -> Vec<f64> {
    (0..theta.len())
        .map(|k| {
            let g = grad[k];
            if (theta[k] <= problem.lower[k] && g < 0.0) || (theta[k] >= problem.upper[k] && g > 0.0) {
                0.0
            } else {
                g
            }
        })
        .collect()
}

/// Box-projected BFGS ascent with backtracking.
fn quasi_newton(problem: &mut Problem<'_>, start: &[f64], max_iter: usize) -> Option<(Vec<f64>, f64)> {
    let dim = start.len();
    let mut theta = start.to_vec();
    let (mut f, mut g) = problem.value_and_gradient(&theta)?;
    let mut h = identity(dim);
    for _ in 0..max_iter {
        let pg = projected(&theta, &g, problem);
        if pg.iter().fold(0.0f64, |m, v| m.max(v.abs())) < 1e-4 {
            break;
        }
        let mut dir: Vec<f64> = (0..dim).map(|i| (0..dim).map(|j| h[i][j] * pg[j]).sum()).collect();
        if crate::linalg::dot(&dir, &pg) <= 0.0 {
            h = identity(dim);
            dir = pg.clone();
        }
        for k in 0..dim {
            if pg[k] == 0.0 {
                dir[k] = 0.0;
            }
        }
        let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if len > 3.0 {
            dir.iter_mut().for_each(|v| *v *= 3.0 / len);
        }
        let mut step = 1.0;
        let mut next = None;
        for _ in 0..25 {
            let mut t: Vec<f64> = (0..dim).map(|k| theta[k] + step * dir[k]).collect();
            problem.clamp(&mut t);
            let s: Vec<f64> = (0..dim).map(|k| t[k] - theta[k]).collect();
            let gain = crate::linalg::dot(&g, &s);
            if let Some((ft, gt)) = problem.value_and_gradient(&t) {
                if ft >= f + 1e-4 * gain.max(0.0) {
                    next = Some((t, s, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((t, s, ft, gt)) = next else {
            break;
        };
        let yv: Vec<f64> = (0..dim).map(|k| g[k] - gt[k]).collect();
        let sy = crate::linalg::dot(&s, &yv);
        if sy > 1e-10 {
            bfgs_update(&mut h, &s, &yv, sy);
        }
        let improvement = ft - f;
        theta = t;
        f = ft;
        g = gt;
        if improvement < 1e-8 * (1.0 + f.abs()) {
            break;
        }
    }
    Some((theta, f))
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// Inverse-Hessian update for minimizing `−f`, with `y = ∇f_old − ∇f_new`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * y[j]).sum()).collect();
    let yhy = crate::linalg::dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

fn log_bounds(active: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let mut lower = vec![NU2_BOUNDS.0.ln()];
    let mut upper = vec![NU2_BOUNDS.1.ln()];
    for _ in active {
        lower.push(INV_LENGTHSCALE_BOUNDS.0.ln());
        upper.push(INV_LENGTHSCALE_BOUNDS.1.ln());
    }
    (lower, upper)
}

/// Maximizes the Laplace evidence of an uncorrected SE kernel at `points`.
/// The returned spec never has lower evidence than `init`.
pub fn search_hyperparameters(points: MatRef<'_, f64>, y: &[f64], init: &KernelSpec, search: &HyperSearch) -> Result<HyperFit> {
    if points.nrows() != y.len() {
        return Err(Error::shape(format!("{} points but {} outcomes", points.nrows(), y.len())));
    }
    if points.ncols() != init.dim() {
        return Err(Error::shape(format!("points have {} columns, kernel expects {}", points.ncols(), init.dim())));
    }
    let base = init.without_correction();
    let active: Vec<usize> = (0..base.dim()).filter(|&l| base.inv_lengthscales()[l] > 0.0).collect();
    let (lower, upper) = log_bounds(&active);
    let mut problem = Problem {
        base: &base,
        points,
        y,
        active,
        lower,
        upper,
        newton: search.newton,
        warm: None,
        evaluations: 0,
    };
    let init_theta: Vec<f64> = std::iter::once(base.nu2().ln())
        .chain(problem.active.iter().map(|&l| base.inv_lengthscales()[l].ln()))
        .collect();
    let init_value = problem.value(&init_theta);
    if !init_value.is_finite() {
        return Err(Error::Initialization(
            "log marginal likelihood is not finite at the initial hyperparameters".into(),
        ));
    }
    let mut best = (init_theta.clone(), init_value, true);
    let budget = search.evaluations;
    if budget <= 1 {
        let evaluations = problem.evaluations;
        return Ok(HyperFit {
            spec: base.clone(),
            log_ml: init_value,
            evaluations,
        });
    }
    for (s, start) in start_points(&init_theta, &problem, search.starts).into_iter().enumerate() {
        let found = match search.method {
            SearchMethod::NelderMead => {
                let (f0, extra) = if s == 0 && start == init_theta {
                    (init_value, 0)
                } else {
                    (problem.value(&start), 1)
                };
                let remaining = if s == 0 { budget - 1 } else { budget.saturating_sub(extra) };
                Some(nelder_mead(&mut problem, &start, f0, remaining))
            }
            SearchMethod::QuasiNewton => quasi_newton(&mut problem, &start, budget),
        };
        if let Some((theta, value)) = found {
            if value > best.1 {
                best = (theta, value, false);
            }
        }
    }
    let spec = if best.2 { base.clone() } else { base.with_log_params(&best.0, &problem.active) };
    let evaluations = problem.evaluations;
    Ok(HyperFit {
        spec,
        log_ml: best.1,
        evaluations,
    })
}

/// Simplex search with a total `budget` of evaluations spread over three
/// starts; the first evaluation is the initial spec itself.
pub fn optimize_hyperparameters(data: &Dataset, init: &KernelSpec, budget: usize) -> Result<KernelSpec> {
    if budget == 0 {
        return Err(Error::config("evaluation budget must be at least 1"));
    }
    let points = data.design_points();
    let (starts, per_start) = if budget == 1 { (1, 1) } else { (3, 1 + (budget - 1) / 3) };
    let search = HyperSearch::nelder_mead(starts, per_start);
    Ok(search_hyperparameters(points.as_ref(), data.y(), init, &search)?.spec)
}
