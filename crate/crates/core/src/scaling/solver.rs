//! MAP estimation of Thurstone Case V scale values.
//!
//! Maximises
//!
//! ```text
//! J(q) = Σ_{i≠j} M[i][j] · ln Φ(q_i − q_j)  −  (w/2) · Σ q_i²
//! ```
//!
//! over zero-sum `q`, where `M[i][j]` is the (soft or hard) evidence that
//! item `i` beats item `j` and `w` is the Gaussian prior weight (zero for
//! plain maximum likelihood). `J` is concave, so damped Newton on the
//! centred problem converges to the unique optimum.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::normal::{inverse_mills, log_norm_cdf, log_norm_cdf_curvature};
use super::{PairwiseMatrix, ScaleScores, ScalingError};

/// Pair proportions are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-6;

const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prior {
    #[default]
    Gaussian,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub prior: Prior,
    pub prior_weight: f64,
    /// Stop once the centred gradient norm falls to this level.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { prior: Prior::Gaussian, prior_weight: 1.0, tol: 1e-9, max_iter: 500 }
    }
}

impl SolverConfig {
    pub fn mle() -> Self {
        Self { prior: Prior::None, ..Self::default() }
    }

    fn effective_prior_weight(&self) -> f64 {
        match self.prior {
            Prior::Gaussian => self.prior_weight,
            Prior::None => 0.0,
        }
    }
}

/// The MAP objective with clamped evidence weights.
#[derive(Debug, Clone)]
pub struct Objective {
    n: usize,
    /// Row-major `n × n`, zero diagonal.
    weights: Vec<f64>,
    prior_weight: f64,
}

impl Objective {
    pub fn new<M: PairwiseMatrix + ?Sized>(matrix: &M, cfg: &SolverConfig) -> Result<Self, ScalingError> {
        let n = matrix.size();
        if n < 2 {
            return Err(ScalingError::TooSmall(n));
        }
        if cfg.tol.is_nan() || cfg.tol <= 0.0 || !cfg.prior_weight.is_finite() || cfg.prior_weight < 0.0 {
            return Err(ScalingError::InvalidConfig(format!("{cfg:?}")));
        }
        let mut weights = vec![0.0; n * n];
        let mut clamped = 0usize;
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (matrix.entry(i, j), matrix.entry(j, i));
                if !(a.is_finite() && b.is_finite() && a >= 0.0 && b >= 0.0) {
                    return Err(ScalingError::InvalidMatrix(format!("entries ({i},{j}) = {a}, ({j},{i}) = {b}")));
                }
                let total = a + b;
                if total == 0.0 {
                    continue;
                }
                let p = a / total;
                let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                if pc != p {
                    clamped += 1;
                }
                weights[i * n + j] = total * pc;
                weights[j * n + i] = total * (1.0 - pc);
            }
        }
        if clamped > 0 && cfg.prior == Prior::None {
            log::warn!("clamped {clamped} pair proportions into [{PROB_CLAMP}, {}]", 1.0 - PROB_CLAMP);
        }
        Ok(Self { n, weights, prior_weight: cfg.effective_prior_weight() })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    fn w(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn value(&self, q: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                let w = self.w(i, j);
                if i != j && w != 0.0 {
                    total += w * log_norm_cdf(q[i] - q[j]);
                }
            }
        }
        total - 0.5 * self.prior_weight * q.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn gradient(&self, q: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = q.iter().map(|v| -self.prior_weight * v).collect();
        for i in 0..self.n {
            for j in 0..self.n {
                let w = self.w(i, j);
                if i != j && w != 0.0 {
                    let d = w * inverse_mills(q[i] - q[j]);
                    g[i] += d;
                    g[j] -= d;
                }
            }
        }
        g
    }

    pub fn hessian(&self, q: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let mut h = DMatrix::from_diagonal_element(n, n, -self.prior_weight);
        for i in 0..n {
            for j in 0..n {
                let w = self.w(i, j);
                if i != j && w != 0.0 {
                    let c = w * log_norm_cdf_curvature(q[i] - q[j]);
                    h[(i, i)] += c;
                    h[(j, j)] += c;
                    h[(i, j)] -= c;
                    h[(j, i)] -= c;
                }
            }
        }
        h
    }
}

fn center(q: &mut [f64]) {
    let mean = q.iter().sum::<f64>() / q.len() as f64;
    q.iter_mut().for_each(|v| *v -= mean);
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn centred_gradient(obj: &Objective, q: &[f64]) -> Vec<f64> {
    let mut g = obj.gradient(q);
    center(&mut g);
    g
}

/// Solver result with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub scores: ScaleScores,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Objective value at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
}

/// Newton direction on the centred subspace, or `None` when the system is
/// not positive definite.
fn newton_direction(obj: &Objective, q: &[f64], g: &[f64]) -> Option<Vec<f64>> {
    let n = obj.size();
    let a = -obj.hessian(q) + DMatrix::from_element(n, n, 1.0 / n as f64);
    let step = a.cholesky()?.solve(&DVector::from_column_slice(g));
    let step: Vec<f64> = step.iter().copied().collect();
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// Backtracking along `dir`; returns the accepted point.
fn line_search(obj: &Objective, q: &[f64], j0: f64, g_norm: f64, dir: &[f64]) -> Option<(Vec<f64>, f64)> {
    let slack = 1e-14 * (1.0 + j0.abs());
    let mut t = 1.0;
    for _ in 0..MAX_HALVINGS {
        let mut cand: Vec<f64> = q.iter().zip(dir).map(|(a, d)| a + t * d).collect();
        center(&mut cand);
        let j = obj.value(&cand);
        if j.is_finite() {
            if j > j0 {
                return Some((cand, j));
            }
            // Near the optimum the objective gain drops below rounding;
            // accept a step that still shrinks the gradient.
            if j >= j0 - slack && norm(&centred_gradient(obj, &cand)) < g_norm {
                return Some((cand, j));
            }
        }
        t *= 0.5;
    }
    None
}

pub fn solve_map_report<M: PairwiseMatrix + ?Sized>(
    matrix: &M,
    cfg: &SolverConfig,
) -> Result<SolveReport, ScalingError> {
    let obj = Objective::new(matrix, cfg)?;
    let mut q = vec![0.0; obj.size()];
    let mut j = obj.value(&q);
    let mut trace = vec![j];
    let mut g = centred_gradient(&obj, &q);
    let mut g_norm = norm(&g);
    let mut iterations = 0;

    while g_norm > cfg.tol {
        if iterations >= cfg.max_iter {
            return Err(ScalingError::NotConverged { iterations, grad_norm: g_norm });
        }
        iterations += 1;
        let step = newton_direction(&obj, &q, &g)
            .and_then(|dir| line_search(&obj, &q, j, g_norm, &dir))
            .or_else(|| line_search(&obj, &q, j, g_norm, &g));
        let Some((next, j_next)) = step else {
            return Err(ScalingError::NotConverged { iterations, grad_norm: g_norm });
        };
        q = next;
        j = j_next;
        trace.push(j);
        g = centred_gradient(&obj, &q);
        g_norm = norm(&g);
    }
    center(&mut q);
    Ok(SolveReport { scores: ScaleScores(q), iterations, grad_norm: g_norm, objective_trace: trace })
}

/// Zero-sum MAP scale values for the items of `matrix`.
pub fn solve_map<M: PairwiseMatrix + ?Sized>(matrix: &M, cfg: &SolverConfig) -> Result<ScaleScores, ScalingError> {
    solve_map_report(matrix, cfg).map(|r| r.scores)
}
