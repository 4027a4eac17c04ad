//! Steepest descent with exact line search on the least-squares form of the
//! normal equations, `min ½‖E·A − R‖²`.
//!
//! The direction is the negative gradient `r_k = EᵀR − EᵀE·A_k` and the step
//! `α_k = ‖r_k‖² / (r_kᵀ EᵀE r_k)` minimizes the quadratic along it. `EᵀE`
//! and `EᵀR` are formed once, so an iteration is two matrix-vector products.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{dot, Matrix};

/// Curvature below which the line search is considered degenerate.
pub const MIN_CURVATURE: f64 = 1e-300;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    Zero,
    RandomUniform01,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub init: Init,
    pub rng_seed: u64,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig {
            max_iters: 100,
            grad_tol: 1e-12,
            init: Init::Zero,
            rng_seed: DEFAULT_SEED,
        }
    }
}

impl GdConfig {
    /// Starting point of dimension `m`. Random init draws from a ChaCha8
    /// stream seeded with `rng_seed`, so runs are reproducible.
    pub fn initial_point(&self, m: usize) -> Vec<f64> {
        match self.init {
            Init::Zero => vec![0.0; m],
            Init::RandomUniform01 => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
                (0..m).map(|_| rng.random::<f64>()).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    MaxIters,
    GradTol,
    ZeroCurvature,
}

/// Raw result of a descent run in `m` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Descent {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// `f(A_0), f(A_1), …`; one entry more than `iterations`.
    pub objective: Vec<f64>,
    /// `‖r_0‖, ‖r_1‖, …` for every gradient evaluated.
    pub gradient_norms: Vec<f64>,
    pub stop: StopReason,
}

/// Precomputed `EᵀE` and `EᵀR`.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    gram: Matrix,
    rhs: Vec<f64>,
}

impl NormalEquations {
    pub fn new(e: &Matrix, r: &[f64]) -> Self {
        NormalEquations {
            gram: e.gram(),
            rhs: e.transpose_mul_vec(r),
        }
    }

    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    /// `f(A) = ½ AᵀEᵀEA − AᵀEᵀR`, evaluated directly.
    pub fn objective(&self, a: &[f64]) -> f64 {
        0.5 * dot(a, &self.gram.mul_vec(a)) - dot(a, &self.rhs)
    }

    /// Runs at most `max_iters` steps, stopping early once the gradient norm
    /// drops below `grad_tol` (or is exactly zero).
    ///
    /// The objective trace is advanced by the exact change of `f` along each
    /// step, `−α‖r‖² + ½α²·rᵀEᵀEr`, starting from a direct evaluation at
    /// `A_0`. This equals `f(A_k)` up to rounding and, unlike re-evaluating
    /// `f` near the optimum, never rises from cancellation noise.
    pub fn descend(&self, init: Vec<f64>, max_iters: usize, grad_tol: f64) -> Descent {
        let m = self.dim();
        assert_eq!(init.len(), m, "initial point has wrong dimension");
        let mut a = init;
        let mut prod = vec![0.0; m];
        let mut grad = vec![0.0; m];
        let mut f = self.objective(&a);
        let mut objective = vec![f];
        let mut gradient_norms = Vec::new();
        let mut k = 0;

        let stop = loop {
            self.gram.mul_vec_into(&a, &mut prod);
            for ((g, b), p) in grad.iter_mut().zip(&self.rhs).zip(&prod) {
                *g = b - p;
            }
            let rr = dot(&grad, &grad);
            let norm = rr.sqrt();
            gradient_norms.push(norm);
            if norm < grad_tol || rr == 0.0 {
                break StopReason::GradTol;
            }
            if k == max_iters {
                break StopReason::MaxIters;
            }
            self.gram.mul_vec_into(&grad, &mut prod);
            let curvature = dot(&grad, &prod);
            if !(curvature > MIN_CURVATURE) {
                log::warn!(
                    "zero curvature along the gradient (rᵀEᵀEr = {curvature:e}, ‖r‖ = {norm:e}); stopping"
                );
                break StopReason::ZeroCurvature;
            }
            let step = rr / curvature;
            for (ai, gi) in a.iter_mut().zip(&grad) {
                *ai += step * gi;
            }
            f += -step * rr + 0.5 * step * step * curvature;
            objective.push(f);
            k += 1;
        };

        Descent {
            solution: a,
            iterations: k,
            objective,
            gradient_norms,
            stop,
        }
    }
}
