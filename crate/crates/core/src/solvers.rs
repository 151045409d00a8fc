//! Boosted coding, the alternating-optimization baseline, and their shared
//! weight subproblems.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{normalized, power_iteration, solve_spd, Matrix};
use crate::oracles::{
    oracle_exemplar, oracle_heuristic, oracle_l1, oracle_l21, OracleConfig, OracleKind,
};
use crate::regularizer::{block_norm, phi, NormOrder, RegParams};

/// Ridge added to normal equations in the baseline's basis update.
const NORMAL_EQ_JITTER: f64 = 1e-10;
/// Columns shorter than this after the basis update are redrawn.
const DEAD_COLUMN_NORM: f64 = 1e-10;
const LASSO_TOL: f64 = 1e-8;
const LASSO_MAX_SWEEPS: usize = 1000;
/// Iterations over which the relative-improvement stopping test looks back.
const STALL_WINDOW: usize = 10;

/// Method used for the weight subproblem `min_W ½‖BW − X‖²_F + λΦ(W)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSolver {
    /// Subgradient descent with step `w_step0/√t`, keeping the best iterate.
    Subgradient,
    /// Accelerated proximal gradient with an exact prox of the squared block norms.
    Proximal,
}

impl FromStr for WeightSolver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subgradient" => Ok(WeightSolver::Subgradient),
            "proximal" => Ok(WeightSolver::Proximal),
            other => Err(Error::invalid(format!(
                "unknown weight solver '{other}' (expected subgradient or proximal)"
            ))),
        }
    }
}

impl fmt::Display for WeightSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightSolver::Subgradient => "subgradient",
            WeightSolver::Proximal => "proximal",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Basis budget `d`.
    pub max_basis: usize,
    pub w_max_iters: usize,
    /// Relative objective improvement over a 10-iteration window below which
    /// the weight solver stops.
    pub w_tol: f64,
    /// Initial subgradient step; `None` means `1/‖X‖_F`.
    pub w_step0: Option<f64>,
    pub weight_solver: WeightSolver,
    /// Alternations of the baseline.
    pub alt_iters: usize,
    /// Seed for the baseline's random initial basis.
    pub seed: u64,
    /// A new weight row with L₂ norm at most this ends boosting.
    pub zero_row_tol: f64,
    pub oracle: OracleConfig,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_basis: 64,
            w_max_iters: 2000,
            w_tol: 1e-8,
            w_step0: None,
            weight_solver: WeightSolver::Proximal,
            alt_iters: 20,
            seed: 0,
            zero_row_tol: 1e-6,
            oracle: OracleConfig::default(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_basis == 0 || self.w_max_iters == 0 || self.alt_iters == 0 {
            return Err(Error::invalid(
                "basis budget and iteration counts must be positive",
            ));
        }
        if !(self.w_tol > 0.0 && self.w_tol < 1.0) {
            return Err(Error::invalid(format!(
                "w_tol must lie in (0, 1), got {}",
                self.w_tol
            )));
        }
        if let Some(s) = self.w_step0 {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("w_step0 must be positive, got {s}")));
            }
        }
        if self.zero_row_tol.is_nan() || self.zero_row_tol <= 0.0 {
            return Err(Error::invalid("zero_row_tol must be positive"));
        }
        self.oracle.validate()
    }
}

/// Output of either coding algorithm.
#[derive(Clone, Debug, PartialEq)]
pub struct CodingResult {
    /// `m × k`, unit-norm columns in the order they were added.
    pub basis: Matrix,
    /// `k × n`.
    pub weights: Matrix,
    /// Objective after each boosting step or each alternation.
    pub objective_trace: Vec<f64>,
    pub steps_taken: usize,
    pub stopped_early: bool,
}

impl CodingResult {
    fn empty(m: usize, n: usize) -> Self {
        CodingResult {
            basis: Matrix::zeros(m, 0),
            weights: Matrix::zeros(0, n),
            objective_trace: Vec::new(),
            steps_taken: 0,
            stopped_early: true,
        }
    }

    pub fn basis_size(&self) -> usize {
        self.basis.cols()
    }

    /// `BW`.
    pub fn reconstruction(&self) -> Matrix {
        product(&self.basis, &self.weights)
    }
}

/// `BW`, including the `k = 0` case.
fn product(b: &Matrix, w: &Matrix) -> Matrix {
    b.matmul(w).expect("basis and weights conform")
}

fn check_conformable(b: &Matrix, w: &Matrix, x: &Matrix) -> Result<()> {
    if b.rows() != x.rows() || b.cols() != w.rows() || w.cols() != x.cols() {
        return Err(Error::dims(format!(
            "B {:?}, W {:?} and X {:?} do not conform",
            b.shape(),
            w.shape(),
            x.shape()
        )));
    }
    Ok(())
}

/// `½‖BW − X‖²_F + λ·Φ(W)`.
pub fn objective(b: &Matrix, w: &Matrix, x: &Matrix, params: &RegParams) -> Result<f64> {
    check_conformable(b, w, x)?;
    let r = product(b, w).sub(x)?;
    Ok(0.5 * r.frobenius_sq() + params.lambda * phi(w, params.gamma))
}

/// The smooth part of the weight problem in Gram form, so each evaluation
/// costs `O(k²n)` rather than `O(mkn)`.
struct Quadratic {
    gram: Matrix,
    cross: Matrix,
    x_sq: f64,
}

impl Quadratic {
    fn new(b: &Matrix, x: &Matrix) -> Result<Self> {
        Ok(Quadratic {
            gram: b.t_matmul(b)?,
            cross: b.t_matmul(x)?,
            x_sq: x.frobenius_sq(),
        })
    }

    /// Returns `(GW − C, ½‖BW − X‖²)`.
    fn grad_and_loss(&self, w: &Matrix) -> (Matrix, f64) {
        let gw = self.gram.matmul(w).expect("conformable");
        let loss = 0.5 * gw.inner(w).expect("same shape")
            - self.cross.inner(w).expect("same shape")
            + 0.5 * self.x_sq;
        (gw.sub(&self.cross).expect("same shape"), loss.max(0.0))
    }

    fn objective(&self, w: &Matrix, params: &RegParams) -> f64 {
        self.grad_and_loss(w).1 + params.lambda * phi(w, params.gamma)
    }
}

/// Tracks the relative-improvement stopping rule over a trailing window.
struct StallDetector {
    history: Vec<f64>,
    tol: f64,
}

impl StallDetector {
    fn new(tol: f64, initial: f64) -> Self {
        StallDetector {
            history: vec![initial],
            tol,
        }
    }

    fn push(&mut self, best: f64) -> bool {
        self.history.push(best);
        let n = self.history.len();
        if n <= STALL_WINDOW {
            return false;
        }
        let old = self.history[n - 1 - STALL_WINDOW];
        old - best <= self.tol * old.abs()
    }
}

/// Approximately minimizes `objective(B, W, X, params)` over `W`, starting
/// from `w0`. The returned point never has a larger objective than `w0`.
pub fn optimize_weights(
    b: &Matrix,
    x: &Matrix,
    params: &RegParams,
    w0: &Matrix,
    opts: &SolverOptions,
) -> Result<Matrix> {
    check_conformable(b, w0, x)?;
    params.validate()?;
    if b.cols() == 0 {
        return Ok(w0.clone());
    }
    match opts.weight_solver {
        WeightSolver::Subgradient => subgradient_descent(b, x, params, w0, opts),
        WeightSolver::Proximal => proximal_gradient(b, x, params, w0, opts),
    }
}

fn regularizer_subgradient(w: &Matrix, params: &RegParams) -> Matrix {
    let l21 = block_norm(w, NormOrder::Two, NormOrder::One);
    let l1 = block_norm(w, NormOrder::One, NormOrder::One);
    let mut g = Matrix::zeros(w.rows(), w.cols());
    for i in 0..w.rows() {
        let row = w.row(i);
        let rn = crate::linalg::norm2(row);
        let out = g.row_mut(i);
        for (o, &v) in out.iter_mut().zip(row) {
            // sign(0) = 0 and zero rows get a zero group term.
            let group = if rn > 0.0 { l21 * v / rn } else { 0.0 };
            let lasso = params.gamma * l1 * if v == 0.0 { 0.0 } else { v.signum() };
            *o = params.lambda * (group + lasso);
        }
    }
    g
}

fn subgradient_descent(
    b: &Matrix,
    x: &Matrix,
    params: &RegParams,
    w0: &Matrix,
    opts: &SolverOptions,
) -> Result<Matrix> {
    let q = Quadratic::new(b, x)?;
    let step0 = opts.w_step0.unwrap_or_else(|| {
        let n = x.frobenius();
        if n > 0.0 {
            1.0 / n
        } else {
            1.0
        }
    });
    let mut w = w0.clone();
    let mut best = (w0.clone(), q.objective(w0, params));
    let mut stall = StallDetector::new(opts.w_tol, best.1);
    for t in 1..=opts.w_max_iters {
        let (smooth, _) = q.grad_and_loss(&w);
        let g = smooth.add(&regularizer_subgradient(&w, params))?;
        if g.is_zero() {
            break;
        }
        let step = step0 / (t as f64).sqrt();
        for (wv, gv) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *wv -= step * gv;
        }
        let f = q.objective(&w, params);
        if !f.is_finite() {
            break;
        }
        if f < best.1 {
            best = (w.clone(), f);
        }
        if stall.push(best.1) {
            break;
        }
    }
    Ok(best.0)
}

fn proximal_gradient(
    b: &Matrix,
    x: &Matrix,
    params: &RegParams,
    w0: &Matrix,
    opts: &SolverOptions,
) -> Result<Matrix> {
    let q = Quadratic::new(b, x)?;
    // Lipschitz constant of the smooth gradient: λ_max(BᵀB) = λ_max(BBᵀ).
    let lip = match power_iteration(b, 1e-8, 500) {
        Ok(d) => d.rayleigh * 1.05 + 1e-12,
        Err(Error::ZeroMatrix) => return Ok(w0.clone()),
        Err(e) => return Err(e),
    };
    let step = 1.0 / lip;
    let tau = step * params.lambda;

    let mut w = w0.clone();
    let mut fw = q.objective(&w, params);
    let mut y = w.clone();
    let mut theta = 1.0f64;
    let mut momentum = false;
    let mut stall = StallDetector::new(opts.w_tol, fw);
    for _ in 0..opts.w_max_iters {
        let (grad, _) = q.grad_and_loss(&y);
        let mut v = y.clone();
        for (vv, gv) in v.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *vv -= step * gv;
        }
        let next = prox_squared_norms(&v, tau, params.gamma);
        let fnext = q.objective(&next, params);
        if fnext.is_nan() || fnext > fw {
            if momentum {
                // Restart from the last accepted point without momentum.
                y = w.clone();
                theta = 1.0;
                momentum = false;
                continue;
            }
            break;
        }
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let beta = (theta - 1.0) / theta_next;
        y = next.clone();
        for ((yv, nv), wv) in y
            .as_mut_slice()
            .iter_mut()
            .zip(next.as_slice())
            .zip(w.as_slice())
        {
            *yv = nv + beta * (nv - wv);
        }
        momentum = beta != 0.0;
        theta = theta_next;
        w = next;
        fw = fnext;
        if stall.push(fw) {
            break;
        }
    }
    Ok(w)
}

/// Per-row sorted magnitudes with prefix sums, for evaluating soft-threshold
/// norms at any level in `O(log n)`.
struct RowProfile {
    /// |v| sorted descending.
    sorted: Vec<f64>,
    /// prefix sums of |v| and v².
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl RowProfile {
    fn new(row: &[f64]) -> Self {
        let mut sorted: Vec<f64> = row.iter().map(|v| v.abs()).collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut s1 = Vec::with_capacity(sorted.len() + 1);
        let mut s2 = Vec::with_capacity(sorted.len() + 1);
        s1.push(0.0);
        s2.push(0.0);
        for &v in &sorted {
            s1.push(s1.last().unwrap() + v);
            s2.push(s2.last().unwrap() + v * v);
        }
        RowProfile { sorted, s1, s2 }
    }

    /// `(‖soft(v, t)‖₂, ‖soft(v, t)‖₁)`.
    fn soft_norms(&self, t: f64) -> (f64, f64) {
        let c = self.sorted.partition_point(|&v| v > t);
        let cf = c as f64;
        let l1 = (self.s1[c] - cf * t).max(0.0);
        let sq = (self.s2[c] - 2.0 * t * self.s1[c] + cf * t * t).max(0.0);
        (sq.sqrt(), l1)
    }
}

/// Solves `a = τ·Σᵢ (rᵢ − a)₊` exactly.
fn group_threshold(norms: &mut [f64], tau: f64) -> f64 {
    norms.sort_by(|a, b| b.total_cmp(a));
    let mut sum = 0.0;
    for c in 0..norms.len() {
        if norms[c] <= 0.0 {
            break;
        }
        sum += norms[c];
        let a = tau * sum / (1.0 + tau * (c + 1) as f64);
        let next = norms.get(c + 1).copied().unwrap_or(0.0);
        if a >= next {
            return a.min(norms[c]);
        }
    }
    0.0
}

/// Proximal operator of `W ↦ (τ/2)(‖W‖²₂,₁ + γ‖W‖²₁)` at `V`.
///
/// The minimizer is a sparse-group shrinkage, elementwise soft-threshold at
/// `t₁` followed by row shrinkage at `t₂`, with the levels tied to the
/// solution by `t₂ = τ‖W‖₂,₁` and `t₁ = τγ‖W‖₁`. For fixed `t₁` the second
/// equation is solved exactly; the first is monotone in `t₁` and solved by
/// bisection.
pub(crate) fn prox_squared_norms(v: &Matrix, tau: f64, gamma: f64) -> Matrix {
    let vmax = v.max_abs();
    if vmax == 0.0 {
        return Matrix::zeros(v.rows(), v.cols());
    }
    let profiles: Vec<RowProfile> = (0..v.rows()).map(|i| RowProfile::new(v.row(i))).collect();
    let mut norms = vec![0.0; profiles.len()];
    let levels = |t1: f64, norms: &mut Vec<f64>| -> (f64, f64) {
        let l1s: Vec<(f64, f64)> = profiles.iter().map(|p| p.soft_norms(t1)).collect();
        for (n, (r, _)) in norms.iter_mut().zip(&l1s) {
            *n = *r;
        }
        let t2 = group_threshold(&mut norms.clone(), tau);
        let l1: f64 = l1s
            .iter()
            .filter(|(r, _)| *r > t2)
            .map(|(r, l)| (1.0 - t2 / r) * l)
            .sum();
        (t2, l1)
    };

    let (mut lo, mut hi) = (0.0, vmax);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (_, l1) = levels(mid, &mut norms);
        if mid - tau * gamma * l1 < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t1 = 0.5 * (lo + hi);
    let (t2, _) = levels(t1, &mut norms);

    let mut w = Matrix::zeros(v.rows(), v.cols());
    for i in 0..v.rows() {
        let soft: Vec<f64> = v
            .row(i)
            .iter()
            .map(|&x| {
                if x.abs() > t1 {
                    x - x.signum() * t1
                } else {
                    0.0
                }
            })
            .collect();
        let r = crate::linalg::norm2(&soft);
        if r > t2 {
            let s = 1.0 - t2 / r;
            for (o, x) in w.row_mut(i).iter_mut().zip(soft) {
                *o = s * x;
            }
        }
    }
    w
}

/// Finds a unit basis vector for the residual `E` with the chosen oracle.
fn propose(
    oracle: OracleKind,
    e: &Matrix,
    params: &RegParams,
    opts: &SolverOptions,
    exemplars: &Matrix,
) -> Result<Vec<f64>> {
    match oracle {
        OracleKind::L1 => oracle_l1(e),
        OracleKind::L21 => oracle_l21(e, &opts.oracle),
        OracleKind::Heuristic => oracle_heuristic(e, params.lambda, params.gamma, &opts.oracle),
        OracleKind::Exemplar => {
            let tol = 1e-10 * (e.max_abs() / params.lambda).max(1.0);
            oracle_exemplar(e, exemplars, params.lambda, params.gamma, tol)
        }
    }
}

/// Normalized nonzero columns of `x`, the candidate set of the exemplar oracle.
fn exemplar_candidates(x: &Matrix) -> Matrix {
    let cols: Vec<Vec<f64>> = (0..x.cols())
        .filter_map(|j| normalized(&x.column(j)))
        .collect();
    Matrix::from_columns(x.rows(), &cols).expect("normalized columns are finite")
}

/// Greedy boosting of a basis for the convex sparse-coding objective.
///
/// Each step appends the oracle's vector with a zero weight row, re-optimizes
/// all weights from the previous solution, and stops early once the new row
/// stays (numerically) zero. The trace holds the objective after every
/// accepted step and is non-increasing.
pub fn boosted_coding(
    x: &Matrix,
    params: &RegParams,
    oracle: OracleKind,
    opts: &SolverOptions,
) -> Result<CodingResult> {
    params.validate()?;
    opts.validate()?;
    if !x.all_finite() {
        return Err(Error::NonFinite("data matrix"));
    }
    let (m, n) = x.shape();
    if x.is_zero() {
        return Ok(CodingResult::empty(m, n));
    }
    let exemplars = match oracle {
        OracleKind::Exemplar => exemplar_candidates(x),
        _ => Matrix::zeros(m, 0),
    };

    let mut result = CodingResult::empty(m, n);
    result.stopped_early = false;
    for _ in 0..opts.max_basis {
        let residual = product(&result.basis, &result.weights).sub(x)?;
        let b = match propose(oracle, &residual, params, opts, &exemplars) {
            Ok(b) => b,
            // A zero residual leaves nothing to add.
            Err(Error::NoResidual | Error::ZeroMatrix) => {
                result.stopped_early = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let mut basis = result.basis.clone();
        basis.push_column(&b)?;
        let mut w0 = result.weights.clone();
        w0.push_row(&vec![0.0; n])?;
        let w = optimize_weights(&basis, x, params, &w0, opts)?;
        result.steps_taken += 1;
        if crate::linalg::norm2(w.row(w.rows() - 1)) <= opts.zero_row_tol {
            result.stopped_early = true;
            break;
        }
        result
            .objective_trace
            .push(objective(&basis, &w, x, params)?);
        result.basis = basis;
        result.weights = w;
    }
    Ok(result)
}

#[inline]
fn soft_threshold(a: f64, t: f64) -> f64 {
    if a > t {
        a - t
    } else if a < -t {
        a + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent for `½‖Bw − x‖² + λ‖w‖₁` in Gram form,
/// updating `w` in place.
fn lasso_gram(gram: &Matrix, c: &[f64], lambda: f64, w: &mut [f64]) {
    let k = c.len();
    for _ in 0..LASSO_MAX_SWEEPS {
        let mut max_change = 0.0f64;
        for i in 0..k {
            let gii = gram[(i, i)];
            let old = w[i];
            let new = if gii > 0.0 {
                let rho = c[i] - crate::linalg::dot(gram.row(i), w) + gii * old;
                soft_threshold(rho, lambda) / gii
            } else {
                0.0
            };
            w[i] = new;
            max_change = max_change.max((new - old).abs());
        }
        if max_change < LASSO_TOL {
            break;
        }
    }
}

/// Minimizes `½‖Bw − x‖² + λ‖w‖₁` by cyclic coordinate descent with
/// soft-thresholding, starting from zero.
pub fn lasso_column(b: &Matrix, x: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if x.len() != b.rows() {
        return Err(Error::dims(format!(
            "target of length {} for a basis with {} rows",
            x.len(),
            b.rows()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("lasso penalty must be nonnegative"));
    }
    let gram = b.t_matmul(b)?;
    let c = b.t_mul_vec(x);
    let mut w = vec![0.0; b.cols()];
    lasso_gram(&gram, &c, lambda, &mut w);
    Ok(w)
}

/// `½‖BW − X‖²_F + λ‖W‖₁`, the baseline's objective.
pub fn lasso_objective(b: &Matrix, w: &Matrix, x: &Matrix, lambda: f64) -> Result<f64> {
    check_conformable(b, w, x)?;
    let r = product(b, w).sub(x)?;
    Ok(0.5 * r.frobenius_sq() + lambda * block_norm(w, NormOrder::One, NormOrder::One))
}

/// Lasso for every column of `X`, warm-started from `w`.
fn lasso_all(b: &Matrix, x: &Matrix, lambda: f64, w: &Matrix) -> Result<Matrix> {
    let gram = b.t_matmul(b)?;
    let cross = b.t_matmul(x)?;
    let cols: Vec<Vec<f64>> = (0..x.cols())
        .into_par_iter()
        .map(|j| {
            let mut wj = w.column(j);
            lasso_gram(&gram, &cross.column(j), lambda, &mut wj);
            wj
        })
        .collect();
    Matrix::from_columns(b.cols(), &cols)
}

fn random_unit(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        if let Some(u) = normalized(&v) {
            return u;
        }
    }
}

/// Least-squares basis update with unit-norm projection; dead columns are redrawn.
fn basis_step(x: &Matrix, w: &Matrix, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    let wwt = w.matmul_t(w)?;
    let wxt = w.matmul_t(x)?;
    let bt = solve_spd(&wwt, &wxt, NORMAL_EQ_JITTER)?;
    let mut b = bt.transpose();
    for (j, norm) in b.column_norms().into_iter().enumerate() {
        let col = if norm < DEAD_COLUMN_NORM || !norm.is_finite() {
            random_unit(rng, x.rows())
        } else {
            b.column(j).iter().map(|v| v / norm).collect()
        };
        b.set_column(j, &col);
    }
    Ok(b)
}

/// Alternating minimization of `½‖BW − X‖² + λ‖W‖₁` subject to unit-norm
/// basis columns, from a seeded Gaussian initial basis.
///
/// Each alternation runs the Lasso W-step (warm-started) and records the
/// objective; between W-steps the basis is refit by least squares and
/// renormalized. A refit basis that would raise the objective at the current
/// weights is rejected, so the trace is non-increasing.
pub fn alternating_optimization(
    x: &Matrix,
    d: usize,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<CodingResult> {
    if d == 0 {
        return Err(Error::invalid("basis size must be at least 1"));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    opts.validate()?;
    if !x.all_finite() {
        return Err(Error::NonFinite("data matrix"));
    }
    let (m, n) = x.shape();
    if d >= m * n {
        log::warn!("basis size {d} is not smaller than the data size {m}x{n}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let cols: Vec<Vec<f64>> = (0..d).map(|_| random_unit(&mut rng, m)).collect();
    let mut b = Matrix::from_columns(m, &cols)?;
    let mut w = Matrix::zeros(d, n);
    let mut trace = Vec::with_capacity(opts.alt_iters);
    for it in 0..opts.alt_iters {
        if it > 0 {
            let candidate = basis_step(x, &w, &mut rng)?;
            if lasso_objective(&candidate, &w, x, lambda)? <= lasso_objective(&b, &w, x, lambda)? {
                b = candidate;
            }
        }
        w = lasso_all(&b, x, lambda, &w)?;
        trace.push(lasso_objective(&b, &w, x, lambda)?);
    }
    Ok(CodingResult {
        basis: b,
        weights: w,
        objective_trace: trace,
        steps_taken: opts.alt_iters,
        stopped_early: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn both_solvers() -> [SolverOptions; 2] {
        [
            SolverOptions {
                weight_solver: WeightSolver::Subgradient,
                w_max_iters: 20_000,
                ..SolverOptions::default()
            },
            SolverOptions {
                weight_solver: WeightSolver::Proximal,
                ..SolverOptions::default()
            },
        ]
    }

    #[test]
    fn objective_examples() {
        let params = RegParams::new(0.3, 2.0).unwrap();
        let x = m(&[&[0.6], &[0.8]]);
        let v = objective(&Matrix::identity(2), &Matrix::zeros(2, 1), &x, &params).unwrap();
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-15);

        let xv = 1.7;
        let one = m(&[&[1.0]]);
        let v = objective(&one, &m(&[&[xv]]), &m(&[&[xv]]), &params).unwrap();
        assert_abs_diff_eq!(v, 0.3 * 3.0 * xv * xv / 2.0, epsilon = 1e-12);

        let v = objective(
            &Matrix::identity(2),
            &Matrix::zeros(2, 3),
            &Matrix::zeros(2, 3),
            &params,
        )
        .unwrap();
        assert_eq!(v, 0.0);
        assert!(objective(&Matrix::identity(2), &Matrix::zeros(3, 1), &x, &params).is_err());
    }

    #[test]
    fn weights_fixed_point_at_zero() {
        let params = RegParams::new(0.5, 1.0).unwrap();
        for opts in both_solvers() {
            let w = optimize_weights(
                &Matrix::identity(2),
                &Matrix::zeros(2, 3),
                &params,
                &Matrix::zeros(2, 3),
                &opts,
            )
            .unwrap();
            assert!(w.is_zero());
        }
    }

    #[test]
    fn weights_scalar_closed_form() {
        // ½(w − 1)² + 0.1·(1 + 1)·w²/2 is minimized at 1/(1 + 0.2).
        let params = RegParams::new(0.1, 1.0).unwrap();
        for opts in both_solvers() {
            let w = optimize_weights(&m(&[&[1.0]]), &m(&[&[1.0]]), &params, &m(&[&[0.0]]), &opts)
                .unwrap();
            assert_abs_diff_eq!(w[(0, 0)], 1.0 / 1.2, epsilon = 1e-3);
        }
    }

    #[test]
    fn weights_match_grid_search() {
        let params = RegParams::new(0.5, 1.0).unwrap();
        let b = Matrix::identity(2);
        let x = m(&[&[1.0], &[0.0]]);
        let mut best = f64::INFINITY;
        for i in 0..=4000 {
            for j in 0..=4000 {
                let w = m(&[&[-2.0 + 1e-3 * i as f64], &[-2.0 + 1e-3 * j as f64]]);
                best = best.min(objective(&b, &w, &x, &params).unwrap());
            }
        }
        for opts in both_solvers() {
            let w = optimize_weights(&b, &x, &params, &Matrix::zeros(2, 1), &opts).unwrap();
            let got = objective(&b, &w, &x, &params).unwrap();
            assert!(
                (got - best).abs() <= 5e-3,
                "{:?}: {got} vs grid {best}",
                opts.weight_solver
            );
        }
    }

    #[test]
    fn weights_never_worse_than_start() {
        let params = RegParams::new(2.0, 0.5).unwrap();
        let b = m(&[&[1.0, 0.0], &[0.0, 0.6], &[0.0, 0.8]]);
        let x = m(&[&[1.0, -2.0, 0.5], &[0.3, 0.1, 0.0], &[2.0, 0.0, -1.0]]);
        let w0 = m(&[&[0.9, -1.8, 0.4], &[1.5, 0.0, -0.5]]);
        let start = objective(&b, &w0, &x, &params).unwrap();
        for opts in both_solvers() {
            let w = optimize_weights(&b, &x, &params, &w0, &opts).unwrap();
            assert!(objective(&b, &w, &x, &params).unwrap() <= start + 1e-12);
        }
    }

    #[test]
    fn prox_is_optimal_against_perturbations() {
        let v = m(&[&[1.5, -0.2, 0.7], &[0.1, 0.05, -0.3], &[-2.0, 1.0, 0.4]]);
        for (tau, gamma) in [(0.05, 1.0), (0.2, 0.1), (0.1, 5.0), (1.0, 1.0)] {
            let w = prox_squared_norms(&v, tau, gamma);
            let f = |w: &Matrix| 0.5 * w.sub(&v).unwrap().frobenius_sq() + tau * phi(w, gamma);
            let base = f(&w);
            for k in 0..9 {
                for delta in [1e-4, -1e-4, 1e-2, -1e-2] {
                    let mut p = w.clone();
                    p.as_mut_slice()[k] += delta;
                    assert!(f(&p) >= base - 1e-12, "tau {tau} gamma {gamma}");
                }
            }
        }
        // Squared norms shrink towards zero without reaching it.
        assert!(prox_squared_norms(&v, 1e6, 1.0).max_abs() <= 2.0 / 1e6);
    }

    #[test]
    fn lasso_examples() {
        let w = lasso_column(&m(&[&[1.0]]), &[2.0], 0.5).unwrap();
        assert_abs_diff_eq!(w[0], 1.5, epsilon = 1e-12);
        let b = m(&[&[0.6, 0.0], &[0.8, 1.0]]);
        let x = [1.0, 2.0];
        let lam = b.t_mul_vec(&x).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert_eq!(lasso_column(&b, &x, lam).unwrap(), vec![0.0, 0.0]);
        let w = lasso_column(&Matrix::identity(2), &[1.0, -3.0], 1.0).unwrap();
        assert_abs_diff_eq!(w[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], -2.0, epsilon = 1e-12);
        assert!(lasso_column(&Matrix::identity(2), &[1.0], 1.0).is_err());
    }

    #[test]
    fn boosted_on_zero_data_is_empty() {
        let params = RegParams::new(0.1, 1.0).unwrap();
        let r = boosted_coding(
            &Matrix::zeros(3, 4),
            &params,
            OracleKind::Heuristic,
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(r.basis.shape(), (3, 0));
        assert_eq!(r.weights.shape(), (0, 4));
        assert!(r.objective_trace.is_empty());
        assert!(r.stopped_early);
    }

    #[test]
    fn boosted_rank_one_finds_direction() {
        let u = [0.48, 0.6, 0.64];
        let v = [1.0, -2.0, 0.5, 1.5, -0.7, 0.2];
        let rows: Vec<Vec<f64>> = u
            .iter()
            .map(|a| v.iter().map(|b| a * b).collect())
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let params = RegParams::new(1e-3, 1.0).unwrap();
        let opts = SolverOptions {
            max_basis: 1,
            ..SolverOptions::default()
        };
        let r = boosted_coding(&x, &params, OracleKind::Heuristic, &opts).unwrap();
        let b = r.basis.column(0);
        assert_abs_diff_eq!(crate::linalg::dot(&b, &u).abs(), 1.0, epsilon = 1e-9);
        let resid = r.reconstruction().sub(&x).unwrap().frobenius();
        assert!(resid <= 0.05 * x.frobenius());
    }

    #[test]
    fn boosted_huge_lambda_stops_immediately() {
        let x = m(&[&[1.0, -2.0, 0.5], &[0.3, 0.1, 0.0], &[2.0, 0.0, -1.0]]);
        let params = RegParams::new(1e8, 1.0).unwrap();
        for opts in both_solvers() {
            let r = boosted_coding(&x, &params, OracleKind::Heuristic, &opts).unwrap();
            assert_eq!(r.basis_size(), 0);
            assert!(r.stopped_early);
        }
    }

    #[test]
    fn alternating_zero_data() {
        let opts = SolverOptions {
            alt_iters: 3,
            ..SolverOptions::default()
        };
        let r = alternating_optimization(&Matrix::zeros(4, 5), 2, 0.1, &opts).unwrap();
        assert!(r.weights.is_zero());
        assert_eq!(r.objective_trace, vec![0.0; 3]);
        for n in r.basis.column_norms() {
            assert_abs_diff_eq!(n, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn alternating_is_seeded() {
        let x = m(&[
            &[1.0, -2.0, 0.5, 0.0],
            &[0.3, 0.1, 0.0, 1.0],
            &[2.0, 0.0, -1.0, 0.2],
        ]);
        let opts = SolverOptions {
            seed: 7,
            ..SolverOptions::default()
        };
        let a = alternating_optimization(&x, 2, 0.05, &opts).unwrap();
        let b = alternating_optimization(&x, 2, 0.05, &opts).unwrap();
        assert_eq!(a, b);
        for w in a.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn alternating_recovers_sparse_identity_factorization() {
        let w_true = m(&[
            &[1.0, 0.0, -2.0, 0.5, 0.0, 1.5, 0.0, -1.0],
            &[0.0, 1.2, 0.0, 0.0, -0.7, 0.0, 2.0, 0.3],
        ]);
        let x = w_true.clone();
        let recovered = (0..20)
            .filter(|&seed| {
                let opts = SolverOptions {
                    seed,
                    ..SolverOptions::default()
                };
                let r = alternating_optimization(&x, 2, 1e-3, &opts).unwrap();
                r.reconstruction().sub(&x).unwrap().frobenius() <= 0.05 * x.frobenius()
            })
            .count();
        assert!(recovered >= 18, "recovered on {recovered}/20 seeds");
    }

    #[test]
    fn boosted_is_deterministic_with_unit_columns() {
        let x = m(&[
            &[1.0, -2.0, 0.5, 0.0, 0.3],
            &[0.3, 0.1, 0.0, 1.0, -0.4],
            &[2.0, 0.0, -1.0, 0.2, 0.9],
            &[0.1, 0.7, 0.2, -0.6, 0.0],
        ]);
        let params = RegParams::new(0.01, 0.5).unwrap();
        for oracle in [
            OracleKind::L1,
            OracleKind::L21,
            OracleKind::Heuristic,
            OracleKind::Exemplar,
        ] {
            let opts = SolverOptions {
                max_basis: 4,
                ..SolverOptions::default()
            };
            let a = boosted_coding(&x, &params, oracle, &opts).unwrap();
            assert_eq!(a, boosted_coding(&x, &params, oracle, &opts).unwrap());
            assert!(a.basis_size() >= 1);
            for n in a.basis.column_norms() {
                assert_abs_diff_eq!(n, 1.0, epsilon = 1e-9);
            }
            for w in a.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{oracle}: {:?}", a.objective_trace);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn larger_lambda_never_raises_phi(
            vals in proptest::collection::vec(-2.0f64..2.0, 6 + 9),
            l1 in 0.01f64..1.0,
            factor in 1.1f64..10.0,
            gamma in 0.1f64..5.0,
        ) {
            let b = Matrix::from_vec(3, 2, vals[..6].to_vec()).unwrap();
            let norms = b.column_norms();
            proptest::prop_assume!(norms.iter().all(|&n| n > 0.2));
            let cols: Vec<Vec<f64>> = (0..2).map(|j| b.column(j).iter().map(|v| v / norms[j]).collect()).collect();
            let b = Matrix::from_columns(3, &cols).unwrap();
            let x = Matrix::from_vec(3, 3, vals[6..].to_vec()).unwrap();
            let opts = SolverOptions {
                w_max_iters: 20_000,
                w_tol: 1e-14,
                ..SolverOptions::default()
            };
            let solve = |lambda: f64| {
                let p = RegParams::new(lambda, gamma).unwrap();
                phi(&optimize_weights(&b, &x, &p, &Matrix::zeros(2, 3), &opts).unwrap(), gamma)
            };
            proptest::prop_assert!(solve(l1 * factor) <= solve(l1) + 1e-6);
        }
    }

    #[test]
    fn alternating_rejects_empty_basis() {
        assert!(
            alternating_optimization(&Matrix::identity(2), 0, 0.1, &SolverOptions::default())
                .is_err()
        );
    }
}
