//! Basis-vector oracles for boosted coding.
//!
//! Each oracle receives the reconstruction error `E = BW − X` and proposes a
//! unit vector `b` whose weight row would be the boosting step. Candidates are
//! ranked by `Φ*(z)` with `z = −(1/λ)·bᵀE`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    argmax, norm2, normalized, power_iteration, Matrix, POWER_MAX_ITER, POWER_TOL,
};
use crate::regularizer::{default_alpha_tol, solve_alpha};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Number of error columns offered as candidates by the heuristic.
    pub n_candidates: usize,
    /// Gradient-ascent step size.
    pub step_size: f64,
    /// Ascent stops once the gradient norm or the step length falls below this.
    pub ascent_tol: f64,
    pub max_ascent_iters: usize,
    pub power_tol: f64,
    pub power_max_iter: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            n_candidates: 10,
            step_size: 0.1,
            ascent_tol: 1e-6,
            max_ascent_iters: 200,
            power_tol: POWER_TOL,
            power_max_iter: POWER_MAX_ITER,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.step_size, self.ascent_tol, self.power_tol];
        if self.n_candidates == 0
            || self.max_ascent_iters == 0
            || self.power_max_iter == 0
            || positive.iter().any(|v| !(*v > 0.0 && v.is_finite()))
        {
            return Err(Error::invalid(format!(
                "oracle settings must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Which oracle boosted coding calls at each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    /// Normalized column of `E` with the largest norm.
    L1,
    /// Dominant eigenvector of `EEᵀ`.
    L21,
    /// Eigenvector and top columns as candidates, then projected gradient ascent.
    Heuristic,
    /// Best normalized data column.
    Exemplar,
}

impl FromStr for OracleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(OracleKind::L1),
            "l21" => Ok(OracleKind::L21),
            "heuristic" => Ok(OracleKind::Heuristic),
            "exemplar" => Ok(OracleKind::Exemplar),
            other => Err(Error::invalid(format!(
                "unknown oracle '{other}' (expected l1, l21, heuristic or exemplar)"
            ))),
        }
    }
}

impl fmt::Display for OracleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleKind::L1 => "l1",
            OracleKind::L21 => "l21",
            OracleKind::Heuristic => "heuristic",
            OracleKind::Exemplar => "exemplar",
        })
    }
}

/// The normalized column of `e` with the largest L₂ norm (lowest index on ties).
pub fn oracle_l1(e: &Matrix) -> Result<Vec<f64>> {
    let norms = e.column_norms();
    let j = argmax(&norms)
        .filter(|&j| norms[j] > 0.0)
        .ok_or(Error::NoResidual)?;
    Ok(e.column(j).iter().map(|v| v / norms[j]).collect())
}

/// The dominant eigenvector of `EEᵀ`.
pub fn oracle_l21(e: &Matrix, cfg: &OracleConfig) -> Result<Vec<f64>> {
    Ok(power_iteration(e, cfg.power_tol, cfg.power_max_iter)?.vector)
}

fn check_unit(b: &[f64], tol: f64) -> Result<()> {
    let n = norm2(b);
    if (n - 1.0).abs() > tol {
        return Err(Error::invalid(format!(
            "basis vector has norm {n}, expected 1"
        )));
    }
    Ok(())
}

/// `z = −(1/λ)·bᵀE` as a single-row matrix.
fn dual_row(b: &[f64], e: &Matrix, lambda: f64) -> Matrix {
    let z: Vec<f64> = e.t_mul_vec(b).into_iter().map(|v| -v / lambda).collect();
    Matrix::from_vec(1, z.len(), z).expect("finite inputs give a finite dual row")
}

/// `Φ*(−(1/λ)·bᵀE)` for a unit vector `b`: the score every oracle maximizes.
pub fn oracle_objective(b: &[f64], e: &Matrix, lambda: f64, gamma: f64, tol: f64) -> Result<f64> {
    check_unit(b, 1e-9)?;
    if b.len() != e.rows() {
        return Err(Error::dims(format!(
            "basis vector of length {} for an error matrix with {} rows",
            b.len(),
            e.rows()
        )));
    }
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::invalid("lambda must be positive"));
    }
    Ok(solve_alpha(&dual_row(b, e, lambda), gamma, tol)?.conjugate_value)
}

fn score(b: &[f64], e: &Matrix, lambda: f64, gamma: f64) -> Result<f64> {
    let z = dual_row(b, e, lambda);
    Ok(solve_alpha(&z, gamma, default_alpha_tol(&z))?.conjugate_value)
}

/// Scores every candidate column and returns `(index, score)` of the best,
/// lowest index on ties.
fn best_candidate(
    candidates: &[Vec<f64>],
    e: &Matrix,
    lambda: f64,
    gamma: f64,
) -> Result<(usize, f64)> {
    let scores = candidates
        .par_iter()
        .map(|b| score(b, e, lambda, gamma))
        .collect::<Result<Vec<_>>>()?;
    let i = argmax(&scores).ok_or(Error::EmptyCandidates)?;
    Ok((i, scores[i]))
}

/// The column of `candidates` (unit-norm columns) with the largest oracle objective.
pub fn oracle_exemplar(
    e: &Matrix,
    candidates: &Matrix,
    lambda: f64,
    gamma: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    if candidates.cols() == 0 {
        return Err(Error::EmptyCandidates);
    }
    if candidates.rows() != e.rows() {
        return Err(Error::dims(format!(
            "candidates have {} rows, error matrix has {}",
            candidates.rows(),
            e.rows()
        )));
    }
    let cols: Vec<Vec<f64>> = (0..candidates.cols())
        .map(|j| candidates.column(j))
        .collect();
    for c in &cols {
        check_unit(c, 1e-6)?;
    }
    let scores = cols
        .par_iter()
        .map(|b| oracle_objective_unchecked(b, e, lambda, gamma, tol))
        .collect::<Result<Vec<_>>>()?;
    let best = argmax(&scores).ok_or(Error::EmptyCandidates)?;
    Ok(cols.into_iter().nth(best).expect("index in range"))
}

fn oracle_objective_unchecked(
    b: &[f64],
    e: &Matrix,
    lambda: f64,
    gamma: f64,
    tol: f64,
) -> Result<f64> {
    Ok(solve_alpha(&dual_row(b, e, lambda), gamma, tol)?.conjugate_value)
}

/// Gradient of `b ↦ Φ*(−(1/λ)·bᵀE)`: `−(1/λ)·Σⱼ Eⱼ·sign(zⱼ)·(|zⱼ| − α̂)₊`.
fn ascent_gradient(b: &[f64], e: &Matrix, lambda: f64, gamma: f64) -> Result<(Vec<f64>, f64)> {
    let z = dual_row(b, e, lambda);
    let sol = solve_alpha(&z, gamma, default_alpha_tol(&z))?;
    let weights: Vec<f64> = z
        .row(0)
        .iter()
        .map(|&v| {
            let excess = v.abs() - sol.alpha_hat;
            if excess > 0.0 {
                -v.signum() * excess / lambda
            } else {
                0.0
            }
        })
        .collect();
    Ok((e.mul_vec(&weights), sol.conjugate_value))
}

/// Indices of the `n` largest-norm nonzero columns, largest first, lowest
/// index among equal norms.
fn top_columns(norms: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..norms.len()).filter(|&j| norms[j] > 0.0).collect();
    idx.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Candidate selection followed by projected gradient ascent on the unit sphere.
///
/// The candidates are the dominant eigenvector of `EEᵀ` and the normalized
/// `n_candidates` largest columns of `E`. The best candidate seeds an ascent
/// `b ← (b + η∇)/‖b + η∇‖`; the best point visited is returned, so the
/// result never scores below the seed.
pub fn oracle_heuristic(
    e: &Matrix,
    lambda: f64,
    gamma: f64,
    cfg: &OracleConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("lambda must be positive"));
    }
    let mut candidates = vec![oracle_l21(e, cfg)?];
    let norms = e.column_norms();
    for j in top_columns(&norms, cfg.n_candidates) {
        candidates.push(e.column(j).iter().map(|v| v / norms[j]).collect());
    }
    let (seed, seed_score) = best_candidate(&candidates, e, lambda, gamma)?;
    let mut best = (candidates.swap_remove(seed), seed_score);

    let mut b = best.0.clone();
    for _ in 0..cfg.max_ascent_iters {
        let (grad, current) = ascent_gradient(&b, e, lambda, gamma)?;
        if current > best.1 {
            best = (b.clone(), current);
        }
        if norm2(&grad) < cfg.ascent_tol {
            break;
        }
        let stepped: Vec<f64> = b
            .iter()
            .zip(&grad)
            .map(|(x, g)| x + cfg.step_size * g)
            .collect();
        let next = match normalized(&stepped) {
            Some(n) => n,
            None => break,
        };
        let moved = next
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        b = next;
        if moved < cfg.ascent_tol {
            let last = score(&b, e, lambda, gamma)?;
            if last > best.1 {
                best = (b, last);
            }
            break;
        }
    }
    Ok(best.0)
}
