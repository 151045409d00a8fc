//! Block norms, the `½‖W‖²₂,₁ + (γ/2)‖W‖²₁` regularizer and its Fenchel conjugate.
//!
//! Rows of `W` index basis vectors and columns index examples. The conjugate
//! of the regularizer is an infimal convolution that collapses to a scalar
//! search over the clamp level `α`:
//!
//! ```text
//! Φ*(Z) = min_α  α²/(2γ) + ½ maxᵢ Σⱼ ((|Zᵢⱼ| − α)₊)²
//! ```
//!
//! and a subgradient of `Φ*` at `Z` is the boosting step: the maximal row of
//! `Z` soft-thresholded at `α̂`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Order of a vector norm inside a block norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormOrder {
    One,
    Two,
    Inf,
}

impl NormOrder {
    fn of(self, values: impl Iterator<Item = f64>) -> f64 {
        match self {
            NormOrder::One => values.map(f64::abs).sum(),
            NormOrder::Two => values.map(|v| v * v).sum::<f64>().sqrt(),
            NormOrder::Inf => values.fold(0.0, |m, v| m.max(v.abs())),
        }
    }
}

/// `‖M‖_{p,q}`: the L_q norm (across rows) of the per-row L_p norms.
pub fn block_norm(m: &Matrix, p: NormOrder, q: NormOrder) -> f64 {
    q.of((0..m.rows()).map(|i| p.of(m.row(i).iter().copied())))
}

/// Regularization weights: `λ` scales the whole regularizer, `γ` weights the
/// squared L₁ term against the squared L₂,₁ term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegParams {
    pub lambda: f64,
    pub gamma: f64,
}

impl RegParams {
    pub fn new(lambda: f64, gamma: f64) -> Result<Self> {
        let p = RegParams { lambda, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// `Φ(W) = ½‖W‖²₂,₁ + (γ/2)‖W‖²₁`. Does not include `λ`.
pub fn phi(w: &Matrix, gamma: f64) -> f64 {
    let l21 = block_norm(w, NormOrder::Two, NormOrder::One);
    let l1 = block_norm(w, NormOrder::One, NormOrder::One);
    0.5 * l21 * l21 + 0.5 * gamma * l1 * l1
}

/// Minimizer of the infimal convolution at a fixed clamp level: every entry
/// of `Z` clipped to `[−α, α]`.
pub fn infimal_a(z: &Matrix, alpha: f64) -> Matrix {
    z.map(|v| v.clamp(-alpha, alpha))
}

/// `½‖Z − A‖²₂,∞ + ‖A‖²_∞/(2γ)`, the objective minimized over `A` by the conjugate.
pub fn infimal_objective(z: &Matrix, a: &Matrix, gamma: f64) -> Result<f64> {
    let r = z.sub(a)?;
    let l2inf = block_norm(&r, NormOrder::Two, NormOrder::Inf);
    let ainf = a.max_abs();
    Ok(0.5 * l2inf * l2inf + ainf * ainf / (2.0 * gamma))
}

/// Solution of the scalar search behind `Φ*(Z)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaSolution {
    /// Optimal clamp level `α̂ ∈ [0, ‖Z‖_∞]`.
    pub alpha_hat: f64,
    /// `Φ*(Z)`.
    pub conjugate_value: f64,
    /// Lowest row index attaining `κ`.
    pub max_row_index: usize,
    /// `maxᵢ Σₖ ((|Zᵢₖ| − α̂)₊)²`.
    pub kappa: f64,
}

/// Default absolute tolerance on `α` for a dual matrix `z`.
pub fn default_alpha_tol(z: &Matrix) -> f64 {
    1e-10 * z.max_abs().max(1.0)
}

/// Row-wise excess over a clamp level: `(Σ (|zⱼ| − α)₊², Σ (|zⱼ| − α)₊)`.
#[inline]
fn row_excess(row: &[f64], alpha: f64) -> (f64, f64) {
    let mut sq = 0.0;
    let mut lin = 0.0;
    for &v in row {
        let e = v.abs() - alpha;
        if e > 0.0 {
            sq += e * e;
            lin += e;
        }
    }
    (sq, lin)
}

/// `(maxᵢ Σⱼ ((|Zᵢⱼ| − α)₊)², argmax)` with the lowest index on ties.
fn max_row_excess(z: &Matrix, alpha: f64) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for i in 0..z.rows() {
        let (sq, _) = row_excess(z.row(i), alpha);
        if sq > best.0 {
            best = (sq, i);
        }
    }
    best
}

#[inline]
fn alpha_objective(z: &Matrix, gamma: f64, alpha: f64) -> f64 {
    alpha * alpha / (2.0 * gamma) + 0.5 * max_row_excess(z, alpha).0
}

/// Evaluates `Φ*(Z)` by bisection on the derivative of the convex scalar
/// problem over `α ∈ [0, ‖Z‖_∞]`, to absolute tolerance `tol` in `α`.
pub fn solve_alpha(z: &Matrix, gamma: f64, tol: f64) -> Result<AlphaSolution> {
    if !z.all_finite() {
        return Err(Error::NonFinite("dual matrix"));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::invalid("alpha tolerance must be positive"));
    }
    let zmax = z.max_abs();
    if zmax == 0.0 {
        return Ok(AlphaSolution {
            alpha_hat: 0.0,
            conjugate_value: 0.0,
            max_row_index: 0,
            kappa: 0.0,
        });
    }

    // α/γ − Σⱼ (|Zᵢ*ⱼ| − α)₊ for a maximal row i* is a subgradient of the
    // convex objective, hence nondecreasing in α; bisect on its sign.
    let slope = |a: f64| {
        let (_, i) = max_row_excess(z, a);
        a / gamma - row_excess(z.row(i), a).1
    };
    let (mut lo, mut hi) = (0.0, zmax);
    if slope(0.0) >= 0.0 {
        hi = 0.0;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let alpha_hat = [hi, 0.5 * (lo + hi), lo]
        .into_iter()
        .map(|a| (a, alpha_objective(z, gamma, a)))
        .fold(
            (hi, f64::INFINITY),
            |best, c| if c.1 < best.1 { c } else { best },
        )
        .0;

    let (kappa, max_row_index) = max_row_excess(z, alpha_hat);
    Ok(AlphaSolution {
        alpha_hat,
        conjugate_value: alpha_hat * alpha_hat / (2.0 * gamma) + 0.5 * kappa,
        max_row_index,
        kappa,
    })
}

/// `Φ*(Z)` at the default tolerance.
pub fn conjugate(z: &Matrix, gamma: f64) -> Result<f64> {
    Ok(solve_alpha(z, gamma, default_alpha_tol(z))?.conjugate_value)
}

/// A subgradient of `Φ*` at `Z`: the boosting step `ΔW`.
///
/// Normally a single row of `Z` attains the max at `α̂` and the step is that
/// row soft-thresholded at `α̂`, zero elsewhere. When `α̂` sits where two rows
/// cross, neither row alone is a subgradient; the step then mixes the tied
/// rows with the steepest and shallowest excess so that `‖ΔW‖₁ = α̂/γ`,
/// which is the Fenchel–Young equality condition.
pub fn conjugate_subgradient(z: &Matrix, gamma: f64, tol: f64) -> Result<Matrix> {
    let sol = solve_alpha(z, gamma, tol)?;
    let mut dw = Matrix::zeros(z.rows(), z.cols());
    if sol.kappa == 0.0 {
        return Ok(dw);
    }
    let alpha = sol.alpha_hat;

    // Rows tied with the max up to the search accuracy.
    let slack = 1e-8 * sol.kappa;
    let mut steep = (sol.max_row_index, f64::NEG_INFINITY);
    let mut shallow = (sol.max_row_index, f64::INFINITY);
    for i in 0..z.rows() {
        let (sq, lin) = row_excess(z.row(i), alpha);
        if sq >= sol.kappa - slack {
            if lin > steep.1 {
                steep = (i, lin);
            }
            if lin < shallow.1 {
                shallow = (i, lin);
            }
        }
    }

    let mut put_row = |i: usize, weight: f64| {
        if weight == 0.0 {
            return;
        }
        let src = z.row(i).to_vec();
        for (d, v) in dw.row_mut(i).iter_mut().zip(src) {
            if v.abs() > alpha {
                *d = weight * (v - v.signum() * alpha);
            }
        }
    };

    if steep.0 == shallow.0 || steep.1 - shallow.1 <= f64::EPSILON * steep.1 {
        put_row(sol.max_row_index, 1.0);
    } else {
        let target = (alpha / gamma).clamp(shallow.1, steep.1);
        let theta = (target - shallow.1) / (steep.1 - shallow.1);
        put_row(steep.0, theta);
        put_row(shallow.0, 1.0 - theta);
    }
    Ok(dw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    /// Independent oracle: dense uniform grid over `α ∈ [0, ‖Z‖_∞]`.
    fn grid_alpha(z: &Matrix, gamma: f64, points: usize) -> (f64, f64, f64) {
        let zmax = z.max_abs();
        let step = zmax / (points - 1) as f64;
        let mut best = (0.0, f64::INFINITY);
        for k in 0..points {
            let a = k as f64 * step;
            let mut worst = 0.0f64;
            for i in 0..z.rows() {
                let s: f64 = z
                    .row(i)
                    .iter()
                    .map(|v| (v.abs() - a).max(0.0).powi(2))
                    .sum();
                worst = worst.max(s);
            }
            let g = a * a / (2.0 * gamma) + 0.5 * worst;
            if g < best.1 {
                best = (a, g);
            }
        }
        (best.0, best.1, step)
    }

    #[test]
    fn block_norm_examples() {
        let a = m(&[&[3.0, 4.0], &[0.0, 0.0]]);
        assert_eq!(block_norm(&a, NormOrder::Two, NormOrder::One), 5.0);
        assert_eq!(block_norm(&a, NormOrder::Two, NormOrder::Inf), 5.0);
        let b = m(&[&[1.0, -2.0], &[3.0, 0.0]]);
        assert_eq!(block_norm(&b, NormOrder::One, NormOrder::One), 6.0);
        assert_eq!(block_norm(&b, NormOrder::Inf, NormOrder::Inf), 3.0);
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi(&Matrix::zeros(3, 2), 1.0), 0.0);
        // ‖[3,4]‖₂,₁ = 5, ‖[3,4]‖₁ = 7
        let w = m(&[&[3.0, 4.0]]);
        assert_abs_diff_eq!(phi(&w, 1.0), 0.5 * 25.0 + 0.5 * 49.0, epsilon = 1e-12);
        assert_abs_diff_eq!(phi(&w, 1.0), 37.0, epsilon = 1e-12);
        assert_abs_diff_eq!(phi(&m(&[&[1.0], &[0.0]]), 2.0), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn infimal_a_examples() {
        assert_eq!(infimal_a(&m(&[&[2.0, 1.0]]), 1.0), m(&[&[1.0, 1.0]]));
        assert!(infimal_a(&m(&[&[2.0, -1.0], &[0.3, 7.0]]), 0.0).is_zero());
        assert_eq!(infimal_a(&m(&[&[-0.5]]), 1.0), m(&[&[-0.5]]));
    }

    #[test]
    fn infimal_a_minimizes_at_fixed_alpha() {
        // Grid over A with ‖A‖_∞ ≤ α for Z = [[2, 1]], α = 1.
        let z = m(&[&[2.0, 1.0]]);
        let alpha = 1.0;
        let best = infimal_objective(&z, &infimal_a(&z, alpha), 1.0).unwrap();
        for i in 0..=40 {
            for j in 0..=40 {
                let a = m(&[&[-1.0 + 0.05 * i as f64, -1.0 + 0.05 * j as f64]]);
                assert!(infimal_objective(&z, &a, 1.0).unwrap() >= best - 1e-12);
            }
        }
    }

    #[test]
    fn solve_alpha_single_row() {
        let z = m(&[&[2.0, 1.0]]);
        let s = solve_alpha(&z, 1.0, 1e-12).unwrap();
        assert_abs_diff_eq!(s.alpha_hat, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.conjugate_value, 1.0, epsilon = 1e-9);
        assert_eq!(s.max_row_index, 0);
        assert_abs_diff_eq!(s.kappa, 1.0, epsilon = 1e-9);
        let (ga, gv, step) = grid_alpha(&z, 1.0, 20_001);
        assert!((s.alpha_hat - ga).abs() <= 2.0 * step);
        assert_abs_diff_eq!(s.conjugate_value, gv, epsilon = 1e-6);
    }

    #[test]
    fn solve_alpha_zero_input() {
        let s = solve_alpha(&Matrix::zeros(2, 3), 1.0, 1e-10).unwrap();
        assert_eq!(
            s,
            AlphaSolution {
                alpha_hat: 0.0,
                conjugate_value: 0.0,
                max_row_index: 0,
                kappa: 0.0
            }
        );
    }

    #[test]
    fn solve_alpha_large_gamma_vanishes() {
        let z = m(&[&[2.0, 1.0]]);
        let mut prev = f64::INFINITY;
        for gamma in [1e2, 1e4, 1e6] {
            let s = solve_alpha(&z, gamma, default_alpha_tol(&z)).unwrap();
            let (_, gv, _) = grid_alpha(&z, gamma, 100_001);
            assert!((s.conjugate_value - gv).abs() <= 1e-6);
            assert!(s.conjugate_value <= prev);
            prev = s.conjugate_value;
        }
        assert!(prev <= 1e-4);
    }

    #[test]
    fn solve_alpha_rejects_non_finite() {
        let mut z = Matrix::zeros(1, 2);
        z.as_mut_slice()[0] = f64::NAN;
        assert!(solve_alpha(&z, 1.0, 1e-10).is_err());
        assert!(solve_alpha(&m(&[&[1.0]]), 0.0, 1e-10).is_err());
    }

    #[test]
    fn subgradient_examples() {
        let dw = conjugate_subgradient(&m(&[&[2.0, 1.0]]), 1.0, 1e-12).unwrap();
        assert_abs_diff_eq!(dw[(0, 0)], 1.0, epsilon = 1e-9);
        assert_eq!(dw[(0, 1)], 0.0);

        assert!(conjugate_subgradient(&Matrix::zeros(2, 2), 1.0, 1e-10)
            .unwrap()
            .is_zero());

        let z = m(&[&[3.0, 0.0], &[0.0, 1.0]]);
        let dw = conjugate_subgradient(&z, 1e-6, default_alpha_tol(&z)).unwrap();
        let s = solve_alpha(&z, 1e-6, default_alpha_tol(&z)).unwrap();
        assert!(s.alpha_hat < 1e-3);
        assert_abs_diff_eq!(dw[(0, 0)], 3.0, epsilon = 1e-3);
        assert_eq!(&dw.as_slice()[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn subgradient_mixes_rows_at_a_crossing() {
        // Row 0 has one large entry, row 1 several moderate ones; at γ = 0.1
        // the minimizer lies where their excess curves cross.
        let z = m(&[&[3.0, 0.0, 0.0], &[1.9, 1.9, 1.9]]);
        let gamma = 0.1;
        let tol = default_alpha_tol(&z);
        let s = solve_alpha(&z, gamma, tol).unwrap();
        let h0 = row_excess(z.row(0), s.alpha_hat).0;
        let h1 = row_excess(z.row(1), s.alpha_hat).0;
        assert!(
            (h0 - h1).abs() < 1e-6,
            "expected a crossing, got {h0} vs {h1}"
        );

        let dw = conjugate_subgradient(&z, gamma, tol).unwrap();
        let nonzero_rows = (0..2)
            .filter(|&i| dw.row(i).iter().any(|&v| v != 0.0))
            .count();
        assert_eq!(nonzero_rows, 2);
        let gap = dw.inner(&z).unwrap() - phi(&dw, gamma) - s.conjugate_value;
        assert!(gap.abs() < 1e-9, "Fenchel–Young gap {gap}");
    }

    #[test]
    fn subgradient_single_row_for_identical_rows() {
        let z = m(&[&[2.0, 1.0], &[2.0, 1.0]]);
        let dw = conjugate_subgradient(&z, 1.0, 1e-12).unwrap();
        assert!(dw.row(1).iter().all(|&v| v == 0.0));
        assert_abs_diff_eq!(dw[(0, 0)], 1.0, epsilon = 1e-9);
    }

    fn matrix_strategy(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
        (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
            prop::collection::vec(-3.0f64..3.0, r * c)
                .prop_map(move |v| Matrix::from_vec(r, c, v).unwrap())
        })
    }

    fn pair_strategy(max_rows: usize, max_cols: usize) -> impl Strategy<Value = (Matrix, Matrix)> {
        (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
            (
                prop::collection::vec(-3.0f64..3.0, r * c),
                prop::collection::vec(-3.0f64..3.0, r * c),
            )
                .prop_map(move |(a, b)| {
                    (
                        Matrix::from_vec(r, c, a).unwrap(),
                        Matrix::from_vec(r, c, b).unwrap(),
                    )
                })
        })
    }

    const ORDERS: [NormOrder; 3] = [NormOrder::One, NormOrder::Two, NormOrder::Inf];

    proptest! {
        #[test]
        fn block_norm_axioms((a, b) in pair_strategy(5, 5), s in -4.0f64..4.0) {
            for p in ORDERS {
                for q in ORDERS {
                    let na = block_norm(&a, p, q);
                    let nb = block_norm(&b, p, q);
                    let nab = block_norm(&a.add(&b).unwrap(), p, q);
                    prop_assert!(nab <= na + nb + 1e-12);
                    let ns = block_norm(&a.scaled(s), p, q);
                    prop_assert!((ns - s.abs() * na).abs() <= 1e-12 * (1.0 + na));
                }
            }
        }

        #[test]
        fn holder_for_l21_and_l2inf((w, z) in pair_strategy(5, 5)) {
            let bound = block_norm(&w, NormOrder::Two, NormOrder::One)
                * block_norm(&z, NormOrder::Two, NormOrder::Inf);
            prop_assert!(w.inner(&z).unwrap() <= bound + 1e-12);

            // W supported on a max-norm row of Z, proportional to it, attains the bound.
            let norms: Vec<f64> = (0..z.rows()).map(|i| crate::linalg::norm2(z.row(i))).collect();
            let top = crate::linalg::argmax(&norms).unwrap();
            let mut tight = Matrix::zeros(z.rows(), z.cols());
            tight.row_mut(top).copy_from_slice(z.row(top));
            let lhs = tight.inner(&z).unwrap();
            let rhs = block_norm(&tight, NormOrder::Two, NormOrder::One)
                * block_norm(&z, NormOrder::Two, NormOrder::Inf);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs));
        }

        #[test]
        fn fenchel_young((w, z) in pair_strategy(6, 6), gamma in 0.05f64..20.0) {
            let conj = conjugate(&z, gamma).unwrap();
            let slack = phi(&w, gamma) + conj - w.inner(&z).unwrap();
            prop_assert!(slack >= -1e-9);

            let dw = conjugate_subgradient(&z, gamma, default_alpha_tol(&z)).unwrap();
            let gap = dw.inner(&z).unwrap() - phi(&dw, gamma) - conj;
            prop_assert!((-1e-7..=1e-9).contains(&gap), "gap {}", gap);
        }

        #[test]
        fn conjugate_is_convex((z, y) in pair_strategy(4, 4), gamma in 0.05f64..20.0, theta in 0.01f64..0.99) {
            let mix = z.scaled(theta).add(&y.scaled(1.0 - theta)).unwrap();
            let lhs = conjugate(&mix, gamma).unwrap();
            let rhs = theta * conjugate(&z, gamma).unwrap() + (1.0 - theta) * conjugate(&y, gamma).unwrap();
            prop_assert!(lhs <= rhs + 1e-9);
        }

        #[test]
        fn subgradient_inequality((z, d) in pair_strategy(4, 4), gamma in 0.05f64..20.0, scale in 0.001f64..1.0) {
            let y = z.add(&d.scaled(scale)).unwrap();
            let dw = conjugate_subgradient(&z, gamma, default_alpha_tol(&z)).unwrap();
            let lhs = conjugate(&y, gamma).unwrap();
            let rhs = conjugate(&z, gamma).unwrap() + dw.inner(&y.sub(&z).unwrap()).unwrap();
            prop_assert!(lhs >= rhs - 1e-7);
        }

        #[test]
        fn conjugate_matches_infimal_objective(z in matrix_strategy(5, 5), gamma in 0.05f64..20.0) {
            let s = solve_alpha(&z, gamma, default_alpha_tol(&z)).unwrap();
            let direct = infimal_objective(&z, &infimal_a(&z, s.alpha_hat), gamma).unwrap();
            prop_assert!((s.conjugate_value - direct).abs() <= 1e-9);
            prop_assert!(s.alpha_hat >= 0.0 && s.alpha_hat <= z.max_abs());
        }

        #[test]
        fn solve_alpha_matches_grid(z in matrix_strategy(4, 4), gi in 0usize..3) {
            let gamma = [0.1, 1.0, 10.0][gi];
            let s = solve_alpha(&z, gamma, default_alpha_tol(&z)).unwrap();
            let (ga, gv, step) = grid_alpha(&z, gamma, 10_001);
            prop_assert!((s.alpha_hat - ga).abs() <= 2.0 * step);
            // The objective can have a kink at the minimizer, so the grid is
            // only accurate to its Lipschitz constant times the step.
            let zmax = z.max_abs();
            let lip = zmax / gamma + z.cols() as f64 * zmax;
            prop_assert!(s.conjugate_value <= gv + 1e-12);
            prop_assert!(gv - s.conjugate_value <= lip * step);
        }
    }
}
