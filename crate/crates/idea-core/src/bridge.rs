//! Closed-form mixture solver projecting a target domain onto the convex hull
//! of stored assets.
//!
//! The objective is `||A w - b||^2 + lambda * w' diag(u) w` over the simplex,
//! where column `j` of `A` stacks asset `j`'s mean over its std and `b` does
//! the same for the target. The equality-constrained optimum has a closed
//! form through the KKT system with normal matrix `H = A'A + lambda diag(u)`;
//! nonnegativity is restored afterwards by clip-and-renormalize. A projected
//! gradient reference optimizer and a perturbation-bound evaluator accompany
//! the solver for verification.

use crate::error::{IdeaError, Result};
use crate::library::AssetLibrary;
use crate::linalg::{
    dot, euclidean_simplex_projection, matvec, matvec_t, power_iteration, Cholesky, Matrix,
};
use crate::prompt::SoftPrompt;
use crate::stats::FeatureStats;
use crate::Real;

/// Assembled quadratic program for the mixture weights.
#[derive(Debug, Clone)]
pub struct BridgeProblem<T> {
    stat_matrix: Matrix<T>,
    target: Vec<T>,
    uncertainties: Vec<T>,
    lambda: T,
}

impl<T: Real> BridgeProblem<T> {
    pub fn new(
        stat_matrix: Matrix<T>,
        target: Vec<T>,
        uncertainties: Vec<T>,
        lambda: T,
    ) -> Result<Self> {
        let k = stat_matrix.cols();
        if k == 0 {
            return Err(IdeaError::invalid("problem needs at least one column"));
        }
        if stat_matrix.rows() != target.len() {
            return Err(IdeaError::invalid(format!(
                "stat matrix has {} rows, target has {}",
                stat_matrix.rows(),
                target.len()
            )));
        }
        if uncertainties.len() != k {
            return Err(IdeaError::invalid(format!(
                "{} uncertainties for {k} columns",
                uncertainties.len()
            )));
        }
        if !stat_matrix.is_finite()
            || !target.iter().all(|v| v.is_finite())
            || !uncertainties.iter().all(|v| v.is_finite())
        {
            return Err(IdeaError::invalid("non-finite entry in bridge problem"));
        }
        if uncertainties.iter().any(|u| *u < T::zero()) {
            return Err(IdeaError::invalid("negative uncertainty"));
        }
        if !(lambda >= T::zero()) || !lambda.is_finite() {
            return Err(IdeaError::invalid("lambda must be finite and >= 0"));
        }
        Ok(BridgeProblem {
            stat_matrix,
            target,
            uncertainties,
            lambda,
        })
    }

    pub fn num_assets(&self) -> usize {
        self.stat_matrix.cols()
    }

    pub fn stat_matrix(&self) -> &Matrix<T> {
        &self.stat_matrix
    }

    pub fn target(&self) -> &[T] {
        &self.target
    }

    pub fn uncertainties(&self) -> &[T] {
        &self.uncertainties
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    /// Same problem with a replaced target vector (used by stability tests).
    pub fn with_target(&self, target: Vec<T>) -> Result<Self> {
        BridgeProblem::new(
            self.stat_matrix.clone(),
            target,
            self.uncertainties.clone(),
            self.lambda,
        )
    }
}

/// Solver output: the equality-constrained optimum and its simplex projection.
#[derive(Debug, Clone)]
pub struct BridgeSolution<T> {
    /// Equality-constrained optimum; sums to one, may have negative entries.
    pub weights_raw: Vec<T>,
    /// Simplex weights after clip-and-renormalize.
    pub weights: Vec<T>,
    /// Lagrange multiplier of the sum constraint.
    pub nu: T,
    /// True when any raw entry had to be clipped.
    pub projected: bool,
    /// True when the normal matrix needed diagonal jitter to factor.
    pub jitter_used: bool,
}

/// Stack a library and target statistics into a [`BridgeProblem`].
///
/// Column `j` is `[mean_j; std_j]` in library order, the target vector is
/// `[mean_t; std_t]`, and uncertainties pass through unchanged.
pub fn assemble_problem<T: Real>(
    lib: &AssetLibrary<T>,
    target: &FeatureStats<T>,
    lambda: T,
) -> Result<BridgeProblem<T>> {
    if lib.is_empty() {
        return Err(IdeaError::EmptyLibrary);
    }
    let c = lib.feature_dim();
    if target.dim() != c {
        return Err(IdeaError::invalid(format!(
            "target dim {} does not match library dim {c}",
            target.dim()
        )));
    }
    let k = lib.len();
    let mut a = Matrix::zeros(2 * c, k);
    for (j, asset) in lib.assets().iter().enumerate() {
        for (r, v) in asset.coords().mean().iter().enumerate() {
            a.set(r, j, *v);
        }
        for (r, v) in asset.coords().std().iter().enumerate() {
            a.set(c + r, j, *v);
        }
    }
    let mut b = Vec::with_capacity(2 * c);
    b.extend_from_slice(target.mean());
    b.extend_from_slice(target.std());
    let u = lib.assets().iter().map(|a| a.uncertainty()).collect();
    BridgeProblem::new(a, b, u, lambda)
}

/// Clip negatives to zero and renormalize; all-nonpositive input falls back
/// to the uniform vector with the fallback flag set.
#[derive(Debug, Clone)]
pub struct SimplexProjection<T> {
    pub weights: Vec<T>,
    pub clipped: bool,
    pub uniform_fallback: bool,
}

pub fn project_simplex<T: Real>(w_raw: &[T]) -> SimplexProjection<T> {
    assert!(!w_raw.is_empty(), "projection needs at least one weight");
    let clipped = w_raw.iter().any(|w| *w < T::zero());
    let mut weights: Vec<T> = w_raw.iter().map(|w| w.max(T::zero())).collect();
    let sum: T = weights.iter().copied().sum();
    if sum > T::zero() {
        for w in weights.iter_mut() {
            *w = *w / sum;
        }
        SimplexProjection {
            weights,
            clipped,
            uniform_fallback: false,
        }
    } else {
        let k = w_raw.len();
        SimplexProjection {
            weights: vec![T::one() / T::from_count(k); k],
            clipped,
            uniform_fallback: true,
        }
    }
}

/// Jitter escalation ladder applied when the normal matrix will not factor.
const JITTER_LADDER: [f64; 8] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

struct KktSolve<T> {
    chol: Cholesky<T>,
    weights_raw: Vec<T>,
    nu: T,
    /// Diagonal jitter the accepted factorization used (zero when none).
    jitter: T,
}

impl<T: Real> KktSolve<T> {
    fn jitter_used(&self) -> bool {
        self.jitter > T::zero()
    }
}

fn normal_matrix<T: Real>(problem: &BridgeProblem<T>, jitter: T) -> Matrix<T> {
    let a = &problem.stat_matrix;
    let k = a.cols();
    let mut h = Matrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let mut s = T::zero();
            for r in 0..a.rows() {
                s = s + a.get(r, i) * a.get(r, j);
            }
            if i == j {
                s = s + problem.lambda * problem.uncertainties[i] + jitter;
            }
            h.set(i, j, s);
            h.set(j, i, s);
        }
    }
    h
}

/// Factor the normal matrix and solve the KKT system, escalating jitter while
/// the factorization fails or the recovered weights do not satisfy the sum
/// constraint to well below its tolerance.
fn kkt_solve<T: Real>(problem: &BridgeProblem<T>) -> Result<KktSolve<T>> {
    let k = problem.num_assets();
    let g = matvec_t(&problem.stat_matrix, &problem.target);
    let ones = vec![T::one(); k];
    let residual_tol = T::sum_tol(1e-10);

    for delta in JITTER_LADDER {
        let jitter = T::real(delta);
        let h = normal_matrix(problem, jitter);
        let Some(chol) = Cholesky::factor(&h) else {
            continue;
        };
        let x = chol.solve(&ones); // H^-1 1
        let y = chol.solve(&g); // H^-1 g
        let denom = dot(&ones, &x);
        if !(denom > T::zero()) || !denom.is_finite() {
            continue;
        }
        let nu = (dot(&ones, &y) - T::one()) / denom;
        let weights_raw: Vec<T> = y.iter().zip(&x).map(|(yi, xi)| *yi - nu * *xi).collect();
        let sum: T = weights_raw.iter().copied().sum();
        if !weights_raw.iter().all(|w| w.is_finite()) || (sum - T::one()).abs() > residual_tol {
            continue;
        }
        return Ok(KktSolve {
            chol,
            weights_raw,
            nu,
            jitter,
        });
    }
    Err(IdeaError::DegenerateProblem(format!(
        "normal matrix stayed singular through jitter up to {:e}",
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

/// Closed-form KKT solution of the equality-constrained problem followed by
/// the clip-and-renormalize projection.
pub fn solve_closed_form<T: Real>(problem: &BridgeProblem<T>) -> Result<BridgeSolution<T>> {
    let solved = kkt_solve(problem)?;
    let projection = project_simplex(&solved.weights_raw);
    let jitter_used = solved.jitter_used();
    Ok(BridgeSolution {
        weights_raw: solved.weights_raw,
        weights: projection.weights,
        nu: solved.nu,
        projected: projection.clipped,
        jitter_used,
    })
}

/// Mix stored prompts and coordinates with shared weights.
///
/// Both spaces interpolate linearly; the induced statistics equal
/// `stat_matrix * weights` reshaped back into mean/std blocks.
pub fn compose_bridge<T: Real>(
    lib: &AssetLibrary<T>,
    weights: &[T],
) -> Result<(SoftPrompt<T>, FeatureStats<T>)> {
    if weights.len() != lib.len() {
        return Err(IdeaError::invalid(format!(
            "{} weights for {} assets",
            weights.len(),
            lib.len()
        )));
    }
    if lib.is_empty() {
        return Err(IdeaError::EmptyLibrary);
    }
    let l = lib.prompt_len();
    let c = lib.feature_dim();
    let mut tokens = Matrix::zeros(l, c);
    let mut mean = vec![T::zero(); c];
    let mut std = vec![T::zero(); c];
    for (j, asset) in lib.assets().iter().enumerate() {
        let w = weights[j];
        tokens.axpy(w, asset.prompt().tokens());
        for (acc, v) in mean.iter_mut().zip(asset.coords().mean()) {
            *acc = *acc + *v * w;
        }
        for (acc, v) in std.iter_mut().zip(asset.coords().std()) {
            *acc = *acc + *v * w;
        }
    }
    Ok((
        SoftPrompt::new(tokens)?,
        FeatureStats::new(mean, std)?,
    ))
}

/// Objective value `||A w - b||^2 + lambda * sum u_j w_j^2`.
pub fn bridge_objective<T: Real>(problem: &BridgeProblem<T>, w: &[T]) -> T {
    let aw = matvec(&problem.stat_matrix, w);
    let mut fit = T::zero();
    for (x, b) in aw.iter().zip(&problem.target) {
        let d = *x - *b;
        fit = fit + d * d;
    }
    let mut reg = T::zero();
    for (u, wj) in problem.uncertainties.iter().zip(w) {
        reg = reg + *u * *wj * *wj;
    }
    fit + problem.lambda * reg
}

/// Safe step size for [`oracle_solve`]: at most `1 / (2 lambda_max(H))`,
/// bounded through the Frobenius norm so no eigenvalue estimate is needed.
pub fn oracle_step_size<T: Real>(problem: &BridgeProblem<T>) -> T {
    let a = &problem.stat_matrix;
    let mut frob = T::zero();
    for v in a.as_slice() {
        frob = frob + *v * *v;
    }
    let u_max = problem
        .uncertainties
        .iter()
        .fold(T::zero(), |acc, u| acc.max(*u));
    let bound = frob + problem.lambda * u_max;
    T::real(0.5) / bound.max(T::real(1e-12))
}

/// Reference optimizer: plain projected gradient descent over the simplex
/// with the exact sort-based Euclidean projection. Deterministic; starts at
/// the uniform vector and stops early only at a machine-precision fixed
/// point.
pub fn oracle_solve<T: Real>(
    problem: &BridgeProblem<T>,
    iterations: usize,
    step_size: T,
) -> Vec<T> {
    let k = problem.num_assets();
    let mut w = vec![T::one() / T::from_count(k); k];
    if k == 1 {
        return w;
    }
    let two = T::real(2.0);
    let fixed_point_tol = T::sum_tol(1e-15);
    for _ in 0..iterations.max(1) {
        // grad = 2 A'(A w - b) + 2 lambda u .* w
        let mut residual = matvec(&problem.stat_matrix, &w);
        for (r, b) in residual.iter_mut().zip(&problem.target) {
            *r = *r - *b;
        }
        let mut grad = matvec_t(&problem.stat_matrix, &residual);
        for ((gj, uj), wj) in grad.iter_mut().zip(&problem.uncertainties).zip(&w) {
            *gj = two * (*gj + problem.lambda * *uj * *wj);
        }
        let stepped: Vec<T> = w
            .iter()
            .zip(&grad)
            .map(|(wj, gj)| *wj - step_size * *gj)
            .collect();
        let next = euclidean_simplex_projection(&stepped);
        let max_change = next
            .iter()
            .zip(&w)
            .fold(T::zero(), |acc, (a, b)| acc.max((*a - *b).abs()));
        w = next;
        if max_change <= fixed_point_tol {
            break;
        }
    }
    w
}

/// Sensitivity bound `||H^-1 A'||_2 * (1 + cond(H^-1))` on the raw weights
/// under target perturbations. Spectral quantities come from power iteration
/// at tolerance 1e-10 on the small operators involved.
pub fn perturbation_bound<T: Real>(problem: &BridgeProblem<T>) -> Result<T> {
    let solved = kkt_solve(problem)?;
    let chol = &solved.chol;
    let k = problem.num_assets();
    let a = &problem.stat_matrix;
    let tol = T::real(1e-10);
    let max_iter = 200_000;

    // ||H^-1 A'||_2^2 = lambda_max(H^-1 A' A H^-1).
    let op_norm_sq = power_iteration(k, tol, max_iter, |v| {
        let t = chol.solve(v);
        let s = matvec(a, &t);
        let r = matvec_t(a, &s);
        chol.solve(&r)
    });
    // cond(H^-1) = lambda_max(H) / lambda_min(H), on the matrix the solver
    // actually factored (jitter included).
    let h = normal_matrix(problem, solved.jitter);
    let lambda_max = power_iteration(k, tol, max_iter, |v| matvec(&h, v));
    let inv_lambda_min = power_iteration(k, tol, max_iter, |v| chol.solve(v));
    let cond = lambda_max * inv_lambda_min;
    Ok(op_norm_sq.sqrt() * (T::one() + cond))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::{Asset, AssetLibrary};
    use crate::rng::SplitMix64;

    fn identity_problem(b: Vec<f64>, lambda: f64, u: Vec<f64>) -> BridgeProblem<f64> {
        let k = u.len();
        let mut a = Matrix::zeros(b.len(), k);
        for i in 0..k {
            a.set(i, i, 1.0);
        }
        BridgeProblem::new(a, b, u, lambda).unwrap()
    }

    #[test]
    fn single_asset_is_forced_to_one() {
        let a: Matrix<f64> = Matrix::from_rows(vec![vec![2.0], vec![0.5], vec![1.0], vec![1.0]]).unwrap();
        let p = BridgeProblem::new(a, vec![0.1, 0.2, 0.3, 0.4], vec![0.7], 0.4).unwrap();
        let sol = solve_closed_form(&p).unwrap();
        assert!((sol.weights_raw[0] - 1.0).abs() < 1e-12);
        assert_eq!(sol.weights, vec![1.0]);
    }

    #[test]
    fn symmetric_problem_splits_evenly() {
        let p = identity_problem(vec![0.5, 0.5], 0.4, vec![1.0, 1.0]);
        let sol = solve_closed_form(&p).unwrap();
        assert!((sol.weights[0] - 0.5).abs() < 1e-12);
        assert!((sol.weights[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hand_kkt_arithmetic() {
        // H = 2I, g = [1, 0], nu = -0.5, w_raw = [0.75, 0.25].
        let p = identity_problem(vec![1.0, 0.0], 1.0, vec![1.0, 1.0]);
        let sol = solve_closed_form(&p).unwrap();
        assert!((sol.nu - (-0.5)).abs() < 1e-12);
        assert!((sol.weights_raw[0] - 0.75).abs() < 1e-12);
        assert!((sol.weights_raw[1] - 0.25).abs() < 1e-12);
        assert!(!sol.projected);
        assert!(!sol.jitter_used);

        let oracle = oracle_solve(&p, 50_000, oracle_step_size(&p));
        assert!((oracle[0] - 0.75).abs() < 1e-6);
        assert!((oracle[1] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn projection_examples() {
        let p = project_simplex(&[0.3f64, 0.7]);
        assert_eq!(p.weights, vec![0.3, 0.7]);
        assert!(!p.clipped && !p.uniform_fallback);

        let p = project_simplex(&[1.2f64, -0.2]);
        assert_eq!(p.weights, vec![1.0, 0.0]);
        assert!(p.clipped && !p.uniform_fallback);

        let p = project_simplex(&[-1.0f64, -1.0]);
        assert_eq!(p.weights, vec![0.5, 0.5]);
        assert!(p.clipped && p.uniform_fallback);
    }

    fn small_library() -> AssetLibrary<f64> {
        let mut rng = SplitMix64::new(51);
        let mut lib = AssetLibrary::new(8, 2, 3).unwrap();
        for _ in 0..3 {
            let prompt = SoftPrompt::gaussian(2, 3, 1.0, &mut rng);
            let mean: Vec<f64> = (0..3).map(|_| rng.next_normal()).collect();
            let std: Vec<f64> = (0..3).map(|_| rng.next_normal().abs() + 0.2).collect();
            lib.insert_or_merge(
                Asset::new(
                    prompt,
                    FeatureStats::new(mean, std).unwrap(),
                    rng.next_unit(),
                )
                .unwrap(),
            )
            .unwrap();
        }
        lib
    }

    #[test]
    fn assemble_shapes_and_order() {
        let mut lib = AssetLibrary::new(4, 1, 2).unwrap();
        lib.insert_or_merge(
            Asset::new(
                SoftPrompt::new(Matrix::from_rows(vec![vec![0.0, 0.0]]).unwrap()).unwrap(),
                FeatureStats::new(vec![1.0, 0.0], vec![1.0, 1.0]).unwrap(),
                0.3,
            )
            .unwrap(),
        )
        .unwrap();
        let target = FeatureStats::new(vec![0.5, 0.5], vec![1.0, 1.0]).unwrap();
        let p = assemble_problem(&lib, &target, 0.4).unwrap();
        assert_eq!(p.stat_matrix().rows(), 4);
        assert_eq!(p.stat_matrix().cols(), 1);
        // Column layout: mean block then std block.
        let col: Vec<f64> = (0..4).map(|r| p.stat_matrix().get(r, 0)).collect();
        assert_eq!(col, vec![1.0, 0.0, 1.0, 1.0]);
        assert_eq!(p.target(), &[0.5, 0.5, 1.0, 1.0]);
        assert_eq!(p.uncertainties(), &[0.3]);
    }

    #[test]
    fn assemble_rejects_empty_library() {
        let lib: AssetLibrary<f64> = AssetLibrary::new(4, 1, 2).unwrap();
        let target = FeatureStats::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        match assemble_problem(&lib, &target, 0.4) {
            Err(IdeaError::EmptyLibrary) => {}
            other => panic!("expected EmptyLibrary, got {other:?}"),
        }
    }

    #[test]
    fn one_hot_composition_is_a_vertex() {
        let lib = small_library();
        let (prompt, stats) = compose_bridge(&lib, &[0.0, 1.0, 0.0]).unwrap();
        let asset = &lib.assets()[1];
        assert_eq!(prompt.tokens().as_slice(), asset.prompt().tokens().as_slice());
        assert_eq!(stats.mean(), asset.coords().mean());
        assert_eq!(stats.std(), asset.coords().std());
    }

    #[test]
    fn composition_matches_direct_recomputation() {
        let lib = small_library();
        let w = [0.25, 0.75, 0.0];
        let (prompt, stats) = compose_bridge(&lib, &w).unwrap();
        for i in 0..lib.prompt_len() {
            for j in 0..lib.feature_dim() {
                let direct = 0.25 * lib.assets()[0].prompt().tokens().get(i, j)
                    + 0.75 * lib.assets()[1].prompt().tokens().get(i, j);
                assert!((prompt.tokens().get(i, j) - direct).abs() < 1e-15);
            }
        }
        for j in 0..lib.feature_dim() {
            let direct = 0.25 * lib.assets()[0].coords().mean()[j]
                + 0.75 * lib.assets()[1].coords().mean()[j];
            assert!((stats.mean()[j] - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn composed_stats_equal_matrix_vector_product() {
        let lib = small_library();
        let w = [0.2, 0.5, 0.3];
        let target = FeatureStats::new(vec![0.0; 3], vec![1.0; 3]).unwrap();
        let p = assemble_problem(&lib, &target, 0.4).unwrap();
        let (_, stats) = compose_bridge(&lib, &w).unwrap();
        let aw = matvec(p.stat_matrix(), &w);
        for (j, v) in stats.mean().iter().enumerate() {
            assert_eq!(v.to_bits(), aw[j].to_bits());
        }
        for (j, v) in stats.std().iter().enumerate() {
            assert_eq!(v.to_bits(), aw[3 + j].to_bits());
        }
    }

    #[test]
    fn identical_assets_compose_to_the_common_value() {
        let mut lib = AssetLibrary::new(4, 1, 2).unwrap();
        for _ in 0..3 {
            lib.insert_or_merge(
                Asset::new(
                    SoftPrompt::new(Matrix::from_rows(vec![vec![0.4, -0.2]]).unwrap()).unwrap(),
                    FeatureStats::new(vec![1.0, 2.0], vec![0.5, 0.6]).unwrap(),
                    0.1,
                )
                .unwrap(),
            )
            .unwrap();
        }
        let (prompt, stats) = compose_bridge(&lib, &[0.2f64, 0.3, 0.5]).unwrap();
        assert!((prompt.tokens().get(0, 0) - 0.4).abs() < 1e-15);
        assert!((stats.mean()[0] - 1.0).abs() < 1e-15);
        assert!((stats.std()[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn oracle_is_no_worse_than_clip_renormalize() {
        // Target far outside the hull drives a raw negative entry.
        let a = Matrix::from_rows(vec![vec![1.0, 2.0], vec![0.0, 0.0]]).unwrap();
        let p = BridgeProblem::new(a, vec![4.0, 0.0], vec![0.0, 0.0], 0.0).unwrap();
        let sol = solve_closed_form(&p).unwrap();
        assert!(sol.projected, "test problem should clip");
        let oracle = oracle_solve(&p, 100_000, oracle_step_size(&p));
        let clip_obj = bridge_objective(&p, &sol.weights);
        let oracle_obj = bridge_objective(&p, &oracle);
        assert!(oracle_obj <= clip_obj + 1e-9);
    }

    #[test]
    fn jitter_rescues_duplicate_columns() {
        // Identical columns with zero regularization: A'A singular.
        let a = Matrix::from_rows(vec![vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let p = BridgeProblem::new(a, vec![1.0, 2.0], vec![0.0, 0.0], 0.0).unwrap();
        let sol = solve_closed_form(&p).unwrap();
        assert!(sol.jitter_used);
        let sum: f64 = sol.weights_raw.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn degenerate_problem_errors_after_ladder() {
        // Huge-scale singular matrix: the jitter ladder tops out far below
        // the pivot threshold.
        let s = 1e12;
        let a = Matrix::from_rows(vec![vec![s, s], vec![s, s]]).unwrap();
        let p = BridgeProblem::new(a, vec![s, s], vec![0.0, 0.0], 0.0).unwrap();
        match solve_closed_form(&p) {
            Err(IdeaError::DegenerateProblem(_)) => {}
            other => panic!("expected DegenerateProblem, got {other:?}"),
        }
    }

    #[test]
    fn perturbation_bound_hand_case() {
        // H = 2I: ||H^-1 A'|| = 0.5, cond = 1, bound = 1.
        let p = identity_problem(vec![0.3, 0.7], 1.0, vec![1.0, 1.0]);
        let bound = perturbation_bound(&p).unwrap();
        assert!((bound - 1.0).abs() < 1e-8);
    }

    #[test]
    fn bound_shrinks_as_uncertainty_grows() {
        for lambda in [0.4, 1.0] {
            let small = identity_problem(vec![0.3, 0.7], lambda, vec![1.0, 1.0]);
            let large = identity_problem(vec![0.3, 0.7], lambda, vec![100.0, 100.0]);
            let b_small = perturbation_bound(&small).unwrap();
            let b_large = perturbation_bound(&large).unwrap();
            assert!(b_large < b_small);
        }
    }

    #[test]
    fn bound_dominates_operator_norm() {
        let mut rng = SplitMix64::new(91);
        for _ in 0..10 {
            let k = 1 + rng.next_index(5);
            let c = 2 + rng.next_index(4);
            let data: Vec<f64> = (0..2 * c * k).map(|_| rng.next_normal()).collect();
            let a = Matrix::from_vec(2 * c, k, data).unwrap();
            let b: Vec<f64> = (0..2 * c).map(|_| rng.next_normal()).collect();
            let u: Vec<f64> = (0..k).map(|_| rng.next_unit() + 0.1).collect();
            let p = BridgeProblem::new(a, b, u, 0.4).unwrap();
            let solved = kkt_solve(&p).unwrap();
            let op_norm_sq = power_iteration(k, 1e-10, 200_000, |v| {
                let t = solved.chol.solve(v);
                let s = matvec(p.stat_matrix(), &t);
                let r = matvec_t(p.stat_matrix(), &s);
                solved.chol.solve(&r)
            });
            let bound = perturbation_bound(&p).unwrap();
            assert!(bound >= op_norm_sq.sqrt());
        }
    }
}
