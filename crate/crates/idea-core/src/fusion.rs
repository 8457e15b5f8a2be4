//! The reference fusion stack and decision head.
//!
//! The stack is a fixed mean-context token mixer: layer `l` maps token matrix
//! `T(l)` (one row per token) to
//!
//! ```text
//! c(l)      = row mean of T(l) over all rows
//! T(l+1)_i  = tanh(self_w * T(l)_i + ctx_w * c(l) + instr_w * instr + bias)
//! ```
//!
//! Prompt rows, when present, sit first in `T(0)` and influence candidate rows
//! only through the context mean. Scores are taken on the last `N` rows of the
//! final layer by the head vector, and the policy is their softmax.
//!
//! The recurrence is differentiable by hand; this module carries the exact
//! reverse-mode passes used for per-layer Fisher traces and prompt gradients,
//! plus a finite-difference expected-Hessian oracle for tests.

use crate::error::{IdeaError, Result};
use crate::linalg::{dot, matvec, matvec_t, Matrix};
use crate::prompt::{AlignmentSpec, SoftPrompt};
use crate::rng::SplitMix64;
use crate::stats::{compute_stats, moment_distance, FeatureStats};
use crate::Real;

/// Per-channel initialization gains for [`FusionStack::seeded_gained`].
///
/// Each gain multiplies the `1/sqrt(C)` base standard deviation of one
/// parameter group: the shared-context weights (the prompt's only path to
/// the candidate rows), the instruction weights (cross-episode variation),
/// and the scoring head (policy peakedness, hence entropy spread).
#[derive(Debug, Clone, Copy)]
pub struct InitGains {
    pub ctx: f64,
    pub instr: f64,
    pub head: f64,
}

impl Default for InitGains {
    fn default() -> Self {
        InitGains {
            ctx: 1.0,
            instr: 1.0,
            head: 1.0,
        }
    }
}

/// Parameters of one fusion layer.
#[derive(Debug, Clone)]
pub struct FusionLayer<T> {
    pub self_w: Matrix<T>,
    pub ctx_w: Matrix<T>,
    pub instr_w: Matrix<T>,
    pub bias: Vec<T>,
}

/// Frozen multi-layer token mixer plus scoring head.
#[derive(Debug, Clone)]
pub struct FusionStack<T> {
    layers: Vec<FusionLayer<T>>,
    head: Vec<T>,
    feature_dim: usize,
}

impl<T: Real> FusionStack<T> {
    pub fn new(layers: Vec<FusionLayer<T>>, head: Vec<T>) -> Result<Self> {
        if layers.is_empty() {
            return Err(IdeaError::invalid("stack needs at least one layer"));
        }
        let c = head.len();
        if c == 0 {
            return Err(IdeaError::invalid("head must be non-empty"));
        }
        if !head.iter().all(|v| v.is_finite()) {
            return Err(IdeaError::invalid("non-finite head entry"));
        }
        for (i, layer) in layers.iter().enumerate() {
            for (name, w) in [
                ("self_w", &layer.self_w),
                ("ctx_w", &layer.ctx_w),
                ("instr_w", &layer.instr_w),
            ] {
                if w.rows() != c || w.cols() != c {
                    return Err(IdeaError::invalid(format!(
                        "layer {i} {name} is {}x{}, expected {c}x{c}",
                        w.rows(),
                        w.cols()
                    )));
                }
                if !w.is_finite() {
                    return Err(IdeaError::invalid(format!("layer {i} {name} not finite")));
                }
            }
            if layer.bias.len() != c || !layer.bias.iter().all(|v| v.is_finite()) {
                return Err(IdeaError::invalid(format!("layer {i} bias invalid")));
            }
        }
        Ok(FusionStack {
            layers,
            head,
            feature_dim: c,
        })
    }

    /// Gaussian initialization: every parameter drawn independently with
    /// standard deviation `1/sqrt(C)`. Draw order is fixed: per layer
    /// `self_w`, `ctx_w`, `instr_w` (row-major), then `bias`; head last.
    pub fn seeded(num_layers: usize, feature_dim: usize, rng: &mut SplitMix64) -> Self {
        FusionStack::seeded_gained(num_layers, feature_dim, InitGains::default(), rng)
    }

    /// [`FusionStack::seeded`] with per-channel gains (see [`InitGains`]).
    pub fn seeded_gained(
        num_layers: usize,
        feature_dim: usize,
        gains: InitGains,
        rng: &mut SplitMix64,
    ) -> Self {
        let scale = 1.0 / (feature_dim as f64).sqrt();
        let mat = |rng: &mut SplitMix64, s: f64| {
            let data: Vec<T> = (0..feature_dim * feature_dim)
                .map(|_| T::real(rng.next_normal() * s))
                .collect();
            Matrix::from_vec(feature_dim, feature_dim, data).expect("sized buffer")
        };
        let layers = (0..num_layers)
            .map(|_| FusionLayer {
                self_w: mat(rng, scale),
                ctx_w: mat(rng, gains.ctx * scale),
                instr_w: mat(rng, gains.instr * scale),
                bias: (0..feature_dim)
                    .map(|_| T::real(rng.next_normal() * scale))
                    .collect(),
            })
            .collect();
        let head = (0..feature_dim)
            .map(|_| T::real(rng.next_normal() * gains.head * scale))
            .collect();
        FusionStack::new(layers, head).expect("seeded parameters are finite")
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn layers(&self) -> &[FusionLayer<T>] {
        &self.layers
    }

    pub fn head(&self) -> &[T] {
        &self.head
    }
}

/// One step's input: candidate node features plus the instruction embedding.
#[derive(Debug, Clone)]
pub struct Observation<T> {
    node_features: Matrix<T>,
    instruction: Vec<T>,
}

impl<T: Real> Observation<T> {
    pub fn new(node_features: Matrix<T>, instruction: Vec<T>) -> Result<Self> {
        if node_features.rows() == 0 {
            return Err(IdeaError::invalid("observation needs at least one candidate"));
        }
        if node_features.cols() != instruction.len() {
            return Err(IdeaError::invalid(format!(
                "node features have dim {}, instruction has dim {}",
                node_features.cols(),
                instruction.len()
            )));
        }
        if !node_features.is_finite() || !instruction.iter().all(|v| v.is_finite()) {
            return Err(IdeaError::invalid("non-finite entry in observation"));
        }
        Ok(Observation {
            node_features,
            instruction,
        })
    }

    pub fn num_candidates(&self) -> usize {
        self.node_features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.cols()
    }

    pub fn node_features(&self) -> &Matrix<T> {
        &self.node_features
    }

    pub fn instruction(&self) -> &[T] {
        &self.instruction
    }
}

/// Everything the forward pass produced, kept for reverse-mode passes.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    token_mats: Vec<Matrix<T>>,
    prompt_rows: usize,
    num_candidates: usize,
    scores: Vec<T>,
    policy: Vec<T>,
}

impl<T: Real> ForwardTrace<T> {
    /// Token matrix `T(l)`, `l = 0..=M`.
    pub fn token_mat(&self, l: usize) -> &Matrix<T> {
        &self.token_mats[l]
    }

    pub fn num_layers(&self) -> usize {
        self.token_mats.len() - 1
    }

    pub fn prompt_rows(&self) -> usize {
        self.prompt_rows
    }

    pub fn num_candidates(&self) -> usize {
        self.num_candidates
    }

    /// Copy of the candidate rows (last `N`) of `T(l)`.
    pub fn node_rows(&self, l: usize) -> Matrix<T> {
        self.token_mats[l].tail_rows(self.num_candidates)
    }

    pub fn scores(&self) -> &[T] {
        &self.scores
    }

    pub fn policy(&self) -> &[T] {
        &self.policy
    }
}

pub(crate) fn softmax<T: Real>(scores: &[T]) -> Vec<T> {
    let max = scores
        .iter()
        .fold(T::neg_infinity(), |acc, s| acc.max(*s));
    let exps: Vec<T> = scores.iter().map(|s| (*s - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry, ties broken toward the lowest index.
pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn apply_layer<T: Real>(layer: &FusionLayer<T>, tokens: &Matrix<T>, instr: &[T]) -> Matrix<T> {
    let rows = tokens.rows();
    let c = tokens.cols();
    let ctx = tokens.row_mean();
    let shared_ctx = matvec(&layer.ctx_w, &ctx);
    let shared_instr = matvec(&layer.instr_w, instr);
    let mut out = Matrix::zeros(rows, c);
    for i in 0..rows {
        let own = matvec(&layer.self_w, tokens.row(i));
        let row = out.row_mut(i);
        for j in 0..c {
            row[j] = (own[j] + shared_ctx[j] + shared_instr[j] + layer.bias[j]).tanh();
        }
    }
    out
}

/// Run the stack, optionally with prompt rows stacked ahead of the candidates.
pub fn forward<T: Real>(
    stack: &FusionStack<T>,
    prompt: Option<&SoftPrompt<T>>,
    obs: &Observation<T>,
) -> Result<ForwardTrace<T>> {
    let c = stack.feature_dim();
    if obs.feature_dim() != c {
        return Err(IdeaError::invalid(format!(
            "observation dim {} does not match stack dim {c}",
            obs.feature_dim()
        )));
    }
    let prompt_rows = match prompt {
        Some(p) => {
            if p.num_tokens() > 0 && p.feature_dim() != c {
                return Err(IdeaError::invalid(format!(
                    "prompt dim {} does not match stack dim {c}",
                    p.feature_dim()
                )));
            }
            p.num_tokens()
        }
        None => 0,
    };
    let n = obs.num_candidates();

    let t0 = match prompt {
        Some(p) if p.num_tokens() > 0 => Matrix::vstack(p.tokens(), obs.node_features())?,
        _ => obs.node_features().clone(),
    };
    let mut token_mats = Vec::with_capacity(stack.num_layers() + 1);
    token_mats.push(t0);
    for layer in stack.layers() {
        let next = apply_layer(layer, token_mats.last().expect("non-empty"), obs.instruction());
        token_mats.push(next);
    }

    let last = token_mats.last().expect("non-empty");
    let scores: Vec<T> = (0..n)
        .map(|i| dot(stack.head(), last.row(prompt_rows + i)))
        .collect();
    // Finite inputs can still overflow through the recurrence when a prompt
    // is extreme; a policy cannot be formed then.
    if !scores.iter().all(|s| s.is_finite()) {
        return Err(IdeaError::invalid("non-finite scores in forward pass"));
    }
    let policy = softmax(&scores);
    debug_assert!(
        (policy.iter().copied().sum::<T>() - T::one()).abs() <= T::sum_tol(1e-12),
        "softmax output must sum to one"
    );
    Ok(ForwardTrace {
        token_mats,
        prompt_rows,
        num_candidates: n,
        scores,
        policy,
    })
}

/// Shannon entropy of a policy in nats, with `0 ln 0 := 0`.
pub fn policy_entropy<T: Real>(policy: &[T]) -> Result<T> {
    if policy.is_empty() {
        return Err(IdeaError::invalid("empty policy"));
    }
    if policy.iter().any(|p| *p < T::zero() || !p.is_finite()) {
        return Err(IdeaError::invalid("negative or non-finite policy entry"));
    }
    let sum: T = policy.iter().copied().sum();
    if (sum - T::one()).abs() > T::sum_tol(1e-9) {
        return Err(IdeaError::invalid(format!("policy sums to {sum}, not 1")));
    }
    let mut h = T::zero();
    for p in policy {
        if *p > T::zero() {
            h = h - *p * p.ln();
        }
    }
    Ok(h.max(T::zero()))
}

/// Reverse one layer: given `dL/dT(l+1)` produce `dL/dT(l)`.
///
/// `out_tokens` is `T(l+1)`; the tanh derivative is recovered from the output.
pub(crate) fn layer_backward<T: Real>(
    layer: &FusionLayer<T>,
    out_tokens: &Matrix<T>,
    g_out: &Matrix<T>,
) -> Matrix<T> {
    let rows = out_tokens.rows();
    let c = out_tokens.cols();
    let mut dpre = Matrix::zeros(rows, c);
    let mut col_sum = vec![T::zero(); c];
    for i in 0..rows {
        for j in 0..c {
            let y = out_tokens.get(i, j);
            let v = g_out.get(i, j) * (T::one() - y * y);
            dpre.set(i, j, v);
            col_sum[j] = col_sum[j] + v;
        }
    }
    let ctx_back = matvec_t(&layer.ctx_w, &col_sum);
    let inv_rows = T::one() / T::from_count(rows);
    let mut g_in = Matrix::zeros(rows, c);
    for i in 0..rows {
        let own = matvec_t(&layer.self_w, dpre.row(i));
        let row = g_in.row_mut(i);
        for j in 0..c {
            row[j] = own[j] + inv_rows * ctx_back[j];
        }
    }
    g_in
}

/// Per-layer Fisher information traces of the policy with respect to the
/// fused tokens, computed on a prompt-free forward pass.
///
/// Entry `l-1` is `sum_a pi(a) * ||d log pi(a) / d T(l)||_F^2` with the
/// expectation enumerated exactly over the `N` candidate actions.
pub fn fisher_trace_per_layer<T: Real>(
    stack: &FusionStack<T>,
    obs: &Observation<T>,
) -> Result<Vec<T>> {
    let trace = forward(stack, None, obs)?;
    let m = stack.num_layers();
    let n = obs.num_candidates();
    let c = stack.feature_dim();
    let pi = trace.policy().to_vec();

    let mut result = vec![T::zero(); m];
    for a in 0..n {
        // d log pi(a) / d T(M)_i = (delta_ia - pi_i) * head
        let mut g = Matrix::zeros(n, c);
        for i in 0..n {
            let coef = if i == a { T::one() - pi[i] } else { -pi[i] };
            let row = g.row_mut(i);
            for (gj, hj) in row.iter_mut().zip(stack.head()) {
                *gj = coef * *hj;
            }
        }
        result[m - 1] = result[m - 1] + pi[a] * g.frob_sq();
        for lp in (1..m).rev() {
            g = layer_backward(&stack.layers[lp], trace.token_mat(lp + 1), &g);
            result[lp - 1] = result[lp - 1] + pi[a] * g.frob_sq();
        }
    }
    Ok(result)
}

/// Policy after re-running layers `layer..M` from a replacement token matrix
/// at depth `layer` (1-based).
fn policy_from_layer<T: Real>(
    stack: &FusionStack<T>,
    tokens: &Matrix<T>,
    layer: usize,
    instr: &[T],
    n: usize,
) -> Vec<T> {
    let mut cur = tokens.clone();
    for lp in layer..stack.num_layers() {
        cur = apply_layer(&stack.layers[lp], &cur, instr);
    }
    let prompt_rows = cur.rows() - n;
    let scores: Vec<T> = (0..n)
        .map(|i| dot(stack.head(), cur.row(prompt_rows + i)))
        .collect();
    softmax(&scores)
}

/// Finite-difference oracle for the policy-expected Hessian trace at one
/// layer: `sum_a pi(a) * Tr[ d^2 (-log pi(a)) / d T(layer)^2 ]`, with the
/// diagonal estimated by central second differences and the recurrence below
/// `layer` held fixed. Intended for small instances in tests.
pub fn expected_hessian_trace_oracle<T: Real>(
    stack: &FusionStack<T>,
    obs: &Observation<T>,
    layer: usize,
    fd_step: T,
) -> Result<T> {
    let m = stack.num_layers();
    if layer == 0 || layer > m {
        return Err(IdeaError::invalid(format!(
            "layer index {layer} outside 1..={m}"
        )));
    }
    if !(fd_step > T::zero()) {
        return Err(IdeaError::invalid("fd_step must be positive"));
    }
    let trace = forward(stack, None, obs)?;
    let n = obs.num_candidates();
    let pi = trace.policy().to_vec();
    let base = trace.token_mat(layer).clone();
    let h2 = fd_step * fd_step;

    let mut total = T::zero();
    for a in 0..n {
        let loss = |tokens: &Matrix<T>| -> T {
            let p = policy_from_layer(stack, tokens, layer, obs.instruction(), n);
            -(p[a].ln())
        };
        let f0 = loss(&base);
        let mut tr = T::zero();
        for i in 0..base.rows() {
            for j in 0..base.cols() {
                let v = base.get(i, j);
                let mut plus = base.clone();
                plus.set(i, j, v + fd_step);
                let mut minus = base.clone();
                minus.set(i, j, v - fd_step);
                tr = tr + (loss(&plus) - f0 - f0 + loss(&minus)) / h2;
            }
        }
        total = total + pi[a] * tr;
    }
    Ok(total)
}

/// Loss (and optionally the exact prompt gradient) of the weighted multi-layer
/// moment-matching objective.
///
/// For each layer `l = 1..=M` the candidate rows of `T(l)` are pooled into
/// statistics and compared against the anchor with the moment distance; the
/// per-layer terms are mixed by `alpha`. The gradient is reverse-mode through
/// the recurrence, the pooling, and the two norm terms, with an exactly-zero
/// norm contributing a zero subgradient.
pub(crate) fn alignment_eval<T: Real>(
    stack: &FusionStack<T>,
    prompt: &SoftPrompt<T>,
    obs: &Observation<T>,
    spec: &AlignmentSpec<'_, T>,
    with_grad: bool,
) -> Result<(T, Option<Matrix<T>>)> {
    let m = stack.num_layers();
    let n = obs.num_candidates();
    let c = stack.feature_dim();
    if spec.anchor.num_layers() != m {
        return Err(IdeaError::invalid(format!(
            "anchor has {} layers, stack has {m}",
            spec.anchor.num_layers()
        )));
    }
    if spec.alpha.num_layers() != m {
        return Err(IdeaError::invalid(format!(
            "layer weights have {} entries, stack has {m} layers",
            spec.alpha.num_layers()
        )));
    }
    if spec.anchor.feature_dim() != c {
        return Err(IdeaError::invalid("anchor dimension does not match stack"));
    }

    let trace = forward(stack, Some(prompt), obs)?;
    let alpha = spec.alpha.alpha();

    let mut loss = T::zero();
    let mut layer_stats: Vec<(Matrix<T>, FeatureStats<T>)> = Vec::with_capacity(m);
    for l in 1..=m {
        let nodes = trace.node_rows(l);
        let stats = compute_stats(&nodes, &spec.stats)?;
        let d = moment_distance(spec.anchor.layer(l - 1), &stats)?;
        loss = loss + alpha[l - 1] * d;
        layer_stats.push((nodes, stats));
    }
    if !with_grad {
        return Ok((loss, None));
    }

    let rows = trace.prompt_rows() + n;
    // Gradient of `alpha_l * moment_distance` with respect to the candidate
    // rows of T(l), written into the node rows of a full-height matrix.
    let stat_grad = |l: usize| -> Matrix<T> {
        let (nodes, stats) = &layer_stats[l - 1];
        let anchor = spec.anchor.layer(l - 1);
        let a = alpha[l - 1];
        let mut g = Matrix::zeros(rows, c);
        if a == T::zero() {
            return g;
        }
        let mut mu_diff: Vec<T> = stats
            .mean()
            .iter()
            .zip(anchor.mean())
            .map(|(t, s)| *t - *s)
            .collect();
        let mut sd_diff: Vec<T> = stats
            .std()
            .iter()
            .zip(anchor.std())
            .map(|(t, s)| *t - *s)
            .collect();
        let mu_norm = crate::linalg::norm2(&mu_diff);
        let sd_norm = crate::linalg::norm2(&sd_diff);
        // Unit directions, zero when the term is exactly zero.
        if mu_norm > T::zero() {
            for d in mu_diff.iter_mut() {
                *d = a * *d / mu_norm;
            }
        } else {
            mu_diff.iter_mut().for_each(|d| *d = T::zero());
        }
        if sd_norm > T::zero() {
            for d in sd_diff.iter_mut() {
                *d = a * *d / sd_norm;
            }
        } else {
            sd_diff.iter_mut().for_each(|d| *d = T::zero());
        }
        let inv_n = T::one() / T::from_count(n);
        for i in 0..n {
            let row = g.row_mut(rows - n + i);
            for j in 0..c {
                let mut v = mu_diff[j] * inv_n;
                if n > 1 {
                    let centered = nodes.get(i, j) - stats.mean()[j];
                    v = v + sd_diff[j] * centered
                        / (T::from_count(n - 1) * stats.std()[j]);
                }
                row[j] = v;
            }
        }
        g
    };

    let mut g = stat_grad(m);
    for lp in (0..m).rev() {
        let mut g_in = layer_backward(&stack.layers[lp], trace.token_mat(lp + 1), &g);
        if lp >= 1 {
            g_in.axpy(T::one(), &stat_grad(lp));
        }
        g = g_in;
    }

    // First L rows of the gradient at T(0) are the prompt gradient.
    let l_rows = trace.prompt_rows();
    let mut grad = Matrix::zeros(l_rows, c);
    for i in 0..l_rows {
        grad.row_mut(i).copy_from_slice(g.row(i));
    }
    Ok((loss, Some(grad)))
}

/// Exact gradient of the weighted alignment objective with respect to the
/// prompt tokens.
pub fn prompt_gradient<T: Real>(
    stack: &FusionStack<T>,
    prompt: &SoftPrompt<T>,
    obs: &Observation<T>,
    spec: &AlignmentSpec<'_, T>,
) -> Result<Matrix<T>> {
    let (_, grad) = alignment_eval(stack, prompt, obs, spec, true)?;
    Ok(grad.expect("gradient requested"))
}
