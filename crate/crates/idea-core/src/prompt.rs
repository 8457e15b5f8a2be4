//! Soft prompts, Fisher-guided layer weights, and the alignment optimizer.

use crate::error::{IdeaError, Result};
use crate::fusion::{self, forward, FusionStack, Observation};
use crate::linalg::Matrix;
use crate::rng::SplitMix64;
use crate::stats::{FeatureStats, StatsConfig};
use crate::Real;

/// Learnable prompt tokens, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPrompt<T> {
    tokens: Matrix<T>,
}

impl<T: Real> SoftPrompt<T> {
    /// At least one token row, all entries finite.
    pub fn new(tokens: Matrix<T>) -> Result<Self> {
        if tokens.rows() == 0 {
            return Err(IdeaError::invalid("prompt needs at least one token"));
        }
        if !tokens.is_finite() {
            return Err(IdeaError::invalid("non-finite entry in prompt"));
        }
        Ok(SoftPrompt { tokens })
    }

    /// Zero-mean Gaussian initialization with the given standard deviation.
    pub fn gaussian(num_tokens: usize, feature_dim: usize, std: f64, rng: &mut SplitMix64) -> Self {
        let data = (0..num_tokens * feature_dim)
            .map(|_| T::real(rng.next_normal() * std))
            .collect();
        SoftPrompt {
            tokens: Matrix::from_vec(num_tokens, feature_dim, data).expect("sized buffer"),
        }
    }

    /// Zero-row prompt; behaves exactly like no prompt at all. Test hook.
    #[cfg(test)]
    pub(crate) fn empty(feature_dim: usize) -> Self {
        SoftPrompt {
            tokens: Matrix::zeros(0, feature_dim),
        }
    }

    pub fn tokens(&self) -> &Matrix<T> {
        &self.tokens
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.tokens.cols()
    }
}

/// Simplex weights over fusion layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    alpha: Vec<T>,
}

impl<T: Real> LayerWeights<T> {
    pub fn new(alpha: Vec<T>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(IdeaError::invalid("layer weights must be non-empty"));
        }
        if alpha.iter().any(|a| *a < T::zero() || !a.is_finite()) {
            return Err(IdeaError::invalid("layer weights must be nonnegative"));
        }
        let sum: T = alpha.iter().copied().sum();
        if (sum - T::one()).abs() > T::sum_tol(1e-12) {
            return Err(IdeaError::invalid(format!(
                "layer weights sum to {sum}, expected 1"
            )));
        }
        Ok(LayerWeights { alpha })
    }

    /// Uniform prior over `m` layers.
    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(IdeaError::invalid("need at least one layer"));
        }
        let w = T::one() / T::from_count(m);
        Ok(LayerWeights { alpha: vec![w; m] })
    }

    /// Geometric decay toward shallow layers: weight of layer `l` (1-based)
    /// proportional to `base^(m - l)`, normalized.
    pub fn decay(m: usize, base: T) -> Result<Self> {
        if m == 0 {
            return Err(IdeaError::invalid("need at least one layer"));
        }
        if !(base > T::zero()) {
            return Err(IdeaError::invalid("decay base must be positive"));
        }
        let mut alpha: Vec<T> = (1..=m)
            .map(|l| base.powi((m - l) as i32))
            .collect();
        let sum: T = alpha.iter().copied().sum();
        for a in alpha.iter_mut() {
            *a = *a / sum;
        }
        Ok(LayerWeights { alpha })
    }

    pub fn alpha(&self) -> &[T] {
        &self.alpha
    }

    pub fn num_layers(&self) -> usize {
        self.alpha.len()
    }
}

/// Precomputed per-layer source statistics, the alignment target.
#[derive(Debug, Clone)]
pub struct SourceAnchor<T> {
    per_layer: Vec<FeatureStats<T>>,
}

impl<T: Real> SourceAnchor<T> {
    pub fn new(per_layer: Vec<FeatureStats<T>>) -> Result<Self> {
        if per_layer.is_empty() {
            return Err(IdeaError::invalid("anchor needs at least one layer"));
        }
        let dim = per_layer[0].dim();
        if per_layer.iter().any(|s| s.dim() != dim) {
            return Err(IdeaError::invalid("anchor layers disagree on dimension"));
        }
        Ok(SourceAnchor { per_layer })
    }

    pub fn layer(&self, index: usize) -> &FeatureStats<T> {
        &self.per_layer[index]
    }

    /// Final-layer statistics, the gate's measurement target.
    pub fn final_layer(&self) -> &FeatureStats<T> {
        self.per_layer.last().expect("non-empty")
    }

    pub fn num_layers(&self) -> usize {
        self.per_layer.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.per_layer[0].dim()
    }
}

/// Everything the alignment objective needs besides the prompt itself.
pub struct AlignmentSpec<'a, T> {
    pub alpha: &'a LayerWeights<T>,
    pub anchor: &'a SourceAnchor<T>,
    pub stats: StatsConfig<T>,
}

/// First-order optimizer settings for prompt alignment.
#[derive(Debug, Clone, Copy)]
pub struct OptimizerConfig<T> {
    pub steps: usize,
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub adam_eps: T,
    pub weight_decay: T,
}

impl<T: Real> Default for OptimizerConfig<T> {
    fn default() -> Self {
        OptimizerConfig {
            steps: 50,
            learning_rate: T::real(3e-3),
            beta1: T::real(0.9),
            beta2: T::real(0.999),
            adam_eps: T::real(1e-8),
            weight_decay: T::zero(),
        }
    }
}

impl<T: Real> OptimizerConfig<T> {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > T::zero()) {
            return Err(IdeaError::invalid("learning rate must be positive"));
        }
        if self.weight_decay < T::zero() {
            return Err(IdeaError::invalid("weight decay must be nonnegative"));
        }
        Ok(())
    }
}

/// EMA update of the layer weights toward normalized Fisher traces.
///
/// The target is `traces / sum(traces)` when the sum is positive, otherwise
/// uniform; the result is `(1 - beta) * alpha + beta * target` and stays on
/// the simplex for any `beta` in `[0, 1]`.
pub fn update_layer_weights<T: Real>(
    alpha: &LayerWeights<T>,
    fisher_traces: &[T],
    beta: T,
) -> Result<LayerWeights<T>> {
    let m = alpha.num_layers();
    if fisher_traces.len() != m {
        return Err(IdeaError::invalid(format!(
            "got {} traces for {m} layers",
            fisher_traces.len()
        )));
    }
    if fisher_traces.iter().any(|t| *t < T::zero() || !t.is_finite()) {
        return Err(IdeaError::invalid("negative or non-finite fisher trace"));
    }
    if beta < T::zero() || beta > T::one() {
        return Err(IdeaError::invalid("beta must lie in [0, 1]"));
    }
    let total: T = fisher_traces.iter().copied().sum();
    let uniform = T::one() / T::from_count(m);
    let one_minus = T::one() - beta;
    let next: Vec<T> = alpha
        .alpha()
        .iter()
        .zip(fisher_traces)
        .map(|(a, t)| {
            let target = if total > T::zero() { *t / total } else { uniform };
            one_minus * *a + beta * target
        })
        .collect();
    LayerWeights::new(next)
}

/// Weighted multi-layer moment-matching loss of a prompt-injected forward
/// pass, with statistics pooled over candidate rows only.
pub fn alignment_loss<T: Real>(
    stack: &FusionStack<T>,
    prompt: &SoftPrompt<T>,
    alpha: &LayerWeights<T>,
    anchor: &SourceAnchor<T>,
    obs: &Observation<T>,
    stats: StatsConfig<T>,
) -> Result<T> {
    let spec = AlignmentSpec {
        alpha,
        anchor,
        stats,
    };
    fusion::alignment_eval(stack, prompt, obs, &spec, false).map(|(loss, _)| loss)
}

/// Result of a prompt optimization run.
#[derive(Debug, Clone)]
pub struct OptimizeOutcome<T> {
    /// Iterate with the lowest observed loss (not necessarily the last).
    pub prompt: SoftPrompt<T>,
    pub final_loss: T,
    /// Policy entropy of the prompt-injected forward pass at the returned
    /// prompt.
    pub entropy: T,
    /// Set when a non-finite loss or gradient cut the run short.
    pub aborted: bool,
}

/// Adam-style descent with decoupled weight decay on the alignment loss.
///
/// Runs `opt.steps` update steps and returns the best iterate seen, so the
/// returned loss never exceeds the initial one. A non-finite loss or gradient
/// aborts the run; the best finite iterate so far is returned with `aborted`
/// set, and it is an error if none exists.
pub fn optimize_prompt<T: Real>(
    stack: &FusionStack<T>,
    init: &SoftPrompt<T>,
    alpha: &LayerWeights<T>,
    anchor: &SourceAnchor<T>,
    obs: &Observation<T>,
    stats: StatsConfig<T>,
    opt: &OptimizerConfig<T>,
) -> Result<OptimizeOutcome<T>> {
    opt.validate()?;
    let spec = AlignmentSpec {
        alpha,
        anchor,
        stats,
    };

    let l = init.num_tokens();
    let c = init.feature_dim();
    let mut current = init.tokens().clone();
    let mut m1 = Matrix::zeros(l, c);
    let mut m2 = Matrix::zeros(l, c);

    let mut best: Option<(T, Matrix<T>)> = None;
    let mut aborted = false;

    let record_best = |loss: T, tokens: &Matrix<T>, best: &mut Option<(T, Matrix<T>)>| {
        if best.as_ref().map_or(true, |(b, _)| loss < *b) {
            *best = Some((loss, tokens.clone()));
        }
    };

    for step in 0..opt.steps {
        // A diverged update can push the iterate itself to non-finite
        // values; that aborts like a non-finite loss would.
        let prompt = match SoftPrompt::new(current.clone()) {
            Ok(p) => p,
            Err(e) => {
                if best.is_some() {
                    aborted = true;
                    break;
                }
                return Err(e);
            }
        };
        let (loss, grad) = match fusion::alignment_eval(stack, &prompt, obs, &spec, true) {
            Ok(pair) => pair,
            Err(e) => {
                if best.is_some() {
                    aborted = true;
                    break;
                }
                return Err(e);
            }
        };
        if !loss.is_finite() {
            aborted = true;
            break;
        }
        record_best(loss, &current, &mut best);
        let grad = grad.expect("gradient requested");
        if !grad.is_finite() {
            aborted = true;
            break;
        }

        // Adam moments with bias correction, decay applied decoupled.
        let t = T::from_count(step + 1);
        let bc1 = T::one() - opt.beta1.powf(t);
        let bc2 = T::one() - opt.beta2.powf(t);
        for i in 0..l {
            for j in 0..c {
                let g = grad.get(i, j);
                let m = opt.beta1 * m1.get(i, j) + (T::one() - opt.beta1) * g;
                let v = opt.beta2 * m2.get(i, j) + (T::one() - opt.beta2) * g * g;
                m1.set(i, j, m);
                m2.set(i, j, v);
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                let x = current.get(i, j);
                let update = opt.learning_rate * (m_hat / (v_hat.sqrt() + opt.adam_eps))
                    + opt.learning_rate * opt.weight_decay * x;
                current.set(i, j, x - update);
            }
        }
    }

    if !aborted {
        // Score the final iterate too.
        match SoftPrompt::new(current.clone())
            .and_then(|prompt| fusion::alignment_eval(stack, &prompt, obs, &spec, false))
        {
            Ok((loss, _)) if loss.is_finite() => record_best(loss, &current, &mut best),
            Ok(_) | Err(_) => {
                if best.is_some() {
                    aborted = true;
                }
            }
        }
    }

    let (final_loss, tokens) = best.ok_or_else(|| {
        IdeaError::OptimizationFailed("no finite iterate observed".to_string())
    })?;
    let prompt = SoftPrompt::new(tokens)?;
    let trace = forward(stack, Some(&prompt), obs)?;
    let entropy = fusion::policy_entropy(trace.policy())?;
    Ok(OptimizeOutcome {
        prompt,
        final_loss,
        entropy,
        aborted,
    })
}
