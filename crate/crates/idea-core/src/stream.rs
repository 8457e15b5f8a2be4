//! Synthetic non-stationary domain stream.
//!
//! A domain is an affine perturbation of a standard-normal feature source:
//! candidate row `i` at step `t` is
//!
//! ```text
//! shift_mean + drift_rate * t * 1 + shift_scale .* z_i,   z_i ~ N(0, I)
//! ```
//!
//! The instruction embedding is one standard-normal vector drawn per episode
//! and held fixed across its steps. Every draw comes from a seeded
//! [`SplitMix64`](crate::rng::SplitMix64) in a documented order (instruction
//! first, then candidate rows, row-major), so sequences are reproducible and
//! test-derivable.

use crate::error::{IdeaError, Result};
use crate::fusion::{argmax, forward, FusionStack, Observation};
use crate::linalg::Matrix;
use crate::prompt::SourceAnchor;
use crate::rng::SplitMix64;
use crate::stats::{compute_stats, StatsConfig};
use crate::Real;

/// Affine perturbation defining one domain.
#[derive(Debug, Clone)]
pub struct DomainSpec<T> {
    shift_mean: Vec<T>,
    shift_scale: Vec<T>,
    drift_rate: T,
}

impl<T: Real> DomainSpec<T> {
    pub fn new(shift_mean: Vec<T>, shift_scale: Vec<T>, drift_rate: T) -> Result<Self> {
        if shift_mean.is_empty() || shift_mean.len() != shift_scale.len() {
            return Err(IdeaError::invalid(
                "shift_mean and shift_scale must be non-empty and equal length",
            ));
        }
        if !shift_mean.iter().all(|v| v.is_finite())
            || !shift_scale.iter().all(|v| v.is_finite())
        {
            return Err(IdeaError::invalid("non-finite domain parameter"));
        }
        if shift_scale.iter().any(|s| !(*s > T::zero())) {
            return Err(IdeaError::invalid("shift_scale must be strictly positive"));
        }
        if !(drift_rate >= T::zero()) {
            return Err(IdeaError::invalid("drift_rate must be nonnegative"));
        }
        Ok(DomainSpec {
            shift_mean,
            shift_scale,
            drift_rate,
        })
    }

    /// The unshifted source domain.
    pub fn identity(feature_dim: usize) -> Self {
        DomainSpec {
            shift_mean: vec![T::zero(); feature_dim],
            shift_scale: vec![T::one(); feature_dim],
            drift_rate: T::zero(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.shift_mean.len()
    }

    pub fn shift_mean(&self) -> &[T] {
        &self.shift_mean
    }

    pub fn shift_scale(&self) -> &[T] {
        &self.shift_scale
    }

    pub fn drift_rate(&self) -> T {
        self.drift_rate
    }
}

/// Episode ordering over domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Every domain once per cycle, in index order.
    Cyclic,
    /// Uniformly random domain per episode slot, from its own seed.
    RandomRecurrent { seed: u64 },
}

/// Stream shape: domains, schedule, and per-episode sizes.
#[derive(Debug, Clone)]
pub struct StreamConfig {
    pub num_domains: usize,
    pub schedule: Schedule,
    /// With the cyclic schedule this is the number of cycles.
    pub episodes_per_domain: usize,
    pub steps_per_episode: usize,
    pub num_candidates: usize,
    pub feature_dim: usize,
    pub source_domain_index: usize,
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_domains == 0 {
            return Err(IdeaError::invalid("num_domains must be >= 1"));
        }
        if self.num_candidates < 2 {
            return Err(IdeaError::invalid("num_candidates must be >= 2"));
        }
        if self.episodes_per_domain == 0 || self.steps_per_episode == 0 {
            return Err(IdeaError::invalid("episode counts must be positive"));
        }
        if self.feature_dim == 0 {
            return Err(IdeaError::invalid("feature_dim must be >= 1"));
        }
        if self.source_domain_index >= self.num_domains {
            return Err(IdeaError::invalid("source_domain_index out of range"));
        }
        Ok(())
    }

    pub fn num_episodes(&self) -> usize {
        self.num_domains * self.episodes_per_domain
    }
}

/// Which domain each episode visits, in order.
pub fn episode_domain_sequence(cfg: &StreamConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let total = cfg.num_episodes();
    Ok(match cfg.schedule {
        Schedule::Cyclic => (0..total).map(|e| e % cfg.num_domains).collect(),
        Schedule::RandomRecurrent { seed } => {
            let mut rng = SplitMix64::new(seed);
            (0..total).map(|_| rng.next_index(cfg.num_domains)).collect()
        }
    })
}

fn sample_instruction<T: Real>(feature_dim: usize, rng: &mut SplitMix64) -> Vec<T> {
    (0..feature_dim).map(|_| T::real(rng.next_normal())).collect()
}

fn sample_nodes<T: Real>(
    domain: &DomainSpec<T>,
    num_candidates: usize,
    step_index: usize,
    rng: &mut SplitMix64,
) -> Matrix<T> {
    let c = domain.feature_dim();
    let drift = domain.drift_rate * T::from_count(step_index);
    let mut m = Matrix::zeros(num_candidates, c);
    for i in 0..num_candidates {
        let row = m.row_mut(i);
        for j in 0..c {
            let z = T::real(rng.next_normal());
            row[j] = domain.shift_mean[j] + drift + domain.shift_scale[j] * z;
        }
    }
    m
}

/// One-shot observation: draws a fresh instruction, then the candidate rows.
pub fn sample_observation<T: Real>(
    domain: &DomainSpec<T>,
    num_candidates: usize,
    step_index: usize,
    rng: &mut SplitMix64,
) -> Observation<T> {
    let instr = sample_instruction(domain.feature_dim(), rng);
    let nodes = sample_nodes(domain, num_candidates, step_index, rng);
    Observation::new(nodes, instr).expect("sampled observation is finite")
}

/// A full episode in one domain: the instruction is drawn once and shared by
/// every step; candidate rows are drawn per step with the drift applied.
pub fn sample_episode<T: Real>(
    domain: &DomainSpec<T>,
    num_candidates: usize,
    steps: usize,
    rng: &mut SplitMix64,
) -> Vec<Observation<T>> {
    let instr: Vec<T> = sample_instruction(domain.feature_dim(), rng);
    (0..steps)
        .map(|t| {
            let nodes = sample_nodes(domain, num_candidates, t, rng);
            Observation::new(nodes, instr.clone()).expect("sampled observation is finite")
        })
        .collect()
}

/// Pool prompt-free forward features from source-domain observations into one
/// per-layer anchor. All candidate tokens across all samples are pooled
/// before the statistics are taken.
pub fn bootstrap_source_stats<T: Real>(
    stack: &FusionStack<T>,
    source: &DomainSpec<T>,
    num_samples: usize,
    num_candidates: usize,
    cfg: &StatsConfig<T>,
    rng: &mut SplitMix64,
) -> Result<SourceAnchor<T>> {
    if num_samples < 2 {
        return Err(IdeaError::invalid("need at least 2 bootstrap samples"));
    }
    let m = stack.num_layers();
    let c = stack.feature_dim();
    let mut pooled: Vec<Matrix<T>> = (0..m)
        .map(|_| Matrix::zeros(0, c))
        .collect();
    for _ in 0..num_samples {
        let obs = sample_observation(source, num_candidates, 0, rng);
        let trace = forward(stack, None, &obs)?;
        for (l, pool) in pooled.iter_mut().enumerate() {
            *pool = Matrix::vstack(pool, &trace.node_rows(l + 1))?;
        }
    }
    let per_layer = pooled
        .iter()
        .map(|tokens| compute_stats(tokens, cfg))
        .collect::<Result<Vec<_>>>()?;
    SourceAnchor::new(per_layer)
}

/// Ground-truth action: what the policy would pick had the domain shift never
/// happened. The features are mapped back to the source frame (undo the
/// domain's shift at this step, re-apply the source's own), then scored
/// prompt-free. Ties break to the lowest index.
pub fn oracle_action<T: Real>(
    stack: &FusionStack<T>,
    source: &DomainSpec<T>,
    domain: &DomainSpec<T>,
    step_index: usize,
    obs: &Observation<T>,
) -> Result<usize> {
    let c = domain.feature_dim();
    if obs.feature_dim() != c || source.feature_dim() != c {
        return Err(IdeaError::invalid("oracle dimension mismatch"));
    }
    let t = T::from_count(step_index);
    let drift = domain.drift_rate * t;
    let source_drift = source.drift_rate * t;
    let n = obs.num_candidates();
    let mut mapped = Matrix::zeros(n, c);
    for i in 0..n {
        let src = obs.node_features().row(i);
        let row = mapped.row_mut(i);
        for j in 0..c {
            let z = (src[j] - domain.shift_mean[j] - drift) / domain.shift_scale[j];
            row[j] = source.shift_mean[j] + source_drift + source.shift_scale[j] * z;
        }
    }
    let deshifted = Observation::new(mapped, obs.instruction().to_vec())?;
    let trace = forward(stack, None, &deshifted)?;
    Ok(argmax(trace.scores()))
}
