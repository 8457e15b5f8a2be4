//! The per-step adaptation loop.
//!
//! Each step measures the prompt-free discrepancy `d0` between the current
//! final-layer statistics and the source anchor, builds a bridge from the
//! asset library, and measures the bridge-injected discrepancy `dp`. When
//! `dp < tau * d0` the domain is covered and the bridge prompt acts directly;
//! otherwise the layer weights take a Fisher EMA update, a prompt is
//! optimized (warm-started from the bridge), and the result is stored as a
//! new asset.
//!
//! The experiment baselines are implemented as [`Variant`]s of this single
//! loop so they cannot drift apart: `no-adapt` never adapts,
//! `always-optimize` skips the gate, `nearest-retrieval` replaces the
//! closed-form mixture with the single nearest asset, and `decay-weighting`
//! freezes the layer weights to a geometric profile instead of Fisher
//! evidence.

use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::bridge::{
    assemble_problem, bridge_objective, compose_bridge, oracle_solve, oracle_step_size,
    solve_closed_form,
};
use crate::error::{IdeaError, Result};
use crate::fusion::{
    argmax, fisher_trace_per_layer, forward, policy_entropy, ForwardTrace, FusionStack,
    Observation,
};
use crate::library::{Asset, AssetLibrary};
use crate::prompt::{
    optimize_prompt, update_layer_weights, LayerWeights, OptimizerConfig, SoftPrompt, SourceAnchor,
};
use crate::rng::SplitMix64;
use crate::stats::{compute_stats, w2_distance, FeatureStats, StatsConfig};
use crate::Real;

/// Decay base for the fixed layer-weight baseline.
pub const DECAY_WEIGHT_BASE: f64 = 0.65;

/// Loop behavior selector; [`Variant::Idea`] is the full method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Idea,
    NoAdapt,
    AlwaysOptimize,
    NearestRetrieval,
    DecayWeighting,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Idea => "idea",
            Variant::NoAdapt => "no-adapt",
            Variant::AlwaysOptimize => "always-optimize",
            Variant::NearestRetrieval => "nearest-retrieval",
            Variant::DecayWeighting => "decay-weighting",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = IdeaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "idea" => Ok(Variant::Idea),
            "no-adapt" => Ok(Variant::NoAdapt),
            "always-optimize" => Ok(Variant::AlwaysOptimize),
            "nearest-retrieval" => Ok(Variant::NearestRetrieval),
            "decay-weighting" => Ok(Variant::DecayWeighting),
            other => Err(IdeaError::invalid(format!("unknown variant '{other}'"))),
        }
    }
}

/// Which prompt acted at a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptSource {
    PromptFree,
    Bridge,
    NewAsset,
}

impl PromptSource {
    pub fn name(&self) -> &'static str {
        match self {
            PromptSource::PromptFree => "none",
            PromptSource::Bridge => "bridge",
            PromptSource::NewAsset => "new-asset",
        }
    }
}

/// Controller hyperparameters.
#[derive(Debug, Clone)]
pub struct ControllerConfig<T> {
    /// Coverage gate ratio.
    pub tau: T,
    /// Bridge regularization strength.
    pub lambda: T,
    /// Fisher EMA smoothing coefficient.
    pub beta: T,
    /// Asset library capacity.
    pub capacity: usize,
    /// Prompt token count.
    pub prompt_len: usize,
    pub opt: OptimizerConfig<T>,
    pub stats: StatsConfig<T>,
    /// Seed for prompt initialization draws.
    pub seed: u64,
}

impl<T: Real> ControllerConfig<T> {
    /// Stock hyperparameters: tau 0.7, lambda 0.4, beta 0.1, capacity 32,
    /// prompt length 4, 50 optimizer steps at learning rate 3e-3, variance
    /// floor 1e-6.
    pub fn default_with_dim(feature_dim: usize) -> Result<Self> {
        Ok(ControllerConfig {
            tau: T::real(0.7),
            lambda: T::real(0.4),
            beta: T::real(0.1),
            capacity: 32,
            prompt_len: 4,
            opt: OptimizerConfig::default(),
            stats: StatsConfig::with_dim(feature_dim)?,
            seed: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > T::zero()) || !self.tau.is_finite() {
            return Err(IdeaError::invalid("tau must be a positive finite real"));
        }
        if !(self.lambda >= T::zero()) || !self.lambda.is_finite() {
            return Err(IdeaError::invalid("lambda must be finite and >= 0"));
        }
        if self.beta < T::zero() || self.beta > T::one() {
            return Err(IdeaError::invalid("beta must lie in [0, 1]"));
        }
        if self.capacity == 0 {
            return Err(IdeaError::invalid("capacity must be >= 1"));
        }
        if self.prompt_len == 0 {
            return Err(IdeaError::invalid("prompt_len must be >= 1"));
        }
        Ok(())
    }
}

/// Everything one step reports.
#[derive(Debug, Clone)]
pub struct StepOutcome<T> {
    pub covered: bool,
    /// Prompt-free final-layer discrepancy against the anchor.
    pub d0: T,
    /// Bridge-injected discrepancy; infinite when no bridge was available.
    pub dp: T,
    /// Discrepancy under the prompt that actually acted.
    pub d_final: T,
    /// Chosen candidate (argmax score, ties to the lowest index).
    pub action: usize,
    /// Entropy of the acted policy.
    pub entropy: T,
    pub prompt_source: PromptSource,
    pub optimization_invoked: bool,
    /// Library size after the step.
    pub library_size: usize,
    /// The raw mixture weights needed clipping this step.
    pub projection_clipped: bool,
    /// Relative objective excess of the clipped weights over the reference
    /// optimizer, recorded only when clipping happened.
    pub projection_gap: Option<T>,
    /// The bridge solve failed as degenerate and was skipped.
    pub bridge_degenerate: bool,
    /// Prompt optimization stopped early on a non-finite value.
    pub optimizer_aborted: bool,
    pub wall_time: Duration,
}

impl<T: Real> StepOutcome<T> {
    /// Gate soundness: a covered step must have seen `dp < tau * d0`, with
    /// the degenerate all-zero case allowed through.
    pub fn gate_consistent(&self, tau: T) -> bool {
        if !self.covered {
            return true;
        }
        self.dp < tau * self.d0 || (self.dp == T::zero() && self.d0 == T::zero())
    }
}

/// Owns the evolving adaptation state: library, layer weights, prompt seeds.
#[derive(Debug, Clone)]
pub struct Controller<T> {
    stack: FusionStack<T>,
    anchor: SourceAnchor<T>,
    library: AssetLibrary<T>,
    alpha: LayerWeights<T>,
    cfg: ControllerConfig<T>,
    variant: Variant,
    rng: SplitMix64,
}

impl<T: Real> Controller<T> {
    pub fn new(
        stack: FusionStack<T>,
        anchor: SourceAnchor<T>,
        cfg: ControllerConfig<T>,
        variant: Variant,
    ) -> Result<Self> {
        cfg.validate()?;
        let library = AssetLibrary::new(cfg.capacity, cfg.prompt_len, stack.feature_dim())?;
        Controller::with_library(stack, anchor, cfg, variant, library)
    }

    /// Start from a pre-built library (asset transfer).
    pub fn with_library(
        stack: FusionStack<T>,
        anchor: SourceAnchor<T>,
        cfg: ControllerConfig<T>,
        variant: Variant,
        library: AssetLibrary<T>,
    ) -> Result<Self> {
        cfg.validate()?;
        if anchor.num_layers() != stack.num_layers() {
            return Err(IdeaError::invalid(format!(
                "anchor has {} layers, stack has {}",
                anchor.num_layers(),
                stack.num_layers()
            )));
        }
        if anchor.feature_dim() != stack.feature_dim() {
            return Err(IdeaError::invalid("anchor dim does not match stack"));
        }
        if cfg.stats.feature_dim != stack.feature_dim() {
            return Err(IdeaError::invalid("stats config dim does not match stack"));
        }
        if library.prompt_len() != cfg.prompt_len
            || library.feature_dim() != stack.feature_dim()
            || library.capacity() != cfg.capacity
        {
            return Err(IdeaError::invalid(
                "library shape does not match controller config",
            ));
        }
        let m = stack.num_layers();
        let alpha = match variant {
            Variant::DecayWeighting => LayerWeights::decay(m, T::real(DECAY_WEIGHT_BASE))?,
            _ => LayerWeights::uniform(m)?,
        };
        let rng = SplitMix64::new(cfg.seed).fork(0x7072_6f6d_7074); // prompt stream
        Ok(Controller {
            stack,
            anchor,
            library,
            alpha,
            cfg,
            variant,
            rng,
        })
    }

    pub fn library(&self) -> &AssetLibrary<T> {
        &self.library
    }

    pub fn stack(&self) -> &FusionStack<T> {
        &self.stack
    }

    pub fn anchor(&self) -> &SourceAnchor<T> {
        &self.anchor
    }

    pub fn layer_weights(&self) -> &LayerWeights<T> {
        &self.alpha
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn config(&self) -> &ControllerConfig<T> {
        &self.cfg
    }

    fn final_stats(&self, trace: &ForwardTrace<T>) -> Result<FeatureStats<T>> {
        compute_stats(&trace.node_rows(self.stack.num_layers()), &self.cfg.stats)
    }

    /// Bridge weights for the current target statistics.
    fn bridge_weights(&self, target: &FeatureStats<T>) -> Result<(Vec<T>, bool, Option<T>)> {
        match self.variant {
            Variant::NearestRetrieval => {
                let mut best = 0usize;
                let mut best_d = T::infinity();
                for (j, asset) in self.library.assets().iter().enumerate() {
                    let d = w2_distance(asset.coords(), target)?;
                    if d < best_d {
                        best_d = d;
                        best = j;
                    }
                }
                let mut w = vec![T::zero(); self.library.len()];
                w[best] = T::one();
                Ok((w, false, None))
            }
            _ => {
                let problem = assemble_problem(&self.library, target, self.cfg.lambda)?;
                let sol = solve_closed_form(&problem)?;
                let gap = if sol.projected {
                    let reference =
                        oracle_solve(&problem, 5_000, oracle_step_size(&problem));
                    let clip_obj = bridge_objective(&problem, &sol.weights);
                    let ref_obj = bridge_objective(&problem, &reference);
                    Some((clip_obj - ref_obj) / (T::one() + ref_obj))
                } else {
                    None
                };
                Ok((sol.weights, sol.projected, gap))
            }
        }
    }

    /// One pass of the decision loop.
    pub fn step(&mut self, obs: &Observation<T>) -> Result<StepOutcome<T>> {
        let started = Instant::now();
        let trace0 = forward(&self.stack, None, obs)?;
        let stats0 = self.final_stats(&trace0)?;
        let d0 = w2_distance(&stats0, self.anchor.final_layer())?;

        // Try the bridge.
        let mut dp = T::infinity();
        let mut bridge_prompt: Option<SoftPrompt<T>> = None;
        let mut bridge_trace: Option<ForwardTrace<T>> = None;
        let mut projection_clipped = false;
        let mut projection_gap = None;
        let mut bridge_degenerate = false;
        if self.variant != Variant::NoAdapt && !self.library.is_empty() {
            match self.bridge_weights(&stats0) {
                Ok((weights, clipped, gap)) => {
                    let (prompt, _mixed_coords) = compose_bridge(&self.library, &weights)?;
                    let trace = forward(&self.stack, Some(&prompt), obs)?;
                    let stats_b = self.final_stats(&trace)?;
                    dp = w2_distance(&stats_b, self.anchor.final_layer())?;
                    bridge_prompt = Some(prompt);
                    bridge_trace = Some(trace);
                    projection_clipped = clipped;
                    projection_gap = gap;
                }
                // A degenerate solve means "no bridge this step", not a fatal
                // error.
                Err(IdeaError::DegenerateProblem(_)) => bridge_degenerate = true,
                Err(e) => return Err(e),
            }
        }

        let covered = match self.variant {
            Variant::NoAdapt | Variant::AlwaysOptimize => false,
            _ => {
                if d0 == T::zero() {
                    dp == T::zero()
                } else {
                    dp < self.cfg.tau * d0
                }
            }
        };

        let acted_trace;
        let prompt_source;
        let mut optimization_invoked = false;
        let mut optimizer_aborted = false;
        let d_final;

        if covered {
            acted_trace = bridge_trace.expect("covered implies a bridge");
            prompt_source = PromptSource::Bridge;
            d_final = dp;
        } else if self.variant == Variant::NoAdapt
            || (d0 == T::zero() && self.variant != Variant::AlwaysOptimize)
        {
            // Nothing to adapt (or adaptation disabled): act prompt-free.
            acted_trace = trace0;
            prompt_source = PromptSource::PromptFree;
            d_final = d0;
        } else {
            if self.variant != Variant::DecayWeighting {
                let traces = fisher_trace_per_layer(&self.stack, obs)?;
                self.alpha = update_layer_weights(&self.alpha, &traces, self.cfg.beta)?;
            }
            let init = match bridge_prompt {
                Some(p) => p,
                None => SoftPrompt::gaussian(
                    self.cfg.prompt_len,
                    self.stack.feature_dim(),
                    0.02,
                    &mut self.rng,
                ),
            };
            let out = optimize_prompt(
                &self.stack,
                &init,
                &self.alpha,
                &self.anchor,
                obs,
                self.cfg.stats,
                &self.cfg.opt,
            )?;
            optimizer_aborted = out.aborted;
            let trace = forward(&self.stack, Some(&out.prompt), obs)?;
            let stats_star = self.final_stats(&trace)?;
            d_final = w2_distance(&stats_star, self.anchor.final_layer())?;
            self.library
                .insert_or_merge(Asset::new(out.prompt, stats0, out.entropy)?)?;
            acted_trace = trace;
            prompt_source = PromptSource::NewAsset;
            optimization_invoked = true;
        }

        let action = argmax(acted_trace.scores());
        let entropy = policy_entropy(acted_trace.policy())?;
        Ok(StepOutcome {
            covered,
            d0,
            dp,
            d_final,
            action,
            entropy,
            prompt_source,
            optimization_invoked,
            library_size: self.library.len(),
            projection_clipped,
            projection_gap,
            bridge_degenerate,
            optimizer_aborted,
            wall_time: started.elapsed(),
        })
    }

    /// Apply [`Controller::step`] over an episode, tagging failures with
    /// their episode and step indices.
    pub fn run_episode(
        &mut self,
        episode_index: usize,
        episode: &[Observation<T>],
    ) -> Result<Vec<StepOutcome<T>>> {
        let mut outcomes = Vec::with_capacity(episode.len());
        for (step, obs) in episode.iter().enumerate() {
            let outcome = self.step(obs).map_err(|e| IdeaError::Step {
                episode: episode_index,
                step,
                source: Box::new(e),
            })?;
            outcomes.push(outcome);
        }
        Ok(outcomes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{bootstrap_source_stats, sample_episode, sample_observation, DomainSpec};

    const C: usize = 6;
    const N: usize = 4;
    const M: usize = 2;

    const NOISE: f64 = 0.25;

    fn setup(seed: u64) -> (FusionStack<f64>, SourceAnchor<f64>, ControllerConfig<f64>) {
        let mut rng = SplitMix64::new(seed);
        let gains = crate::fusion::InitGains {
            ctx: 2.0,
            instr: 0.2,
            head: 1.0,
        };
        let stack = FusionStack::seeded_gained(M, C, gains, &mut rng);
        let source = DomainSpec::new(vec![0.0; C], vec![NOISE; C], 0.0).unwrap();
        let cfg = ControllerConfig::default_with_dim(C).unwrap();
        let mut anchor_rng = SplitMix64::new(seed ^ 0xA17C);
        let anchor =
            bootstrap_source_stats(&stack, &source, 64, N, &cfg.stats, &mut anchor_rng).unwrap();
        (stack, anchor, cfg)
    }

    fn shifted_domain(magnitude: f64) -> DomainSpec<f64> {
        DomainSpec::new(vec![magnitude; C], vec![NOISE; C], 0.0).unwrap()
    }

    #[test]
    fn empty_library_forces_optimization() {
        let (stack, anchor, cfg) = setup(41);
        let mut ctrl = Controller::new(stack, anchor, cfg, Variant::Idea).unwrap();
        let mut rng = SplitMix64::new(42);
        let obs = sample_observation(&shifted_domain(1.0), N, 0, &mut rng);
        let out = ctrl.step(&obs).unwrap();
        assert!(out.dp.is_infinite());
        assert!(!out.covered);
        assert!(out.optimization_invoked);
        assert_eq!(out.prompt_source, PromptSource::NewAsset);
        assert_eq!(out.library_size, 1);
    }

    #[test]
    fn vanishing_tau_never_covers() {
        let (stack, anchor, mut cfg) = setup(43);
        cfg.tau = 1e-12;
        let mut ctrl = Controller::new(stack, anchor, cfg, Variant::Idea).unwrap();
        let mut rng = SplitMix64::new(44);
        let domain = shifted_domain(0.8);
        for step in 0..4 {
            let obs = sample_observation(&domain, N, step, &mut rng);
            let out = ctrl.step(&obs).unwrap();
            assert!(!out.covered);
            assert!(out.optimization_invoked);
        }
    }

    #[test]
    fn seeded_library_covers_a_repeat_observation() {
        let (stack, anchor, mut cfg) = setup(45);
        cfg.opt.steps = 150;
        let tau = cfg.tau;
        let mut ctrl = Controller::new(stack, anchor, cfg, Variant::Idea).unwrap();
        let mut rng = SplitMix64::new(46);
        let domain = shifted_domain(1.2);
        let obs = sample_observation(&domain, N, 0, &mut rng);

        // First pass optimizes and stores an asset for this very observation.
        let first = ctrl.step(&obs).unwrap();
        assert!(first.optimization_invoked);

        // Second pass on the identical observation must ride the bridge.
        let second = ctrl.step(&obs).unwrap();
        assert!(second.covered, "dp={} d0={}", second.dp, second.d0);
        assert!(!second.optimization_invoked);
        assert_eq!(second.prompt_source, PromptSource::Bridge);
        assert!(second.dp < tau * second.d0);
        assert!(second.gate_consistent(tau));
    }

    #[test]
    fn run_episode_matches_manual_stepping() {
        let (stack, anchor, cfg) = setup(47);
        let mut a = Controller::new(stack.clone(), anchor.clone(), cfg.clone(), Variant::Idea)
            .unwrap();
        let mut b = Controller::new(stack, anchor, cfg, Variant::Idea).unwrap();
        let mut rng = SplitMix64::new(48);
        let episode = sample_episode(&shifted_domain(0.9), N, 3, &mut rng);

        let from_run = a.run_episode(0, &episode).unwrap();
        let manual: Vec<_> = episode.iter().map(|o| b.step(o).unwrap()).collect();
        assert_eq!(from_run.len(), manual.len());
        for (x, y) in from_run.iter().zip(&manual) {
            assert_eq!(x.covered, y.covered);
            assert_eq!(x.d0.to_bits(), y.d0.to_bits());
            assert_eq!(x.dp.to_bits(), y.dp.to_bits());
            assert_eq!(x.action, y.action);
            assert_eq!(x.library_size, y.library_size);
        }
    }

    #[test]
    fn empty_episode_yields_no_outcomes() {
        let (stack, anchor, cfg) = setup(49);
        let mut ctrl = Controller::new(stack, anchor, cfg, Variant::Idea).unwrap();
        let out = ctrl.run_episode(0, &[]).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn revisits_cut_optimization_count() {
        let (stack, anchor, cfg) = setup(50);
        let mut ctrl = Controller::new(stack, anchor, cfg, Variant::Idea).unwrap();
        let domains: Vec<DomainSpec<f64>> = vec![
            shifted_domain(0.4),
            DomainSpec::new(vec![-0.4; C], vec![NOISE; C], 0.0).unwrap(),
            DomainSpec::new(
                vec![0.2; C],
                vec![0.4, 0.4, 0.4, 0.15, 0.15, 0.15],
                0.0,
            )
            .unwrap(),
        ];
        let mut rng = SplitMix64::new(51);
        let steps = 6;
        let mut per_cycle = Vec::new();
        for _cycle in 0..2 {
            let mut optimizations = 0;
            for domain in &domains {
                let episode = sample_episode(domain, N, steps, &mut rng);
                for out in ctrl.run_episode(0, &episode).unwrap() {
                    if out.optimization_invoked {
                        optimizations += 1;
                    }
                }
            }
            per_cycle.push(optimizations);
        }
        assert!(
            per_cycle[1] < per_cycle[0],
            "cycle optimizations {per_cycle:?} should strictly decrease"
        );
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let (stack, anchor, cfg) = setup(52);
        let run = |stack: &FusionStack<f64>, anchor: &SourceAnchor<f64>| {
            let mut ctrl = Controller::new(
                stack.clone(),
                anchor.clone(),
                cfg.clone(),
                Variant::Idea,
            )
            .unwrap();
            let mut rng = SplitMix64::new(53);
            let mut fields = Vec::new();
            for domain_mag in [0.8, -0.6] {
                let episode = sample_episode(&shifted_domain(domain_mag), N, 4, &mut rng);
                for out in ctrl.run_episode(0, &episode).unwrap() {
                    fields.push((
                        out.covered,
                        out.d0.to_bits(),
                        out.dp.to_bits(),
                        out.d_final.to_bits(),
                        out.entropy.to_bits(),
                        out.action,
                        out.library_size,
                    ));
                }
            }
            fields
        };
        assert_eq!(run(&stack, &anchor), run(&stack, &anchor));
    }

    #[test]
    fn no_adapt_never_touches_the_library() {
        let (stack, anchor, cfg) = setup(54);
        let mut ctrl = Controller::new(stack, anchor, cfg, Variant::NoAdapt).unwrap();
        let mut rng = SplitMix64::new(55);
        let episode = sample_episode(&shifted_domain(1.1), N, 5, &mut rng);
        for out in ctrl.run_episode(0, &episode).unwrap() {
            assert!(!out.covered);
            assert!(!out.optimization_invoked);
            assert_eq!(out.prompt_source, PromptSource::PromptFree);
            assert_eq!(out.library_size, 0);
            assert_eq!(out.d_final.to_bits(), out.d0.to_bits());
        }
    }

    #[test]
    fn always_optimize_never_covers() {
        let (stack, anchor, cfg) = setup(56);
        let mut ctrl = Controller::new(stack, anchor, cfg, Variant::AlwaysOptimize).unwrap();
        let mut rng = SplitMix64::new(57);
        let domain = shifted_domain(1.0);
        for step in 0..4 {
            let obs = sample_observation(&domain, N, step, &mut rng);
            let out = ctrl.step(&obs).unwrap();
            assert!(!out.covered);
            assert!(out.optimization_invoked);
        }
    }

    #[test]
    fn library_growth_is_monotone_until_capacity() {
        let (stack, anchor, mut cfg) = setup(58);
        cfg.capacity = 3;
        let mut ctrl = Controller::new(stack, anchor, cfg, Variant::AlwaysOptimize).unwrap();
        let mut rng = SplitMix64::new(59);
        let mut last = 0;
        for step in 0..8 {
            let obs = sample_observation(&shifted_domain(0.5 + step as f64 * 0.3), N, 0, &mut rng);
            let out = ctrl.step(&obs).unwrap();
            assert!(out.library_size >= last);
            assert!(out.library_size <= 3);
            last = out.library_size;
        }
        assert_eq!(last, 3);
    }
}
