//! Experiment execution: seeds, streams, controllers, metrics, file output.

use std::fs;
use std::path::Path;

use idea_core::controller::{Controller, StepOutcome, Variant};
use idea_core::fusion::FusionStack;
use idea_core::library::{self, AssetLibrary};
use idea_core::rng::SplitMix64;
use idea_core::stream::{
    bootstrap_source_stats, episode_domain_sequence, oracle_action, sample_episode,
};

use crate::config::ExperimentConfig;
use crate::domains::{episode_domain, generate_domains};
use crate::logging::{self, LogLevel};
use crate::{HarnessError, Result};

const ANCHOR_SALT: u64 = 0xA17C;
const OBS_SALT: u64 = 0x0B5E;

/// One executed step with its context and ground-truth check.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub episode: usize,
    pub step: usize,
    pub domain: usize,
    pub accurate: bool,
    pub outcome: StepOutcome<f64>,
}

/// Per-run aggregate metrics.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub variant: String,
    pub seed: u64,
    pub repetition: usize,
    pub steps: usize,
    pub coverage_rate: f64,
    pub mean_discrepancy_reduction: f64,
    pub total_optimizations: usize,
    pub mean_accuracy: f64,
    pub mean_final_discrepancy: f64,
    pub projection_clipped_steps: usize,
    pub projection_gap_mean: f64,
    pub projection_gap_max: f64,
    /// Coverage rate per cycle (episode blocks of `num_domains`).
    pub cycle_coverage: Vec<f64>,
    /// Optimization rate per cycle.
    pub cycle_optimization_rate: Vec<f64>,
}

/// One repetition's full output.
#[derive(Debug)]
pub struct RunRecord {
    pub variant: Variant,
    pub seed: u64,
    pub repetition: usize,
    pub rows: Vec<StepRecord>,
    pub summary: RunSummary,
}

/// Render a real number with 17 significant digits ('.' separator, no
/// locale); infinities print as `inf` / `-inf`.
pub fn fmt_real(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{v:.16e}")
}

fn run_single(
    cfg: &ExperimentConfig,
    repetition: usize,
    run_seed: u64,
    level: LogLevel,
) -> Result<(RunRecord, AssetLibrary<f64>)> {
    let mut model_rng = SplitMix64::new(cfg.model.seed);
    let gains = idea_core::fusion::InitGains {
        ctx: cfg.model.ctx_gain,
        instr: cfg.model.instr_gain,
        head: cfg.model.head_gain,
    };
    let stack: FusionStack<f64> = FusionStack::seeded_gained(
        cfg.model.layers,
        cfg.stream.feature_dim,
        gains,
        &mut model_rng,
    );
    let domains = generate_domains(cfg)?;
    let source = &domains[cfg.stream.source_domain_index];

    let mut anchor_rng = SplitMix64::new(run_seed).fork(ANCHOR_SALT);
    let anchor = bootstrap_source_stats(
        &stack,
        source,
        cfg.anchor_samples,
        cfg.stream.num_candidates,
        &cfg.controller.stats,
        &mut anchor_rng,
    )?;

    let mut controller_cfg = cfg.controller.clone();
    controller_cfg.seed = run_seed;
    let mut controller = match &cfg.assets_in {
        Some(path) => {
            let lib = load_assets(path)?;
            if lib.prompt_len() != controller_cfg.prompt_len
                || lib.feature_dim() != cfg.stream.feature_dim
                || lib.capacity() != controller_cfg.capacity
            {
                return Err(HarnessError::Config(format!(
                    "asset library at {} has shape L={} C={} capacity={}, \
                     config expects L={} C={} capacity={}",
                    path.display(),
                    lib.prompt_len(),
                    lib.feature_dim(),
                    lib.capacity(),
                    controller_cfg.prompt_len,
                    cfg.stream.feature_dim,
                    controller_cfg.capacity,
                )));
            }
            Controller::with_library(stack.clone(), anchor, controller_cfg, cfg.variant, lib)?
        }
        None => Controller::new(stack.clone(), anchor, controller_cfg, cfg.variant)?,
    };

    let sequence = episode_domain_sequence(&cfg.stream)?;
    let mut obs_rng = SplitMix64::new(run_seed).fork(OBS_SALT);
    let mut rows = Vec::new();
    for (ep, &d) in sequence.iter().enumerate() {
        let realized = episode_domain(cfg, &domains[d], d, ep)?;
        let episode = sample_episode(
            &realized,
            cfg.stream.num_candidates,
            cfg.stream.steps_per_episode,
            &mut obs_rng,
        );
        let outcomes = controller.run_episode(ep, &episode)?;
        for (t, outcome) in outcomes.into_iter().enumerate() {
            let oracle = oracle_action(&stack, source, &realized, t, &episode[t])?;
            rows.push(StepRecord {
                episode: ep,
                step: t,
                domain: d,
                accurate: outcome.action == oracle,
                outcome,
            });
        }
        logging::debug(
            level,
            &format!(
                "rep {repetition} episode {ep} (domain {d}): library {}",
                controller.library().len()
            ),
        );
    }

    let summary = summarize(cfg, run_seed, repetition, &rows);
    let record = RunRecord {
        variant: cfg.variant,
        seed: run_seed,
        repetition,
        rows,
        summary,
    };
    Ok((record, controller.library().clone()))
}

fn summarize(
    cfg: &ExperimentConfig,
    seed: u64,
    repetition: usize,
    rows: &[StepRecord],
) -> RunSummary {
    let steps = rows.len();
    let denom = steps.max(1) as f64;
    let covered = rows.iter().filter(|r| r.outcome.covered).count();
    let optimizations = rows.iter().filter(|r| r.outcome.optimization_invoked).count();
    let accuracy = rows.iter().filter(|r| r.accurate).count() as f64 / denom;
    let reduction: f64 = rows
        .iter()
        .map(|r| relative_reduction(&r.outcome))
        .sum::<f64>()
        / denom;
    let final_disc: f64 = rows.iter().map(|r| r.outcome.d_final).sum::<f64>() / denom;

    let gaps: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.outcome.projection_gap)
        .collect();
    let gap_mean = if gaps.is_empty() {
        0.0
    } else {
        gaps.iter().sum::<f64>() / gaps.len() as f64
    };
    let gap_max = gaps.iter().cloned().fold(0.0, f64::max);

    let steps_per_cycle = cfg.stream.num_domains * cfg.stream.steps_per_episode;
    let mut cycle_coverage = Vec::new();
    let mut cycle_optimization_rate = Vec::new();
    if steps_per_cycle > 0 {
        for chunk in rows.chunks(steps_per_cycle) {
            let n = chunk.len().max(1) as f64;
            cycle_coverage
                .push(chunk.iter().filter(|r| r.outcome.covered).count() as f64 / n);
            cycle_optimization_rate.push(
                chunk
                    .iter()
                    .filter(|r| r.outcome.optimization_invoked)
                    .count() as f64
                    / n,
            );
        }
    }

    RunSummary {
        variant: cfg.variant.name().to_string(),
        seed,
        repetition,
        steps,
        coverage_rate: covered as f64 / denom,
        mean_discrepancy_reduction: reduction,
        total_optimizations: optimizations,
        mean_accuracy: accuracy,
        mean_final_discrepancy: final_disc,
        projection_clipped_steps: rows
            .iter()
            .filter(|r| r.outcome.projection_clipped)
            .count(),
        projection_gap_mean: gap_mean,
        projection_gap_max: gap_max,
        cycle_coverage,
        cycle_optimization_rate,
    }
}

/// Signed relative reduction of the final-layer discrepancy achieved by the
/// bridge at one step: positive when the bridge moved the statistics toward
/// the anchor, negative when it pushed them away, zero when no bridge was
/// available.
pub fn relative_reduction(outcome: &StepOutcome<f64>) -> f64 {
    if outcome.dp.is_finite() && outcome.d0 > 0.0 {
        (outcome.d0 - outcome.dp) / outcome.d0
    } else {
        0.0
    }
}

/// Execute every repetition of the experiment, write outputs when an output
/// directory is configured, and return the records.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let level = logging::level_from_env()?;
    cfg.validate()?;
    let mut records = Vec::with_capacity(cfg.repetitions);
    let mut first_library: Option<AssetLibrary<f64>> = None;
    for rep in 0..cfg.repetitions {
        let run_seed = cfg.seed.wrapping_add(rep as u64);
        logging::info(
            level,
            &format!(
                "run variant={} seed={run_seed} repetition={rep}",
                cfg.variant.name()
            ),
        );
        let (record, library) = run_single(cfg, rep, run_seed, level)?;
        logging::info(
            level,
            &format!(
                "  coverage={:.3} optimizations={} reduction={:.3}",
                record.summary.coverage_rate,
                record.summary.total_optimizations,
                record.summary.mean_discrepancy_reduction
            ),
        );
        if rep == 0 {
            first_library = Some(library);
        }
        records.push(record);
    }

    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        for record in &records {
            let stem = format!(
                "{}_seed{}_rep{}",
                record.variant.name(),
                record.seed,
                record.repetition
            );
            fs::write(
                dir.join(format!("rows_{stem}.csv")),
                rows_csv(record.variant, &record.rows),
            )?;
            fs::write(
                dir.join(format!("summary_{stem}.txt")),
                summary_text(&record.summary),
            )?;
        }
    }

    if let Some(path) = &cfg.assets_out {
        let lib = first_library.expect("at least one repetition ran");
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        fs::write(path, library::serialize(&lib))?;
        logging::info(level, &format!("assets written to {}", path.display()));
    }
    Ok(records)
}

/// CSV rows for one run. Column order is fixed; floats carry 17 significant
/// digits so reruns are byte-identical.
pub fn rows_csv(variant: Variant, rows: &[StepRecord]) -> String {
    let mut out = String::from(
        "episode,step,variant,d0,dp,covered,optimization_invoked,entropy,accuracy_vs_oracle,library_size\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.episode,
            r.step,
            variant.name(),
            fmt_real(r.outcome.d0),
            fmt_real(r.outcome.dp),
            r.outcome.covered,
            r.outcome.optimization_invoked,
            fmt_real(r.outcome.entropy),
            u8::from(r.accurate),
            r.outcome.library_size,
        ));
    }
    out
}

fn fmt_series(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| fmt_real(*v))
        .collect::<Vec<_>>()
        .join(",")
}

/// Key=value summary document for one run.
pub fn summary_text(s: &RunSummary) -> String {
    let mut out = String::new();
    out.push_str(&format!("variant={}\n", s.variant));
    out.push_str(&format!("seed={}\n", s.seed));
    out.push_str(&format!("repetition={}\n", s.repetition));
    out.push_str(&format!("steps={}\n", s.steps));
    out.push_str(&format!("coverage_rate={}\n", fmt_real(s.coverage_rate)));
    out.push_str(&format!(
        "mean_discrepancy_reduction={}\n",
        fmt_real(s.mean_discrepancy_reduction)
    ));
    out.push_str(&format!("total_optimizations={}\n", s.total_optimizations));
    out.push_str(&format!("mean_accuracy={}\n", fmt_real(s.mean_accuracy)));
    out.push_str(&format!(
        "mean_final_discrepancy={}\n",
        fmt_real(s.mean_final_discrepancy)
    ));
    out.push_str(&format!(
        "projection_clipped_steps={}\n",
        s.projection_clipped_steps
    ));
    out.push_str(&format!(
        "projection_gap_mean={}\n",
        fmt_real(s.projection_gap_mean)
    ));
    out.push_str(&format!(
        "projection_gap_max={}\n",
        fmt_real(s.projection_gap_max)
    ));
    out.push_str(&format!(
        "cycle_coverage={}\n",
        fmt_series(&s.cycle_coverage)
    ));
    out.push_str(&format!(
        "cycle_optimization_rate={}\n",
        fmt_series(&s.cycle_optimization_rate)
    ));
    out
}

/// Load an asset library from disk.
pub fn load_assets(path: &Path) -> Result<AssetLibrary<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::Runtime(format!("reading {}: {e}", path.display())))?;
    Ok(library::deserialize(&text)?)
}
