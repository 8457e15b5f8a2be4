//! Aggregation of finished runs: summary table plus plot-ready series.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::runner::{fmt_real, RunSummary};
use crate::{HarnessError, Result};

/// Mean and (population) standard deviation of a sample.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregated summary statistics for one variant.
#[derive(Debug, Clone)]
pub struct VariantAggregate {
    pub variant: String,
    pub runs: usize,
    pub coverage: (f64, f64),
    pub reduction: (f64, f64),
    pub optimizations: (f64, f64),
    pub accuracy: (f64, f64),
    pub final_discrepancy: (f64, f64),
    pub clipped_steps: (f64, f64),
    pub gap_mean: (f64, f64),
}

/// Group summaries by variant and reduce each field to mean and std.
pub fn aggregate(summaries: &[RunSummary]) -> Result<Vec<VariantAggregate>> {
    if summaries.is_empty() {
        return Err(HarnessError::Runtime("no run summaries to report".into()));
    }
    let mut by_variant: BTreeMap<String, Vec<&RunSummary>> = BTreeMap::new();
    for s in summaries {
        by_variant.entry(s.variant.clone()).or_default().push(s);
    }
    Ok(by_variant
        .into_iter()
        .map(|(variant, group)| {
            let pick = |f: &dyn Fn(&RunSummary) -> f64| -> (f64, f64) {
                let values: Vec<f64> = group.iter().map(|s| f(s)).collect();
                mean_std(&values)
            };
            VariantAggregate {
                variant,
                runs: group.len(),
                coverage: pick(&|s| s.coverage_rate),
                reduction: pick(&|s| s.mean_discrepancy_reduction),
                optimizations: pick(&|s| s.total_optimizations as f64),
                accuracy: pick(&|s| s.mean_accuracy),
                final_discrepancy: pick(&|s| s.mean_final_discrepancy),
                clipped_steps: pick(&|s| s.projection_clipped_steps as f64),
                gap_mean: pick(&|s| s.projection_gap_mean),
            }
        })
        .collect())
}

/// Plain-text aggregate table.
pub fn render_table(aggregates: &[VariantAggregate]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<18} {:>4} {:>17} {:>17} {:>15} {:>17} {:>17} {:>13}\n",
        "variant",
        "runs",
        "coverage",
        "reduction",
        "optimizations",
        "accuracy",
        "final_disc",
        "proj_gap"
    ));
    for a in aggregates {
        let cell = |(m, s): (f64, f64)| format!("{m:.4}+-{s:.4}");
        out.push_str(&format!(
            "{:<18} {:>4} {:>17} {:>17} {:>15} {:>17} {:>17} {:>13}\n",
            a.variant,
            a.runs,
            cell(a.coverage),
            cell(a.reduction),
            format!("{:.1}+-{:.1}", a.optimizations.0, a.optimizations.1),
            cell(a.accuracy),
            cell(a.final_discrepancy),
            format!("{:.2e}", a.gap_mean.0),
        ));
    }
    out
}

/// One parsed CSV step row (the columns the series need).
#[derive(Debug, Clone)]
pub struct CsvRow {
    pub episode: usize,
    pub step: usize,
    pub variant: String,
    pub d0: f64,
    pub dp: f64,
    pub covered: bool,
}

fn parse_flag(s: &str, context: &str) -> Result<bool> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(HarnessError::Runtime(format!(
            "{context}: expected true/false, got '{other}'"
        ))),
    }
}

fn parse_f64(s: &str, context: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| HarnessError::Runtime(format!("{context}: bad number '{s}'")))
}

/// Parse a rows CSV document written by the runner.
pub fn parse_rows_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| HarnessError::Runtime("empty rows file".into()))?;
    if !header.starts_with("episode,step,variant,d0,dp,covered") {
        return Err(HarnessError::Runtime(format!(
            "unexpected rows header '{header}'"
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(HarnessError::Runtime(format!(
                "row {}: expected 10 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let ctx = format!("row {}", lineno + 2);
        rows.push(CsvRow {
            episode: parse_f64(fields[0], &ctx)? as usize,
            step: parse_f64(fields[1], &ctx)? as usize,
            variant: fields[2].to_string(),
            d0: parse_f64(fields[3], &ctx)?,
            dp: parse_f64(fields[4], &ctx)?,
            covered: parse_flag(fields[5], &ctx)?,
        });
    }
    Ok(rows)
}

/// Parse one summary document back into a [`RunSummary`].
pub fn parse_summary(text: &str) -> Result<RunSummary> {
    let mut map: BTreeMap<&str, &str> = BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim(), v.trim());
        }
    }
    let get = |k: &str| -> Result<&str> {
        map.get(k)
            .copied()
            .ok_or_else(|| HarnessError::Runtime(format!("summary missing field '{k}'")))
    };
    let num = |k: &str| -> Result<f64> { parse_f64(get(k)?, k) };
    let series = |k: &str| -> Result<Vec<f64>> {
        let raw = get(k)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',').map(|v| parse_f64(v, k)).collect()
    };
    Ok(RunSummary {
        variant: get("variant")?.to_string(),
        seed: num("seed")? as u64,
        repetition: num("repetition")? as usize,
        steps: num("steps")? as usize,
        coverage_rate: num("coverage_rate")?,
        mean_discrepancy_reduction: num("mean_discrepancy_reduction")?,
        total_optimizations: num("total_optimizations")? as usize,
        mean_accuracy: num("mean_accuracy")?,
        mean_final_discrepancy: num("mean_final_discrepancy")?,
        projection_clipped_steps: num("projection_clipped_steps")? as usize,
        projection_gap_mean: num("projection_gap_mean")?,
        projection_gap_max: num("projection_gap_max")?,
        cycle_coverage: series("cycle_coverage")?,
        cycle_optimization_rate: series("cycle_optimization_rate")?,
    })
}

/// Per-variant coverage and bridge-reduction series over the global step
/// index, averaged across runs.
pub fn step_series(rows_by_run: &[Vec<CsvRow>]) -> BTreeMap<String, (Vec<f64>, Vec<f64>)> {
    // variant -> (sum coverage, sum reduction, count) per global step.
    let mut acc: BTreeMap<String, Vec<(f64, f64, usize)>> = BTreeMap::new();
    for run in rows_by_run {
        let steps_per_episode = run.iter().map(|r| r.step + 1).max().unwrap_or(1);
        for row in run {
            let global = row.episode * steps_per_episode + row.step;
            let entry = acc
                .entry(row.variant.clone())
                .or_default();
            if entry.len() <= global {
                entry.resize(global + 1, (0.0, 0.0, 0));
            }
            let reduction = if row.dp.is_finite() && row.d0 > 0.0 {
                (row.d0 - row.dp) / row.d0
            } else {
                0.0
            };
            let slot = &mut entry[global];
            slot.0 += f64::from(row.covered as u8);
            slot.1 += reduction;
            slot.2 += 1;
        }
    }
    acc.into_iter()
        .map(|(variant, slots)| {
            let coverage = slots
                .iter()
                .map(|(c, _, n)| c / (*n).max(1) as f64)
                .collect();
            let reduction = slots
                .iter()
                .map(|(_, r, n)| r / (*n).max(1) as f64)
                .collect();
            (variant, (coverage, reduction))
        })
        .collect()
}

/// Read a directory of runner outputs, write the aggregate table to
/// `out_path` and the per-variant series files next to it.
pub fn report_dir(in_dir: &Path, out_path: &Path) -> Result<String> {
    let mut summaries = Vec::new();
    let mut rows_by_run = Vec::new();
    let mut entries: Vec<_> = fs::read_dir(in_dir)
        .map_err(|e| HarnessError::Runtime(format!("reading {}: {e}", in_dir.display())))?
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let name = entry.file_name().to_string_lossy().to_string();
        if name.starts_with("summary_") && name.ends_with(".txt") {
            summaries.push(parse_summary(&fs::read_to_string(entry.path())?)?);
        } else if name.starts_with("rows_") && name.ends_with(".csv") {
            rows_by_run.push(parse_rows_csv(&fs::read_to_string(entry.path())?)?);
        }
    }
    let aggregates = aggregate(&summaries)?;
    let table = render_table(&aggregates);
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(out_path, &table)?;

    let series_dir = out_path.parent().unwrap_or_else(|| Path::new("."));
    for (variant, (coverage, reduction)) in step_series(&rows_by_run) {
        let mut cov_text = String::from("step coverage\n");
        for (i, v) in coverage.iter().enumerate() {
            cov_text.push_str(&format!("{i} {}\n", fmt_real(*v)));
        }
        fs::write(
            series_dir.join(format!("series_{variant}_coverage.txt")),
            cov_text,
        )?;
        let mut red_text = String::from("step reduction\n");
        for (i, v) in reduction.iter().enumerate() {
            red_text.push_str(&format!("{i} {}\n", fmt_real(*v)));
        }
        fs::write(
            series_dir.join(format!("series_{variant}_reduction.txt")),
            red_text,
        )?;
    }
    Ok(table)
}
