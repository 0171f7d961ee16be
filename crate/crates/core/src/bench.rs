//! Latency benchmark harness: per-strategy wall-clock timing over a fixed
//! token budget, with forward-pass counts and an approximate peak-RSS
//! reading.
//!
//! Each strategy runs one untimed warmup plus `repeats` timed runs; the
//! reported per-token latency is the median of the timed totals divided
//! by the token budget. Every timed run decodes exactly `tokens_per_run`
//! tokens (the end-of-sequence id does not stop a benchmark run), so
//! forward-pass counts are directly comparable across strategies.

use serde::Serialize;
use std::fmt::Write as _;
use std::time::Instant;

use crate::decode::{DecodePolicy, ProbeMode, StepRunner, Strategy};
use crate::error::{Error, Result};
use crate::weights::{VisualContext, Weights};

/// Measurements of one strategy; `error` is set and the numeric fields
/// are empty when the strategy failed to run.
#[derive(Debug, Clone, Serialize)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub latency_ms_per_token: Option<f64>,
    pub throughput_tokens_per_ms: Option<f64>,
    pub total_time_ms: Option<f64>,
    pub forward_passes: Option<u64>,
    /// High-water-mark resident set size after the strategy's runs, from
    /// the operating system where available. Approximate: it is
    /// process-wide and never decreases.
    pub peak_rss_bytes: Option<u64>,
    /// This strategy's median latency divided by greedy's, when greedy
    /// was measured in the same invocation.
    pub latency_ratio_to_greedy: Option<f64>,
    pub error: Option<String>,
}

/// Full benchmark result.
#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub tokens_per_run: usize,
    pub repeats: usize,
    pub rows: Vec<StrategyReport>,
}

/// Median of the timed totals; `values` must be nonempty.
fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Peak resident set size of this process in bytes, read from
/// /proc/self/status (VmHWM). None where that interface is missing.
fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Time one strategy: one warmup run, then `repeats` timed runs of
/// exactly `tokens` steps each. Returns (median total ms, forward passes
/// of one timed run).
fn time_strategy(
    weights: &Weights,
    visual: &VisualContext,
    prompt_ids: &[u32],
    policy: &DecodePolicy,
    tokens: usize,
    repeats: usize,
) -> Result<(f64, u64)> {
    let mut totals = Vec::with_capacity(repeats);
    let mut decode_passes = 0u64;
    for run in 0..=repeats {
        let mut runner = StepRunner::new(weights, policy, visual, prompt_ids, ProbeMode::Minimal)?;
        let before = runner.forward_passes();
        let start = Instant::now();
        for _ in 0..tokens {
            runner.step()?;
        }
        let elapsed = start.elapsed();
        if run > 0 {
            totals.push(elapsed.as_secs_f64() * 1e3);
        }
        decode_passes = runner.forward_passes() - before;
    }
    Ok((median(&mut totals), decode_passes))
}

/// Benchmark the given strategies on one model. The `template` policy
/// supplies every knob except the strategy and token budget, so all
/// strategies share gamma, alpha, seeds, and layer choices. Strategies
/// that fail produce an error row instead of aborting the harness.
pub fn benchmark(
    weights: &Weights,
    visual: &VisualContext,
    prompt_ids: &[u32],
    strategies: &[Strategy],
    tokens_per_run: usize,
    repeats: usize,
    template: &DecodePolicy,
) -> Result<BenchReport> {
    if strategies.is_empty() {
        return Err(Error::BadBenchSpec("no strategies requested".to_string()));
    }
    if repeats < 3 {
        return Err(Error::BadBenchSpec(format!(
            "repeats must be at least 3 for a stable median, got {repeats}"
        )));
    }
    if tokens_per_run == 0 {
        return Err(Error::BadBenchSpec(
            "tokens_per_run must be positive".to_string(),
        ));
    }
    if prompt_ids.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let cfg = &weights.config;
    let needed = cfg.num_visual_tokens + prompt_ids.len() + tokens_per_run;
    if needed > cfg.max_seq_len {
        return Err(Error::SequenceTooLong {
            needed,
            max_seq_len: cfg.max_seq_len,
        });
    }

    let mut rows = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let mut policy = template.clone();
        policy.strategy = strategy;
        policy.max_new_tokens = tokens_per_run;
        let row = match time_strategy(weights, visual, prompt_ids, &policy, tokens_per_run, repeats)
        {
            Ok((total_ms, passes)) => StrategyReport {
                strategy,
                latency_ms_per_token: Some(total_ms / tokens_per_run as f64),
                throughput_tokens_per_ms: Some(tokens_per_run as f64 / total_ms),
                total_time_ms: Some(total_ms),
                forward_passes: Some(passes),
                peak_rss_bytes: peak_rss_bytes(),
                latency_ratio_to_greedy: None,
                error: None,
            },
            Err(e) => StrategyReport {
                strategy,
                latency_ms_per_token: None,
                throughput_tokens_per_ms: None,
                total_time_ms: None,
                forward_passes: None,
                peak_rss_bytes: None,
                latency_ratio_to_greedy: None,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }

    let greedy_latency = rows
        .iter()
        .find(|r| r.strategy == Strategy::Greedy)
        .and_then(|r| r.latency_ms_per_token);
    if let Some(base) = greedy_latency {
        for row in &mut rows {
            if let Some(lat) = row.latency_ms_per_token {
                row.latency_ratio_to_greedy = Some(if row.strategy == Strategy::Greedy {
                    1.0
                } else {
                    lat / base
                });
            }
        }
    }

    Ok(BenchReport {
        tokens_per_run,
        repeats,
        rows,
    })
}

/// Fixed-width text table of a benchmark report.
pub fn render_table(report: &BenchReport) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{} tokens per run, median of {} timed runs (1 warmup)",
        report.tokens_per_run, report.repeats
    )
    .expect("string write");
    writeln!(
        out,
        "{:<20} {:>12} {:>12} {:>12} {:>10} {:>14} {:>9}",
        "strategy", "ms/token", "tokens/ms", "total ms", "fwd passes", "~peak RSS", "x greedy"
    )
    .expect("string write");
    for row in &report.rows {
        if let Some(err) = &row.error {
            writeln!(out, "{:<20} failed: {err}", row.strategy.name()).expect("string write");
            continue;
        }
        let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let rss = row
            .peak_rss_bytes
            .map_or("-".to_string(), |b| format!("{:.1} MiB", b as f64 / (1024.0 * 1024.0)));
        let passes = row
            .forward_passes
            .map_or("-".to_string(), |p| p.to_string());
        let ratio = row
            .latency_ratio_to_greedy
            .map_or("-".to_string(), |r| format!("{r:.3}"));
        writeln!(
            out,
            "{:<20} {:>12} {:>12} {:>12} {:>10} {:>14} {:>9}",
            row.strategy.name(),
            fmt_opt(row.latency_ms_per_token),
            fmt_opt(row.throughput_tokens_per_ms),
            fmt_opt(row.total_time_ms),
            passes,
            rss,
            ratio
        )
        .expect("string write");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::weights::{synthesize_visual_context, synthesize_weights};

    fn fixture() -> (Weights, VisualContext) {
        let cfg = ModelConfig {
            num_layers: 3,
            hidden_dim: 8,
            ffn_dim: 16,
            vocab_size: 16,
            num_heads: 2,
            num_visual_tokens: 2,
            max_seq_len: 64,
        };
        (
            synthesize_weights(&cfg, 5).unwrap(),
            synthesize_visual_context(&cfg, 6).unwrap(),
        )
    }

    #[test]
    fn median_of_odd_and_even_slices() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&mut [7.0]), 7.0);
    }

    #[test]
    fn rejects_bad_specs() {
        let (w, v) = fixture();
        let t = DecodePolicy::new(Strategy::Greedy, &w.config);
        assert!(matches!(
            benchmark(&w, &v, &[1], &[], 4, 3, &t),
            Err(Error::BadBenchSpec(_))
        ));
        assert!(matches!(
            benchmark(&w, &v, &[1], &[Strategy::Greedy], 4, 2, &t),
            Err(Error::BadBenchSpec(_))
        ));
        assert!(matches!(
            benchmark(&w, &v, &[1], &[Strategy::Greedy], 0, 3, &t),
            Err(Error::BadBenchSpec(_))
        ));
        assert!(matches!(
            benchmark(&w, &v, &[1], &[Strategy::Greedy], 1000, 3, &t),
            Err(Error::SequenceTooLong { .. })
        ));
    }

    #[test]
    fn greedy_row_has_unit_ratio_and_exact_pass_count() {
        let (w, v) = fixture();
        let t = DecodePolicy::new(Strategy::Greedy, &w.config);
        let report = benchmark(&w, &v, &[1, 2], &[Strategy::Greedy], 6, 3, &t).unwrap();
        let row = &report.rows[0];
        assert_eq!(row.latency_ratio_to_greedy, Some(1.0));
        assert_eq!(row.forward_passes, Some(6));
        assert!(row.error.is_none());
    }

    #[test]
    fn contrastive_doubles_forward_passes() {
        let (w, v) = fixture();
        let t = DecodePolicy::new(Strategy::Greedy, &w.config);
        let report = benchmark(
            &w,
            &v,
            &[1, 2],
            &[Strategy::Greedy, Strategy::Contrastive],
            5,
            3,
            &t,
        )
        .unwrap();
        assert_eq!(report.rows[0].forward_passes, Some(5));
        assert_eq!(report.rows[1].forward_passes, Some(10));
        assert!(report.rows[1].latency_ratio_to_greedy.is_some());
    }

    #[test]
    fn throughput_is_the_inverse_of_latency() {
        let (w, v) = fixture();
        let t = DecodePolicy::new(Strategy::Greedy, &w.config);
        let report = benchmark(&w, &v, &[1], &[Strategy::MemvrDynamic], 4, 3, &t).unwrap();
        let row = &report.rows[0];
        let product =
            row.latency_ms_per_token.unwrap() * row.throughput_tokens_per_ms.unwrap();
        assert!((product - 1.0).abs() < 1e-12);
        // No greedy row in this invocation, so no ratio.
        assert!(row.latency_ratio_to_greedy.is_none());
    }

    #[test]
    fn failing_strategy_yields_error_row_without_aborting() {
        let (w, v) = fixture();
        let mut t = DecodePolicy::new(Strategy::Greedy, &w.config);
        t.static_layer = 99;
        let report = benchmark(
            &w,
            &v,
            &[1],
            &[Strategy::Greedy, Strategy::MemvrStatic],
            4,
            3,
            &t,
        )
        .unwrap();
        assert!(report.rows[0].error.is_none());
        let bad = &report.rows[1];
        assert!(bad.error.is_some());
        assert!(bad.latency_ms_per_token.is_none());
        let table = render_table(&report);
        assert!(table.contains("failed:"));
    }

    #[test]
    fn table_lists_every_strategy() {
        let (w, v) = fixture();
        let t = DecodePolicy::new(Strategy::Greedy, &w.config);
        let report = benchmark(
            &w,
            &v,
            &[1],
            &[Strategy::Greedy, Strategy::Sample],
            3,
            3,
            &t,
        )
        .unwrap();
        let table = render_table(&report);
        assert!(table.contains("greedy"));
        assert!(table.contains("sample"));
        assert!(table.contains("ms/token"));
    }
}
