//! Command-line surface for the memvr-core decoding testbed: weight and
//! visual-context synthesis, generation with per-step tracing, gamma and
//! alpha sweeps, strategy benchmarking, and trace inspection.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use memvr_core::{
    benchmark, fnv1a64, generate, load_visual_context, load_weights, render_table, save_weights,
    synthesize_visual_context, synthesize_weights, DecodePolicy, ModelConfig, Strategy,
    UncertaintyTrace, VisualContext, Weights, DEFAULT_ALPHA, DEFAULT_GAMMA,
};

/// Tokens decoded per grid cell in `sweep`.
const SWEEP_MAX_NEW: usize = 32;

#[derive(Parser)]
#[command(
    name = "memvr",
    version,
    about = "Deterministic toy multimodal decoder with visual-retracing decoding"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a weight file from a seed
    InitWeights(InitWeightsArgs),
    /// Decode tokens from a prompt, optionally writing a trace
    Gen(GenArgs),
    /// Time decoding strategies against greedy
    Bench(BenchArgs),
    /// Run a generation per (gamma, alpha) grid cell and tabulate
    Sweep(SweepArgs),
    /// Summarize or render a recorded trace
    Inspect(InspectArgs),
}

#[derive(Args)]
struct InitWeightsArgs {
    /// Output weight file
    #[arg(long)]
    out: PathBuf,
    /// Synthesis seed
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Transformer layers
    #[arg(long, default_value_t = 12)]
    layers: usize,
    /// Hidden dimension
    #[arg(long, default_value_t = 128)]
    dim: usize,
    /// Feed-forward dimension
    #[arg(long, default_value_t = 512)]
    ffn_dim: usize,
    /// Vocabulary size
    #[arg(long, default_value_t = 512)]
    vocab: usize,
    /// Attention heads
    #[arg(long, default_value_t = 4)]
    heads: usize,
    /// Visual tokens per prompt
    #[arg(long, default_value_t = 16)]
    visual_tokens: usize,
    /// Maximum cached sequence length
    #[arg(long, default_value_t = 256)]
    max_seq: usize,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum TraceFormat {
    Csv,
    Json,
}

#[derive(Args)]
struct GenArgs {
    /// Weight file from init-weights
    #[arg(long)]
    weights: PathBuf,
    /// Seed to synthesize the visual context
    #[arg(long, default_value_t = 7, conflicts_with = "image_file")]
    image_seed: u64,
    /// Load the visual context from a file instead of synthesizing it
    #[arg(long)]
    image_file: Option<PathBuf>,
    /// Prompt token ids, comma or space separated
    #[arg(long, default_value = "1 2 3")]
    prompt_ids: String,
    /// Decoding strategy: greedy, sample, memvr-static, memvr-dynamic,
    /// memvr-dynamic-alpha, or contrastive
    #[arg(long, default_value = "greedy", value_parser = parse_strategy)]
    strategy: Strategy,
    /// Trigger threshold on normalized entropy
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    gamma: f32,
    /// Injection ratio
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f32,
    /// Injection layer (memvr-static only)
    #[arg(long)]
    layer: Option<usize>,
    /// Candidate layer range LO,HI (dynamic strategies only)
    #[arg(long)]
    candidates: Option<String>,
    /// Sampling temperature
    #[arg(long, default_value_t = 1.0)]
    temperature: f32,
    /// Sampling seed
    #[arg(long, default_value_t = 0)]
    sample_seed: u64,
    /// Maximum tokens to emit
    #[arg(long, default_value_t = 32)]
    max_new: usize,
    /// Write the per-step trace here
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Trace file format
    #[arg(long, value_enum, default_value_t = TraceFormat::Csv)]
    format: TraceFormat,
}

#[derive(Args)]
struct BenchArgs {
    /// Weight file from init-weights
    #[arg(long)]
    weights: PathBuf,
    /// Seed to synthesize the visual context
    #[arg(long, default_value_t = 7)]
    image_seed: u64,
    /// Prompt token ids, comma or space separated
    #[arg(long, default_value = "1 2 3")]
    prompt_ids: String,
    /// Tokens decoded per timed run
    #[arg(long, default_value_t = 80)]
    tokens: usize,
    /// Timed runs per strategy (median is reported)
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(3..))]
    repeats: u64,
    /// Strategies to time, comma separated
    #[arg(long, default_value = "greedy,memvr-dynamic,contrastive")]
    strategies: String,
    /// Write the report as JSON here
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum SweepMetric {
    TriggerRate,
    MeanTriggerLayer,
    MeanAlpha,
    Divergence,
}

impl SweepMetric {
    fn name(self) -> &'static str {
        match self {
            SweepMetric::TriggerRate => "trigger_rate",
            SweepMetric::MeanTriggerLayer => "mean_trigger_layer",
            SweepMetric::MeanAlpha => "mean_alpha",
            SweepMetric::Divergence => "divergence",
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    /// Weight file from init-weights
    #[arg(long)]
    weights: PathBuf,
    /// Seed to synthesize the visual context
    #[arg(long, default_value_t = 7)]
    image_seed: u64,
    /// Prompt token ids, comma or space separated
    #[arg(long, default_value = "1 2 3")]
    prompt_ids: String,
    /// Gamma grid, comma separated
    #[arg(long, default_value = "0.5,0.75,1.0")]
    gammas: String,
    /// Alpha grid, comma separated
    #[arg(long, default_value = "0.0,0.2,0.5")]
    alphas: String,
    /// Metric shown in the stdout pivot table
    #[arg(long, value_enum, default_value_t = SweepMetric::Divergence)]
    metric: SweepMetric,
    /// Write the full CSV (all metrics) here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// Trace file (CSV or JSON, sniffed by content)
    #[arg(long)]
    trace: PathBuf,
    /// Render the layer-by-step heatmap
    #[arg(long)]
    ascii: bool,
    /// Print summary statistics (default when --ascii is absent)
    #[arg(long)]
    stats: bool,
}

enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<memvr_core::Error> for CliError {
    fn from(e: memvr_core::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: memvr_core::Error| e.to_string())
}

/// Comma and/or whitespace separated list.
fn split_list(raw: &str) -> impl Iterator<Item = &str> {
    raw.split([',', ' ', '\t']).filter(|s| !s.is_empty())
}

fn parse_prompt_ids(raw: &str) -> Result<Vec<u32>, CliError> {
    let ids: Result<Vec<u32>, _> = split_list(raw).map(str::parse).collect();
    let ids = ids.map_err(|_| usage(format!("--prompt-ids must be u32 ids, got '{raw}'")))?;
    if ids.is_empty() {
        return Err(usage("--prompt-ids must name at least one token"));
    }
    Ok(ids)
}

fn parse_f32_grid(raw: &str, flag: &str) -> Result<Vec<f32>, CliError> {
    let vals: Result<Vec<f32>, _> = split_list(raw).map(str::parse).collect();
    let vals = vals.map_err(|_| usage(format!("{flag} must be a list of floats, got '{raw}'")))?;
    if vals.is_empty() {
        return Err(usage(format!("{flag} must name at least one value")));
    }
    Ok(vals)
}

fn parse_candidates(raw: &str) -> Result<(usize, usize), CliError> {
    let parts: Vec<&str> = split_list(raw).collect();
    if parts.len() == 2 {
        if let (Ok(lo), Ok(hi)) = (parts[0].parse(), parts[1].parse()) {
            return Ok((lo, hi));
        }
    }
    Err(usage(format!("--candidates must be LO,HI, got '{raw}'")))
}

fn parse_strategies(raw: &str) -> Result<Vec<Strategy>, CliError> {
    let list: Result<Vec<Strategy>, _> = split_list(raw).map(str::parse).collect();
    let list = list.map_err(|e: memvr_core::Error| usage(e.to_string()))?;
    if list.is_empty() {
        return Err(usage("--strategies must name at least one strategy"));
    }
    Ok(list)
}

fn load_model(path: &PathBuf) -> Result<Weights, CliError> {
    Ok(load_weights(path)?)
}

fn visual_for(
    weights: &Weights,
    image_file: Option<&PathBuf>,
    image_seed: u64,
) -> Result<VisualContext, CliError> {
    match image_file {
        Some(path) => {
            let v = load_visual_context(path)?;
            v.check_matches(&weights.config)?;
            Ok(v)
        }
        None => Ok(synthesize_visual_context(&weights.config, image_seed)?),
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::InitWeights(args) => run_init_weights(args),
        Command::Gen(args) => run_gen(args),
        Command::Bench(args) => run_bench(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Inspect(args) => run_inspect(args),
    }
}

fn run_init_weights(args: InitWeightsArgs) -> Result<(), CliError> {
    let config = ModelConfig {
        num_layers: args.layers,
        hidden_dim: args.dim,
        ffn_dim: args.ffn_dim,
        vocab_size: args.vocab,
        num_heads: args.heads,
        num_visual_tokens: args.visual_tokens,
        max_seq_len: args.max_seq,
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let weights = synthesize_weights(&config, args.seed)?;
    save_weights(&weights, &args.out)?;
    let bytes = std::fs::read(&args.out)?;
    println!("wrote {}", args.out.display());
    println!(
        "layers={} dim={} ffn={} vocab={} heads={} visual_tokens={} max_seq={} seed={}",
        config.num_layers,
        config.hidden_dim,
        config.ffn_dim,
        config.vocab_size,
        config.num_heads,
        config.num_visual_tokens,
        config.max_seq_len,
        args.seed
    );
    println!(
        "params={} bytes={} fnv1a64={:016x}",
        config.param_count(),
        bytes.len(),
        fnv1a64(&bytes)
    );
    Ok(())
}

fn run_gen(args: GenArgs) -> Result<(), CliError> {
    let weights = load_model(&args.weights)?;
    let visual = visual_for(&weights, args.image_file.as_ref(), args.image_seed)?;
    let prompt = parse_prompt_ids(&args.prompt_ids)?;

    match (args.strategy, args.layer) {
        (Strategy::MemvrStatic, None) => {
            return Err(usage("--strategy memvr-static requires --layer"));
        }
        (Strategy::MemvrStatic, Some(_)) | (_, None) => {}
        (other, Some(_)) => {
            return Err(usage(format!(
                "--layer only applies to memvr-static, not {other}"
            )));
        }
    }
    if args.candidates.is_some()
        && !matches!(
            args.strategy,
            Strategy::MemvrDynamic | Strategy::MemvrDynamicAlpha
        )
    {
        return Err(usage(format!(
            "--candidates only applies to dynamic strategies, not {}",
            args.strategy
        )));
    }

    let mut policy = DecodePolicy::new(args.strategy, &weights.config);
    policy.gamma = args.gamma;
    policy.alpha = args.alpha;
    policy.temperature = args.temperature;
    policy.sample_seed = args.sample_seed;
    policy.max_new_tokens = args.max_new;
    if let Some(layer) = args.layer {
        policy.static_layer = layer;
    }
    if let Some(raw) = &args.candidates {
        policy.candidate_layers = parse_candidates(raw)?;
    }
    policy
        .validate(&weights.config)
        .map_err(|e| usage(e.to_string()))?;

    let generation = generate(&weights, &policy, &visual, &prompt)?;
    let ids: Vec<String> = generation.tokens.iter().map(u32::to_string).collect();
    println!("{}", ids.join(" "));

    if let Some(path) = &args.trace_out {
        match args.format {
            TraceFormat::Csv => generation.trace.export_csv(path)?,
            TraceFormat::Json => generation.trace.export_json(path)?,
        }
    }
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<(), CliError> {
    let weights = load_model(&args.weights)?;
    let visual = visual_for(&weights, None, args.image_seed)?;
    let prompt = parse_prompt_ids(&args.prompt_ids)?;
    let strategies = parse_strategies(&args.strategies)?;
    let template = DecodePolicy::new(Strategy::Greedy, &weights.config);
    let report = benchmark(
        &weights,
        &visual,
        &prompt,
        &strategies,
        args.tokens,
        args.repeats as usize,
        &template,
    )?;
    print!("{}", render_table(&report));
    if let Some(path) = &args.json_out {
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| CliError::Runtime(e.into()))?;
        std::fs::write(path, json)?;
    }
    Ok(())
}

struct SweepRow {
    gamma: f32,
    alpha: f32,
    trigger_rate: f64,
    mean_trigger_layer: Option<f64>,
    mean_alpha: Option<f64>,
    divergence: f64,
}

impl SweepRow {
    fn metric(&self, metric: SweepMetric) -> Option<f64> {
        match metric {
            SweepMetric::TriggerRate => Some(self.trigger_rate),
            SweepMetric::MeanTriggerLayer => self.mean_trigger_layer,
            SweepMetric::MeanAlpha => self.mean_alpha,
            SweepMetric::Divergence => Some(self.divergence),
        }
    }
}

/// Positional mismatch fraction: differing positions over the shared
/// prefix plus the length difference, normalized by the longer length.
fn divergence(a: &[u32], b: &[u32]) -> f64 {
    let max_len = a.len().max(b.len());
    if max_len == 0 {
        return 0.0;
    }
    let mismatches = a.iter().zip(b).filter(|(x, y)| x != y).count();
    let tail = max_len - a.len().min(b.len());
    (mismatches + tail) as f64 / max_len as f64
}

fn run_sweep(args: SweepArgs) -> Result<(), CliError> {
    let weights = load_model(&args.weights)?;
    let visual = visual_for(&weights, None, args.image_seed)?;
    let prompt = parse_prompt_ids(&args.prompt_ids)?;
    let gammas = parse_f32_grid(&args.gammas, "--gammas")?;
    let alphas = parse_f32_grid(&args.alphas, "--alphas")?;

    let mut greedy_policy = DecodePolicy::new(Strategy::Greedy, &weights.config);
    greedy_policy.max_new_tokens = SWEEP_MAX_NEW;
    let baseline = generate(&weights, &greedy_policy, &visual, &prompt)?.tokens;

    let mut rows = Vec::with_capacity(gammas.len() * alphas.len());
    for &gamma in &gammas {
        for &alpha in &alphas {
            let mut policy = DecodePolicy::new(Strategy::MemvrDynamic, &weights.config);
            policy.gamma = gamma;
            policy.alpha = alpha;
            policy.max_new_tokens = SWEEP_MAX_NEW;
            policy
                .validate(&weights.config)
                .map_err(|e| usage(e.to_string()))?;
            let generation = generate(&weights, &policy, &visual, &prompt)?;
            let (trigger_rate, mean_trigger_layer, mean_alpha) = match generation.trace.stats() {
                Some(s) => (s.trigger_rate, s.mean_trigger_layer, s.mean_applied_alpha),
                None => (0.0, None, None),
            };
            rows.push(SweepRow {
                gamma,
                alpha,
                trigger_rate,
                mean_trigger_layer,
                mean_alpha,
                divergence: divergence(&baseline, &generation.tokens),
            });
        }
    }

    let opt_cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    let mut csv = String::from("gamma,alpha,trigger_rate,mean_trigger_layer,mean_alpha,divergence\n");
    for row in &rows {
        csv.push_str(&format!(
            "{:.6},{:.6},{:.6},{},{},{:.6}\n",
            row.gamma,
            row.alpha,
            row.trigger_rate,
            opt_cell(row.mean_trigger_layer),
            opt_cell(row.mean_alpha),
            row.divergence
        ));
    }

    println!(
        "{} by gamma (rows) x alpha (columns), {} tokens per cell",
        args.metric.name(),
        SWEEP_MAX_NEW
    );
    print!("{:>12}", "gamma\\alpha");
    for &alpha in &alphas {
        print!(" {alpha:>8.4}");
    }
    println!();
    for (gi, &gamma) in gammas.iter().enumerate() {
        print!("{gamma:>12.4}");
        for ai in 0..alphas.len() {
            let cell = rows[gi * alphas.len() + ai]
                .metric(args.metric)
                .map_or("-".to_string(), |v| format!("{v:.4}"));
            print!(" {cell:>8}");
        }
        println!();
    }

    if let Some(path) = &args.out {
        std::fs::write(path, csv)?;
    }
    Ok(())
}

fn run_inspect(args: InspectArgs) -> Result<(), CliError> {
    let trace = UncertaintyTrace::load(&args.trace)?;
    if trace.is_empty() {
        println!("empty trace (no steps recorded)");
        return Ok(());
    }
    if args.ascii {
        println!("{}", trace.render_ascii_heatmap());
    }
    if args.stats || !args.ascii {
        let s = trace.stats().expect("nonempty trace has stats");
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
        println!("steps: {}", s.steps);
        println!(
            "triggered steps: {} (rate {:.6})",
            s.triggered_steps, s.trigger_rate
        );
        println!("mean trigger layer: {}", opt(s.mean_trigger_layer));
        println!("mean applied alpha: {}", opt(s.mean_applied_alpha));
        println!("{:>5} {:>10} {:>10}", "layer", "mean_u", "max_u");
        for i in 0..trace.num_probe_layers() {
            println!(
                "{:>5} {:>10.6} {:>10.6}",
                i + 1,
                s.per_layer_mean[i],
                s.per_layer_max[i]
            );
        }
    }
    Ok(())
}
