//! Command-line driver.
//!
//! CSV column orders:
//!
//! * `run`: `layer,predicted_skip,h1_zero,h3_zero` then a `checksum,<sha256>` line
//! * `eval-predictor`: `layer,alpha_x100,true_positive,false_positive,false_negative,true_negative,precision,recall,predicted_sparsity,true_sparsity`
//! * `sweep-alpha`: `layer,alpha_x100,precision,recall,sparsity,h3_l2_error`

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bench::{time_gemv, MachineInfo, TimingConfig};
use crate::calibration::{select_alpha, sweep_alpha, DEFAULT_GRID, DEFAULT_PRECISION_TARGET};
use crate::metrics::{comparator_memory, op_counts, score_predictor, signpack_memory, PredictorScore};
use crate::mlp::{stack_forward, ForwardMode, MlpStack, TraceLevel};
use crate::model_io::{
    gen_inputs, gen_synthetic, read_model, read_signpack, write_model, write_signpack, GenMode, GenSpec,
    SignPackFile,
};
use crate::predictor::{AlphaSchedule, AlphaX100};
use crate::tensor::DenseVector;

/// Default kernel thread count when `--threads` is absent.
pub const THREADS_ENV: &str = "SIGNSKIP_THREADS";

const DEFAULT_GATE_ROW_SHIFT: f32 = 0.2;
const DEFAULT_INPUT_MEAN: f32 = 0.5;

#[derive(Debug, Parser)]
#[command(name = "signskip", version, about = "Sign-majority activation sparsity for gated MLP inference")]
struct Cli {
    /// Kernel threads; results are identical for every value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic model.
    Gen(GenArgs),
    /// Write the gate sign-pack sidecar for a model.
    Pack(PackArgs),
    /// Run inputs through the stack and print per-layer sparsity and an output checksum.
    Run(RunArgs),
    /// Per-layer predictor precision/recall.
    EvalPredictor(EvalArgs),
    /// Sweep alpha over a grid and report quality per layer.
    SweepAlpha(SweepArgs),
    /// Pick per-layer alphas from a sweep and emit the schedule as JSON.
    Calibrate(CalibrateArgs),
    /// Operation counts, memory footprints and GEMV timing.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum GenModeArg {
    IidGaussian,
    SparsityBiased,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    layers: usize,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value = "iid_gaussian")]
    mode: GenModeArg,
    #[arg(long)]
    seed: u64,
    /// Gate entry mean offset, subtracted (sparsity_biased only; default 0.2).
    #[arg(long)]
    gate_row_shift: Option<f32>,
    /// Mean of generated inputs (sparsity_biased only; default 0.5). Informational for `gen`.
    #[arg(long)]
    input_mean: Option<f32>,
    /// FATReLU threshold stored in the model header.
    #[arg(long, default_value_t = 0.0)]
    theta: f32,
    #[arg(short = 'o', long)]
    output: PathBuf,
    /// Also write the sign-pack sidecar here.
    #[arg(long)]
    signpack: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PackArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(short = 'o', long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    model: PathBuf,
    /// Sign-pack sidecar to use instead of packing at load time.
    #[arg(long)]
    signpack: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Seed for generated inputs.
    #[arg(long, required_unless_present = "inputs")]
    seed: Option<u64>,
    /// Number of generated inputs.
    #[arg(long)]
    count: Option<usize>,
    /// Mean of generated inputs (use the model's input mean for sparsity_biased models).
    #[arg(long, default_value_t = 0.0)]
    input_mean: f32,
    /// JSON file with an array of input vectors, instead of generated inputs.
    #[arg(long, conflicts_with_all = ["seed", "count"])]
    inputs: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AlphaArgs {
    /// Alpha for every layer, e.g. 1.03, or `inf`.
    #[arg(long, default_value = "1.00")]
    alpha: AlphaX100,
    /// JSON alpha schedule (as written by `calibrate`).
    #[arg(long, conflicts_with = "alpha")]
    schedule: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RunMode {
    Dense,
    Sparse,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum)]
    mode: RunMode,
    #[command(flatten)]
    alpha: AlphaArgs,
    #[command(flatten)]
    inputs: InputArgs,
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    alpha: AlphaArgs,
    #[command(flatten)]
    inputs: InputArgs,
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated alphas, e.g. 1.00,1.01,1.02.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<AlphaX100>>,
    #[command(flatten)]
    inputs: InputArgs,
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<AlphaX100>>,
    #[arg(long, default_value_t = DEFAULT_PRECISION_TARGET)]
    target: f64,
    /// Leading layers eligible for alpha > 1 (default: half the stack).
    #[arg(long)]
    early_layers: Option<usize>,
    #[command(flatten)]
    inputs: InputArgs,
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Report {
    Opcounts,
    Timing,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    layers: u64,
    #[arg(long, value_enum, default_value = "opcounts")]
    report: Report,
    /// Shorthand for adding the timing report.
    #[arg(long)]
    timing: bool,
    /// Sparsity assumed by the sparse MLP op count.
    #[arg(long, default_value_t = 0.92)]
    sparsity: f64,
    /// Rank of the low-rank comparator predictor.
    #[arg(long, default_value_t = 1024)]
    rank: u64,
    /// Bytes per comparator weight.
    #[arg(long, default_value_t = 2)]
    comparator_bytes: u64,
    /// Forced skip ratio for timing.
    #[arg(long, default_value_t = 0.9)]
    skip_ratio: f64,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value_t = 7)]
    repeats: usize,
    /// Seed for timing data.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
}

/// Parses `argv` (including the program name) and runs one subcommand.
/// Returns the process exit code.
pub fn run_cli<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return e.exit_code();
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}

fn thread_count(flag: Option<usize>) -> anyhow::Result<Option<usize>> {
    if let Some(n) = flag {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("invalid {THREADS_ENV}={v:?}"))?;
            if n == 0 {
                bail!("{THREADS_ENV} must be at least 1");
            }
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

fn execute(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(cli.threads)? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("building thread pool")?;
    // stdout handles are not Send; collect and forward once the command finishes
    let mut buf = Vec::new();
    let result = pool.install(|| {
        let sink: &mut dyn Write = &mut buf;
        match cli.command {
            Command::Gen(a) => cmd_gen(a, sink),
            Command::Pack(a) => cmd_pack(a, sink),
            Command::Run(a) => cmd_run(a, sink),
            Command::EvalPredictor(a) => cmd_eval(a, sink),
            Command::SweepAlpha(a) => cmd_sweep(a, sink),
            Command::Calibrate(a) => cmd_calibrate(a, sink),
            Command::Bench(a) => cmd_bench(a, sink),
        }
    });
    out.write_all(&buf)?;
    out.flush()?;
    result
}

/// Writes to `-o` when given, else to `out`.
fn with_sink(path: Option<&Path>, out: &mut dyn Write, f: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            let file = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
            let mut w = BufWriter::new(file);
            f(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => f(out),
    }
}

fn load_model(args: &ModelArgs) -> anyhow::Result<MlpStack> {
    let model = read_model(&args.model).with_context(|| format!("cannot load model {}", args.model.display()))?;
    match &args.signpack {
        None => Ok(model),
        Some(p) => {
            let packs = read_signpack(p).with_context(|| format!("cannot load sign-pack {}", p.display()))?;
            packs
                .attach(model)
                .with_context(|| format!("sign-pack {} does not match {}", p.display(), args.model.display()))
        }
    }
}

fn load_inputs(args: &InputArgs, model: &MlpStack, default_count: usize) -> anyhow::Result<Vec<DenseVector>> {
    let inputs = if let Some(p) = &args.inputs {
        let file = File::open(p).with_context(|| format!("cannot open inputs {}", p.display()))?;
        let inputs: Vec<DenseVector> = serde_json::from_reader(std::io::BufReader::new(file))
            .with_context(|| format!("cannot parse inputs {}", p.display()))?;
        inputs
    } else {
        let seed = args.seed.ok_or_else(|| anyhow!("--seed is required for generated inputs"))?;
        let mode = if args.input_mean == 0.0 {
            GenMode::IidGaussian
        } else {
            GenMode::SparsityBiased {
                gate_row_shift: 0.0,
                input_mean: args.input_mean,
            }
        };
        let spec = GenSpec {
            layers: model.layer_count(),
            d: model.d(),
            k: model.k(),
            seed,
            mode,
            theta: 0.0,
        };
        gen_inputs(&spec, args.count.unwrap_or(default_count))?
    };
    if inputs.is_empty() {
        bail!("no inputs");
    }
    if let Some((i, x)) = inputs.iter().enumerate().find(|(_, x)| x.len() != model.d()) {
        bail!("input {i} has length {} but the model dimension is {}", x.len(), model.d());
    }
    Ok(inputs)
}

fn load_schedule(args: &AlphaArgs, layers: usize) -> anyhow::Result<AlphaSchedule> {
    let schedule = match &args.schedule {
        Some(p) => {
            let file = File::open(p).with_context(|| format!("cannot open schedule {}", p.display()))?;
            serde_json::from_reader(std::io::BufReader::new(file))
                .with_context(|| format!("cannot parse schedule {}", p.display()))?
        }
        None => AlphaSchedule::uniform(layers, args.alpha),
    };
    if schedule.len() != layers {
        bail!(crate::Error::ScheduleLength {
            expected: layers,
            actual: schedule.len()
        });
    }
    Ok(schedule)
}

fn checksum(outputs: &[DenseVector]) -> String {
    let mut h = Sha256::new();
    for y in outputs {
        for v in y.as_slice() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn cmd_gen(a: GenArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let mode = match a.mode {
        GenModeArg::IidGaussian => {
            if a.gate_row_shift.is_some() || a.input_mean.is_some() {
                bail!("--gate-row-shift and --input-mean only apply to --mode sparsity_biased");
            }
            GenMode::IidGaussian
        }
        GenModeArg::SparsityBiased => GenMode::SparsityBiased {
            gate_row_shift: a.gate_row_shift.unwrap_or(DEFAULT_GATE_ROW_SHIFT),
            input_mean: a.input_mean.unwrap_or(DEFAULT_INPUT_MEAN),
        },
    };
    let spec = GenSpec {
        layers: a.layers,
        d: a.d,
        k: a.k,
        seed: a.seed,
        mode,
        theta: a.theta,
    };
    let model = gen_synthetic(&spec)?;
    write_model(&a.output, &model).with_context(|| format!("cannot write {}", a.output.display()))?;
    writeln!(out, "wrote {} ({} layers, d={}, k={})", a.output.display(), a.layers, a.d, a.k)?;
    if let Some(p) = &a.signpack {
        write_signpack(p, &SignPackFile::from_model(&model)).with_context(|| format!("cannot write {}", p.display()))?;
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(())
}

fn cmd_pack(a: PackArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let model = read_model(&a.model).with_context(|| format!("cannot load model {}", a.model.display()))?;
    write_signpack(&a.output, &SignPackFile::from_model(&model))
        .with_context(|| format!("cannot write {}", a.output.display()))?;
    writeln!(out, "wrote {}", a.output.display())?;
    Ok(())
}

fn cmd_run(a: RunArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let inputs = load_inputs(&a.inputs, &model, 1)?;
    let schedule = load_schedule(&a.alpha, model.layer_count())?;
    let mode = match a.mode {
        RunMode::Dense => ForwardMode::Dense,
        RunMode::Sparse => ForwardMode::Sparse(&schedule),
    };
    let layers = model.layer_count();
    let mut sums = vec![[0.0f64; 3]; layers];
    let mut outputs = Vec::with_capacity(inputs.len());
    for x in &inputs {
        let (y, traces) = stack_forward(&model, x, mode, TraceLevel::Off)?;
        for (s, t) in sums.iter_mut().zip(&traces) {
            s[0] += t.predicted.skip_ratio();
            s[1] += t.h1_actual_zero.skip_ratio();
            s[2] += t.h3_zero.skip_ratio();
        }
        outputs.push(y);
    }
    let n = inputs.len() as f64;
    with_sink(a.output.as_deref(), out, |w| {
        writeln!(w, "layer,predicted_skip,h1_zero,h3_zero")?;
        for (l, s) in sums.iter().enumerate() {
            writeln!(w, "{l},{:.6},{:.6},{:.6}", s[0] / n, s[1] / n, s[2] / n)?;
        }
        writeln!(w, "checksum,{}", checksum(&outputs))?;
        Ok(())
    })
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let inputs = load_inputs(&a.inputs, &model, 16)?;
    let schedule = load_schedule(&a.alpha, model.layer_count())?;
    let mut scores = vec![PredictorScore::default(); model.layer_count()];
    for x in &inputs {
        let (_, traces) = stack_forward(&model, x, ForwardMode::Sparse(&schedule), TraceLevel::Truth)?;
        for (s, t) in scores.iter_mut().zip(&traces) {
            let truth = t.truth.as_ref().expect("traced run records truth");
            s.merge(&score_predictor(&t.predicted, truth)?);
        }
    }
    with_sink(a.output.as_deref(), out, |w| {
        writeln!(
            w,
            "layer,alpha_x100,true_positive,false_positive,false_negative,true_negative,precision,recall,predicted_sparsity,true_sparsity"
        )?;
        for (l, s) in scores.iter().enumerate() {
            let total = s.total() as f64;
            writeln!(
                w,
                "{l},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
                schedule.per_layer[l].value(),
                s.true_positive,
                s.false_positive,
                s.false_negative,
                s.true_negative,
                s.precision(),
                s.recall(),
                (s.true_positive + s.false_positive) as f64 / total,
                (s.true_positive + s.false_negative) as f64 / total,
            )?;
        }
        Ok(())
    })
}

fn grid_or_default(grid: Option<Vec<AlphaX100>>) -> Vec<AlphaX100> {
    grid.unwrap_or_else(|| DEFAULT_GRID.to_vec())
}

fn cmd_sweep(a: SweepArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let inputs = load_inputs(&a.inputs, &model, 16)?;
    let table = sweep_alpha(&model, &inputs, &grid_or_default(a.grid))?;
    with_sink(a.output.as_deref(), out, |w| Ok(table.write_csv(w)?))
}

fn cmd_calibrate(a: CalibrateArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let inputs = load_inputs(&a.inputs, &model, 16)?;
    let mut grid = grid_or_default(a.grid);
    grid.sort_unstable();
    let table = sweep_alpha(&model, &inputs, &grid)?;
    let early = a.early_layers.unwrap_or(model.layer_count() / 2);
    let schedule = select_alpha(&table, a.target, early)?;
    with_sink(a.output.as_deref(), out, |w| {
        serde_json::to_writer_pretty(&mut *w, &schedule)?;
        writeln!(w)?;
        Ok(())
    })
}

#[derive(Serialize)]
struct BenchReport {
    d: usize,
    k: usize,
    layers: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    opcounts: Option<OpcountSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timing: Option<TimingSection>,
}

#[derive(Serialize)]
struct OpcountSection {
    sparsity: f64,
    rank: u64,
    predictor_word_ops: u64,
    dense_mlp_macs: u64,
    sparse_mlp_macs: u64,
    comparator_predictor_macs: u64,
    signpack_memory_bytes: u64,
    signpack_memory_mib: f64,
    comparator_memory_bytes: u64,
    comparator_memory_mib: f64,
    memory_ratio: f64,
}

#[derive(Serialize)]
struct TimingSection {
    machine: MachineInfo,
    #[serde(flatten)]
    gemv: crate::bench::GemvTiming,
}

fn cmd_bench(a: BenchArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    if a.d == 0 || a.k == 0 || a.layers == 0 {
        bail!("--d, --k and --layers must be positive");
    }
    let want_ops = matches!(a.report, Report::Opcounts | Report::All);
    let want_timing = a.timing || matches!(a.report, Report::Timing | Report::All);

    let opcounts = if want_ops {
        let ops = op_counts(a.d as u64, a.k as u64, a.sparsity, a.rank)?;
        let sp = signpack_memory(a.d as u64, a.k as u64, a.layers);
        let cmp = comparator_memory(a.d as u64, a.k as u64, a.rank, a.layers, a.comparator_bytes);
        Some(OpcountSection {
            sparsity: a.sparsity,
            rank: a.rank,
            predictor_word_ops: ops.predictor_word_ops,
            dense_mlp_macs: ops.dense_mlp_macs,
            sparse_mlp_macs: ops.sparse_mlp_macs,
            comparator_predictor_macs: ops.comparator_predictor_macs,
            signpack_memory_bytes: sp.bytes,
            signpack_memory_mib: sp.mib(),
            comparator_memory_bytes: cmp.bytes,
            comparator_memory_mib: cmp.mib(),
            memory_ratio: cmp.bytes as f64 / sp.bytes as f64,
        })
    } else {
        None
    };

    let timing = if want_timing {
        let seed = a.seed.ok_or_else(|| anyhow!("--seed is required for timing"))?;
        let cfg = TimingConfig {
            warmup: a.warmup,
            repeats: a.repeats,
        };
        Some(TimingSection {
            machine: MachineInfo::detect(),
            gemv: time_gemv(a.d, a.k, a.skip_ratio, seed, cfg)?,
        })
    } else {
        None
    };

    let report = BenchReport {
        d: a.d,
        k: a.k,
        layers: a.layers,
        opcounts,
        timing,
    };
    with_sink(a.output.as_deref(), out, |w| {
        match a.format {
            Format::Json => {
                serde_json::to_writer_pretty(&mut *w, &report)?;
                writeln!(w)?;
            }
            Format::Text => write_bench_text(w, &report)?,
        }
        Ok(())
    })
}

fn write_bench_text(w: &mut dyn Write, r: &BenchReport) -> std::io::Result<()> {
    writeln!(w, "d {}", r.d)?;
    writeln!(w, "k {}", r.k)?;
    writeln!(w, "layers {}", r.layers)?;
    if let Some(o) = &r.opcounts {
        writeln!(w, "sparsity {}", o.sparsity)?;
        writeln!(w, "rank {}", o.rank)?;
        writeln!(w, "predictor_word_ops {}", o.predictor_word_ops)?;
        writeln!(w, "dense_mlp_macs {}", o.dense_mlp_macs)?;
        writeln!(w, "sparse_mlp_macs {}", o.sparse_mlp_macs)?;
        writeln!(w, "comparator_predictor_macs {}", o.comparator_predictor_macs)?;
        writeln!(w, "signpack_memory_bytes {}", o.signpack_memory_bytes)?;
        writeln!(w, "signpack_memory_mib {:.1}", o.signpack_memory_mib)?;
        writeln!(w, "comparator_memory_bytes {}", o.comparator_memory_bytes)?;
        writeln!(w, "comparator_memory_mib {:.1}", o.comparator_memory_mib)?;
        writeln!(w, "memory_ratio {:.3}", o.memory_ratio)?;
    }
    if let Some(t) = &r.timing {
        let m = &t.machine;
        writeln!(w, "machine {} {} {} ({} logical cores)", m.cpu, m.arch, m.os, m.logical_cores)?;
        writeln!(w, "skip_ratio {}", t.gemv.skip_ratio)?;
        writeln!(w, "warmup {}", t.gemv.warmup)?;
        writeln!(w, "repeats {}", t.gemv.repeats)?;
        writeln!(w, "dense_median_us {:.1}", t.gemv.dense_median_us)?;
        writeln!(w, "sparse_median_us {:.1}", t.gemv.sparse_median_us)?;
        writeln!(w, "time_ratio {:.4}", t.gemv.time_ratio)?;
    }
    Ok(())
}
