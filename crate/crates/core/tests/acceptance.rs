//! Acceptance suite. Runs every criterion in order and prints one
//! `[PASS]`/`[FAIL]`/`[REPORT]` line per criterion; exits non-zero on any failure.
//!
//! Set `SIGNSKIP_ASSERT_TIMING=1` to turn the wall-clock criterion into a hard check.

use std::process::ExitCode;
use std::time::Instant;

use rayon::prelude::*;

use signskip::bench::{forced_mask, time_gemv, MachineInfo, TimingConfig};
use signskip::calibration::sweep_alpha;
use signskip::cli::run_cli;
use signskip::metrics::{comparator_memory, l2_error, op_counts, score_predictor, signpack_memory};
use signskip::mlp::{mlp_forward_dense, mlp_forward_sparse, stack_forward, ForwardMode, TraceLevel};
use signskip::model_io::{gen_inputs, gen_synthetic, GaussianStream, GenMode, GenSpec};
use signskip::predictor::predict_skip_mask;
use signskip::signpack::{pack_signs_matrix, pack_signs_vector, SignPackedVector};
use signskip::sparse_linear::{accumulate_down_counted, sparse_gemv_rows_counted, MacCounter};
use signskip::{AlphaSchedule, AlphaX100, DenseMatrix, DenseVector, ALPHA_NEVER_SKIP_BY_MAJORITY};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Integer in `lo..=hi` from a seeded stream.
fn pick(rng: &mut GaussianStream, lo: usize, hi: usize) -> usize {
    lo + ((rng.uniform() * (hi - lo + 1) as f64) as usize).min(hi - lo)
}

// 1 ------------------------------------------------------------------------

fn dense_equivalence() -> Outcome {
    let mut rng = GaussianStream::new(0xACCE_0001);
    let specs: Vec<GenSpec> = (0..120u64)
        .map(|i| {
            let d = pick(&mut rng, 32, 512);
            let k = pick(&mut rng, 32, 512);
            let layers = pick(&mut rng, 1, 3);
            let mode = if i % 3 == 0 {
                GenMode::SparsityBiased {
                    gate_row_shift: 0.1 + rng.uniform() as f32 * 0.3,
                    input_mean: rng.uniform() as f32,
                }
            } else {
                GenMode::IidGaussian
            };
            GenSpec {
                layers,
                d,
                k,
                seed: 1000 + i * 7919,
                mode,
                theta: 0.0,
            }
        })
        .collect();

    let failures: Vec<String> = specs
        .par_iter()
        .filter_map(|spec| {
            let model = gen_synthetic(spec).unwrap();
            let sched = AlphaSchedule::uniform(spec.layers, ALPHA_NEVER_SKIP_BY_MAJORITY);
            for x in gen_inputs(spec, 3).unwrap() {
                let (dense, _) = stack_forward(&model, &x, ForwardMode::Dense, TraceLevel::Off).unwrap();
                let (sparse, _) = stack_forward(&model, &x, ForwardMode::Sparse(&sched), TraceLevel::Off).unwrap();
                if !sparse.bit_eq(&dense) {
                    return Some(format!("seed {} d={} k={}", spec.seed, spec.d, spec.k));
                }
            }
            None
        })
        .collect();
    ensure(failures.is_empty(), || format!("bit mismatch on {failures:?}"))?;
    Ok(format!("{} stacks x 3 inputs bit-equal to dense", specs.len()))
}

// 2 ------------------------------------------------------------------------

fn mask_monotonicity() -> Outcome {
    let grid = [90, 100, 101, 102, 103, 110].map(AlphaX100).into_iter().chain([ALPHA_NEVER_SKIP_BY_MAJORITY]).collect::<Vec<_>>();
    let mut rng = GaussianStream::new(0xACCE_0002);
    let mut checked = 0usize;
    for case in 0..60u64 {
        let d = pick(&mut rng, 16, 1100);
        let k = pick(&mut rng, 16, 600);
        let mode = if case % 2 == 0 {
            GenMode::IidGaussian
        } else {
            GenMode::SparsityBiased {
                gate_row_shift: 0.05,
                input_mean: 0.3,
            }
        };
        let spec = GenSpec {
            layers: 1,
            d,
            k,
            seed: 77 + case,
            mode,
            theta: 0.0,
        };
        let model = gen_synthetic(&spec).unwrap();
        let layer = &model.layers()[0];
        for x in gen_inputs(&spec, 4).unwrap() {
            let (_, dt) = mlp_forward_dense(layer, &x).unwrap();
            let truth = dt.truth.unwrap();
            let h3_dense = dt.vectors.unwrap().h3;
            let mut scratch = SignPackedVector::with_len(d);
            let mut prev: Option<(signskip::SkipMask, u64, f64)> = None;
            for &a in &grid {
                let (_, t) = mlp_forward_sparse(layer, &mut scratch, &x, a, TraceLevel::Full).unwrap();
                let fp = score_predictor(&t.predicted, &truth).unwrap().false_positive;
                let err = l2_error(&t.vectors.unwrap().h3, &h3_dense).unwrap();
                if let Some((pm, pfp, perr)) = &prev {
                    ensure(t.predicted.is_subset_of(pm), || format!("skip set grew at alpha {a} (d={d}, k={k})"))?;
                    ensure(fp <= *pfp, || format!("false positives grew at alpha {a}: {pfp} -> {fp}"))?;
                    ensure(err <= *perr, || format!("h3 error grew at alpha {a}: {perr} -> {err}"))?;
                }
                prev = Some((t.predicted, fp, err));
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} (layer, input, alpha) cells nested; FP and h3 error non-increasing"))
}

// 3 ------------------------------------------------------------------------

/// Unpacked reference: per element raw sign-bit comparison, scalar threshold.
fn scalar_skip(row: &[f32], x: &[f32], alpha: AlphaX100) -> bool {
    let neg = row.iter().zip(x).filter(|(w, v)| w.is_sign_negative() != v.is_sign_negative()).count() as u128;
    let pos = row.len() as u128 - neg;
    u128::from(alpha.value()) * pos < 100 * neg
}

fn predictor_oracle() -> Outcome {
    let dims = [31usize, 32, 33, 63, 65, 1, 2, 64, 96, 127, 129, 200];
    let rows_per_batch = 500;
    let batches_per_dim = 170;
    let alphas = [0u32, 50, 90, 99, 100, 101, 103, 110, 200, u32::MAX];

    let total: usize = dims
        .par_iter()
        .map(|&d| -> Result<usize, String> {
            let mut rng = GaussianStream::new(0xACCE_0003 ^ d as u64);
            let mut rows = 0;
            for b in 0..batches_per_dim {
                let sample = |rng: &mut GaussianStream| -> f32 {
                    let u = rng.uniform();
                    if u < 0.03 {
                        0.0
                    } else if u < 0.06 {
                        -0.0
                    } else {
                        rng.next_normal() as f32
                    }
                };
                let data: Vec<f32> = (0..rows_per_batch * d).map(|_| sample(&mut rng)).collect();
                let x: Vec<f32> = (0..d).map(|_| sample(&mut rng)).collect();
                let w = DenseMatrix::new(rows_per_batch, d, data).unwrap();
                let xv = DenseVector::new(x.clone()).unwrap();
                let alpha = AlphaX100(alphas[b % alphas.len()]);
                let mask = predict_skip_mask(&pack_signs_matrix(&w), &pack_signs_vector(&xv), alpha).unwrap();
                for i in 0..rows_per_batch {
                    ensure(mask.is_skipped(i) == scalar_skip(w.row(i), &x, alpha), || {
                        format!("d={d} batch {b} row {i} alpha {alpha}")
                    })?;
                }
                rows += rows_per_batch;
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .sum();
    ensure(total >= 1_000_000, || format!("only {total} rows checked"))?;
    Ok(format!("{total} rows over d in {dims:?} match the scalar reference"))
}

// 4 ------------------------------------------------------------------------

/// `published` mantissa agrees with `value` to four significant figures, rounded or truncated.
fn sci4_matches(value: u64, published: f64, exp: i32) -> bool {
    let mantissa = value as f64 / 10f64.powi(exp);
    (mantissa - published).abs() <= 0.001 + 1e-12
}

fn operation_counts() -> Outcome {
    let r = op_counts(5120, 13824, 0.92, 1024).map_err(|e| e.to_string())?;
    ensure(r.predictor_word_ops == 2_211_840, || format!("predictor {}", r.predictor_word_ops))?;
    ensure(r.dense_mlp_macs == 212_336_640, || format!("dense {}", r.dense_mlp_macs))?;
    ensure(r.comparator_predictor_macs == 19_398_656, || format!("comparator {}", r.comparator_predictor_macs))?;
    ensure(r.sparse_mlp_macs == 16_986_931, || format!("sparse {}", r.sparse_mlp_macs))?;
    ensure(sci4_matches(r.predictor_word_ops, 2.211, 6), || "predictor vs 2.211e6".into())?;
    ensure(sci4_matches(r.dense_mlp_macs, 2.123, 8), || "dense vs 2.123e8".into())?;
    ensure(sci4_matches(r.comparator_predictor_macs, 1.940, 7), || "comparator vs 1.940e7".into())?;
    ensure(sci4_matches(r.sparse_mlp_macs, 1.699, 7), || "sparse vs 1.699e7".into())?;
    Ok(format!(
        "predictor {} dense {} comparator {} sparse {}",
        r.predictor_word_ops, r.dense_mlp_macs, r.comparator_predictor_macs, r.sparse_mlp_macs
    ))
}

// 5 ------------------------------------------------------------------------

fn memory_numbers() -> Outcome {
    let s = signpack_memory(5120, 13824, 40);
    let c = comparator_memory(5120, 13824, 1024, 40, 2);
    ensure(s.bytes == 353_894_400, || format!("signpack bytes {}", s.bytes))?;
    ensure(s.mib() == 337.5, || format!("signpack MiB {}", s.mib()))?;
    ensure(c.bytes == 1_551_892_480, || format!("comparator bytes {}", c.bytes))?;
    ensure(c.mib() == 1480.0, || format!("comparator MiB {}", c.mib()))?;
    let ratio = c.bytes as f64 / s.bytes as f64;
    ensure((4.38..=4.39).contains(&ratio), || format!("ratio {ratio}"))?;
    Ok(format!("{} B = {} MiB vs {} B = {} MiB, ratio {ratio:.4}", s.bytes, s.mib(), c.bytes, c.mib()))
}

// 6 ------------------------------------------------------------------------

fn iid_agreement() -> Outcome {
    let d = 4096;
    let rows_per_batch = 1000;
    let batches = 24;
    let expected = 0.5 + (2.0 / std::f64::consts::PI).asin() / std::f64::consts::PI;

    // (engine agreements, f64 scalar agreements) per batch
    let counts: Vec<(usize, usize)> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = GaussianStream::new(0xACCE_0006 + b as u64);
            let data: Vec<f32> = (0..rows_per_batch * d).map(|_| rng.next_normal() as f32).collect();
            let x: Vec<f32> = (0..d).map(|_| rng.next_normal() as f32).collect();
            let w = DenseMatrix::new(rows_per_batch, d, data).unwrap();
            let xv = DenseVector::new(x.clone()).unwrap();
            let mask = predict_skip_mask(&pack_signs_matrix(&w), &pack_signs_vector(&xv), AlphaX100::ONE).unwrap();
            let mut engine = 0;
            let mut oracle = 0;
            for i in 0..rows_per_batch {
                let row = w.row(i);
                let dot: f64 = row.iter().zip(&x).map(|(a, v)| f64::from(*a) * f64::from(*v)).sum();
                let negative = dot <= 0.0;
                if mask.is_skipped(i) == negative {
                    engine += 1;
                }
                let pos = row.iter().zip(&x).filter(|(a, v)| f64::from(**a) * f64::from(**v) > 0.0).count();
                let neg = row.iter().zip(&x).filter(|(a, v)| f64::from(**a) * f64::from(**v) < 0.0).count();
                if (pos < neg) == negative {
                    oracle += 1;
                }
            }
            (engine, oracle)
        })
        .collect();
    let n = (rows_per_batch * batches) as f64;
    let engine = counts.iter().map(|c| c.0).sum::<usize>() as f64 / n;
    let oracle = counts.iter().map(|c| c.1).sum::<usize>() as f64 / n;
    ensure((engine - 0.720).abs() <= 0.010, || format!("agreement {engine:.4} outside 0.720 +/- 0.010"))?;
    ensure((oracle - expected).abs() <= 0.010, || format!("monte-carlo oracle {oracle:.4} vs analytic {expected:.4}"))?;
    Ok(format!("{n} rows: agreement {engine:.4} (oracle {oracle:.4}, analytic {expected:.4})"))
}

// 7 ------------------------------------------------------------------------

fn work_skipping() -> Outcome {
    let (k, d) = (1000usize, 300usize);
    let mut rng = GaussianStream::new(0xACCE_0007);
    let w = DenseMatrix::new(k, d, (0..k * d).map(|_| rng.next_normal() as f32).collect()).unwrap();
    let x = DenseVector::new((0..d).map(|_| rng.next_normal() as f32).collect()).unwrap();
    let h = DenseVector::new((0..k).map(|_| rng.next_normal() as f32).collect()).unwrap();
    let counter = MacCounter::new();
    for s in [0.0, 0.1, 0.25, 0.5, 0.9, 0.99, 1.0] {
        let mask = forced_mask(k, s, 11).unwrap();
        let expected = ((1.0 - s) * (k * d) as f64).round() as u64;
        counter.reset();
        sparse_gemv_rows_counted(&w, &x, &mask, Some(&counter)).unwrap();
        ensure(counter.get() == expected, || format!("gemv s={s}: {} MACs, expected {expected}", counter.get()))?;
        counter.reset();
        accumulate_down_counted(&w, &h, &mask, Some(&counter)).unwrap();
        ensure(counter.get() == expected, || format!("down s={s}: {} MACs, expected {expected}", counter.get()))?;
    }
    Ok(format!("MACs == (1-s)*k*d for k={k}, d={d} at 7 skip ratios"))
}

// 8 ------------------------------------------------------------------------

fn desk_speedup() -> (bool, String) {
    let cfg = TimingConfig { warmup: 2, repeats: 7 };
    let t = time_gemv(5120, 13824, 0.9, 0xACCE_0008, cfg).expect("timing run");
    let m = MachineInfo::detect();
    let ok = t.time_ratio <= 0.5;
    (
        ok,
        format!(
            "sparse/dense = {:.3} (dense {:.0} us, sparse {:.0} us, median of {}) on {} ({} cores)",
            t.time_ratio, t.dense_median_us, t.sparse_median_us, cfg.repeats, m.cpu, m.logical_cores
        ),
    )
}

// 9 ------------------------------------------------------------------------

fn sweep_direction() -> Outcome {
    let spec = GenSpec {
        layers: 4,
        d: 1024,
        k: 2048,
        seed: 2024,
        mode: GenMode::SparsityBiased {
            gate_row_shift: 0.2,
            input_mean: 0.5,
        },
        theta: 0.0,
    };
    let model = gen_synthetic(&spec).unwrap();
    let inputs = gen_inputs(&spec, 16).unwrap();
    let grid = [100, 101, 102, 103].map(AlphaX100);
    let table = sweep_alpha(&model, &inputs, &grid).map_err(|e| e.to_string())?;
    let means = table.mean_h3_error_by_alpha();
    ensure(means.windows(2).all(|w| w[1] < w[0]), || format!("mean h3 error not strictly decreasing: {means:?}"))?;
    let shown: Vec<String> = means.iter().map(|m| format!("{m:.2}")).collect();
    Ok(format!("mean h3 error over alpha 1.00..1.03: {}", shown.join(" > ")))
}

// 10 -----------------------------------------------------------------------

fn cli(args: &[&str]) -> Result<String, String> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_cli(std::iter::once("signskip").chain(args.iter().copied()), &mut out, &mut err);
    if code != 0 {
        return Err(format!("{args:?} exited {code}: {}", String::from_utf8_lossy(&err)));
    }
    Ok(String::from_utf8(out).unwrap())
}

fn checksum_of(output: &str) -> String {
    output.lines().find_map(|l| l.strip_prefix("checksum,")).unwrap_or_default().to_string()
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let model = dir.path().join("m.spmf");
    let model = model.to_str().unwrap();
    cli(&["gen", "--layers", "4", "--d", "256", "--k", "1024", "--mode", "sparsity_biased", "--seed", "7", "-o", model])?;

    let mut runs = 0;
    for (mode, alpha) in [("sparse", "1.00"), ("sparse", "1.03"), ("sparse", "inf"), ("dense", "1.00")] {
        let mut sums = Vec::new();
        for threads in ["1", "2", "4", "8"] {
            let out = cli(&[
                "--threads", threads, "run", "--model", model, "--mode", mode, "--alpha", alpha, "--seed", "7",
                "--count", "4", "--input-mean", "0.5",
            ])?;
            sums.push(checksum_of(&out));
            runs += 1;
        }
        ensure(!sums[0].is_empty() && sums.iter().all(|s| s == &sums[0]), || {
            format!("{mode} alpha {alpha}: checksums differ across threads {sums:?}")
        })?;
    }
    let dense = checksum_of(&cli(&["run", "--model", model, "--mode", "dense", "--seed", "7", "--count", "4", "--input-mean", "0.5"])?);
    let never = checksum_of(&cli(&[
        "run", "--model", model, "--mode", "sparse", "--alpha", "inf", "--seed", "7", "--count", "4", "--input-mean", "0.5",
    ])?);
    ensure(dense == never, || "dense and alpha=inf checksums differ".into())?;

    let sweep = |threads: &str| {
        cli(&["--threads", threads, "sweep-alpha", "--model", model, "--seed", "3", "--count", "4"])
    };
    ensure(sweep("1")? == sweep("6")?, || "sweep-alpha CSV differs across threads".into())?;
    Ok(format!("{runs} runs across 1/2/4/8 threads agree; dense == alpha=inf; sweep CSV stable"))
}

fn main() -> ExitCode {
    let assert_timing = std::env::var("SIGNSKIP_ASSERT_TIMING").is_ok_and(|v| v == "1");
    let criteria: Vec<Criterion> = vec![
        ("1 dense equivalence at alpha=inf", dense_equivalence),
        ("2 mask monotonicity in alpha", mask_monotonicity),
        ("3 packed predictor == scalar reference", predictor_oracle),
        ("4 operation counts", operation_counts),
        ("5 sign-pack memory footprint", memory_numbers),
        ("6 iid sign agreement rate", iid_agreement),
        ("7 work skipping (MAC counts)", work_skipping),
    ];
    let mut failed = 0;
    let report = |name: &str, outcome: Outcome, started: Instant| -> bool {
        match outcome {
            Ok(msg) => {
                println!("[PASS] criterion {name}: {msg} ({:.1}s)", started.elapsed().as_secs_f64());
                true
            }
            Err(msg) => {
                println!("[FAIL] criterion {name}: {msg}");
                false
            }
        }
    };
    for (name, f) in criteria {
        let t = Instant::now();
        if !report(name, f(), t) {
            failed += 1;
        }
    }

    let t = Instant::now();
    let (ok, msg) = desk_speedup();
    match (ok, assert_timing) {
        (true, _) => println!("[PASS] criterion 8 desk-scale GEMV speedup: {msg} ({:.1}s)", t.elapsed().as_secs_f64()),
        (false, true) => {
            failed += 1;
            println!("[FAIL] criterion 8 desk-scale GEMV speedup: {msg}");
        }
        (false, false) => println!("[REPORT] criterion 8 desk-scale GEMV speedup (not asserted): {msg}"),
    }

    let later: Vec<Criterion> = vec![
        ("9 sweep h3 error decreases 1.00 -> 1.03", sweep_direction),
        ("10 CLI reproducibility across threads", reproducibility),
    ];
    for (name, f) in later {
        let t = Instant::now();
        if !report(name, f(), t) {
            failed += 1;
        }
    }

    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
