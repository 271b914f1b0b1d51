//! Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Tolerances below are fixed; do not loosen them to make a run pass.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{
    iwdft_oracle, max_abs_diff, naive_dft, random_matrix, random_signal, removed_part, rng,
    synthesize,
};
use faedkv::ablation::retained_count;
use faedkv::harness::bench::{BenchSetup, Phase};
use faedkv::harness::cli::main_with_args;
use faedkv::harness::{compare, generate, needle, RunConfig, EXIT_OK};
use faedkv::model::{HeadCache, ModelConfig, ToyModel};
use faedkv::spectral::{dft_forward, idft_full, spectral_energy};
use faedkv::{
    greedy_select, CacheGeometry, CompressedKv, ImportanceTable, IwdftState, KeptBins,
    NormalizationMode,
};
use num_complex::Complex64;
use rand::Rng;

const DFT_ABS_TOL: f64 = 1e-12;
const ROUND_TRIP_TOL: f64 = 1e-10;
const PARSEVAL_REL_TOL: f64 = 1e-8;
const IWDFT_TOL: f64 = 1e-9;
const BOUND_SLACK: f64 = 1e-9;
const HANDOFF_TOL: f64 = 1e-8;
const LOGIT_TOL: f64 = 1e-5;
const TOP2_GAP: f64 = 1e-3;
const LINEARITY_TOL: f64 = 1e-10;
const NEEDLE_SPREAD: f64 = 0.15;
const DOUBLING_RANGE: (f64, f64) = (1.4, 2.6);

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_budget(elapsed: Duration, budget_s: f64, detail: String) -> Outcome {
    let s = elapsed.as_secs_f64();
    check(
        s < budget_s,
        format!("{detail}; {s:.2}s of {budget_s}s budget"),
    )
}

fn spectral_suite() -> Outcome {
    let start = Instant::now();
    let mut r = rng(0xACC1);
    let primes = [2, 3, 5, 7, 11, 13, 31, 97, 127, 251, 257, 401, 509];
    let lengths: Vec<usize> = primes
        .iter()
        .copied()
        .chain([1, 512])
        .chain((0..185).map(|_| r.random_range(1..=512)))
        .collect();
    let (mut dft_err, mut rt_err, mut parseval_err) = (0.0f64, 0.0f64, 0.0f64);
    for &n in &lengths {
        let x = random_signal(&mut r, n);
        let s = dft_forward(&x).map_err(|e| e.to_string())?;
        let naive = naive_dft(&x);
        for (a, b) in s.bins().iter().zip(&naive) {
            dft_err = dft_err.max((a - b).norm());
        }
        rt_err = rt_err.max(max_abs_diff(&idft_full(&s), &x));
        let t = n as f64 * x.iter().map(|v| v * v).sum::<f64>();
        parseval_err = parseval_err.max((spectral_energy(&s) - t).abs() / t);
    }
    let ok = lengths.len() == 200
        && dft_err < DFT_ABS_TOL
        && rt_err < ROUND_TRIP_TOL
        && parseval_err < PARSEVAL_REL_TOL;
    let detail = format!(
        "{} signals, dft err {dft_err:.2e}, round trip {rt_err:.2e}, parseval rel {parseval_err:.2e}",
        lengths.len()
    );
    if !ok {
        return Err(detail);
    }
    within_budget(start.elapsed(), 10.0, detail)
}

fn iwdft_equivalence() -> Outcome {
    let start = Instant::now();
    let checkpoints = |m: usize| -> Vec<usize> {
        let mut c = vec![1, m - 1, m, m + 1, 2 * m + 3, 1000, 2049, 4096];
        c.sort_unstable();
        c.dedup();
        c.retain(|&t| t >= 1);
        c
    };
    let mut worst = 0.0f64;
    let mut bound_ok = true;
    let mut runs = 0;
    for m in [8usize, 44, 128] {
        for mode in [NormalizationMode::Exact, NormalizationMode::PaperApprox] {
            for seed in 0..50u64 {
                let mut r = rng(seed * 1000 + m as u64);
                let x = random_signal(&mut r, 4096);
                let mut s =
                    IwdftState::zeros(m, (0..m).collect(), 1, mode).map_err(|e| e.to_string())?;
                let marks = checkpoints(m);
                let mut next = 0;
                let mut max_x = 0.0f64;
                for (i, &v) in x.iter().enumerate() {
                    s.update_scalar(v).map_err(|e| e.to_string())?;
                    max_x = max_x.max(v.abs());
                    if mode == NormalizationMode::Exact {
                        bound_ok &= s.max_magnitude() <= max_x * (1.0 + BOUND_SLACK);
                    }
                    if next < marks.len() && i + 1 == marks[next] {
                        next += 1;
                        for k in 0..m {
                            let gap =
                                (s.coefficient(k, 0) - iwdft_oracle(&x[..=i], m, k, mode)).norm();
                            worst = worst.max(gap);
                        }
                    }
                }
                runs += 1;
            }
        }
    }
    let detail = format!("{runs} runs, max gap {worst:.2e}, exact bound held: {bound_ok}");
    if !(worst < IWDFT_TOL && bound_ok) {
        return Err(detail);
    }
    within_budget(start.elapsed(), 60.0, detail)
}

fn prefill_handoff() -> Outcome {
    let start = Instant::now();
    let config = ModelConfig {
        layers: 2,
        heads: 2,
        d_model: 32,
        vocab: 64,
        max_context: 1024,
        ffn_hidden: 0,
    };
    let model = ToyModel::random(config, 3).map_err(|e| e.to_string())?;
    let g = CacheGeometry::new(10, 50).with_headroom(0);
    let m = 100;
    let n = g.sink + g.recent + m;
    let mut r = rng(33);
    let tokens: Vec<u32> = (0..n + m).map(|_| r.random_range(0..64)).collect();
    let mut state = model.new_state();
    for &t in &tokens {
        model
            .decode_step(&mut state, t)
            .map_err(|e| e.to_string())?;
    }
    let mut worst = 0.0f64;
    let mut channels = 0;
    for l in 0..2 {
        for h in 0..2 {
            let HeadCache::Full(full) = state.head(l, h) else {
                return Err("expected a full cache".into());
            };
            let (keys, values) = (full.keys(), full.values());
            let head = |mat: &faedkv::Matrix, rows: std::ops::Range<usize>| {
                faedkv::Matrix::from_rows(
                    &rows.map(|i| mat.row(i).to_vec()).collect::<Vec<_>>(),
                    mat.cols(),
                )
                .unwrap()
            };
            let kept = KeptBins::new(m, (0..m).collect()).map_err(|e| e.to_string())?;
            let mut c = CompressedKv::prefill_compress(
                &head(&keys, 0..n),
                &head(&values, 0..n),
                &kept,
                g,
                NormalizationMode::Exact,
            )
            .map_err(|e| e.to_string())?;
            for i in n..n + m {
                c.append_token(keys.row(i), values.row(i))
                    .map_err(|e| e.to_string())?;
            }
            let (k_rec, v_rec) = c.reconstruct();
            for (orig, rec) in [(&keys, &k_rec), (&values, &v_rec)] {
                channels = orig.cols();
                for ch in 0..orig.cols() {
                    // folded order: prompt middle, prompt recent window, first M−R new tokens
                    let stream: Vec<f64> = (g.sink..n + m - g.recent)
                        .map(|i| orig.get(i, ch))
                        .collect();
                    if stream.len() != 2 * m {
                        return Err(format!("stream length {}", stream.len()));
                    }
                    let bins: Vec<(usize, Complex64)> = (0..m)
                        .map(|k| (k, iwdft_oracle(&stream, m, k, NormalizationMode::Exact)))
                        .collect();
                    let expected = synthesize(&bins, m, 2 * m as u64);
                    worst = worst.max(max_abs_diff(&rec.column(ch), &expected));
                }
            }
        }
    }
    let detail = format!("4 heads × {channels} channels × K,V, max err {worst:.2e}");
    if worst >= HANDOFF_TOL {
        return Err(detail);
    }
    within_budget(start.elapsed(), 30.0, detail)
}

fn end_to_end_fidelity() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for mode in [NormalizationMode::PaperApprox, NormalizationMode::Exact] {
        let cfg = RunConfig {
            prompt_len: 256,
            sink: 10,
            recent: 50,
            ratio: 1.0,
            steps: Some(20),
            mode,
            ..RunConfig::default()
        };
        let model = cfg.load_model().map_err(|e| e.to_string())?;
        let prompt = cfg.load_prompt(&model).map_err(|e| e.to_string())?;
        let rep = generate::compute(&cfg, &model, &prompt).map_err(|e| e.to_string())?;
        let logits_ok =
            rep.step_max_abs_logit_delta.len() == 20 && rep.max_abs_logit_delta < LOGIT_TOL;
        let mut choices_ok = true;
        for i in 0..rep.generated.len() {
            if rep.generated[i] != rep.reference[i] {
                choices_ok = rep.reference_top2_gap[i] <= TOP2_GAP;
                break;
            }
        }
        ok &= logits_ok && choices_ok;
        lines.push(format!(
            "{}: max logit delta {:.2e}, tokens identical {}",
            rep.mode, rep.max_abs_logit_delta, rep.identical
        ));
    }
    check(ok, lines.join("; "))
}

fn pruning_linearity() -> Outcome {
    let mut r = rng(55);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for _ in 0..40 {
        let g = CacheGeometry::new(r.random_range(0..12), r.random_range(0..60));
        let m = r.random_range(1..300);
        let d = r.random_range(1..9);
        let keys = random_matrix(&mut r, g.sink + g.recent + m, d);
        let values = random_matrix(&mut r, g.sink + g.recent + m, d);
        let p = r.random_range(0.0..1.0);
        let kept: Vec<usize> = (0..m).filter(|_| r.random_bool(p)).collect();
        let bins = KeptBins::new(m, kept.clone()).map_err(|e| e.to_string())?;
        let c = CompressedKv::prefill_compress(
            &keys,
            &values,
            &bins,
            g,
            NormalizationMode::PaperApprox,
        )
        .map_err(|e| e.to_string())?;
        let (k_rec, v_rec) = c.reconstruct();
        for (orig, rec) in [(&keys, &k_rec), (&values, &v_rec)] {
            for ch in 0..d {
                let col: Vec<f64> = (g.sink..g.sink + m).map(|i| orig.get(i, ch)).collect();
                let err: Vec<f64> = col.iter().zip(rec.column(ch)).map(|(a, b)| a - b).collect();
                worst = worst.max(max_abs_diff(&err, &removed_part(&col, &kept)));
            }
        }
        cases += 1;
    }
    let mut cfg = RunConfig {
        prompt_len: 200,
        ..RunConfig::default()
    };
    let mut report_worst = 0.0f64;
    for ratio in [0.094, 0.25, 0.5] {
        cfg.ratio = ratio;
        let report = compare::compute(&cfg).map_err(|e| e.to_string())?;
        report_worst = report_worst.max(report.summary.max_oracle_discrepancy);
    }
    check(
        worst < LINEARITY_TOL && report_worst < LINEARITY_TOL,
        format!("{cases} random masks, max gap {worst:.2e}; compare report discrepancy {report_worst:.2e}"),
    )
}

fn position_uniformity() -> Outcome {
    let cfg = RunConfig {
        ratio: 0.5,
        lengths: Some(vec![2048]),
        reps: Some(50),
        ..RunConfig::default()
    };
    let out = needle::compute(&cfg).map_err(|e| e.to_string())?;
    let s = &out.summaries[0];
    let middle = out.compressed.len() - 2;
    check(
        s.middle_spread <= NEEDLE_SPREAD && s.protected_min == 1.0 && s.truncated_middle_max == 0.0,
        format!(
            "{middle} middle depths, spread {:.3} (min {:.3}), protected min {:.3}, truncated middle max {:.3}",
            s.middle_spread, s.middle_min, s.protected_min, s.truncated_middle_max
        ),
    )
}

fn memory_accounting() -> Outcome {
    let mut r = rng(77);
    let mut ratios_ok = true;
    for _ in 0..50 {
        let g = CacheGeometry::new(10, 50);
        let m = r.random_range(1..400);
        let keys = random_matrix(&mut r, m + 60, 4);
        let kept: Vec<usize> = (0..m).filter(|_| r.random_bool(0.3)).collect();
        let c = CompressedKv::prefill_compress(
            &keys,
            &keys,
            &KeptBins::new(m, kept.clone()).unwrap(),
            g,
            NormalizationMode::Exact,
        )
        .map_err(|e| e.to_string())?;
        let rep = c.memory_report();
        let uncompressed = 2 * (m + 60) * 4;
        let compressed = 2 * 60 * 4 + 2 * 2 * kept.len() * 4;
        ratios_ok &= rep.middle_ratio == 2.0 * kept.len() as f64 / m as f64
            && rep.uncompressed_reals == uncompressed
            && rep.compressed_reals == compressed
            && rep.ratio == compressed as f64 / uncompressed as f64;
    }
    let rows: Vec<Vec<f64>> = (0..3).map(|_| random_signal(&mut r, 22)).collect();
    let table = ImportanceTable::from_rows(&rows, 1.0).map_err(|e| e.to_string())?;
    let mut sizes = Vec::new();
    for ratio in [0.094, 0.125, 0.25] {
        let mask = greedy_select(&table, ratio).map_err(|e| e.to_string())?;
        let per_layer: Vec<usize> = (0..3).map(|l| mask.retained(l).len()).collect();
        if per_layer.iter().any(|&n| n != retained_count(ratio, 22)) {
            return Err(format!("r={ratio}: per-layer sizes {per_layer:?}"));
        }
        sizes.push(per_layer[0]);
    }
    check(
        ratios_ok && sizes == [2, 3, 6],
        format!("50 reports match closed form: {ratios_ok}; mask sizes {sizes:?}"),
    )
}

fn median_of(setup: &BenchSetup, phase: Phase) -> Result<f64, String> {
    setup
        .measure(phase, 5)
        .map(|(median, _)| median)
        .map_err(|e| e.to_string())
}

fn latency_shape() -> Outcome {
    let g = CacheGeometry::new(10, 50);
    let small = BenchSetup::new(2048, 128, 22, 3, 10, g, 1).map_err(|e| e.to_string())?;
    let large = BenchSetup::new(2048, 128, 22, 6, 10, g, 1).map_err(|e| e.to_string())?;
    let bins = (small.kept.len(), large.kept.len());
    let factor =
        median_of(&large, Phase::DecodeReconstruct)? / median_of(&small, Phase::DecodeReconstruct)?;
    let kept = retained_count(0.1, 22);
    let setup = BenchSetup::new(4096, 128, 22, kept, 10, g, 2).map_err(|e| e.to_string())?;
    let fused = median_of(&setup, Phase::DecodeStep)?;
    let full = median_of(&setup, Phase::FullAttend)?;
    check(
        (DOUBLING_RANGE.0..=DOUBLING_RANGE.1).contains(&factor) && fused < full,
        format!(
            "kept bins {} -> {}: per-step factor {factor:.2}; 4096 ctx r=0.1: compressed {:.0}µs vs full {:.0}µs",
            bins.0,
            bins.1,
            fused / 1e3,
            full / 1e3
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let code = main_with_args(std::iter::once("faedkv").chain(args.iter().copied()));
    if code == EXIT_OK {
        Ok(())
    } else {
        Err(format!("{args:?} exited with {code}"))
    }
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &runs {
        let ablate_dir = dir.path().join("ablate");
        let gen = dir.path().join("generate.json");
        run_cli(&[
            "ablate",
            "--prompt-len",
            "160",
            "--ratio",
            "0.25",
            "--seed",
            "9",
            "--out",
            ablate_dir.to_str().unwrap(),
        ])?;
        run_cli(&[
            "generate",
            "--prompt-len",
            "160",
            "--ratio",
            "0.25",
            "--seed",
            "9",
            "--out",
            gen.to_str().unwrap(),
        ])?;
    }
    let a = snapshot(&runs[0].path().join("ablate"));
    let b = snapshot(&runs[1].path().join("ablate"));
    let ga = fs::read(runs[0].path().join("generate.json")).unwrap();
    let gb = fs::read(runs[1].path().join("generate.json")).unwrap();
    check(
        a == b && ga == gb && !a.is_empty() && !ga.is_empty(),
        format!(
            "ablate: {} files identical {}; generate: {} bytes identical {}",
            a.len(),
            a == b,
            ga.len(),
            ga == gb
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("spectral oracle suite", spectral_suite),
        ("iwdft equivalence", iwdft_equivalence),
        ("prefill/decode handoff", prefill_handoff),
        ("end-to-end r=1 fidelity", end_to_end_fidelity),
        ("pruning linearity", pruning_linearity),
        ("position uniformity", position_uniformity),
        ("memory accounting", memory_accounting),
        ("latency shape", latency_shape),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{tag} [{}] {name}: {detail} ({:.2}s)",
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
