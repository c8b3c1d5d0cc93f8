//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line (visible with `--nocapture`).
//!
//! Criteria 4-6 share one pair of desk-scale training runs (uncorrelation
//! on vs. off), executed once and reused. Tests serialize on a global lock
//! so wall-clock budgets and benchmark timings are honest.
//!
//! Run with:
//!   cargo test -p ufse --test acceptance -- --nocapture --test-threads=1

use std::path::Path;
use std::process::{Command, Output};
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use ufse::bench::bench_alignment;
use ufse::synth::{synth_dataset, SynthKind};
use ufse_core::align::{adain, whiten_color, AlignmentKind, WCT_EIG_FLOOR};
use ufse_core::loss::uncorrelation_loss_value;

use ufse_core::prune::{prune_sweep, select_keep_fraction, PruneReport};
use ufse_core::rng::Rng;
use ufse_core::stats::{
    channel_correlation, channel_mean_std, covariance, gram, FeatureMap,
};
use ufse_core::tape::{CorrelationMode, Tape};
use ufse_core::tensor::Tensor;
use ufse_core::train::{
    probe_diagonal_sum, probe_mean_abs_offdiag, series, smoothed_ends, train, TrainConfig,
    TrainOutput,
};
use ufse_testkit as oracle;
use ufse_testkit::gradsuite::run_suite_seeds;
use ufse_testkit::OracleRng;

fn gate() -> MutexGuard<'static, ()> {
    static GATE: Mutex<()> = Mutex::new(());
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: usize, name: &str, pass: bool, detail: &str, elapsed: Duration) {
    println!(
        "criterion {criterion} ({name}): {} — {detail} [{:.1} s]",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
}

// ---- criterion 1: gradient suite -----------------------------------------

#[test]
fn criterion_1_gradient_suite() {
    let _g = gate();
    let t0 = Instant::now();
    let results = run_suite_seeds(&[1, 2, 3, 4, 5]);
    let worst = results
        .iter()
        .max_by(|a, b| a.max_rel_err.partial_cmp(&b.max_rel_err).unwrap())
        .expect("non-empty suite");
    let all_pass = results.iter().all(|r| r.passed());
    let elapsed = t0.elapsed();
    report(
        1,
        "gradient suite",
        all_pass && elapsed < Duration::from_secs(120),
        &format!(
            "{} checks over 5 seeds, worst rel err {:.2e} ({}) vs tol 1e-3",
            results.len(),
            worst.max_rel_err,
            worst.name
        ),
        elapsed,
    );
    for r in &results {
        assert!(
            r.passed(),
            "{} (seed {}): rel err {:.3e} >= {:.0e}",
            r.name,
            r.seed,
            r.max_rel_err,
            r.tol
        );
    }
    assert!(
        elapsed < Duration::from_secs(120),
        "gradient suite took {elapsed:?}, budget 2 min"
    );
}

// ---- criterion 2: oracle suite --------------------------------------------

#[test]
fn criterion_2_oracle_suite() {
    let _g = gate();
    let t0 = Instant::now();
    let mut checks = 0usize;

    // channel_correlation vs two-nested-loop scalar implementation.
    for seed in [21u64, 22, 23] {
        let (f, exact) = oracle_feature(6, 4, 4, seed);
        let got = channel_correlation(&f).unwrap();
        let want = oracle::correlation_matrix(&exact, 6, 16);
        for i in 0..6 {
            for j in 0..6 {
                assert!(
                    (got.entry(i, j) as f64 - want[i * 6 + j]).abs() < 1e-6,
                    "correlation ({i},{j}) seed {seed}"
                );
            }
        }
        checks += 1;
    }

    // gram vs naive double loop.
    for seed in [24u64, 25] {
        let (f, exact) = oracle_feature(5, 3, 7, seed);
        let got = gram(&f);
        let want = oracle::gram_matrix(&exact, 5, 21);
        for i in 0..25 {
            assert!((got.data()[i] as f64 - want[i]).abs() < 1e-5, "gram seed {seed}");
        }
        checks += 1;
    }

    // covariance vs definition.
    for seed in [26u64, 27] {
        let (f, exact) = oracle_feature(4, 4, 5, seed);
        let got = covariance(&f);
        let want = oracle::covariance_matrix(&exact, 4, 20);
        for i in 0..16 {
            assert!((got.data()[i] as f64 - want[i]).abs() < 1e-5, "covariance seed {seed}");
        }
        checks += 1;
    }

    // uncorrelation loss, both modes, vs loop oracle.
    for seed in [28u64, 29] {
        let (fc, ec) = oracle_feature(4, 4, 4, seed);
        let (fs, es) = oracle_feature(4, 4, 4, seed + 100);
        for (mode, absolute) in [
            (CorrelationMode::Signed, false),
            (CorrelationMode::Absolute, true),
        ] {
            let got = uncorrelation_loss_value(&fc, &fs, mode).unwrap() as f64;
            let want = 0.5
                * (oracle::uncorrelation_sum(&ec, 4, 16, absolute)
                    + oracle::uncorrelation_sum(&es, 4, 16, absolute));
            assert!((got - want).abs() < 1e-6, "uncorrelation {mode:?} seed {seed}");
        }
        checks += 1;
    }

    // conv2d vs direct six-loop convolution.
    {
        let mut rng = OracleRng::new(31);
        let (n, c_in, h, w, c_out, k) = (2, 3, 8, 8, 4, 3);
        let mut x = vec![0.0; n * c_in * h * w];
        let mut wt = vec![0.0; c_out * c_in * k * k];
        let mut b = vec![0.0; c_out];
        rng.fill_uniform(&mut x, -1.0, 1.0);
        rng.fill_uniform(&mut wt, -0.5, 0.5);
        rng.fill_uniform(&mut b, -0.2, 0.2);
        let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let w32: Vec<f32> = wt.iter().map(|&v| v as f32).collect();
        let b32: Vec<f32> = b.iter().map(|&v| v as f32).collect();
        let mut tape = Tape::<f32>::new();
        let xv = tape.leaf(Tensor::new(vec![n, c_in, h, w], x32.clone()).unwrap());
        let wv = tape.leaf(Tensor::new(vec![c_out, c_in, k, k], w32.clone()).unwrap());
        let bv = tape.leaf(Tensor::new(vec![c_out], b32.clone()).unwrap());
        let out = tape.conv2d(xv, wv, bv, 1, 1).unwrap();
        let want = oracle::conv2d_direct(
            &x32.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            n,
            c_in,
            h,
            w,
            &w32.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            &b32.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            c_out,
            k,
            1,
            1,
        );
        for (g, wv) in tape.value(out).data().iter().zip(&want) {
            assert!((*g as f64 - wv).abs() < 1e-5, "conv2d vs direct oracle");
        }
        checks += 1;
    }

    // Exhaustive minimality of keep-fraction selection for C <= 12.
    {
        let mut rng = OracleRng::new(33);
        for _ in 0..200 {
            let c = 2 + (rng.next_u64() % 11) as usize;
            let mags: Vec<f64> = (0..c).map(|_| (rng.uniform(0.0, 2.0) * 8.0).round() / 8.0).collect();
            let total: f64 = mags.iter().sum();
            if total == 0.0 {
                continue;
            }
            let fraction = 0.3 + 0.7 * rng.uniform(0.0, 1.0);
            let keep = select_keep_fraction(&mags, fraction).unwrap();
            let sum: f64 = keep.iter().map(|&i| mags[i]).sum();
            let threshold = fraction * total;
            assert!(sum + 1e-9 * total >= threshold, "keep sum under threshold");
            // Exhaustive check: no subset of fewer channels reaches it.
            let best_smaller = best_sum_of_size(&mags, keep.len().saturating_sub(1));
            assert!(
                keep.len() <= 1 || best_smaller + 1e-9 * total < threshold,
                "a smaller set would suffice: mags {mags:?} fraction {fraction}"
            );
            checks += 1;
        }
    }

    let elapsed = t0.elapsed();
    report(
        2,
        "oracle suite",
        elapsed < Duration::from_secs(60),
        &format!("{checks} oracle comparisons, tolerances 1e-5..1e-6, minimality exhaustive"),
        elapsed,
    );
    assert!(elapsed < Duration::from_secs(60), "oracle suite took {elapsed:?}");
}

/// Largest magnitude sum achievable with exactly `size` channels.
fn best_sum_of_size(mags: &[f64], size: usize) -> f64 {
    let mut sorted = mags.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sorted.iter().take(size).sum()
}

fn oracle_feature(c: usize, h: usize, w: usize, seed: u64) -> (FeatureMap<f32>, Vec<f64>) {
    let mut rng = OracleRng::new(seed);
    let mut data = vec![0.0f64; c * h * w];
    rng.fill_uniform(&mut data, -1.5, 1.5);
    let data32: Vec<f32> = data.iter().map(|&v| v as f32).collect();
    let exact: Vec<f64> = data32.iter().map(|&v| v as f64).collect();
    (FeatureMap::new(c, h, w, data32).unwrap(), exact)
}

// ---- criterion 3: alignment contracts -------------------------------------

#[test]
fn criterion_3_alignment_contracts() {
    let _g = gate();
    let t0 = Instant::now();
    let mut rng = Rng::seed_from_u64(41);
    let rand_fm = |c: usize, h: usize, w: usize, rng: &mut Rng| {
        let data = (0..c * h * w).map(|_| rng.uniform(-2.0, 2.0)).collect();
        FeatureMap::<f32>::new(c, h, w, data).unwrap()
    };

    // AdaIN: output moments match style within 1e-4.
    let mut worst_moment = 0.0f32;
    for _ in 0..10 {
        let xc = rand_fm(8, 8, 8, &mut rng);
        let xs = rand_fm(8, 6, 12, &mut rng);
        let out = adain(&xc, &xs, 1e-5).unwrap();
        let so = channel_mean_std(&out);
        let ss = channel_mean_std(&xs);
        for i in 0..8 {
            worst_moment = worst_moment
                .max((so.mean[i] - ss.mean[i]).abs())
                .max((so.std[i] - ss.std[i]).abs());
        }
    }
    assert!(worst_moment < 1e-4, "adain moment error {worst_moment}");

    // WCT: output covariance matches style covariance within 1e-3 relative
    // Frobenius on full-rank inputs.
    let mut worst_cov = 0.0f64;
    for _ in 0..5 {
        let xc = rand_fm(6, 8, 8, &mut rng);
        let xs = rand_fm(6, 8, 8, &mut rng);
        let out = whiten_color(&xc, &xs, WCT_EIG_FLOOR).unwrap();
        let co = covariance(&out);
        let cs = covariance(&xs);
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, b) in co.data().iter().zip(cs.data()) {
            num += ((*a - *b) as f64).powi(2);
            den += (*b as f64).powi(2);
        }
        worst_cov = worst_cov.max(num.sqrt() / den.sqrt());
    }
    assert!(worst_cov < 1e-3, "wct covariance relative error {worst_cov}");

    // WCT self-alignment returns the input within 1e-3.
    let mut worst_self = 0.0f32;
    for _ in 0..5 {
        let x = rand_fm(5, 7, 7, &mut rng);
        let out = whiten_color(&x, &x, WCT_EIG_FLOOR).unwrap();
        for (a, b) in out.data().iter().zip(x.data()) {
            worst_self = worst_self.max((a - b).abs());
        }
    }
    assert!(worst_self < 1e-3, "wct self-alignment error {worst_self}");

    let elapsed = t0.elapsed();
    report(
        3,
        "alignment contracts",
        elapsed < Duration::from_secs(60),
        &format!(
            "adain moments {worst_moment:.1e} (tol 1e-4), wct covariance {worst_cov:.1e} (tol 1e-3), self-alignment {worst_self:.1e} (tol 1e-3)"
        ),
        elapsed,
    );
    assert!(elapsed < Duration::from_secs(60));
}

// ---- shared desk-scale runs for criteria 4-6 ------------------------------

struct DeskRuns {
    treatment: TrainOutput<f32>,
    control: TrainOutput<f32>,
    content_probes: Vec<Tensor<f32>>,
    style_probes: Vec<Tensor<f32>>,
    train_elapsed: Duration,
}

fn desk_runs() -> &'static DeskRuns {
    static RUNS: OnceLock<DeskRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let t0 = Instant::now();
        let contents = synth_dataset(SynthKind::Content, 200, 96, 101);
        let styles = synth_dataset(SynthKind::Style, 200, 96, 202);

        let cfg = TrainConfig {
            content_dir: String::new(),
            style_dir: String::new(),
            ..TrainConfig::desk()
        };
        assert!(cfg.crop_to == 64 && cfg.network.widths == vec![16, 32, 64]);
        assert!(cfg.total_iterations(contents.len()) >= 2000);
        assert_eq!(
            (cfg.weights.content, cfg.weights.style, cfg.weights.uncorrelation),
            (1.0, 50.0, 0.01)
        );

        eprintln!("[desk] training uncorrelation run ({} iterations)...", cfg.total_iterations(200));
        let treatment = train(&cfg, &contents, &styles, &mut |r| {
            if r.iteration % 500 == 0 {
                eprintln!("[desk treat] iter {} total {:.4}", r.iteration, r.total);
            }
        })
        .expect("treatment run");
        assert!(treatment.aborted.is_none(), "treatment aborted: {:?}", treatment.aborted);

        let mut ctrl_cfg = cfg.clone();
        ctrl_cfg.weights.uncorrelation = 0.0;
        eprintln!("[desk] training control run (lambda_r = 0)...");
        let control = train(&ctrl_cfg, &contents, &styles, &mut |r| {
            if r.iteration % 500 == 0 {
                eprintln!("[desk ctrl] iter {} total {:.4}", r.iteration, r.total);
            }
        })
        .expect("control run");
        assert!(control.aborted.is_none(), "control aborted: {:?}", control.aborted);

        let train_elapsed = t0.elapsed();

        // Held-out probes, cropped to the training resolution.
        let probe_to_64 = |imgs: Vec<Tensor<f32>>| -> Vec<Tensor<f32>> {
            let mut rng = Rng::seed_from_u64(777);
            imgs.iter()
                .map(|img| {
                    ufse_core::resample::preprocess(img, 80, 64, &mut rng).expect("probe crop")
                })
                .collect()
        };
        let content_probes = probe_to_64(synth_dataset(SynthKind::Content, 16, 96, 909));
        let style_probes = probe_to_64(synth_dataset(SynthKind::Style, 16, 96, 808));

        DeskRuns {
            treatment,
            control,
            content_probes,
            style_probes,
            train_elapsed,
        }
    })
}

// ---- criterion 4: decorrelation training ----------------------------------

#[test]
fn criterion_4_decorrelation_training() {
    let _g = gate();
    let runs = desk_runs();
    let t0 = Instant::now();

    let unc = series(&runs.treatment.history, |r| r.uncorrelation);
    let (initial, final_) = smoothed_ends(&unc, 100);
    let ratio = final_ / initial;

    let probe_treat = probe_mean_abs_offdiag(&runs.treatment.encoder, &runs.content_probes).unwrap();
    let probe_ctrl = probe_mean_abs_offdiag(&runs.control.encoder, &runs.content_probes).unwrap();

    let pass = ratio <= 0.10
        && probe_treat < 0.1
        && probe_treat < probe_ctrl
        && runs.train_elapsed <= Duration::from_secs(20 * 60);
    report(
        4,
        "decorrelation training",
        pass,
        &format!(
            "uncorrelation {initial:.2} -> {final_:.4} ({:.2}% of initial, need <= 10%); probe |offdiag| {probe_treat:.4} (need < 0.1) vs control {probe_ctrl:.4}; training {:.0} s (budget 1200 s)",
            100.0 * ratio,
            runs.train_elapsed.as_secs_f64()
        ),
        t0.elapsed() + runs.train_elapsed,
    );
    assert!(ratio <= 0.10, "uncorrelation only fell to {:.2}% of initial", 100.0 * ratio);
    assert!(probe_treat < 0.1, "probe mean |offdiag| {probe_treat}");
    assert!(
        probe_treat < probe_ctrl,
        "treatment probe correlation {probe_treat} not below control {probe_ctrl}"
    );
    assert!(
        runs.train_elapsed <= Duration::from_secs(20 * 60),
        "desk training took {:?}",
        runs.train_elapsed
    );
}

// ---- criterion 5: quality preservation -------------------------------------

#[test]
fn criterion_5_quality_preservation() {
    let _g = gate();
    let runs = desk_runs();
    let t0 = Instant::now();

    let window = 100;
    let (_, style_t) = smoothed_ends(&series(&runs.treatment.history, |r| r.style), window);
    let (_, style_c) = smoothed_ends(&series(&runs.control.history, |r| r.style), window);
    let (_, content_t) = smoothed_ends(&series(&runs.treatment.history, |r| r.content), window);
    let (_, content_c) = smoothed_ends(&series(&runs.control.history, |r| r.content), window);

    let style_dev = (style_t - style_c).abs() / style_c;
    let content_dev = (content_t - content_c).abs() / content_c;
    let pass = style_dev <= 0.15 && content_dev <= 0.25;
    report(
        5,
        "quality preservation",
        pass,
        &format!(
            "style {style_t:.3e} vs control {style_c:.3e} ({:+.1}%, tol 15%); content {content_t:.3e} vs control {content_c:.3e} ({:+.1}%, tol 25%)",
            100.0 * (style_t - style_c) / style_c,
            100.0 * (content_t - content_c) / content_c
        ),
        t0.elapsed(),
    );
    assert!(style_dev <= 0.15, "style deviates {:.1}%", 100.0 * style_dev);
    assert!(content_dev <= 0.25, "content deviates {:.1}%", 100.0 * content_dev);
}

// ---- criterion 6: channel redundancy ---------------------------------------

#[test]
fn criterion_6_channel_redundancy() {
    let _g = gate();
    let runs = desk_runs();
    let t0 = Instant::now();

    // D on the probe set: initial encoder (= frozen loss net) vs trained.
    let d_initial =
        probe_diagonal_sum(&runs.treatment.loss_net, &runs.content_probes, &runs.style_probes)
            .unwrap();
    let d_final =
        probe_diagonal_sum(&runs.treatment.encoder, &runs.content_probes, &runs.style_probes)
            .unwrap();

    let report_sweep: PruneReport<f32> = prune_sweep(
        &runs.treatment.encoder,
        &runs.treatment.decoder,
        &runs.treatment.loss_net,
        &runs.content_probes[..4],
        &runs.style_probes[..4],
        9,
        0.8,
        false,
    )
    .unwrap();
    let base = report_sweep.rows[0].style_loss;
    let keep80 = report_sweep.keep_row.style_loss;
    let all_gone = report_sweep.rows.last().unwrap().style_loss;
    let keep_dev = (keep80 - base).abs() / base;
    let all_ratio = all_gone / base;

    let elapsed = t0.elapsed();
    let pass = d_final < d_initial && keep_dev < 0.05 && all_ratio > 1.5
        && elapsed < Duration::from_secs(300);
    report(
        6,
        "channel redundancy",
        pass,
        &format!(
            "D {d_initial:.3} -> {d_final:.3} (must decrease); keep-80% style delta {:.2}% (tol 5%); all-eliminated style x{all_ratio:.2} (need > 1.5)",
            100.0 * keep_dev
        ),
        elapsed,
    );
    assert!(d_final < d_initial, "D did not decrease: {d_initial} -> {d_final}");
    assert!(keep_dev < 0.05, "keep-80% changed style loss by {:.2}%", 100.0 * keep_dev);
    assert!(all_ratio > 1.5, "eliminating all channels only scaled style by {all_ratio:.2}");
    assert!(elapsed < Duration::from_secs(300), "sweep took {elapsed:?}");
}

// ---- criterion 7: performance ordering --------------------------------------

#[test]
fn criterion_7_performance_ordering() {
    let _g = gate();
    let t0 = Instant::now();
    let trials = 100;
    let adain_256 = bench_alignment(AlignmentKind::AdaIn, 256, 60, 60, trials, 5, 1).unwrap();
    let wct_256 = bench_alignment(AlignmentKind::Wct, 256, 60, 60, trials, 5, 1).unwrap();
    let adain_32 = bench_alignment(AlignmentKind::AdaIn, 32, 60, 60, trials, 5, 1).unwrap();
    let wct_32 = bench_alignment(AlignmentKind::Wct, 32, 60, 60, trials, 5, 1).unwrap();

    let ratio_256 = wct_256.mean_ms / adain_256.mean_ms;
    let ratio_32 = wct_32.mean_ms / adain_32.mean_ms;
    let elapsed = t0.elapsed();
    let pass = wct_256.mean_ms > adain_256.mean_ms
        && ratio_256 > ratio_32
        && elapsed < Duration::from_secs(120);
    report(
        7,
        "performance ordering",
        pass,
        &format!(
            "C=256: wct {:.3} ms vs adain {:.3} ms (x{ratio_256:.1}); C=32 ratio x{ratio_32:.1}; ratio grows with C",
            wct_256.mean_ms, adain_256.mean_ms
        ),
        elapsed,
    );
    assert!(
        wct_256.mean_ms > adain_256.mean_ms,
        "wct {} ms not slower than adain {} ms",
        wct_256.mean_ms,
        adain_256.mean_ms
    );
    assert!(
        ratio_256 > ratio_32,
        "wct/adain ratio did not grow with channels: {ratio_256} vs {ratio_32}"
    );
    assert!(elapsed < Duration::from_secs(120), "benchmark took {elapsed:?}");
}

// ---- criterion 8: end-to-end determinism ------------------------------------

fn ufse_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ufse"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = ufse_bin().args(args).output().expect("spawning ufse");
    assert!(
        out.status.success(),
        "ufse {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn file_bytes(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("reading {}: {e}", p.display()))
}

#[test]
fn criterion_8_end_to_end_determinism() {
    let _g = gate();
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let content_dir = dir.path().join("content");
    let style_dir = dir.path().join("style");
    for (d, kind, seed) in [(&content_dir, "content", 31u64), (&style_dir, "style", 32)] {
        run_ok(&[
            "gen-data",
            "--out",
            d.to_str().unwrap(),
            "--kind",
            kind,
            "--count",
            "8",
            "--seed",
            &seed.to_string(),
            "--size",
            "72",
        ]);
    }

    // Two identical smoke training runs produce bit-identical checkpoints.
    let (run_a, run_b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&run_a, &run_b] {
        run_ok(&[
            "train",
            "--preset",
            "smoke",
            "--content-dir",
            content_dir.to_str().unwrap(),
            "--style-dir",
            style_dir.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "9",
        ]);
    }
    for name in ["encoder.ufse", "decoder.ufse", "lossnet.ufse", "history.csv"] {
        assert_eq!(
            file_bytes(&run_a.join(name)),
            file_bytes(&run_b.join(name)),
            "{name} differs between identical runs"
        );
    }

    // Stylize twice: bit-identical images.
    let content_img = content_dir.join("img_0000.png");
    let style_img = style_dir.join("img_0001.png");
    let (img_a, img_b) = (dir.path().join("out_a.png"), dir.path().join("out_b.png"));
    for img in [&img_a, &img_b] {
        run_ok(&[
            "stylize",
            "--encoder",
            run_a.join("encoder.ufse").to_str().unwrap(),
            "--decoder",
            run_a.join("decoder.ufse").to_str().unwrap(),
            "--content",
            content_img.to_str().unwrap(),
            "--style",
            style_img.to_str().unwrap(),
            "--out",
            img.to_str().unwrap(),
            "--alpha",
            "0.8",
        ]);
    }
    assert_eq!(file_bytes(&img_a), file_bytes(&img_b), "stylize output differs");

    // Cascade: each stage changes the image (nonzero delta per stage).
    let cascade_dir = dir.path().join("cascade");
    run_ok(&[
        "train-cascade",
        "--preset",
        "smoke",
        "--content-dir",
        content_dir.to_str().unwrap(),
        "--style-dir",
        style_dir.to_str().unwrap(),
        "--out",
        cascade_dir.to_str().unwrap(),
        "--stages",
        "3",
        "--seed",
        "10",
    ]);
    let casc_out = dir.path().join("casc.png");
    run_ok(&[
        "stylize",
        "--cascade",
        cascade_dir.to_str().unwrap(),
        "--content",
        content_img.to_str().unwrap(),
        "--style",
        style_img.to_str().unwrap(),
        "--out",
        casc_out.to_str().unwrap(),
        "--save-stages",
    ]);
    let stage_imgs: Vec<Vec<u8>> = (1..=3)
        .map(|k| file_bytes(&dir.path().join(format!("casc-stage{k}.png"))))
        .collect();
    let original = file_bytes(&content_img);
    assert_ne!(stage_imgs[0], original, "stage 1 left the image unchanged");
    assert_ne!(stage_imgs[1], stage_imgs[0], "stage 2 left the image unchanged");
    assert_ne!(stage_imgs[2], stage_imgs[1], "stage 3 left the image unchanged");
    assert_eq!(stage_imgs[2], file_bytes(&casc_out), "final output is stage 3");

    let elapsed = t0.elapsed();
    report(
        8,
        "end-to-end determinism",
        true,
        "train and stylize bit-identical across runs; cascade changes the image at each of 3 stages",
        elapsed,
    );
}
