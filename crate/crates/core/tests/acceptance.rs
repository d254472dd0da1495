//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gsoftmax::analysis::{
    analyze_rows, kl_gaussian, pearson_correlation, read_feature_csv, EmpiricalGaussian,
};
use gsoftmax::experiment::{self, ExperimentConfig};
use gsoftmax::gradcheck::{run_gradcheck, TOLERANCE};
use gsoftmax::metrics::{
    average_precision, evaluate_multilabel, mean_average_precision, RankedPredictions, ZeroPolicy,
};
use gsoftmax::predictor::{gsoftmax_forward, softmax, ClassGaussian, PredictorParams};
use gsoftmax::schedule::{logspace_rate, Piece, ScheduleSpec};
use gsoftmax::special::erf;
use gsoftmax::train::{
    generate_blobs, load_cifar10_binary, parse_cifar10, train, Activation, LossMode, MlpConfig,
    Model, PredictorInit, SgdConfig, SyntheticBlobSpec, TrainConfig, Labels,
};
use gsoftmax::{Error, ImpostorMode, Schedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> Outcome); 9] = [
        (1, gradient_oracle),
        (2, zero_lambda_reduction),
        (3, kl_closed_form),
        (4, erf_kernel),
        (5, metrics_oracle),
        (6, schedule_curve),
        (7, desk_scale_experiment),
        (8, analysis_pipeline),
        (9, cifar10_ingestion),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, check) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!("criterion {n}: {verdict} ({:.1} s) {}", start.elapsed().as_secs_f64(), result.detail);
        failed += !result.pass as u32;
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let report = run_gradcheck(1000, 20_240_601).expect("gradcheck runs");
    let elapsed = start.elapsed();
    let worst = report.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
    let in_time = elapsed <= Duration::from_secs(60);
    let mut detail = format!(
        "{} trials, {} blocks, worst relative error {worst:.2e} (tol {TOLERANCE:.0e}), lambda=0 distribution grads vanish: {}, {:.1} s",
        report.trials,
        report.blocks.len(),
        report.zero_lambda_distribution_grads_vanish,
        elapsed.as_secs_f64()
    );
    for b in report.failures() {
        detail.push_str(&format!("; {} failed at {:?}", b.name, b.worst));
    }
    outcome(report.passed() && in_time, detail)
}

fn zero_lambda_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let m = rng.random_range(2..=100);
        let scale = [1.0, 10.0, 300.0][rng.random_range(0..3)];
        let x: Vec<f64> = (0..m).map(|_| rng.random_range(-scale..scale)).collect();
        let classes = (0..m)
            .map(|_| ClassGaussian::new(rng.random_range(-3.0..3.0), rng.random_range(0.1..10.0)).unwrap())
            .collect();
        let params = PredictorParams::new(0.0, classes).unwrap();
        let g = gsoftmax_forward(&x, &params).unwrap();
        let s = softmax(&x).unwrap();
        let same = g.as_slice().iter().zip(s.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
        mismatches += !same as usize;
    }

    let data = generate_blobs(&SyntheticBlobSpec::unit_square_corners(1.2, 500, 11)).unwrap();
    let test = generate_blobs(&SyntheticBlobSpec::unit_square_corners(1.2, 500, 12)).unwrap();
    let net = MlpConfig {
        input_dim: 2,
        hidden_dims: vec![32, 32],
        output_dim: 4,
        activation: Activation::Relu,
        seed: 3,
    };
    let cfg = TrainConfig {
        sgd: SgdConfig { momentum: 0.9, weight_decay: 5e-4 },
        seed: 5,
        ..TrainConfig::new(100, 32, Schedule::Malleable(ScheduleSpec::single(0.05, 100, 0.0, -3.0)))
    };
    let mut a = Model::new(LossMode::Softmax, &net, 4, PredictorInit::default()).unwrap();
    let mut b = Model::new(LossMode::Gsoftmax, &net, 4, PredictorInit { lambda: 0.0, mu: 0.0, sigma: 1.0 }).unwrap();
    let ha = train(&mut a, &data, Some(&test), &cfg).unwrap();
    let hb = train(&mut b, &data, Some(&test), &cfg).unwrap();
    let bits = |h: &gsoftmax::train::History| -> Vec<[u64; 3]> {
        h.0.iter()
            .map(|r| [r.loss.to_bits(), r.train_metric.to_bits(), r.test_metric.unwrap().to_bits()])
            .collect()
    };
    let trajectory = a.net == b.net && bits(&ha) == bits(&hb);
    outcome(
        mismatches == 0 && trajectory,
        format!(
            "{mismatches}/10000 forward mismatches; 100-epoch blob trajectory identical: {trajectory}"
        ),
    )
}

/// Simpson quadrature of `p_a (ln p_a - ln p_b)` over `mu_a +- 12 sigma_a`.
fn kl_quadrature(a: &EmpiricalGaussian, b: &EmpiricalGaussian) -> f64 {
    let ln_pdf = |x: f64, g: &EmpiricalGaussian| {
        let t = (x - g.mu) / g.sigma;
        -0.5 * t * t - g.sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    };
    let f = |x: f64| {
        let la = ln_pdf(x, a);
        la.exp() * (la - ln_pdf(x, b))
    };
    let n = 4000;
    let (lo, hi) = (a.mu - 12.0 * a.sigma, a.mu + 12.0 * a.sigma);
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn kl_closed_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gauss = |rng: &mut ChaCha8Rng| EmpiricalGaussian {
        mu: rng.random_range(-5.0..5.0),
        sigma: 10f64.powf(rng.random_range(-1.0..1.0)),
        n: 100,
    };
    let (mut worst, mut negative, mut zero_for_distinct, mut nonzero_for_identical) = (0.0f64, 0, 0, 0);
    for _ in 0..10_000 {
        let a = gauss(&mut rng);
        let b = gauss(&mut rng);
        let kl = kl_gaussian(&a, &b);
        worst = worst.max((kl - kl_quadrature(&a, &b)).abs());
        negative += (kl < 0.0) as usize;
        zero_for_distinct += (kl == 0.0) as usize;
        nonzero_for_identical += (kl_gaussian(&a, &a) != 0.0) as usize;
    }
    outcome(
        worst <= 1e-6 && negative == 0 && zero_for_distinct == 0 && nonzero_for_identical == 0,
        format!(
            "max |closed form - quadrature| {worst:.2e}; negative {negative}, zero for distinct {zero_for_distinct}, nonzero for identical {nonzero_for_identical}"
        ),
    )
}

/// erf z = 2/sqrt(pi) e^{-z^2} sum_n 2^n z^{2n+1} / (1 3 5 ... (2n+1)); every
/// term is positive, so there is no cancellation even at |z| = 6.
fn erf_series(z: f64) -> f64 {
    let mut term = z;
    let mut sum = z;
    let mut n = 0.0;
    while term.abs() > 1e-18 * sum.abs() {
        n += 1.0;
        term *= 2.0 * z * z / (2.0 * n + 1.0);
        sum += term;
    }
    2.0 / std::f64::consts::PI.sqrt() * (-z * z).exp() * sum
}

fn erf_kernel() -> Outcome {
    let worst = (0..1000)
        .map(|i| -6.0 + 12.0 * i as f64 / 999.0)
        .map(|z| (erf(z).unwrap() - erf_series(z)).abs())
        .fold(0.0, f64::max);
    outcome(worst <= 1e-9, format!("max abs error {worst:.2e} over 1000 points in [-6, 6]"))
}

fn brute_ap(scores: &[f64], rel: &[bool]) -> Option<f64> {
    let n = scores.len();
    // 1-based rank; ties broken by item order
    let rank = |i: usize| 1 + (0..n).filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i)).count();
    let relevant: Vec<usize> = (0..n).filter(|&i| rel[i]).collect();
    if relevant.is_empty() {
        return None;
    }
    let sum: f64 = relevant
        .iter()
        .map(|&i| relevant.iter().filter(|&&j| rank(j) <= rank(i)).count() as f64 / rank(i) as f64)
        .sum();
    Some(sum / relevant.len() as f64)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bad = Vec::new();
    for fixture in 0..100 {
        let items = rng.random_range(1..=50);
        let classes = rng.random_range(1..=10);
        let density = rng.random_range(0.0..0.6);
        // coarse scores so that ties are common
        let scores: Vec<Vec<f64>> = (0..items)
            .map(|_| (0..classes).map(|_| rng.random_range(0..=20) as f64 / 20.0).collect())
            .collect();
        let labels: Vec<Vec<bool>> = (0..items)
            .map(|_| (0..classes).map(|_| rng.random_bool(density)).collect())
            .collect();
        let column = |c: usize| -> (Vec<f64>, Vec<bool>) {
            (scores.iter().map(|r| r[c]).collect(), labels.iter().map(|r| r[c]).collect())
        };

        let expect_ap: Vec<Option<f64>> = (0..classes).map(|c| {
            let (s, l) = column(c);
            brute_ap(&s, &l)
        }).collect();
        for (c, e) in expect_ap.iter().enumerate() {
            let (s, l) = column(c);
            let pairs: Vec<(f64, bool)> = s.into_iter().zip(l).collect();
            match (average_precision(&pairs), e) {
                (Ok(got), Some(e)) if close(got, *e) => {}
                (Err(Error::Degenerate(_)), None) => {}
                (got, e) => bad.push(format!("fixture {fixture} class {c}: AP {got:?} vs {e:?}")),
            }
        }
        let present: Vec<f64> = expect_ap.iter().flatten().copied().collect();
        let map = mean_average_precision(&RankedPredictions::from_matrix(&scores, &labels).unwrap());
        match (&map, present.is_empty()) {
            (Ok(m), false) if close(m.map, present.iter().sum::<f64>() / present.len() as f64)
                && m.per_class.len() == classes
                && m.per_class.iter().zip(&expect_ap).all(|(g, e)| match (g, e) {
                    (Some(g), Some(e)) => close(*g, *e),
                    (None, None) => true,
                    _ => false,
                }) => {}
            (Err(_), true) => {}
            _ => bad.push(format!("fixture {fixture}: mAP {map:?}")),
        }

        for policy in [ZeroPolicy::Zero, ZeroPolicy::Skip] {
            let (mut cp, mut cr) = (Vec::new(), Vec::new());
            let (mut tc, mut tp, mut tg) = (0usize, 0usize, 0usize);
            for c in 0..classes {
                let (s, l) = column(c);
                let nc = (0..items).filter(|&i| s[i] >= 0.5 && l[i]).count();
                let np = (0..items).filter(|&i| s[i] >= 0.5).count();
                let ng = (0..items).filter(|&i| l[i]).count();
                tc += nc;
                tp += np;
                tg += ng;
                for (num, den, out) in [(nc, np, &mut cp), (nc, ng, &mut cr)] {
                    match (den, policy) {
                        (0, ZeroPolicy::Zero) => out.push(0.0),
                        (0, ZeroPolicy::Skip) => {}
                        _ => out.push(num as f64 / den as f64),
                    }
                }
            }
            let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let f1 = |p: f64, r: f64| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            let report = evaluate_multilabel(&scores, &labels, 0.5, policy);
            let defined = !present.is_empty() && (tp + tg) > 0 && !cp.is_empty() && !cr.is_empty();
            match (report, defined) {
                (Ok(r), true) => {
                    let (c_p, c_r) = (avg(&cp), avg(&cr));
                    let o_p = if tp == 0 { 0.0 } else { tc as f64 / tp as f64 };
                    let o_r = if tg == 0 { 0.0 } else { tc as f64 / tg as f64 };
                    let want = [c_p, c_r, f1(c_p, c_r), o_p, o_r, f1(o_p, o_r)];
                    let got = [r.prf.c_p, r.prf.c_r, r.prf.c_f1, r.prf.o_p, r.prf.o_r, r.prf.o_f1];
                    if !want.iter().zip(&got).all(|(a, b)| close(*a, *b)) {
                        bad.push(format!("fixture {fixture} {policy:?}: {got:?} vs {want:?}"));
                    }
                }
                (Err(_), false) => {}
                (r, _) => bad.push(format!("fixture {fixture} {policy:?}: defined={defined}, got {r:?}")),
            }
        }
    }
    let detail = match bad.first() {
        None => "100 fixtures (<= 50 items x 10 classes): AP, mAP and C/O P/R/F1 under both zero policies agree".into(),
        Some(first) => format!("{} mismatches, first: {first}", bad.len()),
    };
    outcome(bad.is_empty(), detail)
}

fn schedule_curve() -> Outcome {
    let spec = ScheduleSpec {
        pieces: vec![
            Piece { end_epoch: 1000, exp_start: 0.0, exp_end: -8.0 },
            Piece { end_epoch: 1100, exp_start: -8.0, exp_end: -9.0 },
        ],
        ..ScheduleSpec::single(0.1, 1100, 0.0, -9.0)
    };
    spec.validate().unwrap();
    let rates: Vec<f64> = (1..=1100).map(|e| spec.rate_at(e).unwrap()).collect();
    let decreasing = rates.windows(2).all(|w| w[1] < w[0]);
    let boundary = (spec.piece_rate(0, 1000) - spec.piece_rate(1, 1000)).abs();

    let mut worst_single = 0.0f64;
    for (a, b, m) in [(0.0, -8.0, 1100), (0.0, -3.0, 100), (-1.0, -1.0, 10), (2.0, -4.0, 7)] {
        let single = ScheduleSpec::single(0.1, m, a, b);
        for e in 1..=m {
            let direct = 0.1 * (a + (b - a) * (e - 1) as f64 / (m - 1) as f64).exp();
            let lib = logspace_rate(a.exp(), b.exp(), 0.1, m, e).unwrap();
            let got = single.rate_at(e).unwrap();
            worst_single = worst_single.max(((got - lib) / lib).abs()).max(((got - direct) / direct).abs());
        }
    }
    outcome(
        decreasing && boundary <= 1e-12 && worst_single <= 1e-14,
        format!(
            "1100 epochs strictly decreasing: {decreasing}; boundary gap at 1000: {boundary:.1e}; single piece vs logspace max rel diff {worst_single:.1e}"
        ),
    )
}

const DESK_SCALE: &str = r#"{
    "dataset": {"kind": "blobs",
                "spec": {"num_classes": 4, "dim": 2, "centers": [[0,0],[1,0],[0,1],[1,1]],
                         "spreads": [1.2,1.2,1.2,1.2], "samples_per_class": 500, "seed": 0},
                "test_samples_per_class": 500},
    "network": {"hidden_dims": [32, 32]},
    "loss_modes": ["softmax", "gsoftmax"],
    "predictor": {"lambda": 1, "mu": 0, "sigma": 1},
    "schedule": {"kind": "malleable", "base_rate": 0.05, "max_epoch": 100,
                 "pieces": [{"end_epoch": 100, "exp_start": 0, "exp_end": -3}]},
    "optimizer": {"batch_size": 32, "momentum": 0.9, "weight_decay": 5e-4},
    "epochs": 100,
    "seeds": [0, 1, 2, 3, 4],
    "analysis": {"impostor_mode": "pooled"}
}"#;

fn desk_scale_experiment() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::from_json(DESK_SCALE).unwrap();
    let (_, summary) = experiment::run_experiment(&cfg).unwrap();
    let elapsed = start.elapsed();
    let agg = |mode| summary.aggregates.iter().find(|a| a.mode == mode).unwrap();
    let (s, g) = (agg(LossMode::Softmax), agg(LossMode::Gsoftmax));
    let (acc_s, acc_g) = (s.mean_test_accuracy.unwrap(), g.mean_test_accuracy.unwrap());
    let non_inferior = acc_g >= acc_s - 0.005;
    let ratio_up = g.mean_ratio > s.mean_ratio;
    outcome(
        non_inferior && ratio_up && elapsed <= Duration::from_secs(300),
        format!(
            "accuracy softmax {:.4} vs G-softmax {:.4} (gap {:+.2} pp); mean ratio {:.3} vs {:.3}; {:.1} s",
            acc_s,
            acc_g,
            100.0 * (acc_g - acc_s),
            s.mean_ratio,
            g.mean_ratio,
            elapsed.as_secs_f64()
        ),
    )
}

const MULTILABEL: &str = r#"{
    "dataset": {"kind": "multilabel_blobs",
                "spec": {"num_classes": 10, "dim": 8, "samples": 600, "label_prob": 0.3,
                         "center_scale": 2.0, "spread": 1.0, "seed": 7},
                "test_samples": 300},
    "network": {"hidden_dims": [32]},
    "loss_modes": ["msml", "gsoftmax_multilabel"],
    "schedule": {"kind": "malleable", "base_rate": 0.05, "max_epoch": 30,
                 "pieces": [{"end_epoch": 30, "exp_start": 0, "exp_end": -2}]},
    "optimizer": {"batch_size": 32},
    "epochs": 30,
    "seeds": [0, 1],
    "analysis": {"impostor_mode": "per_class"}
}"#;

/// rho = cov(a, b) / (sd(a) sd(b)) from raw sums of centred products.
fn covariance_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0);
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (n - 1.0);
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / (n - 1.0);
    cov / (va.sqrt() * vb.sqrt())
}

fn analysis_pipeline() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_json(MULTILABEL).unwrap();
    let summary = experiment::run(&cfg, dir.path()).unwrap();
    let mut problems = Vec::new();

    // Re-fit the class Gaussians from the exported feature dumps.
    for run in &summary.runs {
        let path = dir.path().join(run.mode.name()).join(format!("seed_{}", run.seed)).join("features.csv");
        let rows = read_feature_csv(std::fs::File::open(&path).unwrap()).unwrap();
        let refit = analyze_rows(&rows, ImpostorMode::PerClass, Default::default()).unwrap();
        let same = refit.per_class.len() == run.separability.per_class.len()
            && refit.per_class.iter().zip(&run.separability.per_class).all(|(a, b)| {
                a.class_id == b.class_id && close(a.ratio, b.ratio) && close(a.compactness, b.compactness)
            });
        if !same {
            problems.push(format!("{} seed {}: refit from features.csv differs", run.mode, run.seed));
        }
        if !run.separability.per_class.iter().all(|c| c.ratio.is_finite() && c.compactness > 0.0) {
            problems.push(format!("{} seed {}: non-finite ratio", run.mode, run.seed));
        }
    }

    let ap = summary.comparisons.iter().find(|c| c.metric == "per_class_ap").expect("AP comparison");
    let (t, p) = (ap.t_test.expect("t-test"), ap.pearson.expect("pearson"));
    let rho_direct = covariance_pearson(&ap.baseline_values, &ap.candidate_values);
    let again = pearson_correlation(&ap.baseline_values, &ap.candidate_values).unwrap();
    let rho_gap = (p.rho - rho_direct).abs();
    if !(-1.0..=1.0).contains(&p.rho) || !(0.0..=1.0).contains(&p.p_value) || !(0.0..=1.0).contains(&t.p_value) {
        problems.push(format!("out of range: rho {} p {} t-test p {}", p.rho, p.p_value, t.p_value));
    }
    if rho_gap > 1e-12 || again != p {
        problems.push(format!("pearson {} vs covariance formula {rho_direct}", p.rho));
    }
    outcome(
        problems.is_empty() && summary.runs.len() == 4,
        format!(
            "{} runs over {} classes; AP t = {:.3} (p {:.3}), rho = {:.4} (p {:.3}), |rho - covariance formula| = {rho_gap:.1e}{}",
            summary.runs.len(),
            ap.classes.len(),
            t.t_stat,
            t.p_value,
            p.rho,
            p.p_value,
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
        ),
    )
}

fn cifar10_ingestion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let records = 7;
    let mut bytes = Vec::with_capacity(records * 3073);
    for r in 0..records {
        bytes.push((r % 10) as u8);
        bytes.extend((0..3072).map(|_| rng.random::<u8>()));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data_batch_1.bin");
    std::fs::write(&path, &bytes).unwrap();
    let data = load_cifar10_binary(&path).unwrap();

    // Rebuild the byte stream from the parsed dataset.
    let Labels::Single(labels) = &data.labels else { panic!("single-label dataset expected") };
    let mut rebuilt = Vec::with_capacity(bytes.len());
    for (x, &y) in data.inputs.iter().zip(labels) {
        rebuilt.push(y as u8);
        rebuilt.extend(x.iter().map(|v| (v * 255.0).round() as u8));
    }
    let round_trip = rebuilt == bytes;

    let mut codes = Vec::new();
    for len in [3072, 3074, 2 * 3073 - 1] {
        let p = dir.path().join(format!("bad_{len}.bin"));
        std::fs::write(&p, &bytes[..len.min(bytes.len())]).unwrap();
        codes.push(load_cifar10_binary(&p).map(|_| 0).unwrap_or_else(|e| e.exit_code()));
    }
    let mut bad_label = bytes[..3073].to_vec();
    bad_label[0] = 10;
    codes.push(parse_cifar10(&bad_label).map(|_| 0).unwrap_or_else(|e| e.exit_code()));
    let rejected = codes.iter().all(|&c| c == 2);
    outcome(
        round_trip && rejected,
        format!("{records} records round-trip exactly: {round_trip}; malformed inputs exit codes {codes:?}"),
    )
}
