//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Failures are reported, not hidden; set `SDP_ACCEPTANCE_STRICT=1` to turn
//! any FAIL into a non-zero exit.

mod common;

use std::path::Path;
use std::time::Instant;

use rand::Rng;

use common::*;
use sdp::bench::{cmd_marginal, cmd_synth, cmd_tabular, FileConfig, HeadGrid, MarginalSettings, SynthSettings};
use sdp::dataio::Samples;
use sdp::eval::tv;
use sdp::heads::{Head, HeadKind, HeadSpec};
use sdp::nnet::{fit, AdamConfig, Model, TrainConfig, Validation};
use sdp::synth::{gmm_truth, make_task, sample_marginal, LatentClassTask, TruthKind};
use sdp::DiscreteDistribution;

// Criterion 1.
const MARGINAL_TRIALS: usize = 5;
const MARGINAL_SHORT_STEPS: usize = 10_000;
const MARGINAL_LONG_STEPS: usize = 50_000;
const MARGINAL_MIN_WINS: usize = 4;

// Criteria 2 and 3.
const SYNTH_TRIALS: usize = 5;
const SMALL_SIZES: [usize; 2] = [500, 3_000];
const LARGE_SIZE: usize = 30_000;
const UDP_GAP: f64 = 0.02;
const LAMBDA_SIZES: [usize; 3] = [500, 5_000, 30_000];

// Criterion 4.
const PROPERTY_BUDGET_SECS: f64 = 60.0;

// Criterion 5.
const RECOVERY_DRAWS: usize = 100_000;
const RECOVERY_TV: f64 = 0.03;
const MN_TO_EMPIRICAL_TV: f64 = 1e-3;

// Criterion 6.
const TABULAR_BUDGET_SECS: f64 = 600.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: &str, name: &str, outcome: Outcome, failures: &mut usize) {
    let tag = if outcome.pass { "PASS" } else { "FAIL" };
    if !outcome.pass {
        *failures += 1;
    }
    println!("{tag} [{id}] {name}: {}", outcome.detail);
}

fn marginal_experiment() -> Outcome {
    let radii = [10, 25];
    let short = MarginalSettings {
        steps: MARGINAL_SHORT_STEPS,
        radii: radii.to_vec(),
        trials: MARGINAL_TRIALS,
        ..MarginalSettings::default()
    };
    let rep = cmd_marginal(&short, None).expect("marginal run");
    let mut below_empirical = 0;
    let mut wins = [0usize; 2];
    for t in 0..MARGINAL_TRIALS {
        let udp = rep.summary_for(t, "udp", 0).expect("udp row");
        if udp.best_tv < udp.empirical_tv {
            below_empirical += 1;
        }
        for (w, &r) in wins.iter_mut().zip(&radii) {
            if rep.summary_for(t, "sdp", r).expect("sdp row").final_tv < udp.best_tv {
                *w += 1;
            }
        }
    }
    let long = MarginalSettings {
        steps: MARGINAL_LONG_STEPS,
        radii: vec![25],
        trials: 1,
        ..MarginalSettings::default()
    };
    let rep_long = cmd_marginal(&long, None).expect("long marginal run");
    let udp_long = rep_long.summary_for(0, "udp", 0).expect("udp row");
    let rebound = udp_long.final_tv > udp_long.best_tv;

    let a = below_empirical == MARGINAL_TRIALS;
    let c = wins.iter().all(|&w| w >= MARGINAL_MIN_WINS);
    Outcome {
        pass: a && rebound && c,
        detail: format!(
            "(a) UDP best < empirical in {below_empirical}/{MARGINAL_TRIALS}; \
             (b) UDP at {MARGINAL_LONG_STEPS} steps best {:.4} at step {}, final {:.4}; \
             (c) SDP final < UDP best in r=10 {}/{MARGINAL_TRIALS}, r=25 {}/{MARGINAL_TRIALS}",
            udp_long.best_tv, udp_long.best_step, udp_long.final_tv, wins[0], wins[1]
        ),
    }
}

/// Benchmark settings for criteria 2 and 3: the command defaults with the
/// largest mixture size dropped to keep the gate near desk scale.
fn synth_settings(truth: TruthKind, sizes: &[usize], heads: &[HeadKind]) -> SynthSettings {
    SynthSettings {
        truths: vec![truth],
        sizes: sizes.to_vec(),
        trials: SYNTH_TRIALS,
        heads: heads.to_vec(),
        grid: HeadGrid {
            components: vec![1, 3, 5, 10],
            ..HeadGrid::default()
        },
        ..SynthSettings::default()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean per-class TV of the training-split histograms, the error of an
/// unsmoothed per-class estimate.
fn empirical_floor(size: usize) -> f64 {
    let settings = SynthSettings::default();
    let mut total = 0.0;
    for trial in 0..SYNTH_TRIALS {
        let task_seed = sdp::bench::derive_seed(settings.seed, &[TruthKind::Edge as u64, trial as u64]);
        let task = LatentClassTask::generate(TruthKind::Edge, &mut rng(task_seed));
        let seed = sdp::bench::derive_seed(task_seed, &[size as u64]);
        let data = make_task(&task, size, &mut rng(seed)).expect("task");
        let train_rows = (size as f64 * (1.0 - settings.validation_fraction)).round() as usize;
        let mut per_class = vec![Vec::new(); task.classes()];
        for (c, &y) in data.classes.iter().zip(data.samples.targets()).take(train_rows) {
            per_class[*c].push(y);
        }
        for (cells, truth) in per_class.iter().zip(task.truths()) {
            let hist = DiscreteDistribution::empirical(task.shape().clone(), cells).expect("nonempty class");
            total += tv(&hist, &truth.mass).expect("same grid") / task.classes() as f64;
        }
    }
    total / SYNTH_TRIALS as f64
}

fn synthetic_and_lambda() -> (Outcome, Outcome) {
    use HeadKind::*;
    let edge_small = cmd_synth(&synth_settings(TruthKind::Edge, &SMALL_SIZES, &[Mn, Gmm, Udp, Sdp]), None).expect("synth");
    let edge_large = cmd_synth(&synth_settings(TruthKind::Edge, &[LAMBDA_SIZES[1], LARGE_SIZE], &[Udp, Sdp]), None).expect("synth");
    let gmm_runs = cmd_synth(&synth_settings(TruthKind::Gmm, &LAMBDA_SIZES, &[Sdp]), None).expect("synth");

    let mut ordering = true;
    let mut parts = Vec::new();
    for n in SMALL_SIZES {
        let m = |k| edge_small.mean_tv(TruthKind::Edge, n, k).expect("rows");
        let (sdp, mn, gmm, udp) = (m(Sdp), m(Mn), m(Gmm), m(Udp));
        ordering &= sdp < mn && sdp < gmm;
        parts.push(format!("n={n}: SDP {sdp:.4} MN {mn:.4} GMM {gmm:.4} UDP {udp:.4}"));
    }
    let sdp = edge_large.mean_tv(TruthKind::Edge, LARGE_SIZE, Sdp).expect("rows");
    let udp = edge_large.mean_tv(TruthKind::Edge, LARGE_SIZE, Udp).expect("rows");
    let gap = (sdp - udp).abs();
    parts.push(format!(
        "n={LARGE_SIZE}: SDP {sdp:.4} UDP {udp:.4} |gap| {gap:.4} (tol {UDP_GAP}; unsmoothed histogram floor {:.4})",
        empirical_floor(LARGE_SIZE)
    ));
    let synth = Outcome {
        pass: ordering && gap <= UDP_GAP,
        detail: parts.join("; "),
    };

    let lambdas = |rep: &sdp::bench::SynthReport, truth, n| {
        median(rep.rows_for(truth, n, Sdp).map(|r| r.lambda.expect("smoothed")).collect())
    };
    let edge: Vec<f64> = LAMBDA_SIZES
        .iter()
        .map(|&n| {
            let rep = if SMALL_SIZES.contains(&n) { &edge_small } else { &edge_large };
            lambdas(rep, TruthKind::Edge, n)
        })
        .collect();
    let gmm: Vec<f64> = LAMBDA_SIZES.iter().map(|&n| lambdas(&gmm_runs, TruthKind::Gmm, n)).collect();
    let monotone = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
    let trend = Outcome {
        pass: monotone(&edge) && monotone(&gmm),
        detail: format!("median selected lambda over n={LAMBDA_SIZES:?}: edge {edge:?}, gmm {gmm:?}"),
    };
    (synth, trend)
}

fn random_dims(r: &mut impl Rng) -> Vec<usize> {
    loop {
        let nd = r.random_range(1..=3);
        let dims: Vec<usize> = (0..nd).map(|_| r.random_range(1..=12)).collect();
        if dims.iter().product::<usize>() >= 2 {
            return dims;
        }
    }
}

fn property_suites() -> Outcome {
    let start = Instant::now();
    let mut checks = 0usize;
    let mut errors: Vec<String> = Vec::new();
    let mut run = |c: Check| {
        checks += 1;
        if let Err(e) = c {
            errors.push(e);
        }
    };
    let mut r = rng(2024);

    for dims in [vec![4096], vec![64, 64], vec![16, 16, 16], vec![1000], vec![37, 5]] {
        run(check_tree_decode(&dims, 1, 2.0));
        run(check_tree_layout(&dims));
    }
    for seed in 0..100 {
        let dims = random_dims(&mut r);
        run(check_tree_decode(&dims, seed, 3.0));
        run(check_tree_layout(&dims));
        run(check_tree_grads(&dims, (seed % 4) as usize, seed));
    }
    let head_dims: [&[usize]; 3] = [&[16], &[5, 4], &[3, 4, 2]];
    for kind in HeadKind::ALL {
        for dims in head_dims {
            for seed in 0..5 {
                run(check_head_normalized(kind, dims, seed));
                run(check_head_grad(kind, dims, seed));
            }
        }
        for seed in 0..3 {
            run(check_end_to_end_grad(kind, seed));
        }
    }
    for kind in [HeadKind::Smn, HeadKind::Sdp] {
        for dims in [&[16][..], &[6, 5]] {
            for order in 1..=3 {
                for radius in 1..=3 {
                    run(check_penalized_grad(kind, dims, order, radius, (order * 10 + radius) as u64));
                }
            }
        }
    }
    for dims in [&[9][..], &[2][..], &[4, 5], &[3, 4, 3], &[1, 6]] {
        for order in 1..=3 {
            run(check_gtf_nullspace(dims, order));
        }
    }
    for (dims, center) in [(&[20][..], &[10][..]), (&[9, 9], &[4, 4]), (&[7, 8, 6], &[3, 4, 3])] {
        for radius in 1..=3 {
            for order in 1..=3 {
                run(check_window_operator(dims, center, radius, order));
            }
        }
    }
    for seed in 0..50 {
        run(check_lmm_conservation(2 + (seed as usize % 40), seed));
    }
    for seed in 0..3 {
        run(check_sdp_zero_is_udp(seed));
    }

    let secs = start.elapsed().as_secs_f64();
    let failed = errors.len();
    Outcome {
        pass: failed == 0 && secs < PROPERTY_BUDGET_SECS,
        detail: format!(
            "{} of {checks} checks passed in {secs:.1}s (budget {PROPERTY_BUDGET_SECS}s){}",
            checks - failed,
            errors.first().map(|e| format!("; first failure: {e}")).unwrap_or_default()
        ),
    }
}

/// Full-batch marginal fit; returns the fitted distribution.
fn fit_marginal(head: &Head, data: &Samples, lr: f64, steps: usize) -> DiscreteDistribution {
    let config = TrainConfig {
        adam: AdamConfig { lr, ..AdamConfig::default() },
        batch_size: data.len(),
        max_steps: Some(steps),
        validation: Validation::Off,
        restore_best: false,
        ..TrainConfig::default()
    };
    let mut model = Model::marginal(head);
    fit(&mut model, head, data, data, &config).expect("marginal fit");
    model.predict(head, &[]).expect("distribution")
}

fn recovery_oracle() -> Outcome {
    let truth = gmm_truth(&mut rng(77));
    let data = sample_marginal(&truth, RECOVERY_DRAWS, &mut rng(78)).expect("draws");
    let shape = truth.shape().clone();
    let sdp = Head::new(HeadSpec::new(HeadKind::Sdp, shape.clone()).with_smoothing(0.01, 2, 5)).expect("head");
    let sdp_tv = tv(&fit_marginal(&sdp, &data, 0.05, 2_000), &truth.mass).expect("tv");

    let mn = Head::new(HeadSpec::new(HeadKind::Mn, shape.clone())).expect("head");
    let empirical = DiscreteDistribution::empirical(shape, data.targets()).expect("histogram");
    let mn_tv = tv(&fit_marginal(&mn, &data, 0.1, 5_000), &empirical).expect("tv");
    Outcome {
        pass: sdp_tv < RECOVERY_TV && mn_tv < MN_TO_EMPIRICAL_TV,
        detail: format!(
            "SDP TV to truth {sdp_tv:.4} (< {RECOVERY_TV}); MN TV to histogram {mn_tv:.2e} (< {MN_TO_EMPIRICAL_TV:.0e})"
        ),
    }
}

fn tabular_harness() -> Outcome {
    let recipe = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/diabetes-desk.toml");
    let settings = FileConfig::load(&recipe).expect("bundled recipe").tabular;
    let dir = tempfile::tempdir().expect("tempdir");
    let mut runs = Vec::new();
    for name in ["first", "second"] {
        let out = dir.path().join(name);
        let start = Instant::now();
        let rep = cmd_tabular(&settings, Some(&out)).expect("tabular run");
        let secs = start.elapsed().as_secs_f64();
        let csv = std::fs::read(out.join("tabular_folds.csv")).expect("csv written");
        runs.push((rep, secs, csv));
    }
    let identical = runs[0].2 == runs[1].2;
    let heads_done = HeadKind::ALL.iter().all(|&k| runs[0].0.aggregate(k).is_some());
    let slowest = runs.iter().map(|r| r.1).fold(0.0, f64::max);
    let order: Vec<String> = {
        let mut agg: Vec<_> = HeadKind::ALL
            .iter()
            .filter_map(|&k| runs[0].0.aggregate(k).map(|r| (k, r.summed_log_prob)))
            .collect();
        agg.sort_by(|a, b| b.1.total_cmp(&a.1));
        agg.iter().map(|(k, v)| format!("{k} {v:.2}")).collect()
    };
    Outcome {
        pass: identical && heads_done && slowest < TABULAR_BUDGET_SECS && settings.folds == 10,
        detail: format!(
            "{} folds x {} heads, slowest run {slowest:.0}s (budget {TABULAR_BUDGET_SECS}s), reruns bit-identical: {identical}; \
             mean held-out summed log-prob per fold: {}",
            settings.folds,
            settings.heads.len(),
            order.join(", ")
        ),
    }
}

fn main() {
    let only: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let wanted = |id: &str| only.as_deref().is_none_or(|o| o == id);
    let mut failures = 0;
    if wanted("1") {
        report("1", "marginal experiment", marginal_experiment(), &mut failures);
    }
    if wanted("2") || wanted("3") {
        let (synth, trend) = synthetic_and_lambda();
        report("2", "synthetic conditional", synth, &mut failures);
        report("3", "lambda trend", trend, &mut failures);
    }
    if wanted("4") {
        report("4", "property suites", property_suites(), &mut failures);
    }
    if wanted("5") {
        report("5", "recovery oracle", recovery_oracle(), &mut failures);
    }
    if wanted("6") {
        report("6", "tabular harness", tabular_harness(), &mut failures);
    }
    println!("acceptance: {failures} criterion line(s) failed");
    if failures > 0 && std::env::var_os("SDP_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
