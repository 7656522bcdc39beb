//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test --release --test acceptance` runs everything; numeric
//! arguments after `--` select criteria. The process exits non-zero on a
//! failed criterion only when `SEMGUARD_STRICT_ACCEPTANCE` is set, so the
//! workspace test run reports failures without aborting.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use semguard::data::{filter_labels, is_odd, procedural_digits};
use semguard::gpdetect::{GpModel, LengthScale};
use semguard::harness::{
    confusion, emit_report, pca2, roc_auc, run_detection, run_hitl, train_codec, write_hitl_outputs, ExperimentConfig,
    Summary,
};
use semguard::hitlrl::{td_loss_and_gradients, DqnAgent, DqnConfig, RlAction, RlState, RlTransition};
use semguard::nncore::{Activation, GradCheck, Mlp, Tensor};
use semguard::rng::{fork, seeded};
use semguard::vae::{
    frozen_loss, loss_and_gradients, reconstruction_mse, train_vae, FrozenNoise, TrainConfig, VaeModel,
};

use common::{dense_predict, gaussian, loop_confusion, max_diff_up_to_sign, pair_auc, svd_pca2};

const FEATURE_CHANGE: &str = include_str!("../../../configs/feature-change.json");
const CHANNEL_CHANGE: &str = include_str!("../../../configs/channel-change.json");
const ADVERSARIAL: &str = include_str!("../../../configs/adversarial.json");
const HITL: &str = include_str!("../../../configs/hitl-rl.json");

/// Emitted CSV files by name.
type Artifacts = BTreeMap<String, Vec<u8>>;

struct Outcome {
    pass: bool,
    detail: String,
    artifacts: Artifacts,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail, artifacts: Artifacts::new() }
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn config(json: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_json(json).expect("shipped config parses");
    cfg.output_dir = None;
    cfg
}

fn csv_files(dir: &Path, prefix: &str) -> Artifacts {
    let mut out = Artifacts::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "csv") {
            let name = format!("{prefix}/{}", path.file_name().unwrap().to_string_lossy());
            out.insert(name, fs::read(&path).unwrap());
        }
    }
    out
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let mut rng = seeded(101);
    let model = VaeModel::new(&mut rng);
    let x = procedural_digits(8, &mut rng).unwrap().images;
    let noise = FrozenNoise::draw(8, 0.1, &mut rng);
    let (_, grads) = loss_and_gradients(&model, &x, &noise).unwrap();
    let params: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let vae = GradCheck::sampled(120, 1).run(
        |p| frozen_loss(&model.with_params(p).unwrap(), &x, &noise).unwrap().total,
        &params,
        &grads.params,
    );
    let input = GradCheck::sampled(200, 2).run(
        |p| frozen_loss(&model, &p[0], &noise).unwrap().total,
        std::slice::from_ref(&x),
        std::slice::from_ref(&grads.input),
    );

    // Random heads rather than the agent's zero-initialized ones, so every layer carries gradient.
    let mut agent = DqnAgent::new(DqnConfig::default(), &mut rng).unwrap();
    agent.online = Mlp::new(&[7, 64, 64, 32], Activation::Relu, Activation::Identity, &mut rng);
    agent.target = Mlp::new(&[7, 64, 64, 32], Activation::Relu, Activation::Identity, &mut rng);
    let state = |rng: &mut semguard::rng::SeedRng| RlState {
        mses: [0; 5].map(|_| rng.random_range(0.01..0.1)),
        sigma_train: 0.3,
        include_even: rng.random(),
    };
    let batch: Vec<RlTransition> = (0..16)
        .map(|i| RlTransition {
            state: state(&mut rng),
            action: RlAction::new(rng.random_range(0..32)).unwrap(),
            reward: rng.random_range(10.0..40.0),
            next_state: state(&mut rng),
            terminal: i % 5 == 4,
        })
        .collect();
    let (_, g) = td_loss_and_gradients(&agent.online, &agent.target, &batch, 0.9, 0.1).unwrap();
    let q_params: Vec<Tensor> = agent.online.params().into_iter().cloned().collect();
    let analytic: Vec<Tensor> = g.flat().into_iter().cloned().collect();
    let td = GradCheck::default().run(
        |p| {
            let mut net = agent.online.clone();
            for (d, s) in net.params_mut().into_iter().zip(p) {
                *d = s.clone();
            }
            td_loss_and_gradients(&net, &agent.target, &batch, 0.9, 0.1).unwrap().0
        },
        &q_params,
        &analytic,
    );
    let worst = vae.max_rel_err.max(input.max_rel_err).max(td.max_rel_err);
    let el = t.elapsed();
    Outcome::new(
        worst < 1e-4 && el < Duration::from_secs(30),
        format!(
            "vae params {:.2e} ({} coords), vae input {:.2e}, td {:.2e} ({} coords), {}",
            vae.max_rel_err,
            vae.checked,
            input.max_rel_err,
            td.max_rel_err,
            td.checked,
            secs(el)
        ),
    )
}

fn gp_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = seeded(202);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let m = rng.random_range(5..=50);
        let d = rng.random_range(2..=20);
        let gp = GpModel::fit(&gaussian(m, d, &mut rng), LengthScale::Median(1.0), 1e-6).unwrap();
        for _ in 0..10 {
            let z: Vec<f64> = (0..d).map(|_| rng.random_range(-2.5..2.5)).collect();
            let p = gp.predict(&z).unwrap();
            let (mean, var) = dense_predict(&gp, &z);
            for (a, b) in p.mean.iter().zip(&mean) {
                worst = worst.max((a - b).abs());
            }
            worst = worst.max((p.variance - var.max(0.0)).abs());
        }
    }
    let el = t.elapsed();
    Outcome::new(worst < 1e-8 && el < Duration::from_secs(10), format!("max deviation {worst:.2e}, {}", secs(el)))
}

fn gp_limits() -> Outcome {
    let mut rng = seeded(303);
    let x = gaussian(300, 20, &mut rng);
    let gp = GpModel::fit(&x, LengthScale::Median(1.0), 1e-6).unwrap();
    let train_max = gp.score_all(&x).unwrap().iter().map(|s| s.score).fold(0.0, f64::max);

    // Far points along random directions, at least 10ℓ from every training point.
    let train = gp.training_points();
    let radius = train.iter_rows().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let mut far_dev: f64 = 0.0;
    for k in 0..50 {
        let dir = gaussian(1, 20, &mut rng);
        let norm = dir.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let dist = radius + (10.0 + k as f64) * gp.length_scale();
        let zs: Vec<f64> = dir.data().iter().map(|v| v / norm * dist).collect();
        let s = gp.standardizer();
        let raw: Vec<f64> = zs.iter().enumerate().map(|(j, v)| v * s.std[j] + s.mean[j]).collect();
        let zs_back = s.apply(&raw);
        let expected = zs_back.iter().map(|v| v * v).sum::<f64>() + 1.0;
        far_dev = far_dev.max((gp.anomaly_score(&raw).unwrap().score - expected).abs());
    }
    Outcome::new(
        train_max <= 1e-3 && far_dev <= 1e-3,
        format!("max training score {train_max:.2e} (λ={}), far deviation {far_dev:.2e}", gp.jitter()),
    )
}

fn smoothed(totals: &[f64]) -> Vec<f64> {
    totals.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect()
}

fn vae_learning() -> Outcome {
    let t = Instant::now();
    let mut rng = seeded(404);
    let mut data_rng = fork(&mut rng);
    let pool = procedural_digits(4400, &mut data_rng).unwrap();
    let odd = filter_labels(&pool, is_odd).unwrap().range(0, 2000).unwrap();
    let cfg = TrainConfig { lr: 1e-3, epochs: 5, batch_size: 128, sigma_train: 0.0 };
    let mut train_rng = fork(&mut rng);
    let untrained = VaeModel::new(&mut train_rng.clone());
    let (model, history) = train_vae(&odd.images, &cfg, &mut train_rng).unwrap();
    let totals: Vec<f64> = history.iter().map(|h| h.total).collect();
    let s = smoothed(&totals);
    let decreasing = s.windows(2).all(|w| w[1] < w[0]);
    let before = reconstruction_mse(&odd.images, &untrained.reconstruct(&odd.images).unwrap());
    let after = reconstruction_mse(&odd.images, &model.reconstruct(&odd.images).unwrap());
    let (_, logvar) = model.encode(&odd.images).unwrap();
    let mean_logvar = logvar.sum() / logvar.len() as f64;
    let el = t.elapsed();
    let mut out = Outcome::new(
        decreasing && after <= 0.5 * before && el < Duration::from_secs(180),
        format!(
            "smoothed loss {:?}, mse {after:.4} vs untrained {before:.4}, mean logvar {mean_logvar:.2}, {}",
            s.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>(),
            secs(el)
        ),
    );
    let mut csv = Vec::new();
    semguard::vae::write_history_csv(&history, &mut csv).unwrap();
    out.artifacts.insert("vae/train_history.csv".into(), csv);
    out
}

/// Trains first, then times the detection pipeline on the saved checkpoint.
fn detection(json: &str, name: &str) -> (Summary, Duration, Duration, Artifacts) {
    let cfg = config(json);
    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let (model, history) = train_codec(&cfg).unwrap();
    let train_time = t.elapsed();
    let ckpt = dir.path().join("vae.sgnn");
    model.to_checkpoint().save(&ckpt).unwrap();
    let mut run_cfg = cfg.clone();
    run_cfg.vae.checkpoint = Some(ckpt);
    let t = Instant::now();
    let mut run = run_detection(&run_cfg).unwrap();
    let run_time = t.elapsed();
    run.report.train_history = history;
    let out = dir.path().join("out");
    emit_report(&run.report, &out).unwrap();
    (Summary::of(&run.report), train_time, run_time, csv_files(&out, name))
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.3}"))
}

fn feature_change() -> Outcome {
    let (s, train, run, artifacts) = detection(FEATURE_CHANGE, "feature-change");
    let pass = s.auc.unwrap_or(0.0) >= 0.95 && s.recall.unwrap_or(0.0) >= 0.9 && run < Duration::from_secs(120);
    let detail = format!(
        "auc {}, recall {}, fpr {}, training {}, detection {}",
        fmt(s.auc),
        fmt(s.recall),
        fmt(s.false_positive_rate),
        secs(train),
        secs(run)
    );
    Outcome { pass, detail, artifacts }
}

fn channel_change() -> Outcome {
    let (s, train, run, artifacts) = detection(CHANNEL_CHANGE, "channel-change");
    let ordered = s.mse_faulty.unwrap_or(0.0) > s.mse_healthy.unwrap_or(f64::INFINITY);
    let pass = s.auc.unwrap_or(0.0) >= 0.7 && ordered;
    let detail = format!(
        "auc {} (floor 0.7), mse rayleigh {} vs awgn {}, training {}, detection {}",
        fmt(s.auc),
        fmt(s.mse_faulty),
        fmt(s.mse_healthy),
        secs(train),
        secs(run)
    );
    Outcome { pass, detail, artifacts }
}

fn adversarial() -> Outcome {
    let (s, train, run, artifacts) = detection(ADVERSARIAL, "adversarial");
    let share = s.attack_ratio_share.unwrap_or(0.0);
    let pass = s.auc.unwrap_or(0.0) >= 0.9 && s.recall.unwrap_or(0.0) >= 0.9 && share >= 0.95;
    let detail = format!(
        "auc {}, recall {}, fpr {}, fgsm ≥ 2× uniform noise on {:.0}% of images, training {}, detection {}",
        fmt(s.auc),
        fmt(s.recall),
        fmt(s.false_positive_rate),
        share * 100.0,
        secs(train),
        secs(run)
    );
    Outcome { pass, detail, artifacts }
}

fn hitl() -> Outcome {
    let mut artifacts = Artifacts::new();
    let (mut wins, mut even) = (0, 0);
    let mut slowest = Duration::ZERO;
    let mut parts = Vec::new();
    for seed in 0..3 {
        let mut cfg = config(HITL);
        cfg.seed = seed;
        let t = Instant::now();
        let report = run_hitl(&cfg, None).unwrap();
        slowest = slowest.max(t.elapsed());
        let (first, last) = (report.first_window_mean(), report.last_window_mean());
        let greedy = report.history.final_greedy;
        wins += usize::from(last > first);
        even += usize::from(greedy.include_even());
        parts.push(format!("seed {seed}: {first:.2} → {last:.2}, greedy {}", greedy.index()));
        let dir = tempfile::tempdir().unwrap();
        write_hitl_outputs(&report, dir.path()).unwrap();
        artifacts.extend(csv_files(dir.path(), &format!("hitl-{seed}")));
    }
    let pass = wins >= 2 && even == 3 && slowest < Duration::from_secs(900);
    let detail = format!(
        "improved {wins}/3, include_even greedy {even}/3, slowest seed {}; {}",
        secs(slowest),
        parts.join("; ")
    );
    Outcome { pass, detail, artifacts }
}

fn metrics_oracles() -> Outcome {
    let mut rng = seeded(1010);
    let (mut auc_dev, mut conf_ok, mut pca_dev) = (0.0f64, true, 0.0f64);
    for n in [2usize, 3, 10, 57, 200, 500] {
        for _ in 0..5 {
            let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..30u8)) / 7.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            labels[0] = true;
            labels[n - 1] = false;
            let (_, auc) = roc_auc(&scores, &labels).unwrap();
            auc_dev = auc_dev.max((auc - pair_auc(&scores, &labels)).abs());
            for t in [-1.0, 0.5, 1.0, 2.0, 5.0] {
                conf_ok &= confusion(&scores, &labels, t) == loop_confusion(&scores, &labels, t);
            }
        }
    }
    for (n, d) in [(30, 20), (800, 20), (50, 4)] {
        let raw = gaussian(n, d, &mut rng);
        let x = Tensor::from_fn(n, d, |r, c| raw.get(r, c) * (4.0 / (1.0 + c as f64) + 0.5));
        let p = pca2(&x).unwrap();
        let o = svd_pca2(&x);
        for k in 0..2 {
            pca_dev = pca_dev.max(max_diff_up_to_sign(&p.components[k], &o.components[k]));
            let ours: Vec<f64> = (0..n).map(|r| p.coords.get(r, k)).collect();
            let theirs: Vec<f64> = o.coords.iter().map(|c| c[k]).collect();
            pca_dev = pca_dev.max(max_diff_up_to_sign(&ours, &theirs));
        }
    }
    Outcome::new(
        auc_dev < 1e-10 && conf_ok && pca_dev < 1e-8,
        format!(
            "auc deviation {auc_dev:.1e}, confusion recount {}, pca deviation {pca_dev:.1e}",
            if conf_ok { "equal" } else { "differs" }
        ),
    )
}

type Criterion = (usize, &'static str, fn() -> Outcome);

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let criteria: [Criterion; 9] = [
        (1, "gradient correctness", gradients),
        (2, "gp oracle equivalence", gp_oracle),
        (3, "gp limit behavior", gp_limits),
        (4, "vae learning", vae_learning),
        (5, "feature-change detection", feature_change),
        (6, "channel-change detection", channel_change),
        (7, "adversarial detection", adversarial),
        (8, "hitl-rl trend", hitl),
        (10, "metrics oracles", metrics_oracles),
    ];
    let mut failed = 0;
    let mut report = |n: usize, name: &str, o: &Outcome| {
        failed += usize::from(!o.pass);
        println!("criterion {n:>2} {:<26} {}  {}", name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };
    let mut first_pass = Artifacts::new();
    let mut reruns: Vec<fn() -> Outcome> = Vec::new();
    for (n, name, f) in criteria {
        if !wanted(n) {
            continue;
        }
        let o = f();
        report(n, name, &o);
        if (4..=8).contains(&n) {
            first_pass.extend(o.artifacts);
            reruns.push(f);
        }
    }
    if wanted(9) && !reruns.is_empty() {
        let mut second = Artifacts::new();
        for f in reruns {
            second.extend(f().artifacts);
        }
        let differing: Vec<&String> =
            first_pass.iter().filter(|(k, v)| second.get(*k) != Some(v)).map(|(k, _)| k).collect();
        let pass = !first_pass.is_empty() && differing.is_empty() && first_pass.len() == second.len();
        let detail = if pass {
            format!("{} csv files byte-identical across reruns", first_pass.len())
        } else {
            format!("differing: {differing:?}")
        };
        report(9, "determinism", &Outcome::new(pass, detail));
    }
    if failed > 0 && std::env::var_os("SEMGUARD_STRICT_ACCEPTANCE").is_some() {
        std::process::exit(1);
    }
}
