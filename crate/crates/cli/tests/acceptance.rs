//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Datasets are read from `$ACAE_DATA_DIR` (default `<workspace>/data`), laid
//! out as `scripts/fetch_data.sh` leaves them. Set `ACAE_ACCEPTANCE_STRICT=1`
//! to exit non-zero on any failure and `ACAE_RUN_LONG=1` to include the
//! multi-hour MovieLens-1M reproduction.

#[path = "../../core/tests/support/gradcheck.rs"]
mod gradcheck;
mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use acae_core::data::{binarize, parse_log, split_leave_one_out, validation_split, BinarizeMode, ColumnRoles, LogFormat};
use acae_core::evaluation::{evaluate, evaluate_scorer, itempop, noise_impact_probe, robustness_sweep, user_metrics, Scorer};
use acae_core::gradients::{loss_and_grads, make_adversarial_noise, noise_grad};
use acae_core::numerics::{frobenius_norm, gaussian_fill, scale_to_norm};
use acae_core::training::{adversarial_step, adversarial_train, init_params, pretrain, TrainerState, TrainingData};
use acae_core::{
    ActivationKind, AdvConfig, BinaryDataset, Example, Matrix, ModelParams, NoiseKind, NoiseSite, PretrainConfig,
    RngStream, SplitSpec,
};

// Tolerances and budgets.
const C1_BUDGET: Duration = Duration::from_secs(60);
const C4_HR5: f64 = 0.3101;
const C4_NDCG5: f64 = 0.2127;
const C4_TOL: f64 = 0.02;
const C4_BUDGET: Duration = Duration::from_secs(300);
const C5_HR5_BAND: (f64, f64) = (0.78, 0.84);
const C5_MIN_GAIN: f64 = 0.01;
const C5_TRAIN_EPS: f64 = 0.5;
const C5_BUDGET: Duration = Duration::from_secs(20 * 60);
const C6_TEST_EPS: f64 = 8.0;
const C6_TRAIN_EPS: [f64; 3] = [1.0, 7.0, 15.0];
const C6_MIN_WO_DROP: f64 = 0.10;
const C7_PROBE_EPS: f64 = 1.0;
const C7_SMALL_SITE_DROP: f64 = 0.02;
const C7_GAUSSIAN_DROP: f64 = 0.01;
const C7_TRIALS: usize = 10;
const C10_HR5: f64 = 0.58;
const C10_NDCG5: f64 = 0.43;

struct Outcome {
    pass: bool,
    detail: String,
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome { pass: false, detail: detail.into() }
}

fn check(cond: bool, detail: String) -> Outcome {
    Outcome { pass: cond, detail }
}

fn data_dir() -> PathBuf {
    std::env::var_os("ACAE_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

/// A binarized dataset with its test and validation leave-one-out splits.
struct Prepared {
    ds: BinaryDataset,
    test: SplitSpec,
    validation: SplitSpec,
}

fn prepare(file: &str, format: LogFormat, roles: ColumnRoles, threshold: f64, seed: u64) -> Result<Prepared, String> {
    let path = data_dir().join(file);
    if !path.is_file() {
        return Err(format!("{} not found (see scripts/fetch_data.sh)", path.display()));
    }
    let log = parse_log(&path, format, roles).map_err(|e| e.to_string())?;
    let ds = binarize(&log, threshold, BinarizeMode::AboveIsOne).dataset;
    let test = split_leave_one_out(&ds, seed, 200).map_err(|e| e.to_string())?;
    let validation = validation_split(&ds, &test, seed + 1, 200).map_err(|e| e.to_string())?;
    Ok(Prepared { ds, test, validation })
}

fn movielens() -> Result<Prepared, String> {
    prepare("ml-1m/ratings.dat", LogFormat::DoubleColon, ColumnRoles::default(), 3.0, 0)
}

fn filmtrust() -> Result<Prepared, String> {
    let roles = ColumnRoles {
        timestamp: None,
        ..ColumnRoles::default()
    };
    prepare("filmtrust/ratings.txt", LogFormat::Whitespace, roles, 2.0, 0)
}

/// Uniform scores from a hash of (seed, user, item).
struct RandomScorer {
    seed: u64,
}

impl Scorer for RandomScorer {
    fn score(&self, user: usize, _profile: &[usize], candidates: &[usize], out: &mut Vec<f64>) {
        out.clear();
        out.extend(candidates.iter().map(|&i| {
            let mut z = self.seed ^ ((user as u64) << 32) ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 53) as f64
        }));
    }
}

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let (compared, bad) = gradcheck::full_suite(0..4);
    let elapsed = t.elapsed();
    let detail = format!(
        "{compared} coordinates (params + 4 noise sites, 4 activation configs), {} mismatches, {:.1}s",
        bad.len(),
        elapsed.as_secs_f64()
    );
    check(bad.is_empty() && elapsed < C1_BUDGET, detail)
}

fn c2_direction() -> Outcome {
    let mut trials = 0;
    let mut violations = 0;
    for (c, &(enc, dec)) in gradcheck::ACTIVATIONS.iter().enumerate() {
        let inst = gradcheck::Instance::new(500 + c as u64, 6, 12, 4, enc, dec);
        let batch = inst.batch();
        let mut rng = RngStream::new(77 + c as u64);
        for site in NoiseSite::ALL {
            let g = noise_grad(&inst.params, &batch, site).unwrap();
            let eps = 1.0 + c as f64;
            let adv = make_adversarial_noise(&inst.params, &batch, site, eps).unwrap();
            let best = g.dot(&adv.values).unwrap();
            let (r, cols) = site.shape(&inst.params);
            for _ in 0..1000 {
                let n = scale_to_norm(&gaussian_fill(r, cols, 1.0, &mut rng), eps);
                trials += 1;
                violations += (g.dot(&n).unwrap() > best) as usize;
            }
            if frobenius_norm(&g) < 1e-12 {
                violations += 1;
            }
        }
    }
    check(
        violations == 0,
        format!("{violations} of {trials} random same-norm tensors beat the fast-gradient direction"),
    )
}

fn c3_metrics() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    // Invariants on a random model over MovieLens when present, else synthetic.
    let (params, split) = match movielens() {
        Ok(p) => {
            let mut rng = RngStream::new(3);
            let params = init_params(
                p.ds.user_count(),
                p.ds.item_count(),
                16,
                ActivationKind::Sigmoid,
                ActivationKind::Sigmoid,
                0.5,
                &mut rng,
            )
            .unwrap();
            notes.push("invariants on MovieLens-1M".to_string());
            (params, p.test)
        }
        Err(_) => {
            let mut rng = RngStream::new(3);
            let positives: Vec<Vec<usize>> = (0..300)
                .map(|_| {
                    let n = 2 + rng.below(30);
                    rng.sample_indices(500, n)
                })
                .collect();
            let ds = BinaryDataset::from_positives(500, positives, None).unwrap();
            let split = split_leave_one_out(&ds, 1, 200).unwrap();
            let params = init_params(300, 500, 8, ActivationKind::Sigmoid, ActivationKind::Sigmoid, 0.5, &mut rng).unwrap();
            notes.push("invariants on synthetic data".to_string());
            (params, split)
        }
    };
    let cutoffs: Vec<usize> = (1..=20).collect();
    let scorer = acae_core::evaluation::ModelScorer::new(&params, None).unwrap();
    let mut per_user_bad = 0;
    for (u, s) in split.tested_users() {
        let m = user_metrics(&scorer, u, &s.train, s.held_out.unwrap(), &s.negatives, &cutoffs);
        per_user_bad += m.iter().filter(|(h, g)| *g > *h as f64).count();
        per_user_bad += m.windows(2).filter(|w| w[1].0 < w[0].0 || w[1].1 < w[0].1).count();
    }
    let r = evaluate(&params, &split, &cutoffs).unwrap();
    let avg_bad = r.cutoffs.iter().filter(|c| c.ndcg > c.hr).count()
        + r.cutoffs.windows(2).filter(|w| w[1].hr < w[0].hr || w[1].ndcg < w[0].ndcg).count();
    ok &= per_user_bad == 0 && avg_bad == 0;
    notes.push(format!("{per_user_bad} per-user and {avg_bad} averaged violations"));

    match filmtrust() {
        Ok(p) => {
            let rep = evaluate_scorer(&RandomScorer { seed: 11 }, &p.test, &[5]);
            let prob = 5.0 / 201.0;
            let sigma = (prob * (1.0 - prob) / rep.users as f64).sqrt();
            let inside = (rep.hr(5) - prob).abs() <= 3.0 * sigma;
            ok &= inside;
            notes.push(format!(
                "FilmTrust random HR@5 {:.4} vs {:.4} +/- {:.4}",
                rep.hr(5),
                prob,
                3.0 * sigma
            ));
        }
        Err(e) => {
            ok = false;
            notes.push(format!("random-scorer band needs FilmTrust: {e}"));
        }
    }
    check(ok, notes.join("; "))
}

fn c4_itempop() -> Outcome {
    let t = Instant::now();
    let p = match movielens() {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let r = itempop(&p.test, &[5, 10]);
    let elapsed = t.elapsed();
    let (hr, ndcg) = (r.hr(5), r.ndcg(5));
    check(
        (hr - C4_HR5).abs() <= C4_TOL && (ndcg - C4_NDCG5).abs() <= C4_TOL && elapsed < C4_BUDGET,
        format!(
            "HR@5 {hr:.4} (want {C4_HR5} +/- {C4_TOL}), NDCG@5 {ndcg:.4} (want {C4_NDCG5} +/- {C4_TOL}), {} users, {:.1}s",
            r.users,
            elapsed.as_secs_f64()
        ),
    )
}

fn filmtrust_pretrain_config() -> PretrainConfig {
    PretrainConfig {
        learning_rate: 0.01,
        batch_size: 128,
        max_epochs: 300,
        gamma: 1e-4,
        init_std: 0.01,
        eval_every: 5,
        patience: 10,
        input_drop: 0.0,
        seed: 0,
    }
}

fn filmtrust_adv_config(epsilon: f64) -> AdvConfig {
    AdvConfig {
        epsilon,
        lambdas: vec![(NoiseSite::EncoderWeights, 1.0), (NoiseSite::DecoderWeights, 1.0)],
        adagrad_base_rate: 0.01,
        batch_size: 128,
        max_epochs: 300,
        eval_every: 5,
        patience: 10,
        seed: 1,
    }
}

/// FilmTrust data plus its pre-trained CAE, shared by criteria 5 to 7.
struct FilmTrustRun {
    data: Prepared,
    pre: ModelParams,
}

fn filmtrust_pretrained() -> Result<FilmTrustRun, String> {
    let data = filmtrust()?;
    let cfg = filmtrust_pretrain_config();
    let mut rng = RngStream::with_stream(cfg.seed, 1);
    let init = init_params(
        data.ds.user_count(),
        data.ds.item_count(),
        64,
        ActivationKind::Sigmoid,
        ActivationKind::Sigmoid,
        cfg.init_std,
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    let pre = pretrain(init, &TrainingData::new(&data.validation), &cfg)
        .map_err(|e| e.to_string())?
        .params;
    Ok(FilmTrustRun { data, pre })
}

fn adversarially_trained(run: &FilmTrustRun, epsilon: f64) -> ModelParams {
    let data = TrainingData::new(&run.data.validation);
    adversarial_train(run.pre.clone(), &data, &filmtrust_adv_config(epsilon), 1e-4)
        .expect("adversarial training")
        .params
}

fn c5_filmtrust(run: &Result<FilmTrustRun, String>, started: Instant) -> (Outcome, Option<ModelParams>) {
    let run = match run {
        Ok(r) => r,
        Err(e) => return (fail(e.clone()), None),
    };
    let pre_hr = evaluate(&run.pre, &run.data.test, &[5]).unwrap().hr(5);
    let adv = adversarially_trained(run, C5_TRAIN_EPS);
    let adv_hr = evaluate(&adv, &run.data.test, &[5]).unwrap().hr(5);
    let elapsed = started.elapsed();
    let out = check(
        (C5_HR5_BAND.0..=C5_HR5_BAND.1).contains(&pre_hr) && adv_hr - pre_hr >= C5_MIN_GAIN && elapsed < C5_BUDGET,
        format!(
            "pre-trained HR@5 {pre_hr:.4} (want {:?}), adversarial {adv_hr:.4} (gain {:+.4}, want >= {C5_MIN_GAIN}), {:.0}s",
            C5_HR5_BAND,
            adv_hr - pre_hr,
            elapsed.as_secs_f64()
        ),
    );
    (out, Some(adv))
}

fn c6_robustness(run: &Result<FilmTrustRun, String>) -> Outcome {
    let run = match run {
        Ok(r) => r,
        Err(e) => return fail(e.clone()),
    };
    let drop_at = |p: &ModelParams| {
        robustness_sweep(p, &run.data.test, NoiseSite::DecoderWeights, &[C6_TEST_EPS])
            .unwrap()
            .relative_hr_drop(C6_TEST_EPS)
            .unwrap()
    };
    let mut drops = vec![drop_at(&run.pre)];
    for eps in C6_TRAIN_EPS {
        drops.push(drop_at(&adversarially_trained(run, eps)));
    }
    let decreasing = drops.windows(2).all(|w| w[1] < w[0]);
    let wo = drops[0];
    let last = *drops.last().unwrap();
    let shown: Vec<String> = drops.iter().map(|d| format!("{:.2}%", 100.0 * d)).collect();
    check(
        decreasing && wo > C6_MIN_WO_DROP && last <= wo / 2.0,
        format!("HR@5 drop at eps={C6_TEST_EPS} for training eps W/O,1,7,15: {}", shown.join(", ")),
    )
}

fn c7_noise_impact(run: &Result<FilmTrustRun, String>) -> Outcome {
    let run = match run {
        Ok(r) => r,
        Err(e) => return fail(e.clone()),
    };
    let cases: Vec<(NoiseSite, NoiseKind)> = NoiseSite::ALL
        .iter()
        .flat_map(|&s| [(s, NoiseKind::Gaussian), (s, NoiseKind::Adversarial)])
        .collect();
    let mut rng = RngStream::new(5);
    let curves = noise_impact_probe(&run.pre, &run.data.test, &cases, &[C7_PROBE_EPS], C7_TRIALS, &mut rng).unwrap();
    let drop = |site: NoiseSite, kind: NoiseKind| {
        curves
            .iter()
            .find(|c| c.site == site && c.kind == kind)
            .and_then(|c| c.relative_hr_drop(C7_PROBE_EPS))
            .unwrap()
    };
    let adv = |s| drop(s, NoiseKind::Adversarial);
    let ordering = adv(NoiseSite::DecoderWeights) > adv(NoiseSite::EncoderWeights);
    let small = adv(NoiseSite::UserEmbedding) < C7_SMALL_SITE_DROP && adv(NoiseSite::HiddenLayer) < C7_SMALL_SITE_DROP;
    let gaussian = NoiseSite::ALL.iter().all(|&s| drop(s, NoiseKind::Gaussian) < C7_GAUSSIAN_DROP);
    let shown: Vec<String> = cases
        .iter()
        .map(|&(s, k)| format!("{}/{} {:.2}%", s.name(), k.name(), 100.0 * drop(s, k)))
        .collect();
    check(ordering && small && gaussian, format!("eps={C7_PROBE_EPS}: {}", shown.join(", ")))
}

/// Independent Adagrad: `acc += g^2; theta -= rate * g / (sqrt(acc) + 1e-8)`.
fn reference_adagrad(params: &mut ModelParams, acc: &mut [Matrix], grads: [&Matrix; 5], rate: f64) {
    for ((p, a), g) in params.tensors_mut().into_iter().zip(acc.iter_mut()).zip(grads) {
        let (p, a, g) = (p.as_mut_slice(), a.as_mut_slice(), g.as_slice());
        for j in 0..p.len() {
            a[j] += g[j] * g[j];
            p[j] -= rate * g[j] / (a[j].sqrt() + 1e-8);
        }
    }
}

fn c8_degenerate() -> Outcome {
    let w = gradcheck::Instance::new(8, 6, 12, 4, ActivationKind::Sigmoid, ActivationKind::Identity);
    let mut rng = RngStream::new(8);
    let users: Vec<usize> = (0..6).collect();
    let cfg = AdvConfig {
        epsilon: 0.0,
        lambdas: NoiseSite::ALL.iter().map(|&s| (s, 0.0)).collect(),
        ..AdvConfig::default()
    };
    let gamma = 1e-3;
    let mut state = TrainerState::with_adagrad(w.params.clone(), 0);
    let mut plain = w.params.clone();
    let mut acc: Vec<Matrix> = plain.tensors().iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
    let mut steps = 0;
    let mut mismatched = 0;
    for _ in 0..50 {
        let mut order = users.clone();
        rng.shuffle(&mut order);
        let batch: Vec<Example> = order[..3].iter().map(|&u| Example::new(u, &w.profiles[u])).collect();
        adversarial_step(&mut state, &batch, &cfg, gamma).unwrap();
        let (_, g) = loss_and_grads(&plain, &batch, &[], gamma).unwrap();
        reference_adagrad(&mut plain, &mut acc, g.tensors(), cfg.adagrad_base_rate);
        steps += 1;
        let same = state
            .params
            .tensors()
            .iter()
            .zip(plain.tensors())
            .all(|(a, b)| a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
        mismatched += (!same) as usize;
    }
    check(mismatched == 0, format!("{mismatched} of {steps} steps differ from plain Adagrad bit-wise"))
}

fn c9_determinism() -> Outcome {
    use common::{ok, snapshot, write_config, write_movielens};
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ratings.dat");
    write_movielens(&data, 40, 50);
    let cfg = write_config(dir.path(), &data);
    let c = cfg.to_str().unwrap();
    let out = dir.path().join("out");
    let run_all = || {
        ok(&["--config", c, "prepare"]);
        ok(&["--config", c, "train", "--quiet"]);
        let a = out.join("adv.ckpt");
        let a = a.to_str().unwrap();
        ok(&["--config", c, "eval", "--checkpoint", a]);
        ok(&["--config", c, "robustness", "--checkpoint", a]);
        ok(&["--config", c, "probe", "--checkpoint", a, "--trials", "3"]);
        ok(&["--config", c, "itempop"]);
        ok(&["--config", c, "sweep", "--grid", "adversarial.epsilon=0.5,2", "--set", "adversarial.max_epochs=2"]);
        snapshot(&out)
    };
    let first = run_all();
    let second = run_all();
    let differing: Vec<String> = first
        .iter()
        .filter(|(k, v)| second.get(*k) != Some(v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    check(
        differing.is_empty() && first.len() == second.len(),
        format!("{} output files compared across two runs of every command, {} differ {:?}", first.len(), differing.len(), differing),
    )
}

fn c10_long() -> Option<Outcome> {
    if std::env::var("ACAE_RUN_LONG").ok().as_deref() != Some("1") {
        return None;
    }
    let p = match movielens() {
        Ok(p) => p,
        Err(e) => return Some(fail(e)),
    };
    let pcfg = PretrainConfig {
        max_epochs: 500,
        eval_every: 5,
        ..PretrainConfig::default()
    };
    let mut rng = RngStream::with_stream(0, 1);
    let init = init_params(
        p.ds.user_count(),
        p.ds.item_count(),
        64,
        ActivationKind::Sigmoid,
        ActivationKind::Sigmoid,
        pcfg.init_std,
        &mut rng,
    )
    .unwrap();
    let data = TrainingData::new(&p.validation);
    let pre = pretrain(init, &data, &pcfg).unwrap().params;
    let acfg = AdvConfig {
        eval_every: 5,
        ..AdvConfig::default()
    };
    let adv = adversarial_train(pre, &data, &acfg, pcfg.gamma).unwrap().params;
    let r = evaluate(&adv, &p.test, &[5]).unwrap();
    Some(check(
        r.hr(5) >= C10_HR5 && r.ndcg(5) >= C10_NDCG5,
        format!("ACAE HR@5 {:.4} (want >= {C10_HR5}), NDCG@5 {:.4} (want >= {C10_NDCG5})", r.hr(5), r.ndcg(5)),
    ))
}

fn main() {
    // Ignore harness flags such as `--nocapture` or a test-name filter.
    let mut results: Vec<(usize, &str, Option<Outcome>)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Option<Outcome>| {
        match &o {
            Some(o) => println!("[{}] {n}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail),
            None => println!("[SKIP] {n}. {name}: optional, set ACAE_RUN_LONG=1"),
        }
        results.push((n, name, o));
    };
    report(1, "gradient oracle", Some(c1_gradients()));
    report(2, "adversarial direction optimality", Some(c2_direction()));
    report(3, "metric invariants", Some(c3_metrics()));
    report(4, "ItemPop on MovieLens-1M", Some(c4_itempop()));
    let started = Instant::now();
    let film = filmtrust_pretrained();
    let (c5, _) = c5_filmtrust(&film, started);
    report(5, "FilmTrust end-to-end", Some(c5));
    report(6, "robustness ordering", Some(c6_robustness(&film)));
    report(7, "noise-impact ordering", Some(c7_noise_impact(&film)));
    report(8, "degenerate minimax equals Adagrad", Some(c8_degenerate()));
    report(9, "CLI determinism", Some(c9_determinism()));
    report(10, "MovieLens-1M reproduction", c10_long());

    let failed: Vec<usize> = results
        .iter()
        .filter(|(_, _, o)| o.as_ref().is_some_and(|o| !o.pass))
        .map(|(n, _, _)| *n)
        .collect();
    let ran = results.iter().filter(|(_, _, o)| o.is_some()).count();
    println!("acceptance: {} of {ran} passed, failed {:?}", ran - failed.len(), failed);
    if std::env::var("ACAE_ACCEPTANCE_STRICT").ok().as_deref() == Some("1") && !failed.is_empty() {
        std::process::exit(1);
    }
}
