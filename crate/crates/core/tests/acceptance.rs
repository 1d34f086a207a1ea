//! Acceptance criteria. Each criterion writes one `criterion N ... PASS|FAIL`
//! line to stderr (bypassing test capture).
//!
//! Criteria 1 and 2 are exact and fail the test when violated. Criteria 3 to 8
//! are empirical reproductions; they report but only fail the test when
//! `GNOCCHI_ACCEPTANCE_STRICT` is set.
//!
//! `GNOCCHI_ACCEPTANCE_CACHE=<dir>` reuses the trained world and models from
//! an earlier run with the same configuration.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gnocchi::analysis::{finite_mean, NavigationMap, TARGET_X, TARGET_Y};
use gnocchi::diffusion::{
    loss_and_grad as gnocchi_loss_and_grad, evaluate_loss as gnocchi_evaluate_loss, mmd, rbf_kernel,
    DiffusionSchedule, GnocchiModel, GnocchiParams, LossWeights, StepDraws,
};
use gnocchi::experiment::{
    build_world, code_snr_report, compare_models, conditional_generation, evaluate_model, fit_decoder, heldout_split,
    train_pair, unconditional_span, World,
};
use gnocchi::io::{
    dataset_from_container, dataset_to_container, load_controller, load_dataset, load_gnocchi, load_lfads,
    load_vectors, save_controller, save_dataset, save_gnocchi, save_lfads, save_vectors, Container, ExperimentConfig,
    Tensor,
};
use gnocchi::lfads::{
    evaluate_loss as lfads_evaluate_loss, kl_to_prior, loss_and_grad as lfads_loss_and_grad, IcPrior, LfadsDraws,
    LfadsModel, LfadsParams,
};
use gnocchi::nn::{grad_check, BiGru, GradCheckOptions, Gru, Linear};
use gnocchi::synth::{
    batch_loss_and_grad, ArmParams, ControllerLog, ControllerPolicy, Grid, GridIndex, Split, TrialSpec, N_MUSCLES,
};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn line(text: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{text}");
}

fn verdict(n: usize, name: &str, pass: bool, detail: &str) -> bool {
    line(&format!(
        "criterion {n} [{}] {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    ));
    pass
}

fn normal3(shape: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Array3<f64> {
    Array3::from_shape_simple_fn(shape, || StandardNormal.sample(rng))
}

fn normal2(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || StandardNormal.sample(rng))
}

// ---- criterion 1 -------------------------------------------------------

fn exactness() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut notes = Vec::new();
    let mut failed: Vec<&str> = Vec::new();
    let mut check = |name: &'static str, cond: bool| {
        if !cond && !failed.contains(&name) {
            failed.push(name);
        }
    };

    let sched = DiffusionSchedule::linear(200, 1e-3, 1e-2).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x0 = normal3((40, 1, 8), &mut rng).mapv(|v| f64::from(v as f32));
        let eps = normal3((40, 1, 8), &mut rng).mapv(|v| f64::from(v as f32));
        let i = rng.random_range(1..=200);
        let xt = sched.forward_noise(x0.view(), i, eps.view()).unwrap();
        let back = sched.reconstruct_x0(xt.view(), eps.view(), i).unwrap();
        worst = worst.max((&back - &x0).iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    check("inverse", worst < 1e-6);
    notes.push(format!("inverse max err {worst:.1e}"));

    for n in [2usize, 50, 200, 500] {
        let s = DiffusionSchedule::linear(n, 1e-3, 1e-2).unwrap();
        let mut prod = 1.0;
        for i in 1..=n {
            prod *= 1.0 - s.beta(i);
            check("alpha_bar product", (s.alpha_bar(i) - prod).abs() < 1e-12);
            check("alpha_bar range", s.alpha_bar(i) > 0.0 && s.alpha_bar(i) < 1.0);
            check("beta range", (1e-3..=1e-2).contains(&s.beta(i)));
            if i > 1 {
                check("monotone schedule", s.beta(i) > s.beta(i - 1) && s.alpha_bar(i) < s.alpha_bar(i - 1));
            }
        }
    }
    check(
        "schedule validation",
        DiffusionSchedule::linear(1, 1e-3, 1e-2).is_err() && DiffusionSchedule::linear(10, 0.0, 1e-2).is_err(),
    );

    let x = normal2((32, 5), &mut rng);
    check("mmd self", mmd(x.view(), x.view(), 10.0).abs() < 1e-12);
    for a in x.rows() {
        for b in x.rows() {
            let k = rbf_kernel(a, b, 10.0);
            check("rbf bounds", k > 0.0 && k <= 1.0);
        }
        check("rbf diagonal", rbf_kernel(a, a, 10.0) == 1.0);
    }

    let codes = normal2((60, 5), &mut rng);
    let behavior = normal2((60, 4), &mut rng);
    let mut map = NavigationMap::fit(codes.view(), behavior.view()).unwrap();
    map.step = 0.3;
    check("navigate zero", map.navigate(TARGET_X, 0.0, 1.0).unwrap() == map.anchor);
    let a = map.predict(map.anchor.view().insert_axis(ndarray::Axis(0)));
    for j in [TARGET_X, TARGET_Y] {
        let c = map.navigate(j, 2.0, 1.0).unwrap();
        let p = map.predict(c.view().insert_axis(ndarray::Axis(0)));
        let want = map.w.dot(&map.w.row(j)) * (2.0 * 0.3);
        check("navigate shift", (&(&p - &a).row(0) - &want).iter().all(|d| d.abs() < 1e-10));
        let back = map.navigate(j, 2.0, -1.0).unwrap();
        check("navigate symmetry", ((&back + &c) / 2.0 - &map.anchor).iter().all(|d| d.abs() < 1e-12));
    }

    let prior = IcPrior::default();
    let mu = [0.4, -0.2, 0.0, 0.1, 0.3];
    let var = [0.05, 0.2, 0.1, 0.02, 0.15];
    let kl = kl_to_prior(&mu, &var, &prior);
    let n = 100_000;
    let mut mc = 0.0;
    for _ in 0..n {
        for d in 0..5 {
            let e: f64 = StandardNormal.sample(&mut rng);
            let z = mu[d] + var[d].sqrt() * e;
            let logq = -0.5 * ((z - mu[d]).powi(2) / var[d] + var[d].ln());
            let logp = -0.5 * ((z - prior.mean).powi(2) / prior.variance + prior.variance.ln());
            mc += logq - logp;
        }
    }
    mc /= n as f64;
    check("kl", ((mc - kl) / kl).abs() < 0.01);
    notes.push(format!("KL {kl:.4} vs MC {mc:.4}"));

    let ds = tiny_dataset(&mut rng);
    let bytes = dataset_to_container(&ds).unwrap().to_bytes().unwrap();
    let back = dataset_from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
    check("dataset round trip", back == ds);
    let mut c = Container::new("bits", Default::default());
    let raw: Vec<f32> = (0..4096).map(|_| f32::from_bits(rng.random())).collect();
    c.insert("t", Tensor::f32(vec![64, 64], raw.clone()));
    let back = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
    let got = back.tensor("t").unwrap().as_f32().unwrap();
    check("f32 bits", got.iter().zip(&raw).all(|(a, b)| a.to_bits() == b.to_bits()));
    let mut corrupt = bytes.clone();
    let last = corrupt.len() - 1;
    corrupt[last] ^= 1;
    check("corruption detected", Container::from_bytes(&corrupt).is_err());

    if !failed.is_empty() {
        notes.push(format!("failed: {}", failed.join(" ")));
    }
    (failed.is_empty(), notes.join(", "))
}

fn tiny_dataset(rng: &mut ChaCha8Rng) -> gnocchi::synth::TrialDataset {
    let mut ds = gnocchi::synth::TrialDataset::empty(Grid::default(), 4, 3);
    let n = 6;
    ds.activity = Array3::from_shape_simple_fn((n, 4, 3), || rng.random::<f32>());
    ds.behavior = Array2::from_shape_simple_fn((n, 4), || rng.random::<f32>());
    ds.endpoints = Array3::from_shape_simple_fn((n, 4, 2), || rng.random::<f32>());
    ds.trials = (0..n)
        .map(|k| gnocchi::synth::TrialMeta {
            start: GridIndex { ix: k % 6, iy: 0 },
            target: GridIndex { ix: 1, iy: k % 6 },
            target_onset: 10,
            go_cue: 30 + k,
            split: if k % 2 == 0 { Split::Train } else { Split::Valid },
            seed: rng.random(),
        })
        .collect();
    ds
}

// ---- criterion 2 -------------------------------------------------------

fn gradient_oracle() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let opts = GradCheckOptions::default();
    let mut results: Vec<(&str, f64)> = Vec::new();

    let lin = Linear::new(4, 3, &mut rng);
    let x = normal2((5, 4), &mut rng);
    let w = normal2((5, 3), &mut rng);
    let mut g = Linear::zeros(4, 3);
    lin.backward(x.view(), w.view(), &mut g);
    let r = grad_check(&lin, &g, |p| (p.forward(x.view()) * &w).sum(), opts).unwrap();
    results.push(("linear", r.max_rel_error));

    let gru = Gru::new(3, 4, &mut rng);
    let x = normal3((6, 2, 3), &mut rng);
    let h0 = normal2((2, 4), &mut rng) * 0.3;
    let w = normal3((6, 2, 4), &mut rng);
    let (_, cache) = gru.forward(x.view(), h0.view()).unwrap();
    let mut g = Gru::zeros(3, 4);
    gru.backward(&cache, w.view(), &mut g, false);
    let r = grad_check(&gru, &g, |p| (p.forward(x.view(), h0.view()).unwrap().0 * &w).sum(), opts).unwrap();
    results.push(("gru", r.max_rel_error));

    let bi = BiGru::new(3, 4, &mut rng);
    let wf = normal3((6, 2, 4), &mut rng);
    let wb = normal3((6, 2, 4), &mut rng);
    let (_, _, cache) = bi.forward(x.view()).unwrap();
    let mut g = BiGru::zeros(3, 4);
    bi.backward(&cache, wf.view(), wb.view(), &mut g, false);
    let r = grad_check(
        &bi,
        &g,
        |p| {
            let (f, b, _) = p.forward(x.view()).unwrap();
            (f * &wf).sum() + (b * &wb).sum()
        },
        opts,
    )
    .unwrap();
    results.push(("bigru", r.max_rel_error));

    // Full GNOCCHI objective covers the auxiliary encoder and noise predictor.
    let params = GnocchiParams::new(3, 2, 3, 4, 5, &mut rng);
    let sched = DiffusionSchedule::linear(20, 1e-3, 0.2).unwrap();
    let x0 = normal3((5, 4, 3), &mut rng);
    let draws = StepDraws::sample(&params, &sched, (5, 4), (0.2, 0.1), &mut rng);
    let wts = LossWeights::default();
    let (_, g) = gnocchi_loss_and_grad(&params, &sched, &wts, x0.view(), &draws).unwrap();
    let r = grad_check(
        &params,
        &g,
        |p| gnocchi_evaluate_loss(p, &sched, &wts, x0.view(), &draws).unwrap().total,
        opts,
    )
    .unwrap();
    results.push(("gnocchi", r.max_rel_error));

    let lp = LfadsParams::new(3, 4, 2, 5, 3, 5.0, &mut rng);
    let x = normal3((6, 4, 3), &mut rng);
    let prior = IcPrior::default();
    let draws = LfadsDraws::sample(&lp, (6, 4), 0.3, 0.1, &mut rng);
    let (_, g) = lfads_loss_and_grad(&lp, x.view(), &draws, 0.05, &prior).unwrap();
    let r = grad_check(
        &lp,
        &g,
        |p| lfads_evaluate_loss(p, x.view(), &draws, 0.05, &prior).unwrap().total,
        opts,
    )
    .unwrap();
    results.push(("lfads", r.max_rel_error));

    let mut policy = ControllerPolicy::new(4, &mut rng);
    policy.readout.b.fill(0.0);
    let arm = ArmParams::default();
    let grid = Grid::default();
    let mk = |s: (usize, usize), t: (usize, usize), onset, go| TrialSpec {
        start_index: GridIndex { ix: s.0, iy: s.1 },
        target_index: GridIndex { ix: t.0, iy: t.1 },
        start: grid.point(GridIndex { ix: s.0, iy: s.1 }),
        target: grid.point(GridIndex { ix: t.0, iy: t.1 }),
        target_onset: onset,
        go_cue: go,
        trial_len: 10,
    };
    let trials = vec![mk((0, 0), (4, 5), 1, 3), mk((3, 2), (1, 1), 2, 6)];
    let noise = Array3::zeros((10, 2, N_MUSCLES));
    let (_, g) = batch_loss_and_grad(&policy, &arm, &trials, &noise, 0.01).unwrap();
    let r = grad_check(
        &policy,
        &g,
        |p| batch_loss_and_grad(p, &arm, &trials, &noise, 0.01).unwrap().0,
        opts,
    )
    .unwrap();
    results.push(("controller", r.max_rel_error));

    let ok = results.iter().all(|(_, e)| *e < 1e-4);
    let detail = results
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    (ok, format!("max rel error {detail}"))
}

// ---- shared world and models --------------------------------------------

/// Desk-scale settings: the default configuration with epoch caps that keep
/// each model within the CPU budget.
fn desk_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.gnocchi.max_epochs = 120;
    cfg.gnocchi.patience = 20;
    cfg.lfads.max_epochs = 100;
    cfg.lfads.patience = 20;
    cfg
}

struct Stage {
    world: World,
    controller_seconds: f64,
    models: Vec<(GnocchiModel, LfadsModel)>,
}

fn cache_dir(cfg: &ExperimentConfig) -> Option<PathBuf> {
    let root = std::env::var_os("GNOCCHI_ACCEPTANCE_CACHE")?;
    let dir = Path::new(&root).join(&cfg.hash()[..16]);
    std::fs::create_dir_all(&dir).ok()?;
    Some(dir)
}

fn load_world(dir: &Path) -> Option<(World, f64)> {
    let dataset = load_dataset(&dir.join("dataset.gnc")).ok()?;
    let policy = load_controller(&dir.join("controller.gnc")).ok()?;
    let v = load_vectors(&dir.join("controller_log.gnc")).ok()?;
    let get = |name: &str| v.iter().find(|(n, _)| n == name).map(|(_, x)| x.clone());
    let world = World {
        arm: ArmParams::default(),
        policy,
        controller_log: ControllerLog {
            losses: get("losses")?,
            validation_final_error: get("validation_final_error")?[0],
        },
        dataset,
    };
    Some((world, get("seconds")?[0]))
}

fn stage(cfg: &ExperimentConfig) -> Stage {
    let cache = cache_dir(cfg);
    let (world, controller_seconds) = match cache.as_deref().and_then(load_world) {
        Some(w) => w,
        None => {
            let t = Instant::now();
            let world = build_world(cfg).expect("world builds");
            let secs = t.elapsed().as_secs_f64();
            if let Some(dir) = &cache {
                save_dataset(&dir.join("dataset.gnc"), &world.dataset).unwrap();
                save_controller(&dir.join("controller.gnc"), &world.policy).unwrap();
                save_vectors(
                    &dir.join("controller_log.gnc"),
                    &[
                        ("losses", &world.controller_log.losses),
                        ("validation_final_error", &[world.controller_log.validation_final_error]),
                        ("seconds", &[secs]),
                    ],
                )
                .unwrap();
            }
            (world, secs)
        }
    };
    let (heldin, _) = heldout_split(&world.dataset, cfg);
    let mut models = Vec::new();
    for k in 0..cfg.run.n_seeds {
        let cached = cache.as_ref().and_then(|d| {
            Some((
                load_gnocchi(&d.join(format!("gnocchi{k}.gnc"))).ok()?,
                load_lfads(&d.join(format!("lfads{k}.gnc"))).ok()?,
            ))
        });
        let pair = match cached {
            Some(p) => p,
            None => {
                let t = Instant::now();
                let (g, l) = train_pair(&heldin, cfg, k as u64).expect("models train");
                line(&format!("  trained seed pair {k} in {:.0} s", t.elapsed().as_secs_f64()));
                if let Some(d) = &cache {
                    save_gnocchi(&d.join(format!("gnocchi{k}.gnc")), &g).unwrap();
                    save_lfads(&d.join(format!("lfads{k}.gnc")), &l).unwrap();
                }
                (g, l)
            }
        };
        models.push(pair);
    }
    Stage {
        world,
        controller_seconds,
        models,
    }
}

#[test]
fn acceptance() {
    let strict = std::env::var_os("GNOCCHI_ACCEPTANCE_STRICT").is_some();
    let mut exact_ok = true;
    let mut empirical_ok = true;

    let t = Instant::now();
    let (ok, detail) = exactness();
    exact_ok &= verdict(1, "exactness suite", ok && t.elapsed().as_secs() < 60, &format!(
        "{detail}; {:.1} s",
        t.elapsed().as_secs_f64()
    ));

    let t = Instant::now();
    let (ok, detail) = gradient_oracle();
    exact_ok &= verdict(2, "gradient oracle", ok && t.elapsed().as_secs() < 300, &format!(
        "{detail}; {:.1} s",
        t.elapsed().as_secs_f64()
    ));

    let cfg = desk_config();
    let st = stage(&cfg);
    let err = st.world.controller_log.validation_final_error;
    empirical_ok &= verdict(
        3,
        "controller competence",
        err < 0.015 && st.controller_seconds < 900.0,
        &format!("validation final error {:.2} cm (< 1.5), {:.0} s (< 900)", 100.0 * err, st.controller_seconds),
    );

    let (heldin, heldout) = heldout_split(&st.world.dataset, &cfg);
    let frac = heldout.len() as f64 / st.world.dataset.len() as f64;

    let valid = heldin.split(Split::Valid);
    let mut ratios = Vec::new();
    for (g, l) in &st.models {
        let r = code_snr_report(g, l, &valid).unwrap();
        ratios.push((r.get("gnocchi_code_snr").unwrap(), r.get("lfads_code_snr").unwrap()));
    }
    let wins = ratios.iter().filter(|(g, l)| g / l > 1.5).count();
    empirical_ok &= verdict(
        4,
        "code SNR ratio > 1.5 (majority of seeds)",
        2 * wins > ratios.len(),
        &ratios
            .iter()
            .map(|(g, l)| format!("{g:.2}/{l:.2}={:.2}", g / l))
            .collect::<Vec<_>>()
            .join(", "),
    );

    let (g, l) = &st.models[0];
    let decoder = fit_decoder(&heldin, 1.0).unwrap();
    let run = &cfg.run;
    let t = Instant::now();
    let eg = evaluate_model(g, &heldin, &heldout, &decoder, run.cv_folds, 10, run.sweep_steps, run.seed).unwrap();
    let el = evaluate_model(l, &heldin, &heldout, &decoder, run.cv_folds, 10, run.sweep_steps, run.seed).unwrap();
    let cmp = compare_models(&eg, &el).unwrap();
    line(&format!("  evaluation {:.0} s", t.elapsed().as_secs_f64()));
    for (k, v) in cmp.iter() {
        line(&format!("  {k} = {v:.4e}"));
    }
    let (og, ol) = (finite_mean(&eg.orthogonality), finite_mean(&el.orthogonality));
    let (ug, ul) = (finite_mean(&eg.unintended), finite_mean(&el.unintended));
    let (po, pu) = (cmp.get("orthogonality_p").unwrap(), cmp.get("unintended_p").unwrap());
    empirical_ok &= verdict(
        5,
        "orthogonality and unintended movement lower for GNOCCHI",
        og < ol && po < 0.05 && ug < ul && pu < 0.05,
        &format!("|dot| {og:.3} vs {ol:.3} (p={po:.2e}); unintended {ug:.4} vs {ul:.4} m (p={pu:.2e})"),
    );

    let win = cmp.get("heldout_win_fraction").unwrap();
    empirical_ok &= verdict(
        6,
        "heldout target error smaller for GNOCCHI on > 60% of trials",
        win > 0.6,
        &format!(
            "{:.1}% of {} trials; mean error {:.2} vs {:.2} cm",
            100.0 * win,
            eg.heldout_errors.len(),
            100.0 * finite_mean(&eg.heldout_errors),
            100.0 * finite_mean(&el.heldout_errors)
        ),
    );

    let t = Instant::now();
    let hit = conditional_generation(g, &heldin, &decoder, run.samples_per_condition, run.seed).unwrap();
    let span = unconditional_span(g, &heldin, &decoder, 200, run.seed).unwrap();
    empirical_ok &= verdict(
        7,
        "generation sanity",
        hit >= 0.7 && span >= 0.8,
        &format!(
            "conditional hit rate {:.1}% (>= 70), unconditional end-x span {:.1}% (>= 80); {:.0} s",
            100.0 * hit,
            100.0 * span,
            t.elapsed().as_secs_f64()
        ),
    );

    empirical_ok &= verdict(
        8,
        "heldout fraction in [30%, 38%]",
        (0.30..=0.38).contains(&frac),
        &format!("{} of {} trials = {:.1}%", heldout.len(), st.world.dataset.len(), 100.0 * frac),
    );

    assert!(exact_ok, "an exact criterion failed");
    if strict {
        assert!(empirical_ok, "an empirical criterion failed");
    }
}
