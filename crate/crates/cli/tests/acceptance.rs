//! Acceptance suite. Each check prints one `[criterion N] PASS/FAIL` line;
//! criteria 5-7 share one trained apparatus and run inside a single test
//! so training happens once.
//!
//! Run with `cargo test -p smash-cli --test acceptance -- --nocapture`.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smash_cli::checkpoint;
use smash_cli::commands::{phase_rng, sample_probe_archs};
use smash_cli::config::RunConfig;

use smash_core::arch::{
    canonical_pattern, decode, encode, param_count, sample_architecture, validate,
    ArchitectureSpec, BottleneckMode, CanonicalKind, CorruptMode, SearchSpaceConfig, Variant,
};
use smash_core::data::{split_dataset, synth_dataset, Dataset, SynthKind};
use smash_core::dynnet::{forward, init_shared, smash_loss, OpKernels, SharedParams};
use smash_core::gradcheck::{max_rel_error, max_rel_error_at};
use smash_core::hypernet::{build_hypernet, HyperNet, HyperNetSpec};
use smash_core::search::{
    corruption_probe, mcmc_refine, smash_score, NullTelemetry, RetrainSettings, SearchSettings,
    TrainSettings, TrainState,
};
use smash_core::tensor::{
    avg_pool2d, batch_norm, conv2d, global_avg_pool, leaky_relu, linear, mul, normalize_filter,
    softmax_cross_entropy, sum_all, BnPhase, BnStats, ConvArgs, Tensor,
};

fn pass(criterion: usize, detail: &str, elapsed: Duration, budget: Duration) {
    println!("[criterion {criterion}] PASS - {detail} ({elapsed:.2?}, budget {budget:.0?})");
    assert!(
        elapsed <= budget,
        "[criterion {criterion}] runtime {elapsed:.2?} exceeded budget {budget:.2?}"
    );
}

// ---------------------------------------------------------------- 1 ----

#[test]
fn criterion_1_gradient_suite() {
    let t0 = Instant::now();
    let tol = 1e-4;
    let eps = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(1001);

    let rand_vec = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()
    };

    // Per-op checks, >= 20 random instances each.
    let check = |name: &str, build: &dyn Fn(&Tensor<f64>) -> Tensor<f64>, shape: &[usize], rng: &mut ChaCha8Rng| {
        let n: usize = shape.iter().product();
        let x0 = rand_vec(rng, n);
        let x = Tensor::parameter(shape, x0.clone());
        let loss = build(&x);
        loss.backward().unwrap();
        let analytic = x.grad().unwrap_or_else(|| vec![0.0; n]);
        let f = |vals: &[f64]| build(&Tensor::from_vec(shape, vals.to_vec())).item();
        let err = max_rel_error(f, &x0, &analytic, eps);
        assert!(err < tol, "{name}: rel err {err}");
    };

    for _ in 0..20 {
        let b = rng.gen_range(1..3);
        let c = rng.gen_range(1..4);
        let h = rng.gen_range(3..6);
        let k = rng.gen_range(1..4);
        let d = rng.gen_range(1..3);
        let g = if c % 2 == 0 { [1, 2][rng.gen_range(0..2)] } else { 1 };
        let cout = g * rng.gen_range(1..3);
        let pad = rng.gen_range(0..2);
        if (k - 1) * d + 1 > h + 2 * pad {
            continue;
        }
        let w0 = rand_vec(&mut rng, cout * (c / g) * k * k);
        let args = ConvArgs { stride: 1, dilation: d, groups: g, padding: pad };
        let cg = c / g;
        check(
            "conv2d",
            &move |x| {
                let w = Tensor::from_vec(&[cout, cg, k, k], w0.clone());
                let y = conv2d(x, &w, &args).unwrap();
                sum_all(&mul(&y, &y).unwrap())
            },
            &[b, c, h, h],
            &mut rng,
        );
    }

    for _ in 0..20 {
        let b = rng.gen_range(1..3);
        let c = rng.gen_range(1..3);
        let h = rng.gen_range(2..6);
        let win = rng.gen_range(1..=h.min(3));
        let s = rng.gen_range(1..3);
        check(
            "avg_pool2d",
            &move |x| {
                let y = avg_pool2d(x, win, s).unwrap();
                sum_all(&mul(&y, &y).unwrap())
            },
            &[b, c, h, h],
            &mut rng,
        );
        check(
            "global_avg_pool",
            &|x| {
                let y = global_avg_pool(x).unwrap();
                sum_all(&mul(&y, &y).unwrap())
            },
            &[b, c, h, h],
            &mut rng,
        );
        let n = rng.gen_range(2..24);
        check(
            "leaky_relu",
            &|x| sum_all(&mul(&leaky_relu(x, 0.02), x).unwrap()),
            &[n],
            &mut rng,
        );
        check(
            "normalize_filter",
            &|x| {
                let y = normalize_filter(x);
                sum_all(&mul(&y, &y).unwrap())
            },
            &[n],
            &mut rng,
        );
        let cls = rng.gen_range(2..6);
        let bb = rng.gen_range(1..4);
        let labels: Vec<usize> = (0..bb).map(|_| rng.gen_range(0..cls)).collect();
        check(
            "softmax_cross_entropy",
            &move |x| softmax_cross_entropy(x, &labels).unwrap(),
            &[bb, cls],
            &mut rng,
        );
        let kk = rng.gen_range(1..5);
        let cc = rng.gen_range(1..5);
        let wv = rand_vec(&mut rng, kk * cc);
        let bv = rand_vec(&mut rng, kk);
        check(
            "linear",
            &move |x| {
                let w = Tensor::from_vec(&[kk, cc], wv.clone());
                let bias = Tensor::from_vec(&[kk], bv.clone());
                let y = linear(x, &w, &bias).unwrap();
                sum_all(&mul(&y, &y).unwrap())
            },
            &[bb, cc],
            &mut rng,
        );
        let bn_b = rng.gen_range(2..5);
        let bn_c = rng.gen_range(1..4);
        let bn_h = rng.gen_range(1..4);
        let gv = rand_vec(&mut rng, bn_c);
        let betav = rand_vec(&mut rng, bn_c);
        check(
            "batch_norm",
            &move |x| {
                let gamma = Tensor::from_vec(&[bn_c], gv.clone());
                let beta = Tensor::from_vec(&[bn_c], betav.clone());
                let stats = BnStats::new(bn_c);
                let y = batch_norm(x, &gamma, &beta, &stats, 0, BnPhase::Train, 0.1, 1e-5).unwrap();
                sum_all(&mul(&y, &y).unwrap())
            },
            &[bn_b, bn_c, bn_h, bn_h],
            &mut rng,
        );
    }

    // Full pipeline: generator -> slice -> memory-bank forward -> loss.
    let cfg = SearchSpaceConfig {
        num_blocks: 2,
        ops_per_block: (1, 2),
        banks_per_block: (2, 3),
        ..SearchSpaceConfig::v1_desk()
    };
    let mut worst = 0.0f64;
    let mut probes = 0usize;
    for inst in 0..20 {
        let mut prng = ChaCha8Rng::seed_from_u64(2000 + inst);
        let arch = sample_architecture(&cfg, &mut prng, None).unwrap();
        let hyper: HyperNet<f64> =
            build_hypernet(&cfg, &HyperNetSpec::tiny(), &mut prng).unwrap();
        let shared: SharedParams<f64> = init_shared(&cfg, &mut prng).unwrap();
        let xb: Vec<f64> = (0..4 * 64).map(|_| prng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(&[4, 1, 8, 8], xb);
        let labels: Vec<usize> = (0..4).map(|_| prng.gen_range(0..10)).collect();

        let mut params = hyper.params();
        params.extend(shared.params());
        // Nudge every parameter off its exact initialization so the probe
        // point is generic: zero-initialized affine offsets meeting
        // exactly-zero banks would otherwise sit on an activation kink,
        // where one-sided subgradients and central differences legitimately
        // disagree.
        for p in &params {
            p.update_data(|data| {
                for v in data.iter_mut() {
                    *v += prng.gen_range(-0.01..0.01);
                }
            });
        }
        let loss = smash_loss(&arch, &hyper, &shared, &x, &labels, BnPhase::Train).unwrap();
        params.iter().for_each(|p| p.zero_grad());
        loss.backward().unwrap();

        // Probe two random coordinates of two random parameters. The
        // network is piecewise linear in places (leaky activations), so a
        // difference interval can straddle a kink; agreement at any of
        // three step sizes rules that artifact out while a wrong analytic
        // gradient fails at every step size.
        for _ in 0..2 {
            let p = &params[prng.gen_range(0..params.len())];
            let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
            let coords: Vec<usize> = (0..2).map(|_| prng.gen_range(0..p.numel())).collect();
            let x0 = p.to_vec();
            let f = |vals: &[f64]| {
                p.set_data(vals);
                let l = smash_loss(&arch, &hyper, &shared, &x, &labels, BnPhase::Train)
                    .unwrap()
                    .item();
                p.set_data(&x0);
                l
            };
            let err = [1e-4, 1e-5, 1e-6]
                .iter()
                .map(|&h| max_rel_error_at(&f, &x0, &analytic, h, &coords))
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(err);
            probes += coords.len();
        }
    }
    assert!(probes >= 20);
    assert!(worst < tol, "full pipeline rel err {worst}");

    pass(
        1,
        &format!("per-op and full-pipeline gradients match finite differences (worst pipeline err {worst:.2e})"),
        t0.elapsed(),
        Duration::from_secs(120),
    );
}

// ---------------------------------------------------------------- 2 ----

#[test]
fn criterion_2_encoding_round_trip() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    for (cfg, count) in [
        (SearchSpaceConfig::v1_desk(), 500usize),
        (SearchSpaceConfig::v2_desk(), 500usize),
    ] {
        for _ in 0..count {
            let a = sample_architecture(&cfg, &mut rng, None).unwrap();
            let enc = encode::<f32>(&a).unwrap();
            let expect_c = match cfg.variant {
                Variant::V1 => 2 * cfg.max_banks + cfg.max_dilation,
                Variant::V2 => {
                    2 * cfg.max_banks
                        + cfg.max_dilation
                        + 4 * cfg.allowed_filter_sizes.len()
                        + cfg.allowed_groups.len()
                        + 4
                }
            };
            let r = cfg.max_units / cfg.bank_quantum;
            assert_eq!(
                enc.shape(),
                &[1, expect_c, r * r, a.n_ch() / cfg.depth_divisor],
                "encoding shape formula"
            );
            let back = decode(&enc, &cfg).unwrap();
            assert_eq!(a, back, "decode(encode(a)) == a");
        }
    }
    pass(
        2,
        "decode(encode(a)) == a on 1000 random v1+v2 architectures; shapes match the formula",
        t0.elapsed(),
        Duration::from_secs(30),
    );
}

// ---------------------------------------------------------------- 3 ----

#[test]
fn criterion_3_canonical_oracles() {
    let t0 = Instant::now();
    let cfg = SearchSpaceConfig {
        num_blocks: 1,
        max_banks: 8,
        ..SearchSpaceConfig::v1_desk()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let hyper: HyperNet<f32> = build_hypernet(&cfg, &HyperNetSpec::tiny(), &mut rng).unwrap();
    let shared: SharedParams<f32> = init_shared(&cfg, &mut rng).unwrap();
    let xb: Vec<f32> = (0..2 * 64).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let x = Tensor::from_vec(&[2, 1, 8, 8], xb);

    let slope = 0.02;
    let conv1x1 = |x: &Tensor<f32>, k: &Tensor<f32>| conv2d(x, k, &ConvArgs::default()).unwrap();
    let conv3 = |x: &Tensor<f32>, w: &Tensor<f32>| {
        conv2d(&leaky_relu(x, slope), w, &ConvArgs { padding: 1, ..ConvArgs::default() }).unwrap()
    };
    let params = shared.named_params();
    let find = |name: &str| params.iter().find(|(n, _)| n == name).unwrap().1.clone();
    let stem_w = smash_core::tensor::slice(&find("shared.stem"), &[0, 0, 0, 0], &[6, 1, 3, 3]).unwrap();
    let stem = conv2d(&x, &stem_w, &ConvArgs { padding: 1, ..ConvArgs::default() }).unwrap();
    let shared3 = |idx: usize, in_w: usize| {
        let w = find(&format!("shared.block0.conv{idx}"));
        smash_core::tensor::slice(&w, &[0, 0, 0, 0], &[6, in_w, 3, 3]).unwrap()
    };
    let head = |t: &Tensor<f32>| {
        let gamma = find("shared.classifier.bn.gamma");
        let beta = find("shared.classifier.bn.beta");
        let cin = t.shape()[1];
        let g = smash_core::tensor::slice(&gamma, &[0], &[cin]).unwrap();
        let b = smash_core::tensor::slice(&beta, &[0], &[cin]).unwrap();
        let stats = shared.named_buffers().last().unwrap().1;
        let stats_view = BnStats::<f32> {
            mean: stats.mean.clone(),
            var: stats.var.clone(),
        };
        let t = batch_norm(t, &g, &b, &stats_view, 0, BnPhase::Eval, 0.1, 1e-5).unwrap();
        let t = leaky_relu(&t, slope);
        let pooled = global_avg_pool(&t).unwrap();
        let w = smash_core::tensor::slice(&find("shared.classifier.weight"), &[0, 0], &[10, cin]).unwrap();
        linear(&pooled, &w, &find("shared.classifier.bias")).unwrap()
    };
    let assert_close = |a: &Tensor<f32>, e: &Tensor<f32>, what: &str| {
        for (x, y) in a.to_vec().iter().zip(e.to_vec()) {
            assert!((x - y).abs() <= 1e-5, "{what}: {x} vs {y}");
        }
    };

    // Residual chain (3 ops, one bank).
    {
        let arch = canonical_pattern(CanonicalKind::ResNet, 3, &cfg).unwrap();
        let enc = encode::<f32>(&arch).unwrap();
        let bank = hyper.generate_weights(&enc).unwrap();
        let logits = forward(&arch, OpKernels::Generated(&bank), &shared, &x, BnPhase::Eval).unwrap();
        bank.reset_cursor();
        let mut state = stem.clone();
        for _ in 0..3 {
            let k = bank.slice_layer_weights(6, 6).unwrap();
            let out = conv3(&conv1x1(&state, &k), &shared3(0, 24));
            state = smash_core::tensor::add(&state, &out).unwrap();
        }
        assert_close(&logits, &head(&state), "resnet");
    }

    // Dense connectivity (3 ops -> 4 banks).
    {
        let arch = canonical_pattern(CanonicalKind::DenseNet, 3, &cfg).unwrap();
        let enc = encode::<f32>(&arch).unwrap();
        let bank = hyper.generate_weights(&enc).unwrap();
        let logits = forward(&arch, OpKernels::Generated(&bank), &shared, &x, BnPhase::Eval).unwrap();
        bank.reset_cursor();
        let mut features = vec![stem.clone()];
        for i in 0..3 {
            let k = bank.slice_layer_weights(6 * (i + 1), 6).unwrap();
            let cat = smash_core::tensor::concat_channels(&features).unwrap();
            features.push(conv3(&conv1x1(&cat, &k), &shared3(0, 24)));
        }
        let cat = smash_core::tensor::concat_channels(&features).unwrap();
        assert_close(&logits, &head(&cat), "densenet");
    }

    // Two-column fractal (3 ops, additive join).
    {
        let arch = canonical_pattern(CanonicalKind::FractalNet, 2, &cfg).unwrap();
        let enc = encode::<f32>(&arch).unwrap();
        let bank = hyper.generate_weights(&enc).unwrap();
        let logits = forward(&arch, OpKernels::Generated(&bank), &shared, &x, BnPhase::Eval).unwrap();
        bank.reset_cursor();
        let k1 = bank.slice_layer_weights(6, 6).unwrap();
        let mid = conv3(&conv1x1(&stem, &k1), &shared3(0, 24));
        let k2 = bank.slice_layer_weights(6, 6).unwrap();
        let deep = conv3(&conv1x1(&mid, &k2), &shared3(0, 24));
        let k3 = bank.slice_layer_weights(6, 6).unwrap();
        let short = conv3(&conv1x1(&stem, &k3), &shared3(0, 24));
        let joined = smash_core::tensor::add(&deep, &short).unwrap();
        let cat = smash_core::tensor::concat_channels(&[stem.clone(), joined, mid]).unwrap();
        assert_close(&logits, &head(&cat), "fractalnet");
    }

    pass(
        3,
        "memory-bank execution of resnet/densenet/fractalnet equals direct references (<=1e-5)",
        t0.elapsed(),
        Duration::from_secs(60),
    );
}

// ---------------------------------------------------------------- 4 ----

#[test]
fn criterion_4_weight_bookkeeping() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    let mut checked = 0usize;
    // The 1e-6 norm tolerance is checked in float64, where it is
    // representable; the float32 production path is held to a float32
    // rounding bound alongside.
    for (cfg, count) in [
        (SearchSpaceConfig::v1_desk(), 360usize),
        (SearchSpaceConfig::v2_desk(), 140usize),
    ] {
        let hyper: HyperNet<f64> = build_hypernet(&cfg, &HyperNetSpec::tiny(), &mut rng).unwrap();
        let hyper32: HyperNet<f32> = build_hypernet(&cfg, &HyperNetSpec::tiny(), &mut rng).unwrap();
        for i in 0..count {
            let arch = sample_architecture(&cfg, &mut rng, None).unwrap();
            let enc = encode::<f64>(&arch).unwrap();
            let bank = hyper.generate_weights(&enc).unwrap();
            for (_, block, op) in arch.ops_in_order() {
                let k = bank.slice_layer_weights(op.n_in(block.bank_channels), op.n_out).unwrap();
                let norm: f64 = k.to_vec().iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() <= 1e-6, "kernel norm {norm}");
            }
            // Windows tile the columns in order without overlap.
            let mut edge = 0usize;
            for w in bank.windows() {
                assert_eq!(w.start_col, edge, "windows must be disjoint and ordered");
                edge = w.start_col + w.width_cols;
                assert!(w.consumed <= cfg.max_units * w.width_cols);
            }
            assert_eq!(edge, bank.total_cols());
            assert!(bank.consumed_elements() <= bank.total_elements());

            // Spot-check the float32 path on a subset.
            if i % 25 == 0 {
                let enc32 = encode::<f32>(&arch).unwrap();
                let bank32 = hyper32.generate_weights(&enc32).unwrap();
                for (_, block, op) in arch.ops_in_order() {
                    let k = bank32
                        .slice_layer_weights(op.n_in(block.bank_channels), op.n_out)
                        .unwrap();
                    let norm: f64 =
                        k.to_vec().iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt();
                    assert!((norm - 1.0).abs() <= 1e-5, "f32 kernel norm {norm}");
                }
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 500);
    pass(
        4,
        "500 architectures: disjoint slice windows, exact accounting, unit-norm kernels (1e-6 in f64)",
        t0.elapsed(),
        Duration::from_secs(60),
    );
}

// ------------------------------------------------------------ 5/6/7 ----

/// The desk-scale apparatus for the statistical criteria: a v1-style
/// space on the graded-difficulty texture set, at least 5000 training
/// samples, at least 10 training epochs.
fn study_space() -> SearchSpaceConfig {
    SearchSpaceConfig {
        max_banks: 5,
        num_blocks: 2,
        banks_per_block: (2, 4),
        ops_per_block: (1, 3),
        param_budget: 2_000_000,
        input_channels: 1,
        ..SearchSpaceConfig::v1()
    }
}

fn study_data() -> Dataset {
    let data = synth_dataset(SynthKind::StripedTextures, 6250, 10, 8, 9).unwrap();
    split_dataset(data, 0.12, 1).unwrap()
}

const STUDY_EPOCHS: usize = 12;
const STUDY_SEED: u64 = 7;

#[test]
fn criteria_5_6_7_correlation_corruption_refinement() {
    let space = study_space();
    let data = study_data();
    assert!(data.train.len() >= 5000, "criterion 5 needs >= 5000 train samples");
    let train = TrainSettings { epochs: STUDY_EPOCHS, batch_size: 50, ..TrainSettings::default() };
    let t_train = Instant::now();
    let state = smash_core::search::train_smash::<f32>(
        &space,
        &HyperNetSpec::reference(),
        &train,
        &data,
        STUDY_SEED,
        &mut NullTelemetry,
    )
    .unwrap();
    println!("[fixture] trained {STUDY_EPOCHS} epochs in {:.1?}", t_train.elapsed());

    let mut failures: Vec<String> = Vec::new();

    // Criterion 5: rank 60, retrain every 3rd, positive correlation.
    {
        let t0 = Instant::now();
        let rs = RetrainSettings { epochs: 3, batch_size: 50, ..RetrainSettings::default() };
        let mut rng = phase_rng(STUDY_SEED, 4);
        let report = smash_core::search::correlation_study(
            &state.model,
            &space,
            &data,
            60,
            3,
            &rs,
            &mut rng,
            &mut NullTelemetry,
        )
        .unwrap();
        let retrained = report.records.iter().filter(|r| r.true_error.is_some()).count();
        let rho = report.spearman.unwrap();
        let p = report.p_one_sided.unwrap();
        let detail = format!(
            "60 scored, {retrained} retrained: spearman {rho:.3}, one-sided p {p:.4}"
        );
        let elapsed = t0.elapsed();
        if retrained == 20 && rho > 0.0 && p < 0.05 && elapsed <= Duration::from_secs(4 * 3600) {
            println!("[criterion 5] PASS - {detail} ({elapsed:.1?}, budget 4h)");
        } else {
            println!("[criterion 5] FAIL - {detail} ({elapsed:.1?}, budget 4h)");
            failures.push(format!("criterion 5: {detail}"));
        }
    }

    // Criterion 6: clean beats dilation-shuffled in > 60% of >= 20 archs.
    {
        let t0 = Instant::now();
        let mut rng = phase_rng(STUDY_SEED, 5);
        let archs = sample_probe_archs(&space, 20, &mut rng).unwrap();
        let table = corruption_probe(
            &state.model,
            &archs,
            &[CorruptMode::ShuffleDilations],
            &data,
            &mut rng,
        )
        .unwrap();
        let changed = table.rows.iter().filter(|r| r.changed).count();
        let frac = table.fraction_clean_better.unwrap_or(0.0);
        let detail = format!(
            "{changed}/{} corruptions effective, clean better in {:.0}%",
            table.rows.len(),
            frac * 100.0
        );
        let elapsed = t0.elapsed();
        if changed >= 20 && frac > 0.60 && elapsed <= Duration::from_secs(20 * 60) {
            println!("[criterion 6] PASS - {detail} ({elapsed:.1?}, budget 20m)");
        } else {
            println!("[criterion 6] FAIL - {detail} ({elapsed:.1?}, budget 20m)");
            failures.push(format!("criterion 6: {detail}"));
        }
    }

    // Criterion 7: monotone 100-step chain + reference search defaults.
    {
        let t0 = Instant::now();
        let defaults = SearchSettings::default();
        let golden = defaults.candidates == 500
            && defaults.warm_perturbations == 100
            && defaults.chain_steps == 100
            && defaults.perturb_rate == 0.05;
        let mut rng = phase_rng(STUDY_SEED, 6);
        let base = sample_architecture(&space, &mut rng, None).unwrap();
        let outcome = mcmc_refine(
            &state.model,
            &base,
            &data,
            10,
            100,
            defaults.perturb_rate,
            &mut rng,
            &mut NullTelemetry,
        )
        .unwrap();
        let monotone = outcome.trace.windows(2).all(|w| w[1] <= w[0]);
        let base_score = smash_score(&state.model, &base, &data).unwrap();
        let improved = outcome.score <= base_score;
        let detail = format!(
            "defaults 500/100/100/0.05: {golden}; 100-step chain monotone: {monotone}; final {:.3} <= base {:.3}",
            outcome.score, base_score
        );
        let elapsed = t0.elapsed();
        if golden && monotone && improved && elapsed <= Duration::from_secs(30 * 60) {
            println!("[criterion 7] PASS - {detail} ({elapsed:.1?}, budget 30m)");
        } else {
            println!("[criterion 7] FAIL - {detail} ({elapsed:.1?}, budget 30m)");
            failures.push(format!("criterion 7: {detail}"));
        }
    }

    assert!(failures.is_empty(), "failed: {failures:?}");
}

// ---------------------------------------------------------------- 8 ----

#[test]
fn criterion_8_determinism_and_resume() {
    let t0 = Instant::now();
    let run = RunConfig {
        space: SearchSpaceConfig { num_blocks: 2, ..SearchSpaceConfig::v1_desk() },
        hypernet: HyperNetSpec::tiny(),
        train: TrainSettings { epochs: 4, batch_size: 50, ..TrainSettings::default() },
        ..RunConfig::default()
    };
    let data = split_dataset(
        synth_dataset(SynthKind::GaussianBlobs, 300, 10, 8, 4).unwrap(),
        0.2,
        4,
    )
    .unwrap();

    let train_to = |epochs: usize| -> TrainState<f32> {
        let mut s = TrainState::new(&run.space, &run.hypernet, &run.train, 21).unwrap();
        s.run_epochs(&data, epochs, &mut NullTelemetry).unwrap();
        s
    };

    let dir = tempfile::tempdir().unwrap();
    let ckpt_bytes = |state: &TrainState<f32>, name: &str| -> Vec<u8> {
        let p = dir.path().join(name);
        checkpoint::save(&p, state, &run).unwrap();
        std::fs::read(&p).unwrap()
    };

    // Fixed seed -> bit-identical runs.
    let a = ckpt_bytes(&train_to(4), "a.ckpt");
    let b = ckpt_bytes(&train_to(4), "b.ckpt");
    assert_eq!(a, b, "fixed-seed runs must be bit-identical");

    // Interrupt + resume == uninterrupted.
    let half = train_to(2);
    let p_half = dir.path().join("half.ckpt");
    checkpoint::save(&p_half, &half, &run).unwrap();
    let (mut resumed, _) = checkpoint::load(&p_half).unwrap();
    resumed.run_epochs(&data, 2, &mut NullTelemetry).unwrap();
    let c = ckpt_bytes(&resumed, "c.ckpt");
    assert_eq!(a, c, "checkpoint-resume must equal the uninterrupted run bit for bit");

    pass(
        8,
        "fixed-seed runs bit-identical; resume equals uninterrupted run",
        t0.elapsed(),
        Duration::from_secs(600),
    );
}

// ---------------------------------------------------------------- 9 ----

#[test]
fn criterion_9_hyperparameter_fidelity() {
    let t0 = Instant::now();
    let run = RunConfig::default();
    let s = &run.space;
    assert_eq!(s.variant, Variant::V1);
    assert_eq!(s.bank_quantum, 6, "N");
    assert_eq!(s.depth_divisor, 3, "D");
    assert_eq!(s.max_dilation, 3, "d_max");
    assert_eq!(s.unit_choices(), vec![6, 12, 18, 24, 30, 36, 42], "units 6..42 step 6");
    assert_eq!(s.bottleneck, BottleneckMode::Constant4);
    assert_eq!(s.bottleneck_width(6, 6), 24, "bottleneck ratio 4");
    assert_eq!(s.max_banks, 240, "max banks per block");
    assert_eq!(s.param_budget, 16_000_000, "16M parameter budget");
    assert_eq!(run.hypernet.dense_block_layers, vec![8, 10, 4], "generator blocks");
    assert_eq!(run.hypernet.growth_rate, 10, "growth rate");
    assert_eq!(run.hypernet.activation_slope, 0.02, "activation slope");
    assert_eq!(s.generator_out_channels(), 432, "4*D*N^2 output channels");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let hyper: HyperNet<f32> = build_hypernet(s, &run.hypernet, &mut rng).unwrap();
    assert_eq!(hyper.conv_layer_count(), 26, "26 conv layers");
    assert_eq!(run.train.batch_size, 50, "batch size");
    assert_eq!(run.train.learning_rate, 2e-4, "adaptive step size");
    assert_eq!(run.retrain.learning_rate, 0.1, "retrain step size");
    assert_eq!(run.retrain.momentum, 0.9, "retrain momentum");
    assert_eq!(run.search.candidates, 500);
    assert_eq!(run.search.warm_perturbations, 100);
    assert_eq!(run.search.chain_steps, 100);
    assert_eq!(run.search.perturb_rate, 0.05);

    // Field-level sanity: a sampled v1 op is a single fixed 3x3 conv.
    let desk = SearchSpaceConfig::v1_desk();
    let arch = sample_architecture(&desk, &mut rng, None).unwrap();
    for (_, _, op) in arch.ops_in_order() {
        assert_eq!(op.conv_mask, [false; 4]);
        assert_eq!(op.groups, 1);
        assert_eq!(op.filter_sizes, [3; 4]);
    }
    let _ = (validate(&arch), param_count(&arch), ArchitectureSpec::new(desk, vec![]));

    pass(
        9,
        "v1 defaults match the reference hyperparameters field by field",
        t0.elapsed(),
        Duration::from_secs(60),
    );
}
