use super::*;
use crate::autograd::ParameterStore;
use crate::models::{Precision, Variant};
use crate::tasks::TaskSpec;
use proptest::prelude::*;

fn grads(entries: &[(&str, Vec<usize>, Vec<f64>)]) -> ParamGrads<f64> {
    entries
        .iter()
        .map(|(n, s, d)| (n.to_string(), Tensor::new(s, d.clone()).unwrap()))
        .collect()
}

#[test]
fn clip_examples() {
    let mut g = grads(&[("a", vec![2], vec![3.0, 4.0])]);
    let norm = clip_global_norm(&mut g, 1.0).unwrap();
    assert_eq!(norm, 5.0);
    let d = g["a"].data();
    assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);

    let mut g = grads(&[("a", vec![2], vec![0.3, 0.4])]);
    let before = g.clone();
    clip_global_norm(&mut g, 1.0).unwrap();
    assert_eq!(g, before);

    let mut g = grads(&[("a", vec![1], vec![f64::NAN])]);
    assert!(matches!(clip_global_norm(&mut g, 1.0), Err(Error::NonFinite { .. })));
}

#[test]
fn clip_matches_flatten_oracle() {
    let mut g = grads(&[
        ("a", vec![2, 2], vec![1.0, -2.0, 3.0, 0.5]),
        ("b", vec![3], vec![-4.0, 2.5, 1.5]),
    ]);
    let flat: Vec<f64> = g.values().flat_map(|t| t.data().to_vec()).collect();
    let norm = flat.iter().map(|x| x * x).sum::<f64>().sqrt();
    let expect: Vec<f64> = flat.iter().map(|x| x * 2.0 / norm).collect();
    clip_global_norm(&mut g, 2.0).unwrap();
    let got: Vec<f64> = g.values().flat_map(|t| t.data().to_vec()).collect();
    for (a, b) in got.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-15);
    }
}

fn one_param(x: f64) -> ParameterStore<f64> {
    let mut p = ParameterStore::new();
    p.insert("x", Tensor::from_f64(&[1], &[x]).unwrap()).unwrap();
    p
}

fn scalar_grad(g: f64) -> ParamGrads<f64> {
    grads(&[("x", vec![1], vec![g])])
}

#[test]
fn adam_first_step() {
    let mut p = one_param(0.0);
    let mut adam = Adam::new(AdamConfig::default(), &p);
    adam.step(&mut p, &scalar_grad(1.0)).unwrap();
    let x = p.get("x").unwrap().data()[0];
    assert!((x + 0.001 / (1.0 + 1e-4)).abs() < 1e-15, "{x}");
    assert!((x + 9.999e-4).abs() < 1e-7);
    assert_eq!(adam.t, 1);

    let mut p = one_param(0.25);
    let mut adam = Adam::new(AdamConfig::default(), &p);
    adam.step(&mut p, &scalar_grad(0.0)).unwrap();
    assert_eq!(p.get("x").unwrap().data()[0], 0.25);
}

#[test]
fn adam_two_step_trace() {
    // Hand-rolled scalar trace of the update formulas.
    let (lr, b1, b2, eps) = (1e-3, 0.9, 0.999, 1e-4);
    let gs = [0.5, -2.0];
    let (mut m, mut v, mut x) = (0.0, 0.0, 1.0);
    for (t, g) in gs.iter().enumerate() {
        let t = t as i32 + 1;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - f64::powi(b1, t));
        let vh = v / (1.0 - f64::powi(b2, t));
        x -= lr * mh / (vh.sqrt() + eps);
    }
    let mut p = one_param(1.0);
    let mut adam = Adam::new(AdamConfig::default(), &p);
    for g in gs {
        adam.step(&mut p, &scalar_grad(g)).unwrap();
    }
    assert!((p.get("x").unwrap().data()[0] - x).abs() < 1e-15);
    assert!((adam.m.get("x").unwrap().data()[0] - m).abs() < 1e-15);
    assert!((adam.v.get("x").unwrap().data()[0] - v).abs() < 1e-15);
}

#[test]
fn adam_is_scale_covariant_without_epsilon() {
    let config = AdamConfig {
        epsilon: 1e-12,
        ..AdamConfig::default()
    };
    let run = |c: f64| {
        let mut p = one_param(0.0);
        let mut adam = Adam::new(config, &p);
        for g in [0.3, -0.1, 0.7, 0.2] {
            adam.step(&mut p, &scalar_grad(c * g)).unwrap();
        }
        p.get("x").unwrap().data()[0]
    };
    assert!((run(1.0) - run(10.0)).abs() < 1e-6);
}

#[test]
fn adam_rejects_non_finite_update() {
    let mut p = one_param(0.0);
    let mut adam = Adam::new(AdamConfig::default(), &p);
    assert!(adam.step(&mut p, &scalar_grad(f64::INFINITY)).is_err());
    assert_eq!(p.get("x").unwrap().data()[0], 0.0);
    assert_eq!(adam.t, 0);
}

fn tiny_config(variant: Variant, vocab_in: usize, vocab_out: usize) -> ModelConfig {
    ModelConfig {
        variant,
        layers: 1,
        width: 2,
        channels: 3,
        kernel_w: 3,
        kernel_h: 3,
        vocab_in,
        vocab_out,
        precision: Precision::F64,
        dropout: 0.0,
    }
}

fn tiny_trainer(variant: Variant, steps: u64, seed: u64) -> Trainer<f64> {
    let task = TaskSpec::masked_copy(1, 3);
    let mut cfg = TrainConfig::new(task, steps, 4, seed);
    cfg.wall_clock = false;
    Trainer::new(tiny_config(variant, 2, 2), cfg).unwrap()
}

#[test]
fn zero_steps_leave_parameters_unchanged() {
    let mut t = tiny_trainer(Variant::Baseline, 0, 1);
    let before = t.model.params.clone();
    t.run(&RunOutputs::default(), |_| {}).unwrap();
    assert_eq!(t.model.params, before);
    assert_eq!(t.step, 0);
}

#[test]
fn uniform_logits_give_ln2_loss_at_step_zero() {
    let mut t = tiny_trainer(Variant::Extended, 1, 2);
    let proj = t.model.params.get_mut("out.proj").unwrap();
    *proj = Tensor::zeros(proj.shape());
    let rec = t.train_step().unwrap();
    assert!((rec.loss - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn batch_gradient_is_token_weighted_mean() {
    let t = tiny_trainer(Variant::Markovian, 1, 3);
    let batch = t.batch(0);
    let whole = batch_gradient(&t.model, &batch, None).unwrap();
    let n = batch_memory_len(&t.model.config, &batch);
    let mut sum: Option<ParamGrads<f64>> = None;
    let mut tokens = 0;
    for s in &batch {
        let (g, st) = sample_gradient(&t.model, s, n, None).unwrap();
        tokens += st.symbols;
        match sum.as_mut() {
            Some(acc) => optim::accumulate(acc, &g).unwrap(),
            None => sum = Some(g),
        }
    }
    for (name, g) in sum.unwrap() {
        let expect = g.scale(1.0 / tokens as f64);
        let got = &whole.grads[&name];
        assert!(got.data().iter().zip(expect.data()).all(|(a, b)| (a - b).abs() < 1e-15));
    }
    assert_eq!(whole.stats.symbols, tokens);
}

#[test]
fn teacher_forced_loss_ignores_model_predictions() {
    use crate::models::{feed, start, step_logits};
    let t = tiny_trainer(Variant::Extended, 1, 4);
    let sample = t.batch(0).remove(0);
    let config = t.model.config;
    let reference = evaluate_sample(&t.model, &sample, None).unwrap().nll;
    for flip in [0, 1] {
        let mut g = Eager;
        let vars = ModelVars::bind(&config, &t.model.params.bind(&mut g)).unwrap();
        let n = sample.target.len();
        let mut state = start(&config, &mut g, &vars, &sample.input, n, None).unwrap();
        let mut nll = 0.0;
        for (k, &target) in sample.target.iter().enumerate() {
            let logits = step_logits(&config, &mut g, &vars, &mut state, k, None).unwrap();
            let pred = argmax(logits.data()) ^ flip;
            assert!(pred < 2);
            nll += crate::tensor::log_sum_exp(logits.data()) - logits.data()[target];
            feed(&config, &mut g, &vars, &mut state, k, target).unwrap();
        }
        assert!((nll - reference).abs() < 1e-12);
    }
}

fn run_to(dir: &Path, tag: &str, steps: u64, resume_from: Option<&Path>) -> (Vec<u8>, Vec<u8>) {
    let metrics = dir.join(format!("{tag}.csv"));
    let ckpt = dir.join(format!("{tag}.ckpt"));
    let task = TaskSpec::masked_copy(2, 4);
    let mut cfg = TrainConfig::new(task, steps, 3, 17);
    cfg.wall_clock = false;
    cfg.checkpoint_every = 2;
    cfg.curriculum = Some(CurriculumConfig {
        start_len: 4,
        ..CurriculumConfig::default()
    });
    let model_config = ModelConfig {
        dropout: 0.1,
        ..tiny_config(Variant::Extended, 2, 2)
    };
    let mut trainer = match resume_from {
        Some(p) => Trainer::resume(load_checkpoint::<f64>(p, Some(&model_config)).unwrap(), cfg).unwrap(),
        None => Trainer::new(model_config, cfg).unwrap(),
    };
    let outputs = RunOutputs {
        metrics: Some(metrics.clone()),
        checkpoint: Some(ckpt.clone()),
    };
    trainer.run(&outputs, |_| {}).unwrap();
    (fs::read(metrics).unwrap(), fs::read(ckpt).unwrap())
}

#[test]
fn same_seed_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_to(dir.path(), "a", 5, None);
    let b = run_to(dir.path(), "b", 5, None);
    assert_eq!(a, b);
    let text = String::from_utf8(a.0).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert_eq!(text.lines().next().unwrap(), METRICS_HEADER);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let straight = run_to(dir.path(), "straight", 6, None);
    let first = dir.path().join("split.ckpt");
    run_to(dir.path(), "split", 3, None);
    let resumed = run_to(dir.path(), "split", 6, Some(&first));
    assert_eq!(straight, resumed);
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    let mut t = tiny_trainer(Variant::Attention, 2, 5);
    t.train_step().unwrap();
    let c = t.checkpoint();
    save_checkpoint(&path, &c).unwrap();
    let back = load_checkpoint::<f64>(&path, Some(&c.model.config)).unwrap();
    assert_eq!(back, c);
    let sidecar = fs::read_to_string(dir.path().join("c.ckpt.txt")).unwrap();
    assert!(sidecar.contains(&format!("fingerprint={}", c.model.config.fingerprint())));

    let bytes = fs::read(&path).unwrap();
    for cut in [0, 5, 20, bytes.len() / 2, bytes.len() - 1] {
        fs::write(&path, &bytes[..cut]).unwrap();
        assert!(
            matches!(load_checkpoint::<f64>(&path, None), Err(Error::Checksum { .. })),
            "cut at {cut}"
        );
    }
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 3] ^= 0x10;
    fs::write(&path, &flipped).unwrap();
    assert!(matches!(load_checkpoint::<f64>(&path, None), Err(Error::Checksum { .. })));

    let mut v2 = bytes[..bytes.len() - 4].to_vec();
    v2[8..12].copy_from_slice(&7u32.to_le_bytes());
    let crc = crc32fast::hash(&v2);
    v2.extend_from_slice(&crc.to_le_bytes());
    fs::write(&path, &v2).unwrap();
    assert!(matches!(
        load_checkpoint::<f64>(&path, None),
        Err(Error::Version { found: 7, expected: 1 })
    ));

    fs::write(&path, &bytes).unwrap();
    let other = ModelConfig {
        channels: 4,
        ..c.model.config
    };
    assert!(matches!(load_checkpoint::<f64>(&path, Some(&other)), Err(Error::Fingerprint { .. })));
    assert!(load_checkpoint::<f32>(&path, None).is_err());
}

#[test]
fn divergence_keeps_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("d.ckpt");
    let mut t = tiny_trainer(Variant::Baseline, 5, 6);
    t.train_step().unwrap();
    let p = t.model.params.get_mut("out.proj").unwrap();
    p.data_mut()[0] = f64::NAN;
    let good = t.checkpoint();
    let err = t
        .run(
            &RunOutputs {
                metrics: None,
                checkpoint: Some(ckpt.clone()),
            },
            |_| {},
        )
        .unwrap_err();
    assert!(matches!(err, Error::Divergence { step: 2, .. }), "{err:?}");
    let saved = load_checkpoint::<f64>(&ckpt, None).unwrap();
    assert_eq!(saved.step, 1);
    assert_eq!(saved.adam, good.adam);
}

#[test]
fn curriculum_advances_to_max() {
    let task = TaskSpec::copy(3, 6);
    let mut cfg = TrainConfig::new(task, 4, 2, 1);
    cfg.curriculum = Some(CurriculumConfig {
        start_len: 2,
        threshold: -1.0,
        smoothing: 1.0,
    });
    let mut t = Trainer::<f64>::new(tiny_config(Variant::Baseline, 3, 3), cfg).unwrap();
    assert_eq!(t.current_task().max_len, 2);
    assert!(t.batch(0).iter().all(|s| s.input.len() <= 2));
    let lens: Vec<usize> = (0..4).map(|_| t.train_step().unwrap().curriculum_len).collect();
    assert_eq!(lens, vec![3, 4, 5, 6]);
}

#[test]
fn mismatched_vocab_is_rejected() {
    let cfg = TrainConfig::new(TaskSpec::copy(5, 4), 1, 2, 1);
    assert!(Trainer::<f64>::new(tiny_config(Variant::Baseline, 5, 4), cfg).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clipped_norm_is_bounded(
        a in prop::collection::vec(-50.0f64..50.0, 1..8),
        b in prop::collection::vec(-50.0f64..50.0, 1..8),
        max in 0.01f64..5.0,
    ) {
        let mut g = grads(&[("a", vec![a.len()], a.clone()), ("b", vec![b.len()], b.clone())]);
        clip_global_norm(&mut g, max).unwrap();
        prop_assert!(global_norm(&g) <= max + 1e-12);
    }
}
