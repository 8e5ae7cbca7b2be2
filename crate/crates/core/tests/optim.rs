use approx::assert_relative_eq;
use psl_core::optim::{adamw_step, lr_at, AdamW, AdamWConfig, Moments, ScheduleConfig};
use psl_core::{ParamStore64, Tape64, Tensor64};

#[test]
fn adamw_matches_hand_computed_recurrence() {
    let cfg = AdamWConfig {
        weight_decay: 0.01,
        ..Default::default()
    };
    let mut p = [1.0f64];
    let mut st = Moments::zeros(1);
    let expect = [0.899000002, 0.8789511989397751, 0.8433294795899422];
    for (step, (&g, &e)) in [0.5, -0.3, 0.2].iter().zip(&expect).enumerate() {
        adamw_step(&mut p, &[g], &mut st, step as u64 + 1, 0.1, &cfg).unwrap();
        assert_relative_eq!(p[0], e, max_relative = 1e-12);
    }
}

#[test]
fn adamw_constant_gradient_moves_by_lr_times_sign() {
    let cfg = AdamWConfig::default();
    let mut p = [0.0f64, 0.0];
    let mut st = Moments::zeros(2);
    let mut prev = p;
    for step in 1..=200 {
        prev = p;
        adamw_step(&mut p, &[3.0, -0.01], &mut st, step, 1e-3, &cfg).unwrap();
    }
    assert_relative_eq!(p[0] - prev[0], -1e-3, max_relative = 1e-4);
    assert_relative_eq!(p[1] - prev[1], 1e-3, max_relative = 1e-4);
}

#[test]
fn adamw_zero_gradient_leaves_params() {
    let mut p = [0.7f64, -2.0];
    let mut st = Moments::zeros(2);
    for step in 1..=5 {
        adamw_step(&mut p, &[0.0, 0.0], &mut st, step, 0.1, &AdamWConfig::default()).unwrap();
    }
    assert_eq!(p, [0.7, -2.0]);
}

#[test]
fn adamw_rejects_mismatched_state() {
    let mut p = [1.0f64, 2.0];
    let mut st = Moments::zeros(3);
    let err = adamw_step(&mut p, &[0.0, 0.0], &mut st, 1, 0.1, &AdamWConfig::default()).unwrap_err();
    assert!(matches!(err, psl_core::Error::Contract(_)));
}

#[test]
fn optimizer_skips_frozen_parameters() {
    let mut store = ParamStore64::new();
    let a = store.add("enc.w", Tensor64::ones(&[2])).unwrap();
    let b = store.add("head.w", Tensor64::ones(&[2])).unwrap();
    store.set_frozen("enc.", true);
    let mut opt = AdamW::new(&store, AdamWConfig::default());
    let tape = Tape64::new();
    let bound = store.bind(&tape);
    let loss = bound.get(a).add(bound.get(b)).unwrap().sum().unwrap();
    let grads = bound.grads(&tape.backward(loss).unwrap());
    opt.step(&mut store, &grads, 0.1).unwrap();
    assert_eq!(store.get(a).data(), &[1.0, 1.0]);
    assert!(store.get(b).data().iter().all(|&v| (v - 0.9).abs() < 1e-9));
    assert_eq!(opt.steps_taken(), 1);
}

#[test]
fn schedule_warmup_then_cosine() {
    let cfg = ScheduleConfig {
        base_lr: 2e-5,
        warmup_epochs: 5,
        total_epochs: 105,
        steps_per_epoch: 4,
        ..Default::default()
    };
    cfg.validate().unwrap();
    assert_eq!(lr_at(0, 0, &cfg), 0.0);
    assert_relative_eq!(lr_at(2, 2, &cfg), 2e-5 * 2.5 / 5.0, max_relative = 1e-12);
    assert_relative_eq!(lr_at(0, 5, &cfg), 2e-5, max_relative = 1e-12);
    assert_relative_eq!(lr_at(0, 55, &cfg), 1e-5, max_relative = 1e-12);
    assert!(lr_at(0, 105, &cfg) < 1e-20);

    // Continuous at the warmup boundary.
    let before = lr_at(3, 4, &cfg) + (lr_at(3, 4, &cfg) - lr_at(2, 4, &cfg));
    assert_relative_eq!(before, lr_at(0, 5, &cfg), max_relative = 1e-9);
    let after = lr_at(1, 5, &cfg);
    assert!((2e-5 - after) < 1e-9);

    // Monotone decay through the cosine phase.
    let lrs: Vec<f64> = (5..=105).map(|e| lr_at(0, e, &cfg)).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn schedule_validation() {
    let bad = ScheduleConfig {
        warmup_epochs: 10,
        total_epochs: 5,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
    let bad = ScheduleConfig {
        base_lr: 0.0,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}
