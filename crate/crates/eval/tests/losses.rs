use psl_core::gradcheck::{analytic_grads, gradcheck, DEFAULT_STEP};
use psl_core::{ParamStore64, Result, Tape64, Tensor64, Var};
use psl_eval::{cross_entropy, multitask_loss, MultiTaskWeights};

fn total(l1: f64, l2: f64, w1: f64, w2: f64) -> f64 {
    let tape = Tape64::new();
    let c = |v: f64| tape.constant(Tensor64::scalar(v));
    multitask_loss(c(l1), c(l2), c(w1), c(w2)).unwrap().value().item().unwrap()
}

#[test]
fn zero_weights_sum_the_task_losses() {
    assert_eq!(total(0.7, 1.9, 0.0, 0.0), 0.7 + 1.9);
    assert_eq!(total(0.0, 0.0, 0.35, 0.35), 0.7);
    assert_eq!(total(0.0, 0.0, -1.25, -1.25), -2.5);
}

fn weighted_sum<'t>(v: &[Var<'t, f64>]) -> Result<Var<'t, f64>> {
    multitask_loss(v[0], v[1], v[2], v[3])
}

#[test]
fn weight_gradient_is_exp_times_loss_plus_one() {
    for &(l1, w1) in &[(0.7, 0.0), (2.5, -0.8), (0.1, 1.3)] {
        let inputs = [Tensor64::scalar(l1), Tensor64::scalar(1.1), Tensor64::scalar(w1), Tensor64::scalar(0.2)];
        let g = analytic_grads(&weighted_sum, &inputs).unwrap();
        let want = w1.exp() * l1 + 1.0;
        assert!((g[2].item().unwrap() - want).abs() < 1e-12);
        assert!((g[0].item().unwrap() - w1.exp()).abs() < 1e-12);

        let h = 1e-5;
        let numeric = (total(l1, 1.1, w1 + h, 0.2) - total(l1, 1.1, w1 - h, 0.2)) / (2.0 * h);
        assert!((numeric - want).abs() < 1e-6, "{numeric} vs {want}");
        assert!(gradcheck(weighted_sum, &inputs, DEFAULT_STEP).unwrap() < 1e-6);
    }
}

#[test]
fn sweep_shows_no_interior_minimum() {
    // e^w·L + w has derivative e^w·L + 1 > 0, so the sweep is strictly increasing and
    // its minimum sits on the left end of the grid, never at −ln L.
    for &l1 in &[0.05, 0.7, 3.0] {
        let grid: Vec<f64> = (0..=12000).map(|i| -6.0 + i as f64 * 1e-3).collect();
        let values: Vec<f64> = grid.iter().map(|&w| total(l1, 1.0, w, 0.0)).collect();
        assert!(values.windows(2).all(|p| p[1] > p[0]), "L={l1}");
        let best = (0..grid.len()).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
        assert_eq!(best, 0);

        // The precision form e^w·L − w does settle at −ln L; recovered here from the
        // same sweep by subtracting 2w.
        let alt: Vec<f64> = grid.iter().zip(&values).map(|(w, v)| v - 2.0 * w - 1.0).collect();
        let best = (0..grid.len()).min_by(|&a, &b| alt[a].total_cmp(&alt[b])).unwrap();
        assert!((grid[best] + l1.ln()).abs() <= 1e-3, "L={l1}: {} vs {}", grid[best], -l1.ln());
    }
}

#[test]
fn learnable_weights_start_at_equal_weighting() {
    let mut store = ParamStore64::new();
    let w = MultiTaskWeights::new(&mut store, "mt").unwrap();
    assert_eq!(store.numel(), 2);
    let tape = Tape64::new();
    let p = store.bind(&tape);
    let loss = w.loss(&p, tape.constant(Tensor64::scalar(0.4)), tape.constant(Tensor64::scalar(0.5))).unwrap();
    assert!((loss.value().item().unwrap() - 0.9).abs() < 1e-15);
    let grads = p.grads(&tape.backward(loss).unwrap());
    // d/dw = e^0·L + 1
    assert!((grads[0].as_ref().unwrap().item().unwrap() - 1.4).abs() < 1e-15);
    assert!((grads[1].as_ref().unwrap().item().unwrap() - 1.5).abs() < 1e-15);
}

#[test]
fn cross_entropy_matches_log_sum_exp() {
    let logits = [0.3, -1.2, 2.0, 0.5];
    let tape = Tape64::new();
    let x = tape.constant(Tensor64::from_f64(&[4], &logits).unwrap());
    let lse = logits.iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
    for t in 0..4 {
        let got = cross_entropy(x, t).unwrap().value().item().unwrap();
        assert!((got - (lse - logits[t])).abs() < 1e-12);
    }
    assert!(cross_entropy(x, 4).is_err());
    let uniform = tape.constant(Tensor64::zeros(&[5]));
    assert!((cross_entropy(uniform, 2).unwrap().value().item().unwrap() - 5f64.ln()).abs() < 1e-12);
}
