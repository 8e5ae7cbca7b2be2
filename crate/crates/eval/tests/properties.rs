use proptest::prelude::*;
use psl_core::Tensor64;
use psl_eval::blur::{blur_kernel, gaussian_blur};
use psl_eval::data::sample_indices;
use psl_eval::loso::loso_folds;
use psl_eval::{compute_metrics, FoldResult, Task};

proptest! {
    #[test]
    fn loso_partitions_every_sample(assign in prop::collection::vec(0usize..6, 2..80)) {
        let subjects: Vec<String> = assign.iter().map(|s| format!("s{s}")).collect();
        let distinct = {
            let mut d = subjects.clone();
            d.sort();
            d.dedup();
            d.len()
        };
        match loso_folds(&subjects) {
            Ok(folds) => {
                prop_assert_eq!(folds.len(), distinct);
                let mut hits = vec![0; subjects.len()];
                for f in &folds {
                    for &i in &f.test {
                        prop_assert_eq!(&subjects[i], &f.subject_id);
                        hits[i] += 1;
                    }
                    for &i in &f.train {
                        prop_assert_ne!(&subjects[i], &f.subject_id);
                    }
                    prop_assert_eq!(f.train.len() + f.test.len(), subjects.len());
                }
                prop_assert!(hits.iter().all(|&h| h == 1));
            }
            Err(_) => prop_assert!(distinct < 2),
        }
    }

    #[test]
    fn metrics_stay_in_unit_interval(cells in prop::collection::vec((0usize..5, 0usize..5), 1..60), split in 1usize..4) {
        let mut folds: Vec<FoldResult> = (0..split).map(|i| FoldResult::new(format!("s{i}"), Task::Multiclass)).collect();
        for (i, &(t, p)) in cells.iter().enumerate() {
            folds[i % split].record(t, p);
        }
        folds.retain(|f| f.n_test() > 0);
        let r = compute_metrics(&folds).unwrap();
        for v in [r.accuracy, r.accuracy_fold_mean, r.recall_macro, r.f1_macro] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(r.n_samples as usize, cells.len());
    }

    #[test]
    fn blur_preserves_the_range_and_kernel_mass(h in 1usize..9, w in 1usize..9, half in 0usize..30, seed in any::<u64>()) {
        let k = 2 * half + 1;
        let total: f64 = blur_kernel(k).unwrap().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        let mut r = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let x = Tensor64::uniform(&[3, h, w], -1.0, 1.0, &mut r);
        let y = gaussian_blur(&x, k).unwrap();
        prop_assert!(y.data().iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
        let mean = |t: &Tensor64| t.data().iter().sum::<f64>() / t.numel() as f64;
        prop_assert!(mean(&y).is_finite() && mean(&x).is_finite());
    }

    #[test]
    fn frame_sampling_is_sorted_and_in_range(available in 1usize..300, m in 1usize..40) {
        let idx = sample_indices(available, m);
        prop_assert_eq!(idx.len(), m);
        prop_assert!(idx.windows(2).all(|p| p[0] <= p[1]));
        prop_assert!(idx.iter().all(|&i| i < available));
        if m <= available {
            prop_assert!(idx.windows(2).all(|p| p[0] < p[1]));
        }
    }
}
