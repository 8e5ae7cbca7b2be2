use psl_eval::loso::{loso_folds, loso_split};
use psl_eval::metrics::macro_scores;
use psl_eval::{compute_metrics, FoldResult, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn assert_partition(folds: &[psl_eval::Fold], n: usize) {
    let mut seen = vec![0usize; n];
    for f in folds {
        assert!(f.train.iter().all(|i| !f.test.contains(i)));
        assert_eq!(f.train.len() + f.test.len(), n);
        for &i in &f.test {
            seen[i] += 1;
        }
    }
    assert!(seen.iter().all(|&c| c == 1));
}

#[test]
fn three_subjects_give_three_folds() {
    let subjects = ["b", "a", "c", "a", "b", "c", "c"];
    let folds = loso_folds(&subjects).unwrap();
    assert_eq!(folds.len(), 3);
    assert_eq!(folds.iter().map(|f| f.subject_id.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
    assert_eq!(folds[0].test, vec![1, 3]);
    assert_eq!(folds[2].test, vec![2, 5, 6]);
    assert_partition(&folds, subjects.len());
}

#[test]
fn biovid_shaped_split() {
    let subjects: Vec<String> = (0..87 * 100).map(|i| format!("subject{:02}", i % 87)).collect();
    let folds = loso_folds(&subjects).unwrap();
    assert_eq!(folds.len(), 87);
    assert!(folds.iter().all(|f| f.test.len() == 100 && f.train.len() == 8600));
    assert_partition(&folds, subjects.len());
}

#[test]
fn split_errors() {
    let roster: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
    let err = loso_split(&["a", "b", "a"], &roster).unwrap_err();
    assert!(err.to_string().contains('c'), "{err}");
    assert!(loso_split(&["a", "z"], &roster).is_err());
    assert!(loso_folds(&["a", "a"]).is_err());
    assert!(loso_folds::<&str>(&[]).is_err());
}

fn fold(subject: &str, task: Task, pairs: &[(usize, usize)]) -> FoldResult {
    let mut f = FoldResult::new(subject, task);
    for &(t, p) in pairs {
        f.record(t, p);
    }
    f
}

#[test]
fn one_of_each_cell() {
    let f = fold("s", Task::Binary, &[(1, 1), (0, 1), (1, 0), (0, 0)]);
    let r = compute_metrics(&[f]).unwrap();
    assert_eq!(r.accuracy, 0.5);
    assert_eq!(r.f1_macro, 0.5);
    assert_eq!(r.recall_macro, 0.5);
}

#[test]
fn perfect_predictions_score_one() {
    for task in [Task::Binary, Task::Multiclass] {
        let k = task.num_classes();
        let folds: Vec<FoldResult> = (0..4)
            .map(|s| fold(&format!("s{s}"), task, &(0..k * (s + 1)).map(|i| (i % k, i % k)).collect::<Vec<_>>()))
            .collect();
        let r = compute_metrics(&folds).unwrap();
        assert_eq!((r.accuracy, r.recall_macro, r.f1_macro, r.accuracy_fold_mean), (1.0, 1.0, 1.0, 1.0));
        assert!(r.excluded_classes.is_empty());
    }
}

#[test]
fn random_tables_match_direct_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let folds: Vec<FoldResult> = (0..rng.gen_range(1..6))
            .map(|s| {
                let pairs: Vec<(usize, usize)> =
                    (0..rng.gen_range(1..40)).map(|_| (rng.gen_range(0..5), rng.gen_range(0..5))).collect();
                fold(&format!("s{s}"), Task::Multiclass, &pairs)
            })
            .collect();
        let r = compute_metrics(&folds).unwrap();

        // Recount from the raw per-fold cells.
        let mut table = [[0u64; 5]; 5];
        for f in &folds {
            for t in 0..5 {
                for p in 0..5 {
                    table[t][p] += f.confusion[t][p];
                }
            }
        }
        let n: u64 = table.iter().flatten().sum();
        let correct: u64 = (0..5).map(|i| table[i][i]).sum();
        assert_eq!(r.n_samples, n);
        assert_eq!(r.accuracy, correct as f64 / n as f64);
        let mean_fold = folds.iter().map(|f| f.n_correct() as f64 / f.n_test() as f64).sum::<f64>() / folds.len() as f64;
        assert!((r.accuracy_fold_mean - mean_fold).abs() < 1e-12);

        let (mut recall, mut f1, mut present) = (0.0, 0.0, 0.0);
        for c in 0..5 {
            let tp = table[c][c] as f64;
            let fn_ = table[c].iter().sum::<u64>() as f64 - tp;
            let fp = (0..5).map(|t| table[t][c]).sum::<u64>() as f64 - tp;
            if tp + fn_ == 0.0 {
                continue;
            }
            present += 1.0;
            recall += tp / (tp + fn_);
            let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let rec = tp / (tp + fn_);
            f1 += if precision + rec > 0.0 { 2.0 * precision * rec / (precision + rec) } else { 0.0 };
        }
        assert!((r.recall_macro - recall / present).abs() < 1e-12);
        assert!((r.f1_macro - f1 / present).abs() < 1e-12);
        for v in [r.accuracy, r.recall_macro, r.f1_macro] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn absent_class_is_excluded() {
    // No P2 videos at all.
    let f = fold("s", Task::Multiclass, &[(0, 0), (1, 1), (3, 3), (4, 4), (0, 2)]);
    let r = compute_metrics(&[f]).unwrap();
    assert_eq!(r.excluded_classes, vec!["P2".to_string()]);
    let scores = macro_scores(&r.confusion);
    assert_eq!(scores.excluded, vec![2]);
    assert!((r.recall_macro - (0.5 + 1.0 + 1.0 + 1.0) / 4.0).abs() < 1e-12);
}

#[test]
fn metric_input_errors() {
    assert!(compute_metrics(&[]).is_err());
    let a = fold("a", Task::Binary, &[(0, 0)]);
    let b = fold("b", Task::Multiclass, &[(0, 0)]);
    assert!(compute_metrics(&[a.clone(), b]).is_err());
    assert!(compute_metrics(&[a, FoldResult::new("c", Task::Binary)]).is_err());
}

#[test]
fn task_names() {
    assert_eq!("np_vs_p4".parse::<Task>().unwrap(), Task::Binary);
    assert_eq!("mc".parse::<Task>().unwrap(), Task::Multiclass);
    assert_eq!(Task::Binary.to_string(), "BINARY");
    assert_eq!(Task::Binary.num_classes(), 2);
    assert_eq!(Task::Binary.class_of(psl_models::PainLabel::P4), Some(1));
    assert_eq!(Task::Binary.class_of(psl_models::PainLabel::P2), None);
}
