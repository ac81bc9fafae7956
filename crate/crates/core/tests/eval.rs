mod support;

use dermcascade::eval::{confusion_csv, confusion_top_pairs, evaluate, text_table, EvalOptions, MacroOver};
use dermcascade::seed::rng;
use proptest::prelude::*;
use support::metrics_oracle::{brute_force, mismatches, random_instance, to_prediction};

#[test]
fn matches_brute_force_on_random_instances() {
    let mut rng = rng(7);
    for case in 0..60 {
        let (truths, dists) = random_instance(&mut rng, 120, 12);
        let preds: Vec<_> = dists.iter().map(to_prediction).collect();
        for k in [1, 2, 3, 5] {
            for macro_over in [MacroOver::Truth, MacroOver::Union] {
                let report = evaluate(&truths, &preds, EvalOptions { k, macro_over }).unwrap();
                let expected = brute_force(&truths, &dists, k, macro_over);
                let diff = mismatches(&report, &expected, 1e-12);
                assert!(diff.is_empty(), "case {case} k={k} {macro_over}: {diff:?}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn topk_accuracy_is_monotone_in_k(seed in any::<u64>()) {
        let (truths, dists) = random_instance(&mut rng(seed), 80, 10);
        let preds: Vec<_> = dists.iter().map(to_prediction).collect();
        let mut last = 0.0;
        for k in 1..=12 {
            let report = evaluate(&truths, &preds, EvalOptions::with_k(k)).unwrap();
            if k == 1 {
                prop_assert_eq!(report.topk_accuracy, report.accuracy);
                prop_assert_eq!(report.topk_f1, report.macro_f1);
            }
            prop_assert!(report.topk_accuracy >= last);
            prop_assert!((report.topk_micro_f1 - report.topk_accuracy).abs() < 1e-12);
            last = report.topk_accuracy;
        }
    }

    #[test]
    fn confusion_accounts_for_every_example(seed in any::<u64>()) {
        let (truths, dists) = random_instance(&mut rng(seed), 60, 8);
        let preds: Vec<_> = dists.iter().map(to_prediction).collect();
        let report = evaluate(&truths, &preds, EvalOptions::default()).unwrap();
        let total: u64 = report.confusion.iter().flatten().sum();
        prop_assert_eq!(total as usize, truths.len());
        let diagonal: u64 = (0..report.labels.len()).map(|i| report.confusion[i][i]).sum();
        prop_assert!((diagonal as f64 / truths.len() as f64 - report.accuracy).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&report.macro_f1));
    }
}

#[test]
fn union_averaging_penalizes_spurious_predictions() {
    let truths = ["a", "a"];
    let dists = [
        vec![("a".to_owned(), 1.0)],
        vec![("b".to_owned(), 0.9), ("a".to_owned(), 0.1)],
    ];
    let preds: Vec<_> = dists.iter().map(to_prediction).collect();
    let truth = evaluate(&truths, &preds, EvalOptions::default()).unwrap();
    let union = evaluate(&truths, &preds, EvalOptions { k: 2, macro_over: MacroOver::Union }).unwrap();
    assert!((truth.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
    assert!((union.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(truth.topk_accuracy, 1.0);
}

#[test]
fn exports_follow_the_report() {
    let truths = ["acne", "acne", "psoriasis"];
    let dists = [
        vec![("acne".to_owned(), 0.8), ("psoriasis".to_owned(), 0.2)],
        vec![("psoriasis".to_owned(), 0.6), ("acne".to_owned(), 0.4)],
        vec![("psoriasis".to_owned(), 0.7), ("acne".to_owned(), 0.3)],
    ];
    let preds: Vec<_> = dists.iter().map(to_prediction).collect();
    let report = evaluate(&truths, &preds, EvalOptions::default()).unwrap();
    let csv = confusion_csv(&report).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("acne,1,1"));
    assert_eq!(confusion_top_pairs(&report, 5), vec![("acne".into(), "psoriasis".into(), 1)]);
    assert!(text_table(&report).contains("psoriasis"));
}

#[test]
fn empty_or_mismatched_inputs_are_rejected() {
    let none: [&str; 0] = [];
    assert!(evaluate(&none, &[], EvalOptions::default()).is_err());
    let one = vec![to_prediction(&vec![("a".to_owned(), 1.0)])];
    assert!(evaluate(&["a", "b"], &one, EvalOptions::default()).is_err());
    assert!(evaluate(&["a"], &one, EvalOptions::with_k(0)).is_err());
}
