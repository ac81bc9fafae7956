use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;

use dermcascade::bundled;
use dermcascade::corpus::{
    disease_cue, filter_by_threshold, generate_synthetic, load_corpus, make_review_partition, read_csv,
    read_jsonl, relation_cue, save_corpus, stratified_split, Corpus, CorpusFormat, Report, SplitSpec,
};
use dermcascade::ontology::Relation;
use dermcascade::Error;
use proptest::prelude::*;

fn corpus_with_counts(counts: &[usize]) -> Corpus {
    let mut reports = Vec::new();
    for (label, &n) in counts.iter().enumerate() {
        for i in 0..n {
            reports.push(Report::new(format!("r{label}-{i}"), format!("texto {i}"), format!("label {label}")));
        }
    }
    Corpus::new(reports).unwrap()
}

#[test]
fn jsonl_round_trip_keeps_relations() {
    let data = concat!(
        r#"{"id":"1","text":"placa en codo","pathology":"Psoriasis","type":"Inflammatory","site":"arms"}"#,
        "\n\n",
        r#"{"id":"2","text":"pápula","pathology":"acné"}"#,
        "\n"
    );
    let corpus = read_jsonl(Cursor::new(data)).unwrap();
    assert_eq!(corpus.len(), 2);
    assert_eq!(corpus.reports()[0].pathology, "psoriasis");
    assert_eq!(corpus.reports()[0].relation(Relation::Type), Some("inflammatory"));
    assert_eq!(corpus.reports()[0].relation(Relation::Severity), None);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    save_corpus(&corpus, &path).unwrap();
    assert_eq!(load_corpus(&path, CorpusFormat::Jsonl).unwrap(), corpus);
    assert_eq!(CorpusFormat::from_path(&dir.path().join("x.CSV")), CorpusFormat::Csv);
}

#[test]
fn csv_with_quoted_text() {
    let data = "id,text,pathology,severity\n1,\"lesión, con \"\"bordes\"\"\",Acné,mild\n2,texto,acné,\n";
    let corpus = read_csv(data.as_bytes()).unwrap();
    assert_eq!(corpus.reports()[0].text, "lesión, con \"bordes\"");
    assert_eq!(corpus.reports()[0].relation(Relation::Severity), Some("mild"));
    assert_eq!(corpus.reports()[1].relation(Relation::Severity), None);
    assert_eq!(corpus.label_counts()["acné"], 2);
}

#[test]
fn schema_errors_name_the_record() {
    let err = read_jsonl(Cursor::new("{\"id\":\"1\",\"text\":\"a\",\"pathology\":\"x\"}\n{\"id\":\"2\",\"text\":\"b\"}\n"))
        .unwrap_err();
    assert!(matches!(err, Error::Schema { record: 2, .. }), "{err}");
    let err = read_csv("id,text\n1,a\n".as_bytes()).unwrap_err();
    assert!(matches!(err, Error::Schema { record: 0, .. }), "{err}");
    let err = read_jsonl(Cursor::new("{\"id\":\"1\",\"text\":\"  \",\"pathology\":\"x\"}\n")).unwrap_err();
    assert!(matches!(err, Error::Schema { record: 1, .. }), "{err}");
    let dup = vec![Report::new("a", "t", "x"), Report::new("a", "u", "y")];
    assert!(matches!(Corpus::new(dup), Err(Error::Validation(_))));
}

#[test]
fn threshold_keeps_frequent_labels_in_order() {
    let corpus = corpus_with_counts(&[5, 2, 7]);
    let kept = filter_by_threshold(&corpus, 5).unwrap();
    assert_eq!(kept.labels(), vec!["label 0", "label 2"]);
    assert_eq!(kept.len(), 12);
    assert!(kept.reports().windows(2).all(|w| {
        let pos = |id: &str| corpus.reports().iter().position(|r| r.id == id).unwrap();
        pos(&w[0].id) < pos(&w[1].id)
    }));
    assert!(matches!(filter_by_threshold(&corpus, 8), Err(Error::EmptyResult { min_count: 8 })));
}

#[test]
fn review_partition_shares_the_overlap() {
    let corpus = corpus_with_counts(&[40, 30, 20, 10]);
    let p = make_review_partition(&corpus, 0.5, 0.2, 9).unwrap();
    let ids = |c: &Corpus| c.reports().iter().map(|r| r.id.clone()).collect::<BTreeSet<_>>();
    let (a, b, common) = (ids(&p.set_a), ids(&p.set_b), ids(&p.common));
    assert_eq!(a.intersection(&b).cloned().collect::<BTreeSet<_>>(), common);
    assert_eq!(common.len(), 10);
    assert_eq!(a.len() + b.len() - common.len(), 50);
    assert!(a.len().abs_diff(b.len()) <= 1);
}

#[test]
fn synthetic_reports_carry_their_cues() {
    let table = bundled::relation_table().head(5);
    let clean = generate_synthetic(&table, 10, 0.0, 4).unwrap();
    assert_eq!(clean.len(), 50);
    for report in clean.reports() {
        let row = table.get(&report.pathology).unwrap();
        assert!(report.text.split(' ').any(|t| t == disease_cue(&report.pathology)));
        for relation in Relation::ALL {
            assert_eq!(report.relation(relation), Some(row.get(relation)));
            assert!(report.text.contains(&relation_cue(relation, row.get(relation))));
        }
    }
    assert_eq!(generate_synthetic(&table, 10, 0.0, 4).unwrap(), clean);
    assert_ne!(generate_synthetic(&table, 10, 0.0, 5).unwrap(), clean);
    let noisy = generate_synthetic(&table, 10, 1.0, 4).unwrap();
    assert!(noisy.reports().iter().all(|r| !r.text.contains("dx_")));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_a_stratified_partition(
        counts in prop::collection::vec(1usize..40, 1..8),
        seed in any::<u64>(),
        three in any::<bool>(),
    ) {
        let corpus = corpus_with_counts(&counts);
        let fractions = if three { vec![0.7, 0.1, 0.2] } else { vec![0.8, 0.2] };
        let parts = stratified_split(&corpus, &SplitSpec::new(fractions.clone(), seed)).unwrap();
        prop_assert_eq!(parts.len(), fractions.len());

        let mut seen = BTreeMap::new();
        for (p, part) in parts.iter().enumerate() {
            for r in part.reports() {
                prop_assert!(seen.insert(r.id.clone(), p).is_none(), "{} in two parts", r.id);
            }
        }
        prop_assert_eq!(seen.len(), corpus.len());

        for (label, &n) in corpus.label_counts() {
            for (p, part) in parts.iter().enumerate() {
                let got = part.label_counts().get(label).copied().unwrap_or(0) as f64;
                if n >= fractions.len() {
                    prop_assert!((got - fractions[p] * n as f64).abs() < fractions.len() as f64,
                        "{label}: {got} of {n} in part {p}");
                } else if p != 0 {
                    prop_assert_eq!(got, 0.0);
                }
            }
        }
        let again = stratified_split(&corpus, &SplitSpec::new(fractions, seed)).unwrap();
        prop_assert_eq!(again, parts);
    }
}

#[test]
fn bad_fractions_are_rejected() {
    let corpus = corpus_with_counts(&[4]);
    for bad in [vec![], vec![0.5, 0.4], vec![1.2, -0.2]] {
        assert!(stratified_split(&corpus, &SplitSpec::new(bad, 0)).is_err());
    }
    assert!(stratified_split(&Corpus::empty(), &SplitSpec::train_test(0)).is_err());
}
