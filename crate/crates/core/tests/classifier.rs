mod support;

use dermcascade::classifier::protocol::Endpoint;
use dermcascade::classifier::{
    featurize, fit_vocabulary, tokenize, Backend, BackendSpec, BuiltinModel, ClassifierModel, Hyperparams,
    LabeledText, SEPARATOR,
};
use dermcascade::seed::rng;
use proptest::prelude::*;
use support::gradient::{random_instance, reference_loss, relative_error};

fn toy_examples() -> Vec<LabeledText> {
    let mut out = Vec::new();
    for i in 0..20 {
        out.push(LabeledText::new(format!("placa descamativa codo {i}"), "psoriasis"));
        out.push(LabeledText::new(format!("comedones pústulas cara {i}"), "acné"));
        out.push(LabeledText::new(format!("lesión pigmentada asimétrica {i}"), "melanoma"));
    }
    out
}

fn fast() -> Hyperparams {
    Hyperparams { batch_size: 8, learning_rate: 0.5, epochs: 15, ..Hyperparams::default() }
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut rng = rng(21);
    for case in 0..50 {
        let inst = random_instance(&mut rng);
        let err = relative_error(&inst);
        assert!(err <= 1e-5, "case {case}: relative error {err}");
        let loss = inst.model.loss(&inst.xs, &inst.ys, inst.l2);
        assert!((loss - reference_loss(&inst.model, &inst.xs, &inst.ys, inst.l2)).abs() < 1e-10);
    }
}

#[test]
fn tfidf_matches_the_smoothed_definition() {
    let docs = ["rojo rojo azul", "azul verde", "rojo"];
    let vocab = fit_vocabulary(&docs).unwrap();
    let x = featurize(&vocab, "rojo rojo azul desconocido");
    let idf = |df: f64| ((1.0 + 3.0) / (1.0 + df)).ln() + 1.0;
    let raw = [("azul", 1.0 * idf(2.0)), ("rojo", 2.0 * idf(2.0))];
    let norm = raw.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    assert_eq!(x.len(), 2);
    for (token, value) in raw {
        let j = vocab.index_of(token).unwrap();
        let got = x.iter().find(|(i, _)| *i == j).unwrap().1;
        assert!((got - value / norm).abs() < 1e-12, "{token}");
    }
    assert!(featurize(&vocab, "nada").is_empty());
}

#[test]
fn builtin_model_learns_separable_data() {
    let model = BuiltinModel::train(&toy_examples(), &fast()).unwrap();
    assert_eq!(model.labels, vec!["acné", "melanoma", "psoriasis"]);
    assert_eq!(model.predict("placa en el codo").top1(), "psoriasis");
    assert_eq!(model.predict("pústulas en cara").top1(), "acné");
    let p = model.predict("texto sin pistas");
    assert!((p.ranked().iter().map(|(_, v)| v).sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn training_is_deterministic_and_seed_sensitive() {
    let a = BuiltinModel::train(&toy_examples(), &fast()).unwrap();
    let b = BuiltinModel::train(&toy_examples(), &fast()).unwrap();
    assert_eq!(a.regression, b.regression);
    let c = BuiltinModel::train(&toy_examples(), &fast().with_seed(9)).unwrap();
    assert_ne!(a.regression, c.regression);
}

#[test]
fn model_files_round_trip_exactly() {
    let backend = Backend::Builtin;
    let model = backend.train(&toy_examples(), &fast()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    model.save(&path).unwrap();
    let loaded = ClassifierModel::load(&path, &backend).unwrap();
    assert_eq!(loaded.to_json().unwrap(), model.to_json().unwrap());
    assert_eq!(loaded.predict("codo").unwrap(), model.predict("codo").unwrap());

    let mut value: serde_json::Value = serde_json::from_str(&model.to_json().unwrap()).unwrap();
    value["format_version"] = 99.into();
    assert!(ClassifierModel::from_json(&value.to_string(), &backend).is_err());
}

#[test]
fn loopback_backend_matches_the_builtin_model() {
    let builtin = Backend::Builtin.train(&toy_examples(), &fast()).unwrap();
    let external = Backend::connect(&BackendSpec::External { endpoint: Endpoint::Loopback }).unwrap();
    let remote = external.train(&toy_examples(), &fast()).unwrap();
    assert_eq!(remote.labels(), builtin.labels());
    let texts = ["placa codo", "pústulas", "lesión pigmentada"];
    let a = builtin.predict_batch(&texts).unwrap();
    let b = remote.predict_batch(&texts).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.top1(), y.top1());
        for (label, p) in x.ranked() {
            assert!((p - y.probability(label).unwrap()).abs() < 1e-12);
        }
    }
}

#[test]
fn explicit_label_sets_cover_unseen_labels() {
    let labels: Vec<String> = ["acné", "melanoma", "psoriasis", "vitíligo"].map(String::from).to_vec();
    let model = Backend::Builtin.train_with_labels(&toy_examples(), Some(&labels), &fast()).unwrap();
    assert_eq!(model.labels(), labels.as_slice());
    let p = model.predict("placa codo").unwrap();
    assert!(p.probability("vitíligo").unwrap() < 0.1);
    let short = &labels[..2];
    assert!(Backend::Builtin.train_with_labels(&toy_examples(), Some(short), &fast()).is_err());
}

#[test]
fn invalid_hyperparameters_are_rejected() {
    for hp in [
        Hyperparams { batch_size: 0, ..fast() },
        Hyperparams { epochs: 0, ..fast() },
        Hyperparams { learning_rate: -1.0, ..fast() },
        Hyperparams { l2: f64::NAN, ..fast() },
    ] {
        assert!(BuiltinModel::train(&toy_examples(), &hp).is_err(), "{hp:?}");
    }
    assert!(BuiltinModel::train(&[], &fast()).is_err());
}

proptest! {
    #[test]
    fn separator_always_tokenizes_alone(left in "[a-z ]{0,12}", right in "[a-z_=]{0,12}") {
        let text = format!("{left}{SEPARATOR}{right}");
        let tokens = tokenize(&text);
        prop_assert!(tokens.iter().any(|t| t == &SEPARATOR.to_string()));
        prop_assert!(tokens.iter().all(|t| t == &SEPARATOR.to_string() || !t.contains(SEPARATOR)));
    }
}
