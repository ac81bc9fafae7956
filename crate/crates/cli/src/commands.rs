use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use dermcascade::anonymizer::{anonymize, MaskingRuleSet};
use dermcascade::bundled;
use dermcascade::cascade::{
    enumerate_orders, load_pipeline, save_pipeline, select_best_order, train_cascade, train_vanilla,
    CascadeOrder, CascadeOutput,
};
use dermcascade::classifier::protocol::{run_conformance, serve, serve_tcp};
use dermcascade::classifier::{Backend, BackendSpec, PredictionResult};
use dermcascade::corpus::{filter_by_threshold, generate_synthetic, load_corpus, save_corpus, stratified_split};
use dermcascade::corpus::{Corpus, CorpusFormat, SplitSpec};
use dermcascade::eval::{
    confusion_csv, evaluate, sweep_csv, text_table, threshold_sweep, write_heatmap_png, EvalOptions,
    EvaluationReport,
};
use dermcascade::ontology::{
    annotate_corpus, derive_relations, load_relation_table, save_relation_table, OntologySnapshot, Relation,
    TranslationMap,
};
use dermcascade::{seed, Error};
use serde::{Deserialize, Serialize};

use crate::config::{OrderChoice, RunConfig, Source};
use crate::error::{CliError, Ctx};
use crate::manifest::Recorder;

const HEATMAP_CELL: u32 = 24;

pub fn run(config: &RunConfig) -> Result<(), CliError> {
    match config.command {
        "anonymize" => run_anonymize(config),
        "relations" => run_relations(config),
        "synth" => run_synth(config),
        "train" => run_train(config),
        "infer" => run_infer(config),
        "evaluate" => run_evaluate(config),
        "sweep" => run_sweep(config),
        "report" => run_report(config),
        "serve-builtin" => run_serve(config),
        "conformance" => run_conformance_cmd(config),
        other => unreachable!("unknown command {other}"),
    }
}

fn required<'a, T>(value: &'a Option<T>, what: &str) -> &'a T {
    value.as_ref().unwrap_or_else(|| panic!("resolve() guarantees {what}"))
}

fn prepare_out(config: &RunConfig) -> Result<Recorder, CliError> {
    std::fs::create_dir_all(&config.out)
        .map_err(|e| Error::Io { path: config.out.clone(), source: e })
        .ctx("cli", "create_output_dir")?;
    Ok(Recorder::start(&config.out))
}

fn write_text(path: &Path, data: &str, operation: &str) -> Result<(), CliError> {
    std::fs::write(path, data)
        .map_err(|e| Error::Io { path: path.to_owned(), source: e })
        .ctx("cli", operation)
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("artifact serializes") + "\n"
}

/// Load a corpus and, when a relation table is given, annotate it.
fn load_annotated(config: &RunConfig, rec: &mut Recorder) -> Result<Corpus, CliError> {
    let path = required(&config.corpus, "corpus");
    rec.input(path)?;
    let corpus = load_corpus(path, CorpusFormat::from_path(path)).ctx("corpus", "load_corpus")?;
    match &config.relations {
        None => Ok(corpus),
        Some(table_path) => {
            rec.input(table_path)?;
            let table = load_relation_table(table_path).ctx("ontology", "load_relation_table")?;
            annotate_corpus(&corpus, &table).ctx("ontology", "annotate_corpus")
        }
    }
}

fn eval_options(config: &RunConfig) -> EvalOptions {
    EvalOptions {
        k: *required(&config.k, "k"),
        macro_over: *required(&config.macro_over, "macro_over"),
    }
}

fn connect(config: &RunConfig) -> Result<Backend, CliError> {
    Backend::connect(required(&config.backend, "backend")).ctx("classifier", "connect_backend")
}

fn run_anonymize(config: &RunConfig) -> Result<(), CliError> {
    let mut rec = prepare_out(config)?;
    let input = required(&config.corpus, "input");
    rec.input(input)?;
    let rules = match required(&config.rules, "rules") {
        Source::Bundled => bundled::rules(),
        Source::Path(p) => {
            rec.input(p)?;
            MaskingRuleSet::load(p).ctx("anonymizer", "load_rules")?
        }
    };
    let corpus = load_corpus(input, CorpusFormat::from_path(input)).ctx("corpus", "load_corpus")?;
    let (anonymized, report) = anonymize(&corpus, &rules).ctx("anonymizer", "anonymize")?;
    let out = config.out.join("anon.jsonl");
    save_corpus(&anonymized, &out).ctx("corpus", "save_corpus")?;
    let report_path = required(&config.masking_report, "masking report");
    write_text(report_path, &to_json(&report), "write_masking_report")?;
    rec.output(&out)?;
    rec.output(report_path)?;
    rec.note("n_reports", anonymized.len());
    rec.note("n_numeric_removed", report.n_numeric_removed);
    rec.note("n_masked", report.total_masked());
    rec.finish(config)?;
    Ok(())
}

fn run_relations(config: &RunConfig) -> Result<(), CliError> {
    let mut rec = prepare_out(config)?;
    let path = required(&config.corpus, "corpus");
    rec.input(path)?;
    let corpus = load_corpus(path, CorpusFormat::from_path(path)).ctx("corpus", "load_corpus")?;
    let translations = match required(&config.translations, "translations") {
        Source::Bundled => bundled::translations(),
        Source::Path(p) => {
            rec.input(p)?;
            TranslationMap::load(p).ctx("ontology", "load_translations")?
        }
    };
    let mut snapshots = Vec::new();
    for source in &config.snapshots {
        match source {
            Source::Bundled => snapshots.extend(bundled::snapshots()),
            Source::Path(p) => {
                rec.input(p)?;
                snapshots.push(OntologySnapshot::load(p).ctx("ontology", "load_snapshot")?);
            }
        }
    }
    let labels = corpus.labels();
    let derivation = derive_relations(labels.iter().map(String::as_str), &translations, &snapshots)
        .ctx("ontology", "derive_relations")?;

    let table_path = config.out.join("relations.tsv");
    save_relation_table(&derivation.table, &table_path).ctx("ontology", "save_relation_table")?;
    let provenance_path = config.out.join("relations_provenance.json");
    write_text(&provenance_path, &to_json(derivation.table.provenance_map()), "write_provenance")?;
    rec.output(&table_path)?;
    rec.output(&provenance_path)?;
    if !derivation.is_complete() {
        let path = config.out.join("unresolved.json");
        write_text(&path, &to_json(&derivation.unresolved), "write_unresolved")?;
        rec.output(&path)?;
        eprintln!(
            "warning: {} of {} labels could not be resolved; see {}",
            derivation.unresolved.len(),
            labels.len(),
            path.display()
        );
    }
    rec.note("n_labels", labels.len());
    rec.note("n_resolved", derivation.table.len());
    rec.finish(config)?;
    Ok(())
}

fn run_synth(config: &RunConfig) -> Result<(), CliError> {
    let mut rec = prepare_out(config)?;
    let table = match required(&config.table, "table") {
        Source::Bundled => bundled::relation_table(),
        Source::Path(p) => {
            rec.input(p)?;
            load_relation_table(p).ctx("ontology", "load_relation_table")?
        }
    };
    let classes = *required(&config.classes, "classes");
    if classes > table.len() {
        return Err(CliError::new(
            "corpus",
            "generate_synthetic",
            Error::Validation(format!("--classes {classes} exceeds the {} rows of the table", table.len())),
        ));
    }
    let corpus = generate_synthetic(
        &table.head(classes),
        *required(&config.per_class, "per_class"),
        *required(&config.noise, "noise"),
        config.seed,
    )
    .ctx("corpus", "generate_synthetic")?;
    let out = config.out.join("synthetic.jsonl");
    save_corpus(&corpus, &out).ctx("corpus", "save_corpus")?;
    rec.output(&out)?;
    rec.note("n_reports", corpus.len());
    rec.finish(config)?;
    Ok(())
}

#[derive(Serialize)]
struct OrderScore<'a> {
    order: String,
    selected: bool,
    accuracy: f64,
    macro_f1: f64,
    topk_accuracy: f64,
    report: &'a EvaluationReport,
}

fn run_train(config: &RunConfig) -> Result<(), CliError> {
    let mut rec = prepare_out(config)?;
    let corpus = load_annotated(config, &mut rec)?;
    let threshold = *required(&config.threshold, "threshold");
    let corpus = filter_by_threshold(&corpus, threshold).ctx("corpus", "filter_by_threshold")?;
    let order = required(&config.order, "order");
    let fractions = match order {
        OrderChoice::Search => vec![0.7, 0.1, 0.2],
        _ => vec![0.8, 0.2],
    };
    let split = SplitSpec::new(fractions, seed::derive(config.seed, "split"));
    let parts = stratified_split(&corpus, &split).ctx("corpus", "stratified_split")?;
    let backend = connect(config)?;
    let hp = required(&config.hyperparams, "hyperparams");
    let options = eval_options(config);

    let (train, test, pipeline) = match order {
        OrderChoice::Search => {
            let orders = enumerate_orders(&Relation::ALL).ctx("cascade", "enumerate_orders")?;
            let search = select_best_order(
                &parts[0],
                &parts[1],
                &orders,
                &backend,
                hp,
                *required(&config.selection, "selection"),
                options,
            )
            .ctx("cascade", "select_best_order")?;
            let scores: Vec<OrderScore> = search
                .reports
                .iter()
                .map(|(o, r)| OrderScore {
                    order: o.to_string(),
                    selected: *o == search.best,
                    accuracy: r.accuracy,
                    macro_f1: r.macro_f1,
                    topk_accuracy: r.topk_accuracy,
                    report: r,
                })
                .collect();
            let path = config.out.join("orders.json");
            write_text(&path, &to_json(&scores), "write_orders")?;
            rec.output(&path)?;
            rec.note("trained_orders", search.reports.keys().map(ToString::to_string).collect::<Vec<_>>());
            (&parts[0], &parts[2], search.best_pipeline)
        }
        OrderChoice::Fixed(order) => {
            let pipeline = train_cascade(&parts[0], order, &backend, hp).ctx("cascade", "train_cascade")?;
            (&parts[0], &parts[1], pipeline)
        }
        OrderChoice::Vanilla => unreachable!("rejected by resolve()"),
    };

    let bundle = config.out.join("pipeline");
    save_pipeline(&pipeline, train, &bundle).ctx("cascade", "save_pipeline")?;
    let test_path = config.out.join("test.jsonl");
    save_corpus(test, &test_path).ctx("corpus", "save_corpus")?;
    rec.output(&bundle)?;
    rec.output(&test_path)?;
    rec.note("selected_order", pipeline.order.to_string());
    rec.note("n_classes", corpus.label_counts().len());
    rec.note("n_train", train.len());
    rec.note("n_test", test.len());
    rec.finish(config)?;
    Ok(())
}

/// One line of `predictions.jsonl`.
#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionLine {
    pub id: String,
    pub prediction: String,
    pub ranked: Vec<(String, f64)>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub stages: BTreeMap<String, Vec<(String, f64)>>,
}

impl PredictionLine {
    fn new(id: &str, output: &CascadeOutput) -> Self {
        PredictionLine {
            id: id.to_owned(),
            prediction: output.pathology.top1().to_owned(),
            ranked: output.pathology.ranked().to_vec(),
            stages: output
                .stages
                .iter()
                .map(|(relation, p)| (relation.as_str().to_owned(), p.ranked().to_vec()))
                .collect(),
        }
    }

    fn result(&self) -> Result<PredictionResult, Error> {
        let (labels, probs): (Vec<String>, Vec<f64>) = self.ranked.iter().cloned().unzip();
        PredictionResult::new(&labels, &probs)
    }
}

fn run_infer(config: &RunConfig) -> Result<(), CliError> {
    let mut rec = prepare_out(config)?;
    let dir = required(&config.pipeline, "pipeline");
    rec.input(dir)?;
    let corpus = load_annotated(config, &mut rec)?;
    let (pipeline, _) = load_pipeline(dir, None).ctx("cascade", "load_pipeline")?;
    let mode = *required(&config.mode, "mode");
    let outputs = pipeline.predict_corpus(&corpus, mode).ctx("cascade", "predict_corpus")?;
    let mut data = String::new();
    for (report, output) in corpus.reports().iter().zip(&outputs) {
        data.push_str(&serde_json::to_string(&PredictionLine::new(&report.id, output)).expect("serializes"));
        data.push('\n');
    }
    let path = config.out.join("predictions.jsonl");
    write_text(&path, &data, "write_predictions")?;
    rec.output(&path)?;
    rec.note("order", pipeline.order.to_string());
    rec.note("n_predictions", outputs.len());
    rec.finish(config)?;
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<PredictionLine>, Error> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io { path: path.to_owned(), source: e })?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::Io { path: path.to_owned(), source: e })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PredictionLine = serde_json::from_str(&line)
            .map_err(|e| Error::Validation(format!("{} line {}: {e}", path.display(), i + 1)))?;
        lines.push(parsed);
    }
    Ok(lines)
}

fn run_evaluate(config: &RunConfig) -> Result<(), CliError> {
    let mut rec = prepare_out(config)?;
    let pred_path = required(&config.pred, "pred");
    let truth_path = required(&config.truth, "truth");
    rec.input(pred_path)?;
    rec.input(truth_path)?;
    let lines = read_predictions(pred_path).ctx("eval", "read_predictions")?;
    if lines.is_empty() {
        return Err(CliError::new(
            "eval",
            "evaluate",
            Error::Validation(format!("{} contains no predictions", pred_path.display())),
        ));
    }
    let truth = load_corpus(truth_path, CorpusFormat::from_path(truth_path)).ctx("corpus", "load_corpus")?;
    let by_id: HashMap<&str, &str> =
        truth.reports().iter().map(|r| (r.id.as_str(), r.pathology.as_str())).collect();
    let mut truths = Vec::with_capacity(lines.len());
    let mut predictions = Vec::with_capacity(lines.len());
    for line in &lines {
        let label = by_id.get(line.id.as_str()).ok_or_else(|| {
            CliError::new(
                "eval",
                "evaluate",
                Error::Validation(format!("prediction for unknown report id {:?}", line.id)),
            )
        })?;
        truths.push(*label);
        predictions.push(line.result().ctx("eval", "read_predictions")?);
    }
    let report = evaluate(&truths, &predictions, eval_options(config)).ctx("eval", "evaluate")?;
    let report_path = config.out.join("report.json");
    write_text(&report_path, &to_json(&report), "write_report")?;
    let csv_path = config.out.join("confusion.csv");
    write_text(&csv_path, &confusion_csv(&report).ctx("eval", "confusion_csv")?, "write_confusion")?;
    rec.output(&report_path)?;
    rec.output(&csv_path)?;
    rec.note("accuracy", report.accuracy);
    rec.note("macro_f1", report.macro_f1);
    rec.finish(config)?;
    Ok(())
}

fn run_sweep(config: &RunConfig) -> Result<(), CliError> {
    let mut rec = prepare_out(config)?;
    let corpus = load_annotated(config, &mut rec)?;
    let backend = connect(config)?;
    let hp = required(&config.hyperparams, "hyperparams");
    let mode = *required(&config.mode, "mode");
    let order: Option<&CascadeOrder> = match required(&config.order, "order") {
        OrderChoice::Vanilla => None,
        OrderChoice::Fixed(order) => Some(order),
        OrderChoice::Search => unreachable!("rejected by resolve()"),
    };
    let factory = |train: &Corpus, test: &Corpus| -> dermcascade::Result<Vec<PredictionResult>> {
        match order {
            None => {
                let model = train_vanilla(train, &backend, hp)?;
                let texts: Vec<&str> = test.reports().iter().map(|r| r.text.as_str()).collect();
                model.predict_batch(&texts)
            }
            Some(order) => {
                let pipeline = train_cascade(train, order, &backend, hp)?;
                Ok(pipeline.predict_corpus(test, mode)?.into_iter().map(|o| o.pathology).collect())
            }
        }
    };
    let split = SplitSpec::train_test(seed::derive(config.seed, "split"));
    let rows = threshold_sweep(&corpus, &config.thresholds, &factory, &split, eval_options(config))
        .ctx("eval", "threshold_sweep")?;
    let csv_path = config.out.join("sweep.csv");
    write_text(&csv_path, &sweep_csv(&rows).ctx("eval", "sweep_csv")?, "write_sweep")?;
    let json_path = config.out.join("sweep.json");
    write_text(&json_path, &to_json(&rows), "write_sweep")?;
    rec.output(&csv_path)?;
    rec.output(&json_path)?;
    rec.note(
        "n_classes",
        rows.iter().map(|r| (r.threshold.to_string(), r.n_classes)).collect::<BTreeMap<_, _>>(),
    );
    rec.finish(config)?;
    Ok(())
}

fn run_report(config: &RunConfig) -> Result<(), CliError> {
    let mut rec = prepare_out(config)?;
    let path = required(&config.report, "report");
    rec.input(path)?;
    let data = std::fs::read_to_string(path)
        .map_err(|e| Error::Io { path: path.to_owned(), source: e })
        .ctx("eval", "read_report")?;
    let report: EvaluationReport = serde_json::from_str(&data).map_err(Error::from).ctx("eval", "read_report")?;
    let table = text_table(&report);
    print!("{table}");
    let txt = config.out.join("report.txt");
    write_text(&txt, &table, "write_report_text")?;
    let png = config.out.join("confusion.png");
    write_heatmap_png(&report, &png, HEATMAP_CELL).ctx("eval", "write_heatmap")?;
    rec.output(&txt)?;
    rec.output(&png)?;
    rec.finish(config)?;
    Ok(())
}

fn run_serve(config: &RunConfig) -> Result<(), CliError> {
    let io_err = |what: &str, e: std::io::Error| {
        CliError::new(
            "classifier",
            "serve",
            Error::Io { path: PathBuf::from(what), source: e },
        )
    };
    match &config.listen {
        Some(address) => {
            let listener = TcpListener::bind(address).map_err(|e| io_err(address, e))?;
            if let Ok(local) = listener.local_addr() {
                eprintln!("listening on tcp://{local}");
            }
            serve_tcp(listener).map_err(|e| io_err(address, e))
        }
        None => {
            let stdin = std::io::stdin().lock();
            let stdout = std::io::stdout().lock();
            serve(stdin, stdout).map(|_| ()).map_err(|e| io_err("<stdio>", e))
        }
    }
}

fn run_conformance_cmd(config: &RunConfig) -> Result<(), CliError> {
    let BackendSpec::External { endpoint } = required(&config.backend, "backend") else {
        unreachable!("conformance always targets an endpoint")
    };
    let checks = run_conformance(endpoint).ctx("classifier", "conformance")?;
    let mut stdout = std::io::stdout().lock();
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(stdout, "{status} {}: {}", c.name, c.detail);
    }
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.name.to_owned()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        let mut err = CliError::new(
            "classifier",
            "conformance",
            Error::Validation(format!("{} of {} conformance checks failed", failed.len(), checks.len())),
        );
        err.details = failed;
        Err(err)
    }
}
