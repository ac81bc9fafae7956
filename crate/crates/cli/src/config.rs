//! Run configuration: command-line flags over a TOML file over defaults.

use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::ArgMatches;
use dermcascade::cascade::{CascadeOrder, Mode, Selection};
use dermcascade::classifier::{BackendSpec, Endpoint, Hyperparams};
use dermcascade::eval::MacroOver;
use serde::{Deserialize, Serialize};

use crate::args::{BackendArgs, Cli, Command, EvalArgs, HyperparamArgs};
use crate::error::CliError;

/// Keys accepted in a `--config` file. Relative paths are resolved against
/// the file's directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSettings {
    out: Option<PathBuf>,
    seed: Option<u64>,
    input: Option<PathBuf>,
    corpus: Option<PathBuf>,
    rules: Option<String>,
    masking_report: Option<PathBuf>,
    relations: Option<PathBuf>,
    translations: Option<String>,
    snapshots: Option<Vec<String>>,
    table: Option<String>,
    classes: Option<usize>,
    per_class: Option<usize>,
    noise: Option<f64>,
    pipeline: Option<PathBuf>,
    pred: Option<PathBuf>,
    truth: Option<PathBuf>,
    report: Option<PathBuf>,
    order: Option<String>,
    threshold: Option<usize>,
    thresholds: Option<Vec<usize>>,
    selection: Option<String>,
    mode: Option<String>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    l2: Option<f64>,
    backend: Option<String>,
    k: Option<usize>,
    macro_over: Option<String>,
    listen: Option<String>,
}

impl FileSettings {
    fn load(path: &Path) -> Result<Self, CliError> {
        let data = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut settings: FileSettings =
            toml::from_str(&data).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        for p in [
            &mut settings.out,
            &mut settings.input,
            &mut settings.corpus,
            &mut settings.masking_report,
            &mut settings.relations,
            &mut settings.pipeline,
            &mut settings.pred,
            &mut settings.truth,
            &mut settings.report,
        ] {
            rebase(p);
        }
        let rebase_source = |s: &mut String| {
            if s != BUNDLED && Path::new(s.as_str()).is_relative() {
                *s = base.join(&*s).to_string_lossy().into_owned();
            }
        };
        for s in [&mut settings.rules, &mut settings.translations, &mut settings.table]
            .into_iter()
            .flatten()
        {
            rebase_source(s);
        }
        settings.snapshots.iter_mut().flatten().for_each(rebase_source);
        Ok(settings)
    }
}

pub const BUNDLED: &str = "bundled";

/// A data file or the copy shipped with the toolkit.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Source {
    Bundled,
    Path(PathBuf),
}

impl Source {
    fn parse(raw: &str) -> Self {
        if raw == BUNDLED {
            Source::Bundled
        } else {
            Source::Path(PathBuf::from(raw))
        }
    }
}

impl Serialize for OrderChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            OrderChoice::Search => s.serialize_str("search"),
            OrderChoice::Vanilla => s.serialize_str("vanilla"),
            OrderChoice::Fixed(order) => s.serialize_str(&order.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OrderChoice {
    Search,
    Vanilla,
    Fixed(CascadeOrder),
}

/// Fully resolved settings for one command. Serialized into the run
/// manifest; `out` is excluded so that reruns into a different directory
/// hash identically.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: &'static str,
    #[serde(skip)]
    pub out: PathBuf,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rules: Option<Source>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masking_report: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relations: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub translations: Option<Source>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub snapshots: Vec<Source>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<Source>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pred: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<OrderChoice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub thresholds: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<Selection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hyperparams: Option<Hyperparams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_over: Option<MacroOver>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub listen: Option<String>,
}

struct Resolver<'a> {
    top: &'a ArgMatches,
    sub: &'a ArgMatches,
    problems: Vec<String>,
}

impl Resolver<'_> {
    fn given_on_cli(&self, id: &str) -> bool {
        let given = |m: &ArgMatches| {
            m.try_get_raw(id).is_ok_and(|v| v.is_some()) && m.value_source(id) == Some(ValueSource::CommandLine)
        };
        given(self.sub) || given(self.top)
    }

    fn pick<T>(&self, id: &str, cli: T, file: Option<T>) -> T {
        if self.given_on_cli(id) {
            cli
        } else {
            file.unwrap_or(cli)
        }
    }

    fn pick_opt<T>(&self, id: &str, cli: Option<T>, file: Option<T>) -> Option<T> {
        if self.given_on_cli(id) {
            cli
        } else {
            file.or(cli)
        }
    }

    fn parse<T>(&mut self, what: &str, raw: &str, parse: impl FnOnce(&str) -> Result<T, String>) -> Option<T> {
        match parse(raw) {
            Ok(v) => Some(v),
            Err(e) => {
                self.problems.push(format!("{what}: {e}"));
                None
            }
        }
    }

    fn require(&mut self, what: &str, path: Option<PathBuf>) -> Option<PathBuf> {
        match path {
            None => {
                self.problems.push(format!("--{what} is required"));
                None
            }
            Some(p) => self.existing(what, Some(p)),
        }
    }

    fn existing(&mut self, what: &str, path: Option<PathBuf>) -> Option<PathBuf> {
        if let Some(p) = &path {
            if !p.exists() {
                self.problems.push(format!("{what}: {} does not exist", p.display()));
            }
        }
        path
    }

    fn source(&mut self, what: &str, raw: String) -> Source {
        let source = Source::parse(&raw);
        if let Source::Path(p) = &source {
            self.existing(what, Some(p.clone()));
        }
        source
    }

    fn hyperparams(&mut self, args: &HyperparamArgs, file: &FileSettings, seed: u64) -> Hyperparams {
        let hp = Hyperparams {
            batch_size: self.pick("batch_size", args.batch_size, file.batch_size),
            learning_rate: self.pick("learning_rate", args.learning_rate, file.learning_rate),
            epochs: self.pick("epochs", args.epochs, file.epochs),
            l2: self.pick("l2", args.l2, file.l2),
            seed,
        };
        if let Err(e) = hp.validate() {
            self.problems.push(e.to_string());
        }
        hp
    }

    fn backend(&mut self, args: &BackendArgs, file: &FileSettings) -> Option<BackendSpec> {
        let raw = self.pick("backend", args.backend.clone(), file.backend.clone());
        self.parse("backend", &raw, parse_backend)
    }

    fn eval(&mut self, args: &EvalArgs, file: &FileSettings) -> (Option<usize>, Option<MacroOver>) {
        let k = self.pick("k", args.k, file.k);
        if k == 0 {
            self.problems.push("k must be at least 1".to_owned());
        }
        let raw = self.pick("macro_over", args.macro_over.clone(), file.macro_over.clone());
        let macro_over = self.parse("macro-over", &raw, |s| s.parse::<MacroOver>().map_err(|e| e.to_string()));
        (Some(k), macro_over)
    }

    fn mode(&mut self, cli: &str, file: &FileSettings) -> Option<Mode> {
        let raw = self.pick("mode", cli.to_owned(), file.mode.clone());
        self.parse("mode", &raw, |s| s.parse::<Mode>().map_err(|e| e.to_string()))
    }

    fn order(&mut self, cli: &str, file: &FileSettings) -> Option<OrderChoice> {
        let raw = self.pick("order", cli.to_owned(), file.order.clone());
        self.parse("order", &raw, |s| match s {
            "search" => Ok(OrderChoice::Search),
            "vanilla" => Ok(OrderChoice::Vanilla),
            other => other.parse::<CascadeOrder>().map(OrderChoice::Fixed).map_err(|e| e.to_string()),
        })
    }
}

pub fn parse_backend(raw: &str) -> Result<BackendSpec, String> {
    if raw.trim() == "builtin" {
        return Ok(BackendSpec::Builtin);
    }
    raw.parse::<Endpoint>()
        .map(|endpoint| BackendSpec::External { endpoint })
        .map_err(|e| e.to_string())
}

fn empty(command: &'static str, out: PathBuf, seed: u64) -> RunConfig {
    RunConfig {
        command,
        out,
        seed,
        corpus: None,
        rules: None,
        masking_report: None,
        relations: None,
        translations: None,
        snapshots: Vec::new(),
        table: None,
        classes: None,
        per_class: None,
        noise: None,
        pipeline: None,
        pred: None,
        truth: None,
        report: None,
        order: None,
        threshold: None,
        thresholds: Vec::new(),
        selection: None,
        mode: None,
        hyperparams: None,
        backend: None,
        k: None,
        macro_over: None,
        listen: None,
    }
}

/// Merge flags, config file and defaults, then validate everything at once.
pub fn resolve(cli: &Cli, top: &ArgMatches) -> Result<RunConfig, CliError> {
    let file = match &cli.config {
        Some(path) => FileSettings::load(path)?,
        None => FileSettings::default(),
    };
    let (_, sub) = top.subcommand().expect("a subcommand is required");
    let mut r = Resolver {
        top,
        sub,
        problems: Vec::new(),
    };
    let out = r.pick("out", cli.out.clone(), file.out.clone());
    let seed = r.pick("seed", cli.seed, file.seed);

    let config = match &cli.command {
        Command::Anonymize(a) => {
            let mut c = empty("anonymize", out.clone(), seed);
            let input = r.pick_opt("input", a.input.clone(), file.input.clone().or(file.corpus.clone()));
            c.corpus = r.require("in", input);
            let rules = r.pick("rules", a.rules.clone(), file.rules.clone());
            c.rules = Some(r.source("rules", rules));
            c.masking_report = Some(
                r.pick_opt("report", a.report.clone(), file.masking_report.clone())
                    .unwrap_or_else(|| out.join("masking.json")),
            );
            c
        }
        Command::Relations(a) => {
            let mut c = empty("relations", out, seed);
            c.corpus = r.require("corpus", r.pick_opt("corpus", a.corpus.clone(), file.corpus.clone()));
            let translations = r.pick("translations", a.translations.clone(), file.translations.clone());
            c.translations = Some(r.source("translations", translations));
            let snapshots = r.pick("snapshots", a.snapshots.clone(), file.snapshots.clone());
            c.snapshots = snapshots.into_iter().map(|s| r.source("snapshot", s)).collect();
            if c.snapshots.contains(&Source::Bundled) && c.snapshots.len() > 1 {
                r.problems.push("snapshot: `bundled` cannot be combined with snapshot files".to_owned());
            }
            c
        }
        Command::Synth(a) => {
            let mut c = empty("synth", out, seed);
            let table = r.pick("table", a.table.clone(), file.table.clone());
            c.table = Some(r.source("table", table));
            let classes = r.pick("classes", a.classes, file.classes);
            let per_class = r.pick("per_class", a.per_class, file.per_class);
            let noise = r.pick("noise", a.noise, file.noise);
            if classes == 0 || per_class == 0 {
                r.problems.push("classes and per-class must be at least 1".to_owned());
            }
            if !(0.0..=1.0).contains(&noise) {
                r.problems.push(format!("noise {noise} is outside [0, 1]"));
            }
            (c.classes, c.per_class, c.noise) = (Some(classes), Some(per_class), Some(noise));
            c
        }
        Command::Train(a) => {
            let mut c = empty("train", out, seed);
            c.corpus = r.require("corpus", r.pick_opt("corpus", a.corpus.clone(), file.corpus.clone()));
            let relations = r.pick_opt("relations", a.relations.clone(), file.relations.clone());
            c.relations = r.existing("relations", relations);
            c.order = r.order(&a.order, &file);
            if c.order == Some(OrderChoice::Vanilla) {
                r.problems.push("order: train needs `search` or an explicit cascade order".to_owned());
            }
            let threshold = r.pick("threshold", a.threshold, file.threshold);
            if threshold == 0 {
                r.problems.push("threshold must be at least 1".to_owned());
            }
            c.threshold = Some(threshold);
            let selection = r.pick("selection", a.selection.clone(), file.selection.clone());
            c.selection = r.parse("selection", &selection, |s| s.parse::<Selection>().map_err(|e| e.to_string()));
            c.hyperparams = Some(r.hyperparams(&a.hyperparams, &file, seed));
            c.backend = r.backend(&a.backend, &file);
            (c.k, c.macro_over) = r.eval(&a.eval, &file);
            c
        }
        Command::Infer(a) => {
            let mut c = empty("infer", out.clone(), seed);
            let pipeline = r
                .pick_opt("pipeline", a.pipeline.clone(), file.pipeline.clone())
                .unwrap_or_else(|| out.join("pipeline"));
            c.pipeline = r.existing("pipeline", Some(pipeline));
            c.corpus = r.require("corpus", r.pick_opt("corpus", a.corpus.clone(), file.corpus.clone()));
            let relations = r.pick_opt("relations", a.relations.clone(), file.relations.clone());
            c.relations = r.existing("relations", relations);
            c.mode = r.mode(&a.mode, &file);
            c
        }
        Command::Evaluate(a) => {
            let mut c = empty("evaluate", out, seed);
            c.pred = r.require("pred", r.pick_opt("pred", a.pred.clone(), file.pred.clone()));
            c.truth = r.require("truth", r.pick_opt("truth", a.truth.clone(), file.truth.clone()));
            (c.k, c.macro_over) = r.eval(&a.eval, &file);
            c
        }
        Command::Sweep(a) => {
            let mut c = empty("sweep", out, seed);
            c.corpus = r.require("corpus", r.pick_opt("corpus", a.corpus.clone(), file.corpus.clone()));
            let relations = r.pick_opt("relations", a.relations.clone(), file.relations.clone());
            c.relations = r.existing("relations", relations);
            c.thresholds = r.pick("thresholds", a.thresholds.clone(), file.thresholds.clone());
            if c.thresholds.is_empty() || c.thresholds.contains(&0) {
                r.problems.push("thresholds must be a nonempty list of positive integers".to_owned());
            }
            c.order = r.order(&a.order, &file);
            if c.order == Some(OrderChoice::Search) {
                r.problems.push("order: sweep needs `vanilla` or an explicit cascade order".to_owned());
            }
            c.mode = r.mode(&a.mode, &file);
            c.hyperparams = Some(r.hyperparams(&a.hyperparams, &file, seed));
            c.backend = r.backend(&a.backend, &file);
            (c.k, c.macro_over) = r.eval(&a.eval, &file);
            c
        }
        Command::Report(a) => {
            let mut c = empty("report", out.clone(), seed);
            let report = r
                .pick_opt("report", a.report.clone(), file.report.clone())
                .unwrap_or_else(|| out.join("report.json"));
            c.report = r.existing("report", Some(report));
            c
        }
        Command::ServeBuiltin(a) => {
            let mut c = empty("serve-builtin", out, seed);
            c.listen = r.pick_opt("listen", a.listen.clone(), file.listen.clone());
            c
        }
        Command::Conformance(a) => {
            let mut c = empty("conformance", out, seed);
            let raw = r.pick("backend", a.backend.clone(), file.backend.clone());
            c.backend = r.parse("backend", &raw, |s| {
                s.parse::<Endpoint>()
                    .map(|endpoint| BackendSpec::External { endpoint })
                    .map_err(|e| e.to_string())
            });
            c
        }
    };
    if r.problems.is_empty() {
        Ok(config)
    } else {
        Err(CliError::invalid_config(r.problems))
    }
}
