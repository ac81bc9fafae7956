//! Labeled report collections: loading, validation, filtering, splitting and
//! synthetic generation.
//!
//! The interchange format is JSON lines, one report per line:
//!
//! ```text
//! {"id": "r1", "text": "...", "pathology": "psoriasis", "site": "extremities"}
//! ```
//!
//! `type`, `severity` and `site` are optional. A CSV import path with the same
//! column names is also provided.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::ontology::{Relation, RelationTable};
use crate::seed;
use crate::text::{fold_key, normalize_label};

/// One clinical note with its pathology label and optional relation annotations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub id: String,
    pub text: String,
    pub pathology: String,
    pub relations: BTreeMap<Relation, String>,
}

impl Report {
    pub fn new(id: impl Into<String>, text: impl Into<String>, pathology: impl Into<String>) -> Self {
        Report {
            id: id.into(),
            text: text.into(),
            pathology: pathology.into(),
            relations: BTreeMap::new(),
        }
    }

    pub fn with_relation(mut self, relation: Relation, value: impl Into<String>) -> Self {
        self.relations.insert(relation, value.into());
        self
    }

    pub fn relation(&self, relation: Relation) -> Option<&str> {
        self.relations.get(&relation).map(String::as_str)
    }

    fn to_json(&self) -> Value {
        let mut map = Map::new();
        map.insert("id".into(), Value::String(self.id.clone()));
        map.insert("text".into(), Value::String(self.text.clone()));
        map.insert("pathology".into(), Value::String(self.pathology.clone()));
        for (relation, value) in &self.relations {
            map.insert(relation.as_str().into(), Value::String(value.clone()));
        }
        Value::Object(map)
    }
}

/// An ordered, validated list of reports.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    reports: Vec<Report>,
    label_counts: BTreeMap<String, usize>,
}

impl Corpus {
    /// Validate and wrap a list of reports. Ids must be nonempty and unique,
    /// texts nonempty after trimming.
    pub fn new(reports: Vec<Report>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(reports.len());
        for (idx, report) in reports.iter().enumerate() {
            if report.id.trim().is_empty() {
                return Err(Error::schema(idx + 1, "empty id"));
            }
            if !seen.insert(report.id.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate id {:?} at record {}",
                    report.id,
                    idx + 1
                )));
            }
            if report.text.trim().is_empty() {
                return Err(Error::schema(idx + 1, format!("empty text for id {:?}", report.id)));
            }
            if report.pathology.trim().is_empty() {
                return Err(Error::schema(idx + 1, format!("empty pathology for id {:?}", report.id)));
            }
        }
        Ok(Self::from_valid(reports))
    }

    fn from_valid(reports: Vec<Report>) -> Self {
        let mut label_counts = BTreeMap::new();
        for report in &reports {
            *label_counts.entry(report.pathology.clone()).or_insert(0) += 1;
        }
        Corpus {
            reports,
            label_counts,
        }
    }

    pub fn empty() -> Self {
        Corpus::default()
    }

    pub fn reports(&self) -> &[Report] {
        &self.reports
    }

    pub fn into_reports(self) -> Vec<Report> {
        self.reports
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn label_counts(&self) -> &BTreeMap<String, usize> {
        &self.label_counts
    }

    /// Distinct pathology labels in lexicographic order.
    pub fn labels(&self) -> Vec<String> {
        self.label_counts.keys().cloned().collect()
    }

    /// Reports selected by index, in the order given. Indices must be valid and
    /// distinct; the result inherits validity from `self`.
    pub fn select(&self, indices: &[usize]) -> Corpus {
        Self::from_valid(indices.iter().map(|&i| self.reports[i].clone()).collect())
    }

    /// Apply `f` to every report. The result is revalidated.
    pub fn map_reports(&self, f: impl Fn(&Report) -> Report) -> Result<Corpus> {
        Corpus::new(self.reports.iter().map(f).collect())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for report in &self.reports {
            out.push_str(&report.to_json().to_string());
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical JSONL serialization.
    pub fn fingerprint(&self) -> String {
        crate::text::fingerprint(self.to_jsonl().as_bytes())
    }

    /// SHA-256 of the sorted label set.
    pub fn label_fingerprint(&self) -> String {
        crate::text::fingerprint(self.labels().join("\n").as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl CorpusFormat {
    /// Guess from the file extension; anything other than `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => CorpusFormat::Csv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Corpus> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        CorpusFormat::Jsonl => read_jsonl(BufReader::new(file)),
        CorpusFormat::Csv => read_csv(file),
    }
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(corpus.to_jsonl().as_bytes())
        .map_err(|e| Error::io(path, e))
}

const OPTIONAL_FIELDS: [Relation; 3] = Relation::ALL;

/// Parse JSON lines. Blank lines are skipped; record numbers in errors are
/// 1-based line numbers.
pub fn read_jsonl(reader: impl BufRead) -> Result<Corpus> {
    let mut reports = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let record = idx + 1;
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line)
            .map_err(|e| Error::schema(record, format!("invalid JSON: {e}")))?;
        let Value::Object(obj) = value else {
            return Err(Error::schema(record, "expected a JSON object"));
        };
        let field = |name: &str| -> Result<Option<String>> {
            match obj.get(name) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::String(s)) => Ok(Some(s.clone())),
                Some(_) => Err(Error::schema(record, format!("field `{name}` must be a string"))),
            }
        };
        let required = |name: &str| -> Result<String> {
            field(name)?.ok_or_else(|| Error::schema(record, format!("missing field `{name}`")))
        };
        let mut report = Report::new(
            required("id")?,
            required("text")?,
            normalize_label(&required("pathology")?),
        );
        for relation in OPTIONAL_FIELDS {
            if let Some(value) = field(relation.as_str())? {
                report.relations.insert(relation, normalize_label(&value));
            }
        }
        reports.push(report);
    }
    Corpus::new(reports)
}

/// Parse RFC-4180 CSV with a header row. Record numbers are 1-based data rows;
/// a missing header column is reported as record 0.
pub fn read_csv(reader: impl Read) -> Result<Corpus> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut required = Vec::new();
    for name in ["id", "text", "pathology"] {
        let idx = column(name)
            .ok_or_else(|| Error::schema(0, format!("missing field `{name}` in CSV header")))?;
        required.push(idx);
    }
    let optional: Vec<(Relation, usize)> = OPTIONAL_FIELDS
        .iter()
        .filter_map(|&r| column(r.as_str()).map(|i| (r, i)))
        .collect();

    let mut reports = Vec::new();
    for (idx, row) in rdr.records().enumerate() {
        let record = idx + 1;
        let row = row?;
        let get = |col: usize, name: &str| -> Result<String> {
            row.get(col)
                .map(str::to_owned)
                .ok_or_else(|| Error::schema(record, format!("missing field `{name}`")))
        };
        let mut report = Report::new(
            get(required[0], "id")?,
            get(required[1], "text")?,
            normalize_label(&get(required[2], "pathology")?),
        );
        for &(relation, col) in &optional {
            if let Some(value) = row.get(col).filter(|v| !v.trim().is_empty()) {
                report.relations.insert(relation, normalize_label(value));
            }
        }
        reports.push(report);
    }
    Corpus::new(reports)
}

/// Keep the reports whose label occurs at least `min_count` times in `corpus`.
pub fn filter_by_threshold(corpus: &Corpus, min_count: usize) -> Result<Corpus> {
    if min_count == 0 {
        return Err(Error::validation("min_count must be at least 1"));
    }
    let keep: Vec<usize> = corpus
        .reports
        .iter()
        .enumerate()
        .filter(|(_, r)| corpus.label_counts[&r.pathology] >= min_count)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyResult { min_count });
    }
    Ok(corpus.select(&keep))
}

/// Field a split is stratified on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StratifyBy {
    #[default]
    Pathology,
    Relation(Relation),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub fractions: Vec<f64>,
    pub seed: u64,
    pub stratify_by: StratifyBy,
}

impl SplitSpec {
    pub fn new(fractions: Vec<f64>, seed: u64) -> Self {
        SplitSpec {
            fractions,
            seed,
            stratify_by: StratifyBy::Pathology,
        }
    }

    /// The default 0.8 / 0.2 train/test split.
    pub fn train_test(seed: u64) -> Self {
        Self::new(vec![0.8, 0.2], seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(Error::validation("split needs at least one fraction"));
        }
        if let Some(bad) = self.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::validation(format!("split fraction {bad} outside [0, 1]")));
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("split fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` items over `fractions`. Ties in the
/// remainder go to the earlier fraction.
fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut left = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn largest_fraction(fractions: &[f64]) -> usize {
    let mut best = 0;
    for (i, f) in fractions.iter().enumerate() {
        if *f > fractions[best] {
            best = i;
        }
    }
    best
}

fn stratum_key(report: &Report, by: StratifyBy) -> Result<String> {
    match by {
        StratifyBy::Pathology => Ok(report.pathology.clone()),
        StratifyBy::Relation(relation) => report.relation(relation).map(str::to_owned).ok_or_else(|| {
            Error::validation(format!(
                "report {:?} lacks relation `{relation}` required for stratification",
                report.id
            ))
        }),
    }
}

/// Split `corpus` into `spec.fractions.len()` parts, stratified per label.
///
/// Each label's reports are shuffled with a generator seeded from
/// `(spec.seed, label)`, so adding a label never reshuffles the others.
/// A label with fewer reports than there are fractions is placed entirely in
/// the largest fraction. Every output keeps the input's relative order.
pub fn stratified_split(corpus: &Corpus, spec: &SplitSpec) -> Result<Vec<Corpus>> {
    spec.validate()?;
    if corpus.is_empty() {
        return Err(Error::validation("cannot split an empty corpus"));
    }
    let parts = spec.fractions.len();
    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, report) in corpus.reports.iter().enumerate() {
        strata.entry(stratum_key(report, spec.stratify_by)?).or_default().push(i);
    }

    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); parts];
    for (label, mut members) in strata {
        if members.len() < parts {
            assigned[largest_fraction(&spec.fractions)].extend(members);
            continue;
        }
        let mut rng = seed::named_rng(spec.seed, &format!("split/{label}"));
        members.shuffle(&mut rng);
        let counts = apportion(members.len(), &spec.fractions);
        let mut offset = 0;
        for (part, count) in counts.into_iter().enumerate() {
            assigned[part].extend_from_slice(&members[offset..offset + count]);
            offset += count;
        }
    }
    Ok(assigned
        .into_iter()
        .map(|mut idx| {
            idx.sort_unstable();
            corpus.select(&idx)
        })
        .collect())
}

/// Sets handed to two reviewers when validating anonymization.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewPartition {
    pub set_a: Corpus,
    pub set_b: Corpus,
    /// Reports present in both `set_a` and `set_b`.
    pub common: Corpus,
}

/// Draw a stratified sample of `sample_fraction` of the corpus and divide it
/// into two equally sized review sets sharing `overlap_fraction` of the sample.
pub fn make_review_partition(
    corpus: &Corpus,
    sample_fraction: f64,
    overlap_fraction: f64,
    seed_value: u64,
) -> Result<ReviewPartition> {
    if !(sample_fraction > 0.0 && sample_fraction <= 1.0) {
        return Err(Error::validation(format!(
            "sample_fraction {sample_fraction} must be in (0, 1]"
        )));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::validation(format!(
            "overlap_fraction {overlap_fraction} must be in [0, 1)"
        )));
    }
    let fractions = if sample_fraction >= 1.0 {
        vec![1.0]
    } else {
        vec![sample_fraction, 1.0 - sample_fraction]
    };
    let spec = SplitSpec::new(fractions, seed::derive(seed_value, "review/sample"));
    let sample = stratified_split(corpus, &spec)?.swap_remove(0);
    if sample.is_empty() {
        return Err(Error::validation("review sample is empty"));
    }
    let n_common = (overlap_fraction * sample.len() as f64).round() as usize;
    if overlap_fraction > 0.0 && n_common == 0 {
        return Err(Error::validation(format!(
            "sample of {} reports too small for overlap fraction {overlap_fraction}",
            sample.len()
        )));
    }
    let mut order: Vec<usize> = (0..sample.len()).collect();
    order.shuffle(&mut seed::named_rng(seed_value, "review/overlap"));
    let (shared, rest) = order.split_at(n_common);
    let a_only = rest.len().div_ceil(2);
    let (only_a, only_b) = rest.split_at(a_only);

    let collect = |groups: &[&[usize]]| {
        let mut idx: Vec<usize> = groups.iter().flat_map(|g| g.iter().copied()).collect();
        idx.sort_unstable();
        sample.select(&idx)
    };
    Ok(ReviewPartition {
        set_a: collect(&[shared, only_a]),
        set_b: collect(&[shared, only_b]),
        common: collect(&[shared]),
    })
}

/// Filler vocabulary used by [`generate_synthetic`]; none of these is a cue.
pub const FILLER_TOKENS: &[&str] = &[
    "paciente", "acude", "consulta", "refiere", "lesión", "lesiones", "desde", "hace", "meses",
    "tratamiento", "previo", "revisión", "control", "exploración", "presenta", "zona", "aspecto",
    "evolución", "clínica", "valoración", "antecedentes", "familiares", "niega", "prurito",
    "episodios", "mejoría", "seguimiento", "derivado", "atención", "primaria", "plan", "pauta",
    "crema", "aplicar", "noches", "semanas", "cita", "nueva", "comenta", "estable",
];

fn cue_slug(value: &str) -> String {
    fold_key(value).replace(' ', "_")
}

/// Token that signals `value` for `relation` in synthetic reports.
pub fn relation_cue(relation: Relation, value: &str) -> String {
    let prefix = match relation {
        Relation::Type => "tipo",
        Relation::Severity => "grado",
        Relation::Site => "sitio",
    };
    format!("{prefix}_{}", cue_slug(value))
}

/// Token that names the disease itself in synthetic reports.
pub fn disease_cue(label: &str) -> String {
    format!("dx_{}", cue_slug(label))
}

/// Build a labeled, relation-annotated corpus from a relation table.
///
/// Each report holds one cue token per relation plus one for the disease,
/// mixed with filler. Every cue is independently swapped for a random filler
/// token with probability `noise`.
pub fn generate_synthetic(
    table: &RelationTable,
    n_per_class: usize,
    noise: f64,
    seed_value: u64,
) -> Result<Corpus> {
    if table.is_empty() {
        return Err(Error::validation("relation table is empty"));
    }
    if n_per_class == 0 {
        return Err(Error::validation("n_per_class must be at least 1"));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::validation(format!("noise {noise} outside [0, 1]")));
    }
    let mut rng = seed::named_rng(seed_value, "synthetic");
    let mut reports = Vec::with_capacity(table.len() * n_per_class);
    for (disease, row) in table.rows() {
        let cues = [
            relation_cue(Relation::Type, row.get(Relation::Type)),
            relation_cue(Relation::Severity, row.get(Relation::Severity)),
            relation_cue(Relation::Site, row.get(Relation::Site)),
            disease_cue(disease),
        ];
        for _ in 0..n_per_class {
            let n_filler = rng.random_range(6..=12);
            let mut tokens: Vec<String> = (0..n_filler)
                .map(|_| FILLER_TOKENS[rng.random_range(0..FILLER_TOKENS.len())].to_owned())
                .collect();
            for cue in &cues {
                if rng.random_bool(noise) {
                    tokens.push(FILLER_TOKENS[rng.random_range(0..FILLER_TOKENS.len())].to_owned());
                } else {
                    tokens.push(cue.clone());
                }
            }
            tokens.shuffle(&mut rng);
            let mut report = Report::new(format!("syn-{:06}", reports.len() + 1), tokens.join(" "), disease.clone());
            for relation in Relation::ALL {
                report.relations.insert(relation, row.get(relation).to_owned());
            }
            reports.push(report);
        }
    }
    Corpus::new(reports)
}

/// Labels present in `corpus`, as a set.
pub fn label_set(corpus: &Corpus) -> BTreeSet<String> {
    corpus.label_counts.keys().cloned().collect()
}
