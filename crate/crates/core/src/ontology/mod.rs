//! Disease relations (type, severity, site) and the table that maps each
//! pathology label to them.

mod snapshot;
mod vocab;

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::text::normalize_label;

pub use snapshot::{
    derive_relations, severity_from_flags, ConceptRecord, Derivation, Icd10Flag, OntologySnapshot,
    SnapshotSource, TranslationMap, Unresolved,
};
pub use vocab::{Relation, SeverityLabel, SiteLabel, TypeLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationRow {
    #[serde(rename = "type")]
    pub type_: TypeLabel,
    pub severity: SeverityLabel,
    pub site: SiteLabel,
}

impl RelationRow {
    pub fn get(&self, relation: Relation) -> &'static str {
        match relation {
            Relation::Type => self.type_.as_str(),
            Relation::Severity => self.severity.as_str(),
            Relation::Site => self.site.as_str(),
        }
    }
}

/// Which ontology concept supplied each relation of a row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub english_name: String,
    #[serde(rename = "type")]
    pub type_concept: String,
    pub severity: String,
    pub site: String,
}

/// How non-canonical severity spellings are treated when reading a table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SeverityPolicy {
    /// Reject anything but the four canonical values, suggesting the
    /// canonical spelling when one exists.
    #[default]
    Strict,
    /// Rewrite known aliases (`major`, `deadly`, ...) to canonical values.
    Canonicalize,
}

const TSV_HEADER: &str = "disease\ttype\tseverity\tsite";

/// Disease label → relations, in insertion order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RelationTable {
    rows: IndexMap<String, RelationRow>,
    provenance: IndexMap<String, Provenance>,
}

impl RelationTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace the row for `disease` (label is normalized).
    pub fn insert(&mut self, disease: &str, row: RelationRow) {
        self.rows.insert(normalize_label(disease), row);
    }

    pub fn set_provenance(&mut self, disease: &str, provenance: Provenance) {
        self.provenance.insert(normalize_label(disease), provenance);
    }

    pub fn get(&self, disease: &str) -> Option<&RelationRow> {
        self.rows
            .get(disease)
            .or_else(|| self.rows.get(&normalize_label(disease)))
    }

    pub fn provenance(&self, disease: &str) -> Option<&Provenance> {
        self.provenance.get(&normalize_label(disease))
    }

    pub fn rows(&self) -> impl Iterator<Item = (&String, &RelationRow)> {
        self.rows.iter()
    }

    pub fn labels(&self) -> impl Iterator<Item = &String> {
        self.rows.keys()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// The first `n` rows.
    pub fn head(&self, n: usize) -> RelationTable {
        let rows: IndexMap<_, _> = self.rows.iter().take(n).map(|(k, v)| (k.clone(), *v)).collect();
        let provenance = self
            .provenance
            .iter()
            .filter(|(k, _)| rows.contains_key(*k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        RelationTable { rows, provenance }
    }

    /// Rows re-keyed through `rename`; rows whose label maps to `None` are dropped.
    pub fn rekey(&self, rename: impl Fn(&str) -> Option<String>) -> RelationTable {
        let mut out = RelationTable::new();
        for (label, row) in &self.rows {
            if let Some(new_label) = rename(label) {
                out.insert(&new_label, *row);
                if let Some(p) = self.provenance.get(label) {
                    out.set_provenance(&new_label, p.clone());
                }
            }
        }
        out
    }

    pub fn provenance_map(&self) -> &IndexMap<String, Provenance> {
        &self.provenance
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(TSV_HEADER);
        out.push('\n');
        for (disease, row) in &self.rows {
            out.push_str(&format!(
                "{disease}\t{}\t{}\t{}\n",
                row.type_, row.severity, row.site
            ));
        }
        out
    }

    /// Parse the TSV interchange format. Row numbers in errors count data rows
    /// from 1.
    pub fn from_tsv_str(data: &str, policy: SeverityPolicy) -> Result<Self> {
        let mut lines = data.lines();
        let header = lines.next().unwrap_or_default().trim_end_matches('\r');
        if header != TSV_HEADER {
            return Err(Error::schema(0, format!("expected header {TSV_HEADER:?}, found {header:?}")));
        }
        let mut table = RelationTable::new();
        for (idx, line) in lines.enumerate() {
            let row_no = idx + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(Error::schema(row_no, format!("expected 4 columns, found {}", cols.len())));
            }
            let disease = normalize_label(cols[0]);
            if disease.is_empty() {
                return Err(Error::schema(row_no, "empty disease label"));
            }
            let type_ = TypeLabel::parse_exact(cols[1]).ok_or_else(|| {
                Error::schema(row_no, format!("unknown type {:?}; allowed: {}", cols[1], allowed(TypeLabel::ALL)))
            })?;
            let site = SiteLabel::parse_exact(cols[3]).ok_or_else(|| {
                Error::schema(row_no, format!("unknown site {:?}; allowed: {}", cols[3], allowed(SiteLabel::ALL)))
            })?;
            let severity = match (SeverityLabel::parse_exact(cols[2]), policy) {
                (Some(s), _) => s,
                (None, SeverityPolicy::Canonicalize) => SeverityLabel::canonicalize(cols[2]).ok_or_else(|| {
                    Error::schema(row_no, format!("unknown severity {:?}; allowed: {}", cols[2], allowed(SeverityLabel::ALL)))
                })?,
                (None, SeverityPolicy::Strict) => {
                    let message = match SeverityLabel::canonicalize(cols[2]) {
                        Some(suggestion) => format!(
                            "non-canonical severity {:?}; did you mean {:?}?",
                            cols[2],
                            suggestion.as_str()
                        ),
                        None => format!(
                            "unknown severity {:?}; allowed: {}",
                            cols[2],
                            allowed(SeverityLabel::ALL)
                        ),
                    };
                    return Err(Error::schema(row_no, message));
                }
            };
            if table.rows.contains_key(&disease) {
                return Err(Error::schema(row_no, format!("duplicate disease {disease:?}")));
            }
            table.insert(&disease, RelationRow { type_, severity, site });
        }
        Ok(table)
    }
}

fn allowed<T: std::fmt::Display>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

/// Strict load: severity must already be canonical.
pub fn load_relation_table(path: impl AsRef<Path>) -> Result<RelationTable> {
    load_relation_table_with(path, SeverityPolicy::Strict)
}

pub fn load_relation_table_with(path: impl AsRef<Path>, policy: SeverityPolicy) -> Result<RelationTable> {
    let path = path.as_ref();
    let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RelationTable::from_tsv_str(&data, policy)
}

pub fn save_relation_table(table: &RelationTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, table.to_tsv()).map_err(|e| Error::io(path, e))
}

/// Copy each report's relations from its pathology's row.
pub fn annotate_corpus(corpus: &Corpus, table: &RelationTable) -> Result<Corpus> {
    let missing: Vec<String> = corpus
        .labels()
        .into_iter()
        .filter(|label| table.get(label).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingLabels(missing));
    }
    corpus.map_reports(|report| {
        let row = table.get(&report.pathology).expect("checked above");
        let mut out = report.clone();
        for relation in Relation::ALL {
            out.relations.insert(relation, row.get(relation).to_owned());
        }
        out
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::corpus::Report;

    #[test]
    fn bundled_table_has_47_rows() {
        let table = bundled::relation_table();
        assert_eq!(table.len(), 47);
        let basal = table.get("basal cell carcinoma").unwrap();
        assert_eq!(basal.type_, TypeLabel::NeoplasticProcess);
        assert_eq!(basal.severity, SeverityLabel::Important);
        assert_eq!(basal.site, SiteLabel::Skin);
    }

    #[test]
    fn tsv_round_trip() {
        let table = bundled::relation_table();
        let again = RelationTable::from_tsv_str(&table.to_tsv(), SeverityPolicy::Strict).unwrap();
        assert_eq!(table.rows, again.rows);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rel.tsv");
        save_relation_table(&table, &path).unwrap();
        assert_eq!(load_relation_table(&path).unwrap().rows, table.rows);
    }

    #[test]
    fn strict_load_suggests_canonical_severity() {
        let data = "disease\ttype\tseverity\tsite\nmelanoma\tneoplastic process\tdeadly\tall\n";
        match RelationTable::from_tsv_str(data, SeverityPolicy::Strict) {
            Err(Error::Schema { record, message }) => {
                assert_eq!(record, 1);
                assert!(message.contains("\"extreme\""), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let lenient = RelationTable::from_tsv_str(data, SeverityPolicy::Canonicalize).unwrap();
        assert_eq!(lenient.get("melanoma").unwrap().severity, SeverityLabel::Extreme);
    }

    #[test]
    fn unknown_site_is_schema_error() {
        let data = "disease\ttype\tseverity\tsite\nx\tdisease\tmild\tspleen\n";
        assert!(matches!(
            RelationTable::from_tsv_str(data, SeverityPolicy::Strict),
            Err(Error::Schema { record: 1, .. })
        ));
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(RelationTable::from_tsv_str("a\tb\n", SeverityPolicy::Strict).is_err());
    }

    #[test]
    fn annotate_acne_corpus() {
        let corpus = Corpus::new(vec![
            Report::new("1", "granos en cara", "acne"),
            Report::new("2", "comedones", "Acne"),
        ])
        .unwrap();
        let table = bundled::relation_table();
        let annotated = annotate_corpus(&corpus, &table).unwrap();
        for report in annotated.reports() {
            assert_eq!(report.relation(Relation::Type), Some("disease"));
            assert_eq!(report.relation(Relation::Severity), Some("mild"));
            assert_eq!(report.relation(Relation::Site), Some("all"));
        }
        assert_eq!(annotate_corpus(&annotated, &table).unwrap(), annotated);
        for (a, b) in corpus.reports().iter().zip(annotated.reports()) {
            assert_eq!((&a.id, &a.text, &a.pathology), (&b.id, &b.text, &b.pathology));
        }
    }

    #[test]
    fn annotate_empty_and_missing() {
        let table = bundled::relation_table();
        assert!(annotate_corpus(&Corpus::empty(), &table).unwrap().is_empty());
        let corpus = Corpus::new(vec![Report::new("1", "x", "gota")]).unwrap();
        match annotate_corpus(&corpus, &table) {
            Err(Error::MissingLabels(labels)) => assert_eq!(labels, vec!["gota".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
