//! Offline ontology snapshots, the Spanish → English translation map and
//! relation derivation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::vocab::{Relation, SeverityLabel, SiteLabel, TypeLabel};
use super::{Provenance, RelationRow, RelationTable};
use crate::error::{Error, Result};
use crate::text::{fold_key, normalize_label};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Icd10Flag {
    Minor,
    Major,
    Morbidity,
}

/// Severity from ICD-10 qualifiers. Priority: morbidity, then major, then
/// minor; no flag means harmless.
pub fn severity_from_flags(flags: &BTreeSet<Icd10Flag>) -> SeverityLabel {
    if flags.contains(&Icd10Flag::Morbidity) {
        SeverityLabel::Extreme
    } else if flags.contains(&Icd10Flag::Major) {
        SeverityLabel::Important
    } else if flags.contains(&Icd10Flag::Minor) {
        SeverityLabel::Mild
    } else {
        SeverityLabel::Harmless
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SnapshotSource {
    #[serde(rename = "umls-like")]
    UmlsLike,
    #[serde(rename = "snomed-like")]
    SnomedLike,
    #[serde(rename = "icd10-like")]
    Icd10Like,
}

impl SnapshotSource {
    pub fn as_str(self) -> &'static str {
        match self {
            SnapshotSource::UmlsLike => "umls-like",
            SnapshotSource::SnomedLike => "snomed-like",
            SnapshotSource::Icd10Like => "icd10-like",
        }
    }

    /// The relation this kind of source supplies.
    pub fn relation(self) -> Relation {
        match self {
            SnapshotSource::UmlsLike => Relation::Type,
            SnapshotSource::SnomedLike => Relation::Site,
            SnapshotSource::Icd10Like => Relation::Severity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptRecord {
    pub english_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finding_site: Option<String>,
    #[serde(default)]
    pub icd10_flags: BTreeSet<Icd10Flag>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologySnapshot {
    pub source: SnapshotSource,
    /// Free-text note naming the upstream terminology.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
    pub concepts: BTreeMap<String, ConceptRecord>,
}

impl OntologySnapshot {
    pub fn from_json_str(data: &str) -> Result<Self> {
        let snapshot: OntologySnapshot = serde_json::from_str(data)?;
        snapshot.validate()?;
        Ok(snapshot)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&data)
    }

    fn validate(&self) -> Result<()> {
        for (id, concept) in &self.concepts {
            if concept.english_name.trim().is_empty() {
                return Err(Error::validation(format!(
                    "{} concept {id:?} has an empty english_name",
                    self.source.as_str()
                )));
            }
        }
        Ok(())
    }

    /// Case- and accent-insensitive exact lookup. When several concepts share
    /// a name the smallest id wins.
    pub fn lookup(&self, english_name: &str) -> Option<(&str, &ConceptRecord)> {
        let key = fold_key(english_name);
        self.concepts
            .iter()
            .find(|(_, c)| fold_key(&c.english_name) == key)
            .map(|(id, c)| (id.as_str(), c))
    }
}

/// Spanish disease label → English disease name.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TranslationMap {
    entries: IndexMap<String, String>,
    by_key: HashMap<String, String>,
}

impl TranslationMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, spanish: &str, english: &str) {
        let spanish = normalize_label(spanish);
        let english = english.trim().to_owned();
        self.by_key.insert(fold_key(&spanish), english.clone());
        self.entries.insert(spanish, english);
    }

    pub fn get(&self, spanish: &str) -> Option<&str> {
        self.by_key.get(&fold_key(spanish)).map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &String)> {
        self.entries.iter()
    }

    /// English name → Spanish label, for re-keying English tables.
    pub fn reverse(&self) -> HashMap<String, String> {
        self.entries
            .iter()
            .map(|(es, en)| (fold_key(en), es.clone()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// TSV with header `spanish\tenglish`.
    pub fn from_tsv_str(data: &str) -> Result<Self> {
        let mut lines = data.lines();
        let header = lines.next().unwrap_or_default().trim_end_matches('\r');
        if header != "spanish\tenglish" {
            return Err(Error::schema(0, format!("expected header \"spanish\\tenglish\", found {header:?}")));
        }
        let mut map = TranslationMap::new();
        for (idx, line) in lines.enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let Some((es, en)) = line.split_once('\t') else {
                return Err(Error::schema(idx + 1, "expected two tab-separated columns"));
            };
            if es.trim().is_empty() || en.trim().is_empty() {
                return Err(Error::schema(idx + 1, "empty translation entry"));
            }
            map.insert(es, en);
        }
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv_str(&data)
    }
}

/// A label whose relations could not all be resolved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Unresolved {
    pub label: String,
    pub english_name: String,
    pub reason: String,
}

/// Result of [`derive_relations`]: the resolved rows plus every label that
/// could not be resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivation {
    pub table: RelationTable,
    pub unresolved: Vec<Unresolved>,
}

impl Derivation {
    pub fn is_complete(&self) -> bool {
        self.unresolved.is_empty()
    }
}

/// Translate each label, look it up in the snapshots and assemble its
/// (type, severity, site) row. Type comes from `umls-like` semantic types,
/// site from `snomed-like` finding sites and severity from `icd10-like`
/// flags.
pub fn derive_relations<'a>(
    labels: impl IntoIterator<Item = &'a str>,
    translations: &TranslationMap,
    snapshots: &[OntologySnapshot],
) -> Result<Derivation> {
    let mut seen = BTreeSet::new();
    let labels: Vec<String> = labels
        .into_iter()
        .map(normalize_label)
        .filter(|l| seen.insert(l.clone()))
        .collect();
    for label in &labels {
        if translations.get(label).is_none() {
            return Err(Error::MissingTranslation(label.clone()));
        }
    }
    if labels.is_empty() {
        return Ok(Derivation {
            table: RelationTable::new(),
            unresolved: Vec::new(),
        });
    }
    let of_kind = |kind: SnapshotSource| -> Result<Vec<&OntologySnapshot>> {
        let found: Vec<_> = snapshots.iter().filter(|s| s.source == kind).collect();
        if found.is_empty() {
            return Err(Error::validation(format!("no {} snapshot supplied", kind.as_str())));
        }
        Ok(found)
    };
    let umls = of_kind(SnapshotSource::UmlsLike)?;
    let snomed = of_kind(SnapshotSource::SnomedLike)?;
    let icd = of_kind(SnapshotSource::Icd10Like)?;

    fn find<'s>(
        sources: &[&'s OntologySnapshot],
        english: &str,
    ) -> Option<(SnapshotSource, &'s str, &'s ConceptRecord)> {
        sources
            .iter()
            .find_map(|s| s.lookup(english).map(|(id, c)| (s.source, id, c)))
    }

    let mut table = RelationTable::new();
    let mut unresolved = Vec::new();
    for label in labels {
        let english = translations.get(&label).expect("checked above").to_owned();
        let mut problems = Vec::new();

        let type_hit = find(&umls, &english);
        let site_hit = find(&snomed, &english);
        let icd_hit = find(&icd, &english);
        if type_hit.is_none() && site_hit.is_none() && icd_hit.is_none() {
            unresolved.push(Unresolved {
                label,
                reason: format!("{english:?} not found in any snapshot"),
                english_name: english,
            });
            continue;
        }

        let type_ = match type_hit {
            None => {
                problems.push("no umls-like concept".to_owned());
                None
            }
            Some((_, id, c)) => match c.semantic_type.as_deref().map(TypeLabel::parse_exact) {
                Some(Some(t)) => Some((t, id)),
                Some(None) => {
                    problems.push(format!("concept {id} has unknown semantic type {:?}", c.semantic_type));
                    None
                }
                None => {
                    problems.push(format!("concept {id} has no semantic type"));
                    None
                }
            },
        };
        let site = match site_hit {
            None => {
                problems.push("no snomed-like concept".to_owned());
                None
            }
            Some((_, id, c)) => match c.finding_site.as_deref().map(SiteLabel::parse_exact) {
                Some(Some(s)) => Some((s, id)),
                Some(None) => {
                    problems.push(format!("concept {id} has unknown finding site {:?}", c.finding_site));
                    None
                }
                None => {
                    problems.push(format!("concept {id} has no finding site"));
                    None
                }
            },
        };
        let severity = match icd_hit {
            None => {
                problems.push("no icd10-like concept".to_owned());
                None
            }
            Some((_, id, c)) => Some((severity_from_flags(&c.icd10_flags), id)),
        };

        match (type_, severity, site) {
            (Some((type_, t_id)), Some((severity, sev_id)), Some((site, site_id))) => {
                table.insert(&label, RelationRow { type_, severity, site });
                table.set_provenance(
                    &label,
                    Provenance {
                        english_name: english,
                        type_concept: format!("{}:{t_id}", SnapshotSource::UmlsLike.as_str()),
                        severity: format!("{}:{sev_id}", SnapshotSource::Icd10Like.as_str()),
                        site: format!("{}:{site_id}", SnapshotSource::SnomedLike.as_str()),
                    },
                );
            }
            _ => unresolved.push(Unresolved {
                label,
                english_name: english,
                reason: problems.join("; "),
            }),
        }
    }
    Ok(Derivation { table, unresolved })
}
