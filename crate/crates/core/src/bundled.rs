//! Small reference data shipped with the crate so that tests and demos run
//! offline.
//!
//! The relation table lists 47 dermatological diseases by English name. The
//! ontology snapshots are compact JSON excerpts covering exactly those
//! diseases; they are not licensed terminology releases. Gazetteers are short
//! excerpts of the frequency lists they are named after.

use std::path::Path;

use crate::anonymizer::MaskingRuleSet;
use crate::error::{Error, Result};
use crate::ontology::{OntologySnapshot, RelationTable, SeverityPolicy, TranslationMap};

pub const RELATION_TABLE_TSV: &str = include_str!("../data/relation_table.tsv");
pub const TRANSLATIONS_TSV: &str = include_str!("../data/translations.tsv");
pub const UMLS_JSON: &str = include_str!("../data/umls.json");
pub const SNOMED_JSON: &str = include_str!("../data/snomed.json");
pub const ICD10_JSON: &str = include_str!("../data/icd10.json");
pub const RULES_TOML: &str = include_str!("../data/rules.toml");

const RULE_FILES: &[(&str, &str)] = &[
    ("first_names.txt", include_str!("../data/first_names.txt")),
    ("surnames.txt", include_str!("../data/surnames.txt")),
    ("places.txt", include_str!("../data/places.txt")),
    ("frequent_words.txt", include_str!("../data/frequent_words.txt")),
    ("exceptions.txt", include_str!("../data/exceptions.txt")),
];

/// Relation table keyed by English disease name, most frequent first.
pub fn relation_table() -> RelationTable {
    RelationTable::from_tsv_str(RELATION_TABLE_TSV, SeverityPolicy::Strict).expect("bundled table is valid")
}

/// The bundled table re-keyed by Spanish label through [`translations`].
pub fn spanish_relation_table() -> RelationTable {
    let reverse = translations().reverse();
    relation_table().rekey(|english| reverse.get(&crate::text::fold_key(english)).cloned())
}

pub fn translations() -> TranslationMap {
    TranslationMap::from_tsv_str(TRANSLATIONS_TSV).expect("bundled translations are valid")
}

pub fn snapshots() -> Vec<OntologySnapshot> {
    [UMLS_JSON, SNOMED_JSON, ICD10_JSON]
        .iter()
        .map(|data| OntologySnapshot::from_json_str(data).expect("bundled snapshot is valid"))
        .collect()
}

/// Masking rules built from the bundled gazetteers.
pub fn rules() -> MaskingRuleSet {
    MaskingRuleSet::from_toml_str(RULES_TOML, read_rule_file).expect("bundled rules are valid")
}

fn read_rule_file(path: &Path) -> Result<String> {
    let name = path.to_string_lossy();
    RULE_FILES
        .iter()
        .find(|(file, _)| *file == name)
        .map(|(_, content)| (*content).to_owned())
        .ok_or_else(|| Error::validation(format!("no bundled rule file {name:?}")))
}

/// Write the bundled rules and gazetteers into `dir`, returning the path of
/// the rules file.
pub fn write_rules(dir: &Path) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (file, content) in RULE_FILES {
        let path = dir.join(file);
        std::fs::write(&path, content).map_err(|e| Error::io(path, e))?;
    }
    let rules = dir.join("rules.toml");
    std::fs::write(&rules, RULES_TOML).map_err(|e| Error::io(&rules, e))?;
    Ok(rules)
}
